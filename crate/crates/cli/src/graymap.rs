//! Plain (ASCII) 8-bit portable graymaps.

use anyhow::{anyhow, ensure, Result};

/// Renders a rows × cols matrix with its minimum as 255 (white) and its
/// maximum as 0 (black). A constant matrix renders mid-gray.
pub fn render(rows: usize, cols: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), rows * cols, "graymap values do not fill the grid");
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = |v: f64| -> u8 {
        if hi > lo {
            (255.0 * (hi - v) / (hi - lo)).round() as u8
        } else {
            128
        }
    };
    let mut out = format!("P2\n{cols} {rows}\n255\n");
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| level(values[r * cols + c]).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Width, height and pixels of a plain graymap.
pub fn parse(text: &str) -> Result<(usize, usize, Vec<u8>)> {
    let mut tokens = text.split_whitespace();
    ensure!(tokens.next() == Some("P2"), "not a plain graymap");
    let mut number = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| anyhow!("graymap lacks {what}"))?
            .parse()
            .map_err(|_| anyhow!("graymap {what} is not a number"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let max = number("maximum")?;
    ensure!(max == 255, "graymap maximum {max} is not 255");
    let pixels = tokens
        .map(|t| t.parse::<u8>().map_err(|_| anyhow!("bad graymap pixel {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    ensure!(
        pixels.len() == width * height,
        "graymap declares {width}x{height} but holds {} pixels",
        pixels.len()
    );
    Ok((width, height, pixels))
}
