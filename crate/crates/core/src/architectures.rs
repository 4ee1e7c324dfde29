//! Declarative network specs, shape inference and the two churn
//! classifiers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{conv2d_output_dims, conv2d_weight_len, maxpool_output_dims};
use crate::nn::spec::{check_dropout_rate, LayerSpec};
use crate::tensor::Dims3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLayer {
    pub name: String,
    pub layer: LayerSpec,
}

/// An ordered layer list with its declared input extents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Dims3,
    pub layers: Vec<NamedLayer>,
}

impl NetworkSpec {
    pub fn new(input: Dims3) -> Self {
        Self {
            input,
            layers: Vec::new(),
        }
    }

    /// Appends a layer, naming it `<kind><n>` where n counts that kind.
    pub fn push(mut self, layer: LayerSpec) -> Self {
        let kind = match layer {
            LayerSpec::Conv2d(_) => "conv",
            LayerSpec::MaxPool(_) => "pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation { function } => match function {
                crate::nn::spec::ActivationKind::Relu => "relu",
                crate::nn::spec::ActivationKind::Sigmoid => "sigmoid",
            },
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
        };
        let n = self
            .layers
            .iter()
            .filter(|l| l.name.starts_with(kind))
            .count()
            + 1;
        self.layers.push(NamedLayer {
            name: format!("{kind}{n}"),
            layer,
        });
        self
    }

    pub fn ends_in_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(l) if l.layer == LayerSpec::Softmax)
    }
}

/// Shape of an activation between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerShape {
    Image(Dims3),
    Flat(usize),
}

impl LayerShape {
    pub fn len(&self) -> usize {
        match self {
            Self::Image(d) => d.len(),
            Self::Flat(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(self) -> Vec<usize> {
        match self {
            Self::Image(d) => d.to_vec(),
            Self::Flat(n) => vec![n],
        }
    }
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Image(d) => d.fmt(f),
            Self::Flat(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub input: LayerShape,
    pub output: LayerShape,
    pub weight_count: usize,
    pub bias_count: usize,
}

impl LayerInfo {
    pub fn param_count(&self) -> usize {
        self.weight_count + self.bias_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeReport {
    pub input: LayerShape,
    pub layers: Vec<LayerInfo>,
}

impl ShapeReport {
    pub fn output(&self) -> LayerShape {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerInfo::param_count).sum()
    }

    /// Input shape followed by every shape-changing layer output.
    pub fn shape_chain(&self) -> Vec<LayerShape> {
        let mut chain = vec![self.input];
        for l in &self.layers {
            if chain.last() != Some(&l.output) {
                chain.push(l.output);
            }
        }
        chain
    }
}

/// Walks the layer list, failing on the first layer whose input does not fit.
pub fn infer_shapes(spec: &NetworkSpec) -> Result<ShapeReport> {
    let input = LayerShape::Image(spec.input);
    if spec.input.is_empty() {
        return Err(Error::Shape(format!("input extents must be positive, got {}", spec.input)));
    }
    let mut current = input;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (index, named) in spec.layers.iter().enumerate() {
        let fail = |reason: String| Error::Layer {
            index,
            name: named.name.clone(),
            reason,
        };
        let (output, weight_count, bias_count) = match (&named.layer, current) {
            (LayerSpec::Conv2d(c), LayerShape::Image(d)) => {
                let out = conv2d_output_dims(d, c).map_err(|e| fail(e.to_string()))?;
                (LayerShape::Image(out), conv2d_weight_len(c, d.channels), c.filters)
            }
            (LayerSpec::MaxPool(p), LayerShape::Image(d)) => {
                let out = maxpool_output_dims(d, p).map_err(|e| fail(e.to_string()))?;
                (LayerShape::Image(out), 0, 0)
            }
            (LayerSpec::Conv2d(_) | LayerSpec::MaxPool(_), LayerShape::Flat(n)) => {
                return Err(fail(format!("needs a rows x cols x channels input, got flat {n}")));
            }
            (LayerSpec::Dense { units }, LayerShape::Flat(n)) => {
                if *units == 0 {
                    return Err(fail("dense layer needs at least one unit".into()));
                }
                (LayerShape::Flat(*units), n * units, *units)
            }
            (LayerSpec::Dense { .. }, LayerShape::Image(d)) => {
                return Err(fail(format!("dense layer needs a flat input, got {d}")));
            }
            (LayerSpec::Flatten, shape) => (LayerShape::Flat(shape.len()), 0, 0),
            (LayerSpec::Activation { .. }, shape) => (shape, 0, 0),
            (LayerSpec::Dropout { rate }, shape) => {
                check_dropout_rate(*rate).map_err(|e| fail(e.to_string()))?;
                (shape, 0, 0)
            }
            (LayerSpec::Softmax, LayerShape::Flat(n)) => {
                if n < 2 {
                    return Err(fail(format!("softmax needs at least 2 units, got {n}")));
                }
                (LayerShape::Flat(n), 0, 0)
            }
            (LayerSpec::Softmax, LayerShape::Image(d)) => {
                return Err(fail(format!("softmax needs a flat input, got {d}")));
            }
        };
        layers.push(LayerInfo {
            name: named.name.clone(),
            input: current,
            output,
            weight_count,
            bias_count,
        });
        current = output;
    }
    Ok(ShapeReport { input, layers })
}

/// DL-1 for an arbitrary days × channels image. The second convolution
/// always spans every channel column.
pub fn build_dl1_for(days: usize, channels: usize) -> NetworkSpec {
    NetworkSpec::new(Dims3::new(days, channels, 1))
        .push(LayerSpec::conv(4, 7, 1))
        .push(LayerSpec::relu())
        .push(LayerSpec::conv(2, 1, channels))
        .push(LayerSpec::relu())
        .push(LayerSpec::max_pool(2, 1))
        .push(LayerSpec::Flatten)
        .push(LayerSpec::dense(128))
        .push(LayerSpec::relu())
        .push(LayerSpec::dense(2))
        .push(LayerSpec::Softmax)
}

/// Two convolutions, 2x1 pooling, 128 hidden units, 2-way softmax on a
/// 30-day × 10-channel image.
pub fn build_dl1() -> NetworkSpec {
    build_dl1_for(30, 10)
}

/// DL-2 for an arbitrary days × channels image.
pub fn build_dl2_for(days: usize, channels: usize) -> NetworkSpec {
    NetworkSpec::new(Dims3::new(days, channels, 1))
        .push(LayerSpec::conv(12, 7, 1))
        .push(LayerSpec::relu())
        .push(LayerSpec::dropout(0.25))
        .push(LayerSpec::max_pool(2, 1))
        .push(LayerSpec::conv(7, 1, channels))
        .push(LayerSpec::relu())
        .push(LayerSpec::max_pool(2, 1))
        .push(LayerSpec::Flatten)
        .push(LayerSpec::dense(100))
        .push(LayerSpec::relu())
        .push(LayerSpec::dropout(0.2))
        .push(LayerSpec::dense(40))
        .push(LayerSpec::relu())
        .push(LayerSpec::dropout(0.2))
        .push(LayerSpec::dense(20))
        .push(LayerSpec::relu())
        .push(LayerSpec::dropout(0.2))
        .push(LayerSpec::dense(2))
        .push(LayerSpec::Softmax)
}

/// The deeper, dropout-regularised classifier on a 30-day × 12-channel image.
pub fn build_dl2() -> NetworkSpec {
    build_dl2_for(30, 12)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(spec: &NetworkSpec) -> Vec<Vec<usize>> {
        infer_shapes(spec)
            .unwrap()
            .shape_chain()
            .into_iter()
            .map(LayerShape::to_vec)
            .collect()
    }

    #[test]
    fn dl1_chain_and_params() {
        let spec = build_dl1();
        assert_eq!(
            chain(&spec),
            vec![vec![30, 10, 1], vec![24, 10, 4], vec![24, 1, 2], vec![12, 1, 2], vec![24], vec![128], vec![2]]
        );
        let report = infer_shapes(&spec).unwrap();
        let per_layer: Vec<usize> = report.layers.iter().map(LayerInfo::param_count).filter(|&c| c > 0).collect();
        assert_eq!(per_layer, vec![32, 82, 3200, 258]);
        assert_eq!(report.param_count(), 3572);
        assert!(spec.ends_in_softmax());
    }

    #[test]
    fn dl2_chain_and_params() {
        let spec = build_dl2();
        assert_eq!(
            chain(&spec),
            vec![
                vec![30, 12, 1],
                vec![24, 12, 12],
                vec![12, 12, 12],
                vec![12, 1, 7],
                vec![6, 1, 7],
                vec![42],
                vec![100],
                vec![40],
                vec![20],
                vec![2]
            ]
        );
        let report = infer_shapes(&spec).unwrap();
        let per_layer: Vec<usize> = report.layers.iter().map(LayerInfo::param_count).filter(|&c| c > 0).collect();
        assert_eq!(per_layer, vec![96, 1015, 4300, 4040, 820, 42]);
        assert_eq!(report.param_count(), 10313);
    }

    #[test]
    fn oversized_conv_names_the_layer() {
        let spec = NetworkSpec::new(Dims3::new(5, 3, 1)).push(LayerSpec::conv(1, 7, 1));
        let err = infer_shapes(&spec).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv1"), "{msg}");
        assert!(msg.contains("5x3x1"), "{msg}");
    }

    #[test]
    fn empty_spec_echoes_input() {
        let spec = NetworkSpec::new(Dims3::new(30, 10, 1));
        let report = infer_shapes(&spec).unwrap();
        assert_eq!(report.output(), LayerShape::Image(Dims3::new(30, 10, 1)));
        assert_eq!(report.param_count(), 0);
    }

    #[test]
    fn dense_on_image_is_rejected() {
        let spec = NetworkSpec::new(Dims3::new(4, 4, 1))
            .push(LayerSpec::relu())
            .push(LayerSpec::dense(3));
        match infer_shapes(&spec).unwrap_err() {
            Error::Layer { index, name, .. } => {
                assert_eq!(index, 1);
                assert_eq!(name, "dense1");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn layer_names_are_stable() {
        let spec = build_dl2();
        let names: Vec<&str> = spec.layers.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(&names[..5], &["conv1", "relu1", "dropout1", "pool1", "conv2"]);
    }
}
