use rand::Rng;

use crate::architectures::{LayerInfo, ShapeReport};
use crate::error::{Error, Result};
use crate::nn::spec::LayerSpec;

/// Weights and biases of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    /// Index of the owning layer in the network spec.
    pub layer: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Learnable parameters of a network: one block per conv/dense layer in
/// network order. The flat order is layers in network order, weights before
/// biases, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub blocks: Vec<ParamBlock>,
}

/// Per-parameter gradients; congruent with [`Parameters`].
pub type GradientSet = Parameters;

fn parametric_layers<'a>(
    report: &'a ShapeReport,
    layers: &'a [LayerSpec],
) -> impl Iterator<Item = (usize, &'a LayerInfo, &'a LayerSpec)> {
    report
        .layers
        .iter()
        .zip(layers)
        .enumerate()
        .filter(|(_, (_, spec))| spec.is_parametric())
        .map(|(i, (info, spec))| (i, info, spec))
}

impl Parameters {
    pub(crate) fn zeros_for(report: &ShapeReport, layers: &[LayerSpec]) -> Self {
        let blocks = parametric_layers(report, layers)
            .map(|(layer, info, _)| ParamBlock {
                layer,
                weights: vec![0.0; info.weight_count],
                biases: vec![0.0; info.bias_count],
            })
            .collect();
        Self { blocks }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero
    /// biases. Draws are taken layer by layer in flat weight order.
    pub(crate) fn glorot_for<R: Rng + ?Sized>(
        report: &ShapeReport,
        layers: &[LayerSpec],
        rng: &mut R,
    ) -> Self {
        let blocks = parametric_layers(report, layers)
            .map(|(layer, info, spec)| {
                let (fan_in, fan_out) = match spec {
                    LayerSpec::Conv2d(c) => {
                        let area = c.filter_rows * c.filter_cols;
                        let cin = info.weight_count / (area * c.filters);
                        (area * cin, area * c.filters)
                    }
                    _ => (info.input.len(), info.output.len()),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..info.weight_count)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                ParamBlock {
                    layer,
                    weights,
                    biases: vec![0.0; info.bias_count],
                }
            })
            .collect();
        Self { blocks }
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    layer: b.layer,
                    weights: vec![0.0; b.weights.len()],
                    biases: vec![0.0; b.biases.len()],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(ParamBlock::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_for_layer(&self, layer: usize) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.layer == layer)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks
            .iter()
            .flat_map(|b| b.weights.iter().chain(&b.biases).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.weights.iter_mut().chain(b.biases.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    /// Overwrites every value from `flat`, which must match [`Self::len`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        for (dst, src) in self.values_mut().zip(flat) {
            *dst = *src;
        }
        Ok(())
    }

    /// `self += other`, element by element.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// Index of the first block holding a non-finite value, reported as the
    /// owning layer index.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.blocks
            .iter()
            .find(|b| b.weights.iter().chain(&b.biases).any(|v| !v.is_finite()))
            .map(|b| b.layer)
    }
}
