use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a valid, stride-1 convolution whose filters span every input
/// channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub filters: usize,
    pub filter_rows: usize,
    pub filter_cols: usize,
}

/// Non-overlapping max pooling; the stride equals the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub pool_rows: usize,
    pub pool_cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
}

/// One layer of a network, as declared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d(Conv2dSpec),
    MaxPool(PoolSpec),
    Dense { units: usize },
    Activation { function: ActivationKind },
    Dropout { rate: f64 },
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn conv(filters: usize, filter_rows: usize, filter_cols: usize) -> Self {
        Self::Conv2d(Conv2dSpec {
            filters,
            filter_rows,
            filter_cols,
        })
    }

    pub fn max_pool(pool_rows: usize, pool_cols: usize) -> Self {
        Self::MaxPool(PoolSpec { pool_rows, pool_cols })
    }

    pub fn dense(units: usize) -> Self {
        Self::Dense { units }
    }

    pub fn relu() -> Self {
        Self::Activation {
            function: ActivationKind::Relu,
        }
    }

    pub fn sigmoid() -> Self {
        Self::Activation {
            function: ActivationKind::Sigmoid,
        }
    }

    pub fn dropout(rate: f64) -> Self {
        Self::Dropout { rate }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Self::Conv2d(_) | Self::Dense { .. })
    }

    /// Short lowercase name of the layer kind.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Conv2d(_) => "conv2d",
            Self::MaxPool(_) => "maxpool",
            Self::Dense { .. } => "dense",
            Self::Activation { .. } => "activation",
            Self::Dropout { .. } => "dropout",
            Self::Flatten => "flatten",
            Self::Softmax => "softmax",
        }
    }
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}
