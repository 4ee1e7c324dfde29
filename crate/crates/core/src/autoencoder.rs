//! Single-hidden-layer autoencoder and the images that maximally activate
//! its hidden units.
//!
//! For a hidden unit with incoming weights `w` (one per input pixel), the
//! norm-bounded input that activates it most is `w / ‖w‖₂`. Units whose
//! weight row has norm below [`DEAD_UNIT_NORM`] are reported as dead.

use serde::{Deserialize, Serialize};

use crate::architectures::NetworkSpec;
use crate::error::{Error, Result};
use crate::imaging::{ChannelSet, CustomerImage};
use crate::nn::{LayerSpec, Network, Parameters};
use crate::tensor::{Dims3, Tensor};
use crate::training::{fit, Objective, TrainConfig, TrainHistory};

pub const DEAD_UNIT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    /// days × channels × 1
    pub image: Dims3,
    pub hidden_units: usize,
}

impl AutoencoderSpec {
    pub fn new(days: usize, channels: usize, hidden_units: usize) -> Self {
        Self {
            image: Dims3::new(days, channels, 1),
            hidden_units,
        }
    }

    /// Flattened image length.
    pub fn input_dim(&self) -> usize {
        self.image.len()
    }

    /// `flatten → dense(H) → sigmoid → dense(D) → sigmoid`. The encoder is
    /// layer 1 and the decoder layer 3.
    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::new(self.image)
            .push(LayerSpec::Flatten)
            .push(LayerSpec::dense(self.hidden_units))
            .push(LayerSpec::sigmoid())
            .push(LayerSpec::dense(self.input_dim()))
            .push(LayerSpec::sigmoid())
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.input_dim() == 0 || self.image.channels != 1 {
            return Err(Error::Config(format!(
                "autoencoder needs a non-empty single-channel image and hidden units, got {} and {}",
                self.image, self.hidden_units
            )));
        }
        Ok(())
    }
}

const ENCODER: usize = 1;
const DECODER: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub params: Parameters,
}

impl Autoencoder {
    pub fn from_params(spec: AutoencoderSpec, params: Parameters) -> Result<Self> {
        spec.validate()?;
        let network = Network::new(spec.network_spec())?;
        if params.len() != network.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for an autoencoder with {}",
                params.len(),
                network.param_count()
            )));
        }
        Ok(Self { spec, params })
    }

    /// All weights and biases zero.
    pub fn zeroed(spec: AutoencoderSpec) -> Result<Self> {
        spec.validate()?;
        let network = Network::new(spec.network_spec())?;
        let params = network.zero_params();
        Ok(Self { spec, params })
    }

    /// Encoder weights, D × H with input pixel `j` to unit `i` at `j * H + i`.
    pub fn encoder_weights(&self) -> &[f64] {
        &self.block(ENCODER).weights
    }

    pub fn encoder_biases(&self) -> &[f64] {
        &self.block(ENCODER).biases
    }

    /// Decoder weights, H × D.
    pub fn decoder_weights(&self) -> &[f64] {
        &self.block(DECODER).weights
    }

    pub fn decoder_biases(&self) -> &[f64] {
        &self.block(DECODER).biases
    }

    fn block(&self, layer: usize) -> &crate::nn::ParamBlock {
        self.params
            .block_for_layer(layer)
            .expect("autoencoder layout has encoder and decoder blocks")
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let dims = self.spec.image;
        let ok = match image.shape() {
            [r, c, 1] | [r, c] => (*r, *c) == (dims.rows, dims.cols),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("image {:?} does not match autoencoder input {dims}", image.shape())))
        }
    }

    /// Hidden activations.
    pub fn encode(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.check_image(image)?;
        let h = self.spec.hidden_units;
        let w = self.encoder_weights();
        let mut out = self.encoder_biases().to_vec();
        for (j, x) in image.data().iter().enumerate() {
            if *x != 0.0 {
                for i in 0..h {
                    out[i] += x * w[j * h + i];
                }
            }
        }
        Ok(out.into_iter().map(crate::nn::layers::sigmoid).collect())
    }

    fn network(&self) -> Result<Network> {
        Network::new(self.spec.network_spec())
    }

    fn reconstruct_with(&self, network: &Network, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let x = image.clone().reshape(self.spec.image.to_vec())?;
        network.infer(&self.params, &x)?.reshape(self.spec.image.to_vec())
    }

    /// Decoder(encoder(image)), shaped like the input image.
    pub fn reconstruct(&self, image: &Tensor) -> Result<Tensor> {
        self.reconstruct_with(&self.network()?, image)
    }

    /// Mean squared reconstruction error over a set of images.
    pub fn reconstruction_mse(&self, images: &[Tensor]) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::Empty("no images".into()));
        }
        let network = self.network()?;
        let mut total = 0.0;
        for img in images {
            let rec = self.reconstruct_with(&network, img)?;
            total += mse(rec.data(), img.data());
        }
        Ok(total / images.len() as f64)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Trains on MSE with the shared Adadelta loop; inputs and targets are the
/// same images.
pub fn train_autoencoder(
    images: &[Tensor],
    spec: AutoencoderSpec,
    config: &TrainConfig,
) -> Result<(Autoencoder, TrainHistory)> {
    train_autoencoder_with_progress(images, spec, config, |_| {})
}

pub fn train_autoencoder_with_progress(
    images: &[Tensor],
    spec: AutoencoderSpec,
    config: &TrainConfig,
    on_epoch: impl FnMut(&crate::training::EpochRecord),
) -> Result<(Autoencoder, TrainHistory)> {
    spec.validate()?;
    let network = Network::new(spec.network_spec())?;
    let shaped: Vec<Tensor> = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let dims = spec.image;
            match img.shape() {
                [r, c, 1] | [r, c] if (*r, *c) == (dims.rows, dims.cols) => img.clone().reshape(dims.to_vec()),
                other => Err(Error::Shape(format!("image {i} has shape {other:?}, expected {dims}"))),
            }
        })
        .collect::<Result<_>>()?;
    let (params, history) = fit(&network, &shaped, Objective::Reconstruct, config, None, on_epoch)?;
    Ok((Autoencoder { spec, params }, history))
}

/// The unit-norm input that maximally activates one hidden unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseImage {
    pub unit: usize,
    /// days × channels
    pub pixels: Tensor,
    /// L2 norm of the flattened pixels.
    pub norm: f64,
}

impl BaseImage {
    /// Mean pixel value over the given columns.
    pub fn column_intensity(&self, columns: &[usize]) -> f64 {
        let (rows, cols) = (self.pixels.shape()[0], self.pixels.shape()[1]);
        if columns.is_empty() {
            return 0.0;
        }
        let d = self.pixels.data();
        let sum: f64 = columns
            .iter()
            .map(|&c| (0..rows).map(|r| d[r * cols + c]).sum::<f64>())
            .sum();
        sum / (rows * columns.len()) as f64
    }

    /// (voice-column intensity, data-column intensity).
    pub fn voice_and_data_intensity(&self, channels: &ChannelSet) -> (f64, f64) {
        (
            self.column_intensity(&channels.columns_where(|c| c.is_voice())),
            self.column_intensity(&channels.columns_where(|c| c.is_data())),
        )
    }

    /// A unit that responds to data usage but not to calls: positive data
    /// intensity, and voice intensity below `fraction` of it.
    pub fn is_data_over_voice(&self, channels: &ChannelSet, fraction: f64) -> bool {
        let (voice, data) = self.voice_and_data_intensity(channels);
        data > 0.0 && voice < fraction * data
    }
}

/// `row / ‖row‖₂`, or `None` for a dead row.
pub fn normalize_weight_row(row: &[f64]) -> Option<Vec<f64>> {
    let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm < DEAD_UNIT_NORM {
        return None;
    }
    Some(row.iter().map(|w| w / norm).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub images: Vec<BaseImage>,
    pub dead_units: Vec<usize>,
}

pub fn maximal_activation_images(ae: &Autoencoder) -> Result<Extraction> {
    let h = ae.spec.hidden_units;
    let d = ae.spec.input_dim();
    let w = ae.encoder_weights();
    let mut images = Vec::new();
    let mut dead_units = Vec::new();
    for unit in 0..h {
        let row: Vec<f64> = (0..d).map(|j| w[j * h + unit]).collect();
        match normalize_weight_row(&row) {
            Some(pixels) => {
                let norm = pixels.iter().map(|p| p * p).sum::<f64>().sqrt();
                images.push(BaseImage {
                    unit,
                    pixels: Tensor::new(vec![ae.spec.image.rows, ae.spec.image.cols], pixels)?,
                    norm,
                });
            }
            None => dead_units.push(unit),
        }
    }
    Ok(Extraction { images, dead_units })
}

/// Trained model, its loss history and its base images.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderRun {
    pub autoencoder: Autoencoder,
    pub history: TrainHistory,
    pub extraction: Extraction,
    pub images_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChurnerAnalysis {
    pub churners: AutoencoderRun,
    pub everyone: AutoencoderRun,
}

fn run(images: &[Tensor], spec: AutoencoderSpec, config: &TrainConfig) -> Result<AutoencoderRun> {
    let (autoencoder, history) = train_autoencoder(images, spec, config)?;
    let extraction = maximal_activation_images(&autoencoder)?;
    Ok(AutoencoderRun {
        autoencoder,
        history,
        extraction,
        images_used: images.len(),
    })
}

/// Trains one autoencoder on the label-1 images and one on all images.
/// Images without a label are rejected.
pub fn churner_base_images(
    images: &[CustomerImage],
    hidden_units: usize,
    config: &TrainConfig,
) -> Result<ChurnerAnalysis> {
    let first = images.first().ok_or_else(|| Error::Empty("no images".into()))?;
    let dims = first.pixels.dims3()?;
    let spec = AutoencoderSpec::new(dims.rows, dims.cols, hidden_units);
    let mut churned = Vec::new();
    let mut all = Vec::with_capacity(images.len());
    for img in images {
        match img.label {
            Some(1) => churned.push(img.pixels.clone()),
            Some(_) => {}
            None => return Err(Error::Config(format!("customer {} has no label", img.customer_id))),
        }
        all.push(img.pixels.clone());
    }
    if churned.is_empty() {
        return Err(Error::Empty(format!("no churners among {} images", images.len())));
    }
    Ok(ChurnerAnalysis {
        churners: run(&churned, spec, config)?,
        everyone: run(&all, spec, config)?,
    })
}
