//! Model checkpoints: a directory holding `weights.bin` and `manifest.json`.
//!
//! The blob is every parameter in layer order (each layer's weights, then
//! its biases) as little-endian f64. The manifest is written after the blob
//! and carries the blob length and its FNV-1a 64-bit checksum, so a
//! directory without a manifest, or with a mismatching one, is an
//! incomplete save.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use churn_core::architectures::{infer_shapes, NetworkSpec};
use churn_core::autoencoder::{Autoencoder, AutoencoderSpec};
use churn_core::hash::fnv1a64;
use churn_core::imaging::{ChannelSet, Normalizer};
use churn_core::ltl::LtlConfig;
use churn_core::nn::{Network, Parameters};
use churn_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Classifier { network: NetworkSpec },
    Autoencoder { autoencoder: AutoencoderSpec },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Classifier { .. } => "classifier",
            ModelKind::Autoencoder { .. } => "autoencoder",
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        match self {
            ModelKind::Classifier { network } => network.clone(),
            ModelKind::Autoencoder { autoencoder } => autoencoder.network_spec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(flatten)]
    pub model: ModelKind,
    pub channels: ChannelSet,
    pub ltl: LtlConfig,
    pub normalizer: Normalizer,
    /// Fingerprint of the training matrices the normalizer was fitted on.
    pub dataset_fingerprint: u64,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub created_by: String,
    pub param_count: usize,
    pub blob_bytes: u64,
    /// FNV-1a 64 of the blob, as 16 hex digits.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: Parameters,
}

/// What a checkpoint needs besides the model and its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub channels: ChannelSet,
    pub ltl: LtlConfig,
    pub normalizer: Normalizer,
    pub train_config: TrainConfig,
}

fn blob_of(params: &Parameters) -> Vec<u8> {
    params.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn checksum_hex(blob: &[u8]) -> String {
    format!("{:016x}", fnv1a64(blob))
}

impl Checkpoint {
    pub fn new(model: ModelKind, params: Parameters, provenance: Provenance) -> Result<Self> {
        let expected = infer_shapes(&model.network_spec())?.param_count();
        ensure!(
            params.len() == expected,
            "{} parameters for a model with {expected}",
            params.len()
        );
        let blob = blob_of(&params);
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model,
            channels: provenance.channels,
            ltl: provenance.ltl,
            dataset_fingerprint: provenance.normalizer.fingerprint,
            normalizer: provenance.normalizer,
            seed: provenance.train_config.seed,
            train_config: provenance.train_config,
            created_by: format!("churn {}", env!("CARGO_PKG_VERSION")),
            param_count: expected,
            blob_bytes: blob.len() as u64,
            checksum: checksum_hex(&blob),
        };
        Ok(Self { manifest, params })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            fs::remove_file(&manifest_path)?;
        }
        let blob = blob_of(&self.params);
        fs::write(dir.join(WEIGHTS_FILE), &blob)?;
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(manifest_path, text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .with_context(|| format!("cannot read {} (incomplete checkpoint?)", manifest_path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text).with_context(|| manifest_path.display().to_string())?;
        ensure!(
            manifest.format_version == FORMAT_VERSION,
            "unsupported checkpoint format {}",
            manifest.format_version
        );
        let blob = fs::read(dir.join(WEIGHTS_FILE)).with_context(|| format!("cannot read weights in {}", dir.display()))?;
        ensure!(
            blob.len() as u64 == manifest.blob_bytes,
            "weights are {} bytes, manifest records {}",
            blob.len(),
            manifest.blob_bytes
        );
        let actual = checksum_hex(&blob);
        ensure!(
            actual == manifest.checksum,
            "weights checksum {actual} does not match manifest {}",
            manifest.checksum
        );
        let network = Network::new(manifest.model.network_spec())?;
        let count = network.param_count();
        ensure!(
            count == manifest.param_count && blob.len() == 8 * count,
            "model has {count} parameters but the blob holds {}",
            blob.len() / 8
        );
        ensure!(
            manifest.normalizer.fingerprint == manifest.dataset_fingerprint,
            "normalizer does not belong to the recorded training data"
        );
        ensure!(
            manifest.normalizer.channels() == manifest.channels.len(),
            "normalizer has {} channels, channel set {}",
            manifest.normalizer.channels(),
            manifest.channels.len()
        );
        let flat: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut params = network.zero_params();
        params.load_flat(&flat)?;
        Ok(Self { manifest, params })
    }

    pub fn classifier(&self) -> Result<&NetworkSpec> {
        match &self.manifest.model {
            ModelKind::Classifier { network } => Ok(network),
            other => bail!("expected a classifier checkpoint, found {}", other.name()),
        }
    }

    pub fn autoencoder(&self) -> Result<Autoencoder> {
        match &self.manifest.model {
            ModelKind::Autoencoder { autoencoder } => Ok(Autoencoder::from_params(*autoencoder, self.params.clone())?),
            other => bail!("expected an autoencoder checkpoint, found {}", other.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use churn_core::architectures::build_dl1;
    use churn_core::imaging::fit_normalizer;
    use churn_core::Tensor;

    fn provenance() -> Provenance {
        Provenance {
            channels: ChannelSet::dl1(),
            ltl: LtlConfig::standard(119),
            normalizer: fit_normalizer(&[Tensor::filled(vec![30, 10, 1], 1.0)], 99.0).unwrap(),
            train_config: TrainConfig::default(),
        }
    }

    fn checkpoint() -> Checkpoint {
        let spec = build_dl1();
        let net = Network::new(spec.clone()).unwrap();
        let mut params = net.zero_params();
        for (i, v) in params.values_mut().enumerate() {
            *v = (i as f64 * 0.37).sin() / 3.0;
        }
        Checkpoint::new(ModelKind::Classifier { network: spec }, params, provenance()).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint();
        ck.save(dir.path()).unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded, ck);
        assert_eq!(fs::metadata(dir.path().join(WEIGHTS_FILE)).unwrap().len(), 8 * 3572);
        assert!(loaded.autoencoder().is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        checkpoint().save(dir.path()).unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let mut blob = fs::read(&path).unwrap();
        blob[17] ^= 1;
        fs::write(&path, &blob).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
        blob.truncate(blob.len() - 8);
        fs::write(&path, &blob).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
        fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(Checkpoint::load(dir.path()).unwrap_err().to_string().contains("incomplete"));
    }

    #[test]
    fn wrong_param_count_rejected() {
        let spec = build_dl1();
        let params = Network::new(churn_core::architectures::build_dl2()).unwrap().zero_params();
        assert!(Checkpoint::new(ModelKind::Classifier { network: spec }, params, provenance()).is_err());
    }
}
