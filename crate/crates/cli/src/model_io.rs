//! Trained-model wrapper and its on-disk container.
//!
//! Layout: 8-byte magic `CLVAEMDL`, u32 LE format version, u64 LE header
//! length, UTF-8 JSON header, then every tensor listed in the header as
//! little-endian f64 values in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use clvae_core::autoencoder::{self, AeConfig, AeModel};
use clvae_core::clvae::{self, ClVaeConfig, ClVaeModel};
use clvae_core::datasets::LabeledDataset;
use clvae_core::nn::LossHistory;
use clvae_core::numerics::{ParamStore, Tensor};
use clvae_core::vae::{self, Architecture, VaeConfig, VaeModel};
use clvae_core::LatentSet;

use crate::config::{ModelConfig, ModelKind};
use crate::error::CliError;

const MAGIC: &[u8; 8] = b"CLVAEMDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub enum TrainedModel {
    Ae(AeModel),
    Vae(VaeModel),
    ClVae(ClVaeModel),
}

impl TrainedModel {
    pub fn train(config: &ModelConfig, seed: u64, data: &LabeledDataset) -> Result<(Self, LossHistory), CliError> {
        let stage = CliError::stage("train");
        let train = config.train_config(seed);
        let arch = Architecture::new(data.dim(), config.hidden.clone(), config.latent_dim);
        Ok(match config.kind {
            ModelKind::Ae => {
                let mut c = AeConfig::new(data.dim(), config.latent_dim, config.recon.output_activation(), train);
                c.hidden = config.hidden.clone();
                let (m, h) = autoencoder::train_ae(data, &c).map_err(stage)?;
                (TrainedModel::Ae(m), h)
            }
            ModelKind::Vae => {
                let c = VaeConfig::new(arch, config.recon, train);
                let (m, h) = vae::train_vae(data, &c).map_err(stage)?;
                (TrainedModel::Vae(m), h)
            }
            ModelKind::Clvae => {
                let mut c = ClVaeConfig::new(arch, config.recon, train).with_weights(config.gamma, config.beta);
                c.mean_init_scale = config.mean_init_scale;
                let (m, h) = clvae::train_clvae(data, &c).map_err(stage)?;
                (TrainedModel::ClVae(m), h)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Ae(_) => ModelKind::Ae,
            TrainedModel::Vae(_) => ModelKind::Vae,
            TrainedModel::ClVae(_) => ModelKind::Clvae,
        }
    }

    pub fn id(&self) -> String {
        match self {
            TrainedModel::Ae(m) => m.id(),
            TrainedModel::Vae(m) => m.id(),
            TrainedModel::ClVae(m) => m.id(),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            TrainedModel::Ae(m) => &m.params,
            TrainedModel::Vae(m) => &m.params,
            TrainedModel::ClVae(m) => &m.params,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Ae(m) => m.config.input_dim,
            TrainedModel::Vae(m) => m.config.architecture.input_dim,
            TrainedModel::ClVae(m) => m.config.architecture.input_dim,
        }
    }

    pub fn project(&self, data: &LabeledDataset) -> Result<LatentSet, CliError> {
        let stage = CliError::stage("project");
        match self {
            TrainedModel::Ae(m) => autoencoder::project(m, data),
            TrainedModel::Vae(m) => vae::project(m, data),
            TrainedModel::ClVae(m) => clvae::project(m, data),
        }
        .map_err(stage)
    }

    fn header(&self) -> Header {
        let tensors = self
            .params()
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let (config, class_names, class_prior) = match self {
            TrainedModel::Ae(m) => (ModelSettings::Ae(m.config.clone()), vec![], vec![]),
            TrainedModel::Vae(m) => (ModelSettings::Vae(m.config.clone()), vec![], vec![]),
            TrainedModel::ClVae(m) => (
                ModelSettings::Clvae(m.config.clone()),
                m.class_names.clone(),
                m.class_prior.clone(),
            ),
        };
        Header {
            config,
            class_names,
            class_prior,
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let header = serde_json::to_vec(&self.header()).map_err(|e| CliError::ModelFile(e.to_string()))?;
        let mut out = Vec::with_capacity(header.len() + 8 * self.params().scalar_count() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params().iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|source| CliError::Output {
                stage: "train",
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::ModelFile(format!("{}: {msg}", path.display()));
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| bad(e.to_string()))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a model file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "model format version {version} is not supported (this build reads version {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body_start = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[20..body_start]).map_err(|e| bad(format!("header: {e}")))?;

        let mut params = ParamStore::new();
        let mut offset = body_start;
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let end = offset + 8 * count;
            if end > bytes.len() {
                return Err(bad(format!("tensor {} is truncated", entry.name)));
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data).map_err(|e| bad(e.to_string()))?;
            params.register(entry.name.clone(), t);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensors".into()));
        }
        let to_err = |e: clvae_core::Error| bad(e.to_string());
        Ok(match header.config {
            ModelSettings::Ae(c) => TrainedModel::Ae(AeModel::from_params(c, params).map_err(to_err)?),
            ModelSettings::Vae(c) => TrainedModel::Vae(VaeModel::from_params(c, params).map_err(to_err)?),
            ModelSettings::Clvae(c) => TrainedModel::ClVae(
                ClVaeModel::from_params(c, params, header.class_prior, header.class_names).map_err(to_err)?,
            ),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "lowercase")]
enum ModelSettings {
    Ae(AeConfig),
    Vae(VaeConfig),
    Clvae(ClVaeConfig),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    config: ModelSettings,
    class_names: Vec<String>,
    class_prior: Vec<f64>,
    tensors: Vec<TensorEntry>,
}
