use super::bias::{BiasScalars, DatasetBiasParams};
use super::readout::ReadoutParams;
use super::scales::ScaleSpec;
use crate::centerbias::CenterBiasModel;
use crate::error::{data_err, Result, SalError};
use crate::grid::{write_fmap, GridStack};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Readout plus per-dataset biases, as saved in a checkpoint directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub scales: Vec<ScaleSpec>,
    pub provider: String,
    pub readout: ReadoutParams,
    pub biases: BTreeMap<String, DatasetBiasParams>,
}

#[derive(Serialize, Deserialize)]
struct StoredBias {
    #[serde(flatten)]
    scalars: BiasScalars,
    centerbias: String,
    /// Derived values for readers; ignored on load.
    scale_weights: Vec<f64>,
    priority: f64,
    sigma_dva: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    scales: Vec<ScaleSpec>,
    provider: String,
    channels: usize,
    biases: BTreeMap<String, StoredBias>,
}

fn file_stem_for(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

impl ModelCheckpoint {
    /// Writes `model.json`, `readout.json`, one center bias file per dataset
    /// and per-layer weight tensors as FMAP (`readout_layer<k>.fmap`).
    /// The JSON files hold the exact values; the FMAP tensors are f32 copies.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| SalError::io(dir, e))?;
        let mut biases = BTreeMap::new();
        for (name, b) in &self.biases {
            let cb_file = format!("centerbias_{}.json", file_stem_for(name));
            b.centerbias.save(&dir.join(&cb_file))?;
            biases.insert(
                name.clone(),
                StoredBias {
                    scalars: b.scalars(),
                    centerbias: cb_file,
                    scale_weights: b.scale_weights(),
                    priority: b.priority(),
                    sigma_dva: b.sigma_dva(),
                },
            );
        }
        crate::io::write_json(&dir.join("readout.json"), &self.readout)?;
        for (k, l) in self.readout.layers.iter().enumerate() {
            let t = GridStack::new(1, l.out_channels, l.in_channels, l.weight.clone())?;
            write_fmap(&dir.join(format!("readout_layer{k}.fmap")), &t)?;
        }
        crate::io::write_json(
            &dir.join("model.json"),
            &StoredModel {
                scales: self.scales.clone(),
                provider: self.provider.clone(),
                channels: self.readout.in_channels(),
                biases,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let stored: StoredModel = crate::io::read_json(&dir.join("model.json"))?;
        let readout: ReadoutParams = crate::io::read_json(&dir.join("readout.json"))?;
        readout.validate()?;
        if readout.in_channels() != stored.channels {
            return Err(data_err!("checkpoint channel count disagrees with its readout"));
        }
        let mut biases = BTreeMap::new();
        for (name, b) in stored.biases {
            let cb = CenterBiasModel::load(&dir.join(&b.centerbias))?;
            let params = DatasetBiasParams::from_scalars(b.scalars, cb);
            if params.scale_logits.len() != stored.scales.len() {
                return Err(data_err!("bias parameters of {name} do not match the scale list"));
            }
            biases.insert(name, params);
        }
        Ok(ModelCheckpoint {
            scales: stored.scales,
            provider: stored.provider,
            readout,
            biases,
        })
    }
}

/// SHA-256 over the names and contents of every file in a checkpoint
/// directory, in sorted order.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| SalError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    let mut bytes = Vec::new();
    for n in names {
        let p = dir.join(&n);
        bytes.extend_from_slice(n.to_string_lossy().as_bytes());
        bytes.push(0);
        bytes.extend(std::fs::read(&p).map_err(|e| SalError::io(&p, e))?);
    }
    Ok(crate::io::sha256_hex(&bytes))
}
