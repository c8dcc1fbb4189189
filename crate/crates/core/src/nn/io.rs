//! Model directories: a `model.json` manifest holding the spec plus one
//! UQTENSOR file per parameter tensor, named `layer{i}.weight` / `layer{i}.bias`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::fsutil;
use crate::nn::network::{Network, Param};
use crate::nn::spec::NetworkSpec;
use crate::tensor::Tensor;

pub const MODEL_MANIFEST: &str = "model.json";

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    spec: NetworkSpec,
    epochs_completed: usize,
    loss_history: Vec<f64>,
    parameters: Vec<String>,
}

pub fn save_network(net: &Network, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| UqError::io(dir, e))?;
    let mut names = Vec::new();
    for (i, p) in net.params.iter().enumerate() {
        if let Some(p) = p {
            for (suffix, t) in [("weight", &p.weight), ("bias", &p.bias)] {
                let name = format!("layer{i}.{suffix}");
                t.save(&dir.join(&name))?;
                names.push(name);
            }
        }
    }
    let manifest = ModelManifest {
        spec: net.spec.clone(),
        epochs_completed: net.epochs_completed,
        loss_history: net.loss_history.clone(),
        parameters: names,
    };
    fsutil::write_json(&dir.join(MODEL_MANIFEST), &manifest)
}

pub fn load_network(dir: &Path) -> Result<Network> {
    let manifest_path = dir.join(MODEL_MANIFEST);
    if !manifest_path.is_file() {
        return Err(UqError::State(format!("no model manifest at {}", manifest_path.display())));
    }
    let manifest: ModelManifest = fsutil::read_json(&manifest_path)?;
    let mut params = Vec::with_capacity(manifest.spec.layers.len());
    for (i, layer) in manifest.spec.layers.iter().enumerate() {
        if layer.has_parameters() {
            let weight = Tensor::load(&dir.join(format!("layer{i}.weight")))?;
            let bias = Tensor::load(&dir.join(format!("layer{i}.bias")))?;
            params.push(Some(Param { weight, bias }));
        } else {
            params.push(None);
        }
    }
    Network::from_parts(manifest.spec, params, manifest.epochs_completed, manifest.loss_history)
}
