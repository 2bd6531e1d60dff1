//! Network (and optional optimizer) persistence.
//!
//! A JSON manifest holding layer specs, array lengths and optimizer scalars,
//! followed by every array as little-endian f64 in manifest order: layer
//! parameters, batch-norm running statistics, then optimizer buffers.

use std::path::Path;

use rhomap_core::container;
use serde::{Deserialize, Serialize};

use crate::{LayerSpec, Network, NnError, OptimizerKind, OptimizerState, Result};

const FORMAT: &str = "rhomap-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    layer: usize,
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerManifest {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    decay_gamma: f64,
    step: u64,
    m_lens: Vec<usize>,
    v_lens: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    input_channels: usize,
    layers: Vec<LayerSpec>,
    arrays: Vec<ArrayEntry>,
    optimizer: Option<OptimizerManifest>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<OptimizerState>,
    pub metadata: serde_json::Value,
}

pub fn to_bytes(net: &Network, opt: Option<&OptimizerState>, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    for (li, layer) in net.layers().iter().enumerate() {
        for (pi, p) in layer.params.iter().enumerate() {
            arrays.push(ArrayEntry {
                layer: li,
                name: format!("param{pi}"),
                len: p.value.len(),
            });
            payload.extend_from_slice(&p.value);
        }
        if let Some((rm, rv)) = &layer.running {
            for (name, a) in [("running_mean", rm), ("running_var", rv)] {
                arrays.push(ArrayEntry {
                    layer: li,
                    name: name.into(),
                    len: a.len(),
                });
                payload.extend_from_slice(a);
            }
        }
    }
    let optimizer = opt.map(|o| {
        for b in o.m.iter().chain(&o.v) {
            payload.extend_from_slice(b);
        }
        OptimizerManifest {
            kind: o.kind,
            lr: o.lr,
            weight_decay: o.weight_decay,
            decay_gamma: o.decay_gamma,
            step: o.step,
            m_lens: o.m.iter().map(Vec::len).collect(),
            v_lens: o.v.iter().map(Vec::len).collect(),
        }
    });
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        input_channels: net.input_channels(),
        layers: net.specs(),
        arrays,
        optimizer,
        metadata: metadata.clone(),
    };
    Ok(container::encode(&manifest, &container::f64s_to_le(&payload))?)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let (manifest, raw): (Manifest, &[u8]) =
        container::decode(bytes).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let opt_len = manifest
        .optimizer
        .as_ref()
        .map_or(0, |o| o.m_lens.iter().chain(&o.v_lens).sum());
    let expected = (manifest.arrays.iter().map(|a| a.len).sum::<usize>() + opt_len) * 8;
    if raw.len() != expected {
        return Err(NnError::Checkpoint(format!(
            "payload is {} bytes, manifest describes {expected}",
            raw.len()
        )));
    }
    let values = container::le_to_f64s(raw);
    let mut cursor = values.into_iter();
    let mut take = |n: usize| -> Vec<f64> { cursor.by_ref().take(n).collect() };

    let mut net = Network::new(manifest.input_channels, manifest.layers, 0)?;
    let n_layers = net.layers().len();
    for entry in &manifest.arrays {
        if entry.layer >= n_layers {
            return Err(NnError::Checkpoint(format!("array for missing layer {}", entry.layer)));
        }
        let data = take(entry.len);
        let layer = &mut net.layers_mut()[entry.layer];
        let slot: &mut Vec<f64> = match entry.name.as_str() {
            "running_mean" | "running_var" => {
                let (rm, rv) = layer
                    .running
                    .as_mut()
                    .ok_or_else(|| NnError::Checkpoint(format!("layer {} has no running stats", entry.layer)))?;
                if entry.name == "running_mean" {
                    rm
                } else {
                    rv
                }
            }
            name => {
                let idx: usize = name
                    .strip_prefix("param")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| NnError::Checkpoint(format!("unknown array {name}")))?;
                &mut layer
                    .params
                    .get_mut(idx)
                    .ok_or_else(|| NnError::Checkpoint(format!("layer {} has no {name}", entry.layer)))?
                    .value
            }
        };
        if slot.len() != data.len() {
            return Err(NnError::Checkpoint(format!(
                "layer {} {}: expected {} values, got {}",
                entry.layer,
                entry.name,
                slot.len(),
                data.len()
            )));
        }
        *slot = data;
    }
    let optimizer = match manifest.optimizer {
        Some(o) => {
            let mut state = OptimizerState::new(o.kind, o.lr, o.weight_decay, o.decay_gamma)?;
            state.step = o.step;
            state.m = o.m_lens.iter().map(|&n| take(n)).collect();
            state.v = o.v_lens.iter().map(|&n| take(n)).collect();
            Some(state)
        }
        None => None,
    };
    Ok(Checkpoint {
        network: net,
        optimizer,
        metadata: manifest.metadata,
    })
}

pub fn save(path: &Path, net: &Network, opt: Option<&OptimizerState>, metadata: &serde_json::Value) -> Result<()> {
    let bytes = to_bytes(net, opt, metadata)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| rhomap_core::Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| rhomap_core::Error::io(path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&container::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Mode, NetworkBuilder, Tensor};

    fn small_net() -> Network {
        let mut b = NetworkBuilder::new(2);
        b.conv(3, 3).batch_norm().relu().conv(1, 1).limiter(10.0, 100.0);
        b.build(7).unwrap()
    }

    #[test]
    fn round_trip_exact() {
        let mut net = small_net();
        let x = Tensor::from_vec([2, 2, 4, 4], (0..64).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        let y = net.forward(&x, Mode::Train).unwrap();
        net.backward(&y).unwrap();
        let mut opt = OptimizerState::adam(1e-3);
        opt.step(&mut net).unwrap();
        opt.end_epoch();
        let meta = serde_json::json!({"epoch": 3});

        let bytes = to_bytes(&net, Some(&opt), &meta).unwrap();
        let ck = from_bytes(&bytes).unwrap();
        net.zero_grad();
        assert_eq!(ck.network.param_vector(), net.param_vector());
        assert_eq!(ck.network.layers(), net.layers());
        assert_eq!(ck.optimizer.as_ref(), Some(&opt));
        assert_eq!(ck.metadata, meta);
        assert_eq!(ck.network.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/net.ckpt");
        let net = small_net();
        save(&path, &net, None, &serde_json::Value::Null).unwrap();
        let ck = load(&path).unwrap();
        assert!(ck.optimizer.is_none());
        assert_eq!(ck.network.layers(), net.layers());
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = to_bytes(&small_net(), None, &serde_json::Value::Null).unwrap();
        let err = from_bytes(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(matches!(err, NnError::Checkpoint(_)));
    }
}
