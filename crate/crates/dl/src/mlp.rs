//! Voxel-wise MLP: FC / ReLU / BN blocks with identity skips between blocks.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhomap_core::exec::derive_seed;
use rhomap_core::{Exec, RoiMask, Volume3D};
use rhomap_nn::{checkpoint, l1_loss, Mode, Network, NetworkBuilder, OptimizerKind, OptimizerState, Tensor};

use crate::data::{encode_pair, reassemble_voxels, split_validation, subject_reference, target_scale};
use crate::log::{EarlyStop, EpochRecord, TrainLog};
use crate::{DlError, MlpConfig, Result, SubjectData, TrainConfig};

const PREDICT_CHUNK: usize = 4096;

pub fn build_mlp(cfg: &MlpConfig, scale: f64, offset: f64, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut b = NetworkBuilder::new(cfg.in_features);
    b.fc(cfg.hidden_width).relu().batch_norm();
    let mut prev = b.mark();
    for _ in 1..cfg.hidden_blocks {
        b.fc(cfg.hidden_width).relu().batch_norm().add(prev);
        prev = b.mark();
    }
    b.fc(1).rescale(scale, offset);
    Ok(b.build(seed)?)
}

/// Encoded `(i0, ik)` pairs of the ROI voxels, in [`crate::extract_voxels`] order.
pub fn voxel_features(i0: &Volume3D, ik: &Volume3D, roi: &RoiMask) -> Result<Vec<[f64; 2]>> {
    ik.ensure_same_dims(i0.dims())?;
    roi.ensure_pairs_with(i0)?;
    let r = subject_reference(i0, roi, "input")?;
    Ok(roi
        .indices()
        .map(|i| encode_pair(i0.data()[i], ik.data()[i], r))
        .collect())
}

/// ROI voxels with a valid target.
fn training_pairs(s: &SubjectData) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let r = subject_reference(&s.i0, &s.roi, &s.id)?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for i in s.roi.indices().filter(|&i| s.target_valid.contains(i)) {
        x.push(encode_pair(s.i0.data()[i], s.ik.data()[i], r));
        y.push(s.target.data()[i]);
    }
    if x.is_empty() {
        return Err(DlError::EmptyMask(s.id.clone()));
    }
    Ok((x, y))
}

fn gather(subjects: &[&SubjectData]) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for s in subjects {
        let (a, b) = training_pairs(s)?;
        x.extend(a);
        y.extend(b);
    }
    Ok((x, y))
}

fn features_tensor(x: &[[f64; 2]]) -> Result<Tensor> {
    Ok(Tensor::from_rows(x.len(), 2, x.iter().flatten().copied().collect())?)
}

#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub net: Network,
    pub config: MlpConfig,
    pub log: TrainLog,
}

impl TrainedMlp {
    pub fn predict_features(&self, x: &[[f64; 2]]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        for chunk in x.chunks(PREDICT_CHUNK) {
            out.extend_from_slice(self.net.predict(&features_tensor(chunk)?)?.data());
        }
        Ok(out)
    }

    /// T1rho on the ROI; 0 elsewhere.
    pub fn predict(&self, i0: &Volume3D, ik: &Volume3D, roi: &RoiMask) -> Result<Volume3D> {
        let pred = self.predict_features(&voxel_features(i0, ik, roi)?)?;
        reassemble_voxels(&pred, roi, i0.spacing())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "model": "mlp", "config": self.config });
        Ok(checkpoint::save(path, &self.net, None, &meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        let config = serde_json::from_value(ck.metadata["config"].clone())
            .map_err(|e| DlError::Config(format!("checkpoint config: {e}")))?;
        Ok(Self {
            net: ck.network,
            config,
            log: TrainLog::default(),
        })
    }
}

fn mean_abs_error(net: &Network, x: &[[f64; 2]], y: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (xc, yc) in x.chunks(PREDICT_CHUNK).zip(y.chunks(PREDICT_CHUNK)) {
        let p = net.predict(&features_tensor(xc)?)?;
        sum += p.data().iter().zip(yc).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(sum / y.len() as f64)
}

/// RMSProp on shuffled ROI voxel mini-batches; a trailing batch of one
/// voxel is dropped because batch norm needs two.
pub fn train_mlp(subjects: &[SubjectData], cfg: &MlpConfig, tcfg: &TrainConfig, exec: Exec) -> Result<TrainedMlp> {
    cfg.validate()?;
    tcfg.validate()?;
    if subjects.is_empty() {
        return Err(DlError::EmptyDataset);
    }
    let (train_idx, val_idx) = split_validation(subjects.len(), tcfg.val_fraction, tcfg.seed);
    let train: Vec<&SubjectData> = train_idx.iter().map(|&i| &subjects[i]).collect();
    let val: Vec<&SubjectData> = val_idx.iter().map(|&i| &subjects[i]).collect();
    let (x, y) = gather(&train)?;
    let (vx, vy) = gather(&val)?;

    let (mean, std) = target_scale(y.iter().copied());
    let mut net = build_mlp(cfg, std, mean, derive_seed(tcfg.seed, 3))?;
    net.set_exec(exec);
    let mut opt = OptimizerState::new(OptimizerKind::RmsProp, tcfg.lr, tcfg.weight_decay, tcfg.lr_decay)?;

    let mut log = TrainLog::default();
    let mut stop = EarlyStop::new(tcfg.patience);
    let mut order: Vec<usize> = (0..x.len()).collect();
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, 1000 + epoch as u64)));
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let bx: Vec<[f64; 2]> = batch.iter().map(|&i| x[i]).collect();
            let by = Tensor::from_rows(batch.len(), 1, batch.iter().map(|&i| y[i]).collect())?;
            let pred = net.forward(&features_tensor(&bx)?, Mode::Train)?;
            let loss = l1_loss(&pred, &by, None)?;
            net.backward(&loss.grad)?;
            opt.step(&mut net)?;
            sum += loss.value * loss.count as f64;
            count += loss.count;
        }
        let train_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        let val_loss = if vy.is_empty() {
            None
        } else {
            Some(mean_abs_error(&net, &vx, &vy)?)
        };
        log.epochs.push(EpochRecord {
            epoch,
            lr: opt.lr,
            train_loss,
            val_loss,
        });
        if !train_loss.is_finite() {
            log.diverged = true;
            break;
        }
        if stop.observe(epoch, val_loss, &net) {
            log.stopped_early = true;
            break;
        }
        opt.end_epoch();
    }
    let net = stop.finish(net, &mut log);
    Ok(TrainedMlp {
        net,
        config: cfg.clone(),
        log,
    })
}
