//! Patch-trained 2D U-Net with a regressor, output rescale and limiter.

use std::path::Path;

use rhomap_core::exec::derive_seed;
use rhomap_core::{Exec, RoiMask, Volume3D};
use rhomap_nn::{checkpoint, l1_loss, Mode, Network, NetworkBuilder, OptimizerKind, OptimizerState, Tensor};

use crate::data::{encode_inputs, split_validation, target_scale};
use crate::log::{EarlyStop, EpochRecord, TrainLog};
use crate::sampler::{loss_mask, to_batch, Patch, PatchSampler};
use crate::{DlError, LossMaskMode, Result, SubjectData, TrainConfig, UNetConfig};

/// Two 3x3 conv / batch-norm / ReLU stages per level, max-pool down,
/// nearest upsample and concatenation up, then a 1x1 regressor.
pub fn build_unet(cfg: &UNetConfig, scale: f64, offset: f64, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut b = NetworkBuilder::new(cfg.in_channels);
    let mut skips = Vec::new();
    let mut ch = cfg.base_channels;
    for level in 0..cfg.depth {
        if level > 0 {
            b.max_pool();
        }
        b.conv(ch, 3).batch_norm().relu().conv(ch, 3).batch_norm().relu();
        if level + 1 < cfg.depth {
            skips.push(b.mark());
            ch *= 2;
        }
    }
    for skip in skips.into_iter().rev() {
        ch /= 2;
        b.upsample().concat(skip);
        b.conv(ch, 3).batch_norm().relu().conv(ch, 3).batch_norm().relu();
    }
    b.conv(1, 1).rescale(scale, offset).limiter(cfg.y_min, cfg.y_max);
    Ok(b.build(seed)?)
}

#[derive(Debug, Clone)]
pub struct TrainedUNet {
    pub net: Network,
    pub config: UNetConfig,
    pub log: TrainLog,
}

impl TrainedUNet {
    pub fn masked(&self) -> bool {
        self.config.loss_mask_mode == LossMaskMode::RoiMasked
    }

    /// Full-volume T1rho prediction from raw (smoothed) images.
    pub fn predict(&self, i0: &Volume3D, ik: &Volume3D, roi: &RoiMask) -> Result<Volume3D> {
        let (a, b) = encode_inputs(i0, ik, roi, self.masked())?;
        infer_unet_sliding(&self.net, &a, &b, self.config.window, self.config.stride)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "model": "unet", "config": self.config });
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

fn masked_loss_sum(net: &Network, patches: &[Patch], batch: usize) -> Result<(f64, usize)> {
    let (mut sum, mut count) = (0.0, 0);
    for chunk in patches.chunks(batch) {
        let (x, y, m) = to_batch(chunk)?;
        if m.data().iter().all(|&v| v == 0.0) {
            continue;
        }
        let l = l1_loss(&net.predict(&x)?, &y, Some(&m))?;
        sum += l.value * l.count as f64;
        count += l.count;
    }
    Ok((sum, count))
}

/// Trains on random patches from `subjects`, holding out
/// `tcfg.val_fraction` of them for early stopping. With a validation set
/// the returned network is the one with the lowest validation loss.
pub fn train_unet(subjects: &[SubjectData], cfg: &UNetConfig, tcfg: &TrainConfig, exec: Exec) -> Result<TrainedUNet> {
    cfg.validate()?;
    tcfg.validate()?;
    if subjects.is_empty() {
        return Err(DlError::EmptyDataset);
    }
    let (train_idx, val_idx) = split_validation(subjects.len(), tcfg.val_fraction, tcfg.seed);
    let train: Vec<&SubjectData> = train_idx.iter().map(|&i| &subjects[i]).collect();
    let val: Vec<&SubjectData> = val_idx.iter().map(|&i| &subjects[i]).collect();

    let sampler = PatchSampler::new(train.iter().copied(), cfg, derive_seed(tcfg.seed, 1), true)?;
    let val_patches = if val.is_empty() {
        Vec::new()
    } else {
        PatchSampler::new(val.iter().copied(), cfg, derive_seed(tcfg.seed, 2), false)?.sample_range(0, cfg.val_patches, exec)
    };

    let (mean, std) = target_scale(train.iter().flat_map(|s| {
        let m = loss_mask(s, cfg.loss_mask_mode, cfg.y_min, cfg.y_max);
        s.target.data().iter().zip(m).filter(|(_, m)| *m).map(|(&t, _)| t).collect::<Vec<_>>()
    }));
    let mut net = build_unet(cfg, std, mean - cfg.y_min, derive_seed(tcfg.seed, 3))?;
    net.set_exec(exec);
    let mut opt = OptimizerState::new(OptimizerKind::Adam, tcfg.lr, tcfg.weight_decay, tcfg.lr_decay)?;

    let mut log = TrainLog::default();
    let mut stop = EarlyStop::new(tcfg.patience);
    for epoch in 1..=tcfg.epochs {
        let start = ((epoch - 1) * cfg.patches_per_epoch) as u64;
        let patches = sampler.sample_range(start, cfg.patches_per_epoch, exec);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in patches.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y, m) = to_batch(chunk)?;
            if m.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            let pred = net.forward(&x, Mode::Train)?;
            let loss = l1_loss(&pred, &y, Some(&m))?;
            net.backward(&loss.grad)?;
            opt.step(&mut net)?;
            sum += loss.value * loss.count as f64;
            count += loss.count;
        }
        let train_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        let val_loss = if val_patches.is_empty() {
            None
        } else {
            let (s, c) = masked_loss_sum(&net, &val_patches, cfg.batch_size)?;
            (c > 0).then(|| s / c as f64)
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
    Ok(TrainedUNet {
        net,
        config: cfg.clone(),
        log,
    })
}

/// Window origins along an axis of length `n` (already padded to at least
/// `window`): every `stride`, plus a final window flush with the far edge.
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if n <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + window < n).collect();
    starts.push(n - window);
    starts.dedup();
    starts
}

/// How many windows cover each voxel of an `nx` x `ny` slice, row-major.
pub fn coverage_counts(nx: usize, ny: usize, window: usize, stride: usize) -> Vec<u32> {
    let mut counts = vec![0u32; nx * ny];
    for &y0 in &window_starts(ny.max(window), window, stride) {
        for &x0 in &window_starts(nx.max(window), window, stride) {
            for y in y0..(y0 + window).min(ny) {
                for x in x0..(x0 + window).min(nx) {
                    counts[y * nx + x] += 1;
                }
            }
        }
    }
    counts
}

/// Slice-by-slice tiled prediction on encoded inputs. Overlapping windows
/// are averaged with equal weight; slices smaller than the window are
/// edge-replicated up to the window size and cropped back.
pub fn infer_unet_sliding(net: &Network, i0: &Volume3D, ik: &Volume3D, window: usize, stride: usize) -> Result<Volume3D> {
    ik.ensure_same_dims(i0.dims())?;
    let [nx, ny, nz] = i0.dims();
    if nx < 8 || ny < 8 {
        return Err(DlError::VolumeTooSmall { nx, ny });
    }
    if window == 0 || stride == 0 || stride > window {
        return Err(DlError::Config(format!("need 0 < stride <= window, got stride {stride}, window {window}")));
    }
    let (px, py) = (nx.max(window), ny.max(window));
    let xs = window_starts(px, window, stride);
    let ys = window_starts(py, window, stride);
    let ww = window * window;
    let mut out = vec![0.0; i0.len()];
    for z in 0..nz {
        let mut batch = Vec::with_capacity(xs.len() * ys.len() * 2 * ww);
        for &y0 in &ys {
            for &x0 in &xs {
                for ch in [i0, ik] {
                    let plane = ch.slice(z);
                    for r in 0..window {
                        let sy = (y0 + r).min(ny - 1);
                        for c in 0..window {
                            batch.push(plane[sy * nx + (x0 + c).min(nx - 1)]);
                        }
                    }
                }
            }
        }
        let n = xs.len() * ys.len();
        let pred = net.predict(&Tensor::from_vec([n, 2, window, window], batch)?)?;
        let mut sum = vec![0.0; px * py];
        let mut cnt = vec![0u32; px * py];
        let mut k = 0;
        for &y0 in &ys {
            for &x0 in &xs {
                let tile = pred.sample(k);
                for r in 0..window {
                    for c in 0..window {
                        let j = (y0 + r) * px + x0 + c;
                        sum[j] += tile[r * window + c];
                        cnt[j] += 1;
                    }
                }
                k += 1;
            }
        }
        let dst = &mut out[z * nx * ny..(z + 1) * nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                dst[y * nx + x] = sum[y * px + x] / f64::from(cnt[y * px + x]);
            }
        }
    }
    Ok(i0.with_data(out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts() {
        assert_eq!(window_starts(64, 64, 32), vec![0]);
        assert_eq!(window_starts(96, 64, 32), vec![0, 32]);
        assert_eq!(window_starts(100, 64, 32), vec![0, 32, 36]);
        assert_eq!(window_starts(64, 32, 16), vec![0, 16, 32]);
    }

    #[test]
    fn coverage_96() {
        let c = coverage_counts(96, 96, 64, 32);
        assert!(c.iter().all(|v| [1, 2, 4].contains(v)));
        assert_eq!(c[0], 1);
        assert_eq!(c[40 * 96 + 40], 4);
        assert_eq!(c[40], 2);
    }

    #[test]
    fn unet_shapes() {
        let cfg = UNetConfig::fast();
        let net = build_unet(&cfg, 10.0, 30.0, 1).unwrap();
        let y = net.predict(&Tensor::zeros([1, 2, 32, 32])).unwrap();
        assert_eq!(y.shape(), [1, 1, 32, 32]);
        assert!(y.data().iter().all(|v| (10.0..=100.0).contains(v)));
    }
}
