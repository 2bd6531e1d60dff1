//! Cross-validated predictions for every (combo, model), computed once per
//! runner and shared by the experiments.

use std::collections::BTreeMap;
use std::time::Instant;

use rhomap_core::exec::derive_seed;
use rhomap_core::metrics::{evaluate, make_folds, FoldPlan, ReportRow};
use rhomap_core::{Exec, RoiMask, Volume3D};
use rhomap_dl::{train_mlp, train_unet, LossMaskMode, SubjectData, TrainLog, TrainedMlp, TrainedUNet};

use crate::config::{Combo, ExperimentConfig, ModelKind};
use crate::pipeline::{prepare_cohort, Cohort};
use crate::{HarnessError, Result};

#[derive(Debug, Clone)]
pub struct Prediction {
    pub subject_id: String,
    pub fold: usize,
    pub map: Volume3D,
}

#[derive(Debug, Clone)]
pub struct TrainingRecord {
    pub combo_id: String,
    pub model_id: String,
    pub fold: usize,
    pub log: TrainLog,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    UNet(TrainedUNet),
    Mlp(TrainedMlp),
}

impl TrainedModel {
    pub fn predict(&self, i0: &Volume3D, ik: &Volume3D, roi: &RoiMask) -> Result<Volume3D> {
        Ok(match self {
            TrainedModel::UNet(m) => m.predict(i0, ik, roi)?,
            TrainedModel::Mlp(m) => m.predict(i0, ik, roi)?,
        })
    }

    pub fn log(&self) -> &TrainLog {
        match self {
            TrainedModel::UNet(m) => &m.log,
            TrainedModel::Mlp(m) => &m.log,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        match self {
            TrainedModel::UNet(m) => m.save(path)?,
            TrainedModel::Mlp(m) => m.save(path)?,
        }
        Ok(())
    }
}

/// Trains one learned model on `subjects`.
pub fn train_model(cfg: &ExperimentConfig, model: ModelKind, subjects: &[SubjectData], seed: u64, exec: Exec) -> Result<TrainedModel> {
    match model {
        ModelKind::UnetUnmasked | ModelKind::UnetMasked => {
            let mut ucfg = cfg.unet.clone();
            ucfg.loss_mask_mode = if model == ModelKind::UnetMasked {
                LossMaskMode::RoiMasked
            } else {
                LossMaskMode::Unmasked
            };
            let tcfg = rhomap_dl::TrainConfig {
                seed,
                ..cfg.unet_train.clone()
            };
            Ok(TrainedModel::UNet(train_unet(subjects, &ucfg, &tcfg, exec)?))
        }
        ModelKind::Mlp => {
            let tcfg = rhomap_dl::TrainConfig {
                seed,
                ..cfg.mlp_train.clone()
            };
            Ok(TrainedModel::Mlp(train_mlp(subjects, &cfg.mlp, &tcfg, exec)?))
        }
        ModelKind::Nlls2pt => Err(HarnessError::Usage("nlls_2pt is not trained".into())),
    }
}

pub struct Runner {
    pub cfg: ExperimentConfig,
    pub cohort: Cohort,
    pub folds: FoldPlan,
    exec: Exec,
    cache: BTreeMap<(String, ModelKind), Vec<Prediction>>,
    pub training: Vec<TrainingRecord>,
    pub warnings: Vec<String>,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let cohort = prepare_cohort(&cfg, cfg.exec())?;
        Self::from_cohort(cfg, cohort)
    }

    pub fn from_cohort(cfg: ExperimentConfig, cohort: Cohort) -> Result<Self> {
        let folds = make_folds(&cohort.ids(), cfg.seed)?;
        folds.check_hygiene()?;
        Ok(Self {
            exec: cfg.exec(),
            cfg,
            cohort,
            folds,
            cache: BTreeMap::new(),
            training: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn training_seed(&self, combo_idx: usize, model: ModelKind, fold: usize) -> u64 {
        derive_seed(self.cfg.seed, 1000 + combo_idx as u64 * 100 + model.code() * 10 + fold as u64)
    }

    fn subject_data(&self, combo: &Combo, ids: &[&str]) -> Result<Vec<SubjectData>> {
        ids.iter()
            .map(|id| self.cohort.get(id).expect("fold ids come from the cohort").subject_data(combo))
            .collect()
    }

    /// Trains the model of `fold` on the other folds.
    pub fn train_fold(&self, combo_idx: usize, model: ModelKind, fold: usize) -> Result<TrainedModel> {
        let combo = &self.cfg.combos[combo_idx];
        let train_ids = self.folds.train_ids(fold);
        if train_ids.iter().any(|t| self.folds.test_ids(fold).contains(t)) {
            return Err(HarnessError::Usage(format!("fold {fold}: subject in both train and test")));
        }
        let data = self.subject_data(combo, &train_ids)?;
        train_model(&self.cfg, model, &data, self.training_seed(combo_idx, model, fold), self.exec)
    }

    /// Held-out predictions for every subject, in cohort order.
    pub fn predictions(&mut self, combo_idx: usize, model: ModelKind) -> Result<&[Prediction]> {
        let combo = self.cfg.combos[combo_idx].clone();
        let key = (combo.id.clone(), model);
        if !self.cache.contains_key(&key) {
            let preds = if model.is_learned() {
                self.learned_predictions(combo_idx, model)?
            } else {
                self.cohort
                    .subjects
                    .iter()
                    .map(|s| {
                        Ok(Prediction {
                            subject_id: s.id().to_string(),
                            fold: self.folds.fold_of(s.id()).expect("every subject has a fold"),
                            map: s.fit_two_point(&combo, &self.cfg)?.t1rho_map,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            self.cache.insert(key.clone(), preds);
        }
        Ok(&self.cache[&key])
    }

    fn learned_predictions(&mut self, combo_idx: usize, model: ModelKind) -> Result<Vec<Prediction>> {
        let combo = self.cfg.combos[combo_idx].clone();
        let mut by_subject: BTreeMap<String, Prediction> = BTreeMap::new();
        for fold in 0..self.folds.n_folds {
            let t = Instant::now();
            let trained = self.train_fold(combo_idx, model, fold)?;
            let log = trained.log().clone();
            if log.diverged {
                let msg = format!("{} {} fold {fold}: training diverged (non-finite loss)", combo.id, model.id());
                ::log::warn!("{msg}");
                self.warnings.push(msg);
            }
            for id in self.folds.test_ids(fold) {
                let s = self.cohort.get(id).expect("fold ids come from the cohort");
                let (i0, ik) = s.combo_inputs(&combo);
                let map = trained.predict(i0, ik, &s.bundle.roi)?;
                by_subject.insert(
                    id.to_string(),
                    Prediction {
                        subject_id: id.to_string(),
                        fold,
                        map,
                    },
                );
            }
            self.training.push(TrainingRecord {
                combo_id: combo.id.clone(),
                model_id: model.id().into(),
                fold,
                log,
                seconds: t.elapsed().as_secs_f64(),
            });
            ::log::info!(
                "{} {} fold {fold} trained in {:.1}s",
                combo.id,
                model.id(),
                t.elapsed().as_secs_f64()
            );
        }
        Ok(self
            .cohort
            .ids()
            .into_iter()
            .map(|id| by_subject.remove(&id).expect("every subject is tested once"))
            .collect())
    }

    /// Metrics of the held-out predictions against the four-point ground truth.
    pub fn rows(&mut self, combo_idx: usize, model: ModelKind) -> Result<Vec<ReportRow>> {
        let combo_id = self.cfg.combos[combo_idx].id.clone();
        let preds = self.predictions(combo_idx, model)?.to_vec();
        preds
            .iter()
            .map(|p| {
                let s = self.cohort.get(&p.subject_id).expect("prediction ids come from the cohort");
                let m = evaluate(&p.map, &s.ground_truth.t1rho_map, &s.bundle.roi)?;
                Ok(ReportRow::new(&p.subject_id, p.fold, &combo_id, model.id(), m))
            })
            .collect()
    }
}
