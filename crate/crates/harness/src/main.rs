use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rhomap::config::{ExperimentConfig, ModelKind, Profile};
use rhomap::manifest::RunManifest;
use rhomap::pipeline::prepare_subject;
use rhomap::report::{emit_report, summarize_rows_files, summary_text, write_rows_csv, write_summary_csv};
use rhomap::runner::Runner;
use rhomap::{run_experiment1, run_experiment2, run_experiment3, HarnessError, Result};
use rhomap_core::metrics::{evaluate, ReportRow};
use rhomap_core::volume::{load_mask, load_volume, save_mask, save_volume_as, Dtype};
use rhomap_dl::{TrainedMlp, TrainedUNet};

#[derive(Parser)]
#[command(name = "rhomap", version, about = "Two-image T1rho mapping experiments on synthetic cohorts")]
struct Cli {
    /// JSON or TOML file merged over the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Single-threaded reference mode.
    #[arg(long, global = true)]
    reference: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic cohort and write its volumes.
    Phantom,
    /// Four-point ground truth and two-point fits for every combo.
    FitNlls {
        /// Only this subject (e.g. sub-003).
        #[arg(long)]
        subject: Option<String>,
    },
    /// Train one learned model on the training folds of `fold`.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        combo: String,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Predict a T1rho map for one subject with a saved checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        combo: String,
        #[arg(long)]
        subject: String,
    },
    /// Score a predicted map against a reference map over an ROI.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        roi: PathBuf,
    },
    /// Two-point NLLS against the best learned model per combo.
    Exp1,
    /// Unmasked U-Net against the MLP.
    Exp2,
    /// Masked against unmasked U-Net.
    Exp3,
    /// Rebuild the summary from one or more row CSVs.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        rows: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, cli.profile)?,
        None => ExperimentConfig::profile(cli.profile.unwrap_or_default()),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if cli.reference {
        cfg.parallel = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| rhomap_core::Error::io(dir, e).into())
}

fn subject_index(cfg: &ExperimentConfig, id: &str) -> Result<usize> {
    (0..cfg.phantom.n_subjects)
        .find(|&i| rhomap_core::phantom::PhantomSpec::subject_id(i) == id)
        .ok_or_else(|| HarnessError::Usage(format!("unknown subject {id}")))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let exec = cfg.exec();
    let out = cli.out.clone();
    create_dir(&out)?;
    let started = Instant::now();
    let name = match &cli.cmd {
        Cmd::Phantom => "phantom",
        Cmd::FitNlls { .. } => "fit-nlls",
        Cmd::Train { .. } => "train",
        Cmd::Infer { .. } => "infer",
        Cmd::Evaluate { .. } => "evaluate",
        Cmd::Exp1 => "exp1",
        Cmd::Exp2 => "exp2",
        Cmd::Exp3 => "exp3",
        Cmd::Report { .. } => "report",
    };
    let mut manifest = RunManifest::new(name, &cfg);
    let mut files = Vec::new();

    match cli.cmd {
        Cmd::Phantom => {
            for i in 0..cfg.phantom.n_subjects {
                let b = rhomap_core::phantom::generate_phantom_with(&cfg.phantom, i, exec)?;
                let dir = out.join("phantom").join(&b.subject_id);
                let mut save = |name: &str, v: &rhomap_core::Volume3D| -> Result<()> {
                    let p = dir.join(format!("{name}.vol"));
                    save_volume_as(v, &p, Dtype::F32)?;
                    files.push(p);
                    Ok(())
                };
                save("truth_t1rho", &b.truth_t1rho)?;
                save("i0_truth", &b.i0_truth)?;
                save("pd_surrogate", &b.pd_surrogate)?;
                for (t, v) in b.schedule.tsl_ms().iter().zip(&b.weighted) {
                    save(&format!("tsl_{:03}", *t as u32), v)?;
                }
                let p = dir.join("roi.mask");
                save_mask(&b.roi, b.truth_t1rho.spacing(), &p)?;
                files.push(p);
            }
        }
        Cmd::FitNlls { subject } => {
            let indices: Vec<usize> = match subject {
                Some(id) => vec![subject_index(&cfg, &id)?],
                None => (0..cfg.phantom.n_subjects).collect(),
            };
            let mut rows = Vec::new();
            for i in indices {
                let s = prepare_subject(&cfg, i, exec)?;
                let dir = out.join("nlls").join(s.id());
                let p = dir.join("gt_t1rho.vol");
                save_volume_as(&s.ground_truth.t1rho_map, &p, Dtype::F64)?;
                files.push(p);
                let p = dir.join("gt_valid.mask");
                save_mask(&s.ground_truth.valid, s.ground_truth.t1rho_map.spacing(), &p)?;
                files.push(p);
                for combo in &cfg.combos {
                    let fit = s.fit_two_point(combo, &cfg)?;
                    let p = dir.join(format!("nlls_2pt_{}.vol", combo.id));
                    save_volume_as(&fit.t1rho_map, &p, Dtype::F64)?;
                    files.push(p);
                    let m = evaluate(&fit.t1rho_map, &s.ground_truth.t1rho_map, &s.bundle.roi)?;
                    rows.push(ReportRow::new(s.id(), 0, &combo.id, "nlls_2pt", m));
                }
            }
            let p = out.join("nlls_rows.csv");
            write_rows_csv(&p, &rows)?;
            files.push(p);
        }
        Cmd::Train { model, combo, fold } => {
            let (ci, _) = cfg.combo(&combo)?;
            let runner = Runner::new(cfg.clone())?;
            if fold >= runner.folds.n_folds {
                return Err(HarnessError::Usage(format!("fold must be below {}", runner.folds.n_folds)));
            }
            let trained = runner.train_fold(ci, model, fold)?;
            let stem = format!("{}_{}_fold{fold}", model.id(), combo);
            let p = out.join(format!("{stem}.ckpt"));
            trained.save(&p)?;
            files.push(p);
            let p = out.join(format!("{stem}_log.csv"));
            let f = std::fs::File::create(&p).map_err(|e| rhomap_core::Error::io(&p, e))?;
            trained.log().write_csv(f)?;
            files.push(p);
        }
        Cmd::Infer {
            checkpoint,
            combo,
            subject,
        } => {
            let (_, c) = cfg.combo(&combo)?;
            let s = prepare_subject(&cfg, subject_index(&cfg, &subject)?, exec)?;
            let (i0, ik) = s.combo_inputs(c);
            let ck = rhomap_nn::checkpoint::load(&checkpoint)?;
            let map = match ck.metadata["model"].as_str() {
                Some("unet") => TrainedUNet::load(&checkpoint)?.predict(i0, ik, &s.bundle.roi)?,
                Some("mlp") => TrainedMlp::load(&checkpoint)?.predict(i0, ik, &s.bundle.roi)?,
                other => return Err(HarnessError::Usage(format!("checkpoint model {other:?} not recognised"))),
            };
            let p = out.join(format!("pred_{subject}_{combo}.vol"));
            save_volume_as(&map, &p, Dtype::F64)?;
            files.push(p);
            let m = evaluate(&map, &s.ground_truth.t1rho_map, &s.bundle.roi)?;
            println!(
                "{subject} {combo}: MAE {:.3} ms  MAPE {:.3}%  RE {:.3} ms  RPE {:.3}%",
                m.mae_ms, m.mape_pct, m.re_ms, m.rpe_pct
            );
        }
        Cmd::Evaluate { pred, truth, roi } => {
            let m = evaluate(&load_volume(&pred)?, &load_volume(&truth)?, &load_mask(&roi)?)?;
            println!(
                "MAE {:.6} ms  MAPE {:.6}%  RE {:.6} ms  RPE {:.6}%",
                m.mae_ms, m.mape_pct, m.re_ms, m.rpe_pct
            );
            let p = out.join("evaluate_rows.csv");
            write_rows_csv(&p, &[ReportRow::new("input", 0, "input", "input", m)])?;
            files.push(p);
        }
        Cmd::Exp1 | Cmd::Exp2 | Cmd::Exp3 => {
            let t = Instant::now();
            let mut runner = Runner::new(cfg.clone())?;
            manifest.time("prepare_cohort", t.elapsed().as_secs_f64());
            let t = Instant::now();
            let rep = match cli.cmd {
                Cmd::Exp1 => run_experiment1(&mut runner)?,
                Cmd::Exp2 => run_experiment2(&mut runner)?,
                _ => run_experiment3(&mut runner)?,
            };
            manifest.time(name, t.elapsed().as_secs_f64());
            for r in &runner.training {
                manifest.time(&format!("train {} {} fold {}", r.combo_id, r.model_id, r.fold), r.seconds);
            }
            manifest.warnings = runner.warnings.clone();
            files.extend(emit_report(std::slice::from_ref(&rep), &out)?);
            print!("{}", std::fs::read_to_string(out.join(format!("{name}_summary.txt"))).unwrap_or_default());
        }
        Cmd::Report { rows } => {
            let summary = summarize_rows_files(&rows)?;
            let p = out.join("report_summary.csv");
            write_summary_csv(&p, &summary)?;
            files.push(p);
            let text = summary_text(&summary);
            let p = out.join("report_summary.txt");
            std::fs::write(&p, &text).map_err(|e| rhomap_core::Error::io(&p, e))?;
            files.push(p);
            print!("{text}");
        }
    }
    manifest.time("total", started.elapsed().as_secs_f64());
    manifest.add_files(&out, &files)?;
    manifest.write(&out)?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
