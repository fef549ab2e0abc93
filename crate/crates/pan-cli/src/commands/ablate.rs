//! `pan ablate`: the variant grid {full, w/o calibration, w/o GC, w/o TC,
//! w/o PAN} × sampling {guided, even} × seeds, with a comparison CSV.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pan_core::synth::Split;
use pan_core::trainer::{evaluate, fit};

use crate::commands::echo_config;
use crate::config::RunConfig;
use crate::dataset::DiskDataset;
use crate::error::{CliError, Result};

pub const VARIANTS: &[&str] = &["full", "no-calibration", "no-gc", "no-tc", "no-pan"];
pub const SAMPLINGS: &[&str] = &["guided", "even"];

struct Job {
    variant: &'static str,
    sampling: &'static str,
    seed: u64,
}

struct RowOut {
    line: String,
}

pub fn run(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<()> {
    cfg.check_model_matches_data()?;
    echo_config(cfg, out_dir)?;
    let seeds = cfg.ablate_seeds()?;
    let workers = cfg.get_usize("ablate.workers")?.max(1);
    let epochs = cfg.get_usize("ablate.epochs")?;
    let spec = cfg.synth_spec()?;
    let temporal_classes: Vec<usize> = (spec.n_spatial()..spec.classes).collect();
    let spatial_classes: Vec<usize> = (0..spec.n_spatial()).collect();

    let train_data = DiskDataset::open(data_dir, Split::Train)?;
    let val_data = DiskDataset::open(data_dir, Split::Val)?;

    let mut jobs = Vec::new();
    for &variant in VARIANTS {
        for &sampling in SAMPLINGS {
            for &seed in &seeds {
                jobs.push(Job {
                    variant,
                    sampling,
                    seed,
                });
            }
        }
    }

    let results: Vec<Mutex<Option<RowOut>>> = (0..jobs.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let run_job = |job: &Job| -> Result<RowOut> {
        let mut overrides = vec![
            ("model.sampling".to_string(), job.sampling.to_string()),
            ("train.seed".to_string(), job.seed.to_string()),
            ("train.epochs".to_string(), epochs.to_string()),
            ("model.no_calibration".to_string(), "false".to_string()),
            ("model.no_gc".to_string(), "false".to_string()),
            ("model.no_tc".to_string(), "false".to_string()),
            ("model.no_pan".to_string(), "false".to_string()),
        ];
        match job.variant {
            "full" => {}
            "no-calibration" => overrides.push(("model.no_calibration".into(), "true".into())),
            "no-gc" => overrides.push(("model.no_gc".into(), "true".into())),
            "no-tc" => overrides.push(("model.no_tc".into(), "true".into())),
            "no-pan" => overrides.push(("model.no_pan".into(), "true".into())),
            other => return Err(CliError::config(format!("unknown variant {other}"))),
        }
        let run_cfg = RunConfig::parse(&cfg.resolved_text(), &overrides)?;
        let model_cfg = run_cfg.model_config()?;
        let train_cfg = run_cfg.train_config()?;
        let result = fit(&model_cfg, &train_cfg, &train_data, &val_data, |_| {})?;
        let outcome = evaluate(&result.model, &val_data, train_cfg.batch_size)?;
        let mut line = String::new();
        let _ = write!(
            line,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            job.variant,
            job.sampling,
            job.seed,
            outcome.confusion.top1(),
            outcome.confusion.mean_class_accuracy(),
            outcome.confusion.subset_top1(&temporal_classes),
            outcome.confusion.subset_top1(&spatial_classes),
        );
        Ok(RowOut { line })
    };

    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= jobs.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                let job = &jobs[idx];
                if super::verbose() {
                    eprintln!(
                        "ablate: {} / {} seed {} ({}/{})",
                        job.variant,
                        job.sampling,
                        job.seed,
                        idx + 1,
                        jobs.len()
                    );
                }
                match run_job(job) {
                    Ok(row) => *results[idx].lock().unwrap() = Some(row),
                    Err(e) => {
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let mut csv = String::from("variant,sampling,seed,val_top1,val_mca,temporal_top1,spatial_top1\n");
    for slot in &results {
        let row = slot
            .lock()
            .unwrap()
            .take()
            .ok_or_else(|| CliError::numeric("ablation job produced no result"))?;
        csv.push_str(&row.line);
        csv.push('\n');
    }
    let path = out_dir.join("ablation.csv");
    std::fs::write(&path, csv)?;
    println!(
        "ran {} ablation jobs ({} workers) -> {}",
        jobs.len(),
        workers,
        path.display()
    );
    Ok(())
}
