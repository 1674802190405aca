use std::fs;
use std::path::Path;

use ept_core::train::{load_checkpoint, save_checkpoint, MetricsWriter, METRICS_HEADER};
use ept_core::{MolGraph, Trainer};

use crate::args::PretrainArgs;
use crate::failure::{usage, Classify, Result};
use crate::output::{build_config, load_shards, prepare, Manifest};

pub const METRICS: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint.ept";

pub fn is_checkpoint(name: &str) -> bool {
    name.starts_with("checkpoint") && name.ends_with(".ept")
}

pub fn owns(name: &str) -> bool {
    name == METRICS || is_checkpoint(name)
}

/// Drops metrics rows past `step`, so a resumed run appends exactly where its checkpoint left off.
pub fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = if i == 0 {
            line == METRICS_HEADER
        } else {
            line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step)
        };
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).data_err(format!("rewriting {}", path.display()))
}

pub fn run(a: PretrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(path) => {
            if a.config.has_overrides() {
                return Err(usage("--resume takes its configuration from the checkpoint; drop --config and override flags"));
            }
            Trainer::from_checkpoint(load_checkpoint(path).data_err(format!("loading {}", path.display()))?)
                .data_err("restoring trainer")?
        }
        None => Trainer::new(build_config(&a.config)?).usage_err("invalid configuration")?,
    };
    let (paths, graphs) = load_shards(&a.shards)?;
    prepare(&a.out, owns, a.resume.is_some())?;
    let out = &a.out.out;
    let metrics_path = out.join(METRICS);
    if a.resume.is_some() {
        truncate_metrics(&metrics_path, trainer.step())?;
    }
    Manifest::new("pretrain", trainer.config.train.seed, &paths).with_config(&trainer.config).write(out)?;

    let refs: Vec<&MolGraph> = graphs.iter().collect();
    let mut metrics = MetricsWriter::open(&metrics_path).data_err(format!("opening {}", metrics_path.display()))?;
    let epochs = trainer.config.train.epochs as u64;
    let every = a.checkpoint_every;
    let summaries = trainer
        .pretrain(&refs, Some(&mut metrics), |t, s| {
            println!(
                "epoch {} steps {} loss {:.6} loss_T {:.6} loss_R {:.6}",
                s.epoch,
                s.steps.len(),
                s.mean_loss,
                s.mean_loss_t,
                s.mean_loss_r
            );
            let done = t.epochs_done;
            if !s.truncated && done % every == 0 && done < epochs {
                save_checkpoint(&out.join(format!("checkpoint-epoch-{done:04}.ept")), &t.checkpoint())?;
            }
            Ok(())
        })
        .data_err("pretraining")?;
    let last = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&last, &trainer.checkpoint()).data_err(format!("writing {}", last.display()))?;
    println!("{} epochs, step {}, checkpoint {}", summaries.len(), trainer.step(), last.display());
    Ok(())
}
