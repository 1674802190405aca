use std::fs;

use ept_core::train::{load_checkpoint, save_checkpoint, MetricsWriter};
use ept_core::{MolGraph, Trainer};

use crate::args::FinetuneArgs;
use crate::commands::pretrain::{owns, FINAL_CHECKPOINT, METRICS};
use crate::failure::{data, Classify, Result};
use crate::output::{build_config, load_shards, prepare, Manifest};

fn read_labels(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse().map_err(|_| data(format!("labels line {}: {:?} is not a number", i + 1, l.trim()))))
        .collect()
}

pub fn run(a: FinetuneArgs) -> Result<()> {
    let config = build_config(&a.config)?;
    let mut trainer = Trainer::new(config).usage_err("invalid configuration")?;
    if let Some(path) = &a.init {
        let ck = load_checkpoint(path).data_err(format!("loading {}", path.display()))?;
        if ck.config.model != trainer.config.model {
            return Err(data(format!("{} was trained with a different model configuration", path.display())));
        }
        trainer.params = ck.params;
        trainer.optimizer = ept_core::train::AdamState::new(&trainer.params);
    }
    let (paths, graphs) = load_shards(&a.shards)?;
    let labels = match &a.labels {
        Some(p) => read_labels(&fs::read_to_string(p).data_err(format!("reading {}", p.display()))?)?,
        None => graphs.iter().map(|g| g.n_atoms() as f64).collect(),
    };
    if labels.len() != graphs.len() {
        return Err(data(format!("{} labels for {} graphs", labels.len(), graphs.len())));
    }
    prepare(&a.out, owns, false)?;
    let out = &a.out.out;
    Manifest::new("finetune", trainer.config.train.seed, &paths).with_config(&trainer.config).write(out)?;

    let refs: Vec<&MolGraph> = graphs.iter().collect();
    let metrics_path = out.join(METRICS);
    let mut metrics = MetricsWriter::open(&metrics_path).data_err(format!("opening {}", metrics_path.display()))?;
    let horizon = trainer.horizon(&refs).data_err("packing batches")?;
    let epochs = trainer.config.train.epochs as u64;
    let budget = trainer.config.train.max_steps.unwrap_or(u64::MAX);
    while trainer.epochs_done < epochs && trainer.step() < budget {
        let s = trainer
            .finetune_epoch(&refs, &labels, a.pool.into(), horizon, Some(&mut metrics))
            .data_err("finetuning")?;
        // In finetuning metrics, loss_T carries the MAE and loss_R the weighted denoising term.
        println!("epoch {} steps {} loss {:.6} mae {:.6}", s.epoch, s.steps.len(), s.mean_loss, s.mean_loss_t);
        if s.truncated {
            break;
        }
    }
    let last = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&last, &trainer.checkpoint()).data_err(format!("writing {}", last.display()))?;
    println!("step {}, checkpoint {}", trainer.step(), last.display());
    Ok(())
}
