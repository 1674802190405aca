use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, clip_global_norm, cosine_lr, AdamState, Checkpoint, MetricsWriter, Result, RunConfig, StepMetrics, TrainError, GRAD_CLIP_NORM};
use crate::autodiff::{Tape, Var};
use crate::denoise::{loss_on_tape, perturb_graph, IgSo3Table, NoiseMode, NoiseSample};
use crate::graph::{segment_graph, GraphBatch, MolGraph};
use crate::model::{force_head, forward, pooled_head, BoundParams, ForwardOptions, ModelParams, PoolMode};

/// Stream reserved for parameter initialization.
const INIT_STREAM: u64 = u64::MAX;
/// Stream reserved for per-epoch shuffles; the epoch number is mixed into the seed.
const SHUFFLE_STREAM: u64 = u64::MAX - 1;

/// Random stream `stream` of `seed`. Per-sample streams are the global sample index,
/// so results never depend on batching or evaluation order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: u64,
    pub steps: Vec<StepMetrics>,
    pub mean_loss: f64,
    pub mean_loss_t: f64,
    pub mean_loss_r: f64,
    /// The step budget ran out before the epoch finished.
    pub truncated: bool,
}

impl EpochSummary {
    fn from_steps(epoch: u64, steps: Vec<StepMetrics>, truncated: bool) -> Self {
        let n = steps.len().max(1) as f64;
        let mean = |f: fn(&StepMetrics) -> f64| steps.iter().map(f).sum::<f64>() / n;
        let (mean_loss, mean_loss_t, mean_loss_r) = (mean(|s| s.loss), mean(|s| s.loss_t), mean(|s| s.loss_r));
        Self { epoch, steps, mean_loss, mean_loss_t, mean_loss_r, truncated }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneOutcome {
    pub metrics: StepMetrics,
    pub mae: f64,
    /// Unweighted denoising term; zero when `lambda = 0`.
    pub aux: f64,
}

/// Parameters, optimizer and counters of one run.
pub struct Trainer {
    pub config: RunConfig,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub epochs_done: u64,
    pub opts: ForwardOptions,
    table: Option<IgSo3Table>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.model, &mut stream_rng(config.train.seed, INIT_STREAM));
        let optimizer = AdamState::new(&params);
        Self::assemble(config, params, optimizer, 0)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        Self::assemble(ck.config, ck.params, ck.optimizer, ck.epochs_done)
    }

    fn assemble(config: RunConfig, params: ModelParams, optimizer: AdamState, epochs_done: u64) -> Result<Self> {
        config.validate()?;
        let t = &config.train;
        let table = if t.sigma_r > 0.0 {
            Some(IgSo3Table::build_auto(t.sigma_r).map_err(|e| TrainError::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { config, params, optimizer, epochs_done, opts: ForwardOptions::default(), table })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            epochs_done: self.epochs_done,
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn table(&self) -> Option<&IgSo3Table> {
        self.table.as_ref()
    }

    fn budget_left(&self) -> bool {
        self.config.train.max_steps.is_none_or(|m| self.optimizer.step < m)
    }

    /// Schedule horizon: the step budget if set, else every epoch packed from unsegmented graphs.
    pub fn horizon(&self, dataset: &[&MolGraph]) -> Result<u64> {
        let per_epoch = batch_ranges(dataset, self.config.train.max_vertices)?.len() as u64;
        let full = per_epoch * self.config.train.epochs as u64;
        Ok(self.config.train.max_steps.map_or(full, |m| m.min(full)))
    }

    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(self.config.train.seed ^ self.epochs_done.wrapping_mul(0x9E37_79B9_7F4A_7C15), SHUFFLE_STREAM));
        order
    }

    /// Segments proteins and perturbs one graph with its own stream; edges are re-typed on the noisy coordinates.
    pub fn noisy_copy(&self, g: &MolGraph, mode: NoiseMode, stream: u64) -> (MolGraph, NoiseSample) {
        let t = &self.config.train;
        let thresholds = self.config.model.thresholds();
        let mut rng = stream_rng(t.seed, stream);
        let seg = segment_graph(g, t.segment_residues, thresholds, &mut rng);
        let sample = perturb_graph(&seg, mode, t.sigma_t, self.table.as_ref(), &mut rng);
        let noisy = seg.with_coords(sample.perturbed.clone(), thresholds);
        (noisy, sample)
    }

    fn denoise_terms(&self, tape: &mut Tape, p: &BoundParams, graphs: &[MolGraph], samples: &[NoiseSample], mode: NoiseMode) -> Result<(Var, Var, Option<Var>)> {
        let batch = GraphBatch::from_graphs(graphs);
        let layers = forward(tape, p, &self.config.model, &batch, self.opts)?;
        let last = *layers.last().expect("embedding state");
        let forces = force_head(tape, p, &self.config.model, last, &batch)?;
        let l = loss_on_tape(tape, forces, &batch, samples, mode)?;
        Ok((l.total, l.translation, l.rotation))
    }

    /// Backward, clip and Adam update; returns learning rate, norm before clipping and whether clipping fired.
    fn apply(&mut self, tape: &Tape, p: &BoundParams, loss: Var, horizon: u64) -> Result<(f64, f64, bool)> {
        let grads = tape.grad(loss)?;
        let mut g = p.collect(&grads, tape);
        let norm = clip_global_norm(&mut g, GRAD_CLIP_NORM);
        let t = &self.config.train;
        let lr = cosine_lr(self.optimizer.step, horizon, t.lr, t.min_lr);
        let mut params = self.params.clone();
        adam_step(&mut params, &g, &mut self.optimizer, lr)?;
        self.params = params;
        Ok((lr, norm, norm > GRAD_CLIP_NORM))
    }

    /// One denoising step on `indices` of `dataset` in epoch-global stream space.
    pub fn pretrain_step(&mut self, dataset: &[&MolGraph], indices: &[usize], horizon: u64, batch_id: usize) -> Result<StepMetrics> {
        let start = Instant::now();
        let mode = self.config.train.mode;
        let n = dataset.len() as u64;
        let (graphs, samples): (Vec<_>, Vec<_>) =
            indices.iter().map(|&i| self.noisy_copy(dataset[i], mode, self.epochs_done * n + i as u64)).unzip();
        let params = self.params.clone();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let (total, lt, lr_var) = self.denoise_terms(&mut tape, &p, &graphs, &samples, mode)?;
        let loss = tape.value(total).item();
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { batch: batch_id, step: self.optimizer.step });
        }
        let loss_t = tape.value(lt).item();
        let loss_r = lr_var.map_or(0.0, |v| tape.value(v).item());
        let (lr, grad_norm, clipped) = self.apply(&tape, &p, total, horizon)?;
        Ok(StepMetrics { step: self.optimizer.step, lr, loss, loss_t, loss_r, grad_norm, clipped, wall_ms: elapsed_ms(start) })
    }

    pub fn pretrain_epoch(&mut self, dataset: &[&MolGraph], horizon: u64, mut metrics: Option<&mut MetricsWriter>) -> Result<EpochSummary> {
        let order = self.epoch_order(dataset.len());
        let shuffled: Vec<&MolGraph> = order.iter().map(|&i| dataset[i]).collect();
        let mut steps = Vec::new();
        let mut truncated = false;
        for (b, range) in batch_ranges(&shuffled, self.config.train.max_vertices)?.into_iter().enumerate() {
            if !self.budget_left() {
                truncated = true;
                break;
            }
            let m = self.pretrain_step(dataset, &order[range], horizon, b)?;
            if let Some(w) = metrics.as_deref_mut() {
                w.write(&m)?;
            }
            steps.push(m);
        }
        if let Some(w) = metrics {
            w.flush()?;
        }
        let epoch = self.epochs_done;
        if !truncated {
            self.epochs_done += 1;
        }
        Ok(EpochSummary::from_steps(epoch, steps, truncated))
    }

    /// `mean |prediction − label| + λ·L_block-C`, the denoising term on a freshly perturbed copy.
    pub fn finetune_step(&mut self, dataset: &[&MolGraph], labels: &[f64], indices: &[usize], pool: PoolMode, horizon: u64) -> Result<FinetuneOutcome> {
        let start = Instant::now();
        let lambda = self.config.train.lambda;
        let params = self.params.clone();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let clean: Vec<MolGraph> = indices.iter().map(|&i| dataset[i].clone()).collect();
        let batch = GraphBatch::from_graphs(&clean);
        let layers = forward(&mut tape, &p, &self.config.model, &batch, self.opts)?;
        let h = layers.last().expect("embedding state").h;
        let pred = pooled_head(&mut tape, &p, h, &batch, pool)?;
        let target: Vec<f64> = indices.iter().map(|&i| labels[i]).collect();
        let target = tape.constant(crate::Tensor::new(vec![indices.len(), 1], target)?);
        let diff = tape.sub(pred, target)?;
        let abs = tape.abs(diff);
        let mae_var = tape.mean(abs);
        let mae = tape.value(mae_var).item();
        let (total, aux) = if lambda > 0.0 {
            let n = dataset.len() as u64;
            let (graphs, samples): (Vec<_>, Vec<_>) =
                indices.iter().map(|&i| self.noisy_copy(dataset[i], NoiseMode::BlockC, self.epochs_done * n + i as u64)).unzip();
            let (lc, _, _) = self.denoise_terms(&mut tape, &p, &graphs, &samples, NoiseMode::BlockC)?;
            let aux = tape.value(lc).item();
            let weighted = tape.scale(lc, lambda);
            (tape.add(mae_var, weighted)?, aux)
        } else {
            (mae_var, 0.0)
        };
        let loss = tape.value(total).item();
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { batch: 0, step: self.optimizer.step });
        }
        let (lr, grad_norm, clipped) = self.apply(&tape, &p, total, horizon)?;
        let metrics = StepMetrics { step: self.optimizer.step, lr, loss, loss_t: mae, loss_r: loss - mae, grad_norm, clipped, wall_ms: elapsed_ms(start) };
        Ok(FinetuneOutcome { metrics, mae, aux })
    }

    pub fn finetune_epoch(&mut self, dataset: &[&MolGraph], labels: &[f64], pool: PoolMode, horizon: u64, mut metrics: Option<&mut MetricsWriter>) -> Result<EpochSummary> {
        if labels.len() != dataset.len() {
            return Err(TrainError::Data(format!("{} labels for {} graphs", labels.len(), dataset.len())));
        }
        let order = self.epoch_order(dataset.len());
        let shuffled: Vec<&MolGraph> = order.iter().map(|&i| dataset[i]).collect();
        let mut steps = Vec::new();
        let mut truncated = false;
        for range in batch_ranges(&shuffled, self.config.train.max_vertices)? {
            if !self.budget_left() {
                truncated = true;
                break;
            }
            let out = self.finetune_step(dataset, labels, &order[range], pool, horizon)?;
            if let Some(w) = metrics.as_deref_mut() {
                w.write(&out.metrics)?;
            }
            steps.push(out.metrics);
        }
        if let Some(w) = metrics {
            w.flush()?;
        }
        let epoch = self.epochs_done;
        if !truncated {
            self.epochs_done += 1;
        }
        Ok(EpochSummary::from_steps(epoch, steps, truncated))
    }

    /// Runs epochs until `epochs` are done or the step budget ends.
    pub fn pretrain(&mut self, dataset: &[&MolGraph], mut metrics: Option<&mut MetricsWriter>, mut on_epoch: impl FnMut(&Trainer, &EpochSummary) -> Result<()>) -> Result<Vec<EpochSummary>> {
        let horizon = self.horizon(dataset)?;
        let mut out = Vec::new();
        while self.epochs_done < self.config.train.epochs as u64 && self.budget_left() {
            let s = self.pretrain_epoch(dataset, horizon, metrics.as_deref_mut())?;
            on_epoch(self, &s)?;
            let stop = s.truncated;
            out.push(s);
            if stop {
                break;
            }
        }
        Ok(out)
    }
}

/// Greedy packing by real atom count, mirroring [`crate::graph::batch`].
fn batch_ranges(graphs: &[&MolGraph], max_vertices: usize) -> Result<Vec<std::ops::Range<usize>>> {
    let mut out = Vec::new();
    let (mut start, mut total) = (0, 0);
    for (i, g) in graphs.iter().enumerate() {
        let n = g.n_atoms();
        if n > max_vertices {
            return Err(TrainError::Data(format!("graph with {n} atoms exceeds max_vertices {max_vertices}")));
        }
        if total + n > max_vertices {
            out.push(start..i);
            start = i;
            total = 0;
        }
        total += n;
    }
    if start < graphs.len() {
        out.push(start..graphs.len());
    }
    Ok(out)
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::model::ModelConfig;
    use crate::molio::RawStructure;
    use crate::train::{read_checkpoint, write_checkpoint, TrainConfig};
    use crate::verify::toy::toy_molecules;

    fn dataset(n: usize) -> Vec<MolGraph> {
        toy_molecules(n, 11)
            .into_iter()
            .map(|m| build_graph(&RawStructure::Molecule(m), ModelConfig::tiny().thresholds()).unwrap())
            .collect()
    }

    fn config(lr: f64) -> RunConfig {
        RunConfig {
            model: ModelConfig::tiny(),
            train: TrainConfig { lr, min_lr: lr / 10.0, epochs: 3, max_vertices: 30, sigma_t: 0.1, seed: 5, ..Default::default() },
        }
    }

    fn bits(s: &[EpochSummary]) -> Vec<(u64, u64, u64, u64, u64, u64)> {
        s.iter().flat_map(|e| e.steps.iter().map(StepMetrics::deterministic_part)).collect()
    }

    #[test]
    fn runs_replay_bit_for_bit() {
        let data = dataset(6);
        let refs: Vec<&MolGraph> = data.iter().collect();
        let run = || Trainer::new(config(1e-3)).unwrap().pretrain(&refs, None, |_, _| Ok(())).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 3);
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_lr_repeats_epoch_statistics_shape() {
        let data = dataset(4);
        let refs: Vec<&MolGraph> = data.iter().collect();
        let mut t = Trainer::new(config(0.0)).unwrap();
        let before = t.params.clone();
        let s = t.pretrain(&refs, None, |_, _| Ok(())).unwrap();
        assert_eq!(t.params, before);
        // Fresh noise each epoch: only parameter-independent structure repeats.
        assert!(s.iter().all(|e| e.steps.iter().all(|m| m.lr == 0.0)));
    }

    #[test]
    fn components_add_and_lr_follows_cosine() {
        let data = dataset(6);
        let refs: Vec<&MolGraph> = data.iter().collect();
        let mut t = Trainer::new(config(1e-3)).unwrap();
        let horizon = t.horizon(&refs).unwrap();
        let s = t.pretrain(&refs, None, |_, _| Ok(())).unwrap();
        for m in s.iter().flat_map(|e| &e.steps) {
            assert_eq!(m.loss, m.loss_t + m.loss_r);
            assert_eq!(m.lr, cosine_lr(m.step - 1, horizon, 1e-3, 1e-4));
        }
        let steps: Vec<u64> = s.iter().flat_map(|e| e.steps.iter().map(|m| m.step)).collect();
        assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = dataset(6);
        let refs: Vec<&MolGraph> = data.iter().collect();
        let mut straight = Trainer::new(config(1e-3)).unwrap();
        let all = straight.pretrain(&refs, None, |_, _| Ok(())).unwrap();

        let mut cfg = config(1e-3);
        let mut first = Trainer::new(cfg.clone()).unwrap();
        let horizon = first.horizon(&refs).unwrap();
        first.pretrain_epoch(&refs, horizon, None).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &first.checkpoint()).unwrap();
        let mut resumed = Trainer::from_checkpoint(read_checkpoint(&bytes).unwrap()).unwrap();
        cfg.train.epochs = 3;
        assert_eq!(resumed.config, cfg);
        let rest = resumed.pretrain(&refs, None, |_, _| Ok(())).unwrap();
        assert_eq!(bits(&all[1..]), bits(&rest));
        assert_eq!(resumed.params, straight.params);
    }

    #[test]
    fn step_budget_truncates() {
        let data = dataset(6);
        let refs: Vec<&MolGraph> = data.iter().collect();
        let mut cfg = config(1e-3);
        cfg.train.max_steps = Some(2);
        let mut t = Trainer::new(cfg).unwrap();
        let s = t.pretrain(&refs, None, |_, _| Ok(())).unwrap();
        assert_eq!(t.step(), 2);
        assert!(s.last().unwrap().truncated);
    }

    #[test]
    fn finetune_without_lambda_is_mae() {
        let data = dataset(3);
        let refs: Vec<&MolGraph> = data.iter().collect();
        let labels: Vec<f64> = data.iter().map(|g| g.n_atoms() as f64).collect();
        let mut cfg = config(1e-3);
        cfg.train.lambda = 0.0;
        let mut t = Trainer::new(cfg).unwrap();
        let out = t.finetune_step(&refs, &labels, &[0, 1, 2], PoolMode::Atom, 10).unwrap();
        assert_eq!(out.metrics.loss, out.mae);
        assert_eq!(out.aux, 0.0);

        let mut cfg = config(1e-3);
        cfg.train.lambda = 0.5;
        let mut t = Trainer::new(cfg).unwrap();
        let out = t.finetune_step(&refs, &labels, &[0, 1, 2], PoolMode::Atom, 10).unwrap();
        assert!(out.aux > 0.0);
        assert!((out.metrics.loss - (out.mae + 0.5 * out.aux)).abs() <= 1e-12 * out.metrics.loss);
    }
}
