//! Optimizers, schedules, the two training loops, evaluation, checkpoints.

pub mod checkpoint;
pub mod config;
pub mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bptt::{backward, unroll_forward};
use crate::data::{
    load_spike_events, MnistSequences, PermutationSpec, SequenceBatch, SequenceSource, SpikeSequences,
};
use crate::eprop::{argmax_rows, softmax, step_loss, EpropOptions, OnlineSession};
use crate::error::{Error, Result};
use crate::network::{decay_rng, Network};
use crate::tensor::Matrix;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{DatasetKind, OptimizerKind, Schedule, TrainConfig, TrainerKind};
pub use optim::{adam_step, clip_global_norm, lr_at, sgd_step, AdamState};

const EVAL_STREAM: u64 = 1 << 63;

pub fn build_network(cfg: &TrainConfig) -> Result<Network> {
    Network::init(&cfg.network_spec(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Decay stream of training batch `batch` in epoch `epoch`.
pub fn train_stream(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64) << 32) | batch as u64
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wallclock_s: f64,
    pub peak_stored_reals: usize,
    /// Batches whose gradient was rescaled by the norm clip.
    pub clipped: usize,
}

pub fn write_metrics_csv<W: Write>(rows: &[EpochMetrics], mut out: W) -> Result<()> {
    writeln!(out, "epoch,train_loss,train_acc,test_acc,wallclock_s,peak_stored_reals")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_acc, r.test_acc, r.wallclock_s, r.peak_stored_reals
        )?;
    }
    Ok(())
}

pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(n)),
        }
    }

    /// Updates the network in place and restores its invariants.
    pub fn apply(&mut self, net: &mut Network, grads: &[f64], lr: f64, mask: &[bool]) -> Result<()> {
        let mut params = net.to_vector();
        match self {
            Optimizer::Sgd => sgd_step(&mut params, grads, lr, mask),
            Optimizer::Adam(state) => adam_step(state, &mut params, grads, lr, mask),
        }
        net.set_from_vector(&params)?;
        net.project();
        Ok(())
    }
}

/// Loss, accuracy and memory of one pass over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    pub peak_stored_reals: usize,
    pub clipped: usize,
}

/// Owns the model and optimizer state for a run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: Network,
    pub optimizer: Optimizer,
    mask: Vec<bool>,
    eprop: EpropOptions,
}

fn batches(n: usize, batch_size: usize, order: &[usize]) -> Vec<Vec<usize>> {
    debug_assert_eq!(order.len(), n);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn correct(pred: &[usize], labels: &[usize]) -> usize {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count()
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = build_network(&cfg)?;
        Ok(Self::with_network(cfg, net))
    }

    pub fn with_network(cfg: TrainConfig, net: Network) -> Self {
        let couplings = cfg.train_couplings && cfg.trainer == TrainerKind::Bptt;
        let mask = net.trainable_mask(couplings);
        let optimizer = Optimizer::new(cfg.optimizer, net.num_params());
        let eprop = EpropOptions {
            trace_form: cfg.trace_form,
            ..EpropOptions::default()
        };
        Self {
            cfg,
            net,
            optimizer,
            mask,
            eprop,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[doc(hidden)]
    pub fn eprop_options_mut(&mut self) -> &mut EpropOptions {
        &mut self.eprop
    }

    fn order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut decay_rng(self.cfg.seed, (1 << 62) | epoch as u64));
        order
    }

    fn update(&mut self, mut grads: Vec<f64>, lr: f64) -> Result<bool> {
        let clipped = match self.cfg.clip_norm {
            Some(c) => clip_global_norm(&mut grads, &self.mask, c),
            None => false,
        };
        self.optimizer.apply(&mut self.net, &grads, lr, &self.mask)?;
        Ok(clipped)
    }

    pub fn train_epoch(&mut self, data: &dyn SequenceSource, epoch: usize) -> Result<EpochStats> {
        match self.cfg.trainer {
            TrainerKind::Eprop => self.train_epoch_online(data, epoch),
            TrainerKind::Bptt => self.train_epoch_bptt(data, epoch),
        }
    }

    /// Online pass: per batch, states and traces start from zero and the
    /// gradient is accumulated forward in time. The optimizer runs once per
    /// batch, or after every step with `update_per_step`.
    pub fn train_epoch_online(&mut self, data: &dyn SequenceSource, epoch: usize) -> Result<EpochStats> {
        let lr = lr_at(&self.cfg.schedule, self.cfg.lr0, epoch, self.cfg.epochs);
        let order = self.order(data.len(), epoch);
        let mut stats = EpochStats::default();
        let (mut loss_sum, mut hits) = (0.0, 0);
        for (bi, idx) in batches(data.len(), self.cfg.batch_size, &order).into_iter().enumerate() {
            let batch = data.batch(&idx)?;
            let mut session = OnlineSession::new(
                &self.net,
                &batch.labels,
                batch.t_len,
                self.cfg.seed,
                train_stream(epoch, bi),
                self.eprop,
            );
            for t in 0..batch.t_len {
                let l = session.step(&self.net, batch.step(t))?;
                if !l.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: bi,
                        step: t,
                    });
                }
                stats.peak_stored_reals = stats.peak_stored_reals.max(session.stored_reals());
                if self.cfg.update_per_step {
                    let g = session.grads().to_vector();
                    stats.clipped += usize::from(self.update(g, lr)?);
                    session.grads_mut().clear();
                }
            }
            if !self.cfg.update_per_step {
                let g = session.grads().to_vector();
                stats.clipped += usize::from(self.update(g, lr)?);
            }
            loss_sum += session.loss() * batch.batch() as f64;
            hits += correct(&session.predictions(), &batch.labels);
        }
        let n = data.len().max(1) as f64;
        stats.loss = loss_sum / n;
        stats.accuracy = hits as f64 / n;
        Ok(stats)
    }

    /// Offline pass: unroll, backward, then one optimizer step per batch.
    pub fn train_epoch_bptt(&mut self, data: &dyn SequenceSource, epoch: usize) -> Result<EpochStats> {
        let lr = lr_at(&self.cfg.schedule, self.cfg.lr0, epoch, self.cfg.epochs);
        let order = self.order(data.len(), epoch);
        let mut stats = EpochStats::default();
        let (mut loss_sum, mut hits) = (0.0, 0);
        for (bi, idx) in batches(data.len(), self.cfg.batch_size, &order).into_iter().enumerate() {
            let batch = data.batch(&idx)?;
            let (cache, loss) = unroll_forward(&self.net, &batch, self.cfg.seed, train_stream(epoch, bi))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    step: batch.t_len.saturating_sub(1),
                });
            }
            let grads = backward(&cache, &self.net)?;
            stats.peak_stored_reals = stats.peak_stored_reals.max(cache.stored_reals() + grads.stored_reals());
            let mut prob_sum = Matrix::zeros(batch.batch(), self.net.classes());
            for s in &cache.steps {
                for b in 0..batch.batch() {
                    for (acc, p) in prob_sum.row_mut(b).iter_mut().zip(softmax(s.y.row(b))) {
                        *acc += p;
                    }
                }
            }
            drop(cache);
            stats.clipped += usize::from(self.update(grads.to_vector(), lr)?);
            loss_sum += loss * batch.batch() as f64;
            hits += correct(&argmax_rows(&prob_sum), &batch.labels);
        }
        let n = data.len().max(1) as f64;
        stats.loss = loss_sum / n;
        stats.accuracy = hits as f64 / n;
        Ok(stats)
    }
}

/// Forward pass only. Returns time-summed softmax outputs and the loss.
pub fn predict_batch(net: &Network, batch: &SequenceBatch, seed: u64, stream: u64) -> Result<(Matrix, f64)> {
    let b = batch.batch();
    let scale = 1.0 / (batch.t_len.max(1) * b.max(1)) as f64;
    let mut rng = decay_rng(seed, stream);
    let mut states = net.initial_states(b);
    let mut ro = net.initial_readout(b);
    let mut prob_sum = Matrix::zeros(b, net.classes());
    let mut loss = 0.0;
    for t in 0..batch.t_len {
        net.forward_step(t, batch.step(t), &mut states, &mut ro, &mut rng)?;
        let out = step_loss(&ro.y, &batch.labels, scale)?;
        loss += out.loss_sum;
        for (acc, &p) in prob_sum.as_mut_slice().iter_mut().zip(out.probs.as_slice()) {
            *acc += p;
        }
    }
    Ok((prob_sum, loss * scale))
}

/// Fraction of samples whose argmax of time-summed softmax is the label.
pub fn evaluate(net: &Network, data: &dyn SequenceSource, batch_size: usize, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0;
    for (bi, idx) in batches(data.len(), batch_size.max(1), &order).into_iter().enumerate() {
        let batch = data.batch(&idx)?;
        let (probs, _) = predict_batch(net, &batch, seed, EVAL_STREAM | bi as u64)?;
        hits += correct(&argmax_rows(&probs), &batch.labels);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Runs `cfg.epochs` epochs, evaluating after each one.
pub fn fit(
    trainer: &mut Trainer,
    train: &dyn SequenceSource,
    test: &dyn SequenceSource,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    check_data(&trainer.cfg, train)?;
    let mut rows = Vec::with_capacity(trainer.cfg.epochs);
    for epoch in 0..trainer.cfg.epochs {
        let start = Instant::now();
        let stats = trainer.train_epoch(train, epoch)?;
        let test_acc = evaluate(&trainer.net, test, trainer.cfg.batch_size, trainer.cfg.seed)?;
        let row = EpochMetrics {
            epoch,
            train_loss: stats.loss,
            train_acc: stats.accuracy,
            test_acc,
            wallclock_s: if trainer.cfg.record_wallclock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
            peak_stored_reals: stats.peak_stored_reals,
            clipped: stats.clipped,
        };
        on_epoch(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Input width and class count of the network must match the data.
pub fn check_data(cfg: &TrainConfig, data: &dyn SequenceSource) -> Result<()> {
    let (input, classes) = (cfg.arch[0], *cfg.arch.last().expect("validated"));
    if input != data.input_dim() {
        return Err(Error::Config(format!(
            "arch input width {input} does not match data width {}",
            data.input_dim()
        )));
    }
    if classes != data.num_classes() {
        return Err(Error::Config(format!(
            "arch output width {classes} does not match {} classes",
            data.num_classes()
        )));
    }
    Ok(())
}

/// Train and test sources named by the config.
pub struct Datasets {
    pub train: Box<dyn SequenceSource>,
    pub test: Box<dyn SequenceSource>,
}

fn first_existing(candidates: &[PathBuf]) -> Option<PathBuf> {
    candidates.iter().find(|p| p.exists()).cloned()
}

/// Looks for MNIST in `<root>/mnist/` or `<root>/`, and SHD in
/// `<root>/shd/` or `<root>/` (`shd_train.spkev`, `shd_test.spkev`).
pub fn load_datasets(cfg: &TrainConfig, root: Option<&Path>) -> Result<Datasets> {
    let root = root
        .map(Path::to_path_buf)
        .or_else(|| cfg.data_dir.clone())
        .ok_or_else(|| Error::MissingData("no data directory given (data_dir or TCLIF_DATA_DIR)".into()))?;
    match cfg.dataset {
        DatasetKind::Smnist | DatasetKind::Psmnist => {
            let dir = first_existing(&[root.join("mnist"), root.clone()]).unwrap_or_else(|| root.join("mnist"));
            let mut train = MnistSequences::load_split(&dir, true)?;
            let mut test = MnistSequences::load_split(&dir, false)?;
            if let Some(n) = cfg.train_limit {
                train.truncate(n);
            }
            if let Some(n) = cfg.test_limit {
                test.truncate(n);
            }
            let perm = (cfg.dataset == DatasetKind::Psmnist)
                .then(|| PermutationSpec::from_seed(train.pixels(), cfg.permutation_seed));
            Ok(Datasets {
                train: Box::new(MnistSequences::new(train, cfg.frame_size, perm.clone())?),
                test: Box::new(MnistSequences::new(test, cfg.frame_size, perm)?),
            })
        }
        DatasetKind::Shd => {
            let dir = first_existing(&[root.join("shd"), root.clone()]).unwrap_or_else(|| root.join("shd"));
            let mut train = SpikeSequences::new(load_spike_events(dir.join("shd_train.spkev"))?, cfg.shd_bins, cfg.shd_clamp)?;
            let mut test = SpikeSequences::new(load_spike_events(dir.join("shd_test.spkev"))?, cfg.shd_bins, cfg.shd_clamp)?;
            if let Some(n) = cfg.train_limit {
                train.truncate(n);
            }
            if let Some(n) = cfg.test_limit {
                test.truncate(n);
            }
            Ok(Datasets {
                train: Box::new(train),
                test: Box::new(test),
            })
        }
    }
}
