//! Backpropagation through time over a fully cached unroll.
//!
//! [`unroll_forward`] keeps every intermediate state, so its memory grows
//! linearly with the sequence length. [`backward`] is hand-written reverse
//! mode through the same graph, including reset paths and recurrence, with
//! the surrogate standing in for the spike derivative.

use std::io::Write;

use crate::data::SequenceBatch;
use crate::eprop::{step_loss, EpropOptions, GradAccumulator, OnlineSession, ReadoutSource};
use crate::error::{check_len, Error, Result};
use crate::network::{decay_rng, Network};
use crate::neurons::{sigmoid, surrogate, DecayDraw, NeuronTag, StepCoeffs};
use crate::tensor::Matrix;

/// `∂h[t+1]/∂h[t]` for `h = [v_d, v_s]` with spikes held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateJacobian(pub [[f64; 2]; 2]);

impl StateJacobian {
    pub fn from_coeffs(c: &StepCoeffs) -> Self {
        Self([
            [c.a_d, c.beta1],
            [c.beta2 * c.a_d, c.a_s + c.beta1 * c.beta2],
        ])
    }

    pub fn apply(&self, h: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [m[0][0] * h[0] + m[0][1] * h[1], m[1][0] * h[0] + m[1][1] * h[1]]
    }

    pub fn mul(&self, other: &Self) -> Self {
        let (a, b) = (&self.0, &other.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Self(out)
    }

    pub fn identity() -> Self {
        Self([[1.0, 0.0], [0.0, 1.0]])
    }
}

/// One layer at one step, after the update.
#[derive(Debug, Clone)]
pub struct CachedLayer {
    pub v_d: Matrix,
    pub v_s: Matrix,
    pub z: Matrix,
    pub psi: Matrix,
    pub draw: DecayDraw,
    pub coeffs: StepCoeffs,
}

#[derive(Debug, Clone)]
pub struct CachedStep {
    /// Network input at this step, `batch × input_dim`. Inputs of higher
    /// layers are the cached spikes of the layer below.
    pub input: Vec<f64>,
    pub layers: Vec<CachedLayer>,
    /// Readout after the update, `batch × classes`.
    pub y: Matrix,
}

/// Every intermediate quantity of a forward pass.
#[derive(Debug, Clone)]
pub struct UnrollCache {
    pub steps: Vec<CachedStep>,
    pub labels: Vec<usize>,
    pub scale: f64,
}

impl UnrollCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of `f64` values held. Each decay draw counts as two.
    pub fn stored_reals(&self) -> usize {
        self.steps
            .iter()
            .map(|s| {
                s.input.len()
                    + s.y.len()
                    + s.layers
                        .iter()
                        .map(|l| l.v_d.len() + l.v_s.len() + l.z.len() + l.psi.len() + 2)
                        .sum::<usize>()
            })
            .sum()
    }

    /// Footprint of one step for a given network and batch size.
    pub fn per_step_reals(net: &Network, batch: usize) -> usize {
        batch * net.input_dim()
            + batch * net.classes()
            + net.layers.iter().map(|p| 4 * batch * p.post() + 2).sum::<usize>()
    }
}

/// Runs the network over `batch` and caches everything. Uses the same decay
/// stream and loss accumulation order as [`OnlineSession`], so the loss
/// matches it exactly.
pub fn unroll_forward(net: &Network, batch: &SequenceBatch, seed: u64, stream: u64) -> Result<(UnrollCache, f64)> {
    check_len("unroll input width", net.input_dim(), batch.input_dim)?;
    let b = batch.batch();
    let scale = 1.0 / (batch.t_len.max(1) * b.max(1)) as f64;
    let mut rng = decay_rng(seed, stream);
    let mut states = net.initial_states(b);
    let mut ro = net.initial_readout(b);
    let mut steps: Vec<CachedStep> = Vec::new();
    let mut loss_sum = 0.0;
    for t in 0..batch.t_len {
        steps.try_reserve(1).map_err(|e| Error::Resource {
            step: t,
            message: e.to_string(),
        })?;
        let x_t = batch.step(t);
        let record = net.forward_step(t, x_t, &mut states, &mut ro, &mut rng)?;
        let out = step_loss(&ro.y, &batch.labels, scale)?;
        loss_sum += out.loss_sum;
        let layers = net
            .layers
            .iter()
            .zip(&states)
            .zip(record.layers)
            .map(|((p, s), r)| CachedLayer {
                v_d: s.v_d.clone(),
                v_s: s.v_s.clone(),
                z: s.z.clone(),
                psi: Matrix::from_fn(s.v_s.rows(), s.v_s.cols(), |i, j| surrogate(s.v_s[(i, j)], p.v_th, p.gamma)),
                draw: r.draw,
                coeffs: r.coeffs,
            })
            .collect();
        steps.push(CachedStep {
            input: x_t.to_vec(),
            layers,
            y: ro.y.clone(),
        });
    }
    let cache = UnrollCache {
        steps,
        labels: batch.labels.clone(),
        scale,
    };
    Ok((cache, loss_sum * scale))
}

/// Adjoints flowing backward out of step `t` into step `t − 1`.
struct Carry {
    gd: Matrix,
    gs: Matrix,
    gz: Matrix,
}

/// Exact reverse-mode gradient of the cached computation.
pub fn backward(cache: &UnrollCache, net: &Network) -> Result<GradAccumulator> {
    let mut grads = GradAccumulator::zeros_like(net);
    let n_steps = cache.steps.len();
    if n_steps == 0 {
        return Ok(grads);
    }
    let b = cache.labels.len();
    let n_layers = net.layers.len();
    let mut carry: Vec<Carry> = net
        .layers
        .iter()
        .map(|p| Carry {
            gd: Matrix::zeros(b, p.post()),
            gs: Matrix::zeros(b, p.post()),
            gz: Matrix::zeros(b, p.post()),
        })
        .collect();
    let mut gy = Matrix::zeros(b, net.classes());
    let mut grad_beta = vec![[0.0f64; 2]; n_layers];

    for t in (0..n_steps).rev() {
        let step = &cache.steps[t];
        let out = step_loss(&step.y, &cache.labels, cache.scale)?;
        for (g, &l) in gy.as_mut_slice().iter_mut().zip(out.l_out.as_slice()) {
            *g = net.kappa * *g + l;
        }
        let top = &step.layers[n_layers - 1];
        let r = match net.readout_source {
            ReadoutSource::Spikes => &top.z,
            ReadoutSource::Soma => &top.v_s,
        };
        let mut gr = Matrix::zeros(b, net.top_width());
        for i in 0..b {
            grads.w_out.outer_acc(1.0, gy.row(i), r.row(i));
            net.w_out.matvec_t_acc(gy.row(i), gr.row_mut(i));
        }

        // Adjoint of the spikes of the layer being processed, from the
        // readout (top) or from the layer above at the same step.
        let mut gz_here = match net.readout_source {
            ReadoutSource::Spikes => gr.clone(),
            ReadoutSource::Soma => Matrix::zeros(b, net.top_width()),
        };
        for l in (0..n_layers).rev() {
            let p = &net.layers[l];
            let cl = &step.layers[l];
            let c = cl.coeffs;
            let post = p.post();
            let mut gs = carry[l].gs.clone();
            if l == n_layers - 1 && net.readout_source == ReadoutSource::Soma {
                for (g, &v) in gs.as_mut_slice().iter_mut().zip(gr.as_slice()) {
                    *g += v;
                }
            }
            for ((g, &psi), (&z_here, &z_carry)) in gs
                .as_mut_slice()
                .iter_mut()
                .zip(cl.psi.as_slice())
                .zip(gz_here.as_slice().iter().zip(carry[l].gz.as_slice()))
            {
                let gz = z_here + z_carry;
                if psi != 0.0 && gz != 0.0 {
                    *g += psi * gz;
                }
            }
            let mut gd = carry[l].gd.clone();
            for (d, &s) in gd.as_mut_slice().iter_mut().zip(gs.as_slice()) {
                *d += c.beta2 * s;
            }
            // gd is now the adjoint of the input current as well.

            let input: &[f64] = if l == 0 {
                &step.input
            } else {
                step.layers[l - 1].z.as_slice()
            };
            let pre = p.pre();
            let g = &mut grads.layers[l];
            for i in 0..b {
                g.w_in.outer_acc(1.0, gd.row(i), &input[i * pre..(i + 1) * pre]);
                for (gb, &v) in g.bias.iter_mut().zip(gd.row(i)) {
                    *gb += v;
                }
            }
            let prev = (t > 0).then(|| &cache.steps[t - 1].layers[l]);
            if let (Some(gw), Some(prev)) = (g.w_rec.as_mut(), prev) {
                for i in 0..b {
                    gw.outer_acc(1.0, gd.row(i), prev.z.row(i));
                }
            }

            if let Some(prev) = prev {
                let sens = p.decay_sensitivity(&cl.draw);
                if p.has_learnable_decay() {
                    g.decay[0] += sens.0 * dot_m(&gd, &prev.v_d);
                    g.decay[1] += sens.1 * dot_m(&gs, &prev.v_s);
                }
                grad_beta[l][0] += dot_m(&gd, &prev.v_s);
            }
            grad_beta[l][1] += dot_m(&gs, &cl.v_d);

            // Adjoint for the layer below at this step.
            if l > 0 {
                let mut below = Matrix::zeros(b, p.pre());
                for i in 0..b {
                    p.w_in.matvec_t_acc(gd.row(i), below.row_mut(i));
                }
                gz_here = below;
            }

            // Adjoints carried into step t − 1.
            let cr = &mut carry[l];
            let mut gz_prev = Matrix::zeros(b, post);
            if let Some(w) = &p.w_rec {
                for i in 0..b {
                    w.matvec_t_acc(gd.row(i), gz_prev.row_mut(i));
                }
            }
            for ((zp, &d), &s) in gz_prev.as_mut_slice().iter_mut().zip(gd.as_slice()).zip(gs.as_slice()) {
                if c.reset_d != 0.0 && d != 0.0 {
                    *zp -= c.reset_d * d;
                }
                if c.reset_s != 0.0 && s != 0.0 {
                    *zp -= c.reset_s * s;
                }
            }
            for ((nd, ns), (&d, &s)) in cr
                .gd
                .as_mut_slice()
                .iter_mut()
                .zip(cr.gs.as_mut_slice().iter_mut())
                .zip(gd.as_slice().iter().zip(gs.as_slice()))
            {
                *nd = c.a_d * d;
                *ns = c.a_s * s + c.beta1 * d;
            }
            cr.gz = gz_prev;
        }
    }

    for (l, p) in net.layers.iter().enumerate() {
        let g = &mut grads.layers[l];
        if let Some(w) = g.w_rec.as_mut() {
            w.zero_diagonal();
        }
        if p.kind.tag != NeuronTag::Lif && p.fixed_betas.is_none() {
            let s1 = sigmoid(p.c1);
            let s2 = sigmoid(p.c2);
            g.couplings = [grad_beta[l][0] * -s1 * (1.0 - s1), grad_beta[l][1] * s2 * (1.0 - s2)];
        }
    }
    Ok(grads)
}

fn dot_m(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Unroll plus backward in one call; returns gradients, loss and the number
/// of cached reals.
pub fn bptt_gradients(
    net: &Network,
    batch: &SequenceBatch,
    seed: u64,
    stream: u64,
) -> Result<(GradAccumulator, f64, usize)> {
    let (cache, loss) = unroll_forward(net, batch, seed, stream)?;
    let grads = backward(&cache, net)?;
    Ok((grads, loss, cache.stored_reals()))
}

/// Source of process heap measurements for [`memory_report`].
pub trait HeapMeter {
    /// Starts a new measurement window.
    fn reset_peak(&self);
    /// Peak bytes allocated above the level at the last reset.
    fn peak_bytes(&self) -> usize;
}

/// Meter that reports nothing; `peak_bytes` stays zero.
pub struct NoMeter;

impl HeapMeter for NoMeter {
    fn reset_peak(&self) {}

    fn peak_bytes(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Bptt,
    Eprop,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Bptt => "bptt",
            Algo::Eprop => "eprop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryRow {
    pub t_len: usize,
    pub algo: Algo,
    pub stored_reals: usize,
    pub peak_bytes: usize,
}

/// Measures both trainers on a synthetic batch for each sequence length.
/// Inputs are constant-width so only the time dimension varies.
pub fn memory_report(
    net: &Network,
    lengths: &[usize],
    batch: usize,
    seed: u64,
    meter: &dyn HeapMeter,
) -> Result<Vec<MemoryRow>> {
    let mut rows = Vec::with_capacity(2 * lengths.len());
    let d = net.input_dim();
    let labels: Vec<usize> = (0..batch).map(|i| i % net.classes()).collect();
    for &t_len in lengths {
        let x: Vec<f64> = (0..t_len * batch * d)
            .map(|k| ((k * 7919) % 101) as f64 / 100.0)
            .collect();
        let seq = SequenceBatch::new(x, labels.clone(), t_len, d)?;

        meter.reset_peak();
        let (cache, _) = unroll_forward(net, &seq, seed, 0)?;
        let grads = backward(&cache, net)?;
        let stored = cache.stored_reals() + grads.stored_reals();
        drop((cache, grads));
        rows.push(MemoryRow {
            t_len,
            algo: Algo::Bptt,
            stored_reals: stored,
            peak_bytes: meter.peak_bytes(),
        });

        meter.reset_peak();
        let mut session = OnlineSession::new(net, &seq.labels, t_len, seed, 0, EpropOptions::default());
        let mut peak = session.stored_reals();
        for t in 0..t_len {
            session.step(net, seq.step(t))?;
            peak = peak.max(session.stored_reals());
        }
        drop(session);
        rows.push(MemoryRow {
            t_len,
            algo: Algo::Eprop,
            stored_reals: peak,
            peak_bytes: meter.peak_bytes(),
        });
    }
    Ok(rows)
}

pub fn write_memory_csv<W: Write>(rows: &[MemoryRow], mut out: W) -> Result<()> {
    writeln!(out, "T,algo,stored_reals,peak_bytes")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.t_len, r.algo.name(), r.stored_reals, r.peak_bytes)?;
    }
    Ok(())
}

/// Least-squares slope and coefficient of determination of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}
