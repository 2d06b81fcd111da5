use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Result};
use crate::neurons::{surrogate, LayerState, NeuronTag};
use crate::network::{decay_rng, Network};
use crate::tensor::{axpy, Matrix};

use super::{
    hidden_learning_signal, readout_learning_signal, step_loss, EligibilityState, GradAccumulator, LearningSignal,
    ReadoutSource, ReadoutState, TraceForm,
};

/// Knobs of the online learner.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpropOptions {
    pub trace_form: TraceForm,
    /// Fault injection for verification tooling: negates every eligibility
    /// trace before it is used.
    #[doc(hidden)]
    pub invert_traces: bool,
}

/// Readout-filtered traces `ē = κ·ē + e` of one layer.
#[derive(Debug, Clone)]
struct FilteredTraces {
    w_in: Matrix,
    w_rec: Option<Matrix>,
    bias: Matrix,
    decay: Option<[Matrix; 2]>,
}

impl FilteredTraces {
    fn like(e: &EligibilityState) -> Self {
        Self {
            w_in: Matrix::zeros(e.eps_s_in.rows(), e.eps_s_in.cols()),
            w_rec: e.eps_s_rec.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
            bias: Matrix::zeros(e.batch, e.post),
            decay: e
                .eps_decay
                .as_ref()
                .map(|_| [Matrix::zeros(e.batch, e.post), Matrix::zeros(e.batch, e.post)]),
        }
    }

    fn stored_reals(&self) -> usize {
        self.w_in.len()
            + self.w_rec.as_ref().map_or(0, Matrix::len)
            + self.bias.len()
            + self.decay.as_ref().map_or(0, |d| d[0].len() + d[1].len())
    }
}

/// Forward-in-time gradient computation for one batch of sequences.
///
/// Memory use is fixed at construction: states, eligibility vectors,
/// filtered traces and the gradient accumulator. Nothing grows with the
/// number of steps processed.
///
/// The readout leak is folded into the traces: the gradient is
/// `Σ_t L_j[t]·ē_ji[t]` with `ē` the κ-filtered eligibility trace, which
/// equals the exact gradient for a single feedforward layer without reset.
#[derive(Debug, Clone)]
pub struct OnlineSession {
    opts: EpropOptions,
    batch: usize,
    labels: Vec<usize>,
    scale: f64,
    t: usize,
    rng: ChaCha8Rng,
    states: Vec<LayerState>,
    readout: ReadoutState,
    traces: Vec<EligibilityState>,
    filtered: Vec<FilteredTraces>,
    readout_trace: Matrix,
    grads: GradAccumulator,
    loss_sum: f64,
    prob_sum: Matrix,
}

impl OnlineSession {
    /// `t_len` only sets the loss normalisation `1/(T·batch)`.
    pub fn new(net: &Network, labels: &[usize], t_len: usize, seed: u64, stream: u64, opts: EpropOptions) -> Self {
        let batch = labels.len();
        let traces: Vec<_> = net
            .layers
            .iter()
            .map(|p| EligibilityState::for_layer(batch, p))
            .collect();
        let filtered = traces.iter().map(FilteredTraces::like).collect();
        Self {
            opts,
            batch,
            labels: labels.to_vec(),
            scale: 1.0 / (t_len.max(1) * batch.max(1)) as f64,
            t: 0,
            rng: decay_rng(seed, stream),
            states: net.initial_states(batch),
            readout: net.initial_readout(batch),
            traces,
            filtered,
            readout_trace: Matrix::zeros(batch, net.top_width()),
            grads: GradAccumulator::zeros_like(net),
            loss_sum: 0.0,
            prob_sum: Matrix::zeros(batch, net.classes()),
        }
    }

    pub fn steps_done(&self) -> usize {
        self.t
    }

    pub fn grads(&self) -> &GradAccumulator {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut GradAccumulator {
        &mut self.grads
    }

    pub fn states(&self) -> &[LayerState] {
        &self.states
    }

    pub fn readout(&self) -> &ReadoutState {
        &self.readout
    }

    pub fn traces(&self) -> &[EligibilityState] {
        &self.traces
    }

    /// Mean per-step cross entropy so far, normalised by the declared length.
    pub fn loss(&self) -> f64 {
        self.loss_sum * self.scale
    }

    /// Time-summed softmax outputs, `batch × classes`.
    pub fn prob_sum(&self) -> &Matrix {
        &self.prob_sum
    }

    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.prob_sum)
    }

    /// Count of `f64` values owned by the session.
    pub fn stored_reals(&self) -> usize {
        self.states.iter().map(LayerState::stored_reals).sum::<usize>()
            + self.readout.y.len()
            + self.traces.iter().map(EligibilityState::stored_reals).sum::<usize>()
            + self.filtered.iter().map(FilteredTraces::stored_reals).sum::<usize>()
            + self.readout_trace.len()
            + self.grads.stored_reals()
            + self.prob_sum.len()
    }

    /// Processes one time step: forward pass, loss, traces, learning signals
    /// and gradient accumulation. Returns the unscaled batch loss of the step.
    pub fn step(&mut self, net: &Network, x_t: &[f64]) -> Result<f64> {
        check_len("online step input", self.batch * net.input_dim(), x_t.len())?;
        let record = net.forward_step(self.t, x_t, &mut self.states, &mut self.readout, &mut self.rng)?;
        let out = step_loss(&self.readout.y, &self.labels, self.scale)?;
        self.loss_sum += out.loss_sum;
        axpy(1.0, out.probs.as_slice(), self.prob_sum.as_mut_slice());

        let kappa = net.kappa;
        let top = self.states.last().expect("at least one layer");
        let r = net.readout_input(top);
        for (f, &v) in self.readout_trace.as_mut_slice().iter_mut().zip(r.as_slice()) {
            *f = kappa * *f + v;
        }
        for b in 0..self.batch {
            self.grads
                .w_out
                .outer_acc(1.0, out.l_out.row(b), self.readout_trace.row(b));
        }

        let mut signal = readout_learning_signal(&out.l_out, &net.w_out);
        let n = net.layers.len();
        for l in (0..n).rev() {
            let p = &net.layers[l];
            let step = &record.layers[l];
            let z_prev = &step.prev.z;
            let elig = &mut self.traces[l];
            elig.step_weights(&step.coeffs, &step.input, z_prev)?;
            if p.has_learnable_decay() {
                elig.step_decay(&step.coeffs, &step.prev, p.decay_sensitivity(&step.draw));
            }

            let soma_top = l == n - 1 && net.readout_source == ReadoutSource::Soma;
            let gain = if soma_top {
                Matrix::from_vec(self.batch, p.post(), vec![1.0; self.batch * p.post()])?
            } else {
                let v_s = &self.states[l].v_s;
                let psi: Vec<f64> = v_s.as_slice().iter().map(|&v| surrogate(v, p.v_th, p.gamma)).collect();
                Matrix::from_vec(self.batch, p.post(), psi)?
            };
            let (_, beta2) = p.betas();
            let (mut w_d, mut w_s) = self.opts.trace_form.weights(p.kind.tag, beta2);
            if self.opts.invert_traces {
                w_d = -w_d;
                w_s = -w_s;
            }
            let g = &mut self.grads.layers[l];
            let f = &mut self.filtered[l];
            filter_and_accumulate(
                &mut g.w_in,
                &mut f.w_in,
                &elig.eps_d_in,
                &elig.eps_s_in,
                &gain,
                &signal.l,
                (w_d, w_s),
                kappa,
            );
            if let (Some(gw), Some(fw), Some(ed), Some(es)) =
                (g.w_rec.as_mut(), f.w_rec.as_mut(), elig.eps_d_rec.as_ref(), elig.eps_s_rec.as_ref())
            {
                filter_and_accumulate(gw, fw, ed, es, &gain, &signal.l, (w_d, w_s), kappa);
            }
            {
                let [bd, bs] = &elig.eps_bias;
                let mut gb = Matrix::from_vec(p.post(), 1, std::mem::take(&mut g.bias))?;
                filter_and_accumulate_vec(&mut gb, &mut f.bias, bd, bs, &gain, &signal.l, (w_d, w_s), kappa);
                g.bias = gb.as_slice().to_vec();
            }
            if let (Some(fd), Some(ed)) = (f.decay.as_mut(), elig.eps_decay.as_ref()) {
                for k in 0..2 {
                    let [d, s] = &ed[k];
                    let mut acc = Matrix::zeros(p.post(), 1);
                    filter_and_accumulate_vec(&mut acc, &mut fd[k], d, s, &gain, &signal.l, (w_d, w_s), kappa);
                    g.decay[k] += acc.as_slice().iter().sum::<f64>();
                }
            }

            if l > 0 {
                let tag = p.kind.tag;
                let beta2_up = if tag == NeuronTag::Lif { 1.0 } else { beta2 };
                signal = hidden_learning_signal(
                    &LearningSignal { l: signal.l },
                    &p.w_in,
                    &gain,
                    beta2_up,
                    tag,
                    self.opts.trace_form,
                )?;
            }
        }
        self.t += 1;
        Ok(out.loss_sum)
    }

    /// Runs a whole `T × batch × input` block of steps.
    pub fn run(&mut self, net: &Network, x: &[f64], t_len: usize) -> Result<()> {
        let width = self.batch * net.input_dim();
        check_len("online run input", t_len * width, x.len())?;
        for t in 0..t_len {
            self.step(net, &x[t * width..(t + 1) * width])?;
        }
        Ok(())
    }
}

/// For every `(sample, post)` row: `e = gain·(w_d·ε^D + w_s·ε^S)`,
/// `ē = κ·ē + e`, `g[j] += L·ē`.
#[allow(clippy::too_many_arguments)]
fn filter_and_accumulate(
    g: &mut Matrix,
    filtered: &mut Matrix,
    eps_d: &Matrix,
    eps_s: &Matrix,
    gain: &Matrix,
    signal: &Matrix,
    (w_d, w_s): (f64, f64),
    kappa: f64,
) {
    let post = g.rows();
    let gain = gain.as_slice();
    let signal = signal.as_slice();
    for r in 0..filtered.rows() {
        let j = r % post;
        let c = gain[r];
        let lj = signal[r];
        let fr = filtered.row_mut(r);
        let es = eps_s.row(r);
        if w_d == 0.0 {
            let k = c * w_s;
            for (f, &s) in fr.iter_mut().zip(es) {
                *f = kappa * *f + k * s;
            }
        } else {
            let ed = eps_d.row(r);
            for ((f, &d), &s) in fr.iter_mut().zip(ed).zip(es) {
                *f = kappa * *f + c * (w_d * d + w_s * s);
            }
        }
        if lj != 0.0 {
            axpy(lj, filtered.row(r), g.row_mut(j));
        }
    }
}

/// Variant of [`filter_and_accumulate`] for per-neuron traces (`batch × post`).
#[allow(clippy::too_many_arguments)]
fn filter_and_accumulate_vec(
    g: &mut Matrix,
    filtered: &mut Matrix,
    eps_d: &Matrix,
    eps_s: &Matrix,
    gain: &Matrix,
    signal: &Matrix,
    (w_d, w_s): (f64, f64),
    kappa: f64,
) {
    let post = g.rows();
    let it = filtered
        .as_mut_slice()
        .iter_mut()
        .zip(eps_d.as_slice())
        .zip(eps_s.as_slice())
        .zip(gain.as_slice())
        .zip(signal.as_slice())
        .enumerate();
    let gs = g.as_mut_slice();
    for (r, ((((f, &d), &s), &c), &lj)) in it {
        *f = kappa * *f + c * (w_d * d + w_s * s);
        gs[r % post] += lj * *f;
    }
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|b| {
            m.row(b)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect()
}
