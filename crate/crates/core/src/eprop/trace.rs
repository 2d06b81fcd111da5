use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::neurons::{DecayDraw, LayerParams, LayerState, NeuronTag, StepCoeffs};
use crate::tensor::Matrix;

/// How the two-compartment eligibility vector is contracted into a trace.
///
/// `Somatic` uses `e = ψ·ε^S`, the exact derivative of the spike with
/// respect to the weight when `ε^S` already carries the dendritic path.
/// `TwoCompartment` uses `e = ψ·(β2·ε^D + ε^S)`, which applies the
/// dendrite-to-soma coupling a second time on top of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceForm {
    #[default]
    Somatic,
    TwoCompartment,
}

impl TraceForm {
    /// Contraction weights `(w_d, w_s)` so that `e = gain·(w_d·ε^D + w_s·ε^S)`.
    pub fn weights(self, tag: NeuronTag, beta2: f64) -> (f64, f64) {
        match (self, tag) {
            (TraceForm::TwoCompartment, t) if t.is_two_compartment() => (beta2, 1.0),
            _ => (0.0, 1.0),
        }
    }

    /// `∂(readout input)/∂I` seen through the contraction, used to push a
    /// learning signal through a layer's input current.
    pub fn current_gain(self, tag: NeuronTag, beta2: f64) -> f64 {
        if !tag.is_two_compartment() {
            return 1.0;
        }
        let (w_d, w_s) = self.weights(tag, beta2);
        // ∂v_d/∂I = 1, ∂v_s/∂I = β2
        w_d + w_s * beta2
    }
}

/// Per-synapse eligibility vectors `[ε^D, ε^S]` of one layer, batched.
///
/// Weight traces have one row per `(sample, post)` pair and one column per
/// presynaptic input; row `b·post + j` belongs to neuron `j` of sample `b`.
/// Bias and decay traces are `batch × post`.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityState {
    pub batch: usize,
    pub post: usize,
    pub pre: usize,
    pub eps_d_in: Matrix,
    pub eps_s_in: Matrix,
    pub eps_d_rec: Option<Matrix>,
    pub eps_s_rec: Option<Matrix>,
    pub eps_bias: [Matrix; 2],
    /// `[parameter][compartment]`; parameter 0 drives the dendrite decay,
    /// parameter 1 the soma decay.
    pub eps_decay: Option<[[Matrix; 2]; 2]>,
}

impl EligibilityState {
    pub fn zeros(batch: usize, post: usize, pre: usize, recurrent: bool, decay: bool) -> Self {
        let w = |cols| Matrix::zeros(batch * post, cols);
        let v = || Matrix::zeros(batch, post);
        Self {
            batch,
            post,
            pre,
            eps_d_in: w(pre),
            eps_s_in: w(pre),
            eps_d_rec: recurrent.then(|| w(post)),
            eps_s_rec: recurrent.then(|| w(post)),
            eps_bias: [v(), v()],
            eps_decay: decay.then(|| [[v(), v()], [v(), v()]]),
        }
    }

    pub fn for_layer(batch: usize, params: &LayerParams) -> Self {
        Self::zeros(
            batch,
            params.post(),
            params.pre(),
            params.w_rec.is_some(),
            params.has_learnable_decay(),
        )
    }

    pub fn stored_reals(&self) -> usize {
        let opt = |m: &Option<Matrix>| m.as_ref().map_or(0, Matrix::len);
        self.eps_d_in.len()
            + self.eps_s_in.len()
            + opt(&self.eps_d_rec)
            + opt(&self.eps_s_rec)
            + self.eps_bias.iter().map(Matrix::len).sum::<usize>()
            + self
                .eps_decay
                .as_ref()
                .map_or(0, |d| d.iter().flatten().map(Matrix::len).sum())
    }

    /// Advances the weight and bias vectors one step:
    /// `ε^D' = A_d·ε^D + β1·ε^S + pre`, `ε^S' = A_s·ε^S + β2·ε^D'`.
    ///
    /// `x` is `batch × pre` (layer input at this step), `z_prev` holds the
    /// layer's own spikes from the previous step (recurrent presynaptic
    /// activity). Reset terms are treated as constants.
    pub fn step_weights(&mut self, c: &StepCoeffs, x: &[f64], z_prev: &Matrix) -> Result<()> {
        check_len("eligibility input", self.batch * self.pre, x.len())?;
        let (post, pre) = (self.post, self.pre);
        for b in 0..self.batch {
            let xb = &x[b * pre..(b + 1) * pre];
            for j in 0..post {
                let r = b * post + j;
                advance(c, self.eps_d_in.row_mut(r), self.eps_s_in.row_mut(r), xb);
            }
        }
        if let (Some(ed), Some(es)) = (self.eps_d_rec.as_mut(), self.eps_s_rec.as_mut()) {
            check_len("eligibility z_prev", self.batch * post, z_prev.len())?;
            for b in 0..self.batch {
                let zb = z_prev.row(b);
                for j in 0..post {
                    let r = b * post + j;
                    let (d, s) = (ed.row_mut(r), es.row_mut(r));
                    advance(c, d, s, zb);
                    d[j] = 0.0;
                    s[j] = 0.0;
                }
            }
        }
        let [bd, bs] = &mut self.eps_bias;
        for (d, s) in bd.as_mut_slice().iter_mut().zip(bs.as_mut_slice()) {
            let nd = c.a_d * *d + c.beta1 * *s + 1.0;
            *s = c.a_s * *s + c.beta2 * nd;
            *d = nd;
        }
        Ok(())
    }

    /// Advances the decay-parameter traces. The direct term is the previous
    /// compartment potential scaled by `∂A/∂θ` (`sens`); the dendritic
    /// parameter feeds the dendritic component, the somatic one the soma.
    pub fn step_decay(&mut self, c: &StepCoeffs, prev: &LayerState, sens: (f64, f64)) {
        let Some([pd, ps]) = self.eps_decay.as_mut() else {
            return;
        };
        let rows = pd[0].as_mut_slice().len();
        debug_assert_eq!(rows, prev.v_d.len());
        let vd = prev.v_d.as_slice();
        let vs = prev.v_s.as_slice();
        {
            let [d, s] = pd;
            for ((d, s), &v) in d.as_mut_slice().iter_mut().zip(s.as_mut_slice()).zip(vd) {
                let direct = if sens.0 != 0.0 { sens.0 * v } else { 0.0 };
                let nd = c.a_d * *d + c.beta1 * *s + direct;
                *s = c.a_s * *s + c.beta2 * nd;
                *d = nd;
            }
        }
        let [d, s] = ps;
        for ((d, s), &v) in d.as_mut_slice().iter_mut().zip(s.as_mut_slice()).zip(vs) {
            let direct = if sens.1 != 0.0 { sens.1 * v } else { 0.0 };
            let nd = c.a_d * *d + c.beta1 * *s;
            *s = c.a_s * *s + c.beta2 * nd + direct;
            *d = nd;
        }
    }
}

#[inline]
fn advance(c: &StepCoeffs, d: &mut [f64], s: &mut [f64], pre: &[f64]) {
    for ((d, s), &p) in d.iter_mut().zip(s.iter_mut()).zip(pre) {
        let nd = c.a_d * *d + c.beta1 * *s + p;
        *s = c.a_s * *s + c.beta2 * nd;
        *d = nd;
    }
}

/// LIF eligibility step: `ε' = α·ε + pre`. The value lives in the somatic
/// component.
pub fn step_eligibility_lif(elig: &mut EligibilityState, x: &[f64], z_prev: &Matrix, alpha: f64) -> Result<()> {
    let c = StepCoeffs {
        a_d: 0.0,
        a_s: alpha,
        beta1: 0.0,
        beta2: 1.0,
        reset_d: 0.0,
        reset_s: 0.0,
    };
    elig.step_weights(&c, x, z_prev)
}

/// Two-compartment eligibility step with the decay multipliers of `decay`.
pub fn step_eligibility_tclif(
    elig: &mut EligibilityState,
    x: &[f64],
    z_prev: &Matrix,
    beta1: f64,
    beta2: f64,
    decay: &DecayDraw,
) -> Result<()> {
    let c = StepCoeffs {
        a_d: decay.a_d_t,
        a_s: decay.a_s_t,
        beta1,
        beta2,
        reset_d: 0.0,
        reset_s: 0.0,
    };
    elig.step_weights(&c, x, z_prev)
}

/// Decay-parameter trace step. `clamped_*` says whether the corresponding
/// decay multiplier responds to its parameter at this step (always for the
/// modified variant, only on the floor for the adaptive one).
pub fn step_eligibility_decay(
    elig: &mut EligibilityState,
    state_prev: &LayerState,
    decay: &DecayDraw,
    beta1: f64,
    beta2: f64,
    clamped_d: bool,
    clamped_s: bool,
) {
    let c = StepCoeffs {
        a_d: decay.a_d_t,
        a_s: decay.a_s_t,
        beta1,
        beta2,
        reset_d: 0.0,
        reset_s: 0.0,
    };
    let sens = (f64::from(u8::from(clamped_d)), f64::from(u8::from(clamped_s)));
    elig.step_decay(&c, state_prev, sens);
}

/// `e[r][i] = gain[r]·(w_d·ε^D[r][i] + w_s·ε^S[r][i])` where `gain` is ψ
/// (batch × post, flattened like the trace rows).
///
/// With `TraceForm::TwoCompartment` this is `ψ·(β2·ε^D + ε^S)`.
pub fn eligibility_trace(eps_d: &Matrix, eps_s: &Matrix, psi: &[f64], beta2: f64, form: TraceForm) -> Matrix {
    let (w_d, w_s) = form.weights(NeuronTag::TclifModified, beta2);
    let mut e = Matrix::zeros(eps_s.rows(), eps_s.cols());
    for (r, &g) in psi.iter().enumerate() {
        for ((o, &d), &s) in e.row_mut(r).iter_mut().zip(eps_d.row(r)).zip(eps_s.row(r)) {
            *o = g * (w_d * d + w_s * s);
        }
    }
    e
}

/// `g[j][i] += Σ_b l[b][j]·e[b·post + j][i]`.
pub fn accumulate(g: &mut Matrix, l: &Matrix, e: &Matrix) {
    let post = g.rows();
    for b in 0..l.rows() {
        for j in 0..post {
            let lj = l[(b, j)];
            if lj != 0.0 {
                crate::tensor::axpy(lj, e.row(b * post + j), g.row_mut(j));
            }
        }
    }
}
