//! Forward dynamics of the LIF and two-compartment (TC-LIF) neuron family.
//!
//! Every step function is pure: it takes the previous [`LayerState`] and the
//! input current and returns the next state. States are batched, one row per
//! sample.
//!
//! All TC-LIF variants share one update:
//!
//! ```text
//! v_d' = A_d·v_d + β1·v_s − γ·z + I
//! v_s' = A_s·v_s + β2·v_d' − v_th·z
//! z'   = H(v_s' − v_th)
//! ```
//!
//! and differ only in where the decay multipliers `A_d`, `A_s` come from:
//! fixed at 1 (vanilla), learnable constants (modified) or clamped gamma draws
//! with learnable floors (adaptive).

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::tensor::Matrix;

/// Which neuron model a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronTag {
    #[serde(alias = "LIF")]
    Lif,
    #[serde(alias = "TCLIF_VANILLA")]
    TclifVanilla,
    #[serde(alias = "TCLIF_MODIFIED")]
    TclifModified,
    #[serde(alias = "TCLIF_ADAPTIVE")]
    TclifAdaptive,
}

impl NeuronTag {
    pub fn is_two_compartment(self) -> bool {
        !matches!(self, NeuronTag::Lif)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronKind {
    pub tag: NeuronTag,
    /// Test switch: when false both reset terms vanish from the update.
    #[serde(default = "default_true")]
    pub reset_enabled: bool,
}

fn default_true() -> bool {
    true
}

impl NeuronKind {
    pub fn new(tag: NeuronTag) -> Self {
        Self {
            tag,
            reset_enabled: true,
        }
    }

    pub fn without_reset(mut self) -> Self {
        self.reset_enabled = false;
        self
    }
}

/// `β1 = −σ(c1)`, `β2 = σ(c2)`.
pub fn couplings(c1: f64, c2: f64) -> (f64, f64) {
    (-sigmoid(c1), sigmoid(c2))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Learnable and fixed scalars plus weight matrices of one layer.
///
/// `alpha1`/`alpha2` are the compartment decays of the modified variant. A LIF
/// layer reads its membrane decay from `alpha2`. `fixed_betas`, when set,
/// overrides the sigmoid couplings; the modified and adaptive variants use it
/// since their couplings are not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_in: Matrix,
    pub w_rec: Option<Matrix>,
    pub bias: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub fixed_betas: Option<(f64, f64)>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub a_d: f64,
    pub a_s: f64,
    pub v_th: f64,
    pub gamma: f64,
    pub kind: NeuronKind,
}

/// Effective per-step coefficients of the unified two-compartment update.
///
/// LIF is the degenerate case `a_d = 0, β1 = 0, β2 = 1` without the
/// dendritic reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoeffs {
    pub a_d: f64,
    pub a_s: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub reset_d: f64,
    pub reset_s: f64,
}

impl LayerParams {
    pub fn post(&self) -> usize {
        self.w_in.rows()
    }

    pub fn pre(&self) -> usize {
        self.w_in.cols()
    }

    pub fn betas(&self) -> (f64, f64) {
        match self.kind.tag {
            NeuronTag::Lif => (0.0, 1.0),
            _ => self.fixed_betas.unwrap_or_else(|| couplings(self.c1, self.c2)),
        }
    }

    /// Decay multipliers used between steps when no draw is involved.
    pub fn fixed_decay(&self, t: usize) -> DecayDraw {
        let (a_d_t, a_s_t) = match self.kind.tag {
            NeuronTag::Lif => (0.0, self.alpha2),
            NeuronTag::TclifVanilla => (1.0, 1.0),
            NeuronTag::TclifModified => (self.alpha1, self.alpha2),
            NeuronTag::TclifAdaptive => (self.a_d, self.a_s),
        };
        DecayDraw::new(a_d_t, a_s_t, t)
    }

    /// Draws the decay multipliers for step `t`. Only the adaptive variant
    /// consumes randomness.
    pub fn decay_at<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Result<DecayDraw> {
        match self.kind.tag {
            NeuronTag::TclifAdaptive => sample_decay(t, self.a_d, self.a_s, rng),
            _ => Ok(self.fixed_decay(t)),
        }
    }

    /// Whether the layer carries learnable decay parameters, and which.
    pub fn has_learnable_decay(&self) -> bool {
        matches!(self.kind.tag, NeuronTag::TclifModified | NeuronTag::TclifAdaptive)
    }

    /// `∂A_d[t]/∂θ_d` and `∂A_s[t]/∂θ_s` for the learnable decay parameters
    /// (`α1, α2` or the adaptive floors). The clamp passes derivative only
    /// when the draw sits on the floor.
    pub fn decay_sensitivity(&self, decay: &DecayDraw) -> (f64, f64) {
        match self.kind.tag {
            NeuronTag::TclifModified => (1.0, 1.0),
            NeuronTag::TclifAdaptive => (
                if decay.floor_d { 1.0 } else { 0.0 },
                if decay.floor_s { 1.0 } else { 0.0 },
            ),
            _ => (0.0, 0.0),
        }
    }

    pub fn coeffs(&self, decay: &DecayDraw) -> StepCoeffs {
        let reset = self.kind.reset_enabled;
        let (beta1, beta2) = self.betas();
        match self.kind.tag {
            NeuronTag::Lif => StepCoeffs {
                a_d: 0.0,
                a_s: decay.a_s_t,
                beta1: 0.0,
                beta2: 1.0,
                reset_d: 0.0,
                reset_s: if reset { self.v_th } else { 0.0 },
            },
            NeuronTag::TclifVanilla => StepCoeffs {
                a_d: 1.0,
                a_s: 1.0,
                beta1,
                beta2,
                reset_d: if reset { self.gamma } else { 0.0 },
                reset_s: if reset { self.v_th } else { 0.0 },
            },
            _ => StepCoeffs {
                a_d: decay.a_d_t,
                a_s: decay.a_s_t,
                beta1,
                beta2,
                reset_d: if reset { self.gamma } else { 0.0 },
                reset_s: if reset { self.v_th } else { 0.0 },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = &self.w_rec {
            check_len("w_rec rows", self.post(), w.rows())?;
            check_len("w_rec cols", self.post(), w.cols())?;
            if (0..w.rows()).any(|j| w[(j, j)] != 0.0) {
                return Err(Error::Parameter("w_rec diagonal must be zero".into()));
            }
        }
        check_len("bias", self.post(), self.bias.len())?;
        if !(self.v_th > 0.0) {
            return Err(Error::Parameter(format!("v_th must be > 0, got {}", self.v_th)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Parameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        for (name, a) in [("a_d", self.a_d), ("a_s", self.a_s)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Parameter(format!("{name} must lie in (0, 1], got {a}")));
            }
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {a}")));
            }
        }
        Ok(())
    }
}

/// Batched hidden state `h = [v_d, v_s]` plus the last spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub v_d: Matrix,
    pub v_s: Matrix,
    pub z: Matrix,
}

impl LayerState {
    pub fn zeros(batch: usize, post: usize) -> Self {
        Self {
            v_d: Matrix::zeros(batch, post),
            v_s: Matrix::zeros(batch, post),
            z: Matrix::zeros(batch, post),
        }
    }

    pub fn batch(&self) -> usize {
        self.v_s.rows()
    }

    pub fn width(&self) -> usize {
        self.v_s.cols()
    }

    pub fn stored_reals(&self) -> usize {
        self.v_d.len() + self.v_s.len() + self.z.len()
    }
}

/// Decay multipliers applied to the state of step `t`.
///
/// `floor_d`/`floor_s` record whether the draw was clamped at its learnable
/// floor, which is where the multiplier depends on the floor parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayDraw {
    pub a_d_t: f64,
    pub a_s_t: f64,
    pub t: usize,
    pub floor_d: bool,
    pub floor_s: bool,
}

impl DecayDraw {
    pub fn new(a_d_t: f64, a_s_t: f64, t: usize) -> Self {
        Self {
            a_d_t,
            a_s_t,
            t,
            floor_d: false,
            floor_s: false,
        }
    }

    pub fn unit(t: usize) -> Self {
        Self::new(1.0, 1.0, t)
    }
}

/// `I = W_rec·z_prev + W_in·x_t + b` for a single sample.
pub fn input_current(params: &LayerParams, x_t: &[f64], z_prev: &[f64]) -> Result<Vec<f64>> {
    check_len("input_current x_t", params.pre(), x_t.len())?;
    let mut out = params.bias.clone();
    if let Some(w_rec) = &params.w_rec {
        check_len("input_current z_prev", params.post(), z_prev.len())?;
        w_rec.matvec_acc(z_prev, &mut out);
    }
    params.w_in.matvec_acc(x_t, &mut out);
    Ok(out)
}

/// Batched input current; `x` is `batch × pre`, `z_prev` is `batch × post`.
pub fn input_current_batch(params: &LayerParams, x: &[f64], z_prev: &Matrix) -> Result<Matrix> {
    let batch = z_prev.rows();
    check_len("input_current_batch x", batch * params.pre(), x.len())?;
    check_len("input_current_batch z_prev", params.post(), z_prev.cols())?;
    let pre = params.pre();
    let mut out = Matrix::zeros(batch, params.post());
    for b in 0..batch {
        let row = out.row_mut(b);
        row.copy_from_slice(&params.bias);
        if let Some(w_rec) = &params.w_rec {
            w_rec.matvec_acc(z_prev.row(b), row);
        }
        params.w_in.matvec_acc(&x[b * pre..(b + 1) * pre], row);
    }
    Ok(out)
}

#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Single-compartment LIF update `v' = α·v + I − v_th·z`.
pub fn lif_step(state: &LayerState, i_t: &Matrix, alpha: f64, v_th: f64, reset: bool) -> LayerState {
    let mut next = state.clone();
    for ((v, z), &i) in next
        .v_s
        .as_mut_slice()
        .iter_mut()
        .zip(next.z.as_mut_slice().iter_mut())
        .zip(i_t.as_slice())
    {
        let r = if reset && *z != 0.0 { v_th * *z } else { 0.0 };
        *v = alpha * *v + i - r;
        *z = heaviside(*v - v_th);
    }
    next.v_d = i_t.clone();
    next
}

/// One two-compartment update with precomputed coefficients.
pub fn step_with(state: &LayerState, i_t: &Matrix, c: &StepCoeffs, v_th: f64) -> LayerState {
    let mut next = LayerState::zeros(state.batch(), state.width());
    let src = state
        .v_d
        .as_slice()
        .iter()
        .zip(state.v_s.as_slice())
        .zip(state.z.as_slice())
        .zip(i_t.as_slice());
    let dst = next
        .v_d
        .as_mut_slice()
        .iter_mut()
        .zip(next.v_s.as_mut_slice().iter_mut())
        .zip(next.z.as_mut_slice().iter_mut());
    for ((((&vd, &vs), &z), &i), ((vd_n, vs_n), z_n)) in src.zip(dst) {
        let (rd, rs) = if z != 0.0 {
            (c.reset_d * z, c.reset_s * z)
        } else {
            (0.0, 0.0)
        };
        let d = (c.a_d * vd + c.beta1 * vs - rd) + i;
        let s = (c.a_s * vs + c.beta2 * d) - rs;
        *vd_n = d;
        *vs_n = s;
        *z_n = heaviside(s - v_th);
    }
    next
}

/// TC-LIF step for any variant. For the vanilla variant the decay is forced to 1;
/// for the others `decay` carries the multipliers of this step.
pub fn tclif_step(
    state: &LayerState,
    i_t: &Matrix,
    params: &LayerParams,
    decay: &DecayDraw,
) -> Result<LayerState> {
    check_len("tclif_step state", params.post(), state.width())?;
    check_len("tclif_step current", state.v_s.len(), i_t.len())?;
    Ok(step_with(state, i_t, &params.coeffs(decay), params.v_th))
}

/// Draws `A^D[t], A^S[t] = clamp(Gamma(t+1, 1/(t+1)), a, 1)`.
pub fn sample_decay<R: Rng + ?Sized>(t: usize, a_d: f64, a_s: f64, rng: &mut R) -> Result<DecayDraw> {
    for (name, a) in [("a_d", a_d), ("a_s", a_s)] {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Parameter(format!("{name} must lie in (0, 1], got {a}")));
        }
    }
    let g = decay_distribution(t);
    let g_d: f64 = g.sample(rng);
    let g_s: f64 = g.sample(rng);
    Ok(DecayDraw {
        a_d_t: g_d.clamp(a_d, 1.0),
        a_s_t: g_s.clamp(a_s, 1.0),
        t,
        floor_d: g_d < a_d,
        floor_s: g_s < a_s,
    })
}

/// Unclamped time-indexed gamma law with mean 1 and variance `1/(t+1)`.
pub fn decay_distribution(t: usize) -> Gamma<f64> {
    let shape = (t + 1) as f64;
    Gamma::new(shape, 1.0 / shape).expect("shape and scale are positive")
}

/// Triangular pseudo-derivative `ψ = max(0, γ − |v − v_th|) / γ²`.
#[inline]
pub fn surrogate(v_s: f64, v_th: f64, gamma: f64) -> f64 {
    (gamma - (v_s - v_th).abs()).max(0.0) / (gamma * gamma)
}

pub fn surrogate_grad(v_s: &[f64], v_th: f64, gamma: f64) -> Vec<f64> {
    v_s.iter().map(|&v| surrogate(v, v_th, gamma)).collect()
}
