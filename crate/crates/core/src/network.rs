//! Layered network of spiking neurons with a leaky readout, and the forward
//! step shared by both trainers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eprop::{readout_step, ReadoutSource, ReadoutState};
use crate::error::{check_len, Error, Result};
use crate::neurons::{
    input_current_batch, step_with, DecayDraw, LayerParams, LayerState, NeuronKind, NeuronTag, StepCoeffs,
};
use crate::tensor::Matrix;

/// Smallest value the adaptive decay floors are projected to.
pub const MIN_DECAY_FLOOR: f64 = 1e-3;

/// Architecture and neuron hyperparameters needed to build a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input width, hidden widths, class count.
    pub widths: Vec<usize>,
    pub recurrent: bool,
    pub kind: NeuronKind,
    pub v_th: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub a_d: f64,
    pub a_s: f64,
    pub lif_alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub betas: Option<(f64, f64)>,
    pub kappa: f64,
    pub readout_source: ReadoutSource,
}

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, tag: NeuronTag) -> Self {
        Self {
            widths,
            recurrent: false,
            kind: NeuronKind::new(tag),
            v_th: 1.0,
            gamma: 0.5,
            alpha1: 0.9,
            alpha2: 0.9,
            a_d: 0.7,
            a_s: 0.8,
            lif_alpha: 0.9,
            c1: 0.0,
            c2: 0.0,
            betas: match tag {
                NeuronTag::TclifModified | NeuronTag::TclifAdaptive => Some((-0.5, 1.0)),
                _ => None,
            },
            kappa: 0.9,
            readout_source: ReadoutSource::Spikes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<LayerParams>,
    /// `classes × top hidden width`.
    pub w_out: Matrix,
    pub kappa: f64,
    pub readout_source: ReadoutSource,
}

/// Everything one layer saw during one forward step.
#[derive(Debug, Clone)]
pub struct LayerStep {
    /// Layer input at this step, `batch × pre`.
    pub input: Vec<f64>,
    /// State before the update.
    pub prev: LayerState,
    pub draw: DecayDraw,
    pub coeffs: StepCoeffs,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub layers: Vec<LayerStep>,
}

/// Deterministic stream for decay draws; both trainers use the same
/// `(seed, stream)` convention so they see identical draws.
pub fn decay_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Network {
    /// Uniform `±sqrt(1/fan_in)` weights, zero biases, zero recurrent diagonal.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        if spec.widths.len() < 3 || spec.widths.contains(&0) {
            return Err(Error::Parameter(format!(
                "need input, at least one hidden and an output width, all positive; got {:?}",
                spec.widths
            )));
        }
        let uniform = |rng: &mut R, rows: usize, cols: usize| {
            let bound = (1.0 / cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
        };
        let hidden = &spec.widths[1..spec.widths.len() - 1];
        let mut layers = Vec::with_capacity(hidden.len());
        let mut pre = spec.widths[0];
        for &post in hidden {
            let w_in = uniform(rng, post, pre);
            let w_rec = spec.recurrent.then(|| {
                let mut w = uniform(rng, post, post);
                w.zero_diagonal();
                w
            });
            let (alpha1, alpha2) = match spec.kind.tag {
                NeuronTag::Lif => (0.0, spec.lif_alpha),
                _ => (spec.alpha1, spec.alpha2),
            };
            let p = LayerParams {
                w_in,
                w_rec,
                bias: vec![0.0; post],
                c1: spec.c1,
                c2: spec.c2,
                fixed_betas: spec.betas,
                alpha1,
                alpha2,
                a_d: spec.a_d,
                a_s: spec.a_s,
                v_th: spec.v_th,
                gamma: spec.gamma,
                kind: spec.kind,
            };
            p.validate()?;
            layers.push(p);
            pre = post;
        }
        let classes = *spec.widths.last().expect("checked length");
        let w_out = uniform(rng, classes, pre);
        if !(0.0..1.0).contains(&spec.kappa) {
            return Err(Error::Parameter(format!("readout kappa must lie in [0, 1), got {}", spec.kappa)));
        }
        Ok(Self {
            layers,
            w_out,
            kappa: spec.kappa,
            readout_source: spec.readout_source,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].pre()
    }

    pub fn classes(&self) -> usize {
        self.w_out.rows()
    }

    pub fn top_width(&self) -> usize {
        self.w_out.cols()
    }

    pub fn initial_states(&self, batch: usize) -> Vec<LayerState> {
        self.layers.iter().map(|p| LayerState::zeros(batch, p.post())).collect()
    }

    pub fn initial_readout(&self, batch: usize) -> ReadoutState {
        ReadoutState::zeros(batch, self.classes(), self.kappa)
    }

    /// What the readout integrates from the top layer's (new) state.
    pub fn readout_input<'a>(&self, top: &'a LayerState) -> &'a Matrix {
        match self.readout_source {
            ReadoutSource::Spikes => &top.z,
            ReadoutSource::Soma => &top.v_s,
        }
    }

    /// Advances every layer and the readout by one time step.
    ///
    /// `x_t` is `batch × input_dim`. Decay draws are taken from `rng`, layer
    /// by layer, for the adaptive variant only.
    pub fn forward_step<R: Rng + ?Sized>(
        &self,
        t: usize,
        x_t: &[f64],
        states: &mut [LayerState],
        ro: &mut ReadoutState,
        rng: &mut R,
    ) -> Result<StepRecord> {
        check_len("forward_step layers", self.layers.len(), states.len())?;
        let batch = ro.y.rows();
        check_len("forward_step input", batch * self.input_dim(), x_t.len())?;
        let mut records = Vec::with_capacity(self.layers.len());
        for (l, p) in self.layers.iter().enumerate() {
            let input = if l == 0 {
                x_t.to_vec()
            } else {
                states[l - 1].z.as_slice().to_vec()
            };
            let draw = p.decay_at(t, rng)?;
            let coeffs = p.coeffs(&draw);
            let current = input_current_batch(p, &input, &states[l].z)?;
            let next = step_with(&states[l], &current, &coeffs, p.v_th);
            let prev = std::mem::replace(&mut states[l], next);
            records.push(LayerStep {
                input,
                prev,
                draw,
                coeffs,
            });
        }
        let top = states.last().expect("at least one layer");
        readout_step(ro, &self.w_out, self.readout_input(top))?;
        Ok(StepRecord { layers: records })
    }

    /// Which entries of [`Network::to_vector`] an optimizer may change.
    pub fn trainable_mask(&self, train_couplings: bool) -> Vec<bool> {
        let mut mask = Vec::new();
        for p in &self.layers {
            mask.extend(std::iter::repeat_n(true, p.w_in.len()));
            if let Some(w) = &p.w_rec {
                mask.extend(std::iter::repeat_n(true, w.len()));
            }
            mask.extend(std::iter::repeat_n(true, p.bias.len()));
            let couplings =
                train_couplings && p.kind.tag == NeuronTag::TclifVanilla && p.fixed_betas.is_none();
            mask.extend([couplings; 2]);
            mask.extend([p.has_learnable_decay(); 2]);
        }
        mask.extend(std::iter::repeat_n(true, self.w_out.len()));
        mask
    }

    fn decay_slots(p: &LayerParams) -> [f64; 2] {
        match p.kind.tag {
            NeuronTag::TclifAdaptive => [p.a_d, p.a_s],
            _ => [p.alpha1, p.alpha2],
        }
    }

    /// Flattens all parameters in declaration order: per layer `w_in`,
    /// `w_rec` (if present), `bias`, `c1, c2`, the two decay parameters;
    /// then `w_out`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.layers {
            out.extend_from_slice(p.w_in.as_slice());
            if let Some(w) = &p.w_rec {
                out.extend_from_slice(w.as_slice());
            }
            out.extend_from_slice(&p.bias);
            out.extend([p.c1, p.c2]);
            out.extend(Self::decay_slots(p));
        }
        out.extend_from_slice(self.w_out.as_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|p| p.w_in.len() + p.w_rec.as_ref().map_or(0, Matrix::len) + p.bias.len() + 4)
            .sum::<usize>()
            + self.w_out.len()
    }

    pub fn set_from_vector(&mut self, v: &[f64]) -> Result<()> {
        check_len("parameter vector", self.num_params(), v.len())?;
        let mut it = v.iter().copied();
        let mut take = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().expect("length checked"));
        for p in &mut self.layers {
            take(p.w_in.as_mut_slice());
            if let Some(w) = p.w_rec.as_mut() {
                take(w.as_mut_slice());
            }
            take(&mut p.bias);
            let mut c = [0.0; 2];
            take(&mut c);
            p.c1 = c[0];
            p.c2 = c[1];
            let mut d = [0.0; 2];
            take(&mut d);
            match p.kind.tag {
                NeuronTag::TclifAdaptive => {
                    p.a_d = d[0];
                    p.a_s = d[1];
                }
                _ => {
                    p.alpha1 = d[0];
                    p.alpha2 = d[1];
                }
            }
        }
        take(self.w_out.as_mut_slice());
        Ok(())
    }

    /// Restores the parameter invariants after an optimizer step.
    pub fn project(&mut self) {
        for p in &mut self.layers {
            if let Some(w) = p.w_rec.as_mut() {
                w.zero_diagonal();
            }
            p.alpha1 = p.alpha1.clamp(0.0, 1.0);
            p.alpha2 = p.alpha2.clamp(0.0, 1.0);
            p.a_d = p.a_d.clamp(MIN_DECAY_FLOOR, 1.0);
            p.a_s = p.a_s.clamp(MIN_DECAY_FLOOR, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_bounds() {
        let mut spec = NetworkSpec::new(vec![4, 6, 5, 3], NeuronTag::TclifAdaptive);
        spec.recurrent = true;
        let net = Network::init(&spec, &mut decay_rng(1, 0)).unwrap();
        assert_eq!(net.layers.len(), 2);
        assert_eq!((net.layers[1].pre(), net.layers[1].post()), (6, 5));
        assert_eq!((net.w_out.rows(), net.w_out.cols()), (3, 5));
        let w = net.layers[0].w_rec.as_ref().unwrap();
        assert!((0..6).all(|j| w[(j, j)] == 0.0));
        assert!(net.layers[0].w_in.max_abs() <= 0.5);
    }

    #[test]
    fn vector_round_trip() {
        let mut spec = NetworkSpec::new(vec![3, 4, 2], NeuronTag::TclifModified);
        spec.recurrent = true;
        let net = Network::init(&spec, &mut decay_rng(2, 0)).unwrap();
        let v = net.to_vector();
        assert_eq!(v.len(), net.num_params());
        let mut other = Network::init(&spec, &mut decay_rng(3, 0)).unwrap();
        other.set_from_vector(&v).unwrap();
        assert_eq!(other, net);
        assert_eq!(net.trainable_mask(true).len(), v.len());
    }

    #[test]
    fn rejects_degenerate_arch() {
        let spec = NetworkSpec::new(vec![3, 2], NeuronTag::Lif);
        assert!(Network::init(&spec, &mut decay_rng(0, 0)).is_err());
    }

    #[test]
    fn projection_clamps_decays() {
        let spec = NetworkSpec::new(vec![1, 1, 2], NeuronTag::TclifAdaptive);
        let mut net = Network::init(&spec, &mut decay_rng(0, 0)).unwrap();
        net.layers[0].a_d = 1.3;
        net.layers[0].a_s = -0.2;
        net.project();
        assert_eq!(net.layers[0].a_d, 1.0);
        assert_eq!(net.layers[0].a_s, MIN_DECAY_FLOOR);
    }
}
