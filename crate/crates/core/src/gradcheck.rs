//! Oracle suites that cross-check the gradient routes against each other.
//!
//! - `recursion`: the iterative eligibility vectors against an explicit sum
//!   over products of state Jacobians.
//! - `feedforward`: online gradients against reverse mode for a single
//!   feedforward layer with reset disabled, where the two must agree.
//! - `finite_difference`: reverse mode (and online decay gradients) against
//!   central differences in the subthreshold regime, where the loss is smooth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bptt::{backward, unroll_forward, StateJacobian};
use crate::data::SequenceBatch;
use crate::eprop::{EligibilityState, EpropOptions, OnlineSession, ReadoutSource};
use crate::error::Result;
use crate::network::{decay_rng, Network, NetworkSpec};
use crate::neurons::{NeuronTag, StepCoeffs};
use crate::tensor::max_rel_err;

pub const RECURSION_TOL: f64 = 1e-10;
pub const FEEDFORWARD_TOL: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-5;
pub const FD_EPS: f64 = 1e-5;

const ALL_TAGS: [NeuronTag; 4] = [
    NeuronTag::Lif,
    NeuronTag::TclifVanilla,
    NeuronTag::TclifModified,
    NeuronTag::TclifAdaptive,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub recursion_instances: usize,
    pub feedforward_instances: usize,
    pub fd_instances: usize,
    pub eprop: EpropOptions,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            recursion_instances: 200,
            feedforward_instances: 50,
            fd_instances: 24,
            eprop: EpropOptions::default(),
        }
    }
}

pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        recursion_suite(opts.recursion_instances, opts.seed)?,
        feedforward_suite(opts.feedforward_instances, opts.seed, opts.eprop)?,
        finite_difference_suite(opts.fd_instances, opts.seed, opts.eprop)?,
    ])
}

fn random_batch(rng: &mut ChaCha8Rng, t_len: usize, batch: usize, dim: usize, classes: usize) -> SequenceBatch {
    let x = (0..t_len * batch * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    SequenceBatch::new(x, labels, t_len, dim).expect("sizes agree")
}

/// Random network of the given kind with randomised neuron parameters.
pub fn random_network(rng: &mut ChaCha8Rng, widths: Vec<usize>, tag: NeuronTag, recurrent: bool) -> Result<Network> {
    let mut spec = NetworkSpec::new(widths, tag);
    spec.recurrent = recurrent;
    spec.kappa = rng.random_range(0.0..0.95);
    spec.alpha1 = rng.random_range(0.3..1.0);
    spec.alpha2 = rng.random_range(0.3..1.0);
    spec.lif_alpha = rng.random_range(0.3..1.0);
    spec.a_d = rng.random_range(0.3..1.0);
    spec.a_s = rng.random_range(0.3..1.0);
    spec.c1 = rng.random_range(-2.0..2.0);
    spec.c2 = rng.random_range(-2.0..2.0);
    spec.v_th = rng.random_range(0.3..1.0);
    let mut net = Network::init(&spec, rng)?;
    for p in &mut net.layers {
        p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        p.w_in.as_mut_slice().iter_mut().for_each(|w| *w *= 2.0);
    }
    Ok(net)
}

/// Explicit `Σ_{t'≤t} (Π_{k=t'+1..t} J[k])·direct[t']` for one synapse.
fn chain_sum(jacs: &[StateJacobian], direct: &[[f64; 2]]) -> [f64; 2] {
    let t = jacs.len() - 1;
    let mut total = [0.0; 2];
    for tp in 0..=t {
        let mut prod = StateJacobian::identity();
        for jac in &jacs[tp + 1..=t] {
            prod = jac.mul(&prod);
        }
        let v = prod.apply(direct[tp]);
        total[0] += v[0];
        total[1] += v[1];
    }
    total
}

/// Iterative eligibility vectors against the unrolled Jacobian chain, at
/// every step, for every kind of neuron.
pub fn recursion_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for n in 0..instances {
        let tag = ALL_TAGS[n % ALL_TAGS.len()];
        let pre = rng.random_range(1..=5);
        let post = rng.random_range(1..=8);
        let t_len = rng.random_range(1..=20);
        let recurrent = rng.random_bool(0.5);
        let net = random_network(&mut rng, vec![pre, post, 2], tag, recurrent)?;
        let batch = random_batch(&mut rng, t_len, 1, pre, 2);
        let p = &net.layers[0];

        let mut states = net.initial_states(1);
        let mut ro = net.initial_readout(1);
        let mut draws = decay_rng(seed, n as u64);
        let mut elig = EligibilityState::for_layer(1, p);
        let mut jacs = Vec::with_capacity(t_len);
        let mut coeffs: Vec<StepCoeffs> = Vec::with_capacity(t_len);
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        let mut z_prevs: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        let mut prev_v: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(t_len);
        let mut sens = Vec::with_capacity(t_len);

        for t in 0..t_len {
            let rec = net.forward_step(t, batch.step(t), &mut states, &mut ro, &mut draws)?;
            let step = &rec.layers[0];
            elig.step_weights(&step.coeffs, &step.input, &step.prev.z)?;
            let s = p.decay_sensitivity(&step.draw);
            if p.has_learnable_decay() {
                elig.step_decay(&step.coeffs, &step.prev, s);
            }
            jacs.push(StateJacobian::from_coeffs(&step.coeffs));
            coeffs.push(step.coeffs);
            inputs.push(step.input.clone());
            z_prevs.push(step.prev.z.as_slice().to_vec());
            prev_v.push((step.prev.v_d.as_slice().to_vec(), step.prev.v_s.as_slice().to_vec()));
            sens.push(s);

            let mut got = Vec::new();
            let mut want = Vec::new();
            let jt = &jacs[..=t];
            let weight_direct = |x: &[Vec<f64>], i: usize| -> Vec<[f64; 2]> {
                (0..=t).map(|k| [x[k][i], coeffs[k].beta2 * x[k][i]]).collect()
            };
            for j in 0..post {
                for i in 0..pre {
                    let w = chain_sum(jt, &weight_direct(&inputs, i));
                    got.extend([elig.eps_d_in[(j, i)], elig.eps_s_in[(j, i)]]);
                    want.extend(w);
                }
                if let (Some(ed), Some(es)) = (&elig.eps_d_rec, &elig.eps_s_rec) {
                    for i in 0..post {
                        let w = if i == j {
                            [0.0, 0.0]
                        } else {
                            chain_sum(jt, &weight_direct(&z_prevs, i))
                        };
                        got.extend([ed[(j, i)], es[(j, i)]]);
                        want.extend(w);
                    }
                }
                let ones: Vec<[f64; 2]> = (0..=t).map(|k| [1.0, coeffs[k].beta2]).collect();
                got.extend([elig.eps_bias[0][(0, j)], elig.eps_bias[1][(0, j)]]);
                want.extend(chain_sum(jt, &ones));
                if let Some(ed) = &elig.eps_decay {
                    let dend: Vec<[f64; 2]> = (0..=t)
                        .map(|k| {
                            let v = sens[k].0 * prev_v[k].0[j];
                            [v, coeffs[k].beta2 * v]
                        })
                        .collect();
                    let soma: Vec<[f64; 2]> = (0..=t).map(|k| [0.0, sens[k].1 * prev_v[k].1[j]]).collect();
                    got.extend([ed[0][0][(0, j)], ed[0][1][(0, j)], ed[1][0][(0, j)], ed[1][1][(0, j)]]);
                    want.extend(chain_sum(jt, &dend));
                    want.extend(chain_sum(jt, &soma));
                }
            }
            worst = worst.max(max_rel_err(&got, &want));
        }
    }
    Ok(SuiteReport {
        name: "recursion",
        instances,
        max_rel_err: worst,
        tolerance: RECURSION_TOL,
    })
}

fn online_gradients(net: &Network, batch: &SequenceBatch, seed: u64, opts: EpropOptions) -> Result<Vec<f64>> {
    let mut s = OnlineSession::new(net, &batch.labels, batch.t_len, seed, 0, opts);
    s.run(net, &batch.x, batch.t_len)?;
    Ok(s.grads().to_vector())
}

/// Positions in the parameter vector of the given blocks: `w_in`, `bias`,
/// decay slots of every layer, and `w_out`.
fn block_ranges(net: &Network) -> Vec<(&'static str, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut at = 0;
    for p in &net.layers {
        out.push(("w_in", at..at + p.w_in.len()));
        at += p.w_in.len();
        if let Some(w) = &p.w_rec {
            out.push(("w_rec", at..at + w.len()));
            at += w.len();
        }
        out.push(("bias", at..at + p.bias.len()));
        at += p.bias.len();
        out.push(("couplings", at..at + 2));
        at += 2;
        if p.has_learnable_decay() {
            out.push(("decay", at..at + 2));
        }
        at += 2;
    }
    out.push(("w_out", at..at + net.w_out.len()));
    out
}

/// Worst per-block relative error, ignoring blocks named in `skip`.
fn blockwise_err(net: &Network, got: &[f64], want: &[f64], skip: &[&str]) -> f64 {
    block_ranges(net)
        .into_iter()
        .filter(|(name, _)| !skip.contains(name))
        .map(|(_, r)| max_rel_err(&got[r.clone()], &want[r]))
        .fold(0.0, f64::max)
}

/// Single feedforward hidden layer, reset disabled, per-step loss: online
/// and reverse-mode gradients must coincide.
pub fn feedforward_suite(instances: usize, seed: u64, opts: EpropOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let mut worst: f64 = 0.0;
    for n in 0..instances {
        let tag = ALL_TAGS[n % ALL_TAGS.len()];
        let pre = rng.random_range(1..=6);
        let post = rng.random_range(1..=8);
        let classes = rng.random_range(2..=4);
        let t_len = rng.random_range(1..=20);
        let b = rng.random_range(1..=3);
        let mut net = random_network(&mut rng, vec![pre, post, classes], tag, false)?;
        for p in &mut net.layers {
            p.kind = p.kind.without_reset();
        }
        let batch = random_batch(&mut rng, t_len, b, pre, classes);
        let online = online_gradients(&net, &batch, n as u64, opts)?;
        let (cache, _) = unroll_forward(&net, &batch, n as u64, 0)?;
        let reference = backward(&cache, &net)?.to_vector();
        worst = worst.max(blockwise_err(&net, &online, &reference, &["couplings"]));
    }
    Ok(SuiteReport {
        name: "feedforward",
        instances,
        max_rel_err: worst,
        tolerance: FEEDFORWARD_TOL,
    })
}

fn loss_at(net: &Network, batch: &SequenceBatch, seed: u64) -> Result<f64> {
    Ok(unroll_forward(net, batch, seed, 0)?.1)
}

/// Central differences of the loss for every trainable parameter.
pub fn finite_difference_gradient(net: &Network, batch: &SequenceBatch, seed: u64, eps: f64) -> Result<Vec<f64>> {
    let base = net.to_vector();
    let mask = net.trainable_mask(true);
    let mut probe = net.clone();
    let mut out = vec![0.0; base.len()];
    for k in 0..base.len() {
        if !mask[k] {
            continue;
        }
        let mut v = base.clone();
        v[k] = base[k] + eps;
        probe.set_from_vector(&v)?;
        let up = loss_at(&probe, batch, seed)?;
        v[k] = base[k] - eps;
        probe.set_from_vector(&v)?;
        let down = loss_at(&probe, batch, seed)?;
        out[k] = (up - down) / (2.0 * eps);
    }
    Ok(out)
}

/// `v_th = ∞` with the readout on the soma potential: the loss is smooth, so
/// reverse mode must match central differences. For the modified variant
/// the online decay gradients are checked the same way.
pub fn finite_difference_suite(instances: usize, seed: u64, opts: EpropOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00fd_00fd);
    let mut worst: f64 = 0.0;
    for n in 0..instances {
        let tag = ALL_TAGS[n % ALL_TAGS.len()];
        let pre = rng.random_range(1..=4);
        let post = rng.random_range(1..=5);
        let classes = rng.random_range(2..=3);
        let t_len = rng.random_range(1..=12);
        let b = rng.random_range(1..=2);
        let recurrent = rng.random_bool(0.5);
        let mut net = random_network(&mut rng, vec![pre, post, classes], tag, recurrent)?;
        net.readout_source = ReadoutSource::Soma;
        for p in &mut net.layers {
            p.v_th = f64::INFINITY;
            // Keep the clamp away from its kinks so the loss is differentiable.
            p.alpha1 = p.alpha1.min(0.95);
            p.alpha2 = p.alpha2.min(0.95);
        }
        let batch = random_batch(&mut rng, t_len, b, pre, classes);
        let seed_n = n as u64;
        let (cache, _) = unroll_forward(&net, &batch, seed_n, 0)?;
        let analytic = backward(&cache, &net)?.to_vector();
        let numeric = finite_difference_gradient(&net, &batch, seed_n, FD_EPS)?;
        let mask = net.trainable_mask(true);
        let pick = |v: &[f64]| -> Vec<f64> { v.iter().zip(&mask).map(|(x, &m)| if m { *x } else { 0.0 }).collect() };
        let (a, f) = (pick(&analytic), pick(&numeric));
        worst = worst.max(blockwise_err(&net, &a, &f, &[]));

        if tag == NeuronTag::TclifModified {
            let online = online_gradients(&net, &batch, seed_n, opts)?;
            let decay = block_ranges(&net)
                .into_iter()
                .filter(|(name, _)| *name == "decay")
                .map(|(_, r)| max_rel_err(&online[r.clone()], &numeric[r]))
                .fold(0.0, f64::max);
            worst = worst.max(decay);
        }
    }
    Ok(SuiteReport {
        name: "finite_difference",
        instances,
        max_rel_err: worst,
        tolerance: FD_TOL,
    })
}

/// Finite-difference Jacobian of one two-compartment step in `(v_d, v_s)`
/// with the previous spikes held fixed.
pub fn numeric_state_jacobian(c: &StepCoeffs, h: [f64; 2], i_t: f64, eps: f64) -> [[f64; 2]; 2] {
    let f = |vd: f64, vs: f64| {
        let d = c.a_d * vd + c.beta1 * vs + i_t;
        [d, c.a_s * vs + c.beta2 * d]
    };
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        let (mut up, mut dn) = (h, h);
        up[k] += eps;
        dn[k] -= eps;
        let (fu, fd) = (f(up[0], up[1]), f(dn[0], dn[1]));
        for r in 0..2 {
            out[r][k] = (fu[r] - fd[r]) / (2.0 * eps);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_small_runs() {
        assert!(recursion_suite(12, 1).unwrap().passed());
        assert!(feedforward_suite(8, 1, EpropOptions::default()).unwrap().passed());
        let fd = finite_difference_suite(8, 1, EpropOptions::default()).unwrap();
        assert!(fd.passed(), "{fd:?}");
    }

    #[test]
    #[ignore]
    fn print_full() {
        for r in run_all(&GradcheckOptions::default()).unwrap() {
            println!("{r:?}");
        }
    }

    #[test]
    fn inverted_traces_are_caught() {
        let opts = EpropOptions {
            invert_traces: true,
            ..EpropOptions::default()
        };
        assert!(!feedforward_suite(4, 1, opts).unwrap().passed());
    }
}
