use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::neurons::NeuronTag;
use crate::tensor::Matrix;

use super::TraceForm;

/// Per-neuron error signal `L_j[t]`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningSignal {
    pub l: Matrix,
}

/// What the readout integrates from the top hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutSource {
    /// Spikes `z` (the normal mode).
    #[default]
    Spikes,
    /// Somatic potential `v_s`, which keeps the network smooth; used for
    /// finite-difference checks in the subthreshold regime.
    Soma,
}

/// Non-spiking leaky readout `y' = κ·y + W_out·r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutState {
    pub y: Matrix,
    pub kappa: f64,
}

impl ReadoutState {
    pub fn zeros(batch: usize, classes: usize, kappa: f64) -> Self {
        Self {
            y: Matrix::zeros(batch, classes),
            kappa,
        }
    }
}

/// One readout update; `r` is `batch × hidden`.
pub fn readout_step(ro: &mut ReadoutState, w_out: &Matrix, r: &Matrix) -> Result<()> {
    check_len("readout rows", ro.y.rows(), r.rows())?;
    check_len("readout cols", w_out.cols(), r.cols())?;
    check_len("readout classes", w_out.rows(), ro.y.cols())?;
    let kappa = ro.kappa;
    for b in 0..r.rows() {
        let y = ro.y.row_mut(b);
        y.iter_mut().for_each(|v| *v *= kappa);
        w_out.matvec_acc(r.row(b), y);
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(y: &[f64]) -> Vec<f64> {
    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = y.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// Cross entropy of one sample and its gradient `p − onehot(target)`
/// with respect to the readout.
pub fn output_learning_signal(y: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= y.len() {
        return Err(Error::Parameter(format!(
            "target {target} out of range for {} classes",
            y.len()
        )));
    }
    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let loss = lse - y[target];
    let mut l = softmax(y);
    l[target] -= 1.0;
    Ok((loss, l))
}

/// Per-step loss over a batch.
pub struct StepLoss {
    /// Sum over the batch of the per-sample cross entropy (unscaled).
    pub loss_sum: f64,
    /// `scale·(p − onehot)`, `batch × classes`.
    pub l_out: Matrix,
    /// Softmax probabilities, `batch × classes`.
    pub probs: Matrix,
}

pub fn step_loss(y: &Matrix, labels: &[usize], scale: f64) -> Result<StepLoss> {
    check_len("labels", y.rows(), labels.len())?;
    let mut l_out = Matrix::zeros(y.rows(), y.cols());
    let mut probs = Matrix::zeros(y.rows(), y.cols());
    let mut loss_sum = 0.0;
    for (b, &target) in labels.iter().enumerate() {
        let (loss, l) = output_learning_signal(y.row(b), target)?;
        loss_sum += loss;
        for ((o, p), v) in l_out.row_mut(b).iter_mut().zip(probs.row_mut(b)).zip(&l) {
            *o = scale * v;
            *p = *v;
        }
        probs[(b, target)] += 1.0;
    }
    Ok(StepLoss {
        loss_sum,
        l_out,
        probs,
    })
}

/// Learning signal of the top hidden layer: `L = l_out·W_out`.
pub fn readout_learning_signal(l_out: &Matrix, w_out: &Matrix) -> LearningSignal {
    let mut l = Matrix::zeros(l_out.rows(), w_out.cols());
    for b in 0..l_out.rows() {
        w_out.matvec_t_acc(l_out.row(b), l.row_mut(b));
    }
    LearningSignal { l }
}

/// Pushes a learning signal one layer down at the same time step:
/// `L^l = W_upperᵀ·(L^{l+1} ⊙ ψ^{l+1}·k)` with `k = ∂(readout input)/∂I`
/// of the upper layer (β2 for the somatic contraction).
pub fn hidden_learning_signal(
    l_upper: &LearningSignal,
    w_upper: &Matrix,
    psi_upper: &Matrix,
    beta2_upper: f64,
    tag_upper: NeuronTag,
    form: TraceForm,
) -> Result<LearningSignal> {
    check_len("hidden signal rows", l_upper.l.rows(), psi_upper.rows())?;
    check_len("hidden signal width", w_upper.rows(), l_upper.l.cols())?;
    let k = form.current_gain(tag_upper, beta2_upper);
    let mut l = Matrix::zeros(l_upper.l.rows(), w_upper.cols());
    let mut scaled = vec![0.0; w_upper.rows()];
    for b in 0..l_upper.l.rows() {
        for ((s, &lu), &p) in scaled.iter_mut().zip(l_upper.l.row(b)).zip(psi_upper.row(b)) {
            *s = lu * p * k;
        }
        w_upper.matvec_t_acc(&scaled, l.row_mut(b));
    }
    Ok(LearningSignal { l })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn readout_memoryless_and_geometric() {
        let w = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let z = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let mut ro = ReadoutState::zeros(1, 1, 0.0);
        ro.y[(0, 0)] = 7.0;
        readout_step(&mut ro, &w, &z).unwrap();
        assert_eq!(ro.y[(0, 0)], 1.0);

        let mut ro = ReadoutState::zeros(1, 1, 0.9);
        readout_step(&mut ro, &w, &z).unwrap();
        readout_step(&mut ro, &w, &z).unwrap();
        assert!((ro.y[(0, 0)] - 1.9).abs() < 1e-15);

        ro.y[(0, 0)] = 1.0;
        for n in 1..=4 {
            readout_step(&mut ro, &w, &Matrix::zeros(1, 2)).unwrap();
            assert!((ro.y[(0, 0)] - 0.9f64.powi(n)).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let (loss, l) = output_learning_signal(&[0.3; 10], 4).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-14);
        for (c, v) in l.iter().enumerate() {
            let want = 0.1 - if c == 4 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_logit_gives_zero_loss() {
        let (loss, _) = output_learning_signal(&[0.0, 800.0, 0.0], 1).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn softmax_matches_high_precision() {
        // 30-digit reference values for y = (1, 2, 3)
        let (loss, l) = output_learning_signal(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((loss - 0.407_605_964_444_380_3).abs() < 1e-15);
        let p = [0.090_030_573_170_380_46, 0.244_728_471_054_797_65, 0.665_240_955_774_821_9];
        assert!((l[0] - p[0]).abs() < 1e-15);
        assert!((l[1] - p[1]).abs() < 1e-15);
        assert!((l[2] - (p[2] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn target_out_of_range() {
        assert!(output_learning_signal(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn hidden_signal_zero_and_scalar_chain() {
        let w = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let psi = Matrix::from_vec(1, 1, vec![0.8]).unwrap();
        let zero = LearningSignal { l: Matrix::zeros(1, 1) };
        let out = hidden_learning_signal(&zero, &w, &psi, 0.5, NeuronTag::TclifModified, TraceForm::Somatic).unwrap();
        assert_eq!(out.l[(0, 0)], 0.0);
        let one = LearningSignal {
            l: Matrix::from_vec(1, 1, vec![2.0]).unwrap(),
        };
        let out = hidden_learning_signal(&one, &w, &psi, 0.5, NeuronTag::TclifModified, TraceForm::Somatic).unwrap();
        assert!((out.l[(0, 0)] - 2.0 * 0.8 * 0.5).abs() < 1e-15);
        let out = hidden_learning_signal(&one, &w, &psi, 0.5, NeuronTag::Lif, TraceForm::TwoCompartment).unwrap();
        assert!((out.l[(0, 0)] - 2.0 * 0.8).abs() < 1e-15);
    }
}
