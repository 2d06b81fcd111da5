use crate::network::Network;
use crate::tensor::Matrix;

/// Gradient of one hidden layer. `decay` holds the two learnable decay
/// parameters (`α1, α2` or `a_d, a_s`), `couplings` the gradients for
/// `c1, c2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w_in: Matrix,
    pub w_rec: Option<Matrix>,
    pub bias: Vec<f64>,
    pub decay: [f64; 2],
    pub couplings: [f64; 2],
}

/// Per-parameter gradient sums, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator {
    pub layers: Vec<LayerGrads>,
    pub w_out: Matrix,
}

impl GradAccumulator {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|p| LayerGrads {
                w_in: Matrix::zeros(p.post(), p.pre()),
                w_rec: p.w_rec.as_ref().map(|w| Matrix::zeros(w.rows(), w.cols())),
                bias: vec![0.0; p.post()],
                decay: [0.0; 2],
                couplings: [0.0; 2],
            })
            .collect();
        Self {
            layers,
            w_out: Matrix::zeros(net.w_out.rows(), net.w_out.cols()),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.w_in.fill(0.0);
            if let Some(w) = l.w_rec.as_mut() {
                w.fill(0.0);
            }
            l.bias.iter_mut().for_each(|v| *v = 0.0);
            l.decay = [0.0; 2];
            l.couplings = [0.0; 2];
        }
        self.w_out.fill(0.0);
    }

    /// Flattens in the same order as [`Network::to_vector`].
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.w_in.as_slice());
            if let Some(w) = &l.w_rec {
                out.extend_from_slice(w.as_slice());
            }
            out.extend_from_slice(&l.bias);
            out.extend_from_slice(&l.couplings);
            out.extend_from_slice(&l.decay);
        }
        out.extend_from_slice(self.w_out.as_slice());
        out
    }

    pub fn stored_reals(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w_in.len() + l.w_rec.as_ref().map_or(0, Matrix::len) + l.bias.len() + 4)
            .sum::<usize>()
            + self.w_out.len()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w_in.as_mut_slice().iter_mut().for_each(|v| *v *= k);
            if let Some(w) = l.w_rec.as_mut() {
                w.as_mut_slice().iter_mut().for_each(|v| *v *= k);
            }
            l.bias.iter_mut().for_each(|v| *v *= k);
            l.decay.iter_mut().for_each(|v| *v *= k);
            l.couplings.iter_mut().for_each(|v| *v *= k);
        }
        self.w_out.as_mut_slice().iter_mut().for_each(|v| *v *= k);
    }
}
