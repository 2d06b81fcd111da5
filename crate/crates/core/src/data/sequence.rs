//! Turning flat images into frame sequences, and the fixed pixel permutation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Splits `pixels` row-major into frames of `k` values, zero-padding the
/// last frame. Returns `(T, frames)` with `frames.len() == T·k`.
pub fn sequentialize(pixels: &[f64], k: usize) -> Result<(usize, Vec<f64>)> {
    if k == 0 || k > pixels.len() {
        return Err(Error::Parameter(format!(
            "frame size must lie in 1..={}, got {k}",
            pixels.len()
        )));
    }
    let t_len = pixels.len().div_ceil(k);
    let mut frames = pixels.to_vec();
    frames.resize(t_len * k, 0.0);
    Ok((t_len, frames))
}

/// Inverse of [`sequentialize`]: drops the tail padding.
pub fn dechunk(frames: &[f64], n: usize) -> Vec<f64> {
    frames[..n].to_vec()
}

/// A fixed permutation of pixel positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSpec {
    pub perm: Vec<usize>,
    pub seed: u64,
}

impl PermutationSpec {
    /// Deterministic shuffle of `0..n` driven by `seed`.
    pub fn from_seed(n: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { perm, seed }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.perm.len()];
        for &p in &self.perm {
            if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Parameter("permutation is not a bijection".into()));
            }
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self {
            perm: inv,
            seed: self.seed,
        }
    }
}

/// `out[i] = input[perm[i]]`.
pub fn permute<T: Copy>(input: &[T], spec: &PermutationSpec) -> Vec<T> {
    assert_eq!(input.len(), spec.perm.len(), "permutation length mismatch");
    spec.perm.iter().map(|&p| input[p]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Vec<f64> {
        (0..784).map(|v| (v % 256) as f64 / 255.0).collect()
    }

    #[test]
    fn whole_image_frame() {
        let img = image();
        let (t, f) = sequentialize(&img, 784).unwrap();
        assert_eq!(t, 1);
        assert_eq!(f, img);
    }

    #[test]
    fn rows_are_frames() {
        let img = image();
        let (t, f) = sequentialize(&img, 28).unwrap();
        assert_eq!(t, 28);
        for r in 0..28 {
            assert_eq!(&f[r * 28..(r + 1) * 28], &img[r * 28..(r + 1) * 28]);
        }
    }

    #[test]
    fn width_64_pads_48() {
        let img = image();
        let (t, f) = sequentialize(&img, 64).unwrap();
        assert_eq!(t, 13);
        assert_eq!(f.len() - img.len(), 48);
        assert!(f[784..].iter().all(|&v| v == 0.0));
        assert_eq!(dechunk(&f, 784), img);
    }

    #[test]
    fn bad_frame_size() {
        assert!(sequentialize(&image(), 0).is_err());
        assert!(sequentialize(&image(), 785).is_err());
    }

    #[test]
    fn permutation_group_properties() {
        let img = image();
        assert_eq!(permute(&img, &PermutationSpec::identity(784)), img);
        let spec = PermutationSpec::from_seed(784, 0);
        spec.validate().unwrap();
        let back = permute(&permute(&img, &spec), &spec.inverse());
        assert_eq!(back, img);
    }

    #[test]
    fn invalid_permutation() {
        let spec = PermutationSpec {
            perm: vec![0, 0, 2],
            seed: 0,
        };
        assert!(spec.validate().is_err());
    }
}
