//! Dataset readers and the dense sequence batches fed to the trainers.

pub mod idx;
pub mod sequence;
pub mod spkev;

use std::path::Path;

use crate::error::{Error, Result};

pub use idx::{decode_mnist, encode_idx, load_mnist_idx, parse_idx, IdxArray, MnistSet};
pub use sequence::{dechunk, permute, sequentialize, PermutationSpec};
pub use spkev::{
    bin_events, decode_spike_events, encode_spike_events, load_spike_events, EventStream, SpikeDataset,
};

/// Dense inputs laid out `T × batch × input_dim`, plus one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
    pub t_len: usize,
    pub input_dim: usize,
}

impl SequenceBatch {
    pub fn new(x: Vec<f64>, labels: Vec<usize>, t_len: usize, input_dim: usize) -> Result<Self> {
        let needed = t_len * labels.len() * input_dim;
        if x.len() != needed {
            return Err(Error::Shape {
                context: "sequence batch",
                expected: needed,
                actual: x.len(),
            });
        }
        Ok(Self {
            x,
            labels,
            t_len,
            input_dim,
        })
    }

    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    /// Inputs at step `t`, `batch × input_dim` row-major.
    pub fn step(&self, t: usize) -> &[f64] {
        let n = self.batch() * self.input_dim;
        &self.x[t * n..(t + 1) * n]
    }

    /// Stacks per-sample `T × D` sequences.
    pub fn from_samples(samples: &[(Vec<f64>, usize)], t_len: usize, input_dim: usize) -> Result<Self> {
        let b = samples.len();
        let mut x = vec![0.0; t_len * b * input_dim];
        for (j, (seq, _)) in samples.iter().enumerate() {
            crate::error::check_len("sample sequence", t_len * input_dim, seq.len())?;
            for t in 0..t_len {
                let dst = (t * b + j) * input_dim;
                x[dst..dst + input_dim].copy_from_slice(&seq[t * input_dim..(t + 1) * input_dim]);
            }
        }
        Self::new(x, samples.iter().map(|s| s.1).collect(), t_len, input_dim)
    }
}

/// Anything that can hand out labelled fixed-length sequences by index.
pub trait SequenceSource {
    fn len(&self) -> usize;
    fn t_len(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    /// `T × input_dim` values for sample `i`.
    fn sequence(&self, i: usize) -> Vec<f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, indices: &[usize]) -> Result<SequenceBatch> {
        let samples: Vec<_> = indices.iter().map(|&i| (self.sequence(i), self.label(i))).collect();
        SequenceBatch::from_samples(&samples, self.t_len(), self.input_dim())
    }
}

/// Sequential (optionally pixel-permuted) MNIST.
#[derive(Debug, Clone)]
pub struct MnistSequences {
    pub set: MnistSet,
    pub frame_size: usize,
    pub permutation: Option<PermutationSpec>,
}

impl MnistSequences {
    pub fn new(set: MnistSet, frame_size: usize, permutation: Option<PermutationSpec>) -> Result<Self> {
        let n = set.pixels();
        if frame_size == 0 || frame_size > n {
            return Err(Error::Parameter(format!("frame size must lie in 1..={n}, got {frame_size}")));
        }
        if let Some(p) = &permutation {
            p.validate()?;
            check_perm_len(p, n)?;
        }
        Ok(Self {
            set,
            frame_size,
            permutation,
        })
    }

    /// Loads `{train,t10k}-images-idx3-ubyte` and the matching labels from `dir`.
    pub fn load_split(dir: &Path, train: bool) -> Result<MnistSet> {
        let prefix = if train { "train" } else { "t10k" };
        load_mnist_idx(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
        )
    }
}

fn check_perm_len(p: &PermutationSpec, n: usize) -> Result<()> {
    if p.perm.len() != n {
        return Err(Error::Parameter(format!(
            "permutation covers {} positions, image has {n}",
            p.perm.len()
        )));
    }
    Ok(())
}

impl SequenceSource for MnistSequences {
    fn len(&self) -> usize {
        self.set.len()
    }

    fn t_len(&self) -> usize {
        self.set.pixels().div_ceil(self.frame_size)
    }

    fn input_dim(&self) -> usize {
        self.frame_size
    }

    fn num_classes(&self) -> usize {
        10
    }

    fn label(&self, i: usize) -> usize {
        usize::from(self.set.labels[i])
    }

    fn sequence(&self, i: usize) -> Vec<f64> {
        let img = self.set.image_f64(i);
        let img = match &self.permutation {
            Some(p) => permute(&img, p),
            None => img,
        };
        sequentialize(&img, self.frame_size).expect("frame size checked at construction").1
    }
}

/// Spike-event samples binned into dense frames.
#[derive(Debug, Clone)]
pub struct SpikeSequences {
    pub data: SpikeDataset,
    pub num_bins: usize,
    pub clamp: bool,
}

impl SpikeSequences {
    pub fn new(data: SpikeDataset, num_bins: usize, clamp: bool) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::Parameter("num_bins must be at least 1".into()));
        }
        Ok(Self { data, num_bins, clamp })
    }

    pub fn truncate(&mut self, n: usize) {
        self.data.samples.truncate(n);
    }
}

impl SequenceSource for SpikeSequences {
    fn len(&self) -> usize {
        self.data.samples.len()
    }

    fn t_len(&self) -> usize {
        self.num_bins
    }

    fn input_dim(&self) -> usize {
        self.data.num_channels as usize
    }

    fn num_classes(&self) -> usize {
        self.data.num_classes().max(20)
    }

    fn label(&self, i: usize) -> usize {
        self.data.samples[i].label as usize
    }

    fn sequence(&self, i: usize) -> Vec<f64> {
        bin_events(
            &self.data.samples[i],
            self.num_bins,
            self.input_dim(),
            self.data.sample_duration_us,
            self.clamp,
        )
        .expect("channels validated on load")
        .as_slice()
        .to_vec()
    }
}

/// Pre-built sequences held in memory; handy for tests and synthetic tasks.
#[derive(Debug, Clone)]
pub struct InMemorySequences {
    pub samples: Vec<(Vec<f64>, usize)>,
    pub t_len: usize,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl InMemorySequences {
    pub fn new(samples: Vec<(Vec<f64>, usize)>, t_len: usize, input_dim: usize, num_classes: usize) -> Result<Self> {
        for (seq, label) in &samples {
            crate::error::check_len("sample sequence", t_len * input_dim, seq.len())?;
            if *label >= num_classes {
                return Err(Error::Parameter(format!("label {label} outside 0..{num_classes}")));
            }
        }
        Ok(Self {
            samples,
            t_len,
            input_dim,
            num_classes,
        })
    }
}

impl SequenceSource for InMemorySequences {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn t_len(&self) -> usize {
        self.t_len
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn label(&self, i: usize) -> usize {
        self.samples[i].1
    }

    fn sequence(&self, i: usize) -> Vec<f64> {
        self.samples[i].0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_layout_is_time_major() {
        let samples = vec![(vec![1.0, 2.0, 3.0, 4.0], 0), (vec![5.0, 6.0, 7.0, 8.0], 1)];
        let b = SequenceBatch::from_samples(&samples, 2, 2).unwrap();
        assert_eq!(b.step(0), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(b.step(1), &[3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn mnist_source_frames() {
        let set = MnistSet {
            rows: 28,
            cols: 28,
            images: (0..784).map(|v| (v % 256) as u8).collect(),
            labels: vec![3],
        };
        let src = MnistSequences::new(set, 28, None).unwrap();
        assert_eq!((src.t_len(), src.input_dim()), (28, 28));
        let b = src.batch(&[0]).unwrap();
        assert_eq!(b.step(1)[0], 28.0 / 255.0);
        assert_eq!(b.labels, vec![3]);
    }

    #[test]
    fn in_memory_rejects_bad_labels() {
        assert!(InMemorySequences::new(vec![(vec![0.0], 2)], 1, 1, 2).is_err());
    }
}
