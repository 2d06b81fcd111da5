//! `SPKEV1` spike-event container and time binning.
//!
//! Little-endian layout: magic `"SPKEV1\0\0"`, `u32` version (1), `u32`
//! sample count, `u32` channel count, `u64` sample duration in µs; then per
//! sample `u32` label, `u32` event count and that many `(u64 time_us,
//! u16 channel)` pairs; finally a `u32` CRC32 of every preceding byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"SPKEV1\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    /// `(time_us, channel)`, sorted by time after loading.
    pub events: Vec<(u64, u16)>,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeDataset {
    pub num_channels: u32,
    /// Zero means "unknown"; binning then falls back to each sample's last
    /// event time.
    pub sample_duration_us: u64,
    pub samples: Vec<EventStream>,
}

impl SpikeDataset {
    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.label as usize + 1).max().unwrap_or(0)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Length {
                needed: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_spike_events(bytes: &[u8]) -> Result<SpikeDataset> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing SPKEV1 magic".into()));
    }
    if bytes.len() < MAGIC.len() + 4 + 4 {
        return Err(Error::Length {
            needed: MAGIC.len() + 8,
            found: bytes.len(),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);

    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SPKEV version {version}")));
    }
    if stored != computed {
        return Err(Error::Corruption { stored, computed });
    }
    let num_samples = r.u32()? as usize;
    let num_channels = r.u32()?;
    let sample_duration_us = r.u64()?;
    let mut samples = Vec::with_capacity(num_samples.min(1 << 20));
    for _ in 0..num_samples {
        let label = r.u32()?;
        let n = r.u32()? as usize;
        let mut events = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let time = r.u64()?;
            let ch = r.u16()?;
            if u32::from(ch) >= num_channels {
                return Err(Error::Format(format!("channel {ch} outside 0..{num_channels}")));
            }
            events.push((time, ch));
        }
        events.sort_by_key(|e| e.0);
        samples.push(EventStream { events, label });
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(SpikeDataset {
        num_channels,
        sample_duration_us,
        samples,
    })
}

pub fn encode_spike_events(ds: &SpikeDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.samples.len() as u32).to_le_bytes());
    out.extend_from_slice(&ds.num_channels.to_le_bytes());
    out.extend_from_slice(&ds.sample_duration_us.to_le_bytes());
    for s in &ds.samples {
        out.extend_from_slice(&s.label.to_le_bytes());
        out.extend_from_slice(&(s.events.len() as u32).to_le_bytes());
        for &(t, ch) in &s.events {
            out.extend_from_slice(&t.to_le_bytes());
            out.extend_from_slice(&ch.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn load_spike_events(path: impl AsRef<Path>) -> Result<SpikeDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::MissingData(format!("{}: {e}", path.display())))?;
    decode_spike_events(&bytes)
}

/// Counts events per `(bin, channel)`; bin `b` holds events with
/// `floor(time/duration·num_bins) = b`, late events go to the last bin.
/// With `clamp` the counts are clipped to `{0, 1}`.
pub fn bin_events(
    stream: &EventStream,
    num_bins: usize,
    num_channels: usize,
    duration_us: u64,
    clamp: bool,
) -> Result<Matrix> {
    if num_bins == 0 {
        return Err(Error::Parameter("num_bins must be at least 1".into()));
    }
    let duration = if duration_us > 0 {
        duration_us
    } else {
        stream.events.iter().map(|e| e.0).max().unwrap_or(0).max(1)
    };
    let mut out = Matrix::zeros(num_bins, num_channels);
    for &(t, ch) in &stream.events {
        let ch = usize::from(ch);
        if ch >= num_channels {
            return Err(Error::Format(format!("channel {ch} outside 0..{num_channels}")));
        }
        let b = ((t as u128 * num_bins as u128) / duration as u128) as usize;
        let b = b.min(num_bins - 1);
        out[(b, ch)] += 1.0;
    }
    if clamp {
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.min(1.0));
    }
    Ok(out)
}
