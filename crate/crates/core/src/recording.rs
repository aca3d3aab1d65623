//! Multichannel recordings, cropped trials, and the binary recording
//! container.
//!
//! Container layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "PDRC"
//! version      u32      1
//! subject_id   u32 length + UTF-8 bytes
//! sample_rate  f64      Hz
//! n_channels   u32
//! n_samples    u64      samples per channel
//! names        n_channels × (u32 length + UTF-8 bytes)
//! samples      n_channels × n_samples f32, channel-major
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fsutil::{self, binstr};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"PDRC";
const VERSION: u32 = 1;

/// Continuous data of one subject, `channels × time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording<T> {
    pub subject_id: String,
    pub sample_rate: f64,
    pub channels: Vec<String>,
    pub samples: Array2<T>,
}

impl<T: Scalar> Recording<T> {
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate: f64,
        channels: Vec<String>,
        samples: Array2<T>,
    ) -> Result<Self> {
        let rec = Self {
            subject_id: subject_id.into(),
            sample_rate,
            channels,
            samples,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Data(format!(
                "{}: sample rate must be positive, got {}",
                self.subject_id, self.sample_rate
            )));
        }
        if self.samples.nrows() != self.channels.len() {
            return Err(Error::Data(format!(
                "{}: {} sample rows for {} channels",
                self.subject_id,
                self.samples.nrows(),
                self.channels.len()
            )));
        }
        if let Some(pos) = self.samples.iter().position(|v| !v.is_finite()) {
            let c = pos / self.samples.ncols().max(1);
            return Err(Error::Data(format!(
                "{}: non-finite sample on channel {}",
                self.subject_id, self.channels[c]
            )));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// Same recording at another precision.
    pub fn cast<U: Scalar>(&self) -> Recording<U> {
        Recording {
            subject_id: self.subject_id.clone(),
            sample_rate: self.sample_rate,
            channels: self.channels.clone(),
            samples: self.samples.mapv(|v| U::of(v.as_f64())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.samples.len() * 4);
        out.extend_from_slice(MAGIC);
        out.write_u32::<LE>(VERSION).unwrap();
        binstr::write(&mut out, &self.subject_id).unwrap();
        out.write_f64::<LE>(self.sample_rate).unwrap();
        out.write_u32::<LE>(self.channels.len() as u32).unwrap();
        out.write_u64::<LE>(self.n_samples() as u64).unwrap();
        for name in &self.channels {
            binstr::write(&mut out, name).unwrap();
        }
        for row in self.samples.rows() {
            for &v in row {
                out.write_f32::<LE>(v.as_f64() as f32).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(origin, reason);
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a recording container"));
        }
        let version = r.read_u32::<LE>().map_err(|_| bad("truncated header"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let subject_id = binstr::read(&mut r).map_err(|_| bad("bad subject id"))?;
        let sample_rate = r.read_f64::<LE>().map_err(|_| bad("truncated header"))?;
        let n_channels = r.read_u32::<LE>().map_err(|_| bad("truncated header"))? as usize;
        let n_samples = r.read_u64::<LE>().map_err(|_| bad("truncated header"))? as usize;
        let mut channels = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            channels.push(binstr::read(&mut r).map_err(|_| bad("bad channel name"))?);
        }
        let expected = n_channels
            .checked_mul(n_samples)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("header sizes overflow"))?;
        let rest = &bytes[r.position() as usize..];
        if rest.len() != expected {
            return Err(bad(&format!(
                "expected {expected} sample bytes, found {}",
                rest.len()
            )));
        }
        let data: Vec<T> = rest
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let samples = Array2::from_shape_vec((n_channels, n_samples), data)
            .map_err(|_| bad("sample block shape"))?;
        Self::new(subject_id, sample_rate, channels, samples)
            .map_err(|e| bad(&e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?, path)
    }

    /// Imports delimited text: a header row of channel names, then one row
    /// per sample with one column per channel. Commas, semicolons, tabs and
    /// spaces all separate fields.
    pub fn from_delimited_text(
        text: &str,
        subject_id: &str,
        sample_rate: f64,
    ) -> Result<Self> {
        let split = |line: &str| -> Vec<String> {
            line.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("delimited text has no header row".into()))?;
        let channels = split(header);
        let n_channels = channels.len();
        let mut columns: Vec<Vec<T>> = vec![Vec::new(); n_channels];
        for (i, line) in lines.enumerate() {
            let fields = split(line);
            if fields.len() != n_channels {
                return Err(Error::Data(format!(
                    "row {} has {} fields, header has {n_channels}",
                    i + 2,
                    fields.len()
                )));
            }
            for (col, field) in columns.iter_mut().zip(&fields) {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Data(format!("row {}: `{field}` is not a number", i + 2))
                })?;
                col.push(T::of(v));
            }
        }
        let n_samples = columns.first().map_or(0, Vec::len);
        let data: Vec<T> = columns.into_iter().flatten().collect();
        let samples = Array2::from_shape_vec((n_channels, n_samples), data)
            .map_err(|_| Error::Data("ragged delimited text".into()))?;
        Self::new(subject_id, sample_rate, channels, samples)
    }
}

/// A 3-second labelled segment cropped from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial<T> {
    pub subject_id: String,
    pub session: u32,
    pub label: u8,
    pub sample_rate: f64,
    pub samples: Array2<T>,
}

impl<T: Scalar> Trial<T> {
    pub fn new(
        subject_id: impl Into<String>,
        session: u32,
        label: u8,
        sample_rate: f64,
        samples: Array2<T>,
    ) -> Result<Self> {
        if !(1..=9).contains(&label) {
            return Err(Error::Data(format!("trial label {label} outside 1..=9")));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            session,
            label,
            sample_rate,
            samples,
        })
    }
}

/// One row of a trial-events sidecar: onset sample, key label, session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialEvent {
    pub onset: usize,
    pub label: u8,
    pub session: u32,
}

/// Serializes events as `onset,label,session` lines under a header.
pub fn events_to_text(events: &[TrialEvent]) -> String {
    let mut out = String::from("onset,label,session\n");
    for e in events {
        out.push_str(&format!("{},{},{}\n", e.onset, e.label, e.session));
    }
    out
}

pub fn events_from_text(text: &str, origin: &Path) -> Result<Vec<TrialEvent>> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (f.len() == 3)
            .then(|| Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?)))
            .flatten();
        let (onset, label, session) = parsed
            .ok_or_else(|| Error::format(origin, format!("line {}: expected onset,label,session", i + 1)))?;
        if !(1..=9).contains(&label) {
            return Err(Error::format(origin, format!("line {}: label {label} outside 1..=9", i + 1)));
        }
        events.push(TrialEvent { onset, label, session });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Recording<f64> {
        Recording::new(
            "S01",
            500.0,
            vec!["C3".into(), "C4".into()],
            array![[1.0, 2.0, 3.5], [-1.0, 0.25, 8.0]],
        )
        .unwrap()
    }

    #[test]
    fn container_round_trip() {
        let rec = toy();
        let back = Recording::<f64>::from_bytes(&rec.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn container_header_is_little_endian() {
        let bytes = toy().to_bytes();
        assert_eq!(&bytes[..4], b"PDRC");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
        assert_eq!(&bytes[12..15], b"S01");
        assert_eq!(&bytes[15..23], &500.0f64.to_le_bytes());
        let tail = &bytes[bytes.len() - 4..];
        assert_eq!(tail, &8.0f32.to_le_bytes());
    }

    #[test]
    fn container_rejects_corruption() {
        let mut bytes = toy().to_bytes();
        bytes.pop();
        assert!(Recording::<f64>::from_bytes(&bytes, Path::new("x")).is_err());
        let mut bytes = toy().to_bytes();
        bytes[0] = b'X';
        assert!(Recording::<f64>::from_bytes(&bytes, Path::new("x")).is_err());
    }

    #[test]
    fn invariants_checked() {
        assert!(Recording::new("S", 0.0, vec!["A".into()], array![[1.0f64]]).is_err());
        assert!(Recording::new("S", 10.0, vec!["A".into()], array![[1.0f64], [2.0]]).is_err());
        assert!(Recording::new("S", 10.0, vec!["A".into()], array![[f64::NAN]]).is_err());
        assert!(Trial::new("S", 1, 10, 10.0, array![[1.0f64]]).is_err());
    }

    #[test]
    fn delimited_import() {
        let text = "C3,C4\n1,2\n3,4\n5,6\n";
        let rec = Recording::<f32>::from_delimited_text(text, "S02", 250.0).unwrap();
        assert_eq!(rec.samples, array![[1.0f32, 3.0, 5.0], [2.0, 4.0, 6.0]]);
        assert!(Recording::<f32>::from_delimited_text("A B\n1\n", "S", 1.0).is_err());
        assert!(Recording::<f32>::from_delimited_text("A\nx\n", "S", 1.0).is_err());
    }

    #[test]
    fn events_round_trip() {
        let ev = vec![
            TrialEvent { onset: 10, label: 3, session: 1 },
            TrialEvent { onset: 2000, label: 9, session: 2 },
        ];
        let back = events_from_text(&events_to_text(&ev), Path::new("e")).unwrap();
        assert_eq!(back, ev);
        assert!(events_from_text("h\n1,0,1\n", Path::new("e")).is_err());
    }
}
