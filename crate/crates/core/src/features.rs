//! Trial × feature matrices with their outlier mask, row metadata, and the
//! binary feature-matrix file.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "PDFM", version u32 = 1
//! layout       n_channels u32, trial_len f64, window_len f64, window_step f64
//! channels     n_channels × string
//! shape        n_rows u64, n_cols u64
//! bands        n u32, then n × (subject string, mu low f64, mu high f64,
//!              beta low f64, beta high f64)
//! rows         n_rows × (subject string, session u32, label u8)
//! values       n_rows × n_cols f64, row-major
//! mask         ceil(n_rows·n_cols / 8) bytes, row-major bits, LSB first
//! norm flag    u8; when 1: n_subjects u32, then per subject: name string,
//!              means n_cols × f64, stds n_cols × f64, constant-flag bits
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8.

use std::fmt::Write as _;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fsutil::{self, binstr};
use crate::layout::{BandKind, FeatureLayout, Slot};
use crate::robust::NormalizationParams;
use crate::scalar::Scalar;
use crate::spectral::{Band, SubjectBands};

const MAGIC: &[u8; 4] = b"PDFM";
const VERSION: u32 = 1;

/// Per-row metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowMeta {
    pub subject_id: String,
    pub session: u32,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub layout: FeatureLayout,
    pub channels: Vec<String>,
    pub values: Array2<T>,
    pub outlier_mask: Array2<bool>,
    pub meta: Vec<RowMeta>,
    pub bands: Vec<SubjectBands>,
    pub normalization: Option<NormalizationParams<T>>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(
        layout: FeatureLayout,
        channels: Vec<String>,
        values: Array2<T>,
        meta: Vec<RowMeta>,
        bands: Vec<SubjectBands>,
    ) -> Result<Self> {
        if channels.len() != layout.n_channels() {
            return Err(Error::Data(format!(
                "{} channel names for a {}-channel layout",
                channels.len(),
                layout.n_channels()
            )));
        }
        if values.ncols() != layout.total_features() || values.nrows() != meta.len() {
            return Err(Error::Data(format!(
                "feature block {}×{} does not match {} rows × {} features",
                values.nrows(),
                values.ncols(),
                meta.len(),
                layout.total_features()
            )));
        }
        if let Some(m) = meta.iter().find(|m| !(1..=9).contains(&m.label)) {
            return Err(Error::Data(format!("row label {} outside 1..=9", m.label)));
        }
        let mask = Array2::from_elem(values.raw_dim(), false);
        Ok(Self {
            layout,
            channels,
            values,
            outlier_mask: mask,
            meta,
            bands,
            normalization: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.meta.iter().map(|m| m.label).collect()
    }

    /// Subjects in order of first appearance.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in &self.meta {
            if out.last() != Some(&m.subject_id) && !out.contains(&m.subject_id) {
                out.push(m.subject_id.clone());
            }
        }
        out
    }

    pub fn rows_of(&self, subject: &str) -> Vec<usize> {
        self.meta
            .iter()
            .enumerate()
            .filter(|(_, m)| m.subject_id == subject)
            .map(|(i, _)| i)
            .collect()
    }

    /// Human-readable column name, e.g. `C3_beta_w07` or `C3_mu_whole`.
    pub fn feature_name(&self, index: usize) -> Result<String> {
        let (c, band, slot) = self.layout.feature_coords(index)?;
        Ok(match slot {
            Slot::Window(w) => format!("{}_{}_w{w:02}", self.channels[c], band.name()),
            Slot::Whole => format!("{}_{}_whole", self.channels[c], band.name()),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.values.dim();
        let mut out = Vec::with_capacity(64 + rows * cols * 8 + rows * cols / 8);
        out.extend_from_slice(MAGIC);
        out.write_u32::<LE>(VERSION).unwrap();
        out.write_u32::<LE>(self.layout.n_channels() as u32).unwrap();
        out.write_f64::<LE>(self.layout.trial_len()).unwrap();
        out.write_f64::<LE>(self.layout.window_len()).unwrap();
        out.write_f64::<LE>(self.layout.window_step()).unwrap();
        for c in &self.channels {
            binstr::write(&mut out, c).unwrap();
        }
        out.write_u64::<LE>(rows as u64).unwrap();
        out.write_u64::<LE>(cols as u64).unwrap();
        out.write_u32::<LE>(self.bands.len() as u32).unwrap();
        for b in &self.bands {
            binstr::write(&mut out, &b.subject_id).unwrap();
            for v in [b.mu.low, b.mu.high, b.beta.low, b.beta.high] {
                out.write_f64::<LE>(v).unwrap();
            }
        }
        for m in &self.meta {
            binstr::write(&mut out, &m.subject_id).unwrap();
            out.write_u32::<LE>(m.session).unwrap();
            out.write_u8(m.label).unwrap();
        }
        for &v in self.values.iter() {
            out.write_f64::<LE>(v.as_f64()).unwrap();
        }
        out.extend(pack_bits(self.outlier_mask.iter().copied()));
        match &self.normalization {
            None => out.write_u8(0).unwrap(),
            Some(p) => {
                out.write_u8(1).unwrap();
                out.write_u32::<LE>(p.subjects.len() as u32).unwrap();
                for (s, subject) in p.subjects.iter().enumerate() {
                    binstr::write(&mut out, subject).unwrap();
                    for &v in p.mean.row(s) {
                        out.write_f64::<LE>(v.as_f64()).unwrap();
                    }
                    for &v in p.std.row(s) {
                        out.write_f64::<LE>(v.as_f64()).unwrap();
                    }
                    out.extend(pack_bits(p.constant.row(s).iter().copied()));
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(origin, reason);
        let trunc = |_| Error::format(origin, "truncated feature file");
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(bad("not a feature matrix file"));
        }
        let version = r.read_u32::<LE>().map_err(trunc)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n_channels = r.read_u32::<LE>().map_err(trunc)? as usize;
        let trial_len = r.read_f64::<LE>().map_err(trunc)?;
        let window_len = r.read_f64::<LE>().map_err(trunc)?;
        let window_step = r.read_f64::<LE>().map_err(trunc)?;
        let layout = FeatureLayout::with_timing(n_channels, trial_len, window_len, window_step)
            .map_err(|e| bad(&e.to_string()))?;
        let channels = (0..n_channels)
            .map(|_| binstr::read(&mut r))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(trunc)?;
        let rows = r.read_u64::<LE>().map_err(trunc)? as usize;
        let cols = r.read_u64::<LE>().map_err(trunc)? as usize;
        if cols != layout.total_features() {
            return Err(bad("column count disagrees with the layout"));
        }
        let n_bands = r.read_u32::<LE>().map_err(trunc)? as usize;
        let mut bands = Vec::with_capacity(n_bands);
        for _ in 0..n_bands {
            let subject_id = binstr::read(&mut r).map_err(trunc)?;
            let mut v = [0.0; 4];
            for x in &mut v {
                *x = r.read_f64::<LE>().map_err(trunc)?;
            }
            let band = |lo, hi| Band::new(lo, hi).map_err(|e| bad(&e.to_string()));
            bands.push(SubjectBands {
                subject_id,
                mu: band(v[0], v[1])?,
                beta: band(v[2], v[3])?,
            });
        }
        let mut meta = Vec::with_capacity(rows);
        for _ in 0..rows {
            let subject_id = binstr::read(&mut r).map_err(trunc)?;
            let session = r.read_u32::<LE>().map_err(trunc)?;
            let label = r.read_u8().map_err(trunc)?;
            meta.push(RowMeta { subject_id, session, label });
        }
        let cells = rows.checked_mul(cols).ok_or_else(|| bad("shape overflow"))?;
        if bytes.len() < r.position() as usize + cells * 8 {
            return Err(bad("truncated value block"));
        }
        let mut data = Vec::with_capacity(cells);
        for _ in 0..cells {
            data.push(T::of(r.read_f64::<LE>().map_err(trunc)?));
        }
        let values = Array2::from_shape_vec((rows, cols), data).map_err(|_| bad("value shape"))?;
        let mask_bits = read_bits(&mut r, cells).map_err(trunc)?;
        let outlier_mask =
            Array2::from_shape_vec((rows, cols), mask_bits).map_err(|_| bad("mask shape"))?;
        let normalization = match r.read_u8().map_err(trunc)? {
            0 => None,
            1 => {
                let n = r.read_u32::<LE>().map_err(trunc)? as usize;
                let mut subjects = Vec::with_capacity(n);
                let mut mean = Array2::zeros((n, cols));
                let mut std = Array2::zeros((n, cols));
                let mut constant = Array2::from_elem((n, cols), false);
                for s in 0..n {
                    subjects.push(binstr::read(&mut r).map_err(trunc)?);
                    for v in mean.row_mut(s).iter_mut() {
                        *v = T::of(r.read_f64::<LE>().map_err(trunc)?);
                    }
                    for v in std.row_mut(s).iter_mut() {
                        *v = T::of(r.read_f64::<LE>().map_err(trunc)?);
                    }
                    let bits = read_bits(&mut r, cols).map_err(trunc)?;
                    constant.row_mut(s).iter_mut().zip(bits).for_each(|(c, b)| *c = b);
                }
                Some(NormalizationParams { subjects, mean, std, constant })
            }
            _ => return Err(bad("bad normalization flag")),
        };
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after feature matrix"));
        }
        let mut fm = Self::new(layout, channels, values, meta, bands)
            .map_err(|e| bad(&e.to_string()))?;
        fm.outlier_mask = outlier_mask;
        fm.normalization = normalization;
        Ok(fm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?, path)
    }

    /// Comma-separated debug export; masked cells carry a trailing `*`.
    pub fn to_delimited_text(&self) -> String {
        let mut out = String::from("subject,session,label");
        for f in 0..self.n_features() {
            out.push(',');
            out.push_str(&self.feature_name(f).expect("in range"));
        }
        out.push('\n');
        for (i, m) in self.meta.iter().enumerate() {
            let _ = write!(out, "{},{},{}", m.subject_id, m.session, m.label);
            for (v, &masked) in self.values.row(i).iter().zip(self.outlier_mask.row(i)) {
                let _ = write!(out, ",{v}{}", if masked { "*" } else { "" });
            }
            out.push('\n');
        }
        out
    }

    /// Per-feature outlier counts as delimited text.
    pub fn outlier_report(&self) -> String {
        let mut out = String::from("feature,name,channel,band,slot,outliers\n");
        for f in 0..self.n_features() {
            let (c, band, slot) = self.layout.feature_coords(f).expect("in range");
            let count = self.outlier_mask.column(f).iter().filter(|&&m| m).count();
            let slot = match slot {
                Slot::Window(w) => format!("w{w:02}"),
                Slot::Whole => "whole".into(),
            };
            let _ = writeln!(
                out,
                "{f},{},{},{},{slot},{count}",
                self.feature_name(f).expect("in range"),
                self.channels[c],
                band_label(band)
            );
        }
        out
    }
}

fn band_label(b: BandKind) -> &'static str {
    b.name()
}

fn pack_bits(bits: impl Iterator<Item = bool>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 8 == 0 {
            out.push(0);
        }
        if b {
            *out.last_mut().unwrap() |= 1 << (i % 8);
        }
    }
    out
}

fn read_bits<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<bool>> {
    let mut bytes = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}
