//! Electrode montages: channel names, projected scalp positions and the
//! neighbor relation used by the Laplacian.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Neighbors per channel when none are given explicitly.
pub const DEFAULT_NEIGHBORS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    channels: Vec<String>,
    positions: Vec<[f64; 2]>,
    neighbors: Vec<Vec<usize>>,
    lookup: HashMap<String, usize>,
}

impl Montage {
    /// Builds a montage from explicit neighbor lists, checking every invariant.
    pub fn new(
        channels: Vec<String>,
        positions: Vec<[f64; 2]>,
        neighbors: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = channels.len();
        if positions.len() != n || neighbors.len() != n {
            return Err(Error::Config(format!(
                "montage has {n} channels but {} positions and {} neighbor lists",
                positions.len(),
                neighbors.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(n);
        for (i, name) in channels.iter().enumerate() {
            if lookup.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate channel name {name}")));
            }
        }
        for (name, p) in channels.iter().zip(&positions) {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("channel {name} has a non-finite position")));
            }
        }
        let mut neighbors = neighbors;
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            for &j in list.iter() {
                if j >= n {
                    return Err(Error::Config(format!(
                        "channel {} lists neighbor index {j} out of range",
                        channels[i]
                    )));
                }
                if j == i {
                    return Err(Error::Config(format!(
                        "channel {} lists itself as a neighbor",
                        channels[i]
                    )));
                }
            }
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::Config(format!(
                        "neighbor relation not symmetric: {} lists {} but not vice versa",
                        channels[i], channels[j]
                    )));
                }
            }
        }
        Ok(Self {
            channels,
            positions,
            neighbors,
            lookup,
        })
    }

    /// Builds a montage whose neighbors are the `k` nearest channels by
    /// projected distance, symmetrized by union.
    pub fn with_nearest_neighbors(
        channels: Vec<String>,
        positions: Vec<[f64; 2]>,
        k: usize,
    ) -> Result<Self> {
        let neighbors = nearest_neighbors(&positions, k);
        Self::new(channels, positions, neighbors)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn neighbors(&self, channel: usize) -> &[usize] {
        &self.neighbors[channel]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn position_of(&self, name: &str) -> Option<[f64; 2]> {
        self.index_of(name).map(|i| self.positions[i])
    }

    /// Neighbor names of a channel.
    pub fn neighbor_names(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.index_of(name)?;
        Some(self.neighbors[i].iter().map(|&j| self.channels[j].as_str()).collect())
    }

    /// Restricts the montage to `names` (in the given order) and recomputes
    /// nearest-`k` neighbors on the reduced set.
    pub fn subset(&self, names: &[&str], k: usize) -> Result<Self> {
        let mut channels = Vec::with_capacity(names.len());
        let mut positions = Vec::with_capacity(names.len());
        for &name in names {
            let p = self
                .position_of(name)
                .ok_or_else(|| Error::Config(format!("channel {name} not in montage")))?;
            channels.push(name.to_string());
            positions.push(p);
        }
        Self::with_nearest_neighbors(channels, positions, k)
    }

    /// 108-channel extended 10-20 layout (10-10 positions plus 10-05 half
    /// positions around the sensorimotor strip).
    pub fn extended108() -> Self {
        let (names, pos) = extended_positions();
        Self::with_nearest_neighbors(names, pos, DEFAULT_NEIGHBORS).expect("bundled montage")
    }

    /// The 106-channel set: the extended layout without the inion-row
    /// electrodes I1 and I2.
    pub fn standard106() -> Self {
        let full = Self::extended108();
        let names: Vec<&str> = full
            .channels
            .iter()
            .map(String::as_str)
            .filter(|n| *n != "I1" && *n != "I2")
            .collect();
        full.subset(&names, DEFAULT_NEIGHBORS).expect("bundled montage")
    }

    /// Common 32-channel cap used for desk-scale runs.
    pub fn desk32() -> Self {
        Self::extended108()
            .subset(&DESK32, DEFAULT_NEIGHBORS)
            .expect("bundled montage")
    }

    /// Parses the text format: `name x y` rows, optionally followed by
    /// `name: n1,n2,...` neighbor rows. Without neighbor rows, nearest-4
    /// neighbors are derived from the positions.
    pub fn parse(text: &str) -> Result<Self> {
        let mut channels = Vec::new();
        let mut positions = Vec::new();
        let mut neighbor_rows: Vec<(usize, String, Vec<String>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Config(format!("montage line {}: {what}", lineno + 1));
            if let Some((name, rest)) = line.split_once(':') {
                let list = rest
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
                neighbor_rows.push((lineno + 1, name.trim().to_string(), list));
            } else {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 3 {
                    return Err(bad("expected `name x y`"));
                }
                let x: f64 = fields[1].parse().map_err(|_| bad("bad x coordinate"))?;
                let y: f64 = fields[2].parse().map_err(|_| bad("bad y coordinate"))?;
                channels.push(fields[0].to_string());
                positions.push([x, y]);
            }
        }
        if channels.is_empty() {
            return Err(Error::Config("montage lists no channels".into()));
        }
        if neighbor_rows.is_empty() {
            return Self::with_nearest_neighbors(channels, positions, DEFAULT_NEIGHBORS);
        }
        let index: HashMap<&str, usize> = channels
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut neighbors = vec![Vec::new(); channels.len()];
        for (lineno, name, list) in &neighbor_rows {
            let i = *index.get(name.as_str()).ok_or_else(|| {
                Error::Config(format!("montage line {lineno}: unknown channel {name}"))
            })?;
            for n in list {
                let j = *index.get(n.as_str()).ok_or_else(|| {
                    Error::Config(format!("montage line {lineno}: unknown neighbor {n}"))
                })?;
                neighbors[i].push(j);
            }
        }
        Self::new(channels, positions, neighbors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(reason) => Error::Format { path: path.to_path_buf(), reason },
            other => other,
        })
    }

    /// Serializes positions and the explicit neighbor section.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# name x y\n");
        for (name, p) in self.channels.iter().zip(&self.positions) {
            let _ = writeln!(out, "{name} {:.6} {:.6}", p[0], p[1]);
        }
        out.push_str("# neighbors\n");
        for (name, list) in self.channels.iter().zip(&self.neighbors) {
            let names: Vec<&str> = list.iter().map(|&j| self.channels[j].as_str()).collect();
            let _ = writeln!(out, "{name}: {}", names.join(","));
        }
        out
    }
}

fn nearest_neighbors(positions: &[[f64; 2]], k: usize) -> Vec<Vec<usize>> {
    let n = positions.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    neighbors
}

const DESK32: [&str; 32] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz",
    "C4", "T8", "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3", "Pz", "P4", "P8", "PO9",
    "O1", "Oz", "O2", "PO10",
];

/// One electrode row: midline polar angle (degrees from vertex, negative =
/// posterior), ring azimuth of its lateral end, lateral steps to the ring,
/// and entries `(name, signed lateral step)`.
struct Row {
    midline: f64,
    ring_theta: f64,
    ring_azimuth: f64,
    ring_steps: f64,
    entries: &'static [(&'static str, f64)],
}

const ROWS: &[Row] = &[
    Row { midline: 72.0, ring_theta: 72.0, ring_azimuth: 18.0, ring_steps: 1.0,
          entries: &[("Fp1", -1.0), ("Fpz", 0.0), ("Fp2", 1.0)] },
    Row { midline: 54.0, ring_theta: 72.0, ring_azimuth: 36.0, ring_steps: 4.0,
          entries: &[("AF7", -4.0), ("AF3", -2.0), ("AFz", 0.0), ("AF4", 2.0), ("AF8", 4.0)] },
    Row { midline: 45.0, ring_theta: 72.0, ring_azimuth: 45.0, ring_steps: 4.0,
          entries: &[("AFF5h", -2.5), ("AFF1h", -0.5), ("AFF2h", 0.5), ("AFF6h", 2.5)] },
    Row { midline: 36.0, ring_theta: 72.0, ring_azimuth: 54.0, ring_steps: 4.0,
          entries: &[("F9", -5.0), ("F7", -4.0), ("F5", -3.0), ("F3", -2.0), ("F1", -1.0),
                     ("Fz", 0.0), ("F2", 1.0), ("F4", 2.0), ("F6", 3.0), ("F8", 4.0), ("F10", 5.0)] },
    Row { midline: 27.0, ring_theta: 72.0, ring_azimuth: 63.0, ring_steps: 4.0,
          entries: &[("FFC5h", -2.5), ("FFC3h", -1.5), ("FFC1h", -0.5),
                     ("FFC2h", 0.5), ("FFC4h", 1.5), ("FFC6h", 2.5)] },
    Row { midline: 18.0, ring_theta: 72.0, ring_azimuth: 72.0, ring_steps: 4.0,
          entries: &[("FT9", -5.0), ("FT7", -4.0), ("FC5", -3.0), ("FC3", -2.0), ("FC1", -1.0),
                     ("FCz", 0.0), ("FC2", 1.0), ("FC4", 2.0), ("FC6", 3.0), ("FT8", 4.0), ("FT10", 5.0)] },
    Row { midline: 9.0, ring_theta: 72.0, ring_azimuth: 81.0, ring_steps: 4.0,
          entries: &[("FCC5h", -2.5), ("FCC3h", -1.5), ("FCC1h", -0.5),
                     ("FCC2h", 0.5), ("FCC4h", 1.5), ("FCC6h", 2.5)] },
    Row { midline: 0.0, ring_theta: 72.0, ring_azimuth: 90.0, ring_steps: 4.0,
          entries: &[("T9", -5.0), ("T7", -4.0), ("C5", -3.0), ("C3", -2.0), ("C1", -1.0),
                     ("Cz", 0.0), ("C2", 1.0), ("C4", 2.0), ("C6", 3.0), ("T8", 4.0), ("T10", 5.0)] },
    Row { midline: -9.0, ring_theta: 72.0, ring_azimuth: 99.0, ring_steps: 4.0,
          entries: &[("CCP5h", -2.5), ("CCP3h", -1.5), ("CCP1h", -0.5),
                     ("CCP2h", 0.5), ("CCP4h", 1.5), ("CCP6h", 2.5)] },
    Row { midline: -18.0, ring_theta: 72.0, ring_azimuth: 108.0, ring_steps: 4.0,
          entries: &[("TP9", -5.0), ("TP7", -4.0), ("CP5", -3.0), ("CP3", -2.0), ("CP1", -1.0),
                     ("CPz", 0.0), ("CP2", 1.0), ("CP4", 2.0), ("CP6", 3.0), ("TP8", 4.0), ("TP10", 5.0)] },
    Row { midline: -27.0, ring_theta: 72.0, ring_azimuth: 117.0, ring_steps: 4.0,
          entries: &[("CPP5h", -2.5), ("CPP3h", -1.5), ("CPP1h", -0.5),
                     ("CPP2h", 0.5), ("CPP4h", 1.5), ("CPP6h", 2.5)] },
    Row { midline: -36.0, ring_theta: 72.0, ring_azimuth: 126.0, ring_steps: 4.0,
          entries: &[("P9", -5.0), ("P7", -4.0), ("P5", -3.0), ("P3", -2.0), ("P1", -1.0),
                     ("Pz", 0.0), ("P2", 1.0), ("P4", 2.0), ("P6", 3.0), ("P8", 4.0), ("P10", 5.0)] },
    Row { midline: -45.0, ring_theta: 72.0, ring_azimuth: 135.0, ring_steps: 4.0,
          entries: &[("PPO5h", -2.5), ("PPO1h", -0.5), ("PPO2h", 0.5), ("PPO6h", 2.5)] },
    Row { midline: -54.0, ring_theta: 72.0, ring_azimuth: 144.0, ring_steps: 4.0,
          entries: &[("PO9", -5.0), ("PO7", -4.0), ("PO3", -2.0), ("POz", 0.0),
                     ("PO4", 2.0), ("PO8", 4.0), ("PO10", 5.0)] },
    Row { midline: -72.0, ring_theta: 72.0, ring_azimuth: 162.0, ring_steps: 1.0,
          entries: &[("O1", -1.0), ("Oz", 0.0), ("O2", 1.0)] },
    Row { midline: -90.0, ring_theta: 90.0, ring_azimuth: 162.0, ring_steps: 1.0,
          entries: &[("I1", -1.0), ("Iz", 0.0), ("I2", 1.0)] },
];

/// Unit vector for polar angle `theta` from the vertex and azimuth `phi`
/// measured from the nose towards the right ear (degrees). x = right,
/// y = front, z = up.
fn unit(theta: f64, phi: f64) -> [f64; 3] {
    let (t, p) = (theta.to_radians(), phi.to_radians());
    [t.sin() * p.sin(), t.sin() * p.cos(), t.cos()]
}

/// Point a fraction `t` of the way along the great circle from `a` to `b`
/// (extrapolates for `t > 1`).
fn slerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega < 1e-12 {
        return a;
    }
    let mut u = [b[0] - dot * a[0], b[1] - dot * a[1], b[2] - dot * a[2]];
    let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    let (c, s) = ((t * omega).cos(), (t * omega).sin());
    [c * a[0] + s * u[0], c * a[1] + s * u[1], c * a[2] + s * u[2]]
}

/// Azimuthal equidistant projection: the vertex maps to the origin, the
/// equator (90° from the vertex) to the unit circle, the nose to +y.
fn project(v: [f64; 3]) -> [f64; 2] {
    let theta = v[2].clamp(-1.0, 1.0).acos();
    let r = theta / std::f64::consts::FRAC_PI_2;
    let horizontal = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if horizontal < 1e-15 {
        return [0.0, 0.0];
    }
    [r * v[0] / horizontal, r * v[1] / horizontal]
}

fn extended_positions() -> (Vec<String>, Vec<[f64; 2]>) {
    let mut names = Vec::new();
    let mut positions = Vec::new();
    for row in ROWS {
        let (mid_theta, mid_phi) = if row.midline >= 0.0 {
            (row.midline, 0.0)
        } else {
            (-row.midline, 180.0)
        };
        let mid = unit(mid_theta, mid_phi);
        for &(name, step) in row.entries {
            let v = if step == 0.0 {
                mid
            } else {
                let ring = unit(row.ring_theta, row.ring_azimuth.copysign(step));
                slerp(mid, ring, step.abs() / row.ring_steps)
            };
            names.push(name.to_string());
            let mut p = project(v);
            // round away projection noise so files stay stable across platforms
            p.iter_mut().for_each(|c| *c = (*c * 1e9).round() / 1e9);
            positions.push(p);
        }
    }
    (names, positions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_sizes() {
        assert_eq!(Montage::extended108().len(), 108);
        assert_eq!(Montage::standard106().len(), 106);
        assert_eq!(Montage::desk32().len(), 32);
    }

    #[test]
    fn landmarks_project_sensibly() {
        let m = Montage::extended108();
        let cz = m.position_of("Cz").unwrap();
        assert!(cz[0].abs() < 1e-9 && cz[1].abs() < 1e-9);
        let c3 = m.position_of("C3").unwrap();
        let c4 = m.position_of("C4").unwrap();
        assert!((c3[0] + 0.4).abs() < 1e-9 && c3[1].abs() < 1e-9);
        assert!((c4[0] - 0.4).abs() < 1e-9);
        let t7 = m.position_of("T7").unwrap();
        assert!((t7[0] + 0.8).abs() < 1e-9);
        let fpz = m.position_of("Fpz").unwrap();
        assert!((fpz[1] - 0.8).abs() < 1e-9);
        let oz = m.position_of("Oz").unwrap();
        assert!((oz[1] + 0.8).abs() < 1e-9);
        // ring electrodes sit at radius 0.8
        let f7 = m.position_of("F7").unwrap();
        assert!(((f7[0].powi(2) + f7[1].powi(2)).sqrt() - 0.8).abs() < 1e-9);
    }

    #[test]
    fn positions_distinct() {
        let m = Montage::extended108();
        let p = m.positions();
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let d = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt();
                assert!(d > 0.05, "{} and {} too close", m.channels()[i], m.channels()[j]);
            }
        }
    }

    #[test]
    fn neighbors_symmetric_and_nonempty() {
        for m in [Montage::extended108(), Montage::standard106(), Montage::desk32()] {
            for i in 0..m.len() {
                assert!(m.neighbors(i).len() >= DEFAULT_NEIGHBORS);
                for &j in m.neighbors(i) {
                    assert_ne!(i, j);
                    assert!(m.neighbors(j).contains(&i));
                }
            }
        }
    }

    #[test]
    fn c3_neighbors_are_local() {
        let m = Montage::extended108();
        let names = m.neighbor_names("C3").unwrap();
        for n in &names {
            assert!(
                ["FCC3h", "FCC5h", "CCP3h", "CCP5h", "C1", "C5", "FC3", "CP3"].contains(n),
                "unexpected C3 neighbor {n}"
            );
        }
    }

    #[test]
    fn text_round_trip() {
        let m = Montage::desk32();
        let back = Montage::parse(&m.to_text()).unwrap();
        assert_eq!(back.channels(), m.channels());
        for i in 0..m.len() {
            assert_eq!(back.neighbors(i), m.neighbors(i));
        }
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(Montage::parse("A 0 0\nA 1 1\n").is_err());
        assert!(Montage::parse("A 0 0\nB 1 x\n").is_err());
        assert!(Montage::parse("A 0 0\nB 1 0\nA: B\n").is_err(), "asymmetric");
        assert!(Montage::parse("A 0 0\nB 1 0\nA: A\n").is_err(), "self neighbor");
        assert!(Montage::parse("A 0 0\nB 1 0\nA: C\n").is_err(), "unknown neighbor");
        assert!(Montage::parse("A 0 nan\nB 1 0\n").is_err());
    }

    #[test]
    fn parse_explicit_neighbors() {
        let m = Montage::parse("A 0 0\nB 1 0\nC 2 0\nA: B\nB: A,C\nC: B\n").unwrap();
        assert_eq!(m.neighbors(1), &[0, 2]);
        assert_eq!(m.neighbors(0), &[1]);
    }
}
