//! Aggregation of fold permutation importances into feature, channel,
//! window and whole-trial scores, plus topographic-map exports.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::layout::{BandKind, FeatureLayout, Slot};

/// Element-wise mean of the per-fold importance vectors.
pub fn average_fis(per_fold: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_fold.first().ok_or_else(|| Error::Data("no fold importances".into()))?;
    if let Some(v) = per_fold.iter().find(|v| v.len() != first.len()) {
        return Err(Error::Data(format!(
            "fold importance lengths differ ({} vs {})",
            v.len(),
            first.len()
        )));
    }
    let k = per_fold.len() as f64;
    Ok((0..first.len()).map(|i| per_fold.iter().map(|v| v[i]).sum::<f64>() / k).collect())
}

fn check_len(fis: &[f64], layout: &FeatureLayout) -> Result<()> {
    if fis.len() != layout.total_features() {
        return Err(Error::Data(format!(
            "{} importances for a {}-feature layout",
            fis.len(),
            layout.total_features()
        )));
    }
    Ok(())
}

/// Sum of the band's window and whole-trial scores, per channel.
pub fn channel_scores(fis: &[f64], layout: &FeatureLayout, band: BandKind) -> Result<Vec<f64>> {
    check_len(fis, layout)?;
    Ok((0..layout.n_channels()).map(|c| fis[layout.band_range(c, band)].iter().sum()).collect())
}

/// Sliding-window scores and the whole-trial score of one channel and band.
pub fn window_scores(
    fis: &[f64],
    layout: &FeatureLayout,
    channel: usize,
    band: BandKind,
) -> Result<(Vec<f64>, f64)> {
    check_len(fis, layout)?;
    let wis = (0..layout.n_windows())
        .map(|w| layout.feature_index(channel, band, Slot::Window(w)).map(|i| fis[i]))
        .collect::<Result<_>>()?;
    let is = fis[layout.feature_index(channel, band, Slot::Whole)?];
    Ok((wis, is))
}

/// Channel whose larger band score is highest; ties go to the lower index.
pub fn top_channel(cis_mu: &[f64], cis_beta: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for c in 0..cis_mu.len() {
        let v = cis_mu[c].max(cis_beta[c]);
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub channels: Vec<String>,
    pub layout: FeatureLayout,
    pub fis: Vec<f64>,
    pub cis_mu: Vec<f64>,
    pub cis_beta: Vec<f64>,
    pub top_channel: usize,
    pub wis_mu: Vec<f64>,
    pub wis_beta: Vec<f64>,
    pub is_mu: f64,
    pub is_beta: f64,
}

impl ImportanceReport {
    pub fn build(per_fold: &[Vec<f64>], layout: &FeatureLayout, channels: &[String]) -> Result<Self> {
        let fis = average_fis(per_fold)?;
        let cis_mu = channel_scores(&fis, layout, BandKind::Mu)?;
        let cis_beta = channel_scores(&fis, layout, BandKind::Beta)?;
        let top = top_channel(&cis_mu, &cis_beta);
        let (wis_mu, is_mu) = window_scores(&fis, layout, top, BandKind::Mu)?;
        let (wis_beta, is_beta) = window_scores(&fis, layout, top, BandKind::Beta)?;
        Ok(Self {
            channels: channels.to_vec(),
            layout: layout.clone(),
            fis,
            cis_mu,
            cis_beta,
            top_channel: top,
            wis_mu,
            wis_beta,
            is_mu,
            is_beta,
        })
    }

    pub fn top_channel_name(&self) -> &str {
        &self.channels[self.top_channel]
    }

    /// Window index with the largest β score at the top channel.
    pub fn peak_beta_window(&self) -> usize {
        argmax(&self.wis_beta)
    }

    pub fn fis_csv(&self) -> String {
        let mut s = String::from("feature,channel,band,slot,fis\n");
        for (i, v) in self.fis.iter().enumerate() {
            let (c, band, slot) = self.layout.feature_coords(i).expect("in range");
            let slot = match slot {
                Slot::Window(w) => format!("{:.2}", self.layout.windows()[w].center),
                Slot::Whole => "whole".into(),
            };
            let _ = writeln!(s, "{i},{},{},{slot},{v}", self.channels[c], band.name());
        }
        s
    }

    pub fn cis_csv(&self) -> String {
        let mut s = String::from("channel,cis_mu,cis_beta\n");
        for (c, name) in self.channels.iter().enumerate() {
            let _ = writeln!(s, "{name},{},{}", self.cis_mu[c], self.cis_beta[c]);
        }
        s
    }

    pub fn wis_csv(&self) -> String {
        let mut s = format!("# channel {}\ncenter_s,wis_mu,wis_beta\n", self.top_channel_name());
        for (w, spec) in self.layout.windows().iter().enumerate() {
            let _ = writeln!(s, "{:.2},{},{}", spec.center, self.wis_mu[w], self.wis_beta[w]);
        }
        let _ = writeln!(s, "whole,{},{}", self.is_mu, self.is_beta);
        s
    }

    pub fn summary(&self) -> String {
        let peak = self.peak_beta_window();
        format!(
            "top_channel = {}\nmax_cis_mu = {}\nmax_cis_beta = {}\nargmax_cis_beta = {}\npeak_wis_beta_center = {:.2}\nis_mu = {}\nis_beta = {}\n",
            self.top_channel_name(),
            self.cis_mu.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            self.cis_beta.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            self.channels[argmax(&self.cis_beta)],
            self.layout.windows()[peak].center,
            self.is_mu,
            self.is_beta,
        )
    }

    /// Line plot of the window scores at the top channel, whole-trial scores
    /// as dashed levels.
    pub fn wis_svg(&self) -> String {
        let centers: Vec<f64> = self.layout.windows().iter().map(|w| w.center).collect();
        line_plot_svg(
            &format!("window importance at {}", self.top_channel_name()),
            &centers,
            &[("μ", &self.wis_mu, self.is_mu, "#1f77b4"), ("β", &self.wis_beta, self.is_beta, "#d62728")],
        )
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Interpolated map on a square grid; cells outside the electrode hull are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[[row, col]]` at `(xs[col], ys[row])`.
    pub values: Array2<f64>,
}

impl TopoGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y\\x");
        for x in &self.xs {
            let _ = write!(s, ",{x:.5}");
        }
        s.push('\n');
        for (r, y) in self.ys.iter().enumerate() {
            let _ = write!(s, "{y:.5}");
            for v in self.values.row(r) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

const NODE_EPS: f64 = 1e-12;
const HULL_EPS: f64 = 1e-9;

/// Inverse-distance-weighted (power 2) interpolation on a `resolution ×
/// resolution` grid spanning the square around the electrode bounding box.
pub fn topomap_grid(values: &[f64], positions: &[[f64; 2]], resolution: usize) -> Result<TopoGrid> {
    if values.len() != positions.len() || values.is_empty() {
        return Err(Error::Data(format!(
            "{} values for {} electrode positions",
            values.len(),
            positions.len()
        )));
    }
    if resolution < 2 {
        return Err(Error::Config("topomap resolution must be at least 2".into()));
    }
    for i in 0..positions.len() {
        for j in 0..i {
            if dist2(positions[i], positions[j]) <= NODE_EPS * NODE_EPS {
                return Err(Error::Data(format!("electrodes {j} and {i} share a position")));
            }
        }
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in positions {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let half = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0).max(1e-6);
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let axis = |c: f64| -> Vec<f64> {
        (0..resolution)
            .map(|i| c - half + 2.0 * half * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let xs = axis(center[0]);
    let ys = axis(center[1]);
    let hull = convex_hull(positions);
    let grid = Array2::from_shape_fn((resolution, resolution), |(r, c)| {
        let p = [xs[c], ys[r]];
        if in_hull(&hull, p) {
            idw(values, positions, p)
        } else {
            f64::NAN
        }
    });
    Ok(TopoGrid { xs, ys, values: grid })
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn idw(values: &[f64], positions: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, q) in values.iter().zip(positions) {
        let d2 = dist2(p, *q);
        if d2 <= NODE_EPS * NODE_EPS {
            return *v;
        }
        num += v / d2;
        den += 1.0 / d2;
    }
    num / den
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise hull (monotone chain); collinear input yields the two
/// extreme points.
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite positions"));
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let len2 = dist2(a, b);
    if len2 == 0.0 {
        return dist2(a, p) <= HULL_EPS * HULL_EPS;
    }
    let t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / len2;
    if !(-HULL_EPS..=1.0 + HULL_EPS).contains(&t) {
        return false;
    }
    let proj = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    dist2(proj, p) <= HULL_EPS * HULL_EPS
}

fn in_hull(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    match hull.len() {
        0 => false,
        1 => dist2(hull[0], p) <= HULL_EPS * HULL_EPS,
        2 => on_segment(hull[0], hull[1], p),
        n => (0..n).all(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            let scale = dist2(a, b).sqrt();
            cross(a, b, p) >= -HULL_EPS * scale
        }),
    }
}

fn color(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap of a grid with electrode markers and labels.
pub fn topomap_svg(grid: &TopoGrid, names: &[String], positions: &[[f64; 2]], title: &str) -> String {
    let size = 480.0;
    let margin = 40.0;
    let n = grid.xs.len();
    let cell = size / n as f64;
    let (x0, x1) = (grid.xs[0], grid.xs[n - 1]);
    let (y0, y1) = (grid.ys[0], grid.ys[n - 1]);
    let px = |x: f64| margin + (x - x0) / (x1 - x0) * (size - cell) + cell / 2.0;
    let py = |y: f64| margin + (y1 - y) / (y1 - y0) * (size - cell) + cell / 2.0;
    let finite: Vec<f64> = grid.values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    let total = size + 2.0 * margin;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{}" viewBox="0 0 {total} {}">"#,
        total + 30.0,
        total + 30.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#, total / 2.0, escape(title));
    for (r, &y) in grid.ys.iter().enumerate() {
        for (c, &x) in grid.xs.iter().enumerate() {
            let v = grid.values[[r, c]];
            if !v.is_finite() {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                px(x) - cell / 2.0,
                py(y) - cell / 2.0,
                cell + 0.05,
                cell + 0.05,
                color((v - lo) / span)
            );
        }
    }
    for (name, p) in names.iter().zip(positions) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="black"/>"#, px(p[0]), py(p[1]));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="7" text-anchor="middle">{}</text>"#,
            px(p[0]),
            py(p[1]) - 4.0,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{margin}" y="{}" font-size="12">min {lo:.4}  max {hi:.4}</text>"#,
        total + 15.0
    );
    s.push_str("</svg>\n");
    s
}

fn line_plot_svg(title: &str, xs: &[f64], series: &[(&str, &[f64], f64, &str)]) -> String {
    let (w, h, m) = (640.0, 360.0, 50.0);
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let all = series.iter().flat_map(|(_, v, lvl, _)| v.iter().copied().chain([*lvl]));
    let (mut lo, mut hi) = (0.0f64, f64::NEG_INFINITY);
    for v in all {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - lo) / (hi - lo) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {} H{} M{m} {} V{}" stroke="black" fill="none"/>"#,
        h - m,
        w - m,
        h - m,
        m
    );
    for t in [x0, (x0 + x1) / 2.0, x1] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" font-size="10" text-anchor="middle">{t:.2} s</text>"#, px(t), h - m + 14.0);
    }
    for t in [lo, hi] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{t:.3}</text>"#, m - 4.0, py(t));
    }
    for (i, (name, values, level, stroke)) in series.iter().enumerate() {
        let pts: Vec<String> = xs.iter().zip(values.iter()).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{stroke}" fill="none" stroke-width="1.5"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<line x1="{m}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-dasharray="5,4"/>"#,
            w - m,
            py(*level),
            py(*level)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{stroke}">WIS{} (dashed: IS)</text>"#,
            w - m - 110.0,
            m + 14.0 * i as f64,
            name
        );
    }
    s.push_str("</svg>\n");
    s
}
