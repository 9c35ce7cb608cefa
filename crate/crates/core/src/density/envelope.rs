use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;

/// Resolution of the reduced `(s, r)` grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeGrid {
    /// Grid cells per half segment length `|b - a| / 2`.
    pub cells_per_half_length: usize,
    /// Box radius in the reduced coordinates; `None` picks a default that
    /// covers the hypothesis-sampling ball.
    pub box_radius: Option<f64>,
    /// Slope-grid points per spatial grid point in each Legendre pass.
    pub slope_refinement: usize,
}

impl Default for EnvelopeGrid {
    fn default() -> Self {
        Self { cells_per_half_length: 16, box_radius: None, slope_refinement: 4 }
    }
}

/// Tabulated convex envelope of `h(v) = |v - a|^(p/2) |v - b|^(p/2)` in the
/// coordinates `s = (v - c) . e`, `r = |(v - c) - s e|`, where `c` is the
/// midpoint and `e` the unit vector along `b - a`.
#[derive(Clone, Debug)]
pub struct ConvexEnvelopeTable {
    a: Vec<f64>,
    b: Vec<f64>,
    p: f64,
    mid: Vec<f64>,
    axis: Vec<f64>,
    half: f64,
    h: f64,
    /// Nodes `s_i = -radius + i h`, `i = 0..ns`.
    ns: usize,
    /// Nodes `r_j = j h`, `j = 0..nr`.
    nr: usize,
    radius: f64,
    /// `values[i * nr + j]`.
    values: Vec<f64>,
    raw: Vec<f64>,
    curvature: f64,
    interpolation_tolerance: f64,
}

/// Lower convex hull (indices) of points with increasing `x`.
fn lower_hull(x: &[f64], y: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (x[a] - x[o]) * (y[i] - y[o]) - (y[a] - y[o]) * (x[i] - x[o]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Discrete Legendre transform `phi*(s_k) = max_i (s_k x_i - phi_i)` for
/// increasing `x` and increasing `slopes`, in `O(n + k)` time.
pub fn legendre_1d(x: &[f64], phi: &[f64], slopes: &[f64]) -> Vec<f64> {
    let hull = lower_hull(x, phi);
    let mut out = Vec::with_capacity(slopes.len());
    let mut j = 0;
    for &s in slopes {
        while j + 1 < hull.len() {
            let (a, b) = (hull[j], hull[j + 1]);
            if phi[b] - phi[a] <= s * (x[b] - x[a]) {
                j += 1;
            } else {
                break;
            }
        }
        let i = hull[j];
        out.push(s * x[i] - phi[i]);
    }
    out
}

fn symmetric_grid(max: f64, count: usize) -> Vec<f64> {
    let n = count.max(3) | 1;
    let half = (n - 1) / 2;
    (0..n).map(|k| (k as f64 - half as f64) / half as f64 * max).collect()
}

/// Two-dimensional discrete Legendre transform of `f` sampled on the tensor
/// grid `xs x ys`, evaluated on `ps x qs` by two separable 1D passes.
fn legendre_2d(xs: &[f64], ys: &[f64], f: &[f64], ps: &[f64], qs: &[f64]) -> Vec<f64> {
    let (nx, ny, nq) = (xs.len(), ys.len(), qs.len());
    let mut g = vec![0.0; nx * nq];
    for i in 0..nx {
        let row = legendre_1d(ys, &f[i * ny..(i + 1) * ny], qs);
        g[i * nq..(i + 1) * nq].copy_from_slice(&row);
    }
    let mut out = vec![0.0; ps.len() * nq];
    let mut col = vec![0.0; nx];
    for l in 0..nq {
        for i in 0..nx {
            col[i] = -g[i * nq + l];
        }
        let t = legendre_1d(xs, &col, ps);
        for (k, v) in t.into_iter().enumerate() {
            out[k * nq + l] = v;
        }
    }
    out
}

fn raw_h(p: f64, half: f64, s: f64, r: f64) -> f64 {
    let a2 = (s + half).powi(2) + r * r;
    let b2 = (s - half).powi(2) + r * r;
    if a2 == 0.0 || b2 == 0.0 {
        return 0.0;
    }
    (a2 * b2).powf(p / 4.0)
}

fn snap(t: f64) -> f64 {
    let r = t.round();
    if (t - r).abs() < 1e-9 {
        r
    } else {
        t
    }
}

/// Builds the envelope table of the pair `(a, b)`.
pub fn convexify_pair(a: &[f64], b: &[f64], p: f64, grid: EnvelopeGrid) -> Result<ConvexEnvelopeTable> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Density("pair vectors must have equal, positive length".into()));
    }
    if !(p > 1.0) {
        return Err(Error::Density(format!("exponent p must exceed 1, got {p}")));
    }
    let diff: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let len = norm(&diff);
    if !(len > 0.0) {
        return Err(Error::Density("pair endpoints coincide".into()));
    }
    let q = grid.cells_per_half_length;
    if q < 2 || grid.slope_refinement == 0 {
        return Err(Error::Density("envelope grid too coarse".into()));
    }
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let axis: Vec<f64> = diff.iter().map(|x| x / len).collect();
    let half = 0.5 * len;
    let default_radius = (2.0 * len).max(super::SAMPLE_RADIUS + 2.0 + norm(&mid));
    let radius_req = grid.box_radius.unwrap_or(default_radius);
    if radius_req < 2.0 * len {
        return Err(Error::Density(format!("box radius {radius_req} is below 2|b - a| = {}", 2.0 * len)));
    }
    let h = half / q as f64;
    let k = (radius_req / h).ceil() as usize;
    let radius = k as f64 * h;
    let n = 2 * k + 1;
    let nodes: Vec<f64> = (0..n).map(|i| (i as f64 - k as f64) * h).collect();

    let mut full = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            full[i * n + j] = raw_h(p, half, nodes[i], nodes[j]);
        }
    }
    let mut smax: f64 = 0.0;
    for i in 0..n {
        for j in 0..n - 1 {
            smax = smax.max((full[i * n + j + 1] - full[i * n + j]).abs() / h);
            smax = smax.max((full[j * n + i] - full[(j + 1) * n + i]).abs() / h);
        }
    }
    let slopes = symmetric_grid(smax * 1.01, grid.slope_refinement * (n - 1) + 1);
    let conj = legendre_2d(&nodes, &nodes, &full, &slopes, &slopes);
    let bi = legendre_2d(&slopes, &slopes, &conj, &nodes, &nodes);

    let nr = k + 1;
    let mut values = vec![0.0; n * nr];
    let mut raw = vec![0.0; n * nr];
    let scale = full.iter().fold(0.0_f64, |acc, x| acc.max(*x));
    let mut worst_excess: f64 = 0.0;
    for i in 0..n {
        for j in 0..nr {
            let hv = full[i * n + k + j];
            let mut v = bi[i * n + k + j];
            worst_excess = worst_excess.max(v - hv);
            if v.abs() < 1e-12 * scale {
                v = 0.0;
            }
            values[i * nr + j] = v.clamp(0.0, hv);
            raw[i * nr + j] = hv;
        }
    }
    if worst_excess > 1e-9 * scale {
        return Err(Error::Density(format!(
            "biconjugate exceeds the raw density by {worst_excess:.3e}; refine the grid"
        )));
    }

    let mut curvature: f64 = 0.0;
    for i in 1..n - 1 {
        for j in 0..nr {
            let c = values[(i + 1) * nr + j] - 2.0 * values[i * nr + j] + values[(i - 1) * nr + j];
            curvature = curvature.max(c.abs() / (h * h));
        }
    }
    let mut crr: f64 = 0.0;
    let mut csr: f64 = 0.0;
    for i in 0..n {
        for j in 1..nr - 1 {
            let c = values[i * nr + j + 1] - 2.0 * values[i * nr + j] + values[i * nr + j - 1];
            crr = crr.max(c.abs() / (h * h));
            if i + 1 < n {
                let x = values[(i + 1) * nr + j] - values[(i + 1) * nr + j - 1] - values[i * nr + j]
                    + values[i * nr + j - 1];
                csr = csr.max(x.abs() / (h * h));
            }
        }
    }
    let curvature = curvature + crr + 2.0 * csr;
    let interpolation_tolerance = 0.25 * h * h * curvature;

    Ok(ConvexEnvelopeTable {
        a: a.to_vec(),
        b: b.to_vec(),
        p,
        mid,
        axis,
        half,
        h,
        ns: n,
        nr,
        radius,
        values,
        raw,
        curvature,
        interpolation_tolerance,
    })
}

impl ConvexEnvelopeTable {
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn midpoint(&self) -> &[f64] {
        &self.mid
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ns, self.nr)
    }

    /// Envelope value at node `(i, j)`, i.e. at `s = -radius + i h`, `r = j h`.
    pub fn node_value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.nr + j]
    }

    pub fn node_raw(&self, i: usize, j: usize) -> f64 {
        self.raw[i * self.nr + j]
    }

    pub fn node_coords(&self, i: usize, j: usize) -> (f64, f64) {
        (-self.radius + i as f64 * self.h, j as f64 * self.h)
    }

    /// Upper bound for second differences of the tabulated values.
    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    /// Slack allowed in convexity checks of the interpolant.
    pub fn interpolation_tolerance(&self) -> f64 {
        self.interpolation_tolerance
    }

    /// Raw two-phase product `|v - a|^(p/2) |v - b|^(p/2)`.
    pub fn raw(&self, v: &[f64]) -> f64 {
        let (s, r) = self.reduce(v).0;
        raw_h(self.p, self.half, s, r)
    }

    /// Reduced coordinates and the transverse unit vector (if `r > 0`).
    fn reduce(&self, v: &[f64]) -> ((f64, f64), Vec<f64>) {
        let w: Vec<f64> = v.iter().zip(&self.mid).map(|(x, c)| x - c).collect();
        let s: f64 = w.iter().zip(&self.axis).map(|(x, e)| x * e).sum();
        let perp: Vec<f64> = w.iter().zip(&self.axis).map(|(x, e)| x - s * e).collect();
        let r = norm(&perp);
        ((s, r), perp)
    }

    /// Bilinear interpolation in `(s, r)`; returns value and partials.
    fn interpolate(&self, s: f64, r: f64) -> (f64, f64, f64) {
        let ts = snap((s + self.radius) / self.h);
        let tr = snap(r / self.h);
        let i0 = (ts.floor() as usize).min(self.ns - 2);
        let j0 = (tr.floor() as usize).min(self.nr - 2);
        let fs = ts - i0 as f64;
        let fr = tr - j0 as f64;
        let v = |i: usize, j: usize| self.values[i * self.nr + j];
        let (v00, v10, v01, v11) = (v(i0, j0), v(i0 + 1, j0), v(i0, j0 + 1), v(i0 + 1, j0 + 1));
        let val = (1.0 - fs) * (1.0 - fr) * v00 + fs * (1.0 - fr) * v10 + (1.0 - fs) * fr * v01 + fs * fr * v11;
        let ds = ((1.0 - fr) * (v10 - v00) + fr * (v11 - v01)) / self.h;
        let dr = ((1.0 - fs) * (v01 - v00) + fs * (v11 - v10)) / self.h;
        (val, ds, dr)
    }

    fn inside(&self, s: f64, r: f64) -> bool {
        s.abs() <= self.radius && r <= self.radius
    }

    /// Envelope value; outside the tabulated box the raw density is used.
    pub fn value(&self, v: &[f64]) -> f64 {
        let ((s, r), _) = self.reduce(v);
        if !self.inside(s, r) {
            return raw_h(self.p, self.half, s, r);
        }
        self.interpolate(s, r).0
    }

    /// Gradient of the interpolated envelope (zero on the segment).
    pub fn gradient(&self, v: &[f64], out: &mut [f64]) {
        let ((s, r), perp) = self.reduce(v);
        let tiny = 1e-12 * (1.0 + self.half);
        if !self.inside(s, r) {
            self.raw_gradient(v, out);
            return;
        }
        if r <= tiny && s.abs() <= self.half + tiny {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let (_, ds, dr) = self.interpolate(s, r);
        for k in 0..out.len() {
            out[k] = ds * self.axis[k];
            if r > tiny {
                out[k] += dr * perp[k] / r;
            }
        }
    }

    fn raw_gradient(&self, v: &[f64], out: &mut [f64]) {
        let da: Vec<f64> = v.iter().zip(&self.a).map(|(x, y)| x - y).collect();
        let db: Vec<f64> = v.iter().zip(&self.b).map(|(x, y)| x - y).collect();
        let a2: f64 = da.iter().map(|x| x * x).sum();
        let b2: f64 = db.iter().map(|x| x * x).sum();
        if a2 == 0.0 || b2 == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let hv = (a2 * b2).powf(self.p / 4.0);
        for k in 0..out.len() {
            out[k] = 0.5 * self.p * hv * (da[k] / a2 + db[k] / b2);
        }
    }

    /// Smallest envelope value over nodes at distance `>= dist` from the
    /// segment `[a, b]`.
    pub fn min_away_from_segment(&self, dist: f64) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.ns {
            for j in 0..self.nr {
                let (s, r) = self.node_coords(i, j);
                let ds = (s.abs() - self.half).max(0.0);
                if (ds * ds + r * r).sqrt() >= dist {
                    best = best.min(self.node_value(i, j));
                }
            }
        }
        best
    }

    /// Largest envelope value over nodes on the segment.
    pub fn max_on_segment(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.ns {
            let (s, _) = self.node_coords(i, 0);
            if s.abs() <= self.half + 1e-12 * self.h {
                worst = worst.max(self.node_value(i, 0).abs());
            }
        }
        worst
    }

    /// Largest `envelope - raw` over nodes (should be `<= 0`).
    pub fn max_excess_over_raw(&self) -> f64 {
        self.values.iter().zip(&self.raw).fold(f64::NEG_INFINITY, |acc, (v, r)| acc.max(v - r))
    }

    /// Writes the tabulated values in the flat binary field format
    /// (`d = 2`, `m = 1`, `shape = [ns, nr]`).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for x in [2u64, 1, self.ns as u64, self.nr as u64] {
            w.write_all(&x.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Metadata needed to interpret [`Self::write_binary`].
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "a": self.a, "b": self.b, "p": self.p,
            "spacing": self.h, "radius": self.radius,
            "s_nodes": self.ns, "r_nodes": self.nr,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_of_parabola() {
        let x: Vec<f64> = (0..201).map(|i| -1.0 + i as f64 * 0.01).collect();
        let phi: Vec<f64> = x.iter().map(|t| t * t).collect();
        let slopes = [-1.0, 0.0, 0.5, 1.0];
        let c = legendre_1d(&x, &phi, &slopes);
        for (s, v) in slopes.iter().zip(c) {
            assert!((v - s * s / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_uses_hull_of_nonconvex_data() {
        let x = [0.0, 1.0, 2.0];
        let phi = [0.0, 5.0, 0.0];
        assert_eq!(legendre_1d(&x, &phi, &[0.0]), vec![0.0]);
        assert_eq!(legendre_1d(&x, &phi, &[1.0]), vec![2.0]);
    }

    fn pair() -> ConvexEnvelopeTable {
        convexify_pair(&[-1.0, 0.0], &[1.0, 0.0], 2.0, EnvelopeGrid { box_radius: Some(4.0), ..Default::default() })
            .unwrap()
    }

    #[test]
    fn zeros_at_endpoints_and_midpoint() {
        let t = pair();
        assert_eq!(t.value(&[-1.0, 0.0]), 0.0);
        assert_eq!(t.value(&[1.0, 0.0]), 0.0);
        assert_eq!(t.value(&[0.0, 0.0]), 0.0);
        assert_eq!(t.max_on_segment(), 0.0);
    }

    #[test]
    fn dominated_by_raw() {
        let t = pair();
        assert!(t.max_excess_over_raw() <= 0.0);
        assert!(t.value(&[0.0, 1.0]) <= 2.0);
        assert!(t.value(&[0.0, 1.0]) > 0.5);
    }

    #[test]
    fn even_and_monotone_in_r() {
        let t = pair();
        let (ns, nr) = t.shape();
        for i in 0..ns {
            for j in 1..nr {
                assert!(t.node_value(i, j) >= t.node_value(i, j - 1) - 1e-12);
            }
        }
        assert_eq!(t.value(&[0.3, 0.7]), t.value(&[0.3, -0.7]));
    }

    #[test]
    fn positive_away_from_segment() {
        let t = pair();
        let margin = t.min_away_from_segment(0.25 * 2.0);
        assert!(margin > 0.1, "{margin}");
    }

    #[test]
    fn gradient_matches_difference_quotients() {
        let t = pair();
        let step = 1e-6 * t.spacing();
        let mut g = [0.0; 2];
        for &(x, y) in &[(0.31, 0.77), (-1.63, 0.41), (2.07, -1.29), (0.52, -2.33)] {
            t.gradient(&[x, y], &mut g);
            for dir in [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]] {
                let plus = t.value(&[x + step * dir[0], y + step * dir[1]]);
                let minus = t.value(&[x - step * dir[0], y - step * dir[1]]);
                let fd = (plus - minus) / (2.0 * step);
                let an = g[0] * dir[0] + g[1] * dir[1];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "({x}, {y}) {dir:?}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn outside_box_uses_raw() {
        let t = pair();
        let v = [10.0, 3.0];
        assert_eq!(t.value(&v), t.raw(&v));
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(convexify_pair(&[1.0], &[1.0], 2.0, EnvelopeGrid::default()).is_err());
        assert!(convexify_pair(&[0.0], &[1.0], 2.0, EnvelopeGrid { box_radius: Some(1.0), ..Default::default() })
            .is_err());
    }
}
