//! Field surgeries: lattice averages, x'-cell averages, cutoffs, jump fields,
//! oscillatory sampling and x'-rescaling.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::field::{strides, unravel, PeriodicField};

fn check_divides(v: &PeriodicField, n: usize, axes: std::ops::Range<usize>) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("shift count must be positive".into()));
    }
    for a in axes {
        if !v.shape()[a].is_multiple_of(n) {
            return Err(Error::Grid(format!("{n} does not divide grid size {} on axis {a}", v.shape()[a])));
        }
    }
    Ok(())
}

/// Average of the shifted copies `v(y + k/n)`, `k` ranging over the lattice
/// `{0..n-1}^axes` (other axes untouched).
fn lattice_average(v: &PeriodicField, n: usize, axes: std::ops::Range<usize>) -> Result<PeriodicField> {
    check_divides(v, n, axes.clone())?;
    if n == 1 {
        return Ok(v.clone());
    }
    let shape = v.shape().to_vec();
    let d = shape.len();
    let st = strides(&shape);
    let m = v.m();
    let naxes = axes.len();
    let copies = n.pow(naxes as u32);
    let mut out = vec![0.0; v.values().len()];
    let mut idx = vec![0; d];
    let mut shift = vec![0; naxes];
    for node in 0..v.len() {
        unravel(node, &shape, &mut idx);
        let acc = &mut out[node * m..(node + 1) * m];
        for s in 0..copies {
            let mut rem = s;
            for slot in shift.iter_mut() {
                *slot = rem % n;
                rem /= n;
            }
            let mut src = 0;
            for a in 0..d {
                let mut i = idx[a];
                if axes.contains(&a) {
                    i = (i + shift[a - axes.start] * shape[a] / n) % shape[a];
                }
                src += i * st[a];
            }
            for (o, x) in acc.iter_mut().zip(v.node(src)) {
                *o += x;
            }
        }
        for o in acc.iter_mut() {
            *o /= copies as f64;
        }
    }
    Ok(v.with_values(m, out))
}

/// `v^#(y) = n^{-d} sum_k v(y + k/n)`.
pub fn sharp_average(v: &PeriodicField, n: usize) -> Result<PeriodicField> {
    lattice_average(v, n, 0..v.d())
}

/// Lattice average over shifts in the first `d-1` variables only.
pub fn sharp_average_xprime(v: &PeriodicField, j: usize) -> Result<PeriodicField> {
    lattice_average(v, j, 0..v.d() - 1)
}

/// Largest deviation of `v` from its `(1/j)`-shift in any of the first `d-1`
/// variables.
pub fn xprime_periodicity_defect(v: &PeriodicField, j: usize) -> Result<f64> {
    check_divides(v, j, 0..v.d() - 1)?;
    let shape = v.shape();
    let st = strides(shape);
    let mut idx = vec![0; shape.len()];
    let mut worst = 0.0_f64;
    for node in 0..v.len() {
        unravel(node, shape, &mut idx);
        for a in 0..shape.len() - 1 {
            let i = (idx[a] + shape[a] / j) % shape[a];
            let src = node - idx[a] * st[a] + i * st[a];
            for (x, y) in v.node(node).iter().zip(v.node(src)) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(worst)
}

/// x'-constant field holding the mean over one x'-cell at each `x_d` level.
pub fn cell_average_xprime(v: &PeriodicField, tau_inverse: usize) -> Result<PeriodicField> {
    let defect = xprime_periodicity_defect(v, tau_inverse)?;
    if defect > 1e-10 * v.max_abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "field is not 1/{tau_inverse}-periodic in x' (defect {defect:.3e})"
        )));
    }
    let shape = v.shape();
    let d = shape.len();
    let nd = shape[d - 1];
    let m = v.m();
    let mut layer = vec![0.0; nd * m];
    let mut idx = vec![0; d];
    for node in 0..v.len() {
        unravel(node, shape, &mut idx);
        let t = idx[d - 1];
        for c in 0..m {
            layer[t * m + c] += v.node(node)[c];
        }
    }
    let per_layer = (v.len() / nd) as f64;
    let mut out = vec![0.0; v.values().len()];
    for node in 0..v.len() {
        let t = node % nd;
        for c in 0..m {
            out[node * m + c] = layer[t * m + c] / per_layer;
        }
    }
    Ok(v.with_values(m, out))
}

/// One-dimensional cutoff profile on the periodic interval `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile1d {
    /// The constant 1.
    One,
    /// Zero outside `[start, end]`, raised-cosine ramps of width `ramp` at both
    /// ends, 1 in between.
    RaisedCosine { start: f64, end: f64, ramp: f64 },
}

impl Profile1d {
    /// Raised-cosine bump on `[lo, hi]` whose ramps occupy the fraction
    /// `margin` of the interval at each end.
    pub fn bump(lo: f64, hi: f64, margin: f64) -> Self {
        Profile1d::RaisedCosine { start: lo, end: hi, ramp: margin * (hi - lo) }
    }

    pub fn validate(&self) -> Result<()> {
        if let Profile1d::RaisedCosine { start, end, ramp } = *self {
            if !(0.0..1.0).contains(&start) || end > 1.0 || end <= start || !(ramp > 0.0) || 2.0 * ramp > end - start
            {
                return Err(Error::InvalidParameter(format!(
                    "raised-cosine profile needs 0 <= start < end <= 1 and 0 < 2 ramp <= end - start, got {self:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Profile1d::One => 1.0,
            Profile1d::RaisedCosine { start, end, ramp } => {
                if t <= start || t >= end {
                    0.0
                } else if t < start + ramp {
                    0.5 * (1.0 - (std::f64::consts::PI * (t - start) / ramp).cos())
                } else if t > end - ramp {
                    0.5 * (1.0 - (std::f64::consts::PI * (end - t) / ramp).cos())
                } else {
                    1.0
                }
            }
        }
    }

    /// Analytic derivative.
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Profile1d::One => 0.0,
            Profile1d::RaisedCosine { start, end, ramp } => {
                let k = std::f64::consts::PI / ramp;
                if t <= start || t >= end {
                    0.0
                } else if t < start + ramp {
                    0.5 * k * (k * (t - start)).sin()
                } else if t > end - ramp {
                    -0.5 * k * (k * (end - t)).sin()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_compactly_supported(&self) -> bool {
        matches!(self, Profile1d::RaisedCosine { .. })
    }
}

/// `x -> eta_d(x_d) rho'(x') v(x)` with `rho'` a product of 1D profiles.
pub fn cutoff_glue(v: &PeriodicField, eta_d: &Profile1d, rho_prime: &[Profile1d]) -> Result<PeriodicField> {
    let d = v.d();
    if rho_prime.len() != d - 1 {
        return Err(dim_err(format!("rho' needs {} factors, got {}", d - 1, rho_prime.len())));
    }
    eta_d.validate()?;
    for r in rho_prime {
        r.validate()?;
    }
    let mut out = v.clone();
    let mut idx = vec![0; d];
    let mut x = vec![0.0; d];
    for node in 0..v.len() {
        v.position(node, &mut idx, &mut x);
        let mut w = eta_d.value(x[d - 1] / v.lengths()[d - 1]);
        for a in 0..d - 1 {
            w *= rho_prime[a].value(x[a] / v.lengths()[a]);
        }
        for c in out.node_mut(node) {
            *c *= w;
        }
    }
    Ok(out)
}

/// Two-valued field: `minus` where `x_axis < threshold`, `plus` elsewhere.
pub fn jump_field(
    shape: &[usize],
    normal_axis: usize,
    threshold: f64,
    minus: &[f64],
    plus: &[f64],
) -> Result<PeriodicField> {
    if normal_axis >= shape.len() {
        return Err(dim_err("jump axis out of range"));
    }
    if minus.len() != plus.len() || minus.is_empty() {
        return Err(dim_err("jump values must have equal, positive length"));
    }
    let n = shape[normal_axis] as f64;
    let face = threshold * n;
    if !(0.0..=n).contains(&face) || (face - face.round()).abs() > 1e-9 {
        return Err(Error::Grid(format!(
            "jump threshold {threshold} is not aligned with a grid face of a {n}-node axis"
        )));
    }
    let face = face.round() as usize;
    let mut f = PeriodicField::zeros(shape, minus.len())?;
    let mut idx = vec![0; shape.len()];
    for node in 0..f.len() {
        unravel(node, shape, &mut idx);
        let src = if idx[normal_axis] < face { minus } else { plus };
        f.node_mut(node).copy_from_slice(src);
    }
    Ok(f)
}

fn constant_along(v: &PeriodicField, axis: usize) -> bool {
    let shape = v.shape();
    let st = strides(shape);
    let mut idx = vec![0; shape.len()];
    for node in 0..v.len() {
        unravel(node, shape, &mut idx);
        if idx[axis] == 0 {
            continue;
        }
        if v.node(node) != v.node(node - idx[axis] * st[axis]) {
            return false;
        }
    }
    true
}

/// Resamples `v(y)` on a target grid as `v(x' / eps^alpha, x_d / eps^(alpha-1))`.
///
/// Exact index mapping requires `target_i = s_i * source_i` with `s_i` the
/// per-axis scale factor; axes along which `v` is constant are exempt.
pub fn oscillation_sample(v: &PeriodicField, eps: f64, alpha: f64, shape: &[usize]) -> Result<PeriodicField> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    let d = v.d();
    if shape.len() != d {
        return Err(dim_err("target grid dimension differs"));
    }
    let mut scales = vec![eps.powf(-alpha); d];
    scales[d - 1] = eps.powf(1.0 - alpha);
    sample_scaled(v, &scales, shape)
}

/// `x -> v(s_1 x_1, ..., s_d x_d)` on `shape` with exact node alignment.
pub fn sample_scaled(v: &PeriodicField, scales: &[f64], shape: &[usize]) -> Result<PeriodicField> {
    let d = v.d();
    let src_shape = v.shape();
    let mut free = vec![false; d];
    for a in 0..d {
        let want = scales[a] * src_shape[a] as f64;
        if (want - shape[a] as f64).abs() > 1e-9 * want.max(1.0) {
            if constant_along(v, a) {
                free[a] = true;
            } else {
                return Err(Error::Grid(format!(
                    "axis {a}: scale {} maps {} source nodes onto {} target nodes without alignment",
                    scales[a], src_shape[a], shape[a]
                )));
            }
        }
    }
    let m = v.m();
    let mut out = PeriodicField::zeros(shape, m)?;
    let st = strides(src_shape);
    let mut idx = vec![0; d];
    for node in 0..out.len() {
        unravel(node, shape, &mut idx);
        let mut src = 0;
        for a in 0..d {
            let i = if free[a] { 0 } else { idx[a] % src_shape[a] };
            src += i * st[a];
        }
        out.node_mut(node).copy_from_slice(v.node(src));
    }
    Ok(out)
}

/// Stretches one x'-microcell of a `(1/j)`-periodic-in-x' field to the full
/// cell: `v_tilde(x) = v(x'/j, x_d)`.
pub fn rescale_xprime(v: &PeriodicField, j: usize) -> Result<PeriodicField> {
    let defect = xprime_periodicity_defect(v, j)?;
    if defect > 1e-10 * v.max_abs().max(1.0) {
        return Err(Error::Precondition(format!("field is not 1/{j}-periodic in x' (defect {defect:.3e})")));
    }
    let d = v.d();
    let mut shape = v.shape().to_vec();
    for n in shape.iter_mut().take(d - 1) {
        *n /= j;
    }
    let mut out = PeriodicField::zeros(&shape, v.m())?;
    let st = strides(v.shape());
    let mut idx = vec![0; d];
    for node in 0..out.len() {
        unravel(node, &shape, &mut idx);
        let src: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
        out.node_mut(node).copy_from_slice(v.node(src));
    }
    Ok(out)
}

/// Inverse of [`rescale_xprime`]: tiles `v` `j` times along every x' axis.
pub fn tile_xprime(v: &PeriodicField, j: usize) -> Result<PeriodicField> {
    let d = v.d();
    let mut scales = vec![j as f64; d];
    scales[d - 1] = 1.0;
    let mut shape = v.shape().to_vec();
    for n in shape.iter_mut().take(d - 1) {
        *n *= j;
    }
    sample_scaled(v, &scales, &shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(shape: &[usize], freq: f64) -> PeriodicField {
        PeriodicField::from_fn(shape, 1, |x, o| o[0] = (2.0 * PI * freq * x[0]).sin()).unwrap()
    }

    #[test]
    fn sharp_average_examples() {
        let v = sine(&[16, 8], 1.0);
        assert_eq!(sharp_average(&v, 1).unwrap(), v);
        assert!(sharp_average(&v, 2).unwrap().max_abs() < 1e-15);
        let w = sine(&[16, 8], 2.0);
        assert!(sharp_average(&w, 2).unwrap().sub(&w).unwrap().max_abs() < 1e-15);
        assert!(sharp_average(&v, 3).is_err());
    }

    #[test]
    fn sharp_average_xprime_keeps_xd() {
        let v = PeriodicField::from_fn(&[8, 8], 1, |x, o| o[0] = x[1]).unwrap();
        assert_eq!(sharp_average_xprime(&v, 2).unwrap(), v);
        assert!(sharp_average_xprime(&sine(&[8, 8], 1.0), 2).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn cell_average_examples() {
        let c = PeriodicField::constant(&[8, 4], &[2.0]).unwrap();
        assert_eq!(cell_average_xprime(&c, 2).unwrap(), c);
        let v = sine(&[8, 4], 2.0);
        assert!(cell_average_xprime(&v, 2).unwrap().max_abs() < 1e-15);
        assert!(cell_average_xprime(&sine(&[8, 4], 1.0), 2).is_err());
    }

    #[test]
    fn cutoff_examples() {
        let v = PeriodicField::constant(&[8, 16], &[1.0]).unwrap();
        assert_eq!(cutoff_glue(&v, &Profile1d::One, &[Profile1d::One]).unwrap(), v);
        let eta = Profile1d::bump(0.125, 0.875, 0.25);
        let g = cutoff_glue(&v, &eta, &[Profile1d::One]).unwrap();
        for node in 0..g.len() {
            let t = node % 16;
            if !(2..=13).contains(&t) {
                assert_eq!(g.node(node)[0], 0.0);
            }
        }
        assert!(cutoff_glue(&v, &Profile1d::RaisedCosine { start: 0.5, end: 0.4, ramp: 0.1 }, &[Profile1d::One])
            .is_err());
    }

    #[test]
    fn profile_derivative_matches_difference() {
        let p = Profile1d::bump(0.1, 0.9, 0.2);
        for &t in &[0.15, 0.2, 0.5, 0.8, 0.85] {
            let h = 1e-6;
            let fd = (p.value(t + h) - p.value(t - h)) / (2.0 * h);
            assert!((fd - p.derivative(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn jump_field_examples() {
        let c = jump_field(&[8, 8], 0, 0.5, &[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(c, PeriodicField::constant(&[8, 8], &[1.0, 2.0]).unwrap());
        let j = jump_field(&[8, 4], 0, 0.5, &[0.0], &[1.0]).unwrap();
        assert_eq!(j.mean(), vec![0.5]);
        assert!(jump_field(&[8, 4], 0, 0.3, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn oscillation_sample_stripes() {
        let v = jump_field(&[4, 8], 0, 0.5, &[0.0], &[1.0]).unwrap();
        let s = oscillation_sample(&v, 0.25, 1.0, &[16, 8]).unwrap();
        let row: Vec<f64> = (0..16).map(|i| s.node(i * 8)[0]).collect();
        assert_eq!(row, [0., 0., 1., 1.].repeat(4));
        let c = PeriodicField::constant(&[4, 4], &[3.0]).unwrap();
        assert_eq!(oscillation_sample(&c, 0.5, 0.5, &[8, 8]).unwrap().max_abs(), 3.0);
        assert!(oscillation_sample(&v, 0.25, 1.0, &[12, 8]).is_err());
    }

    #[test]
    fn rescale_inverts_tiling() {
        let v = jump_field(&[4, 8], 0, 0.5, &[0.0, 1.0], &[1.0, 0.0]).unwrap();
        let t = tile_xprime(&v, 4).unwrap();
        assert_eq!(t.shape(), &[16, 8]);
        assert_eq!(rescale_xprime(&t, 4).unwrap(), v);
        assert_eq!(rescale_xprime(&v, 1).unwrap(), v);
    }
}
