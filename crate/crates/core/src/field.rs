//! Real vector-valued periodic fields on cell-centered uniform grids, with a
//! normalized discrete Fourier view.

use std::cell::RefCell;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{dim_err, Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// A real `m`-vector field sampled at the cell centers `(i + 1/2) L / N` of a
/// periodic box with side lengths `L` (unit cell by default).
///
/// Values are stored node-major in row-major node order (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicField {
    shape: Vec<usize>,
    m: usize,
    lengths: Vec<f64>,
    values: Vec<f64>,
}

/// Fourier coefficients `u_hat(k)` normalized so that `u_hat(0)` is the mean.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub shape: Vec<usize>,
    pub m: usize,
    pub lengths: Vec<f64>,
    /// Node-major: `coeffs[mode * m + c]`.
    pub coeffs: Vec<Complex64>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Grid("grid needs at least one axis".into()));
    }
    for &n in shape {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Grid(format!("grid sizes must be even and >= 4, got {shape:?}")));
        }
    }
    Ok(())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

/// Multi-index of a flat node index.
pub fn unravel(mut idx: usize, shape: &[usize], out: &mut [usize]) {
    for a in (0..shape.len()).rev() {
        out[a] = idx % shape[a];
        idx /= shape[a];
    }
}

/// Signed integer frequency of DFT index `i` on an axis with `n` nodes, and
/// whether it is the Nyquist index.
pub fn frequency(i: usize, n: usize) -> (i64, bool) {
    let half = n / 2;
    if i < half {
        (i as i64, false)
    } else if i == half && n.is_multiple_of(2) {
        (half as i64, true)
    } else {
        (i as i64 - n as i64, false)
    }
}

impl PeriodicField {
    pub fn zeros(shape: &[usize], m: usize) -> Result<Self> {
        Self::zeros_with_lengths(shape, m, &vec![1.0; shape.len()])
    }

    pub fn zeros_with_lengths(shape: &[usize], m: usize, lengths: &[f64]) -> Result<Self> {
        check_shape(shape)?;
        if m == 0 {
            return Err(dim_err("field needs m >= 1"));
        }
        if lengths.len() != shape.len() || lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Grid("lengths must be positive, one per axis".into()));
        }
        let n: usize = shape.iter().product();
        Ok(Self { shape: shape.to_vec(), m, lengths: lengths.to_vec(), values: vec![0.0; n * m] })
    }

    pub fn from_values(shape: &[usize], m: usize, values: Vec<f64>) -> Result<Self> {
        let mut f = Self::zeros(shape, m)?;
        if values.len() != f.values.len() {
            return Err(dim_err(format!("expected {} values, got {}", f.values.len(), values.len())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite field value".into()));
        }
        f.values = values;
        Ok(f)
    }

    /// Samples `func(x, out)` at every node; `x` is the physical position.
    pub fn from_fn<F>(shape: &[usize], m: usize, mut func: F) -> Result<Self>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut f = Self::zeros(shape, m)?;
        f.fill_with(&mut func);
        Ok(f)
    }

    pub fn from_fn_with_lengths<F>(shape: &[usize], m: usize, lengths: &[f64], mut func: F) -> Result<Self>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut f = Self::zeros_with_lengths(shape, m, lengths)?;
        f.fill_with(&mut func);
        Ok(f)
    }

    fn fill_with<F: FnMut(&[f64], &mut [f64])>(&mut self, func: &mut F) {
        let d = self.shape.len();
        let mut idx = vec![0; d];
        let mut x = vec![0.0; d];
        for node in 0..self.len() {
            self.position(node, &mut idx, &mut x);
            let m = self.m;
            func(&x, &mut self.values[node * m..(node + 1) * m]);
        }
    }

    /// Constant field.
    pub fn constant(shape: &[usize], value: &[f64]) -> Result<Self> {
        Self::from_fn(shape, value.len(), |_, out| out.copy_from_slice(value))
    }

    pub fn d(&self) -> usize {
        self.shape.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.values.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.m..(i + 1) * self.m]
    }

    /// Physical position of node `node`; `idx` receives its multi-index.
    pub fn position(&self, node: usize, idx: &mut [usize], x: &mut [f64]) {
        unravel(node, &self.shape, idx);
        for a in 0..self.shape.len() {
            x[a] = (idx[a] as f64 + 0.5) / self.shape[a] as f64 * self.lengths[a];
        }
    }

    /// Field with identical grid and new values.
    pub fn with_values(&self, m: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.len() * m);
        Self { shape: self.shape.clone(), m, lengths: self.lengths.clone(), values }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.shape == other.shape && self.lengths == other.lengths
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.m];
        for node in self.values.chunks(self.m) {
            for (a, v) in acc.iter_mut().zip(node) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        acc.iter().map(|a| a / n).collect()
    }

    /// `sqrt(mean |u|^2)`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|x| x * x).sum::<f64>() / self.len() as f64).sqrt()
    }

    /// `mean(u . v)`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.with_values(self.m, self.values.iter().map(|x| x * s).collect())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.same_grid(other) || self.m != other.m {
            return Err(dim_err("fields live on different grids"));
        }
        let v = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(self.with_values(self.m, v))
    }

    /// Forward transform, normalized by the node count.
    pub fn fft(&self) -> Spectrum {
        let n = self.len();
        let m = self.m;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n * m];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for c in 0..m {
            for i in 0..n {
                buf[i] = Complex64::new(self.values[i * m + c], 0.0);
            }
            fft_nd(&mut buf, &self.shape, false);
            for i in 0..n {
                coeffs[i * m + c] = buf[i] * scale;
            }
        }
        Spectrum { shape: self.shape.clone(), m, lengths: self.lengths.clone(), coeffs }
    }

    /// Binary format: little-endian `u64` d, `u64` m, `u64` shape[d], then the
    /// node-major row-major `f64` payload.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.d() as u64).to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        for &n in &self.shape {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &x in &self.values {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let d = next(&mut r)? as usize;
        let m = next(&mut r)? as usize;
        if d == 0 || d > 8 || m == 0 || m > 1 << 16 {
            return Err(Error::InvalidParameter(format!("implausible field header d={d}, m={m}")));
        }
        let mut shape = Vec::with_capacity(d);
        for _ in 0..d {
            shape.push(next(&mut r)? as usize);
        }
        check_shape(&shape)?;
        let count = shape.iter().product::<usize>() * m;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Self::from_values(&shape, m, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        crate::report::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// CSV of the 2D slice spanned by `axes`, with all other indices fixed
    /// at `fixed` (one entry per axis; entries for `axes` are ignored).
    pub fn slice_csv(&self, axes: (usize, usize), fixed: &[usize]) -> Result<String> {
        let d = self.d();
        if axes.0 >= d || axes.1 >= d || axes.0 == axes.1 || fixed.len() != d {
            return Err(dim_err("invalid slice specification"));
        }
        let st = strides(&self.shape);
        let mut out = String::from("x,y");
        for c in 0..self.m {
            out.push_str(&format!(",u{c}"));
        }
        out.push('\n');
        let mut base = 0;
        for a in 0..d {
            if a != axes.0 && a != axes.1 {
                if fixed[a] >= self.shape[a] {
                    return Err(dim_err("slice index out of range"));
                }
                base += fixed[a] * st[a];
            }
        }
        for i in 0..self.shape[axes.0] {
            for j in 0..self.shape[axes.1] {
                let node = base + i * st[axes.0] + j * st[axes.1];
                let x = (i as f64 + 0.5) / self.shape[axes.0] as f64 * self.lengths[axes.0];
                let y = (j as f64 + 0.5) / self.shape[axes.1] as f64 * self.lengths[axes.1];
                out.push_str(&format!("{x:.12e},{y:.12e}"));
                for v in self.node(node) {
                    out.push_str(&format!(",{v:.12e}"));
                }
                out.push('\n');
            }
        }
        Ok(out)
    }
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.coeffs.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn mode(&self, i: usize) -> &[Complex64] {
        &self.coeffs[i * self.m..(i + 1) * self.m]
    }

    /// Angular frequency `2 pi k / L` of mode `i`; returns `None` for modes
    /// on a Nyquist hyperplane.
    pub fn angular(&self, i: usize, idx: &mut [usize], eta: &mut [f64]) -> Option<()> {
        unravel(i, &self.shape, idx);
        let mut nyq = false;
        for a in 0..self.shape.len() {
            let (k, is_nyq) = frequency(idx[a], self.shape[a]);
            nyq |= is_nyq;
            eta[a] = 2.0 * std::f64::consts::PI * k as f64 / self.lengths[a];
        }
        if nyq {
            None
        } else {
            Some(())
        }
    }

    /// Inverse transform; the imaginary part (rounding noise) is dropped.
    pub fn ifft(&self) -> PeriodicField {
        let n = self.len();
        let m = self.m;
        let mut values = vec![0.0; n * m];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..m {
            for i in 0..n {
                buf[i] = self.coeffs[i * m + c];
            }
            fft_nd(&mut buf, &self.shape, true);
            for i in 0..n {
                values[i * m + c] = buf[i].re;
            }
        }
        PeriodicField { shape: self.shape.clone(), m, lengths: self.lengths.clone(), values }
    }
}

/// Unnormalized in-place n-dimensional DFT along every axis.
pub fn fft_nd(buf: &mut [Complex64], shape: &[usize], inverse: bool) {
    let st = strides(shape);
    let total: usize = shape.iter().product();
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        for a in 0..shape.len() {
            let n = shape[a];
            if n == 1 {
                continue;
            }
            let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
            let stride = st[a];
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let start = outer + inner;
                    for k in 0..n {
                        line[k] = buf[start + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for k in 0..n {
                        buf[start + k * stride] = line[k];
                    }
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn shape_rules() {
        assert!(PeriodicField::zeros(&[4, 6], 1).is_ok());
        assert!(PeriodicField::zeros(&[3, 4], 1).is_err());
        assert!(PeriodicField::zeros(&[2, 4], 1).is_err());
    }

    #[test]
    fn mean_is_zero_mode() {
        let f = PeriodicField::from_fn(&[8, 6], 2, |x, o| {
            o[0] = 1.5 + (2.0 * PI * x[0]).sin();
            o[1] = -0.25 + x[1];
        })
        .unwrap();
        let s = f.fft();
        let mean = f.mean();
        assert!((s.coeffs[0].re - mean[0]).abs() < 1e-15);
        assert!((s.coeffs[1].re - mean[1]).abs() < 1e-15);
    }

    #[test]
    fn round_trip() {
        let f = PeriodicField::from_fn(&[8, 4, 6], 3, |x, o| {
            o[0] = x[0] * x[1];
            o[1] = (x[2] * 7.0).cos();
            o[2] = 1.0;
        })
        .unwrap();
        let g = f.fft().ifft();
        let err = f.sub(&g).unwrap().max_abs();
        assert!(err < 1e-13 * f.max_abs());
    }

    #[test]
    fn single_mode_magnitude() {
        let f = PeriodicField::from_fn(&[16, 4], 1, |x, o| o[0] = (2.0 * PI * x[0]).sin()).unwrap();
        let s = f.fft();
        assert!((s.coeffs[4].norm() - 0.5).abs() < 1e-14);
        assert!((s.coeffs[15 * 4].norm() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn binary_round_trip() {
        let f = PeriodicField::from_fn(&[4, 8], 2, |x, o| {
            o[0] = x[0];
            o[1] = -x[1];
        })
        .unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (2 + 2) + 8 * 64);
        assert_eq!(PeriodicField::read_binary(&buf[..]).unwrap(), f);
    }

    #[test]
    fn slice_csv_layout() {
        let f = PeriodicField::constant(&[4, 4, 4], &[1.0]).unwrap();
        let csv = f.slice_csv((0, 2), &[0, 1, 0]).unwrap();
        assert_eq!(csv.lines().count(), 17);
        assert!(csv.starts_with("x,y,u0\n"));
    }
}
