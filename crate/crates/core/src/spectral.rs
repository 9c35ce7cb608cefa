//! Fourier-symbol calculus: applying `A_eps`, projecting onto `A_eps`-free
//! fields and measuring constraint violations in `H^{-1}`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::field::{frequency, unravel, PeriodicField, Spectrum};
use crate::linalg;
use crate::operator::{DifferentialOperator, Symbol};

/// Number of sphere directions used when `project_afree` certifies constant rank.
const PROJECTION_RANK_SAMPLES: usize = 512;

/// Applies `i S(2 pi k / L)` mode-wise. Nyquist modes are zeroed first.
pub fn apply_symbol(sym: &Symbol, u: &PeriodicField) -> Result<PeriodicField> {
    if sym.cols() != u.m() || sym.axes() != u.d() {
        return Err(dim_err(format!(
            "symbol acts on {} components in {} variables, field has m={}, d={}",
            sym.cols(),
            sym.axes(),
            u.m(),
            u.d()
        )));
    }
    let spec = u.fft();
    let l = sym.rows();
    let m = u.m();
    let d = u.d();
    let mut out = Spectrum {
        shape: spec.shape.clone(),
        m: l,
        lengths: spec.lengths.clone(),
        coeffs: vec![Complex64::new(0.0, 0.0); spec.len() * l],
    };
    let coeffs = sym.coeffs();
    out.coeffs.par_chunks_mut(l).enumerate().for_each(|(i, o)| {
        let mut idx = vec![0; d];
        let mut eta = vec![0.0; d];
        if spec.angular(i, &mut idx, &mut eta).is_none() {
            return;
        }
        let uh = spec.mode(i);
        for (a, c) in coeffs.iter().enumerate() {
            if eta[a] == 0.0 {
                continue;
            }
            for r in 0..l {
                let mut s = Complex64::new(0.0, 0.0);
                for col in 0..m {
                    s += uh[col] * c[(r, col)];
                }
                o[r] += Complex64::new(0.0, eta[a]) * s;
            }
        }
    });
    Ok(out.ifft())
}

/// `A_eps u`.
pub fn apply_operator(op: &DifferentialOperator, eps: f64, u: &PeriodicField) -> Result<PeriodicField> {
    apply_symbol(&op.rescaled(eps)?, u)
}

/// `sqrt(sum_{k != 0} |g_hat(k)|^2 / (1 + |2 pi k|^2) + |g_hat(0)|^2)`.
pub fn h_minus1_norm(g: &PeriodicField) -> f64 {
    let spec = g.fft();
    let d = g.d();
    let m = g.m();
    let mut idx = vec![0; d];
    let mut total = 0.0;
    for i in 0..spec.len() {
        unravel(i, &spec.shape, &mut idx);
        let mut k2 = 0.0;
        for a in 0..d {
            let (k, _) = frequency(idx[a], spec.shape[a]);
            let w = 2.0 * std::f64::consts::PI * k as f64 / spec.lengths[a];
            k2 += w * w;
        }
        let e: f64 = spec.coeffs[i * m..(i + 1) * m].iter().map(|z| z.norm_sqr()).sum();
        total += e / (1.0 + k2);
    }
    total.sqrt()
}

/// Image of a field under the constraint, with its norms.
#[derive(Clone, Debug)]
pub struct ConstraintResidual {
    pub field: PeriodicField,
    pub h_minus1: f64,
    pub l2: f64,
}

pub fn constraint_residual(sym: &Symbol, u: &PeriodicField) -> Result<ConstraintResidual> {
    let field = apply_symbol(sym, u)?;
    Ok(ConstraintResidual { h_minus1: h_minus1_norm(&field), l2: field.l2_norm(), field })
}

/// Mode-wise orthogonal projectors onto `ker S(2 pi k / L)` for one grid.
///
/// Nyquist modes are mapped to zero; the zero mode is kept or zeroed
/// according to `keep_mean`.
#[derive(Clone, Debug)]
pub struct Projector {
    shape: Vec<usize>,
    lengths: Vec<f64>,
    m: usize,
    mats: Vec<f64>,
}

impl Projector {
    pub fn new(sym: &Symbol, shape: &[usize], lengths: &[f64], keep_mean: bool, tol: f64) -> Result<Self> {
        if sym.axes() != shape.len() || lengths.len() != shape.len() {
            return Err(dim_err("symbol and grid dimensions differ"));
        }
        let m = sym.cols();
        let n: usize = shape.iter().product();
        let mut mats = vec![0.0; n * m * m];
        let d = shape.len();
        mats.par_chunks_mut(m * m).enumerate().for_each(|(i, p)| {
            let mut idx = vec![0; d];
            unravel(i, shape, &mut idx);
            let mut eta = vec![0.0; d];
            let mut zero = true;
            for a in 0..d {
                let (k, nyq) = frequency(idx[a], shape[a]);
                if nyq {
                    return;
                }
                zero &= k == 0;
                eta[a] = 2.0 * std::f64::consts::PI * k as f64 / lengths[a];
            }
            let proj: DMatrix<f64> = if zero {
                if !keep_mean {
                    return;
                }
                DMatrix::identity(m, m)
            } else {
                linalg::kernel_projector(&sym.eval(&eta), tol)
            };
            for r in 0..m {
                for c in 0..m {
                    p[r * m + c] = proj[(r, c)];
                }
            }
        });
        Ok(Self { shape: shape.to_vec(), lengths: lengths.to_vec(), m, mats })
    }

    pub fn for_field(sym: &Symbol, u: &PeriodicField, keep_mean: bool) -> Result<Self> {
        Self::new(sym, u.shape(), u.lengths(), keep_mean, linalg::DEFAULT_TOL)
    }

    pub fn apply_spectrum(&self, spec: &mut Spectrum) {
        let m = self.m;
        spec.coeffs.par_chunks_mut(m).enumerate().for_each(|(i, u)| {
            let p = &self.mats[i * m * m..(i + 1) * m * m];
            let mut out = [Complex64::new(0.0, 0.0); 16];
            let mut heap;
            let buf: &mut [Complex64] = if m <= 16 {
                &mut out[..m]
            } else {
                heap = vec![Complex64::new(0.0, 0.0); m];
                &mut heap
            };
            for r in 0..m {
                let mut s = Complex64::new(0.0, 0.0);
                for c in 0..m {
                    s += u[c] * p[r * m + c];
                }
                buf[r] = s;
            }
            u.copy_from_slice(buf);
        });
    }

    pub fn apply(&self, u: &PeriodicField) -> Result<PeriodicField> {
        if u.shape() != self.shape.as_slice() || u.lengths() != self.lengths.as_slice() || u.m() != self.m {
            return Err(dim_err("projector built for a different grid"));
        }
        let mut spec = u.fft();
        self.apply_spectrum(&mut spec);
        Ok(spec.ifft())
    }
}

/// Projection onto the kernel of an arbitrary first-order symbol (no rank
/// certification; used for reduced and limit constraints).
pub fn project_symbol(sym: &Symbol, u: &PeriodicField, keep_mean: bool) -> Result<PeriodicField> {
    Projector::for_field(sym, u, keep_mean)?.apply(u)
}

/// Orthogonal projection onto `A_eps`-free fields.
pub fn project_afree(
    op: &DifferentialOperator,
    eps: f64,
    u: &PeriodicField,
    keep_mean: bool,
) -> Result<PeriodicField> {
    let cert = op.check_constant_rank(PROJECTION_RANK_SAMPLES, linalg::DEFAULT_TOL)?;
    if !cert.is_constant {
        return Err(Error::NonConstantRank);
    }
    if u.m() != op.m() || u.d() != op.d() {
        return Err(dim_err("field does not match operator"));
    }
    project_symbol(&op.rescaled(eps)?, u, keep_mean)
}

/// Both sides of the projection error estimate
/// `|u - P u|_{L2} <= c |A_eps u|_{H^{-1}}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProjectionBound {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

pub fn projection_error_bound_check(
    op: &DifferentialOperator,
    eps: f64,
    u: &PeriodicField,
) -> Result<ProjectionBound> {
    let p = project_afree(op, eps, u, true)?;
    let lhs = u.sub(&p)?.l2_norm();
    let rhs = h_minus1_norm(&apply_operator(op, eps, u)?);
    let tol = 1e-12 * u.l2_norm().max(f64::MIN_POSITIVE);
    if rhs <= tol && lhs > 1e3 * tol {
        return Err(Error::Precondition(format!(
            "projection moved an operator-free field by {lhs:.3e}; projector inconsistent"
        )));
    }
    let ratio = if rhs > tol { lhs / rhs } else { 0.0 };
    Ok(ProjectionBound { lhs, rhs, ratio })
}
