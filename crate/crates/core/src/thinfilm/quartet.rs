use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::Quartet;
use crate::error::{dim_err, Error, Result};
use crate::field::PeriodicField;
use crate::linalg::{self, norm};
use crate::operator::DifferentialOperator;
use crate::spectral::{apply_operator, h_minus1_norm};
use crate::surgery::jump_field;

/// Membership residuals at or below this certify a kernel condition.
pub const MEMBERSHIP_TOL: f64 = 1e-10;
/// Exclusion and independence margins must reach this.
pub const SEPARATION_TOL: f64 = 1e-6;

/// The five quartet conditions with their residuals or margins.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuartetCertificate {
    pub quartet: Quartet,
    /// In-plane axis `n` used for conditions 2 and 3.
    pub n_axis: usize,
    /// Construction parameters, when built by [`construct_quartet`].
    pub z: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub alpha_param: Option<f64>,
    pub beta_param: Option<f64>,
    /// Distance of `(s1 + s2) - (x1 + x2)` from `ker A_0(e_d)`.
    pub limit_kernel_residual: f64,
    /// `|(s1 + s2) - (x1 + x2)|`, must be nonzero.
    pub limit_kernel_norm: f64,
    /// Distances of `x1 - x2` and `s1 - s2` from `ker A(n)`.
    pub xi_jump_residual: f64,
    pub sigma_jump_residual: f64,
    /// Largest distance of `x1 - s1`, `x2 - s2` from `ker A(e_d)`.
    pub exclusion_margin: f64,
    /// Second singular value of `[x1 - s1, x2 - s2]`.
    pub independence_margin: f64,
    pub passed: bool,
}

fn distance_to_kernel(mat: &DMatrix<f64>, x: &[f64]) -> f64 {
    let p = linalg::kernel_projector(mat, linalg::DEFAULT_TOL);
    let v = DVector::from_column_slice(x);
    (&v - &p * &v).norm()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn unit(d: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[k] = 1.0;
    e
}

/// Recomputes every quartet condition for the in-plane axis `n_axis`.
pub fn verify_quartet(op: &DifferentialOperator, quartet: &Quartet, n_axis: usize) -> Result<QuartetCertificate> {
    let d = op.d();
    if n_axis + 1 >= d {
        return Err(Error::InvalidParameter(format!("axis {n_axis} is not an in-plane direction for d = {d}")));
    }
    if quartet.m() != op.m() || [&quartet.xi2, &quartet.sigma1, &quartet.sigma2].iter().any(|v| v.len() != op.m()) {
        return Err(dim_err("quartet vectors do not match the operator"));
    }
    let Quartet { xi1, xi2, sigma1, sigma2 } = quartet;
    let limit = op.limit()?;
    let a0_ed = limit.symbol(&unit(d, d - 1))?;
    let a_n = op.evaluate_symbol(&unit(d, n_axis))?;
    let a_ed = op.a_d().clone();

    let s: Vec<f64> = (0..op.m()).map(|k| sigma1[k] + sigma2[k] - xi1[k] - xi2[k]).collect();
    let limit_kernel_residual = distance_to_kernel(&a0_ed, &s);
    let limit_kernel_norm = norm(&s);
    let xi_jump_residual = distance_to_kernel(&a_n, &diff(xi1, xi2));
    let sigma_jump_residual = distance_to_kernel(&a_n, &diff(sigma1, sigma2));
    let d1 = diff(xi1, sigma1);
    let d2 = diff(xi2, sigma2);
    let exclusion_margin = distance_to_kernel(&a_ed, &d1).max(distance_to_kernel(&a_ed, &d2));
    let mut pair = DMatrix::zeros(op.m(), 2);
    for k in 0..op.m() {
        pair[(k, 0)] = d1[k];
        pair[(k, 1)] = d2[k];
    }
    let sv = linalg::singular_values(&pair);
    let independence_margin = sv.get(1).copied().unwrap_or(0.0);
    let passed = limit_kernel_residual <= MEMBERSHIP_TOL
        && limit_kernel_norm >= SEPARATION_TOL
        && xi_jump_residual <= MEMBERSHIP_TOL
        && sigma_jump_residual <= MEMBERSHIP_TOL
        && exclusion_margin >= SEPARATION_TOL
        && independence_margin >= SEPARATION_TOL;
    Ok(QuartetCertificate {
        quartet: quartet.clone(),
        n_axis,
        z: None,
        v: None,
        alpha_param: None,
        beta_param: None,
        limit_kernel_residual,
        limit_kernel_norm,
        xi_jump_residual,
        sigma_jump_residual,
        exclusion_margin,
        independence_margin,
        passed,
    })
}

/// Canonical quartet `s2 = 0`, `s1 = beta v`, `x1 = s1 + alpha v + z`,
/// `x2 = s2 - alpha v + z`, with `z` the first kernel vector of `A^(d)` and
/// `v` the kernel vector of `A(n)` farthest from `ker A^(d)`. Without an axis,
/// the in-plane axes are searched in order.
pub fn construct_quartet(
    op: &DifferentialOperator,
    n_axis: Option<usize>,
    alpha_param: f64,
    beta_param: f64,
) -> Result<QuartetCertificate> {
    if alpha_param == 0.0 || !alpha_param.is_finite() || !beta_param.is_finite() {
        return Err(Error::InvalidParameter("alpha must be finite and nonzero, beta finite".into()));
    }
    let d = op.d();
    let m = op.m();
    let ker_d = linalg::kernel_basis(op.a_d(), linalg::DEFAULT_TOL);
    if ker_d.ncols() == 0 {
        return Err(Error::Quartet("ker A(e_d) is trivial".into()));
    }
    let z: Vec<f64> = ker_d.column(0).iter().copied().collect();
    let axes: Vec<usize> = match n_axis {
        Some(a) if a + 1 < d => vec![a],
        Some(a) => return Err(Error::InvalidParameter(format!("axis {a} is not in-plane for d = {d}"))),
        None => (0..d - 1).collect(),
    };
    for axis in axes {
        let ker_n = linalg::kernel_basis(op.coeff(axis), linalg::DEFAULT_TOL);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for c in 0..ker_n.ncols() {
            let col: Vec<f64> = ker_n.column(c).iter().copied().collect();
            let r = distance_to_kernel(op.a_d(), &col);
            if best.as_ref().is_none_or(|(b, _)| r > *b + 1e-12) {
                best = Some((r, col));
            }
        }
        let Some((resid, v)) = best else { continue };
        if resid < SEPARATION_TOL {
            continue;
        }
        let sigma2 = vec![0.0; m];
        let sigma1: Vec<f64> = v.iter().map(|x| beta_param * x).collect();
        let xi1: Vec<f64> = (0..m).map(|k| sigma1[k] + alpha_param * v[k] + z[k]).collect();
        let xi2: Vec<f64> = (0..m).map(|k| sigma2[k] - alpha_param * v[k] + z[k]).collect();
        let q = Quartet { xi1, xi2, sigma1, sigma2 };
        let mut cert = verify_quartet(op, &q, axis)?;
        cert.z = Some(z);
        cert.v = Some(v);
        cert.alpha_param = Some(alpha_param);
        cert.beta_param = Some(beta_param);
        return Ok(cert);
    }
    Err(Error::Quartet("every in-plane kernel lies inside ker A(e_d); the operator admits no quartet".into()))
}

/// Relative `H^{-1}` residual of the jump field `minus | plus` across
/// `x_axis = 1/2` under `A_eps`, and whether it is below `1e-8`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct JumpCompatibility {
    pub residual: f64,
    pub compatible: bool,
}

pub fn jump_compatibility(
    op: &DifferentialOperator,
    eps: f64,
    axis: usize,
    minus: &[f64],
    plus: &[f64],
    shape: &[usize],
) -> Result<JumpCompatibility> {
    let v: PeriodicField = jump_field(shape, axis, 0.5, minus, plus)?;
    let jump = norm(&diff(minus, plus));
    if jump == 0.0 {
        return Ok(JumpCompatibility { residual: 0.0, compatible: true });
    }
    let residual = h_minus1_norm(&apply_operator(op, eps, &v)?) / jump;
    Ok(JumpCompatibility { residual, compatible: residual <= 1e-8 })
}
