use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::field::{frequency, PeriodicField};
use crate::linalg;
use crate::operator::{DifferentialOperator, Symbol};
use crate::spectral::{apply_operator, apply_symbol, h_minus1_norm, project_afree};
use crate::surgery::{cell_average_xprime, cutoff_glue, oscillation_sample, sharp_average_xprime, Profile1d};

/// Slope window for the linear rate in `tau`.
pub const SLOPE_WINDOW: (f64, f64) = (0.85, 1.15);

/// Parameters of the `alpha > 1` localization runs (`eps_j = 1/j`,
/// `tau_j = eps_j^alpha`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationConfig {
    pub alpha: f64,
    pub ladder: Vec<usize>,
    /// Grid nodes per `tau`-period along each in-plane axis.
    pub nodes_per_period: usize,
    pub thickness_nodes: usize,
    /// Stripe axis of the generating cell field.
    pub stripe_axis: usize,
    /// Cell-field values on the two stripes; `None` uses `+1` / `-1` in
    /// every component.
    pub stripe_values: Option<(Vec<f64>, Vec<f64>)>,
    pub pattern: CellPattern,
    pub eta: Profile1d,
}

/// Shape of the generating cell field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellPattern {
    /// Two stripes across the stripe axis, constant in `y_d`.
    #[default]
    Stripes,
    /// Checkerboard in the stripe axis and `y_d`.
    Checker,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            ladder: vec![2, 4, 8, 16],
            nodes_per_period: 4,
            thickness_nodes: 64,
            stripe_axis: 0,
            stripe_values: None,
            pattern: CellPattern::Stripes,
            eta: Profile1d::bump(0.125, 0.875, 0.25),
        }
    }
}

impl LocalizationConfig {
    fn validate(&self, d: usize) -> Result<()> {
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("localization needs alpha > 1, got {}", self.alpha)));
        }
        if self.ladder.is_empty() || self.ladder.iter().any(|&j| j < 2) {
            return Err(Error::Config("ladder entries must be >= 2".into()));
        }
        if self.stripe_axis + 1 >= d {
            return Err(Error::Config(format!("stripe axis {} is not in-plane", self.stripe_axis)));
        }
        self.eta.validate()
    }

    /// `(eps_j, 1/tau_j)`; `j^alpha` must be an integer.
    pub fn scales(&self, j: usize) -> Result<(f64, usize)> {
        let t = (j as f64).powf(self.alpha);
        let n = t.round();
        if (t - n).abs() > 1e-9 * t {
            return Err(Error::Grid(format!("j^alpha = {t} is not an integer for j = {j}")));
        }
        Ok((1.0 / j as f64, n as usize))
    }

    fn target_shape(&self, d: usize, tau_inv: usize) -> Vec<usize> {
        let mut s = vec![self.nodes_per_period * tau_inv; d];
        s[d - 1] = self.thickness_nodes;
        s
    }
}

/// `tau`-periodic `A_eps`-free field: a stripe or checkerboard cell field,
/// oscillation-sampled and projected.
pub fn stripe_generator(
    op: &DifferentialOperator,
    cfg: &LocalizationConfig,
    j: usize,
) -> Result<PeriodicField> {
    let d = op.d();
    let m = op.m();
    let (a, b) = cfg.stripe_values.clone().unwrap_or_else(|| (vec![1.0; m], vec![-1.0; m]));
    if a.len() != m || b.len() != m {
        return Err(dim_err("stripe values do not match the operator"));
    }
    let (eps, tau_inv) = cfg.scales(j)?;
    let mut cell_shape = vec![cfg.nodes_per_period; d];
    cell_shape[d - 1] = match cfg.pattern {
        CellPattern::Stripes => 4,
        // The cell's y_d period maps onto eps^(alpha-1) of the thickness.
        CellPattern::Checker => {
            let n = cfg.thickness_nodes as f64 * eps.powf(cfg.alpha - 1.0);
            if (n - n.round()).abs() > 1e-9 || n.round() < 4.0 {
                return Err(Error::Grid(format!("thickness grid cannot hold a checker cell at j = {j}")));
            }
            n.round() as usize
        }
    };
    let axis = cfg.stripe_axis;
    let checker = cfg.pattern == CellPattern::Checker;
    let cell = PeriodicField::from_fn(&cell_shape, m, |y, out| {
        let flip = checker && y[d - 1] >= 0.5;
        out.copy_from_slice(if (y[axis] < 0.5) != flip { &a } else { &b });
    })?;
    let sampled = oscillation_sample(&cell, eps, cfg.alpha, &cfg.target_shape(d, tau_inv))?;
    project_afree(op, eps, &sampled, true)
}

/// Least-squares slope of `log y` against `log x` over the positive pairs.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Largest Fourier coefficient with `|k|_inf <= kmax`, the mean included.
pub fn low_mode_amplitude(v: &PeriodicField, kmax: i64) -> f64 {
    let spec = v.fft();
    let mut idx = vec![0; v.d()];
    let mut worst: f64 = 0.0;
    for i in 0..spec.len() {
        crate::field::unravel(i, &spec.shape, &mut idx);
        let low = idx.iter().zip(&spec.shape).all(|(&k, &n)| frequency(k, n).0.abs() <= kmax);
        if low {
            let a = spec.mode(i).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(a);
        }
    }
    worst
}

fn check_free(op: &DifferentialOperator, eps: f64, v: &PeriodicField) -> Result<f64> {
    let r = h_minus1_norm(&apply_operator(op, eps, v)?);
    if r > 1e-9 * (1.0 + v.l2_norm()) {
        return Err(Error::Precondition(format!("input is not A_eps-free (residual {r:.3e})")));
    }
    Ok(r)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub j: usize,
    pub eps: f64,
    pub tau: f64,
    /// `|A_eps[eta (v# - v_bar)]|_{H^-1}`.
    pub violation: f64,
    /// `eps * violation = |eta' A^(d) (v# - v_bar)|_{H^-1}`.
    pub scaled_violation: f64,
    pub amplitude: f64,
    pub input_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub alpha: f64,
    pub rows: Vec<LocalizationRow>,
    /// Slope of `eps * violation` against `tau` (the gated rate).
    pub slope: Option<f64>,
    /// Slope of the unscaled violation against `tau`.
    pub slope_raw: Option<f64>,
    pub passed: bool,
}

/// Cutoff measurement for a prepared field sequence; `tau_inv[i]` is the
/// in-plane period count of `fields[i]`.
pub fn localization_rate_fields(
    op: &DifferentialOperator,
    alpha: f64,
    eps: &[f64],
    tau_inv: &[usize],
    fields: &[PeriodicField],
    eta: &Profile1d,
) -> Result<LocalizationReport> {
    if eps.len() != fields.len() || tau_inv.len() != fields.len() {
        return Err(dim_err("eps, tau and field sequences differ in length"));
    }
    eta.validate()?;
    let d = op.d();
    let ones = vec![Profile1d::One; d - 1];
    let mut rows = Vec::with_capacity(fields.len());
    for ((&e, &n), v) in eps.iter().zip(tau_inv).zip(fields) {
        let input_residual = check_free(op, e, v)?;
        let sharp = sharp_average_xprime(v, n)?;
        let bar = cell_average_xprime(v, n)?;
        let w = sharp.sub(&bar)?;
        let violation = h_minus1_norm(&apply_operator(op, e, &cutoff_glue(&w, eta, &ones)?)?);
        rows.push(LocalizationRow {
            j: (1.0 / e).round() as usize,
            eps: e,
            tau: 1.0 / n as f64,
            violation,
            scaled_violation: e * violation,
            amplitude: w.l2_norm(),
            input_residual,
        });
    }
    let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    let slope = loglog_slope(&taus, &rows.iter().map(|r| r.scaled_violation).collect::<Vec<_>>());
    let slope_raw = loglog_slope(&taus, &rows.iter().map(|r| r.violation).collect::<Vec<_>>());
    let scale = fields.iter().map(|v| v.l2_norm()).fold(0.0, f64::max);
    let negligible = rows.iter().all(|r| r.violation <= 1e-12 * (1.0 + scale));
    let passed = negligible || slope.is_some_and(|s| (SLOPE_WINDOW.0..=SLOPE_WINDOW.1).contains(&s));
    Ok(LocalizationReport { alpha, rows, slope, slope_raw, passed })
}

/// Localization in `x_d` over the configured ladder with stripe fields.
pub fn localization_rate(op: &DifferentialOperator, cfg: &LocalizationConfig) -> Result<LocalizationReport> {
    cfg.validate(op.d())?;
    let mut eps = Vec::new();
    let mut tau_inv = Vec::new();
    let mut fields = Vec::new();
    for &j in &cfg.ladder {
        let (e, n) = cfg.scales(j)?;
        eps.push(e);
        tau_inv.push(n);
        fields.push(stripe_generator(op, cfg, j)?);
    }
    localization_rate_fields(op, cfg.alpha, &eps, &tau_inv, &fields, &cfg.eta)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XprimeRow {
    pub eps: f64,
    pub input_residual: f64,
    pub low_modes: f64,
    /// `|A_eps[rho' v]|_{H^-1}`.
    pub violation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XprimeReport {
    pub rows: Vec<XprimeRow>,
    pub decays: bool,
}

/// Localization in `x'` for zero-mean, asymptotically `A_eps`-free fields.
pub fn localization_xprime(
    op: &DifferentialOperator,
    eps: &[f64],
    fields: &[PeriodicField],
    rho_prime: &[Profile1d],
) -> Result<XprimeReport> {
    let d = op.d();
    if eps.len() != fields.len() {
        return Err(dim_err("eps and field sequences differ in length"));
    }
    if rho_prime.len() != d - 1 || !rho_prime.iter().any(Profile1d::is_compactly_supported) {
        return Err(Error::Precondition("rho' must be a compactly supported in-plane cutoff".into()));
    }
    let mut rows = Vec::with_capacity(fields.len());
    for (&e, v) in eps.iter().zip(fields) {
        let input_residual = h_minus1_norm(&apply_operator(op, e, v)?);
        let low_modes = low_mode_amplitude(v, 2);
        let violation = h_minus1_norm(&apply_operator(op, e, &cutoff_glue(v, &Profile1d::One, rho_prime)?)?);
        rows.push(XprimeRow { eps: e, input_residual, low_modes, violation });
    }
    let scale = fields.iter().map(|v| v.l2_norm()).fold(0.0, f64::max);
    if let Some(last) = rows.last() {
        if last.input_residual > 1e-8 * (1.0 + scale) || last.low_modes > 1e-8 * (1.0 + scale) {
            return Err(Error::Precondition(format!(
                "sequence is not asymptotically A_eps-free and weakly null (residual {:.3e}, low modes {:.3e})",
                last.input_residual, last.low_modes
            )));
        }
    }
    let decays = rows.len() < 2
        || rows.windows(2).all(|w| w[1].violation <= w[0].violation * (1.0 + 1e-9) + 1e-14);
    Ok(XprimeReport { rows, decays })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferRow {
    pub delta: f64,
    /// `|A_delta v|_{H^-1}`.
    pub a_delta: f64,
    /// `|A^(d)_+ d_d v|`.
    pub thickness_plus: f64,
    /// `delta (|(A_delta)_+ v| + |A'_+ v|)`.
    pub thickness_bound: f64,
    /// `|A'_- v|`.
    pub inplane_minus: f64,
    /// `|(A_delta)_- v|`.
    pub inplane_minus_delta: f64,
    /// `|A_0 v|` evaluated directly.
    pub a0: f64,
    /// `sqrt(thickness_plus^2 + inplane_minus^2)`.
    pub a0_split: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferReport {
    pub beta: f64,
    pub rows: Vec<TransferRow>,
    pub bound_holds: bool,
    pub minus_rows_agree: bool,
    pub a0_decays: bool,
}

fn zero_axis(coeffs: &[DMatrix<f64>], keep: impl Fn(usize) -> bool) -> Result<Symbol> {
    Symbol::new(
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| if keep(k) { c.clone() } else { DMatrix::zeros(c.nrows(), c.ncols()) })
            .collect(),
    )
}

/// Transfers `A_{eps^beta} v_j -> 0` to `A_0 v_j -> 0` through the row split
/// of the normalized operator.
pub fn limit_transfer_check(
    op: &DifferentialOperator,
    beta: f64,
    eps: &[f64],
    fields: &[PeriodicField],
    tol: f64,
) -> Result<TransferReport> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter("beta must be positive".into()));
    }
    if eps.len() != fields.len() || fields.is_empty() {
        return Err(dim_err("eps and field sequences must be nonempty and of equal length"));
    }
    let (nop, dec) = op.normalize(linalg::DEFAULT_TOL)?;
    let (r, l, d) = (dec.r, nop.l(), nop.d());
    let a0 = nop.limit_operator(&dec)?.base.symbol();
    let prime = zero_axis(nop.coeffs(), |k| k + 1 < d)?;
    let thick = zero_axis(nop.coeffs(), |k| k + 1 == d)?;
    let h = |s: &Symbol, v: &PeriodicField| -> Result<f64> {
        if s.rows() == 0 {
            return Ok(0.0);
        }
        Ok(h_minus1_norm(&apply_symbol(s, v)?))
    };
    let mut rows = Vec::with_capacity(fields.len());
    for (&e, v) in eps.iter().zip(fields) {
        let delta = e.powf(beta);
        let full = nop.rescaled(delta)?;
        let plus_delta = h(&full.select_rows(0..r), v)?;
        let prime_plus = h(&prime.select_rows(0..r), v)?;
        let thickness_plus = h(&thick.select_rows(0..r), v)?;
        let inplane_minus = h(&prime.select_rows(r..l), v)?;
        rows.push(TransferRow {
            delta,
            a_delta: h(&full, v)?,
            thickness_plus,
            thickness_bound: delta * (plus_delta + prime_plus),
            inplane_minus,
            inplane_minus_delta: h(&full.select_rows(r..l), v)?,
            a0: h(&a0, v)?,
            a0_split: thickness_plus.hypot(inplane_minus),
        });
    }
    let sup = fields.iter().map(|v| v.l2_norm()).fold(0.0, f64::max);
    let last = rows.last().expect("nonempty");
    if last.a_delta > tol * (1.0 + sup) {
        return Err(Error::Precondition(format!(
            "A_delta residual does not vanish along the sequence ({:.3e})",
            last.a_delta
        )));
    }
    let slack = 1e-12 * (1.0 + sup);
    let bound_holds = rows.iter().all(|r| r.thickness_plus <= r.thickness_bound + slack);
    let minus_rows_agree = rows.iter().all(|r| (r.inplane_minus - r.inplane_minus_delta).abs() <= slack);
    let a0_decays = last.a0 <= tol * (1.0 + sup) || last.a0 < rows[0].a0;
    Ok(TransferReport { beta, rows, bound_holds, minus_rows_agree, a0_decays })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surgery::jump_field;

    fn div2() -> DifferentialOperator {
        DifferentialOperator::builtin("div", 1, 2).unwrap()
    }

    #[test]
    fn stripe_corrector_localizes_linearly_in_tau() {
        let rep = localization_rate(&div2(), &LocalizationConfig::default()).unwrap();
        let s = rep.slope.unwrap();
        assert!(rep.passed, "slope {s}, rows {:?}", rep.rows);
        let raw = rep.slope_raw.unwrap();
        assert!((raw - 0.5).abs() < 0.1, "raw slope {raw}");
        assert!(rep.rows.iter().all(|r| r.amplitude > 0.1));
    }

    #[test]
    fn constant_field_has_nothing_to_cut() {
        let op = div2();
        let cfg = LocalizationConfig { ladder: vec![2], ..LocalizationConfig::default() };
        let v = PeriodicField::constant(&[16, 64], &[0.3, -0.2]).unwrap();
        let rep = localization_rate_fields(&op, 2.0, &[0.5], &[4], &[v], &cfg.eta).unwrap();
        assert!(rep.rows[0].violation < 1e-14);
        assert!(rep.passed);
    }

    #[test]
    fn rejects_non_free_input() {
        let op = div2();
        let v = jump_field(&[16, 16], 0, 0.5, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        let eta = Profile1d::bump(0.125, 0.875, 0.25);
        assert!(localization_rate_fields(&op, 2.0, &[0.5], &[4], &[v], &eta).is_err());
    }

    fn zero_mean_stripes(op: &DifferentialOperator, cfg: &LocalizationConfig) -> (Vec<f64>, Vec<PeriodicField>) {
        let mut eps = Vec::new();
        let mut fields = Vec::new();
        for &j in &cfg.ladder {
            let (e, n) = cfg.scales(j).unwrap();
            let v = stripe_generator(op, cfg, j).unwrap();
            let bar = cell_average_xprime(&v, n).unwrap();
            eps.push(e);
            fields.push(v.sub(&bar).unwrap());
        }
        (eps, fields)
    }

    #[test]
    fn xprime_cutoff_decays() {
        let op = div2();
        let cfg = LocalizationConfig {
            ladder: vec![2, 4, 8],
            pattern: CellPattern::Checker,
            ..LocalizationConfig::default()
        };
        let (eps, fields) = zero_mean_stripes(&op, &cfg);
        let rho = [Profile1d::bump(0.2, 0.8, 0.2)];
        let rep = localization_xprime(&op, &eps, &fields, &rho).unwrap();
        assert!(rep.decays, "{:?}", rep.rows);
        assert!(rep.rows[2].violation < 0.3 * rep.rows[0].violation);
        assert!(localization_xprime(&op, &eps, &fields, &[Profile1d::One]).is_err());
        let zeros: Vec<_> = fields.iter().map(|v| v.scale(0.0)).collect();
        let rep = localization_xprime(&op, &eps, &zeros, &rho).unwrap();
        assert!(rep.rows.iter().all(|r| r.violation == 0.0));
    }

    #[test]
    fn transfer_for_free_fields() {
        let op = div2();
        let cfg = LocalizationConfig { ladder: vec![2, 4, 8], ..LocalizationConfig::default() };
        let mut eps = Vec::new();
        let mut fields = Vec::new();
        for &j in &cfg.ladder {
            let (e, _) = cfg.scales(j).unwrap();
            eps.push(e);
            fields.push(stripe_generator(&op, &cfg, j).unwrap());
        }
        let rep = limit_transfer_check(&op, 1.0, &eps, &fields, 1e-8).unwrap();
        assert!(rep.bound_holds && rep.minus_rows_agree && rep.a0_decays, "{:?}", rep.rows);
        for r in &rep.rows {
            assert!((r.a0 - r.a0_split).abs() <= 1e-12 * (1.0 + r.a0));
        }
        let zeros: Vec<_> = fields.iter().map(|v| v.scale(0.0)).collect();
        let rep = limit_transfer_check(&op, 1.0, &eps, &zeros, 1e-8).unwrap();
        assert!(rep.rows.iter().all(|r| r.a0 == 0.0 && r.a_delta == 0.0));
    }

    #[test]
    fn transfer_rejects_incompatible_jump() {
        let op = div2();
        let v = jump_field(&[16, 16], 1, 0.5, &[0.0, 1.0], &[0.0, -1.0]).unwrap();
        assert!(limit_transfer_check(&op, 1.0, &[0.5, 0.25], &[v.clone(), v], 1e-8).is_err());
    }
}
