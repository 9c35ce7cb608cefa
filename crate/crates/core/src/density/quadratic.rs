use std::sync::Arc;

use nalgebra::DMatrix;

use super::{frac, EnergyDensity, GrowthConstants};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::operator::sphere_directions;

type CoefficientFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Periodic coefficient field `C(z)` of a quadratic density.
#[derive(Clone)]
pub enum Coefficient {
    /// `C(z) = C`.
    Constant(DMatrix<f64>),
    /// `C(z) = a(z_axis) I` with `a = low` for `frac(z_axis) < fraction`,
    /// `high` otherwise.
    Laminate { axis: usize, low: f64, high: f64, fraction: f64 },
    /// `C(z) = (base + amplitude prod_i cos(2 pi z_i)) I`.
    Smooth { base: f64, amplitude: f64 },
    /// Arbitrary matrix field with explicit independence flags.
    Custom { func: CoefficientFn, independent_of_zd: bool, independent_of_zprime: bool },
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c:?})"),
            Coefficient::Laminate { axis, low, high, fraction } => {
                write!(f, "Laminate {{ axis: {axis}, low: {low}, high: {high}, fraction: {fraction} }}")
            }
            Coefficient::Smooth { base, amplitude } => write!(f, "Smooth {{ base: {base}, amplitude: {amplitude} }}"),
            Coefficient::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// `f(z, xi) = 1/2 xi . C(z) xi`.
#[derive(Clone, Debug)]
pub struct QuadraticDensity {
    d: usize,
    m: usize,
    coeff: Coefficient,
    lambda_min: f64,
    lambda_max: f64,
}

enum Scalar {
    Value(f64),
    Matrix(DMatrix<f64>),
}

impl QuadraticDensity {
    fn eval(&self, z: &[f64]) -> Scalar {
        match &self.coeff {
            Coefficient::Constant(c) => Scalar::Matrix(c.clone()),
            Coefficient::Laminate { axis, low, high, fraction } => {
                Scalar::Value(if frac(z[*axis]) < *fraction { *low } else { *high })
            }
            Coefficient::Smooth { base, amplitude } => {
                let prod: f64 = z.iter().map(|t| (2.0 * std::f64::consts::PI * t).cos()).product();
                Scalar::Value(base + amplitude * prod)
            }
            Coefficient::Custom { func, .. } => Scalar::Matrix(func(z)),
        }
    }

    pub fn coefficient(&self) -> &Coefficient {
        &self.coeff
    }

    pub fn eigen_bounds(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    /// Two-phase scalar laminate `a(z_axis) in {low, high}` with equal volume fractions.
    pub fn laminate(d: usize, m: usize, axis: usize, low: f64, high: f64) -> Result<Self> {
        quadratic_density(d, m, Coefficient::Laminate { axis, low, high, fraction: 0.5 })
    }

    pub fn identity(d: usize, m: usize) -> Result<Self> {
        quadratic_density(d, m, Coefficient::Constant(DMatrix::identity(m, m)))
    }
}

/// Builds a quadratic density after checking `C(z)` is symmetric positive
/// definite on a deterministic sample of cell points.
pub fn quadratic_density(d: usize, m: usize, coeff: Coefficient) -> Result<QuadraticDensity> {
    if d == 0 || m == 0 {
        return Err(Error::Density("need d >= 1 and m >= 1".into()));
    }
    let (lmin, lmax) = match &coeff {
        Coefficient::Laminate { axis, low, high, fraction } => {
            if *axis >= d || !(0.0 < *fraction && *fraction < 1.0) {
                return Err(Error::Density("laminate axis or fraction out of range".into()));
            }
            (low.min(*high), low.max(*high))
        }
        Coefficient::Smooth { base, amplitude } => (base - amplitude.abs(), base + amplitude.abs()),
        Coefficient::Constant(c) => spd_bounds(c, m)?,
        Coefficient::Custom { func, .. } => {
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            let mut points = sphere_directions(d.max(2), 2048);
            points.iter_mut().for_each(|p| {
                p.truncate(d);
                p.iter_mut().for_each(|x| *x = frac(0.5 * (*x + 1.0)));
            });
            for p in &points {
                let (a, b) = spd_bounds(&func(p), m)?;
                lo = lo.min(a);
                hi = hi.max(b);
            }
            (lo, hi)
        }
    };
    if !(lmin > 0.0) || !lmax.is_finite() {
        return Err(Error::Density(format!("coefficient is not uniformly positive definite (min eigenvalue {lmin})")));
    }
    Ok(QuadraticDensity { d, m, coeff, lambda_min: lmin, lambda_max: lmax })
}

fn spd_bounds(c: &DMatrix<f64>, m: usize) -> Result<(f64, f64)> {
    if c.shape() != (m, m) {
        return Err(Error::Density(format!("coefficient must be {m}x{m}")));
    }
    if (c - c.transpose()).norm() > 1e-12 * c.norm().max(1.0) {
        return Err(Error::Density("coefficient is not symmetric".into()));
    }
    let eig = c.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !(lo > 0.0) {
        return Err(Error::Density(format!("coefficient has eigenvalue {lo:.3e} <= 0")));
    }
    Ok((lo, hi))
}

impl EnergyDensity for QuadraticDensity {
    fn spatial_dim(&self) -> usize {
        self.d
    }

    fn m(&self) -> usize {
        self.m
    }

    fn p(&self) -> f64 {
        2.0
    }

    fn constants(&self) -> GrowthConstants {
        let h = 0.5 * self.lambda_max;
        GrowthConstants { c1: h, c2: 0.5 * self.lambda_min, c3: 0.0, c4: h }
    }

    fn value(&self, z: &[f64], xi: &[f64]) -> f64 {
        match self.eval(z) {
            Scalar::Value(a) => 0.5 * a * xi.iter().map(|x| x * x).sum::<f64>(),
            Scalar::Matrix(c) => {
                let mut s = 0.0;
                for i in 0..self.m {
                    for j in 0..self.m {
                        s += xi[i] * c[(i, j)] * xi[j];
                    }
                }
                0.5 * s
            }
        }
    }

    fn gradient(&self, z: &[f64], xi: &[f64], out: &mut [f64]) {
        match self.eval(z) {
            Scalar::Value(a) => {
                for (o, x) in out.iter_mut().zip(xi) {
                    *o = a * x;
                }
            }
            Scalar::Matrix(c) => {
                for i in 0..self.m {
                    out[i] = (0..self.m).map(|j| c[(i, j)] * xi[j]).sum();
                }
            }
        }
    }

    fn independent_of_zd(&self) -> bool {
        match &self.coeff {
            Coefficient::Constant(_) => true,
            Coefficient::Laminate { axis, .. } => *axis != self.d - 1,
            Coefficient::Smooth { amplitude, .. } => *amplitude == 0.0,
            Coefficient::Custom { independent_of_zd, .. } => *independent_of_zd,
        }
    }

    fn independent_of_zprime(&self) -> bool {
        match &self.coeff {
            Coefficient::Constant(_) => true,
            Coefficient::Laminate { axis, .. } => *axis == self.d - 1,
            Coefficient::Smooth { amplitude, .. } => *amplitude == 0.0,
            Coefficient::Custom { independent_of_zprime, .. } => *independent_of_zprime,
        }
    }

    fn gradient_lipschitz(&self, _radius: f64) -> f64 {
        self.lambda_max
    }

    fn name(&self) -> String {
        format!("quadratic[{:?}]", self.coeff)
    }
}

/// `f(xi) = scale |xi|^q`, with declared exponent `p` (normally `p = q`).
#[derive(Clone, Debug)]
pub struct PowerDensity {
    d: usize,
    m: usize,
    q: f64,
    p: f64,
    scale: f64,
    constants: GrowthConstants,
}

impl PowerDensity {
    pub fn new(d: usize, m: usize, q: f64, scale: f64) -> Result<Self> {
        if !(q > 1.0) || !(scale > 0.0) {
            return Err(Error::Density("power density needs q > 1 and scale > 0".into()));
        }
        let constants = GrowthConstants { c1: scale, c2: scale, c3: 0.0, c4: scale * q };
        Ok(Self { d, m, q, p: q, scale, constants })
    }
}

impl EnergyDensity for PowerDensity {
    fn spatial_dim(&self) -> usize {
        self.d
    }

    fn m(&self) -> usize {
        self.m
    }

    fn p(&self) -> f64 {
        self.p
    }

    fn constants(&self) -> GrowthConstants {
        self.constants
    }

    fn value(&self, _z: &[f64], xi: &[f64]) -> f64 {
        self.scale * norm(xi).powf(self.q)
    }

    fn gradient(&self, _z: &[f64], xi: &[f64], out: &mut [f64]) {
        let n = norm(xi);
        let f = if n > 0.0 { self.scale * self.q * n.powf(self.q - 2.0) } else { 0.0 };
        for (o, x) in out.iter_mut().zip(xi) {
            *o = f * x;
        }
    }

    fn independent_of_zd(&self) -> bool {
        true
    }

    fn independent_of_zprime(&self) -> bool {
        true
    }

    fn gradient_lipschitz(&self, radius: f64) -> f64 {
        if self.q >= 2.0 {
            self.scale * self.q * (self.q - 1.0).max(1.0) * radius.max(1.0).powf(self.q - 2.0)
        } else {
            f64::INFINITY
        }
    }

    fn name(&self) -> String {
        format!("power[q={}, scale={}]", self.q, self.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::verify_hypotheses;

    #[test]
    fn identity_is_half_square() {
        let f = QuadraticDensity::identity(2, 3).unwrap();
        assert_eq!(f.value(&[0.3, 0.1], &[1.0, 2.0, 2.0]), 4.5);
        let mut g = [0.0; 3];
        f.gradient(&[0.0, 0.0], &[1.0, 2.0, 2.0], &mut g);
        assert_eq!(g, [1.0, 2.0, 2.0]);
    }

    #[test]
    fn laminate_phases_and_flags() {
        let f = QuadraticDensity::laminate(2, 2, 0, 1.0, 4.0).unwrap();
        assert_eq!(f.value(&[0.25, 0.9], &[0.0, 1.0]), 0.5);
        assert_eq!(f.value(&[0.75, 0.9], &[0.0, 1.0]), 2.0);
        assert!(f.independent_of_zd() && !f.independent_of_zprime());
        let g = QuadraticDensity::laminate(2, 2, 1, 1.0, 4.0).unwrap();
        assert!(!g.independent_of_zd() && g.independent_of_zprime());
    }

    #[test]
    fn singular_coefficient_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(quadratic_density(2, 2, Coefficient::Constant(c)).is_err());
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(quadratic_density(2, 2, Coefficient::Constant(ns)).is_err());
        assert!(QuadraticDensity::laminate(2, 2, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn declared_constants_certify() {
        for f in [
            QuadraticDensity::laminate(2, 2, 0, 1.0, 4.0).unwrap(),
            quadratic_density(2, 2, Coefficient::Smooth { base: 2.0, amplitude: 1.0 }).unwrap(),
            quadratic_density(
                2,
                2,
                Coefficient::Constant(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])),
            )
            .unwrap(),
        ] {
            assert!(verify_hypotheses(&f, 2000, 3).unwrap().passed);
        }
    }
}
