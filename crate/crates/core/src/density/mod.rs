//! Energy densities `f(z, xi)` with gradients, declared growth constants and
//! sampled certification of the standing hypotheses.

mod counterexample;
mod envelope;
mod quadratic;

pub use counterexample::{counterexample_density, CounterexampleDensity, Quartet};
pub use envelope::{convexify_pair, legendre_1d, ConvexEnvelopeTable, EnvelopeGrid};
pub use quadratic::{quadratic_density, Coefficient, PowerDensity, QuadraticDensity};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;

/// Declared constants: growth `c1`, coercivity `c2, c3`, p-Lipschitz `c4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// `f(z, xi)`, 1-periodic in each component of `z`.
pub trait EnergyDensity: Send + Sync + std::fmt::Debug {
    /// Number of cell variables `z`.
    fn spatial_dim(&self) -> usize;
    /// Number of field components.
    fn m(&self) -> usize;
    fn p(&self) -> f64;
    fn constants(&self) -> GrowthConstants;
    fn value(&self, z: &[f64], xi: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], xi: &[f64], out: &mut [f64]);
    fn independent_of_zd(&self) -> bool;
    fn independent_of_zprime(&self) -> bool;
    /// Lipschitz bound for `xi -> grad f(z, xi)` on the ball of radius `radius`.
    fn gradient_lipschitz(&self, radius: f64) -> f64;
    /// Absolute slack for sampled convexity checks (interpolated densities).
    fn convexity_tolerance(&self) -> f64 {
        0.0
    }
    fn name(&self) -> String;
}

/// Outcome of one sampled hypothesis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisMargin {
    pub hypothesis: String,
    /// Smallest normalized slack observed (negative means violated).
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub density: String,
    pub samples: usize,
    pub seed: u64,
    pub margins: Vec<HypothesisMargin>,
    pub passed: bool,
}

impl HypothesisReport {
    /// Converts a failed certificate into an error naming the first failure.
    pub fn into_result(self) -> Result<Self> {
        if let Some(f) = self.margins.iter().find(|m| !m.passed) {
            return Err(Error::Hypothesis {
                hypothesis: f.hypothesis.clone(),
                detail: format!("worst normalized margin {:.3e} for {}", f.worst_margin, self.density),
            });
        }
        Ok(self)
    }
}

/// Radius of the ball from which `xi` is sampled.
pub const SAMPLE_RADIUS: f64 = 10.0;
const REL_TOL: f64 = 1e-9;

/// Standard normal variate via Box-Muller.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn sample_ball<R: Rng>(rng: &mut R, m: usize, radius: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..m).map(|_| standard_normal(rng)).collect();
    let n = norm(&g).max(1e-300);
    let r = radius * rng.gen::<f64>().powf(1.0 / m as f64);
    for x in g.iter_mut() {
        *x *= r / n;
    }
    g
}

/// Samples `z` in the cell and `xi, mu` in the ball of radius 10 and records
/// the worst margins of (H0), (H3), (H4), (H5) and the p-Lipschitz bound
/// `|f(xi) - f(mu)| <= c4 (1 + |xi| + |mu|)^(p-1) |xi - mu|`.
pub fn verify_hypotheses(f: &dyn EnergyDensity, n_samples: usize, seed: u64) -> Result<HypothesisReport> {
    let c = f.constants();
    if ![c.c1, c.c2, c.c3, c.c4].iter().all(|x| x.is_finite() && *x >= 0.0) || c.c2 <= 0.0 {
        return Err(Error::Density("declared constants must be finite, nonnegative, c2 > 0".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let p = f.p();
    let (d, m) = (f.spatial_dim(), f.m());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [f64::INFINITY; 5];
    let ctol = f.convexity_tolerance();
    for _ in 0..n_samples {
        let z: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        let xi = sample_ball(&mut rng, m, SAMPLE_RADIUS);
        let mu = sample_ball(&mut rng, m, SAMPLE_RADIUS);
        let fx = f.value(&z, &xi);
        let fm = f.value(&z, &mu);
        let nx = norm(&xi);
        let nm = norm(&mu);
        let scale = 1.0 + nx.powf(p);
        worst[0] = worst[0].min(fx / scale + REL_TOL);
        worst[1] = worst[1].min((c.c1 * scale - fx) / scale + REL_TOL);
        worst[2] = worst[2].min((fx - (c.c2 * nx.powf(p) - c.c3)) / scale + REL_TOL);
        let mid: Vec<f64> = xi.iter().zip(&mu).map(|(a, b)| 0.5 * (a + b)).collect();
        let fmid = f.value(&z, &mid);
        let cscale = 1.0 + fx.abs().max(fm.abs());
        worst[3] = worst[3].min((0.5 * (fx + fm) - fmid + ctol) / cscale + REL_TOL);
        let diff: Vec<f64> = xi.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let bound = c.c4 * (1.0 + nx + nm).powf(p - 1.0) * norm(&diff);
        worst[4] = worst[4].min((bound - (fx - fm).abs() + ctol) / cscale + REL_TOL);
    }
    let names = ["H0 nonnegativity", "H3 growth", "H4 coercivity", "H5 convexity", "p-Lipschitz bound"];
    let margins: Vec<HypothesisMargin> = names
        .iter()
        .zip(worst)
        .map(|(n, w)| HypothesisMargin { hypothesis: n.to_string(), worst_margin: w, passed: w >= 0.0 })
        .collect();
    let passed = margins.iter().all(|m| m.passed);
    Ok(HypothesisReport { density: f.name(), samples: n_samples, seed, margins, passed })
}

/// Reduces cell coordinates to `[0, 1)`.
pub(crate) fn frac(x: f64) -> f64 {
    x - x.floor()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct NormDensity;

    impl EnergyDensity for NormDensity {
        fn spatial_dim(&self) -> usize {
            2
        }
        fn m(&self) -> usize {
            2
        }
        fn p(&self) -> f64 {
            2.0
        }
        fn constants(&self) -> GrowthConstants {
            GrowthConstants { c1: 1.0, c2: 1.0, c3: 0.0, c4: 1.0 }
        }
        fn value(&self, _z: &[f64], xi: &[f64]) -> f64 {
            norm(xi)
        }
        fn gradient(&self, _z: &[f64], xi: &[f64], out: &mut [f64]) {
            let n = norm(xi).max(1e-300);
            for (o, x) in out.iter_mut().zip(xi) {
                *o = x / n;
            }
        }
        fn independent_of_zd(&self) -> bool {
            true
        }
        fn independent_of_zprime(&self) -> bool {
            true
        }
        fn gradient_lipschitz(&self, _radius: f64) -> f64 {
            f64::INFINITY
        }
        fn name(&self) -> String {
            "norm".into()
        }
    }

    #[test]
    fn square_passes() {
        let f = PowerDensity::new(2, 2, 2.0, 1.0).unwrap();
        let rep = verify_hypotheses(&f, 2000, 7).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn linear_growth_fails_coercivity() {
        let rep = verify_hypotheses(&NormDensity, 2000, 7).unwrap();
        assert!(!rep.passed);
        let failed: Vec<_> = rep.margins.iter().filter(|m| !m.passed).map(|m| m.hypothesis.as_str()).collect();
        assert!(failed.contains(&"H4 coercivity"));
        assert!(rep.into_result().is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let f = PowerDensity::new(2, 3, 2.0, 0.5).unwrap();
        let a = verify_hypotheses(&f, 300, 11).unwrap();
        let b = verify_hypotheses(&f, 300, 11).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
