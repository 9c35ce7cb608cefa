use serde::{Deserialize, Serialize};

use super::envelope::{convexify_pair, ConvexEnvelopeTable, EnvelopeGrid};
use super::{frac, EnergyDensity, GrowthConstants};
use crate::error::{Error, Result};
use crate::linalg::norm;

/// Vectors `(xi1, xi2, sigma1, sigma2)` with `xi1 - sigma1`, `xi2 - sigma2`
/// compatible with the full operator and `xi1 - xi2` with the thickness part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartet {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl Quartet {
    pub fn m(&self) -> usize {
        self.xi1.len()
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        let m = self.m();
        if m == 0 || [&self.xi2, &self.sigma1, &self.sigma2].iter().any(|v| v.len() != m) {
            return Err(Error::Quartet("quartet vectors must share a positive length".into()));
        }
        if self.xi1 == self.sigma1 || self.xi2 == self.sigma2 {
            return Err(Error::Quartet("each phase needs two distinct wells".into()));
        }
        Ok(())
    }
}

/// Two-phase stripe density: phase 1 for `frac(z[axis]) <= 1/2`, phase 2
/// otherwise, each the convex envelope of `|v - a|^(p/2) |v - b|^(p/2)`.
#[derive(Clone, Debug)]
pub struct CounterexampleDensity {
    d: usize,
    axis: usize,
    p: f64,
    quartet: Quartet,
    tables: [ConvexEnvelopeTable; 2],
    constants: GrowthConstants,
}

/// Builds the convexified stripe density on cells of dimension `d`; the
/// stripe axis must be one of the in-plane directions `0..d-1`.
pub fn counterexample_density(
    quartet: &Quartet,
    d: usize,
    stripe_axis: usize,
    p: f64,
    grid: EnvelopeGrid,
) -> Result<CounterexampleDensity> {
    quartet.check_shape()?;
    if d < 2 || stripe_axis + 1 >= d {
        return Err(Error::InvalidParameter(format!("stripe axis {stripe_axis} is not in-plane for d = {d}")));
    }
    let t1 = convexify_pair(&quartet.xi1, &quartet.sigma1, p, grid)?;
    let t2 = convexify_pair(&quartet.xi2, &quartet.sigma2, p, grid)?;
    let constants = merge(table_constants(&t1, p), table_constants(&t2, p));
    Ok(CounterexampleDensity { d, axis: stripe_axis, p, quartet: quartet.clone(), tables: [t1, t2], constants })
}

fn merge(a: GrowthConstants, b: GrowthConstants) -> GrowthConstants {
    GrowthConstants { c1: a.c1.max(b.c1), c2: a.c2.min(b.c2), c3: a.c3.max(b.c3), c4: a.c4.max(b.c4) }
}

/// Growth, coercivity and Lipschitz constants for one envelope table.
///
/// `c3` is fitted over the tabulated nodes and, outside the box, against the
/// lower bound `h(v) >= (|w|^2 - l^2/4)_+^(p/2)` with `w = v - mid`.
fn table_constants(t: &ConvexEnvelopeTable, p: f64) -> GrowthConstants {
    let mid = norm(t.midpoint());
    let diff: Vec<f64> = t.a().iter().zip(t.b()).map(|(x, y)| x - y).collect();
    let half = 0.5 * norm(&diff);
    let c2 = if p == 2.0 { 0.5 } else { 2f64.powf(1.0 - p) * 0.5 };
    let reach = mid + half;

    // h <= (|v| + reach)^p <= 2^(p-1) (|v|^p + reach^p)
    let c1 = 2f64.powf(p - 1.0) * reach.powf(p).max(1.0) * 1.0001;

    let (ns, nr) = t.shape();
    let mut c3: f64 = 0.0;
    let mut slope: f64 = 0.0;
    let h = t.spacing();
    for i in 0..ns {
        for j in 0..nr {
            let (s, r) = t.node_coords(i, j);
            let v = t.node_value(i, j);
            // |v|^2 = |mid + s e + r n|^2 <= (mid + |(s, r)|)^2
            let vmax = mid + (s * s + r * r).sqrt();
            c3 = c3.max(c2 * vmax.powf(p) - v);
            if i + 1 < ns {
                slope = slope.max((t.node_value(i + 1, j) - v).abs() / h / (1.0 + vmax).powf(p - 1.0));
            }
            if j + 1 < nr {
                slope = slope.max((t.node_value(i, j + 1) - v).abs() / h / (1.0 + vmax).powf(p - 1.0));
            }
        }
    }
    // Outside the box the raw product is used; its gradient is bounded by
    // p (|v| + reach)^(p-1) <= p max(1, reach)^(p-1) (1 + |v|)^(p-1).
    let raw_c4 = p * reach.max(1.0).powf(p - 1.0);
    // Beyond the box, h(v) >= (|w|^2 - half^2)_+^(p/2) with |v| <= |w| + mid.
    let mut beyond: f64 = 0.0;
    let mut w = t.radius();
    while w < 1e4 * (1.0 + t.radius()) {
        let lower = (w * w - half * half).max(0.0).powf(0.5 * p);
        beyond = beyond.max(c2 * (w + mid).powf(p) - lower);
        w *= 1.01;
    }
    GrowthConstants { c1, c2, c3: c3.max(beyond) * 1.0001 + 1e-12, c4: (1.25 * slope).max(raw_c4) }
}

impl CounterexampleDensity {
    pub fn quartet(&self) -> &Quartet {
        &self.quartet
    }

    pub fn stripe_axis(&self) -> usize {
        self.axis
    }

    pub fn tables(&self) -> &[ConvexEnvelopeTable; 2] {
        &self.tables
    }

    /// 0 for the first phase (`frac(z[axis]) <= 1/2`), 1 otherwise.
    pub fn phase(&self, z: &[f64]) -> usize {
        if frac(z[self.axis]) <= 0.5 {
            0
        } else {
            1
        }
    }

    /// Unconvexified product density.
    pub fn raw(&self, z: &[f64], xi: &[f64]) -> f64 {
        self.tables[self.phase(z)].raw(xi)
    }
}

impl EnergyDensity for CounterexampleDensity {
    fn spatial_dim(&self) -> usize {
        self.d
    }

    fn m(&self) -> usize {
        self.quartet.m()
    }

    fn p(&self) -> f64 {
        self.p
    }

    fn constants(&self) -> GrowthConstants {
        self.constants
    }

    fn value(&self, z: &[f64], xi: &[f64]) -> f64 {
        self.tables[self.phase(z)].value(xi)
    }

    fn gradient(&self, z: &[f64], xi: &[f64], out: &mut [f64]) {
        self.tables[self.phase(z)].gradient(xi, out)
    }

    fn independent_of_zd(&self) -> bool {
        true
    }

    fn independent_of_zprime(&self) -> bool {
        false
    }

    fn gradient_lipschitz(&self, _radius: f64) -> f64 {
        self.tables[0].curvature().max(self.tables[1].curvature())
    }

    fn convexity_tolerance(&self) -> f64 {
        self.tables[0].interpolation_tolerance().max(self.tables[1].interpolation_tolerance())
    }

    fn name(&self) -> String {
        format!("two-phase envelope (p = {})", self.p)
    }
}
