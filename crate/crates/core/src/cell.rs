//! Convex cell formulas solved by projected gradient descent over
//! zero-mean, constraint-free periodic correctors.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{verify_hypotheses, EnergyDensity};
use crate::error::{dim_err, Error, Result};
use crate::field::{check_shape, PeriodicField};
use crate::linalg::{self, norm};
use crate::operator::{DifferentialOperator, Symbol};
use crate::spectral::{apply_symbol, h_minus1_norm, Projector};

/// Which constraint the corrector satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellMode {
    /// `A` on the unit cube in all `d` variables.
    Full,
    /// `A'` on the `(d-1)`-dimensional cube.
    ReducedXprime,
    /// `A^(d) d_d` on the unit interval.
    Thickness,
    /// The limit operator `A_0` on the unit cube.
    Limit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub max_iterations: usize,
    /// Relative energy decrease over `window` iterations that stops the solve.
    pub tolerance: f64,
    pub window: usize,
    /// Step `tau = step_safety / L`.
    pub step_safety: f64,
    /// Hypothesis samples drawn before solving (0 skips certification).
    pub certify_samples: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { max_iterations: 20_000, tolerance: 1e-9, window: 10, step_safety: 0.9, certify_samples: 256 }
    }
}

/// A cell problem. `shape` and `multicell` always have `d` entries; reduced
/// modes use the first `d - 1` entries (in-plane) or the last one (thickness).
#[derive(Clone, Debug)]
pub struct CellProblem {
    pub operator: DifferentialOperator,
    pub density: Arc<dyn EnergyDensity>,
    pub xi: Vec<f64>,
    pub shape: Vec<usize>,
    pub mode: CellMode,
    pub multicell: Vec<usize>,
    /// Full mode uses `A_eps`; 1 gives `A`.
    pub eps: f64,
    pub params: SolverParams,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub mode: CellMode,
    pub xi: Vec<f64>,
    pub value: f64,
    pub corrector: PeriodicField,
    pub iterations: usize,
    /// L2 norm of the projected gradient at the last iterate.
    pub residual: f64,
    /// `H^{-1}` norm of the constraint applied to the corrector.
    pub constraint_residual: f64,
    pub history: Vec<f64>,
}

/// Serializable digest of a [`CellResult`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellSummary {
    pub mode: CellMode,
    pub xi: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
    pub constraint_residual: f64,
    pub corrector_mean: Vec<f64>,
}

impl CellResult {
    pub fn summary(&self) -> CellSummary {
        CellSummary {
            mode: self.mode,
            xi: self.xi.clone(),
            value: self.value,
            iterations: self.iterations,
            residual: self.residual,
            constraint_residual: self.constraint_residual,
            corrector_mean: self.corrector.mean(),
        }
    }
}

impl CellProblem {
    pub fn new(
        operator: DifferentialOperator,
        density: Arc<dyn EnergyDensity>,
        xi: Vec<f64>,
        shape: Vec<usize>,
        mode: CellMode,
    ) -> Result<Self> {
        let d = operator.d();
        let prob = Self { operator, density, xi, shape, mode, multicell: vec![1; d], eps: 1.0, params: SolverParams::default() };
        prob.validate()?;
        Ok(prob)
    }

    pub fn with_multicell(mut self, n: Vec<usize>) -> Result<Self> {
        self.multicell = n;
        self.validate()?;
        Ok(self)
    }

    pub fn with_params(mut self, params: SolverParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_mode(mut self, mode: CellMode) -> Result<Self> {
        self.mode = mode;
        self.validate()?;
        Ok(self)
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        self.eps = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_xi(mut self, xi: Vec<f64>) -> Result<Self> {
        self.xi = xi;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let d = self.operator.d();
        let m = self.operator.m();
        if self.density.spatial_dim() != d || self.density.m() != m {
            return Err(dim_err(format!(
                "density acts on (d, m) = ({}, {}), operator on ({d}, {m})",
                self.density.spatial_dim(),
                self.density.m()
            )));
        }
        if self.xi.len() != m {
            return Err(dim_err(format!("xi has {} components, expected {m}", self.xi.len())));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if !self.xi.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("xi must be finite".into()));
        }
        if self.shape.len() != d || self.multicell.len() != d {
            return Err(dim_err("grid shape and multicell vector need d entries"));
        }
        check_shape(&self.shape)?;
        for (a, (&n, &k)) in self.shape.iter().zip(&self.multicell).enumerate() {
            if k == 0 || n % k != 0 {
                return Err(Error::Grid(format!("axis {a}: {n} nodes not divisible by multicell factor {k}")));
            }
        }
        match self.mode {
            CellMode::ReducedXprime if !self.density.independent_of_zd() => {
                Err(Error::Precondition("reduced cell formula needs a density independent of z_d".into()))
            }
            CellMode::Thickness if !self.density.independent_of_zprime() => {
                Err(Error::Precondition("thickness cell formula needs a density independent of z'".into()))
            }
            _ => Ok(()),
        }
    }

    /// Grid axes, density axes they feed, and the constraint symbol.
    fn layout(&self) -> Result<(Vec<usize>, Symbol)> {
        let d = self.operator.d();
        Ok(match self.mode {
            CellMode::Full => {
                let cert = self.operator.check_constant_rank(512, linalg::DEFAULT_TOL)?;
                if !cert.is_constant {
                    return Err(Error::NonConstantRank);
                }
                ((0..d).collect(), self.operator.rescaled(self.eps)?)
            }
            CellMode::Limit => ((0..d).collect(), self.operator.limit()?.base.symbol()),
            CellMode::ReducedXprime => ((0..d - 1).collect(), self.operator.reduced_xprime()),
            CellMode::Thickness => (vec![d - 1], self.operator.thickness()),
        })
    }

    fn setup(&self) -> Result<Setup> {
        let (axes, symbol) = self.layout()?;
        let shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let scale: Vec<f64> = axes.iter().map(|&a| self.multicell[a] as f64).collect();
        Ok(Setup {
            density: self.density.clone(),
            xi: self.xi.clone(),
            lengths: vec![1.0; shape.len()],
            shape,
            axes,
            scale,
            symbol,
            params: self.params,
            mode: self.mode,
        })
    }

    /// Mean energy of an explicit corrector on this problem's grid.
    pub fn energy_of(&self, corrector: &PeriodicField) -> Result<f64> {
        let s = self.setup()?;
        if corrector.shape() != s.shape.as_slice() || corrector.m() != self.xi.len() {
            return Err(dim_err("corrector does not match the cell grid"));
        }
        Ok(s.energy(corrector, None))
    }

    /// `H^{-1}` norm of the mode's constraint applied to `corrector`.
    pub fn constraint_residual_of(&self, corrector: &PeriodicField) -> Result<f64> {
        let s = self.setup()?;
        Ok(h_minus1_norm(&apply_symbol(&s.symbol, corrector)?))
    }
}

/// Everything the iteration needs, with the `z`-map
/// `z[axes[a]] = scale[a] * y_a` (other components 0).
struct Setup {
    density: Arc<dyn EnergyDensity>,
    xi: Vec<f64>,
    shape: Vec<usize>,
    lengths: Vec<f64>,
    axes: Vec<usize>,
    scale: Vec<f64>,
    symbol: Symbol,
    params: SolverParams,
    mode: CellMode,
}

impl Setup {
    fn cell_points(&self, template: &PeriodicField) -> Vec<Vec<f64>> {
        let dz = self.density.spatial_dim();
        let mut idx = vec![0; self.shape.len()];
        let mut y = vec![0.0; self.shape.len()];
        (0..template.len())
            .map(|i| {
                template.position(i, &mut idx, &mut y);
                let mut z = vec![0.0; dz];
                for (a, &ax) in self.axes.iter().enumerate() {
                    z[ax] = self.scale[a] * y[a];
                }
                z
            })
            .collect()
    }

    /// Mean energy, optionally writing the pointwise gradient.
    fn energy(&self, v: &PeriodicField, grad: Option<&mut [f64]>) -> f64 {
        let m = v.m();
        let zs = self.cell_points(v);
        let xi = &self.xi;
        let f = self.density.as_ref();
        let point = |i: usize, g: Option<&mut [f64]>| {
            let w: Vec<f64> = v.node(i).iter().zip(xi).map(|(a, b)| a + b).collect();
            if let Some(g) = g {
                f.gradient(&zs[i], &w, g);
            }
            f.value(&zs[i], &w)
        };
        let vals: Vec<f64> = match grad {
            Some(g) => g.par_chunks_mut(m).enumerate().map(|(i, gi)| point(i, Some(gi))).collect(),
            None => (0..v.len()).into_par_iter().map(|i| point(i, None)).collect(),
        };
        vals.iter().sum::<f64>() / v.len() as f64
    }

    fn lipschitz(&self, v: &PeriodicField) -> f64 {
        let m = v.m();
        let mut radius: f64 = 0.0;
        for i in 0..v.len() {
            let w: Vec<f64> = (0..m).map(|k| v.node(i)[k] + self.xi[k]).collect();
            radius = radius.max(norm(&w));
        }
        self.density.gradient_lipschitz(1.5 * radius + 1.0).max(1e-12)
    }

    fn solve(&self) -> Result<CellResult> {
        let p = self.params;
        if p.certify_samples > 0 {
            verify_hypotheses(self.density.as_ref(), p.certify_samples, 0)?.into_result()?;
        }
        let m = self.xi.len();
        let projector = Projector::new(&self.symbol, &self.shape, &self.lengths, false, linalg::DEFAULT_TOL)?;
        let mut v = PeriodicField::zeros_with_lengths(&self.shape, m, &self.lengths)?;
        let mut grad = vec![0.0; v.values().len()];
        let mut energy = self.energy(&v, Some(&mut grad));
        let mut history = vec![energy];
        let mut tau = p.step_safety / self.lipschitz(&v);
        let mut residual;
        let mut iterations = 0;
        loop {
            let g = projector.apply(&v.with_values(m, grad.clone()))?;
            residual = g.l2_norm();
            let scale = 1.0 + energy.abs();
            if residual <= 1e-14 * scale {
                break;
            }
            if iterations >= p.max_iterations {
                let w = p.window.min(history.len() - 1);
                let drop = history[history.len() - 1 - w] - energy;
                return Err(Error::NonConvergence { iterations, decrease: drop / energy.abs().max(f64::MIN_POSITIVE) });
            }
            tau = tau.min(p.step_safety / self.lipschitz(&v));
            let mut halvings = 0;
            let (next, next_energy, next_grad) = loop {
                let cand = v.sub(&g.scale(tau))?;
                let mut cg = vec![0.0; grad.len()];
                let e = self.energy(&cand, Some(&mut cg));
                if e <= energy {
                    break (cand, e, cg);
                }
                halvings += 1;
                if halvings > 60 {
                    return Err(Error::NonConvergence { iterations, decrease: 0.0 });
                }
                tau *= 0.5;
            };
            v = next;
            energy = next_energy;
            grad = next_grad;
            history.push(energy);
            iterations += 1;
            if history.len() > p.window {
                let drop = history[history.len() - 1 - p.window] - energy;
                if drop <= p.tolerance * energy.abs() {
                    break;
                }
            }
        }
        let constraint_residual = h_minus1_norm(&apply_symbol(&self.symbol, &v)?);
        let vnorm = v.l2_norm();
        if constraint_residual > 1e-9 * vnorm + 1e-12 {
            return Err(Error::Precondition(format!(
                "corrector left the constraint set (residual {constraint_residual:.3e})"
            )));
        }
        Ok(CellResult {
            mode: self.mode,
            xi: self.xi.clone(),
            value: energy,
            corrector: v,
            iterations,
            residual,
            constraint_residual,
            history,
        })
    }
}

/// Solves the cell problem in the problem's mode.
pub fn solve_cell(prob: &CellProblem) -> Result<CellResult> {
    prob.setup()?.solve()
}

/// Solves with the density sampled at `(n_1 y_1, ..., n_d y_d)`.
pub fn f_hom_multicell(prob: &CellProblem, n: &[usize]) -> Result<CellResult> {
    solve_cell(&prob.clone().with_multicell(n.to_vec())?)
}

/// `(d-1)`-dimensional cell formula with `A'`.
pub fn f_hom_reduced_xprime(prob: &CellProblem) -> Result<CellResult> {
    solve_cell(&prob.clone().with_mode(CellMode::ReducedXprime)?)
}

/// One-dimensional cell formula with `A^(d) d_d`.
pub fn f_hom_thickness(prob: &CellProblem) -> Result<CellResult> {
    solve_cell(&prob.clone().with_mode(CellMode::Thickness)?)
}

/// Cell formula with the limit operator `A_0`; its symbol need not have
/// constant rank, the mode-wise kernel projector is used regardless.
pub fn f_hom_limit(prob: &CellProblem) -> Result<CellResult> {
    solve_cell(&prob.clone().with_mode(CellMode::Limit)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub eps: f64,
    pub value: f64,
    pub reference: f64,
    pub relative_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub tolerance: f64,
    pub agrees: bool,
}

/// Solves the stretched-cell problem on `Q^{d-1} x (0, 1/eps)` with `A_eps`
/// and density `f(z', eps z_d, .)` for each `eps` (with `1/eps` an integer)
/// and compares against the unit-cell value.
pub fn scaling_identity_check(prob: &CellProblem, eps_list: &[f64], tolerance: f64) -> Result<ScalingReport> {
    let base = prob.clone().with_mode(CellMode::Full)?;
    let reference = solve_cell(&base)?.value;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let inv = 1.0 / eps;
        let k = inv.round();
        if !(eps > 0.0) || k < 1.0 || (inv - k).abs() > 1e-9 * inv {
            return Err(Error::InvalidParameter(format!("1/eps must be a positive integer, got eps = {eps}")));
        }
        let k = k as usize;
        let mut s = base.setup()?;
        let d = s.shape.len();
        s.symbol = base.operator.rescaled(eps)?;
        s.shape[d - 1] *= k;
        s.lengths[d - 1] = k as f64;
        s.scale[d - 1] *= eps;
        let value = s.solve()?.value;
        let relative_gap = (value - reference).abs() / reference.abs().max(f64::MIN_POSITIVE);
        rows.push(ScalingRow { eps, value, reference, relative_gap: if value == reference { 0.0 } else { relative_gap } });
    }
    let agrees = rows.iter().all(|r| r.relative_gap <= tolerance);
    Ok(ScalingReport { rows, tolerance, agrees })
}
