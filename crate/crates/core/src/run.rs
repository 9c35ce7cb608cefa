//! Run configuration and experiment orchestration behind the CLI.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cell::{solve_cell, CellMode, CellProblem, SolverParams};
use crate::density::{quadratic_density, Coefficient, EnergyDensity, PowerDensity, Quartet, QuadraticDensity};
use crate::error::{Error, Result};
use crate::field::PeriodicField;
use crate::linalg;
use crate::operator::{DifferentialOperator, OperatorDoc};
use crate::report::{Cell, InvariantCheck, RunReport, Table, Timing};
use crate::surgery::jump_field;
use crate::thinfilm::{
    build_recovery, construct_quartet, localization_rate, nonlocality_obstruction, successive_nonlocality,
    verify_quartet, LocalizationConfig, NonlocalityReport, RecoveryConfig, RegimeConfig, Variant,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    OperatorCheck,
    Homogenize,
    Counterexample,
    Localize,
    Recovery,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::OperatorCheck => "operator-check",
            Command::Homogenize => "homogenize",
            Command::Counterexample => "counterexample",
            Command::Localize => "localize",
            Command::Recovery => "recovery",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Builtin { name: String, #[serde(default = "one")] n: usize, d: usize },
    Matrices(OperatorDocSpec),
    /// Path to an operator JSON document, relative to the config file.
    File(PathBuf),
}

/// Serializable mirror of [`OperatorDoc`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDocSpec {
    pub d: usize,
    pub l: usize,
    pub m: usize,
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

fn one() -> usize {
    1
}

impl Default for OperatorSpec {
    fn default() -> Self {
        OperatorSpec::Builtin { name: "div".into(), n: 1, d: 2 }
    }
}

impl OperatorSpec {
    pub fn build(&self, base: &Path) -> Result<DifferentialOperator> {
        match self {
            OperatorSpec::Builtin { name, n, d } => DifferentialOperator::builtin(name, *n, *d),
            OperatorSpec::Matrices(m) => {
                OperatorDoc { d: m.d, l: m.l, m: m.m, coeffs: m.coeffs.clone() }.try_into()
            }
            OperatorSpec::File(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("operator file {}: {e}", path.display())))?;
                DifferentialOperator::from_json(&text)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Laminate { axis: usize, low: f64, high: f64 },
    Identity,
    Smooth { base: f64, amplitude: f64 },
    Constant { matrix: Vec<Vec<f64>> },
    Power { q: f64, scale: f64 },
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec::Laminate { axis: 0, low: 1.0, high: 4.0 }
    }
}

impl DensitySpec {
    pub fn build(&self, d: usize, m: usize) -> Result<Arc<dyn EnergyDensity>> {
        Ok(match self {
            DensitySpec::Laminate { axis, low, high } => Arc::new(QuadraticDensity::laminate(d, m, *axis, *low, *high)?),
            DensitySpec::Identity => Arc::new(QuadraticDensity::identity(d, m)?),
            DensitySpec::Smooth { base, amplitude } => {
                Arc::new(quadratic_density(d, m, Coefficient::Smooth { base: *base, amplitude: *amplitude })?)
            }
            DensitySpec::Constant { matrix } => {
                if matrix.len() != m || matrix.iter().any(|r| r.len() != m) {
                    return Err(Error::Config(format!("density matrix must be {m}x{m}")));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                Arc::new(quadratic_density(d, m, Coefficient::Constant(DMatrix::from_row_slice(m, m, &flat)))?)
            }
            DensitySpec::Power { q, scale } => Arc::new(PowerDensity::new(d, m, *q, *scale)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogenizeConfig {
    /// Macroscopic states; empty means the unit vectors.
    pub xi: Vec<Vec<f64>>,
    pub grid: Vec<usize>,
    pub modes: Vec<CellMode>,
    /// Expected full-mode values, one per `xi`.
    pub expected: Option<Vec<f64>>,
    pub params: SolverParams,
}

impl Default for HomogenizeConfig {
    fn default() -> Self {
        Self { xi: Vec::new(), grid: vec![64, 64], modes: vec![CellMode::Full], expected: None, params: SolverParams::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Constant { value: Vec<f64>, grid: Vec<usize> },
    Jump { axis: usize, threshold: f64, minus: Vec<f64>, plus: Vec<f64>, grid: Vec<usize> },
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Jump { axis: 1, threshold: 0.5, minus: vec![-1.0, 1.0], plus: vec![1.0, 1.0], grid: vec![4, 64] }
    }
}

impl TargetSpec {
    pub fn build(&self) -> Result<PeriodicField> {
        match self {
            TargetSpec::Constant { value, grid } => PeriodicField::constant(grid, value),
            TargetSpec::Jump { axis, threshold, minus, plus, grid } => jump_field(grid, *axis, *threshold, minus, plus),
        }
    }
}

/// Thresholds of every checked invariant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rank_samples: usize,
    pub antisymmetry: f64,
    pub homogenize_relative: f64,
    pub half_violation: f64,
    pub margin_ratio: f64,
    pub chain_slack: f64,
    /// Absolute deviation from 1/4 (5% relative).
    pub phase_fraction: f64,
    /// Phase fractions are checked from this `j` on.
    pub phase_from_j: usize,
    pub slope_min: f64,
    pub slope_max: f64,
    pub recovery_excess: f64,
    pub lower_bound_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_samples: 10_000,
            antisymmetry: 1e-12,
            homogenize_relative: 5e-3,
            half_violation: 1e-10,
            margin_ratio: 0.9,
            chain_slack: 1e-10,
            phase_fraction: 0.0125,
            phase_from_j: 16,
            slope_min: 0.85,
            slope_max: 1.15,
            recovery_excess: 0.05,
            lower_bound_slack: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { alphas: vec![0.5, 1.0, 2.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub operator: OperatorSpec,
    #[serde(default)]
    pub density: DensitySpec,
    #[serde(default)]
    pub homogenize: HomogenizeConfig,
    #[serde(default)]
    pub regime: RegimeConfig,
    #[serde(default = "both_variants")]
    pub variants: Vec<Variant>,
    /// Quartet for the counterexample; constructed from the operator if absent.
    #[serde(default)]
    pub quartet: Option<Quartet>,
    /// `(alpha, beta)` of the constructed quartet when `quartet` is absent.
    /// A nonzero beta keeps the two sigma phases distinct.
    #[serde(default = "quartet_params")]
    pub quartet_params: (f64, f64),
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn quartet_params() -> (f64, f64) {
    (1.0, 1.0)
}

fn both_variants() -> Vec<Variant> {
    vec![Variant::Simultaneous, Variant::Successive]
}

impl RunConfig {
    pub fn minimal(command: Command) -> Self {
        Self {
            command,
            operator: OperatorSpec::default(),
            density: DensitySpec::default(),
            homogenize: HomogenizeConfig::default(),
            regime: RegimeConfig::default(),
            variants: both_variants(),
            quartet: None,
            quartet_params: quartet_params(),
            localization: LocalizationConfig::default(),
            recovery: RecoveryConfig::default(),
            target: TargetSpec::default(),
            sweep: SweepConfig::default(),
            seed: 0,
            tolerances: Tolerances::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    base: &'a Path,
    checks: Vec<InvariantCheck>,
    tables: Vec<Table>,
    timings: Vec<Timing>,
}

impl Ctx<'_> {
    fn check(&mut self, name: &str, invariant: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(InvariantCheck::new(name, invariant, passed, detail));
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings.push(Timing { stage: stage.into(), seconds: t.elapsed().as_secs_f64() });
        Ok(out)
    }
}

/// Runs `cfg`; relative paths inside the config resolve against `base`.
pub fn run(cfg: &RunConfig, base: &Path) -> Result<RunReport> {
    let mut ctx = Ctx { cfg, base, checks: Vec::new(), tables: Vec::new(), timings: Vec::new() };
    let results = match cfg.command {
        Command::OperatorCheck => operator_check(&mut ctx)?,
        Command::Homogenize => homogenize(&mut ctx)?,
        Command::Counterexample => counterexample(&mut ctx)?,
        Command::Localize => localize(&mut ctx)?,
        Command::Recovery => recovery(&mut ctx)?,
        Command::Sweep => sweep(&mut ctx)?,
    };
    Ok(RunReport {
        command: cfg.command.name().into(),
        config: serde_json::to_value(cfg)?,
        results,
        invariants: ctx.checks,
        timings: ctx.timings,
        tables: ctx.tables,
    })
}

fn operator_check(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let op = ctx.cfg.operator.build(ctx.base)?;
    let tol = &ctx.cfg.tolerances;
    let samples = tol.rank_samples;
    let cert = ctx.timed("rank", || op.check_constant_rank(samples, linalg::DEFAULT_TOL))?;
    let antisym_tol = tol.antisymmetry;
    let mut table = Table::new("operator_check", &["d", "l", "m", "samples", "r", "min_rank", "max_rank", "antisymmetry"]);
    let mut results = serde_json::json!({
        "operator": serde_json::to_value(OperatorDocSpec::from(&op))?,
        "rank": { "is_constant": cert.is_constant, "r": cert.r, "min_rank": cert.min_rank,
                  "max_rank": cert.max_rank, "samples": cert.samples, "tol": cert.tol },
    });
    ctx.check(
        "constant_rank",
        "operator_core: rank A(eta) is the same r on every sampled sphere direction",
        cert.is_constant,
        format!("ranks {}..{} over {} directions", cert.min_rank, cert.max_rank, cert.samples),
    );
    let mut antisym = f64::NAN;
    if cert.is_constant {
        let (_, dec) = op.normalize(linalg::DEFAULT_TOL)?;
        let limit = op.limit()?;
        antisym = op.check_antisymmetry(linalg::DEFAULT_TOL);
        results["normalization"] = serde_json::json!({ "r": dec.r });
        results["limit_operator"] = serde_json::to_value(OperatorDocSpec::from(&limit.base))?;
        results["antisymmetry_residual"] = serde_json::json!(antisym);
        ctx.check(
            "antisymmetry",
            "operator_core: A^(k1) pinv(A^(d)) A^(k2) + A^(k2) pinv(A^(d)) A^(k1) = 0",
            antisym <= antisym_tol,
            format!("residual {antisym:.3e}"),
        );
    }
    table.push(vec![
        op.d().into(),
        op.l().into(),
        op.m().into(),
        cert.samples.into(),
        cert.r.into(),
        cert.min_rank.into(),
        cert.max_rank.into(),
        antisym.into(),
    ])?;
    ctx.tables.push(table);
    Ok(results)
}

impl From<&DifferentialOperator> for OperatorDocSpec {
    fn from(op: &DifferentialOperator) -> Self {
        let doc = OperatorDoc::from(op);
        Self { d: doc.d, l: doc.l, m: doc.m, coeffs: doc.coeffs }
    }
}

fn mode_name(mode: CellMode) -> &'static str {
    match mode {
        CellMode::Full => "full",
        CellMode::ReducedXprime => "reduced-xprime",
        CellMode::Thickness => "thickness",
        CellMode::Limit => "limit",
    }
}

fn homogenize(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let op = ctx.cfg.operator.build(ctx.base)?;
    let (d, m) = (op.d(), op.m());
    let density = ctx.cfg.density.build(d, m)?;
    let hc = &ctx.cfg.homogenize;
    let xis: Vec<Vec<f64>> = if hc.xi.is_empty() {
        (0..m).map(|i| (0..m).map(|k| if k == i { 1.0 } else { 0.0 }).collect()).collect()
    } else {
        hc.xi.clone()
    };
    if let Some(e) = &hc.expected {
        if e.len() != xis.len() {
            return Err(Error::Config("`expected` needs one value per xi".into()));
        }
    }
    let cert = crate::density::verify_hypotheses(density.as_ref(), hc.params.certify_samples.max(1), ctx.cfg.seed)?;
    ctx.check(
        "density_hypotheses",
        "energy_density: sampled growth, coercivity, Lipschitz and convexity bounds hold",
        cert.passed,
        format!("{} samples, seed {}", cert.samples, cert.seed),
    );
    let mut header: Vec<String> = vec!["mode".into()];
    header.extend((0..m).map(|k| format!("xi_{k}")));
    header.extend(["value", "iterations", "residual", "constraint_residual"].map(String::from));
    let mut table = Table { name: "homogenize".into(), header, rows: Vec::new() };
    let mut summaries = Vec::new();
    let mut values = vec![vec![f64::NAN; hc.modes.len()]; xis.len()];
    let params = SolverParams { certify_samples: 0, ..hc.params };
    for (i, xi) in xis.iter().enumerate() {
        for (k, &mode) in hc.modes.iter().enumerate() {
            let prob = CellProblem::new(op.clone(), density.clone(), xi.clone(), hc.grid.clone(), mode)?.with_params(params);
            let res = ctx.timed(&format!("cell {} {i}", mode_name(mode)), || solve_cell(&prob))?;
            values[i][k] = res.value;
            let mut row: Vec<Cell> = vec![mode_name(mode).into()];
            row.extend(xi.iter().map(|&x| Cell::from(x)));
            row.extend([res.value.into(), res.iterations.into(), res.residual.into(), res.constraint_residual.into()]);
            table.push(row)?;
            summaries.push(res.summary());
        }
        if let (Some(exp), Some(k)) = (&hc.expected, hc.modes.iter().position(|&m| m == CellMode::Full)) {
            let (got, want) = (values[i][k], exp[i]);
            let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            ctx.check(
                &format!("expected_value_{i}"),
                "cell_solver: computed f_hom matches the supplied closed-form value",
                rel <= ctx.cfg.tolerances.homogenize_relative,
                format!("f_hom = {got:.10}, expected {want:.10}, relative gap {rel:.3e}"),
            );
        }
        let pos = |mode| hc.modes.iter().position(|&m| m == mode);
        if let (Some(a), Some(b)) = (pos(CellMode::ReducedXprime), pos(CellMode::Limit)) {
            let (va, vb) = (values[i][a], values[i][b]);
            let slack = hc.params.tolerance * (1.0 + va.abs()) * 10.0;
            ctx.check(
                &format!("ordering_{i}"),
                "cell_solver: f_hom^{A'} >= f_hom^{A_0}",
                va >= vb - slack,
                format!("reduced {va:.10}, limit {vb:.10}"),
            );
        }
    }
    ctx.tables.push(table);
    Ok(serde_json::json!({ "hypotheses": cert, "cells": summaries }))
}

fn quartet_for(ctx: &Ctx, op: &DifferentialOperator) -> Result<Quartet> {
    match &ctx.cfg.quartet {
        Some(q) => Ok(q.clone()),
        None => Ok(construct_quartet(op, Some(ctx.cfg.regime.n_axis), ctx.cfg.quartet_params.0, ctx.cfg.quartet_params.1)?.quartet),
    }
}

fn nonlocality_checks(ctx: &mut Ctx, rep: &NonlocalityReport) {
    let tol = ctx.cfg.tolerances.clone();
    let tag = match rep.variant {
        Variant::Simultaneous => "simultaneous",
        Variant::Successive => "successive",
    };
    let worst_energy = rep.rows.iter().map(|r| r.energy_lower.abs().max(r.energy_upper.abs())).fold(0.0, f64::max);
    ctx.check(
        &format!("{tag}_half_energy_zero"),
        "thinfilm_lab: half-domain recovery energies are exactly 0",
        rep.halves_exactly_zero,
        format!("largest half energy {worst_energy:.3e}"),
    );
    ctx.check(
        &format!("{tag}_half_violation"),
        "thinfilm_lab: per-half constraint violations vanish",
        rep.max_half_violation <= tol.half_violation,
        format!("largest half violation {:.3e}", rep.max_half_violation),
    );
    ctx.check(
        &format!("{tag}_margin"),
        "thinfilm_lab: min_j full-cell violation >= 0.9 x analytic A_0 obstruction of v~_0",
        rep.margin_ratio >= tol.margin_ratio,
        format!(
            "min violation {:.6e}, oracle {:.6e} (discrete {:.6e}), ratio {:.4}",
            rep.min_full_violation, rep.oracle_analytic, rep.oracle_discrete, rep.margin_ratio
        ),
    );
    let slack = rep.rows.iter().map(|r| r.chain_slack).fold(f64::NEG_INFINITY, f64::max);
    ctx.check(
        &format!("{tag}_norm_chain"),
        "thinfilm_lab: |A v| >= |A v#| >= |A v~| within 1e-10",
        slack <= tol.chain_slack,
        format!("largest chain slack {slack:.3e}"),
    );
    let phase = rep
        .rows
        .iter()
        .filter(|r| r.j >= tol.phase_from_j)
        .flat_map(|r| r.phase_fractions.iter().map(|f| (f - 0.25).abs()))
        .fold(0.0, f64::max);
    ctx.check(
        &format!("{tag}_phase_fractions"),
        "thinfilm_lab: phase fractions of v~_j approach (1/4, 1/4, 1/4, 1/4)",
        phase <= tol.phase_fraction,
        format!("largest deviation {phase:.3e} for j >= {}", tol.phase_from_j),
    );
}

fn counterexample(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let op = ctx.cfg.operator.build(ctx.base)?;
    let q = quartet_for(ctx, &op)?;
    let cert = verify_quartet(&op, &q, ctx.cfg.regime.n_axis)?;
    ctx.check(
        "quartet",
        "thinfilm_lab: all five quartet conditions hold",
        cert.passed,
        format!(
            "limit residual {:.1e}, jump residuals {:.1e}/{:.1e}, exclusion {:.3e}, independence {:.3e}",
            cert.limit_kernel_residual,
            cert.xi_jump_residual,
            cert.sigma_jump_residual,
            cert.exclusion_margin,
            cert.independence_margin
        ),
    );
    let mut main = Table::new(
        "counterexample",
        &[
            "variant", "j", "tau", "energy_lower", "energy_upper", "energy_full", "viol_half", "viol_full",
            "frac_xi1", "frac_xi2", "frac_sigma1", "frac_sigma2", "eps", "viol_sharp", "viol_tilde",
            "unassigned",
        ],
    );
    let mut phases = Table::new("phase_fractions", &["variant", "j", "frac_xi1", "frac_xi2", "frac_sigma1", "frac_sigma2"]);
    let mut reports = Vec::new();
    let regime = ctx.cfg.regime.clone();
    for &variant in &ctx.cfg.variants.clone() {
        let rep = ctx.timed(&format!("nonlocality {variant:?}"), || match variant {
            Variant::Simultaneous => nonlocality_obstruction(&op, &q, &regime),
            Variant::Successive => successive_nonlocality(&op, &q, &regime),
        })?;
        let tag = match variant {
            Variant::Simultaneous => "simultaneous",
            Variant::Successive => "successive",
        };
        for r in &rep.rows {
            let f = r.phase_fractions;
            main.push(vec![
                tag.into(),
                r.j.into(),
                r.tau.into(),
                r.energy_lower.into(),
                r.energy_upper.into(),
                r.energy_full.into(),
                r.viol_lower.max(r.viol_upper).into(),
                r.viol_full.into(),
                f[0].into(),
                f[1].into(),
                f[2].into(),
                f[3].into(),
                r.eps.into(),
                r.viol_sharp.into(),
                r.viol_tilde.into(),
                r.unassigned_fraction.into(),
            ])?;
            phases.push(vec![tag.into(), r.j.into(), f[0].into(), f[1].into(), f[2].into(), f[3].into()])?;
        }
        nonlocality_checks(ctx, &rep);
        reports.push(rep);
    }
    ctx.tables.push(main);
    ctx.tables.push(phases);
    Ok(serde_json::json!({ "quartet": cert, "reports": reports }))
}

fn localize(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let op = ctx.cfg.operator.build(ctx.base)?;
    let lc = ctx.cfg.localization.clone();
    let rep = ctx.timed("localization", || localization_rate(&op, &lc))?;
    let mut table = Table::new("localization", &["j", "tau", "viol", "scaled_viol", "amplitude"]);
    for r in &rep.rows {
        table.push(vec![r.j.into(), r.tau.into(), r.violation.into(), r.scaled_violation.into(), r.amplitude.into()])?;
    }
    ctx.tables.push(table);
    let tol = &ctx.cfg.tolerances;
    let ok = rep.slope.is_some_and(|s| s >= tol.slope_min && s <= tol.slope_max);
    ctx.check(
        "localization_slope",
        "thinfilm_lab: localization slope in [0.85, 1.15] against log tau",
        ok,
        format!("slope {:?} (unscaled {:?})", rep.slope, rep.slope_raw),
    );
    Ok(serde_json::to_value(&rep)?)
}

fn recovery(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let op = ctx.cfg.operator.build(ctx.base)?;
    let density = ctx.cfg.density.build(op.d(), op.m())?;
    let u = ctx.cfg.target.build()?;
    let rc = ctx.cfg.recovery.clone();
    let rep = ctx.timed("recovery", || build_recovery(&op, density, &u, &rc))?;
    let mut table = Table::new(
        "recovery",
        &["j", "tau", "energy", "energy_unprojected", "reference", "relative_excess", "displacement", "glued_residual", "final_residual"],
    );
    for r in &rep.rows {
        table.push(vec![
            r.j.into(),
            r.tau.into(),
            r.energy.into(),
            r.energy_unprojected.into(),
            r.reference.into(),
            r.relative_excess.into(),
            r.displacement.into(),
            r.glued_residual.into(),
            r.final_residual.into(),
        ])?;
    }
    ctx.tables.push(table);
    let tol = ctx.cfg.tolerances.clone();
    let worst = rep.rows.iter().map(|r| r.energy - r.reference).fold(f64::INFINITY, f64::min);
    ctx.check(
        "recovery_lower_bound",
        "thinfilm_lab: build_recovery energy >= integral of f_hom(u_h) - 1e-6",
        worst >= -tol.lower_bound_slack,
        format!("smallest energy - reference {worst:.3e}"),
    );
    ctx.check(
        "recovery_excess",
        "thinfilm_lab: finest-j recovery energy within 5% of integral of f_hom(u)",
        rep.final_relative_excess.abs() <= tol.recovery_excess,
        format!("relative excess {:.4e}", rep.final_relative_excess),
    );
    Ok(serde_json::to_value(&rep)?)
}

fn sweep(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let op = ctx.cfg.operator.build(ctx.base)?;
    let mut table = Table::new("regime_sweep", &["alpha", "regime", "j", "tau", "violation"]);
    let mut out = Vec::new();
    let alphas = ctx.cfg.sweep.alphas.clone();
    let tol = ctx.cfg.tolerances.clone();
    for alpha in alphas {
        if alpha <= 1.0 {
            let q = quartet_for(ctx, &op)?;
            let regime = RegimeConfig { alpha, ..ctx.cfg.regime.clone() };
            let rep = ctx.timed(&format!("sweep alpha {alpha}"), || nonlocality_obstruction(&op, &q, &regime))?;
            for r in &rep.rows {
                table.push(vec![alpha.into(), "nonlocal".into(), r.j.into(), r.tau.into(), r.viol_full.into()])?;
            }
            ctx.check(
                &format!("sweep_{alpha}_floor"),
                "thinfilm_lab: full-cell violation bounded below by the v~_0 obstruction",
                rep.margin_ratio >= tol.margin_ratio,
                format!("ratio {:.4}", rep.margin_ratio),
            );
            out.push(serde_json::json!({ "alpha": alpha, "min_full_violation": rep.min_full_violation,
                                         "oracle": rep.oracle_analytic }));
        } else {
            let lc = LocalizationConfig { alpha, ..ctx.cfg.localization.clone() };
            let rep = ctx.timed(&format!("sweep alpha {alpha}"), || localization_rate(&op, &lc))?;
            for r in &rep.rows {
                table.push(vec![alpha.into(), "local".into(), r.j.into(), r.tau.into(), r.scaled_violation.into()])?;
            }
            ctx.check(
                &format!("sweep_{alpha}_decay"),
                "thinfilm_lab: localization slope in [0.85, 1.15] against log tau",
                rep.slope.is_some_and(|s| s >= tol.slope_min && s <= tol.slope_max),
                format!("slope {:?}", rep.slope),
            );
            out.push(serde_json::json!({ "alpha": alpha, "slope": rep.slope }));
        }
    }
    ctx.tables.push(table);
    Ok(serde_json::Value::Array(out))
}
