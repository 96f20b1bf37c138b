//! Transport of candidate solutions across the Legendre map, paired
//! Lagrangian/Hamiltonian verification, and complete-solution family checks.
//!
//! Transported candidates are composed evaluators (closures over Newton
//! solves), not re-parsed expressions, so composition is exact up to solver
//! tolerance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Error;
use crate::expr::ExprAst;
use crate::ham_residuals::{HamCoefficients, HamGeneralizedSuite, HamStandardSuite, MomentumSection};
use crate::jet_core::{
    compile, derive_slots_first, eval_slot, grid_points, grid_report, Chart, ChartPoint,
    FamilySpec, FieldTheorySpec, GridSpec, ResidualOp, ResidualReport, Slot,
};
use crate::lag_residuals::{JetField, LagCoefficients, LagGeneralizedSuite, LagStandardSuite};
use crate::legendre::{HamiltonianSpec, LegendreSource, NewtonSettings};
use crate::linalg::Lu;

/// Additive slack in the transport-consistency bound; absorbs solver noise
/// when both sides are at numerical zero.
pub const TRANSPORT_SLACK: f64 = 1e-10;
/// Multiplicative factor in the transport-consistency bound.
pub const TRANSPORT_FACTOR: f64 = 10.0;
/// Matching tolerance for complete-solution coverage probes.
pub const COVERAGE_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Legendre transport of candidates
// ---------------------------------------------------------------------------

/// The momentum section `s = Leg ∘ Ψ`, as a composed evaluator.
pub fn pushforward_jetfield(
    theory: &FieldTheorySpec,
    psi: &JetField,
) -> Result<MomentumSection, Error> {
    if psi.m() != theory.m() || psi.n() != theory.n() {
        return Err(Error::DimensionMismatch(format!(
            "jet field has (m, n) = ({}, {}), theory has ({}, {})",
            psi.m(),
            psi.n(),
            theory.m(),
            theory.n()
        )));
    }
    Ok(MomentumSection::pushforward_of(theory.clone(), psi.clone()))
}

/// The jet field `Ψ = Leg⁻¹ ∘ s`, as a composed evaluator over the Newton
/// inverse of the Legendre map.
pub fn pullback_section(
    theory: &FieldTheorySpec,
    s: &MomentumSection,
    settings: &NewtonSettings,
) -> Result<JetField, Error> {
    if s.m() != theory.m() || s.n() != theory.n() {
        return Err(Error::DimensionMismatch(format!(
            "momentum section has (m, n) = ({}, {}), theory has ({}, {})",
            s.m(),
            s.n(),
            theory.m(),
            theory.n()
        )));
    }
    Ok(JetField::pullback_of(
        theory.clone(),
        s.clone(),
        settings.clone(),
    ))
}

// ---------------------------------------------------------------------------
// Paired equivalence report
// ---------------------------------------------------------------------------

/// Joint verdict of the paired Lagrangian/Hamiltonian run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivalenceVerdict {
    /// Both sides pass: consistent (solution).
    PassPass,
    /// Both sides fail: consistent (non-solution).
    FailFail,
    /// One side passes and the other fails: flagged inconsistency.
    Mixed,
}

impl std::fmt::Display for EquivalenceVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EquivalenceVerdict::PassPass => write!(f, "pass-pass"),
            EquivalenceVerdict::FailFail => write!(f, "fail-fail"),
            EquivalenceVerdict::Mixed => write!(f, "mixed"),
        }
    }
}

/// Worst pointwise violations of the two-sided transport-consistency bound
/// `other ≤ 10 × source + 1e−10` (zero when the bound holds everywhere).
#[derive(Debug, Clone, Copy)]
pub struct TransportConsistency {
    /// max over grid of `ham − (10·lag + 1e−10)`, clamped at 0.
    pub ham_excess: f64,
    /// max over grid of `lag − (10·ham + 1e−10)`, clamped at 0.
    pub lag_excess: f64,
}

/// Paired reports plus the joint verdict and cross-map diagnostics.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub lagrangian: ResidualReport,
    pub hamiltonian: ResidualReport,
    pub verdict: EquivalenceVerdict,
    pub transport: TransportConsistency,
    /// Distance, in grid cells (∞-norm), between the worst-residual points of
    /// the two sides; `None` when either side has no nonzero gating residual.
    /// A sanity metric, not a gate.
    pub argmax_cell_distance: Option<f64>,
}

/// Evaluates both sides of the equivalence theorem in one grid sweep.
struct PairOp {
    lag_gen: LagGeneralizedSuite,
    lag_std: LagStandardSuite,
    ham_gen: HamGeneralizedSuite,
    ham_std: HamStandardSuite,
    lag_families: usize,
    ham_families: usize,
}

impl PairOp {
    fn gating_max(values: &[Vec<f64>], specs: &[FamilySpec]) -> f64 {
        let mut worst = 0.0f64;
        for (vals, spec) in values.iter().zip(specs) {
            if spec.gating {
                for v in vals {
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }
}

impl ResidualOp for PairOp {
    fn chart(&self) -> Chart {
        self.lag_gen.chart()
    }

    fn families(&self) -> Vec<FamilySpec> {
        let mut fams = self.lag_gen.families();
        fams.extend(self.lag_std.families());
        fams.extend(self.ham_gen.families());
        fams.extend(self.ham_std.families());
        fams.push(FamilySpec::new(
            "transport_excess_ham",
            vec!["pointwise".into()],
            false,
        ));
        fams.push(FamilySpec::new(
            "transport_excess_lag",
            vec!["pointwise".into()],
            false,
        ));
        fams
    }

    fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
        let mut rows = self.lag_gen.eval_at(pt)?;
        rows.extend(self.lag_std.eval_at(pt)?);
        let lag_specs: Vec<FamilySpec> = {
            let mut s = self.lag_gen.families();
            s.extend(self.lag_std.families());
            s
        };
        let lag_max = Self::gating_max(&rows, &lag_specs);

        let mut ham_rows = self.ham_gen.eval_at(pt)?;
        ham_rows.extend(self.ham_std.eval_at(pt)?);
        let ham_specs: Vec<FamilySpec> = {
            let mut s = self.ham_gen.families();
            s.extend(self.ham_std.families());
            s
        };
        let ham_max = Self::gating_max(&ham_rows, &ham_specs);
        rows.extend(ham_rows);

        rows.push(vec![
            (ham_max - (TRANSPORT_FACTOR * lag_max + TRANSPORT_SLACK)).max(0.0),
        ]);
        rows.push(vec![
            (lag_max - (TRANSPORT_FACTOR * ham_max + TRANSPORT_SLACK)).max(0.0),
        ]);
        Ok(rows)
    }
}

fn subset_report(full: &ResidualReport, range: std::ops::Range<usize>) -> ResidualReport {
    let families = full.families[range].to_vec();
    let pass = full.evaluated > 0
        && families
            .iter()
            .filter(|f| f.gating)
            .all(|f| f.max_abs < full.tol);
    ResidualReport {
        families,
        axes: full.axes.clone(),
        points: full.points,
        evaluated: full.evaluated,
        skipped: full.skipped,
        tol: full.tol,
        pass,
    }
}

fn worst_gating_argmax(report: &ResidualReport) -> Option<(&crate::jet_core::FamilyStats, f64)> {
    report
        .families
        .iter()
        .filter(|f| f.gating && !f.argmax.is_empty())
        .map(|f| (f, f.max_abs))
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("residuals are finite"))
}

/// Runs the full Lagrangian suite on Ψ and the full Hamiltonian suite on
/// `Leg ∘ Ψ` (with the derived Hamiltonian) over the same `(x, u)` grid:
/// generalized systems against the supplied coefficient tables, standard
/// systems candidate-only.
pub fn equivalence_report(
    theory: &FieldTheorySpec,
    psi: &JetField,
    f: &LagCoefficients,
    g: &HamCoefficients,
    grid: &GridSpec,
    tol: f64,
) -> Result<EquivalenceReport, Error> {
    let settings = NewtonSettings::default();
    let h = HamiltonianSpec::derived(theory.clone(), settings.clone());
    let s = pushforward_jetfield(theory, psi)?;

    let op = PairOp {
        lag_gen: LagGeneralizedSuite::new(theory, psi, f)?,
        lag_std: LagStandardSuite::new(theory, psi)?,
        ham_gen: HamGeneralizedSuite::new(&h, &s, g)?,
        ham_std: HamStandardSuite::new(&h, &s)?,
        lag_families: 0,
        ham_families: 0,
    };
    let lag_families = op.lag_gen.families().len() + op.lag_std.families().len();
    let ham_families = op.ham_gen.families().len() + op.ham_std.families().len();
    let op = PairOp {
        lag_families,
        ham_families,
        ..op
    };

    let full = grid_report(&op, grid, tol)?;
    let lagrangian = subset_report(&full, 0..op.lag_families);
    let hamiltonian = subset_report(
        &full,
        op.lag_families..op.lag_families + op.ham_families,
    );
    let transport = TransportConsistency {
        ham_excess: full.families[op.lag_families + op.ham_families].max_abs.max(0.0),
        lag_excess: full.families[op.lag_families + op.ham_families + 1]
            .max_abs
            .max(0.0),
    };

    let verdict = match (lagrangian.pass, hamiltonian.pass) {
        (true, true) => EquivalenceVerdict::PassPass,
        (false, false) => EquivalenceVerdict::FailFail,
        _ => EquivalenceVerdict::Mixed,
    };

    let argmax_cell_distance = match (
        worst_gating_argmax(&lagrangian),
        worst_gating_argmax(&hamiltonian),
    ) {
        (Some((lf, lmax)), Some((hf, hmax))) if lmax > 0.0 && hmax > 0.0 => {
            let mut cells = 0.0f64;
            for (k, axis) in grid.axes().iter().enumerate() {
                if axis.count > 1 {
                    let step = (axis.hi - axis.lo) / (axis.count - 1) as f64;
                    cells = cells.max((lf.argmax[k] - hf.argmax[k]).abs() / step);
                }
            }
            Some(cells)
        }
        _ => None,
    };

    Ok(EquivalenceReport {
        lagrangian,
        hamiltonian,
        verdict,
        transport,
        argmax_cell_distance,
    })
}

// ---------------------------------------------------------------------------
// Complete-solution families
// ---------------------------------------------------------------------------

/// Which HJ problem a complete-solution family solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilySide {
    Lagrangian,
    Hamiltonian,
}

/// An mn-parameter family `Φ(λ; x, u)` of HJ candidates with a parameter box
/// `U ⊂ ℝ^{mn}` (optionally cut down by a constraint `c(λ) ≥ 0`).
#[derive(Debug, Clone)]
pub struct CompleteSolutionFamily {
    side: FamilySide,
    m: usize,
    n: usize,
    /// Component expressions `[α][i]` over `(λ_1..λ_{mn}, x, u)`.
    exprs: Vec<Vec<ExprAst>>,
    compiled: Vec<Vec<Expr<Slot>>>,
    bounds: Vec<(f64, f64)>,
    constraint: Option<(ExprAst, Expr<Slot>)>,
}

use crate::expr::Expr;

impl CompleteSolutionFamily {
    pub fn new(
        side: FamilySide,
        m: usize,
        n: usize,
        exprs: Vec<Vec<ExprAst>>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<CompleteSolutionFamily, Error> {
        if exprs.len() != n || exprs.iter().any(|row| row.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "family needs components[{n}][{m}]"
            )));
        }
        let mn = m * n;
        if bounds.len() != mn {
            return Err(Error::InvalidParams(format!(
                "parameter box needs {mn} intervals, got {}",
                bounds.len()
            )));
        }
        for (lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParams(format!(
                    "bad parameter interval [{lo}, {hi}]"
                )));
            }
        }
        let chart = Chart::base(m, n).with_params(mn);
        let compiled = exprs
            .iter()
            .map(|row| row.iter().map(|e| compile(e, &chart)).collect())
            .collect::<Result<Vec<Vec<_>>, _>>()?;
        Ok(CompleteSolutionFamily {
            side,
            m,
            n,
            exprs,
            compiled,
            bounds,
            constraint: None,
        })
    }

    /// Restricts the parameter box to `{λ : c(λ) ≥ 0}`.
    pub fn with_constraint(mut self, c: ExprAst) -> Result<CompleteSolutionFamily, Error> {
        let chart = Chart::base(self.m, self.n).with_params(self.m * self.n);
        let compiled = compile(&c, &chart)?;
        let mut bad = None;
        compiled.for_each_var(&mut |s: &Slot| {
            if !matches!(s, Slot::Lam(_)) && bad.is_none() {
                bad = Some(*s);
            }
        });
        if let Some(s) = bad {
            return Err(Error::InvalidParams(format!(
                "constraint must depend on the parameters only; found {s}"
            )));
        }
        self.constraint = Some((c, compiled));
        Ok(self)
    }

    pub fn side(&self) -> FamilySide {
        self.side
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn param_dim(&self) -> usize {
        self.m * self.n
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn components(&self) -> &Vec<Vec<ExprAst>> {
        &self.exprs
    }

    pub fn constraint(&self) -> Option<&ExprAst> {
        self.constraint.as_ref().map(|(ast, _)| ast)
    }

    /// True when λ lies in the box and satisfies the constraint.
    pub fn admits(&self, lam: &[f64]) -> Result<bool, Error> {
        if lam.len() != self.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "family has {} parameters, got {}",
                self.param_dim(),
                lam.len()
            )));
        }
        for (v, (lo, hi)) in lam.iter().zip(&self.bounds) {
            if v < lo || v > hi {
                return Ok(false);
            }
        }
        match &self.constraint {
            None => Ok(true),
            Some((_, c)) => {
                let mut pt = ChartPoint::zero(&Chart::base(self.m, self.n).with_params(lam.len()));
                pt.lam = lam.to_vec();
                Ok(eval_slot(c, &pt)? >= 0.0)
            }
        }
    }

    /// The candidate at a fixed λ, with the parameters substituted out.
    pub fn slice(&self, lam: &[f64]) -> Result<FamilyCandidate, Error> {
        if lam.len() != self.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "family has {} parameters, got {}",
                self.param_dim(),
                lam.len()
            )));
        }
        let lookup = |name: &String| -> Option<f64> {
            name.strip_prefix('l')
                .and_then(|rest| rest.parse::<usize>().ok())
                .and_then(|k| {
                    if k >= 1 && k <= lam.len() {
                        Some(lam[k - 1])
                    } else {
                        None
                    }
                })
        };
        let sliced: Vec<Vec<ExprAst>> = self
            .exprs
            .iter()
            .map(|row| row.iter().map(|e| e.substitute(&lookup)).collect())
            .collect();
        match self.side {
            FamilySide::Lagrangian => Ok(FamilyCandidate::Jet(JetField::new(
                self.m, self.n, sliced,
            )?)),
            FamilySide::Hamiltonian => Ok(FamilyCandidate::Section(MomentumSection::new(
                self.m, self.n, sliced,
            )?)),
        }
    }

    /// Φ values `[α][i]` at `(λ, x, u)`.
    pub fn values_at(&self, lam: &[f64], x: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>, Error> {
        let pt = self.chart_point(lam, x, u)?;
        self.compiled
            .iter()
            .map(|row| row.iter().map(|e| eval_slot(e, &pt)).collect())
            .collect()
    }

    /// The mn×mn Jacobian `∂Φ_{(α,i)}/∂λ_I` (rows α-major) and its
    /// determinant at `(λ, x, u)`.
    pub fn lambda_jacobian(
        &self,
        lam: &[f64],
        x: &[f64],
        u: &[f64],
    ) -> Result<(Vec<f64>, f64), Error> {
        let mn = self.param_dim();
        let pt = self.chart_point(lam, x, u)?;
        let vars: Vec<Slot> = (0..mn).map(Slot::Lam).collect();
        let mut jac = Vec::with_capacity(mn * mn);
        for row in &self.compiled {
            for e in row {
                let (_, grad) = derive_slots_first(e, &pt, &vars)?;
                jac.extend_from_slice(&grad);
            }
        }
        let det = Lu::factor(&jac, mn).det();
        Ok((jac, det))
    }

    fn chart_point(&self, lam: &[f64], x: &[f64], u: &[f64]) -> Result<ChartPoint, Error> {
        if lam.len() != self.param_dim() || x.len() != self.m || u.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "family over (m, n, k) = ({}, {}, {}) evaluated at ({}, {}, {})",
                self.m,
                self.n,
                self.param_dim(),
                x.len(),
                u.len(),
                lam.len()
            )));
        }
        Ok(ChartPoint {
            x: x.to_vec(),
            u: u.to_vec(),
            v: Vec::new(),
            p: Vec::new(),
            lam: lam.to_vec(),
        })
    }
}

/// A fixed-λ member of a complete-solution family.
#[derive(Debug, Clone)]
pub enum FamilyCandidate {
    Jet(JetField),
    Section(MomentumSection),
}

/// Tunables for [`complete_solution_check`].
#[derive(Debug, Clone)]
pub struct CompleteSolutionSettings {
    /// Number of coverage probes.
    pub probes: usize,
    /// RNG seed for probe sampling (fixed default for reproducible reports).
    pub seed: u64,
    /// Newton settings for the λ-solve.
    pub newton: NewtonSettings,
}

impl Default for CompleteSolutionSettings {
    fn default() -> Self {
        CompleteSolutionSettings {
            probes: 100,
            seed: 0x6d73_686a,
            newton: NewtonSettings::default(),
        }
    }
}

/// Outcome of a complete-solution family check.
#[derive(Debug, Clone)]
pub struct CompleteSolutionReport {
    /// λ-grid points whose slices were verified.
    pub lambda_slices: usize,
    /// λ-grid points excluded by the box/constraint.
    pub skipped_lambda: usize,
    /// Worst gating residual over all verified slices.
    pub worst_slice_residual: f64,
    /// Smallest |det ∂Φ/∂λ| over all sampled (λ, x, u).
    pub min_abs_det: f64,
    /// Coverage probes run.
    pub probes: usize,
    /// Worst match error over the coverage probes.
    pub max_probe_error: f64,
}

/// Checks a complete-solution family: (a) every admissible λ-slice passes its
/// standard HJ suite on the `(x, u)` grid, (b) the λ-Jacobian is
/// nondegenerate at every sampled `(λ, x, u)`, (c) randomly sampled targets
/// `Φ(λ*, x, u)` are recovered by a Newton solve on λ to better than 1e−8.
pub fn complete_solution_check<'a>(
    src: impl Into<LegendreSource<'a>>,
    family: &CompleteSolutionFamily,
    lambda_grid: &GridSpec,
    xu_grid: &GridSpec,
    tol: f64,
) -> Result<CompleteSolutionReport, Error> {
    complete_solution_check_with(
        src,
        family,
        lambda_grid,
        xu_grid,
        tol,
        &CompleteSolutionSettings::default(),
    )
}

pub fn complete_solution_check_with<'a>(
    src: impl Into<LegendreSource<'a>>,
    family: &CompleteSolutionFamily,
    lambda_grid: &GridSpec,
    xu_grid: &GridSpec,
    tol: f64,
    settings: &CompleteSolutionSettings,
) -> Result<CompleteSolutionReport, Error> {
    let src = src.into();
    let mn = family.param_dim();
    if lambda_grid.axes().len() != mn {
        return Err(Error::InvalidGrid(format!(
            "parameter grid needs {mn} axes (one per λ), got {}",
            lambda_grid.axes().len()
        )));
    }
    // Pair the source with the family side; a Lagrangian theory can serve a
    // Hamiltonian-side family through the derived Hamiltonian.
    enum Suite {
        Lag(FieldTheorySpec),
        Ham(HamiltonianSpec),
    }
    let suite = match (family.side(), &src) {
        (FamilySide::Lagrangian, LegendreSource::Theory(t)) => Suite::Lag((*t).clone()),
        (FamilySide::Lagrangian, LegendreSource::Hamiltonian(_)) => {
            return Err(Error::InvalidParams(
                "a Lagrangian-side family needs the field theory, not a Hamiltonian".into(),
            ))
        }
        (FamilySide::Hamiltonian, LegendreSource::Hamiltonian(h)) => Suite::Ham((*h).clone()),
        (FamilySide::Hamiltonian, LegendreSource::Theory(t)) => Suite::Ham(
            HamiltonianSpec::derived((*t).clone(), settings.newton.clone()),
        ),
    };
    let (sm, sn) = match &suite {
        Suite::Lag(t) => (t.m(), t.n()),
        Suite::Ham(h) => (h.m(), h.n()),
    };
    if sm != family.m() || sn != family.n() {
        return Err(Error::DimensionMismatch(format!(
            "family has (m, n) = ({}, {}), source has ({sm}, {sn})",
            family.m(),
            family.n()
        )));
    }

    // (a) slice verification over the admissible λ-grid.
    let lambda_points = grid_points(lambda_grid)?;
    let mut admissible: Vec<Vec<f64>> = Vec::new();
    let mut skipped_lambda = 0usize;
    for lam in &lambda_points {
        if family.admits(lam)? {
            admissible.push(lam.clone());
        } else {
            skipped_lambda += 1;
        }
    }
    if admissible.is_empty() {
        return Err(Error::InvalidParams(
            "no λ-grid point lies in the family's parameter domain".into(),
        ));
    }
    let mut worst_slice_residual = 0.0f64;
    for lam in &admissible {
        let report = match (family.slice(lam)?, &suite) {
            (FamilyCandidate::Jet(psi), Suite::Lag(t)) => {
                grid_report(&LagStandardSuite::new(t, &psi)?, xu_grid, tol)?
            }
            (FamilyCandidate::Section(s), Suite::Ham(h)) => {
                grid_report(&HamStandardSuite::new(h, &s)?, xu_grid, tol)?
            }
            _ => unreachable!("slice kind follows the family side"),
        };
        worst_slice_residual = worst_slice_residual.max(report.worst());
        if !report.pass {
            let worst_family = report
                .families
                .iter()
                .filter(|f| f.gating)
                .max_by(|a, b| {
                    a.max_abs
                        .partial_cmp(&b.max_abs)
                        .expect("residuals are finite")
                })
                .expect("standard suites have gating families");
            return Err(Error::SliceFailure {
                lambda: lam.clone(),
                detail: format!(
                    "{} reaches {:.3e} (tol {tol:.3e}) at {:?}",
                    worst_family.name, worst_family.max_abs, worst_family.argmax
                ),
            });
        }
    }

    // (b) λ-Jacobian nondegeneracy over λ-grid × (x, u)-grid.
    let xu_points = grid_points(xu_grid)?;
    let xu_slots = resolve_base_axes(xu_grid, family.m(), family.n())?;
    let mut min_abs_det = f64::INFINITY;
    for lam in &admissible {
        let dets: Vec<Result<f64, Error>> = xu_points
            .par_iter()
            .map(|coords| {
                let (x, u) = split_base(coords, &xu_slots, family.m(), family.n());
                family.lambda_jacobian(lam, &x, &u).map(|(_, det)| det)
            })
            .collect();
        for (coords, det) in xu_points.iter().zip(dets) {
            let det = det?;
            if det.abs() <= tol {
                let (x, u) = split_base(coords, &xu_slots, family.m(), family.n());
                return Err(Error::DegenerateJacobian {
                    lambda: lam.clone(),
                    x,
                    u,
                    det,
                });
            }
            min_abs_det = min_abs_det.min(det.abs());
        }
    }

    // (c) coverage probes: recover sampled targets by Newton on λ.
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut max_probe_error = 0.0f64;
    let center: Vec<f64> = family
        .bounds()
        .iter()
        .map(|(lo, hi)| 0.5 * (lo + hi))
        .collect();
    let mut attempts = 0usize;
    for _ in 0..settings.probes {
        // Rejection-sample an admissible λ*.
        let lam_star = loop {
            attempts += 1;
            if attempts > settings.probes.max(1) * 1000 {
                return Err(Error::InvalidParams(
                    "parameter constraint rejects nearly the whole box; cannot sample probes"
                        .into(),
                ));
            }
            let cand: Vec<f64> = family
                .bounds()
                .iter()
                .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
                .collect();
            if family.admits(&cand)? {
                break cand;
            }
        };
        let coords: Vec<f64> = xu_grid
            .axes()
            .iter()
            .map(|ax| rng.gen_range(ax.lo..=ax.hi))
            .collect();
        let (x, u) = split_base(&coords, &xu_slots, family.m(), family.n());
        let target = family.values_at(&lam_star, &x, &u)?;
        let err = newton_on_lambda(family, &x, &u, &target, &center, settings)?;
        max_probe_error = max_probe_error.max(err);
    }

    Ok(CompleteSolutionReport {
        lambda_slices: admissible.len(),
        skipped_lambda,
        worst_slice_residual,
        min_abs_det,
        probes: settings.probes,
        max_probe_error,
    })
}

/// Maps each xu-grid axis to its base-chart slot (x or u only).
fn resolve_base_axes(grid: &GridSpec, m: usize, n: usize) -> Result<Vec<Slot>, Error> {
    let chart = Chart::base(m, n);
    let mut slots = Vec::with_capacity(grid.axes().len());
    for axis in grid.axes() {
        slots.push(chart.resolve(&axis.name)?);
    }
    let expected = chart.slots();
    for want in &expected {
        if !slots.contains(want) {
            return Err(Error::InvalidGrid(format!(
                "grid must cover the base chart; missing {want}"
            )));
        }
    }
    if slots.len() != expected.len() {
        return Err(Error::InvalidGrid(
            "grid has extra axes beyond the base chart".into(),
        ));
    }
    Ok(slots)
}

fn split_base(coords: &[f64], slots: &[Slot], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut u = vec![0.0; n];
    for (c, s) in coords.iter().zip(slots) {
        match s {
            Slot::X(i) => x[*i] = *c,
            Slot::U(a) => u[*a] = *c,
            _ => unreachable!("resolve_base_axes admits base slots only"),
        }
    }
    (x, u)
}

/// Newton solve for λ with `Φ(λ; x, u) = target`, starting from `start`.
/// Returns the final ∞-norm match error on success.
fn newton_on_lambda(
    family: &CompleteSolutionFamily,
    x: &[f64],
    u: &[f64],
    target: &[Vec<f64>],
    start: &[f64],
    settings: &CompleteSolutionSettings,
) -> Result<f64, Error> {
    let mn = family.param_dim();
    let flat_target: Vec<f64> = target.iter().flatten().copied().collect();
    let miss = |lam: &[f64], detail: String| Error::CoverageMiss {
        target: flat_target.clone(),
        detail: format!(
            "at x = {x:?}, u = {u:?}, λ-iterate {lam:?}: {detail}",
        ),
    };
    let mut lam = start.to_vec();
    for _ in 0..=settings.newton.max_iterations {
        let vals = family.values_at(&lam, x, u)?;
        let mut resid = Vec::with_capacity(mn);
        for (row, trow) in vals.iter().zip(target) {
            for (v, t) in row.iter().zip(trow) {
                resid.push(v - t);
            }
        }
        let err = resid.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
        if err < COVERAGE_TOL {
            return Ok(err);
        }
        let (jac, det) = family.lambda_jacobian(&lam, x, u)?;
        if det.abs() < crate::legendre::SINGULAR_DET {
            return Err(miss(
                &lam,
                format!("λ-Jacobian is singular (det {det:.3e})"),
            ));
        }
        let step = Lu::factor(&jac, mn).solve(&resid);
        for (l, s) in lam.iter_mut().zip(&step) {
            *l -= s;
        }
        if lam.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(miss(&lam, "λ-iteration diverged".into()));
        }
    }
    let vals = family.values_at(&lam, x, u)?;
    let mut err = 0.0f64;
    for (row, trow) in vals.iter().zip(target) {
        for (v, t) in row.iter().zip(trow) {
            err = err.max((v - t).abs());
        }
    }
    Err(miss(
        &lam,
        format!(
            "no λ matched after {} iterations (final error {err:.3e})",
            settings.newton.max_iterations
        ),
    ))
}
