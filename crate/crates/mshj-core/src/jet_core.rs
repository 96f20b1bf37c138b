//! Coordinate conventions, field-theory specification, grids, and the shared
//! residual-report machinery.
//!
//! Coordinates follow the naming contract `x1..xm`, `u1..un`, `vA_i`, `pA_i`
//! (with `vA_i` the jet velocity of fiber component `A` along base direction
//! `i`), plus family parameters `l1..lk`. Convenience aliases are accepted
//! where unambiguous: `t` for `x1` when m = 1, `x`/`y` for `x1`/`x2` when
//! m ≤ 2, `q`/`u` for `u1` when n = 1, and `vA`/`pA` for `vA_1`/`pA_1` when
//! m = 1.
//!
//! Multi-index flattening for `(α, i)` pairs is α-major (`idx = α·m + i`)
//! everywhere: Hessians, Legendre solves, and transport systems all share it.

use std::fmt;

use rayon::prelude::*;

use crate::error::Error;
use crate::expr::{eval_with, Expr, ExprAst, Scalar, Taylor2};
use crate::linalg::Lu;

// ---------------------------------------------------------------------------
// Slots and charts
// ---------------------------------------------------------------------------

/// A resolved coordinate: base, fiber, velocity, momentum, or family
/// parameter. Indices are 0-based internally; display is 1-based canonical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    X(usize),
    U(usize),
    V(usize, usize),
    P(usize, usize),
    Lam(usize),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::X(i) => write!(f, "x{}", i + 1),
            Slot::U(a) => write!(f, "u{}", a + 1),
            Slot::V(a, i) => write!(f, "v{}_{}", a + 1, i + 1),
            Slot::P(a, i) => write!(f, "p{}_{}", a + 1, i + 1),
            Slot::Lam(k) => write!(f, "l{}", k + 1),
        }
    }
}

/// The coordinate set an expression or operation is allowed to reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chart {
    pub m: usize,
    pub n: usize,
    /// Velocities `vA_i` available.
    pub vel: bool,
    /// Momenta `pA_i` available.
    pub mom: bool,
    /// Number of family parameters `l1..lk`.
    pub lam: usize,
}

impl Chart {
    /// Configuration space only: `(x, u)`.
    pub fn base(m: usize, n: usize) -> Chart {
        Chart {
            m,
            n,
            vel: false,
            mom: false,
            lam: 0,
        }
    }

    /// Jet chart `(x, u, v)`.
    pub fn jet(m: usize, n: usize) -> Chart {
        Chart {
            vel: true,
            ..Chart::base(m, n)
        }
    }

    /// Momentum chart `(x, u, p)`.
    pub fn momentum(m: usize, n: usize) -> Chart {
        Chart {
            mom: true,
            ..Chart::base(m, n)
        }
    }

    /// Adds `k` family parameters.
    pub fn with_params(self, k: usize) -> Chart {
        Chart { lam: k, ..self }
    }

    /// All slots of the chart in canonical order (x, u, v, p, λ).
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for i in 0..self.m {
            out.push(Slot::X(i));
        }
        for a in 0..self.n {
            out.push(Slot::U(a));
        }
        if self.vel {
            for a in 0..self.n {
                for i in 0..self.m {
                    out.push(Slot::V(a, i));
                }
            }
        }
        if self.mom {
            for a in 0..self.n {
                for i in 0..self.m {
                    out.push(Slot::P(a, i));
                }
            }
        }
        for k in 0..self.lam {
            out.push(Slot::Lam(k));
        }
        out
    }

    fn unknown(&self, name: &str) -> Error {
        let mut chart = format!("x1..x{}, u1..u{}", self.m, self.n);
        if self.vel {
            chart.push_str(&format!(", v1_1..v{}_{}", self.n, self.m));
        }
        if self.mom {
            chart.push_str(&format!(", p1_1..p{}_{}", self.n, self.m));
        }
        if self.lam > 0 {
            chart.push_str(&format!(", l1..l{}", self.lam));
        }
        Error::UnknownVariable {
            name: name.to_string(),
            chart,
        }
    }

    /// Resolves a variable name to a slot, honoring the documented aliases.
    pub fn resolve(&self, name: &str) -> Result<Slot, Error> {
        // Aliases first; they never shadow a canonical name in range.
        match name {
            "t" if self.m == 1 => return Ok(Slot::X(0)),
            "x" if self.m <= 2 => return Ok(Slot::X(0)),
            "y" if self.m == 2 => return Ok(Slot::X(1)),
            "q" | "u" if self.n == 1 => return Ok(Slot::U(0)),
            "v" if self.vel && self.m == 1 && self.n == 1 => return Ok(Slot::V(0, 0)),
            "p" if self.mom && self.m == 1 && self.n == 1 => return Ok(Slot::P(0, 0)),
            _ => {}
        }
        let (head, rest) = match name.split_at_checked(1) {
            Some(parts) => parts,
            None => return Err(self.unknown(name)),
        };
        let parse_one = |s: &str| -> Option<usize> {
            let k: usize = s.parse().ok()?;
            (k >= 1).then(|| k - 1)
        };
        let parse_pair = |s: &str| -> Option<(usize, usize)> {
            let (a, i) = s.split_once('_')?;
            Some((parse_one(a)?, parse_one(i)?))
        };
        let slot = match head {
            "x" => parse_one(rest).map(Slot::X),
            "u" => parse_one(rest).map(Slot::U),
            "l" => parse_one(rest).map(Slot::Lam),
            "v" => parse_pair(rest).map(|(a, i)| Slot::V(a, i)).or_else(|| {
                // `vA` means `vA_1` in mechanics (m = 1).
                (self.m == 1)
                    .then(|| parse_one(rest).map(|a| Slot::V(a, 0)))
                    .flatten()
            }),
            "p" => parse_pair(rest).map(|(a, i)| Slot::P(a, i)).or_else(|| {
                (self.m == 1)
                    .then(|| parse_one(rest).map(|a| Slot::P(a, 0)))
                    .flatten()
            }),
            _ => None,
        };
        let slot = slot.ok_or_else(|| self.unknown(name))?;
        let in_range = match slot {
            Slot::X(i) => i < self.m,
            Slot::U(a) => a < self.n,
            Slot::V(a, i) => self.vel && a < self.n && i < self.m,
            Slot::P(a, i) => self.mom && a < self.n && i < self.m,
            Slot::Lam(k) => k < self.lam,
        };
        if !in_range {
            return Err(self.unknown(name));
        }
        Ok(slot)
    }
}

/// Compiles a named AST against a chart, rejecting out-of-chart variables.
pub(crate) fn compile(ast: &ExprAst, chart: &Chart) -> Result<Expr<Slot>, Error> {
    ast.try_map_vars(&mut |name: &String| chart.resolve(name))
}

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

fn check_finite(label: &str, vals: impl IntoIterator<Item = f64>) -> Result<(), Error> {
    for v in vals {
        if !v.is_finite() {
            return Err(Error::InvalidParams(format!(
                "non-finite {label} entry {v}"
            )));
        }
    }
    Ok(())
}

/// A point of the jet bundle: `(x^i, u^α, v^α_i)` with `v[α][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

impl JetPoint {
    pub fn new(x: Vec<f64>, u: Vec<f64>, v: Vec<Vec<f64>>) -> Result<JetPoint, Error> {
        if v.len() != u.len() || v.iter().any(|row| row.len() != x.len()) {
            return Err(Error::DimensionMismatch(format!(
                "jet point needs v[{}][{}] for m={}, n={}",
                u.len(),
                x.len(),
                x.len(),
                u.len()
            )));
        }
        check_finite("x", x.iter().copied())?;
        check_finite("u", u.iter().copied())?;
        check_finite("v", v.iter().flatten().copied())?;
        Ok(JetPoint { x, u, v })
    }
}

/// A point of the restricted multimomentum bundle: `(x^i, u^α, p_α^i)` with
/// `p[α][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedMomentumPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<Vec<f64>>,
}

impl RestrictedMomentumPoint {
    pub fn new(
        x: Vec<f64>,
        u: Vec<f64>,
        p: Vec<Vec<f64>>,
    ) -> Result<RestrictedMomentumPoint, Error> {
        if p.len() != u.len() || p.iter().any(|row| row.len() != x.len()) {
            return Err(Error::DimensionMismatch(format!(
                "momentum point needs p[{}][{}] for m={}, n={}",
                u.len(),
                x.len(),
                x.len(),
                u.len()
            )));
        }
        check_finite("x", x.iter().copied())?;
        check_finite("u", u.iter().copied())?;
        check_finite("p", p.iter().flatten().copied())?;
        Ok(RestrictedMomentumPoint { x, u, p })
    }
}

/// Extended multimomentum point: restricted coordinates plus the affine
/// coordinate `p0` (the density dual to the volume form).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedMomentumPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub p0: f64,
}

/// A fully resolved coordinate assignment for one chart point. Only the
/// chart-active blocks are populated.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub lam: Vec<f64>,
}

impl ChartPoint {
    pub fn zero(chart: &Chart) -> ChartPoint {
        ChartPoint {
            x: vec![0.0; chart.m],
            u: vec![0.0; chart.n],
            v: if chart.vel {
                vec![vec![0.0; chart.m]; chart.n]
            } else {
                Vec::new()
            },
            p: if chart.mom {
                vec![vec![0.0; chart.m]; chart.n]
            } else {
                Vec::new()
            },
            lam: vec![0.0; chart.lam],
        }
    }

    pub fn from_jet(pt: &JetPoint) -> ChartPoint {
        ChartPoint {
            x: pt.x.clone(),
            u: pt.u.clone(),
            v: pt.v.clone(),
            p: Vec::new(),
            lam: Vec::new(),
        }
    }

    pub fn from_momentum(pt: &RestrictedMomentumPoint) -> ChartPoint {
        ChartPoint {
            x: pt.x.clone(),
            u: pt.u.clone(),
            v: Vec::new(),
            p: pt.p.clone(),
            lam: Vec::new(),
        }
    }

    pub fn base(x: &[f64], u: &[f64]) -> ChartPoint {
        ChartPoint {
            x: x.to_vec(),
            u: u.to_vec(),
            v: Vec::new(),
            p: Vec::new(),
            lam: Vec::new(),
        }
    }

    pub fn get(&self, s: Slot) -> f64 {
        match s {
            Slot::X(i) => self.x[i],
            Slot::U(a) => self.u[a],
            Slot::V(a, i) => self.v[a][i],
            Slot::P(a, i) => self.p[a][i],
            Slot::Lam(k) => self.lam[k],
        }
    }

    pub fn set(&mut self, s: Slot, value: f64) {
        match s {
            Slot::X(i) => self.x[i] = value,
            Slot::U(a) => self.u[a] = value,
            Slot::V(a, i) => self.v[a][i] = value,
            Slot::P(a, i) => self.p[a][i] = value,
            Slot::Lam(k) => self.lam[k] = value,
        }
    }
}

/// Evaluates a compiled expression at a chart point.
pub(crate) fn eval_slot(e: &Expr<Slot>, pt: &ChartPoint) -> Result<f64, Error> {
    Ok(eval_with(e, &|s: &Slot| Some(pt.get(*s)))?)
}

/// Value, gradient, and dense Hessian of a compiled expression with respect
/// to an ordered slot list; all other slots held at their point values.
pub(crate) struct SlotDerivs {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major k×k over the requested slots.
    pub hess: Vec<f64>,
}

/// First-order-only variant of [`derive_slots`] (cheaper carrier).
pub(crate) fn derive_slots_first(
    e: &Expr<Slot>,
    pt: &ChartPoint,
    vars: &[Slot],
) -> Result<(f64, Vec<f64>), Error> {
    use crate::expr::Dual;
    let k = vars.len();
    let look = |s: &Slot| -> Option<Dual> {
        let v = pt.get(*s);
        Some(match vars.iter().position(|w| w == s) {
            Some(i) => Dual::seed(v, k, i),
            None => Dual::from_const(v),
        })
    };
    let t = eval_with(e, &look)?;
    Ok((t.value(), (0..k).map(|i| t.grad(i)).collect()))
}

pub(crate) fn derive_slots(
    e: &Expr<Slot>,
    pt: &ChartPoint,
    vars: &[Slot],
) -> Result<SlotDerivs, Error> {
    let k = vars.len();
    let look = |s: &Slot| -> Option<Taylor2> {
        let v = pt.get(*s);
        Some(match vars.iter().position(|w| w == s) {
            Some(i) => Taylor2::seed(v, k, i),
            None => Taylor2::from_const(v),
        })
    };
    let t = eval_with(e, &look)?;
    let mut hess = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            hess.push(t.hess(i, j));
        }
    }
    Ok(SlotDerivs {
        value: t.value(),
        grad: (0..k).map(|i| t.grad(i)).collect(),
        hess,
    })
}

// ---------------------------------------------------------------------------
// Field theory specification
// ---------------------------------------------------------------------------

/// A first-order field theory over one coordinate chart: base dimension `m`,
/// fiber dimension `n`, and a Lagrangian density `L(x, u, v)`. The volume
/// form is the canonical coordinate one.
#[derive(Debug, Clone)]
pub struct FieldTheorySpec {
    m: usize,
    n: usize,
    lagrangian: ExprAst,
    compiled: Expr<Slot>,
}

impl FieldTheorySpec {
    pub fn new(m: usize, n: usize, lagrangian: ExprAst) -> Result<FieldTheorySpec, Error> {
        if m < 1 || n < 1 {
            return Err(Error::InvalidParams(format!(
                "field theory needs m ≥ 1 and n ≥ 1, got m={m}, n={n}"
            )));
        }
        let compiled = compile(&lagrangian, &Chart::jet(m, n))?;
        Ok(FieldTheorySpec {
            m,
            n,
            lagrangian,
            compiled,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lagrangian(&self) -> &ExprAst {
        &self.lagrangian
    }

    pub fn jet_chart(&self) -> Chart {
        Chart::jet(self.m, self.n)
    }

    pub fn eval_l(&self, pt: &JetPoint) -> Result<f64, Error> {
        eval_slot(&self.compiled, &ChartPoint::from_jet(pt))
    }

    /// Full second-order derivative bundle of L at a jet point.
    pub(crate) fn l_bundle(&self, pt: &ChartPoint) -> Result<JetDerivs, Error> {
        let chart = self.jet_chart();
        let vars = chart.slots();
        let d = derive_slots(&self.compiled, pt, &vars)?;
        Ok(JetDerivs {
            m: self.m,
            n: self.n,
            value: d.value,
            grad: d.grad,
            hess: d.hess,
        })
    }

    /// Value, v-gradient, and v-Hessian of L (the blocks Newton inversion
    /// needs), with x and u held fixed.
    pub(crate) fn v_derivs(&self, pt: &ChartPoint) -> Result<SlotDerivs, Error> {
        let mut vars = Vec::with_capacity(self.n * self.m);
        for a in 0..self.n {
            for i in 0..self.m {
                vars.push(Slot::V(a, i));
            }
        }
        derive_slots(&self.compiled, pt, &vars)
    }
}

/// Second-order derivative data of L at one jet point, indexed by chart slots
/// in canonical order: x(0..m), u(m..m+n), v(m+n..m+n+nm) with (α,i) α-major.
pub(crate) struct JetDerivs {
    m: usize,
    n: usize,
    pub value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl JetDerivs {
    fn k(&self) -> usize {
        self.m + self.n + self.n * self.m
    }
    fn ix_x(&self, i: usize) -> usize {
        i
    }
    fn ix_u(&self, a: usize) -> usize {
        self.m + a
    }
    fn ix_v(&self, a: usize, i: usize) -> usize {
        self.m + self.n + a * self.m + i
    }
    fn h(&self, r: usize, c: usize) -> f64 {
        self.hess[r * self.k() + c]
    }

    pub fn l_x(&self, i: usize) -> f64 {
        self.grad[self.ix_x(i)]
    }
    pub fn l_u(&self, a: usize) -> f64 {
        self.grad[self.ix_u(a)]
    }
    pub fn l_v(&self, a: usize, i: usize) -> f64 {
        self.grad[self.ix_v(a, i)]
    }
    pub fn l_vx(&self, a: usize, i: usize, j: usize) -> f64 {
        self.h(self.ix_v(a, i), self.ix_x(j))
    }
    pub fn l_vu(&self, a: usize, i: usize, b: usize) -> f64 {
        self.h(self.ix_v(a, i), self.ix_u(b))
    }
    pub fn l_vv(&self, a: usize, i: usize, b: usize, j: usize) -> f64 {
        self.h(self.ix_v(a, i), self.ix_v(b, j))
    }
}

/// The velocity Hessian `(∂²L/∂v_i^α ∂v_j^β)` as an `nm × nm` matrix in the
/// α-major flattening; symmetric by construction.
pub fn hessian(theory: &FieldTheorySpec, pt: &JetPoint) -> Result<Vec<Vec<f64>>, Error> {
    let d = theory.v_derivs(&ChartPoint::from_jet(pt))?;
    let k = theory.n() * theory.m();
    Ok((0..k)
        .map(|r| d.hess[r * k..(r + 1) * k].to_vec())
        .collect())
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Default cap on total grid points.
pub const GRID_CAP: usize = 10_000_000;

/// One grid axis: a named closed interval sampled uniformly. A single-sample
/// axis evaluates at the interval midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(name: &str, lo: f64, hi: f64, count: usize) -> Result<Axis, Error> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidGrid(format!(
                "axis {name}: need finite lo ≤ hi, got [{lo}, {hi}]"
            )));
        }
        if count < 1 {
            return Err(Error::InvalidGrid(format!("axis {name}: count must be ≥ 1")));
        }
        Ok(Axis {
            name: name.to_string(),
            lo,
            hi,
            count,
        })
    }

    pub fn value(&self, idx: usize) -> f64 {
        debug_assert!(idx < self.count);
        if self.count == 1 {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo + (self.hi - self.lo) * idx as f64 / (self.count - 1) as f64
        }
    }
}

/// A product grid over named axes, enumerated row-major (first axis slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<Axis>,
    cap: usize,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> GridSpec {
        GridSpec {
            axes,
            cap: GRID_CAP,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> GridSpec {
        self.cap = cap;
        self
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Multiplies every axis count (used by the CLI's --grid-scale).
    pub fn scale_counts(&mut self, factor: usize) {
        for ax in &mut self.axes {
            ax.count = ax.count.saturating_mul(factor).max(1);
        }
    }

    /// Total point count, gated by the cap.
    pub fn total(&self) -> Result<usize, Error> {
        let mut total: u128 = 1;
        for ax in &self.axes {
            total = total.saturating_mul(ax.count as u128);
        }
        if total > self.cap as u128 {
            return Err(Error::CapExceeded {
                total,
                cap: self.cap,
            });
        }
        Ok(total as usize)
    }

    /// Coordinates of the linear index `idx` in row-major order.
    pub fn coords(&self, mut idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (k, ax) in self.axes.iter().enumerate().rev() {
            out[k] = ax.value(idx % ax.count);
            idx /= ax.count;
        }
        out
    }
}

/// Materializes the full ordered point list of a grid.
pub fn grid_points(grid: &GridSpec) -> Result<Vec<Vec<f64>>, Error> {
    let total = grid.total()?;
    Ok((0..total).map(|i| grid.coords(i)).collect())
}

// ---------------------------------------------------------------------------
// Residual reports
// ---------------------------------------------------------------------------

/// Static description of one residual family an op emits.
#[derive(Debug, Clone)]
pub struct FamilySpec {
    pub name: String,
    /// One label per flattened component, carrying the index metadata.
    pub labels: Vec<String>,
    /// Gating families decide the pass flag; informational ones do not.
    pub gating: bool,
}

impl FamilySpec {
    pub fn new(name: &str, labels: Vec<String>, gating: bool) -> FamilySpec {
        FamilySpec {
            name: name.to_string(),
            labels,
            gating,
        }
    }
}

/// A pointwise residual evaluator that [`grid_report`] can sweep.
pub trait ResidualOp: Sync {
    /// The chart whose coordinates the grid must cover.
    fn chart(&self) -> Chart;
    /// The families produced by [`ResidualOp::eval_at`], in order.
    fn families(&self) -> Vec<FamilySpec>;
    /// Residual components per family at one chart point.
    fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error>;
}

/// What to do when a grid point fails to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    /// Abort with the failing point's location attached (lowest linear index).
    #[default]
    FailFast,
    /// Record the point as skipped and exclude it from the statistics.
    Skip,
}

/// Aggregated statistics for one residual family over a grid sweep.
#[derive(Debug, Clone)]
pub struct FamilyStats {
    pub name: String,
    pub components: usize,
    pub max_abs: f64,
    pub rms: f64,
    /// Grid coordinates (axis order) of the worst point; empty if the family
    /// has no components or nothing was evaluated.
    pub argmax: Vec<f64>,
    /// Label of the worst component.
    pub argmax_component: String,
    pub gating: bool,
}

/// Grid-sweep summary: per-family statistics plus the overall verdict.
/// Invariant: `max_abs ≥ rms ≥ 0` per family.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub families: Vec<FamilyStats>,
    /// Axis names, giving meaning to the argmax coordinates.
    pub axes: Vec<String>,
    /// Total grid size.
    pub points: usize,
    /// Points that contributed to the statistics.
    pub evaluated: usize,
    /// Points excluded under [`ErrorPolicy::Skip`].
    pub skipped: usize,
    pub tol: f64,
    /// True iff every gating family has `max_abs < tol` and at least one
    /// point was evaluated.
    pub pass: bool,
}

impl ResidualReport {
    /// Largest gating-family max.
    pub fn worst(&self) -> f64 {
        self.families
            .iter()
            .filter(|f| f.gating)
            .map(|f| f.max_abs)
            .fold(0.0, f64::max)
    }
}

struct FamilyAcc {
    components: usize,
    max_abs: f64,
    arg_lin: usize,
    arg_comp: usize,
    sumsq: f64,
    samples: u64,
}

struct ChunkOut {
    fams: Vec<FamilyAcc>,
    evaluated: usize,
    skipped: usize,
    /// Lowest-index error in this chunk (Skip policy records, FailFast aborts).
    first_err: Option<(usize, Error)>,
}

const CHUNK: usize = 4096;

/// Splits into halves recursively so the summation tree is balanced; keeps
/// RMS accumulation deterministic for a fixed chunk size.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn resolve_grid(chart: &Chart, grid: &GridSpec) -> Result<Vec<Slot>, Error> {
    let mut slots = Vec::with_capacity(grid.axes().len());
    for ax in grid.axes() {
        let s = chart.resolve(&ax.name)?;
        if slots.contains(&s) {
            return Err(Error::InvalidGrid(format!(
                "axis {} duplicates coordinate {s}",
                ax.name
            )));
        }
        slots.push(s);
    }
    let missing: Vec<String> = chart
        .slots()
        .into_iter()
        .filter(|s| !slots.contains(s))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidGrid(format!(
            "grid does not cover the chart; missing axes: {}",
            missing.join(", ")
        )));
    }
    Ok(slots)
}

/// Applies a residual op over every grid point and aggregates max, RMS, and
/// argmax per family; `pass` iff all gating maxima are below `tol`.
pub fn grid_report(
    op: &(impl ResidualOp + ?Sized),
    grid: &GridSpec,
    tol: f64,
) -> Result<ResidualReport, Error> {
    grid_report_with(op, grid, tol, ErrorPolicy::FailFast)
}

/// [`grid_report`] with an explicit error policy.
pub fn grid_report_with(
    op: &(impl ResidualOp + ?Sized),
    grid: &GridSpec,
    tol: f64,
    policy: ErrorPolicy,
) -> Result<ResidualReport, Error> {
    let chart = op.chart();
    let slots = resolve_grid(&chart, grid)?;
    let total = grid.total()?;
    let specs = op.families();

    let run_chunk = |chunk_id: usize| -> ChunkOut {
        let lo = chunk_id * CHUNK;
        let hi = ((chunk_id + 1) * CHUNK).min(total);
        let mut fams: Vec<FamilyAcc> = specs
            .iter()
            .map(|s| FamilyAcc {
                components: s.labels.len(),
                max_abs: -1.0,
                arg_lin: 0,
                arg_comp: 0,
                sumsq: 0.0,
                samples: 0,
            })
            .collect();
        let mut out = ChunkOut {
            fams: Vec::new(),
            evaluated: 0,
            skipped: 0,
            first_err: None,
        };
        let mut pt = ChartPoint::zero(&chart);
        for lin in lo..hi {
            let coords = grid.coords(lin);
            for (s, c) in slots.iter().zip(&coords) {
                pt.set(*s, *c);
            }
            // A non-finite residual means the evaluation left the domain of
            // some intermediate (e.g. sqrt of a negative); classify it as
            // OutOfDomain so the error policy decides, rather than letting
            // NaN poison the statistics.
            let checked = op.eval_at(&pt).and_then(|values| {
                for (spec, vals) in specs.iter().zip(&values) {
                    for (ci, v) in vals.iter().enumerate() {
                        if !v.is_finite() {
                            return Err(Error::OutOfDomain(format!(
                                "residual {} is not finite",
                                spec.labels.get(ci).map_or(spec.name.as_str(), |l| l)
                            )));
                        }
                    }
                }
                Ok(values)
            });
            match checked {
                Ok(values) => {
                    out.evaluated += 1;
                    for (acc, vals) in fams.iter_mut().zip(&values) {
                        for (ci, v) in vals.iter().enumerate() {
                            let a = v.abs();
                            if a > acc.max_abs {
                                acc.max_abs = a;
                                acc.arg_lin = lin;
                                acc.arg_comp = ci;
                            }
                            acc.sumsq += v * v;
                            acc.samples += 1;
                        }
                    }
                }
                Err(e) => {
                    out.skipped += 1;
                    if out.first_err.is_none() {
                        out.first_err = Some((lin, e));
                        // Fail-fast callers only need the first error.
                        if policy == ErrorPolicy::FailFast {
                            break;
                        }
                    }
                }
            }
        }
        out.fams = fams;
        out
    };

    let n_chunks = total.div_ceil(CHUNK);
    let chunks: Vec<ChunkOut> = (0..n_chunks).into_par_iter().map(run_chunk).collect();

    // Deterministic merge in chunk order; strict > keeps the first argmax.
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut first_err: Option<(usize, Error)> = None;
    let mut merged: Vec<FamilyAcc> = specs
        .iter()
        .map(|s| FamilyAcc {
            components: s.labels.len(),
            max_abs: -1.0,
            arg_lin: 0,
            arg_comp: 0,
            sumsq: 0.0,
            samples: 0,
        })
        .collect();
    let mut sq_parts: Vec<Vec<f64>> = vec![Vec::with_capacity(n_chunks); specs.len()];
    for chunk in chunks {
        evaluated += chunk.evaluated;
        skipped += chunk.skipped;
        if let Some((lin, e)) = chunk.first_err {
            if first_err.as_ref().map_or(true, |(l, _)| lin < *l) {
                first_err = Some((lin, e));
            }
        }
        for ((acc, part), sq) in merged.iter_mut().zip(chunk.fams).zip(&mut sq_parts) {
            if part.max_abs > acc.max_abs {
                acc.max_abs = part.max_abs;
                acc.arg_lin = part.arg_lin;
                acc.arg_comp = part.arg_comp;
            }
            sq.push(part.sumsq);
            acc.samples += part.samples;
        }
    }

    if policy == ErrorPolicy::FailFast {
        if let Some((lin, e)) = first_err {
            return Err(Error::AtPoint {
                location: grid.coords(lin),
                source: Box::new(e),
            });
        }
    }

    let families: Vec<FamilyStats> = specs
        .iter()
        .zip(merged.iter_mut())
        .zip(sq_parts)
        .map(|((spec, acc), sq)| {
            let seen = acc.samples > 0 && acc.max_abs >= 0.0;
            FamilyStats {
                name: spec.name.clone(),
                components: acc.components,
                max_abs: if seen { acc.max_abs } else { 0.0 },
                rms: if acc.samples > 0 {
                    (pairwise_sum(&sq) / acc.samples as f64).sqrt()
                } else {
                    0.0
                },
                argmax: if seen {
                    grid.coords(acc.arg_lin)
                } else {
                    Vec::new()
                },
                argmax_component: if seen {
                    spec.labels[acc.arg_comp].clone()
                } else {
                    String::new()
                },
                gating: spec.gating,
            }
        })
        .collect();

    let pass = evaluated > 0
        && families
            .iter()
            .filter(|f| f.gating)
            .all(|f| f.max_abs < tol);

    Ok(ResidualReport {
        families,
        axes: grid.axes().iter().map(|a| a.name.clone()).collect(),
        points: total,
        evaluated,
        skipped,
        tol,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Regularity
// ---------------------------------------------------------------------------

/// Outcome of sweeping `|det ∂²L/∂v∂v|` over a jet grid.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub regular: bool,
    pub min_abs_det: f64,
    /// Grid coordinates (axis order) where the minimum occurs.
    pub argmin: Vec<f64>,
    pub axes: Vec<String>,
    pub points: usize,
    pub tol: f64,
}

/// Checks regularity of the theory on a grid covering the full jet chart:
/// regular iff `min |det Hessian| > tol`.
pub fn regularity_check(
    theory: &FieldTheorySpec,
    grid: &GridSpec,
    tol: f64,
) -> Result<RegularityReport, Error> {
    let chart = theory.jet_chart();
    let slots = resolve_grid(&chart, grid)?;
    let total = grid.total()?;
    let k = theory.n() * theory.m();

    let run_chunk = |chunk_id: usize| -> Result<(f64, usize), (usize, Error)> {
        let lo = chunk_id * CHUNK;
        let hi = ((chunk_id + 1) * CHUNK).min(total);
        let mut best = f64::INFINITY;
        let mut arg = lo;
        let mut pt = ChartPoint::zero(&chart);
        for lin in lo..hi {
            let coords = grid.coords(lin);
            for (s, c) in slots.iter().zip(&coords) {
                pt.set(*s, *c);
            }
            let d = theory.v_derivs(&pt).map_err(|e| (lin, e))?;
            let det = Lu::factor(&d.hess, k).det().abs();
            if det < best {
                best = det;
                arg = lin;
            }
        }
        Ok((best, arg))
    };

    let n_chunks = total.div_ceil(CHUNK);
    let chunks: Vec<Result<(f64, usize), (usize, Error)>> =
        (0..n_chunks).into_par_iter().map(run_chunk).collect();

    let mut best = f64::INFINITY;
    let mut arg = 0usize;
    let mut first_err: Option<(usize, Error)> = None;
    for c in chunks {
        match c {
            Ok((b, a)) => {
                if b < best {
                    best = b;
                    arg = a;
                }
            }
            Err((lin, e)) => {
                if first_err.as_ref().map_or(true, |(l, _)| lin < *l) {
                    first_err = Some((lin, e));
                }
            }
        }
    }
    if let Some((lin, e)) = first_err {
        return Err(Error::AtPoint {
            location: grid.coords(lin),
            source: Box::new(e),
        });
    }

    Ok(RegularityReport {
        regular: best > tol,
        min_abs_det: best,
        argmin: grid.coords(arg),
        axes: grid.axes().iter().map(|a| a.name.clone()).collect(),
        points: total,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn minimal_surface() -> FieldTheorySpec {
        FieldTheorySpec::new(2, 1, parse("sqrt(1 + v1_1^2 + v1_2^2)").unwrap()).unwrap()
    }

    #[test]
    fn chart_resolution_and_aliases() {
        let jet = Chart::jet(2, 1);
        assert_eq!(jet.resolve("x1").unwrap(), Slot::X(0));
        assert_eq!(jet.resolve("x").unwrap(), Slot::X(0));
        assert_eq!(jet.resolve("y").unwrap(), Slot::X(1));
        assert_eq!(jet.resolve("u1").unwrap(), Slot::U(0));
        assert_eq!(jet.resolve("u").unwrap(), Slot::U(0));
        assert_eq!(jet.resolve("v1_2").unwrap(), Slot::V(0, 1));
        assert!(jet.resolve("v1_3").is_err());
        assert!(jet.resolve("p1_1").is_err());
        assert!(jet.resolve("t").is_err());

        let mech = Chart::momentum(1, 1).with_params(2);
        assert_eq!(mech.resolve("t").unwrap(), Slot::X(0));
        assert_eq!(mech.resolve("q").unwrap(), Slot::U(0));
        assert_eq!(mech.resolve("p").unwrap(), Slot::P(0, 0));
        assert_eq!(mech.resolve("p1").unwrap(), Slot::P(0, 0));
        assert_eq!(mech.resolve("l2").unwrap(), Slot::Lam(1));
        assert!(mech.resolve("l3").is_err());
        assert!(mech.resolve("v1_1").is_err());

        match jet.resolve("bogus") {
            Err(Error::UnknownVariable { name, .. }) => assert_eq!(name, "bogus"),
            other => panic!("expected unknown variable, got {other:?}"),
        }
    }

    #[test]
    fn hessian_minimal_surface_values() {
        let th = minimal_surface();
        let flat = JetPoint::new(vec![0.0, 0.0], vec![0.0], vec![vec![0.0, 0.0]]).unwrap();
        let h = hessian(&th, &flat).unwrap();
        assert_eq!(h, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        // det at v = (1,1) is 1/(1+|v|²)² = 1/9
        let tilted = JetPoint::new(vec![0.0, 0.0], vec![0.0], vec![vec![1.0, 1.0]]).unwrap();
        let h = hessian(&th, &tilted).unwrap();
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        assert!((det - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(h[0][1], h[1][0]);
    }

    #[test]
    fn regularity_minimal_surface_and_affine() {
        let th = minimal_surface();
        let grid = GridSpec::new(vec![
            Axis::new("x1", 0.0, 0.0, 1).unwrap(),
            Axis::new("x2", 0.0, 0.0, 1).unwrap(),
            Axis::new("u1", 0.0, 0.0, 1).unwrap(),
            Axis::new("v1_1", -2.0, 2.0, 21).unwrap(),
            Axis::new("v1_2", -2.0, 2.0, 21).unwrap(),
        ]);
        let rep = regularity_check(&th, &grid, 1e-6).unwrap();
        assert!(rep.regular);
        assert!((rep.min_abs_det - 1.0 / 81.0).abs() < 1e-12);
        // Minimum at a |v|-corner.
        assert_eq!(rep.argmin[3].abs(), 2.0);
        assert_eq!(rep.argmin[4].abs(), 2.0);

        let affine = FieldTheorySpec::new(1, 1, parse("v1_1").unwrap()).unwrap();
        let grid1 = GridSpec::new(vec![
            Axis::new("x1", 0.0, 1.0, 3).unwrap(),
            Axis::new("u1", 0.0, 1.0, 3).unwrap(),
            Axis::new("v1_1", -1.0, 1.0, 3).unwrap(),
        ]);
        let rep = regularity_check(&affine, &grid1, 1e-6).unwrap();
        assert!(!rep.regular);
        assert_eq!(rep.min_abs_det, 0.0);
    }

    #[test]
    fn grid_points_conventions() {
        let g = GridSpec::new(vec![Axis::new("x1", 0.0, 1.0, 3).unwrap()]);
        let pts = grid_points(&g).unwrap();
        assert_eq!(pts, vec![vec![0.0], vec![0.5], vec![1.0]]);

        let g2 = GridSpec::new(vec![
            Axis::new("x1", 0.0, 1.0, 2).unwrap(),
            Axis::new("u1", 10.0, 11.0, 2).unwrap(),
        ]);
        let pts = grid_points(&g2).unwrap();
        assert_eq!(
            pts,
            vec![
                vec![0.0, 10.0],
                vec![0.0, 11.0],
                vec![1.0, 10.0],
                vec![1.0, 11.0]
            ]
        );

        let mid = GridSpec::new(vec![Axis::new("x1", 1.0, 3.0, 1).unwrap()]);
        assert_eq!(grid_points(&mid).unwrap(), vec![vec![2.0]]);

        let over = GridSpec::new(vec![Axis::new("x1", 0.0, 1.0, 100).unwrap()]).with_cap(10);
        match grid_points(&over) {
            Err(Error::CapExceeded { total, cap }) => {
                assert_eq!(total, 100);
                assert_eq!(cap, 10);
            }
            other => panic!("expected cap exceeded, got {other:?}"),
        }
    }

    struct ProductOp;

    impl ResidualOp for ProductOp {
        fn chart(&self) -> Chart {
            Chart::base(1, 1)
        }
        fn families(&self) -> Vec<FamilySpec> {
            vec![FamilySpec::new("product", vec!["x1*u1".into()], true)]
        }
        fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
            Ok(vec![vec![pt.x[0] * pt.u[0]]])
        }
    }

    #[test]
    fn grid_report_statistics() {
        let grid = GridSpec::new(vec![
            Axis::new("x1", 0.0, 1.0, 3).unwrap(),
            Axis::new("u1", -2.0, 2.0, 5).unwrap(),
        ]);
        let rep = grid_report(&ProductOp, &grid, 1e-9).unwrap();
        assert_eq!(rep.points, 15);
        assert_eq!(rep.evaluated, 15);
        assert_eq!(rep.skipped, 0);
        assert!(!rep.pass);
        let f = &rep.families[0];
        assert_eq!(f.max_abs, 2.0);
        // Row-major first maximum: x1=1 comes after x1=0 rows, u1=-2 first.
        assert_eq!(f.argmax, vec![1.0, -2.0]);
        // RMS over 15 samples: values x*u with x in {0,.5,1}, u in {-2..2}.
        let mut sumsq = 0.0f64;
        for x in [0.0, 0.5, 1.0] {
            for u in [-2.0, -1.0, 0.0, 1.0, 2.0] {
                sumsq += (x * u) * (x * u);
            }
        }
        assert!((f.rms - (sumsq / 15.0).sqrt()).abs() < 1e-15);
        assert!(f.max_abs >= f.rms);

        // Determinism across runs.
        let rep2 = grid_report(&ProductOp, &grid, 1e-9).unwrap();
        assert_eq!(rep.families[0].rms, rep2.families[0].rms);
        assert_eq!(rep.families[0].argmax, rep2.families[0].argmax);
    }

    struct FussyOp;

    impl ResidualOp for FussyOp {
        fn chart(&self) -> Chart {
            Chart::base(1, 1)
        }
        fn families(&self) -> Vec<FamilySpec> {
            vec![FamilySpec::new("guarded", vec!["r".into()], true)]
        }
        fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
            if pt.u[0] < 0.0 {
                return Err(Error::OutOfDomain(format!("u = {}", pt.u[0])));
            }
            Ok(vec![vec![pt.u[0]]])
        }
    }

    #[test]
    fn error_policies() {
        let grid = GridSpec::new(vec![
            Axis::new("x1", 0.0, 0.0, 1).unwrap(),
            Axis::new("u1", -1.0, 1.0, 5).unwrap(),
        ]);
        match grid_report(&FussyOp, &grid, 1e-9) {
            Err(Error::AtPoint { location, source }) => {
                assert_eq!(location, vec![0.0, -1.0]);
                assert!(matches!(*source, Error::OutOfDomain(_)));
            }
            other => panic!("expected located error, got {other:?}"),
        }
        let rep = grid_report_with(&FussyOp, &grid, 2.0, ErrorPolicy::Skip).unwrap();
        assert_eq!(rep.skipped, 2);
        assert_eq!(rep.evaluated, 3);
        assert!(rep.pass);
        assert_eq!(rep.families[0].max_abs, 1.0);
    }

    #[test]
    fn grid_must_cover_chart() {
        let grid = GridSpec::new(vec![Axis::new("x1", 0.0, 1.0, 3).unwrap()]);
        match grid_report(&ProductOp, &grid, 1e-9) {
            Err(Error::InvalidGrid(msg)) => assert!(msg.contains("u1"), "{msg}"),
            other => panic!("expected invalid grid, got {other:?}"),
        }
        let dup = GridSpec::new(vec![
            Axis::new("x1", 0.0, 1.0, 3).unwrap(),
            Axis::new("u1", 0.0, 1.0, 3).unwrap(),
            Axis::new("u", 0.0, 1.0, 3).unwrap(),
        ]);
        assert!(matches!(
            grid_report(&ProductOp, &dup, 1e-9),
            Err(Error::InvalidGrid(_))
        ));
    }

    struct SqrtGapOp;

    impl ResidualOp for SqrtGapOp {
        fn chart(&self) -> Chart {
            Chart::base(1, 1)
        }
        fn families(&self) -> Vec<FamilySpec> {
            vec![FamilySpec::new("gap", vec!["sqrt(0.5 - x1)".into()], true)]
        }
        fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
            Ok(vec![vec![(0.5 - pt.x[0]).sqrt()]])
        }
    }

    #[test]
    fn non_finite_residuals_leave_the_domain() {
        // x1 in {0, 0.25, …, 1}: the last two points produce NaN.
        let grid = GridSpec::new(vec![
            Axis::new("x1", 0.0, 1.0, 5).unwrap(),
            Axis::new("u1", 0.0, 0.0, 1).unwrap(),
        ]);
        match grid_report(&SqrtGapOp, &grid, 1e-9) {
            Err(Error::AtPoint { location, source }) => {
                assert_eq!(location, vec![0.75, 0.0]);
                assert!(matches!(*source, Error::OutOfDomain(_)));
            }
            other => panic!("expected an out-of-domain point, got {other:?}"),
        }
        let rep = grid_report_with(&SqrtGapOp, &grid, 1.0, ErrorPolicy::Skip).unwrap();
        assert_eq!(rep.evaluated, 3);
        assert_eq!(rep.skipped, 2);
        assert!(rep.pass);
        assert!(rep.families[0].rms.is_finite());
    }

    #[test]
    fn pairwise_sum_matches_exact() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn point_shape_validation() {
        assert!(JetPoint::new(vec![0.0], vec![0.0], vec![vec![0.0, 0.0]]).is_err());
        assert!(JetPoint::new(vec![0.0], vec![0.0], vec![vec![f64::NAN]]).is_err());
        assert!(RestrictedMomentumPoint::new(vec![0.0], vec![0.0, 1.0], vec![vec![0.0]]).is_err());
    }
}
