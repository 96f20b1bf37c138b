//! Field reconstruction: integrate the distribution attached to a jet-field
//! candidate to recover sections φ(x), check path independence, and verify
//! reconstructed sections against holonomy and the second-order
//! Euler-Lagrange equations with finite differences.

use rayon::prelude::*;

use crate::error::Error;
use crate::jet_core::{pairwise_sum, Axis, ChartPoint, FieldTheorySpec};
use crate::lag_residuals::JetField;

/// State cap for distribution integration; exceeding it aborts with
/// [`Error::BlowUp`].
pub const BLOWUP_CAP: f64 = 1e6;

/// Relative slack when matching the start point to a grid node.
const NODE_MATCH_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Section traces
// ---------------------------------------------------------------------------

/// How a trace was produced.
#[derive(Debug, Clone)]
pub struct TraceMeta {
    /// Integration method ("rk4") or "analytic" for closed-form fills.
    pub method: String,
    /// Axis order used by the dimension sweep (empty for analytic fills).
    pub sweep: Vec<usize>,
    /// Integration start point.
    pub x0: Vec<f64>,
    /// Field value at the start point.
    pub u0: Vec<f64>,
    /// Grid step per axis.
    pub step: Vec<f64>,
}

/// A field section φ sampled on a rectangular grid over the base space:
/// `values[point · n + α] = φ^α(x_point)`, row-major with the last axis
/// fastest.
#[derive(Debug, Clone)]
pub struct SectionTrace {
    axes: Vec<Axis>,
    n: usize,
    values: Vec<f64>,
    meta: TraceMeta,
}

impl SectionTrace {
    /// Samples a closed-form section on a grid (useful as a reference trace).
    pub fn from_fn(
        axes: Vec<Axis>,
        n: usize,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<SectionTrace, Error> {
        if axes.is_empty() || n == 0 {
            return Err(Error::InvalidParams(
                "a trace needs at least one axis and one component".into(),
            ));
        }
        let total: usize = axes.iter().map(|a| a.count).product();
        let mut values = Vec::with_capacity(total * n);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            let x: Vec<f64> = axes.iter().zip(&idx).map(|(a, k)| a.value(*k)).collect();
            let u = f(&x);
            if u.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "section returned {} components, trace has {n}",
                    u.len()
                )));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::OutOfDomain(format!(
                    "section is not finite at x = {x:?}"
                )));
            }
            values.extend_from_slice(&u);
            advance(&mut idx, &axes);
        }
        let x0: Vec<f64> = axes.iter().map(|a| a.value(0)).collect();
        let u0 = values[..n].to_vec();
        let step = axes.iter().map(Axis::step).collect();
        Ok(SectionTrace {
            axes,
            n,
            values,
            meta: TraceMeta {
                method: "analytic".into(),
                sweep: Vec::new(),
                x0,
                u0,
                step,
            },
        })
    }

    pub fn m(&self) -> usize {
        self.axes.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    /// Node count.
    pub fn points(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape())
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum()
    }

    /// Coordinates of a grid node.
    pub fn coords(&self, idx: &[usize]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(idx)
            .map(|(a, k)| a.value(*k))
            .collect()
    }

    /// φ at a grid node.
    pub fn value(&self, idx: &[usize]) -> &[f64] {
        let f = self.flat(idx);
        &self.values[f * self.n..(f + 1) * self.n]
    }

    /// Mutable φ at a grid node (fault injection, post-processing).
    pub fn value_mut(&mut self, idx: &[usize]) -> &mut [f64] {
        let f = self.flat(idx);
        &mut self.values[f * self.n..(f + 1) * self.n]
    }

    /// Writes the trace as CSV: header `x1,…,xm,u1,…,un`, one row per node,
    /// row-major, LF line endings.
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<(), Error> {
        let mut wtr = csv::Writer::from_writer(w);
        let header: Vec<String> = (1..=self.m())
            .map(|i| format!("x{i}"))
            .chain((1..=self.n).map(|a| format!("u{a}")))
            .collect();
        wtr.write_record(&header).map_err(csv_err)?;
        let mut idx = vec![0usize; self.m()];
        for p in 0..self.points() {
            let mut row: Vec<String> = self
                .coords(&idx)
                .iter()
                .map(|c| format!("{c}"))
                .collect();
            row.extend(
                self.values[p * self.n..(p + 1) * self.n]
                    .iter()
                    .map(|v| format!("{v}")),
            );
            wtr.write_record(&row).map_err(csv_err)?;
            advance(&mut idx, &self.axes);
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Advances a multi-index in row-major order (last axis fastest).
fn advance(idx: &mut [usize], axes: &[Axis]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < axes[k].count {
            return;
        }
        idx[k] = 0;
    }
}

impl Axis {
    fn step(&self) -> f64 {
        if self.count > 1 {
            (self.hi - self.lo) / (self.count - 1) as f64
        } else {
            0.0
        }
    }
}

// ---------------------------------------------------------------------------
// Distribution integration
// ---------------------------------------------------------------------------

/// Integrates `∂φ^α/∂x^i = ψ_i^α(x, φ(x))` over a box with classical RK4,
/// one axis at a time in `sweep` order: the first axis fills the line through
/// `x0`, each later axis fans out from everything already filled. For m = 1
/// this is ordinary ODE integration. `steps[i]` is the number of grid
/// intervals along axis i, and `x0` must sit on the resulting grid.
pub fn integrate_distribution(
    psi: &JetField,
    x0: &[f64],
    u0: &[f64],
    bounds: &[(f64, f64)],
    steps: &[usize],
    sweep: &[usize],
) -> Result<SectionTrace, Error> {
    let (m, n) = (psi.m(), psi.n());
    if x0.len() != m || bounds.len() != m || steps.len() != m || u0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "jet field over (m, n) = ({m}, {n}): need x0[{m}], bounds[{m}], steps[{m}], u0[{n}]"
        )));
    }
    let mut seen = vec![false; m];
    for &a in sweep {
        if a >= m || seen[a] {
            return Err(Error::InvalidParams(format!(
                "sweep order must be a permutation of the {m} axes, got {sweep:?}"
            )));
        }
        seen[a] = true;
    }
    if sweep.len() != m {
        return Err(Error::InvalidParams(format!(
            "sweep order must be a permutation of the {m} axes, got {sweep:?}"
        )));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("u0 must be finite".into()));
    }

    let mut axes = Vec::with_capacity(m);
    let mut i0 = Vec::with_capacity(m);
    for (i, (&(lo, hi), &k)) in bounds.iter().zip(steps).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || k == 0 {
            return Err(Error::InvalidGrid(format!(
                "axis {}: need lo < hi and steps ≥ 1, got [{lo}, {hi}] with {k} steps",
                i + 1
            )));
        }
        let axis = Axis::new(&format!("x{}", i + 1), lo, hi, k + 1)?;
        let h = axis.step();
        let pos = (x0[i] - lo) / h;
        let node = pos.round();
        if node < 0.0 || node > k as f64 || (pos - node).abs() * h.abs() > NODE_MATCH_TOL * h.abs().max(1.0)
        {
            return Err(Error::InvalidGrid(format!(
                "x0[{}] = {} is not a grid node of [{lo}, {hi}] with step {h}",
                i + 1,
                x0[i]
            )));
        }
        i0.push(node as usize);
        axes.push(axis);
    }

    let shape: Vec<usize> = axes.iter().map(|a| a.count).collect();
    let strides = strides_of(&shape);
    let total: usize = shape.iter().product();
    let mut values = vec![f64::NAN; total * n];
    let start_flat: usize = i0.iter().zip(&strides).map(|(i, s)| i * s).sum();
    values[start_flat * n..(start_flat + 1) * n].copy_from_slice(u0);

    for (stage, &axis_k) in sweep.iter().enumerate() {
        // Start nodes: every filled point of the span of the previous axes.
        let mut starts: Vec<Vec<usize>> = vec![i0.clone()];
        for &prev in &sweep[..stage] {
            let mut wider = Vec::with_capacity(starts.len() * shape[prev]);
            for s in &starts {
                for t in 0..shape[prev] {
                    let mut s = s.clone();
                    s[prev] = t;
                    wider.push(s);
                }
            }
            starts = wider;
        }

        let axis = &axes[axis_k];
        let h = axis.step();
        let lines: Vec<Result<Vec<f64>, Error>> = starts
            .par_iter()
            .map(|start| {
                let flat: usize = start.iter().zip(&strides).map(|(i, s)| i * s).sum();
                let seed = &values[flat * n..(flat + 1) * n];
                let x: Vec<f64> = axes.iter().zip(start).map(|(a, k)| a.value(*k)).collect();
                integrate_line(psi, &x, axis_k, axis.lo, h, shape[axis_k], i0[axis_k], seed)
            })
            .collect();
        for (start, line) in starts.iter().zip(lines) {
            let line = line?;
            let mut node = start.clone();
            for t in 0..shape[axis_k] {
                node[axis_k] = t;
                let flat: usize = node.iter().zip(&strides).map(|(i, s)| i * s).sum();
                values[flat * n..(flat + 1) * n].copy_from_slice(&line[t * n..(t + 1) * n]);
            }
        }
    }

    Ok(SectionTrace {
        n,
        meta: TraceMeta {
            method: "rk4".into(),
            sweep: sweep.to_vec(),
            x0: x0.to_vec(),
            u0: u0.to_vec(),
            step: axes.iter().map(Axis::step).collect(),
        },
        axes,
        values,
    })
}

/// One bidirectional RK4 line along `axis` through the seed node.
fn integrate_line(
    psi: &JetField,
    x: &[f64],
    axis: usize,
    lo: f64,
    h: f64,
    count: usize,
    seed_node: usize,
    seed: &[f64],
) -> Result<Vec<f64>, Error> {
    let n = seed.len();
    let mut line = vec![0.0; count * n];
    line[seed_node * n..(seed_node + 1) * n].copy_from_slice(seed);
    let mut march = |from: usize, to_exclusive: isize, dir: isize| -> Result<(), Error> {
        let mut t = from as isize;
        let mut u = line[from * n..(from + 1) * n].to_vec();
        while t != to_exclusive {
            let s = lo + t as f64 * h;
            u = rk4_step(psi, x, axis, s, (dir as f64) * h, &u)?;
            t += dir;
            check_state(&u, x, axis, lo + t as f64 * h)?;
            line[(t as usize) * n..(t as usize + 1) * n].copy_from_slice(&u);
        }
        Ok(())
    };
    march(seed_node, count as isize - 1, 1)?;
    march(seed_node, 0, -1)?;
    Ok(line)
}

fn rk4_step(
    psi: &JetField,
    x: &[f64],
    axis: usize,
    s: f64,
    dt: f64,
    u: &[f64],
) -> Result<Vec<f64>, Error> {
    let f = |s: f64, u: &[f64]| -> Result<Vec<f64>, Error> {
        let mut xs = x.to_vec();
        xs[axis] = s;
        let vals = psi.values(&xs, u)?;
        Ok(vals.iter().map(|row| row[axis]).collect())
    };
    let k1 = f(s, u)?;
    let u2: Vec<f64> = u.iter().zip(&k1).map(|(u, k)| u + 0.5 * dt * k).collect();
    let k2 = f(s + 0.5 * dt, &u2)?;
    let u3: Vec<f64> = u.iter().zip(&k2).map(|(u, k)| u + 0.5 * dt * k).collect();
    let k3 = f(s + 0.5 * dt, &u3)?;
    let u4: Vec<f64> = u.iter().zip(&k3).map(|(u, k)| u + dt * k).collect();
    let k4 = f(s + dt, &u4)?;
    Ok((0..u.len())
        .map(|b| u[b] + dt * (k1[b] + 2.0 * k2[b] + 2.0 * k3[b] + k4[b]) / 6.0)
        .collect())
}

fn check_state(u: &[f64], x: &[f64], axis: usize, s: f64) -> Result<(), Error> {
    let mut xs = x.to_vec();
    xs[axis] = s;
    let norm = u.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !norm.is_finite() {
        return Err(Error::OutOfDomain(format!(
            "integration state is not finite at x = {xs:?}"
        )));
    }
    if norm > BLOWUP_CAP {
        return Err(Error::BlowUp { location: xs, norm });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Path independence
// ---------------------------------------------------------------------------

/// Result of comparing two sweep orders.
#[derive(Debug, Clone)]
pub struct PathIndependenceReport {
    /// Max over the grid of ‖φ_orderA − φ_orderB‖∞.
    pub max_discrepancy: f64,
    /// Node where the discrepancy peaks.
    pub argmax: Vec<f64>,
    pub tol: f64,
    pub pass: bool,
}

/// Integrates from the lower corner of the box under two sweep orders
/// (lexicographic and reverse-lexicographic) and reports the worst pointwise
/// disagreement — a numerical witness for the involutivity of Ψ's
/// distribution. Needs m ≥ 2.
pub fn path_independence_check(
    psi: &JetField,
    bounds: &[(f64, f64)],
    u0: &[f64],
    steps: &[usize],
    tol: f64,
) -> Result<PathIndependenceReport, Error> {
    let m = psi.m();
    if m < 2 {
        return Err(Error::InvalidParams(
            "path independence compares sweep orders, which needs m ≥ 2".into(),
        ));
    }
    if bounds.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "jet field has m = {m}, box has {} axes",
            bounds.len()
        )));
    }
    let x0: Vec<f64> = bounds.iter().map(|(lo, _)| *lo).collect();
    let forward: Vec<usize> = (0..m).collect();
    let backward: Vec<usize> = (0..m).rev().collect();
    let a = integrate_distribution(psi, &x0, u0, bounds, steps, &forward)?;
    let b = integrate_distribution(psi, &x0, u0, bounds, steps, &backward)?;

    let mut worst = 0.0f64;
    let mut argmax_flat = 0usize;
    for (p, (va, vb)) in a.values.chunks(a.n).zip(b.values.chunks(b.n)).enumerate() {
        let d = va
            .iter()
            .zip(vb)
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        if d > worst {
            worst = d;
            argmax_flat = p;
        }
    }
    let mut idx = vec![0usize; m];
    let shape = a.shape();
    let strides = strides_of(&shape);
    let mut rem = argmax_flat;
    for k in 0..m {
        idx[k] = rem / strides[k];
        rem %= strides[k];
    }
    Ok(PathIndependenceReport {
        max_discrepancy: worst,
        argmax: a.coords(&idx),
        tol,
        pass: worst < tol,
    })
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

/// Central-difference order for first derivatives of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdOrder {
    /// (φ[+1] − φ[−1]) / 2h — the default.
    Two,
    /// (−φ[+2] + 8φ[+1] − 8φ[−1] + φ[−2]) / 12h — for convergence probes
    /// where the O(h²) stencil error would mask the integrator's own order.
    Four,
}

impl FdOrder {
    fn offset(self) -> usize {
        match self {
            FdOrder::Two => 1,
            FdOrder::Four => 2,
        }
    }
}

/// A residual field sampled on the interior nodes of a trace.
#[derive(Debug, Clone)]
pub struct FieldResidual {
    pub max_abs: f64,
    pub rms: f64,
    /// Coordinates of the worst interior node.
    pub argmax: Vec<f64>,
    /// Max |component| per interior node, row-major over `interior_shape`.
    pub per_point: Vec<f64>,
    /// Interior grid shape (each axis shrunk by `2 · interior_offset`).
    pub interior_shape: Vec<usize>,
    /// Nodes stripped from each side of every axis.
    pub interior_offset: usize,
    /// Residual components per node.
    pub components: usize,
}

impl FieldResidual {
    /// Value at an interior node (indices relative to the interior block).
    pub fn at(&self, idx: &[usize]) -> f64 {
        let strides = strides_of(&self.interior_shape);
        let flat: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.per_point[flat]
    }
}

fn assemble_residual(
    trace: &SectionTrace,
    offset: usize,
    components: usize,
    rows: Vec<(f64, f64)>,
    interior_shape: Vec<usize>,
) -> FieldResidual {
    let mut per_point = Vec::with_capacity(rows.len());
    let mut sq = Vec::with_capacity(rows.len());
    let mut max_abs = 0.0f64;
    let mut argmax_flat = 0usize;
    for (p, (mx, ss)) in rows.into_iter().enumerate() {
        if mx > max_abs {
            max_abs = mx;
            argmax_flat = p;
        }
        per_point.push(mx);
        sq.push(ss);
    }
    let total = per_point.len() * components;
    let rms = if total > 0 {
        (pairwise_sum(&sq) / total as f64).sqrt()
    } else {
        0.0
    };
    let strides = strides_of(&interior_shape);
    let mut idx = vec![0usize; interior_shape.len()];
    let mut rem = argmax_flat;
    for k in 0..interior_shape.len() {
        idx[k] = rem / strides[k] + offset;
        rem %= strides[k];
    }
    FieldResidual {
        max_abs,
        rms,
        argmax: trace.coords(&idx),
        per_point,
        interior_shape,
        interior_offset: offset,
        components,
    }
}

fn interior_of(trace: &SectionTrace, offset: usize) -> Result<(Vec<usize>, usize), Error> {
    let mut shape = Vec::with_capacity(trace.m());
    for axis in trace.axes() {
        if axis.count < 2 * offset + 1 {
            return Err(Error::InvalidGrid(format!(
                "axis {} has {} nodes; interior differences with offset {offset} need ≥ {}",
                axis.name,
                axis.count,
                2 * offset + 1
            )));
        }
        shape.push(axis.count - 2 * offset);
    }
    let total = shape.iter().product();
    Ok((shape, total))
}

/// Decodes an interior flat index into a full-grid multi-index.
fn interior_index(flat: usize, interior_shape: &[usize], offset: usize) -> Vec<usize> {
    let strides = strides_of(interior_shape);
    let mut idx = vec![0usize; interior_shape.len()];
    let mut rem = flat;
    for k in 0..interior_shape.len() {
        idx[k] = rem / strides[k] + offset;
        rem %= strides[k];
    }
    idx
}

/// Central-difference first derivatives minus ψ(x, φ(x)), interior nodes
/// only, with the default second-order stencil.
pub fn holonomy_residual(trace: &SectionTrace, psi: &JetField) -> Result<FieldResidual, Error> {
    holonomy_residual_with(trace, psi, FdOrder::Two)
}

/// [`holonomy_residual`] with a chosen stencil order.
pub fn holonomy_residual_with(
    trace: &SectionTrace,
    psi: &JetField,
    order: FdOrder,
) -> Result<FieldResidual, Error> {
    if psi.m() != trace.m() || psi.n() != trace.n() {
        return Err(Error::DimensionMismatch(format!(
            "jet field has (m, n) = ({}, {}), trace has ({}, {})",
            psi.m(),
            psi.n(),
            trace.m(),
            trace.n()
        )));
    }
    let offset = order.offset();
    let (interior_shape, interior_total) = interior_of(trace, offset)?;
    let (m, n) = (trace.m(), trace.n());
    let strides = trace.strides();
    let steps: Vec<f64> = trace.axes().iter().map(Axis::step).collect();

    let rows: Vec<Result<(f64, f64), Error>> = (0..interior_total)
        .into_par_iter()
        .map(|fi| {
            let idx = interior_index(fi, &interior_shape, offset);
            let flat = trace.flat(&idx);
            let x = trace.coords(&idx);
            let u = &trace.values[flat * n..(flat + 1) * n];
            let psi_vals = psi.values(&x, u)?;
            let mut mx = 0.0f64;
            let mut ss = 0.0f64;
            for b in 0..n {
                for i in 0..m {
                    let fd = match order {
                        FdOrder::Two => {
                            let up = trace.values[(flat + strides[i]) * n + b];
                            let dn = trace.values[(flat - strides[i]) * n + b];
                            (up - dn) / (2.0 * steps[i])
                        }
                        FdOrder::Four => {
                            let up2 = trace.values[(flat + 2 * strides[i]) * n + b];
                            let up1 = trace.values[(flat + strides[i]) * n + b];
                            let dn1 = trace.values[(flat - strides[i]) * n + b];
                            let dn2 = trace.values[(flat - 2 * strides[i]) * n + b];
                            (-up2 + 8.0 * up1 - 8.0 * dn1 + dn2) / (12.0 * steps[i])
                        }
                    };
                    let r = fd - psi_vals[b][i];
                    mx = mx.max(r.abs());
                    ss += r * r;
                }
            }
            Ok((mx, ss))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_residual(trace, offset, n * m, rows, interior_shape))
}

/// Second-order Euler-Lagrange residual along the prolongation of a trace:
/// `∂L/∂u^α − d/dx^i(∂L/∂v_i^α)` with the total derivative expanded through
/// finite-difference first and second derivatives of φ. Interior nodes only.
pub fn el_section_residual(
    theory: &FieldTheorySpec,
    trace: &SectionTrace,
) -> Result<FieldResidual, Error> {
    if theory.m() != trace.m() || theory.n() != trace.n() {
        return Err(Error::DimensionMismatch(format!(
            "theory has (m, n) = ({}, {}), trace has ({}, {})",
            theory.m(),
            theory.n(),
            trace.m(),
            trace.n()
        )));
    }
    let offset = 1usize;
    let (interior_shape, interior_total) = interior_of(trace, offset)?;
    let (m, n) = (trace.m(), trace.n());
    let strides = trace.strides();
    let steps: Vec<f64> = trace.axes().iter().map(Axis::step).collect();
    let at = |flat: usize, b: usize| trace.values[flat * n + b];

    let rows: Vec<Result<(f64, f64), Error>> = (0..interior_total)
        .into_par_iter()
        .map(|fi| {
            let idx = interior_index(fi, &interior_shape, offset);
            let flat = trace.flat(&idx);
            let x = trace.coords(&idx);
            let u = trace.values[flat * n..(flat + 1) * n].to_vec();

            // First derivatives ∂φ^b/∂x^i and second derivatives
            // ∂²φ^b/∂x^i∂x^j by central differences.
            let mut d1 = vec![vec![0.0; m]; n];
            let mut d2 = vec![vec![vec![0.0; m]; m]; n];
            for b in 0..n {
                for i in 0..m {
                    let up = at(flat + strides[i], b);
                    let dn = at(flat - strides[i], b);
                    d1[b][i] = (up - dn) / (2.0 * steps[i]);
                    d2[b][i][i] = (up - 2.0 * u[b] + dn) / (steps[i] * steps[i]);
                }
                for i in 0..m {
                    for j in (i + 1)..m {
                        let pp = at(flat + strides[i] + strides[j], b);
                        let pm = at(flat + strides[i] - strides[j], b);
                        let mp = at(flat - strides[i] + strides[j], b);
                        let mm = at(flat - strides[i] - strides[j], b);
                        let v = (pp - pm - mp + mm) / (4.0 * steps[i] * steps[j]);
                        d2[b][i][j] = v;
                        d2[b][j][i] = v;
                    }
                }
            }

            let cpt = ChartPoint {
                x,
                u,
                v: d1.clone(),
                p: Vec::new(),
                lam: Vec::new(),
            };
            let l = theory.l_bundle(&cpt)?;
            let mut mx = 0.0f64;
            let mut ss = 0.0f64;
            for a in 0..n {
                let mut r = l.l_u(a);
                for i in 0..m {
                    r -= l.l_vx(a, i, i);
                    for b in 0..n {
                        r -= d1[b][i] * l.l_vu(a, i, b);
                        for j in 0..m {
                            r -= d2[b][j][i] * l.l_vv(a, i, b, j);
                        }
                    }
                }
                mx = mx.max(r.abs());
                ss += r * r;
            }
            Ok((mx, ss))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_residual(trace, offset, n, rows, interior_shape))
}
