//! The four commands behind the `mshj` binary.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::PathBuf;

use mshj_core::{
    complete_solution_check, el_section_residual, equivalence_report, grid_report_with,
    holonomy_residual, integrate_distribution, inverse_legendre, path_independence_check,
    regularity_check, restricted_legendre, Axis, Chart, CompleteSolutionFamily,
    EquivalenceVerdict, FamilySide, FieldTheorySpec, GridSpec, HamClassicSuite,
    HamGeneralizedSuite, HamStandardSuite, JetField, JetPoint, LagClassicSuite,
    LagGeneralizedSuite, LagStandardSuite, NewtonSettings, ResidualOp, Slot,
};

use crate::config::{self, Candidate, CliError, Loaded};
use crate::render::{self, coords_line, io_err, residual_report_text};
use crate::{Common, Mode, Side};

pub struct Ctx {
    pub loaded: Loaded,
    pub csv: Option<PathBuf>,
    pub quiet: bool,
}

impl Ctx {
    pub fn build(common: &Common) -> Result<Ctx, CliError> {
        let text = fs::read_to_string(&common.config).map_err(|e| {
            CliError::config(format!("cannot read {}: {e}", common.config.display()))
        })?;
        Ok(Ctx {
            loaded: config::load(&text, common.tol, common.grid_scale)?,
            csv: common.csv.clone(),
            quiet: common.quiet,
        })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn pick_jetfield<'a>(
    loaded: &'a Loaded,
    requested: Option<&str>,
) -> Result<&'a JetField, CliError> {
    match loaded.pick(
        "jetfield",
        |c| matches!(c, Candidate::JetField(_)),
        requested,
    )? {
        Candidate::JetField(psi) => Ok(psi),
        _ => unreachable!("pick enforces the kind"),
    }
}

// ---------------------------------------------------------------------------
// check-theory
// ---------------------------------------------------------------------------

/// A jet-chart sample grid for regularity and round-trip diagnostics: base
/// axes come from the run grid (capped at 9 nodes each), velocity axes are
/// taken from the run grid where present and default to [-2, 2] with 9 nodes.
fn regularity_grid(loaded: &Loaded, theory: &FieldTheorySpec) -> Result<GridSpec, CliError> {
    let chart = theory.jet_chart();
    let mut resolved: Vec<(Slot, Axis)> = Vec::new();
    if let Ok(grid) = loaded.grid() {
        for ax in grid.axes() {
            if let Ok(slot) = chart.resolve(&ax.name) {
                resolved.push((slot, ax.clone()));
            }
        }
    }
    let mut axes = Vec::new();
    for slot in chart.slots() {
        let existing = resolved
            .iter()
            .find(|(s, _)| *s == slot)
            .map(|(_, a)| a.clone());
        let axis = match (existing, slot) {
            (Some(a), Slot::V(_, _)) => a,
            (Some(a), _) => Axis::new(&a.name, a.lo, a.hi, a.count.min(9))?,
            (None, Slot::V(_, _)) => Axis::new(&slot.to_string(), -2.0, 2.0, 9)?,
            (None, _) => Axis::new(&slot.to_string(), -1.0, 1.0, 9)?,
        };
        axes.push(axis);
    }
    Ok(GridSpec::new(axes))
}

/// Max |v - Leg⁻¹(Leg(v))| over up to 2048 evenly spaced grid samples.
fn round_trip(theory: &FieldTheorySpec, grid: &GridSpec) -> Result<(usize, f64), CliError> {
    let chart = theory.jet_chart();
    let slots = grid
        .axes()
        .iter()
        .map(|a| chart.resolve(&a.name))
        .collect::<Result<Vec<_>, _>>()?;
    let total = grid.total()?;
    let stride = total.div_ceil(2048).max(1);
    let settings = NewtonSettings::default();
    let (m, n) = (theory.m(), theory.n());
    let mut worst = 0.0f64;
    let mut samples = 0usize;
    let mut idx = 0usize;
    while idx < total {
        let coords = grid.coords(idx);
        let mut x = vec![0.0; m];
        let mut u = vec![0.0; n];
        let mut v = vec![vec![0.0; m]; n];
        for (slot, c) in slots.iter().zip(&coords) {
            match slot {
                Slot::X(i) => x[*i] = *c,
                Slot::U(a) => u[*a] = *c,
                Slot::V(a, i) => v[*a][*i] = *c,
                _ => {}
            }
        }
        let jet = JetPoint::new(x, u, v)?;
        let momentum = restricted_legendre(theory, &jet)?;
        let back = inverse_legendre(theory, &momentum, &settings)?;
        for a in 0..n {
            for i in 0..m {
                worst = worst.max((back.v[a][i] - jet.v[a][i]).abs());
            }
        }
        samples += 1;
        idx += stride;
    }
    Ok((samples, worst))
}

pub fn check_theory(ctx: &Ctx) -> Result<i32, CliError> {
    let loaded = &ctx.loaded;
    let theory = loaded.theory()?;
    let grid = regularity_grid(loaded, theory)?;
    let rep = regularity_check(theory, &grid, loaded.tol)?;
    ctx.say(format!(
        "theory `{}`: m = {}, n = {}",
        loaded.label, loaded.m, loaded.n
    ));
    if !rep.regular {
        ctx.say(format!(
            "regularity: NOT regular — min |det| = {:.6e} at ({}) over {} samples (threshold {:e})",
            rep.min_abs_det,
            coords_line(&rep.axes, &rep.argmin),
            rep.points,
            rep.tol
        ));
        ctx.say("verdict: FAIL");
        return Ok(1);
    }
    ctx.say(format!(
        "regularity: regular — min |det| = {:.6e} at ({}) over {} samples (threshold {:e})",
        rep.min_abs_det,
        coords_line(&rep.axes, &rep.argmin),
        rep.points,
        rep.tol
    ));
    let (samples, rt) = round_trip(theory, &grid)?;
    ctx.say(format!(
        "legendre round-trip: max |v - v'| = {:.6e} over {samples} samples",
        rt
    ));
    let pass = rt < loaded.tol;
    ctx.say(format!("verdict: {}", if pass { "PASS" } else { "FAIL" }));
    Ok(if pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

pub fn verify(
    ctx: &Ctx,
    side: Side,
    mode: Mode,
    candidate: Option<&str>,
) -> Result<i32, CliError> {
    let loaded = &ctx.loaded;
    if let Some(name) = candidate {
        if let Some(Candidate::Family {
            side: family_side,
            family,
            lambda_grid,
        }) = loaded.by_name(name)
        {
            return verify_family(ctx, side, name, *family_side, family, lambda_grid);
        }
    }

    let grid = loaded.grid()?;
    let hamiltonian;
    let op: Box<dyn ResidualOp> = match (side, mode) {
        (Side::Lagrangian, Mode::Generalized) => {
            let psi = pick_jetfield(loaded, candidate)?;
            let f = loaded.lag_coefficients()?;
            Box::new(LagGeneralizedSuite::new(loaded.theory()?, psi, &f)?)
        }
        (Side::Lagrangian, Mode::Standard) => {
            let psi = pick_jetfield(loaded, candidate)?;
            Box::new(LagStandardSuite::new(loaded.theory()?, psi)?)
        }
        (Side::Lagrangian, Mode::Classic) => {
            let psi = pick_jetfield(loaded, candidate)?;
            let Candidate::Generating(w) = loaded.pick(
                "generating",
                |c| matches!(c, Candidate::Generating(_)),
                None,
            )?
            else {
                unreachable!()
            };
            Box::new(LagClassicSuite::new(loaded.theory()?, psi, w)?)
        }
        (Side::Hamiltonian, Mode::Generalized) => {
            let Candidate::Section(s) =
                loaded.pick("section", |c| matches!(c, Candidate::Section(_)), candidate)?
            else {
                unreachable!()
            };
            let g = loaded.ham_coefficients()?;
            hamiltonian = loaded.hamiltonian_spec()?;
            Box::new(HamGeneralizedSuite::new(&hamiltonian, s, &g)?)
        }
        (Side::Hamiltonian, Mode::Standard) => {
            let Candidate::Section(s) =
                loaded.pick("section", |c| matches!(c, Candidate::Section(_)), candidate)?
            else {
                unreachable!()
            };
            hamiltonian = loaded.hamiltonian_spec()?;
            Box::new(HamStandardSuite::new(&hamiltonian, s)?)
        }
        (Side::Hamiltonian, Mode::Classic) => {
            let Candidate::Generating(w) = loaded.pick(
                "generating",
                |c| matches!(c, Candidate::Generating(_)),
                candidate,
            )?
            else {
                unreachable!()
            };
            hamiltonian = loaded.hamiltonian_spec()?;
            Box::new(HamClassicSuite::new(&hamiltonian, w)?)
        }
    };

    let rep = grid_report_with(op.as_ref(), grid, loaded.tol, loaded.policy)?;
    if let Some(path) = &ctx.csv {
        let file = BufWriter::new(File::create(path).map_err(io_err)?);
        let (rows, skipped) =
            render::write_point_csv(file, op.as_ref(), grid, loaded.policy)?;
        ctx.say(format!(
            "csv: {rows} rows written to {} ({skipped} points skipped)",
            path.display()
        ));
    }
    ctx.say(residual_report_text(
        &format!("suite {side}/{mode} on `{}`", loaded.label),
        &rep,
    ));
    Ok(if rep.pass { 0 } else { 1 })
}

fn verify_family(
    ctx: &Ctx,
    side: Side,
    name: &str,
    family_side: FamilySide,
    family: &CompleteSolutionFamily,
    lambda_grid: &GridSpec,
) -> Result<i32, CliError> {
    let loaded = &ctx.loaded;
    let matches = matches!(
        (side, family_side),
        (Side::Lagrangian, FamilySide::Lagrangian) | (Side::Hamiltonian, FamilySide::Hamiltonian)
    );
    if !matches {
        return Err(CliError::config(format!(
            "family `{name}` is declared for the {} side; rerun with --side {}",
            match family_side {
                FamilySide::Lagrangian => "lagrangian",
                FamilySide::Hamiltonian => "hamiltonian",
            },
            match family_side {
                FamilySide::Lagrangian => "lagrangian",
                FamilySide::Hamiltonian => "hamiltonian",
            }
        )));
    }
    let grid = loaded.grid()?;
    let rep = match family_side {
        FamilySide::Lagrangian => {
            complete_solution_check(loaded.theory()?, family, lambda_grid, grid, loaded.tol)?
        }
        FamilySide::Hamiltonian => {
            let h = loaded.hamiltonian_spec()?;
            complete_solution_check(&h, family, lambda_grid, grid, loaded.tol)?
        }
    };
    ctx.say(format!(
        "family `{name}` on `{}`: {} parameter slices pass ({} excluded by the constraint)",
        loaded.label, rep.lambda_slices, rep.skipped_lambda
    ));
    ctx.say(format!(
        "  worst slice residual {:.6e}, min |det dψ/dλ| {:.6e}",
        rep.worst_slice_residual, rep.min_abs_det
    ));
    ctx.say(format!(
        "  coverage: {} probes, max probe error {:.6e}",
        rep.probes, rep.max_probe_error
    ));
    ctx.say("verdict: PASS");
    Ok(0)
}

// ---------------------------------------------------------------------------
// equivalence
// ---------------------------------------------------------------------------

pub fn equivalence(ctx: &Ctx, candidate: Option<&str>) -> Result<i32, CliError> {
    let loaded = &ctx.loaded;
    let theory = loaded.theory()?;
    let grid = loaded.grid()?;
    let psi = match pick_jetfield(loaded, candidate) {
        Ok(psi) => psi,
        Err(e) => {
            let has_section = loaded
                .candidates
                .iter()
                .any(|(_, c)| matches!(c, Candidate::Section(_)));
            let has_jetfield = loaded
                .candidates
                .iter()
                .any(|(_, c)| matches!(c, Candidate::JetField(_)));
            if has_section && !has_jetfield {
                return Err(CliError::config(
                    "the equivalence check starts from a jet field, but only a momentum \
                     section is declared; declare the jet field candidate (or run \
                     `verify --side hamiltonian` on the section)",
                ));
            }
            return Err(e);
        }
    };
    let f = loaded.lag_coefficients()?;
    let g = loaded.ham_coefficients()?;
    let rep = equivalence_report(theory, psi, &f, &g, grid, loaded.tol)?;
    ctx.say(residual_report_text(
        &format!("lagrangian side on `{}`", loaded.label),
        &rep.lagrangian,
    ));
    ctx.say(residual_report_text(
        &format!("hamiltonian side on `{}`", loaded.label),
        &rep.hamiltonian,
    ));
    let t = &rep.transport;
    if t.ham_excess == 0.0 && t.lag_excess == 0.0 {
        ctx.say("transport bound (each side ≤ 10 × other + 1e-10): satisfied");
    } else {
        ctx.say(format!(
            "transport bound (each side ≤ 10 × other + 1e-10): EXCEEDED by {:.3e} (ham) / {:.3e} (lag)",
            t.ham_excess, t.lag_excess
        ));
    }
    ctx.say(format!("verdict: {}", rep.verdict));
    Ok(if rep.verdict == EquivalenceVerdict::PassPass {
        0
    } else {
        1
    })
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

pub fn reconstruct(
    ctx: &Ctx,
    candidate: Option<&str>,
    x0_flag: Option<&str>,
    u0_flag: Option<&str>,
) -> Result<i32, CliError> {
    let loaded = &ctx.loaded;
    let (m, n) = (loaded.m, loaded.n);
    let psi = pick_jetfield(loaded, candidate)?;

    let x0 = match x0_flag {
        Some(v) => config::val_f64_list("flag", "--x0", v)?,
        None => loaded.recon.x0.clone().ok_or_else(|| {
            CliError::config("no base point: pass --x0 or set x0 in [reconstruct]")
        })?,
    };
    let u0 = match u0_flag {
        Some(v) => config::val_f64_list("flag", "--u0", v)?,
        None => loaded.recon.u0.clone().ok_or_else(|| {
            CliError::config("no initial value: pass --u0 or set u0 in [reconstruct]")
        })?,
    };

    // The integration box: the grid's base axes in coordinate order.
    let grid = loaded.grid()?;
    let chart = Chart::base(m, n);
    let mut base_axes: Vec<Option<Axis>> = vec![None; m];
    for ax in grid.axes() {
        if let Ok(Slot::X(i)) = chart.resolve(&ax.name) {
            base_axes[i] = Some(ax.clone());
        }
    }
    let axes = base_axes
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            a.ok_or_else(|| {
                CliError::config(format!("the grid declares no axis for x{}", i + 1))
            })
        })
        .collect::<Result<Vec<Axis>, _>>()?;
    let bounds: Vec<(f64, f64)> = axes.iter().map(|a| (a.lo, a.hi)).collect();
    let steps: Vec<usize> = match &loaded.recon.steps {
        Some(s) => {
            if s.len() != m {
                return Err(CliError::config(format!(
                    "[reconstruct] steps needs {m} entries, got {}",
                    s.len()
                )));
            }
            s.clone()
        }
        None => axes.iter().map(|a| a.count.saturating_sub(1).max(1)).collect(),
    };
    let sweep: Vec<usize> = match &loaded.recon.sweep {
        Some(names) => {
            let mut order = Vec::with_capacity(names.len());
            for name in names {
                match chart.resolve(name) {
                    Ok(Slot::X(i)) => order.push(i),
                    _ => {
                        return Err(CliError::config(format!(
                            "[reconstruct] sweep: `{name}` is not a base coordinate"
                        )))
                    }
                }
            }
            order
        }
        None => (0..m).collect(),
    };

    let trace = integrate_distribution(psi, &x0, &u0, &bounds, &steps, &sweep)?;

    // The trace itself: to the --csv file, else to stdout.
    let csv_to_stdout = ctx.csv.is_none();
    match &ctx.csv {
        Some(path) => {
            let file = BufWriter::new(File::create(path).map_err(io_err)?);
            trace.to_csv(file)?;
        }
        None => {
            trace.to_csv(io::stdout().lock())?;
        }
    }
    // The verification summary: stdout normally, stderr when the CSV owns
    // stdout; --quiet drops it entirely.
    let note = |line: String| {
        if ctx.quiet {
            return;
        }
        if csv_to_stdout {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    };
    if let Some(path) = &ctx.csv {
        note(format!(
            "trace: {} points written to {}",
            trace.points(),
            path.display()
        ));
    } else {
        note(format!("trace: {} points", trace.points()));
    }

    let hol = holonomy_residual(&trace, psi)?;
    note(format!(
        "holonomy residual: max {:.6e}  rms {:.6e}",
        hol.max_abs, hol.rms
    ));
    if let Some(theory) = &loaded.theory {
        let el = el_section_residual(theory, &trace)?;
        note(format!(
            "euler-lagrange residual: max {:.6e}  rms {:.6e}",
            el.max_abs, el.rms
        ));
    }
    // Holonomy and Euler-Lagrange numbers above are finite-difference
    // diagnostics whose floor depends on the step size, so they do not gate.
    // Sweep disagreement is structural — the distribution is not integrable,
    // so no reconstruction exists — and that fails the run.
    let mut code = 0;
    if m >= 2 {
        let pi = path_independence_check(psi, &bounds, &u0, &steps, loaded.tol)?;
        note(format!(
            "path independence: max discrepancy {:.6e} (tolerance {:e}) — {}",
            pi.max_discrepancy,
            pi.tol,
            if pi.pass {
                "sweep orders agree"
            } else {
                "SWEEP ORDERS DISAGREE (non-integrable field)"
            }
        ));
        if !pi.pass {
            code = 1;
        }
    }
    Ok(code)
}
