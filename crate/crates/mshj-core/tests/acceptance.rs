//! Acceptance gate: ten end-to-end criteria covering the solution zoo, the
//! Legendre transform, the Lagrangian/Hamiltonian equivalence, the mechanics
//! coincidence, reconstruction, complete solution families, differentiation,
//! parsing, and structural counts.
//!
//! Each test prints one `criterion NN PASS/FAIL` line (shown with
//! `--nocapture`); the harness result line per test doubles as the verdict.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mshj_core::expr::{BinaryOp, Expr, UnaryOp};
use mshj_core::{
    builtin, complete_solution_check, derive, equivalence_report, eval, grid_report,
    integrate_distribution, inverse_legendre, parse, path_independence_check,
    restricted_legendre, Axis, Binding, ChartPoint, DeriveOrder, EquivalenceVerdict, ExprAst,
    FdOrder, HamClassicSuite, HamCoefficients, HamGeneralizedSuite, HamStandardSuite,
    HamiltonianSpec, JetField, JetPoint, LagClassicSuite, LagGeneralizedSuite,
    LagIntegrabilityOp, LagStandardSuite, ModelBundle, ModelParams, MomentumSection,
    NewtonSettings, QuadraticParams, ResidualOp, RestrictedMomentumPoint, SectionTrace,
};

fn verdict(id: u32, label: &str, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id:02} {word} — {label}: {detail}");
    assert!(pass, "criterion {id:02} ({label}) failed: {detail}");
}

fn p(src: &str) -> ExprAst {
    parse(src).expect("test expression parses")
}

fn harmonic_params() -> QuadraticParams {
    QuadraticParams::new(
        1,
        1,
        vec![vec![vec![vec![p("1")]]]],
        vec![vec![p("0")]],
        p("-0.5*u1^2"),
    )
    .unwrap()
}

fn zoo() -> Vec<ModelBundle> {
    vec![
        builtin("minimal_surface", ModelParams::None).unwrap(),
        builtin("nonautonomous", ModelParams::Lagrangian(p("0.5*v1_1^2"))).unwrap(),
        builtin("quadratic", ModelParams::Quadratic(harmonic_params())).unwrap(),
    ]
}

fn minimal_surface() -> ModelBundle {
    builtin("minimal_surface", ModelParams::None).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Zoo positives
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_zoo_positives() {
    let started = Instant::now();
    let tol = 1e-9;
    let mut worst = 0.0f64;
    let mut suites = 0usize;
    for bundle in zoo() {
        let h = bundle.hamiltonian.as_ref().expect("zoo model has closed-form H");
        for sol in &bundle.solutions {
            let psi = sol.psi.as_ref().unwrap();
            let s = sol.section.as_ref().unwrap();
            let w = sol.generating.as_ref().unwrap();
            let f = bundle.f_for(sol);
            let g = bundle.g_for(sol);
            let mut run = |name: &str, op: &dyn ResidualOp| {
                let rep = grid_report(op, &bundle.grid, tol).unwrap_or_else(|e| {
                    panic!("{}/{}/{name}: {e}", bundle.name, sol.name)
                });
                suites += 1;
                worst = worst.max(rep.worst());
                assert!(
                    rep.pass,
                    "{}/{}/{name}: worst residual {:e}",
                    bundle.name,
                    sol.name,
                    rep.worst()
                );
            };
            run(
                "lagrangian generalized",
                &LagGeneralizedSuite::new(&bundle.theory, psi, f).unwrap(),
            );
            run(
                "lagrangian standard",
                &LagStandardSuite::new(&bundle.theory, psi).unwrap(),
            );
            run(
                "lagrangian classic",
                &LagClassicSuite::new(&bundle.theory, psi, w).unwrap(),
            );
            run(
                "hamiltonian generalized",
                &HamGeneralizedSuite::new(h, s, g).unwrap(),
            );
            run("hamiltonian standard", &HamStandardSuite::new(h, s).unwrap());
            run("hamiltonian classic", &HamClassicSuite::new(h, w).unwrap());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        1,
        "zoo positives",
        suites == 54 && worst < tol && elapsed < 10.0,
        &format!(
            "9 members x 6 suites = {suites} runs, worst residual {worst:.3e} (< 1e-9), \
             elapsed {elapsed:.2} s (< 10 s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Zoo negatives
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_zoo_negatives() {
    let ms = minimal_surface();
    let psi_bad = JetField::new(2, 1, vec![vec![p("u1"), p("0")]]).unwrap();
    let gen = grid_report(
        &LagGeneralizedSuite::new(&ms.theory, &psi_bad, &ms.f_default).unwrap(),
        &ms.grid,
        1e-9,
    )
    .unwrap();
    let gen_max = gen.families[0].max_abs;

    let eq = equivalence_report(
        &ms.theory,
        &psi_bad,
        &ms.f_default,
        &ms.g_default,
        &ms.grid,
        1e-9,
    )
    .unwrap();

    verdict(
        2,
        "zoo negatives",
        gen_max > 1e-2 && !gen.pass && eq.verdict == EquivalenceVerdict::FailFail,
        &format!(
            "psi1=u generalized Lagrangian max {gen_max:.3e} (> 1e-2), equivalence verdict {:?}",
            eq.verdict
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Legendre round-trip and derived Hamiltonians
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_legendre_round_trip() {
    let settings = NewtonSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c65_6733);
    let mut worst_rt = 0.0f64;
    for bundle in zoo() {
        let (m, n) = (bundle.theory.m(), bundle.theory.n());
        let axes = bundle.grid.axes();
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..m).map(|i| rng.gen_range(axes[i].lo..=axes[i].hi)).collect();
            let u: Vec<f64> = (0..n)
                .map(|a| rng.gen_range(axes[m + a].lo..=axes[m + a].hi))
                .collect();
            let v: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let jp = JetPoint::new(x, u, v).unwrap();
            let mp = restricted_legendre(&bundle.theory, &jp).unwrap();
            let back = inverse_legendre(&bundle.theory, &mp, &settings).unwrap();
            for a in 0..n {
                for i in 0..m {
                    worst_rt = worst_rt.max((back.v[a][i] - jp.v[a][i]).abs());
                }
            }
        }
    }

    // Derived H against the closed forms.
    let mut worst_h = 0.0f64;
    let ms = minimal_surface();
    let ms_explicit = ms.hamiltonian.as_ref().unwrap();
    let ms_derived = HamiltonianSpec::derived(ms.theory.clone(), settings.clone());
    for _ in 0..10_000 {
        // Uniform over the disk |p| <= 0.9 by rejection.
        let (p1, p2) = loop {
            let p1 = rng.gen_range(-0.9..0.9);
            let p2 = rng.gen_range(-0.9..0.9);
            if p1 * p1 + p2 * p2 <= 0.81 {
                break (p1, p2);
            }
        };
        let mpt = RestrictedMomentumPoint::new(
            vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            vec![rng.gen_range(-1.0..1.0)],
            vec![vec![p1, p2]],
        )
        .unwrap();
        let explicit = mshj_core::hamiltonian(ms_explicit, &mpt).unwrap();
        let derived = mshj_core::hamiltonian(&ms_derived, &mpt).unwrap();
        worst_h = worst_h.max((explicit - derived).abs());
    }

    let q = builtin("quadratic", ModelParams::Quadratic(harmonic_params())).unwrap();
    let q_explicit = q.hamiltonian.as_ref().unwrap();
    let q_derived = HamiltonianSpec::derived(q.theory.clone(), settings.clone());
    for _ in 0..10_000 {
        let mpt = RestrictedMomentumPoint::new(
            vec![rng.gen_range(0.0..1.0)],
            vec![rng.gen_range(-2.0..2.0)],
            vec![vec![rng.gen_range(-5.0..5.0)]],
        )
        .unwrap();
        let explicit = mshj_core::hamiltonian(q_explicit, &mpt).unwrap();
        let derived = mshj_core::hamiltonian(&q_derived, &mpt).unwrap();
        worst_h = worst_h.max((explicit - derived).abs());
    }

    verdict(
        3,
        "Legendre round-trip",
        worst_rt < 1e-8 && worst_h < 1e-10,
        &format!(
            "30000 jet points round-trip to {worst_rt:.3e} (< 1e-8); derived H matches \
             closed forms to {worst_h:.3e} (< 1e-10)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Equivalence transport
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_equivalence() {
    let mut members = 0usize;
    for bundle in zoo() {
        for sol in &bundle.solutions {
            let rep = equivalence_report(
                &bundle.theory,
                sol.psi.as_ref().unwrap(),
                bundle.f_for(sol),
                bundle.g_for(sol),
                &bundle.grid,
                1e-9,
            )
            .unwrap();
            assert_eq!(
                rep.verdict,
                EquivalenceVerdict::PassPass,
                "{}/{}: verdict {:?}, lag worst {:e}, ham worst {:e}",
                bundle.name,
                sol.name,
                rep.verdict,
                rep.lagrangian.worst(),
                rep.hamiltonian.worst()
            );
            assert_eq!(rep.transport.ham_excess, 0.0, "{}/{}", bundle.name, sol.name);
            assert_eq!(rep.transport.lag_excess, 0.0, "{}/{}", bundle.name, sol.name);
            members += 1;
        }
    }

    let ms = minimal_surface();
    let psi_bad = JetField::new(2, 1, vec![vec![p("u1"), p("0")]]).unwrap();
    let neg = equivalence_report(
        &ms.theory,
        &psi_bad,
        &ms.f_default,
        &ms.g_default,
        &ms.grid,
        1e-9,
    )
    .unwrap();

    verdict(
        4,
        "equivalence",
        members == 9
            && neg.verdict == EquivalenceVerdict::FailFail
            && neg.transport.ham_excess == 0.0
            && neg.transport.lag_excess == 0.0,
        &format!(
            "9/9 positives pass-pass with zero transport excess; negative verdict {:?} \
             with transport bound 10x + 1e-10 satisfied (excess {:.1e}/{:.1e})",
            neg.verdict, neg.transport.ham_excess, neg.transport.lag_excess
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Mechanics coincidence of the two classic HJ equations
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_quadratic_coincidence() {
    let q = builtin("quadratic", ModelParams::Quadratic(harmonic_params())).unwrap();
    let h = q.hamiltonian.as_ref().unwrap();

    // Legendre-matched candidates: psi = dW/du (the metric is 1), both for
    // the bundled solutions and for two non-solutions.
    let mut candidates: Vec<(String, ExprAst, ExprAst)> = q
        .solutions
        .iter()
        .map(|sol| {
            let w = sol.generating.as_ref().unwrap().components()[0].clone();
            let psi = sol.psi.as_ref().unwrap().components().unwrap()[0][0].clone();
            (sol.name.clone(), w, psi)
        })
        .collect();
    candidates.push(("offset_parabola".into(), p("0.3*x1 + u1^2"), p("2*u1")));
    candidates.push((
        "bent_wave".into(),
        p("sin(u1) + 0.1*x1*u1"),
        p("cos(u1) + 0.1*x1"),
    ));

    let mut worst = 0.0f64;
    for (name, w_ast, psi_ast) in &candidates {
        let w = mshj_core::GeneratingForm::new(1, 1, vec![w_ast.clone()]).unwrap();
        let psi = JetField::new(1, 1, vec![vec![psi_ast.clone()]]).unwrap();
        let lag = LagClassicSuite::new(&q.theory, &psi, &w).unwrap();
        let ham = HamClassicSuite::new(h, &w).unwrap();
        let total = q.grid.total().unwrap();
        for idx in 0..total {
            let c = q.grid.coords(idx);
            let pt = ChartPoint::base(&c[..1], &c[1..]);
            let lag_scalar = lag.eval_at(&pt).unwrap()[0][0];
            let ham_scalar = ham.eval_at(&pt).unwrap()[0][0];
            let gap = (lag_scalar - ham_scalar).abs();
            worst = worst.max(gap);
            assert!(
                gap < 1e-9,
                "{name} at {c:?}: lagrangian-side {lag_scalar:e} vs hamiltonian-side {ham_scalar:e}"
            );
        }
    }

    verdict(
        5,
        "quadratic coincidence",
        worst < 1e-9,
        &format!(
            "{} Legendre-matched candidates agree pointwise to {worst:.3e} (< 1e-9) on 21x21",
            candidates.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Reconstruction
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_reconstruction() {
    let ms = minimal_surface();

    // (a) Constant field integrates to its plane.
    let psi_const = JetField::constant(2, 1, &[vec![0.5, 0.25]]).unwrap();
    let trace = integrate_distribution(
        &psi_const,
        &[0.0, 0.0],
        &[0.7],
        &[(-1.0, 1.0), (-1.0, 1.0)],
        &[40, 40],
        &[0, 1],
    )
    .unwrap();
    let mut plane_err = 0.0f64;
    for i in 0..=40usize {
        for j in 0..=40usize {
            let c = trace.coords(&[i, j]);
            let exact = 0.7 + 0.5 * c[0] + 0.25 * c[1];
            plane_err = plane_err.max((trace.value(&[i, j])[0] - exact).abs());
        }
    }

    // (b) Harmonic flow reproduces sin t at t = 1, h = 1e-3.
    let psi_flow = JetField::new(1, 1, vec![vec![p("sqrt(1 - u1^2)")]]).unwrap();
    let flow = integrate_distribution(&psi_flow, &[0.0], &[0.0], &[(0.0, 1.0)], &[1000], &[0])
        .unwrap();
    let sine_err = (flow.value(&[1000])[0] - 1.0f64.sin()).abs();

    // (c) The Scherk section satisfies the Euler-Lagrange residual at h = 1e-3.
    let scherk = SectionTrace::from_fn(
        vec![
            Axis::new("x1", -1.0, 1.0, 2001).unwrap(),
            Axis::new("x2", -1.0, 1.0, 2001).unwrap(),
        ],
        1,
        |x| vec![x[0].cos().ln() - x[1].cos().ln()],
    )
    .unwrap();
    let scherk_res = mshj_core::el_section_residual(&ms.theory, &scherk).unwrap();

    // (d) Halving the step reduces the holonomy residual at least 8x.
    let coarse = integrate_distribution(&psi_flow, &[0.0], &[0.0], &[(0.0, 0.9)], &[20], &[0])
        .unwrap();
    let fine = integrate_distribution(&psi_flow, &[0.0], &[0.0], &[(0.0, 0.9)], &[40], &[0])
        .unwrap();
    let rc = mshj_core::holonomy_residual_with(&coarse, &psi_flow, FdOrder::Four)
        .unwrap()
        .max_abs;
    let rf = mshj_core::holonomy_residual_with(&fine, &psi_flow, FdOrder::Four)
        .unwrap()
        .max_abs;
    let ratio = rc / rf;

    // (e) Path independence on the integrable zoo fields, path dependence on
    // the non-integrable counterexample built on psi1 = u.
    let mut indep = 0.0f64;
    for name in ["constants_zero", "constants_generic"] {
        let sol = ms.solution(name).unwrap();
        let rep = path_independence_check(
            sol.psi.as_ref().unwrap(),
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &[0.3],
            &[60, 60],
            1e-6,
        )
        .unwrap();
        assert!(rep.pass, "{name}: discrepancy {:e}", rep.max_discrepancy);
        indep = indep.max(rep.max_discrepancy);
    }
    // The separated pair as an exact one-form field (d of 0.1*x*y).
    let psi_sep = JetField::new(2, 1, vec![vec![p("0.1*x2"), p("0.1*x1")]]).unwrap();
    let sep = path_independence_check(&psi_sep, &[(0.0, 1.0), (0.0, 1.0)], &[0.0], &[1000, 1000], 1e-6)
        .unwrap();
    indep = indep.max(sep.max_discrepancy);
    let psi_curved = JetField::new(2, 1, vec![vec![p("u1"), p("0.3")]]).unwrap();
    let dep = path_independence_check(
        &psi_curved,
        &[(0.0, 1.0), (0.0, 1.0)],
        &[1.0],
        &[50, 50],
        1e-6,
    )
    .unwrap();

    let pass = plane_err < 1e-12
        && sine_err < 1e-6
        && scherk_res.max_abs < 1e-6
        && ratio >= 8.0
        && sep.pass
        && indep < 1e-6
        && dep.max_discrepancy > 1e-3;
    verdict(
        6,
        "reconstruction",
        pass,
        &format!(
            "plane {plane_err:.1e} (< 1e-12); sin(1) error {sine_err:.3e} (< 1e-6); Scherk EL \
             {:.3e} (< 1e-6); halving ratio {ratio:.1} (>= 8); path independence {indep:.3e} \
             (< 1e-6) vs counterexample {:.3e} (> 1e-3)",
            scherk_res.max_abs, dep.max_discrepancy
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Complete-solution family
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_complete_solution_family() {
    let ms = minimal_surface();
    let fam = ms.family("constants").unwrap();
    let rep = complete_solution_check(&ms.theory, &fam.family, &fam.lambda_grid, &ms.grid, 1e-9)
        .unwrap();

    // |det| = 1 at every admissible lambda sample, probed at several (x, u).
    let mut det_dev = 0.0f64;
    let total = fam.lambda_grid.total().unwrap();
    for idx in 0..total {
        let lam = fam.lambda_grid.coords(idx);
        if !fam.family.admits(&lam).unwrap() {
            continue;
        }
        for (x, u) in [([0.0, 0.0], 0.0), ([0.3, -0.4], 0.2), ([-0.9, 0.7], -0.6)] {
            let (_, det) = fam.family.lambda_jacobian(&lam, &x, &[u]).unwrap();
            det_dev = det_dev.max((det.abs() - 1.0).abs());
        }
    }

    let pass = rep.worst_slice_residual < 1e-9
        && rep.skipped_lambda > 0
        && det_dev < 1e-12
        && (rep.min_abs_det - 1.0).abs() < 1e-12
        && rep.probes == 100
        && rep.max_probe_error < 1e-8;
    verdict(
        7,
        "complete-solution family",
        pass,
        &format!(
            "{} disk slices pass (worst {:.1e}), {} corner points excluded, |det| = 1 \
             (max deviation {det_dev:.1e}), {} coverage probes recover targets to {:.3e} (< 1e-8)",
            rep.lambda_slices, rep.worst_slice_residual, rep.skipped_lambda, rep.probes,
            rep.max_probe_error
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Differentiation against finite differences
// ---------------------------------------------------------------------------

const SMOOTH_VARS: [&str; 3] = ["x1", "x2", "x3"];

fn random_smooth(rng: &mut ChaCha8Rng, depth: usize) -> ExprAst {
    if depth == 0 || rng.gen_bool(0.35) {
        return if rng.gen_bool(0.4) {
            Expr::Const(rng.gen_range(-2.0..2.0))
        } else {
            Expr::Var(SMOOTH_VARS[rng.gen_range(0..SMOOTH_VARS.len())].to_string())
        };
    }
    if rng.gen_bool(0.45) {
        let op = [UnaryOp::Neg, UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Atan]
            [rng.gen_range(0..4)];
        match (op, random_smooth(rng, depth - 1)) {
            (UnaryOp::Neg, Expr::Const(c)) => Expr::Const(-c),
            (op, a) => Expr::Unary(op, Box::new(a)),
        }
    } else {
        let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul][rng.gen_range(0..3)];
        Expr::Binary(
            op,
            Box::new(random_smooth(rng, depth - 1)),
            Box::new(random_smooth(rng, depth - 1)),
        )
    }
}

#[test]
fn criterion_08_ad_against_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6164_6664);
    let mut worst_rel = 0.0f64;
    let mut checks = 0usize;
    for _ in 0..100 {
        let e = random_smooth(&mut rng, 3);
        for _ in 0..20 {
            let vals = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let bind = |v: &[f64; 3]| {
                Binding::new()
                    .with("x1", v[0])
                    .with("x2", v[1])
                    .with("x3", v[2])
            };
            let d = derive(&e, &bind(&vals), &SMOOTH_VARS, DeriveOrder::Second).unwrap();
            for k in 0..3 {
                let h = 6e-6 * vals[k].abs().max(1.0);
                let mut hi = vals;
                hi[k] += h;
                let mut lo = vals;
                lo[k] -= h;
                let fd =
                    (eval(&e, &bind(&hi)).unwrap() - eval(&e, &bind(&lo)).unwrap()) / (2.0 * h);
                let rel = (d.gradient[k] - fd).abs() / d.gradient[k].abs().max(1.0);
                worst_rel = worst_rel.max(rel);
                assert!(rel < 1e-6, "{e}: dx{} ad {} vs fd {fd}", k + 1, d.gradient[k]);
            }
            let hess = d.hessian.as_ref().unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        hess[i][j] == hess[j][i],
                        "{e}: H[{i}][{j}] = {} vs H[{j}][{i}] = {}",
                        hess[i][j],
                        hess[j][i]
                    );
                }
            }
            checks += 1;
        }
    }
    verdict(
        8,
        "automatic differentiation",
        worst_rel < 1e-6 && checks == 2000,
        &format!(
            "100 expressions x 20 points: worst relative gradient error {worst_rel:.3e} \
             (< 1e-6), Hessian symmetry exact"
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Parser round-trip and precedence
// ---------------------------------------------------------------------------

const AST_VARS: [&str; 11] = [
    "x", "y", "t", "q", "x1", "x2", "u1", "v1_2", "p1_1", "a_b", "exp",
];

fn random_canonical(rng: &mut ChaCha8Rng, depth: usize) -> ExprAst {
    if depth == 0 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.55) {
            let c = match rng.gen_range(0u8..3) {
                0 => rng.gen_range(-1.0e6..1.0e6),
                1 => rng.gen_range(-4.0..4.0),
                _ => f64::from(rng.gen_range(0u8..12)),
            };
            Expr::Const(c)
        } else {
            Expr::Var(AST_VARS[rng.gen_range(0..AST_VARS.len())].to_string())
        };
    }
    if rng.gen_bool(0.4) {
        let op = [
            UnaryOp::Neg,
            UnaryOp::Sin,
            UnaryOp::Cos,
            UnaryOp::Tan,
            UnaryOp::Asin,
            UnaryOp::Acos,
            UnaryOp::Atan,
            UnaryOp::Exp,
            UnaryOp::Log,
            UnaryOp::Sqrt,
            UnaryOp::Abs,
        ][rng.gen_range(0..11)];
        // The parser folds negated literals into signed constants.
        match (op, random_canonical(rng, depth - 1)) {
            (UnaryOp::Neg, Expr::Const(c)) => Expr::Const(-c),
            (op, a) => Expr::Unary(op, Box::new(a)),
        }
    } else {
        let op = [
            BinaryOp::Add,
            BinaryOp::Sub,
            BinaryOp::Mul,
            BinaryOp::Div,
            BinaryOp::Pow,
        ][rng.gen_range(0..5)];
        Expr::Binary(
            op,
            Box::new(random_canonical(rng, depth - 1)),
            Box::new(random_canonical(rng, depth - 1)),
        )
    }
}

#[test]
fn criterion_09_parser() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7061_7273);
    for k in 0..500 {
        let e = random_canonical(&mut rng, 6);
        let printed = e.to_string();
        let reparsed = parse(&printed)
            .unwrap_or_else(|err| panic!("AST {k} printed as {printed:?}: {err}"));
        assert_eq!(reparsed, e, "AST {k} printed as {printed:?}");
    }
    let empty = Binding::new();
    let precedence = eval(&p("1+2*3"), &empty).unwrap();
    let power = eval(&p("2^3^2"), &empty).unwrap();
    verdict(
        9,
        "parser",
        precedence == 7.0 && power == 512.0,
        &format!(
            "500 random ASTs round-trip structurally; 1+2*3 = {precedence}, 2^3^2 = {power}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Structural counts
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_structural_counts() {
    // m = 1: the generalized Hamiltonian suite emits exactly n residual
    // components per point.
    let mut counts = Vec::new();
    for n in [1usize, 2, 3] {
        let terms: Vec<String> = (1..=n).map(|a| format!("0.5*p{a}_1^2")).collect();
        let h = HamiltonianSpec::explicit(1, n, p(&terms.join(" + "))).unwrap();
        let s = MomentumSection::constant(1, n, &vec![vec![0.25]; n]).unwrap();
        let g = HamCoefficients::zero(1, n);
        let fams = HamGeneralizedSuite::new(&h, &s, &g).unwrap().families();
        assert_eq!(fams.len(), 1);
        counts.push(fams[0].labels.len());
        assert_eq!(
            fams[0].labels.len(),
            n,
            "m=1, n={n}: expected exactly n components"
        );
    }

    // m = 2, n = 1: the Lagrangian integrability suite emits the antisymmetry
    // family (n*m*(m-1)/2 = 1 component) and the bracket family
    // (n*m*m*(m-1)/2 = 2 components).
    let ms = minimal_surface();
    let fams = LagIntegrabilityOp::new(&ms.theory, &ms.f_default)
        .unwrap()
        .families();
    let antisym = fams.iter().find(|f| f.name == "antisymmetry").unwrap();
    let bracket = fams.iter().find(|f| f.name == "bracket").unwrap();

    verdict(
        10,
        "structural counts",
        counts == vec![1, 2, 3] && antisym.labels.len() == 1 && bracket.labels.len() == 2,
        &format!(
            "m=1 generalized Hamiltonian components for n=1,2,3: {counts:?}; m=2,n=1 \
             integrability: antisymmetry {} component, bracket {} components",
            antisym.labels.len(),
            bracket.labels.len()
        ),
    );
}
