//! Generative invariants: parser/printer round-trips, derivative checks
//! against finite differences, Legendre consistency, solution-family
//! closure under the verification pipeline, and report determinism.

use proptest::prelude::*;

use mshj_core::expr::{BinaryOp, Expr, UnaryOp};
use mshj_core::{
    derive, equivalence_report, eval, grid_report, parse, pushforward_jetfield,
    restricted_legendre, Axis, Binding, DeriveOrder, EquivalenceVerdict, ExprAst,
    FieldTheorySpec, GridSpec, HamStandardSuite, HamiltonianSpec, JetField, JetPoint,
    LagCoefficients, LagStandardSuite, MomentumSection, NewtonSettings,
};

// ---------------------------------------------------------------------------
// AST generators
// ---------------------------------------------------------------------------

/// Variable pool: plain names, subscripted chart names, one function-shadowing
/// name (`exp` without a call is an ordinary identifier).
const VAR_POOL: &[&str] = &[
    "x", "y", "t", "q", "x1", "x2", "u1", "v1_2", "p1_1", "a_b", "exp",
];

fn any_unary() -> impl Strategy<Value = UnaryOp> {
    prop_oneof![
        Just(UnaryOp::Neg),
        Just(UnaryOp::Sin),
        Just(UnaryOp::Cos),
        Just(UnaryOp::Tan),
        Just(UnaryOp::Asin),
        Just(UnaryOp::Acos),
        Just(UnaryOp::Atan),
        Just(UnaryOp::Exp),
        Just(UnaryOp::Log),
        Just(UnaryOp::Sqrt),
        Just(UnaryOp::Abs),
    ]
}

fn any_binary() -> impl Strategy<Value = BinaryOp> {
    prop_oneof![
        Just(BinaryOp::Add),
        Just(BinaryOp::Sub),
        Just(BinaryOp::Mul),
        Just(BinaryOp::Div),
        Just(BinaryOp::Pow),
    ]
}

/// Applies a unary operator the way the parser would build it: negation of a
/// literal folds into a signed constant.
fn apply_unary(op: UnaryOp, a: ExprAst) -> ExprAst {
    match (op, a) {
        (UnaryOp::Neg, Expr::Const(c)) => Expr::Const(-c),
        (op, a) => Expr::Unary(op, Box::new(a)),
    }
}

/// Trees in the parser's image: any finite constants (printing uses the
/// shortest round-trip decimal form), pool variables, all operators.
fn canonical_ast() -> impl Strategy<Value = ExprAst> {
    let leaf = prop_oneof![
        (-1.0e6..1.0e6f64).prop_map(Expr::Const),
        (-4.0..4.0f64).prop_map(Expr::Const),
        (0u8..12).prop_map(|k| Expr::Const(k as f64)),
        proptest::sample::select(VAR_POOL).prop_map(|v| Expr::Var(v.to_string())),
    ];
    leaf.prop_recursive(6, 48, 2, |inner| {
        prop_oneof![
            (any_unary(), inner.clone()).prop_map(|(op, a)| apply_unary(op, a)),
            (any_binary(), inner.clone(), inner)
                .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
        ]
    })
}

/// Smooth well-conditioned trees for derivative comparisons: bounded
/// leaves, contraction-friendly functions, no division or exponentials, so
/// values and the first three derivatives stay moderate at any depth.
fn smooth_ast() -> impl Strategy<Value = ExprAst> {
    let leaf = prop_oneof![
        (-2.0..2.0f64).prop_map(Expr::Const),
        proptest::sample::select(&["x1", "x2", "x3"][..]).prop_map(|v| Expr::Var(v.to_string())),
    ];
    leaf.prop_recursive(3, 24, 2, |inner| {
        let func = prop_oneof![
            Just(UnaryOp::Neg),
            Just(UnaryOp::Sin),
            Just(UnaryOp::Cos),
            Just(UnaryOp::Atan),
        ];
        let op = prop_oneof![Just(BinaryOp::Add), Just(BinaryOp::Sub), Just(BinaryOp::Mul)];
        prop_oneof![
            (func, inner.clone()).prop_map(|(f, a)| apply_unary(f, a)),
            (op, inner.clone(), inner)
                .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
        ]
    })
}

fn full_binding(vals: &[f64; 3]) -> Binding {
    Binding::new()
        .with("x1", vals[0])
        .with("x2", vals[1])
        .with("x3", vals[2])
}

// ---------------------------------------------------------------------------
// Parser / printer
// ---------------------------------------------------------------------------

proptest! {
    /// Printing any parser-canonical tree and reparsing reproduces it
    /// structurally.
    #[test]
    fn print_parse_round_trip(e in canonical_ast()) {
        let printed = e.to_string();
        let reparsed = parse(&printed);
        prop_assert_eq!(reparsed.as_ref(), Ok(&e), "printed as {:?}", printed);
    }

    /// A second print/parse cycle is already a fixed point.
    #[test]
    fn printing_is_idempotent(e in canonical_ast()) {
        let once = e.to_string();
        let twice = parse(&once).unwrap().to_string();
        prop_assert_eq!(once, twice);
    }
}

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

proptest! {
    /// Forward-mode gradients agree with central finite differences to a
    /// relative 1e-6 on smooth expressions.
    #[test]
    fn gradient_matches_central_differences(
        e in smooth_ast(),
        vals in [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64],
    ) {
        let env = full_binding(&vals);
        let vars = ["x1", "x2", "x3"];
        let d = derive(&e, &env, &vars, DeriveOrder::First).unwrap();
        for (k, var) in vars.iter().enumerate() {
            let h = 6e-6 * vals[k].abs().max(1.0);
            let mut hi = vals; hi[k] += h;
            let mut lo = vals; lo[k] -= h;
            let fd = (eval(&e, &full_binding(&hi)).unwrap()
                - eval(&e, &full_binding(&lo)).unwrap())
                / (2.0 * h);
            let ad = d.gradient[k];
            prop_assert!(
                (ad - fd).abs() <= 1e-6 * ad.abs().max(1.0),
                "{var}: ad {ad} vs fd {fd} on {e}"
            );
        }
    }

    /// Second-order Hessians are exactly symmetric.
    #[test]
    fn hessian_is_exactly_symmetric(
        e in smooth_ast(),
        vals in [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64],
    ) {
        let env = full_binding(&vals);
        let d = derive(&e, &env, &["x1", "x2", "x3"], DeriveOrder::Second).unwrap();
        let h = d.hessian.unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!(
                    h[i][j] == h[j][i],
                    "H[{i}][{j}] = {} vs H[{j}][{i}] = {}",
                    h[i][j], h[j][i]
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Legendre transform
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    /// p = ∂L/∂v followed by the Newton inversion returns the jet point, and
    /// the momenta of the minimal-surface model always land in the open unit
    /// ball.
    #[test]
    fn legendre_inverts_on_minimal_surface(
        v1 in -3.0..3.0f64,
        v2 in -3.0..3.0f64,
        x1 in -1.0..1.0f64,
        u1 in -1.0..1.0f64,
    ) {
        let theory =
            FieldTheorySpec::new(2, 1, parse("sqrt(1 + v1_1^2 + v1_2^2)").unwrap()).unwrap();
        let jp = JetPoint::new(vec![x1, 0.25], vec![u1], vec![vec![v1, v2]]).unwrap();
        let mp = restricted_legendre(&theory, &jp).unwrap();
        let norm2: f64 = mp.p.iter().flatten().map(|p| p * p).sum();
        prop_assert!(norm2 < 1.0);
        let back = mshj_core::inverse_legendre(&theory, &mp, &NewtonSettings::default()).unwrap();
        for i in 0..2 {
            prop_assert!(
                (back.v[0][i] - jp.v[0][i]).abs() <= 1e-8 * jp.v[0][i].abs().max(1.0),
                "v[{i}]: {} vs {}", back.v[0][i], jp.v[0][i]
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Constant fields solve the autonomous standard problems
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    /// For an x- and u-independent Lagrangian, every constant jet field is a
    /// solution of the standard Lagrangian HJ problem, its pushforward solves
    /// the Hamiltonian one, and the equivalence verdict is pass-pass with no
    /// transported excess.
    #[test]
    fn constant_fields_solve_minimal_surface(
        c1 in -2.0..2.0f64,
        c2 in -2.0..2.0f64,
    ) {
        let theory =
            FieldTheorySpec::new(2, 1, parse("sqrt(1 + v1_1^2 + v1_2^2)").unwrap()).unwrap();
        let h =
            HamiltonianSpec::explicit(2, 1, parse("-sqrt(1 - p1_1^2 - p1_2^2)").unwrap()).unwrap();
        let psi = JetField::constant(2, 1, &[vec![c1, c2]]).unwrap();
        let grid = GridSpec::new(vec![
            Axis::new("x1", -1.0, 1.0, 4).unwrap(),
            Axis::new("x2", -1.0, 1.0, 4).unwrap(),
            Axis::new("u1", -1.0, 1.0, 4).unwrap(),
        ]);
        let lag = grid_report(&LagStandardSuite::new(&theory, &psi).unwrap(), &grid, 1e-10)
            .unwrap();
        prop_assert!(lag.pass, "lagrangian worst {}", lag.worst());

        let s = pushforward_jetfield(&theory, &psi).unwrap();
        let ham = grid_report(&HamStandardSuite::new(&h, &s).unwrap(), &grid, 1e-10).unwrap();
        prop_assert!(ham.pass, "hamiltonian worst {}", ham.worst());

        let rep = equivalence_report(
            &theory,
            &psi,
            &LagCoefficients::zero(2, 1),
            &mshj_core::HamCoefficients::zero(2, 1),
            &grid,
            1e-10,
        )
        .unwrap();
        prop_assert_eq!(rep.verdict, EquivalenceVerdict::PassPass);
        prop_assert_eq!(rep.transport.ham_excess, 0.0);
        prop_assert_eq!(rep.transport.lag_excess, 0.0);
    }
}

// ---------------------------------------------------------------------------
// Report invariants
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    /// Grid sweeps are deterministic (bitwise) and every family satisfies
    /// max ≥ rms up to the documented pairwise-summation slack.
    #[test]
    fn grid_reports_are_deterministic(
        a in -1.5..1.5f64,
        b in -1.5..1.5f64,
        c in -1.5..1.5f64,
        nx in 2usize..6,
        nu in 2usize..6,
    ) {
        let theory =
            FieldTheorySpec::new(2, 1, parse("sqrt(1 + v1_1^2 + v1_2^2)").unwrap()).unwrap();
        let psi = JetField::new(2, 1, vec![vec![
            parse(&format!("{a} + {b}*u1")).unwrap(),
            parse(&format!("{c}*x1")).unwrap(),
        ]]).unwrap();
        let suite = LagStandardSuite::new(&theory, &psi).unwrap();
        let grid = GridSpec::new(vec![
            Axis::new("x1", -1.0, 1.0, nx).unwrap(),
            Axis::new("x2", -1.0, 1.0, 3).unwrap(),
            Axis::new("u1", -1.0, 1.0, nu).unwrap(),
        ]);
        let r1 = grid_report(&suite, &grid, 1e-9).unwrap();
        let r2 = grid_report(&suite, &grid, 1e-9).unwrap();
        prop_assert_eq!(r1.pass, r2.pass);
        for (f1, f2) in r1.families.iter().zip(&r2.families) {
            prop_assert_eq!(f1.max_abs, f2.max_abs);
            prop_assert_eq!(f1.rms, f2.rms);
            prop_assert_eq!(&f1.argmax, &f2.argmax);
            prop_assert_eq!(&f1.argmax_component, &f2.argmax_component);
            prop_assert!(f1.rms <= f1.max_abs * (1.0 + 1e-13));
        }
    }
}

// ---------------------------------------------------------------------------
// Pullback / pushforward closure
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    /// Pushforward after pullback is the identity on sections with momenta
    /// inside the regularity domain.
    #[test]
    fn section_round_trip(
        s1 in -0.65..0.65f64,
        s2 in -0.65..0.65f64,
        x1 in -1.0..1.0f64,
        u1 in -1.0..1.0f64,
    ) {
        let theory =
            FieldTheorySpec::new(2, 1, parse("sqrt(1 + v1_1^2 + v1_2^2)").unwrap()).unwrap();
        // |s| ≤ 0.92 < 1 over the whole box.
        let s = MomentumSection::constant(2, 1, &[vec![s1, s2]]).unwrap();
        let psi = mshj_core::pullback_section(&theory, &s, &NewtonSettings::default()).unwrap();
        let back = pushforward_jetfield(&theory, &psi).unwrap();
        let got = back.values(&[x1, -0.5], &[u1]).unwrap();
        prop_assert!((got[0][0] - s1).abs() < 1e-8, "{} vs {s1}", got[0][0]);
        prop_assert!((got[0][1] - s2).abs() < 1e-8, "{} vs {s2}", got[0][1]);
    }
}
