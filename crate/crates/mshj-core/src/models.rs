//! Built-in model zoo: a non-autonomous mechanical system, quadratic field
//! theories, and the minimal-surface equation, each bundled with its field
//! theory, closed-form Hamiltonian where one exists, canonical coefficient
//! tables, named solutions, complete-solution families, and a standard
//! verification grid.
//!
//! Extension point: new models are plain [`ModelBundle`] values — nothing in
//! the verification machinery is specific to the built-ins.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::equivalence::{CompleteSolutionFamily, FamilySide};
use crate::error::Error;
use crate::expr::{parse, ExprAst};
use crate::ham_residuals::{HamCoefficients, MomentumSection};
use crate::jet_core::{compile, eval_slot, Axis, Chart, ChartPoint, FieldTheorySpec, GridSpec, Slot};
use crate::lag_residuals::{GeneratingForm, JetField, LagCoefficients};
use crate::legendre::{HamiltonianSpec, NewtonSettings};
use crate::linalg::Lu;

/// Default verification tolerance for bundled solutions.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Sample count for validating the symmetry/invertibility of quadratic
/// coefficients.
const PARAM_SAMPLES: usize = 32;

// ---------------------------------------------------------------------------
// Quadratic model parameters
// ---------------------------------------------------------------------------

/// Coefficients of a quadratic Lagrangian
/// `L = ½ g^{ij}_{αβ} (v_i^α − Γ_i^α)(v_j^β − Γ_j^β) + V`:
/// a metric `g[α][i][β][j]` over `(x, u)` with the symmetry
/// `g^{ij}_{αβ} = g^{ji}_{βα}`, connection components `Γ[α][i]` over `x`
/// only, and a potential `V` over `(x, u)`.
#[derive(Debug, Clone)]
pub struct QuadraticParams {
    m: usize,
    n: usize,
    g: Vec<Vec<Vec<Vec<ExprAst>>>>,
    gamma: Vec<Vec<ExprAst>>,
    v: ExprAst,
}

impl QuadraticParams {
    pub fn new(
        m: usize,
        n: usize,
        g: Vec<Vec<Vec<Vec<ExprAst>>>>,
        gamma: Vec<Vec<ExprAst>>,
        v: ExprAst,
    ) -> Result<QuadraticParams, Error> {
        if g.len() != n
            || g.iter().any(|gi| {
                gi.len() != m
                    || gi
                        .iter()
                        .any(|gib| gib.len() != n || gib.iter().any(|r| r.len() != m))
            })
        {
            return Err(Error::InvalidParams(format!(
                "metric needs shape [{n}][{m}][{n}][{m}]"
            )));
        }
        if gamma.len() != n || gamma.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidParams(format!(
                "connection needs shape [{n}][{m}]"
            )));
        }
        let base = Chart::base(m, n);
        let g_c: Vec<Vec<Vec<Vec<crate::expr::Expr<Slot>>>>> = g
            .iter()
            .map(|gi| {
                gi.iter()
                    .map(|gib| {
                        gib.iter()
                            .map(|r| r.iter().map(|e| compile(e, &base)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<Vec<Vec<_>>>>, _>>()?;
        compile(&v, &base)?;
        for row in &gamma {
            for e in row {
                let c = compile(e, &base)?;
                let mut bad = false;
                c.for_each_var(&mut |s: &Slot| {
                    if !matches!(s, Slot::X(_)) {
                        bad = true;
                    }
                });
                if bad {
                    return Err(Error::InvalidParams(
                        "connection components may depend on the base coordinates only".into(),
                    ));
                }
            }
        }

        // Symmetry g^{ij}_{αβ} = g^{ji}_{βα} and invertibility, validated by
        // random sampling over the reference box [−1, 1]^{m+n}.
        let mut rng = ChaCha8Rng::seed_from_u64(0x7175_6164);
        let nm = n * m;
        for _ in 0..PARAM_SAMPLES {
            let pt = ChartPoint {
                x: (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
                u: (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
                v: Vec::new(),
                p: Vec::new(),
                lam: Vec::new(),
            };
            let mut mat = vec![0.0; nm * nm];
            for a in 0..n {
                for i in 0..m {
                    for b in 0..n {
                        for j in 0..m {
                            let here = eval_slot(&g_c[a][i][b][j], &pt)?;
                            let swapped = eval_slot(&g_c[b][j][a][i], &pt)?;
                            if (here - swapped).abs() > 1e-9 * here.abs().max(1.0) {
                                return Err(Error::InvalidParams(format!(
                                    "metric is not symmetric: g[{a}][{i}][{b}][{j}] = {here} but \
                                     g[{b}][{j}][{a}][{i}] = {swapped} at x = {:?}, u = {:?}",
                                    pt.x, pt.u
                                )));
                            }
                            mat[(a * m + i) * nm + (b * m + j)] = here;
                        }
                    }
                }
            }
            let det = Lu::factor(&mat, nm).det();
            if det.abs() < 1e-12 {
                return Err(Error::InvalidParams(format!(
                    "metric is singular (det = {det:.3e}) at x = {:?}, u = {:?}",
                    pt.x, pt.u
                )));
            }
        }
        Ok(QuadraticParams { m, n, g, gamma, v })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> &Vec<Vec<Vec<Vec<ExprAst>>>> {
        &self.g
    }

    pub fn connection(&self) -> &Vec<Vec<ExprAst>> {
        &self.gamma
    }

    pub fn potential(&self) -> &ExprAst {
        &self.v
    }

    /// The metric as a constant matrix (row `(α, i)` α-major), if every
    /// entry is free of variables.
    fn constant_metric(&self) -> Option<Vec<f64>> {
        let nm = self.n * self.m;
        let mut mat = vec![0.0; nm * nm];
        let origin = ChartPoint {
            x: vec![0.0; self.m],
            u: vec![0.0; self.n],
            v: Vec::new(),
            p: Vec::new(),
            lam: Vec::new(),
        };
        let base = Chart::base(self.m, self.n);
        for a in 0..self.n {
            for i in 0..self.m {
                for b in 0..self.n {
                    for j in 0..self.m {
                        let e = &self.g[a][i][b][j];
                        let mut has_var = false;
                        e.for_each_var(&mut |_| has_var = true);
                        if has_var {
                            return None;
                        }
                        let c = compile(e, &base).ok()?;
                        mat[(a * self.m + i) * nm + (b * self.m + j)] =
                            eval_slot(&c, &origin).ok()?;
                    }
                }
            }
        }
        Some(mat)
    }
}

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

/// A named candidate attached to a model: any subset of a jet field, a
/// momentum section, a generating form, and member-specific coefficient
/// tables (falling back to the bundle defaults when absent).
#[derive(Debug, Clone)]
pub struct NamedSolution {
    pub name: String,
    pub psi: Option<JetField>,
    pub section: Option<MomentumSection>,
    pub generating: Option<GeneratingForm>,
    /// Member-specific Lagrangian coefficients (else the bundle default).
    pub f: Option<LagCoefficients>,
    /// Member-specific Hamiltonian coefficients (else the bundle default).
    pub g: Option<HamCoefficients>,
}

/// A named complete-solution family with a default parameter grid.
#[derive(Debug, Clone)]
pub struct NamedFamily {
    pub name: String,
    pub family: CompleteSolutionFamily,
    pub lambda_grid: GridSpec,
}

/// A built-in model: field theory, closed-form Hamiltonian when available,
/// default coefficient tables, named solutions and families, and the
/// standard verification grid/tolerance.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub name: String,
    pub theory: FieldTheorySpec,
    /// Closed-form Hamiltonian, when the model has one.
    pub hamiltonian: Option<HamiltonianSpec>,
    pub f_default: LagCoefficients,
    pub g_default: HamCoefficients,
    pub solutions: Vec<NamedSolution>,
    pub families: Vec<NamedFamily>,
    /// Standard verification grid over the base chart (x, u).
    pub grid: GridSpec,
    pub tol: f64,
    /// Momentum-domain guard δ: Hamiltonian-side candidates are only
    /// meaningful where Σ (s_α^i)² ≤ 1 − δ (minimal surface only).
    pub momentum_guard: Option<f64>,
}

impl ModelBundle {
    /// The closed-form Hamiltonian if bundled, otherwise one derived from
    /// the theory via the Legendre map.
    pub fn hamiltonian_or_derived(&self, settings: &NewtonSettings) -> HamiltonianSpec {
        match &self.hamiltonian {
            Some(h) => h.clone(),
            None => HamiltonianSpec::derived(self.theory.clone(), settings.clone()),
        }
    }

    pub fn solution(&self, name: &str) -> Option<&NamedSolution> {
        self.solutions.iter().find(|s| s.name == name)
    }

    pub fn family(&self, name: &str) -> Option<&NamedFamily> {
        self.families.iter().find(|f| f.name == name)
    }

    /// The Lagrangian coefficients in force for a member.
    pub fn f_for<'a>(&'a self, sol: &'a NamedSolution) -> &'a LagCoefficients {
        sol.f.as_ref().unwrap_or(&self.f_default)
    }

    /// The Hamiltonian coefficients in force for a member.
    pub fn g_for<'a>(&'a self, sol: &'a NamedSolution) -> &'a HamCoefficients {
        sol.g.as_ref().unwrap_or(&self.g_default)
    }
}

/// Parameters for [`builtin`].
#[derive(Debug, Clone)]
pub enum ModelParams {
    /// For models that take nothing (minimal_surface).
    None,
    /// An explicit Lagrangian density (nonautonomous).
    Lagrangian(ExprAst),
    /// Quadratic coefficients (quadratic).
    Quadratic(QuadraticParams),
}

/// Constructs a built-in model bundle.
///
/// Names: `nonautonomous` (takes a Lagrangian L(t, q, v)), `quadratic`
/// (takes [`QuadraticParams`]), `minimal_surface` (takes no parameters).
pub fn builtin(name: &str, params: ModelParams) -> Result<ModelBundle, Error> {
    match (name, params) {
        ("minimal_surface", ModelParams::None) => minimal_surface(),
        ("nonautonomous", ModelParams::Lagrangian(l)) => nonautonomous(l),
        ("quadratic", ModelParams::Quadratic(q)) => quadratic(q),
        ("minimal_surface" | "nonautonomous" | "quadratic", _) => Err(Error::InvalidParams(
            format!("wrong parameter kind for model {name}"),
        )),
        (other, _) => Err(Error::UnknownModel(other.into())),
    }
}

fn p(src: &str) -> ExprAst {
    parse(src).expect("built-in expression parses")
}

// ---------------------------------------------------------------------------
// Minimal surfaces in dimension three
// ---------------------------------------------------------------------------

/// m = 2, n = 1: L = √(1 + v₁² + v₂²), H = −√(1 − p₁² − p₂²).
///
/// Bundled solutions: constant jet fields/sections (two instances) and the
/// separated pair s = (f̄(y), f(x)) with f(x) = 0.1x, f̄(y) = 0.1y — on the
/// Lagrangian side as its Legendre pullback ψ = s/√(1 − f² − f̄²), which is
/// what the isotropy equation admits (the constraint f² + f̄² ≠ 1 is exactly
/// nondegeneracy of that pullback). The constants form a complete solution
/// family over the parameter disk λ₁² + λ₂² ≤ 0.81.
fn minimal_surface() -> Result<ModelBundle, Error> {
    let theory = FieldTheorySpec::new(2, 1, p("sqrt(1 + v1_1^2 + v1_2^2)"))?;
    let h = HamiltonianSpec::explicit(2, 1, p("-sqrt(1 - p1_1^2 - p1_2^2)"))?;
    let f_default = LagCoefficients::zero(2, 1);
    let g_default = HamCoefficients::zero(2, 1);
    let newton = NewtonSettings::default();

    let mut solutions = Vec::new();

    // ψ ≡ (0, 0): the flat plane; W = (x, 0) generates it.
    solutions.push(NamedSolution {
        name: "constants_zero".into(),
        psi: Some(JetField::constant(2, 1, &[vec![0.0, 0.0]])?),
        section: Some(MomentumSection::constant(2, 1, &[vec![0.0, 0.0]])?),
        generating: Some(GeneratingForm::new(2, 1, vec![p("x1"), p("0")])?),
        f: None,
        g: None,
    });

    // ψ ≡ (0.3, −0.2): a tilted plane; s = ψ/√(1 + |ψ|²) with |ψ|² = 0.13.
    solutions.push(NamedSolution {
        name: "constants_generic".into(),
        psi: Some(JetField::new(2, 1, vec![vec![p("0.3"), p("-0.2")]])?),
        section: Some(MomentumSection::new(
            2,
            1,
            vec![vec![p("0.3/sqrt(1.13)"), p("-0.2/sqrt(1.13)")]],
        )?),
        generating: Some(GeneratingForm::new(
            2,
            1,
            vec![
                p("0.3/sqrt(1.13)*u1 + x1/sqrt(1.13)"),
                p("-0.2/sqrt(1.13)*u1"),
            ],
        )?),
        f: None,
        g: None,
    });

    // Separated member: momentum section s = (f̄(y), f(x)) with f = 0.1x,
    // f̄ = 0.1y; its divergence vanishes identically. The jet field is the
    // Legendre pullback, the G table matches ∂s off-diagonally, and F is the
    // transport of G through the Legendre map.
    let section = MomentumSection::new(2, 1, vec![vec![p("0.1*x2"), p("0.1*x1")]])?;
    // G[α][j][i] = ∂s_α^i/∂x^j: only the cross terms survive.
    let g_matched = HamCoefficients::new(
        2,
        1,
        vec![vec![vec![p("0"), p("0.1")], vec![p("0.1"), p("0")]]],
    )?;
    let psi = JetField::pullback_of(theory.clone(), section.clone(), newton.clone());
    let f_matched = LagCoefficients::from_ham(&theory, &g_matched)?;
    solutions.push(NamedSolution {
        name: "separated".into(),
        psi: Some(psi),
        section: Some(section),
        generating: Some(GeneratingForm::new(
            2,
            1,
            vec![
                p("0.1*x2*u1 + x1/2*sqrt(1 - 0.01*x1^2 - 0.01*x2^2) \
                   + (1 - 0.01*x2^2)/0.2*asin(0.1*x1/sqrt(1 - 0.01*x2^2))"),
                p("0.1*x1*u1"),
            ],
        )?),
        f: Some(f_matched),
        g: Some(g_matched),
    });

    let families = vec![NamedFamily {
        name: "constants".into(),
        family: CompleteSolutionFamily::new(
            FamilySide::Lagrangian,
            2,
            1,
            vec![vec![p("l1"), p("l2")]],
            vec![(-0.9, 0.9), (-0.9, 0.9)],
        )?
        .with_constraint(p("0.81 - l1^2 - l2^2"))?,
        lambda_grid: GridSpec::new(vec![
            Axis::new("l1", -0.9, 0.9, 9)?,
            Axis::new("l2", -0.9, 0.9, 9)?,
        ]),
    }];

    Ok(ModelBundle {
        name: "minimal_surface".into(),
        theory,
        hamiltonian: Some(h),
        f_default,
        g_default,
        solutions,
        families,
        grid: GridSpec::new(vec![
            Axis::new("x1", -1.0, 1.0, 21)?,
            Axis::new("x2", -1.0, 1.0, 21)?,
            Axis::new("u1", -1.0, 1.0, 21)?,
        ]),
        tol: DEFAULT_TOL,
        momentum_guard: Some(0.05),
    })
}

// ---------------------------------------------------------------------------
// Non-autonomous mechanics (m = 1)
// ---------------------------------------------------------------------------

/// m = n = 1 with an explicit L(t, q, v): time-dependent mechanics, where
/// the classic HJ condition is W_t + H(t, q, W_q) = 0.
///
/// When L is structurally the free particle ½v², the bundle attaches the
/// closed-form H = ½p², the constant solutions c ∈ {0, 1, −0.5} with their
/// generating functions W = c·q − ½c²·t, and the one-parameter complete
/// family ψ = λ.
fn nonautonomous(l: ExprAst) -> Result<ModelBundle, Error> {
    let theory = FieldTheorySpec::new(1, 1, l.clone())?;
    let is_free_particle = l == p("0.5*v1_1^2");

    let mut solutions = Vec::new();
    let mut families = Vec::new();
    let mut hamiltonian = None;
    if is_free_particle {
        hamiltonian = Some(HamiltonianSpec::explicit(1, 1, p("0.5*p1_1^2"))?);
        for c in [0.0f64, 1.0, -0.5] {
            let w = format!("{c}*u1 - {}*x1", 0.5 * c * c);
            solutions.push(NamedSolution {
                name: format!("uniform_{c}"),
                psi: Some(JetField::constant(1, 1, &[vec![c]])?),
                section: Some(MomentumSection::constant(1, 1, &[vec![c]])?),
                generating: Some(GeneratingForm::new(1, 1, vec![p(&w)])?),
                f: None,
                g: None,
            });
        }
        families.push(NamedFamily {
            name: "uniform".into(),
            family: CompleteSolutionFamily::new(
                FamilySide::Lagrangian,
                1,
                1,
                vec![vec![p("l1")]],
                vec![(-1.0, 1.0)],
            )?,
            lambda_grid: GridSpec::new(vec![Axis::new("l1", -1.0, 1.0, 5)?]),
        });
    }

    Ok(ModelBundle {
        name: "nonautonomous".into(),
        theory,
        hamiltonian,
        f_default: LagCoefficients::zero(1, 1),
        g_default: HamCoefficients::zero(1, 1),
        solutions,
        families,
        grid: GridSpec::new(vec![
            Axis::new("t", 0.0, 1.0, 21)?,
            Axis::new("q", -1.0, 1.0, 21)?,
        ]),
        tol: DEFAULT_TOL,
        momentum_guard: None,
    })
}

// ---------------------------------------------------------------------------
// Quadratic Lagrangian densities
// ---------------------------------------------------------------------------

/// L = ½ g^{ij}_{αβ} (v_i^α − Γ_i^α)(v_j^β − Γ_j^β) + V. For a constant
/// metric the closed-form Hamiltonian H = ½ g̃ p p + Γ·p − V is bundled.
///
/// The harmonic oscillator (m = n = 1, g = 1, Γ = 0, V = −½u²) is detected
/// structurally and attaches the HJ-flow solutions ψ_E = √(2E − u²) for
/// E ∈ {0.5, 1, 2} with F = G = −u, their generating functions, and the
/// one-parameter complete family ψ = √(2λ − u²) over λ ∈ [0.5, 2].
fn quadratic(params: QuadraticParams) -> Result<ModelBundle, Error> {
    let (m, n) = (params.m(), params.n());
    let nm = n * m;

    // Assemble L by printing the coefficient expressions into one source
    // string; the parser round-trips printed expressions exactly.
    let mut terms = Vec::new();
    for a in 0..n {
        for i in 0..m {
            for b in 0..n {
                for j in 0..m {
                    terms.push(format!(
                        "0.5*({})*(v{}_{} - ({}))*(v{}_{} - ({}))",
                        params.g[a][i][b][j],
                        a + 1,
                        i + 1,
                        params.gamma[a][i],
                        b + 1,
                        j + 1,
                        params.gamma[b][j],
                    ));
                }
            }
        }
    }
    let l_src = format!("{} + ({})", terms.join(" + "), params.v);
    let theory = FieldTheorySpec::new(m, n, parse(&l_src)?)?;

    // Closed-form Hamiltonian for constant metrics: H = ½ g̃ p p + Γ·p − V.
    let hamiltonian = match params.constant_metric() {
        Some(mat) => {
            let inv = Lu::factor(&mat, nm).invert();
            let mut terms = Vec::new();
            for a in 0..n {
                for i in 0..m {
                    for b in 0..n {
                        for j in 0..m {
                            let c = inv[(a * m + i) * nm + (b * m + j)];
                            if c != 0.0 {
                                terms.push(format!(
                                    "0.5*({c})*p{}_{}*p{}_{}",
                                    a + 1,
                                    i + 1,
                                    b + 1,
                                    j + 1
                                ));
                            }
                        }
                    }
                }
            }
            for a in 0..n {
                for i in 0..m {
                    terms.push(format!("({})*p{}_{}", params.gamma[a][i], a + 1, i + 1));
                }
            }
            let h_src = format!("{} - ({})", terms.join(" + "), params.v);
            Some(HamiltonianSpec::explicit(m, n, parse(&h_src)?)?)
        }
        None => None,
    };

    // Harmonic oscillator detection (structural).
    let is_harmonic = m == 1
        && n == 1
        && params.g[0][0][0][0] == p("1")
        && params.gamma[0][0] == p("0")
        && params.v == p("-0.5*u1^2");

    let mut f_default = LagCoefficients::zero(m, n);
    let mut g_default = HamCoefficients::zero(m, n);
    let mut solutions = Vec::new();
    let mut families = Vec::new();
    if is_harmonic {
        f_default = LagCoefficients::new(1, 1, vec![vec![vec![p("-u1")]]])?;
        g_default = HamCoefficients::new(1, 1, vec![vec![vec![p("-u1")]]])?;
        for e in [0.5f64, 1.0, 2.0] {
            let te = 2.0 * e;
            let flow = format!("sqrt({te} - u1^2)");
            let w = format!(
                "-{e}*x1 + 0.5*(u1*sqrt({te} - u1^2) + {te}*asin(u1/sqrt({te})))"
            );
            solutions.push(NamedSolution {
                name: format!("energy_{e}"),
                psi: Some(JetField::new(1, 1, vec![vec![p(&flow)]])?),
                section: Some(MomentumSection::new(1, 1, vec![vec![p(&flow)]])?),
                generating: Some(GeneratingForm::new(1, 1, vec![p(&w)])?),
                f: None,
                g: None,
            });
        }
        families.push(NamedFamily {
            name: "energy".into(),
            family: CompleteSolutionFamily::new(
                FamilySide::Lagrangian,
                1,
                1,
                vec![vec![p("sqrt(2*l1 - u1^2)")]],
                vec![(0.5, 2.0)],
            )?,
            lambda_grid: GridSpec::new(vec![Axis::new("l1", 0.5, 2.0, 4)?]),
        });
    }

    Ok(ModelBundle {
        name: "quadratic".into(),
        theory,
        hamiltonian,
        f_default,
        g_default,
        solutions,
        families,
        grid: GridSpec::new(vec![
            Axis::new("t", 0.0, 1.0, 21)?,
            Axis::new("q", -0.9, 0.9, 21)?,
        ]),
        tol: DEFAULT_TOL,
        momentum_guard: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ham_residuals::{HamClassicSuite, HamStandardSuite};
    use crate::jet_core::{grid_report, hessian, JetPoint};
    use crate::lag_residuals::{LagClassicSuite, LagGeneralizedSuite, LagStandardSuite};
    use crate::legendre::hamiltonian;

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

    fn coarse(grid: &GridSpec) -> GridSpec {
        GridSpec::new(
            grid.axes()
                .iter()
                .map(|ax| Axis::new(&ax.name, ax.lo, ax.hi, 7).unwrap())
                .collect(),
        )
    }

    #[test]
    fn minimal_surface_bundle_shape() {
        let ms = builtin("minimal_surface", ModelParams::None).unwrap();
        assert_eq!(*ms.theory.lagrangian(), p("sqrt(1 + v1_1^2 + v1_2^2)"));
        let h = ms.hamiltonian.as_ref().unwrap();
        assert_eq!(*h.expr().unwrap(), p("-sqrt(1 - p1_1^2 - p1_2^2)"));
        assert_eq!(ms.solutions.len(), 3);
        assert!(ms.solution("separated").is_some());
        assert_eq!(ms.families.len(), 1);
        assert_eq!(ms.grid.total().unwrap(), 21 * 21 * 21);
        assert_eq!(ms.momentum_guard, Some(0.05));
        // Defaults vanish.
        let pt = ChartPoint {
            x: vec![0.2, -0.4],
            u: vec![0.7],
            v: vec![vec![0.1, 0.3]],
            p: Vec::new(),
            lam: Vec::new(),
        };
        let f = ms.f_default.values(&pt).unwrap();
        assert!(f.iter().flatten().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn minimal_surface_members_pass_their_suites_on_a_coarse_grid() {
        let ms = builtin("minimal_surface", ModelParams::None).unwrap();
        let h = ms.hamiltonian.as_ref().unwrap();
        let grid = coarse(&ms.grid);
        for sol in &ms.solutions {
            let psi = sol.psi.as_ref().unwrap();
            let s = sol.section.as_ref().unwrap();
            let w = sol.generating.as_ref().unwrap();
            let lag_std = grid_report(
                &LagStandardSuite::new(&ms.theory, psi).unwrap(),
                &grid,
                ms.tol,
            )
            .unwrap();
            assert!(lag_std.pass, "{} lag std worst {}", sol.name, lag_std.worst());
            let lag_gen = grid_report(
                &LagGeneralizedSuite::new(&ms.theory, psi, ms.f_for(sol)).unwrap(),
                &grid,
                ms.tol,
            )
            .unwrap();
            assert!(lag_gen.pass, "{} lag gen worst {}", sol.name, lag_gen.worst());
            let lag_classic = grid_report(
                &LagClassicSuite::new(&ms.theory, psi, w).unwrap(),
                &grid,
                ms.tol,
            )
            .unwrap();
            assert!(
                lag_classic.pass,
                "{} lag classic worst {}",
                sol.name,
                lag_classic.worst()
            );
            let ham_std =
                grid_report(&HamStandardSuite::new(h, s).unwrap(), &grid, ms.tol).unwrap();
            assert!(ham_std.pass, "{} ham std worst {}", sol.name, ham_std.worst());
            let ham_classic =
                grid_report(&HamClassicSuite::new(h, w).unwrap(), &grid, ms.tol).unwrap();
            assert!(
                ham_classic.pass,
                "{} ham classic worst {}",
                sol.name,
                ham_classic.worst()
            );
        }
    }

    #[test]
    fn harmonic_detection_attaches_flow_solutions() {
        let q = builtin("quadratic", ModelParams::Quadratic(harmonic_params())).unwrap();
        assert_eq!(q.solutions.len(), 3);
        assert_eq!(q.families.len(), 1);
        // F = G = −u.
        let pt = ChartPoint {
            x: vec![0.1],
            u: vec![0.6],
            v: vec![vec![0.0]],
            p: Vec::new(),
            lam: Vec::new(),
        };
        assert_eq!(q.f_default.values(&pt).unwrap()[0][0][0], -0.6);
        // Closed-form H agrees in value with ½p² + ½q².
        let h = q.hamiltonian.as_ref().unwrap();
        for (t, q_, p_) in [(0.0, 0.3, -0.8), (0.7, -0.5, 0.2)] {
            let mpt = crate::jet_core::RestrictedMomentumPoint::new(
                vec![t],
                vec![q_],
                vec![vec![p_]],
            )
            .unwrap();
            let got = hamiltonian(h, &mpt).unwrap();
            assert!((got - (0.5 * p_ * p_ + 0.5 * q_ * q_)).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_members_pass_on_a_coarse_grid() {
        let q = builtin("quadratic", ModelParams::Quadratic(harmonic_params())).unwrap();
        let h = q.hamiltonian.as_ref().unwrap();
        let grid = coarse(&q.grid);
        for sol in &q.solutions {
            let psi = sol.psi.as_ref().unwrap();
            let w = sol.generating.as_ref().unwrap();
            let lag_std =
                grid_report(&LagStandardSuite::new(&q.theory, psi).unwrap(), &grid, q.tol)
                    .unwrap();
            assert!(lag_std.pass, "{} worst {}", sol.name, lag_std.worst());
            let lag_gen = grid_report(
                &LagGeneralizedSuite::new(&q.theory, psi, q.f_for(sol)).unwrap(),
                &grid,
                q.tol,
            )
            .unwrap();
            assert!(lag_gen.pass, "{} worst {}", sol.name, lag_gen.worst());
            let classic = grid_report(
                &LagClassicSuite::new(&q.theory, psi, w).unwrap(),
                &grid,
                q.tol,
            )
            .unwrap();
            assert!(classic.pass, "{} worst {}", sol.name, classic.worst());
            let ham_classic =
                grid_report(&HamClassicSuite::new(h, w).unwrap(), &grid, q.tol).unwrap();
            assert!(ham_classic.pass, "{} worst {}", sol.name, ham_classic.worst());
        }
    }

    #[test]
    fn quadratic_hessian_equals_metric() {
        // A nonconstant (x, u)-dependent metric: no closed-form H, but the
        // velocity Hessian of L reproduces g pointwise.
        let params = QuadraticParams::new(
            1,
            1,
            vec![vec![vec![vec![p("2 + u1^2")]]]],
            vec![vec![p("0.3*x1")]],
            p("0.1*u1"),
        )
        .unwrap();
        let q = builtin("quadratic", ModelParams::Quadratic(params)).unwrap();
        assert!(q.hamiltonian.is_none());
        for (t, u, v) in [(0.0, 0.4, -0.7), (0.8, -0.9, 0.25)] {
            let jp = JetPoint::new(vec![t], vec![u], vec![vec![v]]).unwrap();
            let hess = hessian(&q.theory, &jp).unwrap();
            assert!((hess[0][0] - (2.0 + u * u)).abs() < 1e-12);
        }
    }

    #[test]
    fn free_particle_detection() {
        let b = builtin("nonautonomous", ModelParams::Lagrangian(p("0.5*v1_1^2"))).unwrap();
        assert_eq!(b.solutions.len(), 3);
        assert_eq!(b.families.len(), 1);
        assert!(b.hamiltonian.is_some());
        let names: Vec<&str> = b.solutions.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["uniform_0", "uniform_1", "uniform_-0.5"]);

        // A different L attaches nothing.
        let other = builtin(
            "nonautonomous",
            ModelParams::Lagrangian(p("0.5*v1_1^2 + x1*v1_1")),
        )
        .unwrap();
        assert!(other.solutions.is_empty());
        assert!(other.hamiltonian.is_none());
    }

    #[test]
    fn free_particle_members_pass_on_a_coarse_grid() {
        let b = builtin("nonautonomous", ModelParams::Lagrangian(p("0.5*v1_1^2"))).unwrap();
        let h = b.hamiltonian.as_ref().unwrap();
        let grid = coarse(&b.grid);
        for sol in &b.solutions {
            let psi = sol.psi.as_ref().unwrap();
            let w = sol.generating.as_ref().unwrap();
            for rep in [
                grid_report(&LagStandardSuite::new(&b.theory, psi).unwrap(), &grid, b.tol)
                    .unwrap(),
                grid_report(
                    &LagGeneralizedSuite::new(&b.theory, psi, b.f_for(sol)).unwrap(),
                    &grid,
                    b.tol,
                )
                .unwrap(),
                grid_report(
                    &LagClassicSuite::new(&b.theory, psi, w).unwrap(),
                    &grid,
                    b.tol,
                )
                .unwrap(),
                grid_report(&HamClassicSuite::new(h, w).unwrap(), &grid, b.tol).unwrap(),
            ] {
                assert!(rep.pass, "{}: worst {}", sol.name, rep.worst());
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(matches!(
            builtin("waves", ModelParams::None),
            Err(Error::UnknownModel(_))
        ));
        assert!(matches!(
            builtin("minimal_surface", ModelParams::Lagrangian(p("1"))),
            Err(Error::InvalidParams(_))
        ));
        // Asymmetric metric (m = 2, n = 1): g^{12} ≠ g^{21}.
        let bad = QuadraticParams::new(
            2,
            1,
            vec![vec![
                vec![vec![p("1"), p("0.5")]],
                vec![vec![p("0.2"), p("1")]],
            ]],
            vec![vec![p("0"), p("0")]],
            p("0"),
        );
        assert!(matches!(bad, Err(Error::InvalidParams(_))));
        // Singular metric.
        let singular = QuadraticParams::new(
            1,
            1,
            vec![vec![vec![vec![p("0")]]]],
            vec![vec![p("0")]],
            p("0"),
        );
        assert!(matches!(singular, Err(Error::InvalidParams(_))));
        // Connection depending on u.
        let bad_gamma = QuadraticParams::new(
            1,
            1,
            vec![vec![vec![vec![p("1")]]]],
            vec![vec![p("u1")]],
            p("0"),
        );
        assert!(matches!(bad_gamma, Err(Error::InvalidParams(_))));
    }
}
