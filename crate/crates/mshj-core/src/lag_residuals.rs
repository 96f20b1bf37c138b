//! Lagrangian-side residuals: Euler-Lagrange coefficient equations,
//! integrability conditions, the generalized HJ system, isotropy conditions,
//! and the generating-form HJ equation.
//!
//! Index conventions: jet fields are `ψ[α][i]` (fiber component α, base
//! direction i); coefficient tables are `F[j][i][α]` for the paper-order
//! `F_{j,i}^α`; generalized HJ residuals come back as `[j][k][β]`.
//!
//! The isotropy operation reports two granularities. The gating families
//! (`two_form`, `one_form`) are the exact coefficients of the pulled-back
//! multisymplectic form `Ψ*Ω`: they vanish iff Im(Ψ) is isotropic, and are
//! cross-checked against finite differences of the pulled-back Cartan-form
//! coefficients in the tests. The `combined_*` families evaluate the
//! uncombined per-index system over all index combinations; that system is
//! stronger than isotropy (its B-row omits the explicit-x divergence term and
//! the ψ-weighted A-row correction), so genuine HJ flows can leave it
//! nonzero. They are reported for diagnosis but do not gate.

use crate::error::Error;
use crate::expr::{Expr, ExprAst};
use crate::ham_residuals::HamCoefficients;
use crate::jet_core::{
    compile, derive_slots_first, eval_slot, Chart, ChartPoint, FamilySpec, FieldTheorySpec,
    JetPoint, ResidualOp, Slot,
};
use crate::legendre::NewtonSettings;
use crate::linalg::Lu;

// ---------------------------------------------------------------------------
// Candidate objects
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum PsiBackend {
    Exprs {
        asts: Vec<Vec<ExprAst>>,
        compiled: Vec<Vec<Expr<Slot>>>,
    },
    /// Ψ = Leg⁻¹ ∘ s as a composed evaluator over the Newton inverse.
    Pullback {
        theory: FieldTheorySpec,
        section: Box<crate::ham_residuals::MomentumSection>,
        settings: NewtonSettings,
    },
}

/// A jet field `Ψ(x, u) = (x, u, ψ(x, u))`: the Lagrangian HJ candidate.
#[derive(Debug, Clone)]
pub struct JetField {
    m: usize,
    n: usize,
    backend: PsiBackend,
}

/// Values and first derivatives of a jet field at one `(x, u)`:
/// `psi[α][i]`, `d_x[α][i][j] = ∂ψ_i^α/∂x^j`, `d_u[α][i][β] = ∂ψ_i^α/∂u^β`.
#[derive(Debug, Clone)]
pub struct JetFieldDerivs {
    pub psi: Vec<Vec<f64>>,
    pub d_x: Vec<Vec<Vec<f64>>>,
    pub d_u: Vec<Vec<Vec<f64>>>,
}

impl JetField {
    /// Builds from component expressions `psi[α][i]` over `(x, u)`.
    pub fn new(m: usize, n: usize, psi: Vec<Vec<ExprAst>>) -> Result<JetField, Error> {
        if psi.len() != n || psi.iter().any(|row| row.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "jet field needs psi[{n}][{m}]"
            )));
        }
        let chart = Chart::base(m, n);
        let compiled = psi
            .iter()
            .map(|row| row.iter().map(|e| compile(e, &chart)).collect())
            .collect::<Result<Vec<Vec<_>>, _>>()?;
        Ok(JetField {
            m,
            n,
            backend: PsiBackend::Exprs {
                asts: psi,
                compiled,
            },
        })
    }

    /// A constant jet field `ψ[α][i] = c[α][i]`.
    pub fn constant(m: usize, n: usize, c: &[Vec<f64>]) -> Result<JetField, Error> {
        let asts = c
            .iter()
            .map(|row| row.iter().map(|v| Expr::Const(*v)).collect())
            .collect();
        JetField::new(m, n, asts)
    }

    pub(crate) fn pullback_of(
        theory: FieldTheorySpec,
        section: crate::ham_residuals::MomentumSection,
        settings: NewtonSettings,
    ) -> JetField {
        JetField {
            m: theory.m(),
            n: theory.n(),
            backend: PsiBackend::Pullback {
                theory,
                section: Box::new(section),
                settings,
            },
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Component expressions, when this field is expression-backed.
    pub fn components(&self) -> Option<&Vec<Vec<ExprAst>>> {
        match &self.backend {
            PsiBackend::Exprs { asts, .. } => Some(asts),
            PsiBackend::Pullback { .. } => None,
        }
    }

    /// ψ values at `(x, u)`.
    pub fn values(&self, x: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>, Error> {
        self.check_point(x, u)?;
        match &self.backend {
            PsiBackend::Exprs { compiled, .. } => {
                let pt = ChartPoint::base(x, u);
                compiled
                    .iter()
                    .map(|row| row.iter().map(|e| eval_slot(e, &pt)).collect())
                    .collect()
            }
            PsiBackend::Pullback {
                theory,
                section,
                settings,
            } => {
                let p = section.values(x, u)?;
                let mpt = crate::jet_core::RestrictedMomentumPoint::new(
                    x.to_vec(),
                    u.to_vec(),
                    p,
                )?;
                Ok(crate::legendre::inverse_legendre(theory, &mpt, settings)?.v)
            }
        }
    }

    /// ψ values and first derivatives at `(x, u)`.
    pub fn derivs(&self, x: &[f64], u: &[f64]) -> Result<JetFieldDerivs, Error> {
        self.check_point(x, u)?;
        let (m, n) = (self.m, self.n);
        match &self.backend {
            PsiBackend::Exprs { compiled, .. } => {
                let pt = ChartPoint::base(x, u);
                let vars: Vec<Slot> = Chart::base(m, n).slots();
                let mut out = JetFieldDerivs {
                    psi: vec![vec![0.0; m]; n],
                    d_x: vec![vec![vec![0.0; m]; m]; n],
                    d_u: vec![vec![vec![0.0; n]; m]; n],
                };
                for a in 0..n {
                    for i in 0..m {
                        let (value, grad) = derive_slots_first(&compiled[a][i], &pt, &vars)?;
                        out.psi[a][i] = value;
                        out.d_x[a][i].copy_from_slice(&grad[..m]);
                        out.d_u[a][i].copy_from_slice(&grad[m..]);
                    }
                }
                Ok(out)
            }
            PsiBackend::Pullback {
                theory,
                section,
                settings,
            } => {
                // From s(x,u) = ∂L/∂v(x, u, ψ(x,u)):
                //   ∂ψ/∂x^j = M (∂s/∂x^j − L_vx[:,j]),
                //   ∂ψ/∂u^β = M (∂s/∂u^β − L_vu[:,β]),  M = (L_vv)⁻¹ at v = ψ.
                let sd = section.derivs(x, u)?;
                let mpt = crate::jet_core::RestrictedMomentumPoint::new(
                    x.to_vec(),
                    u.to_vec(),
                    sd.s.clone(),
                )?;
                let jet = crate::legendre::inverse_legendre(theory, &mpt, settings)?;
                let jpt = ChartPoint::from_jet(&jet);
                let l = theory.l_bundle(&jpt)?;
                let nm = n * m;
                let mut lvv = Vec::with_capacity(nm * nm);
                for a in 0..n {
                    for i in 0..m {
                        for b in 0..n {
                            for k in 0..m {
                                lvv.push(l.l_vv(a, i, b, k));
                            }
                        }
                    }
                }
                let lu = Lu::factor(&lvv, nm);
                if lu.det().abs() < crate::legendre::SINGULAR_DET {
                    return Err(Error::SingularJacobian { det: lu.det() });
                }
                let mut out = JetFieldDerivs {
                    psi: jet.v.clone(),
                    d_x: vec![vec![vec![0.0; m]; m]; n],
                    d_u: vec![vec![vec![0.0; n]; m]; n],
                };
                for j in 0..m {
                    let rhs: Vec<f64> = (0..nm)
                        .map(|ai| sd.d_x[ai / m][ai % m][j] - l.l_vx(ai / m, ai % m, j))
                        .collect();
                    let col = lu.solve(&rhs);
                    for a in 0..n {
                        for i in 0..m {
                            out.d_x[a][i][j] = col[a * m + i];
                        }
                    }
                }
                for b in 0..n {
                    let rhs: Vec<f64> = (0..nm)
                        .map(|ai| sd.d_u[ai / m][ai % m][b] - l.l_vu(ai / m, ai % m, b))
                        .collect();
                    let col = lu.solve(&rhs);
                    for a in 0..n {
                        for i in 0..m {
                            out.d_u[a][i][b] = col[a * m + i];
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// A jet point on Im(Ψ) above `(x, u)`.
    pub fn jet_point(&self, x: &[f64], u: &[f64]) -> Result<JetPoint, Error> {
        JetPoint::new(x.to_vec(), u.to_vec(), self.values(x, u)?)
    }

    fn check_point(&self, x: &[f64], u: &[f64]) -> Result<(), Error> {
        if x.len() != self.m || u.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "jet field over m={}, n={} evaluated at ({}, {})",
                self.m,
                self.n,
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum FBackend {
    Exprs {
        asts: Vec<Vec<Vec<ExprAst>>>,
        compiled: Vec<Vec<Vec<Expr<Slot>>>>,
    },
    /// F solved pointwise from Legendre-transported G values:
    /// `L_vv F_j = G_j − L_vx[:,j] − v_j^β L_vu[:,β]` per column j.
    FromHam {
        theory: FieldTheorySpec,
        g: Box<HamCoefficients>,
    },
}

/// Multivector-field coefficients `F[j][i][α]` (the representative with class
/// factor 1), defined over the jet chart `(x, u, v)`.
#[derive(Debug, Clone)]
pub struct LagCoefficients {
    m: usize,
    n: usize,
    backend: FBackend,
}

/// Per-component first derivatives of F at a jet point.
pub(crate) struct FCompDerivs {
    pub value: f64,
    pub d_x: Vec<f64>,
    pub d_u: Vec<f64>,
    /// `d_v[β][l] = ∂F/∂v_l^β`
    pub d_v: Vec<Vec<f64>>,
}

impl LagCoefficients {
    /// Builds from component expressions `F[j][i][α]` over `(x, u, v)`.
    pub fn new(m: usize, n: usize, f: Vec<Vec<Vec<ExprAst>>>) -> Result<LagCoefficients, Error> {
        if f.len() != m
            || f.iter().any(|ji| ji.len() != m)
            || f.iter().flatten().any(|ia| ia.len() != n)
        {
            return Err(Error::DimensionMismatch(format!(
                "coefficients need F[{m}][{m}][{n}]"
            )));
        }
        let chart = Chart::jet(m, n);
        let compiled = f
            .iter()
            .map(|ji| {
                ji.iter()
                    .map(|ia| ia.iter().map(|e| compile(e, &chart)).collect())
                    .collect()
            })
            .collect::<Result<Vec<Vec<Vec<_>>>, _>>()?;
        Ok(LagCoefficients {
            m,
            n,
            backend: FBackend::Exprs { asts: f, compiled },
        })
    }

    /// The zero coefficient table (integrable, symmetric).
    pub fn zero(m: usize, n: usize) -> LagCoefficients {
        let f = vec![vec![vec![Expr::Const(0.0); n]; m]; m];
        LagCoefficients::new(m, n, f).expect("constant table is well-formed")
    }

    /// Coefficients transported from Hamiltonian-side G through the Legendre
    /// map; values only (derivative-based ops reject this backend).
    pub fn from_ham(theory: &FieldTheorySpec, g: &HamCoefficients) -> Result<LagCoefficients, Error> {
        if g.m() != theory.m() || g.n() != theory.n() {
            return Err(Error::DimensionMismatch(format!(
                "G has (m, n) = ({}, {}), theory has ({}, {})",
                g.m(),
                g.n(),
                theory.m(),
                theory.n()
            )));
        }
        Ok(LagCoefficients {
            m: theory.m(),
            n: theory.n(),
            backend: FBackend::FromHam {
                theory: theory.clone(),
                g: Box::new(g.clone()),
            },
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Component expressions, when expression-backed.
    pub fn components(&self) -> Option<&Vec<Vec<Vec<ExprAst>>>> {
        match &self.backend {
            FBackend::Exprs { asts, .. } => Some(asts),
            FBackend::FromHam { .. } => None,
        }
    }

    /// `F[j][i][α]` values at a jet chart point.
    pub fn values(&self, pt: &ChartPoint) -> Result<Vec<Vec<Vec<f64>>>, Error> {
        let (m, n) = (self.m, self.n);
        match &self.backend {
            FBackend::Exprs { compiled, .. } => compiled
                .iter()
                .map(|ji| {
                    ji.iter()
                        .map(|ia| ia.iter().map(|e| eval_slot(e, pt)).collect())
                        .collect()
                })
                .collect(),
            FBackend::FromHam { theory, g } => {
                let l = theory.l_bundle(pt)?;
                let nm = n * m;
                // Momentum point under Leg: p = ∂L/∂v at pt.
                let mpt = ChartPoint {
                    x: pt.x.clone(),
                    u: pt.u.clone(),
                    v: Vec::new(),
                    p: (0..n)
                        .map(|a| (0..m).map(|i| l.l_v(a, i)).collect())
                        .collect(),
                    lam: Vec::new(),
                };
                let gv = g.values(&mpt)?;
                let mut lvv = Vec::with_capacity(nm * nm);
                for a in 0..n {
                    for i in 0..m {
                        for b in 0..n {
                            for k in 0..m {
                                lvv.push(l.l_vv(a, i, b, k));
                            }
                        }
                    }
                }
                let lu = Lu::factor(&lvv, nm);
                if lu.det().abs() < crate::legendre::SINGULAR_DET {
                    return Err(Error::SingularJacobian { det: lu.det() });
                }
                let mut out = vec![vec![vec![0.0; n]; m]; m];
                for j in 0..m {
                    let rhs: Vec<f64> = (0..nm)
                        .map(|ai| {
                            let (a, i) = (ai / m, ai % m);
                            let mut r = gv[a][j][i] - l.l_vx(a, i, j);
                            for b in 0..n {
                                r -= pt.v[b][j] * l.l_vu(a, i, b);
                            }
                            r
                        })
                        .collect();
                    let w = lu.solve(&rhs);
                    // w is flattened (β, k) β-major: F_{j,k}^β.
                    for b in 0..n {
                        for k in 0..m {
                            out[j][k][b] = w[b * m + k];
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Per-component first derivatives over the jet chart; expression-backed
    /// tables only.
    pub(crate) fn derivs(&self, pt: &ChartPoint) -> Result<Vec<Vec<Vec<FCompDerivs>>>, Error> {
        let (m, n) = (self.m, self.n);
        match &self.backend {
            FBackend::Exprs { compiled, .. } => {
                let vars = Chart::jet(m, n).slots();
                compiled
                    .iter()
                    .map(|ji| {
                        ji.iter()
                            .map(|ia| {
                                ia.iter()
                                    .map(|e| {
                                        let (value, grad) = derive_slots_first(e, pt, &vars)?;
                                        Ok(FCompDerivs {
                                            value,
                                            d_x: grad[..m].to_vec(),
                                            d_u: grad[m..m + n].to_vec(),
                                            d_v: (0..n)
                                                .map(|b| {
                                                    grad[m + n + b * m..m + n + (b + 1) * m]
                                                        .to_vec()
                                                })
                                                .collect(),
                                        })
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            }
            FBackend::FromHam { .. } => Err(Error::Unsupported(
                "derivatives of Legendre-transported coefficients would need third \
                 derivatives of L; supply expression-backed coefficients instead"
                    .into(),
            )),
        }
    }
}

/// Components `W[i]` of the semibasic generating (m−1)-form over `(x, u)`.
#[derive(Debug, Clone)]
pub struct GeneratingForm {
    m: usize,
    n: usize,
    w: Vec<ExprAst>,
    compiled: Vec<Expr<Slot>>,
}

/// Values and first derivatives of W at one `(x, u)`.
pub(crate) struct GenFormDerivs {
    #[allow(dead_code)]
    pub w: Vec<f64>,
    /// `d_x[i][j] = ∂W^i/∂x^j`
    pub d_x: Vec<Vec<f64>>,
    /// `d_u[i][α] = ∂W^i/∂u^α`
    pub d_u: Vec<Vec<f64>>,
}

impl GeneratingForm {
    pub fn new(m: usize, n: usize, w: Vec<ExprAst>) -> Result<GeneratingForm, Error> {
        if w.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "generating form needs W[{m}]"
            )));
        }
        let chart = Chart::base(m, n);
        let compiled = w
            .iter()
            .map(|e| compile(e, &chart))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GeneratingForm { m, n, w, compiled })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> &[ExprAst] {
        &self.w
    }

    pub(crate) fn compiled_component(&self, i: usize) -> &Expr<Slot> {
        &self.compiled[i]
    }

    pub(crate) fn derivs(&self, x: &[f64], u: &[f64]) -> Result<GenFormDerivs, Error> {
        let (m, n) = (self.m, self.n);
        let pt = ChartPoint::base(x, u);
        let vars = Chart::base(m, n).slots();
        let mut out = GenFormDerivs {
            w: vec![0.0; m],
            d_x: vec![vec![0.0; m]; m],
            d_u: vec![vec![0.0; n]; m],
        };
        for i in 0..m {
            let (value, grad) = derive_slots_first(&self.compiled[i], &pt, &vars)?;
            out.w[i] = value;
            out.d_x[i].copy_from_slice(&grad[..m]);
            out.d_u[i].copy_from_slice(&grad[m..]);
        }
        Ok(out)
    }

    /// The momentum section `s_α^i = ∂W^i/∂u^α` induced by this form.
    pub fn induced_momenta(&self, x: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>, Error> {
        let d = self.derivs(x, u)?;
        Ok((0..self.n)
            .map(|a| (0..self.m).map(|i| d.d_u[i][a]).collect())
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Pointwise operations
// ---------------------------------------------------------------------------

fn check_theory_dims(theory: &FieldTheorySpec, m: usize, n: usize, what: &str) -> Result<(), Error> {
    if theory.m() != m || theory.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "{what} has (m, n) = ({m}, {n}), theory has ({}, {})",
            theory.m(),
            theory.n()
        )));
    }
    Ok(())
}

/// Euler-Lagrange coefficient residual
/// `R_α = L_u^α − Σ_i L_{v_i^α x^i} − Σ_{i,β} v_i^β L_{v_i^α u^β}
///  − Σ_{i,j,β} F_{j,i}^β L_{v_i^α v_j^β}` at a jet point.
pub fn el_coefficient_residual(
    theory: &FieldTheorySpec,
    f: &LagCoefficients,
    pt: &JetPoint,
) -> Result<Vec<f64>, Error> {
    check_theory_dims(theory, f.m(), f.n(), "coefficient table")?;
    let (m, n) = (theory.m(), theory.n());
    let cpt = ChartPoint::from_jet(pt);
    let l = theory.l_bundle(&cpt)?;
    let fv = f.values(&cpt)?;
    let mut out = vec![0.0; n];
    for (a, r) in out.iter_mut().enumerate() {
        let mut acc = l.l_u(a);
        for i in 0..m {
            acc -= l.l_vx(a, i, i);
            for b in 0..n {
                acc -= pt.v[b][i] * l.l_vu(a, i, b);
                for j in 0..m {
                    acc -= fv[j][i][b] * l.l_vv(a, i, b, j);
                }
            }
        }
        *r = acc;
    }
    Ok(out)
}

/// Both integrability families of a coefficient table at a jet point,
/// flattened in the documented orders.
#[derive(Debug, Clone)]
pub struct LagIntegrability {
    /// `F_{j,k}^α − F_{k,j}^α` for α, then j < k; length n·m(m−1)/2.
    pub antisymmetry: Vec<f64>,
    /// Bracket conditions for α, i, then j < k; length n·m²(m−1)/2.
    pub bracket: Vec<f64>,
}

pub(crate) fn antisymmetry_labels(m: usize, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for a in 0..n {
        for j in 0..m {
            for k in j + 1..m {
                out.push(format!("j={} k={} α={}", j + 1, k + 1, a + 1));
            }
        }
    }
    out
}

pub(crate) fn bracket_labels(m: usize, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for a in 0..n {
        for i in 0..m {
            for j in 0..m {
                for k in j + 1..m {
                    out.push(format!("i={} j={} k={} α={}", i + 1, j + 1, k + 1, a + 1));
                }
            }
        }
    }
    out
}

pub fn integrability_residual_lag(
    f: &LagCoefficients,
    theory: &FieldTheorySpec,
    pt: &JetPoint,
) -> Result<LagIntegrability, Error> {
    check_theory_dims(theory, f.m(), f.n(), "coefficient table")?;
    let (m, n) = (theory.m(), theory.n());
    let cpt = ChartPoint::from_jet(pt);
    let fd = f.derivs(&cpt)?;
    let mut antisymmetry = Vec::with_capacity(n * m * (m - 1) / 2);
    for a in 0..n {
        for j in 0..m {
            for k in j + 1..m {
                antisymmetry.push(fd[j][k][a].value - fd[k][j][a].value);
            }
        }
    }
    // D_j F_{k,i}^α − D_k F_{j,i}^α with the transport derivative
    // D_j = ∂/∂x^j + v_j^β ∂/∂u^β + F_{j,l}^β ∂/∂v_l^β.
    let transport = |j: usize, comp: &FCompDerivs| -> f64 {
        let mut acc = comp.d_x[j];
        for b in 0..n {
            acc += pt.v[b][j] * comp.d_u[b];
            for l in 0..m {
                acc += fd[j][l][b].value * comp.d_v[b][l];
            }
        }
        acc
    };
    let mut bracket = Vec::with_capacity(n * m * m * (m - 1) / 2);
    for a in 0..n {
        for i in 0..m {
            for j in 0..m {
                for k in j + 1..m {
                    bracket.push(transport(j, &fd[k][i][a]) - transport(k, &fd[j][i][a]));
                }
            }
        }
    }
    Ok(LagIntegrability {
        antisymmetry,
        bracket,
    })
}

/// Generalized Lagrangian HJ residual
/// `R_{j,k}^β = ∂ψ_k^β/∂x^j + ψ_j^α ∂ψ_k^β/∂u^α − F_{j,k}^β(x, u, ψ)`,
/// returned as `[j][k][β]`.
pub fn gen_lag_hj_residual(
    theory: &FieldTheorySpec,
    psi: &JetField,
    f: &LagCoefficients,
    x: &[f64],
    u: &[f64],
) -> Result<Vec<Vec<Vec<f64>>>, Error> {
    check_theory_dims(theory, psi.m(), psi.n(), "jet field")?;
    check_theory_dims(theory, f.m(), f.n(), "coefficient table")?;
    let (m, n) = (theory.m(), theory.n());
    let d = psi.derivs(x, u)?;
    let on_psi = ChartPoint {
        x: x.to_vec(),
        u: u.to_vec(),
        v: d.psi.clone(),
        p: Vec::new(),
        lam: Vec::new(),
    };
    let fv = f.values(&on_psi)?;
    let mut out = vec![vec![vec![0.0; n]; m]; m];
    for j in 0..m {
        for k in 0..m {
            for b in 0..n {
                let mut acc = d.d_x[b][k][j] - fv[j][k][b];
                for a in 0..n {
                    acc += d.psi[a][j] * d.d_u[b][k][a];
                }
                out[j][k][b] = acc;
            }
        }
    }
    Ok(out)
}

/// Isotropy residuals of Im(Ψ) with both granularities (see module docs).
#[derive(Debug, Clone)]
pub struct LagIsotropy {
    /// Exact `Ψ*Ω` coefficients on `du^α ∧ du^β ∧ d^{m−1}x_i`, for i and
    /// α < β; empty when n = 1. Gating.
    pub two_form: Vec<f64>,
    /// Exact `Ψ*Ω` coefficients on `du^α ∧ d^m x`, for α. Gating.
    pub one_form: Vec<f64>,
    /// Uncombined per-index family A over all (i, α, β), flattened i-major.
    pub combined_a: Vec<f64>,
    /// Uncombined per-index family B over α.
    pub combined_b: Vec<f64>,
}

pub(crate) fn two_form_labels(m: usize, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..m {
        for a in 0..n {
            for b in a + 1..n {
                out.push(format!("i={} α={} β={}", i + 1, a + 1, b + 1));
            }
        }
    }
    out
}

pub(crate) fn alpha_labels(n: usize) -> Vec<String> {
    (0..n).map(|a| format!("α={}", a + 1)).collect()
}

pub(crate) fn combined_a_labels(m: usize, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..m {
        for a in 0..n {
            for b in 0..n {
                out.push(format!("i={} α={} β={}", i + 1, a + 1, b + 1));
            }
        }
    }
    out
}

pub fn lag_isotropy_residual(
    theory: &FieldTheorySpec,
    psi: &JetField,
    x: &[f64],
    u: &[f64],
) -> Result<LagIsotropy, Error> {
    check_theory_dims(theory, psi.m(), psi.n(), "jet field")?;
    let (m, n) = (theory.m(), theory.n());
    let d = psi.derivs(x, u)?;
    let on_psi = ChartPoint {
        x: x.to_vec(),
        u: u.to_vec(),
        v: d.psi.clone(),
        p: Vec::new(),
        lam: Vec::new(),
    };
    let l = theory.l_bundle(&on_psi)?;

    // a[i][α][β] = ∂P_α^i/∂u^β along Ψ, with P_α^i = L_{v_i^α}|Ψ.
    let mut a_comb = vec![vec![vec![0.0; n]; n]; m];
    for (i, ai) in a_comb.iter_mut().enumerate() {
        for (a, row) in ai.iter_mut().enumerate() {
            for (b, slot) in row.iter_mut().enumerate() {
                let mut acc = l.l_vu(a, i, b);
                for dd in 0..n {
                    for k in 0..m {
                        acc += l.l_vv(a, i, dd, k) * d.d_u[dd][k][b];
                    }
                }
                *slot = acc;
            }
        }
    }
    let mut b_comb = vec![0.0; n];
    for (a, slot) in b_comb.iter_mut().enumerate() {
        let mut acc = -l.l_u(a);
        for i in 0..m {
            for b in 0..n {
                for k in 0..m {
                    acc += l.l_vv(a, i, b, k) * d.d_x[b][k][i];
                }
            }
        }
        *slot = acc;
    }

    let mut two_form = Vec::with_capacity(m * n * (n - 1) / 2);
    for i in 0..m {
        for a in 0..n {
            for b in a + 1..n {
                two_form.push(a_comb[i][a][b] - a_comb[i][b][a]);
            }
        }
    }
    // one_form[α] = Σ_i ∂P_α^i/∂x^i + ∂E/∂u^α
    //            = combined_B + Σ_i L_{v_i^α x^i} + Σ_{j,β} ψ_j^β a[j][β][α].
    let mut one_form = Vec::with_capacity(n);
    for a in 0..n {
        let mut acc = b_comb[a];
        for i in 0..m {
            acc += l.l_vx(a, i, i);
        }
        for j in 0..m {
            for b in 0..n {
                acc += d.psi[b][j] * a_comb[j][b][a];
            }
        }
        one_form.push(acc);
    }

    Ok(LagIsotropy {
        two_form,
        one_form,
        combined_a: a_comb.into_iter().flatten().flatten().collect(),
        combined_b: b_comb,
    })
}

/// Generating-form HJ residuals: the scalar equation
/// `Σ_i ∂W^i/∂x^i + Σ_{i,α} ψ_i^α ∂W^i/∂u^α − L(x, u, ψ)` and the
/// momentum-match table `∂W^i/∂u^α − ∂L/∂v_i^α|_{v=ψ}` as `[α][i]`.
pub fn lag_generating_residual(
    theory: &FieldTheorySpec,
    psi: &JetField,
    w: &GeneratingForm,
    x: &[f64],
    u: &[f64],
) -> Result<(f64, Vec<Vec<f64>>), Error> {
    check_theory_dims(theory, psi.m(), psi.n(), "jet field")?;
    check_theory_dims(theory, w.m(), w.n(), "generating form")?;
    let (m, n) = (theory.m(), theory.n());
    let pd = psi.derivs(x, u)?;
    let wd = w.derivs(x, u)?;
    let on_psi = ChartPoint {
        x: x.to_vec(),
        u: u.to_vec(),
        v: pd.psi.clone(),
        p: Vec::new(),
        lam: Vec::new(),
    };
    let l = theory.l_bundle(&on_psi)?;
    let mut scalar = -l.value;
    for i in 0..m {
        scalar += wd.d_x[i][i];
        for a in 0..n {
            scalar += pd.psi[a][i] * wd.d_u[i][a];
        }
    }
    let matching = (0..n)
        .map(|a| (0..m).map(|i| wd.d_u[i][a] - l.l_v(a, i)).collect())
        .collect();
    Ok((scalar, matching))
}

// ---------------------------------------------------------------------------
// Grid suites
// ---------------------------------------------------------------------------

/// Generalized Lagrangian HJ suite over `(x, u)`: gates on the full
/// `R_{j,k}^β` table.
#[derive(Debug, Clone)]
pub struct LagGeneralizedSuite {
    theory: FieldTheorySpec,
    psi: JetField,
    f: LagCoefficients,
}

impl LagGeneralizedSuite {
    pub fn new(
        theory: &FieldTheorySpec,
        psi: &JetField,
        f: &LagCoefficients,
    ) -> Result<LagGeneralizedSuite, Error> {
        check_theory_dims(theory, psi.m(), psi.n(), "jet field")?;
        check_theory_dims(theory, f.m(), f.n(), "coefficient table")?;
        Ok(LagGeneralizedSuite {
            theory: theory.clone(),
            psi: psi.clone(),
            f: f.clone(),
        })
    }
}

impl ResidualOp for LagGeneralizedSuite {
    fn chart(&self) -> Chart {
        Chart::base(self.theory.m(), self.theory.n())
    }

    fn families(&self) -> Vec<FamilySpec> {
        let (m, n) = (self.theory.m(), self.theory.n());
        let mut labels = Vec::with_capacity(m * m * n);
        for j in 0..m {
            for k in 0..m {
                for b in 0..n {
                    labels.push(format!("j={} k={} β={}", j + 1, k + 1, b + 1));
                }
            }
        }
        vec![FamilySpec::new("gen_lag_hj", labels, true)]
    }

    fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
        let r = gen_lag_hj_residual(&self.theory, &self.psi, &self.f, &pt.x, &pt.u)?;
        Ok(vec![r.into_iter().flatten().flatten().collect()])
    }
}

/// Standard Lagrangian HJ suite over `(x, u)`: gates on the exact pulled-back
/// form coefficients; the combined-check families ride along for diagnosis.
#[derive(Debug, Clone)]
pub struct LagStandardSuite {
    theory: FieldTheorySpec,
    psi: JetField,
}

impl LagStandardSuite {
    pub fn new(theory: &FieldTheorySpec, psi: &JetField) -> Result<LagStandardSuite, Error> {
        check_theory_dims(theory, psi.m(), psi.n(), "jet field")?;
        Ok(LagStandardSuite {
            theory: theory.clone(),
            psi: psi.clone(),
        })
    }
}

impl ResidualOp for LagStandardSuite {
    fn chart(&self) -> Chart {
        Chart::base(self.theory.m(), self.theory.n())
    }

    fn families(&self) -> Vec<FamilySpec> {
        let (m, n) = (self.theory.m(), self.theory.n());
        vec![
            FamilySpec::new("isotropy_two_form", two_form_labels(m, n), true),
            FamilySpec::new("isotropy_one_form", alpha_labels(n), true),
            FamilySpec::new("combined_check_a", combined_a_labels(m, n), false),
            FamilySpec::new("combined_check_b", alpha_labels(n), false),
        ]
    }

    fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
        let r = lag_isotropy_residual(&self.theory, &self.psi, &pt.x, &pt.u)?;
        Ok(vec![r.two_form, r.one_form, r.combined_a, r.combined_b])
    }
}

/// Classic Lagrangian HJ suite over `(x, u)`: gates on the scalar equation
/// and the momentum-match table.
#[derive(Debug, Clone)]
pub struct LagClassicSuite {
    theory: FieldTheorySpec,
    psi: JetField,
    w: GeneratingForm,
}

impl LagClassicSuite {
    pub fn new(
        theory: &FieldTheorySpec,
        psi: &JetField,
        w: &GeneratingForm,
    ) -> Result<LagClassicSuite, Error> {
        check_theory_dims(theory, psi.m(), psi.n(), "jet field")?;
        check_theory_dims(theory, w.m(), w.n(), "generating form")?;
        Ok(LagClassicSuite {
            theory: theory.clone(),
            psi: psi.clone(),
            w: w.clone(),
        })
    }
}

impl ResidualOp for LagClassicSuite {
    fn chart(&self) -> Chart {
        Chart::base(self.theory.m(), self.theory.n())
    }

    fn families(&self) -> Vec<FamilySpec> {
        let (m, n) = (self.theory.m(), self.theory.n());
        let mut match_labels = Vec::with_capacity(n * m);
        for a in 0..n {
            for i in 0..m {
                match_labels.push(format!("α={} i={}", a + 1, i + 1));
            }
        }
        vec![
            FamilySpec::new("classic_lag_hj", vec!["scalar".into()], true),
            FamilySpec::new("momentum_match", match_labels, true),
        ]
    }

    fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
        let (scalar, matching) =
            lag_generating_residual(&self.theory, &self.psi, &self.w, &pt.x, &pt.u)?;
        Ok(vec![vec![scalar], matching.into_iter().flatten().collect()])
    }
}

/// Euler-Lagrange coefficient check over the jet chart `(x, u, v)`.
#[derive(Debug, Clone)]
pub struct ElCoefficientOp {
    theory: FieldTheorySpec,
    f: LagCoefficients,
}

impl ElCoefficientOp {
    pub fn new(theory: &FieldTheorySpec, f: &LagCoefficients) -> Result<ElCoefficientOp, Error> {
        check_theory_dims(theory, f.m(), f.n(), "coefficient table")?;
        Ok(ElCoefficientOp {
            theory: theory.clone(),
            f: f.clone(),
        })
    }
}

impl ResidualOp for ElCoefficientOp {
    fn chart(&self) -> Chart {
        self.theory.jet_chart()
    }

    fn families(&self) -> Vec<FamilySpec> {
        vec![FamilySpec::new(
            "euler_lagrange",
            alpha_labels(self.theory.n()),
            true,
        )]
    }

    fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
        let jet = JetPoint::new(pt.x.clone(), pt.u.clone(), pt.v.clone())?;
        Ok(vec![el_coefficient_residual(&self.theory, &self.f, &jet)?])
    }
}

/// Integrability check of a coefficient table over the jet chart.
#[derive(Debug, Clone)]
pub struct LagIntegrabilityOp {
    theory: FieldTheorySpec,
    f: LagCoefficients,
}

impl LagIntegrabilityOp {
    pub fn new(theory: &FieldTheorySpec, f: &LagCoefficients) -> Result<LagIntegrabilityOp, Error> {
        check_theory_dims(theory, f.m(), f.n(), "coefficient table")?;
        Ok(LagIntegrabilityOp {
            theory: theory.clone(),
            f: f.clone(),
        })
    }
}

impl ResidualOp for LagIntegrabilityOp {
    fn chart(&self) -> Chart {
        self.theory.jet_chart()
    }

    fn families(&self) -> Vec<FamilySpec> {
        let (m, n) = (self.theory.m(), self.theory.n());
        vec![
            FamilySpec::new("antisymmetry", antisymmetry_labels(m, n), true),
            FamilySpec::new("bracket", bracket_labels(m, n), true),
        ]
    }

    fn eval_at(&self, pt: &ChartPoint) -> Result<Vec<Vec<f64>>, Error> {
        let jet = JetPoint::new(pt.x.clone(), pt.u.clone(), pt.v.clone())?;
        let r = integrability_residual_lag(&self.f, &self.theory, &jet)?;
        Ok(vec![r.antisymmetry, r.bracket])
    }
}
