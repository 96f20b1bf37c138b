//! Restricted and extended Legendre maps, their Newton inverse, and the
//! Hamiltonian function of a regular Lagrangian.
//!
//! Conventions: `p_α^i = ∂L/∂v_i^α` (restricted); the extended map adds the
//! affine coordinate `p0 = L − Σ v_i^α p_α^i`, so `p0 = −H ∘ Leg` holds at
//! every point where both sides are defined.
//!
//! Derived Hamiltonians never differentiate through the Newton iteration.
//! With `v* = Leg⁻¹(p)` the implicit-function identities give
//! `∂H/∂p = v*`, `∂H/∂u = −∂L/∂u`, `∂H/∂x = −∂L/∂x` (right-hand sides at
//! `v = v*`), and with `M = (∂²L/∂v∂v)⁻¹`:
//! `∂²H/∂p∂p = M`, `∂²H/∂u∂p = −(M ∂²L/∂v∂u)ᵀ`, `∂²H/∂x∂p = −(M ∂²L/∂v∂x)ᵀ`.
//! These are verified against finite differences in the test suite.

use crate::error::Error;
use crate::expr::{Expr, ExprAst};
use crate::jet_core::{
    compile, derive_slots, derive_slots_first, eval_slot, Chart, ChartPoint, FieldTheorySpec,
    JetPoint, RestrictedMomentumPoint, Slot,
};
use crate::jet_core::ExtendedMomentumPoint;
use crate::linalg::Lu;

/// Jacobians with determinant magnitude below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-14;

/// Newton iterates whose max-norm exceeds this are declared divergent.
const DIVERGENCE_CAP: f64 = 1e8;

/// Starting point policy for the Newton inversion.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum InitialGuess {
    /// Start from v = 0 (globally convergent for the bundled models on their
    /// stated domains).
    #[default]
    Zero,
    /// Start from a caller-supplied velocity table `v[α][i]` (warm start).
    Provided(Vec<Vec<f64>>),
}

/// Controls the Newton solve behind [`inverse_legendre`] and derived
/// Hamiltonians.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSettings {
    pub max_iterations: usize,
    /// Convergence threshold on `‖∂L/∂v − p‖₂`.
    pub tolerance: f64,
    pub initial: InitialGuess,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            max_iterations: 50,
            tolerance: 1e-12,
            initial: InitialGuess::Zero,
        }
    }
}

/// The restricted Legendre map: `(x, u, v) ↦ (x, u, ∂L/∂v)`.
pub fn restricted_legendre(
    theory: &FieldTheorySpec,
    pt: &JetPoint,
) -> Result<RestrictedMomentumPoint, Error> {
    let d = theory.v_derivs(&ChartPoint::from_jet(pt))?;
    let (m, n) = (theory.m(), theory.n());
    let p = (0..n)
        .map(|a| d.grad[a * m..(a + 1) * m].to_vec())
        .collect();
    RestrictedMomentumPoint::new(pt.x.clone(), pt.u.clone(), p)
}

/// The extended Legendre map: restricted momenta plus
/// `p0 = L − Σ v_i^α p_α^i`.
pub fn extended_legendre(
    theory: &FieldTheorySpec,
    pt: &JetPoint,
) -> Result<ExtendedMomentumPoint, Error> {
    let d = theory.v_derivs(&ChartPoint::from_jet(pt))?;
    let (m, n) = (theory.m(), theory.n());
    let mut p0 = d.value;
    for a in 0..n {
        for i in 0..m {
            p0 -= pt.v[a][i] * d.grad[a * m + i];
        }
    }
    let p = (0..n)
        .map(|a| d.grad[a * m..(a + 1) * m].to_vec())
        .collect();
    Ok(ExtendedMomentumPoint {
        x: pt.x.clone(),
        u: pt.u.clone(),
        p,
        p0,
    })
}

/// Newton solve for `∂L/∂v(x, u, v) = p` at fixed `(x, u)`; returns the flat
/// α-major velocity vector.
fn newton_invert(
    theory: &FieldTheorySpec,
    x: &[f64],
    u: &[f64],
    p_flat: &[f64],
    settings: &NewtonSettings,
) -> Result<Vec<f64>, Error> {
    if settings.tolerance <= 0.0 {
        return Err(Error::InvalidParams(
            "Newton tolerance must be positive".into(),
        ));
    }
    let (m, n) = (theory.m(), theory.n());
    let nm = n * m;
    let v0 = match &settings.initial {
        InitialGuess::Zero => vec![0.0; nm],
        InitialGuess::Provided(v) => {
            if v.len() != n || v.iter().any(|row| row.len() != m) {
                return Err(Error::DimensionMismatch(format!(
                    "initial guess needs shape [{n}][{m}]"
                )));
            }
            v.iter().flatten().copied().collect()
        }
    };
    let mut pt = ChartPoint {
        x: x.to_vec(),
        u: u.to_vec(),
        v: (0..n).map(|a| v0[a * m..(a + 1) * m].to_vec()).collect(),
        p: Vec::new(),
        lam: Vec::new(),
    };
    for iter in 0..=settings.max_iterations {
        let d = theory.v_derivs(&pt)?;
        let r: Vec<f64> = d
            .grad
            .iter()
            .zip(p_flat)
            .map(|(lv, p)| lv - p)
            .collect();
        let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rnorm <= settings.tolerance {
            return Ok(pt.v.iter().flatten().copied().collect());
        }
        if iter == settings.max_iterations {
            return Err(Error::NonConvergence {
                iterations: settings.max_iterations,
                residual: rnorm,
            });
        }
        let lu = Lu::factor(&d.hess, nm);
        let det = lu.det();
        if det.abs() < SINGULAR_DET {
            // Singular at the start: the theory degenerates at the guess.
            // Singular after stepping: the iteration escaped the regular
            // patch, meaning p has no preimage there.
            if iter == 0 {
                return Err(Error::SingularJacobian { det });
            }
            return Err(Error::OutOfDomain(format!(
                "Newton left the regular domain after {iter} steps \
                 (|det Hessian| = {:.3e}); momentum likely outside the \
                 Legendre image",
                det.abs()
            )));
        }
        let delta = lu.solve(&r);
        for a in 0..n {
            for i in 0..m {
                pt.v[a][i] -= delta[a * m + i];
            }
        }
        if pt.v.iter().flatten().any(|x| x.abs() > DIVERGENCE_CAP) {
            return Err(Error::OutOfDomain(format!(
                "Newton iterate diverged after {} steps (|v| > {DIVERGENCE_CAP:.0e}); \
                 momentum likely outside the Legendre image",
                iter + 1
            )));
        }
    }
    unreachable!("loop returns on convergence or exhaustion");
}

/// What to invert: a Lagrangian theory (Newton solve) or a Hamiltonian
/// (velocities read off `∂H/∂p` directly in explicit mode).
#[derive(Clone, Copy)]
pub enum LegendreSource<'a> {
    Theory(&'a FieldTheorySpec),
    Hamiltonian(&'a HamiltonianSpec),
}

impl<'a> From<&'a FieldTheorySpec> for LegendreSource<'a> {
    fn from(t: &'a FieldTheorySpec) -> Self {
        LegendreSource::Theory(t)
    }
}

impl<'a> From<&'a HamiltonianSpec> for LegendreSource<'a> {
    fn from(h: &'a HamiltonianSpec) -> Self {
        LegendreSource::Hamiltonian(h)
    }
}

/// Inverts the restricted Legendre map at a momentum point: finds `v` with
/// `∂L/∂v = p` (Newton), or evaluates `v = ∂H/∂p` for an explicit
/// Hamiltonian.
pub fn inverse_legendre<'a>(
    src: impl Into<LegendreSource<'a>>,
    mpt: &RestrictedMomentumPoint,
    settings: &NewtonSettings,
) -> Result<JetPoint, Error> {
    match src.into() {
        LegendreSource::Theory(theory) => {
            check_dims(theory.m(), theory.n(), mpt)?;
            let p_flat: Vec<f64> = mpt.p.iter().flatten().copied().collect();
            let v = newton_invert(theory, &mpt.x, &mpt.u, &p_flat, settings)?;
            let m = theory.m();
            JetPoint::new(
                mpt.x.clone(),
                mpt.u.clone(),
                (0..theory.n())
                    .map(|a| v[a * m..(a + 1) * m].to_vec())
                    .collect(),
            )
        }
        LegendreSource::Hamiltonian(h) => match &h.inner {
            HamInner::Derived { theory, settings: _ } => {
                inverse_legendre(LegendreSource::Theory(theory), mpt, settings)
            }
            HamInner::Explicit { .. } => {
                check_dims(h.m, h.n, mpt)?;
                let d = h.derivs(&ChartPoint::from_momentum(mpt), false)?;
                let m = h.m;
                JetPoint::new(
                    mpt.x.clone(),
                    mpt.u.clone(),
                    (0..h.n)
                        .map(|a| d.hp[a * m..(a + 1) * m].to_vec())
                        .collect(),
                )
            }
        },
    }
}

fn check_dims(m: usize, n: usize, mpt: &RestrictedMomentumPoint) -> Result<(), Error> {
    if mpt.x.len() != m || mpt.u.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "momentum point has (m, n) = ({}, {}), expected ({m}, {n})",
            mpt.x.len(),
            mpt.u.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Hamiltonians
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum HamInner {
    Explicit {
        ast: ExprAst,
        compiled: Expr<Slot>,
    },
    Derived {
        theory: FieldTheorySpec,
        settings: NewtonSettings,
    },
}

/// A Hamiltonian function `H(x, u, p)`: either an explicit expression or
/// derived from a regular Lagrangian via `H = Σ v p − L` at `v = Leg⁻¹(p)`.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    m: usize,
    n: usize,
    inner: HamInner,
}

impl HamiltonianSpec {
    pub fn explicit(m: usize, n: usize, h: ExprAst) -> Result<HamiltonianSpec, Error> {
        if m < 1 || n < 1 {
            return Err(Error::InvalidParams(format!(
                "Hamiltonian needs m ≥ 1 and n ≥ 1, got m={m}, n={n}"
            )));
        }
        let compiled = compile(&h, &Chart::momentum(m, n))?;
        Ok(HamiltonianSpec {
            m,
            n,
            inner: HamInner::Explicit { ast: h, compiled },
        })
    }

    pub fn derived(theory: FieldTheorySpec, settings: NewtonSettings) -> HamiltonianSpec {
        HamiltonianSpec {
            m: theory.m(),
            n: theory.n(),
            inner: HamInner::Derived { theory, settings },
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn momentum_chart(&self) -> Chart {
        Chart::momentum(self.m, self.n)
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.inner, HamInner::Explicit { .. })
    }

    /// The explicit expression, when there is one.
    pub fn expr(&self) -> Option<&ExprAst> {
        match &self.inner {
            HamInner::Explicit { ast, .. } => Some(ast),
            HamInner::Derived { .. } => None,
        }
    }

    /// The source theory of a derived Hamiltonian.
    pub fn theory(&self) -> Option<&FieldTheorySpec> {
        match &self.inner {
            HamInner::Derived { theory, .. } => Some(theory),
            HamInner::Explicit { .. } => None,
        }
    }

    /// Derivative bundle at a momentum chart point; second-order blocks are
    /// filled only when `second` is set.
    pub(crate) fn derivs(&self, pt: &ChartPoint, second: bool) -> Result<HamDerivs, Error> {
        let (m, n) = (self.m, self.n);
        let nm = n * m;
        match &self.inner {
            HamInner::Explicit { compiled, .. } => {
                let chart = self.momentum_chart();
                let vars = chart.slots();
                let ix_p = |a: usize, i: usize| m + n + a * m + i;
                if !second {
                    let (value, grad) = derive_slots_first(compiled, pt, &vars)?;
                    return Ok(HamDerivs {
                        m,
                        n,
                        value,
                        hx: grad[..m].to_vec(),
                        hu: grad[m..m + n].to_vec(),
                        hp: grad[m + n..].to_vec(),
                        hpp: Vec::new(),
                        hup: Vec::new(),
                        hxp: Vec::new(),
                    });
                }
                let d = derive_slots(compiled, pt, &vars)?;
                let k = vars.len();
                let h = |r: usize, c: usize| d.hess[r * k + c];
                let mut hpp = Vec::with_capacity(nm * nm);
                for a in 0..n {
                    for i in 0..m {
                        for b in 0..n {
                            for j in 0..m {
                                hpp.push(h(ix_p(a, i), ix_p(b, j)));
                            }
                        }
                    }
                }
                let mut hup = Vec::with_capacity(n * nm);
                for b in 0..n {
                    for a in 0..n {
                        for i in 0..m {
                            hup.push(h(m + b, ix_p(a, i)));
                        }
                    }
                }
                let mut hxp = Vec::with_capacity(m * nm);
                for j in 0..m {
                    for a in 0..n {
                        for i in 0..m {
                            hxp.push(h(j, ix_p(a, i)));
                        }
                    }
                }
                Ok(HamDerivs {
                    m,
                    n,
                    value: d.value,
                    hx: d.grad[..m].to_vec(),
                    hu: d.grad[m..m + n].to_vec(),
                    hp: d.grad[m + n..].to_vec(),
                    hpp,
                    hup,
                    hxp,
                })
            }
            HamInner::Derived { theory, settings } => {
                let p_flat: Vec<f64> = pt.p.iter().flatten().copied().collect();
                let v_flat = newton_invert(theory, &pt.x, &pt.u, &p_flat, settings)?;
                let jet_pt = ChartPoint {
                    x: pt.x.clone(),
                    u: pt.u.clone(),
                    v: (0..n)
                        .map(|a| v_flat[a * m..(a + 1) * m].to_vec())
                        .collect(),
                    p: Vec::new(),
                    lam: Vec::new(),
                };
                let l = theory.l_bundle(&jet_pt)?;
                let mut value = -l.value;
                for (v, p) in v_flat.iter().zip(&p_flat) {
                    value += v * p;
                }
                let hx: Vec<f64> = (0..m).map(|j| -l.l_x(j)).collect();
                let hu: Vec<f64> = (0..n).map(|b| -l.l_u(b)).collect();
                let hp = v_flat;
                if !second {
                    return Ok(HamDerivs {
                        m,
                        n,
                        value,
                        hx,
                        hu,
                        hp,
                        hpp: Vec::new(),
                        hup: Vec::new(),
                        hxp: Vec::new(),
                    });
                }
                // M = (L_vv)⁻¹ at v*.
                let mut lvv = Vec::with_capacity(nm * nm);
                for a in 0..n {
                    for i in 0..m {
                        for b in 0..n {
                            for j in 0..m {
                                lvv.push(l.l_vv(a, i, b, j));
                            }
                        }
                    }
                }
                let lu = Lu::factor(&lvv, nm);
                let det = lu.det();
                if det.abs() < SINGULAR_DET {
                    return Err(Error::SingularJacobian { det });
                }
                let mm = lu.invert();
                let hpp = mm.clone();
                // ∂²H/∂u^β∂p_(αi) = −(M L_vu)[(αi)][β]
                let mut hup = vec![0.0; n * nm];
                for b in 0..n {
                    for ai in 0..nm {
                        let mut s = 0.0;
                        for ck in 0..nm {
                            let (c, kk) = (ck / m, ck % m);
                            s += mm[ai * nm + ck] * l.l_vu(c, kk, b);
                        }
                        hup[b * nm + ai] = -s;
                    }
                }
                // ∂²H/∂x^j∂p_(αi) = −(M L_vx)[(αi)][j]
                let mut hxp = vec![0.0; m * nm];
                for j in 0..m {
                    for ai in 0..nm {
                        let mut s = 0.0;
                        for ck in 0..nm {
                            let (c, kk) = (ck / m, ck % m);
                            s += mm[ai * nm + ck] * l.l_vx(c, kk, j);
                        }
                        hxp[j * nm + ai] = -s;
                    }
                }
                Ok(HamDerivs {
                    m,
                    n,
                    value,
                    hx,
                    hu,
                    hp,
                    hpp,
                    hup,
                    hxp,
                })
            }
        }
    }
}

/// First- and second-order data of H at one momentum point; flat `(α, i)`
/// blocks are α-major. Second-order blocks are empty unless requested.
pub(crate) struct HamDerivs {
    m: usize,
    #[allow(dead_code)]
    n: usize,
    pub value: f64,
    /// Read only by the finite-difference cross-checks in tests; filled from
    /// the same gradient slice as the used blocks, so it costs nothing extra.
    #[cfg_attr(not(test), allow(dead_code))]
    pub hx: Vec<f64>,
    pub hu: Vec<f64>,
    hp: Vec<f64>,
    hpp: Vec<f64>,
    hup: Vec<f64>,
    hxp: Vec<f64>,
}

impl HamDerivs {
    pub fn h_p(&self, a: usize, i: usize) -> f64 {
        self.hp[a * self.m + i]
    }
    /// ∂²H/∂p_β^j ∂p_α^k
    pub fn h_pp(&self, b: usize, j: usize, a: usize, k: usize) -> f64 {
        let nm = self.hp.len();
        self.hpp[(b * self.m + j) * nm + a * self.m + k]
    }
    /// ∂²H/∂u^β ∂p_α^k
    pub fn h_up(&self, b: usize, a: usize, k: usize) -> f64 {
        let nm = self.hp.len();
        self.hup[b * nm + a * self.m + k]
    }
    /// ∂²H/∂x^j ∂p_α^k
    pub fn h_xp(&self, j: usize, a: usize, k: usize) -> f64 {
        let nm = self.hp.len();
        self.hxp[j * nm + a * self.m + k]
    }
}

/// Evaluates the Hamiltonian at a momentum point (explicit or derived mode).
pub fn hamiltonian(hspec: &HamiltonianSpec, mpt: &RestrictedMomentumPoint) -> Result<f64, Error> {
    check_dims(hspec.m, hspec.n, mpt)?;
    match &hspec.inner {
        HamInner::Explicit { compiled, .. } => eval_slot(compiled, &ChartPoint::from_momentum(mpt)),
        HamInner::Derived { .. } => Ok(hspec.derivs(&ChartPoint::from_momentum(mpt), false)?.value),
    }
}
