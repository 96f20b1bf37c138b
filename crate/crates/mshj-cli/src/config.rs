//! Run configuration: a flat, sectioned key-value format.
//!
//! ```text
//! # comment (also ;)
//! [model]
//! name = minimal_surface          # builtin, or a custom block:
//! # m = 2
//! # n = 1
//! # lagrangian = sqrt(1 + v1_1^2 + v1_2^2)   (or: hamiltonian = ...)
//!
//! [candidates.psi]
//! kind = jetfield                 # jetfield | section | generating |
//! psi1_1 = 0                      # lag_coefficients | ham_coefficients | family
//! psi1_2 = 0
//!
//! [grid.x1]
//! lo = -1
//! hi = 1
//! count = 21
//!
//! [run]
//! tolerance = 1e-8
//! policy = fail_fast              # or: skip
//!
//! [reconstruct]
//! x0 = 0, 0
//! u0 = 0.7
//! ```
//!
//! Component keys follow the coordinate naming contract: `psi{a}_{i}` /
//! `s{a}_{i}` (field index `a` = 1..n, direction `i` = 1..m, with `psi{a}` /
//! `psi` accepted in mechanics where they are unambiguous), `w{i}` for
//! generating components, `f{j}_{i}_{a}` and `g{a}_{j}_{i}` for coefficient
//! tables (unlisted coefficient entries default to zero), and `l{k} = lo,
//! hi[, count]` for family parameter ranges. Expression strings may use the
//! aliases `t`, `x`, `y`, `q`, `u`, `v`, `p` exactly where the chart accepts
//! them.

use std::collections::BTreeSet;
use std::fmt;

use mshj_core::{
    builtin, parse, Axis, CompleteSolutionFamily, Error, ErrorPolicy, ExprAst, FamilySide,
    FieldTheorySpec, GeneratingForm, GridSpec, HamCoefficients, HamiltonianSpec, JetField,
    LagCoefficients, ModelBundle, ModelParams, MomentumSection, NewtonSettings, QuadraticParams,
};

/// Failure carrying its exit-code class: configuration problems exit 2,
/// numerical failures exit 3, property/residual failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.root() {
                Error::NonConvergence { .. }
                | Error::SingularJacobian { .. }
                | Error::OutOfDomain(_)
                | Error::Expr(mshj_core::ExprError::Domain { .. })
                | Error::BlowUp { .. } => 3,
                Error::SliceFailure { .. }
                | Error::DegenerateJacobian { .. }
                | Error::CoverageMiss { .. } => 1,
                _ => 2,
            },
        }
    }
}

fn cfg(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// ---------------------------------------------------------------------------
// Sectioned key-value parsing
// ---------------------------------------------------------------------------

struct Entry {
    key: String,
    value: String,
    line: usize,
}

pub struct Section {
    name: String,
    entries: Vec<Entry>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.value.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| cfg(format!("[{}] is missing `{key}`", self.name)))
    }

    /// Every entry key must be in `allowed`; reports the first stray key.
    fn check_keys(&self, allowed: &BTreeSet<String>) -> Result<(), CliError> {
        for e in &self.entries {
            if !allowed.contains(&e.key) {
                return Err(cfg(format!(
                    "line {}: unknown key `{}` in [{}]",
                    e.line, e.key, self.name
                )));
            }
        }
        Ok(())
    }
}

fn parse_sections(text: &str) -> Result<Vec<Section>, CliError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with(';') {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| cfg(format!("line {line}: unterminated section header `{t}`")))?
                .trim();
            if name.is_empty() {
                return Err(cfg(format!("line {line}: empty section name")));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(cfg(format!("line {line}: duplicate section [{name}]")));
            }
            sections.push(Section {
                name: name.to_string(),
                entries: Vec::new(),
            });
        } else if let Some((k, v)) = t.split_once('=') {
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(cfg(format!("line {line}: empty key")));
            }
            let section = sections.last_mut().ok_or_else(|| {
                cfg(format!(
                    "line {line}: `{key}` appears before any [section] header"
                ))
            })?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(cfg(format!(
                    "line {line}: duplicate key `{key}` in [{}]",
                    section.name
                )));
            }
            section.entries.push(Entry {
                key,
                value: v.trim().to_string(),
                line,
            });
        } else {
            return Err(cfg(format!(
                "line {line}: expected `key = value` or `[section]`, got `{t}`"
            )));
        }
    }
    Ok(sections)
}

// ---------------------------------------------------------------------------
// Typed value parsing
// ---------------------------------------------------------------------------

fn val_f64(section: &str, key: &str, v: &str) -> Result<f64, CliError> {
    v.parse()
        .map_err(|_| cfg(format!("[{section}] {key}: `{v}` is not a number")))
}

fn val_usize(section: &str, key: &str, v: &str) -> Result<usize, CliError> {
    v.parse()
        .map_err(|_| cfg(format!("[{section}] {key}: `{v}` is not a non-negative integer")))
}

fn val_expr(section: &str, key: &str, v: &str) -> Result<ExprAst, CliError> {
    parse(v).map_err(|e| cfg(format!("[{section}] {key}: {e}")))
}

pub fn val_f64_list(section: &str, key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',')
        .map(|s| val_f64(section, key, s.trim()))
        .collect()
}

fn val_usize_list(section: &str, key: &str, v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',')
        .map(|s| val_usize(section, key, s.trim()))
        .collect()
}

fn val_name_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).collect()
}

// ---------------------------------------------------------------------------
// Candidates
// ---------------------------------------------------------------------------

pub enum Candidate {
    JetField(JetField),
    Section(MomentumSection),
    Generating(GeneratingForm),
    LagCoefficients(LagCoefficients),
    HamCoefficients(HamCoefficients),
    Family {
        side: FamilySide,
        family: CompleteSolutionFamily,
        lambda_grid: GridSpec,
    },
}

impl Candidate {
    pub fn kind(&self) -> &'static str {
        match self {
            Candidate::JetField(_) => "jetfield",
            Candidate::Section(_) => "section",
            Candidate::Generating(_) => "generating",
            Candidate::LagCoefficients(_) => "lag_coefficients",
            Candidate::HamCoefficients(_) => "ham_coefficients",
            Candidate::Family { .. } => "family",
        }
    }
}

/// The alias set for one `(a, i)` component key: `stem{a}_{i}`, plus the
/// mechanics short forms where they are unambiguous.
fn component_keys(stem: &str, a: usize, i: usize, m: usize, n: usize) -> Vec<String> {
    let mut keys = vec![format!("{stem}{a}_{i}")];
    if m == 1 && i == 1 {
        keys.push(format!("{stem}{a}"));
        if n == 1 && a == 1 {
            keys.push(stem.to_string());
        }
    }
    keys
}

/// Looks up one component across its alias set; exactly one spelling may be
/// present.
fn component(sec: &Section, stem: &str, a: usize, i: usize, m: usize, n: usize) -> Result<ExprAst, CliError> {
    let keys = component_keys(stem, a, i, m, n);
    let found: Vec<&String> = keys.iter().filter(|k| sec.get(k).is_some()).collect();
    match found.as_slice() {
        [] => Err(cfg(format!(
            "[{}] is missing component `{}`",
            sec.name, keys[0]
        ))),
        [key] => val_expr(&sec.name, key, sec.get(key).unwrap()),
        _ => Err(cfg(format!(
            "[{}] spells one component twice: {}",
            sec.name,
            found
                .iter()
                .map(|k| format!("`{k}`"))
                .collect::<Vec<_>>()
                .join(" and ")
        ))),
    }
}

/// n×m component matrix (`exprs[a][i]`) under the given key stem.
fn component_matrix(
    sec: &Section,
    stem: &str,
    m: usize,
    n: usize,
    allowed: &mut BTreeSet<String>,
) -> Result<Vec<Vec<ExprAst>>, CliError> {
    let mut rows = Vec::with_capacity(n);
    for a in 1..=n {
        let mut row = Vec::with_capacity(m);
        for i in 1..=m {
            allowed.extend(component_keys(stem, a, i, m, n));
            row.push(component(sec, stem, a, i, m, n)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn build_candidate(sec: &Section, m: usize, n: usize) -> Result<Candidate, CliError> {
    let kind = sec.require("kind")?.to_string();
    let mut allowed: BTreeSet<String> = ["kind".to_string()].into();
    let built = match kind.as_str() {
        "jetfield" => {
            let exprs = component_matrix(sec, "psi", m, n, &mut allowed)?;
            Candidate::JetField(JetField::new(m, n, exprs)?)
        }
        "section" => {
            let exprs = component_matrix(sec, "s", m, n, &mut allowed)?;
            Candidate::Section(MomentumSection::new(m, n, exprs)?)
        }
        "generating" => {
            let mut w = Vec::with_capacity(m);
            for i in 1..=m {
                let keys = if m == 1 {
                    vec![format!("w{i}"), "w".to_string()]
                } else {
                    vec![format!("w{i}")]
                };
                allowed.extend(keys.iter().cloned());
                let found: Vec<&String> = keys.iter().filter(|k| sec.get(k).is_some()).collect();
                let key = match found.as_slice() {
                    [] => {
                        return Err(cfg(format!(
                            "[{}] is missing component `{}`",
                            sec.name, keys[0]
                        )))
                    }
                    [key] => key.as_str(),
                    _ => {
                        return Err(cfg(format!(
                            "[{}] spells `w{i}` twice",
                            sec.name
                        )))
                    }
                };
                w.push(val_expr(&sec.name, key, sec.get(key).unwrap())?);
            }
            Candidate::Generating(GeneratingForm::new(m, n, w)?)
        }
        "lag_coefficients" => {
            // F[j][i][a], sparse with zero default.
            let zero = parse("0").expect("literal");
            let mut table = vec![vec![vec![zero; n]; m]; m];
            for j in 1..=m {
                for i in 1..=m {
                    for a in 1..=n {
                        let key = format!("f{j}_{i}_{a}");
                        if let Some(v) = sec.get(&key) {
                            table[j - 1][i - 1][a - 1] = val_expr(&sec.name, &key, v)?;
                        }
                        allowed.insert(key);
                    }
                }
            }
            Candidate::LagCoefficients(LagCoefficients::new(m, n, table)?)
        }
        "ham_coefficients" => {
            // G[a][j][i], sparse with zero default.
            let zero = parse("0").expect("literal");
            let mut table = vec![vec![vec![zero; m]; m]; n];
            for a in 1..=n {
                for j in 1..=m {
                    for i in 1..=m {
                        let key = format!("g{a}_{j}_{i}");
                        if let Some(v) = sec.get(&key) {
                            table[a - 1][j - 1][i - 1] = val_expr(&sec.name, &key, v)?;
                        }
                        allowed.insert(key);
                    }
                }
            }
            Candidate::HamCoefficients(HamCoefficients::new(m, n, table)?)
        }
        "family" => {
            allowed.insert("side".to_string());
            allowed.insert("constraint".to_string());
            let side = match sec.require("side")? {
                "lagrangian" => FamilySide::Lagrangian,
                "hamiltonian" => FamilySide::Hamiltonian,
                other => {
                    return Err(cfg(format!(
                        "[{}] side: expected lagrangian or hamiltonian, got `{other}`",
                        sec.name
                    )))
                }
            };
            let stem = match side {
                FamilySide::Lagrangian => "psi",
                FamilySide::Hamiltonian => "s",
            };
            let exprs = component_matrix(sec, stem, m, n, &mut allowed)?;
            let mut bounds = Vec::with_capacity(m * n);
            let mut axes = Vec::with_capacity(m * n);
            for k in 1..=m * n {
                let key = format!("l{k}");
                allowed.insert(key.clone());
                let v = sec.require(&key)?;
                let parts = val_f64_list(&sec.name, &key, v)?;
                let (lo, hi, count) = match parts.as_slice() {
                    [lo, hi] => (*lo, *hi, 7.0),
                    [lo, hi, count] => (*lo, *hi, *count),
                    _ => {
                        return Err(cfg(format!(
                            "[{}] {key}: expected `lo, hi` or `lo, hi, count`",
                            sec.name
                        )))
                    }
                };
                if count < 1.0 || count.fract() != 0.0 {
                    return Err(cfg(format!(
                        "[{}] {key}: count must be a positive integer",
                        sec.name
                    )));
                }
                bounds.push((lo, hi));
                axes.push(Axis::new(&key, lo, hi, count as usize)?);
            }
            let mut family = CompleteSolutionFamily::new(side, m, n, exprs, bounds)?;
            if let Some(c) = sec.get("constraint") {
                family = family.with_constraint(val_expr(&sec.name, "constraint", c)?)?;
            }
            Candidate::Family {
                side,
                family,
                lambda_grid: GridSpec::new(axes),
            }
        }
        other => {
            return Err(cfg(format!(
                "[{}] kind: `{other}` is not one of jetfield, section, generating, \
                 lag_coefficients, ham_coefficients, family",
                sec.name
            )))
        }
    };
    sec.check_keys(&allowed)?;
    Ok(built)
}

// ---------------------------------------------------------------------------
// Model block
// ---------------------------------------------------------------------------

struct ModelBuild {
    label: String,
    m: usize,
    n: usize,
    bundle: Option<ModelBundle>,
    theory: Option<FieldTheorySpec>,
    explicit_h: Option<HamiltonianSpec>,
}

fn build_model(sec: &Section) -> Result<ModelBuild, CliError> {
    if let Some(name) = sec.get("name") {
        let mut allowed: BTreeSet<String> = ["name".to_string()].into();
        let params = match name {
            "nonautonomous" => {
                allowed.insert("lagrangian".to_string());
                ModelParams::Lagrangian(val_expr(
                    &sec.name,
                    "lagrangian",
                    sec.require("lagrangian")?,
                )?)
            }
            "quadratic" => {
                allowed.extend(["m".to_string(), "n".to_string(), "potential".to_string()]);
                let m = val_usize(&sec.name, "m", sec.require("m")?)?;
                let n = val_usize(&sec.name, "n", sec.require("n")?)?;
                if m == 0 || n == 0 {
                    return Err(cfg("[model] m and n must be at least 1"));
                }
                let zero = parse("0").expect("literal");
                let mut g = vec![vec![vec![vec![zero.clone(); m]; n]; m]; n];
                let mut gamma = vec![vec![zero; m]; n];
                for a in 1..=n {
                    for i in 1..=m {
                        let gk = format!("gamma{a}_{i}");
                        if let Some(v) = sec.get(&gk) {
                            gamma[a - 1][i - 1] = val_expr(&sec.name, &gk, v)?;
                        }
                        allowed.insert(gk);
                        for b in 1..=n {
                            for j in 1..=m {
                                let key = format!("g{a}_{i}_{b}_{j}");
                                if let Some(v) = sec.get(&key) {
                                    g[a - 1][i - 1][b - 1][j - 1] =
                                        val_expr(&sec.name, &key, v)?;
                                }
                                allowed.insert(key);
                            }
                        }
                    }
                }
                let v = match sec.get("potential") {
                    Some(p) => val_expr(&sec.name, "potential", p)?,
                    None => parse("0").expect("literal"),
                };
                ModelParams::Quadratic(QuadraticParams::new(m, n, g, gamma, v)?)
            }
            _ => ModelParams::None,
        };
        sec.check_keys(&allowed)?;
        let bundle = builtin(name, params)?;
        return Ok(ModelBuild {
            label: name.to_string(),
            m: bundle.theory.m(),
            n: bundle.theory.n(),
            theory: Some(bundle.theory.clone()),
            explicit_h: bundle.hamiltonian.clone(),
            bundle: Some(bundle),
        });
    }

    // Custom model: {m, n, lagrangian} or {m, n, hamiltonian}.
    let allowed: BTreeSet<String> = ["m", "n", "lagrangian", "hamiltonian"]
        .into_iter()
        .map(String::from)
        .collect();
    sec.check_keys(&allowed)?;
    let m = val_usize(&sec.name, "m", sec.require("m")?)?;
    let n = val_usize(&sec.name, "n", sec.require("n")?)?;
    match (sec.get("lagrangian"), sec.get("hamiltonian")) {
        (Some(l), None) => {
            let theory = FieldTheorySpec::new(m, n, val_expr(&sec.name, "lagrangian", l)?)?;
            Ok(ModelBuild {
                label: "custom lagrangian".to_string(),
                m,
                n,
                bundle: None,
                theory: Some(theory),
                explicit_h: None,
            })
        }
        (None, Some(h)) => Ok(ModelBuild {
            label: "custom hamiltonian".to_string(),
            m,
            n,
            bundle: None,
            theory: None,
            explicit_h: Some(HamiltonianSpec::explicit(
                m,
                n,
                val_expr(&sec.name, "hamiltonian", h)?,
            )?),
        }),
        (Some(_), Some(_)) => Err(cfg(
            "[model] declares both lagrangian and hamiltonian; pick one",
        )),
        (None, None) => Err(cfg(
            "[model] needs either `name = <builtin>` or a custom `lagrangian`/`hamiltonian`",
        )),
    }
}

// ---------------------------------------------------------------------------
// The loaded run
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct ReconDefaults {
    pub x0: Option<Vec<f64>>,
    pub u0: Option<Vec<f64>>,
    pub steps: Option<Vec<usize>>,
    pub sweep: Option<Vec<String>>,
}

pub struct Loaded {
    pub label: String,
    pub m: usize,
    pub n: usize,
    pub bundle: Option<ModelBundle>,
    pub theory: Option<FieldTheorySpec>,
    pub explicit_h: Option<HamiltonianSpec>,
    grid: Option<GridSpec>,
    pub tol: f64,
    pub policy: ErrorPolicy,
    pub candidates: Vec<(String, Candidate)>,
    pub recon: ReconDefaults,
}

impl Loaded {
    pub fn grid(&self) -> Result<&GridSpec, CliError> {
        self.grid.as_ref().ok_or_else(|| {
            cfg("no [grid.*] sections declared and the model provides no default grid")
        })
    }

    pub fn theory(&self) -> Result<&FieldTheorySpec, CliError> {
        self.theory.as_ref().ok_or_else(|| {
            cfg("this operation needs a Lagrangian density, but the model declares only a Hamiltonian")
        })
    }

    /// The model's Hamiltonian: explicit where one is declared or bundled,
    /// otherwise derived from the Lagrangian through the Legendre transform.
    pub fn hamiltonian_spec(&self) -> Result<HamiltonianSpec, CliError> {
        if let Some(h) = &self.explicit_h {
            return Ok(h.clone());
        }
        let theory = self.theory()?;
        Ok(HamiltonianSpec::derived(
            theory.clone(),
            NewtonSettings::default(),
        ))
    }

    /// Picks the candidate to act on: by name when requested, otherwise the
    /// unique candidate matching `want`.
    pub fn pick(
        &self,
        kind_label: &str,
        want: impl Fn(&Candidate) -> bool,
        requested: Option<&str>,
    ) -> Result<&Candidate, CliError> {
        if let Some(name) = requested {
            let (_, c) = self
                .candidates
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| {
                    let names: Vec<&str> =
                        self.candidates.iter().map(|(n, _)| n.as_str()).collect();
                    cfg(format!(
                        "no candidate named `{name}` in the config (declared: {})",
                        if names.is_empty() {
                            "none".to_string()
                        } else {
                            names.join(", ")
                        }
                    ))
                })?;
            if !want(c) {
                return Err(cfg(format!(
                    "candidate `{name}` has kind {}, but this operation needs a {kind_label}",
                    c.kind()
                )));
            }
            return Ok(c);
        }
        let matches: Vec<&(String, Candidate)> = self
            .candidates
            .iter()
            .filter(|(_, c)| want(c))
            .collect();
        match matches.as_slice() {
            [] => Err(cfg(format!(
                "the config declares no {kind_label} candidate"
            ))),
            [(_, c)] => Ok(c),
            several => Err(cfg(format!(
                "several {kind_label} candidates declared ({}); pick one with --candidate",
                several
                    .iter()
                    .map(|(n, _)| n.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        }
    }

    /// Candidate name lookup without a kind requirement.
    pub fn by_name(&self, name: &str) -> Option<&Candidate> {
        self.candidates
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
    }

    /// Coefficient table for the Lagrangian side: a declared candidate if
    /// any, else the model's default, else zero.
    pub fn lag_coefficients(&self) -> Result<LagCoefficients, CliError> {
        let declared: Vec<&LagCoefficients> = self
            .candidates
            .iter()
            .filter_map(|(_, c)| match c {
                Candidate::LagCoefficients(f) => Some(f),
                _ => None,
            })
            .collect();
        match declared.as_slice() {
            [] => Ok(match &self.bundle {
                Some(b) => b.f_default.clone(),
                None => LagCoefficients::zero(self.m, self.n),
            }),
            [f] => Ok((*f).clone()),
            _ => Err(cfg(
                "several lag_coefficients candidates declared; keep at most one",
            )),
        }
    }

    /// Coefficient table for the Hamiltonian side, mirroring
    /// [`Loaded::lag_coefficients`].
    pub fn ham_coefficients(&self) -> Result<HamCoefficients, CliError> {
        let declared: Vec<&HamCoefficients> = self
            .candidates
            .iter()
            .filter_map(|(_, c)| match c {
                Candidate::HamCoefficients(g) => Some(g),
                _ => None,
            })
            .collect();
        match declared.as_slice() {
            [] => Ok(match &self.bundle {
                Some(b) => b.g_default.clone(),
                None => HamCoefficients::zero(self.m, self.n),
            }),
            [g] => Ok((*g).clone()),
            _ => Err(cfg(
                "several ham_coefficients candidates declared; keep at most one",
            )),
        }
    }
}

pub fn load(
    text: &str,
    tol_override: Option<f64>,
    grid_scale: Option<usize>,
) -> Result<Loaded, CliError> {
    let sections = parse_sections(text)?;
    let model_sec = sections
        .iter()
        .find(|s| s.name == "model")
        .ok_or_else(|| cfg("missing [model] section"))?;
    let model = build_model(model_sec)?;

    let mut axes = Vec::new();
    let mut candidates = Vec::new();
    let mut tol = None;
    let mut policy = ErrorPolicy::FailFast;
    let mut recon = ReconDefaults::default();
    for sec in &sections {
        if sec.name == "model" {
            continue;
        } else if let Some(axis) = sec.name.strip_prefix("grid.") {
            let allowed: BTreeSet<String> =
                ["lo", "hi", "count"].into_iter().map(String::from).collect();
            sec.check_keys(&allowed)?;
            axes.push(Axis::new(
                axis,
                val_f64(&sec.name, "lo", sec.require("lo")?)?,
                val_f64(&sec.name, "hi", sec.require("hi")?)?,
                val_usize(&sec.name, "count", sec.require("count")?)?,
            )?);
        } else if let Some(name) = sec.name.strip_prefix("candidates.") {
            if name.is_empty() {
                return Err(cfg("candidate section needs a name: [candidates.<name>]"));
            }
            candidates.push((name.to_string(), build_candidate(sec, model.m, model.n)?));
        } else if sec.name == "run" {
            let allowed: BTreeSet<String> =
                ["tolerance", "policy"].into_iter().map(String::from).collect();
            sec.check_keys(&allowed)?;
            if let Some(v) = sec.get("tolerance") {
                tol = Some(val_f64("run", "tolerance", v)?);
            }
            if let Some(v) = sec.get("policy") {
                policy = match v {
                    "fail_fast" => ErrorPolicy::FailFast,
                    "skip" => ErrorPolicy::Skip,
                    other => {
                        return Err(cfg(format!(
                            "[run] policy: expected fail_fast or skip, got `{other}`"
                        )))
                    }
                };
            }
        } else if sec.name == "reconstruct" {
            let allowed: BTreeSet<String> = ["x0", "u0", "steps", "sweep"]
                .into_iter()
                .map(String::from)
                .collect();
            sec.check_keys(&allowed)?;
            recon.x0 = sec
                .get("x0")
                .map(|v| val_f64_list("reconstruct", "x0", v))
                .transpose()?;
            recon.u0 = sec
                .get("u0")
                .map(|v| val_f64_list("reconstruct", "u0", v))
                .transpose()?;
            recon.steps = sec
                .get("steps")
                .map(|v| val_usize_list("reconstruct", "steps", v))
                .transpose()?;
            recon.sweep = sec.get("sweep").map(val_name_list);
        } else {
            return Err(cfg(format!(
                "unknown section [{}] (expected model, run, reconstruct, grid.*, candidates.*)",
                sec.name
            )));
        }
    }

    let mut grid = if axes.is_empty() {
        model.bundle.as_ref().map(|b| b.grid.clone())
    } else {
        Some(GridSpec::new(axes))
    };
    if let Some(factor) = grid_scale {
        if factor == 0 {
            return Err(cfg("--grid-scale must be at least 1"));
        }
        if let Some(g) = grid.as_mut() {
            g.scale_counts(factor);
        }
    }

    Ok(Loaded {
        label: model.label,
        m: model.m,
        n: model.n,
        bundle: model.bundle,
        theory: model.theory,
        explicit_h: model.explicit_h,
        grid,
        tol: tol_override.or(tol).unwrap_or(1e-8),
        policy,
        candidates,
        recon,
    })
}
