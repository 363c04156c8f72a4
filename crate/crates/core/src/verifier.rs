//! Pass/fail checks of the Gaussian integration-by-parts identities, the
//! asymptotic overlap identities (as size trends), variance and convexity
//! bounds, block interpolation and the commuting limit.
//!
//! A report passes when `|residual| ≤ max(tolerance, 3σ)` in Monte Carlo
//! mode and `|residual| ≤ tolerance` in quadrature mode; one-sided checks
//! use the signed residual `lhs − rhs`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::disorder::{
    average_vec, gamma_estimate, sample_disorder, variance_estimate, Averaging, EstimatorResult, Mode,
};
use crate::dsl::{evaluate_many, parse, EvalContext, Expr, IdentityKind, ParsedIdentity};
use crate::error::{Error, Result};
use crate::model::System;
use crate::pauli::{Axis, CMatrix, DisorderSample, HamiltonianSpec, NonRandomTerm, SpinOperator};
use crate::replica::{Atom, AtomTerm, Evaluator};
use crate::spectral::{eigendecompose, log_pressure};

/// Statistical slack in standard errors.
pub const Z_SCORE: f64 = 3.0;
/// Relative tolerance of identities exact at finite size.
pub const EXACT_TOL: f64 = 1e-8;
/// Step of the central difference in `J`.
pub const FD_STEP_J: f64 = 1e-4;
/// Relative tolerance between `E⟨h⟩` and the `J`-derivative of `p`.
pub const FD_TOL_J: f64 = 1e-6;
/// Exponent of the conservative decay envelope of `E(δĥδĥ)_D`.
pub const ENVELOPE_EXPONENT: f64 = 0.25;
/// Grid of the block interpolation parameter and of `γ(u)`.
pub const UNIT_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Holds at every finite size.
    Exact,
    /// Holds in the infinite-volume limit; per-size values are informative.
    Asymptotic,
    /// Comparison of one size against another.
    Trend,
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckKind::Exact => "exact",
            CheckKind::Asymptotic => "asymptotic",
            CheckKind::Trend => "trend",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// `lhs = rhs`
    Eq,
    /// `lhs ≤ rhs`
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub identity: String,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub beta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub std_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub mode: Mode,
    pub seed: u64,
    pub n_samples: usize,
    pub model: String,
    pub kind: CheckKind,
    pub relation: Relation,
    /// One primary report per identity, size and `(β, J)` point.
    pub primary: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl VerifierReport {
    /// Whether a failure of this report should fail a run.
    pub fn gating(&self) -> bool {
        self.kind == CheckKind::Exact
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    fn aux(mut self) -> Self {
        self.primary = false;
        self
    }
}

/// `|r| ≤ max(tol, zσ)` (or the one-sided version) for Monte Carlo,
/// `tol` alone otherwise.
pub fn judge(relation: Relation, residual: f64, tol: f64, std_error: f64, mode: Mode) -> bool {
    let slack = if mode == Mode::Mc { tol.max(Z_SCORE * std_error) } else { tol };
    match relation {
        Relation::Eq => residual.abs() <= slack,
        Relation::Le => residual <= slack,
    }
}

/// Inputs of one report.
#[derive(Debug, Clone)]
struct Verdict<'a> {
    name: &'a str,
    kind: CheckKind,
    relation: Relation,
    lhs: f64,
    rhs: f64,
    residual: EstimatorResult,
    tol: f64,
}

fn make_report(sys: &System, v: Verdict<'_>) -> VerifierReport {
    let r = v.residual;
    VerifierReport {
        identity: v.name.to_string(),
        d: sys.d(),
        l: sys.side(),
        beta: sys.beta,
        j: sys.spec.j,
        lhs: v.lhs,
        rhs: v.rhs,
        residual: r.mean,
        std_error: r.std_error,
        tolerance: v.tol,
        pass: judge(v.relation, r.mean, v.tol, r.std_error, r.mode),
        mode: r.mode,
        seed: r.seed,
        n_samples: r.n_samples,
        model: sys.model.clone(),
        kind: v.kind,
        relation: v.relation,
        primary: true,
        note: None,
    }
}

fn exact_tol(lhs: f64) -> f64 {
    EXACT_TOL * lhs.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// Claims written in the expression language

/// `lhs (= or ≤) rhs`, evaluated jointly on shared samples.
#[derive(Debug, Clone)]
pub struct Claim {
    pub name: String,
    pub kind: CheckKind,
    pub relation: Relation,
    pub lhs: Expr,
    pub rhs: Expr,
    /// `None`: `1e-8·max(1, |lhs|)`.
    pub tol: Option<f64>,
    pub primary: bool,
}

impl Claim {
    fn new(name: &str, kind: CheckKind, relation: Relation, lhs: &str, rhs: &str) -> Result<Claim> {
        Ok(Claim { name: name.into(), kind, relation, lhs: parse(lhs)?, rhs: parse(rhs)?, tol: None, primary: true })
    }

    fn eq(name: &str, kind: CheckKind, lhs: &str, rhs: &str) -> Result<Claim> {
        Claim::new(name, kind, Relation::Eq, lhs, rhs)
    }

    fn le(name: &str, kind: CheckKind, lhs: &str, rhs: &str) -> Result<Claim> {
        Claim::new(name, kind, Relation::Le, lhs, rhs)
    }

    fn tol(mut self, t: f64) -> Self {
        self.tol = Some(t);
        self
    }

    fn aux(mut self) -> Self {
        self.primary = false;
        self
    }

    pub fn from_identity(id: &ParsedIdentity) -> Claim {
        let kind = match id.kind {
            IdentityKind::Exact => CheckKind::Exact,
            IdentityKind::Asymptotic => CheckKind::Asymptotic,
        };
        Claim { name: id.name.clone(), kind, relation: Relation::Eq, lhs: id.lhs.clone(), rhs: id.rhs.clone(), tol: None, primary: true }
    }
}

/// Evaluate claims on one system with a single pass over the samples.
pub fn evaluate_claims(claims: &[Claim], sys: &System, axis: Axis, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let diffs: Vec<Expr> =
        claims.iter().map(|c| Expr::Sub(Box::new(c.lhs.clone()), Box::new(c.rhs.clone()))).collect();
    let mut exprs: Vec<&Expr> = Vec::with_capacity(3 * claims.len());
    for (c, d) in claims.iter().zip(&diffs) {
        exprs.extend([&c.lhs, &c.rhs, d]);
    }
    let vals = evaluate_many(&exprs, &EvalContext { system: sys, axis, avg: *avg })?;
    Ok(claims
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (lhs, rhs, res) = (vals[3 * i].mean, vals[3 * i + 1].mean, vals[3 * i + 2]);
            let tol = c.tol.unwrap_or_else(|| exact_tol(lhs));
            let r = make_report(sys, Verdict { name: &c.name, kind: c.kind, relation: c.relation, lhs, rhs, residual: res, tol });
            if c.primary {
                r
            } else {
                r.aux()
            }
        })
        .collect())
}

/// `Σ_{a=1}^n R(1,a)`
fn sum_r1a(n: usize) -> String {
    (1..=n).map(|a| format!("R(1,{a})")).collect::<Vec<_>>().join(" + ")
}

/// `Σ_{a=1}^n R(a,n+1)`
fn sum_ra_last(n: usize) -> String {
    (1..=n).map(|a| format!("R({a},{})", n + 1)).collect::<Vec<_>>().join(" + ")
}

fn check_f(n: usize, f: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::Precondition("n must be ≥ 1".into()));
    }
    let probe = parse(&format!("E[D[{f}]]"))?;
    if probe.max_replica() > n {
        return Err(Error::Precondition(format!(
            "f uses replica {} but n = {n}; the new replica would collide",
            probe.max_replica()
        )));
    }
    Ok(())
}

/// `E(ĥ f)_D = βJ Σ_{a≤n} E((R_{1,a} − R_{1,n+1}) f)_D`
pub fn ibp_claim(name: &str, n: usize, f: &str) -> Result<Claim> {
    check_f(n, f)?;
    Claim::eq(
        name,
        CheckKind::Exact,
        &format!("E[D[h(1)*({f})]]"),
        &format!("beta*J*E[D[({} - {n}*R(1,{}))*({f})]]", sum_r1a(n), n + 1),
    )
}

/// Finite-size residual of the first overlap identity (single disorder
/// average around the product term).
pub fn gg1_claim(name: &str, n: usize, f: &str) -> Result<Claim> {
    check_f(n, f)?;
    Claim::eq(
        name,
        CheckKind::Asymptotic,
        &format!(
            "E[D[({} - {n}*R(1,{m}) - ({}))*({f})] + D[{}*R(1,2) - R(1,1)]*D[{f}]]",
            sum_r1a(n),
            sum_ra_last(n),
            n + 1,
            m = n + 1
        ),
        "0",
    )
}

/// Finite-size residual of the second overlap identity.
pub fn gg2_claim(name: &str, n: usize, f: &str) -> Result<Claim> {
    check_f(n, f)?;
    Claim::eq(
        name,
        CheckKind::Asymptotic,
        &format!("E[D[({} - {n}*R(1,{}))*({f})]] + E[D[R(1,2) - R(1,1)]]*E[D[{f}]]", sum_r1a(n), n + 1),
        "0",
    )
}

/// Cauchy–Schwarz parts `(E(δĥ f)_D, E(δĥδĥ)_D, E(f f)_D)`.
fn cs_parts(f: &str) -> Result<[Expr; 3]> {
    Ok([
        parse(&format!("E[D[h(1)*({f})] - D[h(1)]*D[{f}]]"))?,
        parse(DELTA_H)?,
        parse(&format!("E[D[({f})*({f})]]"))?,
    ])
}

const DELTA_H: &str = "E[D[h(1)*h(1)] - D[h(1)]*D[h(1)]]";
const BIG_DELTA_H: &str = "E[D[h(1)*h(1)]] - E[D[h(1)]]*E[D[h(1)]]";

fn delta(a: &str, b: &str) -> String {
    format!("E[D[{a}*{b}] - D[{a}]*D[{b}]]")
}

fn big_delta(a: &str, b: &str) -> String {
    format!("(E[D[{a}*{b}]] - E[D[{a}]]*E[D[{b}]])")
}

/// The four limit relations among overlap fluctuations and the ordered
/// chain of their consequences.
pub fn discussion_claims() -> Result<Vec<Claim>> {
    let (r11, r12, r13) = ("R(1,1)", "R(1,2)", "R(1,3)");
    let var_gibbs = "(E[G[R(1,2)]*G[R(1,2)]] - E[G[R(1,2)]]*E[G[R(1,2)]])";
    let var_d11 = "(E[D[R(1,1)]*D[R(1,1)]] - E[D[R(1,1)]]*E[D[R(1,1)]])";
    Ok(vec![
        Claim::eq("disc_i", CheckKind::Asymptotic, &delta(r12, r11), &format!("0.5*{}", delta(r11, r11)))?,
        Claim::eq("disc_ii", CheckKind::Asymptotic, &big_delta(r12, r11), &big_delta(r11, r11))?,
        Claim::eq(
            "disc_iii",
            CheckKind::Asymptotic,
            &delta(r13, r12),
            &format!("0.25*{} + 0.125*{}", delta(r12, r12), delta(r11, r11)),
        )?,
        Claim::eq(
            "disc_iv",
            CheckKind::Asymptotic,
            "3*E[G[R(1,2)]*G[R(1,2)]] - E[D[R(1,2)*R(1,2)]] - 2*E[G[R(1,2)]]*E[G[R(1,2)]]",
            &format!("1.5*{} + 2*{var_d11}", delta(r11, r11)),
        )?,
        Claim::le("chain_lower", CheckKind::Asymptotic, &format!("1.5*{}", delta(r12, r12)), &big_delta(r12, r12))?,
        Claim::le("chain_upper", CheckKind::Asymptotic, &big_delta(r12, r12), &format!("3*{var_gibbs}"))?,
        Claim::le("psd_delta_R12", CheckKind::Exact, "0", &delta(r12, r12))?.tol(1e-9),
    ])
}

/// The right-hand sides of the four limit relations are positive
/// combinations of variances, hence nonnegative at every size.
pub fn discussion_nonneg_claims() -> Result<Vec<Claim>> {
    let d = discussion_claims()?;
    Ok(d[..4]
        .iter()
        .map(|c| Claim {
            name: format!("{}_nonneg", c.name),
            kind: CheckKind::Exact,
            relation: Relation::Le,
            lhs: Expr::Num(0.0),
            rhs: c.rhs.clone(),
            tol: Some(1e-10),
            primary: false,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Hand-built evaluations

/// `Σ_a ((R_{1,a} − R_{1,2} − R_{a,2}) R_{1,1})_D + (2R_{1,2} − R_{1,1})_D (R_{1,1})_D`
/// for one realization, assembled from atom products without the parser.
pub fn gg1_sample_r11(sys: &System, axis: Axis, g: &DisorderSample) -> Result<f64> {
    let sd = sys.spectral(g)?;
    let ctx = sys.replica_context(axis, g)?;
    let mut ev = Evaluator::new(&sd, &ctx)?;
    let ov = |a, b| Atom::Overlap { a, b };
    let r11r11 = ev.eval_term(&AtomTerm::new(1.0, vec![ov(1, 1), ov(1, 1)]))?;
    let r12r11 = ev.eval_term(&AtomTerm::new(1.0, vec![ov(1, 2), ov(1, 1)]))?;
    let r11 = ev.eval_term(&AtomTerm::new(1.0, vec![ov(1, 1)]))?;
    let r12 = ev.eval_term(&AtomTerm::new(1.0, vec![ov(1, 2)]))?;
    Ok(r11r11 - 2.0 * r12r11 + (2.0 * r12 - r11) * r11)
}

/// Disorder average of [`gg1_sample_r11`].
pub fn gg1_hand_built(sys: &System, axis: Axis, avg: &Averaging) -> Result<EstimatorResult> {
    Ok(average_vec(|g| Ok(vec![gg1_sample_r11(sys, axis, g)?]), &sys.spec, avg)?.component(0))
}

// ---------------------------------------------------------------------------
// Individual checks

/// Integration by parts for `f` over `n` replicas.
pub fn check_ibp(n: usize, f: &str, sys: &System, axis: Axis, avg: &Averaging) -> Result<VerifierReport> {
    let name = if f.trim() == "1" { "correq".to_string() } else { format!("correq[n={n},f={f}]") };
    Ok(evaluate_claims(&[ibp_claim(&name, n, f)?], sys, axis, avg)?.remove(0))
}

/// `E⟨h⟩ = βJ E(R̂_{1,1} − R̂_{1,2})_D`, and
/// `(|C|/|Λ|) Σ_μ E⟨h^μ⟩ = ∂p/∂J` by central differences with non-random
/// terms held fixed.
pub fn check_h_expectation(sys: &System, axis: Axis, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let mut out = evaluate_claims(&[ibp_claim("hL", 1, "1")?], sys, axis, avg)?;
    out.push(check_dpdj(sys, avg)?);
    Ok(out)
}

/// `(|C|/|Λ|) Σ_μ ⟨h^μ⟩` for one realization.
fn h_sum(sys: &System, g: &DisorderSample) -> Result<f64> {
    let sd = sys.spectral(g)?;
    let mut total = 0.0;
    for &mu in &sys.spec.axes {
        let ctx = sys.replica_context(mu, g)?;
        let mut ev = Evaluator::new(&sd, &ctx)?;
        let e = ev.expectations(mu)?;
        total += ctx.field.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total / sys.volume() as f64)
}

pub fn check_dpdj(sys: &System, avg: &Averaging) -> Result<VerifierReport> {
    let j = sys.spec.j;
    let fd = |g: &DisorderSample, eps: f64| -> Result<f64> {
        Ok((sys.with_j(j + eps).psi(g)? - sys.with_j(j - eps).psi(g)?) / (2.0 * eps))
    };
    let est = average_vec(|g| Ok(vec![h_sum(sys, g)?, fd(g, FD_STEP_J)?, fd(g, 1e-3)?]), &sys.spec, avg)?;
    let (lhs, rhs) = (est.means[0], est.means[1]);
    let res = est.linear(&[1.0, -1.0, 0.0]);
    let stability = est.means[2] - est.means[1];
    Ok(make_report(
        sys,
        Verdict {
            name: "hL_dpdJ",
            kind: CheckKind::Exact,
            relation: Relation::Eq,
            lhs,
            rhs,
            residual: res,
            tol: FD_TOL_J * rhs.abs().max(1.0),
        },
    )
    .with_note(format!("fd(1e-3) - fd(1e-4) = {stability:e}")))
}

fn combined(a: &VerifierReport, b: &VerifierReport) -> f64 {
    (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
}

/// `|r(L_max)| < |r(L_min)|` beyond combined 3σ, or both within 3σ of 0.
pub fn residual_trend(name: &str, per_l: &[VerifierReport]) -> Option<VerifierReport> {
    let (first, last) = (per_l.first()?, per_l.last()?);
    if per_l.len() < 2 {
        return None;
    }
    let s = combined(first, last);
    let shrinks = first.residual.abs() - last.residual.abs() > Z_SCORE * s;
    let both_zero = first.residual.abs() <= first.tolerance.max(Z_SCORE * first.std_error)
        && last.residual.abs() <= last.tolerance.max(Z_SCORE * last.std_error);
    Some(trend_report(name, first, last, last.residual.abs(), first.residual.abs(), s, shrinks || both_zero))
}

fn trend_report(
    name: &str,
    first: &VerifierReport,
    last: &VerifierReport,
    lhs: f64,
    rhs: f64,
    s: f64,
    pass: bool,
) -> VerifierReport {
    VerifierReport {
        identity: name.to_string(),
        lhs,
        rhs,
        residual: lhs - rhs,
        std_error: s,
        tolerance: 0.0,
        pass,
        kind: CheckKind::Trend,
        relation: Relation::Le,
        primary: false,
        note: Some(format!("L {} -> {}", first.l, last.l)),
        ..last.clone()
    }
}

/// Values decreasing from each size to the next within 3σ and strictly
/// decreasing from the first size to the last.
pub fn decreasing_trend(name: &str, per_l: &[VerifierReport]) -> Option<VerifierReport> {
    if per_l.len() < 2 {
        return None;
    }
    let steps_ok = per_l.windows(2).all(|w| w[1].lhs - w[0].lhs < Z_SCORE * combined(&w[0], &w[1]));
    let (first, last) = (&per_l[0], &per_l[per_l.len() - 1]);
    let strict = last.lhs < first.lhs;
    Some(trend_report(name, first, last, last.lhs, first.lhs, combined(first, last), steps_ok && strict))
}

/// `value(L) ≤ value(L_min)·(L_min/L)^{1/4}` within 3σ for every size.
pub fn envelope_trend(name: &str, per_l: &[VerifierReport]) -> Vec<VerifierReport> {
    let Some(first) = per_l.first() else { return vec![] };
    per_l[1..]
        .iter()
        .map(|r| {
            let bound = first.lhs * (first.l as f64 / r.l as f64).powf(ENVELOPE_EXPONENT);
            let s = combined(first, r);
            trend_report(name, first, r, r.lhs, bound, s, r.lhs - bound <= Z_SCORE * s)
        })
        .collect()
}

/// Overlap identity with Cauchy–Schwarz bound and trend across sizes.
pub fn check_gg1(n: usize, f: &str, systems: &[System], axis: Axis, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let name = "GG1";
    let mut out = Vec::new();
    let mut per_l = Vec::new();
    for sys in systems {
        let [a, b, c] = cs_parts(f)?;
        let claim = gg1_claim(name, n, f)?;
        let diff = Expr::Sub(Box::new(claim.lhs.clone()), Box::new(claim.rhs.clone()));
        let vals = evaluate_many(&[&claim.lhs, &claim.rhs, &diff, &a, &b, &c], &EvalContext { system: sys, axis, avg: *avg })?;
        let r = make_report(
            sys,
            Verdict {
                name,
                kind: CheckKind::Asymptotic,
                relation: Relation::Eq,
                lhs: vals[0].mean,
                rhs: 0.0,
                residual: vals[2],
                tol: exact_tol(vals[0].mean),
            },
        );
        per_l.push(r.clone());
        out.push(r);
        out.push(cs_report(sys, &vals[3], &vals[4], &vals[5]));
    }
    out.extend(residual_trend("GG1_trend", &per_l));
    Ok(out)
}

/// `|E(δĥ f)_D| ≤ √(E(δĥδĥ)_D E(f f)_D)` with a conservative error sum.
fn cs_report(sys: &System, a: &EstimatorResult, b: &EstimatorResult, c: &EstimatorResult) -> VerifierReport {
    let bound = (b.mean.max(0.0) * c.mean.max(0.0)).sqrt();
    let se_bound = if bound > 0.0 { 0.5 * bound * (b.std_error / b.mean.abs() + c.std_error / c.mean.abs()) } else { (b.std_error * c.mean.abs()).sqrt() };
    let res = EstimatorResult { mean: a.mean.abs() - bound, std_error: a.std_error + se_bound, ..*a };
    make_report(
        sys,
        Verdict { name: "GG1_cauchy_schwarz", kind: CheckKind::Exact, relation: Relation::Le, lhs: a.mean.abs(), rhs: bound, residual: res, tol: 1e-10 },
    )
    .aux()
}

/// Second overlap identity per size with `E(ΔĥΔĥ)_D` and both trends.
pub fn check_gg2(n: usize, f: &str, systems: &[System], axis: Axis, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let mut out = Vec::new();
    let (mut res, mut dd) = (Vec::new(), Vec::new());
    for sys in systems {
        let claims = [
            gg2_claim("GG2", n, f)?,
            Claim::eq("Delta_h", CheckKind::Asymptotic, BIG_DELTA_H, "0")?.aux(),
        ];
        let r = evaluate_claims(&claims, sys, axis, avg)?;
        res.push(r[0].clone());
        dd.push(r[1].clone());
        out.extend(r);
    }
    out.extend(residual_trend("GG2_trend", &res));
    out.extend(decreasing_trend("Delta_h_trend", &dd));
    Ok(out)
}

/// `E(δĥδĥ)_D` per size: nonnegative, and under the decay envelope.
pub fn check_fluctuations(systems: &[System], axis: Axis, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let mut out = Vec::new();
    let mut per_l = Vec::new();
    for sys in systems {
        let claims = [
            Claim::eq("delta_h", CheckKind::Asymptotic, DELTA_H, "0")?,
            Claim::le("delta_h_psd", CheckKind::Exact, "0", DELTA_H)?.tol(1e-10).aux(),
        ];
        let r = evaluate_claims(&claims, sys, axis, avg)?;
        per_l.push(r[0].clone());
        out.extend(r);
    }
    out.extend(envelope_trend("delta_h_envelope", &per_l));
    Ok(out)
}

/// The four limit relations, their nonnegativity and the ordered chain.
pub fn discussion_checks(systems: &[System], axis: Axis, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let mut claims = discussion_claims()?;
    claims.extend(discussion_nonneg_claims()?);
    let mut out = Vec::new();
    for sys in systems {
        out.extend(evaluate_claims(&claims, sys, axis, avg)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Variance and interpolation

/// `χ'(1) = (J²/|Λ|) Σ_{X,μ} ⟨σ_X^μ⟩²` for one realization.
pub fn chi_prime_sample(sys: &System, g: &DisorderSample) -> Result<f64> {
    let sd = sys.spectral(g)?;
    let mut total = 0.0;
    for &mu in &sys.spec.axes {
        let ctx = sys.replica_context(mu, g)?;
        let mut ev = Evaluator::new(&sd, &ctx)?;
        total += ev.expectations(mu)?.iter().map(|e| e * e).sum::<f64>();
    }
    Ok(sys.spec.j.powi(2) * total / sys.volume() as f64)
}

/// `|Λ| Var ψ ≤ χ'(1)` per size and boundedness of `|Λ| Var ψ` across sizes.
pub fn check_variance(systems: &[System], avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let mut out = Vec::new();
    let mut per_l: Vec<VerifierReport> = Vec::new();
    for sys in systems {
        let vol = sys.volume() as f64;
        let var = variance_estimate(|g| sys.psi(g), &sys.spec, avg)?;
        let proxy = average_vec(|g| Ok(vec![chi_prime_sample(sys, g)?]), &sys.spec, avg)?.component(0);
        let lhs = vol * var.mean;
        let se = ((vol * var.std_error).powi(2) + proxy.std_error.powi(2)).sqrt();
        let r = make_report(
            sys,
            Verdict {
                name: "varineq",
                kind: CheckKind::Exact,
                relation: Relation::Le,
                lhs,
                rhs: proxy.mean,
                residual: EstimatorResult { mean: lhs - proxy.mean, std_error: se, ..var },
                tol: 1e-10,
            },
        );
        per_l.push(VerifierReport { std_error: vol * var.std_error, ..r.clone() });
        out.push(r);
    }
    if let (Some(first), Some(last)) = (per_l.first(), per_l.last()) {
        if per_l.len() > 1 {
            let s = combined(first, last);
            let max = per_l.iter().map(|r| r.lhs).fold(f64::MIN, f64::max);
            let ok = per_l.iter().all(|r| r.lhs - first.lhs <= Z_SCORE * combined(first, r));
            out.push(trend_report("varineq_bounded", first, last, max, first.lhs, s, ok));
        }
    }
    Ok(out)
}

/// `γ(u)` on [`UNIT_GRID`]: nondecreasing, and `γ(1) − γ(0) = |Λ| Var ψ`.
pub fn check_gamma(sys: &System, axis: Axis, n_inner: usize, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let vol = sys.volume();
    let psi = |g: &DisorderSample| sys.psi(g);
    let pts: Vec<_> =
        UNIT_GRID.iter().map(|&u| gamma_estimate(psi, &sys.spec, vol, axis, u, n_inner, avg)).collect::<Result<_>>()?;
    let est = |v: f64, se: f64| EstimatorResult { mean: v, std_error: se, n_samples: avg.n_samples, mode: avg.mode, seed: avg.seed };
    let mut out = Vec::new();
    let mut worst: Option<VerifierReport> = None;
    for w in pts.windows(2) {
        let s = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        let r = make_report(
            sys,
            Verdict {
                name: "gamma_monotone",
                kind: CheckKind::Exact,
                relation: Relation::Le,
                lhs: w[0].value,
                rhs: w[1].value,
                residual: est(w[0].value - w[1].value, s),
                tol: 1e-12 * w[1].value.abs().max(1.0),
            },
        )
        .with_note(format!("u {} -> {}", w[0].u, w[1].u));
        let worse = match &worst {
            None => true,
            Some(o) => r.residual - Z_SCORE * r.std_error > o.residual - Z_SCORE * o.std_error,
        };
        if worse {
            worst = Some(r.clone());
        }
        out.push(r.aux());
    }
    if let Some(w) = worst {
        let all = out.iter().all(|r| r.pass);
        out.insert(0, VerifierReport { pass: all, primary: true, ..w });
    }
    let var = variance_estimate(psi, &sys.spec, avg)?;
    let (g0, g1) = (&pts[0], &pts[pts.len() - 1]);
    let lhs = g1.value - g0.value;
    let rhs = vol as f64 * var.mean;
    let se = (g0.std_error.powi(2) + g1.std_error.powi(2) + (vol as f64 * var.std_error).powi(2)).sqrt();
    out.push(
        make_report(
            sys,
            Verdict {
                name: "gamma_endpoints",
                kind: CheckKind::Exact,
                relation: Relation::Eq,
                lhs,
                rhs,
                residual: est(lhs - rhs, se),
                tol: exact_tol(lhs),
            },
        )
        .aux(),
    );
    Ok(out)
}

/// Second differences of `p` in `β` (fixed `J`) and in `J` (fixed `β`) on
/// common samples.
pub fn convexity_scan(sys: &System, beta_grid: &[f64], j_grid: &[f64], avg: &Averaging) -> Result<Vec<VerifierReport>> {
    if beta_grid.len() < 3 || j_grid.len() < 3 {
        return Err(Error::Argument("convexity grids need at least 3 points".into()));
    }
    if beta_grid.iter().any(|&b| b <= 0.0) {
        return Err(Error::Domain("pressure needs β > 0".into()));
    }
    let mut out = Vec::new();
    for (label, grid) in [("beta", beta_grid), ("J", j_grid)] {
        let systems: Vec<System> = grid
            .iter()
            .map(|&x| if label == "beta" { sys.with_beta(x) } else { sys.with_j(x) })
            .collect();
        let est = average_vec(|g| systems.iter().map(|s| s.psi(g)).collect(), &sys.spec, avg)?;
        let scale = est.means.iter().fold(0.0f64, |m, p| m.max(p.abs())).max(1.0);
        let mut reports = Vec::new();
        for k in 1..grid.len() - 1 {
            let (x0, x1, x2) = (grid[k - 1], grid[k], grid[k + 1]);
            // divided second difference, sign only
            let (a, b) = (1.0 / ((x1 - x0) * (x2 - x0)), 1.0 / ((x2 - x1) * (x2 - x0)));
            let mut c = vec![0.0; grid.len()];
            c[k - 1] = a;
            c[k] = -(a + b);
            c[k + 1] = b;
            let dd = est.linear(&c);
            let neg = EstimatorResult { mean: -dd.mean, ..dd };
            reports.push(
                make_report(
                    &systems[k],
                    Verdict {
                        name: if label == "beta" { "convexity_beta" } else { "convexity_J" },
                        kind: CheckKind::Exact,
                        relation: Relation::Le,
                        lhs: -dd.mean,
                        rhs: 0.0,
                        residual: neg,
                        tol: 1e-8 * scale,
                    },
                )
                .with_note(format!("{label} in [{x0}, {x2}]")),
            );
        }
        out.extend(reports);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Block interpolation

/// Terms of a Hamiltonian split into the part inside blocks of `block`
/// consecutive sites (1D) and the part crossing block boundaries.
struct BlockSplit {
    inner: Vec<(usize, usize, f64)>,
    cross: Vec<(usize, usize, f64)>,
}

/// `(term index, coupling index or usize::MAX, coefficient)` lists.
fn split_terms(spec: &HamiltonianSpec, block: usize) -> BlockSplit {
    let inside = |sites: &[usize]| sites.iter().all(|s| s / block == sites[0] / block);
    let mut split = BlockSplit { inner: vec![], cross: vec![] };
    for (r, range) in spec.random.ranges.iter().enumerate() {
        for p in 0..spec.axes.len() {
            let entry = (r, spec.coupling_index(r, p), 0.0);
            if inside(range) { split.inner.push(entry) } else { split.cross.push(entry) }
        }
    }
    for (t, term) in spec.nonrandom.iter().enumerate() {
        let entry = (t, usize::MAX, term.coeff);
        if inside(&term.sites) { split.inner.push(entry) } else { split.cross.push(entry) }
    }
    split
}

fn dense_part(sys: &System, g: &DisorderSample, part: &[(usize, usize, f64)]) -> Result<CMatrix> {
    let spec = &sys.spec;
    let n = sys.volume();
    let mut h = CMatrix::zeros(1 << n, 1 << n);
    for &(idx, ci, coeff) in part {
        let (op, c) = if ci == usize::MAX {
            let t = &spec.nonrandom[idx];
            (SpinOperator::new(t.axis, &t.sites, n)?, coeff)
        } else {
            let p = ci % spec.axes.len();
            (SpinOperator::new(spec.axes[p], &spec.random.ranges[idx], n)?, -spec.j * g.values[ci])
        };
        for col in 0..(1 << n) {
            let (row, v) = op.column(col);
            h[(row, col)] += v * c;
        }
    }
    Ok(h)
}

/// Sub-system of one block, sites relabeled to start at 0.
fn block_system(sys: &System, b: usize, block: usize) -> Result<(System, Vec<usize>)> {
    let lo = b * block;
    let within = |s: &[usize]| s.iter().all(|&x| x >= lo && x < lo + block);
    let lat = crate::lattice::build_lattice(1, block)?;
    let mut fam = sys.spec.random.clone();
    let mut map = Vec::new();
    fam.ranges.clear();
    for (r, range) in sys.spec.random.ranges.iter().enumerate() {
        if within(range) {
            fam.ranges.push(range.iter().map(|x| x - lo).collect());
            for p in 0..sys.spec.axes.len() {
                map.push(sys.spec.coupling_index(r, p));
            }
        }
    }
    let nonrandom = sys
        .spec
        .nonrandom
        .iter()
        .filter(|t| within(&t.sites))
        .map(|t| NonRandomTerm { sites: t.sites.iter().map(|x| x - lo).collect(), axis: t.axis, coeff: t.coeff })
        .collect();
    let spec = HamiltonianSpec { j: sys.spec.j, random: fam, axes: sys.spec.axes.clone(), nonrandom };
    Ok((System::new(lat, spec, sys.beta, sys.model.clone())?, map))
}

/// Interpolation `φ(x)` between `M` decoupled blocks (`x = 0`) and the full
/// 1D chain (`x = 1`): endpoints, convexity on [`UNIT_GRID`], the tangent
/// sandwich and the measured boundary constant.
pub fn block_interpolation_check(sys: &System, blocks: usize, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let n = sys.volume();
    if sys.d() != 1 {
        return Err(Error::Precondition("block interpolation is implemented for d = 1".into()));
    }
    if blocks < 2 || n % blocks != 0 {
        return Err(Error::Precondition(format!("{n} sites do not split into {blocks} blocks")));
    }
    if sys.beta <= 0.0 {
        return Err(Error::Domain("pressure needs β > 0".into()));
    }
    let block = n / blocks;
    let split = split_terms(&sys.spec, block);
    let subs: Vec<_> = (0..blocks).map(|b| block_system(sys, b, block)).collect::<Result<_>>()?;
    let nf = n as f64;
    let k = UNIT_GRID.len();
    // per sample: φ(grid), ⟨H_del⟩_0/N, ⟨H_del⟩_1/N, p_L from blocks, ψ_N direct
    let est = average_vec(
        |g| {
            let h0 = dense_part(sys, g, &split.inner)?;
            let hd = dense_part(sys, g, &split.cross)?;
            let mut row = Vec::with_capacity(k + 4);
            let mut hdel = [0.0; 2];
            for &x in &UNIT_GRID {
                let h = &h0 + &hd * crate::pauli::C64::new(x, 0.0);
                let sd = eigendecompose(&h, sys.beta)?;
                row.push(log_pressure(&sd, n)?);
                if x == 0.0 || x == 1.0 {
                    hdel[(x == 1.0) as usize] = crate::spectral::gibbs_expect(&sd, &hd)? / nf;
                }
            }
            row.extend(hdel);
            let mut pl = 0.0;
            for (s, map) in &subs {
                let gb = DisorderSample::from_values(map.iter().map(|&c| g.values[c]).collect());
                pl += s.psi(&gb)?;
            }
            row.push(pl / blocks as f64);
            row.push(sys.psi(g)?);
            Ok(row)
        },
        &sys.spec,
        avg,
    )?;
    let m = &est.means;
    let (phi0, phi1, hd0, hd1, pl, pn) = (m[0], m[k - 1], m[k], m[k + 1], m[k + 2], m[k + 3]);
    let lin = |c: &[(usize, f64)]| {
        let mut v = vec![0.0; m.len()];
        for &(i, x) in c {
            v[i] += x;
        }
        est.linear(&v)
    };
    let mut out = Vec::new();
    let rep = |name: &str, kind, relation, lhs: f64, rhs: f64, res: EstimatorResult, tol: f64| {
        make_report(sys, Verdict { name, kind, relation, lhs, rhs, residual: res, tol })
    };
    let r0 = lin(&[(0, 1.0), (k + 2, -1.0)]);
    out.push(rep("block_phi0", CheckKind::Exact, Relation::Eq, phi0, pl, EstimatorResult { std_error: 0.0, ..r0 }, 1e-10));
    let r1 = lin(&[(k - 1, 1.0), (k + 3, -1.0)]);
    out.push(rep("block_phi1", CheckKind::Exact, Relation::Eq, phi1, pn, EstimatorResult { std_error: 0.0, ..r1 }, 1e-10).aux());
    for i in 1..k - 1 {
        let dd = lin(&[(i - 1, -1.0), (i, 2.0), (i + 1, -1.0)]);
        out.push(
            rep("block_convexity", CheckKind::Exact, Relation::Le, dd.mean, 0.0, dd, 1e-9)
                .with_note(format!("x = {}", UNIT_GRID[i]))
                .aux(),
        );
    }
    let lower = lin(&[(k + 2, 1.0), (k, -1.0), (k + 3, -1.0)]);
    out.push(rep("block_sandwich_lower", CheckKind::Exact, Relation::Le, pl - hd0, pn, lower, 1e-10).aux());
    let upper = lin(&[(k + 3, 1.0), (k + 2, -1.0), (k + 1, 1.0)]);
    out.push(rep("block_sandwich_upper", CheckKind::Exact, Relation::Le, pn, pl - hd1, upper, 1e-10).aux());
    let diff = lin(&[(k + 3, 1.0), (k + 2, -1.0)]);
    let kmeas = diff.mean.abs() * block as f64 / sys.d() as f64;
    out.push(
        rep("block_boundary_constant", CheckKind::Trend, Relation::Le, diff.mean.abs(), sys.d() as f64 / block as f64, EstimatorResult { mean: 0.0, ..diff }, 0.0)
            .with_note(format!("K_meas = {kmeas:.6e}"))
            .aux(),
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// Commuting limit

/// Largest `‖[H, σ_X^μ]‖` over the random operators at one realization.
pub fn commutator_probe(sys: &System, g: &DisorderSample) -> Result<f64> {
    let h = sys.hamiltonian(g)?;
    let mut worst = 0.0f64;
    let mut ops: Vec<SpinOperator> = Vec::new();
    for r in &sys.spec.random.ranges {
        for &mu in &sys.spec.axes {
            ops.push(SpinOperator::new(mu, r, sys.volume())?);
        }
    }
    for op in ops {
        let o = op.to_dense();
        let c = &h * &o - &o * &h;
        worst = worst.max(c.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    Ok(worst)
}

/// Commuting systems: `(R̂_{1,1})_D = 1`, Duhamel blocks equal Gibbs
/// blocks, and the inequality chain collapses.
pub fn classical_limit_suite(sys: &System, axis: Axis, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let probe = commutator_probe(sys, &sample_disorder(&sys.spec, 0x5eed, 0))?;
    if probe > 1e-12 {
        return Err(Error::Precondition(format!("couplings do not commute: ‖[H, σ]‖ = {probe:e}")));
    }
    let mut claims = vec![
        Claim::eq("classical_R11", CheckKind::Exact, "E[D[R(1,1)]]", "1")?.tol(1e-12),
        Claim::eq("classical_R12", CheckKind::Exact, "E[D[R(1,2)]]", "E[G[R(1,2)]]")?.tol(1e-12).aux(),
        Claim::eq("classical_R11R12", CheckKind::Exact, "E[D[R(1,1)*R(1,2)]]", "E[G[R(1,1)*R(1,2)]]")?.tol(1e-12).aux(),
        Claim::eq("classical_R12R12", CheckKind::Exact, "E[D[R(1,2)*R(1,2)]]", "E[G[R(1,2)*R(1,2)]]")?.tol(1e-12).aux(),
        Claim::eq("classical_hR12", CheckKind::Exact, "E[D[h(1)*R(1,2)]]", "E[G[h(1)*R(1,2)]]")?.tol(1e-12).aux(),
        Claim::eq(
            "chain_saturation",
            CheckKind::Asymptotic,
            "3*(E[G[R(1,2)]*G[R(1,2)]] - E[G[R(1,2)]]*E[G[R(1,2)]])",
            &format!("1.5*{}", delta("R(1,2)", "R(1,2)")),
        )?
        .tol(1e-8)
        .aux(),
    ];
    for c in discussion_claims()?.into_iter().take(4) {
        claims.push(Claim { tol: Some(1e-8), primary: false, ..c });
    }
    evaluate_claims(&claims, sys, axis, avg)
}

// ---------------------------------------------------------------------------
// Catalog

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BuiltinInfo {
    pub name: &'static str,
    pub kind: CheckKind,
    /// Replicas used.
    pub replicas: usize,
    /// Largest operator count on one replica inside a Duhamel block.
    pub max_degree: usize,
    pub statement: &'static str,
}

const fn info(name: &'static str, kind: CheckKind, replicas: usize, max_degree: usize, statement: &'static str) -> BuiltinInfo {
    BuiltinInfo { name, kind, replicas, max_degree, statement }
}

pub const BUILTINS: &[BuiltinInfo] = &[
    info("hL", CheckKind::Exact, 2, 2, "E(h)_D = beta J E(R11 - R12)_D"),
    info("hL_dpdJ", CheckKind::Exact, 1, 1, "(|C|/|Lambda|) sum_mu E<h^mu> = dp/dJ by central difference"),
    info("correq", CheckKind::Exact, 2, 4, "E(h R11)_D = beta J E((R11 - R12) R11)_D"),
    info("correq_R12", CheckKind::Exact, 3, 3, "E(h R12)_D = beta J E((R11 + R12 - 2 R13) R12)_D"),
    info("R12_gibbs", CheckKind::Exact, 2, 1, "E(R12)_D = E<R12>"),
    info("GG1", CheckKind::Asymptotic, 2, 4, "E[((R11 - 2 R12) R11)_D + (2 R12 - R11)_D (R11)_D] -> 0"),
    info("GG2", CheckKind::Asymptotic, 2, 4, "E((R11 - R12) R11)_D + E(R12 - R11)_D E(R11)_D -> 0"),
    info("GG2_f1", CheckKind::Exact, 2, 2, "second identity with f = 1 vanishes identically"),
    info("GG2_n2", CheckKind::Asymptotic, 3, 3, "E((R11 + R12 - 2 R13) R12)_D + E(R12 - R11)_D E(R12)_D -> 0"),
    info("GG2_n3", CheckKind::Asymptotic, 4, 2, "E((R11 + R12 + R13 - 3 R14) R23)_D + E(R12 - R11)_D E(R23)_D -> 0"),
    info("delta_h", CheckKind::Asymptotic, 1, 2, "E(dh dh)_D -> 0, dh = h - (h)_D"),
    info("Delta_h", CheckKind::Asymptotic, 1, 2, "E(Dh Dh)_D -> 0, Dh = h - E(h)_D"),
    info("disc_i", CheckKind::Asymptotic, 2, 4, "E(dR12 dR11)_D = 1/2 E(dR11 dR11)_D"),
    info("disc_ii", CheckKind::Asymptotic, 2, 4, "E(DR12 DR11)_D = E(DR11 DR11)_D"),
    info("disc_iii", CheckKind::Asymptotic, 3, 4, "E(dR13 dR12)_D = 1/4 E(dR12 dR12)_D + 1/8 E(dR11 dR11)_D"),
    info("disc_iv", CheckKind::Asymptotic, 2, 4, "3 E<R12>^2 - E(R12 R12)_D - 2 (E<R12>)^2 = 3/2 E(dR11 dR11)_D + 2 Var (R11)_D"),
    info("chain_lower", CheckKind::Asymptotic, 2, 2, "3/2 E(dR12 dR12)_D <= E(DR12 DR12)_D"),
    info("chain_upper", CheckKind::Asymptotic, 2, 2, "E(DR12 DR12)_D <= 3 Var <R12>"),
    info("psd_delta_R12", CheckKind::Exact, 2, 2, "0 <= E(dR12 dR12)_D"),
    info("varineq", CheckKind::Exact, 1, 1, "|Lambda| Var psi <= (J^2/|Lambda|) sum_{X,mu} E<s_X^mu>^2"),
    info("gamma_monotone", CheckKind::Exact, 1, 0, "gamma(u) nondecreasing on u in {0, .25, .5, .75, 1}"),
    info("convexity", CheckKind::Exact, 1, 0, "p convex in beta and in J"),
    info("block_interpolation", CheckKind::Exact, 1, 0, "phi(0) = p_L, phi(1) = p_N, phi convex, tangent sandwich"),
    info("classical_R11", CheckKind::Exact, 2, 4, "commuting couplings: (R11)_D = 1 and Duhamel blocks equal Gibbs blocks"),
];

pub fn builtin(name: &str) -> Option<&'static BuiltinInfo> {
    BUILTINS.iter().find(|b| b.name == name)
}

/// Text listing of the catalog.
pub fn list_builtin_identities() -> String {
    let mut s = String::new();
    for b in BUILTINS {
        s.push_str(&format!(
            "{:<20} {:<11} replicas={} degree<={}  {}\n",
            b.name, b.kind.to_string(), b.replicas, b.max_degree, b.statement
        ));
    }
    s
}

/// Options of the non-expression builtins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinOptions {
    /// Inner draws per outer sample of `γ` in Monte Carlo mode.
    pub gamma_inner: usize,
    /// Blocks of the interpolation check.
    pub blocks: usize,
    /// Relative half-width of the convexity stencils.
    pub convexity_step: f64,
}

impl Default for BuiltinOptions {
    fn default() -> Self {
        Self { gamma_inner: 16, blocks: 2, convexity_step: 0.1 }
    }
}

/// Run named builtins on each system of a size scan (ascending). Expression
/// claims of one size share a single pass over the samples.
pub fn run_builtins(
    names: &[&str],
    systems: &[System],
    axis: Axis,
    avg: &Averaging,
    opts: &BuiltinOptions,
) -> Result<Vec<VerifierReport>> {
    for n in names {
        if builtin(n).is_none() {
            return Err(Error::Config(format!("unknown builtin identity '{n}'")));
        }
    }
    let has = |n: &str| names.contains(&n);
    let mut out = Vec::new();
    let mut by_name: std::collections::BTreeMap<String, Vec<VerifierReport>> = Default::default();
    for sys in systems {
        let mut claims = Vec::new();
        let mut push = |c: Claim| claims.push(c);
        if has("hL") {
            push(ibp_claim("hL", 1, "1")?);
        }
        if has("correq") {
            push(ibp_claim("correq", 1, "R(1,1)")?);
        }
        if has("correq_R12") {
            push(ibp_claim("correq_R12", 2, "R(1,2)")?);
        }
        if has("R12_gibbs") {
            push(Claim::eq("R12_gibbs", CheckKind::Exact, "E[D[R(1,2)]]", "E[G[R(1,2)]]")?);
        }
        if has("GG1") {
            push(gg1_claim("GG1", 1, "R(1,1)")?);
        }
        if has("GG2") {
            push(gg2_claim("GG2", 1, "R(1,1)")?);
        }
        if has("GG2_f1") {
            push(Claim { kind: CheckKind::Exact, ..gg2_claim("GG2_f1", 1, "1")? });
        }
        if has("GG2_n2") {
            push(gg2_claim("GG2_n2", 2, "R(1,2)")?);
        }
        if has("GG2_n3") {
            push(gg2_claim("GG2_n3", 3, "R(2,3)")?);
        }
        if has("delta_h") {
            push(Claim::eq("delta_h", CheckKind::Asymptotic, DELTA_H, "0")?);
            push(Claim::le("delta_h_psd", CheckKind::Exact, "0", DELTA_H)?.tol(1e-10).aux());
        }
        if has("Delta_h") {
            push(Claim::eq("Delta_h", CheckKind::Asymptotic, BIG_DELTA_H, "0")?);
        }
        for c in discussion_claims()? {
            if has(&c.name) {
                push(c);
            }
        }
        if names.iter().any(|n| n.starts_with("disc_")) {
            for c in discussion_nonneg_claims()? {
                if has(c.name.trim_end_matches("_nonneg")) {
                    push(c);
                }
            }
        }
        let mut reports = if claims.is_empty() { vec![] } else { evaluate_claims(&claims, sys, axis, avg)? };
        if has("hL_dpdJ") {
            reports.push(check_dpdj(sys, avg)?);
        }
        if has("varineq") {
            reports.extend(check_variance(std::slice::from_ref(sys), avg)?);
        }
        if has("gamma_monotone") {
            reports.extend(check_gamma(sys, axis, opts.gamma_inner, avg)?);
        }
        if has("convexity") {
            reports.extend(convexity_at_point(sys, opts.convexity_step, avg)?);
        }
        if has("block_interpolation") {
            reports.extend(block_interpolation_check(sys, opts.blocks, avg)?);
        }
        if has("classical_R11") {
            reports.extend(classical_limit_suite(sys, axis, avg)?);
        }
        for r in &reports {
            if r.primary {
                by_name.entry(r.identity.clone()).or_default().push(r.clone());
            }
        }
        out.extend(reports);
    }
    // trends across sizes
    for (name, per_l) in &by_name {
        match name.as_str() {
            "GG1" | "GG2" | "GG2_n2" | "GG2_n3" | "disc_i" | "disc_ii" | "disc_iii" | "disc_iv" => {
                out.extend(residual_trend(&format!("{name}_trend"), per_l))
            }
            "Delta_h" => out.extend(decreasing_trend("Delta_h_trend", per_l)),
            "delta_h" => out.extend(envelope_trend("delta_h_envelope", per_l)),
            "varineq" => {
                if let (Some(first), Some(last)) = (per_l.first(), per_l.last()) {
                    if per_l.len() > 1 {
                        let ok = per_l.iter().all(|r| r.lhs - first.lhs <= Z_SCORE * combined(first, r));
                        out.push(trend_report("varineq_bounded", first, last, last.lhs, first.lhs, combined(first, last), ok));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Convexity stencils `x(1 ± step)` around the system's own `β` and `J`,
/// one primary report (the worse of the two directions).
pub fn convexity_at_point(sys: &System, step: f64, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let b = sys.beta;
    let j = sys.spec.j;
    let jh = if j == 0.0 { step } else { j.abs() * step };
    let mut r = convexity_scan(sys, &[b * (1.0 - step), b, b * (1.0 + step)], &[j - jh, j, j + jh], avg)?;
    let worst = if r[0].residual >= r[1].residual { 0 } else { 1 };
    for (i, x) in r.iter_mut().enumerate() {
        x.primary = i == worst;
        if x.primary {
            x.identity = "convexity".into();
        }
    }
    let all = r.iter().all(|x| x.pass);
    for x in r.iter_mut() {
        if x.primary {
            x.pass = all;
        }
    }
    Ok(r)
}

/// Evaluate identities read from a file.
pub fn run_identities(ids: &[ParsedIdentity], systems: &[System], axis: Axis, avg: &Averaging) -> Result<Vec<VerifierReport>> {
    let claims: Vec<Claim> = ids.iter().map(Claim::from_identity).collect();
    let mut out = Vec::new();
    let mut per: std::collections::BTreeMap<String, Vec<VerifierReport>> = Default::default();
    for sys in systems {
        let r = evaluate_claims(&claims, sys, axis, avg)?;
        for x in &r {
            if x.kind == CheckKind::Asymptotic {
                per.entry(x.identity.clone()).or_default().push(x.clone());
            }
        }
        out.extend(r);
    }
    for (name, v) in per {
        out.extend(residual_trend(&format!("{name}_trend"), &v));
    }
    Ok(out)
}
