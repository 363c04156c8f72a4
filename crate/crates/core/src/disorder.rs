//! Disorder averages over the Gaussian couplings.
//!
//! Three modes: seeded Monte Carlo, tensor Gauss–Hermite quadrature and a
//! tensor trapezoid rule on a truncated grid. Quadrature modes are
//! deterministic and report zero standard error.
//!
//! Every coupling value is drawn from its own ChaCha stream keyed by
//! `(seed, sample index, range ordinal, axis)`, so any sample can be rebuilt
//! alone and the schedule never changes a result. Reductions always run
//! sequentially in index order after a parallel map.

use std::fmt;

use gauss_quad::GaussHermite;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::pauli::{Axis, DisorderSample, HamiltonianSpec};

/// Largest number of couplings handled by the quadrature modes.
pub const MAX_QUAD_COUPLINGS: usize = 6;
/// Largest tensor grid, in evaluation points.
pub const MAX_QUAD_POINTS: usize = 1_000_000;
pub const MIN_GH_NODES: usize = 5;
pub const MAX_GH_NODES: usize = 15;

const DOMAIN_MAIN: u64 = 0;
const DOMAIN_INNER: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mc,
    /// Tensor Gauss–Hermite.
    Gh,
    /// Tensor trapezoid rule on `[-cutoff, cutoff]`.
    Trapezoid,
}

impl Mode {
    pub fn is_quadrature(self) -> bool {
        self != Mode::Mc
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mc => "mc",
            Mode::Gh => "gh",
            Mode::Trapezoid => "trapezoid",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Mode::Mc),
            "gh" | "quadrature" => Ok(Mode::Gh),
            "trapezoid" => Ok(Mode::Trapezoid),
            _ => arg_err(format!("unknown averaging mode '{s}' (mc, gh, trapezoid)")),
        }
    }
}

/// How a disorder average is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Averaging {
    pub mode: Mode,
    pub n_samples: usize,
    pub seed: u64,
    /// Gauss–Hermite nodes per coupling.
    pub nodes: usize,
    pub trapezoid_step: f64,
    pub trapezoid_cutoff: f64,
}

impl Default for Averaging {
    fn default() -> Self {
        Self { mode: Mode::Gh, n_samples: 1000, seed: 1, nodes: 11, trapezoid_step: 0.25, trapezoid_cutoff: 9.0 }
    }
}

impl Averaging {
    pub fn mc(n_samples: usize, seed: u64) -> Self {
        Self { mode: Mode::Mc, n_samples, seed, ..Self::default() }
    }

    pub fn gh(nodes: usize) -> Self {
        Self { mode: Mode::Gh, nodes, ..Self::default() }
    }

    pub fn trapezoid(step: f64, cutoff: f64) -> Self {
        Self { mode: Mode::Trapezoid, trapezoid_step: step, trapezoid_cutoff: cutoff, ..Self::default() }
    }

    /// 1D rule for the quadrature modes.
    pub fn rule(&self) -> Result<Rule> {
        match self.mode {
            Mode::Gh => Rule::gauss_hermite(self.nodes),
            Mode::Trapezoid => Rule::trapezoid(self.trapezoid_step, self.trapezoid_cutoff),
            Mode::Mc => arg_err("Monte Carlo has no quadrature rule"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub mode: Mode,
    pub seed: u64,
}

impl EstimatorResult {
    pub fn exact(mean: f64, n_samples: usize, mode: Mode) -> Self {
        Self { mean, std_error: 0.0, n_samples, mode, seed: 0 }
    }
}

/// Means of several jointly estimated quantities and the covariance of
/// those means.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorEstimate {
    pub means: Vec<f64>,
    /// Covariance of the means (sample covariance / n); zero in quadrature.
    pub cov: Vec<Vec<f64>>,
    pub n_samples: usize,
    pub mode: Mode,
    pub seed: u64,
}

impl VectorEstimate {
    pub fn component(&self, i: usize) -> EstimatorResult {
        EstimatorResult {
            mean: self.means[i],
            std_error: self.cov[i][i].max(0.0).sqrt(),
            n_samples: self.n_samples,
            mode: self.mode,
            seed: self.seed,
        }
    }

    /// `g(means)` with a delta-method standard error from the gradient.
    pub fn delta(&self, value: f64, grad: &[f64]) -> EstimatorResult {
        let mut var = 0.0;
        for (i, gi) in grad.iter().enumerate() {
            for (j, gj) in grad.iter().enumerate() {
                var += gi * self.cov[i][j] * gj;
            }
        }
        EstimatorResult { mean: value, std_error: var.max(0.0).sqrt(), n_samples: self.n_samples, mode: self.mode, seed: self.seed }
    }

    /// Linear combination `Σ c_i mean_i`.
    pub fn linear(&self, c: &[f64]) -> EstimatorResult {
        let v = c.iter().zip(&self.means).map(|(a, b)| a * b).sum();
        self.delta(v, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationPoint {
    pub u: f64,
    pub value: f64,
    pub std_error: f64,
}

// ---------------------------------------------------------------------------
// Sampling

fn normal(seed: u64, domain: u64, index: u64, ordinal: usize, axis: Axis) -> f64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(ordinal as u64 * 3 + axis as u64);
    StandardNormal.sample(&mut rng)
}

fn sample_keyed(spec: &HamiltonianSpec, seed: u64, domain: u64, index: u64) -> DisorderSample {
    let mut values = vec![0.0; spec.num_couplings()];
    for r in 0..spec.random.len() {
        for (p, &mu) in spec.axes.iter().enumerate() {
            values[spec.coupling_index(r, p)] = normal(seed, domain, index, r, mu);
        }
    }
    DisorderSample { values, seed, sample_index: index }
}

/// One disorder realization. The value of `g^μ_X` depends only on
/// `(seed, index, X, μ)`, not on which other axes are active.
pub fn sample_disorder(spec: &HamiltonianSpec, seed: u64, index: u64) -> DisorderSample {
    sample_keyed(spec, seed, DOMAIN_MAIN, index)
}

// ---------------------------------------------------------------------------
// Quadrature rules

/// 1D rule for a standard normal variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// `q`-point Gauss–Hermite rule rescaled from weight `e^{-x²}` to the
    /// standard normal density.
    pub fn gauss_hermite(q: usize) -> Result<Rule> {
        if !(MIN_GH_NODES..=MAX_GH_NODES).contains(&q) {
            return arg_err(format!("Gauss–Hermite nodes must lie in [{MIN_GH_NODES}, {MAX_GH_NODES}], got {q}"));
        }
        let gh = GaussHermite::new(q).map_err(|e| Error::Argument(e.to_string()))?;
        let mut pairs: Vec<(f64, f64)> = gh
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x * std::f64::consts::SQRT_2, w / std::f64::consts::PI.sqrt()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetrize against eigensolver round-off
        let n = pairs.len();
        for i in 0..n / 2 {
            let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
            let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
            pairs[i] = (-x, w);
            pairs[n - 1 - i] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Rule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1 / total).collect() })
    }

    /// Trapezoid rule with nodes `k·step`, `|k·step| ≤ cutoff`, and weights
    /// `step·φ(x)`. Converges geometrically in `1/step` for analytic
    /// integrands.
    pub fn trapezoid(step: f64, cutoff: f64) -> Result<Rule> {
        if !(step > 0.0 && step <= 1.0) || !(cutoff >= 3.0 && cutoff <= 40.0) {
            return arg_err(format!("trapezoid needs step in (0, 1] and cutoff in [3, 40], got {step}, {cutoff}"));
        }
        let k = (cutoff / step).floor() as i64;
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let nodes: Vec<f64> = (-k..=k).map(|i| i as f64 * step).collect();
        let weights = nodes.iter().map(|x| step * norm * (-0.5 * x * x).exp()).collect();
        Ok(Rule { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn grid_size(q: usize, c: usize) -> Result<usize> {
    let mut total = 1usize;
    for _ in 0..c {
        total = total.checked_mul(q).filter(|&t| t <= MAX_QUAD_POINTS).ok_or(Error::Size {
            what: "quadrature grid points",
            value: q.saturating_pow(c as u32),
            cap: MAX_QUAD_POINTS,
        })?;
    }
    Ok(total)
}

/// Fails with a size error when a quadrature average over `spec` would
/// exceed the grid caps. Monte Carlo always passes.
pub fn check_quadrature(spec: &HamiltonianSpec, avg: &Averaging) -> Result<()> {
    if avg.mode.is_quadrature() {
        check_quad(&avg.rule()?, spec.num_couplings())?;
    }
    Ok(())
}

/// Node tuple number `idx` in mixed radix, last coordinate fastest.
fn grid_point(rule: &Rule, c: usize, mut idx: usize, out: &mut [f64]) -> f64 {
    let q = rule.len();
    let mut w = 1.0;
    for k in (0..c).rev() {
        let i = idx % q;
        idx /= q;
        out[k] = rule.nodes[i];
        w *= rule.weights[i];
    }
    w
}

fn check_quad(rule: &Rule, c: usize) -> Result<usize> {
    if c > MAX_QUAD_COUPLINGS {
        return Err(Error::Size { what: "couplings under quadrature", value: c, cap: MAX_QUAD_COUPLINGS });
    }
    grid_size(rule.len(), c)
}

// ---------------------------------------------------------------------------
// Averages

fn collect_ordered<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let out: Vec<Result<T>> = (0..n).into_par_iter().map(|i| f(i).map_err(|e| tag(i, e))).collect();
    out.into_iter().collect()
}

fn tag(index: usize, e: Error) -> Error {
    match e {
        Error::Sample { .. } => e,
        other => Error::Sample { index, source: Box::new(other) },
    }
}

/// Monte Carlo mean over `n` samples with standard error `s/√n`.
pub fn average<F>(f: F, spec: &HamiltonianSpec, n: usize, seed: u64) -> Result<EstimatorResult>
where
    F: Fn(&DisorderSample) -> Result<f64> + Sync,
{
    let v = average_vec(|s| f(s).map(|x| vec![x]), spec, &Averaging::mc(n, seed))?;
    Ok(v.component(0))
}

/// Tensor Gauss–Hermite average with `q` nodes per coupling.
pub fn quadrature_average<F>(f: F, spec: &HamiltonianSpec, q: usize) -> Result<EstimatorResult>
where
    F: Fn(&DisorderSample) -> Result<f64> + Sync,
{
    let v = average_vec(|s| f(s).map(|x| vec![x]), spec, &Averaging::gh(q))?;
    Ok(v.component(0))
}

/// Scalar average in any mode.
pub fn average_with<F>(f: F, spec: &HamiltonianSpec, avg: &Averaging) -> Result<EstimatorResult>
where
    F: Fn(&DisorderSample) -> Result<f64> + Sync,
{
    Ok(average_vec(|s| f(s).map(|x| vec![x]), spec, avg)?.component(0))
}

/// Joint average of a vector-valued per-sample function. All samples must
/// return vectors of the same length.
pub fn average_vec<F>(f: F, spec: &HamiltonianSpec, avg: &Averaging) -> Result<VectorEstimate>
where
    F: Fn(&DisorderSample) -> Result<Vec<f64>> + Sync,
{
    match avg.mode {
        Mode::Mc => {
            let n = avg.n_samples;
            if n < 2 {
                return arg_err("Monte Carlo needs at least 2 samples");
            }
            let rows = collect_ordered(n, |i| f(&sample_disorder(spec, avg.seed, i as u64)))?;
            let (means, cov) = moments(&rows)?;
            let cov = cov.into_iter().map(|r| r.into_iter().map(|c| c / n as f64).collect()).collect();
            Ok(VectorEstimate { means, cov, n_samples: n, mode: Mode::Mc, seed: avg.seed })
        }
        _ => {
            let rule = avg.rule()?;
            let c = spec.num_couplings();
            let total = check_quad(&rule, c)?;
            let rows = collect_ordered(total, |idx| {
                let mut s = DisorderSample::zeros(spec);
                let w = grid_point(&rule, c, idx, &mut s.values);
                s.sample_index = idx as u64;
                Ok((w, f(&s)?))
            })?;
            let m = rows.first().map(|r| r.1.len()).unwrap_or(0);
            let mut means = vec![0.0; m];
            for (w, r) in &rows {
                if r.len() != m {
                    return Err(Error::Dimension { expected: m, got: r.len() });
                }
                for (a, b) in means.iter_mut().zip(r) {
                    *a += w * b;
                }
            }
            Ok(VectorEstimate { means, cov: vec![vec![0.0; m]; m], n_samples: total, mode: avg.mode, seed: 0 })
        }
    }
}

/// Sample means and the unbiased sample covariance.
fn moments(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = rows.len();
    let m = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut means = vec![0.0; m];
    for r in rows {
        if r.len() != m {
            return Err(Error::Dimension { expected: m, got: r.len() });
        }
        for (a, b) in means.iter_mut().zip(r) {
            *a += b;
        }
    }
    for a in &mut means {
        *a /= n as f64;
    }
    let mut cov = vec![vec![0.0; m]; m];
    for r in rows {
        for i in 0..m {
            let di = r[i] - means[i];
            for j in i..m {
                cov[i][j] += di * (r[j] - means[j]);
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    Ok((means, cov))
}

/// `Var f` over the disorder. In Monte Carlo mode this is the unbiased
/// sample variance with standard error `√((m4 − s⁴)/n)`.
pub fn variance_estimate<F>(f: F, spec: &HamiltonianSpec, avg: &Averaging) -> Result<EstimatorResult>
where
    F: Fn(&DisorderSample) -> Result<f64> + Sync,
{
    match avg.mode {
        Mode::Mc => {
            let n = avg.n_samples;
            if n < 4 {
                return arg_err("variance estimate needs at least 4 samples");
            }
            let xs = collect_ordered(n, |i| f(&sample_disorder(spec, avg.seed, i as u64)))?;
            let mean = xs.iter().sum::<f64>() / n as f64;
            let s2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
            let se = ((m4 - s2 * s2).max(0.0) / n as f64).sqrt();
            Ok(EstimatorResult { mean: s2, std_error: se, n_samples: n, mode: Mode::Mc, seed: avg.seed })
        }
        _ => {
            // centre first to avoid cancellation in E f² − (E f)²
            let m = average_with(&f, spec, avg)?.mean;
            let v = average_with(|s| f(s).map(|x| (x - m).powi(2)), spec, avg)?;
            Ok(v)
        }
    }
}

// ---------------------------------------------------------------------------
// Interpolation generating functions

/// `|Λ| E (E_1 ψ(√u g + √(1−u) g_1))²` where only the couplings of `axis`
/// are interpolated (`γ`), or all of them when `axis` is `None` (`χ`).
/// Couplings of other axes keep their outer values.
///
/// Monte Carlo: `n_outer` outer samples, `n_inner` inner draws split in two
/// halves whose means are multiplied, which is unbiased for the squared
/// conditional mean. The same seeds are used at every `u`, so a grid of
/// points shares its random numbers.
///
/// Quadrature: nested tensor rules; the inner mean is squared exactly.
pub fn interpolation_estimate<F>(
    psi: F,
    spec: &HamiltonianSpec,
    volume: usize,
    axis: Option<Axis>,
    u: f64,
    n_inner: usize,
    avg: &Averaging,
) -> Result<InterpolationPoint>
where
    F: Fn(&DisorderSample) -> Result<f64> + Sync,
{
    if !(0.0..=1.0).contains(&u) {
        return arg_err(format!("u must lie in [0, 1], got {u}"));
    }
    let moving: Vec<usize> = match axis {
        Some(mu) => {
            let p = spec
                .axis_position(mu)
                .ok_or_else(|| Error::Context(format!("axis {mu} carries no random couplings")))?;
            (0..spec.random.len()).map(|r| spec.coupling_index(r, p)).collect()
        }
        None => (0..spec.num_couplings()).collect(),
    };
    let (a, b) = (u.sqrt(), (1.0 - u).sqrt());
    let mix = |outer: &DisorderSample, inner: &[f64]| {
        let mut s = outer.clone();
        for (k, &ci) in moving.iter().enumerate() {
            s.values[ci] = a * outer.values[ci] + b * inner[k];
        }
        s
    };
    let vol = volume as f64;
    match avg.mode {
        Mode::Mc => {
            if n_inner < 2 || n_inner % 2 != 0 {
                return arg_err("n_inner must be even and at least 2");
            }
            let n = avg.n_samples;
            if n < 2 {
                return arg_err("Monte Carlo needs at least 2 outer samples");
            }
            let half = n_inner / 2;
            let vals = collect_ordered(n, |i| {
                let outer = sample_disorder(spec, avg.seed, i as u64);
                let mut sums = [0.0f64; 2];
                for j in 0..n_inner {
                    let idx = (i as u64).wrapping_mul(n_inner as u64).wrapping_add(j as u64);
                    let g1 = sample_keyed(spec, avg.seed, DOMAIN_INNER, idx);
                    let inner: Vec<f64> = moving.iter().map(|&ci| g1.values[ci]).collect();
                    sums[j / half] += psi(&mix(&outer, &inner))?;
                }
                Ok(vol * (sums[0] / half as f64) * (sums[1] / half as f64))
            })?;
            let (m, c) = moments(&vals.iter().map(|&x| vec![x]).collect::<Vec<_>>())?;
            Ok(InterpolationPoint { u, value: m[0], std_error: (c[0][0] / n as f64).sqrt() })
        }
        _ => {
            let rule = avg.rule()?;
            let c_out = spec.num_couplings();
            let c_in = moving.len();
            check_quad(&rule, c_out + c_in)?;
            let n_out = grid_size(rule.len(), c_out)?;
            let n_in = grid_size(rule.len(), c_in)?;
            let rows = collect_ordered(n_out, |idx| {
                let mut outer = DisorderSample::zeros(spec);
                let w = grid_point(&rule, c_out, idx, &mut outer.values);
                let mut inner = vec![0.0; c_in];
                let mut e1 = 0.0;
                for k in 0..n_in {
                    let wk = grid_point(&rule, c_in, k, &mut inner);
                    e1 += wk * psi(&mix(&outer, &inner))?;
                }
                Ok(w * e1 * e1)
            })?;
            Ok(InterpolationPoint { u, value: vol * rows.iter().sum::<f64>(), std_error: 0.0 })
        }
    }
}

/// `γ(u)` for one axis.
pub fn gamma_estimate<F>(
    psi: F,
    spec: &HamiltonianSpec,
    volume: usize,
    axis: Axis,
    u: f64,
    n_inner: usize,
    avg: &Averaging,
) -> Result<InterpolationPoint>
where
    F: Fn(&DisorderSample) -> Result<f64> + Sync,
{
    interpolation_estimate(psi, spec, volume, Some(axis), u, n_inner, avg)
}

/// `χ(u)`: all axes interpolated together.
pub fn chi_estimate<F>(
    psi: F,
    spec: &HamiltonianSpec,
    volume: usize,
    u: f64,
    n_inner: usize,
    avg: &Averaging,
) -> Result<InterpolationPoint>
where
    F: Fn(&DisorderSample) -> Result<f64> + Sync,
{
    interpolation_estimate(psi, spec, volume, None, u, n_inner, avg)
}
