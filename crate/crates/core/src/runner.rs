//! Config-driven batch runs: build every system of a scan, run the requested
//! checks and write `reports.jsonl`, `summary.csv` and `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::disorder::{check_quadrature, Averaging, Mode};
use crate::dsl::{parse_identity_file, ParsedIdentity};
use crate::error::{Error, Result};
use crate::lattice::{build_lattice, build_ranges_with, BaseSet, Boundary, RangeOptions};
use crate::model::{custom_system, System};
use crate::pauli::{Axis, NonRandomTerm};
use crate::spectral::{DIM_CAP_K3, DIM_CAP_K4};
use crate::verifier::{builtin, run_builtins, run_identities, BuiltinOptions, VerifierReport};

/// Configs shipped with the crate, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[("single_site_exact", include_str!("../configs/single_site_exact.json"))];

/// A scalar or a list of scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// `coeff · σ^axis` on every translate of `offsets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonRandomBase {
    pub offsets: Vec<Vec<i64>>,
    pub axis: Axis,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    RandomField,
    RandomBond,
    /// Explicit base sets.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelChoice,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: OneOrMany<usize>,
    pub axes: Vec<Axis>,
    #[serde(rename = "J", default = "one")]
    pub j: OneOrMany<f64>,
    #[serde(default = "one")]
    pub beta: OneOrMany<f64>,
    /// Mean of the random bonds.
    #[serde(default)]
    pub g0: f64,
    /// Heisenberg bond strength of the random-field model.
    #[serde(default)]
    pub heisenberg: f64,
    /// Base sets of the random family (custom model), as site offsets.
    #[serde(default)]
    pub base_sets: Vec<Vec<Vec<i64>>>,
    /// Base sets of the non-random part (custom model).
    #[serde(default)]
    pub nonrandom: Vec<NonRandomBase>,
    #[serde(default)]
    pub boundary: Boundary,
}

fn one() -> OneOrMany<f64> {
    OneOrMany::One(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(default)]
    pub builtins: Vec<String>,
    /// Identity files, relative to the config file.
    #[serde(default)]
    pub identity_files: Vec<PathBuf>,
    /// Axis that `R`, `h` and `S` refer to; defaults to the first random axis.
    #[serde(default)]
    pub axis: Option<Axis>,
    #[serde(default = "default_inner")]
    pub gamma_inner: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
}

fn default_inner() -> usize {
    BuiltinOptions::default().gamma_inner
}

fn default_blocks() -> usize {
    BuiltinOptions::default().blocks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("qoverlap-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub averaging: Averaging,
    pub checks: ChecksConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Threads of the sample pool; `None` uses all cores.
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Command-line values that take precedence over the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.averaging.seed = s;
        }
        if let Some(n) = o.samples {
            self.averaging.n_samples = n;
        }
        if let Some(m) = o.mode {
            self.averaging.mode = m;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
    }
}

/// A config with its systems built and identity files parsed.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: RunConfig,
    /// Outer index `(β, J)` point, inner index size (ascending).
    pub scans: Vec<Vec<System>>,
    pub axis: Axis,
    pub identities: Vec<ParsedIdentity>,
}

fn build_system(m: &ModelConfig, side: usize, j: f64, beta: f64) -> Result<System> {
    match m.kind {
        ModelChoice::RandomField => System::random_field(m.d, side, &m.axes, j, m.heisenberg, beta),
        ModelChoice::RandomBond => System::random_bond(m.d, side, &m.axes, j, m.g0, beta),
        ModelChoice::Custom => {
            if m.base_sets.is_empty() {
                return Err(Error::Config("custom model needs base_sets".into()));
            }
            let bases: Vec<BaseSet> = m.base_sets.iter().map(|o| BaseSet::from_offsets(o)).collect();
            let lat = build_lattice(m.d, side)?;
            let opts = RangeOptions { boundary: m.boundary, ..RangeOptions::default() };
            let mut nonrandom = Vec::new();
            for nb in &m.nonrandom {
                for sites in build_ranges_with(&lat, &[BaseSet::from_offsets(&nb.offsets)], opts, "C'")?.ranges {
                    nonrandom.push(NonRandomTerm { sites, axis: nb.axis, coeff: nb.coeff });
                }
            }
            custom_system(m.d, side, &bases, &m.axes, j, nonrandom, beta, m.boundary)
        }
    }
}

impl Plan {
    /// Validate everything that can be checked without diagonalizing.
    pub fn new(config: RunConfig, base_dir: &Path) -> Result<Plan> {
        let m = &config.model;
        if m.axes.is_empty() {
            return Err(Error::Config("model.axes is empty".into()));
        }
        let mut sizes = m.l.to_vec();
        sizes.sort_unstable();
        sizes.dedup();
        let (js, betas) = (m.j.to_vec(), m.beta.to_vec());
        if sizes.is_empty() || js.is_empty() || betas.is_empty() {
            return Err(Error::Config("L, J and beta need at least one value each".into()));
        }
        let axis = config.checks.axis.unwrap_or(m.axes[0]);
        if !m.axes.contains(&axis) {
            return Err(Error::Config(format!("checks.axis {axis} is not a random axis")));
        }
        if config.averaging.mode == Mode::Mc && config.averaging.n_samples < 2 {
            return Err(Error::Config("Monte Carlo needs at least 2 samples".into()));
        }
        if config.averaging.mode.is_quadrature() {
            config.averaging.rule()?;
        }
        let names: Vec<&str> = config.checks.builtins.iter().map(String::as_str).collect();
        let mut max_degree = 0;
        for n in &names {
            let b = builtin(n).ok_or_else(|| Error::Config(format!("unknown builtin identity '{n}'")))?;
            max_degree = max_degree.max(b.max_degree);
        }
        let mut identities = Vec::new();
        for f in &config.checks.identity_files {
            let path = base_dir.join(f);
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read identity file {}: {e}", path.display())))?;
            identities.extend(parse_identity_file(&text)?);
        }
        if names.is_empty() && identities.is_empty() {
            return Err(Error::Config("no checks requested".into()));
        }
        let mut scans = Vec::new();
        for &beta in &betas {
            for &j in &js {
                let mut row = Vec::new();
                for &side in &sizes {
                    let s = build_system(m, side, j, beta)?;
                    let cap = match max_degree {
                        0..=2 => usize::MAX,
                        3 => DIM_CAP_K3,
                        _ => DIM_CAP_K4,
                    };
                    if s.dim() > cap {
                        return Err(Error::Size { what: "Hilbert space dimension for the requested Duhamel order", value: s.dim(), cap });
                    }
                    check_quadrature(&s.spec, &config.averaging)?;
                    row.push(s);
                }
                scans.push(row);
            }
        }
        Ok(Plan { config, scans, axis, identities })
    }

    pub fn options(&self) -> BuiltinOptions {
        BuiltinOptions { gamma_inner: self.config.checks.gamma_inner, blocks: self.config.checks.blocks, ..Default::default() }
    }

    /// Run every check; reports come in a fixed order independent of the
    /// worker count.
    pub fn execute(&self) -> Result<Vec<VerifierReport>> {
        let names: Vec<&str> = self.config.checks.builtins.iter().map(String::as_str).collect();
        let avg = &self.config.averaging;
        let mut out = Vec::new();
        for systems in &self.scans {
            if !names.is_empty() {
                out.extend(run_builtins(&names, systems, self.axis, avg, &self.options())?);
            }
            if !self.identities.is_empty() {
                out.extend(run_identities(&self.identities, systems, self.axis, avg)?);
            }
        }
        Ok(out)
    }
}

/// Run outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub reports: usize,
    pub gating_failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.gating_failures.is_empty() {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config_sha256: String,
    config: &'a RunConfig,
    seed: u64,
    mode: Mode,
    n_samples: usize,
    crate_version: &'static str,
    workers: usize,
    wall_time_s: f64,
    reports: usize,
    gating_failures: &'a [String],
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    identity: &'a str,
    d: usize,
    #[serde(rename = "L")]
    l: usize,
    beta: f64,
    #[serde(rename = "J")]
    j: f64,
    kind: String,
    residual: f64,
    std_error: f64,
    tolerance: f64,
    pass: bool,
}

/// Exact checks that failed, by `identity@L=..,beta=..,J=..`.
pub fn gating_failures(reports: &[VerifierReport]) -> Vec<String> {
    reports
        .iter()
        .filter(|r| r.gating() && !r.pass)
        .map(|r| format!("{}@L={},beta={},J={}", r.identity, r.l, r.beta, r.j))
        .collect()
}

/// Write the three output files into `dir`.
pub fn write_outputs(
    dir: &Path,
    config: &RunConfig,
    config_bytes: &[u8],
    reports: &[VerifierReport],
    workers: usize,
    wall_time_s: f64,
) -> Result<Outcome> {
    fs::create_dir_all(dir)?;
    let mut jsonl = String::new();
    for r in reports {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    fs::write(dir.join("reports.jsonl"), jsonl)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for r in reports.iter().filter(|r| r.primary) {
        w.serialize(SummaryRow {
            identity: &r.identity,
            d: r.d,
            l: r.l,
            beta: r.beta,
            j: r.j,
            kind: r.kind.to_string(),
            residual: r.residual,
            std_error: r.std_error,
            tolerance: r.tolerance,
            pass: r.pass,
        })?;
    }
    w.flush()?;
    let failures = gating_failures(reports);
    let manifest = Manifest {
        config_sha256: format!("{:x}", Sha256::digest(config_bytes)),
        config,
        seed: config.averaging.seed,
        mode: config.averaging.mode,
        n_samples: config.averaging.n_samples,
        crate_version: env!("CARGO_PKG_VERSION"),
        workers,
        wall_time_s,
        reports: reports.len(),
        gating_failures: &failures,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(Outcome { reports: reports.len(), gating_failures: failures })
}

/// Config text and base directory for a path or a bundled name.
pub fn load_config_text(path_or_name: &str) -> Result<(String, PathBuf)> {
    if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == path_or_name) {
        return Ok((text.to_string(), PathBuf::from(".")));
    }
    let p = Path::new(path_or_name);
    let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
    Ok((text, p.parent().map(Path::to_path_buf).unwrap_or_default()))
}

/// Load, validate, run and write outputs.
pub fn run(path_or_name: &str, overrides: &Overrides) -> Result<Outcome> {
    let start = Instant::now();
    let (text, base) = load_config_text(path_or_name)?;
    let mut config = RunConfig::from_json(&text)?;
    config.apply(overrides);
    let plan = Plan::new(config, &base)?;
    let workers = plan.config.workers.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let reports = pool.install(|| plan.execute())?;
    let outcome = write_outputs(
        &plan.config.output.dir,
        &plan.config,
        text.as_bytes(),
        &reports,
        workers,
        start.elapsed().as_secs_f64(),
    )?;
    Ok(outcome)
}

/// `0` all exact checks passed, `1` an exact check failed, `2` the config
/// was rejected or the run could not complete.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) => o.exit_code(),
        Err(_) => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> String {
        format!(
            r#"{{"model": {{"kind": "random_field", "d": 1, "L": 1, "axes": ["z"], "beta": [0.5, 1.0]}},
                "averaging": {{"mode": "trapezoid"}},
                "checks": {{"builtins": ["hL", "correq"]}}{extra}}}"#
        )
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(&config("")).is_ok());
        assert!(matches!(RunConfig::from_json(&config(r#", "colour": 1"#)), Err(Error::Config(_))));
        let bad = config("").replace(r#""d": 1"#, r#""d": 1, "dims": 2"#);
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn plan_validation() {
        let c = RunConfig::from_json(&config("")).unwrap();
        let plan = Plan::new(c.clone(), Path::new(".")).unwrap();
        assert_eq!(plan.scans.len(), 2);
        let mut big = c.clone();
        big.model.l = OneOrMany::One(11);
        assert!(matches!(Plan::new(big, Path::new(".")), Err(Error::Size { .. })));
        let mut unk = c.clone();
        unk.checks.builtins.push("nope".into());
        assert!(matches!(Plan::new(unk, Path::new(".")), Err(Error::Config(_))));
        // R11·R11 needs order 4: 7 sites is over the cap
        let mut deep = c;
        deep.model.l = OneOrMany::One(7);
        deep.averaging = Averaging::mc(10, 1);
        assert!(matches!(Plan::new(deep, Path::new(".")), Err(Error::Size { .. })));
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::from_json(&config("")).unwrap();
        c.apply(&Overrides { seed: Some(9), samples: Some(33), mode: Some(Mode::Mc), out: Some("x".into()) });
        assert_eq!((c.averaging.seed, c.averaging.n_samples, c.averaging.mode), (9, 33, Mode::Mc));
        assert_eq!(c.output.dir, PathBuf::from("x"));
    }

    #[test]
    fn bundled_config_parses() {
        for (name, text) in BUNDLED {
            let c = RunConfig::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            Plan::new(c, Path::new(".")).unwrap();
        }
    }
}
