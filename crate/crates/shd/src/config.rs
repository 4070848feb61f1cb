//! Experiment configuration: a small INI-style text format.
//!
//! A config has up to six sections. Unknown sections, unknown keys,
//! duplicate keys, and invalid values are all errors that name the
//! offender and its line. Everything except `[problem] kind` and the
//! schedule magnitude has a default; the minimal useful config is
//!
//! ```text
//! [problem]
//! kind = quadratic
//!
//! [kinetic]
//! kind = soft_clip
//!
//! [schedule]
//! kind = harmonic
//!
//! [run]
//! gamma = 1.0
//!
//! [experiment]
//! seeds = 0..4
//! ```
//!
//! Section reference (defaults in parentheses):
//!
//! - `[problem]`: `kind` = `quadratic` | `rosenbrock` | `rastrigin` |
//!   `logistic`; `dim` (2); quadratic: `diag` (ones), `b` (zeros);
//!   logistic: `source` = `fixture` (default) | `synthetic` | `file`,
//!   `mu` (0.1), `n` (100), `data_seed` (0), `path` (file source only).
//! - `[oracle]`: `kind` = `gaussian` (default) | `minibatch`;
//!   `sigma` (0.0); `batch_size` (1).
//! - `[kinetic]`: `kind` = `quadratic` | `relativistic` | `rescaled` |
//!   `soft_clip` | `log_sum_exp` | `half_squared_lp`; `c` (1.0),
//!   `m` (1.0), `eps` (1e-3), `p` (2.0). `log_sum_exp` is pinned to the
//!   problem dimension.
//! - `[schedule]`: `kind` = `harmonic` (default) | `staircase` |
//!   `constant`; harmonic: `a` (1.0), `b` (1.0), `rho` (1.0);
//!   staircase: `beta` (required), `period` (10); constant: `alpha`
//!   (required).
//! - `[run]`: `gamma` (1.0), `q0` (ones), `max_iter` (1000),
//!   `record_every` (10).
//! - `[experiment]`: `seeds` (0), a comma list or a range `lo..hi`;
//!   `methods` (`shd`), comma list of `shd` | `sgd` | `clipped_sgd`;
//!   `clip_radius` (1.0); `beta_grid` (unset), comma list for grid
//!   search; `output_dir` (`shd-out`); `convergence_threshold` (5e-2);
//!   `diagnostics` (none), comma list of `martingale` |
//!   `pseudotrajectory` | `hamiltonian`.
//!
//! Lines whose first non-blank character is `#` or `;` are comments.
//! Values may be wrapped in double quotes.

use crate::kinetic::KineticEnergy;
use crate::objectives::{parse_examples, NoiseModel, Problem};
use crate::optimizer::Schedule;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value` or `[section]`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section `[{name}]`")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: section `[{name}]` appears twice")]
    DuplicateSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}` in section `[{section}]`")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: duplicate key `{key}` in section `[{section}]`")]
    DuplicateKey { line: usize, section: String, key: String },
    #[error("missing required key `{key}` in section `[{section}]`")]
    MissingKey { section: String, key: String },
    #[error("line {line}: key `{key}` in section `[{section}]`: {msg}")]
    BadValue { line: usize, section: String, key: String, msg: String },
    #[error("could not read dataset `{path}`: {msg}")]
    DataFile { path: String, msg: String },
}

/// Which extra diagnostic outputs an experiment produces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Windowed sups of accumulated gradient noise per anchor.
    pub martingale: bool,
    /// Sup-distance between the iterate interpolant and the RK4 flow
    /// per anchor.
    pub pseudotrajectory: bool,
    /// Per-record kinetic energy and exact decay rate.
    pub hamiltonian_trace: bool,
}

impl Diagnostics {
    pub fn enable(&mut self, name: &str) -> bool {
        match name {
            "martingale" => self.martingale = true,
            "pseudotrajectory" => self.pseudotrajectory = true,
            "hamiltonian" => self.hamiltonian_trace = true,
            _ => return false,
        }
        true
    }

    /// Noise and trajectory diagnostics need every iterate recorded.
    pub fn needs_dense_records(&self) -> bool {
        self.martingale || self.pseudotrajectory
    }

    pub fn any(&self) -> bool {
        self.martingale || self.pseudotrajectory || self.hamiltonian_trace
    }
}

/// Optimization method executed by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    /// The kinetic-energy scheme.
    Shd,
    /// Plain SGD baseline.
    Sgd,
    /// SGD with the gradient hard-clipped to a radius.
    ClippedSgd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Shd => "shd",
            Method::Sgd => "sgd",
            Method::ClippedSgd => "clipped_sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shd" => Some(Method::Shd),
            "sgd" => Some(Method::Sgd),
            "clipped_sgd" => Some(Method::ClippedSgd),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully resolved experiment: problem, oracle, method parameters, and
/// output options.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: Arc<Problem>,
    pub noise: NoiseModel,
    pub kinetic: KineticEnergy,
    pub schedule: Schedule,
    pub gamma: f64,
    pub q0: Vec<f64>,
    pub max_iter: u64,
    pub record_every: u64,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub clip_radius: f64,
    pub beta_grid: Option<Vec<f64>>,
    pub output_dir: PathBuf,
    pub convergence_threshold: f64,
    pub diagnostics: Diagnostics,
}

/// Output directory precedence: command-line flag, then the
/// `SHD_OUTPUT_DIR` environment value, then the config value.
pub fn resolve_output_dir(
    config_dir: &Path,
    cli: Option<PathBuf>,
    env: Option<std::ffi::OsString>,
) -> PathBuf {
    if let Some(dir) = cli {
        return dir;
    }
    if let Some(dir) = env {
        return PathBuf::from(dir);
    }
    config_dir.to_path_buf()
}

const SECTIONS: [&str; 6] = ["problem", "oracle", "kinetic", "schedule", "run", "experiment"];

struct Section {
    name: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn empty(name: &str) -> Self {
        Self { name: name.to_string(), entries: BTreeMap::new() }
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn take_f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => parse_f64(&self.name, key, &v, line),
        }
    }

    fn take_u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| ConfigError::BadValue {
                line,
                section: self.name.clone(),
                key: key.to_string(),
                msg: format!("expected a nonnegative integer, got `{v}`"),
            }),
        }
    }

    fn require(&mut self, key: &str) -> Result<(String, usize), ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::MissingKey {
            section: self.name.clone(),
            key: key.to_string(),
        })
    }

    fn bad(&self, key: &str, line: usize, msg: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            line,
            section: self.name.clone(),
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    /// Errors on the first key nothing consumed.
    fn finish(self) -> Result<(), ConfigError> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(ConfigError::UnknownKey { line, section: self.name, key });
        }
        Ok(())
    }
}

fn parse_f64(section: &str, key: &str, v: &str, line: usize) -> Result<f64, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        line,
        section: section.to_string(),
        key: key.to_string(),
        msg: format!("expected a number, got `{v}`"),
    })
}

fn parse_f64_list(section: &str, key: &str, v: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(|item| parse_f64(section, key, item.trim(), line))
        .collect()
}

/// Seed lists accept either `0,1,2` or the half-open range `lo..hi`.
fn parse_seed_list(section: &str, key: &str, v: &str, line: usize) -> Result<Vec<u64>, ConfigError> {
    let bad = |msg: String| ConfigError::BadValue {
        line,
        section: section.to_string(),
        key: key.to_string(),
        msg,
    };
    if let Some((lo, hi)) = v.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad(format!("bad range start `{lo}`")))?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad(format!("bad range end `{hi}`")))?;
        if hi <= lo {
            return Err(bad(format!("empty seed range `{v}`")));
        }
        return Ok((lo..hi).collect());
    }
    v.split(',')
        .map(|item| {
            let item = item.trim();
            item.parse().map_err(|_| bad(format!("expected a seed integer, got `{item}`")))
        })
        .collect()
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim().to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(ConfigError::UnknownSection { line: line_no, name });
            }
            if sections.contains_key(&name) {
                return Err(ConfigError::DuplicateSection { line: line_no, name });
            }
            sections.insert(name.clone(), Section::empty(&name));
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: line_no, text: line.to_string() });
        };
        let Some(section) = current.as_ref() else {
            return Err(ConfigError::Syntax { line: line_no, text: line.to_string() });
        };
        let key = key.trim().to_string();
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        let entry = sections.get_mut(section).expect("current section exists");
        if entry.entries.contains_key(&key) {
            return Err(ConfigError::DuplicateKey {
                line: line_no,
                section: section.clone(),
                key,
            });
        }
        entry.entries.insert(key, (value.to_string(), line_no));
    }
    Ok(sections)
}

/// Parses a config text into a resolved experiment. Logistic `file`
/// sources are read from disk here so every constructed config is ready
/// to run.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut sections = split_sections(text)?;
    let mut grab =
        |name: &str| sections.remove(name).unwrap_or_else(|| Section::empty(name));

    // [problem]
    let mut sec = grab("problem");
    let (p_kind, p_line) = sec.require("kind")?;
    let dim = sec.take_u64("dim", 2)? as usize;
    let problem = match p_kind.as_str() {
        "quadratic" => {
            let diag = match sec.take("diag") {
                None => vec![1.0; dim],
                Some((v, line)) => parse_f64_list("problem", "diag", &v, line)?,
            };
            let dim = diag.len();
            let b = match sec.take("b") {
                None => vec![0.0; dim],
                Some((v, line)) => parse_f64_list("problem", "b", &v, line)?,
            };
            Problem::quadratic_diag(diag, b)
        }
        "rosenbrock" => Ok(Problem::rosenbrock()),
        "rastrigin" => Problem::rastrigin(dim),
        "logistic" => {
            let mu = sec.take_f64("mu", 0.1)?;
            let (source, source_line) = sec
                .take("source")
                .unwrap_or_else(|| ("fixture".to_string(), 0));
            match source.as_str() {
                "fixture" => Problem::logistic_fixture(mu),
                "synthetic" => {
                    let n = sec.take_u64("n", 100)? as usize;
                    let data_seed = sec.take_u64("data_seed", 0)?;
                    Problem::logistic_synthetic(n, dim, data_seed, mu)
                }
                "file" => {
                    let (path, path_line) = sec.require("path")?;
                    let body = std::fs::read_to_string(&path).map_err(|e| {
                        ConfigError::DataFile { path: path.clone(), msg: e.to_string() }
                    })?;
                    let rows = parse_examples(&body).map_err(|e| ConfigError::BadValue {
                        line: path_line,
                        section: "problem".into(),
                        key: "path".into(),
                        msg: e.to_string(),
                    })?;
                    Problem::logistic(rows, mu)
                }
                other => {
                    return Err(sec.bad(
                        "source",
                        source_line,
                        format!("unknown source `{other}`; expected fixture, synthetic, or file"),
                    ));
                }
            }
        }
        other => {
            return Err(sec.bad("kind", p_line, format!("unknown problem kind `{other}`")));
        }
    }
    .map_err(|e| sec.bad("kind", p_line, e.to_string()))?;
    sec.finish()?;
    let problem = Arc::new(problem);
    let dim = problem.dim();

    // [oracle]
    let mut sec = grab("oracle");
    let noise = match sec.take("kind") {
        None => NoiseModel::AdditiveGaussian { sigma: sec.take_f64("sigma", 0.0)? },
        Some((kind, line)) => match kind.as_str() {
            "gaussian" => NoiseModel::AdditiveGaussian { sigma: sec.take_f64("sigma", 0.0)? },
            "minibatch" => NoiseModel::MiniBatch { batch_size: sec.take_u64("batch_size", 1)? as usize },
            other => {
                return Err(sec.bad("kind", line, format!("unknown oracle kind `{other}`")))
            }
        },
    };
    // Validate the pairing now so errors surface at parse time.
    if let Err(e) = crate::objectives::Oracle::new(problem.clone(), noise.clone(), 0) {
        return Err(ConfigError::BadValue {
            line: 0,
            section: "oracle".into(),
            key: "kind".into(),
            msg: e.to_string(),
        });
    }
    sec.finish()?;

    // [kinetic]
    let mut sec = grab("kinetic");
    let (k_kind, k_line) = sec.require("kind")?;
    let kinetic = match k_kind.as_str() {
        "quadratic" => Ok(KineticEnergy::quadratic()),
        "relativistic" => {
            KineticEnergy::relativistic(sec.take_f64("c", 1.0)?, sec.take_f64("m", 1.0)?)
        }
        "rescaled" => KineticEnergy::rescaled(sec.take_f64("c", 1.0)?, sec.take_f64("eps", 1e-3)?),
        "soft_clip" => Ok(KineticEnergy::soft_clip()),
        "log_sum_exp" => KineticEnergy::log_sum_exp(dim),
        "half_squared_lp" => KineticEnergy::half_squared_lp(sec.take_f64("p", 2.0)?),
        other => return Err(sec.bad("kind", k_line, format!("unknown kinetic kind `{other}`"))),
    }
    .map_err(|e| sec.bad("kind", k_line, e.to_string()))?;
    sec.finish()?;

    // [schedule]
    let mut sec = grab("schedule");
    let s_kind = sec.take("kind");
    let (s_name, s_line) = match &s_kind {
        None => ("harmonic", 0),
        Some((v, line)) => (v.as_str(), *line),
    };
    let schedule = match s_name {
        "harmonic" => Schedule::harmonic(
            sec.take_f64("a", 1.0)?,
            sec.take_f64("b", 1.0)?,
            sec.take_f64("rho", 1.0)?,
        ),
        "staircase" => {
            let (beta, beta_line) = sec.require("beta")?;
            let beta = parse_f64("schedule", "beta", &beta, beta_line)?;
            Schedule::staircase(beta, sec.take_u64("period", 10)?)
        }
        "constant" => {
            let (alpha, alpha_line) = sec.require("alpha")?;
            Schedule::constant(parse_f64("schedule", "alpha", &alpha, alpha_line)?)
        }
        other => return Err(sec.bad("kind", s_line, format!("unknown schedule kind `{other}`"))),
    }
    .map_err(|e| sec.bad("kind", s_line, e.to_string()))?;
    sec.finish()?;

    // [run]
    let mut sec = grab("run");
    let gamma = sec.take_f64("gamma", 1.0)?;
    let q0 = match sec.take("q0") {
        None => vec![1.0; dim],
        Some((v, line)) => {
            let q0 = parse_f64_list("run", "q0", &v, line)?;
            if q0.len() != dim {
                return Err(sec.bad(
                    "q0",
                    line,
                    format!("expected {dim} coordinates, got {}", q0.len()),
                ));
            }
            q0
        }
    };
    let max_iter = sec.take_u64("max_iter", 1000)?;
    let record_every = sec.take_u64("record_every", 10)?;
    if record_every == 0 {
        return Err(ConfigError::BadValue {
            line: 0,
            section: "run".into(),
            key: "record_every".into(),
            msg: "must be at least 1".into(),
        });
    }
    sec.finish()?;

    // [experiment]
    let mut sec = grab("experiment");
    let seeds = match sec.take("seeds") {
        None => vec![0],
        Some((v, line)) => parse_seed_list("experiment", "seeds", &v, line)?,
    };
    let methods = match sec.take("methods") {
        None => vec![Method::Shd],
        Some((v, line)) => {
            let mut out = Vec::new();
            for item in v.split(',') {
                let item = item.trim();
                let m = Method::parse(item).ok_or_else(|| {
                    sec.bad("methods", line, format!("unknown method `{item}`"))
                })?;
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            out
        }
    };
    let clip_radius = sec.take_f64("clip_radius", 1.0)?;
    if !(clip_radius > 0.0) {
        return Err(ConfigError::BadValue {
            line: 0,
            section: "experiment".into(),
            key: "clip_radius".into(),
            msg: format!("must be positive, got {clip_radius}"),
        });
    }
    let beta_grid = match sec.take("beta_grid") {
        None => None,
        Some((v, line)) => {
            let grid = parse_f64_list("experiment", "beta_grid", &v, line)?;
            if grid.is_empty() || grid.iter().any(|b| !(*b > 0.0)) {
                return Err(sec.bad("beta_grid", line, "entries must be positive"));
            }
            Some(grid)
        }
    };
    let output_dir = sec
        .take("output_dir")
        .map(|(v, _)| PathBuf::from(v))
        .unwrap_or_else(|| PathBuf::from("shd-out"));
    let convergence_threshold = sec.take_f64("convergence_threshold", 5e-2)?;
    let mut diagnostics = Diagnostics::default();
    if let Some((v, line)) = sec.take("diagnostics") {
        for item in v.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            if !diagnostics.enable(item) {
                return Err(sec.bad("diagnostics", line, format!("unknown diagnostic `{item}`")));
            }
        }
    }
    sec.finish()?;

    // Cross-section validation mirrors the run loop's own checks so a
    // parsed config cannot fail later for structural reasons.
    if let Some(ke_dim) = kinetic.fixed_dim() {
        if ke_dim != dim {
            return Err(ConfigError::BadValue {
                line: k_line,
                section: "kinetic".into(),
                key: "kind".into(),
                msg: format!("kinetic dimension {ke_dim} does not match problem dimension {dim}"),
            });
        }
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(ConfigError::BadValue {
            line: 0,
            section: "run".into(),
            key: "gamma".into(),
            msg: format!("must be nonnegative and finite, got {gamma}"),
        });
    }

    Ok(ExperimentConfig {
        problem,
        noise,
        kinetic,
        schedule,
        gamma,
        q0,
        max_iter,
        record_every,
        seeds,
        methods,
        clip_radius,
        beta_grid,
        output_dir,
        convergence_threshold,
        diagnostics,
    })
}
