//! Flat `key = value` experiment configuration. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use reslab::model::{BlockSpec, InnerKind};
use reslab::LossKind;

use crate::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Theorem1Sweep,
    Theorem2Check,
    RademacherSweep,
    Prop1,
    NonMonotone,
}

impl ExperimentKind {
    fn parse(s: &str) -> Option<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        Some(match key.as_str() {
            "theorem1sweep" => Self::Theorem1Sweep,
            "theorem2check" => Self::Theorem2Check,
            "rademachersweep" => Self::RademacherSweep,
            "prop1" => Self::Prop1,
            "nonmonotone" => Self::NonMonotone,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// The six-point dataset with label offset `rho`.
    Builtin(f64),
    /// The three-point dataset of the non-monotone example.
    NonMonotone,
    /// A fresh generated dataset per seed.
    Random,
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Fixed(Vec<BlockSpec>),
    /// A fresh small architecture per seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dataset: Option<DatasetSource>,
    pub architecture: Option<Architecture>,
    pub output_bias: Option<bool>,
    pub loss: LossKind,
    pub seeds: Vec<u64>,
    pub grad_tol: f64,
    pub rank_tol: f64,
    pub min_kink_margin: f64,
    /// Unset means the default of the experiment kind.
    pub restarts: Option<usize>,
    pub trials: usize,
    pub max_iters: Option<usize>,
    pub polish_steps: usize,
    pub init_scale: f64,
    pub zero_head: bool,
    pub nonneg_init: bool,
    pub rho: f64,
    pub radii: Vec<f64>,
    pub widths: Option<Vec<usize>>,
    pub n: usize,
    pub d_x: usize,
    pub exhaustive: bool,
    pub output: Option<PathBuf>,
    /// Every key as written, for the report.
    pub echo: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            dataset: None,
            architecture: None,
            output_bias: None,
            loss: LossKind::Squared,
            seeds: vec![0],
            grad_tol: 1e-8,
            rank_tol: 1e-10,
            min_kink_margin: 1e-3,
            restarts: None,
            trials: 30,
            max_iters: None,
            polish_steps: 30,
            init_scale: 1.0,
            zero_head: true,
            nonneg_init: false,
            rho: 1.0,
            radii: Vec::new(),
            widths: None,
            n: 64,
            d_x: 2,
            exhaustive: false,
            output: None,
            echo: BTreeMap::new(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config {
            line: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Relative dataset and output paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, LabError> {
        let mut pairs = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(k + 1, "expected `key = value`"))?;
            pairs.push((k + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let (kline, _, kind) = pairs
            .iter()
            .find(|(_, key, _)| key == "kind")
            .ok_or_else(|| err(0, "missing `kind`"))?;
        let kind = ExperimentKind::parse(kind).ok_or_else(|| err(*kline, &format!("unknown kind `{kind}`")))?;
        let mut cfg = Self::new(kind);
        let mut radii_line = 0;
        let mut depth = None;
        for (line, key, value) in &pairs {
            let line = *line;
            if cfg.echo.insert(key.clone(), value.clone()).is_some() {
                return Err(err(line, &format!("duplicate key `{key}`")));
            }
            match key.as_str() {
                "kind" => {}
                "dataset" => cfg.dataset = Some(parse_dataset_source(value, base_dir, line)?),
                "architecture" => cfg.architecture = Some(parse_architecture(value, line)?),
                "output_bias" => cfg.output_bias = Some(parse_bool(value, line)?),
                "loss" => {
                    cfg.loss = match value.to_lowercase().as_str() {
                        "squared" => LossKind::Squared,
                        "logistic" => LossKind::Logistic,
                        _ => return Err(err(line, &format!("unknown loss `{value}`"))),
                    }
                }
                "seeds" => cfg.seeds = parse_seeds(value, line)?,
                "grad_tol" => cfg.grad_tol = parse_positive(value, line)?,
                "rank_tol" => cfg.rank_tol = parse_positive(value, line)?,
                "min_kink_margin" => cfg.min_kink_margin = parse_num(value, line)?,
                "restarts" => cfg.restarts = Some(parse_num(value, line)?),
                "trials" => cfg.trials = parse_num(value, line)?,
                "max_iters" => cfg.max_iters = Some(parse_num(value, line)?),
                "polish_steps" => cfg.polish_steps = parse_num(value, line)?,
                "init_scale" => cfg.init_scale = parse_positive(value, line)?,
                "zero_head" => cfg.zero_head = parse_bool(value, line)?,
                "nonneg_init" => cfg.nonneg_init = parse_bool(value, line)?,
                "rho" => cfg.rho = parse_positive(value, line)?,
                "L" => depth = Some(parse_num::<usize>(value, line)?),
                "M" => {
                    radii_line = line;
                    cfg.radii = parse_list(value, line)?;
                }
                "widths" => cfg.widths = Some(parse_list(value, line)?),
                "n" => cfg.n = parse_num(value, line)?,
                "d_x" => cfg.d_x = parse_num(value, line)?,
                "exhaustive" => cfg.exhaustive = parse_bool(value, line)?,
                "output" => cfg.output = Some(base_dir.join(value)),
                _ => return Err(err(line, &format!("unknown key `{key}`"))),
            }
        }
        if let Some(l) = depth {
            cfg.radii = expand_radii(&cfg.radii, l).map_err(|m| err(radii_line, &m))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), LabError> {
        if self.seeds.is_empty() {
            return Err(err(0, "`seeds` must not be empty"));
        }
        if self.radii.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(err(0, "`M` entries must be finite and nonnegative"));
        }
        if self.n == 0 || self.d_x == 0 {
            return Err(err(0, "`n` and `d_x` must be positive"));
        }
        if let Some(w) = &self.widths {
            if w.len() != self.radii.len() {
                return Err(err(0, "`widths` needs one entry per block"));
            }
        }
        match self.kind {
            ExperimentKind::Theorem1Sweep | ExperimentKind::Theorem2Check if self.dataset.is_none() => {
                Err(err(0, "this kind needs a `dataset`"))
            }
            ExperimentKind::Prop1 if self.rho * self.rho > 1.25 + 1e-12 => {
                Err(err(0, "`rho` must not exceed sqrt(5/4)"))
            }
            ExperimentKind::RademacherSweep if self.trials < 30 && !self.exhaustive => {
                Err(err(0, "`trials` must be at least 30"))
            }
            _ => Ok(()),
        }
    }
}

/// `M` may list one radius per block or a single radius repeated `L` times.
pub fn expand_radii(radii: &[f64], depth: usize) -> Result<Vec<f64>, String> {
    match radii.len() {
        0 if depth == 0 => Ok(Vec::new()),
        1 => Ok(vec![radii[0]; depth]),
        k if k == depth => Ok(radii.to_vec()),
        k => Err(format!("`M` has {k} entries but L = {depth}")),
    }
}

fn err(line: usize, message: &str) -> LabError {
    LabError::Config {
        line,
        message: message.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize) -> Result<T, LabError> {
    value.parse().map_err(|_| err(line, &format!("`{value}` is not a valid number")))
}

fn parse_positive(value: &str, line: usize) -> Result<f64, LabError> {
    let v: f64 = parse_num(value, line)?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(err(line, &format!("`{value}` must be positive")));
    }
    Ok(v)
}

fn parse_bool(value: &str, line: usize) -> Result<bool, LabError> {
    match value.to_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(line, &format!("`{value}` is not a boolean"))),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, line: usize) -> Result<Vec<T>, LabError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(s, line))
        .collect()
}

/// `0,3,7` or the half-open range `0..20`.
fn parse_seeds(value: &str, line: usize) -> Result<Vec<u64>, LabError> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse_num(a.trim(), line)?, parse_num(b.trim(), line)?);
        return Ok((a..b).collect());
    }
    parse_list(value, line)
}

fn parse_dataset_source(value: &str, base_dir: &Path, line: usize) -> Result<DatasetSource, LabError> {
    if value == "random" {
        return Ok(DatasetSource::Random);
    }
    match value.strip_prefix("builtin:") {
        Some("nonmonotone") => Ok(DatasetSource::NonMonotone),
        Some(rho) => Ok(DatasetSource::Builtin(parse_positive(rho, line)?)),
        None => Ok(DatasetSource::Path(base_dir.join(value))),
    }
}

/// Comma-separated block tokens: `first`, `first_affine:k`, `general:m`,
/// `general_affine:m:k`, `simple`; or `random`.
pub fn parse_architecture(value: &str, line: usize) -> Result<Architecture, LabError> {
    if value == "random" {
        return Ok(Architecture::Random);
    }
    let mut blocks = Vec::new();
    for token in value.split(',').map(str::trim) {
        let parts: Vec<&str> = token.split(':').collect();
        let num = |s: &str| parse_num::<usize>(s, line);
        let block = match parts.as_slice() {
            ["first"] => BlockSpec::First {
                inner: InnerKind::Relu,
            },
            ["first_affine", k] => BlockSpec::First {
                inner: InnerKind::AffineRelu { hidden: num(k)? },
            },
            ["general", m] => BlockSpec::General {
                m: num(m)?,
                inner: InnerKind::Relu,
            },
            ["general_affine", m, k] => BlockSpec::General {
                m: num(m)?,
                inner: InnerKind::AffineRelu { hidden: num(k)? },
            },
            ["simple"] => BlockSpec::SimpleVector,
            _ => return Err(err(line, &format!("unknown block `{token}`"))),
        };
        blocks.push(block);
    }
    Ok(Architecture::Fixed(blocks))
}
