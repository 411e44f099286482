//! Scenario files: `key = value` lines grouped under `[section]` headers.
//! `#` starts a comment. Relative paths resolve against the file's
//! directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attractor::{DesignMethod, DEFAULT_BETA, DEFAULT_EPSILON};
use crate::dynamics::ConvergenceCriterion;
use crate::error::{Error, Result};
use crate::spectral::NormalizationMode;
use crate::swarm::{Execution, Proposal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eigen,
    Dynamics,
    SwarmUnweighted,
    SwarmWeighted,
    Reconstruct,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "eigen" => Mode::Eigen,
            "dynamics" => Mode::Dynamics,
            "swarm-unweighted" => Mode::SwarmUnweighted,
            "swarm-weighted" => Mode::SwarmWeighted,
            "reconstruct" => Mode::Reconstruct,
            _ => return Err(Error::Config(format!("unknown mode `{s}`"))),
        })
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Eigen => "eigen",
            Mode::Dynamics => "dynamics",
            Mode::SwarmUnweighted => "swarm-unweighted",
            Mode::SwarmWeighted => "swarm-weighted",
            Mode::Reconstruct => "reconstruct",
        }
    }
}

/// Which matrix drives the dynamics and weighted swarms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixChoice {
    Transition,
    Attractor,
}

/// Where the environment (or shape) text comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Path(PathBuf),
    Inline(String),
}

impl Source {
    pub fn read(&self) -> Result<String> {
        match self {
            Source::Path(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display()))),
            Source::Inline(s) => Ok(s.clone()),
        }
    }
}

/// Start cell, either a 1-based free-cell index or grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartCell {
    Index(usize),
    Coord(usize, usize),
}

impl FromStr for StartCell {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("start cell `{s}`: expected `k` or `row,col`"));
        match s.split_once(',') {
            Some((r, c)) => Ok(StartCell::Coord(
                r.trim().parse().map_err(|_| bad())?,
                c.trim().parse().map_err(|_| bad())?,
            )),
            None => {
                let k: usize = s.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(StartCell::Index(k))
            }
        }
    }
}

impl std::fmt::Display for StartCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StartCell::Index(k) => write!(f, "{k}"),
            StartCell::Coord(r, c) => write!(f, "{r},{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mode: Mode,
    pub seed: u64,
    pub execution: Execution,
    pub environment: Source,
    pub start: StartCell,
    /// 1-based harmonic index.
    pub harmonic: usize,
    pub method: DesignMethod,
    /// `first-order` design of the stationary harmonic.
    pub first_order: bool,
    pub order: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub auto_epsilon: bool,
    pub matrix: MatrixChoice,
    pub snapshots: Vec<usize>,
    pub crit: ConvergenceCriterion,
    pub robots: usize,
    pub steps: usize,
    pub stride: usize,
    pub proposal: Proposal,
    pub robot_dump: bool,
    pub shape: Option<Source>,
    pub count: Option<usize>,
    pub percentile: Option<f64>,
    pub threshold: Option<f64>,
    pub exact: bool,
    pub normalization: NormalizationMode,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            mode: Mode::Eigen,
            seed: 0,
            execution: Execution::Parallel,
            environment: Source::Inline("line 5\n".into()),
            start: StartCell::Index(1),
            harmonic: 1,
            method: DesignMethod::Optimized,
            first_order: false,
            order: 4,
            beta: DEFAULT_BETA,
            epsilon: DEFAULT_EPSILON,
            auto_epsilon: true,
            matrix: MatrixChoice::Attractor,
            snapshots: Vec::new(),
            crit: ConvergenceCriterion::default(),
            robots: 1000,
            steps: 100,
            stride: 10,
            proposal: Proposal::Uniform,
            robot_dump: false,
            shape: None,
            count: None,
            percentile: None,
            threshold: None,
            exact: false,
            normalization: NormalizationMode::L1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected true or false, got `{v}`"
        ))),
    }
}

/// Raw `section.key → value` pairs, in file order per key.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut section = String::new();
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(Error::Parse {
                line: i + 1,
                msg: format!("unterminated section header `{line}`"),
            })?;
            section = name.trim().to_owned();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        let key = format!("{section}.{}", k.trim());
        if out.insert(key.clone(), v.trim().to_owned()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("`{key}` given twice"),
            });
        }
    }
    Ok(out)
}

impl Scenario {
    /// Parses scenario text; `base` anchors relative paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut s = Scenario::default();
        let path = |v: &str| Source::Path(base.join(v));
        for (key, v) in &pairs {
            let v = v.as_str();
            match key.as_str() {
                "scenario.mode" => s.mode = v.parse()?,
                "scenario.seed" => s.seed = parse_value(key, v)?,
                "scenario.execution" => {
                    s.execution = match v {
                        "parallel" => Execution::Parallel,
                        "sequential" => Execution::Sequential,
                        _ => return Err(Error::Config(format!("`{key}`: unknown `{v}`"))),
                    }
                }
                "scenario.start" => s.start = v.parse()?,
                "scenario.exact_dynamics" => s.exact = parse_bool(key, v)?,
                "environment.file" => s.environment = path(v),
                "environment.line" => {
                    let n: usize = parse_value(key, v)?;
                    s.environment = Source::Inline(format!("line {n}\n"));
                }
                "design.harmonic" => s.harmonic = parse_value(key, v)?,
                "design.method" => match v {
                    "closed-form" => {
                        s.method = DesignMethod::ClosedForm;
                        s.first_order = false;
                    }
                    "optimized" => {
                        s.method = DesignMethod::Optimized;
                        s.first_order = false;
                    }
                    "first-order" => s.first_order = true,
                    _ => return Err(Error::Config(format!("`{key}`: unknown method `{v}`"))),
                },
                "design.order" => s.order = parse_value(key, v)?,
                "design.beta" => s.beta = parse_value(key, v)?,
                "design.epsilon" => s.epsilon = parse_value(key, v)?,
                "design.auto_epsilon" => s.auto_epsilon = parse_bool(key, v)?,
                "dynamics.matrix" => {
                    s.matrix = match v {
                        "transition" => MatrixChoice::Transition,
                        "attractor" => MatrixChoice::Attractor,
                        _ => return Err(Error::Config(format!("`{key}`: unknown matrix `{v}`"))),
                    }
                }
                "dynamics.snapshots" => {
                    s.snapshots = v
                        .split(',')
                        .map(str::trim)
                        .filter(|x| !x.is_empty())
                        .map(|x| parse_value(key, x))
                        .collect::<Result<_>>()?
                }
                "dynamics.tolerance" => s.crit.tolerance = parse_value(key, v)?,
                "dynamics.window" => s.crit.window = parse_value(key, v)?,
                "dynamics.max_steps" => s.crit.max_steps = parse_value(key, v)?,
                "swarm.robots" => s.robots = parse_value(key, v)?,
                "swarm.steps" => s.steps = parse_value(key, v)?,
                "swarm.stride" => s.stride = parse_value(key, v)?,
                "swarm.proposal" => {
                    s.proposal = match v {
                        "uniform" => Proposal::Uniform,
                        "kernel" => Proposal::KernelSupport,
                        _ => return Err(Error::Config(format!("`{key}`: unknown proposal `{v}`"))),
                    }
                }
                "swarm.robot_dump" => s.robot_dump = parse_bool(key, v)?,
                "shape.file" => s.shape = Some(path(v)),
                "shape.count" => s.count = Some(parse_value(key, v)?),
                "shape.percentile" => s.percentile = Some(parse_value(key, v)?),
                "shape.threshold" => {
                    s.threshold = if v == "auto" {
                        None
                    } else {
                        Some(parse_value(key, v)?)
                    }
                }
                "output.normalization" => {
                    s.normalization = match v {
                        "l1" => NormalizationMode::L1,
                        "l2" => NormalizationMode::L2,
                        "max" => NormalizationMode::MaxAbs,
                        _ => return Err(Error::Config(format!("`{key}`: unknown `{v}`"))),
                    }
                }
                k if k.starts_with("meta.") => {}
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.crit.validate()?;
        if self.harmonic == 0 {
            return Err(Error::Config("harmonics are numbered from 1".into()));
        }
        if self.robots == 0 {
            return Err(Error::Config("swarm.robots must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("swarm.stride must be positive".into()));
        }
        if self.count.is_some() && self.percentile.is_some() {
            return Err(Error::Config(
                "give shape.count or shape.percentile, not both".into(),
            ));
        }
        if self.mode == Mode::Reconstruct && self.shape.is_none() {
            return Err(Error::Config("reconstruct mode needs shape.file".into()));
        }
        Ok(())
    }

    /// Scenario text that reproduces this run, with the environment and
    /// shape stored next to it under the given file names.
    pub fn to_manifest(
        &self,
        env_file: &str,
        shape_file: Option<&str>,
        meta: &[(&str, String)],
    ) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "[meta]");
        for (k, v) in meta {
            let _ = writeln!(w, "{k} = {v}");
        }
        let _ = writeln!(w, "\n[scenario]");
        let _ = writeln!(w, "mode = {}", self.mode.name());
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(
            w,
            "execution = {}",
            match self.execution {
                Execution::Parallel => "parallel",
                Execution::Sequential => "sequential",
            }
        );
        let _ = writeln!(w, "start = {}", self.start);
        let _ = writeln!(w, "exact_dynamics = {}", self.exact);
        let _ = writeln!(w, "\n[environment]\nfile = {env_file}");
        let _ = writeln!(w, "\n[design]");
        let _ = writeln!(w, "harmonic = {}", self.harmonic);
        let method = if self.first_order {
            "first-order"
        } else {
            match self.method {
                DesignMethod::ClosedForm => "closed-form",
                DesignMethod::Optimized => "optimized",
            }
        };
        let _ = writeln!(w, "method = {method}");
        let _ = writeln!(w, "order = {}", self.order);
        let _ = writeln!(w, "beta = {:e}", self.beta);
        let _ = writeln!(w, "epsilon = {:e}", self.epsilon);
        let _ = writeln!(w, "auto_epsilon = {}", self.auto_epsilon);
        let _ = writeln!(w, "\n[dynamics]");
        let _ = writeln!(
            w,
            "matrix = {}",
            match self.matrix {
                MatrixChoice::Transition => "transition",
                MatrixChoice::Attractor => "attractor",
            }
        );
        let snaps: Vec<String> = self.snapshots.iter().map(usize::to_string).collect();
        let _ = writeln!(w, "snapshots = {}", snaps.join(","));
        let _ = writeln!(w, "tolerance = {:e}", self.crit.tolerance);
        let _ = writeln!(w, "window = {}", self.crit.window);
        let _ = writeln!(w, "max_steps = {}", self.crit.max_steps);
        let _ = writeln!(w, "\n[swarm]");
        let _ = writeln!(w, "robots = {}", self.robots);
        let _ = writeln!(w, "steps = {}", self.steps);
        let _ = writeln!(w, "stride = {}", self.stride);
        let _ = writeln!(
            w,
            "proposal = {}",
            match self.proposal {
                Proposal::Uniform => "uniform",
                Proposal::KernelSupport => "kernel",
            }
        );
        let _ = writeln!(w, "robot_dump = {}", self.robot_dump);
        if let Some(f) = shape_file {
            let _ = writeln!(w, "\n[shape]\nfile = {f}");
            if let Some(c) = self.count {
                let _ = writeln!(w, "count = {c}");
            }
            if let Some(p) = self.percentile {
                let _ = writeln!(w, "percentile = {p:e}");
            }
            match self.threshold {
                Some(t) => {
                    let _ = writeln!(w, "threshold = {t:e}");
                }
                None => {
                    let _ = writeln!(w, "threshold = auto");
                }
            }
        }
        let _ = writeln!(
            w,
            "\n[output]\nnormalization = {}",
            match self.normalization {
                NormalizationMode::L1 => "l1",
                NormalizationMode::L2 => "l2",
                NormalizationMode::MaxAbs => "max",
            }
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let text = "# demo\n[scenario]\nmode = dynamics  # trailing\nseed = 9\nstart = 2,3\n\n[environment]\nline = 20\n[design]\nharmonic = 5\nmethod = closed-form\nbeta = 0.7\n[dynamics]\nsnapshots = 1, 20,50\n";
        let s = Scenario::parse(text, Path::new("/tmp")).unwrap();
        assert_eq!(s.mode, Mode::Dynamics);
        assert_eq!(s.seed, 9);
        assert_eq!(s.start, StartCell::Coord(2, 3));
        assert_eq!(s.environment, Source::Inline("line 20\n".into()));
        assert_eq!(s.method, DesignMethod::ClosedForm);
        assert_eq!(s.snapshots, vec![1, 20, 50]);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(Scenario::parse("[scenario]\nmood = eigen\n", Path::new(".")).is_err());
        assert!(Scenario::parse("[scenario]\nseed = 1\nseed = 2\n", Path::new(".")).is_err());
        assert!(Scenario::parse("[scenario\n", Path::new(".")).is_err());
        assert!(Scenario::parse("[design]\nharmonic = 0\n", Path::new(".")).is_err());
        assert!(Scenario::parse("[scenario]\nstart = 0\n", Path::new(".")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let s = Scenario::parse("[environment]\nfile = maps/a.txt\n", Path::new("/data")).unwrap();
        assert_eq!(
            s.environment,
            Source::Path(PathBuf::from("/data/maps/a.txt"))
        );
    }

    #[test]
    fn manifest_round_trips() {
        let mut s = Scenario {
            mode: Mode::Reconstruct,
            seed: 42,
            harmonic: 3,
            beta: 0.25,
            snapshots: vec![0, 5],
            count: Some(7),
            threshold: Some(0.4),
            start: StartCell::Coord(1, 2),
            ..Scenario::default()
        };
        s.shape = Some(Source::Path("/x/shape.txt".into()));
        let text = s.to_manifest("env.txt", Some("shape.txt"), &[("version", "0".into())]);
        let back = Scenario::parse(&text, Path::new("/x")).unwrap();
        let mut expect = s.clone();
        expect.environment = Source::Path("/x/env.txt".into());
        assert_eq!(back, expect);
    }
}
