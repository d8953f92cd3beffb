use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::schedule::{load_schedule, Schedule};

use super::problem::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMode {
    /// Layer set `h` is averaged at phase `h` of every period.
    Partial,
    /// The whole model is averaged once per period.
    Full,
    /// The whole model is averaged after every step.
    Ssgd,
}

impl fmt::Display for SyncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyncMode::Partial => "partial",
            SyncMode::Full => "full",
            SyncMode::Ssgd => "ssgd",
        })
    }
}

impl FromStr for SyncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partial" => Ok(SyncMode::Partial),
            "full" => Ok(SyncMode::Full),
            "ssgd" => Ok(SyncMode::Ssgd),
            other => Err(Error::Argument(format!(
                "unknown sync mode {other:?} (expected partial, full or ssgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Constant(f64),
    /// `eta_r = 4 / (mu (a + r))`.
    Decaying,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub workers: usize,
    pub period: usize,
    /// Required for [`SyncMode::Partial`]; must cover one layer per block.
    pub schedule: Option<Schedule>,
    pub iterations: u64,
    pub lr: LearningRate,
    /// Shift `a`; `None` picks `max(16 kappa, H) + 1`.
    pub shift: Option<f64>,
    pub seed: u64,
    pub mode: SyncMode,
    /// Trace rows are kept every `log_stride` iterations (and at the end).
    pub log_stride: u64,
    /// Every worker draws the same noise stream.
    pub shared_noise: bool,
}

impl TrainerConfig {
    pub fn new(workers: usize, period: usize, iterations: u64, mode: SyncMode) -> Self {
        TrainerConfig {
            workers,
            period,
            schedule: None,
            iterations,
            lr: LearningRate::Decaying,
            shift: None,
            seed: 0,
            mode,
            log_stride: 1,
            shared_noise: false,
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn shift_for(&self, problem: &Problem) -> f64 {
        self.shift
            .unwrap_or_else(|| (16.0 * problem.kappa()).max(self.period as f64) + 1.0)
    }

    pub fn eta(&self, problem: &Problem, r: u64) -> f64 {
        match self.lr {
            LearningRate::Constant(eta) => eta,
            LearningRate::Decaying => 4.0 / (problem.mu() * (self.shift_for(problem) + r as f64)),
        }
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if self.workers < 1 {
            return Err(Error::Validation("need at least one worker".into()));
        }
        if self.period < 1 {
            return Err(Error::Validation("period H must be at least 1".into()));
        }
        if self.log_stride < 1 {
            return Err(Error::Validation("log stride must be at least 1".into()));
        }
        match self.lr {
            LearningRate::Constant(eta) if !(eta > 0.0 && eta.is_finite()) => {
                return Err(Error::Validation(format!("learning rate must be positive, got {eta}")));
            }
            LearningRate::Decaying => {
                let a = self.shift_for(problem);
                let floor = (16.0 * problem.kappa()).max(self.period as f64);
                if a.is_nan() || a <= floor {
                    return Err(Error::Validation(format!(
                        "shift a={a} must exceed max(16 kappa, H) = {floor}"
                    )));
                }
            }
            _ => {}
        }
        if self.mode == SyncMode::Partial {
            let s = self
                .schedule
                .as_ref()
                .ok_or_else(|| Error::Validation("partial sync needs a schedule".into()))?;
            if s.period() != self.period {
                return Err(Error::Validation(format!(
                    "schedule has H={} but the config says H={}",
                    s.period(),
                    self.period
                )));
            }
        }
        if let Some(s) = &self.schedule {
            if s.num_layers() != problem.num_blocks() {
                return Err(Error::Validation(format!(
                    "schedule covers {} layers but the problem has {} blocks",
                    s.num_layers(),
                    problem.num_blocks()
                )));
            }
        }
        Ok(())
    }
}

/// Parameters for [`Problem::synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub block_sizes: Vec<usize>,
    pub mu: f64,
    pub beta: f64,
    pub sigma: f64,
    pub optimum_scale: f64,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        Problem::synthetic(
            self.block_sizes.clone(),
            self.mu,
            self.beta,
            self.sigma,
            self.optimum_scale,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub problem: ProblemSpec,
    pub config: TrainerConfig,
}

fn parse_num<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("{key}: cannot parse {value:?}"),
    })
}

/// Parses inline set notation such as `4,3|2,1`.
pub fn parse_inline_schedule(text: &str, layers: usize) -> Result<Schedule> {
    let sets = text
        .split('|')
        .map(|part| {
            let part = part.trim().trim_start_matches('{').trim_end_matches('}');
            if part.is_empty() {
                return Ok(Vec::new());
            }
            part.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Argument(format!("bad layer {x:?} in schedule {text:?}")))
                })
                .collect()
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    Schedule::new(layers, sets)
}

/// Reads a flat `key = value` experiment file. `#` starts a comment.
///
/// Keys: `blocks`, `mu`, `beta`, `sigma`, `optimum_scale`, `problem_seed`,
/// `workers`, `period`, `iterations`, `lr` (`decaying` or a number), `shift`,
/// `seed`, `mode`, `schedule` (`enp`, `first` or inline sets like `4,3|2,1`),
/// `schedule_file`, `log_stride`, `shared_noise`.
pub fn parse_experiment(text: &str, base_dir: Option<&Path>) -> Result<Experiment> {
    let mut problem = ProblemSpec {
        block_sizes: vec![4; 4],
        mu: 1.0,
        beta: 2.0,
        sigma: 1.0,
        optimum_scale: 1.0,
        seed: 0,
    };
    let mut config = TrainerConfig::new(4, 2, 1000, SyncMode::Partial);
    let mut schedule_spec: Option<(String, usize)> = None;
    let mut schedule_file: Option<(String, usize)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            reason: format!("expected key = value, got {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "blocks" => {
                problem.block_sizes = value
                    .split(',')
                    .map(|b| parse_num(key, b.trim(), line_no))
                    .collect::<Result<_>>()?
            }
            "mu" => problem.mu = parse_num(key, value, line_no)?,
            "beta" => problem.beta = parse_num(key, value, line_no)?,
            "sigma" => problem.sigma = parse_num(key, value, line_no)?,
            "optimum_scale" => problem.optimum_scale = parse_num(key, value, line_no)?,
            "problem_seed" => problem.seed = parse_num(key, value, line_no)?,
            "workers" => config.workers = parse_num(key, value, line_no)?,
            "period" => config.period = parse_num(key, value, line_no)?,
            "iterations" => config.iterations = parse_num(key, value, line_no)?,
            "lr" => {
                config.lr = if value == "decaying" {
                    LearningRate::Decaying
                } else {
                    LearningRate::Constant(parse_num(key, value, line_no)?)
                }
            }
            "shift" => config.shift = Some(parse_num(key, value, line_no)?),
            "seed" => config.seed = parse_num(key, value, line_no)?,
            "mode" => {
                config.mode = value.parse().map_err(|e: Error| Error::Parse {
                    line: line_no,
                    reason: e.to_string(),
                })?
            }
            "schedule" => schedule_spec = Some((value.to_string(), line_no)),
            "schedule_file" => schedule_file = Some((value.to_string(), line_no)),
            "log_stride" => config.log_stride = parse_num(key, value, line_no)?,
            "shared_noise" => config.shared_noise = parse_num(key, value, line_no)?,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("unknown key {other:?}"),
                })
            }
        }
    }

    let layers = problem.block_sizes.len();
    let wrap = |line: usize| {
        move |e: Error| Error::Parse {
            line,
            reason: e.to_string(),
        }
    };
    config.schedule = match (schedule_spec, schedule_file) {
        (Some(_), Some((_, line))) => {
            return Err(Error::Parse {
                line,
                reason: "schedule and schedule_file are mutually exclusive".into(),
            })
        }
        (Some((spec, line)), None) => Some(match spec.as_str() {
            "enp" => Schedule::equal_number(layers, config.period).map_err(wrap(line))?,
            "first" => Schedule::all_in_first(layers, config.period).map_err(wrap(line))?,
            inline => parse_inline_schedule(inline, layers).map_err(wrap(line))?,
        }),
        (None, Some((path, _))) => {
            let path = match base_dir {
                Some(dir) => dir.join(&path),
                None => Path::new(&path).to_path_buf(),
            };
            Some(load_schedule(&path)?)
        }
        (None, None) if config.mode == SyncMode::Partial => Some(Schedule::equal_number(layers, config.period)?),
        (None, None) => None,
    };
    Ok(Experiment { problem, config })
}

pub fn load_experiment(path: impl AsRef<Path>) -> Result<Experiment> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_experiment(&text, path.parent())
}
