//! Local SGD with layer-wise partial synchronization on diagonal quadratics.
//!
//! `K` simulated workers run plain SGD on their own noise streams. After each
//! local step the layer blocks due at the current phase are replaced on every
//! worker by the across-worker mean. The lab records the model divergence
//! `Gamma_r = (1/K) sum_k |w_bar - w_k|^2`, its per-block split, and the
//! suboptimality of the `(a + r)^2`-weighted iterate average.

mod config;
mod problem;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::schedule::Schedule;

pub use config::{
    load_experiment, parse_experiment, parse_inline_schedule, Experiment, LearningRate, ProblemSpec, SyncMode,
    TrainerConfig,
};
pub use problem::{stochastic_gradient, Problem};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub w: Vec<f64>,
    pub rng: ChaCha8Rng,
    grad: Vec<f64>,
}

impl WorkerState {
    /// Worker `id` starting at `w0`; the noise stream depends on `(seed, id)`
    /// unless `shared` is set.
    pub fn new(w0: Vec<f64>, seed: u64, id: usize, shared: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(if shared { 0 } else { id as u64 + 1 });
        let grad = vec![0.0; w0.len()];
        WorkerState { w: w0, rng, grad }
    }
}

pub fn initial_workers(config: &TrainerConfig, problem: &Problem) -> Vec<WorkerState> {
    (0..config.workers)
        .map(|k| WorkerState::new(vec![0.0; problem.dim()], config.seed, k, config.shared_noise))
        .collect()
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Across-worker mean of coordinates `range`, in ascending worker order.
fn block_mean(workers: &[WorkerState], range: std::ops::Range<usize>, column: &mut Vec<f64>) -> Vec<f64> {
    let k = workers.len() as f64;
    range
        .map(|i| {
            column.clear();
            column.extend(workers.iter().map(|w| w.w[i]));
            pairwise_sum(column) / k
        })
        .collect()
}

/// Layers (1-based) averaged after step `r` (0-based).
pub fn synced_layers(config: &TrainerConfig, num_layers: usize, r: u64) -> Vec<usize> {
    let h = config.period as u64;
    let all = || (1..=num_layers).rev().collect();
    match config.mode {
        SyncMode::Ssgd => all(),
        SyncMode::Full if (r + 1).is_multiple_of(h) => all(),
        SyncMode::Full => Vec::new(),
        SyncMode::Partial => {
            let s = config
                .schedule
                .as_ref()
                .expect("validated partial config has a schedule");
            // set h syncs when (r + 1) mod H == h mod H
            s.comm_layers((r % h) as usize + 1)
        }
    }
}

/// One local step on every worker followed by the phase's averaging.
/// Returns the largest stochastic-gradient norm seen in the step.
pub fn plsgd_step(
    workers: &mut [WorkerState],
    r: u64,
    config: &TrainerConfig,
    problem: &Problem,
    exec: Exec,
) -> Result<f64> {
    if let Some(s) = &config.schedule {
        if s.num_layers() != problem.num_blocks() {
            return Err(Error::Validation(format!(
                "schedule covers {} layers but the problem has {} blocks",
                s.num_layers(),
                problem.num_blocks()
            )));
        }
    }
    if let Some(bad) = workers.iter().position(|w| w.w.len() != problem.dim()) {
        return Err(Error::Validation(format!(
            "worker {bad} has dimension {} but the problem has {}",
            workers[bad].w.len(),
            problem.dim()
        )));
    }
    let eta = config.eta(problem, r);
    exec.for_each_mut(workers, |_, st| {
        let WorkerState { w, rng, grad } = st;
        problem::stochastic_gradient_into(problem, w, rng, grad);
        for (x, g) in w.iter_mut().zip(grad.iter()) {
            *x -= eta * g;
        }
    });
    let g_max = workers
        .iter()
        .map(|st| st.grad.iter().map(|g| g * g).sum::<f64>().sqrt())
        .fold(0.0, f64::max);

    let mut column = Vec::with_capacity(workers.len());
    for l in synced_layers(config, problem.num_blocks(), r) {
        let range = problem.block(l);
        let mean = block_mean(workers, range.clone(), &mut column);
        for st in workers.iter_mut() {
            st.w[range.clone()].copy_from_slice(&mean);
        }
    }
    Ok(g_max)
}

/// Mean model and `(Gamma, Gamma^l)`.
pub fn divergence(workers: &[WorkerState], problem: &Problem) -> (Vec<f64>, f64, Vec<f64>) {
    let mut column = Vec::with_capacity(workers.len());
    let mean = block_mean(workers, 0..problem.dim(), &mut column);
    let k = workers.len() as f64;
    let per_layer: Vec<f64> = (1..=problem.num_blocks())
        .map(|l| {
            let range = problem.block(l);
            let per_worker: Vec<f64> = workers
                .iter()
                .map(|st| {
                    range
                        .clone()
                        .map(|i| {
                            let d = mean[i] - st.w[i];
                            d * d
                        })
                        .sum::<f64>()
                })
                .collect();
            pairwise_sum(&per_worker) / k
        })
        .collect();
    let gamma = per_layer.iter().sum();
    (mean, gamma, per_layer)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub r: u64,
    pub gamma: f64,
    pub gamma_l: Vec<f64>,
    pub divergence_bound: f64,
    /// `f(w_hat_r) - f*`.
    pub subopt: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceTrace {
    pub rows: Vec<TraceRow>,
    /// Mean of `Gamma_r` over `r = 1..=R`, logged or not.
    pub gamma_mean: f64,
    /// Largest stochastic-gradient norm over the run.
    pub g_max: f64,
    /// `f(w_hat_R) - f*`.
    pub final_subopt: f64,
    /// `f(w_bar_R) - f*` for the plain final average.
    pub final_mean_subopt: f64,
}

impl DivergenceTrace {
    /// Logged iterations where `Gamma_r > slack * bound`.
    pub fn bound_violations(&self, slack: f64) -> Vec<u64> {
        self.rows
            .iter()
            .filter(|row| row.gamma > slack * row.divergence_bound)
            .map(|row| row.r)
            .collect()
    }
}

/// Stepwise driver behind [`run_training`].
pub struct Trainer<'a> {
    config: &'a TrainerConfig,
    problem: &'a Problem,
    exec: Exec,
    workers: Vec<WorkerState>,
    r: u64,
    g_max: f64,
    shift: f64,
    weighted_sum: Vec<f64>,
    weight_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    /// Iterations completed.
    pub r: u64,
    pub eta: f64,
    pub gamma: f64,
    pub gamma_l: Vec<f64>,
    pub g_max: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainerConfig, problem: &'a Problem, exec: Exec) -> Result<Self> {
        config.validate(problem)?;
        Ok(Trainer {
            config,
            problem,
            exec,
            workers: initial_workers(config, problem),
            r: 0,
            g_max: 0.0,
            shift: config.shift_for(problem),
            weighted_sum: vec![0.0; problem.dim()],
            weight_total: 0.0,
        })
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn iteration(&self) -> u64 {
        self.r
    }

    pub fn step(&mut self) -> Result<StepStats> {
        let (mean, _, _) = divergence(&self.workers, self.problem);
        let p = (self.shift + self.r as f64).powi(2);
        for (acc, x) in self.weighted_sum.iter_mut().zip(&mean) {
            *acc += p * x;
        }
        self.weight_total += p;

        let eta = self.config.eta(self.problem, self.r);
        let g = plsgd_step(&mut self.workers, self.r, self.config, self.problem, self.exec)?;
        self.g_max = self.g_max.max(g);
        self.r += 1;
        let (_, gamma, gamma_l) = divergence(&self.workers, self.problem);
        Ok(StepStats {
            r: self.r,
            eta,
            gamma,
            gamma_l,
            g_max: self.g_max,
        })
    }

    /// `f(w_hat) - f*` for the weighted average accumulated so far.
    pub fn weighted_subopt(&self) -> f64 {
        if self.weight_total == 0.0 {
            return self.problem.value(&self.workers[0].w) - self.problem.f_star();
        }
        let w_hat: Vec<f64> = self.weighted_sum.iter().map(|x| x / self.weight_total).collect();
        self.problem.value(&w_hat) - self.problem.f_star()
    }

    pub fn mean_subopt(&self) -> f64 {
        let (mean, _, _) = divergence(&self.workers, self.problem);
        self.problem.value(&mean) - self.problem.f_star()
    }
}

pub fn run_training(config: &TrainerConfig, problem: &Problem) -> Result<DivergenceTrace> {
    run_training_with(config, problem, Exec::default())
}

pub fn run_training_with(config: &TrainerConfig, problem: &Problem, exec: Exec) -> Result<DivergenceTrace> {
    let mut t = Trainer::new(config, problem, exec)?;
    let h = config.period as f64;
    let mut rows = vec![TraceRow {
        r: 0,
        gamma: 0.0,
        gamma_l: vec![0.0; problem.num_blocks()],
        divergence_bound: 0.0,
        subopt: t.weighted_subopt(),
        eta: config.eta(problem, 0),
    }];
    let mut gamma_sum = 0.0;
    for _ in 0..config.iterations {
        let s = t.step()?;
        gamma_sum += s.gamma;
        if s.r % config.log_stride == 0 || s.r == config.iterations {
            rows.push(TraceRow {
                r: s.r,
                gamma: s.gamma,
                gamma_l: s.gamma_l,
                divergence_bound: 4.0 * h * h * s.eta * s.eta * s.g_max * s.g_max,
                subopt: t.weighted_subopt(),
                eta: s.eta,
            });
        }
    }
    Ok(DivergenceTrace {
        rows,
        gamma_mean: if config.iterations > 0 {
            gamma_sum / config.iterations as f64
        } else {
            0.0
        },
        g_max: t.g_max,
        final_subopt: t.weighted_subopt(),
        final_mean_subopt: t.mean_subopt(),
    })
}

/// Gradient-averaging S-SGD on the same worker noise streams. Returns the
/// model after each of the `config.iterations` steps.
pub fn ssgd_reference(config: &TrainerConfig, problem: &Problem) -> Result<Vec<Vec<f64>>> {
    config.validate(problem)?;
    let mut workers = initial_workers(config, problem);
    let mut w = vec![0.0; problem.dim()];
    let k = config.workers as f64;
    let mut out = Vec::with_capacity(config.iterations as usize);
    let mut grads = vec![vec![0.0; problem.dim()]; config.workers];
    let mut column = Vec::with_capacity(config.workers);
    for r in 0..config.iterations {
        for (st, g) in workers.iter_mut().zip(grads.iter_mut()) {
            problem::stochastic_gradient_into(problem, &w, &mut st.rng, g);
        }
        let eta = config.eta(problem, r);
        for (i, x) in w.iter_mut().enumerate() {
            column.clear();
            column.extend(grads.iter().map(|g| g[i]));
            *x -= eta * (pairwise_sum(&column) / k);
        }
        out.push(w.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    /// `(R, mean suboptimality across seeds)`.
    pub points: Vec<(u64, f64)>,
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(u64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(x, _)| (*x as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean final weighted-average suboptimality for each `R`, and the fitted
/// log-log slope.
pub fn rate_experiment(
    problem: &Problem,
    template: &TrainerConfig,
    r_list: &[u64],
    seeds: &[u64],
    exec: Exec,
) -> Result<RateResult> {
    if r_list.len() < 3 {
        return Err(Error::Argument(format!(
            "rate fit needs at least 3 iteration counts, got {}",
            r_list.len()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::Argument("rate experiment needs at least one seed".into()));
    }
    if template.lr != LearningRate::Decaying {
        return Err(Error::Argument(
            "rate experiment needs the decaying learning rate".into(),
        ));
    }
    let jobs: Vec<(u64, u64)> = r_list
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results = exec
        .map(&jobs, |&(r, seed)| {
            let mut cfg = template.clone();
            cfg.iterations = r;
            cfg.seed = seed;
            cfg.log_stride = r.max(1);
            run_training_with(&cfg, problem, Exec::Sequential).map(|t| t.final_subopt)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let points: Vec<(u64, f64)> = r_list
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let chunk = &results[i * seeds.len()..(i + 1) * seeds.len()];
            (r, chunk.iter().sum::<f64>() / seeds.len() as f64)
        })
        .collect();
    Ok(RateResult {
        slope: loglog_slope(&points),
        points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergencePair {
    pub seed: u64,
    pub partial: f64,
    pub full: f64,
}

/// Time-averaged divergence of equal-number partial sync against full sync
/// at the same period, one pair per seed.
pub fn divergence_partial_vs_full(
    problem: &Problem,
    template: &TrainerConfig,
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<DivergencePair>> {
    let enp = Schedule::equal_number(problem.num_blocks(), template.period)?;
    exec.map(seeds, |&seed| {
        let mut partial = template.clone();
        partial.seed = seed;
        partial.mode = SyncMode::Partial;
        partial.schedule = Some(enp.clone());
        let mut full = partial.clone();
        full.mode = SyncMode::Full;
        Ok(DivergencePair {
            seed,
            partial: run_training_with(&partial, problem, Exec::Sequential)?.gamma_mean,
            full: run_training_with(&full, problem, Exec::Sequential)?.gamma_mean,
        })
    })
    .into_iter()
    .collect()
}

pub fn format_trace_csv(trace: &DivergenceTrace) -> String {
    let layers = trace.rows.first().map_or(0, |r| r.gamma_l.len());
    let mut out = String::from("r,gamma");
    for l in 1..=layers {
        out.push_str(&format!(",gamma_l_{l}"));
    }
    out.push_str(",lemma2_bound,subopt,eta\n");
    for row in &trace.rows {
        out.push_str(&format!("{},{:?}", row.r, row.gamma));
        for g in &row.gamma_l {
            out.push_str(&format!(",{g:?}"));
        }
        out.push_str(&format!(",{:?},{:?},{:?}\n", row.divergence_bound, row.subopt, row.eta));
    }
    out
}

pub fn write_trace_csv(trace: &DivergenceTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trace_csv(trace)).map_err(|e| Error::io(path, e))
}

pub fn format_summary(config: &TrainerConfig, trace: &DivergenceTrace) -> String {
    let violations = trace.bound_violations(1.0).len();
    format!(
        "mode={}\nworkers={}\nperiod={}\niterations={}\ngamma_mean={:?}\ng_max={:?}\nfinal_subopt={:?}\nfinal_mean_subopt={:?}\nbound_violations={}\n",
        config.mode,
        config.workers,
        config.period,
        config.iterations,
        trace.gamma_mean,
        trace.g_max,
        trace.final_subopt,
        trace.final_mean_subopt,
        violations
    )
}
