//! Search for the layer-to-iteration assignment that minimizes the period
//! objective.
//!
//! [`schedule_dfs`] walks layers from `L` down to 1 and iterations from 1 up
//! to `H`, applying three pruning rules before falling back to a two-way
//! branch:
//!
//! * at-least-one: an empty iteration always takes the current layer;
//! * optimal hiding: if the augmented set's communication still fits in the
//!   remaining BP window, the layer joins the current iteration;
//! * delayed overflow: if the current set already overflows its window, the
//!   layer moves on to the next iteration.
//!
//! Every complete assignment reached is kept; the cheapest one wins.
//! [`schedule_brute_force`] enumerates all contiguous splits and serves as the
//! exact oracle.

use std::fmt;

use crate::cost_model::CostModel;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::profile::{synth_profile, ModelProfile, Regime};
use crate::schedule::Schedule;

pub const DEFAULT_BRUTE_FORCE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    /// Communication of the augmented set is hidden by remaining BP.
    CommHide,
    /// Communication of the augmented set overflows remaining BP.
    CommOverflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Alo,
    OptimalHiding,
    DelayedCo,
    DfsBranch,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Alo => "ALO",
            Rule::OptimalHiding => "OptimalHiding",
            Rule::DelayedCo => "DelayedCO",
            Rule::DfsBranch => "DFS-branch",
        })
    }
}

/// One rule firing during the search. `iteration` is the set being filled
/// when the rule was applied, not necessarily where the layer ends up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub layer: usize,
    pub iteration: usize,
    pub rule: Rule,
}

/// Partial assignment during the search: layers `L..=next_layer+1` are placed
/// into `sets[..iteration]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentState {
    pub sets: Vec<Vec<usize>>,
    pub next_layer: usize,
    pub iteration: usize,
}

impl AssignmentState {
    pub fn new(layers: usize, period: usize) -> Self {
        AssignmentState {
            sets: vec![Vec::new(); period],
            next_layer: layers,
            iteration: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchReport {
    pub best: Schedule,
    pub best_cost: f64,
    pub solutions_explored: u128,
    pub oracle_cost: Option<f64>,
    pub classification_log: Vec<Decision>,
}

fn classify(cm: &CostModel, current: &[usize], layer: usize) -> Assignment {
    let first = current.first().copied().unwrap_or(layer);
    let mut augmented = current.to_vec();
    augmented.push(layer);
    if cm.window(first) >= cm.span_sorted(&augmented).span {
        Assignment::CommHide
    } else {
        Assignment::CommOverflow
    }
}

fn overflowed(cm: &CostModel, current: &[usize]) -> bool {
    match current.first() {
        Some(&first) => cm.window(first) < cm.span_sorted(current).span,
        None => false,
    }
}

/// Whether adding `layer` to the state's current iteration hides its
/// communication.
pub fn classify_assignment(state: &AssignmentState, layer: usize, profile: &ModelProfile) -> Assignment {
    let cm = CostModel::new(profile);
    classify(&cm, &state.sets[state.iteration - 1], layer)
}

struct Dfs<'a> {
    cm: &'a CostModel,
    period: usize,
    sets: Vec<Vec<usize>>,
    solutions: Vec<Vec<Vec<usize>>>,
    log: Vec<Decision>,
}

impl Dfs<'_> {
    fn note(&mut self, layer: usize, iteration: usize, rule: Rule) {
        self.log.push(Decision { layer, iteration, rule });
    }

    fn solve(&mut self, layer: usize, h: usize) {
        if layer == 0 {
            self.solutions.push(self.sets.clone());
            return;
        }
        if h == self.period {
            let before = self.sets[h - 1].len();
            self.sets[h - 1].extend((1..=layer).rev());
            self.solutions.push(self.sets.clone());
            self.sets[h - 1].truncate(before);
            return;
        }
        if self.sets[h - 1].is_empty() {
            self.note(layer, h, Rule::Alo);
            self.assign_then(layer, h);
            return;
        }
        // Keep at least one layer for every later iteration.
        if layer - 1 < self.period - h {
            self.note(layer, h, Rule::Alo);
            self.solve(layer, h + 1);
            return;
        }
        if classify(self.cm, &self.sets[h - 1], layer) == Assignment::CommHide {
            self.note(layer, h, Rule::OptimalHiding);
            self.assign_then(layer, h);
        } else if overflowed(self.cm, &self.sets[h - 1]) {
            self.note(layer, h, Rule::DelayedCo);
            self.solve(layer, h + 1);
        } else {
            self.note(layer, h, Rule::DfsBranch);
            self.assign_then(layer, h);
            self.solve(layer, h + 1);
        }
    }

    fn assign_then(&mut self, layer: usize, h: usize) {
        self.sets[h - 1].push(layer);
        self.solve(layer - 1, h);
        self.sets[h - 1].pop();
    }
}

fn check_period(layers: usize, period: usize) -> Result<()> {
    if period < 1 {
        return Err(Error::Argument("period H must be at least 1".into()));
    }
    if period > layers {
        return Err(Error::Argument(format!(
            "period H={period} exceeds layer count L={layers}"
        )));
    }
    Ok(())
}

/// Pruned depth-first search over layer assignments.
pub fn schedule_dfs(profile: &ModelProfile, period: usize) -> Result<SearchReport> {
    let layers = profile.num_layers();
    check_period(layers, period)?;
    let cm = CostModel::new(profile);
    let mut dfs = Dfs {
        cm: &cm,
        period,
        sets: vec![Vec::new(); period],
        solutions: Vec::new(),
        log: Vec::new(),
    };
    dfs.solve(layers, 1);

    let mut best: Option<(f64, usize)> = None;
    for (i, sets) in dfs.solutions.iter().enumerate() {
        let cost = cm.objective_of_sets(sets);
        if best.is_none_or(|(b, _)| cost < b) {
            best = Some((cost, i));
        }
    }
    let (best_cost, idx) = best.expect("search always records a solution");
    let best = Schedule::new(layers, dfs.solutions.swap_remove(idx))?;
    Ok(SearchReport {
        best,
        best_cost,
        solutions_explored: dfs.solutions.len() as u128 + 1,
        oracle_cost: None,
        classification_log: dfs.log,
    })
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of contiguous descending splits of `layers` into `period` ordered
/// sets where empty sets only trail.
pub fn brute_force_candidates(layers: usize, period: usize) -> u128 {
    if layers == 0 || period == 0 {
        return 0;
    }
    let n = (layers - 1) as u128;
    (1..=period.min(layers) as u128).fold(0u128, |acc, k| acc.saturating_add(binomial(n, k - 1)))
}

struct Enumerator<'a> {
    cm: &'a CostModel,
    period: usize,
    sets: Vec<Vec<usize>>,
    best: Option<(f64, Vec<Vec<usize>>)>,
}

impl Enumerator<'_> {
    /// Enumerates splits of layers `remaining..=1` into iterations `h..=H`,
    /// larger leading sets first.
    fn walk(&mut self, remaining: usize, h: usize) {
        if h == self.period || remaining == 0 {
            let before = self.sets[h - 1].len();
            self.sets[h - 1].extend((1..=remaining).rev());
            let cost = self.cm.objective_of_sets(&self.sets);
            if self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
                self.best = Some((cost, self.sets.clone()));
            }
            self.sets[h - 1].truncate(before);
            return;
        }
        for size in (1..=remaining).rev() {
            self.sets[h - 1].extend((remaining - size + 1..=remaining).rev());
            self.walk(remaining - size, h + 1);
            self.sets[h - 1].clear();
        }
    }
}

/// Exhaustive search over contiguous splits. Refuses instances whose
/// candidate count exceeds `limit` (default 10^7) before enumerating.
pub fn schedule_brute_force(profile: &ModelProfile, period: usize, limit: Option<u128>) -> Result<SearchReport> {
    schedule_brute_force_with(profile, period, limit, Exec::default())
}

pub fn schedule_brute_force_with(
    profile: &ModelProfile,
    period: usize,
    limit: Option<u128>,
    exec: Exec,
) -> Result<SearchReport> {
    if period < 1 {
        return Err(Error::Argument("period H must be at least 1".into()));
    }
    let layers = profile.num_layers();
    let candidates = brute_force_candidates(layers, period);
    let limit = limit.unwrap_or(DEFAULT_BRUTE_FORCE_LIMIT);
    if candidates > limit {
        return Err(Error::Budget { candidates, limit });
    }
    let cm = CostModel::new(profile);

    // Split on the size of the first set; each branch is walked sequentially
    // and the branches are merged in enumeration order.
    let first_sizes: Vec<usize> = if period == 1 {
        vec![layers]
    } else {
        (1..=layers).rev().collect()
    };
    let branch_best = exec.map(&first_sizes, |&size| {
        let mut e = Enumerator {
            cm: &cm,
            period,
            sets: vec![Vec::new(); period],
            best: None,
        };
        e.sets[0].extend((layers - size + 1..=layers).rev());
        if period == 1 {
            e.walk(0, 1);
        } else {
            e.walk(layers - size, 2);
        }
        e.best.expect("every branch yields a candidate")
    });
    let (best_cost, best_sets) = branch_best
        .into_iter()
        .reduce(|acc, cand| if cand.0 < acc.0 { cand } else { acc })
        .expect("at least one branch");
    Ok(SearchReport {
        best: Schedule::new(layers, best_sets)?,
        best_cost,
        solutions_explored: candidates,
        oracle_cost: Some(best_cost),
        classification_log: Vec::new(),
    })
}

/// Adds, per iteration, the longest descending prefix `{L, ..., l}` disjoint
/// from the iteration's sync set that leaves the iteration's length unchanged.
/// Sync sets and the period objective are untouched.
pub fn bubble_fill(schedule: &Schedule, profile: &ModelProfile) -> Result<Schedule> {
    let cm = CostModel::new(profile);
    let layers = profile.num_layers();
    if schedule.num_layers() != layers {
        return Err(Error::Validation(format!(
            "schedule covers {} layers but the profile has {}",
            schedule.num_layers(),
            layers
        )));
    }
    let mut fill = Vec::with_capacity(schedule.period());
    for h in 1..=schedule.period() {
        let set = schedule.set(h);
        let original = cm.term_sorted(set);
        let lowest = set.first().map_or(1, |&top| top + 1);
        let mut best: Vec<usize> = Vec::new();
        let mut candidate: Vec<usize> = Vec::with_capacity(layers + set.len());
        for l in (lowest..=layers).rev() {
            candidate.clear();
            candidate.extend((l..=layers).rev());
            candidate.extend_from_slice(set);
            if cm.term_sorted(&candidate) <= original {
                best = (l..=layers).rev().collect();
            } else {
                break;
            }
        }
        fill.push(best);
    }
    schedule.replace_fill(fill)
}

/// One row of the scheduler scaling comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub layers: usize,
    pub period: usize,
    pub brute_candidates: u128,
    pub dfs_solutions: u128,
    /// `2^min(L-H, H)`.
    pub bound: u128,
    pub dfs_cost: f64,
    pub brute_cost: Option<f64>,
    /// Communication not hidden by BP: objective minus `H * sum t_bp`.
    pub dfs_extra: f64,
    pub brute_extra: Option<f64>,
}

impl ScalingRow {
    pub fn gap(&self) -> Option<f64> {
        self.brute_cost.map(|b| relative_gap(self.dfs_cost, b))
    }
}

pub fn relative_gap(cost: f64, optimum: f64) -> f64 {
    if optimum == 0.0 {
        0.0
    } else {
        (cost - optimum) / optimum
    }
}

pub fn pruning_bound(layers: usize, period: usize) -> u128 {
    let e = (layers.saturating_sub(period)).min(period) as u32;
    1u128.checked_shl(e).unwrap_or(u128::MAX)
}

/// Layers above this are never brute-forced by the scaling table.
pub const SCALING_BRUTE_FORCE_MAX_LAYERS: usize = 30;

/// DFS against brute force for `L = H..=max_layers` on synthetic profiles.
pub fn scaling_table(
    max_layers: usize,
    period: usize,
    seed: u64,
    regime: Regime,
    exec: Exec,
) -> Result<Vec<ScalingRow>> {
    if period < 1 || max_layers < period {
        return Err(Error::Argument(format!(
            "scaling table needs 1 <= H <= max layers (H={period}, max={max_layers})"
        )));
    }
    let sizes: Vec<usize> = (period..=max_layers).collect();
    exec.map(&sizes, |&layers| {
        let profile = synth_profile(layers, seed.wrapping_add(layers as u64), regime)?;
        let bp = period as f64 * profile.total_bp();
        let dfs = schedule_dfs(&profile, period)?;
        let brute = if layers <= SCALING_BRUTE_FORCE_MAX_LAYERS {
            Some(schedule_brute_force_with(&profile, period, None, Exec::Sequential)?)
        } else {
            None
        };
        Ok(ScalingRow {
            layers,
            period,
            brute_candidates: brute_force_candidates(layers, period),
            dfs_solutions: dfs.solutions_explored,
            bound: pruning_bound(layers, period),
            dfs_cost: dfs.best_cost,
            brute_cost: brute.as_ref().map(|b| b.best_cost),
            dfs_extra: dfs.best_cost - bp,
            brute_extra: brute.map(|b| b.best_cost - bp),
        })
    })
    .into_iter()
    .collect()
}

pub fn format_scaling_csv(rows: &[ScalingRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut out = String::from(
        "layers,H,brute_candidates,dfs_solutions,bound,dfs_cost_s,brute_cost_s,gap_pct,dfs_extra_s,brute_extra_s\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:?},{},{},{:?},{}\n",
            r.layers,
            r.period,
            r.brute_candidates,
            r.dfs_solutions,
            r.bound,
            r.dfs_cost,
            opt(r.brute_cost),
            opt(r.gap().map(|g| g * 100.0)),
            r.dfs_extra,
            opt(r.brute_extra),
        ));
    }
    out
}
