//! Closed-form time accounting for S-SGD, local SGD and partially
//! synchronized local SGD.
//!
//! Within one iteration, time 0 is the moment BP of layer `L` starts. Layer
//! `l` finishes BP at `C(l) = sum of t_bp over layers L..=l`. A set of layers
//! communicates over one FIFO link, each layer launched no earlier than its
//! own BP completion:
//!
//! ```text
//! tau(h_0) = C(h_0)
//! tau(h_j) = max(C(h_j), tau(h_{j-1}) + t_comm(h_{j-1}))
//! finish   = tau(h_last) + t_comm(h_last)
//! ```
//!
//! Because the next forward pass waits for outstanding communication, an
//! iteration's BP-plus-comm phase lasts `max(sum t_bp, finish)`.

use crate::error::{Error, Result};
use crate::profile::ModelProfile;
use crate::schedule::Schedule;

/// Precomputed per-layer times, indexed by 1-based layer.
#[derive(Debug, Clone)]
pub struct CostModel {
    bp: Vec<f64>,
    comm: Vec<f64>,
    completion: Vec<f64>,
    total_bp: f64,
    total_fp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommSpan {
    /// Time from the first layer's launch to the last layer's completion.
    pub span: f64,
    /// Completion timestamp of the last transfer, from the start of BP.
    pub finish: f64,
}

impl CostModel {
    pub fn new(profile: &ModelProfile) -> Self {
        let n = profile.num_layers();
        let mut bp = vec![0.0; n + 1];
        let mut comm = vec![0.0; n + 1];
        for l in 1..=n {
            bp[l] = profile.layer(l).t_bp;
            comm[l] = profile.comm(l);
        }
        let mut completion = vec![0.0; n + 2];
        let mut acc = 0.0;
        for l in (1..=n).rev() {
            acc += bp[l];
            completion[l] = acc;
        }
        CostModel {
            bp,
            comm,
            completion,
            total_bp: acc,
            total_fp: profile.total_fp(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.bp.len() - 1
    }

    pub fn total_bp(&self) -> f64 {
        self.total_bp
    }

    pub fn total_fp(&self) -> f64 {
        self.total_fp
    }

    pub fn bp(&self, layer: usize) -> f64 {
        self.bp[layer]
    }

    pub fn comm(&self, layer: usize) -> f64 {
        self.comm[layer]
    }

    /// BP completion timestamp of `layer`.
    pub fn completion(&self, layer: usize) -> f64 {
        self.completion[layer]
    }

    /// BP remaining after `first` completes: the overlap window of a set whose
    /// first (largest-index) layer is `first`.
    pub fn window(&self, first: usize) -> f64 {
        self.total_bp - self.completion[first]
    }

    /// Pipelined communication of `layers`, which must be sorted descending.
    pub fn span_sorted(&self, layers: &[usize]) -> CommSpan {
        let Some(&first) = layers.first() else {
            return CommSpan { span: 0.0, finish: 0.0 };
        };
        let mut link_free = 0.0f64;
        for &l in layers {
            let tau = self.completion[l].max(link_free);
            link_free = tau + self.comm[l];
        }
        CommSpan {
            span: link_free - self.completion[first],
            finish: link_free,
        }
    }

    /// Like [`span_sorted`](Self::span_sorted) for a set in any order.
    pub fn span(&self, layers: &[usize]) -> CommSpan {
        let mut sorted = layers.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted.dedup();
        self.span_sorted(&sorted)
    }

    /// Length of an iteration's BP-plus-comm phase when `layers` (sorted
    /// descending) communicate in it.
    pub fn term_sorted(&self, layers: &[usize]) -> f64 {
        if layers.is_empty() {
            self.total_bp
        } else {
            self.total_bp.max(self.span_sorted(layers).finish)
        }
    }

    fn iteration_cost(&self, layers: &[usize]) -> IterationCost {
        let Some(&first) = layers.first() else {
            return IterationCost {
                bp_before: self.total_bp,
                bp_first: 0.0,
                overlap_window: 0.0,
                comm_span: 0.0,
                term: self.total_bp,
            };
        };
        let span = self.span_sorted(layers);
        IterationCost {
            bp_before: self.completion[first] - self.bp[first],
            bp_first: self.bp[first],
            overlap_window: self.window(first),
            comm_span: span.span,
            term: self.total_bp.max(span.finish),
        }
    }

    /// Objective of a schedule; see [`period_objective`].
    pub fn period_cost(&self, schedule: &Schedule) -> Result<PeriodCost> {
        if schedule.num_layers() != self.num_layers() {
            return Err(Error::Validation(format!(
                "schedule covers {} layers but the profile has {}",
                schedule.num_layers(),
                self.num_layers()
            )));
        }
        let per_iteration: Vec<IterationCost> = (1..=schedule.period())
            .map(|h| self.iteration_cost(&schedule.comm_layers(h)))
            .collect();
        let objective: f64 = per_iteration.iter().map(|c| c.term).sum();
        Ok(PeriodCost {
            total_with_fp: schedule.period() as f64 * self.total_fp + objective,
            per_iteration,
            objective,
        })
    }

    /// Objective of sync sets given as descending slices, no fill. Used by the
    /// search, which evaluates many candidates.
    pub(crate) fn objective_of_sets(&self, sets: &[Vec<usize>]) -> f64 {
        sets.iter().map(|s| self.term_sorted(s)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationCost {
    /// BP time of layers preceding the set's first layer.
    pub bp_before: f64,
    /// BP time of the set's first (largest-index) layer.
    pub bp_first: f64,
    /// BP remaining after the first layer completes.
    pub overlap_window: f64,
    /// Pipelined comm span measured from the first layer's BP completion.
    pub comm_span: f64,
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodCost {
    pub per_iteration: Vec<IterationCost>,
    /// Sum of per-iteration terms: BP plus non-hidden communication.
    pub objective: f64,
    /// One full period including `H` forward passes.
    pub total_with_fp: f64,
}

pub fn effective_comm_span(set: &[usize], profile: &ModelProfile) -> CommSpan {
    CostModel::new(profile).span(set)
}

pub fn period_objective(schedule: &Schedule, profile: &ModelProfile) -> Result<PeriodCost> {
    CostModel::new(profile).period_cost(schedule)
}

/// Synchronous SGD: every iteration runs FP, BP, then all communication.
pub fn t_ssgd_total(profile: &ModelProfile, iterations: u64) -> f64 {
    iterations as f64 * (profile.total_fp() + profile.total_bp() + profile.total_comm())
}

/// Local SGD with full synchronization every `period` iterations. A trailing
/// partial period is charged one communication round.
pub fn t_lsgd_total(profile: &ModelProfile, iterations: u64, period: u64) -> Result<f64> {
    if period < 1 {
        return Err(Error::Argument("period H must be at least 1".into()));
    }
    let rounds = iterations.div_ceil(period);
    Ok(iterations as f64 * (profile.total_fp() + profile.total_bp()) + rounds as f64 * profile.total_comm())
}

/// Fraction of S-SGD time saved by synchronizing every `period` iterations.
pub fn saved_ratio(profile: &ModelProfile, period: u64) -> Result<f64> {
    if period < 1 {
        return Err(Error::Argument("period H must be at least 1".into()));
    }
    let comm = profile.total_comm();
    let total = profile.total_fp() + profile.total_bp() + comm;
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - 1.0 / period as f64) * (comm / total))
}

/// One WFBP iteration: FP, then BP with every layer's communication launched
/// at its BP completion.
pub fn wfbp_iteration_time(profile: &ModelProfile) -> f64 {
    let cm = CostModel::new(profile);
    let all: Vec<usize> = (1..=cm.num_layers()).rev().collect();
    cm.total_fp() + cm.term_sorted(&all)
}

/// Key-value rendering consumed by `schedule --explain`.
pub fn format_cost_report(cost: &PeriodCost) -> String {
    let mut out = String::new();
    for (i, c) in cost.per_iteration.iter().enumerate() {
        out.push_str(&format!(
            "iteration {}: bp_before={:?} bp_first={:?} overlap_window={:?} comm_span={:?} term={:?}\n",
            i + 1,
            c.bp_before,
            c.bp_first,
            c.overlap_window,
            c.comm_span,
            c.term
        ));
    }
    out.push_str(&format!("objective={:?}\n", cost.objective));
    out.push_str(&format!("total_with_fp={:?}\n", cost.total_with_fp));
    out
}
