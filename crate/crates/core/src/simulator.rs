//! Discrete-event replay of training timelines.
//!
//! Two resources: a compute lane running FP then BP back-to-back, and a single
//! FIFO link with no preemption. Communication of a layer is released when its
//! BP completes. The next iteration's FP waits until the link has drained
//! everything released in the current iteration.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::profile::ModelProfile;
use crate::schedule::Schedule;
use crate::scheduler::{bubble_fill, schedule_dfs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Synchronous SGD, communication after the whole BP pass.
    Ssgd,
    /// Synchronous SGD with wait-free backpropagation.
    Wfbp,
    /// Local SGD with full synchronization every `H` iterations.
    Flsgd,
    /// Local SGD with partial, scheduled synchronization.
    Plsgd,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Ssgd, Mode::Wfbp, Mode::Flsgd, Mode::Plsgd];

    fn trace_pid(self) -> u32 {
        match self {
            Mode::Ssgd => 1,
            Mode::Wfbp => 2,
            Mode::Flsgd => 3,
            Mode::Plsgd => 4,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ssgd => "ssgd",
            Mode::Wfbp => "wfbp",
            Mode::Flsgd => "flsgd",
            Mode::Plsgd => "plsgd",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssgd" => Ok(Mode::Ssgd),
            "wfbp" => Ok(Mode::Wfbp),
            "flsgd" => Ok(Mode::Flsgd),
            "plsgd" => Ok(Mode::Plsgd),
            other => Err(Error::Argument(format!(
                "unknown mode {other:?} (expected ssgd, wfbp, flsgd or plsgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Fp,
    Bp,
    Comm,
    SyncBarrier,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Fp => "FP",
            EventKind::Bp => "BP",
            EventKind::Comm => "COMM",
            EventKind::SyncBarrier => "SYNC_BARRIER",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lane {
    Compute,
    Link,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    /// `None` stands for all layers at once.
    pub layer: Option<usize>,
    /// 1-based global iteration.
    pub iteration: u64,
    pub start: f64,
    pub end: f64,
    pub lane: Lane,
    /// Start of the iteration's BP pass, for BP-relative reporting.
    pub bp_origin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub events: Vec<Event>,
    pub makespan: f64,
    pub mode: Mode,
    pub period: usize,
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    ComputeDone,
    LinkDone,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    time: f64,
    seq: u64,
    what: Pending,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// A compute-lane operation.
#[derive(Debug, Clone, Copy)]
struct Op {
    kind: EventKind,
    layer: usize,
    duration: f64,
    /// Communication released when this op completes.
    release: Release,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Release {
    Nothing,
    Layer(usize),
    /// Every layer, one transfer each, descending.
    EachLayer,
    /// A single transfer covering the whole model.
    WholeModel,
}

struct Sim<'a> {
    profile: &'a ModelProfile,
    comm: Vec<f64>,
    clock: f64,
    seq: u64,
    heap: BinaryHeap<Queued>,
    link_queue: VecDeque<(Option<usize>, f64)>,
    link_busy: Option<(Option<usize>, f64)>,
    events: Vec<Event>,
}

impl<'a> Sim<'a> {
    fn new(profile: &'a ModelProfile) -> Self {
        let comm = (1..=profile.num_layers()).map(|l| profile.comm(l)).collect();
        Sim {
            profile,
            comm,
            clock: 0.0,
            seq: 0,
            heap: BinaryHeap::new(),
            link_queue: VecDeque::new(),
            link_busy: None,
            events: Vec::new(),
        }
    }

    fn push(&mut self, time: f64, what: Pending) {
        self.seq += 1;
        self.heap.push(Queued {
            time,
            seq: self.seq,
            what,
        });
    }

    fn start_link_if_idle(&mut self, iteration: u64, bp_origin: f64) {
        if self.link_busy.is_some() {
            return;
        }
        if let Some((layer, duration)) = self.link_queue.pop_front() {
            let end = self.clock + duration;
            self.events.push(Event {
                kind: EventKind::Comm,
                layer,
                iteration,
                start: self.clock,
                end,
                lane: Lane::Link,
                bp_origin,
            });
            self.link_busy = Some((layer, end));
            self.push(end, Pending::LinkDone);
        }
    }

    fn release(&mut self, release: Release) {
        match release {
            Release::Nothing => {}
            Release::Layer(l) => self.link_queue.push_back((Some(l), self.comm[l - 1])),
            Release::EachLayer => {
                for l in (1..=self.comm.len()).rev() {
                    self.link_queue.push_back((Some(l), self.comm[l - 1]));
                }
            }
            Release::WholeModel => {
                let total: f64 = self.comm.iter().sum();
                self.link_queue.push_back((None, total));
            }
        }
    }

    /// Runs one iteration starting at the current clock and returns when both
    /// lanes are idle.
    fn run_iteration(&mut self, iteration: u64, ops: &[Op]) {
        let fp_total: f64 = ops.iter().filter(|o| o.kind == EventKind::Fp).map(|o| o.duration).sum();
        let bp_origin = self.clock + fp_total;
        let mut next_op = 0usize;
        let mut compute_idle_at = self.clock;
        if let Some(op) = ops.first() {
            self.push(self.clock + op.duration, Pending::ComputeDone);
        }
        let mut op_start = self.clock;
        while let Some(q) = self.heap.pop() {
            self.clock = q.time;
            match q.what {
                Pending::ComputeDone => {
                    let op = ops[next_op];
                    self.events.push(Event {
                        kind: op.kind,
                        layer: Some(op.layer),
                        iteration,
                        start: op_start,
                        end: self.clock,
                        lane: Lane::Compute,
                        bp_origin,
                    });
                    self.release(op.release);
                    self.start_link_if_idle(iteration, bp_origin);
                    next_op += 1;
                    if let Some(op) = ops.get(next_op) {
                        op_start = self.clock;
                        self.push(self.clock + op.duration, Pending::ComputeDone);
                    } else {
                        compute_idle_at = self.clock;
                    }
                }
                Pending::LinkDone => {
                    self.link_busy = None;
                    self.start_link_if_idle(iteration, bp_origin);
                }
            }
        }
        if self.clock > compute_idle_at {
            self.events.push(Event {
                kind: EventKind::SyncBarrier,
                layer: None,
                iteration,
                start: compute_idle_at,
                end: self.clock,
                lane: Lane::Compute,
                bp_origin,
            });
        }
        self.clock = self.clock.max(compute_idle_at);
    }

    fn ops_for(&self, release_of: impl Fn(usize, bool) -> Release) -> Vec<Op> {
        let n = self.profile.num_layers();
        let mut ops = Vec::with_capacity(2 * n);
        for l in 1..=n {
            ops.push(Op {
                kind: EventKind::Fp,
                layer: l,
                duration: self.profile.layer(l).t_fp,
                release: Release::Nothing,
            });
        }
        for l in (1..=n).rev() {
            ops.push(Op {
                kind: EventKind::Bp,
                layer: l,
                duration: self.profile.layer(l).t_bp,
                release: release_of(l, l == 1),
            });
        }
        ops
    }
}

/// Replays `iterations` training iterations under `mode`.
///
/// `flsgd` takes its period from `period` or, failing that, from the
/// schedule, and also synchronizes after the last iteration when the run ends
/// mid-period. `plsgd` requires a schedule.
pub fn simulate_run(
    profile: &ModelProfile,
    mode: Mode,
    schedule: Option<&Schedule>,
    period: Option<usize>,
    iterations: u64,
) -> Result<Timeline> {
    if iterations < 1 {
        return Err(Error::Argument("simulation needs at least one iteration".into()));
    }
    if let Some(s) = schedule {
        if s.num_layers() != profile.num_layers() {
            return Err(Error::Validation(format!(
                "schedule covers {} layers but the profile has {}",
                s.num_layers(),
                profile.num_layers()
            )));
        }
    }
    let h = match mode {
        Mode::Ssgd | Mode::Wfbp => 1,
        Mode::Flsgd => period
            .or(schedule.map(Schedule::period))
            .ok_or_else(|| Error::Argument("flsgd mode needs a period H".into()))?,
        Mode::Plsgd => {
            let s = schedule.ok_or_else(|| Error::Argument("plsgd mode needs a schedule".into()))?;
            if let Some(p) = period {
                if p != s.period() {
                    return Err(Error::Argument(format!(
                        "period H={p} disagrees with the schedule's H={}",
                        s.period()
                    )));
                }
            }
            s.period()
        }
    };
    if h < 1 {
        return Err(Error::Argument("period H must be at least 1".into()));
    }

    let mut sim = Sim::new(profile);
    for r in 0..iterations {
        let ops = match mode {
            Mode::Ssgd => sim.ops_for(|_, last| if last { Release::EachLayer } else { Release::Nothing }),
            Mode::Wfbp => sim.ops_for(|l, _| Release::Layer(l)),
            Mode::Flsgd => {
                let sync = (r + 1).is_multiple_of(h as u64) || r + 1 == iterations;
                sim.ops_for(|_, last| {
                    if last && sync {
                        Release::WholeModel
                    } else {
                        Release::Nothing
                    }
                })
            }
            Mode::Plsgd => {
                let s = schedule.expect("checked above");
                let layers = s.comm_layers((r % h as u64) as usize + 1);
                sim.ops_for(|l, _| {
                    if layers.contains(&l) {
                        Release::Layer(l)
                    } else {
                        Release::Nothing
                    }
                })
            }
        };
        sim.run_iteration(r + 1, &ops);
    }
    let makespan = sim.events.iter().map(|e| e.end).fold(0.0, f64::max);
    Ok(Timeline {
        events: sim.events,
        makespan,
        mode,
        period: h,
    })
}

fn round_us(t: f64) -> i64 {
    (t * 1.0e6).round_ties_even() as i64
}

fn event_name(e: &Event) -> String {
    match e.layer {
        Some(l) if e.kind != EventKind::SyncBarrier => format!("{} L{}", e.kind, l),
        _ if e.kind == EventKind::SyncBarrier => e.kind.to_string(),
        _ => format!("{} ALL", e.kind),
    }
}

/// Trace-event JSON (an array of complete events) for browser trace viewers.
pub fn trace_json(timeline: &Timeline) -> Value {
    let pid = timeline.mode.trace_pid();
    let mut out = Vec::with_capacity(timeline.events.len() + 3);
    if !timeline.events.is_empty() {
        out.push(json!({"name": "process_name", "ph": "M", "pid": pid, "tid": 0,
                        "args": {"name": timeline.mode.to_string()}}));
        out.push(json!({"name": "thread_name", "ph": "M", "pid": pid, "tid": 0,
                        "args": {"name": "compute"}}));
        out.push(json!({"name": "thread_name", "ph": "M", "pid": pid, "tid": 1,
                        "args": {"name": "link"}}));
    }
    for e in &timeline.events {
        let ts = round_us(e.start);
        let dur = round_us(e.end) - ts;
        out.push(json!({
            "name": event_name(e),
            "cat": e.kind.to_string(),
            "ph": "X",
            "ts": ts,
            "dur": dur,
            "pid": pid,
            "tid": match e.lane { Lane::Compute => 0, Lane::Link => 1 },
            "args": {
                "iteration": e.iteration,
                "bp_rel_us": round_us(e.start - e.bp_origin),
            },
        }));
    }
    Value::Array(out)
}

pub fn export_trace(timeline: &Timeline, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&trace_json(timeline)).expect("trace values serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRow {
    pub mode: Mode,
    pub makespan: f64,
    pub avg_iter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeComparison {
    pub rows: Vec<ModeRow>,
    /// The filled schedule used for `plsgd`.
    pub schedule: Schedule,
    /// Speedup of plsgd over wfbp.
    pub s1: f64,
    /// Speedup of plsgd over flsgd.
    pub s2: f64,
}

impl ModeComparison {
    pub fn makespan(&self, mode: Mode) -> f64 {
        self.rows
            .iter()
            .find(|r| r.mode == mode)
            .map(|r| r.makespan)
            .unwrap_or(f64::NAN)
    }
}

/// Simulates all four modes; plsgd runs the searched schedule with bubble
/// filling.
pub fn compare_modes(profile: &ModelProfile, period: usize, iterations: u64) -> Result<ModeComparison> {
    compare_modes_with(profile, period, iterations, Exec::default())
}

pub fn compare_modes_with(
    profile: &ModelProfile,
    period: usize,
    iterations: u64,
    exec: Exec,
) -> Result<ModeComparison> {
    let schedule = bubble_fill(&schedule_dfs(profile, period)?.best, profile)?;
    let rows = exec
        .map(&Mode::ALL, |&mode| {
            let t = simulate_run(profile, mode, Some(&schedule), Some(period), iterations)?;
            Ok(ModeRow {
                mode,
                makespan: t.makespan,
                avg_iter: t.makespan / iterations as f64,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let get = |m: Mode| rows.iter().find(|r| r.mode == m).expect("all modes simulated").makespan;
    let plsgd = get(Mode::Plsgd);
    Ok(ModeComparison {
        s1: get(Mode::Wfbp) / plsgd,
        s2: get(Mode::Flsgd) / plsgd,
        rows,
        schedule,
    })
}

pub fn format_comparison(cmp: &ModeComparison) -> String {
    let mut out = String::from("mode\tmakespan_s\tavg_iter_s\n");
    for r in &cmp.rows {
        out.push_str(&format!("{}\t{:?}\t{:?}\n", r.mode, r.makespan, r.avg_iter));
    }
    out.push_str(&format!("S1={:?}\nS2={:?}\n", cmp.s1, cmp.s2));
    out
}
