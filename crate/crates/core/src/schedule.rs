//! Layer-to-iteration synchronization schedules and their text format.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SCHEDULE_HEADER: &str = "dreamsched-schedule v1";

/// An `H`-iteration synchronization plan over layers `1..=L`.
///
/// `sets[h-1]` holds the layers averaged in iteration `h` (each set sorted
/// descending). Concatenating the sets gives `L, L-1, ..., 1`; empty sets may
/// only form a trailing suffix. `fill[h-1]` lists extra layers synchronized in
/// iteration `h` on otherwise idle link time: a descending prefix
/// `{L, ..., l}` disjoint from `sets[h-1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    layers: usize,
    sets: Vec<Vec<usize>>,
    fill: Vec<Vec<usize>>,
}

impl Schedule {
    pub fn new(layers: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        let fill = vec![Vec::new(); sets.len()];
        Schedule::with_fill(layers, sets, fill)
    }

    pub fn with_fill(layers: usize, mut sets: Vec<Vec<usize>>, mut fill: Vec<Vec<usize>>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Validation("schedule period must be at least 1".into()));
        }
        if fill.len() != sets.len() {
            return Err(Error::Validation(format!(
                "schedule has {} sync sets but {} fill sets",
                sets.len(),
                fill.len()
            )));
        }
        for s in sets.iter_mut().chain(fill.iter_mut()) {
            s.sort_unstable_by(|a, b| b.cmp(a));
        }
        let flat: Vec<usize> = sets.iter().flatten().copied().collect();
        let expected: Vec<usize> = (1..=layers).rev().collect();
        if flat != expected {
            return Err(Error::Validation(format!(
                "sync sets must split layers {layers}..=1 into contiguous descending blocks, got {}",
                render_sets(&sets)
            )));
        }
        if let Some(first_empty) = sets.iter().position(|s| s.is_empty()) {
            if sets[first_empty..].iter().any(|s| !s.is_empty()) {
                return Err(Error::Validation(format!(
                    "empty sync sets may only trail the schedule, got {}",
                    render_sets(&sets)
                )));
            }
        }
        for (h, (set, f)) in sets.iter().zip(&fill).enumerate() {
            if f.is_empty() {
                continue;
            }
            let prefix: Vec<usize> = (f[f.len() - 1]..=layers).rev().collect();
            if *f != prefix {
                return Err(Error::Validation(format!(
                    "fill set of iteration {} must be a prefix {{{layers},...,l}}, got {:?}",
                    h + 1,
                    f
                )));
            }
            if f.iter().any(|l| set.contains(l)) {
                return Err(Error::Validation(format!(
                    "fill set of iteration {} overlaps its sync set",
                    h + 1
                )));
            }
        }
        Ok(Schedule { layers, sets, fill })
    }

    /// Contiguous split into `period` sets of near-equal size; earlier
    /// iterations take the remainder.
    pub fn equal_number(layers: usize, period: usize) -> Result<Self> {
        if period < 1 || period > layers {
            return Err(Error::Argument(format!(
                "equal-number partition needs 1 <= H <= L (H={period}, L={layers})"
            )));
        }
        let base = layers / period;
        let extra = layers % period;
        let mut next = layers;
        let sets = (0..period)
            .map(|h| {
                let size = base + usize::from(h < extra);
                let set: Vec<usize> = (next + 1 - size..=next).rev().collect();
                next -= size;
                set
            })
            .collect();
        Schedule::new(layers, sets)
    }

    /// Every layer synchronized in one iteration of an `period`-long cycle.
    pub fn all_in_first(layers: usize, period: usize) -> Result<Self> {
        let mut sets = vec![Vec::new(); period.max(1)];
        sets[0] = (1..=layers).rev().collect();
        Schedule::new(layers, sets)
    }

    pub fn period(&self) -> usize {
        self.sets.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn fill(&self) -> &[Vec<usize>] {
        &self.fill
    }

    /// Sync set of iteration `h` (1-based).
    pub fn set(&self, h: usize) -> &[usize] {
        &self.sets[h - 1]
    }

    pub fn fill_set(&self, h: usize) -> &[usize] {
        &self.fill[h - 1]
    }

    /// Layers communicated in iteration `h`, descending: sync set plus fill.
    pub fn comm_layers(&self, h: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.set(h).iter().chain(self.fill_set(h)).copied().collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }

    /// 1-based iteration whose sync set contains `layer`.
    pub fn iteration_of(&self, layer: usize) -> Option<usize> {
        self.sets.iter().position(|s| s.contains(&layer)).map(|h| h + 1)
    }

    pub fn without_fill(&self) -> Schedule {
        Schedule {
            layers: self.layers,
            sets: self.sets.clone(),
            fill: vec![Vec::new(); self.sets.len()],
        }
    }

    pub(crate) fn replace_fill(&self, fill: Vec<Vec<usize>>) -> Result<Schedule> {
        Schedule::with_fill(self.layers, self.sets.clone(), fill)
    }
}

fn render_list(v: &[usize]) -> String {
    v.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

fn render_sets(sets: &[Vec<usize>]) -> String {
    sets.iter()
        .map(|s| format!("{{{}}}", render_list(s)))
        .collect::<Vec<_>>()
        .join("|")
}

impl fmt::Display for Schedule {
    /// Compact `{3}|{2,1}` rendering of the sync sets.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_sets(&self.sets))
    }
}

pub fn format_schedule(schedule: &Schedule) -> String {
    let mut out = format!(
        "{SCHEDULE_HEADER}\nH={} L={}\n",
        schedule.period(),
        schedule.num_layers()
    );
    for h in 1..=schedule.period() {
        out.push_str(&format!(
            "h={}: sync=[{}] fill=[{}]\n",
            h,
            render_list(schedule.set(h)),
            render_list(schedule.fill_set(h))
        ));
    }
    out
}

fn parse_list(s: &str, line: usize) -> Result<Vec<usize>> {
    let inner = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Parse {
            line,
            reason: format!("expected a bracketed list, found {s:?}"),
        })?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|x| {
            x.parse::<usize>().map_err(|_| Error::Parse {
                line,
                reason: format!("bad layer index {x:?}"),
            })
        })
        .collect()
}

pub fn parse_schedule(text: &str) -> Result<Schedule> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    if lines.first().map(|l| l.trim()) != Some(SCHEDULE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected header {SCHEDULE_HEADER:?}"),
        });
    }
    let dims = lines.get(1).ok_or_else(|| Error::Parse {
        line: 2,
        reason: "missing `H=<int> L=<int>` line".into(),
    })?;
    let bad_dims = || Error::Parse {
        line: 2,
        reason: format!("expected `H=<int> L=<int>`, found {dims:?}"),
    };
    let (h_part, l_part) = dims.split_once(' ').ok_or_else(bad_dims)?;
    let period: usize = h_part
        .strip_prefix("H=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad_dims)?;
    let layers: usize = l_part
        .strip_prefix("L=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad_dims)?;

    let body: Vec<(usize, &str)> = lines
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, *l))
        .collect();
    if body.len() != period {
        return Err(Error::Parse {
            line: lines.len(),
            reason: format!("expected {period} iteration lines, found {}", body.len()),
        });
    }
    let mut sets = Vec::with_capacity(period);
    let mut fill = Vec::with_capacity(period);
    for (expected_h, (n, line)) in body.into_iter().enumerate() {
        let bad = || Error::Parse {
            line: n,
            reason: format!("expected `h=<int>: sync=[...] fill=[...]`, found {line:?}"),
        };
        let (head, rest) = line.split_once(": ").ok_or_else(bad)?;
        let h: usize = head.strip_prefix("h=").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if h != expected_h + 1 {
            return Err(Error::Parse {
                line: n,
                reason: format!("iterations out of order: expected h={}, found h={h}", expected_h + 1),
            });
        }
        let (sync, fill_part) = rest.split_once(' ').ok_or_else(bad)?;
        sets.push(parse_list(sync.strip_prefix("sync=").ok_or_else(bad)?, n)?);
        fill.push(parse_list(fill_part.strip_prefix("fill=").ok_or_else(bad)?, n)?);
    }
    Schedule::with_fill(layers, sets, fill)
}

pub fn load_schedule(path: impl AsRef<Path>) -> Result<Schedule> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schedule(&text)
}

pub fn save_schedule(schedule: &Schedule, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_schedule(schedule)).map_err(|e| Error::io(path, e))
}
