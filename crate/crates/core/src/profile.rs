//! Per-layer timing and size data, the on-disk profile format, and a
//! reproducible synthetic profile generator.
//!
//! Layer 1 is the input-side layer and layer `L` the output-side layer, so
//! back-propagation visits layers in descending index order. All times are
//! seconds as `f64`; the file format stores whole microseconds.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PROFILE_HEADER: &str = "dreamsched-profile v1";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub index: usize,
    pub name: String,
    pub param_bytes: u64,
    pub t_fp: f64,
    pub t_bp: f64,
    pub t_comm_override: Option<f64>,
}

/// Alpha-beta link: a transfer of `n` bytes costs `latency + n / bandwidth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub bandwidth: f64,
    pub latency: f64,
}

impl LinkModel {
    pub fn new(bandwidth: f64, latency: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidProfile(format!(
                "link bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !(latency.is_finite() && latency >= 0.0) {
            return Err(Error::InvalidProfile(format!(
                "link latency must be non-negative, got {latency}"
            )));
        }
        Ok(LinkModel { bandwidth, latency })
    }
}

/// Communication time of one layer. A measured override always wins over the
/// link model.
pub fn comm_time(layer: &LayerProfile, link: &LinkModel) -> f64 {
    match layer.t_comm_override {
        Some(t) => t,
        None => link.latency + layer.param_bytes as f64 / link.bandwidth,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    layers: Vec<LayerProfile>,
    link: LinkModel,
    label: String,
}

impl ModelProfile {
    /// Validates and sorts `layers` by index.
    pub fn new(mut layers: Vec<LayerProfile>, link: LinkModel, label: impl Into<String>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidProfile("profile has no layers".into()));
        }
        LinkModel::new(link.bandwidth, link.latency)?;
        layers.sort_by_key(|l| l.index);
        for (pos, layer) in layers.iter().enumerate() {
            if pos > 0 && layers[pos - 1].index == layer.index {
                return Err(Error::InvalidLayer {
                    index: layer.index,
                    reason: "duplicate layer index".into(),
                });
            }
            if layer.index != pos + 1 {
                let missing = if layer.index == 0 { 0 } else { pos + 1 };
                return Err(Error::InvalidLayer {
                    index: missing,
                    reason: format!(
                        "layer indexes must be exactly 1..={} (found {} at position {})",
                        layers.len(),
                        layer.index,
                        pos + 1
                    ),
                });
            }
            validate_layer(layer)?;
        }
        Ok(ModelProfile {
            layers,
            link,
            label: label.into(),
        })
    }

    pub fn layers(&self) -> &[LayerProfile] {
        &self.layers
    }

    pub fn link(&self) -> LinkModel {
        self.link
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Number of layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer by 1-based index.
    pub fn layer(&self, index: usize) -> &LayerProfile {
        &self.layers[index - 1]
    }

    pub fn comm(&self, index: usize) -> f64 {
        comm_time(self.layer(index), &self.link)
    }

    pub fn total_fp(&self) -> f64 {
        self.layers.iter().map(|l| l.t_fp).sum()
    }

    pub fn total_bp(&self) -> f64 {
        self.layers.iter().map(|l| l.t_bp).sum()
    }

    pub fn total_comm(&self) -> f64 {
        self.layers.iter().map(|l| comm_time(l, &self.link)).sum()
    }

    /// Returns a copy with every communication time multiplied by `factor`.
    /// Layers without an override get one, so the scaling is exact.
    pub fn with_comm_scaled(&self, factor: f64) -> ModelProfile {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerProfile {
                t_comm_override: Some(comm_time(l, &self.link) * factor),
                ..l.clone()
            })
            .collect();
        ModelProfile {
            layers,
            link: self.link,
            label: self.label.clone(),
        }
    }

    /// Builds a profile directly from per-layer second values, listed from
    /// layer 1 upward. Convenient for small hand-written instances.
    pub fn from_times(t_fp: &[f64], t_bp: &[f64], t_comm: &[f64]) -> Result<Self> {
        if t_fp.len() != t_bp.len() || t_bp.len() != t_comm.len() {
            return Err(Error::Argument("time vectors differ in length".into()));
        }
        let layers = (0..t_bp.len())
            .map(|i| LayerProfile {
                index: i + 1,
                name: format!("layer{}", i + 1),
                param_bytes: 0,
                t_fp: t_fp[i],
                t_bp: t_bp[i],
                t_comm_override: Some(t_comm[i]),
            })
            .collect();
        ModelProfile::new(layers, LinkModel::new(1.0e9, 0.0)?, "inline")
    }
}

fn validate_layer(layer: &LayerProfile) -> Result<()> {
    let bad = |reason: &str| Error::InvalidLayer {
        index: layer.index,
        reason: reason.to_string(),
    };
    if !(layer.t_fp.is_finite() && layer.t_fp >= 0.0) {
        return Err(bad("negative or non-finite forward time"));
    }
    if !(layer.t_bp.is_finite() && layer.t_bp >= 0.0) {
        return Err(bad("negative or non-finite backward time"));
    }
    match layer.t_comm_override {
        Some(t) if !(t.is_finite() && t >= 0.0) => return Err(bad("negative or non-finite communication override")),
        None if layer.param_bytes == 0 => {
            return Err(bad(
                "communication time undefined: no override and zero parameter bytes",
            ))
        }
        _ => {}
    }
    Ok(())
}

fn secs_to_us(t: f64) -> u64 {
    (t * 1.0e6).round() as u64
}

fn us_to_secs(us: u64) -> f64 {
    us as f64 / 1.0e6
}

/// Renders a profile in the line-oriented text format.
pub fn format_profile(profile: &ModelProfile) -> String {
    let mut out = String::new();
    out.push_str(PROFILE_HEADER);
    out.push('\n');
    for l in &profile.layers {
        let comm = match l.t_comm_override {
            Some(t) => secs_to_us(t).to_string(),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            l.index,
            l.name,
            l.param_bytes,
            secs_to_us(l.t_fp),
            secs_to_us(l.t_bp),
            comm
        ));
    }
    out.push_str(&format!(
        "link\t{}\t{}\n",
        profile.link.bandwidth,
        secs_to_us(profile.link.latency)
    ));
    out
}

fn parse_us(field: &str, line: usize, what: &str, index: Option<usize>) -> Result<u64> {
    match field.parse::<i64>() {
        Ok(v) if v < 0 => Err(match index {
            Some(index) => Error::InvalidLayer {
                index,
                reason: format!("negative {what}"),
            },
            None => Error::InvalidProfile(format!("negative {what}")),
        }),
        Ok(v) => Ok(v as u64),
        Err(_) => Err(Error::Parse {
            line,
            reason: format!("{what} is not an integer: {field:?}"),
        }),
    }
}

/// Parses the text format. `label` names the resulting profile.
pub fn parse_profile(text: &str, label: &str) -> Result<ModelProfile> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));

    match lines.next() {
        Some((_, h)) if h.trim() == PROFILE_HEADER => {}
        Some((n, h)) => {
            return Err(Error::Parse {
                line: n,
                reason: format!("expected header {PROFILE_HEADER:?}, found {h:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                reason: "empty file".into(),
            })
        }
    }

    let mut layers = Vec::new();
    let mut link = None;
    for (n, line) in lines {
        if link.is_some() {
            return Err(Error::Parse {
                line: n,
                reason: "content after link footer".into(),
            });
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == "link" {
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: n,
                    reason: format!("link footer needs 3 fields, found {}", fields.len()),
                });
            }
            let bandwidth: f64 = fields[1].parse().map_err(|_| Error::Parse {
                line: n,
                reason: format!("bandwidth is not a number: {:?}", fields[1]),
            })?;
            let latency = us_to_secs(parse_us(fields[2], n, "link latency", None)?);
            link = Some(LinkModel::new(bandwidth, latency)?);
            continue;
        }
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: n,
                reason: format!("layer line needs 6 fields, found {}", fields.len()),
            });
        }
        let index: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: n,
            reason: format!("layer index is not a non-negative integer: {:?}", fields[0]),
        })?;
        let param_bytes = parse_us(fields[2], n, "parameter byte count", Some(index))?;
        let t_fp = us_to_secs(parse_us(fields[3], n, "forward time", Some(index))?);
        let t_bp = us_to_secs(parse_us(fields[4], n, "backward time", Some(index))?);
        let t_comm_override = match fields[5] {
            "-" => None,
            f => Some(us_to_secs(parse_us(f, n, "communication time", Some(index))?)),
        };
        layers.push(LayerProfile {
            index,
            name: fields[1].to_string(),
            param_bytes,
            t_fp,
            t_bp,
            t_comm_override,
        });
    }
    let link = link.ok_or_else(|| Error::InvalidProfile("missing link footer".into()))?;
    ModelProfile::new(layers, link, label)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ModelProfile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_profile(&text, &label)
}

pub fn save_profile(profile: &ModelProfile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_profile(profile)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    CommHeavy,
    ComputeHeavy,
    Balanced,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::CommHeavy, Regime::ComputeHeavy, Regime::Balanced];

    /// Backward time range in microseconds.
    fn bp_range_us(self) -> (u64, u64) {
        match self {
            Regime::CommHeavy => (500, 5_000),
            Regime::ComputeHeavy => (2_000, 20_000),
            Regime::Balanced => (1_000, 10_000),
        }
    }

    /// Target range for total comm / total backward time.
    fn comm_ratio_range(self) -> (f64, f64) {
        match self {
            Regime::CommHeavy => (2.5, 5.0),
            Regime::ComputeHeavy => (0.1, 0.4),
            Regime::Balanced => (0.9, 1.1),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::CommHeavy => "comm-heavy",
            Regime::ComputeHeavy => "compute-heavy",
            Regime::Balanced => "balanced",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comm-heavy" => Ok(Regime::CommHeavy),
            "compute-heavy" => Ok(Regime::ComputeHeavy),
            "balanced" => Ok(Regime::Balanced),
            other => Err(Error::Argument(format!(
                "unknown regime {other:?} (expected comm-heavy, compute-heavy or balanced)"
            ))),
        }
    }
}

const SYNTH_LATENCY_US: u64 = 5;

/// Deterministic synthetic profile. Times are whole microseconds, so the
/// result survives a save/load cycle unchanged. Communication goes through the
/// link model; the bandwidth is picked so that total comm over total backward
/// time lands inside the regime's ratio band.
pub fn synth_profile(l_count: usize, seed: u64, regime: Regime) -> Result<ModelProfile> {
    if l_count < 1 {
        return Err(Error::Argument("synthetic profile needs at least one layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bp_lo, bp_hi) = regime.bp_range_us();
    let mut layers = Vec::with_capacity(l_count);
    for i in 1..=l_count {
        let bp_us = rng.random_range(bp_lo..=bp_hi);
        let fp_us = ((bp_us as f64) * rng.random_range(0.3..0.6)).round() as u64;
        // log-uniform parameter sizes between 4 KB and 16 MB
        let log_bytes = rng.random_range((4.0e3f64).ln()..(1.6e7f64).ln());
        let param_bytes = log_bytes.exp().round() as u64;
        layers.push(LayerProfile {
            index: i,
            name: format!("synth{i}"),
            param_bytes,
            t_fp: us_to_secs(fp_us),
            t_bp: us_to_secs(bp_us),
            t_comm_override: None,
        });
    }
    let (r_lo, r_hi) = regime.comm_ratio_range();
    let ratio = rng.random_range(r_lo..r_hi);
    let total_bp: f64 = layers.iter().map(|l| l.t_bp).sum();
    let total_bytes: f64 = layers.iter().map(|l| l.param_bytes as f64).sum();
    let latency = us_to_secs(SYNTH_LATENCY_US);
    let transfer_budget = ratio * total_bp - l_count as f64 * latency;
    let bandwidth = (total_bytes / transfer_budget).round().max(1.0);
    let link = LinkModel::new(bandwidth, latency)?;
    ModelProfile::new(layers, link, format!("synth-{regime}-{l_count}-{seed}"))
}
