//! Reuse of voxel averages across frames.
//!
//! Every cell keeps the current frame's running sum next to a previous
//! generation. The two are blended with weight `alpha` on the old mean:
//!
//! * `Filter`: constant `alpha` (exponential moving average),
//! * `Integrate`: `alpha = N_old / (N_old + N_new)`, which is plain
//!   accumulation over all frames,
//! * `Hybrid`: the integrating weight scaled down by a per-voxel change
//!   metric obtained by re-tracing a subset of the previous frame's paths.

use alloc::vec::Vec;
use core::fmt;

use crate::keys::{level_of_detail, CellHashes, CellKey, FilterConfig, MAX_LEVEL};
use crate::math::{Rgb, Vec3};
use crate::table::{decode_count, encode_count, HashTable, History, RawCell, SumMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemporalMode {
    Filter,
    #[default]
    Integrate,
    Hybrid,
}

impl TemporalMode {
    pub fn name(self) -> &'static str {
        match self {
            TemporalMode::Filter => "filter",
            TemporalMode::Integrate => "integrate",
            TemporalMode::Hybrid => "hybrid",
        }
    }
}

impl core::str::FromStr for TemporalMode {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filter" | "ema" => Ok(TemporalMode::Filter),
            "integrate" => Ok(TemporalMode::Integrate),
            "hybrid" => Ok(TemporalMode::Hybrid),
            _ => Err(TemporalError::UnknownMode),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalError {
    NoSamples,
    UnknownMode,
}

impl fmt::Display for TemporalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemporalError::NoSamples => write!(f, "cannot blend two empty generations"),
            TemporalError::UnknownMode => write!(f, "unknown temporal mode (expected filter, integrate or hybrid)"),
        }
    }
}

impl core::error::Error for TemporalError {}

/// Parameters of [`blend`], usually taken from a [`FilterConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendParams {
    pub mode: TemporalMode,
    pub ema_alpha: f64,
    pub delta_max: f64,
}

impl From<&FilterConfig> for BlendParams {
    fn from(cfg: &FilterConfig) -> Self {
        Self {
            mode: cfg.temporal_mode,
            ema_alpha: cfg.ema_alpha,
            delta_max: cfg.delta_max,
        }
    }
}

/// Weight of the previous generation.
pub fn alpha(n_old: f64, n_new: f64, delta: f64, p: &BlendParams) -> f64 {
    if n_old <= 0.0 {
        return 0.0;
    }
    if n_new <= 0.0 {
        return 1.0;
    }
    let integrate = n_old / (n_old + n_new);
    match p.mode {
        TemporalMode::Filter => p.ema_alpha,
        TemporalMode::Integrate => integrate,
        TemporalMode::Hybrid => {
            let change = if p.delta_max > 0.0 {
                (delta / p.delta_max).clamp(0.0, 1.0)
            } else if delta > 0.0 {
                1.0
            } else {
                0.0
            };
            (1.0 - change) * integrate
        }
    }
}

/// Blends two generation means. Returns the blended mean and the effective
/// number of samples it represents: the sample count for which plain
/// averaging would give the new generation weight `1 - alpha`, capped at
/// the real total.
pub fn blend(c_old: Rgb, n_old: f64, c_new: Rgb, n_new: f64, delta: f64, p: &BlendParams) -> Result<(Rgb, f64), TemporalError> {
    if n_old <= 0.0 && n_new <= 0.0 {
        return Err(TemporalError::NoSamples);
    }
    if n_new <= 0.0 {
        return Ok((c_old, n_old));
    }
    if n_old <= 0.0 {
        return Ok((c_new, n_new));
    }
    let a = alpha(n_old, n_new, delta, p);
    let total = n_old + n_new;
    let n_eff = if a >= 1.0 { total } else { (n_new / (1.0 - a)).min(total) };
    Ok((c_old * a + c_new * (1.0 - a), n_eff))
}

/// Change metric of a voxel from the summed re-evaluated and original
/// contributions of its re-traced paths.
pub fn temporal_difference(new_sum: Rgb, old_sum: Rgb, samples: u32, epsilon: f64) -> Option<f64> {
    if samples == 0 {
        return None;
    }
    let n = samples as f64;
    let (new, old) = (new_sum / n, old_sum / n);
    Some((new - old).l1() / (old.l1() + epsilon))
}

/// Blended mean and effective count of a cell, or `None` without samples.
pub fn cell_estimate(
    sum: Rgb,
    count: f64,
    prev_sum: Rgb,
    prev_count: f64,
    delta: f64,
    p: &BlendParams,
) -> Option<(Rgb, f64)> {
    if count <= 0.0 && prev_count <= 0.0 {
        return None;
    }
    if p.mode == TemporalMode::Integrate || (p.mode == TemporalMode::Hybrid && delta <= 0.0) {
        // algebraically the blend, but without the extra rounding
        let n = count + prev_count;
        return Some(((sum + prev_sum) / n, n));
    }
    let c_new = if count > 0.0 { sum / count } else { Rgb::BLACK };
    let c_old = if prev_count > 0.0 { prev_sum / prev_count } else { Rgb::BLACK };
    blend(c_old, prev_count, c_new, count, delta, p).ok()
}

/// Per-frame rotation of one cell: computes the change metric, blends the
/// two generations and stores the result as the new history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub params: BlendParams,
    pub sum_mode: SumMode,
    pub delta_epsilon: f64,
    /// Cap on the history count; 0 disables it.
    pub sample_cap: u32,
}

impl Rotation {
    pub fn new(cfg: &FilterConfig) -> Self {
        Self {
            params: cfg.into(),
            sum_mode: cfg.sum_mode,
            delta_epsilon: cfg.delta_epsilon,
            sample_cap: cfg.sample_cap,
        }
    }

    fn rgb(&self, raw: [u64; 3]) -> Rgb {
        Rgb::new(
            self.sum_mode.decode(raw[0]),
            self.sum_mode.decode(raw[1]),
            self.sum_mode.decode(raw[2]),
        )
    }

    fn encode(&self, c: Rgb) -> [u64; 3] {
        let a = c.to_array();
        [self.sum_mode.encode(a[0]), self.sum_mode.encode(a[1]), self.sum_mode.encode(a[2])]
    }

    /// Change metric of a cell; the carried value when nothing was re-traced.
    pub fn delta(&self, cell: &RawCell) -> f64 {
        temporal_difference(
            self.rgb(cell.reeval_new),
            self.rgb(cell.reeval_old),
            cell.reeval_count,
            self.delta_epsilon,
        )
        .unwrap_or(cell.delta)
    }

    pub fn fold(&self, cell: &RawCell) -> (History, f64) {
        let delta = self.delta(cell);
        if cell.count == 0 {
            return (cell.prev, delta);
        }
        let integrating = self.params.mode == TemporalMode::Integrate
            || (self.params.mode == TemporalMode::Hybrid && delta <= 0.0);
        let mut history = if integrating {
            // exact in fixed point: raw sums and counts add
            let mut sum = cell.prev.sum;
            for (s, v) in sum.iter_mut().zip(cell.sum) {
                *s = self.sum_mode.add_raw(*s, v);
            }
            History {
                sum,
                count: cell.prev.count + encode_count(cell.count as f64),
            }
        } else {
            let n_old = decode_count(cell.prev.count);
            let n_new = cell.count as f64;
            let c_old = if n_old > 0.0 { self.rgb(cell.prev.sum) / n_old } else { Rgb::BLACK };
            let c_new = self.rgb(cell.sum) / n_new;
            let (c, n) = blend(c_old, n_old, c_new, n_new, delta, &self.params).unwrap_or((c_new, n_new));
            History {
                sum: self.encode(c * n),
                count: encode_count(n),
            }
        };
        let n = decode_count(history.count);
        if self.sample_cap > 0 && n > self.sample_cap as f64 {
            let scale = self.sample_cap as f64 / n;
            history = History {
                sum: self.encode(self.rgb(history.sum) * scale),
                count: encode_count(self.sample_cap as f64),
            };
        }
        (history, delta)
    }
}

/// Outcome of [`migrate_resolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MigrationReport {
    /// Cells merged into a coarser parent.
    pub coarsened: usize,
    /// Cells split into finer children.
    pub refined: usize,
    /// Target cells that could not be placed within the probe limit.
    pub dropped: usize,
}

/// Level change of a voxel when the camera moves from `old_camera` to
/// `new_camera`, judged at the voxel center.
pub fn level_shift(key: &CellKey, cfg: &FilterConfig, old_camera: Vec3, new_camera: Vec3) -> i32 {
    let size = cfg.voxel_size(key.level as u32);
    let center = Vec3::new(
        (key.qx as f64 + 0.5) * size,
        (key.qy as f64 + 0.5) * size,
        (key.qz as f64 + 0.5) * size,
    );
    let lod = |cam: Vec3| {
        let d = (center - cam).length();
        level_of_detail(d.max(f64::MIN_POSITIVE), cfg).unwrap_or(0) as i32
    };
    lod(new_camera) - lod(old_camera)
}

/// Key of the ancestor `levels` levels above `key`.
pub fn parent_key(key: &CellKey, levels: u32) -> CellKey {
    let s = levels.min(31);
    CellKey {
        qx: key.qx >> s,
        qy: key.qy >> s,
        qz: key.qz >> s,
        level: (key.level as u32 + levels).min(MAX_LEVEL) as u8,
        aux: key.aux,
    }
}

/// The eight children one level below `key`.
pub fn child_keys(key: &CellKey) -> [CellKey; 8] {
    core::array::from_fn(|i| {
        let i = i as i32;
        CellKey {
            qx: key.qx * 2 + (i & 1),
            qy: key.qy * 2 + ((i >> 1) & 1),
            qz: key.qz * 2 + ((i >> 2) & 1),
            level: key.level - 1,
            aux: key.aux,
        }
    })
}

/// Moves the previous generation of every cell whose level changes with the
/// camera motion. Coarsening adds a cell's history into its parent;
/// refinement seeds each of the eight children with the parent mean at
/// `alpha_refine` times the parent count. Refinement proceeds one level per
/// call. `min_level` is the lowest level the table uses. Needs a table that
/// records keys and exclusive access (call after `begin_frame`).
pub fn migrate_resolution(
    table: &mut HashTable,
    cfg: &FilterConfig,
    old_camera: Vec3,
    new_camera: Vec3,
    min_level: u32,
    hash: impl Fn(&CellKey) -> CellHashes,
) -> MigrationReport {
    let mut report = MigrationReport::default();
    if !table.records_keys() || old_camera == new_camera {
        return report;
    }
    let mode = table.sum_mode();
    let mut moves: Vec<(usize, CellKey, History)> = Vec::new();
    for slot in table.occupied_slots() {
        let Some(key) = table.cell(slot).key else { continue };
        let shift = level_shift(&key, cfg, old_camera, new_camera);
        let target = (key.level as i32 + shift).clamp(min_level as i32, MAX_LEVEL as i32);
        if target != key.level as i32 {
            moves.push((slot, key, table.raw_history(slot)));
        }
    }
    let slots: Vec<usize> = moves.iter().map(|m| m.0).collect();
    table.remove_slots(&slots);
    for (_, key, history) in moves {
        if history.count == 0 {
            continue;
        }
        let shift = level_shift(&key, cfg, old_camera, new_camera);
        let target = (key.level as i32 + shift).clamp(min_level as i32, MAX_LEVEL as i32);
        if target > key.level as i32 {
            report.coarsened += 1;
            let parent = parent_key(&key, (target - key.level as i32) as u32);
            if !table.add_history(&parent, &hash(&parent), history) {
                report.dropped += 1;
            }
        } else {
            report.refined += 1;
            let n = decode_count(history.count);
            let weight = n * cfg.alpha_refine;
            let mean = Rgb::new(mode.decode(history.sum[0]), mode.decode(history.sum[1]), mode.decode(history.sum[2])) / n;
            let seeded = mean * weight;
            let child_history = History {
                sum: [mode.encode(seeded.r), mode.encode(seeded.g), mode.encode(seeded.b)],
                count: encode_count(weight),
            };
            for child in child_keys(&key) {
                if !table.add_history(&child, &hash(&child), child_history) {
                    report.dropped += 1;
                }
            }
        }
    }
    report
}
