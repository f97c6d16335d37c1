//! Per-frame orchestration: trace, rotate the tables, re-evaluate a subset
//! of the previous frame's paths, accumulate every selected vertex, then
//! resolve each vertex to a filtered contribution and composite.
//!
//! Work that may run in parallel goes through an [`Executor`]. All reductions
//! (statistics, compositing) run afterwards in vertex order, so the output
//! does not depend on the executor as long as sums are fixed point.

use alloc::vec::Vec;
use core::fmt;

use crate::image::Image;
use crate::keys::{
    derive_key, hashes, hashes_normal_in_fingerprint, same_voxel, similar_normal_bins, CellHashes, CellKey,
    ConfigError, FilterConfig,
};
use crate::math::{Rgb, Vec3};
use crate::rng::{stream, CounterRng};
use crate::scene::Scene;
use crate::stats::{FrameStats, Source};
use crate::table::{CellView, EvictionPolicy, HashTable, InsertOutcome, InsertStatus, Probe, TableConfig, TableError};
use crate::temporal::{cell_estimate, migrate_resolution, temporal_difference, BlendParams, Rotation, TemporalMode};
use crate::tracer::{assemble, trace_path, trace_pixel, PathId, TraceError, TraceOutput, TraceSettings, VertexDescriptor};

/// Runs independent work items, possibly in parallel. Results must be
/// returned in input order.
pub trait Executor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send;

    /// Monotonic time in seconds, used only for statistics.
    fn now(&self) -> f64 {
        0.0
    }
}

/// Single worker, input order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    Config(ConfigError),
    Table(TableError),
    Trace(TraceError),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Config(e) => write!(f, "invalid filter configuration: {e}"),
            PipelineError::Table(e) => write!(f, "cannot build table: {e}"),
            PipelineError::Trace(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for PipelineError {}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e)
    }
}

impl From<TableError> for PipelineError {
    fn from(e: TableError) -> Self {
        PipelineError::Table(e)
    }
}

impl From<TraceError> for PipelineError {
    fn from(e: TraceError) -> Self {
        PipelineError::Trace(e)
    }
}

/// Generator for the jitter `stream` of a path. Keyed by row and column
/// directly so that it does not depend on the image width.
pub fn jitter_rng(path: &PathId, stream: u64) -> CounterRng {
    CounterRng::new(path.seed, (path.row as u64) << 32 | path.col as u64, path.sample as u64, stream)
}

/// Jitter draw of `v` for `stream`.
pub fn jitter_draw(v: &VertexDescriptor, stream: u64) -> (f64, f64) {
    jitter_rng(&v.path, stream).uniform2(0, 0)
}

/// Table hashes of a key under the configured normal handling.
pub fn key_hashes(key: &CellKey, cfg: &FilterConfig) -> CellHashes {
    if cfg.normal_in_fingerprint {
        hashes_normal_in_fingerprint(key, key.normal_bin())
    } else {
        hashes(key)
    }
}

/// Accumulation record of one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accumulated {
    pub key: CellKey,
    pub jittered: Vec3,
    pub fine: InsertOutcome,
    pub coarse: Option<(CellKey, InsertOutcome)>,
}

/// Filtered contribution of one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub value: Rgb,
    pub source: Source,
    /// Effective sample count behind `value` (1 for unfiltered).
    pub count: f64,
    /// The fine lookup hit the probe limit.
    pub probe_failure: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolveReport {
    pub filtered: Image,
    pub values: Vec<Rgb>,
    pub sources: Vec<Source>,
    pub fine: usize,
    pub neighborhood: usize,
    pub coarse: usize,
    pub unfiltered: usize,
}

impl ResolveReport {
    pub fn count(&self, source: Source) -> usize {
        match source {
            Source::Fine => self.fine,
            Source::Neighborhood => self.neighborhood,
            Source::Coarse => self.coarse,
            Source::Unfiltered => self.unfiltered,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub filtered: Image,
    pub unfiltered: Image,
    pub trace: TraceOutput,
    pub accumulated: Vec<Accumulated>,
    pub report: ResolveReport,
    pub stats: FrameStats,
}

#[derive(Debug, Clone)]
struct PreviousFrame {
    vertices: Vec<VertexDescriptor>,
    camera: Vec3,
    settings: TraceSettings,
}

/// Tables and history carried from frame to frame.
#[derive(Debug)]
pub struct FrameState {
    cfg: FilterConfig,
    fine: HashTable,
    coarse: Option<HashTable>,
    frame: u32,
    previous: Option<PreviousFrame>,
}

impl FrameState {
    pub fn new(cfg: FilterConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let table = TableConfig {
            capacity: cfg.capacity,
            probe_limit: cfg.probe_limit,
            sum_mode: cfg.sum_mode,
            record_keys: true,
        };
        Ok(Self {
            cfg,
            fine: HashTable::new(table)?,
            coarse: if cfg.multi_level { Some(HashTable::new(table)?) } else { None },
            frame: 0,
            previous: None,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn fine(&self) -> &HashTable {
        &self.fine
    }

    pub fn coarse(&self) -> Option<&HashTable> {
        self.coarse.as_ref()
    }

    /// Index of the next frame to render.
    pub fn frame(&self) -> u32 {
        self.frame
    }

    fn blend_params(&self) -> BlendParams {
        (&self.cfg).into()
    }

    /// Rotates both tables into frame `self.frame` and migrates history when
    /// the camera moved.
    pub fn begin_frame(&mut self, camera: Vec3, stats: &mut FrameStats) {
        let rotation = Rotation::new(&self.cfg);
        let policy = EvictionPolicy {
            horizon: self.cfg.eviction_horizon,
            protected_frames: self.cfg.protected_frames,
        };
        let frame = self.frame;
        let cfg = self.cfg;
        let previous_camera = self.previous.as_ref().map(|p| p.camera);
        let levels = [0, cfg.coarse_offset];
        for (table, min_level) in core::iter::once(&mut self.fine).chain(self.coarse.as_mut()).zip(levels) {
            let r = table.begin_frame(frame, policy, |c| rotation.fold(c));
            stats.evicted += r.evicted;
            if let (true, Some(old)) = (cfg.migrate, previous_camera) {
                let m = migrate_resolution(table, &cfg, old, camera, min_level, |k| key_hashes(k, &cfg));
                stats.coarsened += m.coarsened;
                stats.refined += m.refined;
                stats.migration_dropped += m.dropped;
            }
        }
    }

    /// Accumulates one vertex into the fine table and, with multi-level
    /// enabled, into the coarse table.
    pub fn accumulate_vertex(&self, v: &VertexDescriptor) -> Accumulated {
        let cfg = &self.cfg;
        let d = derive_key(v, cfg, jitter_draw(v, stream::JITTER_ACCUMULATE), 0);
        let fine = self
            .fine
            .accumulate_keyed(&d.key, &key_hashes(&d.key, cfg), v.contribution, self.frame);
        let coarse = self.coarse.as_ref().map(|table| {
            let key = derive_key(v, cfg, jitter_draw(v, stream::JITTER_COARSE), cfg.coarse_offset).key;
            (key, table.accumulate_keyed(&key, &key_hashes(&key, cfg), v.contribution, self.frame))
        });
        Accumulated {
            key: d.key,
            jittered: d.jittered,
            fine,
            coarse,
        }
    }

    /// Runs the accumulation phase and records its counters in `stats`.
    pub fn accumulate_phase<E: Executor>(
        &self,
        vertices: &[VertexDescriptor],
        exec: &E,
        stats: &mut FrameStats,
    ) -> Vec<Accumulated> {
        let records = exec.map(vertices, |v| self.accumulate_vertex(v));
        if stats.probe_histogram.len() <= self.cfg.probe_limit as usize {
            stats.probe_histogram.resize(self.cfg.probe_limit as usize + 1, 0);
        }
        for r in &records {
            stats.probe_histogram[r.fine.probes as usize] += 1;
            stats.max_probes = stats.max_probes.max(r.fine.probes);
            tally(r.fine, &mut stats.fine_accumulated, &mut stats.fine_probe_failures, &mut stats.displaced);
            if let Some((_, c)) = r.coarse {
                tally(c, &mut stats.coarse_accumulated, &mut stats.coarse_probe_failures, &mut stats.displaced);
            }
        }
        records
    }

    /// Current estimate of one cell including its history.
    fn estimate(&self, view: &CellView) -> Option<(Rgb, f64)> {
        let delta = temporal_difference(view.reeval_new, view.reeval_old, view.reeval_count, self.cfg.delta_epsilon)
            .unwrap_or(view.delta);
        cell_estimate(
            view.sum,
            view.count as f64,
            view.prev_sum,
            view.prev_count,
            delta,
            &self.blend_params(),
        )
    }

    /// Estimate of the voxel `key` in `table`; the flag reports a lookup that
    /// hit the probe limit.
    fn voxel_estimate(&self, table: &HashTable, key: &CellKey) -> (Option<(Rgb, f64)>, bool) {
        let cfg = &self.cfg;
        let h = key_hashes(key, cfg);
        if cfg.normal_in_fingerprint && cfg.include_normal {
            let bin = key.normal_bin();
            let cells = table.probe_scan(&h, |f| {
                same_voxel(f, h.fingerprint) && similar_normal_bins(f & 0xFFFF, bin, cfg.normal_bins)
            });
            let mut acc = (Rgb::BLACK, 0.0);
            for c in &cells {
                if let Some((m, n)) = self.estimate(c) {
                    acc = (acc.0 + m * n, acc.1 + n);
                }
            }
            return ((acc.1 > 0.0).then(|| (acc.0 / acc.1, acc.1)), false);
        }
        match table.find(&h) {
            Probe::Found { slot, .. } => (self.estimate(&table.cell(slot)), false),
            Probe::Empty { .. } => (None, false),
            Probe::LimitExceeded { .. } => (None, true),
        }
    }

    /// Count-weighted mean over the 3x3x3 block of voxels around `key`.
    pub fn neighborhood_estimate(&self, key: &CellKey) -> Option<(Rgb, f64)> {
        let mut sum = Rgb::BLACK;
        let mut n = 0.0;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let (Some((m, c)), _) = self.voxel_estimate(&self.fine, &key.offset(dx, dy, dz)) {
                        sum += m * c;
                        n += c;
                    }
                }
            }
        }
        (n > 0.0).then(|| (sum / n, n))
    }

    /// Filtered contribution of one vertex, following the fallback ladder:
    /// a well-populated fine voxel, a well-populated neighborhood, the coarse
    /// voxel, any populated neighborhood, the sparse fine voxel and finally
    /// the vertex's own contribution.
    pub fn resolve_vertex(&self, v: &VertexDescriptor) -> Resolved {
        let cfg = &self.cfg;
        let draw = jitter_draw(v, stream::JITTER_LOOKUP);
        let key = derive_key(v, cfg, draw, 0).key;
        let threshold = cfg.low_count_threshold as f64;
        let (fine, probe_failure) = self.voxel_estimate(&self.fine, &key);
        let pick = |(value, count): (Rgb, f64), source| Resolved {
            value,
            source,
            count,
            probe_failure,
        };
        if let Some(f) = fine.filter(|f| f.1 >= threshold) {
            return pick(f, Source::Fine);
        }
        let neighborhood = if cfg.neighborhood_search { self.neighborhood_estimate(&key) } else { None };
        if let Some(n) = neighborhood.filter(|n| n.1 >= threshold) {
            return pick(n, Source::Neighborhood);
        }
        if let Some(table) = &self.coarse {
            let coarse_key = derive_key(v, cfg, draw, cfg.coarse_offset).key;
            if let (Some(c), _) = self.voxel_estimate(table, &coarse_key) {
                return pick(c, Source::Coarse);
            }
        }
        if let Some(n) = neighborhood {
            return pick(n, Source::Neighborhood);
        }
        if let Some(f) = fine {
            return pick(f, Source::Fine);
        }
        pick((v.contribution, 1.0), Source::Unfiltered)
    }

    /// Resolves every vertex and composites `base + throughput * value / spp`
    /// in vertex order.
    pub fn resolve_phase<E: Executor>(
        &self,
        trace: &TraceOutput,
        exec: &E,
        stats: &mut FrameStats,
    ) -> ResolveReport {
        let resolved = exec.map(&trace.vertices, |v| self.resolve_vertex(v));
        let mut filtered = trace.base.clone();
        let inv = 1.0 / trace.spp as f64;
        let mut report = ResolveReport {
            filtered: Image::new(0, 0),
            values: Vec::with_capacity(resolved.len()),
            sources: Vec::with_capacity(resolved.len()),
            fine: 0,
            neighborhood: 0,
            coarse: 0,
            unfiltered: 0,
        };
        for (v, r) in trace.vertices.iter().zip(&resolved) {
            filtered.add(v.pixel.0 as usize, v.pixel.1 as usize, v.throughput * r.value * inv);
            stats.record_source(r.source);
            match r.source {
                Source::Fine => report.fine += 1,
                Source::Neighborhood => report.neighborhood += 1,
                Source::Coarse => report.coarse += 1,
                Source::Unfiltered => {
                    report.unfiltered += 1;
                    if r.probe_failure {
                        stats.unfiltered_probe_failures += 1;
                    } else {
                        stats.unfiltered_empty += 1;
                    }
                }
            }
            report.values.push(r.value);
            report.sources.push(r.source);
        }
        report.filtered = filtered;
        report
    }

    /// Re-traces every `reevaluation_period`-th path of the previous frame in
    /// `scene` and adds the new and original contributions to the voxel of
    /// the original vertex. Paths whose vertex left that voxel are skipped.
    pub fn reevaluate_phase<E: Executor>(&self, scene: &Scene, exec: &E) -> usize {
        let Some(prev) = &self.previous else { return 0 };
        let period = self.cfg.reevaluation_period.max(1) as usize;
        let phase = self.frame as usize % period;
        let chosen: Vec<&VertexDescriptor> = prev.vertices.iter().skip(phase).step_by(period).collect();
        let cfg = &self.cfg;
        let done = exec.map(&chosen, |old| {
            let Some(new) = trace_path(scene, &prev.settings, old.path).vertex else {
                return false;
            };
            let fine_draw = jitter_draw(old, stream::JITTER_ACCUMULATE);
            let old_key = derive_key(old, cfg, fine_draw, 0).key;
            if derive_key(&new, cfg, fine_draw, 0).key != old_key {
                return false;
            }
            let hit = self
                .fine
                .accumulate_difference(&key_hashes(&old_key, cfg), new.contribution, old.contribution);
            if let Some(table) = &self.coarse {
                let draw = jitter_draw(old, stream::JITTER_COARSE);
                let old_key = derive_key(old, cfg, draw, cfg.coarse_offset).key;
                if derive_key(&new, cfg, draw, cfg.coarse_offset).key == old_key {
                    table.accumulate_difference(&key_hashes(&old_key, cfg), new.contribution, old.contribution);
                }
            }
            hit
        });
        done.into_iter().filter(|d| *d).count()
    }

    /// Renders one frame of `scene`.
    pub fn render_frame<E: Executor>(
        &mut self,
        scene: &Scene,
        settings: &TraceSettings,
        exec: &E,
    ) -> Result<FrameOutput, PipelineError> {
        if settings.spp == 0 {
            return Err(TraceError::ZeroSamples.into());
        }
        let mut stats = FrameStats::with_probe_limit(self.cfg.probe_limit);
        stats.frame = self.frame;

        let t0 = exec.now();
        let trace = trace_parallel(scene, settings, exec);
        stats.vertices = trace.vertices.len();
        let t1 = exec.now();
        stats.trace_seconds = t1 - t0;

        self.begin_frame(scene.camera.position, &mut stats);
        if self.cfg.temporal_mode == TemporalMode::Hybrid {
            stats.reevaluated = self.reevaluate_phase(scene, exec);
        }
        let accumulated = self.accumulate_phase(&trace.vertices, exec, &mut stats);
        let t2 = exec.now();
        stats.accumulate_seconds = t2 - t1;

        let report = self.resolve_phase(&trace, exec, &mut stats);
        stats.resolve_seconds = exec.now() - t2;
        stats.occupied = self.fine.occupied();
        stats.capacity = self.fine.capacity();
        stats.false_merges = self.fine.false_merges() + self.coarse.as_ref().map_or(0, |c| c.false_merges());

        self.previous = Some(PreviousFrame {
            vertices: trace.vertices.clone(),
            camera: scene.camera.position,
            settings: *settings,
        });
        self.frame += 1;
        Ok(FrameOutput {
            filtered: report.filtered.clone(),
            unfiltered: trace.unfiltered.clone(),
            trace,
            accumulated,
            report,
            stats,
        })
    }
}

fn tally(o: InsertOutcome, ok: &mut usize, failed: &mut usize, displaced: &mut usize) {
    match o.status {
        InsertStatus::Accumulated => *ok += 1,
        InsertStatus::EvictedThenAccumulated => {
            *ok += 1;
            *displaced += 1;
        }
        InsertStatus::ProbeLimitExceeded => *failed += 1,
    }
}

/// Traces all pixels through `exec`; identical to [`crate::tracer::trace`].
pub fn trace_parallel<E: Executor>(scene: &Scene, settings: &TraceSettings, exec: &E) -> TraceOutput {
    let (w, h) = (scene.camera.width, scene.camera.height);
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
    let traced = exec.map(&pixels, |&(r, c)| trace_pixel(scene, settings, r, c));
    assemble(w, h, settings.spp, traced)
}

/// One frame with fresh tables: trace, accumulate, resolve.
pub fn render_still<E: Executor>(
    scene: &Scene,
    settings: &TraceSettings,
    cfg: FilterConfig,
    exec: &E,
) -> Result<FrameOutput, PipelineError> {
    FrameState::new(cfg)?.render_frame(scene, settings, exec)
}
