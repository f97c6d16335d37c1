//! Accumulate-and-lookup throughput at growing vertex counts.
//!
//! Vertices are synthesized in pixel order on a plane facing the camera,
//! one per pixel of a square image, so that the voxel grid spans a fixed
//! number of pixels at every size. The table capacity grows with the
//! vertex count. Vertices are generated on the fly and never stored.

use hpsf_core::math::Vec3;
use hpsf_core::pipeline::{Executor, FrameState};
use hpsf_core::stats::Source;
use hpsf_core::{FilterConfig, PathId, Rgb, VertexDescriptor};

use crate::error::Result;

/// Distance from the camera to the plane.
const DISTANCE: f64 = 4.0;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub vertices: usize,
    pub capacity: usize,
    pub accumulate_seconds: f64,
    pub lookup_seconds: f64,
    pub occupancy: f64,
    pub probe_failures: usize,
    pub unfiltered: usize,
}

impl BenchRow {
    pub fn ns_per_vertex(&self) -> f64 {
        1e9 * (self.accumulate_seconds + self.lookup_seconds) / self.vertices as f64
    }
}

/// Slots for `n` vertices: a quarter slot per vertex, rounded up to a power
/// of two.
pub fn capacity_for(n: usize) -> usize {
    (n / 4).max(1024).next_power_of_two()
}

/// Filter settings for an `n`-vertex run: voxels come out 8/3 pixels wide.
pub fn config_for(n: usize) -> FilterConfig {
    let side = side_for(n);
    let mut cfg = FilterConfig {
        image_height: side,
        capacity: capacity_for(n),
        multi_level: false,
        ..FilterConfig::default()
    };
    // level-of-detail ratio 6: level 2, voxels 4/6 of the s-pixel footprint
    cfg.base_voxel = cfg.pixel_footprint(DISTANCE) * cfg.s_pixels / 6.0;
    cfg
}

fn side_for(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

/// The `i`-th synthetic vertex of an `n`-vertex run.
pub fn vertex(i: usize, n: usize, cfg: &FilterConfig) -> VertexDescriptor {
    let side = side_for(n);
    let (row, col) = (i / side, i % side);
    let pixel = cfg.pixel_footprint(DISTANCE);
    let half = 0.5 * side as f64 * pixel;
    let position = Vec3::new(col as f64 * pixel - half, half - row as f64 * pixel, -DISTANCE);
    let shade = 0.5 + 0.5 * (position.x * 3.0).sin() * (position.y * 2.0).cos();
    VertexDescriptor {
        position,
        normal: Vec3::new(0.0, 0.0, 1.0),
        omega_r: Vec3::new(0.0, 0.0, 1.0),
        contribution: Rgb::new(shade, 0.5 * shade, 0.25),
        throughput: Rgb::WHITE,
        pixel: (row as u32, col as u32),
        layer_id: 0,
        camera_distance: DISTANCE,
        previous: Vec3::ZERO,
        path: PathId::new(1, row as u32, col as u32, 0),
    }
}

/// Accumulates and looks up `n` vertices through `exec`.
pub fn measure<E: Executor>(n: usize, exec: &E) -> Result<BenchRow> {
    let cfg = config_for(n);
    let state = FrameState::new(cfg)?;
    let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(n))).collect();
    let t0 = exec.now();
    let failures: usize = exec
        .map(&chunks, |&(a, b)| {
            (a..b)
                .filter(|&i| !state.accumulate_vertex(&vertex(i, n, &cfg)).fine.succeeded())
                .count()
        })
        .into_iter()
        .sum();
    let t1 = exec.now();
    let unfiltered: usize = exec
        .map(&chunks, |&(a, b)| {
            (a..b)
                .filter(|&i| state.resolve_vertex(&vertex(i, n, &cfg)).source == Source::Unfiltered)
                .count()
        })
        .into_iter()
        .sum();
    let t2 = exec.now();
    Ok(BenchRow {
        vertices: n,
        capacity: cfg.capacity,
        accumulate_seconds: t1 - t0,
        lookup_seconds: t2 - t1,
        occupancy: state.fine().occupancy(),
        probe_failures: failures,
        unfiltered,
    })
}

/// Ratio of the slowest to the fastest per-vertex time.
pub fn spread(rows: &[BenchRow]) -> f64 {
    let t: Vec<f64> = rows.iter().map(BenchRow::ns_per_vertex).collect();
    let max = t.iter().copied().fold(0.0, f64::max);
    let min = t.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

pub fn table(rows: &[BenchRow]) -> String {
    let mut out = String::from("vertices,capacity,occupancy,accumulate_s,lookup_s,ns_per_vertex,probe_failures,unfiltered\n");
    for r in rows {
        out += &format!(
            "{},{},{:.4},{:.6},{:.6},{:.1},{},{}\n",
            r.vertices,
            r.capacity,
            r.occupancy,
            r.accumulate_seconds,
            r.lookup_seconds,
            r.ns_per_vertex(),
            r.probe_failures,
            r.unfiltered
        );
    }
    out
}

/// Vertex counts spaced by powers of ten from `lo` to `hi`, both included.
pub fn decades(lo: usize, hi: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = lo.max(1);
    while n < hi {
        out.push(n);
        n = n.saturating_mul(10);
    }
    out.push(hi);
    out
}
