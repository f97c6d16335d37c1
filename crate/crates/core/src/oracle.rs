//! Brute-force references used to check the table and the pipeline.
//!
//! Everything here is single threaded and written for clarity: voxel keys
//! are re-derived from the recorded jittered positions with a separate
//! implementation of the level and quantization rules, vertices are grouped
//! in an ordered map and summed in vertex order.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::image::Image;
use crate::keys::{CellKey, FilterConfig, MAX_LEVEL};
use crate::math::{floor, log2, tan, Rgb, Vec3};
use crate::table::SumMode;
use crate::tracer::VertexDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleError {
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    LengthMismatch,
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::DimensionMismatch { a, b } => {
                write!(f, "image sizes differ: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)
            }
            OracleError::LengthMismatch => write!(f, "one jittered position is needed per vertex"),
        }
    }
}

impl core::error::Error for OracleError {}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoxelEntry {
    pub sum: Rgb,
    pub count: u32,
    /// Vertex indices, ascending.
    pub members: Vec<usize>,
}

impl VoxelEntry {
    pub fn mean(&self) -> Rgb {
        self.sum / self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoxelPartition {
    pub voxels: BTreeMap<CellKey, VoxelEntry>,
    /// Key of every vertex, by index.
    pub keys: Vec<CellKey>,
}

impl VoxelPartition {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn mean(&self, key: &CellKey) -> Option<(Rgb, u32)> {
        self.voxels.get(key).map(|e| (e.mean(), e.count))
    }

    /// Count-weighted mean over the 3x3x3 block of voxels centered on `key`.
    pub fn neighborhood_mean(&self, key: &CellKey) -> Option<(Rgb, u32)> {
        let mut sum = Rgb::BLACK;
        let mut count = 0;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(e) = self.voxels.get(&key.offset(dx, dy, dz)) {
                        sum += e.sum;
                        count += e.count;
                    }
                }
            }
        }
        (count > 0).then(|| (sum / count as f64, count))
    }
}

/// Level of a vertex at path length `d`, from first principles.
fn oracle_level(d: f64, cfg: &FilterConfig, offset: u32) -> u32 {
    let pixel = 2.0 * d * tan(cfg.fov_y / 2.0) / cfg.image_height as f64;
    let l = floor(log2(pixel * cfg.s_pixels / cfg.base_voxel) + 1e-9);
    let l = if l.is_nan() || l < 0.0 { 0 } else { (l as u32).min(MAX_LEVEL) };
    (l + offset).min(MAX_LEVEL)
}

/// Key of `v` quantized at the recorded `jittered` position.
pub fn oracle_key(v: &VertexDescriptor, jittered: Vec3, cfg: &FilterConfig, level_offset: u32) -> CellKey {
    let d = if cfg.jitter {
        v.camera_distance - (v.position - v.previous).length() + (jittered - v.previous).length()
    } else {
        v.camera_distance
    };
    let level = oracle_level(d, cfg, level_offset);
    let size = cfg.base_voxel * (1u64 << level) as f64;
    let mut aux = 0;
    if cfg.include_normal {
        aux |= crate::keys::normal_bin(v.normal, cfg.normal_bins);
    }
    if cfg.include_incident_angle && v.layer_id == crate::tracer::LAYER_GLOSSY {
        aux |= crate::keys::incident_angle_bin(v.normal.dot(v.omega_r), cfg.angle_bins) << 16;
    }
    if cfg.include_layer {
        aux |= (v.layer_id as u32) << 24;
    }
    CellKey {
        qx: floor(jittered.x / size) as i32,
        qy: floor(jittered.y / size) as i32,
        qz: floor(jittered.z / size) as i32,
        level: level as u8,
        aux,
    }
}

/// Groups vertices by independently derived keys and sums their
/// contributions in index order. Contributions are first rounded to the
/// representation `mode` stores, so fixed-point tables match exactly.
pub fn brute_voxel_average(
    vertices: &[VertexDescriptor],
    jittered: &[Vec3],
    cfg: &FilterConfig,
    mode: SumMode,
    level_offset: u32,
) -> Result<VoxelPartition, OracleError> {
    if vertices.len() != jittered.len() {
        return Err(OracleError::LengthMismatch);
    }
    let mut p = VoxelPartition::default();
    for (i, (v, x)) in vertices.iter().zip(jittered).enumerate() {
        let key = oracle_key(v, *x, cfg, level_offset);
        let c = v.contribution;
        let q = Rgb::new(mode.quantize(c.r), mode.quantize(c.g), mode.quantize(c.b));
        let e = p.voxels.entry(key).or_default();
        e.sum += q;
        e.count += 1;
        e.members.push(i);
        p.keys.push(key);
    }
    Ok(p)
}

/// Weighted average of the contributions of all vertices strictly inside
/// the ball of radius `r` around `center`.
pub fn ball_average(
    vertices: &[VertexDescriptor],
    center: Vec3,
    r: f64,
    weight: impl Fn(&VertexDescriptor) -> f64,
) -> Option<Rgb> {
    let mut sum = Rgb::BLACK;
    let mut total = 0.0;
    for v in vertices {
        if (v.position - center).length_squared() < r * r {
            let w = weight(v);
            sum += v.contribution * w;
            total += w;
        }
    }
    (total > 0.0).then(|| sum / total)
}

/// Mean over pixels and channels of the squared difference.
pub fn image_mse(a: &Image, b: &Image) -> Result<f64, OracleError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(OracleError::DimensionMismatch {
            a: (a.width(), a.height()),
            b: (b.width(), b.height()),
        });
    }
    let n = a.pixels().len() * 3;
    if n == 0 {
        return Ok(0.0);
    }
    let sq: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| {
            let d = *p - *q;
            d.r * d.r + d.g * d.g + d.b * d.b
        })
        .sum();
    Ok(sq / n as f64)
}

/// `base + sum(throughput * value) / spp` per pixel, in vertex order.
pub fn composite(base: &Image, vertices: &[VertexDescriptor], values: &[Rgb], spp: u32) -> Image {
    let mut out = base.clone();
    for (v, c) in vertices.iter().zip(values) {
        out.add(v.pixel.0 as usize, v.pixel.1 as usize, v.throughput * *c / spp as f64);
    }
    out
}
