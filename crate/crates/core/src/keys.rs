//! Filter keys: level of detail, tangent-plane jitter, quantization and the
//! two hashes that address and verify a voxel in the table.

use core::f64::consts::PI;
use core::fmt;

use crate::math::{exp2, floor, log2, sqrt, tan, Vec3};
use crate::rng::CounterRng;
use crate::scene::Camera;
use crate::table::SumMode;
use crate::temporal::TemporalMode;
use crate::tracer::{VertexDescriptor, LAYER_GLOSSY};

/// Fingerprint value reserved for empty table cells.
pub const SENTINEL: u32 = 0;

/// Highest level of detail; voxel size is `base_voxel * 2^level`.
pub const MAX_LEVEL: u32 = 31;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfigError {
    CapacityNotPowerOfTwo(usize),
    ZeroProbeLimit,
    NonPositiveScale,
    NonPositiveBaseVoxel,
    InvalidBins,
    AlphaOutOfRange,
    InvalidFov,
    ZeroImageHeight,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::CapacityNotPowerOfTwo(c) => write!(f, "table capacity {c} is not a power of two"),
            ConfigError::ZeroProbeLimit => write!(f, "probe limit must be at least 1"),
            ConfigError::NonPositiveScale => write!(f, "s_pixels must be positive"),
            ConfigError::NonPositiveBaseVoxel => write!(f, "base voxel size must be positive"),
            ConfigError::InvalidBins => write!(f, "bin counts must lie in 1..=255"),
            ConfigError::AlphaOutOfRange => write!(f, "blend weights must lie in [0, 1]"),
            ConfigError::InvalidFov => write!(f, "field of view must lie in (0, pi)"),
            ConfigError::ZeroImageHeight => write!(f, "image height must be positive"),
        }
    }
}

impl core::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyError {
    NonPositiveDistance(f64),
}

impl fmt::Display for KeyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyError::NonPositiveDistance(d) => write!(f, "camera distance {d} is not positive"),
        }
    }
}

impl core::error::Error for KeyError {}

/// Everything that controls voxelization, the table, fallbacks and temporal
/// reuse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Voxel footprint in projected pixels.
    pub s_pixels: f64,
    pub include_normal: bool,
    /// Octahedral normal bins per axis (`normal_bins^2` cells).
    pub normal_bins: u32,
    /// Leave the normal bin out of the index hash and carry it in the low
    /// fingerprint bits instead, so that lookups can gather similar normals
    /// by probing.
    pub normal_in_fingerprint: bool,
    pub include_incident_angle: bool,
    pub angle_bins: u32,
    pub include_layer: bool,
    pub jitter: bool,
    /// World size of a level-0 voxel (m).
    pub base_voxel: f64,
    /// Vertical field of view of the camera that drives the level of detail.
    pub fov_y: f64,
    pub image_height: usize,
    /// Table slots; a power of two.
    pub capacity: usize,
    pub probe_limit: u32,
    pub low_count_threshold: u32,
    pub neighborhood_search: bool,
    pub multi_level: bool,
    /// Level offset of the coarse table.
    pub coarse_offset: u32,
    pub sum_mode: SumMode,
    pub temporal_mode: TemporalMode,
    pub ema_alpha: f64,
    /// Normalization of the temporal change metric in hybrid mode.
    pub delta_max: f64,
    pub delta_epsilon: f64,
    /// Every `reevaluation_period`-th path of a frame is re-traced in the next.
    pub reevaluation_period: u32,
    /// Count discount applied when a coarse voxel seeds finer ones.
    pub alpha_refine: f64,
    /// Cap on the integrated history count; 0 disables the cap.
    pub sample_cap: u32,
    /// Cells untouched for longer than this many frames are cleared.
    pub eviction_horizon: u32,
    /// Cells touched within this many frames are never displaced.
    pub protected_frames: u32,
    /// Move history between levels when the camera changes a voxel's level.
    pub migrate: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            s_pixels: 4.0,
            include_normal: true,
            normal_bins: 8,
            normal_in_fingerprint: false,
            include_incident_angle: false,
            angle_bins: 4,
            include_layer: false,
            jitter: true,
            base_voxel: 0.01,
            fov_y: 40f64.to_radians(),
            image_height: 64,
            capacity: 1 << 14,
            probe_limit: 32,
            low_count_threshold: 8,
            neighborhood_search: true,
            multi_level: true,
            coarse_offset: 2,
            sum_mode: SumMode::Fixed,
            temporal_mode: TemporalMode::Integrate,
            ema_alpha: 0.8,
            delta_max: 0.5,
            delta_epsilon: 1e-4,
            reevaluation_period: 16,
            alpha_refine: 0.25,
            sample_cap: 256,
            eviction_horizon: 8,
            protected_frames: 2,
            migrate: true,
        }
    }
}

impl FilterConfig {
    /// Defaults adapted to a camera: its projection drives the level of
    /// detail and the table holds two slots per pixel.
    pub fn for_camera(camera: &Camera) -> Self {
        Self {
            fov_y: camera.fov_y,
            image_height: camera.height,
            capacity: (2 * camera.pixel_count()).next_power_of_two(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.capacity.is_power_of_two() {
            return Err(ConfigError::CapacityNotPowerOfTwo(self.capacity));
        }
        if self.probe_limit == 0 {
            return Err(ConfigError::ZeroProbeLimit);
        }
        if self.s_pixels.is_nan() || self.s_pixels <= 0.0 {
            return Err(ConfigError::NonPositiveScale);
        }
        if self.base_voxel.is_nan() || self.base_voxel <= 0.0 {
            return Err(ConfigError::NonPositiveBaseVoxel);
        }
        if !(1..=255).contains(&self.normal_bins) || !(1..=255).contains(&self.angle_bins) {
            return Err(ConfigError::InvalidBins);
        }
        let unit = |a: f64| (0.0..=1.0).contains(&a);
        if !unit(self.ema_alpha) || !unit(self.alpha_refine) {
            return Err(ConfigError::AlphaOutOfRange);
        }
        if !(self.fov_y > 0.0 && self.fov_y < PI) {
            return Err(ConfigError::InvalidFov);
        }
        if self.image_height == 0 {
            return Err(ConfigError::ZeroImageHeight);
        }
        Ok(())
    }

    /// World-space edge length of a voxel at `level`.
    #[inline]
    pub fn voxel_size(&self, level: u32) -> f64 {
        self.base_voxel * exp2(level as f64)
    }

    /// World-space size of one pixel at distance `d`.
    #[inline]
    pub fn pixel_footprint(&self, distance: f64) -> f64 {
        2.0 * distance * tan(0.5 * self.fov_y) / self.image_height as f64
    }
}

/// Quantized voxel identity. Two keys are the same voxel iff all fields match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CellKey {
    pub qx: i32,
    pub qy: i32,
    pub qz: i32,
    pub level: u8,
    /// Normal bin (bits 0..16), incident-angle bin (16..24), layer id (24..32).
    pub aux: u32,
}

impl CellKey {
    pub fn pack_aux(normal_bin: u32, angle_bin: u32, layer: u32) -> u32 {
        (normal_bin & 0xFFFF) | (angle_bin & 0xFF) << 16 | (layer & 0xFF) << 24
    }

    pub fn normal_bin(&self) -> u32 {
        self.aux & 0xFFFF
    }

    /// The same voxel shifted by whole voxels.
    pub fn offset(&self, dx: i32, dy: i32, dz: i32) -> CellKey {
        CellKey {
            qx: self.qx.wrapping_add(dx),
            qy: self.qy.wrapping_add(dy),
            qz: self.qz.wrapping_add(dz),
            ..*self
        }
    }

    /// Key fields as three machine words, in field order.
    #[inline]
    pub fn words(&self) -> [u64; 3] {
        [
            self.qx as u32 as u64 | (self.qy as u32 as u64) << 32,
            self.qz as u32 as u64 | (self.level as u64) << 32,
            self.aux as u64,
        ]
    }

    pub fn from_words(w: [u64; 3]) -> CellKey {
        CellKey {
            qx: w[0] as u32 as i32,
            qy: (w[0] >> 32) as u32 as i32,
            qz: w[1] as u32 as i32,
            level: (w[1] >> 32) as u8,
            aux: w[2] as u32,
        }
    }
}

/// Index hash and fingerprint of one key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellHashes {
    pub index: u64,
    /// Never equal to [`SENTINEL`].
    pub fingerprint: u32,
}

/// Key plus the intermediate values that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyDerivation {
    pub key: CellKey,
    pub jittered: Vec3,
    pub level: u32,
}

/// `floor(log2(footprint(d) * s_pixels / base_voxel))`, clamped to `[0, 31]`.
pub fn level_of_detail(camera_distance: f64, cfg: &FilterConfig) -> Result<u32, KeyError> {
    if camera_distance <= 0.0 || !camera_distance.is_finite() {
        return Err(KeyError::NonPositiveDistance(camera_distance));
    }
    let ratio = cfg.pixel_footprint(camera_distance) * cfg.s_pixels / cfg.base_voxel;
    // exact powers of two computed in floating point may land a few ulps low
    let level = floor(log2(ratio) + 1e-9);
    Ok(level.clamp(0.0, MAX_LEVEL as f64) as u32)
}

/// Offsets `x` in the tangent plane of `n` by a point uniform in the disc of
/// radius one half voxel at `level`. `draw` is a pair of uniforms in `[0, 1)`.
pub fn jitter_position(x: Vec3, n: Vec3, level: u32, draw: (f64, f64), cfg: &FilterConfig) -> Vec3 {
    if !cfg.jitter {
        return x;
    }
    x + jitter_offset(n, level, draw, cfg)
}

/// The tangent-plane offset applied by [`jitter_position`].
pub fn jitter_offset(n: Vec3, level: u32, draw: (f64, f64), cfg: &FilterConfig) -> Vec3 {
    let (u, v) = disc_offset(draw);
    let (t1, t2) = n.tangent_frame();
    (t1 * u + t2 * v) * cfg.voxel_size(level)
}

/// Maps two uniforms to a point uniform in the disc of radius 1/2.
#[inline]
pub fn disc_offset(draw: (f64, f64)) -> (f64, f64) {
    let r = 0.5 * sqrt(draw.0);
    let phi = 2.0 * PI * draw.1;
    (r * crate::math::cos(phi), r * crate::math::sin(phi))
}

/// Octahedral projection of a unit normal onto a `bins x bins` grid.
pub fn normal_bin(n: Vec3, bins: u32) -> u32 {
    let (u, v) = octahedral(n);
    let b = bins as f64;
    let bx = (floor((u + 1.0) * 0.5 * b) as i64).clamp(0, bins as i64 - 1) as u32;
    let by = (floor((v + 1.0) * 0.5 * b) as i64).clamp(0, bins as i64 - 1) as u32;
    bx + by * bins
}

fn octahedral(n: Vec3) -> (f64, f64) {
    let l1 = n.x.abs() + n.y.abs() + n.z.abs();
    let (px, py) = (n.x / l1, n.y / l1);
    if n.z >= 0.0 {
        (px, py)
    } else {
        let sign = |a: f64| if a >= 0.0 { 1.0 } else { -1.0 };
        ((1.0 - py.abs()) * sign(px), (1.0 - px.abs()) * sign(py))
    }
}

/// Uniform bins of `cos(theta)` over `[0, 1]`.
pub fn incident_angle_bin(cos_theta: f64, bins: u32) -> u32 {
    (floor(cos_theta.clamp(0.0, 1.0) * bins as f64) as u32).min(bins - 1)
}

fn aux_for(v: &VertexDescriptor, cfg: &FilterConfig) -> u32 {
    let normal = if cfg.include_normal {
        normal_bin(v.normal, cfg.normal_bins)
    } else {
        0
    };
    let angle = if cfg.include_incident_angle && v.layer_id == LAYER_GLOSSY {
        incident_angle_bin(v.normal.dot(v.omega_r), cfg.angle_bins)
    } else {
        0
    };
    let layer = if cfg.include_layer { v.layer_id as u32 } else { 0 };
    CellKey::pack_aux(normal, angle, layer)
}

/// Full key construction for one vertex: level at the vertex, jitter, level
/// at the jittered point, quantization, aux bins. `level_offset` selects a
/// coarser ladder (used by the coarse table).
pub fn derive_key(v: &VertexDescriptor, cfg: &FilterConfig, draw: (f64, f64), level_offset: u32) -> KeyDerivation {
    let level_at = |d: f64| {
        let base = level_of_detail(d.max(f64::MIN_POSITIVE), cfg).unwrap_or(0);
        (base + level_offset).min(MAX_LEVEL)
    };
    let level = level_at(v.camera_distance);
    let jittered = jitter_position(v.position, v.normal, level, draw, cfg);
    let final_level = if cfg.jitter {
        let seg = (v.position - v.previous).length();
        level_at(v.camera_distance - seg + (jittered - v.previous).length())
    } else {
        level
    };
    let size = cfg.voxel_size(final_level);
    let q = |c: f64| floor(c / size) as i32;
    KeyDerivation {
        key: CellKey {
            qx: q(jittered.x),
            qy: q(jittered.y),
            qz: q(jittered.z),
            level: final_level as u8,
            aux: aux_for(v, cfg),
        },
        jittered,
        level: final_level,
    }
}

/// Key of `v` with jitter drawn from `rng`.
pub fn make_cell_key(v: &VertexDescriptor, cfg: &FilterConfig, rng: &CounterRng) -> CellKey {
    derive_key(v, cfg, rng.uniform2(0, 0), 0).key
}

#[inline]
fn mix_index(words: [u64; 3]) -> u64 {
    let mut h = 0x517C_C1B7_2722_0A95u64;
    for w in words {
        h = crate::rng::splitmix64(h ^ w);
    }
    h
}

#[inline]
fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^ (h >> 33)
}

/// Second hash of the key before the sentinel is excluded.
#[inline]
pub fn raw_fingerprint(k: &CellKey) -> u32 {
    let mut h = 0xC2B2_AE3D_27D4_EB4Fu64;
    for w in k.words() {
        h = fmix64(h ^ w).wrapping_add(0x2545_F491_4F6C_DD1D);
    }
    (h >> 32) as u32
}

/// Moves the sentinel out of the fingerprint range.
#[inline]
pub const fn exclude_sentinel(raw: u32) -> u32 {
    if raw == SENTINEL {
        SENTINEL + 1
    } else {
        raw
    }
}

pub fn hashes(k: &CellKey) -> CellHashes {
    CellHashes {
        index: mix_index(k.words()),
        fingerprint: exclude_sentinel(raw_fingerprint(k)),
    }
}

/// Number of low fingerprint bits that carry the normal bin when normals
/// live in the fingerprint.
pub const NORMAL_FINGERPRINT_BITS: u32 = 16;

/// Hashes of a key whose normal bin is moved from the key into the low bits
/// of the fingerprint: every normal variant of a voxel shares the index hash
/// and the high fingerprint bits.
pub fn hashes_normal_in_fingerprint(k: &CellKey, normal: u32) -> CellHashes {
    let spatial = CellKey {
        aux: k.aux & !0xFFFF,
        ..*k
    };
    let mut high = raw_fingerprint(&spatial) >> NORMAL_FINGERPRINT_BITS;
    if high == 0 {
        high = 1;
    }
    CellHashes {
        index: mix_index(spatial.words()),
        fingerprint: high << NORMAL_FINGERPRINT_BITS | (normal & ((1 << NORMAL_FINGERPRINT_BITS) - 1)),
    }
}

/// Whether two normal-carrying fingerprints belong to the same voxel.
pub fn same_voxel(a: u32, b: u32) -> bool {
    a >> NORMAL_FINGERPRINT_BITS == b >> NORMAL_FINGERPRINT_BITS
}

/// Whether two octahedral normal bins are equal or adjacent on the grid.
pub fn similar_normal_bins(a: u32, b: u32, bins: u32) -> bool {
    let (ax, ay) = ((a % bins) as i64, (a / bins) as i64);
    let (bx, by) = ((b % bins) as i64, (b / bins) as i64);
    (ax - bx).abs() <= 1 && (ay - by).abs() <= 1
}
