//! Deterministic forward path tracer with next event estimation.
//!
//! Each path is a pure function of its [`PathId`]. Along the path one vertex
//! is selected for filtering; the tracer splits the path estimate into
//!
//! * the radiance gathered before that vertex (`base`),
//! * the vertex's throughput from the camera, including the view-dependent
//!   part of its BSDF, and
//! * the vertex's contribution: incident radiance times the
//!   direction-dependent BSDF factor times the cosine, summed over the
//!   rest of the path.
//!
//! so that the pixel estimate is `base + throughput * contribution`.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::image::Image;
use crate::math::{cos, pow, sin, sqrt, Rgb, Vec3};
use crate::rng::{stream, CounterRng};
use crate::scene::{Material, Scene};

pub const LAYER_DIFFUSE: u8 = 0;
pub const LAYER_GLOSSY: u8 = 1;

/// Hard limit on path segments.
pub const MAX_DEPTH: u32 = 8;
/// First bounce at which Russian roulette may terminate a path.
pub const ROULETTE_DEPTH: u32 = 3;

// per-bounce random dimensions
const DIM_LOBE: u32 = 0;
const DIM_LIGHT_POINT: u32 = 1;
const DIM_LIGHT_PICK: u32 = 3;
const DIM_DIRECTION: u32 = 4;
const DIM_ROULETTE: u32 = 6;

/// Identifies one camera path: generator seed, pixel and sample index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathId {
    pub seed: u64,
    pub row: u32,
    pub col: u32,
    pub sample: u32,
}

impl PathId {
    pub const fn new(seed: u64, row: u32, col: u32, sample: u32) -> Self {
        Self { seed, row, col, sample }
    }

    /// Generator for `stream` of this path.
    pub fn rng(&self, stream: u64, width: usize) -> CounterRng {
        let pixel = self.row as u64 * width as u64 + self.col as u64;
        CounterRng::new(self.seed, pixel, self.sample as u64, stream)
    }
}

/// One selected path vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexDescriptor {
    pub position: Vec3,
    /// Unit normal on the side the path arrived from.
    pub normal: Vec3,
    /// Unit direction toward the previous path vertex.
    pub omega_r: Vec3,
    pub contribution: Rgb,
    pub throughput: Rgb,
    pub pixel: (u32, u32),
    pub layer_id: u8,
    /// Path length from the sensor to this vertex (m).
    pub camera_distance: f64,
    /// Position of the previous path vertex (the camera for primary hits).
    pub previous: Vec3,
    pub path: PathId,
}

/// Which vertex of a path is filtered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexSelectionPolicy {
    /// Select the `nth` qualifying vertex (1 = first).
    pub nth: u32,
    /// Minimum diffuse-layer weight for a vertex to qualify.
    pub min_diffuse_weight: f64,
}

impl Default for VertexSelectionPolicy {
    fn default() -> Self {
        Self {
            nth: 1,
            min_diffuse_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSettings {
    pub spp: u32,
    pub seed: u64,
    /// Sample index of the first sample of each pixel; consecutive frames of
    /// a static scene use disjoint ranges.
    pub first_sample: u32,
    pub select: VertexSelectionPolicy,
    pub next_event_estimation: bool,
}

impl TraceSettings {
    pub fn new(spp: u32, seed: u64) -> Self {
        Self {
            spp,
            seed,
            first_sample: 0,
            select: VertexSelectionPolicy::default(),
            next_event_estimation: true,
        }
    }

    pub fn path(&self, row: usize, col: usize, sample: u32) -> PathId {
        PathId::new(self.seed, row as u32, col as u32, self.first_sample + sample)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceError {
    ZeroSamples,
    UnknownPath(PathId),
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceError::ZeroSamples => write!(f, "samples per pixel must be at least 1"),
            TraceError::UnknownPath(p) => write!(f, "path {p:?} lies outside the image"),
        }
    }
}

impl core::error::Error for TraceError {}

/// Result of tracing one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    /// Full Monte Carlo estimate of the path.
    pub radiance: Rgb,
    /// Radiance gathered before the selected vertex (all of it without one).
    pub base: Rgb,
    pub vertex: Option<VertexDescriptor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOutput {
    /// Plain Monte Carlo estimate.
    pub unfiltered: Image,
    /// Per-pixel radiance not carried by selected vertices, divided by spp.
    pub base: Image,
    /// Selected vertices in pixel-major, sample-minor order.
    pub vertices: Vec<VertexDescriptor>,
    pub spp: u32,
}

/// Per-pixel part of a trace; rows of these are assembled by [`assemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTrace {
    pub unfiltered: Rgb,
    pub base: Rgb,
    pub vertices: Vec<VertexDescriptor>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Lobe {
    Diffuse,
    Glossy,
    Mirror,
}

/// Traces `settings.spp` paths through every pixel, sequentially.
pub fn trace(scene: &Scene, settings: &TraceSettings) -> Result<TraceOutput, TraceError> {
    if settings.spp == 0 {
        return Err(TraceError::ZeroSamples);
    }
    let (w, h) = (scene.camera.width, scene.camera.height);
    let pixels: Vec<PixelTrace> = (0..h)
        .flat_map(|row| (0..w).map(move |col| (row, col)))
        .map(|(row, col)| trace_pixel(scene, settings, row, col))
        .collect();
    Ok(assemble(w, h, settings.spp, pixels))
}

/// Builds a [`TraceOutput`] from row-major pixel traces.
pub fn assemble(width: usize, height: usize, spp: u32, pixels: Vec<PixelTrace>) -> TraceOutput {
    let mut unfiltered = Image::new(width, height);
    let mut base = Image::new(width, height);
    let mut vertices = Vec::new();
    for (i, p) in pixels.into_iter().enumerate() {
        unfiltered.pixels_mut()[i] = p.unfiltered;
        base.pixels_mut()[i] = p.base;
        vertices.extend(p.vertices);
    }
    TraceOutput {
        unfiltered,
        base,
        vertices,
        spp,
    }
}

pub fn trace_pixel(scene: &Scene, settings: &TraceSettings, row: usize, col: usize) -> PixelTrace {
    let mut radiance = Rgb::BLACK;
    let mut base = Rgb::BLACK;
    let mut vertices = Vec::with_capacity(settings.spp as usize);
    for s in 0..settings.spp {
        let sample = trace_path(scene, settings, settings.path(row, col, s));
        radiance += sample.radiance;
        base += sample.base;
        vertices.extend(sample.vertex);
    }
    let n = settings.spp as f64;
    PixelTrace {
        unfiltered: radiance / n,
        base: base / n,
        vertices,
    }
}

/// Retraces the given paths in `scene`. Returns the selected vertex of
/// every path that still has one, in input order.
pub fn reevaluate(scene: &Scene, settings: &TraceSettings, paths: &[PathId]) -> Result<Vec<VertexDescriptor>, TraceError> {
    let (w, h) = (scene.camera.width as u32, scene.camera.height as u32);
    if let Some(bad) = paths.iter().find(|p| p.row >= h || p.col >= w) {
        return Err(TraceError::UnknownPath(*bad));
    }
    Ok(paths
        .iter()
        .filter_map(|p| trace_path(scene, settings, *p).vertex)
        .collect())
}

fn cosine_hemisphere(n: Vec3, u: f64, v: f64) -> Vec3 {
    let (t1, t2) = n.tangent_frame();
    let r = sqrt(u);
    let phi = 2.0 * PI * v;
    let z = sqrt((1.0 - u).max(0.0));
    (t1 * (r * cos(phi)) + t2 * (r * sin(phi)) + n * z).normalized()
}

/// Direction around `axis` with density `(e+1)/(2 pi) cos^e(alpha)`.
fn phong_lobe(axis: Vec3, exponent: f64, u: f64, v: f64) -> Vec3 {
    let (t1, t2) = axis.tangent_frame();
    let cos_a = pow(u, 1.0 / (exponent + 1.0));
    let sin_a = sqrt((1.0 - cos_a * cos_a).max(0.0));
    let phi = 2.0 * PI * v;
    (t1 * (sin_a * cos(phi)) + t2 * (sin_a * sin(phi)) + axis * cos_a).normalized()
}

/// Direction-dependent factor of the chosen lobe, per unit solid angle.
fn lobe_eval(lobe: Lobe, material: &Material, n: Vec3, wo: Vec3, wi: Vec3) -> f64 {
    match lobe {
        Lobe::Diffuse => 1.0 / PI,
        Lobe::Glossy => {
            let e = material.glossy.map_or(1.0, |g| g.exponent);
            let cos_a = wo.reflect(n).dot(wi).max(0.0);
            (e + 2.0) / (2.0 * PI) * pow(cos_a, e)
        }
        Lobe::Mirror => 0.0,
    }
}

/// Traces a single path.
pub fn trace_path(scene: &Scene, settings: &TraceSettings, id: PathId) -> PathSample {
    let camera = &scene.camera;
    let rng = id.rng(stream::PATH, camera.width);
    let (du, dv) = rng.uniform2(0, 0);
    let mut origin = camera.position;
    let mut dir = camera.direction(id.row as usize, id.col as usize, du, dv);

    let mut base = Rgb::BLACK;
    let mut contribution = Rgb::BLACK;
    // weight applied to radiance added at the current vertex
    let mut weight = Rgb::WHITE;
    let mut selected: Option<VertexDescriptor> = None;
    let mut qualifying = 0;
    let mut count_emission = true;
    let mut path_length = 0.0;

    for depth in 0..MAX_DEPTH {
        let bounce = depth + 1;
        let Some(hit) = scene.intersect(origin, dir, f64::INFINITY) else {
            let add = weight * scene.background;
            if selected.is_some() {
                contribution += add;
            } else {
                base += add;
            }
            break;
        };
        path_length += hit.t;
        let x = origin + dir * hit.t;
        let tri = &scene.triangles[hit.triangle];
        let geometric = tri.normal();
        let wo = -dir;
        let n = if geometric.dot(wo) >= 0.0 { geometric } else { -geometric };

        if count_emission || !settings.next_event_estimation {
            if let Some(le) = scene.emission_of(hit.triangle) {
                if geometric.dot(wo) > 0.0 {
                    let add = weight * le;
                    if selected.is_some() {
                        contribution += add;
                    } else {
                        base += add;
                    }
                }
            }
        }

        let material = *scene.material_of(hit.triangle);
        let p_diffuse = material.diffuse_weight();
        let glossy = material.glossy.unwrap_or(crate::scene::Glossy {
            reflectance: Rgb::BLACK,
            exponent: 1.0,
        });
        let (lobe, p_lobe, reflectance) = if rng.uniform(bounce, DIM_LOBE) < p_diffuse {
            (Lobe::Diffuse, p_diffuse, material.albedo)
        } else if material.is_mirror() {
            (Lobe::Mirror, 1.0 - p_diffuse, glossy.reflectance)
        } else {
            (Lobe::Glossy, 1.0 - p_diffuse, glossy.reflectance)
        };
        let factor = if p_lobe > 0.0 { reflectance / p_lobe } else { Rgb::BLACK };

        let select_here = selected.is_none()
            && lobe != Lobe::Mirror
            && !material.is_mirror()
            && p_diffuse >= settings.select.min_diffuse_weight
            && {
                qualifying += 1;
                qualifying == settings.select.nth
            };
        if select_here {
            selected = Some(VertexDescriptor {
                position: x,
                normal: n,
                omega_r: wo,
                contribution: Rgb::BLACK,
                throughput: weight * factor,
                pixel: (id.row, id.col),
                layer_id: if lobe == Lobe::Diffuse { LAYER_DIFFUSE } else { LAYER_GLOSSY },
                camera_distance: path_length,
                previous: origin,
                path: id,
            });
            weight = Rgb::WHITE;
        } else {
            weight *= factor;
        }

        if factor.is_black() {
            break;
        }

        if lobe != Lobe::Mirror && settings.next_event_estimation {
            let (lu, lv) = rng.uniform2(bounce, DIM_LIGHT_POINT);
            if let Some(ls) = scene.sample_light(rng.uniform(bounce, DIM_LIGHT_PICK), lu, lv) {
                let to_light = ls.position - x;
                let dist2 = to_light.length_squared();
                let wi = to_light / sqrt(dist2);
                let cos_x = n.dot(wi);
                let cos_l = -ls.normal.dot(wi);
                if cos_x > 0.0 && cos_l > 0.0 && scene.visible(x, ls.position) {
                    let f = lobe_eval(lobe, &material, n, wo, wi);
                    let add = weight * ls.radiance * (f * cos_x * cos_l / (dist2 * ls.pdf_area));
                    if selected.is_some() {
                        contribution += add;
                    } else {
                        base += add;
                    }
                }
            }
        }

        let (u, v) = rng.uniform2(bounce, DIM_DIRECTION);
        let wi = match lobe {
            Lobe::Diffuse => cosine_hemisphere(n, u, v),
            Lobe::Glossy => {
                let wi = phong_lobe(wo.reflect(n), glossy.exponent, u, v);
                let cos_i = wi.dot(n);
                if cos_i <= 0.0 {
                    break;
                }
                // f * cos / pdf of the normalized Phong lobe
                weight *= (glossy.exponent + 2.0) / (glossy.exponent + 1.0) * cos_i;
                wi
            }
            Lobe::Mirror => wo.reflect(n),
        };
        count_emission = lobe == Lobe::Mirror;

        if depth + 1 >= ROULETTE_DEPTH {
            let total = match &selected {
                Some(v) => v.throughput * weight,
                None => weight,
            };
            let survive = total.max_component().clamp(0.05, 0.95);
            if rng.uniform(bounce, DIM_ROULETTE) >= survive {
                break;
            }
            weight *= 1.0 / survive;
        }
        origin = x;
        dir = wi;
    }

    let vertex = selected.map(|mut v| {
        v.contribution = contribution;
        v
    });
    let radiance = match &vertex {
        Some(v) => base + v.throughput * v.contribution,
        None => base,
    };
    PathSample { radiance, base, vertex }
}
