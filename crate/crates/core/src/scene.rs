//! Triangle scenes, materials, area lights and the pinhole camera.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::bvh::{Aabb, Bvh};
use crate::math::{cos, sin, sqrt, tan, Rgb, Vec3};

/// Scenes with more triangles than this are intersected through a BVH.
pub const BVH_THRESHOLD: usize = 64;

/// Glossy exponents at or above this value are treated as perfect mirrors.
pub const MIRROR_EXPONENT: f64 = 1.0e6;

const RAY_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub enum SceneError {
    DegenerateTriangle { index: usize },
    AlbedoOutOfRange { material: usize },
    EnergyNotConserved { material: usize },
    UnknownMaterial { triangle: usize, material: usize },
    UnknownLight { triangle: usize, light: usize },
    NoLight,
    LightWithoutArea { light: usize },
    InvalidEmission { light: usize },
    InvalidFov,
    InvalidImageSize,
    InvalidCamera,
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneError::DegenerateTriangle { index } => write!(f, "triangle {index} has zero area"),
            SceneError::AlbedoOutOfRange { material } => {
                write!(f, "material {material} has a reflectance component outside [0, 1]")
            }
            SceneError::EnergyNotConserved { material } => {
                write!(f, "material {material}: diffuse + glossy reflectance exceeds 1")
            }
            SceneError::UnknownMaterial { triangle, material } => {
                write!(f, "triangle {triangle} references unknown material {material}")
            }
            SceneError::UnknownLight { triangle, light } => {
                write!(f, "triangle {triangle} references unknown light {light}")
            }
            SceneError::NoLight => write!(f, "scene has no light source"),
            SceneError::LightWithoutArea { light } => write!(f, "light {light} has no emitting area"),
            SceneError::InvalidEmission { light } => write!(f, "light {light} has negative or non-finite radiance"),
            SceneError::InvalidFov => write!(f, "camera field of view must lie in (0, pi)"),
            SceneError::InvalidImageSize => write!(f, "image width and height must be positive"),
            SceneError::InvalidCamera => write!(f, "camera look direction is degenerate"),
        }
    }
}

impl core::error::Error for SceneError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Glossy {
    pub reflectance: Rgb,
    /// Phong exponent; values at or above [`MIRROR_EXPONENT`] describe a mirror.
    pub exponent: f64,
}

/// Diffuse base layer with an optional glossy layer on top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub albedo: Rgb,
    pub glossy: Option<Glossy>,
}

impl Material {
    pub const fn diffuse(albedo: Rgb) -> Self {
        Self { albedo, glossy: None }
    }

    pub const fn layered(albedo: Rgb, reflectance: Rgb, exponent: f64) -> Self {
        Self {
            albedo,
            glossy: Some(Glossy { reflectance, exponent }),
        }
    }

    pub const fn mirror(reflectance: Rgb) -> Self {
        Self::layered(Rgb::BLACK, reflectance, f64::INFINITY)
    }

    /// Share of the diffuse layer in the material's total reflectance.
    pub fn diffuse_weight(&self) -> f64 {
        let d = self.albedo.max_component();
        let s = self.glossy.map_or(0.0, |g| g.reflectance.max_component());
        if d + s <= 0.0 {
            1.0
        } else {
            d / (d + s)
        }
    }

    pub fn is_mirror(&self) -> bool {
        self.glossy.is_some_and(|g| g.exponent >= MIRROR_EXPONENT)
    }
}

/// A source of emitted radiance; its emitting triangles reference it by index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Light {
    pub radiance: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
    pub material: usize,
    /// Emits on the side of its geometric normal when set.
    pub light: Option<usize>,
}

impl Triangle {
    pub const fn new(a: Vec3, b: Vec3, c: Vec3, material: usize) -> Self {
        Self {
            a,
            b,
            c,
            material,
            light: None,
        }
    }

    pub fn emissive(mut self, light: usize) -> Self {
        self.light = Some(light);
        self
    }

    /// Unnormalized geometric normal, `|n| = 2 * area`.
    #[inline]
    pub fn cross(&self) -> Vec3 {
        (self.b - self.a).cross(self.c - self.a)
    }

    pub fn area(&self) -> f64 {
        0.5 * self.cross().length()
    }

    pub fn normal(&self) -> Vec3 {
        self.cross().normalized()
    }

    fn bounds(&self) -> Aabb {
        let mut b = Aabb::EMPTY;
        b.grow(self.a);
        b.grow(self.b);
        b.grow(self.c);
        b
    }

    /// Möller–Trumbore; returns the distance along `dir`.
    #[inline]
    fn intersect(&self, origin: Vec3, dir: Vec3, t_max: f64) -> Option<f64> {
        let e1 = self.b - self.a;
        let e2 = self.c - self.a;
        let p = dir.cross(e2);
        let det = e1.dot(p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.a;
        let u = s.dot(p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(e1);
        let v = dir.dot(q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(q) * inv;
        (t > RAY_EPSILON && t < t_max).then_some(t)
    }
}

/// Pinhole camera. Pixel `(row, col)` covers `[col, col+1) x [row, row+1)`
/// with row 0 at the top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        (forward, right, up)
    }

    /// Unit direction through the film position `(row + dv, col + du)`.
    pub fn direction(&self, row: usize, col: usize, du: f64, dv: f64) -> Vec3 {
        let (forward, right, up) = self.basis();
        let half_h = tan(0.5 * self.fov_y);
        let half_w = half_h * self.width as f64 / self.height as f64;
        let sx = (2.0 * (col as f64 + du) / self.width as f64 - 1.0) * half_w;
        let sy = (1.0 - 2.0 * (row as f64 + dv) / self.height as f64) * half_h;
        (forward + right * sx + up * sy).normalized()
    }

    /// World-space size of one pixel at distance `d` from the camera.
    pub fn pixel_footprint(&self, distance: f64) -> f64 {
        2.0 * distance * tan(0.5 * self.fov_y) / self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
}

/// Point sampled on an emitter.
#[derive(Debug, Clone, Copy)]
pub struct LightSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub radiance: Rgb,
    /// Density with respect to area.
    pub pdf_area: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub camera: Camera,
    pub materials: Vec<Material>,
    pub lights: Vec<Light>,
    pub triangles: Vec<Triangle>,
    /// Radiance returned by rays leaving the scene.
    pub background: Rgb,
    emitters: Vec<usize>,
    emitter_cdf: Vec<f64>,
    bvh: Option<Bvh>,
}

impl Scene {
    pub fn new(
        camera: Camera,
        materials: Vec<Material>,
        lights: Vec<Light>,
        triangles: Vec<Triangle>,
    ) -> Result<Self, SceneError> {
        if !(camera.fov_y > 0.0 && camera.fov_y < PI) {
            return Err(SceneError::InvalidFov);
        }
        if camera.width == 0 || camera.height == 0 {
            return Err(SceneError::InvalidImageSize);
        }
        let forward = camera.look_at - camera.position;
        if forward.length_squared() == 0.0 || forward.cross(camera.up).length_squared() == 0.0 {
            return Err(SceneError::InvalidCamera);
        }
        for (i, m) in materials.iter().enumerate() {
            let in_unit = |c: Rgb| c.min_component() >= 0.0 && c.max_component() <= 1.0;
            let glossy = m.glossy.map_or(Rgb::BLACK, |g| g.reflectance);
            if !in_unit(m.albedo) || !in_unit(glossy) {
                return Err(SceneError::AlbedoOutOfRange { material: i });
            }
            if (m.albedo + glossy).max_component() > 1.0 + 1e-12 {
                return Err(SceneError::EnergyNotConserved { material: i });
            }
        }
        for (i, l) in lights.iter().enumerate() {
            if !l.radiance.is_finite() || l.radiance.min_component() < 0.0 {
                return Err(SceneError::InvalidEmission { light: i });
            }
        }
        let mut light_area = alloc::vec![0.0; lights.len()];
        for (i, t) in triangles.iter().enumerate() {
            // relative to the edge lengths so that tiny but valid triangles pass
            let scale = (t.b - t.a).length_squared().max((t.c - t.a).length_squared());
            if !t.cross().is_finite() || t.area() <= 1e-12 * scale {
                return Err(SceneError::DegenerateTriangle { index: i });
            }
            if t.material >= materials.len() {
                return Err(SceneError::UnknownMaterial {
                    triangle: i,
                    material: t.material,
                });
            }
            if let Some(l) = t.light {
                if l >= lights.len() {
                    return Err(SceneError::UnknownLight { triangle: i, light: l });
                }
                light_area[l] += t.area();
            }
        }
        if lights.is_empty() {
            return Err(SceneError::NoLight);
        }
        if let Some(l) = light_area.iter().position(|a| *a <= 0.0) {
            return Err(SceneError::LightWithoutArea { light: l });
        }

        let mut scene = Self {
            camera,
            materials,
            lights,
            triangles,
            background: Rgb::BLACK,
            emitters: Vec::new(),
            emitter_cdf: Vec::new(),
            bvh: None,
        };
        scene.rebuild();
        Ok(scene)
    }

    pub fn with_background(mut self, background: Rgb) -> Self {
        self.background = background;
        self
    }

    /// Recomputes emitter sampling tables and the acceleration structure.
    fn rebuild(&mut self) {
        self.emitters.clear();
        self.emitter_cdf.clear();
        let mut total = 0.0;
        for (i, t) in self.triangles.iter().enumerate() {
            if let Some(l) = t.light {
                let power = t.area() * self.lights[l].radiance.max_component();
                if power > 0.0 {
                    total += power;
                    self.emitters.push(i);
                    self.emitter_cdf.push(total);
                }
            }
        }
        for c in &mut self.emitter_cdf {
            *c /= total;
        }
        self.bvh = (self.triangles.len() > BVH_THRESHOLD)
            .then(|| Bvh::build(&self.triangles.iter().map(Triangle::bounds).collect::<Vec<_>>()));
    }

    pub fn uses_bvh(&self) -> bool {
        self.bvh.is_some()
    }

    /// Returns a copy with every triangle of `light` moved by `offset`.
    pub fn translate_light(&self, light: usize, offset: Vec3) -> Scene {
        let mut s = self.clone();
        for t in s.triangles.iter_mut().filter(|t| t.light == Some(light)) {
            t.a += offset;
            t.b += offset;
            t.c += offset;
        }
        s.rebuild();
        s
    }

    pub fn scale_light(&self, light: usize, factor: f64) -> Scene {
        let mut s = self.clone();
        s.lights[light].radiance *= factor;
        s.rebuild();
        s
    }

    pub fn move_camera(&self, offset: Vec3) -> Scene {
        let mut s = self.clone();
        s.camera.position += offset;
        s.camera.look_at += offset;
        s
    }

    pub fn material_of(&self, triangle: usize) -> &Material {
        &self.materials[self.triangles[triangle].material]
    }

    pub fn emission_of(&self, triangle: usize) -> Option<Rgb> {
        self.triangles[triangle].light.map(|l| self.lights[l].radiance)
    }

    pub fn intersect(&self, origin: Vec3, dir: Vec3, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        match &self.bvh {
            Some(bvh) => bvh.traverse(origin, dir, t_max, |i, t_max| {
                match self.triangles[i].intersect(origin, dir, t_max) {
                    Some(t) => {
                        best = Some(Hit { t, triangle: i });
                        t
                    }
                    None => t_max,
                }
            }),
            None => {
                let mut t_max = t_max;
                for (i, tri) in self.triangles.iter().enumerate() {
                    if let Some(t) = tri.intersect(origin, dir, t_max) {
                        t_max = t;
                        best = Some(Hit { t, triangle: i });
                    }
                }
            }
        }
        best
    }

    /// Whether the open segment between `from` and `to` is unobstructed.
    pub fn visible(&self, from: Vec3, to: Vec3) -> bool {
        let d = to - from;
        let dist = d.length();
        let dir = d / dist;
        self.intersect(from, dir, dist * (1.0 - 1e-6)).is_none()
    }

    /// Samples a point on an emitter proportionally to area times radiance.
    pub fn sample_light(&self, u_pick: f64, u: f64, v: f64) -> Option<LightSample> {
        if self.emitters.is_empty() {
            return None;
        }
        let k = self
            .emitter_cdf
            .partition_point(|c| *c <= u_pick)
            .min(self.emitters.len() - 1);
        let p_pick = self.emitter_cdf[k] - if k == 0 { 0.0 } else { self.emitter_cdf[k - 1] };
        let tri = &self.triangles[self.emitters[k]];
        let su = sqrt(u);
        let position = tri.a * (1.0 - su) + tri.b * (su * (1.0 - v)) + tri.c * (su * v);
        Some(LightSample {
            position,
            normal: tri.normal(),
            radiance: self.lights[tri.light?].radiance,
            pdf_area: p_pick / tri.area(),
        })
    }

    /// Largest emitted radiance component of any light.
    pub fn max_emission(&self) -> f64 {
        self.lights.iter().map(|l| l.radiance.max_component()).fold(0.0, f64::max)
    }

    /// Procedural Cornell box: closed room, colored side walls, two boxes and
    /// one ceiling light, camera inside the room looking down `-z`.
    pub fn cornell_box(width: usize, height: usize) -> Scene {
        let white = 0;
        let red = 1;
        let green = 2;
        let emitter = 3;
        let materials = alloc::vec![
            Material::diffuse(Rgb::new(0.73, 0.73, 0.73)),
            Material::diffuse(Rgb::new(0.65, 0.05, 0.05)),
            Material::diffuse(Rgb::new(0.12, 0.45, 0.15)),
            Material::diffuse(Rgb::BLACK),
        ];
        let lights = alloc::vec![Light {
            radiance: Rgb::new(12.0, 10.0, 7.0),
        }];
        let mut tris = Vec::new();
        let v = Vec3::new;
        // floor, ceiling, back, front (behind the camera), left, right
        quad(&mut tris, v(-1.0, -1.0, 3.6), v(1.0, -1.0, 3.6), v(1.0, -1.0, -1.0), v(-1.0, -1.0, -1.0), white);
        quad(&mut tris, v(-1.0, 1.0, -1.0), v(1.0, 1.0, -1.0), v(1.0, 1.0, 3.6), v(-1.0, 1.0, 3.6), white);
        quad(&mut tris, v(-1.0, -1.0, -1.0), v(1.0, -1.0, -1.0), v(1.0, 1.0, -1.0), v(-1.0, 1.0, -1.0), white);
        quad(&mut tris, v(1.0, -1.0, 3.6), v(-1.0, -1.0, 3.6), v(-1.0, 1.0, 3.6), v(1.0, 1.0, 3.6), white);
        quad(&mut tris, v(-1.0, -1.0, 3.6), v(-1.0, -1.0, -1.0), v(-1.0, 1.0, -1.0), v(-1.0, 1.0, 3.6), red);
        quad(&mut tris, v(1.0, -1.0, -1.0), v(1.0, -1.0, 3.6), v(1.0, 1.0, 3.6), v(1.0, 1.0, -1.0), green);
        cuboid(&mut tris, v(0.35, -1.0, 0.3), 0.6, 0.6, 0.6, -0.3, white);
        cuboid(&mut tris, v(-0.35, -1.0, -0.35), 0.6, 1.2, 0.6, 0.3, white);
        // light faces down, just below the ceiling
        let y = 0.995;
        let start = tris.len();
        quad(&mut tris, v(-0.3, y, -0.3), v(0.3, y, -0.3), v(0.3, y, 0.3), v(-0.3, y, 0.3), emitter);
        for t in &mut tris[start..] {
            t.light = Some(0);
        }
        let camera = Camera {
            position: v(0.0, 0.0, 3.4),
            look_at: v(0.0, 0.0, 0.0),
            up: v(0.0, 1.0, 0.0),
            fov_y: 40f64.to_radians(),
            width,
            height,
        };
        Scene::new(camera, materials, lights, tris).expect("built-in Cornell box is valid")
    }

    /// A long lit wall with a floor for camera-pan sequences. The camera
    /// starts at `x = 0` and looks at the wall along `-z`.
    pub fn long_wall(width: usize, height: usize, length: f64) -> Scene {
        let materials = alloc::vec![
            Material::diffuse(Rgb::new(0.7, 0.7, 0.7)),
            Material::diffuse(Rgb::new(0.6, 0.3, 0.2)),
        ];
        let lights = alloc::vec![Light {
            radiance: Rgb::new(6.0, 6.0, 6.0),
        }];
        let v = Vec3::new;
        let mut tris = Vec::new();
        let x0 = -2.0;
        let x1 = length + 2.0;
        quad(&mut tris, v(x0, 0.0, 2.0), v(x1, 0.0, 2.0), v(x1, 0.0, 0.0), v(x0, 0.0, 0.0), 1);
        quad(&mut tris, v(x0, 0.0, 0.0), v(x1, 0.0, 0.0), v(x1, 2.0, 0.0), v(x0, 2.0, 0.0), 0);
        // pillars along the wall give the pan something to resolve
        let mut x = 0.5;
        while x < length {
            cuboid(&mut tris, v(x, 0.0, 0.4), 0.2, 1.2, 0.2, 0.0, 0);
            x += 1.5;
        }
        let start = tris.len();
        quad(&mut tris, v(x0, 2.5, 0.2), v(x1, 2.5, 0.2), v(x1, 2.5, 1.8), v(x0, 2.5, 1.8), 0);
        for t in &mut tris[start..] {
            t.light = Some(0);
        }
        let camera = Camera {
            position: v(0.0, 1.0, 4.0),
            look_at: v(0.0, 1.0, 0.0),
            up: v(0.0, 1.0, 0.0),
            fov_y: 50f64.to_radians(),
            width,
            height,
        };
        Scene::new(camera, materials, lights, tris).expect("built-in wall scene is valid")
    }
}

/// Appends the quad `a b c d` (counter-clockwise seen from its front) as two triangles.
pub fn quad(tris: &mut Vec<Triangle>, a: Vec3, b: Vec3, c: Vec3, d: Vec3, material: usize) {
    tris.push(Triangle::new(a, b, c, material));
    tris.push(Triangle::new(a, c, d, material));
}

/// Axis-aligned box resting on `base` (bottom center), rotated about +y by `angle` radians.
pub fn cuboid(tris: &mut Vec<Triangle>, base: Vec3, sx: f64, sy: f64, sz: f64, angle: f64, material: usize) {
    let (s, c) = (sin(angle), cos(angle));
    let p = |x: f64, y: f64, z: f64| {
        let (dx, dz) = (x * sx * 0.5, z * sz * 0.5);
        base + Vec3::new(c * dx + s * dz, y * sy, -s * dx + c * dz)
    };
    let corners = [
        p(-1.0, 0.0, -1.0),
        p(1.0, 0.0, -1.0),
        p(1.0, 0.0, 1.0),
        p(-1.0, 0.0, 1.0),
        p(-1.0, 1.0, -1.0),
        p(1.0, 1.0, -1.0),
        p(1.0, 1.0, 1.0),
        p(-1.0, 1.0, 1.0),
    ];
    let faces = [
        [3, 2, 6, 7], // +z
        [1, 0, 4, 5], // -z
        [2, 1, 5, 6], // +x
        [0, 3, 7, 4], // -x
        [7, 6, 5, 4], // top
        [0, 1, 2, 3], // bottom
    ];
    for f in faces {
        quad(tris, corners[f[0]], corners[f[1]], corners[f[2]], corners[f[3]], material);
    }
}
