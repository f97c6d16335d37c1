//! Line-oriented scene text format.
//!
//! ```text
//! # comment
//! camera  px py pz  lx ly lz  ux uy uz  fov_deg width height
//! background r g b
//! material <name> diffuse r g b
//! material <name> layered r g b  gr gg gb exponent
//! material <name> mirror r g b
//! light <name> r g b
//! triangle <material> ax ay az bx by bz cx cy cz [emit <light>]
//! quad <material> a(3) b(3) c(3) d(3) [emit <light>]
//! box <material> x y z  sx sy sz  angle_deg
//! builtin cornell|long_wall [width height [length]]
//! at <frame> <action>
//! per_frame <first> <last> <action>
//! ```
//!
//! Actions are `move_light <light> dx dy dz`, `move_camera dx dy dz` and
//! `scale_light <light> factor`. An `at` action applies from its frame on;
//! a `per_frame` action applies once more at every frame of its range, so a
//! light moves steadily. A `builtin` line starts from a procedural scene
//! and may be followed by sequence lines; its lights are named `light0`,
//! `light1`, and so on.

use std::collections::HashMap;
use std::path::Path;

use hpsf_core::math::Vec3;
use hpsf_core::scene::{cuboid, quad, Camera, Light, Material, Triangle};
use hpsf_core::{Rgb, Scene};

use crate::error::{Error, Result};

pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_HEIGHT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    MoveLight(usize, Vec3),
    MoveCamera(Vec3),
    ScaleLight(usize, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub first: u32,
    /// Last frame at which the action is applied again; equal to `first` for
    /// one-shot actions.
    pub last: u32,
    pub action: Action,
}

impl Event {
    /// How often the action has been applied by `frame`.
    fn applications(&self, frame: u32) -> u32 {
        if frame < self.first {
            0
        } else {
            frame.min(self.last) - self.first + 1
        }
    }
}

/// A scene and its per-frame changes.
#[derive(Debug, Clone)]
pub struct SceneFile {
    pub scene: Scene,
    pub events: Vec<Event>,
}

impl SceneFile {
    pub fn still(scene: Scene) -> Self {
        Self {
            scene,
            events: Vec::new(),
        }
    }

    pub fn is_animated(&self) -> bool {
        !self.events.is_empty()
    }

    /// The scene as seen in `frame`.
    pub fn scene_at(&self, frame: u32) -> Scene {
        let mut s = self.scene.clone();
        for e in &self.events {
            let n = e.applications(frame);
            if n == 0 {
                continue;
            }
            s = match e.action {
                Action::MoveLight(l, d) => s.translate_light(l, d * n as f64),
                Action::MoveCamera(d) => s.move_camera(d * n as f64),
                Action::ScaleLight(l, f) => s.scale_light(l, f.powi(n as i32)),
            };
        }
        s
    }
}

/// Procedural scene by name, or `None` for unknown names.
pub fn builtin(name: &str, width: usize, height: usize) -> Option<Scene> {
    match name {
        "cornell" | "cornell_box" => Some(Scene::cornell_box(width, height)),
        "long_wall" | "wall" => Some(Scene::long_wall(width, height, 20.0)),
        _ => None,
    }
}

/// Resolves `--scene`: a builtin name or a path to a scene file.
pub fn load(source: &str, width: usize, height: usize) -> Result<SceneFile> {
    if let Some(scene) = builtin(source, width, height) {
        return Ok(SceneFile::still(scene));
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, source)
}

#[derive(Default)]
struct Builder {
    camera: Option<Camera>,
    background: Rgb,
    materials: Vec<Material>,
    material_names: HashMap<String, usize>,
    lights: Vec<Light>,
    light_names: HashMap<String, usize>,
    triangles: Vec<Triangle>,
    base: Option<Scene>,
    events: Vec<Event>,
}

struct Line<'a> {
    file: &'a str,
    number: usize,
    tokens: Vec<&'a str>,
    pos: usize,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.file, self.number, msg)
    }

    fn word(&mut self, what: &str) -> Result<&'a str> {
        let t = self.tokens.get(self.pos).copied().ok_or_else(|| self.err(format!("missing {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn num(&mut self, what: &str) -> Result<f64> {
        let t = self.word(what)?;
        let v: f64 = t.parse().map_err(|_| self.err(format!("bad {what} '{t}'")))?;
        if !v.is_finite() {
            return Err(self.err(format!("{what} must be finite")));
        }
        Ok(v)
    }

    fn count(&mut self, what: &str) -> Result<u64> {
        let t = self.word(what)?;
        t.parse().map_err(|_| self.err(format!("bad {what} '{t}'")))
    }

    fn vec3(&mut self, what: &str) -> Result<Vec3> {
        Ok(Vec3::new(self.num(what)?, self.num(what)?, self.num(what)?))
    }

    fn rgb(&mut self, what: &str) -> Result<Rgb> {
        Ok(Rgb::new(self.num(what)?, self.num(what)?, self.num(what)?))
    }

    fn rest(&self) -> usize {
        self.tokens.len() - self.pos
    }

    fn done(&self) -> Result<()> {
        match self.tokens.get(self.pos) {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected '{t}'"))),
        }
    }
}

impl Builder {
    fn material(&self, line: &mut Line) -> Result<usize> {
        let name = line.word("material name")?;
        self.material_names
            .get(name)
            .copied()
            .ok_or_else(|| line.err(format!("unknown material '{name}'")))
    }

    fn light(&self, line: &mut Line) -> Result<usize> {
        let name = line.word("light name")?;
        self.light_names
            .get(name)
            .copied()
            .ok_or_else(|| line.err(format!("unknown light '{name}'")))
    }

    fn action(&self, line: &mut Line) -> Result<Action> {
        let kind = line.word("action")?;
        let a = match kind {
            "move_light" => Action::MoveLight(self.light(line)?, line.vec3("offset")?),
            "move_camera" => Action::MoveCamera(line.vec3("offset")?),
            "scale_light" => Action::ScaleLight(self.light(line)?, line.num("factor")?),
            other => return Err(line.err(format!("unknown action '{other}'"))),
        };
        line.done()?;
        Ok(a)
    }

    fn emitting(&mut self, line: &mut Line, start: usize) -> Result<()> {
        if line.rest() == 0 {
            return Ok(());
        }
        if line.word("keyword")? != "emit" {
            return Err(line.err("expected 'emit <light>'"));
        }
        let l = self.light(line)?;
        line.done()?;
        for t in &mut self.triangles[start..] {
            t.light = Some(l);
        }
        Ok(())
    }

    fn statement(&mut self, line: &mut Line) -> Result<()> {
        let head = line.word("statement")?;
        match head {
            "camera" => {
                let position = line.vec3("camera position")?;
                let look_at = line.vec3("look-at point")?;
                let up = line.vec3("up vector")?;
                let fov = line.num("field of view")?;
                let width = line.count("width")? as usize;
                let height = line.count("height")? as usize;
                line.done()?;
                self.camera = Some(Camera {
                    position,
                    look_at,
                    up,
                    fov_y: fov.to_radians(),
                    width,
                    height,
                });
            }
            "background" => {
                self.background = line.rgb("background")?;
                line.done()?;
            }
            "material" => {
                let name = line.word("material name")?.to_string();
                let kind = line.word("material kind")?;
                let m = match kind {
                    "diffuse" => Material::diffuse(line.rgb("albedo")?),
                    "mirror" => Material::mirror(line.rgb("reflectance")?),
                    "layered" => {
                        let albedo = line.rgb("albedo")?;
                        let glossy = line.rgb("glossy reflectance")?;
                        Material::layered(albedo, glossy, line.num("exponent")?)
                    }
                    other => return Err(line.err(format!("unknown material kind '{other}'"))),
                };
                line.done()?;
                if self.material_names.insert(name.clone(), self.materials.len()).is_some() {
                    return Err(line.err(format!("material '{name}' defined twice")));
                }
                self.materials.push(m);
            }
            "light" => {
                let name = line.word("light name")?.to_string();
                let radiance = line.rgb("radiance")?;
                line.done()?;
                if self.light_names.insert(name.clone(), self.lights.len()).is_some() {
                    return Err(line.err(format!("light '{name}' defined twice")));
                }
                self.lights.push(Light { radiance });
            }
            "triangle" => {
                let m = self.material(line)?;
                let (a, b, c) = (line.vec3("vertex")?, line.vec3("vertex")?, line.vec3("vertex")?);
                let start = self.triangles.len();
                self.triangles.push(Triangle::new(a, b, c, m));
                self.emitting(line, start)?;
            }
            "quad" => {
                let m = self.material(line)?;
                let (a, b) = (line.vec3("vertex")?, line.vec3("vertex")?);
                let (c, d) = (line.vec3("vertex")?, line.vec3("vertex")?);
                let start = self.triangles.len();
                quad(&mut self.triangles, a, b, c, d, m);
                self.emitting(line, start)?;
            }
            "box" => {
                let m = self.material(line)?;
                let base = line.vec3("base")?;
                let size = line.vec3("size")?;
                let angle = line.num("angle")?;
                line.done()?;
                cuboid(&mut self.triangles, base, size.x, size.y, size.z, angle.to_radians(), m);
            }
            "builtin" => {
                let name = line.word("scene name")?;
                let (mut w, mut h) = (DEFAULT_WIDTH, DEFAULT_HEIGHT);
                if line.rest() > 0 {
                    w = line.count("width")? as usize;
                    h = line.count("height")? as usize;
                }
                let scene = if name == "long_wall" && line.rest() > 0 {
                    Scene::long_wall(w, h, line.num("length")?)
                } else {
                    builtin(name, w, h).ok_or_else(|| line.err(format!("unknown builtin scene '{name}'")))?
                };
                line.done()?;
                for i in 0..scene.lights.len() {
                    self.light_names.insert(format!("light{i}"), i);
                }
                self.base = Some(scene);
            }
            "at" | "per_frame" => {
                let first = line.count("frame")? as u32;
                let last = if head == "at" { first } else { line.count("last frame")? as u32 };
                if last < first {
                    return Err(line.err("frame range is empty"));
                }
                let action = self.action(line)?;
                self.events.push(Event { first, last, action });
            }
            other => return Err(line.err(format!("unknown statement '{other}'"))),
        }
        Ok(())
    }

    fn finish(self, file: &str) -> Result<SceneFile> {
        let geometry = !self.triangles.is_empty() || !self.materials.is_empty();
        let scene = match self.base {
            Some(_) if geometry => {
                return Err(Error::parse(file, 0, "a builtin scene cannot be combined with geometry"));
            }
            Some(base) => match self.camera {
                Some(c) => Scene::new(c, base.materials, base.lights, base.triangles)?,
                None => base,
            }
            .with_background(self.background),
            None => {
                let camera = self.camera.ok_or_else(|| Error::parse(file, 0, "no camera line"))?;
                Scene::new(camera, self.materials, self.lights, self.triangles)?.with_background(self.background)
            }
        };
        Ok(SceneFile {
            scene,
            events: self.events,
        })
    }
}

/// Parses scene text; `file` names the source in error messages.
pub fn parse(text: &str, file: &str) -> Result<SceneFile> {
    let mut b = Builder::default();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let mut line = Line {
            file,
            number: i + 1,
            tokens,
            pos: 0,
        };
        b.statement(&mut line)?;
    }
    b.finish(file)
}
