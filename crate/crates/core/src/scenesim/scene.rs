//! Analytic scenes and their ray-traced ground truth.

use super::camera::Camera;
use super::corrupt::CorruptionSpec;
use super::trajectory::TrajectorySpec;
use crate::io::RgbImage;
use crate::{Error, Map2, Result};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Surface albedo as a function of the world-space hit point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Material {
    Solid { color: [f64; 3] },
    Checker { a: [f64; 3], b: [f64; 3], period: f64 },
    /// Bands along one world axis.
    Stripes { a: [f64; 3], b: [f64; 3], period: f64, axis: usize },
}

impl Material {
    pub fn albedo(&self, p: &Vector3<f64>) -> [f64; 3] {
        match self {
            Material::Solid { color } => *color,
            Material::Checker { a, b, period } => {
                let s: i64 = (0..3).map(|k| (p[k] / period).floor() as i64).sum();
                if s.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Material::Stripes { a, b, period, axis } => {
                if ((p[*axis] / period).floor() as i64).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    /// Solid axis-aligned box seen from outside.
    Box { min: [f64; 3], max: [f64; 3], material: Material },
    Sphere { center: [f64; 3], radius: f64, material: Material },
    /// Infinite two-sided plane.
    Plane { point: [f64; 3], normal: [f64; 3], material: Material },
}

/// Enclosing room seen from inside. Materials are ordered
/// `-x, +x, -y, +y, -z, +z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub materials: [Material; 6],
}

/// Cameras evenly spaced on a horizontal circle, all looking at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub count: usize,
    pub center: [f64; 3],
    pub radius: f64,
    pub lookat: [f64; 3],
    pub fov_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub room: Option<Room>,
    pub primitives: Vec<Primitive>,
    /// Direction towards the light.
    pub light_dir: [f64; 3],
    pub ambient: f64,
    pub cameras: CameraRing,
    /// Indices of held-out views.
    pub test_views: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    pub corruption: CorruptionSpec,
    pub trajectory: TrajectorySpec,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct Hit<'a> {
    pub t: f64,
    pub normal: Vector3<f64>,
    pub material: &'a Material,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let gray = |v: f64| [v, v, v];
        let room = Room {
            min: [-3.0, 0.0, -3.0],
            max: [3.0, 3.0, 3.0],
            materials: [
                Material::Stripes { a: [0.85, 0.55, 0.35], b: [0.45, 0.25, 0.15], period: 0.4, axis: 2 },
                // plain wall: nothing for photometric matching to hold on to
                Material::Solid { color: [0.75, 0.75, 0.7] },
                Material::Checker { a: gray(0.8), b: gray(0.3), period: 0.5 },
                Material::Solid { color: gray(0.9) },
                Material::Stripes { a: [0.3, 0.5, 0.8], b: [0.15, 0.25, 0.45], period: 0.3, axis: 0 },
                Material::Checker { a: [0.4, 0.7, 0.4], b: [0.2, 0.35, 0.2], period: 0.6 },
            ],
        };
        let test_views = (0..26).filter(|i| matches!(i % 13, 1 | 4 | 7 | 10)).collect();
        Self {
            room: Some(room),
            primitives: vec![
                Primitive::Box {
                    min: [0.2, 0.0, -0.9],
                    max: [1.0, 0.9, -0.1],
                    material: Material::Checker { a: [0.9, 0.2, 0.2], b: [0.5, 0.1, 0.1], period: 0.2 },
                },
                Primitive::Sphere {
                    center: [-0.6, 0.5, 0.5],
                    radius: 0.5,
                    material: Material::Stripes { a: [0.9, 0.8, 0.2], b: [0.3, 0.3, 0.6], period: 0.15, axis: 1 },
                },
                // every object stays well inside the camera ring; a camera
                // grazing geometry sees space no other view constrains
                Primitive::Box {
                    min: [-1.0, 0.0, -1.2],
                    max: [-0.5, 1.6, -0.7],
                    material: Material::Solid { color: [0.6, 0.4, 0.7] },
                },
            ],
            light_dir: [0.4, 1.0, 0.3],
            ambient: 0.35,
            cameras: CameraRing {
                count: 26,
                center: [0.0, 1.4, 0.0],
                radius: 2.2,
                lookat: [0.0, 0.7, 0.0],
                fov_deg: 70.0,
            },
            test_views,
            width: 64,
            height: 64,
            near: 0.05,
            far: 7.0,
            corruption: CorruptionSpec::default(),
            trajectory: TrajectorySpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generation(m));
        if self.room.is_none() && self.primitives.is_empty() {
            return bad("scene has no primitives".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return bad(format!("need 0 < near < far, got {} / {}", self.near, self.far));
        }
        if self.cameras.count == 0 || !(self.cameras.fov_deg > 0.0 && self.cameras.fov_deg < 180.0) {
            return bad("camera ring needs count > 0 and fov in (0, 180)".into());
        }
        if let Some(&bad_idx) = self.test_views.iter().find(|&&i| i >= self.cameras.count) {
            return bad(format!("test view {bad_idx} out of range"));
        }
        if self.test_views.len() >= self.cameras.count {
            return bad("no training views left".into());
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return bad("ambient must lie in [0, 1]".into());
        }
        if v3(self.light_dir).norm() == 0.0 {
            return bad("light direction is zero".into());
        }
        for p in &self.primitives {
            match p {
                Primitive::Box { min, max, .. } if (0..3).any(|k| min[k] >= max[k]) => {
                    return bad("box with min >= max".into())
                }
                Primitive::Sphere { radius, .. } if !(*radius > 0.0) => return bad("sphere radius must be positive".into()),
                Primitive::Plane { normal, .. } if v3(*normal).norm() == 0.0 => return bad("plane normal is zero".into()),
                _ => {}
            }
        }
        self.corruption.validate()?;
        self.trajectory.validate()
    }

    /// Bounding box of the reconstruction volume (the room when present).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        if let Some(r) = &self.room {
            return (r.min, r.max);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut grow = |p: [f64; 3]| {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        };
        for c in self.camera_positions() {
            grow([c.x, c.y, c.z]);
        }
        for p in &self.primitives {
            match p {
                Primitive::Box { min, max, .. } => {
                    grow(*min);
                    grow(*max);
                }
                Primitive::Sphere { center, radius, .. } => {
                    grow([center[0] - radius, center[1] - radius, center[2] - radius]);
                    grow([center[0] + radius, center[1] + radius, center[2] + radius]);
                }
                Primitive::Plane { point, .. } => grow(*point),
            }
        }
        // an unbounded plane: pad by the far distance
        for k in 0..3 {
            lo[k] -= self.far;
            hi[k] += self.far;
        }
        (lo, hi)
    }

    fn camera_positions(&self) -> Vec<Vector3<f64>> {
        let r = &self.cameras;
        (0..r.count)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / r.count as f64;
                v3(r.center) + r.radius * Vector3::new(a.cos(), 0.0, a.sin())
            })
            .collect()
    }

    pub fn make_cameras(&self) -> Result<Vec<Camera>> {
        self.camera_positions()
            .into_iter()
            .map(|eye| {
                Camera::look_at(eye, v3(self.cameras.lookat), Vector3::y(), self.width, self.height, self.cameras.fov_deg)
            })
            .collect()
    }

    /// Nearest intersection along a ray, if any.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit<'_>> {
        let room = self.room.as_ref().and_then(|r| room_exit(r, o, d));
        let prims = self.primitives.iter().filter_map(|p| match p {
            Primitive::Box { min, max, material } => box_entry(min, max, material, o, d),
            Primitive::Sphere { center, radius, material } => sphere_hit(center, *radius, material, o, d),
            Primitive::Plane { point, normal, material } => plane_hit(point, normal, material, o, d),
        });
        room.into_iter().chain(prims).min_by(|a, b| a.t.total_cmp(&b.t))
    }

    /// True when `p` lies inside a solid primitive or outside the room.
    pub fn is_blocked(&self, p: &Vector3<f64>) -> bool {
        if let Some(r) = &self.room {
            if (0..3).any(|k| p[k] <= r.min[k] || p[k] >= r.max[k]) {
                return true;
            }
        }
        self.primitives.iter().any(|prim| match prim {
            Primitive::Box { min, max, .. } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
            Primitive::Sphere { center, radius, .. } => (p - v3(*center)).norm() <= *radius,
            Primitive::Plane { .. } => false,
        })
    }

    /// Lambertian shading `albedo · (ambient + (1 - ambient)|n·l|)`.
    pub fn shade(&self, hit: &Hit<'_>, p: &Vector3<f64>) -> [f64; 3] {
        let l = v3(self.light_dir).normalize();
        let k = self.ambient + (1.0 - self.ambient) * hit.normal.dot(&l).abs();
        hit.material.albedo(p).map(|a| (a * k).clamp(0.0, 1.0))
    }
}

fn room_exit<'a>(room: &'a Room, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit<'a>> {
    let mut best: Option<(f64, usize)> = None;
    for k in 0..3 {
        if d[k] == 0.0 {
            continue;
        }
        let (bound, face) = if d[k] > 0.0 { (room.max[k], 2 * k + 1) } else { (room.min[k], 2 * k) };
        let t = (bound - o[k]) / d[k];
        if t > HIT_EPS && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, face));
        }
    }
    best.map(|(t, face)| {
        let mut n = Vector3::zeros();
        n[face / 2] = if face % 2 == 1 { -1.0 } else { 1.0 };
        Hit {
            t,
            normal: n,
            material: &room.materials[face],
        }
    })
}

fn box_entry<'a>(min: &[f64; 3], max: &[f64; 3], m: &'a Material, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit<'a>> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis = 0;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < min[k] || o[k] > max[k] {
                return None;
            }
            continue;
        }
        let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if lo > t0 {
            t0 = lo;
            axis = k;
        }
        t1 = t1.min(hi);
    }
    if t0 > t1 || t0 <= HIT_EPS {
        return None;
    }
    let mut n = Vector3::zeros();
    n[axis] = -d[axis].signum();
    Some(Hit { t: t0, normal: n, material: m })
}

fn sphere_hit<'a>(c: &[f64; 3], r: f64, m: &'a Material, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit<'a>> {
    let oc = o - v3(*c);
    let b = oc.dot(d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    if t <= HIT_EPS {
        return None;
    }
    let normal = (oc + d * t) / r;
    Some(Hit { t, normal, material: m })
}

fn plane_hit<'a>(p: &[f64; 3], n: &[f64; 3], m: &'a Material, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit<'a>> {
    let n = v3(*n).normalize();
    let denom = d.dot(&n);
    if denom == 0.0 {
        return None;
    }
    let t = (v3(*p) - o).dot(&n) / denom;
    (t > HIT_EPS).then(|| Hit {
        t,
        normal: if denom > 0.0 { -n } else { n },
        material: m,
    })
}

/// Ground truth of one view: shaded image and z-depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub camera: Camera,
    pub rgb: RgbImage,
    pub depth: Map2,
}

/// Ray traces one camera. Fails when a ray escapes the scene or hits
/// beyond `far`.
pub fn render_gt(spec: &SceneSpec, camera: &Camera) -> Result<RenderedView> {
    if spec.is_blocked(&camera.center) {
        return Err(Error::Generation(format!(
            "camera at {:?} is outside the room or inside an object",
            camera.center.as_slice()
        )));
    }
    let (w, h) = (camera.width, camera.height);
    let mut rgb = RgbImage::new(w, h);
    let mut depth = Map2::zeros(w, h);
    let fwd = camera.forward();
    for y in 0..h {
        for x in 0..w {
            let (o, d) = camera.pixel_ray(x, y);
            let hit = spec
                .intersect(&o, &d)
                .ok_or_else(|| Error::Generation(format!("pixel ({x}, {y}) looks into the void")))?;
            if hit.t >= spec.far || hit.t <= spec.near {
                return Err(Error::Generation(format!(
                    "pixel ({x}, {y}) hits at distance {} outside (near, far) = ({}, {})",
                    hit.t, spec.near, spec.far
                )));
            }
            let p = o + d * hit.t;
            rgb.pixels[y * w + x] = spec.shade(&hit, &p);
            depth.set(x, y, hit.t * d.dot(&fwd));
        }
    }
    Ok(RenderedView {
        camera: camera.clone(),
        rgb,
        depth,
    })
}

/// Ray traces every camera of the ring.
pub fn make_scene(spec: &SceneSpec) -> Result<Vec<RenderedView>> {
    spec.validate()?;
    let cams = spec.make_cameras()?;
    cams.par_iter().map(|c| render_gt(spec, c)).collect()
}
