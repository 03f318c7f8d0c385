//! Closed-form ray casting of planes, boxes and spheres.

use nalgebra::Vector3;

use super::texture::ValueNoise;
use crate::geometry::{Intrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Points with `normal·x = offset`; `normal` faces the viewer.
    Plane { normal: Vector3<f64>, offset: f64 },
    Box { min: Vector3<f64>, max: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

const EPS: f64 = 1e-9;

impl Shape {
    pub fn translated(&self, by: &Vector3<f64>) -> Shape {
        match *self {
            Shape::Plane { normal, offset } => Shape::Plane {
                normal,
                offset: offset + normal.dot(by),
            },
            Shape::Box { min, max } => Shape::Box {
                min: min + by,
                max: max + by,
            },
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: center + by,
                radius,
            },
        }
    }

    /// Nearest ray parameter `s > 0` of `o + s·d`, with the surface normal.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match *self {
            Shape::Plane { normal, offset } => {
                let den = normal.dot(d);
                if den.abs() < 1e-15 {
                    return None;
                }
                let s = (offset - normal.dot(o)) / den;
                (s > EPS).then_some((s, normal))
            }
            Shape::Box { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut axis0, mut axis1) = (0, 0);
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut lo, mut hi) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    if lo > t0 {
                        t0 = lo;
                        axis0 = a;
                    }
                    if hi < t1 {
                        t1 = hi;
                        axis1 = a;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let (s, a) = if t0 > EPS { (t0, axis0) } else if t1 > EPS { (t1, axis1) } else { return None };
                let mut n = Vector3::zeros();
                n[a] = -d[a].signum();
                Some((s, n))
            }
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.dot(d);
                let b = oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let s = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&s| s > EPS)?;
                Some((s, (o + d * s - center) / radius))
            }
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Plane { .. } => false,
            Shape::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Shape::Sphere { center, radius } => (p - center).norm() <= radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Base albedo per color channel.
    pub albedo: [f64; 3],
    /// World displacement per frame step away from the reference frame.
    pub velocity: Vector3<f64>,
}

impl Primitive {
    pub fn is_moving(&self) -> bool {
        self.velocity != Vector3::zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; with a camera-frame direction of unit z this is the
    /// camera z-depth.
    pub depth: f64,
    pub primitive: usize,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub primitives: Vec<Primitive>,
    pub intrinsics: Vec<Intrinsics>,
    pub poses: Vec<Pose>,
    pub reference: usize,
    pub texture: ValueNoise,
    pub texture_level: f64,
    /// Unit vector pointing toward the light.
    pub light: Vector3<f64>,
    pub ambient: f64,
}

/// Rendered frame: `channels×H×W` intensities, per-pixel depth and the
/// index of the primitive seen (`None` for background).
#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub image: Vec<f64>,
    pub depth: Vec<f64>,
    pub primitive: Vec<Option<usize>>,
}

impl Scene {
    pub fn primitives_at(&self, frame: usize) -> Vec<Shape> {
        let step = frame as f64 - self.reference as f64;
        self.primitives.iter().map(|p| p.shape.translated(&(p.velocity * step))).collect()
    }

    /// Casts the ray through pixel `(u, v)` of `frame`.
    pub fn trace(&self, frame: usize, shapes: &[Shape], u: f64, v: f64) -> Option<Hit> {
        let (k, pose) = (&self.intrinsics[frame], &self.poses[frame]);
        let dir_cam = k.inverse() * Vector3::new(u, v, 1.0);
        let dir = pose.rotation.transpose() * dir_cam;
        let origin = pose.center();
        shapes
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.intersect(&origin, &dir).map(|(t, n)| (i, t, n)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, t, n)| Hit {
                depth: t,
                primitive: i,
                point: origin + dir * t,
                normal: n,
            })
    }

    pub fn shade(&self, hit: &Hit, channel: usize) -> f64 {
        let base = self.primitives[hit.primitive].albedo[channel];
        let n = self.texture.sample(&hit.point) - 0.5;
        let albedo = (base + 0.6 * self.texture_level * n).clamp(0.02, 1.0);
        let lambert = hit.normal.dot(&self.light).max(0.0);
        (albedo * (self.ambient + (1.0 - self.ambient) * lambert)).clamp(0.0, 1.0)
    }

    pub fn render(&self, frame: usize) -> Render {
        let shapes = self.primitives_at(frame);
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut image = vec![0.0; c * h * w];
        let mut depth = vec![0.0; h * w];
        let mut primitive = vec![None; h * w];
        for v in 0..h {
            for u in 0..w {
                let p = v * w + u;
                if let Some(hit) = self.trace(frame, &shapes, u as f64, v as f64) {
                    depth[p] = hit.depth;
                    primitive[p] = Some(hit.primitive);
                    for ch in 0..c {
                        image[ch * h * w + p] = self.shade(&hit, ch);
                    }
                }
            }
        }
        Render { image, depth, primitive }
    }
}
