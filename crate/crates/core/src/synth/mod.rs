//! Procedural multi-view scenes with exact ground-truth depth.
//!
//! World axes: x right, y down, z forward. The reference camera sits at the
//! origin looking down +z; frame `k` is displaced by
//! `baseline·(k − reference)` along x with a small random yaw. The scene is
//! a ground plane at `y = camera_height`, a backdrop wall, and 1–5 boxes or
//! spheres standing on the ground.

mod dataset;
mod scene;
mod texture;

pub use dataset::{load_dataset, load_sample, make_dataset, read_manifest, save_sample, scene_dir, DatasetManifest};
pub use scene::{Hit, Primitive, Render, Scene, Shape};
pub use texture::{splitmix64, ValueNoise};

use fusedepth_tensor::Tensor;
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::head::DepthMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub n_frames: usize,
    /// Nearest allowed surface depth (meters).
    pub d_min: f64,
    /// Farthest allowed surface depth (meters).
    pub d_max: f64,
    /// Focal length in pixels.
    pub focal: f64,
    /// Lateral camera step per frame (meters).
    pub baseline: f64,
    pub yaw_max_deg: f64,
    pub camera_height: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub texture_level: f64,
    /// Texture lattice spacing (meters).
    pub texture_cell: f64,
    pub dynamic_probability: f64,
    /// Range of the moving object's lateral speed (meters per frame step).
    pub velocity_min: f64,
    pub velocity_max: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 32,
            height: 32,
            channels: 1,
            n_frames: 3,
            d_min: 2.0,
            d_max: 10.0,
            focal: 32.0,
            baseline: 0.5,
            yaw_max_deg: 1.0,
            camera_height: 1.0,
            objects_min: 1,
            objects_max: 5,
            texture_level: 1.0,
            texture_cell: 0.8,
            dynamic_probability: 0.0,
            velocity_min: 0.3,
            velocity_max: 0.6,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(CoreError::config(format!("scene.{field}"), msg));
        if self.width == 0 || self.height == 0 || self.width % 4 != 0 || self.height % 4 != 0 {
            return bad("width", "image sides must be positive multiples of 4");
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels", "must be 1 or 3");
        }
        if self.n_frames < 2 {
            return bad("n_frames", "need at least 2 frames");
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return bad("d_min", "need 0 < d_min < d_max");
        }
        if !(self.focal > 0.0) || !(self.baseline > 0.0) || !(self.camera_height > 0.0) || !(self.texture_cell > 0.0) {
            return bad("focal", "focal, baseline, camera_height and texture_cell must be positive");
        }
        if self.yaw_max_deg < 0.0 {
            return bad("yaw_max_deg", "must be non-negative");
        }
        if self.objects_min > self.objects_max || self.objects_max > 5 {
            return bad("objects_min", "need objects_min ≤ objects_max ≤ 5");
        }
        if !(0.0..=1.0).contains(&self.texture_level) {
            return bad("texture_level", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.dynamic_probability) {
            return bad("dynamic_probability", "must lie in [0, 1]");
        }
        if !(0.0 <= self.velocity_min && self.velocity_min <= self.velocity_max) {
            return bad("velocity_min", "need 0 ≤ velocity_min ≤ velocity_max");
        }
        let near_ground = self.camera_height * self.focal / ((self.height as f64 - 1.0) / 2.0);
        if near_ground <= self.d_min {
            return bad("d_min", "ground at the bottom image row would be nearer than d_min");
        }
        Ok(())
    }

    pub fn reference(&self) -> usize {
        self.n_frames / 2
    }
}

/// `channels×H×W` intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::new(self.data.clone(), &[self.channels, self.height, self.width])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFlags {
    pub texture_level: f64,
    pub has_dynamic_object: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub frames: Vec<Image>,
    pub intrinsics: Vec<Intrinsics>,
    pub poses: Vec<Pose>,
    pub reference: usize,
    pub gt_depth: DepthMap,
    pub flags: SceneFlags,
    pub seed: u64,
}

impl SceneSample {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Camera-center distance between consecutive frames.
    pub fn baseline(&self) -> f64 {
        let r = self.reference;
        let other = if r + 1 < self.poses.len() { r + 1 } else { r - 1 };
        (self.poses[other].center() - self.poses[r].center()).norm()
    }
}

/// Seed of scene `index` under `master`.
pub fn scene_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(1)))
}

fn attempt_seed(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        seed
    } else {
        splitmix64(seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Builds the geometric description of a scene from one seed.
pub fn build_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = cfg.reference();
    let cx = (cfg.width as f64 - 1.0) / 2.0;
    let cy = (cfg.height as f64 - 1.0) / 2.0;
    let k = Intrinsics::new(cfg.focal, cfg.focal, cx, cy)?;

    let mut poses = Vec::with_capacity(cfg.n_frames);
    for f in 0..cfg.n_frames {
        let yaw = if f == reference || cfg.yaw_max_deg == 0.0 {
            0.0
        } else {
            rng.random_range(-cfg.yaw_max_deg..=cfg.yaw_max_deg).to_radians()
        };
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).into_inner();
        let c = Vector3::new(cfg.baseline * (f as f64 - reference as f64), 0.0, 0.0);
        poses.push(Pose::new(r, -(r * c))?);
    }

    let wall = rng.random_range(0.8 * cfg.d_max..0.95 * cfg.d_max);
    let albedo = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        let base = rng.random_range(0.3..0.9);
        if cfg.channels == 1 {
            [base; 3]
        } else {
            [base, (base + rng.random_range(-0.15..0.15)).clamp(0.1, 1.0), (base + rng.random_range(-0.15..0.15)).clamp(0.1, 1.0)]
        }
    };
    let mut primitives = vec![
        Primitive {
            shape: Shape::Plane {
                normal: Vector3::new(0.0, -1.0, 0.0),
                offset: -cfg.camera_height,
            },
            albedo: albedo(&mut rng),
            velocity: Vector3::zeros(),
        },
        Primitive {
            shape: Shape::Plane {
                normal: Vector3::new(0.0, 0.0, -1.0),
                offset: -wall,
            },
            albedo: albedo(&mut rng),
            velocity: Vector3::zeros(),
        },
    ];
    let n_objects = rng.random_range(cfg.objects_min..=cfg.objects_max);
    let z_lo = cfg.d_min + 1.0;
    let z_hi = (0.75 * wall).max(z_lo + 0.5);
    for _ in 0..n_objects {
        let z = rng.random_range(z_lo..z_hi);
        let x = rng.random_range(-0.35 * z..0.35 * z);
        let shape = if rng.random_bool(0.5) {
            let half = Vector3::new(rng.random_range(0.2..0.6), rng.random_range(0.2..0.7), rng.random_range(0.2..0.6));
            let center = Vector3::new(x, cfg.camera_height - half.y, z);
            Shape::Box {
                min: center - half,
                max: center + half,
            }
        } else {
            let radius = rng.random_range(0.25..0.6);
            Shape::Sphere {
                center: Vector3::new(x, cfg.camera_height - radius, z),
                radius,
            }
        };
        primitives.push(Primitive {
            shape,
            albedo: albedo(&mut rng),
            velocity: Vector3::zeros(),
        });
    }
    if rng.random_bool(cfg.dynamic_probability) {
        let speed = rng.random_range(cfg.velocity_min..=cfg.velocity_max);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let target = rng.random_range(2..primitives.len());
        primitives[target].velocity = Vector3::new(sign * speed, 0.0, 0.0);
    }
    let light = Vector3::new(-0.3, -1.0, -0.6).normalize();
    Ok(Scene {
        width: cfg.width,
        height: cfg.height,
        channels: cfg.channels,
        primitives,
        intrinsics: vec![k; cfg.n_frames],
        poses,
        reference,
        texture: ValueNoise {
            seed: rng.random(),
            cell: cfg.texture_cell,
        },
        texture_level: cfg.texture_level,
        light,
        ambient: 0.35,
    })
}

fn degenerate(scene: &Scene, reference: &Render) -> bool {
    let centers: Vec<_> = scene.poses.iter().map(Pose::center).collect();
    let inside = (0..scene.poses.len()).any(|f| scene.primitives_at(f).iter().any(|s| s.contains(&centers[f])));
    let seen = reference.primitive.iter().filter(|p| p.is_some()).count();
    inside || seen < reference.primitive.len()
}

/// Renders every frame of `scene` into a sample; intensities and depths are
/// rounded to `f32` so the PFM files hold them exactly.
pub fn render_sample(scene: &Scene, seed: u64) -> Result<SceneSample> {
    let renders: Vec<Render> = (0..scene.poses.len()).map(|f| scene.render(f)).collect();
    let r = &renders[scene.reference];
    let valid: Vec<bool> = r.primitive.iter().map(Option::is_some).collect();
    let gt = DepthMap::new(scene.height, scene.width, r.depth.iter().map(|&d| quantize(d)).collect(), valid)?;
    Ok(SceneSample {
        frames: renders
            .iter()
            .map(|rd| Image {
                channels: scene.channels,
                height: scene.height,
                width: scene.width,
                data: rd.image.iter().map(|&v| quantize(v)).collect(),
            })
            .collect(),
        intrinsics: scene.intrinsics.clone(),
        poses: scene.poses.clone(),
        reference: scene.reference,
        gt_depth: gt,
        flags: SceneFlags {
            texture_level: scene.texture_level,
            has_dynamic_object: scene.primitives.iter().any(Primitive::is_moving),
        },
        seed,
    })
}

/// Scene description for `seed`, after any degenerate-geometry retries.
pub fn resolve_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    const ATTEMPTS: usize = 10;
    for attempt in 0..ATTEMPTS {
        let scene = build_scene(cfg, attempt_seed(seed, attempt))?;
        if !degenerate(&scene, &scene.render(scene.reference)) {
            return Ok(scene);
        }
    }
    Err(CoreError::DegenerateScene { seed, attempts: ATTEMPTS })
}

pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<SceneSample> {
    render_sample(&resolve_scene(cfg, seed)?, seed)
}
