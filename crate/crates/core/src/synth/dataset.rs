//! On-disk dataset layout:
//!
//! ```text
//! manifest.toml              scene config, master seed, scene count
//! scene_00000/frame_0.pfm    one image per frame
//! scene_00000/frame_0.cam    one camera per frame
//! scene_00000/gt_depth.pfm   reference depth, 0 where invalid
//! scene_00000/meta.txt       flags, seed, reference index
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate_scene, scene_seed, Image, SceneConfig, SceneFlags, SceneSample};
use crate::error::{CoreError, Result};
use crate::geometry::{read_cam, write_cam};
use crate::head::DepthMap;
use crate::io::{read_pfm, write_pfm, FloatImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_scenes: usize,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneMeta {
    seed: u64,
    reference: usize,
    n_frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    texture_level: f64,
    has_dynamic_object: bool,
}

pub fn scene_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("scene_{index:05}"))
}

fn to_float_image(img: &Image) -> FloatImage {
    let hw = img.height * img.width;
    FloatImage {
        width: img.width,
        height: img.height,
        channels: img.channels,
        data: (0..hw * img.channels).map(|i| img.data[(i % img.channels) * hw + i / img.channels]).collect(),
    }
}

fn from_float_image(f: FloatImage) -> Image {
    let hw = f.height * f.width;
    Image {
        channels: f.channels,
        height: f.height,
        width: f.width,
        data: (0..hw * f.channels).map(|i| f.data[(i % hw) * f.channels + i / hw]).collect(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

pub fn save_sample(sample: &SceneSample, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    for (f, img) in sample.frames.iter().enumerate() {
        write_pfm(&dir.join(format!("frame_{f}.pfm")), &to_float_image(img))?;
        write_cam(&dir.join(format!("frame_{f}.cam")), &sample.intrinsics[f], &sample.poses[f])?;
    }
    let gt = &sample.gt_depth;
    let depth = gt.values.iter().zip(&gt.valid).map(|(&d, &ok)| if ok { d } else { 0.0 }).collect();
    write_pfm(
        &dir.join("gt_depth.pfm"),
        &FloatImage {
            width: gt.width,
            height: gt.height,
            channels: 1,
            data: depth,
        },
    )?;
    let img = &sample.frames[0];
    let meta = SceneMeta {
        seed: sample.seed,
        reference: sample.reference,
        n_frames: sample.frames.len(),
        channels: img.channels,
        height: img.height,
        width: img.width,
        texture_level: sample.flags.texture_level,
        has_dynamic_object: sample.flags.has_dynamic_object,
    };
    write_text(&dir.join("meta.txt"), &toml::to_string(&meta).map_err(|e| CoreError::Serialize(e.to_string()))?)
}

fn count_files(dir: &Path, ext: &str) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut n = 0;
    for e in entries {
        let name = e.map_err(|e| CoreError::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("frame_") && name.ends_with(ext) {
            n += 1;
        }
    }
    Ok(n)
}

pub fn load_sample(dir: &Path) -> Result<SceneSample> {
    let meta_path = dir.join("meta.txt");
    let text = fs::read_to_string(&meta_path).map_err(|e| CoreError::io(&meta_path, e))?;
    let meta: SceneMeta = toml::from_str(&text).map_err(|e| CoreError::Parse {
        path: meta_path.clone(),
        line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
        msg: e.message().to_string(),
    })?;
    let dataset_err = |msg: String| CoreError::Dataset {
        path: dir.to_path_buf(),
        msg,
    };
    let (images, cams) = (count_files(dir, ".pfm")?, count_files(dir, ".cam")?);
    if images != meta.n_frames || cams != meta.n_frames {
        return Err(dataset_err(format!(
            "meta.txt declares {} frames but found {images} images and {cams} cameras",
            meta.n_frames
        )));
    }
    if meta.reference >= meta.n_frames || meta.n_frames < 2 {
        return Err(dataset_err(format!("reference {} invalid for {} frames", meta.reference, meta.n_frames)));
    }
    let mut frames = Vec::with_capacity(meta.n_frames);
    let mut intrinsics = Vec::with_capacity(meta.n_frames);
    let mut poses = Vec::with_capacity(meta.n_frames);
    for f in 0..meta.n_frames {
        let path = dir.join(format!("frame_{f}.pfm"));
        let img = read_pfm(&path)?;
        if (img.channels, img.height, img.width) != (meta.channels, meta.height, meta.width) {
            return Err(dataset_err(format!(
                "{} is {}×{}×{}, meta.txt says {}×{}×{}",
                path.display(),
                img.channels,
                img.height,
                img.width,
                meta.channels,
                meta.height,
                meta.width
            )));
        }
        frames.push(from_float_image(img));
        let (k, p) = read_cam(&dir.join(format!("frame_{f}.cam")))?;
        intrinsics.push(k);
        poses.push(p);
    }
    let gt_path = dir.join("gt_depth.pfm");
    let gt = read_pfm(&gt_path)?;
    if (gt.channels, gt.height, gt.width) != (1, meta.height, meta.width) {
        return Err(dataset_err(format!("{} has the wrong shape", gt_path.display())));
    }
    let valid = gt.data.iter().map(|&d| d > 0.0).collect();
    Ok(SceneSample {
        frames,
        intrinsics,
        poses,
        reference: meta.reference,
        gt_depth: DepthMap::new(meta.height, meta.width, gt.data, valid)?,
        flags: SceneFlags {
            texture_level: meta.texture_level,
            has_dynamic_object: meta.has_dynamic_object,
        },
        seed: meta.seed,
    })
}

/// Generates `n_scenes` scenes from `cfg.seed` into `out_dir`.
pub fn make_dataset(cfg: &SceneConfig, n_scenes: usize, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    for i in 0..n_scenes {
        let sample = generate_scene(cfg, scene_seed(cfg.seed, i as u64))?;
        save_sample(&sample, &scene_dir(out_dir, i))?;
    }
    let manifest = DatasetManifest {
        n_scenes,
        scene: cfg.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| CoreError::Serialize(e.to_string()))?;
    write_text(&out_dir.join("manifest.toml"), &text)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    toml::from_str(&text).map_err(|e| CoreError::Dataset {
        path: path.clone(),
        msg: e.to_string(),
    })
}

/// Loads every scene listed by the dataset manifest.
pub fn load_dataset(root: &Path) -> Result<Vec<SceneSample>> {
    let m = read_manifest(root)?;
    (0..m.n_scenes).map(|i| load_sample(&scene_dir(root, i))).collect()
}
