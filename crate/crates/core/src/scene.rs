//! Scene datasets on disk: a JSON camera manifest, one PNG per view, and an
//! SfM seed point cloud.
//!
//! Layout under a scene directory:
//!   cameras.json   array of {image, width, height, fx, fy, cx, cy,
//!                  world_to_camera: 16 row-major reals}
//!   points3d.ply   positions + uchar colors, ascii or binary
//!   *.png          one 8-bit RGB image per manifest entry
//!
//! Pixels and point colors live in [0,1] in memory. Images written here are
//! 8-bit, so datasets whose pixel values sit on the 1/255 grid round-trip
//! exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::SceneError;
use crate::image::Image;
use crate::ply::{read_points, write_points};
use crate::scalar::Real;

/// Ground-truth views plus the SfM initialization points for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset<T: Real> {
    pub name: String,
    pub views: Vec<(Camera<T>, Image<T>)>,
    pub sfm_positions: Vec<[T; 3]>,
    /// Point colors in [0,1].
    pub sfm_colors: Vec<[T; 3]>,
}

impl<T: Real> SceneDataset<T> {
    /// Checks that every view's image matches its camera resolution.
    pub fn validate(&self) -> Result<(), SceneError> {
        for (k, (camera, image)) in self.views.iter().enumerate() {
            if camera.width != image.width || camera.height != image.height {
                return Err(SceneError::ResolutionMismatch {
                    image: format!("view {k}"),
                    got_w: image.width as u32,
                    got_h: image.height as u32,
                    want_w: camera.width as u32,
                    want_h: camera.height as u32,
                });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    image: String,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_to_camera: Vec<f64>,
}

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads a PNG into an rgb image with values on the 1/255 grid.
pub fn read_png<T: Real>(path: &Path) -> Result<Image<T>, SceneError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| SceneError::BadManifest {
            path: path.display().to_string(),
            message: format!("png decode failed: {e}"),
        })?
        .to_rgb8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let mut out = Image::zeros(w, h);
    for (k, byte) in decoded.as_raw().iter().enumerate() {
        out.data[k] = T::from_f64(*byte as f64 / 255.0);
    }
    Ok(out)
}

/// Writes an rgb image as 8-bit PNG, rounding each channel to the 1/255 grid.
pub fn write_png<T: Real>(path: &Path, image: &Image<T>) -> Result<(), SceneError> {
    let mut raw = Vec::with_capacity(image.data.len());
    for v in &image.data {
        let b = (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        raw.push(b);
    }
    let buffer =
        image::RgbImage::from_raw(image.width as u32, image.height as u32, raw).expect("sized");
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| SceneError::BadManifest {
            path: path.display().to_string(),
            message: format!("png encode failed: {e}"),
        })
}

fn record_camera<T: Real>(manifest: &Path, record: &CameraRecord) -> Result<Camera<T>, SceneError> {
    if record.world_to_camera.len() != 16 {
        return Err(SceneError::BadManifest {
            path: manifest.display().to_string(),
            message: format!(
                "view {:?}: world_to_camera has {} entries, expected 16",
                record.image,
                record.world_to_camera.len()
            ),
        });
    }
    let mut w2c = [[T::zero(); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            w2c[r][c] = T::from_f64(record.world_to_camera[r * 4 + c]);
        }
    }
    Ok(Camera {
        width: record.width,
        height: record.height,
        fx: T::from_f64(record.fx),
        fy: T::from_f64(record.fy),
        cx: T::from_f64(record.cx),
        cy: T::from_f64(record.cy),
        world_to_camera: w2c,
    })
}

/// Reads a camera manifest (the `cameras.json` of a scene directory) without
/// touching the referenced images, for rendering checkpoints at known poses.
pub fn read_cameras<T: Real>(path: &Path) -> Result<Vec<Camera<T>>, SceneError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let records: Vec<CameraRecord> =
        serde_json::from_slice(&bytes).map_err(|e| SceneError::BadManifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    records.iter().map(|r| record_camera(path, r)).collect()
}

/// Reads a scene directory into a validated dataset.
pub fn read_scene<T: Real>(dir: &Path) -> Result<SceneDataset<T>, SceneError> {
    let manifest_path = dir.join("cameras.json");
    let manifest_bytes = std::fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let records: Vec<CameraRecord> =
        serde_json::from_slice(&manifest_bytes).map_err(|e| SceneError::BadManifest {
            path: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;

    let mut views = Vec::with_capacity(records.len());
    for record in &records {
        let camera = record_camera(&manifest_path, record)?;
        let image_path = dir.join(&record.image);
        if !image_path.is_file() {
            return Err(SceneError::MissingView {
                image: record.image.clone(),
            });
        }
        let pixels = read_png::<T>(&image_path)?;
        if pixels.width != record.width || pixels.height != record.height {
            return Err(SceneError::ResolutionMismatch {
                image: record.image.clone(),
                got_w: pixels.width as u32,
                got_h: pixels.height as u32,
                want_w: record.width as u32,
                want_h: record.height as u32,
            });
        }
        views.push((camera, pixels));
    }

    let points_path = dir.join("points3d.ply");
    let point_bytes = std::fs::read(&points_path).map_err(|e| io_err(&points_path, e))?;
    let (sfm_positions, raw_colors) =
        read_points::<T>(&point_bytes).map_err(|e| SceneError::BadPointCloud {
            path: points_path.display().to_string(),
            message: e.to_string(),
        })?;
    let sfm_colors = raw_colors
        .iter()
        .map(|c| {
            [
                T::from_f64(c[0] as f64 / 255.0),
                T::from_f64(c[1] as f64 / 255.0),
                T::from_f64(c[2] as f64 / 255.0),
            ]
        })
        .collect();

    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "scene".to_string());
    let dataset = SceneDataset {
        name,
        views,
        sfm_positions,
        sfm_colors,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes a dataset as a scene directory with canonical view filenames.
pub fn write_scene<T: Real>(dir: &Path, dataset: &SceneDataset<T>) -> Result<(), SceneError> {
    dataset.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut records = Vec::with_capacity(dataset.views.len());
    for (k, (camera, pixels)) in dataset.views.iter().enumerate() {
        let filename = format!("view_{k:03}.png");
        write_png(&dir.join(&filename), pixels)?;
        let mut w2c = Vec::with_capacity(16);
        for r in 0..4 {
            for c in 0..4 {
                w2c.push(camera.world_to_camera[r][c].as_f64());
            }
        }
        records.push(CameraRecord {
            image: filename,
            width: camera.width,
            height: camera.height,
            fx: camera.fx.as_f64(),
            fy: camera.fy.as_f64(),
            cx: camera.cx.as_f64(),
            cy: camera.cy.as_f64(),
            world_to_camera: w2c,
        });
    }
    let manifest_path = dir.join("cameras.json");
    let json = serde_json::to_vec_pretty(&records).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;

    let colors: Vec<[u8; 3]> = dataset
        .sfm_colors
        .iter()
        .map(|c| {
            [
                (c[0].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8,
                (c[1].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8,
                (c[2].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8,
            ]
        })
        .collect();
    let ply = write_points(&dataset.sfm_positions, &colors);
    let points_path = dir.join("points3d.ply");
    std::fs::write(&points_path, ply).map_err(|e| io_err(&points_path, e))
}
