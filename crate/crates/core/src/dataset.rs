//! Combined multi-scene dataset assembly for joint training.
//!
//! Training optimizes one carrier against several scenes at once, so every
//! scene must supply a target image at every pose in the union. Poses a
//! scene never saw are filled by rendering its pretrained model when one is
//! available and otherwise dropped from that scene's loss.

use crate::camera::Camera;
use crate::error::TrainError;
use crate::gaussians::GaussianSet;
use crate::image::Image;
use crate::render::{render, RenderOptions};
use crate::scalar::Real;
use crate::scene::SceneDataset;

/// One pose of the combined dataset with per-scene targets.
#[derive(Debug, Clone)]
pub struct CombinedView<T: Real> {
    pub camera: Camera<T>,
    /// Target for the carrier scene; absent poses are excluded from its loss.
    pub cover_gt: Option<Image<T>>,
    /// Target per hidden scene, same convention.
    pub secret_gt: Vec<Option<Image<T>>>,
}

/// Per-scene accounting of where each pose's target came from.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SceneReport {
    pub name: String,
    /// Poses with a captured target image.
    pub real_views: usize,
    /// Poses filled by rendering the scene's pretrained model.
    pub pseudo_views: usize,
    /// Poses excluded from this scene's loss.
    pub dropped_views: usize,
    pub sfm_points: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DatasetReport {
    pub poses: usize,
    pub sfm_points: usize,
    /// Scene 0 is the carrier, the rest follow the secret order.
    pub scenes: Vec<SceneReport>,
}

/// Pose union of a carrier scene and its hidden scenes.
#[derive(Debug, Clone)]
pub struct CombinedDataset<T: Real> {
    pub views: Vec<CombinedView<T>>,
    pub sfm_positions: Vec<[T; 3]>,
    pub sfm_colors: Vec<[T; 3]>,
    /// Originating scene per point: 0 = carrier, 1.. = secrets.
    pub sfm_source: Vec<usize>,
    pub report: DatasetReport,
}

impl<T: Real> CombinedDataset<T> {
    pub fn secret_count(&self) -> usize {
        self.report.scenes.len().saturating_sub(1)
    }
}

/// Exact-identity key for a camera: resolution plus the bit patterns of all
/// numeric fields. Two poses merge only when they match to the last bit.
fn camera_key<T: Real>(camera: &Camera<T>) -> Vec<u64> {
    let mut key = Vec::with_capacity(22);
    key.push(camera.width as u64);
    key.push(camera.height as u64);
    for v in [camera.fx, camera.fy, camera.cx, camera.cy] {
        key.push(v.as_f64().to_bits());
    }
    for row in &camera.world_to_camera {
        for v in row {
            key.push(v.as_f64().to_bits());
        }
    }
    key
}

/// Builds the pose union across the carrier and the hidden scenes.
///
/// `pretrained[k]` is scene k's standalone model (0 = carrier); it fills the
/// scene's target at poses the scene never captured. The slice may be
/// shorter than the scene count; missing entries mean no model.
pub fn make_combined_dataset<T: Real>(
    cover: &SceneDataset<T>,
    secrets: &[SceneDataset<T>],
    pretrained: &[Option<GaussianSet<T>>],
) -> Result<CombinedDataset<T>, TrainError> {
    if cover.views.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let scene_count = 1 + secrets.len();
    let scene = |k: usize| -> &SceneDataset<T> {
        if k == 0 {
            cover
        } else {
            &secrets[k - 1]
        }
    };

    // Union in first-seen order: carrier poses, then novel secret poses.
    let mut cameras: Vec<Camera<T>> = Vec::new();
    let mut keys: Vec<Vec<u64>> = Vec::new();
    // gt[k][p]: view index into scene k at union pose p.
    let mut gt: Vec<Vec<Option<usize>>> = vec![Vec::new(); scene_count];
    for k in 0..scene_count {
        for (vi, (camera, _)) in scene(k).views.iter().enumerate() {
            let key = camera_key(camera);
            let pose = match keys.iter().position(|k2| *k2 == key) {
                Some(p) => p,
                None => {
                    keys.push(key);
                    cameras.push(camera.clone());
                    for g in gt.iter_mut() {
                        g.push(None);
                    }
                    cameras.len() - 1
                }
            };
            if gt[k][pose].is_none() {
                gt[k][pose] = Some(vi);
            }
        }
    }

    let options = RenderOptions::default();
    let poses = cameras.len();
    let mut scenes: Vec<SceneReport> = (0..scene_count)
        .map(|k| SceneReport {
            name: scene(k).name.clone(),
            real_views: 0,
            pseudo_views: 0,
            dropped_views: 0,
            sfm_points: scene(k).sfm_positions.len(),
        })
        .collect();

    let mut views = Vec::with_capacity(poses);
    for (pose, camera) in cameras.iter().enumerate() {
        let mut targets: Vec<Option<Image<T>>> = Vec::with_capacity(scene_count);
        for k in 0..scene_count {
            let target = match gt[k][pose] {
                Some(vi) => {
                    scenes[k].real_views += 1;
                    Some(scene(k).views[vi].1.clone())
                }
                None => match pretrained.get(k).and_then(|m| m.as_ref()) {
                    Some(model) => {
                        scenes[k].pseudo_views += 1;
                        let (img, _) = render(model, camera, &options)?;
                        Some(img)
                    }
                    None => {
                        scenes[k].dropped_views += 1;
                        None
                    }
                },
            };
            targets.push(target);
        }
        let mut it = targets.into_iter();
        views.push(CombinedView {
            camera: camera.clone(),
            cover_gt: it.next().unwrap(),
            secret_gt: it.collect(),
        });
    }

    let mut sfm_positions = Vec::new();
    let mut sfm_colors = Vec::new();
    let mut sfm_source = Vec::new();
    for k in 0..scene_count {
        let s = scene(k);
        sfm_positions.extend_from_slice(&s.sfm_positions);
        sfm_colors.extend_from_slice(&s.sfm_colors);
        sfm_source.extend(std::iter::repeat(k).take(s.sfm_positions.len()));
    }

    let report = DatasetReport {
        poses,
        sfm_points: sfm_source.len(),
        scenes,
    };
    Ok(CombinedDataset {
        views,
        sfm_positions,
        sfm_colors,
        sfm_source,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scene, SynthKind};

    fn scenes() -> (SceneDataset<f64>, SceneDataset<f64>, GaussianSet<f64>) {
        let (cover, _) = synth_scene(SynthKind::Blobs, 3, 16, 16, 1).unwrap();
        let (secret, model) = synth_scene(SynthKind::Rings, 3, 16, 16, 2).unwrap();
        (cover, secret, model)
    }

    #[test]
    fn identical_pose_lists_merge_completely() {
        let (cover, secret, _) = scenes();
        let combined = make_combined_dataset(&cover, &[secret], &[]).unwrap();
        assert_eq!(combined.views.len(), 3);
        for view in &combined.views {
            assert!(view.cover_gt.is_some());
            assert!(view.secret_gt[0].is_some());
        }
        assert_eq!(combined.report.scenes[0].dropped_views, 0);
        assert_eq!(combined.report.scenes[1].dropped_views, 0);
    }

    #[test]
    fn sfm_points_concatenate_with_source_tags() {
        let (cover, secret, _) = scenes();
        let p0 = cover.sfm_positions.len();
        let p1 = secret.sfm_positions.len();
        let combined = make_combined_dataset(&cover, &[secret], &[]).unwrap();
        assert_eq!(combined.sfm_positions.len(), p0 + p1);
        assert_eq!(combined.sfm_source[..p0], vec![0; p0][..]);
        assert_eq!(combined.sfm_source[p0..], vec![1; p1][..]);
    }

    #[test]
    fn missing_pose_is_filled_from_pretrained_model() {
        let (cover, mut secret, model) = scenes();
        // The secret scene never saw the last pose.
        secret.views.truncate(2);
        let combined =
            make_combined_dataset(&cover, &[secret], &[None, Some(model.clone())]).unwrap();
        assert_eq!(combined.views.len(), 3);
        let filled = combined.views[2].secret_gt[0].as_ref().unwrap();
        let (expected, _) = render(
            &model,
            &combined.views[2].camera,
            &RenderOptions::default(),
        )
        .unwrap();
        assert_eq!(filled.data, expected.data);
        assert_eq!(combined.report.scenes[1].pseudo_views, 1);
        assert_eq!(combined.report.scenes[1].real_views, 2);
    }

    #[test]
    fn missing_pose_without_model_is_dropped_and_reported() {
        let (cover, mut secret, _) = scenes();
        secret.views.truncate(2);
        let combined = make_combined_dataset(&cover, &[secret], &[]).unwrap();
        assert!(combined.views[2].secret_gt[0].is_none());
        assert_eq!(combined.report.scenes[1].dropped_views, 1);
    }

    #[test]
    fn novel_secret_pose_extends_the_union() {
        let (cover, secret, _) = scenes();
        let mut secret4 = secret;
        let (extra, _) = synth_scene::<f64>(SynthKind::Rings, 5, 16, 16, 2).unwrap();
        secret4.views.push(extra.views[4].clone());
        let combined = make_combined_dataset(&cover, &[secret4], &[]).unwrap();
        assert_eq!(combined.views.len(), 4);
        // The carrier has no target at the pose only the secret captured.
        assert!(combined.views[3].cover_gt.is_none());
        assert_eq!(combined.report.scenes[0].dropped_views, 1);
    }

    #[test]
    fn empty_cover_is_rejected() {
        let (mut cover, secret, _) = scenes();
        cover.views.clear();
        assert!(matches!(
            make_combined_dataset(&cover, &[secret], &[]),
            Err(TrainError::EmptyDataset)
        ));
    }
}
