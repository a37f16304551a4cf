//! Procedural test scenes: a known Gaussian arrangement rendered to
//! ground-truth views from a ring of poses.
//!
//! The generator returns both the dataset and the Gaussians that produced
//! it, so callers can use the latter as a pretrained model when assembling
//! combined datasets. GT pixels are snapped to the 1/255 grid, which keeps
//! scene directories byte-stable across write/read cycles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::RenderError;
use crate::gaussians::{sh_basis_len, GaussianSet};
use crate::render::{render, RenderOptions};
use crate::scalar::{real, Real};
use crate::scene::SceneDataset;
use crate::sh::SH_C0;

/// Procedural scene families with visibly different geometry and palettes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Blobs,
    Rings,
    Grid,
}

impl SynthKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "blobs" => Some(Self::Blobs),
            "rings" => Some(Self::Rings),
            "grid" => Some(Self::Grid),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Blobs => "blobs",
            Self::Rings => "rings",
            Self::Grid => "grid",
        }
    }
}

fn push_gaussian<T: Real>(
    set: &mut GaussianSet<T>,
    rng: &mut ChaCha8Rng,
    position: [f64; 3],
    rgb: [f64; 3],
    log_scale: f64,
) {
    set.positions.push([
        real(position[0]),
        real(position[1]),
        real(position[2]),
    ]);
    set.opacity_logits.push(real(rng.gen_range(1.0..3.0)));
    let q = [
        rng.gen_range(-1.0..1.0f64),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt().max(1e-3);
    set.rotations
        .push([real(q[0] / norm), real(q[1] / norm), real(q[2] / norm), real(q[3] / norm)]);
    set.log_scales.push([
        real(log_scale + rng.gen_range(-0.3..0.3)),
        real(log_scale + rng.gen_range(-0.3..0.3)),
        real(log_scale + rng.gen_range(-0.3..0.3)),
    ]);
    // DC encodes the target color; band 1 adds mild view dependence.
    let basis = set.basis_len();
    for c in 0..3 {
        set.sh.push(real((rgb[c] - 0.5) / SH_C0));
    }
    for _ in 1..basis {
        for _ in 0..3 {
            set.sh.push(real(rng.gen_range(-0.15..0.15)));
        }
    }
}

/// Builds the generating Gaussians for a scene family.
pub fn synth_gaussians<T: Real>(kind: SynthKind, seed: u64) -> GaussianSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_95a1);
    let mut set = GaussianSet::empty(1);
    match kind {
        SynthKind::Blobs => {
            for _ in 0..48 {
                let position = [
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                ];
                let rgb = [
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                ];
                push_gaussian(&mut set, &mut rng, position, rgb, -1.9);
            }
        }
        SynthKind::Rings => {
            for (ring, (radius, height, phase)) in
                [(0.85, 0.0, 0.0), (0.55, 0.45, 0.7), (0.55, -0.45, 1.9)]
                    .into_iter()
                    .enumerate()
            {
                for k in 0..20 {
                    let t = phase + (k as f64) * std::f64::consts::TAU / 20.0;
                    let position = [radius * t.cos(), height, radius * t.sin()];
                    let hue = t / std::f64::consts::TAU + 0.31 * ring as f64;
                    let rgb = [
                        0.5 + 0.45 * (std::f64::consts::TAU * hue).cos(),
                        0.5 + 0.45 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).cos(),
                        0.5 + 0.45 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).cos(),
                    ];
                    push_gaussian(&mut set, &mut rng, position, rgb, -2.2);
                }
            }
        }
        SynthKind::Grid => {
            for ix in 0..4 {
                for iy in 0..4 {
                    for iz in 0..4 {
                        let position = [
                            -0.75 + 0.5 * ix as f64,
                            -0.75 + 0.5 * iy as f64,
                            -0.75 + 0.5 * iz as f64,
                        ];
                        let rgb = [
                            0.15 + 0.7 * ix as f64 / 3.0,
                            0.15 + 0.7 * iy as f64 / 3.0,
                            0.15 + 0.7 * iz as f64 / 3.0,
                        ];
                        push_gaussian(&mut set, &mut rng, position, rgb, -2.4);
                    }
                }
            }
        }
    }
    debug_assert_eq!(set.sh.len(), set.len() * sh_basis_len(set.sh_degree) * 3);
    set
}

/// Poses on a tilted ring around the origin, all looking at the center.
pub fn ring_cameras<T: Real>(views: usize, width: usize, height: usize) -> Vec<Camera<T>> {
    let focal = 1.2 * width.max(height) as f64;
    let radius = 3.4;
    (0..views)
        .map(|k| {
            let t = (k as f64) * std::f64::consts::TAU / views.max(1) as f64;
            // Alternate two elevations so vertical structure is observed.
            let y = if k % 2 == 0 { 0.9 } else { -0.9 };
            let position = [radius * t.cos(), y, radius * t.sin()];
            Camera::looking_at_origin(
                width,
                height,
                T::from_f64(focal),
                T::from_f64(focal),
                [real(position[0]), real(position[1]), real(position[2])],
            )
        })
        .collect()
}

/// Generates a full dataset: GT renders of the procedural Gaussians plus SfM
/// points taken from the generating primitives.
pub fn synth_scene<T: Real>(
    kind: SynthKind,
    views: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<(SceneDataset<T>, GaussianSet<T>), RenderError> {
    let gaussians = synth_gaussians::<T>(kind, seed);
    let cameras = ring_cameras::<T>(views, width, height);
    let options = RenderOptions::default();
    let mut dataset_views = Vec::with_capacity(views);
    for camera in cameras {
        let (mut image, _) = render(&gaussians, &camera, &options)?;
        image.quantize_u8();
        dataset_views.push((camera, image));
    }

    let half = T::from_f64(0.5);
    let c0 = T::from_f64(SH_C0);
    let sfm_colors = (0..gaussians.len())
        .map(|i| {
            let sh = gaussians.sh_of(i);
            [
                (half + c0 * sh[0]).max(T::zero()).min(T::one()),
                (half + c0 * sh[1]).max(T::zero()).min(T::one()),
                (half + c0 * sh[2]).max(T::zero()).min(T::one()),
            ]
        })
        .collect();
    let dataset = SceneDataset {
        name: kind.name().to_string(),
        views: dataset_views,
        sfm_positions: gaussians.positions.clone(),
        sfm_colors,
    };
    Ok((dataset, gaussians))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_the_dataset() {
        let (a, ga) = synth_scene::<f32>(SynthKind::Blobs, 4, 24, 18, 7).unwrap();
        let (b, gb) = synth_scene::<f32>(SynthKind::Blobs, 4, 24, 18, 7).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(a.views.len(), b.views.len());
        for (x, y) in a.views.iter().zip(b.views.iter()) {
            assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn scene_kinds_produce_different_images() {
        let (a, _) = synth_scene::<f32>(SynthKind::Blobs, 2, 24, 18, 7).unwrap();
        let (b, _) = synth_scene::<f32>(SynthKind::Rings, 2, 24, 18, 7).unwrap();
        assert_ne!(a.views[0].1, b.views[0].1);
    }

    #[test]
    fn gt_pixels_sit_on_the_u8_grid() {
        let (dataset, _) = synth_scene::<f64>(SynthKind::Grid, 3, 20, 20, 1).unwrap();
        for (_, image) in &dataset.views {
            for v in &image.data {
                let scaled = v * 255.0;
                assert!((scaled - scaled.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn views_are_not_empty_renders() {
        // Every view should see the scene: some pixel departs from the
        // black background.
        let (dataset, _) = synth_scene::<f32>(SynthKind::Rings, 6, 32, 24, 3).unwrap();
        for (k, (_, image)) in dataset.views.iter().enumerate() {
            let lit = image.data.iter().filter(|v| **v > 0.05).count();
            assert!(lit > 20, "view {k} is nearly empty");
        }
    }

    #[test]
    fn sfm_points_match_primitive_count() {
        let (dataset, gaussians) = synth_scene::<f32>(SynthKind::Grid, 2, 16, 16, 0).unwrap();
        assert_eq!(dataset.sfm_positions.len(), gaussians.len());
        assert_eq!(dataset.sfm_colors.len(), gaussians.len());
        assert_eq!(gaussians.len(), 64);
    }

    #[test]
    fn parse_names_roundtrip() {
        for kind in [SynthKind::Blobs, SynthKind::Rings, SynthKind::Grid] {
            assert_eq!(SynthKind::parse(kind.name()), Some(kind));
        }
        assert_eq!(SynthKind::parse("cubes"), None);
    }
}
