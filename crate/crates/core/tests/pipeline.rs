//! Cross-module flows: scene directories on disk, checkpoint roundtrips,
//! and a miniature hide/reveal cycle through serialized artifacts.

use splatsteg_core::config::TrainingConfig;
use splatsteg_core::dataset::make_combined_dataset;
use splatsteg_core::decoder::{decode, embed_key, read_decoder, write_decoder};
use splatsteg_core::decoder::FeatureMask;
use splatsteg_core::ply::{read_ply, write_ply};
use splatsteg_core::render::{render, RenderOptions};
use splatsteg_core::scene::{read_cameras, read_scene, write_scene};
use splatsteg_core::synth::{synth_scene, SynthKind};
use splatsteg_core::train::train;
use splatsteg_core::Scalar;

fn scene(kind: SynthKind, seed: u64) -> splatsteg_core::scene::SceneDataset<Scalar> {
    synth_scene::<Scalar>(kind, 3, 16, 16, seed).unwrap().0
}

#[test]
fn synthetic_scene_survives_disk_roundtrip() {
    let dataset = scene(SynthKind::Blobs, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blobs");
    write_scene(&path, &dataset).unwrap();
    let back = read_scene::<Scalar>(&path).unwrap();

    assert_eq!(back.views.len(), dataset.views.len());
    for ((ca, ia), (cb, ib)) in dataset.views.iter().zip(&back.views) {
        assert_eq!(ca, cb);
        // Synthetic targets are already on the 1/255 grid, so the png pass
        // is lossless.
        assert_eq!(ia.data, ib.data);
    }
    assert_eq!(back.sfm_positions, dataset.sfm_positions);
    // Point colors are stored as bytes; reading maps them back to the grid.
    for (a, b) in dataset.sfm_colors.iter().zip(&back.sfm_colors) {
        for k in 0..3 {
            let grid = ((a[k] as f64).clamp(0.0, 1.0) * 255.0).round() / 255.0;
            assert_eq!(b[k], grid as Scalar);
        }
    }
}

#[test]
fn scene_directory_write_is_a_fixpoint() {
    let dataset = scene(SynthKind::Rings, 5);
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    write_scene(&first, &dataset).unwrap();
    let back = read_scene::<Scalar>(&first).unwrap();
    write_scene(&second, &back).unwrap();

    for name in ["cameras.json", "points3d.ply", "view_000.png", "view_002.png"] {
        let x = std::fs::read(first.join(name)).unwrap();
        let y = std::fs::read(second.join(name)).unwrap();
        assert_eq!(x, y, "{name} changed across a read/write cycle");
    }
}

#[test]
fn camera_manifest_reads_without_images() {
    let dataset = scene(SynthKind::Grid, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid");
    write_scene(&path, &dataset).unwrap();
    // Remove every image; the manifest alone still yields the poses.
    for k in 0..dataset.views.len() {
        std::fs::remove_file(path.join(format!("view_{k:03}.png"))).unwrap();
    }
    let cameras = read_cameras::<Scalar>(&path.join("cameras.json")).unwrap();
    assert_eq!(cameras.len(), dataset.views.len());
    for (got, (want, _)) in cameras.iter().zip(&dataset.views) {
        assert_eq!(got, want);
    }
}

#[test]
fn read_scene_reports_missing_view_by_name() {
    let dataset = scene(SynthKind::Blobs, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken");
    write_scene(&path, &dataset).unwrap();
    std::fs::remove_file(path.join("view_001.png")).unwrap();
    let err = read_scene::<Scalar>(&path).unwrap_err();
    assert!(
        err.to_string().contains("view_001.png"),
        "error should name the missing file: {err}"
    );
}

#[test]
fn combined_dataset_unions_poses_and_counts_scenes() {
    let cover = scene(SynthKind::Blobs, 3);
    let secret = scene(SynthKind::Rings, 4);
    let combined = make_combined_dataset(&cover, &[secret.clone()], &[None, None]).unwrap();

    // Ring poses are seed-independent, so the union collapses to one ring.
    assert_eq!(combined.views.len(), 3);
    assert_eq!(combined.secret_count(), 1);
    assert_eq!(combined.report.scenes.len(), 2);
    assert_eq!(
        combined.sfm_positions.len(),
        cover.sfm_positions.len() + secret.sfm_positions.len()
    );
    // Every union pose carries both ground truths here.
    for view in &combined.views {
        assert!(view.cover_gt.is_some());
        assert_eq!(view.secret_gt.len(), 1);
        assert!(view.secret_gt[0].is_some());
    }
}

#[test]
fn training_artifacts_roundtrip_and_reveal_identically() {
    let cover = scene(SynthKind::Blobs, 3);
    let secret = scene(SynthKind::Rings, 4);
    let combined = make_combined_dataset(&cover, &[secret], &[None, None]).unwrap();

    let mut config = TrainingConfig::desk();
    config.iterations = 30;
    config.max_gaussians = 64;
    config.densify_interval = 10;
    config.metrics_interval = 10;
    config.decoder_hidden = 16;
    config.decoder_key_dim = 8;
    config.sh_degree = 1;
    config.seed = 21;
    config.secret_keys = vec!["RoundTripKey0001".to_string()];
    config.mask = FeatureMask {
        opacity: true,
        rotation: true,
        scale: true,
        position: true,
        sh: false,
    };

    let (carrier, params, log) = train(&config, &combined).unwrap();
    let params = params.expect("keyed run trains a decoder");
    assert_eq!(log.rows.last().unwrap().iteration, 30);

    // Both checkpoints reparse to the exact training result.
    let carrier_back = read_ply::<Scalar>(&write_ply(&carrier).unwrap()).unwrap();
    assert_eq!(carrier_back, carrier);
    let params_back = read_decoder::<Scalar>(&write_decoder(&params)).unwrap();
    assert_eq!(params_back.mask, params.mask);

    // The reveal is byte-for-byte the same through the disk format.
    let key = embed_key::<Scalar>("RoundTripKey0001", params.config.key_dim).unwrap();
    let direct = decode(&carrier, &key, params.mask, &params).unwrap();
    let reloaded = decode(&carrier_back, &key, params_back.mask, &params_back).unwrap();
    assert_eq!(direct, reloaded);

    let camera = combined.views[0].camera.clone();
    let options = RenderOptions::default();
    let (a, _) = render(&direct, &camera, &options).unwrap();
    let (b, _) = render(&reloaded, &camera, &options).unwrap();
    assert_eq!(a.data, b.data);
}
