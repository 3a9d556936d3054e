use assoc4d::detections::{default_topology, load_frames, save_frames, save_frames_binary, SkeletonTopology};
use assoc4d::geometry::CameraSet;
use assoc4d::synth::{synthesize, GroundTruth, NoiseConfig, SceneConfig};

fn scene() -> SceneConfig {
    SceneConfig {
        persons: 3,
        views: 4,
        frames: 6,
        ..SceneConfig::default()
    }
}

#[test]
fn scene_files_round_trip() {
    let topo = default_topology();
    let (sc, frames, gt) = synthesize(&scene(), &NoiseConfig::default(), &topo, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let json = dir.path().join("detections.json");
    let bin = dir.path().join("detections.bin");
    save_frames(&json, &topo, &frames).unwrap();
    save_frames_binary(&bin, &topo, &frames).unwrap();
    assert_eq!(load_frames(&json, &topo).unwrap(), frames);
    assert_eq!(load_frames(&bin, &topo).unwrap(), frames);

    let cal = dir.path().join("calibration.json");
    sc.cameras.save(&cal).unwrap();
    assert_eq!(CameraSet::load(&cal).unwrap(), sc.cameras);

    let truth = dir.path().join("ground_truth.json");
    gt.save(&truth).unwrap();
    assert_eq!(GroundTruth::load(&truth, &topo).unwrap(), gt);
}

#[test]
fn detections_are_checked_against_the_topology() {
    let topo = default_topology();
    let (_, frames, _) = synthesize(&scene(), &NoiseConfig::default(), &topo, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["d.json", "d.bin"] {
        let path = dir.path().join(name);
        if name.ends_with("json") {
            save_frames(&path, &topo, &frames).unwrap();
        } else {
            save_frames_binary(&path, &topo, &frames).unwrap();
        }
        assert!(load_frames(&path, &SkeletonTopology::chain(5).unwrap()).is_err(), "{name}");
    }
}

#[test]
fn truncated_binary_is_rejected() {
    let topo = default_topology();
    let (_, frames, _) = synthesize(&scene(), &NoiseConfig::default(), &topo, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    save_frames_binary(&path, &topo, &frames).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_frames(&path, &topo).is_err());
}
