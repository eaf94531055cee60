use meshsplat::scene_io::{load_scene, save_scene, IoError};
use meshsplat::synth::{random_scene, RandomSceneSpec};
use meshsplat::{Camera, Scene};

fn bits(scene: &Scene) -> Vec<u64> {
    let mut out = Vec::new();
    let m = &scene.mesh;
    out.push(m.grid() as u64);
    out.extend(m.vertices.iter().flatten().map(|v| v.to_bits() as u64));
    out.extend(m.triangles().iter().flatten().map(|&i| i as u64));
    out.extend(m.color.data().iter().map(|v| v.to_bits() as u64));
    out.extend(m.opacity.data().iter().map(|v| v.to_bits() as u64));
    for g in &scene.gaussians {
        out.push(g.anchor as u64);
        out.extend(
            g.offset
                .iter()
                .chain(&g.rotation)
                .chain(&g.log_scale)
                .chain(&g.color)
                .map(|v| v.to_bits() as u64),
        );
        out.push(g.opacity_logit.to_bits() as u64);
    }
    out.extend(scene.background.iter().map(|v| v.to_bits()));
    out
}

fn camera_bits(c: &Camera) -> Vec<u64> {
    let mut out: Vec<u64> = c
        .rotation()
        .iter()
        .chain(c.translation().iter())
        .map(|v| v.to_bits())
        .collect();
    out.extend([c.fx, c.fy, c.cx, c.cy, c.near].map(f64::to_bits));
    out.extend([c.width as u64, c.height as u64]);
    out
}

#[test]
fn hundred_random_scenes_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..100u64 {
        let spec = RandomSceneSpec {
            grid: 2 + (seed % 9) as usize,
            gaussians: (seed * 7 % 60) as usize,
            image: 16 + (seed % 5) as usize,
            texture: 1 + (seed % 6) as usize,
        };
        let (mut scene, cam) = random_scene(seed, spec);
        scene.background = [seed as f64 / 101.0, 0.1f64.sqrt(), std::f64::consts::PI / 4.0];
        let path = dir.path().join(format!("s{seed}/scene.toml"));
        save_scene(&scene, std::slice::from_ref(&cam), &path).unwrap();
        let (back, cams) = load_scene(&path).unwrap();
        assert_eq!(bits(&back), bits(&scene), "seed {seed}");
        assert_eq!(back, scene);
        assert_eq!(cams.len(), 1);
        assert_eq!(camera_bits(&cams[0]), camera_bits(&cam), "seed {seed}");
    }
}

#[test]
fn truncated_blob_is_a_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, cam) = random_scene(
        1,
        RandomSceneSpec {
            grid: 4,
            gaussians: 5,
            image: 16,
            texture: 2,
        },
    );
    let path = dir.path().join("scene.toml");
    save_scene(&scene, &[cam], &path).unwrap();
    let blob = dir.path().join("scene.gaussians.gpca");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_scene(&path), Err(IoError::CountMismatch { .. })));
    std::fs::remove_file(&blob).unwrap();
    assert!(matches!(load_scene(&path), Err(IoError::Missing(_))));
}

#[test]
fn empty_gaussian_list_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = random_scene(
        2,
        RandomSceneSpec {
            grid: 3,
            gaussians: 0,
            image: 16,
            texture: 2,
        },
    );
    let path = dir.path().join("empty.toml");
    save_scene(&scene, &[], &path).unwrap();
    let (back, cams) = load_scene(&path).unwrap();
    assert!(back.gaussians.is_empty());
    assert!(cams.is_empty());
    assert_eq!(back, scene);
}
