use meshsplat::oracle::reference_render;
use meshsplat::synth::{random_scene, RandomSceneSpec};
use meshsplat::{render, RenderConfig, RenderMode};

fn spec(seed: u64) -> RandomSceneSpec {
    RandomSceneSpec {
        grid: 4 + (seed % 13) as usize,
        gaussians: 20 + (seed * 37 % 181) as usize,
        image: 64,
        texture: 4 + (seed % 9) as usize,
    }
}

#[test]
fn hybrid_matches_reference_exact() {
    for seed in 0..12 {
        let (scene, cam) = random_scene(seed, spec(seed));
        let cfg = RenderConfig::exact();
        let frame = render(&scene, &cam, RenderMode::Hybrid, &cfg).unwrap();
        let reference = reference_render(&scene, &cam, RenderMode::Hybrid, &cfg).unwrap();
        let err = frame.image.max_abs_diff(&reference);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn every_mode_matches_reference_with_thresholds() {
    let cfg = RenderConfig {
        early_stop: None,
        ..RenderConfig::default()
    };
    for seed in 100..106 {
        let (scene, cam) = random_scene(seed, spec(seed));
        for mode in [
            RenderMode::Hybrid,
            RenderMode::OpaqueMesh,
            RenderMode::GaussianOnly,
            RenderMode::MeshOnly,
        ] {
            let frame = render(&scene, &cam, mode, &cfg).unwrap();
            let reference = reference_render(&scene, &cam, mode, &cfg).unwrap();
            let err = frame.image.max_abs_diff(&reference);
            assert!(err < 1e-5, "seed {seed} {mode:?}: {err}");
        }
    }
}
