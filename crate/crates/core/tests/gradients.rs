mod common;

use common::{interior_refs, regularized_case, total_loss_checks, GRAD_SPEC};
use meshsplat::fit::LossWeights;
use meshsplat::oracle::{all_param_refs, check_gradients, ParamClass};
use meshsplat::synth::{random_scene, random_weights};
use meshsplat::{RenderConfig, RenderMode};

const TOL: f64 = 1e-3;

#[test]
fn render_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (scene, cam) = random_scene(seed, GRAD_SPEC);
        let w = random_weights(seed + 1000, cam.pixel_count());
        let refs = all_param_refs(&scene);
        for mode in [RenderMode::Hybrid, RenderMode::OpaqueMesh, RenderMode::GaussianOnly] {
            let checks = check_gradients(&scene, &cam, mode, &RenderConfig::exact(), &w, &refs).unwrap();
            assert_eq!(checks.len(), 9);
            for c in &checks {
                let err = c.relative_error(1e-8);
                assert!(err < TOL, "seed {seed} {mode:?} {:?}: {err:.3e}", c.class);
                assert!(
                    c.skipped * 4 <= c.analytic.len() + c.skipped,
                    "{:?} mostly skipped",
                    c.class
                );
            }
        }
    }
}

#[test]
fn total_loss_gradients_with_active_regularizers() {
    let weights = LossWeights {
        scale: 1e-2,
        trans: 1e-2,
        laplacian: 1e-3,
        ..LossWeights::default()
    };
    for seed in [3, 4] {
        let (scene, views) = regularized_case(seed);
        let checks = total_loss_checks(
            &scene,
            &views,
            &weights,
            RenderMode::Hybrid,
            &RenderConfig::exact(),
            &interior_refs(&scene),
        );
        for c in &checks {
            let err = c.relative_error(1e-10);
            assert!(err < TOL, "seed {seed} {:?}: {err:.3e}", c.class);
        }
        let ls = checks.iter().find(|c| c.class == ParamClass::LogScale).unwrap();
        assert!(ls.analytic.iter().any(|v| v.abs() > 1e-4));
    }
}
