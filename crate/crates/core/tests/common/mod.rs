#![allow(dead_code)]

use meshsplat::fit::{total_loss, LossWeights, View};
use meshsplat::oracle::{all_param_refs, configuration_signature, GradCheck, ParamRef};
use meshsplat::synth::{random_scene, RandomSceneSpec};
use meshsplat::{render, Camera, Image, RenderConfig, RenderMode, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_SPEC: RandomSceneSpec = RandomSceneSpec {
    grid: 8,
    gaussians: 50,
    image: 32,
    texture: 8,
};

/// Every parameter except boundary vertices of the UV grid.
pub fn interior_refs(scene: &Scene) -> Vec<ParamRef> {
    let k = scene.mesh.grid();
    all_param_refs(scene)
        .into_iter()
        .filter(|r| match *r {
            ParamRef::Vertex(i, _) => {
                let (x, y) = (i % k, i / k);
                x > 0 && y > 0 && x + 1 < k && y + 1 < k
            }
            _ => true,
        })
        .collect()
}

/// A random scene with a noisy target and a few Gaussians pushed outside the
/// regularizer bounds, so every term of the total loss is active.
pub fn regularized_case(seed: u64) -> (Scene, Vec<View>) {
    let (mut scene, cam) = random_scene(seed, GRAD_SPEC);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = scene.gaussians.len();
    scene.gaussians[0].log_scale[0] = 0.05f32.ln();
    scene.gaussians[1 % n].log_scale[1] = 12.0f32.ln();
    scene.gaussians[2 % n].log_scale[2] = 0.02f32.ln();
    let t = &mut scene.gaussians[3 % n].offset;
    let len = t.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
    *t = t.map(|v| v / len * 12.0);
    let target = Image::from_pixels(
        cam.width,
        cam.height,
        (0..cam.pixel_count())
            .map(|_| [0; 3].map(|_| rng.random_range(0.0..1.0)))
            .collect(),
    )
    .unwrap();
    (
        scene,
        vec![View {
            camera: cam,
            target,
            mask: None,
        }],
    )
}

pub fn signature(scene: &Scene, cams: &[&Camera], mode: RenderMode, cfg: &RenderConfig) -> u64 {
    cams.iter().fold(0u64, |h, cam| {
        let f = render(scene, cam, mode, cfg).unwrap();
        h.rotate_left(17) ^ configuration_signature(scene, &f)
    })
}

/// Central differences of `total_loss` against its analytic gradient,
/// grouped by class. Perturbations that change the render configuration are
/// counted as skipped.
pub fn total_loss_checks(
    scene: &Scene,
    views: &[View],
    weights: &LossWeights,
    mode: RenderMode,
    cfg: &RenderConfig,
    refs: &[ParamRef],
) -> Vec<GradCheck> {
    let cams: Vec<&Camera> = views.iter().map(|v| &v.camera).collect();
    let base = total_loss(scene, views, weights, mode, cfg).unwrap();
    let base_sig = signature(scene, &cams, mode, cfg);
    let mut work = scene.clone();
    let mut checks: Vec<GradCheck> = Vec::new();
    for r in refs {
        let x = r.get(scene);
        let h = r.default_step();
        let hi = r.set(&mut work, x + h);
        let lp = total_loss(&work, views, weights, mode, cfg).unwrap().loss.total;
        let sp = signature(&work, &cams, mode, cfg);
        let lo = r.set(&mut work, x - h);
        let lm = total_loss(&work, views, weights, mode, cfg).unwrap().loss.total;
        let sm = signature(&work, &cams, mode, cfg);
        r.set(&mut work, x);
        let class = r.class();
        let idx = checks.iter().position(|c| c.class == class).unwrap_or_else(|| {
            checks.push(GradCheck {
                class,
                analytic: Vec::new(),
                numeric: Vec::new(),
                skipped: 0,
            });
            checks.len() - 1
        });
        if sp != base_sig || sm != base_sig {
            checks[idx].skipped += 1;
            continue;
        }
        checks[idx].analytic.push(r.analytic(&base.gradients));
        checks[idx].numeric.push((lp - lm) / (hi - lo));
    }
    checks.sort_by_key(|c| c.class);
    checks
}
