//! Joint fitting of mesh vertices, textures, and Gaussian parameters to
//! multi-view target images.

pub mod adam;
pub mod loss;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::{
    laplacian_loss, laplacian_residuals, photometric_grad, photometric_loss, scale_loss, scale_penalty,
    translation_loss, RegularizerBounds,
};

use crate::config::RenderConfig;
use crate::core::{Camera, Image, PixelMask, Scene};
use crate::error::{Error, Result};
use crate::render::{render, render_backward, RenderMode, SceneGradients};

/// Weights of the loss terms and the regularizer bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub photo: f64,
    pub scale: f64,
    pub trans: f64,
    pub laplacian: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub scale_floor: f64,
    pub translation_max: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        let b = RegularizerBounds::default();
        Self {
            photo: 1.0,
            scale: 1e-3,
            trans: 1e-3,
            laplacian: 1e-5,
            scale_lo: b.scale_lo,
            scale_hi: b.scale_hi,
            scale_floor: b.scale_floor,
            translation_max: b.translation_max,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            photo: 0.0,
            scale: 0.0,
            trans: 0.0,
            laplacian: 0.0,
            ..Self::default()
        }
    }

    pub fn bounds(&self) -> RegularizerBounds {
        RegularizerBounds {
            scale_lo: self.scale_lo,
            scale_hi: self.scale_hi,
            scale_floor: self.scale_floor,
            translation_max: self.translation_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.photo, self.scale, self.trans, self.laplacian];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.scale_lo < self.scale_hi) {
            return Err(Error::InvalidArgument("scale_lo must be below scale_hi".into()));
        }
        Ok(())
    }
}

/// Per-class learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub vertices: f64,
    pub offsets: f64,
    pub rotations: f64,
    pub log_scales: f64,
    pub opacities: f64,
    pub colors: f64,
    pub textures: f64,
}

impl LearningRates {
    /// Common splatting defaults; positions scale with the scene extent (mm).
    pub fn for_extent(extent: f64) -> Self {
        Self {
            vertices: 1.6e-4 * extent,
            offsets: 1.6e-4 * extent,
            rotations: 1e-3,
            log_scales: 5e-3,
            opacities: 5e-2,
            colors: 2.5e-3,
            textures: 1e-2,
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in [
            &mut self.vertices,
            &mut self.offsets,
            &mut self.rotations,
            &mut self.log_scales,
            &mut self.opacities,
            &mut self.colors,
            &mut self.textures,
        ] {
            *v *= s;
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.vertices,
            self.offsets,
            self.rotations,
            self.log_scales,
            self.opacities,
            self.colors,
            self.textures,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning rates must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Half the diagonal of the mesh bounding box.
pub fn scene_extent(scene: &Scene) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in &scene.mesh.vertices {
        for c in 0..3 {
            lo[c] = lo[c].min(v[c] as f64);
            hi[c] = hi[c].max(v[c] as f64);
        }
    }
    let d: f64 = (0..3).map(|c| (hi[c] - lo[c]).powi(2)).sum::<f64>().sqrt();
    if d.is_finite() && d > 0.0 {
        0.5 * d
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rates: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Trace cadence in iterations; 0 logs only the start and the end.
    pub log_every: usize,
    /// Views rendered per step; 0 uses every view.
    pub views_per_step: usize,
    pub mode: RenderMode,
    pub render: RenderConfig,
}

impl FitConfig {
    pub fn new(iterations: usize, learning_rates: LearningRates) -> Self {
        Self {
            iterations,
            learning_rates,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            log_every: 100,
            views_per_step: 0,
            mode: RenderMode::Hybrid,
            render: RenderConfig::default(),
        }
    }
}

/// A target image seen from one camera, with an optional loss mask.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: Camera,
    pub target: Image,
    pub mask: Option<PixelMask>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub photo: f64,
    pub scale: f64,
    pub trans: f64,
    pub laplacian: f64,
}

#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub loss: LossBreakdown,
    pub gradients: SceneGradients,
    /// Per-view PSNR of the render against its target, dB.
    pub psnr: Vec<f64>,
}

/// PSNR of a mean squared error on a `[0, 1]` scale, capped at 100 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        100.0
    } else {
        (-10.0 * mse.log10()).min(100.0)
    }
}

/// Weighted sum of the photometric loss (averaged over views) and the
/// regularizers, with gradients for every scene parameter.
pub fn total_loss(
    scene: &Scene,
    views: &[View],
    weights: &LossWeights,
    mode: RenderMode,
    cfg: &RenderConfig,
) -> Result<TotalLoss> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("at least one view is required".into()));
    }
    weights.validate()?;
    let mut gradients = SceneGradients::zeros(scene);
    let mut photo = 0.0;
    let mut psnr = Vec::with_capacity(views.len());
    let inv_views = 1.0 / views.len() as f64;
    for view in views {
        let frame = render(scene, &view.camera, mode, cfg)?;
        let mse = photometric_loss(&frame.image, &view.target, view.mask.as_ref())?;
        photo += mse * inv_views;
        psnr.push(psnr_from_mse(mse));
        if weights.photo != 0.0 {
            let d_image = photometric_grad(&frame.image, &view.target, view.mask.as_ref())?;
            let g = render_backward(scene, &view.camera, &frame, &d_image)?;
            gradients.add_scaled(&g, weights.photo * inv_views);
        }
    }
    let bounds = weights.bounds();
    let (scale, d_scale) = scale_loss(&scene.gaussians, &bounds);
    let (trans, d_trans) = translation_loss(&scene.gaussians, &bounds);
    let (laplacian, d_lap) = laplacian_loss(&scene.mesh);
    for (g, (ds, dt)) in gradients.gaussians.iter_mut().zip(d_scale.iter().zip(&d_trans)) {
        for c in 0..3 {
            g.log_scale[c] += weights.scale * ds[c];
            g.offset[c] += weights.trans * dt[c];
        }
    }
    for (v, d) in gradients.vertices.iter_mut().zip(&d_lap) {
        for c in 0..3 {
            v[c] += weights.laplacian * d[c];
        }
    }
    let loss = LossBreakdown {
        total: weights.photo * photo + weights.scale * scale + weights.trans * trans + weights.laplacian * laplacian,
        photo,
        scale,
        trans,
        laplacian,
    };
    Ok(TotalLoss { loss, gradients, psnr })
}

/// One logged point of a fitting run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
    /// Mean PSNR over the views evaluated at this point.
    pub psnr: f64,
}

pub const TRACE_HEADER: &str = "iteration,total,photo,scale,trans,laplacian,psnr";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let l = &r.loss;
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:.4}",
            r.iteration, l.total, l.photo, l.scale, l.trans, l.laplacian, r.psnr
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub scene: Scene,
    pub trace: Vec<TraceRow>,
}

/// Fitting stopped early. Carries the scene as it was when the problem
/// was detected.
#[derive(Clone, Debug)]
pub struct FitError {
    pub iteration: usize,
    pub error: Error,
    pub snapshot: Box<Scene>,
}

impl std::fmt::Display for FitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "fit aborted at iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for FitError {}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Runs [`fit_with`] without an observer.
pub fn fit(scene: &Scene, views: &[View], cfg: &FitConfig, weights: &LossWeights) -> Result<FitOutcome, FitError> {
    fit_with(scene, views, cfg, weights, &mut |_, _| {})
}

/// Adam on every scene parameter except the background. `observer` sees
/// each trace row with the scene at that point.
pub fn fit_with(
    scene: &Scene,
    views: &[View],
    cfg: &FitConfig,
    weights: &LossWeights,
    observer: &mut dyn FnMut(&TraceRow, &Scene),
) -> Result<FitOutcome, FitError> {
    let fail = |iteration: usize, error: Error, s: &Scene| FitError {
        iteration,
        error,
        snapshot: Box::new(s.clone()),
    };
    let mut scene = scene.clone();
    cfg.learning_rates.validate().map_err(|e| fail(0, e, &scene))?;
    weights.validate().map_err(|e| fail(0, e, &scene))?;
    if views.is_empty() {
        return Err(fail(
            0,
            Error::InvalidArgument("at least one view is required".into()),
            &scene,
        ));
    }
    let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_step = if cfg.views_per_step == 0 {
        views.len()
    } else {
        cfg.views_per_step.min(views.len())
    };
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut cursor = views.len();
    let mut trace = Vec::new();
    let mut batch: Vec<View> = Vec::with_capacity(per_step);

    for it in 0..cfg.iterations {
        batch.clear();
        if per_step == views.len() {
            batch.extend(views.iter().cloned());
        } else {
            while batch.len() < per_step {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(views[order[cursor]].clone());
                cursor += 1;
            }
        }
        let tl = total_loss(&scene, &batch, weights, cfg.mode, &cfg.render).map_err(|e| fail(it, e, &scene))?;
        if !tl.loss.total.is_finite() {
            return Err(fail(it, Error::NonFinite(format!("loss {:?}", tl.loss)), &scene));
        }
        if it == 0 || (cfg.log_every > 0 && it % cfg.log_every == 0) {
            let row = TraceRow {
                iteration: it,
                loss: tl.loss,
                psnr: mean(&tl.psnr),
            };
            observer(&row, &scene);
            trace.push(row);
        }
        apply_step(&mut scene, &tl.gradients, &mut adam, &cfg.learning_rates);
    }

    let tl = total_loss(&scene, views, weights, cfg.mode, &cfg.render).map_err(|e| fail(cfg.iterations, e, &scene))?;
    if !tl.loss.total.is_finite() {
        return Err(fail(
            cfg.iterations,
            Error::NonFinite(format!("loss {:?}", tl.loss)),
            &scene,
        ));
    }
    let row = TraceRow {
        iteration: cfg.iterations,
        loss: tl.loss,
        psnr: mean(&tl.psnr),
    };
    observer(&row, &scene);
    trace.push(row);
    Ok(FitOutcome { scene, trace })
}

/// One optimizer step over every parameter class.
pub fn apply_step(scene: &mut Scene, grads: &SceneGradients, adam: &mut Adam, lr: &LearningRates) {
    adam.begin_step();

    let mut buf: Vec<f32> = scene.mesh.vertices.iter().flatten().copied().collect();
    let g: Vec<f64> = grads.vertices.iter().flatten().copied().collect();
    if adam.update(0, &mut buf, &g, lr.vertices) {
        for (v, chunk) in scene.mesh.vertices.iter_mut().zip(buf.chunks_exact(3)) {
            v.copy_from_slice(chunk);
        }
    }
    if adam.update(1, scene.mesh.color.data_mut(), &grads.color_texture, lr.textures) {
        scene.mesh.color.clamp_unit();
    }
    if adam.update(2, scene.mesh.opacity.data_mut(), &grads.opacity_texture, lr.textures) {
        scene.mesh.opacity.clamp_unit();
    }

    let gs = &mut scene.gaussians;
    let gg = &grads.gaussians;
    macro_rules! group {
        ($slot:expr, $field:ident, $n:expr, $lr:expr) => {{
            let mut buf: Vec<f32> = gs.iter().flat_map(|g| g.$field).collect();
            let grad: Vec<f64> = gg.iter().flat_map(|g| g.$field).collect();
            let changed = adam.update($slot, &mut buf, &grad, $lr);
            if changed {
                for (g, chunk) in gs.iter_mut().zip(buf.chunks_exact($n)) {
                    g.$field.copy_from_slice(chunk);
                }
            }
            changed
        }};
    }
    group!(3, offset, 3, lr.offsets);
    if group!(4, rotation, 4, lr.rotations) {
        gs.iter_mut().for_each(|g| g.normalize_rotation());
    }
    group!(5, log_scale, 3, lr.log_scales);
    let mut buf: Vec<f32> = gs.iter().map(|g| g.opacity_logit).collect();
    let grad: Vec<f64> = gg.iter().map(|g| g.opacity_logit).collect();
    if adam.update(6, &mut buf, &grad, lr.opacities) {
        for (g, v) in gs.iter_mut().zip(buf) {
            g.opacity_logit = v;
        }
    }
    if group!(7, color, 3, lr.colors) {
        for g in gs.iter_mut() {
            g.color = g.color.map(|c| c.clamp(0.0, 1.0));
        }
    }
}
