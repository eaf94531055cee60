/// Rasterization and compositing thresholds.
///
/// The defaults follow common 3D Gaussian splatting practice. [`RenderConfig::exact`]
/// disables every threshold so the pipeline can be compared against the
/// brute-force oracle and against finite differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    /// Tile edge in pixels used for Gaussian binning.
    pub tile_size: usize,
    /// Isotropic dilation added to every 2D covariance, in px².
    pub low_pass: f64,
    /// Upper clamp on a Gaussian's per-pixel alpha. `None` disables the clamp.
    pub alpha_clamp: Option<f64>,
    /// Fragments with alpha below this value are skipped. `0.0` disables skipping.
    pub min_alpha: f64,
    /// Compositing stops once transmittance drops below this value.
    pub early_stop: Option<f64>,
    /// Alpha level that defines a Gaussian's screen footprint when skipping is
    /// disabled. Contributions below it are dropped by tiling.
    pub footprint_floor: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            low_pass: 0.3,
            alpha_clamp: Some(0.999),
            min_alpha: 1.0 / 255.0,
            early_stop: Some(1e-4),
            footprint_floor: 1e-12,
        }
    }
}

impl RenderConfig {
    /// No skip, no clamp, no early termination.
    pub fn exact() -> Self {
        Self {
            alpha_clamp: None,
            min_alpha: 0.0,
            early_stop: None,
            ..Self::default()
        }
    }

    /// Alpha level bounding each Gaussian's tiled footprint.
    pub fn footprint_alpha(&self) -> f64 {
        self.min_alpha.max(self.footprint_floor)
    }
}
