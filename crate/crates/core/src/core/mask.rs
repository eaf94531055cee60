use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Mesh;
use crate::error::{check_len, Error, Result};

/// Static selection of UV texels that spawn Gaussians under a fixed budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    /// Texels per side of the UV map.
    pub resolution: usize,
    pub budget: usize,
    pub priority_fraction: f64,
    pub seed: u64,
    /// Selected texel indices (row-major), ascending and unique.
    pub selected: Vec<u32>,
    /// How many of `selected` come from the priority region.
    pub priority_count: usize,
    /// Fallbacks taken while filling the quotas.
    pub warnings: Vec<String>,
}

/// Picks `count` distinct entries of `region` with one uniform draw per
/// equal-size stratum of the (ordered) region.
fn stratified(region: &[u32], count: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = region.len();
    (0..count)
        .map(|i| {
            let lo = i * n / count;
            let hi = (i + 1) * n / count;
            region[lo + rng.random_range(0..hi - lo)]
        })
        .collect()
}

/// Selects `budget` texels, `round(fraction * budget)` of them from the
/// priority region and the rest from everywhere else.
///
/// When a region is smaller than its quota the whole region is taken, the
/// other region makes up the difference, and a warning is recorded.
pub fn build_sampling_mask(
    priority: &[bool],
    resolution: usize,
    budget: usize,
    fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    check_len("priority map", resolution * resolution, priority.len())?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "priority fraction {fraction} outside [0, 1]"
        )));
    }
    if budget > priority.len() {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} exceeds {} texels",
            priority.len()
        )));
    }
    let (hot, cold): (Vec<u32>, Vec<u32>) = (0..priority.len() as u32).partition(|&i| priority[i as usize]);
    let mut hot_quota = (fraction * budget as f64).round() as usize;
    let mut cold_quota = budget - hot_quota;
    let mut warnings = Vec::new();
    if hot_quota > hot.len() {
        warnings.push(format!(
            "priority region has {} texels, quota {hot_quota}; taking all and filling from the rest",
            hot.len()
        ));
        hot_quota = hot.len();
        cold_quota = budget - hot_quota;
    } else if cold_quota > cold.len() {
        warnings.push(format!(
            "non-priority region has {} texels, quota {cold_quota}; taking all and filling from the priority region",
            cold.len()
        ));
        cold_quota = cold.len();
        hot_quota = budget - cold_quota;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = stratified(&hot, hot_quota, &mut rng);
    selected.extend(stratified(&cold, cold_quota, &mut rng));
    selected.sort_unstable();
    Ok(SamplingMask {
        resolution,
        budget,
        priority_fraction: fraction,
        seed,
        selected,
        priority_count: hot_quota,
        warnings,
    })
}

impl SamplingMask {
    pub fn selected_map(&self) -> Vec<bool> {
        let mut map = vec![false; self.resolution * self.resolution];
        for &i in &self.selected {
            map[i as usize] = true;
        }
        map
    }
}

/// Anchor vertex and offset for a Gaussian spawned at the center of `texel`
/// of a `resolution x resolution` UV map: the surface point is interpolated
/// from the vertex grid and attached to the nearest grid vertex.
pub fn texel_anchor(mesh: &Mesh, texel: usize, resolution: usize) -> (u32, [f32; 3]) {
    let k = mesh.grid();
    let u = ((texel % resolution) as f64 + 0.5) / resolution as f64;
    let v = ((texel / resolution) as f64 + 0.5) / resolution as f64;
    let max = (k - 1) as f64;
    let gx = (u * k as f64 - 0.5).clamp(0.0, max);
    let gy = (v * k as f64 - 0.5).clamp(0.0, max);
    let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(k - 1), (y0 + 1).min(k - 1));
    let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
    let p = mesh.vertex(y0 * k + x0) * ((1.0 - fx) * (1.0 - fy))
        + mesh.vertex(y0 * k + x1) * (fx * (1.0 - fy))
        + mesh.vertex(y1 * k + x0) * ((1.0 - fx) * fy)
        + mesh.vertex(y1 * k + x1) * (fx * fy);
    let anchor = gy.round() as usize * k + gx.round() as usize;
    let offset = p - mesh.vertex(anchor);
    (anchor as u32, [offset.x as f32, offset.y as f32, offset.z as f32])
}
