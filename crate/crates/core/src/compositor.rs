//! Per-pixel hybrid compositing: Gaussians in front of the mesh sample, the
//! mesh sample itself, then Gaussians behind it attenuated by `1 - alpha'`.
//!
//! A single running sum is kept so that a fully transparent mesh sample
//! reproduces the pure Gaussian path bit for bit. The reverse pass walks
//! back to front from the retained final transmittance.

use rayon::prelude::*;

use crate::config::RenderConfig;
use crate::core::Image;
use crate::error::{Error, Result};
use crate::splat::{alpha_backward, eval_alpha, ProjectedGaussian, ScreenGrad, TileBins};

/// One Gaussian's contribution at a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha: f64,
}

/// The rasterized mesh at a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshSample {
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha: f64,
}

/// Everything that enters one pixel.
#[derive(Clone, Copy, Debug)]
pub struct PixelFragmentStream<'a> {
    /// Sorted front to back.
    pub fragments: &'a [Fragment],
    pub mesh: Option<MeshSample>,
    pub background: [f64; 3],
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompositeResult {
    pub color: [f64; 3],
    pub front: [f64; 3],
    pub mesh: [f64; 3],
    pub behind: [f64; 3],
    /// Transmittance left for the background.
    pub t_final: f64,
    /// Product of `1 - alpha` over the walked Gaussians only.
    pub tg_final: f64,
    /// Number of Gaussian fragments in front of the mesh sample.
    pub split: usize,
    /// Number of Gaussian fragments composited before termination.
    pub walked: usize,
    pub mesh_done: bool,
}

/// Forward walk. Fragments are consumed lazily so the image path evaluates
/// alphas only until termination.
fn forward<I>(fragments: I, mesh: Option<&MeshSample>, background: [f64; 3], early_stop: Option<f64>) -> CompositeResult
where
    I: IntoIterator<Item = Fragment>,
{
    let eps = early_stop.unwrap_or(f64::NEG_INFINITY);
    let mut r = CompositeResult::default();
    let mut run = [0.0; 3];
    let mut tg = 1.0;
    let mut s = 1.0;
    let mut pending = mesh;
    let mut stopped = false;
    let composite_mesh = |m: &MeshSample, tg: f64, run: &mut [f64; 3], r: &mut CompositeResult| {
        let w = m.alpha * tg;
        for c in 0..3 {
            let v = m.color[c] * w;
            r.mesh[c] = v;
            run[c] += v;
        }
        r.mesh_done = true;
        r.split = r.walked;
        1.0 - m.alpha
    };
    for f in fragments {
        if let Some(m) = pending {
            if f.depth >= m.depth {
                s = composite_mesh(m, tg, &mut run, &mut r);
                pending = None;
                if s * tg < eps {
                    stopped = true;
                    break;
                }
            }
        }
        let w = s * (f.alpha * tg);
        let part = if r.mesh_done { &mut r.behind } else { &mut r.front };
        for c in 0..3 {
            let v = f.color[c] * w;
            part[c] += v;
            run[c] += v;
        }
        tg *= 1.0 - f.alpha;
        r.walked += 1;
        if s * tg < eps {
            stopped = true;
            break;
        }
    }
    if !stopped {
        if let Some(m) = pending {
            s = composite_mesh(m, tg, &mut run, &mut r);
        }
    }
    if !r.mesh_done {
        r.split = r.walked;
    }
    r.tg_final = tg;
    r.t_final = s * tg;
    for c in 0..3 {
        r.color[c] = run[c] + r.t_final * background[c];
    }
    r
}

fn check_sorted(fragments: &[Fragment]) -> Result<()> {
    for (i, w) in fragments.windows(2).enumerate() {
        if !(w[0].depth <= w[1].depth) {
            return Err(Error::Unsorted(i + 1));
        }
    }
    Ok(())
}

/// Composites one pixel. `early_stop` is the transmittance threshold below
/// which the walk ends; `None` walks every fragment.
pub fn composite_pixel(stream: &PixelFragmentStream, early_stop: Option<f64>) -> Result<CompositeResult> {
    check_sorted(stream.fragments)?;
    Ok(forward(
        stream.fragments.iter().copied(),
        stream.mesh.as_ref(),
        stream.background,
        early_stop,
    ))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FragmentGrad {
    pub alpha: f64,
    pub color: [f64; 3],
}

/// Gradients of one pixel's loss with respect to its inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelGrad {
    /// One entry per walked fragment; unwalked fragments get zero.
    pub fragments: Vec<FragmentGrad>,
    pub mesh_color: [f64; 3],
    pub mesh_alpha: f64,
    pub background: [f64; 3],
}

/// Reverse walk. `fragments` must be exactly the walked prefix. Writes one
/// gradient per fragment into `out` and returns the mesh color, mesh alpha
/// and background gradients.
fn backward(
    fragments: &[Fragment],
    mesh: Option<&MeshSample>,
    background: [f64; 3],
    state: &CompositeResult,
    d_color: [f64; 3],
    tg_scratch: &mut Vec<f64>,
    out: &mut Vec<FragmentGrad>,
) -> ([f64; 3], f64, [f64; 3]) {
    out.clear();
    out.resize(fragments.len(), FragmentGrad::default());
    tg_scratch.clear();
    let mut tg = 1.0;
    for f in fragments {
        tg_scratch.push(tg);
        tg *= 1.0 - f.alpha;
    }
    tg_scratch.push(tg);
    let mesh = mesh.filter(|_| state.mesh_done);
    let split = state.split;
    let s_end = mesh.map_or(1.0, |m| 1.0 - m.alpha);
    let d_background = d_color.map(|g| g * s_end * tg);
    let mut rest = background.map(|b| s_end * b);
    // what alpha' attenuates: behind fragments plus background, unscaled
    let mut behind = background.map(|b| tg * b);
    let mut d_mesh_color = [0.0; 3];
    let mut d_mesh_alpha = 0.0;
    let mesh_step = |m: &MeshSample, rest: &mut [f64; 3], behind: &[f64; 3], dc: &mut [f64; 3], da: &mut f64| {
        let tg_m = tg_scratch[split];
        for c in 0..3 {
            dc[c] = d_color[c] * m.alpha * tg_m;
            *da += d_color[c] * (tg_m * m.color[c] - behind[c]);
            rest[c] += m.color[c] * m.alpha;
        }
    };
    for k in (0..fragments.len()).rev() {
        if k + 1 == split {
            if let Some(m) = mesh {
                mesh_step(m, &mut rest, &behind, &mut d_mesh_color, &mut d_mesh_alpha);
            }
        }
        let f = &fragments[k];
        let tk = tg_scratch[k];
        let is_behind = mesh.is_some() && k >= split;
        let s = if is_behind { s_end } else { 1.0 };
        let mut g_alpha = 0.0;
        for c in 0..3 {
            g_alpha += d_color[c] * tk * (s * f.color[c] - rest[c]);
        }
        out[k] = FragmentGrad {
            alpha: g_alpha,
            color: d_color.map(|g| g * s * f.alpha * tk),
        };
        for c in 0..3 {
            if is_behind {
                behind[c] += f.color[c] * f.alpha * tk;
            }
            rest[c] = s * f.color[c] * f.alpha + (1.0 - f.alpha) * rest[c];
        }
    }
    if split == 0 {
        if let Some(m) = mesh {
            mesh_step(m, &mut rest, &behind, &mut d_mesh_color, &mut d_mesh_alpha);
        }
    }
    (d_mesh_color, d_mesh_alpha, d_background)
}

/// Reverse pass of [`composite_pixel`]. `result` must come from the forward
/// call on the same stream. Depths receive no gradient.
pub fn composite_pixel_backward(
    stream: &PixelFragmentStream,
    result: &CompositeResult,
    d_color: [f64; 3],
) -> Result<PixelGrad> {
    if result.walked > stream.fragments.len() || result.split > result.walked {
        return Err(Error::MissingState("composite result does not belong to this stream"));
    }
    let mut scratch = Vec::new();
    let mut grads = Vec::new();
    let (mesh_color, mesh_alpha, background) = backward(
        &stream.fragments[..result.walked],
        stream.mesh.as_ref(),
        stream.background,
        result,
        d_color,
        &mut scratch,
        &mut grads,
    );
    grads.resize(stream.fragments.len(), FragmentGrad::default());
    Ok(PixelGrad {
        fragments: grads,
        mesh_color,
        mesh_alpha,
        background,
    })
}

/// Per-pixel forward state kept for the reverse pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeState {
    pub width: usize,
    pub height: usize,
    pub transmittance: Vec<f64>,
    pub split: Vec<u32>,
    pub walked: Vec<u32>,
    pub mesh_done: Vec<bool>,
}

fn pixel_center(x: usize, y: usize) -> [f64; 2] {
    [x as f64 + 0.5, y as f64 + 0.5]
}

/// Fragments of one pixel from its tile list, with the list position of each.
fn gather(
    projected: &[ProjectedGaussian],
    list: &[u32],
    x: usize,
    y: usize,
    cfg: &RenderConfig,
    limit: usize,
    out: &mut Vec<(usize, Fragment, crate::splat::AlphaEval)>,
) {
    out.clear();
    let px = pixel_center(x, y);
    for (pos, &i) in list.iter().enumerate() {
        if out.len() == limit {
            break;
        }
        let pg = &projected[i as usize];
        if !pg.contains(x, y) {
            continue;
        }
        if let Some(e) = eval_alpha(pg, px, cfg) {
            out.push((
                pos,
                Fragment {
                    depth: pg.depth,
                    color: pg.color,
                    alpha: e.alpha,
                },
                e,
            ));
        }
    }
}

fn check_inputs(bins: &TileBins, mesh: Option<&[Option<MeshSample>]>, width: usize, height: usize) -> Result<()> {
    if bins.tiles_x != width.div_ceil(bins.tile_size) || bins.tiles_y != height.div_ceil(bins.tile_size) {
        return Err(Error::Dimension {
            what: "tile grid",
            expected: width.div_ceil(bins.tile_size) * height.div_ceil(bins.tile_size),
            found: bins.tile_count(),
        });
    }
    if let Some(m) = mesh {
        crate::error::check_len("mesh samples", width * height, m.len())?;
    }
    Ok(())
}

/// Composites every pixel. `mesh` holds one optional sample per pixel in
/// row-major order; `None` for the whole layer renders Gaussians only.
pub fn composite_image(
    projected: &[ProjectedGaussian],
    bins: &TileBins,
    mesh: Option<&[Option<MeshSample>]>,
    background: [f64; 3],
    width: usize,
    height: usize,
    cfg: &RenderConfig,
) -> Result<(Image, CompositeState)> {
    check_inputs(bins, mesh, width, height)?;
    let tiles: Vec<Vec<(usize, CompositeResult)>> = (0..bins.tile_count())
        .into_par_iter()
        .map(|t| {
            let [x0, y0, x1, y1] = bins.tile_pixels(t, width, height);
            let list = bins.tile(t);
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * width + x;
                    let px = pixel_center(x, y);
                    let frags = list.iter().filter_map(|&i| {
                        let pg = &projected[i as usize];
                        if !pg.contains(x, y) {
                            return None;
                        }
                        eval_alpha(pg, px, cfg).map(|e| Fragment {
                            depth: pg.depth,
                            color: pg.color,
                            alpha: e.alpha,
                        })
                    });
                    let sample = mesh.and_then(|m| m[p].as_ref());
                    out.push((p, forward(frags, sample, background, cfg.early_stop)));
                }
            }
            out
        })
        .collect();
    let n = width * height;
    let mut image = Image::new(width, height);
    let mut state = CompositeState {
        width,
        height,
        transmittance: vec![1.0; n],
        split: vec![0; n],
        walked: vec![0; n],
        mesh_done: vec![false; n],
    };
    for (p, r) in tiles.into_iter().flatten() {
        image.pixels_mut()[p] = r.color;
        state.transmittance[p] = r.t_final;
        state.split[p] = r.split as u32;
        state.walked[p] = r.walked as u32;
        state.mesh_done[p] = r.mesh_done;
    }
    Ok((image, state))
}

/// Gradients of [`composite_image`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrads {
    /// One per projected Gaussian, same order as the projected list.
    pub screen: Vec<ScreenGrad>,
    pub mesh_color: Vec<[f64; 3]>,
    pub mesh_alpha: Vec<f64>,
    pub background: [f64; 3],
}

/// Reverse pass of [`composite_image`] down to screen-space Gaussian
/// parameters and per-pixel mesh samples.
#[allow(clippy::too_many_arguments)]
pub fn composite_image_backward(
    projected: &[ProjectedGaussian],
    bins: &TileBins,
    mesh: Option<&[Option<MeshSample>]>,
    background: [f64; 3],
    cfg: &RenderConfig,
    state: &CompositeState,
    d_image: &[[f64; 3]],
) -> Result<ImageGrads> {
    let (width, height) = (state.width, state.height);
    check_inputs(bins, mesh, width, height)?;
    let n = width * height;
    if state.transmittance.len() != n || state.walked.len() != n || state.split.len() != n || state.mesh_done.len() != n
    {
        return Err(Error::MissingState("composite state is incomplete"));
    }
    crate::error::check_len("image gradient", n, d_image.len())?;

    struct TileOut {
        screen: Vec<ScreenGrad>,
        mesh: Vec<(usize, [f64; 3], f64)>,
        background: [f64; 3],
    }
    let tiles: Vec<TileOut> = (0..bins.tile_count())
        .into_par_iter()
        .map(|t| {
            let [x0, y0, x1, y1] = bins.tile_pixels(t, width, height);
            let list = bins.tile(t);
            let mut tile = TileOut {
                screen: vec![ScreenGrad::default(); list.len()],
                mesh: Vec::new(),
                background: [0.0; 3],
            };
            let mut gathered = Vec::new();
            let mut frags = Vec::new();
            let mut scratch = Vec::new();
            let mut grads = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * width + x;
                    let g = d_image[p];
                    if g == [0.0; 3] {
                        continue;
                    }
                    let walked = state.walked[p] as usize;
                    gather(projected, list, x, y, cfg, walked, &mut gathered);
                    frags.clear();
                    frags.extend(gathered.iter().map(|e| e.1));
                    let sample = mesh.and_then(|m| m[p].as_ref());
                    let result = CompositeResult {
                        split: state.split[p] as usize,
                        walked,
                        mesh_done: state.mesh_done[p],
                        ..Default::default()
                    };
                    let (dmc, dma, dbg) = backward(&frags, sample, background, &result, g, &mut scratch, &mut grads);
                    for c in 0..3 {
                        tile.background[c] += dbg[c];
                    }
                    if sample.is_some() {
                        tile.mesh.push((p, dmc, dma));
                    }
                    for ((pos, _, eval), fg) in gathered.iter().zip(&grads) {
                        let pg = &projected[list[*pos] as usize];
                        let sg = &mut tile.screen[*pos];
                        for c in 0..3 {
                            sg.color[c] += fg.color[c];
                        }
                        alpha_backward(pg, eval, fg.alpha, sg);
                    }
                }
            }
            tile
        })
        .collect();

    let mut out = ImageGrads {
        screen: vec![ScreenGrad::default(); projected.len()],
        mesh_color: vec![[0.0; 3]; n],
        mesh_alpha: vec![0.0; n],
        background: [0.0; 3],
    };
    for (t, tile) in tiles.iter().enumerate() {
        for (pos, &i) in bins.tile(t).iter().enumerate() {
            out.screen[i as usize].add(&tile.screen[pos]);
        }
        for &(p, dc, da) in &tile.mesh {
            out.mesh_color[p] = dc;
            out.mesh_alpha[p] = da;
        }
        for c in 0..3 {
            out.background[c] += tile.background[c];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frag(alpha: f64, color: [f64; 3], depth: f64) -> Fragment {
        Fragment { depth, color, alpha }
    }

    fn mesh(color: [f64; 3], alpha: f64, depth: f64) -> MeshSample {
        MeshSample { depth, color, alpha }
    }

    fn run(frags: &[Fragment], m: Option<MeshSample>, bg: [f64; 3]) -> CompositeResult {
        let stream = PixelFragmentStream {
            fragments: frags,
            mesh: m,
            background: bg,
        };
        composite_pixel(&stream, None).unwrap()
    }

    #[test]
    fn opaque_mesh_only() {
        let r = run(&[], Some(mesh([1.0, 0.0, 0.0], 1.0, 5.0)), [0.0; 3]);
        assert_eq!(r.color, [1.0, 0.0, 0.0]);
        assert_eq!(r.t_final, 0.0);
        assert_eq!(r.split, 0);
    }

    #[test]
    fn gaussian_in_front_of_mesh() {
        let r = run(
            &[frag(0.5, [0.0, 0.0, 1.0], 1.0)],
            Some(mesh([1.0, 0.0, 0.0], 1.0, 2.0)),
            [0.0; 3],
        );
        assert_eq!(r.front, [0.0, 0.0, 0.5]);
        assert_eq!(r.mesh, [0.5, 0.0, 0.0]);
        assert_eq!(r.behind, [0.0; 3]);
        assert_eq!(r.color, [0.5, 0.0, 0.5]);
        assert_eq!(r.split, 1);
    }

    #[test]
    fn behind_opaque_mesh_is_occluded() {
        let c = [0.3, 0.6, 0.9];
        let r = run(&[frag(0.9, [1.0; 3], 3.0)], Some(mesh(c, 1.0, 2.0)), [0.2; 3]);
        assert_eq!(r.color, c);
        let tie = run(&[frag(0.9, [1.0; 3], 2.0)], Some(mesh(c, 1.0, 2.0)), [0.0; 3]);
        assert_eq!(tie.color, c);
        assert_eq!(tie.split, 0);
    }

    #[test]
    fn transparent_mesh_is_plain_splatting() {
        let frags = [frag(0.5, [1.0, 0.0, 0.0], 1.0), frag(0.5, [0.0, 1.0, 0.0], 2.0)];
        let r = run(&frags, Some(mesh([0.7; 3], 0.0, 1.5)), [0.0; 3]);
        assert_eq!(r.color, [0.5, 0.25, 0.0]);
        assert_eq!(r.t_final, 0.25);
        let pure = run(&frags, None, [0.0; 3]);
        assert_eq!(r.color, pure.color);
    }

    #[test]
    fn unsorted_is_rejected() {
        let frags = [frag(0.5, [1.0; 3], 2.0), frag(0.5, [1.0; 3], 1.0)];
        let stream = PixelFragmentStream {
            fragments: &frags,
            mesh: None,
            background: [0.0; 3],
        };
        assert_eq!(composite_pixel(&stream, None), Err(Error::Unsorted(1)));
    }

    #[test]
    fn early_stop_keeps_crossing_fragment() {
        let frags = [frag(0.99999, [1.0; 3], 1.0), frag(0.5, [0.0; 3], 2.0)];
        let stream = PixelFragmentStream {
            fragments: &frags,
            mesh: None,
            background: [0.0; 3],
        };
        let r = composite_pixel(&stream, Some(1e-4)).unwrap();
        assert_eq!(r.walked, 1);
    }

    #[test]
    fn opaque_mesh_backward() {
        let frags: [Fragment; 0] = [];
        let stream = PixelFragmentStream {
            fragments: &frags,
            mesh: Some(mesh([0.2, 0.4, 0.6], 1.0, 3.0)),
            background: [0.5, 0.5, 0.5],
        };
        let r = composite_pixel(&stream, None).unwrap();
        let g = composite_pixel_backward(&stream, &r, [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.mesh_color, [1.0, 2.0, 3.0]);
        // dC/d alpha' = C' - bg
        let expect = (0.2 - 0.5) + 2.0 * (0.4 - 0.5) + 3.0 * (0.6 - 0.5);
        assert!((g.mesh_alpha - expect).abs() < 1e-12);
        assert_eq!(g.background, [0.0; 3]);
    }

    #[test]
    fn missing_state_is_an_error() {
        let frags = [frag(0.5, [1.0; 3], 2.0)];
        let stream = PixelFragmentStream {
            fragments: &frags,
            mesh: None,
            background: [0.0; 3],
        };
        let bogus = CompositeResult {
            walked: 3,
            ..Default::default()
        };
        assert!(matches!(
            composite_pixel_backward(&stream, &bogus, [1.0; 3]),
            Err(Error::MissingState(_))
        ));
    }
}
