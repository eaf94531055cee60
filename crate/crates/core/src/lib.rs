//! Hybrid mesh + Gaussian splatting renderer.
//!
//! A semi-transparent textured triangle mesh is rasterized into a G-buffer and
//! then composited *inside* the depth-sorted stream of projected 3D Gaussians,
//! so Gaussians can sit both in front of and behind the surface. Every stage
//! has an analytic backward pass, which the [`fit`] module uses to jointly
//! optimize mesh vertices, textures, and Gaussian parameters against images.
//!
//! Module map:
//! - [`core`]: cameras, Gaussians, the UV-grid mesh, images, sampling masks.
//! - [`mesh_raster`]: z-buffered mesh rasterization and its backward pass.
//! - [`splat`]: EWA projection, depth sort, tile binning, per-pixel alphas.
//! - [`compositor`]: the front / mesh / behind three-term compositing.
//! - [`render`]: the full forward/backward pipeline over a scene.
//! - [`oracle`]: brute-force references used for verification.
//! - [`fit`]: losses, regularizers, and the Adam fitting loop.
//! - [`scene_io`]: file formats, image metrics, and the command line.

// Index loops over RGB triples read better than iterator chains here, and
// negated comparisons are how NaN inputs get rejected.
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod compositor;
pub mod config;
pub mod core;
pub mod error;
pub mod fit;
pub mod mesh_raster;
pub mod oracle;
pub mod render;
pub mod scene_io;
pub mod splat;
pub mod synth;

pub use crate::config::RenderConfig;
pub use crate::core::{Camera, Gaussian, Image, Mesh, SamplingMask, Scene, Texture};
pub use crate::error::{Error, Result};
pub use crate::render::{render, render_backward, Frame, RenderMode, SceneGradients};
