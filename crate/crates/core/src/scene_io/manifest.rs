//! TOML scene manifest and the flat data files it references.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::blob::{decode_gaussians, encode_gaussians};
use super::{bytes_to_f32s, f32s_to_bytes, read_file, write_atomic, IoError, IoResult};
use crate::core::{Camera, Mesh, Scene, Texture};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshEntry {
    pub grid: usize,
    pub vertices: String,
    pub topology: String,
    pub texture_size: usize,
    pub color_texture: String,
    pub opacity_texture: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianEntry {
    pub blob: String,
}

/// Intrinsics and world-to-camera extrinsics; `rotation` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraEntry {
    pub fn from_camera(c: &Camera) -> Self {
        let r = c.rotation();
        let t = c.translation();
        Self {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            near: c.near,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn to_camera(&self) -> crate::error::Result<Camera> {
        Camera::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
            (self.fx, self.fy),
            (self.cx, self.cy),
            (self.width, self.height),
            self.near,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub format_version: u32,
    pub background: [f64; 3],
    pub mesh: MeshEntry,
    pub gaussians: GaussianEntry,
    #[serde(default)]
    pub cameras: Vec<CameraEntry>,
}

/// Camera-only file: a list of `[[cameras]]` tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    #[serde(default)]
    format_version: Option<u32>,
    cameras: Vec<CameraEntry>,
}

fn parse_err(path: &Path, message: impl ToString) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(name)
}

fn cameras_from(path: &Path, entries: &[CameraEntry]) -> IoResult<Vec<Camera>> {
    entries
        .iter()
        .enumerate()
        .map(|(i, c)| c.to_camera().map_err(|e| parse_err(path, format!("camera {i}: {e}"))))
        .collect()
}

/// Reads a manifest and everything it references. Nothing is returned
/// unless every file parses.
pub fn load_scene(path: &Path) -> IoResult<(Scene, Vec<Camera>)> {
    let text = String::from_utf8(read_file(path)?).map_err(|e| parse_err(path, e))?;
    let file: SceneFile = toml::from_str(&text).map_err(|e| parse_err(path, e))?;
    if file.format_version != FORMAT_VERSION {
        return Err(IoError::VersionMismatch {
            path: path.to_path_buf(),
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let m = &file.mesh;
    let vpath = sibling(path, &m.vertices);
    let flat = bytes_to_f32s(&vpath, &read_file(&vpath)?, m.grid * m.grid * 3, "vertex floats")?;
    let vertices = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

    let tpath = sibling(path, &m.topology);
    let tbytes = read_file(&tpath)?;
    if tbytes.len() % 12 != 0 {
        return Err(IoError::CountMismatch {
            path: tpath,
            what: "triangle index bytes (multiple of 12)",
            expected: (tbytes.len() / 12 * 12) as u64,
            found: tbytes.len() as u64,
        });
    }
    let idx: Vec<u32> = tbytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let triangles = idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

    let texels = m.texture_size * m.texture_size;
    let cpath = sibling(path, &m.color_texture);
    let color = bytes_to_f32s(&cpath, &read_file(&cpath)?, texels * 3, "color texture floats")?;
    let opath = sibling(path, &m.opacity_texture);
    let opacity = bytes_to_f32s(&opath, &read_file(&opath)?, texels, "opacity texture floats")?;

    let bpath = sibling(path, &file.gaussians.blob);
    let gaussians = decode_gaussians(&bpath, &read_file(&bpath)?)?;

    let mesh = Mesh::new(
        m.grid,
        vertices,
        triangles,
        Texture::new(m.texture_size, 3, color)?,
        Texture::new(m.texture_size, 1, opacity)?,
    )?;
    let scene = Scene::new(mesh, gaussians, file.background)?;
    let cameras = cameras_from(path, &file.cameras)?;
    Ok((scene, cameras))
}

/// Writes the manifest at `path` and its data files beside it, named after
/// the manifest's file stem.
pub fn save_scene(scene: &Scene, cameras: &[Camera], path: &Path) -> IoResult<()> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let mesh = &scene.mesh;
    let entry = MeshEntry {
        grid: mesh.grid(),
        vertices: format!("{stem}.vertices.f32"),
        topology: format!("{stem}.topology.u32"),
        texture_size: mesh.color.size(),
        color_texture: format!("{stem}.color.f32"),
        opacity_texture: format!("{stem}.opacity.f32"),
    };
    if mesh.opacity.size() != mesh.color.size() {
        return Err(IoError::Invalid(crate::error::Error::InvalidMesh(
            "color and opacity textures must share a size to be saved".into(),
        )));
    }
    let file = SceneFile {
        format_version: FORMAT_VERSION,
        background: scene.background,
        gaussians: GaussianEntry {
            blob: format!("{stem}.gaussians.gpca"),
        },
        cameras: cameras.iter().map(CameraEntry::from_camera).collect(),
        mesh: entry,
    };
    let m = &file.mesh;
    write_atomic(
        &sibling(path, &m.vertices),
        &f32s_to_bytes(mesh.vertices.iter().flatten().copied()),
    )?;
    let topo: Vec<u8> = mesh
        .triangles()
        .iter()
        .flatten()
        .flat_map(|i| i.to_le_bytes())
        .collect();
    write_atomic(&sibling(path, &m.topology), &topo)?;
    write_atomic(
        &sibling(path, &m.color_texture),
        &f32s_to_bytes(mesh.color.data().iter().copied()),
    )?;
    write_atomic(
        &sibling(path, &m.opacity_texture),
        &f32s_to_bytes(mesh.opacity.data().iter().copied()),
    )?;
    write_atomic(
        &sibling(path, &file.gaussians.blob),
        &encode_gaussians(&scene.gaussians),
    )?;
    let text = toml::to_string(&file).map_err(|e| parse_err(path, e))?;
    write_atomic(path, text.as_bytes())
}

/// Reads a camera list, either a stand-alone `[[cameras]]` file or the
/// cameras of a scene manifest.
pub fn load_cameras(path: &Path) -> IoResult<Vec<Camera>> {
    let text = String::from_utf8(read_file(path)?).map_err(|e| parse_err(path, e))?;
    if let Ok(scene) = toml::from_str::<SceneFile>(&text) {
        return cameras_from(path, &scene.cameras);
    }
    let file: CameraFile = toml::from_str(&text).map_err(|e| parse_err(path, e))?;
    if let Some(v) = file.format_version {
        if v != FORMAT_VERSION {
            return Err(IoError::VersionMismatch {
                path: path.to_path_buf(),
                found: v,
                expected: FORMAT_VERSION,
            });
        }
    }
    cameras_from(path, &file.cameras)
}

pub fn save_cameras(cameras: &[Camera], path: &Path) -> IoResult<()> {
    let file = CameraFile {
        format_version: Some(FORMAT_VERSION),
        cameras: cameras.iter().map(CameraEntry::from_camera).collect(),
    };
    let text = toml::to_string(&file).map_err(|e| parse_err(path, e))?;
    write_atomic(path, text.as_bytes())
}
