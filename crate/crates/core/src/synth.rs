//! Procedural scenes: random desk-scale scenes for verification, and a
//! fuzzy head (textured ellipsoid cap with strand-like Gaussians) for
//! fitting and benchmarks.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::core::{build_sampling_mask, texel_anchor, Camera, Gaussian, Mesh, Scene, Texture};
use crate::error::Result;

/// Size of a random verification scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomSceneSpec {
    /// Vertex grid side; the mesh has `2 (grid - 1)^2` triangles.
    pub grid: usize,
    pub gaussians: usize,
    pub image: usize,
    pub texture: usize,
}

fn random_unit_quat(rng: &mut ChaCha8Rng) -> [f32; 4] {
    let q: [f64; 4] = [0; 4].map(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    q.map(|v| (v / n) as f32)
}

/// Height-field mesh around depth 50 mm in front of a slightly jittered
/// camera, with random textures and Gaussians scattered on both sides of it.
pub fn random_scene(seed: u64, spec: RandomSceneSpec) -> (Scene, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.grid.max(2);
    let half = 20.0 + rng.random_range(0.0..6.0);
    let spacing = 2.0 * half / (k - 1) as f64;
    let (fx, fy, phase) = (
        rng.random_range(0.05..0.2),
        rng.random_range(0.05..0.2),
        rng.random_range(0.0..6.0),
    );
    let amp = rng.random_range(0.0..8.0);
    let vertices = (0..k * k)
        .map(|i| {
            let x = (i % k) as f64 * spacing - half;
            let y = (i / k) as f64 * spacing - half;
            let z = 50.0 + amp * (fx * x + phase).sin() * (fy * y).cos() + rng.random_range(-1.5..1.5);
            [x as f32, y as f32, z as f32]
        })
        .collect();
    let t = spec.texture.max(1);
    let color = Texture::new(t, 3, (0..t * t * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let opacity = Texture::new(
        t,
        1,
        (0..t * t)
            .map(|_| {
                if rng.random_bool(0.3) {
                    1.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect(),
    )
    .unwrap();
    let mesh = Mesh::new(k, vertices, Mesh::grid_topology(k), color, opacity).unwrap();
    let gaussians = (0..spec.gaussians)
        .map(|_| {
            let anchor = rng.random_range(0..k * k) as u32;
            let offset = [
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-8.0..8.0),
            ];
            let mut g = Gaussian::new(
                anchor,
                offset,
                random_unit_quat(&mut rng),
                [0; 3].map(|_| rng.random_range(0.4f32..3.0)),
                rng.random_range(0.05..0.95),
                [0; 3].map(|_| rng.random_range(0.0..1.0)),
            );
            // stored quaternion slightly off unit norm, as after an optimizer step
            let s = rng.random_range(0.9f32..1.1);
            g.rotation = g.rotation.map(|v| v * s);
            g
        })
        .collect();
    let background = [0; 3].map(|_| rng.random_range(0.0..1.0));
    let scene = Scene::new(mesh, gaussians, background).unwrap();
    let eye = Vector3::new(
        rng.random_range(-4.0..4.0),
        rng.random_range(-4.0..4.0),
        rng.random_range(-4.0..0.0),
    );
    let target = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 50.0);
    let f = spec.image as f64 * rng.random_range(0.9..1.2);
    let cam = Camera::look_at(
        eye,
        target,
        Vector3::new(0.0, -1.0, 0.0),
        f,
        (spec.image, spec.image),
        1.0,
    )
    .unwrap();
    (scene, cam)
}

/// Per-pixel random weights in `[-1, 1]`, for linear test losses.
pub fn random_weights(seed: u64, pixels: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pixels)
        .map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0)))
        .collect()
}

const HEAD_RADII: [f64; 3] = [75.0, 95.0, 85.0];
/// UV rows above this are hair.
pub const HAIR_LINE: f64 = 0.35;

fn head_angles(u: f64, v: f64) -> (f64, f64) {
    ((u - 0.5) * 0.9 * PI, (0.5 - v) * 0.85 * PI + 0.05 * PI)
}

fn head_point(u: f64, v: f64) -> Vector3<f64> {
    let (phi, theta) = head_angles(u, v);
    let [a, b, c] = HEAD_RADII;
    Vector3::new(
        a * theta.cos() * phi.sin(),
        b * theta.sin(),
        c * theta.cos() * phi.cos(),
    )
}

fn head_normal(p: &Vector3<f64>) -> Vector3<f64> {
    let [a, b, c] = HEAD_RADII;
    Vector3::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)).normalize()
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Skin with eyes, brows, and mouth below the hair line; streaked dark hair
/// above it.
pub fn head_color(u: f64, v: f64) -> [f64; 3] {
    let hair = smoothstep(HAIR_LINE + 0.02, HAIR_LINE - 0.02, v);
    let streak = 0.5 + 0.5 * (u * 90.0 + (v * 13.0).sin() * 2.0).sin();
    let hair_c = [0.22 + 0.12 * streak, 0.13 + 0.07 * streak, 0.07 + 0.03 * streak];
    let mut skin = [
        0.86 + 0.04 * (u * 31.0).sin() * (v * 27.0).sin(),
        0.64 + 0.03 * (u * 23.0).cos(),
        0.53 + 0.03 * (v * 19.0).sin(),
    ];
    let blob = |cu: f64, cv: f64, ru: f64, rv: f64| {
        let d = ((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2);
        smoothstep(1.0, 0.6, d)
    };
    let eyes = blob(0.42, 0.5, 0.035, 0.02).max(blob(0.58, 0.5, 0.035, 0.02));
    let brows = blob(0.42, 0.45, 0.05, 0.01).max(blob(0.58, 0.45, 0.05, 0.01));
    let mouth = blob(0.5, 0.7, 0.07, 0.018);
    for c in 0..3 {
        skin[c] = skin[c] * (1.0 - eyes) + [0.1, 0.08, 0.07][c] * eyes;
        skin[c] = skin[c] * (1.0 - brows) + [0.25, 0.16, 0.1][c] * brows;
        skin[c] = skin[c] * (1.0 - mouth) + [0.7, 0.3, 0.3][c] * mouth;
    }
    [0, 1, 2].map(|c| hair * hair_c[c] + (1.0 - hair) * skin[c])
}

/// Opaque skin; the hair cap is semi-transparent so Gaussians behind the
/// surface show through.
pub fn head_opacity(u: f64, v: f64) -> f64 {
    let hair = smoothstep(HAIR_LINE + 0.02, HAIR_LINE - 0.02, v);
    let streak = 0.5 + 0.5 * (u * 70.0).sin();
    1.0 - hair * (0.35 + 0.25 * streak)
}

/// Hair-region flag per texel of a `resolution x resolution` UV map.
pub fn hair_priority(resolution: usize) -> Vec<bool> {
    (0..resolution * resolution)
        .map(|i| ((i / resolution) as f64 + 0.5) / (resolution as f64) < HAIR_LINE)
        .collect()
}

/// The head cap on a `grid x grid` UV lattice with procedural textures.
pub fn head_mesh(grid: usize, texture_size: usize) -> Mesh {
    let k = grid as f64;
    let vertices = (0..grid * grid)
        .map(|i| {
            let p = head_point(((i % grid) as f64 + 0.5) / k, ((i / grid) as f64 + 0.5) / k);
            [p.x as f32, p.y as f32, p.z as f32]
        })
        .collect();
    let t = texture_size as f64;
    let uv = |i: usize| {
        (
            ((i % texture_size) as f64 + 0.5) / t,
            ((i / texture_size) as f64 + 0.5) / t,
        )
    };
    let n = texture_size * texture_size;
    let color = (0..n)
        .flat_map(|i| {
            let (u, v) = uv(i);
            head_color(u, v).map(|c| c as f32)
        })
        .collect();
    let opacity = (0..n)
        .map(|i| {
            let (u, v) = uv(i);
            head_opacity(u, v) as f32
        })
        .collect();
    Mesh::new(
        grid,
        vertices,
        Mesh::grid_topology(grid),
        Texture::new(texture_size, 3, color).unwrap(),
        Texture::new(texture_size, 1, opacity).unwrap(),
    )
    .unwrap()
}

/// Surface-attached Gaussians at the texels of a sampling mask: the hair
/// fraction gets elongated strands lifted off the surface, the rest small
/// flat splats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FuzzSpec {
    pub count: usize,
    pub priority_fraction: f64,
    /// UV resolution of the sampling mask.
    pub mask_resolution: usize,
    pub seed: u64,
    /// Range of the lift along the surface normal, mm.
    pub lift: (f64, f64),
}

impl Default for FuzzSpec {
    fn default() -> Self {
        Self {
            count: 2000,
            priority_fraction: 0.75,
            mask_resolution: 128,
            seed: 7,
            lift: (0.5, 5.0),
        }
    }
}

pub fn fuzz_gaussians(mesh: &Mesh, spec: &FuzzSpec) -> Result<Vec<Gaussian>> {
    let res = spec.mask_resolution;
    let priority = hair_priority(res);
    let mask = build_sampling_mask(&priority, res, spec.count, spec.priority_fraction, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9);
    Ok(mask
        .selected
        .iter()
        .map(|&texel| {
            let (anchor, offset) = texel_anchor(mesh, texel as usize, res);
            let surface = mesh.vertex(anchor as usize) + Vector3::from_fn(|i, _| offset[i] as f64);
            let normal = head_normal(&surface);
            let tangent = normal
                .cross(&Vector3::new(
                    rng.random_range(-1.0..1.0),
                    1.0,
                    rng.random_range(-1.0..1.0),
                ))
                .normalize();
            let hair = priority[texel as usize];
            let lift = if hair {
                rng.random_range(spec.lift.0..spec.lift.1)
            } else {
                rng.random_range(0.2..1.0)
            };
            let off = Vector3::from_fn(|i, _| offset[i] as f64) + normal * lift;
            // long axis (local x) along the tangent, flat axis (local z) along the normal
            let frame = nalgebra::Matrix3::from_columns(&[tangent, normal.cross(&tangent), normal]);
            let q = UnitQuaternion::from_matrix(&frame);
            let (scale, color, opacity) = if hair {
                let shade = rng.random_range(0.6..1.3);
                (
                    [rng.random_range(2.0..4.0), rng.random_range(0.3..0.6), 0.3],
                    [0.3 * shade, 0.18 * shade, 0.09 * shade],
                    rng.random_range(0.4..0.9),
                )
            } else {
                let (u, v) = (
                    ((texel as usize % res) as f64 + 0.5) / res as f64,
                    ((texel as usize / res) as f64 + 0.5) / res as f64,
                );
                let base = head_color(u, v);
                (
                    [rng.random_range(0.8..1.6), rng.random_range(0.8..1.6), 0.3],
                    base.map(|c| (c * rng.random_range(0.8..1.1)).min(1.0)),
                    rng.random_range(0.2..0.6),
                )
            };
            Gaussian::new(
                anchor,
                [off.x as f32, off.y as f32, off.z as f32],
                [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
                scale.map(|s: f64| s as f32),
                opacity as f32,
                color.map(|c| c as f32),
            )
        })
        .collect())
}

/// Head scene description.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadSpec {
    pub grid: usize,
    pub texture_size: usize,
    pub fuzz: FuzzSpec,
    pub background: [f64; 3],
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            grid: 32,
            texture_size: 128,
            fuzz: FuzzSpec::default(),
            background: [0.0; 3],
        }
    }
}

pub fn fuzzy_head(spec: &HeadSpec) -> Result<Scene> {
    let mesh = head_mesh(spec.grid, spec.texture_size);
    let gaussians = fuzz_gaussians(&mesh, &spec.fuzz)?;
    Scene::new(mesh, gaussians, spec.background)
}

/// `count` cameras on an arc around the head, 400 mm out, alternating a
/// little above and below, all aimed at the head center.
pub fn orbit_cameras(count: usize, size: usize) -> Vec<Camera> {
    let target = Vector3::new(0.0, 10.0, 20.0);
    (0..count)
        .map(|i| {
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
            let yaw = (t - 0.5) * 70.0f64.to_radians();
            let pitch = if i % 2 == 0 { 8.0f64 } else { -6.0 }.to_radians();
            let eye = target + Vector3::new(yaw.sin() * pitch.cos(), pitch.sin(), yaw.cos() * pitch.cos()) * 400.0;
            Camera::look_at(
                eye,
                target,
                Vector3::new(0.0, 1.0, 0.0),
                1.8 * size as f64,
                (size, size),
                10.0,
            )
            .unwrap()
        })
        .collect()
}
