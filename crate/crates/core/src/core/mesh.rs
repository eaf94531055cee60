use std::sync::Arc;

use crate::error::{check_len, Error, Result};

/// Square texture over UV space, `size x size` texels with 1 or 3 channels.
///
/// Texel `(i, j)` is centered at `uv = ((i + 0.5) / size, (j + 0.5) / size)`;
/// sampling is bilinear with clamp-to-edge addressing.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    size: usize,
    channels: usize,
    data: Vec<f32>,
}

/// The four texels touched by one bilinear lookup, with weights and the
/// weights' derivatives with respect to `u` and `v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearTaps {
    pub texels: [usize; 4],
    pub weights: [f64; 4],
    pub d_du: [f64; 4],
    pub d_dv: [f64; 4],
}

impl Texture {
    /// Values are clamped to `[0, 1]`.
    pub fn new(size: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if size == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::InvalidMesh(format!(
                "texture must be non-empty with 1 or 3 channels, got size {size}, {channels} channels"
            )));
        }
        check_len("texture data", size * size * channels, data.len())?;
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self { size, channels, data })
    }

    pub fn filled(size: usize, value: &[f32]) -> Result<Self> {
        let data = (0..size * size).flat_map(|_| value.iter().copied()).collect();
        Self::new(size, value.len(), data)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn texel_count(&self) -> usize {
        self.size * self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable texel storage; call [`Texture::clamp_unit`] after editing.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    pub fn taps(&self, uv: [f64; 2]) -> BilinearTaps {
        let s = self.size as f64;
        let last = self.size as i64 - 1;
        let x = uv[0] * s - 0.5;
        let y = uv[1] * s - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let ix0 = (x0 as i64).clamp(0, last) as usize;
        let ix1 = (x0 as i64 + 1).clamp(0, last) as usize;
        let iy0 = (y0 as i64).clamp(0, last) as usize;
        let iy1 = (y0 as i64 + 1).clamp(0, last) as usize;
        let n = self.size;
        BilinearTaps {
            texels: [iy0 * n + ix0, iy0 * n + ix1, iy1 * n + ix0, iy1 * n + ix1],
            weights: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
            d_du: [-(1.0 - fy) * s, (1.0 - fy) * s, -fy * s, fy * s],
            d_dv: [-(1.0 - fx) * s, -fx * s, (1.0 - fx) * s, fx * s],
        }
    }

    /// Bilinear sample of channel `c`.
    pub fn sample_channel(&self, taps: &BilinearTaps, c: usize) -> f64 {
        (0..4)
            .map(|k| taps.weights[k] * self.data[taps.texels[k] * self.channels + c] as f64)
            .sum()
    }

    pub fn texel(&self, index: usize, c: usize) -> f64 {
        self.data[index * self.channels + c] as f64
    }
}

/// Triangle mesh whose vertices live on a `K x K` UV grid.
///
/// Vertex `r * K + c` has UV `((c + 0.5) / K, (r + 0.5) / K)`. Topology is
/// fixed at construction; vertex positions and textures are free parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    grid: usize,
    /// World positions, mm, indexed by UV-grid location.
    pub vertices: Vec<[f32; 3]>,
    triangles: Arc<[[u32; 3]]>,
    ring_offsets: Arc<[u32]>,
    ring: Arc<[u32]>,
    /// RGB color texture.
    pub color: Texture,
    /// Single-channel opacity texture.
    pub opacity: Texture,
}

impl Mesh {
    pub fn new(
        grid: usize,
        vertices: Vec<[f32; 3]>,
        triangles: Vec<[u32; 3]>,
        color: Texture,
        opacity: Texture,
    ) -> Result<Self> {
        if grid == 0 {
            return Err(Error::InvalidMesh("grid resolution must be positive".into()));
        }
        check_len("mesh vertices", grid * grid, vertices.len())?;
        if color.channels() != 3 || opacity.channels() != 1 {
            return Err(Error::InvalidMesh(
                "color texture needs 3 channels, opacity texture 1".into(),
            ));
        }
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidMesh(format!("triangle {t:?} indexes past {n} vertices")));
        }
        let (ring_offsets, ring) = one_rings(n, &triangles);
        Ok(Self {
            grid,
            vertices,
            triangles: triangles.into(),
            ring_offsets: ring_offsets.into(),
            ring: ring.into(),
            color,
            opacity,
        })
    }

    /// Two triangles per grid cell, consistently wound.
    pub fn grid_topology(grid: usize) -> Vec<[u32; 3]> {
        let mut tris = Vec::with_capacity(2 * grid.saturating_sub(1).pow(2));
        for r in 0..grid.saturating_sub(1) {
            for c in 0..grid - 1 {
                let i00 = (r * grid + c) as u32;
                let i01 = i00 + 1;
                let i10 = i00 + grid as u32;
                let i11 = i10 + 1;
                tris.push([i00, i10, i01]);
                tris.push([i01, i10, i11]);
            }
        }
        tris
    }

    /// Planar grid at camera-facing depth `z`, centered on the z axis.
    pub fn flat_grid(
        grid: usize,
        spacing: f32,
        z: f32,
        texture_size: usize,
        color: [f32; 3],
        opacity: f32,
    ) -> Result<Self> {
        let half = (grid as f32 - 1.0) * 0.5;
        let vertices = (0..grid * grid)
            .map(|i| {
                let (r, c) = ((i / grid) as f32, (i % grid) as f32);
                [(c - half) * spacing, (r - half) * spacing, z]
            })
            .collect();
        Self::new(
            grid,
            vertices,
            Self::grid_topology(grid),
            Texture::filled(texture_size, &color)?,
            Texture::filled(texture_size, &[opacity])?,
        )
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn vertex_uv(&self, index: usize) -> [f64; 2] {
        let k = self.grid as f64;
        [
            ((index % self.grid) as f64 + 0.5) / k,
            ((index / self.grid) as f64 + 0.5) / k,
        ]
    }

    pub fn vertex(&self, index: usize) -> nalgebra::Vector3<f64> {
        let v = self.vertices[index];
        nalgebra::Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
    }

    /// Distinct edge-connected neighbors of a vertex, ascending.
    pub fn one_ring(&self, index: usize) -> &[u32] {
        &self.ring[self.ring_offsets[index] as usize..self.ring_offsets[index + 1] as usize]
    }

    /// Same topology and textures, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<[f32; 3]>) -> Result<Self> {
        check_len("mesh vertices", self.vertices.len(), vertices.len())?;
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }
}

fn one_rings(n: usize, triangles: &[[u32; 3]]) -> (Vec<u32>, Vec<u32>) {
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if a != b {
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut ring = Vec::new();
    offsets.push(0);
    for mut list in adj {
        list.sort_unstable();
        list.dedup();
        ring.extend(list);
        offsets.push(ring.len() as u32);
    }
    (offsets, ring)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texel_center_hits_one_texel() {
        let tex = Texture::new(4, 1, (0..16).map(|v| v as f32 / 16.0).collect()).unwrap();
        let taps = tex.taps([2.5 / 4.0, 1.5 / 4.0]);
        assert_eq!(taps.weights[0], 1.0);
        assert_eq!(taps.texels[0], 4 + 2);
        assert_eq!(tex.sample_channel(&taps, 0), 6.0 / 16.0);
    }

    #[test]
    fn clamp_to_edge() {
        let tex = Texture::new(2, 1, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let taps = tex.taps([-0.3, 0.0]);
        assert!((tex.sample_channel(&taps, 0) - 0.2).abs() < 1e-7);
        let d: f64 = (0..4).map(|k| taps.d_du[k] * tex.texel(taps.texels[k], 0)).sum();
        assert_eq!(d, 0.0);
        let taps = tex.taps([1.2, 1.2]);
        assert!((tex.sample_channel(&taps, 0) - 0.8).abs() < 1e-7);
    }

    #[test]
    fn values_are_clamped() {
        let tex = Texture::new(1, 3, vec![-1.0, 0.5, 3.0]).unwrap();
        assert_eq!(tex.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_out_of_range_triangles() {
        let color = Texture::filled(2, &[0.5; 3]).unwrap();
        let opacity = Texture::filled(2, &[1.0]).unwrap();
        let err = Mesh::new(2, vec![[0.0; 3]; 4], vec![[0, 1, 4]], color, opacity);
        assert!(matches!(err, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn grid_rings() {
        let mesh = Mesh::flat_grid(3, 1.0, 10.0, 2, [0.5; 3], 1.0).unwrap();
        assert_eq!(mesh.triangles().len(), 8);
        // center vertex of a 3x3 grid touches 6 neighbors with this diagonal
        assert_eq!(mesh.one_ring(4).len(), 6);
        assert_eq!(mesh.one_ring(0), &[1, 3]);
        assert_eq!(mesh.vertex_uv(5), [2.5 / 3.0, 1.5 / 3.0]);
    }
}
