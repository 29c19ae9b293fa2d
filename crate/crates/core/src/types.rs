//! Shared data model: radiative Gaussians, scenes, voxel volumes, detector
//! images and projection stacks.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LaminographyGeometry;

/// Ratio between the scale floor and the scene extent.
pub const SCALE_FLOOR_FRACTION: f64 = 1e-4;

/// Axis-aligned box in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// Cube of side `side` centered on the origin.
    pub fn centered_cube(side: f64) -> Self {
        let h = 0.5 * side;
        Self::new([-h; 3], [h; 3])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn size(&self) -> Vector3<f64> {
        Vector3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    /// Longest side length.
    pub fn extent(&self) -> f64 {
        self.size().max()
    }

    pub fn diagonal(&self) -> f64 {
        self.size().norm()
    }

    /// Box scaled about its center by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let h = 0.5 * factor * self.size();
        Self::new(
            [c.x - h.x, c.y - h.y, c.z - h.z],
            [c.x + h.x, c.y + h.y, c.z + h.z],
        )
    }

    /// Box grown by `margin` on every side.
    pub fn expanded(&self, margin: f64) -> Self {
        Self::new(
            [self.min[0] - margin, self.min[1] - margin, self.min[2] - margin],
            [self.max[0] + margin, self.max[1] + margin, self.max[2] + margin],
        )
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            p.x.clamp(self.min[0], self.max[0]),
            p.y.clamp(self.min[1], self.max[1]),
            p.z.clamp(self.min[2], self.max[2]),
        )
    }
}

/// Unit-normalizes a `(w, x, y, z)` quaternion. A zero quaternion maps to
/// the identity.
pub fn normalize_quaternion(q: [f64; 4]) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == 0.0 || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a `(w, x, y, z)` quaternion (normalized first).
pub fn quaternion_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = normalize_quaternion(q);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// One learnable primitive in its stored (unconstrained) parameterization.
///
/// Density and scales are kept as raw reals and mapped through `exp`; the
/// rotation is a quaternion that may drift off unit norm between optimizer
/// steps and is normalized whenever it is read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiativeGaussian {
    pub raw_density: f64,
    pub position: Vector3<f64>,
    /// `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub raw_scale: Vector3<f64>,
}

impl RadiativeGaussian {
    /// Builds a Gaussian from activated values. Scales at or below the floor
    /// are pushed to just above it.
    pub fn from_activated(
        density: f64,
        position: Vector3<f64>,
        rotation: [f64; 4],
        scales: Vector3<f64>,
        scale_floor: f64,
    ) -> Self {
        let raw = |s: f64| {
            let excess = (s - scale_floor).max(1e-3 * scale_floor.max(f64::MIN_POSITIVE));
            excess.ln()
        };
        Self {
            raw_density: density.max(f64::MIN_POSITIVE).ln(),
            position,
            rotation: normalize_quaternion(rotation),
            raw_scale: Vector3::new(raw(scales.x), raw(scales.y), raw(scales.z)),
        }
    }

    pub fn density(&self) -> f64 {
        self.raw_density.exp()
    }

    pub fn scales(&self, scale_floor: f64) -> Vector3<f64> {
        self.raw_scale.map(|r| scale_floor + r.exp())
    }

    pub fn activate(&self, scale_floor: f64) -> ActivatedGaussian {
        ActivatedGaussian::new(
            self.density(),
            self.position,
            quaternion_to_matrix(self.rotation),
            self.scales(scale_floor),
        )
    }
}

/// A Gaussian with its activations applied and covariance factors derived.
#[derive(Clone, Copy, Debug)]
pub struct ActivatedGaussian {
    pub density: f64,
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub scales: Vector3<f64>,
}

impl ActivatedGaussian {
    pub fn new(
        density: f64,
        position: Vector3<f64>,
        rotation: Matrix3<f64>,
        scales: Vector3<f64>,
    ) -> Self {
        Self {
            density,
            position,
            rotation,
            scales,
        }
    }

    /// `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let s2 = Matrix3::from_diagonal(&self.scales.component_mul(&self.scales));
        let sigma = self.rotation * s2 * self.rotation.transpose();
        0.5 * (sigma + sigma.transpose())
    }

    /// `R S⁻² Rᵀ`, built from the factors rather than by inversion.
    pub fn inverse_covariance(&self) -> Matrix3<f64> {
        let inv = Matrix3::from_diagonal(&self.scales.map(|s| 1.0 / (s * s)));
        self.rotation * inv * self.rotation.transpose()
    }

    pub fn max_scale(&self) -> f64 {
        self.scales.max()
    }

    /// Kernel value `ρ exp(-½ dᵀ Σ⁻¹ d)`.
    pub fn density_at(&self, x: &Vector3<f64>) -> f64 {
        // Mahalanobis distance in the principal frame avoids forming Σ⁻¹.
        let local = self.rotation.transpose() * (x - self.position);
        let m = (local.x / self.scales.x).powi(2)
            + (local.y / self.scales.y).powi(2)
            + (local.z / self.scales.z).powi(2);
        self.density * (-0.5 * m).exp()
    }

    /// `∫ G dx = ρ (2π)^{3/2} s₁ s₂ s₃`.
    pub fn total_mass(&self) -> f64 {
        self.density * (2.0 * std::f64::consts::PI).powf(1.5) * self.scales.product()
    }
}

/// The full set of primitives plus the box they live in.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<RadiativeGaussian>,
    bounds: Aabb,
    scale_floor: f64,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<RadiativeGaussian>, bounds: Aabb) -> Self {
        let scale_floor = SCALE_FLOOR_FRACTION * bounds.extent();
        Self {
            gaussians,
            bounds,
            scale_floor,
        }
    }

    pub fn empty(bounds: Aabb) -> Self {
        Self::new(Vec::new(), bounds)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn extent(&self) -> f64 {
        self.bounds.extent()
    }

    pub fn scale_floor(&self) -> f64 {
        self.scale_floor
    }

    pub fn activated(&self, i: usize) -> ActivatedGaussian {
        self.gaussians[i].activate(self.scale_floor)
    }

    pub fn iter_activated(&self) -> impl Iterator<Item = ActivatedGaussian> + '_ {
        self.gaussians.iter().map(|g| g.activate(self.scale_floor))
    }

    /// Adds a Gaussian given in activated form.
    pub fn push_activated(
        &mut self,
        density: f64,
        position: Vector3<f64>,
        rotation: [f64; 4],
        scales: Vector3<f64>,
    ) {
        let g = RadiativeGaussian::from_activated(
            density,
            position,
            rotation,
            scales,
            self.scale_floor,
        );
        self.gaussians.push(g);
    }

    /// Field value `σ(x) = Σᵢ Gᵢ(x)`.
    pub fn density_at(&self, x: &Vector3<f64>) -> f64 {
        self.iter_activated().map(|g| g.density_at(x)).sum()
    }

    /// Samples the field at every voxel center of `grid`.
    ///
    /// Each Gaussian is evaluated inside a box of six times its largest
    /// scale; dropped contributions are below `ρ e^{-18}`.
    pub fn rasterize(&self, grid: &GridSpec) -> Result<Volume> {
        grid.validate()?;
        let n = grid.voxel_count()?;
        let [nx, ny, nz] = grid.dims;
        let boxes: Vec<(ActivatedGaussian, [usize; 6])> = self
            .iter_activated()
            .filter_map(|g| {
                let r = 6.0 * g.max_scale();
                let lo = g.position.add_scalar(-r);
                let hi = g.position.add_scalar(r);
                let (i0, i1) = grid.index_range(0, lo.x, hi.x)?;
                let (j0, j1) = grid.index_range(1, lo.y, hi.y)?;
                let (k0, k1) = grid.index_range(2, lo.z, hi.z)?;
                Some((g, [i0, i1, j0, j1, k0, k1]))
            })
            .collect();
        let mut data = vec![0.0; n];
        data.par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(k, slice)| {
                for (g, b) in &boxes {
                    if k < b[4] || k > b[5] {
                        continue;
                    }
                    for j in b[2]..=b[3] {
                        for i in b[0]..=b[1] {
                            let x = grid.voxel_center(i, j, k);
                            slice[j * nx + i] += g.density_at(&x);
                        }
                    }
                }
            });
        debug_assert_eq!(data.len(), nx * ny * nz);
        Volume::from_data(*grid, data)
    }
}

/// Dense voxel grid layout: `x` fastest, then `y`, then `z`; voxel `(i,j,k)`
/// is centered at `origin + (i, j, k) * voxel_size`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
}

impl GridSpec {
    /// Cubic grid of `n³` voxels filling the cube of side `side` centered at
    /// the origin.
    pub fn centered(n: usize, side: f64) -> Self {
        Self::centered_dims([n; 3], side / n as f64)
    }

    pub fn centered_dims(dims: [usize; 3], voxel_size: f64) -> Self {
        let origin = dims.map(|d| -0.5 * (d as f64 - 1.0) * voxel_size);
        Self {
            dims,
            voxel_size,
            origin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invalid("grid", format!("dims {:?} must be positive", self.dims)));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::invalid(
                "grid",
                format!("voxel size {} must be positive", self.voxel_size),
            ));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("grid", "origin must be finite"));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> Result<usize> {
        let n = self.dims[0]
            .checked_mul(self.dims[1])
            .and_then(|v| v.checked_mul(self.dims[2]))
            .ok_or(Error::GridOverflow { dims: self.dims })?;
        // Anything past 2^34 samples is not a desk-scale request.
        if n > (1usize << 34) {
            return Err(Error::GridOverflow { dims: self.dims });
        }
        Ok(n)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + i as f64 * self.voxel_size,
            self.origin[1] + j as f64 * self.voxel_size,
            self.origin[2] + k as f64 * self.voxel_size,
        )
    }

    /// Box spanned by the voxel cells (not just their centers).
    pub fn bounds(&self) -> Aabb {
        let h = 0.5 * self.voxel_size;
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            min[a] = self.origin[a] - h;
            max[a] = self.origin[a] + (self.dims[a] as f64 - 1.0) * self.voxel_size + h;
        }
        Aabb::new(min, max)
    }

    /// Continuous voxel coordinate of world position `x` along `axis`.
    pub fn to_index_space(&self, x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            (x.x - self.origin[0]) / self.voxel_size,
            (x.y - self.origin[1]) / self.voxel_size,
            (x.z - self.origin[2]) / self.voxel_size,
        )
    }

    /// Inclusive index range whose voxel centers fall in `[lo, hi]`.
    fn index_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let n = self.dims[axis] as f64;
        let a = ((lo - self.origin[axis]) / self.voxel_size).ceil().max(0.0);
        let b = ((hi - self.origin[axis]) / self.voxel_size).floor().min(n - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }
}

/// Scalar field sampled on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let n = grid.voxel_count()?;
        Ok(Self {
            grid,
            data: vec![0.0; n],
        })
    }

    pub fn from_data(grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        let n = grid.voxel_count()?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "volume data has {} values, grid {:?} needs {n}",
                data.len(),
                grid.dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("volume", "values must be finite"));
        }
        Ok(Self { grid, data })
    }

    /// Fills each voxel from a function of its center.
    pub fn from_fn(grid: GridSpec, f: impl Fn(Vector3<f64>) -> f64 + Sync) -> Result<Self> {
        grid.validate()?;
        let n = grid.voxel_count()?;
        let [nx, ny, _] = grid.dims;
        let data: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let i = idx % nx;
                let j = (idx / nx) % ny;
                let k = idx / (nx * ny);
                f(grid.voxel_center(i, j, k))
            })
            .collect();
        Self::from_data(grid, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.linear_index(i, j, k)]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Trilinear interpolation at world position `x`; zero outside the grid
    /// of voxel centers.
    pub fn sample_trilinear(&self, x: &Vector3<f64>) -> f64 {
        let g = self.grid.to_index_space(x);
        let [nx, ny, nz] = self.grid.dims;
        if !(g.x >= 0.0 && g.y >= 0.0 && g.z >= 0.0) {
            return 0.0;
        }
        if g.x > (nx - 1) as f64 || g.y > (ny - 1) as f64 || g.z > (nz - 1) as f64 {
            return 0.0;
        }
        let i0 = (g.x.floor() as usize).min(nx.saturating_sub(2));
        let j0 = (g.y.floor() as usize).min(ny.saturating_sub(2));
        let k0 = (g.z.floor() as usize).min(nz.saturating_sub(2));
        let fx = g.x - i0 as f64;
        let fy = g.y - j0 as f64;
        let fz = g.z - k0 as f64;
        let i1 = (i0 + 1).min(nx - 1);
        let j1 = (j0 + 1).min(ny - 1);
        let k1 = (k0 + 1).min(nz - 1);
        let c00 = self.get(i0, j0, k0) * (1.0 - fx) + self.get(i1, j0, k0) * fx;
        let c10 = self.get(i0, j1, k0) * (1.0 - fx) + self.get(i1, j1, k0) * fx;
        let c01 = self.get(i0, j0, k1) * (1.0 - fx) + self.get(i1, j0, k1) * fx;
        let c11 = self.get(i0, j1, k1) * (1.0 - fx) + self.get(i1, j1, k1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// One z-slice as an image (`x` along columns).
    pub fn slice(&self, axis: Axis, index: usize) -> Image {
        let [nx, ny, nz] = self.grid.dims;
        match axis {
            Axis::Z => Image::from_fn(nx, ny, |u, v| self.get(u, v, index)),
            Axis::Y => Image::from_fn(nx, nz, |u, v| self.get(u, index, v)),
            Axis::X => Image::from_fn(ny, nz, |u, v| self.get(index, u, v)),
        }
    }

    pub fn slice_count(&self, axis: Axis) -> usize {
        self.grid.dims[axis as usize]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X = 0,
    Y = 1,
    #[default]
    Z = 2,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::invalid("axis", format!("expected x, y or z, got {other:?}"))),
        }
    }
}

/// Row-major 2D scalar grid: `width` columns (`u`), `height` rows (`v`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Bilinear sample at continuous pixel coordinates where pixel `(u, v)`
    /// has its center at `(u + 0.5, v + 0.5)`. Zero outside the detector.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let gx = x - 0.5;
        let gy = y - 0.5;
        if !(gx > -1.0 && gy > -1.0 && gx < self.width as f64 && gy < self.height as f64) {
            return 0.0;
        }
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let at = |u: isize, v: isize| -> f64 {
            if u < 0 || v < 0 || u >= self.width as isize || v >= self.height as isize {
                0.0
            } else {
                self.data[v as usize * self.width + u as usize]
            }
        };
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Log-domain projections (line integrals) with their acquisition geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionStack {
    pub geometry: LaminographyGeometry,
    pub angles: Vec<f64>,
    pub images: Vec<Image>,
}

impl ProjectionStack {
    pub fn new(geometry: LaminographyGeometry, angles: Vec<f64>, images: Vec<Image>) -> Result<Self> {
        let stack = Self {
            geometry,
            angles,
            images,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.angles.len() {
            return Err(Error::Shape(format!(
                "{} images but {} angles",
                self.images.len(),
                self.angles.len()
            )));
        }
        let det = &self.geometry.detector;
        for (i, img) in self.images.iter().enumerate() {
            if img.width != det.nu || img.height != det.nv {
                return Err(Error::Shape(format!(
                    "image {i} is {}x{}, detector is {}x{}",
                    img.width, img.height, det.nu, det.nv
                )));
            }
            if img.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("projection", format!("image {i} has non-finite values")));
            }
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("projection", "angles must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `max - min` over every pixel of every view.
    pub fn dynamic_range(&self) -> f64 {
        let (lo, hi) = self
            .images
            .iter()
            .flat_map(|i| i.data.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }

    /// Keeps the views at `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            geometry: self.geometry,
            angles: indices.iter().map(|&i| self.angles[i]).collect(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }
}
