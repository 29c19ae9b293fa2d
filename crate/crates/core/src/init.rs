//! Artifact-filtering initialization: smooth the FDK volume, binarize it
//! with Otsu's threshold, and seed Gaussians inside the resulting mask.

use nalgebra::Vector3;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Aabb, GaussianScene, GridSpec, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfConfig {
    /// Gaussian smoothing width in voxels.
    pub smoothing_sigma: f64,
    /// Kernel half-width in multiples of `smoothing_sigma`.
    pub kernel_truncation: f64,
    pub otsu_bins: usize,
    pub num_points: usize,
    pub rng_seed: u64,
}

impl Default for AfConfig {
    fn default() -> Self {
        Self {
            smoothing_sigma: 2.0,
            kernel_truncation: 3.0,
            otsu_bins: 256,
            num_points: 30_000,
            rng_seed: 0,
        }
    }
}

impl AfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing_sigma > 0.0 && self.smoothing_sigma.is_finite()) {
            return Err(Error::invalid("smoothing_sigma", format!("{} is not positive", self.smoothing_sigma)));
        }
        if !(self.kernel_truncation > 0.0 && self.kernel_truncation.is_finite()) {
            return Err(Error::invalid(
                "kernel_truncation",
                format!("{} is not positive", self.kernel_truncation),
            ));
        }
        if self.otsu_bins < 16 {
            return Err(Error::invalid("otsu_bins", format!("{} < 16", self.otsu_bins)));
        }
        if self.num_points == 0 {
            return Err(Error::invalid("num_points", "must be at least 1"));
        }
        Ok(())
    }
}

/// Truncated, unit-sum 1D Gaussian kernel.
pub fn gaussian_kernel(sigma: f64, truncation: f64) -> Vec<f64> {
    let r = (truncation * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let [nx, ny, _] = dims;
    let r = (kernel.len() / 2) as i64;
    let stride = [1, nx, nx * ny][axis];
    let n = dims[axis] as i64;
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let idx = [i, j, k][axis] as i64;
                let base = i + j * nx + k * nx * ny;
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let s = idx + t as i64 - r;
                    if s >= 0 && s < n {
                        let off = (s - idx) * stride as i64;
                        acc += w * data[(base as i64 + off) as usize];
                    }
                }
                slab[i + j * nx] = acc;
            }
        }
    });
    out
}

/// Separable Gaussian blur with zero padding outside the grid.
pub fn smooth_volume(vol: &Volume, sigma: f64, truncation: f64) -> Result<Volume> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("smoothing_sigma", format!("{sigma} is not positive")));
    }
    let kernel = gaussian_kernel(sigma, truncation);
    let dims = vol.dims();
    let mut data = vol.data.clone();
    for axis in 0..3 {
        data = convolve_axis(&data, dims, axis, &kernel);
    }
    Volume::from_data(vol.grid, data)
}

/// Histogram of `values` over `[min, max]` in `bins` equal bins.
fn histogram(values: &[f64], bins: usize) -> Result<(Vec<u64>, f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return Err(Error::DegenerateHistogram {
            count: values.len(),
            value: lo,
        });
    }
    let width = (hi - lo) / bins as f64;
    let mut h = vec![0u64; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        h[b] += 1;
    }
    Ok((h, lo, width))
}

/// Between-class variance for splitting the histogram before bin `k`,
/// using bin indices as class values so all sums stay exact integers.
pub fn between_class_variance(n0: f64, s0: f64, n1: f64, s1: f64) -> f64 {
    if n0 == 0.0 || n1 == 0.0 {
        return 0.0;
    }
    let n = n0 + n1;
    let d = s0 / n0 - s1 / n1;
    (n0 / n) * (n1 / n) * d * d
}

/// Otsu threshold. The returned value is the lower edge of the first bin of
/// the upper class; ties go to the lowest such edge.
pub fn otsu_threshold(vol: &Volume, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid("otsu_bins", format!("{bins} < 2")));
    }
    let (h, lo, width) = histogram(&vol.data, bins)?;
    let total_n: f64 = h.iter().map(|&c| c as f64).sum();
    let total_s: f64 = h.iter().enumerate().map(|(b, &c)| b as f64 * c as f64).sum();
    let (mut n0, mut s0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 1);
    for k in 1..bins {
        n0 += h[k - 1] as f64;
        s0 += (k - 1) as f64 * h[k - 1] as f64;
        let var = between_class_variance(n0, s0, total_n - n0, total_s - s0);
        if var > best.0 {
            best = (var, k);
        }
    }
    Ok(lo + best.1 as f64 * width)
}

/// Boolean voxel mask sharing a grid with the volume it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub grid: GridSpec,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.data.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }
}

/// `smoothed >= threshold`.
pub fn build_mask(smoothed: &Volume, threshold: f64) -> Result<Mask> {
    if threshold.is_nan() {
        return Err(Error::invalid("threshold", "NaN"));
    }
    let data: Vec<bool> = smoothed.data.iter().map(|&v| v >= threshold).collect();
    if !data.iter().any(|&b| b) {
        return Err(Error::EmptyMask { threshold });
    }
    Ok(Mask {
        grid: smoothed.grid,
        data,
    })
}

/// Seed point with its initial density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedPoint {
    pub position: Vector3<f64>,
    pub density: f64,
}

fn density_floor(vol: &Volume) -> f64 {
    (1e-4 * vol.max()).max(f64::MIN_POSITIVE)
}

fn voxel_coords(grid: &GridSpec, linear: usize) -> (usize, usize, usize) {
    let [nx, ny, _] = grid.dims;
    (linear % nx, (linear / nx) % ny, linear / (nx * ny))
}

/// Draws `m` jittered voxel centers from the mask, distinct voxels first
/// and with replacement only once the mask is exhausted.
pub fn sample_init_points(fdk_vol: &Volume, mask: &Mask, m: usize, seed: u64) -> Result<Vec<SeedPoint>> {
    if fdk_vol.grid != mask.grid {
        return Err(Error::Shape("mask grid differs from volume grid".into()));
    }
    let cells = mask.indices();
    if cells.is_empty() {
        return Err(Error::EmptyMask { threshold: f64::NAN });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if cells.len() >= m {
        index::sample(&mut rng, cells.len(), m).into_iter().collect()
    } else {
        (0..m).map(|_| rng.random_range(0..cells.len())).collect()
    };
    let floor = density_floor(fdk_vol);
    let grid = &fdk_vol.grid;
    Ok(picks
        .into_iter()
        .map(|p| {
            let (i, j, k) = voxel_coords(grid, cells[p]);
            let jitter = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let position = grid.voxel_center(i, j, k) + jitter * grid.voxel_size;
            SeedPoint {
                position,
                density: fdk_vol.sample_trilinear(&position).max(floor),
            }
        })
        .collect())
}

/// Mean distance from each point to its `k` nearest neighbours, found
/// through a uniform cell grid.
pub fn mean_neighbor_distance(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    if n <= 1 || k == 0 {
        return vec![0.0; n];
    }
    let k = k.min(n - 1);
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = (hi - lo).max().max(1e-12);
    let per_axis = ((n as f64 / k as f64).cbrt().ceil() as usize).clamp(1, 256);
    let cell = span / per_axis as f64 * (1.0 + 1e-9);
    let cell_of = |p: &Vector3<f64>| {
        let c = (p - lo) / cell;
        [
            (c.x as usize).min(per_axis - 1),
            (c.y as usize).min(per_axis - 1),
            (c.z as usize).min(per_axis - 1),
        ]
    };
    let flat = |c: [usize; 3]| c[0] + per_axis * (c[1] + per_axis * c[2]);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); per_axis.pow(3)];
    for (i, p) in points.iter().enumerate() {
        buckets[flat(cell_of(p))].push(i);
    }
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let c = cell_of(p);
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let mut ring = 0usize;
            loop {
                let lo_c = c.map(|v| v.saturating_sub(ring));
                let hi_c = c.map(|v| (v + ring).min(per_axis - 1));
                for z in lo_c[2]..=hi_c[2] {
                    for y in lo_c[1]..=hi_c[1] {
                        for x in lo_c[0]..=hi_c[0] {
                            let on_shell = [x, y, z]
                                .iter()
                                .zip(&c)
                                .any(|(&a, &b)| a.abs_diff(b) == ring);
                            if !on_shell {
                                continue;
                            }
                            for &q in &buckets[flat([x, y, z])] {
                                if q == i {
                                    continue;
                                }
                                let d = (points[q] - p).norm();
                                let pos = best.partition_point(|&b| b <= d);
                                if pos < k {
                                    best.insert(pos, d);
                                    best.truncate(k);
                                }
                            }
                        }
                    }
                }
                // Anything beyond this shell is at least `ring * cell` away.
                let covered = ring as f64 * cell;
                let exhausted = ring >= per_axis;
                if (best.len() == k && best[k - 1] <= covered) || exhausted {
                    break;
                }
                ring += 1;
            }
            best.iter().sum::<f64>() / best.len().max(1) as f64
        })
        .collect()
}

fn scene_from_points(points: &[SeedPoint], bounds: &Aabb) -> GaussianScene {
    let mut scene = GaussianScene::empty(*bounds);
    let positions: Vec<_> = points.iter().map(|p| bounds.clamp(&p.position)).collect();
    let spacing = mean_neighbor_distance(&positions, 3);
    let s_min = scene.scale_floor();
    let s_max = 0.02 * bounds.extent();
    for ((p, pos), d) in points.iter().zip(&positions).zip(spacing) {
        let s = d.clamp(s_min, s_max);
        scene.push_activated(p.density, *pos, [1.0, 0.0, 0.0, 0.0], Vector3::repeat(s));
    }
    scene
}

/// Rescales every density by one factor so the rasterized field carries the
/// same total mass as the positive part of `target`. Returns the factor.
pub fn calibrate_mass(scene: &mut GaussianScene, target: &Volume) -> Result<f64> {
    let want: f64 = target.data.iter().map(|v| v.max(0.0)).sum();
    let have = scene.rasterize(&target.grid)?.sum();
    if !(want > 0.0 && have > 0.0 && want.is_finite() && have.is_finite()) {
        log::warn!("mass calibration skipped (target {want:.3e}, field {have:.3e})");
        return Ok(1.0);
    }
    let k = want / have;
    let shift = k.ln();
    for g in &mut scene.gaussians {
        g.raw_density += shift;
    }
    Ok(k)
}

/// Uniformly random seeds over `bounds`, all with density `mean(|V|)`.
pub fn uniform_scene(fdk_vol: &Volume, m: usize, seed: u64, bounds: &Aabb) -> Result<GaussianScene> {
    if m == 0 {
        return Err(Error::invalid("num_points", "must be at least 1"));
    }
    let density = (fdk_vol.data.iter().map(|v| v.abs()).sum::<f64>() / fdk_vol.len() as f64).max(density_floor(fdk_vol));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<SeedPoint> = (0..m)
        .map(|_| SeedPoint {
            position: Vector3::new(
                rng.random_range(bounds.min[0]..bounds.max[0]),
                rng.random_range(bounds.min[1]..bounds.max[1]),
                rng.random_range(bounds.min[2]..bounds.max[2]),
            ),
            density,
        })
        .collect();
    let mut scene = scene_from_points(&points, bounds);
    calibrate_mass(&mut scene, fdk_vol)?;
    Ok(scene)
}

/// Smooth, threshold, sample. Falls back to [`uniform_scene`] with a
/// warning when the histogram is flat or the mask comes out empty.
pub fn initialize_scene(fdk_vol: &Volume, cfg: &AfConfig, bounds: &Aabb) -> Result<GaussianScene> {
    cfg.validate()?;
    let seeded = smooth_volume(fdk_vol, cfg.smoothing_sigma, cfg.kernel_truncation).and_then(|smoothed| {
        let tau = otsu_threshold(&smoothed, cfg.otsu_bins)?;
        let mask = build_mask(&smoothed, tau)?;
        sample_init_points(fdk_vol, &mask, cfg.num_points, cfg.rng_seed)
    });
    match seeded {
        Ok(points) => {
            let mut scene = scene_from_points(&points, bounds);
            calibrate_mass(&mut scene, fdk_vol)?;
            Ok(scene)
        }
        Err(e @ (Error::DegenerateHistogram { .. } | Error::EmptyMask { .. })) => {
            log::warn!("artifact filtering unavailable ({e}); seeding uniformly");
            uniform_scene(fdk_vol, cfg.num_points, cfg.rng_seed, bounds)
        }
        Err(e) => Err(e),
    }
}
