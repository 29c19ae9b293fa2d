//! Reference projector: composite Simpson quadrature of the line integral
//! along every detector ray. Slow and independent of the splatting path;
//! used to verify the rasterizer and to simulate measurements.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{LaminographyGeometry, ViewTransform};
use crate::types::{Aabb, GaussianScene, Image, Volume};

pub const DEFAULT_SAMPLES: usize = 512;

/// Parametric interval `[t_near, t_far]` where the ray is inside `bounds`.
pub fn ray_box_interval(origin: &Vector3<f64>, dir: &Vector3<f64>, bounds: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a] < bounds.min[a] || origin[a] > bounds.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let mut ta = (bounds.min[a] - origin[a]) * inv;
        let mut tb = (bounds.max[a] - origin[a]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    let t0 = t0.max(0.0);
    (t1 > t0).then_some((t0, t1))
}

/// Composite Simpson's rule with `intervals` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = (intervals.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for k in 1..n {
        let v = f(a + k as f64 * h);
        if k % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even)
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 64 {
        return Err(Error::invalid("samples_per_ray", format!("{samples} < 64")));
    }
    Ok(())
}

fn project_field(
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    bounds: &Aabb,
    samples: usize,
    field: impl Fn(&Vector3<f64>) -> f64 + Sync,
) -> Image {
    let det = geom.detector;
    let src = view.source_position();
    let data: Vec<f64> = (0..det.nu * det.nv)
        .into_par_iter()
        .map(|idx| {
            let u = idx % det.nu;
            let v = idx / det.nu;
            let dir = view.ray_direction(geom, u as f64 + 0.5, v as f64 + 0.5);
            match ray_box_interval(&src, &dir, bounds) {
                Some((t0, t1)) => simpson(|t| field(&(src + dir * t)), t0, t1, samples),
                None => 0.0,
            }
        })
        .collect();
    Image {
        width: det.nu,
        height: det.nv,
        data,
    }
}

/// Line integrals of the analytic Gaussian field for one view. The
/// integration interval is the scene box grown by four times the largest
/// Gaussian scale.
pub fn raymarch_project(
    scene: &GaussianScene,
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    samples_per_ray: usize,
) -> Result<Image> {
    check_samples(samples_per_ray)?;
    let det = geom.detector;
    if scene.is_empty() {
        return Ok(Image::zeros(det.nu, det.nv));
    }
    let gs: Vec<_> = scene.iter_activated().collect();
    let max_scale = gs.iter().map(|g| g.max_scale()).fold(0.0, f64::max);
    let bounds = scene.bounds().expanded(4.0 * max_scale);
    Ok(project_field(view, geom, &bounds, samples_per_ray, |x| {
        gs.iter().map(|g| g.density_at(x)).sum()
    }))
}

/// Line integrals of a trilinearly interpolated voxel field for one view.
pub fn raymarch_project_volume(
    vol: &Volume,
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    samples_per_ray: usize,
) -> Result<Image> {
    check_samples(samples_per_ray)?;
    let g = &vol.grid;
    let mut max = [0.0; 3];
    for a in 0..3 {
        max[a] = g.origin[a] + (g.dims[a] as f64 - 1.0) * g.voxel_size;
    }
    let bounds = Aabb::new(g.origin, max);
    Ok(project_field(view, geom, &bounds, samples_per_ray, |x| vol.sample_trilinear(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Detector;
    use crate::types::GridSpec;

    fn geom(tilt: f64, n: usize, pixel: f64) -> LaminographyGeometry {
        LaminographyGeometry::new(tilt, 7.0, 14.0, Detector { nu: n, nv: n, pixel_size: pixel }).unwrap()
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 4);
        assert!((v - (15.0 / 4.0 - 3.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_projects_to_zero() {
        let g = geom(0.5, 16, 0.1);
        let img = raymarch_project(&GaussianScene::empty(Aabb::centered_cube(1.0)), &g.view(0.0), &g, 128).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isotropic_center_ray_closed_form() {
        // Odd detector: the middle pixel's center is the optical axis.
        let g = geom(0.5, 17, 0.05);
        let mut scene = GaussianScene::empty(Aabb::centered_cube(1.0));
        let (rho, s) = (1.4, 0.07);
        scene.push_activated(rho, Vector3::zeros(), [1.0, 0.0, 0.0, 0.0], Vector3::repeat(s));
        let img = raymarch_project(&scene, &g.view(0.4), &g, 1024).unwrap();
        let want = rho * s * (2.0 * std::f64::consts::PI).sqrt();
        let center = img.get(8, 8);
        assert!(((center - want) / want).abs() < 1e-6, "{center} vs {want}");
    }

    #[test]
    fn doubling_samples_converges() {
        let g = geom(0.5, 12, 0.1);
        let mut scene = GaussianScene::empty(Aabb::centered_cube(1.0));
        scene.push_activated(1.0, Vector3::new(0.1, 0.0, -0.1), [0.9, 0.2, 0.1, 0.0], Vector3::new(0.08, 0.12, 0.05));
        let a = raymarch_project(&scene, &g.view(1.0), &g, 512).unwrap();
        let b = raymarch_project(&scene, &g.view(1.0), &g, 1024).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_too_few_samples() {
        let g = geom(0.5, 8, 0.1);
        let scene = GaussianScene::empty(Aabb::centered_cube(1.0));
        assert!(raymarch_project(&scene, &g.view(0.0), &g, 32).is_err());
    }

    #[test]
    fn unit_cube_chord_at_zero_tilt() {
        // Parallel-ish geometry so the central ray crosses the cube face-on.
        let g = geom(0.0, 16, 0.05);
        let grid = GridSpec::centered(32, 1.0);
        let side = 0.5;
        let vol = Volume::from_fn(grid, |x| if x.abs().max() <= 0.5 * side { 1.0 } else { 0.0 }).unwrap();
        let view = g.view(0.0);
        let src = view.source_position();
        let dir = view.ray_direction(&g, 8.0, 8.0);
        let b = vol.grid.bounds();
        let (t0, t1) = ray_box_interval(&src, &dir, &b).unwrap();
        let chord = simpson(|t| vol.sample_trilinear(&(src + dir * t)), t0, t1, 512);
        assert!((chord - side).abs() < 2.0 * grid.voxel_size, "{chord}");
        let zero = Volume::zeros(grid).unwrap();
        let img = raymarch_project_volume(&zero, &view, &g, 128).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn volume_projection_is_linear() {
        let g = geom(0.5, 12, 0.12);
        let grid = GridSpec::centered(10, 1.0);
        let a = Volume::from_fn(grid, |x| (3.0 * x.x).sin() + 1.0).unwrap();
        let b = Volume::from_fn(grid, |x| x.y * x.z).unwrap();
        let sum = Volume::from_data(grid, a.data.iter().zip(&b.data).map(|(p, q)| p + q).collect()).unwrap();
        let view = g.view(0.8);
        let pa = raymarch_project_volume(&a, &view, &g, 128).unwrap();
        let pb = raymarch_project_volume(&b, &view, &g, 128).unwrap();
        let ps = raymarch_project_volume(&sum, &view, &g, 128).unwrap();
        for k in 0..ps.data.len() {
            assert!((ps.data[k] - pa.data[k] - pb.data[k]).abs() < 1e-10);
        }
    }
}
