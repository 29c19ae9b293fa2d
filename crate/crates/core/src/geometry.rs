//! Tilted-axis laminography viewing geometry.
//!
//! World frame: the sample rotates about world `z` by the view angle `θ`; the
//! tilt `α` inclines that axis out of the detector plane (`α = 0` is the
//! circular cone-beam CT special case). The world→camera rotation rows are
//!
//! ```text
//!   [ -sinθ         cosθ          0    ]
//!   [  cosθ sinα    sinθ sinα    -cosα ]
//!   [ -cosθ cosα   -sinθ cosα    -sinα ]
//! ```
//!
//! Camera `x`/`y` are the detector `u`/`v` axes and camera `z` points from
//! the source through the rotation center. The source sits on the optical
//! axis at distance `d_so` from the rotation center, so the camera-frame
//! translation is `(0, 0, d_so)` for every view.
//!
//! Detector pixel coordinates put pixel `(0, 0)` at the `(-u, -v)` corner;
//! pixel `(i, j)` covers `[i, i+1) × [j, j+1)` and its center is at
//! `(i + 0.5, j + 0.5)`. The detector center is `(nu/2, nv/2)`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Aabb;

/// Depth floor as a fraction of `d_so`.
pub const DEPTH_FLOOR_FRACTION: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub nu: usize,
    pub nv: usize,
    /// Pixel pitch in world units, measured on the detector plane.
    pub pixel_size: f64,
}

impl Detector {
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * self.nu as f64, 0.5 * self.nv as f64)
    }

    /// Physical detector coordinates of a continuous pixel position.
    pub fn pixel_to_physical(&self, px: f64, py: f64) -> Vector2<f64> {
        Vector2::new(
            (px - 0.5 * self.nu as f64) * self.pixel_size,
            (py - 0.5 * self.nv as f64) * self.pixel_size,
        )
    }

    pub fn physical_to_pixel(&self, u: f64, v: f64) -> Vector2<f64> {
        Vector2::new(
            u / self.pixel_size + 0.5 * self.nu as f64,
            v / self.pixel_size + 0.5 * self.nv as f64,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaminographyGeometry {
    /// Tilt `α` in radians, `0 ≤ α ≤ π/2`.
    pub tilt: f64,
    /// Source to rotation center.
    pub d_so: f64,
    /// Source to detector.
    pub d_sd: f64,
    pub detector: Detector,
}

impl LaminographyGeometry {
    pub fn new(tilt: f64, d_so: f64, d_sd: f64, detector: Detector) -> Result<Self> {
        let g = Self {
            tilt,
            d_so,
            d_sd,
            detector,
        };
        g.validate()?;
        Ok(g)
    }

    /// Desk-scale defaults for a scene box: `d_so` four times and `d_sd`
    /// eight times the box diagonal, with a pixel pitch that maps the box's
    /// longest side onto the detector width at the rotation center.
    pub fn for_bounds(bounds: &Aabb, tilt: f64, nu: usize, nv: usize) -> Result<Self> {
        let diag = bounds.diagonal();
        let d_so = 4.0 * diag;
        let d_sd = 8.0 * diag;
        let pixel_size = (d_sd / d_so) * bounds.extent() / nu.max(nv).max(1) as f64;
        Self::new(
            tilt,
            d_so,
            d_sd,
            Detector {
                nu,
                nv,
                pixel_size,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.tilt >= 0.0 && self.tilt <= half_pi + 1e-12) {
            return Err(Error::invalid(
                "tilt",
                format!(
                    "{:.4} rad ({:.2} deg) outside [0, 90] deg",
                    self.tilt,
                    self.tilt.to_degrees()
                ),
            ));
        }
        if !(self.d_so > 0.0 && self.d_so.is_finite()) {
            return Err(Error::invalid("d_so", format!("{} must be positive", self.d_so)));
        }
        if !(self.d_sd >= self.d_so && self.d_sd.is_finite()) {
            return Err(Error::invalid(
                "d_sd",
                format!("{} must be at least d_so = {}", self.d_sd, self.d_so),
            ));
        }
        let det = &self.detector;
        if det.nu == 0 || det.nv == 0 {
            return Err(Error::invalid("detector", "pixel counts must be positive"));
        }
        if !(det.pixel_size > 0.0 && det.pixel_size.is_finite()) {
            return Err(Error::invalid("detector", "pixel size must be positive"));
        }
        Ok(())
    }

    pub fn depth_floor(&self) -> f64 {
        DEPTH_FLOOR_FRACTION * self.d_so
    }

    pub fn view(&self, theta: f64) -> ViewTransform {
        build_view(self, theta)
    }

    /// Detector pixels per world unit at the rotation center.
    pub fn magnification(&self) -> f64 {
        self.d_sd / self.d_so
    }
}

/// World→camera rigid transform for one view angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewTransform {
    pub w: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub theta: f64,
}

impl ViewTransform {
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.w * p + self.t
    }

    /// Source position in world coordinates, `-Wᵀ t`.
    pub fn source_position(&self) -> Vector3<f64> {
        -(self.w.transpose() * self.t)
    }

    /// Unit world direction of the ray from the source through a continuous
    /// detector pixel position.
    pub fn ray_direction(&self, geom: &LaminographyGeometry, px: f64, py: f64) -> Vector3<f64> {
        let uv = geom.detector.pixel_to_physical(px, py);
        (self.w.transpose() * Vector3::new(uv.x, uv.y, geom.d_sd)).normalize()
    }
}

/// View transform for angle `theta`.
pub fn build_view(geom: &LaminographyGeometry, theta: f64) -> ViewTransform {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = geom.tilt.sin_cos();
    let w = Matrix3::new(
        -st,
        ct,
        0.0,
        ct * sa,
        st * sa,
        -ca,
        -ct * ca,
        -st * ca,
        -sa,
    );
    ViewTransform {
        w,
        t: Vector3::new(0.0, 0.0, geom.d_so),
        theta,
    }
}

/// A world point pushed through one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub p_cam: Vector3<f64>,
    /// Ray-space coordinates: detector pixel position and distance from the
    /// source along the ray.
    pub p_ray: Vector3<f64>,
    /// Continuous detector pixel coordinates.
    pub uv: Vector2<f64>,
}

/// Perspective map `φ` in physical detector units: `(d_sd x/z, d_sd y/z, ‖p‖)`.
pub fn perspective_map(p_cam: &Vector3<f64>, geom: &LaminographyGeometry) -> Result<Vector3<f64>> {
    check_depth(p_cam.z, geom)?;
    Ok(Vector3::new(
        geom.d_sd * p_cam.x / p_cam.z,
        geom.d_sd * p_cam.y / p_cam.z,
        p_cam.norm(),
    ))
}

pub fn project_point(
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    p: &Vector3<f64>,
) -> Result<ProjectedPoint> {
    let p_cam = view.to_camera(p);
    let phi = perspective_map(&p_cam, geom)?;
    let uv = geom.detector.physical_to_pixel(phi.x, phi.y);
    Ok(ProjectedPoint {
        p_cam,
        p_ray: Vector3::new(uv.x, uv.y, phi.z),
        uv,
    })
}

/// Local-affine Jacobian `∂φ/∂p_cam` in physical detector units.
///
/// The third row is the unit ray direction, so the third ray-space axis is
/// arc length along the ray.
pub fn projection_jacobian(p_cam: &Vector3<f64>, geom: &LaminographyGeometry) -> Result<Matrix3<f64>> {
    check_depth(p_cam.z, geom)?;
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let a = geom.d_sd / z;
    let l = p_cam.norm();
    Ok(Matrix3::new(
        a,
        0.0,
        -a * x / z,
        0.0,
        a,
        -a * y / z,
        x / l,
        y / l,
        z / l,
    ))
}

/// `J W Σ Wᵀ Jᵀ`, symmetrized.
pub fn transform_covariance(view: &ViewTransform, j: &Matrix3<f64>, sigma: &Matrix3<f64>) -> Matrix3<f64> {
    let m = j * view.w;
    let out = m * sigma * m.transpose();
    0.5 * (out + out.transpose())
}

fn check_depth(z: f64, geom: &LaminographyGeometry) -> Result<()> {
    let floor = geom.depth_floor();
    if z > floor {
        Ok(())
    } else {
        Err(Error::NonPositiveDepth { depth: z, floor })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn geom(tilt: f64) -> LaminographyGeometry {
        LaminographyGeometry::new(
            tilt,
            7.0,
            14.0,
            Detector {
                nu: 64,
                nv: 48,
                pixel_size: 0.03,
            },
        )
        .unwrap()
    }

    /// Circular cone-beam CT projector written from the source/detector
    /// picture: source on a circle in the `xy` plane, detector `v` pointing
    /// along world `-z`.
    fn ct_project(g: &LaminographyGeometry, theta: f64, p: &Vector3<f64>) -> Vector2<f64> {
        let src = Vector3::new(theta.cos(), theta.sin(), 0.0) * g.d_so;
        let axis = -src.normalize();
        let e_u = Vector3::new(-theta.sin(), theta.cos(), 0.0);
        let e_v = Vector3::new(0.0, 0.0, -1.0);
        let d = p - src;
        let depth = d.dot(&axis);
        let u = g.d_sd * d.dot(&e_u) / depth;
        let v = g.d_sd * d.dot(&e_v) / depth;
        g.detector.physical_to_pixel(u, v)
    }

    #[test]
    fn view_at_zero_angles() {
        let g = geom(0.0);
        let v = build_view(&g, 0.0);
        let want = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0);
        assert!((v.w - want).abs().max() < 1e-15);
        assert_eq!(v.t, Vector3::new(0.0, 0.0, 7.0));
    }

    #[test]
    fn view_at_quarter_turn_thirty_degrees() {
        let g = geom(FRAC_PI_6);
        let v = build_view(&g, FRAC_PI_2);
        let r3 = 3f64.sqrt() / 2.0;
        let want = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 0.5, -r3, 0.0, -r3, -0.5);
        assert!((v.w - want).abs().max() < 1e-15);
    }

    #[test]
    fn view_is_orthonormal() {
        let v = build_view(&geom(0.52), 0.7);
        assert!((v.w * v.w.transpose() - Matrix3::identity()).abs().max() < 1e-12);
        assert!((v.w.determinant().abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn source_is_at_d_so_along_axis() {
        let g = geom(0.4);
        for k in 0..8 {
            let v = build_view(&g, k as f64 * 0.77);
            assert!((v.source_position().norm() - g.d_so).abs() < 1e-12);
            assert!((v.t.norm() - g.d_so).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_projects_to_detector_center() {
        for tilt in [0.0, 0.3, FRAC_PI_6, 1.2] {
            let g = geom(tilt);
            for k in 0..6 {
                let view = build_view(&g, k as f64 * 1.1);
                let p = project_point(&view, &g, &Vector3::zeros()).unwrap();
                assert!((p.p_cam.z - g.d_so).abs() < 1e-12);
                assert!((p.uv - g.detector.center()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn central_ray_offset_keeps_pixel() {
        let g = geom(FRAC_PI_6);
        let view = build_view(&g, 0.9);
        let toward_source = view.source_position().normalize();
        let delta = 0.3;
        let p = project_point(&view, &g, &(toward_source * delta)).unwrap();
        assert!((p.uv - g.detector.center()).norm() < 1e-12);
        assert!((p.p_ray.z - (g.d_so - delta)).abs() < 1e-12);
    }

    #[test]
    fn zero_tilt_matches_ct_projector() {
        let g = geom(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let theta = rng.random_range(0.0..2.0 * PI);
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let got = project_point(&build_view(&g, theta), &g, &p).unwrap().uv;
            let want = ct_project(&g, theta, &p);
            assert!((got - want).norm() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn behind_source_is_rejected() {
        let g = geom(0.3);
        let view = build_view(&g, 0.0);
        let behind = view.source_position() * 1.5;
        assert!(matches!(
            project_point(&view, &g, &behind),
            Err(Error::NonPositiveDepth { .. })
        ));
        assert!(projection_jacobian(&Vector3::new(0.0, 0.0, 0.0), &g).is_err());
    }

    #[test]
    fn jacobian_on_axis_is_diagonal() {
        let g = geom(0.3);
        let j = projection_jacobian(&Vector3::new(0.0, 0.0, 6.0), &g).unwrap();
        assert!((j[(0, 0)] - 14.0 / 6.0).abs() < 1e-15);
        assert!((j[(1, 1)] - 14.0 / 6.0).abs() < 1e-15);
        assert_eq!(j[(0, 1)], 0.0);
        assert_eq!(j[(1, 0)], 0.0);
        assert_eq!(j[(0, 2)], 0.0);
        assert_eq!(j[(1, 2)], 0.0);
    }

    #[test]
    fn jacobian_block_halves_when_depth_doubles() {
        let g = geom(0.3);
        let a = projection_jacobian(&Vector3::new(0.3, -0.2, 5.0), &g).unwrap();
        let b = projection_jacobian(&Vector3::new(0.6, -0.4, 10.0), &g).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((b[(r, c)] - 0.5 * a[(r, c)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let g = geom(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(5.0..9.0));
            let j = projection_jacobian(&p, &g).unwrap();
            let h = 1e-4 * p.z;
            for c in 0..3 {
                let mut e = Vector3::zeros();
                e[c] = h;
                let fd = (perspective_map(&(p + e), &g).unwrap() - perspective_map(&(p - e), &g).unwrap()) / (2.0 * h);
                for r in 0..3 {
                    let err = (fd[r] - j[(r, c)]).abs();
                    assert!(err <= 1e-5 * j[(r, c)].abs().max(1e-3), "r{r} c{c}: {} vs {}", fd[r], j[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn isotropic_covariance_is_rotation_invariant() {
        let g = geom(0.8);
        let v = build_view(&g, 2.1);
        let s = 0.04f64;
        let out = transform_covariance(&v, &Matrix3::identity(), &(Matrix3::identity() * s * s));
        assert!((out - Matrix3::identity() * s * s).abs().max() < 1e-15);
    }

    #[test]
    fn transformed_covariance_is_psd() {
        let g = geom(0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let sigma = a * a.transpose() + Matrix3::identity() * 1e-3;
            let v = build_view(&g, rng.random_range(0.0..6.0));
            let p = v.to_camera(&Vector3::new(0.1, 0.2, -0.1));
            let j = projection_jacobian(&p, &g).unwrap();
            let out = transform_covariance(&v, &j, &sigma);
            assert!((out - out.transpose()).abs().max() < 1e-12);
            assert!(out.symmetric_eigenvalues().min() >= -1e-12);
        }
    }

    #[test]
    fn zero_tilt_covariance_matches_ct_frame() {
        let g = geom(0.0);
        let v = build_view(&g, 0.0);
        let sigma = Matrix3::new(0.02, 0.003, -0.001, 0.003, 0.01, 0.002, -0.001, 0.002, 0.03);
        let p_cam = v.to_camera(&Vector3::new(0.1, -0.05, 0.2));
        let j = projection_jacobian(&p_cam, &g).unwrap();
        // CT camera frame at θ = 0 written out by hand: u = y, v = -z, depth = -x.
        let w_ct = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0);
        let want = j * w_ct * sigma * w_ct.transpose() * j.transpose();
        assert!((transform_covariance(&v, &j, &sigma) - want).abs().max() < 1e-12);
    }

    #[test]
    fn rotation_consistency() {
        let g = geom(FRAC_PI_6);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v0 = build_view(&g, 0.0);
        for _ in 0..100 {
            let theta = rng.random_range(0.0..2.0 * PI);
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), -theta);
            let a = project_point(&build_view(&g, theta), &g, &p).unwrap();
            let b = project_point(&v0, &g, &(rz * p)).unwrap();
            assert!((a.p_ray - b.p_ray).norm() < 1e-9);
        }
    }

    #[test]
    fn validation_rejects_bad_tilt_and_distances() {
        let det = Detector { nu: 8, nv: 8, pixel_size: 0.1 };
        assert!(LaminographyGeometry::new(91f64.to_radians(), 5.0, 10.0, det).is_err());
        assert!(LaminographyGeometry::new(-0.1, 5.0, 10.0, det).is_err());
        assert!(LaminographyGeometry::new(0.5, 0.0, 10.0, det).is_err());
        assert!(LaminographyGeometry::new(0.5, 5.0, 4.0, det).is_err());
        assert!(LaminographyGeometry::new(FRAC_PI_2, 5.0, 5.0, det).is_ok());
    }
}
