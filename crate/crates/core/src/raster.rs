//! Differentiable X-ray splatting.
//!
//! Every Gaussian is pushed to ray space with the local-affine perspective
//! Jacobian, its ray-space covariance is marginalized to the detector plane,
//! and its amplitude is rescaled by `μ = √(2π|Σ̃|/|Σ̂|)` so that the 2D splat
//! carries the Gaussian's line integral. Splats add; there is no
//! compositing.
//!
//! All detector quantities here are in pixel units.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{LaminographyGeometry, ViewTransform};
use crate::types::{normalize_quaternion, ActivatedGaussian, GaussianScene, Image, RadiativeGaussian};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// Square tile edge in pixels.
    pub tile_size: usize,
    /// Mahalanobis radius beyond which a splat contributes nothing.
    pub cutoff_sigma: f64,
    /// Variance added to the splat diagonal before inversion, in px².
    pub blur_px2: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            cutoff_sigma: 3.0,
            blur_px2: 0.3 * 0.3,
        }
    }
}

/// A Gaussian's footprint on the detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub source_index: usize,
    /// Continuous pixel coordinates.
    pub center: Vector2<f64>,
    /// Marginal covariance before the blur floor.
    pub covariance: Matrix2<f64>,
    /// Inverse of the floored covariance.
    pub conic: Matrix2<f64>,
    pub mu: f64,
    /// `μ ρ`.
    pub amplitude: f64,
    /// Pixel index ranges `[u0, u1) × [v0, v1)` touched by the cutoff ellipse.
    pub bbox: [usize; 4],
    /// Determinant of the full ray-space covariance (pixel² · world).
    pub ray_det: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplatOutcome {
    Visible(Splat2D),
    Culled,
}

impl SplatOutcome {
    pub fn visible(self) -> Option<Splat2D> {
        match self {
            SplatOutcome::Visible(s) => Some(s),
            SplatOutcome::Culled => None,
        }
    }
}

/// Intermediates kept for the backward pass.
struct SplatFrame {
    p_cam: Vector3<f64>,
    j2: Matrix2x3<f64>,
    sigma_cam: Matrix3<f64>,
    focal: f64,
}

fn splat_with_frame(
    g: &ActivatedGaussian,
    index: usize,
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    settings: &RenderSettings,
) -> Option<(Splat2D, SplatFrame)> {
    let p_cam = view.to_camera(&g.position);
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    if !(z > geom.depth_floor()) {
        return None;
    }
    let det = &geom.detector;
    let focal = geom.d_sd / det.pixel_size;
    let a = focal / z;
    let j2 = Matrix2x3::new(a, 0.0, -a * x / z, 0.0, a, -a * y / z);
    let center = Vector2::new(a * x + 0.5 * det.nu as f64, a * y + 0.5 * det.nv as f64);

    let sigma_cam = {
        let m = view.w * g.covariance() * view.w.transpose();
        0.5 * (m + m.transpose())
    };
    let cov = {
        let m = j2 * sigma_cam * j2.transpose();
        0.5 * (m + m.transpose())
    };
    let det_hat = cov.determinant();
    if !(det_hat > 0.0) || !det_hat.is_finite() {
        return None;
    }
    // |J| = f² l / z³ and |W| = 1, so |Σ̃| = |J|² Π s².
    let l = p_cam.norm();
    let log_det_j = 2.0 * focal.ln() + l.ln() - 3.0 * z.ln();
    let log_det_sigma = 2.0 * g.scales.iter().map(|s| s.ln()).sum::<f64>();
    let log_ray_det = 2.0 * log_det_j + log_det_sigma;
    let mu = (0.5 * (TWO_PI.ln() + log_ray_det - det_hat.ln())).exp();

    let floored = cov + Matrix2::identity() * settings.blur_px2;
    let det_f = floored.determinant();
    if !(det_f > 0.0) {
        return None;
    }
    let conic = Matrix2::new(floored[(1, 1)], -floored[(0, 1)], -floored[(1, 0)], floored[(0, 0)]) / det_f;
    let mid = 0.5 * (floored[(0, 0)] + floored[(1, 1)]);
    let lambda_max = mid + (mid * mid - det_f).max(0.0).sqrt();
    let radius = settings.cutoff_sigma * lambda_max.sqrt();

    let range = |c: f64, n: usize| -> Option<(usize, usize)> {
        // Pixel i is touched when its center i + 0.5 lies in [c - r, c + r].
        let lo = (c - radius - 0.5).ceil().max(0.0);
        let hi = (c + radius - 0.5).floor().min(n as f64 - 1.0);
        (lo <= hi).then(|| (lo as usize, hi as usize + 1))
    };
    let (u0, u1) = range(center.x, det.nu)?;
    let (v0, v1) = range(center.y, det.nv)?;

    let splat = Splat2D {
        source_index: index,
        center,
        covariance: cov,
        conic,
        mu,
        amplitude: mu * g.density,
        bbox: [u0, u1, v0, v1],
        ray_det: log_ray_det.exp(),
    };
    Some((
        splat,
        SplatFrame {
            p_cam,
            j2,
            sigma_cam,
            focal,
        },
    ))
}

/// Projects one Gaussian; `Culled` when it is behind the depth floor or its
/// cutoff ellipse misses the detector.
pub fn splat_gaussian(
    g: &ActivatedGaussian,
    index: usize,
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    settings: &RenderSettings,
) -> SplatOutcome {
    match splat_with_frame(g, index, view, geom, settings) {
        Some((s, _)) => SplatOutcome::Visible(s),
        None => SplatOutcome::Culled,
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Visible splats ordered by source index.
    pub splats: Vec<Splat2D>,
}

impl RenderOutput {
    pub fn visible_count(&self) -> usize {
        self.splats.len()
    }
}

/// Renders one view as the sum of all visible splats.
pub fn render(
    scene: &GaussianScene,
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    settings: &RenderSettings,
) -> RenderOutput {
    let splats: Vec<Splat2D> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            splat_with_frame(&g.activate(scene.scale_floor()), i, view, geom, settings).map(|(s, _)| s)
        })
        .collect();
    let image = rasterize_splats(&splats, geom, settings);
    RenderOutput { image, splats }
}

/// Tile-binned accumulation of splats into an image. Within every pixel the
/// sum runs in splat order.
pub fn rasterize_splats(splats: &[Splat2D], geom: &LaminographyGeometry, settings: &RenderSettings) -> Image {
    let det = &geom.detector;
    let ts = settings.tile_size.max(1);
    let tiles_x = det.nu.div_ceil(ts);
    let tiles_y = det.nv.div_ceil(ts);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let [u0, u1, v0, v1] = s.bbox;
        for ty in v0 / ts..=(v1 - 1) / ts {
            for tx in u0 / ts..=(u1 - 1) / ts {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    let cutoff2 = settings.cutoff_sigma * settings.cutoff_sigma;
    let tiles: Vec<(usize, Vec<f64>)> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let tx = t % tiles_x;
            let ty = t / tiles_x;
            let u_lo = tx * ts;
            let v_lo = ty * ts;
            let w = ts.min(det.nu - u_lo);
            let h = ts.min(det.nv - v_lo);
            let mut acc = vec![0.0f64; w * h];
            for &k in list {
                let s = &splats[k as usize];
                let (a, b, c) = (s.conic[(0, 0)], s.conic[(0, 1)], s.conic[(1, 1)]);
                let [u0, u1, v0, v1] = s.bbox;
                for v in v0.max(v_lo)..v1.min(v_lo + h) {
                    let dy = v as f64 + 0.5 - s.center.y;
                    for u in u0.max(u_lo)..u1.min(u_lo + w) {
                        let dx = u as f64 + 0.5 - s.center.x;
                        let m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                        if m <= cutoff2 {
                            acc[(v - v_lo) * w + (u - u_lo)] += s.amplitude * (-0.5 * m).exp();
                        }
                    }
                }
            }
            (t, acc)
        })
        .collect();
    let mut image = Image::zeros(det.nu, det.nv);
    for (t, acc) in tiles {
        let u_lo = (t % tiles_x) * ts;
        let v_lo = (t / tiles_x) * ts;
        let w = ts.min(det.nu - u_lo);
        for (r, row) in acc.chunks(w).enumerate() {
            let start = (v_lo + r) * det.nu + u_lo;
            image.data[start..start + w].copy_from_slice(row);
        }
    }
    image
}

/// Per-Gaussian gradients of a scalar loss with respect to the stored
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub raw_density: Vec<f64>,
    pub position: Vec<Vector3<f64>>,
    pub rotation: Vec<[f64; 4]>,
    pub raw_scale: Vec<Vector3<f64>>,
    /// `‖∂L/∂p̂‖` with `p̂` in normalized device coordinates (`[-1, 1]`
    /// across the detector); zero for culled Gaussians.
    pub screen_grad: Vec<f64>,
    pub visible: Vec<bool>,
}

impl Gradients {
    pub fn zeros(m: usize) -> Self {
        Self {
            raw_density: vec![0.0; m],
            position: vec![Vector3::zeros(); m],
            rotation: vec![[0.0; 4]; m],
            raw_scale: vec![Vector3::zeros(); m],
            screen_grad: vec![0.0; m],
            visible: vec![false; m],
        }
    }

    pub fn len(&self) -> usize {
        self.raw_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_density.is_empty()
    }

    /// Adds `other` into `self` (screen gradients and visibility included).
    pub fn accumulate(&mut self, other: &Gradients) {
        for i in 0..self.len() {
            self.raw_density[i] += other.raw_density[i];
            self.position[i] += other.position[i];
            for k in 0..4 {
                self.rotation[i][k] += other.rotation[i][k];
            }
            self.raw_scale[i] += other.raw_scale[i];
            self.screen_grad[i] += other.screen_grad[i];
            self.visible[i] |= other.visible[i];
        }
    }

    pub fn scale(&mut self, c: f64) {
        for i in 0..self.len() {
            self.raw_density[i] *= c;
            self.position[i] *= c;
            for k in 0..4 {
                self.rotation[i][k] *= c;
            }
            self.raw_scale[i] *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.raw_density.iter().all(|v| v.is_finite())
            && self.position.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.raw_scale.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

struct GaussianGrad {
    raw_density: f64,
    position: Vector3<f64>,
    rotation: [f64; 4],
    raw_scale: Vector3<f64>,
    screen_grad: f64,
}

/// Backpropagates `dl_dimage` through the renderer.
///
/// The splat set is recomputed from the scene, so this only needs the same
/// inputs as [`render`]. Each Gaussian's gradient is reduced independently
/// over its own pixel footprint, which keeps the result independent of
/// thread scheduling.
pub fn render_backward(
    scene: &GaussianScene,
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    settings: &RenderSettings,
    dl_dimage: &Image,
) -> Gradients {
    let m = scene.len();
    let floor = scene.scale_floor();
    let det = &geom.detector;
    assert_eq!(
        (dl_dimage.width, dl_dimage.height),
        (det.nu, det.nv),
        "upstream gradient does not match the detector"
    );
    let per: Vec<Option<GaussianGrad>> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, raw)| gaussian_backward(raw, i, floor, view, geom, settings, dl_dimage))
        .collect();
    let mut out = Gradients::zeros(m);
    for (i, g) in per.into_iter().enumerate() {
        if let Some(g) = g {
            out.raw_density[i] = g.raw_density;
            out.position[i] = g.position;
            out.rotation[i] = g.rotation;
            out.raw_scale[i] = g.raw_scale;
            out.screen_grad[i] = g.screen_grad;
            out.visible[i] = true;
        }
    }
    out
}

fn gaussian_backward(
    raw: &RadiativeGaussian,
    index: usize,
    floor: f64,
    view: &ViewTransform,
    geom: &LaminographyGeometry,
    settings: &RenderSettings,
    dl_dimage: &Image,
) -> Option<GaussianGrad> {
    let g = raw.activate(floor);
    let (s, fr) = splat_with_frame(&g, index, view, geom, settings)?;
    let cutoff2 = settings.cutoff_sigma * settings.cutoff_sigma;
    let (a, b, c) = (s.conic[(0, 0)], s.conic[(0, 1)], s.conic[(1, 1)]);
    let width = dl_dimage.width;

    // Pixel reduction: ∂L/∂amplitude, ∂L/∂center, ∂L/∂conic.
    let mut g_amp = 0.0;
    let mut g_center = Vector2::<f64>::zeros();
    let mut g_conic = Matrix2::<f64>::zeros();
    let [u0, u1, v0, v1] = s.bbox;
    for v in v0..v1 {
        let dy = v as f64 + 0.5 - s.center.y;
        let row = &dl_dimage.data[v * width..(v + 1) * width];
        for (u, &gi) in row.iter().enumerate().take(u1).skip(u0) {
            if gi == 0.0 {
                continue;
            }
            let dx = u as f64 + 0.5 - s.center.x;
            let mq = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
            if mq > cutoff2 {
                continue;
            }
            let e = (-0.5 * mq).exp();
            g_amp += gi * e;
            let w = gi * s.amplitude * e;
            // ∂(-½ dᵀAd)/∂center = A d
            g_center.x += w * (a * dx + b * dy);
            g_center.y += w * (b * dx + c * dy);
            g_conic[(0, 0)] -= 0.5 * w * dx * dx;
            g_conic[(0, 1)] -= 0.5 * w * dx * dy;
            g_conic[(1, 1)] -= 0.5 * w * dy * dy;
        }
    }
    g_conic[(1, 0)] = g_conic[(0, 1)];

    let rho = g.density;
    let mu = s.mu;
    let g_rho = g_amp * mu;
    // ∂L/∂ln μ
    let g_log_mu = g_amp * rho * mu;

    // Conic = (Σ̂ + λI)⁻¹, and ln μ carries -½ ln|Σ̂|.
    let cov_inv = s.covariance.try_inverse().unwrap_or_else(Matrix2::zeros);
    let g_cov = -(s.conic * g_conic * s.conic) - 0.5 * g_log_mu * cov_inv;

    let SplatFrame {
        p_cam,
        j2,
        sigma_cam,
        focal,
    } = fr;
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let g_sigma_cam = j2.transpose() * g_cov * j2;
    let g_j2 = 2.0 * g_cov * j2 * sigma_cam;

    let mut g_pcam = j2.transpose() * g_center;
    let fz2 = focal / (z * z);
    g_pcam.x += g_j2[(0, 2)] * -fz2;
    g_pcam.y += g_j2[(1, 2)] * -fz2;
    g_pcam.z += (g_j2[(0, 0)] + g_j2[(1, 1)]) * -fz2
        + g_j2[(0, 2)] * 2.0 * focal * x / (z * z * z)
        + g_j2[(1, 2)] * 2.0 * focal * y / (z * z * z);
    // ln|J| = ln l - 3 ln z + const.
    let l2 = p_cam.norm_squared();
    g_pcam += g_log_mu * (p_cam / l2 - Vector3::new(0.0, 0.0, 3.0 / z));
    let g_position = view.w.transpose() * g_pcam;

    let g_sigma = view.w.transpose() * g_sigma_cam * view.w;
    let rot = g.rotation;
    let scales = g.scales;
    let m_factor = rot * Matrix3::from_diagonal(&scales);
    let g_m = 2.0 * g_sigma * m_factor;
    let mut g_rot = Matrix3::<f64>::zeros();
    let mut g_scale = Vector3::<f64>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            g_rot[(i, j)] = g_m[(i, j)] * scales[j];
            g_scale[j] += g_m[(i, j)] * rot[(i, j)];
        }
    }
    for k in 0..3 {
        g_scale[k] += g_log_mu / scales[k];
    }
    let g_raw_scale = Vector3::new(
        g_scale.x * (scales.x - floor),
        g_scale.y * (scales.y - floor),
        g_scale.z * (scales.z - floor),
    );

    let ndc = Vector2::new(0.5 * geom.detector.nu as f64, 0.5 * geom.detector.nv as f64);
    Some(GaussianGrad {
        raw_density: g_rho * rho,
        position: g_position,
        rotation: quaternion_backward(raw.rotation, &g_rot),
        raw_scale: g_raw_scale,
        screen_grad: g_center.component_mul(&ndc).norm(),
    })
}

/// Chains `∂L/∂R` through `R(q/‖q‖)` to the raw quaternion.
pub fn quaternion_backward(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = normalize_quaternion(q);
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == 0.0 {
        return [0.0; 4];
    }
    let gh = [gw, gx, gy, gz];
    let qh = [w, x, y, z];
    let dot: f64 = gh.iter().zip(&qh).map(|(a, b)| a * b).sum();
    [
        (gh[0] - qh[0] * dot) / n,
        (gh[1] - qh[1] * dot) / n,
        (gh[2] - qh[2] * dot) / n,
        (gh[3] - qh[3] * dot) / n,
    ]
}
