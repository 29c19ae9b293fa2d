//! Training loop: L1 + SSIM loss on rendered projections, Adam updates on
//! the raw Gaussian parameters, and periodic clone/split/prune.

use std::sync::mpsc::Sender;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{render, render_backward, Gradients, RenderSettings};
use crate::ssim::ssim_with_grad;
use crate::types::{normalize_quaternion, GaussianScene, Image, ProjectionStack, RadiativeGaussian};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub density: f64,
    /// Initial position rate as a fraction of the scene extent.
    pub position: f64,
    /// Position rate reached at the last iteration, same units.
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            density: 5e-2,
            position: 2e-4,
            position_final: 2e-6,
            rotation: 1e-3,
            scale: 5e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lambda_ssim: f64,
    pub lr: LearningRates,
    pub adam: AdamParams,
    pub densify_start: usize,
    pub densify_end: usize,
    pub densify_interval: usize,
    /// Mean screen-space gradient norm (normalized device units) above
    /// which a Gaussian is cloned or split.
    pub grad_threshold: f64,
    /// Pruning floor as a fraction of the current largest density.
    pub prune_density_fraction: f64,
    /// Largest scale, as a fraction of the scene extent, that still clones
    /// rather than splits.
    pub split_scale_threshold: f64,
    /// Gaussians larger than this fraction of the extent are pruned.
    pub prune_scale_fraction: f64,
    pub split_divisor: f64,
    /// Upper bound on the number of Gaussians; 0 means unbounded.
    pub max_gaussians: usize,
    pub rng_seed: u64,
    pub views_per_step: usize,
    pub log_interval: usize,
    /// View excluded from training and used for logged PSNR.
    pub holdout_view: Option<usize>,
    /// Whether records carry wall-clock times; off for reproducible logs.
    pub record_wall_time: bool,
    pub render: RenderSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            lambda_ssim: 0.25,
            lr: LearningRates::default(),
            adam: AdamParams::default(),
            densify_start: 500,
            densify_end: 20_000,
            densify_interval: 100,
            grad_threshold: 5e-5,
            prune_density_fraction: 1e-4,
            split_scale_threshold: 0.01,
            prune_scale_fraction: 0.5,
            split_divisor: 1.6,
            max_gaussians: 0,
            rng_seed: 0,
            views_per_step: 1,
            log_interval: 100,
            holdout_view: None,
            record_wall_time: true,
            render: RenderSettings::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for small (≈64³) problems run for `iterations` steps: a gentler
    /// density rate, a gradient threshold set from the observed screen-gradient
    /// spread, and densification over the first 80% of the run.
    pub fn desk(iterations: usize) -> Self {
        let mut cfg = Self {
            iterations,
            grad_threshold: 2e-3,
            ..Self::default()
        };
        cfg.lr.density = 1e-2;
        cfg.densify_start = (iterations / 10).min(500);
        cfg.densify_end = (iterations * 4 / 5).max(cfg.densify_start + 1).min(iterations);
        if cfg.densify_start >= cfg.densify_end {
            cfg.densify_start = 0;
            cfg.densify_end = iterations;
            cfg.densify_interval = usize::MAX;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations > 0 && !(self.densify_start < self.densify_end && self.densify_end <= self.iterations) {
            return Err(Error::invalid(
                "densify schedule",
                format!(
                    "need densify_start < densify_end <= iterations, got {} / {} / {}",
                    self.densify_start, self.densify_end, self.iterations
                ),
            ));
        }
        if !(self.grad_threshold > 0.0) {
            return Err(Error::invalid("grad_threshold", format!("{} is not positive", self.grad_threshold)));
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::invalid("lambda_ssim", format!("{} is outside [0, 1]", self.lambda_ssim)));
        }
        if self.views_per_step == 0 {
            return Err(Error::invalid("views_per_step", "must be at least 1"));
        }
        if self.densify_interval == 0 || self.log_interval == 0 {
            return Err(Error::invalid("interval", "densify and log intervals must be positive"));
        }
        if !(self.split_divisor > 1.0) {
            return Err(Error::invalid("split_divisor", format!("{} <= 1", self.split_divisor)));
        }
        Ok(())
    }

    /// Position learning rate at `iter`, log-linear between the endpoints.
    pub fn position_lr(&self, iter: usize, extent: f64) -> f64 {
        if self.lr.position <= 0.0 {
            return 0.0;
        }
        let t = if self.iterations == 0 {
            0.0
        } else {
            (iter as f64 / self.iterations as f64).clamp(0.0, 1.0)
        };
        let (a, b) = (self.lr.position.ln(), self.lr.position_final.ln());
        extent * (a + t * (b - a)).exp()
    }
}

/// Loss value, its parts, and the gradient with respect to the rendered
/// image.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    /// `1 - SSIM`.
    pub ssim_term: f64,
    pub grad: Image,
}

/// `L1 + λ(1 − SSIM)`, with SSIM constants based on `data_range`.
pub fn compute_loss(rendered: &Image, measured: &Image, lambda_ssim: f64, data_range: f64) -> Result<LossValue> {
    if !rendered.same_shape(measured) {
        return Err(Error::Shape("rendered and measured images differ in shape".into()));
    }
    let n = rendered.data.len() as f64;
    let mut grad = Image::zeros(rendered.width, rendered.height);
    let mut l1 = 0.0;
    for ((g, r), m) in grad.data.iter_mut().zip(&rendered.data).zip(&measured.data) {
        let d = r - m;
        l1 += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    l1 /= n;
    let mut ssim_term = 0.0;
    if lambda_ssim > 0.0 {
        let (s, ds) = ssim_with_grad(rendered, measured, data_range)?;
        ssim_term = 1.0 - s;
        for (g, d) in grad.data.iter_mut().zip(&ds.data) {
            *g -= lambda_ssim * d;
        }
    }
    Ok(LossValue {
        total: l1 + lambda_ssim * ssim_term,
        l1,
        ssim_term,
        grad,
    })
}

/// One Adam update of a scalar parameter. `step` counts from 1.
pub fn adam_update(param: &mut f64, grad: f64, m: &mut f64, v: &mut f64, lr: f64, step: u64, p: &AdamParams) {
    *m = p.beta1 * *m + (1.0 - p.beta1) * grad;
    *v = p.beta2 * *v + (1.0 - p.beta2) * grad * grad;
    let m_hat = *m / (1.0 - p.beta1.powi(step as i32));
    let v_hat = *v / (1.0 - p.beta2.powi(step as i32));
    *param -= lr * m_hat / (v_hat.sqrt() + p.eps);
}

/// First and second moments for one parameter group, `width` values per
/// Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub width: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn new(width: usize, rows: usize) -> Self {
        Self {
            width,
            m: vec![0.0; width * rows],
            v: vec![0.0; width * rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.width
    }

    fn gather(&self, keep: &[Option<usize>]) -> Self {
        let mut out = Self::new(self.width, keep.len());
        for (dst, src) in keep.iter().enumerate() {
            if let Some(src) = *src {
                let (a, b) = (dst * self.width, src * self.width);
                out.m[a..a + self.width].copy_from_slice(&self.m[b..b + self.width]);
                out.v[a..a + self.width].copy_from_slice(&self.v[b..b + self.width]);
            }
        }
        out
    }
}

/// Everything the loop mutates.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub scene: GaussianScene,
    pub density: Moments,
    pub position: Moments,
    pub rotation: Moments,
    pub scale: Moments,
    /// Summed screen-gradient norms since the last densification.
    pub grad_accum: Vec<f64>,
    /// Number of views in which each Gaussian was visible over the same span.
    pub grad_count: Vec<u32>,
    pub iteration: usize,
    pub adam_step: u64,
    pub loss_history: Vec<f64>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(scene: GaussianScene, seed: u64) -> Self {
        let m = scene.len();
        Self {
            scene,
            density: Moments::new(1, m),
            position: Moments::new(3, m),
            rotation: Moments::new(4, m),
            scale: Moments::new(3, m),
            grad_accum: vec![0.0; m],
            grad_count: vec![0; m],
            iteration: 0,
            adam_step: 0,
            loss_history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// True when every per-Gaussian buffer matches the scene size.
    pub fn is_consistent(&self) -> bool {
        let m = self.scene.len();
        [&self.density, &self.position, &self.rotation, &self.scale]
            .iter()
            .all(|mo| mo.rows() == m)
            && self.grad_accum.len() == m
            && self.grad_count.len() == m
    }

    /// Rebuilds the scene from `sources`: `Some(i)` keeps row `i`'s moments,
    /// `None` starts fresh. Accumulators are cleared.
    fn rebuild(&mut self, gaussians: Vec<RadiativeGaussian>, sources: Vec<Option<usize>>) {
        self.density = self.density.gather(&sources);
        self.position = self.position.gather(&sources);
        self.rotation = self.rotation.gather(&sources);
        self.scale = self.scale.gather(&sources);
        self.scene.gaussians = gaussians;
        let m = self.scene.len();
        self.grad_accum = vec![0.0; m];
        self.grad_count = vec![0; m];
    }

    fn reset_accumulators(&mut self) {
        self.grad_accum.iter_mut().for_each(|v| *v = 0.0);
        self.grad_count.iter_mut().for_each(|v| *v = 0);
    }
}

/// Gradients and loss parts from one batch of views.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
}

/// Renders `views`, backpropagates, and applies one Adam update.
pub fn train_step(
    state: &mut TrainState,
    stack: &ProjectionStack,
    views: &[usize],
    cfg: &TrainConfig,
    data_range: f64,
) -> Result<StepOutcome> {
    if views.is_empty() {
        return Err(Error::invalid("batch", "no views"));
    }
    let geom = &stack.geometry;
    let m = state.scene.len();
    let mut total = Gradients::zeros(m);
    let mut out = StepOutcome {
        loss: 0.0,
        l1: 0.0,
        ssim_term: 0.0,
    };
    for &vi in views {
        let view = geom.view(stack.angles[vi]);
        let rendered = render(&state.scene, &view, geom, &cfg.render).image;
        let loss = compute_loss(&rendered, &stack.images[vi], cfg.lambda_ssim, data_range)?;
        let grads = render_backward(&state.scene, &view, geom, &cfg.render, &loss.grad);
        if !loss.total.is_finite() || !grads.is_finite() {
            log::error!(
                "non-finite loss {} at iteration {} on view {vi} (θ = {}), M = {}",
                loss.total,
                state.iteration,
                stack.angles[vi],
                m
            );
            return Err(Error::NonFiniteLoss {
                iteration: state.iteration,
                view: vi,
                angle: stack.angles[vi],
            });
        }
        for i in 0..m {
            if grads.visible[i] {
                state.grad_accum[i] += grads.screen_grad[i];
                state.grad_count[i] += 1;
            }
        }
        total.accumulate(&grads);
        out.loss += loss.total;
        out.l1 += loss.l1;
        out.ssim_term += loss.ssim_term;
    }
    let inv = 1.0 / views.len() as f64;
    total.scale(inv);
    out.loss *= inv;
    out.l1 *= inv;
    out.ssim_term *= inv;

    state.adam_step += 1;
    let step = state.adam_step;
    let p = &cfg.adam;
    let extent = state.scene.extent();
    let lr_pos = cfg.position_lr(state.iteration, extent);
    let limit = state.scene.bounds().scaled(1.2);
    for i in 0..m {
        let g = &mut state.scene.gaussians[i];
        adam_update(
            &mut g.raw_density,
            total.raw_density[i],
            &mut state.density.m[i],
            &mut state.density.v[i],
            cfg.lr.density,
            step,
            p,
        );
        for k in 0..3 {
            let j = 3 * i + k;
            adam_update(
                &mut g.position[k],
                total.position[i][k],
                &mut state.position.m[j],
                &mut state.position.v[j],
                lr_pos,
                step,
                p,
            );
            adam_update(
                &mut g.raw_scale[k],
                total.raw_scale[i][k],
                &mut state.scale.m[j],
                &mut state.scale.v[j],
                cfg.lr.scale,
                step,
                p,
            );
        }
        for k in 0..4 {
            let j = 4 * i + k;
            adam_update(
                &mut g.rotation[k],
                total.rotation[i][k],
                &mut state.rotation.m[j],
                &mut state.rotation.v[j],
                cfg.lr.rotation,
                step,
                p,
            );
        }
        g.rotation = normalize_quaternion(g.rotation);
        g.position = limit.clamp(&g.position);
    }
    state.loss_history.push(out.loss);
    state.iteration += 1;
    Ok(out)
}

/// What [`densify_and_prune`] did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub prune_skipped: bool,
}

fn sample_offset(rng: &mut ChaCha8Rng, g: &RadiativeGaussian, floor: f64) -> Vector3<f64> {
    let a = g.activate(floor);
    let z = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    a.rotation * a.scales.component_mul(&z)
}

/// Clones small high-gradient Gaussians, splits large ones, then prunes
/// faint or oversized ones. Clones and split children share the parent's
/// mass so the rendered field changes as little as possible.
pub fn densify_and_prune(state: &mut TrainState, cfg: &TrainConfig) -> DensifyReport {
    let floor = state.scene.scale_floor();
    let extent = state.scene.extent();
    let m = state.scene.len();
    let mut report = DensifyReport::default();
    let mut gaussians = Vec::with_capacity(m);
    let mut sources = Vec::with_capacity(m);
    let budget = if cfg.max_gaussians == 0 {
        usize::MAX
    } else {
        cfg.max_gaussians
    };
    let mut grown = m;
    let clone_limit = cfg.split_scale_threshold * extent;
    let ln2 = std::f64::consts::LN_2;
    for i in 0..m {
        let g = state.scene.gaussians[i];
        let count = state.grad_count[i];
        let mean = if count > 0 {
            state.grad_accum[i] / count as f64
        } else {
            0.0
        };
        if mean <= cfg.grad_threshold || grown >= budget {
            gaussians.push(g);
            sources.push(Some(i));
            continue;
        }
        grown += 1;
        let scales = g.scales(floor);
        if scales.max() < clone_limit {
            let mut parent = g;
            parent.raw_density -= ln2;
            let mut child = parent;
            child.position += sample_offset(&mut state.rng, &g, floor);
            gaussians.push(parent);
            sources.push(Some(i));
            gaussians.push(child);
            sources.push(None);
            report.cloned += 1;
        } else {
            let split_density = g.density() * cfg.split_divisor.powi(3) / 2.0;
            for _ in 0..2 {
                let offset = sample_offset(&mut state.rng, &g, floor);
                let child = RadiativeGaussian::from_activated(
                    split_density,
                    g.position + offset,
                    g.rotation,
                    scales / cfg.split_divisor,
                    floor,
                );
                gaussians.push(child);
                sources.push(None);
            }
            report.split += 1;
        }
    }

    let max_density = gaussians.iter().map(|g| g.density()).fold(0.0, f64::max);
    let density_floor = cfg.prune_density_fraction * max_density;
    let scale_limit = cfg.prune_scale_fraction * extent;
    let keep: Vec<bool> = gaussians
        .iter()
        .map(|g| g.density() >= density_floor && g.scales(floor).max() <= scale_limit)
        .collect();
    let kept = keep.iter().filter(|&&k| k).count();
    if kept == 0 {
        log::warn!("pruning would remove all {} Gaussians; skipping prune", gaussians.len());
        report.prune_skipped = true;
    } else if kept < gaussians.len() {
        report.pruned = gaussians.len() - kept;
        let mut it = keep.iter();
        gaussians.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        sources.retain(|_| *it.next().unwrap());
    }
    if report == DensifyReport::default() {
        state.reset_accumulators();
    } else {
        state.rebuild(gaussians, sources);
    }
    report
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    /// Mean training loss over the iterations since the previous record.
    pub loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub holdout_psnr: Option<f64>,
}

/// Stepwise driver around [`TrainState`].
pub struct Trainer<'a> {
    pub state: TrainState,
    pub cfg: TrainConfig,
    stack: &'a ProjectionStack,
    train_views: Vec<usize>,
    data_range: f64,
    started: Instant,
    window: (f64, f64, f64, usize),
    pub records: Vec<MetricsRecord>,
    sink: Option<Sender<MetricsRecord>>,
}

impl<'a> Trainer<'a> {
    pub fn new(stack: &'a ProjectionStack, init: GaussianScene, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        stack.validate()?;
        if init.is_empty() {
            return Err(Error::invalid("scene", "initial scene has no Gaussians"));
        }
        let train_views: Vec<usize> = (0..stack.len()).filter(|&i| Some(i) != cfg.holdout_view).collect();
        if train_views.is_empty() {
            return Err(Error::invalid("projections", "no training views"));
        }
        if let Some(h) = cfg.holdout_view {
            if h >= stack.len() {
                return Err(Error::invalid("holdout_view", format!("{h} >= {} views", stack.len())));
            }
        }
        let mut data_range = stack.dynamic_range();
        if data_range <= 0.0 {
            data_range = 1.0;
        }
        Ok(Self {
            state: TrainState::new(init, cfg.rng_seed),
            cfg,
            stack,
            train_views,
            data_range,
            started: Instant::now(),
            window: (0.0, 0.0, 0.0, 0),
            records: Vec::new(),
            sink: None,
        })
    }

    /// Records are also sent here as they are produced.
    pub fn with_sink(mut self, sink: Sender<MetricsRecord>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn scene(&self) -> &GaussianScene {
        &self.state.scene
    }

    /// Ends training; closes the metrics sink.
    pub fn into_scene(self) -> GaussianScene {
        self.state.scene
    }

    pub fn done(&self) -> bool {
        self.state.iteration >= self.cfg.iterations
    }

    /// PSNR of the held-out view, if one is configured.
    pub fn holdout_psnr(&self) -> Option<f64> {
        let h = self.cfg.holdout_view?;
        let geom = &self.stack.geometry;
        let img = render(&self.state.scene, &geom.view(self.stack.angles[h]), geom, &self.cfg.render).image;
        let truth = &self.stack.images[h];
        let mse = img.data.iter().zip(&truth.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / img.data.len() as f64;
        let peak = truth.max();
        Some(if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (peak * peak / mse).log10()
        })
    }

    /// Runs a single iteration, including densification and logging when due.
    pub fn step(&mut self) -> Result<()> {
        let views: Vec<usize> = (0..self.cfg.views_per_step)
            .map(|_| self.train_views[self.state.rng.random_range(0..self.train_views.len())])
            .collect();
        let out = train_step(&mut self.state, self.stack, &views, &self.cfg, self.data_range)?;
        let it = self.state.iteration;
        if it >= self.cfg.densify_start && it <= self.cfg.densify_end && it % self.cfg.densify_interval == 0 {
            let r = densify_and_prune(&mut self.state, &self.cfg);
            log::debug!("iteration {it}: {r:?}, M = {}", self.state.scene.len());
        }
        self.window.0 += out.loss;
        self.window.1 += out.l1;
        self.window.2 += out.ssim_term;
        self.window.3 += 1;
        if it % self.cfg.log_interval == 0 || it == self.cfg.iterations {
            let n = self.window.3 as f64;
            let rec = MetricsRecord {
                iter: it,
                loss: self.window.0 / n,
                l1: self.window.1 / n,
                ssim_term: self.window.2 / n,
                m: self.state.scene.len(),
                wall_ms: self
                    .cfg
                    .record_wall_time
                    .then(|| self.started.elapsed().as_secs_f64() * 1e3),
                holdout_psnr: self.holdout_psnr(),
            };
            log::info!(
                "iter {} loss {:.5} M {}",
                rec.iter,
                rec.loss,
                rec.m
            );
            if let Some(tx) = &self.sink {
                let _ = tx.send(rec.clone());
            }
            self.records.push(rec);
            self.window = (0.0, 0.0, 0.0, 0);
        }
        Ok(())
    }

    /// Steps until `iteration == target` or the configured end.
    pub fn run_until(&mut self, target: usize) -> Result<()> {
        while self.state.iteration < target.min(self.cfg.iterations) {
            self.step()?;
        }
        Ok(())
    }
}

/// Full training run. Returns the final scene and the metrics records.
pub fn train(
    stack: &ProjectionStack,
    init: GaussianScene,
    cfg: &TrainConfig,
) -> Result<(GaussianScene, Vec<MetricsRecord>)> {
    if cfg.iterations == 0 {
        return Ok((init, Vec::new()));
    }
    let mut t = Trainer::new(stack, init, cfg.clone())?;
    t.run_until(cfg.iterations)?;
    Ok((t.state.scene, t.records))
}

/// Training loss averaged over every view of `stack`.
pub fn dataset_loss(scene: &GaussianScene, stack: &ProjectionStack, cfg: &TrainConfig) -> Result<f64> {
    let geom = &stack.geometry;
    let range = stack.dynamic_range();
    let mut total = 0.0;
    for (angle, measured) in stack.angles.iter().zip(&stack.images) {
        let r = render(scene, &geom.view(*angle), geom, &cfg.render).image;
        total += compute_loss(&r, measured, cfg.lambda_ssim, range)?.total;
    }
    Ok(total / stack.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Detector, LaminographyGeometry};
    use crate::types::Aabb;

    fn geom() -> LaminographyGeometry {
        LaminographyGeometry::new(0.5, 7.0, 14.0, Detector { nu: 24, nv: 24, pixel_size: 0.08 }).unwrap()
    }

    fn one(pos: [f64; 3], s: f64) -> GaussianScene {
        let mut sc = GaussianScene::empty(Aabb::centered_cube(1.0));
        sc.push_activated(1.0, Vector3::from(pos), [1.0, 0.0, 0.0, 0.0], Vector3::repeat(s));
        sc
    }

    fn stack_of(scene: &GaussianScene, n: usize) -> ProjectionStack {
        let g = geom();
        let angles: Vec<f64> = (0..n).map(|i| i as f64 * std::f64::consts::TAU / n as f64).collect();
        let images = angles
            .iter()
            .map(|&a| render(scene, &g.view(a), &g, &RenderSettings::default()).image)
            .collect();
        ProjectionStack::new(g, angles, images).unwrap()
    }

    fn quiet(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            densify_start: 0,
            densify_end: iterations,
            densify_interval: usize::MAX,
            record_wall_time: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_matches_reference_scalar() {
        let p = AdamParams::default();
        let (mut x, mut m, mut v) = (3.0, 0.0, 0.0);
        let (mut rx, mut rm, mut rv) = (3.0f64, 0.0f64, 0.0f64);
        for t in 1..=100u64 {
            let g = 2.0 * (x - 1.0);
            adam_update(&mut x, g, &mut m, &mut v, 0.01, t, &p);
            let rg = 2.0 * (rx - 1.0);
            rm = 0.9 * rm + 0.1 * rg;
            rv = 0.999 * rv + 0.001 * rg * rg;
            let mh = rm / (1.0 - 0.9f64.powf(t as f64));
            let vh = rv / (1.0 - 0.999f64.powf(t as f64));
            rx -= 0.01 * mh / (vh.sqrt() + 1e-15);
            assert!((x - rx).abs() < 1e-12, "step {t}");
        }
        assert!(x < 3.0);
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let img = Image::from_fn(16, 16, |u, v| (u * v) as f64 / 100.0);
        let l = compute_loss(&img, &img, 0.25, 2.25).unwrap();
        assert_eq!(l.l1, 0.0);
        assert!(l.ssim_term.abs() < 1e-12 && l.total.abs() < 1e-12);
    }

    #[test]
    fn constant_against_zero_closed_form() {
        let c = 0.3;
        let r = Image::from_fn(12, 12, |_, _| c);
        let m = Image::zeros(12, 12);
        let l = compute_loss(&r, &m, 0.25, 1.0).unwrap();
        assert!((l.l1 - c).abs() < 1e-15);
        // μ_y = 0 and σ_y = σ_xy = 0 give SSIM = C1 C2 / ((μx² + C1)(σx² + C2))
        // per pixel, with μx and σx² from the zero-padded window.
        let mx = crate::ssim::blur(&r);
        let exx = crate::ssim::blur(&Image::from_fn(12, 12, |_, _| c * c));
        let (c1, c2) = (1e-4, 9e-4);
        let want: f64 = (0..144)
            .map(|p| c1 * c2 / ((mx.data[p].powi(2) + c1) * (exx.data[p] - mx.data[p].powi(2) + c2)))
            .sum::<f64>()
            / 144.0;
        assert!((l.ssim_term - (1.0 - want)).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = Image::from_fn(16, 16, |_, _| rng.random::<f64>());
        let m = Image::from_fn(16, 16, |_, _| rng.random::<f64>());
        let l = compute_loss(&r, &m, 0.25, 1.0).unwrap();
        let h = 1e-7;
        for p in [3, 40, 129, 255] {
            let mut a = r.clone();
            a.data[p] += h;
            let mut b = r.clone();
            b.data[p] -= h;
            let fd = (compute_loss(&a, &m, 0.25, 1.0).unwrap().total - compute_loss(&b, &m, 0.25, 1.0).unwrap().total)
                / (2.0 * h);
            assert!(((fd - l.grad.data[p]) / fd).abs() < 1e-4, "{p}: {fd} vs {}", l.grad.data[p]);
        }
    }

    #[test]
    fn zero_iterations_return_init() {
        let sc = one([0.0; 3], 0.1);
        let stack = stack_of(&sc, 4);
        let (out, recs) = train(&stack, sc.clone(), &quiet(0)).unwrap();
        assert_eq!(out, sc);
        assert!(recs.is_empty());
    }

    #[test]
    fn fixed_point_stays_put() {
        let sc = one([0.05, -0.02, 0.0], 0.1);
        let stack = stack_of(&sc, 8);
        let mut t = Trainer::new(&stack, sc.clone(), quiet(10)).unwrap();
        t.run_until(10).unwrap();
        let a = &t.state.scene.gaussians[0];
        let b = &sc.gaussians[0];
        assert!((a.position - b.position).norm() < 1e-6);
        assert!((a.raw_density - b.raw_density).abs() < 1e-6);
        assert!(t.state.loss_history.iter().all(|&l| l <= 1e-9));
    }

    #[test]
    fn zero_learning_rates_only_advance_counters() {
        let truth = one([0.1, 0.0, 0.0], 0.1);
        let stack = stack_of(&truth, 6);
        let init = one([0.0; 3], 0.12);
        let mut cfg = quiet(5);
        cfg.lr = LearningRates {
            density: 0.0,
            position: 0.0,
            position_final: 0.0,
            rotation: 0.0,
            scale: 0.0,
        };
        let mut t = Trainer::new(&stack, init.clone(), cfg).unwrap();
        t.run_until(5).unwrap();
        assert_eq!(t.state.iteration, 5);
        assert_eq!(t.state.scene, init);
    }

    #[test]
    fn displaced_gaussian_converges() {
        let truth = one([0.08, -0.05, 0.04], 0.08);
        let stack = stack_of(&truth, 12);
        let init = one([0.0, 0.0, 0.0], 0.08);
        let mut cfg = quiet(2000);
        cfg.lr.position = 2e-3;
        cfg.lr.position_final = 2e-4;
        let (out, _) = train(&stack, init, &cfg).unwrap();
        let err = (out.gaussians[0].position - truth.gaussians[0].position).norm();
        // A tenth of a voxel of a 64³ grid over the unit cube.
        assert!(err < 0.1 / 64.0, "error {err}");
    }

    #[test]
    fn densify_without_candidates_is_a_no_op() {
        let sc = one([0.0; 3], 0.05);
        let mut st = TrainState::new(sc.clone(), 1);
        let r = densify_and_prune(&mut st, &TrainConfig::default());
        assert_eq!(r, DensifyReport::default());
        assert_eq!(st.scene, sc);
    }

    #[test]
    fn small_high_gradient_gaussian_clones_once() {
        let mut sc = one([0.0; 3], 0.002);
        sc.push_activated(1.0, Vector3::new(0.2, 0.0, 0.0), [1.0, 0.0, 0.0, 0.0], Vector3::repeat(0.05));
        let mut st = TrainState::new(sc, 1);
        st.grad_accum[0] = 1.0;
        st.grad_count[0] = 2;
        st.density.m[1] = 0.5;
        let r = densify_and_prune(&mut st, &TrainConfig::default());
        assert_eq!(r.cloned, 1);
        assert_eq!(st.scene.len(), 3);
        assert!(st.is_consistent());
        // The untouched Gaussian keeps its moments; the clone starts at zero.
        assert_eq!(st.density.m, vec![0.0, 0.0, 0.5]);
        assert!((st.scene.gaussians[0].density() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn large_high_gradient_gaussian_splits() {
        let sc = one([0.0; 3], 0.1);
        let mut st = TrainState::new(sc, 2);
        st.grad_accum[0] = 1.0;
        st.grad_count[0] = 1;
        let r = densify_and_prune(&mut st, &TrainConfig::default());
        assert_eq!(r.split, 1);
        assert_eq!(st.scene.len(), 2);
        for g in st.scene.iter_activated() {
            assert!((g.max_scale() - 0.1 / 1.6).abs() < 1e-9);
        }
        assert!(st.is_consistent());
    }

    #[test]
    fn prune_never_empties_the_scene() {
        let sc = one([0.0; 3], 0.9);
        let mut st = TrainState::new(sc, 3);
        let r = densify_and_prune(&mut st, &TrainConfig::default());
        assert!(r.prune_skipped);
        assert_eq!(st.scene.len(), 1);
    }

    #[test]
    fn runs_are_reproducible() {
        let truth = one([0.05, 0.0, -0.03], 0.07);
        let stack = stack_of(&truth, 6);
        let mut cfg = quiet(60);
        cfg.densify_start = 10;
        cfg.densify_end = 50;
        cfg.densify_interval = 10;
        cfg.log_interval = 10;
        let init = one([0.0; 3], 0.1);
        let a = train(&stack, init.clone(), &cfg).unwrap();
        let b = train(&stack, init, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            densify_start: 100,
            densify_end: 50,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { lambda_ssim: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { grad_threshold: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn desk_preset_is_valid_for_any_length() {
        for n in [0, 1, 2, 5, 9, 10, 100, 5000, 30_000] {
            TrainConfig::desk(n).validate().unwrap();
        }
        let c = TrainConfig::desk(5000);
        assert_eq!((c.densify_start, c.densify_end), (500, 4000));
    }
}
