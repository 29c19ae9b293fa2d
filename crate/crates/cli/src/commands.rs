use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use anyhow::{Context, Result};
use lamina_core::fdk::{reconstruct as fdk_reconstruct, FdkConfig};
use lamina_core::init::{initialize_scene, uniform_scene};
use lamina_core::io::{
    export_slices, generate_phantom, read_projections, read_scene, read_volume, simulate_dataset, write_projections,
    write_scene, write_volume, PhantomKind, SCENE_MAGIC,
};
use lamina_core::metrics::{capped_db, energy_outside_slab, psnr_volume, ssim_slices};
use lamina_core::optim::{dataset_loss, MetricsRecord, Trainer};
use lamina_core::{Axis, GaussianScene, GridSpec, LaminographyGeometry, ProjectionStack, Volume};
use serde::Serialize;

use crate::config::{usage, InitMethod, Settings};

pub fn geometry(s: &Settings, grid: &GridSpec) -> Result<LaminographyGeometry> {
    let g = &s.geometry;
    if !(0.0..=90.0).contains(&g.tilt_deg) {
        return Err(usage(format!("--tilt-deg {} is outside [0, 90]", g.tilt_deg)));
    }
    let n = s.detector_size();
    let mut geom = LaminographyGeometry::for_bounds(&grid.bounds(), g.tilt_deg.to_radians(), n, n)?;
    if let Some(d) = g.d_so {
        geom.d_so = d;
    }
    if let Some(d) = g.d_sd {
        geom.d_sd = d;
    }
    if let Some(p) = g.pixel_size {
        geom.detector.pixel_size = p;
    }
    geom.validate()?;
    Ok(geom)
}

fn fdk_config(s: &Settings, grid: GridSpec) -> FdkConfig {
    FdkConfig {
        filter: s.fdk.filter,
        padding_factor: s.fdk.padding_factor,
        grid,
    }
}

fn is_scene(path: &Path) -> Result<bool> {
    let mut f = fs::File::open(path).with_context(|| path.display().to_string())?;
    let mut head = [0u8; 4];
    Ok(f.read_exact(&mut head).is_ok() && &head == SCENE_MAGIC)
}

enum Field {
    Volume(Volume),
    Scene(GaussianScene),
}

impl Field {
    fn load(path: &Path) -> Result<Self> {
        Ok(if is_scene(path)? {
            Field::Scene(read_scene(path)?)
        } else {
            Field::Volume(read_volume(path)?)
        })
    }

    fn grid(&self) -> Option<GridSpec> {
        match self {
            Field::Volume(v) => Some(v.grid),
            Field::Scene(_) => None,
        }
    }

    fn into_volume(self, grid: &GridSpec) -> Result<Volume> {
        match self {
            Field::Volume(v) => Ok(v),
            Field::Scene(sc) => Ok(sc.rasterize(grid)?),
        }
    }
}

pub fn phantom(s: &Settings, out: &Path) -> Result<()> {
    let vol = generate_phantom(&s.phantom)?;
    write_volume(out, &vol)?;
    log::info!("wrote {:?} phantom {:?} to {}", s.phantom.kind, vol.dims(), out.display());
    Ok(())
}

fn simulate_stack(s: &Settings, vol: &Volume) -> Result<ProjectionStack> {
    let geom = geometry(s, &vol.grid)?;
    Ok(simulate_dataset(
        vol,
        &geom,
        s.simulate.views,
        s.simulate.noise_sigma,
        s.seed,
        s.simulate.samples_per_ray,
    )?)
}

pub fn simulate(s: &Settings, phantom: &Path, out: &Path) -> Result<()> {
    let vol = read_volume(phantom)?;
    let stack = simulate_stack(s, &vol)?;
    write_projections(out, &stack)?;
    log::info!("wrote {} views to {}", stack.len(), out.display());
    Ok(())
}

pub fn fdk(s: &Settings, projections: &Path, out: &Path) -> Result<()> {
    let stack = read_projections(projections)?;
    let vol = fdk_reconstruct(&stack, &fdk_config(s, s.grid()))?;
    write_volume(out, &vol)?;
    Ok(())
}

fn seed_scene(s: &Settings, vol: &Volume) -> Result<GaussianScene> {
    let bounds = vol.grid.bounds();
    Ok(match s.init {
        InitMethod::Af => initialize_scene(vol, &s.af, &bounds)?,
        InitMethod::Uniform => uniform_scene(vol, s.af.num_points, s.seed, &bounds)?,
    })
}

pub fn init(s: &Settings, volume: &Path, out: &Path) -> Result<()> {
    let vol = read_volume(volume)?;
    let scene = seed_scene(s, &vol)?;
    write_scene(out, &scene)?;
    log::info!("wrote {} Gaussians to {}", scene.len(), out.display());
    Ok(())
}

/// Trains from `init`, streaming records to `metrics` as they arrive.
fn train(s: &Settings, stack: &ProjectionStack, init: GaussianScene, metrics: Option<&Path>) -> Result<GaussianScene> {
    let mut writer = match metrics {
        Some(p) => Some(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let (tx, rx) = mpsc::channel::<MetricsRecord>();
    let trainer = Trainer::new(stack, init, s.train.clone())?.with_sink(tx);
    std::thread::scope(|scope| -> Result<GaussianScene> {
        let logger = scope.spawn(move || -> std::io::Result<()> {
            for rec in rx {
                if let Some(w) = writer.as_mut() {
                    serde_json::to_writer(&mut *w, &rec)?;
                    w.write_all(b"\n")?;
                    w.flush()?;
                }
            }
            Ok(())
        });
        let mut trainer = trainer;
        let result = trainer.run_until(s.train.iterations);
        let scene = trainer.into_scene();
        logger
            .join()
            .map_err(|_| anyhow::anyhow!("metrics writer panicked"))?
            .context("writing metrics log")?;
        result?;
        Ok(scene)
    })
}

pub fn reconstruct(
    s: &Settings,
    projections: &Path,
    out: &Path,
    metrics: Option<&Path>,
    init_scene: Option<&Path>,
    volume: Option<&Path>,
) -> Result<()> {
    let stack = read_projections(projections)?;
    let init = match (init_scene, volume) {
        (Some(p), _) => read_scene(p)?,
        (None, Some(v)) => seed_scene(s, &read_volume(v)?)?,
        (None, None) => seed_scene(s, &fdk_reconstruct(&stack, &fdk_config(s, s.grid()))?)?,
    };
    let scene = train(s, &stack, init, metrics)?;
    write_scene(out, &scene)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    /// Capped for reporting; see `identical`.
    pub psnr_db: f64,
    pub identical: bool,
    pub ssim: f64,
    pub axis: Axis,
}

fn evaluate(a: &Volume, reference: &Volume, axis: Axis) -> Result<EvalReport> {
    let p = psnr_volume(a, reference, None)?;
    Ok(EvalReport {
        psnr_db: capped_db(p),
        identical: p.is_infinite(),
        ssim: ssim_slices(a, reference, axis)?,
        axis,
    })
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    print!("{text}");
    if let Some(p) = out {
        fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn eval(
    s: &Settings,
    input: &Path,
    reference: &Path,
    axis: Axis,
    out: Option<&Path>,
    grid_flag: bool,
) -> Result<()> {
    let a = Field::load(input)?;
    let b = Field::load(reference)?;
    let grid = match (grid_flag, b.grid().or(a.grid())) {
        (false, Some(g)) => g,
        _ => s.grid(),
    };
    let report = evaluate(&a.into_volume(&grid)?, &b.into_volume(&grid)?, axis)?;
    print_json(&report, out)
}

pub fn export(
    s: &Settings,
    input: &Path,
    out_dir: &Path,
    axis: Axis,
    window: Option<(f64, f64)>,
    grid_flag: bool,
) -> Result<()> {
    let f = Field::load(input)?;
    let grid = match (grid_flag, f.grid()) {
        (false, Some(g)) => g,
        _ => s.grid(),
    };
    let paths = export_slices(&f.into_volume(&grid)?, axis, out_dir, window)?;
    log::info!("wrote {} slices to {}", paths.len(), out_dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct PipelineReport {
    views: usize,
    tilt_deg: f64,
    iterations: usize,
    gaussians: usize,
    dataset_loss: f64,
    fdk: EvalReport,
    initial: EvalReport,
    reconstruction: EvalReport,
    /// Sum of squared values outside the plate slab, for plate phantoms.
    #[serde(skip_serializing_if = "Option::is_none")]
    energy_outside_plate: Option<[f64; 2]>,
}

pub struct PipelinePaths {
    pub phantom: PathBuf,
    pub projections: PathBuf,
    pub fdk: PathBuf,
    pub init: PathBuf,
    pub scene: PathBuf,
    pub volume: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub settings: PathBuf,
}

impl PipelinePaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            phantom: dir.join("phantom.vol"),
            projections: dir.join("projections.proj"),
            fdk: dir.join("fdk.vol"),
            init: dir.join("init.lgsc"),
            scene: dir.join("scene.lgsc"),
            volume: dir.join("reconstruction.vol"),
            metrics: dir.join("metrics.jsonl"),
            report: dir.join("report.json"),
            settings: dir.join("settings.json"),
        }
    }
}

/// Each stage writes its output and the next stage reads it back, so the
/// result matches running the subcommands one by one.
pub fn pipeline(s: &Settings, out_dir: &Path, slices: bool) -> Result<()> {
    let grid = s.grid();
    geometry(s, &grid)?;
    s.phantom.validate()?;
    s.af.validate()?;
    s.train.validate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let p = PipelinePaths::new(out_dir);
    fs::write(&p.settings, serde_json::to_string_pretty(s)? + "\n")?;

    phantom(s, &p.phantom)?;
    let truth = read_volume(&p.phantom)?;
    log::info!("simulating {} views", s.simulate.views);
    simulate(s, &p.phantom, &p.projections)?;
    fdk(s, &p.projections, &p.fdk)?;
    let fdk_vol = read_volume(&p.fdk)?;
    init(s, &p.fdk, &p.init)?;
    let init_scene = read_scene(&p.init)?;
    let stack = read_projections(&p.projections)?;
    log::info!("training {} iterations from {} Gaussians", s.train.iterations, init_scene.len());
    let initial = evaluate(&init_scene.rasterize(&grid)?, &truth, Axis::Z)?;
    let scene = train(s, &stack, init_scene, Some(&p.metrics))?;
    write_scene(&p.scene, &scene)?;
    let scene = read_scene(&p.scene)?;
    let recon = scene.rasterize(&grid)?;
    write_volume(&p.volume, &recon)?;
    let recon = read_volume(&p.volume)?;

    let energy_outside_plate = (s.phantom.kind == PhantomKind::EngineLike).then(|| {
        let (k0, k1) = s.phantom.plate_slices();
        [energy_outside_slab(&fdk_vol, k0, k1), energy_outside_slab(&recon, k0, k1)]
    });
    let report = PipelineReport {
        views: stack.len(),
        tilt_deg: s.geometry.tilt_deg,
        iterations: s.train.iterations,
        gaussians: scene.len(),
        dataset_loss: dataset_loss(&scene, &stack, &s.train)?,
        fdk: evaluate(&fdk_vol, &truth, Axis::Z)?,
        initial,
        reconstruction: evaluate(&recon, &truth, Axis::Z)?,
        energy_outside_plate,
    };
    print_json(&report, Some(&p.report))?;
    if slices {
        export_slices(&recon, Axis::Z, &out_dir.join("slices"), Some((0.0, truth.max())))?;
    }
    Ok(())
}
