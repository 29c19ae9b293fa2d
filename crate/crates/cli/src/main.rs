mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lamina_core::fdk::RampFilter;
use lamina_core::io::PhantomKind;
use lamina_core::Axis;

use crate::config::{InitMethod, Settings, Usage};

#[derive(Parser, Debug)]
#[command(name = "lamina", version, about = "Gaussian reconstruction for tilted-axis laminography")]
struct Cli {
    /// JSON file whose keys mirror the configuration types; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core. 1 gives reproducible logs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic test volume.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        phantom: PhantomArgs,
    },
    /// Project a volume into a log-domain projection stack.
    Simulate {
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        acq: AcquisitionArgs,
    },
    /// Filtered backprojection of a projection stack.
    Fdk {
        #[arg(long)]
        projections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        fdk: FdkArgs,
    },
    /// Seed a Gaussian scene from a volume.
    Init {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        af: AfArgs,
    },
    /// Fit a Gaussian scene to a projection stack.
    Reconstruct {
        #[arg(long)]
        projections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log, one JSON record per line.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Start from this scene instead of initializing one.
        #[arg(long)]
        init_scene: Option<PathBuf>,
        /// Volume to initialize from; an FDK reconstruction is computed when absent.
        #[arg(long)]
        volume: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        fdk: FdkArgs,
        #[command(flatten)]
        af: AfArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Compare a volume or scene against a reference volume.
    Eval {
        /// Volume or scene file.
        input: PathBuf,
        /// Reference volume or scene.
        reference: PathBuf,
        #[arg(long, default_value = "z")]
        axis: Axis,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Write 8-bit PNG slices of a volume or scene.
    Export {
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "z")]
        axis: Axis,
        /// Display window as `lo,hi`; defaults to `0,max`.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Phantom, simulation, FDK, initialization, training and evaluation.
    Pipeline {
        #[arg(long, default_value = "lamina-out")]
        out_dir: PathBuf,
        /// Also export PNG slices of the reconstruction.
        #[arg(long)]
        slices: bool,
        #[command(flatten)]
        phantom: PhantomArgs,
        #[command(flatten)]
        acq: AcquisitionArgs,
        #[command(flatten)]
        fdk: FdkArgs,
        #[command(flatten)]
        af: AfArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args, Debug, Default)]
struct GridArgs {
    /// Voxels per side.
    #[arg(long)]
    dims: Option<usize>,
    /// Voxel pitch; defaults to `1/dims`.
    #[arg(long)]
    voxel_size: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct PhantomArgs {
    #[arg(long)]
    kind: Option<PhantomKind>,
    #[arg(long)]
    plate_fraction: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Debug, Default)]
struct AcquisitionArgs {
    #[arg(long, allow_negative_numbers = true)]
    tilt_deg: Option<f64>,
    #[arg(long)]
    views: Option<usize>,
    /// Detector pixels per side.
    #[arg(long)]
    detector: Option<usize>,
    /// Standard deviation of additive log-domain noise.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    samples_per_ray: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct FdkArgs {
    #[arg(long)]
    filter: Option<RampFilter>,
    #[arg(long)]
    padding_factor: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct AfArgs {
    #[arg(long, value_enum)]
    init: Option<InitMethod>,
    #[arg(long)]
    smoothing_sigma: Option<f64>,
    #[arg(long)]
    kernel_truncation: Option<f64>,
    #[arg(long)]
    otsu_bins: Option<usize>,
    /// Number of initial Gaussians.
    #[arg(long)]
    num_points: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lambda_ssim: Option<f64>,
    #[arg(long)]
    lr_density: Option<f64>,
    #[arg(long)]
    lr_position: Option<f64>,
    #[arg(long)]
    lr_position_final: Option<f64>,
    #[arg(long)]
    lr_rotation: Option<f64>,
    #[arg(long)]
    lr_scale: Option<f64>,
    #[arg(long)]
    densify_start: Option<usize>,
    #[arg(long)]
    densify_end: Option<usize>,
    #[arg(long)]
    densify_interval: Option<usize>,
    #[arg(long)]
    grad_threshold: Option<f64>,
    /// 0 for no cap.
    #[arg(long)]
    max_gaussians: Option<usize>,
    #[arg(long)]
    views_per_step: Option<usize>,
    #[arg(long)]
    log_interval: Option<usize>,
    /// Exclude this view from training and log its PSNR.
    #[arg(long)]
    holdout_view: Option<usize>,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(hi > lo) {
        return Err(format!("window upper bound {hi} must exceed {lo}"));
    }
    Ok((lo, hi))
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl GridArgs {
    fn apply(&self, s: &mut Settings) {
        if self.dims.is_some() || self.voxel_size.is_some() {
            let n = self.dims.unwrap_or(s.phantom.dims[0]);
            s.set_dims(n, self.voxel_size);
        }
    }
}

impl PhantomArgs {
    fn apply(&self, s: &mut Settings) {
        self.grid.apply(s);
        set!(self.kind => s.phantom.kind);
        set!(self.plate_fraction => s.phantom.plate_fraction);
    }
}

impl AcquisitionArgs {
    fn apply(&self, s: &mut Settings) {
        set!(self.tilt_deg => s.geometry.tilt_deg);
        set!(self.views => s.simulate.views);
        set!(self.samples_per_ray => s.simulate.samples_per_ray);
        if let Some(d) = self.detector {
            s.geometry.detector = Some(d);
        }
        if let Some(n) = self.noise {
            s.simulate.noise_sigma = Some(n);
        }
    }
}

impl FdkArgs {
    fn apply(&self, s: &mut Settings) {
        set!(self.filter => s.fdk.filter);
        set!(self.padding_factor => s.fdk.padding_factor);
    }
}

impl AfArgs {
    fn apply(&self, s: &mut Settings) {
        set!(self.init => s.init);
        set!(self.smoothing_sigma => s.af.smoothing_sigma);
        set!(self.kernel_truncation => s.af.kernel_truncation);
        set!(self.otsu_bins => s.af.otsu_bins);
        set!(self.num_points => s.af.num_points);
    }
}

impl TrainArgs {
    fn apply(&self, s: &mut Settings) -> anyhow::Result<()> {
        if self.iterations.is_some() {
            s.resolve_train(self.iterations)?;
        }
        let t = &mut s.train;
        set!(self.lambda_ssim => t.lambda_ssim);
        set!(self.lr_density => t.lr.density);
        set!(self.lr_position => t.lr.position);
        set!(self.lr_position_final => t.lr.position_final);
        set!(self.lr_rotation => t.lr.rotation);
        set!(self.lr_scale => t.lr.scale);
        set!(self.densify_start => t.densify_start);
        set!(self.densify_end => t.densify_end);
        set!(self.densify_interval => t.densify_interval);
        set!(self.grad_threshold => t.grad_threshold);
        set!(self.max_gaussians => t.max_gaussians);
        set!(self.views_per_step => t.views_per_step);
        set!(self.log_interval => t.log_interval);
        if let Some(h) = self.holdout_view {
            t.holdout_view = Some(h);
        }
        Ok(())
    }
}

fn settings(cli: &Cli) -> anyhow::Result<Settings> {
    let mut s = Settings::load(cli.config.as_deref())?;
    set!(cli.seed => s.seed);
    set!(cli.threads => s.threads);
    match &cli.command {
        Command::Phantom { phantom, .. } => phantom.apply(&mut s),
        Command::Simulate { acq, .. } => acq.apply(&mut s),
        Command::Fdk { grid, fdk, .. } => {
            grid.apply(&mut s);
            fdk.apply(&mut s);
        }
        Command::Init { af, .. } => af.apply(&mut s),
        Command::Reconstruct { grid, fdk, af, train, .. } => {
            grid.apply(&mut s);
            fdk.apply(&mut s);
            af.apply(&mut s);
            train.apply(&mut s)?;
        }
        Command::Eval { grid, .. } | Command::Export { grid, .. } => grid.apply(&mut s),
        Command::Pipeline {
            phantom,
            acq,
            fdk,
            af,
            train,
            ..
        } => {
            phantom.apply(&mut s);
            acq.apply(&mut s);
            fdk.apply(&mut s);
            af.apply(&mut s);
            train.apply(&mut s)?;
        }
    }
    s.finalize();
    Ok(s)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let s = settings(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(s.threads)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    match cli.command {
        Command::Phantom { out, .. } => commands::phantom(&s, &out),
        Command::Simulate { phantom, out, .. } => commands::simulate(&s, &phantom, &out),
        Command::Fdk { projections, out, .. } => commands::fdk(&s, &projections, &out),
        Command::Init { volume, out, .. } => commands::init(&s, &volume, &out),
        Command::Reconstruct {
            projections,
            out,
            metrics,
            init_scene,
            volume,
            ..
        } => commands::reconstruct(
            &s,
            &projections,
            &out,
            metrics.as_deref(),
            init_scene.as_deref(),
            volume.as_deref(),
        ),
        Command::Eval {
            input,
            reference,
            axis,
            out,
            grid,
        } => commands::eval(&s, &input, &reference, axis, out.as_deref(), grid.dims.is_some()),
        Command::Export {
            input,
            out_dir,
            axis,
            window,
            grid,
        } => commands::export(&s, &input, &out_dir, axis, window, grid.dims.is_some()),
        Command::Pipeline { out_dir, slices, .. } => commands::pipeline(&s, &out_dir, slices),
    }
}

/// 1 for bad input (flags, config, parameter ranges, shapes), 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<lamina_core::Error>() {
            return match e {
                lamina_core::Error::Invalid { .. }
                | lamina_core::Error::Shape(_)
                | lamina_core::Error::GridOverflow { .. } => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
