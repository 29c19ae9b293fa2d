//! Resolved settings: defaults, then the `--config` file, then flags.

use std::fmt;
use std::path::Path;

use lamina_core::fdk::RampFilter;
use lamina_core::init::AfConfig;
use lamina_core::io::PhantomSpec;
use lamina_core::{GridSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DEFAULT_ITERATIONS: usize = 5000;
/// Initial Gaussian count unless the config file sets `af.num_points`.
pub const DEFAULT_POINTS: usize = 5000;

/// A bad flag value or config file. Exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    #[default]
    Af,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySettings {
    pub tilt_deg: f64,
    /// Detector pixels per side; defaults to the largest grid dimension.
    pub detector: Option<usize>,
    /// Source distances and pixel pitch; derived from the grid when unset.
    pub d_so: Option<f64>,
    pub d_sd: Option<f64>,
    pub pixel_size: Option<f64>,
}

impl Default for GeometrySettings {
    fn default() -> Self {
        Self {
            tilt_deg: 30.0,
            detector: None,
            d_so: None,
            d_sd: None,
            pixel_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub views: usize,
    /// Standard deviation of additive log-domain noise.
    pub noise_sigma: Option<f64>,
    pub samples_per_ray: usize,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            views: 50,
            noise_sigma: None,
            samples_per_ray: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdkSettings {
    pub filter: RampFilter,
    pub padding_factor: usize,
}

impl Default for FdkSettings {
    fn default() -> Self {
        Self {
            filter: RampFilter::default(),
            padding_factor: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileSettings {
    seed: u64,
    threads: usize,
    phantom: PhantomSpec,
    geometry: GeometrySettings,
    simulate: SimulateSettings,
    fdk: FdkSettings,
    init: InitMethod,
    af: AfConfig,
    train: Option<Value>,
}

/// Everything a subcommand may need.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub threads: usize,
    pub phantom: PhantomSpec,
    pub geometry: GeometrySettings,
    pub simulate: SimulateSettings,
    pub fdk: FdkSettings,
    pub init: InitMethod,
    pub af: AfConfig,
    pub train: TrainConfig,
    #[serde(skip)]
    train_file: Option<Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let raw: Value = match path {
            None => Value::Object(Default::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
            }
        };
        let mut file: FileSettings = serde_json::from_value(raw.clone())
            .map_err(|e| usage(format!("config {}: {e}", path.map(|p| p.display().to_string()).unwrap_or_default())))?;
        if raw.pointer("/af/num_points").is_none() {
            file.af.num_points = DEFAULT_POINTS;
        }
        let mut s = Self {
            seed: file.seed,
            threads: file.threads,
            phantom: file.phantom,
            geometry: file.geometry,
            simulate: file.simulate,
            fdk: file.fdk,
            init: file.init,
            af: file.af,
            train: TrainConfig::default(),
            train_file: file.train,
        };
        s.resolve_train(None)?;
        Ok(s)
    }

    /// Rebuilds the training config for `iterations` (flag value, else the
    /// file's, else the default). Keys set in the file win over the preset.
    pub fn resolve_train(&mut self, iterations: Option<usize>) -> anyhow::Result<()> {
        let from_file = self
            .train_file
            .as_ref()
            .and_then(|v| v.get("iterations"))
            .and_then(Value::as_u64)
            .map(|n| n as usize);
        let n = iterations.or(from_file).unwrap_or(DEFAULT_ITERATIONS);
        let mut base = serde_json::to_value(TrainConfig::desk(n)).expect("train config serializes");
        if let Some(Value::Object(over)) = &self.train_file {
            let obj = base.as_object_mut().expect("train config is an object");
            for (k, v) in over {
                obj.insert(k.clone(), v.clone());
            }
        } else if let Some(v) = &self.train_file {
            return Err(usage(format!("config key \"train\" must be an object, got {v}")));
        }
        let mut train: TrainConfig =
            serde_json::from_value(base).map_err(|e| usage(format!("config key \"train\": {e}")))?;
        train.iterations = n;
        self.train = train;
        Ok(())
    }

    /// Pushes the global seed into every seeded stage and disables wall
    /// times in single-worker mode so logs are reproducible.
    pub fn finalize(&mut self) {
        self.phantom.rng_seed = self.seed;
        self.af.rng_seed = self.seed;
        self.train.rng_seed = self.seed;
        if self.threads == 1 {
            self.train.record_wall_time = false;
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.phantom.grid()
    }

    pub fn set_dims(&mut self, n: usize, voxel_size: Option<f64>) {
        self.phantom.dims = [n; 3];
        self.phantom.voxel_size = voxel_size.unwrap_or(1.0 / n.max(1) as f64);
    }

    pub fn detector_size(&self) -> usize {
        self.geometry
            .detector
            .unwrap_or_else(|| self.phantom.dims.iter().copied().max().unwrap_or(1))
    }
}
