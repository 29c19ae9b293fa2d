//! File formats, phantoms, dataset simulation, and slice export.
//!
//! Binary payloads are little-endian `f32`. Volumes and projection stacks
//! carry a JSON sidecar at `<path>.json`; scene files carry one for the
//! scene box, which the binary records do not store.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Detector, LaminographyGeometry};
use crate::oracle::raymarch_project_volume;
use crate::types::{Aabb, Axis, GaussianScene, GridSpec, Image, ProjectionStack, RadiativeGaussian, Volume};

pub const SCENE_MAGIC: &[u8; 4] = b"LGSC";
pub const SCENE_VERSION: u32 = 1;
const RECORD_FLOATS: usize = 11;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn format_err(kind: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("sidecar types always serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(kind: &'static str, path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(kind, path, e.to_string()))
}

fn write_f32s(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&(v as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_f32s(kind: &'static str, path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * expected {
        return Err(format_err(
            kind,
            path,
            format!("expected {} bytes, found {}", 4 * expected, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[derive(Serialize, Deserialize)]
struct SceneSidecar {
    bounds: Aabb,
}

/// Serializes the scene records to bytes.
pub fn scene_to_bytes(scene: &GaussianScene) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + scene.len() * RECORD_FLOATS * 4);
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    for g in &scene.gaussians {
        let rec = [
            g.raw_density,
            g.position.x,
            g.position.y,
            g.position.z,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
            g.raw_scale.x,
            g.raw_scale.y,
            g.raw_scale.z,
        ];
        for v in rec {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Parses scene records; `bounds` supplies the box the records lack.
pub fn scene_from_bytes(bytes: &[u8], bounds: Aabb, path: &Path) -> Result<GaussianScene> {
    let mut r = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if r.len() < n {
            return Err(format_err("scene", path, "truncated"));
        }
        let (a, b) = r.split_at(n);
        r = b;
        Ok(a)
    };
    if take(4)? != SCENE_MAGIC {
        return Err(format_err("scene", path, "bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != SCENE_VERSION {
        return Err(format_err("scene", path, format!("unsupported version {version}")));
    }
    let m = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let body = take(m.checked_mul(RECORD_FLOATS * 4).ok_or_else(|| format_err("scene", path, "count overflow"))?)?;
    if !r.is_empty() {
        return Err(format_err("scene", path, "trailing bytes"));
    }
    let floats: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if floats.iter().any(|v| !v.is_finite()) {
        return Err(format_err("scene", path, "non-finite parameter"));
    }
    let gaussians = floats
        .chunks_exact(RECORD_FLOATS)
        .map(|f| RadiativeGaussian {
            raw_density: f[0],
            position: Vector3::new(f[1], f[2], f[3]),
            rotation: [f[4], f[5], f[6], f[7]],
            raw_scale: Vector3::new(f[8], f[9], f[10]),
        })
        .collect();
    Ok(GaussianScene::new(gaussians, bounds))
}

pub fn write_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    fs::write(path, scene_to_bytes(scene)).map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), &SceneSidecar { bounds: *scene.bounds() })
}

pub fn read_scene(path: &Path) -> Result<GaussianScene> {
    let side: SceneSidecar = read_json("scene sidecar", &sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    scene_from_bytes(&bytes, side.bounds, path)
}

#[derive(Serialize, Deserialize)]
struct VolumeSidecar {
    dims: [usize; 3],
    voxel_size: f64,
    origin: [f64; 3],
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    write_f32s(path, vol.data.iter().copied())?;
    let g = vol.grid;
    write_json(
        &sidecar_path(path),
        &VolumeSidecar {
            dims: g.dims,
            voxel_size: g.voxel_size,
            origin: g.origin,
        },
    )
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let side_path = sidecar_path(path);
    let side: VolumeSidecar = read_json("volume sidecar", &side_path)?;
    let grid = GridSpec {
        dims: side.dims,
        voxel_size: side.voxel_size,
        origin: side.origin,
    };
    grid.validate().map_err(|e| format_err("volume sidecar", &side_path, e.to_string()))?;
    let data = read_f32s("volume", path, grid.voxel_count()?)?;
    Volume::from_data(grid, data).map_err(|e| format_err("volume", path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct ProjectionSidecar {
    nu: usize,
    nv: usize,
    pixel_size: f64,
    angles_rad: Vec<f64>,
    tilt_alpha_rad: f64,
    d_so: f64,
    d_sd: f64,
}

pub fn write_projections(path: &Path, stack: &ProjectionStack) -> Result<()> {
    write_f32s(path, stack.images.iter().flat_map(|i| i.data.iter().copied()))?;
    let g = stack.geometry;
    write_json(
        &sidecar_path(path),
        &ProjectionSidecar {
            nu: g.detector.nu,
            nv: g.detector.nv,
            pixel_size: g.detector.pixel_size,
            angles_rad: stack.angles.clone(),
            tilt_alpha_rad: g.tilt,
            d_so: g.d_so,
            d_sd: g.d_sd,
        },
    )
}

pub fn read_projections(path: &Path) -> Result<ProjectionStack> {
    let side_path = sidecar_path(path);
    let s: ProjectionSidecar = read_json("projection sidecar", &side_path)?;
    let geom = LaminographyGeometry::new(
        s.tilt_alpha_rad,
        s.d_so,
        s.d_sd,
        Detector {
            nu: s.nu,
            nv: s.nv,
            pixel_size: s.pixel_size,
        },
    )
    .map_err(|e| format_err("projection sidecar", &side_path, e.to_string()))?;
    let per = s.nu * s.nv;
    let data = read_f32s("projection", path, per * s.angles_rad.len())?;
    let images = data
        .chunks_exact(per.max(1))
        .map(|c| Image {
            width: s.nu,
            height: s.nv,
            data: c.to_vec(),
        })
        .collect();
    ProjectionStack::new(geom, s.angles_rad, images).map_err(|e| format_err("projection", path, e.to_string()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    #[default]
    EngineLike,
    NestedShells,
    RandomEllipsoids,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "engine-like" | "engine" => Ok(PhantomKind::EngineLike),
            "nested-shells" | "shells" => Ok(PhantomKind::NestedShells),
            "random-ellipsoids" | "ellipsoids" => Ok(PhantomKind::RandomEllipsoids),
            other => Err(Error::invalid("phantom kind", format!("unknown kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    pub voxel_size: f64,
    /// Plate thickness as a fraction of the z extent.
    pub plate_fraction: f64,
    /// Base material and dense inserts.
    pub levels: [f64; 2],
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            kind: PhantomKind::EngineLike,
            dims: [64; 3],
            voxel_size: 1.0 / 64.0,
            plate_fraction: 0.25,
            levels: [1.0, 2.0],
            rng_seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        GridSpec::centered_dims(self.dims, self.voxel_size).validate()?;
        if !(self.plate_fraction > 0.0 && self.plate_fraction < 1.0) {
            return Err(Error::invalid("plate_fraction", format!("{} is outside (0, 1)", self.plate_fraction)));
        }
        if self.levels.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::invalid("levels", "density levels must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::centered_dims(self.dims, self.voxel_size)
    }

    /// First and one-past-last z index of the plate slab.
    pub fn plate_slices(&self) -> (usize, usize) {
        let nz = self.dims[2];
        let t = ((self.plate_fraction * nz as f64).round() as usize).clamp(1, nz);
        let k0 = (nz - t) / 2;
        (k0, k0 + t)
    }
}

fn inside_ellipsoid(x: &Vector3<f64>, c: &Vector3<f64>, r: &Vector3<f64>) -> bool {
    ((x - c).component_div(r)).norm_squared() <= 1.0
}

/// A deterministic test object of the requested kind. Every voxel holds 0
/// or one of the configured levels.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let grid = spec.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let b = grid.bounds();
    let half = b.size() * 0.5;
    let [base, dense] = spec.levels;
    let mut vol = Volume::zeros(grid)?;
    let [nx, ny, nz] = grid.dims;
    match spec.kind {
        PhantomKind::EngineLike => {
            let (k0, k1) = spec.plate_slices();
            let z_lo = grid.voxel_center(0, 0, k0).z;
            let z_hi = grid.voxel_center(0, 0, k1 - 1).z;
            let z_mid = 0.5 * (z_lo + z_hi);
            let thick = z_hi - z_lo + grid.voxel_size;
            let radius = 0.84 * half.x.min(half.y);
            let mut cavities = Vec::new();
            for _ in 0..5 {
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let rr = rng.random_range(0.15..0.7) * radius;
                cavities.push((
                    Vector3::new(rr * ang.cos(), rr * ang.sin(), z_mid),
                    Vector3::new(
                        rng.random_range(0.08..0.18) * radius,
                        rng.random_range(0.08..0.18) * radius,
                        0.3 * thick,
                    ),
                ));
            }
            // Pipes: cylinders along x or y through the plate mid-plane.
            let mut pipes = Vec::new();
            for i in 0..3 {
                let offset = rng.random_range(-0.6..0.6) * radius;
                let r = rng.random_range(0.15..0.25) * thick;
                pipes.push((i % 2, offset, r));
            }
            for k in k0..k1 {
                for j in 0..ny {
                    for i in 0..nx {
                        let x = grid.voxel_center(i, j, k);
                        if x.x * x.x + x.y * x.y > radius * radius {
                            continue;
                        }
                        let mut v = base;
                        for &(axis, off, r) in &pipes {
                            let across = if axis == 0 { x.y } else { x.x };
                            if (across - off).powi(2) + (x.z - z_mid).powi(2) <= r * r {
                                v = dense;
                            }
                        }
                        if cavities.iter().any(|(c, r)| inside_ellipsoid(&x, c, r)) {
                            v = 0.0;
                        }
                        let idx = grid.linear_index(i, j, k);
                        vol.data[idx] = v;
                    }
                }
            }
        }
        PhantomKind::NestedShells => {
            let r_max = 0.9 * half.min();
            let shells = 4;
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let x = grid.voxel_center(i, j, k);
                        let rel = (x - b.center()).norm() / r_max;
                        if rel <= 1.0 {
                            let band = ((1.0 - rel) * shells as f64) as usize;
                            let idx = grid.linear_index(i, j, k);
                            vol.data[idx] = if band % 2 == 0 { base } else { dense };
                        }
                    }
                }
            }
        }
        PhantomKind::RandomEllipsoids => {
            let blobs: Vec<_> = (0..8)
                .map(|n| {
                    let c = b.center()
                        + Vector3::new(
                            rng.random_range(-0.5..0.5) * half.x,
                            rng.random_range(-0.5..0.5) * half.y,
                            rng.random_range(-0.5..0.5) * half.z,
                        );
                    let r = Vector3::new(
                        rng.random_range(0.1..0.35) * half.x,
                        rng.random_range(0.1..0.35) * half.y,
                        rng.random_range(0.1..0.35) * half.z,
                    );
                    (c, r, if n % 2 == 0 { base } else { dense })
                })
                .collect();
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let x = grid.voxel_center(i, j, k);
                        let idx = grid.linear_index(i, j, k);
                        for (c, r, level) in &blobs {
                            if inside_ellipsoid(&x, c, r) {
                                vol.data[idx] = *level;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(vol)
}

/// Uniform ball of `density` centered in `grid`.
pub fn sphere_phantom(grid: GridSpec, radius: f64, density: f64) -> Result<Volume> {
    let c = grid.bounds().center();
    Volume::from_fn(grid, |x| if (x - c).norm() <= radius { density } else { 0.0 })
}

/// Angles `2πk/n` for `k = 0..n`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| std::f64::consts::TAU * k as f64 / n as f64).collect()
}

/// Projects `phantom` at `n_views` uniformly spaced angles with the
/// reference ray marcher, optionally adding Gaussian noise of standard
/// deviation `noise` in the log domain.
pub fn simulate_dataset(
    phantom: &Volume,
    geom: &LaminographyGeometry,
    n_views: usize,
    noise: Option<f64>,
    seed: u64,
    samples_per_ray: usize,
) -> Result<ProjectionStack> {
    if n_views == 0 {
        return Err(Error::invalid("views", "need at least one view"));
    }
    let angles = uniform_angles(n_views);
    let mut images = angles
        .iter()
        .map(|&a| raymarch_project_volume(phantom, &geom.view(a), geom, samples_per_ray))
        .collect::<Result<Vec<_>>>()?;
    if let Some(sigma) = noise.filter(|s| *s > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for img in &mut images {
            for v in &mut img.data {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    ProjectionStack::new(*geom, angles, images)
}

/// Writes one 8-bit PNG per slice normal to `axis`, mapping `window` to
/// `[0, 255]`. Defaults to `[0, max]`. Returns the written paths.
pub fn export_slices(vol: &Volume, axis: Axis, out_dir: &Path, window: Option<(f64, f64)>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (lo, hi) = window.unwrap_or((0.0, vol.max()));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = vol.slice_count(axis);
    let digits = n.saturating_sub(1).to_string().len().max(3);
    let mut paths = Vec::with_capacity(n);
    for s in 0..n {
        let img = vol.slice(axis, s);
        let pixels: Vec<u8> = img
            .data
            .iter()
            .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, pixels)
            .expect("slice buffer matches its dimensions");
        let path = out_dir.join(format!("slice_{s:0digits$}.png"));
        buf.save(&path)
            .map_err(|e| format_err("png", &path, e.to_string()))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads an exported slice back as values in `window` units.
pub fn import_slice(path: &Path, window: (f64, f64)) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| format_err("png", path, e.to_string()))?
        .into_luma8();
    let (lo, hi) = window;
    Ok(Image {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.pixels().map(|p| lo + (hi - lo) * p.0[0] as f64 / 255.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RadiativeGaussian;

    #[test]
    fn scene_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.lgsc");
        let mut scene = GaussianScene::empty(Aabb::centered_cube(2.0));
        scene.gaussians.push(RadiativeGaussian {
            raw_density: 0.25,
            position: Vector3::new(0.5, -0.125, 1.0),
            rotation: [1.0, 0.0, 0.5, 0.0],
            raw_scale: Vector3::new(-3.0, -2.5, -4.0),
        });
        write_scene(&path, &scene).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LGSC");
        assert_eq!(bytes.len(), 16 + 44);
        assert_eq!(read_scene(&path).unwrap(), scene);
    }

    #[test]
    fn scene_parser_rejects_corruption() {
        let p = Path::new("x");
        let scene = GaussianScene::empty(Aabb::centered_cube(1.0));
        let mut bytes = scene_to_bytes(&scene);
        assert!(scene_from_bytes(&bytes, Aabb::centered_cube(1.0), p).is_ok());
        bytes.push(0);
        assert!(scene_from_bytes(&bytes, Aabb::centered_cube(1.0), p).is_err());
        bytes[0] = b'X';
        assert!(scene_from_bytes(&bytes, Aabb::centered_cube(1.0), p).is_err());
        let mut v2 = scene_to_bytes(&scene);
        v2[4] = 2;
        assert!(scene_from_bytes(&v2, Aabb::centered_cube(1.0), p).is_err());
    }

    #[test]
    fn volume_and_projection_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::centered_dims([4, 5, 3], 0.25);
        let vol = Volume::from_fn(grid, |x| x.x + 2.0 * x.y - x.z).unwrap();
        let vp = dir.path().join("v.vol");
        write_volume(&vp, &vol).unwrap();
        assert_eq!(fs::metadata(&vp).unwrap().len(), 4 * 60);
        assert_eq!(read_volume(&vp).unwrap(), vol);

        let geom = LaminographyGeometry::for_bounds(&Aabb::centered_cube(1.0), 0.5, 6, 4).unwrap();
        let images = (0..3).map(|k| Image::from_fn(6, 4, |u, v| (u + 10 * v + 100 * k) as f64)).collect();
        let stack = ProjectionStack::new(geom, vec![0.0, 0.5, 1.25], images).unwrap();
        let pp = dir.path().join("p.proj");
        write_projections(&pp, &stack).unwrap();
        assert_eq!(read_projections(&pp).unwrap(), stack);
    }

    #[test]
    fn truncated_volume_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::zeros(GridSpec::centered(3, 1.0)).unwrap();
        let vp = dir.path().join("v.vol");
        write_volume(&vp, &vol).unwrap();
        fs::write(&vp, [0u8; 8]).unwrap();
        assert!(matches!(read_volume(&vp), Err(Error::Format { .. })));
        assert!(matches!(read_volume(&dir.path().join("missing.vol")), Err(Error::Io { .. })));
    }

    #[test]
    fn phantom_is_deterministic_and_discrete() {
        for kind in [PhantomKind::EngineLike, PhantomKind::NestedShells, PhantomKind::RandomEllipsoids] {
            let spec = PhantomSpec {
                kind,
                dims: [32; 3],
                voxel_size: 1.0 / 32.0,
                rng_seed: 11,
                ..PhantomSpec::default()
            };
            let a = generate_phantom(&spec).unwrap();
            let b = generate_phantom(&spec).unwrap();
            assert_eq!(a, b);
            assert!(a.data.iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
            assert!(a.max() > 0.0);
        }
    }

    #[test]
    fn engine_plate_occupies_its_slab() {
        let spec = PhantomSpec::default();
        let v = generate_phantom(&spec).unwrap();
        let [nx, ny, nz] = v.dims();
        let occupied: Vec<usize> = (0..nz)
            .filter(|&k| (0..ny).any(|j| (0..nx).any(|i| v.get(i, j, k) != 0.0)))
            .collect();
        assert_eq!(occupied.len(), 16);
        assert_eq!(occupied.last().unwrap() - occupied[0], 15);
        assert!(v.data.iter().any(|&x| x == 2.0));
    }

    #[test]
    fn simulation_angles_and_positivity() {
        let grid = GridSpec::centered(16, 1.0);
        let vol = sphere_phantom(grid, 0.3, 1.0).unwrap();
        let geom = LaminographyGeometry::for_bounds(&grid.bounds(), 0.5, 16, 16).unwrap();
        let stack = simulate_dataset(&vol, &geom, 4, None, 0, 128).unwrap();
        let want = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI, 1.5 * std::f64::consts::PI];
        for (a, w) in stack.angles.iter().zip(want) {
            assert!((a - w).abs() < 1e-15);
        }
        assert!(stack.images.iter().all(|i| i.data.iter().all(|&v| v >= 0.0)));
        let sums: Vec<f64> = stack.images.iter().map(|i| i.sum()).collect();
        for s in &sums {
            assert!((s - sums[0]).abs() / sums[0] < 1e-2);
        }
    }

    #[test]
    fn exported_slices_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::centered_dims([7, 5, 4], 0.1);
        let vol = Volume::from_fn(grid, |x| (x.x * 3.0).sin() + 1.5).unwrap();
        let paths = export_slices(&vol, Axis::Z, dir.path(), None).unwrap();
        assert_eq!(paths.len(), 4);
        let window = (0.0, vol.max());
        for (s, p) in paths.iter().enumerate() {
            let back = import_slice(p, window).unwrap();
            let orig = vol.slice(Axis::Z, s);
            for (a, b) in back.data.iter().zip(&orig.data) {
                assert!((a - b).abs() <= 0.5 * window.1 / 255.0 + 1e-12);
            }
        }
        let flat = Volume::from_fn(grid, |_| 2.0).unwrap();
        let paths = export_slices(&flat, Axis::X, &dir.path().join("flat"), Some((0.0, 4.0))).unwrap();
        assert_eq!(paths.len(), 7);
        let img = import_slice(&paths[0], (0.0, 255.0)).unwrap();
        assert!(img.data.iter().all(|&v| v == 128.0));
    }
}
