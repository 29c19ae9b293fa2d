//! Volume PSNR and slice-averaged SSIM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ssim::ssim;
use crate::types::{Axis, Volume};

/// Reports clamp PSNR here; identical volumes give `+∞` internally.
pub const PSNR_CAP_DB: f64 = 99.0;

fn same_grid(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `10·log10(peak²/MSE)` with `peak` defaulting to the reference maximum.
pub fn psnr_volume(a: &Volume, reference: &Volume, peak: Option<f64>) -> Result<f64> {
    same_grid(a, reference)?;
    let peak = peak.unwrap_or_else(|| reference.max());
    let mse = a
        .data
        .iter()
        .zip(&reference.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn capped_db(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

/// Sum of squared values in the z slices outside `[k0, k1)`.
pub fn energy_outside_slab(vol: &Volume, k0: usize, k1: usize) -> f64 {
    let [nx, ny, nz] = vol.dims();
    (0..nz)
        .filter(|k| *k < k0 || *k >= k1)
        .map(|k| vol.data[k * nx * ny..(k + 1) * nx * ny].iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// Mean SSIM over slices normal to `axis`. The SSIM constants use the
/// dynamic range of `reference`, or 1 if it is constant zero.
pub fn ssim_slices(a: &Volume, reference: &Volume, axis: Axis) -> Result<f64> {
    same_grid(a, reference)?;
    let mut range = reference.max() - reference.min();
    if range <= 0.0 {
        range = reference.max().abs();
    }
    if range <= 0.0 {
        range = 1.0;
    }
    let n = a.slice_count(axis);
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| ssim(&a.slice(axis, i), &reference.slice(axis, i), range))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / n as f64)
}
