//! Structural similarity with an 11×11 Gaussian window (σ = 1.5) and its
//! gradient with respect to the first image.
//!
//! Local statistics use a zero-padded, same-size window, and the index is
//! the mean of the per-pixel SSIM map.

use crate::error::{Error, Result};
use crate::types::Image;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;

fn window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-0.5 * ((i as f64 - c) / WINDOW_SIGMA).powi(2)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable blur with the SSIM window; zero outside the image.
pub fn blur(img: &Image) -> Image {
    let w = window();
    let r = (WINDOW / 2) as isize;
    let (nx, ny) = (img.width as isize, img.height as isize);
    let mut tmp = Image::zeros(img.width, img.height);
    for y in 0..ny {
        let row = &img.data[(y * nx) as usize..((y + 1) * nx) as usize];
        for x in 0..nx {
            let lo = (x - r).max(0);
            let hi = (x + r).min(nx - 1);
            let mut acc = 0.0;
            for s in lo..=hi {
                acc += w[(s - x + r) as usize] * row[s as usize];
            }
            tmp.data[(y * nx + x) as usize] = acc;
        }
    }
    let mut out = Image::zeros(img.width, img.height);
    for y in 0..ny {
        let lo = (y - r).max(0);
        let hi = (y + r).min(ny - 1);
        for s in lo..=hi {
            let wt = w[(s - y + r) as usize];
            let src = &tmp.data[(s * nx) as usize..((s + 1) * nx) as usize];
            let dst = &mut out.data[(y * nx) as usize..((y + 1) * nx) as usize];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += wt * v;
            }
        }
    }
    out
}

fn product(a: &Image, b: &Image) -> Image {
    Image {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

fn constants(data_range: f64) -> (f64, f64) {
    ((0.01 * data_range).powi(2), (0.03 * data_range).powi(2))
}

struct Stats {
    mx: Image,
    my: Image,
    exx: Image,
    eyy: Image,
    exy: Image,
}

fn stats(x: &Image, y: &Image) -> Stats {
    Stats {
        mx: blur(x),
        my: blur(y),
        exx: blur(&product(x, x)),
        eyy: blur(&product(y, y)),
        exy: blur(&product(x, y)),
    }
}

fn check(x: &Image, y: &Image, data_range: f64) -> Result<()> {
    if !x.same_shape(y) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            x.width, x.height, y.width, y.height
        )));
    }
    if x.data.is_empty() {
        return Err(Error::Shape("empty image".into()));
    }
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::invalid("data_range", format!("{data_range} is not positive")));
    }
    Ok(())
}

/// Mean SSIM of `x` against `y`.
pub fn ssim(x: &Image, y: &Image, data_range: f64) -> Result<f64> {
    check(x, y, data_range)?;
    let (c1, c2) = constants(data_range);
    let st = stats(x, y);
    let mut total = 0.0;
    for p in 0..x.data.len() {
        let (mx, my) = (st.mx.data[p], st.my.data[p]);
        let vx = st.exx.data[p] - mx * mx;
        let vy = st.eyy.data[p] - my * my;
        let cxy = st.exy.data[p] - mx * my;
        total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / x.data.len() as f64)
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &Image, y: &Image, data_range: f64) -> Result<(f64, Image)> {
    check(x, y, data_range)?;
    let (c1, c2) = constants(data_range);
    let st = stats(x, y);
    let n = x.data.len();
    let inv_n = 1.0 / n as f64;
    let mut d_mx = Image::zeros(x.width, x.height);
    let mut d_exx = Image::zeros(x.width, x.height);
    let mut d_exy = Image::zeros(x.width, x.height);
    let mut total = 0.0;
    for p in 0..n {
        let (mx, my) = (st.mx.data[p], st.my.data[p]);
        let vx = st.exx.data[p] - mx * mx;
        let vy = st.eyy.data[p] - my * my;
        let cxy = st.exy.data[p] - mx * my;
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * cxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = vx + vy + c2;
        let den = b1 * b2;
        let s = a1 * a2 / den;
        total += s;
        d_mx.data[p] = inv_n * (2.0 * my * (a2 - a1) - s * 2.0 * mx * (b2 - b1)) / den;
        // Shared factor so the two terms cancel exactly when x == y.
        let r = inv_n * a1 / den;
        d_exx.data[p] = -r * (a2 / b2);
        d_exy.data[p] = 2.0 * r;
    }
    // The window is symmetric, so the adjoint of the blur is the blur.
    let g_mx = blur(&d_mx);
    let g_exx = blur(&d_exx);
    let g_exy = blur(&d_exy);
    let mut grad = Image::zeros(x.width, x.height);
    for p in 0..n {
        grad.data[p] = g_mx.data[p] + 2.0 * x.data[p] * g_exx.data[p] + y.data[p] * g_exy.data[p];
    }
    Ok((total * inv_n, grad))
}
