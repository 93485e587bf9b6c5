use crate::error::{Error, Result};
use crate::renderer::ImageBuf;

/// Returned for identical images.
pub const PSNR_CAP: f64 = 99.0;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check(a: &ImageBuf, b: &ImageBuf) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape(
            "metrics",
            &[a.height as usize, a.width as usize, 3],
            &[b.height as usize, b.width as usize, 3],
        ));
    }
    Ok(())
}

pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check(a, b)?;
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a `w x h` plane.
fn filter(x: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let s = k.len();
    let (ow, oh) = (w - s + 1, h - s + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for xo in 0..ow {
            tmp[y * ow + xo] = (0..s).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..s).map(|i| k[i] * tmp[(yo + i) * ow + xo]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over the valid windows, averaged over channels. Images smaller
/// than the 11-pixel window use the largest odd window that fits.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("ssim of an empty image".into()));
    }
    let mut size = WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian(size);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = (0..w * h).map(|i| a.data[i * 3 + ch] as f64).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.data[i * 3 + ch] as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let (mx, ..) = filter(&x, w, h, &k);
        let (my, ..) = filter(&y, w, h, &k);
        let (mxx, ..) = filter(&prod(&x, &x), w, h, &k);
        let (myy, ..) = filter(&prod(&y, &y), w, h, &k);
        let (mxy, ..) = filter(&prod(&x, &y), w, h, &k);
        let n = mx.len();
        let mut s = 0.0;
        for i in 0..n {
            let vx = mxx[i] - mx[i] * mx[i];
            let vy = myy[i] - my[i] * my[i];
            let cxy = mxy[i] - mx[i] * my[i];
            s += ((2.0 * mx[i] * my[i] + C1) * (2.0 * cxy + C2))
                / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
        }
        total += s / n as f64;
    }
    Ok(total / 3.0)
}
