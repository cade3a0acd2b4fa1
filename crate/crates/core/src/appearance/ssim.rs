//! SSIM with an 11×11 Gaussian window (σ = 1.5, zero "same" padding) and its gradient.

use crate::img::Image;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const RADIUS: usize = 5;

fn window() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter of one plane; symmetric, so it is its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sx = x as isize + j as isize - r;
                if sx >= 0 && sx < w as isize {
                    s += kv * src[y * w + sx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sy = y as isize + j as isize - r;
                if sy >= 0 && sy < h as isize {
                    s += kv * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn planes(img: &Image) -> Vec<Vec<f64>> {
    (0..img.channels)
        .map(|c| img.data.iter().skip(c).step_by(img.channels).copied().collect())
        .collect()
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    ssim_impl(a, b, false).0
}

/// Mean SSIM and its gradients with respect to both images.
pub fn ssim_with_grad(a: &Image, b: &Image) -> (f64, Image, Image) {
    let (v, ga, gb) = ssim_impl(a, b, true);
    (v, ga.unwrap(), gb.unwrap())
}

/// D-SSIM = (1 − SSIM) / 2, in [0, 1].
pub fn dssim(a: &Image, b: &Image) -> f64 {
    (1.0 - ssim(a, b)) * 0.5
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Image>, Option<Image>) {
    assert!(a.same_shape(b), "ssim shape mismatch");
    let (w, h, ch) = (a.width, a.height, a.channels);
    let k = window();
    let n = (w * h * ch) as f64;
    let mut total = 0.0;
    let mut ga = want_grad.then(|| Image::new(w, h, ch));
    let mut gb = want_grad.then(|| Image::new(w, h, ch));
    for (c, (x, y)) in planes(a).into_iter().zip(planes(b)).enumerate() {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(&x, w, h, &k), blur(&y, w, h, &k));
        let (exx, eyy, exy) = (blur(&xx, w, h, &k), blur(&yy, w, h, &k), blur(&xy, w, h, &k));
        let mut d_mx = vec![0.0; w * h];
        let mut d_my = vec![0.0; w * h];
        let mut d_xx = vec![0.0; w * h];
        let mut d_yy = vec![0.0; w * h];
        let mut d_xy = vec![0.0; w * h];
        for i in 0..w * h {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * cxy + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = vx + vy + C2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            total += s;
            if want_grad {
                // partials with respect to (μx, μy, σx², σy², σxy)
                let p_ux = (2.0 * uy * a2 - s * 2.0 * ux * b2) / den;
                let p_uy = (2.0 * ux * a2 - s * 2.0 * uy * b2) / den;
                let p_vx = -s * b1 / den;
                let p_vy = p_vx;
                let p_c = 2.0 * a1 / den;
                d_mx[i] = p_ux - 2.0 * ux * p_vx - uy * p_c;
                d_my[i] = p_uy - 2.0 * uy * p_vy - ux * p_c;
                d_xx[i] = p_vx;
                d_yy[i] = p_vy;
                d_xy[i] = p_c;
            }
        }
        if let (Some(ga), Some(gb)) = (ga.as_mut(), gb.as_mut()) {
            let (bmx, bmy) = (blur(&d_mx, w, h, &k), blur(&d_my, w, h, &k));
            let (bxx, byy, bxy) = (blur(&d_xx, w, h, &k), blur(&d_yy, w, h, &k), blur(&d_xy, w, h, &k));
            for i in 0..w * h {
                ga.data[i * ch + c] = (bmx[i] + 2.0 * x[i] * bxx[i] + y[i] * bxy[i]) / n;
                gb.data[i * ch + c] = (bmy[i] + 2.0 * y[i] * byy[i] + x[i] * bxy[i]) / n;
            }
        }
    }
    (total / n, ga, gb)
}
