//! Image-quality metrics on magnitude images: NRMSE, SSIM, HFEN and the sharpness measures M1, M2.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor3;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const LOG_SIZE: usize = 15;
pub const LOG_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub nrmse: f64,
    pub ssim: f64,
    pub hfen: f64,
    /// Sharpness of the estimate.
    pub m1: f64,
    pub m2: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "label,nrmse,ssim,hfen,m1,m2";

    pub fn is_finite(&self) -> bool {
        [self.nrmse, self.ssim, self.hfen, self.m1, self.m2].iter().all(|v| v.is_finite())
    }

    pub fn csv_row(&self, label: &str) -> String {
        format!("{label},{},{},{},{},{}", self.nrmse, self.ssim, self.hfen, self.m1, self.m2)
    }

    /// Component-wise mean.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            nrmse: avg(|r| r.nrmse),
            ssim: avg(|r| r.ssim),
            hfen: avg(|r| r.hfen),
            m1: avg(|r| r.m1),
            m2: avg(|r| r.m2),
        })
    }
}

/// CSV text with a header and one row per labelled report.
pub fn metrics_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    for (label, r) in rows {
        let _ = writeln!(out, "{}", r.csv_row(label));
    }
    out
}

fn same_dims(a: &ComplexTensor3, b: &ComplexTensor3) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{} vs {}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Row-major magnitude image of one frame.
struct Image {
    rows: usize,
    cols: usize,
    px: Vec<f64>,
}

impl Image {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.px[r * self.cols + c]
    }
}

fn magnitude_frames(x: &ComplexTensor3) -> Vec<Image> {
    let d = x.dims();
    (0..d.n_fr)
        .map(|t| {
            let f = x.frame_slice(t);
            let mut px = vec![0.0; d.n_f * d.n_p];
            for c in 0..d.n_p {
                for r in 0..d.n_f {
                    px[r * d.n_p + c] = f[c * d.n_f + r].norm();
                }
            }
            Image {
                rows: d.n_f,
                cols: d.n_p,
                px,
            }
        })
        .collect()
}

/// `‖x_true − x_est‖_F / ‖x_true‖_F` on the complex entries.
pub fn nrmse(x_true: &ComplexTensor3, x_est: &ComplexTensor3) -> Result<f64> {
    same_dims(x_true, x_est)?;
    let denom = x_true.norm();
    if denom == 0.0 {
        return Err(Error::Numerical("NRMSE reference has zero norm".into()));
    }
    Ok((x_true.as_matrix() - x_est.as_matrix()).norm() / denom)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let h = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - h).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" correlation.
fn filter_valid(img: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let (or, oc) = (rows + 1 - w, cols + 1 - w);
    let mut tmp = vec![0.0; rows * oc];
    for r in 0..rows {
        for c in 0..oc {
            tmp[r * oc + c] = (0..w).map(|k| taps[k] * img[r * cols + c + k]).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = (0..w).map(|k| taps[k] * tmp[(r + k) * oc + c]).sum();
        }
    }
    out
}

fn ssim_frame(a: &Image, b: &Image, taps: &[f64], c1: f64, c2: f64) -> f64 {
    let (rows, cols) = (a.rows, a.cols);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.px.iter().zip(&b.px).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(&a.px, rows, cols, taps);
    let mu_b = filter_valid(&b.px, rows, cols, taps);
    let aa = filter_valid(&prod(&|x, _| x * x), rows, cols, taps);
    let bb = filter_valid(&prod(&|_, y| y * y), rows, cols, taps);
    let ab = filter_valid(&prod(&|x, y| x * y), rows, cols, taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM over frames with the dynamic range taken from the reference series.
pub fn ssim(x_true: &ComplexTensor3, x_est: &ComplexTensor3) -> Result<f64> {
    let range = x_true.magnitude().into_iter().fold(0.0, f64::max);
    ssim_with_range(x_true, x_est, range)
}

/// Mean SSIM over frames with an explicit dynamic range `D`; symmetric in its image arguments.
pub fn ssim_with_range(a: &ComplexTensor3, b: &ComplexTensor3, range: f64) -> Result<f64> {
    same_dims(a, b)?;
    let d = a.dims();
    if d.n_f < SSIM_WINDOW || d.n_p < SSIM_WINDOW {
        return Err(Error::shape(format!("SSIM needs frames of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {d}")));
    }
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::Numerical(format!("SSIM dynamic range {range} must be positive")));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let fa = magnitude_frames(a);
    let fb = magnitude_frames(b);
    let per_frame: Vec<f64> = fa.par_iter().zip(&fb).map(|(x, y)| ssim_frame(x, y, &taps, c1, c2)).collect();
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

/// Zero-mean Laplacian-of-Gaussian kernel, row-major `size × size`.
pub fn log_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let h = (size as f64 - 1.0) / 2.0;
    let s2 = sigma * sigma;
    let coords: Vec<(f64, f64)> = (0..size * size)
        .map(|i| ((i / size) as f64 - h, (i % size) as f64 - h))
        .collect();
    let g: Vec<f64> = coords.iter().map(|(y, x)| (-(x * x + y * y) / (2.0 * s2)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let k: Vec<f64> = coords
        .iter()
        .zip(&g)
        .map(|((y, x), gv)| gv / gs * (x * x + y * y - 2.0 * s2) / (s2 * s2))
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.into_iter().map(|v| v - mean).collect()
}

/// Mirror index with the edge sample repeated: `… b a | a b c … `.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Same-size correlation with symmetric boundary padding.
fn filter_symmetric(img: &Image, kernel: &[f64], size: usize) -> Vec<f64> {
    let h = (size / 2) as isize;
    let mut out = vec![0.0; img.rows * img.cols];
    for r in 0..img.rows {
        for c in 0..img.cols {
            let mut acc = 0.0;
            for i in 0..size {
                let rr = reflect(r as isize + i as isize - h, img.rows);
                for j in 0..size {
                    let cc = reflect(c as isize + j as isize - h, img.cols);
                    acc += kernel[i * size + j] * img.at(rr, cc);
                }
            }
            out[r * img.cols + c] = acc;
        }
    }
    out
}

/// `‖LoG(|x_est|) − LoG(|x_true|)‖_F / ‖LoG(|x_true|)‖_F`.
pub fn hfen(x_true: &ComplexTensor3, x_est: &ComplexTensor3) -> Result<f64> {
    same_dims(x_true, x_est)?;
    let kernel = log_kernel(LOG_SIZE, LOG_SIGMA);
    let ft = magnitude_frames(x_true);
    let fe = magnitude_frames(x_est);
    let parts: Vec<(f64, f64)> = ft
        .par_iter()
        .zip(&fe)
        .map(|(a, b)| {
            let la = filter_symmetric(a, &kernel, LOG_SIZE);
            let lb = filter_symmetric(b, &kernel, LOG_SIZE);
            let num = la.iter().zip(&lb).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            let den = la.iter().map(|x| x * x).sum::<f64>();
            (num, den)
        })
        .collect();
    let num: f64 = parts.iter().map(|p| p.0).sum();
    let den: f64 = parts.iter().map(|p| p.1).sum();
    let scale = x_true.norm().max(1.0);
    if den.sqrt() <= 1e-12 * scale {
        return Err(Error::Numerical("HFEN reference has no high-frequency content".into()));
    }
    Ok((num / den).sqrt())
}

fn frame_average(x: &ComplexTensor3, f: fn(&Image) -> f64) -> f64 {
    let frames = magnitude_frames(x);
    let vals: Vec<f64> = frames.par_iter().map(f).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Intensity variance measure `Σ (I − mean I)²`, averaged over frames.
pub fn sharpness_m1(x: &ComplexTensor3) -> f64 {
    frame_average(x, |img| {
        let mean = img.px.iter().sum::<f64>() / img.px.len() as f64;
        img.px.iter().map(|v| (v - mean).powi(2)).sum()
    })
}

/// Gradient energy `Σ (I_x² + I_y²)` with forward differences inside the frame, averaged over frames.
pub fn sharpness_m2(x: &ComplexTensor3) -> f64 {
    frame_average(x, |img| {
        let mut acc = 0.0;
        for r in 0..img.rows {
            for c in 0..img.cols {
                if c + 1 < img.cols {
                    acc += (img.at(r, c + 1) - img.at(r, c)).powi(2);
                }
                if r + 1 < img.rows {
                    acc += (img.at(r + 1, c) - img.at(r, c)).powi(2);
                }
            }
        }
        acc
    })
}

/// All five metrics; sharpness is that of the estimate.
pub fn evaluate(x_true: &ComplexTensor3, x_est: &ComplexTensor3) -> Result<MetricReport> {
    Ok(MetricReport {
        nrmse: nrmse(x_true, x_est)?,
        ssim: ssim(x_true, x_est)?,
        hfen: hfen(x_true, x_est)?,
        m1: sharpness_m1(x_est),
        m2: sharpness_m2(x_est),
    })
}
