//! Cartesian and radial under-sampling masks and the sampling map.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{read_payload, write_payload, TensorPayload};
use crate::error::{Error, Result};
use crate::tensor::{navigator_band, ComplexTensor3, DataDims};
use crate::Complex64;

/// Golden-angle increment in degrees, `180·(√5 − 1)/2`.
pub const GOLDEN_ANGLE_DEG: f64 = 111.246_117_974_981_07;

/// Binary acquisition pattern over the (k,t) grid; 1 = acquired.
///
/// Bits use the same column-stacked layout as [`ComplexTensor3`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    dims: DataDims,
    bits: Vec<u8>,
}

impl SamplingMask {
    pub fn from_bits(dims: DataDims, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::shape(format!(
                "{} mask bits for a {dims} grid",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::param("mask bits must be 0 or 1"));
        }
        Ok(SamplingMask { dims, bits })
    }

    pub fn full(dims: DataDims) -> Self {
        SamplingMask {
            dims,
            bits: vec![1; dims.len()],
        }
    }

    pub fn empty(dims: DataDims) -> Self {
        SamplingMask {
            dims,
            bits: vec![0; dims.len()],
        }
    }

    pub fn dims(&self) -> DataDims {
        self.dims
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_sampled(&self, r: usize, c: usize, t: usize) -> bool {
        self.bits[t * self.dims.n_k() + c * self.dims.n_f + r] == 1
    }

    pub fn frame_bits(&self, t: usize) -> &[u8] {
        let n_k = self.dims.n_k();
        &self.bits[t * n_k..(t + 1) * n_k]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn frame_count(&self, t: usize) -> usize {
        self.frame_bits(t).iter().map(|&b| b as usize).sum()
    }

    /// True when every frame has all navigator columns acquired.
    pub fn navigator_complete(&self, upsilon: usize) -> Result<bool> {
        let band = navigator_band(self.dims.n_p, upsilon)?;
        Ok((0..self.dims.n_fr).all(|t| {
            band.clone()
                .all(|c| (0..self.dims.n_f).all(|r| self.is_sampled(r, c, t)))
        }))
    }

    /// Checks the structural invariants of a generated mask.
    pub fn validate(&self, upsilon: usize) -> Result<()> {
        if !self.navigator_complete(upsilon)? {
            return Err(Error::param("navigator band not fully acquired"));
        }
        if let Some(t) = (0..self.dims.n_fr).find(|&t| self.frame_count(t) == 0) {
            return Err(Error::param(format!("frame {t} has no acquired entries")));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_payload(path, &TensorPayload::Mask(self.dims, self.bits.clone()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        match read_payload(path)? {
            TensorPayload::Mask(dims, bits) => SamplingMask::from_bits(dims, bits),
            TensorPayload::Complex(_) => Err(Error::Format {
                offset: 8,
                msg: "dtype mismatch: expected uint8 mask, found complex tensor".into(),
            }),
        }
    }
}

fn frame_rng(seed: u64, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64))
}

/// 1D Cartesian mask: per frame, the navigator columns plus variable-density
/// random phase-encoding columns, `round(n_p / acceleration)` columns in total.
pub fn cartesian_mask(
    dims: DataDims,
    acceleration: f64,
    upsilon: usize,
    seed: u64,
) -> Result<SamplingMask> {
    if !acceleration.is_finite() || acceleration < 1.0 {
        return Err(Error::param(format!(
            "acceleration {acceleration} must be ≥ 1"
        )));
    }
    let band = navigator_band(dims.n_p, upsilon)?;
    let lines = (dims.n_p as f64 / acceleration).round() as usize;
    if lines < upsilon {
        return Err(Error::InfeasibleAcceleration { lines, upsilon });
    }
    let center = (dims.n_p / 2) as f64;
    let n_k = dims.n_k();

    let mut bits = vec![0u8; dims.len()];
    bits.par_chunks_mut(n_k).enumerate().for_each(|(t, frame)| {
        let mut rng = frame_rng(seed, t);
        let mut pool: Vec<(usize, f64)> = (0..dims.n_p)
            .filter(|c| !band.contains(c))
            .map(|c| (c, 1.0 / (1.0 + (c as f64 - center).abs())))
            .collect();
        let mut chosen: Vec<usize> = band.clone().collect();
        while chosen.len() < lines {
            let total: f64 = pool.iter().map(|&(_, w)| w).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = pool.len() - 1;
            for (i, &(_, w)) in pool.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            chosen.push(pool.remove(pick).0);
        }
        for c in chosen {
            frame[c * dims.n_f..(c + 1) * dims.n_f].fill(1);
        }
    });
    SamplingMask::from_bits(dims, bits)
}

/// Marks one spoke through the k-space center, one grid point per step along
/// the dominant axis (nearest-grid-point rounding).
fn rasterize_spoke(frame: &mut [u8], dims: DataDims, angle_deg: f64) {
    let (n_f, n_p) = (dims.n_f, dims.n_p);
    let cr = (n_f / 2) as f64;
    let cc = (n_p / 2) as f64;
    let theta = angle_deg.to_radians();
    // direction in (column, row) coordinates
    let (dc, dr) = (theta.cos(), theta.sin());
    if dc.abs() >= dr.abs() {
        let slope = dr / dc;
        for c in 0..n_p {
            let r = (cr + (c as f64 - cc) * slope).round();
            if r >= 0.0 && (r as usize) < n_f {
                frame[c * n_f + r as usize] = 1;
            }
        }
    } else {
        let slope = dc / dr;
        for r in 0..n_f {
            let c = (cc + (r as f64 - cr) * slope).round();
            if c >= 0.0 && (c as usize) < n_p {
                frame[c as usize * n_f + r] = 1;
            }
        }
    }
}

/// Radial mask: `spokes_per_frame` lines through the center per frame with
/// golden-angle increments continued across frames, plus the navigator band.
pub fn radial_mask(
    dims: DataDims,
    spokes_per_frame: usize,
    upsilon: usize,
    seed: u64,
) -> Result<SamplingMask> {
    radial_mask_from(dims, spokes_per_frame, upsilon, seed as f64 * GOLDEN_ANGLE_DEG)
}

/// Radial mask with an explicit starting angle (degrees) for spoke 0 of frame 0.
pub fn radial_mask_from(
    dims: DataDims,
    spokes_per_frame: usize,
    upsilon: usize,
    start_deg: f64,
) -> Result<SamplingMask> {
    if spokes_per_frame == 0 {
        return Err(Error::param("at least one spoke per frame is required"));
    }
    let band = navigator_band(dims.n_p, upsilon)?;
    let n_k = dims.n_k();
    let mut bits = vec![0u8; dims.len()];
    bits.par_chunks_mut(n_k).enumerate().for_each(|(t, frame)| {
        for s in 0..spokes_per_frame {
            let j = (t * spokes_per_frame + s) as f64;
            let angle = (start_deg + j * GOLDEN_ANGLE_DEG).rem_euclid(180.0);
            rasterize_spoke(frame, dims, angle);
        }
        for c in band.clone() {
            frame[c * dims.n_f..(c + 1) * dims.n_f].fill(1);
        }
    });
    SamplingMask::from_bits(dims, bits)
}

/// Entrywise product of the mask with `y` (missing entries nullified).
pub fn apply_sampling(mask: &SamplingMask, y: &ComplexTensor3) -> Result<ComplexTensor3> {
    if mask.dims() != y.dims() {
        return Err(Error::shape(format!(
            "mask {} vs data {}",
            mask.dims(),
            y.dims()
        )));
    }
    let mut out = y.clone();
    for (v, &b) in out.as_mut_slice().iter_mut().zip(mask.bits()) {
        if b == 0 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    Ok(out)
}

/// Full-sampling count over acquired count.
pub fn acceleration_rate(mask: &SamplingMask) -> Result<f64> {
    let acquired = mask.count();
    if acquired == 0 {
        return Err(Error::param("mask has no acquired entries"));
    }
    Ok(mask.dims().len() as f64 / acquired as f64)
}
