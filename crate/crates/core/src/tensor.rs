//! Complex (k,t)-space / image tensors, column-stacking conventions and the
//! unitary Fourier operators shared by every other module.
//!
//! A frame is an `n_f × n_p` complex matrix. Frames are vectorized by stacking
//! columns top to bottom, so frame entry `(r, c)` lands at index `c·n_f + r`.
//! A tensor stores its frames as the columns of an `n_k × n_fr` matrix, which
//! makes the tensor and the frame-stacked data matrix share one memory layout.
//!
//! The spatial transform is the centered unitary 2D DFT: the DC bin sits at
//! `(⌊n_f/2⌋, ⌊n_p/2⌋)`, so the navigator band around the middle phase-encoding
//! column holds the low frequencies. The temporal transform is a plain unitary
//! 1D DFT along each row (DC at index 0).

use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::{CMat, Complex64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataDims {
    pub n_f: usize,
    pub n_p: usize,
    pub n_fr: usize,
}

impl DataDims {
    pub fn new(n_f: usize, n_p: usize, n_fr: usize) -> Result<Self> {
        if n_f == 0 || n_p == 0 || n_fr == 0 {
            return Err(Error::param(format!(
                "dimensions must be positive, got {n_f}×{n_p}×{n_fr}"
            )));
        }
        Ok(DataDims { n_f, n_p, n_fr })
    }

    /// Entries per frame.
    pub fn n_k(&self) -> usize {
        self.n_f * self.n_p
    }

    pub fn len(&self) -> usize {
        self.n_k() * self.n_fr
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for DataDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}×{}×{}", self.n_f, self.n_p, self.n_fr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// `n_f × n_p × n_fr` complex tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor3 {
    dims: DataDims,
    data: CMat,
}

impl ComplexTensor3 {
    pub fn zeros(dims: DataDims) -> Self {
        ComplexTensor3 {
            dims,
            data: CMat::zeros(dims.n_k(), dims.n_fr),
        }
    }

    /// Builds a tensor from column-stacked frame data (`c·n_f + r` within a frame,
    /// frames consecutive).
    pub fn from_vec(dims: DataDims, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "{} values supplied for a {dims} tensor",
                data.len()
            )));
        }
        Ok(ComplexTensor3 {
            dims,
            data: CMat::from_vec(dims.n_k(), dims.n_fr, data),
        })
    }

    pub fn from_fn(dims: DataDims, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let n_f = dims.n_f;
        let data = CMat::from_fn(dims.n_k(), dims.n_fr, |k, t| f(k % n_f, k / n_f, t));
        ComplexTensor3 { dims, data }
    }

    /// Inverse of [`ComplexTensor3::to_matrix`].
    pub fn from_matrix(dims: DataDims, m: CMat) -> Result<Self> {
        if m.nrows() != dims.n_k() || m.ncols() != dims.n_fr {
            return Err(Error::shape(format!(
                "{}×{} matrix cannot hold a {dims} tensor",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(ComplexTensor3 { dims, data: m })
    }

    /// Frame-stacked `n_k × n_fr` matrix whose column `t` is `vec(frame t)`.
    pub fn to_matrix(&self) -> CMat {
        self.data.clone()
    }

    pub fn into_matrix(self) -> CMat {
        self.data
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.data
    }

    pub fn as_matrix_mut(&mut self) -> &mut CMat {
        &mut self.data
    }

    pub fn dims(&self) -> DataDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.data.as_slice()
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        self.data.as_mut_slice()
    }

    pub fn get(&self, r: usize, c: usize, t: usize) -> Complex64 {
        self.data[(c * self.dims.n_f + r, t)]
    }

    pub fn set(&mut self, r: usize, c: usize, t: usize, v: Complex64) {
        self.data[(c * self.dims.n_f + r, t)] = v;
    }

    pub fn frame(&self, t: usize) -> CMat {
        devectorize_frame(self.data.column(t).as_slice(), self.dims.n_f, self.dims.n_p)
            .expect("frame length matches dims")
    }

    pub fn frame_slice(&self, t: usize) -> &[Complex64] {
        let n_k = self.dims.n_k();
        &self.data.as_slice()[t * n_k..(t + 1) * n_k]
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Entrywise magnitudes, same layout.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }
}

/// Stacks the columns of an `n_f × n_p` frame into one vector.
pub fn vectorize_frame(frame: &CMat, dims: DataDims) -> Result<Vec<Complex64>> {
    if frame.nrows() != dims.n_f || frame.ncols() != dims.n_p {
        return Err(Error::shape(format!(
            "frame is {}×{}, expected {}×{}",
            frame.nrows(),
            frame.ncols(),
            dims.n_f,
            dims.n_p
        )));
    }
    Ok(frame.as_slice().to_vec())
}

pub fn devectorize_frame(v: &[Complex64], n_f: usize, n_p: usize) -> Result<CMat> {
    if v.len() != n_f * n_p {
        return Err(Error::shape(format!(
            "vector of length {} cannot be an {n_f}×{n_p} frame",
            v.len()
        )));
    }
    Ok(CMat::from_column_slice(n_f, n_p, v))
}

/// Cached FFT plans for one set of dimensions.
#[derive(Clone)]
pub struct FourierOps {
    dims: DataDims,
    f_fwd: Arc<dyn Fft<f64>>,
    f_inv: Arc<dyn Fft<f64>>,
    p_fwd: Arc<dyn Fft<f64>>,
    p_inv: Arc<dyn Fft<f64>>,
    t_fwd: Arc<dyn Fft<f64>>,
    t_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierOps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierOps").field("dims", &self.dims).finish()
    }
}

impl FourierOps {
    pub fn new(dims: DataDims) -> Self {
        let mut planner = FftPlanner::new();
        FourierOps {
            dims,
            f_fwd: planner.plan_fft_forward(dims.n_f),
            f_inv: planner.plan_fft_inverse(dims.n_f),
            p_fwd: planner.plan_fft_forward(dims.n_p),
            p_inv: planner.plan_fft_inverse(dims.n_p),
            t_fwd: planner.plan_fft_forward(dims.n_fr),
            t_inv: planner.plan_fft_inverse(dims.n_fr),
        }
    }

    pub fn dims(&self) -> DataDims {
        self.dims
    }

    /// Centered unitary 2D DFT of every column (frame) of an `n_k × n_fr` matrix, in place.
    pub fn dft2_columns(&self, x: &mut CMat, direction: Direction) {
        let n_k = self.dims.n_k();
        assert_eq!(x.nrows(), n_k, "row count must equal n_k");
        x.as_mut_slice()
            .par_chunks_mut(n_k)
            .for_each(|frame| self.dft2_frame(frame, direction));
    }

    pub fn dft2_frame(&self, frame: &mut [Complex64], direction: Direction) {
        let (n_f, n_p) = (self.dims.n_f, self.dims.n_p);
        let (f_plan, p_plan) = match direction {
            Direction::Forward => (&self.f_fwd, &self.p_fwd),
            Direction::Inverse => (&self.f_inv, &self.p_inv),
        };
        let scratch_len = f_plan
            .get_inplace_scratch_len()
            .max(p_plan.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];

        let scale_f = 1.0 / (n_f as f64).sqrt();
        for col in frame.chunks_mut(n_f) {
            transform_line(col, f_plan.as_ref(), &mut scratch, direction, scale_f);
        }

        let scale_p = 1.0 / (n_p as f64).sqrt();
        let mut line = vec![Complex64::new(0.0, 0.0); n_p];
        for r in 0..n_f {
            for (c, v) in line.iter_mut().enumerate() {
                *v = frame[c * n_f + r];
            }
            transform_line(&mut line, p_plan.as_ref(), &mut scratch, direction, scale_p);
            for (c, v) in line.iter().enumerate() {
                frame[c * n_f + r] = *v;
            }
        }
    }

    /// Unitary 1D DFT along each row of an `n_k × n_fr` matrix.
    pub fn temporal(&self, x: &CMat, direction: Direction) -> CMat {
        let n_fr = self.dims.n_fr;
        assert_eq!(x.ncols(), n_fr, "column count must equal n_fr");
        let plan = match direction {
            Direction::Forward => &self.t_fwd,
            Direction::Inverse => &self.t_inv,
        };
        let scale = 1.0 / (n_fr as f64).sqrt();
        let mut xt = x.transpose();
        xt.as_mut_slice().par_chunks_mut(n_fr).for_each(|series| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            plan.process_with_scratch(series, &mut scratch);
            for v in series.iter_mut() {
                *v *= scale;
            }
        });
        xt.transpose()
    }
}

fn transform_line(
    line: &mut [Complex64],
    plan: &dyn Fft<f64>,
    scratch: &mut [Complex64],
    direction: Direction,
    scale: f64,
) {
    let n = line.len();
    let half = n / 2;
    match direction {
        Direction::Forward => {
            plan.process_with_scratch(line, scratch);
            // fftshift: DC moves to ⌊n/2⌋
            line.rotate_right(half);
        }
        Direction::Inverse => {
            line.rotate_left(half);
            plan.process_with_scratch(line, scratch);
        }
    }
    for v in line.iter_mut() {
        *v *= scale;
    }
}

/// Centered unitary 2D DFT applied to every frame.
pub fn dft2_frames(x: &ComplexTensor3, direction: Direction) -> ComplexTensor3 {
    let ops = FourierOps::new(x.dims());
    let mut out = x.clone();
    ops.dft2_columns(out.as_matrix_mut(), direction);
    out
}

/// Unitary temporal DFT of each row (pixel time series) of a frame-stacked matrix.
pub fn temporal_dft(x: &CMat, direction: Direction) -> Result<CMat> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::shape("empty matrix"));
    }
    // only n_fr matters for the temporal plan
    let dims = DataDims::new(1, 1, x.ncols())?;
    Ok(FourierOps::new(dims).temporal(x, direction))
}

/// Phase-encoding columns of the navigator band: `⌊(n_p−υ)/2⌋ .. +υ`.
pub fn navigator_band(n_p: usize, upsilon: usize) -> Result<Range<usize>> {
    if upsilon == 0 || upsilon > n_p {
        return Err(Error::param(format!(
            "navigator width {upsilon} outside 1..={n_p}"
        )));
    }
    let start = (n_p - upsilon) / 2;
    Ok(start..start + upsilon)
}

/// `ν × n_fr` navigator matrix (`ν = υ·n_f`); column `t` stacks the central
/// band of frame `t`.
pub fn extract_navigator(y: &ComplexTensor3, upsilon: usize) -> Result<CMat> {
    let dims = y.dims();
    let band = navigator_band(dims.n_p, upsilon)?;
    let lo = band.start * dims.n_f;
    let hi = band.end * dims.n_f;
    Ok(y.as_matrix().rows(lo, hi - lo).into_owned())
}
