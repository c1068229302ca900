//! Tensor files and the synthetic dynamic phantom.
//!
//! # Tensor file layout
//!
//! All integers little-endian.
//!
//! | offset | size | content                                         |
//! |--------|------|-------------------------------------------------|
//! | 0      | 8    | magic `CKTENS01`                                |
//! | 8      | 4    | dtype: 1 = complex (f32 re, f32 im), 2 = uint8  |
//! | 12     | 4    | `n_f`                                           |
//! | 16     | 4    | `n_p`                                           |
//! | 20     | 4    | `n_fr`                                          |
//! | 24     | ...  | payload                                         |
//!
//! The payload is written frame by frame; inside a frame entries run
//! row-major (`r` outer, `c` inner). Complex entries take 8 bytes, mask
//! entries 1 byte (0 or 1).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::complex_gaussian;
use crate::tensor::{ComplexTensor3, DataDims, Direction, FourierOps};
use crate::Complex64;

pub const MAGIC: &[u8; 8] = b"CKTENS01";
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum DType {
    Complex64 = 1,
    Uint8 = 2,
}

impl DType {
    fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::Complex64),
            2 => Some(DType::Uint8),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::Complex64 => 8,
            DType::Uint8 => 1,
        }
    }
}

/// Decoded contents of a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    Complex(ComplexTensor3),
    /// Column-stacked layout, same as [`ComplexTensor3`].
    Mask(DataDims, Vec<u8>),
}

impl TensorPayload {
    pub fn dims(&self) -> DataDims {
        match self {
            TensorPayload::Complex(t) => t.dims(),
            TensorPayload::Mask(d, _) => *d,
        }
    }
}

fn header(dtype: DType, dims: DataDims) -> Result<Vec<u8>> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&(dtype as u32).to_le_bytes());
    for n in [dims.n_f, dims.n_p, dims.n_fr] {
        let n = u32::try_from(n).map_err(|_| Error::param(format!("dimension {n} exceeds u32")))?;
        h.extend_from_slice(&n.to_le_bytes());
    }
    Ok(h)
}

/// Encodes a payload into its on-disk bytes.
pub fn encode(payload: &TensorPayload) -> Result<Vec<u8>> {
    let dims = payload.dims();
    let (n_f, n_p) = (dims.n_f, dims.n_p);
    let n_k = dims.n_k();
    match payload {
        TensorPayload::Complex(t) => {
            let mut out = header(DType::Complex64, dims)?;
            out.reserve(dims.len() * 8);
            let data = t.as_slice();
            for fr in 0..dims.n_fr {
                for r in 0..n_f {
                    for c in 0..n_p {
                        let z = data[fr * n_k + c * n_f + r];
                        out.extend_from_slice(&(z.re as f32).to_le_bytes());
                        out.extend_from_slice(&(z.im as f32).to_le_bytes());
                    }
                }
            }
            Ok(out)
        }
        TensorPayload::Mask(_, bits) => {
            if bits.len() != dims.len() {
                return Err(Error::shape("mask length does not match dims"));
            }
            let mut out = header(DType::Uint8, dims)?;
            out.reserve(dims.len());
            for fr in 0..dims.n_fr {
                for r in 0..n_f {
                    for c in 0..n_p {
                        out.push(bits[fr * n_k + c * n_f + r]);
                    }
                }
            }
            Ok(out)
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            msg: "header truncated".into(),
        })
}

/// Decodes on-disk bytes.
pub fn decode(bytes: &[u8]) -> Result<TensorPayload> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected CKTENS01".into(),
        });
    }
    let code = read_u32(bytes, 8)?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::Format {
        offset: 8,
        msg: format!("unknown dtype code {code}"),
    })?;
    let mut n = [0usize; 3];
    for (i, slot) in n.iter_mut().enumerate() {
        let off = 12 + 4 * i;
        let v = read_u32(bytes, off)? as usize;
        if v == 0 {
            return Err(Error::Format {
                offset: off as u64,
                msg: "zero dimension".into(),
            });
        }
        *slot = v;
    }
    let dims = DataDims::new(n[0], n[1], n[2])?;
    let expected = HEADER_LEN + dims.len() * dtype.width();
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("payload truncated: {dims} needs {expected} bytes"),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            offset: expected as u64,
            msg: "trailing bytes after payload".into(),
        });
    }

    let (n_f, n_p) = (dims.n_f, dims.n_p);
    let n_k = dims.n_k();
    let payload = &bytes[HEADER_LEN..];
    match dtype {
        DType::Complex64 => {
            let mut data = vec![Complex64::new(0.0, 0.0); dims.len()];
            for (i, chunk) in payload.chunks_exact(8).enumerate() {
                let fr = i / n_k;
                let within = i % n_k;
                let (r, c) = (within / n_p, within % n_p);
                let re = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                let im = f32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]);
                if !re.is_finite() || !im.is_finite() {
                    return Err(Error::Format {
                        offset: (HEADER_LEN + 8 * i) as u64,
                        msg: "non-finite value".into(),
                    });
                }
                data[fr * n_k + c * n_f + r] = Complex64::new(re as f64, im as f64);
            }
            Ok(TensorPayload::Complex(ComplexTensor3::from_vec(dims, data)?))
        }
        DType::Uint8 => {
            let mut bits = vec![0u8; dims.len()];
            for (i, &b) in payload.iter().enumerate() {
                if b > 1 {
                    return Err(Error::Format {
                        offset: (HEADER_LEN + i) as u64,
                        msg: format!("mask byte {b} is not 0 or 1"),
                    });
                }
                let fr = i / n_k;
                let within = i % n_k;
                let (r, c) = (within / n_p, within % n_p);
                bits[fr * n_k + c * n_f + r] = b;
            }
            Ok(TensorPayload::Mask(dims, bits))
        }
    }
}

pub fn write_payload(path: &Path, payload: &TensorPayload) -> Result<()> {
    let bytes = encode(payload)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_payload(path: &Path) -> Result<TensorPayload> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save_tensor(path: &Path, t: &ComplexTensor3) -> Result<()> {
    write_payload(path, &TensorPayload::Complex(t.clone()))
}

pub fn load_tensor(path: &Path) -> Result<ComplexTensor3> {
    match read_payload(path)? {
        TensorPayload::Complex(t) => Ok(t),
        TensorPayload::Mask(..) => Err(Error::Format {
            offset: 8,
            msg: "dtype mismatch: expected complex tensor, found uint8 mask".into(),
        }),
    }
}

/// Static part of the phantom: a smooth-edged ellipse with a linear intensity gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSpec {
    /// Semi-axes as fractions of half the grid size along each axis.
    pub semi_axis_f: f64,
    pub semi_axis_p: f64,
    pub level: f64,
    /// Relative intensity change across the ellipse along the phase-encoding axis.
    pub gradient: f64,
}

/// Moving annulus whose radius oscillates sinusoidally in time.
#[derive(Debug, Clone, PartialEq)]
pub struct RingSpec {
    pub center_f: f64,
    pub center_p: f64,
    pub mean_radius: f64,
    pub amplitude: f64,
    /// Period in frames.
    pub period: f64,
    pub thickness: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: DataDims,
    pub background: BackgroundSpec,
    pub ring: RingSpec,
    pub noise_std: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Ring centered in the grid with proportions matching the 64×64 default.
    pub fn default_for(dims: DataDims) -> Self {
        let half = dims.n_f.min(dims.n_p) as f64 / 2.0;
        PhantomSpec {
            dims,
            background: BackgroundSpec {
                semi_axis_f: 0.8,
                semi_axis_p: 0.9,
                level: 0.35,
                gradient: 0.4,
            },
            ring: RingSpec {
                center_f: (dims.n_f / 2) as f64,
                center_p: (dims.n_p / 2) as f64 - 0.1 * half,
                mean_radius: 0.3 * half,
                amplitude: 0.1 * half,
                period: 8.0,
                thickness: 0.12 * half,
                intensity: 1.0,
            },
            noise_std: 0.005,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.ring;
        let b = &self.background;
        let finite = [
            r.center_f, r.center_p, r.mean_radius, r.amplitude, r.period, r.thickness,
            r.intensity, b.semi_axis_f, b.semi_axis_p, b.level, b.gradient, self.noise_std,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("phantom parameters must be finite"));
        }
        if r.period < 2.0 {
            return Err(Error::param(format!("ring period {} < 2", r.period)));
        }
        if r.amplitude < 0.0 || r.amplitude >= r.mean_radius {
            return Err(Error::param(format!(
                "ring amplitude {} must lie in [0, mean radius {})",
                r.amplitude, r.mean_radius
            )));
        }
        if r.thickness <= 0.0 {
            return Err(Error::param("ring thickness must be positive"));
        }
        if r.mean_radius - r.amplitude - r.thickness / 2.0 < 0.0 {
            return Err(Error::param("ring inner edge crosses its center"));
        }
        let reach = r.mean_radius + r.amplitude + r.thickness / 2.0 + 1.0;
        let (nf, np) = (self.dims.n_f as f64, self.dims.n_p as f64);
        if r.center_f - reach < 0.0
            || r.center_f + reach > nf - 1.0
            || r.center_p - reach < 0.0
            || r.center_p + reach > np - 1.0
        {
            return Err(Error::param(format!(
                "ring (reach {reach:.2}) does not fit inside the {}×{} grid",
                self.dims.n_f, self.dims.n_p
            )));
        }
        if b.semi_axis_f <= 0.0 || b.semi_axis_p <= 0.0 || b.semi_axis_f > 1.0 || b.semi_axis_p > 1.0 {
            return Err(Error::param("background semi-axes must lie in (0, 1]"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::param("noise_std must be nonnegative"));
        }
        Ok(())
    }

    fn ring_radius(&self, t: usize) -> f64 {
        let r = &self.ring;
        let phase = (t as f64).rem_euclid(r.period) / r.period;
        r.mean_radius + r.amplitude * (2.0 * std::f64::consts::PI * phase).sin()
    }

    fn background_value(&self, row: usize, col: usize) -> f64 {
        let b = &self.background;
        let cf = (self.dims.n_f / 2) as f64;
        let cp = (self.dims.n_p / 2) as f64;
        let af = b.semi_axis_f * self.dims.n_f as f64 / 2.0;
        let ap = b.semi_axis_p * self.dims.n_p as f64 / 2.0;
        let (df, dp) = (row as f64 - cf, col as f64 - cp);
        let rho = ((df / af).powi(2) + (dp / ap).powi(2)).sqrt();
        // approximate signed distance to the boundary, 1-pixel linear ramp
        let occ = (0.5 + (1.0 - rho) * af.min(ap)).clamp(0.0, 1.0);
        occ * b.level * (1.0 + b.gradient * dp / ap)
    }

    fn pixel(&self, row: usize, col: usize, radius: f64) -> f64 {
        let r = &self.ring;
        let d = ((row as f64 - r.center_f).powi(2) + (col as f64 - r.center_p).powi(2)).sqrt();
        let occ = (0.5 + r.thickness / 2.0 - (d - radius).abs()).clamp(0.0, 1.0);
        (1.0 - occ) * self.background_value(row, col) + occ * r.intensity
    }
}

/// Renders the phantom image series and its (noisy) k-space.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(ComplexTensor3, ComplexTensor3)> {
    spec.validate()?;
    let dims = spec.dims;
    let n_k = dims.n_k();
    let n_f = dims.n_f;

    let mut image = ComplexTensor3::zeros(dims);
    image
        .as_mut_slice()
        .par_chunks_mut(n_k)
        .enumerate()
        .for_each(|(t, frame)| {
            let radius = spec.ring_radius(t);
            for (k, v) in frame.iter_mut().enumerate() {
                *v = Complex64::new(spec.pixel(k % n_f, k / n_f, radius), 0.0);
            }
        });

    let ops = FourierOps::new(dims);
    let mut kspace = image.clone();
    ops.dft2_columns(kspace.as_matrix_mut(), Direction::Forward);
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = complex_gaussian(n_k, dims.n_fr, spec.noise_std, &mut rng);
        *kspace.as_matrix_mut() += noise;
    }
    Ok((image, kspace))
}
