//! Bit-exact reference model for the supported convolutions.
//!
//! Everything in here is written as plain nested loops over logical tensor
//! coordinates so it can serve as the oracle for the cycle-level datapath.
//! Tensors use an HWC (channel-minor) layout. 3x3 kernels use unit stride and
//! one pixel of zero padding, so input and output spatial sizes match.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

/// Activation bit-width. Fixed by the datapath.
pub const ACT_BITS: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Pointwise1x1,
    Dense3x3,
    Depthwise3x3,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Pointwise1x1, Kernel::Dense3x3, Kernel::Depthwise3x3];

    /// Number of spatial taps.
    pub fn taps(self) -> usize {
        match self {
            Kernel::Pointwise1x1 => 1,
            Kernel::Dense3x3 | Kernel::Depthwise3x3 => 9,
        }
    }

    /// Zero-padding halo around an output tile.
    pub fn halo(self) -> usize {
        match self {
            Kernel::Pointwise1x1 => 0,
            Kernel::Dense3x3 | Kernel::Depthwise3x3 => 1,
        }
    }

    pub fn side(self) -> usize {
        2 * self.halo() + 1
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Kernel::Pointwise1x1 => 0,
            Kernel::Dense3x3 => 1,
            Kernel::Depthwise3x3 => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Kernel> {
        match code {
            0 => Some(Kernel::Pointwise1x1),
            1 => Some(Kernel::Dense3x3),
            2 => Some(Kernel::Depthwise3x3),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The unhardened 4x4 array: no TMR, no streamer ECC, no DMR.
    Baseline4x4,
    /// Both 4x2 halves work on distinct tiles.
    Performance,
    /// The shadow half re-executes the main half's tile, one cycle behind.
    Redundancy,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline4x4, Mode::Performance, Mode::Redundancy];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline4x4 => "baseline",
            Mode::Performance => "performance",
            Mode::Redundancy => "redundancy",
        }
    }

    /// Safe-mode features: TMR controller and ECC in the streamer.
    pub fn hardened(self) -> bool {
        !matches!(self, Mode::Baseline4x4)
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Mode::Baseline4x4 => 0,
            Mode::Performance => 1,
            Mode::Redundancy => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Mode> {
        match code {
            0 => Some(Mode::Baseline4x4),
            1 => Some(Mode::Performance),
            2 => Some(Mode::Redundancy),
            _ => None,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "baseline" | "baseline4x4" => Ok(Mode::Baseline4x4),
            "performance" => Ok(Mode::Performance),
            "redundancy" => Ok(Mode::Redundancy),
            other => Err(config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Per-output-channel requantization parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: Vec<i32>,
    pub bias: Vec<i32>,
    pub shift: u32,
}

impl QuantParams {
    /// Same scale and bias on every channel.
    pub fn uniform(k_o: usize, scale: i32, bias: i32, shift: u32) -> QuantParams {
        QuantParams { scale: vec![scale; k_o], bias: vec![bias; k_o], shift }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerJob {
    pub kernel: Kernel,
    pub k_i: usize,
    pub k_o: usize,
    pub h_o: usize,
    pub w_o: usize,
    /// Weight bit-width, 2..=8.
    pub qw: u8,
    pub mode: Mode,
    pub quant: QuantParams,
}

/// Geometry fields are held in 16-bit configuration registers.
pub const MAX_DIM: usize = 0xffff;

impl LayerJob {
    pub fn new(kernel: Kernel, dims: [usize; 4], qw: u8, mode: Mode, quant: QuantParams) -> LayerJob {
        let [k_i, k_o, h_o, w_o] = dims;
        LayerJob { kernel, k_i, k_o, h_o, w_o, qw, mode, quant }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_i", self.k_i), ("k_o", self.k_o), ("h_o", self.h_o), ("w_o", self.w_o)] {
            if v == 0 || v > MAX_DIM {
                return Err(config(format!("{name}={v} must be in 1..={MAX_DIM}")));
            }
        }
        if !(2..=8).contains(&self.qw) {
            return Err(config(format!("qw={} must be in 2..=8", self.qw)));
        }
        if self.kernel == Kernel::Depthwise3x3 && self.k_i != self.k_o {
            return Err(config("depthwise jobs need k_i == k_o"));
        }
        if self.quant.scale.len() != self.k_o || self.quant.bias.len() != self.k_o {
            return Err(config("quantization tables must have k_o entries"));
        }
        if self.quant.shift > 31 {
            return Err(config("shift must be in 0..=31"));
        }
        Ok(())
    }

    /// Input spatial dims (same padding for 3x3, so equal to the output's).
    pub fn input_dims(&self) -> (usize, usize, usize) {
        (self.h_o, self.w_o, self.k_i)
    }

    pub fn weight_dims(&self) -> (usize, usize, usize) {
        let c = if self.kernel == Kernel::Depthwise3x3 { 1 } else { self.k_i };
        (self.k_o, self.kernel.taps(), c)
    }

    pub fn output_dims(&self) -> (usize, usize, usize) {
        (self.h_o, self.w_o, self.k_o)
    }

    pub fn weight_range(&self) -> (i8, i8) {
        let half = 1i16 << (self.qw - 1);
        ((-half) as i8, (half - 1) as i8)
    }
}

/// A dense HWC tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorBuf<T> {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> TensorBuf<T> {
    pub fn zeros(h: usize, w: usize, c: usize) -> TensorBuf<T> {
        TensorBuf { h, w, c, data: vec![T::default(); h * w * c] }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<T>) -> Result<TensorBuf<T>> {
        if data.len() != h * w * c {
            return Err(config(format!("tensor data has {} elements, dims need {}", data.len(), h * w * c)));
        }
        Ok(TensorBuf { h, w, c, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> T {
        self.data[self.idx(y, x, ch)]
    }
}

fn check_dims<T>(what: &str, t: &TensorBuf<T>, want: (usize, usize, usize)) -> Result<()> {
    if (t.h, t.w, t.c) != want || t.data.len() != want.0 * want.1 * want.2 {
        return Err(config(format!(
            "{what} tensor is {}x{}x{}, job expects {}x{}x{}",
            t.h, t.w, t.c, want.0, want.1, want.2
        )));
    }
    Ok(())
}

/// Integer convolution producing 32-bit accumulators, one per output pixel
/// and output channel.
pub fn conv_golden(job: &LayerJob, acts: &TensorBuf<i8>, weights: &TensorBuf<i8>) -> Result<TensorBuf<i32>> {
    job.validate()?;
    check_dims("activation", acts, job.input_dims())?;
    check_dims("weight", weights, job.weight_dims())?;
    let (h, w, k_o) = job.output_dims();
    let halo = job.kernel.halo() as isize;
    let side = job.kernel.side();
    let mut out = TensorBuf::<i32>::zeros(h, w, k_o);
    for y in 0..h {
        for x in 0..w {
            for ko in 0..k_o {
                let mut acc: i32 = 0;
                for ky in 0..side {
                    for kx in 0..side {
                        let iy = y as isize + ky as isize - halo;
                        let ix = x as isize + kx as isize - halo;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let (iy, ix) = (iy as usize, ix as usize);
                        let tap = ky * side + kx;
                        match job.kernel {
                            Kernel::Depthwise3x3 => {
                                acc += acts.at(iy, ix, ko) as i32 * weights.at(ko, tap, 0) as i32;
                            }
                            _ => {
                                for ki in 0..job.k_i {
                                    acc += acts.at(iy, ix, ki) as i32 * weights.at(ko, tap, ki) as i32;
                                }
                            }
                        }
                    }
                }
                let i = out.idx(y, x, ko);
                out.data[i] = acc;
            }
        }
    }
    Ok(out)
}

/// `saturate((acc * scale + bias) >> shift)` with an arithmetic shift.
#[inline]
pub fn requantize(acc: i32, ch: usize, quant: &QuantParams) -> i8 {
    requantize_raw(acc, quant.scale[ch], quant.bias[ch], quant.shift)
}

#[inline]
pub fn requantize_raw(acc: i32, scale: i32, bias: i32, shift: u32) -> i8 {
    let v = (acc as i64 * scale as i64 + bias as i64) >> (shift & 31);
    v.clamp(i8::MIN as i64, i8::MAX as i64) as i8
}

pub fn layer_golden(job: &LayerJob, acts: &TensorBuf<i8>, weights: &TensorBuf<i8>) -> Result<TensorBuf<i8>> {
    let acc = conv_golden(job, acts, weights)?;
    let data = acc
        .data
        .iter()
        .enumerate()
        .map(|(i, &a)| requantize(a, i % job.k_o, &job.quant))
        .collect();
    Ok(TensorBuf { h: acc.h, w: acc.w, c: acc.c, data })
}

const SNNT_MAGIC: &[u8; 4] = b"SNNT";

/// Element types storable in fixture files.
pub trait TensorElem: Copy + Default {
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl TensorElem for i8 {
    const SIZE: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self as u8);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0] as i8
    }
}

impl TensorElem for i32 {
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        i32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

/// Serializes a tensor as a 16-byte header (`SNNT`, h, w, c as LE u32)
/// followed by little-endian elements.
pub fn encode_snnt<T: TensorElem>(t: &TensorBuf<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + t.data.len() * T::SIZE);
    out.extend_from_slice(SNNT_MAGIC);
    for d in [t.h, t.w, t.c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_snnt<T: TensorElem>(bytes: &[u8]) -> Result<TensorBuf<T>> {
    if bytes.len() < 16 || &bytes[..4] != SNNT_MAGIC {
        return Err(Error::Format("missing SNNT header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != n * T::SIZE {
        return Err(Error::Format(format!(
            "payload is {} bytes, {h}x{w}x{c} needs {}",
            body.len(),
            n * T::SIZE
        )));
    }
    let data = body.chunks_exact(T::SIZE).map(T::read_le).collect();
    Ok(TensorBuf { h, w, c, data })
}

pub fn write_snnt<T: TensorElem>(path: impl AsRef<Path>, t: &TensorBuf<T>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_snnt(t))?;
    Ok(())
}

pub fn read_snnt<T: TensorElem>(path: impl AsRef<Path>) -> Result<TensorBuf<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_snnt(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn job(kernel: Kernel, dims: [usize; 4]) -> LayerJob {
        LayerJob::new(kernel, dims, 8, Mode::Baseline4x4, QuantParams::uniform(dims[1], 1, 0, 0))
    }

    fn random(rng: &mut ChaCha8Rng, (h, w, c): (usize, usize, usize), lo: i8, hi: i8) -> TensorBuf<i8> {
        TensorBuf { h, w, c, data: (0..h * w * c).map(|_| rng.gen_range(lo..=hi)).collect() }
    }

    #[test]
    fn pointwise_identity() {
        let j = job(Kernel::Pointwise1x1, [1, 1, 1, 1]);
        let a = TensorBuf::from_vec(1, 1, 1, vec![1i8]).unwrap();
        let w = TensorBuf::from_vec(1, 1, 1, vec![1i8]).unwrap();
        assert_eq!(conv_golden(&j, &a, &w).unwrap().data, vec![1]);
    }

    #[test]
    fn dense_sum_of_ones() {
        // 3x3 input, centre output pixel sees all nine taps.
        let j = job(Kernel::Dense3x3, [1, 1, 3, 3]);
        let a = TensorBuf::from_vec(3, 3, 1, vec![1i8; 9]).unwrap();
        let w = TensorBuf::from_vec(1, 9, 1, vec![1i8; 9]).unwrap();
        let out = conv_golden(&j, &a, &w).unwrap();
        assert_eq!(out.at(1, 1, 0), 9);
        assert_eq!(out.at(0, 0, 0), 4);
    }

    #[test]
    fn requantize_examples() {
        let q = |acc, scale, bias, shift| requantize_raw(acc, scale, bias, shift);
        assert_eq!(q(0, 1, 0, 0), 0);
        assert_eq!(q(1000, 1, 0, 0), 127);
        assert_eq!(q(-1000, 1, 0, 0), -128);
        // (300*3 + 50) / 8 = 118.75 -> 118
        assert_eq!(q(300, 3, 50, 3), 118);
        // floor, not truncation
        assert_eq!(q(-1, 1, 0, 1), -1);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let j = job(Kernel::Pointwise1x1, [2, 2, 2, 2]);
        let a = TensorBuf::<i8>::zeros(2, 2, 3);
        let w = TensorBuf::<i8>::zeros(2, 1, 2);
        assert!(matches!(conv_golden(&j, &a, &w), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_jobs_rejected() {
        let mut j = job(Kernel::Depthwise3x3, [4, 8, 4, 4]);
        assert!(j.validate().is_err());
        j.k_i = 8;
        assert!(j.validate().is_ok());
        j.qw = 1;
        assert!(j.validate().is_err());
    }

    #[test]
    fn depthwise_matches_block_diagonal_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 1..=8 {
            let dw = job(Kernel::Depthwise3x3, [k, k, 5, 6]);
            let dense = job(Kernel::Dense3x3, [k, k, 5, 6]);
            let a = random(&mut rng, dw.input_dims(), -128, 127);
            let wd = random(&mut rng, dw.weight_dims(), -128, 127);
            let mut wfull = TensorBuf::<i8>::zeros(k, 9, k);
            for ko in 0..k {
                for tap in 0..9 {
                    let i = wfull.idx(ko, tap, ko);
                    wfull.data[i] = wd.at(ko, tap, 0);
                }
            }
            assert_eq!(conv_golden(&dw, &a, &wd).unwrap(), conv_golden(&dense, &a, &wfull).unwrap());
        }
    }

    #[test]
    fn snnt_round_trip_and_rejects_garbage() {
        let t = TensorBuf::from_vec(2, 1, 3, vec![1i32, -2, 3, i32::MIN, 0, 7]).unwrap();
        let bytes = encode_snnt(&t);
        assert_eq!(&bytes[..4], b"SNNT");
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(decode_snnt::<i32>(&bytes).unwrap(), t);
        assert!(decode_snnt::<i8>(&bytes).is_err());
        assert!(decode_snnt::<i8>(b"NOPE").is_err());
    }

    proptest! {
        #[test]
        fn conv_is_linear_in_activations(seed in any::<u64>(), kidx in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kernel = Kernel::ALL[kidx];
            let k_i = rng.gen_range(1..6);
            let k_o = if kernel == Kernel::Depthwise3x3 { k_i } else { rng.gen_range(1..6) };
            let j = job(kernel, [k_i, k_o, rng.gen_range(1..5), rng.gen_range(1..5)]);
            let a1 = random(&mut rng, j.input_dims(), -64, 63);
            let a2 = random(&mut rng, j.input_dims(), -64, 63);
            let sum = TensorBuf { data: a1.data.iter().zip(&a2.data).map(|(x, y)| x + y).collect(), ..a1.clone() };
            let w = random(&mut rng, j.weight_dims(), -128, 127);
            let c1 = conv_golden(&j, &a1, &w).unwrap();
            let c2 = conv_golden(&j, &a2, &w).unwrap();
            let cs = conv_golden(&j, &sum, &w).unwrap();
            let added: Vec<i32> = c1.data.iter().zip(&c2.data).map(|(x, y)| x + y).collect();
            prop_assert_eq!(cs.data, added);
        }

        #[test]
        fn requantize_monotonic(a in any::<i32>(), b in any::<i32>(), scale in 1i32..1000, bias in any::<i32>(), shift in 0u32..32) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(requantize_raw(lo, scale, bias, shift) <= requantize_raw(hi, scale, bias, shift));
        }
    }
}
