//! The compute datapath.
//!
//! Sixteen PEs in a 4x4 grid; PE `(r, c)` owns one output pixel and 32
//! output channels. Columns 0-1 form half A, columns 2-3 half B. The unified
//! 4x4 array reads input buffer 0 and requant registers 0 for every PE; the
//! split array gives each half its own buffer and registers.
//!
//! The methods here are the per-cycle primitives the controller drives, plus
//! whole-phase helpers ([`Engine::load_tile`], [`Engine::mm_step`],
//! [`Engine::check_outputs`], [`Engine::streamout_tile`]) for direct use.

use crate::error::{config, Result};
use crate::golden::{requantize_raw, Kernel, Mode, TensorBuf};
use crate::memory::{StoreAck, Tcdm, BEAT_WORDS};
use crate::perf::{plane_shape, CycleModel, ARRAY_COLS, ARRAY_ROWS, CHANNELS, HALF_COLS, QUANT_BEATS, QUANT_WORDS};

/// Largest patch: 6x6 pixels of 32 channels (3x3 halo on the 4x4 array).
pub const IN_BUF_BYTES: usize = 36 * CHANNELS;
/// One half tile of requantized outputs: 8 pixels of 32 channels.
pub const OUT_BUF_BYTES: usize = 8 * CHANNELS;
pub const PES: usize = ARRAY_ROWS * ARRAY_COLS;
/// Words per activation, quant or output beat.
pub const PIXEL_WORDS: usize = CHANNELS / 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Half {
    A,
    B,
}

impl Half {
    pub const BOTH: [Half; 2] = [Half::A, Half::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Static shape of the array for one job.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArrayCfg {
    pub kernel: Kernel,
    pub qw: u8,
    /// Two independent 4x2 halves rather than one 4x4 array.
    pub split: bool,
}

impl ArrayCfg {
    pub fn new(kernel: Kernel, qw: u8, mode: Mode) -> ArrayCfg {
        ArrayCfg { kernel, qw, split: mode != Mode::Baseline4x4 }
    }

    pub fn tile_cols(&self) -> usize {
        if self.split {
            HALF_COLS
        } else {
            ARRAY_COLS
        }
    }

    pub fn tile_pixels(&self) -> usize {
        ARRAY_ROWS * self.tile_cols()
    }

    /// Input patch (rows, cols) including the kernel halo.
    pub fn patch(&self) -> (usize, usize) {
        let h = 2 * self.kernel.halo();
        (ARRAY_ROWS + h, self.tile_cols() + h)
    }

    pub fn patch_pixels(&self) -> usize {
        let (r, c) = self.patch();
        r * c
    }

    pub fn plane_words(&self) -> usize {
        plane_shape(self.kernel).0
    }

    pub fn words_per_beat(&self, model: &CycleModel) -> usize {
        self.plane_words().div_ceil(model.mm_per_bit(self.kernel) as usize)
    }

    /// Words of plane beat `j`, as a range of plane word indices.
    pub fn beat_words(&self, model: &CycleModel, j: usize) -> std::ops::Range<usize> {
        let wpb = self.words_per_beat(model);
        let w = self.plane_words();
        (j * wpb).min(w)..((j + 1) * wpb).min(w)
    }

    /// PEs driven by `half` on the split array, or every PE when unified.
    pub fn pes(&self, half: Option<Half>) -> impl Iterator<Item = usize> {
        let cols = match (self.split, half) {
            (true, Some(Half::A)) => 0..2,
            (true, Some(Half::B)) => 2..4,
            _ => 0..4,
        };
        (0..ARRAY_ROWS).flat_map(move |r| cols.clone().map(move |c| r * ARRAY_COLS + c))
    }

    /// Buffer index and local column of a PE.
    #[inline]
    fn place(&self, pe: usize) -> (usize, usize, usize) {
        let (r, c) = (pe / ARRAY_COLS, pe % ARRAY_COLS);
        if self.split {
            (c / HALF_COLS, r, c % HALF_COLS)
        } else {
            (0, r, c)
        }
    }
}

/// A one-cycle transient on a MAC adder output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacFlip {
    pub pe: usize,
    pub bit: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Engine {
    pub in_buf: [[u8; IN_BUF_BYTES]; 2],
    /// Half B's copy of the last input beat, written one cycle late.
    pub shadow_in: [u32; PIXEL_WORDS],
    pub shadow_in_valid: bool,
    /// Half B's copy of the last weight beat, consumed one cycle late.
    pub shadow_wgt: [u32; BEAT_WORDS],
    pub shadow_wgt_valid: bool,
    pub acc: [[i32; CHANNELS]; PES],
    /// Per half: 32 scales then 32 biases.
    pub requant: [[i32; QUANT_WORDS]; 2],
    pub out_buf: [[u8; OUT_BUF_BYTES]; 2],
}

impl Default for Engine {
    fn default() -> Self {
        Engine {
            in_buf: [[0; IN_BUF_BYTES]; 2],
            shadow_in: [0; PIXEL_WORDS],
            shadow_in_valid: false,
            shadow_wgt: [0; BEAT_WORDS],
            shadow_wgt_valid: false,
            acc: [[0; CHANNELS]; PES],
            requant: [[0; QUANT_WORDS]; 2],
            out_buf: [[0; OUT_BUF_BYTES]; 2],
        }
    }
}

/// Result of the output comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Check {
    Match,
    Mismatch,
}

/// Where a tile's outputs go in memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutPlacement {
    /// Address of the tile's top-left pixel, first channel.
    pub base: u32,
    pub pixel_stride: u32,
    pub row_stride: u32,
    /// Pixels past these bounds are padding and are not written.
    pub rows: usize,
    pub cols: usize,
}

impl Engine {
    pub fn new() -> Engine {
        Engine::default()
    }

    pub fn write_pixel(&mut self, buf: usize, p: usize, words: &[u32; PIXEL_WORDS]) {
        if let Some(dst) = self.in_buf[buf].get_mut(p * CHANNELS..(p + 1) * CHANNELS) {
            for (i, w) in words.iter().enumerate() {
                dst[4 * i..4 * i + 4].copy_from_slice(&w.to_le_bytes());
            }
        }
    }

    pub fn write_quant(&mut self, buf: usize, q: usize, words: &[u32; PIXEL_WORDS]) {
        if q < QUANT_BEATS {
            for (i, w) in words.iter().enumerate() {
                self.requant[buf][q * PIXEL_WORDS + i] = *w as i32;
            }
        }
    }

    pub fn clear_acc(&mut self, cfg: &ArrayCfg, half: Option<Half>) {
        for pe in cfg.pes(half) {
            self.acc[pe] = [0; CHANNELS];
        }
    }

    /// One MAC cycle: `words` are plane words `word0..` of bit-plane `plane`.
    pub fn mac(&mut self, cfg: &ArrayCfg, half: Option<Half>, word0: usize, words: &[u32], plane: u32, flip: Option<MacFlip>) {
        // 3-bit plane select; a corrupted counter wraps instead of overflowing
        let plane = plane & 7;
        let (_, pw) = cfg.patch();
        let side = cfg.kernel.side();
        let negate = plane + 1 == cfg.qw as u32;
        for pe in cfg.pes(half) {
            let (buf, r, lc) = cfg.place(pe);
            let inb = &self.in_buf[buf];
            let mut add = [0i32; CHANNELS];
            for (i, &w) in words.iter().enumerate() {
                if w == 0 {
                    continue;
                }
                let wi = word0 + i;
                match cfg.kernel {
                    Kernel::Depthwise3x3 => {
                        let pix = (r + wi / side) * pw + lc + wi % side;
                        let base = pix * CHANNELS;
                        let mut bits = w;
                        while bits != 0 {
                            let lane = bits.trailing_zeros() as usize;
                            bits &= bits - 1;
                            add[lane] += (inb[base + lane] as i8 as i32) << plane;
                        }
                    }
                    _ => {
                        let (tap, ki) = (wi / CHANNELS, wi % CHANNELS);
                        let pix = (r + tap / side) * pw + lc + tap % side;
                        let a = (inb[pix * CHANNELS + ki] as i8 as i32) << plane;
                        if a == 0 {
                            continue;
                        }
                        let mut bits = w;
                        while bits != 0 {
                            let lane = bits.trailing_zeros() as usize;
                            bits &= bits - 1;
                            add[lane] += a;
                        }
                    }
                }
            }
            if negate {
                add.iter_mut().for_each(|v| *v = v.wrapping_neg());
            }
            if let Some(f) = flip.filter(|f| f.pe == pe) {
                add[(f.bit / 32) as usize % CHANNELS] ^= 1 << (f.bit % 32);
            }
            for (a, d) in self.acc[pe].iter_mut().zip(add) {
                *a = a.wrapping_add(d);
            }
        }
    }

    /// Requantizes the accumulators of `half` (or the whole unified array)
    /// into the output buffers.
    pub fn requantize(&mut self, cfg: &ArrayCfg, half: Option<Half>, shift: u32) {
        for pe in cfg.pes(half) {
            let (r, c) = (pe / ARRAY_COLS, pe % ARRAY_COLS);
            let q = if cfg.split { c / HALF_COLS } else { 0 };
            let dst = c / HALF_COLS;
            let p = r * HALF_COLS + c % HALF_COLS;
            for ch in 0..CHANNELS {
                let v = requantize_raw(self.acc[pe][ch], self.requant[q][ch], self.requant[q][CHANNELS + ch], shift);
                self.out_buf[dst][p * CHANNELS + ch] = v as u8;
            }
        }
    }

    /// Bitwise XNOR-reduction of the two halves' output buffers.
    pub fn compare_outputs(&self) -> Check {
        if self.out_buf[0] == self.out_buf[1] {
            Check::Match
        } else {
            Check::Mismatch
        }
    }

    /// Output pixel `p` of a tile in row-major order.
    pub fn out_pixel(&self, cfg: &ArrayCfg, half: Option<Half>, p: usize) -> [u32; PIXEL_WORDS] {
        let (buf, local) = match (cfg.split, half) {
            (true, Some(h)) => (h.index(), p),
            _ => {
                let (r, c) = (p / ARRAY_COLS, p % ARRAY_COLS);
                (c / HALF_COLS, r * HALF_COLS + c % HALF_COLS)
            }
        };
        let src = &self.out_buf[buf][local * CHANNELS..(local + 1) * CHANNELS];
        std::array::from_fn(|i| u32::from_le_bytes(src[4 * i..4 * i + 4].try_into().unwrap()))
    }

    /// Fills a half's input buffer from a patch of 32 channels; redundancy
    /// mode broadcasts the patch to both halves. Returns the cycles the
    /// phase takes.
    pub fn load_tile(&mut self, model: &CycleModel, mode: Mode, cfg: &ArrayCfg, half: Half, slice: &TensorBuf<i8>) -> Result<u32> {
        let (ph, pw) = cfg.patch();
        if slice.dims() != (ph, pw, CHANNELS) {
            return Err(config(format!(
                "patch is {}x{}x{}, the {:?} tile needs {ph}x{pw}x{CHANNELS}",
                slice.h, slice.w, slice.c, cfg.kernel
            )));
        }
        let targets: &[usize] = match mode {
            Mode::Baseline4x4 => &[0],
            Mode::Performance => &[half.index()][..],
            Mode::Redundancy => &[0, 1],
        };
        for p in 0..ph * pw {
            let bytes = &slice.data[p * CHANNELS..(p + 1) * CHANNELS];
            let words = std::array::from_fn(|i| u32::from_le_bytes([0, 1, 2, 3].map(|k| bytes[4 * i + k] as u8)));
            for &t in targets {
                self.write_pixel(t, p, &words);
            }
        }
        Ok(match mode {
            Mode::Baseline4x4 => model.load_base(cfg.kernel),
            _ => model.load_half(cfg.kernel),
        })
    }

    pub fn set_quant(&mut self, half: Half, scale: &[i32], bias: &[i32]) {
        let q = &mut self.requant[half.index()];
        for ch in 0..CHANNELS {
            q[ch] = scale.get(ch).copied().unwrap_or(0);
            q[CHANNELS + ch] = bias.get(ch).copied().unwrap_or(0);
        }
    }

    /// Streams one IC block of packed weight planes through every active PE.
    pub fn mm_step(&mut self, model: &CycleModel, cfg: &ArrayCfg, block: &[u32]) -> Result<u32> {
        let w = cfg.plane_words();
        if block.len() != cfg.qw as usize * w {
            return Err(config("weight block does not match the kernel and precision"));
        }
        for b in 0..cfg.qw as usize {
            for j in 0..model.mm_per_bit(cfg.kernel) as usize {
                let range = cfg.beat_words(model, j);
                let words = &block[b * w + range.start..b * w + range.end];
                self.mac(cfg, None, range.start, words, b as u32, None);
            }
        }
        Ok(model.mm(cfg.kernel, cfg.qw))
    }

    /// Requantizes both halves a timeshift apart and compares them.
    pub fn check_outputs(&mut self, model: &CycleModel, cfg: &ArrayCfg, shift: u32) -> (Check, u32) {
        self.requantize(cfg, Some(Half::A), shift);
        self.requantize(cfg, Some(Half::B), shift);
        (self.compare_outputs(), model.check())
    }

    /// Writes a requantized tile to memory, one pixel per beat. Returns the
    /// number of beats issued and the phase length.
    pub fn streamout_tile(
        &mut self,
        tcdm: &mut Tcdm,
        model: &CycleModel,
        mode: Mode,
        cfg: &ArrayCfg,
        half: Option<Half>,
        shift: u32,
        place: &OutPlacement,
    ) -> Result<(usize, u32)> {
        // redundancy mode requantized both halves for the check already
        if mode != Mode::Redundancy {
            self.requantize(cfg, half, shift);
        }
        let tw = cfg.tile_cols();
        let mut beats = 0;
        for p in 0..cfg.tile_pixels() {
            let (r, c) = (p / tw, p % tw);
            if r >= place.rows || c >= place.cols {
                continue;
            }
            let addr = place.base + r as u32 * place.row_stride + c as u32 * place.pixel_stride;
            if let StoreAck::Dropped = tcdm.stream_store(addr, &self.out_pixel(cfg, half, p))? {
                return Err(config("store beat dropped"));
            }
            beats += 1;
        }
        let cycles = if cfg.split { model.streamout_half } else { model.streamout_base };
        Ok((beats, cycles))
    }
}
