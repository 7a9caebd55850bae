//! Control plane: job FSM, register file and the two μloop tiling units.
//!
//! Hardened hardware keeps three replicas of the whole control state and
//! votes them bitwise every cycle, writing the voted value back into all
//! three. The baseline array has a single unprotected copy.

use crate::error::{Error, Result};
use crate::golden::{Kernel, LayerJob, Mode};
use crate::layout::JobLayout;
use crate::perf::{plane_shape, CycleModel, Phase, ARRAY_ROWS, ARRAY_COLS, CHANNELS, HALF_COLS, QUANT_WORDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[repr(u8)]
pub enum FsmState {
    Idle = 0,
    InputLoad = 1,
    Mm = 2,
    OutputCheck = 3,
    Streamout = 4,
    ErrorRecovery = 5,
    Done = 6,
}

impl FsmState {
    /// `None` for the one unused 3-bit encoding.
    pub fn from_bits(b: u8) -> Option<FsmState> {
        use FsmState::*;
        [Idle, InputLoad, Mm, OutputCheck, Streamout, ErrorRecovery, Done].get(b as usize).copied()
    }

    pub fn phase(self) -> Option<Phase> {
        match self {
            FsmState::InputLoad => Some(Phase::InputLoad),
            FsmState::Mm => Some(Phase::Mm),
            FsmState::OutputCheck => Some(Phase::OutputCheck),
            FsmState::Streamout => Some(Phase::Streamout),
            FsmState::ErrorRecovery => Some(Phase::ErrorRecovery),
            FsmState::Idle | FsmState::Done => None,
        }
    }
}

/// Bit-addressable storage, for fault injection.
trait Field {
    fn flip(&mut self, bit: u32);
}

macro_rules! int_field {
    ($($t:ty),*) => {$(
        impl Field for $t {
            fn flip(&mut self, bit: u32) {
                *self ^= 1 << bit;
            }
        }
    )*};
}
int_field!(u8, u16, u32);

impl Field for bool {
    fn flip(&mut self, _bit: u32) {
        *self = !*self;
    }
}

fn flip_in(fields: &mut [(&mut dyn Field, u32)], mut bit: u32) {
    for (f, w) in fields.iter_mut() {
        if bit < *w {
            f.flip(bit);
            return;
        }
        bit -= *w;
    }
    panic!("bit index past the end of the register");
}

trait Maj: Copy + PartialEq {
    fn maj(a: Self, b: Self, c: Self) -> Self;
}

macro_rules! int_maj {
    ($($t:ty),*) => {$(
        impl Maj for $t {
            fn maj(a: Self, b: Self, c: Self) -> Self {
                (a & b) | (a & c) | (b & c)
            }
        }
    )*};
}
int_maj!(u8, u16, u32);

impl Maj for bool {
    fn maj(a: Self, b: Self, c: Self) -> Self {
        (a && b) || (a && c) || (b && c)
    }
}

/// One tiling unit: four nested loop counters (IC block innermost) and the
/// byte offsets derived from them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ULoop {
    pub ko: u16,
    pub row: u16,
    pub col: u16,
    pub ic: u16,
    pub done: bool,
    pub act_off: u32,
    pub wgt_off: u32,
    pub out_off: u32,
}

impl ULoop {
    pub const BITS: u32 = 4 * 16 + 1 + 3 * 32;

    pub fn flip(&mut self, bit: u32) {
        flip_in(
            &mut [
                (&mut self.ko, 16),
                (&mut self.row, 16),
                (&mut self.col, 16),
                (&mut self.ic, 16),
                (&mut self.done, 1),
                (&mut self.act_off, 32),
                (&mut self.wgt_off, 32),
                (&mut self.out_off, 32),
            ],
            bit,
        )
    }

    fn vote(a: &ULoop, b: &ULoop, c: &ULoop) -> ULoop {
        ULoop {
            ko: Maj::maj(a.ko, b.ko, c.ko),
            row: Maj::maj(a.row, b.row, c.row),
            col: Maj::maj(a.col, b.col, c.col),
            ic: Maj::maj(a.ic, b.ic, c.ic),
            done: Maj::maj(a.done, b.done, c.done),
            act_off: Maj::maj(a.act_off, b.act_off, c.act_off),
            wgt_off: Maj::maj(a.wgt_off, b.wgt_off, c.wgt_off),
            out_off: Maj::maj(a.out_off, b.out_off, c.out_off),
        }
    }
}

/// Memory-mapped job configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct RegFile {
    pub kernel: u8,
    pub qw: u8,
    pub hmr_mode: u8,
    pub k_i: u16,
    pub k_o: u16,
    pub h_o: u16,
    pub w_o: u16,
    pub act_base: u32,
    pub wgt_base: u32,
    pub quant_base: u32,
    pub out_base: u32,
    pub shift: u8,
    /// Number of detected output mismatches.
    pub error_status: u32,
}

impl RegFile {
    pub const BITS: u32 = 2 + 4 + 2 + 4 * 16 + 4 * 32 + 5 + 32;

    pub fn flip(&mut self, bit: u32) {
        flip_in(
            &mut [
                (&mut self.kernel, 2),
                (&mut self.qw, 4),
                (&mut self.hmr_mode, 2),
                (&mut self.k_i, 16),
                (&mut self.k_o, 16),
                (&mut self.h_o, 16),
                (&mut self.w_o, 16),
                (&mut self.act_base, 32),
                (&mut self.wgt_base, 32),
                (&mut self.quant_base, 32),
                (&mut self.out_base, 32),
                (&mut self.shift, 5),
                (&mut self.error_status, 32),
            ],
            bit,
        )
    }

    fn vote(a: &RegFile, b: &RegFile, c: &RegFile) -> RegFile {
        RegFile {
            kernel: Maj::maj(a.kernel, b.kernel, c.kernel),
            qw: Maj::maj(a.qw, b.qw, c.qw),
            hmr_mode: Maj::maj(a.hmr_mode, b.hmr_mode, c.hmr_mode),
            k_i: Maj::maj(a.k_i, b.k_i, c.k_i),
            k_o: Maj::maj(a.k_o, b.k_o, c.k_o),
            h_o: Maj::maj(a.h_o, b.h_o, c.h_o),
            w_o: Maj::maj(a.w_o, b.w_o, c.w_o),
            act_base: Maj::maj(a.act_base, b.act_base, c.act_base),
            wgt_base: Maj::maj(a.wgt_base, b.wgt_base, c.wgt_base),
            quant_base: Maj::maj(a.quant_base, b.quant_base, c.quant_base),
            out_base: Maj::maj(a.out_base, b.out_base, c.out_base),
            shift: Maj::maj(a.shift, b.shift, c.shift),
            error_status: Maj::maj(a.error_status, b.error_status, c.error_status),
        }
    }

    /// Job fields; the mode register is left alone.
    pub fn program(&mut self, job: &LayerJob, layout: &JobLayout) {
        self.kernel = job.kernel.code() as u8;
        self.qw = job.qw;
        self.k_i = job.k_i as u16;
        self.k_o = job.k_o as u16;
        self.h_o = job.h_o as u16;
        self.w_o = job.w_o as u16;
        self.act_base = layout.act_base;
        self.wgt_base = layout.wgt_base;
        self.quant_base = layout.quant_base;
        self.out_base = layout.out_base;
        self.shift = job.quant.shift as u8;
    }
}

/// The full state of one controller replica.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct CtrlState {
    pub fsm: u8,
    pub phase_cycle: u16,
    /// Set from a detected mismatch until the re-verified tile drains.
    pub retry: bool,
    pub uloop: [ULoop; 2],
    pub regs: RegFile,
}

impl CtrlState {
    pub const FSM_BITS: u32 = 3 + 16 + 1;
    pub const BITS: u32 = Self::FSM_BITS + 2 * ULoop::BITS + RegFile::BITS;

    pub fn fsm_state(&self) -> Option<FsmState> {
        FsmState::from_bits(self.fsm)
    }

    pub fn flip_fsm(&mut self, bit: u32) {
        flip_in(&mut [(&mut self.fsm, 3), (&mut self.phase_cycle, 16), (&mut self.retry, 1)], bit)
    }

    /// Flips bit `bit` of the flattened state: FSM register, μloop 0,
    /// μloop 1, register file.
    pub fn flip(&mut self, bit: u32) {
        let u = ULoop::BITS;
        match bit {
            b if b < Self::FSM_BITS => self.flip_fsm(b),
            b if b < Self::FSM_BITS + u => self.uloop[0].flip(b - Self::FSM_BITS),
            b if b < Self::FSM_BITS + 2 * u => self.uloop[1].flip(b - Self::FSM_BITS - u),
            b => self.regs.flip(b - Self::FSM_BITS - 2 * u),
        }
    }

    /// State with the status register cleared, for comparing runs.
    pub fn behavioral(&self) -> CtrlState {
        let mut s = *self;
        s.regs.error_status = 0;
        s
    }
}

/// Bitwise majority of three replicas; the flag reports any disagreement.
pub fn vote(a: &CtrlState, b: &CtrlState, c: &CtrlState) -> (CtrlState, bool) {
    let v = CtrlState {
        fsm: Maj::maj(a.fsm, b.fsm, c.fsm),
        phase_cycle: Maj::maj(a.phase_cycle, b.phase_cycle, c.phase_cycle),
        retry: Maj::maj(a.retry, b.retry, c.retry),
        uloop: [
            ULoop::vote(&a.uloop[0], &b.uloop[0], &c.uloop[0]),
            ULoop::vote(&a.uloop[1], &b.uloop[1], &c.uloop[1]),
        ],
        regs: RegFile::vote(&a.regs, &b.regs, &c.regs),
    };
    (v, !(a == b && b == c))
}

/// Loop bounds and strides derived from the register file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub kernel: Kernel,
    pub mode: Mode,
    pub qw: u8,
    pub n_ko: u32,
    pub n_ic: u32,
    pub n_rows: u32,
    pub n_cols: u32,
    pub tile_w: u32,
    pub h_o: u32,
    pub w_o: u32,
    pub cin_pad: u32,
    pub cout_pad: u32,
    pub plane_words: u32,
}

impl Grid {
    /// `None` when the registers hold an encoding the hardware cannot run.
    /// `hw` is the array the job runs on; the hardened array takes its mode
    /// from the mode register.
    pub fn from_regs(r: &RegFile, hw: Mode) -> Option<Grid> {
        let kernel = Kernel::from_code(r.kernel as u32)?;
        let mode = match hw {
            Mode::Baseline4x4 => Mode::Baseline4x4,
            _ => match Mode::from_code(r.hmr_mode as u32)? {
                Mode::Baseline4x4 => return None,
                m => m,
            },
        };
        let ch = CHANNELS as u32;
        let (h_o, w_o) = (r.h_o as u32, r.w_o as u32);
        let (cols, half) = (ARRAY_COLS as u32, HALF_COLS as u32);
        let (w_pad, tile_w) = match mode {
            Mode::Baseline4x4 => (w_o.next_multiple_of(cols), cols),
            Mode::Performance => (w_o.next_multiple_of(cols), half),
            Mode::Redundancy => (w_o.next_multiple_of(half), half),
        };
        let n_ko = (r.k_o as u32).div_ceil(ch);
        Some(Grid {
            kernel,
            mode,
            qw: r.qw,
            n_ko,
            n_ic: if kernel == Kernel::Depthwise3x3 { 1 } else { (r.k_i as u32).div_ceil(ch) },
            n_rows: h_o.div_ceil(ARRAY_ROWS as u32),
            n_cols: w_pad / tile_w,
            tile_w,
            h_o,
            w_o,
            cin_pad: (r.k_i as u32).next_multiple_of(ch),
            cout_pad: (r.k_o as u32).next_multiple_of(ch),
            plane_words: plane_shape(kernel).0 as u32,
        })
    }

    fn col_step(&self) -> u16 {
        if self.mode == Mode::Performance {
            2
        } else {
            1
        }
    }

    fn first_col(&self, id: usize) -> u16 {
        if self.mode == Mode::Performance {
            id as u16
        } else {
            0
        }
    }

    pub fn phase_len(&self, model: &CycleModel, p: Phase) -> u32 {
        model.phase_len(p, self.kernel, self.qw, self.mode)
    }

    /// Recomputes the derived offsets of a μloop from its counters.
    pub fn with_offsets(&self, mut u: ULoop) -> ULoop {
        let pixel = (u.row as u32 * ARRAY_ROWS as u32).wrapping_mul(self.w_o).wrapping_add(u.col as u32 * self.tile_w);
        let act_blk = if self.kernel == Kernel::Depthwise3x3 { u.ko } else { u.ic } as u32;
        u.act_off = pixel.wrapping_mul(self.cin_pad).wrapping_add(act_blk * CHANNELS as u32);
        let block = (u.ko as u32).wrapping_mul(self.n_ic).wrapping_add(u.ic as u32);
        u.wgt_off = block.wrapping_mul(self.qw as u32 * self.plane_words * 4);
        u.out_off = pixel.wrapping_mul(self.cout_pad).wrapping_add(u.ko as u32 * CHANNELS as u32);
        u
    }

    pub fn uloop_start(&self, id: usize) -> ULoop {
        let u = ULoop { col: self.first_col(id), ..ULoop::default() };
        let done = self.n_ko == 0 || self.n_rows == 0 || u.col as u32 >= self.n_cols;
        self.with_offsets(ULoop { done, ..u })
    }

    /// Byte address of the requantization table for output block `ko`.
    pub fn quant_off(&self, ko: u16) -> u32 {
        ko as u32 * QUANT_WORDS as u32 * 4
    }
}

/// One step of the loop nest. Advancing a finished loop is a bug in the
/// caller; the simulator checks `done` first.
pub fn uloop_advance(g: &Grid, id: usize, u: ULoop) -> ULoop {
    assert!(!u.done, "advancing a finished μloop");
    step_uloop(g, id, u)
}

pub(crate) fn step_uloop(g: &Grid, id: usize, mut u: ULoop) -> ULoop {
    if u.done {
        return u;
    }
    u.ic = u.ic.wrapping_add(1);
    if u.ic as u32 >= g.n_ic {
        u.ic = 0;
        u.col = u.col.wrapping_add(g.col_step());
        if u.col as u32 >= g.n_cols {
            u.col = g.first_col(id);
            u.row = u.row.wrapping_add(1);
            if u.row as u32 >= g.n_rows {
                u.row = 0;
                u.ko = u.ko.wrapping_add(1);
                if u.ko as u32 >= g.n_ko {
                    u.done = true;
                }
            }
        }
    }
    g.with_offsets(u)
}

/// Inputs to the next-state function sampled from the datapath.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Signals {
    pub mismatch: bool,
}

/// Next controller state from the voted current one.
pub fn next_state(v: &CtrlState, g: &Grid, model: &CycleModel, sig: Signals) -> CtrlState {
    let mut n = *v;
    let Some(fsm) = v.fsm_state() else {
        return n; // unused encoding: stuck
    };
    let enter = |n: &mut CtrlState, s: FsmState| {
        n.fsm = s as u8;
        n.phase_cycle = 0;
    };
    let last = |p| v.phase_cycle as u32 + 1 >= g.phase_len(model, p);
    n.phase_cycle = v.phase_cycle.wrapping_add(1);
    match fsm {
        FsmState::Idle | FsmState::Done => n.phase_cycle = 0,
        FsmState::InputLoad => {
            if last(Phase::InputLoad) {
                enter(&mut n, FsmState::Mm);
            }
        }
        FsmState::Mm => {
            if last(Phase::Mm) {
                if (v.uloop[0].ic as u32) + 1 < g.n_ic {
                    n.uloop[0] = step_uloop(g, 0, v.uloop[0]);
                    if g.mode == Mode::Performance {
                        n.uloop[1] = step_uloop(g, 1, v.uloop[1]);
                    }
                    enter(&mut n, FsmState::InputLoad);
                } else if g.mode == Mode::Redundancy {
                    enter(&mut n, FsmState::OutputCheck);
                } else {
                    enter(&mut n, FsmState::Streamout);
                }
            }
        }
        FsmState::OutputCheck => {
            if last(Phase::OutputCheck) {
                if sig.mismatch {
                    n.retry = true;
                    n.regs.error_status = v.regs.error_status.wrapping_add(1);
                    enter(&mut n, FsmState::ErrorRecovery);
                } else {
                    n.retry = false;
                    enter(&mut n, FsmState::Streamout);
                }
            }
        }
        FsmState::Streamout => {
            if last(Phase::Streamout) {
                n.uloop[0] = step_uloop(g, 0, v.uloop[0]);
                match g.mode {
                    // realign the checkpoint with the verified progress
                    Mode::Redundancy => n.uloop[1] = n.uloop[0],
                    Mode::Performance => n.uloop[1] = step_uloop(g, 1, v.uloop[1]),
                    Mode::Baseline4x4 => {}
                }
                let s = if n.uloop[0].done { FsmState::Done } else { FsmState::InputLoad };
                enter(&mut n, s);
            }
        }
        FsmState::ErrorRecovery => {
            if last(Phase::ErrorRecovery) {
                // roll back to the pinned tile start
                n.uloop[0] = v.uloop[1];
                enter(&mut n, FsmState::InputLoad);
            }
        }
    }
    n
}

/// The replicated controller as software sees it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Controller {
    pub hw: Mode,
    /// Three replicas on hardened hardware, one on the baseline.
    pub replicas: Vec<CtrlState>,
    /// Cycles in which the replicas disagreed before voting.
    pub tmr_divergence: u64,
}

impl Controller {
    pub fn new(hw: Mode) -> Controller {
        let n = if hw.hardened() { 3 } else { 1 };
        let mut s = CtrlState::default();
        s.regs.hmr_mode = if hw.hardened() { hw.code() as u8 } else { 0 };
        Controller { hw, replicas: vec![s; n], tmr_divergence: 0 }
    }

    /// Voted state, written back into every replica.
    pub fn vote(&mut self) -> CtrlState {
        if self.replicas.len() == 1 {
            return self.replicas[0];
        }
        let (v, diverged) = vote(&self.replicas[0], &self.replicas[1], &self.replicas[2]);
        if diverged {
            self.tmr_divergence += 1;
            self.replicas.iter_mut().for_each(|r| *r = v);
        }
        v
    }

    pub fn set_all(&mut self, s: CtrlState) {
        self.replicas.iter_mut().for_each(|r| *r = s);
    }

    pub fn state(&self) -> CtrlState {
        let mut c = self.clone();
        c.vote()
    }

    pub fn busy(&self) -> bool {
        !matches!(self.state().fsm_state(), Some(FsmState::Idle | FsmState::Done))
    }

    /// Selects the mode for subsequent jobs. Only legal while idle.
    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        if self.busy() {
            return Err(Error::Busy);
        }
        if !self.hw.hardened() || !mode.hardened() {
            return Err(crate::error::config("the baseline array has no mode register"));
        }
        let mut s = self.state();
        s.regs.hmr_mode = mode.code() as u8;
        self.set_all(s);
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        if self.hw.hardened() {
            Mode::from_code(self.state().regs.hmr_mode as u32).unwrap_or(self.hw)
        } else {
            Mode::Baseline4x4
        }
    }

    pub fn program(&mut self, job: &LayerJob, layout: &JobLayout) -> Result<()> {
        if self.busy() {
            return Err(Error::Busy);
        }
        let mut s = self.state();
        s.regs.program(job, layout);
        self.set_all(s);
        Ok(())
    }

    /// Starts the programmed job.
    pub fn start(&mut self) -> Result<()> {
        if self.busy() {
            return Err(Error::Busy);
        }
        let mut s = self.state();
        let g = Grid::from_regs(&s.regs, self.hw).ok_or_else(|| crate::error::config("invalid register contents"))?;
        s.uloop = [g.uloop_start(0), g.uloop_start(1)];
        s.retry = false;
        s.phase_cycle = 0;
        s.fsm = if s.uloop[0].done { FsmState::Done } else { FsmState::InputLoad } as u8;
        self.set_all(s);
        Ok(())
    }
}
