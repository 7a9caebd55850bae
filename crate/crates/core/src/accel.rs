//! Cycle-stepped model of the whole accelerator.
//!
//! Each cycle: vote the controller replicas, move the shadow half's delay
//! registers, perform the datapath actions the voted state calls for, then
//! compute and store the next controller state. Faults are applied between
//! cycles ([`Accel::flip`]) or armed for a single cycle ([`Accel::step`]).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controller::{next_state, Controller, CtrlState, FsmState, Grid, Signals, ULoop};
use crate::ecc::{self, metadata_code, payload_code, Codeword, DecodeStatus, CHECK_BITS, PAYLOAD_BITS};
use crate::engine::{ArrayCfg, Check, Engine, Half, MacFlip, PIXEL_WORDS};
use crate::error::Result;
use crate::fault::FaultSite;
use crate::golden::{Kernel, LayerJob, Mode, TensorBuf};
use crate::layout::{read_outputs, stage_job, JobLayout};
use crate::memory::{Tcdm, BEAT_WORDS, CAPACITY_BYTES};
use crate::perf::{breakdown, CycleModel, CycleReport, Phase, ARRAY_ROWS, QUANT_BEATS};

/// The scratchpad port decodes only word-index bits: addresses alias
/// within the scratchpad instead of faulting.
fn port(addr: u32) -> u32 {
    addr & (CAPACITY_BYTES as u32 - 1) & !3
}

/// Default watchdog budget as a multiple of the fault-free cycle count.
pub const WATCHDOG_FACTOR: u64 = 10;

/// The streamer's wide register: nine payload slots and the request
/// metadata. Hardened hardware keeps codewords here, the baseline raw bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BeatReg {
    pub payload: [u64; BEAT_WORDS],
    pub meta: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HangCause {
    Watchdog,
    BusError,
    /// The control state reached an encoding that never terminates.
    Stuck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Done,
    Hang(HangCause),
}

/// Software-visible status registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusRegs {
    pub hmr_mode: Mode,
    pub error_status: u32,
    pub ecc_corrected: u64,
    pub ecc_uncorrectable: u64,
    pub tmr_divergence: u64,
}

#[derive(Clone, Debug)]
pub struct Accel {
    /// The mode the job was launched in; decides which hardware is present.
    pub mode: Mode,
    pub model: CycleModel,
    pub job: Arc<LayerJob>,
    pub layout: JobLayout,
    pub tcdm: Tcdm,
    pub engine: Box<Engine>,
    pub beat: BeatReg,
    pub ctrl: Controller,
    pub cycle: u64,
    pub report: CycleReport,
    /// Rollbacks started.
    pub recoveries: u64,
    pub status: RunStatus,
    pub trace: Option<Vec<String>>,
    /// `(cycle, byte address)` of every store beat written, when enabled.
    pub store_log: Option<Vec<(u64, u32)>>,
}

/// A transient armed for the current cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transient {
    pub site: FaultSite,
    pub bit: u32,
}

impl Accel {
    /// Stages the job in a fresh scratchpad and starts the controller.
    pub fn new(model: &CycleModel, job: &LayerJob, acts: &TensorBuf<i8>, weights: &TensorBuf<i8>) -> Result<Accel> {
        model.validate()?;
        let layout = JobLayout::plan(job)?;
        let mut tcdm = Tcdm::new();
        stage_job(&mut tcdm, job, &layout, acts, weights)?;
        let mut ctrl = Controller::new(job.mode);
        ctrl.program(job, &layout)?;
        ctrl.start()?;
        Ok(Accel {
            mode: job.mode,
            model: model.clone(),
            job: Arc::new(job.clone()),
            layout,
            tcdm,
            engine: Box::default(),
            beat: BeatReg::default(),
            ctrl,
            cycle: 0,
            report: CycleReport { prologue: model.prologue as u64, ..CycleReport::default() },
            recoveries: 0,
            status: RunStatus::Running,
            trace: None,
            store_log: None,
        })
    }

    pub fn with_trace(mut self) -> Accel {
        self.trace = Some(Vec::new());
        self
    }

    fn hardened(&self) -> bool {
        self.mode.hardened()
    }

    /// Fault-free FSM cycles of this job.
    pub fn nominal_cycles(&self) -> u64 {
        breakdown(&self.model, &self.job, self.mode).fsm_cycles()
    }

    pub fn watchdog(&self) -> u64 {
        self.model.watchdog_factor * self.nominal_cycles()
    }

    pub fn run(&mut self) -> RunStatus {
        let limit = self.watchdog();
        self.run_until(limit)
    }

    pub fn run_until(&mut self, limit: u64) -> RunStatus {
        while self.status == RunStatus::Running {
            if self.cycle >= limit {
                self.status = RunStatus::Hang(HangCause::Watchdog);
                break;
            }
            self.step(None);
        }
        self.status
    }

    pub fn outputs(&self) -> TensorBuf<i8> {
        read_outputs(&self.tcdm, &self.job, &self.layout).expect("layout was validated at staging")
    }

    pub fn status_regs(&self) -> StatusRegs {
        let s = self.ctrl.state();
        StatusRegs {
            hmr_mode: self.ctrl.mode(),
            error_status: s.regs.error_status,
            ecc_corrected: self.tcdm.errors.corrected(),
            ecc_uncorrectable: self.tcdm.errors.uncorrectable(),
            tmr_divergence: self.ctrl.tmr_divergence,
        }
    }

    fn log(&mut self, unit: &str, event: &str, detail: String) {
        if let Some(t) = &mut self.trace {
            t.push(format!("{},{unit},{event},{detail}", self.cycle));
        }
    }

    /// Flips one stored bit.
    pub fn flip(&mut self, site: FaultSite, bit: u32) {
        let e = &mut self.engine;
        match site {
            FaultSite::TcdmCell { word } => self.tcdm.flip_bit(word as usize, bit),
            FaultSite::StreamerBeat => {
                let w = if self.mode.hardened() { PAYLOAD_BITS + CHECK_BITS } else { PAYLOAD_BITS } as u32;
                if bit < w * BEAT_WORDS as u32 {
                    self.beat.payload[(bit / w) as usize] ^= 1 << (bit % w);
                } else {
                    self.beat.meta ^= 1 << (bit - w * BEAT_WORDS as u32);
                }
            }
            FaultSite::InputBuffer { half } => e.in_buf[half as usize][bit as usize / 8] ^= 1 << (bit % 8),
            FaultSite::ShadowInputDelay => match bit as usize {
                b if b < 32 * PIXEL_WORDS => e.shadow_in[b / 32] ^= 1 << (b % 32),
                _ => e.shadow_in_valid ^= true,
            },
            FaultSite::ShadowWeightDelay => match bit as usize {
                b if b < 32 * BEAT_WORDS => e.shadow_wgt[b / 32] ^= 1 << (b % 32),
                _ => e.shadow_wgt_valid ^= true,
            },
            FaultSite::OutputBuffer { half } => e.out_buf[half as usize][bit as usize / 8] ^= 1 << (bit % 8),
            FaultSite::Accumulator { pe } => e.acc[pe as usize][bit as usize / 32] ^= 1 << (bit % 32),
            FaultSite::RequantRegister { half } => e.requant[half as usize][bit as usize / 32] ^= 1 << (bit % 32),
            FaultSite::FsmRegister { replica } => self.ctrl.replicas[replica as usize].flip_fsm(bit),
            FaultSite::MicroLoop { replica, id } => self.ctrl.replicas[replica as usize].uloop[id as usize].flip(bit),
            FaultSite::RegisterFile { replica } => self.ctrl.replicas[replica as usize].regs.flip(bit),
            _ => panic!("{site:?} is combinational; arm it as a transient"),
        }
    }

    fn cfg(&self, g: &Grid) -> ArrayCfg {
        ArrayCfg { kernel: g.kernel, qw: g.qw, split: self.hardened() }
    }

    /// Advances one cycle, with an optional transient active during it.
    pub fn step(&mut self, set: Option<Transient>) {
        if self.status != RunStatus::Running {
            return;
        }
        let mut v = self.ctrl.vote();
        if let Some(Transient { site: FaultSite::VoterOutput, bit }) = set {
            v.flip(bit);
        }
        let fsm = match v.fsm_state() {
            Some(FsmState::Done) => {
                self.finish();
                return;
            }
            Some(FsmState::Idle) | None => {
                self.status = RunStatus::Hang(HangCause::Stuck);
                return;
            }
            Some(s) => s,
        };
        let Some(g) = Grid::from_regs(&v.regs, self.mode) else {
            self.status = RunStatus::Hang(HangCause::Stuck);
            return;
        };
        self.account(&v, fsm);
        match self.datapath(&v, fsm, &g, set) {
            Ok(sig) => {
                let n = next_state(&v, &g, &self.model, sig);
                self.transition(&v, &n, &g);
                self.ctrl.set_all(n);
                self.cycle += 1;
            }
            Err(_) => self.status = RunStatus::Hang(HangCause::BusError),
        }
    }

    fn finish(&mut self) {
        self.report.finish();
        self.status = RunStatus::Done;
        self.log("ctrl", "done", format!("total={}", self.report.total));
    }

    fn account(&mut self, v: &CtrlState, fsm: FsmState) {
        let r = &mut self.report;
        let bucket = if v.retry {
            &mut r.recovery
        } else {
            match fsm {
                FsmState::InputLoad => &mut r.input_load,
                FsmState::Mm => &mut r.mm,
                FsmState::OutputCheck => &mut r.error_check,
                FsmState::Streamout => &mut r.streamout,
                _ => &mut r.recovery,
            }
        };
        *bucket += 1;
    }

    fn transition(&mut self, v: &CtrlState, n: &CtrlState, g: &Grid) {
        if v.fsm == FsmState::Streamout as u8 && n.fsm != v.fsm {
            self.report.tiles += 1;
            self.report.streamouts += if g.mode == Mode::Performance { 2 } else { 1 };
        }
        if n.fsm == FsmState::ErrorRecovery as u8 && v.fsm == FsmState::OutputCheck as u8 {
            self.recoveries += 1;
            let u = v.uloop[0];
            self.log("checker", "mismatch", format!("tile=(ko{},h{},w{})", u.ko, u.row, u.col));
        }
        if self.trace.is_some() && (n.fsm != v.fsm || n.phase_cycle == 0 && v.phase_cycle != 0) {
            let state = FsmState::from_bits(n.fsm).map_or("invalid".to_string(), |s| format!("{s:?}"));
            let u = n.uloop[0];
            self.log("ctrl", "enter", format!("{state} ko={} row={} col={} ic={}", u.ko, u.row, u.col, u.ic));
        }
    }

    // ---- streamer ----

    fn issue_load(&mut self, addr: u32, n: usize) -> Result<()> {
        let mut payload = [0u64; BEAT_WORDS];
        for (i, p) in payload.iter_mut().take(n).enumerate() {
            let a = port(addr.wrapping_add(4 * i as u32));
            *p = if self.hardened() { self.tcdm.read_raw(a as usize / 4) } else { self.tcdm.read_word(a)?.0 as u64 };
        }
        let meta = ecc::pack_metadata(port(addr), 0xf, false);
        self.beat.meta = if self.hardened() { metadata_code().encode(meta).0 } else { meta };
        self.beat.payload = payload;
        Ok(())
    }

    fn issue_zero(&mut self) {
        self.beat = BeatReg::default();
    }

    /// Decodes the beat register as the engine reads it.
    fn consume(&mut self, n: usize, set: Option<Transient>) -> [u32; BEAT_WORDS] {
        let mut out = [0u32; BEAT_WORDS];
        if self.hardened() {
            let addr = ecc::unpack_metadata(metadata_code().decode(Codeword(self.beat.meta)).0).0;
            for i in 0..n {
                let (d, s) = payload_code().decode(Codeword(self.beat.payload[i]));
                if s != DecodeStatus::NoError {
                    self.tcdm.errors.record_payload(addr.wrapping_add(4 * i as u32), s);
                }
                out[i] = d as u32;
            }
            if let Some(Transient { site: FaultSite::EccDecoderOutput, bit }) = set {
                if (bit / 32) < n as u32 {
                    out[(bit / 32) as usize] ^= 1 << (bit % 32);
                }
            }
        } else {
            for i in 0..n {
                out[i] = self.beat.payload[i] as u32;
            }
        }
        out
    }

    fn issue_store(&mut self, addr: u32, words: &[u32; PIXEL_WORDS], set: Option<Transient>) {
        let mut payload = [0u64; BEAT_WORDS];
        if self.hardened() {
            for (p, &w) in payload.iter_mut().zip(words) {
                *p = payload_code().encode(w as u64).0;
            }
            if let Some(Transient { site: FaultSite::EccEncoderOutput, bit }) = set {
                let w = (PAYLOAD_BITS + CHECK_BITS) as u32;
                payload[(bit / w) as usize] ^= 1 << (bit % w);
            }
            self.beat.meta = metadata_code().encode(ecc::pack_metadata(port(addr), 0xf, true)).0;
        } else {
            for (p, &w) in payload.iter_mut().zip(words) {
                *p = w as u64;
            }
            self.beat.meta = ecc::pack_metadata(port(addr), 0xf, true);
        }
        self.beat.payload = payload;
    }

    /// Writes the store beat held in the register. Hardened hardware
    /// corrects the metadata and drops the beat if that fails; payload
    /// codewords go to the banks as carried.
    fn apply_store(&mut self) -> Result<()> {
        if self.hardened() {
            let (meta, status) = metadata_code().decode(Codeword(self.beat.meta));
            let (addr, _, we) = ecc::unpack_metadata(meta);
            self.tcdm.errors.record_metadata(addr, status);
            if status != DecodeStatus::DetectedUncorrectable && we {
                for i in 0..PIXEL_WORDS {
                    let a = port(addr.wrapping_add(4 * i as u32));
                    self.tcdm.write_raw(a as usize / 4, self.beat.payload[i]);
                }
                self.log_store(port(addr));
            }
        } else {
            let (addr, be, we) = ecc::unpack_metadata(self.beat.meta);
            if we {
                for i in 0..PIXEL_WORDS {
                    self.tcdm.write_word_masked(port(addr.wrapping_add(4 * i as u32)), self.beat.payload[i] as u32, be)?;
                }
                self.log_store(port(addr));
            }
        }
        Ok(())
    }

    fn log_store(&mut self, addr: u32) {
        if let Some(l) = &mut self.store_log {
            l.push((self.cycle, addr));
        }
    }

    // ---- datapath ----

    fn datapath(&mut self, v: &CtrlState, fsm: FsmState, g: &Grid, set: Option<Transient>) -> Result<Signals> {
        let cfg = self.cfg(g);
        let mac_flip = match set {
            Some(Transient { site: FaultSite::MacResult { pe }, bit }) => Some(MacFlip { pe: pe as usize, bit }),
            _ => None,
        };
        if g.mode == Mode::Redundancy {
            self.shadow_stage(v, fsm, g, &cfg, mac_flip);
        }
        let mut sig = Signals::default();
        match fsm {
            FsmState::InputLoad => self.input_load(v, g, &cfg, set)?,
            FsmState::Mm => self.mm(v, g, &cfg, set, mac_flip)?,
            FsmState::OutputCheck => {
                let pc = v.phase_cycle as u32;
                let shift = v.regs.shift as u32;
                if pc == 0 {
                    self.engine.requantize(&cfg, Some(Half::A), shift);
                }
                if pc == self.model.timeshift {
                    self.engine.requantize(&cfg, Some(Half::B), shift);
                }
                if pc + 1 == g.phase_len(&self.model, Phase::OutputCheck) {
                    sig.mismatch = self.engine.compare_outputs() == Check::Mismatch;
                    if let Some(Transient { site: FaultSite::CheckerComparator, .. }) = set {
                        sig.mismatch = !sig.mismatch;
                    }
                }
            }
            FsmState::Streamout => self.streamout(v, g, &cfg, set)?,
            _ => {}
        }
        Ok(sig)
    }

    /// Weight beat `k` of the current IC block: plane, first word, words.
    fn weight_beat(&self, g: &Grid, cfg: &ArrayCfg, k: u32) -> (u32, std::ops::Range<usize>) {
        let mpb = self.model.mm_per_bit(g.kernel).max(1);
        (k / mpb, cfg.beat_words(&self.model, (k % mpb) as usize))
    }

    fn weight_addr(&self, v: &CtrlState, g: &Grid, plane: u32, first: usize) -> u32 {
        let word = plane.wrapping_mul(g.plane_words).wrapping_add(first as u32);
        v.regs.wgt_base.wrapping_add(v.uloop[0].wgt_off).wrapping_add(word.wrapping_mul(4))
    }

    fn fetch_weights(&mut self, v: &CtrlState, g: &Grid, cfg: &ArrayCfg, k: u32) -> Result<()> {
        let (plane, words) = self.weight_beat(g, cfg, k);
        if words.is_empty() {
            self.issue_zero();
            return Ok(());
        }
        let addr = self.weight_addr(v, g, plane, words.start);
        self.issue_load(addr, words.len())
    }

    fn shadow_stage(&mut self, v: &CtrlState, fsm: FsmState, g: &Grid, cfg: &ArrayCfg, flip: Option<MacFlip>) {
        let pc = v.phase_cycle as u32;
        if self.engine.shadow_wgt_valid {
            self.engine.shadow_wgt_valid = false;
            let m = self.model.mm(g.kernel, g.qw);
            if m > 0 {
                let k = if fsm == FsmState::Mm && pc > 0 { pc - 1 } else { m - 1 };
                let (plane, words) = self.weight_beat(g, cfg, k);
                let data = self.engine.shadow_wgt;
                self.engine.mac(cfg, Some(Half::B), words.start, &data[..words.len()], plane, flip);
            }
        }
        if self.engine.shadow_in_valid {
            self.engine.shadow_in_valid = false;
            if fsm == FsmState::InputLoad {
                let r0 = self.model.reconfig;
                let quant = v.uloop[0].ic == 0;
                let p = cfg.patch_pixels();
                let data = self.engine.shadow_in;
                if let Some(k) = pc.checked_sub(r0 + 2).map(|k| k as usize) {
                    if k < p {
                        self.engine.write_pixel(1, k, &data);
                    } else if quant && k < p + QUANT_BEATS {
                        self.engine.write_quant(1, k - p, &data);
                    }
                }
            }
        }
    }

    fn input_load(&mut self, v: &CtrlState, g: &Grid, cfg: &ArrayCfg, set: Option<Transient>) -> Result<()> {
        let pc = v.phase_cycle as u32;
        let sub_len = match g.mode {
            Mode::Baseline4x4 => self.model.load_base(g.kernel),
            _ => self.model.load_half(g.kernel),
        };
        let (s, lpc) = if g.mode == Mode::Performance { (pc / sub_len, pc % sub_len) } else { (0, pc) };
        if pc == 0 && v.uloop[0].ic == 0 {
            self.engine.clear_acc(cfg, None);
        }
        if s <= 1 {
            let u = v.uloop[s as usize];
            let buf = s as usize;
            let r0 = self.model.reconfig;
            let p = cfg.patch_pixels();
            let beats = p + if u.ic == 0 { QUANT_BEATS } else { 0 };
            if let Some(k) = lpc.checked_sub(r0 + 1).map(|k| k as usize).filter(|&k| k < beats) {
                let d = self.consume(PIXEL_WORDS, set);
                let data: [u32; PIXEL_WORDS] = d[..PIXEL_WORDS].try_into().unwrap();
                if k < p {
                    self.engine.write_pixel(buf, k, &data);
                } else {
                    self.engine.write_quant(buf, k - p, &data);
                }
                if g.mode == Mode::Redundancy {
                    self.engine.shadow_in = data;
                    self.engine.shadow_in_valid = true;
                }
            }
            if let Some(k) = lpc.checked_sub(r0).map(|k| k as usize).filter(|&k| k < beats) {
                if k < p {
                    match self.pixel_addr(v, g, cfg, &u, k) {
                        Some(addr) => self.issue_load(addr, PIXEL_WORDS)?,
                        None => self.issue_zero(),
                    }
                } else {
                    let q = (k - p) as u32;
                    let addr = v.regs.quant_base.wrapping_add(g.quant_off(u.ko)).wrapping_add(32 * q);
                    self.issue_load(addr, PIXEL_WORDS)?;
                }
            }
        }
        if pc + 1 == g.phase_len(&self.model, Phase::InputLoad) {
            self.fetch_weights(v, g, cfg, 0)?;
        }
        Ok(())
    }

    /// Address of patch pixel `k`, or `None` for zero padding.
    fn pixel_addr(&self, v: &CtrlState, g: &Grid, cfg: &ArrayCfg, u: &ULoop, k: usize) -> Option<u32> {
        let (_, pw) = cfg.patch();
        let halo = g.kernel.halo() as i64;
        let (dy, dx) = ((k / pw) as i64 - halo, (k % pw) as i64 - halo);
        let y = u.row as i64 * ARRAY_ROWS as i64 + dy;
        let x = u.col as i64 * g.tile_w as i64 + dx;
        if y < 0 || x < 0 || y >= g.h_o as i64 || x >= g.w_o as i64 {
            return None;
        }
        let rel = (dy * g.w_o as i64 + dx) * g.cin_pad as i64;
        Some((v.regs.act_base.wrapping_add(u.act_off) as i64 + rel) as u32)
    }

    fn mm(&mut self, v: &CtrlState, g: &Grid, cfg: &ArrayCfg, set: Option<Transient>, flip: Option<MacFlip>) -> Result<()> {
        let k = v.phase_cycle as u32;
        let m = self.model.mm(g.kernel, g.qw);
        if k >= m {
            return Ok(());
        }
        let (plane, words) = self.weight_beat(g, cfg, k);
        let data = self.consume(words.len(), set);
        let n = words.len();
        match g.mode {
            Mode::Redundancy => {
                self.engine.mac(cfg, Some(Half::A), words.start, &data[..n], plane, flip);
                self.engine.shadow_wgt = data;
                self.engine.shadow_wgt_valid = true;
            }
            _ => self.engine.mac(cfg, None, words.start, &data[..n], plane, flip),
        }
        if k + 1 < m {
            self.fetch_weights(v, g, cfg, k + 1)?;
        }
        Ok(())
    }

    fn streamout(&mut self, v: &CtrlState, g: &Grid, cfg: &ArrayCfg, set: Option<Transient>) -> Result<()> {
        let pc = v.phase_cycle as u32;
        let sub_len = match g.mode {
            Mode::Baseline4x4 => self.model.streamout_base,
            _ => self.model.streamout_half,
        };
        let (s, lpc) = if g.mode == Mode::Performance { (pc / sub_len, pc % sub_len) } else { (0, pc) };
        if s > 1 {
            return Ok(());
        }
        let (half, u) = match g.mode {
            Mode::Baseline4x4 => (None, v.uloop[0]),
            Mode::Performance => (Some(Half::BOTH[s as usize]), v.uloop[s as usize]),
            Mode::Redundancy => (Some(Half::A), v.uloop[0]),
        };
        if lpc == 0 && g.mode != Mode::Redundancy {
            self.engine.requantize(cfg, half, v.regs.shift as u32);
        }
        let r0 = self.model.reconfig;
        let n = cfg.tile_pixels();
        let tw = cfg.tile_cols();
        let in_bounds = |k: usize| {
            let y = u.row as u32 * ARRAY_ROWS as u32 + (k / tw) as u32;
            let x = u.col as u32 * g.tile_w + (k % tw) as u32;
            y < g.h_o && x < g.w_o
        };
        if let Some(k) = lpc.checked_sub(r0 + 1).map(|k| k as usize).filter(|&k| k < n && in_bounds(k)) {
            let _ = k;
            self.apply_store()?;
        }
        if let Some(k) = lpc.checked_sub(r0).map(|k| k as usize).filter(|&k| k < n && in_bounds(k)) {
            let rel = ((k / tw) as u32 * g.w_o + (k % tw) as u32).wrapping_mul(g.cout_pad);
            let addr = v.regs.out_base.wrapping_add(u.out_off).wrapping_add(rel);
            let words = self.engine.out_pixel(cfg, half, k);
            self.issue_store(addr, &words, set);
        }
        Ok(())
    }

    /// Equality of everything in the accelerator that can influence the
    /// rest of the run. Counters, status registers and buffer bytes past
    /// the current patch are ignored; the scratchpad is compared separately.
    pub fn same_accelerator_state(&self, other: &Accel) -> bool {
        let p = ArrayCfg::new(self.job.kernel, self.job.qw, self.mode).patch_pixels() * crate::perf::CHANNELS;
        let (a, b) = (&*self.engine, &*other.engine);
        a.in_buf.iter().zip(&b.in_buf).all(|(x, y)| x[..p] == y[..p])
            && a.acc == b.acc
            && a.out_buf == b.out_buf
            && a.requant == b.requant
            && a.shadow_in == b.shadow_in
            && a.shadow_in_valid == b.shadow_in_valid
            && a.shadow_wgt == b.shadow_wgt
            && a.shadow_wgt_valid == b.shadow_wgt_valid
            && self.beat == other.beat
            && self.ctrl.replicas.iter().zip(&other.ctrl.replicas).all(|(x, y)| x.behavioral() == y.behavioral())
    }

    pub fn same_behavior(&self, other: &Accel) -> bool {
        self.same_accelerator_state(other) && self.tcdm.same_contents(&other.tcdm)
    }
}

/// Outcome of a complete job.
#[derive(Clone, Debug)]
pub struct JobRun {
    pub outputs: TensorBuf<i8>,
    pub report: CycleReport,
    pub status: StatusRegs,
    pub run: RunStatus,
    pub recoveries: u64,
    pub trace: Option<Vec<String>>,
}

/// Stages, runs and reads back one job.
pub fn run_job(model: &CycleModel, job: &LayerJob, acts: &TensorBuf<i8>, weights: &TensorBuf<i8>) -> Result<JobRun> {
    run_job_traced(model, job, acts, weights, false)
}

pub fn run_job_traced(model: &CycleModel, job: &LayerJob, acts: &TensorBuf<i8>, weights: &TensorBuf<i8>, trace: bool) -> Result<JobRun> {
    let mut a = Accel::new(model, job, acts, weights)?;
    if trace {
        a = a.with_trace();
    }
    let run = a.run();
    Ok(JobRun {
        outputs: a.outputs(),
        report: a.report,
        status: a.status_regs(),
        run,
        recoveries: a.recoveries,
        trace: a.trace.take(),
    })
}

/// Random activations, weights in range and a mild requantization, for
/// generated jobs.
pub fn random_tensors(job: &LayerJob, seed: u64) -> (TensorBuf<i8>, TensorBuf<i8>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = job.input_dims();
    let acts = TensorBuf { h, w, c, data: (0..h * w * c).map(|_| rng.gen()).collect() };
    let (lo, hi) = job.weight_range();
    let (h, w, c) = job.weight_dims();
    let weights = TensorBuf { h, w, c, data: (0..h * w * c).map(|_| rng.gen_range(lo..=hi)).collect() };
    (acts, weights)
}

/// Requantization that keeps typical accumulators of `job` inside the
/// 8-bit range, so outputs are informative rather than saturated.
pub fn default_quant(kernel: Kernel, k_i: usize, k_o: usize, qw: u8) -> crate::golden::QuantParams {
    let fan_in = (kernel.taps() * if kernel == Kernel::Depthwise3x3 { 1 } else { k_i }) as f64;
    // accumulator std ~ 128/sqrt(3) * 2^(qw-1)/sqrt(3) * sqrt(fan_in)
    let sigma = 128.0 / 3f64.sqrt() * (1u32 << (qw - 1)) as f64 / 3f64.sqrt() * fan_in.sqrt();
    let shift = (sigma / 48.0).log2().ceil().clamp(0.0, 31.0) as u32;
    crate::golden::QuantParams::uniform(k_o, 1, 0, shift)
}
