//! Parameterized cycle model.
//!
//! All timing constants live in [`CycleModel`]; the controller FSM reads its
//! phase lengths from here, so the analytic [`breakdown`] and a simulated run
//! agree cycle for cycle. Recovery cost and the rollback-vs-restart
//! degradation analysis are derived from the same numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::golden::{Kernel, LayerJob, Mode};
use crate::memory::BEAT_WORDS;

/// Output tile of the full array: 4 rows by 4 columns of PEs.
pub const ARRAY_ROWS: usize = 4;
pub const ARRAY_COLS: usize = 4;
/// Columns per half array.
pub const HALF_COLS: usize = 2;
/// Channels per PE, and per IC block.
pub const CHANNELS: usize = 32;
/// Requantization table per output-channel block: 32 scales + 32 biases.
pub const QUANT_WORDS: usize = 2 * CHANNELS;
pub const QUANT_BEATS: usize = QUANT_WORDS / 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleModel {
    /// Input load per IC block on one 4x2 half, by kernel.
    pub load_pw: u32,
    pub load_dense: u32,
    pub load_dw: u32,
    /// Input load per IC block on the unified 4x4 array.
    pub load_base_pw: u32,
    pub load_base_dense: u32,
    pub load_base_dw: u32,
    /// MM cycles per weight bit-plane.
    pub mm_per_bit_pw: u32,
    pub mm_per_bit_dense: u32,
    pub mm_per_bit_dw: u32,
    /// Streamout of one 4x2 half tile, and of a 4x4 tile.
    pub streamout_half: u32,
    pub streamout_base: u32,
    /// Skew between main and shadow halves.
    pub timeshift: u32,
    /// Restoring the checkpointed loop state after a mismatch.
    pub rollback: u32,
    /// Streamer reprogramming at the start of every load or drain.
    pub reconfig: u32,
    /// Job programming; outside the FSM breakdown.
    pub prologue: u32,
    /// A run is declared hung after this many times its fault-free length.
    pub watchdog_factor: u64,
}

impl Default for CycleModel {
    fn default() -> Self {
        CycleModel {
            load_pw: 28,
            load_dense: 44,
            load_dw: 44,
            load_base_pw: 52,
            load_base_dense: 62,
            load_base_dw: 62,
            mm_per_bit_pw: 4,
            mm_per_bit_dense: 32,
            mm_per_bit_dw: 16,
            streamout_half: 24,
            streamout_base: 43,
            timeshift: 1,
            rollback: 3,
            reconfig: 8,
            prologue: 160,
            watchdog_factor: crate::accel::WATCHDOG_FACTOR,
        }
    }
}

impl CycleModel {
    pub fn load_half(&self, k: Kernel) -> u32 {
        match k {
            Kernel::Pointwise1x1 => self.load_pw,
            Kernel::Dense3x3 => self.load_dense,
            Kernel::Depthwise3x3 => self.load_dw,
        }
    }

    pub fn load_base(&self, k: Kernel) -> u32 {
        match k {
            Kernel::Pointwise1x1 => self.load_base_pw,
            Kernel::Dense3x3 => self.load_base_dense,
            Kernel::Depthwise3x3 => self.load_base_dw,
        }
    }

    pub fn mm_per_bit(&self, k: Kernel) -> u32 {
        match k {
            Kernel::Pointwise1x1 => self.mm_per_bit_pw,
            Kernel::Dense3x3 => self.mm_per_bit_dense,
            Kernel::Depthwise3x3 => self.mm_per_bit_dw,
        }
    }

    /// MM cycles per IC block.
    pub fn mm(&self, k: Kernel, qw: u8) -> u32 {
        self.mm_per_bit(k) * qw as u32
    }

    pub fn check(&self) -> u32 {
        2 + self.timeshift
    }

    pub fn error_recovery(&self) -> u32 {
        self.streamout_half + self.rollback
    }

    /// Length of one occurrence of an FSM state.
    pub fn phase_len(&self, state: Phase, kernel: Kernel, qw: u8, mode: Mode) -> u32 {
        match (state, mode) {
            (Phase::InputLoad, Mode::Baseline4x4) => self.load_base(kernel),
            (Phase::InputLoad, Mode::Performance) => 2 * self.load_half(kernel),
            (Phase::InputLoad, Mode::Redundancy) => self.load_half(kernel),
            (Phase::Mm, _) => self.mm(kernel, qw),
            (Phase::OutputCheck, _) => self.check(),
            (Phase::Streamout, Mode::Baseline4x4) => self.streamout_base,
            (Phase::Streamout, Mode::Performance) => 2 * self.streamout_half,
            (Phase::Streamout, Mode::Redundancy) => self.streamout_half,
            (Phase::ErrorRecovery, _) => self.error_recovery(),
        }
    }

    /// Checks that every phase is long enough for the beats the datapath
    /// issues during it.
    pub fn validate(&self) -> Result<()> {
        let r0 = self.reconfig;
        let q = QUANT_BEATS as u32;
        for k in Kernel::ALL {
            let halo = 2 * k.halo() as u32;
            let half_pix = (4 + halo) * (2 + halo);
            let base_pix = (4 + halo) * (4 + halo);
            // reconfig, pixels, quant table, decode + shadow pipeline, weight prefetch
            if self.load_half(k) < r0 + half_pix + q + 3 {
                return Err(config(format!("half input load for {k:?} is too short")));
            }
            if self.load_base(k) < r0 + base_pix + q + 3 {
                return Err(config(format!("4x4 input load for {k:?} is too short")));
            }
            let (words_per_plane, _) = plane_shape(k);
            if (self.mm_per_bit(k) as usize) * BEAT_WORDS < words_per_plane {
                return Err(config(format!("MM for {k:?} cannot stream one bit-plane per {} cycles", self.mm_per_bit(k))));
            }
        }
        if self.streamout_half < r0 + 8 + 1 || self.streamout_base < r0 + 16 + 1 {
            return Err(config("streamout too short for its beats"));
        }
        if self.watchdog_factor < 2 {
            return Err(config("watchdog factor must be at least 2"));
        }
        if self.timeshift == 0 {
            return Err(config("timeshift must be at least one cycle"));
        }
        Ok(())
    }
}

/// Words per weight bit-plane and IC-channel count per word for a kernel.
pub fn plane_shape(k: Kernel) -> (usize, usize) {
    match k {
        Kernel::Pointwise1x1 => (CHANNELS, CHANNELS),
        Kernel::Dense3x3 => (9 * CHANNELS, CHANNELS),
        Kernel::Depthwise3x3 => (9, 1),
    }
}

/// Controller macro-states that consume cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    InputLoad,
    Mm,
    OutputCheck,
    Streamout,
    ErrorRecovery,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::InputLoad, Phase::Mm, Phase::OutputCheck, Phase::Streamout, Phase::ErrorRecovery];
}

/// Tiling of a job for a given mode, after padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub n_ko: usize,
    pub n_ic: usize,
    pub n_rows: usize,
    /// Tile columns at the mode's tile width.
    pub n_cols: usize,
    pub tile_w: usize,
    pub h_pad: usize,
    pub w_pad: usize,
    pub cin_pad: usize,
    pub cout_pad: usize,
}

impl Geometry {
    pub fn of(job: &LayerJob, mode: Mode) -> Geometry {
        let n_ko = job.k_o.div_ceil(CHANNELS);
        let n_ic = match job.kernel {
            Kernel::Depthwise3x3 => 1,
            _ => job.k_i.div_ceil(CHANNELS),
        };
        let h_pad = job.h_o.next_multiple_of(ARRAY_ROWS);
        let (w_pad, tile_w) = match mode {
            Mode::Baseline4x4 => (job.w_o.next_multiple_of(ARRAY_COLS), ARRAY_COLS),
            Mode::Performance => (job.w_o.next_multiple_of(ARRAY_COLS), HALF_COLS),
            Mode::Redundancy => (job.w_o.next_multiple_of(HALF_COLS), HALF_COLS),
        };
        Geometry {
            n_ko,
            n_ic,
            n_rows: h_pad / ARRAY_ROWS,
            n_cols: w_pad / tile_w,
            tile_w,
            h_pad,
            w_pad,
            cin_pad: job.k_i.next_multiple_of(CHANNELS),
            cout_pad: job.k_o.next_multiple_of(CHANNELS),
        }
    }

    /// Iterations of the outer tile loop (pairs of half tiles in
    /// performance mode).
    pub fn tile_steps(&self, mode: Mode) -> usize {
        let spatial = self.n_rows * self.n_cols;
        let spatial = if mode == Mode::Performance { spatial / 2 } else { spatial };
        self.n_ko * spatial
    }

    pub fn streamouts(&self, mode: Mode) -> usize {
        match mode {
            Mode::Performance => 2 * self.tile_steps(mode),
            _ => self.tile_steps(mode),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub input_load: u64,
    pub mm: u64,
    pub streamout: u64,
    pub error_check: u64,
    pub recovery: u64,
    pub prologue: u64,
    pub total: u64,
    pub streamouts: u64,
    pub tiles: u64,
}

impl CycleReport {
    pub fn fsm_cycles(&self) -> u64 {
        self.input_load + self.mm + self.streamout + self.error_check + self.recovery
    }

    pub(crate) fn finish(&mut self) {
        self.total = self.fsm_cycles() + self.prologue;
    }

    pub fn rows(&self) -> [(&'static str, u64); 7] {
        [
            ("input_load", self.input_load),
            ("mm", self.mm),
            ("streamout", self.streamout),
            ("error_check", self.error_check),
            ("recovery", self.recovery),
            ("prologue", self.prologue),
            ("total", self.total),
        ]
    }

    pub fn to_csv(&self, label: &str) -> String {
        self.rows().iter().map(|(k, v)| format!("{label},{k},{v}\n")).collect()
    }
}

/// Fault-free cycle breakdown of a job in `mode`.
pub fn breakdown(model: &CycleModel, job: &LayerJob, mode: Mode) -> CycleReport {
    let g = Geometry::of(job, mode);
    let steps = g.tile_steps(mode) as u64;
    let blocks = steps * g.n_ic as u64;
    let len = |p| model.phase_len(p, job.kernel, job.qw, mode) as u64;
    let mut r = CycleReport {
        input_load: blocks * len(Phase::InputLoad),
        mm: blocks * len(Phase::Mm),
        streamout: steps * len(Phase::Streamout),
        error_check: if mode == Mode::Redundancy { steps * len(Phase::OutputCheck) } else { 0 },
        recovery: 0,
        prologue: model.prologue as u64,
        total: 0,
        streamouts: g.streamouts(mode) as u64,
        tiles: steps,
    };
    r.finish();
    r
}

/// Extra cycles one detected-and-corrected fault costs in redundancy mode:
/// the failed check, the discarded drain, the rollback, and the re-execution
/// of every IC block of the tile.
pub fn tile_recovery_cycles(model: &CycleModel, kernel: Kernel, k_i: usize, qw: u8) -> u64 {
    let n_ic = match kernel {
        Kernel::Depthwise3x3 => 1,
        _ => k_i.div_ceil(CHANNELS),
    } as u64;
    let per_block = (model.load_half(kernel) + model.mm(kernel, qw)) as u64;
    per_block * n_ic + (model.check() + model.error_recovery()) as u64
}

/// Recovery cost at 8-bit weights. Only pointwise and dense kernels have a
/// closed form; depthwise recovery is measured by simulation instead.
pub fn recovery_cycles(model: &CycleModel, kernel: Kernel, k_i: usize) -> Result<u64> {
    if k_i == 0 {
        return Err(config("k_i must be positive"));
    }
    match kernel {
        Kernel::Depthwise3x3 => Err(Error::NotModeled("closed-form depthwise recovery")),
        _ => Ok(tile_recovery_cycles(model, kernel, k_i, 8)),
    }
}

/// Percentage slowdown of a redundancy-mode job caused by one corrected fault.
pub fn single_fault_overhead(model: &CycleModel, job: &LayerJob) -> f64 {
    let total = breakdown(model, job, Mode::Redundancy).total as f64;
    tile_recovery_cycles(model, job.kernel, job.k_i, job.qw) as f64 / total * 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryPolicy {
    /// Rollback of the faulty tile only.
    HardwareRollback,
    /// Reset and re-issue the whole job.
    SoftwareRestart,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryScenario {
    pub job: LayerJob,
    pub rates: Vec<f64>,
    pub f_clk: f64,
    pub policy: RecoveryPolicy,
    pub trials: usize,
    pub seed: u64,
}

pub const DEFAULT_F_CLK: f64 = 5.0e8;

/// Below this relative performance the job is reported as never finishing.
pub const MIN_PROGRESS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationPoint {
    pub rate: f64,
    pub relative_perf: f64,
    pub non_terminating: bool,
}

/// Fault-free job time and per-fault penalty, in seconds.
pub fn recovery_timing(model: &CycleModel, job: &LayerJob, f_clk: f64, policy: RecoveryPolicy) -> (f64, f64) {
    let t0 = breakdown(model, job, Mode::Redundancy).total as f64 / f_clk;
    let penalty = match policy {
        RecoveryPolicy::HardwareRollback => tile_recovery_cycles(model, job.kernel, job.k_i, job.qw) as f64 / f_clk,
        // on average the fault lands halfway through the job
        RecoveryPolicy::SoftwareRestart => t0 / 2.0,
    };
    (t0, penalty)
}

/// Relative performance `T0 / (T0 + N_f * penalty)` with `N_f = r * T0`
/// faults arriving over the nominal execution window.
pub fn relative_perf(t0: f64, penalty: f64, rate: f64) -> DegradationPoint {
    let perf = t0 / (t0 + rate * t0 * penalty);
    if perf < MIN_PROGRESS {
        DegradationPoint { rate, relative_perf: 0.0, non_terminating: true }
    } else {
        DegradationPoint { rate, relative_perf: perf, non_terminating: false }
    }
}

pub fn degradation_curve(model: &CycleModel, scenario: &RecoveryScenario) -> Result<Vec<DegradationPoint>> {
    if scenario.rates.iter().any(|r| !(*r >= 0.0)) {
        return Err(config("fault rates must be non-negative"));
    }
    let (t0, penalty) = recovery_timing(model, &scenario.job, scenario.f_clk, scenario.policy);
    Ok(scenario.rates.iter().map(|&r| relative_perf(t0, penalty, r)).collect())
}

/// Fault rate at which relative performance drops to one half.
pub fn half_performance_rate(model: &CycleModel, job: &LayerJob, f_clk: f64, policy: RecoveryPolicy) -> f64 {
    let (_, penalty) = recovery_timing(model, job, f_clk, policy);
    1.0 / penalty
}

/// Monte-Carlo estimate of relative performance: fault arrivals are drawn
/// with exponential gaps over the nominal window; rollback pays a fixed
/// penalty per fault, restart loses the work done up to the fault.
pub fn monte_carlo_perf(model: &CycleModel, job: &LayerJob, f_clk: f64, policy: RecoveryPolicy, rate: f64, trials: usize, seed: u64) -> f64 {
    let (t0, rollback) = recovery_timing(model, job, f_clk, RecoveryPolicy::HardwareRollback);
    if rate == 0.0 {
        return 1.0;
    }
    let times: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial);
            let mut t = 0.0;
            let mut lost = 0.0;
            loop {
                let u: f64 = rng.gen();
                t += -(1.0 - u).ln() / rate;
                if t >= t0 {
                    break;
                }
                lost += match policy {
                    RecoveryPolicy::HardwareRollback => rollback,
                    RecoveryPolicy::SoftwareRestart => t,
                };
            }
            t0 + lost
        })
        .collect();
    let mean = times.iter().sum::<f64>() / trials as f64;
    t0 / mean
}

pub fn curve_csv(label: &str, points: &[DegradationPoint]) -> String {
    points.iter().map(|p| format!("{label},{:e},{}\n", p.rate, p.relative_perf)).collect()
}
