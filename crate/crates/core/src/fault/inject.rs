use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::accel::{random_tensors, Accel, HangCause, RunStatus, Transient};
use crate::controller::{CtrlState, FsmState};
use crate::ecc::{payload_code, Codeword};
use crate::error::{config, Result};
use crate::golden::{layer_golden, LayerJob, Mode, TensorBuf};
use crate::perf::{CycleModel, CycleReport};

use super::{FaultKind, FaultSite};

/// One injected fault. SEUs flip `bit` just before cycle `cycle` executes;
/// SETs corrupt the site's output during that cycle only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    #[serde(flatten)]
    pub site: FaultSite,
    pub bit: u32,
    pub cycle: u64,
}

impl FaultSpec {
    pub fn new(site: FaultSite, bit: u32, cycle: u64) -> FaultSpec {
        FaultSpec { kind: site.kind(), site, bit, cycle }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    IncorrectResult,
    Hang,
    DetectedCorrected,
    NoEffect,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::IncorrectResult, Outcome::Hang, Outcome::DetectedCorrected, Outcome::NoEffect];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::IncorrectResult => "incorrect_result",
            Outcome::Hang => "hang",
            Outcome::DetectedCorrected => "detected_corrected",
            Outcome::NoEffect => "no_effect",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub spec: FaultSpec,
    pub outcome: Outcome,
    pub recoveries: u64,
    /// Controller cycles to completion (or to the watchdog).
    pub cycles: u64,
    pub error_status: u32,
    pub hang: Option<HangCause>,
}

/// A fault-free run kept as the reference for classification, with
/// snapshots to restart from and to detect when a faulty run rejoins it.
pub struct GoldenRun {
    pub model: CycleModel,
    pub job: LayerJob,
    pub acts: TensorBuf<i8>,
    pub weights: TensorBuf<i8>,
    pub outputs: TensorBuf<i8>,
    pub report: CycleReport,
    /// Fault-free controller cycles; injection cycles lie in `0..cycles`.
    pub cycles: u64,
    snaps: Vec<Accel>,
    by_state: HashMap<CtrlState, usize>,
    /// Last cycle each output word is written, by word index.
    last_write: HashMap<usize, u64>,
    out_words: Range<usize>,
}

/// Snapshot spacing inside long phases.
const SNAP_STRIDE: u16 = 32;

fn snap_point(s: &CtrlState) -> bool {
    s.phase_cycle % SNAP_STRIDE == 0
}

impl GoldenRun {
    pub fn new(model: &CycleModel, job: &LayerJob, acts: TensorBuf<i8>, weights: TensorBuf<i8>) -> Result<GoldenRun> {
        let expected = layer_golden(job, &acts, &weights)?;
        let mut a = Accel::new(model, job, &acts, &weights)?;
        a.store_log = Some(Vec::new());
        let mut snaps = Vec::new();
        let mut by_state = HashMap::new();
        while a.status == RunStatus::Running {
            let s = a.ctrl.state();
            if s.fsm_state() != Some(FsmState::Done) && snap_point(&s) {
                let mut snap = a.clone();
                snap.store_log = None;
                by_state.insert(s.behavioral(), snaps.len());
                snaps.push(snap);
            }
            a.step(None);
        }
        if a.status != RunStatus::Done || a.outputs() != expected {
            return Err(config("fault-free run does not reproduce the reference outputs"));
        }
        let mut last_write = HashMap::new();
        for &(cycle, addr) in a.store_log.as_deref().unwrap_or_default() {
            for w in 0..crate::engine::PIXEL_WORDS {
                last_write.insert(addr as usize / 4 + w, cycle);
            }
        }
        let out = a.layout.output_range();
        Ok(GoldenRun {
            model: model.clone(),
            job: job.clone(),
            acts,
            weights,
            outputs: expected,
            report: a.report,
            cycles: a.cycle,
            snaps,
            by_state,
            last_write,
            out_words: out.start as usize / 4..out.end as usize / 4,
        })
    }

    /// Golden run on inputs generated from `seed`.
    pub fn from_seed(model: &CycleModel, job: &LayerJob, seed: u64) -> Result<GoldenRun> {
        let (acts, weights) = random_tensors(job, seed);
        GoldenRun::new(model, job, acts, weights)
    }

    pub fn mode(&self) -> Mode {
        self.job.mode
    }

    /// Scratchpad words the job touches.
    pub fn footprint_words(&self) -> Range<u32> {
        0..self.snaps[0].layout.end / 4
    }

    /// Fault-free accelerator state at the start of `cycle`.
    pub fn state_at(&self, cycle: u64) -> Accel {
        let i = self.snaps.partition_point(|s| s.cycle <= cycle) - 1;
        let mut a = self.snaps[i].clone();
        while a.cycle < cycle && a.status == RunStatus::Running {
            a.step(None);
        }
        a
    }

    /// Controller state the fault-free run is in at `cycle`.
    pub fn fsm_at(&self, cycle: u64) -> Option<FsmState> {
        self.state_at(cycle).ctrl.state().fsm_state()
    }

    /// Consecutive controller-state intervals of the fault-free run.
    pub fn phase_windows(&self) -> Vec<(FsmState, Range<u64>)> {
        let mut a = self.state_at(0);
        let mut out = Vec::new();
        let mut start = 0;
        let mut cur = a.ctrl.state().fsm_state().expect("started job has a valid state");
        while a.status == RunStatus::Running {
            a.step(None);
            let s = a.ctrl.state().fsm_state().expect("fault-free states are valid");
            if s != cur {
                out.push((cur, start..a.cycle));
                start = a.cycle;
                cur = s;
            }
        }
        out
    }

    /// First, middle and last cycle of every phase instance, the
    /// representative injection points of exhaustive sweeps.
    pub fn representative_cycles(&self) -> Vec<(FsmState, u64)> {
        let mut v: Vec<_> = self
            .phase_windows()
            .into_iter()
            .flat_map(|(s, r)| [(s, r.start), (s, (r.start + r.end - 1) / 2), (s, r.end - 1)])
            .collect();
        v.dedup();
        v
    }

    /// Whether a faulty run has rejoined the fault-free one. Returns
    /// `Some(corrupt)` on success, with `corrupt` set when output words
    /// already hold wrong values that no later store will overwrite.
    fn rejoined(&self, a: &Accel, snap: &Accel) -> Option<bool> {
        if !a.same_accelerator_state(snap) {
            return None;
        }
        let code = payload_code();
        let mut corrupt = false;
        for w in a.tcdm.diff_words(&snap.tcdm) {
            let (fd, _) = code.decode(Codeword(a.tcdm.read_raw(w)));
            let (gd, _) = code.decode(Codeword(snap.tcdm.read_raw(w)));
            if fd == gd {
                continue;
            }
            if !self.out_words.contains(&w) {
                return None;
            }
            if self.last_write.get(&w).is_some_and(|&c| c >= snap.cycle) {
                continue;
            }
            corrupt |= self.valid_bytes_differ(w, fd as u32, gd as u32);
        }
        Some(corrupt)
    }

    /// Whether two values of output word `w` differ in a real channel
    /// rather than in channel padding.
    fn valid_bytes_differ(&self, w: usize, a: u32, b: u32) -> bool {
        let cout_pad = self.snaps[0].layout.cout_pad;
        let ch0 = (w - self.out_words.start) * 4 % cout_pad;
        (0..4).any(|i| ch0 + i < self.job.k_o && (a >> (8 * i)) as u8 != (b >> (8 * i)) as u8)
    }
}

fn record(spec: FaultSpec, a: &Accel, outcome: Outcome, cycles: u64) -> OutcomeRecord {
    OutcomeRecord {
        spec,
        outcome,
        recoveries: a.recoveries,
        cycles,
        error_status: a.ctrl.state().regs.error_status,
        hang: match a.status {
            RunStatus::Hang(c) => Some(c),
            _ => None,
        },
    }
}

fn corrected(a: &Accel) -> Outcome {
    if a.recoveries > 0 {
        Outcome::DetectedCorrected
    } else {
        Outcome::NoEffect
    }
}

fn simulate(g: &GoldenRun, spec: FaultSpec, shortcut: bool, trace: bool) -> (OutcomeRecord, Accel) {
    assert!(spec.cycle < g.cycles, "injection cycle {} outside the {}-cycle run", spec.cycle, g.cycles);
    let mut a = g.state_at(spec.cycle);
    if trace {
        a = a.with_trace();
    }
    match spec.kind {
        FaultKind::Seu => a.flip(spec.site, spec.bit),
        FaultKind::Set => a.step(Some(Transient { site: spec.site, bit: spec.bit })),
    }
    let limit = g.model.watchdog_factor * g.cycles;
    while a.status == RunStatus::Running {
        if a.cycle >= limit {
            a.status = RunStatus::Hang(HangCause::Watchdog);
            break;
        }
        if shortcut {
            let s = &a.ctrl.replicas[0];
            if snap_point(s) {
                if let Some(&i) = g.by_state.get(&s.behavioral()) {
                    let snap = &g.snaps[i];
                    if let Some(corrupt) = g.rejoined(&a, snap) {
                        let outcome = if corrupt { Outcome::IncorrectResult } else { corrected(&a) };
                        let cycles = a.cycle + g.cycles - snap.cycle;
                        return (record(spec, &a, outcome, cycles), a);
                    }
                }
            }
        }
        a.step(None);
    }
    let outcome = match a.status {
        RunStatus::Hang(_) => Outcome::Hang,
        _ if a.outputs() != g.outputs => Outcome::IncorrectResult,
        _ => corrected(&a),
    };
    (record(spec, &a, outcome, a.cycle), a)
}

/// Injects one fault into a copy of the fault-free run and classifies the
/// result. Stops early once the faulty run provably rejoins the golden one.
pub fn inject_and_run(g: &GoldenRun, spec: FaultSpec) -> OutcomeRecord {
    simulate(g, spec, true, false).0
}

/// Like [`inject_and_run`] but always simulates to completion, returning the
/// final accelerator state as well.
pub fn inject_and_run_exact(g: &GoldenRun, spec: FaultSpec) -> (OutcomeRecord, Accel) {
    simulate(g, spec, false, false)
}

/// Like [`inject_and_run_exact`], tracing events from the injection cycle on.
pub fn inject_and_run_traced(g: &GoldenRun, spec: FaultSpec) -> (OutcomeRecord, Accel) {
    simulate(g, spec, false, true)
}

/// Checks that `spec` names a site, bit and cycle that exist in this run.
pub fn check_spec(g: &GoldenRun, spec: &FaultSpec) -> Result<()> {
    let universe = super::enumerate_sites(g.mode(), super::SiteFilter::All, g.footprint_words());
    let Some(&(_, bits)) = universe.iter().find(|s| s.0 == spec.site) else {
        return Err(config(format!("no {} site in {} mode", spec.site.name(), g.mode().name())));
    };
    if spec.bit >= bits {
        return Err(config(format!("{} has {bits} bits, bit {} requested", spec.site.name(), spec.bit)));
    }
    if spec.kind != spec.site.kind() {
        return Err(config(format!("{} takes {:?} faults", spec.site.name(), spec.site.kind())));
    }
    if spec.cycle >= g.cycles {
        return Err(config(format!("cycle {} is outside the {}-cycle run", spec.cycle, g.cycles)));
    }
    Ok(())
}

/// Single points of failure: faults here can corrupt results even in
/// Redundancy mode. The main output buffer counts only while it drains.
pub fn is_spof_at(site: FaultSite, state: Option<FsmState>) -> bool {
    site.is_spof() || matches!(site, FaultSite::OutputBuffer { half: 0 }) && state == Some(FsmState::Streamout)
}
