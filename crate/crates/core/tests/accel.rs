use std::collections::HashSet;

use hmrsim::accel::{default_quant, random_tensors, run_job, Accel, HangCause, RunStatus};
use hmrsim::controller::FsmState;
use hmrsim::engine::{ArrayCfg, Half};
use hmrsim::fault::FaultSite;
use hmrsim::golden::{layer_golden, Kernel, LayerJob, Mode};
use hmrsim::perf::{breakdown, tile_recovery_cycles, CycleModel, CHANNELS};
use proptest::prelude::*;

fn job(kernel: Kernel, dims: [usize; 4], qw: u8, mode: Mode) -> LayerJob {
    LayerJob::new(kernel, dims, qw, mode, default_quant(kernel, dims[0], dims[1], qw))
}

fn accel(j: &LayerJob, seed: u64) -> Accel {
    let (a, w) = random_tensors(j, seed);
    Accel::new(&CycleModel::default(), j, &a, &w).unwrap()
}

fn golden_of(a: &Accel) -> hmrsim::golden::TensorBuf<i8> {
    let mut g = a.clone();
    g.run();
    g.outputs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_mode_matches_golden_and_the_cycle_formulas(
        kidx in 0usize..3,
        k_i in 1usize..80,
        k_o in 1usize..80,
        h in 1usize..10,
        w in 1usize..10,
        qw in 2u8..=8,
        seed in any::<u64>(),
    ) {
        let kernel = Kernel::ALL[kidx];
        let k_o = if kernel == Kernel::Depthwise3x3 { k_i } else { k_o };
        let model = CycleModel::default();
        for mode in Mode::ALL {
            let j = job(kernel, [k_i, k_o, h, w], qw, mode);
            let (a, wt) = random_tensors(&j, seed);
            let r = run_job(&model, &j, &a, &wt).unwrap();
            prop_assert_eq!(r.run, RunStatus::Done);
            prop_assert_eq!(&r.outputs, &layer_golden(&j, &a, &wt).unwrap());
            prop_assert_eq!(r.report, breakdown(&model, &j, mode));
            prop_assert_eq!(r.status.error_status, 0);
            prop_assert_eq!(r.recoveries, 0);
        }
    }
}

#[test]
fn shadow_half_trails_main_half_by_one_cycle() {
    for kernel in Kernel::ALL {
        let k_o = if kernel == Kernel::Depthwise3x3 { 64 } else { 40 };
        let j = job(kernel, [64, k_o, 5, 6], 8, Mode::Redundancy);
        let cfg = ArrayCfg::new(kernel, 8, Mode::Redundancy);
        let bytes = cfg.patch_pixels() * CHANNELS;
        let mut a = accel(&j, 3);
        let mut checked = 0;
        loop {
            let prev = a.clone();
            a.step(None);
            if a.status != RunStatus::Running {
                break;
            }
            let before = prev.ctrl.state().fsm_state();
            let now = a.ctrl.state().fsm_state();
            if !matches!(before, Some(FsmState::InputLoad | FsmState::Mm)) || before != now || prev.cycle == 0 {
                continue;
            }
            // state after cycle t (B) against state after cycle t-1 (A)
            assert_eq!(a.engine.in_buf[1][..bytes], prev.engine.in_buf[0][..bytes], "{kernel:?} cycle {}", a.cycle);
            if now == Some(FsmState::Mm) {
                for (pa, pb) in cfg.pes(Some(Half::A)).zip(cfg.pes(Some(Half::B))) {
                    assert_eq!(a.engine.acc[pb], prev.engine.acc[pa], "{kernel:?} cycle {}", a.cycle);
                }
            }
            checked += 1;
        }
        assert!(checked > 100);
    }
}

/// A fault in half A's accumulators that always survives requantization.
fn sign_flip_in_half_a(a: &mut Accel) {
    let cfg = ArrayCfg::new(a.job.kernel, a.job.qw, a.mode);
    let pe = cfg.pes(Some(Half::A)).next().unwrap();
    a.flip(FaultSite::Accumulator { pe: pe as u8 }, 31);
}

type TileKey = (u16, u16, u16);

fn tile(a: &Accel) -> TileKey {
    let u = a.ctrl.state().uloop[0];
    (u.ko, u.row, u.col)
}

fn run_with_tile_faults(j: &LayerJob, targets: &[usize], per_tile: usize) -> (Accel, u64) {
    let mut a = accel(j, 11);
    let clean = golden_of(&a);
    let mut order: Vec<TileKey> = Vec::new();
    let mut hits: std::collections::HashMap<TileKey, usize> = Default::default();
    let mut armed = HashSet::new();
    while a.status == RunStatus::Running {
        let s = a.ctrl.state();
        if s.fsm_state() == Some(FsmState::InputLoad) && s.phase_cycle == 0 && !order.contains(&tile(&a)) {
            order.push(tile(&a));
        }
        if s.fsm_state() == Some(FsmState::Mm) && s.phase_cycle == 3 && !armed.contains(&(a.cycle)) {
            let t = tile(&a);
            let idx = order.iter().position(|&x| x == t).unwrap();
            let n = hits.entry(t).or_default();
            if targets.contains(&idx) && *n < per_tile {
                *n += 1;
                armed.insert(a.cycle);
                sign_flip_in_half_a(&mut a);
            }
        }
        a.step(None);
    }
    assert_eq!(a.status, RunStatus::Done);
    assert_eq!(a.outputs(), clean);
    (a, hits.values().sum::<usize>() as u64)
}

#[test]
fn rollback_cost_is_exact_per_faulty_tile() {
    let model = CycleModel::default();
    for (kernel, k_i) in [(Kernel::Pointwise1x1, 32), (Kernel::Pointwise1x1, 64), (Kernel::Dense3x3, 32)] {
        let j = job(kernel, [k_i, 32, 8, 8], 8, Mode::Redundancy);
        let base = breakdown(&model, &j, Mode::Redundancy).fsm_cycles();
        let per = tile_recovery_cycles(&model, kernel, k_i, 8);
        for targets in [vec![0], vec![1, 3], vec![0, 2, 5, 7]] {
            let (a, f) = run_with_tile_faults(&j, &targets, 1);
            assert_eq!(f, targets.len() as u64);
            assert_eq!(a.recoveries, f);
            assert_eq!(a.report.fsm_cycles(), base + f * per, "{kernel:?} k_i={k_i} tiles {targets:?}");
            assert_eq!(a.report.recovery, f * per);
            assert_eq!(a.status_regs().error_status as u64, f);
        }
    }
}

#[test]
fn repeated_mismatch_keeps_the_checkpoint_on_the_tile_start() {
    let model = CycleModel::default();
    let j = job(Kernel::Pointwise1x1, [64, 32, 4, 4], 8, Mode::Redundancy);
    let mut a = accel(&j, 5);
    let clean = golden_of(&a);
    let start = a.ctrl.state().uloop[1];
    let mut faults = 0;
    while a.status == RunStatus::Running {
        let s = a.ctrl.state();
        if faults < 2 && s.fsm_state() == Some(FsmState::Mm) && s.phase_cycle == 3 && s.uloop[0].ic == 1 {
            sign_flip_in_half_a(&mut a);
            faults += 1;
        }
        if faults > 0 && s.uloop[0].ko == 0 && s.uloop[0].row == 0 && s.uloop[0].col == 0 {
            assert_eq!(a.ctrl.state().uloop[1], start, "checkpoint moved at cycle {}", a.cycle);
        }
        a.step(None);
    }
    assert_eq!(a.recoveries, 2);
    assert_eq!(a.outputs(), clean);
    let base = breakdown(&model, &j, Mode::Redundancy).fsm_cycles();
    assert_eq!(a.report.fsm_cycles(), base + 2 * tile_recovery_cycles(&model, Kernel::Pointwise1x1, 64, 8));
}

#[test]
fn checker_flags_any_bit_in_either_output_buffer() {
    let j = job(Kernel::Pointwise1x1, [32, 32, 4, 2], 8, Mode::Redundancy);
    let mut at_check = accel(&j, 2);
    while !(at_check.ctrl.state().fsm_state() == Some(FsmState::OutputCheck) && at_check.ctrl.state().phase_cycle == 2) {
        at_check.step(None);
    }
    for half in 0..2u8 {
        for bit in (0..8 * 256).step_by(7) {
            let mut a = at_check.clone();
            a.flip(FaultSite::OutputBuffer { half }, bit);
            a.step(None);
            assert_eq!(a.ctrl.state().fsm_state(), Some(FsmState::ErrorRecovery), "half {half} bit {bit}");
        }
    }
    let mut a = at_check.clone();
    a.step(None);
    assert_eq!(a.ctrl.state().fsm_state(), Some(FsmState::Streamout));
}

#[test]
fn single_replica_upset_is_outvoted() {
    let j = job(Kernel::Dense3x3, [32, 32, 4, 4], 8, Mode::Redundancy);
    let clean = accel(&j, 4);
    let mut reference = clean.clone();
    reference.run();
    for (replica, bit) in [(0u8, 1u32), (1, 5), (2, 19)] {
        let mut a = clean.clone();
        for _ in 0..30 {
            a.step(None);
        }
        a.flip(FaultSite::FsmRegister { replica }, bit);
        a.flip(FaultSite::RegisterFile { replica }, 100 + bit);
        a.run();
        assert_eq!(a.status, RunStatus::Done);
        assert_eq!(a.report, reference.report);
        assert!(a.tcdm.same_contents(&reference.tcdm));
        assert_eq!(a.status_regs().tmr_divergence, 1);
    }
}

#[test]
fn baseline_controller_upsets_can_hang() {
    let j = job(Kernel::Pointwise1x1, [32, 32, 4, 4], 8, Mode::Baseline4x4);
    let mut a = accel(&j, 1);
    a.step(None);
    // InputLoad (001) -> Idle (000)
    a.flip(FaultSite::FsmRegister { replica: 0 }, 0);
    assert_eq!(a.run(), RunStatus::Hang(HangCause::Stuck));
}

#[test]
fn out_of_range_addresses_alias_into_the_scratchpad() {
    let j = job(Kernel::Pointwise1x1, [32, 32, 4, 4], 8, Mode::Baseline4x4);
    let mut a = accel(&j, 1);
    let clean = golden_of(&a);
    // one bit above the 128 kB window: same words, same result
    a.ctrl.replicas[0].regs.act_base |= 1 << 20;
    assert_eq!(a.clone().run(), RunStatus::Done);
    a.run();
    assert_eq!(a.outputs(), clean);
    // a misaligned base reads the enclosing word
    let mut b = accel(&j, 1);
    b.ctrl.replicas[0].regs.out_base += 2;
    assert_eq!(b.run(), RunStatus::Done);
    assert_eq!(b.outputs(), clean);
}

#[test]
fn runs_are_deterministic() {
    let j = job(Kernel::Depthwise3x3, [48, 48, 6, 6], 3, Mode::Performance);
    let mut x = accel(&j, 9);
    let mut y = accel(&j, 9);
    x.run();
    y.run();
    assert!(x.same_behavior(&y));
    assert_eq!(x.report, y.report);
}
