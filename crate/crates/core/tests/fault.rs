use hmrsim::accel::default_quant;
use hmrsim::controller::FsmState;
use hmrsim::fault::*;
use hmrsim::golden::{Kernel, LayerJob, Mode};
use hmrsim::perf::CycleModel;

fn job(kernel: Kernel, dims: [usize; 4], mode: Mode) -> LayerJob {
    LayerJob::new(kernel, dims, 8, mode, default_quant(kernel, dims[0], dims[1], 8))
}

fn golden(kernel: Kernel, dims: [usize; 4], mode: Mode) -> GoldenRun {
    GoldenRun::from_seed(&CycleModel::default(), &job(kernel, dims, mode), 17).unwrap()
}

fn first_cycle_in(g: &GoldenRun, state: FsmState) -> std::ops::Range<u64> {
    g.phase_windows().into_iter().find(|w| w.0 == state).unwrap().1
}

#[test]
fn early_exit_agrees_with_full_simulation() {
    for (kernel, dims) in [(Kernel::Pointwise1x1, [64, 32, 4, 6]), (Kernel::Dense3x3, [40, 32, 5, 4]), (Kernel::Depthwise3x3, [32, 32, 4, 4])] {
        for mode in Mode::ALL {
            let g = golden(kernel, dims, mode);
            let universe = enumerate_sites(mode, SiteFilter::All, g.footprint_words());
            let specs = sample_faults(&universe, g.cycles, 300, 99).unwrap();
            for s in specs {
                let fast = inject_and_run(&g, s);
                let (full, _) = inject_and_run_exact(&g, s);
                assert_eq!(fast, full, "{kernel:?} {mode:?}");
            }
        }
    }
}

#[test]
fn scratchpad_upset_is_corrected_silently() {
    let g = golden(Kernel::Pointwise1x1, [32, 32, 4, 4], Mode::Redundancy);
    // first activation word, read during the first load
    for mode_bit in [0, 13, 31, 35] {
        let (r, a) = inject_and_run_exact(&g, FaultSpec::new(FaultSite::TcdmCell { word: 0 }, mode_bit, 0));
        assert_eq!(r.outcome, Outcome::NoEffect);
        assert_eq!(a.status_regs().ecc_corrected, 1);
        assert_eq!(a.status_regs().ecc_uncorrectable, 0);
    }
}

#[test]
fn replica_upset_is_voted_out() {
    let g = golden(Kernel::Pointwise1x1, [32, 32, 4, 4], Mode::Redundancy);
    for replica in 0..3 {
        for bit in 0..20 {
            let r = inject_and_run(&g, FaultSpec::new(FaultSite::FsmRegister { replica }, bit, 40));
            assert_eq!(r.outcome, Outcome::NoEffect);
            assert_eq!(r.cycles, g.cycles);
        }
    }
}

#[test]
fn main_input_buffer_upset_during_mm_is_rolled_back_once() {
    let g = golden(Kernel::Pointwise1x1, [32, 32, 4, 4], Mode::Redundancy);
    let mm = first_cycle_in(&g, FsmState::Mm);
    // top bit of the first activation byte: every product with it changes
    let r = inject_and_run(&g, FaultSpec::new(FaultSite::InputBuffer { half: 0 }, 7, mm.start));
    assert_eq!(r.outcome, Outcome::DetectedCorrected);
    assert_eq!(r.recoveries, 1);
    assert_eq!(r.error_status, 1);
}

#[test]
fn spof_sites_can_corrupt_redundancy_results() {
    let m = CycleModel::default();
    let g = golden(Kernel::Pointwise1x1, [32, 32, 4, 4], Mode::Redundancy);
    let load = first_cycle_in(&g, FsmState::InputLoad);
    let so = first_cycle_in(&g, FsmState::Streamout);
    let check = first_cycle_in(&g, FsmState::OutputCheck);
    // the decoder feeds both halves, so they agree on the wrong pixel
    let consume = load.start + m.reconfig as u64 + 1;
    let r = inject_and_run(&g, FaultSpec::new(FaultSite::EccDecoderOutput, 7, consume));
    assert_eq!(r.outcome, Outcome::IncorrectResult);
    assert_eq!(r.recoveries, 0);
    // a spurious mismatch only costs a rollback
    let r = inject_and_run(&g, FaultSpec::new(FaultSite::CheckerComparator, 0, check.end - 1));
    assert_eq!(r.outcome, Outcome::DetectedCorrected);
    // encoder flips stay inside one codeword and are corrected on read
    assert!((0..351).all(|b| inject_and_run(&g, FaultSpec::new(FaultSite::EccEncoderOutput, b, so.start + 9)).outcome == Outcome::NoEffect));
    let drained = (0..2048)
        .map(|b| inject_and_run(&g, FaultSpec::new(FaultSite::OutputBuffer { half: 0 }, b, so.start)))
        .filter(|r| r.outcome == Outcome::IncorrectResult)
        .count();
    assert!(drained > 0);
    assert!(is_spof_at(FaultSite::OutputBuffer { half: 0 }, Some(FsmState::Streamout)));
    assert!(!is_spof_at(FaultSite::OutputBuffer { half: 0 }, Some(FsmState::Mm)));
}

#[test]
fn sampling_is_distinct_and_inside_the_window() {
    let universe = enumerate_sites(Mode::Redundancy, SiteFilter::Controller, 0..0);
    let specs = sample_faults(&universe, 50, 2000, 3).unwrap();
    let set: std::collections::HashSet<_> = specs.iter().map(|s| (s.site, s.bit, s.cycle)).collect();
    assert_eq!(set.len(), specs.len());
    assert!(specs.iter().all(|s| s.cycle < 50 && s.bit < s.site.bits(Mode::Redundancy) && s.site.is_controller()));
    assert_eq!(specs, sample_faults(&universe, 50, 2000, 3).unwrap());
    assert!(sample_faults(&universe, 1, 1_000_000, 3).is_err());
}

fn campaign(kernel: Kernel, mode: Mode, n: usize, seed: u64, filter: SiteFilter) -> Campaign {
    Campaign::new(job(kernel, [64, 64, 8, 8], mode), mode, n, seed, filter)
}

#[test]
fn datapath_campaign_in_redundancy_never_corrupts() {
    let m = CycleModel::default();
    for kernel in [Kernel::Pointwise1x1, Kernel::Dense3x3] {
        let r = run_campaign(&m, &campaign(kernel, Mode::Redundancy, 3000, 5, SiteFilter::Datapath)).unwrap();
        assert_eq!(r.counts.incorrect_result, 0, "{kernel:?}");
        assert_eq!(r.counts.hang, 0, "{kernel:?}");
        assert!(r.counts.detected_corrected > 0);
    }
}

#[test]
fn baseline_controller_faults_mostly_corrupt_rather_than_hang() {
    let m = CycleModel::default();
    let r = run_campaign(&m, &campaign(Kernel::Pointwise1x1, Mode::Baseline4x4, 3000, 8, SiteFilter::Controller)).unwrap();
    assert!(r.counts.hang > 0);
    assert!(r.counts.incorrect_result >= 3 * r.counts.hang, "{:?}", r.counts);
}

#[test]
fn campaigns_are_reproducible_across_worker_counts() {
    let m = CycleModel::default();
    let c = campaign(Kernel::Pointwise1x1, Mode::Baseline4x4, 800, 21, SiteFilter::All);
    let a = run_campaign_with(&m, &c, 1, None).unwrap();
    let b = run_campaign_with(&m, &c, 3, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records, b.records);
    let other = run_campaign_with(&m, &Campaign { seed: 22, ..c }, 1, None).unwrap();
    assert_ne!(a.records, other.records);
}

#[test]
fn report_formats() {
    let m = CycleModel::default();
    let c = campaign(Kernel::Pointwise1x1, Mode::Redundancy, 200, 1, SiteFilter::Accelerator);
    let seen = std::sync::atomic::AtomicUsize::new(0);
    let r = run_campaign_with(&m, &c, 1, Some(&|k| seen.store(k, std::sync::atomic::Ordering::Relaxed))).unwrap();
    assert_eq!(seen.into_inner(), 200);
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(v["counts"]["no_effect"].as_u64().unwrap() + v["counts"]["detected_corrected"].as_u64().unwrap()
        + v["counts"]["incorrect_result"].as_u64().unwrap() + v["counts"]["hang"].as_u64().unwrap(), 200);
    assert!(v["per_site"].as_array().unwrap().iter().any(|s| s["site"] == "accumulator"));
    let pct: f64 = ["no_effect", "detected_corrected", "incorrect_result", "hang"].iter().map(|k| v["percentages"][k].as_f64().unwrap()).sum();
    assert!((pct - 100.0).abs() < 1e-9);
    let csv = r.to_csv();
    assert!(csv.starts_with("site,bits,injections,"));
    assert!(csv.lines().last().unwrap().starts_with("total,"));
    assert_eq!(r.log_csv().lines().count(), 201);
    let spec: FaultSpec = serde_json::from_str(r#"{"kind":"seu","site":"micro_loop","replica":2,"id":1,"bit":7,"cycle":10}"#).unwrap();
    assert_eq!(spec.site, FaultSite::MicroLoop { replica: 2, id: 1 });
}
