//! Quick built-in checks: codec properties, the published cycle figures
//! and simulator agreement on micro jobs. Runs in well under a second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::accel::{default_quant, random_tensors, run_job, RunStatus};
use crate::controller::FsmState;
use crate::ecc::{metadata_code, payload_code, Codeword, DecodeStatus};
use crate::fault::{inject_and_run, FaultSite, FaultSpec, GoldenRun, OutcomeRecord};
use crate::golden::{layer_golden, Kernel, LayerJob, Mode};
use crate::layout::fits;
use crate::perf::{breakdown, recovery_cycles, single_fault_overhead, CycleModel};
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn job(kernel: Kernel, dims: [usize; 4], qw: u8, mode: Mode) -> LayerJob {
    LayerJob::new(kernel, dims, qw, mode, default_quant(kernel, dims[0], dims[1], qw))
}

fn ecc_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xECC);
    for code in [payload_code(), metadata_code()] {
        let n = code.codeword_bits();
        for _ in 0..100 {
            let data = rng.gen::<u64>() & code.data_mask();
            let cw = code.encode(data).0;
            for i in 0..n {
                if code.decode(Codeword(cw ^ 1 << i)) != (data, DecodeStatus::Corrected(i as u8)) {
                    return check("ecc", false, format!("({n},{}) flip {i} not corrected", code.data_bits()));
                }
                for j in i + 1..n {
                    if code.decode(Codeword(cw ^ 1 << i ^ 1 << j)).1 != DecodeStatus::DetectedUncorrectable {
                        return check("ecc", false, format!("({n},{}) flips {i},{j} not detected", code.data_bits()));
                    }
                }
            }
        }
    }
    check("ecc", true, "(39,32) and (44,37): every single corrected, every pair detected".into())
}

fn recovery_check(m: &CycleModel) -> Check {
    let table = [
        (Kernel::Pointwise1x1, 32, 90),
        (Kernel::Pointwise1x1, 64, 150),
        (Kernel::Pointwise1x1, 256, 510),
        (Kernel::Dense3x3, 32, 330),
        (Kernel::Dense3x3, 256, 2430),
    ];
    for (k, k_i, want) in table {
        match recovery_cycles(m, k, k_i) {
            Ok(got) if got == want => {}
            other => return check("recovery formulas", false, format!("{k:?} k_i={k_i}: {other:?}, want {want}")),
        }
    }
    check("recovery formulas", true, "PW 90/150/510, dense 330/2430".into())
}

fn breakdown_check(m: &CycleModel) -> Check {
    let r = |mode| breakdown(m, &job(Kernel::Dense3x3, [256, 32, 8, 8], 8, mode), mode);
    let (b, p, red) = (r(Mode::Baseline4x4), r(Mode::Performance), r(Mode::Redundancy));
    let il = 100.0 * (red.input_load as f64 / b.input_load as f64 - 1.0);
    let so = 100.0 * (red.streamout as f64 / b.streamout as f64 - 1.0);
    let ok = red.error_check == 24
        && red.mm == 2 * b.mm
        && p.input_load == red.input_load
        && (il - 41.0).abs() <= 5.0
        && (so - 11.0).abs() <= 5.0;
    let detail = format!("ErrorCheck {} (24), InputLoad +{il:.1}% (41), Streamout +{so:.1}% (11)", red.error_check);
    check("fsm breakdown", ok, detail)
}

fn overhead_check(m: &CycleModel) -> Check {
    let at = |hw| single_fault_overhead(m, &job(Kernel::Pointwise1x1, [64, 64, hw, hw], 8, Mode::Redundancy));
    let (o8, o28) = (at(8), at(28));
    let ok = (o8 - 5.86).abs() <= 0.6 && (o28 - 0.48).abs() <= 0.05;
    check("single-fault overhead", ok, format!("8x8x64 {o8:.2}% (5.86), 28x28x64 {o28:.2}% (0.48)"))
}

fn simulator_check(m: &CycleModel) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E1F);
    let mut n = 0;
    while n < 12 {
        let kernel = Kernel::ALL[n % 3];
        let k_i = rng.gen_range(1..=48);
        let k_o = if kernel == Kernel::Depthwise3x3 { k_i } else { rng.gen_range(1..=48) };
        let dims = [k_i, k_o, rng.gen_range(1..=6), rng.gen_range(1..=6)];
        let qw = rng.gen_range(2..=8);
        if !fits(&job(kernel, dims, qw, Mode::Baseline4x4)) {
            continue;
        }
        for mode in Mode::ALL {
            let j = job(kernel, dims, qw, mode);
            let (a, w) = random_tensors(&j, n as u64);
            let ok = match (run_job(m, &j, &a, &w), layer_golden(&j, &a, &w)) {
                (Ok(r), Ok(g)) => r.run == RunStatus::Done && r.outputs == g && r.report == breakdown(m, &j, mode),
                _ => false,
            };
            if !ok {
                return check("simulator", false, format!("{kernel:?} {dims:?} qw={qw} {}", mode.name()));
            }
        }
        n += 1;
    }
    check("simulator", true, "12 micro jobs x 3 modes match the reference and the cycle model".into())
}

fn tmr_check(m: &CycleModel) -> Check {
    let j = job(Kernel::Pointwise1x1, [32, 32, 4, 4], 8, Mode::Redundancy);
    let g = match GoldenRun::from_seed(m, &j, 1) {
        Ok(g) => g,
        Err(e) => return check("tmr", false, e.to_string()),
    };
    let r = inject_and_run(&g, FaultSpec::new(FaultSite::FsmRegister { replica: 1 }, 0, g.cycles / 2));
    let ok = r.outcome == crate::fault::Outcome::NoEffect;
    check("tmr", ok, format!("replica upset mid-run: {}", r.outcome.name()))
}

/// Runs every check against `model`.
pub fn run_selftest(model: &CycleModel) -> Vec<Check> {
    vec![
        ecc_check(),
        recovery_check(model),
        breakdown_check(model),
        overhead_check(model),
        simulator_check(model),
        tmr_check(model),
    ]
}

/// A single upset on the ECC decoder output, a site outside the redundancy
/// scheme: both halves consume the same wrong pixel and agree on it.
pub fn spof_demo(model: &CycleModel) -> Result<OutcomeRecord> {
    let j = job(Kernel::Pointwise1x1, [32, 32, 4, 4], 8, Mode::Redundancy);
    let g = GoldenRun::from_seed(model, &j, 42)?;
    let load = g.phase_windows().into_iter().find(|w| w.0 == FsmState::InputLoad).expect("job loads inputs").1;
    let cycle = load.start + model.reconfig as u64 + 1;
    Ok(inject_and_run(&g, FaultSpec::new(FaultSite::EccDecoderOutput, 7, cycle)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::Outcome;

    #[test]
    fn clean_model_passes() {
        let failed: Vec<_> = run_selftest(&CycleModel::default()).into_iter().filter(|c| !c.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
    }

    #[test]
    fn perturbed_constant_fails_a_formula_check() {
        let m = CycleModel { rollback: 4, ..CycleModel::default() };
        let failed: Vec<_> = run_selftest(&m).into_iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert!(failed.contains(&"recovery formulas"));
    }

    #[test]
    fn spof_demo_is_uncorrectable() {
        assert_eq!(spof_demo(&CycleModel::default()).unwrap().outcome, Outcome::IncorrectResult);
    }
}
