use std::fmt::Write as _;
use std::fs;
use std::io::{IsTerminal, Write as _};
use std::path::{Path, PathBuf};

use anyhow::Context;
use hmrsim::accel::{random_tensors, run_job_traced, RunStatus, StatusRegs};
use hmrsim::ecc::{metadata_code, payload_code};
use hmrsim::fault::{check_spec, inject_and_run_exact, inject_and_run_traced, run_campaign_with, Campaign, GoldenRun, Outcome, OutcomeRecord};
use hmrsim::golden::{layer_golden, read_snnt, write_snnt, Kernel, LayerJob, Mode, TensorBuf};
use hmrsim::perf::*;
use hmrsim::selftest::{run_selftest, spof_demo};
use serde::Serialize;

use crate::config::{config_error, Config};
use crate::{Settings, EXIT_ACCEPTANCE, EXIT_UNCORRECTABLE};

// a closed pipe (`| head`) is not an error for the dump commands
pub fn dump_defaults() {
    let text = serde_json::to_string_pretty(&Config::default()).expect("defaults serialize");
    let _ = writeln!(std::io::stdout(), "{text}");
}

pub fn dump_hmatrix() {
    let _ = write!(std::io::stdout(), "{}\n{}", payload_code().hmatrix_text(), metadata_code().hmatrix_text());
}

fn out_dir(s: &Settings) -> anyhow::Result<&Path> {
    let dir = s.cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn inputs(cfg: &Config, job: &LayerJob, seed: u64) -> anyhow::Result<(TensorBuf<i8>, TensorBuf<i8>)> {
    match &cfg.input {
        None => Ok(random_tensors(job, seed)),
        Some(f) => {
            let acts = read_snnt(&f.acts).map_err(|e| config_error(format!("{}: {e}", f.acts.display())))?;
            let weights = read_snnt(&f.weights).map_err(|e| config_error(format!("{}: {e}", f.weights.display())))?;
            layer_golden(job, &acts, &weights).map_err(|e| config_error(format!("input tensors: {e}")))?;
            Ok((acts, weights))
        }
    }
}

/// Per-mode file name when several modes share one path.
fn tagged(path: &Path, mode: Mode, several: bool) -> PathBuf {
    if !several {
        return path.to_path_buf();
    }
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{}.{}", mode.name(), ext.to_string_lossy()),
        None => format!("{stem}.{}", mode.name()),
    };
    path.with_file_name(name)
}

#[derive(Serialize)]
struct RunReport<'a> {
    mode: Mode,
    job: &'a LayerJob,
    seed: u64,
    cycles: CycleReport,
    status: StatusRegs,
    recoveries: u64,
    finished: bool,
    matches_reference: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    fault: Option<OutcomeRecord>,
}

pub fn run(s: &Settings) -> anyhow::Result<u8> {
    let cfg = &s.cfg;
    let dir = out_dir(s)?;
    let modes = cfg.mode.modes();
    let mut code = 0;
    for &mode in &modes {
        let job = cfg.job.layer(mode)?;
        let (acts, weights) = inputs(cfg, &job, s.seed)?;
        let reference = layer_golden(&job, &acts, &weights)?;
        let (outputs, cycles, status, recoveries, finished, trace, fault) = match cfg.inject {
            None => {
                let r = run_job_traced(&cfg.model, &job, &acts, &weights, s.trace.is_some())?;
                (r.outputs, r.report, r.status, r.recoveries, r.run == RunStatus::Done, r.trace, None)
            }
            Some(spec) => {
                let g = GoldenRun::new(&cfg.model, &job, acts, weights)?;
                check_spec(&g, &spec)?;
                let (rec, a) = if s.trace.is_some() { inject_and_run_traced(&g, spec) } else { inject_and_run_exact(&g, spec) };
                (a.outputs(), a.report, a.status_regs(), a.recoveries, a.status == RunStatus::Done, a.trace, Some(rec))
            }
        };
        let matches = finished && outputs == reference;
        write_snnt(dir.join(format!("outputs_{}.snnt", mode.name())), &outputs)?;
        let report = RunReport { mode, job: &job, seed: s.seed, cycles, status, recoveries, finished, matches_reference: matches, fault };
        write(dir.join(format!("report_{}.json", mode.name())), serde_json::to_string_pretty(&report)? + "\n")?;
        if let (Some(path), Some(lines)) = (&s.trace, trace) {
            let mut text = String::from("cycle,unit,event,detail\n");
            for l in lines {
                text += &l;
                text.push('\n');
            }
            write(tagged(path, mode, modes.len() > 1), text)?;
        }
        let mut line = format!("{:<11} {:>8} cycles (input_load {}, mm {}, streamout {}, error_check {}, recovery {})", mode.name(), cycles.total, cycles.input_load, cycles.mm, cycles.streamout, cycles.error_check, cycles.recovery);
        match fault {
            Some(rec) => {
                let _ = write!(line, ", fault {} bit {} at cycle {}: {}", rec.spec.site.name(), rec.spec.bit, rec.spec.cycle, rec.outcome.name());
                if matches!(rec.outcome, Outcome::IncorrectResult | Outcome::Hang) {
                    code = EXIT_UNCORRECTABLE;
                }
            }
            None if matches => line += ", outputs match the reference",
            None => {
                line += ", OUTPUTS DIFFER FROM THE REFERENCE";
                code = code.max(EXIT_ACCEPTANCE);
            }
        }
        println!("{line}");
    }
    Ok(code)
}

pub fn campaign(s: &Settings) -> anyhow::Result<u8> {
    let cfg = &s.cfg;
    let dir = out_dir(s)?;
    let show = std::io::stderr().is_terminal();
    for mode in cfg.mode.modes() {
        let c = Campaign::new(cfg.job.layer(mode)?, mode, cfg.campaign.n, s.seed, cfg.campaign.filter);
        let progress = |k: usize| eprint!("\r{}: {k}/{}", mode.name(), c.n);
        let r = run_campaign_with(&cfg.model, &c, s.jobs, show.then_some(&progress as &(dyn Fn(usize) + Sync)))?;
        if show {
            eprintln!();
        }
        let base = format!("campaign_{}", mode.name());
        write(dir.join(format!("{base}.json")), r.to_json() + "\n")?;
        write(dir.join(format!("{base}.csv")), r.to_csv())?;
        if cfg.campaign.log {
            write(dir.join(format!("{base}_log.csv")), r.log_csv())?;
        }
        let p = r.percentages;
        println!(
            "{:<11} {} injections over {} cycles: incorrect {:.3}%, hang {:.3}%, detected+corrected {:.3}%, no effect {:.3}%",
            mode.name(),
            r.injections,
            r.cycles,
            p.incorrect_result,
            p.hang,
            p.detected_corrected,
            p.no_effect
        );
    }
    Ok(0)
}

fn log_rates(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let steps = ((hi / lo).log10() * per_decade as f64).round() as usize;
    (0..=steps).map(|i| lo * 10f64.powf(i as f64 / per_decade as f64)).filter(|r| *r <= hi * (1.0 + 1e-9)).collect()
}

pub fn sweep(s: &Settings) -> anyhow::Result<u8> {
    let cfg = &s.cfg;
    let m = &cfg.model;
    let sw = &cfg.sweep;
    let dir = out_dir(s)?;

    let mut text = String::from("mode,phase,cycles\n");
    for mode in Mode::ALL {
        text += &breakdown(m, &cfg.job.layer(mode)?, mode).to_csv(mode.name());
    }
    write(dir.join("breakdown.csv"), text)?;

    let mut text = String::from("kernel,k_i,k_o,h,w,recovery_cycles,overhead_pct\n");
    for kernel in [Kernel::Pointwise1x1, Kernel::Dense3x3] {
        for hw in sw.overhead_hw[0]..=sw.overhead_hw[1] {
            let spec = crate::config::JobSpec { kernel, k_i: sw.overhead_k_i, k_o: sw.overhead_k_o, h_o: hw, w_o: hw, qw: 8, quant: None };
            let job = spec.layer(Mode::Redundancy)?;
            let rec = tile_recovery_cycles(m, kernel, job.k_i, job.qw);
            let _ = writeln!(text, "{},{},{},{hw},{hw},{rec},{:.4}", kernel_name(kernel), job.k_i, job.k_o, single_fault_overhead(m, &job));
        }
    }
    write(dir.join("overhead.csv"), text)?;

    let job = sw.degradation_job.layer(Mode::Redundancy)?;
    let rates = log_rates(sw.rate_range[0], sw.rate_range[1], sw.points_per_decade);
    let mut text = String::from("policy,rate,relative_perf,monte_carlo,non_terminating\n");
    for (name, policy) in [("hw_rollback", RecoveryPolicy::HardwareRollback), ("sw_restart", RecoveryPolicy::SoftwareRestart)] {
        let scen = RecoveryScenario { job: job.clone(), rates: rates.clone(), f_clk: cfg.f_clk, policy, trials: sw.trials, seed: s.seed };
        for p in degradation_curve(m, &scen)? {
            let mc = if sw.trials > 0 && !p.non_terminating {
                format!("{:.6}", monte_carlo_perf(m, &job, cfg.f_clk, policy, p.rate, sw.trials, s.seed))
            } else {
                String::new()
            };
            let _ = writeln!(text, "{name},{:e},{:.6},{mc},{}", p.rate, p.relative_perf, p.non_terminating);
        }
        println!("{name}: performance halves at {:.3e} faults/s", half_performance_rate(m, &job, cfg.f_clk, policy));
    }
    write(dir.join("degradation.csv"), text)?;
    println!("wrote breakdown.csv, overhead.csv and degradation.csv to {}", dir.display());
    Ok(0)
}

fn kernel_name(k: Kernel) -> &'static str {
    match k {
        Kernel::Pointwise1x1 => "pointwise",
        Kernel::Dense3x3 => "dense",
        Kernel::Depthwise3x3 => "depthwise",
    }
}

pub fn selftest(s: &Settings, demo: bool) -> anyhow::Result<u8> {
    let checks = run_selftest(&s.cfg.model);
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        println!("{}  {:<width$}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().any(|c| !c.passed) {
        return Ok(EXIT_ACCEPTANCE);
    }
    if demo {
        let r = spof_demo(&s.cfg.model)?;
        println!("spof demo: {} bit {} at cycle {}: {}", r.spec.site.name(), r.spec.bit, r.spec.cycle, r.outcome.name());
        if r.outcome == Outcome::IncorrectResult {
            return Ok(EXIT_UNCORRECTABLE);
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_grid_is_log_spaced_and_inclusive() {
        let r = log_rates(10.0, 1e4, 2);
        assert_eq!(r.len(), 7);
        assert!((r[6] - 1e4).abs() < 1e-6);
        assert!((r[1] / r[0] - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tagging_keeps_the_extension() {
        assert_eq!(tagged(Path::new("t/trace.csv"), Mode::Redundancy, true), Path::new("t/trace.redundancy.csv"));
        assert_eq!(tagged(Path::new("trace.csv"), Mode::Redundancy, false), Path::new("trace.csv"));
    }
}
