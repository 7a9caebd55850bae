use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::golden::{LayerJob, Mode};
use crate::perf::CycleModel;

use super::{enumerate_sites, inject_and_run, FaultSite, FaultSpec, GoldenRun, Outcome, OutcomeRecord, SiteFilter};

pub const DEFAULT_INJECTIONS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub job: LayerJob,
    pub mode: Mode,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_filter")]
    pub filter: SiteFilter,
}

fn default_n() -> usize {
    DEFAULT_INJECTIONS
}

fn default_filter() -> SiteFilter {
    SiteFilter::All
}

impl Campaign {
    pub fn new(job: LayerJob, mode: Mode, n: usize, seed: u64, filter: SiteFilter) -> Campaign {
        Campaign { job, mode, n, seed, filter }
    }

    /// The job as run in this campaign's mode.
    pub fn mode_job(&self) -> LayerJob {
        LayerJob { mode: self.mode, ..self.job.clone() }
    }
}

/// Outcome counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub incorrect_result: u64,
    pub hang: u64,
    pub detected_corrected: u64,
    pub no_effect: u64,
}

impl Histogram {
    pub fn add(&mut self, o: Outcome) {
        *self.slot(o) += 1;
    }

    fn slot(&mut self, o: Outcome) -> &mut u64 {
        match o {
            Outcome::IncorrectResult => &mut self.incorrect_result,
            Outcome::Hang => &mut self.hang,
            Outcome::DetectedCorrected => &mut self.detected_corrected,
            Outcome::NoEffect => &mut self.no_effect,
        }
    }

    pub fn get(&self, o: Outcome) -> u64 {
        match o {
            Outcome::IncorrectResult => self.incorrect_result,
            Outcome::Hang => self.hang,
            Outcome::DetectedCorrected => self.detected_corrected,
            Outcome::NoEffect => self.no_effect,
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        for o in Outcome::ALL {
            *self.slot(o) += other.get(o);
        }
    }

    pub fn total(&self) -> u64 {
        Outcome::ALL.iter().map(|&o| self.get(o)).sum()
    }

    pub fn percentages(&self) -> Percentages {
        let t = self.total().max(1) as f64;
        let p = |o| 100.0 * self.get(o) as f64 / t;
        Percentages {
            incorrect_result: p(Outcome::IncorrectResult),
            hang: p(Outcome::Hang),
            detected_corrected: p(Outcome::DetectedCorrected),
            no_effect: p(Outcome::NoEffect),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentages {
    pub incorrect_result: f64,
    pub hang: f64,
    pub detected_corrected: f64,
    pub no_effect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteBreakdown {
    pub site: String,
    pub bits: u64,
    pub counts: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub mode: Mode,
    pub filter: SiteFilter,
    pub seed: u64,
    pub injections: usize,
    /// Fault-free controller cycles, the injection window.
    pub cycles: u64,
    /// Addressable bits in the filtered universe.
    pub universe_bits: u64,
    pub counts: Histogram,
    pub percentages: Percentages,
    pub per_site: Vec<SiteBreakdown>,
    #[serde(skip)]
    pub records: Vec<OutcomeRecord>,
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-site histogram with a trailing total row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("site,bits,injections,incorrect_result,hang,detected_corrected,no_effect\n");
        let row = |s: &mut String, name: &str, bits: u64, h: &Histogram| {
            let _ = writeln!(s, "{name},{bits},{},{},{},{},{}", h.total(), h.incorrect_result, h.hang, h.detected_corrected, h.no_effect);
        };
        for b in &self.per_site {
            row(&mut s, &b.site, b.bits, &b.counts);
        }
        row(&mut s, "total", self.universe_bits, &self.counts);
        s
    }

    /// One line per injection.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("index,kind,site,bit,cycle,classification,recoveries,cycles\n");
        for (i, r) in self.records.iter().enumerate() {
            let kind = match r.spec.kind {
                super::FaultKind::Seu => "seu",
                super::FaultKind::Set => "set",
            };
            let _ = writeln!(
                s,
                "{i},{kind},{},{},{},{},{},{}",
                r.spec.site.name(),
                r.spec.bit,
                r.spec.cycle,
                r.outcome.name(),
                r.recoveries,
                r.cycles
            );
        }
        s
    }
}

/// Draws `n` distinct (site, bit, cycle) triples uniformly from the
/// universe crossed with the `cycles`-long window. Draw `i` uses a
/// generator seeded with `seed ^ i`.
pub fn sample_faults(universe: &[(FaultSite, u32)], cycles: u64, n: usize, seed: u64) -> Result<Vec<FaultSpec>> {
    let mut prefix = Vec::with_capacity(universe.len());
    let mut total = 0u64;
    for &(_, bits) in universe {
        total += bits as u64;
        prefix.push(total);
    }
    let space = total as u128 * cycles as u128;
    if (n as u128) > space {
        return Err(config(format!("{n} injections requested but only {space} distinct faults exist")));
    }
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
        loop {
            let flat = rng.gen_range(0..total);
            let cycle = rng.gen_range(0..cycles);
            if seen.insert((flat, cycle)) {
                let s = prefix.partition_point(|&p| p <= flat);
                let base = if s == 0 { 0 } else { prefix[s - 1] };
                out.push(FaultSpec::new(universe[s].0, (flat - base) as u32, cycle));
                break;
            }
        }
    }
    Ok(out)
}

/// Runs a campaign on `jobs` worker threads (0 = all cores). `progress`
/// receives the number of finished injections from time to time.
pub fn run_campaign_with(
    model: &CycleModel,
    c: &Campaign,
    jobs: usize,
    progress: Option<&(dyn Fn(usize) + Sync)>,
) -> Result<CampaignReport> {
    let job = c.mode_job();
    let golden = GoldenRun::from_seed(model, &job, c.seed)?;
    let universe = enumerate_sites(c.mode, c.filter, golden.footprint_words());
    let specs = sample_faults(&universe, golden.cycles, c.n, c.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| config(format!("cannot start worker pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let step = (c.n / 100).max(1);
    let records: Vec<OutcomeRecord> = pool.install(|| {
        specs
            .par_iter()
            .map(|&s| {
                let r = inject_and_run(&golden, s);
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if let Some(p) = progress {
                    if k % step == 0 || k == c.n {
                        p(k);
                    }
                }
                r
            })
            .collect()
    });
    Ok(summarize(c, &golden, &universe, records))
}

pub fn run_campaign(model: &CycleModel, c: &Campaign) -> Result<CampaignReport> {
    run_campaign_with(model, c, 0, None)
}

fn summarize(c: &Campaign, g: &GoldenRun, universe: &[(FaultSite, u32)], records: Vec<OutcomeRecord>) -> CampaignReport {
    let mut counts = Histogram::default();
    let mut per: BTreeMap<&'static str, (u64, Histogram)> = BTreeMap::new();
    for &(s, bits) in universe {
        per.entry(s.class()).or_default().0 += bits as u64;
    }
    for r in &records {
        counts.add(r.outcome);
        per.entry(r.spec.site.class()).or_default().1.add(r.outcome);
    }
    CampaignReport {
        mode: c.mode,
        filter: c.filter,
        seed: c.seed,
        injections: records.len(),
        cycles: g.cycles,
        universe_bits: universe.iter().map(|s| s.1 as u64).sum(),
        counts,
        percentages: counts.percentages(),
        per_site: per.into_iter().map(|(site, (bits, counts))| SiteBreakdown { site: site.into(), bits, counts }).collect(),
        records,
    }
}
