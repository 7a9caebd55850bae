use std::path::{Path, PathBuf};

use hmrsim::accel::default_quant;
use hmrsim::fault::{FaultSpec, SiteFilter, DEFAULT_INJECTIONS};
use hmrsim::golden::{Kernel, LayerJob, Mode, QuantParams};
use hmrsim::perf::{CycleModel, DEFAULT_F_CLK};
use serde::{Deserialize, Serialize};

/// Problems with the configuration; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Which modes to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSel {
    Baseline,
    Performance,
    Redundancy,
    All,
}

impl ModeSel {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeSel::Baseline => vec![Mode::Baseline4x4],
            ModeSel::Performance => vec![Mode::Performance],
            ModeSel::Redundancy => vec![Mode::Redundancy],
            ModeSel::All => Mode::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub kernel: Kernel,
    pub k_i: usize,
    pub k_o: usize,
    pub h_o: usize,
    pub w_o: usize,
    #[serde(default = "default_qw")]
    pub qw: u8,
    /// Requantization; a per-kernel default is derived when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantParams>,
}

fn default_qw() -> u8 {
    8
}

impl Default for JobSpec {
    fn default() -> Self {
        JobSpec { kernel: Kernel::Pointwise1x1, k_i: 64, k_o: 64, h_o: 8, w_o: 8, qw: 8, quant: None }
    }
}

impl JobSpec {
    pub fn layer(&self, mode: Mode) -> anyhow::Result<LayerJob> {
        let quant = self.quant.clone().unwrap_or_else(|| default_quant(self.kernel, self.k_i, self.k_o, self.qw));
        let job = LayerJob::new(self.kernel, [self.k_i, self.k_o, self.h_o, self.w_o], self.qw, mode, quant);
        job.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(job)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFiles {
    pub acts: PathBuf,
    pub weights: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignCfg {
    pub n: usize,
    pub filter: SiteFilter,
    /// Also write one CSV line per injection.
    pub log: bool,
}

impl Default for CampaignCfg {
    fn default() -> Self {
        CampaignCfg { n: DEFAULT_INJECTIONS, filter: SiteFilter::All, log: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepCfg {
    /// Channels of the single-fault overhead sweep.
    pub overhead_k_i: usize,
    pub overhead_k_o: usize,
    /// Inclusive spatial range, square layers.
    pub overhead_hw: [usize; 2],
    /// Layer of the fault-rate sweep.
    pub degradation_job: JobSpec,
    /// Inclusive rate range in faults per second, log-spaced.
    pub rate_range: [f64; 2],
    pub points_per_decade: usize,
    /// Monte-Carlo trials per rate; 0 skips the cross-check.
    pub trials: usize,
}

impl Default for SweepCfg {
    fn default() -> Self {
        SweepCfg {
            overhead_k_i: 64,
            overhead_k_o: 64,
            overhead_hw: [8, 28],
            degradation_job: JobSpec { k_i: 256, k_o: 256, h_o: 28, w_o: 28, ..JobSpec::default() },
            rate_range: [1e1, 1e8],
            points_per_decade: 4,
            trials: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub job: JobSpec,
    pub mode: ModeSel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub model: CycleModel,
    pub f_clk: f64,
    /// Tensor files; inputs are generated from the seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<InputFiles>,
    pub output_dir: PathBuf,
    /// A single fault to inject into `run`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inject: Option<FaultSpec>,
    pub campaign: CampaignCfg,
    pub sweep: SweepCfg,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            job: JobSpec::default(),
            mode: ModeSel::Redundancy,
            seed: None,
            model: CycleModel::default(),
            f_clk: DEFAULT_F_CLK,
            input: None,
            output_dir: PathBuf::from("hmrsim-out"),
            inject: None,
            campaign: CampaignCfg::default(),
            sweep: SweepCfg::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let cfg: Config = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Everything that can be checked before a simulation starts.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate().map_err(|e| config_error(e.to_string()))?;
        if !(self.f_clk > 0.0 && self.f_clk.is_finite()) {
            return Err(config_error("f_clk must be a positive frequency"));
        }
        for mode in self.mode.modes() {
            let job = self.job.layer(mode)?;
            if !hmrsim::layout::fits(&job) {
                return Err(config_error("job does not fit in the scratchpad"));
            }
        }
        let s = &self.sweep;
        if s.overhead_hw[0] == 0 || s.overhead_hw[0] > s.overhead_hw[1] {
            return Err(config_error("sweep.overhead_hw must be a non-empty range of positive sizes"));
        }
        let [lo, hi] = s.rate_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || s.points_per_decade == 0 {
            return Err(config_error("sweep.rate_range must be positive and increasing"));
        }
        s.degradation_job.layer(Mode::Redundancy)?;
        if self.campaign.n == 0 {
            return Err(config_error("campaign.n must be positive"));
        }
        Ok(())
    }
}
