use serde::{Deserialize, Serialize};

use crate::controller::{CtrlState, RegFile, ULoop};
use crate::ecc::{CHECK_BITS, METADATA_BITS, PAYLOAD_BITS};
use crate::engine::{IN_BUF_BYTES, OUT_BUF_BYTES, PES, PIXEL_WORDS};
use crate::golden::Mode;
use crate::memory::BEAT_WORDS;
use crate::perf::{CHANNELS, QUANT_WORDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Bit flip in a storage element; persists until overwritten.
    Seu,
    /// Glitch on a combinational output, sampled for one cycle.
    Set,
}

/// Every addressable piece of architectural state, plus the combinational
/// outputs that can be hit by a transient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "site", rename_all = "snake_case")]
pub enum FaultSite {
    TcdmCell { word: u32 },
    StreamerBeat,
    InputBuffer { half: u8 },
    ShadowInputDelay,
    ShadowWeightDelay,
    OutputBuffer { half: u8 },
    Accumulator { pe: u8 },
    RequantRegister { half: u8 },
    FsmRegister { replica: u8 },
    MicroLoop { replica: u8, id: u8 },
    RegisterFile { replica: u8 },
    CheckerComparator,
    VoterOutput,
    EccEncoderOutput,
    EccDecoderOutput,
    MacResult { pe: u8 },
}

/// Payload plus metadata bits of the streamer beat register.
pub fn beat_bits(hardened: bool) -> u32 {
    if hardened {
        (BEAT_WORDS * (PAYLOAD_BITS + CHECK_BITS) + METADATA_BITS + CHECK_BITS) as u32
    } else {
        (BEAT_WORDS * PAYLOAD_BITS + METADATA_BITS) as u32
    }
}

impl FaultSite {
    pub fn kind(&self) -> FaultKind {
        match self {
            FaultSite::CheckerComparator
            | FaultSite::VoterOutput
            | FaultSite::EccEncoderOutput
            | FaultSite::EccDecoderOutput
            | FaultSite::MacResult { .. } => FaultKind::Set,
            _ => FaultKind::Seu,
        }
    }

    /// Width in bits on hardware built for `mode`.
    pub fn bits(&self, mode: Mode) -> u32 {
        match self {
            FaultSite::TcdmCell { .. } => (PAYLOAD_BITS + CHECK_BITS) as u32,
            FaultSite::StreamerBeat => beat_bits(mode.hardened()),
            FaultSite::InputBuffer { .. } => 8 * IN_BUF_BYTES as u32,
            FaultSite::ShadowInputDelay => 32 * PIXEL_WORDS as u32 + 1,
            FaultSite::ShadowWeightDelay => 32 * BEAT_WORDS as u32 + 1,
            FaultSite::OutputBuffer { .. } => 8 * OUT_BUF_BYTES as u32,
            FaultSite::Accumulator { .. } | FaultSite::MacResult { .. } => 32 * CHANNELS as u32,
            FaultSite::RequantRegister { .. } => 32 * QUANT_WORDS as u32,
            FaultSite::FsmRegister { .. } => CtrlState::FSM_BITS,
            FaultSite::MicroLoop { .. } => ULoop::BITS,
            FaultSite::RegisterFile { .. } => RegFile::BITS,
            FaultSite::CheckerComparator => 1,
            FaultSite::VoterOutput => CtrlState::BITS,
            FaultSite::EccEncoderOutput => (BEAT_WORDS * (PAYLOAD_BITS + CHECK_BITS)) as u32,
            FaultSite::EccDecoderOutput => (BEAT_WORDS * PAYLOAD_BITS) as u32,
        }
    }

    pub fn is_controller(&self) -> bool {
        matches!(self, FaultSite::FsmRegister { .. } | FaultSite::MicroLoop { .. } | FaultSite::RegisterFile { .. })
    }

    /// Sites whose single faults the redundancy scheme cannot catch. The
    /// main output buffer only counts while it drains, after the check.
    pub fn is_spof(&self) -> bool {
        matches!(
            self,
            FaultSite::CheckerComparator | FaultSite::VoterOutput | FaultSite::EccEncoderOutput | FaultSite::EccDecoderOutput
        )
    }

    pub fn name(&self) -> String {
        match self {
            FaultSite::TcdmCell { word } => format!("tcdm[{word}]"),
            FaultSite::StreamerBeat => "streamer_beat".into(),
            FaultSite::InputBuffer { half } => format!("input_buffer[{half}]"),
            FaultSite::ShadowInputDelay => "shadow_input_delay".into(),
            FaultSite::ShadowWeightDelay => "shadow_weight_delay".into(),
            FaultSite::OutputBuffer { half } => format!("output_buffer[{half}]"),
            FaultSite::Accumulator { pe } => format!("accumulator[{pe}]"),
            FaultSite::RequantRegister { half } => format!("requant[{half}]"),
            FaultSite::FsmRegister { replica } => format!("fsm[{replica}]"),
            FaultSite::MicroLoop { replica, id } => format!("uloop{id}[{replica}]"),
            FaultSite::RegisterFile { replica } => format!("regfile[{replica}]"),
            FaultSite::CheckerComparator => "checker".into(),
            FaultSite::VoterOutput => "voter".into(),
            FaultSite::EccEncoderOutput => "ecc_encoder".into(),
            FaultSite::EccDecoderOutput => "ecc_decoder".into(),
            FaultSite::MacResult { pe } => format!("mac[{pe}]"),
        }
    }

    /// Site category without indices, for per-site breakdowns.
    pub fn class(&self) -> &'static str {
        match self {
            FaultSite::TcdmCell { .. } => "tcdm",
            FaultSite::StreamerBeat => "streamer_beat",
            FaultSite::InputBuffer { .. } => "input_buffer",
            FaultSite::ShadowInputDelay => "shadow_input_delay",
            FaultSite::ShadowWeightDelay => "shadow_weight_delay",
            FaultSite::OutputBuffer { .. } => "output_buffer",
            FaultSite::Accumulator { .. } => "accumulator",
            FaultSite::RequantRegister { .. } => "requant",
            FaultSite::FsmRegister { .. } => "fsm",
            FaultSite::MicroLoop { .. } => "uloop",
            FaultSite::RegisterFile { .. } => "regfile",
            FaultSite::CheckerComparator => "checker",
            FaultSite::VoterOutput => "voter",
            FaultSite::EccEncoderOutput => "ecc_encoder",
            FaultSite::EccDecoderOutput => "ecc_decoder",
            FaultSite::MacResult { .. } => "mac",
        }
    }
}

/// Which part of the universe to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteFilter {
    /// Everything, with scratchpad cells limited to the job's footprint.
    All,
    /// Accelerator state only; the scratchpad is left out.
    Accelerator,
    /// FSM, μloop and register-file replicas.
    Controller,
    /// Accelerator state outside the single points of failure. The main
    /// output buffer is left out since it drains after the check.
    Datapath,
}

/// The fault universe of hardware built for `mode`, in a fixed order.
/// `tcdm_words` lists the scratchpad words in scope for [`SiteFilter::All`].
pub fn enumerate_sites(mode: Mode, filter: SiteFilter, tcdm_words: std::ops::Range<u32>) -> Vec<(FaultSite, u32)> {
    let hardened = mode.hardened();
    let replicas: u8 = if hardened { 3 } else { 1 };
    let halves: u8 = if hardened { 2 } else { 1 };
    let mut v = Vec::new();
    if filter == SiteFilter::All {
        v.extend(tcdm_words.map(|word| FaultSite::TcdmCell { word }));
    }
    if filter != SiteFilter::Controller {
        v.push(FaultSite::StreamerBeat);
        v.extend((0..halves).map(|half| FaultSite::InputBuffer { half }));
        if hardened {
            v.push(FaultSite::ShadowInputDelay);
            v.push(FaultSite::ShadowWeightDelay);
        }
        let first = if filter == SiteFilter::Datapath && hardened { 1 } else { 0 };
        v.extend((first..2).map(|half| FaultSite::OutputBuffer { half }));
        v.extend((0..PES as u8).map(|pe| FaultSite::Accumulator { pe }));
        v.extend((0..halves).map(|half| FaultSite::RequantRegister { half }));
    }
    for replica in 0..replicas {
        v.push(FaultSite::FsmRegister { replica });
        for id in 0..if hardened { 2 } else { 1 } {
            v.push(FaultSite::MicroLoop { replica, id });
        }
        v.push(FaultSite::RegisterFile { replica });
    }
    if filter != SiteFilter::Controller {
        if hardened && filter != SiteFilter::Datapath {
            v.push(FaultSite::CheckerComparator);
            v.push(FaultSite::VoterOutput);
            v.push(FaultSite::EccEncoderOutput);
            v.push(FaultSite::EccDecoderOutput);
        }
        v.extend((0..PES as u8).map(|pe| FaultSite::MacResult { pe }));
    }
    v.into_iter().map(|s| (s, s.bits(mode))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn controller_filter_is_a_subset() {
        for mode in Mode::ALL {
            let all = enumerate_sites(mode, SiteFilter::All, 0..16);
            let ctrl = enumerate_sites(mode, SiteFilter::Controller, 0..16);
            assert!(ctrl.iter().all(|s| s.0.is_controller()));
            assert!(ctrl.iter().all(|s| all.contains(s)));
        }
        assert_eq!(enumerate_sites(Mode::Redundancy, SiteFilter::Controller, 0..0).len(), 3 * 4);
        assert_eq!(enumerate_sites(Mode::Baseline4x4, SiteFilter::Controller, 0..0).len(), 3);
    }

    #[test]
    fn bit_totals_match_field_widths() {
        let total = |mode| enumerate_sites(mode, SiteFilter::Accelerator, 0..0).iter().map(|s| s.1 as u64).sum::<u64>();
        // beat, 2 input buffers, 2 delay registers, 2 output buffers,
        // 16 accumulators, 2 requant banks, 3 x (fsm + 2 uloops + regs),
        // checker, voter, encoder, decoder, 16 MACs
        let hardened = 395 + 2 * 9216 + 257 + 289 + 2 * 2048 + 16 * 1024 + 2 * 2048 + 3 * (20 + 2 * 161 + 237) + 1 + 579 + 351 + 288 + 16 * 1024;
        assert_eq!(total(Mode::Redundancy), hardened);
        let baseline = 325 + 9216 + 2 * 2048 + 16 * 1024 + 2048 + (20 + 161 + 237) + 16 * 1024;
        assert_eq!(total(Mode::Baseline4x4), baseline);
    }

    #[test]
    fn transients_are_combinational() {
        for (s, _) in enumerate_sites(Mode::Redundancy, SiteFilter::Accelerator, 0..0) {
            assert_eq!(s.kind() == FaultKind::Set, s.is_spof() || matches!(s, FaultSite::MacResult { .. }));
        }
    }
}
