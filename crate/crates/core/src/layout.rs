//! Placement of a job's tensors in the scratchpad.
//!
//! Activations and outputs are HWC with channels padded to 32. Weights are
//! stored as bit-planes in the order the MM phase streams them: per
//! (output block, input block), plane 0 (LSB) first; each plane word holds
//! one (tap, input channel) pair's 32 output-channel bits. Depthwise planes
//! have one word per tap whose bit `c` belongs to channel `c`.

use crate::error::{config, Result};
use crate::golden::{Kernel, LayerJob, TensorBuf};
use crate::memory::{Tcdm, CAPACITY_BYTES};
use crate::perf::{plane_shape, Geometry, CHANNELS, QUANT_WORDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JobLayout {
    pub act_base: u32,
    pub wgt_base: u32,
    pub quant_base: u32,
    pub out_base: u32,
    pub end: u32,
    pub cin_pad: usize,
    pub cout_pad: usize,
    /// Words per weight bit-plane.
    pub plane_words: usize,
}

impl JobLayout {
    pub fn plan(job: &LayerJob) -> Result<JobLayout> {
        job.validate()?;
        let g = Geometry::of(job, job.mode);
        let (plane_words, _) = plane_shape(job.kernel);
        let act_bytes = job.h_o * job.w_o * g.cin_pad;
        let wgt_bytes = g.n_ko * g.n_ic * job.qw as usize * plane_words * 4;
        let quant_bytes = g.n_ko * QUANT_WORDS * 4;
        let out_bytes = job.h_o * job.w_o * g.cout_pad;
        let act_base = 0usize;
        let wgt_base = act_base + act_bytes;
        let quant_base = wgt_base + wgt_bytes;
        let out_base = quant_base + quant_bytes;
        let end = out_base + out_bytes;
        if end > CAPACITY_BYTES {
            return Err(config(format!("job needs {end} bytes of scratchpad, only {CAPACITY_BYTES} available")));
        }
        Ok(JobLayout {
            act_base: act_base as u32,
            wgt_base: wgt_base as u32,
            quant_base: quant_base as u32,
            out_base: out_base as u32,
            end: end as u32,
            cin_pad: g.cin_pad,
            cout_pad: g.cout_pad,
            plane_words,
        })
    }

    pub fn block_words(&self, qw: u8) -> usize {
        qw as usize * self.plane_words
    }

    /// Byte range of the output tensor.
    pub fn output_range(&self) -> std::ops::Range<u32> {
        self.out_base..self.end
    }
}

/// Whether a job fits in the scratchpad.
pub fn fits(job: &LayerJob) -> bool {
    JobLayout::plan(job).is_ok()
}

pub fn pack_weights(job: &LayerJob, weights: &TensorBuf<i8>) -> Result<Vec<u32>> {
    job.validate()?;
    if weights.dims() != job.weight_dims() {
        return Err(config("weight tensor does not match job"));
    }
    let (lo, hi) = job.weight_range();
    if let Some(v) = weights.data.iter().find(|&&v| v < lo || v > hi) {
        return Err(config(format!("weight {v} does not fit in {} bits", job.qw)));
    }
    let g = Geometry::of(job, job.mode);
    let (plane_words, _) = plane_shape(job.kernel);
    let qw = job.qw as usize;
    let mut out = vec![0u32; g.n_ko * g.n_ic * qw * plane_words];
    let mut block = 0;
    for kb in 0..g.n_ko {
        for ib in 0..g.n_ic {
            for b in 0..qw {
                let base = (block * qw + b) * plane_words;
                for w in 0..plane_words {
                    let mut word = 0u32;
                    for lane in 0..CHANNELS {
                        let v = match job.kernel {
                            Kernel::Depthwise3x3 => {
                                let ko = kb * CHANNELS + lane;
                                if ko < job.k_o { weights.at(ko, w, 0) } else { 0 }
                            }
                            _ => {
                                let (tap, ki) = (w / CHANNELS, ib * CHANNELS + w % CHANNELS);
                                let ko = kb * CHANNELS + lane;
                                if ko < job.k_o && ki < job.k_i { weights.at(ko, tap, ki) } else { 0 }
                            }
                        };
                        word |= (((v as u8) >> b) as u32 & 1) << lane;
                    }
                    out[base + w] = word;
                }
            }
            block += 1;
        }
    }
    Ok(out)
}

pub fn unpack_weights(job: &LayerJob, packed: &[u32]) -> Result<TensorBuf<i8>> {
    let g = Geometry::of(job, job.mode);
    let (plane_words, _) = plane_shape(job.kernel);
    let qw = job.qw as usize;
    if packed.len() != g.n_ko * g.n_ic * qw * plane_words {
        return Err(config("packed weight stream has the wrong length"));
    }
    let (h, w, c) = job.weight_dims();
    let mut t = TensorBuf::<i8>::zeros(h, w, c);
    for ko in 0..job.k_o {
        let (kb, lane) = (ko / CHANNELS, ko % CHANNELS);
        for tap in 0..w {
            for ci in 0..c {
                let (ib, word) = match job.kernel {
                    Kernel::Depthwise3x3 => (0, tap),
                    _ => (ci / CHANNELS, tap * CHANNELS + ci % CHANNELS),
                };
                let block = kb * g.n_ic + ib;
                let mut raw = 0u32;
                for b in 0..qw {
                    raw |= (packed[(block * qw + b) * plane_words + word] >> lane & 1) << b;
                }
                // sign-extend from qw bits
                let shift = 32 - qw as u32;
                let i = t.idx(ko, tap, ci);
                t.data[i] = ((raw << shift) as i32 >> shift) as i8;
            }
        }
    }
    Ok(t)
}

fn write_hwc(tcdm: &mut Tcdm, base: u32, t: &TensorBuf<i8>, c_pad: usize) -> Result<()> {
    let mut bytes = vec![0u8; t.h * t.w * c_pad];
    for p in 0..t.h * t.w {
        for ch in 0..t.c {
            bytes[p * c_pad + ch] = t.data[p * t.c + ch] as u8;
        }
    }
    tcdm.write_bytes(base, &bytes)
}

/// Writes activations, packed weights and the requantization table.
pub fn stage_job(tcdm: &mut Tcdm, job: &LayerJob, layout: &JobLayout, acts: &TensorBuf<i8>, weights: &TensorBuf<i8>) -> Result<()> {
    if acts.dims() != job.input_dims() {
        return Err(config("activation tensor does not match job"));
    }
    write_hwc(tcdm, layout.act_base, acts, layout.cin_pad)?;
    for (i, w) in pack_weights(job, weights)?.into_iter().enumerate() {
        tcdm.write_word(layout.wgt_base + 4 * i as u32, w)?;
    }
    let n_ko = layout.cout_pad / CHANNELS;
    for kb in 0..n_ko {
        let base = layout.quant_base + (kb * QUANT_WORDS * 4) as u32;
        for lane in 0..CHANNELS {
            let ko = kb * CHANNELS + lane;
            let (s, b) = if ko < job.k_o { (job.quant.scale[ko], job.quant.bias[ko]) } else { (0, 0) };
            tcdm.write_word(base + 4 * lane as u32, s as u32)?;
            tcdm.write_word(base + 4 * (CHANNELS + lane) as u32, b as u32)?;
        }
    }
    Ok(())
}

/// Decoded output tensor (valid channels only).
pub fn read_outputs(tcdm: &Tcdm, job: &LayerJob, layout: &JobLayout) -> Result<TensorBuf<i8>> {
    let bytes = tcdm.read_bytes(layout.out_base, (layout.end - layout.out_base) as usize)?;
    let mut t = TensorBuf::<i8>::zeros(job.h_o, job.w_o, job.k_o);
    for p in 0..job.h_o * job.w_o {
        for ch in 0..job.k_o {
            t.data[p * job.k_o + ch] = bytes[p * layout.cout_pad + ch] as i8;
        }
    }
    Ok(t)
}
