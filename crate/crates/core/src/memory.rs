//! The banked, ECC-protected scratchpad and the wide streamer port.
//!
//! 16 banks of 2048 words; each word is a (39,32) codeword. Words are
//! interleaved across banks: `bank = (addr >> 2) % 16`. Storage is split into
//! reference-counted pages so simulator snapshots are cheap to clone.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ecc::{self, metadata_code, payload_code, Codeword, DecodeStatus};
use crate::error::{Error, Result};

pub const BANKS: usize = 16;
pub const BANK_DEPTH: usize = 2048;
pub const WORDS: usize = BANKS * BANK_DEPTH;
pub const CAPACITY_BYTES: usize = WORDS * 4;
/// 32-bit chunks per streamer beat (288-bit port).
pub const BEAT_WORDS: usize = 9;
pub const BEAT_BYTES: usize = BEAT_WORDS * 4;

const PAGE: usize = 64;
const PAGES: usize = WORDS / PAGE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRegisters {
    pub corrected_payload: u64,
    pub corrected_metadata: u64,
    pub uncorrectable_payload: u64,
    pub uncorrectable_metadata: u64,
    pub last_error_addr: Option<u32>,
}

impl ErrorRegisters {
    pub fn corrected(&self) -> u64 {
        self.corrected_payload + self.corrected_metadata
    }

    pub fn uncorrectable(&self) -> u64 {
        self.uncorrectable_payload + self.uncorrectable_metadata
    }

    pub fn record_payload(&mut self, addr: u32, status: DecodeStatus) {
        match status {
            DecodeStatus::NoError => {}
            DecodeStatus::Corrected(_) => {
                self.corrected_payload += 1;
                self.last_error_addr = Some(addr);
            }
            DecodeStatus::DetectedUncorrectable => {
                self.uncorrectable_payload += 1;
                self.last_error_addr = Some(addr);
            }
        }
    }

    pub fn record_metadata(&mut self, addr: u32, status: DecodeStatus) {
        match status {
            DecodeStatus::NoError => {}
            DecodeStatus::Corrected(_) => {
                self.corrected_metadata += 1;
                self.last_error_addr = Some(addr);
            }
            DecodeStatus::DetectedUncorrectable => {
                self.uncorrectable_metadata += 1;
                self.last_error_addr = Some(addr);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Load,
    Store,
}

/// One beat on the wide port: up to nine payload codewords plus the
/// protected metadata word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamRequest {
    pub base: u32,
    pub n_chunks: usize,
    pub payload: [u64; BEAT_WORDS],
    pub metadata: u64,
    pub direction: Direction,
}

impl StreamRequest {
    pub fn store(base: u32, chunks: &[u32]) -> StreamRequest {
        assert!(chunks.len() <= BEAT_WORDS);
        let mut payload = [0u64; BEAT_WORDS];
        for (p, &c) in payload.iter_mut().zip(chunks) {
            *p = payload_code().encode(c as u64).0;
        }
        StreamRequest {
            base,
            n_chunks: chunks.len(),
            payload,
            metadata: metadata_code().encode(ecc::pack_metadata(base, 0xf, true)).0,
            direction: Direction::Store,
        }
    }

    /// Payload plus check bits carried on the port.
    pub const WIRE_BITS: usize = BEAT_WORDS * (ecc::PAYLOAD_BITS + ecc::CHECK_BITS);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadBeat {
    pub data: [u32; BEAT_WORDS],
    pub status: [DecodeStatus; BEAT_WORDS],
    pub n_chunks: usize,
    pub cycles: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreAck {
    Written { cycles: u64 },
    /// The metadata word could not be trusted; nothing was written.
    Dropped,
}

#[derive(Clone)]
pub struct Tcdm {
    pages: Vec<Arc<[u64; PAGE]>>,
    pub errors: ErrorRegisters,
}

impl Default for Tcdm {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Tcdm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tcdm").field("errors", &self.errors).finish_non_exhaustive()
    }
}

#[inline]
pub fn bank_of(word_index: usize) -> usize {
    word_index % BANKS
}

#[inline]
pub fn row_of(word_index: usize) -> usize {
    word_index / BANKS
}

fn check_range(addr: u32, n_words: usize) -> Result<usize> {
    if addr % 4 != 0 {
        return Err(Error::Misaligned { addr });
    }
    let end = addr as u64 + 4 * n_words as u64;
    if end > CAPACITY_BYTES as u64 {
        return Err(Error::OutOfRange { addr: addr as u64 });
    }
    Ok(addr as usize / 4)
}

impl Tcdm {
    pub fn new() -> Tcdm {
        let zero = Arc::new([0u64; PAGE]);
        Tcdm { pages: vec![zero; PAGES], errors: ErrorRegisters::default() }
    }

    #[inline]
    pub fn read_raw(&self, word_index: usize) -> u64 {
        self.pages[word_index / PAGE][word_index % PAGE]
    }

    #[inline]
    pub fn write_raw(&mut self, word_index: usize, codeword: u64) {
        Arc::make_mut(&mut self.pages[word_index / PAGE])[word_index % PAGE] = codeword;
    }

    pub fn flip_bit(&mut self, word_index: usize, bit: u32) {
        let w = self.read_raw(word_index);
        self.write_raw(word_index, w ^ 1 << bit);
    }

    /// Stored codeword by (bank, row).
    pub fn cell(&self, bank: usize, row: usize) -> u64 {
        self.read_raw(row * BANKS + bank)
    }

    /// Equality of stored bits, ignoring error counters.
    pub fn same_contents(&self, other: &Tcdm) -> bool {
        self.pages.iter().zip(&other.pages).all(|(a, b)| Arc::ptr_eq(a, b) || a[..] == b[..])
    }

    /// Word-index ranges whose stored bits differ.
    pub fn diff_words(&self, other: &Tcdm) -> Vec<usize> {
        let mut out = Vec::new();
        for (p, (a, b)) in self.pages.iter().zip(&other.pages).enumerate() {
            if Arc::ptr_eq(a, b) {
                continue;
            }
            for i in 0..PAGE {
                if a[i] != b[i] {
                    out.push(p * PAGE + i);
                }
            }
        }
        out
    }

    pub fn read_word(&mut self, addr: u32) -> Result<(u32, DecodeStatus)> {
        let idx = check_range(addr, 1)?;
        let (data, status) = payload_code().decode(Codeword(self.read_raw(idx)));
        self.errors.record_payload(addr, status);
        Ok((data as u32, status))
    }

    /// Decoded value without touching the error counters.
    pub fn peek_word(&self, addr: u32) -> Result<u32> {
        let idx = check_range(addr, 1)?;
        Ok(payload_code().decode(Codeword(self.read_raw(idx))).0 as u32)
    }

    pub fn write_word(&mut self, addr: u32, value: u32) -> Result<()> {
        let idx = check_range(addr, 1)?;
        self.write_raw(idx, payload_code().encode(value as u64).0);
        Ok(())
    }

    /// Sub-word write: read, merge enabled bytes, re-encode.
    pub fn write_word_masked(&mut self, addr: u32, value: u32, be: u8) -> Result<DecodeStatus> {
        if be & 0xf == 0xf {
            self.write_word(addr, value)?;
            return Ok(DecodeStatus::NoError);
        }
        let (old, status) = self.read_word(addr)?;
        let mut mask = 0u32;
        for b in 0..4 {
            if be >> b & 1 == 1 {
                mask |= 0xff << (8 * b);
            }
        }
        self.write_word(addr, (old & !mask) | (value & mask))?;
        Ok(status)
    }

    /// One beat from the wide port: up to nine consecutive words, each
    /// decoded and counted.
    pub fn stream_load(&mut self, addr: u32, n_chunks: usize) -> Result<LoadBeat> {
        assert!(n_chunks <= BEAT_WORDS, "a beat carries at most nine chunks");
        let idx = check_range(addr, n_chunks)?;
        let mut beat = LoadBeat {
            data: [0; BEAT_WORDS],
            status: [DecodeStatus::NoError; BEAT_WORDS],
            n_chunks,
            cycles: 1,
        };
        for i in 0..n_chunks {
            let (d, s) = payload_code().decode(Codeword(self.read_raw(idx + i)));
            self.errors.record_payload(addr + 4 * i as u32, s);
            beat.data[i] = d as u32;
            beat.status[i] = s;
        }
        Ok(beat)
    }

    pub fn stream_store(&mut self, addr: u32, chunks: &[u32]) -> Result<StoreAck> {
        self.stream_store_request(&StreamRequest::store(addr, chunks))
    }

    /// Applies a store beat as it arrives at the banks: metadata is decoded
    /// and corrected first, payload codewords are written as carried.
    pub fn stream_store_request(&mut self, req: &StreamRequest) -> Result<StoreAck> {
        let (meta, status) = metadata_code().decode(Codeword(req.metadata));
        let (addr, _be, we) = ecc::unpack_metadata(meta);
        self.errors.record_metadata(addr, status);
        if status == DecodeStatus::DetectedUncorrectable || !we {
            return Ok(StoreAck::Dropped);
        }
        let idx = check_range(addr, req.n_chunks)?;
        for i in 0..req.n_chunks {
            self.write_raw(idx + i, req.payload[i]);
        }
        Ok(StoreAck::Written { cycles: 1 })
    }

    /// Encodes metadata, applies an in-flight corruption mask, and decodes it
    /// as the bank-side decoder would.
    pub fn metadata_roundtrip(&mut self, addr: u32, be: u8, we: bool, corruption: u64) -> ((u32, u8, bool), DecodeStatus) {
        let code = metadata_code();
        let word = code.encode(ecc::pack_metadata(addr, be, we)).0 ^ corruption;
        let (meta, status) = code.decode(Codeword(word));
        self.errors.record_metadata(addr, status);
        (ecc::unpack_metadata(meta), status)
    }

    pub fn scrub_step(&mut self, bank: usize, index: usize) -> Result<DecodeStatus> {
        if bank >= BANKS || index >= BANK_DEPTH {
            return Err(Error::OutOfRange { addr: ((index * BANKS + bank) * 4) as u64 });
        }
        let w = index * BANKS + bank;
        let mut word = self.read_raw(w);
        let status = ecc::scrub_word(payload_code(), &mut word);
        if let DecodeStatus::Corrected(_) = status {
            self.write_raw(w, word);
        }
        self.errors.record_payload((w * 4) as u32, status);
        Ok(status)
    }

    /// Loads a raw 128 kB payload image, regenerating check bits.
    pub fn load_image(&mut self, image: &[u8]) -> Result<()> {
        if image.len() != CAPACITY_BYTES {
            return Err(Error::Format(format!("memory image must be {CAPACITY_BYTES} bytes, got {}", image.len())));
        }
        for (i, chunk) in image.chunks_exact(4).enumerate() {
            let v = u32::from_le_bytes(chunk.try_into().unwrap());
            self.write_raw(i, payload_code().encode(v as u64).0);
        }
        Ok(())
    }

    /// Decoded payload image (no counter side effects).
    pub fn dump_image(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CAPACITY_BYTES);
        for i in 0..WORDS {
            let (d, _) = payload_code().decode(Codeword(self.read_raw(i)));
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out
    }

    pub fn write_bytes(&mut self, addr: u32, bytes: &[u8]) -> Result<()> {
        assert!(bytes.len() % 4 == 0, "byte writes are whole words");
        check_range(addr, bytes.len() / 4)?;
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            self.write_word(addr + 4 * i as u32, u32::from_le_bytes(c.try_into().unwrap()))?;
        }
        Ok(())
    }

    pub fn read_bytes(&self, addr: u32, len: usize) -> Result<Vec<u8>> {
        assert!(len % 4 == 0);
        check_range(addr, len / 4)?;
        let mut out = Vec::with_capacity(len);
        for i in 0..len / 4 {
            out.extend_from_slice(&self.peek_word(addr + 4 * i as u32)?.to_le_bytes());
        }
        Ok(out)
    }
}

/// Walks every row of every bank, one row per `period` ticks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scrubber {
    pub period: u64,
    countdown: u64,
    row: usize,
}

impl Scrubber {
    pub fn new(period: u64) -> Scrubber {
        assert!(period > 0);
        Scrubber { period, countdown: period, row: 0 }
    }

    pub fn tick(&mut self, tcdm: &mut Tcdm) {
        self.countdown -= 1;
        if self.countdown > 0 {
            return;
        }
        self.countdown = self.period;
        for bank in 0..BANKS {
            let _ = tcdm.scrub_step(bank, self.row);
        }
        self.row = (self.row + 1) % BANK_DEPTH;
    }
}
