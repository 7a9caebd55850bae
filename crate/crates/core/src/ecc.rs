//! Hsiao single-error-correct, double-error-detect codes.
//!
//! Two codes are used: (39,32) for payload words and (44,37) for transaction
//! metadata. Both have seven check bits. The parity-check matrix is built
//! deterministically: check-bit columns are the seven unit vectors, data
//! columns are the lexicographically first weight-3 row combinations,
//! continuing with weight-5 combinations once the 35 weight-3 ones run out.
//!
//! Codeword bit layout: data in bits `0..data_bits`, check bits above.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub const CHECK_BITS: usize = 7;
pub const PAYLOAD_BITS: usize = 32;
pub const METADATA_BITS: usize = 37;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecodeStatus {
    NoError,
    /// A single flipped bit at this codeword position was repaired.
    Corrected(u8),
    DetectedUncorrectable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Codeword(pub u64);

#[derive(Clone, Debug)]
pub struct HsiaoCode {
    data_bits: usize,
    data_cols: Vec<u8>,
    /// syndrome -> codeword bit index, or -1.
    syndrome_pos: [i8; 128],
    /// Per-byte partial check bits, for fast encoding.
    byte_tables: Vec<[u8; 256]>,
}

fn combinations(n: usize, k: usize) -> Vec<u8> {
    fn rec(start: usize, n: usize, k: usize, acc: u8, out: &mut Vec<u8>) {
        if k == 0 {
            out.push(acc);
            return;
        }
        for i in start..n {
            rec(i + 1, n, k - 1, acc | (1 << i), out);
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, 0, &mut out);
    out
}

impl HsiaoCode {
    /// Builds the code for 32 or 37 data bits.
    pub fn build(data_bits: usize) -> HsiaoCode {
        assert!(
            data_bits == PAYLOAD_BITS || data_bits == METADATA_BITS,
            "only (39,32) and (44,37) codes are defined"
        );
        let data_cols: Vec<u8> = combinations(CHECK_BITS, 3)
            .into_iter()
            .chain(combinations(CHECK_BITS, 5))
            .take(data_bits)
            .collect();

        let mut syndrome_pos = [-1i8; 128];
        for (i, &c) in data_cols.iter().enumerate() {
            syndrome_pos[c as usize] = i as i8;
        }
        for j in 0..CHECK_BITS {
            syndrome_pos[1 << j] = (data_bits + j) as i8;
        }

        let byte_tables = (0..data_bits.div_ceil(8))
            .map(|b| {
                let mut t = [0u8; 256];
                for (v, slot) in t.iter_mut().enumerate() {
                    for bit in 0..8 {
                        let i = b * 8 + bit;
                        if v >> bit & 1 == 1 && i < data_bits {
                            *slot ^= data_cols[i];
                        }
                    }
                }
                t
            })
            .collect();

        HsiaoCode { data_bits, data_cols, syndrome_pos, byte_tables }
    }

    pub fn data_bits(&self) -> usize {
        self.data_bits
    }

    pub fn codeword_bits(&self) -> usize {
        self.data_bits + CHECK_BITS
    }

    pub fn data_mask(&self) -> u64 {
        (1u64 << self.data_bits) - 1
    }

    /// Column `i` of H as a 7-bit vector (bit r = row r).
    pub fn column(&self, i: usize) -> u8 {
        if i < self.data_bits {
            self.data_cols[i]
        } else {
            1 << (i - self.data_bits)
        }
    }

    #[inline]
    pub fn check_bits(&self, data: u64) -> u8 {
        let mut c = 0;
        for (b, t) in self.byte_tables.iter().enumerate() {
            c ^= t[(data >> (8 * b)) as usize & 0xff];
        }
        c
    }

    #[inline]
    pub fn encode(&self, data: u64) -> Codeword {
        debug_assert_eq!(data & !self.data_mask(), 0, "data wider than the code");
        let data = data & self.data_mask();
        Codeword(data | (self.check_bits(data) as u64) << self.data_bits)
    }

    #[inline]
    pub fn syndrome(&self, word: Codeword) -> u8 {
        let data = word.0 & self.data_mask();
        let stored = (word.0 >> self.data_bits) as u8 & 0x7f;
        stored ^ self.check_bits(data)
    }

    #[inline]
    pub fn decode(&self, word: Codeword) -> (u64, DecodeStatus) {
        let s = self.syndrome(word);
        let data = word.0 & self.data_mask();
        if s == 0 {
            return (data, DecodeStatus::NoError);
        }
        match self.syndrome_pos[s as usize] {
            -1 => (data, DecodeStatus::DetectedUncorrectable),
            pos => {
                let fixed = (word.0 ^ (1u64 << pos)) & self.data_mask();
                (fixed, DecodeStatus::Corrected(pos as u8))
            }
        }
    }

    /// Human-readable H matrix, one row per check bit, columns in codeword
    /// bit order.
    pub fn hmatrix_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Hsiao ({},{}) parity-check matrix", self.codeword_bits(), self.data_bits);
        for r in 0..CHECK_BITS {
            for i in 0..self.codeword_bits() {
                s.push(if self.column(i) >> r & 1 == 1 { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }
}

pub fn payload_code() -> &'static HsiaoCode {
    static CODE: OnceLock<HsiaoCode> = OnceLock::new();
    CODE.get_or_init(|| HsiaoCode::build(PAYLOAD_BITS))
}

pub fn metadata_code() -> &'static HsiaoCode {
    static CODE: OnceLock<HsiaoCode> = OnceLock::new();
    CODE.get_or_init(|| HsiaoCode::build(METADATA_BITS))
}

/// Decodes a stored word and writes back the repaired codeword if a single
/// error was found. Uncorrectable words are left untouched.
pub fn scrub_word(code: &HsiaoCode, word: &mut u64) -> DecodeStatus {
    let (data, status) = code.decode(Codeword(*word));
    if let DecodeStatus::Corrected(_) = status {
        *word = code.encode(data).0;
    }
    status
}

/// Metadata word packing: address in bits 0..32, byte enable in 32..36,
/// write enable in bit 36.
pub fn pack_metadata(addr: u32, be: u8, we: bool) -> u64 {
    addr as u64 | ((be & 0xf) as u64) << 32 | (we as u64) << 36
}

pub fn unpack_metadata(word: u64) -> (u32, u8, bool) {
    (word as u32, (word >> 32) as u8 & 0xf, word >> 36 & 1 == 1)
}
