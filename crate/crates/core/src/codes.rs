//! Packed storage for matrices of binary codes.
//!
//! A [`CodeMatrix`] holds `n` codes of `bits` entries each. Entries are the
//! signs `-1`/`+1`; internally `+1` is stored as a set bit. Bit `i` of a code
//! lives in word `i / 64` at position `i % 64`, so the little-endian byte view
//! of a code places bit `i` at byte `i / 8`, bit `i % 8`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sign with the toolkit-wide tie rule `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodeMatrix {
    bits: usize,
    len: usize,
    words_per_code: usize,
    words: Vec<u64>,
}

impl CodeMatrix {
    /// All-`-1` matrix with `len` codes of `bits` entries.
    pub fn new(bits: usize, len: usize) -> Self {
        let words_per_code = bits.div_ceil(64);
        Self {
            bits,
            len,
            words_per_code,
            words: vec![0; words_per_code * len],
        }
    }

    /// Thresholds a real `bits × len` matrix column by column.
    pub fn from_real(values: &DMatrix<f64>) -> Self {
        let mut out = Self::new(values.nrows(), values.ncols());
        for (j, col) in values.column_iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                if sign(v) > 0 {
                    out.set_bit(i, j, true);
                }
            }
        }
        out
    }

    /// Builds from explicit sign columns. Any entry other than `-1` or `+1`
    /// is rejected.
    pub fn from_sign_columns<C: AsRef<[i8]>>(bits: usize, columns: &[C]) -> Result<Self> {
        let mut out = Self::new(bits, columns.len());
        for (j, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            if col.len() != bits {
                return Err(Error::Shape(format!(
                    "code column {j} has {} entries, expected {bits}",
                    col.len()
                )));
            }
            for (i, &s) in col.iter().enumerate() {
                match s {
                    1 => out.set_bit(i, j, true),
                    -1 => {}
                    other => {
                        return Err(Error::Invalid(format!(
                            "code entry ({i}, {j}) is {other}, expected -1 or +1"
                        )))
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    #[inline]
    fn set_bit(&mut self, i: usize, j: usize, on: bool) {
        let w = j * self.words_per_code + i / 64;
        let mask = 1u64 << (i % 64);
        if on {
            self.words[w] |= mask;
        } else {
            self.words[w] &= !mask;
        }
    }

    /// Sign at entry `(i, j)`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i8 {
        assert!(i < self.bits && j < self.len, "code index out of range");
        let w = self.words[j * self.words_per_code + i / 64];
        if (w >> (i % 64)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: i8) {
        assert!(i < self.bits && j < self.len, "code index out of range");
        self.set_bit(i, j, value > 0);
    }

    /// Packed words of code `j`.
    #[inline]
    pub fn code(&self, j: usize) -> &[u64] {
        let start = j * self.words_per_code;
        &self.words[start..start + self.words_per_code]
    }

    pub fn column_signs(&self, j: usize) -> Vec<i8> {
        (0..self.bits).map(|i| self.get(i, j)).collect()
    }

    /// Dense `bits × len` matrix of `±1.0`.
    pub fn to_real(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.bits, self.len, |i, j| f64::from(self.get(i, j)))
    }

    /// Hamming distance between code `j` of `self` and code `k` of `other`.
    #[inline]
    pub fn hamming(&self, j: usize, other: &CodeMatrix, k: usize) -> u32 {
        debug_assert_eq!(self.bits, other.bits);
        hamming_words(self.code(j), other.code(k))
    }

    /// New matrix made of the selected codes, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.bits, indices.len());
        for (dst, &src) in indices.iter().enumerate() {
            let from = src * self.words_per_code;
            let to = dst * self.words_per_code;
            out.words[to..to + self.words_per_code]
                .copy_from_slice(&self.words[from..from + self.words_per_code]);
        }
        out
    }

    /// Appends all codes of `other` after the codes of `self`.
    pub fn extend(&mut self, other: &CodeMatrix) -> Result<()> {
        if other.bits != self.bits {
            return Err(Error::Shape(format!(
                "cannot append {}-bit codes to {}-bit codes",
                other.bits, self.bits
            )));
        }
        self.words.extend_from_slice(&other.words);
        self.len += other.len;
        Ok(())
    }

    /// Little-endian packed bytes of code `j`: `ceil(bits / 8)` bytes with
    /// bit `i` at byte `i / 8`, bit `i % 8`.
    pub fn code_bytes(&self, j: usize) -> Vec<u8> {
        let nbytes = self.bits.div_ceil(8);
        self.code(j)
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(nbytes)
            .collect()
    }

    /// Inverse of [`code_bytes`](Self::code_bytes) for every column.
    /// Padding bits beyond `bits` must be zero.
    pub fn from_packed_bytes(bits: usize, len: usize, bytes: &[u8]) -> Result<Self> {
        let nbytes = bits.div_ceil(8);
        if bytes.len() != nbytes * len {
            return Err(Error::Corrupt(format!(
                "packed code payload has {} bytes, expected {}",
                bytes.len(),
                nbytes * len
            )));
        }
        let mut out = Self::new(bits, len);
        for j in 0..len {
            let chunk = &bytes[j * nbytes..(j + 1) * nbytes];
            for (b, &byte) in chunk.iter().enumerate() {
                let w = j * out.words_per_code + b / 8;
                out.words[w] |= u64::from(byte) << (8 * (b % 8));
            }
            if !bits.is_multiple_of(8) {
                let pad = chunk[nbytes - 1] >> (bits % 8);
                if pad != 0 {
                    return Err(Error::Corrupt(format!("nonzero padding bits in code {j}")));
                }
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}
