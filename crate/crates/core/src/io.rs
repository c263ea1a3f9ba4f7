//! On-disk formats.
//!
//! Every binary file starts with the magic bytes `AMFH`, a one-byte kind tag
//! and a little-endian `u16` version, and ends with a CRC-32 of all preceding
//! bytes. Integers are little-endian `u64`, reals little-endian `f64`.
//!
//! | kind | payload |
//! |------|---------|
//! | 1 features | rows, cols, row-major values |
//! | 2 codes | bits, count, `ceil(bits/8)` LSB-first bytes per code |
//! | 3 model | see [`model_to_bytes`] |
//! | 4 centers | count, bits, order, seed, method byte, packed codes |
//!
//! Feature files may also be CSV with one sample per row; a file not
//! starting with the magic bytes is read as CSV.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::centers::{CenterMethod, HashCenterTable};
use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::kernel::AnchorSet;
use crate::labels::LabelSet;
use crate::trainer::TrainedModel;

pub const MAGIC: &[u8; 4] = b"AMFH";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FileKind {
    Features = 1,
    Codes = 2,
    Model = 3,
    Centers = 4,
}

const HEADER_LEN: usize = 4 + 1 + 2;
const CHECKSUM_LEN: usize = 4;

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(kind: FileKind) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(kind as u8);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn matrix_row_major(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }

    fn codes(&mut self, codes: &CodeMatrix) {
        for j in 0..codes.len() {
            self.buf.extend_from_slice(&codes.code_bytes(j));
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Verifies magic, kind and checksum; positions after the header.
    fn open(bytes: &'a [u8], kind: FileKind) -> Result<Self> {
        if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
            return Err(Error::Corrupt(format!(
                "file too short ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("bad magic bytes".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        if body[4] != kind as u8 {
            return Err(Error::KindMismatch {
                expected: kind as u8,
                found: body[4],
            });
        }
        let version = u16::from_le_bytes([body[5], body[6]]);
        if version != VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported format version {version}"
            )));
        }
        Ok(Self {
            data: body,
            pos: HEADER_LEN,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Corrupt("unexpected end of payload".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::Invalid("size does not fit in memory".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn matrix_row_major(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let count = checked_area(rows, cols, 8)?;
        let bytes = self.take(count)?;
        Ok(DMatrix::from_row_iterator(
            rows,
            cols,
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
        ))
    }

    fn codes(&mut self, bits: usize, len: usize) -> Result<CodeMatrix> {
        let count = checked_area(bits.div_ceil(8), len, 1)?;
        CodeMatrix::from_packed_bytes(bits, len, self.take(count)?)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn checked_area(rows: usize, cols: usize, elem: usize) -> Result<usize> {
    rows.checked_mul(cols)
        .and_then(|v| v.checked_mul(elem))
        .ok_or_else(|| Error::Invalid(format!("shape {rows}x{cols} overflows")))
}

pub fn features_to_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut e = Encoder::new(FileKind::Features);
    e.usize(m.nrows());
    e.usize(m.ncols());
    e.matrix_row_major(m);
    e.finish()
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut d = Decoder::open(bytes, FileKind::Features)?;
    let rows = d.usize()?;
    let cols = d.usize()?;
    let m = d.matrix_row_major(rows, cols)?;
    d.finish()?;
    Ok(m)
}

/// Parses CSV with one sample per row into a `features × samples` matrix.
/// Lines starting with `#` are skipped.
pub fn features_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("csv record {line}: {e}")))?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("csv record {line}: {f:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(row);
    }
    let d = samples.first().map_or(0, Vec::len);
    if let Some((i, _)) = samples.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(Error::Parse(format!(
            "csv record {i} has a different field count"
        )));
    }
    Ok(DMatrix::from_fn(d, samples.len(), |i, j| samples[j][i]))
}

pub fn store_features(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, features_to_bytes(m))?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        features_from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Corrupt("neither an AMFH file nor UTF-8 CSV".into()))?;
        features_from_csv(&text)
    }
}

pub fn codes_to_bytes(codes: &CodeMatrix) -> Vec<u8> {
    let mut e = Encoder::new(FileKind::Codes);
    e.usize(codes.bits());
    e.usize(codes.len());
    e.codes(codes);
    e.finish()
}

pub fn codes_from_bytes(bytes: &[u8]) -> Result<CodeMatrix> {
    let mut d = Decoder::open(bytes, FileKind::Codes)?;
    let bits = d.usize()?;
    let len = d.usize()?;
    let codes = d.codes(bits, len)?;
    d.finish()?;
    Ok(codes)
}

pub fn store_codes(codes: &CodeMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, codes_to_bytes(codes))?;
    Ok(())
}

pub fn load_codes(path: impl AsRef<Path>) -> Result<CodeMatrix> {
    codes_from_bytes(&fs::read(path)?)
}

pub fn centers_to_bytes(table: &HashCenterTable) -> Vec<u8> {
    let mut e = Encoder::new(FileKind::Centers);
    e.usize(table.num_categories());
    e.usize(table.code_length());
    e.usize(table.order());
    e.u64(table.seed());
    e.u8(match table.method() {
        CenterMethod::Exact => 0,
        CenterMethod::Lsh => 1,
    });
    e.codes(table.centers());
    e.finish()
}

pub fn centers_from_bytes(bytes: &[u8]) -> Result<HashCenterTable> {
    let mut d = Decoder::open(bytes, FileKind::Centers)?;
    let k = d.usize()?;
    let r = d.usize()?;
    let order = d.usize()?;
    let seed = d.u64()?;
    let method = match d.u8()? {
        0 => CenterMethod::Exact,
        1 => CenterMethod::Lsh,
        other => return Err(Error::Corrupt(format!("unknown center method {other}"))),
    };
    let codes = d.codes(r, k)?;
    d.finish()?;
    HashCenterTable::from_parts(order, seed, method, codes)
}

pub fn store_centers(table: &HashCenterTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, centers_to_bytes(table))?;
    Ok(())
}

pub fn load_centers(path: impl AsRef<Path>) -> Result<HashCenterTable> {
    centers_from_bytes(&fs::read(path)?)
}

/// Model layout after the common header:
///
/// ```text
/// M, r, δ, train seed, center seed, μ[M], converged (u8),
/// trace length, trace values,
/// per modality: index, d, p, anchor seed, σ, anchors (d×p), W (r×p)
/// ```
pub fn model_to_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut e = Encoder::new(FileKind::Model);
    e.usize(model.num_modalities());
    e.usize(model.code_length);
    e.f64(model.delta);
    e.u64(model.seed);
    e.u64(model.center_seed);
    for &u in &model.train_weights {
        e.f64(u);
    }
    e.u8(u8::from(model.converged));
    e.usize(model.objective_trace.len());
    for &v in &model.objective_trace {
        e.f64(v);
    }
    for (a, w) in model.anchor_sets.iter().zip(&model.projections) {
        e.usize(a.modality_index);
        e.usize(a.dim());
        e.usize(a.len());
        e.u64(a.seed);
        e.f64(a.kernel_width);
        e.matrix_row_major(&a.anchors);
        e.matrix_row_major(w);
    }
    e.finish()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut d = Decoder::open(bytes, FileKind::Model)?;
    let m = d.usize()?;
    let r = d.usize()?;
    let delta = d.f64()?;
    let seed = d.u64()?;
    let center_seed = d.u64()?;
    // Bounded by the payload size before allocating.
    if m > bytes.len() {
        return Err(Error::Corrupt(format!("implausible modality count {m}")));
    }
    let train_weights = (0..m).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
    let converged = d.u8()? != 0;
    let trace_len = d.usize()?;
    if trace_len > bytes.len() {
        return Err(Error::Corrupt(format!(
            "implausible trace length {trace_len}"
        )));
    }
    let objective_trace = (0..trace_len)
        .map(|_| d.f64())
        .collect::<Result<Vec<_>>>()?;
    let mut anchor_sets = Vec::with_capacity(m);
    let mut projections = Vec::with_capacity(m);
    for _ in 0..m {
        let modality_index = d.usize()?;
        let dim = d.usize()?;
        let p = d.usize()?;
        let anchor_seed = d.u64()?;
        let kernel_width = d.f64()?;
        let anchors = d.matrix_row_major(dim, p)?;
        let w = d.matrix_row_major(r, p)?;
        anchor_sets.push(AnchorSet {
            anchors,
            kernel_width,
            modality_index,
            seed: anchor_seed,
        });
        projections.push(w);
    }
    d.finish()?;
    let model = TrainedModel {
        projections,
        anchor_sets,
        train_weights,
        delta,
        code_length: r,
        objective_trace,
        converged,
        seed,
        center_seed,
    };
    model.validate()?;
    Ok(model)
}

pub fn store_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    model_from_bytes(&fs::read(path)?)
}

/// One line per sample with its categories separated by spaces.
pub fn labels_to_text(labels: &LabelSet) -> String {
    let mut s = String::new();
    for set in labels.iter() {
        let line: Vec<String> = set.iter().map(usize::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn labels_from_text(text: &str) -> Result<LabelSet> {
    let sets = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|e| Error::Parse(format!("labels line {}: {t:?}: {e}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelSet::new(sets))
}

pub fn store_labels(labels: &LabelSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, labels_to_text(labels))?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    labels_from_text(&fs::read_to_string(path)?)
}

/// Weight trace text: one line per batch, the batch index followed by one
/// weight per modality.
pub fn weight_trace_to_text<'a, I>(weights: I) -> String
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    let mut s = String::new();
    for (b, w) in weights {
        s.push_str(&b.to_string());
        for v in w {
            s.push(' ');
            s.push_str(&format!("{v:.9}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centers::build_center_table;
    use proptest::prelude::*;

    #[test]
    fn features_round_trip_bit_exact() {
        let m = DMatrix::from_fn(3, 4, |i, j| {
            (i as f64 - 1.5) * 0.1 + j as f64 * 1e-17 + f64::EPSILON
        });
        let back = features_from_bytes(&features_to_bytes(&m)).unwrap();
        assert_eq!(back.shape(), (3, 4));
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn row_major_layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let bytes = features_to_bytes(&m);
        assert_eq!(&bytes[..4], b"AMFH");
        assert_eq!(bytes[4], 1);
        assert_eq!(u16::from_le_bytes([bytes[5], bytes[6]]), 1);
        assert_eq!(u64::from_le_bytes(bytes[7..15].try_into().unwrap()), 2);
        let second = f64::from_le_bytes(bytes[31..39].try_into().unwrap());
        assert_eq!(second, 2.0);
    }

    #[test]
    fn truncated_and_tampered_files_are_rejected() {
        let bytes = features_to_bytes(&DMatrix::from_element(3, 3, 1.0));
        for cut in [0, 5, 11, bytes.len() - 1] {
            assert!(matches!(
                features_from_bytes(&bytes[..cut]),
                Err(Error::Corrupt(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[20] ^= 0x40;
        assert!(matches!(
            features_from_bytes(&flipped),
            Err(Error::Corrupt(_))
        ));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(
            features_from_bytes(&bad_magic),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let codes = CodeMatrix::new(8, 2);
        let bytes = codes_to_bytes(&codes);
        assert!(matches!(
            features_from_bytes(&bytes),
            Err(Error::KindMismatch {
                expected: 1,
                found: 2
            })
        ));
    }

    #[test]
    fn overflowing_shape_is_invalid() {
        let mut e = Encoder::new(FileKind::Features);
        e.u64(u64::MAX);
        e.u64(3);
        let bytes = e.finish();
        assert!(matches!(
            features_from_bytes(&bytes),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn csv_is_transposed() {
        let m = features_from_csv("1.0, 2.0\n3,4\n# comment\n5,6\n").unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.column(1).as_slice(), &[3.0, 4.0]);
        assert_eq!(m[(1, 2)], 6.0);
        assert!(features_from_csv("1,2\n3\n").is_err());
        assert!(features_from_csv("1,x\n").is_err());
    }

    #[test]
    fn code_payload_is_lsb_first() {
        let codes = CodeMatrix::from_sign_columns(8, &[[1i8, -1, -1, -1, -1, -1, -1, -1]]).unwrap();
        let bytes = codes_to_bytes(&codes);
        assert_eq!(bytes[4], 2);
        assert_eq!(bytes[HEADER_LEN + 16], 0x01);
        assert_eq!(bytes.len(), HEADER_LEN + 16 + 1 + 4);
    }

    #[test]
    fn centers_round_trip() {
        for (r, k) in [(16, 10), (48, 20)] {
            let t = build_center_table(r, k, 3).unwrap();
            assert_eq!(centers_from_bytes(&centers_to_bytes(&t)).unwrap(), t);
        }
    }

    #[test]
    fn labels_text_round_trip() {
        let l = LabelSet::new(vec![vec![2], vec![0, 3], vec![1]]);
        assert_eq!(labels_from_text(&labels_to_text(&l)).unwrap(), l);
        assert!(labels_from_text("1\nx\n").is_err());
    }

    #[test]
    fn weight_trace_lines() {
        let w = [vec![0.25, 0.75], vec![1.0, 0.0]];
        let text = weight_trace_to_text(w.iter().enumerate().map(|(i, v)| (i, v.as_slice())));
        assert_eq!(
            text,
            "0 0.250000000 0.750000000\n1 1.000000000 0.000000000\n"
        );
    }

    proptest! {
        #[test]
        fn codes_round_trip(bits in 1usize..130, n in 0usize..8, seed in any::<u64>()) {
            let mut s = seed;
            let cols: Vec<Vec<i8>> = (0..n).map(|_| (0..bits).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                if s >> 63 == 1 { 1 } else { -1 }
            }).collect()).collect();
            let codes = CodeMatrix::from_sign_columns(bits, &cols).unwrap();
            prop_assert_eq!(codes_from_bytes(&codes_to_bytes(&codes)).unwrap(), codes);
        }
    }
}
