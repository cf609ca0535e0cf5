//! Dense image (or text) feature matrices and their on-disk formats.
//!
//! The binary layout is the canonical interchange:
//!
//! ```text
//! "VCF1" | n: u32 LE | d: u32 LE | n*d f32 LE, row-major | n * (len: u16 LE, UTF-8 id)
//! ```
//!
//! The CSV layout carries a header `id,f0,...,f{d-1}` and one row per image.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"VCF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// Guess from the file extension; anything that is not `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(FeatureFormat::Binary),
            "csv" => Ok(FeatureFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown feature format {other:?}"))),
        }
    }
}

/// `n x d` matrix of finite `f32` features with a unique id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::format("feature matrix", "n must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::format("feature matrix", "d must be at least 1"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::format(
                "feature matrix",
                format!("{} values for {} rows of dimension {dim}", data.len(), ids.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(FeatureMatrix { ids, dim, data })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        if rows.len() != ids.len() {
            return Err(Error::RowCountMismatch {
                expected: ids.len(),
                found: rows.len(),
            });
        }
        Self::new(ids, dim, rows.concat())
    }

    /// Ids `"0"`, `"1"`, ... for generated data.
    pub fn with_index_ids(dim: usize, data: Vec<f32>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { data.len() / dim };
        Self::new((0..n).map(|i| i.to_string()).collect(), dim, data)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Copy of the selected rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            ids,
            dim: self.dim,
            data,
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.dim, |i, j| self.data[i * self.dim + j] as f64)
    }

    /// Same as [`to_dmatrix`](Self::to_dmatrix) restricted to `rows`.
    pub fn to_dmatrix_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.dim, |i, j| {
            self.data[rows[i] * self.dim + j] as f64
        })
    }

    pub fn read_binary<R: Read>(reader: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(reader, &mut magic, "magic")?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::format("feature header", "bad magic, expected VCF1"));
        }
        let n = read_u32(reader, "row count")? as usize;
        let d = read_u32(reader, "dimension")? as usize;
        if n == 0 || d == 0 {
            return Err(Error::format("feature header", format!("n = {n}, d = {d}")));
        }
        let total = n
            .checked_mul(d)
            .ok_or_else(|| Error::format("feature header", "n * d overflows"))?;
        let mut raw = vec![0u8; total * 4];
        read_exact(reader, &mut raw, "feature values")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut ids = Vec::with_capacity(n);
        for i in 0..n {
            let mut len = [0u8; 2];
            read_exact(reader, &mut len, "id length")?;
            let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(reader, &mut buf, "id")?;
            let id = String::from_utf8(buf)
                .map_err(|_| Error::format("feature ids", format!("id {i} is not UTF-8")))?;
            ids.push(id);
        }
        let mut rest = [0u8; 1];
        if reader.read(&mut rest)? != 0 {
            return Err(Error::format("feature file", "trailing bytes after id table"));
        }
        FeatureMatrix::new(ids, d, data)
    }

    pub fn write_binary<W: Write>(&self, writer: &mut W) -> Result<()> {
        writer.write_all(FEATURE_MAGIC)?;
        writer.write_all(&(self.n() as u32).to_le_bytes())?;
        writer.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        for id in &self.ids {
            let len = u16::try_from(id.len()).map_err(|_| {
                Error::format("feature ids", format!("id {id:?} longer than 65535 bytes"))
            })?;
            writer.write_all(&len.to_le_bytes())?;
            writer.write_all(id.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_binary_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        self.write_binary(&mut out)?;
        Ok(out)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::format("feature csv header", e.to_string()))?
            .clone();
        if header.get(0) != Some("id") || header.len() < 2 {
            return Err(Error::format("feature csv header", "expected id,f0,...,f{d-1}"));
        }
        for (j, name) in header.iter().skip(1).enumerate() {
            if name != format!("f{j}") {
                return Err(Error::format(
                    "feature csv header",
                    format!("column {} is {name:?}, expected \"f{j}\"", j + 1),
                ));
            }
        }
        let dim = header.len() - 1;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::format("feature csv", e.to_string()))?;
            if record.len() != dim + 1 {
                return Err(Error::format(
                    "feature csv",
                    format!("row {row} has {} fields, expected {}", record.len(), dim + 1),
                ));
            }
            ids.push(record[0].to_string());
            for (col, field) in record.iter().skip(1).enumerate() {
                let v: f32 = field.trim().parse().map_err(|_| {
                    Error::format("feature csv", format!("row {row}, column {col}: {field:?}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
                data.push(v);
            }
        }
        FeatureMatrix::new(ids, dim, data)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let header: Vec<String> = std::iter::once("id".to_string())
            .chain((0..self.dim).map(|j| format!("f{j}")))
            .collect();
        wtr.write_record(&header)
            .map_err(|e| Error::format("feature csv", e.to_string()))?;
        for (id, row) in self.ids.iter().zip(self.rows()) {
            // f32 Display prints the shortest string that parses back to the same bits.
            let fields = std::iter::once(id.clone()).chain(row.iter().map(|v| v.to_string()));
            wtr.write_record(fields)
                .map_err(|e| Error::format("feature csv", e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format("feature file", format!("truncated while reading {what}"))
        } else {
            Error::RawIo(e)
        }
    })
}

fn read_u32<R: Read>(reader: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(reader, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_features(path: impl AsRef<Path>, format: FeatureFormat) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    match format {
        FeatureFormat::Binary => FeatureMatrix::read_binary(&mut reader),
        FeatureFormat::Csv => FeatureMatrix::read_csv(reader),
    }
}

pub fn write_features(
    path: impl AsRef<Path>,
    features: &FeatureMatrix,
    format: FeatureFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        FeatureFormat::Binary => features.write_binary(&mut writer)?,
        FeatureFormat::Csv => features.write_csv(&mut writer)?,
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> FeatureMatrix {
        FeatureMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            &[
                vec![1.0, 2.0, 3.0, 4.0],
                vec![0.5, -0.25, 0.0, 8.0],
                vec![-1.0, 1e-7, 3.5e10, 2.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_of_hand_built_file() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"VCF1");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        for v in 0..12 {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for id in ["x", "yy", "zzz"] {
            bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
            bytes.extend_from_slice(id.as_bytes());
        }
        let m = FeatureMatrix::read_binary(&mut bytes.as_slice()).unwrap();
        assert_eq!((m.n(), m.dim()), (3, 4));
        assert_eq!(m.row(2), &[8.0, 9.0, 10.0, 11.0]);
        assert_eq!(m.ids(), &["x", "yy", "zzz"]);
        assert_eq!(m.to_binary_bytes().unwrap(), bytes);
    }

    #[test]
    fn nan_reports_its_row() {
        let mut rows = vec![vec![0.0f32; 3]; 4];
        rows[2][1] = f32::NAN;
        let ids = (0..4).map(|i| i.to_string()).collect();
        match FeatureMatrix::from_rows(ids, &rows) {
            Err(Error::NonFinite { row, col }) => assert_eq!((row, col), (2, 1)),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn nan_in_binary_file_reports_row() {
        let m = small();
        let mut bytes = m.to_binary_bytes().unwrap();
        let offset = 12 + (2 * 4 + 3) * 4;
        bytes[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = FeatureMatrix::read_binary(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 2, col: 3 }), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = FeatureMatrix::from_rows(vec!["a".into(), "a".into()], &[vec![1.0], vec![2.0]])
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "a"));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = small().to_binary_bytes().unwrap();
        let truncated = bytes[..bytes.len() - 1].to_vec();
        assert!(matches!(
            FeatureMatrix::read_binary(&mut truncated.as_slice()),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            FeatureMatrix::read_binary(&mut bytes.as_slice()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn csv_header_is_checked() {
        let text = "id,f0,f2\na,1,2\n";
        assert!(matches!(
            FeatureMatrix::read_csv(text.as_bytes()),
            Err(Error::Format { .. })
        ));
        let text = "id,f0,f1\na,1,2\nb,3,nan\n";
        assert!(matches!(
            FeatureMatrix::read_csv(text.as_bytes()),
            Err(Error::NonFinite { row: 1, col: 1 })
        ));
    }

    #[test]
    fn csv_round_trip_preserves_bits() {
        let m = small();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(FeatureMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(FeatureFormat::from_path(Path::new("a/b.CSV")), FeatureFormat::Csv);
        assert_eq!(FeatureFormat::from_path(Path::new("a/b.vcf")), FeatureFormat::Binary);
    }

    proptest! {
        #[test]
        fn canonical_binary_files_round_trip_byte_identically(
            n in 1usize..12,
            d in 1usize..9,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let ids = (0..n).map(|i| format!("img-{i}-{}", rng.random::<u16>())).collect();
            let m = FeatureMatrix::new(ids, d, data).unwrap();
            let bytes = m.to_binary_bytes().unwrap();
            let back = FeatureMatrix::read_binary(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back.to_binary_bytes().unwrap(), bytes);
            prop_assert_eq!(back, m);
        }
    }
}
