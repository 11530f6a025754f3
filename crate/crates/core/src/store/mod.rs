//! Activation records, their on-disk container and their spectra.

mod scan;
mod spac;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::singular_values;
use crate::metrics::Spectrum;

pub use scan::{scan_pairs, scan_records, PairScan, RecordScan, UnpairedRecord};
pub use spac::{decode_record, encode_record, read_record, write_record, DTYPE_F32LE, MAGIC, PREAMBLE_LEN, VERSION};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, expected \"SPAC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported SPAC version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated {section}: need {needed} bytes, {available} available")]
    Truncated {
        section: &'static str,
        needed: u64,
        available: u64,
    },
    #[error("matrix dimensions {rows}x{cols} overflow")]
    DimensionOverflow { rows: u64, cols: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(u64),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape {rows}x{cols} does not match {len} values")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("duplicate record {key} ({condition}): {first} and {second}")]
    DuplicateRecord {
        key: PairKey,
        condition: Condition,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("mismatched pair: {0}")]
    MismatchedPair(String),
    #[error("cannot walk {path}: {message}")]
    Walk { path: PathBuf, message: String },
}

/// Which sub-block of a decoder layer produced the activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "cross_attn")]
    CrossAttention,
    #[serde(rename = "self_attn")]
    SelfAttention,
    #[serde(rename = "ffn")]
    Ffn,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::CrossAttention, Component::SelfAttention, Component::Ffn];

    pub fn as_str(&self) -> &'static str {
        match self {
            Component::CrossAttention => "cross_attn",
            Component::SelfAttention => "self_attn",
            Component::Ffn => "ffn",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown component {s:?} (expected cross_attn, self_attn or ffn)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Adversarial,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Clean => "clean",
            Condition::Adversarial => "adversarial",
        })
    }
}

/// Identity shared by the clean and adversarial halves of a pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub model_id: String,
    pub component: Component,
    pub layer_index: usize,
    pub sample_id: String,
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/layer{}/{}",
            self.model_id, self.component, self.layer_index, self.sample_id
        )
    }
}

/// One stored activation matrix: rows are sequence positions, columns are
/// feature dimensions, values row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub model_id: String,
    pub component: Component,
    pub layer_index: usize,
    pub sample_id: String,
    pub condition: Condition,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl ActivationRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model_id: impl Into<String>,
        component: Component,
        layer_index: usize,
        sample_id: impl Into<String>,
        condition: Condition,
        rows: usize,
        cols: usize,
        data: Vec<f32>,
    ) -> Result<Self, StoreError> {
        let r = Self {
            model_id: model_id.into(),
            component,
            layer_index,
            sample_id: sample_id.into(),
            condition,
            rows,
            cols,
            data,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.rows == 0 || self.cols == 0 || self.rows.checked_mul(self.cols) != Some(self.data.len()) {
            return Err(StoreError::ShapeMismatch {
                rows: self.rows,
                cols: self.cols,
                len: self.data.len(),
            });
        }
        if let Some(index) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite { index });
        }
        Ok(())
    }

    pub fn key(&self) -> PairKey {
        PairKey {
            model_id: self.model_id.clone(),
            component: self.component,
            layer_index: self.layer_index,
            sample_id: self.sample_id.clone(),
        }
    }

    /// Conventional file name; the header remains authoritative.
    pub fn file_name(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}.spac",
            self.model_id, self.component, self.layer_index, self.sample_id, self.condition
        )
    }

    /// The payload widened to `f64`.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|&x| x as f64))
    }
}

/// All `min(rows, cols)` singular values of the raw (uncentered) matrix.
pub fn compute_spectrum(r: &ActivationRecord) -> Spectrum {
    let rank = r.rows.min(r.cols);
    Spectrum::from_unsorted(singular_values(&r.matrix()), rank).expect("singular values are finite and non-negative")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordPair {
    pub clean: ActivationRecord,
    pub adversarial: ActivationRecord,
}

impl RecordPair {
    pub fn new(clean: ActivationRecord, adversarial: ActivationRecord) -> Result<Self, StoreError> {
        if clean.condition != Condition::Clean || adversarial.condition != Condition::Adversarial {
            return Err(StoreError::MismatchedPair(format!(
                "conditions are {} and {}",
                clean.condition, adversarial.condition
            )));
        }
        if clean.key() != adversarial.key() {
            return Err(StoreError::MismatchedPair(format!(
                "{} vs {}",
                clean.key(),
                adversarial.key()
            )));
        }
        Ok(Self { clean, adversarial })
    }

    pub fn key(&self) -> PairKey {
        self.clean.key()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rows: usize, cols: usize, data: Vec<f32>) -> ActivationRecord {
        ActivationRecord::new("m", Component::Ffn, 0, "s", Condition::Clean, rows, cols, data).unwrap()
    }

    #[test]
    fn diagonal_spectrum() {
        let r = record(3, 3, vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let s = compute_spectrum(&r);
        for (a, b) in s.values().iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.source_rank(), 3);
    }

    #[test]
    fn rank_one_spectrum() {
        let a = [1.0f32, 2.0, -2.0, 4.0];
        let b = [3.0f32, -1.0, 0.5];
        let data: Vec<f32> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        let s = compute_spectrum(&record(4, 3, data));
        let na = a.iter().map(|x| (x * x) as f64).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| (x * x) as f64).sum::<f64>().sqrt();
        assert!((s.values()[0] - na * nb).abs() < 1e-12 * na * nb);
        assert!(s.values()[1..].iter().all(|v| *v <= 1e-10 * na * nb));
    }

    #[test]
    fn wide_matrix_rank() {
        let s = compute_spectrum(&record(2, 5, (0..10).map(|i| i as f32).collect()));
        assert_eq!(s.len(), 2);
        assert_eq!(s.source_rank(), 2);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            ActivationRecord::new("m", Component::Ffn, 0, "s", Condition::Clean, 2, 2, vec![0.0; 3]),
            Err(StoreError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            ActivationRecord::new("m", Component::Ffn, 0, "s", Condition::Clean, 0, 0, vec![]),
            Err(StoreError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn pair_invariants() {
        let clean = record(1, 1, vec![1.0]);
        let mut adv = clean.clone();
        adv.condition = Condition::Adversarial;
        assert!(RecordPair::new(clean.clone(), adv.clone()).is_ok());
        assert!(RecordPair::new(clean.clone(), clean.clone()).is_err());
        adv.layer_index = 4;
        assert!(RecordPair::new(clean, adv).is_err());
    }

    #[test]
    fn file_name_convention() {
        let r = ActivationRecord::new(
            "small",
            Component::SelfAttention,
            7,
            "x1",
            Condition::Adversarial,
            1,
            1,
            vec![0.5],
        )
        .unwrap();
        assert_eq!(r.file_name(), "small_self_attn_7_x1_adversarial.spac");
    }
}
