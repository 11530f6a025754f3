use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{read_record, ActivationRecord, Condition, PairKey, RecordPair, StoreError};

#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedRecord {
    pub path: PathBuf,
    pub key: PairKey,
    pub condition: Condition,
}

/// Result of walking a directory of SPAC files.
#[derive(Debug, Default)]
pub struct PairScan {
    /// Sorted by pair key.
    pub pairs: Vec<RecordPair>,
    pub unpaired: Vec<UnpairedRecord>,
    /// Files with a `.spac` extension that failed to parse.
    pub invalid: Vec<(PathBuf, StoreError)>,
}

impl PairScan {
    pub fn valid_files(&self) -> usize {
        2 * self.pairs.len() + self.unpaired.len()
    }
}

#[derive(Default)]
struct Slots {
    clean: Option<(PathBuf, ActivationRecord)>,
    adversarial: Option<(PathBuf, ActivationRecord)>,
}

/// Lists `*.spac` files under `root` in a stable order.
pub(crate) fn spac_files(root: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| StoreError::Walk {
            path: e.path().unwrap_or(root).to_path_buf(),
            message: e.to_string(),
        })?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "spac") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

/// Every readable record under `root`, plus the files that failed to parse.
#[derive(Debug, Default)]
pub struct RecordScan {
    pub records: Vec<(PathBuf, ActivationRecord)>,
    pub invalid: Vec<(PathBuf, StoreError)>,
}

pub fn scan_records(root: impl AsRef<Path>) -> Result<RecordScan, StoreError> {
    let mut scan = RecordScan::default();
    for path in spac_files(root.as_ref())? {
        match read_record(&path) {
            Ok(r) => scan.records.push((path, r)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                scan.invalid.push((path, e));
            }
        }
    }
    Ok(scan)
}

/// Pairs every clean record with its adversarial twin. Records without a
/// twin are reported in `unpaired`; two files claiming the same key and
/// condition abort the scan.
pub fn scan_pairs(root: impl AsRef<Path>) -> Result<PairScan, StoreError> {
    let mut slots: BTreeMap<PairKey, Slots> = BTreeMap::new();
    let mut invalid = Vec::new();
    for path in spac_files(root.as_ref())? {
        let record = match read_record(&path) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                invalid.push((path, e));
                continue;
            }
        };
        let key = record.key();
        let condition = record.condition;
        let slot = slots.entry(key.clone()).or_default();
        let target = match condition {
            Condition::Clean => &mut slot.clean,
            Condition::Adversarial => &mut slot.adversarial,
        };
        if let Some((first, _)) = target {
            return Err(StoreError::DuplicateRecord {
                key,
                condition,
                first: first.clone(),
                second: path,
            });
        }
        *target = Some((path, record));
    }

    let mut scan = PairScan {
        invalid,
        ..Default::default()
    };
    for (key, slot) in slots {
        match (slot.clean, slot.adversarial) {
            (Some((_, clean)), Some((_, adversarial))) => {
                scan.pairs.push(RecordPair { clean, adversarial });
            }
            (Some((path, _)), None) => scan.unpaired.push(UnpairedRecord {
                path,
                key,
                condition: Condition::Clean,
            }),
            (None, Some((path, _))) => scan.unpaired.push(UnpairedRecord {
                path,
                key,
                condition: Condition::Adversarial,
            }),
            (None, None) => unreachable!("slot created without a record"),
        }
    }
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{write_record, Component};

    fn rec(layer: usize, sample: &str, condition: Condition) -> ActivationRecord {
        ActivationRecord::new(
            "small",
            Component::CrossAttention,
            layer,
            sample,
            condition,
            2,
            2,
            vec![1.0, 0.0, 0.0, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn one_pair() {
        let dir = tempfile::tempdir().unwrap();
        for c in [Condition::Clean, Condition::Adversarial] {
            let r = rec(0, "a", c);
            write_record(&r, dir.path().join(r.file_name())).unwrap();
        }
        let scan = scan_pairs(dir.path()).unwrap();
        assert_eq!(scan.pairs.len(), 1);
        assert!(scan.unpaired.is_empty());
        assert_eq!(scan.valid_files(), 2);
    }

    #[test]
    fn only_clean_records() {
        let dir = tempfile::tempdir().unwrap();
        for l in 0..3 {
            let r = rec(l, "a", Condition::Clean);
            write_record(&r, dir.path().join(r.file_name())).unwrap();
        }
        let scan = scan_pairs(dir.path()).unwrap();
        assert!(scan.pairs.is_empty());
        assert_eq!(scan.unpaired.len(), 3);
    }

    #[test]
    fn duplicate_names_both_paths() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec(1, "a", Condition::Adversarial);
        write_record(&r, dir.path().join("one.spac")).unwrap();
        write_record(&r, dir.path().join("two.spac")).unwrap();
        match scan_pairs(dir.path()) {
            Err(StoreError::DuplicateRecord { first, second, .. }) => {
                assert!(first.ends_with("one.spac"));
                assert!(second.ends_with("two.spac"));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn header_wins_over_file_name_and_corrupt_files_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        write_record(
            &rec(2, "b", Condition::Clean),
            dir.path().join("misleading_adversarial.spac"),
        )
        .unwrap();
        std::fs::create_dir(dir.path().join("nested")).unwrap();
        write_record(&rec(2, "b", Condition::Adversarial), dir.path().join("nested/x.spac")).unwrap();
        std::fs::write(dir.path().join("junk.spac"), b"nope").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let scan = scan_pairs(dir.path()).unwrap();
        assert_eq!(scan.pairs.len(), 1);
        assert_eq!(scan.invalid.len(), 1);
        assert_eq!(scan.pairs[0].key().layer_index, 2);

        let all = scan_records(dir.path()).unwrap();
        assert_eq!(all.records.len(), 2);
        assert_eq!(all.invalid.len(), 1);
    }
}
