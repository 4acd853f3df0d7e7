use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MIN_DAY_GAP;
use crate::error::{Error, Result};

/// Manifest file name inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub subject_id: String,
    /// Days since the start of the study.
    pub acquisition_day: i64,
    /// Path of the `DBPIMG1` file relative to the dataset directory.
    pub slice_path: String,
}

/// One manifest line as stored on disk.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    scan_id: String,
    subject_id: String,
    acquisition_day: i64,
    slice_path: String,
    split: Split,
}

/// Ordered scan records plus the scan → split assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ScanRecord>,
    pub split: BTreeMap<String, Split>,
}

impl DatasetManifest {
    pub fn split_of(&self, scan_id: &str) -> Option<Split> {
        self.split.get(scan_id).copied()
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ScanRecord> + '_ {
        self.records
            .iter()
            .filter(move |r| self.split_of(&r.scan_id) == Some(split))
    }

    pub fn find(&self, scan_id: &str) -> Option<&ScanRecord> {
        self.records.iter().find(|r| r.scan_id == scan_id)
    }

    /// Checks every manifest invariant: unique scan ids, non-negative days,
    /// complete split map, one split per subject and the minimum day gap.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.scan_id.as_str()) {
                return Err(Error::invalid(format!("duplicate scan_id {}", r.scan_id)));
            }
            if r.acquisition_day < 0 {
                return Err(Error::invalid(format!(
                    "scan {} has negative acquisition_day",
                    r.scan_id
                )));
            }
            if !self.split.contains_key(&r.scan_id) {
                return Err(Error::invalid(format!("scan {} has no split", r.scan_id)));
            }
        }
        if self.split.len() != self.records.len() {
            return Err(Error::invalid("split map references unknown scans"));
        }

        let mut subject_split: HashMap<&str, Split> = HashMap::new();
        let mut days: HashMap<&str, Vec<i64>> = HashMap::new();
        for r in &self.records {
            let s = self.split[&r.scan_id];
            if let Some(prev) = subject_split.insert(&r.subject_id, s) {
                if prev != s {
                    return Err(Error::invalid(format!(
                        "subject {} spans splits {prev} and {s}",
                        r.subject_id
                    )));
                }
            }
            days.entry(&r.subject_id).or_default().push(r.acquisition_day);
        }
        for (subject, mut d) in days {
            d.sort_unstable();
            if let Some(w) = d.windows(2).find(|w| w[1] - w[0] < MIN_DAY_GAP) {
                return Err(Error::invalid(format!(
                    "subject {subject} has scans {} days apart",
                    w[1] - w[0]
                )));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let line = ManifestLine {
                scan_id: r.scan_id.clone(),
                subject_id: r.subject_id.clone(),
                acquisition_day: r.acquisition_day,
                slice_path: r.slice_path.clone(),
                split: self.split[&r.scan_id],
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut manifest = DatasetManifest::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(&line)
                .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))?;
            manifest.split.insert(parsed.scan_id.clone(), parsed.split);
            manifest.records.push(ScanRecord {
                scan_id: parsed.scan_id,
                subject_id: parsed.subject_id,
                acquisition_day: parsed.acquisition_day,
                slice_path: parsed.slice_path,
            });
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes `manifest.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(&path, e))
    }

    /// Reads `manifest.jsonl` from `dir`.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_jsonl(BufReader::new(f))
    }
}
