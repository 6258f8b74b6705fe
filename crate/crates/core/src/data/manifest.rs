//! JSON-lines dataset manifests.
//!
//! Line 1 is a header object
//! `{"schema_version": 1, "kind": "paired"|"masks-only", "provenance": "real"|"synthetic"|"toy", "image_size": n|null, "config_hash": s|null}`;
//! every further line is one record
//! `{"id", "mask_path", "photo_path": s|null, "split": "train"|"test"}`.
//! Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{load_image, PairedSample, SegmentationMask};
use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Paired,
    MasksOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Real,
    Synthetic,
    Toy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub mask_path: String,
    pub photo_path: Option<String>,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    kind: DatasetKind,
    provenance: Provenance,
    image_size: Option<usize>,
    config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub provenance: Provenance,
    pub image_size: Option<usize>,
    pub config_hash: Option<String>,
    pub records: Vec<ManifestRecord>,
    /// Directory that record paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(kind: DatasetKind, provenance: Provenance, root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            kind,
            provenance,
            image_size: None,
            config_hash: None,
            records: Vec::new(),
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks id uniqueness and the kind's photo requirement.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Contract(format!("duplicate manifest id {}", r.id)));
            }
            if self.kind == DatasetKind::Paired && r.photo_path.is_none() {
                return Err(Error::Contract(format!(
                    "paired manifest record {} has no photo_path",
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            schema_version: MANIFEST_SCHEMA_VERSION,
            kind: self.kind,
            provenance: self.provenance,
            image_size: self.image_size,
            config_hash: self.config_hash.clone(),
        };
        let mut s = serde_json::to_string(&header)?;
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Parses without touching referenced files.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Contract("empty manifest".into()))?,
        )?;
        if header.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest schema version {}",
                header.schema_version
            )));
        }
        let records = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
        let m = DatasetManifest {
            kind: header.kind,
            provenance: header.provenance,
            image_size: header.image_size,
            config_hash: header.config_hash,
            records,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Loads and checks that every referenced file exists, reporting all
    /// missing files at once.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root)?;
        let missing: Vec<PathBuf> = m
            .records
            .iter()
            .flat_map(|r| std::iter::once(&r.mask_path).chain(r.photo_path.as_ref()))
            .map(|p| m.root.join(p))
            .filter(|p| !p.exists())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load_mask(&self, r: &ManifestRecord) -> Result<SegmentationMask> {
        let t = load_image(self.root.join(&r.mask_path))?;
        SegmentationMask::new(t)
    }

    pub fn load_masks(&self, split: Option<Split>) -> Result<Vec<SegmentationMask>> {
        self.records
            .iter()
            .filter(|r| split.map_or(true, |s| r.split == s))
            .map(|r| self.load_mask(r))
            .collect()
    }

    pub fn load_pairs(&self, split: Option<Split>) -> Result<Vec<PairedSample>> {
        if self.kind != DatasetKind::Paired {
            return Err(Error::Config("manifest is not paired".into()));
        }
        self.records
            .iter()
            .filter(|r| split.map_or(true, |s| r.split == s))
            .map(|r| {
                let mask = self.load_mask(r)?;
                let photo_path = r.photo_path.as_ref().expect("validated paired manifest");
                let photo = load_image(self.root.join(photo_path))?;
                let photo = if photo.shape()[0] == 1 {
                    let (h, w) = (photo.shape()[1], photo.shape()[2]);
                    crate::tensor::Tensor::new(&[3, h, w], photo.data().repeat(3))?
                } else {
                    photo
                };
                PairedSample::new(r.id.clone(), mask, photo)
            })
            .collect()
    }
}

/// Seeded split into train and test; the first `round(n · fraction)` items of
/// a permutation go to train, clamped so both sides are non-empty.
pub fn split_dataset(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = manifest.len();
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} items")));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, "split"));
    let mut out = manifest.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.records[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new(DatasetKind::MasksOnly, Provenance::Toy, "/tmp");
        for i in 0..n {
            m.records.push(ManifestRecord {
                id: format!("m{i:03}"),
                mask_path: format!("m{i:03}.png"),
                photo_path: None,
                split: Split::Train,
            });
        }
        m
    }

    #[test]
    fn forty_split_evenly() {
        let s = split_dataset(&manifest(40), 0.5, 3).unwrap();
        assert_eq!(s.split(Split::Train).count(), 20);
        assert_eq!(s.split(Split::Test).count(), 20);
        assert_eq!(s, split_dataset(&manifest(40), 0.5, 3).unwrap());
        assert!(split_dataset(&manifest(1), 0.5, 3).is_err());
        assert!(split_dataset(&manifest(4), 1.0, 3).is_err());
    }

    #[test]
    fn jsonl_round_trip_and_duplicates() {
        let m = manifest(3);
        let text = m.to_jsonl().unwrap();
        assert_eq!(DatasetManifest::parse(&text, "/tmp").unwrap(), m);
        let mut dup = m.clone();
        dup.records[1].id = "m000".into();
        assert!(dup.validate().is_err());
        let mut paired = m;
        paired.kind = DatasetKind::Paired;
        assert!(paired.validate().is_err());
    }

    #[test]
    fn load_lists_every_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(3);
        m.root = dir.path().to_path_buf();
        let p = dir.path().join("manifest.jsonl");
        m.write(&p).unwrap();
        std::fs::write(dir.path().join("m001.png"), b"").unwrap();
        match DatasetManifest::load(&p) {
            Err(Error::MissingFiles(files)) => {
                assert_eq!(files.len(), 2);
                assert!(files[0].ends_with("m000.png"));
                assert!(files[1].ends_with("m002.png"));
            }
            other => panic!("{other:?}"),
        }
    }
}
