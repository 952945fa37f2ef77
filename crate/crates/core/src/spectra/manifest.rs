//! Dataset manifests.
//!
//! A manifest is a TOML document:
//!
//! ```toml
//! train_fraction = 0.8333333333333334   # default 5/6
//! seed = 7                              # drives splits of unsplit records
//! cut_below = 150.0                     # Rayleigh cut in cm⁻¹
//!
//! [[classes]]
//! id = 0
//! name = "K00"
//! role = "known"            # known | ignored | never_seen
//! files = "K00/*.csv"       # optional glob, relative to the manifest
//!
//! [[records]]               # optional; explicit records win over globs
//! path = "K00/0000.csv"
//! class = 0
//! split = "train"           # optional: train | test
//!
//! [[records]]               # inline data instead of a file
//! class = 0
//! wavenumbers = [200.0, 201.0]
//! intensities = [0.0, 1.0]
//! ```
//!
//! Records without a split are assigned by a stratified split with the
//! manifest's fraction and seed. Classes with a `files` glob and no explicit
//! records are expanded in sorted path order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::split::{split_dataset, train_count, SplitInput};
use super::{ClassRole, SpectraError, Spectrum, Split, DEFAULT_CUT_BELOW};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
    pub role: ClassRole,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecordSource {
    File(PathBuf),
    Inline(Spectrum),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub source: RecordSource,
    pub class_id: u32,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative file paths resolve against.
    pub base_dir: PathBuf,
    pub train_fraction: f64,
    pub seed: u64,
    pub cut_below: f64,
    pub classes: Vec<ClassEntry>,
    pub records: Vec<Record>,
}

fn default_fraction() -> f64 {
    5.0 / 6.0
}

fn default_cut() -> f64 {
    DEFAULT_CUT_BELOW
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(default = "default_fraction")]
    train_fraction: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_cut")]
    cut_below: f64,
    classes: Vec<ClassFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    records: Vec<RecordFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassFile {
    id: u32,
    name: String,
    role: ClassRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    files: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    class: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavenumbers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intensities: Option<Vec<f64>>,
}

fn err(msg: impl Into<String>) -> SpectraError {
    SpectraError::Manifest(msg.into())
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, SpectraError> {
        let text = fs::read_to_string(path).map_err(|source| SpectraError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, SpectraError> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        let classes: Vec<ClassEntry> = file
            .classes
            .iter()
            .map(|c| ClassEntry {
                id: c.id,
                name: c.name.clone(),
                role: c.role,
            })
            .collect();
        let mut ids = BTreeSet::new();
        for c in &classes {
            if !ids.insert(c.id) {
                return Err(err(format!("duplicate class id {}", c.id)));
            }
        }

        let mut pending: Vec<(RecordSource, u32, Option<Split>)> = Vec::new();
        let explicit: BTreeSet<u32> = file.records.iter().map(|r| r.class).collect();
        for r in file.records {
            let source = match (r.path, r.wavenumbers, r.intensities) {
                (Some(p), None, None) => RecordSource::File(PathBuf::from(p)),
                (None, Some(w), Some(i)) => RecordSource::Inline(Spectrum::new(w, i)?),
                _ => return Err(err(format!("record of class {} needs either `path` or inline data", r.class))),
            };
            pending.push((source, r.class, r.split));
        }
        for c in &file.classes {
            let Some(pattern) = &c.files else { continue };
            if explicit.contains(&c.id) {
                continue;
            }
            let full = base_dir.join(pattern);
            let paths = glob::glob(&full.to_string_lossy()).map_err(|e| err(format!("class {}: {e}", c.id)))?;
            let mut found: Vec<PathBuf> = paths.filter_map(Result::ok).collect();
            found.sort();
            if found.is_empty() {
                return Err(err(format!("class {}: glob {pattern:?} matched no files", c.id)));
            }
            for p in found {
                let rel = p.strip_prefix(base_dir).map(Path::to_path_buf).unwrap_or(p);
                pending.push((RecordSource::File(rel), c.id, None));
            }
        }

        let role_of: BTreeMap<u32, ClassRole> = classes.iter().map(|c| (c.id, c.role)).collect();
        for (_, class, _) in &pending {
            if !role_of.contains_key(class) {
                return Err(err(format!("record references unknown class {class}")));
            }
        }
        let unsplit: Vec<usize> = (0..pending.len()).filter(|&i| pending[i].2.is_none()).collect();
        let inputs: Vec<SplitInput> = unsplit
            .iter()
            .map(|&i| SplitInput {
                class_id: pending[i].1,
                role: role_of[&pending[i].1],
            })
            .collect();
        let mut assigned = vec![None; pending.len()];
        if !inputs.is_empty() {
            let split = split_dataset(&inputs, file.train_fraction, file.seed)?;
            for i in split.train {
                assigned[unsplit[i]] = Some(Split::Train);
            }
            for i in split.test {
                assigned[unsplit[i]] = Some(Split::Test);
            }
        }
        let records = pending
            .into_iter()
            .zip(assigned)
            .map(|((source, class_id, split), a)| Record {
                source,
                class_id,
                split: split.or(a).expect("every record is split"),
            })
            .collect();

        let manifest = Self {
            base_dir: base_dir.to_path_buf(),
            train_fraction: file.train_fraction,
            seed: file.seed,
            cut_below: file.cut_below,
            classes,
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks the manifest invariants.
    pub fn validate(&self) -> Result<(), SpectraError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(SpectraError::BadFraction(self.train_fraction));
        }
        if self.known_count() < 2 {
            return Err(err(format!("need at least 2 known classes, found {}", self.known_count())));
        }
        for c in &self.classes {
            let recs: Vec<&Record> = self.records.iter().filter(|r| r.class_id == c.id).collect();
            let train = recs.iter().filter(|r| r.split == Split::Train).count();
            match c.role {
                ClassRole::NeverSeen if train > 0 => {
                    return Err(err(format!("never-seen class {} has {train} training record(s)", c.id)));
                }
                ClassRole::NeverSeen => {}
                _ => {
                    let expected = train_count(recs.len(), self.train_fraction);
                    if train.abs_diff(expected) > 1 {
                        return Err(err(format!(
                            "class {} has {train} of {} records in train, expected about {expected}",
                            c.id,
                            recs.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        let file = ManifestFile {
            train_fraction: self.train_fraction,
            seed: self.seed,
            cut_below: self.cut_below,
            classes: self
                .classes
                .iter()
                .map(|c| ClassFile {
                    id: c.id,
                    name: c.name.clone(),
                    role: c.role,
                    files: None,
                })
                .collect(),
            records: self
                .records
                .iter()
                .map(|r| {
                    let (path, wavenumbers, intensities) = match &r.source {
                        RecordSource::File(p) => (Some(p.to_string_lossy().replace('\\', "/")), None, None),
                        RecordSource::Inline(s) => (None, Some(s.wavenumbers().to_vec()), Some(s.intensities().to_vec())),
                    };
                    RecordFile {
                        path,
                        class: r.class_id,
                        split: Some(r.split),
                        wavenumbers,
                        intensities,
                    }
                })
                .collect(),
        };
        toml::to_string(&file).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), SpectraError> {
        let text = format!("# dataset manifest\n{}", self.to_toml_string());
        fs::write(path, text).map_err(|source| SpectraError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn class(&self, id: u32) -> Option<&ClassEntry> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn role_of(&self, class_id: u32) -> Option<ClassRole> {
        self.class(class_id).map(|c| c.role)
    }

    /// Known classes in ascending id order; a class's position is its
    /// label index.
    pub fn known_classes(&self) -> Vec<&ClassEntry> {
        let mut k: Vec<&ClassEntry> = self.classes.iter().filter(|c| c.role == ClassRole::Known).collect();
        k.sort_by_key(|c| c.id);
        k
    }

    /// Number of known classes, `C`.
    pub fn known_count(&self) -> usize {
        self.classes.iter().filter(|c| c.role == ClassRole::Known).count()
    }

    pub fn known_index(&self, class_id: u32) -> Option<usize> {
        self.known_classes().iter().position(|c| c.id == class_id)
    }

    /// Same records with every class treated as known and all records
    /// re-split with the manifest fraction and seed.
    pub fn closed_world(&self) -> Result<Self, SpectraError> {
        let classes: Vec<ClassEntry> = self
            .classes
            .iter()
            .map(|c| ClassEntry {
                role: ClassRole::Known,
                ..c.clone()
            })
            .collect();
        let inputs: Vec<SplitInput> = self
            .records
            .iter()
            .map(|r| SplitInput {
                class_id: r.class_id,
                role: ClassRole::Known,
            })
            .collect();
        let split = split_dataset(&inputs, self.train_fraction, self.seed)?;
        let mut records = self.records.clone();
        for i in split.train {
            records[i].split = Split::Train;
        }
        for i in split.test {
            records[i].split = Split::Test;
        }
        let m = Self {
            classes,
            records,
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}
