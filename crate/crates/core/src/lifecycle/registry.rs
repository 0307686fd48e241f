//! Append-only on-disk store of generation records.
//!
//! Layout: `<root>/index.json` lists entries in commit order; each entry is a
//! directory holding its files and a `manifest.json` with their SHA-256
//! digests. The index stores the digest of every manifest, so one hash
//! pins an entry's complete content.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CcdError, Result};

pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_FILE: &str = "manifest.json";
const REGISTRY_FORMAT: &str = "ccdtwin-registry";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    /// Pretrained starting point (generation 0).
    Pretrained,
    /// Result of a co-design optimization.
    Optimized,
    /// Field deployment: fine-tuned policy, residual data, discrepancy model.
    Deployment,
    /// Truth-plant comparison of generations.
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub kind: EntryKind,
    pub generation: usize,
    pub parent: Option<String>,
    /// File name → SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub name: String,
    pub kind: EntryKind,
    pub generation: usize,
    pub parent: Option<String>,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    format: String,
    version: u32,
    entries: Vec<IndexEntry>,
}

/// Files of an entry that has not been committed yet.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedEntry {
    pub name: String,
    pub kind: EntryKind,
    pub generation: usize,
    pub parent: Option<String>,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl StagedEntry {
    pub fn new(name: impl Into<String>, kind: EntryKind, generation: usize, parent: Option<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            generation,
            parent,
            files: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, file: impl Into<String>, bytes: impl Into<Vec<u8>>) -> &mut Self {
        self.files.insert(file.into(), bytes.into());
        self
    }
}

#[derive(Debug)]
pub struct Registry {
    root: PathBuf,
    index: Index,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CcdError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CcdError::io(path, e))
}

impl Registry {
    /// Opens the registry at `root`, creating an empty one if needed.
    pub fn open_or_create(root: &Path) -> Result<Self> {
        if root.join(INDEX_FILE).exists() {
            return Self::open(root);
        }
        fs::create_dir_all(root).map_err(|e| CcdError::io(root, e))?;
        let reg = Self {
            root: root.to_path_buf(),
            index: Index {
                format: REGISTRY_FORMAT.into(),
                version: 1,
                entries: Vec::new(),
            },
        };
        reg.write_index()?;
        Ok(reg)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CcdError::io(&path, e))?;
        let index: Index = serde_json::from_str(&text)?;
        if index.format != REGISTRY_FORMAT || index.version != 1 {
            return Err(CcdError::Parse(format!("{}: not a registry index", path.display())));
        }
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.index.entries
    }

    pub fn get(&self, name: &str) -> Option<&IndexEntry> {
        self.index.entries.iter().find(|e| e.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    fn write_index(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.index)? + "\n";
        write_atomic(&self.root.join(INDEX_FILE), text.as_bytes())
    }

    /// Writes a new entry. Existing entries are never modified.
    pub fn commit(&mut self, staged: &StagedEntry) -> Result<IndexEntry> {
        if !valid_name(&staged.name) {
            return Err(CcdError::Config(format!("invalid registry entry name {:?}", staged.name)));
        }
        if self.contains(&staged.name) {
            return Err(CcdError::Config(format!("registry entry {} already exists", staged.name)));
        }
        if let Some(parent) = &staged.parent {
            if !self.contains(parent) {
                return Err(CcdError::Incomplete(format!("parent entry {parent} is not in the registry")));
            }
        }
        if let Some(bad) = staged.files.keys().find(|f| !valid_name(f) || *f == MANIFEST_FILE) {
            return Err(CcdError::Config(format!("invalid file name {bad:?} in entry {}", staged.name)));
        }
        let manifest = Manifest {
            name: staged.name.clone(),
            kind: staged.kind,
            generation: staged.generation,
            parent: staged.parent.clone(),
            files: staged.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
        };
        let manifest_text = serde_json::to_string_pretty(&manifest)? + "\n";

        // Stage into a scratch directory, then move into place.
        let dir = self.root.join(&staged.name);
        let scratch = self.root.join(format!(".{}.partial", staged.name));
        if scratch.exists() {
            fs::remove_dir_all(&scratch).map_err(|e| CcdError::io(&scratch, e))?;
        }
        if dir.exists() {
            return Err(CcdError::Config(format!(
                "{} exists but is not listed in the index; remove it first",
                dir.display()
            )));
        }
        fs::create_dir_all(&scratch).map_err(|e| CcdError::io(&scratch, e))?;
        for (name, bytes) in &staged.files {
            let p = scratch.join(name);
            fs::write(&p, bytes).map_err(|e| CcdError::io(&p, e))?;
        }
        let mp = scratch.join(MANIFEST_FILE);
        fs::write(&mp, &manifest_text).map_err(|e| CcdError::io(&mp, e))?;
        fs::rename(&scratch, &dir).map_err(|e| CcdError::io(&dir, e))?;

        let entry = IndexEntry {
            name: staged.name.clone(),
            kind: staged.kind,
            generation: staged.generation,
            parent: staged.parent.clone(),
            manifest_sha256: sha256_hex(manifest_text.as_bytes()),
        };
        self.index.entries.push(entry.clone());
        self.write_index()?;
        log::info!("registry: committed {}", staged.name);
        Ok(entry)
    }

    /// Manifest of `name`, checked against the digest in the index.
    pub fn manifest(&self, name: &str) -> Result<Manifest> {
        let entry = self
            .get(name)
            .ok_or_else(|| CcdError::Incomplete(format!("registry has no entry {name}")))?;
        let path = self.root.join(name).join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| CcdError::io(&path, e))?;
        if sha256_hex(&bytes) != entry.manifest_sha256 {
            return Err(CcdError::Numeric(format!("{}: digest mismatch", path.display())));
        }
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Contents of one file of an entry, verified against the manifest.
    pub fn read(&self, name: &str, file: &str) -> Result<Vec<u8>> {
        let manifest = self.manifest(name)?;
        let want = manifest
            .files
            .get(file)
            .ok_or_else(|| CcdError::Incomplete(format!("entry {name} has no file {file}")))?;
        let path = self.root.join(name).join(file);
        let bytes = fs::read(&path).map_err(|e| CcdError::io(&path, e))?;
        if &sha256_hex(&bytes) != want {
            return Err(CcdError::Numeric(format!("{}: digest mismatch", path.display())));
        }
        Ok(bytes)
    }

    pub fn read_string(&self, name: &str, file: &str) -> Result<String> {
        String::from_utf8(self.read(name, file)?)
            .map_err(|_| CcdError::Parse(format!("{name}/{file} is not UTF-8")))
    }

    pub fn has_file(&self, name: &str, file: &str) -> bool {
        self.manifest(name).map(|m| m.files.contains_key(file)).unwrap_or(false)
    }

    /// Checks every file of every entry against its digest.
    pub fn verify(&self) -> Result<()> {
        for e in &self.index.entries {
            let m = self.manifest(&e.name)?;
            for f in m.files.keys() {
                self.read(&e.name, f)?;
            }
        }
        Ok(())
    }

    pub fn path_of(&self, name: &str, file: &str) -> PathBuf {
        self.root.join(name).join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn staged(name: &str, parent: Option<&str>, body: &str) -> StagedEntry {
        let mut s = StagedEntry::new(name, EntryKind::Optimized, 1, parent.map(String::from));
        s.add("a.json", body.as_bytes().to_vec());
        s
    }

    #[test]
    fn commit_read_and_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open_or_create(dir.path()).unwrap();
        reg.commit(&staged("gen-0", None, "{}")).unwrap();
        reg.commit(&staged("gen-1", Some("gen-0"), "[1]")).unwrap();
        assert!(reg.commit(&staged("gen-1", Some("gen-0"), "[2]")).is_err());
        assert!(reg.commit(&staged("gen-9", Some("nope"), "[2]")).is_err());
        let reg = Registry::open(dir.path()).unwrap();
        assert_eq!(reg.entries().len(), 2);
        assert_eq!(reg.read_string("gen-1", "a.json").unwrap(), "[1]");
        reg.verify().unwrap();
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open_or_create(dir.path()).unwrap();
        reg.commit(&staged("gen-0", None, "{}")).unwrap();
        fs::write(dir.path().join("gen-0").join("a.json"), "{ }").unwrap();
        assert!(reg.read("gen-0", "a.json").is_err());
        assert!(reg.verify().is_err());
    }

    #[test]
    fn identical_content_identical_digests() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut r1 = Registry::open_or_create(d1.path()).unwrap();
        let mut r2 = Registry::open_or_create(d2.path()).unwrap();
        let e1 = r1.commit(&staged("gen-0", None, "x")).unwrap();
        let e2 = r2.commit(&staged("gen-0", None, "x")).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(
            fs::read(d1.path().join(INDEX_FILE)).unwrap(),
            fs::read(d2.path().join(INDEX_FILE)).unwrap()
        );
    }
}
