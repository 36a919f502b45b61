//! On-disk project: a manifest plus one immutable JSON snapshot per
//! annotation revision.
//!
//! ```text
//! <root>/project.json
//! <root>/revisions/0000.json
//! <root>/revisions/0001.json
//! <root>/.lock              present while a writer is active
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::embedding::SentenceEmbedder;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::report::DEFAULT_TOP_K;
use crate::scoring::{AnnotatedFeature, AnnotationSet, FeatureKind, ScoreMode, DEFAULT_LAMBDA};

pub const MANIFEST_FILE: &str = "project.json";
pub const REVISIONS_DIR: &str = "revisions";
pub const LOCK_FILE: &str = ".lock";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// JSON object mapping text to a 768-dim vector.
    Precomputed { path: PathBuf },
    /// Hash-seeded pseudo-random unit vectors.
    #[default]
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub mode: ScoreMode,
    pub lambda: f64,
    pub seed: u64,
    /// Softmax-normalise baseline scores before correction.
    pub softmax_baseline: bool,
    pub top_k: usize,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            mode: ScoreMode::default(),
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            softmax_baseline: false,
            top_k: DEFAULT_TOP_K,
        }
    }
}

/// Paths are relative to the project root unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: EmbeddingSource,
    #[serde(default)]
    pub config: ProjectConfig,
    pub active_revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRevision {
    pub id: u64,
    pub parent: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub note: String,
    #[serde(flatten)]
    pub annotations: AnnotationSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionSummary {
    pub id: u64,
    pub parent: Option<u64>,
    pub timestamp: u64,
    pub note: String,
    pub classes: usize,
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightChange {
    pub text: String,
    pub kind: FeatureKind,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDiff {
    pub class_label: String,
    pub added: Vec<AnnotatedFeature>,
    pub removed: Vec<AnnotatedFeature>,
    pub weight_changes: Vec<WeightChange>,
}

/// Per-class changes going from `a` to `b`, keyed by `(text, kind)`. Classes
/// without changes are omitted.
pub fn diff_annotations(a: &AnnotationSet, b: &AnnotationSet) -> Vec<ClassDiff> {
    let labels: BTreeSet<&String> = a.classes.keys().chain(b.classes.keys()).collect();
    let empty = Vec::new();
    let keyed = |fs: &[AnnotatedFeature]| -> BTreeMap<(String, FeatureKind), AnnotatedFeature> {
        fs.iter().map(|f| ((f.text.clone(), f.kind), f.clone())).collect()
    };
    let mut out = Vec::new();
    for label in labels {
        let old = keyed(a.classes.get(label).unwrap_or(&empty));
        let new = keyed(b.classes.get(label).unwrap_or(&empty));
        let mut d = ClassDiff {
            class_label: label.clone(),
            added: Vec::new(),
            removed: Vec::new(),
            weight_changes: Vec::new(),
        };
        for (key, f) in &new {
            match old.get(key) {
                None => d.added.push(f.clone()),
                Some(o) if o.weight.to_bits() != f.weight.to_bits() => d.weight_changes.push(WeightChange {
                    text: key.0.clone(),
                    kind: key.1,
                    from: o.weight,
                    to: f.weight,
                }),
                Some(_) => {}
            }
        }
        d.removed = old
            .iter()
            .filter(|(k, _)| !new.contains_key(*k))
            .map(|(_, f)| f.clone())
            .collect();
        if !(d.added.is_empty() && d.removed.is_empty() && d.weight_changes.is_empty()) {
            out.push(d);
        }
    }
    out
}

/// Exclusive writer lock held for the lifetime of the guard.
#[derive(Debug)]
pub struct ProjectLock {
    path: PathBuf,
}

impl ProjectLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::ProjectLocked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct Project {
    root: PathBuf,
    manifest: Manifest,
    revisions: Vec<AnnotationRevision>,
}

fn revision_path(root: &Path, id: u64) -> PathBuf {
    root.join(REVISIONS_DIR).join(format!("{id:04}.json"))
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_new(path: &Path, value: &impl Serialize) -> Result<()> {
    if path.exists() {
        return Err(Error::CorruptProject(format!("{} already exists", path.display())));
    }
    write_json(path, value)
}

/// Writes through a temporary file so readers never see a half-written manifest.
fn replace_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    write_json(&tmp, value)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl Project {
    /// Loads the project at `root`, or creates one with an empty revision 0.
    pub fn open_or_init(root: &Path) -> Result<Self> {
        if root.join(MANIFEST_FILE).exists() {
            return Self::open(root);
        }
        if root.exists() && !root.is_dir() {
            return Err(Error::InvalidValue(format!("{} is not a directory", root.display())));
        }
        fs::create_dir_all(root.join(REVISIONS_DIR)).map_err(|e| Error::io(root, e))?;
        let _lock = ProjectLock::acquire(root)?;
        let first = AnnotationRevision {
            id: 0,
            parent: None,
            timestamp: now(),
            note: "initial empty revision".into(),
            annotations: AnnotationSet::default(),
        };
        write_new(&revision_path(root, 0), &first)?;
        let manifest = Manifest {
            format: FORMAT,
            dataset: None,
            checkpoint: None,
            embeddings: EmbeddingSource::default(),
            config: ProjectConfig::default(),
            active_revision: 0,
        };
        replace_json(&root.join(MANIFEST_FILE), &manifest)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            revisions: vec![first],
        })
    }

    pub fn open(root: &Path) -> Result<Self> {
        let corrupt = |msg: String| Error::CorruptProject(msg);
        let manifest: Manifest = read_json(&root.join(MANIFEST_FILE)).map_err(|e| match e {
            Error::Json { path, source } => corrupt(format!("{}: {source}", path.display())),
            other => other,
        })?;
        if manifest.format != FORMAT {
            return Err(corrupt(format!("unsupported project format {}", manifest.format)));
        }
        let dir = root.join(REVISIONS_DIR);
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".json"))
            .collect();
        names.sort();
        let mut revisions = Vec::with_capacity(names.len());
        for (expected, name) in names.iter().enumerate() {
            let path = dir.join(name);
            let rev: AnnotationRevision = read_json(&path).map_err(|e| corrupt(e.to_string()))?;
            if rev.id != expected as u64 || path != revision_path(root, rev.id) {
                return Err(corrupt(format!(
                    "{} holds revision {}, expected {expected}",
                    path.display(),
                    rev.id
                )));
            }
            if rev.parent.is_some_and(|p| p >= rev.id) || (rev.id > 0 && rev.parent.is_none()) {
                return Err(corrupt(format!(
                    "revision {} has invalid parent {:?}",
                    rev.id, rev.parent
                )));
            }
            revisions.push(rev);
        }
        if revisions.is_empty() {
            return Err(corrupt("no revisions".into()));
        }
        if manifest.active_revision >= revisions.len() as u64 {
            return Err(corrupt(format!(
                "active revision {} does not exist",
                manifest.active_revision
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            revisions,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.manifest.config
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.root.join(path)
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.manifest.dataset.as_deref().map(|p| self.resolve(p))
    }

    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        self.manifest.checkpoint.as_deref().map(|p| self.resolve(p))
    }

    pub fn encoder(&self) -> Result<SentenceEmbedder> {
        match &self.manifest.embeddings {
            EmbeddingSource::Stub => Ok(SentenceEmbedder::Stub),
            EmbeddingSource::Precomputed { path } => SentenceEmbedder::load_precomputed(&self.resolve(path)),
        }
    }

    pub fn active_revision(&self) -> u64 {
        self.manifest.active_revision
    }

    pub fn active(&self) -> &AnnotationRevision {
        &self.revisions[self.manifest.active_revision as usize]
    }

    pub fn revision(&self, id: u64) -> Result<&AnnotationRevision> {
        self.revisions.get(id as usize).ok_or(Error::UnknownRevision(id))
    }

    pub fn revisions(&self) -> &[AnnotationRevision] {
        &self.revisions
    }

    pub fn summaries(&self) -> Vec<RevisionSummary> {
        self.revisions
            .iter()
            .map(|r| RevisionSummary {
                id: r.id,
                parent: r.parent,
                timestamp: r.timestamp,
                note: r.note.clone(),
                classes: r.annotations.classes.len(),
                features: r.annotations.classes.values().map(Vec::len).sum(),
            })
            .collect()
    }

    pub fn diff(&self, a: u64, b: u64) -> Result<Vec<ClassDiff>> {
        Ok(diff_annotations(
            &self.revision(a)?.annotations,
            &self.revision(b)?.annotations,
        ))
    }

    /// Fails if another writer moved the project on since it was opened.
    fn check_fresh(&self) -> Result<()> {
        let on_disk: Manifest = read_json(&self.root.join(MANIFEST_FILE))?;
        let next = self.revisions.len() as u64;
        if on_disk.active_revision != self.manifest.active_revision || revision_path(&self.root, next).exists() {
            return Err(Error::RevisionConflict {
                based_on: self.manifest.active_revision,
                active: on_disk.active_revision.max(next),
            });
        }
        Ok(())
    }

    /// Appends `snapshot` as a new revision and makes it active.
    pub fn commit_annotations(&mut self, snapshot: AnnotationSet, note: &str) -> Result<u64> {
        self.commit_based_on(snapshot, note, None)
    }

    /// Like [`Self::commit_annotations`], but refuses with a conflict unless
    /// the active revision is still `base` (when given).
    pub fn commit_based_on(&mut self, snapshot: AnnotationSet, note: &str, base: Option<u64>) -> Result<u64> {
        snapshot.validate()?;
        if let Some(base) = base.filter(|b| *b != self.manifest.active_revision) {
            return Err(Error::RevisionConflict {
                based_on: base,
                active: self.manifest.active_revision,
            });
        }
        let _lock = ProjectLock::acquire(&self.root)?;
        self.check_fresh()?;
        let id = self.revisions.len() as u64;
        let rev = AnnotationRevision {
            id,
            parent: Some(self.manifest.active_revision),
            timestamp: now(),
            note: note.to_string(),
            annotations: snapshot,
        };
        write_new(&revision_path(&self.root, id), &rev)?;
        let mut manifest = self.manifest.clone();
        manifest.active_revision = id;
        replace_json(&self.root.join(MANIFEST_FILE), &manifest)?;
        self.manifest = manifest;
        self.revisions.push(rev);
        Ok(id)
    }

    /// Applies `edit` to the manifest (paths, config) and saves it. The
    /// active revision cannot be changed this way.
    pub fn update_manifest(&mut self, edit: impl FnOnce(&mut Manifest)) -> Result<()> {
        let _lock = ProjectLock::acquire(&self.root)?;
        self.check_fresh()?;
        let mut manifest = self.manifest.clone();
        edit(&mut manifest);
        manifest.active_revision = self.manifest.active_revision;
        manifest.format = FORMAT;
        replace_json(&self.root.join(MANIFEST_FILE), &manifest)?;
        self.manifest = manifest;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(text: &str, weight: f64) -> AnnotatedFeature {
        AnnotatedFeature::new(text, weight, FeatureKind::LongSentence)
    }

    fn two_classes() -> AnnotationSet {
        let mut a = AnnotationSet::default();
        a.classes.insert("run".into(), vec![feature("legs moving fast", 1.0)]);
        a.classes.insert(
            "sit".into(),
            vec![feature("on a chair", 1.0), feature("standing", -1.0)],
        );
        a
    }

    #[test]
    fn fresh_directory_gets_empty_revision_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::open_or_init(dir.path()).unwrap();
        assert_eq!(p.active_revision(), 0);
        assert_eq!(p.active().annotations, AnnotationSet::default());
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn reopen_keeps_active_revision() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::open_or_init(dir.path()).unwrap();
        p.commit_annotations(two_classes(), "first").unwrap();
        let id = p.commit_annotations(two_classes(), "same again").unwrap();
        assert_eq!(id, 2);
        let q = Project::open_or_init(dir.path()).unwrap();
        assert_eq!(q.active_revision(), 2);
        assert_eq!(q.revisions().len(), 3);
        assert_eq!(q.revision(1).unwrap().annotations, q.revision(2).unwrap().annotations);
        assert_eq!(q.revision(2).unwrap().parent, Some(1));
    }

    #[test]
    fn commit_leaves_earlier_files_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::open_or_init(dir.path()).unwrap();
        p.commit_annotations(two_classes(), "first").unwrap();
        let before = fs::read(revision_path(dir.path(), 1)).unwrap();
        let mut next = two_classes();
        next.classes.get_mut("run").unwrap().push(feature("sweating", 0.5));
        p.commit_annotations(next.clone(), "add").unwrap();
        assert_eq!(fs::read(revision_path(dir.path(), 1)).unwrap(), before);
        assert_eq!(p.active().annotations.classes["sit"], two_classes().classes["sit"]);
    }

    #[test]
    fn zero_weight_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::open_or_init(dir.path()).unwrap();
        let mut bad = two_classes();
        bad.classes.get_mut("run").unwrap()[0].weight = 0.0;
        match p.commit_annotations(bad, "bad") {
            Err(Error::ValidationFailed(d)) => assert_eq!(d[0].class_label, "run"),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.active_revision(), 0);
    }

    #[test]
    fn mangled_revision_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::open_or_init(dir.path()).unwrap();
        p.commit_annotations(two_classes(), "first").unwrap();
        fs::write(revision_path(dir.path(), 1), b"{ not json").unwrap();
        assert!(matches!(
            Project::open_or_init(dir.path()),
            Err(Error::CorruptProject(_))
        ));
        fs::write(dir.path().join(MANIFEST_FILE), b"[]").unwrap();
        assert!(matches!(Project::open(dir.path()), Err(Error::CorruptProject(_))));
    }

    #[test]
    fn lock_blocks_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::open_or_init(dir.path()).unwrap();
        let held = ProjectLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            p.commit_annotations(two_classes(), "x"),
            Err(Error::ProjectLocked(_))
        ));
        drop(held);
        assert_eq!(p.commit_annotations(two_classes(), "x").unwrap(), 1);
    }

    #[test]
    fn stale_handle_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Project::open_or_init(dir.path()).unwrap();
        let mut b = Project::open(dir.path()).unwrap();
        a.commit_annotations(two_classes(), "a").unwrap();
        assert!(matches!(
            b.commit_annotations(two_classes(), "b"),
            Err(Error::RevisionConflict { .. })
        ));
        assert!(matches!(
            a.commit_based_on(two_classes(), "c", Some(0)),
            Err(Error::RevisionConflict { based_on: 0, active: 1 })
        ));
    }

    #[test]
    fn diff_reflexive_added_and_weight_change() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::open_or_init(dir.path()).unwrap();
        p.commit_annotations(two_classes(), "1").unwrap();
        assert!(p.diff(1, 1).unwrap().is_empty());

        let mut added = two_classes();
        added.classes.get_mut("run").unwrap().push(feature("sweating", 1.0));
        p.commit_annotations(added, "2").unwrap();
        let d = p.diff(1, 2).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].added, vec![feature("sweating", 1.0)]);
        assert!(d[0].removed.is_empty() && d[0].weight_changes.is_empty());

        let mut reweighted = two_classes();
        reweighted.classes.get_mut("run").unwrap()[0].weight = 2.0;
        p.commit_annotations(reweighted, "3").unwrap();
        let d = p.diff(1, 3).unwrap();
        assert!(d[0].added.is_empty() && d[0].removed.is_empty());
        assert_eq!(
            d[0].weight_changes,
            vec![WeightChange {
                text: "legs moving fast".into(),
                kind: FeatureKind::LongSentence,
                from: 1.0,
                to: 2.0
            }]
        );
        assert!(matches!(p.diff(0, 9), Err(Error::UnknownRevision(9))));
    }

    #[test]
    fn diff_is_mirrored() {
        let a = two_classes();
        let mut b = two_classes();
        b.classes.remove("sit");
        b.classes.get_mut("run").unwrap()[0].weight = -3.0;
        b.classes.insert("jump".into(), vec![feature("in the air", 1.0)]);
        let ab = diff_annotations(&a, &b);
        let ba = diff_annotations(&b, &a);
        assert_eq!(ab.len(), ba.len());
        for (x, y) in ab.iter().zip(&ba) {
            assert_eq!(x.added, y.removed);
            assert_eq!(x.removed, y.added);
            for (wx, wy) in x.weight_changes.iter().zip(&y.weight_changes) {
                assert_eq!((wx.from, wx.to), (wy.to, wy.from));
            }
        }
    }

    #[test]
    fn manifest_paths_resolve_against_root() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::open_or_init(dir.path()).unwrap();
        p.update_manifest(|m| {
            m.dataset = Some("data".into());
            m.config.lambda = 0.5;
        })
        .unwrap();
        let q = Project::open(dir.path()).unwrap();
        assert_eq!(q.dataset_path().unwrap(), dir.path().join("data"));
        assert_eq!(q.config().lambda, 0.5);
    }
}
