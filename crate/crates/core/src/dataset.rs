//! On-disk datasets: a directory of per-video feature files plus `index.json`.
//!
//! ```text
//! <root>/index.json            { "videos": [ { "video_id", "class_label", "file", "split" } ] }
//! <root>/videos/<id>.json      { "video_id", "class_label"?, "raw": {..} | "assembled": [2480] }
//! <root>/captions.json         [ { "video_id", "class_label", "captions": [..] } ]   (optional)
//! <root>/text_embeddings.json  { "<text>": [768] }                                    (optional)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{LabelHierarchy, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::features::{assemble, FrameObjectScores, FrameVisual, RawVideo, SkeletonFeature, VideoFeature};
use crate::io::{read_json, write_json};

pub const INDEX_FILE: &str = "index.json";
pub const VIDEOS_DIR: &str = "videos";
pub const CAPTIONS_FILE: &str = "captions.json";
pub const TEXT_EMBEDDINGS_FILE: &str = "text_embeddings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    /// Path of the feature file, relative to the dataset root.
    pub file: String,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetIndex {
    pub videos: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPayload {
    pub visual_frames: Vec<Vec<f64>>,
    pub object_frames: Vec<BTreeMap<String, f64>>,
    pub skeleton: Vec<f64>,
}

/// Per-video feature file. Exactly one of `raw` and `assembled` is present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoFile {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assembled: Option<Vec<f64>>,
}

/// Word table and hierarchy needed to assemble raw video files.
#[derive(Debug, Clone, Default)]
pub struct ObjectVocabulary {
    pub table: WordEmbeddingTable,
    pub hierarchy: LabelHierarchy,
}

impl VideoFile {
    pub fn assembled(feature: &VideoFeature) -> Self {
        Self {
            video_id: feature.video_id.clone(),
            class_label: feature.class_label.clone(),
            raw: None,
            assembled: Some(feature.vector().to_vec()),
        }
    }

    pub fn is_raw(&self) -> bool {
        self.raw.is_some()
    }

    pub fn into_feature(self, vocab: Option<&ObjectVocabulary>) -> Result<VideoFeature> {
        match (self.raw, self.assembled) {
            (Some(_), Some(_)) | (None, None) => Err(Error::InvalidValue(format!(
                "video {:?}: exactly one of \"raw\" and \"assembled\" must be given",
                self.video_id
            ))),
            (None, Some(v)) => VideoFeature::from_vector(self.video_id, self.class_label, v),
            (Some(raw), None) => {
                let vocab = vocab.ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "video {:?} has raw frames; a word table and hierarchy are needed to assemble it",
                        self.video_id
                    ))
                })?;
                let raw = RawVideo {
                    visual_frames: raw
                        .visual_frames
                        .into_iter()
                        .map(FrameVisual::new)
                        .collect::<Result<_>>()?,
                    object_frames: raw
                        .object_frames
                        .into_iter()
                        .map(FrameObjectScores::new)
                        .collect::<Result<_>>()?,
                    skeleton: SkeletonFeature::new(raw.skeleton)?,
                };
                assemble(&raw, &vocab.table, &vocab.hierarchy, self.video_id, self.class_label)
            }
        }
    }
}

/// A loaded dataset: index entries and their assembled features, in index order.
#[derive(Debug, Clone)]
pub struct Dataset {
    entries: Vec<IndexEntry>,
    features: Vec<VideoFeature>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    pub fn from_parts(entries: Vec<IndexEntry>, features: Vec<VideoFeature>) -> Result<Self> {
        if entries.len() != features.len() {
            return Err(Error::dims("dataset features", entries.len(), features.len()));
        }
        let mut by_id = HashMap::new();
        for (i, (e, f)) in entries.iter().zip(&features).enumerate() {
            if e.video_id != f.video_id {
                return Err(Error::InvalidValue(format!(
                    "index entry {:?} does not match feature {:?}",
                    e.video_id, f.video_id
                )));
            }
            if by_id.insert(e.video_id.clone(), i).is_some() {
                return Err(Error::InvalidValue(format!("duplicate video id {:?}", e.video_id)));
            }
        }
        Ok(Self {
            entries,
            features,
            by_id,
        })
    }

    pub fn load(root: &Path, vocab: Option<&ObjectVocabulary>) -> Result<Self> {
        let index: DatasetIndex = read_json(&root.join(INDEX_FILE))?;
        let mut features = Vec::with_capacity(index.videos.len());
        for entry in &index.videos {
            let path = root.join(&entry.file);
            let file: VideoFile = read_json(&path)?;
            if file.video_id != entry.video_id {
                return Err(Error::InvalidValue(format!(
                    "{}: video_id {:?} does not match index entry {:?}",
                    path.display(),
                    file.video_id,
                    entry.video_id
                )));
            }
            let mut feature = file.into_feature(vocab)?;
            if feature.class_label.is_none() {
                feature.class_label = entry.class_label.clone();
            }
            features.push(feature);
        }
        Self::from_parts(index.videos, features)
    }

    /// Writes every feature in assembled form plus the index.
    pub fn write(&self, root: &Path) -> Result<()> {
        for (entry, feature) in self.entries.iter().zip(&self.features) {
            write_json(&root.join(&entry.file), &VideoFile::assembled(feature))?;
        }
        write_json(
            &root.join(INDEX_FILE),
            &DatasetIndex {
                videos: self.entries.clone(),
            },
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn features(&self) -> &[VideoFeature] {
        &self.features
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoFeature> {
        self.by_id.get(video_id).map(|&i| &self.features[i])
    }

    pub fn split_of(&self, video_id: &str) -> Option<Split> {
        self.by_id.get(video_id).map(|&i| self.entries[i].split)
    }

    /// Features in `split`, or all of them for `None`, in index order.
    pub fn select(&self, split: Option<Split>) -> Vec<&VideoFeature> {
        self.entries
            .iter()
            .zip(&self.features)
            .filter(|(e, _)| split.is_none_or(|s| e.split == s))
            .map(|(_, f)| f)
            .collect()
    }

    pub fn classes(&self) -> BTreeSet<&str> {
        self.features.iter().filter_map(|f| f.class_label.as_deref()).collect()
    }
}

/// Marks `round(fraction * n)` videos of each class as test, chosen by a seeded
/// shuffle of that class's videos in id order.
pub fn assign_splits(entries: &mut [IndexEntry], test_fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} not in [0, 1]"
        )));
    }
    let mut by_class: BTreeMap<Option<String>, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        by_class.entry(e.class_label.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in by_class.values_mut() {
        members.sort_by(|&a, &b| entries[a].video_id.cmp(&entries[b].video_id));
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        for (k, &i) in members.iter().enumerate() {
            entries[i].split = if k < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub videos: usize,
    pub assembled_from_raw: usize,
    pub classes: usize,
    pub test_videos: usize,
}

/// Validates every `videos/*.json` under `root`, assembles raw files into
/// `assembled/<id>.json`, and writes a fresh `index.json` sorted by video id.
pub fn ingest(root: &Path, vocab: Option<&ObjectVocabulary>, test_fraction: f64, seed: u64) -> Result<IngestSummary> {
    let dir = root.join(VIDEOS_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(&dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();

    let mut entries = Vec::with_capacity(paths.len());
    let mut seen = BTreeSet::new();
    let mut from_raw = 0;
    for path in paths {
        let file: VideoFile = read_json(&path)?;
        let was_raw = file.is_raw();
        let feature = file.into_feature(vocab)?;
        if !seen.insert(feature.video_id.clone()) {
            return Err(Error::InvalidValue(format!(
                "duplicate video id {:?}",
                feature.video_id
            )));
        }
        let rel = if was_raw {
            from_raw += 1;
            let rel = format!("assembled/{}.json", feature.video_id);
            write_json(&root.join(&rel), &VideoFile::assembled(&feature))?;
            rel
        } else {
            path.strip_prefix(root)
                .expect("file is under root")
                .to_string_lossy()
                .replace('\\', "/")
        };
        entries.push(IndexEntry {
            video_id: feature.video_id,
            class_label: feature.class_label,
            file: rel,
            split: Split::Train,
        });
    }
    entries.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    assign_splits(&mut entries, test_fraction, seed)?;
    let summary = IngestSummary {
        videos: entries.len(),
        assembled_from_raw: from_raw,
        classes: entries
            .iter()
            .filter_map(|e| e.class_label.as_ref())
            .collect::<BTreeSet<_>>()
            .len(),
        test_videos: entries.iter().filter(|e| e.split == Split::Test).count(),
    };
    write_json(&root.join(INDEX_FILE), &DatasetIndex { videos: entries })?;
    Ok(summary)
}
