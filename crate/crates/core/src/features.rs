//! Assembly of the per-video feature vector `[objects | skeleton | visual]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{LabelHierarchy, WordEmbeddingTable, WORD_DIM};
use crate::error::{Error, Result};
use crate::io::ensure_finite;

/// Number of object labels kept per video.
pub const TOP_OBJECTS: usize = 4;
pub const OBJECT_DIM: usize = TOP_OBJECTS * WORD_DIM;
pub const SKELETON_DIM: usize = 256;
pub const VISUAL_DIM: usize = 1024;
pub const VIDEO_DIM: usize = OBJECT_DIM + SKELETON_DIM + VISUAL_DIM;

/// Penultimate-layer visual feature of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVisual(Vec<f64>);

impl FrameVisual {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != VISUAL_DIM {
            return Err(Error::dims("visual frame", VISUAL_DIM, values.len()));
        }
        ensure_finite("visual frame", &values)?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Object label → classifier probability for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObjectScores(BTreeMap<String, f64>);

impl FrameObjectScores {
    pub fn new(scores: BTreeMap<String, f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidValue("object frame has no entries".into()));
        }
        if let Some((label, p)) = scores.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidValue(format!(
                "object {label:?} has probability {p} outside [0, 1]"
            )));
        }
        Ok(Self(scores))
    }

    pub fn scores(&self) -> &BTreeMap<String, f64> {
        &self.0
    }
}

/// Skeleton-motion feature of a whole video.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFeature(Vec<f64>);

impl SkeletonFeature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != SKELETON_DIM {
            return Err(Error::dims("skeleton feature", SKELETON_DIM, values.len()));
        }
        ensure_finite("skeleton feature", &values)?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// The 2480-dimensional description of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFeature {
    pub video_id: String,
    pub class_label: Option<String>,
    vector: Vec<f64>,
}

impl VideoFeature {
    pub fn from_vector(video_id: impl Into<String>, class_label: Option<String>, vector: Vec<f64>) -> Result<Self> {
        let video_id = video_id.into();
        if vector.len() != VIDEO_DIM {
            return Err(Error::dims(
                format!("video feature {video_id:?}"),
                VIDEO_DIM,
                vector.len(),
            ));
        }
        ensure_finite(&format!("video feature {video_id:?}"), &vector)?;
        Ok(Self {
            video_id,
            class_label,
            vector,
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn object_part(&self) -> &[f64] {
        &self.vector[..OBJECT_DIM]
    }

    pub fn skeleton_part(&self) -> &[f64] {
        &self.vector[OBJECT_DIM..OBJECT_DIM + SKELETON_DIM]
    }

    pub fn visual_part(&self) -> &[f64] {
        &self.vector[OBJECT_DIM + SKELETON_DIM..]
    }
}

/// Component-wise mean of per-frame visual vectors.
pub fn average_visual(frames: &[FrameVisual]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::EmptyFrameList);
    }
    let mut sum = vec![0.0; VISUAL_DIM];
    for frame in frames {
        for (s, v) in sum.iter_mut().zip(frame.values()) {
            *s += v;
        }
    }
    let n = frames.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Averages each label's probability over all frames (0 where a frame lacks the
/// label) and returns the `k` best, highest first, ties by label.
pub fn top_objects(frames: &[FrameObjectScores], k: usize) -> Result<Vec<(String, f64)>> {
    if frames.is_empty() {
        return Err(Error::EmptyFrameList);
    }
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for frame in frames {
        for (label, p) in frame.scores() {
            *sums.entry(label).or_default() += p;
        }
    }
    if sums.len() < k {
        return Err(Error::TooFewObjects {
            needed: k,
            available: sums.len(),
        });
    }
    let n = frames.len() as f64;
    let mut means: Vec<(String, f64)> = sums.into_iter().map(|(label, s)| (label.to_string(), s / n)).collect();
    means.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    means.truncate(k);
    Ok(means)
}

/// Raw per-frame inputs for one video.
#[derive(Debug, Clone)]
pub struct RawVideo {
    pub visual_frames: Vec<FrameVisual>,
    pub object_frames: Vec<FrameObjectScores>,
    pub skeleton: SkeletonFeature,
}

/// Builds the feature vector: the word vectors of the top-4 objects (resolved
/// through the hierarchy when missing), then skeleton, then the mean visual vector.
pub fn assemble(
    raw: &RawVideo,
    table: &WordEmbeddingTable,
    hierarchy: &LabelHierarchy,
    video_id: impl Into<String>,
    class_label: Option<String>,
) -> Result<VideoFeature> {
    let visual = average_visual(&raw.visual_frames)?;
    let objects = top_objects(&raw.object_frames, TOP_OBJECTS)?;
    let mut vector = Vec::with_capacity(VIDEO_DIM);
    for (label, _) in &objects {
        let (_, v) = table.resolve_with_fallback(hierarchy, label)?;
        vector.extend_from_slice(v);
    }
    vector.extend_from_slice(raw.skeleton.values());
    vector.extend_from_slice(&visual);
    VideoFeature::from_vector(video_id, class_label, vector)
}
