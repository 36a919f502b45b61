//! Pretraining pairs (video with its own caption vs. a caption from another
//! class) and a synthetic dataset generator.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{assign_splits, Dataset, IndexEntry, Split, CAPTIONS_FILE, TEXT_EMBEDDINGS_FILE, VIDEOS_DIR};
use crate::embedding::{TextEncoder, TEXT_DIM};
use crate::error::{Error, Result};
use crate::features::{VideoFeature, VIDEO_DIM};
use crate::io::{read_json, write_json};
use crate::net::Example;
use crate::scoring::{AnnotatedFeature, AnnotationSet, FeatureKind};

pub const ANNOTATIONS_FILE: &str = "annotations.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionedVideo {
    pub video_id: String,
    pub class_label: String,
    pub captions: Vec<String>,
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionedVideo>> {
    let videos: Vec<CaptionedVideo> = read_json(path)?;
    for v in &videos {
        if v.class_label.trim().is_empty() || v.captions.is_empty() {
            return Err(Error::InvalidValue(format!(
                "{}: video {:?} needs a class label and at least one caption",
                path.display(),
                v.video_id
            )));
        }
    }
    Ok(videos)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub video_id: String,
    pub text: String,
    pub label: u8,
}

/// One label-1 pair per (video, caption).
pub fn build_positives(videos: &[CaptionedVideo]) -> Vec<TrainingPair> {
    videos
        .iter()
        .flat_map(|v| {
            v.captions.iter().map(|c| TrainingPair {
                video_id: v.video_id.clone(),
                text: c.clone(),
                label: 1,
            })
        })
        .collect()
}

/// `count` label-0 pairs. Each draws a video uniformly, then a caption uniformly
/// from all captions of other classes (with replacement).
pub fn build_negatives(videos: &[CaptionedVideo], count: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    let mut order: Vec<&CaptionedVideo> = videos.iter().collect();
    order.sort_by(|a, b| a.class_label.cmp(&b.class_label));
    // Captions grouped by class, so each class owns one contiguous block.
    let mut pool: Vec<&str> = Vec::new();
    let mut blocks: HashMap<&str, (usize, usize)> = HashMap::new();
    for v in &order {
        let start = pool.len();
        pool.extend(v.captions.iter().map(String::as_str));
        blocks
            .entry(v.class_label.as_str())
            .and_modify(|b| b.1 = pool.len())
            .or_insert((start, pool.len()));
    }
    if blocks.len() < 2 {
        return Err(Error::SingleClassDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let video = &videos[rng.random_range(0..videos.len())];
        let (start, end) = blocks[video.class_label.as_str()];
        let mut idx = rng.random_range(0..pool.len() - (end - start));
        if idx >= start {
            idx += end - start;
        }
        out.push(TrainingPair {
            video_id: video.video_id.clone(),
            text: pool[idx].to_string(),
            label: 0,
        });
    }
    Ok(out)
}

/// Positives followed by the same number of negatives.
pub fn build_balanced(videos: &[CaptionedVideo], seed: u64) -> Result<Vec<TrainingPair>> {
    let mut pairs = build_positives(videos);
    let negatives = build_negatives(videos, pairs.len(), seed)?;
    pairs.extend(negatives);
    Ok(pairs)
}

/// Training pairs with each distinct caption embedded once.
#[derive(Debug, Clone)]
pub struct EmbeddedPairs<'a> {
    dataset: &'a Dataset,
    text_vectors: Vec<Vec<f64>>,
    /// (feature index into `dataset`, text index, label)
    items: Vec<(usize, usize, f64)>,
}

impl<'a> EmbeddedPairs<'a> {
    pub fn new(pairs: &[TrainingPair], dataset: &'a Dataset, encoder: &dyn TextEncoder) -> Result<Self> {
        let index: HashMap<&str, usize> = dataset
            .features()
            .iter()
            .enumerate()
            .map(|(i, f)| (f.video_id.as_str(), i))
            .collect();
        let mut text_ids: HashMap<&str, usize> = HashMap::new();
        let mut text_vectors = Vec::new();
        let mut items = Vec::with_capacity(pairs.len());
        for p in pairs {
            let vi = *index
                .get(p.video_id.as_str())
                .ok_or_else(|| Error::UnknownVideo(p.video_id.clone()))?;
            let ti = match text_ids.get(p.text.as_str()) {
                Some(&t) => t,
                None => {
                    text_vectors.push(encoder.encode(&p.text)?);
                    text_ids.insert(&p.text, text_vectors.len() - 1);
                    text_vectors.len() - 1
                }
            };
            items.push((vi, ti, f64::from(p.label)));
        }
        Ok(Self {
            dataset,
            text_vectors,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn distinct_texts(&self) -> usize {
        self.text_vectors.len()
    }

    pub fn examples(&self) -> Vec<Example<'_>> {
        self.items
            .iter()
            .map(|&(v, t, label)| Example {
                video: self.dataset.features()[v].vector(),
                text: &self.text_vectors[t],
                label,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub videos_per_class: usize,
    pub captions_per_video: usize,
    /// Standard deviation of the per-component Gaussian noise; prototypes are N(0, 1).
    pub feature_noise: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            videos_per_class: 20,
            captions_per_video: 3,
            feature_noise: 0.3,
            test_fraction: 0.2,
            seed: 7,
        }
    }
}

/// A generated dataset together with everything needed to train and score on it.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub captions: Vec<CaptionedVideo>,
    /// Vector of every caption and annotation text.
    pub text_embeddings: BTreeMap<String, Vec<f64>>,
    /// One description per class, embedded near that class's text prototype.
    pub annotations: AnnotationSet,
    pub video_prototypes: Vec<Vec<f64>>,
    pub text_prototypes: Vec<Vec<f64>>,
}

pub fn synth_class_label(k: usize) -> String {
    format!("class_{k:02}")
}

/// Each class gets a random video prototype (2480) and text prototype (768);
/// videos, captions and class descriptions are prototype plus Gaussian noise.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.num_classes < 2 {
        return Err(Error::InvalidConfig(
            "synthetic datasets need at least two classes".into(),
        ));
    }
    if cfg.captions_per_video == 0 {
        return Err(Error::InvalidConfig("need at least one caption per video".into()));
    }
    if !(cfg.feature_noise >= 0.0 && cfg.feature_noise.is_finite()) {
        return Err(Error::InvalidConfig(format!("bad noise level {}", cfg.feature_noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gaussian = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let video_prototypes: Vec<Vec<f64>> = (0..cfg.num_classes).map(|_| gaussian(VIDEO_DIM)).collect();
    let text_prototypes: Vec<Vec<f64>> = (0..cfg.num_classes).map(|_| gaussian(TEXT_DIM)).collect();
    let noisy = |proto: &[f64], noise: Vec<f64>| -> Vec<f64> {
        proto
            .iter()
            .zip(noise)
            .map(|(p, e)| p + cfg.feature_noise * e)
            .collect()
    };

    let mut entries = Vec::new();
    let mut features = Vec::new();
    let mut captions = Vec::new();
    let mut text_embeddings = BTreeMap::new();
    let mut annotations = AnnotationSet::default();
    for k in 0..cfg.num_classes {
        let class = synth_class_label(k);
        for v in 0..cfg.videos_per_class {
            let video_id = format!("{class}_v{v:03}");
            let vector = noisy(&video_prototypes[k], gaussian(VIDEO_DIM));
            features.push(VideoFeature::from_vector(&video_id, Some(class.clone()), vector)?);
            entries.push(IndexEntry {
                video_id: video_id.clone(),
                class_label: Some(class.clone()),
                file: format!("{VIDEOS_DIR}/{video_id}.json"),
                split: Split::Train,
            });
            let texts: Vec<String> = (0..cfg.captions_per_video)
                .map(|c| format!("{video_id} caption {c}"))
                .collect();
            for t in &texts {
                text_embeddings.insert(t.clone(), noisy(&text_prototypes[k], gaussian(TEXT_DIM)));
            }
            captions.push(CaptionedVideo {
                video_id,
                class_label: class.clone(),
                captions: texts,
            });
        }
        let description = format!("{class} description");
        text_embeddings.insert(description.clone(), noisy(&text_prototypes[k], gaussian(TEXT_DIM)));
        annotations.classes.insert(
            class,
            vec![AnnotatedFeature::new(description, 1.0, FeatureKind::LongSentence)],
        );
    }
    assign_splits(&mut entries, cfg.test_fraction, cfg.seed)?;
    Ok(SynthDataset {
        dataset: Dataset::from_parts(entries, features)?,
        captions,
        text_embeddings,
        annotations,
        video_prototypes,
        text_prototypes,
    })
}

impl SynthDataset {
    /// Captions of training-split videos only.
    pub fn training_captions(&self) -> Vec<CaptionedVideo> {
        self.captions
            .iter()
            .filter(|c| self.dataset.split_of(&c.video_id) == Some(Split::Train))
            .cloned()
            .collect()
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        self.dataset.write(root)?;
        write_json(&root.join(CAPTIONS_FILE), &self.captions)?;
        write_json(&root.join(TEXT_EMBEDDINGS_FILE), &self.text_embeddings)?;
        self.annotations.save(&root.join(ANNOTATIONS_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn captioned(id: &str, class: &str, n: usize) -> CaptionedVideo {
        CaptionedVideo {
            video_id: id.into(),
            class_label: class.into(),
            captions: (0..n).map(|i| format!("{class} {id} {i}")).collect(),
        }
    }

    #[test]
    fn positive_counts() {
        assert_eq!(build_positives(&[captioned("v", "A", 10)]).len(), 10);
        assert!(build_positives(&[]).is_empty());
        let three: Vec<_> = (0..3).map(|i| captioned(&i.to_string(), "A", 2)).collect();
        let p = build_positives(&three);
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|x| x.label == 1));
    }

    #[test]
    fn negatives_need_two_classes() {
        let videos = [captioned("1", "A", 2), captioned("2", "A", 2)];
        assert!(matches!(build_negatives(&videos, 3, 0), Err(Error::SingleClassDataset)));
    }

    #[test]
    fn negatives_cross_classes_and_are_seeded() {
        let videos = [
            captioned("1", "B", 2),
            captioned("2", "A", 3),
            captioned("3", "C", 1),
            captioned("4", "A", 2),
        ];
        let class_of_text: HashMap<String, String> = videos
            .iter()
            .flat_map(|v| v.captions.iter().map(|c| (c.clone(), v.class_label.clone())))
            .collect();
        let class_of_video: HashMap<&str, &str> = videos
            .iter()
            .map(|v| (v.video_id.as_str(), v.class_label.as_str()))
            .collect();
        let neg = build_negatives(&videos, 500, 9).unwrap();
        assert_eq!(neg.len(), 500);
        for p in &neg {
            assert_eq!(p.label, 0);
            assert_ne!(class_of_text[&p.text], class_of_video[p.video_id.as_str()]);
        }
        // Every foreign caption is reachable.
        let used: HashSet<&str> = neg.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(used.len(), 8);
        assert_eq!(neg, build_negatives(&videos, 500, 9).unwrap());
    }

    #[test]
    fn balanced_is_half_positive() {
        let videos = [captioned("1", "A", 3), captioned("2", "B", 1)];
        let pairs = build_balanced(&videos, 1).unwrap();
        assert_eq!(pairs.len(), 8);
        assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), 4);
    }

    fn small_cfg(noise: f64) -> SynthConfig {
        SynthConfig {
            num_classes: 3,
            videos_per_class: 4,
            captions_per_video: 2,
            feature_noise: noise,
            test_fraction: 0.25,
            seed: 3,
        }
    }

    #[test]
    fn zero_noise_videos_equal_prototype() {
        let s = synth_dataset(&small_cfg(0.0)).unwrap();
        for f in s.dataset.features() {
            let k: usize = f.class_label.as_ref().unwrap()[6..].parse().unwrap();
            assert_eq!(f.vector(), &s.video_prototypes[k][..]);
        }
    }

    #[test]
    fn synth_counts_and_determinism() {
        let cfg = SynthConfig {
            num_classes: 5,
            videos_per_class: 20,
            captions_per_video: 3,
            test_fraction: 0.2,
            ..small_cfg(0.1)
        };
        let a = synth_dataset(&cfg).unwrap();
        assert_eq!(build_positives(&a.captions).len(), 300);
        assert_eq!(a.dataset.select(Some(Split::Test)).len(), 20);
        let b = synth_dataset(&cfg).unwrap();
        assert_eq!(a.text_embeddings, b.text_embeddings);
        assert_eq!(a.dataset.features(), b.dataset.features());
        assert_eq!(a.annotations, b.annotations);
    }

    #[test]
    fn synth_rejects_single_class() {
        assert!(synth_dataset(&SynthConfig {
            num_classes: 1,
            ..small_cfg(0.1)
        })
        .is_err());
    }

    #[test]
    fn embedded_pairs_cache_texts() {
        let s = synth_dataset(&small_cfg(0.1)).unwrap();
        let encoder =
            crate::embedding::SentenceEmbedder::precomputed(s.text_embeddings.clone().into_iter().collect()).unwrap();
        let pairs = build_balanced(&s.captions, 0).unwrap();
        let embedded = EmbeddedPairs::new(&pairs, &s.dataset, &encoder).unwrap();
        assert_eq!(embedded.len(), pairs.len());
        assert!(embedded.distinct_texts() <= 3 * 4 * 2);
        let ex = embedded.examples();
        assert_eq!(ex[0].label, 1.0);
        assert_eq!(ex[0].text.len(), TEXT_DIM);
    }
}
