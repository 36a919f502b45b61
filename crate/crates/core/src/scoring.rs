//! Per-class aggregation of feature matching degrees, standalone
//! classification, baseline correction, and accuracy metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embedding::TextEncoder;
use crate::error::{Diagnostic, Error, Result};
use crate::features::VideoFeature;
use crate::io::{read_json, write_json};
use crate::net::MatchingNetwork;

/// Correction factor used when none is given.
pub const DEFAULT_LAMBDA: f64 = 1.0;

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    #[default]
    LongSentence,
    CommonShort,
}

/// A text feature attached to a class. Positive weights mark supporting
/// evidence, negative weights counter-indicative evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedFeature {
    pub text: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub kind: FeatureKind,
}

impl AnnotatedFeature {
    pub fn new(text: impl Into<String>, weight: f64, kind: FeatureKind) -> Self {
        Self {
            text: text.into(),
            weight,
            kind,
        }
    }
}

/// A reusable short phrase ("indoor", "standing", ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonFeature {
    pub text: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

/// The annotation file: a pool of common phrases and each class's features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AnnotationSet {
    #[serde(default)]
    pub common_features: Vec<CommonFeature>,
    #[serde(default)]
    pub classes: BTreeMap<String, Vec<AnnotatedFeature>>,
}

impl AnnotationSet {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Checks texts are nonempty, weights finite and nonzero, no class list is
    /// empty, and no `(text, kind)` appears twice within a class.
    pub fn validate(&self) -> Result<()> {
        let mut diags = Vec::new();
        let mut check = |class: &str, index: Option<usize>, text: &str, weight: f64| {
            if text.trim().is_empty() {
                diags.push(Diagnostic {
                    class_label: class.to_string(),
                    index,
                    message: "text is empty".into(),
                });
            }
            if weight == 0.0 || !weight.is_finite() {
                diags.push(Diagnostic {
                    class_label: class.to_string(),
                    index,
                    message: format!("weight {weight} must be finite and nonzero"),
                });
            }
        };
        for (i, c) in self.common_features.iter().enumerate() {
            check("<common>", Some(i), &c.text, c.weight);
        }
        for (class, features) in &self.classes {
            for (i, f) in features.iter().enumerate() {
                check(class, Some(i), &f.text, f.weight);
            }
        }
        for (class, features) in &self.classes {
            if class.trim().is_empty() {
                diags.push(Diagnostic {
                    class_label: class.clone(),
                    index: None,
                    message: "class label is empty".into(),
                });
            }
            if features.is_empty() {
                diags.push(Diagnostic {
                    class_label: class.clone(),
                    index: None,
                    message: "class has no features".into(),
                });
            }
            let mut seen = HashMap::new();
            for (i, f) in features.iter().enumerate() {
                if let Some(first) = seen.insert((f.text.as_str(), f.kind), i) {
                    diags.push(Diagnostic {
                        class_label: class.clone(),
                        index: Some(i),
                        message: format!("duplicate of feature {first}"),
                    });
                }
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(Error::ValidationFailed(diags))
        }
    }

    /// Every distinct class-feature text, sorted.
    pub fn feature_texts(&self) -> BTreeSet<&str> {
        self.classes.values().flatten().map(|f| f.text.as_str()).collect()
    }
}

/// How the positive and negative group means combine into a class score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `s = s_p + s_n`, exactly as the aggregation is defined.
    #[default]
    Literal,
    /// `s = s_p - s_n`, so counter-indicative features lower the score.
    Subtractive,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "subtractive" => Ok(Self::Subtractive),
            other => Err(Error::InvalidConfig(format!(
                "unknown score mode {other:?} (expected literal or subtractive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDegree {
    pub text: String,
    pub kind: FeatureKind,
    pub weight: f64,
    pub degree: f64,
}

/// Score of one video against one class, with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScoreBreakdown {
    pub class_label: String,
    /// Weighted mean degree over positive-weight features (0 if there are none).
    pub s_p: f64,
    /// Weighted mean degree over negative-weight features (0 if there are none).
    pub s_n: f64,
    pub s: f64,
    pub per_feature: Vec<FeatureDegree>,
}

/// Aggregates one class's feature degrees into `s_p`, `s_n` and `s`.
pub fn class_score(
    class_label: &str,
    features: &[AnnotatedFeature],
    degrees: &[f64],
    mode: ScoreMode,
) -> Result<ClassScoreBreakdown> {
    if features.is_empty() {
        return Err(Error::NoFeatures(class_label.to_string()));
    }
    if features.len() != degrees.len() {
        return Err(Error::dims(
            format!("degrees for class {class_label:?}"),
            features.len(),
            degrees.len(),
        ));
    }
    let (mut num_p, mut den_p, mut num_n, mut den_n) = (0.0, 0.0, 0.0, 0.0);
    for (f, &d) in features.iter().zip(degrees) {
        if f.weight > 0.0 {
            num_p += f.weight * d;
            den_p += f.weight;
        } else {
            num_n += f.weight * d;
            den_n += f.weight;
        }
    }
    let has_pos = features.iter().any(|f| f.weight > 0.0);
    let has_neg = features.iter().any(|f| f.weight < 0.0);
    let s_p = if has_pos { num_p / den_p } else { 0.0 };
    let s_n = if has_neg { num_n / den_n } else { 0.0 };
    let s = match mode {
        ScoreMode::Literal => s_p + s_n,
        ScoreMode::Subtractive => s_p - s_n,
    };
    Ok(ClassScoreBreakdown {
        class_label: class_label.to_string(),
        s_p,
        s_n,
        s,
        per_feature: features
            .iter()
            .zip(degrees)
            .map(|(f, &degree)| FeatureDegree {
                text: f.text.clone(),
                kind: f.kind,
                weight: f.weight,
                degree,
            })
            .collect(),
    })
}

/// Sorts by descending score, ties broken by class label.
pub fn rank(breakdowns: &mut [ClassScoreBreakdown]) {
    breakdowns.sort_by(|a, b| b.s.total_cmp(&a.s).then_with(|| a.class_label.cmp(&b.class_label)));
}

/// Scores each video against every annotated class; each inner list is ranked.
/// Text vectors are computed once per distinct text and the network is run on
/// the full video × text grid.
pub fn score_videos(
    net: &MatchingNetwork,
    videos: &[&VideoFeature],
    annotations: &AnnotationSet,
    encoder: &dyn TextEncoder,
    mode: ScoreMode,
) -> Result<Vec<Vec<ClassScoreBreakdown>>> {
    if let Some((class, _)) = annotations.classes.iter().find(|(_, f)| f.is_empty()) {
        return Err(Error::NoFeatures(class.clone()));
    }
    let texts: Vec<&str> = annotations.feature_texts().into_iter().collect();
    let column: HashMap<&str, usize> = texts.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let text_dim = net.dims().text_in;
    let mut text_matrix = Array2::zeros((texts.len(), text_dim));
    for (mut row, text) in text_matrix.rows_mut().into_iter().zip(&texts) {
        let v = encoder.encode(text)?;
        if v.len() != text_dim {
            return Err(Error::dims(format!("text vector {text:?}"), text_dim, v.len()));
        }
        row.assign(&ndarray::ArrayView1::from(&v[..]));
    }
    let video_rows: Vec<&[f64]> = videos.iter().map(|v| v.vector()).collect();
    let video_matrix = crate::net::rows_from_slices(&video_rows, net.dims().video_in);
    let degrees = net.degree_matrix(video_matrix.view(), text_matrix.view())?;

    let mut out = Vec::with_capacity(videos.len());
    for row in degrees.rows() {
        let mut scores = annotations
            .classes
            .iter()
            .map(|(class, features)| {
                let d: Vec<f64> = features.iter().map(|f| row[column[f.text.as_str()]]).collect();
                class_score(class, features, &d, mode)
            })
            .collect::<Result<Vec<_>>>()?;
        rank(&mut scores);
        out.push(scores);
    }
    Ok(out)
}

/// Ranked class scores for one video using the annotations alone.
pub fn classify_standalone(
    net: &MatchingNetwork,
    video: &VideoFeature,
    annotations: &AnnotationSet,
    encoder: &dyn TextEncoder,
    mode: ScoreMode,
) -> Result<Vec<ClassScoreBreakdown>> {
    if annotations.classes.is_empty() {
        return Err(Error::NoFeatures("<any>".into()));
    }
    Ok(score_videos(net, &[video], annotations, encoder, mode)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub class_label: String,
    pub s_origin: f64,
    pub s_vtmm: f64,
    pub lambda: f64,
    pub s_final: f64,
}

/// `S_final = S_origin + lambda * S_VTMM` for every baseline class; classes
/// without annotations contribute `S_VTMM = 0`.
pub fn correct(
    baseline: &BTreeMap<String, f64>,
    vtmm: &BTreeMap<String, f64>,
    lambda: f64,
) -> Result<BTreeMap<String, CorrectionResult>> {
    if let Some(class) = vtmm.keys().find(|c| !baseline.contains_key(*c)) {
        return Err(Error::UnknownClassInVTMM(class.clone()));
    }
    Ok(baseline
        .iter()
        .map(|(class, &s_origin)| {
            let s_vtmm = vtmm.get(class).copied().unwrap_or(0.0);
            let result = CorrectionResult {
                class_label: class.clone(),
                s_origin,
                s_vtmm,
                lambda,
                s_final: s_origin + lambda * s_vtmm,
            };
            (class.clone(), result)
        })
        .collect())
}

/// Highest-scoring key, ties broken by the smaller key.
pub fn argmax<'a, I>(scores: I) -> Option<&'a str>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    scores
        .into_iter()
        .fold(None, |best: Option<(&str, f64)>, (k, v)| match best {
            Some((bk, bv)) if bv > v || (bv == v && bk <= k) => Some((bk, bv)),
            _ => Some((k, v)),
        })
        .map(|(k, _)| k)
}

/// Numerically stable softmax over one video's class scores.
pub fn softmax(scores: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.values().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    scores.keys().cloned().zip(exp.into_iter().map(|e| e / total)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub predicted: String,
    pub truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Row/column labels of `confusion`: every truth or predicted class, sorted.
    pub classes: Vec<String>,
    /// `confusion[i][j]` counts videos of class `i` predicted as class `j`.
    pub confusion: Vec<Vec<u64>>,
    /// Diagonal over row sum, for every class that occurs as a truth label.
    pub per_class_accuracy: BTreeMap<String, f64>,
}

impl Evaluation {
    /// Confusion count for (truth, predicted), 0 for unseen labels.
    pub fn count(&self, truth: &str, predicted: &str) -> u64 {
        let idx = |c: &str| self.classes.iter().position(|x| x == c);
        match (idx(truth), idx(predicted)) {
            (Some(i), Some(j)) => self.confusion[i][j],
            _ => 0,
        }
    }
}

pub fn evaluate(predictions: &[Prediction]) -> Result<Evaluation> {
    if predictions.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let classes: Vec<String> = predictions
        .iter()
        .flat_map(|p| [p.truth.clone(), p.predicted.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    for p in predictions {
        confusion[index[p.truth.as_str()]][index[p.predicted.as_str()]] += 1;
    }
    let correct = predictions.iter().filter(|p| p.truth == p.predicted).count();
    let per_class_accuracy = classes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let row: u64 = confusion[i].iter().sum();
            (row > 0).then(|| (c.clone(), confusion[i][i] as f64 / row as f64))
        })
        .collect();
    Ok(Evaluation {
        total: predictions.len(),
        correct,
        accuracy: correct as f64 / predictions.len() as f64,
        classes,
        confusion,
        per_class_accuracy,
    })
}
