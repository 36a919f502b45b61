//! Evaluation and correction reports over a dataset, plus text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::embedding::TextEncoder;
use crate::error::{Error, Result};
use crate::features::VideoFeature;
use crate::io::read_json;
use crate::net::MatchingNetwork;
use crate::scoring::{
    argmax, correct, evaluate, score_videos, softmax, AnnotationSet, ClassScoreBreakdown, CorrectionResult, Evaluation,
    Prediction, ScoreMode,
};

pub const DEFAULT_TOP_K: usize = 5;

/// `{ video_id: { class: score } }` from another classifier.
pub type BaselineScores = BTreeMap<String, BTreeMap<String, f64>>;

pub fn load_baseline(path: &Path) -> Result<BaselineScores> {
    let scores: BaselineScores = read_json(path)?;
    for (video, classes) in &scores {
        if classes.is_empty() {
            return Err(Error::InvalidValue(format!("baseline for {video:?} has no classes")));
        }
        if let Some((class, v)) = classes.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "baseline score {v} for {video:?}/{class:?}"
            )));
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoBreakdown {
    pub video_id: String,
    pub truth: String,
    pub predicted: String,
    /// The best `top_k` classes, best first.
    pub top: Vec<ClassScoreBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub revision: u64,
    pub mode: ScoreMode,
    /// `None` means every labelled video.
    pub split: Option<Split>,
    pub top_k: usize,
    #[serde(flatten)]
    pub evaluation: Evaluation,
    pub videos: Vec<VideoBreakdown>,
}

fn labelled(dataset: &Dataset, split: Option<Split>) -> Vec<&VideoFeature> {
    dataset
        .select(split)
        .into_iter()
        .filter(|v| v.class_label.is_some())
        .collect()
}

/// Classifies every labelled video of `split` from the annotations alone.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_standalone(
    net: &MatchingNetwork,
    dataset: &Dataset,
    split: Option<Split>,
    annotations: &AnnotationSet,
    encoder: &dyn TextEncoder,
    mode: ScoreMode,
    revision: u64,
    top_k: usize,
) -> Result<EvaluationReport> {
    if annotations.classes.is_empty() {
        return Err(Error::NoFeatures("<any>".into()));
    }
    let videos = labelled(dataset, split);
    if videos.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let scores = score_videos(net, &videos, annotations, encoder, mode)?;
    let mut predictions = Vec::with_capacity(videos.len());
    let mut breakdowns = Vec::with_capacity(videos.len());
    for (video, mut ranked) in videos.iter().zip(scores) {
        let truth = video.class_label.clone().expect("filtered to labelled videos");
        let predicted = ranked[0].class_label.clone();
        predictions.push(Prediction {
            video_id: video.video_id.clone(),
            predicted: predicted.clone(),
            truth: truth.clone(),
        });
        ranked.truncate(top_k.max(1));
        breakdowns.push(VideoBreakdown {
            video_id: video.video_id.clone(),
            truth,
            predicted,
            top: ranked,
        });
    }
    Ok(EvaluationReport {
        revision,
        mode,
        split,
        top_k,
        evaluation: evaluate(&predictions)?,
        videos: breakdowns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedVideo {
    pub video_id: String,
    pub truth: String,
    pub baseline_prediction: String,
    pub predicted: String,
    pub classes: BTreeMap<String, CorrectionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub revision: u64,
    pub mode: ScoreMode,
    pub lambda: f64,
    /// Whether baseline scores were softmax-normalised per video first.
    pub softmax: bool,
    pub baseline: Evaluation,
    pub corrected: Evaluation,
    pub videos: Vec<CorrectedVideo>,
}

/// Adds `lambda` times the annotation score to every baseline score and
/// evaluates both. Only videos present in `baseline` are used.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_corrected(
    net: &MatchingNetwork,
    dataset: &Dataset,
    annotations: &AnnotationSet,
    encoder: &dyn TextEncoder,
    mode: ScoreMode,
    baseline: &BaselineScores,
    lambda: f64,
    use_softmax: bool,
    revision: u64,
) -> Result<CorrectionReport> {
    if !lambda.is_finite() {
        return Err(Error::InvalidValue(format!("lambda {lambda} is not finite")));
    }
    let mut videos = Vec::with_capacity(baseline.len());
    for id in baseline.keys() {
        let v = dataset.get(id).ok_or_else(|| Error::UnknownVideo(id.clone()))?;
        if v.class_label.is_none() {
            return Err(Error::InvalidValue(format!(
                "video {id:?} has no class label to evaluate against"
            )));
        }
        videos.push(v);
    }
    if videos.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let vtmm = if annotations.classes.is_empty() {
        vec![Vec::new(); videos.len()]
    } else {
        score_videos(net, &videos, annotations, encoder, mode)?
    };

    let mut base_predictions = Vec::new();
    let mut corrected_predictions = Vec::new();
    let mut out = Vec::new();
    for (video, ranked) in videos.iter().zip(vtmm) {
        let raw = &baseline[&video.video_id];
        let origin = if use_softmax { softmax(raw) } else { raw.clone() };
        let vtmm_scores: BTreeMap<String, f64> = ranked.into_iter().map(|b| (b.class_label, b.s)).collect();
        let results = correct(&origin, &vtmm_scores, lambda)?;
        let truth = video.class_label.clone().expect("checked above");
        let base_pred = argmax(origin.iter().map(|(c, s)| (c.as_str(), *s)))
            .expect("nonempty")
            .to_string();
        let pred = argmax(results.iter().map(|(c, r)| (c.as_str(), r.s_final)))
            .expect("nonempty")
            .to_string();
        base_predictions.push(Prediction {
            video_id: video.video_id.clone(),
            predicted: base_pred.clone(),
            truth: truth.clone(),
        });
        corrected_predictions.push(Prediction {
            video_id: video.video_id.clone(),
            predicted: pred.clone(),
            truth: truth.clone(),
        });
        out.push(CorrectedVideo {
            video_id: video.video_id.clone(),
            truth,
            baseline_prediction: base_pred,
            predicted: pred,
            classes: results,
        });
    }
    Ok(CorrectionReport {
        revision,
        mode,
        lambda,
        softmax: use_softmax,
        baseline: evaluate(&base_predictions)?,
        corrected: evaluate(&corrected_predictions)?,
        videos: out,
    })
}

fn render_confusion(out: &mut String, e: &Evaluation) {
    let width = e.classes.iter().map(String::len).max().unwrap_or(0).max(5);
    let _ = write!(out, "{:width$}", "");
    for j in 0..e.classes.len() {
        let _ = write!(out, " {:>5}", j);
    }
    out.push('\n');
    for (i, row) in e.confusion.iter().enumerate() {
        let _ = write!(out, "{:width$}", e.classes[i]);
        for c in row {
            let _ = write!(out, " {c:>5}");
        }
        let _ = writeln!(out);
    }
    out.push_str("per-class accuracy:\n");
    for (class, acc) in &e.per_class_accuracy {
        let _ = writeln!(out, "  {class:width$} {:>7.2}%", 100.0 * acc);
    }
}

pub fn render_evaluation(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let e = &report.evaluation;
    let _ = writeln!(
        out,
        "revision {}  mode {}  accuracy {:.2}% ({}/{})",
        report.revision,
        format!("{:?}", report.mode).to_lowercase(),
        100.0 * e.accuracy,
        e.correct,
        e.total
    );
    render_confusion(&mut out, e);
    let wrong: Vec<_> = report.videos.iter().filter(|v| v.truth != v.predicted).collect();
    if !wrong.is_empty() {
        out.push_str("misclassified:\n");
        for v in wrong {
            let _ = writeln!(out, "  {} {} -> {}", v.video_id, v.truth, v.predicted);
        }
    }
    out
}

pub fn render_correction(report: &CorrectionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "revision {}  lambda {}  softmax {}\nbaseline accuracy {:.2}%  corrected accuracy {:.2}%",
        report.revision,
        report.lambda,
        report.softmax,
        100.0 * report.baseline.accuracy,
        100.0 * report.corrected.accuracy
    );
    render_confusion(&mut out, &report.corrected);
    out
}
