#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use http_body_util::BodyExt;
use tower::ServiceExt;
use vtmm_core::api::{router, Workbench};
use vtmm_core::net::{MatchingNetwork, NetDims, TrainConfig, TrainPreset};
use vtmm_core::pairs::{build_balanced, synth_dataset, EmbeddedPairs, SynthConfig, SynthDataset};
use vtmm_core::{AnnotationSet, Project, SentenceEmbedder};

pub fn synth_config() -> SynthConfig {
    SynthConfig {
        num_classes: 5,
        videos_per_class: 20,
        captions_per_video: 3,
        feature_noise: 0.3,
        test_fraction: 0.2,
        seed: 7,
    }
}

pub fn synth() -> SynthDataset {
    synth_dataset(&synth_config()).expect("synthetic dataset")
}

pub fn encoder(synth: &SynthDataset) -> SentenceEmbedder {
    let table: HashMap<String, Vec<f64>> = synth.text_embeddings.clone().into_iter().collect();
    SentenceEmbedder::precomputed(table).expect("embedding table")
}

/// Trains on the training split's captions with balanced negatives.
pub fn train(synth: &SynthDataset, dims: NetDims, cfg: &TrainConfig) -> (MatchingNetwork, Vec<f64>) {
    let enc = encoder(synth);
    let pairs = build_balanced(&synth.training_captions(), cfg.seed).expect("pairs");
    let embedded = EmbeddedPairs::new(&pairs, &synth.dataset, &enc).expect("embedded pairs");
    let mut net = MatchingNetwork::new(dims, cfg.seed).expect("network");
    let trace = net.train(&embedded.examples(), cfg).expect("training");
    (net, trace)
}

/// A narrow network that trains in a second or two; enough for plumbing tests.
pub fn small_trained(synth: &SynthDataset) -> MatchingNetwork {
    let dims = NetDims {
        joint: 64,
        head_hidden: vec![32, 16],
        ..NetDims::default()
    };
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::preset(TrainPreset::Desk, 3)
    };
    train(synth, dims, &cfg).0
}

pub fn project_with(dir: &Path, annotations: AnnotationSet) -> Project {
    let mut p = Project::open_or_init(dir).expect("project");
    p.commit_annotations(annotations, "initial").expect("commit");
    p
}

pub fn workbench(
    dir: &Path,
    synth: &SynthDataset,
    net: &MatchingNetwork,
    annotations: AnnotationSet,
) -> Arc<Workbench> {
    let project = project_with(dir, annotations);
    Arc::new(Workbench::new(
        project,
        net.clone(),
        synth.dataset.clone(),
        Box::new(encoder(synth)),
    ))
}

/// Sends one request through the router and returns (status, body bytes).
pub async fn call(wb: &Arc<Workbench>, method: &str, uri: &str, body: Option<serde_json::Value>) -> (u16, Vec<u8>) {
    let builder = axum::http::Request::builder().method(method).uri(uri);
    let request = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(axum::body::Body::from(serde_json::to_vec(&v).unwrap()))
            .unwrap(),
        None => builder.body(axum::body::Body::empty()).unwrap(),
    };
    let response = router(wb.clone()).oneshot(request).await.expect("router");
    let status = response.status().as_u16();
    let bytes = response.into_body().collect().await.expect("body").to_bytes().to_vec();
    (status, bytes)
}

pub fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("json body")
}
