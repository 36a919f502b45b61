mod common;

use std::sync::OnceLock;

use serde_json::json;
use vtmm_core::api::Workbench;
use vtmm_core::net::MatchingNetwork;
use vtmm_core::pairs::SynthDataset;
use vtmm_core::report::{evaluate_standalone, BaselineScores, CorrectionReport, EvaluationReport};
use vtmm_core::store::{ProjectLock, LOCK_FILE};
use vtmm_core::{AnnotatedFeature, FeatureKind, Project, ScoreMode, Split};

fn fixture() -> &'static (SynthDataset, MatchingNetwork) {
    static CELL: OnceLock<(SynthDataset, MatchingNetwork)> = OnceLock::new();
    CELL.get_or_init(|| {
        let synth = common::synth();
        let net = common::small_trained(&synth);
        (synth, net)
    })
}

fn setup() -> (tempfile::TempDir, std::sync::Arc<Workbench>) {
    let (synth, net) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let wb = common::workbench(dir.path(), synth, net, synth.annotations.clone());
    (dir, wb)
}

#[tokio::test]
async fn classes_list_counts_features_and_videos() {
    let (_d, wb) = setup();
    let (status, body) = common::call(&wb, "GET", "/v1/classes", None).await;
    assert_eq!(status, 200);
    let v = common::json(&body);
    assert_eq!(v["revision"], 1);
    let classes = v["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 5);
    assert_eq!(classes[0]["class_label"], "class_00");
    assert_eq!(classes[0]["features"], 1);
    assert_eq!(classes[0]["videos"], 20);
}

#[tokio::test]
async fn put_then_evaluate_reads_the_new_revision() {
    let (_d, wb) = setup();
    let (_, body) = common::call(&wb, "GET", "/v1/annotations", None).await;
    let mut ann = common::json(&body)["annotations"].clone();
    ann["classes"]["class_02"]
        .as_array_mut()
        .unwrap()
        .push(json!({"text": "class_00 description", "weight": -0.5}));
    let (status, body) = common::call(
        &wb,
        "PUT",
        "/v1/annotations",
        Some(json!({"annotations": ann, "note": "negative"})),
    )
    .await;
    assert_eq!(status, 200, "{}", String::from_utf8_lossy(&body));
    assert_eq!(common::json(&body), json!({"revision": 2, "parent": 1}));

    let (status, body) = common::call(&wb, "POST", "/v1/evaluate", Some(json!({"split": "test"}))).await;
    assert_eq!(status, 200);
    let report: EvaluationReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(report.revision, 2);
    assert_eq!(report.evaluation.total, 20);
}

#[tokio::test]
async fn invalid_snapshot_is_400_with_diagnostics() {
    let (_d, wb) = setup();
    let bad = json!({"annotations": {"classes": {"x": [{"text": "", "weight": 0.0}]}}});
    let (status, body) = common::call(&wb, "PUT", "/v1/annotations", Some(bad)).await;
    assert_eq!(status, 400);
    let v = common::json(&body);
    assert_eq!(v["revision"], 1);
    assert_eq!(v["error"]["kind"], "validation");
    assert_eq!(v["error"]["diagnostics"].as_array().unwrap().len(), 2);
    assert_eq!(wb.active_revision(), 1);
}

#[tokio::test]
async fn text_without_vector_is_rejected_before_commit() {
    let (_d, wb) = setup();
    let mut ann = fixture().0.annotations.clone();
    ann.classes.insert(
        "new".into(),
        vec![AnnotatedFeature::new("never embedded", 1.0, FeatureKind::CommonShort)],
    );
    let (status, _) = common::call(&wb, "PUT", "/v1/annotations", Some(json!({"annotations": ann}))).await;
    assert_eq!(status, 400);
    assert_eq!(wb.revisions().revisions.len(), 2);
}

#[tokio::test]
async fn stale_base_revision_and_held_lock_are_409() {
    let (dir, wb) = setup();
    let ann = fixture().0.annotations.clone();
    let (status, body) = common::call(
        &wb,
        "PUT",
        "/v1/annotations",
        Some(json!({"annotations": ann, "base_revision": 0})),
    )
    .await;
    assert_eq!(status, 409);
    assert_eq!(common::json(&body)["error"]["kind"], "conflict");

    let lock = ProjectLock::acquire(dir.path()).unwrap();
    let (status, _) = common::call(&wb, "PUT", "/v1/annotations", Some(json!({"annotations": ann}))).await;
    assert_eq!(status, 409);
    drop(lock);
    assert!(!dir.path().join(LOCK_FILE).exists());
    let (status, _) = common::call(&wb, "PUT", "/v1/annotations", Some(json!({"annotations": ann}))).await;
    assert_eq!(status, 200);
}

#[tokio::test]
async fn score_contract() {
    let (_d, wb) = setup();
    let (status, body) = common::call(&wb, "POST", "/v1/score", Some(json!({"video_id": "missing"}))).await;
    assert_eq!(status, 404);
    assert_eq!(common::json(&body)["error"]["kind"], "not_found");

    let (status, body) = common::call(&wb, "POST", "/v1/score", Some(json!({"video_id": "class_02_v001"}))).await;
    assert_eq!(status, 200);
    let v = common::json(&body);
    assert_eq!(v["revision"], 1);
    assert_eq!(v["truth"], "class_02");
    let scores = v["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 5);
    assert_eq!(scores[0]["per_feature"].as_array().unwrap().len(), 1);

    let one = json!({"video_id": "class_02_v001", "class": "class_04"});
    let (status, body) = common::call(&wb, "POST", "/v1/score", Some(one)).await;
    assert_eq!(status, 200);
    let v = common::json(&body);
    assert_eq!(v["scores"].as_array().unwrap().len(), 1);
    assert_eq!(
        v["scores"][0],
        scores.iter().find(|s| s["class_label"] == "class_04").unwrap().clone()
    );

    let (status, _) = common::call(
        &wb,
        "POST",
        "/v1/score",
        Some(json!({"video_id": "class_02_v001", "class": "nope"})),
    )
    .await;
    assert_eq!(status, 404);
}

#[tokio::test]
async fn repeated_score_requests_are_byte_identical() {
    let (_d, wb) = setup();
    let req = json!({"video_id": "class_01_v010"});
    let a = common::call(&wb, "POST", "/v1/score", Some(req.clone())).await;
    let b = common::call(&wb, "POST", "/v1/score", Some(req)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn malformed_requests_are_400_and_unknown_routes_404() {
    let (_d, wb) = setup();
    let (status, body) = common::call(&wb, "POST", "/v1/score", Some(json!({"video": 3}))).await;
    assert_eq!(status, 400);
    assert_eq!(common::json(&body)["error"]["kind"], "validation");
    let (status, _) = common::call(&wb, "POST", "/v1/evaluate", Some(json!({"split": "validation"}))).await;
    assert_eq!(status, 400);
    let (status, _) = common::call(&wb, "GET", "/v1/revisions/a/diff/1", None).await;
    assert_eq!(status, 400);
    let (status, body) = common::call(&wb, "GET", "/v2/nothing", None).await;
    assert_eq!(status, 404);
    assert_eq!(common::json(&body)["revision"], 1);
}

#[tokio::test]
async fn zero_lambda_correction_matches_baseline() {
    let (dir, wb) = setup();
    let synth = &fixture().0;
    let mut baseline = BaselineScores::new();
    for (i, v) in synth.dataset.select(Some(Split::Test)).iter().enumerate() {
        let scores = (0..5)
            .map(|k| (format!("class_{k:02}"), ((i * 7 + k * 3) % 11) as f64 / 11.0))
            .collect();
        baseline.insert(v.video_id.clone(), scores);
    }
    std::fs::write(dir.path().join("baseline.json"), serde_json::to_vec(&baseline).unwrap()).unwrap();

    let req = json!({"lambda": 0.0, "baseline_ref": "baseline.json"});
    let (status, body) = common::call(&wb, "POST", "/v1/correct", Some(req)).await;
    assert_eq!(status, 200, "{}", String::from_utf8_lossy(&body));
    let report: CorrectionReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(report.revision, 1);
    assert_eq!(report.corrected, report.baseline);

    let req = json!({"lambda": 1.0, "baseline_ref": "baseline.json", "softmax": true});
    let (status, body) = common::call(&wb, "POST", "/v1/correct", Some(req)).await;
    assert_eq!(status, 200);
    let report: CorrectionReport = serde_json::from_slice(&body).unwrap();
    assert!(report.softmax);
    let r = &report.videos[0].classes["class_00"];
    assert_eq!(r.s_final, r.s_origin + r.s_vtmm);

    let (status, _) = common::call(
        &wb,
        "POST",
        "/v1/correct",
        Some(json!({"baseline_ref": "missing.json"})),
    )
    .await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn revisions_and_diffs() {
    let (_d, wb) = setup();
    let mut ann = fixture().0.annotations.clone();
    ann.classes.get_mut("class_03").unwrap()[0].weight = 2.0;
    let (status, _) = common::call(
        &wb,
        "PUT",
        "/v1/annotations",
        Some(json!({"annotations": ann, "note": "reweight"})),
    )
    .await;
    assert_eq!(status, 200);

    let (_, body) = common::call(&wb, "GET", "/v1/revisions", None).await;
    let v = common::json(&body);
    assert_eq!(v["revision"], 2);
    assert_eq!(v["revisions"].as_array().unwrap().len(), 3);
    assert_eq!(v["revisions"][2]["note"], "reweight");

    let (status, body) = common::call(&wb, "GET", "/v1/revisions/1/diff/2", None).await;
    assert_eq!(status, 200);
    let v = common::json(&body);
    assert_eq!(v["classes"].as_array().unwrap().len(), 1);
    assert_eq!(v["classes"][0]["class_label"], "class_03");
    assert_eq!(v["classes"][0]["weight_changes"][0]["to"], 2.0);
    assert!(v["classes"][0]["added"].as_array().unwrap().is_empty());

    let (status, _) = common::call(&wb, "GET", "/v1/revisions/1/diff/7", None).await;
    assert_eq!(status, 404);
}

#[tokio::test]
async fn commit_prunes_embeddings_of_removed_texts() {
    let (_d, wb) = setup();
    common::call(&wb, "POST", "/v1/evaluate", Some(json!({}))).await;
    assert_eq!(wb.cached_texts(), 5);
    let mut ann = fixture().0.annotations.clone();
    ann.classes.remove("class_04");
    let (status, _) = common::call(&wb, "PUT", "/v1/annotations", Some(json!({"annotations": ann}))).await;
    assert_eq!(status, 200);
    assert_eq!(wb.cached_texts(), 4);
}

#[tokio::test]
async fn historical_revision_rescoring_is_bit_identical() {
    let (dir, wb) = setup();
    let (synth, net) = fixture();
    let (_, first) = common::call(&wb, "POST", "/v1/evaluate", Some(json!({"split": "test"}))).await;
    let mut ann = synth.annotations.clone();
    ann.classes.get_mut("class_00").unwrap()[0].weight = 3.0;
    common::call(&wb, "PUT", "/v1/annotations", Some(json!({"annotations": ann}))).await;

    let project = Project::open(dir.path()).unwrap();
    let old = &project.revision(1).unwrap().annotations;
    let again = evaluate_standalone(
        net,
        &synth.dataset,
        Some(Split::Test),
        old,
        &common::encoder(synth),
        ScoreMode::Literal,
        1,
        project.config().top_k,
    )
    .unwrap();
    assert_eq!(serde_json::to_vec(&again).unwrap(), first);
}

#[test]
fn workbench_open_requires_configured_paths() {
    let dir = tempfile::tempdir().unwrap();
    Project::open_or_init(dir.path()).unwrap();
    assert!(matches!(
        Workbench::open(dir.path()),
        Err(vtmm_core::Error::InvalidConfig(_))
    ));
}
