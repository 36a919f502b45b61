use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;

use vtmm_core::api::{serve, Workbench};
use vtmm_core::dataset::{self, ObjectVocabulary, TEXT_EMBEDDINGS_FILE};
use vtmm_core::embedding::{LabelHierarchy, WordEmbeddingTable};
use vtmm_core::net::{gradcheck, Activation};
use vtmm_core::pairs::{build_balanced, load_captions, synth_dataset, EmbeddedPairs, SynthConfig};
use vtmm_core::report::{
    evaluate_corrected, evaluate_standalone, load_baseline, render_correction, render_evaluation, DEFAULT_TOP_K,
};
use vtmm_core::scoring::classify_standalone;
use vtmm_core::store::{EmbeddingSource, ProjectConfig};
use vtmm_core::{
    AnnotationSet, Dataset, Error, MatchingNetwork, NetDims, Project, ScoreMode, SentenceEmbedder, Split, TrainConfig,
    TrainPreset,
};

use crate::{ActivationArg, Command, Inputs, Preset, RevisionAction, EXIT_THRESHOLD};

pub(crate) fn run(command: Command) -> Result<u8> {
    match command {
        Command::Synth {
            out,
            classes,
            videos_per_class,
            captions_per_video,
            noise,
            test_fraction,
            seed,
        } => {
            let cfg = SynthConfig {
                num_classes: classes,
                videos_per_class,
                captions_per_video,
                feature_noise: noise,
                test_fraction,
                seed,
            };
            let synth = synth_dataset(&cfg)?;
            synth.write(&out)?;
            print_json(&serde_json::json!({
                "out": out,
                "videos": synth.dataset.len(),
                "classes": classes,
                "test_videos": synth.dataset.select(Some(Split::Test)).len(),
            }))?;
        }
        Command::Ingest {
            dataset,
            glove,
            hierarchy,
            test_fraction,
            seed,
        } => {
            let vocab = match (glove, hierarchy) {
                (Some(g), Some(h)) => Some(ObjectVocabulary {
                    table: WordEmbeddingTable::load_glove(&g)?,
                    hierarchy: LabelHierarchy::load(&h)?,
                }),
                _ => None,
            };
            let summary = dataset::ingest(&dataset, vocab.as_ref(), test_fraction, seed)?;
            print_json(&summary)?;
        }
        Command::Train {
            dataset,
            checkpoint,
            captions,
            embeddings,
            stub_embeddings,
            preset,
            epochs,
            lr,
            batch_size,
            dropout,
            activation,
            seed,
            loss_csv,
        } => {
            let overrides = epochs.is_some() || lr.is_some() || batch_size.is_some() || dropout.is_some();
            if overrides && preset != Preset::Custom {
                return Err(
                    Error::InvalidConfig("--epochs/--lr/--batch-size/--dropout need --preset custom".into()).into(),
                );
            }
            let base = if preset == Preset::Paper {
                TrainPreset::Paper
            } else {
                TrainPreset::Desk
            };
            let mut cfg = TrainConfig::preset(base, seed);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
            cfg.dropout = dropout.unwrap_or(cfg.dropout);
            cfg.validate()?;

            let data = Dataset::load(&dataset, None)?;
            let captions = load_captions(&captions.unwrap_or_else(|| dataset.join(dataset::CAPTIONS_FILE)))?;
            let training: Vec<_> = captions
                .into_iter()
                .filter(|c| data.split_of(&c.video_id) == Some(Split::Train))
                .collect();
            let encoder = encoder_for(embeddings.as_deref(), stub_embeddings, None, Some(&dataset))?;
            let pairs = build_balanced(&training, seed)?;
            let embedded = EmbeddedPairs::new(&pairs, &data, &encoder)?;
            info!("{} pairs, {} distinct texts", embedded.len(), embedded.distinct_texts());

            let mut net = MatchingNetwork::new(NetDims::default(), seed)?;
            net.set_projection_activation(match activation {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::Identity => Activation::Identity,
            });
            let start = Instant::now();
            let trace = net.train(&embedded.examples(), &cfg)?;
            net.save_checkpoint(&checkpoint)?;
            let csv_path = loss_csv.unwrap_or_else(|| {
                let mut p = checkpoint.clone().into_os_string();
                p.push(".loss.csv");
                PathBuf::from(p)
            });
            let mut csv = String::from("epoch,loss\n");
            for (i, loss) in trace.iter().enumerate() {
                csv.push_str(&format!("{},{loss}\n", i + 1));
            }
            fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
            print_json(&serde_json::json!({
                "checkpoint": checkpoint,
                "loss_csv": csv_path,
                "pairs": embedded.len(),
                "config": cfg,
                "final_loss": trace.last(),
                "seconds": start.elapsed().as_secs_f64(),
            }))?;
        }
        Command::Gradcheck {
            trials,
            step,
            tolerance,
            seed,
        } => {
            let report = gradcheck::run(trials, seed, step)?;
            print_json(&serde_json::json!({
                "report": report,
                "tolerance": tolerance,
                "passed": report.passes(tolerance),
            }))?;
            if !report.passes(tolerance) {
                return Ok(EXIT_THRESHOLD);
            }
        }
        Command::Classify { inputs, video, json } => {
            let ctx = Resolved::load(&inputs)?;
            let feature = ctx
                .dataset
                .get(&video)
                .ok_or_else(|| Error::UnknownVideo(video.clone()))?;
            let ranked = classify_standalone(&ctx.net, feature, &ctx.annotations, &ctx.encoder, ctx.mode)?;
            if json {
                print_json(&serde_json::json!({ "revision": ctx.revision, "video_id": video, "scores": ranked }))?;
            } else {
                let mut table = String::new();
                for (i, b) in ranked.iter().enumerate() {
                    table.push_str(&format!(
                        "{:>3}  {:<24} s={:.6}  s_p={:.6}  s_n={:.6}\n",
                        i + 1,
                        b.class_label,
                        b.s,
                        b.s_p,
                        b.s_n
                    ));
                }
                write_stdout(&table)?;
            }
        }
        Command::Eval {
            inputs,
            split,
            out,
            top_k,
            text,
        } => {
            let ctx = Resolved::load(&inputs)?;
            let report = evaluate_standalone(
                &ctx.net,
                &ctx.dataset,
                split,
                &ctx.annotations,
                &ctx.encoder,
                ctx.mode,
                ctx.revision,
                top_k.unwrap_or(ctx.config.top_k),
            )?;
            emit(&report, out.as_deref(), text.then(|| render_evaluation(&report)))?;
        }
        Command::Correct {
            inputs,
            baseline,
            lambda,
            softmax,
            out,
            text,
        } => {
            let ctx = Resolved::load(&inputs)?;
            let scores = load_baseline(&baseline)?;
            let report = evaluate_corrected(
                &ctx.net,
                &ctx.dataset,
                &ctx.annotations,
                &ctx.encoder,
                ctx.mode,
                &scores,
                lambda.unwrap_or(ctx.config.lambda),
                softmax || ctx.config.softmax_baseline,
                ctx.revision,
            )?;
            emit(&report, out.as_deref(), text.then(|| render_correction(&report)))?;
        }
        Command::Serve { project, bind } => {
            let wb = Arc::new(Workbench::open(&project)?);
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(serve(wb, bind, |addr| {
                println!("listening on http://{addr}");
                let _ = std::io::stdout().flush();
            }))?;
        }
        Command::Init {
            project,
            dataset,
            checkpoint,
            embeddings,
            stub_embeddings,
            annotations,
            mode,
            lambda,
            seed,
            softmax,
            top_k,
        } => {
            let mut p = Project::open_or_init(&project)?;
            let absolute = |path: PathBuf| -> Result<PathBuf> {
                Ok(if path.is_absolute() {
                    path
                } else {
                    std::env::current_dir()?.join(path)
                })
            };
            let dataset = dataset.map(absolute).transpose()?;
            let checkpoint = checkpoint.map(absolute).transpose()?;
            let embeddings = embeddings.map(absolute).transpose()?;
            p.update_manifest(|m| {
                if dataset.is_some() {
                    m.dataset = dataset;
                }
                if checkpoint.is_some() {
                    m.checkpoint = checkpoint;
                }
                if let Some(path) = embeddings {
                    m.embeddings = EmbeddingSource::Precomputed { path };
                } else if stub_embeddings {
                    m.embeddings = EmbeddingSource::Stub;
                }
                let c = &mut m.config;
                c.mode = mode.unwrap_or(c.mode);
                c.lambda = lambda.unwrap_or(c.lambda);
                c.seed = seed.unwrap_or(c.seed);
                c.softmax_baseline = softmax.unwrap_or(c.softmax_baseline);
                c.top_k = top_k.unwrap_or(c.top_k);
            })?;
            if let Some(path) = annotations {
                let snapshot = AnnotationSet::load(&path)?;
                p.commit_annotations(snapshot, &format!("imported {}", path.display()))?;
            }
            print_json(p.manifest())?;
        }
        Command::Revisions { project, action } => {
            let mut p = Project::open(&project)?;
            match action {
                RevisionAction::List => print_json(&p.summaries())?,
                RevisionAction::Show { id } => print_json(p.revision(id)?)?,
                RevisionAction::Diff { from, to } => print_json(&p.diff(from, to)?)?,
                RevisionAction::Commit { annotations, note } => {
                    let snapshot = AnnotationSet::load(&annotations)?;
                    let id = p.commit_annotations(snapshot, &note)?;
                    print_json(&serde_json::json!({ "revision": id }))?;
                }
            }
        }
    }
    Ok(0)
}

/// Resolved scoring inputs.
struct Resolved {
    dataset: Dataset,
    net: MatchingNetwork,
    annotations: AnnotationSet,
    encoder: SentenceEmbedder,
    mode: ScoreMode,
    revision: u64,
    config: ProjectConfig,
}

impl Resolved {
    fn load(inputs: &Inputs) -> Result<Self> {
        let project = inputs.project.as_deref().map(Project::open).transpose()?;
        let need = |flag: &str| Error::InvalidConfig(format!("--{flag} is required without a project that names one"));

        let dataset_path = match (&inputs.dataset, &project) {
            (Some(d), _) => d.clone(),
            (None, Some(p)) => p.dataset_path().ok_or_else(|| need("dataset"))?,
            (None, None) => return Err(need("dataset").into()),
        };
        let checkpoint = match (&inputs.checkpoint, &project) {
            (Some(c), _) => c.clone(),
            (None, Some(p)) => p.checkpoint_path().ok_or_else(|| need("checkpoint"))?,
            (None, None) => return Err(need("checkpoint").into()),
        };
        let (annotations, revision) = match (&inputs.annotations, &project) {
            (Some(path), _) => (AnnotationSet::load(path)?, 0),
            (None, Some(p)) => {
                let rev = match inputs.revision {
                    Some(id) => p.revision(id)?,
                    None => p.active(),
                };
                (rev.annotations.clone(), rev.id)
            }
            (None, None) => return Err(need("annotations").into()),
        };
        annotations.validate()?;
        let encoder = encoder_for(
            inputs.embeddings.as_deref(),
            inputs.stub_embeddings,
            project.as_ref(),
            Some(&dataset_path),
        )?;
        let config = project.as_ref().map(|p| p.config().clone()).unwrap_or_default();
        Ok(Self {
            dataset: Dataset::load(&dataset_path, None)?,
            net: MatchingNetwork::load_checkpoint(&checkpoint)?,
            annotations,
            encoder,
            mode: inputs.mode.unwrap_or(config.mode),
            revision,
            config: ProjectConfig {
                top_k: if config.top_k == 0 { DEFAULT_TOP_K } else { config.top_k },
                ..config
            },
        })
    }
}

fn encoder_for(
    explicit: Option<&Path>,
    stub: bool,
    project: Option<&Project>,
    dataset: Option<&Path>,
) -> Result<SentenceEmbedder> {
    if stub {
        return Ok(SentenceEmbedder::Stub);
    }
    if let Some(path) = explicit {
        return Ok(SentenceEmbedder::load_precomputed(path)?);
    }
    if let Some(p) = project {
        return Ok(p.encoder()?);
    }
    if let Some(candidate) = dataset.map(|d| d.join(TEXT_EMBEDDINGS_FILE)).filter(|p| p.is_file()) {
        return Ok(SentenceEmbedder::load_precomputed(&candidate)?);
    }
    warn!("no sentence vectors found; using the hash stub encoder");
    Ok(SentenceEmbedder::Stub)
}

/// Writes to stdout; a reader that went away (`vtmm ... | head`) is not an error.
fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    write_stdout(&(serde_json::to_string_pretty(value)? + "\n"))
}

/// Writes the JSON report to `out` (or stdout), and the text rendering to stdout if requested.
fn emit(report: &impl Serialize, out: Option<&Path>, text: Option<String>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            let mut body = serde_json::to_vec_pretty(report)?;
            body.push(b'\n');
            fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        None if text.is_none() => print_json(report)?,
        None => {}
    }
    if let Some(t) = text {
        write_stdout(&t)?;
    }
    Ok(())
}
