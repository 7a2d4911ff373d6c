use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use memscore::evaluation::{overlap_f_measure, rouge_su, text_proxy_summary, write_report_csv, EvaluationRow};
use memscore::features::{color_channel, load_channel, saliency_channel};
use memscore::regression::{predict, rmse_protocol, train_forest, tune, write_protocol_csv, ProtocolOptions, TuningGrid};
use memscore::scoring::{
    category_averages, compute_scores, hit_rate_correlation, question_complexity_correlation, read_scores_csv, spearman,
    split_half_consistency, write_scores_csv, ScoringConfig,
};
use memscore::simulator::{simulate_study, SimConfig, StudyBundle};
use memscore::summarizer::{
    greedy_select, learn_weights, segments_from_boundaries, uniform_segments, Budget, LearnParams, ProblemFile,
    SelectionOutput, TrainingExample,
};
use memscore::{
    FeatureChannel, ForestConfig, ForestModel, ProtocolConfig, ProtocolVariant, ReferenceSummary, SummarySelection,
    SurveyService, SystemClock,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::RunManifest;
use crate::{Cli, Command};

/// Config file sections layered over the library defaults.
struct Config {
    raw: Value,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let raw = match path {
            Some(p) => parse_json(&read_text(Some(p))?, p)?,
            None => Value::Null,
        };
        if !(raw.is_null() || raw.is_object()) {
            bail!("config must be a JSON object");
        }
        Ok(Config { raw })
    }

    fn section<T: Serialize + DeserializeOwned + Default>(&self, key: &str) -> Result<T> {
        let mut base = serde_json::to_value(T::default())?;
        if let (Some(over), Value::Object(b)) = (self.raw.get(key), &mut base) {
            let over = over.as_object().ok_or_else(|| anyhow!("config section `{key}` must be an object"))?;
            for (k, v) in over {
                b.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(base).with_context(|| format!("config section `{key}`"))
    }
}

fn read_text(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
            Ok(s)
        }
    }
}

fn parse_json<T: DeserializeOwned>(text: &str, what: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| anyhow!("{}: {e}", what.display()))
}

fn read_json<T: DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    let text = read_text(path)?;
    parse_json(&text, path.unwrap_or(Path::new("-")))
}

fn emit(out: Option<&Path>, bytes: &[u8], manifest: &mut RunManifest) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?;
            manifest.output(p);
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).context("writing stdout")?;
            stdout.flush().context("writing stdout")?;
        }
    }
    Ok(())
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn base_dir(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be positive");
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let cfg = Config::load(cli.config.as_deref())?;
    let seed = cli.seed;
    let mut m = RunManifest::new(command_name(&cli.command), seed, cfg.raw.clone());
    if let Some(c) = &cli.config {
        m.input(Some(c));
    }
    match cli.command {
        Command::Simulate(a) => {
            let mut sim: SimConfig = cfg.section("simulate")?;
            let mut protocol: ProtocolConfig = cfg.section("protocol")?;
            if a.image_flash {
                protocol.variant = ProtocolVariant::ImageFlash;
            }
            if let Some(n) = a.n_videos {
                sim.n_videos = n;
            }
            if let Some(k) = a.per_video {
                sim.n_participants = SimConfig::participants_for(sim.n_videos, k, protocol.targets_per_sequence);
            }
            if let Some(s) = seed {
                sim.seed = s;
            }
            if a.null_model {
                sim = sim.null_model();
            }
            let bundle = simulate_study(&sim, &protocol)?;
            emit(a.out.as_deref(), &json_bytes(&bundle)?, &mut m)?;
        }
        Command::Serve(a) => return serve(a, cli.jobs),
        Command::Score(a) => {
            m.input(a.input.as_deref());
            let bundle: StudyBundle = read_json(a.input.as_deref())?;
            let scoring = ScoringConfig { window_s: bundle.protocol.response_window_s, ..cfg.section("scoring")? };
            let report = compute_scores(&bundle.study.questions, &bundle.participant_logs()?, &scoring)?;
            let mut buf = Vec::new();
            write_scores_csv(&mut buf, &report.scores)?;
            if let Some(r) = &a.report {
                emit(Some(r), &json_bytes(&report)?, &mut m)?;
            }
            emit(a.out.as_deref(), &buf, &mut m)?;
        }
        Command::Analyze(a) => {
            m.input(a.input.as_deref());
            let bundle: StudyBundle = read_json(a.input.as_deref())?;
            let scoring = ScoringConfig { window_s: bundle.protocol.response_window_s, ..cfg.section("scoring")? };
            let report = compute_scores(&bundle.study.questions, &bundle.participant_logs()?, &scoring)?;
            let defined: Vec<_> = report.scores.iter().filter(|s| s.is_defined()).cloned().collect();
            let planted = if bundle.planted.is_empty() {
                None
            } else {
                let p: Vec<f64> = defined.iter().map(|s| bundle.planted.get(&s.video_id).copied().unwrap_or(f64::NAN)).collect();
                let s: Vec<f64> = defined.iter().map(|s| s.score).collect();
                spearman(&p, &s).ok()
            };
            let out = json!({
                "participants": report.participants.len(),
                "excluded": report.excluded.len(),
                "videos_scored": defined.len(),
                "split_half_rho": split_half_consistency(&report.pairs_by_video, a.repeats, seed.unwrap_or(0)).ok(),
                "hit_rate_rho": hit_rate_correlation(&defined).ok(),
                "planted_rho": planted,
                "question_complexity_rho": question_complexity_correlation(&bundle.study.questions, &defined).ok(),
                "category_averages": category_averages(&defined, &bundle.study.videos).ok(),
            });
            emit(a.out.as_deref(), &json_bytes(&out)?, &mut m)?;
        }
        Command::ExtractFeatures(a) => {
            if a.frames.is_none() && a.saliency.is_none() {
                bail!("nothing to extract: pass --frames and/or --saliency");
            }
            fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
            if let Some(dir) = &a.frames {
                m.input(Some(dir));
                let ch = color_channel(dir, a.k)?;
                emit(Some(&a.out_dir.join("COL.json")), ch.to_json().as_bytes(), &mut m)?;
            }
            if let Some(dir) = &a.saliency {
                m.input(Some(dir));
                let ch = saliency_channel(dir)?;
                emit(Some(&a.out_dir.join("SAL.json")), ch.to_json().as_bytes(), &mut m)?;
            }
        }
        Command::Train(a) => train(a, &cfg, seed.unwrap_or(0), &mut m)?,
        Command::Predict(a) => {
            let models = a
                .models
                .iter()
                .map(|p| {
                    m.input(Some(p));
                    read_json::<ForestModel>(Some(p))
                })
                .collect::<Result<Vec<_>>>()?;
            let channels = load_channels(&a.channels, &mut m)?;
            let used: Vec<(&ForestModel, &FeatureChannel)> = models
                .iter()
                .map(|model| {
                    channels
                        .iter()
                        .find(|c| c.name == model.channel_name)
                        .map(|c| (model, c))
                        .ok_or_else(|| anyhow!("no channel named `{}` for a model", model.channel_name))
                })
                .collect::<Result<_>>()?;
            let items: Vec<&String> =
                used[0].1.vectors.keys().filter(|k| used.iter().all(|(_, c)| c.vectors.contains_key(*k))).collect();
            let mut out = String::from("video_id,predicted\n");
            for item in items {
                let preds =
                    used.iter().map(|(model, c)| predict(model, &c.vectors[item])).collect::<Result<Vec<_>, _>>()?;
                out.push_str(&format!("{item},{}\n", memscore::regression::fuse(&preds)?));
            }
            emit(a.out.as_deref(), out.as_bytes(), &mut m)?;
        }
        Command::Summarize(a) => {
            m.input(Some(&a.problem));
            let file: ProblemFile = read_json(Some(&a.problem))?;
            let mut problem = file.into_problem(&base_dir(&a.problem))?;
            if let Some(w) = a.weights {
                problem.weights = w;
            }
            if let Some(l) = a.budget_count {
                problem.budget = Budget::Count(l);
            }
            if let Some(t) = a.budget_duration {
                problem.budget = Budget::Duration(t);
            }
            let sel = greedy_select(&problem)?;
            emit(a.out.as_deref(), &json_bytes(&SelectionOutput::new(&problem, sel))?, &mut m)?;
        }
        Command::Evaluate(a) => evaluate(a, &mut m)?,
        Command::Segment(a) => {
            let segs = match &a.boundaries {
                Some(p) => {
                    m.input(Some(p));
                    let b: Vec<f64> = read_json(Some(p))?;
                    segments_from_boundaries(&a.video_id, &b)
                }
                None => {
                    let d = a.duration.expect("clap requires duration");
                    if !(d > 0.0 && a.segment_s > 0.0) {
                        bail!("duration and segment length must be positive");
                    }
                    uniform_segments(&a.video_id, d, a.segment_s)
                }
            };
            let problems = memscore::model::check_segments(&segs);
            if !problems.is_empty() {
                bail!("invalid segments: {}", problems.join("; "));
            }
            emit(a.out.as_deref(), &json_bytes(&segs)?, &mut m)?;
        }
        Command::LearnWeights(a) => {
            m.input(Some(&a.training));
            #[derive(Deserialize)]
            struct Example {
                problem: ProblemFile,
                references: Vec<Vec<usize>>,
            }
            let raw: Vec<Example> = read_json(Some(&a.training))?;
            let base = base_dir(&a.training);
            let examples = raw
                .into_iter()
                .map(|e| Ok(TrainingExample { problem: e.problem.into_problem(&base)?, references: e.references }))
                .collect::<Result<Vec<_>>>()?;
            let mut params: LearnParams = cfg.section("learn")?;
            if let Some(l) = a.lambda {
                params.lambda = l;
            }
            if let Some(p) = a.passes {
                params.passes = p;
            }
            if let Some(s) = seed {
                params.seed = s;
            }
            let weights = learn_weights(&examples, &params)?;
            let objectives = examples.first().map(|e| e.problem.objectives.clone()).unwrap_or_default();
            emit(a.out.as_deref(), &json_bytes(&json!({ "objectives": objectives, "weights": weights }))?, &mut m)?;
        }
    }
    m.write().context("writing run manifest")?;
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Serve(_) => "serve",
        Command::Score(_) => "score",
        Command::Analyze(_) => "analyze",
        Command::ExtractFeatures(_) => "extract-features",
        Command::Train(_) => "train",
        Command::Predict(_) => "predict",
        Command::Summarize(_) => "summarize",
        Command::Evaluate(_) => "evaluate",
        Command::Segment(_) => "segment",
        Command::LearnWeights(_) => "learn-weights",
    }
}

fn load_channels(paths: &[PathBuf], m: &mut RunManifest) -> Result<Vec<FeatureChannel>> {
    let mut out: Vec<FeatureChannel> = Vec::new();
    for p in paths {
        m.input(Some(p));
        let ch = load_channel(p, None)?;
        if out.iter().any(|c| c.name == ch.name) {
            bail!("channel `{}` given twice", ch.name);
        }
        out.push(ch);
    }
    Ok(out)
}

fn train(a: crate::TrainArgs, cfg: &Config, seed: u64, m: &mut RunManifest) -> Result<()> {
    let channels = load_channels(&a.channels, m)?;
    m.input(Some(&a.scores));
    let scores_file = fs::File::open(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let scores: BTreeMap<String, f64> = read_scores_csv(scores_file)?
        .into_iter()
        .filter(|s| s.is_defined())
        .map(|s| (s.video_id, s.score))
        .collect();
    let names: Vec<String> = channels.iter().map(|c| c.name.clone()).collect();
    let channel_sets: Vec<Vec<String>> = if a.sets.is_empty() {
        let mut sets: Vec<Vec<String>> = names.iter().map(|n| vec![n.clone()]).collect();
        if names.len() > 1 {
            sets.push(names.clone());
        }
        sets
    } else {
        a.sets.iter().map(|s| s.split('+').map(str::to_owned).collect()).collect()
    };
    let base: ForestConfig = cfg.section("forest")?;
    let grid: TuningGrid = cfg.section("grid")?;
    let opts = ProtocolOptions {
        train_n: a.train_n,
        repeats: a.repeats,
        seed,
        folds: a.folds,
        grid: grid.clone(),
        base: base.clone(),
        channel_sets,
    };
    let rows = rmse_protocol(&channels, &scores, &opts)?;
    let mut buf = Vec::new();
    write_protocol_csv(&mut buf, &rows)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    emit(Some(&a.out_dir.join("rmse_grid.csv")), &buf, m)?;

    // final per-channel models on every scored item
    let y: Vec<f64> = scores.values().copied().collect();
    for ch in &channels {
        let x = scores
            .keys()
            .map(|id| ch.get(id).map(<[f64]>::to_vec).ok_or_else(|| anyhow!("channel {} lacks {id}", ch.name)))
            .collect::<Result<Vec<_>>>()?;
        let channel_seed = memscore::rng::derive_seed(seed, memscore::rng::fnv1a(ch.name.as_bytes()));
        let (mut best, _) = tune(&x, &y, &base, &grid, a.folds, channel_seed)?;
        best.seed = channel_seed;
        let model = train_forest(&x, &y, &best, &ch.name)?;
        emit(Some(&a.out_dir.join(format!("{}.model.json", ch.name))), &json_bytes(&model)?, m)?;
    }
    Ok(())
}

fn evaluate(a: crate::EvaluateArgs, m: &mut RunManifest) -> Result<()> {
    m.input(Some(&a.selection));
    let sel: Value = read_json(Some(&a.selection))?;
    let indices: Vec<usize> = match &sel {
        Value::Array(_) => serde_json::from_value(sel.clone())?,
        Value::Object(_) => serde_json::from_value::<SelectionOutput>(sel.clone())
            .map_err(|e| anyhow!("{}: {e}", a.selection.display()))?
            .indices,
        _ => bail!("{}: expected a list of indices or a selection object", a.selection.display()),
    };
    m.input(Some(&a.references));
    let refs: Vec<ReferenceSummary> = read_json(Some(&a.references))?;
    let segments = match &a.problem {
        Some(p) => {
            m.input(Some(p));
            Some(read_json::<ProblemFile>(Some(p))?.segments)
        }
        None => None,
    };
    let candidate = SummarySelection::Segments(indices.clone());
    let score = overlap_f_measure(&candidate, &refs, segments.as_deref())?;
    if score.empty_candidate {
        eprintln!("warning: empty candidate selection");
    }
    let mut rows =
        vec![EvaluationRow { method: a.method.clone(), budget: a.budget.clone(), f_measure: score.f_measure, recall: score.recall }];
    if let Some(c) = &a.captions {
        m.input(Some(c));
        let captions: BTreeMap<usize, String> = read_json(Some(c))?;
        let text = text_proxy_summary(&indices, &captions)?;
        let ref_texts: Vec<&str> = refs.iter().filter_map(|r| r.text.as_deref()).collect();
        if ref_texts.is_empty() {
            bail!("--captions needs references with text");
        }
        let r = rouge_su(&text, &ref_texts, a.skip)?;
        rows.push(EvaluationRow {
            method: format!("{}/rouge-su{}", a.method, a.skip),
            budget: a.budget.clone(),
            f_measure: r.f_measure,
            recall: r.recall,
        });
    }
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &rows)?;
    emit(a.out.as_deref(), &buf, m)
}

fn serve(a: crate::ServeArgs, jobs: Option<usize>) -> Result<()> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .try_init();
    let media = a.media.or_else(|| std::env::var_os("MEMSCORE_DATA_DIR").map(PathBuf::from));
    let service = SurveyService::open(&a.log, a.snapshot_every, Arc::new(SystemClock))
        .with_context(|| format!("opening log {}", a.log.display()))?;
    let app = crate::server::router(Arc::new(service), media);
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(j) = jobs {
        rt.worker_threads(j);
    }
    rt.enable_all().build()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        tracing::info!(addr = %a.addr, log = %a.log.display(), "serving");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
