use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fsps_core::data::{parse_corpus, sample_support, split_subjects, write_instances, Corpus, DurationBinner, ScanpathInstance, SplitSpec, FREE_VIEWING};
use fsps_core::experiment::{run_pipeline, EvalConfig, Evaluator, PipelineConfig, ShotReport, FIXTURE_MAX_LEN, FIXTURE_SCENES, UNSEEN_FRACTION};
use fsps_core::metrics::{cross_subject_eval, evaluate, key_of, scanpath_accuracy, write_aggregate_csv, CrossEvalConfig, MetricConfig, ScanpathKey};
use fsps_core::predictor::{train_predictor, DecodeMode, PredictedScanpath, Predictor, PredictorLayout};
use fsps_core::seed;
use fsps_core::senet::{prototype, AttentionRecord, DurationMode, EmbeddingRecord, SceneCache, SeNet, SeNetLayout, SubjectEmbedding};
use fsps_core::synthetic::{generate_corpus, separable_profiles, SceneGrid, SubjectProfile};
use fsps_core::training::{classification_accuracy, train_senet, write_loss_trace, EpochLoss, LossMode};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Recorder;
use crate::plot;
use crate::Opts;

pub const DEFAULT_M_OTHERS: usize = 3;
pub const DEFAULT_SHOTS: usize = 10;

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value.as_ref().ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::json(path, e))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::json(path, e)))
        .collect()
}

/// `model.ckpt` keeps its layout in `model.layout.json`.
pub fn layout_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("layout.json")
}

fn out_dir(opts: &Opts) -> CliResult<&Path> {
    std::fs::create_dir_all(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    Ok(&opts.out)
}

fn scenes_path(opts: &Opts, corpus: &Path) -> PathBuf {
    opts.scenes
        .clone()
        .unwrap_or_else(|| corpus.parent().unwrap_or(Path::new(".")).join("scenes.json"))
}

fn load_corpus_at(opts: &Opts, path: &Path, rec: &mut Recorder) -> CliResult<Corpus> {
    let corpus = parse_corpus(open(path)?).map_err(|e| match e {
        fsps_core::Error::Parse { line, message } => CliError::Config(format!("{}: line {line}: {message}", path.display())),
        other => other.into(),
    })?;
    rec.input(path);
    let scenes = scenes_path(opts, path);
    if !scenes.exists() {
        return Ok(corpus);
    }
    let grids: BTreeMap<String, SceneGrid> = read_json(&scenes)?;
    rec.input(&scenes);
    Ok(corpus.with_scenes(grids)?)
}

fn load_corpus(opts: &Opts, rec: &mut Recorder) -> CliResult<Corpus> {
    let corpus = load_corpus_at(opts, require(&opts.corpus, "corpus")?, rec)?;
    if corpus.scenes.is_empty() {
        return Err(CliError::Usage("corpus has no scene grids; pass --scenes".into()));
    }
    Ok(corpus)
}

fn load_split(opts: &Opts, corpus: &Corpus, rec: &mut Recorder) -> CliResult<SplitSpec> {
    let path = require(&opts.split, "split")?;
    let split: SplitSpec = read_json(path)?;
    split.validate(corpus)?;
    rec.input(path);
    Ok(split)
}

fn load_config(opts: &Opts, corpus: &Corpus, rec: &mut Recorder) -> CliResult<RunConfig> {
    if let Some(p) = &opts.config {
        rec.input(p);
    }
    let search_only = corpus.instances.iter().all(ScanpathInstance::is_search);
    let config = RunConfig::load(opts.config.as_deref())?.resolve(opts.seed, search_only);
    rec.seed(config.train.seed);
    Ok(config)
}

fn load_senet(path: &Path, rec: &mut Recorder) -> CliResult<SeNet> {
    let layout: SeNetLayout = read_json(&layout_path(path))?;
    let net = SeNet::load(layout, open(path)?)?;
    rec.input(path);
    rec.input(&layout_path(path));
    Ok(net)
}

fn load_predictor(path: &Path, rec: &mut Recorder) -> CliResult<Predictor> {
    let layout: PredictorLayout = read_json(&layout_path(path))?;
    let p = Predictor::load(layout, open(path)?)?;
    rec.input(path);
    rec.input(&layout_path(path));
    Ok(p)
}

fn decode_mode(opts: &Opts) -> CliResult<DecodeMode> {
    match &opts.mode {
        None => Ok(DecodeMode::Greedy),
        Some(m) => m.parse().map_err(|_| CliError::Usage(format!("unknown --mode `{m}` (greedy|sample)"))),
    }
}

fn save_trace(out: &Path, stem: &str, title: &str, trace: &[EpochLoss], rec: &mut Recorder) -> CliResult<()> {
    let csv = out.join(format!("{stem}.csv"));
    let mut w = create(&csv)?;
    write_loss_trace(&mut w, trace)?;
    w.flush().map_err(|e| CliError::io(&csv, e))?;
    let points: Vec<(f64, f64, f64)> = trace.iter().map(|e| (e.epoch as f64, e.mean_loss, 0.0)).collect();
    let svg = out.join(format!("{stem}.svg"));
    write_text(&svg, &plot::line_chart(title, "epoch", "mean loss", &points))?;
    rec.output(&csv);
    rec.output(&svg);
    Ok(())
}

fn save_checkpoint<L: Serialize>(path: &Path, layout: &L, save: impl FnOnce(&mut BufWriter<File>) -> fsps_core::Result<()>, rec: &mut Recorder) -> CliResult<()> {
    let mut w = create(path)?;
    save(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    write_json(&layout_path(path), layout)?;
    rec.output(path);
    rec.output(&layout_path(path));
    Ok(())
}

pub fn gen(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("gen", opts.seed.unwrap_or(0));
    let profiles: Vec<SubjectProfile> = match &opts.profiles {
        Some(p) => {
            rec.input(p);
            read_json(p)?
        }
        None => separable_profiles(),
    };
    let tasks: Vec<String> = match &opts.tasks {
        Some(t) => t.split(',').map(|s| s.trim().to_owned()).collect(),
        None => vec![FREE_VIEWING.to_owned()],
    };
    let scene_count = opts.scene_count.unwrap_or(FIXTURE_SCENES);
    let max_len = opts.max_len.unwrap_or(FIXTURE_MAX_LEN);
    let seed = opts.seed.unwrap_or(0);
    rec.config(&serde_json::json!({ "scene_count": scene_count, "tasks": tasks, "max_len": max_len, "profiles": profiles }));
    let corpus = rec.time("generate", || generate_corpus(&profiles, scene_count, &tasks, max_len, seed))?;
    let out = out_dir(opts)?;
    let corpus_path = out.join("corpus.jsonl");
    let mut w = create(&corpus_path)?;
    write_instances(&mut w, &corpus.instances)?;
    w.flush().map_err(|e| CliError::io(&corpus_path, e))?;
    let scenes = out.join("scenes.json");
    write_json(&scenes, &corpus.scenes)?;
    rec.output(&corpus_path);
    rec.output(&scenes);
    println!("{} scanpaths, {} subjects, {} scenes", corpus.instances.len(), corpus.subjects.len(), corpus.scenes.len());
    rec.finish(out)?;
    Ok(())
}

pub fn split(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("split", opts.seed.unwrap_or(0));
    let corpus = load_corpus_at(opts, require(&opts.corpus, "corpus")?, &mut rec)?;
    let fraction = opts.unseen_fraction.unwrap_or(UNSEEN_FRACTION);
    rec.config(&serde_json::json!({ "unseen_fraction": fraction }));
    let split = split_subjects(&corpus, fraction, opts.seed.unwrap_or(0))?;
    let out = out_dir(opts)?;
    let path = out.join("split.json");
    write_json(&path, &split)?;
    rec.output(&path);
    println!("{} seen, {} unseen, {} held-out scenes", split.seen.len(), split.unseen.len(), split.test_scenes.len());
    rec.finish(out)?;
    Ok(())
}

fn fit_bins(config: &RunConfig, corpus: &Corpus, split: Option<&SplitSpec>) -> CliResult<Option<DurationBinner>> {
    let durations = match split {
        Some(s) => s.base_corpus(corpus).durations(),
        None => corpus.durations(),
    };
    Ok(config.train.fit_binner(&durations)?)
}

pub fn bins(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("bins", opts.seed.unwrap_or(0));
    let corpus = load_corpus_at(opts, require(&opts.corpus, "corpus")?, &mut rec)?;
    let split = match opts.split {
        Some(_) => Some(load_split(opts, &corpus, &mut rec)?),
        None => None,
    };
    let config = load_config(opts, &corpus, &mut rec)?;
    rec.config(&config.train);
    let binner = fit_bins(&config, &corpus, split.as_ref())?.ok_or_else(|| {
        CliError::Usage(format!("duration_mode `{:?}` uses no bins", config.train.duration_mode).to_lowercase())
    })?;
    let out = out_dir(opts)?;
    let path = out.join("bins.json");
    write_json(&path, &binner)?;
    rec.output(&path);
    println!("{} bins over {} durations", binner.k, corpus.durations().len());
    rec.finish(out)?;
    Ok(())
}

pub fn train_senet_cmd(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("train-senet", opts.seed.unwrap_or(0));
    let corpus = load_corpus(opts, &mut rec)?;
    let split = load_split(opts, &corpus, &mut rec)?;
    let config = load_config(opts, &corpus, &mut rec)?;
    rec.config(&config);
    let binner = match &opts.bins {
        Some(p) if matches!(config.train.duration_mode, DurationMode::Uniform | DurationMode::Quantile) => {
            rec.input(p);
            Some(read_json::<DurationBinner>(p)?)
        }
        _ => fit_bins(&config, &corpus, Some(&split))?,
    };
    let trained = rec.time("train", || train_senet(&corpus, &split, &config.train, &config.model, binner))?;
    let cache = trained.net.scene_cache(&corpus)?;
    let acc = classification_accuracy(&trained.net, &cache, split.held_out_seen(&corpus))?;
    let out = out_dir(opts)?;
    save_checkpoint(&out.join("senet.ckpt"), &trained.net.layout, |w| trained.net.save(w), &mut rec)?;
    save_trace(out, "senet_loss", "embedding network loss", &trained.trace, &mut rec)?;
    let summary = out.join("senet_summary.json");
    write_json(&summary, &serde_json::json!({ "held_out_classification_accuracy": acc, "steps": trained.steps }))?;
    rec.output(&summary);
    println!("held-out seen-subject accuracy {acc:.3}");
    rec.finish(out)?;
    Ok(())
}

fn subjects(opts: &Opts, split: &SplitSpec) -> Vec<String> {
    match &opts.subjects {
        Some(s) => s.split(',').map(|x| x.trim().to_owned()).collect(),
        None => split.unseen.iter().cloned().collect(),
    }
}

pub fn embed(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("embed", opts.seed.unwrap_or(0));
    let corpus = load_corpus(opts, &mut rec)?;
    let split = load_split(opts, &corpus, &mut rec)?;
    let net = load_senet(require(&opts.senet, "senet")?, &mut rec)?;
    let n = opts.n.unwrap_or(DEFAULT_SHOTS);
    let seed = opts.seed.unwrap_or(0);
    let who = subjects(opts, &split);
    rec.config(&serde_json::json!({ "n": n, "subjects": who }));
    let cache = net.scene_cache(&corpus)?;
    let (records, attention) = rec.time("adaptation", || -> CliResult<_> {
        let mut records = Vec::new();
        let mut attention = Vec::new();
        for subject in &who {
            let support = sample_support(&corpus, &split, subject, n, seed::derive_str(seed, subject))?;
            let detailed: Vec<_> = support
                .items
                .par_iter()
                .map(|inst| net.embed_detailed(cache.get(&inst.scene_id)?, inst))
                .collect::<fsps_core::Result<_>>()?;
            let embeddings: Vec<SubjectEmbedding> = detailed.iter().map(|d| d.0.clone()).collect();
            for (inst, (e, weights, _)) in support.items.iter().zip(detailed) {
                records.push(EmbeddingRecord::new(subject, &e));
                attention.push(AttentionRecord {
                    scene_id: inst.scene_id.clone(),
                    subject_id: subject.clone(),
                    weights,
                });
            }
            records.push(EmbeddingRecord::new(subject, &prototype(&embeddings)?));
        }
        Ok((records, attention))
    })?;
    let out = out_dir(opts)?;
    let emb = out.join("embeddings.jsonl");
    let att = out.join("attention.jsonl");
    write_jsonl(&emb, &records)?;
    write_jsonl(&att, &attention)?;
    rec.output(&emb);
    rec.output(&att);
    println!("{} prototypes from {n} shots each", who.len());
    rec.finish(out)?;
    Ok(())
}

pub fn train_pred(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("train-pred", opts.seed.unwrap_or(0));
    let corpus = load_corpus(opts, &mut rec)?;
    let split = load_split(opts, &corpus, &mut rec)?;
    let net = load_senet(require(&opts.senet, "senet")?, &mut rec)?;
    let config = load_config(opts, &corpus, &mut rec)?;
    rec.config(&config);
    let trained = rec.time("train", || train_predictor(&corpus, &split, &net, &config.model, &config.predictor))?;
    let out = out_dir(opts)?;
    save_checkpoint(&out.join("predictor.ckpt"), &trained.predictor.layout, |w| trained.predictor.save(w), &mut rec)?;
    save_trace(out, "predictor_loss", "predictor loss", &trained.trace, &mut rec)?;
    if let Some(last) = trained.trace.last() {
        println!("final predictor loss {:.4}", last.mean_loss);
    }
    rec.finish(out)?;
    Ok(())
}

/// Prototype per subject: the `prototype` record if present, else the
/// mean of the subject's single-scanpath records.
fn read_prototypes(path: &Path) -> CliResult<BTreeMap<String, SubjectEmbedding>> {
    let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
    let mut grouped: BTreeMap<String, (Option<SubjectEmbedding>, Vec<SubjectEmbedding>)> = BTreeMap::new();
    for r in records {
        let slot = grouped.entry(r.subject_id.clone()).or_default();
        if r.prototype {
            slot.0 = Some(r.embedding());
        } else {
            slot.1.push(r.embedding());
        }
    }
    grouped
        .into_iter()
        .map(|(s, (proto, singles))| {
            let e = match proto {
                Some(p) => p,
                None => prototype(&singles)?,
            };
            Ok((s, e))
        })
        .collect()
}

pub fn predict(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("predict", opts.seed.unwrap_or(0));
    let corpus = load_corpus(opts, &mut rec)?;
    let split = load_split(opts, &corpus, &mut rec)?;
    let predictor = load_predictor(require(&opts.predictor, "predictor")?, &mut rec)?;
    let emb_path = require(&opts.embeddings, "embeddings")?;
    let prototypes = read_prototypes(emb_path)?;
    rec.input(emb_path);
    let mode = decode_mode(opts)?;
    let seed = opts.seed.unwrap_or(0);
    let max_len = opts.max_len.unwrap_or(predictor.layout.max_len);
    rec.config(&serde_json::json!({ "mode": mode, "max_len": max_len }));
    let scenes = SceneCache::new(&corpus, &predictor.layout.model)?;
    let items: Vec<(&String, &SubjectEmbedding, &ScanpathInstance)> = prototypes
        .iter()
        .flat_map(|(s, e)| split.query_instances(&corpus, s).map(move |q| (s, e, q)))
        .collect();
    if items.is_empty() {
        return Err(CliError::Usage("no held-out scanpaths for the embedded subjects".into()));
    }
    let preds: Vec<PredictedScanpath> = rec.time("predict", || {
        items
            .par_iter()
            .map(|(s, e, q)| predictor.predict(&q.scene_id, scenes.get(&q.scene_id)?, &q.task, s, e, max_len, mode, seed))
            .collect::<fsps_core::Result<_>>()
    })?;
    let out = out_dir(opts)?;
    let path = out.join("predictions.jsonl");
    write_jsonl(&path, &preds)?;
    rec.output(&path);
    println!("{} predicted scanpaths", preds.len());
    rec.finish(out)?;
    Ok(())
}

fn metric_config(opts: &Opts) -> MetricConfig {
    MetricConfig {
        n: opts.n,
        seed: opts.seed,
        ..MetricConfig::default()
    }
}

pub fn eval(opts: &Opts) -> CliResult<()> {
    if opts.predictions.is_some() {
        eval_files(opts)
    } else {
        eval_model(opts)
    }
}

fn eval_files(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("eval", opts.seed.unwrap_or(0));
    let pred_path = require(&opts.predictions, "predictions")?;
    let truth_path = opts
        .truth
        .as_ref()
        .or(opts.corpus.as_ref())
        .ok_or_else(|| CliError::Usage("missing required flag --truth".into()))?;
    let preds = parse_corpus(open(pred_path)?)?;
    rec.input(pred_path);
    let truth = parse_corpus(open(truth_path)?)?;
    rec.input(truth_path);
    let gts: BTreeMap<ScanpathKey, ScanpathInstance> = truth.instances.into_iter().map(|g| (key_of(&g), g)).collect();
    let pmap: BTreeMap<ScanpathKey, ScanpathInstance> = preds.instances.into_iter().map(|p| (key_of(&p), p)).collect();
    let pairs: Vec<(ScanpathInstance, ScanpathInstance)> = pmap
        .iter()
        .map(|(k, p)| {
            gts.get(k)
                .map(|g| (p.clone(), g.clone()))
                .ok_or_else(|| CliError::Usage(format!("prediction for scene `{}`, subject `{}`, task `{}` has no ground truth", k.0, k.1, k.2)))
        })
        .collect::<CliResult<_>>()?;
    let metrics = metric_config(opts);
    rec.config(&metrics);
    let mut report = rec.time("score", || evaluate(&pairs, &metrics))?;
    let scored: BTreeMap<ScanpathKey, ScanpathInstance> = gts.into_iter().filter(|(k, _)| pmap.contains_key(k)).collect();
    if let Ok(acc) = scanpath_accuracy(&pmap, &scored, &metrics) {
        report.aggregate.scanpath_accuracy = Some(acc);
    }
    let out = out_dir(opts)?;
    let json = out.join("report.json");
    let mut w = create(&json)?;
    report.write_json(&mut w)?;
    w.flush().map_err(|e| CliError::io(&json, e))?;
    let csv = out.join("report.csv");
    write_aggregate_csv(create(&csv)?, &[("all".into(), report.aggregate.clone())])?;
    rec.output(&json);
    rec.output(&csv);
    print_aggregate("all", &report.aggregate);
    rec.finish(out)?;
    Ok(())
}

fn print_aggregate(label: &str, a: &fsps_core::metrics::Aggregate) {
    let mm = a.mm.as_ref().map_or("n/a".into(), |v| format!("{:.4}", v.mean));
    let acc = a.scanpath_accuracy.map_or(String::new(), |v| format!(" accuracy {v:.1}%"));
    println!("{label}: SM {:.4} MM {mm} SED {:.4} ({} pairs){acc}", a.sm, a.sed, a.pairs);
}

fn eval_config(opts: &Opts, predictor: &Predictor, shots: Vec<usize>) -> CliResult<EvalConfig> {
    Ok(EvalConfig {
        shots,
        repeats: opts.repeats.unwrap_or(EvalConfig::default().repeats),
        seed: opts.seed.unwrap_or(0),
        mode: decode_mode(opts)?,
        max_len: opts.max_len.unwrap_or(predictor.layout.max_len),
        metrics: MetricConfig::default(),
    })
}

fn write_shot_reports(out: &Path, reports: &[ShotReport], rec: &mut Recorder) -> CliResult<()> {
    let json = out.join("report.json");
    write_json(&json, &reports)?;
    let csv = out.join("report.csv");
    let rows: Vec<(String, _)> = reports.iter().map(|r| (format!("n={}", r.n), r.report.aggregate.clone())).collect();
    write_aggregate_csv(create(&csv)?, &rows)?;
    let points: Vec<(f64, f64, f64)> = reports
        .iter()
        .map(|r| (r.n as f64, r.report.aggregate.sm, r.report.ci95.as_ref().map_or(0.0, |c| c.sm)))
        .collect();
    let svg = out.join("nshot.svg");
    write_text(&svg, &plot::line_chart("n-shot ScanMatch", "support size n", "SM", &points))?;
    for p in [&json, &csv, &svg] {
        rec.output(p);
    }
    Ok(())
}

fn eval_model(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("eval", opts.seed.unwrap_or(0));
    let corpus = load_corpus(opts, &mut rec)?;
    let split = load_split(opts, &corpus, &mut rec)?;
    let net = load_senet(require(&opts.senet, "senet")?, &mut rec)?;
    let predictor = load_predictor(require(&opts.predictor, "predictor")?, &mut rec)?;
    let shots = opts.n.map_or_else(|| EvalConfig::default().shots, |n| vec![n]);
    let config = eval_config(opts, &predictor, shots)?;
    rec.config(&config);
    let evaluator = Evaluator::new(&corpus, &split, &net, &predictor)?;
    let reports = rec.time("n_shot", || evaluator.n_shot(&config))?;
    let out = out_dir(opts)?;
    write_shot_reports(out, &reports, &mut rec)?;
    for r in &reports {
        print_aggregate(&format!("n={}", r.n), &r.report.aggregate);
    }
    rec.finish(out)?;
    Ok(())
}

pub fn xeval(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("xeval", opts.seed.unwrap_or(0));
    let corpus = load_corpus(opts, &mut rec)?;
    let split = load_split(opts, &corpus, &mut rec)?;
    let net = load_senet(require(&opts.senet, "senet")?, &mut rec)?;
    let predictor = load_predictor(require(&opts.predictor, "predictor")?, &mut rec)?;
    let n = opts.n.unwrap_or(DEFAULT_SHOTS);
    let eval = eval_config(opts, &predictor, vec![n])?;
    let config = CrossEvalConfig {
        m_others: opts.m_others.unwrap_or(DEFAULT_M_OTHERS),
        seed: eval.seed,
        mode: eval.mode,
        max_len: eval.max_len,
        metrics: MetricConfig {
            n: Some(n),
            seed: Some(eval.seed),
            ..MetricConfig::default()
        },
    };
    rec.config(&config);
    let evaluator = Evaluator::new(&corpus, &split, &net, &predictor)?;
    let report = rec.time("cross", || -> CliResult<_> {
        let supports = fsps_core::experiment::support_draws(&corpus, &split, n, 1, seed::derive(eval.seed, n as u64))?;
        let prototypes = evaluator.prototypes(&supports[0])?;
        Ok(cross_subject_eval(&predictor, evaluator.predictor_scenes(), &prototypes, evaluator.ground_truth(), &config)?)
    })?;
    let out = out_dir(opts)?;
    let json = out.join("xeval.json");
    write_json(&json, &report)?;
    let csv = out.join("xeval.csv");
    let mut rows = vec![("own".to_owned(), report.own.clone())];
    rows.extend(report.cross.clone().map(|c| ("cross".to_owned(), c)));
    write_aggregate_csv(create(&csv)?, &rows)?;
    rec.output(&json);
    rec.output(&csv);
    for (label, a) in &rows {
        print_aggregate(label, a);
    }
    rec.finish(out)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub sweep: String,
    pub value: String,
    pub held_out_classification_accuracy: f64,
    pub shots: ShotReport,
}

/// Applies one sweep value to a copy of the run configuration.
pub fn apply_sweep(config: &RunConfig, sweep: &str, value: &str) -> CliResult<RunConfig> {
    let bad = |what: &str| CliError::Usage(format!("--values: `{value}` is not a valid {what}"));
    let mut c = config.clone();
    match sweep {
        "loss_mode" => c.train.loss_mode = value.parse::<LossMode>().map_err(|_| bad("loss mode"))?,
        "margin" => c.train.margin = value.parse().map_err(|_| bad("margin"))?,
        "bins" => c.train.bins = value.parse().map_err(|_| bad("bin count"))?,
        "task_encoder" => c.train.use_task_encoder = value.parse().map_err(|_| bad("boolean"))?,
        "duration_mode" => c.train.duration_mode = value.parse::<DurationMode>().map_err(|_| bad("duration mode"))?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown --sweep `{other}` (loss_mode|margin|bins|task_encoder|duration_mode)"
            )))
        }
    }
    c.validate().map_err(|e| CliError::Usage(format!("--values `{value}`: {e}")))?;
    Ok(c)
}

pub fn ablate(opts: &Opts) -> CliResult<()> {
    let mut rec = Recorder::new("ablate", opts.seed.unwrap_or(0));
    let sweep = require(&opts.sweep, "sweep")?;
    let values: Vec<String> = require(&opts.values, "values")?.split(',').map(|v| v.trim().to_owned()).collect();
    let corpus = load_corpus(opts, &mut rec)?;
    let split = load_split(opts, &corpus, &mut rec)?;
    let base = load_config(opts, &corpus, &mut rec)?;
    let configs: Vec<RunConfig> = values.iter().map(|v| apply_sweep(&base, sweep, v)).collect::<CliResult<_>>()?;
    let n = opts.n.unwrap_or(DEFAULT_SHOTS);
    rec.config(&serde_json::json!({ "sweep": sweep, "values": values, "base": base, "n": n }));
    let mut rows = Vec::with_capacity(values.len());
    for (value, config) in values.iter().zip(&configs) {
        let pipeline = rec.time(&format!("{sweep}={value}"), || {
            run_pipeline(
                &corpus,
                &split,
                &PipelineConfig {
                    train: config.train.clone(),
                    model: config.model.clone(),
                    predictor: config.predictor.clone(),
                },
            )
        })?;
        let cache = pipeline.senet.scene_cache(&corpus)?;
        let acc = classification_accuracy(&pipeline.senet, &cache, split.held_out_seen(&corpus))?;
        let evaluator = Evaluator::new(&corpus, &split, &pipeline.senet, &pipeline.predictor)?;
        let mut shots = evaluator.n_shot(&eval_config(opts, &pipeline.predictor, vec![n])?)?;
        let row = AblationRow {
            sweep: sweep.clone(),
            value: value.clone(),
            held_out_classification_accuracy: acc,
            shots: shots.remove(0),
        };
        print_aggregate(&format!("{sweep}={value}"), &row.shots.report.aggregate);
        rows.push(row);
    }
    let out = out_dir(opts)?;
    let json = out.join("ablation.json");
    write_json(&json, &rows)?;
    let csv = out.join("ablation.csv");
    let table: Vec<(String, _)> = rows.iter().map(|r| (format!("{}={}", r.sweep, r.value), r.shots.report.aggregate.clone())).collect();
    write_aggregate_csv(create(&csv)?, &table)?;
    let svg = out.join("ablation.svg");
    let bars: Vec<(String, f64)> = rows.iter().map(|r| (r.value.clone(), r.shots.report.aggregate.sm)).collect();
    write_text(&svg, &plot::bar_chart(&format!("{sweep} sweep, {n}-shot"), "SM", &bars))?;
    for p in [&json, &csv, &svg] {
        rec.output(p);
    }
    rec.finish(out)?;
    Ok(())
}
