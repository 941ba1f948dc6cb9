//! Personalized scanpath decoder.
//!
//! Cross-attends over scene/task context tokens plus one token projected
//! from a subject embedding, self-attends causally over the fixations so
//! far, and at each step scores every fine grid cell, an end token and a
//! duration.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Fixation, ScanpathInstance, SplitSpec};
use crate::error::{Error, Result};
use crate::numerics::{causal_mask, pos1d, AdamW, AttentionBlock, Gradients, Init, Linear, Matrix, ParamId, ParamStore, Tape, Var};
use crate::seed;
use crate::senet::{argmax, prototype, ContextEncoder, FeatureExtractor, ModelConfig, SceneCache, SceneFeatures, SeNet, SubjectEmbedding};
use crate::synthetic::Symmetry;
use crate::training::{transform_instance, EpochLoss};

pub const MIN_DURATION_MS: u32 = 50;
/// Duration regression works in units of this many milliseconds.
pub const DURATION_UNIT_MS: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Largest support drawn when building training prototypes.
    pub support_max: usize,
    /// Gaussian noise added to training prototypes, in units of the
    /// per-dimension spread of the base embeddings.
    pub embedding_noise: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 16,
            weight_decay: 1e-2,
            seed: 0,
            support_max: 10,
            embedding_noise: 0.5,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.support_max == 0 {
            return Err(Error::domain("predictor", "epochs, batch_size and support_max must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning_rate", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::domain("weight_decay", "must be finite and >= 0"));
        }
        if !(self.embedding_noise >= 0.0 && self.embedding_noise.is_finite()) {
            return Err(Error::domain("embedding_noise", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorLayout {
    pub model: ModelConfig,
    pub tasks: Vec<String>,
    pub grid_width: usize,
    pub grid_height: usize,
    pub embed_dim: usize,
    pub max_len: usize,
}

impl PredictorLayout {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.tasks.is_empty() || self.grid_width == 0 || self.grid_height == 0 || self.embed_dim == 0 || self.max_len == 0 {
            return Err(Error::domain("predictor layout", "tasks, grid, embed_dim and max_len must be non-empty"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.grid_width * self.grid_height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "sample" => Ok(DecodeMode::Sample),
            _ => Err(Error::domain("mode", format!("expected greedy or sample, got `{s}`"))),
        }
    }
}

/// A generated scanpath; the file form is the corpus record plus
/// `generated` and `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedScanpath {
    pub scene_id: String,
    pub subject_id: String,
    pub task: String,
    pub fixations: Vec<Fixation>,
    pub generated: bool,
    pub seed: u64,
}

impl PredictedScanpath {
    pub fn instance(&self) -> ScanpathInstance {
        ScanpathInstance {
            scene_id: self.scene_id.clone(),
            subject_id: self.subject_id.clone(),
            task: self.task.clone(),
            fixations: self.fixations.clone(),
        }
    }
}

/// Teacher-forced outputs. Row `k` of `cell_logits` predicts fixation `k`
/// from the fixations before it; `end_logits[k]` scores stopping instead.
/// The end logit of step 0 is `-inf`: a scanpath has at least one fixation.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub cell_logits: Matrix,
    pub end_logits: Vec<f64>,
    /// Predicted durations in milliseconds (unfloored).
    pub durations_ms: Vec<f64>,
    /// Steps aligned with teacher fixations.
    pub steps: usize,
    /// Whether a final stop step follows the teacher fixations.
    pub terminal: bool,
}

#[derive(Clone, Debug)]
pub struct Predictor {
    pub layout: PredictorLayout,
    pub store: ParamStore,
    extractor: FeatureExtractor,
    context: ContextEncoder,
    subject_proj: Linear,
    start: ParamId,
    duration_in: ParamId,
    layers: Vec<(AttentionBlock, AttentionBlock)>,
    pointer_query: Linear,
    pointer_key: Linear,
    cell_bias: ParamId,
    end_head: Linear,
    duration_head: Linear,
}

/// Decoder memory and pointer keys for one (scene, task, subject).
struct Conditioning {
    memory: Matrix,
    keys: Matrix,
}

impl Predictor {
    pub fn new(layout: PredictorLayout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let m = &layout.model;
        let (c, heads, ff) = (m.dim, m.heads, m.ff_dim());
        let mut store = ParamStore::new(seed);
        let extractor = FeatureExtractor::new(&mut store, "pred.features", m)?;
        let context = ContextEncoder::new(&mut store, "pred.context", m, layout.tasks.len(), true)?;
        let subject_proj = Linear::new(&mut store, "pred.subject", layout.embed_dim, c)?;
        let start = store.add("pred.start", &[1, c], Init::Normal(1.0))?;
        let duration_in = store.add("pred.duration_in", &[1, c], Init::Normal(1.0))?;
        let layers = (0..m.layers)
            .map(|i| {
                Ok((
                    AttentionBlock::new(&mut store, &format!("pred.self{i}"), c, heads, ff, false)?,
                    AttentionBlock::new(&mut store, &format!("pred.cross{i}"), c, heads, ff, true)?,
                ))
            })
            .collect::<Result<_>>()?;
        let pointer_query = Linear::new(&mut store, "pred.pointer_query", c, c)?;
        let pointer_key = Linear::new(&mut store, "pred.pointer_key", c, c)?;
        let cell_bias = store.add("pred.cell_bias", &[layout.cells()], Init::Zeros)?;
        let end_head = Linear::new(&mut store, "pred.end", c, 1)?;
        let duration_head = Linear::new(&mut store, "pred.duration", c, 1)?;
        Ok(Predictor {
            layout,
            store,
            extractor,
            context,
            subject_proj,
            start,
            duration_in,
            layers,
            pointer_query,
            pointer_key,
            cell_bias,
            end_head,
            duration_head,
        })
    }

    pub fn load<R: Read>(layout: PredictorLayout, checkpoint: R) -> Result<Self> {
        let mut p = Predictor::new(layout, 0)?;
        p.store.read_checkpoint(checkpoint)?;
        Ok(p)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        self.store.write_checkpoint(w)
    }

    fn check_inputs(&self, scene: &SceneFeatures, e: &SubjectEmbedding) -> Result<()> {
        if (scene.width(), scene.height()) != (self.layout.grid_width, self.layout.grid_height) {
            return Err(Error::Shape(format!(
                "scene grid {}x{}, predictor grid {}x{}",
                scene.width(),
                scene.height(),
                self.layout.grid_width,
                self.layout.grid_height
            )));
        }
        if e.dim() != self.layout.embed_dim {
            return Err(Error::Shape(format!("embedding width {}, expected {}", e.dim(), self.layout.embed_dim)));
        }
        Ok(())
    }

    /// `{C, proj(e)}` and the pointer keys of every fine cell.
    fn condition(&self, tape: &mut Tape, scene: &SceneFeatures, task: usize, e: &SubjectEmbedding) -> Result<(Var, Var)> {
        let image = self.extractor.image_tokens(tape, scene);
        let ctx = self.context.forward(tape, task, image)?;
        let ev = tape.row(&e.values);
        let subject = self.subject_proj.forward(tape, ev);
        let memory = tape.concat_rows(&[ctx, subject]);
        let fine = self.extractor.fine_tokens(tape, scene);
        let pos = tape.constant(scene.fine_pos.clone());
        let fine = tape.add(fine, pos);
        let keys = self.pointer_key.forward(tape, fine);
        Ok((memory, keys))
    }

    /// Start token followed by one token per prefix fixation.
    fn inputs(&self, tape: &mut Tape, scene: &SceneFeatures, prefix: &[Fixation]) -> Result<Var> {
        let c = self.layout.model.dim;
        let start = tape.param(self.start);
        let p0 = tape.row(&pos1d(0, c)?);
        let start = tape.add(start, p0);
        if prefix.is_empty() {
            return Ok(start);
        }
        let fix = self.extractor.fixation_tokens(tape, scene, prefix, self.layout.model.categories);
        let mut extra = Matrix::zeros((prefix.len(), c));
        let mut dur = Matrix::zeros((prefix.len(), 1));
        for (i, f) in prefix.iter().enumerate() {
            let p2 = crate::numerics::pos2d(f.x, f.y, c)?;
            let p1 = pos1d(i + 1, c)?;
            for d in 0..c {
                extra[[i, d]] = p2[d] + p1[d];
            }
            dur[[i, 0]] = f64::from(f.duration_ms) / 1000.0;
        }
        let extra = tape.constant(extra);
        let dur = tape.constant(dur);
        let dir = tape.param(self.duration_in);
        let dur = tape.matmul(dur, dir);
        let tokens = tape.add(fix, extra);
        let tokens = tape.add(tokens, dur);
        Ok(tape.concat_rows(&[start, tokens]))
    }

    /// Decoder over `prefix`: `(prefix+1) x (cells+1)` logits (end last)
    /// and `(prefix+1) x 1` durations in [`DURATION_UNIT_MS`].
    fn decode(&self, tape: &mut Tape, memory: Var, keys: Var, scene: &SceneFeatures, prefix: &[Fixation]) -> Result<(Var, Var)> {
        let mut x = self.inputs(tape, scene, prefix)?;
        let n = prefix.len() + 1;
        let mask = causal_mask(n);
        for (own, cross) in &self.layers {
            x = own.forward(tape, x, None, Some(&mask))?.out;
            x = cross.forward(tape, x, Some(memory), None)?.out;
        }
        let q = self.pointer_query.forward(tape, x);
        let scores = tape.matmul_t(q, keys);
        let scores = tape.scale(scores, 1.0 / (self.layout.model.dim as f64).sqrt());
        let bias = tape.param(self.cell_bias);
        let cells = tape.add_row(scores, bias);
        let end = self.end_head.forward(tape, x);
        let logits = tape.concat_cols(&[cells, end]);
        let dur = self.duration_head.forward(tape, x);
        Ok((logits, dur))
    }

    fn cell_of(&self, f: &Fixation) -> usize {
        let (w, h) = (self.layout.grid_width, self.layout.grid_height);
        let col = ((f.x * w as f64) as usize).min(w - 1);
        let row = ((f.y * h as f64) as usize).min(h - 1);
        row * w + col
    }

    fn task_index(&self, task: &str) -> Result<usize> {
        self.layout
            .tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::domain("task", format!("`{task}` not in the predictor's task vocabulary")))
    }

    fn check_teacher(&self, teacher: &ScanpathInstance) -> Result<()> {
        if teacher.fixations.is_empty() {
            return Err(Error::invalid("teacher scanpath without fixations"));
        }
        if teacher.fixations.len() > self.layout.max_len {
            return Err(Error::Shape(format!(
                "teacher has {} fixations, max_len is {}",
                teacher.fixations.len(),
                self.layout.max_len
            )));
        }
        Ok(())
    }

    /// Teacher-forced loss on a tape: cross-entropy over cell/end choices
    /// plus L1 on durations of real fixations, averaged over steps.
    fn loss_tape(&self, tape: &mut Tape, scene: &SceneFeatures, e: &SubjectEmbedding, teacher: &ScanpathInstance) -> Result<Var> {
        self.check_inputs(scene, e)?;
        self.check_teacher(teacher)?;
        let task = self.task_index(&teacher.task)?;
        let (memory, keys) = self.condition(tape, scene, task, e)?;
        let fix = &teacher.fixations;
        let terminal = fix.len() < self.layout.max_len;
        let prefix = if terminal { &fix[..] } else { &fix[..fix.len() - 1] };
        let (logits, dur) = self.decode(tape, memory, keys, scene, prefix)?;
        let cells = self.layout.cells();
        let mut terms = Vec::new();
        for step in 0..=prefix.len() {
            let row = tape.slice_rows(logits, step, step + 1);
            if step == 0 {
                let row = tape.slice_cols(row, 0, cells);
                terms.push(tape.cross_entropy(row, self.cell_of(&fix[0])));
            } else if step < fix.len() {
                terms.push(tape.cross_entropy(row, self.cell_of(&fix[step])));
            } else {
                terms.push(tape.cross_entropy(row, cells));
            }
        }
        let active = fix.len().min(prefix.len() + 1);
        let pred = tape.slice_rows(dur, 0, active);
        let target = Matrix::from_shape_fn((active, 1), |(i, _)| f64::from(fix[i].duration_ms) / DURATION_UNIT_MS);
        let target = tape.constant(target);
        let diff = tape.sub(pred, target);
        let l1 = tape.abs(diff);
        let l1 = tape.sum(l1);
        terms.push(l1);
        let all = tape.concat_cols(&terms);
        let total = tape.sum(all);
        Ok(tape.scale(total, 1.0 / (prefix.len() + 1) as f64))
    }

    /// Loss value and parameter gradients for one teacher scanpath.
    pub fn loss(&self, scene: &SceneFeatures, e: &SubjectEmbedding, teacher: &ScanpathInstance) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.store);
        let loss = self.loss_tape(&mut tape, scene, e, teacher)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("predictor loss".into()));
        }
        Ok((value, tape.backward(loss)))
    }

    pub fn loss_value(&self, scene: &SceneFeatures, e: &SubjectEmbedding, teacher: &ScanpathInstance) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let loss = self.loss_tape(&mut tape, scene, e, teacher)?;
        Ok(tape.scalar(loss))
    }

    /// Teacher-forced per-step outputs.
    pub fn forward(&self, scene: &SceneFeatures, e: &SubjectEmbedding, teacher: &ScanpathInstance) -> Result<ForwardOutput> {
        self.check_inputs(scene, e)?;
        self.check_teacher(teacher)?;
        let mut tape = Tape::new(&self.store);
        let task = self.task_index(&teacher.task)?;
        let (memory, keys) = self.condition(&mut tape, scene, task, e)?;
        let fix = &teacher.fixations;
        let terminal = fix.len() < self.layout.max_len;
        let prefix = if terminal { &fix[..] } else { &fix[..fix.len() - 1] };
        let (logits, dur) = self.decode(&mut tape, memory, keys, scene, prefix)?;
        let cells = self.layout.cells();
        let l = tape.value(logits);
        let mut end_logits: Vec<f64> = l.column(cells).to_vec();
        end_logits[0] = f64::NEG_INFINITY;
        Ok(ForwardOutput {
            cell_logits: l.slice(ndarray::s![.., ..cells]).to_owned(),
            end_logits,
            durations_ms: tape.value(dur).iter().map(|d| d * DURATION_UNIT_MS).collect(),
            steps: fix.len(),
            terminal,
        })
    }

    fn conditioning(&self, scene: &SceneFeatures, task: usize, e: &SubjectEmbedding) -> Result<Conditioning> {
        let mut tape = Tape::new(&self.store);
        let (memory, keys) = self.condition(&mut tape, scene, task, e)?;
        Ok(Conditioning {
            memory: tape.value(memory).clone(),
            keys: tape.value(keys).clone(),
        })
    }

    /// Autoregressive decoding until the end token or `max_len` fixations.
/// Greedy mode stops once the end token is more likely than not.
    /// Sampling draws from a stream derived from `(seed, scene_id)`.
    #[allow(clippy::too_many_arguments)]
    pub fn predict(
        &self,
        scene_id: &str,
        scene: &SceneFeatures,
        task: &str,
        subject_id: &str,
        e: &SubjectEmbedding,
        max_len: usize,
        mode: DecodeMode,
        seed: u64,
    ) -> Result<PredictedScanpath> {
        if max_len == 0 {
            return Err(Error::domain("max_len", "must be >= 1"));
        }
        self.check_inputs(scene, e)?;
        let cond = self.conditioning(scene, self.task_index(task)?, e)?;
        let mut rng = seed::rng(seed::derive_str(seed, scene_id));
        let cells = self.layout.cells();
        let mut fixations: Vec<Fixation> = Vec::new();
        while fixations.len() < max_len {
            let mut tape = Tape::new(&self.store);
            let memory = tape.constant(cond.memory.clone());
            let keys = tape.constant(cond.keys.clone());
            let (logits, dur) = self.decode(&mut tape, memory, keys, scene, &fixations)?;
            let step = fixations.len();
            let mut row: Vec<f64> = tape.value(logits).row(step).to_vec();
            if step == 0 {
                row[cells] = f64::NEG_INFINITY;
            }
            let choice = match mode {
                DecodeMode::Greedy => greedy_choice(&row),
                DecodeMode::Sample => sample_categorical(&row, &mut rng),
            };
            if choice == cells {
                break;
            }
            let x = ((choice % self.layout.grid_width) as f64 + 0.5) / self.layout.grid_width as f64;
            let y = ((choice / self.layout.grid_width) as f64 + 0.5) / self.layout.grid_height as f64;
            let ms = (tape.value(dur)[[step, 0]] * DURATION_UNIT_MS).round();
            let ms = if ms.is_finite() { ms.max(f64::from(MIN_DURATION_MS)) as u32 } else { MIN_DURATION_MS };
            fixations.push(Fixation::new(x, y, ms));
        }
        Ok(PredictedScanpath {
            scene_id: scene_id.to_owned(),
            subject_id: subject_id.to_owned(),
            task: task.to_owned(),
            fixations,
            generated: true,
            seed,
        })
    }
}

/// Stops when the end token holds more than half the probability mass,
/// otherwise takes the most likely cell.
fn greedy_choice(logits: &[f64]) -> usize {
    let (end, cells) = logits.split_last().expect("end logit");
    let max = cells.iter().copied().fold(*end, f64::max);
    let continue_mass: f64 = cells.iter().map(|l| (l - max).exp()).sum();
    if (end - max).exp() > continue_mass {
        cells.len()
    } else {
        argmax(cells)
    }
}

fn sample_categorical(logits: &[f64], rng: &mut seed::Rng) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    argmax(logits)
}

pub fn predictor_layout(corpus: &Corpus, senet: &SeNet, model: &ModelConfig) -> Result<PredictorLayout> {
    let first = corpus.scenes.values().next().ok_or_else(|| Error::invalid("corpus has no scenes"))?;
    if corpus.scenes.values().any(|s| (s.width_cells, s.height_cells) != (first.width_cells, first.height_cells)) {
        return Err(Error::domain("scenes", "all scenes must share one grid size"));
    }
    Ok(PredictorLayout {
        model: model.clone(),
        tasks: corpus.tasks.clone(),
        grid_width: first.width_cells,
        grid_height: first.height_cells,
        embed_dim: senet.dim(),
        max_len: corpus.max_len,
    })
}

/// Frozen embeddings of every base training instance, grouped by subject.
pub fn base_embeddings(senet: &SeNet, corpus: &Corpus, split: &SplitSpec) -> Result<BTreeMap<String, Vec<(usize, SubjectEmbedding)>>> {
    let cache = senet.scene_cache(corpus)?;
    let items: Vec<(usize, &ScanpathInstance)> = corpus
        .instances
        .iter()
        .enumerate()
        .filter(|(_, i)| split.seen.contains(&i.subject_id) && !split.is_test_scene(&i.scene_id))
        .collect();
    let embedded: Vec<(usize, SubjectEmbedding)> = items
        .par_iter()
        .map(|(k, inst)| Ok((*k, senet.embed(cache.get(&inst.scene_id)?, inst)?)))
        .collect::<Result<_>>()?;
    let mut out: BTreeMap<String, Vec<(usize, SubjectEmbedding)>> = BTreeMap::new();
    for (k, e) in embedded {
        out.entry(corpus.instances[k].subject_id.clone()).or_default().push((k, e));
    }
    Ok(out)
}

/// Per-dimension standard deviation.
fn embedding_spread<'a>(items: impl Iterator<Item = &'a SubjectEmbedding>) -> Vec<f64> {
    let items: Vec<&SubjectEmbedding> = items.collect();
    let Some(first) = items.first() else { return Vec::new() };
    let n = items.len() as f64;
    (0..first.dim())
        .map(|d| {
            let mean = items.iter().map(|e| e.values[d]).sum::<f64>() / n;
            (items.iter().map(|e| (e.values[d] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

pub struct TrainedPredictor {
    pub predictor: Predictor,
    pub trace: Vec<EpochLoss>,
    /// SE-Net fingerprint, identical before and after training.
    pub senet_fingerprint: u64,
}

/// Trains the decoder on base instances. Each instance is conditioned on a
/// prototype of 1 to `support_max` other scanpaths of the same subject,
/// embedded by the frozen SE-Net and jittered with Gaussian noise, and seen
/// through a random grid symmetry.
pub fn train_predictor(corpus: &Corpus, split: &SplitSpec, senet: &SeNet, model: &ModelConfig, config: &PredictorConfig) -> Result<TrainedPredictor> {
    config.validate()?;
    split.validate(corpus)?;
    let before = senet.store.fingerprint();
    let layout = predictor_layout(corpus, senet, model)?;
    let mut predictor = Predictor::new(layout, seed::derive(config.seed, 2))?;
    let embeddings = base_embeddings(senet, corpus, split)?;
    let cache = SceneCache::with_symmetries(corpus, &predictor.layout.model)?;
    let spread = embedding_spread(embeddings.values().flatten().map(|(_, e)| e));
    let mut order: Vec<usize> = embeddings.values().flatten().map(|(k, _)| *k).collect();
    order.sort_unstable();
    if order.is_empty() {
        return Err(Error::invalid("no base instances to train on"));
    }
    let mut opt = AdamW::new(&predictor.store, config.learning_rate, config.weight_decay);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut rng = seed::rng(seed::derive(seed::derive(config.seed, 0x9E7D), epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &k in chunk {
                let inst = &corpus.instances[k];
                let pool: Vec<&SubjectEmbedding> = embeddings[&inst.subject_id].iter().filter(|(j, _)| *j != k).map(|(_, e)| e).collect();
                if pool.is_empty() {
                    return Err(Error::InsufficientInstances { subject: inst.subject_id.clone(), needed: 2, available: 1 });
                }
                let n = rng.random_range(1..=config.support_max.min(pool.len()));
                let support: Vec<SubjectEmbedding> = pool.choose_multiple(&mut rng, n).map(|e| (*e).clone()).collect();
                let mut e = prototype(&support)?;
                for (v, sd) in e.values.iter_mut().zip(&spread) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += config.embedding_noise * sd * z;
                }
                let syms = cache.symmetries(&inst.scene_id);
                let sym: Symmetry = syms[rng.random_range(0..syms.len())];
                batch.push((cache.get_variant(&inst.scene_id, sym)?, e, transform_instance(inst, sym)));
            }
            let parts: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|(scene, e, inst)| predictor.loss(scene, e, inst))
                .collect::<Result<_>>()
                .map_err(|err| match err {
                    Error::NonFinite(_) => Error::Diverged { epoch },
                    other => other,
                })?;
            let mut grads = Gradients::zeros_like(&predictor.store);
            for (l, g) in &parts {
                total += l;
                grads.add_assign(g);
            }
            grads.scale(1.0 / parts.len() as f64);
            opt.step(&mut predictor.store, &grads);
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        trace.push(EpochLoss { epoch, mean_loss: mean, cls_loss: 0.0, contrast_loss: 0.0 });
    }
    predictor.store.round_to_f32();
    let after = senet.store.fingerprint();
    if before != after {
        return Err(Error::invalid("embedding network changed while training the predictor"));
    }
    Ok(TrainedPredictor {
        predictor,
        trace,
        senet_fingerprint: after,
    })
}

/// Share of teacher-forced steps (fixations and the final stop) whose
/// argmax matches the teacher.
pub fn teacher_forced_accuracy(predictor: &Predictor, items: &[(&SceneFeatures, &SubjectEmbedding, &ScanpathInstance)]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (scene, e, inst) in items {
        let out = predictor.forward(scene, e, inst)?;
        let cells = predictor.layout.cells();
        for step in 0..out.cell_logits.nrows() {
            let mut row = out.cell_logits.row(step).to_vec();
            row.push(out.end_logits[step]);
            let target = inst.fixations.get(step).map_or(cells, |f| predictor.cell_of(f));
            hit += usize::from(argmax(&row) == target);
            total += 1;
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}
