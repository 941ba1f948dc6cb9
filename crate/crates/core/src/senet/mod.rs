//! Subject embedding network.
//!
//! A scanpath on a scene becomes a vector `e`: scene and task tokens form a
//! context, fixation tokens are refined against that context, and a learned
//! subject token attends over the refined fixations. A small head
//! classifies seen subjects from `e`.

mod features;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use features::{ContextEncoder, FeatureExtractor, ModelConfig, SceneFeatures};

use crate::data::{Corpus, DurationBinner, ScanpathInstance};
use crate::error::{Error, Result};
use crate::numerics::{pos1d, pos2d, AttentionBlock, Init, Linear, Matrix, ParamId, ParamStore, Tape, Var};
use crate::synthetic::Symmetry;

/// Raw-duration mode encodes `duration_ms / RAW_STEP_MS`, capped.
pub const RAW_STEP_MS: u32 = 50;
pub const RAW_CAP: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationMode {
    None,
    Raw,
    Uniform,
    Quantile,
}

impl std::str::FromStr for DurationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DurationMode::None),
            "raw" => Ok(DurationMode::Raw),
            "uniform" => Ok(DurationMode::Uniform),
            "quantile" => Ok(DurationMode::Quantile),
            _ => Err(Error::domain("duration_mode", format!("unknown mode `{s}`"))),
        }
    }
}

/// Everything besides parameter values needed to rebuild a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeNetLayout {
    pub model: ModelConfig,
    pub tasks: Vec<String>,
    /// Seen subjects in classifier order.
    pub seen: Vec<String>,
    pub duration_mode: DurationMode,
    pub use_task_encoder: bool,
    /// Fitted bins for the uniform and quantile modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binner: Option<DurationBinner>,
}

impl SeNetLayout {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::domain("tasks", "empty task vocabulary"));
        }
        if self.seen.len() < 2 {
            return Err(Error::domain("seen", "need at least two seen subjects"));
        }
        match (self.duration_mode, &self.binner) {
            (DurationMode::Uniform | DurationMode::Quantile, None) => {
                Err(Error::domain("binner", "uniform and quantile modes need fitted bins"))
            }
            (_, Some(b)) => b.validate(),
            _ => Ok(()),
        }
    }

    /// Position index fed to the duration encoding, if any.
    pub fn duration_index(&self, duration_ms: u32) -> Option<usize> {
        match self.duration_mode {
            DurationMode::None => None,
            DurationMode::Raw => Some(((duration_ms / RAW_STEP_MS) as usize).min(RAW_CAP)),
            DurationMode::Uniform | DurationMode::Quantile => {
                self.binner.as_ref().map(|b| b.bin(duration_ms))
            }
        }
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::domain("task", format!("`{task}` not in the model's task vocabulary")))
    }
}

/// One embedding vector; `prototype` marks an average over a support set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEmbedding {
    pub values: Vec<f64>,
    pub prototype: bool,
}

impl SubjectEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance_sq(&self, other: &SubjectEmbedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// A line of an embedding file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub subject_id: String,
    pub prototype: bool,
    pub values: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn new(subject_id: &str, e: &SubjectEmbedding) -> Self {
        EmbeddingRecord {
            subject_id: subject_id.to_owned(),
            prototype: e.prototype,
            values: e.values.clone(),
        }
    }

    pub fn embedding(&self) -> SubjectEmbedding {
        SubjectEmbedding {
            values: self.values.clone(),
            prototype: self.prototype,
        }
    }
}

/// A line of an attention dump: last decoder round, averaged over heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub scene_id: String,
    pub subject_id: String,
    pub weights: Vec<f64>,
}

/// Componentwise mean of `embeddings`. Inputs are put in a canonical order
/// and averaged as offsets from the first, so the result does not depend on
/// input order and `n` copies of `e` give back `e` exactly.
pub fn prototype(embeddings: &[SubjectEmbedding]) -> Result<SubjectEmbedding> {
    let first = embeddings.first().ok_or_else(|| Error::invalid("prototype of an empty list"))?;
    if embeddings.iter().any(|e| e.dim() != first.dim()) {
        return Err(Error::Shape("prototype inputs differ in dimension".into()));
    }
    let mut sorted: Vec<&SubjectEmbedding> = embeddings.iter().collect();
    sorted.sort_by(|a, b| {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let base = &sorted[0].values;
    let n = sorted.len() as f64;
    let values = (0..base.len())
        .map(|d| {
            let offset: f64 = sorted.iter().map(|e| e.values[d] - base[d]).sum();
            base[d] + offset / n
        })
        .collect();
    Ok(SubjectEmbedding { values, prototype: true })
}

/// Scene features for every scene of a corpus, computed once, optionally
/// for every grid symmetry as well.
#[derive(Clone, Debug, Default)]
pub struct SceneCache {
    scenes: BTreeMap<(String, Symmetry), SceneFeatures>,
}

impl SceneCache {
    pub fn new(corpus: &Corpus, config: &ModelConfig) -> Result<Self> {
        Self::build(corpus, config, false)
    }

    /// Also caches every symmetric variant of every scene.
    pub fn with_symmetries(corpus: &Corpus, config: &ModelConfig) -> Result<Self> {
        Self::build(corpus, config, true)
    }

    fn build(corpus: &Corpus, config: &ModelConfig, all: bool) -> Result<Self> {
        let mut scenes = BTreeMap::new();
        for (id, s) in &corpus.scenes {
            let syms = if all { Symmetry::all_for(s.width_cells, s.height_cells) } else { vec![Symmetry::IDENTITY] };
            for sym in syms {
                scenes.insert((id.clone(), sym), SceneFeatures::new(&s.transformed(sym), config)?);
            }
        }
        Ok(SceneCache { scenes })
    }

    pub fn get(&self, scene_id: &str) -> Result<&SceneFeatures> {
        self.get_variant(scene_id, Symmetry::IDENTITY)
    }

    pub fn get_variant(&self, scene_id: &str, sym: Symmetry) -> Result<&SceneFeatures> {
        self.scenes
            .get(&(scene_id.to_owned(), sym))
            .ok_or_else(|| Error::domain("scene_id", format!("unknown scene `{scene_id}` ({sym:?})")))
    }

    pub fn symmetries(&self, scene_id: &str) -> Vec<Symmetry> {
        self.scenes.keys().filter(|(id, _)| id == scene_id).map(|(_, s)| *s).collect()
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SeNetPass {
    /// `1 x c` subject embedding.
    pub embedding: Var,
    /// `1 x L` last-round decoder attention, averaged over heads.
    pub attention: Var,
}

/// Embedding-network parameters and module handles.
#[derive(Clone, Debug)]
pub struct SeNet {
    pub layout: SeNetLayout,
    pub store: ParamStore,
    extractor: FeatureExtractor,
    context: ContextEncoder,
    scan_blocks: Vec<AttentionBlock>,
    init_token: ParamId,
    decoder: Vec<(AttentionBlock, Linear)>,
    head_hidden: Linear,
    head_out: Linear,
}

impl SeNet {
    pub fn new(layout: SeNetLayout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let m = &layout.model;
        let (c, heads, ff) = (m.dim, m.heads, m.ff_dim());
        let mut store = ParamStore::new(seed);
        let extractor = FeatureExtractor::new(&mut store, "senet.features", m)?;
        let context = ContextEncoder::new(&mut store, "senet.context", m, layout.tasks.len(), layout.use_task_encoder)?;
        let scan_blocks = (0..m.layers)
            .map(|i| AttentionBlock::new(&mut store, &format!("senet.scanpath{i}"), c, heads, ff, false))
            .collect::<Result<_>>()?;
        let init_token = store.add("senet.subject_token", &[1, c], Init::Normal(1.0))?;
        let decoder = (0..m.layers)
            .map(|i| {
                Ok((
                    AttentionBlock::new(&mut store, &format!("senet.decoder{i}"), c, heads, ff, true)?,
                    Linear::new(&mut store, &format!("senet.decoder{i}.linear"), c, c)?,
                ))
            })
            .collect::<Result<_>>()?;
        let head_hidden = Linear::new(&mut store, "senet.head.hidden", c, c)?;
        let head_out = Linear::new(&mut store, "senet.head.out", c, layout.seen.len())?;
        Ok(SeNet {
            layout,
            store,
            extractor,
            context,
            scan_blocks,
            init_token,
            decoder,
            head_hidden,
            head_out,
        })
    }

    /// Rebuilds the network for `layout` and fills it from a checkpoint.
    pub fn load<R: Read>(layout: SeNetLayout, checkpoint: R) -> Result<Self> {
        let mut net = SeNet::new(layout, 0)?;
        net.store.read_checkpoint(checkpoint)?;
        Ok(net)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        self.store.write_checkpoint(w)
    }

    pub fn dim(&self) -> usize {
        self.layout.model.dim
    }

    pub fn scene_cache(&self, corpus: &Corpus) -> Result<SceneCache> {
        SceneCache::new(corpus, &self.layout.model)
    }

    /// Coarse image tokens and per-fixation tokens.
    pub fn extract_features(&self, tape: &mut Tape, scene: &SceneFeatures, instance: &ScanpathInstance) -> (Var, Var) {
        let image = self.extractor.image_tokens(tape, scene);
        let fix = self.extractor.fixation_tokens(tape, scene, &instance.fixations, self.layout.model.categories);
        (image, fix)
    }

    pub fn encode_context(&self, tape: &mut Tape, task: usize, image: Var) -> Result<Var> {
        self.context.forward(tape, task, image)
    }

    /// Adds duration and position encodings to the fixation tokens, runs the
    /// scanpath stack behind the context rows and returns the fixation rows.
    pub fn encode_scanpath(&self, tape: &mut Tape, context: Var, fix_tokens: Var, instance: &ScanpathInstance) -> Result<Var> {
        let n = instance.fixations.len();
        if tape.value(fix_tokens).nrows() != n {
            return Err(Error::Shape(format!(
                "{} fixation tokens for {n} fixations",
                tape.value(fix_tokens).nrows()
            )));
        }
        if n == 0 {
            return Err(Error::invalid("scanpath without fixations"));
        }
        let c = self.dim();
        let mut extra = Matrix::zeros((n, c));
        for (i, f) in instance.fixations.iter().enumerate() {
            let mut row = pos2d(f.x, f.y, c)?;
            if let Some(k) = self.layout.duration_index(f.duration_ms) {
                for (r, t) in row.iter_mut().zip(pos1d(k, c)?) {
                    *r += t;
                }
            }
            extra.row_mut(i).assign(&ndarray::Array1::from(row));
        }
        let extra = tape.constant(extra);
        let tokens = tape.add(fix_tokens, extra);
        let ctx_rows = tape.value(context).nrows();
        let mut x = tape.concat_rows(&[context, tokens]);
        for block in &self.scan_blocks {
            x = block.forward(tape, x, None, None)?.out;
        }
        Ok(tape.slice_rows(x, ctx_rows, ctx_rows + n))
    }

    /// Learned subject token refined by cross-attention over the fixations.
    pub fn decode_subject(&self, tape: &mut Tape, refined: Var) -> Result<SeNetPass> {
        let mut e = tape.param(self.init_token);
        let mut last = Vec::new();
        for (block, linear) in &self.decoder {
            let a = block.forward(tape, e, Some(refined), None)?;
            let y = linear.forward(tape, a.out);
            e = tape.relu(y);
            last = a.weights;
        }
        let mut attention = last[0];
        for &w in &last[1..] {
            attention = tape.add(attention, w);
        }
        let attention = tape.scale(attention, 1.0 / last.len() as f64);
        Ok(SeNetPass { embedding: e, attention })
    }

    /// Logits over seen subjects.
    pub fn predict_subject_id(&self, tape: &mut Tape, e: Var) -> Var {
        let h = self.head_hidden.forward(tape, e);
        let h = tape.relu(h);
        self.head_out.forward(tape, h)
    }

    /// Full forward pass on a tape.
    pub fn pass(&self, tape: &mut Tape, scene: &SceneFeatures, instance: &ScanpathInstance) -> Result<SeNetPass> {
        let task = self.layout.task_index(&instance.task)?;
        let (image, fix) = self.extract_features(tape, scene, instance);
        let context = self.encode_context(tape, task, image)?;
        let refined = self.encode_scanpath(tape, context, fix, instance)?;
        self.decode_subject(tape, refined)
    }

    /// `f(d)`: the embedding of one scanpath.
    pub fn embed(&self, scene: &SceneFeatures, instance: &ScanpathInstance) -> Result<SubjectEmbedding> {
        Ok(self.embed_detailed(scene, instance)?.0)
    }

    /// Embedding plus decoder attention weights and subject logits.
    pub fn embed_detailed(&self, scene: &SceneFeatures, instance: &ScanpathInstance) -> Result<(SubjectEmbedding, Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new(&self.store);
        let pass = self.pass(&mut tape, scene, instance)?;
        let logits = self.predict_subject_id(&mut tape, pass.embedding);
        let values = tape.value(pass.embedding).iter().copied().collect::<Vec<_>>();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("subject embedding".into()));
        }
        Ok((
            SubjectEmbedding { values, prototype: false },
            tape.value(pass.attention).iter().copied().collect(),
            tape.value(logits).iter().copied().collect(),
        ))
    }

    /// Index of the most likely seen subject.
    pub fn classify(&self, scene: &SceneFeatures, instance: &ScanpathInstance) -> Result<usize> {
        let (_, _, logits) = self.embed_detailed(scene, instance)?;
        Ok(argmax(&logits))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}
