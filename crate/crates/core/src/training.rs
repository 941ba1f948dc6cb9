//! Triplet construction, the classification plus triplet objective, and
//! the embedding-network training loop.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, DurationBinner, ScanpathInstance, SplitSpec};
use crate::error::{Error, Result};
use crate::numerics::{AdamW, Gradients, Tape, Var};
use crate::seed;
use crate::senet::{DurationMode, ModelConfig, SceneCache, SceneFeatures, SeNet, SeNetLayout};
use crate::synthetic::Symmetry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "cls")]
    Cls,
    #[serde(rename = "contrast")]
    Contrast,
    #[serde(rename = "cls+contrast")]
    ClsContrast,
}

impl LossMode {
    pub fn uses_cls(self) -> bool {
        matches!(self, LossMode::Cls | LossMode::ClsContrast)
    }

    pub fn uses_contrast(self) -> bool {
        matches!(self, LossMode::Contrast | LossMode::ClsContrast)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Cls => "cls",
            LossMode::Contrast => "contrast",
            LossMode::ClsContrast => "cls+contrast",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(LossMode::Cls),
            "contrast" => Ok(LossMode::Contrast),
            "cls+contrast" => Ok(LossMode::ClsContrast),
            _ => Err(Error::domain("loss_mode", format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub duration_mode: DurationMode,
    pub bins: usize,
    pub use_task_encoder: bool,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 5.0,
            learning_rate: 1e-4,
            epochs: 25,
            batch_size: 16,
            loss_mode: LossMode::ClsContrast,
            duration_mode: DurationMode::Quantile,
            bins: 10,
            use_task_encoder: true,
            seed: 0,
            weight_decay: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::domain("margin", "must be finite and >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::domain("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size", "must be >= 1"));
        }
        if self.bins < 2 {
            return Err(Error::domain("bins", "must be >= 2"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::domain("weight_decay", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Bins for the configured duration mode, fitted on `durations`.
    pub fn fit_binner(&self, durations: &[u32]) -> Result<Option<DurationBinner>> {
        match self.duration_mode {
            DurationMode::Quantile => DurationBinner::fit_quantile(durations, self.bins).map(Some),
            DurationMode::Uniform => DurationBinner::fit_uniform(durations, self.bins).map(Some),
            DurationMode::None | DurationMode::Raw => Ok(None),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet<'a> {
    pub anchor: &'a ScanpathInstance,
    pub positive: &'a ScanpathInstance,
    pub negative: &'a ScanpathInstance,
}

/// Draws triplets from a fixed pool of instances.
pub struct TripletSampler<'a> {
    pool: Vec<&'a ScanpathInstance>,
    by_subject: BTreeMap<&'a str, Vec<usize>>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(pool: Vec<&'a ScanpathInstance>) -> Result<Self> {
        let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, inst) in pool.iter().enumerate() {
            by_subject.entry(inst.subject_id.as_str()).or_default().push(i);
        }
        if by_subject.len() < 2 {
            return Err(Error::invalid(format!("triplets need two subjects, pool has {}", by_subject.len())));
        }
        Ok(TripletSampler { pool, by_subject })
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// Anchor uniform over the pool.
    pub fn sample(&self, rng: &mut seed::Rng) -> Result<Triplet<'a>> {
        let anchor = rng.random_range(0..self.pool.len());
        self.sample_for(anchor, rng)
    }

    /// Positive uniform over the anchor subject's other instances, negative
    /// uniform over every instance of other subjects.
    pub fn sample_for(&self, anchor: usize, rng: &mut seed::Rng) -> Result<Triplet<'a>> {
        let a = *self
            .pool
            .get(anchor)
            .ok_or_else(|| Error::invalid(format!("anchor {anchor} outside a pool of {}", self.pool.len())))?;
        let same = &self.by_subject[a.subject_id.as_str()];
        if same.len() < 2 {
            return Err(Error::InsufficientInstances {
                subject: a.subject_id.clone(),
                needed: 2,
                available: same.len(),
            });
        }
        let mut p = rng.random_range(0..same.len() - 1);
        if same[p] == anchor {
            p = same.len() - 1;
        }
        let others = self.pool.len() - same.len();
        let mut k = rng.random_range(0..others);
        // walk subjects in order until the k-th foreign instance
        let mut negative = None;
        for (s, idx) in &self.by_subject {
            if *s == a.subject_id {
                continue;
            }
            if k < idx.len() {
                negative = Some(idx[k]);
                break;
            }
            k -= idx.len();
        }
        Ok(Triplet {
            anchor: a,
            positive: self.pool[same[p]],
            negative: self.pool[negative.expect("negative index in range")],
        })
    }
}

/// Triplet on the base training set (seen subjects, training scenes).
pub fn sample_triplet<'a>(corpus: &'a Corpus, split: &'a SplitSpec, seed: u64) -> Result<Triplet<'a>> {
    let sampler = TripletSampler::new(split.base_instances(corpus).collect())?;
    sampler.sample(&mut seed::rng(seed))
}

/// `max(|e - e+|^2 - |e - e-|^2 + m, 0)`.
pub fn triplet_loss(e: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> Result<f64> {
    if e.len() != pos.len() || e.len() != neg.len() {
        return Err(Error::Shape("triplet embeddings differ in dimension".into()));
    }
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    Ok((d(e, pos) - d(e, neg) + margin).max(0.0))
}

/// Tape version of [`triplet_loss`]; inside the hinge region every upstream
/// gradient is exactly zero.
pub fn triplet_loss_tape(tape: &mut Tape, e: Var, pos: Var, neg: Var, margin: f64) -> Var {
    let dp = tape.sub(e, pos);
    let dp = tape.sum_sq(dp);
    let dn = tape.sub(e, neg);
    let dn = tape.sum_sq(dn);
    let gap = tape.sub(dp, dn);
    let m = tape.row(&[margin]);
    let z = tape.add(gap, m);
    tape.relu(z)
}

#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: f64,
    pub cls: f64,
    pub contrast: f64,
    pub grads: Gradients,
}

/// Combined objective for one triplet. All three scanpaths go through the
/// same parameters on one tape.
pub fn combined_loss(net: &SeNet, cache: &SceneCache, triplet: &Triplet, config: &TrainConfig) -> Result<LossParts> {
    let items = [triplet.anchor, triplet.positive, triplet.negative];
    let scenes = [cache.get(&items[0].scene_id)?, cache.get(&items[1].scene_id)?, cache.get(&items[2].scene_id)?];
    combined_loss_on(net, scenes, items, config)
}

/// [`combined_loss`] with explicit scene features for anchor, positive and
/// negative.
pub fn combined_loss_on(net: &SeNet, scenes: [&SceneFeatures; 3], items: [&ScanpathInstance; 3], config: &TrainConfig) -> Result<LossParts> {
    let mut tape = Tape::new(&net.store);
    let mut embeddings = Vec::with_capacity(3);
    let mut terms: Vec<Var> = Vec::new();
    let mut cls_terms = Vec::new();
    for (scene, inst) in scenes.into_iter().zip(items) {
        let pass = net.pass(&mut tape, scene, inst)?;
        embeddings.push(pass.embedding);
        if config.loss_mode.uses_cls() {
            let target = net
                .layout
                .seen
                .iter()
                .position(|s| *s == inst.subject_id)
                .ok_or_else(|| Error::domain("subject_id", format!("`{}` is not a seen subject", inst.subject_id)))?;
            let logits = net.predict_subject_id(&mut tape, pass.embedding);
            let ce = tape.cross_entropy(logits, target);
            cls_terms.push(ce);
            terms.push(ce);
        }
    }
    let mut contrast = 0.0;
    if config.loss_mode.uses_contrast() {
        let t = triplet_loss_tape(&mut tape, embeddings[0], embeddings[1], embeddings[2], config.margin);
        contrast = tape.scalar(t);
        terms.push(t);
    }
    let cls: f64 = cls_terms.iter().map(|&v| tape.scalar(v)).sum();
    let total = if terms.len() == 1 { terms[0] } else { tape.concat_cols(&terms) };
    let total = tape.sum(total);
    let value = tape.scalar(total);
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(LossParts {
        total: value,
        cls,
        contrast,
        grads: tape.backward(total),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub cls_loss: f64,
    pub contrast_loss: f64,
}

pub fn write_loss_trace<W: Write>(mut w: W, trace: &[EpochLoss]) -> Result<()> {
    writeln!(w, "epoch,mean_loss,cls_loss,contrast_loss")?;
    for e in trace {
        writeln!(w, "{},{},{},{}", e.epoch, e.mean_loss, e.cls_loss, e.contrast_loss)?;
    }
    Ok(())
}

pub struct TrainedSeNet {
    pub net: SeNet,
    pub trace: Vec<EpochLoss>,
    pub steps: u64,
}

/// Optimizer steps per epoch: one batch per `batch_size` seen instances.
pub fn steps_per_epoch(instances: usize, batch_size: usize) -> usize {
    (instances / batch_size).max(1)
}

/// Network layout implied by a corpus, split and training config.
pub fn senet_layout(corpus: &Corpus, split: &SplitSpec, config: &TrainConfig, model: &ModelConfig, binner: Option<DurationBinner>) -> Result<SeNetLayout> {
    let binner = match (config.duration_mode, binner) {
        (DurationMode::Quantile | DurationMode::Uniform, Some(b)) => Some(b),
        (DurationMode::Quantile | DurationMode::Uniform, None) => config.fit_binner(&split.base_corpus(corpus).durations())?,
        _ => None,
    };
    Ok(SeNetLayout {
        model: model.clone(),
        tasks: corpus.tasks.clone(),
        seen: split.seen_list(),
        duration_mode: config.duration_mode,
        use_task_encoder: config.use_task_encoder,
        binner,
    })
}

/// `inst` with every fixation mapped through `sym`.
pub fn transform_instance(inst: &ScanpathInstance, sym: Symmetry) -> ScanpathInstance {
    let mut out = inst.clone();
    for f in &mut out.fixations {
        (f.x, f.y) = sym.apply(f.x, f.y);
    }
    out
}

/// Trains the embedding network on the base training set. Triplets are
/// drawn fresh for every step and each scanpath is seen through a random
/// symmetry of its scene grid. Batch gradients are averaged in a fixed
/// order so the result does not depend on thread scheduling. Parameters are
/// rounded to `f32` at the end so the in-memory model equals its checkpoint.
pub fn train_senet(
    corpus: &Corpus,
    split: &SplitSpec,
    config: &TrainConfig,
    model: &ModelConfig,
    binner: Option<DurationBinner>,
) -> Result<TrainedSeNet> {
    config.validate()?;
    split.validate(corpus)?;
    let layout = senet_layout(corpus, split, config, model, binner)?;
    let mut net = SeNet::new(layout, seed::derive(config.seed, 1))?;
    let cache = SceneCache::with_symmetries(corpus, &net.layout.model)?;
    let sampler = TripletSampler::new(split.base_instances(corpus).collect())?;
    let steps = steps_per_epoch(sampler.len(), config.batch_size);
    let mut opt = AdamW::new(&net.store, config.learning_rate, config.weight_decay);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (mut total, mut cls, mut contrast) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let mut rng = seed::rng(seed::derive(seed::derive(config.seed, epoch as u64), step as u64));
            let mut batch = Vec::with_capacity(config.batch_size);
            for _ in 0..config.batch_size {
                let t = sampler.sample(&mut rng)?;
                let mut item = |inst: &ScanpathInstance| -> Result<(&SceneFeatures, ScanpathInstance)> {
                    let syms = cache.symmetries(&inst.scene_id);
                    let sym = syms[rng.random_range(0..syms.len())];
                    Ok((cache.get_variant(&inst.scene_id, sym)?, transform_instance(inst, sym)))
                };
                batch.push([item(t.anchor)?, item(t.positive)?, item(t.negative)?]);
            }
            let parts: Vec<LossParts> = batch
                .par_iter()
                .map(|[a, p, n]| combined_loss_on(&net, [a.0, p.0, n.0], [&a.1, &p.1, &n.1], config))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch },
                    other => other,
                })?;
            let mut grads = Gradients::zeros_like(&net.store);
            for p in &parts {
                grads.add_assign(&p.grads);
                total += p.total;
                cls += p.cls;
                contrast += p.contrast;
            }
            grads.scale(1.0 / parts.len() as f64);
            opt.step(&mut net.store, &grads);
        }
        let n = (steps * config.batch_size) as f64;
        let row = EpochLoss {
            epoch,
            mean_loss: total / n,
            cls_loss: cls / n,
            contrast_loss: contrast / n,
        };
        if !row.mean_loss.is_finite() || net.store.ids().any(|id| net.store.value(id).iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { epoch });
        }
        trace.push(row);
    }
    net.store.round_to_f32();
    Ok(TrainedSeNet {
        net,
        trace,
        steps: opt.steps(),
    })
}

/// Fraction of `instances` whose subject the head identifies.
pub fn classification_accuracy<'a>(net: &SeNet, cache: &SceneCache, instances: impl IntoIterator<Item = &'a ScanpathInstance>) -> Result<f64> {
    let items: Vec<&ScanpathInstance> = instances.into_iter().collect();
    if items.is_empty() {
        return Err(Error::invalid("accuracy over no instances"));
    }
    let hits: Vec<bool> = items
        .par_iter()
        .map(|inst| {
            let predicted = net.classify(cache.get(&inst.scene_id)?, inst)?;
            Ok(net.layout.seen.get(predicted).is_some_and(|s| *s == inst.subject_id))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / items.len() as f64)
}
