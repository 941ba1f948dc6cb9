//! End-to-end runs: the separable fixture, support embedding, n-shot
//! evaluation with resampled supports, and ablation pipelines.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_supports, split_subjects, Corpus, DurationBinner, ScanpathInstance, SplitSpec, SupportSet, FREE_VIEWING};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_resamplings, key_of, prediction_matrix, scanpath_accuracy, MetricConfig, MetricReport, ScanpathKey};
use crate::predictor::{train_predictor, DecodeMode, Predictor, PredictorConfig};
use crate::seed;
use crate::senet::{prototype, ModelConfig, SceneCache, SeNet, SubjectEmbedding};
use crate::synthetic::{generate_corpus, separable_profiles};
use crate::training::{train_senet, TrainConfig};

pub const FIXTURE_SCENES: usize = 60;
pub const FIXTURE_MAX_LEN: usize = 10;
pub const UNSEEN_FRACTION: f64 = 0.3;

/// Nine separable profiles viewing 60 free-viewing scenes.
pub fn fixture_corpus(seed: u64) -> Result<Corpus> {
    generate_corpus(&separable_profiles(), FIXTURE_SCENES, &[FREE_VIEWING.to_owned()], FIXTURE_MAX_LEN, seed)
}

/// 6 seen and 3 unseen subjects, a third of the scenes held out.
pub fn fixture_split(corpus: &Corpus, seed: u64) -> Result<SplitSpec> {
    split_subjects(corpus, UNSEEN_FRACTION, seed)
}

/// Prototype of the support scanpaths' embeddings.
pub fn embed_support(senet: &SeNet, cache: &SceneCache, support: &SupportSet) -> Result<SubjectEmbedding> {
    let embeddings: Vec<SubjectEmbedding> = support
        .items
        .par_iter()
        .map(|inst| senet.embed(cache.get(&inst.scene_id)?, inst))
        .collect::<Result<_>>()?;
    prototype(&embeddings)
}

/// Mean embedding of every base training scanpath.
pub fn population_embedding(senet: &SeNet, cache: &SceneCache, corpus: &Corpus, split: &SplitSpec) -> Result<SubjectEmbedding> {
    let items: Vec<&ScanpathInstance> = split.base_instances(corpus).collect();
    let embeddings: Vec<SubjectEmbedding> = items
        .par_iter()
        .map(|inst| senet.embed(cache.get(&inst.scene_id)?, inst))
        .collect::<Result<_>>()?;
    prototype(&embeddings)
}

/// Held-out-scene scanpaths of the unseen subjects.
pub fn query_ground_truth(corpus: &Corpus, split: &SplitSpec) -> Vec<ScanpathInstance> {
    corpus
        .instances
        .iter()
        .filter(|i| split.unseen.contains(&i.subject_id) && split.is_test_scene(&i.scene_id))
        .cloned()
        .collect()
}

/// `repeats` support draws of `n` shots for every unseen subject, as
/// `draws[r][subject]`.
pub fn support_draws(corpus: &Corpus, split: &SplitSpec, n: usize, repeats: usize, seed: u64) -> Result<Vec<BTreeMap<String, SupportSet>>> {
    let mut draws: Vec<BTreeMap<String, SupportSet>> = vec![BTreeMap::new(); repeats];
    for subject in &split.unseen {
        let sets = sample_supports(corpus, split, subject, n, repeats, seed::derive_str(seed, subject))?;
        for (r, set) in sets.into_iter().enumerate() {
            draws[r].insert(subject.clone(), set);
        }
    }
    Ok(draws)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub shots: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub mode: DecodeMode,
    pub max_len: usize,
    pub metrics: MetricConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            shots: vec![1, 5, 10],
            repeats: 10,
            seed: 0,
            mode: DecodeMode::Greedy,
            max_len: FIXTURE_MAX_LEN,
            metrics: MetricConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotReport {
    pub n: usize,
    pub report: MetricReport,
}

/// Everything needed to score predictions on the query set.
pub struct Evaluator<'a> {
    pub corpus: &'a Corpus,
    pub split: &'a SplitSpec,
    pub senet: &'a SeNet,
    pub predictor: &'a Predictor,
    senet_scenes: SceneCache,
    predictor_scenes: SceneCache,
    ground_truth: Vec<ScanpathInstance>,
}

impl<'a> Evaluator<'a> {
    pub fn new(corpus: &'a Corpus, split: &'a SplitSpec, senet: &'a SeNet, predictor: &'a Predictor) -> Result<Self> {
        let ground_truth = query_ground_truth(corpus, split);
        if ground_truth.is_empty() {
            return Err(Error::invalid("no unseen-subject scanpaths on held-out scenes"));
        }
        Ok(Evaluator {
            corpus,
            split,
            senet,
            predictor,
            senet_scenes: senet.scene_cache(corpus)?,
            predictor_scenes: SceneCache::new(corpus, &predictor.layout.model)?,
            ground_truth,
        })
    }

    pub fn ground_truth(&self) -> &[ScanpathInstance] {
        &self.ground_truth
    }

    pub fn predictor_scenes(&self) -> &SceneCache {
        &self.predictor_scenes
    }

    pub fn prototypes(&self, supports: &BTreeMap<String, SupportSet>) -> Result<BTreeMap<String, SubjectEmbedding>> {
        supports
            .iter()
            .map(|(s, set)| Ok((s.clone(), embed_support(self.senet, &self.senet_scenes, set)?)))
            .collect()
    }

    pub fn population(&self) -> Result<SubjectEmbedding> {
        population_embedding(self.senet, &self.senet_scenes, self.corpus, self.split)
    }

    /// Predictions for every query scene under every subject's embedding.
    pub fn predictions(
        &self,
        embeddings: &BTreeMap<String, SubjectEmbedding>,
        config: &EvalConfig,
    ) -> Result<BTreeMap<ScanpathKey, ScanpathInstance>> {
        prediction_matrix(
            self.predictor,
            &self.predictor_scenes,
            embeddings,
            &self.ground_truth,
            config.mode,
            config.max_len,
            config.seed,
        )
    }

    /// Own-embedding (prediction, ground truth) pairs plus scanpath accuracy.
    pub fn score(&self, embeddings: &BTreeMap<String, SubjectEmbedding>, config: &EvalConfig) -> Result<(Vec<(ScanpathInstance, ScanpathInstance)>, f64)> {
        let preds = self.predictions(embeddings, config)?;
        let pairs = self.ground_truth.iter().map(|g| (preds[&key_of(g)].clone(), g.clone())).collect();
        let gts: BTreeMap<ScanpathKey, ScanpathInstance> = self.ground_truth.iter().map(|g| (key_of(g), g.clone())).collect();
        let acc = scanpath_accuracy(&preds, &gts, &config.metrics)?;
        Ok((pairs, acc))
    }

    /// One report per shot count over `repeats` support resamplings.
    pub fn n_shot(&self, config: &EvalConfig) -> Result<Vec<ShotReport>> {
        config
            .shots
            .iter()
            .map(|&n| {
                let draws = support_draws(self.corpus, self.split, n, config.repeats, seed::derive(config.seed, n as u64))?;
                let mut runs = Vec::with_capacity(draws.len());
                let mut accuracy = Vec::with_capacity(draws.len());
                for supports in &draws {
                    let (pairs, acc) = self.score(&self.prototypes(supports)?, config)?;
                    runs.push(pairs);
                    accuracy.push(acc);
                }
                let mut metrics = config.metrics.clone();
                metrics.n = Some(n);
                metrics.seed = Some(config.seed);
                let mut report = evaluate_resamplings(&runs, &metrics)?;
                for (agg, acc) in report.runs.iter_mut().zip(&accuracy) {
                    agg.scanpath_accuracy = Some(*acc);
                }
                report.aggregate.scanpath_accuracy = Some(accuracy.iter().sum::<f64>() / accuracy.len() as f64);
                Ok(ShotReport { n, report })
            })
            .collect()
    }
}

/// Embedding and predictor settings for one full pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub predictor: PredictorConfig,
}

pub struct Pipeline {
    pub senet: SeNet,
    pub predictor: Predictor,
    pub binner: Option<DurationBinner>,
}

/// Trains the embedding network, then the predictor on its frozen output.
pub fn run_pipeline(corpus: &Corpus, split: &SplitSpec, config: &PipelineConfig) -> Result<Pipeline> {
    let binner = config.train.fit_binner(&split.base_corpus(corpus).durations())?;
    let senet = train_senet(corpus, split, &config.train, &config.model, binner.clone())?.net;
    let predictor = train_predictor(corpus, split, &senet, &config.model, &config.predictor)?.predictor;
    Ok(Pipeline { senet, predictor, binner })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        let corpus = fixture_corpus(7).unwrap();
        assert_eq!(corpus.subjects.len(), 9);
        assert_eq!(corpus.instances.len(), 9 * FIXTURE_SCENES);
        let split = fixture_split(&corpus, 7).unwrap();
        assert_eq!((split.seen.len(), split.unseen.len()), (6, 3));
        assert_eq!(split.test_scenes.len(), 20);
        let gt = query_ground_truth(&corpus, &split);
        assert_eq!(gt.len(), 3 * 20);
        let draws = support_draws(&corpus, &split, 10, 3, 1).unwrap();
        assert_eq!(draws.len(), 3);
        for d in &draws {
            for set in d.values() {
                assert_eq!(set.n(), 10);
                assert!(set.items.iter().all(|i| !split.is_test_scene(&i.scene_id)));
            }
        }
    }
}
