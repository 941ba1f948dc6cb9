use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{evaluate, key_of, scanpath_accuracy, Aggregate, MetricConfig, ScanpathKey};
use crate::data::ScanpathInstance;
use crate::error::{Error, Result};
use crate::predictor::{DecodeMode, Predictor};
use crate::seed;
use crate::senet::{SceneCache, SubjectEmbedding};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossEvalConfig {
    pub m_others: usize,
    pub seed: u64,
    pub mode: DecodeMode,
    pub max_len: usize,
    pub metrics: MetricConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub subject_id: String,
    pub own: Aggregate,
    /// Mean over the other subjects' prototypes; absent when `m_others` is 0.
    pub cross: Option<Aggregate>,
    pub others: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossReport {
    pub config: CrossEvalConfig,
    pub rows: Vec<CrossRow>,
    pub own: Aggregate,
    pub cross: Option<Aggregate>,
}

/// Predicts every ground-truth scene once per prototype owner.
pub(crate) fn prediction_matrix(
    predictor: &Predictor,
    scenes: &SceneCache,
    prototypes: &BTreeMap<String, SubjectEmbedding>,
    ground_truth: &[ScanpathInstance],
    mode: DecodeMode,
    max_len: usize,
    seed: u64,
) -> Result<BTreeMap<ScanpathKey, ScanpathInstance>> {
    let queries: BTreeSet<(&str, &str)> = ground_truth.iter().map(|g| (g.scene_id.as_str(), g.task.as_str())).collect();
    let jobs: Vec<(&str, &str, &String)> = queries
        .iter()
        .flat_map(|&(scene, task)| prototypes.keys().map(move |s| (scene, task, s)))
        .collect();
    let out: Vec<ScanpathInstance> = jobs
        .par_iter()
        .map(|&(scene, task, subject)| {
            let p = predictor.predict(scene, scenes.get(scene)?, task, subject, &prototypes[subject], max_len, mode, seed)?;
            Ok(p.instance())
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().map(|p| (key_of(&p), p)).collect())
}

/// Scores every subject's ground truth against predictions from its own
/// prototype and from `m_others` randomly drawn other prototypes.
pub fn cross_subject_eval(
    predictor: &Predictor,
    scenes: &SceneCache,
    prototypes: &BTreeMap<String, SubjectEmbedding>,
    ground_truth: &[ScanpathInstance],
    config: &CrossEvalConfig,
) -> Result<CrossReport> {
    if prototypes.len() < config.m_others + 1 {
        return Err(Error::InsufficientInstances {
            subject: "unseen subjects".into(),
            needed: config.m_others + 1,
            available: prototypes.len(),
        });
    }
    if ground_truth.is_empty() {
        return Err(Error::invalid("empty query set"));
    }
    if let Some(g) = ground_truth.iter().find(|g| !prototypes.contains_key(&g.subject_id)) {
        return Err(Error::invalid(format!("no prototype for subject `{}`", g.subject_id)));
    }
    let preds = prediction_matrix(predictor, scenes, prototypes, ground_truth, config.mode, config.max_len, config.seed)?;
    let lookup = |gt: &ScanpathInstance, owner: &str| -> ScanpathInstance {
        let mut p = preds[&(gt.scene_id.clone(), owner.to_owned(), gt.task.clone())].clone();
        p.subject_id = gt.subject_id.clone();
        p
    };
    let mut rows = Vec::new();
    let (mut all_own, mut all_cross) = (Vec::new(), Vec::new());
    for subject in prototypes.keys() {
        let gts: Vec<&ScanpathInstance> = ground_truth.iter().filter(|g| &g.subject_id == subject).collect();
        if gts.is_empty() {
            continue;
        }
        let own: Vec<(ScanpathInstance, ScanpathInstance)> = gts.iter().map(|g| (lookup(g, subject), (*g).clone())).collect();
        let candidates: Vec<&String> = prototypes.keys().filter(|s| *s != subject).collect();
        let picked = index::sample(&mut seed::rng(seed::derive_str(config.seed, subject)), candidates.len(), config.m_others);
        let others: Vec<String> = picked.iter().map(|i| candidates[i].clone()).collect();
        let cross = if others.is_empty() {
            None
        } else {
            let parts = others
                .iter()
                .map(|o| {
                    let pairs: Vec<_> = gts.iter().map(|g| (lookup(g, o), (*g).clone())).collect();
                    all_cross.extend(pairs.iter().cloned());
                    Ok(evaluate(&pairs, &config.metrics)?.aggregate)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Aggregate::mean(&parts)?)
        };
        let own_agg = evaluate(&own, &config.metrics)?.aggregate;
        all_own.extend(own);
        rows.push(CrossRow {
            subject_id: subject.clone(),
            own: own_agg,
            cross,
            others,
        });
    }
    let mut own = evaluate(&all_own, &config.metrics)?.aggregate;
    let gts: BTreeMap<ScanpathKey, ScanpathInstance> = ground_truth.iter().map(|g| (key_of(g), g.clone())).collect();
    own.scanpath_accuracy = Some(scanpath_accuracy(&preds, &gts, &config.metrics)?);
    let cross = if all_cross.is_empty() { None } else { Some(evaluate(&all_cross, &config.metrics)?.aggregate) };
    Ok(CrossReport {
        config: config.clone(),
        rows,
        own,
        cross,
    })
}
