use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{multimatch, scanmatch, sed, GridSpec, MultiMatchScore};
use crate::data::ScanpathInstance;
use crate::error::{Error, Result};

/// `(scene_id, subject_id, task)`.
pub type ScanpathKey = (String, String, String);

pub fn key_of(s: &ScanpathInstance) -> ScanpathKey {
    (s.scene_id.clone(), s.subject_id.clone(), s.task.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub grid: GridSpec,
    pub gap_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// MultiMatch mean is the arithmetic mean of its five components.
    pub mm_aggregation: String,
    pub mm_simplification: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            grid: GridSpec::default(),
            gap_penalty: 0.0,
            n: None,
            seed: None,
            mm_aggregation: "arithmetic mean".into(),
            mm_simplification: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub run: usize,
    pub scene_id: String,
    pub subject_id: String,
    pub task: String,
    pub sm: f64,
    /// Absent when either scanpath has a single fixation.
    pub mm: Option<MultiMatchScore>,
    pub sed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sm: f64,
    pub mm: Option<MultiMatchScore>,
    pub sed: f64,
    pub pairs: usize,
    pub mm_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scanpath_accuracy: Option<f64>,
}

impl Aggregate {
    fn of(items: &[PairMetrics]) -> Aggregate {
        let n = items.len() as f64;
        let sm = items.iter().map(|p| p.sm).sum::<f64>() / n;
        let sed = items.iter().map(|p| p.sed as f64).sum::<f64>() / n;
        let mms: Vec<&MultiMatchScore> = items.iter().filter_map(|p| p.mm.as_ref()).collect();
        Aggregate {
            sm,
            mm: mean_mm(&mms),
            sed,
            pairs: items.len(),
            mm_pairs: mms.len(),
            scanpath_accuracy: None,
        }
    }

    /// Mean of several aggregates, each weighted equally.
    pub fn mean(parts: &[Aggregate]) -> Result<Aggregate> {
        if parts.is_empty() {
            return Err(Error::invalid("no aggregates to average"));
        }
        let n = parts.len() as f64;
        let mms: Vec<&MultiMatchScore> = parts.iter().filter_map(|a| a.mm.as_ref()).collect();
        let acc: Vec<f64> = parts.iter().filter_map(|a| a.scanpath_accuracy).collect();
        Ok(Aggregate {
            sm: parts.iter().map(|a| a.sm).sum::<f64>() / n,
            mm: mean_mm(&mms),
            sed: parts.iter().map(|a| a.sed).sum::<f64>() / n,
            pairs: parts.iter().map(|a| a.pairs).sum(),
            mm_pairs: parts.iter().map(|a| a.mm_pairs).sum(),
            scanpath_accuracy: (acc.len() == parts.len()).then(|| acc.iter().sum::<f64>() / n),
        })
    }
}

fn mean_mm(items: &[&MultiMatchScore]) -> Option<MultiMatchScore> {
    if items.is_empty() {
        return None;
    }
    let k = items.len() as f64;
    let mut sums = [0.0; 5];
    for m in items {
        for (s, c) in sums.iter_mut().zip(m.components()) {
            *s += c;
        }
    }
    Some(MultiMatchScore::from_components(sums[0] / k, sums[1] / k, sums[2] / k, sums[3] / k, sums[4] / k))
}

/// Half-widths of 95% t-intervals across resamplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ci95 {
    pub sm: f64,
    pub mm: Option<f64>,
    pub sed: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: MetricConfig,
    pub per_item: Vec<PairMetrics>,
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci95: Option<Ci95>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<Aggregate>,
}

impl MetricReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }
}

/// CSV with one labelled row per aggregate: `label,sm,mm,sed`.
pub fn write_aggregate_csv<W: Write>(mut w: W, rows: &[(String, Aggregate)]) -> Result<()> {
    writeln!(w, "label,sm,mm,sed")?;
    for (label, a) in rows {
        let mm = a.mm.map_or(String::new(), |m| format!("{:.6}", m.mean));
        writeln!(w, "{label},{:.6},{mm},{:.6}", a.sm, a.sed)?;
    }
    Ok(())
}

/// `t(0.975, n-1) * s / sqrt(n)`; `None` for fewer than two values.
pub fn ci95_half_width(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.975);
    Some(t * var.sqrt() / (n as f64).sqrt())
}

fn score_pairs(pairs: &[(ScanpathInstance, ScanpathInstance)], config: &MetricConfig, run: usize) -> Result<Vec<PairMetrics>> {
    pairs
        .par_iter()
        .map(|(pred, gt)| {
            if pred.scene_id != gt.scene_id || pred.task != gt.task {
                return Err(Error::invalid(format!(
                    "misaligned pair: prediction {} / {} against ground truth {} / {}",
                    pred.scene_id, pred.task, gt.scene_id, gt.task
                )));
            }
            let mm = if pred.fixations.len() >= 2 && gt.fixations.len() >= 2 { Some(multimatch(pred, gt)?) } else { None };
            Ok(PairMetrics {
                run,
                scene_id: gt.scene_id.clone(),
                subject_id: gt.subject_id.clone(),
                task: gt.task.clone(),
                sm: scanmatch(pred, gt, &config.grid, config.gap_penalty)?,
                mm,
                sed: sed(pred, gt, &config.grid)?,
            })
        })
        .collect()
}

/// Metrics of aligned (prediction, ground truth) pairs.
pub fn evaluate(pairs: &[(ScanpathInstance, ScanpathInstance)], config: &MetricConfig) -> Result<MetricReport> {
    config.grid.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let per_item = score_pairs(pairs, config, 0)?;
    Ok(MetricReport {
        config: config.clone(),
        aggregate: Aggregate::of(&per_item),
        per_item,
        ci95: None,
        runs: Vec::new(),
    })
}

/// One evaluation per support resampling; the aggregate is the mean over
/// runs and `ci95` holds the half-widths across them.
pub fn evaluate_resamplings(runs: &[Vec<(ScanpathInstance, ScanpathInstance)>], config: &MetricConfig) -> Result<MetricReport> {
    config.grid.validate()?;
    if runs.is_empty() || runs.iter().any(Vec::is_empty) {
        return Err(Error::invalid("every resampling needs at least one pair"));
    }
    let mut per_item = Vec::new();
    let mut aggregates = Vec::with_capacity(runs.len());
    for (r, pairs) in runs.iter().enumerate() {
        let items = score_pairs(pairs, config, r)?;
        aggregates.push(Aggregate::of(&items));
        per_item.extend(items);
    }
    let ci95 = with_ci(&aggregates);
    Ok(MetricReport {
        config: config.clone(),
        per_item,
        aggregate: Aggregate::mean(&aggregates)?,
        ci95,
        runs: aggregates,
    })
}

pub(crate) fn with_ci(aggregates: &[Aggregate]) -> Option<Ci95> {
    let sm: Vec<f64> = aggregates.iter().map(|a| a.sm).collect();
    let sed: Vec<f64> = aggregates.iter().map(|a| a.sed).collect();
    let mm: Vec<f64> = aggregates.iter().filter_map(|a| a.mm.map(|m| m.mean)).collect();
    Some(Ci95 {
        sm: ci95_half_width(&sm)?,
        mm: if mm.len() == aggregates.len() { ci95_half_width(&mm) } else { None },
        sed: ci95_half_width(&sed)?,
        runs: aggregates.len(),
    })
}

/// Percentage of ground-truth scanpaths whose own subject's prediction is
/// the unique ScanMatch-best among all subjects' predictions on that scene
/// and task. Ties count as incorrect.
pub fn scanpath_accuracy(
    predictions: &BTreeMap<ScanpathKey, ScanpathInstance>,
    ground_truths: &BTreeMap<ScanpathKey, ScanpathInstance>,
    config: &MetricConfig,
) -> Result<f64> {
    if ground_truths.is_empty() {
        return Err(Error::invalid("no ground truth scanpaths"));
    }
    let subjects: Vec<&String> = {
        let mut s: Vec<&String> = ground_truths.keys().map(|(_, subject, _)| subject).collect();
        s.sort();
        s.dedup();
        s
    };
    let keys: Vec<&ScanpathKey> = ground_truths.keys().collect();
    let hits = keys
        .par_iter()
        .map(|key| {
            let (scene, own, task) = key;
            let gt = &ground_truths[*key];
            let mut best = f64::NEG_INFINITY;
            let mut winners = Vec::new();
            for &s in &subjects {
                let k = (scene.clone(), s.clone(), task.clone());
                let pred = predictions
                    .get(&k)
                    .ok_or_else(|| Error::invalid(format!("missing prediction for {scene} / {s} / {task}")))?;
                let score = scanmatch(pred, gt, &config.grid, config.gap_penalty)?;
                if score > best {
                    best = score;
                    winners.clear();
                }
                if score == best {
                    winners.push(s);
                }
            }
            Ok(usize::from(winners.len() == 1 && winners[0] == own))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(100.0 * hits.iter().sum::<usize>() as f64 / keys.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Fixation, FREE_VIEWING};

    fn sp(scene: &str, subject: &str, pts: &[(f64, f64)]) -> ScanpathInstance {
        ScanpathInstance {
            scene_id: scene.into(),
            subject_id: subject.into(),
            task: FREE_VIEWING.into(),
            fixations: pts.iter().map(|&(x, y)| Fixation::new(x, y, 200)).collect(),
        }
    }

    #[test]
    fn single_pair_aggregate_is_the_pair() {
        let a = sp("c", "s", &[(0.1, 0.1), (0.6, 0.3), (0.2, 0.9)]);
        let b = sp("c", "s", &[(0.2, 0.1), (0.5, 0.5)]);
        let r = evaluate(&[(a, b)], &MetricConfig::default()).unwrap();
        let p = &r.per_item[0];
        assert_eq!(r.aggregate.sm, p.sm);
        assert_eq!(r.aggregate.sed, p.sed as f64);
        assert_eq!(r.aggregate.mm, p.mm);
    }

    #[test]
    fn duplicated_runs_have_zero_ci() {
        let pairs = vec![
            (sp("c", "s", &[(0.1, 0.1), (0.6, 0.3)]), sp("c", "s", &[(0.2, 0.1), (0.5, 0.5)])),
            (sp("d", "s", &[(0.7, 0.1)]), sp("d", "s", &[(0.2, 0.8), (0.5, 0.5)])),
        ];
        let single = evaluate(&pairs, &MetricConfig::default()).unwrap();
        let r = evaluate_resamplings(&[pairs.clone(), pairs], &MetricConfig::default()).unwrap();
        assert_eq!(r.aggregate.sm, single.aggregate.sm);
        assert_eq!(r.aggregate.sed, single.aggregate.sed);
        let ci = r.ci95.unwrap();
        assert_eq!((ci.sm, ci.sed, ci.mm), (0.0, 0.0, Some(0.0)));
        // MM skipped on the single-fixation pair
        assert_eq!(single.aggregate.mm_pairs, 1);
    }

    #[test]
    fn ci_matches_t_table() {
        // t(0.975, 4) = 2.776445
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let h = ci95_half_width(&v).unwrap();
        let expected = 2.776_445_105_2 * (2.5f64).sqrt() / 5f64.sqrt();
        assert!((h - expected).abs() < 1e-8, "{h} vs {expected}");
        assert!(ci95_half_width(&[1.0]).is_none());
    }

    #[test]
    fn misaligned_pairs_rejected() {
        let r = evaluate(&[(sp("c", "s", &[(0.1, 0.1)]), sp("d", "s", &[(0.1, 0.1)]))], &MetricConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn accuracy_cases() {
        let cfg = MetricConfig::default();
        let gt_a = sp("c", "a", &[(0.1, 0.1), (0.9, 0.2)]);
        let gt_b = sp("c", "b", &[(0.8, 0.9), (0.1, 0.7)]);
        let mut gts = BTreeMap::new();
        gts.insert(key_of(&gt_a), gt_a.clone());
        let mut preds = BTreeMap::new();
        preds.insert(key_of(&gt_a), sp("c", "a", &[(0.5, 0.5)]));
        assert_eq!(scanpath_accuracy(&preds, &gts, &cfg).unwrap(), 100.0);

        gts.insert(key_of(&gt_b), gt_b.clone());
        preds.insert(key_of(&gt_a), gt_a.clone());
        preds.insert(key_of(&gt_b), gt_b.clone());
        assert_eq!(scanpath_accuracy(&preds, &gts, &cfg).unwrap(), 100.0);

        let same = sp("c", "x", &[(0.4, 0.4), (0.6, 0.6)]);
        for k in [key_of(&gt_a), key_of(&gt_b)] {
            let mut p = same.clone();
            p.subject_id = k.1.clone();
            preds.insert(k, p);
        }
        assert_eq!(scanpath_accuracy(&preds, &gts, &cfg).unwrap(), 0.0);

        preds.remove(&key_of(&gt_b));
        assert!(scanpath_accuracy(&preds, &gts, &cfg).is_err());
    }

    #[test]
    fn csv_rows() {
        let a = Aggregate {
            sm: 0.5,
            mm: Some(MultiMatchScore::from_components(1.0, 1.0, 1.0, 1.0, 0.5)),
            sed: 3.0,
            pairs: 1,
            mm_pairs: 1,
            scanpath_accuracy: None,
        };
        let mut out = Vec::new();
        write_aggregate_csv(&mut out, &[("n=1".into(), a)]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "label,sm,mm,sed\nn=1,0.500000,0.900000,3.000000\n");
    }
}
