use std::collections::{BTreeSet, HashSet};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{Corpus, ScanpathInstance};
use crate::error::{Error, Result};
use crate::seed;

/// Share of scenes held out as query scenes when a split is drawn.
pub const DEFAULT_TEST_SCENE_FRACTION: f64 = 1.0 / 3.0;
pub const MAX_SHOTS: usize = 10;

/// Seen/unseen subject partition plus the held-out query scenes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub seen: BTreeSet<String>,
    pub unseen: BTreeSet<String>,
    /// Scenes reserved for queries; support and training never touch them.
    #[serde(default)]
    pub test_scenes: BTreeSet<String>,
}

impl SplitSpec {
    /// Seen subjects in the order used for classifier outputs.
    pub fn seen_list(&self) -> Vec<String> {
        self.seen.iter().cloned().collect()
    }

    pub fn seen_index(&self, subject: &str) -> Option<usize> {
        self.seen.iter().position(|s| s == subject)
    }

    pub fn is_test_scene(&self, scene_id: &str) -> bool {
        self.test_scenes.contains(scene_id)
    }

    /// Seen-subject instances on training scenes: the base training set.
    pub fn base_instances<'a>(&'a self, corpus: &'a Corpus) -> impl Iterator<Item = &'a ScanpathInstance> + 'a {
        corpus
            .instances
            .iter()
            .filter(|i| self.seen.contains(&i.subject_id) && !self.is_test_scene(&i.scene_id))
    }

    pub fn base_corpus(&self, corpus: &Corpus) -> Corpus {
        corpus.filtered(|i| self.seen.contains(&i.subject_id) && !self.is_test_scene(&i.scene_id))
    }

    /// Seen-subject instances on held-out scenes.
    pub fn held_out_seen<'a>(&'a self, corpus: &'a Corpus) -> impl Iterator<Item = &'a ScanpathInstance> + 'a {
        corpus
            .instances
            .iter()
            .filter(|i| self.seen.contains(&i.subject_id) && self.is_test_scene(&i.scene_id))
    }

    /// Instances of `subject` on held-out scenes (query ground truth).
    pub fn query_instances<'a>(&'a self, corpus: &'a Corpus, subject: &'a str) -> impl Iterator<Item = &'a ScanpathInstance> + 'a {
        corpus
            .instances
            .iter()
            .filter(move |i| i.subject_id == subject && self.is_test_scene(&i.scene_id))
    }

    /// Support candidates for `subject`: training-scene instances with
    /// distinct (scene, task) pairs, first occurrence kept.
    pub fn support_candidates<'a>(&self, corpus: &'a Corpus, subject: &str) -> Vec<&'a ScanpathInstance> {
        let mut seen_pairs = HashSet::new();
        corpus
            .instances
            .iter()
            .filter(|i| i.subject_id == subject && !self.is_test_scene(&i.scene_id))
            .filter(|i| seen_pairs.insert((i.scene_id.as_str(), i.task.as_str())))
            .collect()
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if let Some(s) = self.seen.intersection(&self.unseen).next() {
            return Err(Error::domain("unseen", format!("`{s}` is both seen and unseen")));
        }
        let all: BTreeSet<String> = self.seen.union(&self.unseen).cloned().collect();
        if all != corpus.subjects {
            return Err(Error::domain("seen", "split does not cover the corpus subjects"));
        }
        Ok(())
    }

    /// Re-draws the held-out scenes with a different fraction.
    pub fn with_test_scenes(mut self, corpus: &Corpus, fraction: f64) -> Result<Self> {
        self.test_scenes = draw_test_scenes(corpus, fraction, self.seed)?;
        Ok(self)
    }
}

fn corpus_scene_ids(corpus: &Corpus) -> Vec<String> {
    let ids: BTreeSet<&str> = corpus.instances.iter().map(|i| i.scene_id.as_str()).collect();
    ids.into_iter().map(str::to_owned).collect()
}

fn draw_test_scenes(corpus: &Corpus, fraction: f64, seed: u64) -> Result<BTreeSet<String>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::domain("test_scene_fraction", "must be in [0, 1)"));
    }
    let mut scenes = corpus_scene_ids(corpus);
    if scenes.len() < 2 || fraction == 0.0 {
        return Ok(BTreeSet::new());
    }
    let count = ((fraction * scenes.len() as f64).round() as usize).clamp(1, scenes.len() - 1);
    scenes.shuffle(&mut seed::rng(seed::derive(seed, 0x5CE4E)));
    Ok(scenes.into_iter().take(count).collect())
}

/// Splits subjects into seen/unseen: `round(fraction * |subjects|)` unseen,
/// clamped so both sides are non-empty. Query scenes are drawn from the
/// same seed at [`DEFAULT_TEST_SCENE_FRACTION`].
pub fn split_subjects(corpus: &Corpus, unseen_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(unseen_fraction > 0.0 && unseen_fraction < 1.0) {
        return Err(Error::domain("unseen_fraction", "must be in (0, 1)"));
    }
    let n = corpus.subjects.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} subject(s)")));
    }
    let unseen_count = ((unseen_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut subjects: Vec<String> = corpus.subjects.iter().cloned().collect();
    subjects.shuffle(&mut seed::rng(seed));
    let unseen = subjects[..unseen_count].iter().cloned().collect();
    let seen = subjects[unseen_count..].iter().cloned().collect();
    Ok(SplitSpec {
        seed,
        seen,
        unseen,
        test_scenes: draw_test_scenes(corpus, DEFAULT_TEST_SCENE_FRACTION, seed)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportSet {
    pub subject_id: String,
    pub items: Vec<ScanpathInstance>,
}

impl SupportSet {
    pub fn n(&self) -> usize {
        self.items.len()
    }
}

/// Scenes (with tasks) whose scanpaths are to be predicted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuerySet {
    pub scene_ids: Vec<String>,
    pub tasks: Vec<String>,
}

impl QuerySet {
    /// Every distinct (scene, task) pair on held-out scenes, in corpus order.
    pub fn held_out(corpus: &Corpus, split: &SplitSpec) -> Result<Self> {
        let mut pairs = HashSet::new();
        let mut query = QuerySet {
            scene_ids: Vec::new(),
            tasks: Vec::new(),
        };
        for inst in corpus.instances.iter().filter(|i| split.is_test_scene(&i.scene_id)) {
            if pairs.insert((inst.scene_id.clone(), inst.task.clone())) {
                query.scene_ids.push(inst.scene_id.clone());
                query.tasks.push(inst.task.clone());
            }
        }
        if query.is_empty() {
            return Err(Error::invalid("split has no held-out scenes"));
        }
        Ok(query)
    }

    pub fn len(&self) -> usize {
        self.scene_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene_ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.scene_ids.iter().map(String::as_str).zip(self.tasks.iter().map(String::as_str))
    }
}

fn check_shots(n: usize) -> Result<()> {
    if !(1..=MAX_SHOTS).contains(&n) {
        return Err(Error::domain("n", format!("{n} shots outside 1..={MAX_SHOTS}")));
    }
    Ok(())
}

/// Draws `n` distinct training-scene instances of `subject` uniformly
/// without replacement.
pub fn sample_support(
    corpus: &Corpus,
    split: &SplitSpec,
    subject: &str,
    n: usize,
    seed: u64,
) -> Result<SupportSet> {
    check_shots(n)?;
    let candidates = split.support_candidates(corpus, subject);
    if candidates.len() < n {
        return Err(Error::InsufficientInstances {
            subject: subject.to_owned(),
            needed: n,
            available: candidates.len(),
        });
    }
    let picked = index::sample(&mut seed::rng(seed), candidates.len(), n);
    Ok(SupportSet {
        subject_id: subject.to_owned(),
        items: picked.iter().map(|i| candidates[i].clone()).collect(),
    })
}

/// `repeats` support sets for one subject. When the subject has at least
/// `n * repeats` candidates the sets are pairwise disjoint (one shuffle,
/// then consecutive chunks); otherwise each set is drawn independently.
pub fn sample_supports(
    corpus: &Corpus,
    split: &SplitSpec,
    subject: &str,
    n: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<SupportSet>> {
    check_shots(n)?;
    let candidates = split.support_candidates(corpus, subject);
    if candidates.len() >= n * repeats {
        let order = index::sample(&mut seed::rng(seed), candidates.len(), n * repeats).into_vec();
        Ok(order
            .chunks(n)
            .map(|chunk| SupportSet {
                subject_id: subject.to_owned(),
                items: chunk.iter().map(|&i| candidates[i].clone()).collect(),
            })
            .collect())
    } else {
        (0..repeats)
            .map(|r| sample_support(corpus, split, subject, n, seed::derive(seed, r as u64)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Fixation, FREE_VIEWING};

    fn corpus(subjects: usize, scenes: usize) -> Corpus {
        let mut instances = Vec::new();
        for s in 0..subjects {
            for c in 0..scenes {
                instances.push(ScanpathInstance {
                    scene_id: format!("scene{c:03}"),
                    subject_id: format!("s{s}"),
                    task: FREE_VIEWING.into(),
                    fixations: vec![Fixation::new(0.5, 0.5, 200)],
                });
            }
        }
        Corpus::from_instances(instances)
    }

    #[test]
    fn split_sizes_match_reported_splits() {
        let split = split_subjects(&corpus(15, 3), 0.3, 1).unwrap();
        assert_eq!((split.seen.len(), split.unseen.len()), (10, 5));
        let split = split_subjects(&corpus(10, 3), 0.3, 1).unwrap();
        assert_eq!((split.seen.len(), split.unseen.len()), (7, 3));
    }

    #[test]
    fn split_is_deterministic_and_valid() {
        let c = corpus(9, 12);
        let a = split_subjects(&c, 0.3, 42).unwrap();
        assert_eq!(a, split_subjects(&c, 0.3, 42).unwrap());
        a.validate(&c).unwrap();
        assert_eq!(a.test_scenes.len(), 4);
        // clamps keep both sides non-empty
        let tiny = split_subjects(&corpus(2, 2), 0.01, 0).unwrap();
        assert_eq!((tiny.seen.len(), tiny.unseen.len()), (1, 1));
        assert!(split_subjects(&corpus(1, 2), 0.3, 0).is_err());
    }

    #[test]
    fn support_cardinality_and_partition() {
        let c = corpus(3, 60);
        let split = split_subjects(&c, 0.3, 5).unwrap();
        let subject = split.unseen.iter().next().unwrap().clone();
        let s = sample_support(&c, &split, &subject, 10, 9).unwrap();
        assert_eq!(s.n(), 10);
        let distinct: HashSet<_> = s.items.iter().map(|i| &i.scene_id).collect();
        assert_eq!(distinct.len(), 10);
        assert!(s.items.iter().all(|i| !split.is_test_scene(&i.scene_id)));
        assert!(s.items.iter().all(|i| i.subject_id == subject));
        let one = sample_support(&c, &split, &subject, 1, 9).unwrap();
        assert_eq!(one.n(), 1);
        assert_eq!(s, sample_support(&c, &split, &subject, 10, 9).unwrap());
    }

    #[test]
    fn insufficient_instances() {
        let c = corpus(2, 6);
        let split = split_subjects(&c, 0.5, 0).unwrap();
        match sample_support(&c, &split, "s0", 10, 0) {
            Err(Error::InsufficientInstances { available, needed, .. }) => {
                assert_eq!(needed, 10);
                assert_eq!(available, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(sample_support(&c, &split, "s0", 0, 0).is_err());
    }

    #[test]
    fn disjoint_resamplings() {
        let c = corpus(2, 150);
        let split = split_subjects(&c, 0.5, 3).unwrap();
        let sets = sample_supports(&c, &split, "s1", 10, 10, 77).unwrap();
        assert_eq!(sets.len(), 10);
        for (a, sa) in sets.iter().enumerate() {
            for sb in &sets[a + 1..] {
                let xa: HashSet<_> = sa.items.iter().map(|i| &i.scene_id).collect();
                assert!(sb.items.iter().all(|i| !xa.contains(&i.scene_id)));
            }
        }
        // not enough capacity: independent draws, still valid
        let small = corpus(2, 30);
        let split = split_subjects(&small, 0.5, 3).unwrap();
        let sets = sample_supports(&small, &split, "s1", 10, 10, 77).unwrap();
        assert!(sets.iter().all(|s| s.n() == 10));
    }

    #[test]
    fn query_set_covers_held_out_scenes() {
        let c = corpus(3, 9);
        let split = split_subjects(&c, 0.3, 2).unwrap();
        let q = QuerySet::held_out(&c, &split).unwrap();
        assert_eq!(q.len(), split.test_scenes.len());
    }
}
