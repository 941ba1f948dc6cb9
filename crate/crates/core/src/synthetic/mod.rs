//! Synthetic scenes and subjects with known attention traits.
//!
//! Scenes are small semantic grids; subjects are parameterized viewing
//! policies. Everything is a pure function of its arguments and seed.

mod fixture;
mod scene;

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use fixture::{separable_profiles, FIXTURE_CHANNELS};
pub use scene::{generate_scene, SceneGrid, Symmetry, DEFAULT_GRID};

use crate::data::{Corpus, Fixation, ScanpathInstance, FREE_VIEWING};
use crate::error::{Error, Result};
use crate::seed;

/// Weight of the per-cell salience in a cell's attractiveness.
const SALIENCE_WEIGHT: f64 = 1.0;
/// Attractiveness bonus on target cells during search.
const SEARCH_GAIN: f64 = 3.0;
/// Log-normal spread of fixation durations.
const DURATION_SPREAD: f64 = 0.15;
pub const MIN_DURATION_MS: u32 = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub channel_affinity: Vec<f64>,
    pub center_bias_sigma: f64,
    pub saccade_len_mean: f64,
    pub saccade_len_std: f64,
    pub duration_base_ms: f64,
    pub duration_gain: f64,
    pub revisit_penalty: f64,
    pub stop_prob: f64,
    pub temperature: f64,
}

impl SubjectProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("center_bias_sigma", self.center_bias_sigma),
            ("saccade_len_mean", self.saccade_len_mean),
            ("saccade_len_std", self.saccade_len_std),
            ("duration_base_ms", self.duration_base_ms),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(field, format!("{v} must be positive")));
            }
        }
        if !(self.stop_prob > 0.0 && self.stop_prob < 1.0) {
            return Err(Error::domain("stop_prob", "must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.revisit_penalty) {
            return Err(Error::domain("revisit_penalty", "must be in [0, 1]"));
        }
        if self.temperature < 0.0 {
            return Err(Error::domain("temperature", "must be non-negative"));
        }
        if self.channel_affinity.is_empty() {
            return Err(Error::domain("channel_affinity", "must be non-empty"));
        }
        Ok(())
    }
}

/// Target category of a search task label `object-<k>`.
pub fn search_target(task: &str) -> Option<usize> {
    task.strip_prefix("object-").and_then(|k| k.parse().ok())
}

pub fn search_task(channel: usize) -> String {
    format!("object-{channel}")
}

/// Content-driven interest of a cell: category affinity plus salience.
fn interest(profile: &SubjectProfile, scene: &SceneGrid, cell: usize) -> f64 {
    let label = usize::from(scene.labels[cell]);
    profile.channel_affinity.get(label).copied().unwrap_or(0.0) + SALIENCE_WEIGHT * scene.salience[cell]
}

/// Samples a fixation sequence from the profile's viewing policy.
///
/// Each step scores every cell by interest, a central Gaussian prior, an
/// inhibition-of-return term and a saccade-amplitude preference measured
/// from the current gaze position, then draws from the softmax at the
/// profile's temperature (argmax at temperature 0). Gaze starts at the
/// scene center.
pub fn generate_fixations(
    profile: &SubjectProfile,
    scene: &SceneGrid,
    task: &str,
    max_len: usize,
    seed: u64,
) -> Vec<Fixation> {
    let mut rng = seed::rng(seed);
    let target = if task == FREE_VIEWING {
        None
    } else {
        scene.target_channel.or_else(|| search_target(task))
    };
    let cells = scene.cell_count();
    let base: Vec<f64> = (0..cells)
        .map(|c| {
            let (cx, cy) = scene.cell_center(c);
            let r2 = (cx - 0.5).powi(2) + (cy - 0.5).powi(2);
            let mut a = interest(profile, scene, c) - r2 / (2.0 * profile.center_bias_sigma.powi(2));
            if target.is_some_and(|t| usize::from(scene.labels[c]) == t) {
                a += SEARCH_GAIN;
            }
            a
        })
        .collect();
    let revisit_log = (1.0 - profile.revisit_penalty).ln();
    let noise = Normal::new(0.0, DURATION_SPREAD).expect("valid spread");
    let mut visits = vec![0u32; cells];
    let mut gaze = (0.5, 0.5);
    let mut out = Vec::with_capacity(max_len);
    let mut scores = vec![0.0; cells];
    while out.len() < max_len {
        for c in 0..cells {
            let (cx, cy) = scene.cell_center(c);
            let amp = ((cx - gaze.0).powi(2) + (cy - gaze.1).powi(2)).sqrt();
            let dev = (amp - profile.saccade_len_mean) / profile.saccade_len_std;
            let revisit = if visits[c] > 0 { revisit_log * f64::from(visits[c]) } else { 0.0 };
            scores[c] = base[c] + revisit - 0.5 * dev * dev;
        }
        let Some(cell) = choose(&scores, profile.temperature, &mut rng) else {
            break;
        };
        visits[cell] += 1;
        let (w, h) = (scene.width_cells as f64, scene.height_cells as f64);
        let (cx, cy) = scene.cell_center(cell);
        let x = (cx + rng.random_range(-0.4..0.4) / w).clamp(0.0, 1.0);
        let y = (cy + rng.random_range(-0.4..0.4) / h).clamp(0.0, 1.0);
        let mean = profile.duration_base_ms + profile.duration_gain * interest(profile, scene, cell);
        let duration = (mean.max(1.0) * noise.sample(&mut rng).exp()).round();
        out.push(Fixation::new(x, y, (duration as u32).max(MIN_DURATION_MS)));
        gaze = (x, y);
        if target.is_some_and(|t| usize::from(scene.labels[cell]) == t) {
            break;
        }
        if rng.random::<f64>() < profile.stop_prob {
            break;
        }
    }
    out
}

/// Softmax draw at `temperature`; argmax (lowest index on ties) at zero.
/// Returns `None` when every cell is excluded.
fn choose(scores: &[f64], temperature: f64, rng: &mut seed::Rng) -> Option<usize> {
    let (best, max) = scores
        .iter()
        .copied()
        .enumerate()
        .fold((None, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
            if v > bv {
                (Some(i), v)
            } else {
                (bi, bv)
            }
        });
    let best = best?;
    if temperature <= 1e-12 {
        return Some(best);
    }
    let weights: Vec<f64> = scores.iter().map(|&s| ((s - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Some(i);
        }
        u -= w;
    }
    Some(best)
}

#[allow(clippy::too_many_arguments)]
pub fn generate_scanpath(
    profile: &SubjectProfile,
    subject_id: &str,
    scene_id: &str,
    scene: &SceneGrid,
    task: &str,
    max_len: usize,
    seed: u64,
) -> ScanpathInstance {
    ScanpathInstance {
        scene_id: scene_id.to_owned(),
        subject_id: subject_id.to_owned(),
        task: task.to_owned(),
        fixations: generate_fixations(profile, scene, task, max_len, seed),
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene{index:03}")
}

/// Every profile views every scene under every task once. Subjects are
/// named `s0`, `s1`, ... in profile order; instances are ordered by scene,
/// then task, then subject.
pub fn generate_corpus(
    profiles: &[SubjectProfile],
    scene_count: usize,
    tasks: &[String],
    max_len: usize,
    seed: u64,
) -> Result<Corpus> {
    if profiles.len() < 2 {
        return Err(Error::invalid("need at least two profiles"));
    }
    if scene_count == 0 || max_len == 0 || tasks.is_empty() {
        return Err(Error::invalid("scene_count, max_len and tasks must be non-empty"));
    }
    profiles.iter().try_for_each(SubjectProfile::validate)?;
    let channels = profiles.iter().map(|p| p.channel_affinity.len()).max().unwrap_or(2).max(2);
    let mut scenes = BTreeMap::new();
    let mut instances = Vec::with_capacity(profiles.len() * scene_count * tasks.len());
    for s in 0..scene_count {
        let id = scene_id(s);
        let scene = generate_scene(channels, seed::derive(seed, s as u64));
        for (t, task) in tasks.iter().enumerate() {
            for (p, profile) in profiles.iter().enumerate() {
                let stream = ((s * tasks.len() + t) * profiles.len() + p) as u64;
                let subject = format!("s{p}");
                instances.push(generate_scanpath(
                    profile,
                    &subject,
                    &id,
                    &scene,
                    task,
                    max_len,
                    seed::derive(seed::derive(seed, 0xF1C5), stream),
                ));
            }
        }
        scenes.insert(id, scene);
    }
    Corpus::from_instances(instances).with_scenes(scenes)?.with_max_len(max_len)
}
