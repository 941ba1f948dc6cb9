//! Corpus representation and ingestion.
//!
//! A corpus is a list of scanpath records plus the scene grids they were
//! recorded on. Records travel as JSON Lines, one scanpath per line.

mod bins;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use bins::{bin_duration, fit_duration_bins, DurationBinner};
pub use split::{
    sample_support, sample_supports, split_subjects, QuerySet, SplitSpec, SupportSet,
    DEFAULT_TEST_SCENE_FRACTION, MAX_SHOTS,
};

use crate::error::{Error, Result};
use crate::synthetic::SceneGrid;

pub const FREE_VIEWING: &str = "free-viewing";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub duration_ms: u32,
}

impl Fixation {
    pub fn new(x: f64, y: f64, duration_ms: u32) -> Self {
        Fixation { x, y, duration_ms }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.x) {
            return Err(Error::domain("x", format!("{} outside [0, 1]", self.x)));
        }
        if !(0.0..=1.0).contains(&self.y) {
            return Err(Error::domain("y", format!("{} outside [0, 1]", self.y)));
        }
        if self.duration_ms < 1 {
            return Err(Error::domain("duration_ms", "must be at least 1 ms"));
        }
        Ok(())
    }
}

/// One subject's fixation sequence on one scene under one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanpathInstance {
    pub scene_id: String,
    pub subject_id: String,
    pub task: String,
    pub fixations: Vec<Fixation>,
}

impl ScanpathInstance {
    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::domain("subject_id", "must be non-empty"));
        }
        if self.scene_id.is_empty() {
            return Err(Error::domain("scene_id", "must be non-empty"));
        }
        if self.fixations.is_empty() {
            return Err(Error::domain("fixations", "scanpath has no fixations"));
        }
        self.fixations.iter().try_for_each(Fixation::validate)
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    pub fn is_search(&self) -> bool {
        self.task != FREE_VIEWING
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub instances: Vec<ScanpathInstance>,
    pub subjects: BTreeSet<String>,
    /// Task vocabulary in first-appearance order.
    pub tasks: Vec<String>,
    pub scenes: BTreeMap<String, SceneGrid>,
    pub max_len: usize,
}

impl Corpus {
    /// Builds a corpus from already validated instances.
    pub fn from_instances(instances: Vec<ScanpathInstance>) -> Self {
        let mut corpus = Corpus::default();
        for inst in instances {
            corpus.push(inst);
        }
        corpus
    }

    fn push(&mut self, inst: ScanpathInstance) {
        if !self.tasks.contains(&inst.task) {
            self.tasks.push(inst.task.clone());
        }
        self.subjects.insert(inst.subject_id.clone());
        self.max_len = self.max_len.max(inst.len());
        self.instances.push(inst);
    }

    /// Attaches scene grids; every instance must resolve to one of them.
    pub fn with_scenes(mut self, scenes: BTreeMap<String, SceneGrid>) -> Result<Self> {
        for inst in &self.instances {
            if !scenes.contains_key(&inst.scene_id) {
                return Err(Error::domain(
                    "scene_id",
                    format!("scene `{}` has no grid", inst.scene_id),
                ));
            }
        }
        self.scenes = scenes;
        Ok(self)
    }

    /// Raises (never lowers) the length cap, checking every instance fits.
    pub fn with_max_len(mut self, max_len: usize) -> Result<Self> {
        if let Some(inst) = self.instances.iter().find(|i| i.len() > max_len) {
            return Err(Error::domain(
                "fixations",
                format!(
                    "scanpath of subject `{}` on `{}` has {} fixations, cap is {}",
                    inst.subject_id,
                    inst.scene_id,
                    inst.len(),
                    max_len
                ),
            ));
        }
        self.max_len = max_len;
        Ok(self)
    }

    pub fn scene(&self, scene_id: &str) -> Result<&SceneGrid> {
        self.scenes
            .get(scene_id)
            .ok_or_else(|| Error::domain("scene_id", format!("unknown scene `{scene_id}`")))
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::domain("task", format!("unknown task `{task}`")))
    }

    /// A corpus holding only the instances accepted by `keep`; scenes and
    /// the task vocabulary are carried over unchanged.
    pub fn filtered(&self, mut keep: impl FnMut(&ScanpathInstance) -> bool) -> Corpus {
        let instances: Vec<_> = self.instances.iter().filter(|i| keep(i)).cloned().collect();
        Corpus {
            subjects: instances.iter().map(|i| i.subject_id.clone()).collect(),
            instances,
            tasks: self.tasks.clone(),
            scenes: self.scenes.clone(),
            max_len: self.max_len,
        }
    }

    pub fn durations(&self) -> Vec<u32> {
        self.instances
            .iter()
            .flat_map(|i| i.fixations.iter().map(|f| f.duration_ms))
            .collect()
    }

    pub fn find(&self, scene_id: &str, subject_id: &str, task: &str) -> Option<&ScanpathInstance> {
        self.instances
            .iter()
            .find(|i| i.scene_id == scene_id && i.subject_id == subject_id && i.task == task)
    }
}

/// Reads a JSON Lines corpus. Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: ScanpathInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        inst.validate().map_err(|e| match e {
            Error::Domain { field, message } => Error::Domain {
                field,
                message: format!("line {line_no}: {message}"),
            },
            other => other,
        })?;
        corpus.push(inst);
    }
    Ok(corpus)
}

pub fn write_instances<'a, W: Write>(
    mut writer: W,
    instances: impl IntoIterator<Item = &'a ScanpathInstance>,
) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut writer, inst)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_corpus<W: Write>(writer: W, corpus: &Corpus) -> Result<()> {
    write_instances(writer, &corpus.instances)
}
