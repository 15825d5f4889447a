//! Task assembly: one source mode for training, unseen modes for evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::cstr::RawSeries;
use crate::error::{DacnError, Result};

use super::split::split;
use super::stats::{compute_stats, standardize, ChannelStats};
use super::window::{window, LabelPolicy, SampleSet};

/// Whose normal-condition statistics standardize each mode's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum StatsScope {
    /// Each mode standardized with its own normal-condition stats. This is
    /// the reading under which the normal-data distributions of different
    /// modes coincide after standardization.
    #[default]
    OwnMode,
    /// Source-mode stats applied everywhere; kept testable as the alternative.
    SourceMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub source_mode: String,
    pub target_modes: Vec<String>,
    /// Window length.
    pub k: usize,
    /// Fraction of source windows going to the training set.
    pub split_ratio: f64,
    pub seed: u64,
    /// Cap on windows per class per mode (last-N selection); `None` keeps all.
    pub samples_per_class: Option<usize>,
    /// Fault injection time (min), for onset-aware window labeling.
    pub onset: f64,
    pub label_policy: LabelPolicy,
    pub stats_scope: StatsScope,
    /// Keep pre-onset (healthy-labeled) windows from fault runs. Off by
    /// default so class 0 comes only from the healthy run.
    pub keep_preonset_normal: bool,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_modes.contains(&self.source_mode) {
            return Err(DacnError::InvalidArgument(format!(
                "source mode {} must not appear in target modes",
                self.source_mode
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(DacnError::InvalidArgument(format!(
                "split ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.k == 0 {
            return Err(DacnError::InvalidArgument("k must be positive".into()));
        }
        Ok(())
    }

    /// Read a task from a flat config (keys: `task.source_mode`,
    /// `task.target_modes` comma-separated, `task.k`, `task.split_ratio`,
    /// `task.seed`, `task.samples_per_class`, `task.onset`,
    /// `task.stats_scope`, `task.label_policy`).
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let target_modes = cfg
            .str_or("task.target_modes", "")
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let spec = Self {
            source_mode: cfg.get_str("task.source_mode")?.to_string(),
            target_modes,
            k: cfg.usize_or("task.k", 64)?,
            split_ratio: cfg.f64_or("task.split_ratio", 0.8)?,
            seed: cfg.u64_or("task.seed", 0)?,
            samples_per_class: match cfg.get("task.samples_per_class") {
                Some(_) => Some(cfg.get_usize("task.samples_per_class")?),
                None => None,
            },
            onset: cfg.f64_or("task.onset", 200.0)?,
            label_policy: match cfg.str_or("task.label_policy", "window_end") {
                "window_end" => LabelPolicy::WindowEnd,
                "window_start" => LabelPolicy::WindowStart,
                other => {
                    return Err(DacnError::Config(format!("unknown label policy {other:?}")))
                }
            },
            stats_scope: match cfg.str_or("task.stats_scope", "own_mode") {
                "own_mode" => StatsScope::OwnMode,
                "source_mode" => StatsScope::SourceMode,
                other => return Err(DacnError::Config(format!("unknown stats scope {other:?}"))),
            },
            keep_preonset_normal: cfg.bool_or("task.keep_preonset_normal", false)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// The assembled data of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBundle {
    pub train: SampleSet,
    /// Held-out source-mode samples.
    pub test1: SampleSet,
    /// All target-mode samples.
    pub test2: SampleSet,
    pub n_classes: usize,
    /// Standardization stats per mode, keyed by mode id.
    pub stats: BTreeMap<String, ChannelStats>,
}

pub fn fault_label(fault_id: &str) -> Result<usize> {
    fault_id
        .strip_prefix('F')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            DacnError::InvalidArgument(format!("fault id {fault_id:?} is not of the form F<n>"))
        })
}

fn mode_samples(
    mode: &str,
    series: &[&RawSeries],
    stats: &ChannelStats,
    spec: &TaskSpec,
) -> Result<SampleSet> {
    let mut per_class: BTreeMap<usize, Vec<SampleSet>> = BTreeMap::new();
    for s in series {
        let label = fault_label(&s.fault_id)?;
        let std = standardize(s, stats)?;
        let mut set = window(&std, spec.k, label, spec.onset, spec.label_policy)?;
        if label != 0 && !spec.keep_preonset_normal {
            let keep: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == label).collect();
            set = set.select(&keep);
        }
        for class in set.distinct_classes() {
            let idx: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == class).collect();
            per_class.entry(class).or_default().push(set.select(&idx));
        }
    }
    let mut parts = Vec::new();
    for (class, sets) in per_class {
        let refs: Vec<&SampleSet> = sets.iter().collect();
        let joined = SampleSet::concat(&refs)?;
        let take = match spec.samples_per_class {
            Some(n) => {
                if joined.len() < n {
                    return Err(DacnError::MissingData(format!(
                        "mode {mode} class {class}: requested {n} samples/class but only {} available",
                        joined.len()
                    )));
                }
                // last-N selection keeps the most developed fault response
                let start = joined.len() - n;
                joined.select(&(start..joined.len()).collect::<Vec<_>>())
            }
            None => joined,
        };
        parts.push(take);
    }
    let refs: Vec<&SampleSet> = parts.iter().collect();
    SampleSet::concat(&refs)
}

/// Build a task bundle from per-mode raw series. Each mode is standardized
/// per `spec.stats_scope`, windowed, optionally capped per class, and routed
/// into train/test1 (source) or test2 (targets).
pub fn build_task(spec: &TaskSpec, series: &[RawSeries]) -> Result<TaskBundle> {
    spec.validate()?;
    let mut by_mode: BTreeMap<&str, Vec<&RawSeries>> = BTreeMap::new();
    for s in series {
        by_mode.entry(s.mode_id.as_str()).or_default().push(s);
    }
    let mut wanted: Vec<&str> = vec![spec.source_mode.as_str()];
    wanted.extend(spec.target_modes.iter().map(|m| m.as_str()));
    let missing: Vec<&str> = wanted
        .iter()
        .copied()
        .filter(|m| !by_mode.contains_key(m))
        .collect();
    if !missing.is_empty() {
        return Err(DacnError::MissingData(format!(
            "modes absent from the series collection: {missing:?}"
        )));
    }

    let mut stats = BTreeMap::new();
    for &mode in &wanted {
        let stats_mode = match spec.stats_scope {
            StatsScope::OwnMode => mode,
            StatsScope::SourceMode => spec.source_mode.as_str(),
        };
        let normals: Vec<&RawSeries> = by_mode[stats_mode]
            .iter()
            .copied()
            .filter(|s| s.fault_id == "F0")
            .collect();
        if normals.is_empty() {
            return Err(DacnError::MissingData(format!(
                "mode {stats_mode} has no F0 series for standardization stats"
            )));
        }
        stats.insert(mode.to_string(), compute_stats(&normals)?);
    }

    let source_set = mode_samples(
        &spec.source_mode,
        &by_mode[spec.source_mode.as_str()],
        &stats[&spec.source_mode],
        spec,
    )?;
    let (train, test1) = split(&source_set, spec.split_ratio, spec.seed)?;

    let mut target_sets = Vec::new();
    for mode in &spec.target_modes {
        target_sets.push(mode_samples(mode, &by_mode[mode.as_str()], &stats[mode], spec)?);
    }
    let refs: Vec<&SampleSet> = target_sets.iter().collect();
    let test2 = if refs.is_empty() {
        SampleSet::empty(train.window_shape().0, train.window_shape().1)
    } else {
        SampleSet::concat(&refs)?
    };

    // class sets must agree between source and targets
    if !test2.is_empty() && test2.distinct_classes() != source_set.distinct_classes() {
        return Err(DacnError::InvalidArgument(format!(
            "class sets differ: source {:?} vs targets {:?}",
            source_set.distinct_classes(),
            test2.distinct_classes()
        )));
    }
    debug_assert!(train.mode_ids.iter().all(|m| *m == spec.source_mode));
    debug_assert!(test1.mode_ids.iter().all(|m| *m == spec.source_mode));
    debug_assert!(test2.mode_ids.iter().all(|m| spec.target_modes.contains(m)));

    let n_classes = source_set
        .distinct_classes()
        .last()
        .map(|&c| c + 1)
        .unwrap_or(0);
    Ok(TaskBundle {
        train,
        test1,
        test2,
        n_classes,
        stats,
    })
}
