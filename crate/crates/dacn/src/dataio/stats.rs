//! Per-mode standardization. Mode identity shows up as the mean level of
//! each variable under normal operation, so subtracting the normal-condition
//! mean and dividing by its standard deviation removes the mode signature
//! while preserving fault signatures.

use serde::{Deserialize, Serialize};

use crate::cstr::RawSeries;
use crate::error::{DacnError, Result};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub origin_mode: String,
    /// Channels whose variance collapsed and were floored to [`STD_FLOOR`].
    pub floored_channels: Vec<usize>,
}

impl ChannelStats {
    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    /// Identity stats (mean 0, std 1) for `v` channels.
    pub fn unit(v: usize) -> Self {
        Self {
            mean: vec![0.0; v],
            std: vec![1.0; v],
            origin_mode: String::new(),
            floored_channels: Vec::new(),
        }
    }
}

/// Per-channel mean and population standard deviation over the healthy
/// (`F0`) series of a single mode.
pub fn compute_stats(series: &[&RawSeries]) -> Result<ChannelStats> {
    let Some(first) = series.first() else {
        return Err(DacnError::MissingData("no series given for stats".into()));
    };
    let mode = &first.mode_id;
    let v = first.n_channels();
    for s in series {
        if s.mode_id != *mode {
            return Err(DacnError::InvalidArgument(format!(
                "stats must come from one mode: found {} and {}",
                mode, s.mode_id
            )));
        }
        if s.fault_id != "F0" {
            return Err(DacnError::InvalidArgument(format!(
                "stats are defined on normal-condition data only, got fault {}",
                s.fault_id
            )));
        }
        if s.n_channels() != v {
            return Err(DacnError::Shape(format!(
                "channel count mismatch: {} vs {v}",
                s.n_channels()
            )));
        }
    }

    let n: usize = series.iter().map(|s| s.n_steps()).sum();
    if n == 0 {
        return Err(DacnError::MissingData("stats over zero samples".into()));
    }
    let mut mean = vec![0.0; v];
    for s in series {
        for row in s.channels.rows() {
            for (ch, x) in row.iter().enumerate() {
                mean[ch] += x;
            }
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; v];
    for s in series {
        for row in s.channels.rows() {
            for (ch, x) in row.iter().enumerate() {
                let d = x - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    let mut std = vec![0.0; v];
    let mut floored_channels = Vec::new();
    for ch in 0..v {
        let s = (var[ch] / n as f64).sqrt();
        if s < STD_FLOOR {
            std[ch] = STD_FLOOR;
            floored_channels.push(ch);
            log::warn!("channel {ch} has (near-)zero variance; std floored to {STD_FLOOR}");
        } else {
            std[ch] = s;
        }
    }
    Ok(ChannelStats {
        mean,
        std,
        origin_mode: mode.clone(),
        floored_channels,
    })
}

/// Elementwise `(x - mean) / std` per channel.
pub fn standardize(series: &RawSeries, stats: &ChannelStats) -> Result<RawSeries> {
    if stats.n_channels() != series.n_channels() {
        return Err(DacnError::Shape(format!(
            "stats have {} channels, series has {}",
            stats.n_channels(),
            series.n_channels()
        )));
    }
    let mut out = series.clone();
    for mut row in out.channels.rows_mut() {
        for (ch, x) in row.iter_mut().enumerate() {
            *x = (*x - stats.mean[ch]) / stats.std[ch];
        }
    }
    Ok(out)
}
