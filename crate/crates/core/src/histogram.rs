//! Per-attribute histograms of activated Gaussian features.
//!
//! Channels are grouped as (op, sc, ro, xyz, sh), matching the audit
//! report columns. When two sets are compared, bounds are computed over
//! their union so the normalization itself cannot hide a shift; values
//! outside supplied bounds clip into the end bins.

use crate::error::MetricError;
use crate::gaussians::{activate, GaussianSet};
use crate::scalar::Real;

/// Attribute group of one histogram channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeatureGroup {
    Opacity,
    Scale,
    Rotation,
    Position,
    Sh,
}

pub const GROUPS: [FeatureGroup; 5] = [
    FeatureGroup::Opacity,
    FeatureGroup::Scale,
    FeatureGroup::Rotation,
    FeatureGroup::Position,
    FeatureGroup::Sh,
];

impl FeatureGroup {
    /// Report column label.
    pub fn label(self) -> &'static str {
        match self {
            FeatureGroup::Opacity => "op",
            FeatureGroup::Scale => "sc",
            FeatureGroup::Rotation => "ro",
            FeatureGroup::Position => "xyz",
            FeatureGroup::Sh => "sh",
        }
    }
}

/// One normalized channel histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelHistogram {
    pub group: FeatureGroup,
    /// Channel index within the group.
    pub channel: usize,
    /// Probability mass per bin; sums to 1.
    pub bins: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

/// All channel histograms of one set, fixed channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSet {
    pub bins: usize,
    pub channels: Vec<ChannelHistogram>,
}

/// Per-channel bounds in the shared channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBounds {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

/// Activated channel values in the fixed (op, sc, ro, xyz, sh) order.
fn channel_columns<T: Real>(set: &GaussianSet<T>) -> Result<Vec<(FeatureGroup, Vec<f64>)>, MetricError> {
    if set.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let act = activate(set)?;
    let n = act.len();
    let mut cols: Vec<(FeatureGroup, Vec<f64>)> = Vec::new();
    cols.push((
        FeatureGroup::Opacity,
        act.opacities.iter().map(|v| v.as_f64()).collect(),
    ));
    for ax in 0..3 {
        cols.push((
            FeatureGroup::Scale,
            act.scales.iter().map(|s| s[ax].as_f64()).collect(),
        ));
    }
    for ax in 0..4 {
        cols.push((
            FeatureGroup::Rotation,
            act.rotations.iter().map(|r| r[ax].as_f64()).collect(),
        ));
    }
    for ax in 0..3 {
        cols.push((
            FeatureGroup::Position,
            act.positions.iter().map(|p| p[ax].as_f64()).collect(),
        ));
    }
    let width = act.basis_len() * 3;
    for k in 0..width {
        cols.push((
            FeatureGroup::Sh,
            (0..n).map(|i| act.sh[i * width + k].as_f64()).collect(),
        ));
    }
    Ok(cols)
}

/// Number of histogram channels for a given SH degree.
pub fn channel_count(sh_degree: usize) -> usize {
    11 + 3 * crate::gaussians::sh_basis_len(sh_degree)
}

/// Tight per-channel bounds over the union of the given sets.
pub fn union_bounds<T: Real>(sets: &[&GaussianSet<T>]) -> Result<ChannelBounds, MetricError> {
    let mut mins: Vec<f64> = Vec::new();
    let mut maxs: Vec<f64> = Vec::new();
    for (k, set) in sets.iter().enumerate() {
        let cols = channel_columns(set)?;
        if k == 0 {
            mins = vec![f64::INFINITY; cols.len()];
            maxs = vec![f64::NEG_INFINITY; cols.len()];
        } else if cols.len() != mins.len() {
            return Err(MetricError::BinMismatch {
                a: mins.len(),
                b: cols.len(),
            });
        }
        for (ch, (_, values)) in cols.iter().enumerate() {
            for v in values {
                mins[ch] = mins[ch].min(*v);
                maxs[ch] = maxs[ch].max(*v);
            }
        }
    }
    if mins.is_empty() {
        return Err(MetricError::EmptySet);
    }
    Ok(ChannelBounds { mins, maxs })
}

/// Histograms every activated channel into `bins` equal-width bins over
/// min-max normalized values. Supplied bounds place two sets on one axis;
/// otherwise bounds are computed from the set itself.
pub fn feature_histograms<T: Real>(
    set: &GaussianSet<T>,
    bins: usize,
    bounds: Option<&ChannelBounds>,
) -> Result<HistogramSet, MetricError> {
    assert!(bins >= 2, "need at least two bins");
    let cols = channel_columns(set)?;
    if let Some(b) = bounds {
        if b.mins.len() != cols.len() {
            return Err(MetricError::BinMismatch {
                a: b.mins.len(),
                b: cols.len(),
            });
        }
    }
    let mut channels = Vec::with_capacity(cols.len());
    let mut group_counts = std::collections::HashMap::new();
    for (ch, (group, values)) in cols.iter().enumerate() {
        let (lo, hi) = match bounds {
            Some(b) => (b.mins[ch], b.maxs[ch]),
            None => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        };
        let mut mass = vec![0.0f64; bins];
        let range = hi - lo;
        for v in values {
            let u = if range > 0.0 {
                ((v - lo) / range).clamp(0.0, 1.0)
            } else {
                0.5
            };
            let bin = ((u * bins as f64) as usize).min(bins - 1);
            mass[bin] += 1.0;
        }
        let inv = 1.0 / values.len() as f64;
        for m in mass.iter_mut() {
            *m *= inv;
        }
        let channel_in_group = *group_counts
            .entry(group.label())
            .and_modify(|c| *c += 1)
            .or_insert(0usize);
        channels.push(ChannelHistogram {
            group: *group,
            channel: channel_in_group,
            bins: mass,
            min: lo,
            max: hi,
        });
    }
    Ok(HistogramSet { bins, channels })
}
