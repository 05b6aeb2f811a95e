//! Directional checks on how fault effects differ across configurations.
//!
//! All checks work on per-request z-scores: every successful latency of a
//! case is normalised against the pooled baseline latencies of its group.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::{CaseSample, SIGMA_EPSILON};
use crate::stats::{self, ZScore};

/// Delay amplification is compared from this intensity upwards.
pub const DELAY_MIN_INTENSITY: u32 = 75;
/// Partition faults must keep the edge median z below this.
pub const PARTITION_Z_MEDIAN_LIMIT: f64 = 0.5;

/// Per-request z-scores of `xs`; `None` without a baseline or when any value
/// is non-finite under a degenerate baseline.
pub fn request_z_values(baseline: &[f64], xs: &[f64]) -> Option<Vec<f64>> {
    let z = ZScore::fit(baseline)?;
    let out = z.normalize_all(xs, SIGMA_EPSILON);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

pub fn z_variance(baseline: &[f64], xs: &[f64]) -> Option<f64> {
    stats::population_variance(&request_z_values(baseline, xs)?)
}

pub fn z_median(baseline: &[f64], xs: &[f64]) -> Option<f64> {
    stats::median(&request_z_values(baseline, xs)?)
}

/// Successful latencies of one configuration group, by intensity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupSamples {
    pub baseline_intensity: u32,
    pub by_intensity: BTreeMap<u32, Vec<f64>>,
}

impl GroupSamples {
    pub fn new(baseline_intensity: u32) -> Self {
        Self {
            baseline_intensity,
            by_intensity: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, intensity: u32, latencies: &[f64]) {
        self.by_intensity.entry(intensity).or_default().extend_from_slice(latencies);
    }

    pub fn baseline(&self) -> &[f64] {
        self.by_intensity
            .get(&self.baseline_intensity)
            .map_or(&[], Vec::as_slice)
    }

    fn at(&self, intensity: u32) -> &[f64] {
        self.by_intensity.get(&intensity).map_or(&[], Vec::as_slice)
    }

    pub fn z_variance_at(&self, intensity: u32) -> Option<f64> {
        z_variance(self.baseline(), self.at(intensity))
    }

    pub fn z_median_at(&self, intensity: u32) -> Option<f64> {
        z_median(self.baseline(), self.at(intensity))
    }

    pub fn mean_success_at(&self, intensity: u32) -> Option<f64> {
        stats::mean(self.at(intensity))
    }

    pub fn intensities(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_intensity.keys().copied()
    }
}

/// Groups case samples by group key.
pub fn group_samples(samples: &[CaseSample], baseline_intensity: u32) -> BTreeMap<String, GroupSamples> {
    let mut out: BTreeMap<String, GroupSamples> = BTreeMap::new();
    for s in samples {
        out.entry(s.key.group_key())
            .or_insert_with(|| GroupSamples::new(baseline_intensity))
            .add(s.key.intensity, &s.success_latencies);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::NotApplicable => "n/a",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternCheck {
    pub name: &'static str,
    pub intensity: Option<u32>,
    pub verdict: Verdict,
    pub detail: String,
}

fn compare(name: &'static str, intensity: Option<u32>, what: &str, lhs: Option<f64>, rhs: Option<f64>) -> PatternCheck {
    let (verdict, detail) = match (lhs, rhs) {
        (Some(a), Some(b)) => (
            if a > b { Verdict::Pass } else { Verdict::Fail },
            format!("{what}: {a:.4} vs {b:.4}"),
        ),
        _ => (Verdict::NotApplicable, format!("{what}: insufficient data")),
    };
    PatternCheck {
        name,
        intensity,
        verdict,
        detail,
    }
}

/// Delay: a cloud-hosted chain spreads further than an edge-hosted monolith.
pub fn delay_pattern(cloud_chain: &GroupSamples, edge_monolith: &GroupSamples) -> Vec<PatternCheck> {
    cloud_chain
        .intensities()
        .filter(|i| *i >= DELAY_MIN_INTENSITY && edge_monolith.by_intensity.contains_key(i))
        .map(|i| {
            compare(
                "delay",
                Some(i),
                "z-variance cloud chain vs edge monolith",
                cloud_chain.z_variance_at(i),
                edge_monolith.z_variance_at(i),
            )
        })
        .collect()
}

/// Bandwidth: edge deployments spread further than cloud deployments.
pub fn bandwidth_pattern(edge: &GroupSamples, cloud: &GroupSamples) -> Vec<PatternCheck> {
    edge.intensities()
        .filter(|i| *i != edge.baseline_intensity && cloud.by_intensity.contains_key(i))
        .map(|i| {
            compare(
                "bandwidth",
                Some(i),
                "z-variance edge vs cloud",
                edge.z_variance_at(i),
                cloud.z_variance_at(i),
            )
        })
        .collect()
}

/// Loss: survivors of total loss are faster on average than at 75%.
pub fn loss_pattern(group: &GroupSamples) -> PatternCheck {
    compare(
        "loss",
        Some(100),
        "mean success latency 75% vs 100%",
        group.mean_success_at(75),
        group.mean_success_at(100),
    )
}

/// Partition: the edge median z stays below the limit at every intensity.
pub fn partition_pattern(edge: &GroupSamples) -> Vec<PatternCheck> {
    edge.intensities()
        .map(|i| {
            let m = edge.z_median_at(i);
            let (verdict, detail) = match m {
                Some(m) if m < PARTITION_Z_MEDIAN_LIMIT => (Verdict::Pass, format!("median z {m:.4} < {PARTITION_Z_MEDIAN_LIMIT}")),
                Some(m) => (Verdict::Fail, format!("median z {m:.4} ≥ {PARTITION_Z_MEDIAN_LIMIT}")),
                None => (Verdict::NotApplicable, "median z: insufficient data".to_string()),
            };
            PatternCheck {
                name: "partition",
                intensity: Some(i),
                verdict,
                detail,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(base: &[f64], rest: &[(u32, &[f64])]) -> GroupSamples {
        let mut g = GroupSamples::new(25);
        g.add(25, base);
        for (i, xs) in rest {
            g.add(*i, xs);
        }
        g
    }

    #[test]
    fn z_variance_scales_with_spread() {
        let base = [90.0, 100.0, 110.0];
        // spread doubled relative to baseline: z-variance 4
        let wide = [80.0, 100.0, 120.0];
        assert!((z_variance(&base, &wide).unwrap() - 4.0).abs() < 1e-9);
        assert!((z_variance(&base, &base).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(z_median(&base, &base), Some(0.0));
        assert_eq!(z_variance(&[], &wide), None);
        assert_eq!(z_variance(&[5.0, 5.0], &[6.0]), None);
    }

    #[test]
    fn directional_checks() {
        let chain = group(&[90.0, 100.0, 110.0], &[(75, &[0.0, 500.0, 1000.0])]);
        let edge = group(&[90.0, 100.0, 110.0], &[(75, &[95.0, 100.0, 105.0])]);
        let d = delay_pattern(&chain, &edge);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].verdict, Verdict::Pass);
        assert_eq!(bandwidth_pattern(&edge, &chain)[0].verdict, Verdict::Fail);

        let loss = group(&[10.0], &[(75, &[300.0, 400.0]), (100, &[50.0])]);
        assert_eq!(loss_pattern(&loss).verdict, Verdict::Pass);
        let no_survivors = group(&[10.0], &[(75, &[300.0])]);
        assert_eq!(loss_pattern(&no_survivors).verdict, Verdict::NotApplicable);

        let part = group(&[90.0, 100.0, 110.0], &[(50, &[100.0, 101.0]), (100, &[200.0])]);
        let p = partition_pattern(&part);
        assert_eq!(
            p.iter().map(|c| c.verdict).collect::<Vec<_>>(),
            [Verdict::Pass, Verdict::Pass, Verdict::Fail]
        );
    }
}
