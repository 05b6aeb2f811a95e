//! Fault specifications: intensity mapping, percentage targeting and
//! recurring activation timelines.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ClusterBackend, FaultHandle};
use crate::stats::Scalar;

/// Intensity levels accepted by [`map_intensity`].
pub const INTENSITY_LEVELS: [u32; 4] = [25, 50, 75, 100];

/// Delay at the lowest and highest intensity.
pub const DELAY_MS_AT_25: f64 = 100.0;
pub const DELAY_MS_AT_100: f64 = 1000.0;
/// Bandwidth cap at the lowest and highest intensity.
pub const BANDWIDTH_MBPS_AT_25: f64 = 10.0;
pub const BANDWIDTH_MBPS_AT_100: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultAction {
    ContainerKill,
    PodKill,
    NetworkDelay,
    NetworkLoss,
    NetworkBandwidth,
    NetworkPartition,
    CpuStress,
    NodeKill,
}

impl FaultAction {
    pub const ALL: [FaultAction; 8] = [
        FaultAction::ContainerKill,
        FaultAction::PodKill,
        FaultAction::NetworkDelay,
        FaultAction::NetworkLoss,
        FaultAction::NetworkBandwidth,
        FaultAction::NetworkPartition,
        FaultAction::CpuStress,
        FaultAction::NodeKill,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultAction::ContainerKill => "container-kill",
            FaultAction::PodKill => "pod-kill",
            FaultAction::NetworkDelay => "network-delay",
            FaultAction::NetworkLoss => "network-loss",
            FaultAction::NetworkBandwidth => "network-bandwidth",
            FaultAction::NetworkPartition => "network-partition",
            FaultAction::CpuStress => "cpu-stress",
            FaultAction::NodeKill => "node-kill",
        }
    }

    /// Kill and partition faults use the intensity as a targeting percentage;
    /// the rest use it to scale a magnitude and hit every eligible target.
    pub fn intensity_drives_scope(self) -> bool {
        matches!(
            self,
            FaultAction::ContainerKill
                | FaultAction::PodKill
                | FaultAction::NetworkPartition
                | FaultAction::NodeKill
        )
    }

    /// Whether targets are node names rather than deployment names.
    pub fn targets_nodes(self) -> bool {
        matches!(self, FaultAction::NetworkPartition | FaultAction::NodeKill)
    }
}

impl fmt::Display for FaultAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultAction {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultAction::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| FaultError::UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TargetMode {
    #[default]
    #[serde(rename = "fixed-percent")]
    FixedPercent,
}

/// Concrete size of a fault; exactly one facet, matching the action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMagnitude {
    DelayMs(f64),
    DropProb(f64),
    BandwidthMbps(f64),
    CpuFactor(f64),
    None,
}

impl FaultMagnitude {
    pub fn matches(&self, action: FaultAction) -> bool {
        matches!(
            (action, self),
            (FaultAction::NetworkDelay, FaultMagnitude::DelayMs(_))
                | (FaultAction::NetworkLoss, FaultMagnitude::DropProb(_))
                | (FaultAction::NetworkBandwidth, FaultMagnitude::BandwidthMbps(_))
                | (FaultAction::CpuStress, FaultMagnitude::CpuFactor(_))
                | (FaultAction::ContainerKill, FaultMagnitude::None)
                | (FaultAction::PodKill, FaultMagnitude::None)
                | (FaultAction::NetworkPartition, FaultMagnitude::None)
                | (FaultAction::NodeKill, FaultMagnitude::None)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub action: FaultAction,
    pub mode: TargetMode,
    pub value: u32,
    pub targets: Vec<String>,
    pub duration_s: f64,
    pub trigger_every_s: f64,
    pub magnitude: FaultMagnitude,
}

impl FaultSpec {
    /// Builds the fault for one campaign cell. `eligible_deployments` and
    /// `eligible_nodes` are the candidates for deployment- and node-targeted
    /// actions respectively.
    pub fn for_case(
        action: FaultAction,
        intensity: u32,
        duration_s: f64,
        trigger_every_s: f64,
        eligible_deployments: &[String],
        eligible_nodes: &[String],
        seed: u64,
    ) -> Result<Self, FaultError> {
        let magnitude = map_intensity(action, intensity)?;
        let value = if action.intensity_drives_scope() {
            intensity
        } else {
            100
        };
        let eligible = if action.targets_nodes() {
            eligible_nodes
        } else {
            eligible_deployments
        };
        let targets = select_targets(eligible, TargetMode::FixedPercent, value, seed)?;
        let spec = FaultSpec {
            action,
            mode: TargetMode::FixedPercent,
            value,
            targets,
            duration_s,
            trigger_every_s,
            magnitude,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FaultError> {
        if self.value == 0 || self.value > 100 {
            return Err(FaultError::PercentOutOfRange(self.value));
        }
        if self.targets.is_empty() {
            return Err(FaultError::NoTargets);
        }
        if !self.magnitude.matches(self.action) {
            return Err(FaultError::MagnitudeMismatch(self.action));
        }
        if self.duration_s <= 0.0 || self.duration_s.is_nan() {
            return Err(FaultError::NonPositiveDuration(self.duration_s));
        }
        if self.trigger_every_s <= 0.0 || self.trigger_every_s.is_nan() {
            return Err(FaultError::NonPositiveInterval(self.trigger_every_s));
        }
        Ok(())
    }

    /// Activation windows longer than the trigger interval overlap.
    pub fn overlaps(&self) -> bool {
        self.duration_s > self.trigger_every_s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaultError {
    #[error("unknown fault action `{0}`")]
    UnknownAction(String),
    #[error("unsupported intensity {intensity} for {action}; expected one of 25, 50, 75, 100")]
    UnsupportedIntensity { action: FaultAction, intensity: u32 },
    #[error("target percentage {0} outside (0, 100]")]
    PercentOutOfRange(u32),
    #[error("no eligible targets")]
    EmptyEligible,
    #[error("fault has no targets")]
    NoTargets,
    #[error("magnitude does not match action {0}")]
    MagnitudeMismatch(FaultAction),
    #[error("fault duration must be > 0 s (got {0})")]
    NonPositiveDuration(f64),
    #[error("trigger interval must be > 0 s (got {0})")]
    NonPositiveInterval(f64),
    #[error("window must be > 0 s (got {0})")]
    NonPositiveWindow(f64),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

impl crate::retry::Retryable for FaultError {
    fn is_retryable(&self) -> bool {
        matches!(self, FaultError::Backend(e) if e.is_retryable())
    }
}

fn progress<F: Scalar>(intensity: F) -> F {
    (intensity - F::lit(25.0)) / F::lit(75.0)
}

/// Injected delay: linear from 100 ms at 25 % to 1000 ms at 100 %.
pub fn delay_ms_at<F: Scalar>(intensity: F) -> F {
    F::lit(DELAY_MS_AT_25) + (intensity - F::lit(25.0)) * F::lit(900.0) / F::lit(75.0)
}

/// Bandwidth cap: log-linear from 10 Mbps at 25 % to 1 Mbps at 100 %.
pub fn bandwidth_mbps_at<F: Scalar>(intensity: F) -> F {
    F::lit(10.0).powf(F::one() - progress(intensity))
}

pub fn drop_prob_at<F: Scalar>(intensity: F) -> F {
    intensity / F::lit(100.0)
}

pub fn cpu_factor_at<F: Scalar>(intensity: F) -> F {
    F::one() + F::lit(3.0) * intensity / F::lit(100.0)
}

pub fn map_intensity(action: FaultAction, intensity: u32) -> Result<FaultMagnitude, FaultError> {
    if !INTENSITY_LEVELS.contains(&intensity) {
        return Err(FaultError::UnsupportedIntensity { action, intensity });
    }
    let p = f64::from(intensity);
    Ok(match action {
        FaultAction::NetworkDelay => FaultMagnitude::DelayMs(delay_ms_at(p)),
        FaultAction::NetworkBandwidth => FaultMagnitude::BandwidthMbps(bandwidth_mbps_at(p)),
        FaultAction::NetworkLoss => FaultMagnitude::DropProb(drop_prob_at(p)),
        FaultAction::CpuStress => FaultMagnitude::CpuFactor(cpu_factor_at(p)),
        FaultAction::ContainerKill
        | FaultAction::PodKill
        | FaultAction::NetworkPartition
        | FaultAction::NodeKill => FaultMagnitude::None,
    })
}

/// Number of targets hit at `value_percent`: `ceil(value * n / 100)`.
pub fn target_count(eligible: usize, value_percent: u32) -> usize {
    (value_percent as usize * eligible).div_ceil(100)
}

/// Picks `ceil(value/100 * |eligible|)` targets: the prefix of a shuffle
/// seeded by `seed`.
pub fn select_targets(
    eligible: &[String],
    mode: TargetMode,
    value_percent: u32,
    seed: u64,
) -> Result<Vec<String>, FaultError> {
    let TargetMode::FixedPercent = mode;
    if eligible.is_empty() {
        return Err(FaultError::EmptyEligible);
    }
    if value_percent == 0 || value_percent > 100 {
        return Err(FaultError::PercentOutOfRange(value_percent));
    }
    let n = target_count(eligible.len(), value_percent);
    let mut pool = eligible.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(n);
    Ok(pool)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub on_ms: f64,
    pub off_ms: f64,
}

impl Activation {
    pub fn len_ms(&self) -> f64 {
        self.off_ms - self.on_ms
    }

    pub fn contains(&self, t_ms: f64) -> bool {
        t_ms >= self.on_ms && t_ms < self.off_ms
    }
}

/// Activation windows relative to the start of the load window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultTimeline {
    pub activations: Vec<Activation>,
    /// Set when windows overlap (duration longer than the trigger interval).
    pub overlapping: bool,
}

impl FaultTimeline {
    pub fn first_on_ms(&self) -> Option<f64> {
        self.activations.first().map(|a| a.on_ms)
    }

    pub fn is_active(&self, t_ms: f64) -> bool {
        self.activations.iter().any(|a| a.contains(t_ms))
    }
}

/// Windows start at 0, every `trigger_every_s`, while the start is inside
/// the load window; each lasts `duration_s`, clipped to the window end.
pub fn build_timeline(spec: &FaultSpec, window_s: f64) -> Result<FaultTimeline, FaultError> {
    timeline_for(spec.duration_s, spec.trigger_every_s, window_s)
}

pub fn timeline_for(
    duration_s: f64,
    trigger_every_s: f64,
    window_s: f64,
) -> Result<FaultTimeline, FaultError> {
    if duration_s <= 0.0 || duration_s.is_nan() {
        return Err(FaultError::NonPositiveDuration(duration_s));
    }
    if trigger_every_s <= 0.0 || trigger_every_s.is_nan() {
        return Err(FaultError::NonPositiveInterval(trigger_every_s));
    }
    if window_s <= 0.0 || window_s.is_nan() {
        return Err(FaultError::NonPositiveWindow(window_s));
    }
    let window_ms = window_s * 1000.0;
    let every_ms = trigger_every_s * 1000.0;
    let duration_ms = duration_s * 1000.0;
    let mut activations = Vec::new();
    let mut k: u64 = 0;
    loop {
        let on_ms = k as f64 * every_ms;
        if on_ms >= window_ms {
            break;
        }
        let off_ms = (on_ms + duration_ms).min(window_ms);
        activations.push(Activation { on_ms, off_ms });
        k += 1;
    }
    Ok(FaultTimeline {
        activations,
        overlapping: duration_s > trigger_every_s,
    })
}

/// Applies a fault and returns the confirmed handle. The backend call only
/// returns once the fault is in effect; the handle carries that timestamp.
pub fn apply_fault<B: ClusterBackend + ?Sized>(
    backend: &mut B,
    spec: &FaultSpec,
) -> Result<FaultHandle, FaultError> {
    spec.validate()?;
    Ok(backend.apply_fault(spec)?)
}

/// Removes a fault; removing an unknown or already removed handle succeeds.
pub fn remove_fault<B: ClusterBackend + ?Sized>(
    backend: &mut B,
    handle: &FaultHandle,
) -> Result<(), FaultError> {
    Ok(backend.remove_fault(handle)?)
}
