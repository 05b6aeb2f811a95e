//! Drives a fault's activation windows while load runs.

use std::collections::{BTreeMap, VecDeque};

use super::{Phase, PhaseEvent};
use crate::backend::{ClusterBackend, FaultHandle};
use crate::fault::{self, FaultError, FaultSpec, FaultTimeline};
use crate::load::{Interleave, LoadError};
use crate::retry::{with_retry, OpKind, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum StepKind {
    // Removal sorts first so back-to-back windows never stack.
    Remove,
    Apply,
}

#[derive(Debug, Clone, Copy)]
struct Step {
    at_ms: f64,
    window: usize,
    kind: StepKind,
}

/// Applies and removes a fault at the absolute times of its timeline.
///
/// Window 0 is applied before load starts; the runner takes over its handle
/// and handles every later transition. Events are buffered until
/// [`TimelineRunner::take_events`].
pub struct TimelineRunner {
    spec: FaultSpec,
    policy: RetryPolicy,
    pending: VecDeque<Step>,
    active: BTreeMap<usize, FaultHandle>,
    events: Vec<PhaseEvent>,
    last_off_ms: Option<f64>,
    applies: u32,
}

impl TimelineRunner {
    pub fn new(spec: FaultSpec, timeline: &FaultTimeline, origin_ms: f64, first: FaultHandle, policy: RetryPolicy) -> Self {
        let mut steps = Vec::new();
        for (window, a) in timeline.activations.iter().enumerate() {
            if window > 0 {
                steps.push(Step {
                    at_ms: origin_ms + a.on_ms,
                    window,
                    kind: StepKind::Apply,
                });
            }
            steps.push(Step {
                at_ms: origin_ms + a.off_ms,
                window,
                kind: StepKind::Remove,
            });
        }
        steps.sort_by(|a, b| {
            a.at_ms
                .total_cmp(&b.at_ms)
                .then(a.kind.cmp(&b.kind))
                .then(a.window.cmp(&b.window))
        });
        Self {
            spec,
            policy,
            pending: steps.into(),
            active: BTreeMap::from([(0, first)]),
            events: Vec::new(),
            last_off_ms: None,
            applies: 0,
        }
    }

    pub fn take_events(&mut self) -> Vec<PhaseEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn active_handles(&self) -> impl Iterator<Item = &FaultHandle> {
        self.active.values()
    }

    /// Time the most recent window was closed.
    pub fn last_off_ms(&self) -> Option<f64> {
        self.last_off_ms
    }

    /// Activations applied by the runner (window 0 excluded).
    pub fn applies(&self) -> u32 {
        self.applies
    }

    fn push(&mut self, ts_ms: f64, event: &str, detail: String) {
        self.events.push(PhaseEvent {
            ts_ms,
            phase: Phase::P3,
            event: event.to_string(),
            detail,
        });
    }

    fn remove_window<B: ClusterBackend + ?Sized>(&mut self, backend: &mut B, window: usize) -> Result<(), FaultError> {
        let Some(handle) = self.active.get(&window).cloned() else {
            return Ok(());
        };
        let mut retries = Vec::new();
        let result = with_retry(
            OpKind::FaultInjection,
            &self.policy,
            backend,
            |b, ms| {
                let _ = b.wait_ms(ms);
            },
            |log| retries.push(log.clone()),
            |b, _| fault::remove_fault(b, &handle),
        );
        let now = backend.now_ms();
        for r in retries {
            self.push(now, "retry", format!("{} attempt {}: {}", r.op, r.attempt, r.error));
        }
        result.map_err(|e| e.into_inner())?;
        self.active.remove(&window);
        self.last_off_ms = Some(now);
        self.push(now, "fault_off", format!("{} window={window}", handle.id));
        Ok(())
    }

    fn apply_window<B: ClusterBackend + ?Sized>(&mut self, backend: &mut B, window: usize) -> Result<(), FaultError> {
        let spec = self.spec.clone();
        let mut retries = Vec::new();
        let result = with_retry(
            OpKind::FaultInjection,
            &self.policy,
            backend,
            |b, ms| {
                let _ = b.wait_ms(ms);
            },
            |log| retries.push(log.clone()),
            |b, _| fault::apply_fault(b, &spec),
        );
        let now = backend.now_ms();
        for r in retries {
            self.push(now, "retry", format!("{} attempt {}: {}", r.op, r.attempt, r.error));
        }
        let handle = result.map_err(|e| e.into_inner())?;
        self.applies += 1;
        self.push(handle.on_ts_ms, "fault_on", format!("{} window={window}", handle.id));
        self.active.insert(window, handle);
        Ok(())
    }

    /// Removes every window still active, in window order.
    pub fn remove_all<B: ClusterBackend + ?Sized>(&mut self, backend: &mut B) -> Result<(), FaultError> {
        self.pending.clear();
        let windows: Vec<usize> = self.active.keys().copied().collect();
        for w in windows {
            self.remove_window(backend, w)?;
        }
        Ok(())
    }
}

impl<B: ClusterBackend + ?Sized> Interleave<B> for TimelineRunner {
    fn next_due_ms(&self) -> Option<f64> {
        self.pending.front().map(|s| s.at_ms)
    }

    fn fire(&mut self, backend: &mut B) -> Result<(), LoadError> {
        let Some(step) = self.pending.pop_front() else {
            return Ok(());
        };
        let result = match step.kind {
            StepKind::Apply => self.apply_window(backend, step.window),
            StepKind::Remove => self.remove_window(backend, step.window),
        };
        result.map_err(|e| LoadError::Timeline(e.to_string()))
    }
}
