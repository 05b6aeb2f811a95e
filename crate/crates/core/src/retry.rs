//! Retry with exponential backoff for the four retryable operation kinds.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_initial_ms: u64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_initial_ms: 1000,
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `failed_attempts + 1`: `initial * multiplier^(failed_attempts - 1)`.
    pub fn backoff_ms(&self, failed_attempts: u32) -> f64 {
        let k = failed_attempts.saturating_sub(1) as i32;
        self.backoff_initial_ms as f64 * self.backoff_multiplier.powi(k)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_attempts < 1 {
            out.push("max_attempts must be ≥ 1".to_string());
        }
        if !(self.backoff_multiplier >= 1.0) {
            out.push("backoff_multiplier must be ≥ 1.0".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    RequestSend,
    FaultInjection,
    LoadGeneration,
    ClusterValidation,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::RequestSend => "request_send",
            OpKind::FaultInjection => "fault_injection",
            OpKind::LoadGeneration => "load_generation",
            OpKind::ClusterValidation => "cluster_validation",
        })
    }
}

/// Errors that know whether trying again can help.
pub trait Retryable {
    fn is_retryable(&self) -> bool;
}

/// One failed attempt, with the wait that followed it (if any).
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptLog {
    pub op: OpKind,
    pub attempt: u32,
    pub error: String,
    pub backoff_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetryError<E: fmt::Display> {
    #[error("{op} failed after {attempts} attempts: {last}")]
    Exhausted { op: OpKind, attempts: u32, last: E },
    #[error("{op} failed: {0}", op = .1)]
    NonRetryable(E, OpKind),
}

impl<E: fmt::Display> RetryError<E> {
    pub fn into_inner(self) -> E {
        match self {
            RetryError::Exhausted { last, .. } => last,
            RetryError::NonRetryable(e, _) => e,
        }
    }

    pub fn inner(&self) -> &E {
        match self {
            RetryError::Exhausted { last, .. } => last,
            RetryError::NonRetryable(e, _) => e,
        }
    }
}

/// Runs `action` up to `policy.max_attempts` times.
///
/// `ctx` is threaded through both the action and `wait` so callers can use
/// the same backend for the operation and for sleeping between attempts.
/// `on_failure` sees every failed attempt, including the last one.
pub fn with_retry<C: ?Sized, T, E>(
    op: OpKind,
    policy: &RetryPolicy,
    ctx: &mut C,
    mut wait: impl FnMut(&mut C, f64),
    mut on_failure: impl FnMut(&AttemptLog),
    mut action: impl FnMut(&mut C, u32) -> Result<T, E>,
) -> Result<T, RetryError<E>>
where
    E: Retryable + fmt::Display,
{
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match action(ctx, attempt) {
            Ok(v) => return Ok(v),
            Err(e) if !e.is_retryable() => {
                on_failure(&AttemptLog {
                    op,
                    attempt,
                    error: e.to_string(),
                    backoff_ms: None,
                });
                return Err(RetryError::NonRetryable(e, op));
            }
            Err(e) => {
                let backoff = (attempt < max).then(|| policy.backoff_ms(attempt));
                on_failure(&AttemptLog {
                    op,
                    attempt,
                    error: e.to_string(),
                    backoff_ms: backoff,
                });
                match backoff {
                    Some(ms) => wait(ctx, ms),
                    None => {
                        return Err(RetryError::Exhausted {
                            op,
                            attempts: attempt,
                            last: e,
                        })
                    }
                }
            }
        }
        attempt += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq)]
    struct Flaky(bool);

    impl fmt::Display for Flaky {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write!(f, "flaky(retryable={})", self.0)
        }
    }

    impl Retryable for Flaky {
        fn is_retryable(&self) -> bool {
            self.0
        }
    }

    fn run(fail_times: u32, retryable: bool, policy: RetryPolicy) -> (Result<u32, RetryError<Flaky>>, Vec<f64>, u32) {
        let mut waits: Vec<f64> = Vec::new();
        let mut calls = 0;
        let r = with_retry(
            OpKind::FaultInjection,
            &policy,
            &mut waits,
            |w, ms| w.push(ms),
            |_| {},
            |_, attempt| {
                calls += 1;
                if attempt <= fail_times {
                    Err(Flaky(retryable))
                } else {
                    Ok(attempt)
                }
            },
        );
        (r, waits, calls)
    }

    #[test]
    fn first_attempt_success_has_no_wait() {
        let (r, waits, calls) = run(0, true, RetryPolicy::default());
        assert_eq!(r.unwrap(), 1);
        assert!(waits.is_empty());
        assert_eq!(calls, 1);
    }

    #[test]
    fn exhaustion_after_three_attempts() {
        let (r, waits, calls) = run(3, true, RetryPolicy::default());
        assert!(matches!(r, Err(RetryError::Exhausted { attempts: 3, .. })));
        assert_eq!(waits, vec![1000.0, 2000.0]);
        assert_eq!(calls, 3);
    }

    #[test]
    fn two_failures_then_success() {
        let (r, waits, _) = run(2, true, RetryPolicy::default());
        assert_eq!(r.unwrap(), 3);
        assert_eq!(waits, vec![1000.0, 2000.0]);
    }

    #[test]
    fn non_retryable_propagates_immediately() {
        let (r, waits, calls) = run(5, false, RetryPolicy::default());
        assert!(matches!(r, Err(RetryError::NonRetryable(Flaky(false), OpKind::FaultInjection))));
        assert!(waits.is_empty());
        assert_eq!(calls, 1);
    }

    #[test]
    fn policy_validation() {
        let bad = RetryPolicy {
            max_attempts: 0,
            backoff_initial_ms: 10,
            backoff_multiplier: 0.5,
        };
        assert_eq!(bad.violations().len(), 2);
        assert!(RetryPolicy::default().violations().is_empty());
    }
}
