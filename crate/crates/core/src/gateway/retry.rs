use std::future::Future;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Exponential backoff with optional full jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backoff {
    #[serde(with = "millis")]
    pub base: Duration,
    pub factor: f64,
    #[serde(with = "millis")]
    pub cap: Duration,
    pub jitter: bool,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base: Duration::from_millis(500), factor: 2.0, cap: Duration::from_secs(30), jitter: true }
    }
}

impl Backoff {
    /// Upper bound of the wait before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let scaled = self.base.as_secs_f64() * self.factor.max(1.0).powi(retry as i32);
        Duration::from_secs_f64(scaled.min(self.cap.as_secs_f64()))
    }

    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self.ceiling(retry);
        if self.jitter && !ceiling.is_zero() {
            ceiling.mul_f64(rng.random_range(0.0..=1.0))
        } else {
            ceiling
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff: Backoff,
}

impl RetryPolicy {
    pub fn new(max_retries: u32, backoff: Backoff) -> Self {
        RetryPolicy { max_retries, backoff }
    }
}

/// Runs `attempt` until it succeeds, fails with a non-retryable error, or
/// `max_retries + 1` attempts have been made. Returns the last error.
pub async fn execute_with_policy<T, F, Fut>(policy: &RetryPolicy, mut attempt: F) -> Result<T, GatewayError>
where
    F: FnMut(u32) -> Fut,
    Fut: Future<Output = Result<T, GatewayError>>,
{
    let mut retry = 0;
    loop {
        match attempt(retry).await {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && retry < policy.max_retries => {
                let wait = policy.backoff.delay(retry, &mut rand::rng());
                tracing::debug!(retry, ?wait, error = %e, "retrying model request");
                tokio::time::sleep(wait).await;
                retry += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use proptest::prelude::*;

    use super::*;

    fn fast(max_retries: u32) -> RetryPolicy {
        RetryPolicy::new(
            max_retries,
            Backoff { base: Duration::from_millis(1), factor: 2.0, cap: Duration::from_millis(4), jitter: true },
        )
    }

    fn status(code: u16) -> GatewayError {
        GatewayError::Protocol { status: code, body_excerpt: String::new() }
    }

    #[test]
    fn ceiling_grows_and_caps() {
        let b = Backoff { base: Duration::from_millis(100), factor: 2.0, cap: Duration::from_millis(350), jitter: false };
        assert_eq!(b.ceiling(0), Duration::from_millis(100));
        assert_eq!(b.ceiling(1), Duration::from_millis(200));
        assert_eq!(b.ceiling(2), Duration::from_millis(350));
        assert_eq!(b.delay(5, &mut rand::rng()), Duration::from_millis(350));
    }

    #[test]
    fn jitter_stays_below_ceiling() {
        let b = Backoff::default();
        let mut rng = rand::rng();
        for retry in 0..8 {
            assert!(b.delay(retry, &mut rng) <= b.ceiling(retry));
        }
    }

    #[tokio::test]
    async fn always_500_exhausts_retries() {
        let calls = AtomicU32::new(0);
        let out: Result<(), _> = execute_with_policy(&fast(2), |_| {
            calls.fetch_add(1, Ordering::SeqCst);
            async { Err(status(500)) }
        })
        .await;
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(out.unwrap_err(), status(500));
    }

    #[tokio::test]
    async fn client_error_is_not_retried() {
        let calls = AtomicU32::new(0);
        let out: Result<(), _> = execute_with_policy(&fast(5), |_| {
            calls.fetch_add(1, Ordering::SeqCst);
            async { Err(status(400)) }
        })
        .await;
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert!(out.is_err());
    }

    #[tokio::test]
    async fn rate_limited_then_success() {
        let out = execute_with_policy(&fast(3), |n| async move {
            if n == 0 {
                Err(status(429))
            } else {
                Ok(n)
            }
        })
        .await;
        assert_eq!(out.unwrap(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn attempts_never_exceed_bound(max_retries in 0u32..4, script in prop::collection::vec(prop_oneof![
            Just(0u16), Just(200), Just(400), Just(404), Just(429), Just(500), Just(503)
        ], 0..8)) {
            let rt = tokio::runtime::Builder::new_current_thread().enable_time().build().unwrap();
            let calls = AtomicU32::new(0);
            let policy = RetryPolicy::new(max_retries, Backoff { base: Duration::ZERO, factor: 1.0, cap: Duration::ZERO, jitter: false });
            let _ = rt.block_on(execute_with_policy(&policy, |n| {
                calls.fetch_add(1, Ordering::SeqCst);
                let code = script.get(n as usize).copied().unwrap_or(500);
                async move {
                    match code {
                        200 => Ok(()),
                        0 => Err(GatewayError::Transport("reset".into())),
                        c => Err(status(c)),
                    }
                }
            }));
            prop_assert!(calls.load(Ordering::SeqCst) <= max_retries + 1);
        }
    }
}
