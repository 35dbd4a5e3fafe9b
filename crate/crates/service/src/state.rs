use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::RwLock;
use pprl_core::{privacy_loss_bound, Instant, PrivacyParams, Secret, Store};
use tokio::sync::{Mutex, MutexGuard};

use crate::config::{ConfigError, ServiceConfig};

/// Source of "now" for completed-epoch truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(Instant),
}

impl Clock {
    pub fn now(self) -> Instant {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs() as Instant)
                .unwrap_or(0),
            Clock::Fixed(t) => t,
        }
    }
}

/// Shared handler state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    params: PrivacyParams,
    budget_bound: f64,
    snapshot: RwLock<Option<Arc<Store>>>,
    ingest: Mutex<()>,
    admin_token: Option<String>,
    clock: Clock,
    test_mode: bool,
}

impl AppState {
    pub fn new(config: &ServiceConfig, secret: Secret) -> Result<Self, ConfigError> {
        config.validate()?;
        let clock = config.fixed_now()?.map_or(Clock::System, Clock::Fixed);
        Ok(Self {
            inner: Arc::new(Inner {
                params: config.privacy_params(secret)?,
                budget_bound: privacy_loss_bound(config.budget, config.epsilon),
                snapshot: RwLock::new(None),
                ingest: Mutex::new(()),
                admin_token: config.admin_token.clone(),
                clock,
                test_mode: config.test_mode,
            }),
        })
    }

    pub fn params(&self) -> &PrivacyParams {
        &self.inner.params
    }

    pub fn budget_bound(&self) -> f64 {
        self.inner.budget_bound
    }

    pub fn clock(&self) -> Clock {
        self.inner.clock
    }

    pub fn test_mode(&self) -> bool {
        self.inner.test_mode
    }

    /// The snapshot queries currently run against.
    pub fn current(&self) -> Option<Arc<Store>> {
        self.inner.snapshot.read().clone()
    }

    /// Swaps in a new snapshot. Requests already holding the old one finish on it.
    pub fn publish(&self, store: Store) {
        *self.inner.snapshot.write() = Some(Arc::new(store));
    }

    /// The single-writer lock taken by ingestion and snapshot loads;
    /// `None` while another writer holds it.
    pub fn try_writer(&self) -> Option<MutexGuard<'_, ()>> {
        self.inner.ingest.try_lock().ok()
    }

    pub(crate) fn authorized(&self, header: Option<&str>) -> bool {
        let (Some(expected), Some(given)) = (self.inner.admin_token.as_deref(), header) else {
            return false;
        };
        let Some(token) = given.strip_prefix("Bearer ") else {
            return false;
        };
        token.len() == expected.len()
            && token
                .bytes()
                .zip(expected.bytes())
                .fold(0u8, |acc, (a, b)| acc | (a ^ b))
                == 0
    }
}
