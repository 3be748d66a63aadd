//! In-memory session table with expiry.
//!
//! Closed and expired ids are remembered so that later requests can be told
//! apart from requests for ids that never existed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use bcie_core::critique::{Conversation, CritiqueFact, FactKey};

use crate::error::ApiError;

pub(crate) struct Live {
    pub conv: Conversation,
    /// Facts the client was shown in the latest payload.
    pub presented: BTreeMap<FactKey, CritiqueFact>,
    pub ordinal: usize,
    pub created_at: Instant,
    pub last_used: Instant,
    pub closed: bool,
}

pub(crate) type Handle = Arc<Mutex<Live>>;

pub(crate) struct Sessions {
    ttl: Duration,
    live: RwLock<HashMap<String, Handle>>,
    gone: RwLock<HashSet<String>>,
}

/// 128 random bits from the thread-local CSPRNG, hex encoded.
pub(crate) fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

impl Sessions {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            live: RwLock::new(HashMap::new()),
            gone: RwLock::new(HashSet::new()),
        }
    }

    pub fn insert(&self, live: Live) -> String {
        let mut map = self.live.write().expect("session table poisoned");
        loop {
            let id = new_session_id();
            if !map.contains_key(&id) {
                map.insert(id.clone(), Arc::new(Mutex::new(live)));
                return id;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.live.read().expect("session table poisoned").len()
    }

    fn retire(&self, id: &str) {
        self.live.write().expect("session table poisoned").remove(id);
        self.gone.write().expect("tombstones poisoned").insert(id.to_string());
    }

    /// Runs `f` on a live session under its lock, refreshing its last-use
    /// time.
    pub fn with<T>(&self, id: &str, f: impl FnOnce(&mut Live) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let handle = self.live.read().expect("session table poisoned").get(id).cloned();
        let Some(handle) = handle else {
            return Err(if self.gone.read().expect("tombstones poisoned").contains(id) {
                ApiError::gone(id)
            } else {
                ApiError::not_found(format!("no session `{id}`"))
            });
        };
        let mut live = handle.lock().expect("session poisoned");
        if live.closed {
            return Err(ApiError::gone(id));
        }
        let now = Instant::now();
        if now.duration_since(live.last_used) > self.ttl {
            live.closed = true;
            drop(live);
            self.retire(id);
            tracing::info!(session = id, "session expired");
            return Err(ApiError::gone(id));
        }
        live.last_used = now;
        let out = f(&mut live);
        if live.closed {
            drop(live);
            self.retire(id);
        }
        out
    }

    /// Retires every session idle for longer than the TTL.
    pub fn sweep(&self) -> usize {
        let handles: Vec<(String, Handle)> = self
            .live
            .read()
            .expect("session table poisoned")
            .iter()
            .map(|(id, h)| (id.clone(), h.clone()))
            .collect();
        let mut n = 0;
        for (id, h) in handles {
            let Ok(mut live) = h.try_lock() else { continue };
            if !live.closed && Instant::now().duration_since(live.last_used) > self.ttl {
                live.closed = true;
                drop(live);
                self.retire(&id);
                n += 1;
            }
        }
        n
    }
}
