//! Coalesces concurrent calls for the same key into one underlying future.
//!
//! The first caller for a key installs a shared future; callers arriving while
//! it is pending await the same future and receive a clone of its output. Once
//! the future resolves its entry is removed, so deduplication is in-flight only:
//! a later call for the same key runs the operation again.

use std::collections::HashMap;
use std::future::Future;
use std::hash::Hash;
use std::sync::{Arc, Mutex};

use futures::future::{BoxFuture, FutureExt, Shared};

type SharedFut<V> = Shared<BoxFuture<'static, V>>;
type Flights<K, V> = Arc<Mutex<HashMap<K, (u64, SharedFut<V>)>>>;

pub struct SingleFlight<K, V>
where
    V: Clone,
{
    in_flight: Flights<K, V>,
    next_id: Arc<Mutex<u64>>,
}

impl<K, V: Clone> Clone for SingleFlight<K, V> {
    fn clone(&self) -> Self {
        Self {
            in_flight: self.in_flight.clone(),
            next_id: self.next_id.clone(),
        }
    }
}

impl<K, V> Default for SingleFlight<K, V>
where
    K: Hash + Eq + Clone + Send + 'static,
    V: Clone + Send + Sync + 'static,
{
    fn default() -> Self {
        Self::new()
    }
}

impl<K, V> SingleFlight<K, V>
where
    K: Hash + Eq + Clone + Send + 'static,
    V: Clone + Send + Sync + 'static,
{
    pub fn new() -> Self {
        Self {
            in_flight: Arc::new(Mutex::new(HashMap::new())),
            next_id: Arc::new(Mutex::new(0)),
        }
    }

    /// Runs `make()` unless a call for `key` is already pending, in which case
    /// the pending result is shared. Returns the value and whether this caller
    /// was the one that started the work.
    pub async fn run<F, Fut>(&self, key: K, make: F) -> (V, bool)
    where
        F: FnOnce() -> Fut,
        Fut: Future<Output = V> + Send + 'static,
    {
        let (fut, leader) = {
            let mut map = self.in_flight.lock().expect("single-flight map poisoned");
            if let Some((_, fut)) = map.get(&key) {
                (fut.clone(), false)
            } else {
                let id = {
                    let mut n = self.next_id.lock().expect("single-flight id poisoned");
                    *n += 1;
                    *n
                };
                let map_ref = self.in_flight.clone();
                let k = key.clone();
                let inner = make();
                let fut = async move {
                    let out = inner.await;
                    let mut map = map_ref.lock().expect("single-flight map poisoned");
                    // a newer flight may have replaced ours after cancellation
                    if map.get(&k).is_some_and(|(eid, _)| *eid == id) {
                        map.remove(&k);
                    }
                    out
                }
                .boxed()
                .shared();
                map.insert(key, (id, fut.clone()));
                (fut, true)
            }
        };
        (fut.await, leader)
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight.lock().map(|m| m.len()).unwrap_or(0)
    }
}
