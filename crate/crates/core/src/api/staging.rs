use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::domain::{TaskId, UserId};
use crate::gateway::Prediction;

type Entries = HashMap<(TaskId, UserId), (Instant, Vec<Prediction>)>;

/// Predictions waiting for a human to accept them, per (task, annotator).
/// Nothing here touches the store.
pub struct Staging {
    ttl: Duration,
    entries: Mutex<Entries>,
}

impl Staging {
    pub fn new(ttl: Duration) -> Self {
        Staging {
            ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Entries> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn evict(&self, map: &mut Entries, now: Instant) {
        map.retain(|_, (at, _)| now.saturating_duration_since(*at) < self.ttl);
    }

    /// Replaces whatever was staged for the key.
    pub fn put(&self, task: &TaskId, user: &UserId, predictions: Vec<Prediction>, now: Instant) {
        let mut map = self.lock();
        self.evict(&mut map, now);
        map.insert((task.clone(), user.clone()), (now, predictions));
    }

    pub fn get(&self, task: &TaskId, user: &UserId, now: Instant) -> Vec<Prediction> {
        let mut map = self.lock();
        self.evict(&mut map, now);
        map.get(&(task.clone(), user.clone()))
            .map(|(_, p)| p.clone())
            .unwrap_or_default()
    }

    pub fn take(&self, task: &TaskId, user: &UserId, now: Instant) -> Vec<Prediction> {
        let mut map = self.lock();
        self.evict(&mut map, now);
        map.remove(&(task.clone(), user.clone()))
            .map(|(_, p)| p)
            .unwrap_or_default()
    }

    /// Puts back predictions taken by a failed accept.
    pub fn restore(
        &self,
        task: &TaskId,
        user: &UserId,
        predictions: Vec<Prediction>,
        staged_at: Instant,
    ) {
        self.lock()
            .entry((task.clone(), user.clone()))
            .or_insert((staged_at, predictions));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred() -> Prediction {
        Prediction::Segment {
            label: "speech".into(),
            start: 0.0,
            end: 1.0,
            confidence: None,
        }
    }

    #[test]
    fn isolated_and_evicted() {
        let staging = Staging::new(Duration::from_secs(3600));
        let t0 = Instant::now();
        let (task, a, b) = (TaskId::from("t"), UserId::from("a"), UserId::from("b"));
        staging.put(&task, &a, vec![pred(), pred()], t0);
        assert_eq!(staging.get(&task, &a, t0).len(), 2);
        assert!(staging.get(&task, &b, t0).is_empty());
        assert!(staging
            .get(&task, &a, t0 + Duration::from_secs(3600))
            .is_empty());
    }

    #[test]
    fn take_clears() {
        let staging = Staging::new(Duration::from_secs(60));
        let t0 = Instant::now();
        let (task, a) = (TaskId::from("t"), UserId::from("a"));
        staging.put(&task, &a, vec![pred()], t0);
        assert_eq!(staging.take(&task, &a, t0).len(), 1);
        assert!(staging.take(&task, &a, t0).is_empty());
    }
}
