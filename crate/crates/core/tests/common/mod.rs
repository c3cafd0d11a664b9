//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use moesim::cache::{CacheError, CacheStats, ExpertCache, ExpertId, InsertOrigin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Straightforward LRU over a vector, head first.
#[derive(Debug, Default)]
pub struct ReferenceLru {
    pub capacity: usize,
    pub order: Vec<ExpertId>,
    pub pinned: HashSet<ExpertId>,
    pub unused: HashSet<ExpertId>,
    pub stats: CacheStats,
}

impl ReferenceLru {
    pub fn new(capacity: usize) -> Self {
        ReferenceLru {
            capacity,
            ..Default::default()
        }
    }

    fn touch(&mut self, id: ExpertId) {
        self.order.retain(|x| *x != id);
        self.order.push(id);
    }

    pub fn lookup(&mut self, id: ExpertId, touch: bool) -> bool {
        let hit = self.order.contains(&id);
        if touch {
            if hit {
                self.stats.hits += 1;
                self.unused.remove(&id);
                self.touch(id);
            } else {
                self.stats.misses += 1;
            }
        }
        hit
    }

    pub fn insert_batch(&mut self, ids: &[ExpertId], origin: InsertOrigin) -> Result<Vec<ExpertId>, CacheError> {
        let mut batch = Vec::new();
        for id in ids {
            if !batch.contains(id) {
                batch.push(*id);
            }
        }
        let fresh: Vec<ExpertId> = batch.iter().copied().filter(|id| !self.order.contains(id)).collect();
        let need = (self.order.len() + fresh.len()).saturating_sub(self.capacity);
        let candidates: Vec<ExpertId> = self
            .order
            .iter()
            .copied()
            .filter(|id| !self.pinned.contains(id) && !batch.contains(id))
            .collect();
        if candidates.len() < need {
            return Err(CacheError::BatchTooLarge {
                needed: need,
                evictable: candidates.len(),
            });
        }
        let victims: Vec<ExpertId> = candidates[..need].to_vec();
        for v in &victims {
            self.order.retain(|x| x != v);
            if self.unused.remove(v) {
                self.stats.wasted_prefetches += 1;
            }
        }
        for id in &batch {
            if origin == InsertOrigin::Prefetch && fresh.contains(id) {
                self.unused.insert(*id);
            }
            self.touch(*id);
        }
        self.stats.insertions += fresh.len() as u64;
        self.stats.evictions += victims.len() as u64;
        if origin == InsertOrigin::Prefetch {
            self.stats.prefetch_insertions += fresh.len() as u64;
            self.stats.prefetch_evictions += victims.len() as u64;
        }
        Ok(victims)
    }

    pub fn pin(&mut self, ids: &[ExpertId]) -> Result<(), CacheError> {
        if let Some(id) = ids.iter().find(|id| !self.order.contains(id)) {
            return Err(CacheError::NotResident(*id));
        }
        self.pinned.extend(ids.iter().copied());
        Ok(())
    }

    pub fn unpin(&mut self, ids: &[ExpertId]) {
        for id in ids {
            self.pinned.remove(id);
        }
    }
}

#[derive(Debug, Clone)]
pub enum CacheOp {
    Lookup(ExpertId, bool),
    Insert(Vec<ExpertId>, InsertOrigin),
    Pin(Vec<ExpertId>),
    Unpin(Vec<ExpertId>),
}

/// Random operation mix over `layers * experts` ids.
pub fn random_ops(seed: u64, n: usize, layers: usize, experts: usize, max_batch: usize) -> Vec<CacheOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = |rng: &mut ChaCha8Rng| ExpertId::new(rng.random_range(0..layers), rng.random_range(0..experts));
    (0..n)
        .map(|_| {
            let kind = rng.random_range(0..10);
            let len = rng.random_range(1..=max_batch);
            let ids: Vec<ExpertId> = (0..len).map(|_| id(&mut rng)).collect();
            match kind {
                0..=3 => CacheOp::Lookup(ids[0], rng.random_bool(0.8)),
                4..=7 => {
                    let origin = match rng.random_range(0..3) {
                        0 => InsertOrigin::Prefetch,
                        1 => InsertOrigin::OnDemand,
                        _ => InsertOrigin::Warm,
                    };
                    CacheOp::Insert(ids, origin)
                }
                8 => CacheOp::Pin(ids[..1.min(len)].to_vec()),
                _ => CacheOp::Unpin(ids),
            }
        })
        .collect()
}

/// Replays `ops` on both caches and returns the first divergence.
pub fn replay(ops: &[CacheOp], capacity: usize) -> Result<(), String> {
    let mut real = ExpertCache::new(capacity);
    let mut oracle = ReferenceLru::new(capacity);
    for (i, op) in ops.iter().enumerate() {
        match op {
            CacheOp::Lookup(id, touch) => {
                let (a, b) = (real.lookup(*id, *touch), oracle.lookup(*id, *touch));
                if a != b {
                    return Err(format!("op {i}: lookup {id} gave {a} vs {b}"));
                }
            }
            CacheOp::Insert(ids, origin) => {
                let (a, b) = (real.insert_batch(ids, *origin), oracle.insert_batch(ids, *origin));
                if a != b {
                    return Err(format!("op {i}: insert gave {a:?} vs {b:?}"));
                }
            }
            CacheOp::Pin(ids) => {
                let (a, b) = (real.pin(ids), oracle.pin(ids));
                if a != b {
                    return Err(format!("op {i}: pin gave {a:?} vs {b:?}"));
                }
            }
            CacheOp::Unpin(ids) => {
                real.unpin(ids);
                oracle.unpin(ids);
            }
        }
        if real.lru_order() != oracle.order {
            return Err(format!("op {i}: residency differs"));
        }
        if real.stats() != oracle.stats {
            return Err(format!("op {i}: counters {:?} vs {:?}", real.stats(), oracle.stats));
        }
        if real.len() > capacity {
            return Err(format!("op {i}: capacity exceeded"));
        }
    }
    Ok(())
}
