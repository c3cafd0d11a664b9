//! Device-resident expert cache with LRU order, pinning and batched replacement.
//!
//! The cache needs external serialization: in the simulator exactly one agent
//! mutates it at any simulated instant.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use crate::config::CacheMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExpertId {
    pub layer: usize,
    pub expert: usize,
}

impl ExpertId {
    pub fn new(layer: usize, expert: usize) -> Self {
        ExpertId { layer, expert }
    }
}

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}E{}", self.layer, self.expert)
    }
}

/// Why an expert entered the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOrigin {
    Prefetch,
    OnDemand,
    /// Pre-filled before decoding starts.
    Warm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub insertions: u64,
    pub evictions: u64,
    pub prefetch_insertions: u64,
    /// Evictions forced by prefetch insertions.
    pub prefetch_evictions: u64,
    /// Prefetched experts evicted before any lookup touched them.
    pub wasted_prefetches: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CacheError {
    #[error("batch needs {needed} evictions but only {evictable} entries are evictable")]
    BatchTooLarge { needed: usize, evictable: usize },
    #[error("cannot pin {0}: not resident")]
    NotResident(ExpertId),
}

#[derive(Debug, Clone, Default)]
struct Partition {
    // stamp order is LRU order: the smallest stamp is the head
    order: BTreeMap<u64, ExpertId>,
    stamps: HashMap<ExpertId, u64>,
}

#[derive(Debug, Clone)]
pub struct ExpertCache {
    capacity: usize,
    mode: CacheMode,
    partitions: Vec<Partition>,
    pinned: HashSet<ExpertId>,
    unused_prefetches: HashSet<ExpertId>,
    next_stamp: u64,
    stats: CacheStats,
}

impl ExpertCache {
    /// One LRU pool of `capacity` slots.
    pub fn new(capacity: usize) -> Self {
        Self::with_mode(capacity, CacheMode::Global, 1)
    }

    /// `capacity` is the slot count per partition: the whole pool in global
    /// mode, each layer's share in per-layer mode.
    pub fn with_mode(capacity: usize, mode: CacheMode, num_layers: usize) -> Self {
        let parts = match mode {
            CacheMode::Global => 1,
            CacheMode::PerLayer => num_layers.max(1),
        };
        ExpertCache {
            capacity,
            mode,
            partitions: vec![Partition::default(); parts],
            pinned: HashSet::new(),
            unused_prefetches: HashSet::new(),
            next_stamp: 0,
            stats: CacheStats::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.partitions.iter().map(|p| p.stamps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    fn part(&self, id: ExpertId) -> usize {
        match self.mode {
            CacheMode::Global => 0,
            CacheMode::PerLayer => id.layer,
        }
    }

    /// Membership probe that changes neither order nor counters.
    pub fn contains(&self, id: ExpertId) -> bool {
        self.partitions
            .get(self.part(id))
            .is_some_and(|p| p.stamps.contains_key(&id))
    }

    /// Membership test; with `touch`, counts a hit or miss and moves a hit to
    /// the tail.
    pub fn lookup(&mut self, id: ExpertId, touch: bool) -> bool {
        let hit = self.contains(id);
        if touch {
            if hit {
                self.stats.hits += 1;
                self.unused_prefetches.remove(&id);
                self.move_to_end(id);
            } else {
                self.stats.misses += 1;
            }
        }
        hit
    }

    fn move_to_end(&mut self, id: ExpertId) {
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        let part = self.part(id);
        let p = &mut self.partitions[part];
        if let Some(old) = p.stamps.insert(id, stamp) {
            p.order.remove(&old);
        }
        p.order.insert(stamp, id);
    }

    /// Residents from least to most recently used (partitions concatenated in
    /// layer order).
    pub fn lru_order(&self) -> Vec<ExpertId> {
        self.partitions
            .iter()
            .flat_map(|p| p.order.values().copied())
            .collect()
    }

    pub fn is_pinned(&self, id: ExpertId) -> bool {
        self.pinned.contains(&id)
    }

    /// Inserts `ids` at the tail in argument order, evicting unpinned entries
    /// from the head to make room. Present ids move to the tail without
    /// evicting anything; entries of the batch itself are never victims.
    /// Returns the victims in eviction order. Nothing changes on error.
    pub fn insert_batch(
        &mut self,
        ids: &[ExpertId],
        origin: InsertOrigin,
    ) -> Result<Vec<ExpertId>, CacheError> {
        let mut seen = HashSet::with_capacity(ids.len());
        let batch: Vec<ExpertId> = ids.iter().copied().filter(|id| seen.insert(*id)).collect();

        let mut new_per_part = vec![0usize; self.partitions.len()];
        for id in &batch {
            if !self.contains(*id) {
                new_per_part[self.part(*id)] += 1;
            }
        }
        let mut victims = Vec::new();
        for (pi, p) in self.partitions.iter().enumerate() {
            let need = (p.stamps.len() + new_per_part[pi]).saturating_sub(self.capacity);
            if need == 0 {
                continue;
            }
            let candidates = p
                .order
                .values()
                .filter(|id| !self.pinned.contains(id) && !seen.contains(id));
            let chosen: Vec<ExpertId> = candidates.clone().take(need).copied().collect();
            if chosen.len() < need {
                return Err(CacheError::BatchTooLarge {
                    needed: need,
                    evictable: candidates.count(),
                });
            }
            victims.extend(chosen);
        }

        for v in &victims {
            let part = self.part(*v);
            let p = &mut self.partitions[part];
            let stamp = p.stamps.remove(v).expect("victim is resident");
            p.order.remove(&stamp);
            if self.unused_prefetches.remove(v) {
                self.stats.wasted_prefetches += 1;
            }
        }
        let new_count: u64 = new_per_part.iter().sum::<usize>() as u64;
        for id in &batch {
            if origin == InsertOrigin::Prefetch && !self.contains(*id) {
                self.unused_prefetches.insert(*id);
            }
            self.move_to_end(*id);
        }
        self.stats.insertions += new_count;
        self.stats.evictions += victims.len() as u64;
        if origin == InsertOrigin::Prefetch {
            self.stats.prefetch_insertions += new_count;
            self.stats.prefetch_evictions += victims.len() as u64;
        }
        Ok(victims)
    }

    /// Marks resident entries ineligible for eviction. Nothing changes on error.
    pub fn pin(&mut self, ids: &[ExpertId]) -> Result<(), CacheError> {
        if let Some(id) = ids.iter().find(|id| !self.contains(**id)) {
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

    pub fn unpin_all(&mut self) {
        self.pinned.clear();
    }

    /// Prefetch-forced evictions per prefetch insertion; 0 when nothing was
    /// prefetched.
    pub fn eviction_rate(&self) -> f64 {
        ratio(self.stats.prefetch_evictions, self.stats.prefetch_insertions)
    }

    /// Fraction of prefetched experts evicted before first use.
    pub fn wasted_prefetch_rate(&self) -> f64 {
        ratio(self.stats.wasted_prefetches, self.stats.prefetch_insertions)
    }

    pub fn hit_rate(&self) -> f64 {
        ratio(self.stats.hits, self.stats.hits + self.stats.misses)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(e: usize) -> ExpertId {
        ExpertId::new(0, e)
    }

    #[test]
    fn empty_cache_misses() {
        let mut c = ExpertCache::new(2);
        assert!(!c.lookup(id(0), true));
        assert_eq!(c.stats().misses, 1);
    }

    #[test]
    fn touch_hit_moves_to_tail() {
        let mut c = ExpertCache::new(3);
        c.insert_batch(&[id(1), id(2), id(3)], InsertOrigin::OnDemand).unwrap();
        assert!(c.lookup(id(1), true));
        assert_eq!(c.lru_order(), vec![id(2), id(3), id(1)]);
        assert!(c.lookup(id(2), false));
        assert_eq!(c.lru_order(), vec![id(2), id(3), id(1)]);
        assert_eq!(c.stats().hits, 1);
    }

    #[test]
    fn batch_into_empty_cache_keeps_order() {
        let mut c = ExpertCache::new(4);
        let ev = c.insert_batch(&[id(3), id(1), id(2)], InsertOrigin::Prefetch).unwrap();
        assert!(ev.is_empty());
        assert_eq!(c.lru_order(), vec![id(3), id(1), id(2)]);
    }

    #[test]
    fn batch_evicts_from_head() {
        let mut c = ExpertCache::new(3);
        c.insert_batch(&[id(0), id(1), id(2)], InsertOrigin::OnDemand).unwrap();
        let ev = c.insert_batch(&[id(3), id(4)], InsertOrigin::Prefetch).unwrap();
        assert_eq!(ev, vec![id(0), id(1)]);
        assert_eq!(c.lru_order(), vec![id(2), id(3), id(4)]);
        assert_eq!(c.eviction_rate(), 1.0);
    }

    #[test]
    fn present_head_moves_without_eviction() {
        let mut c = ExpertCache::new(3);
        c.insert_batch(&[id(0), id(1), id(2)], InsertOrigin::OnDemand).unwrap();
        let ev = c.insert_batch(&[id(0)], InsertOrigin::Prefetch).unwrap();
        assert!(ev.is_empty());
        assert_eq!(c.lru_order(), vec![id(1), id(2), id(0)]);
    }

    #[test]
    fn pinned_head_is_skipped() {
        let mut c = ExpertCache::new(3);
        c.insert_batch(&[id(0), id(1), id(2)], InsertOrigin::OnDemand).unwrap();
        c.pin(&[id(0)]).unwrap();
        assert_eq!(c.insert_batch(&[id(3)], InsertOrigin::OnDemand).unwrap(), vec![id(1)]);
        c.unpin(&[id(0)]);
        assert_eq!(c.insert_batch(&[id(4)], InsertOrigin::OnDemand).unwrap(), vec![id(0)]);
    }

    #[test]
    fn pinning_non_resident_fails() {
        let mut c = ExpertCache::new(1);
        assert_eq!(c.pin(&[id(7)]), Err(CacheError::NotResident(id(7))));
    }

    #[test]
    fn oversized_batch_fails_without_mutation() {
        let mut c = ExpertCache::new(2);
        c.insert_batch(&[id(0), id(1)], InsertOrigin::OnDemand).unwrap();
        c.pin(&[id(0)]).unwrap();
        let before = c.lru_order();
        assert!(c.insert_batch(&[id(2), id(3)], InsertOrigin::Prefetch).is_err());
        assert_eq!(c.lru_order(), before);
        assert_eq!(c.stats().insertions, 2);
    }

    #[test]
    fn no_prefetch_means_zero_rate() {
        let mut c = ExpertCache::new(1);
        c.insert_batch(&[id(0)], InsertOrigin::OnDemand).unwrap();
        c.insert_batch(&[id(1)], InsertOrigin::OnDemand).unwrap();
        assert_eq!(c.eviction_rate(), 0.0);
        let mut big = ExpertCache::new(10);
        big.insert_batch(&[id(0), id(1)], InsertOrigin::Prefetch).unwrap();
        assert_eq!(big.eviction_rate(), 0.0);
    }

    #[test]
    fn wasted_prefetch_is_counted() {
        let mut c = ExpertCache::new(2);
        c.insert_batch(&[id(0), id(1)], InsertOrigin::Prefetch).unwrap();
        c.lookup(id(0), true);
        c.insert_batch(&[id(2), id(3)], InsertOrigin::OnDemand).unwrap();
        assert_eq!(c.stats().wasted_prefetches, 1);
    }

    #[test]
    fn per_layer_partitions_are_independent() {
        let mut c = ExpertCache::with_mode(1, CacheMode::PerLayer, 2);
        c.insert_batch(&[ExpertId::new(0, 0), ExpertId::new(1, 0)], InsertOrigin::OnDemand)
            .unwrap();
        let ev = c.insert_batch(&[ExpertId::new(0, 1)], InsertOrigin::OnDemand).unwrap();
        assert_eq!(ev, vec![ExpertId::new(0, 0)]);
        assert!(c.contains(ExpertId::new(1, 0)));
        assert_eq!(c.len(), 2);
    }
}
