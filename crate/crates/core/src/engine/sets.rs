use std::collections::{HashMap, HashSet};

use crate::dataset::Neighbor;

/// One candidate-set entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub id: u32,
    /// Approximate (PQ) distance.
    pub dist: f32,
    pub visited: bool,
}

#[inline]
fn before(a: (f32, u32), b: (f32, u32)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).is_lt()
}

/// Bounded frontier sorted ascending by approximate distance, ties by ID.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    capacity: usize,
    entries: Vec<Candidate>,
    members: HashSet<u32>,
}

/// What happened to an insertion attempt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Insert {
    /// Already present; nothing changed.
    Duplicate,
    Added,
    /// Added, pushing out the previous last entry.
    AddedEvicting(Candidate),
    /// Did not fit; the set is full of closer entries.
    Rejected,
}

impl CandidateSet {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "candidate set needs a positive capacity");
        Self {
            capacity,
            entries: Vec::with_capacity(capacity + 1),
            members: HashSet::with_capacity(capacity * 2),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Raises the capacity; never drops entries.
    pub fn grow(&mut self, capacity: usize) {
        self.capacity = self.capacity.max(capacity);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn contains(&self, id: u32) -> bool {
        self.members.contains(&id)
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn insert(&mut self, id: u32, dist: f32) -> Insert {
        if self.members.contains(&id) {
            return Insert::Duplicate;
        }
        if self.is_full() {
            let last = self.entries[self.entries.len() - 1];
            if !before((dist, id), (last.dist, last.id)) {
                return Insert::Rejected;
            }
        }
        let pos = self.entries.partition_point(|c| before((c.dist, c.id), (dist, id)));
        self.entries.insert(pos, Candidate { id, dist, visited: false });
        self.members.insert(id);
        if self.entries.len() > self.capacity {
            let out = self.entries.pop().expect("over capacity implies non-empty");
            self.members.remove(&out.id);
            return Insert::AddedEvicting(out);
        }
        Insert::Added
    }

    /// Marks `id` visited if present.
    pub fn mark_visited(&mut self, id: u32) {
        if !self.members.contains(&id) {
            return;
        }
        if let Some(c) = self.entries.iter_mut().find(|c| c.id == id) {
            c.visited = true;
        }
    }

    /// Closest unvisited entry, marked visited on the way out.
    pub fn pop_unvisited(&mut self) -> Option<Candidate> {
        let c = self.entries.iter_mut().find(|c| !c.visited)?;
        c.visited = true;
        Some(*c)
    }

    pub fn has_unvisited(&self) -> bool {
        self.entries.iter().any(|c| !c.visited)
    }
}

/// Unbounded exact-distance results keyed by ID.
#[derive(Clone, Debug, Default)]
pub struct ResultSet {
    entries: HashMap<u32, f32>,
}

impl ResultSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps the first distance recorded for an ID.
    pub fn insert(&mut self, id: u32, dist: f32) -> bool {
        match self.entries.entry(id) {
            std::collections::hash_map::Entry::Occupied(_) => false,
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(dist);
                true
            }
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries ascending by distance, ties by ID.
    pub fn sorted(&self) -> Vec<Neighbor> {
        let mut out: Vec<Neighbor> = self.entries.iter().map(|(&id, &d)| Neighbor::new(id, d)).collect();
        out.sort_unstable_by(Neighbor::cmp_by_dist);
        out
    }

    /// The `k` closest entries.
    pub fn top(&self, k: usize) -> Vec<Neighbor> {
        let mut out = self.sorted();
        out.truncate(k);
        out
    }
}

/// Unvisited vertices pushed out of (or turned away from) a full
/// candidate set during range search.
#[derive(Clone, Debug, Default)]
pub struct KickedPool {
    entries: HashMap<u32, f32>,
}

impl KickedPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u32, dist: f32) {
        self.entries.insert(id, dist);
    }

    pub fn remove(&mut self, id: u32) {
        self.entries.remove(&id);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.contains_key(&id)
    }

    /// Moves the nearest entries accepted by `usable` into `candidates`
    /// until it is full. Entries rejected by `usable` are dropped. Returns
    /// the number moved.
    pub fn refill(&mut self, candidates: &mut CandidateSet, usable: impl Fn(u32) -> bool) -> usize {
        let mut pool: Vec<(f32, u32)> = self.entries.drain().map(|(id, d)| (d, id)).collect();
        pool.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut moved = 0;
        let mut rest = pool.into_iter();
        for (d, id) in rest.by_ref() {
            if candidates.is_full() {
                self.entries.insert(id, d);
                break;
            }
            if !usable(id) || candidates.contains(id) {
                continue;
            }
            candidates.insert(id, d);
            moved += 1;
        }
        self.entries.extend(rest.map(|(d, id)| (id, d)));
        moved
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn candidate_set_keeps_closest() {
        let mut c = CandidateSet::new(3);
        assert_eq!(c.insert(5, 5.0), Insert::Added);
        assert_eq!(c.insert(1, 1.0), Insert::Added);
        assert_eq!(c.insert(5, 0.5), Insert::Duplicate);
        assert_eq!(c.insert(3, 3.0), Insert::Added);
        assert_eq!(c.insert(9, 9.0), Insert::Rejected);
        match c.insert(2, 2.0) {
            Insert::AddedEvicting(out) => assert_eq!(out.id, 5),
            other => panic!("{other:?}"),
        }
        let ids: Vec<u32> = c.entries().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        // Equal distance sorts by ID.
        assert_eq!(c.insert(0, 3.0), Insert::AddedEvicting(Candidate { id: 3, dist: 3.0, visited: false }));
    }

    #[test]
    fn pop_marks_visited() {
        let mut c = CandidateSet::new(4);
        c.insert(1, 1.0);
        c.insert(2, 2.0);
        c.mark_visited(1);
        assert_eq!(c.pop_unvisited().unwrap().id, 2);
        assert!(c.pop_unvisited().is_none());
        assert!(!c.has_unvisited());
        c.grow(8);
        assert_eq!(c.capacity(), 8);
    }

    #[test]
    fn result_set_dedups() {
        let mut r = ResultSet::new();
        assert!(r.insert(3, 1.0));
        assert!(!r.insert(3, 2.0));
        r.insert(1, 1.0);
        r.insert(7, 0.5);
        let ids: Vec<u32> = r.top(2).iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![7, 1]);
    }

    #[test]
    fn refill_takes_nearest_usable() {
        let mut p = KickedPool::new();
        for (id, d) in [(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)] {
            p.insert(id, d);
        }
        let mut c = CandidateSet::new(2);
        let moved = p.refill(&mut c, |id| id != 1);
        assert_eq!(moved, 2);
        let ids: Vec<u32> = c.entries().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![2, 3]);
        assert_eq!(p.len(), 1);
        assert!(p.contains(4));
    }

    proptest! {
        #[test]
        fn candidate_set_invariants(ops in proptest::collection::vec((0u32..50, 0u32..100), 1..200), cap in 1usize..20) {
            let mut c = CandidateSet::new(cap);
            for (id, d) in ops {
                c.insert(id, d as f32);
                prop_assert!(c.len() <= cap);
                let e = c.entries();
                prop_assert!(e.windows(2).all(|w| before((w[0].dist, w[0].id), (w[1].dist, w[1].id))));
                let ids: HashSet<u32> = e.iter().map(|x| x.id).collect();
                prop_assert_eq!(ids.len(), e.len());
            }
        }
    }
}
