//! Van Emde Boas tree over a power-of-two universe.
//!
//! Supports insert and extract-min in O(log log u). Used to sort cluster leaf
//! ranks during tree compression; each instance is per-phase scratch that is
//! drained back to empty after use.

/// Recursive vEB node. The minimum is kept out of the cluster structure, so
/// a node storing one key has no children allocated.
#[derive(Debug, Clone)]
pub struct Veb {
    /// Universe bit width; the universe is `2^bits` and `bits >= 1`.
    bits: u32,
    min: Option<u32>,
    max: Option<u32>,
    summary: Option<Box<Veb>>,
    clusters: Vec<Option<Box<Veb>>>,
}

impl Veb {
    /// Tree over `{0, .., universe-1}` with `universe` rounded up to a power of two.
    pub fn new(universe: usize) -> Veb {
        let u = universe.max(2).next_power_of_two();
        Veb::with_bits(u.trailing_zeros())
    }

    fn with_bits(bits: u32) -> Veb {
        Veb { bits, min: None, max: None, summary: None, clusters: Vec::new() }
    }

    #[inline]
    fn lo_bits(&self) -> u32 {
        self.bits / 2
    }

    #[inline]
    fn hi(&self, x: u32) -> u32 {
        x >> self.lo_bits()
    }

    #[inline]
    fn lo(&self, x: u32) -> u32 {
        x & ((1 << self.lo_bits()) - 1)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.min.is_none()
    }

    pub fn universe(&self) -> usize {
        1usize << self.bits
    }

    fn cluster_mut(&mut self, h: u32) -> &mut Veb {
        if self.clusters.is_empty() {
            let count = 1usize << (self.bits - self.lo_bits());
            self.clusters = vec![None; count];
        }
        let lo = self.lo_bits();
        self.clusters[h as usize].get_or_insert_with(|| Box::new(Veb::with_bits(lo)))
    }

    pub fn insert(&mut self, x: u32) {
        debug_assert!((x as usize) < self.universe());
        let mut x = x;
        match self.min {
            None => {
                self.min = Some(x);
                self.max = Some(x);
                return;
            }
            Some(m) if x == m => return,
            Some(m) => {
                if x < m {
                    self.min = Some(x);
                    x = m;
                }
            }
        }
        if x > self.max.unwrap() {
            self.max = Some(x);
        }
        if self.bits > 1 {
            let (h, l) = (self.hi(x), self.lo(x));
            let cluster = self.cluster_mut(h);
            if cluster.is_empty() {
                cluster.insert(l);
                let bits = self.bits - self.lo_bits();
                self.summary.get_or_insert_with(|| Box::new(Veb::with_bits(bits))).insert(h);
            } else {
                cluster.insert(l);
            }
        }
        // bits == 1: min/max already capture both possible keys.
    }

    /// Removes and returns the smallest stored key.
    pub fn extract_min(&mut self) -> Option<u32> {
        let out = self.min?;
        if self.bits == 1 {
            if self.max != self.min && self.max.is_some() {
                self.min = self.max;
            } else {
                self.min = None;
                self.max = None;
            }
            return Some(out);
        }
        match self.summary.as_mut().and_then(|s| s.min) {
            None => {
                // Every key other than min lives in a cluster, so an empty
                // summary means min was the only key.
                debug_assert_eq!(self.max, Some(out));
                self.min = None;
                self.max = None;
            }
            Some(h) => {
                let l = {
                    let cluster = self.clusters[h as usize].as_mut().unwrap();
                    let l = cluster.extract_min().unwrap();
                    if cluster.is_empty() {
                        self.summary.as_mut().unwrap().delete(h);
                    }
                    l
                };
                self.min = Some((h << self.lo_bits()) | l);
            }
        }
        Some(out)
    }

    fn delete(&mut self, x: u32) {
        let Some(m) = self.min else { return };
        if self.bits == 1 {
            if Some(x) == self.min && Some(x) == self.max {
                self.min = None;
                self.max = None;
            } else if Some(x) == self.min {
                self.min = self.max;
            } else if Some(x) == self.max {
                self.max = self.min;
            }
            return;
        }
        let mut x = x;
        if x == m {
            match self.summary.as_ref().and_then(|s| s.min) {
                None => {
                    self.min = None;
                    self.max = None;
                    return;
                }
                Some(h) => {
                    let l = self.clusters[h as usize].as_ref().unwrap().min.unwrap();
                    x = (h << self.lo_bits()) | l;
                    self.min = Some(x);
                }
            }
        }
        let (h, l) = (self.hi(x), self.lo(x));
        if let Some(Some(cluster)) = self.clusters.get_mut(h as usize) {
            cluster.delete(l);
            if cluster.is_empty() {
                self.summary.as_mut().unwrap().delete(h);
            }
        }
        if Some(x) == self.max {
            match self.summary.as_ref().and_then(|s| s.max) {
                None => self.max = self.min,
                Some(h) => {
                    let l = self.clusters[h as usize].as_ref().unwrap().max.unwrap();
                    self.max = Some((h << self.lo_bits()) | l);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    #[test]
    fn drains_sorted() {
        let mut veb = Veb::new(100);
        for x in [17u32, 3, 99, 3, 0, 64, 31] {
            veb.insert(x);
        }
        let mut got = Vec::new();
        while let Some(x) = veb.extract_min() {
            got.push(x);
        }
        assert_eq!(got, vec![0, 3, 17, 31, 64, 99]);
        assert!(veb.is_empty());
    }

    #[test]
    fn matches_btreeset_under_random_interleaving() {
        let mut rng = StdRng::seed_from_u64(41);
        for round in 0..40 {
            let universe = 1 + rng.random_range(1..600usize);
            let mut veb = Veb::new(universe);
            let mut set = BTreeSet::new();
            for _ in 0..400 {
                if rng.random_bool(0.6) || set.is_empty() {
                    let x = rng.random_range(0..universe) as u32;
                    veb.insert(x);
                    set.insert(x);
                } else {
                    let a = veb.extract_min();
                    let b = set.pop_first();
                    assert_eq!(a, b, "round {round}");
                }
            }
            let rest: Vec<u32> = std::iter::from_fn(|| veb.extract_min()).collect();
            let want: Vec<u32> = set.into_iter().collect();
            assert_eq!(rest, want, "round {round}");
        }
    }

    #[test]
    fn reusable_after_drain() {
        let mut veb = Veb::new(16);
        veb.insert(5);
        veb.insert(2);
        assert_eq!(veb.extract_min(), Some(2));
        assert_eq!(veb.extract_min(), Some(5));
        assert_eq!(veb.extract_min(), None);
        veb.insert(9);
        veb.insert(1);
        assert_eq!(veb.extract_min(), Some(1));
        assert_eq!(veb.extract_min(), Some(9));
    }
}
