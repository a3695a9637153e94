use sha2::{Digest, Sha256};

pub const MAP_SIZE: usize = 1 << 16;

/// Edge hit counters in the AFL style. Counters saturate at 255 and are
/// compared through [`bucket`] classes.
#[derive(Clone, PartialEq, Eq)]
pub struct CoverageMap {
    counts: Box<[u8]>,
    /// Indices with a nonzero counter, in first-hit order.
    touched: Vec<u16>,
}

impl Default for CoverageMap {
    fn default() -> Self {
        CoverageMap { counts: vec![0; MAP_SIZE].into_boxed_slice(), touched: Vec::new() }
    }
}

impl std::fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoverageMap").field("edges", &self.edge_count()).finish()
    }
}

/// Edge index for the transition `prev -> cur` between instruction ids.
pub fn edge_index(prev: u32, cur: u32) -> usize {
    let h = (prev.wrapping_mul(0x9E37_79B1) ^ cur).wrapping_mul(0x85EB_CA6B);
    ((h ^ (h >> 16)) as usize) & (MAP_SIZE - 1)
}

/// Hit-count class: 0 for no hits, then 1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128+.
pub fn bucket(count: u8) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 3,
        4..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        32..=127 => 7,
        _ => 8,
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hit(&mut self, edge: usize) {
        let c = &mut self.counts[edge];
        if *c == 0 {
            self.touched.push(edge as u16);
        }
        *c = c.saturating_add(1);
    }

    pub fn get(&self, edge: usize) -> u8 {
        self.counts[edge]
    }

    pub fn edge_count(&self) -> usize {
        self.touched.len()
    }

    /// Nonzero edges in ascending index order.
    pub fn edges(&self) -> Vec<(usize, u8)> {
        let mut idx: Vec<usize> = self.touched.iter().map(|&e| e as usize).collect();
        idx.sort_unstable();
        idx.into_iter().map(|e| (e, self.counts[e])).collect()
    }

    /// True if some edge of `run` reaches a bucket class this map has not.
    pub fn has_new_bucket(&self, run: &CoverageMap) -> bool {
        run.touched.iter().any(|&e| bucket(run.counts[e as usize]) > bucket(self.counts[e as usize]))
    }

    /// Element-wise max. Returns whether any bucket class grew.
    pub fn merge(&mut self, run: &CoverageMap) -> bool {
        let mut grew = false;
        for &e in &run.touched {
            let e = e as usize;
            let theirs = run.counts[e];
            let mine = self.counts[e];
            if theirs > mine {
                if bucket(theirs) > bucket(mine) {
                    grew = true;
                }
                if mine == 0 {
                    self.touched.push(e as u16);
                }
                self.counts[e] = theirs;
            }
        }
        grew
    }

    /// Hash of the bucketized map; equal for runs that look the same to
    /// novelty checks.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (e, c) in self.edges() {
            h.update((e as u16).to_le_bytes());
            h.update([bucket(c)]);
        }
        h.finalize().into()
    }
}
