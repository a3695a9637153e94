//! Deterministic and havoc mutations. Neither touches the header directly;
//! havoc keeps it consistent when it resizes the value region.

use rand::Rng;

use super::input::{SeedInput, HEADER_LEN, MIN_LEN};

pub const INTERESTING_BYTES: [u8; 5] = [0, 1, 0xFF, 127, 128];
pub const INTERESTING_WORDS: [i32; 5] = [0, 300, i16::MAX as i32, i32::MAX, i32::MIN];
pub const ARITH_MAX: u8 = 35;
/// Havoc never grows an input past this.
pub const MAX_LEN: usize = 4096;
pub const HAVOC_MAX_OPS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Flip1,
    Flip2,
    Flip4,
    FlipByte,
    Arith,
    ByteValue,
    WordValue,
    Done,
}

/// Walks the deterministic mutants of one input lazily, in a fixed order:
/// 1-, 2- and 4-bit flips at every bit offset (most significant bit of each
/// byte first), byte flips, `±1..=35` per byte, interesting bytes, then
/// interesting words at aligned offsets of the value region.
#[derive(Debug, Clone)]
pub struct DeterministicStage {
    base: SeedInput,
    stage: Stage,
    pos: usize,
    sub: usize,
}

impl DeterministicStage {
    pub fn new(base: SeedInput) -> Self {
        DeterministicStage { base, stage: Stage::Flip1, pos: 0, sub: 0 }
    }

    fn body_len(&self) -> usize {
        self.base.len().saturating_sub(HEADER_LEN)
    }

    fn next_stage(&mut self) {
        self.stage = match self.stage {
            Stage::Flip1 => Stage::Flip2,
            Stage::Flip2 => Stage::Flip4,
            Stage::Flip4 => Stage::FlipByte,
            Stage::FlipByte => Stage::Arith,
            Stage::Arith => Stage::ByteValue,
            Stage::ByteValue => Stage::WordValue,
            Stage::WordValue | Stage::Done => Stage::Done,
        };
        self.pos = 0;
        self.sub = 0;
    }

    /// Flips `width` consecutive bits starting at bit `pos`, counting from
    /// the most significant bit of the first body byte.
    fn flip_bits(&self, pos: usize, width: usize) -> SeedInput {
        let mut out = self.base.clone();
        for b in pos..pos + width {
            out.bytes[HEADER_LEN + b / 8] ^= 0x80 >> (b % 8);
        }
        out
    }

    fn with_byte(&self, at: usize, f: impl FnOnce(u8) -> u8) -> SeedInput {
        let mut out = self.base.clone();
        let b = &mut out.bytes[HEADER_LEN + at];
        *b = f(*b);
        out
    }
}

impl Iterator for DeterministicStage {
    type Item = SeedInput;

    fn next(&mut self) -> Option<SeedInput> {
        let n = self.body_len();
        loop {
            match self.stage {
                Stage::Flip1 | Stage::Flip2 | Stage::Flip4 => {
                    let width = match self.stage {
                        Stage::Flip1 => 1,
                        Stage::Flip2 => 2,
                        _ => 4,
                    };
                    if self.pos + width > 8 * n {
                        self.next_stage();
                        continue;
                    }
                    let out = self.flip_bits(self.pos, width);
                    self.pos += 1;
                    return Some(out);
                }
                Stage::FlipByte => {
                    if self.pos >= n {
                        self.next_stage();
                        continue;
                    }
                    let out = self.with_byte(self.pos, |b| !b);
                    self.pos += 1;
                    return Some(out);
                }
                Stage::Arith => {
                    // sub walks +1, -1, +2, -2, ... +35, -35
                    if self.pos >= n {
                        self.next_stage();
                        continue;
                    }
                    let delta = (self.sub / 2 + 1) as u8;
                    let up = self.sub.is_multiple_of(2);
                    let out = self.with_byte(self.pos, |b| if up { b.wrapping_add(delta) } else { b.wrapping_sub(delta) });
                    self.sub += 1;
                    if self.sub == 2 * ARITH_MAX as usize {
                        self.sub = 0;
                        self.pos += 1;
                    }
                    return Some(out);
                }
                Stage::ByteValue => {
                    if self.pos >= n {
                        self.next_stage();
                        continue;
                    }
                    let v = INTERESTING_BYTES[self.sub];
                    let out = self.with_byte(self.pos, |_| v);
                    self.sub += 1;
                    if self.sub == INTERESTING_BYTES.len() {
                        self.sub = 0;
                        self.pos += 1;
                    }
                    return Some(out);
                }
                Stage::WordValue => {
                    let words = self.base.value_region_len() / 4;
                    if self.pos >= words {
                        self.next_stage();
                        continue;
                    }
                    let mut out = self.base.clone();
                    let at = HEADER_LEN + 4 * self.pos;
                    out.bytes[at..at + 4].copy_from_slice(&INTERESTING_WORDS[self.sub].to_le_bytes());
                    self.sub += 1;
                    if self.sub == INTERESTING_WORDS.len() {
                        self.sub = 0;
                        self.pos += 1;
                    }
                    return Some(out);
                }
                Stage::Done => return None,
            }
        }
    }
}

pub fn deterministic_stage(t: &SeedInput) -> DeterministicStage {
    DeterministicStage::new(t.clone())
}

/// Applies 1 to 16 stacked random operations to the body of `t`.
pub fn havoc_stage(t: &SeedInput, rng: &mut impl Rng) -> SeedInput {
    let mut out = t.clone();
    out.repair();
    let ops = rng.random_range(1..=HAVOC_MAX_OPS);
    for _ in 0..ops {
        havoc_op(&mut out, rng);
    }
    out.repair();
    out
}

fn havoc_op(s: &mut SeedInput, rng: &mut impl Rng) {
    let body = s.len() - HEADER_LEN;
    let at = HEADER_LEN + rng.random_range(0..body);
    match rng.random_range(0..7u8) {
        0 => {
            let bit = rng.random_range(0..8);
            s.bytes[at] ^= 0x80 >> bit;
        }
        1 => s.bytes[at] = rng.random(),
        2 => {
            let delta = rng.random_range(1..=ARITH_MAX);
            s.bytes[at] = if rng.random() { s.bytes[at].wrapping_add(delta) } else { s.bytes[at].wrapping_sub(delta) };
        }
        3 => s.bytes[at] = INTERESTING_BYTES[rng.random_range(0..INTERESTING_BYTES.len())],
        4 => {
            if s.len() <= MIN_LEN {
                return;
            }
            let max = (s.len() - MIN_LEN).min(body).min(s.len() - at);
            let n = rng.random_range(1..=max);
            splice(s, at, n, &[]);
        }
        5 => {
            let room = MAX_LEN.saturating_sub(s.len());
            if room == 0 {
                return;
            }
            let from = HEADER_LEN + rng.random_range(0..body);
            let n = rng.random_range(1..=(s.len() - from).min(room).min(32));
            let chunk = s.bytes[from..from + n].to_vec();
            splice(s, at, 0, &chunk);
        }
        _ => {
            let word = INTERESTING_WORDS[rng.random_range(0..INTERESTING_WORDS.len())].to_le_bytes();
            let words = s.value_region_len() / 4;
            let start = if words > 0 { HEADER_LEN + 4 * rng.random_range(0..words) } else { at };
            for (i, b) in word.iter().enumerate() {
                if let Some(slot) = s.bytes.get_mut(start + i) {
                    *slot = *b;
                }
            }
        }
    }
}

/// Replaces `n` bytes at `at` with `insert`, moving the value/schedule
/// boundary with whatever part of the edit falls inside the value region.
fn splice(s: &mut SeedInput, at: usize, n: usize, insert: &[u8]) {
    let boundary = HEADER_LEN + s.value_region_len();
    let removed_inside = boundary.saturating_sub(at).min(n);
    let mut vlen = s.value_region_len() - removed_inside;
    if at < boundary {
        vlen += insert.len();
    }
    s.bytes.splice(at..at + n, insert.iter().copied());
    s.set_value_region_len(vlen);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_byte(b: u8) -> SeedInput {
        SeedInput::from_bytes(vec![0, 0, 0, 0, b])
    }

    #[test]
    fn first_flip_is_most_significant_bit() {
        let first = deterministic_stage(&one_byte(0)).next().unwrap();
        assert_eq!(first.bytes, vec![0, 0, 0, 0, 0x80]);
    }

    #[test]
    fn single_bit_flips_come_first() {
        let s = SeedInput::from_parts(&[7], &[255, 3, 9]);
        let n = s.len() - HEADER_LEN;
        let mutants: Vec<SeedInput> = deterministic_stage(&s).collect();
        for m in &mutants[..8 * n] {
            let diff: u32 = m.bytes.iter().zip(&s.bytes).map(|(a, b)| (a ^ b).count_ones()).sum();
            assert_eq!(diff, 1);
        }
        let next = &mutants[8 * n];
        let diff: u32 = next.bytes.iter().zip(&s.bytes).map(|(a, b)| (a ^ b).count_ones()).sum();
        assert_eq!(diff, 2);
    }

    #[test]
    fn stage_counts() {
        let s = SeedInput::from_parts(&[1, 2], &[255; 3]);
        let n = s.len() - HEADER_LEN;
        let expected = 8 * n + (8 * n - 1) + (8 * n - 3) + n + 70 * n + 5 * n + 2 * 5;
        assert_eq!(deterministic_stage(&s).count(), expected);
    }

    #[test]
    fn header_is_never_touched() {
        let s = SeedInput::from_parts(&[-5, 300], &[1, 2, 3]);
        assert!(deterministic_stage(&s).all(|m| m.bytes[..HEADER_LEN] == s.bytes[..HEADER_LEN] && m.len() == s.len()));
    }

    #[test]
    fn arithmetic_reaches_neighbour() {
        let s = SeedInput::from_parts(&[299], &[]);
        assert!(deterministic_stage(&s).any(|m| m.values() == vec![300]));
    }

    #[test]
    fn word_substitution_hits_value_region() {
        let s = SeedInput::from_parts(&[5], &[255]);
        let words: Vec<i32> = deterministic_stage(&s).map(|m| m.values()[0]).collect();
        for w in INTERESTING_WORDS {
            assert!(words.contains(&w));
        }
    }

    #[test]
    fn havoc_is_reproducible() {
        let s = SeedInput::from_parts(&[1, 2, 3], &[255; 16]);
        let a: Vec<SeedInput> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| havoc_stage(&s, &mut rng)).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b: Vec<SeedInput> = (0..50).map(|_| havoc_stage(&s, &mut rng)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn havoc_valid_on_64_byte_seed() {
        let s = SeedInput::from_parts(&[10, 20, 30, 40], &[255; 44]);
        assert_eq!(s.len(), 64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let valid = (0..10_000).filter(|_| havoc_stage(&s, &mut rng).is_valid()).count();
        assert_eq!(valid, 10_000);
    }

    #[test]
    fn splice_moves_boundary() {
        let mut s = SeedInput::from_parts(&[1, 2], &[9, 9]);
        splice(&mut s, HEADER_LEN + 2, 4, &[]);
        assert_eq!(s.value_region_len(), 4);
        assert_eq!(s.schedule_region(), &[9, 9]);
        splice(&mut s, HEADER_LEN, 0, &[7, 7]);
        assert_eq!(s.value_region_len(), 6);
        assert_eq!(s.schedule_region(), &[9, 9]);
    }

    proptest! {
        #[test]
        fn havoc_output_valid(bytes in proptest::collection::vec(any::<u8>(), 0..200), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = havoc_stage(&SeedInput::from_bytes(bytes), &mut rng);
            prop_assert!(out.is_valid());
            prop_assert!(out.len() >= MIN_LEN && out.len() <= MAX_LEN.max(200));
        }

        #[test]
        fn deterministic_mutants_keep_length(vals in proptest::collection::vec(any::<i32>(), 0..3), sched in proptest::collection::vec(any::<u8>(), 1..6)) {
            let s = SeedInput::from_parts(&vals, &sched);
            for m in deterministic_stage(&s) {
                prop_assert_eq!(m.len(), s.len());
                prop_assert!(m.is_valid());
            }
        }
    }
}
