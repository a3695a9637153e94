//! Thread-choice policies.
//!
//! When the current thread blocks or finishes the scheduler picks among the
//! runnable threads, round-robin by default. Other switches are taken at
//! active delay points or, for segment replay, before any counted
//! instruction.

/// Schedule bytes below this value preempt: a 25% chance per random byte.
pub const PREEMPT_BELOW: u8 = 64;

pub trait Scheduler {
    /// At an active delay point of `cur`. `runnable` is sorted and includes
    /// `cur` when it can continue. Returns the thread to run next and the
    /// virtual delay charged to `cur`, or `None` to keep going.
    fn delay_point(&mut self, cur: usize, runnable: &[usize]) -> Option<(usize, u64)>;

    /// Before a counted instruction of `cur`.
    fn before_instruction(&mut self, _cur: usize, _runnable: &[usize]) -> Option<usize> {
        None
    }

    /// After `tid` executed a counted instruction.
    fn counted(&mut self, _tid: usize) {}

    /// `from` cannot continue; picks one of `runnable` (sorted, nonempty).
    /// The default is `next`, the round-robin successor.
    fn forced_switch(&mut self, _from: usize, next: usize, _runnable: &[usize]) -> usize {
        next
    }
}

/// Reads decisions from the schedule region of a fuzzer input.
///
/// Per active delay point: one byte `b`; if `b < 64`, one byte picks the
/// next thread (index modulo the runnable count) and two little-endian
/// bytes give the delay. Exhausted input never preempts.
pub struct ByteScheduler<'a> {
    bytes: &'a [u8],
    cursor: usize,
    delay_min: u64,
    delay_max: u64,
    /// Every delay drawn, in order.
    pub delays: Vec<u64>,
}

impl<'a> ByteScheduler<'a> {
    pub fn new(bytes: &'a [u8], delay_min: u64, delay_max: u64) -> Self {
        ByteScheduler { bytes, cursor: 0, delay_min, delay_max: delay_max.max(delay_min), delays: Vec::new() }
    }

    fn next(&mut self) -> Option<u8> {
        let b = self.bytes.get(self.cursor).copied();
        if b.is_some() {
            self.cursor += 1;
        }
        b
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }
}

impl Scheduler for ByteScheduler<'_> {
    fn delay_point(&mut self, cur: usize, runnable: &[usize]) -> Option<(usize, u64)> {
        let b = self.next()?;
        if b >= PREEMPT_BELOW {
            return None;
        }
        let choice = self.next()?;
        let lo = self.next().unwrap_or(0);
        let hi = self.next().unwrap_or(0);
        let raw = u16::from_le_bytes([lo, hi]) as u64;
        let span = self.delay_max - self.delay_min + 1;
        let delay = self.delay_min + raw % span;
        self.delays.push(delay);
        let to = if runnable.is_empty() { cur } else { runnable[choice as usize % runnable.len()] };
        Some((to, delay))
    }
}

/// Follows a list of `(thread, counted steps)` segments.
///
/// In replay mode it switches before the first counted instruction past the
/// end of a segment. In recording mode it only switches at delay points and
/// writes the schedule bytes that make a [`ByteScheduler`] do the same.
pub struct SegmentScheduler {
    segments: Vec<(usize, u64)>,
    index: usize,
    used: u64,
    record: Option<Vec<u8>>,
    /// Set when the machine's forced switches disagree with the segments.
    pub diverged: bool,
}

impl SegmentScheduler {
    pub fn replay(segments: Vec<(usize, u64)>) -> Self {
        SegmentScheduler { segments, index: 0, used: 0, record: None, diverged: false }
    }

    pub fn recording(segments: Vec<(usize, u64)>) -> Self {
        SegmentScheduler { record: Some(Vec::new()), ..Self::replay(segments) }
    }

    pub fn recorded(&self) -> &[u8] {
        self.record.as_deref().unwrap_or(&[])
    }

    fn exhausted(&self) -> bool {
        self.segments.get(self.index).is_none_or(|&(_, n)| self.used >= n)
    }

    fn next_thread(&self) -> Option<usize> {
        self.segments.get(self.index + 1).map(|&(t, _)| t)
    }

    fn advance(&mut self) {
        self.index += 1;
        self.used = 0;
    }
}

impl Scheduler for SegmentScheduler {
    fn delay_point(&mut self, _cur: usize, runnable: &[usize]) -> Option<(usize, u64)> {
        let target = if self.exhausted() { self.next_thread() } else { None };
        let pos = target.and_then(|t| runnable.iter().position(|&r| r == t));
        let rec = self.record.as_mut()?;
        match (target, pos) {
            (Some(t), Some(p)) => {
                rec.extend_from_slice(&[0, p as u8, 0, 0]);
                self.advance();
                Some((t, 0))
            }
            (Some(_), None) => {
                self.diverged = true;
                rec.push(255);
                None
            }
            _ => {
                rec.push(255);
                None
            }
        }
    }

    fn before_instruction(&mut self, _cur: usize, runnable: &[usize]) -> Option<usize> {
        if self.record.is_some() || !self.exhausted() {
            return None;
        }
        let t = self.next_thread()?;
        if !runnable.contains(&t) {
            self.diverged = true;
            return None;
        }
        self.advance();
        Some(t)
    }

    fn counted(&mut self, _tid: usize) {
        self.used += 1;
    }

    fn forced_switch(&mut self, _from: usize, next: usize, runnable: &[usize]) -> usize {
        match self.next_thread() {
            Some(t) if runnable.contains(&t) => {
                self.advance();
                t
            }
            _ => {
                self.diverged = true;
                next
            }
        }
    }
}
