use serde::{Deserialize, Serialize};

/// A fuzzer input: a 4-byte little-endian header giving the value-region
/// length, then the value region (4 bytes per NONDET), then schedule bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeedInput {
    pub bytes: Vec<u8>,
}

pub const HEADER_LEN: usize = 4;
pub const MIN_LEN: usize = 5;

impl SeedInput {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        SeedInput { bytes }
    }

    pub fn from_parts(values: &[i32], schedule: &[u8]) -> Self {
        let mut bytes = Vec::with_capacity(HEADER_LEN + values.len() * 4 + schedule.len());
        bytes.extend_from_slice(&((values.len() * 4) as u32).to_le_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(schedule);
        let mut s = SeedInput { bytes };
        s.repair();
        s
    }

    /// Declared value-region length, clamped to what is actually present.
    pub fn value_region_len(&self) -> usize {
        if self.bytes.len() < HEADER_LEN {
            return 0;
        }
        let declared = u32::from_le_bytes(self.bytes[..HEADER_LEN].try_into().unwrap()) as usize;
        declared.min(self.bytes.len() - HEADER_LEN)
    }

    pub fn value_region(&self) -> &[u8] {
        let n = self.value_region_len();
        if n == 0 {
            return &[];
        }
        &self.bytes[HEADER_LEN..HEADER_LEN + n]
    }

    pub fn schedule_region(&self) -> &[u8] {
        let start = (HEADER_LEN + self.value_region_len()).min(self.bytes.len());
        &self.bytes[start..]
    }

    /// Values as the executor reads them; a trailing partial word is ignored.
    pub fn values(&self) -> Vec<i32> {
        self.value_region()
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        if self.bytes.len() < MIN_LEN {
            return false;
        }
        let declared = u32::from_le_bytes(self.bytes[..HEADER_LEN].try_into().unwrap()) as usize;
        declared <= self.bytes.len() - HEADER_LEN
    }

    /// Pads to the minimum length and clamps the header.
    pub fn repair(&mut self) {
        while self.bytes.len() < MIN_LEN {
            self.bytes.push(0xFF);
        }
        let n = self.value_region_len() as u32;
        self.bytes[..HEADER_LEN].copy_from_slice(&n.to_le_bytes());
    }

    pub fn set_value_region_len(&mut self, n: usize) {
        self.bytes[..HEADER_LEN].copy_from_slice(&(n as u32).to_le_bytes());
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}
