//! Lexicographically sortable run ids: 48-bit millisecond time followed by
//! 80 random bits, written as 26 Crockford base-32 characters.

use std::sync::Mutex;

use rand::Rng;

const ALPHABET: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

fn encode(value: u128) -> String {
    (0..26)
        .rev()
        .map(|i| ALPHABET[((value >> (i * 5)) & 0x1f) as usize] as char)
        .collect()
}

/// Generator that stays strictly increasing within one millisecond by
/// incrementing the random part.
#[derive(Debug, Default)]
pub struct IdGenerator {
    last: Mutex<(u64, u128)>,
}

impl IdGenerator {
    pub fn next_id(&self) -> String {
        let now = chrono::Utc::now().timestamp_millis().max(0) as u64;
        self.next_at(now)
    }

    pub fn next_at(&self, millis: u64) -> String {
        let mut last = self.last.lock().unwrap_or_else(|p| p.into_inner());
        let (ms, random) = if millis <= last.0 {
            (last.0, (last.1 + 1) & ((1u128 << 80) - 1))
        } else {
            (millis, rand::rng().random::<u128>() & ((1u128 << 79) - 1))
        };
        *last = (ms, random);
        encode((u128::from(ms & ((1 << 48) - 1)) << 80) | random)
    }
}
