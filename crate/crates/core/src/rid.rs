//! Record identifiers.
//!
//! A [`Rid`] is a 64-bit counter rendered in Crockford-style base-32
//! (no `I`, `L`, `O`, `U`) and grouped in four-character chunks from the
//! right, e.g. `2-A4F6`. The zero-padded [`Rid::canonical`] form sorts
//! lexicographically in mint order.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub(crate) const ALPHABET: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

/// Width of the canonical (zero-padded, undashed) form. 16 digits cover 80 bits.
pub const CANONICAL_WIDTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rid(u64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed RID {0:?}")]
pub struct RidParseError(pub String);

pub(crate) fn encode_base32(mut value: u64) -> String {
    if value == 0 {
        return "0".to_string();
    }
    let mut digits = Vec::with_capacity(13);
    while value > 0 {
        digits.push(ALPHABET[(value % 32) as usize]);
        value /= 32;
    }
    digits.reverse();
    String::from_utf8(digits).expect("alphabet is ascii")
}

pub(crate) fn decode_digit(c: u8) -> Option<u64> {
    ALPHABET.iter().position(|&a| a == c).map(|p| p as u64)
}

impl Rid {
    pub fn from_counter(counter: u64) -> Self {
        Rid(counter)
    }

    pub fn counter(self) -> u64 {
        self.0
    }

    /// Zero-padded, undashed form used for ordering and storage keys.
    pub fn canonical(self) -> String {
        let digits = encode_base32(self.0);
        format!("{digits:0>width$}", width = CANONICAL_WIDTH)
    }
}

impl fmt::Display for Rid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = encode_base32(self.0);
        let head = digits.len() % 4;
        let mut groups: Vec<&str> = Vec::new();
        if head > 0 {
            groups.push(&digits[..head]);
        }
        let mut i = head;
        while i < digits.len() {
            groups.push(&digits[i..i + 4]);
            i += 4;
        }
        write!(f, "{}", groups.join("-"))
    }
}

impl FromStr for Rid {
    type Err = RidParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || RidParseError(s.to_string());
        let groups: Vec<&str> = s.split('-').collect();
        if groups.is_empty() || groups.len() > 4 {
            return Err(err());
        }
        for (i, g) in groups.iter().enumerate() {
            let ok_len = if i == 0 { (1..=4).contains(&g.len()) } else { g.len() == 4 };
            if !ok_len {
                return Err(err());
            }
        }
        let mut value: u64 = 0;
        for c in groups.concat().bytes() {
            let d = decode_digit(c).ok_or_else(err)?;
            value = value.checked_mul(32).and_then(|v| v.checked_add(d)).ok_or_else(err)?;
        }
        let rid = Rid(value);
        // reject leading zeros and other non-canonical spellings
        if rid.to_string() != s {
            return Err(err());
        }
        Ok(rid)
    }
}

impl Serialize for Rid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Monotonic counter shared by everything that mints identifiers in a lake.
#[derive(Debug, Default)]
pub struct RidMinter {
    last: AtomicU64,
}

impl RidMinter {
    pub fn starting_after(last: u64) -> Self {
        RidMinter { last: AtomicU64::new(last) }
    }

    pub fn mint(&self) -> Rid {
        Rid(self.mint_counter())
    }

    pub(crate) fn mint_counter(&self) -> u64 {
        self.last.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn last(&self) -> u64 {
        self.last.load(Ordering::SeqCst)
    }

    /// Raises the counter so later mints never collide with `seen`.
    pub fn observe(&self, seen: u64) {
        self.last.fetch_max(seen, Ordering::SeqCst);
    }
}
