//! Identifiers and locators: the `name:device:id` UID naming scheme, the
//! temporary locator (TL) it maps to, and the hash placing both nodes and
//! UID keys on the m-bit identifier circle.

use std::fmt;
use std::net::Ipv4Addr;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Widest supported identifier circle, in bits.
pub const MAX_BITS: u8 = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentError {
    #[error("malformed UID `{0}`: expected three non-empty parts joined by `:`")]
    MalformedUid(String),
}

/// Unique identifier of a node: `name:device:id`.
///
/// All three parts are non-empty and contain no `:`. Whitespace around the
/// separators is tolerated on parse and stripped from the canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Uid {
    name: String,
    device: String,
    id: String,
}

impl Uid {
    pub fn new(name: &str, device: &str, id: &str) -> Result<Self, IdentError> {
        let parts = [name.trim(), device.trim(), id.trim()];
        if parts.iter().any(|p| p.is_empty() || p.contains(':')) {
            return Err(IdentError::MalformedUid(format!("{name}:{device}:{id}")));
        }
        Ok(Uid {
            name: parts[0].to_owned(),
            device: parts[1].to_owned(),
            id: parts[2].to_owned(),
        })
    }

    /// Parses the canonical text form, trimming whitespace around `:`.
    pub fn parse(text: &str) -> Result<Self, IdentError> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(IdentError::MalformedUid(text.to_owned()));
        }
        Uid::new(parts[0], parts[1], parts[2])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn device(&self) -> &str {
        &self.device
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Canonical serialization: the three parts joined by `:`.
    pub fn canonical(&self) -> String {
        format!("{}:{}:{}", self.name, self.device, self.id)
    }
}

impl fmt::Display for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.canonical())
    }
}

/// Temporary locator: the current network address of a node, tagged with the
/// access network that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Locator {
    pub address: Ipv4Addr,
    pub network_id: u16,
}

impl Locator {
    pub fn new(address: Ipv4Addr, network_id: u16) -> Self {
        Locator { address, network_id }
    }
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@net{}", self.address, self.network_id)
    }
}

/// Position on the identifier circle: an m-bit unsigned value, with all
/// arithmetic modulo 2^m.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    value: u128,
    bits: u8,
}

impl NodeId {
    pub fn new(value: u128, bits: u8) -> Self {
        assert!(bits >= 1 && bits <= MAX_BITS, "bits out of range: {bits}");
        NodeId {
            value: value & mask(bits),
            bits,
        }
    }

    pub fn value(self) -> u128 {
        self.value
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    /// `self + k` on the circle.
    pub fn add(self, k: u128) -> NodeId {
        NodeId::new(self.value.wrapping_add(k), self.bits)
    }

    /// Clockwise distance from `self` to `to`.
    pub fn distance_to(self, to: NodeId) -> u128 {
        debug_assert_eq!(self.bits, to.bits);
        to.value.wrapping_sub(self.value) & mask(self.bits)
    }

    /// Start of finger `k` (1-based): `self + 2^(k-1)`.
    pub fn finger_start(self, k: usize) -> NodeId {
        debug_assert!(k >= 1 && k as u32 <= self.bits as u32);
        self.add(1u128 << (k - 1))
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.value)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

fn mask(bits: u8) -> u128 {
    if bits as u32 >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

/// Places a UID key on the m-bit circle: SHA-256 of the canonical form,
/// truncated to the low m bits.
///
/// For m' < m the result is the low m' bits of the m-bit value, so scenario
/// and test circle sizes stay mutually consistent.
pub fn hash_to_id(uid: &Uid, bits: u8) -> NodeId {
    hash_text_to_id(&uid.canonical(), bits)
}

/// Same digest-and-truncate placement for arbitrary text (node addresses).
pub fn hash_text_to_id(text: &str, bits: u8) -> NodeId {
    let digest = Sha256::digest(text.as_bytes());
    let mut low = [0u8; 16];
    low.copy_from_slice(&digest[16..32]);
    NodeId::new(u128::from_be_bytes(low), bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_paper_example() {
        let uid = Uid::parse("xyz:laptop:17301xxxx").unwrap();
        assert_eq!(uid.name(), "xyz");
        assert_eq!(uid.device(), "laptop");
        assert_eq!(uid.id(), "17301xxxx");
    }

    #[test]
    fn parse_trims_whitespace_to_canonical() {
        let uid = Uid::parse("xyz: laptop: 17301xxxx").unwrap();
        assert_eq!(uid.canonical(), "xyz:laptop:17301xxxx");
    }

    #[test]
    fn round_trips_canonical_form() {
        let uid = Uid::parse("a:b:c").unwrap();
        assert_eq!(uid.canonical(), "a:b:c");
        assert_eq!(Uid::parse(&uid.canonical()).unwrap(), uid);
    }

    #[test]
    fn rejects_missing_part() {
        assert!(matches!(
            Uid::parse("xyz:laptop"),
            Err(IdentError::MalformedUid(_))
        ));
    }

    #[test]
    fn rejects_empty_part_and_extra_separator() {
        assert!(Uid::parse("a::c").is_err());
        assert!(Uid::parse("a:b:c:d").is_err());
        assert!(Uid::parse("").is_err());
    }

    #[test]
    fn hash_is_deterministic_and_in_range() {
        let uid = Uid::parse("xyz:laptop:17301xxxx").unwrap();
        assert_eq!(hash_to_id(&uid, 5), hash_to_id(&uid, 5));
        for i in 0..1000 {
            let u = Uid::new("n", "d", &format!("{i}")).unwrap();
            assert!(hash_to_id(&u, 5).value() < 32);
        }
    }

    #[test]
    fn collision_count_matches_birthday_oracle() {
        // 1000 random UIDs at m=16; brute-force pairwise comparison gives the
        // observed collision count, checked against the birthday bound.
        let bits = 16u8;
        let ids: Vec<u128> = (0..1000)
            .map(|i| {
                hash_to_id(&Uid::new("user", "dev", &format!("{i:04}")).unwrap(), bits).value()
            })
            .collect();
        let mut collisions = 0u64;
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                if ids[i] == ids[j] {
                    collisions += 1;
                }
            }
        }
        let pairs = (1000.0 * 999.0) / 2.0;
        let p = 1.0 / f64::from(1u32 << bits);
        let mean = pairs * p;
        let sigma = (pairs * p * (1.0 - p)).sqrt();
        let deviation = (collisions as f64 - mean).abs();
        assert!(
            deviation <= 3.0 * sigma,
            "collisions {collisions} vs expected {mean:.2} +- {:.2}",
            3.0 * sigma
        );
    }

    proptest! {
        #[test]
        fn parse_serialize_identity(name in "[a-z]{1,8}", dev in "[a-z]{1,8}", id in "[0-9]{1,10}") {
            let uid = Uid::new(&name, &dev, &id).unwrap();
            prop_assert_eq!(Uid::parse(&uid.canonical()).unwrap(), uid);
        }

        #[test]
        fn low_bit_truncation_consistency(id in "[0-9]{1,10}", small in 1u8..16, extra in 0u8..32) {
            let uid = Uid::new("n", "d", &id).unwrap();
            let big = small + extra;
            let wide = hash_to_id(&uid, big);
            let narrow = hash_to_id(&uid, small);
            prop_assert_eq!(narrow.value(), wide.value() & ((1u128 << small) - 1));
        }
    }
}
