//! Hash backends used for block headers, payload commitments and sortition.
//!
//! All three backends produce 32-byte digests. SHAKE-256 is an extendable
//! output function; it is read to exactly 32 bytes here.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::{Sha3_256, Shake256};

/// A 32-byte digest. Compared and ordered as a big-endian integer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash256(pub [u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_be(&self.0)
    }

    /// Short prefix for logs and traces.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", self.short())
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Hash256 {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Hash256(out))
    }
}

impl Serialize for Hash256 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Hash256 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HashAlgo {
    DoubleSha256,
    Sha3_256,
    Shake256,
}

impl HashAlgo {
    pub const ALL: [HashAlgo; 3] = [HashAlgo::DoubleSha256, HashAlgo::Sha3_256, HashAlgo::Shake256];

    pub fn name(self) -> &'static str {
        match self {
            HashAlgo::DoubleSha256 => "DOUBLE_SHA256",
            HashAlgo::Sha3_256 => "SHA3_256",
            HashAlgo::Shake256 => "SHAKE_256",
        }
    }
}

impl fmt::Display for HashAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn digest(algo: HashAlgo, message: &[u8]) -> Hash256 {
    let mut out = [0u8; 32];
    match algo {
        HashAlgo::DoubleSha256 => {
            let first = Sha256::digest(message);
            out.copy_from_slice(&Sha256::digest(first));
        }
        HashAlgo::Sha3_256 => {
            out.copy_from_slice(&sha3::Digest::finalize(<Sha3_256 as sha3::Digest>::new_with_prefix(message)));
        }
        HashAlgo::Shake256 => {
            let mut hasher = Shake256::default();
            hasher.update(message);
            hasher.finalize_xof().read(&mut out);
        }
    }
    Hash256(out)
}

/// Digest of several byte slices concatenated.
pub fn digest_parts(algo: HashAlgo, parts: &[&[u8]]) -> Hash256 {
    let total = parts.iter().map(|p| p.len()).sum();
    let mut buf = Vec::with_capacity(total);
    for p in parts {
        buf.extend_from_slice(p);
    }
    digest(algo, &buf)
}

/// `true` iff the digest, read as a 256-bit big-endian integer, is `<= target`.
pub fn meets_target(digest: &Hash256, target: &BigUint) -> bool {
    digest.to_biguint() <= *target
}

/// Endless stream of big-endian `u64` words squeezed from SHAKE-256.
pub struct ShakeStream {
    reader: <Shake256 as ExtendableOutput>::Reader,
}

impl ShakeStream {
    pub fn new(seed: &[u8]) -> Self {
        let mut hasher = Shake256::default();
        hasher.update(seed);
        ShakeStream { reader: hasher.finalize_xof() }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut word = [0u8; 8];
        self.reader.read(&mut word);
        u64::from_be_bytes(word)
    }
}
