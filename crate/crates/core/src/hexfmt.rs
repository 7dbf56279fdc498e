//! Lowercase hex, two characters per byte, byte 0 first. A leading `0x` is
//! accepted on input.

use crate::error::{Error, Result};

pub fn decode(s: &str) -> Result<Vec<u8>> {
    let s = s.trim();
    let s = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    hex::decode(s).map_err(|e| Error::InvalidHex(format!("{s:?}: {e}")))
}

pub fn decode_exact(s: &str, len: usize) -> Result<Vec<u8>> {
    let v = decode(s)?;
    if v.len() != len {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: v.len(),
        });
    }
    Ok(v)
}

pub fn encode(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(bytes)
}

/// Serde adapter storing byte strings as lowercase hex.
pub mod serde_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        super::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_and_case() {
        assert_eq!(decode("0xABcd").unwrap(), vec![0xab, 0xcd]);
        assert_eq!(encode([0xab, 0x01]), "ab01");
        assert!(decode("abc").is_err());
        assert!(decode_exact("abcd", 3).is_err());
    }
}
