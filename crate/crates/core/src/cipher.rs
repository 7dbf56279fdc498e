//! Keyed block permutations: AES-128, AES-256, and a small-block Feistel
//! toy cipher that makes birthday-bound collisions reachable on a desk.

use std::fmt;
use std::str::FromStr;

use aes::cipher::{generic_array::GenericArray, BlockDecrypt, BlockEncrypt, KeyInit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf::FieldSpec;

pub trait BlockCipher: Send + Sync {
    fn block_bytes(&self) -> usize;

    /// Encrypts one block in place. `block.len()` must equal
    /// [`block_bytes`](Self::block_bytes); implementations may panic otherwise.
    fn encrypt_raw(&self, block: &mut [u8]);

    fn decrypt_raw(&self, block: &mut [u8]);

    fn block_bits(&self) -> usize {
        self.block_bytes() * 8
    }

    fn field(&self) -> FieldSpec {
        FieldSpec::for_block_bytes(self.block_bytes()).expect("supported block width")
    }

    fn encrypt_block(&self, p: &[u8]) -> Result<Vec<u8>> {
        self.check_width(p.len())?;
        let mut out = p.to_vec();
        self.encrypt_raw(&mut out);
        Ok(out)
    }

    fn decrypt_block(&self, c: &[u8]) -> Result<Vec<u8>> {
        self.check_width(c.len())?;
        let mut out = c.to_vec();
        self.decrypt_raw(&mut out);
        Ok(out)
    }

    fn check_width(&self, len: usize) -> Result<()> {
        if len != self.block_bytes() {
            return Err(Error::LengthMismatch {
                expected: self.block_bytes(),
                actual: len,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CipherKind {
    Aes128,
    Aes256,
    Toy16,
    Toy24,
    Toy32,
}

impl CipherKind {
    pub fn key_bytes(self) -> usize {
        match self {
            CipherKind::Aes128 => 16,
            CipherKind::Aes256 => 32,
            CipherKind::Toy16 | CipherKind::Toy24 | CipherKind::Toy32 => 8,
        }
    }

    pub fn block_bytes(self) -> usize {
        match self {
            CipherKind::Aes128 | CipherKind::Aes256 => 16,
            CipherKind::Toy16 => 2,
            CipherKind::Toy24 => 3,
            CipherKind::Toy32 => 4,
        }
    }

    pub fn is_toy(self) -> bool {
        matches!(
            self,
            CipherKind::Toy16 | CipherKind::Toy24 | CipherKind::Toy32
        )
    }

    pub fn toy(width_bits: usize) -> Result<Self> {
        match width_bits {
            16 => Ok(CipherKind::Toy16),
            24 => Ok(CipherKind::Toy24),
            32 => Ok(CipherKind::Toy32),
            w => Err(Error::UnsupportedWidth(w)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CipherKind::Aes128 => "aes128",
            CipherKind::Aes256 => "aes256",
            CipherKind::Toy16 => "toy16",
            CipherKind::Toy24 => "toy24",
            CipherKind::Toy32 => "toy32",
        }
    }
}

impl fmt::Display for CipherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CipherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aes128" => Ok(CipherKind::Aes128),
            "aes256" => Ok(CipherKind::Aes256),
            "toy16" => Ok(CipherKind::Toy16),
            "toy24" => Ok(CipherKind::Toy24),
            "toy32" => Ok(CipherKind::Toy32),
            other => Err(Error::InvalidKey(format!("unknown cipher {other:?}"))),
        }
    }
}

/// Any of the supported ciphers, keyed. Kept unboxed: it is built once per
/// key and sits on the per-block path.
#[derive(Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Cipher {
    Aes128(aes::Aes128),
    Aes256(aes::Aes256),
    Toy(ToyCipher),
}

impl Cipher {
    pub fn new(kind: CipherKind, key: &[u8]) -> Result<Self> {
        if key.len() != kind.key_bytes() {
            return Err(Error::InvalidKey(format!(
                "{kind} needs a {}-byte key, got {} bytes",
                kind.key_bytes(),
                key.len()
            )));
        }
        Ok(match kind {
            CipherKind::Aes128 => Cipher::Aes128(aes::Aes128::new(GenericArray::from_slice(key))),
            CipherKind::Aes256 => Cipher::Aes256(aes::Aes256::new(GenericArray::from_slice(key))),
            toy => {
                let seed = u64::from_be_bytes(key.try_into().expect("checked length"));
                Cipher::Toy(ToyCipher::new(seed, toy.block_bytes() * 8)?)
            }
        })
    }

    pub fn from_hex(kind: CipherKind, key_hex: &str) -> Result<Self> {
        let key = crate::hexfmt::decode_exact(key_hex, kind.key_bytes())?;
        Cipher::new(kind, &key)
    }
}

impl fmt::Debug for Cipher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Cipher::Aes128(_) => "aes128",
            Cipher::Aes256(_) => "aes256",
            Cipher::Toy(t) => return write!(f, "Cipher(toy{})", t.width_bits),
        };
        write!(f, "Cipher({name})")
    }
}

impl BlockCipher for Cipher {
    fn block_bytes(&self) -> usize {
        match self {
            Cipher::Aes128(_) | Cipher::Aes256(_) => 16,
            Cipher::Toy(t) => t.block_bytes(),
        }
    }

    fn encrypt_raw(&self, block: &mut [u8]) {
        match self {
            Cipher::Aes128(c) => c.encrypt_block(GenericArray::from_mut_slice(block)),
            Cipher::Aes256(c) => c.encrypt_block(GenericArray::from_mut_slice(block)),
            Cipher::Toy(t) => t.encrypt_raw(block),
        }
    }

    fn decrypt_raw(&self, block: &mut [u8]) {
        match self {
            Cipher::Aes128(c) => c.decrypt_block(GenericArray::from_mut_slice(block)),
            Cipher::Aes256(c) => c.decrypt_block(GenericArray::from_mut_slice(block)),
            Cipher::Toy(t) => t.decrypt_raw(block),
        }
    }
}

const TOY_ROUNDS: usize = 4;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// 64-bit xorshift-multiply finalizer (the splitmix64 output stage).
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Balanced 4-round Feistel network on 16, 24 or 32-bit blocks.
///
/// Blocks are read little-endian (byte 0 low). The left half is the high
/// `width/2` bits. Each round maps `(L, R)` to `(R, L ^ F(R, k_r))`.
#[derive(Clone, PartialEq, Eq)]
pub struct ToyCipher {
    width_bits: usize,
    round_keys: [u64; TOY_ROUNDS],
}

impl ToyCipher {
    pub fn new(seed: u64, width_bits: usize) -> Result<Self> {
        if !matches!(width_bits, 16 | 24 | 32) {
            return Err(Error::UnsupportedWidth(width_bits));
        }
        let mut round_keys = [0u64; TOY_ROUNDS];
        for (r, k) in round_keys.iter_mut().enumerate() {
            *k = mix64(seed.wrapping_add((r as u64).wrapping_mul(GOLDEN_GAMMA)));
        }
        Ok(ToyCipher {
            width_bits,
            round_keys,
        })
    }

    fn half_bits(&self) -> u32 {
        (self.width_bits / 2) as u32
    }

    fn half_mask(&self) -> u64 {
        (1u64 << self.half_bits()) - 1
    }

    fn round(&self, half: u64, key: u64) -> u64 {
        mix64(half ^ (key & self.half_mask())) >> (64 - self.half_bits())
    }

    /// Encrypts a block given as an integer below 2^width.
    pub fn encrypt_u32(&self, v: u32) -> u32 {
        let (h, mask) = (self.half_bits(), self.half_mask());
        let (mut l, mut r) = ((v as u64 >> h) & mask, v as u64 & mask);
        for &k in &self.round_keys {
            (l, r) = (r, l ^ self.round(r, k));
        }
        ((l << h) | r) as u32
    }

    pub fn decrypt_u32(&self, v: u32) -> u32 {
        let (h, mask) = (self.half_bits(), self.half_mask());
        let (mut l, mut r) = ((v as u64 >> h) & mask, v as u64 & mask);
        for &k in self.round_keys.iter().rev() {
            (l, r) = (r ^ self.round(l, k), l);
        }
        ((l << h) | r) as u32
    }

    fn load(block: &[u8]) -> u32 {
        let mut buf = [0u8; 4];
        buf[..block.len()].copy_from_slice(block);
        u32::from_le_bytes(buf)
    }

    fn store(v: u32, block: &mut [u8]) {
        let n = block.len();
        block.copy_from_slice(&v.to_le_bytes()[..n]);
    }
}

impl fmt::Debug for ToyCipher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ToyCipher(width={})", self.width_bits)
    }
}

impl BlockCipher for ToyCipher {
    fn block_bytes(&self) -> usize {
        self.width_bits / 8
    }

    fn encrypt_raw(&self, block: &mut [u8]) {
        assert_eq!(block.len(), self.block_bytes());
        Self::store(self.encrypt_u32(Self::load(block)), block);
    }

    fn decrypt_raw(&self, block: &mut [u8]) {
        assert_eq!(block.len(), self.block_bytes());
        Self::store(self.decrypt_u32(Self::load(block)), block);
    }
}
