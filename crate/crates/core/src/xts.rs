//! XTS sector encryption.
//!
//! Block `j` of sector `N` is encrypted as `E_K(P ^ T) ^ T` with
//! `T = E_{K_T}(N) * alpha^j`, indexing from `j = 0`. Sectors must be a whole
//! number of cipher blocks; there is no ciphertext stealing.
//!
//! Sector numbers enter the tweak cipher big-endian in the last eight bytes
//! of the block (`N = 1` is `00..0001`). This is the encoding that reproduces
//! the published AES-XTS-128 worked example.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cipher::{BlockCipher, Cipher, CipherKind};
use crate::error::{Error, Result};
use crate::gf::{self, FieldElement};

/// Upper bound on blocks in one data unit (sector).
pub const MAX_BLOCKS_PER_SECTOR: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SectorNumber(pub u64);

impl fmt::Display for SectorNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for SectorNumber {
    fn from(v: u64) -> Self {
        SectorNumber(v)
    }
}

/// Device layout: sector size, sector count, and the cipher block size that
/// divides sectors into blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    sector_size_bytes: usize,
    sector_count: u64,
    block_bytes: usize,
}

impl Geometry {
    pub fn new(sector_size_bytes: usize, sector_count: u64, block_bytes: usize) -> Result<Self> {
        if block_bytes == 0
            || sector_size_bytes == 0
            || !sector_size_bytes.is_multiple_of(block_bytes)
        {
            return Err(Error::SectorNotBlockMultiple {
                sector_size: sector_size_bytes,
                block_bytes,
            });
        }
        Ok(Geometry {
            sector_size_bytes,
            sector_count,
            block_bytes,
        })
    }

    /// Geometry with 16-byte blocks.
    pub fn aes(sector_size_bytes: usize, sector_count: u64) -> Result<Self> {
        Geometry::new(sector_size_bytes, sector_count, 16)
    }

    pub fn sector_size_bytes(&self) -> usize {
        self.sector_size_bytes
    }

    pub fn sector_count(&self) -> u64 {
        self.sector_count
    }

    pub fn block_bytes(&self) -> usize {
        self.block_bytes
    }

    /// J, the number of cipher blocks per sector.
    pub fn blocks_per_sector(&self) -> u64 {
        (self.sector_size_bytes / self.block_bytes) as u64
    }

    /// S * J.
    pub fn total_blocks(&self) -> u128 {
        self.sector_count as u128 * self.blocks_per_sector() as u128
    }

    pub fn total_bytes(&self) -> u128 {
        self.sector_count as u128 * self.sector_size_bytes as u128
    }

    pub fn with_sector_count(&self, sector_count: u64) -> Self {
        Geometry {
            sector_count,
            ..*self
        }
    }
}

/// An XTS key: the data key K and the tweak key K_T, already expanded.
#[derive(Clone)]
pub struct XtsKey<C> {
    data: C,
    tweak: C,
}

impl<C: BlockCipher> XtsKey<C> {
    pub fn new(data: C, tweak: C) -> Result<Self> {
        if data.block_bytes() != tweak.block_bytes() {
            return Err(Error::InvalidKey(format!(
                "data and tweak ciphers disagree on block size ({} vs {})",
                data.block_bytes(),
                tweak.block_bytes()
            )));
        }
        Ok(XtsKey { data, tweak })
    }

    pub fn data_cipher(&self) -> &C {
        &self.data
    }

    pub fn tweak_cipher(&self) -> &C {
        &self.tweak
    }

    pub fn block_bytes(&self) -> usize {
        self.data.block_bytes()
    }
}

impl XtsKey<Cipher> {
    pub fn from_bytes(kind: CipherKind, data_key: &[u8], tweak_key: &[u8]) -> Result<Self> {
        XtsKey::new(Cipher::new(kind, data_key)?, Cipher::new(kind, tweak_key)?)
    }

    pub fn from_hex(kind: CipherKind, data_key: &str, tweak_key: &str) -> Result<Self> {
        XtsKey::new(
            Cipher::from_hex(kind, data_key)?,
            Cipher::from_hex(kind, tweak_key)?,
        )
    }
}

impl<C> fmt::Debug for XtsKey<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("XtsKey(..)")
    }
}

/// Writes `n` big-endian into the trailing bytes of a `block_bytes` block.
pub fn encode_sector_number(n: SectorNumber, block_bytes: usize) -> Result<Vec<u8>> {
    let be = n.0.to_be_bytes();
    let mut out = vec![0u8; block_bytes];
    if block_bytes >= 8 {
        out[block_bytes - 8..].copy_from_slice(&be);
    } else {
        if n.0 >> (8 * block_bytes) != 0 {
            return Err(Error::SectorNumberTooWide {
                sector: n.0,
                block_bytes,
            });
        }
        out.copy_from_slice(&be[8 - block_bytes..]);
    }
    Ok(out)
}

/// Inverse of [`encode_sector_number`]; `None` when the block has nonzero
/// bytes above the low 64 bits.
pub fn decode_sector_number(block: &[u8]) -> Option<SectorNumber> {
    let split = block.len().saturating_sub(8);
    if block[..split].iter().any(|&b| b != 0) {
        return None;
    }
    let mut be = [0u8; 8];
    be[8 - (block.len() - split)..].copy_from_slice(&block[split..]);
    Some(SectorNumber(u64::from_be_bytes(be)))
}

/// The tweaks `T_{N,0} .. T_{N,J-1}` of one sector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TweakSchedule {
    pub tweaks: Vec<FieldElement>,
}

impl TweakSchedule {
    pub fn len(&self) -> usize {
        self.tweaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweaks.is_empty()
    }
}

pub fn tweak_schedule<C: BlockCipher>(
    tweak_cipher: &C,
    n: SectorNumber,
    blocks: u64,
) -> Result<TweakSchedule> {
    let input = encode_sector_number(n, tweak_cipher.block_bytes())?;
    tweak_schedule_for_input(tweak_cipher, &input, blocks)
}

/// Tweak schedule for an arbitrary tweak-cipher input block rather than an
/// encoded sector number.
pub fn tweak_schedule_for_input<C: BlockCipher>(
    tweak_cipher: &C,
    tweak_input: &[u8],
    blocks: u64,
) -> Result<TweakSchedule> {
    if blocks == 0 {
        return Err(Error::InvalidPolicy(
            "a sector holds at least one block".into(),
        ));
    }
    let field = tweak_cipher.field();
    let mut t = tweak_cipher.encrypt_block(tweak_input)?;
    let mut tweaks = Vec::with_capacity(blocks as usize);
    for _ in 0..blocks {
        tweaks.push(FieldElement::from_bytes(t.clone()));
        gf::mul_alpha_in_place(&mut t, &field)?;
    }
    Ok(TweakSchedule { tweaks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Encrypt,
    Decrypt,
}

fn check_sector_len(len: usize, block_bytes: usize) -> Result<()> {
    if len == 0 || !len.is_multiple_of(block_bytes) {
        return Err(Error::SectorNotBlockMultiple {
            sector_size: len,
            block_bytes,
        });
    }
    let blocks = (len / block_bytes) as u64;
    if blocks > MAX_BLOCKS_PER_SECTOR {
        return Err(Error::DataUnitTooLarge { blocks });
    }
    Ok(())
}

/// Processes a whole sector in place given the raw tweak-cipher input.
pub fn process_with_tweak_input<C: BlockCipher>(
    key: &XtsKey<C>,
    tweak_input: &[u8],
    buf: &mut [u8],
    direction: Direction,
) -> Result<()> {
    let bb = key.block_bytes();
    check_sector_len(buf.len(), bb)?;
    let field = key.tweak.field();
    let mut tweak = key.tweak.encrypt_block(tweak_input)?;
    for block in buf.chunks_exact_mut(bb) {
        xor_into(block, &tweak);
        match direction {
            Direction::Encrypt => key.data.encrypt_raw(block),
            Direction::Decrypt => key.data.decrypt_raw(block),
        }
        xor_into(block, &tweak);
        gf::mul_alpha_in_place(&mut tweak, &field)?;
    }
    Ok(())
}

pub fn process_sector_in_place<C: BlockCipher>(
    key: &XtsKey<C>,
    n: SectorNumber,
    buf: &mut [u8],
    direction: Direction,
) -> Result<()> {
    let input = encode_sector_number(n, key.block_bytes())?;
    process_with_tweak_input(key, &input, buf, direction)
}

pub fn encrypt_sector<C: BlockCipher>(
    key: &XtsKey<C>,
    n: SectorNumber,
    plaintext: &[u8],
) -> Result<Vec<u8>> {
    let mut out = plaintext.to_vec();
    process_sector_in_place(key, n, &mut out, Direction::Encrypt)?;
    Ok(out)
}

pub fn decrypt_sector<C: BlockCipher>(
    key: &XtsKey<C>,
    n: SectorNumber,
    ciphertext: &[u8],
) -> Result<Vec<u8>> {
    let mut out = ciphertext.to_vec();
    process_sector_in_place(key, n, &mut out, Direction::Decrypt)?;
    Ok(out)
}

/// Processes the single block at index `j` of the sector whose tweak input is
/// `tweak_input`. Equivalent to block `j` of a whole-sector operation.
pub fn process_block_at<C: BlockCipher>(
    key: &XtsKey<C>,
    tweak_input: &[u8],
    j: u64,
    block: &[u8],
    direction: Direction,
) -> Result<Vec<u8>> {
    key.data.check_width(block.len())?;
    if j >= MAX_BLOCKS_PER_SECTOR {
        return Err(Error::DataUnitTooLarge { blocks: j + 1 });
    }
    let t0 = FieldElement::from_bytes(key.tweak.encrypt_block(tweak_input)?);
    let t = gf::alpha_pow(&t0, j, &key.tweak.field())?;
    let mut out = block.to_vec();
    xor_into(&mut out, t.as_bytes());
    match direction {
        Direction::Encrypt => key.data.encrypt_raw(&mut out),
        Direction::Decrypt => key.data.decrypt_raw(&mut out),
    }
    xor_into(&mut out, t.as_bytes());
    Ok(out)
}

pub fn xor_into(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

pub fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexfmt;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_key() -> XtsKey<Cipher> {
        XtsKey::from_bytes(CipherKind::Aes128, &[0x11; 16], &[0x22; 16]).unwrap()
    }

    fn reference_plaintext() -> Vec<u8> {
        let mut p = vec![0x44; 16];
        p.extend_from_slice(&[0x88; 16]);
        p
    }

    const REFERENCE_CIPHERTEXT: &str =
        "74a24eb9b1b6ac5e3f95ca359b8d158565093d6dfc46548f0a9b57d5d76dc64e";

    #[test]
    fn sector_number_encoding() {
        let one = encode_sector_number(SectorNumber(1), 16).unwrap();
        assert_eq!(hexfmt::encode(&one), "00000000000000000000000000000001");
        assert_eq!(
            encode_sector_number(SectorNumber(0), 16).unwrap(),
            vec![0; 16]
        );
        assert_eq!(
            encode_sector_number(SectorNumber(0x0102), 2).unwrap(),
            vec![1, 2]
        );
        assert!(encode_sector_number(SectorNumber(1 << 16), 2).is_err());
        assert_eq!(decode_sector_number(&one), Some(SectorNumber(1)));
        assert_eq!(decode_sector_number(&[1, 2]), Some(SectorNumber(0x0102)));
        let mut wide = vec![0u8; 16];
        wide[7] = 1;
        assert_eq!(decode_sector_number(&wide), None);
    }

    #[test]
    fn encoding_reproduces_published_tweak() {
        let kt = Cipher::new(CipherKind::Aes128, &[0x22; 16]).unwrap();
        let be = encode_sector_number(SectorNumber(1), 16).unwrap();
        assert_eq!(
            hexfmt::encode(kt.encrypt_block(&be).unwrap()),
            "6752ca5febca0f3fc8dc9dfc2a916295"
        );
        // The little-endian alternative does not.
        let mut le = vec![0u8; 16];
        le[0] = 1;
        assert_ne!(
            hexfmt::encode(kt.encrypt_block(&le).unwrap()),
            "6752ca5febca0f3fc8dc9dfc2a916295"
        );
    }

    #[test]
    fn published_tweak_schedule() {
        let key = reference_key();
        let s = tweak_schedule(key.tweak_cipher(), SectorNumber(1), 2).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.tweaks[0].to_hex(), "6752ca5febca0f3fc8dc9dfc2a916295");
        assert_eq!(s.tweaks[1].to_hex(), "49a494bfd6951f7e90b93bf95522c52a");
    }

    #[test]
    fn schedule_follows_alpha_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kt = Cipher::new(CipherKind::Aes128, &rng.random::<[u8; 16]>()).unwrap();
        let s = tweak_schedule(&kt, SectorNumber(rng.random()), 21).unwrap();
        assert_eq!(s.len(), 21);
        let field = kt.field();
        for j in 1..21 {
            assert_eq!(
                s.tweaks[j],
                gf::mul_alpha(&s.tweaks[j - 1], &field).unwrap()
            );
        }
        assert_eq!(
            s.tweaks[20],
            gf::alpha_pow(&s.tweaks[0], 20, &field).unwrap()
        );
    }

    #[test]
    fn published_sector() {
        let key = reference_key();
        let c = encrypt_sector(&key, SectorNumber(1), &reference_plaintext()).unwrap();
        assert_eq!(hexfmt::encode(&c), REFERENCE_CIPHERTEXT);
        let p = decrypt_sector(&key, SectorNumber(1), &c).unwrap();
        assert_eq!(p, reference_plaintext());
    }

    #[test]
    fn block_at_matches_sector() {
        let key = reference_key();
        let c = encrypt_sector(&key, SectorNumber(1), &reference_plaintext()).unwrap();
        let input = encode_sector_number(SectorNumber(1), 16).unwrap();
        let c1 = process_block_at(&key, &input, 1, &[0x88; 16], Direction::Encrypt).unwrap();
        assert_eq!(&c[16..], &c1[..]);
        let p1 = process_block_at(&key, &input, 1, &c1, Direction::Decrypt).unwrap();
        assert_eq!(p1, vec![0x88; 16]);
    }

    #[test]
    fn toy_sector_matches_formula() {
        let key = XtsKey::from_bytes(CipherKind::Toy16, &7u64.to_be_bytes(), &9u64.to_be_bytes())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut p = vec![0u8; 8];
        rng.fill(&mut p[..]);
        let n = SectorNumber(200);
        let c = encrypt_sector(&key, n, &p).unwrap();

        // Independent evaluation of E_K(P ^ T) ^ T with T = E_KT(N) * alpha^j.
        let field = gf::FieldSpec::toy(16).unwrap();
        let t0 = key.tweak_cipher().encrypt_block(&[0, 200]).unwrap();
        for j in 0..4 {
            let t = gf::alpha_pow(&FieldElement::from_bytes(t0.clone()), j as u64, &field).unwrap();
            let x = xor(&p[2 * j..2 * j + 2], t.as_bytes());
            let want = xor(&key.data_cipher().encrypt_block(&x).unwrap(), t.as_bytes());
            assert_eq!(&c[2 * j..2 * j + 2], &want[..]);
        }
        assert_eq!(decrypt_sector(&key, n, &c).unwrap(), p);
    }

    #[test]
    fn rejects_partial_blocks_and_oversized_units() {
        let key = reference_key();
        assert!(matches!(
            encrypt_sector(&key, SectorNumber(0), &[0; 31]),
            Err(Error::SectorNotBlockMultiple { .. })
        ));
        assert!(encrypt_sector(&key, SectorNumber(0), &[]).is_err());
        let huge = vec![0u8; (16 << 20) + 16];
        assert!(matches!(
            encrypt_sector(&key, SectorNumber(0), &huge[..(16 << 20) + 16]),
            Err(Error::DataUnitTooLarge { .. })
        ));
        assert!(encrypt_sector(&key, SectorNumber(0), &huge[..16 << 20]).is_ok());
    }

    #[test]
    fn geometry_contract() {
        assert!(Geometry::aes(520, 1).is_err());
        assert!(Geometry::aes(0, 1).is_err());
        let g = Geometry::aes(4096, 1 << 28).unwrap();
        assert_eq!(g.blocks_per_sector(), 256);
        assert_eq!(g.total_blocks(), 1 << 36);
    }

    #[test]
    fn identical_blocks_encrypt_distinctly_across_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let key = XtsKey::from_bytes(
            CipherKind::Aes128,
            &rng.random::<[u8; 16]>(),
            &rng.random::<[u8; 16]>(),
        )
        .unwrap();
        let sector = vec![0x5a; 16 * 32];
        let mut seen = std::collections::HashSet::new();
        for n in 0..32u64 {
            let c = encrypt_sector(&key, SectorNumber(n), &sector).unwrap();
            for b in c.chunks(16) {
                assert!(seen.insert(b.to_vec()));
            }
        }
        assert_eq!(seen.len(), 1024);
    }

    #[test]
    fn sectors_are_independent() {
        let key = reference_key();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut a = vec![0u8; 64];
        rng.fill(&mut a[..]);
        let ca = encrypt_sector(&key, SectorNumber(3), &a).unwrap();
        let mut b = a.clone();
        b[5] ^= 1;
        let cb = encrypt_sector(&key, SectorNumber(4), &b).unwrap();
        assert_eq!(encrypt_sector(&key, SectorNumber(3), &a).unwrap(), ca);
        assert_ne!(cb, encrypt_sector(&key, SectorNumber(4), &a).unwrap());
    }
}
