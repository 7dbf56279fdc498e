//! Chosen-ciphertext attacks on XTS, run against an in-memory device that
//! keeps its keys private.
//!
//! Two independent demonstrations live here:
//!
//! * **Collision forgery.** The adversary sees triples `(P, C, T)` for every
//!   position. When two positions share the cipher input `P ^ T`, overwriting
//!   one of them yields a ciphertext that can be moved to the other and
//!   decrypts to a plaintext of the adversary's choice. With 128-bit blocks
//!   that needs ~2^64 blocks, so the demo uses the 16-bit toy cipher.
//! * **Shared-key tweak recovery.** With `K = K_T` and indexing from `j = 0`,
//!   decrypting an all-zero block at `(N, 0)` returns `encode(N) ^ T_{N,0}`,
//!   revealing the tweak. A second zero-block query at a crafted sector
//!   number then supplies the cipher output needed to forge any block.
//!
//! The adversary only talks to [`XtsDevice`] through its counted query
//! methods. Checking the result is the job of [`Harness`], which may look at
//! what the device hides.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cipher::{BlockCipher, Cipher, CipherKind};
use crate::error::{Error, Result};
use crate::gf::{self, FieldElement};
use crate::hexfmt::{self, serde_hex};
use crate::xts::{
    decode_sector_number, encode_sector_number, process_block_at, process_sector_in_place, xor,
    Direction, Geometry, SectorNumber, XtsKey,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub sector: SectorNumber,
    pub block: u64,
}

impl Position {
    pub fn new(sector: u64, block: u64) -> Self {
        Position {
            sector: SectorNumber(sector),
            block,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.sector, self.block)
    }
}

/// What the collision adversary is allowed to see about one position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub position: Position,
    #[serde(with = "serde_hex")]
    pub plaintext: Vec<u8>,
    #[serde(with = "serde_hex")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "serde_hex")]
    pub tweak: Vec<u8>,
}

impl Triple {
    /// `P ^ T`, the block cipher input at this position.
    pub fn cipher_input(&self) -> Vec<u8> {
        xor(&self.plaintext, &self.tweak)
    }
}

/// Which tweak-cipher inputs the device accepts in queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AddressSpace {
    /// Only encoded sector numbers below S.
    Device,
    /// Any n-bit block is a valid sector address, as in the abstract mode
    /// where the sector number is itself a block.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Encrypt,
    Decrypt,
    Write,
    Read,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub kind: QueryKind,
    /// Tweak-cipher input (encoded sector number).
    #[serde(with = "serde_hex")]
    pub sector: Vec<u8>,
    pub block: u64,
    #[serde(with = "serde_hex")]
    pub input: Vec<u8>,
    #[serde(with = "serde_hex")]
    pub output: Vec<u8>,
}

impl fmt::Display for QueryRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            QueryKind::Encrypt => "encrypt",
            QueryKind::Decrypt => "decrypt",
            QueryKind::Write => "write  ",
            QueryKind::Read => "read   ",
        };
        let sector = match decode_sector_number(&self.sector) {
            Some(n) => n.to_string(),
            None => format!("0x{}", hexfmt::encode(&self.sector)),
        };
        write!(
            f,
            "{kind} N={sector} j={}: {} -> {}",
            self.block,
            hexfmt::encode(&self.input),
            hexfmt::encode(&self.output)
        )
    }
}

/// An XTS-encrypted device with hidden keys, exposing encryption and
/// decryption oracles and counting every query.
pub struct XtsDevice<C> {
    key: XtsKey<C>,
    geometry: Geometry,
    address_space: AddressSpace,
    plaintext: Vec<u8>,
    ciphertext: Vec<u8>,
    encrypt_queries: u64,
    decrypt_queries: u64,
    transcript: Vec<QueryRecord>,
}

impl<C: BlockCipher> XtsDevice<C> {
    /// Encrypts `plaintext` (a full image) onto a fresh device.
    pub fn new(
        key: XtsKey<C>,
        geometry: Geometry,
        plaintext: Vec<u8>,
        address_space: AddressSpace,
    ) -> Result<Self> {
        if key.block_bytes() != geometry.block_bytes() {
            return Err(Error::LengthMismatch {
                expected: geometry.block_bytes(),
                actual: key.block_bytes(),
            });
        }
        if plaintext.len() as u128 != geometry.total_bytes() {
            return Err(Error::ImageSize {
                len: plaintext.len() as u64,
                sector_size: geometry.sector_size_bytes(),
            });
        }
        let mut ciphertext = plaintext.clone();
        for (n, sector) in ciphertext
            .chunks_mut(geometry.sector_size_bytes())
            .enumerate()
        {
            process_sector_in_place(&key, SectorNumber(n as u64), sector, Direction::Encrypt)?;
        }
        Ok(XtsDevice {
            key,
            geometry,
            address_space,
            plaintext,
            ciphertext,
            encrypt_queries: 0,
            decrypt_queries: 0,
            transcript: Vec::new(),
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn block_bytes(&self) -> usize {
        self.geometry.block_bytes()
    }

    pub fn address_space(&self) -> AddressSpace {
        self.address_space
    }

    pub fn encrypt_queries(&self) -> u64 {
        self.encrypt_queries
    }

    pub fn decrypt_queries(&self) -> u64 {
        self.decrypt_queries
    }

    pub fn transcript(&self) -> &[QueryRecord] {
        &self.transcript
    }

    pub fn harness(&self) -> Harness<'_, C> {
        Harness { device: self }
    }

    fn offset(&self, pos: Position) -> Result<usize> {
        if pos.sector.0 >= self.geometry.sector_count() {
            return Err(Error::SectorOutOfRange {
                sector: pos.sector.0,
                sectors: self.geometry.sector_count(),
            });
        }
        let j = self.geometry.blocks_per_sector();
        if pos.block >= j {
            return Err(Error::BlockOutOfRange {
                block: pos.block,
                blocks: j,
            });
        }
        let bb = self.block_bytes();
        Ok(pos.sector.0 as usize * self.geometry.sector_size_bytes() + pos.block as usize * bb)
    }

    fn check_address(&self, address: &[u8], block: u64) -> Result<()> {
        if address.len() != self.block_bytes() {
            return Err(Error::LengthMismatch {
                expected: self.block_bytes(),
                actual: address.len(),
            });
        }
        if block >= self.geometry.blocks_per_sector() {
            return Err(Error::BlockOutOfRange {
                block,
                blocks: self.geometry.blocks_per_sector(),
            });
        }
        if self.address_space == AddressSpace::Device {
            match decode_sector_number(address) {
                Some(n) if n.0 < self.geometry.sector_count() => {}
                _ => {
                    return Err(Error::OutOfAddressSpace(format!(
                        "0x{}",
                        hexfmt::encode(address)
                    )))
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, kind: QueryKind, sector: &[u8], block: u64, input: &[u8], output: &[u8]) {
        self.transcript.push(QueryRecord {
            kind,
            sector: sector.to_vec(),
            block,
            input: input.to_vec(),
            output: output.to_vec(),
        });
    }

    fn encode(&self, n: SectorNumber) -> Result<Vec<u8>> {
        encode_sector_number(n, self.block_bytes())
    }

    /// Reads the stored ciphertext block at `pos`. Observing the disk is not
    /// an oracle query and is not counted.
    pub fn read_ciphertext(&mut self, pos: Position) -> Result<Vec<u8>> {
        let off = self.offset(pos)?;
        let c = self.ciphertext[off..off + self.block_bytes()].to_vec();
        let addr = self.encode(pos.sector)?;
        self.record(QueryKind::Read, &addr, pos.block, &[], &c);
        Ok(c)
    }

    /// Writes plaintext `p` at `pos` and returns the resulting stored
    /// ciphertext. Counts as one encryption query.
    pub fn write_plaintext(&mut self, pos: Position, p: &[u8]) -> Result<Vec<u8>> {
        let off = self.offset(pos)?;
        let addr = self.encode(pos.sector)?;
        let c = process_block_at(&self.key, &addr, pos.block, p, Direction::Encrypt)?;
        self.encrypt_queries += 1;
        self.plaintext[off..off + p.len()].copy_from_slice(p);
        self.ciphertext[off..off + c.len()].copy_from_slice(&c);
        self.record(QueryKind::Write, &addr, pos.block, p, &c);
        Ok(c)
    }

    /// Encryption oracle at block `block` of the sector whose tweak input is
    /// `address`. Nothing is stored.
    pub fn encrypt_at(&mut self, address: &[u8], block: u64, p: &[u8]) -> Result<Vec<u8>> {
        self.check_address(address, block)?;
        let c = process_block_at(&self.key, address, block, p, Direction::Encrypt)?;
        self.encrypt_queries += 1;
        self.record(QueryKind::Encrypt, address, block, p, &c);
        Ok(c)
    }

    /// Decryption oracle; see [`encrypt_at`](Self::encrypt_at).
    pub fn decrypt_at(&mut self, address: &[u8], block: u64, c: &[u8]) -> Result<Vec<u8>> {
        self.check_address(address, block)?;
        let p = process_block_at(&self.key, address, block, c, Direction::Decrypt)?;
        self.decrypt_queries += 1;
        self.record(QueryKind::Decrypt, address, block, c, &p);
        Ok(p)
    }

    pub fn decrypt_at_sector(&mut self, n: SectorNumber, block: u64, c: &[u8]) -> Result<Vec<u8>> {
        let addr = self.encode(n)?;
        self.decrypt_at(&addr, block, c)
    }
}

/// Verification side of an experiment. Reads what the adversary may not.
pub struct Harness<'a, C> {
    device: &'a XtsDevice<C>,
}

impl<C: BlockCipher> Harness<'_, C> {
    /// `T_{N,j}` computed directly from the hidden tweak key.
    pub fn true_tweak(&self, n: SectorNumber, block: u64) -> Result<Vec<u8>> {
        let addr = self.device.encode(n)?;
        let t0 = self.device.key.tweak_cipher().encrypt_block(&addr)?;
        let field = self.device.key.tweak_cipher().field();
        Ok(gf::alpha_pow(&FieldElement::from_bytes(t0.to_vec()), block, &field)?.into_bytes())
    }

    pub fn plaintext_at(&self, pos: Position) -> Result<Vec<u8>> {
        let off = self.device.offset(pos)?;
        Ok(self.device.plaintext[off..off + self.device.block_bytes()].to_vec())
    }

    /// Whether ciphertext `c` placed at `pos` decrypts to `expected`.
    pub fn decrypts_to(&self, pos: Position, c: &[u8], expected: &[u8]) -> Result<bool> {
        self.device.offset(pos)?;
        let addr = self.device.encode(pos.sector)?;
        let p = process_block_at(&self.device.key, &addr, pos.block, c, Direction::Decrypt)?;
        Ok(p == expected)
    }

    /// The adversary's view of every position on the device.
    pub fn triples(&self) -> Result<Vec<Triple>> {
        let g = &self.device.geometry;
        let bb = g.block_bytes();
        let mut out = Vec::with_capacity(g.total_blocks() as usize);
        for n in 0..g.sector_count() {
            let sector = SectorNumber(n);
            let addr = self.device.encode(sector)?;
            let schedule = crate::xts::tweak_schedule_for_input(
                self.device.key.tweak_cipher(),
                &addr,
                g.blocks_per_sector(),
            )?;
            for (j, t) in schedule.tweaks.into_iter().enumerate() {
                let pos = Position {
                    sector,
                    block: j as u64,
                };
                let off = self.device.offset(pos)?;
                out.push(Triple {
                    position: pos,
                    plaintext: self.device.plaintext[off..off + bb].to_vec(),
                    ciphertext: self.device.ciphertext[off..off + bb].to_vec(),
                    tweak: t.into_bytes(),
                });
            }
        }
        Ok(out)
    }
}

/// First pair of distinct positions (in scan order) whose cipher inputs
/// `P ^ T` coincide.
pub fn find_collision(triples: &[Triple]) -> Option<(Position, Position)> {
    let mut seen: HashMap<Vec<u8>, Position> = HashMap::with_capacity(triples.len());
    for t in triples {
        let x = t.cipher_input();
        match seen.get(&x) {
            Some(&first) if first != t.position => return Some((first, t.position)),
            Some(_) => {}
            None => {
                seen.insert(x, t.position);
            }
        }
    }
    None
}

/// Number of unordered position pairs with equal `P ^ T`.
pub fn count_colliding_pairs(triples: &[Triple]) -> u64 {
    let mut buckets: HashMap<Vec<u8>, u64> = HashMap::with_capacity(triples.len());
    for t in triples {
        *buckets.entry(t.cipher_input()).or_default() += 1;
    }
    buckets.values().map(|&c| c * (c - 1) / 2).sum()
}

/// Birthday estimate `q(q-1) / 2^(n+1)` of colliding pairs among `q` uniform
/// n-bit values.
pub fn expected_colliding_pairs(q: u64, block_bits: u32) -> f64 {
    q as f64 * (q as f64 - 1.0) / 2f64.powi(block_bits as i32 + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgedBlock {
    pub position: Position,
    #[serde(with = "serde_hex")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "serde_hex")]
    pub target: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeOutcome {
    pub forged: ForgedBlock,
    /// Harness check: the forged ciphertext decrypts to the target.
    pub verified: bool,
    pub encrypt_queries: u64,
    pub decrypt_queries: u64,
}

fn lookup(triples: &[Triple], pos: Position) -> Result<&Triple> {
    triples
        .iter()
        .find(|t| t.position == pos)
        .ok_or_else(|| Error::NotACollision(format!("no triple for position {pos}")))
}

/// Uses a collision `(overwrite, victim)` to forge a ciphertext for `victim`
/// that decrypts to `target`, by writing `target ^ T_victim ^ T_overwrite` at
/// `overwrite` and shifting the resulting ciphertext by the tweak difference.
pub fn forge_via_collision<C: BlockCipher>(
    device: &mut XtsDevice<C>,
    collision: (Position, Position),
    triples: &[Triple],
    target: &[u8],
) -> Result<ForgeOutcome> {
    let (a, b) = collision;
    if a == b {
        return Err(Error::NotACollision(format!("{a} paired with itself")));
    }
    let (ta, tb) = (lookup(triples, a)?, lookup(triples, b)?);
    if ta.cipher_input() != tb.cipher_input() {
        return Err(Error::NotACollision(format!(
            "P ^ T differs between {a} and {b}"
        )));
    }
    device.check_address(&device.encode(a.sector)?, a.block)?;
    let (enc0, dec0) = (device.encrypt_queries, device.decrypt_queries);

    let shift = xor(&ta.tweak, &tb.tweak);
    let overwrite = xor(target, &shift);
    let observed = device.write_plaintext(a, &overwrite)?;
    let forged = xor(&observed, &shift);

    let verified = device.harness().decrypts_to(b, &forged, target)?;
    Ok(ForgeOutcome {
        forged: ForgedBlock {
            position: b,
            ciphertext: forged,
            target: target.to_vec(),
        },
        verified,
        encrypt_queries: device.encrypt_queries - enc0,
        decrypt_queries: device.decrypt_queries - dec0,
    })
}

/// One zero-block decryption at `(n, 0)`, returning `P ^ encode(n)`, which is
/// `T_{n,0}` whenever `K = K_T`.
pub fn recover_tweak_shared_key<C: BlockCipher>(
    device: &mut XtsDevice<C>,
    n: SectorNumber,
) -> Result<Vec<u8>> {
    let zero = vec![0u8; device.block_bytes()];
    let p = device.decrypt_at_sector(n, 0, &zero)?;
    Ok(xor(&p, &device.encode(n)?))
}

/// Forges the block at `(n, j)` so that it decrypts to `target`, given the
/// tweak `t0` recovered by [`recover_tweak_shared_key`], using one more
/// zero-block decryption at sector address `target ^ T_{n,j}`.
///
/// Fails with [`Error::OutOfAddressSpace`] when that address is not a sector
/// the device accepts.
pub fn forge_via_recovered_tweak<C: BlockCipher>(
    device: &mut XtsDevice<C>,
    n: SectorNumber,
    j: u64,
    t0: &[u8],
    target: &[u8],
) -> Result<ForgeOutcome> {
    device.check_address(&device.encode(n)?, j)?;
    device.block_bytes_match(target)?;
    device.block_bytes_match(t0)?;
    let (enc0, dec0) = (device.encrypt_queries, device.decrypt_queries);

    let field = gf::FieldSpec::for_block_bytes(device.block_bytes())?;
    let tj = gf::alpha_pow(&FieldElement::from_bytes(t0.to_vec()), j, &field)?.into_bytes();

    let address = xor(target, &tj);
    let zero = vec![0u8; device.block_bytes()];
    let p = device.decrypt_at(&address, 0, &zero)?;
    // p = address ^ E_K(address)
    let e = xor(&p, &address);
    let forged = xor(&e, &tj);

    let verified = device.harness().decrypts_to(
        Position {
            sector: n,
            block: j,
        },
        &forged,
        target,
    )?;
    Ok(ForgeOutcome {
        forged: ForgedBlock {
            position: Position {
                sector: n,
                block: j,
            },
            ciphertext: forged,
            target: target.to_vec(),
        },
        verified,
        encrypt_queries: device.encrypt_queries - enc0,
        decrypt_queries: device.decrypt_queries - dec0,
    })
}

impl<C: BlockCipher> XtsDevice<C> {
    fn block_bytes_match(&self, b: &[u8]) -> Result<()> {
        if b.len() != self.block_bytes() {
            return Err(Error::LengthMismatch {
                expected: self.block_bytes(),
                actual: b.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Success,
    Failure,
    OutOfAddressSpace,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Success => "SUCCESS",
            Verdict::Failure => "FAILURE",
            Verdict::OutOfAddressSpace => "OUT-OF-ADDRESS-SPACE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionParams {
    pub width_bits: usize,
    pub sectors: u64,
    pub blocks_per_sector: u64,
    pub seed: u64,
}

impl Default for CollisionParams {
    fn default() -> Self {
        CollisionParams {
            width_bits: 16,
            sectors: 256,
            blocks_per_sector: 16,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRun {
    pub params: CollisionParams,
    pub positions: u64,
    pub colliding_pairs: u64,
    pub expected_pairs: f64,
    pub collision: Option<(Position, Position)>,
    pub forgery: Option<ForgeOutcome>,
    pub verdict: Verdict,
    pub transcript: Vec<QueryRecord>,
}

/// Fills a toy-cipher device with random data, looks for an `P ^ T`
/// collision among all positions and, if one exists, forges the second
/// position to a random target. Fully determined by `params`.
pub fn run_collision_attack(params: CollisionParams) -> Result<CollisionRun> {
    let kind = CipherKind::toy(params.width_bits)?;
    let bb = kind.block_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let data_seed: u64 = rng.random();
    let tweak_seed = loop {
        let s: u64 = rng.random();
        if s != data_seed {
            break s;
        }
    };
    let key = XtsKey::from_bytes(kind, &data_seed.to_be_bytes(), &tweak_seed.to_be_bytes())?;
    let geometry = Geometry::new(
        (params.blocks_per_sector as usize).saturating_mul(bb),
        params.sectors,
        bb,
    )?;
    let mut image = vec![0u8; geometry.total_bytes() as usize];
    rng.fill(&mut image[..]);
    let mut target = vec![0u8; bb];
    rng.fill(&mut target[..]);

    let mut device = XtsDevice::new(key, geometry, image, AddressSpace::Device)?;
    let triples = device.harness().triples()?;
    let colliding_pairs = count_colliding_pairs(&triples);
    let collision = find_collision(&triples);
    let forgery = match collision {
        Some(c) => Some(forge_via_collision(&mut device, c, &triples, &target)?),
        None => None,
    };
    let verdict = match &forgery {
        Some(f) if f.verified => Verdict::Success,
        _ => Verdict::Failure,
    };
    let positions = triples.len() as u64;
    Ok(CollisionRun {
        params,
        positions,
        colliding_pairs,
        expected_pairs: expected_colliding_pairs(positions, (bb * 8) as u32),
        collision,
        forgery,
        verdict,
        transcript: device.transcript().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweakRecoveryParams {
    pub sector: u64,
    pub block: u64,
    /// Defaults to a random block drawn from `seed`.
    #[serde(default, with = "opt_hex")]
    pub target: Option<Vec<u8>>,
    pub distinct_keys: bool,
    pub seed: u64,
    pub sectors: u64,
    pub sector_size: usize,
    pub address_space: AddressSpace,
}

impl Default for TweakRecoveryParams {
    fn default() -> Self {
        TweakRecoveryParams {
            sector: 3,
            block: 2,
            target: None,
            distinct_keys: false,
            seed: 42,
            sectors: 16,
            sector_size: 512,
            address_space: AddressSpace::Unbounded,
        }
    }
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| crate::hexfmt::decode(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweakRecoveryRun {
    pub params: TweakRecoveryParams,
    pub shared_key: bool,
    #[serde(with = "serde_hex")]
    pub recovered_tweak: Vec<u8>,
    #[serde(with = "serde_hex")]
    pub true_tweak: Vec<u8>,
    pub recovery_verified: bool,
    pub recovery_decrypt_queries: u64,
    /// Decryption queries over the whole run (recovery plus forgery).
    pub total_decrypt_queries: u64,
    pub forgery: Option<ForgeOutcome>,
    pub verdict: Verdict,
    pub transcript: Vec<QueryRecord>,
}

/// Builds an AES-128 device (with `K = K_T` unless `distinct_keys`), recovers
/// the tweak of `sector` and forges block `block` of it to `target`.
pub fn run_tweak_recovery_attack(params: TweakRecoveryParams) -> Result<TweakRecoveryRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let k: [u8; 16] = rng.random();
    let kt: [u8; 16] = if params.distinct_keys {
        loop {
            let kt: [u8; 16] = rng.random();
            if kt != k {
                break kt;
            }
        }
    } else {
        k
    };
    let geometry = Geometry::aes(params.sector_size, params.sectors)?;
    let mut image = vec![0u8; geometry.total_bytes() as usize];
    rng.fill(&mut image[..]);
    let target = match &params.target {
        Some(t) => t.clone(),
        None => rng.random::<[u8; 16]>().to_vec(),
    };
    let key = XtsKey::new(
        Cipher::new(CipherKind::Aes128, &k)?,
        Cipher::new(CipherKind::Aes128, &kt)?,
    )?;
    let mut device = XtsDevice::new(key, geometry, image, params.address_space)?;
    let n = SectorNumber(params.sector);
    if n.0 >= geometry.sector_count() {
        return Err(Error::SectorOutOfRange {
            sector: n.0,
            sectors: geometry.sector_count(),
        });
    }

    let recovered = recover_tweak_shared_key(&mut device, n)?;
    let recovery_decrypt_queries = device.decrypt_queries();
    let true_tweak = device.harness().true_tweak(n, 0)?;
    let recovery_verified = recovered == true_tweak;

    let (forgery, verdict) =
        match forge_via_recovered_tweak(&mut device, n, params.block, &recovered, &target) {
            Ok(f) => {
                let v = if f.verified && recovery_verified {
                    Verdict::Success
                } else {
                    Verdict::Failure
                };
                (Some(f), v)
            }
            Err(Error::OutOfAddressSpace(_)) => (None, Verdict::OutOfAddressSpace),
            Err(e) => return Err(e),
        };
    Ok(TweakRecoveryRun {
        params,
        shared_key: k == kt,
        recovered_tweak: recovered,
        true_tweak,
        recovery_verified,
        recovery_decrypt_queries,
        total_decrypt_queries: device.decrypt_queries(),
        forgery,
        verdict,
        transcript: device.transcript().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aes_device(shared: bool, seed: u64, space: AddressSpace) -> XtsDevice<Cipher> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k: [u8; 16] = rng.random();
        let kt: [u8; 16] = if shared { k } else { rng.random() };
        let g = Geometry::aes(512, 16).unwrap();
        let mut image = vec![0u8; 512 * 16];
        rng.fill(&mut image[..]);
        XtsDevice::new(
            XtsKey::from_bytes(CipherKind::Aes128, &k, &kt).unwrap(),
            g,
            image,
            space,
        )
        .unwrap()
    }

    fn toy_device(seed: u64) -> XtsDevice<Cipher> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::new(32, 256, 2).unwrap();
        let mut image = vec![0u8; 32 * 256];
        rng.fill(&mut image[..]);
        let key = XtsKey::from_bytes(
            CipherKind::Toy16,
            &rng.random::<u64>().to_be_bytes(),
            &rng.random::<u64>().to_be_bytes(),
        )
        .unwrap();
        XtsDevice::new(key, g, image, AddressSpace::Device).unwrap()
    }

    fn triple(sector: u64, block: u64, p: &[u8], t: &[u8]) -> Triple {
        Triple {
            position: Position::new(sector, block),
            plaintext: p.to_vec(),
            ciphertext: vec![0; p.len()],
            tweak: t.to_vec(),
        }
    }

    #[test]
    fn forced_collision_is_found() {
        let ts = vec![
            triple(0, 0, &[1, 2], &[9, 9]),
            triple(0, 1, &[3, 4], &[5, 5]),
            triple(7, 3, &[1, 2], &[9, 9]),
        ];
        assert_eq!(
            find_collision(&ts),
            Some((Position::new(0, 0), Position::new(7, 3)))
        );
        assert_eq!(count_colliding_pairs(&ts), 1);
        assert_eq!(find_collision(&ts[..2]), None);
    }

    #[test]
    fn no_collision_among_aes_blocks() {
        let d = aes_device(false, 1, AddressSpace::Device);
        let ts = d.harness().triples().unwrap();
        assert_eq!(ts.len(), 512);
        let d = XtsDevice::new(
            XtsKey::from_bytes(CipherKind::Aes128, &[3; 16], &[4; 16]).unwrap(),
            Geometry::aes(1024, 16).unwrap(),
            vec![0; 1024 * 16],
            AddressSpace::Device,
        )
        .unwrap();
        let ts = d.harness().triples().unwrap();
        assert_eq!(ts.len(), 1 << 10);
        assert_eq!(find_collision(&ts), None);
    }

    #[test]
    fn triples_match_device_formula() {
        let mut d = toy_device(3);
        let ts = d.harness().triples().unwrap();
        for t in ts.iter().step_by(37) {
            assert_eq!(d.read_ciphertext(t.position).unwrap(), t.ciphertext);
            assert_eq!(
                d.harness()
                    .true_tweak(t.position.sector, t.position.block)
                    .unwrap(),
                t.tweak
            );
        }
        assert_eq!(d.encrypt_queries() + d.decrypt_queries(), 0);
    }

    #[test]
    fn collision_forgery_variants() {
        let mut d = toy_device(4);
        let ts = d.harness().triples().unwrap();
        let (a, b) = find_collision(&ts).expect("2^12 positions at n=16 collide");
        let tb = lookup(&ts, b).unwrap().clone();

        // Identity target reproduces the victim's original ciphertext.
        let out = forge_via_collision(&mut d, (a, b), &ts, &tb.plaintext).unwrap();
        assert!(out.verified);
        assert_eq!(out.forged.ciphertext, tb.ciphertext);
        assert_eq!(out.encrypt_queries, 1);

        let mut flipped = tb.plaintext.clone();
        flipped[0] ^= 1;
        let out = forge_via_collision(&mut d, (a, b), &ts, &flipped).unwrap();
        assert!(out.verified);
    }

    #[test]
    fn forging_from_a_non_collision_is_refused() {
        let mut d = toy_device(5);
        let ts = d.harness().triples().unwrap();
        let (a, b) = (ts[0].position, ts[1].position);
        assert_ne!(ts[0].cipher_input(), ts[1].cipher_input());
        assert!(matches!(
            forge_via_collision(&mut d, (a, b), &ts, &[0, 0]),
            Err(Error::NotACollision(_))
        ));
        assert!(forge_via_collision(&mut d, (a, a), &ts, &[0, 0]).is_err());
    }

    #[test]
    fn shared_key_tweak_recovery() {
        let mut d = aes_device(true, 6, AddressSpace::Device);
        let t = recover_tweak_shared_key(&mut d, SectorNumber(5)).unwrap();
        assert_eq!(t, d.harness().true_tweak(SectorNumber(5), 0).unwrap());
        assert_eq!(d.decrypt_queries(), 1);
        assert_eq!(d.encrypt_queries(), 0);

        let mut d = aes_device(false, 6, AddressSpace::Device);
        let t = recover_tweak_shared_key(&mut d, SectorNumber(5)).unwrap();
        assert_ne!(t, d.harness().true_tweak(SectorNumber(5), 0).unwrap());
    }

    #[test]
    fn recovered_tweak_forgery() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut d = aes_device(true, 7, AddressSpace::Unbounded);
        let target: [u8; 16] = rng.random();
        let t0 = recover_tweak_shared_key(&mut d, SectorNumber(3)).unwrap();
        let out = forge_via_recovered_tweak(&mut d, SectorNumber(3), 2, &t0, &target).unwrap();
        assert!(out.verified);
        assert_eq!(out.decrypt_queries, 1);
        assert_eq!(out.encrypt_queries, 0);
        assert_eq!(d.decrypt_queries(), 2);

        // Identity forgery at j = 0.
        let mut d = aes_device(true, 8, AddressSpace::Unbounded);
        let pos = Position::new(4, 0);
        let p = d.harness().plaintext_at(pos).unwrap();
        let c = d.read_ciphertext(pos).unwrap();
        let t0 = recover_tweak_shared_key(&mut d, SectorNumber(4)).unwrap();
        let out = forge_via_recovered_tweak(&mut d, SectorNumber(4), 0, &t0, &p).unwrap();
        assert_eq!(out.forged.ciphertext, c);
    }

    #[test]
    fn bounded_device_reports_out_of_range_address() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = aes_device(true, 9, AddressSpace::Device);
        let target: [u8; 16] = rng.random();
        let t0 = recover_tweak_shared_key(&mut d, SectorNumber(3)).unwrap();
        assert!(matches!(
            forge_via_recovered_tweak(&mut d, SectorNumber(3), 2, &t0, &target),
            Err(Error::OutOfAddressSpace(_))
        ));

        // A target chosen so that target ^ T_{3,2} encodes sector 11 stays in range.
        let mut d = aes_device(true, 9, AddressSpace::Device);
        let t32 = d.harness().true_tweak(SectorNumber(3), 2).unwrap();
        let target = xor(&encode_sector_number(SectorNumber(11), 16).unwrap(), &t32);
        let t0 = recover_tweak_shared_key(&mut d, SectorNumber(3)).unwrap();
        let out = forge_via_recovered_tweak(&mut d, SectorNumber(3), 2, &t0, &target).unwrap();
        assert!(out.verified);
        assert_eq!(out.decrypt_queries, 1);
    }

    #[test]
    fn distinct_keys_defeat_the_forgery() {
        let mut d = aes_device(false, 10, AddressSpace::Unbounded);
        let t0 = recover_tweak_shared_key(&mut d, SectorNumber(3)).unwrap();
        let out = forge_via_recovered_tweak(&mut d, SectorNumber(3), 2, &t0, &[0xab; 16]).unwrap();
        assert!(!out.verified);
    }

    #[test]
    fn demo_runs_are_reproducible() {
        let a = run_collision_attack(CollisionParams::default()).unwrap();
        let b = run_collision_attack(CollisionParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.verdict, Verdict::Success);
        assert_eq!(a.positions, 1 << 12);

        let a = run_tweak_recovery_attack(TweakRecoveryParams::default()).unwrap();
        assert_eq!(
            a,
            run_tweak_recovery_attack(TweakRecoveryParams::default()).unwrap()
        );
        assert_eq!(a.verdict, Verdict::Success);
        assert_eq!(a.recovery_decrypt_queries, 1);
        assert_eq!(a.total_decrypt_queries, 2);

        let neg = run_tweak_recovery_attack(TweakRecoveryParams {
            distinct_keys: true,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(neg.verdict, Verdict::Failure);
        assert!(!neg.recovery_verified);
    }

    #[test]
    fn oracle_rejects_bad_positions() {
        let mut d = aes_device(true, 11, AddressSpace::Device);
        assert!(d.read_ciphertext(Position::new(16, 0)).is_err());
        assert!(d.read_ciphertext(Position::new(0, 32)).is_err());
        assert!(d.decrypt_at_sector(SectorNumber(99), 0, &[0; 16]).is_err());
        assert_eq!(d.decrypt_queries(), 0);
    }
}
