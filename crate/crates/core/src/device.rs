//! Whole-image processing. Every sector is handled independently under the
//! key its scope policy selects, so sectors can be spread over worker threads
//! without changing the output.

use std::io::{ErrorKind, Read, Write};

use rayon::prelude::*;

use crate::cipher::BlockCipher;
use crate::error::{Error, Result};
use crate::keyscope::ResolvedKeyring;
use crate::xts::{process_sector_in_place, Direction, Geometry, SectorNumber};

/// Bytes buffered per batch when streaming.
const STREAM_BATCH_BYTES: usize = 8 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Rayon worker threads; `0` uses rayon's default.
    Threads(usize),
}

impl Parallelism {
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs == 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(jobs)
        }
    }
}

fn process_sectors<C: BlockCipher>(
    buf: &mut [u8],
    first_sector: u64,
    geometry: &Geometry,
    keyring: &ResolvedKeyring<C>,
    direction: Direction,
    parallel: bool,
) -> Result<()> {
    let ss = geometry.sector_size_bytes();
    let work = |(i, sector): (usize, &mut [u8])| -> Result<()> {
        let n = SectorNumber(first_sector + i as u64);
        let key = keyring.key_for(n, geometry)?;
        process_sector_in_place(key, n, sector, direction)
    };
    if parallel {
        buf.par_chunks_mut(ss).enumerate().try_for_each(work)
    } else {
        buf.chunks_mut(ss).enumerate().try_for_each(work)
    }
}

fn build_pool(parallelism: Parallelism) -> Result<Option<rayon::ThreadPool>> {
    match parallelism {
        Parallelism::Sequential => Ok(None),
        Parallelism::Threads(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(Some)
            .map_err(|e| Error::Io(e.to_string())),
    }
}

fn run_batch<C: BlockCipher>(
    pool: Option<&rayon::ThreadPool>,
    buf: &mut [u8],
    first_sector: u64,
    geometry: &Geometry,
    keyring: &ResolvedKeyring<C>,
    direction: Direction,
) -> Result<()> {
    match pool {
        Some(pool) => {
            pool.install(|| process_sectors(buf, first_sector, geometry, keyring, direction, true))
        }
        None => process_sectors(buf, first_sector, geometry, keyring, direction, false),
    }
}

/// Encrypts or decrypts an in-memory image in place. `image.len()` must be
/// exactly `S * sector_size`.
pub fn process_image<C: BlockCipher>(
    image: &mut [u8],
    geometry: &Geometry,
    keyring: &ResolvedKeyring<C>,
    direction: Direction,
    parallelism: Parallelism,
) -> Result<()> {
    if image.len() as u128 != geometry.total_bytes() {
        return Err(Error::ImageSize {
            len: image.len() as u64,
            sector_size: geometry.sector_size_bytes(),
        });
    }
    keyring.check_covers(geometry)?;
    let pool = build_pool(parallelism)?;
    run_batch(pool.as_ref(), image, 0, geometry, keyring, direction)
}

fn read_full(reader: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Streams an image of exactly `geometry.sector_count()` sectors from
/// `reader` to `writer` in fixed-size batches. Returns the number of sectors
/// processed.
pub fn process_stream<C: BlockCipher, R: Read, W: Write>(
    mut reader: R,
    mut writer: W,
    geometry: &Geometry,
    keyring: &ResolvedKeyring<C>,
    direction: Direction,
    parallelism: Parallelism,
) -> Result<u64> {
    keyring.check_covers(geometry)?;
    let ss = geometry.sector_size_bytes();
    let batch_sectors = (STREAM_BATCH_BYTES / ss).max(1);
    let mut buf = vec![0u8; batch_sectors * ss];
    let mut done: u64 = 0;
    let pool = build_pool(parallelism)?;
    loop {
        let got = read_full(&mut reader, &mut buf)?;
        if got == 0 {
            break;
        }
        let total = done as u128 * ss as u128 + got as u128;
        if got % ss != 0 || total > geometry.total_bytes() {
            return Err(Error::ImageSize {
                len: total as u64,
                sector_size: ss,
            });
        }
        let chunk = &mut buf[..got];
        run_batch(pool.as_ref(), chunk, done, geometry, keyring, direction)?;
        writer.write_all(chunk)?;
        done += (got / ss) as u64;
    }
    if done != geometry.sector_count() {
        return Err(Error::ImageSize {
            len: done * ss as u64,
            sector_size: ss,
        });
    }
    writer.flush()?;
    Ok(done)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::CipherKind;
    use crate::keyscope::{KeyPair, ScopeLimit, ScopePolicy};
    use crate::xts::{encrypt_sector, XtsKey};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_ring() -> ResolvedKeyring<crate::cipher::Cipher> {
        ResolvedKeyring::single(
            XtsKey::from_bytes(CipherKind::Aes128, &[0x11; 16], &[0x22; 16]).unwrap(),
        )
    }

    #[test]
    fn published_vector_inside_a_device() {
        let g = Geometry::aes(32, 2).unwrap();
        let mut image = vec![0u8; 64];
        image[32..48].fill(0x44);
        image[48..].fill(0x88);
        let original = image.clone();
        process_image(
            &mut image,
            &g,
            &reference_ring(),
            Direction::Encrypt,
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(
            hex::encode(&image[32..]),
            "74a24eb9b1b6ac5e3f95ca359b8d158565093d6dfc46548f0a9b57d5d76dc64e"
        );
        let key = XtsKey::from_bytes(CipherKind::Aes128, &[0x11; 16], &[0x22; 16]).unwrap();
        assert_eq!(
            image[..32],
            encrypt_sector(&key, SectorNumber(0), &original[..32]).unwrap()[..]
        );
        process_image(
            &mut image,
            &g,
            &reference_ring(),
            Direction::Decrypt,
            Parallelism::Threads(2),
        )
        .unwrap();
        assert_eq!(image, original);
    }

    #[test]
    fn parallel_equals_sequential_with_rotating_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Geometry::aes(512, 64).unwrap();
        let keys = (0..3)
            .map(|_| {
                KeyPair::new(rng.random::<[u8; 16]>(), rng.random::<[u8; 16]>())
                    .expand(CipherKind::Aes128)
                    .unwrap()
            })
            .collect();
        let policy = ScopePolicy::Rotating {
            limit: ScopeLimit::from_log2(20).unwrap(),
            key_count: 3,
            max_sectors: 64,
        };
        let ring = ResolvedKeyring::new(policy, keys).unwrap();
        let mut a = vec![0u8; 512 * 64];
        rng.fill(&mut a[..]);
        let mut b = a.clone();
        process_image(
            &mut a,
            &g,
            &ring,
            Direction::Encrypt,
            Parallelism::Sequential,
        )
        .unwrap();
        process_image(
            &mut b,
            &g,
            &ring,
            Direction::Encrypt,
            Parallelism::Threads(8),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stream_matches_in_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let g = Geometry::aes(4096, 3000).unwrap();
        let mut image = vec![0u8; 4096 * 3000];
        rng.fill(&mut image[..]);
        let mut out = Vec::new();
        let n = process_stream(
            &image[..],
            &mut out,
            &g,
            &reference_ring(),
            Direction::Encrypt,
            Parallelism::Threads(4),
        )
        .unwrap();
        assert_eq!(n, 3000);
        process_image(
            &mut image,
            &g,
            &reference_ring(),
            Direction::Encrypt,
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(out, image);
    }

    #[test]
    fn size_mismatches() {
        let g = Geometry::aes(512, 4).unwrap();
        let mut short = vec![0u8; 512 * 3];
        assert!(matches!(
            process_image(
                &mut short,
                &g,
                &reference_ring(),
                Direction::Encrypt,
                Parallelism::Sequential
            ),
            Err(Error::ImageSize { .. })
        ));
        let mut out = Vec::new();
        assert!(process_stream(
            &short[..],
            &mut out,
            &g,
            &reference_ring(),
            Direction::Encrypt,
            Parallelism::Sequential
        )
        .is_err());
        let ragged = vec![0u8; 512 * 4 + 3];
        assert!(process_stream(
            &ragged[..],
            &mut out,
            &g,
            &reference_ring(),
            Direction::Encrypt,
            Parallelism::Sequential
        )
        .is_err());
    }

    #[test]
    fn keyring_must_cover_device() {
        let g = Geometry::aes(512, 8).unwrap();
        let key = XtsKey::from_bytes(CipherKind::Aes128, &[1; 16], &[2; 16]).unwrap();
        let policy = ScopePolicy::Linear {
            limit: ScopeLimit::from_log2(7).unwrap(),
        };
        let ring = ResolvedKeyring::new(policy, vec![key]).unwrap();
        let mut image = vec![0u8; 512 * 8];
        assert!(matches!(
            process_image(
                &mut image,
                &g,
                &ring,
                Direction::Encrypt,
                Parallelism::Sequential
            ),
            Err(Error::KeyringTooSmall { have: 1, need: 2 })
        ));
    }
}
