//! Key scopes: which XTS key encrypts which sector, so that no single key
//! covers more than a given number of blocks.
//!
//! Three policies are supported:
//!
//! * `single`: one key for the whole device.
//! * `linear`: key `i` covers the `i`-th run of `floor(L / J)` sectors. A
//!   sector never straddles two keys, so the usable scope is rounded down to
//!   whole sectors.
//! * `rotating`: sector `N` uses key `N mod m`. The maximum device size must be
//!   declared up front so that `ceil(S_max / m) * J <= L` can be checked.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cipher::{BlockCipher, Cipher, CipherKind};
use crate::error::{Error, Result};
use crate::hexfmt;
use crate::xts::{Geometry, SectorNumber, XtsKey};

pub const DEFAULT_LIMIT_LOG2: u32 = 44;

/// Maximum number of cipher blocks one key may encrypt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScopeLimit(pub u128);

impl ScopeLimit {
    pub fn from_log2(log2: u32) -> Result<Self> {
        if log2 > 127 {
            return Err(Error::InvalidPolicy(format!("limit 2^{log2} is too large")));
        }
        Ok(ScopeLimit(1u128 << log2))
    }

    pub fn blocks(&self) -> u128 {
        self.0
    }

    /// Exact log2 when the limit is a power of two.
    pub fn log2(&self) -> Option<u32> {
        self.0.is_power_of_two().then(|| self.0.trailing_zeros())
    }
}

impl Default for ScopeLimit {
    fn default() -> Self {
        ScopeLimit(1u128 << DEFAULT_LIMIT_LOG2)
    }
}

impl fmt::Display for ScopeLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.log2() {
            Some(l) => write!(f, "2^{l}"),
            None => write!(f, "{}", self.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScopePolicy {
    Single,
    Linear {
        limit: ScopeLimit,
    },
    Rotating {
        limit: ScopeLimit,
        key_count: u64,
        max_sectors: u64,
    },
}

impl ScopePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ScopePolicy::Single => "single",
            ScopePolicy::Linear { .. } => "linear",
            ScopePolicy::Rotating { .. } => "rotating",
        }
    }

    pub fn limit(&self) -> Option<ScopeLimit> {
        match *self {
            ScopePolicy::Single => None,
            ScopePolicy::Linear { limit } | ScopePolicy::Rotating { limit, .. } => Some(limit),
        }
    }
}

impl fmt::Display for ScopePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScopePolicy::Single => f.write_str("single"),
            ScopePolicy::Linear { limit } => write!(f, "linear (L = {limit} blocks)"),
            ScopePolicy::Rotating {
                limit,
                key_count,
                max_sectors,
            } => write!(
                f,
                "rotating (m = {key_count}, S_max = {max_sectors}, L = {limit} blocks)"
            ),
        }
    }
}

fn linear_sectors_per_key(limit: ScopeLimit, geometry: &Geometry) -> Result<u64> {
    let spk = limit.blocks() / geometry.blocks_per_sector() as u128;
    if spk == 0 {
        return Err(Error::InvalidPolicy(format!(
            "linear scope of {limit} blocks is smaller than one sector of {} blocks",
            geometry.blocks_per_sector()
        )));
    }
    Ok(u64::try_from(spk).unwrap_or(u64::MAX))
}

/// Index of the key that encrypts sector `n`.
pub fn key_index(policy: &ScopePolicy, n: SectorNumber, geometry: &Geometry) -> Result<u64> {
    if n.0 >= geometry.sector_count() {
        return Err(Error::SectorOutOfRange {
            sector: n.0,
            sectors: geometry.sector_count(),
        });
    }
    match *policy {
        ScopePolicy::Single => Ok(0),
        ScopePolicy::Linear { limit } => Ok(n.0 / linear_sectors_per_key(limit, geometry)?),
        ScopePolicy::Rotating { key_count, .. } => {
            if key_count == 0 {
                return Err(Error::InvalidPolicy(
                    "rotating policy needs m >= 1 keys".into(),
                ));
            }
            Ok(n.0 % key_count)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopePlan {
    pub policy: ScopePolicy,
    pub geometry: Geometry,
    pub keys_needed: u64,
    /// Largest number of blocks any single key encrypts on this geometry.
    pub blocks_per_key_worst: u128,
    pub sectors_per_key_max: u64,
    pub sectors_per_key_min: u64,
}

/// Rotating-policy bound `ceil(S / m) * J`.
fn rotating_load(sectors: u64, key_count: u64, geometry: &Geometry) -> u128 {
    sectors.div_ceil(key_count) as u128 * geometry.blocks_per_sector() as u128
}

pub fn plan_scopes(geometry: &Geometry, policy: &ScopePolicy) -> Result<ScopePlan> {
    let s = geometry.sector_count();
    let j = geometry.blocks_per_sector() as u128;
    let (keys_needed, max, min) = match *policy {
        ScopePolicy::Single => (1, s, s),
        ScopePolicy::Linear { limit } => {
            let spk = linear_sectors_per_key(limit, geometry)?;
            let keys = s.div_ceil(spk).max(1);
            let last = s - (keys - 1).saturating_mul(spk).min(s);
            (keys, spk.min(s), last)
        }
        ScopePolicy::Rotating {
            limit,
            key_count,
            max_sectors,
        } => {
            if key_count == 0 {
                return Err(Error::InvalidPolicy(
                    "rotating policy needs m >= 1 keys".into(),
                ));
            }
            if s > max_sectors {
                return Err(Error::PlanInfeasible(format!(
                    "S = {s} exceeds the declared maximum of {max_sectors} sectors"
                )));
            }
            let load = rotating_load(max_sectors, key_count, geometry);
            if load > limit.blocks() {
                return Err(Error::PlanInfeasible(format!(
                    "ceil(S/m)*J <= L violated: ceil({max_sectors}/{key_count})*{j} = {load} > {limit}"
                )));
            }
            (key_count, s.div_ceil(key_count), s / key_count)
        }
    };
    Ok(ScopePlan {
        policy: *policy,
        geometry: *geometry,
        keys_needed,
        blocks_per_key_worst: max as u128 * j,
        sectors_per_key_max: max,
        sectors_per_key_min: min,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizeVerdict {
    pub allowed: bool,
    pub keys_before: u64,
    pub keys_after: u64,
    pub keys_added: u64,
    pub keys_removed: u64,
    /// Sectors `0..sectors_keeping_key` keep the key they had before.
    pub sectors_keeping_key: u64,
    pub note: String,
}

pub fn validate_resize(plan: &ScopePlan, old: &Geometry, new: &Geometry) -> Result<ResizeVerdict> {
    if old.sector_size_bytes() != new.sector_size_bytes() || old.block_bytes() != new.block_bytes()
    {
        return Err(Error::UnsupportedResize(format!(
            "sector size changes from {} to {} bytes",
            old.sector_size_bytes(),
            new.sector_size_bytes()
        )));
    }
    let keys_before = plan.keys_needed;
    let kept = old.sector_count().min(new.sector_count());
    match plan.policy {
        ScopePolicy::Single => Ok(ResizeVerdict {
            allowed: true,
            keys_before,
            keys_after: 1,
            keys_added: 0,
            keys_removed: 0,
            sectors_keeping_key: kept,
            note: format!(
                "single key now covers {} blocks; nothing bounds its scope",
                new.total_blocks()
            ),
        }),
        ScopePolicy::Rotating {
            limit,
            key_count,
            max_sectors,
        } => {
            let load = rotating_load(new.sector_count(), key_count.max(1), new);
            if new.sector_count() > max_sectors {
                return Ok(ResizeVerdict {
                    allowed: false,
                    keys_before,
                    keys_after: keys_before,
                    keys_added: 0,
                    keys_removed: 0,
                    sectors_keeping_key: old.sector_count(),
                    note: format!(
                        "S = {} exceeds declared maximum {max_sectors}; the bound ceil(S/m)*J <= L \
                         was only checked up to that maximum (ceil({}/{key_count})*{} = {load}, L = {limit})",
                        new.sector_count(),
                        new.sector_count(),
                        new.blocks_per_sector()
                    ),
                });
            }
            Ok(ResizeVerdict {
                allowed: true,
                keys_before,
                keys_after: key_count,
                keys_added: 0,
                keys_removed: 0,
                sectors_keeping_key: kept,
                note: "N mod m does not depend on S; existing sectors keep their keys".into(),
            })
        }
        ScopePolicy::Linear { .. } => {
            let after = plan_scopes(new, &plan.policy)?;
            Ok(ResizeVerdict {
                allowed: true,
                keys_before,
                keys_after: after.keys_needed,
                keys_added: after.keys_needed.saturating_sub(keys_before),
                keys_removed: keys_before.saturating_sub(after.keys_needed),
                sectors_keeping_key: kept,
                note: "keys are added or dropped at the end; surviving sectors keep their keys"
                    .into(),
            })
        }
    }
}

/// Raw key material for one XTS key.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub data: Vec<u8>,
    pub tweak: Vec<u8>,
}

impl KeyPair {
    pub fn new(data: impl Into<Vec<u8>>, tweak: impl Into<Vec<u8>>) -> Self {
        KeyPair {
            data: data.into(),
            tweak: tweak.into(),
        }
    }

    /// K = K_T.
    pub fn keys_equal(&self) -> bool {
        self.data == self.tweak
    }

    pub fn expand(&self, kind: CipherKind) -> Result<XtsKey<Cipher>> {
        XtsKey::from_bytes(kind, &self.data, &self.tweak)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeyPair(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyring {
    pub policy: ScopePolicy,
    pub keys: Vec<KeyPair>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limit_log2: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_sectors: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyFile {
    k: String,
    kt: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyringFile {
    policy: PolicyFile,
    keys: Vec<KeyFile>,
}

impl Keyring {
    pub fn new(policy: ScopePolicy, keys: Vec<KeyPair>) -> Self {
        Keyring { policy, keys }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KeyringFile =
            serde_json::from_str(text).map_err(|e| Error::KeyringFormat(e.to_string()))?;
        let limit = ScopeLimit::from_log2(file.policy.limit_log2.unwrap_or(DEFAULT_LIMIT_LOG2))?;
        let policy = match file.policy.kind.as_str() {
            "single" => ScopePolicy::Single,
            "linear" => ScopePolicy::Linear { limit },
            "rotating" => ScopePolicy::Rotating {
                limit,
                key_count: file.policy.key_count.unwrap_or(file.keys.len() as u64),
                max_sectors: file.policy.max_sectors.ok_or_else(|| {
                    Error::KeyringFormat("rotating policy requires max_sectors".into())
                })?,
            },
            other => {
                return Err(Error::KeyringFormat(format!(
                    "unknown policy kind {other:?}"
                )))
            }
        };
        let keys = file
            .keys
            .iter()
            .map(|k| Ok(KeyPair::new(hexfmt::decode(&k.k)?, hexfmt::decode(&k.kt)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Keyring { policy, keys })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Keyring::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let (limit_log2, key_count, max_sectors) = match self.policy {
            ScopePolicy::Single => (None, None, None),
            ScopePolicy::Linear { limit } => (limit.log2(), None, None),
            ScopePolicy::Rotating {
                limit,
                key_count,
                max_sectors,
            } => (limit.log2(), Some(key_count), Some(max_sectors)),
        };
        let file = KeyringFile {
            policy: PolicyFile {
                kind: self.policy.name().into(),
                limit_log2,
                key_count,
                max_sectors,
            },
            keys: self
                .keys
                .iter()
                .map(|k| KeyFile {
                    k: hexfmt::encode(&k.data),
                    kt: hexfmt::encode(&k.tweak),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("keyring serializes")
    }

    pub fn resolve(&self, kind: CipherKind) -> Result<ResolvedKeyring<Cipher>> {
        let keys = self
            .keys
            .iter()
            .map(|k| k.expand(kind))
            .collect::<Result<Vec<_>>>()?;
        ResolvedKeyring::new(self.policy, keys)
    }
}

/// A keyring with expanded cipher keys, ready for sector processing.
#[derive(Debug, Clone)]
pub struct ResolvedKeyring<C> {
    policy: ScopePolicy,
    keys: Vec<XtsKey<C>>,
}

impl<C: BlockCipher> ResolvedKeyring<C> {
    pub fn new(policy: ScopePolicy, keys: Vec<XtsKey<C>>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::KeyringTooSmall { have: 0, need: 1 });
        }
        Ok(ResolvedKeyring { policy, keys })
    }

    pub fn single(key: XtsKey<C>) -> Self {
        ResolvedKeyring {
            policy: ScopePolicy::Single,
            keys: vec![key],
        }
    }

    pub fn policy(&self) -> &ScopePolicy {
        &self.policy
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Errors unless the keyring has a key for every sector of `geometry`.
    pub fn check_covers(&self, geometry: &Geometry) -> Result<ScopePlan> {
        let plan = plan_scopes(geometry, &self.policy)?;
        if (self.keys.len() as u64) < plan.keys_needed {
            return Err(Error::KeyringTooSmall {
                have: self.keys.len(),
                need: plan.keys_needed,
            });
        }
        Ok(plan)
    }

    pub fn key_for(&self, n: SectorNumber, geometry: &Geometry) -> Result<&XtsKey<C>> {
        let idx = key_index(&self.policy, n, geometry)?;
        self.keys.get(idx as usize).ok_or(Error::KeyringTooSmall {
            have: self.keys.len(),
            need: idx + 1,
        })
    }
}
