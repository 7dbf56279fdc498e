//! Collision-risk estimates and compliance checks for an XTS deployment.
//!
//! The risk of two equal cipher inputs among `q` blocks under one key is
//! estimated as `q^2 / 2^n` and reported as a base-2 logarithm. The XEX bound
//! carries an extra factor of 9.5 that does not apply to XTS with a secure
//! block cipher, so it is left out.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyscope::{plan_scopes, Keyring, ScopePolicy};
use crate::xts::{Geometry, MAX_BLOCKS_PER_SECTOR};

/// Hard upper bound on a key scope (blocks) in IEEE 1619-2025.
pub const SCOPE_MAX_LOG2: u32 = 44;
/// Lower end of the IEEE 1619-2025 key-scope range.
pub const SCOPE_STRICT_LOG2: u32 = 36;

const CITE_DATA_UNIT: &str =
    "IEEE 1619-2018 5.1: \"The number of 128-bit blocks within the data unit shall not exceed 2^20\"; NIST SP 800-38E";
const CITE_KEY_SCOPE: &str =
    "IEEE 1619-2025: \"Maximum Number of 128-bit blocks in a key scope = 2^36 to 2^44\"";
const CITE_FIPS_DISTINCT: &str = "FIPS 140-3 IG Annex C.I: XTS-AES keys K and K_T must differ";
const CITE_IEEE_DISTINCT: &str =
    "IEEE 1619 (K = K_T with j = 0 indexation admits a one-query tweak recovery)";
const CITE_KEYRING: &str = "key-scope policy";
const CITE_RISK: &str = "birthday estimate (S*J)^2 / 2^n";

/// log2 of the estimated collision probability `blocks^2 / 2^n`, or negative
/// infinity when `blocks <= 1`.
pub fn collision_probability_log2(blocks: u128, block_bits: u32) -> f64 {
    if blocks <= 1 {
        return f64::NEG_INFINITY;
    }
    2.0 * log2_u128(blocks) - block_bits as f64
}

fn log2_u128(v: u128) -> f64 {
    if v.is_power_of_two() {
        v.trailing_zeros() as f64
    } else {
        (v as f64).log2()
    }
}

/// `2^k` for powers of two, otherwise the number with its approximate log2.
pub fn format_count(v: u128) -> String {
    if v.is_power_of_two() {
        format!("2^{}", v.trailing_zeros())
    } else if v == 0 {
        "0".into()
    } else {
        format!("{v} (~2^{:.2})", log2_u128(v))
    }
}

pub fn format_log2_prob(p: f64) -> String {
    if p == f64::NEG_INFINITY {
        "0 (no collision possible)".into()
    } else if p.fract() == 0.0 {
        format!("2^{p}")
    } else {
        format!("2^{p:.2}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "ieee-2018")]
    Ieee2018,
    #[serde(rename = "ieee-2025")]
    Ieee2025,
    #[serde(rename = "fips-140-3")]
    Fips1403,
    #[serde(rename = "all")]
    All,
}

impl Profile {
    fn includes(self, other: Profile) -> bool {
        self == Profile::All || self == other
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Ieee2018 => "ieee-2018",
            Profile::Ieee2025 => "ieee-2025",
            Profile::Fips1403 => "fips-140-3",
            Profile::All => "all",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ieee-2018" => Ok(Profile::Ieee2018),
            "ieee-2025" => Ok(Profile::Ieee2025),
            "fips-140-3" => Ok(Profile::Fips1403),
            "all" => Ok(Profile::All),
            other => Err(Error::InvalidPolicy(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceFinding {
    pub rule: String,
    pub severity: Severity,
    pub message: String,
    pub citation: String,
}

impl ComplianceFinding {
    fn new(rule: &str, severity: Severity, message: String, citation: &str) -> Self {
        ComplianceFinding {
            rule: rule.into(),
            severity,
            message,
            citation: citation.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub block_bits: u32,
    pub blocks_per_sector: u64,
    pub total_blocks: u128,
    pub keys_needed: u64,
    pub blocks_per_key_worst: u128,
    /// `None` encodes "no collision possible" (at most one block).
    pub collision_prob_log2_per_key: Option<f64>,
    pub collision_prob_log2_device: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditOptions {
    /// Key scopes above 2^threshold blocks draw a warning under ieee-2025.
    pub strict_threshold_log2: u32,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            strict_threshold_log2: SCOPE_STRICT_LOG2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub profile: Profile,
    pub findings: Vec<ComplianceFinding>,
    pub risk: RiskReport,
}

impl AuditReport {
    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn worst_severity(&self) -> Severity {
        self.findings
            .iter()
            .map(|f| f.severity)
            .max()
            .unwrap_or(Severity::Info)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for RiskReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = |v: Option<f64>| format_log2_prob(v.unwrap_or(f64::NEG_INFINITY));
        writeln!(
            f,
            "  blocks (S*J):          {}",
            format_count(self.total_blocks)
        )?;
        writeln!(f, "  keys needed:           {}", self.keys_needed)?;
        writeln!(
            f,
            "  worst blocks per key:  {}",
            format_count(self.blocks_per_key_worst)
        )?;
        writeln!(
            f,
            "  collision risk/key:    {}",
            p(self.collision_prob_log2_per_key)
        )?;
        write!(
            f,
            "  collision risk/device: {} (if one key covered everything)",
            p(self.collision_prob_log2_device)
        )
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "audit profile: {}", self.profile)?;
        for finding in &self.findings {
            writeln!(
                f,
                "[{}] {}: {}\n    ({})",
                finding.severity, finding.rule, finding.message, finding.citation
            )?;
        }
        writeln!(f, "risk:")?;
        writeln!(f, "{}", self.risk)?;
        write!(
            f,
            "verdict: {}",
            if self.has_errors() {
                "NON-COMPLIANT"
            } else {
                "compliant"
            }
        )
    }
}

/// Blocks encrypted by the busiest key, falling back to a direct computation
/// when the policy cannot be planned for this geometry.
fn worst_case(geometry: &Geometry, policy: &ScopePolicy) -> (u64, u128) {
    match plan_scopes(geometry, policy) {
        Ok(plan) => (plan.keys_needed, plan.blocks_per_key_worst),
        Err(_) => match *policy {
            ScopePolicy::Rotating { key_count, .. } if key_count > 0 => (
                key_count,
                geometry.sector_count().div_ceil(key_count) as u128
                    * geometry.blocks_per_sector() as u128,
            ),
            _ => (1, geometry.total_blocks()),
        },
    }
}

pub fn audit_config(
    geometry: &Geometry,
    keyring: &Keyring,
    profile: Profile,
    options: &AuditOptions,
) -> AuditReport {
    let mut findings = Vec::new();
    let block_bits = (geometry.block_bytes() * 8) as u32;
    let j = geometry.blocks_per_sector();

    if keyring.keys.is_empty() {
        findings.push(ComplianceFinding::new(
            "KEYRING-EMPTY",
            Severity::Error,
            "keyring contains no keys".into(),
            CITE_KEYRING,
        ));
    }

    if j > MAX_BLOCKS_PER_SECTOR {
        findings.push(ComplianceFinding::new(
            "DATA-UNIT-SIZE",
            Severity::Error,
            format!(
                "sector of {} bytes holds J = {} blocks, above the limit of 2^20 (16 MiB at 16-byte blocks); \
                 the limit is mandated without a published security rationale",
                geometry.sector_size_bytes(),
                format_count(j as u128)
            ),
            CITE_DATA_UNIT,
        ));
    }

    match plan_scopes(geometry, &keyring.policy) {
        Ok(plan) if !keyring.keys.is_empty() && (keyring.keys.len() as u64) < plan.keys_needed => {
            findings.push(ComplianceFinding::new(
                "KEYRING-COVERAGE",
                Severity::Error,
                format!(
                    "{} policy needs {} keys for {} sectors but the keyring has {}",
                    keyring.policy.name(),
                    plan.keys_needed,
                    geometry.sector_count(),
                    keyring.keys.len()
                ),
                CITE_KEYRING,
            ))
        }
        Ok(_) => {}
        Err(e) => findings.push(ComplianceFinding::new(
            "KEYRING-COVERAGE",
            Severity::Error,
            e.to_string(),
            CITE_KEYRING,
        )),
    }

    let (keys_needed, worst) = worst_case(geometry, &keyring.policy);
    if profile.includes(Profile::Ieee2025) {
        if worst > 1u128 << SCOPE_MAX_LOG2 {
            findings.push(ComplianceFinding::new(
                "KEY-SCOPE-MAX",
                Severity::Error,
                format!(
                    "a key encrypts up to {} blocks, above the 2^{SCOPE_MAX_LOG2} maximum",
                    format_count(worst)
                ),
                CITE_KEY_SCOPE,
            ));
        } else if worst > 1u128 << options.strict_threshold_log2 {
            findings.push(ComplianceFinding::new(
                "KEY-SCOPE-STRICT",
                Severity::Warning,
                format!(
                    "a key encrypts up to {} blocks: within the 2^{SCOPE_MAX_LOG2} maximum but above 2^{}, \
                     which stricter deployments may require",
                    format_count(worst),
                    options.strict_threshold_log2
                ),
                CITE_KEY_SCOPE,
            ));
        }
    }

    let shared: Vec<String> = keyring
        .keys
        .iter()
        .enumerate()
        .filter(|(_, k)| k.keys_equal())
        .map(|(i, _)| i.to_string())
        .collect();
    if !shared.is_empty() {
        let which = format!("key(s) {} use K = K_T", shared.join(", "));
        if profile.includes(Profile::Fips1403) {
            findings.push(ComplianceFinding::new(
                "KEY-DISTINCT",
                Severity::Error,
                format!("{which}; one chosen-ciphertext query then reveals the sector tweak"),
                CITE_FIPS_DISTINCT,
            ));
        } else {
            findings.push(ComplianceFinding::new(
                "KEY-DISTINCT",
                Severity::Warning,
                format!("{which}; combined with j = 0 indexation this allows tweak recovery"),
                CITE_IEEE_DISTINCT,
            ));
        }
    }

    let per_key = collision_probability_log2(worst, block_bits);
    let device = collision_probability_log2(geometry.total_blocks(), block_bits);
    findings.push(ComplianceFinding::new(
        "RISK",
        Severity::Info,
        format!(
            "collision probability per key ~ {}, whole device under one key ~ {}",
            format_log2_prob(per_key),
            format_log2_prob(device)
        ),
        CITE_RISK,
    ));

    AuditReport {
        profile,
        findings,
        risk: RiskReport {
            block_bits,
            blocks_per_sector: j,
            total_blocks: geometry.total_blocks(),
            keys_needed,
            blocks_per_key_worst: worst,
            collision_prob_log2_per_key: finite(per_key),
            collision_prob_log2_device: finite(device),
        },
    }
}
