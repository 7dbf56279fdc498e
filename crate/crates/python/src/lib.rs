//! Python bindings for `xtscope`.
//!
//! Structured results (plans, audit reports, demo runs) are returned as
//! plain dicts decoded from the library's JSON forms.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use xtscope::attacklab::{
    run_collision_attack, run_tweak_recovery_attack, AddressSpace, CollisionParams,
    TweakRecoveryParams,
};
use xtscope::audit::{audit_config, AuditOptions, Profile};
use xtscope::cipher::{Cipher, CipherKind};
use xtscope::device::{process_image, Parallelism};
use xtscope::gf::{self, FieldElement, FieldSpec};
use xtscope::keyscope::{self, Keyring, ScopeLimit, ScopePolicy};
use xtscope::xts::{self, Direction, Geometry, SectorNumber, XtsKey};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kind(name: &str) -> PyResult<CipherKind> {
    name.parse().map_err(err)
}

fn from_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn field(width_bits: usize) -> PyResult<FieldSpec> {
    if width_bits == 128 {
        Ok(FieldSpec::GF128)
    } else {
        FieldSpec::toy(width_bits).map_err(err)
    }
}

/// Multiplies a little-endian field element by alpha.
#[pyfunction]
#[pyo3(signature = (block, width_bits = 128))]
fn mul_alpha<'py>(
    py: Python<'py>,
    block: &[u8],
    width_bits: usize,
) -> PyResult<Bound<'py, PyBytes>> {
    let out = gf::mul_alpha(&FieldElement::from_bytes(block), &field(width_bits)?).map_err(err)?;
    Ok(PyBytes::new(py, out.as_bytes()))
}

/// Full field multiplication.
#[pyfunction]
#[pyo3(signature = (a, b, width_bits = 128))]
fn gf_mul<'py>(
    py: Python<'py>,
    a: &[u8],
    b: &[u8],
    width_bits: usize,
) -> PyResult<Bound<'py, PyBytes>> {
    let out = gf::mul(
        &FieldElement::from_bytes(a),
        &FieldElement::from_bytes(b),
        &field(width_bits)?,
    )
    .map_err(err)?;
    Ok(PyBytes::new(py, out.as_bytes()))
}

/// log2 of the birthday collision estimate `blocks^2 / 2^bits`.
#[pyfunction]
#[pyo3(signature = (blocks, block_bits = 128))]
fn collision_probability_log2(blocks: u128, block_bits: u32) -> f64 {
    xtscope::audit::collision_probability_log2(blocks, block_bits)
}

/// One XTS key pair (data key and tweak key).
#[pyclass(frozen)]
struct Xts {
    key: XtsKey<Cipher>,
}

#[pymethods]
impl Xts {
    #[new]
    #[pyo3(signature = (key, tweak_key, cipher = "aes128"))]
    fn new(key: &[u8], tweak_key: &[u8], cipher: &str) -> PyResult<Self> {
        Ok(Xts {
            key: XtsKey::from_bytes(kind(cipher)?, key, tweak_key).map_err(err)?,
        })
    }

    #[getter]
    fn block_bytes(&self) -> usize {
        self.key.block_bytes()
    }

    fn encrypt_sector<'py>(
        &self,
        py: Python<'py>,
        sector: u64,
        data: &[u8],
    ) -> PyResult<Bound<'py, PyBytes>> {
        let out = xts::encrypt_sector(&self.key, SectorNumber(sector), data).map_err(err)?;
        Ok(PyBytes::new(py, &out))
    }

    fn decrypt_sector<'py>(
        &self,
        py: Python<'py>,
        sector: u64,
        data: &[u8],
    ) -> PyResult<Bound<'py, PyBytes>> {
        let out = xts::decrypt_sector(&self.key, SectorNumber(sector), data).map_err(err)?;
        Ok(PyBytes::new(py, &out))
    }

    /// Tweaks `T_{N,0} .. T_{N,count-1}`.
    fn tweak_schedule<'py>(
        &self,
        py: Python<'py>,
        sector: u64,
        count: u64,
    ) -> PyResult<Vec<Bound<'py, PyBytes>>> {
        let s = xts::tweak_schedule(self.key.tweak_cipher(), SectorNumber(sector), count)
            .map_err(err)?;
        Ok(s.tweaks
            .iter()
            .map(|t| PyBytes::new(py, t.as_bytes()))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Xts(block_bytes={}, keys=<hidden>)", self.key.block_bytes())
    }
}

fn policy(
    name: &str,
    limit_log2: u32,
    key_count: Option<u64>,
    max_sectors: Option<u64>,
    sectors: u64,
) -> PyResult<ScopePolicy> {
    let limit = ScopeLimit::from_log2(limit_log2).map_err(err)?;
    match name {
        "single" => Ok(ScopePolicy::Single),
        "linear" => Ok(ScopePolicy::Linear { limit }),
        "rotating" => Ok(ScopePolicy::Rotating {
            limit,
            key_count: key_count.ok_or_else(|| err("rotating policy needs key_count"))?,
            max_sectors: max_sectors.unwrap_or(sectors),
        }),
        other => Err(err(format!("unknown policy {other:?}"))),
    }
}

/// Keys needed and worst-case blocks per key for a policy on a device.
#[pyfunction]
#[pyo3(signature = (sectors, sector_size, policy_name, limit_log2 = 44, key_count = None, max_sectors = None, cipher = "aes128"))]
#[allow(clippy::too_many_arguments)]
fn plan_scopes<'py>(
    py: Python<'py>,
    sectors: u64,
    sector_size: usize,
    policy_name: &str,
    limit_log2: u32,
    key_count: Option<u64>,
    max_sectors: Option<u64>,
    cipher: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let g = Geometry::new(sector_size, sectors, kind(cipher)?.block_bytes()).map_err(err)?;
    let p = policy(policy_name, limit_log2, key_count, max_sectors, sectors)?;
    let plan = keyscope::plan_scopes(&g, &p).map_err(err)?;
    from_json(py, &serde_json::to_string(&plan).map_err(err)?)
}

/// Index of the key that encrypts `sector`.
#[pyfunction]
#[pyo3(signature = (sector, sectors, sector_size, policy_name, limit_log2 = 44, key_count = None, max_sectors = None))]
fn key_index(
    sector: u64,
    sectors: u64,
    sector_size: usize,
    policy_name: &str,
    limit_log2: u32,
    key_count: Option<u64>,
    max_sectors: Option<u64>,
) -> PyResult<u64> {
    let g = Geometry::aes(sector_size, sectors).map_err(err)?;
    let p = policy(policy_name, limit_log2, key_count, max_sectors, sectors)?;
    keyscope::key_index(&p, SectorNumber(sector), &g).map_err(err)
}

/// Audits a device of `sectors` sectors against a keyring given as JSON.
#[pyfunction]
#[pyo3(signature = (sectors, sector_size, keyring_json, profile = "all", strict_log2 = 36, cipher = "aes128"))]
fn audit<'py>(
    py: Python<'py>,
    sectors: u64,
    sector_size: usize,
    keyring_json: &str,
    profile: &str,
    strict_log2: u32,
    cipher: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let g = Geometry::new(sector_size, sectors, kind(cipher)?.block_bytes()).map_err(err)?;
    let ring = Keyring::from_json(keyring_json).map_err(err)?;
    let profile: Profile = profile.parse().map_err(err)?;
    let report = audit_config(
        &g,
        &ring,
        profile,
        &AuditOptions {
            strict_threshold_log2: strict_log2,
        },
    );
    from_json(py, &report.to_json())
}

fn process<'py>(
    py: Python<'py>,
    data: &[u8],
    sector_size: usize,
    keyring_json: &str,
    cipher: &str,
    jobs: usize,
    direction: Direction,
) -> PyResult<Bound<'py, PyBytes>> {
    let kind = kind(cipher)?;
    if sector_size == 0 || !data.len().is_multiple_of(sector_size) {
        return Err(err(format!(
            "image of {} bytes is not a multiple of the {sector_size}-byte sector size",
            data.len()
        )));
    }
    let g = Geometry::new(
        sector_size,
        (data.len() / sector_size) as u64,
        kind.block_bytes(),
    )
    .map_err(err)?;
    let ring = Keyring::from_json(keyring_json)
        .and_then(|r| r.resolve(kind))
        .map_err(err)?;
    let mut buf = data.to_vec();
    py.detach(|| process_image(&mut buf, &g, &ring, direction, Parallelism::from_jobs(jobs)))
        .map_err(err)?;
    Ok(PyBytes::new(py, &buf))
}

/// Encrypts a whole image under a keyring (JSON).
#[pyfunction]
#[pyo3(signature = (data, sector_size, keyring_json, cipher = "aes128", jobs = 0))]
fn encrypt_image<'py>(
    py: Python<'py>,
    data: &[u8],
    sector_size: usize,
    keyring_json: &str,
    cipher: &str,
    jobs: usize,
) -> PyResult<Bound<'py, PyBytes>> {
    process(
        py,
        data,
        sector_size,
        keyring_json,
        cipher,
        jobs,
        Direction::Encrypt,
    )
}

#[pyfunction]
#[pyo3(signature = (data, sector_size, keyring_json, cipher = "aes128", jobs = 0))]
fn decrypt_image<'py>(
    py: Python<'py>,
    data: &[u8],
    sector_size: usize,
    keyring_json: &str,
    cipher: &str,
    jobs: usize,
) -> PyResult<Bound<'py, PyBytes>> {
    process(
        py,
        data,
        sector_size,
        keyring_json,
        cipher,
        jobs,
        Direction::Decrypt,
    )
}

/// Birthday-collision forgery on a toy-cipher device.
#[pyfunction]
#[pyo3(signature = (width_bits = 16, sectors = 256, blocks_per_sector = 16, seed = 42))]
fn demo_collision(
    py: Python<'_>,
    width_bits: usize,
    sectors: u64,
    blocks_per_sector: u64,
    seed: u64,
) -> PyResult<Bound<'_, PyAny>> {
    let run = run_collision_attack(CollisionParams {
        width_bits,
        sectors,
        blocks_per_sector,
        seed,
    })
    .map_err(err)?;
    from_json(py, &serde_json::to_string(&run).map_err(err)?)
}

/// Tweak recovery and forgery on an AES device, `K = K_T` unless
/// `distinct_keys`. `bounded` restricts sector addresses to `0..sectors`.
#[pyfunction]
#[pyo3(signature = (sector = 3, block = 2, target = None, distinct_keys = false, seed = 42, sectors = 16, sector_size = 512, bounded = false))]
#[allow(clippy::too_many_arguments)]
fn demo_tweak_recovery<'py>(
    py: Python<'py>,
    sector: u64,
    block: u64,
    target: Option<Vec<u8>>,
    distinct_keys: bool,
    seed: u64,
    sectors: u64,
    sector_size: usize,
    bounded: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let run = run_tweak_recovery_attack(TweakRecoveryParams {
        sector,
        block,
        target,
        distinct_keys,
        seed,
        sectors,
        sector_size,
        address_space: if bounded {
            AddressSpace::Device
        } else {
            AddressSpace::Unbounded
        },
    })
    .map_err(err)?;
    from_json(py, &serde_json::to_string(&run).map_err(err)?)
}

#[pymodule]
fn xtscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Xts>()?;
    m.add_function(wrap_pyfunction!(mul_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(gf_mul, m)?)?;
    m.add_function(wrap_pyfunction!(collision_probability_log2, m)?)?;
    m.add_function(wrap_pyfunction!(plan_scopes, m)?)?;
    m.add_function(wrap_pyfunction!(key_index, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(encrypt_image, m)?)?;
    m.add_function(wrap_pyfunction!(decrypt_image, m)?)?;
    m.add_function(wrap_pyfunction!(demo_collision, m)?)?;
    m.add_function(wrap_pyfunction!(demo_tweak_recovery, m)?)?;
    Ok(())
}
