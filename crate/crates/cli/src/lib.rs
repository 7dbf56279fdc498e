//! `xtscope` command-line interface.
//!
//! Exit codes: 0 success or clean audit, 1 audit errors or a demonstrated
//! attack failure, 2 usage or I/O error, 3 internal contract violation.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use xtscope::attacklab::{
    run_collision_attack, run_tweak_recovery_attack, AddressSpace, CollisionParams,
    TweakRecoveryParams, Verdict,
};
use xtscope::audit::{
    audit_config, collision_probability_log2, format_count, format_log2_prob, AuditOptions,
    AuditReport, Profile, Severity, SCOPE_STRICT_LOG2,
};
use xtscope::cipher::CipherKind;
use xtscope::device::{process_stream, Parallelism};
use xtscope::hexfmt;
use xtscope::keyscope::{plan_scopes, validate_resize, Keyring, ScopeLimit, ScopePolicy};
use xtscope::xts::{Direction, Geometry};
use xtscope::Error;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub mod units;
pub mod vector;

use units::{format_size, parse_count, parse_size};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Findings = 1,
    Usage = 2,
    Contract = 3,
}

impl ExitCode {
    fn for_error(e: &Error) -> Self {
        match e {
            Error::LengthMismatch { .. } | Error::NotACollision(_) => ExitCode::Contract,
            _ => ExitCode::Usage,
        }
    }
}

/// A failed command: the exit code plus a message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: ExitCode,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: ExitCode::Usage,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: ExitCode::for_error(&e),
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "xtscope",
    version,
    about = "XTS sector encryption with key-scope planning and auditing"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encrypt a raw image sector by sector.
    Encrypt(ImageArgs),
    /// Decrypt a raw image sector by sector.
    Decrypt(ImageArgs),
    /// Check a device configuration against a compliance profile.
    Audit(AuditArgs),
    /// Compute how many keys a scope policy needs for a device.
    Plan(PlanArgs),
    /// Run an attack demonstration.
    #[command(subcommand)]
    Demo(Demo),
    /// Recompute the published AES-XTS-128 example and check every value.
    Vector(VectorArgs),
}

#[derive(Debug, Args)]
struct ImageArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    keyring: PathBuf,
    /// Sector size in bytes; IEC suffixes allowed (e.g. 4KiB).
    #[arg(long, value_parser = parse_size)]
    sector_size: u64,
    #[arg(long, default_value = "aes128")]
    cipher: CipherKind,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Profile for the pre-flight audit.
    #[arg(long, default_value = "all")]
    profile: Profile,
    /// Proceed even if the pre-flight audit reports errors.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    show_keys: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Sector count S; accepts `2^k`.
    #[arg(long, value_parser = parse_count)]
    sectors: u64,
    #[arg(long, value_parser = parse_size)]
    sector_size: u64,
    #[arg(long)]
    keyring: PathBuf,
    #[arg(long, default_value = "all")]
    profile: Profile,
    /// Block width comes from the cipher.
    #[arg(long, default_value = "aes128")]
    cipher: CipherKind,
    /// Scope above 2^this many blocks draws a warning.
    #[arg(long, default_value_t = SCOPE_STRICT_LOG2)]
    strict_log2: u32,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long, value_parser = parse_count)]
    sectors: u64,
    #[arg(long, value_parser = parse_size)]
    sector_size: u64,
    #[arg(long, value_parser = ["single", "linear", "rotating"])]
    policy: String,
    #[arg(long, default_value_t = xtscope::keyscope::DEFAULT_LIMIT_LOG2)]
    limit_log2: u32,
    /// Rotating policy: number of keys m.
    #[arg(long)]
    key_count: Option<u64>,
    /// Rotating policy: largest sector count the device may grow to.
    /// Defaults to the current sector count.
    #[arg(long, value_parser = parse_count)]
    max_sectors: Option<u64>,
    /// Sector count to evaluate a resize against; defaults to 2S.
    #[arg(long, value_parser = parse_count)]
    resize_to: Option<u64>,
    #[arg(long, default_value = "aes128")]
    cipher: CipherKind,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Demo {
    /// Birthday collision on P ^ T followed by a forgery (toy cipher).
    Collision(CollisionArgs),
    /// Tweak recovery and forgery on an AES device with K = K_T.
    TweakRecovery(TweakRecoveryArgs),
}

#[derive(Debug, Args)]
struct CollisionArgs {
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    sectors: u64,
    #[arg(long, default_value_t = 16)]
    blocks_per_sector: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct TweakRecoveryArgs {
    #[arg(long, default_value_t = 3)]
    sector: u64,
    #[arg(long, default_value_t = 2)]
    block: u64,
    /// Chosen plaintext for the forged block (16 bytes hex); random if absent.
    #[arg(long)]
    target: Option<String>,
    /// Use K != K_T (negative control).
    #[arg(long)]
    distinct_keys: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    sectors: u64,
    #[arg(long, value_parser = parse_size, default_value = "512")]
    sector_size: u64,
    /// `unbounded` accepts any block as a sector address; `device` only 0..S.
    #[arg(long, default_value = "unbounded", value_parser = parse_address_space)]
    address_space: AddressSpace,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct VectorArgs {
    #[arg(long, default_value = "aes128")]
    cipher: CipherKind,
    #[arg(long)]
    show_keys: bool,
    #[arg(long, hide = true)]
    tamper_expected: bool,
}

fn parse_address_space(s: &str) -> Result<AddressSpace, String> {
    match s {
        "unbounded" => Ok(AddressSpace::Unbounded),
        "device" => Ok(AddressSpace::Device),
        other => Err(format!(
            "unknown address space {other:?} (expected unbounded or device)"
        )),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ExitCode::Usage
            } else {
                ExitCode::Success
            };
            let _ = e.print();
            return code as i32;
        }
    };
    let result = match cli.command {
        Command::Encrypt(a) => cmd_image(a, Direction::Encrypt),
        Command::Decrypt(a) => cmd_image(a, Direction::Decrypt),
        Command::Audit(a) => cmd_audit(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Demo(Demo::Collision(a)) => cmd_collision(a),
        Command::Demo(Demo::TweakRecovery(a)) => cmd_tweak_recovery(a),
        Command::Vector(a) => cmd_vector(a),
    };
    match result {
        Ok(code) => code as i32,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code as i32
        }
    }
}

fn sector_size(bytes: u64) -> Result<usize, Failure> {
    usize::try_from(bytes).map_err(|_| Failure::usage(format!("sector size {bytes} is too large")))
}

fn load_keyring(path: &PathBuf) -> Result<Keyring, Failure> {
    let ring = Keyring::load(path)?;
    if ring.keys.is_empty() {
        return Err(Failure::usage(format!(
            "keyring {} contains no keys",
            path.display()
        )));
    }
    Ok(ring)
}

fn print_audit(report: &AuditReport, forced: bool) {
    if !forced {
        out!("{report}");
        return;
    }
    let mut shown = report.clone();
    for f in shown
        .findings
        .iter_mut()
        .filter(|f| f.severity == Severity::Error)
    {
        f.severity = Severity::Warning;
        f.message = format!("(error downgraded by --force) {}", f.message);
    }
    out!("{shown}");
}

fn cmd_image(a: ImageArgs, direction: Direction) -> CmdResult {
    let ss = sector_size(a.sector_size)?;
    let file =
        File::open(&a.image).map_err(|e| Failure::usage(format!("{}: {e}", a.image.display())))?;
    let len = file
        .metadata()
        .map_err(|e| Failure::usage(format!("{}: {e}", a.image.display())))?
        .len();
    if ss == 0 || len % ss as u64 != 0 {
        return Err(Failure::usage(format!(
            "image {} is {len} bytes, not a multiple of the {ss}-byte sector size",
            a.image.display()
        )));
    }
    let ring = load_keyring(&a.keyring)?;
    let geometry = Geometry::new(ss, len / ss as u64, a.cipher.block_bytes())?;

    out!(
        "geometry: S = {} sectors of {} (J = {} blocks of {} bytes), {} total",
        geometry.sector_count(),
        format_size(ss as u128),
        geometry.blocks_per_sector(),
        geometry.block_bytes(),
        format_size(geometry.total_bytes())
    );
    out!("cipher: {}", a.cipher);
    out!("policy: {}", ring.policy);

    let report = audit_config(&geometry, &ring, a.profile, &AuditOptions::default());
    print_audit(&report, a.force);
    if report.has_errors() && !a.force {
        eprintln!("pre-flight audit failed; nothing written (use --force to override)");
        return Ok(ExitCode::Findings);
    }

    let resolved = ring.resolve(a.cipher)?;
    let plan = resolved.check_covers(&geometry)?;
    out!(
        "keys used: {} of {} in the keyring (indices 0..{})",
        plan.keys_needed,
        ring.keys.len(),
        plan.keys_needed.saturating_sub(1)
    );
    if a.show_keys {
        for (i, k) in ring.keys.iter().take(plan.keys_needed as usize).enumerate() {
            out!(
                "  key {i}: K = {}  K_T = {}",
                hexfmt::encode(&k.data),
                hexfmt::encode(&k.tweak)
            );
        }
    }

    let reader = BufReader::new(file);
    let out =
        File::create(&a.out).map_err(|e| Failure::usage(format!("{}: {e}", a.out.display())))?;
    let writer = BufWriter::new(out);
    let done = process_stream(
        reader,
        writer,
        &geometry,
        &resolved,
        direction,
        Parallelism::from_jobs(a.jobs),
    )?;
    let verb = match direction {
        Direction::Encrypt => "encrypted",
        Direction::Decrypt => "decrypted",
    };
    out!("{verb} {done} sectors to {}", a.out.display());
    Ok(ExitCode::Success)
}

fn cmd_audit(a: AuditArgs) -> CmdResult {
    let ss = sector_size(a.sector_size)?;
    let ring = load_keyring(&a.keyring)?;
    let geometry = Geometry::new(ss, a.sectors, a.cipher.block_bytes())?;
    let options = AuditOptions {
        strict_threshold_log2: a.strict_log2,
    };
    let report = audit_config(&geometry, &ring, a.profile, &options);
    if a.json {
        out!("{}", report.to_json());
    } else {
        out!("{report}");
    }
    Ok(if report.has_errors() {
        ExitCode::Findings
    } else {
        ExitCode::Success
    })
}

fn cmd_plan(a: PlanArgs) -> CmdResult {
    let ss = sector_size(a.sector_size)?;
    let geometry = Geometry::new(ss, a.sectors, a.cipher.block_bytes())?;
    let limit = ScopeLimit::from_log2(a.limit_log2)?;
    let policy = match a.policy.as_str() {
        "single" => ScopePolicy::Single,
        "linear" => ScopePolicy::Linear { limit },
        _ => ScopePolicy::Rotating {
            limit,
            key_count: a
                .key_count
                .ok_or_else(|| Failure::usage("rotating policy needs --key-count"))?,
            max_sectors: a.max_sectors.unwrap_or(a.sectors),
        },
    };
    let plan = plan_scopes(&geometry, &policy)?;
    let resized = geometry.with_sector_count(a.resize_to.unwrap_or(a.sectors.saturating_mul(2)));
    let resize = validate_resize(&plan, &geometry, &resized)?;
    let bits = (geometry.block_bytes() * 8) as u32;
    let risk_per_key = collision_probability_log2(plan.blocks_per_key_worst, bits);
    let single_over_limit =
        matches!(policy, ScopePolicy::Single) && plan.blocks_per_key_worst > limit.blocks();

    if a.json {
        let value = json!({
            "plan": plan,
            "collision_prob_log2_per_key": risk_per_key.is_finite().then_some(risk_per_key),
            "exceeds_limit": single_over_limit,
            "resize": {
                "to_sectors": resized.sector_count(),
                "verdict": resize,
            },
        });
        out!(
            "{}",
            serde_json::to_string_pretty(&value).expect("plan serializes")
        );
        return Ok(ExitCode::Success);
    }
    out!(
        "device: S = {} sectors of {}, J = {} blocks, {} blocks total ({})",
        plan.geometry.sector_count(),
        format_size(ss as u128),
        plan.geometry.blocks_per_sector(),
        format_count(plan.geometry.total_blocks()),
        format_size(plan.geometry.total_bytes())
    );
    out!("policy: {policy}");
    out!("keys needed: {}", plan.keys_needed);
    out!(
        "blocks per key (worst case): {} ({} sectors)",
        format_count(plan.blocks_per_key_worst),
        plan.sectors_per_key_max
    );
    if plan.sectors_per_key_min != plan.sectors_per_key_max {
        out!("fewest sectors on one key: {}", plan.sectors_per_key_min);
    }
    out!("collision risk per key: {}", format_log2_prob(risk_per_key));
    if single_over_limit {
        out!("note: a single key covers more than L = {limit} blocks; consider linear or rotating");
    }
    out!(
        "resize to S = {}: {} (keys {} -> {}, sectors 0..{} keep their key)",
        resized.sector_count(),
        if resize.allowed {
            "allowed"
        } else {
            "NOT allowed"
        },
        resize.keys_before,
        resize.keys_after,
        resize.sectors_keeping_key
    );
    out!("  {}", resize.note);
    Ok(ExitCode::Success)
}

fn verdict_code(v: Verdict) -> ExitCode {
    match v {
        Verdict::Success => ExitCode::Success,
        Verdict::Failure | Verdict::OutOfAddressSpace => ExitCode::Findings,
    }
}

fn cmd_collision(a: CollisionArgs) -> CmdResult {
    let run = run_collision_attack(CollisionParams {
        width_bits: a.width,
        sectors: a.sectors,
        blocks_per_sector: a.blocks_per_sector,
        seed: a.seed,
    })?;
    if a.json {
        out!(
            "{}",
            serde_json::to_string_pretty(&run).expect("run serializes")
        );
        return Ok(verdict_code(run.verdict));
    }
    out!(
        "toy XTS, n = {} bits, S = {}, J = {}, seed = {}",
        a.width,
        a.sectors,
        a.blocks_per_sector,
        a.seed
    );
    out!(
        "positions: {}, colliding pairs: {} (expected q(q-1)/2^{} = {:.2})",
        run.positions,
        run.colliding_pairs,
        a.width + 1,
        run.expected_pairs
    );
    match run.collision {
        Some((p, q)) => out!("first collision: P ^ T equal at {p} and {q}"),
        None => out!("no collision among the positions"),
    }
    if let Some(f) = &run.forgery {
        out!(
            "forged {} to decrypt to {}: ciphertext {}",
            f.forged.position,
            hexfmt::encode(&f.forged.target),
            hexfmt::encode(&f.forged.ciphertext)
        );
        out!(
            "queries: {} encrypt, {} decrypt",
            f.encrypt_queries,
            f.decrypt_queries
        );
    }
    out!("transcript:");
    for q in &run.transcript {
        out!("  {q}");
    }
    out!("verdict: {}", run.verdict);
    Ok(verdict_code(run.verdict))
}

fn cmd_tweak_recovery(a: TweakRecoveryArgs) -> CmdResult {
    let target = a
        .target
        .as_deref()
        .map(|t| hexfmt::decode_exact(t, 16))
        .transpose()
        .map_err(|e| Failure::usage(format!("--target must be 16 bytes of hex: {e}")))?;
    let run = run_tweak_recovery_attack(TweakRecoveryParams {
        sector: a.sector,
        block: a.block,
        target,
        distinct_keys: a.distinct_keys,
        seed: a.seed,
        sectors: a.sectors,
        sector_size: sector_size(a.sector_size)?,
        address_space: a.address_space,
    })?;
    if a.json {
        out!(
            "{}",
            serde_json::to_string_pretty(&run).expect("run serializes")
        );
        return Ok(verdict_code(run.verdict));
    }
    out!(
        "AES-128 XTS device, S = {}, {}, address space: {}",
        a.sectors,
        if run.shared_key {
            "K = K_T"
        } else {
            "K != K_T"
        },
        match a.address_space {
            AddressSpace::Unbounded => "unbounded",
            AddressSpace::Device => "device sectors only",
        }
    );
    out!(
        "recovered T_{{{},0}} = {} using {} decryption quer{} ({})",
        a.sector,
        hexfmt::encode(&run.recovered_tweak),
        run.recovery_decrypt_queries,
        if run.recovery_decrypt_queries == 1 {
            "y"
        } else {
            "ies"
        },
        if run.recovery_verified {
            "matches the true tweak"
        } else {
            "does NOT match the true tweak"
        }
    );
    if let Some(f) = &run.forgery {
        out!(
            "forged {} to decrypt to {}: ciphertext {}",
            f.forged.position,
            hexfmt::encode(&f.forged.target),
            hexfmt::encode(&f.forged.ciphertext)
        );
        out!(
            "forgery queries: {} encrypt, {} decrypt; forgery {}",
            f.encrypt_queries,
            f.decrypt_queries,
            if f.verified { "verified" } else { "rejected" }
        );
    }
    out!("decryption queries in total: {}", run.total_decrypt_queries);
    out!("transcript:");
    for q in &run.transcript {
        out!("  {q}");
    }
    out!("verdict: {}", run.verdict);
    Ok(verdict_code(run.verdict))
}

fn cmd_vector(a: VectorArgs) -> CmdResult {
    if a.cipher != CipherKind::Aes128 {
        return Err(Failure::usage(format!(
            "the reference vector is AES-XTS-128 only; --cipher {} is not supported",
            a.cipher
        )));
    }
    let expected = if a.tamper_expected {
        vector::Expected::tampered()
    } else {
        vector::Expected::published()
    };
    let rows = vector::compute(&expected)?;
    if a.show_keys {
        out!("K   = {}", vector::KEY);
        out!("K_T = {}", vector::TWEAK_KEY);
    } else {
        out!("K   = <hidden, pass --show-keys>");
        out!("K_T = <hidden, pass --show-keys>");
    }
    for (j, p) in vector::PLAINTEXT.iter().enumerate() {
        out!("P_{{N,{j}}} = {p}");
    }
    let mut mismatches = 0;
    for row in &rows {
        let status = match &row.expected {
            None => String::new(),
            Some(_) if row.ok() => "  [ok]".into(),
            Some(e) => {
                mismatches += 1;
                format!("  [MISMATCH, expected {e}]")
            }
        };
        out!("{:<22} = {}{status}", row.label, row.computed);
    }
    if mismatches > 0 {
        out!("{mismatches} value(s) differ from the expected table");
        return Ok(ExitCode::Contract);
    }
    out!("all 6 values match");
    Ok(ExitCode::Success)
}
