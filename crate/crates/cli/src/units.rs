//! Size and count parsing. Sizes take IEC binary suffixes only (KiB, MiB, ...);
//! SI-looking suffixes are rejected rather than silently read as powers of two.

const IEC: [(&str, u32); 6] = [
    ("B", 0),
    ("KiB", 10),
    ("MiB", 20),
    ("GiB", 30),
    ("TiB", 40),
    ("PiB", 50),
];

const SI_LIKE: [&str; 12] = [
    "K", "KB", "M", "MB", "G", "GB", "T", "TB", "P", "PB", "k", "kB",
];

/// Parses `4096`, `4KiB`, `4 KiB`, `16MiB` and `2^12` into a byte count.
pub fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    if let Some(v) = parse_power(s)? {
        return Ok(v);
    }
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (digits, suffix) = (&s[..split], s[split..].trim());
    if digits.is_empty() {
        return Err(format!("invalid size {s:?}"));
    }
    let value: u64 = digits
        .parse()
        .map_err(|e| format!("invalid size {s:?}: {e}"))?;
    let shift = if suffix.is_empty() {
        0
    } else if let Some((_, shift)) = IEC
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(suffix))
    {
        if !suffix.contains(['i', 'I']) && suffix.len() > 1 {
            return Err(si_error(s, suffix));
        }
        *shift
    } else if SI_LIKE.iter().any(|si| si.eq_ignore_ascii_case(suffix)) {
        return Err(si_error(s, suffix));
    } else {
        return Err(format!("unknown size suffix {suffix:?} in {s:?}"));
    };
    value
        .checked_mul(1u64 << shift)
        .ok_or_else(|| format!("size {s:?} overflows 64 bits"))
}

fn si_error(s: &str, suffix: &str) -> String {
    let first = suffix.chars().next().unwrap_or('K').to_ascii_uppercase();
    format!(
        "{s:?}: suffix {suffix:?} is ambiguous between SI (10^3) and binary units; \
         sizes use IEC prefixes, e.g. \"{}{first}iB\"",
        s.trim_end_matches(suffix).trim()
    )
}

/// Parses a plain integer count or `2^k`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    let s = s.trim();
    if let Some(v) = parse_power(s)? {
        return Ok(v);
    }
    s.parse().map_err(|e| format!("invalid count {s:?}: {e}"))
}

fn parse_power(s: &str) -> Result<Option<u64>, String> {
    let Some(exp) = s.strip_prefix("2^") else {
        return Ok(None);
    };
    let k: u32 = exp
        .parse()
        .map_err(|e| format!("invalid exponent in {s:?}: {e}"))?;
    if k > 63 {
        return Err(format!("{s} does not fit in 64 bits"));
    }
    Ok(Some(1u64 << k))
}

/// Pretty-prints a byte count with the largest exact IEC unit.
pub fn format_size(bytes: u128) -> String {
    for (name, shift) in IEC.iter().rev() {
        let unit = 1u128 << shift;
        if *shift > 0 && bytes >= unit && bytes.is_multiple_of(unit) {
            return format!("{} {name}", bytes / unit);
        }
    }
    format!("{bytes} B")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iec_sizes() {
        assert_eq!(parse_size("4096").unwrap(), 4096);
        assert_eq!(parse_size("4KiB").unwrap(), 4096);
        assert_eq!(parse_size("4 KiB").unwrap(), 4096);
        assert_eq!(parse_size("32MiB").unwrap(), 32 << 20);
        assert_eq!(parse_size("1TiB").unwrap(), 1 << 40);
        assert_eq!(parse_size("512B").unwrap(), 512);
        assert_eq!(parse_size("2^12").unwrap(), 4096);
    }

    #[test]
    fn si_sizes_rejected_with_a_pointer() {
        for s in ["4KB", "4kB", "4K", "1TB", "16MB", "4k"] {
            let err = parse_size(s).unwrap_err();
            assert!(err.contains("IEC"), "{s}: {err}");
        }
        let err = parse_size("4KB").unwrap_err();
        assert!(err.contains("4KiB"), "{err}");
        assert!(parse_size("4 bananas").is_err());
        assert!(parse_size("KiB").is_err());
        assert!(parse_size("99999999999PiB").is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(parse_count("2^28").unwrap(), 1 << 28);
        assert_eq!(parse_count("256").unwrap(), 256);
        assert!(parse_count("2^64").is_err());
        assert!(parse_count("-1").is_err());
    }

    #[test]
    fn formatting() {
        assert_eq!(format_size(4096), "4 KiB");
        assert_eq!(format_size(1 << 40), "1 TiB");
        assert_eq!(format_size(520), "520 B");
        assert_eq!(format_size(256u128 << 40), "256 TiB");
    }
}
