//! Arithmetic in binary fields GF(2^n) on byte-string blocks.
//!
//! A block of `n / 8` bytes encodes the polynomial `a_{n-1} x^{n-1} + ... + a_0`
//! with coefficient `a_i` at byte `i / 8`, bit `i % 8`. Byte 0 carries the
//! lowest coefficients, which is the convention XTS uses for its tweaks.
//!
//! [`mul_alpha`] is the fast path used for tweak generation. [`mul`] is a
//! slow school-book multiplier that exists to check it.

use std::fmt;

use crate::error::{Error, Result};

/// Reduction constant of x^128 + x^7 + x^2 + x + 1.
pub const GF128_REDUCTION: u128 = 0x87;

/// Default reduction constants for the toy widths, x^16 + x^5 + x^3 + x + 1,
/// x^24 + x^4 + x^3 + x + 1 and x^32 + x^7 + x^3 + x^2 + 1.
const TOY16_REDUCTION: u128 = 0x2b;
const TOY24_REDUCTION: u128 = 0x1b;
const TOY32_REDUCTION: u128 = 0x8d;

/// A binary field GF(2^n) given as x^n + `reduction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    width_bits: usize,
    reduction: u128,
}

impl FieldSpec {
    pub const GF128: FieldSpec = FieldSpec {
        width_bits: 128,
        reduction: GF128_REDUCTION,
    };

    /// Builds a field spec. `reduction` must have degree below `width_bits`,
    /// and the width must be a whole number of bytes no larger than 128 bits.
    pub fn new(width_bits: usize, reduction: u128) -> Result<Self> {
        if width_bits == 0 || !width_bits.is_multiple_of(8) || width_bits > 128 {
            return Err(Error::UnsupportedWidth(width_bits));
        }
        if width_bits < 128 && reduction >> width_bits != 0 {
            return Err(Error::InvalidPolicy(format!(
                "reduction constant {reduction:#x} has degree >= {width_bits}"
            )));
        }
        Ok(FieldSpec {
            width_bits,
            reduction,
        })
    }

    /// The field used for tweaks of the toy cipher at the given width.
    pub fn toy(width_bits: usize) -> Result<Self> {
        let reduction = match width_bits {
            16 => TOY16_REDUCTION,
            24 => TOY24_REDUCTION,
            32 => TOY32_REDUCTION,
            w => return Err(Error::UnsupportedWidth(w)),
        };
        FieldSpec::new(width_bits, reduction)
    }

    /// Field matching a block width in bytes.
    pub fn for_block_bytes(block_bytes: usize) -> Result<Self> {
        match block_bytes {
            16 => Ok(FieldSpec::GF128),
            b => FieldSpec::toy(b * 8),
        }
    }

    pub fn width_bits(&self) -> usize {
        self.width_bits
    }

    pub fn width_bytes(&self) -> usize {
        self.width_bits / 8
    }

    pub fn reduction(&self) -> u128 {
        self.reduction
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.width_bytes() {
            return Err(Error::LengthMismatch {
                expected: self.width_bytes(),
                actual: len,
            });
        }
        Ok(())
    }
}

/// An element of GF(2^n) stored as its `n / 8`-byte block.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FieldElement(Vec<u8>);

impl FieldElement {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        FieldElement(bytes.into())
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        crate::hexfmt::decode(s).map(FieldElement)
    }

    pub fn zero(spec: &FieldSpec) -> Self {
        FieldElement(vec![0; spec.width_bytes()])
    }

    /// The polynomial 1.
    pub fn one(spec: &FieldSpec) -> Self {
        let mut v = vec![0; spec.width_bytes()];
        v[0] = 1;
        FieldElement(v)
    }

    /// The polynomial x.
    pub fn alpha(spec: &FieldSpec) -> Self {
        let mut v = vec![0; spec.width_bytes()];
        v[0] = 2;
        FieldElement(v)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    fn to_u128(&self) -> u128 {
        let mut buf = [0u8; 16];
        buf[..self.0.len()].copy_from_slice(&self.0);
        u128::from_le_bytes(buf)
    }

    fn from_u128(v: u128, spec: &FieldSpec) -> Self {
        FieldElement(v.to_le_bytes()[..spec.width_bytes()].to_vec())
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldElement({})", self.to_hex())
    }
}

impl AsRef<[u8]> for FieldElement {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Multiplies a raw block by alpha in place: a one-bit left shift from byte 0
/// toward the last byte, folding the carried-out top bit back in through the
/// reduction constant.
pub fn mul_alpha_in_place(block: &mut [u8], spec: &FieldSpec) -> Result<()> {
    spec.check_len(block.len())?;
    let mut carry = 0u8;
    for byte in block.iter_mut() {
        let next = *byte >> 7;
        *byte = (*byte << 1) | carry;
        carry = next;
    }
    if carry == 1 {
        let mut red = spec.reduction;
        for byte in block.iter_mut() {
            if red == 0 {
                break;
            }
            *byte ^= red as u8;
            red >>= 8;
        }
    }
    Ok(())
}

pub fn mul_alpha(b: &FieldElement, spec: &FieldSpec) -> Result<FieldElement> {
    let mut out = b.clone();
    mul_alpha_in_place(&mut out.0, spec)?;
    Ok(out)
}

/// `b * alpha^j`, by `j` applications of [`mul_alpha`].
pub fn alpha_pow(b: &FieldElement, j: u64, spec: &FieldSpec) -> Result<FieldElement> {
    let mut out = b.clone();
    spec.check_len(out.0.len())?;
    for _ in 0..j {
        mul_alpha_in_place(&mut out.0, spec)?;
    }
    Ok(out)
}

/// School-book carry-less multiplication followed by reduction.
pub fn mul(a: &FieldElement, b: &FieldElement, spec: &FieldSpec) -> Result<FieldElement> {
    spec.check_len(a.0.len())?;
    spec.check_len(b.0.len())?;
    let n = spec.width_bits;
    let (x, y) = (a.to_u128(), b.to_u128());

    // 256-bit product as [low, high].
    let mut prod = [0u128; 2];
    for i in 0..n {
        if (x >> i) & 1 == 1 {
            xor_shifted(&mut prod, y, i);
        }
    }
    // Long division by x^n + reduction, from the top degree down.
    for d in (n..2 * n).rev() {
        if bit(&prod, d) {
            flip(&mut prod, d);
            xor_shifted(&mut prod, spec.reduction, d - n);
        }
    }
    debug_assert!(prod[1] == 0 && (n == 128 || prod[0] >> n == 0));
    Ok(FieldElement::from_u128(prod[0], spec))
}

fn bit(v: &[u128; 2], i: usize) -> bool {
    (v[i / 128] >> (i % 128)) & 1 == 1
}

fn flip(v: &mut [u128; 2], i: usize) {
    v[i / 128] ^= 1 << (i % 128);
}

fn xor_shifted(v: &mut [u128; 2], x: u128, shift: usize) {
    if shift == 0 {
        v[0] ^= x;
    } else if shift < 128 {
        v[0] ^= x << shift;
        v[1] ^= x >> (128 - shift);
    } else {
        v[1] ^= x << (shift - 128);
    }
}

/// Whether x^n + reduction is irreducible over GF(2).
///
/// Widths up to 32 bits use trial division by every polynomial of degree
/// 1..=n/2. Wider moduli go through Rabin's test instead.
pub fn verify_irreducible(spec: &FieldSpec) -> Result<bool> {
    let n = spec.width_bits;
    if n <= 32 {
        let modulus = (1u64 << n) | spec.reduction as u64;
        return Ok(trial_division_irreducible(modulus));
    }
    if n > 128 {
        return Err(Error::UnsupportedWidth(n));
    }
    Ok(rabin_irreducible(spec))
}

fn poly_degree(p: u64) -> i32 {
    63 - p.leading_zeros() as i32
}

fn poly_rem(mut a: u64, b: u64) -> u64 {
    let db = poly_degree(b);
    while a != 0 && poly_degree(a) >= db {
        a ^= b << (poly_degree(a) - db);
    }
    a
}

fn trial_division_irreducible(modulus: u64) -> bool {
    let n = poly_degree(modulus);
    if n < 1 {
        return false;
    }
    for d in 1..=(n / 2) {
        for low in 0..(1u64 << d) {
            if poly_rem(modulus, (1u64 << d) | low) == 0 {
                return false;
            }
        }
    }
    true
}

/// Rabin: f of degree n is irreducible iff x^(2^n) = x (mod f) and
/// gcd(x^(2^(n/p)) - x, f) = 1 for every prime p dividing n.
fn rabin_irreducible(spec: &FieldSpec) -> bool {
    let n = spec.width_bits;
    let x = FieldElement::alpha(spec);
    let frobenius = |k: usize| -> FieldElement {
        let mut v = x.clone();
        for _ in 0..k {
            v = mul(&v, &v, spec).expect("widths agree");
        }
        v
    };
    if frobenius(n) != x {
        return false;
    }
    let modulus = BigPoly::modulus(spec);
    prime_factors(n).into_iter().all(|p| {
        let mut g = BigPoly::from_element(&frobenius(n / p));
        g.xor_bit(1);
        BigPoly::gcd(g, modulus.clone()).degree() == Some(0)
    })
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            out.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Minimal GF(2)[x] polynomial of up to 129 coefficients for gcd.
#[derive(Clone)]
struct BigPoly([u128; 2]);

impl BigPoly {
    fn modulus(spec: &FieldSpec) -> Self {
        let mut v = [spec.reduction, 0];
        flip(&mut v, spec.width_bits);
        BigPoly(v)
    }

    fn from_element(e: &FieldElement) -> Self {
        BigPoly([e.to_u128(), 0])
    }

    fn xor_bit(&mut self, i: usize) {
        flip(&mut self.0, i);
    }

    fn degree(&self) -> Option<usize> {
        if self.0[1] != 0 {
            Some(255 - self.0[1].leading_zeros() as usize)
        } else if self.0[0] != 0 {
            Some(127 - self.0[0].leading_zeros() as usize)
        } else {
            None
        }
    }

    fn rem(mut self, m: &BigPoly) -> BigPoly {
        let dm = m.degree().expect("nonzero divisor");
        while let Some(d) = self.degree() {
            if d < dm {
                break;
            }
            let shift = d - dm;
            for i in 0..=dm {
                if bit(&m.0, i) {
                    flip(&mut self.0, i + shift);
                }
            }
        }
        self
    }

    fn gcd(mut a: BigPoly, mut b: BigPoly) -> BigPoly {
        while b.degree().is_some() {
            let r = a.rem(&b);
            a = b;
            b = r;
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h(s: &str) -> FieldElement {
        FieldElement::from_hex(s).unwrap()
    }

    fn random_element(rng: &mut impl Rng, spec: &FieldSpec) -> FieldElement {
        let mut v = vec![0u8; spec.width_bytes()];
        rng.fill(&mut v[..]);
        FieldElement(v)
    }

    #[test]
    fn tweak_vector_pins_byte_order() {
        let t0 = h("6752ca5febca0f3fc8dc9dfc2a916295");
        let t1 = mul_alpha(&t0, &FieldSpec::GF128).unwrap();
        assert_eq!(t1.to_hex(), "49a494bfd6951f7e90b93bf95522c52a");
        assert_eq!(alpha_pow(&t0, 1, &FieldSpec::GF128).unwrap(), t1);
    }

    #[test]
    fn zero_stays_zero() {
        let z = FieldElement::zero(&FieldSpec::GF128);
        assert_eq!(mul_alpha(&z, &FieldSpec::GF128).unwrap(), z);
    }

    #[test]
    fn overflow_folds_in_reduction() {
        let mut top = vec![0u8; 16];
        top[15] = 0x80;
        let r = mul_alpha(&FieldElement(top), &FieldSpec::GF128).unwrap();
        let mut want = [0u8; 16];
        want[0] = 0x87;
        assert_eq!(r.as_bytes(), &want[..]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let short = FieldElement(vec![1, 2, 3]);
        assert!(matches!(
            mul_alpha(&short, &FieldSpec::GF128),
            Err(Error::LengthMismatch {
                expected: 16,
                actual: 3
            })
        ));
        let a = FieldElement::one(&FieldSpec::GF128);
        assert!(mul(&a, &short, &FieldSpec::GF128).is_err());
    }

    #[test]
    fn mul_alpha_matches_schoolbook_random_128() {
        let spec = FieldSpec::GF128;
        let alpha = FieldElement::alpha(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let b = random_element(&mut rng, &spec);
            assert_eq!(
                mul_alpha(&b, &spec).unwrap(),
                mul(&b, &alpha, &spec).unwrap()
            );
        }
    }

    #[test]
    fn alpha_pow_is_iterated_mul_alpha() {
        let spec = FieldSpec::GF128;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_element(&mut rng, &spec);
        assert_eq!(alpha_pow(&b, 0, &spec).unwrap(), b);
        let mut chained = b.clone();
        for _ in 0..20 {
            chained = mul_alpha(&chained, &spec).unwrap();
        }
        assert_eq!(alpha_pow(&b, 20, &spec).unwrap(), chained);
    }

    #[test]
    fn alpha_pow_splits_exponents() {
        let spec = FieldSpec::GF128;
        let one = FieldElement::one(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let b = random_element(&mut rng, &spec);
            let i = rng.random_range(0..=128);
            let j = rng.random_range(0..=128);
            let lhs = alpha_pow(&b, i + j, &spec).unwrap();
            let rhs = mul(
                &alpha_pow(&b, i, &spec).unwrap(),
                &alpha_pow(&one, j, &spec).unwrap(),
                &spec,
            )
            .unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn mul_ring_laws() {
        for spec in [FieldSpec::GF128, FieldSpec::toy(16).unwrap()] {
            let one = FieldElement::one(&spec);
            let alpha = FieldElement::alpha(&spec);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..1000 {
                let a = random_element(&mut rng, &spec);
                let b = random_element(&mut rng, &spec);
                let c = random_element(&mut rng, &spec);
                assert_eq!(mul(&a, &one, &spec).unwrap(), a);
                assert_eq!(
                    mul(&a, &alpha, &spec).unwrap(),
                    mul_alpha(&a, &spec).unwrap()
                );
                assert_eq!(mul(&a, &b, &spec).unwrap(), mul(&b, &a, &spec).unwrap());
                let ab_c = mul(&mul(&a, &b, &spec).unwrap(), &c, &spec).unwrap();
                let a_bc = mul(&a, &mul(&b, &c, &spec).unwrap(), &spec).unwrap();
                assert_eq!(ab_c, a_bc);
            }
        }
    }

    #[test]
    fn toy16_mul_alpha_exhaustive() {
        let spec = FieldSpec::toy(16).unwrap();
        let alpha = FieldElement::alpha(&spec);
        for v in 0..=u16::MAX {
            let e = FieldElement(v.to_le_bytes().to_vec());
            assert_eq!(
                mul_alpha(&e, &spec).unwrap(),
                mul(&e, &alpha, &spec).unwrap()
            );
        }
    }

    #[test]
    fn toy16_multiplication_is_bijective() {
        let spec = FieldSpec::toy(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = loop {
                let a = random_element(&mut rng, &spec);
                if a != FieldElement::zero(&spec) {
                    break a;
                }
            };
            let mut seen = vec![false; 1 << 16];
            for v in 0..=u16::MAX {
                let p = mul(&a, &FieldElement(v.to_le_bytes().to_vec()), &spec).unwrap();
                let idx = u16::from_le_bytes([p.0[0], p.0[1]]) as usize;
                assert!(!seen[idx]);
                seen[idx] = true;
            }
        }
    }

    #[test]
    fn irreducibility() {
        assert!(verify_irreducible(&FieldSpec::GF128).unwrap());
        // x^16 + x + 1 = (x^2 + x + 1)(...)
        assert!(!verify_irreducible(&FieldSpec::new(16, 0b11).unwrap()).unwrap());
        for w in [16, 24, 32] {
            assert!(
                verify_irreducible(&FieldSpec::toy(w).unwrap()).unwrap(),
                "toy{w}"
            );
        }
        // x^128 + 1 = (x + 1)^128
        assert!(!verify_irreducible(&FieldSpec::new(128, 1).unwrap()).unwrap());
    }

    #[test]
    fn rabin_agrees_with_trial_division_at_16_bits() {
        for reduction in 1u128..(1 << 10) {
            let spec = FieldSpec::new(16, reduction).unwrap();
            let modulus = (1u64 << 16) | reduction as u64;
            assert_eq!(
                rabin_irreducible(&spec),
                trial_division_irreducible(modulus),
                "reduction {reduction:#x}"
            );
        }
    }

    #[test]
    fn unsupported_widths() {
        assert!(FieldSpec::new(12, 1).is_err());
        assert!(FieldSpec::new(136, 1).is_err());
        assert!(FieldSpec::toy(64).is_err());
    }
}
