//! Recomputes the published AES-XTS-128 two-block example and checks every
//! value against a fixed table.

use xtscope::cipher::{BlockCipher, CipherKind};
use xtscope::hexfmt;
use xtscope::xts::{encode_sector_number, tweak_schedule, xor, SectorNumber, XtsKey};
use xtscope::Result;

pub const KEY: &str = "11111111111111111111111111111111";
pub const TWEAK_KEY: &str = "22222222222222222222222222222222";
pub const SECTOR: u64 = 1;
pub const PLAINTEXT: [&str; 2] = [
    "44444444444444444444444444444444",
    "88888888888888888888888888888888",
];

/// Expected values, in the order they are printed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub tweak: [String; 2],
    pub cipher_output: [String; 2],
    pub ciphertext: [String; 2],
}

impl Expected {
    pub fn published() -> Self {
        let s = |v: &str| v.to_string();
        Expected {
            tweak: [
                s("6752ca5febca0f3fc8dc9dfc2a916295"),
                s("49a494bfd6951f7e90b93bf95522c52a"),
            ],
            cipher_output: [
                s("13f084e65a7ca361f74957c9b11c7710"),
                s("2cada9d22ad34bf19a226c2c824f0364"),
            ],
            ciphertext: [
                s("74a24eb9b1b6ac5e3f95ca359b8d1585"),
                s("65093d6dfc46548f0a9b57d5d76dc64e"),
            ],
        }
    }

    /// Same table with one digit flipped; drives the mismatch path in tests.
    pub fn tampered() -> Self {
        let mut e = Self::published();
        e.ciphertext[1].replace_range(0..1, "7");
        e
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub label: String,
    pub computed: String,
    /// `None` for informational rows that are printed but not asserted.
    pub expected: Option<String>,
}

impl Row {
    pub fn ok(&self) -> bool {
        self.expected.as_ref().is_none_or(|e| *e == self.computed)
    }
}

pub fn compute(expected: &Expected) -> Result<Vec<Row>> {
    let key = XtsKey::from_hex(CipherKind::Aes128, KEY, TWEAK_KEY)?;
    let n = SectorNumber(SECTOR);
    let schedule = tweak_schedule(key.tweak_cipher(), n, 2)?;
    let mut rows = vec![Row {
        label: "N".into(),
        computed: hexfmt::encode(&encode_sector_number(n, 16)?),
        expected: None,
    }];
    let mut rest = Vec::new();
    for (j, (tweak, plaintext)) in schedule.tweaks.iter().zip(PLAINTEXT).enumerate() {
        let t = tweak.as_bytes();
        let p = hexfmt::decode(plaintext)?;
        let input = xor(&p, t);
        let out = key.data_cipher().encrypt_block(&input)?;
        let c = xor(&out, t);
        rows.push(Row {
            label: format!("T_{{N,{j}}}"),
            computed: hexfmt::encode(t),
            expected: Some(expected.tweak[j].clone()),
        });
        rest.push(Row {
            label: format!("P_{{N,{j}}} ^ T_{{N,{j}}}"),
            computed: hexfmt::encode(&input),
            expected: None,
        });
        rest.push(Row {
            label: format!("E_K(P_{{N,{j}}} ^ T_{{N,{j}}})"),
            computed: hexfmt::encode(&out),
            expected: Some(expected.cipher_output[j].clone()),
        });
        rest.push(Row {
            label: format!("C_{{N,{j}}}"),
            computed: hexfmt::encode(&c),
            expected: Some(expected.ciphertext[j].clone()),
        });
    }
    rows.extend(rest);
    Ok(rows)
}
