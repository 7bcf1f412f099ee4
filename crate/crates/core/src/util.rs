//! Small shared helpers: number formatting, seed derivation, hashing.

/// Format with 6 significant digits, trimming trailing zeros, switching to
/// scientific notation outside [1e-4, 1e6). Mirrors C's `%.6g` closely
/// enough to be a stable canonical form: formatting, parsing, and
/// re-formatting a value is a fixed point.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let neg = x < 0.0;
    let s = format!("{:.5e}", x.abs());
    let (mantissa, exp) = s.split_once('e').expect("std float format");
    let exp: i32 = exp.parse().expect("std float exponent");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);
    let body = if (-4..6).contains(&exp) {
        if exp >= 0 {
            let cut = (exp + 1) as usize;
            let int = &digits[..cut];
            let frac = digits[cut..].trim_end_matches('0');
            if frac.is_empty() {
                int.to_string()
            } else {
                format!("{int}.{frac}")
            }
        } else {
            let zeros = "0".repeat((-exp - 1) as usize);
            let frac = format!("{zeros}{digits}");
            let frac = frac.trim_end_matches('0');
            format!("0.{frac}")
        }
    } else {
        let int = &digits[..1];
        let frac = digits[1..].trim_end_matches('0');
        if frac.is_empty() {
            format!("{int}e{exp}")
        } else {
            format!("{int}.{frac}e{exp}")
        }
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

/// splitmix64 step; the standard 64-bit mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a per-purpose seed from the single run seed. Labels keep module
/// streams independent without needing coordinated seed bookkeeping.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut state = base ^ 0x6a09e667f3bcc908;
    let mut out = splitmix64(&mut state);
    for &b in label.as_bytes() {
        state ^= u64::from(b).wrapping_mul(0x100000001b3);
        out ^= splitmix64(&mut state);
    }
    out
}

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_examples() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(5.0), "5");
        assert_eq!(fmt_sig6(320.0), "320");
        assert_eq!(fmt_sig6(0.25), "0.25");
        assert_eq!(fmt_sig6(-1.5), "-1.5");
        assert_eq!(fmt_sig6(123456.0), "123456");
        assert_eq!(fmt_sig6(1234567.0), "1.23457e6");
        assert_eq!(fmt_sig6(0.000123456), "0.000123456");
        assert_eq!(fmt_sig6(0.0000123456), "1.23456e-5");
        assert_eq!(fmt_sig6(999999.7), "1e6");
        assert_eq!(fmt_sig6(1.0 / 3.0), "0.333333");
    }

    #[test]
    fn sig6_is_a_fixed_point_under_reparse() {
        for &x in &[
            3.14159265358979,
            1e-7,
            6.73e-6,
            2.0f64.sqrt() * 1e4,
            987654321.123,
            0.1 + 0.2,
        ] {
            let once = fmt_sig6(x);
            let back: f64 = once.parse().unwrap();
            assert_eq!(fmt_sig6(back), once, "x={x}");
        }
    }

    #[test]
    fn derive_seed_depends_on_label_and_base() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(7, "train"), derive_seed(7, "train"));
    }
}
