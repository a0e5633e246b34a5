//! Small shared helpers: hex-float codec, content hashing, log-gamma.

use crate::error::{Error, Result};

/// Encodes an `f64` as a C99-style hex-float literal, e.g. `0x1.999999999999ap-4`.
/// The encoding is exact: [`parse_hex_f64`] recovers the identical bits.
pub fn format_hex_f64(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0x0p+0" } else { "0x0p+0" }.to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf" } else { "inf" }.to_string();
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_raw = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & 0xf_ffff_ffff_ffff;
    let (lead, exp, mant) = if exp_raw == 0 {
        // subnormal: value = 0x0.mantissa * 2^-1022
        (0u64, -1022i64, mantissa)
    } else {
        (1u64, exp_raw - 1023, mantissa)
    };
    let mut hex = format!("{mant:013x}");
    while hex.len() > 1 && hex.ends_with('0') {
        hex.pop();
    }
    if mant == 0 {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{hex}p{exp:+}")
    }
}

/// Parses the output of [`format_hex_f64`].
pub fn parse_hex_f64(s: &str) -> Result<f64> {
    let bad = |why: &str| Error::Format {
        path: "<hex-float>".into(),
        reason: format!("{why}: {s:?}"),
    };
    let t = s.trim();
    match t {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let t = t.strip_prefix("0x").ok_or_else(|| bad("missing 0x"))?;
    let pidx = t.find(['p', 'P']).ok_or_else(|| bad("missing exponent"))?;
    let (mant_s, exp_s) = t.split_at(pidx);
    let exp: i64 = exp_s[1..]
        .parse()
        .map_err(|_| bad("bad exponent"))?;
    let (int_s, frac_s) = match mant_s.find('.') {
        Some(d) => (&mant_s[..d], &mant_s[d + 1..]),
        None => (mant_s, ""),
    };
    let mut value = u64::from_str_radix(int_s, 16).map_err(|_| bad("bad integer part"))? as f64;
    let mut scale = 1.0f64;
    for c in frac_s.chars() {
        let digit = c.to_digit(16).ok_or_else(|| bad("bad fraction digit"))? as f64;
        scale /= 16.0;
        value += digit * scale;
    }
    let out = value * (exp as f64).exp2();
    Ok(if neg { -out } else { out })
}

/// FNV-1a 64-bit hash, used as a cheap content fingerprint for dataset files.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}

/// ln Γ(x) for x > 0. Thin wrapper so call sites read as math.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// ln of the generalized factorial n! = Γ(n + 1) for real n ≥ 0.
pub fn ln_factorial(n: f64) -> f64 {
    ln_gamma(n + 1.0)
}
