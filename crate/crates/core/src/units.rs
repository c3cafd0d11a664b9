//! Byte-size and bandwidth quantities as they appear in config files.
//!
//! Decimal suffixes (`KB`, `MB`, `GB`, `TB`) are powers of 1000 and binary
//! suffixes (`KiB`, `MiB`, `GiB`, `TiB`) powers of 1024. Bandwidths take the
//! same suffixes with an optional `/s`.

use serde::de::{self, Deserializer, Visitor};
use serde::Serializer;
use std::fmt;

const SUFFIXES: &[(&str, f64)] = &[
    ("TIB", 1024.0 * 1024.0 * 1024.0 * 1024.0),
    ("GIB", 1024.0 * 1024.0 * 1024.0),
    ("MIB", 1024.0 * 1024.0),
    ("KIB", 1024.0),
    ("TB", 1e12),
    ("GB", 1e9),
    ("MB", 1e6),
    ("KB", 1e3),
    ("B", 1.0),
];

/// Parses a quantity like `"336 MB"`, `"16.5MB"`, `"24 GiB"` or `"1024"` into bytes.
pub fn parse_bytes(text: &str) -> Result<f64, String> {
    let trimmed = text.trim();
    let upper = trimmed.to_ascii_uppercase();
    let (number, scale) = SUFFIXES
        .iter()
        .find_map(|(suffix, scale)| {
            upper
                .strip_suffix(suffix)
                .map(|n| (trimmed[..n.len()].trim(), *scale))
        })
        .unwrap_or((trimmed, 1.0));
    let value: f64 = number
        .parse()
        .map_err(|_| format!("cannot parse byte quantity {text:?}"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(format!("byte quantity {text:?} must be finite and non-negative"));
    }
    Ok(value * scale)
}

/// Parses a bandwidth like `"32 GB/s"` into bytes per second.
pub fn parse_bandwidth(text: &str) -> Result<f64, String> {
    let trimmed = text.trim();
    let body = trimmed
        .strip_suffix("/s")
        .or_else(|| trimmed.strip_suffix("/S"))
        .unwrap_or(trimmed);
    parse_bytes(body)
}

/// Renders a byte count with the largest decimal suffix that divides it exactly.
pub fn format_bytes(bytes: u64) -> String {
    for (suffix, scale) in [("TB", 1e12), ("GB", 1e9), ("MB", 1e6), ("KB", 1e3)] {
        let scale = scale as u64;
        if bytes >= scale && bytes % scale == 0 {
            return format!("{} {suffix}", bytes / scale);
        }
    }
    format!("{bytes} B")
}

/// Milliseconds value `m` such that `m / 1e3` reproduces `secs` exactly.
///
/// Config files carry times in milliseconds while the library works in
/// seconds; searching a few ulps around `secs * 1e3` keeps `write -> load`
/// an identity for every time a file can express. Some seconds values have
/// no exact millisecond preimage; those get the nearest one.
pub fn secs_to_millis_exact(secs: f64) -> f64 {
    let guess = secs * 1e3;
    if guess / 1e3 == secs || !guess.is_finite() {
        return guess;
    }
    let mut down = guess;
    let mut up = guess;
    for _ in 0..64 {
        down = next_toward(down, f64::NEG_INFINITY);
        up = next_toward(up, f64::INFINITY);
        if up / 1e3 == secs {
            return up;
        }
        if down / 1e3 == secs {
            return down;
        }
    }
    guess
}

fn next_toward(x: f64, target: f64) -> f64 {
    if x == target || x.is_nan() {
        return x;
    }
    if x == 0.0 {
        let tiny = f64::from_bits(1);
        return if target > 0.0 { tiny } else { -tiny };
    }
    let bits = x.to_bits();
    let up = (target > x) == (x > 0.0);
    f64::from_bits(if up { bits + 1 } else { bits - 1 })
}

/// Serde adapter for byte sizes: accepts an integer or a suffixed string,
/// writes a suffixed string.
pub mod byte_size {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_bytes(*bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        d.deserialize_any(QuantityVisitor { bandwidth: false })
            .map(|v| v.round() as u64)
    }
}

/// Serde adapter for bandwidths in bytes per second.
pub mod bandwidth {
    use super::*;

    pub fn serialize<S: Serializer>(bps: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(*bps)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(QuantityVisitor { bandwidth: true })
    }
}

struct QuantityVisitor {
    bandwidth: bool,
}

impl<'de> Visitor<'de> for QuantityVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bandwidth {
            f.write_str("a bandwidth such as 32e9 or \"32 GB/s\"")
        } else {
            f.write_str("a byte size such as 336000000 or \"336 MB\"")
        }
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        if v < 0 {
            return Err(E::custom("quantity must be non-negative"));
        }
        Ok(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        if !v.is_finite() || v < 0.0 {
            return Err(E::custom("quantity must be finite and non-negative"));
        }
        Ok(v)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
        let parsed = if self.bandwidth {
            parse_bandwidth(v)
        } else {
            parse_bytes(v)
        };
        parsed.map_err(E::custom)
    }
}
