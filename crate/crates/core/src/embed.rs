//! Query-to-frame similarity interface and the latent text codec.
//!
//! The similarity provider is abstract so the synthetic latent-world oracle
//! and any future learned encoder are interchangeable behind the same
//! contract: resolve a rendered query into a latent vector, then score that
//! latent against the frame at a given time.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("frame time {t} outside [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector dimension {got} does not match {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Similarity provider bound to one video.
///
/// Implementations must be pure and reentrant: repeated calls with the same
/// arguments return the same value.
pub trait Embedder {
    /// Parse a rendered query back into its latent vector, `None` when the
    /// text does not encode a latent of the expected dimension.
    fn resolve_query(&self, query_text: &str) -> Option<Vec<f64>>;

    /// Similarity between a query latent and the frame at time `t` seconds.
    fn similarity(&self, query_latent: &[f64], t: f64) -> Result<f64, EmbedError>;
}

/// Render a latent vector as space-separated full-precision floats.
///
/// Uses the shortest round-trip representation, so
/// `parse_latent(&render_latent(v)) == Some(v)` bit-for-bit.
pub fn render_latent(v: &[f64]) -> String {
    let mut out = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{x}"));
    }
    out
}

/// Parse a space-separated latent vector. `None` on any non-finite or
/// unparseable token, or when empty.
pub fn parse_latent(s: &str) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for tok in s.split_whitespace() {
        let x: f64 = tok.parse().ok()?;
        if !x.is_finite() {
            return None;
        }
        out.push(x);
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalize to unit length. `None` when the norm is (numerically) zero.
pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = l2_norm(v);
    if n < 1e-12 {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn latent_round_trip_simple() {
        let v = vec![0.25, -1.5, 3.0, 1.0 / 3.0];
        assert_eq!(parse_latent(&render_latent(&v)), Some(v));
    }

    #[test]
    fn parse_rejects_junk() {
        assert_eq!(parse_latent(""), None);
        assert_eq!(parse_latent("0.1 cat"), None);
        assert_eq!(parse_latent("inf 0.2"), None);
    }

    proptest! {
        #[test]
        fn latent_round_trip(v in proptest::collection::vec(-1e6f64..1e6, 1..32)) {
            prop_assert_eq!(parse_latent(&render_latent(&v)), Some(v));
        }
    }
}
