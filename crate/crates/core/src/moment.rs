//! Time intervals in seconds.

use serde::{Deserialize, Serialize};

/// A `(start, end)` interval in seconds within a video.
///
/// A moment is *well-formed* when `start >= 0`, `end > start`, and both
/// endpoints are finite. Parsers and policies may produce degenerate moments;
/// each consumer documents how it treats them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub start: f64,
    pub end: f64,
}

impl Moment {
    /// The zero moment `(0, 0)` used to pad missing slots.
    pub const ZERO: Moment = Moment { start: 0.0, end: 0.0 };

    pub fn new(start: f64, end: f64) -> Self {
        Moment { start, end }
    }

    /// `start >= 0`, `end > start`, both finite.
    pub fn is_well_formed(&self) -> bool {
        self.start.is_finite() && self.end.is_finite() && self.start >= 0.0 && self.end > self.start
    }

    /// `end - start`, clamped at zero for degenerate intervals.
    pub fn length(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.start == 0.0 && self.end == 0.0
    }

    /// Length of the overlap with `other`, zero when disjoint or degenerate.
    pub fn intersection(&self, other: &Moment) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// True if `t` falls inside `[start, end)`.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_rules() {
        assert!(Moment::new(0.0, 1.0).is_well_formed());
        assert!(Moment::new(3.0, 8.5).is_well_formed());
        assert!(!Moment::new(-1.0, 5.0).is_well_formed());
        assert!(!Moment::new(5.0, 5.0).is_well_formed());
        assert!(!Moment::new(8.0, 3.0).is_well_formed());
        assert!(!Moment::new(0.0, f64::NAN).is_well_formed());
        assert!(!Moment::new(f64::INFINITY, 1.0).is_well_formed());
        assert!(!Moment::ZERO.is_well_formed());
    }

    #[test]
    fn intersection_cases() {
        let m = Moment::new(0.0, 10.0);
        assert_eq!(m.intersection(&Moment::new(5.0, 15.0)), 5.0);
        assert_eq!(m.intersection(&Moment::new(20.0, 30.0)), 0.0);
        assert_eq!(m.intersection(&m), 10.0);
    }

    #[test]
    fn length_clamps_degenerate() {
        assert_eq!(Moment::new(5.0, 3.0).length(), 0.0);
        assert_eq!(Moment::new(2.0, 7.0).length(), 5.0);
    }
}
