//! Phase pairs on the two-torus.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_2pi(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can return TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_pi(x: f64) -> f64 {
    wrap_2pi(x + PI) - PI
}

/// A pair of phase differences `(Δφ₁, Δφ₂)` in radians.
///
/// Used for the unknown phases, the control phases and the total
/// interferometer phases alike. Values are not wrapped unless
/// [`PhaseVector::wrapped`] is called.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseVector {
    pub phi1: f64,
    pub phi2: f64,
}

impl PhaseVector {
    pub const ZERO: PhaseVector = PhaseVector { phi1: 0.0, phi2: 0.0 };

    pub const fn new(phi1: f64, phi2: f64) -> Self {
        Self { phi1, phi2 }
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.phi1, self.phi2]
    }

    pub fn is_finite(self) -> bool {
        self.phi1.is_finite() && self.phi2.is_finite()
    }

    /// Canonical representative in `[0, 2π)²`.
    pub fn wrapped(self) -> Self {
        Self::new(wrap_2pi(self.phi1), wrap_2pi(self.phi2))
    }

    /// Euclidean distance between the two points on the torus.
    pub fn wrapped_distance(self, other: Self) -> f64 {
        let d1 = wrap_pi(self.phi1 - other.phi1);
        let d2 = wrap_pi(self.phi2 - other.phi2);
        d1.hypot(d2)
    }

    /// Lexicographic comparison on the wrapped representatives.
    pub fn lex_cmp(self, other: Self) -> std::cmp::Ordering {
        let a = self.wrapped();
        let b = other.wrapped();
        a.phi1
            .total_cmp(&b.phi1)
            .then_with(|| a.phi2.total_cmp(&b.phi2))
    }
}

impl Add for PhaseVector {
    type Output = PhaseVector;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.phi1 + rhs.phi1, self.phi2 + rhs.phi2)
    }
}

impl Sub for PhaseVector {
    type Output = PhaseVector;

    fn sub(self, rhs: Self) -> Self {
        Self::new(self.phi1 - rhs.phi1, self.phi2 - rhs.phi2)
    }
}
