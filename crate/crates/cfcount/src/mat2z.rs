//! Exact 2×2 integer matrix algebra for the continued-fraction semigroups.
//!
//! Elements are stored as four signed 64-bit entries with checked arithmetic:
//! overflow is reported as an error, never wrapped. The module also houses the
//! hyperbolic displacement `d(i, g·i)` recovered from the Frobenius norm and
//! the commutator trace identity used by the rigidity argument.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatError {
    #[error("integer overflow in 2x2 matrix product")]
    Overflow,
    #[error("matrix must have determinant ±1, got {0}")]
    BadDeterminant(i64),
}

/// Exact 2×2 integer matrix. Constructors in this module only produce
/// determinant ±1 matrices; `multiply` preserves that exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mat2 {
    pub a11: i64,
    pub a12: i64,
    pub a21: i64,
    pub a22: i64,
}

pub const IDENTITY: Mat2 = Mat2 { a11: 1, a12: 0, a21: 0, a22: 1 };

impl Mat2 {
    pub const fn new(a11: i64, a12: i64, a21: i64, a22: i64) -> Self {
        Mat2 { a11, a12, a21, a22 }
    }

    /// Determinant, exact in 128-bit arithmetic (never overflows for i64 entries).
    pub fn det(&self) -> i128 {
        self.a11 as i128 * self.a22 as i128 - self.a12 as i128 * self.a21 as i128
    }

    pub fn trace(&self) -> i128 {
        self.a11 as i128 + self.a22 as i128
    }

    /// Squared Frobenius norm a²+b²+c²+d², exact (≥ 2 for any det ±1 matrix).
    pub fn norm_sq(&self) -> u128 {
        let sq = |x: i64| (x as i128 * x as i128) as u128;
        sq(self.a11) + sq(self.a12) + sq(self.a21) + sq(self.a22)
    }

    /// Inverse of a determinant-+1 matrix (the adjugate).
    pub fn inverse_unimodular(&self) -> Mat2 {
        debug_assert_eq!(self.det(), 1);
        Mat2::new(self.a22, -self.a12, -self.a21, self.a11)
    }

    /// Entrywise reduction modulo q into the range [0, q).
    pub fn mod_q(&self, q: u32) -> [u32; 4] {
        let m = q as i64;
        let r = |x: i64| (x.rem_euclid(m)) as u32;
        [r(self.a11), r(self.a12), r(self.a21), r(self.a22)]
    }

    /// Möbius action on the upper half plane / real line: x ↦ (a11·x+a12)/(a21·x+a22).
    pub fn moebius(&self, x: f64) -> f64 {
        (self.a11 as f64 * x + self.a12 as f64) / (self.a21 as f64 * x + self.a22 as f64)
    }

    /// Möbius action on a complex point (re, im), im ≥ 0.
    pub fn moebius_complex(&self, re: f64, im: f64) -> (f64, f64) {
        // (a z + b) / (c z + d) with z = re + i·im
        let (a, b, c, d) = (self.a11 as f64, self.a12 as f64, self.a21 as f64, self.a22 as f64);
        let (nr, ni) = (a * re + b, a * im);
        let (dr, di) = (c * re + d, c * im);
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    }
}

/// Single-letter generator: a ↦ [[0,1],[1,a]], determinant −1.
pub fn generator(a: u32) -> Mat2 {
    assert!(a >= 1, "generator index must be a positive integer");
    Mat2::new(0, 1, 1, a as i64)
}

/// Two-letter generator g_a·g_a2 = [[1,a2],[a,a·a2+1]]: determinant +1,
/// all four entries ≥ 1. These freely generate the counting semigroup.
pub fn pair_generator(a: u32, a2: u32) -> Mat2 {
    assert!(a >= 1 && a2 >= 1, "pair generator indices must be positive");
    let (a, a2) = (a as i64, a2 as i64);
    Mat2::new(1, a2, a, a * a2 + 1)
}

/// Exact checked product. Determinants multiply; any entry overflowing i64
/// yields `MatError::Overflow`.
pub fn multiply(x: &Mat2, y: &Mat2) -> Result<Mat2, MatError> {
    let mul_add = |p: i64, q: i64, r: i64, s: i64| -> Option<i64> {
        p.checked_mul(q)?.checked_add(r.checked_mul(s)?)
    };
    let a11 = mul_add(x.a11, y.a11, x.a12, y.a21).ok_or(MatError::Overflow)?;
    let a12 = mul_add(x.a11, y.a12, x.a12, y.a22).ok_or(MatError::Overflow)?;
    let a21 = mul_add(x.a21, y.a11, x.a22, y.a21).ok_or(MatError::Overflow)?;
    let a22 = mul_add(x.a21, y.a12, x.a22, y.a22).ok_or(MatError::Overflow)?;
    Ok(Mat2::new(a11, a12, a21, a22))
}

/// Hyperbolic displacement d(o, g·o) of the basepoint o = i, recovered from
/// ‖g‖² = 2·cosh d(o, g·o). Requires det g = ±1.
pub fn displacement(g: &Mat2) -> Result<f64, MatError> {
    let det = g.det();
    if det != 1 && det != -1 {
        return Err(MatError::BadDeterminant(det as i64));
    }
    let half_norm_sq = g.norm_sq() as f64 / 2.0;
    Ok(half_norm_sq.acosh())
}

/// tr(ghgh) − tr(g²h²) − tr(hgh⁻¹g⁻¹) + 2 for det-1 matrices g, h.
/// Identically zero; a nonzero return indicates an arithmetic bug.
///
/// Intermediate four-matrix products are evaluated in 128-bit arithmetic so
/// that pairs drawn from word balls of radius 8 stay exact even where the
/// 64-bit entry type would overflow.
pub fn trace_identity_residual(g: &Mat2, h: &Mat2) -> Result<i128, MatError> {
    if g.det() != 1 {
        return Err(MatError::BadDeterminant(g.det() as i64));
    }
    if h.det() != 1 {
        return Err(MatError::BadDeterminant(h.det() as i64));
    }
    let wide = |m: &Mat2| Wide2::from(m);
    let (gw, hw) = (wide(g), wide(h));
    let gh = gw.mul(&hw)?;
    let ghgh = gh.mul(&gh)?;
    let g2 = gw.mul(&gw)?;
    let h2 = hw.mul(&hw)?;
    let g2h2 = g2.mul(&h2)?;
    // hgh⁻¹g⁻¹ via exact unimodular inverses
    let hg = hw.mul(&gw)?;
    let comm = hg.mul(&hw.inv())?.mul(&gw.inv())?;
    Ok(ghgh.trace() - g2h2.trace() - comm.trace() + 2)
}

/// 128-bit working copy used only inside the trace identity.
#[derive(Clone, Copy)]
struct Wide2 {
    a11: i128,
    a12: i128,
    a21: i128,
    a22: i128,
}

impl Wide2 {
    fn from(m: &Mat2) -> Self {
        Wide2 { a11: m.a11 as i128, a12: m.a12 as i128, a21: m.a21 as i128, a22: m.a22 as i128 }
    }

    fn mul(&self, o: &Wide2) -> Result<Wide2, MatError> {
        let f = |p: i128, q: i128, r: i128, s: i128| -> Option<i128> {
            p.checked_mul(q)?.checked_add(r.checked_mul(s)?)
        };
        Ok(Wide2 {
            a11: f(self.a11, o.a11, self.a12, o.a21).ok_or(MatError::Overflow)?,
            a12: f(self.a11, o.a12, self.a12, o.a22).ok_or(MatError::Overflow)?,
            a21: f(self.a21, o.a11, self.a22, o.a21).ok_or(MatError::Overflow)?,
            a22: f(self.a21, o.a12, self.a22, o.a22).ok_or(MatError::Overflow)?,
        })
    }

    fn inv(&self) -> Wide2 {
        Wide2 { a11: self.a22, a12: -self.a12, a21: -self.a21, a22: self.a11 }
    }

    fn trace(&self) -> i128 {
        self.a11 + self.a22
    }
}
