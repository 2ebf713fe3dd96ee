//! Markov systems for restricted continued fractions.
//!
//! For an alphabet A the expanding map acts on the disjoint intervals
//! I_{a,a'} = g_a(I_{a'}) with I_a = [1/(a+1), 1/(a+(Amax+1)⁻¹)], the inverse
//! branch on I_{a,a'} being the Möbius action of the pair generator
//! g_a·g_{a'}. Interval endpoints are kept as exact rationals; floating point
//! enters only at evaluation boundaries, so disjointness and branch-image
//! checks are exact.

use crate::mat2z::{self, Mat2};
use num::rational::Ratio;
use num::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Rational = Ratio<i64>;

#[derive(Debug, Error, PartialEq)]
pub enum CfError {
    #[error("alphabet entries must be ≥ 1, strictly increasing, nonempty")]
    BadAlphabet,
    #[error("a Markov system needs an alphabet with at least two entries")]
    AlphabetTooSmall,
    #[error("point {0} lies in no cylinder")]
    OutsideDomain(f64),
    #[error("branch word must be nonempty")]
    EmptyWord,
    #[error("temporal-distance series failed to reach tolerance {tol} within {cap} terms")]
    ToleranceUnreachable { tol: f64, cap: usize },
}

/// Finite set of allowed partial quotients, strictly increasing.
///
/// A single-entry alphabet is allowed (the denominator-set enumeration uses
/// one); building a Markov system requires at least two entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    entries: Vec<u32>,
}

impl Alphabet {
    pub fn new(entries: Vec<u32>) -> Result<Self, CfError> {
        if entries.is_empty() || entries[0] < 1 {
            return Err(CfError::BadAlphabet);
        }
        if entries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CfError::BadAlphabet);
        }
        Ok(Alphabet { entries })
    }

    /// Contiguous alphabet {1, …, amax}.
    pub fn range(amax: u32) -> Result<Self, CfError> {
        Alphabet::new((1..=amax).collect())
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_entry(&self) -> u32 {
        *self.entries.last().unwrap()
    }
}

/// Index into `MarkovSystem::cylinders`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CylinderId(pub usize);

/// One Markov cell I_{a,a'} together with its inverse-branch matrix g_a·g_{a'}.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub a: u32,
    pub a2: u32,
    pub lo: Rational,
    pub hi: Rational,
    pub matrix: Mat2,
    lo_f: f64,
    hi_f: f64,
}

impl Cylinder {
    pub fn lo_f64(&self) -> f64 {
        self.lo_f
    }

    pub fn hi_f64(&self) -> f64 {
        self.hi_f
    }

    pub fn midpoint_f64(&self) -> f64 {
        0.5 * (self.lo_f + self.hi_f)
    }
}

/// The full branch system for an alphabet: |A|² cylinders inside
/// [1/(Amax+1), 1], the expanding map T, and the distortion log|T'|.
#[derive(Debug, Clone)]
pub struct MarkovSystem {
    alphabet: Alphabet,
    cylinders: Vec<Cylinder>,
    hull_lo: Rational,
    hull_hi: Rational,
    expansion: Rational,
}

fn ratio_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Möbius action of an integer matrix on an exact rational.
fn moebius_rational(m: &Mat2, x: Rational) -> Rational {
    let num = Rational::new(m.a11, 1) * x + Rational::new(m.a12, 1);
    let den = Rational::new(m.a21, 1) * x + Rational::new(m.a22, 1);
    num / den
}

impl MarkovSystem {
    /// Builds the |A|² cylinders, in lexicographic (a, a') order.
    pub fn build(alphabet: Alphabet) -> Result<Self, CfError> {
        if alphabet.len() < 2 {
            return Err(CfError::AlphabetTooSmall);
        }
        let amax = alphabet.max_entry() as i64;
        let hull_lo = Rational::new(1, amax + 1);
        let hull_hi = Rational::one();

        // I_a = g_a([1/(Amax+1), 1]), exactly
        let level_one: Vec<(u32, Rational, Rational)> = alphabet
            .entries()
            .iter()
            .map(|&a| {
                let g = mat2z::generator(a);
                // g_a is decreasing, so the image endpoints swap
                (a, moebius_rational(&g, hull_hi), moebius_rational(&g, hull_lo))
            })
            .collect();

        let mut cylinders = Vec::with_capacity(alphabet.len() * alphabet.len());
        for &a in alphabet.entries() {
            let g = mat2z::generator(a);
            for &(a2, lo2, hi2) in &level_one {
                let lo = moebius_rational(&g, hi2);
                let hi = moebius_rational(&g, lo2);
                debug_assert!(lo < hi);
                cylinders.push(Cylinder {
                    a,
                    a2,
                    lo,
                    hi,
                    matrix: mat2z::pair_generator(a, a2),
                    lo_f: ratio_to_f64(lo),
                    hi_f: ratio_to_f64(hi),
                });
            }
        }

        let base = Rational::one() + Rational::new(1, amax + 1);
        let expansion = base * base * base * base;
        Ok(MarkovSystem { alphabet, cylinders, hull_lo, hull_hi, expansion })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn cylinders(&self) -> &[Cylinder] {
        &self.cylinders
    }

    pub fn cylinder(&self, id: CylinderId) -> &Cylinder {
        &self.cylinders[id.0]
    }

    pub fn cylinder_id(&self, a: u32, a2: u32) -> Option<CylinderId> {
        self.cylinders
            .iter()
            .position(|c| c.a == a && c.a2 == a2)
            .map(CylinderId)
    }

    /// Lower end of the hull [1/(Amax+1), 1] containing every cylinder.
    pub fn hull(&self) -> (Rational, Rational) {
        (self.hull_lo, self.hull_hi)
    }

    pub fn hull_f64(&self) -> (f64, f64) {
        (ratio_to_f64(self.hull_lo), ratio_to_f64(self.hull_hi))
    }

    /// Expansion constant γ(A) = (1 + (Amax+1)⁻¹)⁴ as an exact rational.
    pub fn expansion(&self) -> Rational {
        self.expansion
    }

    pub fn expansion_f64(&self) -> f64 {
        ratio_to_f64(self.expansion)
    }

    /// log γ(A), the uniform per-step lower bound for the distortion.
    pub fn log_expansion(&self) -> f64 {
        self.expansion_f64().ln()
    }

    pub fn locate(&self, x: f64) -> Option<CylinderId> {
        self.cylinders
            .iter()
            .position(|c| c.lo_f <= x && x <= c.hi_f)
            .map(CylinderId)
    }

    /// One step of the expanding map: T(x) on the cylinder containing x.
    pub fn map_apply(&self, x: f64) -> Result<(f64, CylinderId), CfError> {
        let id = self.locate(x).ok_or(CfError::OutsideDomain(x))?;
        let m = &self.cylinder(id).matrix;
        // T = M⁻¹ on the cylinder of M
        let t = (m.a22 as f64 * x - m.a12 as f64) / (m.a11 as f64 - m.a21 as f64 * x);
        Ok((t, id))
    }

    /// Inverse branch of cylinder c applied to a point of the hull.
    pub fn inverse_branch(&self, c: CylinderId, x: f64) -> f64 {
        self.cylinder(c).matrix.moebius(x)
    }

    /// Distortion τ(x) = log|T'(x)| = −2·log|m11 − m21·x| on x's cylinder.
    pub fn tau(&self, x: f64) -> Result<f64, CfError> {
        let id = self.locate(x).ok_or(CfError::OutsideDomain(x))?;
        Ok(self.tau_on(id, x))
    }

    /// τ at a point already known to lie in cylinder c.
    pub fn tau_on(&self, c: CylinderId, x: f64) -> f64 {
        let m = &self.cylinder(c).matrix;
        -2.0 * (m.a11 as f64 - m.a21 as f64 * x).abs().ln()
    }

    /// τ(B_c(x)) for x in the hull, without evaluating B_c(x) first:
    /// the chain rule gives τ(B_c x) = 2·log|m21·x + m22|.
    pub fn tau_step(&self, c: CylinderId, x: f64) -> f64 {
        let m = &self.cylinder(c).matrix;
        2.0 * (m.a21 as f64 * x + m.a22 as f64).ln()
    }

    /// Birkhoff sum of τ along the inverse-branch orbit of x under `word`
    /// (word read left to right as the itinerary of the resulting preimage).
    /// Returns (τ-sum, orbit endpoint).
    pub fn tau_sum(&self, word: &[CylinderId], x: f64) -> Result<(f64, f64), CfError> {
        if word.is_empty() {
            return Err(CfError::EmptyWord);
        }
        let mut z = x;
        let mut sum = 0.0;
        for &c in word.iter().rev() {
            sum += self.tau_step(c, z);
            z = self.inverse_branch(c, z);
        }
        Ok((sum, z))
    }

    /// Temporal distance φ_{ξ,η}(u,v): the difference of the two backward
    /// distortion series. `xi` and `eta` are period blocks extended
    /// periodically; terms decay at rate ≥ 1/γ(A) so the series is truncated
    /// once a term drops below `tol` (hard cap `TEMPORAL_CAP` terms).
    pub fn temporal_distance(
        &self,
        xi: &[CylinderId],
        eta: &[CylinderId],
        u: f64,
        v: f64,
        tol: f64,
    ) -> Result<f64, CfError> {
        if xi.is_empty() || eta.is_empty() {
            return Err(CfError::EmptyWord);
        }
        let mut pu = u;
        let mut pv = v;
        let mut qu = u;
        let mut qv = v;
        let mut total = 0.0;
        for i in 0..TEMPORAL_CAP {
            let cx = xi[i % xi.len()];
            let ce = eta[i % eta.len()];
            let term = (self.tau_step(cx, pu) - self.tau_step(cx, pv))
                - (self.tau_step(ce, qu) - self.tau_step(ce, qv));
            total += term;
            pu = self.inverse_branch(cx, pu);
            pv = self.inverse_branch(cx, pv);
            qu = self.inverse_branch(ce, qu);
            qv = self.inverse_branch(ce, qv);
            if term.abs() < tol {
                return Ok(total);
            }
        }
        Err(CfError::ToleranceUnreachable { tol, cap: TEMPORAL_CAP })
    }
}

/// Hard cap for the temporal-distance series; geometric decay at rate γ(A)⁻¹
/// makes the cap unreachable for any sensible tolerance.
pub const TEMPORAL_CAP: usize = 200;

/// Outcome of the non-local-integrability search: the largest derivative
/// |∂φ_{ξ,η}/∂u| seen over the sampled witnesses.
#[derive(Debug, Clone)]
pub struct NliReport {
    pub samples: usize,
    pub max_abs_du: f64,
    pub min_abs_du: f64,
    pub witness: NliWitness,
}

#[derive(Debug, Clone)]
pub struct NliWitness {
    pub xi: Vec<CylinderId>,
    pub eta: Vec<CylinderId>,
    pub u: f64,
    pub v: f64,
    pub derivative: f64,
}

pub const NLI_DEFAULT_FD_STEP: f64 = 1e-6;
const NLI_PERIOD: usize = 3;
const NLI_SERIES_TOL: f64 = 1e-13;

/// Samples random periodic tails (ξ, η) and points (u, v), estimating
/// ∂φ_{ξ,η}/∂u by a Richardson-corrected central difference. The reported
/// maximum being bounded away from zero is the non-local-integrability
/// signal; the witness is empirical, with no claim of optimality.
pub fn nli_probe(
    sys: &MarkovSystem,
    samples: usize,
    seed: u64,
    fd_step: f64,
) -> Result<NliReport, CfError> {
    assert!(samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ncyl = sys.cylinders().len();
    let (lo, hi) = sys.hull_f64();
    let span = hi - lo;
    // keep u ± h inside the hull
    let margin = 4.0 * fd_step;

    let mut max_abs = -1.0f64;
    let mut min_abs = f64::INFINITY;
    let mut witness = None;
    for _ in 0..samples {
        let xi: Vec<CylinderId> =
            (0..NLI_PERIOD).map(|_| CylinderId(rng.gen_range(0..ncyl))).collect();
        let eta: Vec<CylinderId> =
            (0..NLI_PERIOD).map(|_| CylinderId(rng.gen_range(0..ncyl))).collect();
        let u = lo + margin + rng.gen::<f64>() * (span - 2.0 * margin);
        let v = lo + margin + rng.gen::<f64>() * (span - 2.0 * margin);
        let d = phi_du(sys, &xi, &eta, u, v, fd_step)?;
        let a = d.abs();
        if a > max_abs {
            max_abs = a;
            witness = Some(NliWitness { xi: xi.clone(), eta: eta.clone(), u, v, derivative: d });
        }
        if a < min_abs {
            min_abs = a;
        }
    }
    Ok(NliReport { samples, max_abs_du: max_abs, min_abs_du: min_abs, witness: witness.unwrap() })
}

/// Richardson-corrected central difference of φ_{ξ,η}(·, v) at u.
pub fn phi_du(
    sys: &MarkovSystem,
    xi: &[CylinderId],
    eta: &[CylinderId],
    u: f64,
    v: f64,
    h: f64,
) -> Result<f64, CfError> {
    let diff = |h: f64| -> Result<f64, CfError> {
        let plus = sys.temporal_distance(xi, eta, u + h, v, NLI_SERIES_TOL)?;
        let minus = sys.temporal_distance(xi, eta, u - h, v, NLI_SERIES_TOL)?;
        Ok((plus - minus) / (2.0 * h))
    };
    let d_h = diff(h)?;
    let d_h2 = diff(h / 2.0)?;
    Ok((4.0 * d_h2 - d_h) / 3.0)
}
