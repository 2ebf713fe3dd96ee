//! Random-walk convolution experiments in SL₂(ℤ/qℤ): flattening of the
//! walk measure on the new subspace, the one-step spectral gap, and
//! coset-mass concentration for the standard large subgroup families.
//!
//! Walk masses are exact integers until a norm is taken; mass conservation
//! (total = |A|^{2R}) is checked exactly. Convolution operators are applied
//! either sparsely through the generator permutations (one-step gap) or
//! densely through a division table g·x⁻¹ (multi-step flattening).

use crate::cf_dynamics::Alphabet;
use crate::congruence::{CongruenceError, FiniteGroup, NewSubspaceProjector};
use crate::mat2z::pair_generator;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error(transparent)]
    Congruence(#[from] CongruenceError),
    #[error("walk of {steps} steps over |S| = {gens} overflows the exact mass budget")]
    MassOverflow { steps: usize, gens: usize },
    #[error("coset families are defined for prime moduli, got {0}")]
    NonPrimeModulus(u32),
    #[error("group order {0} too large for the dense convolution table")]
    TooLargeForDense(usize),
    #[error("power iteration failed to stabilize")]
    NonConvergence,
}

/// Group order cap for the dense |Γ|² division table.
const MAX_DENSE_ORDER: usize = 6000;
const GAP_ITER_CAP: usize = 60_000;
/// Rayleigh-quotient stability threshold. The top singular pair on E_q can
/// be nearly degenerate for larger moduli; once the iterate sits inside the
/// cluster the quotient is accurate to the cluster width, so a strict
/// 1e-12 criterion would spin without gaining accuracy.
const GAP_TOL: f64 = 1e-9;

/// Integer-mass measure of the R-step generator walk on Γ_q.
#[derive(Debug, Clone)]
pub struct WalkMeasure {
    masses: Vec<u128>,
    steps: usize,
    generator_count: usize,
}

impl WalkMeasure {
    pub fn masses(&self) -> &[u128] {
        &self.masses
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn total_mass(&self) -> u128 {
        self.masses.iter().sum()
    }

    pub fn support_size(&self) -> usize {
        self.masses.iter().filter(|&&m| m > 0).count()
    }

    /// Exact convolution with another walk over the same group.
    pub fn convolve(&self, other: &WalkMeasure, group: &FiniteGroup) -> WalkMeasure {
        assert_eq!(self.masses.len(), group.order());
        assert_eq!(other.masses.len(), group.order());
        let mut out = vec![0u128; group.order()];
        for (h, &mh) in self.masses.iter().enumerate() {
            if mh == 0 {
                continue;
            }
            for (k, &mk) in other.masses.iter().enumerate() {
                if mk == 0 {
                    continue;
                }
                out[group.mul(h as u32, k as u32) as usize] += mh * mk;
            }
        }
        WalkMeasure {
            masses: out,
            steps: self.steps + other.steps,
            generator_count: self.generator_count,
        }
    }

    /// Normalized masses as f64 (total 1).
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total_mass() as f64;
        self.masses.iter().map(|&m| m as f64 / total).collect()
    }
}

/// Reduction of the |A|² pair generators mod q, with multiplicity.
fn generator_residues(group: &FiniteGroup, alphabet: &Alphabet) -> Result<Vec<u32>, MixError> {
    let mut out = Vec::with_capacity(alphabet.len() * alphabet.len());
    for &a in alphabet.entries() {
        for &a2 in alphabet.entries() {
            out.push(group.reduce(&pair_generator(a, a2))?);
        }
    }
    Ok(out)
}

/// ν_q^{(R)}: the R-fold convolution of ν = Σ_{s∈S_A} δ_{π_q(s)}, by
/// repeated generator pushforward in exact integer masses.
pub fn walk(group: &FiniteGroup, alphabet: &Alphabet, steps: usize) -> Result<WalkMeasure, MixError> {
    let gens = generator_residues(group, alphabet)?;
    // total mass |S|^R must stay exact in u128
    let bits = (gens.len() as f64).log2() * steps as f64;
    if bits >= 126.0 {
        return Err(MixError::MassOverflow { steps, gens: gens.len() });
    }
    let perms: Vec<Vec<u32>> = gens.iter().map(|&s| group.right_mul_perm(s)).collect();
    let mut masses = vec![0u128; group.order()];
    masses[group.identity_index() as usize] = 1;
    let mut next = vec![0u128; group.order()];
    for _ in 0..steps {
        next.fill(0);
        for perm in &perms {
            for (g, &m) in masses.iter().enumerate() {
                if m > 0 {
                    next[perm[g] as usize] += m;
                }
            }
        }
        std::mem::swap(&mut masses, &mut next);
    }
    Ok(WalkMeasure { masses, steps, generator_count: gens.len() })
}

/// ‖μ ⋆ ·‖₂ restricted to the new subspace E_q, for μ the normalized R-step
/// walk measure: the largest singular value, via power iteration on the
/// composition with the adjoint. Dense path, capped by group order.
pub fn flattening_norm(
    group: &FiniteGroup,
    alphabet: &Alphabet,
    steps: usize,
) -> Result<f64, MixError> {
    let n = group.order();
    if n > MAX_DENSE_ORDER {
        return Err(MixError::TooLargeForDense(n));
    }
    let mu = walk(group, alphabet, steps)?.normalized();

    // division table d[g·n + x] = idx(g·x⁻¹), so (μ⋆φ)(g) = Σ_x μ(g·x⁻¹)φ(x)
    let inv: Vec<u32> = (0..n as u32).map(|i| group.inv(i)).collect();
    let mut table = vec![0u32; n * n];
    for g in 0..n as u32 {
        let row = &mut table[g as usize * n..(g as usize + 1) * n];
        for x in 0..n as u32 {
            row[x as usize] = group.mul(g, inv[x as usize]);
        }
    }
    let apply = |phi: &[f64], out: &mut [f64]| {
        for g in 0..n {
            let row = &table[g * n..(g + 1) * n];
            let mut acc = 0.0;
            for x in 0..n {
                acc += mu[row[x] as usize] * phi[x];
            }
            out[g] = acc;
        }
    };
    let apply_adjoint = |psi: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for g in 0..n {
            let row = &table[g * n..(g + 1) * n];
            let pg = psi[g];
            for x in 0..n {
                out[x] += mu[row[x] as usize] * pg;
            }
        }
    };
    let proj = NewSubspaceProjector::new(group);
    largest_singular_value(n, &proj, apply, apply_adjoint)
}

/// Second-largest singular value of the one-step normalized convolution:
/// the largest on E_q (the constants carry singular value 1). Sparse in the
/// generator permutations, so large prime moduli are cheap.
pub fn spectral_gap(group: &FiniteGroup, alphabet: &Alphabet) -> Result<f64, MixError> {
    let gens = generator_residues(group, alphabet)?;
    let n = group.order();
    let count = gens.len() as f64;
    // (μ⋆φ)(g) = (1/|S|) Σ_s φ(s⁻¹g); adjoint averages over φ(s·g)
    let perms_fwd: Vec<Vec<u32>> =
        gens.iter().map(|&s| group.left_mul_perm(group.inv(s))).collect();
    let perms_adj: Vec<Vec<u32>> = gens.iter().map(|&s| group.left_mul_perm(s)).collect();
    let apply = |phi: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for perm in &perms_fwd {
            for g in 0..n {
                out[g] += phi[perm[g] as usize];
            }
        }
        out.iter_mut().for_each(|x| *x /= count);
    };
    let apply_adjoint = |psi: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for perm in &perms_adj {
            for g in 0..n {
                out[g] += psi[perm[g] as usize];
            }
        }
        out.iter_mut().for_each(|x| *x /= count);
    };
    let proj = NewSubspaceProjector::new(group);
    largest_singular_value(n, &proj, apply, apply_adjoint)
}

fn largest_singular_value(
    n: usize,
    proj: &NewSubspaceProjector,
    apply: impl Fn(&[f64], &mut [f64]),
    apply_adjoint: impl Fn(&[f64], &mut [f64]),
) -> Result<f64, MixError> {
    if n == 1 {
        return Ok(0.0);
    }
    // deterministic start with a nonzero E_q component
    let mut v: Vec<f64> = (0..n).map(|i| ((i * 2654435761) % 97) as f64 / 97.0 - 0.5).collect();
    let mut scratch = Vec::new();
    proj.project_new_inplace(&mut v, &mut scratch);
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    if nv == 0.0 {
        return Ok(0.0);
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut mid = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut sigma_sq = 0.0;
    let mut stable = 0;
    for _ in 0..GAP_ITER_CAP {
        apply(&v, &mut mid);
        proj.project_new_inplace(&mut mid, &mut scratch);
        apply_adjoint(&mid, &mut out);
        proj.project_new_inplace(&mut out, &mut scratch);
        let rayleigh: f64 = out.iter().zip(&v).map(|(a, b)| a * b).sum();
        let no = norm(&out);
        if no == 0.0 {
            return Ok(0.0);
        }
        for (x, y) in v.iter_mut().zip(&out) {
            *x = y / no;
        }
        if (rayleigh - sigma_sq).abs() <= GAP_TOL * rayleigh.abs().max(1e-300) {
            stable += 1;
            if stable >= 3 {
                return Ok(rayleigh.max(0.0).sqrt());
            }
        } else {
            stable = 0;
        }
        sigma_sq = rayleigh;
    }
    Err(MixError::NonConvergence)
}

/// Standard large subgroup families of SL₂(𝔽_p).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CosetFamily {
    /// upper-triangular subgroup (line stabilizer), order p(p−1)
    Borel,
    /// unipotent stabilizer of the vector (1,0)ᵀ, order p
    PointStabilizer,
}

#[derive(Debug, Clone)]
pub struct CosetMassReport {
    pub family: CosetFamily,
    pub steps: usize,
    /// max over cosets aH of the normalized walk mass
    pub max_mass: f64,
    /// uniform baseline |H|/|Γ_p|
    pub baseline: f64,
    pub coset_count: usize,
    pub subgroup_order: u64,
}

/// Maximum normalized walk mass carried by any left coset of the chosen
/// family, against the uniform baseline |H|/|Γ_p|. Prime moduli only.
pub fn coset_mass(
    group: &FiniteGroup,
    alphabet: &Alphabet,
    steps: usize,
    family: CosetFamily,
) -> Result<CosetMassReport, MixError> {
    let p = group.modulus();
    if !is_prime(p) {
        return Err(MixError::NonPrimeModulus(p));
    }
    let measure = walk(group, alphabet, steps)?;
    let n = group.order();

    // the left coset of g is determined by the image of (1,0)ᵀ: the vector
    // g·e₁ = (a, c) for the point stabilizer, its projective class for Borel
    let coset_id = |g: u32| -> usize {
        let m = group.element(g);
        let (a, c) = (m[0], m[2]);
        match family {
            CosetFamily::PointStabilizer => (a * p + c) as usize,
            CosetFamily::Borel => {
                if a != 0 {
                    // normalize to (1, c/a)
                    (c as u64 * mod_inverse(a, p) as u64 % p as u64) as usize
                } else {
                    p as usize
                }
            }
        }
    };
    let coset_count = match family {
        CosetFamily::PointStabilizer => (p * p) as usize, // sparse over nonzero vectors
        CosetFamily::Borel => (p + 1) as usize,
    };
    let mut mass = vec![0u128; coset_count];
    for g in 0..n as u32 {
        mass[coset_id(g)] += measure.masses()[g as usize];
    }
    let total = measure.total_mass() as f64;
    let max_mass = mass.iter().cloned().max().unwrap_or(0) as f64 / total;
    let subgroup_order = match family {
        CosetFamily::Borel => p as u64 * (p as u64 - 1),
        CosetFamily::PointStabilizer => p as u64,
    };
    let real_cosets = match family {
        CosetFamily::PointStabilizer => (p * p - 1) as usize,
        CosetFamily::Borel => (p + 1) as usize,
    };
    Ok(CosetMassReport {
        family,
        steps,
        max_mass,
        baseline: subgroup_order as f64 / n as f64,
        coset_count: real_cosets,
        subgroup_order,
    })
}

fn is_prime(p: u32) -> bool {
    if p < 2 {
        return false;
    }
    let mut k = 2;
    while k * k <= p {
        if p % k == 0 {
            return false;
        }
        k += 1;
    }
    true
}

fn mod_inverse(a: u32, p: u32) -> u32 {
    // p prime, a ≠ 0: Fermat
    let mut base = a as u64 % p as u64;
    let mut exp = p as u64 - 2;
    let mut acc = 1u64;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % p as u64;
        }
        base = base * base % p as u64;
        exp >>= 1;
    }
    acc as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn a12() -> Alphabet {
        Alphabet::new(vec![1, 2]).unwrap()
    }

    #[test]
    fn zero_step_walk_is_point_mass_at_identity() {
        let group = FiniteGroup::enumerate(5).unwrap();
        let w = walk(&group, &a12(), 0).unwrap();
        assert_eq!(w.total_mass(), 1);
        assert_eq!(w.support_size(), 1);
        assert_eq!(w.masses()[group.identity_index() as usize], 1);
    }

    #[test]
    fn mass_conservation_is_exact() {
        let group = FiniteGroup::enumerate(3).unwrap();
        for r in 0..12 {
            let w = walk(&group, &a12(), r).unwrap();
            assert_eq!(w.total_mass(), 4u128.pow(r as u32));
        }
        let a5 = Alphabet::range(5).unwrap();
        let w = walk(&group, &a5, 6).unwrap();
        assert_eq!(w.total_mass(), 25u128.pow(6));
    }

    #[test]
    fn mod2_walk_support_matches_direct_group_computation() {
        let group = FiniteGroup::enumerate(2).unwrap();
        // pair(2,2) ≡ I mod 2
        assert_eq!(
            group.reduce(&pair_generator(2, 2)).unwrap(),
            group.identity_index()
        );

        // direct 6-element oracle: products of two generator residues,
        // multiplying 2×2 matrices mod 2 by hand
        let gens: [[u32; 4]; 4] = [[1, 1, 1, 0], [1, 0, 1, 1], [1, 1, 0, 1], [1, 0, 0, 1]];
        let mul2 = |x: [u32; 4], y: [u32; 4]| -> [u32; 4] {
            [
                (x[0] * y[0] + x[1] * y[2]) % 2,
                (x[0] * y[1] + x[1] * y[3]) % 2,
                (x[2] * y[0] + x[3] * y[2]) % 2,
                (x[2] * y[1] + x[3] * y[3]) % 2,
            ]
        };
        let mut expected: Vec<[u32; 4]> = Vec::new();
        for &x in &gens {
            for &y in &gens {
                let p = mul2(x, y);
                if !expected.contains(&p) {
                    expected.push(p);
                }
            }
        }
        let w = walk(&group, &a12(), 2).unwrap();
        assert_eq!(w.support_size(), expected.len());
        for m in expected {
            let idx = group.index_of(m).unwrap();
            assert!(w.masses()[idx as usize] > 0);
        }
    }

    #[test]
    fn walk_convolution_is_associative() {
        let group = FiniteGroup::enumerate(5).unwrap();
        let w5 = walk(&group, &a12(), 5).unwrap();
        let w3 = walk(&group, &a12(), 3).unwrap();
        let w2 = walk(&group, &a12(), 2).unwrap();
        let conv = w3.convolve(&w2, &group);
        assert_eq!(conv.masses(), w5.masses());
        assert_eq!(conv.total_mass(), w5.total_mass());
    }

    #[test]
    fn mass_overflow_is_detected() {
        let group = FiniteGroup::enumerate(3).unwrap();
        let a5 = Alphabet::range(5).unwrap();
        assert!(matches!(
            walk(&group, &a5, 50_000),
            Err(MixError::MassOverflow { .. })
        ));
    }

    #[test]
    fn flattening_norm_base_cases() {
        let group = FiniteGroup::enumerate(5).unwrap();
        let n0 = flattening_norm(&group, &a12(), 0).unwrap();
        assert!((n0 - 1.0).abs() < 1e-9, "identity convolution norm {}", n0);
        // decay with steps
        let n2 = flattening_norm(&group, &a12(), 2).unwrap();
        let n6 = flattening_norm(&group, &a12(), 6).unwrap();
        assert!(n2 < 1.0);
        assert!(n6 < n2);
    }

    #[test]
    fn flattening_norm_is_submultiplicative() {
        let group = FiniteGroup::enumerate(7).unwrap();
        let f2 = flattening_norm(&group, &a12(), 2).unwrap();
        let f3 = flattening_norm(&group, &a12(), 3).unwrap();
        let f5 = flattening_norm(&group, &a12(), 5).unwrap();
        assert!(f5 <= f2 * f3 + 1e-10);
    }

    #[test]
    fn convolution_is_stochastic_on_constants() {
        let group = FiniteGroup::enumerate(5).unwrap();
        let mu = walk(&group, &a12(), 3).unwrap().normalized();
        // Σ_h μ(h)·1 = 1 for the constant function
        let total: f64 = mu.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_gap_q2_matches_dense_svd() {
        let group = FiniteGroup::enumerate(2).unwrap();
        let gap = spectral_gap(&group, &a12()).unwrap();

        // dense oracle on the order-6 group: build the convolution matrix,
        // project onto the orthocomplement of constants, take σ₂
        let n = group.order();
        let gens = generator_residues(&group, &a12()).unwrap();
        let mut conv = DMatrix::<f64>::zeros(n, n);
        for &s in &gens {
            let perm = group.left_mul_perm(group.inv(s));
            for g in 0..n {
                conv[(g, perm[g] as usize)] += 1.0 / gens.len() as f64;
            }
        }
        let proj = DMatrix::<f64>::from_fn(n, n, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - 1.0 / n as f64
        });
        let restricted = &proj * conv * &proj;
        let svd = restricted.svd(false, false);
        let sigma = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            (gap - sigma).abs() < 1e-9,
            "power iteration {} vs dense SVD {}",
            gap,
            sigma
        );
    }

    #[test]
    fn spectral_gap_below_one_for_small_primes() {
        for p in [3u32, 5, 7, 11] {
            let group = FiniteGroup::enumerate(p).unwrap();
            let gap = spectral_gap(&group, &a12()).unwrap();
            assert!(gap < 1.0, "gap {} at p = {}", gap, p);
            assert!(gap > 0.0);
        }
    }

    #[test]
    fn spectral_gap_invariant_under_generator_conjugation() {
        let group = FiniteGroup::enumerate(5).unwrap();
        let gap = spectral_gap(&group, &a12()).unwrap();

        // conjugating the generator set is a unitary relabeling: measure it
        // by conjugating the whole walk measure instead
        let t = group.reduce(&pair_generator(2, 1)).unwrap();
        let ti = group.inv(t);
        let gens = generator_residues(&group, &a12()).unwrap();
        let n = group.order();
        let conj_perms: Vec<Vec<u32>> = gens
            .iter()
            .map(|&s| {
                let cs = group.mul(group.mul(t, s), ti);
                group.left_mul_perm(group.inv(cs))
            })
            .collect();
        let apply = |phi: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for perm in &conj_perms {
                for g in 0..n {
                    out[g] += phi[perm[g] as usize];
                }
            }
            out.iter_mut().for_each(|x| *x /= gens.len() as f64);
        };
        let conj_perms_adj: Vec<Vec<u32>> = gens
            .iter()
            .map(|&s| {
                let cs = group.mul(group.mul(t, s), ti);
                group.left_mul_perm(cs)
            })
            .collect();
        let apply_adjoint = |psi: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for perm in &conj_perms_adj {
                for g in 0..n {
                    out[g] += psi[perm[g] as usize];
                }
            }
            out.iter_mut().for_each(|x| *x /= gens.len() as f64);
        };
        let proj = NewSubspaceProjector::new(&group);
        let conj_gap = largest_singular_value(n, &proj, apply, apply_adjoint).unwrap();
        assert!((gap - conj_gap).abs() <= 1e-10, "{} vs {}", gap, conj_gap);
    }

    #[test]
    fn coset_mass_base_and_decay() {
        let group = FiniteGroup::enumerate(7).unwrap();
        let r0 = coset_mass(&group, &a12(), 0, CosetFamily::Borel).unwrap();
        assert_eq!(r0.max_mass, 1.0);
        assert!((r0.baseline - 0.125).abs() < 1e-12);
        assert_eq!(r0.subgroup_order, 42);

        let r = (3.0 * 7.0f64.ln()).ceil() as usize;
        let mixed = coset_mass(&group, &a12(), r, CosetFamily::Borel).unwrap();
        assert!(mixed.max_mass < 1.0);
        assert!(mixed.max_mass >= mixed.baseline);
        assert!(
            mixed.max_mass <= 4.0 * mixed.baseline,
            "coset mass {} vs baseline {}",
            mixed.max_mass,
            mixed.baseline
        );

        let unip = coset_mass(&group, &a12(), r, CosetFamily::PointStabilizer).unwrap();
        assert!((unip.baseline - 7.0 / 336.0).abs() < 1e-12);
        assert!(unip.max_mass < 0.5);
    }

    #[test]
    fn borel_subgroup_order_by_enumeration() {
        let group = FiniteGroup::enumerate(7).unwrap();
        // brute force: elements with lower-left entry ≡ 0
        let count = (0..group.order() as u32)
            .filter(|&i| group.element(i)[2] == 0)
            .count() as u64;
        assert_eq!(count, 7 * 6);
        // unipotent vector stabilizer: a = 1, c = 0, d = 1
        let ucount = (0..group.order() as u32)
            .filter(|&i| {
                let m = group.element(i);
                m[0] == 1 && m[2] == 0 && m[3] == 1
            })
            .count() as u64;
        assert_eq!(ucount, 7);
    }

    #[test]
    fn coset_mass_rejects_composite_moduli() {
        let group = FiniteGroup::enumerate(6).unwrap();
        assert!(matches!(
            coset_mass(&group, &a12(), 3, CosetFamily::Borel),
            Err(MixError::NonPrimeModulus(6))
        ));
    }
}
