//! Explicit SL₂(ℤ/qℤ) machinery: enumeration, index maps, reduction of
//! integer matrices, generator permutations, and the divisor decomposition of
//! the regular representation with its new-subspace projector.
//!
//! Elements are packed residue 4-tuples (6 bits per entry, q ≤ 64) with a
//! dense index, so group actions become permutation gathers, the
//! performance-critical path for the twisted and mixing modules.

use crate::mat2z::Mat2;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CongruenceError {
    #[error("modulus {0} exceeds the enumeration cap {MAX_MODULUS}")]
    CapExceeded(u32),
    #[error("modulus must be ≥ 1")]
    BadModulus,
    #[error("matrix determinant ≡ {0} (mod {1}), expected 1")]
    DeterminantNotOne(u32, u32),
    #[error("{0} does not divide {1}")]
    NotADivisor(u32, u32),
    #[error("group cache file is corrupt or mismatched")]
    BadCache,
}

/// Hard cap: |SL₂(ℤ/qℤ)| grows like q³; q = 64 keeps tables around 260k.
pub const MAX_MODULUS: u32 = 64;

fn pack(m: [u32; 4]) -> u32 {
    (m[0] << 18) | (m[1] << 12) | (m[2] << 6) | m[3]
}

fn unpack(p: u32) -> [u32; 4] {
    [(p >> 18) & 63, (p >> 12) & 63, (p >> 6) & 63, p & 63]
}

/// Enumerated SL₂(ℤ/qℤ) with a dense element index.
///
/// q = 1 is allowed and yields the trivial group, so untwisted paths can be
/// treated uniformly.
#[derive(Debug, Clone)]
pub struct FiniteGroup {
    q: u32,
    elements: Vec<u32>,
    index: HashMap<u32, u32>,
    identity: u32,
}

/// Number of distinct prime factors is all we need: |SL₂(ℤ/qℤ)| =
/// q³·Π_{p|q}(1 − p⁻²), exactly in integers.
pub fn group_order_formula(q: u32) -> u64 {
    let mut order = (q as u64).pow(3);
    let mut m = q;
    let mut p = 2;
    while p * p <= m {
        if m % p == 0 {
            order = order / (p as u64 * p as u64) * ((p as u64 * p as u64) - 1);
            while m % p == 0 {
                m /= p;
            }
        }
        p += 1;
    }
    if m > 1 {
        order = order / (m as u64 * m as u64) * ((m as u64 * m as u64) - 1);
    }
    order
}

impl FiniteGroup {
    /// Enumerates the full element table. The order matches the divisor
    /// product formula; anything else is a bug.
    pub fn enumerate(q: u32) -> Result<Self, CongruenceError> {
        if q == 0 {
            return Err(CongruenceError::BadModulus);
        }
        if q > MAX_MODULUS {
            return Err(CongruenceError::CapExceeded(q));
        }
        let mut elements = Vec::new();
        // solve a·d ≡ 1 + b·c (mod q) for d, given (a, b, c)
        let mut d_by_product: Vec<Vec<u32>> = vec![Vec::new(); q as usize];
        for a in 0..q {
            for row in d_by_product.iter_mut() {
                row.clear();
            }
            for d in 0..q {
                d_by_product[((a * d) % q) as usize].push(d);
            }
            for b in 0..q {
                for c in 0..q {
                    let need = ((1 + b * c) % q) as usize;
                    for &d in &d_by_product[need] {
                        elements.push(pack([a, b, c, d]));
                    }
                }
            }
        }
        elements.sort_unstable();
        debug_assert_eq!(elements.len() as u64, group_order_formula(q));
        Ok(Self::from_elements(q, elements))
    }

    fn from_elements(q: u32, elements: Vec<u32>) -> Self {
        let index: HashMap<u32, u32> =
            elements.iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();
        let id = pack([1 % q, 0, 0, 1 % q]);
        let identity = index[&id];
        FiniteGroup { q, elements, index, identity }
    }

    pub fn modulus(&self) -> u32 {
        self.q
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn identity_index(&self) -> u32 {
        self.identity
    }

    pub fn element(&self, idx: u32) -> [u32; 4] {
        unpack(self.elements[idx as usize])
    }

    pub fn index_of(&self, m: [u32; 4]) -> Option<u32> {
        self.index.get(&pack(m)).copied()
    }

    /// Reduction of an exact integer matrix mod q; requires det ≡ 1 (mod q).
    pub fn reduce(&self, g: &Mat2) -> Result<u32, CongruenceError> {
        let m = g.mod_q(self.q);
        let det = (m[0] * m[3] + self.q * self.q - (m[1] * m[2]) % (self.q * self.q)) % self.q;
        if det != 1 % self.q {
            return Err(CongruenceError::DeterminantNotOne(det, self.q));
        }
        Ok(self.index[&pack(m)])
    }

    pub fn mul(&self, i: u32, j: u32) -> u32 {
        let x = self.element(i);
        let y = self.element(j);
        let q = self.q;
        let m = [
            (x[0] * y[0] + x[1] * y[2]) % q,
            (x[0] * y[1] + x[1] * y[3]) % q,
            (x[2] * y[0] + x[3] * y[2]) % q,
            (x[2] * y[1] + x[3] * y[3]) % q,
        ];
        self.index[&pack(m)]
    }

    pub fn inv(&self, i: u32) -> u32 {
        let m = self.element(i);
        let q = self.q;
        // adjugate of a det-1 residue matrix
        let a = [m[3] % q, (q - m[1] % q) % q, (q - m[2] % q) % q, m[0] % q];
        self.index[&pack(a)]
    }

    /// Permutation g ↦ g·h of element indices (right-regular action of h).
    pub fn right_mul_perm(&self, h: u32) -> Vec<u32> {
        (0..self.order() as u32).map(|g| self.mul(g, h)).collect()
    }

    /// Permutation g ↦ h·g of element indices.
    pub fn left_mul_perm(&self, h: u32) -> Vec<u32> {
        (0..self.order() as u32).map(|g| self.mul(h, g)).collect()
    }

    /// Index map into the level-q' group under entrywise reduction, q' | q.
    pub fn reduction_map(&self, target: &FiniteGroup) -> Result<Vec<u32>, CongruenceError> {
        if self.q % target.q != 0 {
            return Err(CongruenceError::NotADivisor(target.q, self.q));
        }
        Ok(self
            .elements
            .iter()
            .map(|&p| {
                let m = unpack(p);
                target.index[&pack([
                    m[0] % target.q,
                    m[1] % target.q,
                    m[2] % target.q,
                    m[3] % target.q,
                ])]
            })
            .collect())
    }

    /// Writes the element table to `dir/sl2_q{q}.tbl` (see `load_cached`).
    pub fn write_cache(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("sl2_q{}.tbl", self.q));
        let mut f = std::fs::File::create(path)?;
        f.write_all(b"CFGQ")?;
        f.write_all(&1u32.to_le_bytes())?;
        f.write_all(&self.q.to_le_bytes())?;
        f.write_all(&(self.elements.len() as u64).to_le_bytes())?;
        for &e in &self.elements {
            f.write_all(&e.to_le_bytes())?;
        }
        Ok(())
    }

    /// Loads a cached table if present and well-formed, otherwise enumerates
    /// (and caches when a directory is given).
    pub fn load_cached(q: u32, dir: Option<&Path>) -> Result<Self, CongruenceError> {
        if let Some(dir) = dir {
            let path = dir.join(format!("sl2_q{}.tbl", q));
            if let Ok(mut f) = std::fs::File::open(&path) {
                let mut buf = Vec::new();
                if f.read_to_end(&mut buf).is_ok() {
                    if let Some(g) = Self::parse_cache(q, &buf) {
                        return Ok(g);
                    }
                }
                return Err(CongruenceError::BadCache);
            }
            let g = Self::enumerate(q)?;
            let _ = g.write_cache(dir);
            return Ok(g);
        }
        Self::enumerate(q)
    }

    fn parse_cache(q: u32, buf: &[u8]) -> Option<Self> {
        if buf.len() < 20 || &buf[0..4] != b"CFGQ" {
            return None;
        }
        let ver = u32::from_le_bytes(buf[4..8].try_into().ok()?);
        let fq = u32::from_le_bytes(buf[8..12].try_into().ok()?);
        let count = u64::from_le_bytes(buf[12..20].try_into().ok()?) as usize;
        if ver != 1 || fq != q || buf.len() != 20 + 4 * count {
            return None;
        }
        if count as u64 != group_order_formula(q) {
            return None;
        }
        let elements: Vec<u32> = buf[20..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(Self::from_elements(q, elements))
    }
}

fn divisors_of(q: u32) -> Vec<u32> {
    let mut d: Vec<u32> = (1..=q).filter(|k| q % k == 0).collect();
    d.sort_unstable();
    d
}

fn moebius(mut n: u32) -> i64 {
    let mut mu = 1i64;
    let mut p = 2;
    while p * p <= n {
        if n % p == 0 {
            n /= p;
            if n % p == 0 {
                return 0;
            }
            mu = -mu;
        }
        p += 1;
    }
    if n > 1 {
        mu = -mu;
    }
    mu
}

/// Orthogonal decomposition ℂ^{Γ_q} = ⊕_{q'|q} E^q_{q'} of the regular
/// representation by divisor levels.
///
/// A_d averages over the congruence kernel of level d (acting by right
/// translations), projecting onto functions lifted from level d; the
/// new-at-level-q' projector is the Möbius inclusion–exclusion
/// Σ_{d|q'} μ(q'/d)·A_d over the divisor lattice.
#[derive(Debug, Clone)]
pub struct NewSubspaceProjector {
    q: u32,
    order: usize,
    divisors: Vec<u32>,
    /// per divisor: element index → id of its left coset under the kernel
    /// (equivalently, the index of its reduction mod d)
    coset_of: Vec<Vec<u32>>,
    /// per divisor: number of cosets = |Γ_d|
    coset_count: Vec<usize>,
}

impl NewSubspaceProjector {
    pub fn new(group: &FiniteGroup) -> Self {
        let q = group.modulus();
        let divisors = divisors_of(q);
        let mut coset_of = Vec::with_capacity(divisors.len());
        let mut coset_count = Vec::with_capacity(divisors.len());
        for &d in &divisors {
            let mut ids: HashMap<u32, u32> = HashMap::new();
            let mut map = Vec::with_capacity(group.order());
            for i in 0..group.order() as u32 {
                let m = group.element(i);
                let key = pack([m[0] % d, m[1] % d, m[2] % d, m[3] % d]);
                let next = ids.len() as u32;
                let id = *ids.entry(key).or_insert(next);
                map.push(id);
            }
            coset_count.push(ids.len());
            coset_of.push(map);
        }
        NewSubspaceProjector { q, order: group.order(), divisors, coset_of, coset_count }
    }

    pub fn modulus(&self) -> u32 {
        self.q
    }

    /// Averaging projector onto functions lifted from level d (d | q).
    pub fn average_level(&self, d: u32, v: &[f64]) -> Result<Vec<f64>, CongruenceError> {
        let di = self
            .divisors
            .iter()
            .position(|&x| x == d)
            .ok_or(CongruenceError::NotADivisor(d, self.q))?;
        assert_eq!(v.len(), self.order);
        let coset_of = &self.coset_of[di];
        let mut sums = vec![0.0; self.coset_count[di]];
        for (i, &x) in v.iter().enumerate() {
            sums[coset_of[i] as usize] += x;
        }
        let size = (self.order / self.coset_count[di]) as f64;
        Ok((0..self.order).map(|i| sums[coset_of[i] as usize] / size).collect())
    }

    /// Component of v in E^q_{q'}: new at level q'.
    pub fn project_component(&self, level: u32, v: &[f64]) -> Result<Vec<f64>, CongruenceError> {
        if self.q % level != 0 {
            return Err(CongruenceError::NotADivisor(level, self.q));
        }
        let mut out = vec![0.0; self.order];
        for &d in &self.divisors {
            if level % d != 0 {
                continue;
            }
            let mu = moebius(level / d);
            if mu == 0 {
                continue;
            }
            let avg = self.average_level(d, v)?;
            for (o, a) in out.iter_mut().zip(&avg) {
                *o += mu as f64 * a;
            }
        }
        Ok(out)
    }

    /// Component of v in the new subspace E_q = E^q_q. For prime q this is
    /// v minus its mean.
    pub fn project_new(&self, v: &[f64]) -> Vec<f64> {
        self.project_component(self.q, v).expect("q divides q")
    }

    /// In-place new-subspace projection, reusing a scratch buffer of length
    /// max coset count. Used in iteration hot loops.
    pub fn project_new_inplace(&self, v: &mut [f64], scratch: &mut Vec<f64>) {
        // accumulate Σ μ(q/d)·A_d v without allocating per call
        let mut acc = vec![0.0; self.order];
        for (di, &d) in self.divisors.iter().enumerate() {
            let mu = moebius(self.q / d);
            if mu == 0 {
                continue;
            }
            let coset_of = &self.coset_of[di];
            scratch.clear();
            scratch.resize(self.coset_count[di], 0.0);
            for (i, &x) in v.iter().enumerate() {
                scratch[coset_of[i] as usize] += x;
            }
            let size = (self.order / self.coset_count[di]) as f64;
            for i in 0..self.order {
                acc[i] += mu as f64 * scratch[coset_of[i] as usize] / size;
            }
        }
        v.copy_from_slice(&acc);
    }

    /// Exact rank of E^q_{q'}: Σ_{d|q'} μ(q'/d)·|Γ_d| (trace of the projector).
    pub fn component_rank(&self, level: u32) -> Result<i64, CongruenceError> {
        if self.q % level != 0 {
            return Err(CongruenceError::NotADivisor(level, self.q));
        }
        let mut rank = 0i64;
        for &d in &self.divisors {
            if level % d == 0 {
                rank += moebius(level / d) * group_order_formula(d) as i64;
            }
        }
        Ok(rank)
    }

    pub fn divisors(&self) -> &[u32] {
        &self.divisors
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat2z::{multiply, pair_generator, IDENTITY};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_group_orders() {
        assert_eq!(FiniteGroup::enumerate(2).unwrap().order(), 6);
        assert_eq!(FiniteGroup::enumerate(3).unwrap().order(), 24);
        assert_eq!(FiniteGroup::enumerate(4).unwrap().order(), 48);
        assert_eq!(FiniteGroup::enumerate(1).unwrap().order(), 1);
    }

    #[test]
    fn order_formula_matches_brute_force_enumeration() {
        for q in 2..=12 {
            // independent brute force over all q⁴ residue tuples
            let mut count = 0u64;
            for a in 0..q {
                for b in 0..q {
                    for c in 0..q {
                        for d in 0..q {
                            if (a * d + q * q - (b * c) % (q * q)) % q == 1 % q {
                                count += 1;
                            }
                        }
                    }
                }
            }
            assert_eq!(count, group_order_formula(q), "q = {}", q);
            assert_eq!(FiniteGroup::enumerate(q).unwrap().order() as u64, count);
        }
    }

    #[test]
    fn cap_and_bad_modulus() {
        assert!(matches!(FiniteGroup::enumerate(0), Err(CongruenceError::BadModulus)));
        assert!(matches!(FiniteGroup::enumerate(65), Err(CongruenceError::CapExceeded(65))));
    }

    #[test]
    fn reduce_examples() {
        let g2 = FiniteGroup::enumerate(2).unwrap();
        let id = g2.reduce(&IDENTITY).unwrap();
        assert_eq!(id, g2.identity_index());
        let r = g2.reduce(&pair_generator(1, 1)).unwrap();
        assert_eq!(g2.element(r), [1, 1, 1, 0]);

        // det ≢ 1 is rejected
        let bad = crate::mat2z::Mat2::new(2, 0, 0, 2);
        assert!(matches!(g2.reduce(&bad), Err(CongruenceError::DeterminantNotOne(0, 2))));
    }

    #[test]
    fn reduce_is_a_homomorphism() {
        let group = FiniteGroup::enumerate(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gens: Vec<_> =
            [(1, 1), (1, 2), (2, 1), (2, 2)].iter().map(|&(a, b)| pair_generator(a, b)).collect();
        for _ in 0..1000 {
            let mut x = IDENTITY;
            let mut y = IDENTITY;
            for _ in 0..rng.gen_range(1..5) {
                x = multiply(&x, &gens[rng.gen_range(0..4)]).unwrap();
            }
            for _ in 0..rng.gen_range(1..5) {
                y = multiply(&y, &gens[rng.gen_range(0..4)]).unwrap();
            }
            let xy = multiply(&x, &y).unwrap();
            assert_eq!(
                group.reduce(&xy).unwrap(),
                group.mul(group.reduce(&x).unwrap(), group.reduce(&y).unwrap())
            );
        }
    }

    #[test]
    fn generator_actions_are_permutations() {
        let group = FiniteGroup::enumerate(5).unwrap();
        let h = group.reduce(&pair_generator(1, 2)).unwrap();
        for perm in [group.right_mul_perm(h), group.left_mul_perm(h)] {
            let mut seen = vec![false; group.order()];
            for &t in &perm {
                assert!(!seen[t as usize]);
                seen[t as usize] = true;
            }
        }
        // inverse really inverts
        let hi = group.inv(h);
        assert_eq!(group.mul(h, hi), group.identity_index());
    }

    #[test]
    fn projector_on_primes_is_mean_removal() {
        let group = FiniteGroup::enumerate(5).unwrap();
        let proj = NewSubspaceProjector::new(&group);
        let n = group.order();
        let constant = vec![3.25; n];
        let out = proj.project_new(&constant);
        assert!(out.iter().all(|&x| x.abs() < 1e-12));

        assert_eq!(proj.component_rank(5).unwrap(), n as i64 - 1);
        assert_eq!(proj.component_rank(1).unwrap(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean: f64 = v.iter().sum::<f64>() / n as f64;
        let out = proj.project_new(&v);
        for (o, x) in out.iter().zip(&v) {
            assert!((o - (x - mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn divisor_projectors_decompose_q6() {
        let group = FiniteGroup::enumerate(6).unwrap();
        assert_eq!(group.order(), 144);
        let proj = NewSubspaceProjector::new(&group);
        let n = group.order();

        // ranks over the divisor lattice sum to the group order
        let ranks: Vec<i64> =
            [1u32, 2, 3, 6].iter().map(|&d| proj.component_rank(d).unwrap()).collect();
        assert_eq!(ranks, vec![1, 5, 23, 115]);
        assert_eq!(ranks.iter().sum::<i64>(), n as i64);

        // projector algebra on random vectors: idempotent, mutually
        // orthogonal, summing to the identity
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let comps: Vec<Vec<f64>> =
            [1u32, 2, 3, 6].iter().map(|&d| proj.project_component(d, &v).unwrap()).collect();
        let mut sum = vec![0.0; n];
        for c in &comps {
            for (s, x) in sum.iter_mut().zip(c) {
                *s += x;
            }
        }
        for (s, x) in sum.iter().zip(&v) {
            assert!((s - x).abs() < 1e-12);
        }
        for (i, &di) in [1u32, 2, 3, 6].iter().enumerate() {
            let twice = proj.project_component(di, &comps[i]).unwrap();
            for (a, b) in twice.iter().zip(&comps[i]) {
                assert!((a - b).abs() < 1e-12, "P² ≠ P at level {di}");
            }
            for (j, &dj) in [1u32, 2, 3, 6].iter().enumerate() {
                if i == j {
                    continue;
                }
                let cross = proj.project_component(dj, &comps[i]).unwrap();
                assert!(cross.iter().all(|&x| x.abs() < 1e-12), "P_{di}P_{dj} ≠ 0");
            }
        }

        // self-adjointness: ⟨Pv, w⟩ = ⟨v, Pw⟩
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pv = proj.project_new(&v);
        let pw = proj.project_new(&w);
        let lhs: f64 = pv.iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.iter().zip(&pw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        // dense trace agrees with the closed-form rank
        let mut trace = 0.0;
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            trace += proj.project_new(&e)[i];
        }
        assert!((trace - 115.0).abs() < 1e-8);
    }

    #[test]
    fn inplace_projection_matches_allocating_path() {
        let group = FiniteGroup::enumerate(6).unwrap();
        let proj = NewSubspaceProjector::new(&group);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let v: Vec<f64> = (0..group.order()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = proj.project_new(&v);
        let mut w = v.clone();
        let mut scratch = Vec::new();
        proj.project_new_inplace(&mut w, &mut scratch);
        for (a, b) in w.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = std::env::temp_dir().join(format!("cfcount_cache_test_{}", std::process::id()));
        let g = FiniteGroup::enumerate(5).unwrap();
        g.write_cache(&dir).unwrap();
        let loaded = FiniteGroup::load_cached(5, Some(&dir)).unwrap();
        assert_eq!(loaded.order(), g.order());
        assert_eq!(loaded.element(17), g.element(17));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn reduction_map_respects_multiplication() {
        let g10 = FiniteGroup::enumerate(10).unwrap();
        let g5 = FiniteGroup::enumerate(5).unwrap();
        let map = g10.reduction_map(&g5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..200 {
            let i = rng.gen_range(0..g10.order()) as u32;
            let j = rng.gen_range(0..g10.order()) as u32;
            assert_eq!(
                map[g10.mul(i, j) as usize],
                g5.mul(map[i as usize], map[j as usize])
            );
        }
    }
}
