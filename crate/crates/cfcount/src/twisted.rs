//! Congruence-twisted transfer operators and their spectral radii on the
//! new subspace.
//!
//! The twisted operator acts on node-vectors valued in ℂ^{Γ_q}: one dense
//! collocation block on the node axis tensored with a right-regular
//! permutation per source cylinder (the cocycle is locally constant, one
//! group element per cylinder). Operators are normalized with the λ(a), h_a
//! data of the untwisted real-parameter operator, so the q = 1, b = 0,
//! a = δ operator fixes the constant function.
//!
//! Spectral radii are measured in the discretized ℓ² node norm rather than
//! the C¹ norm of the continuous theory: collocation vectors carry no
//! intrinsic derivative, and the properties under test (radius < 1,
//! uniformity trends in q) are norm-proxy statements. This is a documented
//! measurement convention, not an oversight.

use crate::congruence::{CongruenceError, FiniteGroup, NewSubspaceProjector};
use crate::thermo::{SpectralModel, ThermoError};
use num::complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwistedError {
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Congruence(#[from] CongruenceError),
    #[error("vector length {got} does not match operator shape {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("configuration needs {0} vector entries, above the desk-scale cap {MAX_VECTOR_ENTRIES}")]
    TooLarge(usize),
}

/// Refusal threshold for |A|²·nodes·|Γ_q| (desk scale).
pub const MAX_VECTOR_ENTRIES: usize = 100_000_000;

const POWER_CAP: usize = 500;
const RESTARTS: u64 = 3;
const RATIO_WINDOW: usize = 10;
const BURN_IN: usize = 30;
/// Relative drift of the cumulative ratio mean under which the power
/// iteration counts as converged.
const RATIO_SPREAD_TOL: f64 = 1e-4;

/// Normalized twisted transfer operator L_{s,q} at s = a + ib, matrix-free
/// on the group axis.
pub struct TwistedOperator {
    node_dim: usize,
    group_order: usize,
    a: f64,
    b: f64,
    q: u32,
    /// dense normalized node matrix, row-major node_dim × node_dim
    node_matrix: Vec<Complex64>,
    /// per source cylinder: right-regular permutation g ↦ g·π_q(branch matrix)
    cyl_perm: Vec<Vec<u32>>,
    projector: NewSubspaceProjector,
    /// Gibbs functional ν₀ at the nodes (mass 1), for the q = 1 deflation
    nu0: Vec<f64>,
}

impl TwistedOperator {
    pub fn new(
        model: &SpectralModel,
        group: &FiniteGroup,
        a: f64,
        b: f64,
    ) -> Result<Self, TwistedError> {
        let node_dim = model.dim();
        let group_order = group.order();
        let total = node_dim * group_order;
        if total > MAX_VECTOR_ENTRIES {
            return Err(TwistedError::TooLarge(total));
        }

        let eigen = model.leading_eigen(a)?;
        let lambda = eigen.lambda;
        let h = &eigen.h;
        let nu0: Vec<f64> = eigen.nu.iter().zip(h).map(|(nu, hh)| nu * hh).collect();

        let ncyl = model.system().cylinders().len();
        let n = model.nodes_per_cylinder();
        let lagrange = model.lagrange_matrix();
        let branch_tau = model.branch_tau();
        let mut node_matrix = vec![Complex64::new(0.0, 0.0); node_dim * node_dim];
        for row in 0..node_dim {
            for cp in 0..ncyl {
                let tau = branch_tau[row * ncyl + cp];
                // e^{−(a+ib)τ} normalized by λ(a) and the h_a conjugation
                let mag = (-a * tau).exp() / lambda;
                let phase = Complex64::new(0.0, -b * tau).exp();
                for r in 0..n {
                    let col = cp * n + r;
                    let coeff = mag * lagrange[row * node_dim + col] * h[col] / h[row];
                    node_matrix[row * node_dim + col] = phase * coeff;
                }
            }
        }

        let cyl_perm: Vec<Vec<u32>> = model
            .system()
            .cylinders()
            .iter()
            .map(|c| {
                let idx = group.reduce(&c.matrix)?;
                Ok(group.right_mul_perm(idx))
            })
            .collect::<Result<_, CongruenceError>>()?;

        Ok(TwistedOperator {
            node_dim,
            group_order,
            a,
            b,
            q: group.modulus(),
            node_matrix,
            cyl_perm,
            projector: NewSubspaceProjector::new(group),
            nu0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.node_dim, self.group_order)
    }

    pub fn len(&self) -> usize {
        self.node_dim * self.group_order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn parameter(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn modulus(&self) -> u32 {
        self.q
    }

    /// The normalized dense node matrix at q = 1 (used by dense-eigensolve
    /// cross-checks).
    pub fn node_matrix(&self) -> &[Complex64] {
        &self.node_matrix
    }

    /// Applies the operator. Layout: group index fastest, node index slowest
    /// (entry (node, g) at node·|Γ_q| + g).
    pub fn matvec(&self, f: &[Complex64]) -> Result<Vec<Complex64>, TwistedError> {
        if f.len() != self.len() {
            return Err(TwistedError::ShapeMismatch { expected: self.len(), got: f.len() });
        }
        let o = self.group_order;
        let n = self.node_dim;
        let ncyl = self.cyl_perm.len();
        let per_cyl = n / ncyl;
        let mut out = vec![Complex64::new(0.0, 0.0); f.len()];
        for row in 0..n {
            let out_row = &mut out[row * o..(row + 1) * o];
            for cp in 0..ncyl {
                let perm = &self.cyl_perm[cp];
                for r in 0..per_cyl {
                    let col = cp * per_cyl + r;
                    let coeff = self.node_matrix[row * n + col];
                    if coeff.norm_sqr() == 0.0 {
                        continue;
                    }
                    let src = &f[col * o..(col + 1) * o];
                    for g in 0..o {
                        out_row[g] += coeff * src[perm[g] as usize];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Projects the group axis onto the new subspace E_q, per node row.
    pub fn project_group_new(&self, f: &mut [Complex64]) {
        let o = self.group_order;
        let mut re = vec![0.0; o];
        let mut im = vec![0.0; o];
        let mut scratch = Vec::new();
        for row in 0..self.node_dim {
            let slice = &mut f[row * o..(row + 1) * o];
            for (k, z) in slice.iter().enumerate() {
                re[k] = z.re;
                im[k] = z.im;
            }
            self.projector.project_new_inplace(&mut re, &mut scratch);
            self.projector.project_new_inplace(&mut im, &mut scratch);
            for (k, z) in slice.iter_mut().enumerate() {
                *z = Complex64::new(re[k], im[k]);
            }
        }
    }

    /// Deflates the leading (constant) direction using the Gibbs functional;
    /// meaningful for the untwisted q = 1, b = 0 operator where L1 = 1 and
    /// ν₀ is the fixed left functional.
    pub fn deflate_constants(&self, f: &mut [Complex64]) {
        debug_assert_eq!(self.group_order, 1);
        let mean: Complex64 = f.iter().zip(&self.nu0).map(|(z, w)| z * w).sum();
        for z in f.iter_mut() {
            *z -= mean;
        }
    }

    fn project_for_radius(&self, f: &mut [Complex64]) {
        if self.group_order > 1 {
            self.project_group_new(f);
        } else if self.b == 0.0 {
            self.deflate_constants(f);
        }
        // q = 1 with b ≠ 0: full operator, no invariant line to remove
    }
}

/// Spectral-radius measurement from projected power iteration.
#[derive(Debug, Clone)]
pub struct RadiusReport {
    pub radius: f64,
    /// min/max of the raw norm ratios over the last window: a crude
    /// confidence interval; wide spread flags non-convergence
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on the E_q-projected operator (projecting after every
/// application), reporting the geometric mean of the last ten norm ratios.
/// Three deterministic random restarts; the largest measured radius wins.
pub fn spectral_radius_new(
    op: &TwistedOperator,
    iters: usize,
    seed: u64,
) -> Result<RadiusReport, TwistedError> {
    let mut best: Option<RadiusReport> = None;
    for restart in 0..RESTARTS {
        let report = radius_single(op, iters.min(POWER_CAP), seed ^ (restart * 0x9e3779b9))?;
        let better = match &best {
            None => true,
            Some(b) => report.radius > b.radius,
        };
        if better {
            best = Some(report);
        }
    }
    Ok(best.unwrap())
}

fn radius_single(op: &TwistedOperator, iters: usize, seed: u64) -> Result<RadiusReport, TwistedError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Complex64> = (0..op.len())
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    op.project_for_radius(&mut v);
    let norm = |x: &[Complex64]| x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut nv = norm(&v);
    if nv == 0.0 {
        // projected space is trivial
        return Ok(RadiusReport { radius: 0.0, ratio_lo: 0.0, ratio_hi: 0.0, iterations: 0, converged: true });
    }
    v.iter_mut().for_each(|z| *z /= nv);

    // individual norm ratios oscillate when the dominant spectrum is a
    // complex pair (slow beats for near-degenerate pairs); the cumulative
    // geometric mean after a burn-in is stable in both regimes
    let mut ratios: Vec<f64> = Vec::with_capacity(iters);
    let mut estimates: Vec<f64> = Vec::new();
    let mut log_sum = 0.0;
    let mut done = 0;
    let mut converged = false;
    for k in 0..iters {
        let mut w = op.matvec(&v)?;
        op.project_for_radius(&mut w);
        nv = norm(&w);
        done = k + 1;
        if nv < 1e-290 {
            ratios.push(0.0);
            break;
        }
        ratios.push(nv);
        w.iter_mut().for_each(|z| *z /= nv);
        v = w;
        if ratios.len() > BURN_IN {
            log_sum += nv.ln();
            estimates.push((log_sum / (ratios.len() - BURN_IN) as f64).exp());
        }
        if estimates.len() >= 3 * RATIO_WINDOW {
            let cur = *estimates.last().unwrap();
            let prev = estimates[estimates.len() - 2 * RATIO_WINDOW];
            if (cur - prev).abs() <= RATIO_SPREAD_TOL * cur.abs().max(1e-300) {
                converged = true;
                break;
            }
        }
    }
    let radius = match estimates.last() {
        Some(&m) => m,
        None => {
            if ratios.is_empty() || ratios.iter().any(|&r| r == 0.0) {
                0.0
            } else {
                (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp()
            }
        }
    };
    let (lo, hi) = window_spread(&ratios);
    Ok(RadiusReport { radius, ratio_lo: lo, ratio_hi: hi, iterations: done, converged })
}

fn window_spread(ratios: &[f64]) -> (f64, f64) {
    let tail = &ratios[ratios.len().saturating_sub(RATIO_WINDOW)..];
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().cloned().fold(0.0f64, f64::max);
    (lo, hi)
}

/// One sweep cell: the measured radius (or the per-cell failure) at (q, a, b).
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub q: u32,
    pub a: f64,
    pub b: f64,
    pub result: Result<RadiusReport, TwistedError>,
}

/// Radius table over moduli and parameter grids. Per-cell failures are
/// recorded and the sweep continues.
pub fn sweep(
    model: &SpectralModel,
    qs: &[u32],
    a_grid: &[f64],
    b_grid: &[f64],
    iters: usize,
    seed: u64,
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &q in qs {
        let group = match FiniteGroup::enumerate(q) {
            Ok(g) => g,
            Err(e) => {
                for &a in a_grid {
                    for &b in b_grid {
                        cells.push(SweepCell { q, a, b, result: Err(e.clone().into()) });
                    }
                }
                continue;
            }
        };
        for &a in a_grid {
            for &b in b_grid {
                let result = TwistedOperator::new(model, &group, a, b)
                    .and_then(|op| spectral_radius_new(&op, iters, seed));
                cells.push(SweepCell { q, a, b, result });
            }
        }
    }
    cells
}

/// Lifts a level-q' group vector to level q through the reduction map
/// (Φ_{q,q'} on the group axis, applied per node row).
pub fn lift_group_vector(
    f_coarse: &[Complex64],
    node_dim: usize,
    reduction_map: &[u32],
) -> Vec<Complex64> {
    let coarse_order = f_coarse.len() / node_dim;
    let fine_order = reduction_map.len();
    let mut out = vec![Complex64::new(0.0, 0.0); node_dim * fine_order];
    for row in 0..node_dim {
        let src = &f_coarse[row * coarse_order..(row + 1) * coarse_order];
        let dst = &mut out[row * fine_order..(row + 1) * fine_order];
        for (g, &rg) in reduction_map.iter().enumerate() {
            dst[g] = src[rg as usize];
        }
    }
    out
}
