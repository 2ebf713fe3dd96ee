//! Transfer operators, pressure and the dimension of the limit set.
//!
//! The operator ℒ_{−sτ}[f](x) = Σ_{Ty=x} e^{−sτ(y)} f(y) is discretized by
//! Lagrange–Chebyshev collocation per cylinder: the branches are restrictions
//! of analytic maps, so the discretization converges spectrally. The unique
//! zero of s ↦ log λ(s) is the Hausdorff dimension δ of the limit set; the
//! eigendata at δ (eigenfunction h, eigenmeasure ν, equilibrium mean of τ)
//! feeds the counting constant.
//!
//! An independent piecewise-constant (Ulam) discretization is provided as a
//! cross-check oracle only; it shares no code path with the collocation
//! operator.

use crate::cf_dynamics::{CylinderId, MarkovSystem};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("eigen-iteration failed to converge within {0} iterations")]
    NonConvergence(usize),
    #[error("pressure has no zero in the search interval: λ({s}) = {lambda}")]
    BracketFailure { s: f64, lambda: f64 },
    #[error("left eigenvector is not a usable quadrature rule (negative mass fraction {0})")]
    DegenerateWeights(f64),
    #[error("need at least {0} nodes per cylinder")]
    TooFewNodes(usize),
    #[error("point {0} lies in no cylinder")]
    OutsideDomain(f64),
}

const MIN_NODES: usize = 4;
const POWER_ITER_CAP: usize = 100_000;
const POWER_ITER_TOL: f64 = 1e-13;
/// The eigenmeasure lives on a Cantor set, so its interpolatory quadrature
/// weights are signed; beyond this negative-mass fraction the rule is
/// treated as degenerate.
const NU_NEGATIVE_MASS_CAP: f64 = 0.5;

/// Collocation discretization of the transfer-operator family for one
/// Markov system. Immutable after construction; `leading_eigen` may be
/// called for any s ∈ [0, 2].
#[derive(Debug, Clone)]
pub struct SpectralModel {
    system: MarkovSystem,
    nodes_per_cyl: usize,
    dim: usize,
    /// collocation points, cylinder-major: index = cyl·n + p
    nodes: Vec<f64>,
    /// τ at all collocation points
    tau_at_nodes: Vec<f64>,
    /// τ(B_{c'}(x_row)) for every (row, source cylinder): index = row·ncyl + c'
    branch_tau: Vec<f64>,
    /// Lagrange rows ℓ_r(B_{c'}(x_row)): the s = 0 operator matrix,
    /// row-major with column blocks per source cylinder
    lagrange: Vec<f64>,
}

/// Leading eigendata of ℒ_{−sτ}: simple positive eigenvalue, positive
/// eigenfunction at the nodes, adjoint eigenweights normalized to total mass
/// one with ν(h) = 1.
///
/// The ν weights are interpolatory quadrature weights for a measure carried
/// by the Cantor set; individual weights are signed, the functional they
/// represent is the probability eigenmeasure.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub lambda: f64,
    pub h: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Eigendata at the pressure zero s = δ, packaged for the counting modules.
#[derive(Debug, Clone)]
pub struct GibbsData {
    pub delta: f64,
    pub h: Vec<f64>,
    pub nu: Vec<f64>,
    /// ∫ τ dν₀ for the equilibrium measure dν₀ = h dν
    pub mean_tau: f64,
    model: SpectralModel,
}

fn chebyshev_gauss_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for p in 0..n {
        let angle = std::f64::consts::PI * (2 * p + 1) as f64 / (2 * n) as f64;
        t.push(angle.cos());
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        w.push(sign * angle.sin());
    }
    (t, w)
}

impl SpectralModel {
    pub fn new(system: MarkovSystem, nodes_per_cyl: usize) -> Result<Self, ThermoError> {
        if nodes_per_cyl < MIN_NODES {
            return Err(ThermoError::TooFewNodes(MIN_NODES));
        }
        let ncyl = system.cylinders().len();
        let n = nodes_per_cyl;
        let dim = ncyl * n;
        let (t, bary_w) = chebyshev_gauss_nodes(n);

        let mut nodes = Vec::with_capacity(dim);
        for c in system.cylinders() {
            let mid = 0.5 * (c.lo_f64() + c.hi_f64());
            let half = 0.5 * (c.hi_f64() - c.lo_f64());
            for &tp in &t {
                nodes.push(mid + half * tp);
            }
        }

        let tau_at_nodes: Vec<f64> = (0..dim)
            .map(|i| system.tau_on(CylinderId(i / n), nodes[i]))
            .collect();

        let mut branch_tau = Vec::with_capacity(dim * ncyl);
        let mut lagrange = vec![0.0; dim * dim];
        for row in 0..dim {
            let x = nodes[row];
            for cp in 0..ncyl {
                let src = CylinderId(cp);
                let y = system.inverse_branch(src, x);
                branch_tau.push(system.tau_on(src, y));
                // barycentric Lagrange row on the source cylinder's nodes
                let base = cp * n;
                let cyl_nodes = &nodes[base..base + n];
                let out = &mut lagrange[row * dim + base..row * dim + base + n];
                barycentric_row(cyl_nodes, &bary_w, y, out);
            }
        }

        Ok(SpectralModel { system, nodes_per_cyl, dim, nodes, tau_at_nodes, branch_tau, lagrange })
    }

    pub fn system(&self) -> &MarkovSystem {
        &self.system
    }

    pub fn nodes_per_cylinder(&self) -> usize {
        self.nodes_per_cyl
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn tau_at_nodes(&self) -> &[f64] {
        &self.tau_at_nodes
    }

    /// τ(B_{c'}(x_row)), row-major over (row, source cylinder).
    pub fn branch_tau(&self) -> &[f64] {
        &self.branch_tau
    }

    /// The s = 0 collocation matrix (pure Lagrange interpolation rows).
    pub fn lagrange_matrix(&self) -> &[f64] {
        &self.lagrange
    }

    /// Per-(row, source-cylinder) weights e^{−s·τ(B_{c'}x_row)}.
    fn weights(&self, s: f64) -> Vec<f64> {
        self.branch_tau.iter().map(|&t| (-s * t).exp()).collect()
    }

    fn matvec(&self, w: &[f64], v: &[f64], out: &mut [f64]) {
        let ncyl = self.system.cylinders().len();
        let n = self.nodes_per_cyl;
        for row in 0..self.dim {
            let lrow = &self.lagrange[row * self.dim..(row + 1) * self.dim];
            let mut acc = 0.0;
            for cp in 0..ncyl {
                let mut dot = 0.0;
                let base = cp * n;
                for r in 0..n {
                    dot += lrow[base + r] * v[base + r];
                }
                acc += w[row * ncyl + cp] * dot;
            }
            out[row] = acc;
        }
    }

    fn matvec_transpose(&self, w: &[f64], v: &[f64], out: &mut [f64]) {
        let ncyl = self.system.cylinders().len();
        let n = self.nodes_per_cyl;
        out.fill(0.0);
        for row in 0..self.dim {
            let lrow = &self.lagrange[row * self.dim..(row + 1) * self.dim];
            let vr = v[row];
            for cp in 0..ncyl {
                let coeff = w[row * ncyl + cp] * vr;
                let base = cp * n;
                for r in 0..n {
                    out[base + r] += coeff * lrow[base + r];
                }
            }
        }
    }

    /// Leading eigenvalue with right/left eigenvectors, normalized so that
    /// Σν = 1 and ν(h) = 1. Warm starts are used internally during root
    /// finding; the public entry point starts from the constant vector.
    pub fn leading_eigen(&self, s: f64) -> Result<Eigen, ThermoError> {
        self.leading_eigen_warm(s, None, None)
    }

    /// Leading eigenvalue only (cheaper: no adjoint pass).
    pub fn leading_lambda(&self, s: f64) -> Result<f64, ThermoError> {
        let w = self.weights(s);
        let (lambda, _) = power_iterate(|v, out| self.matvec(&w, v, out), self.dim, None)?;
        Ok(lambda)
    }

    fn leading_eigen_warm(
        &self,
        s: f64,
        h0: Option<&[f64]>,
        nu0: Option<&[f64]>,
    ) -> Result<Eigen, ThermoError> {
        let w = self.weights(s);
        let (lambda, mut h) = power_iterate(|v, out| self.matvec(&w, v, out), self.dim, h0)?;
        let (_, mut nu) = power_iterate(|v, out| self.matvec_transpose(&w, v, out), self.dim, nu0)?;

        let mass: f64 = nu.iter().sum();
        let signed: f64 = nu.iter().map(|x| x.abs()).sum();
        let neg_fraction = 0.5 * (signed - mass.abs()) / signed;
        if !(neg_fraction < NU_NEGATIVE_MASS_CAP) {
            return Err(ThermoError::DegenerateWeights(neg_fraction));
        }
        for x in nu.iter_mut() {
            *x /= mass;
        }
        // fix the eigenfunction sign before normalizing ν(h) = 1
        if h.iter().sum::<f64>() < 0.0 {
            h.iter_mut().for_each(|x| *x = -*x);
        }
        let nu_h: f64 = nu.iter().zip(&h).map(|(a, b)| a * b).sum();
        for x in h.iter_mut() {
            *x /= nu_h;
        }
        Ok(Eigen { lambda, h, nu })
    }

    /// Barycentric interpolation of node values at an arbitrary point of the
    /// branch domain.
    pub fn interpolate(&self, values: &[f64], x: f64) -> Result<f64, ThermoError> {
        assert_eq!(values.len(), self.dim);
        let id = self.system.locate(x).ok_or(ThermoError::OutsideDomain(x))?;
        let n = self.nodes_per_cyl;
        let base = id.0 * n;
        let (_, bary_w) = chebyshev_gauss_nodes(n);
        let mut row = vec![0.0; n];
        barycentric_row(&self.nodes[base..base + n], &bary_w, x, &mut row);
        Ok(row.iter().zip(&values[base..base + n]).map(|(a, b)| a * b).sum())
    }
}

fn barycentric_row(nodes: &[f64], weights: &[f64], y: f64, out: &mut [f64]) {
    let scale = nodes[0] - nodes[nodes.len() - 1];
    for (r, &xr) in nodes.iter().enumerate() {
        if (y - xr).abs() < 1e-14 * scale.abs() {
            out.fill(0.0);
            out[r] = 1.0;
            return;
        }
    }
    let mut denom = 0.0;
    for r in 0..nodes.len() {
        let term = weights[r] / (y - nodes[r]);
        out[r] = term;
        denom += term;
    }
    for v in out.iter_mut() {
        *v /= denom;
    }
}

fn power_iterate(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    dim: usize,
    warm: Option<&[f64]>,
) -> Result<(f64, Vec<f64>), ThermoError> {
    let mut v = match warm {
        Some(w) if w.len() == dim => w.to_vec(),
        _ => vec![1.0; dim],
    };
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut out = vec![0.0; dim];
    let mut lambda = 0.0;
    let mut stable = 0;
    for _ in 0..POWER_ITER_CAP {
        apply(&v, &mut out);
        let rayleigh: f64 = out.iter().zip(&v).map(|(a, b)| a * b).sum();
        let n_out = norm(&out);
        for (x, y) in v.iter_mut().zip(&out) {
            *x = y / n_out;
        }
        if (rayleigh - lambda).abs() <= POWER_ITER_TOL * rayleigh.abs().max(1e-300) {
            stable += 1;
            if stable >= 3 {
                return Ok((rayleigh, v));
            }
        } else {
            stable = 0;
        }
        lambda = rayleigh;
    }
    Err(ThermoError::NonConvergence(POWER_ITER_CAP))
}

/// Default collocation resolution: spectral decay gives ~13 digits for small
/// alphabets. Large alphabets may lower this (documented knob).
pub const DEFAULT_NODES: usize = 24;
pub const DEFAULT_DIM_TOL: f64 = 1e-10;

/// Dimension of the limit set as the unique zero of s ↦ log λ(s), found by
/// bisection then secant refinement, together with the Gibbs data at δ.
pub fn dimension(
    system: &MarkovSystem,
    nodes: usize,
    tol: f64,
) -> Result<GibbsData, ThermoError> {
    let model = SpectralModel::new(system.clone(), nodes)?;
    let mut warm_h: Option<Vec<f64>> = None;
    let eval = |s: f64, warm: &mut Option<Vec<f64>>| -> Result<(f64, Vec<f64>), ThermoError> {
        let w = model.weights(s);
        let (lambda, h) = power_iterate(|v, out| model.matvec(&w, v, out), model.dim, warm.as_deref())?;
        Ok((lambda.ln(), h))
    };

    let (g_lo, h_lo) = eval(0.0, &mut warm_h)?;
    if g_lo <= 0.0 {
        return Err(ThermoError::BracketFailure { s: 0.0, lambda: g_lo.exp() });
    }
    warm_h = Some(h_lo);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let (mut g_hi, h_hi) = eval(hi, &mut warm_h)?;
    warm_h = Some(h_hi);
    // δ < 1 for every alphabet; guarded expansion anyway
    while g_hi > 0.0 {
        hi += 0.5;
        if hi > 4.0 {
            return Err(ThermoError::BracketFailure { s: hi, lambda: g_hi.exp() });
        }
        let (g, h) = eval(hi, &mut warm_h)?;
        g_hi = g;
        warm_h = Some(h);
    }

    let mut g_lo = g_lo;
    // bisection to a coarse bracket
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        let (g_mid, h_mid) = eval(mid, &mut warm_h)?;
        warm_h = Some(h_mid);
        if g_mid > 0.0 {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    // secant refinement, safeguarded inside the bracket
    let mut s0 = lo;
    let mut f0 = g_lo;
    let mut s1 = hi;
    let mut f1 = g_hi;
    for _ in 0..80 {
        if (s1 - s0).abs() <= tol {
            break;
        }
        let mut cand = s1 - f1 * (s1 - s0) / (f1 - f0);
        if !(lo..=hi).contains(&cand) {
            cand = 0.5 * (lo + hi);
        }
        let (g, h) = eval(cand, &mut warm_h)?;
        warm_h = Some(h);
        if g > 0.0 {
            lo = cand;
        } else {
            hi = cand;
        }
        s0 = s1;
        f0 = f1;
        s1 = cand;
        f1 = g;
    }

    let delta = s1;
    let eigen = model.leading_eigen_warm(delta, warm_h.as_deref(), None)?;
    let mean_tau: f64 = eigen
        .nu
        .iter()
        .zip(&eigen.h)
        .zip(model.tau_at_nodes())
        .map(|((nu, h), tau)| nu * h * tau)
        .sum();
    Ok(GibbsData { delta, h: eigen.h, nu: eigen.nu, mean_tau, model })
}

impl GibbsData {
    pub fn model(&self) -> &SpectralModel {
        &self.model
    }

    /// Eigenfunction h interpolated off the collocation nodes.
    pub fn h_at(&self, x: f64) -> Result<f64, ThermoError> {
        self.model.interpolate(&self.h, x)
    }

    /// ν-integral of a test function given by its node samples.
    pub fn nu_integral(&self, g_at_nodes: &[f64]) -> f64 {
        self.nu.iter().zip(g_at_nodes).map(|(w, g)| w * g).sum()
    }
}

/// Main-term constant C(x, g) = (∫g dν / (δ·∫τ dν₀)) · h(x) of the renewal
/// asymptotics, with g sampled at the collocation nodes.
pub fn counting_constant(
    g_at_nodes: &[f64],
    gibbs: &GibbsData,
    x: f64,
) -> Result<f64, ThermoError> {
    let numerator = gibbs.nu_integral(g_at_nodes);
    let h_x = gibbs.h_at(x)?;
    Ok(numerator / (gibbs.delta * gibbs.mean_tau) * h_x)
}

/// Independent Ulam (piecewise-constant) dimension computation, used as a
/// cross-check oracle for `dimension`. Roughly `cells` cells spread over the
/// cylinders; first-order accurate.
pub fn ulam_dimension(system: &MarkovSystem, cells: usize, tol: f64) -> Result<f64, ThermoError> {
    let ncyl = system.cylinders().len();
    let per_cyl = (cells / ncyl).max(8);
    let dim = ncyl * per_cyl;

    // centers, and for every (cell, source cylinder): target cell + τ value
    let mut centers = Vec::with_capacity(dim);
    for c in system.cylinders() {
        let w = (c.hi_f64() - c.lo_f64()) / per_cyl as f64;
        for k in 0..per_cyl {
            centers.push(c.lo_f64() + (k as f64 + 0.5) * w);
        }
    }
    let mut target = Vec::with_capacity(dim * ncyl);
    let mut tau_val = Vec::with_capacity(dim * ncyl);
    for &x in &centers {
        for cp in 0..ncyl {
            let src = CylinderId(cp);
            let y = system.inverse_branch(src, x);
            let cyl = system.cylinder(src);
            let w = (cyl.hi_f64() - cyl.lo_f64()) / per_cyl as f64;
            let k = (((y - cyl.lo_f64()) / w) as usize).min(per_cyl - 1);
            target.push(cp * per_cyl + k);
            tau_val.push(system.tau_on(src, y));
        }
    }

    let lambda_at = |s: f64| -> Result<f64, ThermoError> {
        let weights: Vec<f64> = tau_val.iter().map(|&t| (-s * t).exp()).collect();
        let apply = |v: &[f64], out: &mut [f64]| {
            for row in 0..dim {
                let mut acc = 0.0;
                for cp in 0..ncyl {
                    let idx = row * ncyl + cp;
                    acc += weights[idx] * v[target[idx]];
                }
                out[row] = acc;
            }
        };
        let (lambda, _) = power_iterate(apply, dim, None)?;
        Ok(lambda)
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let g_lo = lambda_at(lo)?.ln();
    let mut g_hi = lambda_at(hi)?.ln();
    if g_lo <= 0.0 {
        return Err(ThermoError::BracketFailure { s: lo, lambda: g_lo.exp() });
    }
    while g_hi > 0.0 {
        hi += 0.5;
        if hi > 4.0 {
            return Err(ThermoError::BracketFailure { s: hi, lambda: g_hi.exp() });
        }
        g_hi = lambda_at(hi)?.ln();
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if lambda_at(mid)?.ln() > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Hensley's expansion for the dimension of the full alphabet {1, …, A}:
/// 1 − 6/(π²A) − 72·log A/(π⁴A²), dropping the O(1/A²) tail.
pub fn hensley_dimension_estimate(amax: u32) -> f64 {
    let a = amax as f64;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    1.0 - 6.0 / (pi2 * a) - 72.0 * a.ln() / (pi2 * pi2 * a * a)
}
