//! Penalized-complexity priors for the precision `tau_b`, the BYM2 mixing
//! proportion `phi` and the adaptive precision ratio `theta`.
//!
//! Each prior is an exponential distribution on a distance `d` from a base
//! model, pushed forward to the parameter:
//!
//! ```text
//! p(x) = lambda * exp(-lambda * d(x)) * |d'(x)|
//!
//! theta (base theta = 1), eps_i eigenvalues of (R1^ + R2^)^-1 R2^:
//!   d(theta)^2 = sum_i 1/(1 + (theta-1) eps_i) - (n-1) + sum_i log(1 + (theta-1) eps_i)
//!
//! phi (base phi = 0), gt_i inverted non-zero eigenvalues of the scaled structure:
//!   d(phi)^2 = phi * sum_i (gt_i - 1) - sum_i log(1 + phi (gt_i - 1))
//! ```
//!
//! Both squared distances vanish quadratically at the base model, so the
//! distances and their Jacobians are evaluated as `|x - base| * sqrt(...)`
//! with series expansions of the per-term ratios. That keeps the densities
//! finite and smooth through the base point.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{integrate, PANEL_TOL};
use crate::structmat::{StructureParts, SymSparseMatrix, RANK_TOL};

/// Closest evaluation point to an open endpoint used by quadrature.
pub const ENDPOINT_CLAMP: f64 = 1e-12;

/// A density on an interval of the real line.
pub trait UnivariatePrior {
    fn density(&self, x: f64) -> f64;
    /// Open support `(lo, hi)`; `hi` may be infinite.
    fn support(&self) -> (f64, f64);

    /// Mass of `[lo, hi]` within the support, by adaptive quadrature.
    fn mass(&self, lo: f64, hi: f64) -> f64 {
        let (s_lo, s_hi) = self.support();
        let lo = lo.max(s_lo + ENDPOINT_CLAMP);
        let hi = if s_hi.is_finite() { hi.min(s_hi - ENDPOINT_CLAMP) } else { hi };
        if lo >= hi {
            return 0.0;
        }
        integrate(|x| self.density(x), lo, hi, PANEL_TOL)
    }
}

pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Prior probability of `[lo, hi]` by adaptive quadrature.
pub fn prior_mass<P: UnivariatePrior + ?Sized>(prior: &P, lo: f64, hi: f64) -> Result<f64> {
    let (s_lo, s_hi) = prior.support();
    if !(lo <= hi) || lo < s_lo || hi > s_hi {
        return Err(Error::invalid(format!("interval [{lo}, {hi}] outside support ({s_lo}, {s_hi})")));
    }
    Ok(prior.mass(lo, hi))
}

/// Inverse CDF by bisection on [`prior_mass`].
pub fn prior_quantiles<P: UnivariatePrior + ?Sized>(prior: &P, probs: &[f64]) -> Result<Vec<f64>> {
    let (s_lo, s_hi) = prior.support();
    probs
        .iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
            }
            let mut lo = s_lo;
            let mut hi = if s_hi.is_finite() {
                s_hi
            } else {
                let mut h = 1.0;
                while prior_mass(prior, s_lo, h)? < p && h < 1e300 {
                    h *= 4.0;
                }
                h
            };
            // Bracket refinement restarts the integral from the support edge
            // each step, which keeps the CDF monotone in the evaluation point.
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if prior_mass(prior, s_lo, mid)? < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-13 * hi.abs().max(1e-3) {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        })
        .collect()
}

fn check_statement(u: f64, a: f64, upper: f64) -> Result<()> {
    if !(u > 0.0 && u < upper) {
        return Err(Error::invalid(format!("threshold {u} out of range")));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::invalid(format!("probability {a} must lie in (0, 1)")));
    }
    Ok(())
}

/// PC prior for a precision with base model `tau = inf`:
/// `sigma = tau^{-1/2} ~ Exp(lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PcPrecisionPrior {
    pub lambda: f64,
}

impl PcPrecisionPrior {
    /// Calibrate so that `P(1/sqrt(tau) > u) = a`.
    pub fn calibrate(u: f64, a: f64) -> Result<Self> {
        check_statement(u, a, f64::INFINITY)?;
        Ok(PcPrecisionPrior { lambda: -a.ln() / u })
    }

    pub fn ln_density(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (0.5 * self.lambda).ln() - 1.5 * tau.ln() - self.lambda / tau.sqrt()
    }

    /// `P(tau < t) = exp(-lambda / sqrt(t))`.
    pub fn cdf(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            0.0
        } else {
            (-self.lambda / tau.sqrt()).exp()
        }
    }
}

impl UnivariatePrior for PcPrecisionPrior {
    fn density(&self, tau: f64) -> f64 {
        self.ln_density(tau).exp()
    }

    fn support(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }
}

/// `(log1p(x) - x/(1+x)) / x^2` for `x > -1`.
fn theta_term_ratio(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        // sum_{k>=2} (-1)^k (k-1)/k x^(k-2)
        let mut s = 0.0;
        let mut p = 1.0;
        for k in 2..12 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * (k as f64 - 1.0) / k as f64 * p;
            p *= x;
        }
        s
    } else {
        (x.ln_1p() - x / (1.0 + x)) / (x * x)
    }
}

/// `(y - log1p(y)) / y^2` for `y > -1`.
fn phi_term_ratio(y: f64) -> f64 {
    if y.abs() < 1e-3 {
        // sum_{k>=2} (-1)^k y^(k-2) / k
        let mut s = 0.0;
        let mut p = 1.0;
        for k in 2..12 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * p / k as f64;
            p *= y;
        }
        s
    } else {
        (y - y.ln_1p()) / (y * y)
    }
}

fn check_theta(theta: f64, eps: &[f64]) -> Result<()> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("theta = {theta} outside (0, 1]")));
    }
    if eps.iter().any(|&e| 1.0 + (theta - 1.0) * e <= 0.0) {
        return Err(Error::invalid("1 + (theta - 1) eps_i must be positive"));
    }
    Ok(())
}

/// `sqrt(sum_i eps_i^2 r((theta-1) eps_i))`, so that `d = (1-theta) * scale`.
fn theta_scale(theta: f64, eps: &[f64]) -> f64 {
    let delta = theta - 1.0;
    eps.iter().map(|&e| e * e * theta_term_ratio(delta * e)).sum::<f64>().sqrt()
}

/// KL-based distance of the adaptive model at `theta` from the base `theta = 1`.
pub fn d_theta(theta: f64, eps: &[f64]) -> Result<f64> {
    check_theta(theta, eps)?;
    Ok((1.0 - theta) * theta_scale(theta, eps))
}

/// `|d d(theta) / d theta|`, finite at `theta = 1`.
pub fn d_theta_slope(theta: f64, eps: &[f64]) -> Result<f64> {
    check_theta(theta, eps)?;
    let delta = theta - 1.0;
    let num: f64 = eps.iter().map(|&e| e * e / (1.0 + delta * e).powi(2)).sum();
    let s = theta_scale(theta, eps);
    Ok(if s == 0.0 { 0.0 } else { num / (2.0 * s) })
}

/// Eigenvalues of `(A^)^-1 B^`, hats denoting removal of row and column
/// `removed`, sorted ascending and clamped to `[0, 1]`.
pub fn pencil_eigenvalues(
    reference: &SymSparseMatrix,
    shock: &SymSparseMatrix,
    removed: usize,
) -> Result<Vec<f64>> {
    let n = reference.dim();
    if removed >= n {
        return Err(Error::OutOfRange { index: removed, n });
    }
    let total = reference.add_scaled(shock, 1.0).to_dense().remove_row(removed).remove_column(removed);
    let b = shock.to_dense().remove_row(removed).remove_column(removed);
    let chol = Cholesky::new(total)
        .ok_or_else(|| Error::numerical("deleted structure matrix is singular (disconnected graph?)"))?;
    let l = chol.l();
    // C = L^-1 B L^-T has the same spectrum as A^-1 B.
    let linv_b = l
        .solve_lower_triangular(&b)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let c = l
        .solve_lower_triangular(&linv_b.transpose())
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let c = 0.5 * (&c + c.transpose());
    let mut eps: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    for e in eps.iter_mut() {
        if *e < -1e-8 || *e > 1.0 + 1e-8 {
            return Err(Error::numerical(format!("pencil eigenvalue {e} outside [0, 1]")));
        }
        *e = e.clamp(0.0, 1.0);
    }
    eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eps)
}

/// `eps_i` for the theta prior. With more than two parts the reference
/// structure is the sum of all but the last part (the between-class part).
pub fn theta_eigenvalues(parts: &StructureParts, removed: usize) -> Result<Vec<f64>> {
    if !parts.is_scaled() {
        return Err(Error::invalid("theta eigenvalues need scaled structure parts"));
    }
    let l = parts.n_parts();
    if l < 2 {
        return Err(Error::invalid("theta eigenvalues need at least two structure parts"));
    }
    let scaled = parts.scaled_parts();
    let reference = scaled[..l - 1]
        .iter()
        .fold(SymSparseMatrix::zeros(parts.dim()), |acc, p| acc.add_scaled(p, 1.0));
    pencil_eigenvalues(&reference, &scaled[l - 1], removed)
}

/// PC prior for `theta in (0, 1]` shrinking to `theta = 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PcThetaPrior {
    pub lambda: f64,
    pub eps: Vec<f64>,
    pub removed_index: usize,
}

impl PcThetaPrior {
    /// Calibrate so that `P(theta < u) = alpha`, i.e. `lambda = -ln(alpha) / d(u)`.
    pub fn calibrate(u: f64, alpha: f64, eps: Vec<f64>, removed_index: usize) -> Result<Self> {
        check_statement(u, alpha, 1.0)?;
        let du = d_theta(u, &eps)?;
        if du <= 0.0 {
            return Err(Error::invalid("d(U) = 0: the adaptive structure has no flexibility"));
        }
        Ok(PcThetaPrior { lambda: -alpha.ln() / du, eps, removed_index })
    }

    pub fn from_parts(parts: &StructureParts, u: f64, alpha: f64) -> Result<Self> {
        Self::calibrate(u, alpha, theta_eigenvalues(parts, 0)?, 0)
    }

    pub fn distance(&self, theta: f64) -> Result<f64> {
        d_theta(theta, &self.eps)
    }

    pub fn ln_density(&self, theta: f64) -> f64 {
        match (d_theta(theta, &self.eps), d_theta_slope(theta, &self.eps)) {
            (Ok(d), Ok(slope)) => self.lambda.ln() + slope.ln() - self.lambda * d,
            _ => f64::NEG_INFINITY,
        }
    }

    /// `P(theta < u) = exp(-lambda d(u))`.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match d_theta(u.min(1.0), &self.eps) {
            Ok(d) => (-self.lambda * d).exp(),
            Err(_) => 0.0,
        }
    }
}

impl UnivariatePrior for PcThetaPrior {
    fn density(&self, theta: f64) -> f64 {
        self.ln_density(theta).exp()
    }

    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

/// Inverted non-zero eigenvalues of a scaled structure matrix; the null
/// eigenvalue maps to zero.
pub fn phi_gamma_tilde(scaled_structure: &SymSparseMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(scaled_structure.to_dense());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut gt: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&g| if g > RANK_TOL * max { 1.0 / g } else { 0.0 })
        .collect();
    gt.sort_by(|a, b| a.partial_cmp(b).unwrap());
    gt
}

struct PhiGeometry {
    d: f64,
    /// `d'(phi) * (1 - phi)`, bounded as `phi -> 1`.
    slope_omp: f64,
}

/// Distance and Jacobian at `phi`, with `ln(1 - phi)` supplied separately so
/// that points arbitrarily close to `phi = 1` stay representable.
fn phi_geometry(phi: f64, ln_omp: f64, gt: &[f64]) -> Result<PhiGeometry> {
    if !(0.0..=1.0).contains(&phi) || !ln_omp.is_finite() {
        return Err(Error::invalid(format!("phi = {phi} outside [0, 1)")));
    }
    let omp = ln_omp.exp();
    let (mut s2, mut num) = (0.0, 0.0);
    for &g in gt {
        let c = g - 1.0;
        let y = phi * c;
        if g == 0.0 {
            let ratio = if y.abs() < 1e-3 { phi_term_ratio(y) } else { (y - ln_omp) / (y * y) };
            s2 += ratio;
            num += 1.0;
            continue;
        }
        let one_plus_y = 1.0 + y;
        if one_plus_y <= 0.0 {
            return Err(Error::invalid("1 + phi (gt_i - 1) must be positive"));
        }
        s2 += c * c * phi_term_ratio(y);
        num += c * c * omp / one_plus_y;
    }
    let s = s2.sqrt();
    Ok(PhiGeometry {
        d: phi * s,
        slope_omp: if s == 0.0 { 0.0 } else { num / (2.0 * s) },
    })
}

/// KL-based distance of the BYM2 model at `phi` from the base `phi = 0`.
pub fn d_phi(phi: f64, gamma_tilde: &[f64]) -> Result<f64> {
    Ok(phi_geometry(phi, (-phi).ln_1p(), gamma_tilde)?.d)
}

/// `d d(phi) / d phi`, finite at `phi = 0`.
pub fn d_phi_slope(phi: f64, gamma_tilde: &[f64]) -> Result<f64> {
    Ok(phi_geometry(phi, (-phi).ln_1p(), gamma_tilde)?.slope_omp / (1.0 - phi))
}

/// PC prior for `phi in [0, 1)` shrinking to `phi = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PcPhiPrior {
    pub lambda: f64,
    pub gamma_tilde: Vec<f64>,
}

impl PcPhiPrior {
    /// Calibrate so that `P(phi < u) = alpha`, i.e. `lambda = -ln(1 - alpha) / d(u)`.
    pub fn calibrate(u: f64, alpha: f64, gamma_tilde: Vec<f64>) -> Result<Self> {
        check_statement(u, alpha, 1.0)?;
        let du = d_phi(u, &gamma_tilde)?;
        if du <= 0.0 {
            return Err(Error::invalid("d(U) = 0: structured and unstructured effects coincide"));
        }
        Ok(PcPhiPrior { lambda: -(1.0 - alpha).ln() / du, gamma_tilde })
    }

    pub fn from_structure(scaled_structure: &SymSparseMatrix, u: f64, alpha: f64) -> Result<Self> {
        Self::calibrate(u, alpha, phi_gamma_tilde(scaled_structure))
    }

    pub fn distance(&self, phi: f64) -> Result<f64> {
        d_phi(phi, &self.gamma_tilde)
    }

    pub fn ln_density(&self, phi: f64) -> f64 {
        let ln_omp = (-phi).ln_1p();
        match phi_geometry(phi, ln_omp, &self.gamma_tilde) {
            Ok(g) => self.lambda.ln() + g.slope_omp.ln() - ln_omp - self.lambda * g.d,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Log density of `z = logit(phi)`.
    pub fn ln_density_logit(&self, z: f64) -> f64 {
        let phi = expit(z);
        // ln(1 - expit(z)) = -softplus(z)
        let ln_omp = -(z.max(0.0) + (-z.abs()).exp().ln_1p());
        match phi_geometry(phi, ln_omp, &self.gamma_tilde) {
            Ok(g) => self.lambda.ln() + g.slope_omp.ln() + phi.ln() - self.lambda * g.d,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// `P(phi < u) = 1 - exp(-lambda d(u))`.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        match d_phi(u, &self.gamma_tilde) {
            Ok(d) => -(-self.lambda * d).exp_m1(),
            Err(_) => 1.0,
        }
    }
}

impl UnivariatePrior for PcPhiPrior {
    fn density(&self, phi: f64) -> f64 {
        self.ln_density(phi).exp()
    }

    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// Integrates in `v = -ln(1 - phi)`: the distance grows only like
    /// `sqrt(v)` towards `phi = 1`, so a visible share of the mass sits
    /// closer to 1 than any double can resolve in `phi` itself.
    fn mass(&self, lo: f64, hi: f64) -> f64 {
        let v_lo = -(-lo).ln_1p();
        let v_hi = if hi >= 1.0 { f64::INFINITY } else { -(-hi).ln_1p() };
        let f = |v: f64| {
            match phi_geometry(-(-v).exp_m1(), -v, &self.gamma_tilde) {
                Ok(g) => self.lambda * (-self.lambda * g.d).exp() * g.slope_omp,
                Err(_) => 0.0,
            }
        };
        integrate(f, v_lo, v_hi, PANEL_TOL)
    }
}

/// Prior statement `P(parameter beyond U) = alpha` as used in configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct PriorStatement {
    #[serde(alias = "U")]
    pub u: f64,
    pub alpha: f64,
}

impl PriorStatement {
    /// `P(1/sqrt(tau_b) > 1) = 0.01`.
    pub const PRECISION: PriorStatement = PriorStatement { u: 1.0, alpha: 0.01 };
    /// `P(phi < 0.5) = 2/3`.
    pub const PHI: PriorStatement = PriorStatement { u: 0.5, alpha: 2.0 / 3.0 };
    /// `P(theta < 0.75) = 0.75`.
    pub const THETA: PriorStatement = PriorStatement { u: 0.75, alpha: 0.75 };
}

/// Dense helper used by tests and diagnostics: log of the product of the
/// eigenvalues of a symmetric positive definite matrix.
pub fn ln_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(a.clone()).ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}
