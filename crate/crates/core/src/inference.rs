//! Exact-conditional inference. Given hyperparameters the latent posterior
//! is Gaussian; hyperparameters are integrated over a deterministic grid
//! around their posterior mode.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::latent::{row_dot, HyperValues, ModelSpec, SparseRow, ThetaSpec};
use crate::priors::{expit, UnivariatePrior};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian latent model with Gaussian observations of linear combinations.
#[derive(Clone, Debug)]
pub struct GaussianSystem {
    pub prior_precision: DMatrix<f64>,
    /// Log generalized determinant of the prior precision on the constrained subspace.
    pub ln_pdet_prior: f64,
    pub design: Vec<SparseRow>,
    pub y: Vec<f64>,
    pub variance: Vec<f64>,
    /// `k x n` hard linear constraints `C x = 0`; `k` may be zero.
    pub constraints: DMatrix<f64>,
}

/// Posterior of a [`GaussianSystem`].
#[derive(Clone, Debug)]
pub struct Conditional {
    /// Constrained posterior mean.
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `W = Q^-1 C^T` and the factor of `C W`.
    kriging: Option<(DMatrix<f64>, Cholesky<f64, Dyn>)>,
    pub ln_marginal: f64,
}

fn ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

impl Conditional {
    /// Constrained posterior covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut s = self.chol.inverse();
        if let Some((w, cw)) = &self.kriging {
            s -= w * cw.solve(&w.transpose());
        }
        s
    }

    /// Unconstrained posterior precision factor.
    pub fn precision_factor(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }
}

impl GaussianSystem {
    fn posterior_precision(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.prior_precision.nrows();
        let mut q = self.prior_precision.clone();
        let mut rhs = DVector::zeros(n);
        for ((row, &y), &v) in self.design.iter().zip(&self.y).zip(&self.variance) {
            for &(i, a) in row {
                rhs[i] += a * y / v;
                for &(j, b) in row {
                    q[(i, j)] += a * b / v;
                }
            }
        }
        (q, rhs)
    }

    /// Same system without observation `k`.
    pub fn without(&self, k: usize) -> GaussianSystem {
        let mut s = self.clone();
        s.design.remove(k);
        s.y.remove(k);
        s.variance.remove(k);
        s
    }
}

/// Exact Gaussian posterior, with constraints imposed by conditioning by
/// kriging, and the log marginal likelihood of `y`.
pub fn gaussian_conditional(sys: &GaussianSystem) -> Result<Conditional> {
    let (q, rhs) = sys.posterior_precision();
    let chol = Cholesky::new(q).ok_or_else(|| Error::numerical("posterior precision is not positive definite"))?;
    let mut mean = chol.solve(&rhs);
    let mut ln_det_post = ln_det(&chol);
    let c = &sys.constraints;
    let kriging = if c.nrows() > 0 {
        let w = chol.solve(&c.transpose());
        let cw = Cholesky::new(c * &w).ok_or_else(|| Error::numerical("constraint rows are rank deficient"))?;
        let cct = Cholesky::new(c * c.transpose()).ok_or_else(|| Error::numerical("constraint rows are rank deficient"))?;
        mean -= &w * cw.solve(&(c * &mean));
        ln_det_post += ln_det(&cw) - ln_det(&cct);
        Some((w, cw))
    } else {
        None
    };
    let mut ll = 0.0;
    for ((row, &y), &v) in sys.design.iter().zip(&sys.y).zip(&sys.variance) {
        let r = y - row_dot(row, &mean);
        ll -= 0.5 * (LN_2PI + v.ln() + r * r / v);
    }
    let quad = mean.dot(&(&sys.prior_precision * &mean));
    let ln_marginal = ll + 0.5 * sys.ln_pdet_prior - 0.5 * quad - 0.5 * ln_det_post;
    if !ln_marginal.is_finite() {
        return Err(Error::numerical("log marginal likelihood is not finite"));
    }
    Ok(Conditional { mean, chol, kriging, ln_marginal })
}

/// `row^T S row` for a dense covariance.
pub fn row_quad(row: &SparseRow, s: &DMatrix<f64>) -> f64 {
    row.iter()
        .map(|&(i, a)| row.iter().map(|&(j, b)| a * b * s[(i, j)]).sum::<f64>())
        .sum()
}

fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

/// `ln pi(y_k | y_-k)` for every observation, by removing each observation
/// from the Gaussian posterior; falls back to an explicit refit when the
/// downdate is not numerically positive.
pub fn loo_log_cpo(sys: &GaussianSystem, cond: &Conditional, cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..sys.y.len())
        .map(|k| {
            let row = &sys.design[k];
            let (y, v) = (sys.y[k], sys.variance[k]);
            let e = row_dot(row, &cond.mean);
            let s = row_quad(row, cov);
            let prec = 1.0 / s - 1.0 / v;
            if s > 0.0 && prec > 1e-10 / s {
                let s_loo = 1.0 / prec;
                let e_loo = s_loo * (e / s - y / v);
                let lc = ln_normal_pdf(y, e_loo, s_loo + v);
                if lc.is_finite() {
                    return Ok(lc);
                }
            }
            let reduced = sys.without(k);
            let refit = gaussian_conditional(&reduced)?;
            let rc = refit.covariance();
            Ok(ln_normal_pdf(y, row_dot(row, &refit.mean), row_quad(row, &rc) + v))
        })
        .collect()
}

/// Assemble the Gaussian system of `spec` at hyperparameters `h`.
pub fn model_system(spec: &ModelSpec, h: &HyperValues) -> Result<GaussianSystem> {
    let (prior_precision, ln_pdet_prior) = spec.prior_precision(h)?;
    Ok(GaussianSystem {
        prior_precision,
        ln_pdet_prior,
        design: spec.design_matrix(),
        y: spec.observations().iter().map(|o| o.y).collect(),
        variance: spec.observations().iter().map(|o| o.variance).collect(),
        constraints: spec.constraint_rows(),
    })
}

/// Unnormalized log posterior of the internal hyperparameters.
pub fn ln_hyper_posterior(spec: &ModelSpec, z: &[f64]) -> Result<f64> {
    let lp = spec.ln_hyperprior(z);
    if !lp.is_finite() {
        return Err(Error::numerical("hyperprior density is zero"));
    }
    let h = spec.decode(z);
    Ok(gaussian_conditional(&model_system(spec, &h)?)?.ln_marginal + lp)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridConfig {
    /// Lattice step in standardized coordinates.
    pub delta: f64,
    /// Keep points whose log density is within `drop` of the mode.
    pub drop: f64,
    /// Full lattice up to this many hyperparameters, a central composite design above.
    pub max_full_dim: usize,
    pub max_points: usize,
    pub ccd_f0: f64,
    pub hessian_step: f64,
    pub max_iter: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            delta: 0.75,
            drop: 6.0,
            max_full_dim: 5,
            max_points: 20_000,
            ccd_f0: 1.1,
            hessian_step: 1e-2,
            max_iter: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperPoint {
    pub z: Vec<f64>,
    pub ln_post: f64,
    /// Normalized integration weight.
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Exploration {
    pub mode: Vec<f64>,
    pub ln_post_mode: f64,
    /// Marginal standard deviations from the inverse Hessian at the mode.
    pub sd: Vec<f64>,
    pub points: Vec<HyperPoint>,
    pub ccd: bool,
    pub warnings: Vec<String>,
}

/// Minimize `f` by Nelder-Mead from `x0`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64, bool) {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = (0..=d)
        .map(|i| {
            let mut x = x0.to_vec();
            if i > 0 {
                x[i - 1] += step;
            }
            let fx = f(&x);
            (x, fx)
        })
        .collect();
    let centroid = |s: &[(Vec<f64>, f64)]| -> Vec<f64> {
        (0..d).map(|j| s[..d].iter().map(|p| p.0[j]).sum::<f64>() / d as f64).collect()
    };
    let along = |c: &[f64], x: &[f64], t: f64| -> Vec<f64> { c.iter().zip(x).map(|(a, b)| a + t * (b - a)).collect() };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_spread = simplex[d].1 - simplex[0].1;
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|p| p.0.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if f_spread.abs() < 1e-11 && x_spread < 1e-7 {
            return (simplex[0].0.clone(), simplex[0].1, true);
        }
        let c = centroid(&simplex);
        let worst = simplex[d].clone();
        let xr = along(&c, &worst.0, -1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(&c, &worst.0, -2.0);
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = along(&c, &worst.0, -0.5);
                let fx = f(&x);
                (x, fx)
            } else {
                let x = along(&c, &worst.0, 0.5);
                let fx = f(&x);
                (x, fx)
            };
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    p.0 = along(&best, &p.0, 0.5);
                    p.1 = f(&p.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0.clone(), simplex[0].1, false)
}

/// Central-difference Hessian of `f` at `x`.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let f0 = f(x);
    let eval = |moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in moves {
            y[i] += s;
        }
        f(&y)
    };
    let mut hm = DMatrix::zeros(d, d);
    for i in 0..d {
        hm[(i, i)] = (eval(&[(i, h)]) - 2.0 * f0 + eval(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (eval(&[(i, h), (j, h)]) - eval(&[(i, h), (j, -h)]) - eval(&[(i, -h), (j, h)])
                + eval(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}

/// Locate the mode of `ln_post` and integrate around it on a standardized
/// lattice (or a central composite design in high dimension).
pub fn explore_hyperparameters<F>(ln_post: &F, z0: &[f64], cfg: &GridConfig) -> Result<Exploration>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let d = z0.len();
    let neg = |z: &[f64]| match ln_post(z) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    };
    let start = neg(z0);
    if !start.is_finite() {
        return Err(Error::numerical("log posterior is not finite at the initial hyperparameters"));
    }
    let mut warnings = Vec::new();
    let (mut mode, mut fmin, mut converged) = nelder_mead(&neg, z0, 1.0, cfg.max_iter);
    // restart from the best vertex to guard against a collapsed simplex
    let (m2, f2, c2) = nelder_mead(&neg, &mode, 0.25, cfg.max_iter);
    if f2 <= fmin {
        mode = m2;
        fmin = f2;
    }
    converged &= c2;
    if !converged {
        return Err(Error::numerical("hyperparameter mode search did not converge"));
    }
    let ln_post_mode = -fmin;

    let hm = hessian(&neg, &mode, cfg.hessian_step);
    if hm.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("Hessian at the hyperparameter mode is not finite"));
    }
    let eig = SymmetricEigen::new(hm);
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let floor = if max_ev > 0.0 { max_ev * 1e-6 } else { 1.0 };
    let lambdas: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| {
            if v > floor {
                v
            } else {
                floor
            }
        })
        .collect();
    if eig.eigenvalues.iter().any(|&v| v <= floor) {
        warnings.push("Hessian at the mode is not positive definite; eigenvalues were floored".into());
    }
    // z = mode + V diag(lambda^-1/2) s
    let mut transform = eig.eigenvectors.clone();
    for (j, l) in lambdas.iter().enumerate() {
        let c = 1.0 / l.sqrt();
        transform.column_mut(j).scale_mut(c);
    }
    let cov = &transform * transform.transpose();
    let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].sqrt()).collect();
    let to_z = |s: &[f64]| -> Vec<f64> {
        let v = &transform * DVector::from_column_slice(s);
        mode.iter().zip(v.iter()).map(|(m, x)| m + x).collect()
    };

    let ccd = d > cfg.max_full_dim;
    let mut points = if ccd {
        ccd_points(d, cfg.ccd_f0)
            .into_par_iter()
            .map(|(s, w)| {
                let z = to_z(&s);
                let lp = ln_post(&z).unwrap_or(f64::NEG_INFINITY);
                let s2: f64 = s.iter().map(|v| v * v).sum();
                // design weight corrected by the ratio to the Gaussian approximation
                let lw = if lp.is_finite() { w.ln() + lp - ln_post_mode + 0.5 * s2 } else { f64::NEG_INFINITY };
                (z, lp, lw)
            })
            .collect::<Vec<_>>()
    } else {
        lattice_points(d, cfg, &to_z, ln_post, ln_post_mode, &mut warnings)?
    };
    points.retain(|p| p.2.is_finite());
    if points.is_empty() {
        return Err(Error::numerical("no hyperparameter grid point has finite density"));
    }
    let max_lw = points.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = points.iter().map(|p| (p.2 - max_lw).exp()).sum();
    let points = points
        .into_iter()
        .map(|(z, ln_post, lw)| HyperPoint { z, ln_post, weight: (lw - max_lw).exp() / total })
        .collect();
    Ok(Exploration { mode, ln_post_mode, sd, points, ccd, warnings })
}

type RawPoint = (Vec<f64>, f64, f64);

fn lattice_points<F, T>(
    d: usize,
    cfg: &GridConfig,
    to_z: &T,
    ln_post: &F,
    ln_post_mode: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<RawPoint>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    T: Fn(&[f64]) -> Vec<f64> + Sync,
{
    use std::collections::BTreeSet;
    let mut seen: BTreeSet<Vec<i64>> = BTreeSet::new();
    let origin = vec![0i64; d];
    seen.insert(origin.clone());
    let mut frontier = vec![origin];
    let mut kept = Vec::new();
    while !frontier.is_empty() {
        let evaluated: Vec<(Vec<i64>, Vec<f64>, f64)> = frontier
            .par_iter()
            .map(|k| {
                let s: Vec<f64> = k.iter().map(|&v| v as f64 * cfg.delta).collect();
                let z = to_z(&s);
                let lp = ln_post(&z).unwrap_or(f64::NEG_INFINITY);
                (k.clone(), z, lp)
            })
            .collect();
        let mut next = Vec::new();
        for (k, z, lp) in evaluated {
            if !(lp.is_finite() && lp > ln_post_mode - cfg.drop) {
                continue;
            }
            for i in 0..d {
                for step in [-1i64, 1] {
                    let mut nb = k.clone();
                    nb[i] += step;
                    if seen.insert(nb.clone()) {
                        next.push(nb);
                    }
                }
            }
            kept.push((z, lp, lp));
        }
        if kept.len() > cfg.max_points {
            warnings.push(format!("grid truncated at {} points", cfg.max_points));
            break;
        }
        frontier = next;
    }
    Ok(kept)
}

/// Central composite design on the sphere of radius `f0 sqrt(d)`: centre,
/// the `2^d` corners and the `2d` axial points, with weights that integrate
/// quadratics exactly under a standard normal.
pub fn ccd_points(d: usize, f0: f64) -> Vec<(Vec<f64>, f64)> {
    let r2 = f0 * f0 * d as f64;
    let w = 1.0 / (r2 * (2.0 + (1u64 << d) as f64 / d as f64));
    let mut out = vec![(vec![0.0; d], 1.0 - 1.0 / (f0 * f0))];
    for mask in 0..(1u64 << d) {
        let s = (0..d).map(|i| if mask >> i & 1 == 1 { f0 } else { -f0 }).collect();
        out.push((s, w));
    }
    let r = r2.sqrt();
    for i in 0..d {
        for sign in [-1.0, 1.0] {
            let mut s = vec![0.0; d];
            s[i] = sign * r;
            out.push((s, w));
        }
    }
    out
}

/// Summary of a univariate distribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// A finite mixture of normals (components with zero sd are point masses).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl NormalMixture {
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let v: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((w, mu), s)| w * (s * s + (mu - m).powi(2)))
            .sum();
        v.max(0.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((w, mu), s)| {
                w * if *s > 0.0 {
                    std_normal_cdf((x - mu) / s)
                } else if x >= *mu {
                    1.0
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .filter(|(_, s)| **s > 0.0)
            .map(|((w, mu), s)| w * (-0.5 * ((x - mu) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()))
            .sum()
    }

    /// Quantile by bisection on the mixture CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (mu, s) in self.means.iter().zip(&self.sds) {
            lo = lo.min(mu - 12.0 * s);
            hi = hi.max(mu + 12.0 * s);
        }
        if lo == hi {
            return lo;
        }
        let scale = lo.abs().max(hi.abs()).max(1e-300);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * scale {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn summary(&self) -> MarginalSummary {
        MarginalSummary {
            mean: self.mean(),
            sd: self.variance().sqrt(),
            q025: self.quantile(0.025),
            median: self.quantile(0.5),
            q975: self.quantile(0.975),
        }
    }
}

/// Per-element summaries of a weighted mixture of Gaussians given the
/// component means and variances (one vector per grid point).
pub fn latent_marginals(weights: &[f64], means: &[DVector<f64>], variances: &[DVector<f64>]) -> Vec<MarginalSummary> {
    let n = means.first().map_or(0, |m| m.len());
    (0..n)
        .map(|i| {
            NormalMixture {
                weights: weights.to_vec(),
                means: means.iter().map(|m| m[i]).collect(),
                sds: variances.iter().map(|v| v[i].max(0.0).sqrt()).collect(),
            }
            .summary()
        })
        .collect()
}

/// Fit output at one hyperparameter grid point.
#[derive(Clone, Debug)]
pub struct PointFit {
    pub z: Vec<f64>,
    pub weight: f64,
    pub ln_post: f64,
    pub latent_mean: DVector<f64>,
    pub latent_var: DVector<f64>,
    pub obs_mean: Vec<f64>,
    pub obs_var: Vec<f64>,
    pub ln_cpo: Vec<f64>,
    pub area_mean: DVector<f64>,
    pub area_cov: DMatrix<f64>,
}

fn point_fit(spec: &ModelSpec, p: &HyperPoint, area_rows: &[SparseRow]) -> Result<PointFit> {
    let h = spec.decode(&p.z);
    let sys = model_system(spec, &h)?;
    let cond = gaussian_conditional(&sys)?;
    let cov = cond.covariance();
    let obs_mean = sys.design.iter().map(|r| row_dot(r, &cond.mean)).collect();
    let obs_var = sys.design.iter().map(|r| row_quad(r, &cov).max(0.0)).collect();
    let ln_cpo = loo_log_cpo(&sys, &cond, &cov)?;
    let n = area_rows.len();
    let area_mean = DVector::from_iterator(n, area_rows.iter().map(|r| row_dot(r, &cond.mean)));
    let mut area_cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = area_rows[i]
                .iter()
                .map(|&(a, x)| area_rows[j].iter().map(|&(b, y)| x * y * cov[(a, b)]).sum::<f64>())
                .sum();
            area_cov[(i, j)] = v;
            area_cov[(j, i)] = v;
        }
    }
    Ok(PointFit {
        z: p.z.clone(),
        weight: p.weight,
        ln_post: p.ln_post,
        latent_var: cov.diagonal(),
        latent_mean: cond.mean,
        obs_mean,
        obs_var,
        ln_cpo,
        area_mean,
        area_cov,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub mode: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Dic {
    pub dic: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub p_d: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub hyper_names: Vec<String>,
    pub exploration: Exploration,
    pub points: Vec<PointFit>,
    pub latent_labels: Vec<String>,
    pub latent: Vec<MarginalSummary>,
    /// Linear predictor `mu + slope + b_i` per area.
    pub area_eta: Vec<MarginalSummary>,
    pub hyper: Vec<HyperSummary>,
    pub dic: Dic,
    pub log_score: f64,
    pub ln_cpo: Vec<f64>,
    pub y: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Initial internal hyperparameters: `tau_b = 10, phi = 0.5, theta = 0.75, psi = 1, tau_nu = 10`.
pub fn default_start(spec: &ModelSpec) -> Vec<f64> {
    spec.hyper_names()
        .iter()
        .map(|n| match n.as_str() {
            "tau_b" | "tau_nu" => 10f64.ln(),
            "theta" => 3f64.ln(),
            _ => 0.0,
        })
        .collect()
}

/// Fit `spec`: explore hyperparameters, then summarize the Gaussian mixture.
pub fn fit(spec: &ModelSpec, cfg: &GridConfig) -> Result<FitResult> {
    let f = |z: &[f64]| ln_hyper_posterior(spec, z);
    let exploration = explore_hyperparameters(&f, &default_start(spec), cfg)?;
    let area_rows = spec.area_rows();
    let points = exploration
        .points
        .par_iter()
        .map(|p| point_fit(spec, p, &area_rows))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    let means: Vec<_> = points.iter().map(|p| p.latent_mean.clone()).collect();
    let vars: Vec<_> = points.iter().map(|p| p.latent_var.clone()).collect();
    let latent = latent_marginals(&weights, &means, &vars);
    let area_means: Vec<_> = points.iter().map(|p| p.area_mean.clone()).collect();
    let area_vars: Vec<_> = points.iter().map(|p| p.area_cov.diagonal()).collect();
    let area_eta = latent_marginals(&weights, &area_means, &area_vars);
    let y: Vec<f64> = spec.observations().iter().map(|o| o.y).collect();
    let variance: Vec<f64> = spec.observations().iter().map(|o| o.variance).collect();
    let dic = dic(&points, &y, &variance);
    let ln_cpo = mixed_ln_cpo(&points);
    let log_score = -ln_cpo.iter().sum::<f64>() / ln_cpo.len() as f64;
    let hyper = hyper_summaries(spec, &exploration, cfg);
    Ok(FitResult {
        hyper_names: spec.hyper_names(),
        latent_labels: spec.layout().labels(),
        exploration,
        points,
        latent,
        area_eta,
        hyper,
        dic,
        log_score,
        ln_cpo,
        y,
        variance,
    })
}

/// `ln CPO_k = -ln sum_j w_j / CPO_jk`: the harmonic mean over the
/// hyperparameter posterior.
pub fn mixed_ln_cpo(points: &[PointFit]) -> Vec<f64> {
    let n = points.first().map_or(0, |p| p.ln_cpo.len());
    (0..n)
        .map(|k| {
            let terms: Vec<f64> = points.iter().map(|p| p.weight.ln() - p.ln_cpo[k]).collect();
            let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            -(m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln())
        })
        .collect()
}

/// Gaussian deviance `D(eta) = sum [ln(2 pi V) + (y - eta)^2 / V]`.
pub fn deviance(eta: &[f64], y: &[f64], variance: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .zip(variance)
        .map(|((e, y), v)| LN_2PI + v.ln() + (y - e).powi(2) / v)
        .sum()
}

/// DIC from the mixture moments of the observation predictors.
pub fn dic(points: &[PointFit], y: &[f64], variance: &[f64]) -> Dic {
    let n = y.len();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for p in points {
        for k in 0..n {
            mean[k] += p.weight * p.obs_mean[k];
            second[k] += p.weight * (p.obs_var[k] + p.obs_mean[k].powi(2));
        }
    }
    let deviance_at_mean = deviance(&mean, y, variance);
    let p_d: f64 = (0..n).map(|k| (second[k] - mean[k].powi(2)).max(0.0) / variance[k]).sum();
    let mean_deviance = deviance_at_mean + p_d;
    Dic { dic: mean_deviance + p_d, mean_deviance, deviance_at_mean, p_d }
}

pub fn rmse(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::invalid(format!("rmse needs equal non-empty lengths, got {} and {}", truth.len(), estimate.len())));
    }
    let s: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((s / truth.len() as f64).sqrt())
}

/// Probabilists' Gauss-Hermite rule (Golub-Welsch), weights summing to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Smoothed marginal of internal coordinate `k`: each grid value becomes a
/// normal kernel, shrunk towards the mean so that the mixture keeps the
/// grid's mean and variance.
pub fn smoothed_coordinate(exploration: &Exploration, k: usize, cfg: &GridConfig) -> NormalMixture {
    let weights: Vec<f64> = exploration.points.iter().map(|p| p.weight).collect();
    let raw: Vec<f64> = exploration.points.iter().map(|p| p.z[k]).collect();
    let m: f64 = weights.iter().zip(&raw).map(|(w, z)| w * z).sum();
    let v: f64 = weights.iter().zip(&raw).map(|(w, z)| w * (z - m).powi(2)).sum();
    let bw = if exploration.ccd { exploration.sd[k] } else { 0.5 * cfg.delta * exploration.sd[k] };
    if v <= 0.0 {
        return NormalMixture { weights: vec![1.0], means: vec![m], sds: vec![0.0] };
    }
    let h2 = bw * bw;
    let (shrink, kernel) = if h2 < v { ((1.0 - h2 / v).sqrt(), bw) } else { (0.0, v.sqrt()) };
    NormalMixture {
        means: raw.iter().map(|z| m + shrink * (z - m)).collect(),
        sds: vec![kernel; raw.len()],
        weights,
    }
}

fn hyper_summaries(spec: &ModelSpec, exploration: &Exploration, cfg: &GridConfig) -> Vec<HyperSummary> {
    let (nodes, gw) = gauss_hermite(24);
    let best = exploration
        .points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.weight.total_cmp(&b.1.weight))
        .map(|(i, _)| i)
        .unwrap_or(0);
    spec.hyper_names()
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mix = smoothed_coordinate(exploration, k, cfg);
            let g = |z: f64| spec.decode_coordinate(k, z);
            let (mut m1, mut m2) = (0.0, 0.0);
            for ((w, mu), s) in mix.weights.iter().zip(&mix.means).zip(&mix.sds) {
                for (x, q) in nodes.iter().zip(&gw) {
                    let v = g(mu + s * x);
                    m1 += w * q * v;
                    m2 += w * q * v * v;
                }
            }
            HyperSummary {
                name: name.clone(),
                mean: m1,
                sd: (m2 - m1 * m1).max(0.0).sqrt(),
                q025: g(mix.quantile(0.025)),
                median: g(mix.quantile(0.5)),
                q975: g(mix.quantile(0.975)),
                mode: g(exploration.points[best].z[k]),
            }
        })
        .collect()
}

/// Prior and posterior densities of theta on `grid` (posterior from the
/// smoothed grid marginal). `None` when theta is not a free parameter.
pub fn theta_densities(spec: &ModelSpec, fit: &FitResult, cfg: &GridConfig, grid: &[f64]) -> Option<Vec<(f64, f64, f64)>> {
    let prior = match &spec.priors().theta {
        Some(ThetaSpec::Free(p)) => p,
        _ => return None,
    };
    let k = fit.hyper_names.iter().position(|n| n == "theta")?;
    let mix = smoothed_coordinate(&fit.exploration, k, cfg);
    Some(
        grid.iter()
            .map(|&t| {
                let z = (t / (1.0 - t)).ln();
                (t, prior.density(t), mix.pdf(z) / (t * (1.0 - t)))
            })
            .collect(),
    )
}

/// Per-area summaries of `p_i = expit(eta_i)` from `draws` posterior samples.
pub fn u5mr_summaries(fit: &FitResult, draws: usize, seed: u64) -> Result<Vec<MarginalSummary>> {
    if draws == 0 {
        return Err(Error::invalid("at least one draw is required"));
    }
    let weights: Vec<f64> = fit.points.iter().map(|p| p.weight).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::invalid(format!("grid weights: {e}")))?;
    let factors: Vec<DMatrix<f64>> = fit
        .points
        .iter()
        .map(|p| {
            let eig = SymmetricEigen::new(p.area_cov.clone());
            let mut f = eig.eigenvectors;
            for (j, l) in eig.eigenvalues.iter().enumerate() {
                f.column_mut(j).scale_mut(l.max(0.0).sqrt());
            }
            f
        })
        .collect();
    let n = fit.points[0].area_mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![Vec::with_capacity(draws); n];
    let mut e = DVector::zeros(n);
    for _ in 0..draws {
        let j = pick.sample(&mut rng);
        for v in e.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let eta = &fit.points[j].area_mean + &factors[j] * &e;
        for (i, s) in samples.iter_mut().enumerate() {
            s.push(expit(eta[i]));
        }
    }
    Ok(samples.into_iter().map(|s| empirical_summary(s)).collect())
}

/// Mean, sd and linearly interpolated quantiles of a sample.
pub fn empirical_summary(mut s: Vec<f64>) -> MarginalSummary {
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mid = s[s.len() / 2];
    let mean = mid + s.iter().map(|x| x - mid).sum::<f64>() / n;
    let var = if s.len() > 1 { s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let q = |p: f64| {
        let h = (n - 1.0) * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    MarginalSummary { mean, sd: var.sqrt(), q025: q(0.025), median: q(0.5), q975: q(0.975) }
}
