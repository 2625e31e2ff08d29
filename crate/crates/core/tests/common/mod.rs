#![allow(dead_code)]

use agmrf::graph::{AreaGraph, TemporalConfig};
use agmrf::inference::{deviance, gaussian_conditional, model_system, FitResult};
use agmrf::latent::{ModelConfig, ModelSpec, Observation, StructuredKind};
use agmrf::structmat::{conflict_arw1_parts, scale_parts, StructureParts, SymSparseMatrix};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random connected areal graph: a random spanning tree plus extra edges.
pub fn random_areal(rng: &mut ChaCha8Rng, n: usize, extra: f64, countries: Option<usize>) -> AreaGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut nb = vec![Vec::new(); n];
    let link = |a: usize, b: usize, nb: &mut Vec<Vec<usize>>| {
        if a != b && !nb[a].contains(&b) {
            nb[a].push(b);
            nb[b].push(a);
        }
    };
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        link(order[k], parent, &mut nb);
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < extra {
                link(a, b, &mut nb);
            }
        }
    }
    let labels: Option<Vec<i64>> = countries.map(|m| {
        // contiguous blocks along the shuffled order keep each country non-empty
        let mut l = vec![0i64; n];
        for (k, &i) in order.iter().enumerate() {
            l[i] = (k * m / n) as i64 + 1;
        }
        l
    });
    AreaGraph::areal(&nb, labels.as_deref()).unwrap()
}

/// Random path with a random contiguous conflict window.
pub fn random_temporal(rng: &mut ChaCha8Rng, n: usize) -> AreaGraph {
    let start = rng.random_range(1..n - 1);
    let len = rng.random_range(1..=(n - 1 - start).min(8));
    let c: Vec<usize> = (start..start + len).collect();
    AreaGraph::temporal(n, Some(&c)).unwrap()
}

pub fn rwanda() -> TemporalConfig {
    TemporalConfig {
        n_periods: 31,
        start_year: 1985,
        conflict_years: (1993..=1999).collect(),
        forecast_until: Some(2019),
    }
}

/// Moore-Penrose inverse by SVD.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().pseudo_inverse(1e-10 * a.amax().max(1.0)).unwrap()
}

/// Log of the product of singular values above a relative cutoff.
pub fn ln_pdet(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let cut = 1e-10 * sv.max();
    sv.iter().filter(|&&s| s > cut).map(|s| s.ln()).sum()
}

pub fn dense(m: &SymSparseMatrix) -> DMatrix<f64> {
    m.to_dense()
}

/// Dense Laplacian built straight from an edge list.
pub fn laplacian_from_edges(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n);
    for &(i, j, w) in edges {
        q[(i, i)] += w;
        q[(j, j)] += w;
        q[(i, j)] -= w;
        q[(j, i)] -= w;
    }
    q
}

/// Draw a standard normal vector (Box-Muller keeps tests independent of rand_distr).
pub fn std_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random::<f64>();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Small temporal model with a two-period conflict window and noisy smooth data.
pub fn small_spec(n: usize, kind: StructuredKind, seed: u64, slope: bool, surveys: usize) -> ModelSpec {
    let g = AreaGraph::temporal(n, Some(&[n / 3, n / 3 + 1])).unwrap();
    let parts = match kind {
        StructuredKind::Nonadaptive => StructureParts::plain(&g).unwrap(),
        _ => conflict_arw1_parts(&g).unwrap(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::new();
    for i in 0..n {
        for s in 0..surveys {
            if surveys > 1 && rng.random::<f64>() < 0.3 {
                continue;
            }
            let y = -3.0 + 0.4 * (i as f64 / 3.0).sin() + 0.1 * std_normal_vec(&mut rng, 1)[0];
            obs.push(Observation { area: i, survey: s, y, variance: 0.01 + 0.02 * rng.random::<f64>() });
        }
    }
    let config = ModelConfig { structured: kind, include_slope: slope, ..ModelConfig::default() };
    ModelSpec::new(scale_parts(parts).unwrap(), obs, surveys, config).unwrap()
}

/// DIC from 1e5 posterior draws of the full latent vector.
pub fn monte_carlo_dic(spec: &ModelSpec, fit: &FitResult, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = spec.design_matrix();
    let y: Vec<f64> = spec.observations().iter().map(|o| o.y).collect();
    let v: Vec<f64> = spec.observations().iter().map(|o| o.variance).collect();
    let comps: Vec<(DVector<f64>, DMatrix<f64>)> = fit
        .points
        .iter()
        .map(|p| {
            let cond = gaussian_conditional(&model_system(spec, &spec.decode(&p.z)).unwrap()).unwrap();
            let eig = SymmetricEigen::new(cond.covariance());
            let mut f = eig.eigenvectors.clone();
            for (j, l) in eig.eigenvalues.iter().enumerate() {
                f.column_mut(j).scale_mut(l.max(0.0).sqrt());
            }
            (cond.mean, f)
        })
        .collect();
    let cum: Vec<f64> = fit
        .points
        .iter()
        .scan(0.0, |s, p| {
            *s += p.weight;
            Some(*s)
        })
        .collect();
    let mut dsum = 0.0;
    let mut eta_sum = vec![0.0; y.len()];
    for _ in 0..draws {
        let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
        let j = cum.iter().position(|&c| c >= u).unwrap_or(cum.len() - 1);
        let e = DVector::from_vec(std_normal_vec(&mut rng, comps[j].0.len()));
        let x = &comps[j].0 + &comps[j].1 * e;
        let eta: Vec<f64> = design.iter().map(|r| r.iter().map(|&(c, a)| a * x[c]).sum()).collect();
        dsum += deviance(&eta, &y, &v);
        for (s, e) in eta_sum.iter_mut().zip(&eta) {
            *s += e;
        }
    }
    let dbar = dsum / draws as f64;
    let eta_bar: Vec<f64> = eta_sum.iter().map(|s| s / draws as f64).collect();
    2.0 * dbar - deviance(&eta_bar, &y, &v)
}
