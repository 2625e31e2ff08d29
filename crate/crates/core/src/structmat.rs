//! Structure and precision matrices for first-order intrinsic GMRFs and their
//! adaptive variants, plus scaling by the geometric mean of marginal variances.
//!
//! Every matrix built here is a weighted graph Laplacian (or, for the second
//! order walk, a sum of rank-one second-difference terms), so it is
//! symmetric, positive semi-definite and annihilates the constant vector:
//!
//! ```text
//! Q = sum_{i~j} tau_ij (e_i - e_j)(e_i - e_j)^T
//! x^T Q x = sum_{i~j} tau_ij (x_i - x_j)^2
//! ```

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::{count_components, AreaGraph};

/// Relative eigenvalue cutoff used for generalized inverses and ranks.
pub const RANK_TOL: f64 = 1e-8;

/// Symmetric sparse matrix stored as its upper triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct SymSparseMatrix {
    n: usize,
    upper: BTreeMap<(usize, usize), f64>,
}

impl SymSparseMatrix {
    pub fn zeros(n: usize) -> Self {
        SymSparseMatrix { n, upper: BTreeMap::new() }
    }

    /// Laplacian of a weighted edge list.
    pub fn laplacian(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut m = Self::zeros(n);
        for (i, j, w) in edges {
            m.add(i, i, w);
            m.add(j, j, w);
            m.add(i, j, -w);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    /// Add `v` to entry (i, j) and, off the diagonal, to (j, i).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        *self.upper.entry((i.min(j), i.max(j))).or_insert(0.0) += v;
    }

    /// Stored upper-triangle entries `(i, j, v)` with `i <= j`, row-major.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.upper.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn nnz_upper(&self) -> usize {
        self.upper.values().filter(|v| **v != 0.0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.upper.values().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymSparseMatrix {
            n: self.n,
            upper: self.upper.iter().map(|(&k, &v)| (k, v * c)).collect(),
        }
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Self {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let mut out = self.clone();
        for (&k, &v) in &other.upper {
            *out.upper.entry(k).or_insert(0.0) += c * v;
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &v) in &self.upper {
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
        d
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (&(i, j), &v) in &self.upper {
            s[i] += v;
            if i != j {
                s[j] += v;
            }
        }
        s
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (&(i, j), &v) in &self.upper {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.upper
            .iter()
            .map(|(&(i, j), &v)| if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] })
            .sum()
    }
}

pub fn rw1_structure(n: usize) -> Result<SymSparseMatrix> {
    if n < 2 {
        return Err(Error::EmptyGraph(n));
    }
    Ok(SymSparseMatrix::laplacian(n, (0..n - 1).map(|i| (i, i + 1, 1.0))))
}

pub fn icar_structure(g: &AreaGraph) -> Result<SymSparseMatrix> {
    let k = count_components(g.n(), g.edges().iter().copied());
    if k != 1 {
        return Err(Error::Disconnected(k));
    }
    Ok(SymSparseMatrix::laplacian(g.n(), g.edges().iter().map(|&(i, j)| (i, j, 1.0))))
}

fn check_positive(taus: &[f64]) -> Result<()> {
    match taus.iter().position(|&t| !(t > 0.0 && t.is_finite())) {
        Some(k) => Err(Error::invalid(format!("precision {} is not positive: {}", k + 1, taus[k]))),
        None => Ok(()),
    }
}

/// Adaptive RW1 with one precision per transition; `taus.len() == N - 1`.
pub fn general_arw1_precision(taus: &[f64]) -> Result<SymSparseMatrix> {
    if taus.is_empty() {
        return Err(Error::EmptyGraph(taus.len() + 1));
    }
    check_positive(taus)?;
    let n = taus.len() + 1;
    Ok(SymSparseMatrix::laplacian(n, taus.iter().enumerate().map(|(i, &t)| (i, i + 1, t))))
}

/// Adaptive ICAR with one precision per edge. Keys are `(i, j)` with `i < j`
/// and must cover exactly the edges of `g`.
pub fn general_aicar_precision(
    g: &AreaGraph,
    tau_edges: &BTreeMap<(usize, usize), f64>,
) -> Result<SymSparseMatrix> {
    for e in g.edges() {
        if !tau_edges.contains_key(e) {
            return Err(Error::invalid(format!("no precision for edge {{{}, {}}}", e.0 + 1, e.1 + 1)));
        }
    }
    if tau_edges.len() != g.edges().len() {
        let extra = tau_edges.keys().find(|k| g.edges().binary_search(k).is_err()).unwrap();
        return Err(Error::invalid(format!("precision given for non-edge {{{}, {}}}", extra.0 + 1, extra.1 + 1)));
    }
    let taus: Vec<f64> = g.edges().iter().map(|e| tau_edges[e]).collect();
    check_positive(&taus)?;
    Ok(SymSparseMatrix::laplacian(
        g.n(),
        g.edges().iter().zip(&taus).map(|(&(i, j), &t)| (i, j, t)),
    ))
}

/// Adaptive RW2: `Q = sum_i tau_i d_i d_i^T` with `d_i` the second difference
/// at positions `i, i+1, i+2`; `taus.len() == N - 2`.
pub fn arw2_precision(taus: &[f64]) -> Result<SymSparseMatrix> {
    if taus.is_empty() {
        return Err(Error::invalid("second-order walk needs at least 3 periods"));
    }
    check_positive(taus)?;
    let n = taus.len() + 2;
    let mut q = SymSparseMatrix::zeros(n);
    const D: [f64; 3] = [1.0, -2.0, 1.0];
    for (i, &t) in taus.iter().enumerate() {
        for a in 0..3 {
            for b in a..3 {
                q.add(i + a, i + b, t * D[a] * D[b]);
            }
        }
    }
    Ok(q)
}

/// A structure matrix split into edge classes, `R = R_1 + ... + R_L`, with
/// its scaled counterparts once [`scale_parts`] has run.
#[derive(Clone, Debug)]
pub struct StructureParts {
    graph: AreaGraph,
    parts: Vec<SymSparseMatrix>,
    part_edges: Vec<usize>,
    scaled: Vec<SymSparseMatrix>,
    sigma2: Option<f64>,
    warnings: Vec<String>,
}

impl StructureParts {
    fn from_classes(graph: &AreaGraph, n_parts: usize, class_of: impl Fn((usize, usize)) -> usize) -> Self {
        let mut edges = vec![Vec::new(); n_parts];
        for &e in graph.edges() {
            edges[class_of(e)].push(e);
        }
        let parts: Vec<_> = edges
            .iter()
            .map(|es| SymSparseMatrix::laplacian(graph.n(), es.iter().map(|&(i, j)| (i, j, 1.0))))
            .collect();
        let warnings = edges
            .iter()
            .enumerate()
            .filter(|(_, es)| es.is_empty())
            .map(|(l, _)| format!("part {} has no edges; it is the zero matrix", l + 1))
            .collect();
        StructureParts {
            graph: graph.clone(),
            parts,
            part_edges: edges.iter().map(Vec::len).collect(),
            scaled: Vec::new(),
            sigma2: None,
            warnings,
        }
    }

    /// The plain RW1/ICAR structure as a single part.
    pub fn plain(graph: &AreaGraph) -> Result<Self> {
        icar_structure(graph)?;
        Ok(Self::from_classes(graph, 1, |_| 0))
    }

    pub fn graph(&self) -> &AreaGraph {
        &self.graph
    }

    pub fn parts(&self) -> &[SymSparseMatrix] {
        &self.parts
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn part_edge_counts(&self) -> &[usize] {
        &self.part_edges
    }

    pub fn scaled_parts(&self) -> &[SymSparseMatrix] {
        &self.scaled
    }

    pub fn sigma2(&self) -> Option<f64> {
        self.sigma2
    }

    pub fn is_scaled(&self) -> bool {
        self.sigma2.is_some()
    }

    /// Notes about degenerate (empty) edge classes.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn dim(&self) -> usize {
        self.graph.n()
    }

    /// `sum_l R_l`.
    pub fn total(&self) -> SymSparseMatrix {
        self.combine(&vec![1.0; self.parts.len()])
    }

    /// `sum_l w_l R_l` over the unscaled parts.
    pub fn combine(&self, weights: &[f64]) -> SymSparseMatrix {
        assert_eq!(weights.len(), self.parts.len(), "one weight per part");
        self.parts
            .iter()
            .zip(weights)
            .fold(SymSparseMatrix::zeros(self.dim()), |acc, (p, &w)| acc.add_scaled(p, w))
    }

    /// `sum_l w_l R*_l`. The weighted sum is formed on the integer-valued
    /// unscaled parts and multiplied once, so unit weights reproduce the
    /// scaled plain structure bit for bit.
    pub fn combine_scaled(&self, weights: &[f64]) -> SymSparseMatrix {
        let s2 = self.sigma2.expect("structure parts are not scaled");
        self.combine(weights).scaled(s2)
    }

    /// Multiply every unscaled part by `c` (drops any scaling).
    pub fn multiplied(&self, c: f64) -> Self {
        StructureParts {
            parts: self.parts.iter().map(|p| p.scaled(c)).collect(),
            scaled: Vec::new(),
            sigma2: None,
            ..self.clone()
        }
    }
}

/// Conflict ARW1: part 1 holds transitions with neither endpoint in the
/// conflict set, part 2 the transitions touching it.
pub fn conflict_arw1_parts(g: &AreaGraph) -> Result<StructureParts> {
    let c = g
        .conflict_set()
        .ok_or_else(|| Error::invalid("conflict ARW1 needs a temporal graph with a conflict set"))?;
    Ok(StructureParts::from_classes(g, 2, |(i, j)| {
        usize::from(c.contains(&i) || c.contains(&j))
    }))
}

/// Multi-country AICAR: part 1 within-country edges, part 2 between-country.
pub fn multicountry_aicar_parts(g: &AreaGraph) -> Result<StructureParts> {
    let cty = g
        .country_of()
        .ok_or_else(|| Error::invalid("multi-country AICAR needs country labels"))?;
    icar_structure(g)?;
    Ok(StructureParts::from_classes(g, 2, |(i, j)| usize::from(cty[i] != cty[j])))
}

/// General multi-country AICAR with `M + 1` parts: one per country for
/// within-country edges, the last one for between-country edges.
pub fn general_multicountry_parts(g: &AreaGraph) -> Result<StructureParts> {
    let cty = g
        .country_of()
        .ok_or_else(|| Error::invalid("multi-country AICAR needs country labels"))?;
    let m = g.n_countries().unwrap_or(0);
    if m < 2 {
        return Err(Error::invalid(format!("general multi-country model needs at least 2 countries, got {m}")));
    }
    icar_structure(g)?;
    Ok(StructureParts::from_classes(g, m + 1, |(i, j)| if cty[i] == cty[j] { cty[i] } else { m }))
}

/// Moore-Penrose inverse of a symmetric PSD matrix together with its rank.
/// Eigenvalues at or below `RANK_TOL * max` are treated as zero.
pub fn generalized_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = RANK_TOL * max;
    let inv: DVector<f64> = eig.eigenvalues.map(|l| if l > cut { 1.0 / l } else { 0.0 });
    let rank = eig.eigenvalues.iter().filter(|&&l| l > cut).count();
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&inv) * v.transpose(), rank)
}

/// Geometric mean of the diagonal of the generalized inverse.
pub fn geometric_mean_variance(r: &SymSparseMatrix) -> Result<f64> {
    let n = r.dim();
    let (ginv, rank) = generalized_inverse(&r.to_dense());
    if rank + 1 != n {
        return Err(Error::invalid(format!(
            "structure matrix has rank {rank}, expected {} (disconnected input?)",
            n - 1
        )));
    }
    let mean_log = ginv.diagonal().iter().map(|v| v.ln()).sum::<f64>() / n as f64;
    Ok(mean_log.exp())
}

/// Scale every part so that the sum has unit geometric-mean marginal
/// variance: `R*_l = sigma2 * R_l` with `sigma2` the geometric mean of the
/// diagonal of `(sum_l R_l)^-`.
pub fn scale_parts(parts: StructureParts) -> Result<StructureParts> {
    let s2 = geometric_mean_variance(&parts.total())?;
    let scaled = parts.parts.iter().map(|p| p.scaled(s2)).collect();
    Ok(StructureParts { scaled, sigma2: Some(s2), ..parts })
}
