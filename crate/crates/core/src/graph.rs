//! Neighbourhood structures over areas: temporal paths with an optional set
//! of conflict periods, and areal graphs with optional country nesting.
//!
//! Indices are 0-based in the Rust API. Every file format read or written
//! here is 1-based.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    TemporalPath,
    Areal,
}

/// Validated, connected neighbourhood graph.
#[derive(Clone, Debug, PartialEq)]
pub struct AreaGraph {
    n: usize,
    /// Unordered pairs stored as `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    kind: GraphKind,
    conflict: Option<BTreeSet<usize>>,
    country_of: Option<Vec<usize>>,
    country_labels: Option<Vec<i64>>,
}

impl AreaGraph {
    /// Path graph `0 - 1 - ... - (n-1)` with an optional set of conflict periods.
    pub fn temporal(n: usize, conflict: Option<&[usize]>) -> Result<Self> {
        if n < 2 {
            return Err(Error::EmptyGraph(n));
        }
        let conflict = match conflict {
            Some(c) => {
                let mut set = BTreeSet::new();
                for &i in c {
                    if i >= n {
                        return Err(Error::OutOfRange { index: i, n });
                    }
                    set.insert(i);
                }
                Some(set)
            }
            None => None,
        };
        Ok(AreaGraph {
            n,
            edges: (0..n - 1).map(|i| (i, i + 1)).collect(),
            kind: GraphKind::TemporalPath,
            conflict,
            country_of: None,
            country_labels: None,
        })
    }

    /// Areal graph from symmetric neighbour lists, optionally labelled with
    /// countries (`countries[i]` is the external country id of area `i`).
    pub fn areal(neighbours: &[Vec<usize>], countries: Option<&[i64]>) -> Result<Self> {
        let n = neighbours.len();
        if n < 2 {
            return Err(Error::EmptyGraph(n));
        }
        let mut edges = BTreeSet::new();
        for (i, list) in neighbours.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(Error::OutOfRange { index: j, n });
                }
                if j == i {
                    return Err(Error::invalid(format!("self-loop at area {}", i + 1)));
                }
                if !neighbours[j].contains(&i) {
                    return Err(Error::Asymmetric(i + 1, j + 1));
                }
                edges.insert((i.min(j), i.max(j)));
            }
        }
        let edges: Vec<_> = edges.into_iter().collect();
        let components = count_components(n, edges.iter().copied());
        if components != 1 {
            return Err(Error::Disconnected(components));
        }
        let (country_of, country_labels) = match countries {
            Some(labels) => {
                if labels.len() != n {
                    return Err(Error::MissingCountry(labels.len().min(n) + 1));
                }
                let (idx, distinct) = relabel(labels);
                (Some(idx), Some(distinct))
            }
            None => (None, None),
        };
        Ok(AreaGraph {
            n,
            edges,
            kind: GraphKind::Areal,
            conflict: None,
            country_of,
            country_labels,
        })
    }

    /// Areal graph from an explicit edge list.
    pub fn areal_from_edges(
        n: usize,
        edges: &[(usize, usize)],
        countries: Option<&[i64]>,
    ) -> Result<Self> {
        let mut nb = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::OutOfRange { index: i.max(j), n });
            }
            if !nb[i].contains(&j) {
                nb[i].push(j);
                nb[j].push(i);
            }
        }
        Self::areal(&nb, countries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn conflict_set(&self) -> Option<&BTreeSet<usize>> {
        self.conflict.as_ref()
    }

    pub fn country_of(&self) -> Option<&[usize]> {
        self.country_of.as_deref()
    }

    /// External country ids, indexed by internal country index.
    pub fn country_labels(&self) -> Option<&[i64]> {
        self.country_labels.as_deref()
    }

    /// Number of countries M, when labelled.
    pub fn n_countries(&self) -> Option<usize> {
        self.country_labels.as_ref().map(|l| l.len())
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            nb[i].push(j);
            nb[j].push(i);
        }
        nb
    }

    /// Whether an edge belongs to the reference class: a transition touching
    /// no conflict period, or a pair of neighbours in the same country.
    /// Unlabelled graphs put every edge in the reference class.
    pub fn is_reference_edge(&self, (i, j): (usize, usize)) -> bool {
        if let Some(c) = &self.conflict {
            return !c.contains(&i) && !c.contains(&j);
        }
        if let Some(cty) = &self.country_of {
            return cty[i] == cty[j];
        }
        true
    }

    /// Serialize the neighbour lists in the adjacency file format.
    pub fn to_adjacency_string(&self) -> String {
        let mut out = String::new();
        for (i, list) in self.neighbours().iter().enumerate() {
            let _ = write!(out, "{}:", i + 1);
            for j in list {
                let _ = write!(out, " {}", j + 1);
            }
            out.push('\n');
        }
        out
    }

    /// `area_id,country_id` CSV, when the graph carries countries.
    pub fn to_country_csv(&self) -> Option<String> {
        let (cty, labels) = (self.country_of.as_ref()?, self.country_labels.as_ref()?);
        let mut out = String::from("area_id,country_id\n");
        for (i, &c) in cty.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, labels[c]);
        }
        Some(out)
    }
}

fn relabel(labels: &[i64]) -> (Vec<usize>, Vec<i64>) {
    let distinct: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let pos: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(k, &l)| (l, k)).collect();
    (labels.iter().map(|l| pos[l]).collect(), distinct)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Number of connected components of the graph on `n` nodes with the given edges.
pub fn count_components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> usize {
    let mut ds = DisjointSet::new(n);
    for (i, j) in edges {
        ds.union(i, j);
    }
    (0..n).filter(|&i| ds.find(i) == i).count()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConnectivityReport {
    pub connected: bool,
    pub components: usize,
    /// Components of the subgraph keeping only reference-class edges.
    pub reference_components: usize,
    pub reference_edges: usize,
    pub shock_edges: usize,
}

impl ConnectivityReport {
    /// One edge class is empty, so the adaptive structure collapses to the
    /// plain one.
    pub fn degenerate(&self) -> bool {
        self.reference_edges == 0 || self.shock_edges == 0
    }
}

pub fn connectivity_report(g: &AreaGraph) -> ConnectivityReport {
    report_for(g.n, &g.edges, |e| g.is_reference_edge(e))
}

/// Connectivity of an arbitrary edge set, e.g. one that failed validation.
pub fn report_for(
    n: usize,
    edges: &[(usize, usize)],
    is_reference: impl Fn((usize, usize)) -> bool,
) -> ConnectivityReport {
    let components = count_components(n, edges.iter().copied());
    let reference: Vec<_> = edges.iter().copied().filter(|&e| is_reference(e)).collect();
    ConnectivityReport {
        connected: components == 1,
        components,
        reference_components: count_components(n, reference.iter().copied()),
        reference_edges: reference.len(),
        shock_edges: edges.len() - reference.len(),
    }
}

/// Parse the `<area_id>: <neighbour_id> ...` adjacency format.
pub fn parse_adjacency(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut lists: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Parse { line: lineno + 1, msg: msg.to_string() };
        let (head, tail) = line.split_once(':').ok_or_else(|| err("missing ':'"))?;
        let id: usize = head.trim().parse().map_err(|_| err("bad area id"))?;
        if id == 0 {
            return Err(err("area ids are 1-based"));
        }
        let mut nb = Vec::new();
        for tok in tail.split_whitespace() {
            let j: usize = tok.parse().map_err(|_| err("bad neighbour id"))?;
            if j == 0 {
                return Err(err("area ids are 1-based"));
            }
            nb.push(j - 1);
        }
        if lists.insert(id - 1, nb).is_some() {
            return Err(err("duplicate area id"));
        }
    }
    let n = lists.len();
    if let Some((&last, _)) = lists.iter().next_back() {
        if last + 1 != n {
            return Err(Error::invalid("area ids must be contiguous 1..N"));
        }
    }
    Ok(lists.into_values().collect())
}

/// Parse an `area_id,country_id` table covering areas `1..=n`.
pub fn parse_country_csv(text: &str, n: usize) -> Result<Vec<i64>> {
    #[derive(Deserialize)]
    struct Row {
        area_id: usize,
        country_id: i64,
    }
    let mut out = vec![None; n];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        if row.area_id == 0 || row.area_id > n {
            return Err(Error::OutOfRange { index: row.area_id, n });
        }
        out[row.area_id - 1] = Some(row.country_id);
    }
    out.iter()
        .enumerate()
        .map(|(i, c)| c.ok_or(Error::MissingCountry(i + 1)))
        .collect()
}

pub fn read_areal_graph(adjacency: &Path, countries: Option<&Path>) -> Result<AreaGraph> {
    let nb = parse_adjacency(&std::fs::read_to_string(adjacency)?)?;
    let labels = match countries {
        Some(p) => Some(parse_country_csv(&std::fs::read_to_string(p)?, nb.len())?),
        None => None,
    };
    AreaGraph::areal(&nb, labels.as_deref())
}

/// Temporal configuration file. Conflict years are calendar years.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub n_periods: usize,
    pub start_year: i64,
    #[serde(default)]
    pub conflict_years: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast_until: Option<i64>,
}

impl TemporalConfig {
    /// Total number of periods including the forecast horizon.
    pub fn total_periods(&self) -> usize {
        let last_observed = self.start_year + self.n_periods as i64 - 1;
        match self.forecast_until {
            Some(y) if y > last_observed => (y - self.start_year + 1) as usize,
            _ => self.n_periods,
        }
    }

    pub fn year_to_index(&self, year: i64) -> Result<usize> {
        let n = self.total_periods();
        let idx = year - self.start_year;
        if idx < 0 || idx as usize >= n {
            return Err(Error::OutOfRange { index: (idx + 1).max(0) as usize, n });
        }
        Ok(idx as usize)
    }

    /// Periods after the last observed one.
    pub fn forecast_indices(&self) -> Vec<usize> {
        (self.n_periods..self.total_periods()).collect()
    }

    pub fn to_graph(&self) -> Result<AreaGraph> {
        let conflict = self
            .conflict_years
            .iter()
            .map(|&y| self.year_to_index(y))
            .collect::<Result<Vec<_>>>()?;
        AreaGraph::temporal(self.total_periods(), Some(&conflict))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_path() {
        let g = AreaGraph::temporal(3, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(g.conflict_set().is_none());
    }

    #[test]
    fn simulation_window() {
        let c: Vec<usize> = (8..15).collect();
        let g = AreaGraph::temporal(30, Some(&c)).unwrap();
        assert_eq!(g.edges().len(), 29);
        assert_eq!(g.conflict_set().unwrap().len(), 7);
    }

    #[test]
    fn conflict_out_of_range() {
        assert!(matches!(
            AreaGraph::temporal(3, Some(&[6])),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(AreaGraph::temporal(1, None), Err(Error::EmptyGraph(1))));
    }

    #[test]
    fn areal_with_countries() {
        let nb = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        let g = AreaGraph::areal(&nb, Some(&[1, 1, 2, 2])).unwrap();
        assert_eq!(g.n_countries(), Some(2));
        let between: Vec<_> = g.edges().iter().copied().filter(|&e| !g.is_reference_edge(e)).collect();
        assert_eq!(between, vec![(1, 2)]);
    }

    #[test]
    fn minimal_areal() {
        let g = AreaGraph::areal(&[vec![1], vec![0]], None).unwrap();
        assert_eq!(g.kind(), GraphKind::Areal);
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn asymmetric_rejected() {
        let err = AreaGraph::areal(&[vec![1], vec![]], None).unwrap_err();
        assert!(matches!(err, Error::Asymmetric(1, 2)));
    }

    #[test]
    fn disconnected_rejected() {
        let nb = vec![vec![1], vec![0], vec![3], vec![2]];
        assert!(matches!(AreaGraph::areal(&nb, None), Err(Error::Disconnected(2))));
    }

    #[test]
    fn missing_country() {
        let text = "area_id,country_id\n1,5\n3,6\n";
        assert!(matches!(parse_country_csv(text, 3), Err(Error::MissingCountry(2))));
    }

    #[test]
    fn reports() {
        let g = AreaGraph::temporal(4, Some(&[2])).unwrap();
        let r = connectivity_report(&g);
        assert!(r.connected);
        assert_eq!(r.reference_components, 3);

        let r = connectivity_report(&AreaGraph::temporal(3, None).unwrap());
        assert!(r.connected);
        assert_eq!(r.reference_components, 1);

        let r = report_for(4, &[(0, 1), (2, 3)], |_| true);
        assert!(!r.connected);
        assert_eq!(r.components, 2);
    }

    #[test]
    fn adjacency_parse_errors() {
        assert!(parse_adjacency("1: 2\n3: 1\n").is_err());
        assert!(parse_adjacency("1 2\n").is_err());
        assert!(parse_adjacency("1: x\n").is_err());
        let nb = parse_adjacency("# comment\n1: 2\n2: 1\n").unwrap();
        assert_eq!(nb, vec![vec![1], vec![0]]);
    }

    #[test]
    fn temporal_config_mapping() {
        let cfg = TemporalConfig {
            n_periods: 31,
            start_year: 1985,
            conflict_years: (1993..=1999).collect(),
            forecast_until: Some(2019),
        };
        let g = cfg.to_graph().unwrap();
        assert_eq!(g.n(), 35);
        assert_eq!(g.conflict_set().unwrap().iter().copied().collect::<Vec<_>>(), (8..15).collect::<Vec<_>>());
        assert_eq!(cfg.forecast_indices(), vec![31, 32, 33, 34]);
    }

    fn connected_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<i64>)> {
        (2usize..15).prop_flat_map(|n| {
            let parents = proptest::collection::vec(any::<prop::sample::Index>(), n - 1);
            let extra = proptest::collection::vec((0..n, 0..n), 0..n);
            let labels = proptest::collection::vec(1i64..4, n);
            (Just(n), parents, extra, labels).prop_map(|(n, parents, extra, labels)| {
                let mut edges: Vec<(usize, usize)> =
                    parents.iter().enumerate().map(|(k, p)| (p.index(k + 1), k + 1)).collect();
                edges.extend(extra.into_iter().filter(|(a, b)| a != b));
                (n, edges, labels)
            })
        })
    }

    proptest! {
        #[test]
        fn temporal_edge_count(n in 2usize..200) {
            prop_assert_eq!(AreaGraph::temporal(n, None).unwrap().edges().len(), n - 1);
        }

        #[test]
        fn adjacency_round_trip((n, edges, labels) in connected_graph()) {
            let g = AreaGraph::areal_from_edges(n, &edges, Some(&labels)).unwrap();
            let nb = parse_adjacency(&g.to_adjacency_string()).unwrap();
            let cty = parse_country_csv(&g.to_country_csv().unwrap(), n).unwrap();
            let back = AreaGraph::areal(&nb, Some(&cty)).unwrap();
            prop_assert_eq!(back, g);
        }

        #[test]
        fn conflict_splits_reference_subgraph(n in 3usize..40, a in 0usize..40, len in 1usize..40) {
            let a = a % n;
            let c: Vec<usize> = (a..(a + len).min(n)).collect();
            prop_assume!(c.len() < n);
            let g = AreaGraph::temporal(n, Some(&c)).unwrap();
            prop_assert!(connectivity_report(&g).reference_components >= 2);
        }
    }
}
