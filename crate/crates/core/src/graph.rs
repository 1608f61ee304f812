// SPDX-License-Identifier: MIT OR Apache-2.0

//! Graph sequences, partitions of the time axis and per-snapshot summary
//! statistics.
//!
//! Time indices exposed by this module are 1-based (`1..=T`), matching the
//! convention used for change points. Storage is 0-based.

use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense binary adjacency matrix.
pub type Adjacency = Array2<u8>;

/// An ordered sequence of `T` binary adjacency matrices over a fixed node set.
///
/// Diagonal entries are always zero and undirected matrices are symmetric.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphSequence {
    directed: bool,
    n: usize,
    graphs: Vec<Adjacency>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    directed: bool,
    n: usize,
    #[serde(rename = "T")]
    t: usize,
    y: Vec<Vec<Vec<i64>>>,
}

impl GraphSequence {
    /// Builds a sequence, validating shape, binarity and symmetry.
    ///
    /// Nonzero diagonal entries are dropped with a warning.
    pub fn new(directed: bool, n: usize, mut graphs: Vec<Adjacency>) -> Result<Self> {
        for (idx, g) in graphs.iter_mut().enumerate() {
            let t = idx + 1;
            if g.dim() != (n, n) {
                return Err(Error::Shape {
                    t,
                    detail: format!("expected {n}x{n}, got {}x{}", g.nrows(), g.ncols()),
                });
            }
            for ((i, j), &v) in g.indexed_iter() {
                if v > 1 {
                    return Err(Error::NonBinary {
                        t,
                        i,
                        j,
                        value: v as i64,
                    });
                }
            }
            if !directed {
                for i in 0..n {
                    for j in (i + 1)..n {
                        if g[[i, j]] != g[[j, i]] {
                            return Err(Error::Asymmetric { t, i, j });
                        }
                    }
                }
            }
            for i in 0..n {
                if g[[i, i]] != 0 {
                    log::warn!("dropping self-loop at t={t}, i={i}");
                    g[[i, i]] = 0;
                }
            }
        }
        Ok(GraphSequence { directed, n, graphs })
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of time points `T`.
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// All snapshots, 0-based.
    pub fn graphs(&self) -> &[Adjacency] {
        &self.graphs
    }

    /// Snapshot at 1-based time `t`.
    pub fn at(&self, t: usize) -> Result<&Adjacency> {
        if t == 0 || t > self.graphs.len() {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.graphs.len(),
            });
        }
        Ok(&self.graphs[t - 1])
    }

    /// New sequence made of the snapshots at the given 0-based positions.
    pub fn subsequence(&self, positions: &[usize]) -> GraphSequence {
        GraphSequence {
            directed: self.directed,
            n: self.n,
            graphs: positions.iter().map(|&p| self.graphs[p].clone()).collect(),
        }
    }

    /// Number of dyads that enter the likelihood: `n(n-1)` ordered pairs when
    /// directed, `n(n-1)/2` unordered pairs otherwise.
    pub fn dyad_count(&self) -> usize {
        dyad_count(self.n, self.directed)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.y.len() != file.t {
            return Err(Error::Parse(format!(
                "header says T={} but y has {} matrices",
                file.t,
                file.y.len()
            )));
        }
        let n = file.n;
        let mut graphs = Vec::with_capacity(file.t);
        for (idx, rows) in file.y.iter().enumerate() {
            let t = idx + 1;
            if rows.len() != n {
                return Err(Error::Shape {
                    t,
                    detail: format!("expected {n} rows, got {}", rows.len()),
                });
            }
            let mut g = Adjacency::zeros((n, n));
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::Shape {
                        t,
                        detail: format!("row {i} has {} entries, expected {n}", row.len()),
                    });
                }
                for (j, &v) in row.iter().enumerate() {
                    if v != 0 && v != 1 {
                        return Err(Error::NonBinary { t, i, j, value: v });
                    }
                    g[[i, j]] = v as u8;
                }
            }
            graphs.push(g);
        }
        GraphSequence::new(file.directed, n, graphs)
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            directed: self.directed,
            n: self.n,
            t: self.graphs.len(),
            y: self
                .graphs
                .iter()
                .map(|g| {
                    g.outer_iter()
                        .map(|row| row.iter().map(|&v| v as i64).collect())
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("graph file serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

pub(crate) fn dyad_count(n: usize, directed: bool) -> usize {
    let ordered = n * n.saturating_sub(1);
    if directed {
        ordered
    } else {
        ordered / 2
    }
}

/// Reads and validates a graph-sequence JSON file.
pub fn load_graph_sequence(path: &Path) -> Result<GraphSequence> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    GraphSequence::from_json_str(&text)
}

/// Edge, mutual-dyad and triangle counts of one snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkStatistics {
    pub edges: usize,
    pub mutual: usize,
    pub triangles: usize,
}

/// Summary statistics at 1-based time `t`. Triangles are counted on the
/// undirected support.
pub fn network_statistics(g: &GraphSequence, t: usize) -> Result<NetworkStatistics> {
    let y = g.at(t)?;
    let n = g.n();
    let mut edges = 0;
    let mut mutual = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (y[[i, j]], y[[j, i]]);
            if g.directed() {
                edges += (a + b) as usize;
            } else {
                edges += a as usize;
            }
            if a == 1 && b == 1 {
                mutual += 1;
            }
        }
    }
    let support = undirected_support(y);
    let mut triangles = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if !support[[i, j]] {
                continue;
            }
            for k in (j + 1)..n {
                if support[[i, k]] && support[[j, k]] {
                    triangles += 1;
                }
            }
        }
    }
    Ok(NetworkStatistics {
        edges,
        mutual,
        triangles,
    })
}

fn undirected_support(y: &Adjacency) -> Array2<bool> {
    let n = y.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| i != j && (y[[i, j]] == 1 || y[[j, i]] == 1))
}

/// Degree histogram over `0..n`. For directed graphs `degree` holds the
/// out-degree histogram and `in_degree` the in-degree one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeDistribution {
    pub degree: Vec<usize>,
    pub in_degree: Option<Vec<usize>>,
}

pub fn degree_distribution(g: &GraphSequence, t: usize) -> Result<DegreeDistribution> {
    Ok(degree_histogram(g.at(t)?, g.directed()))
}

pub fn degree_histogram(y: &Adjacency, directed: bool) -> DegreeDistribution {
    let n = y.nrows();
    let mut degree = vec![0; n.max(1)];
    for row in y.outer_iter() {
        let d: usize = row.iter().map(|&v| v as usize).sum();
        degree[d] += 1;
    }
    let in_degree = directed.then(|| {
        let mut hist = vec![0; n.max(1)];
        for col in y.columns() {
            let d: usize = col.iter().map(|&v| v as usize).sum();
            hist[d] += 1;
        }
        hist
    });
    DegreeDistribution { degree, in_degree }
}

/// Edgewise shared-partner histogram at 1-based time `t`, on the undirected
/// support. Entry `k` counts edges whose endpoints share exactly `k` neighbours.
pub fn esp_distribution(g: &GraphSequence, t: usize) -> Result<Vec<usize>> {
    Ok(esp_histogram(g.at(t)?))
}

pub fn esp_histogram(y: &Adjacency) -> Vec<usize> {
    let n = y.nrows();
    let support = undirected_support(y);
    let mut hist = vec![0; n.saturating_sub(1).max(1)];
    for i in 0..n {
        for j in (i + 1)..n {
            if !support[[i, j]] {
                continue;
            }
            let shared = (0..n)
                .filter(|&k| support[[i, k]] && support[[j, k]])
                .count();
            hist[shared] += 1;
        }
    }
    hist
}

/// Writes `t,edges,mutual,triangles,density`, one row per snapshot.
pub fn write_statistics_csv<W: Write>(g: &GraphSequence, mut out: W) -> Result<()> {
    let io = |e| Error::io("statistics csv", e);
    writeln!(out, "t,edges,mutual,triangles,density").map_err(io)?;
    let dyads = g.dyad_count().max(1) as f64;
    for t in 1..=g.len() {
        let s = network_statistics(g, t)?;
        writeln!(
            out,
            "{t},{},{},{},{}",
            s.edges,
            s.mutual,
            s.triangles,
            s.edges as f64 / dyads
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Sorted, strictly increasing change points. A point `c` marks the first
/// time of a new segment, so valid points satisfy `2 <= c <= T`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangePointSet {
    points: Vec<usize>,
}

impl ChangePointSet {
    pub fn new(points: Vec<usize>) -> Result<Self> {
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "change points must be strictly increasing: {points:?}"
            )));
        }
        if points.first().is_some_and(|&p| p < 2) {
            return Err(Error::InvalidConfig(format!(
                "change points must be >= 2: {points:?}"
            )));
        }
        Ok(ChangePointSet { points })
    }

    pub fn empty() -> Self {
        ChangePointSet::default()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks every point lies in `2..=t_len`.
    pub fn validate_for(&self, t_len: usize) -> Result<()> {
        match self.points.last() {
            Some(&p) if p > t_len => Err(Error::IndexOutOfRange {
                index: p,
                len: t_len,
            }),
            _ => Ok(()),
        }
    }
}

/// Contiguous, disjoint, non-empty intervals covering `1..=T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    intervals: Vec<RangeInclusive<usize>>,
}

impl Partition {
    pub fn new(t_len: usize, intervals: Vec<RangeInclusive<usize>>) -> Result<Self> {
        let mut next = 1;
        for r in &intervals {
            if *r.start() != next || r.end() < r.start() {
                return Err(Error::InvalidConfig(format!(
                    "intervals must be contiguous and non-empty, found {r:?} where start {next} was expected"
                )));
            }
            next = r.end() + 1;
        }
        if next != t_len + 1 {
            return Err(Error::InvalidConfig(format!(
                "intervals cover 1..{} but T={t_len}",
                next - 1
            )));
        }
        Ok(Partition { intervals })
    }

    /// Splits `1..=T` at the given change points.
    pub fn from_change_points(t_len: usize, cps: &ChangePointSet) -> Result<Self> {
        if t_len == 0 {
            return Err(Error::InvalidConfig("T must be positive".into()));
        }
        cps.validate_for(t_len)?;
        let mut intervals = Vec::with_capacity(cps.len() + 1);
        let mut start = 1;
        for &c in cps.points() {
            intervals.push(start..=c - 1);
            start = c;
        }
        intervals.push(start..=t_len);
        Partition::new(t_len, intervals)
    }

    pub fn intervals(&self) -> &[RangeInclusive<usize>] {
        &self.intervals
    }

    pub fn t_len(&self) -> usize {
        *self.intervals.last().expect("non-empty partition").end()
    }

    /// Change points implied by the interval starts.
    pub fn change_points(&self) -> ChangePointSet {
        ChangePointSet {
            points: self.intervals.iter().skip(1).map(|r| *r.start()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(directed: bool, y: Adjacency) -> GraphSequence {
        let n = y.nrows();
        GraphSequence::new(directed, n, vec![y]).unwrap()
    }

    fn complete(n: usize) -> Adjacency {
        Array2::from_shape_fn((n, n), |(i, j)| (i != j) as u8)
    }

    #[test]
    fn loads_valid_file() {
        let text = r#"{"directed":true,"n":3,"T":2,"y":[[[0,1,0],[0,0,1],[1,0,0]],[[0,0,0],[0,0,0],[0,0,0]]]}"#;
        let g = GraphSequence::from_json_str(text).unwrap();
        assert_eq!((g.len(), g.n()), (2, 3));
        assert_eq!(GraphSequence::from_json_str(&g.to_json_string()).unwrap(), g);
    }

    #[test]
    fn rejects_non_binary() {
        let text = r#"{"directed":true,"n":3,"T":1,"y":[[[0,2,0],[0,0,1],[1,0,0]]]}"#;
        let err = GraphSequence::from_json_str(text).unwrap_err();
        assert!(matches!(err, Error::NonBinary { t: 1, i: 0, j: 1, value: 2 }));
        assert!(err.to_string().contains("non-binary entry"));
    }

    #[test]
    fn rejects_asymmetric_undirected() {
        let text = r#"{"directed":false,"n":2,"T":1,"y":[[[0,1],[0,0]]]}"#;
        let err = GraphSequence::from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("asymmetric"));
    }

    #[test]
    fn rejects_ragged_rows() {
        let text = r#"{"directed":true,"n":2,"T":1,"y":[[[0,1],[0]]]}"#;
        assert!(matches!(
            GraphSequence::from_json_str(text),
            Err(Error::Shape { t: 1, .. })
        ));
    }

    #[test]
    fn statistics_of_directed_cycle() {
        let y = array![[0, 1, 0], [0, 0, 1], [1, 0, 0]];
        let s = network_statistics(&single(true, y), 1).unwrap();
        assert_eq!((s.edges, s.mutual, s.triangles), (3, 0, 1));
    }

    #[test]
    fn statistics_of_empty_and_complete() {
        let s = network_statistics(&single(false, Array2::zeros((4, 4))), 1).unwrap();
        assert_eq!((s.edges, s.mutual, s.triangles), (0, 0, 0));
        let s = network_statistics(&single(false, complete(4)), 1).unwrap();
        assert_eq!((s.edges, s.mutual, s.triangles), (6, 6, 4));
    }

    #[test]
    fn statistics_index_out_of_range() {
        let g = single(false, complete(3));
        assert!(network_statistics(&g, 0).is_err());
        assert!(network_statistics(&g, 2).is_err());
        assert!(degree_distribution(&g, 2).is_err());
        assert!(esp_distribution(&g, 2).is_err());
    }

    #[test]
    fn degree_histograms() {
        let d = degree_distribution(&single(false, Array2::zeros((4, 4))), 1).unwrap();
        assert_eq!(d.degree, vec![4, 0, 0, 0]);
        let d = degree_distribution(&single(false, complete(3)), 1).unwrap();
        assert_eq!(d.degree, vec![0, 0, 3]);
        let star = array![[0, 1, 1, 1], [1, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]];
        let d = degree_distribution(&single(false, star), 1).unwrap();
        assert_eq!(d.degree, vec![0, 3, 0, 1]);
        assert!(d.in_degree.is_none());

        let cycle = array![[0, 1, 0], [0, 0, 1], [1, 0, 0]];
        let d = degree_distribution(&single(true, cycle), 1).unwrap();
        assert_eq!(d.degree, vec![0, 3, 0]);
        assert_eq!(d.in_degree, Some(vec![0, 3, 0]));
    }

    #[test]
    fn esp_histograms() {
        assert_eq!(esp_distribution(&single(false, complete(3)), 1).unwrap(), vec![0, 3]);
        let c4 = array![[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]];
        assert_eq!(esp_distribution(&single(false, c4), 1).unwrap(), vec![4, 0, 0]);
        assert_eq!(esp_distribution(&single(false, complete(4)), 1).unwrap(), vec![0, 0, 6]);
    }

    #[test]
    fn diagonal_is_cleared() {
        let g = single(true, array![[1, 1], [0, 1]]);
        assert_eq!(g.at(1).unwrap(), &array![[0, 1], [0, 0]]);
    }

    #[test]
    fn partition_from_points() {
        let p = Partition::from_change_points(100, &ChangePointSet::new(vec![26, 51, 76]).unwrap())
            .unwrap();
        assert_eq!(p.intervals(), &[1..=25, 26..=50, 51..=75, 76..=100]);
        assert_eq!(p.change_points().points(), &[26, 51, 76]);
        let p = Partition::from_change_points(10, &ChangePointSet::empty()).unwrap();
        assert_eq!(p.intervals(), &[1..=10]);
        assert!(Partition::new(4, vec![1..=2, 4..=4]).is_err());
        assert!(ChangePointSet::new(vec![5, 5]).is_err());
        assert!(ChangePointSet::new(vec![1]).is_err());
    }

    #[test]
    fn statistics_csv_has_row_per_time() {
        let g = GraphSequence::new(false, 3, vec![complete(3), Array2::zeros((3, 3))]).unwrap();
        let mut buf = Vec::new();
        write_statistics_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,edges,mutual,triangles,density\n1,3,3,1,1\n2,0,0,0,0\n");
    }
}
