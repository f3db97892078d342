//! Contiguity matrices and spatially lagged shock regressors.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};

use crate::error::{Error, Result};
use crate::panel::{CountyId, PanelDataset};

/// Binary symmetric adjacency with an empty diagonal, stored as sorted
/// neighbor lists indexed like the panel's counties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    counties: Vec<CountyId>,
    neighbors: Vec<Vec<u32>>,
}

/// Sparse row weights derived from an [`AdjacencyMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    rows: Vec<Vec<(u32, f64)>>,
}

impl SpatialWeights {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }
}

impl AdjacencyMatrix {
    /// Build from index pairs. Pairs are symmetrized and deduplicated;
    /// self-pairs are skipped with a warning.
    pub fn from_edges(counties: Vec<CountyId>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = counties.len();
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) outside {n} counties")));
            }
            if a == b {
                log::warn!("adjacency: self-edge on `{}` ignored", counties[a]);
                continue;
            }
            sets[a].insert(b as u32);
            sets[b].insert(a as u32);
        }
        Ok(AdjacencyMatrix {
            counties,
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn counties(&self) -> &[CountyId] {
        &self.counties
    }

    pub fn n(&self) -> usize {
        self.counties.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&(j as u32)).is_ok()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// `W²`: 1 where two distinct counties share at least one neighbor.
    pub fn second_order(&self) -> AdjacencyMatrix {
        let n = self.n();
        let mut sets = vec![BTreeSet::new(); n];
        for (i, set) in sets.iter_mut().enumerate() {
            for &k in &self.neighbors[i] {
                for &j in &self.neighbors[k as usize] {
                    if j as usize != i {
                        set.insert(j);
                    }
                }
            }
        }
        AdjacencyMatrix {
            counties: self.counties.clone(),
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn weights(&self) -> SpatialWeights {
        SpatialWeights {
            rows: self
                .neighbors
                .iter()
                .map(|r| r.iter().map(|&j| (j, 1.0)).collect())
                .collect(),
        }
    }

    /// Rows scaled to sum to one; empty rows stay empty.
    pub fn row_normalized(&self) -> SpatialWeights {
        SpatialWeights {
            rows: self
                .neighbors
                .iter()
                .map(|r| {
                    let w = 1.0 / r.len() as f64;
                    r.iter().map(|&j| (j, w)).collect()
                })
                .collect(),
        }
    }

    /// Dense 0/1 copy, for tests and small diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let n = self.n();
        let mut m = vec![vec![0u8; n]; n];
        for (i, row) in self.neighbors.iter().enumerate() {
            for &j in row {
                m[i][j as usize] = 1;
            }
        }
        m
    }
}

/// Parse a `id_a,id_b` edge list over `counties`. Blank lines and text after
/// `#` are ignored; unknown ids are errors.
pub fn load_adjacency<R: Read>(source: R, counties: &[CountyId]) -> Result<AdjacencyMatrix> {
    let index: HashMap<&str, usize> = counties.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut edges = Vec::new();
    for (lineno, line) in BufReader::new(source).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<adjacency>", e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split(',').map(str::trim);
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => (a, b),
            _ => {
                return Err(Error::InvalidData(format!(
                    "adjacency line {}: expected `id_a,id_b`, got {body:?}",
                    lineno + 1
                )))
            }
        };
        let find = |id: &str| index.get(id).copied().ok_or_else(|| Error::UnknownCounty(id.to_string()));
        edges.push((find(a)?, find(b)?));
    }
    AdjacencyMatrix::from_edges(counties.to_vec(), &edges)
}

/// `(W·D)_{c,t} = Σ_j W_cj D_jt` for every panel cell; missing when any
/// neighbor's value is missing at `t`.
pub fn spatial_regressors(panel: &PanelDataset, w: &SpatialWeights, shock: &[f64]) -> Result<Vec<f64>> {
    let n = panel.n_counties();
    let t_len = panel.n_periods();
    if w.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "weights have {} rows for {n} counties",
            w.n()
        )));
    }
    if shock.len() != n * t_len {
        return Err(Error::DimensionMismatch("shock series does not match panel".into()));
    }
    let mut out = vec![0.0; n * t_len];
    for c in 0..n {
        let dst = &mut out[c * t_len..(c + 1) * t_len];
        for &(j, wt) in w.row(c) {
            let src = &shock[j as usize * t_len..(j as usize + 1) * t_len];
            for (o, &d) in dst.iter_mut().zip(src) {
                *o += wt * d;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Frequency;

    fn ids(n: usize) -> Vec<CountyId> {
        (0..n).map(|i| CountyId::new(format!("{}", (b'A' + i as u8) as char)).unwrap()).collect()
    }

    #[test]
    fn single_edge() {
        let w = load_adjacency("A,B\n".as_bytes(), &ids(3)).unwrap();
        assert_eq!(w.to_dense(), vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]]);
        let both = load_adjacency("# both directions\nA,B\nB,A\n\n".as_bytes(), &ids(3)).unwrap();
        assert_eq!(w, both);
    }

    #[test]
    fn unknown_id_and_self_edge() {
        assert!(matches!(
            load_adjacency("A,Z\n".as_bytes(), &ids(3)),
            Err(Error::UnknownCounty(id)) if id == "Z"
        ));
        let w = load_adjacency("A,A\nA,C # trailing\n".as_bytes(), &ids(3)).unwrap();
        assert_eq!(w.n_edges(), 1);
        assert!(!w.contains(0, 0));
        assert!(load_adjacency("A;B\n".as_bytes(), &ids(3)).is_err());
    }

    #[test]
    fn path_graph_second_order() {
        let w = AdjacencyMatrix::from_edges(ids(3), &[(0, 1), (1, 2)]).unwrap();
        let w2 = w.second_order();
        assert!(w2.contains(0, 2));
        assert!(!w2.contains(0, 1));
        assert!(!w2.contains(1, 1));
    }

    #[test]
    fn triangle_second_order_is_complete() {
        let w = AdjacencyMatrix::from_edges(ids(3), &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(w.second_order().to_dense(), vec![vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]);
    }

    #[test]
    fn isolated_county_stays_empty() {
        let w = AdjacencyMatrix::from_edges(ids(4), &[(0, 1), (1, 2)]).unwrap();
        let w2 = w.second_order();
        assert!(w2.neighbors(3).is_empty());
        assert!((0..4).all(|i| !w2.contains(i, 3)));
    }

    #[test]
    fn single_burning_county() {
        let p = PanelDataset::new(ids(3), Frequency::Monthly, 0, 4).unwrap();
        let w = AdjacencyMatrix::from_edges(ids(3), &[(0, 1)]).unwrap();
        let mut d = vec![0.0; 12];
        d[4..8].copy_from_slice(&[1.0, 0.0, 2.5, 7.0]);
        let s = spatial_regressors(&p, &w.weights(), &d).unwrap();
        assert_eq!(&s[0..4], &[1.0, 0.0, 2.5, 7.0]);
        assert!(s[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_neighbor_propagates() {
        let p = PanelDataset::new(ids(2), Frequency::Monthly, 0, 2).unwrap();
        let w = AdjacencyMatrix::from_edges(ids(2), &[(0, 1)]).unwrap();
        let s = spatial_regressors(&p, &w.weights(), &[1.0, 2.0, f64::NAN, 3.0]).unwrap();
        assert!(s[0].is_nan());
        assert_eq!(s[1], 3.0);
    }

    #[test]
    fn row_normalization() {
        let w = AdjacencyMatrix::from_edges(ids(3), &[(0, 1), (0, 2)]).unwrap();
        let r = w.row_normalized();
        assert_eq!(r.row(0), &[(1, 0.5), (2, 0.5)]);
        assert_eq!(r.row(1), &[(0, 1.0)]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = PanelDataset::new(ids(3), Frequency::Monthly, 0, 2).unwrap();
        let w = AdjacencyMatrix::from_edges(ids(2), &[(0, 1)]).unwrap();
        assert!(spatial_regressors(&p, &w.weights(), &[0.0; 6]).is_err());
    }
}
