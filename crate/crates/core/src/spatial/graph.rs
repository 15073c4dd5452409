use std::collections::BTreeSet;

use nalgebra::DMatrix;

use super::SpatialError;
use crate::Real;

/// Undirected neighbor graph on `n` lattice cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    connected: bool,
}

impl LatticeGraph {
    /// Validates the edge list: in-range ids, no self-loops, no duplicates
    /// (`(i, j)` and `(j, i)` count as the same edge).
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, SpatialError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (a, b) in edges {
            for node in [a, b] {
                if node >= n {
                    return Err(SpatialError::NodeOutOfRange { node, n });
                }
            }
            if a == b {
                return Err(SpatialError::SelfLoop { node: a });
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(SpatialError::DuplicateEdge { a: key.0, b: key.1 });
            }
            out.push(key);
        }
        let connected = is_connected(n, &out);
        Ok(Self {
            n,
            edges: out,
            connected,
        })
    }

    /// Rook-neighbor grid with `rows × cols` cells, numbered row-major.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        Self::new(rows * cols, edges).expect("grid edges are valid")
    }

    /// Path graph with edges `(i−1, i)` for `i = 1..n`.
    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path edges are valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn adjacency<S: Real>(&self) -> DMatrix<S> {
        let mut b = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            b[(i, j)] = S::one();
            b[(j, i)] = S::one();
        }
        b
    }
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut components = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}
