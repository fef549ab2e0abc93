//! Joint adjacency topologies: built-in edge lists, a plain-text parser, and
//! symmetric normalization with self-loops.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Physical joint connectivity: J nodes and an undirected edge list.
#[derive(Debug, Clone)]
pub struct AdjacencyTopology {
    pub joints: usize,
    pub edges: Vec<(usize, usize)>,
}

/// COCO-style 17-keypoint skeleton.
const COCO17_EDGES: &[(usize, usize)] = &[
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

/// NTU-style 25-joint skeleton.
const NTU25_EDGES: &[(usize, usize)] = &[
    (0, 1),
    (1, 20),
    (2, 20),
    (3, 2),
    (4, 20),
    (5, 4),
    (6, 5),
    (7, 6),
    (8, 20),
    (9, 8),
    (10, 9),
    (11, 10),
    (12, 0),
    (13, 12),
    (14, 13),
    (15, 14),
    (16, 0),
    (17, 16),
    (18, 17),
    (19, 18),
    (21, 22),
    (22, 7),
    (23, 24),
    (24, 11),
];

impl AdjacencyTopology {
    pub fn new(joints: usize, edges: Vec<(usize, usize)>) -> Result<Self, CoreError> {
        if joints == 0 {
            return Err(CoreError::invalid("topology needs at least one joint"));
        }
        for &(i, j) in &edges {
            if i == j {
                return Err(CoreError::invalid(format_args!("self edge {i}-{j}")));
            }
            if i >= joints || j >= joints {
                return Err(CoreError::invalid(format_args!(
                    "edge {i}-{j} out of range for {joints} joints"
                )));
            }
        }
        Ok(AdjacencyTopology { joints, edges })
    }

    pub fn coco17() -> Self {
        AdjacencyTopology::new(17, COCO17_EDGES.to_vec()).unwrap()
    }

    pub fn ntu25() -> Self {
        AdjacencyTopology::new(25, NTU25_EDGES.to_vec()).unwrap()
    }

    /// Simple chain topology for arbitrary joint counts.
    pub fn line(joints: usize) -> Self {
        AdjacencyTopology::new(joints, (1..joints).map(|j| (j - 1, j)).collect()).unwrap()
    }

    /// Parses the plain-text format: one `i j` edge per line, 0-based,
    /// `#` starts a comment. Joint count is the largest index plus one.
    pub fn parse(text: &str) -> Result<Self, CoreError> {
        let mut edges = Vec::new();
        let mut max_joint = 0usize;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize, CoreError> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                    CoreError::invalid(format_args!(
                        "topology line {}: expected `i j`, got {raw:?}",
                        lineno + 1
                    ))
                })
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(CoreError::invalid(format_args!(
                    "topology line {}: trailing tokens in {raw:?}",
                    lineno + 1
                )));
            }
            max_joint = max_joint.max(i).max(j);
            edges.push((i, j));
        }
        if edges.is_empty() {
            return Err(CoreError::invalid("topology file contains no edges"));
        }
        AdjacencyTopology::new(max_joint + 1, edges)
    }

    /// Binary symmetric adjacency with zero diagonal.
    pub fn adjacency<T: Scalar>(&self) -> Tensor<T> {
        let j = self.joints;
        let mut a = Tensor::zeros(&[j, j]);
        for &(u, v) in &self.edges {
            a.set(&[u, v], T::one());
            a.set(&[v, u], T::one());
        }
        a
    }

    /// A + I, the initial value of the learnable adjacency.
    pub fn adjacency_with_self_loops<T: Scalar>(&self) -> Tensor<T> {
        let mut a = self.adjacency::<T>();
        for d in 0..self.joints {
            a.set(&[d, d], T::one());
        }
        a
    }

    /// Â = D^(−1/2)(A+I)D^(−1/2).
    pub fn normalized<T: Scalar>(&self) -> Tensor<T> {
        normalize_adjacency(&self.adjacency::<T>()).expect("constructed adjacency is symmetric")
    }
}

/// Symmetric normalization with self-loops: Â = D^(−1/2)(A+I)D^(−1/2).
/// `a` must be a square, symmetric, binary matrix with zero diagonal.
pub fn normalize_adjacency<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
    let dims = a.dims();
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(CoreError::invalid(format_args!(
            "adjacency must be square, got {dims:?}"
        )));
    }
    let j = dims[0];
    for u in 0..j {
        if a.at(&[u, u]) != T::zero() {
            return Err(CoreError::invalid("adjacency diagonal must be zero"));
        }
        for v in 0..j {
            let x = a.at(&[u, v]);
            if x != a.at(&[v, u]) {
                return Err(CoreError::invalid("adjacency must be symmetric"));
            }
            if x != T::zero() && x != T::one() {
                return Err(CoreError::invalid("adjacency must be binary"));
            }
        }
    }
    // degrees of A + I (self-loop guarantees degree >= 1)
    let mut inv_sqrt_deg = Vec::with_capacity(j);
    for u in 0..j {
        let mut d = T::one();
        for v in 0..j {
            d += a.at(&[u, v]);
        }
        inv_sqrt_deg.push(d.sqrt().recip());
    }
    let mut out = Tensor::zeros(&[j, j]);
    for u in 0..j {
        for v in 0..j {
            let x = if u == v {
                T::one()
            } else {
                a.at(&[u, v])
            };
            out.set(&[u, v], x * inv_sqrt_deg[u] * inv_sqrt_deg[v]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_single_edge_hand_case() {
        // A+I = [[1,1],[1,1]], degrees (2,2) → Â all 0.5
        let topo = AdjacencyTopology::new(2, alloc::vec![(0, 1)]).unwrap();
        let a_hat = topo.normalized::<f64>();
        for &v in a_hat.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn edgeless_graph_normalizes_to_identity() {
        let topo = AdjacencyTopology::new(3, alloc::vec![]).unwrap();
        let a_hat = topo.normalized::<f64>();
        for u in 0..3 {
            for v in 0..3 {
                let expect = if u == v { 1.0 } else { 0.0 };
                assert_eq!(a_hat.at(&[u, v]), expect);
            }
        }
    }

    #[test]
    fn path_graph_matches_scalar_oracle() {
        let j = 5;
        let topo = AdjacencyTopology::line(j);
        let a_hat = topo.normalized::<f64>();
        // independent oracle: explicit D^(-1/2)(A+I)D^(-1/2) with scalar loops
        let mut a_plus_i = alloc::vec![alloc::vec![0.0f64; j]; j];
        for u in 0..j {
            a_plus_i[u][u] = 1.0;
        }
        for v in 1..j {
            a_plus_i[v - 1][v] = 1.0;
            a_plus_i[v][v - 1] = 1.0;
        }
        let deg: alloc::vec::Vec<f64> =
            (0..j).map(|u| a_plus_i[u].iter().sum::<f64>()).collect();
        for u in 0..j {
            for v in 0..j {
                let expect = a_plus_i[u][v] / (deg[u].sqrt() * deg[v].sqrt());
                assert!((a_hat.at(&[u, v]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_symmetric_rejected() {
        let mut a = Tensor::<f64>::zeros(&[2, 2]);
        a.set(&[0, 1], 1.0);
        assert!(normalize_adjacency(&a).is_err());
    }

    #[test]
    fn parse_edge_list_with_comments() {
        let text = "# skeleton\n0 1\n1 2  # spine\n\n2 3\n";
        let topo = AdjacencyTopology::parse(text).unwrap();
        assert_eq!(topo.joints, 4);
        assert_eq!(topo.edges.len(), 3);
        assert!(AdjacencyTopology::parse("0 0").is_err());
        assert!(AdjacencyTopology::parse("nonsense").is_err());
    }

    #[test]
    fn builtin_topologies_have_expected_sizes() {
        assert_eq!(AdjacencyTopology::coco17().joints, 17);
        assert_eq!(AdjacencyTopology::ntu25().joints, 25);
        assert_eq!(AdjacencyTopology::line(5).edges.len(), 4);
    }
}
