//! Sparse incidence structures for user-item hypergraphs.
//!
//! Items act as hyperedges over the users who interacted with them
//! (user-side view); the item-side view is the transpose construction.
//! Both views carry degree vectors and support the two halves of hypergraph
//! convolution (node→edge, edge→node, mean-normalized) plus the symmetric
//! normalized Laplacian `L = I − D_v^{−1/2} H D_e^{−1} Hᵀ D_v^{−1/2}`
//! that the wavelet operators are built from.

use crate::data::InteractionDataset;
use crate::diffcore::LinearMap;
use crate::{Error, Result};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

/// Compressed sparse row matrix over 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    num_rows: usize,
    num_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets. Entries are sorted row-major,
    /// duplicates summed, and explicit zeros dropped.
    pub fn from_triplets(
        num_rows: usize,
        num_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= num_rows || c >= num_cols {
                return Err(Error::ContractViolation(format!(
                    "triplet ({r},{c}) out of bounds for {num_rows}x{num_cols}"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_offsets = vec![0usize; num_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut iter = sorted.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
            }
        }
        for r in 0..num_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            num_rows,
            num_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            num_rows: n,
            num_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of one row as parallel (column, value) slices.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// `S · X` with `X` dense (num_cols × d).
    pub fn matmul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.num_cols, "sparse matmul shape");
        let d = x.ncols();
        let mut out = Array2::zeros((self.num_rows, d));
        for r in 0..self.num_rows {
            let (cols, vals) = self.row(r);
            let mut acc = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let src = x.row(c);
                for j in 0..d {
                    acc[j] += v * src[j];
                }
            }
        }
        out
    }

    /// `Sᵀ · X` with `X` dense (num_rows × d), computed without
    /// materializing the transpose.
    pub fn transpose_matmul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.num_rows, "sparse transpose matmul shape");
        let d = x.ncols();
        let mut out = Array2::zeros((self.num_cols, d));
        for r in 0..self.num_rows {
            let (cols, vals) = self.row(r);
            let src = x.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let mut dst = out.row_mut(c);
                for j in 0..d {
                    dst[j] += v * src[j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets: Vec<(usize, usize, f64)> = self
            .iter_triplets()
            .map(|(r, c, v)| (c, r, v))
            .collect();
        SparseMatrix::from_triplets(self.num_cols, self.num_rows, &triplets)
            .expect("transpose of a valid matrix is valid")
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_rows, self.num_cols));
        for (r, c, v) in self.iter_triplets() {
            out[(r, c)] = v;
        }
        out
    }

    pub fn iter_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Debug dump in coordinate text format: `row col value` lines, sorted
    /// row-major.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (r, c, v) in self.iter_triplets() {
            writeln!(w, "{r} {c} {v}")?;
        }
        Ok(())
    }

    /// CSR structure validity; used by tests and after hand construction.
    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.num_rows + 1 {
            return Err(Error::ContractViolation("row_offsets length".into()));
        }
        if self.row_offsets[0] != 0 || *self.row_offsets.last().unwrap() != self.values.len() {
            return Err(Error::ContractViolation("row_offsets bounds".into()));
        }
        for r in 0..self.num_rows {
            if self.row_offsets[r] > self.row_offsets[r + 1] {
                return Err(Error::ContractViolation("row_offsets monotonicity".into()));
            }
            let (cols, vals) = self.row(r);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::ContractViolation(format!(
                        "row {r}: columns not strictly increasing"
                    )));
                }
            }
            for (&c, &v) in cols.iter().zip(vals) {
                if c >= self.num_cols {
                    return Err(Error::ContractViolation(format!("row {r}: column {c} out of range")));
                }
                if v == 0.0 {
                    return Err(Error::ContractViolation(format!(
                        "row {r}: explicitly stored zero at column {c}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl LinearMap for SparseMatrix {
    fn out_rows(&self) -> usize {
        self.num_rows
    }
    fn in_rows(&self) -> usize {
        self.num_cols
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.matmul_dense(x)
    }
    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        self.transpose_matmul_dense(g)
    }
    fn describe(&self) -> String {
        format!("sparse {}x{} ({} nnz)", self.num_rows, self.num_cols, self.nnz())
    }
}

/// Which entity set forms the nodes of the view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    UserSide,
    ItemSide,
}

/// One side of the hypergraph: binary incidence plus degree vectors.
///
/// Entities with zero train-split degree are dropped at construction;
/// `node_ids` / `edge_ids` map compacted view indices back to global
/// entity ids.
#[derive(Debug, Clone)]
pub struct HypergraphView {
    pub h: Arc<SparseMatrix>,
    pub node_degrees: Vec<f64>,
    pub edge_degrees: Vec<f64>,
    pub side: Side,
    pub node_ids: Vec<usize>,
    pub edge_ids: Vec<usize>,
    pub dropped_nodes: usize,
    pub dropped_edges: usize,
}

impl HypergraphView {
    pub fn num_nodes(&self) -> usize {
        self.h.num_rows()
    }

    pub fn num_edges(&self) -> usize {
        self.h.num_cols()
    }
}

/// Build the user-side and item-side incidence views from the train split.
///
/// Only train interactions enter the incidence structure; users or items
/// with no train interactions are dropped from the corresponding axis and
/// counted in the returned views.
pub fn build_views(ds: &InteractionDataset) -> Result<(HypergraphView, HypergraphView)> {
    if ds.train.is_empty() {
        return Err(Error::ContractViolation(
            "cannot build hypergraph views from an empty train split".into(),
        ));
    }
    let user_side = build_side(ds, Side::UserSide)?;
    let item_side = build_side(ds, Side::ItemSide)?;
    Ok((user_side, item_side))
}

fn build_side(ds: &InteractionDataset, side: Side) -> Result<HypergraphView> {
    // Nodes × hyperedges in global coordinates.
    let (num_nodes, num_edges) = match side {
        Side::UserSide => (ds.num_users, ds.num_items),
        Side::ItemSide => (ds.num_items, ds.num_users),
    };
    let mut node_deg = vec![0usize; num_nodes];
    let mut edge_deg = vec![0usize; num_edges];
    for &(u, i) in &ds.train {
        let (n, e) = match side {
            Side::UserSide => (u, i),
            Side::ItemSide => (i, u),
        };
        node_deg[n] += 1;
        edge_deg[e] += 1;
    }

    let node_ids: Vec<usize> = (0..num_nodes).filter(|&n| node_deg[n] > 0).collect();
    let edge_ids: Vec<usize> = (0..num_edges).filter(|&e| edge_deg[e] > 0).collect();
    let dropped_nodes = num_nodes - node_ids.len();
    let dropped_edges = num_edges - edge_ids.len();
    if dropped_nodes > 0 || dropped_edges > 0 {
        log::warn!(
            "{side:?}: dropped {dropped_nodes} isolated node(s) and {dropped_edges} isolated hyperedge(s) out of {num_nodes} nodes / {num_edges} hyperedges"
        );
    }
    let mut node_pos = vec![usize::MAX; num_nodes];
    for (k, &n) in node_ids.iter().enumerate() {
        node_pos[n] = k;
    }
    let mut edge_pos = vec![usize::MAX; num_edges];
    for (k, &e) in edge_ids.iter().enumerate() {
        edge_pos[e] = k;
    }

    let triplets: Vec<(usize, usize, f64)> = ds
        .train
        .iter()
        .map(|&(u, i)| {
            let (n, e) = match side {
                Side::UserSide => (u, i),
                Side::ItemSide => (i, u),
            };
            (node_pos[n], edge_pos[e], 1.0)
        })
        .collect();
    let h = SparseMatrix::from_triplets(node_ids.len(), edge_ids.len(), &triplets)?;

    let node_degrees: Vec<f64> = node_ids.iter().map(|&n| node_deg[n] as f64).collect();
    let edge_degrees: Vec<f64> = edge_ids.iter().map(|&e| edge_deg[e] as f64).collect();
    Ok(HypergraphView {
        h: Arc::new(h),
        node_degrees,
        edge_degrees,
        side,
        node_ids,
        edge_ids,
        dropped_nodes,
        dropped_edges,
    })
}

fn check_rows(op: &'static str, expected: usize, x: &Array2<f64>) -> Result<()> {
    if x.nrows() != expected {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("{expected} rows"),
            got: format!("{}x{}", x.nrows(), x.ncols()),
        });
    }
    Ok(())
}

/// Node→hyperedge half of hypergraph convolution: `D_e⁻¹ · Hᵀ · X`
/// (degree-normalized mean of member-node features per hyperedge).
pub fn node_to_edge(view: &HypergraphView, x: &Array2<f64>) -> Result<Array2<f64>> {
    check_rows("node_to_edge", view.num_nodes(), x)?;
    let mut out = view.h.transpose_matmul_dense(x);
    for (e, mut row) in out.rows_mut().into_iter().enumerate() {
        let inv = 1.0 / view.edge_degrees[e];
        row.mapv_inplace(|v| v * inv);
    }
    Ok(out)
}

/// Hyperedge→node half of hypergraph convolution: `D_v⁻¹ · H · Xe`.
pub fn edge_to_node(view: &HypergraphView, xe: &Array2<f64>) -> Result<Array2<f64>> {
    check_rows("edge_to_node", view.num_edges(), xe)?;
    let mut out = view.h.matmul_dense(xe);
    for (n, mut row) in out.rows_mut().into_iter().enumerate() {
        let inv = 1.0 / view.node_degrees[n];
        row.mapv_inplace(|v| v * inv);
    }
    Ok(out)
}

/// Symmetric normalized hypergraph Laplacian
/// `L = I − D_v^{−1/2} H D_e^{−1} Hᵀ D_v^{−1/2}` with unit hyperedge weights.
///
/// Symmetric with spectrum in `[0, 2]`.
pub fn normalized_laplacian(view: &HypergraphView) -> Result<SparseMatrix> {
    let n = view.num_nodes();
    for (v, &d) in view.node_degrees.iter().enumerate() {
        if d < 1.0 {
            return Err(Error::ContractViolation(format!(
                "node {v} has degree {d} < 1 in a constructed view"
            )));
        }
    }
    for (e, &d) in view.edge_degrees.iter().enumerate() {
        if d < 1.0 {
            return Err(Error::ContractViolation(format!(
                "hyperedge {e} has degree {d} < 1 in a constructed view"
            )));
        }
    }

    // Accumulate A = D_v^{-1/2} H D_e^{-1} Hᵀ D_v^{-1/2} one hyperedge at a
    // time; hyperedge e contributes 1/(d_e √(d_u d_v)) to every member pair.
    let ht = view.h.transpose();
    let inv_sqrt_dv: Vec<f64> = view.node_degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for e in 0..view.num_edges() {
        let (members, _) = ht.row(e);
        let w = 1.0 / view.edge_degrees[e];
        for &a in members {
            for &b in members {
                *acc.entry((a, b)).or_insert(0.0) += w * inv_sqrt_dv[a] * inv_sqrt_dv[b];
            }
        }
    }
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(acc.len() + n);
    for ((a, b), v) in acc {
        triplets.push((a, b, -v));
    }
    for i in 0..n {
        triplets.push((i, i, 1.0));
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// `D_e⁻¹ Hᵀ` as a constant linear operator for the autodiff tape.
pub struct NodeToEdgeMap {
    h: Arc<SparseMatrix>,
    inv_edge_degrees: Vec<f64>,
}

/// `D_v⁻¹ H` as a constant linear operator for the autodiff tape.
pub struct EdgeToNodeMap {
    h: Arc<SparseMatrix>,
    inv_node_degrees: Vec<f64>,
}

impl HypergraphView {
    pub fn node_to_edge_map(&self) -> Arc<NodeToEdgeMap> {
        Arc::new(NodeToEdgeMap {
            h: Arc::clone(&self.h),
            inv_edge_degrees: self.edge_degrees.iter().map(|d| 1.0 / d).collect(),
        })
    }

    pub fn edge_to_node_map(&self) -> Arc<EdgeToNodeMap> {
        Arc::new(EdgeToNodeMap {
            h: Arc::clone(&self.h),
            inv_node_degrees: self.node_degrees.iter().map(|d| 1.0 / d).collect(),
        })
    }
}

fn scale_rows_by(mut x: Array2<f64>, scales: &[f64]) -> Array2<f64> {
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let s = scales[i];
        row.mapv_inplace(|v| v * s);
    }
    x
}

fn scale_rows_of_ref(x: &Array2<f64>, scales: &[f64]) -> Array2<f64> {
    scale_rows_by(x.clone(), scales)
}

impl LinearMap for NodeToEdgeMap {
    fn out_rows(&self) -> usize {
        self.h.num_cols()
    }
    fn in_rows(&self) -> usize {
        self.h.num_rows()
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        scale_rows_by(self.h.transpose_matmul_dense(x), &self.inv_edge_degrees)
    }
    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        // (D_e⁻¹ Hᵀ)ᵀ = H D_e⁻¹
        self.h.matmul_dense(&scale_rows_of_ref(g, &self.inv_edge_degrees))
    }
    fn describe(&self) -> String {
        "node→edge mean aggregation".into()
    }
}

impl LinearMap for EdgeToNodeMap {
    fn out_rows(&self) -> usize {
        self.h.num_rows()
    }
    fn in_rows(&self) -> usize {
        self.h.num_cols()
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        scale_rows_by(self.h.matmul_dense(x), &self.inv_node_degrees)
    }
    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        // (D_v⁻¹ H)ᵀ = Hᵀ D_v⁻¹
        self.h
            .transpose_matmul_dense(&scale_rows_of_ref(g, &self.inv_node_degrees))
    }
    fn describe(&self) -> String {
        "edge→node mean aggregation".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionDataset;
    use ndarray::array;

    fn toy_dataset(train: Vec<(usize, usize)>, num_users: usize, num_items: usize) -> InteractionDataset {
        InteractionDataset::from_splits(num_users, num_items, train, vec![], vec![], 0)
    }

    #[test]
    fn degrees_from_direct_count() {
        let ds = toy_dataset(vec![(0, 0), (0, 1), (1, 0)], 2, 2);
        let (user_side, item_side) = build_views(&ds).unwrap();
        assert_eq!(user_side.node_degrees, vec![2.0, 1.0]);
        assert_eq!(user_side.edge_degrees, vec![2.0, 1.0]);
        // Item side is the transpose construction.
        assert_eq!(item_side.h.to_dense(), user_side.h.to_dense().t().to_owned());
    }

    #[test]
    fn isolated_entities_dropped_and_recorded() {
        // Item 2 never appears in train.
        let ds = toy_dataset(vec![(0, 0), (1, 1)], 2, 3);
        let (user_side, item_side) = build_views(&ds).unwrap();
        assert_eq!(user_side.num_edges(), 2);
        assert_eq!(user_side.dropped_edges, 1);
        assert_eq!(user_side.edge_ids, vec![0, 1]);
        assert_eq!(item_side.num_nodes(), 2);
        assert_eq!(item_side.dropped_nodes, 1);
    }

    #[test]
    fn node_to_edge_hand_example() {
        // H = [[1,1],[1,0],[0,1]], X = [[1],[2],[3]] → edges = [[1.5],[2.0]]
        let ds = toy_dataset(vec![(0, 0), (0, 1), (1, 0), (2, 1)], 3, 2);
        let (user_side, _) = build_views(&ds).unwrap();
        let x = array![[1.0], [2.0], [3.0]];
        let e = node_to_edge(&user_side, &x).unwrap();
        assert_eq!(e, array![[1.5], [2.0]]);
    }

    #[test]
    fn edge_to_node_hand_example() {
        // H = [[1,1],[1,0]], Xe = [[2],[4]] → nodes = [[3],[2]]
        let ds = toy_dataset(vec![(0, 0), (0, 1), (1, 0)], 2, 2);
        let (user_side, _) = build_views(&ds).unwrap();
        let xe = array![[2.0], [4.0]];
        let n = edge_to_node(&user_side, &xe).unwrap();
        assert_eq!(n, array![[3.0], [2.0]]);
    }

    #[test]
    fn identity_incidence_passes_through() {
        let ds = toy_dataset(vec![(0, 0), (1, 1), (2, 2)], 3, 3);
        let (user_side, _) = build_views(&ds).unwrap();
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(node_to_edge(&user_side, &x).unwrap(), x);
        assert_eq!(edge_to_node(&user_side, &x).unwrap(), x);
    }

    #[test]
    fn single_hyperedge_means_all_nodes() {
        let ds = toy_dataset(vec![(0, 0), (1, 0), (2, 0)], 3, 1);
        let (user_side, _) = build_views(&ds).unwrap();
        let x = array![[3.0], [6.0], [9.0]];
        assert_eq!(node_to_edge(&user_side, &x).unwrap(), array![[6.0]]);
    }

    #[test]
    fn laplacian_two_node_single_edge() {
        let ds = toy_dataset(vec![(0, 0), (1, 0)], 2, 1);
        let (user_side, _) = build_views(&ds).unwrap();
        let l = normalized_laplacian(&user_side).unwrap();
        assert_eq!(l.to_dense(), array![[0.5, -0.5], [-0.5, 0.5]]);
    }

    #[test]
    fn laplacian_identity_incidence_is_zero() {
        let ds = toy_dataset(vec![(0, 0), (1, 1)], 2, 2);
        let (user_side, _) = build_views(&ds).unwrap();
        let l = normalized_laplacian(&user_side).unwrap();
        assert_eq!(l.to_dense(), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn laplacian_annihilates_sqrt_degree_vector() {
        let ds = toy_dataset(
            vec![(0, 0), (0, 1), (1, 0), (2, 1), (2, 2), (3, 2), (3, 0)],
            4,
            3,
        );
        let (user_side, _) = build_views(&ds).unwrap();
        let l = normalized_laplacian(&user_side).unwrap();
        let v = Array2::from_shape_fn((4, 1), |(i, _)| user_side.node_degrees[i].sqrt());
        let lv = l.matmul_dense(&v);
        for &x in lv.iter() {
            assert!(x.abs() < 1e-10, "residual {x}");
        }
    }

    #[test]
    fn constant_features_survive_round_trip() {
        // node→edge then edge→node on constant features is the identity.
        let ds = toy_dataset(vec![(0, 0), (0, 1), (1, 0), (2, 1)], 3, 2);
        let (user_side, _) = build_views(&ds).unwrap();
        let x = Array2::from_elem((3, 2), 5.0);
        let back = edge_to_node(&user_side, &node_to_edge(&user_side, &x).unwrap()).unwrap();
        for (&a, &b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_products_match_dense_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let rows = rng.random_range(1..12);
            let cols = rng.random_range(1..12);
            let mut triplets = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if rng.random::<f64>() < 0.4 {
                        triplets.push((r, c, rng.random_range(-2.0..2.0)));
                    }
                }
            }
            let s = SparseMatrix::from_triplets(rows, cols, &triplets).unwrap();
            s.validate().unwrap();
            let dense = s.to_dense();
            let x = Array2::from_shape_fn((cols, 3), |_| rng.random_range(-1.0..1.0));
            let g = Array2::from_shape_fn((rows, 3), |_| rng.random_range(-1.0..1.0));
            let prod = s.matmul_dense(&x);
            let oracle = dense.dot(&x);
            for (&a, &b) in prod.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            let tprod = s.transpose_matmul_dense(&g);
            let toracle = dense.t().dot(&g);
            for (&a, &b) in tprod.iter().zip(toracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coo_dump_is_sorted_row_major() {
        let s = SparseMatrix::from_triplets(2, 2, &[(1, 0, 3.0), (0, 1, 2.0)]).unwrap();
        let mut buf = Vec::new();
        s.write_coo(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0 1 2\n1 0 3\n");
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let ds = toy_dataset(vec![(0, 0)], 1, 1);
        let (user_side, _) = build_views(&ds).unwrap();
        let bad = Array2::zeros((5, 2));
        assert!(node_to_edge(&user_side, &bad).is_err());
        assert!(edge_to_node(&user_side, &bad).is_err());
    }
}
