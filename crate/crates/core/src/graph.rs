//! Weighted directed communication graphs, their Laplacians, the root
//! strongly connected components ("basic bi-components") and a few standard
//! generators.
//!
//! Weight `a_ij > 0` means agent `i` receives information from agent `j`.
//! Node indices are 0-based in the API and 1-based in the edge-list format.

use crate::linalg::{self, LinalgError, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("weight a[{i}][{j}] = {weight} must be finite and nonnegative")]
    InvalidWeight { i: usize, j: usize, weight: f64 },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("node {node} out of range for a graph with {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("Vicsek generation must be 1, 2 or 3, got {0}")]
    UnsupportedGeneration(u32),
    #[error("invalid circulant parameters: {0}")]
    InvalidOffsets(String),
    #[error("component size {0} is below the minimum of 2")]
    ComponentTooSmall(usize),
    #[error("graph is not strongly connected ({components} components)")]
    NotStronglyConnected { components: usize },
    #[error("left null vector has a non-positive entry ({value:e})")]
    NonPositiveWeight { value: f64 },
    #[error("matrix is not a Laplacian: {0}")]
    NotLaplacian(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    adjacency: Matrix,
}

/// Serialized form: node count plus one `(i, j, weight)` record per nonzero
/// `a_ij`, with 1-based indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeList {
    pub nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianDecomposition {
    pub laplacian: Matrix,
    /// `node_permutation[k]` is the original node placed at position `k`:
    /// non-basic nodes first, then each basic component in turn.
    pub node_permutation: Vec<usize>,
    pub basic_components: Vec<Vec<usize>>,
    pub nonbasic_block_size: usize,
}

impl LaplacianDecomposition {
    /// `L` with rows and columns reordered by `node_permutation`.
    pub fn permuted_laplacian(&self) -> Matrix {
        let p = &self.node_permutation;
        Matrix::from_fn(p.len(), p.len(), |r, c| self.laplacian[(p[r], p[c])])
    }

    pub fn nonbasic_nodes(&self) -> &[usize] {
        &self.node_permutation[..self.nonbasic_block_size]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HWeights {
    pub h: Vec<f64>,
    pub gamma: f64,
}

impl DirectedGraph {
    pub fn empty(nodes: usize) -> Self {
        Self {
            adjacency: Matrix::zeros(nodes, nodes),
        }
    }

    pub fn from_adjacency(adjacency: Matrix) -> Result<Self> {
        let n = linalg::ensure_square(&adjacency)?;
        for i in 0..n {
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !(w.is_finite() && w >= 0.0) {
                    return Err(GraphError::InvalidWeight { i, j, weight: w });
                }
            }
            if adjacency[(i, i)] != 0.0 {
                return Err(GraphError::SelfLoop(i));
            }
        }
        Ok(Self { adjacency })
    }

    /// Recovers the adjacency from the off-diagonal entries of a Laplacian.
    pub fn from_laplacian(l: &Matrix) -> Result<Self> {
        let n = linalg::ensure_square(l)?;
        for i in 0..n {
            let row_sum: f64 = l.row(i).iter().sum();
            let scale = l.row(i).iter().fold(1.0f64, |a, v| a.max(v.abs()));
            if row_sum.abs() > 1e-12 * scale {
                return Err(GraphError::NotLaplacian(format!("row {i} sums to {row_sum:e}")));
            }
        }
        let adjacency = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { -l[(i, j)] });
        Self::from_adjacency(adjacency)
    }

    pub fn from_edge_list(list: &EdgeList) -> Result<Self> {
        let mut g = Self::empty(list.nodes);
        for &(i, j, w) in &list.edges {
            for node in [i, j] {
                if node == 0 || node > list.nodes {
                    return Err(GraphError::NodeOutOfRange {
                        node,
                        nodes: list.nodes,
                    });
                }
            }
            g.set_weight(i - 1, j - 1, w)?;
        }
        Ok(g)
    }

    pub fn to_edge_list(&self) -> EdgeList {
        EdgeList {
            nodes: self.node_count(),
            edges: self.edges().map(|(i, j, w)| (i + 1, j + 1, w)).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// Sets `a_ij`, i.e. node `i` listens to node `j`.
    pub fn set_weight(&mut self, i: usize, j: usize, weight: f64) -> Result<()> {
        let n = self.node_count();
        for node in [i, j] {
            if node >= n {
                return Err(GraphError::NodeOutOfRange { node, nodes: n });
            }
        }
        if i == j {
            return Err(GraphError::SelfLoop(i));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(GraphError::InvalidWeight { i, j, weight });
        }
        self.adjacency[(i, j)] = weight;
        Ok(())
    }

    /// Nonzero entries `(i, j, a_ij)` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.node_count();
        (0..n)
            .flat_map(move |i| (0..n).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let w = self.adjacency[(i, j)];
                (w != 0.0).then_some((i, j, w))
            })
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency == self.adjacency.transpose()
    }

    pub fn laplacian(&self) -> Matrix {
        let n = self.node_count();
        let mut l = -self.adjacency.clone();
        for i in 0..n {
            l[(i, i)] = self.adjacency.row(i).iter().sum();
        }
        l
    }

    /// Subgraph induced by `nodes`, in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> DirectedGraph {
        let adjacency = Matrix::from_fn(nodes.len(), nodes.len(), |r, c| {
            self.adjacency[(nodes[r], nodes[c])]
        });
        DirectedGraph { adjacency }
    }

    /// Strongly connected components (Tarjan), each sorted ascending, listed
    /// by smallest member.
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let succ: Vec<Vec<usize>> = (0..n)
            .map(|j| (0..n).filter(|&i| self.adjacency[(i, j)] != 0.0).collect())
            .collect();
        let mut index = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut on_stack = vec![false; n];
        let mut stack = Vec::new();
        let mut next_index = 0;
        let mut comps = Vec::new();
        for root in 0..n {
            if index[root] != usize::MAX {
                continue;
            }
            let mut call: Vec<(usize, usize)> = vec![(root, 0)];
            index[root] = next_index;
            low[root] = next_index;
            next_index += 1;
            stack.push(root);
            on_stack[root] = true;
            while let Some(&mut (v, ref mut pos)) = call.last_mut() {
                if *pos < succ[v].len() {
                    let w = succ[v][*pos];
                    *pos += 1;
                    if index[w] == usize::MAX {
                        index[w] = next_index;
                        low[w] = next_index;
                        next_index += 1;
                        stack.push(w);
                        on_stack[w] = true;
                        call.push((w, 0));
                    } else if on_stack[w] {
                        low[v] = low[v].min(index[w]);
                    }
                } else {
                    call.pop();
                    if let Some(&(parent, _)) = call.last() {
                        low[parent] = low[parent].min(low[v]);
                    }
                    if low[v] == index[v] {
                        let mut comp = Vec::new();
                        loop {
                            let w = stack.pop().expect("tarjan stack");
                            on_stack[w] = false;
                            comp.push(w);
                            if w == v {
                                break;
                            }
                        }
                        comp.sort_unstable();
                        comps.push(comp);
                    }
                }
            }
        }
        comps.sort_by_key(|c| c[0]);
        comps
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.strongly_connected_components().len() == 1
    }

    /// Components with no incoming edge from outside, plus the permutation
    /// that brings `L` into block upper-triangular form with the non-basic
    /// (grounded) block first.
    pub fn basic_bicomponents(&self) -> LaplacianDecomposition {
        let n = self.node_count();
        let comps = self.strongly_connected_components();
        let mut comp_of = vec![0usize; n];
        for (k, c) in comps.iter().enumerate() {
            for &v in c {
                comp_of[v] = k;
            }
        }
        let is_basic = |c: &Vec<usize>| {
            c.iter().all(|&i| {
                (0..n).all(|j| self.adjacency[(i, j)] == 0.0 || comp_of[j] == comp_of[i])
            })
        };
        let basic: Vec<Vec<usize>> = comps.iter().filter(|c| is_basic(c)).cloned().collect();
        let mut in_basic = vec![false; n];
        for c in &basic {
            for &v in c {
                in_basic[v] = true;
            }
        }
        let mut perm: Vec<usize> = (0..n).filter(|&v| !in_basic[v]).collect();
        let nonbasic_block_size = perm.len();
        for c in &basic {
            perm.extend_from_slice(c);
        }
        LaplacianDecomposition {
            laplacian: self.laplacian(),
            node_permutation: perm,
            basic_components: basic,
            nonbasic_block_size,
        }
    }

    /// True when a single root component reaches every node.
    pub fn has_directed_spanning_tree(&self) -> bool {
        self.basic_bicomponents().basic_components.len() == 1
    }
}

/// Disjoint union; node blocks are laid out in argument order.
pub fn disjoint_union(parts: &[DirectedGraph]) -> DirectedGraph {
    let n: usize = parts.iter().map(|g| g.node_count()).sum();
    let mut adjacency = Matrix::zeros(n, n);
    let mut off = 0;
    for g in parts {
        let k = g.node_count();
        adjacency.view_mut((off, off), (k, k)).copy_from(&g.adjacency);
        off += k;
    }
    DirectedGraph { adjacency }
}

/// Undirected edges of the Vicsek tree, the center node and the four
/// extremal nodes (in left/up/right/down order).
fn vicsek_tree(generation: u32) -> (usize, Vec<(usize, usize)>, [usize; 4]) {
    if generation == 1 {
        return (5, (1..5).map(|k| (0, k)).collect(), [1, 2, 3, 4]);
    }
    let (n, edges, ext) = vicsek_tree(generation - 1);
    // From the third generation on, arms share their inner extremal node
    // with the central block instead of hanging off an extra edge; this
    // gives the node counts 5, 25, 121.
    let merge = generation >= 3;
    let mut nodes = n;
    let mut all_edges = edges.clone();
    let mut new_ext = [0usize; 4];
    for k in 0..4 {
        let opposite = (k + 2) % 4;
        let mut map = vec![0usize; n];
        let mut fresh = 0;
        for (v, slot) in map.iter_mut().enumerate() {
            if merge && v == ext[opposite] {
                *slot = ext[k];
            } else {
                *slot = nodes + fresh;
                fresh += 1;
            }
        }
        nodes += fresh;
        all_edges.extend(edges.iter().map(|&(a, b)| (map[a], map[b])));
        if !merge {
            all_edges.push((ext[k], map[ext[opposite]]));
        }
        new_ext[k] = map[ext[k]];
    }
    (nodes, all_edges, new_ext)
}

/// Vicsek fractal with 5, 25 or 121 nodes for generations 1, 2, 3. Node 0 is
/// the global center. The directed variant orients every edge away from the
/// center, so node 0 is the unique root.
pub fn generate_vicsek_fractal(generation: u32, directed: bool) -> Result<DirectedGraph> {
    if !(1..=3).contains(&generation) {
        return Err(GraphError::UnsupportedGeneration(generation));
    }
    let (n, edges, _) = vicsek_tree(generation);
    let mut g = DirectedGraph::empty(n);
    if !directed {
        for (a, b) in edges {
            g.adjacency[(a, b)] = 1.0;
            g.adjacency[(b, a)] = 1.0;
        }
        return Ok(g);
    }
    let mut neighbours = vec![Vec::new(); n];
    for (a, b) in edges {
        neighbours[a].push(b);
        neighbours[b].push(a);
    }
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in &neighbours[u] {
            if !seen[v] {
                seen[v] = true;
                g.adjacency[(v, u)] = 1.0;
                queue.push_back(v);
            }
        }
    }
    Ok(g)
}

/// Node `i` listens to `i + o (mod N)` for every offset `o`; the undirected
/// variant also adds the reverse links.
pub fn generate_circulant(n: usize, offsets: &[usize], directed: bool) -> Result<DirectedGraph> {
    if n < 3 {
        return Err(GraphError::InvalidOffsets(format!("need at least 3 nodes, got {n}")));
    }
    if offsets.is_empty() {
        return Err(GraphError::InvalidOffsets("no offsets given".into()));
    }
    if let Some(&o) = offsets.iter().find(|&&o| o == 0 || o >= n) {
        return Err(GraphError::InvalidOffsets(format!("offset {o} outside 1..{}", n - 1)));
    }
    let mut g = DirectedGraph::empty(n);
    for i in 0..n {
        for &o in offsets {
            let j = (i + o) % n;
            g.adjacency[(i, j)] = 1.0;
            if !directed {
                g.adjacency[(j, i)] = 1.0;
            }
        }
    }
    Ok(g)
}

/// Seeded random strongly connected digraph: a directed Hamiltonian cycle
/// through a random node order plus each remaining ordered pair with
/// probability `extra_edge_probability`. All weights are 1.
pub fn random_strongly_connected(
    n: usize,
    extra_edge_probability: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DirectedGraph> {
    if n < 2 {
        return Err(GraphError::ComponentTooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        let r = rng.random_range(0..=k);
        order.swap(k, r);
    }
    let mut g = DirectedGraph::empty(n);
    for k in 0..n {
        g.adjacency[(order[k], order[(k + 1) % n])] = 1.0;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && g.adjacency[(i, j)] == 0.0 && rng.random_bool(extra_edge_probability) {
                g.adjacency[(i, j)] = 1.0;
            }
        }
    }
    Ok(g)
}

/// Disjoint union of seeded random strongly connected digraphs of the given
/// sizes.
pub fn generate_disconnected_composite(sizes: &[usize], seed: u64) -> Result<DirectedGraph> {
    if let Some(&s) = sizes.iter().find(|&&s| s < 2) {
        return Err(GraphError::ComponentTooSmall(s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = sizes
        .iter()
        .map(|&s| random_strongly_connected(s, 0.2, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(disjoint_union(&parts))
}

/// Orthonormal basis of the complement of the all-ones vector.
pub fn ones_complement_basis(n: usize) -> Matrix {
    linalg::null_space(&Matrix::from_element(1, n, 1.0))
}

/// Positive weights `h` with `hᵀL = 0` and the largest `γ` such that
/// `HL + LᵀH ⪰ 2γ LᵀL` on the complement of the all-ones vector.
pub fn compute_h_weights(l: &Matrix) -> Result<HWeights> {
    let g = DirectedGraph::from_laplacian(l)?;
    let components = g.strongly_connected_components().len();
    if components != 1 {
        return Err(GraphError::NotStronglyConnected { components });
    }
    let n = l.nrows();
    if n == 1 {
        return Ok(HWeights {
            h: vec![1.0],
            gamma: f64::INFINITY,
        });
    }
    let kernel = linalg::null_space(&l.transpose());
    if kernel.ncols() != 1 {
        return Err(GraphError::NotLaplacian(format!(
            "left kernel has dimension {}",
            kernel.ncols()
        )));
    }
    let mut v: Vec<f64> = kernel.column(0).iter().copied().collect();
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(GraphError::NonPositiveWeight { value: min });
    }
    let h: Vec<f64> = v.iter().map(|x| x / min).collect();
    let hl = h_times(&h, l);
    let sym = &hl + hl.transpose();
    let ltl = l.transpose() * l;
    let u = ones_complement_basis(n);
    let m = u.transpose() * sym * &u;
    let k = linalg::symmetrize(&(u.transpose() * ltl * &u));
    let chol = k.cholesky().ok_or(LinalgError::Singular)?;
    let r_inv = chol
        .l()
        .try_inverse()
        .ok_or(LinalgError::Singular)?;
    let reduced = linalg::symmetrize(&(&r_inv * m * r_inv.transpose()));
    let lambda = reduced.symmetric_eigenvalues().min();
    Ok(HWeights {
        h,
        gamma: 0.5 * lambda,
    })
}

fn h_times(h: &[f64], l: &Matrix) -> Matrix {
    Matrix::from_fn(l.nrows(), l.ncols(), |i, j| h[i] * l[(i, j)])
}

/// Smallest eigenvalue of `HL + LᵀH − 2γLᵀL`; nonnegative when the weights
/// are valid.
pub fn h_weights_margin(l: &Matrix, weights: &HWeights) -> Result<f64> {
    let hl = h_times(&weights.h, l);
    let m = &hl + hl.transpose() - (l.transpose() * l) * (2.0 * weights.gamma);
    Ok(linalg::min_eigenvalue_sym(&linalg::symmetrize(&m))?)
}
