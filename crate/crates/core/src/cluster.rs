//! Graph combinatorics and the loop cluster expansion.
//!
//! Graphs on `[n]` are edge bitmasks over the `n(n-1)/2` pairs in
//! lexicographic order, so everything up to `n = 7` fits in a `u32`.
//!
//! The expansion estimators use the Mayer factor `ζ = e^{-𝒱} - 1`. The
//! ensemble weight is `e^{-V}` with `V = ½Σ_{i,j}𝒱(ω_i, ω_j)`, in which every
//! unordered pair carries the full `𝒱`, so this is the factor for which
//! `X - X⁰ = log 𝒵`. The tree-bound check is purely combinatorial and takes
//! whatever `ζ ∈ [-1, 0]` it is given; [`zeta_matrix`] builds either form.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interactions::{boltzmann, v_ginibre_pair, InteractionParams, Mode};
use crate::loop_mc::{Ensemble, EnsembleSpec};
use crate::mc::{rng_for, Exec, McEstimate, Rng};
use crate::paths::{sample_free_walk, BridgeStats, Path};
use crate::quantum::permutations;

/// Largest vertex count enumerated.
pub const MAX_ENUM_N: usize = 7;
/// Largest Ursell function evaluated by graph enumeration.
pub const MAX_URSELL_N: usize = 6;
/// Largest truncation order of `X`.
pub const MAX_ORDER: usize = 4;
/// Largest `p` in [`gamma_via_expansion`].
pub const MAX_EXPANSION_P: usize = 2;

const X_TAG: u64 = 0x5845_0000;
const REMAINDER_TAG: u64 = 0x5852_0000;
const GAMMA_TAG: u64 = 0x4745_0000;
const INTEGRATION_TAG: u64 = 0x494c_0000;

fn n_edges(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of `{i, j}` in the lexicographic edge list of `K_n`.
pub fn edge_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// Edges of `K_n` in lexicographic order.
pub fn edge_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return invalid("graphs need at least one vertex");
    }
    if n > MAX_ENUM_N {
        return Err(Error::Budget(format!("n = {n} exceeds the enumeration limit {MAX_ENUM_N}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    mask: u32,
}

impl Graph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        check_n(n)?;
        let mut mask = 0u32;
        for &(i, j) in edges {
            if i == j || i >= n || j >= n {
                return invalid(format!("bad edge ({i}, {j}) on {n} vertices"));
            }
            let bit = 1u32 << edge_index(n, i, j);
            if mask & bit != 0 {
                return invalid(format!("duplicate edge ({i}, {j})"));
            }
            mask |= bit;
        }
        Ok(Self { n, mask })
    }

    pub fn from_mask(n: usize, mask: u32) -> Result<Self> {
        check_n(n)?;
        if n_edges(n) < 32 && mask >> n_edges(n) != 0 {
            return invalid("mask has bits beyond the edge count");
        }
        Ok(Self { n, mask })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::from_mask(n, 0)
    }

    pub fn complete(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(Self { n, mask: ((1u64 << n_edges(n)) - 1) as u32 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i != j && i < self.n && j < self.n && self.mask & (1 << edge_index(self.n, i, j)) != 0
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        edge_pairs(self.n).into_iter().enumerate().filter(|(k, _)| self.mask & (1 << k) != 0).map(|(_, e)| e).collect()
    }

    pub fn is_subgraph_of(&self, other: &Graph) -> bool {
        self.n == other.n && self.mask & !other.mask == 0
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for (i, j) in self.edges() {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    fn adjacency(&self) -> Vec<u32> {
        let mut adj = vec![0u32; self.n];
        for (i, j) in self.edges() {
            adj[i] |= 1 << j;
            adj[j] |= 1 << i;
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let all = (1u32 << self.n) - 1;
        let mut seen = 1u32;
        let mut frontier = 1u32;
        while frontier != 0 {
            let mut next = 0;
            for v in 0..self.n {
                if frontier & (1 << v) != 0 {
                    next |= adj[v];
                }
            }
            frontier = next & !seen;
            seen |= next;
        }
        seen == all
    }
}

/// A spanning tree of `[n]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tree(Graph);

impl Tree {
    pub fn new(g: Graph) -> Result<Self> {
        if g.len() + 1 != g.n || !g.is_connected() {
            return invalid("not a spanning tree");
        }
        Ok(Self(g))
    }

    pub fn graph(&self) -> &Graph {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.0.degrees()
    }

    /// Direct descendants of every vertex when the tree hangs from `root`.
    pub fn children(&self, root: usize) -> Vec<Vec<usize>> {
        let adj = self.0.adjacency();
        let mut children = vec![Vec::new(); self.n()];
        let mut stack = vec![(root, usize::MAX)];
        while let Some((v, parent)) = stack.pop() {
            for w in 0..self.n() {
                if adj[v] & (1 << w) != 0 && w != parent {
                    children[v].push(w);
                    stack.push((w, v));
                }
            }
        }
        children
    }

    /// Edge indices on the tree path between `a` and `b`.
    pub fn path_edges(&self, a: usize, b: usize) -> Vec<usize> {
        let n = self.n();
        let adj = self.0.adjacency();
        let mut parent = vec![usize::MAX; n];
        parent[a] = a;
        let mut stack = vec![a];
        while let Some(v) = stack.pop() {
            for w in 0..n {
                if adj[v] & (1 << w) != 0 && parent[w] == usize::MAX {
                    parent[w] = v;
                    stack.push(w);
                }
            }
        }
        let mut out = Vec::new();
        let mut v = b;
        while v != a {
            out.push(edge_index(n, v, parent[v]));
            v = parent[v];
        }
        out
    }
}

/// `Σ_{w ≠ r}(1 - |Q(w)|)` and `|Q(r)|` for direct descendants `Q`.
pub fn descendants_identity(tree: &Tree, root: usize) -> (i64, i64) {
    let ch = tree.children(root);
    let lhs = (0..tree.n()).filter(|&w| w != root).map(|w| 1 - ch[w].len() as i64).sum();
    (lhs, ch[root].len() as i64)
}

fn connected_cache(n: usize) -> &'static [u32] {
    static CACHE: [OnceLock<Vec<u32>>; MAX_ENUM_N + 1] = [const { OnceLock::new() }; MAX_ENUM_N + 1];
    CACHE[n].get_or_init(|| {
        if n == 0 {
            return Vec::new();
        }
        (0..(1u64 << n_edges(n))).map(|m| m as u32).filter(|&m| Graph { n, mask: m }.is_connected()).collect()
    })
}

/// All connected graphs on `[n]`, by mask.
pub fn connected_graphs(n: usize) -> Result<Vec<Graph>> {
    check_n(n)?;
    Ok(connected_cache(n).iter().map(|&mask| Graph { n, mask }).collect())
}

/// All spanning trees on `[n]` from Prüfer sequences, sorted by mask.
pub fn trees(n: usize) -> Result<Vec<Tree>> {
    check_n(n)?;
    if n <= 2 {
        let g = if n == 1 { Graph::empty(1)? } else { Graph::new(2, &[(0, 1)])? };
        return Ok(vec![Tree(g)]);
    }
    let len = n - 2;
    let total = n.pow(len as u32);
    let mut out = Vec::with_capacity(total);
    let mut seq = vec![0usize; len];
    for code in 0..total {
        let mut c = code;
        for s in seq.iter_mut() {
            *s = c % n;
            c /= n;
        }
        out.push(Tree(prufer_decode(n, &seq)));
    }
    out.sort();
    Ok(out)
}

fn prufer_decode(n: usize, seq: &[usize]) -> Graph {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut mask = 0u32;
    for &s in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf exists");
        mask |= 1 << edge_index(n, leaf, s);
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    mask |= 1 << edge_index(n, rest[0], rest[1]);
    Graph { n, mask }
}

/// Trees whose vertex `i` has degree `δ_i`.
pub fn trees_with_degrees(delta: &[usize]) -> Result<Vec<Tree>> {
    Ok(trees(delta.len())?.into_iter().filter(|t| t.degrees() == delta).collect())
}

/// `(n-2)!/Π(δ_i - 1)!` for feasible degree sequences, `0` otherwise.
pub fn tree_count(delta: &[usize]) -> u64 {
    let n = delta.len();
    if n == 0 {
        return 0;
    }
    if n == 1 {
        return u64::from(delta[0] == 0);
    }
    if delta.iter().any(|&d| d == 0) || delta.iter().sum::<usize>() != 2 * (n - 1) {
        return 0;
    }
    // multinomial (n-2; δ_1-1, …, δ_n-1) as a product of binomials
    let mut total: u128 = 1;
    let mut placed = 0u128;
    for &d in delta {
        for k in 1..d as u128 {
            placed += 1;
            total = total * placed / k;
        }
    }
    u64::try_from(total).unwrap_or(u64::MAX)
}

/// Strict total order on the edges of `K_n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeOrder {
    n: usize,
    rank: Vec<usize>,
}

impl EdgeOrder {
    pub fn lexicographic(n: usize) -> Self {
        Self { n, rank: (0..n_edges(n)).collect() }
    }

    pub fn reverse_lexicographic(n: usize) -> Self {
        let m = n_edges(n);
        Self { n, rank: (0..m).map(|k| m - 1 - k).collect() }
    }

    /// Edges listed from smallest to largest.
    pub fn from_sequence(n: usize, seq: &[(usize, usize)]) -> Result<Self> {
        let g = Graph::new(n, seq)?;
        if g.len() != n_edges(n) {
            return invalid("an edge order must list every edge exactly once");
        }
        let mut rank = vec![0; n_edges(n)];
        for (r, &(i, j)) in seq.iter().enumerate() {
            rank[edge_index(n, i, j)] = r;
        }
        Ok(Self { n, rank })
    }

    pub fn shuffled(n: usize, seed: u64) -> Self {
        let mut seq = edge_pairs(n);
        seq.shuffle(&mut rng_for(seed, 0x4544_4745, 0));
        Self::from_sequence(n, &seq).expect("a permutation of all edges")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self, i: usize, j: usize) -> usize {
        self.rank[edge_index(self.n, i, j)]
    }

    fn sorted(&self, mask: u32) -> Vec<usize> {
        let mut e: Vec<usize> = (0..self.rank.len()).filter(|&k| mask & (1 << k) != 0).collect();
        e.sort_by_key(|&k| self.rank[k]);
        e
    }
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Kruskal's forest growth: repeatedly add the smallest edge of `g` that
/// closes no cycle.
pub fn kruskal(g: &Graph, order: &EdgeOrder) -> Result<Tree> {
    if g.n != order.n {
        return invalid("edge order is for a different vertex count");
    }
    if !g.is_connected() {
        return invalid("Kruskal's map needs a connected graph");
    }
    let pairs = edge_pairs(g.n);
    let mut parent: Vec<usize> = (0..g.n).collect();
    let mut mask = 0u32;
    for k in order.sorted(g.mask) {
        let (i, j) = pairs[k];
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            mask |= 1 << k;
        }
    }
    Ok(Tree(Graph { n: g.n, mask }))
}

/// `T` plus every edge ranked above all edges on its `T`-path.
pub fn kruskal_closure(t: &Tree, order: &EdgeOrder) -> Graph {
    let n = t.n();
    let mut mask = t.0.mask;
    for (k, (i, j)) in edge_pairs(n).into_iter().enumerate() {
        if mask & (1 << k) != 0 {
            continue;
        }
        let top = t.path_edges(i, j).into_iter().map(|e| order.rank[e]).max().unwrap_or(0);
        if order.rank[k] > top {
            mask |= 1 << k;
        }
    }
    Graph { n, mask }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub tree: Tree,
    /// Union of the preimage.
    pub m: Graph,
    pub preimage_size: usize,
    /// The preimage is exactly the interval `[T, M(T)]` and `M(T)` matches the closed form.
    pub pass: bool,
}

/// `M(T)` by exhaustive enumeration of the connected graphs, with the
/// interval property checked.
pub fn kruskal_preimage_bracket(t: &Tree, order: &EdgeOrder) -> Result<Bracket> {
    if t.n() > 5 {
        return Err(Error::Budget(format!("exhaustive bracket limited to n <= 5, got {}", t.n())));
    }
    let pre: Vec<Graph> =
        connected_graphs(t.n())?.into_iter().filter(|g| kruskal(g, order).map(|k| k == *t).unwrap_or(false)).collect();
    Ok(bracket_from(t, order, &pre))
}

fn bracket_from(t: &Tree, order: &EdgeOrder, pre: &[Graph]) -> Bracket {
    let m = pre.iter().fold(t.0, |acc, g| Graph { n: acc.n, mask: acc.mask | g.mask });
    let interval = 1usize << (m.len() - t.0.len());
    let inside = pre.iter().all(|g| t.0.is_subgraph_of(g) && g.is_subgraph_of(&m));
    let pass = inside && pre.len() == interval && m == kruskal_closure(t, order);
    Bracket { tree: *t, m, preimage_size: pre.len(), pass }
}

/// Brackets of every tree on `[n]`, grouping one Kruskal pass over all
/// connected graphs.
pub fn all_brackets(n: usize, order: &EdgeOrder) -> Result<Vec<Bracket>> {
    if n > 5 {
        return Err(Error::Budget(format!("exhaustive bracket limited to n <= 5, got {n}")));
    }
    let ts = trees(n)?;
    let mut groups: Vec<Vec<Graph>> = vec![Vec::new(); ts.len()];
    for g in connected_graphs(n)? {
        let k = kruskal(&g, order)?;
        let i = ts.binary_search(&k).map_err(|_| Error::Validation("Kruskal returned an unknown tree".into()))?;
        groups[i].push(g);
    }
    Ok(ts.iter().zip(&groups).map(|(t, pre)| bracket_from(t, order, pre)).collect())
}

fn check_square(zeta: &DMatrix<f64>) -> Result<usize> {
    let n = zeta.nrows();
    if zeta.ncols() != n {
        return invalid("ζ must be square");
    }
    if n == 0 {
        return invalid("ζ must have at least one row");
    }
    if n > MAX_URSELL_N {
        return Err(Error::Budget(format!("Ursell function limited to n <= {MAX_URSELL_N}, got {n}")));
    }
    Ok(n)
}

fn edge_values(zeta: &DMatrix<f64>) -> Vec<f64> {
    edge_pairs(zeta.nrows()).into_iter().map(|(i, j)| zeta[(i, j)]).collect()
}

fn mask_product(vals: &[f64], mut mask: u32) -> f64 {
    let mut p = 1.0;
    while mask != 0 {
        let k = mask.trailing_zeros() as usize;
        p *= vals[k];
        mask &= mask - 1;
    }
    p
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `φ = (1/n!) Σ_{G connected} Π_{ij∈G} ζ_ij`; only the upper triangle of `ζ` is read.
pub fn ursell(zeta: &DMatrix<f64>) -> Result<f64> {
    let n = check_square(zeta)?;
    let vals = edge_values(zeta);
    let s: f64 = connected_cache(n).iter().map(|&m| mask_product(&vals, m)).sum();
    Ok(s / factorial(n))
}

fn tree_masks(n: usize) -> &'static [u32] {
    static CACHE: OnceLock<Vec<Vec<u32>>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        (0..=MAX_URSELL_N)
            .map(|n| if n == 0 { Vec::new() } else { trees(n).expect("n in range").iter().map(|t| t.0.mask).collect() })
            .collect()
    });
    &all[n]
}

/// `(1/n!) Σ_T Π_{ij∈T} |ζ_ij|`.
pub fn tree_bound(zeta: &DMatrix<f64>) -> Result<f64> {
    let n = check_square(zeta)?;
    let vals: Vec<f64> = edge_values(zeta).iter().map(|z| z.abs()).collect();
    Ok(tree_masks(n).iter().map(|&m| mask_product(&vals, m)).sum::<f64>() / factorial(n))
}

/// `ζ_ij = e^{-s·𝒱_ij} - 1` off the diagonal (`+∞` allowed), zero on it.
pub fn zeta_matrix(vcal: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    let n = vcal.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { boltzmann(s * vcal[(i, j)]) - 1.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeBoundReport {
    pub n: usize,
    pub ursell: f64,
    pub tree_bound: f64,
    /// `(1/n!) Σ_T Π_T ζ · Π_{M(T)∖T} (1 + ζ)`.
    pub resummed: f64,
    pub identity_error: f64,
    pub holds: bool,
}

/// `|φ(ζ)| <= (1/n!)Σ_T Π|ζ|` together with the Kruskal resummation of `φ`.
///
/// With `ζ = e^{-𝒱/2} - 1` the resummation weight `Π_{M(T)∖T}(1+ζ)` is
/// `e^{-Σ_{M(T)∖T} 𝒱/2}`.
pub fn tree_bound_check(zeta: &DMatrix<f64>, order: &EdgeOrder) -> Result<TreeBoundReport> {
    let n = check_square(zeta)?;
    if order.n != n {
        return invalid("edge order is for a different vertex count");
    }
    for (i, j) in edge_pairs(n) {
        let z = zeta[(i, j)];
        if !(-1.0..=0.0).contains(&z) || (z - zeta[(j, i)]).abs() > 0.0 {
            return invalid(format!("ζ({i},{j}) = {z} must be symmetric and in [-1, 0]"));
        }
    }
    let u = ursell(zeta)?;
    let b = tree_bound(zeta)?;
    let vals = edge_values(zeta);
    let one_plus: Vec<f64> = vals.iter().map(|z| 1.0 + z).collect();
    let mut resummed = 0.0;
    for &m in tree_masks(n) {
        let t = Tree(Graph { n, mask: m });
        let extra = kruskal_closure(&t, order).mask & !m;
        resummed += mask_product(&vals, m) * mask_product(&one_plus, extra);
    }
    resummed /= factorial(n);
    Ok(TreeBoundReport {
        n,
        ursell: u,
        tree_bound: b,
        resummed,
        identity_error: (u - resummed).abs(),
        holds: u.abs() <= b * (1.0 + 1e-12) + 1e-300,
    })
}

/// All set partitions of `{0, …, p-1}`.
pub fn set_partitions(p: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new()];
    for k in 0..p {
        let mut next = Vec::new();
        for part in &out {
            for b in 0..part.len() {
                let mut q: Vec<Vec<usize>> = part.clone();
                q[b].push(k);
                next.push(q);
            }
            let mut q = part.clone();
            q.push(vec![k]);
            next.push(q);
        }
        out = next;
    }
    out
}

fn ginibre_params(spec: &EnsembleSpec) -> Result<&InteractionParams> {
    match &spec.ensemble {
        Ensemble::Ginibre(p) if p.mode != Mode::LargeMass => Ok(p),
        Ensemble::Ginibre(_) => Err(Error::Unsupported("the cluster expansion is set up for fixed κ, not large-mass mode".into())),
        Ensemble::Symanzik { .. } => Err(Error::Unsupported("the cluster expansion needs a Ginibre ensemble".into())),
    }
}

/// `𝒱(ω_i, ω_j)` for all pairs, self terms on the diagonal.
pub fn vcal_matrix(paths: &[Path], params: &InteractionParams) -> Result<DMatrix<f64>> {
    let n = paths.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = v_ginibre_pair(&paths[i], &paths[j], params)?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn self_weight(path: &Path, params: &InteractionParams) -> Result<f64> {
    Ok(boltzmann(0.5 * v_ginibre_pair(path, path, params)?))
}

#[derive(Clone, Copy, PartialEq)]
enum Draw {
    /// Ursell term of the order.
    Term,
    /// Ursell term minus the free value (order 1 only differs).
    Relative,
    /// Tree-bound majorant of the order.
    Bound,
}

/// One draw of the order-`n` integrand of `X(fixed)`: `n - p` loops from the
/// normalized free law, importance weight `Π e^{-𝒱_ii/2}`, and the factor
/// `m^{n-p} n!/(n-p)!`. Returns `(value, tree-bound majorant, weight)` on the
/// same loops.
fn order_draw(spec: &EnsembleSpec, params: &InteractionParams, fixed: &[Path], n: usize, draw: Draw, rng: &mut Rng) -> Result<(f64, f64, f64)> {
    let p = fixed.len();
    let k = n - p;
    let mut stats = BridgeStats::default();
    let mut paths: Vec<Path> = fixed.to_vec();
    let mut w = 1.0;
    for _ in 0..k {
        let l = spec.intensity.sample_loop(rng, &mut stats)?;
        w *= self_weight(&l, params)?;
        paths.push(l);
    }
    let zeta = zeta_matrix(&vcal_matrix(&paths, params)?, 1.0);
    let bound = tree_bound(&zeta)?;
    let core = match draw {
        Draw::Term => ursell(&zeta)?,
        Draw::Relative if n == 1 && p == 0 => ursell(&zeta)? - 1.0 / w,
        Draw::Relative => ursell(&zeta)?,
        Draw::Bound => bound,
    };
    let factor = spec.intensity.mass().powi(k as i32) * factorial(n) / factorial(k);
    Ok((factor * w * core, factor * w * bound, w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderTerm {
    pub order: usize,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    /// Effective sample size of the importance weights.
    pub ess: f64,
    /// Tree-bound majorant of this order's term.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XEstimate {
    pub p: usize,
    pub n_max: usize,
    pub terms: Vec<OrderTerm>,
    pub value: f64,
    pub std_error: f64,
    /// Tree-bound majorant of the order-`n_max + 1` term.
    pub remainder: f64,
    pub remainder_error: f64,
}

fn check_order(p: usize, n_max: usize) -> Result<()> {
    if n_max > MAX_ORDER {
        return Err(Error::Budget(format!("truncation order {n_max} exceeds {MAX_ORDER}")));
    }
    if n_max < p.max(1) {
        return invalid(format!("truncation order {n_max} is below the first order {}", p.max(1)));
    }
    if n_max + 1 > MAX_URSELL_N {
        return Err(Error::Budget("remainder order too large".into()));
    }
    Ok(())
}

fn x_estimate(spec: &EnsembleSpec, fixed: &[Path], n_max: usize, relative: bool, n_samples: u64, seed: u64, exec: &Exec) -> Result<XEstimate> {
    let params = ginibre_params(spec)?;
    let p = fixed.len();
    check_order(p, n_max)?;
    let draw = if relative { Draw::Relative } else { Draw::Term };
    let mut terms = Vec::new();
    for n in p.max(1)..=n_max {
        let acc = exec.run_vec(n_samples, seed, X_TAG + n as u64, 3, |rng, out| {
            let (v, b, w) = order_draw(spec, params, fixed, n, draw, rng)?;
            out[0] = v;
            out[1] = w;
            out[2] = b;
            Ok::<(), Error>(())
        })?;
        let (a, w) = (&acc[0], &acc[1]);
        let ess = if w.mean > 0.0 { w.n as f64 * w.mean * w.mean / (w.mean * w.mean + w.variance()) } else { 0.0 };
        if n > p && ess == 0.0 {
            return Err(Error::DegenerateRatio(format!("all importance weights vanish at order {n}")));
        }
        terms.push(OrderTerm { order: n, mean: a.mean, std_error: a.std_error(), n_samples: a.n, ess, bound: acc[2].mean });
    }
    let rem = exec.run(n_samples, seed, REMAINDER_TAG + n_max as u64 + 1, |rng| {
        order_draw(spec, params, fixed, n_max + 1, Draw::Bound, rng).map(|r| r.0)
    })?;
    Ok(XEstimate {
        p,
        n_max,
        value: terms.iter().map(|t| t.mean).sum(),
        std_error: terms.iter().map(|t| t.std_error * t.std_error).sum::<f64>().sqrt(),
        terms,
        remainder: rem.mean,
        remainder_error: rem.std_error(),
    })
}

/// Truncated `X(ω_1, …, ω_p)` with per-order terms; each order runs on its own stream.
pub fn estimate_x(spec: &EnsembleSpec, fixed: &[Path], n_max: usize, n_samples: u64, seed: u64, exec: &Exec) -> Result<XEstimate> {
    x_estimate(spec, fixed, n_max, false, n_samples, seed, exec)
}

/// Truncated `X - X⁰`, the expansion of `log 𝒵`.
pub fn log_z_expansion(spec: &EnsembleSpec, n_max: usize, n_samples: u64, seed: u64, exec: &Exec) -> Result<XEstimate> {
    x_estimate(spec, &[], n_max, true, n_samples, seed, exec)
}

/// Single-draw estimate of truncated `X(fixed)` and of its next-order bound.
fn x_single(spec: &EnsembleSpec, params: &InteractionParams, fixed: &[Path], n_max: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    let mut x = 0.0;
    for n in fixed.len().max(1)..=n_max {
        x += order_draw(spec, params, fixed, n, Draw::Term, rng)?.0;
    }
    let r = if n_max + 1 <= MAX_URSELL_N { order_draw(spec, params, fixed, n_max + 1, Draw::Bound, rng)?.0 } else { f64::NAN };
    Ok((x, r))
}

/// `Γ_p(x⃗, y⃗) = Σ_π ∫Π μ̂_{y_π(i), x_i} Σ_{partitions} Π_ξ X(ω_ξ)` with each `X`
/// truncated at `n_max` and estimated by an independent inner draw.
///
/// Metadata `remainder` is the tree-bound majorant of the next order,
/// propagated to first order through the partition products.
pub fn gamma_via_expansion(
    spec: &EnsembleSpec,
    x: &[usize],
    y: &[usize],
    n_max: usize,
    n_samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<McEstimate> {
    let params = ginibre_params(spec)?;
    let p = x.len();
    if p == 0 || p > MAX_EXPANSION_P || y.len() != p {
        return invalid(format!("need 1 <= p <= {MAX_EXPANSION_P} and |x| = |y|"));
    }
    if x.iter().chain(y).any(|&s| s >= spec.torus.volume()) {
        return invalid("point outside the torus");
    }
    check_order(p, n_max)?;
    let law = spec.open_law();
    let norm = law.normalization();
    let perms = permutations(p);
    let parts = set_partitions(p);
    let acc = exec.run_vec(n_samples, seed, GAMMA_TAG, 2, |rng, out| {
        for pi in &perms {
            let mut open = Vec::with_capacity(p);
            let mut w = norm.powi(p as i32);
            let mut hit = true;
            for i in 0..p {
                let path = sample_free_walk(&spec.torus, x[i], law.sample(rng), rng);
                hit &= path.end() == y[pi[i]];
                open.push(path);
            }
            if !hit {
                continue;
            }
            for path in &open {
                w *= self_weight(path, params)?;
            }
            for part in &parts {
                let mut blocks = Vec::with_capacity(part.len());
                for xi in part {
                    let sub: Vec<Path> = xi.iter().map(|&i| open[i].clone()).collect();
                    blocks.push(x_single(spec, params, &sub, n_max, rng)?);
                }
                out[0] += w * blocks.iter().map(|b| b.0).product::<f64>();
                for (k, b) in blocks.iter().enumerate() {
                    let others: f64 = blocks.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, o)| o.0.abs()).product();
                    out[1] += w * b.1 * others;
                }
            }
        }
        Ok::<(), Error>(())
    })?;
    Ok(McEstimate::from_welford(&acc[0], seed)
        .with_meta("remainder", acc[1].mean)
        .with_meta("remainder_error", acc[1].std_error())
        .with_meta("loop_mass", spec.intensity.mass()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiemannRow {
    pub kappa: f64,
    pub nu: f64,
    pub q: usize,
    pub lhs: f64,
    /// `q!/κ^{q+1}`.
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiemannReport {
    pub rows: Vec<RiemannRow>,
    /// Smallest constant covering every row.
    pub constant: f64,
    pub pass: bool,
}

/// Constant allowed by the Riemann-sum and integration checks.
pub const BOUND_CONSTANT: f64 = 3.0;

/// `ν Σ_{T ∈ νN*} e^{-κT} T^q`.
pub fn riemann_sum(kappa: f64, nu: f64, q: usize) -> f64 {
    let peak = (q as f64 / (kappa * nu)).ceil() as u64;
    let mut s = 0.0;
    let mut k = 1u64;
    loop {
        let t = k as f64 * nu;
        let term = (-kappa * t).exp() * t.powi(q as i32);
        s += term;
        if k > peak && term < 1e-18 * s {
            break;
        }
        k += 1;
    }
    nu * s
}

/// Sweep of `ν Σ e^{-κT}T^q` against `q!/κ^{q+1}` with `ν = f/κ` for each factor `f <= 1`.
pub fn riemann_sum_bound_check(kappas: &[f64], nu_factors: &[f64], q_max: usize) -> Result<RiemannReport> {
    let mut rows = Vec::new();
    for &kappa in kappas {
        if !(kappa > 0.0) {
            return invalid("κ must be positive");
        }
        for &f in nu_factors {
            if !(f > 0.0 && f <= 1.0) {
                return invalid(format!("ν = {f}/κ violates 0 < ν <= 1/κ"));
            }
            let nu = f / kappa;
            for q in 0..=q_max {
                let lhs = riemann_sum(kappa, nu, q);
                let rhs = factorial(q) / kappa.powi(q as i32 + 1);
                rows.push(RiemannRow { kappa, nu, q, lhs, rhs, ratio: lhs / rhs });
            }
        }
    }
    let constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(RiemannReport { rows, constant, pass: constant <= BOUND_CONSTANT })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationRow {
    /// Item `1..=4` of the integration lemma.
    pub item: u8,
    pub q: usize,
    pub lhs: McEstimate,
    pub rhs: f64,
    /// `(mean + 3σ)/rhs`; zero when both sides vanish.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationReport {
    pub rows: Vec<IntegrationRow>,
    /// Fitted constant per item.
    pub constants: [f64; 4],
    pub pass: bool,
}

/// Monte Carlo left-hand sides of the four single-vertex integration bounds
/// for the reference loop `omega`, against their right-hand sides:
///
/// 1. `∫μ(dω̃) T̃^q |ζ(ω, ω̃)|` vs `T(ω) q! ‖v‖₁ / κ^{q+1}`
/// 2. `ν Σ_y ∫μ̂_{y,x}(dω̃) T̃^q |ζ(ω, ω̃)|` vs `T(ω) (q+1)! ‖v‖₁ / κ^{q+2}`
/// 3. `∫μ(dω̃) T̃^q` vs `(q-1)! |Λ| / κ^q` (`q >= 1`)
/// 4. `ν Σ_y ∫μ̂_{y,x}(dω̃) T̃^q` vs `q! / κ^{q+1}`
pub fn integration_bound_check(
    spec: &EnsembleSpec,
    omega: &Path,
    x: usize,
    qs: &[usize],
    n_samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<IntegrationReport> {
    let params = ginibre_params(spec)?;
    if params.mode != Mode::MeanField {
        return Err(Error::Unsupported("integration bounds are stated for λ = ν²".into()));
    }
    if x >= spec.torus.volume() {
        return invalid("point outside the torus");
    }
    let nu = params.nu;
    let kappa = spec.kappa;
    let mass = spec.intensity.mass();
    let law = spec.open_law();
    let norm = law.normalization();
    let nq = qs.len();
    let acc = exec.run_vec(n_samples, seed, INTEGRATION_TAG, 4 * nq, |rng, out| {
        let mut stats = BridgeStats::default();
        let l = spec.intensity.sample_loop(rng, &mut stats)?;
        let wl = self_weight(&l, params)?;
        let zl = (boltzmann(v_ginibre_pair(omega, &l, params)?) - 1.0).abs();
        let o = sample_free_walk(&spec.torus, x, law.sample(rng), rng);
        let wo = self_weight(&o, params)?;
        let zo = (boltzmann(v_ginibre_pair(omega, &o, params)?) - 1.0).abs();
        for (k, &q) in qs.iter().enumerate() {
            let tl = l.duration().powi(q as i32);
            let to = o.duration().powi(q as i32);
            out[k] = mass * wl * tl * zl;
            out[nq + k] = nu * norm * wo * to * zo;
            out[2 * nq + k] = mass * wl * tl;
            out[3 * nq + k] = nu * norm * wo * to;
        }
        Ok::<(), Error>(())
    })?;
    let v1 = params.potential.l1_norm();
    let t = omega.duration();
    let vol = spec.torus.volume() as f64;
    let mut rows = Vec::new();
    let mut constants = [0.0f64; 4];
    for (k, &q) in qs.iter().enumerate() {
        let qf = factorial(q);
        let rhs = [
            t * qf * v1 / kappa.powi(q as i32 + 1),
            t * factorial(q + 1) * v1 / kappa.powi(q as i32 + 2),
            if q >= 1 { factorial(q - 1) * vol / kappa.powi(q as i32) } else { f64::NAN },
            qf / kappa.powi(q as i32 + 1),
        ];
        for item in 0..4 {
            if rhs[item].is_nan() {
                continue;
            }
            let lhs = McEstimate::from_welford(&acc[item * nq + k], seed);
            let upper = lhs.mean + 3.0 * lhs.std_error;
            let ratio = if upper <= 0.0 { 0.0 } else { upper / rhs[item] };
            constants[item] = constants[item].max(ratio);
            rows.push(IntegrationRow { item: item as u8 + 1, q, lhs, rhs: rhs[item], ratio });
        }
    }
    let pass = constants.iter().all(|c| c.is_finite() && *c <= BOUND_CONSTANT);
    Ok(IntegrationReport { rows, constants, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{periodize_potential, PotentialSpec};
    use crate::loop_mc::free_gas_gamma1;
    use crate::quantum;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn small_counts() {
        assert_eq!(trees(3).unwrap().len(), 3);
        assert_eq!(connected_graphs(3).unwrap().len(), 4);
        assert_eq!(trees(4).unwrap().len(), 16);
        let t1 = trees(1).unwrap();
        assert_eq!(t1.len(), 1);
        assert!(t1[0].graph().is_empty());
        let counts: Vec<usize> = (1..=6).map(|n| connected_graphs(n).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 1, 4, 38, 728, 26704]);
        assert!(matches!(connected_graphs(8), Err(Error::Budget(_))));
    }

    #[test]
    fn prufer_trees_match_enumeration() {
        for n in 1..=7 {
            let from_prufer = trees(n).unwrap();
            let mut from_graphs: Vec<Tree> =
                connected_graphs(n).unwrap().into_iter().filter(|g| g.len() + 1 == n).map(|g| Tree::new(g).unwrap()).collect();
            from_graphs.sort();
            assert_eq!(from_prufer, from_graphs, "n = {n}");
            assert_eq!(from_prufer.len(), n.pow(n.saturating_sub(2) as u32));
        }
    }

    fn compositions(n: usize, total: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return if total >= 1 { vec![vec![total]] } else { vec![] };
        }
        (1..total).flat_map(|d| compositions(n - 1, total - d).into_iter().map(move |mut c| {
            c.insert(0, d);
            c
        })).collect()
    }

    #[test]
    fn tree_counts() {
        assert_eq!(tree_count(&[2, 1, 1]), 1);
        assert_eq!(tree_count(&[0]), 1);
        assert_eq!(tree_count(&[1]), 0);
        assert_eq!(tree_count(&[3, 1, 1]), 0);
        for n in 2..=7 {
            let mut total = 0;
            for delta in compositions(n, 2 * (n - 1)) {
                let c = tree_count(&delta);
                if n <= 6 {
                    assert_eq!(c as usize, trees_with_degrees(&delta).unwrap().len(), "{delta:?}");
                }
                total += c;
            }
            assert_eq!(total, (n as u64).pow(n as u32 - 2));
        }
        assert_eq!(trees_with_degrees(&[0]).unwrap().len(), 1);
    }

    #[test]
    fn kruskal_examples() {
        let k3 = Graph::complete(3).unwrap();
        let t = kruskal(&k3, &EdgeOrder::lexicographic(3)).unwrap();
        assert_eq!(t.graph().edges(), vec![(0, 1), (0, 2)]);
        let b = kruskal_preimage_bracket(&t, &EdgeOrder::lexicographic(3)).unwrap();
        assert_eq!(b.m, k3);
        assert_eq!(b.preimage_size, 2);
        assert!(b.pass);
        let t2 = trees(2).unwrap()[0];
        let b2 = kruskal_preimage_bracket(&t2, &EdgeOrder::lexicographic(2)).unwrap();
        assert_eq!(b2.m, *t2.graph());
        assert_eq!(b2.preimage_size, 1);
        let disconnected = Graph::new(3, &[(0, 1)]).unwrap();
        assert!(kruskal(&disconnected, &EdgeOrder::lexicographic(3)).is_err());
    }

    #[test]
    fn kruskal_contract_and_idempotence() {
        for n in 1..=5 {
            for order in [EdgeOrder::lexicographic(n), EdgeOrder::reverse_lexicographic(n), EdgeOrder::shuffled(n, 3)] {
                for g in connected_graphs(n).unwrap() {
                    let t = kruskal(&g, &order).unwrap();
                    assert!(t.graph().is_subgraph_of(&g));
                    assert_eq!(t.graph().len(), n - 1);
                }
                for t in trees(n).unwrap() {
                    assert_eq!(kruskal(t.graph(), &order).unwrap(), t);
                }
            }
        }
    }

    #[test]
    fn brackets_exhaustive_three_orders() {
        for n in 1..=5 {
            for order in [EdgeOrder::lexicographic(n), EdgeOrder::reverse_lexicographic(n), EdgeOrder::shuffled(n, 11)] {
                let bs = all_brackets(n, &order).unwrap();
                assert_eq!(bs.iter().map(|b| b.preimage_size).sum::<usize>(), connected_graphs(n).unwrap().len());
                assert!(bs.iter().all(|b| b.pass), "n = {n}");
            }
        }
        let t = trees(5).unwrap()[7];
        let single = kruskal_preimage_bracket(&t, &EdgeOrder::lexicographic(5)).unwrap();
        let all = all_brackets(5, &EdgeOrder::lexicographic(5)).unwrap();
        assert_eq!(all.iter().find(|b| b.tree == t).unwrap(), &single);
    }

    #[test]
    fn ursell_small() {
        assert_eq!(ursell(&DMatrix::zeros(1, 1)).unwrap(), 1.0);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, -0.3, -0.3, 0.0]);
        assert!((ursell(&z).unwrap() + 0.15).abs() < 1e-15);
        let (a, b, c) = (-0.2, -0.5, -0.7);
        let z = DMatrix::from_row_slice(3, 3, &[0.0, a, b, a, 0.0, c, b, c, 0.0]);
        let expect = (a * b + a * c + b * c + a * b * c) / 6.0;
        assert!((ursell(&z).unwrap() - expect).abs() < 1e-15);
        assert!(matches!(ursell(&DMatrix::zeros(7, 7)), Err(Error::Budget(_))));
    }

    #[test]
    fn ursell_vanishes_on_split_support() {
        let mut rng = rng_for(5, 0, 0);
        for n in 2..=5 {
            for split in 1..(1u32 << n) - 1 {
                let z = DMatrix::from_fn(n, n, |i, j| {
                    let same = ((split >> i) & 1) == ((split >> j) & 1);
                    if i != j && same { -rng.gen::<f64>() } else { 0.0 }
                });
                let z = DMatrix::from_fn(n, n, |i, j| if i < j { z[(i, j)] } else { z[(j, i)] });
                assert_eq!(ursell(&z).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn tree_bound_trivial_cases() {
        let r = tree_bound_check(&DMatrix::zeros(3, 3), &EdgeOrder::lexicographic(3)).unwrap();
        assert_eq!((r.ursell, r.tree_bound), (0.0, 0.0));
        let r1 = tree_bound_check(&DMatrix::zeros(1, 1), &EdgeOrder::lexicographic(1)).unwrap();
        assert_eq!((r1.ursell, r1.tree_bound), (1.0, 1.0));
        let z = DMatrix::from_row_slice(2, 2, &[0.0, -0.4, -0.4, 0.0]);
        let r2 = tree_bound_check(&z, &EdgeOrder::lexicographic(2)).unwrap();
        assert_eq!(r2.ursell.abs(), r2.tree_bound);
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.4, 0.0]);
        assert!(tree_bound_check(&bad, &EdgeOrder::lexicographic(2)).is_err());
    }

    #[test]
    fn tree_bound_random_instances() {
        let mut rng = rng_for(17, 0, 0);
        let mut worst = 0.0f64;
        for i in 0..10_000 {
            let n = 1 + i % 5;
            let mut v = DMatrix::zeros(n, n);
            for a in 0..n {
                for b in a + 1..n {
                    let x: f64 = rng.gen::<f64>();
                    let val = if x < 0.1 { 0.0 } else if x < 0.15 { f64::INFINITY } else { -3.0 * rng.gen::<f64>().ln() };
                    v[(a, b)] = val;
                    v[(b, a)] = val;
                }
            }
            let order = if i % 3 == 0 { EdgeOrder::shuffled(n, i as u64) } else { EdgeOrder::lexicographic(n) };
            let r = tree_bound_check(&zeta_matrix(&v, 0.5), &order).unwrap();
            assert!(r.holds, "{r:?}");
            worst = worst.max(r.identity_error);
        }
        assert!(worst < 1e-12, "resummation error {worst}");
    }

    #[test]
    fn descendants_identity_all_rooted_trees() {
        for n in 1..=6 {
            for t in trees(n).unwrap() {
                for r in 0..n {
                    let (lhs, rhs) = descendants_identity(&t, r);
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn partitions_are_bell_numbers() {
        let bell: Vec<usize> = (0..=5).map(|p| set_partitions(p).len()).collect();
        assert_eq!(bell, vec![1, 1, 2, 5, 15, 52]);
    }

    #[test]
    fn riemann_sums() {
        let k: f64 = 1.3;
        for f in [1.0, 0.5, 0.1] {
            let nu = f / k;
            let q = (-k * nu).exp();
            assert!((riemann_sum(k, nu, 0) - nu * q / (1.0 - q)).abs() < 1e-13);
        }
        let fine = riemann_sum(2.0, 1e-4, 3);
        assert!((fine * 2f64.powi(4) / 6.0 - 1.0).abs() < 1e-3);
        let r = riemann_sum_bound_check(&[0.5, 1.0, 2.0], &[1.0, 0.5, 0.1], 8).unwrap();
        assert!(r.pass, "constant {}", r.constant);
        assert!(riemann_sum_bound_check(&[1.0], &[2.0], 2).is_err());
    }

    fn spec(l: usize, nu: f64, kappa: f64, w: f64) -> EnsembleSpec {
        let v = periodize_potential(&PotentialSpec::on_site(1, w).unwrap(), l).unwrap();
        EnsembleSpec::ginibre(InteractionParams::meanfield(nu, v).unwrap(), Some(kappa)).unwrap()
    }

    #[test]
    fn free_x_minus_x0_vanishes() {
        let s = spec(3, 0.5, 1.5, 0.0);
        let r = log_z_expansion(&s, 3, 2000, 1, &Exec::new(2)).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.remainder, 0.0);
        let fixed = [Path::constant(0, 1.0)];
        let x = estimate_x(&s, &fixed, 3, 500, 1, &Exec::new(1)).unwrap();
        assert_eq!(x.terms[0].mean, 1.0);
        assert_eq!(x.value, 1.0);
    }

    /// On a single site every walk is constant and `𝒱 = λ v(0) k k̃` for durations `kν, k̃ν`.
    #[test]
    fn fixed_constant_loop_second_order() {
        let (nu, kappa, w) = (0.5, 1.5, 0.3);
        let s = spec(1, nu, kappa, w);
        let lambda = nu * nu;
        let k0 = 2.0;
        let fixed = [Path::constant(0, k0 * nu)];
        let mut exact = 0.0;
        for k in 1..400 {
            let k = k as f64;
            let mu = nu * (-kappa * k * nu).exp() / (k * nu) * (-0.5 * lambda * w * k * k).exp();
            exact += mu * ((-lambda * w * k0 * k).exp() - 1.0);
        }
        let x = estimate_x(&s, &fixed, 2, 100_000, 3, &Exec::new(2)).unwrap();
        let t2 = &x.terms[1];
        assert_eq!(t2.order, 2);
        assert!((t2.mean - exact).abs() < 4.0 * t2.std_error + 1e-12, "{} vs {exact} ± {}", t2.mean, t2.std_error);
    }

    #[test]
    fn log_z_matches_quantum_single_site() {
        let (nu, kappa, w) = (0.5, 1.5, 0.2);
        let s = spec(1, nu, kappa, w);
        let Ensemble::Ginibre(params) = &s.ensemble else { unreachable!() };
        let z = quantum::grand_partition(params, kappa, 1e-12).unwrap().z_rel;
        let r = log_z_expansion(&s, 3, 100_000, 9, &Exec::new(2)).unwrap();
        let gap = (r.value - z.ln()).abs();
        assert!(gap <= 3.0 * r.std_error + r.remainder.abs() + 3.0 * r.remainder_error, "{} vs {} ± {} rem {}", r.value, z.ln(), r.std_error, r.remainder);
        assert!(r.terms.iter().all(|t| t.ess > 1000.0));
    }

    #[test]
    fn free_gamma_from_expansion() {
        let s = spec(3, 0.5, 1.5, 0.0);
        let free = free_gas_gamma1(&s.torus, 0.5, 1.5).unwrap();
        let ex = Exec::new(2);
        for y in 0..3 {
            let g = gamma_via_expansion(&s, &[0], &[y], 2, 60_000, 2, &ex).unwrap();
            assert!(g.agrees(free.at(0, y), 3.5, 0.0), "y={y}: {} ± {} vs {}", g.mean, g.std_error, free.at(0, y));
        }
        let g2 = gamma_via_expansion(&s, &[0, 1], &[1, 2], 2, 60_000, 4, &ex).unwrap();
        let wick = free.at(0, 1) * free.at(1, 2) + free.at(0, 2) * free.at(1, 1);
        assert!(g2.agrees(wick, 3.5, 0.0), "{} ± {} vs {wick}", g2.mean, g2.std_error);
    }

    #[test]
    fn interacting_gamma_from_expansion() {
        let s = spec(3, 0.5, 1.5, 0.05);
        let Ensemble::Ginibre(params) = &s.ensemble else { unreachable!() };
        let q = quantum::reduced_density_matrix(1, params, 1.5, 1e-11).unwrap();
        let g = gamma_via_expansion(&s, &[0], &[0], 2, 80_000, 6, &Exec::new(2)).unwrap();
        let rem = g.metadata["remainder"].abs() + 3.0 * g.metadata["remainder_error"];
        assert!((g.mean - q.at(0, 0)).abs() <= 3.0 * g.std_error + rem, "{} ± {} rem {rem} vs {}", g.mean, g.std_error, q.at(0, 0));
    }

    #[test]
    fn integration_bounds() {
        let s = spec(3, 0.5, 1.5, 0.1);
        let omega = sample_free_walk(&s.torus, 0, 1.5, &mut rng_for(1, 0, 0));
        let r = integration_bound_check(&s, &omega, 0, &[0, 1, 2, 3], 40_000, 2, &Exec::new(2)).unwrap();
        assert!(r.pass, "{:?}", r.constants);
        let free = spec(3, 0.5, 1.5, 0.0);
        let r0 = integration_bound_check(&free, &omega, 0, &[0, 1], 2000, 2, &Exec::new(1)).unwrap();
        assert!(r0.rows.iter().filter(|row| row.item <= 2).all(|row| row.lhs.mean == 0.0));
        // doubling the reference duration at most doubles item 1
        let long = Path::constant(0, 3.0);
        let short = Path::constant(0, 1.5);
        let a = integration_bound_check(&s, &short, 0, &[1], 40_000, 5, &Exec::new(2)).unwrap();
        let b = integration_bound_check(&s, &long, 0, &[1], 40_000, 5, &Exec::new(2)).unwrap();
        let (ra, rb) = (&a.rows[0].lhs, &b.rows[0].lhs);
        assert!(rb.mean <= 2.0 * ra.mean + 3.0 * (rb.std_error + 2.0 * ra.std_error));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kruskal_closure_is_preimage_union(n in 2usize..=5, seed in 0u64..1000, pick in 0usize..10_000) {
            let order = EdgeOrder::shuffled(n, seed);
            let ts = trees(n).unwrap();
            let t = ts[pick % ts.len()];
            let b = kruskal_preimage_bracket(&t, &order).unwrap();
            prop_assert!(b.pass);
            prop_assert_eq!(b.m, kruskal_closure(&t, &order));
        }

        #[test]
        fn tree_bound_holds(vals in proptest::collection::vec(0.0f64..5.0, 10), n in 1usize..=5) {
            let mut v = DMatrix::zeros(n, n);
            for (k, (i, j)) in edge_pairs(n).into_iter().enumerate() {
                v[(i, j)] = vals[k];
                v[(j, i)] = vals[k];
            }
            let r = tree_bound_check(&zeta_matrix(&v, 0.5), &EdgeOrder::lexicographic(n)).unwrap();
            prop_assert!(r.holds);
            prop_assert!(r.identity_error < 1e-12);
        }
    }

    #[test]
    fn graph_validation() {
        assert!(Graph::new(3, &[(0, 0)]).is_err());
        assert!(Graph::new(3, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(3, &[(0, 3)]).is_err());
        assert!(Tree::new(Graph::complete(3).unwrap()).is_err());
    }
}
