//! Areal adjacency structure and ICAR precision algebra.
//!
//! The intrinsic CAR precision is the graph Laplacian Q = diag(degrees) − W.
//! It is kept implicit as sorted neighbour lists; dense forms are materialised
//! only for small per-component factorizations.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CoreError, Result};
use crate::geom::{self, AreaShape, SnappedPoint};

/// Relative tolerance used when classifying eigenvalues of Q as zero.
pub const RANK_EIGEN_TOLERANCE: f64 = 1e-8;

/// Areal units with their Queen adjacency, ICAR precision structure,
/// scaling factor and connected components.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug)]
pub struct AreaGraph {
    area_ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
    degrees: Vec<usize>,
    scaling_factor: f64,
    components: Vec<Vec<usize>>,
    component_of: Vec<usize>,
    // Eigenvalues of the scaled constrained generalized inverse of Q,
    // restricted to the structured subspace. Computed lazily; used by the
    // numeric construction of the mixing prior.
    structure_spectrum: OnceLock<Vec<f64>>,
}

impl AreaGraph {
    pub fn n_areas(&self) -> usize {
        self.area_ids.len()
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn area_index(&self, id: &str) -> Option<usize> {
        self.area_ids.iter().position(|a| a == id)
    }

    /// Sorted neighbour list of area `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Generalized marginal variance of the ICAR field; the structured field
    /// is divided by its square root so that the geometric mean of the
    /// constrained marginal variances is one.
    pub fn scaling_factor(&self) -> f64 {
        self.scaling_factor
    }

    /// Connected components, each a sorted list of area indices.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn component_of(&self, i: usize) -> usize {
        self.component_of[i]
    }

    /// Areas with no neighbours. They form their own components and carry
    /// no structured variation.
    pub fn islands(&self) -> Vec<usize> {
        (0..self.n_areas()).filter(|&i| self.degrees[i] == 0).collect()
    }

    /// Number of edges (unordered pairs).
    pub fn n_edges(&self) -> usize {
        self.degrees.iter().sum::<usize>() / 2
    }

    /// All edges as (i, j) with i < j, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for (i, ns) in self.neighbors.iter().enumerate() {
            for &j in ns {
                if j > i {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// y = Q x where Q = diag(degrees) − W.
    pub fn icar_mul(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_areas());
        assert_eq!(y.len(), self.n_areas());
        for i in 0..x.len() {
            let mut acc = self.degrees[i] as f64 * x[i];
            for &j in &self.neighbors[i] {
                acc -= x[j];
            }
            y[i] = acc;
        }
    }

    /// xᵀ Q x, evaluated edgewise as Σ_{i~j} (x_i − x_j)².
    pub fn icar_quadform(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, ns) in self.neighbors.iter().enumerate() {
            for &j in ns {
                if j > i {
                    let d = x[i] - x[j];
                    acc += d * d;
                }
            }
        }
        acc
    }

    /// Dense Q, for small graphs and tests.
    pub fn icar_precision_dense(&self) -> DMatrix<f64> {
        let n = self.n_areas();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, i)] = self.degrees[i] as f64;
            for &j in &self.neighbors[i] {
                q[(i, j)] = -1.0;
            }
        }
        q
    }

    /// Row sums of Q in exact integer arithmetic.
    pub fn icar_row_sums_exact(&self) -> Vec<i64> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, ns)| self.degrees[i] as i64 - ns.len() as i64)
            .collect()
    }

    /// Subtract the per-component mean from `x` in place, forcing the
    /// sum-to-zero constraint. Singleton components are zeroed.
    pub fn project_sum_to_zero(&self, x: &mut [f64]) {
        for comp in &self.components {
            if comp.len() == 1 {
                x[comp[0]] = 0.0;
                continue;
            }
            let mean = comp.iter().map(|&i| x[i]).sum::<f64>() / comp.len() as f64;
            for &i in comp {
                x[i] -= mean;
            }
        }
    }

    /// Eigenvalues of the scaled constrained generalized inverse of Q on the
    /// structured subspace (one value per non-constraint direction of every
    /// component of size ≥ 2), sorted ascending.
    pub fn structure_spectrum(&self) -> &[f64] {
        self.structure_spectrum.get_or_init(|| {
            let mut gammas = Vec::new();
            for comp in &self.components {
                if comp.len() < 2 {
                    continue;
                }
                let q = self.component_dense_q(comp);
                let eig = SymmetricEigen::new(q);
                let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
                let tol = RANK_EIGEN_TOLERANCE * max_ev.max(1.0);
                for &mu in eig.eigenvalues.iter() {
                    if mu > tol {
                        gammas.push(1.0 / (mu * self.scaling_factor));
                    }
                }
            }
            gammas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            gammas
        })
    }

    fn component_dense_q(&self, comp: &[usize]) -> DMatrix<f64> {
        let m = comp.len();
        let pos: HashMap<usize, usize> = comp.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut q = DMatrix::zeros(m, m);
        for (k, &i) in comp.iter().enumerate() {
            q[(k, k)] = self.degrees[i] as f64;
            for &j in &self.neighbors[i] {
                q[(k, pos[&j])] = -1.0;
            }
        }
        q
    }
}

fn components_from_neighbors(neighbors: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = neighbors.len();
    let mut comp_of = vec![usize::MAX; n];
    let mut components = Vec::new();
    for start in 0..n {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        comp_of[start] = id;
        while let Some(i) = stack.pop() {
            members.push(i);
            for &j in &neighbors[i] {
                if comp_of[j] == usize::MAX {
                    comp_of[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    (components, comp_of)
}

/// Constrained marginal variances of the ICAR field for one component.
///
/// Factorizes Q + jitter·I (jitter = 1e-9 × mean diagonal) and projects the
/// inverse onto the sum-to-zero subspace. Because the projector is spectral
/// for Q, the projection equals exact conditioning on the constraint.
fn component_constrained_variances(q: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = q.nrows();
    let mean_diag = q.diagonal().sum() / m as f64;
    let jitter = 1e-9 * mean_diag;
    let mut a = q.clone();
    for k in 0..m {
        a[(k, k)] += jitter;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| CoreError::Graph("jittered ICAR precision is not positive definite".into()))?;
    let v = chol.inverse();
    // diag(PVP) with P = I − J/m.
    let row_means: Vec<f64> = (0..m).map(|i| v.row(i).sum() / m as f64).collect();
    let grand = row_means.iter().sum::<f64>() / m as f64;
    Ok((0..m).map(|i| v[(i, i)] - 2.0 * row_means[i] + grand).collect())
}

/// Geometric mean of the constrained ICAR marginal variances over all areas
/// in components of size ≥ 2.
///
/// Errors when every component is a singleton: no structured variation is
/// possible on such a graph.
pub fn compute_icar_scaling(graph_neighbors: &[Vec<usize>], components: &[Vec<usize>]) -> Result<f64> {
    let mut log_sum = 0.0;
    let mut count = 0usize;
    for comp in components {
        if comp.len() < 2 {
            continue;
        }
        let m = comp.len();
        let pos: HashMap<usize, usize> = comp.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut q = DMatrix::zeros(m, m);
        for (k, &i) in comp.iter().enumerate() {
            q[(k, k)] = graph_neighbors[i].len() as f64;
            for &j in &graph_neighbors[i] {
                q[(k, pos[&j])] = -1.0;
            }
        }
        for var in component_constrained_variances(&q)? {
            if var <= 0.0 {
                return Err(CoreError::Graph(format!(
                    "non-positive constrained marginal variance {var}"
                )));
            }
            log_sum += var.ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(CoreError::Graph(
            "all components are singletons: no structured variation possible".into(),
        ));
    }
    Ok((log_sum / count as f64).exp())
}

fn finish_graph(area_ids: Vec<String>, mut neighbors: Vec<Vec<usize>>) -> Result<AreaGraph> {
    for ns in &mut neighbors {
        ns.sort_unstable();
        ns.dedup();
    }
    let degrees: Vec<usize> = neighbors.iter().map(|ns| ns.len()).collect();
    let (components, component_of) = components_from_neighbors(&neighbors);
    let scaling_factor = if components.iter().any(|c| c.len() >= 2) {
        compute_icar_scaling(&neighbors, &components)?
    } else {
        // No structured variation exists; the factor is never applied to a
        // non-zero field, so a neutral value keeps the graph constructible.
        1.0
    };
    for (i, d) in degrees.iter().enumerate() {
        if *d == 0 {
            log::warn!("area '{}' has no neighbours; it forms its own component", area_ids[i]);
        }
    }
    Ok(AreaGraph {
        area_ids,
        neighbors,
        degrees,
        scaling_factor,
        components,
        component_of,
        structure_spectrum: OnceLock::new(),
    })
}

/// Options for Queen contiguity detection.
#[derive(Debug, Clone)]
pub struct QueenConfig {
    /// Coordinates are rounded to multiples of this value before the exact
    /// shared-vertex / vertex-on-segment tests.
    pub snap_tolerance: f64,
}

impl Default for QueenConfig {
    fn default() -> Self {
        QueenConfig {
            snap_tolerance: geom::DEFAULT_SNAP_TOLERANCE,
        }
    }
}

/// Build an [`AreaGraph`] from polygon geometries under Queen contiguity:
/// two areas are adjacent iff their boundaries share at least one point
/// (a full edge, a partial edge or a single corner).
pub fn build_queen_adjacency(ids: &[String], shapes: &[AreaShape], config: &QueenConfig) -> Result<AreaGraph> {
    if ids.len() != shapes.len() {
        return Err(CoreError::LengthMismatch {
            expected: ids.len(),
            got: shapes.len(),
        });
    }
    if ids.len() < 2 {
        return Err(CoreError::Graph("need at least 2 areas".into()));
    }
    {
        let mut sorted = ids.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(CoreError::Graph("duplicate area identifiers".into()));
        }
    }

    let n = ids.len();
    let snapped: Vec<Vec<geom::SnappedRing>> = ids
        .iter()
        .zip(shapes)
        .map(|(id, shape)| geom::snap_and_validate(shape, id, config.snap_tolerance))
        .collect::<Result<_>>()?;

    let mut adjacency = vec![vec![false; n]; n];
    let mut mark = |i: usize, j: usize| {
        if i != j {
            adjacency[i][j] = true;
            adjacency[j][i] = true;
        }
    };

    // Pass 1: shared snapped vertices.
    let mut vertex_owners: HashMap<SnappedPoint, Vec<usize>> = HashMap::new();
    for (i, rings) in snapped.iter().enumerate() {
        for ring in rings {
            for &p in &ring.points {
                let owners = vertex_owners.entry(p).or_default();
                if owners.last() != Some(&i) {
                    owners.push(i);
                }
            }
        }
    }
    for owners in vertex_owners.values() {
        for a in 0..owners.len() {
            for b in (a + 1)..owners.len() {
                mark(owners[a], owners[b]);
            }
        }
    }

    // Pass 2: vertices lying in the interior of another area's segment
    // (T-junctions where tessellations do not share vertices). Segments are
    // bucketed on a coarse grid keyed by their bounding boxes.
    struct Seg {
        owner: usize,
        a: SnappedPoint,
        b: SnappedPoint,
    }
    let mut segs: Vec<Seg> = Vec::new();
    let mut total_len = 0i128;
    for (i, rings) in snapped.iter().enumerate() {
        for ring in rings {
            for (a, b) in ring.segments() {
                total_len += ((a.0 - b.0).abs() as i128).max((a.1 - b.1).abs() as i128);
                segs.push(Seg { owner: i, a, b });
            }
        }
    }
    let cell: i64 = ((total_len / segs.len().max(1) as i128).max(1) as i64).max(1);
    let cell_of = |p: SnappedPoint| (p.0.div_euclid(cell), p.1.div_euclid(cell));
    let mut seg_grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, s) in segs.iter().enumerate() {
        let (cx0, cy0) = cell_of((s.a.0.min(s.b.0), s.a.1.min(s.b.1)));
        let (cx1, cy1) = cell_of((s.a.0.max(s.b.0), s.a.1.max(s.b.1)));
        for cx in cx0..=cx1 {
            for cy in cy0..=cy1 {
                seg_grid.entry((cx, cy)).or_default().push(k);
            }
        }
    }
    for (&p, owners) in &vertex_owners {
        if let Some(candidates) = seg_grid.get(&cell_of(p)) {
            for &k in candidates {
                let s = &segs[k];
                if owners.contains(&s.owner) {
                    continue;
                }
                if geom::point_on_segment(p, s.a, s.b) {
                    for &o in owners {
                        mark(o, s.owner);
                    }
                }
            }
        }
    }

    let neighbors: Vec<Vec<usize>> = adjacency
        .iter()
        .map(|row| row.iter().enumerate().filter(|(_, &v)| v).map(|(j, _)| j).collect())
        .collect();
    finish_graph(ids.to_vec(), neighbors)
}

/// Build an [`AreaGraph`] from an explicit edge list. Edges are symmetrized
/// and duplicates are dropped silently; self-loops and out-of-range indices
/// are rejected.
pub fn build_adjacency_from_edges(n_areas: usize, edges: &[(usize, usize)]) -> Result<AreaGraph> {
    build_adjacency_from_edges_with_ids(
        (0..n_areas).map(|i| i.to_string()).collect(),
        edges,
    )
}

/// Same as [`build_adjacency_from_edges`] with caller-supplied identifiers.
pub fn build_adjacency_from_edges_with_ids(area_ids: Vec<String>, edges: &[(usize, usize)]) -> Result<AreaGraph> {
    let n = area_ids.len();
    if n < 2 {
        return Err(CoreError::Graph("need at least 2 areas".into()));
    }
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(CoreError::Graph(format!(
                "edge ({i}, {j}) out of range for {n} areas"
            )));
        }
        if i == j {
            return Err(CoreError::Graph(format!("self-loop on area {i}")));
        }
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    finish_graph(area_ids, neighbors)
}

/// Read an edge list from CSV with header `src,dst`. Entries may be area
/// indices or area identifiers resolved against `ids` when provided.
pub fn read_edge_csv(path: &std::path::Path, ids: Option<Vec<String>>) -> Result<AreaGraph> {
    let mut rdr = csv::Reader::from_path(path)?;
    {
        let headers = rdr.headers()?;
        if headers.len() < 2 || &headers[0] != "src" || &headers[1] != "dst" {
            return Err(CoreError::InvalidData(format!(
                "edge CSV must have header 'src,dst', got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut raw: Vec<(String, String)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        raw.push((rec[0].to_string(), rec[1].to_string()));
    }
    match ids {
        Some(ids) => {
            let index: HashMap<&str, usize> =
                ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let mut edges = Vec::with_capacity(raw.len());
            for (s, d) in &raw {
                let si = *index.get(s.as_str()).ok_or_else(|| {
                    CoreError::InvalidData(format!("edge endpoint '{s}' not among area ids"))
                })?;
                let di = *index.get(d.as_str()).ok_or_else(|| {
                    CoreError::InvalidData(format!("edge endpoint '{d}' not among area ids"))
                })?;
                edges.push((si, di));
            }
            build_adjacency_from_edges_with_ids(ids, &edges)
        }
        None => {
            let mut edges = Vec::with_capacity(raw.len());
            for (s, d) in &raw {
                let parse = |t: &str| {
                    t.parse::<usize>().map_err(|_| {
                        CoreError::InvalidData(format!(
                            "edge endpoint '{t}' is not an index; supply area ids to resolve names"
                        ))
                    })
                };
                edges.push((parse(s)?, parse(d)?));
            }
            let n = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
            build_adjacency_from_edges(n, &edges)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square(x0: f64, y0: f64) -> AreaShape {
        AreaShape::single(vec![(x0, y0), (x0 + 1.0, y0), (x0 + 1.0, y0 + 1.0), (x0, y0 + 1.0)])
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn squares_sharing_edge_are_adjacent() {
        let g = build_queen_adjacency(
            &ids(2),
            &[unit_square(0.0, 0.0), unit_square(1.0, 0.0)],
            &QueenConfig::default(),
        )
        .unwrap();
        assert!(g.is_adjacent(0, 1));
        assert_eq!(g.components().len(), 1);
    }

    #[test]
    fn squares_touching_at_corner_are_adjacent() {
        let g = build_queen_adjacency(
            &ids(2),
            &[unit_square(0.0, 0.0), unit_square(1.0, 1.0)],
            &QueenConfig::default(),
        )
        .unwrap();
        assert!(g.is_adjacent(0, 1));
    }

    #[test]
    fn disjoint_squares_not_adjacent_two_components() {
        let g = build_queen_adjacency(
            &ids(2),
            &[unit_square(0.0, 0.0), unit_square(3.0, 0.0)],
            &QueenConfig::default(),
        )
        .unwrap();
        assert!(!g.is_adjacent(0, 1));
        assert_eq!(g.components().len(), 2);
        assert_eq!(g.islands(), vec![0, 1]);
        // Degenerate all-singleton graph: neutral scaling factor.
        assert_eq!(g.scaling_factor(), 1.0);
    }

    #[test]
    fn t_junction_detected_via_vertex_on_segment() {
        // Big square on the left; two half-height squares on the right whose
        // shared corner lies in the interior of the big square's right edge.
        let big = AreaShape::single(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 2.0), (0.0, 2.0)]);
        let lo = AreaShape::single(vec![(1.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0)]);
        let hi = AreaShape::single(vec![(1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0)]);
        let g = build_queen_adjacency(&ids(3), &[big, lo, hi], &QueenConfig::default()).unwrap();
        assert!(g.is_adjacent(0, 1));
        assert!(g.is_adjacent(0, 2));
        assert!(g.is_adjacent(1, 2));
    }

    #[test]
    fn invalid_geometry_reports_area() {
        let bow = AreaShape::single(vec![(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]);
        let err = build_queen_adjacency(
            &["ok".into(), "bad".into()],
            &[unit_square(0.0, 0.0), bow],
            &QueenConfig::default(),
        )
        .unwrap_err();
        match err {
            CoreError::InvalidGeometry { area_id, .. } => assert_eq!(area_id, "bad"),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn edge_builder_path_graph() {
        let g = build_adjacency_from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(g.degrees(), &[1, 2, 1]);
        assert_eq!(g.components().len(), 1);
    }

    #[test]
    fn edge_builder_symmetrizes_and_dedups() {
        let g = build_adjacency_from_edges(2, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.degrees(), &[1, 1]);
    }

    #[test]
    fn edge_builder_rejects_self_loop_and_out_of_range() {
        assert!(build_adjacency_from_edges(3, &[(0, 0)]).is_err());
        assert!(build_adjacency_from_edges(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn builders_agree_on_consistent_inputs() {
        // 2x2 block of unit squares: Queen adjacency is the complete graph.
        let shapes = [
            unit_square(0.0, 0.0),
            unit_square(1.0, 0.0),
            unit_square(0.0, 1.0),
            unit_square(1.0, 1.0),
        ];
        let g1 = build_queen_adjacency(&ids(4), &shapes, &QueenConfig::default()).unwrap();
        let edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let g2 = build_adjacency_from_edges_with_ids(ids(4), &edges).unwrap();
        assert_eq!(g1.area_ids(), g2.area_ids());
        assert_eq!(g1.degrees(), g2.degrees());
        for i in 0..4 {
            assert_eq!(g1.neighbors(i), g2.neighbors(i));
        }
        assert_relative_eq!(g1.scaling_factor(), g2.scaling_factor(), max_relative = 1e-12);
    }

    /// Dense eigen-decomposition oracle for the constrained generalized
    /// inverse: pseudo-inverse restricted to the non-null eigenspace.
    fn dense_scaling_oracle(q: &DMatrix<f64>) -> f64 {
        let eig = SymmetricEigen::new(q.clone());
        let n = q.nrows();
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let mut pinv = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let mu = eig.eigenvalues[k];
            if mu > 1e-10 * max_ev.max(1.0) {
                let v = eig.eigenvectors.column(k);
                pinv += DMatrix::from_fn(n, n, |i, j| v[i] * v[j] / mu);
            }
        }
        let log_mean = (0..n).map(|i| pinv[(i, i)].ln()).sum::<f64>() / n as f64;
        log_mean.exp()
    }

    #[test]
    fn scaling_matches_dense_oracle_on_path3() {
        let g = build_adjacency_from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let oracle = dense_scaling_oracle(&g.icar_precision_dense());
        assert_relative_eq!(g.scaling_factor(), oracle, max_relative = 1e-6);
        // Known closed form: diag of constrained pseudo-inverse is
        // (5/9, 2/9, 5/9); geometric mean = (50/729)^(1/3).
        let expected = (50.0_f64 / 729.0).powf(1.0 / 3.0);
        assert_relative_eq!(g.scaling_factor(), expected, max_relative = 1e-6);
    }

    #[test]
    fn scaling_matches_dense_oracle_on_two_node_graph() {
        let g = build_adjacency_from_edges(2, &[(0, 1)]).unwrap();
        let oracle = dense_scaling_oracle(&g.icar_precision_dense());
        assert_relative_eq!(g.scaling_factor(), oracle, max_relative = 1e-9);
        assert_relative_eq!(g.scaling_factor(), 0.25, max_relative = 1e-9);
    }

    #[test]
    fn scaling_errors_when_all_singletons() {
        let neighbors = vec![vec![], vec![], vec![]];
        let components = vec![vec![0], vec![1], vec![2]];
        assert!(compute_icar_scaling(&neighbors, &components).is_err());
    }

    #[test]
    fn row_sums_exactly_zero_integer() {
        let g = build_adjacency_from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]).unwrap();
        assert!(g.icar_row_sums_exact().iter().all(|&s| s == 0));
    }

    #[test]
    fn rank_deficiency_equals_component_count() {
        // Two components: a 4-cycle and a 3-path, plus an island.
        let g = build_adjacency_from_edges(8, &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6)]).unwrap();
        assert_eq!(g.components().len(), 3);
        let q = g.icar_precision_dense();
        let eig = SymmetricEigen::new(q);
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let zeros = eig
            .eigenvalues
            .iter()
            .filter(|&&mu| mu.abs() <= RANK_EIGEN_TOLERANCE * max_ev)
            .count();
        assert_eq!(zeros, g.components().len());
    }

    #[test]
    fn structure_spectrum_path3() {
        let g = build_adjacency_from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let spec = g.structure_spectrum();
        // Q eigenvalues are {0, 1, 3}; spectrum is 1/(mu * scaling).
        assert_eq!(spec.len(), 2);
        let s = g.scaling_factor();
        assert_relative_eq!(spec[0], 1.0 / (3.0 * s), max_relative = 1e-9);
        assert_relative_eq!(spec[1], 1.0 / s, max_relative = 1e-9);
    }

    #[test]
    fn project_sum_to_zero_per_component() {
        let g = build_adjacency_from_edges(5, &[(0, 1), (1, 2)]).unwrap();
        let mut x = vec![1.0, 2.0, 6.0, 5.0, -1.0];
        g.project_sum_to_zero(&mut x);
        let c0: f64 = [x[0], x[1], x[2]].iter().sum();
        assert!(c0.abs() < 1e-12);
        // Islands are zeroed.
        assert_eq!(x[3], 0.0);
        assert_eq!(x[4], 0.0);
    }
}
