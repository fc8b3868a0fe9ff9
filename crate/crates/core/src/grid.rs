//! Regular dyadic meshes over axis-aligned rectangles.
//!
//! Level `l` puts `2^l` square cells across the domain width, so every node
//! coordinate of level `l` exists on all finer levels and dyadic observation
//! points land exactly on grid nodes. The lattice corners are kept as nodes;
//! they carry a degenerate one-sided stencil fed from their edge neighbours
//! (the boundary-intersection construction for general domains never produces
//! them, but dropping them would leave holes in the output lattice).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Domain {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Result<Self> {
        if lower[0] < upper[0] && lower[1] < upper[1] {
            Ok(Domain { lower, upper })
        } else {
            Err(Error::EmptyDomain)
        }
    }

    pub fn unit_square() -> Self {
        Domain {
            lower: [0.0, 0.0],
            upper: [1.0, 1.0],
        }
    }

    /// The `(-1, 1)^2` square used by the point-source experiments.
    pub fn symmetric_square() -> Self {
        Domain {
            lower: [-1.0, -1.0],
            upper: [1.0, 1.0],
        }
    }

    pub fn width(&self) -> f64 {
        self.upper[0] - self.lower[0]
    }

    pub fn height(&self) -> f64 {
        self.upper[1] - self.lower[1]
    }

    pub fn contains(&self, x: [f64; 2], tol: f64) -> bool {
        x[0] >= self.lower[0] - tol
            && x[0] <= self.upper[0] + tol
            && x[1] >= self.lower[1] - tol
            && x[1] <= self.upper[1] + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeCategory {
    Interior,
    Edge,
    Corner,
}

/// Immutable mesh: node coordinates, spacing and stencil topology are all
/// derived from `(domain, level)` on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: Domain,
    pub level: u32,
    /// Cells along x (`2^level`) and along y.
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

/// Rough per-node footprint of a solve (values, state, slowness, heap slack).
const BYTES_PER_NODE: u64 = 48;

/// Default budget for a single grid, in MiB.
pub const DEFAULT_MEMORY_BUDGET_MB: u64 = 8192;

pub fn build_grid(domain: Domain, level: u32) -> Result<Grid> {
    build_grid_with_budget(domain, level, DEFAULT_MEMORY_BUDGET_MB)
}

pub fn build_grid_with_budget(domain: Domain, level: u32, budget_mb: u64) -> Result<Grid> {
    if domain.lower[0] >= domain.upper[0] || domain.lower[1] >= domain.upper[1] {
        return Err(Error::EmptyDomain);
    }
    if level < 1 {
        return Err(Error::InvalidConfig("grid level must be >= 1".into()));
    }
    let nodes_per_axis = 2f64.powi(level as i32) + 1.0;
    let h = domain.width() / (nodes_per_axis - 1.0);
    let ny_f = domain.height() / h;
    if (ny_f - ny_f.round()).abs() > 1e-9 {
        return Err(Error::UnalignedRectangle { level });
    }
    let est_nodes = nodes_per_axis * (ny_f.round() + 1.0);
    let required_mb = (est_nodes * BYTES_PER_NODE as f64 / (1024.0 * 1024.0)).ceil() as u64;
    if required_mb > budget_mb || est_nodes > u32::MAX as f64 {
        return Err(Error::MemoryBudget {
            level,
            required_mb,
            budget_mb,
        });
    }
    Ok(Grid {
        domain,
        level,
        nx: 1 << level,
        ny: ny_f.round() as usize,
        h,
    })
}

impl Grid {
    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn node_ij(&self, idx: usize) -> (usize, usize) {
        (idx % (self.nx + 1), idx / (self.nx + 1))
    }

    #[inline]
    pub fn node_pos(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(idx);
        [
            self.domain.lower[0] + i as f64 * self.h,
            self.domain.lower[1] + j as f64 * self.h,
        ]
    }

    #[inline]
    pub fn category(&self, i: usize, j: usize) -> NodeCategory {
        let bx = i == 0 || i == self.nx;
        let by = j == 0 || j == self.ny;
        match (bx, by) {
            (true, true) => NodeCategory::Corner,
            (false, false) => NodeCategory::Interior,
            _ => NodeCategory::Edge,
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.node_ij(idx);
        self.category(i, j) != NodeCategory::Interior
    }

    pub fn interior_count(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    /// Upwind stencil N_alpha: the nodes whose values enter alpha's update.
    /// Interior nodes see their four lattice neighbours, edge nodes only
    /// their single interior neighbour, corners their two edge neighbours.
    pub fn stencil(&self, idx: usize) -> ([usize; 4], usize) {
        let (i, j) = self.node_ij(idx);
        let mut out = [0usize; 4];
        let n;
        match self.category(i, j) {
            NodeCategory::Interior => {
                out = [
                    self.node_index(i - 1, j),
                    self.node_index(i + 1, j),
                    self.node_index(i, j - 1),
                    self.node_index(i, j + 1),
                ];
                n = 4;
            }
            NodeCategory::Edge => {
                let (ii, jj) = match (i, j) {
                    (0, _) => (1, j),
                    (x, _) if x == self.nx => (self.nx - 1, j),
                    (_, 0) => (i, 1),
                    _ => (i, self.ny - 1),
                };
                out[0] = self.node_index(ii, jj);
                n = 1;
            }
            NodeCategory::Corner => {
                let ii = if i == 0 { 1 } else { self.nx - 1 };
                let jj = if j == 0 { 1 } else { self.ny - 1 };
                out[0] = self.node_index(ii, j);
                out[1] = self.node_index(i, jj);
                n = 2;
            }
        }
        (out, n)
    }

    /// Nodes whose stencil contains `idx`: the targets to refresh after
    /// freezing `idx` in the marching sweep.
    pub fn influences(&self, idx: usize) -> ([usize; 4], usize) {
        let (i, j) = self.node_ij(idx);
        let mut out = [0usize; 4];
        let mut n = 0;
        match self.category(i, j) {
            NodeCategory::Interior => {
                for (ii, jj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                    if self.category(ii, jj) != NodeCategory::Corner {
                        out[n] = self.node_index(ii, jj);
                        n += 1;
                    }
                }
            }
            NodeCategory::Edge => {
                let (ii, jj) = match (i, j) {
                    (0, _) => (1, j),
                    (x, _) if x == self.nx => (self.nx - 1, j),
                    (_, 0) => (i, 1),
                    _ => (i, self.ny - 1),
                };
                out[0] = self.node_index(ii, jj);
                n = 1;
                // First and last edge nodes feed the adjacent corner.
                for (ci, cj) in [(0usize, 0usize), (self.nx, 0), (0, self.ny), (self.nx, self.ny)]
                {
                    let adjacent = (ci == i && cj.abs_diff(j) == 1)
                        || (cj == j && ci.abs_diff(i) == 1);
                    if adjacent {
                        out[n] = self.node_index(ci, cj);
                        n += 1;
                    }
                }
            }
            NodeCategory::Corner => {}
        }
        (out, n)
    }

    /// Index of the grid node nearest to `x`; ties break to the lower index.
    pub fn snap_point(&self, x: [f64; 2]) -> Result<usize> {
        let tol = 1e-9 * self.h;
        if !self.domain.contains(x, tol) {
            return Err(Error::PointOutsideDomain(x[0], x[1]));
        }
        let snap_axis = |v: f64, lo: f64, n: usize| -> usize {
            let f = ((v - lo) / self.h).clamp(0.0, n as f64);
            let base = f.floor();
            let frac = f - base;
            let i = if frac > 0.5 { base + 1.0 } else { base };
            (i as usize).min(n)
        };
        let i = snap_axis(x[0], self.domain.lower[0], self.nx);
        let j = snap_axis(x[1], self.domain.lower[1], self.ny);
        Ok(self.node_index(i, j))
    }

    /// Checks that `x` coincides with a grid node (up to float dust) and
    /// returns its index.
    pub fn node_at(&self, x: [f64; 2]) -> Result<usize> {
        let idx = self.snap_point(x)?;
        let p = self.node_pos(idx);
        let d = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
        if d <= 1e-9 * self.h {
            Ok(idx)
        } else {
            Err(Error::ObservationOffGrid(x[0], x[1], self.level))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_level_1() {
        let g = build_grid(Domain::unit_square(), 1).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.h, 0.5);
    }

    #[test]
    fn unit_square_level_3_counts() {
        let g = build_grid(Domain::unit_square(), 3).unwrap();
        assert_eq!(g.node_count(), 81);
        assert_eq!(g.interior_count(), 49);
        assert_eq!(g.node_count() - g.interior_count(), 32);
    }

    #[test]
    fn symmetric_square_level_counts() {
        for level in [4u32, 6, 9] {
            let g = build_grid(Domain::symmetric_square(), level).unwrap();
            let n = (1usize << level) + 1;
            assert_eq!(g.node_count(), n * n);
            assert!((g.h - 2.0 * 2f64.powi(-(level as i32))).abs() < 1e-15);
        }
    }

    #[test]
    fn oversized_level_reports_memory() {
        let err = build_grid(Domain::unit_square(), 40).unwrap_err();
        match err {
            Error::MemoryBudget {
                level, required_mb, ..
            } => {
                assert_eq!(level, 40);
                assert!(required_mb > DEFAULT_MEMORY_BUDGET_MB);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn refinement_contains_coarser_nodes() {
        let coarse = build_grid(Domain::symmetric_square(), 3).unwrap();
        let fine = build_grid(Domain::symmetric_square(), 4).unwrap();
        for idx in 0..coarse.node_count() {
            let p = coarse.node_pos(idx);
            let fidx = fine.node_at(p).expect("coarse node missing on fine grid");
            let q = fine.node_pos(fidx);
            assert_eq!(p, q);
        }
    }

    #[test]
    fn stencil_shapes() {
        let g = build_grid(Domain::unit_square(), 3).unwrap();
        for idx in 0..g.node_count() {
            let (i, j) = g.node_ij(idx);
            let (_, n) = g.stencil(idx);
            match g.category(i, j) {
                NodeCategory::Interior => assert_eq!(n, 4),
                NodeCategory::Edge => assert_eq!(n, 1),
                NodeCategory::Corner => assert_eq!(n, 2),
            }
        }
    }

    #[test]
    fn edge_nodes_see_only_interior() {
        let g = build_grid(Domain::unit_square(), 4).unwrap();
        for idx in 0..g.node_count() {
            let (i, j) = g.node_ij(idx);
            if g.category(i, j) == NodeCategory::Edge {
                let (st, n) = g.stencil(idx);
                for &b in &st[..n] {
                    let (bi, bj) = g.node_ij(b);
                    assert_eq!(g.category(bi, bj), NodeCategory::Interior);
                }
            }
        }
    }

    #[test]
    fn interior_neighbor_relation_is_symmetric() {
        let g = build_grid(Domain::unit_square(), 4).unwrap();
        for idx in 0..g.node_count() {
            let (i, j) = g.node_ij(idx);
            if g.category(i, j) != NodeCategory::Interior {
                continue;
            }
            let (st, n) = g.stencil(idx);
            for &b in &st[..n] {
                let (bi, bj) = g.node_ij(b);
                if g.category(bi, bj) == NodeCategory::Interior {
                    let (bst, bn) = g.stencil(b);
                    assert!(bst[..bn].contains(&idx));
                }
            }
        }
    }

    #[test]
    fn influences_transpose_stencil() {
        let g = build_grid(Domain::unit_square(), 3).unwrap();
        for a in 0..g.node_count() {
            let (st, n) = g.stencil(a);
            for &b in &st[..n] {
                let (inf, m) = g.influences(b);
                assert!(inf[..m].contains(&a), "{b} should influence {a}");
            }
            let (inf, m) = g.influences(a);
            for &t in &inf[..m] {
                let (st, n) = g.stencil(t);
                assert!(st[..n].contains(&a));
            }
        }
    }

    #[test]
    fn snapping_rules() {
        let g = build_grid(Domain::unit_square(), 1).unwrap();
        // Exactly on a node.
        let idx = g.snap_point([0.5, 0.5]).unwrap();
        assert_eq!(g.node_pos(idx), [0.5, 0.5]);
        // Nearest lattice point.
        let idx = g.snap_point([0.26, 0.26]).unwrap();
        assert_eq!(g.node_pos(idx), [0.5, 0.5]);
        // Cell centre ties break to the lowest index (round down per axis).
        let idx = g.snap_point([0.25, 0.25]).unwrap();
        assert_eq!(g.node_pos(idx), [0.0, 0.0]);
        assert!(g.snap_point([1.2, 0.5]).is_err());
    }

    #[test]
    fn snap_distance_bound() {
        let g = build_grid(Domain::symmetric_square(), 4).unwrap();
        let mut rng = crate::rng::stream(5, "snap", &[]);
        use rand::Rng;
        for _ in 0..500 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let p = g.node_pos(g.snap_point(x).unwrap());
            let d = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
            assert!(d <= g.h * std::f64::consts::SQRT_2 / 2.0 + 1e-12);
        }
    }
}
