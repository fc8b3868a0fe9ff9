//! Fast Marching Method for the discrete eikonal system.
//!
//! Nodes are finalized in nondecreasing travel-time order off a binary
//! min-heap with lazy deletion: improved candidates are re-pushed and stale
//! entries are skipped when popped. Updates only ever read finalized
//! neighbour values, so each finalized value solves the upwind quadratic
//!
//! `Σ_axis [((t - T_axis)/h)+]^2 = s^2`
//!
//! against its final upwind neighbours. Ties on the heap key break on node
//! index, which makes solves bit-reproducible.

use crate::error::{Error, Result};
use crate::grid::Grid;
use std::io::Write;

/// Travel times from one source on a grid.
#[derive(Debug, Clone)]
pub struct TravelTimeField {
    pub grid: Grid,
    pub source: usize,
    pub values: Vec<f64>,
    pub stats: FmmStats,
}

/// Work counters for complexity accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FmmStats {
    /// Nodes finalized (the node-update count used in complexity checks).
    pub finalized: u64,
    /// Heap pushes, including re-pushes from lazy deletion.
    pub pushes: u64,
}

impl std::ops::AddAssign for FmmStats {
    fn add_assign(&mut self, rhs: Self) {
        self.finalized += rhs.finalized;
        self.pushes += rhs.pushes;
    }
}

/// Solves the upwind quadratic for one node given the per-axis upwind minima
/// (`f64::INFINITY` marks an axis with no finalized neighbour yet). When the
/// two-sided root would not dominate the larger included value, that value is
/// dropped and the one-sided update `min + h s` applies.
pub fn local_update(axis_times: [f64; 2], h: f64, s: f64) -> Result<f64> {
    if !axis_times[0].is_finite() && !axis_times[1].is_finite() {
        return Err(Error::NoFiniteNeighbor);
    }
    debug_assert!(s > 0.0 && h > 0.0);
    Ok(update_two(axis_times[0], axis_times[1], h * s))
}

#[inline(always)]
fn update_two(a: f64, b: f64, hs: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if hi - lo >= hs {
        lo + hs
    } else {
        0.5 * ((lo + hi) + (2.0 * hs * hs - (hi - lo) * (hi - lo)).sqrt())
    }
}

/// Heap entry: travel-time bits in the high lanes, node index low, so the
/// natural u128 order is (time, index). Times are nonnegative, which makes
/// the bit pattern order-preserving.
#[inline(always)]
fn pack(key: f64, idx: u32) -> u128 {
    ((key.to_bits() as u128) << 32) | idx as u128
}

#[inline(always)]
fn unpack(e: u128) -> (f64, usize) {
    (f64::from_bits((e >> 32) as u64), (e & 0xffff_ffff) as usize)
}

// The heap vec is 1-indexed (slot 0 is a sentinel), which keeps both
// children of a node in one aligned 32-byte block.

#[inline]
fn heap_push(heap: &mut Vec<u128>, entry: u128) {
    heap.push(entry);
    let v = heap.as_mut_slice();
    let mut child = v.len() - 1;
    // SAFETY: child starts inside the vec and parents have smaller indices.
    unsafe {
        while child > 1 {
            let parent = child >> 1;
            if entry < *v.get_unchecked(parent) {
                *v.get_unchecked_mut(child) = *v.get_unchecked(parent);
                child = parent;
            } else {
                break;
            }
        }
        *v.get_unchecked_mut(child) = entry;
    }
}

/// Pop with the bounce-down walk: the hole follows the smaller child to a
/// leaf (branchless child select), then the displaced tail entry sifts back
/// up, which is short because tail entries are large.
#[inline]
fn heap_pop(heap: &mut Vec<u128>) -> Option<u128> {
    let n = heap.len();
    if n <= 1 {
        return None;
    }
    let top = heap[1];
    let last = heap.pop().unwrap();
    let len = heap.len();
    if len > 1 {
        let v = heap.as_mut_slice();
        let mut hole = 1usize;
        // SAFETY: all child/parent indices are checked against len.
        unsafe {
            loop {
                let l = hole << 1;
                if l >= len {
                    break;
                }
                let r = l + 1;
                let child = if r < len {
                    l + ((*v.get_unchecked(r) < *v.get_unchecked(l)) as usize)
                } else {
                    l
                };
                *v.get_unchecked_mut(hole) = *v.get_unchecked(child);
                hole = child;
            }
            let mut child = hole;
            while child > 1 {
                let parent = child >> 1;
                if last < *v.get_unchecked(parent) {
                    *v.get_unchecked_mut(child) = *v.get_unchecked(parent);
                    child = parent;
                } else {
                    break;
                }
            }
            *v.get_unchecked_mut(child) = last;
        }
    }
    Some(top)
}

/// Reusable solver arrays; chains run many solves on same-size grids, so
/// per-solve allocation is worth avoiding.
#[derive(Default)]
pub struct FmmWorkspace {
    fin: Vec<f64>,
    tent: Vec<f64>,
    frozen: Vec<bool>,
    heap: Vec<u128>,
}

impl FmmWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, n: usize) {
        self.fin.clear();
        self.fin.resize(n, f64::INFINITY);
        self.tent.clear();
        self.tent.resize(n, f64::INFINITY);
        self.frozen.clear();
        self.frozen.resize(n, false);
        self.heap.clear();
        self.heap.push(0); // sentinel: the heap is 1-indexed
    }
}

/// Full solve: every node finalized.
pub fn fmm_solve(grid: &Grid, node_slowness: &[f64], source: usize) -> Result<TravelTimeField> {
    let mut ws = FmmWorkspace::new();
    let stats = march(&mut ws, grid, node_slowness, source, None)?;
    Ok(TravelTimeField {
        grid: grid.clone(),
        source,
        values: std::mem::take(&mut ws.fin),
        stats,
    })
}

/// Solve that may stop once all `targets` are finalized. Values at nodes
/// that were never reached remain `f64::INFINITY`; the target values are
/// identical to a full solve.
pub fn fmm_solve_until(
    grid: &Grid,
    node_slowness: &[f64],
    source: usize,
    targets: &[usize],
) -> Result<TravelTimeField> {
    let mut ws = FmmWorkspace::new();
    let stats = march(&mut ws, grid, node_slowness, source, Some(targets))?;
    Ok(TravelTimeField {
        grid: grid.clone(),
        source,
        values: std::mem::take(&mut ws.fin),
        stats,
    })
}

/// Travel times at the target nodes only, reusing the caller's workspace.
pub fn fmm_values_at(
    ws: &mut FmmWorkspace,
    grid: &Grid,
    node_slowness: &[f64],
    source: usize,
    targets: &[usize],
) -> Result<(Vec<f64>, FmmStats)> {
    let stats = march(ws, grid, node_slowness, source, Some(targets))?;
    Ok((targets.iter().map(|&t| ws.fin[t]).collect(), stats))
}

thread_local! {
    static POOL: std::cell::RefCell<FmmWorkspace> = std::cell::RefCell::new(FmmWorkspace::new());
}

/// [`fmm_values_at`] with a per-thread reused workspace.
pub fn fmm_values_at_pooled(
    grid: &Grid,
    node_slowness: &[f64],
    source: usize,
    targets: &[usize],
) -> Result<(Vec<f64>, FmmStats)> {
    POOL.with(|ws| fmm_values_at(&mut ws.borrow_mut(), grid, node_slowness, source, targets))
}

fn march(
    ws: &mut FmmWorkspace,
    grid: &Grid,
    node_slowness: &[f64],
    source: usize,
    targets: Option<&[usize]>,
) -> Result<FmmStats> {
    let n = grid.node_count();
    assert_eq!(node_slowness.len(), n, "slowness must be sampled per node");
    assert!(source < n);
    for (node, &s) in node_slowness.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonPositiveSlowness { node, value: s });
        }
    }

    ws.reset(n);
    let fin = &mut ws.fin[..n];
    let tent = &mut ws.tent[..n];
    let frozen = &mut ws.frozen[..n];
    let heap = &mut ws.heap;
    let mut stats = FmmStats::default();

    let mut target_sorted: Vec<usize> = targets.map(|t| t.to_vec()).unwrap_or_default();
    target_sorted.sort_unstable();
    target_sorted.dedup();
    let mut remaining = target_sorted.len();

    let stride = grid.nx + 1;
    let (nx, ny) = (grid.nx, grid.ny);
    let h = grid.h;

    tent[source] = 0.0;
    heap_push(heap, pack(0.0, source as u32));
    stats.pushes += 1;

    #[cfg(debug_assertions)]
    let mut last_popped = 0.0f64;

    // Candidate refresh for neighbour `a` at lattice coords (ai, aj); only
    // interior and edge nodes are reachable from an interior freeze. A new
    // candidate always involves the value t just frozen and so cannot fall
    // below it: neighbours already at or below t are skipped outright.
    //
    // SAFETY: a is a lattice neighbour of an interior node, so a and the
    // stencil offsets stay within the node range.
    macro_rules! try_update {
        ($t:expr, $a:expr, $ai:expr, $aj:expr) => {{
            let a = $a;
            unsafe {
                if !*frozen.get_unchecked(a) && *tent.get_unchecked(a) > $t {
                    let cand = if $ai > 0 && $ai < nx && $aj > 0 && $aj < ny {
                        let ax = fin.get_unchecked(a - 1).min(*fin.get_unchecked(a + 1));
                        let ay = fin
                            .get_unchecked(a - stride)
                            .min(*fin.get_unchecked(a + stride));
                        update_two(ax, ay, h * node_slowness.get_unchecked(a))
                    } else {
                        let nb = if $ai == 0 {
                            a + 1
                        } else if $ai == nx {
                            a - 1
                        } else if $aj == 0 {
                            a + stride
                        } else {
                            a - stride
                        };
                        *fin.get_unchecked(nb) + h * node_slowness.get_unchecked(a)
                    };
                    if cand < *tent.get_unchecked(a) {
                        *tent.get_unchecked_mut(a) = cand;
                        heap_push(heap, pack(cand, a as u32));
                        stats.pushes += 1;
                    }
                }
            }
        }};
    }

    while let Some(entry) = heap_pop(heap) {
        let (t, idx) = unpack(entry);
        if frozen[idx] {
            continue;
        }
        #[cfg(debug_assertions)]
        {
            debug_assert!(t >= last_popped, "heap order violated");
            debug_assert_eq!(t, tent[idx]);
            last_popped = t;
        }
        frozen[idx] = true;
        fin[idx] = t;
        stats.finalized += 1;

        if remaining > 0 && target_sorted.binary_search(&idx).is_ok() {
            remaining -= 1;
            if remaining == 0 {
                break;
            }
        }

        let (i, j) = (idx % stride, idx / stride);
        if i > 0 && i < nx && j > 0 && j < ny {
            try_update!(t, idx - 1, i - 1, j);
            try_update!(t, idx + 1, i + 1, j);
            try_update!(t, idx - stride, i, j - 1);
            try_update!(t, idx + stride, i, j + 1);
        } else {
            // Boundary freeze: the influenced set can contain corners with
            // their two-edge stencil.
            let (inf, m) = grid.influences(idx);
            for &a in &inf[..m] {
                if frozen[a] || tent[a] <= t {
                    continue;
                }
                let (ai, aj) = (a % stride, a / stride);
                let cand = if ai > 0 && ai < nx && aj > 0 && aj < ny {
                    let ax = fin[a - 1].min(fin[a + 1]);
                    let ay = fin[a - stride].min(fin[a + stride]);
                    update_two(ax, ay, h * node_slowness[a])
                } else {
                    let (st, cnt) = grid.stencil(a);
                    match cnt {
                        1 => fin[st[0]] + h * node_slowness[a],
                        _ => update_two(fin[st[0]], fin[st[1]], h * node_slowness[a]),
                    }
                };
                if cand < tent[a] {
                    tent[a] = cand;
                    heap_push(heap, pack(cand, a as u32));
                    stats.pushes += 1;
                }
            }
        }
    }

    Ok(stats)
}

/// Residual of the discrete system at interior nodes of a solved field,
/// relative to `s^2`. Small residuals certify the solve.
pub fn max_interior_residual(field: &TravelTimeField, node_slowness: &[f64]) -> f64 {
    let g = &field.grid;
    let stride = g.nx + 1;
    let mut worst = 0.0f64;
    for j in 1..g.ny {
        for i in 1..g.nx {
            let a = j * stride + i;
            if a == field.source || !field.values[a].is_finite() {
                continue;
            }
            let t = field.values[a];
            let ax = field.values[a - 1].min(field.values[a + 1]);
            let ay = field.values[a - stride].min(field.values[a + stride]);
            let gx = ((t - ax).max(0.0)) / g.h;
            let gy = ((t - ay).max(0.0)) / g.h;
            let s2 = node_slowness[a] * node_slowness[a];
            worst = worst.max(((gx * gx + gy * gy) - s2).abs() / s2);
        }
    }
    worst
}

/// Writes the field as a row-major plain-text matrix, one grid row per line.
pub fn write_matrix<W: Write>(w: &mut W, field: &TravelTimeField) -> Result<()> {
    write_matrix_raw(w, &field.values, field.grid.nx + 1)
}

/// Row-major matrix dump of arbitrary values with `ncols` per line.
pub fn write_matrix_raw<W: Write>(w: &mut W, values: &[f64], ncols: usize) -> Result<()> {
    for row in values.chunks(ncols) {
        let mut line = String::with_capacity(row.len() * 20);
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{v}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain};

    fn constant_slowness(grid: &Grid, s: f64) -> Vec<f64> {
        vec![s; grid.node_count()]
    }

    #[test]
    fn local_update_one_sided() {
        assert_eq!(local_update([0.0, f64::INFINITY], 1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn local_update_symmetric_pair() {
        let t = local_update([0.0, 0.0], 1.0, 1.0).unwrap();
        assert!((t - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn local_update_asymmetric_pair() {
        // 2t^2 - t + 0.25 = 1 => t = (1 + sqrt(7)) / 4.
        let t = local_update([0.0, 0.5], 1.0, 1.0).unwrap();
        assert!((t - (1.0 + 7f64.sqrt()) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn local_update_drops_far_neighbor() {
        // Gap larger than h*s falls back to the one-sided update.
        let t = local_update([0.0, 0.9], 1.0, 0.5).unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn local_update_no_neighbor_is_error() {
        assert!(matches!(
            local_update([f64::INFINITY, f64::INFINITY], 1.0, 1.0),
            Err(Error::NoFiniteNeighbor)
        ));
    }

    #[test]
    fn rejects_nonpositive_slowness() {
        let g = build_grid(Domain::unit_square(), 2).unwrap();
        let mut s = constant_slowness(&g, 1.0);
        s[3] = 0.0;
        assert!(matches!(
            fmm_solve(&g, &s, 0),
            Err(Error::NonPositiveSlowness { node: 3, .. })
        ));
    }

    #[test]
    fn distance_oracle_constant_slowness() {
        let g = build_grid(Domain::symmetric_square(), 6).unwrap();
        let src = g.node_at([0.0, 0.0]).unwrap();
        let f = fmm_solve(&g, &constant_slowness(&g, 1.0), src).unwrap();
        let mut worst = 0.0f64;
        for idx in 0..g.node_count() {
            let p = g.node_pos(idx);
            let d = (p[0] * p[0] + p[1] * p[1]).sqrt();
            worst = worst.max((f.values[idx] - d).abs());
        }
        assert!(worst <= 0.08, "max error {worst}");
    }

    #[test]
    fn doubling_slowness_doubles_times_exactly() {
        let g = build_grid(Domain::symmetric_square(), 5).unwrap();
        let src = g.node_at([0.0, 0.0]).unwrap();
        let f1 = fmm_solve(&g, &constant_slowness(&g, 1.0), src).unwrap();
        let f2 = fmm_solve(&g, &constant_slowness(&g, 2.0), src).unwrap();
        for idx in 0..g.node_count() {
            assert_eq!(f2.values[idx], 2.0 * f1.values[idx]);
        }
    }

    #[test]
    fn every_node_finalized_and_nonnegative() {
        let g = build_grid(Domain::unit_square(), 5).unwrap();
        let src = g.node_at([0.5, 0.5]).unwrap();
        let f = fmm_solve(&g, &constant_slowness(&g, 1.3), src).unwrap();
        assert_eq!(f.stats.finalized, g.node_count() as u64);
        assert_eq!(f.values[src], 0.0);
        assert!(f.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn residual_satisfies_discrete_system() {
        let g = build_grid(Domain::symmetric_square(), 6).unwrap();
        let src = g.node_at([0.25, -0.5]).unwrap();
        let slo: Vec<f64> = (0..g.node_count())
            .map(|idx| {
                let p = g.node_pos(idx);
                (0.4 * (0.5 * std::f64::consts::PI * p[0]).sin()
                    * (0.5 * std::f64::consts::PI * p[1]).sin())
                .exp()
            })
            .collect();
        let f = fmm_solve(&g, &slo, src).unwrap();
        assert!(max_interior_residual(&f, &slo) <= 1e-10);
    }

    #[test]
    fn discrete_lipschitz_bound() {
        let g = build_grid(Domain::symmetric_square(), 5).unwrap();
        let src = g.node_at([0.0, 0.0]).unwrap();
        let slo: Vec<f64> = (0..g.node_count())
            .map(|idx| {
                let p = g.node_pos(idx);
                (0.8 * (0.5 * std::f64::consts::PI * p[0]).sin()
                    * (0.5 * std::f64::consts::PI * p[1]).sin())
                .exp()
            })
            .collect();
        let smax = slo.iter().cloned().fold(0.0f64, f64::max);
        let f = fmm_solve(&g, &slo, src).unwrap();
        // Neighbour differences: |T_a - T_b| <= sqrt(2) * s_max * h for the
        // two-dimensional upwind scheme.
        let c = 2f64.sqrt();
        for idx in 0..g.node_count() {
            let (st, n) = g.stencil(idx);
            for &b in &st[..n] {
                let d = (f.values[idx] - f.values[b]).abs();
                assert!(d <= c * smax * g.h + 1e-12);
            }
        }
    }

    #[test]
    fn partial_solve_matches_full_solve_at_targets() {
        let g = build_grid(Domain::symmetric_square(), 5).unwrap();
        let src = g.node_at([0.0, 0.0]).unwrap();
        let slo = constant_slowness(&g, 1.0);
        let targets = [
            g.node_at([-0.5, -1.0]).unwrap(),
            g.node_at([1.0, 0.5]).unwrap(),
        ];
        let full = fmm_solve(&g, &slo, src).unwrap();
        let part = fmm_solve_until(&g, &slo, src, &targets).unwrap();
        for &t in &targets {
            assert_eq!(full.values[t], part.values[t]);
        }
        assert!(part.stats.finalized <= full.stats.finalized);
    }

    #[test]
    fn matrix_dump_round_trips() {
        let g = build_grid(Domain::unit_square(), 2).unwrap();
        let src = g.node_at([0.5, 0.5]).unwrap();
        let f = fmm_solve(&g, &constant_slowness(&g, 1.0), src).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(parsed.len(), g.node_count());
        assert_eq!(text.lines().count(), g.ny + 1);
        for (a, b) in parsed.iter().zip(&f.values) {
            assert_eq!(a, b);
        }
    }
}
