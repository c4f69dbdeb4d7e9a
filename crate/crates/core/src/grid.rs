//! Lattice geometry: directions, scanline trees and their first nodes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// A rectangular pixel lattice with row-major node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridGraph {
    pub height: usize,
    pub width: usize,
}

impl GridGraph {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("grid {height}x{width} is empty")));
        }
        Ok(Self { height, width })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn node(&self, y: usize, x: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node / self.width, node % self.width)
    }

    #[inline]
    pub fn contains(&self, y: i64, x: i64) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width
    }

    /// Returns `i - r`, or `None` when `i` heads its scanline.
    pub fn previous_node(&self, node: (usize, usize), dir: &Direction) -> Option<(usize, usize)> {
        let y = node.0 as i64 - dir.step.0 as i64;
        let x = node.1 as i64 - dir.step.1 as i64;
        self.contains(y, x).then_some((y as usize, x as usize))
    }

    /// Number of directed edges `(i - r, i)` inside the grid.
    pub fn edge_count(&self, dir: &Direction) -> usize {
        let dh = dir.step.0.unsigned_abs() as usize;
        let dw = dir.step.1.unsigned_abs() as usize;
        self.height.saturating_sub(dh) * self.width.saturating_sub(dw)
    }
}

/// Scanning direction with its `(dh, dw)` step.
///
/// Ids index the global table below. Opposite directions are adjacent, so
/// `id ^ 1` is the opposite and `id / 2` names the undirected edge family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Direction {
    pub id: usize,
    pub step: (i32, i32),
    pub opposite: usize,
}

const STEPS: [(i32, i32); 16] = [
    (0, 1),
    (0, -1),
    (1, 0),
    (-1, 0),
    (1, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
    (1, 2),
    (-1, -2),
    (1, -2),
    (-1, 2),
    (2, 1),
    (-2, -1),
    (2, -1),
    (-2, 1),
];

impl Direction {
    pub const EAST: usize = 0;
    pub const WEST: usize = 1;
    pub const SOUTH: usize = 2;
    pub const NORTH: usize = 3;

    pub fn from_id(id: usize) -> Result<Self> {
        let step = *STEPS.get(id).ok_or(Error::InvalidParameter(format!("direction id {id}")))?;
        Ok(Self { id, step, opposite: id ^ 1 })
    }

    #[inline]
    pub fn family(&self) -> usize {
        self.id / 2
    }

    /// Canonical directions carry the stored orientation of their edge family.
    #[inline]
    pub fn is_canonical(&self) -> bool {
        self.id.is_multiple_of(2)
    }
}

/// Number of undirected edge families for a connectivity.
pub fn family_count(connectivity: usize) -> Result<usize> {
    match connectivity {
        4 | 8 | 16 => Ok(connectivity / 2),
        c => Err(Error::Connectivity(c)),
    }
}

/// Builds the fixed-order direction list for a 4-, 8- or 16-connected grid.
pub fn build_direction_set(connectivity: usize) -> Result<Vec<Direction>> {
    family_count(connectivity)?;
    (0..connectivity).map(Direction::from_id).collect()
}

/// An ordered set of scanning directions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DirectionSet {
    dirs: Vec<Direction>,
}

impl DirectionSet {
    pub fn connectivity(connectivity: usize) -> Result<Self> {
        Ok(Self { dirs: build_direction_set(connectivity)? })
    }

    /// A custom subset, e.g. `[EAST, WEST]` for chain experiments.
    pub fn from_ids(ids: &[usize]) -> Result<Self> {
        let mut dirs = Vec::with_capacity(ids.len());
        for &id in ids {
            let d = Direction::from_id(id)?;
            if dirs.contains(&d) {
                return Err(Error::InvalidParameter(format!("duplicate direction {id}")));
            }
            dirs.push(d);
        }
        if dirs.is_empty() {
            return Err(Error::InvalidParameter("empty direction set".into()));
        }
        Ok(Self { dirs })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    #[inline]
    pub fn get(&self, local: usize) -> &Direction {
        &self.dirs[local]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Direction> {
        self.dirs.iter()
    }

    /// Local index of the opposite of local direction `r`, if present.
    pub fn opposite_of(&self, local: usize) -> Option<usize> {
        let opp = self.dirs[local].opposite;
        self.dirs.iter().position(|d| d.id == opp)
    }

    /// Highest edge family index used, plus one.
    pub fn families_needed(&self) -> usize {
        self.dirs.iter().map(|d| d.family() + 1).max().unwrap_or(0)
    }

    /// Same directions in a different processing order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let ids: Vec<usize> = order.iter().map(|&l| self.dirs[l].id).collect();
        if ids.len() != self.dirs.len() {
            return Err(Error::InvalidParameter("permutation length".into()));
        }
        Self::from_ids(&ids)
    }
}

/// A maximal straight path through the grid along one direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scanline {
    /// First node as produced by the interpolation, before clipping.
    pub first_node: (i64, i64),
    pub direction: usize,
    /// Row-major node ids in scanning order.
    pub nodes: Vec<usize>,
}

fn trace(g: &GridGraph, dir: &Direction, first: (i64, i64)) -> Option<Scanline> {
    let (dh, dw) = (dir.step.0 as i64, dir.step.1 as i64);
    let (mut y, mut x) = first;
    // Advance virtual heads until they enter the grid. Every candidate moves
    // monotonically in at least one axis, so this terminates.
    let limit = (g.height + g.width) as i64 * 2 + 4;
    let mut steps = 0;
    while !g.contains(y, x) {
        y += dh;
        x += dw;
        steps += 1;
        if steps > limit {
            return None;
        }
    }
    let mut nodes = Vec::new();
    while g.contains(y, x) {
        nodes.push(g.node(y as usize, x as usize));
        y += dh;
        x += dw;
    }
    Some(Scanline { first_node: first, direction: dir.id, nodes })
}

/// Candidate first nodes of the trees of `dir`, possibly outside the grid.
fn first_nodes(g: &GridGraph, dir: &Direction) -> Vec<(i64, i64)> {
    let (sh, sw) = (dir.step.0 as i64, dir.step.1 as i64);
    let (h, w) = (g.height as i64, g.width as i64);
    if sh == 0 && sw.abs() == 1 {
        let x = if sw > 0 { 0 } else { w - 1 };
        return (0..h).map(|y| (y, x)).collect();
    }
    if sw == 0 && sh.abs() == 1 {
        let y = if sh > 0 { 0 } else { h - 1 };
        return (0..w).map(|x| (y, x)).collect();
    }
    if sh.abs() == 1 && sw != 0 {
        // Symmetric and wide trees: heads on the first (or last) row,
        // shifted left so that every line through the grid gets one.
        let n = w + (h - 1) * sw.abs();
        let shift = (h - 1) * sw.max(0);
        let y = if sh > 0 { 0 } else { h - 1 };
        return (0..n).map(|t| (y, t - shift)).collect();
    }
    if sw.abs() == 1 && sh.abs() > 1 {
        // Narrow trees: tree index t encodes the fractional row-0 column
        // t / |sh| of the line, rounded onto the lattice.
        let ah = sh.abs();
        let (lo, hi) = if sw > 0 { (-(h - 1), ah * (w - 1)) } else { (0, ah * (w - 1) + (h - 1)) };
        return (lo..=hi)
            .map(|t| {
                let c1 = t.rem_euclid(ah);
                let mut ph = if sw > 0 { (ah - c1).rem_euclid(ah) } else { c1 };
                if sh < 0 {
                    ph = h - 1 - ph;
                }
                let pw = if sw > 0 { t.div_euclid(ah) + i64::from(c1 != 0) } else { t.div_euclid(ah) };
                (ph, pw)
            })
            .collect();
    }
    // Remaining steps (e.g. (0, 2) or (2, 2)) have no closed-form layout;
    // their heads are the nodes whose predecessor falls outside the grid.
    let mut heads = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !g.contains(y - sh, x - sw) {
                heads.push((y, x));
            }
        }
    }
    heads
}

/// Enumerates the scanlines of `dir`; together they partition the grid.
pub fn enumerate_scanlines(g: &GridGraph, dir: &Direction) -> Result<Vec<Scanline>> {
    let (sh, sw) = dir.step;
    if (sh, sw) == (0, 0) || sh.abs() > 2 || sw.abs() > 2 {
        return Err(Error::DegenerateStep(sh, sw));
    }
    Ok(first_nodes(g, dir).into_iter().filter_map(|p| trace(g, dir, p)).collect())
}

/// Scanlines of one direction, flattened for the engines.
#[derive(Debug, Clone)]
pub struct DirectionPlan {
    pub dir: Direction,
    pub scanlines: Vec<Scanline>,
    /// Offset of each scanline's first edge in the direction's edge order.
    pub edge_offsets: Vec<usize>,
    pub edge_count: usize,
}

/// Scanline layout for a grid and direction set, materialized once.
#[derive(Debug)]
pub struct Topology {
    pub grid: GridGraph,
    pub dirs: DirectionSet,
    pub plans: Vec<DirectionPlan>,
    /// For local direction `r`, local indices of directions other than `r`
    /// and its opposite.
    pub others: Vec<Vec<usize>>,
    pub opposites: Vec<Option<usize>>,
}

type CacheKey = (GridGraph, Vec<usize>);

impl Topology {
    pub fn new(grid: GridGraph, dirs: &DirectionSet) -> Result<Self> {
        let mut plans = Vec::with_capacity(dirs.len());
        for d in dirs.iter() {
            let scanlines = enumerate_scanlines(&grid, d)?;
            let mut edge_offsets = Vec::with_capacity(scanlines.len());
            let mut acc = 0;
            for s in &scanlines {
                edge_offsets.push(acc);
                acc += s.nodes.len() - 1;
            }
            plans.push(DirectionPlan { dir: *d, scanlines, edge_offsets, edge_count: acc });
        }
        let opposites: Vec<_> = (0..dirs.len()).map(|r| dirs.opposite_of(r)).collect();
        let others = (0..dirs.len())
            .map(|r| (0..dirs.len()).filter(|&d| d != r && Some(d) != opposites[r]).collect())
            .collect();
        Ok(Self { grid, dirs: dirs.clone(), plans, others, opposites })
    }

    /// Shared, lazily built topology for `(grid, dirs)`.
    pub fn cached(grid: GridGraph, dirs: &DirectionSet) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<Topology>>>> = OnceLock::new();
        let key = (grid, dirs.iter().map(|d| d.id).collect::<Vec<_>>());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().expect("topology cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        let topo = Arc::new(Self::new(grid, dirs)?);
        cache.lock().expect("topology cache poisoned").insert(key, Arc::clone(&topo));
        Ok(topo)
    }

    /// `Σ_r |E^r|` over the direction set.
    pub fn total_edges(&self) -> usize {
        self.plans.iter().map(|p| p.edge_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(id: usize) -> Direction {
        Direction::from_id(id).unwrap()
    }

    #[test]
    fn direction_sets_have_expected_steps() {
        let four: Vec<_> = build_direction_set(4).unwrap().iter().map(|d| d.step).collect();
        assert_eq!(four, vec![(0, 1), (0, -1), (1, 0), (-1, 0)]);
        let eight: Vec<_> = build_direction_set(8).unwrap().iter().map(|d| d.step).collect();
        assert_eq!(&eight[4..], &[(1, 1), (-1, -1), (1, -1), (-1, 1)]);
        let sixteen = build_direction_set(16).unwrap();
        let mut extra: Vec<_> = sixteen[8..].iter().map(|d| d.step).collect();
        extra.sort();
        let mut want = vec![(1, 2), (1, -2), (-1, 2), (-1, -2), (2, 1), (2, -1), (-2, 1), (-2, -1)];
        want.sort();
        assert_eq!(extra, want);
        assert!(matches!(build_direction_set(6), Err(Error::Connectivity(6))));
    }

    #[test]
    fn opposites_pair_up() {
        for d in build_direction_set(16).unwrap() {
            let o = dir(d.opposite);
            assert_eq!(o.opposite, d.id);
            assert_eq!(o.step, (-d.step.0, -d.step.1));
            assert_eq!(o.family(), d.family());
        }
    }

    #[test]
    fn horizontal_heads_start_at_column_zero() {
        let g = GridGraph::new(3, 4).unwrap();
        let lines = enumerate_scanlines(&g, &dir(Direction::EAST)).unwrap();
        let heads: Vec<_> = lines.iter().map(|s| s.first_node).collect();
        assert_eq!(heads, vec![(0, 0), (1, 0), (2, 0)]);
        assert_eq!(lines[1].nodes, vec![4, 5, 6, 7]);
    }

    #[test]
    fn symmetric_diagonal_uses_shifted_first_row() {
        let g = GridGraph::new(3, 4).unwrap();
        let lines = enumerate_scanlines(&g, &dir(4)).unwrap();
        assert_eq!(lines.len(), 6);
        let heads: Vec<_> = lines.iter().map(|s| s.first_node).collect();
        assert_eq!(heads, (-2..=3).map(|x| (0, x)).collect::<Vec<_>>());
    }

    #[test]
    fn narrow_tree_heads_interpolate() {
        let g = GridGraph::new(4, 4).unwrap();
        let lines = enumerate_scanlines(&g, &dir(12)).unwrap();
        // (1, 0) starts a tree whose virtual predecessor (-1, -1) is off-grid.
        assert!(lines.iter().any(|s| s.nodes[0] == g.node(1, 0)));
        let mut seen = vec![0; g.len()];
        for s in &lines {
            for &n in &s.nodes {
                seen[n] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn previous_node_examples() {
        let g = GridGraph::new(4, 4).unwrap();
        assert_eq!(g.previous_node((0, 0), &dir(Direction::EAST)), None);
        assert_eq!(g.previous_node((0, 1), &dir(Direction::EAST)), Some((0, 0)));
        assert_eq!(g.previous_node((2, 3), &dir(4)), Some((1, 2)));
    }

    #[test]
    fn degenerate_and_oversized_steps_rejected() {
        let g = GridGraph::new(2, 2).unwrap();
        let bad = Direction { id: 0, step: (0, 0), opposite: 1 };
        assert!(enumerate_scanlines(&g, &bad).is_err());
        let far = Direction { id: 0, step: (3, 1), opposite: 1 };
        assert!(enumerate_scanlines(&g, &far).is_err());
    }

    #[test]
    fn axis_step_two_falls_back_to_head_rule() {
        let g = GridGraph::new(3, 5).unwrap();
        let d = Direction { id: 0, step: (0, 2), opposite: 1 };
        let lines = enumerate_scanlines(&g, &d).unwrap();
        assert_eq!(lines.len(), 6);
        let total: usize = lines.iter().map(|s| s.nodes.len()).sum();
        assert_eq!(total, 15);
    }

    #[test]
    fn edge_counts_match_scanlines() {
        let g = GridGraph::new(5, 7).unwrap();
        let dirs = DirectionSet::connectivity(16).unwrap();
        let topo = Topology::new(g, &dirs).unwrap();
        for p in &topo.plans {
            assert_eq!(p.edge_count, g.edge_count(&p.dir));
        }
    }
}
