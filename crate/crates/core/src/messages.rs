//! Message volumes, recorded argmin indices and final cost outputs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potentials::UnaryVolume;
use crate::real::Real;

/// One `H × W × L` message plane per direction, planes contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageField<T> {
    pub dirs: usize,
    pub nodes: usize,
    pub labels: usize,
    pub data: Vec<T>,
}

impl<T: Real> MessageField<T> {
    pub fn zeros(dirs: usize, nodes: usize, labels: usize) -> Self {
        Self { dirs, nodes, labels, data: vec![T::zero(); dirs * nodes * labels] }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.nodes * self.labels
    }

    #[inline]
    pub fn plane(&self, r: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[r * n..(r + 1) * n]
    }

    #[inline]
    pub fn at(&self, r: usize, node: usize) -> &[T] {
        let start = r * self.plane_len() + node * self.labels;
        &self.data[start..start + self.labels]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// Argmin indices recorded by a forward pass.
///
/// For iteration `k`, direction `r` and the `e`-th edge of `r` (edges are
/// numbered along scanlines, skipping heads), `p` holds one byte per label
/// (the minimizing source label) and `q` one byte (the reparametrization
/// label). Total size is `K · Σ_r |E^r| · (L + 1)` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexStore {
    pub labels: usize,
    pub edges: Vec<usize>,
    pub iterations: usize,
    pub p: Vec<u8>,
    pub q: Vec<u8>,
}

impl IndexStore {
    pub fn new(labels: usize, edges: Vec<usize>) -> Self {
        Self { labels, edges, iterations: 0, p: Vec::new(), q: Vec::new() }
    }

    fn edges_per_iteration(&self) -> usize {
        self.edges.iter().sum()
    }

    fn dir_offset(&self, r: usize) -> usize {
        self.edges[..r].iter().sum()
    }

    /// Appends zeroed storage for one more iteration.
    pub(crate) fn push_iteration(&mut self) {
        let e = self.edges_per_iteration();
        self.p.resize(self.p.len() + e * self.labels, 0);
        self.q.resize(self.q.len() + e, 0);
        self.iterations += 1;
    }

    /// Disjoint `(p, q)` blocks of iteration `k`, one per direction.
    pub(crate) fn iteration_blocks_mut(&mut self, k: usize) -> Vec<(&mut [u8], &mut [u8])> {
        let e = self.edges_per_iteration();
        let l = self.labels;
        let mut p = &mut self.p[k * e * l..(k + 1) * e * l];
        let mut q = &mut self.q[k * e..(k + 1) * e];
        let mut out = Vec::with_capacity(self.edges.len());
        for &n in &self.edges {
            let (ph, pt) = std::mem::take(&mut p).split_at_mut(n * l);
            let (qh, qt) = std::mem::take(&mut q).split_at_mut(n);
            out.push((ph, qh));
            p = pt;
            q = qt;
        }
        out
    }

    pub fn p_block(&self, k: usize, r: usize) -> &[u8] {
        let e = self.edges_per_iteration();
        let start = (k * e + self.dir_offset(r)) * self.labels;
        &self.p[start..start + self.edges[r] * self.labels]
    }

    pub fn q_block(&self, k: usize, r: usize) -> &[u8] {
        let e = self.edges_per_iteration();
        let start = k * e + self.dir_offset(r);
        &self.q[start..start + self.edges[r]]
    }

    pub fn size_bytes(&self) -> usize {
        self.p.len() + self.q.len()
    }

    pub(crate) fn check(&self, labels: usize, edges: &[usize], iterations: usize) -> Result<()> {
        if self.labels != labels || self.edges != edges || self.iterations != iterations {
            return Err(Error::Shape(format!(
                "index store (L={}, K={}, edges={:?}) does not match request (L={labels}, K={iterations}, edges={edges:?})",
                self.labels, self.iterations, self.edges
            )));
        }
        Ok(())
    }
}

/// Aggregated costs `c_i(λ)` and the winner-take-all labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct CostOutput<T> {
    pub costs: UnaryVolume<T>,
    pub labels: Vec<u8>,
}

#[inline]
pub(crate) fn argmin<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> CostOutput<T> {
    /// Labels each node with its lowest-cost label, ties to the lowest index.
    pub fn from_costs(costs: UnaryVolume<T>) -> Self {
        let labels = costs.data.par_chunks(costs.labels).map(|c| argmin(c) as u8).collect();
        Self { costs, labels }
    }
}

/// `c_i(λ) = θ_i(λ) + Σ_r m^r_i(λ)`, or just the message sum when
/// `include_unary` is false.
pub(crate) fn aggregate<T: Real>(
    unary: &UnaryVolume<T>,
    msgs: &MessageField<T>,
    include_unary: bool,
) -> UnaryVolume<T> {
    let l = unary.labels;
    let mut data = vec![T::zero(); unary.data.len()];
    data.par_chunks_mut(l).enumerate().for_each(|(i, out)| {
        if include_unary {
            out.copy_from_slice(unary.node(i));
        }
        for r in 0..msgs.dirs {
            for (o, &m) in out.iter_mut().zip(msgs.at(r, i)) {
                *o = *o + m;
            }
        }
    });
    UnaryVolume { height: unary.height, width: unary.width, labels: l, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_store_layout() {
        let mut s = IndexStore::new(3, vec![2, 4]);
        s.push_iteration();
        s.push_iteration();
        assert_eq!(s.size_bytes(), 2 * 6 * 4);
        {
            let blocks = s.iteration_blocks_mut(1);
            assert_eq!(blocks[0].0.len(), 6);
            assert_eq!(blocks[1].0.len(), 12);
            assert_eq!(blocks[1].1.len(), 4);
            blocks.into_iter().for_each(|(p, q)| {
                p.fill(1);
                q.fill(2);
            });
        }
        assert!(s.p_block(0, 1).iter().all(|&b| b == 0));
        assert!(s.p_block(1, 0).iter().all(|&b| b == 1));
        assert!(s.q_block(1, 1).iter().all(|&b| b == 2));
    }

    #[test]
    fn argmin_prefers_lowest_index() {
        assert_eq!(argmin(&[2.0, 1.0, 1.0]), 1);
        assert_eq!(argmin(&[0.0f32]), 0);
    }
}
