//! Iterative semi-global matching, revised (ISGMR).
//!
//! Each iteration updates every direction independently: direction `r`
//! sweeps its scanlines using its own freshly updated messages `m̂^r` plus the
//! previous iteration's messages from every direction except `r` and its
//! opposite. Only after all directions finish are the new messages published.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DirectionPlan, DirectionSet, Topology};
use crate::kernel::{prepare, relax, reparametrize};
use crate::messages::{aggregate, CostOutput, IndexStore, MessageField};
use crate::potentials::{energy, Potentials};
use crate::real::Real;
use crate::shared::SharedMut;

/// Result of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub output: CostOutput<T>,
    pub messages: MessageField<T>,
    pub indices: IndexStore,
}

/// Incremental ISGMR state; one [`Isgmr::step`] per iteration.
pub struct Isgmr<'a, T> {
    pot: &'a Potentials<T>,
    topo: Arc<Topology>,
    vt: Vec<T>,
    current: MessageField<T>,
    updated: MessageField<T>,
    indices: IndexStore,
}

impl<'a, T: Real> Isgmr<'a, T> {
    pub fn new(pot: &'a Potentials<T>, dirs: &DirectionSet) -> Result<Self> {
        let topo = prepare(pot, dirs)?;
        let n = topo.grid.len();
        let l = pot.labels();
        let edges = topo.plans.iter().map(|p| p.edge_count).collect();
        Ok(Self {
            pot,
            vt: pot.pairwise.transposed(),
            current: MessageField::zeros(dirs.len(), n, l),
            updated: MessageField::zeros(dirs.len(), n, l),
            indices: IndexStore::new(l, edges),
            topo,
        })
    }

    pub fn iterations(&self) -> usize {
        self.indices.iterations
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    /// Runs one iteration over all directions.
    pub fn step(&mut self) {
        let k = self.indices.iterations;
        self.indices.push_iteration();
        let blocks = self.indices.iteration_blocks_mut(k);
        let plane_len = self.current.plane_len();
        let (pot, topo, vt, current) = (self.pot, &*self.topo, &self.vt[..], &self.current);
        self.updated
            .data
            .par_chunks_mut(plane_len)
            .zip(blocks.into_par_iter())
            .enumerate()
            .for_each(|(r, (hat, (p, q)))| {
                sweep(pot, vt, &topo.plans[r], &topo.others[r], current, hat, p, q);
            });
        std::mem::swap(&mut self.current, &mut self.updated);
    }

    /// Aggregated costs `θ + Σ_r m^r` and their argmin labelling.
    pub fn output(&self) -> CostOutput<T> {
        CostOutput::from_costs(aggregate(&self.pot.unary, &self.current, true))
    }

    pub fn messages(&self) -> &MessageField<T> {
        &self.current
    }

    pub fn indices(&self) -> &IndexStore {
        &self.indices
    }

    pub fn finish(self) -> ForwardOutput<T> {
        let output = self.output();
        ForwardOutput { output, messages: self.current, indices: self.indices }
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep<T: Real>(
    pot: &Potentials<T>,
    vt: &[T],
    plan: &DirectionPlan,
    others: &[usize],
    current: &MessageField<T>,
    hat: &mut [T],
    p: &mut [u8],
    q: &mut [u8],
) {
    let l = pot.labels();
    let hat = SharedMut::new(hat);
    let p = SharedMut::new(p);
    let q = SharedMut::new(q);
    plan.scanlines.par_iter().zip(&plan.edge_offsets).for_each(|(line, &e0)| {
        let mut h = vec![T::zero(); l];
        for (t, pair) in line.nodes.windows(2).enumerate() {
            let (j, i) = (pair[0], pair[1]);
            let e = e0 + t;
            // SAFETY: nodes of this scanline and its edge slots belong to
            // this worker alone; `j != i`.
            let (prev, out, pe, qe) = unsafe {
                (hat.slice(j * l, l), hat.slice_mut(i * l, l), p.slice_mut(e * l, l), q.slice_mut(e, 1))
            };
            for (mu, hv) in h.iter_mut().enumerate() {
                *hv = pot.unary.data[j * l + mu] + prev[mu];
            }
            for &d in others {
                for (hv, &m) in h.iter_mut().zip(current.at(d, j)) {
                    *hv = *hv + m;
                }
            }
            relax(&h, pot.weights.get(&plan.dir, i), vt, out, pe);
            qe[0] = reparametrize(out);
        }
    });
}

/// Runs `iterations` ISGMR iterations and aggregates.
pub fn isgmr_forward<T: Real>(
    pot: &Potentials<T>,
    dirs: &DirectionSet,
    iterations: usize,
) -> Result<ForwardOutput<T>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut s = Isgmr::new(pot, dirs)?;
    for _ in 0..iterations {
        s.step();
    }
    Ok(s.finish())
}

/// 4-connected energy of the labelling after each of `iterations` steps.
pub fn isgmr_iterate_energy<T: Real>(
    pot: &Potentials<T>,
    dirs: &DirectionSet,
    iterations: usize,
) -> Result<Vec<f64>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut s = Isgmr::new(pot, dirs)?;
    (0..iterations)
        .map(|_| {
            s.step();
            energy(pot, &s.output().labels, 4)
        })
        .collect()
}
