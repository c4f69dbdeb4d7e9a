//! Parallel tree-reweighted message passing (TRWP).
//!
//! Directions are processed one after another in their fixed order, each
//! reading the current messages of every direction, so later directions see
//! the updates of earlier ones within the same iteration. Scanlines of one
//! direction run in parallel.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DirectionPlan, DirectionSet, Topology};
use crate::isgmr::ForwardOutput;
use crate::kernel::{prepare, relax, reparametrize};
use crate::messages::{aggregate, CostOutput, IndexStore, MessageField};
use crate::potentials::{energy, Potentials, TreeCoefficients};
use crate::real::Real;
use crate::shared::SharedMut;

/// Incremental TRWP state.
pub struct Trwp<'a, T> {
    pot: &'a Potentials<T>,
    rho: &'a TreeCoefficients<T>,
    topo: Arc<Topology>,
    vt: Vec<T>,
    messages: MessageField<T>,
    indices: IndexStore,
}

impl<'a, T: Real> Trwp<'a, T> {
    pub fn new(pot: &'a Potentials<T>, rho: &'a TreeCoefficients<T>, dirs: &DirectionSet) -> Result<Self> {
        let topo = prepare(pot, dirs)?;
        if let TreeCoefficients::PerEdge(f) = rho {
            if f.height != pot.unary.height || f.width != pot.unary.width || f.families() < dirs.families_needed() {
                return Err(Error::Shape("tree coefficients do not cover the model edges".into()));
            }
        }
        let n = topo.grid.len();
        let l = pot.labels();
        let edges = topo.plans.iter().map(|p| p.edge_count).collect();
        Ok(Self {
            pot,
            rho,
            vt: pot.pairwise.transposed(),
            messages: MessageField::zeros(dirs.len(), n, l),
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

    /// Runs one iteration: every direction in order.
    pub fn step(&mut self) {
        let k = self.indices.iterations;
        self.indices.push_iteration();
        let blocks = self.indices.iteration_blocks_mut(k);
        for (r, (p, q)) in blocks.into_iter().enumerate() {
            sweep(
                self.pot,
                self.rho,
                &self.vt,
                &self.topo.plans[r],
                r,
                self.topo.opposites[r],
                &mut self.messages,
                p,
                q,
            );
        }
    }

    pub fn output(&self) -> CostOutput<T> {
        CostOutput::from_costs(aggregate(&self.pot.unary, &self.messages, true))
    }

    pub fn messages(&self) -> &MessageField<T> {
        &self.messages
    }

    pub fn indices(&self) -> &IndexStore {
        &self.indices
    }

    pub fn finish(self) -> ForwardOutput<T> {
        let output = self.output();
        ForwardOutput { output, messages: self.messages, indices: self.indices }
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep<T: Real>(
    pot: &Potentials<T>,
    rho: &TreeCoefficients<T>,
    vt: &[T],
    plan: &DirectionPlan,
    r: usize,
    opposite: Option<usize>,
    messages: &mut MessageField<T>,
    p: &mut [u8],
    q: &mut [u8],
) {
    let l = pot.labels();
    let dirs = messages.dirs;
    let plane = messages.plane_len();
    let m = SharedMut::new(&mut messages.data);
    let p = SharedMut::new(p);
    let q = SharedMut::new(q);
    plan.scanlines.par_iter().zip(&plan.edge_offsets).for_each(|(line, &e0)| {
        let mut h = vec![T::zero(); l];
        for (t, pair) in line.nodes.windows(2).enumerate() {
            let (j, i) = (pair[0], pair[1]);
            let e = e0 + t;
            let rho_e = rho.get(&plan.dir, i);
            h.copy_from_slice(&pot.unary.data[j * l..(j + 1) * l]);
            // SAFETY: only plane `r` is written during this sweep, and only at
            // nodes of this worker's scanline. Reads of plane `r` at `j` see
            // this worker's own earlier write; other planes are read-only.
            unsafe {
                for d in 0..dirs {
                    for (hv, &mv) in h.iter_mut().zip(m.slice(d * plane + j * l, l)) {
                        *hv = *hv + mv;
                    }
                }
                h.iter_mut().for_each(|v| *v = *v * rho_e);
                if let Some(o) = opposite {
                    for (hv, &mv) in h.iter_mut().zip(m.slice(o * plane + j * l, l)) {
                        *hv = *hv - mv;
                    }
                }
                let out = m.slice_mut(r * plane + i * l, l);
                relax(&h, pot.weights.get(&plan.dir, i), vt, out, p.slice_mut(e * l, l));
                q.slice_mut(e, 1)[0] = reparametrize(out);
            }
        }
    });
}

pub fn trwp_forward<T: Real>(
    pot: &Potentials<T>,
    rho: &TreeCoefficients<T>,
    dirs: &DirectionSet,
    iterations: usize,
) -> Result<ForwardOutput<T>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut s = Trwp::new(pot, rho, dirs)?;
    for _ in 0..iterations {
        s.step();
    }
    Ok(s.finish())
}

/// 4-connected energy of the labelling after each iteration.
pub fn trwp_iterate_energy<T: Real>(
    pot: &Potentials<T>,
    rho: &TreeCoefficients<T>,
    dirs: &DirectionSet,
    iterations: usize,
) -> Result<Vec<f64>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut s = Trwp::new(pot, rho, dirs)?;
    (0..iterations)
        .map(|_| {
            s.step();
            energy(pot, &s.output().labels, 4)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Direction;
    use crate::potentials::{PairwiseFunction, PairwiseKind, UnaryVolume};

    #[test]
    fn single_label_costs_equal_unary() {
        let u = UnaryVolume::new(2, 2, 1, vec![1.0f64, -2.0, 3.0, 0.5]).unwrap();
        let pw = PairwiseFunction::build(PairwiseKind::Potts, 1).unwrap();
        let pot = Potentials::with_constant_weight(u.clone(), pw, 4, 1.0).unwrap();
        let rho = TreeCoefficients::uniform(0.5).unwrap();
        let out = trwp_forward(&pot, &rho, &DirectionSet::connectivity(4).unwrap(), 2).unwrap();
        assert!(out.messages.data.iter().all(|&v| v == 0.0));
        assert_eq!(out.output.costs.data, u.data);
    }

    #[test]
    fn two_node_message_with_half_rho() {
        let u = UnaryVolume::new(1, 2, 2, vec![0.0f64, 2.0, 0.0, 0.0]).unwrap();
        let pw = PairwiseFunction::build(PairwiseKind::Potts, 2).unwrap();
        let pot = Potentials::with_constant_weight(u, pw, 4, 1.0).unwrap();
        let rho = TreeCoefficients::uniform(0.5).unwrap();
        let dirs = DirectionSet::from_ids(&[Direction::EAST, Direction::WEST]).unwrap();
        let out = trwp_forward(&pot, &rho, &dirs, 1).unwrap();
        // min_μ 0.5·θ_0(μ) + [μ≠λ] with θ_0 = (0, 2) gives (0, 1).
        assert_eq!(out.messages.at(0, 1), &[0.0, 1.0]);
        assert_eq!(out.indices.p_block(0, 0), &[0, 0]);
    }

    #[test]
    fn per_edge_rho_must_cover_directions() {
        let u = UnaryVolume::<f64>::zeros(2, 2, 2).unwrap();
        let pw = PairwiseFunction::build(PairwiseKind::Potts, 2).unwrap();
        let pot = Potentials::with_constant_weight(u, pw, 8, 1.0).unwrap();
        let field = crate::potentials::EdgeField::constant(2, 2, 4, 0.5).unwrap();
        let rho = TreeCoefficients::per_edge(field).unwrap();
        let dirs = DirectionSet::connectivity(8).unwrap();
        assert!(trwp_forward(&pot, &rho, &dirs, 1).is_err());
    }
}
