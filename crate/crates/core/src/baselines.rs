//! Reference inference methods: one-pass SGM in its standard and revised
//! forms, iterative standard SGM, and local mean-field.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DirectionPlan, DirectionSet, GridGraph};
use crate::kernel::{prepare, relax_values, reparametrize};
use crate::messages::{aggregate, argmin, CostOutput, MessageField};
use crate::potentials::{energy, Potentials, UnaryVolume};
use crate::real::Real;
use crate::shared::SharedMut;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgmVariant {
    /// Messages carry the unary of their target node; costs are the message
    /// sum, so each unary is counted once per direction.
    Standard,
    /// Messages carry the unary of their source node; costs add the unary
    /// once.
    Revised,
}

fn sweep_standard<T: Real>(pot: &Potentials<T>, vt: &[T], plan: &DirectionPlan, plane: &mut [T]) {
    let l = pot.labels();
    let plane = SharedMut::new(plane);
    plan.scanlines.par_iter().for_each(|line| {
        let mut h = vec![T::zero(); l];
        let head = line.nodes[0];
        // SAFETY: scanlines of one direction own disjoint nodes.
        unsafe { plane.slice_mut(head * l, l) }.copy_from_slice(pot.unary.node(head));
        for pair in line.nodes.windows(2) {
            let (j, i) = (pair[0], pair[1]);
            let (prev, out) = unsafe { (plane.slice(j * l, l), plane.slice_mut(i * l, l)) };
            // Normalizing the predecessor keeps message magnitudes bounded
            // without changing any argmin.
            let lo = prev.iter().copied().fold(T::infinity(), T::min);
            for (hv, &pv) in h.iter_mut().zip(prev) {
                *hv = pv - lo;
            }
            relax_values(&h, pot.weights.get(&plan.dir, i), vt, out);
            for (o, &u) in out.iter_mut().zip(pot.unary.node(i)) {
                *o = *o + u;
            }
        }
    });
}

fn sweep_revised<T: Real>(pot: &Potentials<T>, vt: &[T], plan: &DirectionPlan, plane: &mut [T]) {
    let l = pot.labels();
    let plane = SharedMut::new(plane);
    plan.scanlines.par_iter().for_each(|line| {
        let mut h = vec![T::zero(); l];
        for pair in line.nodes.windows(2) {
            let (j, i) = (pair[0], pair[1]);
            // SAFETY: scanlines of one direction own disjoint nodes.
            let (prev, out) = unsafe { (plane.slice(j * l, l), plane.slice_mut(i * l, l)) };
            for ((hv, &pv), &u) in h.iter_mut().zip(prev).zip(pot.unary.node(j)) {
                *hv = pv + u;
            }
            relax_values(&h, pot.weights.get(&plan.dir, i), vt, out);
            reparametrize(out);
        }
    });
}

/// One pass of semi-global matching over all directions.
pub fn sgm_forward<T: Real>(pot: &Potentials<T>, dirs: &DirectionSet, variant: SgmVariant) -> Result<CostOutput<T>> {
    let topo = prepare(pot, dirs)?;
    let vt = pot.pairwise.transposed();
    let mut msgs = MessageField::zeros(dirs.len(), topo.grid.len(), pot.labels());
    let plane_len = msgs.plane_len();
    msgs.data.par_chunks_mut(plane_len).zip(&topo.plans).for_each(|(plane, plan)| match variant {
        SgmVariant::Standard => sweep_standard(pot, &vt, plan, plane),
        SgmVariant::Revised => sweep_revised(pot, &vt, plan, plane),
    });
    let costs = aggregate(&pot.unary, &msgs, variant == SgmVariant::Revised);
    if costs.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SGM costs"));
    }
    Ok(CostOutput::from_costs(costs))
}

/// Iterated standard SGM: after each pass the summed costs become the next
/// pass's unary volume. Returns the output of every pass.
pub fn sgm_iterative<T: Real>(pot: &Potentials<T>, dirs: &DirectionSet, iterations: usize) -> Result<Vec<CostOutput<T>>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut it = SgmIterative::new(pot, dirs)?;
    (0..iterations).map(|_| it.step()).collect()
}

/// Stateful iterated standard SGM.
pub struct SgmIterative<'a, T> {
    pot: &'a Potentials<T>,
    dirs: DirectionSet,
    current: Potentials<T>,
}

impl<'a, T: Real> SgmIterative<'a, T> {
    pub fn new(pot: &'a Potentials<T>, dirs: &DirectionSet) -> Result<Self> {
        prepare(pot, dirs)?;
        Ok(Self { pot, dirs: dirs.clone(), current: pot.clone() })
    }

    pub fn step(&mut self) -> Result<CostOutput<T>> {
        let out = sgm_forward(&self.current, &self.dirs, SgmVariant::Standard)?;
        let l = self.pot.labels();
        // Per-node shifts are a reparametrization: argmins and the next
        // pass's messages are unchanged up to per-node constants.
        let mut next = out.costs.data.clone();
        next.par_chunks_mut(l).for_each(|c| {
            let lo = c.iter().copied().fold(T::infinity(), T::min);
            c.iter_mut().for_each(|v| *v = *v - lo);
        });
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("iterative SGM unary"));
        }
        self.current.unary.data = next;
        Ok(out)
    }
}

/// Local mean-field with synchronous updates.
pub struct MeanField<'a, T> {
    pot: &'a Potentials<T>,
    grid: GridGraph,
    dirs: DirectionSet,
    q: Vec<T>,
}

fn softmin_into<T: Real>(a: &[T], q: &mut [T]) {
    let lo = a.iter().copied().fold(T::infinity(), T::min);
    let mut z = T::zero();
    for (qv, &av) in q.iter_mut().zip(a) {
        *qv = (lo - av).exp();
        z = z + *qv;
    }
    q.iter_mut().for_each(|v| *v = *v / z);
}

impl<'a, T: Real> MeanField<'a, T> {
    pub fn new(pot: &'a Potentials<T>, dirs: &DirectionSet) -> Result<Self> {
        let topo = prepare(pot, dirs)?;
        let l = pot.labels();
        let mut q = vec![T::zero(); pot.unary.data.len()];
        q.par_chunks_mut(l).enumerate().for_each(|(i, qi)| softmin_into(pot.unary.node(i), qi));
        Ok(Self { pot, grid: topo.grid, dirs: dirs.clone(), q })
    }

    /// Expected energies `a_i(λ)` under the current beliefs.
    fn fields(&self) -> Vec<T> {
        let l = self.pot.labels();
        let g = self.grid;
        let pw = &self.pot.pairwise;
        let mut a = self.pot.unary.data.clone();
        a.par_chunks_mut(l).enumerate().for_each(|(i, ai)| {
            let (y, x) = g.coords(i);
            for d in self.dirs.iter() {
                let Some((py, px)) = g.previous_node((y, x), d) else { continue };
                let j = g.node(py, px);
                let w = self.pot.weights.get(d, i);
                let qj = &self.q[j * l..(j + 1) * l];
                for (lambda, av) in ai.iter_mut().enumerate() {
                    let mut s = T::zero();
                    for (mu, &qm) in qj.iter().enumerate() {
                        s = s + qm * pw.get(mu, lambda);
                    }
                    *av = *av + w * s;
                }
            }
        });
        a
    }

    pub fn step(&mut self) {
        let l = self.pot.labels();
        let a = self.fields();
        self.q.par_chunks_mut(l).zip(a.par_chunks(l)).for_each(|(qi, ai)| softmin_into(ai, qi));
    }

    pub fn beliefs(&self) -> &[T] {
        &self.q
    }

    /// Costs `-ln Q_i(λ)`; their argmin is the most probable label.
    pub fn output(&self) -> CostOutput<T> {
        let l = self.pot.labels();
        let data = self.q.iter().map(|&v| -v.max(T::min_positive_value()).ln()).collect();
        let costs = UnaryVolume { height: self.grid.height, width: self.grid.width, labels: l, data };
        let labels = self.q.chunks(l).map(|qi| argmax(qi) as u8).collect();
        CostOutput { costs, labels }
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let neg: Vec<T> = v.iter().map(|&x| -x).collect();
    argmin(&neg)
}

pub fn meanfield_forward<T: Real>(pot: &Potentials<T>, dirs: &DirectionSet, iterations: usize) -> Result<CostOutput<T>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut mf = MeanField::new(pot, dirs)?;
    for _ in 0..iterations {
        mf.step();
    }
    Ok(mf.output())
}

/// 4-connected energies after each iteration of iterated standard SGM.
pub fn sgm_iterate_energy<T: Real>(pot: &Potentials<T>, dirs: &DirectionSet, iterations: usize) -> Result<Vec<f64>> {
    sgm_iterative(pot, dirs, iterations)?.iter().map(|o| energy(pot, &o.labels, 4)).collect()
}

/// 4-connected energies after each mean-field iteration.
pub fn meanfield_iterate_energy<T: Real>(pot: &Potentials<T>, dirs: &DirectionSet, iterations: usize) -> Result<Vec<f64>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut mf = MeanField::new(pot, dirs)?;
    (0..iterations)
        .map(|_| {
            mf.step();
            energy(pot, &mf.output().labels, 4)
        })
        .collect()
}
