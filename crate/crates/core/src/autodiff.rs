//! Analytic backpropagation through ISGMR and TRWP, driven entirely by the
//! argmin indices recorded in the forward pass, plus a differentiable
//! soft-argmin regression head with an L1 loss.
//!
//! A message gradient only flows along the edge that attained the minimum
//! for each label, so one backward sweep costs `O(L)` per node against the
//! forward `O(L²)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DirectionPlan, DirectionSet};
use crate::isgmr::{isgmr_forward, ForwardOutput};
use crate::kernel::{prepare, relax_backward};
use crate::messages::{IndexStore, MessageField};
use crate::potentials::{EdgeField, Potentials, TreeCoefficients, UnaryVolume};
use crate::real::Real;
use crate::shared::SharedMut;
use crate::trwp::trwp_forward;

/// Gradients of a scalar loss with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    /// `∇θ_i(λ)`, laid out like the unary volume.
    pub unary: Vec<T>,
    /// `∇θ_{i,j}`, both orientations of an edge summed into one cell.
    pub edge_weights: EdgeField<T>,
    /// `∇V(μ, λ)` at `μ·L + λ`.
    pub pairwise: Vec<T>,
}

/// Soft-argmin regression outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftHead<T> {
    /// `f_i(λ) = softmin(c_i)(λ)`.
    pub confidence: Vec<T>,
    /// `d_i = Σ_λ λ f_i(λ)`.
    pub regression: Vec<T>,
    /// Mean absolute error against the target.
    pub loss: T,
    pub labels: usize,
}

pub fn soft_head_forward<T: Real>(costs: &UnaryVolume<T>, target: &[T]) -> Result<SoftHead<T>> {
    let l = costs.labels;
    let n = costs.height * costs.width;
    if target.len() != n {
        return Err(Error::Shape(format!("target has {} entries, expected {n}", target.len())));
    }
    if costs.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("costs"));
    }
    let mut confidence = vec![T::zero(); costs.data.len()];
    let mut regression = vec![T::zero(); n];
    confidence
        .par_chunks_mut(l)
        .zip(costs.data.par_chunks(l))
        .zip(regression.par_iter_mut())
        .for_each(|((f, c), d)| {
            let lo = c.iter().copied().fold(T::infinity(), T::min);
            let mut z = T::zero();
            for (fv, &cv) in f.iter_mut().zip(c) {
                *fv = (lo - cv).exp();
                z = z + *fv;
            }
            let mut acc = T::zero();
            for (lambda, fv) in f.iter_mut().enumerate() {
                *fv = *fv / z;
                acc = acc + T::from_f64(lambda as f64) * *fv;
            }
            *d = acc;
        });
    let loss = regression.iter().zip(target).map(|(&d, &g)| (d - g).abs()).sum::<T>() / T::from_f64(n as f64);
    Ok(SoftHead { confidence, regression, loss, labels: l })
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `∇c` of the mean L1 loss; the subgradient at zero residual is 0.
pub fn soft_head_backward<T: Real>(head: &SoftHead<T>, target: &[T], height: usize, width: usize) -> UnaryVolume<T> {
    let l = head.labels;
    let n = head.regression.len();
    let scale = T::one() / T::from_f64(n as f64);
    let mut grad = vec![T::zero(); head.confidence.len()];
    grad.par_chunks_mut(l).enumerate().for_each(|(i, gc)| {
        let s = sign(head.regression[i] - target[i]) * scale;
        if s == T::zero() {
            return;
        }
        let d = head.regression[i];
        let f = &head.confidence[i * l..(i + 1) * l];
        for (lambda, (g, &fv)) in gc.iter_mut().zip(f).enumerate() {
            // ∂d/∂c(λ) = -f(λ)(λ - d)
            *g = -s * fv * (T::from_f64(lambda as f64) - d);
        }
    });
    UnaryVolume { height, width, labels: l, data: grad }
}

struct Workspace<T> {
    grad_unary: Vec<T>,
    edge: Vec<Vec<T>>,
    vgrad: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn new(grad_c: &UnaryVolume<T>, dirs: usize, l: usize) -> Self {
        let n = grad_c.height * grad_c.width;
        Self { grad_unary: grad_c.data.clone(), edge: vec![vec![T::zero(); n]; dirs], vgrad: vec![T::zero(); l * l] }
    }

    fn finish(self, pot: &Potentials<T>, dirs: &DirectionSet) -> GradientSet<T> {
        let mut edge_weights = pot.weights.zeros_like();
        for (r, plane) in self.edge.iter().enumerate() {
            let d = dirs.get(r);
            for (i, &g) in plane.iter().enumerate() {
                if g != T::zero() {
                    let (f, c) = edge_weights.cell(d, i);
                    edge_weights.planes[f][c] = edge_weights.planes[f][c] + g;
                }
            }
        }
        GradientSet { unary: self.grad_unary, edge_weights, pairwise: self.vgrad }
    }
}

fn add_in_order<T: Real>(acc: &mut [T], parts: Vec<Vec<T>>) {
    for part in parts {
        for (a, v) in acc.iter_mut().zip(part) {
            *a = *a + v;
        }
    }
}

fn check_grad_shape<T: Real>(pot: &Potentials<T>, grad_c: &UnaryVolume<T>) -> Result<()> {
    if grad_c.height != pot.unary.height || grad_c.width != pot.unary.width || grad_c.labels != pot.labels() {
        return Err(Error::Shape("cost gradient does not match the model".into()));
    }
    Ok(())
}

/// Backward sweep of one ISGMR direction. Consumes `grad` (the gradient of
/// this direction's new messages), routes into `routed` (shared target of the
/// source unary, source message and other-direction messages) and `edge`.
/// Returns the direction's pairwise-function gradient.
#[allow(clippy::too_many_arguments)]
fn isgmr_sweep_back<T: Real>(
    pot: &Potentials<T>,
    plan: &DirectionPlan,
    p: &[u8],
    q: &[u8],
    grad: &mut [T],
    routed: &mut [T],
    edge: &mut [T],
) -> Vec<T> {
    let l = pot.labels();
    let v = &pot.pairwise.matrix;
    let grad = SharedMut::new(grad);
    let routed = SharedMut::new(routed);
    let edge = SharedMut::new(edge);
    let parts: Vec<Vec<T>> = plan
        .scanlines
        .par_iter()
        .zip(&plan.edge_offsets)
        .map(|(line, &e0)| {
            let mut vg = vec![T::zero(); l * l];
            let mut route = vec![T::zero(); l];
            for t in (0..line.nodes.len() - 1).rev() {
                let (j, i) = (line.nodes[t], line.nodes[t + 1]);
                let e = e0 + t;
                route.iter_mut().for_each(|x| *x = T::zero());
                // SAFETY: all touched nodes belong to this worker's scanline.
                unsafe {
                    let gi = grad.slice_mut(i * l, l);
                    let w = pot.weights.get(&plan.dir, i);
                    let eg = relax_backward(gi, q[e], &p[e * l..(e + 1) * l], w, v, &mut route, &mut vg);
                    let ei = edge.slice_mut(i, 1);
                    ei[0] = ei[0] + eg;
                    gi.iter_mut().for_each(|x| *x = T::zero());
                    for ((gj, aj), &rv) in grad.slice_mut(j * l, l).iter_mut().zip(routed.slice_mut(j * l, l)).zip(&route) {
                        *gj = *gj + rv;
                        *aj = *aj + rv;
                    }
                }
            }
            // The head's message is constant; its gradient is dropped.
            unsafe { grad.slice_mut(line.nodes[0] * l, l) }.iter_mut().for_each(|x| *x = T::zero());
            vg
        })
        .collect();
    let mut out = vec![T::zero(); l * l];
    add_in_order(&mut out, parts);
    out
}

/// Gradients of all parameters through `iterations` ISGMR iterations.
pub fn isgmr_backward<T: Real>(
    pot: &Potentials<T>,
    dirs: &DirectionSet,
    indices: &IndexStore,
    grad_c: &UnaryVolume<T>,
    iterations: usize,
) -> Result<GradientSet<T>> {
    let topo = prepare(pot, dirs)?;
    check_grad_shape(pot, grad_c)?;
    let edges: Vec<usize> = topo.plans.iter().map(|p| p.edge_count).collect();
    indices.check(pot.labels(), &edges, iterations)?;
    let (n, l, nd) = (topo.grid.len(), pot.labels(), dirs.len());
    let mut ws = Workspace::new(grad_c, nd, l);

    // Gradient of each direction's newest messages, initially ∇c.
    let mut grad_hat = MessageField::<T>::zeros(nd, n, l);
    let plane = grad_hat.plane_len();
    grad_hat.data.par_chunks_mut(plane).for_each(|g| g.copy_from_slice(&grad_c.data));
    let mut routed = MessageField::<T>::zeros(nd, n, l);

    for k in (0..iterations).rev() {
        routed.fill_zero();
        let vparts: Vec<Vec<T>> = grad_hat
            .data
            .par_chunks_mut(plane)
            .zip(routed.data.par_chunks_mut(plane))
            .zip(ws.edge.par_iter_mut())
            .enumerate()
            .map(|(r, ((g, a), e))| {
                isgmr_sweep_back(pot, &topo.plans[r], indices.p_block(k, r), indices.q_block(k, r), g, a, e)
            })
            .collect();
        add_in_order(&mut ws.vgrad, vparts);

        // Gather: the unary of the source node received every direction's
        // routed gradient; the previous iteration's messages of direction d
        // received those of every direction that read them.
        ws.grad_unary.par_chunks_mut(l).enumerate().for_each(|(i, gu)| {
            for r in 0..nd {
                for (g, &a) in gu.iter_mut().zip(routed.at(r, i)) {
                    *g = *g + a;
                }
            }
        });
        grad_hat.data.par_chunks_mut(plane).enumerate().for_each(|(d, g)| {
            g.iter_mut().for_each(|x| *x = T::zero());
            for &r in &topo.others[d] {
                for (x, &a) in g.iter_mut().zip(routed.plane(r)) {
                    *x = *x + a;
                }
            }
        });
    }
    Ok(ws.finish(pot, dirs))
}

/// Backward sweep of one TRWP direction over the shared gradient planes.
#[allow(clippy::too_many_arguments)]
fn trwp_sweep_back<T: Real>(
    pot: &Potentials<T>,
    rho: &TreeCoefficients<T>,
    plan: &DirectionPlan,
    r: usize,
    opposite: Option<usize>,
    p: &[u8],
    q: &[u8],
    grad_m: &mut MessageField<T>,
    grad_unary: &mut [T],
    edge: &mut [T],
) -> Vec<T> {
    let l = pot.labels();
    let nd = grad_m.dirs;
    let plane = grad_m.plane_len();
    let v = &pot.pairwise.matrix;
    let gm = SharedMut::new(&mut grad_m.data);
    let gu = SharedMut::new(grad_unary);
    let edge = SharedMut::new(edge);
    let parts: Vec<Vec<T>> = plan
        .scanlines
        .par_iter()
        .zip(&plan.edge_offsets)
        .map(|(line, &e0)| {
            let mut vg = vec![T::zero(); l * l];
            let mut route = vec![T::zero(); l];
            let mut gi = vec![T::zero(); l];
            for t in (0..line.nodes.len() - 1).rev() {
                let (j, i) = (line.nodes[t], line.nodes[t + 1]);
                let e = e0 + t;
                route.iter_mut().for_each(|x| *x = T::zero());
                // SAFETY: all touched nodes belong to this worker's scanline.
                unsafe {
                    gi.copy_from_slice(gm.slice(r * plane + i * l, l));
                    let w = pot.weights.get(&plan.dir, i);
                    let eg = relax_backward(&mut gi, q[e], &p[e * l..(e + 1) * l], w, v, &mut route, &mut vg);
                    let ei = edge.slice_mut(i, 1);
                    ei[0] = ei[0] + eg;
                    let rho_e = rho.get(&plan.dir, i);
                    for (g, &rv) in gu.slice_mut(j * l, l).iter_mut().zip(&route) {
                        *g = *g + rho_e * rv;
                    }
                    for d in 0..nd {
                        for (g, &rv) in gm.slice_mut(d * plane + j * l, l).iter_mut().zip(&route) {
                            *g = *g + rho_e * rv;
                        }
                    }
                    if let Some(o) = opposite {
                        for (g, &rv) in gm.slice_mut(o * plane + j * l, l).iter_mut().zip(&route) {
                            *g = *g - rv;
                        }
                    }
                }
            }
            vg
        })
        .collect();
    // The direction's messages are consumed; earlier values are new variables.
    grad_m.data[r * plane..(r + 1) * plane].iter_mut().for_each(|x| *x = T::zero());
    let mut out = vec![T::zero(); l * l];
    add_in_order(&mut out, parts);
    out
}

/// Gradients of all parameters through `iterations` TRWP iterations.
pub fn trwp_backward<T: Real>(
    pot: &Potentials<T>,
    rho: &TreeCoefficients<T>,
    dirs: &DirectionSet,
    indices: &IndexStore,
    grad_c: &UnaryVolume<T>,
    iterations: usize,
) -> Result<GradientSet<T>> {
    let topo = prepare(pot, dirs)?;
    check_grad_shape(pot, grad_c)?;
    let edges: Vec<usize> = topo.plans.iter().map(|p| p.edge_count).collect();
    indices.check(pot.labels(), &edges, iterations)?;
    let (n, l, nd) = (topo.grid.len(), pot.labels(), dirs.len());
    let mut ws = Workspace::new(grad_c, nd, l);
    let mut grad_m = MessageField::<T>::zeros(nd, n, l);
    let plane = grad_m.plane_len();
    grad_m.data.par_chunks_mut(plane).for_each(|g| g.copy_from_slice(&grad_c.data));

    for k in (0..iterations).rev() {
        for r in (0..nd).rev() {
            let vg = trwp_sweep_back(
                pot,
                rho,
                &topo.plans[r],
                r,
                topo.opposites[r],
                indices.p_block(k, r),
                indices.q_block(k, r),
                &mut grad_m,
                &mut ws.grad_unary,
                &mut ws.edge[r],
            );
            add_in_order(&mut ws.vgrad, vec![vg]);
        }
    }
    Ok(ws.finish(pot, dirs))
}

/// Which engine a differentiable pipeline runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Engine<T> {
    Isgmr,
    Trwp(TreeCoefficients<T>),
}

/// Forward pass plus soft-argmin L1 loss.
pub fn pipeline_loss<T: Real>(
    pot: &Potentials<T>,
    engine: &Engine<T>,
    dirs: &DirectionSet,
    iterations: usize,
    target: &[T],
) -> Result<(T, ForwardOutput<T>)> {
    let fwd = match engine {
        Engine::Isgmr => isgmr_forward(pot, dirs, iterations)?,
        Engine::Trwp(rho) => trwp_forward(pot, rho, dirs, iterations)?,
    };
    let head = soft_head_forward(&fwd.output.costs, target)?;
    Ok((head.loss, fwd))
}

/// Loss and analytic gradients of the full pipeline.
pub fn pipeline_gradients<T: Real>(
    pot: &Potentials<T>,
    engine: &Engine<T>,
    dirs: &DirectionSet,
    iterations: usize,
    target: &[T],
) -> Result<(T, GradientSet<T>, ForwardOutput<T>)> {
    let (_, fwd) = pipeline_loss(pot, engine, dirs, iterations, target)?;
    let head = soft_head_forward(&fwd.output.costs, target)?;
    let grad_c = soft_head_backward(&head, target, pot.unary.height, pot.unary.width);
    let grads = match engine {
        Engine::Isgmr => isgmr_backward(pot, dirs, &fwd.indices, &grad_c, iterations)?,
        Engine::Trwp(rho) => trwp_backward(pot, rho, dirs, &fwd.indices, &grad_c, iterations)?,
    };
    Ok((head.loss, grads, fwd))
}
