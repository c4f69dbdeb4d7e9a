//! The min-sum relaxation shared by all scanline engines.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{DirectionSet, Topology};
use crate::messages::argmin;
use crate::potentials::{check_labels, Potentials};
use crate::real::Real;

/// `out(λ) = min_μ h(μ) + w·V(μ, λ)` with the minimizing `μ` written to
/// `p(λ)`. `vt` is the transposed pairwise matrix (`vt[λ·L + μ]`).
#[inline]
pub(crate) fn relax<T: Real>(h: &[T], w: T, vt: &[T], out: &mut [T], p: &mut [u8]) {
    let l = h.len();
    for (lambda, (o, pi)) in out.iter_mut().zip(p.iter_mut()).enumerate() {
        let row = &vt[lambda * l..(lambda + 1) * l];
        let mut best = h[0] + w * row[0];
        let mut arg = 0;
        for mu in 1..l {
            let v = h[mu] + w * row[mu];
            if v < best {
                best = v;
                arg = mu;
            }
        }
        *o = best;
        *pi = arg as u8;
    }
}

/// Same as [`relax`] without recording indices.
#[inline]
pub(crate) fn relax_values<T: Real>(h: &[T], w: T, vt: &[T], out: &mut [T]) {
    let l = h.len();
    for (lambda, o) in out.iter_mut().enumerate() {
        let row = &vt[lambda * l..(lambda + 1) * l];
        let mut best = h[0] + w * row[0];
        for mu in 1..l {
            let v = h[mu] + w * row[mu];
            if v < best {
                best = v;
            }
        }
        *o = best;
    }
}

/// Subtracts the minimum entry and returns its index.
#[inline]
pub(crate) fn reparametrize<T: Real>(out: &mut [T]) -> u8 {
    let q = argmin(out);
    let m = out[q];
    out.iter_mut().for_each(|v| *v = *v - m);
    q as u8
}

/// Backward of [`relax`] followed by [`reparametrize`] for one node.
///
/// `grad` holds `∇m_i` and is consumed in place. Each label's gradient is
/// routed to its stored source label in `routed`, and `w·∇m_i(λ)` lands in
/// `vgrad[μ·L + λ]`. Returns the edge-weight gradient `Σ_λ ∇m_i(λ) V(μ*, λ)`.
#[inline]
pub(crate) fn relax_backward<T: Real>(
    grad: &mut [T],
    q: u8,
    p: &[u8],
    w: T,
    v: &[T],
    routed: &mut [T],
    vgrad: &mut [T],
) -> T {
    let l = grad.len();
    let total: T = grad.iter().copied().sum();
    grad[q as usize] = grad[q as usize] - total;
    let mut edge = T::zero();
    for (lambda, (&g, &mu)) in grad.iter().zip(p).enumerate() {
        if g == T::zero() {
            continue;
        }
        let mu = mu as usize;
        routed[mu] = routed[mu] + g;
        edge = edge + g * v[mu * l + lambda];
        vgrad[mu * l + lambda] = vgrad[mu * l + lambda] + w * g;
    }
    edge
}

/// Validates a model against a direction set and returns its topology.
pub(crate) fn prepare<T: Real>(pot: &Potentials<T>, dirs: &DirectionSet) -> Result<Arc<Topology>> {
    check_labels(pot.labels())?;
    if pot.weights.families() < dirs.families_needed() {
        return Err(Error::Shape(format!(
            "edge weights cover {} families, directions need {}",
            pot.weights.families(),
            dirs.families_needed()
        )));
    }
    if pot.unary.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("unary volume"));
    }
    if pot.pairwise.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pairwise matrix"));
    }
    Topology::cached(pot.grid()?, dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_label_potts_message() {
        // θ_0 = (0, 2), unit Potts: message into the next node is (0, 1).
        let h = [0.0f64, 2.0];
        let vt = [0.0, 1.0, 1.0, 0.0];
        let mut out = [0.0; 2];
        let mut p = [9u8; 2];
        relax(&h, 1.0, &vt, &mut out, &mut p);
        assert_eq!(out, [0.0, 1.0]);
        assert_eq!(p, [0, 0]);
        assert_eq!(reparametrize(&mut out), 0);
    }

    #[test]
    fn ties_route_to_lowest_source() {
        let h = [1.0f64, 1.0, 1.0];
        let vt = [0.0; 9];
        let mut out = [0.0; 3];
        let mut p = [9u8; 3];
        relax(&h, 1.0, &vt, &mut out, &mut p);
        assert_eq!(p, [0, 0, 0]);
    }
}
