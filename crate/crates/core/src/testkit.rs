//! Independent correctness oracles.
//!
//! Nothing here touches the engines' message code: the exhaustive search and
//! chain dynamic program carry their own energy and recursion. The gradient
//! check drives the public pipeline only through its scalar loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{pipeline_gradients, pipeline_loss, Engine};
use crate::error::{Error, Result};
use crate::grid::DirectionSet;
use crate::messages::IndexStore;
use crate::potentials::{EdgeField, PairwiseFunction, Potentials, TreeCoefficients, UnaryVolume};

/// Largest search space [`brute_force_map`] accepts.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;
pub const CHAIN_MAX_LEN: usize = 14;
pub const CHAIN_MAX_LABELS: usize = 6;

// Canonical offsets of the undirected edge families, in storage order.
const FAMILY_OFFSETS: [(i64, i64); 8] = [(0, 1), (1, 0), (1, 1), (1, -1), (1, 2), (1, -2), (2, 1), (2, -1)];

fn edge_list(pot: &Potentials<f64>, connectivity: usize) -> Result<Vec<(usize, usize, f64)>> {
    let families = match connectivity {
        4 | 8 | 16 => connectivity / 2,
        c => return Err(Error::Connectivity(c)),
    };
    if families > pot.weights.planes.len() {
        return Err(Error::Shape("model lacks edge families for this connectivity".into()));
    }
    let (h, w) = (pot.unary.height as i64, pot.unary.width as i64);
    let mut edges = Vec::new();
    for (f, &(dy, dx)) in FAMILY_OFFSETS.iter().enumerate().take(families) {
        for y in 0..h {
            for x in 0..w {
                let (ty, tx) = (y - dy, x - dx);
                if ty < 0 || tx < 0 || ty >= h || tx >= w {
                    continue;
                }
                let head = (y * w + x) as usize;
                edges.push(((ty * w + tx) as usize, head, pot.weights.planes[f][head]));
            }
        }
    }
    Ok(edges)
}

/// Exhaustive MAP search; ties go to the lexicographically smallest labelling.
pub fn brute_force_map(pot: &Potentials<f64>, connectivity: usize) -> Result<(Vec<u8>, f64)> {
    let n = pot.unary.height * pot.unary.width;
    let l = pot.labels();
    let space = (l as f64).powi(n as i32);
    if space > BRUTE_FORCE_LIMIT as f64 {
        return Err(Error::TooLarge(format!("{l}^{n} labellings exceed {BRUTE_FORCE_LIMIT}")));
    }
    let edges = edge_list(pot, connectivity)?;
    let v = |a: usize, b: usize| pot.pairwise.matrix[a * l + b];
    let eval = |x: &[usize]| {
        let mut e: f64 = x.iter().enumerate().map(|(i, &xi)| pot.unary.data[i * l + xi]).sum();
        for &(t, hd, wt) in &edges {
            e += wt * v(x[t], x[hd]);
        }
        e
    };
    let mut x = vec![0usize; n];
    let mut best = (x.clone(), eval(&x));
    loop {
        // Odometer with the last node fastest, i.e. lexicographic order.
        let mut pos = n;
        loop {
            if pos == 0 {
                let labels = best.0.iter().map(|&v| v as u8).collect();
                return Ok((labels, best.1));
            }
            pos -= 1;
            x[pos] += 1;
            if x[pos] < l {
                break;
            }
            x[pos] = 0;
        }
        let e = eval(&x);
        if e < best.1 {
            best = (x.clone(), e);
        }
    }
}

/// Exact min-marginals `min_{x: x_i = λ} E(x)` of a chain.
///
/// `weights[i]` scales `V(x_i, x_{i+1})`; `v` is row-major `L × L`.
pub fn chain_min_marginals(unary: &[Vec<f64>], weights: &[f64], v: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = unary.len();
    if n == 0 || n > CHAIN_MAX_LEN {
        return Err(Error::TooLarge(format!("chain length {n} outside 1..={CHAIN_MAX_LEN}")));
    }
    let l = unary[0].len();
    if l == 0 || l > CHAIN_MAX_LABELS {
        return Err(Error::TooLarge(format!("{l} labels outside 1..={CHAIN_MAX_LABELS}")));
    }
    if unary.iter().any(|u| u.len() != l) || weights.len() != n - 1 || v.len() != l * l {
        return Err(Error::Shape("inconsistent chain description".into()));
    }
    let mut fwd = vec![vec![0.0; l]; n];
    let mut bwd = vec![vec![0.0; l]; n];
    for i in 1..n {
        for b in 0..l {
            fwd[i][b] = (0..l)
                .map(|a| unary[i - 1][a] + fwd[i - 1][a] + weights[i - 1] * v[a * l + b])
                .fold(f64::INFINITY, f64::min);
        }
    }
    for i in (0..n - 1).rev() {
        for a in 0..l {
            bwd[i][a] = (0..l)
                .map(|b| unary[i + 1][b] + bwd[i + 1][b] + weights[i] * v[a * l + b])
                .fold(f64::INFINITY, f64::min);
        }
    }
    Ok((0..n).map(|i| (0..l).map(|a| unary[i][a] + fwd[i][a] + bwd[i][a]).collect()).collect())
}

/// Central differences of `loss` at `x`, one coordinate at a time.
pub fn finite_difference(mut loss: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidParameter(format!("step {step}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = loss(&probe)?;
        probe[i] = x[i] - step;
        let lo = loss(&probe)?;
        probe[i] = x[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        out.push((hi - lo) / (2.0 * step));
    }
    Ok(out)
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Which engine a gradient check exercises.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckEngine {
    Isgmr,
    Trwp { rho: f64 },
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub height: usize,
    pub width: usize,
    pub labels: usize,
    pub iterations: usize,
    pub connectivity: usize,
    pub engine: CheckEngine,
    pub step: f64,
    pub floor: f64,
    pub max_resamples: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            height: 6,
            width: 6,
            labels: 4,
            iterations: 2,
            connectivity: 4,
            engine: CheckEngine::Isgmr,
            step: 1e-3,
            floor: 1e-6,
            max_resamples: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub seed: u64,
    pub max_rel_error: f64,
    /// Parameter group and index of the worst coordinate.
    pub worst: (&'static str, usize),
    pub coordinates: usize,
    pub resamples: usize,
}

/// Random MRF whose parameters are generic enough to avoid argmin ties.
pub fn random_check_instance(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<(Potentials<f64>, Vec<f64>)> {
    let (h, w, l) = (cfg.height, cfg.width, cfg.labels);
    let unary = (0..h * w * l).map(|_| rng.gen_range(0.0..4.0)).collect();
    let unary = UnaryVolume::new(h, w, l, unary)?;
    let mut weights = EdgeField::constant(h, w, cfg.connectivity, 0.0)?;
    for plane in &mut weights.planes {
        plane.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
    }
    let matrix = (0..l * l)
        .map(|k| if k / l == k % l { rng.gen_range(0.0..0.2) } else { rng.gen_range(0.5..2.0) })
        .collect();
    let pot = Potentials::new(unary, weights, PairwiseFunction::explicit(l, matrix)?)?;
    let target = (0..h * w).map(|_| rng.gen_range(0.0..(l - 1) as f64)).collect();
    Ok((pot, target))
}

fn flatten(pot: &Potentials<f64>) -> Vec<f64> {
    let mut x = pot.unary.data.clone();
    for plane in &pot.weights.planes {
        x.extend_from_slice(plane);
    }
    x.extend_from_slice(&pot.pairwise.matrix);
    x
}

fn unflatten(base: &Potentials<f64>, x: &[f64]) -> Result<Potentials<f64>> {
    let nu = base.unary.data.len();
    let np = base.unary.height * base.unary.width;
    let mut pot = base.clone();
    pot.unary.data.copy_from_slice(&x[..nu]);
    let mut off = nu;
    for plane in &mut pot.weights.planes {
        plane.copy_from_slice(&x[off..off + np]);
        off += np;
    }
    pot.pairwise = PairwiseFunction::explicit(base.labels(), x[off..].to_vec())?;
    Ok(pot)
}

/// Runs one gradient check, resampling the instance whenever a perturbation
/// flips any recorded argmin or the sign of any regression residual.
pub fn grad_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let dirs = DirectionSet::connectivity(cfg.connectivity)?;
    let engine = match cfg.engine {
        CheckEngine::Isgmr => Engine::Isgmr,
        CheckEngine::Trwp { rho } => Engine::Trwp(TreeCoefficients::uniform(rho)?),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'sample: for resamples in 0..=cfg.max_resamples {
        let (pot, target) = random_check_instance(cfg, &mut rng)?;
        let (_, grads, fwd) = pipeline_gradients(&pot, &engine, &dirs, cfg.iterations, &target)?;
        let residual_signs = |pot: &Potentials<f64>| -> Result<(IndexStore, Vec<bool>, f64)> {
            let (loss, f) = pipeline_loss(pot, &engine, &dirs, cfg.iterations, &target)?;
            let head = crate::autodiff::soft_head_forward(&f.output.costs, &target)?;
            let signs = head.regression.iter().zip(&target).map(|(d, g)| d > g).collect();
            Ok((f.indices, signs, loss))
        };
        let (_, base_signs, _) = residual_signs(&pot)?;
        let x = flatten(&pot);
        let mut tie = false;
        let numeric = finite_difference(
            |probe| {
                let p = unflatten(&pot, probe)?;
                let (idx, signs, loss) = residual_signs(&p)?;
                if idx != fwd.indices || signs != base_signs {
                    tie = true;
                }
                Ok(loss)
            },
            &x,
            cfg.step,
        )?;
        if tie {
            continue 'sample;
        }
        let mut analytic = grads.unary.clone();
        for plane in &grads.edge_weights.planes {
            analytic.extend_from_slice(plane);
        }
        analytic.extend_from_slice(&grads.pairwise);

        let nu = grads.unary.len();
        let np = pot.unary.height * pot.unary.width;
        let families = pot.weights.planes.len();
        let mut worst = (0.0, ("unary", 0));
        let mut coordinates = 0;
        for (k, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let (group, idx) = if k < nu {
                ("unary", k)
            } else if k < nu + families * np {
                let c = k - nu;
                if !pot.weights.is_edge(c / np, c % np) {
                    continue;
                }
                ("edge_weight", c)
            } else {
                ("pairwise", k - nu - families * np)
            };
            coordinates += 1;
            let e = relative_error(a, n, cfg.floor);
            if e > worst.0 {
                worst = (e, (group, idx));
            }
        }
        return Ok(GradCheckReport { seed, max_rel_error: worst.0, worst: worst.1, coordinates, resamples });
    }
    Err(Error::InvalidParameter(format!(
        "no tie-free instance found for seed {seed} after {} resamples",
        cfg.max_resamples
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{energy, PairwiseKind};

    fn potts_pot(h: usize, w: usize, l: usize, unary: Vec<f64>, weight: f64) -> Potentials<f64> {
        let u = UnaryVolume::new(h, w, l, unary).unwrap();
        Potentials::with_constant_weight(u, PairwiseFunction::build(PairwiseKind::Potts, l).unwrap(), 4, weight)
            .unwrap()
    }

    #[test]
    fn single_node_map() {
        let (x, e) = brute_force_map(&potts_pot(1, 1, 2, vec![3.0, 1.0], 1.0), 4).unwrap();
        assert_eq!((x, e), (vec![1], 1.0));
    }

    #[test]
    fn zero_unary_ties_to_smallest() {
        let (x, e) = brute_force_map(&potts_pot(1, 2, 2, vec![0.0; 4], 1.0), 4).unwrap();
        assert_eq!((x, e), (vec![0, 0], 0.0));
    }

    #[test]
    fn brute_force_matches_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pot = potts_pot(2, 3, 3, (0..18).map(|_| rng.gen_range(0.0..2.0)).collect(), 0.7);
        let (x, e) = brute_force_map(&pot, 4).unwrap();
        assert!((energy(&pot, &x, 4).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn brute_force_refuses_large() {
        let pot = potts_pot(4, 6, 4, vec![0.0; 96], 1.0);
        assert!(matches!(brute_force_map(&pot, 4), Err(Error::TooLarge(_))));
    }

    #[test]
    fn chain_length_one_is_unary() {
        let t = chain_min_marginals(&[vec![1.0, 2.0]], &[], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(t, vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn chain_matches_brute_force_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = 3;
        let unary: Vec<f64> = (0..5 * l).map(|_| rng.gen_range(0.0..3.0)).collect();
        let pot = potts_pot(1, 5, l, unary.clone(), 1.3);
        let rows: Vec<Vec<f64>> = unary.chunks(l).map(|c| c.to_vec()).collect();
        let table = chain_min_marginals(&rows, &[1.3; 4], &pot.pairwise.matrix).unwrap();
        let (_, e) = brute_force_map(&pot, 4).unwrap();
        for row in table {
            let m = row.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((m - e).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_limits() {
        let rows = vec![vec![0.0; 7]; 2];
        assert!(chain_min_marginals(&rows, &[1.0], &[0.0; 49]).is_err());
    }

    #[test]
    fn fd_on_polynomials() {
        let g = finite_difference(|x| Ok(3.0 * x[0] - 2.0 * x[1]), &[0.4, -1.0], 1e-3).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-10 && (g[1] + 2.0).abs() < 1e-10);
        let g = finite_difference(|x| Ok(x[0] * x[0] + 0.5 * x[1] * x[1]), &[1.5, -2.0], 1e-3).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8 && (g[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn fd_rejects_non_finite() {
        assert!(finite_difference(|_| Ok(f64::NAN), &[0.0], 1e-3).is_err());
    }
}
