//! Seeded synthetic instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::io::{stereo_unaries, Image};
use crate::potentials::{PairwiseFunction, PairwiseKind, Potentials, UnaryVolume};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random unaries in `[0, scale)`.
pub fn random_unary(rng: &mut ChaCha8Rng, height: usize, width: usize, labels: usize, scale: f64) -> Result<UnaryVolume<f64>> {
    let data = (0..height * width * labels).map(|_| rng.gen_range(0.0..scale)).collect();
    UnaryVolume::new(height, width, labels, data)
}

/// Random unaries with a constant-weight pairwise term.
pub fn random_potentials(
    seed: u64,
    height: usize,
    width: usize,
    labels: usize,
    connectivity: usize,
    kind: PairwiseKind,
    weight: f64,
) -> Result<Potentials<f64>> {
    let mut r = rng(seed);
    let unary = random_unary(&mut r, height, width, labels, 4.0)?;
    Potentials::with_constant_weight(unary, PairwiseFunction::build(kind, labels)?, connectivity, weight)
}

/// A rectified stereo pair with piecewise-constant disparity.
#[derive(Debug, Clone)]
pub struct StereoPair {
    pub left: Image,
    pub right: Image,
    pub disparity: Vec<u8>,
}

/// Smooth random texture for the right view, a few rectangles of constant
/// disparity on a background plane, and Gaussian sensor noise on both views.
pub fn stereo_pair(seed: u64, height: usize, width: usize, max_disp: usize) -> StereoPair {
    let mut r = rng(seed);
    let raw: Vec<f64> = (0..height * width).map(|_| r.gen_range(0.0..255.0)).collect();
    let mut texture = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let (mut s, mut c) = (0.0, 0.0);
            for yy in y.saturating_sub(1)..(y + 2).min(height) {
                for xx in x.saturating_sub(1)..(x + 2).min(width) {
                    s += raw[yy * width + xx];
                    c += 1.0;
                }
            }
            texture[y * width + x] = s / c;
        }
    }

    let top = max_disp.saturating_sub(1);
    let mut disparity = vec![r.gen_range(0..=top / 2) as u8; height * width];
    for _ in 0..3 {
        let (h0, w0) = (r.gen_range(0..height), r.gen_range(0..width));
        let (h1, w1) = ((h0 + r.gen_range(height / 4..=height / 2 + 1)).min(height), (w0 + r.gen_range(width / 4..=width / 2 + 1)).min(width));
        let d = r.gen_range(0..=top) as u8;
        for y in h0..h1 {
            disparity[y * width + w0..y * width + w1].fill(d);
        }
    }

    let noise = Normal::new(0.0, 4.0).expect("valid sigma");
    let clamp = |v: f64, r: &mut ChaCha8Rng| (v + noise.sample(r)).round().clamp(0.0, 255.0) as u16;
    let mut left = vec![0u16; height * width];
    let mut right = vec![0u16; height * width];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            right[i] = clamp(texture[i], &mut r);
            let xs = x.saturating_sub(disparity[i] as usize);
            left[i] = clamp(texture[y * width + xs], &mut r);
        }
    }
    StereoPair {
        left: Image { height, width, maxval: 255, data: left },
        right: Image { height, width, maxval: 255, data: right },
        disparity,
    }
}

/// Stereo MRF from [`stereo_pair`]: absolute-difference unaries scaled to
/// unit intensity steps of 1/16, truncated-linear pairwise term.
pub fn stereo_instance(seed: u64, height: usize, width: usize, labels: usize, tau: f64, weight: f64, connectivity: usize) -> Result<Potentials<f64>> {
    let pair = stereo_pair(seed, height, width, labels);
    let mut unary = stereo_unaries::<f64>(&pair.left, &pair.right, labels)?;
    unary.data.iter_mut().for_each(|v| *v /= 16.0);
    let pw = PairwiseFunction::build(PairwiseKind::TruncatedLinear { tau }, labels)?;
    Potentials::with_constant_weight(unary, pw, connectivity, weight)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_is_seeded() {
        let a = stereo_pair(5, 8, 10, 4);
        let b = stereo_pair(5, 8, 10, 4);
        assert_eq!(a.left.data, b.left.data);
        assert_eq!(a.disparity, b.disparity);
        assert!(a.disparity.iter().all(|&d| d < 4));
        assert_ne!(stereo_pair(6, 8, 10, 4).right.data, a.right.data);
    }

    #[test]
    fn instance_shape() {
        let p = stereo_instance(1, 6, 7, 5, 2.0, 1.0, 8).unwrap();
        assert_eq!((p.unary.height, p.unary.width, p.labels()), (6, 7, 5));
        assert_eq!(p.weights.families(), 4);
    }
}
