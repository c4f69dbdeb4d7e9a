//! MRF parameters: unary volume, edge weights, pairwise label function and
//! tree coefficients, plus energy evaluation.

use crate::error::{Error, Result};
use crate::grid::{family_count, Direction, GridGraph};
use crate::real::Real;
use crate::MAX_LABELS;

pub(crate) fn check_labels(labels: usize) -> Result<()> {
    if labels == 0 || labels > MAX_LABELS {
        return Err(Error::LabelCount(labels));
    }
    Ok(())
}

/// Per-node label costs `θ_i(λ)`, stored `H × W × L` with labels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryVolume<T> {
    pub height: usize,
    pub width: usize,
    pub labels: usize,
    pub data: Vec<T>,
}

impl<T: Real> UnaryVolume<T> {
    pub fn new(height: usize, width: usize, labels: usize, data: Vec<T>) -> Result<Self> {
        check_labels(labels)?;
        if data.len() != height * width * labels {
            return Err(Error::Shape(format!(
                "unary payload {} != {height}x{width}x{labels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("unary volume"));
        }
        Ok(Self { height, width, labels, data })
    }

    pub fn zeros(height: usize, width: usize, labels: usize) -> Result<Self> {
        Self::new(height, width, labels, vec![T::zero(); height * width * labels])
    }

    pub fn grid(&self) -> Result<GridGraph> {
        GridGraph::new(self.height, self.width)
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[T] {
        &self.data[i * self.labels..(i + 1) * self.labels]
    }

    pub fn cast<U: Real>(&self) -> UnaryVolume<U> {
        UnaryVolume {
            height: self.height,
            width: self.width,
            labels: self.labels,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Built-in pairwise label functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairwiseKind {
    Potts,
    TruncatedLinear { tau: f64 },
    TruncatedQuadratic { tau: f64 },
    /// Semi-global matching penalties: 0, `p1` for a unit jump, `p2` beyond.
    SgmP1P2 { p1: f64, p2: f64 },
    Explicit,
}

/// Realized `L × L` pairwise function, `matrix[μ * L + λ] = V(μ, λ)`.
///
/// Messages along direction `r` use `V(source label, target label)`. The
/// built-in kinds are symmetric; explicit matrices are expected to be
/// symmetric wherever energies are compared.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseFunction<T> {
    pub kind: PairwiseKind,
    pub labels: usize,
    pub matrix: Vec<T>,
}

impl<T: Real> PairwiseFunction<T> {
    pub fn build(kind: PairwiseKind, labels: usize) -> Result<Self> {
        check_labels(labels)?;
        let value: Box<dyn Fn(f64) -> f64> = match kind {
            PairwiseKind::Potts => Box::new(|d| if d == 0.0 { 0.0 } else { 1.0 }),
            PairwiseKind::TruncatedLinear { tau } => {
                if tau.is_nan() || tau <= 0.0 {
                    return Err(Error::InvalidParameter(format!("truncation {tau} must be > 0")));
                }
                Box::new(move |d| d.min(tau))
            }
            PairwiseKind::TruncatedQuadratic { tau } => {
                if tau.is_nan() || tau <= 0.0 {
                    return Err(Error::InvalidParameter(format!("truncation {tau} must be > 0")));
                }
                Box::new(move |d| (d * d).min(tau))
            }
            PairwiseKind::SgmP1P2 { p1, p2 } => {
                if !(p1 > 0.0 && p1 <= p2 && p2.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "penalties need 0 < P1 <= P2, got P1={p1}, P2={p2}"
                    )));
                }
                Box::new(move |d| match d as u64 {
                    0 => 0.0,
                    1 => p1,
                    _ => p2,
                })
            }
            PairwiseKind::Explicit => {
                return Err(Error::InvalidParameter("use PairwiseFunction::explicit".into()))
            }
        };
        let mut matrix = Vec::with_capacity(labels * labels);
        for mu in 0..labels {
            for lambda in 0..labels {
                matrix.push(T::from_f64(value((mu as f64 - lambda as f64).abs())));
            }
        }
        Ok(Self { kind, labels, matrix })
    }

    pub fn explicit(labels: usize, matrix: Vec<T>) -> Result<Self> {
        check_labels(labels)?;
        if matrix.len() != labels * labels {
            return Err(Error::Shape(format!("pairwise matrix {} != {labels}^2", matrix.len())));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pairwise matrix"));
        }
        Ok(Self { kind: PairwiseKind::Explicit, labels, matrix })
    }

    #[inline]
    pub fn get(&self, mu: usize, lambda: usize) -> T {
        self.matrix[mu * self.labels + lambda]
    }

    /// `transposed()[λ * L + μ] = V(μ, λ)`, contiguous over the source label.
    pub fn transposed(&self) -> Vec<T> {
        let l = self.labels;
        let mut t = vec![T::zero(); l * l];
        for mu in 0..l {
            for lambda in 0..l {
                t[lambda * l + mu] = self.matrix[mu * l + lambda];
            }
        }
        t
    }

    pub fn cast<U: Real>(&self) -> PairwiseFunction<U> {
        PairwiseFunction {
            kind: self.kind,
            labels: self.labels,
            matrix: self.matrix.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// One scalar per undirected edge, grouped into planes by edge family.
///
/// Plane `f` holds, at node `i`, the value for the edge `(i - s, i)` where
/// `s` is the step of canonical direction `2f`. Entries whose tail falls
/// outside the grid are unused. Both orientations of an edge read the same
/// cell, which makes the field symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField<T> {
    pub height: usize,
    pub width: usize,
    pub planes: Vec<Vec<T>>,
}

impl<T: Real> EdgeField<T> {
    pub fn constant(height: usize, width: usize, connectivity: usize, value: T) -> Result<Self> {
        let families = family_count(connectivity)?;
        Ok(Self { height, width, planes: vec![vec![value; height * width]; families] })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            planes: vec![vec![T::zero(); self.height * self.width]; self.planes.len()],
        }
    }

    pub fn families(&self) -> usize {
        self.planes.len()
    }

    /// Cell index `(family, node)` holding edge `(i - r, i)`.
    #[inline]
    pub fn cell(&self, dir: &Direction, node: usize) -> (usize, usize) {
        if dir.is_canonical() {
            (dir.family(), node)
        } else {
            let off = dir.step.0 as isize * self.width as isize + dir.step.1 as isize;
            (dir.family(), (node as isize - off) as usize)
        }
    }

    #[inline]
    pub fn get(&self, dir: &Direction, node: usize) -> T {
        let (f, c) = self.cell(dir, node);
        self.planes[f][c]
    }

    /// Visits every in-grid edge of `family` as `(tail, head, value)`.
    pub fn for_each_edge(&self, family: usize, mut f: impl FnMut(usize, usize, T)) {
        let dir = Direction::from_id(2 * family).expect("family in range");
        let (dh, dw) = (dir.step.0 as i64, dir.step.1 as i64);
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                let (ty, tx) = (y - dh, x - dw);
                if ty >= 0 && tx >= 0 && (ty as usize) < self.height && (tx as usize) < self.width {
                    let head = y as usize * self.width + x as usize;
                    let tail = ty as usize * self.width + tx as usize;
                    f(tail, head, self.planes[family][head]);
                }
            }
        }
    }

    /// Whether `(family, node)` is an in-grid edge.
    pub fn is_edge(&self, family: usize, node: usize) -> bool {
        let dir = Direction::from_id(2 * family).expect("family in range");
        let y = (node / self.width) as i64 - dir.step.0 as i64;
        let x = (node % self.width) as i64 - dir.step.1 as i64;
        y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width
    }

    pub fn cast<U: Real>(&self) -> EdgeField<U> {
        EdgeField {
            height: self.height,
            width: self.width,
            planes: self
                .planes
                .iter()
                .map(|p| p.iter().map(|v| U::from_f64(v.as_f64())).collect())
                .collect(),
        }
    }
}

/// TRWP coefficients `ρ_{i-r,i}` in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeCoefficients<T> {
    Uniform(T),
    PerEdge(EdgeField<T>),
}

impl<T: Real> TreeCoefficients<T> {
    pub fn uniform(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidParameter(format!("rho {rho} outside (0, 1]")));
        }
        Ok(Self::Uniform(T::from_f64(rho)))
    }

    pub fn per_edge(field: EdgeField<T>) -> Result<Self> {
        for (f, plane) in field.planes.iter().enumerate() {
            for (n, &v) in plane.iter().enumerate() {
                if field.is_edge(f, n) && !(v > T::zero() && v <= T::one()) {
                    return Err(Error::InvalidParameter(format!("rho {v} outside (0, 1]")));
                }
            }
        }
        Ok(Self::PerEdge(field))
    }

    #[inline]
    pub fn get(&self, dir: &Direction, node: usize) -> T {
        match self {
            Self::Uniform(v) => *v,
            Self::PerEdge(f) => f.get(dir, node),
        }
    }

    pub fn cast<U: Real>(&self) -> TreeCoefficients<U> {
        match self {
            Self::Uniform(v) => TreeCoefficients::Uniform(U::from_f64(v.as_f64())),
            Self::PerEdge(f) => TreeCoefficients::PerEdge(f.cast()),
        }
    }
}

/// Default tree coefficients: 0.5 on every edge for every connectivity.
pub fn default_rho<T: Real>(connectivity: usize) -> Result<TreeCoefficients<T>> {
    family_count(connectivity)?;
    TreeCoefficients::uniform(0.5)
}

/// The full parameter set of a pairwise grid MRF.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials<T> {
    pub unary: UnaryVolume<T>,
    pub weights: EdgeField<T>,
    pub pairwise: PairwiseFunction<T>,
}

impl<T: Real> Potentials<T> {
    pub fn new(unary: UnaryVolume<T>, weights: EdgeField<T>, pairwise: PairwiseFunction<T>) -> Result<Self> {
        if weights.height != unary.height || weights.width != unary.width {
            return Err(Error::Shape("edge weights do not match unary grid".into()));
        }
        if pairwise.labels != unary.labels {
            return Err(Error::Shape("pairwise label count differs from unary".into()));
        }
        for (f, plane) in weights.planes.iter().enumerate() {
            for (n, &v) in plane.iter().enumerate() {
                if !weights.is_edge(f, n) {
                    continue;
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite("edge weights"));
                }
                if v < T::zero() {
                    return Err(Error::InvalidParameter(format!("negative edge weight {v}")));
                }
            }
        }
        Ok(Self { unary, weights, pairwise })
    }

    /// Constant edge weights for `connectivity`.
    pub fn with_constant_weight(
        unary: UnaryVolume<T>,
        pairwise: PairwiseFunction<T>,
        connectivity: usize,
        weight: f64,
    ) -> Result<Self> {
        let weights = EdgeField::constant(unary.height, unary.width, connectivity, T::from_f64(weight))?;
        Self::new(unary, weights, pairwise)
    }

    #[inline]
    pub fn labels(&self) -> usize {
        self.unary.labels
    }

    pub fn grid(&self) -> Result<GridGraph> {
        self.unary.grid()
    }

    pub fn cast<U: Real>(&self) -> Potentials<U> {
        Potentials {
            unary: self.unary.cast(),
            weights: self.weights.cast(),
            pairwise: self.pairwise.cast(),
        }
    }
}

/// Energy `Σ_i θ_i(x_i) + Σ_{(i,j)} θ_{i,j} V(x_i, x_j)` over the edge set of
/// `connectivity`, each undirected edge counted once.
pub fn energy<T: Real>(pot: &Potentials<T>, labelling: &[u8], connectivity: usize) -> Result<f64> {
    let families = family_count(connectivity)?;
    let n = pot.unary.height * pot.unary.width;
    let l = pot.labels();
    if labelling.len() != n {
        return Err(Error::Shape(format!("labelling has {} nodes, grid has {n}", labelling.len())));
    }
    if families > pot.weights.families() {
        return Err(Error::Shape(format!(
            "model has {} edge families, {connectivity}-connected energy needs {families}",
            pot.weights.families()
        )));
    }
    let mut e = 0.0;
    for (i, &x) in labelling.iter().enumerate() {
        let x = x as usize;
        if x >= l {
            return Err(Error::LabelOutOfRange { node: i, label: x, labels: l });
        }
        e += pot.unary.data[i * l + x].as_f64();
    }
    for f in 0..families {
        pot.weights.for_each_edge(f, |tail, head, w| {
            let v = pot.pairwise.get(labelling[tail] as usize, labelling[head] as usize);
            e += w.as_f64() * v.as_f64();
        });
    }
    Ok(e)
}
