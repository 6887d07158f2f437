//! Trace-metric geometry on symmetric positive-definite matrices.
//!
//! The manifold of SPD matrices carries the affine-invariant metric
//! `<v, w>_p = tr(p⁻¹ v p⁻¹ w)`. Under it the congruence action
//! `g * p = g p gᵀ` of `Gl(n)` is isometric, geodesics are weighted
//! geometric means and distances are read off singular values:
//!
//! ```text
//! p #_t q  = p^½ (p^-½ q p^-½)^t p^½
//! σ(g)     = [log₂ α₁(g), …, log₂ αₙ(g)]      (nonincreasing)
//! d(p, q)  = 2 σ(p^-½ q^½)                     (vectorial distance)
//! ```
//!
//! All logarithms here are base 2, so distances come out in bits.
//! Matrix functions go through a full symmetric eigen-decomposition; the
//! matrices involved are small (n ≤ 10) and accuracy matters more than speed.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible eigenvalue relative to the largest one.
pub const SPD_RELATIVE_FLOOR: f64 = 1e-12;

/// Absolute slack for majorization comparisons, scaled by the vector norms.
pub const MAJORIZATION_SLACK: f64 = 1e-8;

/// Condition number above which a congruence action is refused.
pub const MAX_ACTION_CONDITION: f64 = 1e14;

/// Symmetric positive-definite matrix.
///
/// Construction symmetrizes the input, so stored entries are exactly
/// symmetric.
#[derive(Clone, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
}

impl fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpdMatrix{}", self.m)
    }
}

/// Eigen-decomposition `p = U diag(λ) Uᵀ` of an SPD matrix.
#[derive(Clone, Debug)]
pub struct SpdEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SpdEigen {
    /// `U f(Λ) Uᵀ`
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let fv = f(v);
            scaled.column_mut(j).scale_mut(fv);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    Ok(m.nrows())
}

impl SpdMatrix {
    /// Symmetrize `m` and accept it if every eigenvalue exceeds
    /// `SPD_RELATIVE_FLOOR` times the largest one.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite matrix entry".into()));
        }
        let m = symmetrize(&m);
        let eig = SymmetricEigen::new(m.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || !(min > SPD_RELATIVE_FLOOR * max) {
            return Err(Error::NotPositiveDefinite { min, max });
        }
        Ok(Self { m })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::from_diagonal(&[v])
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn eigen(&self) -> Result<SpdEigen> {
        let eig = SymmetricEigen::new(self.m.clone());
        if eig.eigenvalues.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Numeric(
                "eigen-decomposition of an SPD matrix produced a non-positive eigenvalue".into(),
            ));
        }
        Ok(SpdEigen {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        })
    }

    /// Eigenvalues sorted nonincreasing.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut v: Vec<f64> = self.eigen()?.values.iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        Ok(v)
    }

    pub fn power(&self, t: f64) -> Result<SpdMatrix> {
        power(self, t)
    }

    pub fn sqrt(&self) -> Result<SpdMatrix> {
        power(self, 0.5)
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        power(self, -1.0)
    }

    /// `c · p` for `c > 0`.
    pub fn scale(&self, c: f64) -> Result<SpdMatrix> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "SPD scale factor must be positive, got {c}"
            )));
        }
        SpdMatrix::new(&self.m * c)
    }

    /// `log₂ det p`
    pub fn log2_det(&self) -> Result<f64> {
        Ok(self.eigen()?.values.iter().map(|v| v.log2()).sum())
    }
}

/// Nonincreasing vector of base-2 log singular values (a point of the
/// closed Weyl chamber).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogSingularVector(Vec<f64>);

impl LogSingularVector {
    /// Accepts values that are already nonincreasing.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN in log-singular vector".into()));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "log-singular vector must be nonincreasing".into(),
            ));
        }
        Ok(Self(values))
    }

    /// Sorts `values` nonincreasing.
    pub fn from_unsorted(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `Σ max{0, ξᵢ}`
    pub fn positive_part_sum(&self) -> f64 {
        self.0.iter().map(|v| v.max(0.0)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let v = self.0.iter().map(|x| x * c).collect();
        if c >= 0.0 {
            Self(v)
        } else {
            Self::from_unsorted(v)
        }
    }

    /// Componentwise sum, re-sorted.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(Self::from_unsorted(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// The involution `ξ ↦ −(ξₙ, …, ξ₁)`.
    pub fn opposite(&self) -> Self {
        Self(self.0.iter().rev().map(|v| -v).collect())
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Probability vector on `m` atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 * weights.len() as f64 {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        Ok(Self(vec![1.0 / m as f64; m]))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `p^t` through the eigen-decomposition.
pub fn power(p: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("matrix power exponent {t}")));
    }
    if t == 1.0 {
        return Ok(p.clone());
    }
    if t == 0.0 {
        return Ok(SpdMatrix::identity(p.dim()));
    }
    let eig = p.eigen()?;
    SpdMatrix::new(eig.apply(|v| v.powf(t)))
}

fn singular_values(g: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(g)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let svd = g.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// `g p gᵀ`, refused when `g` is numerically singular.
pub fn congruence(g: &DMatrix<f64>, p: &SpdMatrix) -> Result<SpdMatrix> {
    if g.nrows() != p.dim() || g.ncols() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: g.nrows().max(g.ncols()),
        });
    }
    let sv = singular_values(g)?;
    let cond = sv[0] / sv[sv.len() - 1];
    if !(cond < MAX_ACTION_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    SpdMatrix::new(g * p.as_matrix() * g.transpose())
}

/// Point at parameter `t` on the geodesic from `p` to `q`.
pub fn geodesic(p: &SpdMatrix, q: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    if t == 0.0 {
        return Ok(p.clone());
    }
    let eig = p.eigen()?;
    let half = eig.apply(f64::sqrt);
    let inv_half = eig.apply(|v| 1.0 / v.sqrt());
    let inner = SpdMatrix::new(&inv_half * q.as_matrix() * &inv_half)?;
    let inner_t = power(&inner, t)?;
    SpdMatrix::new(&half * inner_t.as_matrix() * &half)
}

/// Base-2 logarithms of the singular values of an invertible `g`,
/// nonincreasing.
pub fn log_singular_values(g: &DMatrix<f64>) -> Result<LogSingularVector> {
    let sv = singular_values(g)?;
    if sv.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Singular(
            "log-singular values are undefined for a singular matrix".into(),
        ));
    }
    Ok(LogSingularVector(sv.into_iter().map(f64::log2).collect()))
}

/// `2 σ(p^-½ q^½)`
pub fn vectorial_distance(p: &SpdMatrix, q: &SpdMatrix) -> Result<LogSingularVector> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let inv_half = p.eigen()?.apply(|v| 1.0 / v.sqrt());
    let q_half = q.eigen()?.apply(f64::sqrt);
    Ok(log_singular_values(&(inv_half * q_half))?.scaled(2.0))
}

/// Riemannian trace-metric distance in bits, from the eigenvalues of
/// `p^-½ q p^-½`.
pub fn distance(p: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let inv_half = p.eigen()?.apply(|v| 1.0 / v.sqrt());
    let inner = SymmetricEigen::new(symmetrize(&(&inv_half * q.as_matrix() * &inv_half)));
    if inner.eigenvalues.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numeric("relative eigenvalue is not positive".into()));
    }
    Ok(inner.eigenvalues.iter().map(|v| v.log2().powi(2)).sum::<f64>().sqrt())
}

/// Largest violation of `x ⪯ y`: the worst excess of a partial sum of `x`
/// over the one of `y`, or the mismatch of totals. Zero or negative means
/// the order holds exactly.
pub fn majorization_violation(x: &LogSingularVector, y: &LogSingularVector) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..n {
        sx += x.0[k];
        sy += y.0[k];
        let v = if k + 1 < n { sx - sy } else { (sx - sy).abs() };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Majorization order `x ⪯ y` on the Weyl chamber, with slack
/// `MAJORIZATION_SLACK · max(1, |x| + |y|)`.
pub fn majorizes_leq(x: &LogSingularVector, y: &LogSingularVector) -> Result<bool> {
    let slack = MAJORIZATION_SLACK * (x.norm() + y.norm()).max(1.0);
    Ok(majorization_violation(x, y)? <= slack)
}

/// Stopping rule for the inductive barycenter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarycenterOptions {
    /// Distance (bits) between consecutive full-cycle iterates.
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for BarycenterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_cycles: 10_000,
        }
    }
}

/// Converged inductive barycenter.
#[derive(Clone, Debug)]
pub struct Barycenter {
    pub mean: SpdMatrix,
    /// Full cycles through the atom list.
    pub cycles: usize,
    /// Distance between the last two full-cycle iterates.
    pub last_step: f64,
}

/// Cyclic inductive-mean iteration
/// `p̄₁ = p₁, p̄ₖ = p̄ₖ₋₁ #_{sₖ} p_{k mod m}` with `sₖ = ω_{k mod m} / l(k)`,
/// `l(k) = Σ_{i≤k} ω_{i mod m}`; residue 0 addresses atom `m`.
pub struct InductiveMean<'a> {
    atoms: &'a [SpdMatrix],
    weights: &'a [f64],
    current: SpdMatrix,
    k: usize,
    mass: f64,
}

impl<'a> InductiveMean<'a> {
    pub fn new(atoms: &'a [SpdMatrix], weights: &'a WeightVector) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("barycenter of an empty atom list".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: atoms.len(),
                got: weights.len(),
            });
        }
        let n = atoms[0].dim();
        if let Some(a) = atoms.iter().find(|a| a.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.dim(),
            });
        }
        Ok(Self {
            atoms,
            weights: weights.values(),
            current: atoms[0].clone(),
            k: 1,
            mass: weights.values()[0],
        })
    }

    /// One step `k → k + 1`.
    pub fn step(&mut self) -> Result<()> {
        self.k += 1;
        let idx = (self.k - 1) % self.atoms.len();
        let w = self.weights[idx];
        self.mass += w;
        let s = if self.mass > 0.0 { w / self.mass } else { 0.0 };
        if s > 0.0 {
            self.current = geodesic(&self.current, &self.atoms[idx], s.min(1.0))?;
        }
        Ok(())
    }

    /// Completes the current cycle; returns the distance moved since the
    /// previous cycle boundary.
    pub fn cycle(&mut self) -> Result<f64> {
        let m = self.atoms.len();
        let start = self.current.clone();
        // Cycle one ends at k = m; it starts from p̄₁ rather than p̄₀.
        let steps = if self.k < m { m - self.k } else { m };
        for _ in 0..steps {
            self.step()?;
        }
        distance(&start, &self.current)
    }

    pub fn cycles_completed(&self) -> usize {
        self.k / self.atoms.len()
    }

    pub fn current(&self) -> &SpdMatrix {
        &self.current
    }

    pub fn into_current(self) -> SpdMatrix {
        self.current
    }
}

/// Weighted barycenter by the inductive mean, stopped when consecutive
/// full-cycle iterates are closer than `opts.tol`.
pub fn inductive_barycenter(
    atoms: &[SpdMatrix],
    weights: &WeightVector,
    opts: &BarycenterOptions,
) -> Result<Barycenter> {
    if !(opts.tol >= 0.0) || opts.max_cycles == 0 {
        return Err(Error::InvalidArgument(
            "barycenter tolerance must be nonnegative and max_cycles positive".into(),
        ));
    }
    let mut it = InductiveMean::new(atoms, weights)?;
    it.cycle()?;
    let mut last_step = f64::INFINITY;
    while it.cycles_completed() < opts.max_cycles {
        last_step = it.cycle()?;
        if last_step < opts.tol {
            return Ok(Barycenter {
                cycles: it.cycles_completed(),
                mean: it.into_current(),
                last_step,
            });
        }
    }
    Err(Error::NotConverged {
        cycles: it.cycles_completed(),
        last_step,
        last: Box::new(it.into_current()),
    })
}

/// Like `inductive_barycenter`, but returns the last iterate when the
/// cycle budget runs out.
pub fn inductive_barycenter_lenient(
    atoms: &[SpdMatrix],
    weights: &WeightVector,
    opts: &BarycenterOptions,
) -> Result<Barycenter> {
    match inductive_barycenter(atoms, weights, opts) {
        Err(Error::NotConverged {
            cycles,
            last_step,
            last,
        }) => Ok(Barycenter {
            mean: *last,
            cycles,
            last_step,
        }),
        other => other,
    }
}

/// Runs exactly `cycles` full cycles of the inductive mean.
pub fn inductive_mean_cycles(atoms: &[SpdMatrix], weights: &WeightVector, cycles: usize) -> Result<SpdMatrix> {
    let mut it = InductiveMean::new(atoms, weights)?;
    while it.cycles_completed() < cycles.max(1) {
        it.cycle()?;
    }
    Ok(it.into_current())
}

/// Solves `h s + s h = v` for symmetric `h`, with `s` SPD.
///
/// In the eigenbasis of `s` the solution is `h̃ᵢⱼ = ṽᵢⱼ / (σᵢ + σⱼ)`.
pub fn lyapunov_solve(s: &SpdMatrix, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != s.dim() || v.ncols() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            got: v.nrows(),
        });
    }
    let asym = (v - v.transpose()).amax();
    if asym > 1e-10 * v.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "Lyapunov right-hand side is not symmetric (asymmetry {asym:e})"
        )));
    }
    let eig = s.eigen()?;
    let u = &eig.vectors;
    let mut h = u.transpose() * symmetrize(v) * u;
    let n = s.dim();
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] /= eig.values[i] + eig.values[j];
        }
    }
    Ok(symmetrize(&(u * h * u.transpose())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
        crate::random::spd(rng, n, 1.0)
    }

    #[test]
    fn rejects_indefinite_and_symmetrizes() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotPositiveDefinite { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.3, 2.0]);
        let p = SpdMatrix::new(m).unwrap();
        assert_eq!(p.as_matrix()[(0, 1)], p.as_matrix()[(1, 0)]);
        assert_eq!(p.as_matrix()[(0, 1)], 0.2);
        // Below the relative floor.
        assert!(SpdMatrix::from_diagonal(&[1.0, 1e-13]).is_err());
    }

    #[test]
    fn power_examples() {
        let i = SpdMatrix::identity(3);
        assert!(max_diff(power(&i, 0.5).unwrap().as_matrix(), i.as_matrix()) < 1e-15);
        let p = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let r = power(&p, 0.5).unwrap();
        assert!(
            max_diff(
                r.as_matrix(),
                &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))
            ) < 1e-14
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 3, 5] {
            let p = random_spd(&mut rng, n);
            let inv = power(&p, -1.0).unwrap();
            let direct = p.as_matrix().clone().try_inverse().unwrap();
            assert!(max_diff(inv.as_matrix(), &direct) < 1e-10);
            assert_eq!(power(&p, 1.0).unwrap(), p);
            assert_eq!(power(&p, 0.0).unwrap(), SpdMatrix::identity(n));
        }
    }

    #[test]
    fn congruence_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_spd(&mut rng, 3);
        let q = random_spd(&mut rng, 3);
        let i = DMatrix::identity(3, 3);
        assert!(max_diff(congruence(&i, &p).unwrap().as_matrix(), p.as_matrix()) < 1e-14);
        let g = power(&q, 0.5).unwrap().into_matrix() * power(&p, -0.5).unwrap().into_matrix();
        assert!(max_diff(congruence(&g, &p).unwrap().as_matrix(), q.as_matrix()) < 1e-10);
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let r = congruence(&g, &SpdMatrix::identity(2)).unwrap();
        assert_eq!(r, SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(congruence(&singular, &SpdMatrix::identity(2)).is_err());
    }

    #[test]
    fn congruence_group_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_spd(&mut rng, 3);
        let g1 = crate::random::invertible(&mut rng, 3);
        let g2 = crate::random::invertible(&mut rng, 3);
        let lhs = congruence(&(&g1 * &g2), &p).unwrap();
        let rhs = congruence(&g1, &congruence(&g2, &p).unwrap()).unwrap();
        assert!(max_diff(lhs.as_matrix(), rhs.as_matrix()) < 1e-9 * lhs.as_matrix().amax());
    }

    #[test]
    fn geodesic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_spd(&mut rng, 3);
        let q = random_spd(&mut rng, 3);
        for t in [0.0, 0.3, 1.0] {
            assert!(max_diff(geodesic(&p, &p, t).unwrap().as_matrix(), p.as_matrix()) < 1e-12);
        }
        assert_eq!(geodesic(&p, &q, 0.0).unwrap(), p);
        assert!(max_diff(geodesic(&p, &q, 1.0).unwrap().as_matrix(), q.as_matrix()) < 1e-11);
        let a = geodesic(&p, &q, 0.5).unwrap();
        let b = geodesic(&q, &p, 0.5).unwrap();
        assert!(max_diff(a.as_matrix(), b.as_matrix()) < 1e-11);

        let one = SpdMatrix::scalar(1.0).unwrap();
        let four = SpdMatrix::scalar(4.0).unwrap();
        assert!((geodesic(&one, &four, 0.5).unwrap().as_matrix()[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn geodesic_midpoint_commuting_matches_entrywise_geometric_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = crate::random::orthogonal(&mut rng, 4);
        let d1 = [0.5, 2.0, 3.0, 7.0];
        let d2 = [8.0, 0.25, 3.0, 1.0];
        let conj = |d: &[f64]| {
            SpdMatrix::new(&u * DMatrix::from_diagonal(&DVector::from_column_slice(d)) * u.transpose()).unwrap()
        };
        let mid = geodesic(&conj(&d1), &conj(&d2), 0.5).unwrap();
        let gm: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| (a * b).sqrt()).collect();
        assert!(max_diff(mid.as_matrix(), conj(&gm).as_matrix()) < 1e-12);
    }

    #[test]
    fn log_singular_values_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_eq!(log_singular_values(&i).unwrap(), LogSingularVector::zeros(3));
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        assert_eq!(log_singular_values(&g).unwrap().values(), &[2.0, 0.0]);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        assert!(matches!(log_singular_values(&singular), Err(Error::Singular(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [1, 2, 3, 5] {
            let g = crate::random::invertible(&mut rng, n);
            let sigma = log_singular_values(&g).unwrap();
            let mut eig: Vec<f64> = SymmetricEigen::new(g.transpose() * &g)
                .eigenvalues
                .iter()
                .map(|l| l.sqrt().log2())
                .collect();
            eig.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in sigma.values().iter().zip(&eig) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn vectorial_distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_spd(&mut rng, 3);
        assert!(vectorial_distance(&p, &p).unwrap().norm() < 1e-12);
        let d = vectorial_distance(&SpdMatrix::scalar(1.0).unwrap(), &SpdMatrix::scalar(4.0).unwrap()).unwrap();
        assert!((d.values()[0] - 2.0).abs() < 1e-15);
        let q = random_spd(&mut rng, 3);
        let d = vectorial_distance(&SpdMatrix::identity(3), &q).unwrap();
        let s = log_singular_values(q.as_matrix()).unwrap();
        assert!(d.max_abs_diff(&s) < 1e-12);
        // ‖d(p,q)‖ equals the natural-log Frobenius distance, rescaled to bits.
        let inv_half = power(&p, -0.5).unwrap().into_matrix();
        let inner = SymmetricEigen::new(symmetrize(&(&inv_half * q.as_matrix() * &inv_half)));
        let nat: f64 = inner.eigenvalues.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt();
        let dv = vectorial_distance(&p, &q).unwrap();
        assert!((dv.norm() - nat / std::f64::consts::LN_2).abs() < 1e-10);
        assert!((distance(&p, &q).unwrap() - dv.norm()).abs() < 1e-10);
    }

    #[test]
    fn majorization_examples() {
        let x = LogSingularVector::new(vec![1.0, -1.0]).unwrap();
        let y = LogSingularVector::new(vec![2.0, -2.0]).unwrap();
        assert!(majorizes_leq(&x, &x).unwrap());
        assert!(majorizes_leq(&x, &y).unwrap());
        assert!(!majorizes_leq(&y, &x).unwrap());
        let z = LogSingularVector::new(vec![1.0, 0.0]).unwrap();
        // Totals differ.
        assert!(!majorizes_leq(&x, &z).unwrap());
        let short = LogSingularVector::new(vec![1.0]).unwrap();
        assert!(majorizes_leq(&x, &short).is_err());
        assert!(LogSingularVector::new(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn barycenter_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let opts = BarycenterOptions::default();
        let p = random_spd(&mut rng, 3);
        let b = inductive_barycenter(std::slice::from_ref(&p), &WeightVector::uniform(1).unwrap(), &opts).unwrap();
        assert!(max_diff(b.mean.as_matrix(), p.as_matrix()) < 1e-12);
        let atoms = vec![p.clone(); 4];
        let b = inductive_barycenter(&atoms, &WeightVector::uniform(4).unwrap(), &opts).unwrap();
        assert!(max_diff(b.mean.as_matrix(), p.as_matrix()) < 1e-12);
    }

    #[test]
    fn scalar_barycenter_matches_brute_force_minimizer() {
        // Σ d(q, pᵢ)² on a fine log grid, then bisection on the sign of its
        // slope (a flat minimum defeats value comparisons near 1e-8).
        let atoms = [1.0, 4.0];
        let cost = |lq: f64| -> f64 { atoms.iter().map(|p: &f64| (lq - p.log2()).powi(2)).sum() };
        let slope = |lq: f64| -> f64 { atoms.iter().map(|p: &f64| 2.0 * (lq - p.log2())).sum() };
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=4000 {
            let lq = -1.0 + 4.0 * i as f64 / 4000.0;
            let c = cost(lq);
            if c < best.0 {
                best = (c, lq);
            }
        }
        let (mut lo, mut hi) = (best.1 - 1e-3, best.1 + 1e-3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle = 2f64.powf(0.5 * (lo + hi));
        assert!((oracle - 2.0).abs() < 1e-9);

        let spd: Vec<SpdMatrix> = atoms.iter().map(|a| SpdMatrix::scalar(*a).unwrap()).collect();
        let b = inductive_barycenter(&spd, &WeightVector::uniform(2).unwrap(), &BarycenterOptions::default()).unwrap();
        assert!((b.mean.as_matrix()[(0, 0)] - oracle).abs() < 1e-8);
    }

    #[test]
    fn commuting_barycenter_is_eigenvalue_geometric_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = crate::random::orthogonal(&mut rng, 3);
        let diags = [[1.0, 2.0, 3.0], [4.0, 0.5, 3.0], [0.25, 8.0, 1.0]];
        let atoms: Vec<SpdMatrix> = diags
            .iter()
            .map(|d| {
                SpdMatrix::new(&u * DMatrix::from_diagonal(&DVector::from_column_slice(d)) * u.transpose()).unwrap()
            })
            .collect();
        let b = inductive_barycenter(
            &atoms,
            &WeightVector::uniform(3).unwrap(),
            &BarycenterOptions::default(),
        )
        .unwrap();
        let gm: Vec<f64> = (0..3)
            .map(|i| diags.iter().map(|d| d[i]).product::<f64>().powf(1.0 / 3.0))
            .collect();
        let expected = &u * DMatrix::from_diagonal(&DVector::from_vec(gm)) * u.transpose();
        assert!(max_diff(b.mean.as_matrix(), &expected) < 1e-10);
    }

    #[test]
    fn barycenter_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let atoms: Vec<SpdMatrix> = (0..3).map(|_| random_spd(&mut rng, 3)).collect();
        let opts = BarycenterOptions {
            tol: 0.0,
            max_cycles: 3,
        };
        match inductive_barycenter(&atoms, &WeightVector::uniform(3).unwrap(), &opts) {
            Err(Error::NotConverged { cycles, last_step, .. }) => {
                assert_eq!(cycles, 3);
                assert!(last_step.is_finite() && last_step > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        let lenient = inductive_barycenter_lenient(&atoms, &WeightVector::uniform(3).unwrap(), &opts).unwrap();
        assert_eq!(lenient.cycles, 3);
    }

    #[test]
    fn zero_weight_leading_atom_is_ignored() {
        let a = SpdMatrix::scalar(100.0).unwrap();
        let b = SpdMatrix::scalar(1.0).unwrap();
        let c = SpdMatrix::scalar(4.0).unwrap();
        let w = WeightVector::new(vec![0.0, 0.5, 0.5]).unwrap();
        let bar = inductive_barycenter(&[a, b, c], &w, &BarycenterOptions::default()).unwrap();
        assert!((bar.mean.as_matrix()[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.5, 1.5]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        assert!(WeightVector::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn lyapunov_examples() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let h = lyapunov_solve(&SpdMatrix::identity(2), &v).unwrap();
        assert!(max_diff(&h, &(&v * 0.5)) < 1e-15);
        let s = SpdMatrix::from_diagonal(&[2.0, 1.0]).unwrap();
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![8.0, 2.0]));
        let h = lyapunov_solve(&s, &v).unwrap();
        assert!(max_diff(&h, &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))) < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 3, 5] {
            let s = random_spd(&mut rng, n);
            let v = crate::random::symmetric(&mut rng, n);
            let h = lyapunov_solve(&s, &v).unwrap();
            let residual = &h * s.as_matrix() + s.as_matrix() * &h - &v;
            assert!(residual.amax() < 1e-10);
        }
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(lyapunov_solve(&SpdMatrix::identity(2), &asym).is_err());
    }
}
