//! Riemannian metric fields and the spectra of Jacobians measured in them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{flow, SystemModel, TimeKind};
use crate::error::{Error, Result};
use crate::spd::{symmetrize, LogSingularVector, SpdMatrix};

/// Stand-in for `log 0 = −∞`; removed by every `max(0, ·)`.
pub const LOG_ZERO: f64 = -1e18;

/// Default step for the finite-difference orbital derivative.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Constant,
    Analytic,
    Tabulated,
}

/// Where `Ṗ` comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrbitalSource {
    /// `P` is constant, so `Ṗ = 0`.
    Zero,
    Analytic,
    /// Forward difference along the flow with step `h`.
    FlowDifference {
        h: f64,
    },
}

/// Serializable description of a metric field, recorded in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub label: String,
    pub kind: MetricKind,
    pub dim: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub orbital_derivative: Option<OrbitalSource>,
}

pub type EvalFn = Arc<dyn Fn(&DVector<f64>) -> Result<SpdMatrix> + Send + Sync>;
pub type OrbitalFn = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;

/// A rule `x ↦ P(x)`, optionally with its orbital derivative `x ↦ Ṗ(x)`.
#[derive(Clone)]
pub struct MetricField {
    descriptor: MetricDescriptor,
    eval: EvalFn,
    orbital: Option<OrbitalFn>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("MetricField").field(&self.descriptor).finish()
    }
}

impl MetricField {
    pub fn new(descriptor: MetricDescriptor, eval: EvalFn, orbital: Option<OrbitalFn>) -> Self {
        Self {
            descriptor,
            eval,
            orbital,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut field = Self::constant(SpdMatrix::identity(dim));
        field.descriptor.label = "identity".into();
        field
    }

    pub fn constant(p: SpdMatrix) -> Self {
        let dim = p.dim();
        let p = Arc::new(p);
        let eval: EvalFn = Arc::new(move |x| {
            check_dim(dim, x)?;
            Ok((*p).clone())
        });
        let orbital: OrbitalFn = Arc::new(move |x| {
            check_dim(dim, x)?;
            Ok(DMatrix::zeros(dim, dim))
        });
        Self {
            descriptor: MetricDescriptor {
                label: "constant".into(),
                kind: MetricKind::Constant,
                dim,
                params: BTreeMap::new(),
                orbital_derivative: Some(OrbitalSource::Zero),
            },
            eval,
            orbital: Some(orbital),
        }
    }

    /// `P(x, y, z) = diag(1, 1, ½) · exp(2z/a)` with `Ṗ = (2ż/a) P`.
    pub fn lanford(a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Lanford parameter a must be positive, got {a}"
            )));
        }
        let p_at = move |x: &DVector<f64>| -> Result<DMatrix<f64>> {
            check_dim(3, x)?;
            let w = (2.0 * x[2] / a).exp();
            Ok(DMatrix::from_diagonal(&DVector::from_vec(vec![w, w, 0.5 * w])))
        };
        let eval: EvalFn = Arc::new(move |x| SpdMatrix::new(p_at(x)?));
        let orbital: OrbitalFn = Arc::new(move |x| {
            let p = p_at(x)?;
            let zdot = a * x[2] - x.norm_squared();
            Ok(p * (2.0 * zdot / a))
        });
        Ok(Self {
            descriptor: MetricDescriptor {
                label: "lanford-eq15".into(),
                kind: MetricKind::Analytic,
                dim: 3,
                params: BTreeMap::from([("a".to_string(), a)]),
                orbital_derivative: Some(OrbitalSource::Analytic),
            },
            eval,
            orbital: Some(orbital),
        })
    }

    /// A field given only by its evaluation rule.
    pub fn tabulated(dim: usize, label: impl Into<String>, params: BTreeMap<String, f64>, eval: EvalFn) -> Self {
        Self {
            descriptor: MetricDescriptor {
                label: label.into(),
                kind: MetricKind::Tabulated,
                dim,
                params,
                orbital_derivative: None,
            },
            eval,
            orbital: None,
        }
    }

    /// Replaces the orbital derivative rule.
    pub fn with_orbital(mut self, source: OrbitalSource, rule: OrbitalFn) -> Self {
        self.descriptor.orbital_derivative = Some(source);
        self.orbital = Some(rule);
        self
    }

    /// Enables `Ṗ` by forward differences of `P` along the flow of `system`.
    pub fn with_flow_difference(self, system: &SystemModel, h: f64) -> Result<Self> {
        if system.time() != TimeKind::Continuous {
            return Err(Error::Unsupported(
                "orbital derivatives need a continuous-time system".into(),
            ));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        let field = self.clone();
        let system = system.clone();
        let rule: OrbitalFn = Arc::new(move |x| orbital_derivative_fd(&field, &system, x, h));
        Ok(self.with_orbital(OrbitalSource::FlowDifference { h }, rule))
    }

    /// `c · P(x)` with `c · Ṗ(x)`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "metric scale must be positive, got {c}"
            )));
        }
        let inner = self.eval.clone();
        let eval: EvalFn = Arc::new(move |x| inner(x)?.scale(c));
        let orbital = self
            .orbital
            .clone()
            .map(|o| -> OrbitalFn { Arc::new(move |x| Ok(o(x)? * c)) });
        let mut descriptor = self.descriptor.clone();
        descriptor.label = format!("{}*{}", c, descriptor.label);
        Ok(Self {
            descriptor,
            eval,
            orbital,
        })
    }

    pub fn descriptor(&self) -> &MetricDescriptor {
        &self.descriptor
    }

    pub fn kind(&self) -> MetricKind {
        self.descriptor.kind
    }

    pub fn dim(&self) -> usize {
        self.descriptor.dim
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<SpdMatrix> {
        (self.eval)(x)
    }

    pub fn has_orbital_derivative(&self) -> bool {
        self.orbital.is_some()
    }

    pub fn orbital_derivative(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.orbital {
            Some(rule) => rule(x),
            None => Err(Error::Unsupported(format!(
                "metric `{}` has no orbital derivative; enable the flow finite difference",
                self.descriptor.label
            ))),
        }
    }
}

fn check_dim(dim: usize, x: &DVector<f64>) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    Ok(())
}

/// Spectrum of a Jacobian at one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpectrum {
    pub point: Vec<f64>,
    pub values: LogSingularVector,
}

fn log2_or_sentinel(s: f64) -> f64 {
    if s > 0.0 {
        s.log2()
    } else {
        LOG_ZERO
    }
}

/// `B = P(φ(x))^½ A P(x)^-½`.
pub fn metric_conjugate(p_x: &SpdMatrix, p_phi: &SpdMatrix, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p_x.dim();
    if a.nrows() != n || a.ncols() != n || p_phi.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.nrows(),
        });
    }
    Ok(p_phi.sqrt()?.as_matrix() * a * p_x.power(-0.5)?.as_matrix())
}

/// `log₂ αᵢᴾ` from the metric values at `x` and `φ(x)`.
pub fn metric_log_singular_values(p_x: &SpdMatrix, p_phi: &SpdMatrix, a: &DMatrix<f64>) -> Result<LogSingularVector> {
    let b = metric_conjugate(p_x, p_phi, a)?;
    let sv = b.svd(false, false).singular_values;
    if sv.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite singular value".into()));
    }
    Ok(LogSingularVector::from_unsorted(
        sv.iter().map(|&s| log2_or_sentinel(s)).collect(),
    ))
}

/// Metric singular values of the map Jacobian `a` at `x`.
pub fn metric_singular_values(
    p: &MetricField,
    x: &DVector<f64>,
    phi_x: &DVector<f64>,
    a: &DMatrix<f64>,
) -> Result<MetricSpectrum> {
    let values = metric_log_singular_values(&p.eval(x)?, &p.eval(phi_x)?, a)?;
    Ok(MetricSpectrum {
        point: x.as_slice().to_vec(),
        values,
    })
}

/// Eigenvalues of `P^-½ (PJ + JᵀP + Ṗ) P^-½`, natural-log scale.
pub fn ct_spectrum_at(p: &SpdMatrix, j: &DMatrix<f64>, pdot: &DMatrix<f64>) -> Result<LogSingularVector> {
    let n = p.dim();
    if j.shape() != (n, n) || pdot.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: j.nrows(),
        });
    }
    let asym = (pdot - pdot.transpose()).amax();
    if asym > 1e-10 * pdot.amax().max(1.0) {
        return Err(Error::AsymmetricDerivative(asym));
    }
    let pm = p.as_matrix();
    let inner = pm * j + j.transpose() * pm + pdot;
    let r = p.power(-0.5)?;
    let s = symmetrize(&(r.as_matrix() * inner * r.as_matrix()));
    let eig = s.symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite eigenvalue in continuous-time spectrum".into(),
        ));
    }
    Ok(LogSingularVector::from_unsorted(
        eig.eigenvalues.iter().copied().collect(),
    ))
}

/// Continuous-time spectrum `ςᴾ(x)` for the vector-field Jacobian `j`.
pub fn ct_metric_spectrum(
    p: &MetricField,
    x: &DVector<f64>,
    j: &DMatrix<f64>,
    pdot: &DMatrix<f64>,
) -> Result<MetricSpectrum> {
    Ok(MetricSpectrum {
        point: x.as_slice().to_vec(),
        values: ct_spectrum_at(&p.eval(x)?, j, pdot)?,
    })
}

/// `(P(φʰ(x)) − P(x)) / h`, symmetrized.
pub fn orbital_derivative_fd(p: &MetricField, system: &SystemModel, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    if system.time() != TimeKind::Continuous {
        return Err(Error::Unsupported(
            "orbital derivatives need a continuous-time system".into(),
        ));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let ahead = flow(system, x, h)?;
    let d = (p.eval(&ahead)?.into_matrix() - p.eval(x)?.into_matrix()) / h;
    Ok(symmetrize(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{lanford, linear_ode};
    use crate::random;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn identity_metric_gives_ordinary_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = random::invertible(&mut rng, 3);
        let p = MetricField::identity(3);
        let s = metric_singular_values(&p, &v(&[0.0; 3]), &v(&[1.0; 3]), &a).unwrap();
        let direct = crate::spd::log_singular_values(&a).unwrap();
        assert!(s.values.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn scalar_metric_singular_value() {
        let (p, q, a) = (2.0, 5.0, -3.0);
        let vals = metric_log_singular_values(
            &SpdMatrix::scalar(p).unwrap(),
            &SpdMatrix::scalar(q).unwrap(),
            &DMatrix::from_element(1, 1, a),
        )
        .unwrap();
        let expected = (f64::abs(a) * (q / p).sqrt()).log2();
        assert!((vals.values()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn singular_jacobian_uses_sentinel() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let i = SpdMatrix::identity(2);
        let vals = metric_log_singular_values(&i, &i, &a).unwrap();
        assert_eq!(vals.values(), &[0.0, LOG_ZERO]);
        assert_eq!(vals.positive_part_sum(), 0.0);
    }

    #[test]
    fn squared_values_solve_generalized_eigenproblem() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for n in [1, 2, 3, 5] {
            let px = random::spd(&mut rng, n, 1.0);
            let pf = random::spd(&mut rng, n, 1.0);
            let a = random::invertible(&mut rng, n);
            let vals = metric_log_singular_values(&px, &pf, &a).unwrap();
            // Cholesky reduction of AᵀP(φ)A − λP(x).
            let l = px.as_matrix().clone().cholesky().unwrap().l();
            let li = l.try_inverse().unwrap();
            let m = &li * a.transpose() * pf.as_matrix() * &a * li.transpose();
            let mut lam: Vec<f64> = symmetrize(&m).symmetric_eigen().eigenvalues.iter().copied().collect();
            lam.sort_by(|x, y| y.partial_cmp(x).unwrap());
            for (l, s) in lam.iter().zip(vals.values()) {
                let alpha2 = 2f64.powf(2.0 * s);
                assert!((alpha2 - l).abs() <= 1e-8 * l.abs().max(1.0), "n={n}: {alpha2} vs {l}");
            }
        }
    }

    #[test]
    fn ct_spectrum_examples() {
        let j = DMatrix::from_row_slice(2, 2, &[0.5, 2.0, 0.0, -1.0]);
        let vals = ct_spectrum_at(&SpdMatrix::identity(2), &j, &DMatrix::zeros(2, 2)).unwrap();
        let mut expected: Vec<f64> = (&j + j.transpose())
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        expected.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!(vals.values().iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-14));

        let a = 2.0 / 3.0;
        let sys = lanford(a).unwrap();
        let p = MetricField::lanford(a).unwrap();
        let o = v(&[0.0, 0.0, 0.0]);
        let s = ct_metric_spectrum(&p, &o, &sys.jacobian(&o), &p.orbital_derivative(&o).unwrap()).unwrap();
        let expected = [4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0];
        assert!(s
            .values
            .values()
            .iter()
            .zip(expected)
            .all(|(a, b)| (a - b).abs() < 1e-14));

        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            ct_spectrum_at(&SpdMatrix::identity(2), &j, &bad),
            Err(Error::AsymmetricDerivative(_))
        ));
    }

    #[test]
    fn ct_spectrum_roots_zero_the_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for n in [1, 2, 3, 5] {
            let p = random::spd(&mut rng, n, 0.5);
            let j = random::gaussian(&mut rng, n, n);
            let pdot = random::symmetric(&mut rng, n);
            let vals = ct_spectrum_at(&p, &j, &pdot).unwrap();
            let base = p.as_matrix() * &j + j.transpose() * p.as_matrix() + &pdot;
            let scale = base.norm().max(1.0) * p.as_matrix().norm().max(1.0);
            for &lam in vals.values() {
                let det = (&base - p.as_matrix() * lam).determinant();
                assert!(det.abs() < 1e-9 * scale.powi(n as i32), "n={n} det={det}");
            }
        }
    }

    #[test]
    fn orbital_derivative_examples() {
        let grow = linear_ode(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let c = MetricField::constant(SpdMatrix::scalar(3.0).unwrap());
        assert_eq!(orbital_derivative_fd(&c, &grow, &v(&[0.4]), 1e-5).unwrap()[(0, 0)], 0.0);

        let exp_metric = MetricField::tabulated(
            1,
            "exp",
            BTreeMap::new(),
            Arc::new(|x: &DVector<f64>| SpdMatrix::scalar(x[0].exp())),
        );
        let d = orbital_derivative_fd(&exp_metric, &grow, &v(&[1.0]), 1e-5).unwrap()[(0, 0)];
        assert!((d - std::f64::consts::E).abs() < 1e-4);

        let a = 2.0 / 3.0;
        let sys = lanford(a).unwrap();
        let p = MetricField::lanford(a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..10 {
            let x = v(&[
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.0..0.8),
            ]);
            let fd = orbital_derivative_fd(&p, &sys, &x, 1e-5).unwrap();
            let exact = p.orbital_derivative(&x).unwrap();
            assert!((fd - &exact).amax() < 1e-3 * exact.amax().max(1.0));
        }
    }

    #[test]
    fn tabulated_fields_need_explicit_flow_difference() {
        let eval: EvalFn = Arc::new(|_: &DVector<f64>| Ok(SpdMatrix::identity(2)));
        let t = MetricField::tabulated(2, "t", BTreeMap::new(), eval);
        assert!(matches!(
            t.orbital_derivative(&v(&[0.0, 0.0])),
            Err(Error::Unsupported(_))
        ));
        let sys = linear_ode(crate::dynamics::default_linode_matrix()).unwrap();
        let t = t.with_flow_difference(&sys, DEFAULT_FD_STEP).unwrap();
        assert_eq!(t.orbital_derivative(&v(&[0.1, 0.2])).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn congruent_constant_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let vm = random::invertible(&mut rng, 3);
        let a = random::gaussian(&mut rng, 3, 3);
        let p = MetricField::constant(SpdMatrix::new(vm.transpose() * &vm).unwrap());
        let s = metric_singular_values(&p, &v(&[0.0; 3]), &v(&[0.0; 3]), &a).unwrap();
        let direct = crate::spd::log_singular_values(&(&vm * &a * vm.clone().try_inverse().unwrap())).unwrap();
        assert!(s.values.max_abs_diff(&direct) < 1e-9);
    }
}
