//! Seeded randomized property suite for the SPD geometry and the
//! metric spectra.
//!
//! Every property is checked on `instances` random draws at each dimension
//! in `dims`. Each instance yields an error and the tolerance it is held
//! to; the suite reports the worst error and the worst error/tolerance
//! ratio per property.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{ct_spectrum_at, metric_log_singular_values};
use crate::random::{gaussian, invertible, orthogonal, spd, symmetric};
use crate::spd::{
    congruence, distance, geodesic, inductive_mean_cycles, log_singular_values, lyapunov_solve, majorization_violation,
    symmetrize, vectorial_distance, LogSingularVector, SpdMatrix, WeightVector, MAJORIZATION_SLACK,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropsConfig {
    pub seed: u64,
    pub instances: usize,
    pub dims: Vec<usize>,
    /// Multiplies every tolerance; must be positive.
    pub tol_scale: f64,
    /// Runs only properties whose name contains this string.
    #[serde(default)]
    pub filter: Option<String>,
}

impl Default for PropsConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            instances: 200,
            dims: vec![1, 2, 3, 5],
            tol_scale: 1.0,
            filter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub instances: usize,
    pub worst_error: f64,
    /// Largest error/tolerance over all instances.
    pub worst_ratio: f64,
    pub failures: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropsReport {
    pub seed: u64,
    pub instances: usize,
    pub dims: Vec<usize>,
    pub results: Vec<PropertyResult>,
}

impl PropsReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

/// Error of one instance and the tolerance it must stay under.
#[derive(Clone, Copy, Debug)]
struct Check {
    err: f64,
    tol: f64,
}

impl Check {
    fn new(err: f64, tol: f64) -> Self {
        Self { err, tol }
    }

    fn worst(checks: impl IntoIterator<Item = Check>) -> Check {
        checks
            .into_iter()
            .fold(Check::new(0.0, 1.0), |a, b| if b.ratio() > a.ratio() { b } else { a })
    }

    fn ratio(&self) -> f64 {
        if self.err.is_nan() {
            f64::INFINITY
        } else {
            self.err / self.tol
        }
    }
}

type PropFn = fn(&mut ChaCha8Rng, usize) -> Result<Check>;

/// Names and instance checks, in report order.
pub fn property_names() -> Vec<&'static str> {
    PROPERTIES.iter().map(|(n, _)| *n).collect()
}

const PROPERTIES: &[(&str, PropFn)] = &[
    ("norm_is_distance", norm_is_distance),
    ("congruence_isometry", congruence_isometry),
    ("vectorial_triangle", vectorial_triangle),
    ("reversal", reversal),
    ("geodesic_segment", geodesic_segment),
    ("midpoint_contraction", midpoint_contraction),
    ("geodesic_equivariance", geodesic_equivariance),
    ("geodesic_convexity", geodesic_convexity),
    ("barycenter_equivariance", barycenter_equivariance),
    ("barycenter_perturbation", barycenter_perturbation),
    ("barycenter_permutation", barycenter_permutation),
    ("commuting_mean", commuting_mean),
    ("metric_sv_equivalence", metric_sv_equivalence),
    ("sv_derivative", sv_derivative),
    ("lyapunov_derivative", lyapunov_derivative),
    ("lyapunov_residual", lyapunov_residual),
    ("horn_submultiplicative", horn),
    ("scaling_invariance", scaling),
];

fn instance_seed(seed: u64, prop: usize, n: usize, i: usize) -> u64 {
    // SplitMix-style mixing keeps streams for different (prop, n, i) apart.
    let mut z = seed
        ^ (prop as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (n as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (i as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the suite. Returns a configuration error for nonpositive
/// tolerances or empty dimension lists, never a property failure.
pub fn run_properties(cfg: &PropsConfig) -> Result<PropsReport> {
    if !(cfg.tol_scale > 0.0) || !cfg.tol_scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tolerance scale must be positive, got {}",
            cfg.tol_scale
        )));
    }
    if cfg.instances == 0 || cfg.dims.is_empty() || cfg.dims.contains(&0) {
        return Err(Error::InvalidArgument(
            "property suite needs instances ≥ 1 and dimensions ≥ 1".into(),
        ));
    }
    let mut results = Vec::new();
    for (idx, (name, f)) in PROPERTIES.iter().enumerate() {
        if cfg.filter.as_ref().is_some_and(|flt| !name.contains(flt.as_str())) {
            continue;
        }
        let jobs: Vec<(usize, usize)> = cfg
            .dims
            .iter()
            .flat_map(|&n| (0..cfg.instances).map(move |i| (n, i)))
            .collect();
        let checks: Vec<Check> = jobs
            .par_iter()
            .map(|&(n, i)| {
                let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(cfg.seed, idx, n, i));
                f(&mut rng, n).map(|c| Check::new(c.err, c.tol * cfg.tol_scale))
            })
            .collect::<Result<_>>()?;
        let failures = checks.iter().filter(|c| !(c.err <= c.tol)).count();
        let worst_error = checks.iter().map(|c| c.err).fold(0.0, f64::max);
        let worst_ratio = checks.iter().map(|c| c.ratio()).fold(0.0, f64::max);
        results.push(PropertyResult {
            name: name.to_string(),
            instances: checks.len(),
            worst_error,
            worst_ratio,
            failures,
            passed: failures == 0,
        });
    }
    if results.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "filter `{}` matches no property",
            cfg.filter.as_deref().unwrap_or_default()
        )));
    }
    Ok(PropsReport {
        seed: cfg.seed,
        instances: cfg.instances,
        dims: cfg.dims.clone(),
        results,
    })
}

const SPREAD: f64 = 1.0;
const ENTRY_TOL: f64 = 1e-8;

fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
    spd(rng, n, SPREAD)
}

/// Violation of `x ⪯ y` against the majorization slack.
fn majorization_check(x: &LogSingularVector, y: &LogSingularVector) -> Result<Check> {
    let slack = MAJORIZATION_SLACK * (x.norm() + y.norm()).max(1.0);
    Ok(Check::new(majorization_violation(x, y)?.max(0.0), slack))
}

fn vec_check(x: &LogSingularVector, y: &LogSingularVector) -> Check {
    Check::new(x.max_abs_diff(y), ENTRY_TOL * x.norm().max(y.norm()).max(1.0))
}

fn mat_distance_check(a: &SpdMatrix, b: &SpdMatrix) -> Result<Check> {
    Ok(Check::new(distance(a, b)?, ENTRY_TOL))
}

fn norm_is_distance(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let p = rand_spd(rng, n);
    let q = rand_spd(rng, n);
    let d = vectorial_distance(&p, &q)?;
    let norm = Check::new((d.norm() - distance(&p, &q)?).abs(), ENTRY_TOL * d.norm().max(1.0));
    let from_identity = vectorial_distance(&SpdMatrix::identity(n), &p)?;
    let sigma = log_singular_values(p.as_matrix())?;
    Ok(Check::worst([norm, vec_check(&from_identity, &sigma)]))
}

fn congruence_isometry(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let p = rand_spd(rng, n);
    let q = rand_spd(rng, n);
    let g = invertible(rng, n);
    let lhs = vectorial_distance(&congruence(&g, &p)?, &congruence(&g, &q)?)?;
    Ok(vec_check(&lhs, &vectorial_distance(&p, &q)?))
}

fn vectorial_triangle(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let (p, q, r) = (rand_spd(rng, n), rand_spd(rng, n), rand_spd(rng, n));
    let lhs = vectorial_distance(&p, &q)?;
    let rhs = vectorial_distance(&p, &r)?.add(&vectorial_distance(&r, &q)?)?;
    majorization_check(&lhs, &rhs)
}

fn reversal(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let (p, q) = (rand_spd(rng, n), rand_spd(rng, n));
    Ok(vec_check(
        &vectorial_distance(&q, &p)?,
        &vectorial_distance(&p, &q)?.opposite(),
    ))
}

fn geodesic_segment(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let (p, q) = (rand_spd(rng, n), rand_spd(rng, n));
    let xi = vectorial_distance(&p, &q)?;
    let ts = [0.0, 0.25, 0.5, 0.75, 1.0];
    let pts: Vec<SpdMatrix> = ts.iter().map(|&t| geodesic(&p, &q, t)).collect::<Result<_>>()?;
    let mut checks = Vec::new();
    for i in 0..ts.len() {
        for j in i + 1..ts.len() {
            let d = vectorial_distance(&pts[i], &pts[j])?;
            checks.push(vec_check(&d, &xi.scaled(ts[j] - ts[i])));
        }
    }
    Ok(Check::worst(checks))
}

fn midpoint_contraction(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let (p, q, r) = (rand_spd(rng, n), rand_spd(rng, n), rand_spd(rng, n));
    let lhs = vectorial_distance(&geodesic(&r, &p, 0.5)?, &geodesic(&r, &q, 0.5)?)?;
    majorization_check(&lhs, &vectorial_distance(&p, &q)?.scaled(0.5))
}

fn geodesic_equivariance(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let (p, q) = (rand_spd(rng, n), rand_spd(rng, n));
    let g = invertible(rng, n);
    let t = rng.random_range(0.0..1.0);
    let lhs = congruence(&g, &geodesic(&p, &q, t)?)?;
    let rhs = geodesic(&congruence(&g, &p)?, &congruence(&g, &q)?, t)?;
    mat_distance_check(&lhs, &rhs)
}

fn geodesic_convexity(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let (p, q, r, o) = (rand_spd(rng, n), rand_spd(rng, n), rand_spd(rng, n), rand_spd(rng, n));
    let mut checks = Vec::new();
    for t in [0.0, 0.5, 1.0] {
        let lhs = vectorial_distance(&geodesic(&p, &q, t)?, &geodesic(&r, &o, t)?)?;
        let rhs = vectorial_distance(&p, &r)?
            .scaled(1.0 - t)
            .add(&vectorial_distance(&q, &o)?.scaled(t))?;
        checks.push(majorization_check(&lhs, &rhs)?);
    }
    Ok(Check::worst(checks))
}

fn random_weights(rng: &mut ChaCha8Rng, m: usize) -> Result<WeightVector> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    WeightVector::new(raw.iter().map(|w| w / total).collect())
}

/// Full cycles used where a property holds at every full-cycle iterate.
const FIXED_CYCLES: usize = 20;

fn barycenter_equivariance(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let m = rng.random_range(2..=4);
    let atoms: Vec<SpdMatrix> = (0..m).map(|_| rand_spd(rng, n)).collect();
    let w = random_weights(rng, m)?;
    let g = invertible(rng, n);
    let moved: Vec<SpdMatrix> = atoms.iter().map(|a| congruence(&g, a)).collect::<Result<_>>()?;
    let lhs = congruence(&g, &inductive_mean_cycles(&atoms, &w, FIXED_CYCLES)?)?;
    let rhs = inductive_mean_cycles(&moved, &w, FIXED_CYCLES)?;
    mat_distance_check(&lhs, &rhs)
}

fn barycenter_perturbation(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let m = rng.random_range(2..=4);
    let mut atoms: Vec<SpdMatrix> = (0..m).map(|_| rand_spd(rng, n)).collect();
    let w = random_weights(rng, m)?;
    let u = inductive_mean_cycles(&atoms, &w, FIXED_CYCLES)?;
    let old = atoms[m - 1].clone();
    atoms[m - 1] = rand_spd(rng, n);
    let v = inductive_mean_cycles(&atoms, &w, FIXED_CYCLES)?;
    let lhs = vectorial_distance(&u, &v)?;
    let rhs = vectorial_distance(&old, &atoms[m - 1])?.scaled(w.values()[m - 1]);
    majorization_check(&lhs, &rhs)
}

/// Cycles for the permutation check, which only holds in the limit.
const LIMIT_CYCLES: usize = 128;

fn barycenter_permutation(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let m = rng.random_range(2..=4);
    let atoms: Vec<SpdMatrix> = (0..m).map(|_| rand_spd(rng, n)).collect();
    let w = random_weights(rng, m)?;
    let mut order: Vec<usize> = (0..m).collect();
    // Nontrivial rotation of the atom order, then a random swap.
    order.rotate_left(rng.random_range(1..m));
    let (i, j) = (rng.random_range(0..m), rng.random_range(0..m));
    order.swap(i, j);
    let p_atoms: Vec<SpdMatrix> = order.iter().map(|&k| atoms[k].clone()).collect();
    let p_w = WeightVector::new(order.iter().map(|&k| w.values()[k]).collect())?;
    let run = |a: &[SpdMatrix], w: &WeightVector| -> Result<(SpdMatrix, f64)> {
        let half = inductive_mean_cycles(a, w, LIMIT_CYCLES / 2)?;
        let full = inductive_mean_cycles(a, w, LIMIT_CYCLES)?;
        // With O(1/k) convergence the distance to the limit after k cycles
        // is about the distance moved between k/2 and k.
        let moved = distance(&half, &full)?;
        Ok((full, moved))
    };
    let (a, ea) = run(&atoms, &w)?;
    let (b, eb) = run(&p_atoms, &p_w)?;
    Ok(Check::new(distance(&a, &b)?, 2.0 * (ea + eb) + ENTRY_TOL))
}

fn commuting_mean(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let m = rng.random_range(2..=5);
    let w = random_weights(rng, m)?;
    let u = orthogonal(rng, n);
    let diags: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| 2f64.powf(rng.random_range(-3.0..3.0))).collect())
        .collect();
    let atoms: Vec<SpdMatrix> = diags
        .iter()
        .map(|d| SpdMatrix::new(&u * DMatrix::from_diagonal(&DVector::from_column_slice(d)) * u.transpose()))
        .collect::<Result<_>>()?;
    let b = crate::spd::inductive_barycenter(&atoms, &w, &Default::default())?;
    let gm: Vec<f64> = (0..n)
        .map(|i| {
            diags
                .iter()
                .zip(w.values())
                .map(|(d, wk)| wk * d[i].ln())
                .sum::<f64>()
                .exp()
        })
        .collect();
    let expected = SpdMatrix::new(&u * DMatrix::from_diagonal(&DVector::from_vec(gm)) * u.transpose())?;
    let rel = (b.mean.as_matrix() - expected.as_matrix()).amax() / expected.as_matrix().amax();
    Ok(Check::new(rel, ENTRY_TOL))
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn metric_sv_equivalence(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let px = rand_spd(rng, n);
    let pf = rand_spd(rng, n);
    let a = invertible(rng, n);
    let from_b: Vec<f64> = metric_log_singular_values(&px, &pf, &a)?
        .values()
        .iter()
        .map(|s| 2f64.powf(2.0 * s))
        .collect();
    let m = a.transpose() * pf.as_matrix() * &a;
    // Generalized problem via Cholesky: L⁻¹ M L⁻ᵀ.
    let l = px
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("Cholesky failed".into()))?
        .l();
    let li = l
        .try_inverse()
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let gen = sorted_desc(
        symmetrize(&(&li * &m * li.transpose()))
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect(),
    );
    // Adjoint form P⁻¹AᵀQA, a non-symmetric matrix with real spectrum.
    let adj = px.inverse()?.into_matrix() * &m;
    let complex = adj.complex_eigenvalues();
    let imag = complex.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let adj_vals = sorted_desc(complex.iter().map(|c| c.re).collect());
    let scale = from_b[0].max(1.0);
    let err = from_b
        .iter()
        .zip(&gen)
        .zip(&adj_vals)
        .map(|((x, y), z)| (x - y).abs().max((x - z).abs()).max((y - z).abs()))
        .fold(imag, f64::max);
    Ok(Check::new(err / scale, ENTRY_TOL))
}

fn sv_derivative(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    // Simple spectrum of H + Hᵀ with gaps ≥ 0.1.
    let (h, lam) = loop {
        let h = gaussian(rng, n, n);
        let lam = sorted_desc(
            (&h + h.transpose())
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .collect(),
        );
        if lam.windows(2).all(|w| w[0] - w[1] >= 0.1) {
            break (h, lam);
        }
    };
    let step = 1e-4;
    let sigma = |t: f64| log_singular_values(&(&h * t).exp());
    let (s1, s2) = (sigma(step)?, sigma(2.0 * step)?);
    // One-sided second-order difference; σ⃗ is not differentiable from the
    // left at t = 0, where the ordering of the branches swaps.
    let fd: Vec<f64> = s1
        .values()
        .iter()
        .zip(s2.values())
        .map(|(a, b)| (4.0 * a - b) / (2.0 * step))
        .collect();
    let err = fd
        .iter()
        .zip(&lam)
        .map(|(f, l)| (f - l / (2.0 * LN_2)).abs())
        .fold(0.0, f64::max);
    Ok(Check::new(err, 1e-5))
}

fn lyapunov_derivative(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let p = rand_spd(rng, n);
    let vp = symmetric(rng, n);
    let vq = symmetric(rng, n);
    let ups = |eps: f64| -> Result<DMatrix<f64>> {
        let pe = SpdMatrix::new(p.as_matrix() + &vp * eps)?;
        let qe = SpdMatrix::new(p.as_matrix() + &vq * eps)?;
        Ok(pe.power(-0.5)?.into_matrix() * qe.sqrt()?.into_matrix())
    };
    let step = 1e-5 * p.eigenvalues()?.last().copied().unwrap_or(1.0);
    let fd = (ups(step)? - ups(-step)?) / (2.0 * step);
    let exact = p.power(-0.5)?.into_matrix() * lyapunov_solve(&p.sqrt()?, &(&vq - &vp))?;
    Ok(Check::new((fd - &exact).amax() / exact.amax().max(1.0), 1e-5))
}

fn lyapunov_residual(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let s = rand_spd(rng, n);
    let v = symmetric(rng, n);
    let h = lyapunov_solve(&s, &v)?;
    let r = &h * s.as_matrix() + s.as_matrix() * &h - &v;
    Ok(Check::new(
        r.amax(),
        1e-10 * v.amax().max(1.0) * s.as_matrix().amax().max(1.0),
    ))
}

fn horn(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let b = invertible(rng, n);
    let c = invertible(rng, n);
    let (sb, sc, sbc) = (
        log_singular_values(&b)?,
        log_singular_values(&c)?,
        log_singular_values(&(&b * &c))?,
    );
    let (mut pb, mut pc, mut pbc) = (0.0, 0.0, 0.0);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        pb += sb.values()[k];
        pc += sc.values()[k];
        pbc += sbc.values()[k];
        worst = worst.max(pbc - pb - pc);
    }
    Ok(Check::new(worst, 1e-9 * (sb.norm() + sc.norm()).max(1.0)))
}

fn scaling(rng: &mut ChaCha8Rng, n: usize) -> Result<Check> {
    let px = rand_spd(rng, n);
    let pf = rand_spd(rng, n);
    let a = invertible(rng, n);
    let c = 2f64.powf(rng.random_range(-4.0..4.0));
    let dt = metric_log_singular_values(&px, &pf, &a)?;
    let dt_c = metric_log_singular_values(&px.scale(c)?, &pf.scale(c)?, &a)?;
    let j = gaussian(rng, n, n);
    let pdot = symmetric(rng, n);
    let ct = ct_spectrum_at(&px, &j, &pdot)?;
    let ct_c = ct_spectrum_at(&px.scale(c)?, &j, &(&pdot * c))?;
    let tol = 1e-10;
    Ok(Check::worst([
        Check::new(dt.max_abs_diff(&dt_c), tol * dt.norm().max(1.0)),
        Check::new(ct.max_abs_diff(&ct_c), tol * ct.norm().max(1.0)),
    ]))
}
