//! Restoration-entropy upper bounds, minimizing metric sequences, the
//! finite-time Lyapunov oracle and the equilibrium lower bound.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{cocycle_path, flow, CompactSet, SystemModel, TimeKind};
use crate::error::{Error, Result};
use crate::metric::{
    ct_metric_spectrum, metric_singular_values, EvalFn, MetricField, OrbitalFn, OrbitalSource, DEFAULT_FD_STEP,
    LOG_ZERO,
};
use crate::report::{
    unix_ms, BoundReport, ExcludedRecord, OracleSummary, PointRecord, RefinementStep, Units, SCHEMA_VERSION,
};
use crate::spd::{
    congruence, inductive_barycenter_lenient, inductive_mean_cycles, symmetrize, BarycenterOptions, LogSingularVector,
    SpdMatrix, WeightVector,
};

/// Default number of time nodes for `P_T`.
pub const DEFAULT_TIME_SAMPLES: usize = 64;

/// Relative singular-value floor below which a Jacobian counts as singular.
pub const SINGULAR_JACOBIAN_FLOOR: f64 = 1e-13;

pub const EQUILIBRIUM_TOL: f64 = 1e-9;

fn units_of(system: &SystemModel) -> Units {
    match system.time() {
        TimeKind::Discrete => Units::BitsPerStep,
        TimeKind::Continuous => Units::BitsPerTime,
    }
}

/// Errors that abort a sweep rather than exclude one point.
fn is_fatal(e: &Error) -> bool {
    e.is_config() || matches!(e, Error::SingularJacobian { .. })
}

enum Outcome<T> {
    Kept(T),
    Excluded(ExcludedRecord),
}

/// Evaluates `f` at every point concurrently; results keep input order.
fn per_point<T: Send>(
    points: &[DVector<f64>],
    f: impl Fn(&DVector<f64>) -> Result<T> + Sync,
) -> Result<(Vec<T>, Vec<ExcludedRecord>)> {
    let outcomes: Vec<Outcome<T>> = points
        .par_iter()
        .map(|x| match f(x) {
            Ok(v) => Ok(Outcome::Kept(v)),
            Err(e) if is_fatal(&e) => Err(e),
            Err(e) => Ok(Outcome::Excluded(ExcludedRecord {
                state: x.as_slice().to_vec(),
                reason: e.to_string(),
            })),
        })
        .collect::<Result<_>>()?;
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Kept(v) => kept.push(v),
            Outcome::Excluded(e) => excluded.push(e),
        }
    }
    Ok((kept, excluded))
}

fn check_metric(system: &SystemModel, set: &CompactSet, metric: &MetricField) -> Result<()> {
    if metric.dim() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: metric.dim(),
        });
    }
    if set.dim() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: set.dim(),
        });
    }
    Ok(())
}

fn assemble(
    system: &SystemModel,
    set: &CompactSet,
    metric: &MetricField,
    resolution: &[usize],
    records: Vec<PointRecord>,
    excluded: Vec<ExcludedRecord>,
) -> Result<BoundReport> {
    let best = records
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
            Some((_, b)) if b >= r.local => acc,
            _ => Some((i, r.local)),
        })
        .ok_or_else(|| {
            Error::Numeric(format!(
                "every sample point was excluded (first reason: {})",
                excluded.first().map_or("none", |e| e.reason.as_str())
            ))
        })?;
    let horizon = metric
        .descriptor()
        .params
        .get("N")
        .or_else(|| metric.descriptor().params.get("T"))
        .copied();
    Ok(BoundReport {
        schema_version: SCHEMA_VERSION,
        system: system.info(),
        set: set.clone(),
        set_note: None,
        metric: metric.descriptor().clone(),
        horizon,
        resolution: resolution.to_vec(),
        units: units_of(system),
        maximizer: records[best.0].state.clone(),
        bound: best.1,
        per_point: records,
        excluded,
        refinement: Vec::new(),
        invariance: None,
        oracle: None,
        seed: None,
        generated_unix_ms: unix_ms(),
    })
}

/// Discrete-time bound `max_x Σ max(0, log₂ αᵢᴾ(x))` over the grid, in
/// bits per step.
pub fn dt_bound(
    system: &SystemModel,
    set: &CompactSet,
    metric: &MetricField,
    resolution: &[usize],
) -> Result<BoundReport> {
    if system.time() != TimeKind::Discrete {
        return Err(Error::Unsupported("dt_bound needs a discrete-time system".into()));
    }
    check_metric(system, set, metric)?;
    let points = set.sample(resolution)?;
    let (records, excluded) = per_point(&points, |x| {
        let s = metric_singular_values(metric, x, &system.rhs(x), &system.jacobian(x))?;
        Ok(PointRecord {
            state: s.point,
            local: s.values.positive_part_sum(),
            spectrum: s.values,
        })
    })?;
    assemble(system, set, metric, resolution, records, excluded)
}

/// Continuous-time bound `max_x Σ max(0, ςᵢᴾ(x)) / (2 ln 2)` over the
/// grid, in bits per unit time.
pub fn ct_bound(
    system: &SystemModel,
    set: &CompactSet,
    metric: &MetricField,
    resolution: &[usize],
) -> Result<BoundReport> {
    if system.time() != TimeKind::Continuous {
        return Err(Error::Unsupported("ct_bound needs a continuous-time system".into()));
    }
    check_metric(system, set, metric)?;
    if !metric.has_orbital_derivative() {
        return Err(Error::Unsupported(format!(
            "metric `{}` has no orbital derivative; enable the flow finite difference",
            metric.descriptor().label
        )));
    }
    let points = set.sample(resolution)?;
    let (records, excluded) = per_point(&points, |x| {
        let s = ct_metric_spectrum(metric, x, &system.jacobian(x), &metric.orbital_derivative(x)?)?;
        Ok(PointRecord {
            state: s.point,
            local: s.values.positive_part_sum() / (2.0 * LN_2),
            spectrum: s.values,
        })
    })?;
    assemble(system, set, metric, resolution, records, excluded)
}

/// `dt_bound` or `ct_bound` depending on the system's time type.
pub fn bound(
    system: &SystemModel,
    set: &CompactSet,
    metric: &MetricField,
    resolution: &[usize],
) -> Result<BoundReport> {
    match system.time() {
        TimeKind::Discrete => dt_bound(system, set, metric, resolution),
        TimeKind::Continuous => ct_bound(system, set, metric, resolution),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Stop once consecutive bounds differ by less than this (bits).
    pub tol: f64,
    pub max_resolution: usize,
    pub max_points: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_resolution: 161,
            max_points: 200_000,
        }
    }
}

/// Repeats [`bound`] with resolution `r → 2r − 1` (nested grids) until the
/// bound moves by less than `opts.tol` or the budget is reached. The last
/// report carries the refinement history.
pub fn refined_bound(
    system: &SystemModel,
    set: &CompactSet,
    metric: &MetricField,
    resolution: &[usize],
    opts: &RefineOptions,
) -> Result<BoundReport> {
    let mut res = resolution.to_vec();
    let mut report = bound(system, set, metric, &res)?;
    let mut history = vec![RefinementStep {
        resolution: res.clone(),
        points: report.per_point.len() + report.excluded.len(),
        bound: report.bound,
    }];
    loop {
        let next: Vec<usize> = res.iter().map(|r| 2 * r - 1).collect();
        let full: usize = if next.len() == 1 {
            next[0].pow(set.dim() as u32)
        } else {
            next.iter().product()
        };
        if next.iter().any(|r| *r > opts.max_resolution) || full > opts.max_points {
            break;
        }
        let finer = bound(system, set, metric, &next)?;
        let change = (finer.bound - report.bound).abs();
        history.push(RefinementStep {
            resolution: next.clone(),
            points: finer.per_point.len() + finer.excluded.len(),
            bound: finer.bound,
        });
        report = finer;
        res = next;
        if change < opts.tol {
            break;
        }
    }
    report.refinement = history;
    Ok(report)
}

fn check_invertible(a: &DMatrix<f64>, x: &DVector<f64>) -> Result<()> {
    let sv = a.clone().svd(false, false).singular_values;
    if !(sv.min() > SINGULAR_JACOBIAN_FLOOR * sv.max()) {
        return Err(Error::SingularJacobian {
            point: x.as_slice().to_vec(),
        });
    }
    Ok(())
}

/// Atoms `A⁽ˢ⁾(x)^-1 ∗ I` at the given cocycle times.
fn inverse_atoms(system: &SystemModel, x: &DVector<f64>, times: &[f64]) -> Result<Vec<SpdMatrix>> {
    let n = system.dim();
    let id = SpdMatrix::identity(n);
    cocycle_path(system, x, times)?
        .into_iter()
        .map(|c| {
            check_invertible(&c.matrix, x)?;
            let inv = c.matrix.try_inverse().ok_or_else(|| Error::SingularJacobian {
                point: x.as_slice().to_vec(),
            })?;
            congruence(&inv, &id)
        })
        .collect()
}

struct BarycentricMetric {
    system: SystemModel,
    times: Vec<f64>,
    weights: WeightVector,
    opts: BarycenterOptions,
    check_jacobian: bool,
}

impl BarycentricMetric {
    fn atoms(&self, x: &DVector<f64>) -> Result<Vec<SpdMatrix>> {
        if self.check_jacobian {
            check_invertible(&self.system.jacobian(x), x)?;
        }
        inverse_atoms(&self.system, x, &self.times)
    }

    /// `bar(atoms)^-1` and the number of cycles used.
    fn eval(&self, x: &DVector<f64>) -> Result<(SpdMatrix, usize)> {
        let b = inductive_barycenter_lenient(&self.atoms(x)?, &self.weights, &self.opts)?;
        Ok((b.mean.inverse()?, b.cycles))
    }

    fn eval_cycles(&self, x: &DVector<f64>, cycles: usize) -> Result<SpdMatrix> {
        inductive_mean_cycles(&self.atoms(x)?, &self.weights, cycles)?.inverse()
    }
}

/// `Pₙ(x) = bar(I, A⁽¹⁾(x)^-1 ∗ I, …, A⁽ᴺ⁻¹⁾(x)^-1 ∗ I)^-1` with equal
/// weights, atoms in the order `j = 0…N−1`.
///
/// The barycenter is stopped by `opts`; an unconverged iterate is still
/// an SPD field and is used as is.
pub fn minimizing_metric_dt(system: &SystemModel, n: usize, opts: &BarycenterOptions) -> Result<MetricField> {
    if system.time() != TimeKind::Discrete {
        return Err(Error::Unsupported("Pₙ is defined for discrete-time systems".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("Pₙ needs N ≥ 1".into()));
    }
    let inner = Arc::new(BarycentricMetric {
        system: system.clone(),
        times: (0..n).map(|j| j as f64).collect(),
        weights: WeightVector::uniform(n)?,
        opts: *opts,
        check_jacobian: true,
    });
    let eval: EvalFn = Arc::new(move |x| Ok(inner.eval(x)?.0));
    let params = BTreeMap::from([("N".to_string(), n as f64), ("tol".to_string(), opts.tol)]);
    Ok(MetricField::tabulated(system.dim(), format!("auto:{n}"), params, eval))
}

/// Equally spaced nodes on `[0, T]`, both ends included.
pub fn time_nodes(t: f64, samples: usize) -> Vec<f64> {
    if samples <= 1 {
        return vec![0.0];
    }
    (0..samples)
        .map(|k| {
            if k + 1 == samples {
                t
            } else {
                t * k as f64 / (samples - 1) as f64
            }
        })
        .collect()
}

/// `P_T(x) = bar(A⁽ˢ⁾(x)^-1 ∗ I : s ∈ nodes)^-1` with equal weights.
///
/// `Ṗ` is the forward difference `(P_T(φʰ(x)) − P_T(x)) / h`, where the
/// barycenter at `φʰ(x)` runs the same number of cycles as at `x`.
pub fn minimizing_metric_ct(
    system: &SystemModel,
    t: f64,
    samples: usize,
    opts: &BarycenterOptions,
    h: f64,
) -> Result<MetricField> {
    if system.time() != TimeKind::Continuous {
        return Err(Error::Unsupported("P_T is defined for continuous-time systems".into()));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("P_T needs T > 0, got {t}")));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("P_T needs at least one time sample".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let times = time_nodes(t, samples);
    let inner = Arc::new(BarycentricMetric {
        system: system.clone(),
        weights: WeightVector::uniform(times.len())?,
        times,
        opts: *opts,
        check_jacobian: false,
    });
    let e = inner.clone();
    let eval: EvalFn = Arc::new(move |x| Ok(e.eval(x)?.0));
    let o = inner;
    let orbital: OrbitalFn = Arc::new(move |x| {
        let (p, cycles) = o.eval(x)?;
        let ahead = flow(&o.system, x, h)?;
        let q = o.eval_cycles(&ahead, cycles)?;
        Ok(symmetrize(&((q.into_matrix() - p.into_matrix()) / h)))
    });
    let params = BTreeMap::from([
        ("T".to_string(), t),
        ("time_samples".to_string(), samples as f64),
        ("tol".to_string(), opts.tol),
    ]);
    Ok(MetricField::tabulated(system.dim(), format!("auto:{t}"), params, eval)
        .with_orbital(OrbitalSource::FlowDifference { h }, orbital))
}

/// [`minimizing_metric_ct`] with the default step.
pub fn minimizing_metric_ct_default(system: &SystemModel, t: f64, samples: usize) -> Result<MetricField> {
    minimizing_metric_ct(system, t, samples, &BarycenterOptions::default(), DEFAULT_FD_STEP)
}

/// `Λᵢ(t, x) = log₂ αᵢ(A⁽ᵗ⁾(x)) / t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovProfile {
    pub x: Vec<f64>,
    pub t: f64,
    pub exponents: LogSingularVector,
}

impl LyapunovProfile {
    pub fn positive_sum(&self) -> f64 {
        self.exponents.positive_part_sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub resolution: Vec<usize>,
    pub horizons: Vec<f64>,
    /// `max_x Σ max(0, Λᵢ(t, x))` per horizon.
    pub values: Vec<f64>,
    pub maximizers: Vec<Vec<f64>>,
    /// Aitken Δ² extrapolation of the last three values.
    pub aitken: Option<f64>,
    /// Grouped by point, horizons in order.
    pub profiles: Vec<LyapunovProfile>,
    pub excluded: Vec<ExcludedRecord>,
}

impl OracleResult {
    pub fn summary(&self) -> OracleSummary {
        OracleSummary {
            resolution: self.resolution.clone(),
            horizons: self.horizons.clone(),
            values: self.values.clone(),
            aitken: self.aitken,
        }
    }
}

/// `{start, 2·start, 4·start, …}`, `count` entries.
pub fn geometric_horizons(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start * 2f64.powi(i as i32)).collect()
}

/// Aitken Δ² estimate from the last three entries; `None` with fewer than
/// three or a vanishing second difference.
pub fn aitken(values: &[f64]) -> Option<f64> {
    let [a, b, c] = values.get(values.len().checked_sub(3)?..)? else {
        return None;
    };
    let d2 = (c - b) - (b - a);
    if d2.abs() <= 1e-15 * a.abs().max(b.abs()).max(c.abs()).max(1.0) {
        return (c.is_finite()).then_some(*c);
    }
    Some(c - (c - b).powi(2) / d2)
}

/// Finite-time Lyapunov oracle on the grid of `set`.
pub fn lyapunov_oracle(
    system: &SystemModel,
    set: &CompactSet,
    horizons: &[f64],
    resolution: &[usize],
) -> Result<OracleResult> {
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("oracle needs at least one horizon".into()));
    }
    if horizons.iter().any(|t| !(*t > 0.0) || !t.is_finite()) || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "oracle horizons must be positive and increasing".into(),
        ));
    }
    if set.dim() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: set.dim(),
        });
    }
    let points = set.sample(resolution)?;
    let (groups, excluded) = per_point(&points, |x| {
        cocycle_path(system, x, horizons)?
            .into_iter()
            .map(|c| {
                let sv = c.matrix.svd(false, false).singular_values;
                if sv.iter().any(|s| !s.is_finite()) {
                    return Err(Error::Numeric("non-finite cocycle".into()));
                }
                let exps = sv
                    .iter()
                    .map(|&s| if s > 0.0 { s.log2() / c.t } else { LOG_ZERO })
                    .collect();
                Ok(LyapunovProfile {
                    x: x.as_slice().to_vec(),
                    t: c.t,
                    exponents: LogSingularVector::from_unsorted(exps),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if groups.is_empty() {
        return Err(Error::Numeric("every oracle sample point was excluded".into()));
    }
    let mut values = vec![f64::NEG_INFINITY; horizons.len()];
    let mut maximizers = vec![Vec::new(); horizons.len()];
    for g in &groups {
        for (k, p) in g.iter().enumerate() {
            let v = p.positive_sum();
            if v > values[k] {
                values[k] = v;
                maximizers[k] = p.x.clone();
            }
        }
    }
    Ok(OracleResult {
        resolution: resolution.to_vec(),
        horizons: horizons.to_vec(),
        aitken: aitken(&values),
        values,
        maximizers,
        profiles: groups.into_iter().flatten().collect(),
        excluded,
    })
}

/// `(1 / ln 2) Σ max(Re βⱼ, 0)` over the eigenvalues `βⱼ` of `Df(O)`.
pub fn proximate_entropy(system: &SystemModel, o: &DVector<f64>) -> Result<f64> {
    if system.time() != TimeKind::Continuous {
        return Err(Error::Unsupported(
            "proximate entropy is defined for vector fields".into(),
        ));
    }
    if o.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: o.len(),
        });
    }
    let residual = system.rhs(o).norm();
    if !(residual <= EQUILIBRIUM_TOL * o.norm().max(1.0)) {
        return Err(Error::NotEquilibrium {
            point: o.as_slice().to_vec(),
            residual,
        });
    }
    let beta = system.jacobian(o).complex_eigenvalues();
    Ok(beta.iter().map(|b| b.re.max(0.0)).sum::<f64>() / LN_2)
}

/// `2(2a − 1) / ln 2`, valid for `a ≥ 2/3`.
pub fn lanford_closed_form(a: f64) -> Result<f64> {
    if !(a >= 2.0 / 3.0 - 1e-12) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "the closed form holds for a ≥ 2/3 only, got a = {a}"
        )));
    }
    Ok(2.0 * (2.0 * a - 1.0) / LN_2)
}

/// `max_x Σ⁺ σ⃗(P(x)^½) + max_x Σ⁺ σ⃗(P(x)^-½)` over `points`, in bits.
///
/// Bounds the gap between finite-horizon sums measured in `P` and in the
/// identity metric, so `oracle(t) ≤ bound + distortion / t`.
pub fn metric_distortion(metric: &MetricField, points: &[DVector<f64>]) -> Result<f64> {
    let mut up: f64 = 0.0;
    let mut down: f64 = 0.0;
    for x in points {
        let logs: Vec<f64> = metric.eval(x)?.eigenvalues()?.iter().map(|l| 0.5 * l.log2()).collect();
        up = up.max(logs.iter().map(|v| v.max(0.0)).sum());
        down = down.max(logs.iter().map(|v| (-v).max(0.0)).sum());
    }
    Ok(up + down)
}
