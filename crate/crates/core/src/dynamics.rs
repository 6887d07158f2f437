//! Dynamical systems, their flows and linear cocycles, and sampling of
//! compact sets.
//!
//! A [`SystemModel`] is either a map `x ↦ φ(x)` (discrete time) or a vector
//! field `ẋ = f(x)` (continuous time), always with an analytic Jacobian.
//! Continuous flows use classical fixed-step RK4; the variational equation
//! `V̇ = Df(x(t)) V, V(0) = I` is integrated jointly with the state so that
//! the cocycle `A⁽ᵗ⁾(x) = Dφᵗ(x)` and the orbit share every step.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeKind {
    Discrete,
    Continuous,
}

impl fmt::Display for TimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeKind::Discrete => f.write_str("discrete"),
            TimeKind::Continuous => f.write_str("continuous"),
        }
    }
}

/// Right-hand side and its exact Jacobian.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    /// `φ(x)` for maps, `f(x)` for vector fields.
    fn rhs(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// The three-dimensional polynomial vector field
///
/// ```text
/// ẋ = (a − 1)x − y + xz
/// ẏ = x + (a − 1)y + yz
/// ż = az − (x² + y² + z²)
/// ```
///
/// with equilibria `O₁ = 0` and `O₂ = (0, 0, a)`.
#[derive(Clone, Copy, Debug)]
pub struct Lanford {
    pub a: f64,
}

impl Dynamics for Lanford {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, s: &DVector<f64>) -> DVector<f64> {
        let (x, y, z, a) = (s[0], s[1], s[2], self.a);
        DVector::from_vec(vec![
            (a - 1.0) * x - y + x * z,
            x + (a - 1.0) * y + y * z,
            a * z - (x * x + y * y + z * z),
        ])
    }

    fn jacobian(&self, s: &DVector<f64>) -> DMatrix<f64> {
        let (x, y, z, a) = (s[0], s[1], s[2], self.a);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                a - 1.0 + z,
                -1.0,
                x,
                1.0,
                a - 1.0 + z,
                y,
                -2.0 * x,
                -2.0 * y,
                a - 2.0 * z,
            ],
        )
    }
}

/// `x ↦ Mx` or `ẋ = Mx`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: DMatrix<f64>,
}

impl Dynamics for LinearSystem {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IdentityMap {
    pub dim: usize,
}

impl Dynamics for IdentityMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }
}

/// Fixed-step RK4 settings for continuous-time systems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    /// Initial step, in time units.
    pub step: f64,
    /// Richardson error estimate allowed per unit time (relative).
    pub richardson_tol: f64,
    pub max_halvings: usize,
    /// State norm treated as blow-up.
    pub blowup_norm: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            richardson_tol: 1e-9,
            max_halvings: 6,
            blowup_norm: 1e8,
        }
    }
}

/// Name, time type and parameters of a system, as recorded in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub name: String,
    pub time: TimeKind,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone)]
pub struct SystemModel {
    name: String,
    time: TimeKind,
    params: BTreeMap<String, f64>,
    dynamics: Arc<dyn Dynamics>,
    integrator: IntegratorOptions,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("time", &self.time)
            .field("params", &self.params)
            .finish()
    }
}

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        time: TimeKind,
        params: BTreeMap<String, f64>,
        dynamics: Arc<dyn Dynamics>,
    ) -> Self {
        Self {
            name: name.into(),
            time,
            params,
            dynamics,
            integrator: IntegratorOptions::default(),
        }
    }

    pub fn with_integrator(mut self, integrator: IntegratorOptions) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn time(&self) -> TimeKind {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn integrator(&self) -> &IntegratorOptions {
        &self.integrator
    }

    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        self.dynamics.rhs(x)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.dynamics.jacobian(x)
    }

    pub fn info(&self) -> SystemInfo {
        SystemInfo {
            name: self.name.clone(),
            time: self.time,
            dim: self.dim(),
            params: self.params.clone(),
        }
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

pub const BUILTIN_NAMES: [&str; 4] = ["lanford", "linmap", "linode", "identity"];

/// Overrides accepted by [`builtin_system`].
#[derive(Clone, Debug, Default)]
pub struct SystemParams {
    pub a: Option<f64>,
    pub matrix: Option<DMatrix<f64>>,
    pub dim: Option<usize>,
}

fn matrix_params(m: &DMatrix<f64>) -> BTreeMap<String, f64> {
    let mut params = BTreeMap::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            params.insert(format!("m{i}{j}"), m[(i, j)]);
        }
    }
    params
}

fn check_matrix(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "system matrix must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite system matrix entry".into()));
    }
    Ok(())
}

pub fn lanford(a: f64) -> Result<SystemModel> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Lanford parameter a must be positive, got {a}"
        )));
    }
    let params = BTreeMap::from([("a".to_string(), a)]);
    Ok(SystemModel::new(
        "lanford",
        TimeKind::Continuous,
        params,
        Arc::new(Lanford { a }),
    ))
}

pub fn linear_map(m: DMatrix<f64>) -> Result<SystemModel> {
    check_matrix(&m)?;
    Ok(SystemModel::new(
        "linmap",
        TimeKind::Discrete,
        matrix_params(&m),
        Arc::new(LinearSystem { matrix: m }),
    ))
}

pub fn linear_ode(m: DMatrix<f64>) -> Result<SystemModel> {
    check_matrix(&m)?;
    Ok(SystemModel::new(
        "linode",
        TimeKind::Continuous,
        matrix_params(&m),
        Arc::new(LinearSystem { matrix: m }),
    ))
}

pub fn identity_map(dim: usize) -> Result<SystemModel> {
    if dim == 0 {
        return Err(Error::InvalidArgument("identity map needs dim ≥ 1".into()));
    }
    Ok(SystemModel::new(
        "identity",
        TimeKind::Discrete,
        BTreeMap::new(),
        Arc::new(IdentityMap { dim }),
    ))
}

pub const DEFAULT_LANFORD_A: f64 = 2.0 / 3.0;

pub fn default_linmap_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5])
}

pub fn default_linode_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.5, 2.0, 0.0, -1.0])
}

/// Looks up a built-in system by name.
pub fn builtin_system(name: &str, params: &SystemParams) -> Result<SystemModel> {
    match name {
        "lanford" => lanford(params.a.unwrap_or(DEFAULT_LANFORD_A)),
        "linmap" => linear_map(params.matrix.clone().unwrap_or_else(default_linmap_matrix)),
        "linode" => linear_ode(params.matrix.clone().unwrap_or_else(default_linode_matrix)),
        "identity" => identity_map(params.dim.or(params.matrix.as_ref().map(|m| m.nrows())).unwrap_or(2)),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

/// Every built-in system with default parameters.
pub fn builtin_systems() -> Vec<SystemModel> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin_system(n, &SystemParams::default()).expect("defaults are valid"))
        .collect()
}

/// Parses `diag:2,0.5`, `rows:2,1;0,2` or bare `2,1;0,2`.
pub fn parse_matrix(spec: &str) -> Result<DMatrix<f64>> {
    let bad = |why: &str| Error::InvalidArgument(format!("matrix `{spec}`: {why}"));
    let parse_row = |row: &str| -> Result<Vec<f64>> {
        row.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("bad number")))
            .collect()
    };
    if let Some(d) = spec.strip_prefix("diag:") {
        let d = parse_row(d)?;
        return Ok(DMatrix::from_diagonal(&DVector::from_vec(d)));
    }
    let body = spec.strip_prefix("rows:").unwrap_or(spec);
    let rows: Vec<Vec<f64>> = body.split(';').map(parse_row).collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(bad("not square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Extra restriction of a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// `x[axis] ≥ min`
    LowerBound { axis: usize, min: f64 },
    /// Body of revolution about `axial`:
    /// `x[r₀]² + x[r₁]² ≤ κ (x[axial] − lo)(hi − x[axial])`, with `[lo, hi]`
    /// the box bounds on the axial coordinate.
    Spindle {
        radial: [usize; 2],
        axial: usize,
        kappa: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Box,
    BoxWithConstraint,
}

/// Axis-aligned box, optionally cut down by a [`Constraint`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactSet {
    pub bounds: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<Constraint>,
}

impl CompactSet {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidArgument("compact set needs at least one axis".into()));
        }
        if let Some(b) = bounds
            .iter()
            .find(|b| !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "box bounds [{}, {}] must satisfy lo < hi",
                b[0], b[1]
            )));
        }
        Ok(Self {
            bounds,
            constraint: None,
        })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![[lo, hi]; dim])
    }

    pub fn with_constraint(mut self, c: Constraint) -> Result<Self> {
        let n = self.dim();
        let ok = match &c {
            Constraint::LowerBound { axis, .. } => *axis < n,
            Constraint::Spindle { radial, axial, kappa } => {
                radial[0] < n && radial[1] < n && *axial < n && *kappa >= 0.0
            }
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "constraint {c:?} does not fit a {n}-D box"
            )));
        }
        self.constraint = Some(c);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn kind(&self) -> SetKind {
        if self.constraint.is_some() {
            SetKind::BoxWithConstraint
        } else {
            SetKind::Box
        }
    }

    /// Membership with absolute slack.
    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let in_box = x
            .iter()
            .zip(&self.bounds)
            .all(|(v, b)| *v >= b[0] - slack && *v <= b[1] + slack);
        in_box
            && match &self.constraint {
                None => true,
                Some(Constraint::LowerBound { axis, min }) => x[*axis] >= *min - slack,
                Some(Constraint::Spindle { radial, axial, kappa }) => {
                    let [lo, hi] = self.bounds[*axial];
                    let r2 = x[radial[0]].powi(2) + x[radial[1]].powi(2);
                    r2 <= kappa * (x[*axial] - lo) * (hi - x[*axial]) + slack
                }
            }
    }

    /// Uniform grid over the box filtered by the constraint, row-major
    /// (last axis fastest).
    pub fn sample(&self, resolution: &[usize]) -> Result<Vec<DVector<f64>>> {
        sample_set(self, resolution)
    }
}

/// See [`CompactSet::sample`]. A single resolution applies to every axis.
pub fn sample_set(set: &CompactSet, resolution: &[usize]) -> Result<Vec<DVector<f64>>> {
    let n = set.dim();
    let res: Vec<usize> = match resolution.len() {
        1 => vec![resolution[0]; n],
        l if l == n => resolution.to_vec(),
        l => return Err(Error::DimensionMismatch { expected: n, got: l }),
    };
    if let Some(r) = res.iter().find(|r| **r < 2) {
        return Err(Error::InvalidArgument(format!("grid resolution must be ≥ 2, got {r}")));
    }
    let axes: Vec<Vec<f64>> = set
        .bounds
        .iter()
        .zip(&res)
        .map(|(b, &r)| {
            (0..r)
                .map(|i| {
                    if i + 1 == r {
                        b[1]
                    } else {
                        b[0] + (b[1] - b[0]) * i as f64 / (r - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    let total: usize = res.iter().product();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let x: Vec<f64> = idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect();
        if set.contains(&x, 0.0) {
            out.push(DVector::from_vec(x));
        }
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < res[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySample(format!(
            "the constraint excludes every point of the {res:?} grid"
        )));
    }
    Ok(out)
}

/// Value of the linear cocycle `A⁽ᵗ⁾(x) = Dφᵗ(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CocycleJacobian {
    pub x: DVector<f64>,
    pub t: f64,
    /// `φᵗ(x)`
    pub end: DVector<f64>,
    pub matrix: DMatrix<f64>,
}

fn steps_of(t: f64) -> Result<usize> {
    if !(t >= 0.0) || t.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "discrete-time horizon must be a nonnegative integer, got {t}"
        )));
    }
    Ok(t as usize)
}

fn guard(system: &SystemModel, x: &DVector<f64>, time: f64) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || norm > system.integrator.blowup_norm {
        return Err(Error::Escape { time, norm });
    }
    Ok(())
}

type Augmented = (DVector<f64>, Option<DMatrix<f64>>);

fn rk4_step(system: &SystemModel, x: &DVector<f64>, v: Option<&DMatrix<f64>>, h: f64) -> Augmented {
    let f = |x: &DVector<f64>, v: Option<&DMatrix<f64>>| -> Augmented {
        (system.rhs(x), v.map(|v| system.jacobian(x) * v))
    };
    let axpy = |x: &DVector<f64>, v: Option<&DMatrix<f64>>, k: &Augmented, c: f64| -> Augmented {
        (x + &k.0 * c, v.map(|v| v + k.1.as_ref().expect("tangent slope") * c))
    };
    let k1 = f(x, v);
    let s2 = axpy(x, v, &k1, 0.5 * h);
    let k2 = f(&s2.0, s2.1.as_ref());
    let s3 = axpy(x, v, &k2, 0.5 * h);
    let k3 = f(&s3.0, s3.1.as_ref());
    let s4 = axpy(x, v, &k3, h);
    let k4 = f(&s4.0, s4.1.as_ref());
    let x_new = x + (&k1.0 + &k2.0 * 2.0 + &k3.0 * 2.0 + &k4.0) * (h / 6.0);
    let v_new = v.map(|v| {
        let (a, b, c, d) = (
            k1.1.as_ref().unwrap(),
            k2.1.as_ref().unwrap(),
            k3.1.as_ref().unwrap(),
            k4.1.as_ref().unwrap(),
        );
        v + (a + b * 2.0 + c * 2.0 + d) * (h / 6.0)
    });
    (x_new, v_new)
}

fn integrate_fixed(
    system: &SystemModel,
    x: &DVector<f64>,
    v: Option<&DMatrix<f64>>,
    t0: f64,
    duration: f64,
    h: f64,
) -> Result<Augmented> {
    let n = ((duration / h) - 1e-9).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let mut state: Augmented = (x.clone(), v.cloned());
    for i in 0..n {
        state = rk4_step(system, &state.0, state.1.as_ref(), h);
        guard(system, &state.0, t0 + (i + 1) as f64 * h)?;
    }
    Ok(state)
}

fn augmented_gap(a: &Augmented, b: &Augmented) -> f64 {
    let mut gap = (&a.0 - &b.0).amax();
    let mut scale = b.0.amax();
    if let (Some(va), Some(vb)) = (&a.1, &b.1) {
        gap = gap.max((va - vb).amax());
        scale = scale.max(vb.amax());
    }
    gap / scale.max(1.0)
}

/// RK4 over `[t0, t0 + duration]`, halving the step until the Richardson
/// estimate `|y_h − y_{h/2}| / 15` (relative) per unit time is below the
/// tolerance or the halving budget is spent.
fn integrate_segment(
    system: &SystemModel,
    x: &DVector<f64>,
    v: Option<&DMatrix<f64>>,
    t0: f64,
    duration: f64,
) -> Result<Augmented> {
    if duration == 0.0 {
        return Ok((x.clone(), v.cloned()));
    }
    let opts = system.integrator;
    let mut h = opts.step.min(duration);
    let mut coarse = integrate_fixed(system, x, v, t0, duration, h)?;
    let mut fine = integrate_fixed(system, x, v, t0, duration, h / 2.0)?;
    let mut halvings = 0;
    while augmented_gap(&coarse, &fine) / 15.0 / duration > opts.richardson_tol && halvings < opts.max_halvings {
        h /= 2.0;
        halvings += 1;
        coarse = fine;
        fine = integrate_fixed(system, x, v, t0, duration, h / 2.0)?;
    }
    Ok(fine)
}

/// `φᵗ(x₀)`: `t`-fold composition for maps, RK4 for vector fields.
pub fn flow(system: &SystemModel, x0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    system.check_state(x0)?;
    match system.time {
        TimeKind::Discrete => {
            let mut x = x0.clone();
            for i in 0..steps_of(t)? {
                x = system.rhs(&x);
                guard(system, &x, (i + 1) as f64)?;
            }
            Ok(x)
        }
        TimeKind::Continuous => {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::InvalidArgument(format!("flow horizon must be ≥ 0, got {t}")));
            }
            Ok(integrate_segment(system, x0, None, 0.0, t)?.0)
        }
    }
}

/// `A⁽ᵗ⁾(x₀)` together with `φᵗ(x₀)`.
pub fn cocycle(system: &SystemModel, x0: &DVector<f64>, t: f64) -> Result<CocycleJacobian> {
    Ok(cocycle_path(system, x0, &[t])?.remove(0))
}

/// Cocycle values at each of the nondecreasing `times`, from one pass
/// along the orbit.
pub fn cocycle_path(system: &SystemModel, x0: &DVector<f64>, times: &[f64]) -> Result<Vec<CocycleJacobian>> {
    system.check_state(x0)?;
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("cocycle times must be nondecreasing".into()));
    }
    let n = system.dim();
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    let mut a = DMatrix::identity(n, n);
    match system.time {
        TimeKind::Discrete => {
            let mut done = 0usize;
            for &t in times {
                let target = steps_of(t)?;
                while done < target {
                    a = system.jacobian(&x) * &a;
                    x = system.rhs(&x);
                    done += 1;
                    guard(system, &x, done as f64)?;
                }
                out.push(CocycleJacobian {
                    x: x0.clone(),
                    t,
                    end: x.clone(),
                    matrix: a.clone(),
                });
            }
        }
        TimeKind::Continuous => {
            let mut now = 0.0;
            for &t in times {
                if !(t >= 0.0) || !t.is_finite() {
                    return Err(Error::InvalidArgument(format!("cocycle horizon must be ≥ 0, got {t}")));
                }
                let (nx, na) = integrate_segment(system, &x, Some(&a), now, t - now)?;
                x = nx;
                a = na.expect("tangent propagated");
                now = t;
                out.push(CocycleJacobian {
                    x: x0.clone(),
                    t,
                    end: x.clone(),
                    matrix: a.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Time at which the orbit of `x0` first leaves `set` (with `slack`),
/// checked after every map iterate or base RK4 step up to `horizon`.
pub fn exit_time(
    system: &SystemModel,
    set: &CompactSet,
    x0: &DVector<f64>,
    horizon: f64,
    slack: f64,
) -> Result<Option<f64>> {
    system.check_state(x0)?;
    if !set.contains(x0.as_slice(), slack) {
        return Ok(Some(0.0));
    }
    match system.time {
        TimeKind::Discrete => {
            let mut x = x0.clone();
            for i in 1..=steps_of(horizon.floor())? {
                x = system.rhs(&x);
                let norm = x.norm();
                if !norm.is_finite() || norm > system.integrator.blowup_norm || !set.contains(x.as_slice(), slack) {
                    return Ok(Some(i as f64));
                }
            }
            Ok(None)
        }
        TimeKind::Continuous => {
            let n = (horizon / system.integrator.step).ceil().max(1.0) as usize;
            let h = horizon / n as f64;
            let mut x = x0.clone();
            for i in 1..=n {
                x = rk4_step(system, &x, None, h).0;
                let norm = x.norm();
                if !norm.is_finite() || norm > system.integrator.blowup_norm || !set.contains(x.as_slice(), slack) {
                    return Ok(Some(i as f64 * h));
                }
            }
            Ok(None)
        }
    }
}

/// A sample point whose orbit left the set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapedPoint {
    pub state: Vec<f64>,
    pub time: f64,
}

/// Outcome of the forward-invariance spot check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub horizon: f64,
    pub checked: usize,
    pub escaped: usize,
    pub escape_fraction: f64,
    /// The first few escapes, in sample order.
    pub examples: Vec<EscapedPoint>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.escaped == 0
    }
}

/// Membership slack used by the invariance spot check.
pub const INVARIANCE_SLACK: f64 = 1e-9;

/// Iterates every sample point up to `horizon` and counts the orbits that
/// leave `set`.
pub fn invariance_spot_check(
    system: &SystemModel,
    set: &CompactSet,
    points: &[DVector<f64>],
    horizon: f64,
) -> Result<InvarianceReport> {
    let exits: Vec<Option<f64>> = points
        .par_iter()
        .map(|x| exit_time(system, set, x, horizon, INVARIANCE_SLACK))
        .collect::<Result<_>>()?;
    let escapes: Vec<EscapedPoint> = points
        .iter()
        .zip(&exits)
        .filter_map(|(x, e)| {
            e.map(|time| EscapedPoint {
                state: x.as_slice().to_vec(),
                time,
            })
        })
        .collect();
    let escaped = escapes.len();
    Ok(InvarianceReport {
        horizon,
        checked: points.len(),
        escaped,
        escape_fraction: if points.is_empty() {
            0.0
        } else {
            escaped as f64 / points.len() as f64
        },
        examples: escapes.into_iter().take(10).collect(),
    })
}

/// Shape of the candidate set for the Lanford system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanfordSetOptions {
    /// `r` in `[−r, r]²` for the `x, y` axes.
    pub half_width: f64,
    /// The `z` range is `[0, height_factor · a]`. With 1.25, `O₂` lies on
    /// every grid whose `z` resolution is `5k + 1`.
    pub height_factor: f64,
    pub initial_kappa: f64,
    pub check_horizon: f64,
    pub max_shrinks: usize,
}

impl Default for LanfordSetOptions {
    fn default() -> Self {
        Self {
            half_width: 1.2,
            height_factor: 1.25,
            initial_kappa: 0.5,
            check_horizon: 10.0,
            max_shrinks: 60,
        }
    }
}

/// A compact set that passed the invariance spot check.
#[derive(Clone, Debug)]
pub struct AutoSet {
    pub set: CompactSet,
    pub points: Vec<DVector<f64>>,
    pub kappa: f64,
    pub shrinks: usize,
    pub invariance: InvarianceReport,
}

/// Lanford box `[−r, r]² × [0, h·a]` before any spindle cut.
pub fn lanford_box(a: f64, opts: &LanfordSetOptions) -> Result<CompactSet> {
    let r = opts.half_width;
    CompactSet::new(vec![[-r, r], [-r, r], [0.0, opts.height_factor * a]])
}

/// Shrinks the spindle `x² + y² ≤ κ z (z_max − z)` inside the Lanford box
/// (halving `κ`) until no grid point escapes within the check horizon.
///
/// Orbits off the `z`-axis leave every such box for `a ≥ 2/3`, so on coarse
/// grids the loop typically ends with the axis points only; that segment
/// joins `O₁` to `O₂` and is exactly invariant.
pub fn lanford_auto_set(system: &SystemModel, resolution: &[usize], opts: &LanfordSetOptions) -> Result<AutoSet> {
    let a = system
        .param("a")
        .filter(|_| system.name() == "lanford")
        .ok_or_else(|| Error::InvalidArgument("automatic set selection is only defined for lanford".into()))?;
    let base = lanford_box(a, opts)?;
    let mut kappa = opts.initial_kappa;
    let mut last_report = None;
    for shrinks in 0..=opts.max_shrinks {
        let set = base.clone().with_constraint(Constraint::Spindle {
            radial: [0, 1],
            axial: 2,
            kappa,
        })?;
        let points = set.sample(resolution)?;
        let report = invariance_spot_check(system, &set, &points, opts.check_horizon)?;
        if report.passed() {
            return Ok(AutoSet {
                set,
                points,
                kappa,
                shrinks,
                invariance: report,
            });
        }
        last_report = Some(report);
        kappa *= 0.5;
    }
    let r = last_report.expect("at least one attempt");
    Err(Error::Numeric(format!(
        "no invariant Lanford set found after {} shrinks ({} of {} points still escape)",
        opts.max_shrinks, r.escaped, r.checked
    )))
}

/// Default set for a system: the Lanford box cut to `z ≥ 0`, `[−1, 1]ⁿ`
/// otherwise.
pub fn default_set(system: &SystemModel) -> Result<CompactSet> {
    match (system.name(), system.param("a")) {
        ("lanford", Some(a)) => {
            lanford_box(a, &LanfordSetOptions::default())?.with_constraint(Constraint::LowerBound { axis: 2, min: 0.0 })
        }
        _ => CompactSet::cube(system.dim(), -1.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn flow_examples() {
        let sys = lanford(2.0 / 3.0).unwrap();
        let x0 = v(&[0.1, -0.2, 0.3]);
        assert_eq!(flow(&sys, &x0, 0.0).unwrap(), x0);
        let o2 = v(&[0.0, 0.0, 2.0 / 3.0]);
        assert!((flow(&sys, &o2, 5.0).unwrap() - &o2).amax() < 1e-14);
        let decay = linear_ode(DMatrix::from_element(1, 1, -1.0)).unwrap();
        let x = flow(&decay, &v(&[1.0]), 1.0).unwrap();
        assert!((x[0] - (-1f64).exp()).abs() < 1e-8);
        let dbl = linear_map(DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(flow(&dbl, &v(&[1.0]), 3.0).unwrap()[0], 8.0);
        assert!(flow(&dbl, &v(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn blow_up_is_reported_with_escape_time() {
        // ż < −z² below the plane z = 0.
        let sys = lanford(2.0 / 3.0).unwrap();
        match flow(&sys, &v(&[0.0, 0.0, -1.0]), 5.0) {
            Err(Error::Escape { time, .. }) => assert!(time > 0.0 && time < 5.0),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn cocycle_examples() {
        let sys = lanford(2.0 / 3.0).unwrap();
        let x0 = v(&[0.1, 0.0, 0.4]);
        assert_eq!(cocycle(&sys, &x0, 0.0).unwrap().matrix, DMatrix::identity(3, 3));
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let map = linear_map(m.clone()).unwrap();
        let c = cocycle(&map, &v(&[0.3, 0.1]), 5.0).unwrap();
        assert_eq!(c.matrix, m.pow(5));
    }

    #[test]
    fn continuous_cocycle_of_linear_ode_is_matrix_exponential() {
        let m = default_linode_matrix();
        let sys = linear_ode(m.clone()).unwrap();
        let c = cocycle(&sys, &v(&[0.2, 0.1]), 1.5).unwrap();
        let expected = (m * 1.5).exp();
        assert!((c.matrix - expected).amax() < 1e-9);
    }

    #[test]
    fn cocycle_composition_on_lanford_samples() {
        let sys = lanford(2.0 / 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let x = v(&[
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(0.1..0.6),
            ]);
            let (s, t) = (rng.random_range(0.2..1.5), rng.random_range(0.2..1.5));
            let whole = cocycle(&sys, &x, s + t).unwrap();
            let first = cocycle(&sys, &x, t).unwrap();
            let second = cocycle(&sys, &first.end, s).unwrap();
            let residual = (&whole.matrix - &second.matrix * &first.matrix).amax();
            assert!(residual < 1e-6, "residual {residual}");
        }
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut systems = builtin_systems();
        systems.push(lanford(1.0).unwrap());
        for sys in &systems {
            let n = sys.dim();
            for _ in 0..100 {
                let x = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
                let jac = sys.jacobian(&x);
                let h = 1e-6;
                let mut fd = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    fd.set_column(j, &((sys.rhs(&xp) - sys.rhs(&xm)) / (2.0 * h)));
                }
                let err = (&fd - &jac).amax() / jac.amax().max(1.0);
                assert!(err < 1e-5, "{}: relative error {err}", sys.name());
            }
        }
    }

    #[test]
    fn lanford_jacobian_at_upper_equilibrium() {
        let a = 2.0 / 3.0;
        let sys = lanford(a).unwrap();
        let j = sys.jacobian(&v(&[0.0, 0.0, a]));
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[a - 1.0 + a, -1.0, 0.0, 1.0, a - 1.0 + a, 0.0, 0.0, 0.0, a - 2.0 * a],
        );
        assert_eq!(j, expected);
        let id = builtin_system(
            "identity",
            &SystemParams {
                dim: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(id.jacobian(&v(&[1.0, 2.0, 3.0])), DMatrix::identity(3, 3));
        let m = parse_matrix("rows:1,2;3,4").unwrap();
        let lin = builtin_system(
            "linmap",
            &SystemParams {
                matrix: Some(m.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(lin.jacobian(&v(&[5.0, 6.0])), m);
        assert!(matches!(
            builtin_system("lorenz", &SystemParams::default()),
            Err(Error::UnknownSystem(_))
        ));
    }

    #[test]
    fn matrix_parsing() {
        assert_eq!(parse_matrix("diag:2,0.5").unwrap(), default_linmap_matrix());
        assert_eq!(
            parse_matrix("2,1;0,2").unwrap(),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0])
        );
        assert!(parse_matrix("1,2;3").is_err());
        assert!(parse_matrix("diag:x").is_err());
    }

    #[test]
    fn sampling_examples() {
        let unit = CompactSet::new(vec![[0.0, 1.0]]).unwrap();
        let pts = sample_set(&unit, &[3]).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);

        let b = CompactSet::new(vec![[-1.0, 1.0], [0.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(b.sample(&[4, 3, 5]).unwrap().len(), 60);
        // Row-major: last axis fastest.
        let pts = b.sample(&[2, 2, 2]).unwrap();
        assert_eq!(pts[1].as_slice(), &[-1.0, 0.0, 4.0]);

        let lan = default_set(&lanford(2.0 / 3.0).unwrap()).unwrap();
        assert!(lan.sample(&[5]).unwrap().iter().all(|p| p[2] >= 0.0));

        let empty = CompactSet::new(vec![[0.0, 1.0]])
            .unwrap()
            .with_constraint(Constraint::LowerBound { axis: 0, min: 2.0 })
            .unwrap();
        assert!(matches!(empty.sample(&[3]), Err(Error::EmptySample(_))));
        assert!(unit.sample(&[1]).is_err());
        assert!(CompactSet::new(vec![[1.0, 1.0]]).is_err());
    }

    #[test]
    fn spot_check_detects_escapes() {
        let grow = linear_map(default_linmap_matrix()).unwrap();
        let set = CompactSet::cube(2, -1.0, 1.0).unwrap();
        let pts = set.sample(&[5]).unwrap();
        let r = invariance_spot_check(&grow, &set, &pts, 3.0).unwrap();
        assert!(!r.passed());
        // Points with |x| > 1/2 leave after one step, |x| = 1/2 after two.
        assert!(r.escape_fraction > 0.0 && r.escape_fraction < 1.0);
        let id = identity_map(2).unwrap();
        assert!(invariance_spot_check(&id, &set, &pts, 3.0).unwrap().passed());
    }

    #[test]
    fn lanford_auto_set_contains_both_equilibria_on_grid() {
        let a = 2.0 / 3.0;
        let sys = lanford(a).unwrap();
        let auto = lanford_auto_set(&sys, &[11], &LanfordSetOptions::default()).unwrap();
        assert!(auto.invariance.passed());
        let has = |p: [f64; 3]| auto.points.iter().any(|q| (q - v(&p)).amax() < 1e-12);
        assert!(has([0.0, 0.0, 0.0]));
        assert!(has([0.0, 0.0, a]));
        assert!(auto.points.iter().all(|p| p[2] >= 0.0));
    }
}
