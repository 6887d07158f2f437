use std::path::{Path, PathBuf};

use nalgebra::DVector;
use restent::dynamics::{
    default_set, invariance_spot_check, lanford, lanford_auto_set, CompactSet, InvarianceReport, LanfordSetOptions,
    SystemModel, TimeKind,
};
use restent::entropy::{
    bound, geometric_horizons, lanford_closed_form, lyapunov_oracle, minimizing_metric_ct, minimizing_metric_dt,
    proximate_entropy, refined_bound, OracleResult, RefineOptions,
};
use restent::error::Error;
use restent::metric::MetricField;
use restent::props::{run_properties, PropsConfig};
use restent::report::{fmt_num, nonincreasing, sweep_csv, BoundReport};
use restent::spd::SpdMatrix;

use crate::config::{
    load_matrix, parse_list, resolve, validate_horizon, BoundArgs, LanfordArgs, MetricChoice, OracleArgs, PropsArgs,
    Setup, SweepArgs,
};

/// Why a command stopped without success.
#[derive(Debug)]
pub enum Failure {
    Error(Error),
    Invariance(String),
    Properties(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Error(e) if e.is_config() => 1,
            Failure::Error(_) => 2,
            Failure::Invariance(_) => 3,
            Failure::Properties(_) => 4,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Error(e) if e.is_config() => format!("configuration error: {e}"),
            Failure::Error(e) => format!("numeric failure: {e}"),
            Failure::Invariance(m) => format!("invariance check failed: {m}"),
            Failure::Properties(m) => format!("property violation: {m}"),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

const DEFAULT_CHECK_HORIZON: f64 = 10.0;

fn default_resolution(system: &SystemModel, metric: Option<&MetricChoice>) -> Vec<usize> {
    if system.name() == "lanford" {
        vec![21]
    } else if matches!(metric, Some(MetricChoice::Auto(_))) {
        vec![5]
    } else {
        vec![11]
    }
}

fn stem_path(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn build_metric(setup: &Setup, choice: &MetricChoice) -> restent::error::Result<MetricField> {
    let system = &setup.system;
    let n = system.dim();
    match choice {
        MetricChoice::Identity => Ok(MetricField::identity(n)),
        MetricChoice::Constant(path) => {
            let p = SpdMatrix::new(load_matrix(path)?)?;
            if p.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p.dim(),
                });
            }
            Ok(MetricField::constant(p))
        }
        MetricChoice::LanfordEq15 => match (system.name(), system.param("a")) {
            ("lanford", Some(a)) => MetricField::lanford(a),
            _ => Err(Error::InvalidArgument(
                "the lanford-eq15 metric needs the lanford system".into(),
            )),
        },
        MetricChoice::Auto(h) => {
            validate_horizon(system, *h)?;
            match system.time() {
                TimeKind::Discrete => minimizing_metric_dt(system, *h as usize, &setup.bary),
                TimeKind::Continuous => {
                    minimizing_metric_ct(system, *h, setup.time_samples, &setup.bary, setup.fd_step)
                }
            }
        }
    }
}

struct SetChoice {
    set: CompactSet,
    note: String,
    invariance: Option<InvarianceReport>,
}

/// Declared sets must pass the spot check; Lanford without a declared set
/// gets the automatic spindle; other systems use the nominal cube.
fn choose_set(setup: &Setup, resolution: &[usize]) -> std::result::Result<SetChoice, Failure> {
    let system = &setup.system;
    let horizon = setup.check_horizon.unwrap_or(DEFAULT_CHECK_HORIZON);
    if let Some(set) = &setup.declared_set {
        let points = set.sample(resolution)?;
        let report = invariance_spot_check(system, set, &points, horizon)?;
        if !report.passed() {
            let first = report
                .examples
                .first()
                .map(|e| format!(" (first: {:?} leaves at t = {})", e.state, e.time))
                .unwrap_or_default();
            return Err(Failure::Invariance(format!(
                "{} of {} sample orbits leave the declared set within t = {horizon}{first}",
                report.escaped, report.checked
            )));
        }
        return Ok(SetChoice {
            set: set.clone(),
            note: format!("declared; spot check passed at horizon {horizon}"),
            invariance: Some(report),
        });
    }
    if system.name() == "lanford" {
        let opts = LanfordSetOptions {
            check_horizon: horizon,
            ..Default::default()
        };
        let auto = lanford_auto_set(system, resolution, &opts)?;
        return Ok(SetChoice {
            note: format!(
                "automatic: box ∩ spindle with kappa = {} after {} shrinks; spot check passed at horizon {horizon}",
                auto.kappa, auto.shrinks
            ),
            set: auto.set,
            invariance: Some(auto.invariance),
        });
    }
    Ok(SetChoice {
        set: default_set(system)?,
        note: "nominal cube; forward invariance not checked".into(),
        invariance: None,
    })
}

fn print_report(r: &BoundReport) {
    println!("system: {} ({})", r.system.name, r.system.time);
    println!("metric: {}", r.metric.label);
    println!("set: {}", r.set_note.as_deref().unwrap_or("-"));
    println!(
        "points: {} evaluated, {} excluded (resolution {:?})",
        r.per_point.len(),
        r.excluded.len(),
        r.resolution
    );
    println!("bound: {} {} at {:?}", fmt_num(r.bound), r.units.label(), r.maximizer);
    warn_excluded(r);
}

/// The maximum ignores excluded points, so it only bounds the rest of the grid.
fn warn_excluded(r: &BoundReport) {
    if let Some(first) = r.excluded.first() {
        eprintln!(
            "warning: {} of {} points excluded; the bound covers the remaining points only (first reason: {})",
            r.excluded.len(),
            r.excluded.len() + r.per_point.len(),
            first.reason
        );
    }
}

fn write_report(r: &BoundReport, stem: &Path) -> restent::error::Result<()> {
    r.write_json(&stem_path(stem, ".report.json"))?;
    r.write_points_csv(&stem_path(stem, ".points.csv"))?;
    Ok(())
}

pub fn cmd_bound(args: &BoundArgs) -> Outcome {
    let setup = resolve(&args.system, Some(&args.metric), None)?;
    let choice = setup.metric.clone().unwrap_or(MetricChoice::Identity);
    let metric = build_metric(&setup, &choice)?;
    let resolution = setup
        .resolution
        .clone()
        .unwrap_or_else(|| default_resolution(&setup.system, Some(&choice)));
    let set = choose_set(&setup, &resolution)?;
    let mut report = if args.refine {
        refined_bound(&setup.system, &set.set, &metric, &resolution, &RefineOptions::default())?
    } else {
        bound(&setup.system, &set.set, &metric, &resolution)?
    };
    report.set_note = Some(set.note);
    report.invariance = set.invariance;
    print_report(&report);
    let stem = setup.output.clone().unwrap_or_else(|| PathBuf::from("bound"));
    write_report(&report, &stem)?;
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Outcome {
    let setup = resolve(&args.system, Some(&args.metric), args.horizons.as_deref())?;
    let horizons = match &setup.horizons {
        Some(h) if !h.is_empty() => h.clone(),
        Some(_) => return Err(Error::InvalidArgument("sweep needs at least one horizon".into()).into()),
        None => match setup.system.time() {
            TimeKind::Discrete => vec![1.0, 2.0, 4.0, 8.0, 16.0],
            TimeKind::Continuous => vec![0.5, 1.0, 2.0, 4.0],
        },
    };
    for h in &horizons {
        validate_horizon(&setup.system, *h)?;
    }
    let resolution = setup
        .resolution
        .clone()
        .unwrap_or_else(|| default_resolution(&setup.system, Some(&MetricChoice::Auto(1.0))));
    let set = choose_set(&setup, &resolution)?;
    let stem = setup.output.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    let mut reports = Vec::new();
    println!("horizon,bound");
    for h in &horizons {
        let metric = build_metric(&setup, &MetricChoice::Auto(*h))?;
        let mut r = bound(&setup.system, &set.set, &metric, &resolution)?;
        r.set_note = Some(set.note.clone());
        r.invariance = set.invariance.clone();
        println!("{h},{}", fmt_num(r.bound));
        warn_excluded(&r);
        r.write_json(&stem_path(&stem, &format!(".h{h}.report.json")))?;
        reports.push(r);
    }
    std::fs::write(stem_path(&stem, ".sweep.csv"), sweep_csv(&reports)).map_err(Error::from)?;
    if let Some(last) = reports.last() {
        write_report(last, &stem)?;
    }
    let bounds: Vec<f64> = reports.iter().map(|r| r.bound).collect();
    let verdict = if nonincreasing(&bounds, 1e-6) {
        "nonincreasing"
    } else {
        "NOT nonincreasing"
    };
    println!("monotonicity: {verdict} (slack 1e-6)");
    Ok(())
}

fn oracle_csv(o: &OracleResult) -> String {
    let mut out = String::from("horizon,value\n");
    for (t, v) in o.horizons.iter().zip(&o.values) {
        out.push_str(&format!("{},{}\n", fmt_num(*t), fmt_num(*v)));
    }
    out
}

fn print_oracle(o: &OracleResult) {
    for (t, v) in o.horizons.iter().zip(&o.values) {
        println!("oracle t = {t}: {}", fmt_num(*v));
    }
    match o.aitken {
        Some(a) => println!("aitken: {}", fmt_num(a)),
        None => println!("aitken: n/a (fewer than three horizons)"),
    }
    if !o.excluded.is_empty() {
        println!("excluded points: {}", o.excluded.len());
    }
}

pub fn cmd_oracle(args: &OracleArgs) -> Outcome {
    let setup = resolve(&args.system, None, args.horizons.as_deref())?;
    let horizons = setup.horizons.clone().unwrap_or_else(|| geometric_horizons(5.0, 4));
    let resolution = setup.resolution.clone().unwrap_or_else(|| {
        if setup.system.name() == "lanford" {
            vec![11]
        } else {
            vec![5]
        }
    });
    let set = choose_set(&setup, &resolution)?;
    println!("set: {}", set.note);
    let o = lyapunov_oracle(&setup.system, &set.set, &horizons, &resolution)?;
    print_oracle(&o);
    let stem = setup.output.clone().unwrap_or_else(|| PathBuf::from("oracle"));
    std::fs::write(
        stem_path(&stem, ".oracle.json"),
        serde_json::to_string_pretty(&o).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;
    std::fs::write(stem_path(&stem, ".oracle.csv"), oracle_csv(&o)).map_err(Error::from)?;
    Ok(())
}

pub fn cmd_lanford(args: &LanfordArgs) -> Outcome {
    let a = args.a.unwrap_or(restent::dynamics::DEFAULT_LANFORD_A);
    let system = lanford(a)?;
    let reference = lanford_closed_form(a)?;
    let horizons = match &args.horizons {
        Some(h) => parse_list::<f64>(h, "horizon")?,
        None => geometric_horizons(5.0, 4),
    };
    let res = args.resolution.unwrap_or(21);
    let ores = args.oracle_resolution.unwrap_or(11);
    let check = horizons.iter().copied().fold(DEFAULT_CHECK_HORIZON, f64::max);
    let opts = LanfordSetOptions {
        check_horizon: check,
        ..Default::default()
    };
    let auto = lanford_auto_set(&system, &[res], &opts)?;
    let metric = MetricField::lanford(a)?;
    let mut report = bound(&system, &auto.set, &metric, &[res])?;
    report.set_note = Some(format!(
        "automatic: box ∩ spindle with kappa = {} after {} shrinks; spot check passed at horizon {check}",
        auto.kappa, auto.shrinks
    ));
    report.invariance = Some(auto.invariance.clone());
    let oracle_set = lanford_auto_set(&system, &[ores], &opts)?;
    let o = lyapunov_oracle(&system, &oracle_set.set, &horizons, &[ores])?;
    report.oracle = Some(o.summary());
    let h_l = proximate_entropy(&system, &DVector::from_vec(vec![0.0, 0.0, a]))?;

    print_report(&report);
    print_oracle(&o);
    println!("closed form 2(2a-1)/ln2: {}", fmt_num(reference));
    println!("proximate entropy at O2: {}", fmt_num(h_l));
    println!("bound - closed form: {:.3e}", report.bound - reference);

    let stem = args.output.clone().unwrap_or_else(|| PathBuf::from("lanford"));
    write_report(&report, &stem)?;
    std::fs::write(stem_path(&stem, ".oracle.csv"), oracle_csv(&o)).map_err(Error::from)?;
    Ok(())
}

pub fn cmd_props(args: &PropsArgs) -> Outcome {
    let cfg = PropsConfig {
        seed: args.seed,
        instances: args.instances,
        dims: parse_list::<usize>(&args.dims, "dimension")?,
        tol_scale: args.tol,
        filter: args.filter.clone(),
    };
    let report = run_properties(&cfg)?;
    println!("seed: {}", report.seed);
    for r in &report.results {
        println!(
            "{} {:<30} instances={} worst_error={:.3e} worst_ratio={:.3e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.instances,
            r.worst_error,
            r.worst_ratio
        );
    }
    let failed: Vec<&str> = report
        .results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        println!("all {} properties passed", report.results.len());
        Ok(())
    } else {
        Err(Failure::Properties(failed.join(", ")))
    }
}
