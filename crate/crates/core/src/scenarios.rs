//! The two headline experiments: a finite-time gradient blowup trapped between a
//! shrinking circle and a traveling hyperbola, and an infinite-time vertical
//! tangency at `(1, q)` for a semi-stable class, sandwiched between a polar
//! interpolant and the stationary curve.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::barriers::{
    build_polar_interpolant, capped_kappa, circle_gap_points, find_b_min, hyperbola_clearance,
    minimal_radius, polar_clearance, stationary_clearance, verify_circle_pde_inequality,
    verify_hyperbola_subsolution, verify_polar_subsolution, CertReport, CircleBarrier,
    HyperbolaBarrier, PolarInterpolant, RateVariant, CERT_GRID,
};
use crate::error::{invalid, Error, Result};
use crate::geometry::KahlerData;
use crate::graph_flow::{
    monitor_section4, run_until_with, GraphFlowState, GraphProblem, MonitorReport, RunOutput,
    Section4Audit, StopCause, StopRule,
};
use crate::interp::MonotoneCubic;
use crate::output::{
    write_json, write_monitor, write_rows, write_snapshots, write_traced, SCHEMA_VERSION,
};
use crate::profile::PotentialProfile;
use crate::stationary::{construct_semistable, SemiStableData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FiniteSingularity,
    InfiniteSingularity,
    Custom,
}

/// Flat key-value configuration shared by all scenarios; unset keys take the
/// per-scenario defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Scale of the finite-time construction: `a = 6R`, `u″ < R`.
    #[serde(rename = "R", alias = "r")]
    pub r: f64,
    pub n: u32,
    pub q: Option<f64>,
    pub p: Option<f64>,
    pub a: Option<f64>,
    pub a_gap: Option<f64>,
    /// Coefficient of the quadratic diffusion profile.
    pub kappa: Option<f64>,
    /// Two-column CSV `(x, u″)` replacing the quadratic profile.
    pub profile_csv: Option<PathBuf>,
    /// Two-column CSV `(x, f)` with the initial graph of a custom run.
    pub f0_csv: Option<PathBuf>,
    pub grid: Option<usize>,
    pub t_end: Option<f64>,
    pub snapshots: usize,
    pub monitor_every: usize,
    /// Stop threshold for `sup|f′|`.
    pub fp_threshold: f64,
    /// Target for `f′(1)` in the infinite-time run.
    pub fp1_threshold: f64,
    /// Final-to-initial ratio required of the distance to the stationary curve.
    pub distance_ratio: f64,
    pub delta_theta: f64,
    pub gradient_tol: f64,
    pub y0: Option<f64>,
    pub rate_variant: RateVariant,
    pub b_candidates: Vec<f64>,
    /// Fraction of the gap between the stationary curve and the interpolant used
    /// for the initial graph of the infinite-time run.
    pub lambda_amplitude: f64,
    pub cert_grid: usize,
    pub out: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::FiniteSingularity,
            r: 8.0,
            n: 3,
            q: None,
            p: None,
            a: None,
            a_gap: None,
            kappa: None,
            profile_csv: None,
            f0_csv: None,
            grid: None,
            t_end: None,
            snapshots: 30,
            monitor_every: 100,
            fp_threshold: 1e3,
            fp1_threshold: 1e2,
            distance_ratio: 0.5,
            delta_theta: 1e-5,
            gradient_tol: 1e-9,
            y0: None,
            rate_variant: RateVariant::OuterSquared,
            b_candidates: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            lambda_amplitude: 0.5,
            cert_grid: CERT_GRID,
            out: None,
        }
    }
}

impl ScenarioConfig {
    pub fn finite() -> Self {
        Self::default()
    }

    pub fn infinite() -> Self {
        Self {
            kind: ScenarioKind::InfiniteSingularity,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.grid {
            if n < 256 {
                return Err(invalid("grid", format!("need N >= 256, got {n}")));
            }
        }
        if !(self.r > 1.0) {
            return Err(invalid("R", format!("need R > 1, got {}", self.r)));
        }
        if self.n < 1 {
            return Err(invalid("n", "must be positive"));
        }
        if self.snapshots < 1 || self.monitor_every < 1 {
            return Err(invalid(
                "snapshots",
                "snapshot and monitor counts must be positive",
            ));
        }
        if !(self.lambda_amplitude > 0.0 && self.lambda_amplitude < 1.0) {
            return Err(invalid("lambda_amplitude", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Returns a copy with one key replaced, using the same names as the config file.
    pub fn with_override(&self, key: &str, value: serde_json::Value) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().expect("config serializes to an object");
        if !obj.contains_key(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        obj.insert(key.to_string(), value);
        let cfg: Self =
            serde_json::from_value(v).map_err(|e| Error::Config(format!("key `{key}`: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn profile_for(&self, kd: &KahlerData, default_kappa: f64) -> Result<PotentialProfile> {
        match &self.profile_csv {
            Some(p) => PotentialProfile::from_csv(kd.a, p),
            None => PotentialProfile::quadratic(kd, self.kappa.unwrap_or(default_kappa)),
        }
    }
}

/// Outcome of a scenario with everything needed to audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    pub pass: bool,
    pub stop_cause: StopCause,
    pub t_stop: f64,
    pub x_star: Option<f64>,
    pub steps: usize,
    pub grid: usize,
    pub class: KahlerData,
    /// Named pass/fail checks; the report passes iff all hold.
    pub checks: BTreeMap<String, bool>,
    pub certificates: Vec<CertReport>,
    pub audit: Option<Section4Audit>,
    pub diagnostics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    /// Files written, relative to the output directory.
    pub manifest: Vec<String>,
}

impl ScenarioReport {
    fn finish(&mut self) {
        self.pass = self.checks.values().all(|&v| v);
    }

    /// Name of the report file: falsified runs never replace a passing report.
    pub fn file_name(&self) -> &'static str {
        if self.pass {
            "report.json"
        } else {
            "report.falsified.json"
        }
    }
}

/// C² monotone-in-pieces interpolant through waypoints using the quintic
/// smoothstep `6s⁵ − 15s⁴ + 10s³` on every interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSpline {
    pub points: Vec<[f64; 2]>,
}

impl WaypointSpline {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 || points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(invalid(
                "waypoints",
                "need at least two points with increasing x",
            ));
        }
        Ok(Self { points })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = &self.points;
        if x <= p[0][0] {
            return p[0][1];
        }
        let k = p.partition_point(|w| w[0] <= x);
        if k >= p.len() {
            return p[p.len() - 1][1];
        }
        let (l, r) = (p[k - 1], p[k]);
        let s = (x - l[0]) / (r[0] - l[0]);
        let sm = s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
        l[1] + (r[1] - l[1]) * sm
    }

    /// Largest slope, attained at the midpoint of the steepest interval.
    pub fn max_slope(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| 1.875 * ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Finite-time singularity

/// Initial data and barriers of the finite-time construction.
#[derive(Debug, Clone)]
pub struct FiniteData {
    pub kd: KahlerData,
    pub profile: PotentialProfile,
    pub state: GraphFlowState,
    pub circle: CircleBarrier,
    pub hyperbola: HyperbolaBarrier,
    pub spline: WaypointSpline,
    pub circle_clearance: f64,
    pub hyperbola_clearance: f64,
}

/// Distance from each node of the graph to a dense sampling of the hyperbola at `b`.
fn hyperbola_distance(hb: &HyperbolaBarrier, b: f64, xs: &[f64], f: &[f64]) -> f64 {
    let y_ext = hb.y_extent();
    let samples: Vec<[f64; 2]> = (0..=4000)
        .map(|j| {
            let y = -y_ext + 2.0 * y_ext * j as f64 / 4000.0;
            [hb.g(b, y), y]
        })
        .collect();
    xs.iter()
        .zip(f)
        .map(|(&x, &y)| {
            samples
                .iter()
                .map(|s| (s[0] - x).hypot(s[1] - y))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Builds the finite-time scenario at scale `R`: `a = 6R`, `p = a + 1`, a circle of
/// radius `R` centered at `(3R, y0)` and hyperbolas with `b∞ = R`, `b0 = 5R`.
///
/// The initial graph runs flat at `q` below the circle, rises steeply left of the
/// hyperbola vertex to `p`, and stays flat above the hyperbola's top.
pub fn build_finite_data(cfg: &ScenarioConfig) -> Result<FiniteData> {
    let r = cfg.r;
    let a = cfg.a.unwrap_or(6.0 * r);
    if (a - 6.0 * r).abs() > 1e-12 {
        return Err(invalid("a", "the finite-time construction uses a = 6R"));
    }
    let p = cfg.p.unwrap_or(a + 1.0);
    let y0 = cfg.y0.unwrap_or(-3.375 * r);
    let q = cfg.q.unwrap_or(y0 - r - 0.25 * r);
    let y_ext = (a * a - r * r).sqrt();
    if !(p > y_ext + 0.1 * r) {
        return Err(Error::Infeasible(format!(
            "p = {p} must clear the top of the hyperbola at {y_ext}"
        )));
    }
    let kd = KahlerData::new(cfg.n, a, p, q)?;
    let kappa = cfg.kappa.unwrap_or(capped_kappa(a, r, 0.9));
    let profile = match &cfg.profile_csv {
        Some(path) => PotentialProfile::from_csv(a, path)?.with_r_cap(r)?,
        None => PotentialProfile::quadratic(&kd, kappa)?.with_r_cap(r)?,
    };
    let circle = CircleBarrier::new(r, y0)?;
    let hyperbola = HyperbolaBarrier::new(cfg.n, a, profile.k, r, 5.0 * r, cfg.rate_variant)?;
    let spline = WaypointSpline::new(vec![[1.0, q], [4.2 * r, q], [4.3 * r, p], [a, p]])?;
    let grid = cfg.grid.unwrap_or(4096);
    let problem = GraphProblem::new(kd, profile.clone(), grid)?;
    let state = GraphFlowState::from_fn(problem, |x| spline.eval(x))?;
    let xs = state.xs();
    let circle_clearance = circle_gap_points(&circle, r, xs, &state.f);
    let hyperbola_side = hyperbola_clearance(&hyperbola, hyperbola.b0, xs, &state.f);
    let hyperbola_dist = hyperbola_distance(&hyperbola, hyperbola.b0, xs, &state.f);
    let margin = 0.1 * r;
    if !(circle_clearance >= margin) {
        return Err(Error::Infeasible(format!(
            "initial clearance to the circle {circle_clearance} below {margin}"
        )));
    }
    if !(hyperbola_side > 0.0 && hyperbola_dist >= margin) {
        return Err(Error::Infeasible(format!(
            "initial clearance to the hyperbola {hyperbola_dist} below {margin}"
        )));
    }
    Ok(FiniteData {
        kd,
        profile,
        state,
        circle,
        hyperbola,
        spline,
        circle_clearance,
        hyperbola_clearance: hyperbola_dist,
    })
}

/// Clearance of the graph to both barriers at one monitor time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierRow {
    pub t: f64,
    pub circle_gap: f64,
    pub hyperbola_b: f64,
    pub hyperbola_clearance: f64,
    pub lambda_max: f64,
    pub sup_fp: f64,
}

/// Runs the finite-time scenario and checks for an interior gradient blowup
/// before the circle's extinction time with both barriers avoided.
pub fn run_finite_time(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let data = build_finite_data(cfg)?;
    let r = cfg.r;
    let life = data.circle.lifetime();
    let t_end = cfg.t_end.unwrap_or(life);
    let mut certificates = Vec::new();
    let circle_cert =
        verify_circle_pde_inequality(&data.circle, &data.profile, cfg.n, cfg.cert_grid)?;
    let hyperbola_certs: Vec<CertReport> = RateVariant::ALL
        .iter()
        .map(|&v| {
            let hb = HyperbolaBarrier::new(cfg.n, data.kd.a, data.profile.k, r, 5.0 * r, v)?;
            verify_hyperbola_subsolution(
                &hb,
                &data.profile,
                hb.hitting_time(2.0 * r),
                cfg.cert_grid,
            )
        })
        .collect::<Result<_>>()?;

    let mut diagnostics = BTreeMap::new();
    let mut notes = Vec::new();
    let t_hit = data.hyperbola.hitting_time(2.0 * r);
    diagnostics.insert("hyperbola_T".into(), t_hit);
    diagnostics.insert("hyperbola_T_over_quarter_R".into(), t_hit / (r / 4.0));
    match minimal_radius(cfg.n, 0.9, cfg.rate_variant, 2.0, 1e6) {
        Ok(rmin) => {
            diagnostics.insert("minimal_R".into(), rmin);
        }
        Err(e) => notes.push(format!("hyperbola horizon T < R/4 not certifiable: {e}")),
    }
    diagnostics.insert("kappa".into(), data.profile.k);
    diagnostics.insert("y0".into(), data.circle.y0);
    diagnostics.insert("initial_circle_clearance".into(), data.circle_clearance);
    diagnostics.insert(
        "initial_hyperbola_clearance".into(),
        data.hyperbola_clearance,
    );
    diagnostics.insert("initial_max_slope".into(), data.spline.max_slope());

    let stop = StopRule {
        t_end,
        fp_threshold: Some(cfg.fp_threshold),
        monitor_every: cfg.monitor_every,
        snapshot_every: Some(t_end / cfg.snapshots as f64),
        max_steps: usize::MAX,
    };
    let hb = data.hyperbola;
    let circle = data.circle;
    let mut rows: Vec<BarrierRow> = Vec::new();
    let mut b_state = (0.0, hb.b0);
    let run = run_until_with(data.state.clone(), &stop, |s, rep| {
        let b = match hb.advance_b(b_state.1, s.t - b_state.0) {
            Ok(b) => b,
            Err(e) => return ControlFlow::Break(e.to_string()),
        };
        b_state = (s.t, b);
        let cg = if s.t < life {
            circle
                .radius(s.t)
                .map(|rad| circle_gap_points(&circle, rad, s.xs(), &s.f))
                .unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        let hc = hyperbola_clearance(&hb, b, s.xs(), &s.f);
        rows.push(BarrierRow {
            t: s.t,
            circle_gap: cg,
            hyperbola_b: b,
            hyperbola_clearance: hc,
            lambda_max: rep.lambda_max,
            sup_fp: rep.sup_fp,
        });
        if cg <= 0.0 {
            return ControlFlow::Break(format!("graph crossed the circle at t = {}", s.t));
        }
        if hc <= 0.0 {
            return ControlFlow::Break(format!("graph crossed the hyperbola at t = {}", s.t));
        }
        ControlFlow::Continue(())
    });

    let xs = run.state.xs().to_vec();
    let dx = run.state.dx();
    let (x_star, t_star) = match &run.cause {
        StopCause::GradientBlowup { x_star, .. } => (Some(*x_star), run.state.t),
        _ => (None, run.state.t),
    };
    let min_cg = rows
        .iter()
        .map(|r| r.circle_gap)
        .fold(f64::INFINITY, f64::min);
    let min_hc = rows
        .iter()
        .map(|r| r.hyperbola_clearance)
        .fold(f64::INFINITY, f64::min);
    diagnostics.insert("min_circle_gap".into(), min_cg);
    diagnostics.insert("min_hyperbola_clearance".into(), min_hc);
    let tail: Vec<f64> = run
        .reports
        .iter()
        .rev()
        .take(10)
        .map(|r| r.lambda_max)
        .collect();
    let lam_stop = run.reports.last().map_or(f64::NAN, |r| r.lambda_max);
    diagnostics.insert("lambda_max_at_stop".into(), lam_stop);

    let mut checks = BTreeMap::new();
    checks.insert(
        "gradient_blowup".into(),
        matches!(run.cause, StopCause::GradientBlowup { .. }),
    );
    checks.insert("before_circle_extinction".into(), t_star < life);
    checks.insert(
        "interior_singular_point".into(),
        x_star.is_some_and(|x| x > 1.0 + 2.0 * dx && x < data.kd.a - 2.0 * dx),
    );
    checks.insert("circle_avoided".into(), min_cg > 0.0);
    checks.insert("hyperbola_avoided".into(), min_hc > 0.0);
    checks.insert(
        "lambda_max_escapes".into(),
        lam_stop > cfg.fp_threshold && tail.windows(2).all(|w| w[0] >= w[1]),
    );
    checks.insert("circle_certificate".into(), circle_cert.pass);
    checks.insert(
        "hyperbola_certificate".into(),
        hyperbola_certs.iter().any(|c| c.pass),
    );
    certificates.push(circle_cert);
    certificates.extend(hyperbola_certs);

    let mut report = ScenarioReport {
        schema_version: SCHEMA_VERSION,
        kind: ScenarioKind::FiniteSingularity,
        pass: false,
        stop_cause: run.cause.clone(),
        t_stop: t_star,
        x_star,
        steps: run.steps,
        grid: xs.len(),
        class: data.kd,
        checks,
        certificates,
        audit: None,
        diagnostics,
        notes,
        manifest: Vec::new(),
    };
    report.finish();
    if let Some(dir) = &cfg.out {
        report.manifest = write_run_files(dir, &xs, &run, &report.certificates)?;
        write_rows(&dir.join("barriers.csv"), &rows)?;
        report.manifest.push("barriers.csv".into());
        write_report(dir, &mut report)?;
    }
    Ok(report)
}

fn write_run_files(
    dir: &Path,
    xs: &[f64],
    run: &RunOutput,
    certs: &[CertReport],
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    write_snapshots(&dir.join("snapshots.csv"), xs, &run.snapshots)?;
    manifest.push("snapshots.csv".into());
    write_monitor(&dir.join("monitor.csv"), &run.reports)?;
    manifest.push("monitor.csv".into());
    for c in certs {
        let name = format!("cert_{}.json", c.kind);
        write_json(&dir.join(&name), c)?;
        manifest.push(name);
    }
    Ok(manifest)
}

fn write_report(dir: &Path, report: &mut ScenarioReport) -> Result<()> {
    let name = report.file_name();
    report.manifest.push(name.into());
    write_json(&dir.join(name), report)
}

// ---------------------------------------------------------------------------
// Infinite-time singularity

/// Semi-stable data, interpolant and initial graph of the infinite-time construction.
#[derive(Debug, Clone)]
pub struct InfiniteData {
    pub data: SemiStableData,
    pub profile: PotentialProfile,
    pub interpolant: PolarInterpolant,
    pub b_min_report: CertReport,
    /// Largest failing candidate below `b_min` and its minimum residual.
    pub b_witness: Option<(f64, f64)>,
    pub state: GraphFlowState,
    pub phase_margin: f64,
    pub polar_clearance: f64,
    pub stationary_clearance: f64,
}

/// Builds the semi-stable data, certifies the smallest interpolation parameter
/// and takes as initial graph the curve `r = r∞ + λ(θ)(r_b − r∞)` with
/// `λ(θ) = A sin(π(θ − θ0)/(2(θ_max − θ0)))`, re-graphed over `[1, a]`.
pub fn build_infinite_data(cfg: &ScenarioConfig) -> Result<InfiniteData> {
    let n = cfg.n;
    if n < 3 {
        return Err(invalid("n", format!("need n >= 3, got {n}")));
    }
    let q = cfg.q.unwrap_or(10.0);
    let data = construct_semistable(n, q, cfg.a_gap)?;
    let profile = cfg.profile_for(&data.kd, 1.0)?;
    let search = find_b_min(&data, &profile, &cfg.b_candidates, cfg.cert_grid)?;
    let pi = build_polar_interpolant(&data, &profile, search.b_min)?;
    let (t0, t1) = (data.theta0, data.theta_max);
    let amp = cfg.lambda_amplitude;
    let b0 = search.b_min;
    let radius = |t: f64| {
        let ri = data.r_inf.r(t);
        let lam = amp * (std::f64::consts::FRAC_PI_2 * (t - t0) / (t1 - t0)).sin();
        ri + lam * (pi.r(t, b0) - ri)
    };
    let xr = |t: f64| radius(t) * t.cos();
    // the re-graphing needs x strictly increasing in θ
    let m = 20_000;
    let mut prev = xr(t0);
    for j in 1..=m {
        let x = xr(t0 + (t1 - t0) * j as f64 / m as f64);
        if !(x > prev) {
            return Err(Error::Infeasible(
                "initial curve is not a graph over [1, a]".into(),
            ));
        }
        prev = x;
    }
    let kd = data.kd;
    let f0 = |x: f64| -> f64 {
        if x <= 1.0 {
            return kd.q;
        }
        if x >= kd.a {
            return kd.p;
        }
        let (mut lo, mut hi) = (t0, t1);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if xr(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 {
                break;
            }
        }
        let t = 0.5 * (lo + hi);
        radius(t) * t.sin()
    };
    let grid = cfg.grid.unwrap_or(1024);
    let problem = GraphProblem::new(kd, profile.clone(), grid)?;
    let state = GraphFlowState::from_fn(problem, f0)?;
    let th_min = state.theta().into_iter().fold(f64::INFINITY, f64::min);
    let phase_margin = th_min - kd.supercritical_floor();
    if !(phase_margin > 0.05) {
        return Err(Error::Regime(format!(
            "initial phase minimum {th_min} is within 0.05 of (n-2)pi/2"
        )));
    }
    let xs = state.xs();
    let pc = polar_clearance(&pi, b0, xs, &state.f);
    let sc = stationary_clearance(&data, xs, &state.f);
    if !(pc > 0.0 && sc > 0.0) {
        return Err(Error::Infeasible(format!(
            "initial graph not strictly between the barriers (polar {pc}, stationary {sc})"
        )));
    }
    Ok(InfiniteData {
        data,
        profile,
        interpolant: pi,
        b_min_report: search.report,
        b_witness: search.witness,
        state,
        phase_margin,
        polar_clearance: pc,
        stationary_clearance: sc,
    })
}

/// Sandwich clearances and distance to the stationary curve at one monitor time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub t: f64,
    pub b: f64,
    pub polar_clearance: f64,
    pub stationary_clearance: f64,
    pub distance: f64,
    pub fp_left: f64,
    pub sup_fp_away: f64,
}

/// `sup_{x ≥ 1+δ} |f − f∞|` and `sup_{x ≥ 1+δ} |f′|` with `δ = 0.1(a − 1)`.
/// Smallest `f∞_i − f_i` over interior nodes, with `f∞` sampled once up front.
fn clearance_below(f_inf: &[f64], f: &[f64]) -> f64 {
    let n = f.len();
    (1..n - 1)
        .map(|i| f_inf[i] - f[i])
        .fold(f64::INFINITY, f64::min)
}

fn away_from_wall(state: &GraphFlowState, f_inf: &[f64]) -> (f64, f64) {
    let a = state.kd().a;
    let x_lo = 1.0 + 0.1 * (a - 1.0);
    let fp = state.slopes();
    let mut dist = 0.0f64;
    let mut sup = 0.0f64;
    for (i, &x) in state.xs().iter().enumerate() {
        if x >= x_lo {
            dist = dist.max((state.f[i] - f_inf[i]).abs());
            sup = sup.max(fp[i].abs());
        }
    }
    (dist, sup)
}

/// Runs the infinite-time scenario to `t_end` and checks the finite-horizon
/// signatures of a singularity at infinity.
pub fn run_infinite_time(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let d3 = build_infinite_data(cfg)?;
    let t_end = cfg.t_end.unwrap_or(3000.0);
    let kd = d3.data.kd;
    let xs0 = d3.state.xs().to_vec();
    let f_inf: Vec<f64> = xs0
        .iter()
        .map(|&x| {
            if x <= 1.0 {
                kd.q
            } else {
                d3.data.f_inf(x).unwrap_or(kd.p)
            }
        })
        .collect();
    let tol = 10.0 * d3.state.dx().powi(2);
    let pi = &d3.interpolant;
    let stop = StopRule {
        t_end,
        fp_threshold: None,
        monitor_every: cfg.monitor_every,
        snapshot_every: Some(t_end / cfg.snapshots as f64),
        max_steps: usize::MAX,
    };
    let mut rows: Vec<SandwichRow> = Vec::new();
    let mut b_state = (0.0, pi.b0);
    let run = run_until_with(d3.state.clone(), &stop, |s, rep: &MonitorReport| {
        let b = match pi.advance_b(b_state.1, s.t - b_state.0) {
            Ok(b) => b,
            Err(e) => return ControlFlow::Break(e.to_string()),
        };
        b_state = (s.t, b);
        let pc = polar_clearance(pi, b, s.xs(), &s.f);
        let sc = clearance_below(&f_inf, &s.f);
        let (dist, sup) = away_from_wall(s, &f_inf);
        rows.push(SandwichRow {
            t: s.t,
            b,
            polar_clearance: pc,
            stationary_clearance: sc,
            distance: dist,
            fp_left: rep.fp_left,
            sup_fp_away: sup,
        });
        if pc < -tol || sc < -tol {
            return ControlFlow::Break(format!("sandwich violated at t = {}", s.t));
        }
        ControlFlow::Continue(())
    });

    let audit = monitor_section4(&kd, &run.reports, cfg.delta_theta, cfg.gradient_tol)?;
    let snap_dist: Vec<f64> = run
        .snapshots
        .iter()
        .map(|s| {
            let x_lo = 1.0 + 0.1 * (kd.a - 1.0);
            xs0.iter()
                .zip(&s.f)
                .zip(&f_inf)
                .filter(|((x, _), _)| **x >= x_lo)
                .map(|((_, f), fi)| (f - fi).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let last: Vec<f64> = snap_dist.iter().rev().take(10).rev().cloned().collect();
    let monotone = last.len() == 10.min(snap_dist.len()) && last.windows(2).all(|w| w[1] < w[0]);
    let fp1_end = run.reports.last().map_or(f64::NAN, |r| r.fp_left);
    let fp1_start = run.reports.first().map_or(f64::NAN, |r| r.fp_left);
    let min_pc = rows
        .iter()
        .map(|r| r.polar_clearance)
        .fold(f64::INFINITY, f64::min);
    let min_sc = rows
        .iter()
        .map(|r| r.stationary_clearance)
        .fold(f64::INFINITY, f64::min);
    let sup_away = rows.iter().map(|r| r.sup_fp_away).fold(0.0, f64::max);
    let polar_cert = verify_polar_subsolution(pi, cfg.cert_grid);

    let mut checks = BTreeMap::new();
    checks.insert(
        "reached_t_end".into(),
        matches!(run.cause, StopCause::TimeReached),
    );
    checks.insert("audit".into(), audit.pass);
    checks.insert("fp1_exceeds_threshold".into(), fp1_end > cfg.fp1_threshold);
    checks.insert("fp1_increasing".into(), fp1_end > fp1_start);
    checks.insert("distance_decreasing".into(), monotone);
    checks.insert(
        "distance_reduced".into(),
        snap_dist.last().copied().unwrap_or(f64::NAN) <= cfg.distance_ratio * snap_dist[0],
    );
    checks.insert(
        "no_blowup_away_from_wall".into(),
        sup_away < cfg.fp_threshold,
    );
    checks.insert("above_interpolant".into(), min_pc >= -tol);
    checks.insert("below_stationary".into(), min_sc >= -tol);
    checks.insert(
        "polar_certificate".into(),
        polar_cert.pass && d3.b_min_report.pass,
    );

    let mut diagnostics = BTreeMap::new();
    let s = d3.data.summary();
    diagnostics.insert("a".into(), s.a);
    diagnostics.insert("p".into(), s.p);
    diagnostics.insert("theta_hat".into(), s.theta_hat);
    diagnostics.insert("level".into(), s.level);
    diagnostics.insert("largest_a_gap".into(), s.largest_a_gap);
    diagnostics.insert("b_min".into(), pi.b0);
    diagnostics.insert("phase_margin".into(), d3.phase_margin);
    diagnostics.insert("initial_fp1".into(), fp1_start);
    diagnostics.insert("final_fp1".into(), fp1_end);
    diagnostics.insert("initial_distance".into(), snap_dist[0]);
    diagnostics.insert("final_distance".into(), *snap_dist.last().unwrap());
    diagnostics.insert("min_polar_clearance".into(), min_pc);
    diagnostics.insert("min_stationary_clearance".into(), min_sc);
    diagnostics.insert("sandwich_tolerance".into(), tol);
    diagnostics.insert("sup_fp_away_from_wall".into(), sup_away);
    let mut notes = Vec::new();
    match d3.b_witness {
        Some((b, v)) => notes.push(format!(
            "candidate b = {b} fails the polar certificate (min {v:e})"
        )),
        None => notes.push(
            "every candidate at or below b_min passes; no failing witness below b_min".into(),
        ),
    }

    let mut report = ScenarioReport {
        schema_version: SCHEMA_VERSION,
        kind: ScenarioKind::InfiniteSingularity,
        pass: false,
        stop_cause: run.cause.clone(),
        t_stop: run.state.t,
        x_star: None,
        steps: run.steps,
        grid: xs0.len(),
        class: kd,
        checks,
        certificates: vec![d3.b_min_report.clone(), polar_cert],
        audit: Some(audit),
        diagnostics,
        notes,
        manifest: Vec::new(),
    };
    report.finish();
    if let Some(dir) = &cfg.out {
        let mut certs = report.certificates.clone();
        certs[0].kind = "polar_b_min".into();
        report.manifest = write_run_files(dir, &xs0, &run, &certs)?;
        write_rows(&dir.join("sandwich.csv"), &rows)?;
        report.manifest.push("sandwich.csv".into());
        write_traced(
            &dir.join("stationary.csv"),
            &[
                ("upper", &d3.data.upper.points),
                ("lower", &d3.data.lower.points),
            ],
        )?;
        report.manifest.push("stationary.csv".into());
        write_report(dir, &mut report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Custom runs

/// Reads a two-column CSV `(x, f)` and interpolates it onto the run grid.
pub fn load_initial_graph(path: &Path) -> Result<MonotoneCubic> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let parsed = (
            rec.get(0).map(str::parse::<f64>),
            rec.get(1).map(str::parse::<f64>),
        );
        match parsed {
            (Some(Ok(x)), Some(Ok(y))) => {
                xs.push(x);
                ys.push(y);
            }
            _ if xs.is_empty() => continue,
            _ => {
                return Err(Error::Config(format!(
                    "{}: unparsable row {:?}",
                    path.display(),
                    rec
                )))
            }
        }
    }
    MonotoneCubic::new(xs, ys)
}

/// Evolves a user-supplied graph; passes unless the run ends in a non-finite state
/// or is halted.
pub fn run_custom(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let (Some(a), Some(p), Some(q)) = (cfg.a, cfg.p, cfg.q) else {
        return Err(Error::Config("custom runs need a, p and q".into()));
    };
    let path = cfg
        .f0_csv
        .as_ref()
        .ok_or_else(|| Error::Config("custom runs need f0_csv".into()))?;
    let kd = KahlerData::new(cfg.n, a, p, q)?;
    let profile = cfg.profile_for(&kd, 1.0)?;
    let f0 = load_initial_graph(path)?;
    let (lo, hi) = f0.domain();
    if lo > 1.0 + 1e-12 || hi < a - 1e-12 {
        return Err(Error::Config(format!(
            "f0 covers [{lo}, {hi}], need [1, {a}]"
        )));
    }
    let problem = GraphProblem::new(kd, profile, cfg.grid.unwrap_or(1024))?;
    let state = GraphFlowState::from_fn(problem, |x| f0.eval(x))?;
    let t_end = cfg.t_end.unwrap_or(1.0);
    let stop = StopRule {
        t_end,
        fp_threshold: Some(cfg.fp_threshold),
        monitor_every: cfg.monitor_every,
        snapshot_every: Some(t_end / cfg.snapshots as f64),
        max_steps: usize::MAX,
    };
    let run = run_until_with(state, &stop, |_, _| ControlFlow::Continue(()));
    let xs = run.state.xs().to_vec();
    let mut checks = BTreeMap::new();
    checks.insert(
        "finite".into(),
        !matches!(
            run.cause,
            StopCause::NonFinite { .. } | StopCause::Halted { .. }
        ),
    );
    let x_star = match &run.cause {
        StopCause::GradientBlowup { x_star, .. } => Some(*x_star),
        _ => None,
    };
    let mut report = ScenarioReport {
        schema_version: SCHEMA_VERSION,
        kind: ScenarioKind::Custom,
        pass: false,
        stop_cause: run.cause.clone(),
        t_stop: run.state.t,
        x_star,
        steps: run.steps,
        grid: xs.len(),
        class: kd,
        checks,
        certificates: Vec::new(),
        audit: None,
        diagnostics: BTreeMap::new(),
        notes: Vec::new(),
        manifest: Vec::new(),
    };
    report.finish();
    if let Some(dir) = &cfg.out {
        report.manifest = write_run_files(dir, &xs, &run, &[])?;
        write_report(dir, &mut report)?;
    }
    Ok(report)
}

/// Dispatches on `cfg.kind`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    match cfg.kind {
        ScenarioKind::FiniteSingularity => run_finite_time(cfg),
        ScenarioKind::InfiniteSingularity => run_infinite_time(cfg),
        ScenarioKind::Custom => run_custom(cfg),
    }
}
