//! Explicit solver for the reduced graph flow `ḟ = u″(x)·Θ′(x)` on a uniform grid.

use std::ops::ControlFlow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{phase, KahlerData};
use crate::profile::PotentialProfile;

/// `f″/(1 + f′²) + m·(s f′ − v)/(s² + v²)`: the bracket of the reduced operator,
/// written for a graph `v(s)`.
#[inline]
pub fn reduced_bracket(s: f64, v: f64, vp: f64, vpp: f64, m: f64) -> f64 {
    vpp / (1.0 + vp * vp) + m * (s * vp - v) / (s * s + v * v)
}

/// Step-size constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub c_cfl: f64,
    pub c_adv: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            c_cfl: 0.2,
            c_adv: 0.5,
        }
    }
}

/// Uniform grid over `[lo, hi]` with `n` nodes, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub xs: Vec<f64>,
    pub dx: f64,
}

impl Grid {
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(invalid("N", "need at least three nodes"));
        }
        if !(hi > lo) {
            return Err(invalid("grid", "empty interval"));
        }
        let dx = (hi - lo) / (n - 1) as f64;
        let mut xs: Vec<f64> = (0..n).map(|i| lo + i as f64 * dx).collect();
        xs[n - 1] = hi;
        Ok(Self { xs, dx })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// Centered slopes in the interior and one-sided second-order slopes at the ends.
pub fn nodal_slopes(v: &[f64], dx: f64) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * dx);
    }
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dx);
    d
}

/// Shared, immutable data of a graph-flow run.
#[derive(Debug, Clone)]
pub struct GraphProblem {
    pub kd: KahlerData,
    pub profile: PotentialProfile,
    pub grid: Grid,
    /// `u″` at the grid nodes.
    pub upp: Vec<f64>,
    pub step: StepConfig,
}

impl GraphProblem {
    pub fn new(kd: KahlerData, profile: PotentialProfile, n: usize) -> Result<Arc<Self>> {
        if (profile.a - kd.a).abs() > 1e-12 {
            return Err(invalid("profile", "profile endpoint differs from a"));
        }
        let grid = Grid::uniform(1.0, kd.a, n)?;
        let upp = grid.xs.iter().map(|&x| profile.eval(x)).collect();
        Ok(Arc::new(Self {
            kd,
            profile,
            grid,
            upp,
            step: StepConfig::default(),
        }))
    }

    pub fn with_step_config(self: Arc<Self>, step: StepConfig) -> Arc<Self> {
        let mut p = (*self).clone();
        p.step = step;
        Arc::new(p)
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn max_upp(&self) -> f64 {
        self.upp.iter().cloned().fold(0.0, f64::max)
    }
}

/// Scratch buffers for the RK4 stages.
#[derive(Debug, Clone, Default)]
pub(crate) struct Rk4Work {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Work {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    /// Classical RK4 step of `v̇ = rhs(v)`; `pin` restores the boundary values after each stage.
    pub(crate) fn step<R, P>(&mut self, v: &mut [f64], dt: f64, rhs: R, pin: P)
    where
        R: Fn(&[f64], &mut [f64]),
        P: Fn(&mut [f64]),
    {
        let n = v.len();
        if self.tmp.len() != n {
            *self = Self::new(n);
        }
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        rhs(v, k1);
        for i in 0..n {
            tmp[i] = v[i] + 0.5 * dt * k1[i];
        }
        pin(tmp);
        rhs(tmp, k2);
        for i in 0..n {
            tmp[i] = v[i] + 0.5 * dt * k2[i];
        }
        pin(tmp);
        rhs(tmp, k3);
        for i in 0..n {
            tmp[i] = v[i] + dt * k3[i];
        }
        pin(tmp);
        rhs(tmp, k4);
        for i in 0..n {
            v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        pin(v);
    }
}

/// Nodal state of the graph flow.
#[derive(Debug, Clone)]
pub struct GraphFlowState {
    pub problem: Arc<GraphProblem>,
    pub f: Vec<f64>,
    pub t: f64,
    work: Rk4Work,
}

/// Interior values of the reduced operator for nodal values `f`; ends are set to zero.
fn graph_rhs(p: &GraphProblem, f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let dx = p.grid.dx;
    let inv2 = 0.5 / dx;
    let invsq = 1.0 / (dx * dx);
    let m = p.kd.m();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for i in 1..n - 1 {
        let fp = (f[i + 1] - f[i - 1]) * inv2;
        let fpp = (f[i + 1] - 2.0 * f[i] + f[i - 1]) * invsq;
        out[i] = p.upp[i] * reduced_bracket(p.grid.xs[i], f[i], fp, fpp, m);
    }
}

/// Time step bound for the reduced operator on a uniform grid with weights `w`.
pub(crate) fn stable_dt_for(
    s: &[f64],
    v: &[f64],
    w: &[f64],
    dx: f64,
    m: f64,
    cfg: &StepConfig,
) -> f64 {
    let n = v.len();
    let mut min_fp2 = f64::INFINITY;
    let mut max_w = 0.0f64;
    let mut max_adv = 0.0f64;
    for i in 1..n - 1 {
        let fp = (v[i + 1] - v[i - 1]) / (2.0 * dx);
        let fpp = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dx * dx);
        let g = 1.0 + fp * fp;
        min_fp2 = min_fp2.min(fp * fp);
        max_w = max_w.max(w[i]);
        let adv =
            w[i] * (m * s[i] / (s[i] * s[i] + v[i] * v[i]) + 2.0 * (fp * fpp).abs() / (g * g));
        max_adv = max_adv.max(adv);
    }
    let mut dt = f64::INFINITY;
    if max_w > 0.0 {
        dt = dt.min(cfg.c_cfl * dx * dx * (1.0 + min_fp2) / max_w);
    }
    if max_adv > 0.0 {
        dt = dt.min(cfg.c_adv * dx / max_adv);
    }
    dt
}

impl GraphFlowState {
    /// Samples `f0` on the grid; the endpoint values are overwritten with `q` and `p`.
    pub fn from_fn(problem: Arc<GraphProblem>, f0: impl Fn(f64) -> f64) -> Result<Self> {
        let f = problem.grid.xs.iter().map(|&x| f0(x)).collect();
        Self::from_values(problem, f)
    }

    pub fn from_values(problem: Arc<GraphProblem>, mut f: Vec<f64>) -> Result<Self> {
        let n = problem.n();
        if f.len() != n {
            return Err(invalid(
                "f",
                format!("expected {n} values, got {}", f.len()),
            ));
        }
        f[0] = problem.kd.q;
        f[n - 1] = problem.kd.p;
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: 0.0,
                x: problem.grid.xs[i],
            });
        }
        Ok(Self {
            work: Rk4Work::new(n),
            problem,
            f,
            t: 0.0,
        })
    }

    pub fn xs(&self) -> &[f64] {
        &self.problem.grid.xs
    }

    pub fn kd(&self) -> &KahlerData {
        &self.problem.kd
    }

    pub fn profile(&self) -> &PotentialProfile {
        &self.problem.profile
    }

    pub fn dx(&self) -> f64 {
        self.problem.grid.dx
    }

    pub fn slopes(&self) -> Vec<f64> {
        nodal_slopes(&self.f, self.dx())
    }

    pub fn theta(&self) -> Vec<f64> {
        let n = self.problem.kd.n;
        self.xs()
            .iter()
            .zip(&self.f)
            .zip(self.slopes())
            .map(|((&x, &f), fp)| phase(x, f, fp, n))
            .collect()
    }

    /// `u″·(f″/(1+f′²) + (n−1)(xf′−f)/(x²+f²))` with centered differences.
    pub fn evaluate_rhs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.f.len()];
        graph_rhs(&self.problem, &self.f, &mut out);
        out
    }

    /// `u″·Θ′` with `Θ′` from centered differences of the nodal phase.
    pub fn rhs_via_theta(&self) -> Vec<f64> {
        let th = self.theta();
        let n = th.len();
        let dx = self.dx();
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = self.problem.upp[i] * (th[i + 1] - th[i - 1]) / (2.0 * dx);
        }
        out
    }

    pub fn stable_dt(&self) -> f64 {
        let p = &self.problem;
        stable_dt_for(&p.grid.xs, &self.f, &p.upp, p.grid.dx, p.kd.m(), &p.step)
    }

    /// One RK4 step with `dt = min(dt_max, stability bound)`; returns the step taken.
    pub fn step(&mut self, dt_max: f64) -> Result<f64> {
        if !(dt_max > 0.0) {
            return Err(invalid("dt_max", "must be positive"));
        }
        let dt = dt_max.min(self.stable_dt());
        let p = Arc::clone(&self.problem);
        let (q, pv) = (p.kd.q, p.kd.p);
        self.work.step(
            &mut self.f,
            dt,
            |v, out| graph_rhs(&p, v, out),
            |v| {
                let n = v.len();
                v[0] = q;
                v[n - 1] = pv;
            },
        );
        self.t += dt;
        if let Some(i) = self.f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: self.t,
                x: p.grid.xs[i],
            });
        }
        Ok(dt)
    }

    /// Steps until `t` reaches `t_target` exactly.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        while self.t < t_target {
            let rest = t_target - self.t;
            self.step(rest)?;
            if t_target - self.t <= 1e-14 * t_target.abs().max(1.0) {
                self.t = t_target;
            }
        }
        Ok(())
    }

    pub fn monitor(&self) -> MonitorReport {
        MonitorReport::of(self)
    }
}

/// Diagnostics of a graph state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub t: f64,
    pub sup_fp: f64,
    pub fp_left: f64,
    pub fp_right: f64,
    pub lambda_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub min_f: f64,
    pub min_fp: f64,
    pub argmax_fp_location: f64,
}

impl MonitorReport {
    pub fn of(s: &GraphFlowState) -> Self {
        let fp = s.slopes();
        let xs = s.xs();
        let n = s.kd().n;
        let mut r = MonitorReport {
            t: s.t,
            sup_fp: 0.0,
            fp_left: fp[0],
            fp_right: fp[fp.len() - 1],
            lambda_max: f64::NEG_INFINITY,
            theta_min: f64::INFINITY,
            theta_max: f64::NEG_INFINITY,
            min_f: f64::INFINITY,
            min_fp: f64::INFINITY,
            argmax_fp_location: xs[0],
        };
        for i in 0..xs.len() {
            let (x, f, d) = (xs[i], s.f[i], fp[i]);
            if d.abs() > r.sup_fp {
                r.sup_fp = d.abs();
                r.argmax_fp_location = x;
            }
            r.lambda_max = r.lambda_max.max(if n > 1 { (f / x).max(d) } else { d });
            let th = phase(x, f, d, n);
            r.theta_min = r.theta_min.min(th);
            r.theta_max = r.theta_max.max(th);
            r.min_f = r.min_f.min(f);
            r.min_fp = r.min_fp.min(d);
        }
        r
    }

    pub fn boundary_fp(&self) -> (f64, f64) {
        (self.fp_left, self.fp_right)
    }
}

/// When a run stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub t_end: f64,
    /// Stop when `sup|f′|` exceeds this value.
    pub fp_threshold: Option<f64>,
    /// Record a monitor report every this many steps (and at every snapshot and at the stop).
    pub monitor_every: usize,
    /// Record full profiles at multiples of this interval (times are hit exactly).
    pub snapshot_every: Option<f64>,
    pub max_steps: usize,
}

impl StopRule {
    pub fn until(t_end: f64) -> Self {
        Self {
            t_end,
            fp_threshold: Some(1e3),
            monitor_every: 100,
            snapshot_every: None,
            max_steps: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopCause {
    TimeReached,
    GradientBlowup { x_star: f64, sup_fp: f64 },
    NonFinite { x: f64 },
    StepLimit,
    Halted { reason: String },
}

impl StopCause {
    pub fn name(&self) -> &'static str {
        match self {
            StopCause::TimeReached => "time_reached",
            StopCause::GradientBlowup { .. } => "gradient_blowup",
            StopCause::NonFinite { .. } => "nonfinite",
            StopCause::StepLimit => "step_limit",
            StopCause::Halted { .. } => "halted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub f: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: GraphFlowState,
    pub reports: Vec<MonitorReport>,
    pub snapshots: Vec<Snapshot>,
    pub cause: StopCause,
    pub steps: usize,
}

/// Runs until a stop condition fires.
pub fn run_until(state: GraphFlowState, stop: &StopRule) -> RunOutput {
    run_until_with(state, stop, |_, _| ControlFlow::Continue(()))
}

/// As [`run_until`], calling `observer` with every monitor report; a `Break`
/// halts the run with [`StopCause::Halted`].
pub fn run_until_with<O>(mut state: GraphFlowState, stop: &StopRule, mut observer: O) -> RunOutput
where
    O: FnMut(&GraphFlowState, &MonitorReport) -> ControlFlow<String>,
{
    let mut reports = Vec::new();
    let mut snapshots = Vec::new();
    let every = stop.monitor_every.max(1);
    let mut next_snap = stop.snapshot_every.map(|h| (state.t, h));
    let mut steps = 0usize;

    let mut record =
        |state: &GraphFlowState, reports: &mut Vec<MonitorReport>| -> Option<StopCause> {
            let rep = state.monitor();
            let brk = observer(state, &rep);
            let blow =
                stop.fp_threshold
                    .filter(|&g| rep.sup_fp > g)
                    .map(|_| StopCause::GradientBlowup {
                        x_star: rep.argmax_fp_location,
                        sup_fp: rep.sup_fp,
                    });
            reports.push(rep);
            if let ControlFlow::Break(reason) = brk {
                return Some(StopCause::Halted { reason });
            }
            blow
        };

    if let Some((t0, _)) = next_snap {
        snapshots.push(Snapshot {
            t: t0,
            f: state.f.clone(),
        });
    }
    if let Some(c) = record(&state, &mut reports) {
        return RunOutput {
            state,
            reports,
            snapshots,
            cause: c,
            steps,
        };
    }
    let cause = loop {
        if state.t >= stop.t_end {
            break StopCause::TimeReached;
        }
        if steps >= stop.max_steps {
            break StopCause::StepLimit;
        }
        let mut target = stop.t_end;
        if let Some((ts, h)) = next_snap {
            target = target.min(ts + h);
        }
        match state.step(target - state.t) {
            Ok(_) => {}
            Err(Error::NonFinite { x, .. }) => break StopCause::NonFinite { x },
            Err(e) => {
                break StopCause::Halted {
                    reason: e.to_string(),
                }
            }
        }
        steps += 1;
        let eps = 1e-12 * target.abs().max(1.0);
        if target - state.t <= eps {
            state.t = target;
        }
        let mut at_snapshot = false;
        if let Some((ts, h)) = next_snap {
            if state.t >= ts + h - eps {
                snapshots.push(Snapshot {
                    t: state.t,
                    f: state.f.clone(),
                });
                next_snap = Some((ts + h, h));
                at_snapshot = true;
            }
        }
        if at_snapshot || steps.is_multiple_of(every) || state.t >= stop.t_end {
            if let Some(c) = record(&state, &mut reports) {
                break c;
            }
        }
    };
    if reports.last().is_none_or(|r| r.t != state.t) {
        let rep = state.monitor();
        reports.push(rep);
    }
    RunOutput {
        state,
        reports,
        snapshots,
        cause,
        steps,
    }
}

/// Result of evolving two ordered initial data side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub ordered: bool,
    /// Smallest value of `f_high − f_low` over all checks.
    pub min_gap: f64,
    pub tolerance: f64,
    pub t_checked: f64,
}

/// Evolves `low` and `high` to common check times and reports whether
/// `high ≥ low − 10Δx²` held at every check.
pub fn comparison_test(
    mut low: GraphFlowState,
    mut high: GraphFlowState,
    t_end: f64,
    checks: usize,
) -> Result<ComparisonOutcome> {
    if !Arc::ptr_eq(&low.problem, &high.problem) && low.f.len() != high.f.len() {
        return Err(invalid("high", "states live on different grids"));
    }
    let dx = low.dx();
    let tol = 10.0 * dx * dx;
    let gap = |l: &GraphFlowState, h: &GraphFlowState| {
        l.f.iter()
            .zip(&h.f)
            .map(|(a, b)| b - a)
            .fold(f64::INFINITY, f64::min)
    };
    let mut min_gap = gap(&low, &high);
    if min_gap < -tol {
        return Err(invalid("high", "initial data are not ordered"));
    }
    let t0 = low.t;
    let mut t_checked = t0;
    let checks = checks.max(1);
    for j in 1..=checks {
        let tj = t0 + (t_end - t0) * j as f64 / checks as f64;
        let a = low.advance_to(tj);
        let b = high.advance_to(tj);
        if a.is_err() || b.is_err() {
            break;
        }
        min_gap = min_gap.min(gap(&low, &high));
        t_checked = tj;
        if min_gap < -tol {
            break;
        }
    }
    Ok(ComparisonOutcome {
        ordered: min_gap >= -tol,
        min_gap,
        tolerance: tol,
        t_checked,
    })
}

/// Flags of the supercritical-regime audit over a sequence of monitor reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section4Audit {
    pub delta_theta: f64,
    pub phase_floor_nondecreasing: bool,
    pub worst_phase_drop: f64,
    pub positivity: bool,
    pub min_f: f64,
    pub gradient_floor: bool,
    /// `tan(θmin(0) − (n−1)π/2)`: the slope bound implied by the initial phase floor.
    pub gradient_floor_value: f64,
    pub initial_min_fp: f64,
    pub min_fp: f64,
    pub boundary_growth_rate: f64,
    pub boundary_growth_finite: bool,
    pub pass: bool,
}

/// Audits the monotonicity of the phase floor, positivity of `f`, the lower
/// gradient bound and the growth rate of the boundary slopes.
pub fn monitor_section4(
    kd: &KahlerData,
    reports: &[MonitorReport],
    delta_theta: f64,
    gradient_tol: f64,
) -> Result<Section4Audit> {
    let first = reports.first().ok_or_else(|| invalid("reports", "empty"))?;
    if kd.n < 3 {
        return Err(Error::Regime(format!("audit needs n >= 3, got {}", kd.n)));
    }
    if !(first.theta_min > kd.supercritical_floor()) {
        return Err(Error::Regime(format!(
            "initial phase floor {} is not above (n-2)pi/2 = {}",
            first.theta_min,
            kd.supercritical_floor()
        )));
    }
    // θmin(t_j) ≥ θmin(t_i) − δ(t_j − t_i) for all i < j
    let mut best = f64::NEG_INFINITY;
    let mut worst_drop = 0.0f64;
    for r in reports {
        let allowed = best - delta_theta * r.t;
        worst_drop = worst_drop.max(allowed - r.theta_min);
        best = best.max(r.theta_min + delta_theta * r.t);
    }
    let min_f = reports
        .iter()
        .map(|r| r.min_f)
        .fold(f64::INFINITY, f64::min);
    let min_fp = reports
        .iter()
        .map(|r| r.min_fp)
        .fold(f64::INFINITY, f64::min);
    let (ts, ls): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .map(|r| (r.t, (r.fp_left.abs() + r.fp_right.abs()).ln()))
        .unzip();
    let rate = least_squares_slope(&ts, &ls);
    let phase_ok = worst_drop <= 0.0;
    let pos_ok = min_f > 0.0;
    // Θ ≥ θmin(0) and arctan(f/x) < π/2 force arctan f′ > θmin(0) − (n−1)π/2
    let floor = (first.theta_min - kd.m() * std::f64::consts::FRAC_PI_2).tan();
    let grad_ok = min_fp >= floor - gradient_tol;
    let rate_ok = rate.is_finite();
    Ok(Section4Audit {
        delta_theta,
        phase_floor_nondecreasing: phase_ok,
        worst_phase_drop: worst_drop,
        positivity: pos_ok,
        min_f,
        gradient_floor: grad_ok,
        gradient_floor_value: floor,
        initial_min_fp: first.min_fp,
        min_fp,
        boundary_growth_rate: rate,
        boundary_growth_finite: rate_ok,
        pass: phase_ok && pos_ok && grad_ok && rate_ok,
    })
}

/// Slope of the least-squares line through `(x_i, y_i)`; NaN with fewer than two distinct `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(n_dim: u32, a: f64, q: f64, p: f64, kappa: f64, n: usize) -> Arc<GraphProblem> {
        let kd = KahlerData::new(n_dim, a, p, q).unwrap();
        let prof = PotentialProfile::quadratic(&kd, kappa).unwrap();
        GraphProblem::new(kd, prof, n).unwrap()
    }

    #[test]
    fn lines_through_origin_are_stationary() {
        let c = 1.7;
        let pb = problem(3, 2.0, c, 2.0 * c, 1.0, 257);
        let mut s = GraphFlowState::from_fn(pb, |x| c * x).unwrap();
        assert!(s.evaluate_rhs().iter().all(|v| v.abs() < 1e-11));
        let f0 = s.f.clone();
        for _ in 0..10 {
            s.step(1e-3).unwrap();
        }
        let drift =
            s.f.iter()
                .zip(&f0)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(drift < 1e-12, "drift {drift}");
    }

    #[test]
    fn boundary_values_are_pinned_bit_exact() {
        let pb = problem(3, 2.0, 1.0, 4.0, 1.0, 129);
        let mut s = GraphFlowState::from_fn(pb, |x| x * x).unwrap();
        for _ in 0..50 {
            s.step(1.0).unwrap();
            assert_eq!(s.f[0], 1.0);
            assert_eq!(*s.f.last().unwrap(), 4.0);
        }
    }

    #[test]
    fn rhs_converges_to_closed_form() {
        // f = x², a = 2, n = 3, κ = 1 at x = 1.5
        let exact = 0.25 * (2.0 / 10.0 + 2.0 * (4.5 - 2.25) / (2.25 + 5.0625));
        let mut errs = Vec::new();
        for k in 10..=14 {
            let n = (1usize << k) + 1;
            let pb = problem(3, 2.0, 1.0, 4.0, 1.0, n);
            let s = GraphFlowState::from_fn(pb, |x| x * x).unwrap();
            let mid = (n - 1) / 2;
            assert!((s.xs()[mid] - 1.5).abs() < 1e-14);
            errs.push((s.evaluate_rhs()[mid] - exact).abs());
        }
        // f = x² has exact centered differences, so the stencil is exact up to rounding
        assert!(errs.iter().all(|&e| e < 1e-10), "{errs:?}");
    }

    #[test]
    fn rhs_forms_agree_at_second_order() {
        let f0 = |x: f64| 1.0 + (3.0 * x).sin() + 0.3 * x * x;
        let mut errs = Vec::new();
        for k in [64usize, 128, 256, 512] {
            let pb = problem(3, 2.5, f0(1.0), f0(2.5), 1.0, k + 1);
            let s = GraphFlowState::from_fn(pb, f0).unwrap();
            let a = s.evaluate_rhs();
            let b = s.rhs_via_theta();
            errs.push(
                a.iter()
                    .zip(&b)
                    .map(|(u, v)| (u - v).abs())
                    .fold(0.0, f64::max),
            );
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }

    #[test]
    fn audit_rejects_subcritical_start() {
        let pb = problem(3, 2.0, -1.0, -2.0, 1.0, 65);
        let s = GraphFlowState::from_fn(pb, |x| -x).unwrap();
        let r = vec![s.monitor()];
        assert!(matches!(
            monitor_section4(s.kd(), &r, 1e-5, 1e-6),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn run_hits_snapshot_times() {
        let pb = problem(3, 2.0, 1.0, 4.0, 1.0, 65);
        let s = GraphFlowState::from_fn(pb, |x| x * x).unwrap();
        let mut rule = StopRule::until(0.05);
        rule.snapshot_every = Some(0.01);
        let out = run_until(s, &rule);
        assert_eq!(out.cause, StopCause::TimeReached);
        assert_eq!(out.snapshots.len(), 6);
        for (j, sn) in out.snapshots.iter().enumerate() {
            assert!((sn.t - 0.01 * j as f64).abs() < 1e-12);
        }
    }
}
