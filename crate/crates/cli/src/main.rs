//! Command-line front end: flows, barrier certificates, stationary traces and scenarios.
//!
//! Exit codes: 0 on pass, 2 when a scenario or certificate is falsified, 1 on
//! usage or configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use lbmcf_core::barriers::{
    build_polar_interpolant, capped_kappa, find_b_min, verify_circle_pde_inequality,
    verify_hyperbola_subsolution, verify_polar_subsolution, CertReport, CircleBarrier,
    HyperbolaBarrier, RateVariant, CERT_GRID,
};
use lbmcf_core::curve_flow::{CurveProblem, CurveState};
use lbmcf_core::geometry::{check_stability, class_integral, KahlerData, STABILITY_TOL};
use lbmcf_core::output::{write_curves, write_json, write_rows, write_traced};
use lbmcf_core::profile::PotentialProfile;
use lbmcf_core::scenarios::{load_initial_graph, run_scenario, ScenarioConfig, ScenarioKind};
use lbmcf_core::stationary::{construct_semistable, stationarity_residual};

#[derive(Parser, Debug)]
#[command(
    name = "lbmcf",
    version,
    about = "Line bundle mean curvature flow under Calabi symmetry"
)]
struct Cli {
    /// Flat TOML file with scenario keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of grid nodes.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Number of snapshots to record.
    #[arg(long, global = true)]
    snapshots: Option<usize>,
    /// Blowup threshold for sup|f'|.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct ClassArgs {
    #[arg(long, default_value_t = 3)]
    n: u32,
    #[arg(long)]
    a: f64,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    q: f64,
}

#[derive(Args, Debug, Clone)]
struct FlowArgs {
    #[command(flatten)]
    class: ClassArgs,
    /// Coefficient of the quadratic profile kappa(x-1)(a-x).
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Two-column CSV (x, u'') replacing the quadratic profile.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Two-column CSV (x, f) with the initial graph.
    #[arg(long)]
    f0: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    OuterSquared,
    InnerSquared,
}

impl From<Variant> for RateVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::OuterSquared => RateVariant::OuterSquared,
            Variant::InnerSquared => RateVariant::InnerSquared,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Barrier {
    /// Traveling hyperbolas with b_inf = R, b0 = 5R, a = 6R.
    Hyperbola {
        #[arg(long = "R", default_value_t = 2.0)]
        r: f64,
        #[arg(long, value_enum, default_value = "outer-squared")]
        variant: Variant,
        #[arg(long, default_value_t = 3)]
        n: u32,
        /// Profile coefficient as a fraction of the largest one keeping u'' below R.
        #[arg(long, default_value_t = 0.9)]
        kappa_fraction: f64,
    },
    /// Shrinking circles centered at (3R, y0).
    Circle {
        #[arg(long = "R", default_value_t = 2.0)]
        r: f64,
        #[arg(long, allow_hyphen_values = true)]
        y0: f64,
        #[arg(long, default_value_t = 3)]
        n: u32,
        #[arg(long, default_value_t = 0.9)]
        kappa_fraction: f64,
    },
    /// Polar interpolants toward the stationary curve of a semi-stable class.
    Polar {
        #[arg(long, default_value_t = 3)]
        n: u32,
        #[arg(long, default_value_t = 10.0)]
        q: f64,
        #[arg(long)]
        a_gap: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        /// Starting parameter; the smallest certified candidate when omitted.
        #[arg(long)]
        b0: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Finite,
    Infinite,
}

impl From<Kind> for ScenarioKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Finite => ScenarioKind::FiniteSingularity,
            Kind::Infinite => ScenarioKind::InfiniteSingularity,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    kind: Kind,
    #[arg(long = "R")]
    r: Option<f64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    a_gap: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve a graph read from CSV.
    RunFlow(FlowArgs),
    /// Evolve the parametric curve through a graph read from CSV.
    RunCurve(FlowArgs),
    /// Certify a barrier family on a grid.
    VerifyBarrier {
        #[command(subcommand)]
        which: Barrier,
        /// Grid size per axis.
        #[arg(long, default_value_t = CERT_GRID)]
        cert_grid: usize,
    },
    /// Integrate the hyperbola parameter law and check it against the closed form.
    SolveIvp {
        #[arg(long = "R", default_value_t = 2.0)]
        r: f64,
        #[arg(long, value_enum, default_value = "outer-squared")]
        variant: Variant,
        #[arg(long, default_value_t = 3)]
        n: u32,
        #[arg(long, default_value_t = 0.9)]
        kappa_fraction: f64,
        /// Number of output times up to the hitting time of b = 2R.
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Trace the stationary curve of the semi-stable class through (1, q).
    TraceStationary {
        #[arg(long, default_value_t = 3)]
        n: u32,
        #[arg(long, default_value_t = 10.0)]
        q: f64,
        #[arg(long)]
        a_gap: Option<f64>,
    },
    /// Classify a class by comparing central-charge arguments.
    CheckStability(ClassArgs),
    /// Run a headline scenario.
    Scenario(ScenarioArgs),
    /// Run one scenario per value of a config key, in parallel.
    Sweep {
        kind: Kind,
        /// Config key to vary.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(pass) => ExitCode::from(if pass { 0 } else { 2 }),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn emit_cert(out: Option<&Path>, rep: &CertReport) -> Result<bool> {
    if let Some(dir) = out {
        write_json(&dir.join(format!("cert_{}.json", rep.kind)), rep)?;
    }
    print_json(rep)?;
    Ok(rep.pass && rep.stable())
}

fn base_config(cli: &Cli, kind: ScenarioKind) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            ScenarioConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => ScenarioConfig::default(),
    };
    cfg.kind = kind;
    if cli.grid.is_some() {
        cfg.grid = cli.grid;
    }
    if let Some(k) = cli.snapshots {
        cfg.snapshots = k;
    }
    if let Some(g) = cli.threshold {
        cfg.fp_threshold = g;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let out = cli.out.as_deref();
    match &cli.cmd {
        Command::CheckStability(c) => {
            let kd = KahlerData::new(c.n, c.a, c.p, c.q)?;
            let rec = check_stability(&kd, STABILITY_TOL)?;
            if let Some(dir) = out {
                write_json(&dir.join("stability.json"), &rec)?;
            }
            print_json(&rec)?;
            Ok(true)
        }
        Command::SolveIvp {
            r,
            variant,
            n,
            kappa_fraction,
            points,
        } => {
            let k = capped_kappa(6.0 * r, *r, *kappa_fraction);
            let hb = HyperbolaBarrier::standard(*n, *r, k, (*variant).into())?;
            let t_hit = hb.hitting_time(2.0 * r);
            let m = (*points).max(2);
            let ts: Vec<f64> = (0..m).map(|i| t_hit * i as f64 / (m - 1) as f64).collect();
            let bs = hb.b_at_times(&ts)?;
            #[derive(serde::Serialize)]
            struct Row {
                t: f64,
                b: f64,
                residual: f64,
            }
            let rows: Vec<Row> = ts
                .iter()
                .zip(&bs)
                .map(|(&t, &b)| Row {
                    t,
                    b,
                    residual: hb.closed_form_residual(t, b),
                })
                .collect();
            let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            let t_rk = hb.rk_hitting_time(2.0 * r)?;
            match out {
                Some(dir) => {
                    write_rows(&dir.join("ivp.csv"), &rows)?;
                    print_json(&json!({
                        "C1": hb.c1, "C0": hb.c0, "T": t_hit, "T_rk": t_rk,
                        "max_residual": worst, "variant": hb.variant,
                    }))?;
                }
                None => {
                    println!("t,b,residual");
                    for r in &rows {
                        println!("{},{},{}", r.t, r.b, r.residual);
                    }
                }
            }
            Ok(worst < 1e-8 && ((t_rk - t_hit) / t_hit).abs() < 1e-6)
        }
        Command::VerifyBarrier { which, cert_grid } => match which {
            Barrier::Hyperbola {
                r,
                variant,
                n,
                kappa_fraction,
            } => {
                let a = 6.0 * r;
                let prof = PotentialProfile::quadratic_on(a, capped_kappa(a, *r, *kappa_fraction))?;
                let hb = HyperbolaBarrier::standard(*n, *r, prof.k, (*variant).into())?;
                let rep =
                    verify_hyperbola_subsolution(&hb, &prof, hb.hitting_time(2.0 * r), *cert_grid)?;
                emit_cert(out, &rep)
            }
            Barrier::Circle {
                r,
                y0,
                n,
                kappa_fraction,
            } => {
                let a = 6.0 * r;
                let prof = PotentialProfile::quadratic_on(a, capped_kappa(a, *r, *kappa_fraction))?
                    .with_r_cap(*r)?;
                let rep = verify_circle_pde_inequality(
                    &CircleBarrier::new(*r, *y0)?,
                    &prof,
                    *n,
                    *cert_grid,
                )?;
                emit_cert(out, &rep)
            }
            Barrier::Polar {
                n,
                q,
                a_gap,
                kappa,
                b0,
            } => {
                let data = construct_semistable(*n, *q, *a_gap)?;
                let prof = PotentialProfile::quadratic(&data.kd, *kappa)?;
                let rep = match b0 {
                    Some(b) => verify_polar_subsolution(
                        &build_polar_interpolant(&data, &prof, *b)?,
                        *cert_grid,
                    ),
                    None => {
                        let cands = ScenarioConfig::default().b_candidates;
                        find_b_min(&data, &prof, &cands, *cert_grid)?.report
                    }
                };
                emit_cert(out, &rep)
            }
        },
        Command::TraceStationary { n, q, a_gap } => {
            let d = construct_semistable(*n, *q, *a_gap)?;
            let exact = class_integral(&d.kd);
            let quad = d.upper.class_quadrature();
            let summary = json!({
                "data": d.summary(),
                "tangency_defect": d.tangency_defect(),
                "graph_residual": d.upper.graph_residual(800)?,
                "polar_residual_upper": stationarity_residual(&d.upper, 800)?,
                "polar_residual_lower": stationarity_residual(&d.lower, 800)?,
                "quadrature_relative_error": (quad - exact).norm() / exact.norm(),
                "level_drift": d.upper.max_level_drift().max(d.lower.max_level_drift()),
            });
            if let Some(dir) = out {
                write_traced(
                    &dir.join("stationary.csv"),
                    &[("upper", &d.upper.points), ("lower", &d.lower.points)],
                )?;
                write_json(&dir.join("stationary.json"), &summary)?;
            }
            print_json(&summary)?;
            Ok(true)
        }
        Command::RunFlow(f) => {
            let mut cfg = base_config(&cli, ScenarioKind::Custom)?;
            cfg.n = f.class.n;
            cfg.a = Some(f.class.a);
            cfg.p = Some(f.class.p);
            cfg.q = Some(f.class.q);
            cfg.kappa = Some(f.kappa);
            cfg.profile_csv = f.profile.clone();
            cfg.f0_csv = Some(f.f0.clone());
            cfg.t_end = Some(f.t_end);
            cfg.validate()?;
            let rep = run_scenario(&cfg)?;
            print_json(&rep)?;
            Ok(rep.pass)
        }
        Command::RunCurve(f) => run_curve(&cli, f),
        Command::Scenario(s) => {
            let mut cfg = base_config(&cli, s.kind.into())?;
            if let Some(r) = s.r {
                cfg.r = r;
            }
            if let Some(n) = s.n {
                cfg.n = n;
            }
            if s.q.is_some() {
                cfg.q = s.q;
            }
            if s.a_gap.is_some() {
                cfg.a_gap = s.a_gap;
            }
            if s.t_end.is_some() {
                cfg.t_end = s.t_end;
            }
            cfg.validate()?;
            let rep = run_scenario(&cfg)?;
            print_json(&rep)?;
            Ok(rep.pass)
        }
        Command::Sweep { kind, key, values } => {
            if values.is_empty() {
                bail!("--values needs at least one entry");
            }
            let base = base_config(&cli, (*kind).into())?;
            let cfgs: Vec<(String, ScenarioConfig)> = values
                .iter()
                .map(|v| {
                    let val: serde_json::Value = serde_json::from_str(v)
                        .unwrap_or_else(|_| serde_json::Value::String(v.clone()));
                    let mut c = base.with_override(key, val)?;
                    if let Some(dir) = &base.out {
                        c.out = Some(dir.join(format!("{key}={v}")));
                    }
                    Ok((v.clone(), c))
                })
                .collect::<Result<_>>()?;
            // runs are independent; each stays serial internally
            let results: Vec<(String, lbmcf_core::Result<lbmcf_core::ScenarioReport>)> = cfgs
                .into_par_iter()
                .map(|(v, c)| (v, run_scenario(&c)))
                .collect();
            println!("{key},pass,stop_cause,t_stop,x_star");
            let mut all = true;
            for (v, r) in results {
                match r {
                    Ok(rep) => {
                        all &= rep.pass;
                        let xs = rep.x_star.map(|x| x.to_string()).unwrap_or_default();
                        println!(
                            "{v},{},{},{},{xs}",
                            rep.pass,
                            rep.stop_cause.name(),
                            rep.t_stop
                        );
                    }
                    Err(e) => {
                        all = false;
                        println!("{v},false,error,,");
                        eprintln!("{key} = {v}: {e}");
                    }
                }
            }
            Ok(all)
        }
    }
}

fn run_curve(cli: &Cli, f: &FlowArgs) -> Result<bool> {
    let c = &f.class;
    let kd = KahlerData::new(c.n, c.a, c.p, c.q)?;
    let prof = match &f.profile {
        Some(p) => PotentialProfile::from_csv(c.a, p)?,
        None => PotentialProfile::quadratic(&kd, f.kappa)?,
    };
    let g = load_initial_graph(&f.f0)?;
    let n = cli.grid.unwrap_or(512);
    let spacing = (c.a - 1.0) / (n - 1) as f64;
    let problem = CurveProblem::new(kd, prof, spacing)?;
    let mut st = CurveState::from_graph(problem, n, |x| g.eval(x))?;
    let k = cli.snapshots.unwrap_or(10).max(1);
    let mut curves = vec![(0.0, st.pts.clone())];
    let mut event = None;
    for j in 1..=k {
        if let Err(e) = st.advance_to(f.t_end * j as f64 / k as f64) {
            event = Some(e.to_string());
            break;
        }
        curves.push((st.t, st.pts.clone()));
    }
    if let Some(dir) = &cli.out {
        write_curves(&dir.join("curves.csv"), &curves)?;
    }
    print_json(&json!({
        "t": st.t,
        "nodes": st.pts.len(),
        "area": st.enclosed_area(),
        "event": event,
    }))?;
    Ok(event.is_none())
}
