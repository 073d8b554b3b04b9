//! Subcommand pipelines. Every run writes `resolved_config.toml`,
//! `versions.json` and `report.json` into its output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use crate::calibration::{
    build_features, fit_models, ingest_csv, synthetic_windows, windowed_correlation,
    CorrelationOptions, ModelFits, SideSeries,
};
use crate::config::{RunConfig, SecondOrderMode};
use crate::error::{LobError, Result};
use crate::firstorder::{solve_first_order, FirstOrderOptions, FirstOrderSolution};
use crate::fluctuations::{
    fluctuation_ensemble, martingale_ensemble, pair_stats, spaced_checkpoints, FluctuationStats,
    ZeroMeanCheck,
};
use crate::grid::{StepDensity, TickGrid};
use crate::microsim::{simulate_ensemble, SimConfig, Simulator};
use crate::params::{validate_assumptions, SampleBox};
use crate::presets::Scenario;
use crate::rng;
use crate::secondorder::spectral::sample_sigma;
use crate::secondorder::{
    simplified_covariance, simulate_simplified_ou, simulate_spde, EnsembleOptions, Galerkin,
    SimplifiedModel, SpdeOptions,
};
use crate::stats;
use crate::study::{convergence_study, StudyOptions};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Simulate,
    FirstOrder,
    /// Reads simulated paths and a first-order solution from disk when both
    /// directories are given; otherwise simulates them.
    Fluctuations {
        paths: Option<PathBuf>,
        first_order: Option<PathBuf>,
    },
    SecondOrder,
    Calibrate,
    Correlate,
    ConvergenceStudy,
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::FirstOrder => "first-order",
            Command::Fluctuations { .. } => "fluctuations",
            Command::SecondOrder => "second-order",
            Command::Calibrate => "calibrate",
            Command::Correlate => "correlate",
            Command::ConvergenceStudy => "convergence-study",
            Command::Validate => "validate",
        }
    }
}

/// Result of a subcommand; `passed = false` maps to exit status 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub report: Value,
}

impl Outcome {
    fn ok(report: Value) -> Self {
        Self {
            passed: true,
            report,
        }
    }
}

struct Output<'a> {
    dir: &'a Path,
    csv: bool,
    json: bool,
}

impl Output<'_> {
    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(File::create(p)?))
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        std::io::Write::write_all(&mut f, b"\n")?;
        Ok(())
    }
}

/// Runs `cmd` with `cfg`, writing artifacts under `out`.
pub fn run(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    fs::write(out.join("resolved_config.toml"), cfg.to_toml()?)?;
    let o = Output {
        dir: out,
        csv: cfg.output.formats.iter().any(|f| f == "csv"),
        json: cfg.output.formats.iter().any(|f| f == "json"),
    };
    o.write_json(
        "versions.json",
        &json!({
            "lobflux": env!("CARGO_PKG_VERSION"),
            "report_schema": REPORT_SCHEMA_VERSION,
        }),
    )?;
    info!("running {} into {}", cmd.name(), out.display());
    let outcome = match cmd {
        Command::Simulate => simulate(cfg, &o),
        Command::FirstOrder => first_order(cfg, &o),
        Command::Fluctuations { paths, first_order } => match (paths, first_order) {
            (Some(p), Some(f)) => fluctuations_from_files(cfg, p, f, &o),
            (None, None) => fluctuations(cfg, &o),
            _ => Err(LobError::Config(
                "--paths and --first-order must be given together".into(),
            )),
        },
        Command::SecondOrder => second_order(cfg, &o),
        Command::Calibrate => calibrate(cfg, &o),
        Command::Correlate => correlate(cfg, &o),
        Command::ConvergenceStudy => study(cfg),
        Command::Validate => validate(cfg),
    }?;
    o.write_json(
        "report.json",
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "command": cmd.name(),
            "passed": outcome.passed,
            "report": outcome.report,
        }),
    )?;
    Ok(outcome)
}

fn solve(s: &Scenario, dt: f64, horizon: f64, store_stride: usize) -> Result<FirstOrderSolution> {
    let opts = FirstOrderOptions {
        dt,
        horizon,
        store_stride,
    };
    solve_first_order(&s.spec, s.b0, &s.u0, &opts, &s.test_fns)
}

fn simulate(cfg: &RunConfig, o: &Output) -> Result<Outcome> {
    let s = cfg.scenario()?;
    let sim = Simulator::new(&s.spec, s.grid)?;
    let mut sc = SimConfig::new(cfg.grid.delta, cfg.sim.horizon, cfg.seed()?);
    sc.record_stride = cfg.sim.record_stride;
    let summary = simulate_ensemble(&sim, &sc, s.b0, &s.u0, cfg.sim.n_paths, &s.test_fns)?;
    if o.json {
        o.write_json("ensemble_summary.json", &summary)?;
    }
    if o.csv {
        let mut pc = sc;
        if !cfg.sim.write_densities {
            pc.record_stride = 0;
        }
        for i in 0..cfg.sim.write_paths.min(cfg.sim.n_paths) {
            // same stream as path i of the ensemble
            let mut rng = rng::stream(sc.seed, i as u64);
            let path = sim.simulate_path_with(&pc, s.b0, &s.u0, &mut rng)?;
            path.write_prices_csv(o.file(&format!("path_{i}/prices.csv"))?)?;
            for snap in &path.snapshots {
                snap.density
                    .write_csv(o.file(&format!("path_{i}/density_{}.csv", snap.k))?)?;
            }
        }
    }
    let last = summary.points.last().expect("final checkpoint");
    Ok(Outcome::ok(json!({
        "scenario": s.name,
        "n_paths": summary.n_paths,
        "n_events": sc.n_events(),
        "final": { "t": last.t, "mean_b": last.mean_b, "var_b": last.var_b, "mean_y": last.mean_y, "var_y": last.var_y },
        "dropped_mass": summary.dropped_mass,
        "paths_written": if o.csv { cfg.sim.write_paths.min(cfg.sim.n_paths) } else { 0 },
    })))
}

fn first_order(cfg: &RunConfig, o: &Output) -> Result<Outcome> {
    let s = cfg.scenario()?;
    let dt = cfg.first_order_dt();
    let n_steps = FirstOrderOptions::new(dt, cfg.sim.horizon).n_steps();
    let stride = match cfg.first_order.snapshot_stride {
        0 => n_steps.max(1),
        k => k,
    };
    let sol = solve(&s, dt, cfg.sim.horizon, stride)?;
    if o.csv {
        sol.write_csv(o.file("solution.csv")?)?;
        if cfg.first_order.snapshot_stride > 0 {
            for (i, u) in &sol.u {
                u.write_csv(o.file(&format!("density_{i}.csv"))?)?;
            }
        }
    }
    let last = sol.times.len() - 1;
    Ok(Outcome::ok(json!({
        "scenario": s.name,
        "dt": dt,
        "horizon": sol.horizon(),
        "final": { "B": sol.b[last], "Y": sol.y[last], "characteristic": sol.characteristic[last] },
        "sup_l2": sol.sup_l2,
        "projections": sol.projection_names.iter().zip(&sol.projections)
            .map(|(n, p)| json!({ "name": n, "final": p[last] })).collect::<Vec<_>>(),
    })))
}

fn stats_csv(o: &Output, name: &str, rows: &[FluctuationStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(o.file(name)?);
    w.write_record([
        "t",
        "mean_ZB",
        "mean_ZY",
        "VarZB",
        "VarZY",
        "Cov",
        "rho",
        "rho_stderr",
    ])?;
    for r in rows {
        w.write_record(
            [
                r.t,
                r.mean_zb.value,
                r.mean_zy.value,
                r.var_zb.value,
                r.var_zy.value,
                r.cov.value,
                r.corr,
                r.corr_stderr,
            ]
            .map(|v| format!("{v}")),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn check_json(c: &ZeroMeanCheck) -> Value {
    json!({ "series": c.series, "passed": c.passed, "max_z": c.max_z(), "k_sigma": c.k_sigma })
}

fn fluctuations(cfg: &RunConfig, o: &Output) -> Result<Outcome> {
    let s = cfg.scenario()?;
    let delta = cfg.grid.delta;
    let sol = solve(&s, delta, cfg.sim.horizon, 1)?;
    let sim = Simulator::new(&s.spec, s.grid)?;
    let seed = cfg.seed()?;
    let sc = SimConfig::new(delta, cfg.sim.horizon, seed);
    let ks = spaced_checkpoints(sc.n_events(), cfg.fluctuations.checkpoints);
    let fe = fluctuation_ensemble(
        &sim,
        &sol,
        &sc,
        s.b0,
        &s.u0,
        cfg.sim.n_paths,
        &ks,
        &s.test_fns,
    )?;
    let rows = fe.stats();
    if o.csv {
        stats_csv(o, "fluctuation_stats.csv", &rows)?;
    }
    let k = cfg.fluctuations.k_sigma;
    let mc = SimConfig::new(delta, cfg.sim.horizon, rng::child_seed(seed, 1));
    let me = martingale_ensemble(
        &sim,
        &sol,
        &mc,
        s.b0,
        &s.u0,
        cfg.sim.n_paths,
        &ks,
        &s.test_fns,
    )?;
    let mut checks: Vec<ZeroMeanCheck> = vec![
        ZeroMeanCheck::from_columns("ZB", fe.times.clone(), &fe.zb, k),
        ZeroMeanCheck::from_columns("ZY", fe.times.clone(), &fe.zy, k),
    ];
    checks.extend(me.checks(k));
    let passed = checks.iter().all(|c| c.passed);
    Ok(Outcome {
        passed,
        report: json!({
            "scenario": s.name,
            "n_paths": cfg.sim.n_paths,
            "invariants": checks.iter().map(check_json).collect::<Vec<_>>(),
            "stats": rows,
        }),
    })
}

fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| LobError::Config(format!("{} has no column '{n}'", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (c, &i) in idx.iter().enumerate() {
            let v: f64 = rec[i].trim().parse().map_err(|e| {
                LobError::Config(format!("{}: bad number '{}': {e}", path.display(), &rec[i]))
            })?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

fn path_dirs(root: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(i) = name
            .strip_prefix("path_")
            .and_then(|r| r.parse::<usize>().ok())
        {
            if entry.path().join("prices.csv").is_file() {
                dirs.push((i, entry.path()));
            }
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(LobError::InsufficientData(format!(
            "no path_<i>/prices.csv under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

/// `Z` of paths written by `simulate` against a solution written by
/// `first-order` on the same mesh. Projections use density files present in
/// both directories.
fn fluctuations_from_files(
    cfg: &RunConfig,
    paths: &Path,
    fo: &Path,
    o: &Output,
) -> Result<Outcome> {
    let s = cfg.scenario()?;
    let delta = cfg.grid.delta;
    let sq = delta.sqrt();
    let reference = read_columns(&fo.join("solution.csv"), &["t", "B", "Y"])?;
    let (rt, rb, ry) = (&reference[0], &reference[1], &reference[2]);
    let dirs = path_dirs(paths)?;
    let mut zb_paths = Vec::with_capacity(dirs.len());
    let mut zy_paths = Vec::with_capacity(dirs.len());
    let mut projections: Vec<Vec<(usize, Vec<f64>)>> = Vec::new();
    for (i, dir) in &dirs {
        let cols = read_columns(&dir.join("prices.csv"), &["k", "t", "B", "Y"])?;
        let (t, b, y) = (&cols[1], &cols[2], &cols[3]);
        if t.len() != rt.len()
            || t.iter()
                .zip(rt)
                .any(|(a, r)| (a - r).abs() > 1e-9 * (1.0 + r.abs()))
        {
            return Err(LobError::MeshMismatch(format!(
                "path {i} has {} samples, the first-order solution {}; the solver step must equal the tick size",
                t.len(),
                rt.len()
            )));
        }
        let zb: Vec<f64> = (0..t.len()).map(|k| (b[k] - rb[k]) / sq).collect();
        let zy: Vec<f64> = (0..t.len()).map(|k| (y[k] - ry[k]) / sq).collect();
        if o.csv {
            let mut w = csv::Writer::from_writer(o.file(&format!("path_{i}_fluctuations.csv"))?);
            w.write_record(["t", "ZB", "ZY"])?;
            for k in 0..t.len() {
                w.write_record([t[k], zb[k], zy[k]].map(|v| format!("{v}")))?;
            }
            w.flush()?;
        }
        projections.push(project_snapshots(&s, dir, fo, sq)?);
        zb_paths.push(zb);
        zy_paths.push(zy);
    }
    let n = rt.len() - 1;
    let ks = spaced_checkpoints(n, cfg.fluctuations.checkpoints);
    let col = |z: &[Vec<f64>], k: usize| -> Vec<f64> { z.iter().map(|p| p[k]).collect() };
    let rows: Vec<FluctuationStats> = ks
        .iter()
        .map(|&k| pair_stats(rt[k], &col(&zb_paths, k), &col(&zy_paths, k)))
        .collect();
    if o.csv {
        stats_csv(o, "fluctuation_stats.csv", &rows)?;
    }
    let k_sigma = cfg.fluctuations.k_sigma;
    let times: Vec<f64> = ks.iter().map(|&k| rt[k]).collect();
    let mut checks = Vec::new();
    if dirs.len() >= 2 {
        let zb: Vec<Vec<f64>> = ks.iter().map(|&k| col(&zb_paths, k)).collect();
        let zy: Vec<Vec<f64>> = ks.iter().map(|&k| col(&zy_paths, k)).collect();
        checks.push(ZeroMeanCheck::from_columns(
            "ZB",
            times.clone(),
            &zb,
            k_sigma,
        ));
        checks.push(ZeroMeanCheck::from_columns(
            "ZY",
            times.clone(),
            &zy,
            k_sigma,
        ));
    }
    let proj_summary: Vec<Value> = s
        .test_fns
        .iter()
        .enumerate()
        .map(|(f, phi)| {
            let rows: Vec<Value> = projections
                .first()
                .map(|p| p.iter().map(|(k, _)| *k).collect::<Vec<_>>())
                .unwrap_or_default()
                .iter()
                .enumerate()
                .map(|(j, k)| {
                    let v: Vec<f64> = projections
                        .iter()
                        .filter_map(|p| p.get(j).map(|x| x.1[f]))
                        .collect();
                    json!({ "k": k, "mean": stats::mean(&v), "n": v.len() })
                })
                .collect();
            json!({ "name": phi.name(), "snapshots": rows })
        })
        .collect();
    Ok(Outcome {
        passed: checks.iter().all(|c| c.passed),
        report: json!({
            "n_paths": dirs.len(),
            "invariants": checks.iter().map(check_json).collect::<Vec<_>>(),
            "stats": rows,
            "projections": proj_summary,
        }),
    })
}

/// `<Z^u, phi>` at every `density_<k>.csv` found in both directories.
fn project_snapshots(
    s: &Scenario,
    path_dir: &Path,
    fo: &Path,
    sq: f64,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut ks: Vec<usize> = Vec::new();
    for entry in fs::read_dir(path_dir)? {
        let name = entry?.file_name().to_string_lossy().to_string();
        if let Some(k) = name
            .strip_prefix("density_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse().ok())
        {
            if fo.join(&name).is_file() {
                ks.push(k);
            }
        }
    }
    ks.sort_unstable();
    let weights: Vec<_> = s.test_fns.iter().map(|f| f.cell_weights(&s.grid)).collect();
    let read = |p: PathBuf, grid: TickGrid| -> Result<StepDensity> {
        StepDensity::read_csv(File::open(p)?, grid)
    };
    ks.into_iter()
        .map(|k| {
            let u = read(path_dir.join(format!("density_{k}.csv")), s.grid)?;
            let r = read(fo.join(format!("density_{k}.csv")), s.grid)?;
            Ok((
                k,
                weights
                    .iter()
                    .map(|w| (w.pair(u.values()) - w.pair(r.values())) / sq)
                    .collect(),
            ))
        })
        .collect()
}

fn output_times(cfg: &RunConfig) -> Vec<f64> {
    let n = cfg.second_order.n_times.max(1);
    (1..=n)
        .map(|i| cfg.sim.horizon * i as f64 / n as f64)
        .collect()
}

fn covariance_csv(o: &Output, rows: &[[f64; 5]]) -> Result<()> {
    let mut w = csv::Writer::from_writer(o.file("covariance.csv")?);
    w.write_record(["t", "VarZB", "VarZY", "Cov", "rho"])?;
    for r in rows {
        w.write_record(r.map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

fn second_order(cfg: &RunConfig, o: &Output) -> Result<Outcome> {
    let so = &cfg.second_order;
    let s = cfg.scenario()?;
    let times = output_times(cfg);
    match so.mode {
        SecondOrderMode::Simplified => {
            let c = cfg.coefficients().ok_or_else(|| {
                LobError::Config(
                    "the simplified second-order mode needs the simplified model".into(),
                )
            })?;
            let sol = solve(&s, cfg.first_order_dt(), cfg.sim.horizon, 1)?;
            let model = SimplifiedModel::from_solution(c, &sol).with_zero_q(so.zero_q);
            let points = times
                .iter()
                .map(|&t| simplified_covariance(&model, t, so.quad_steps, so.covariance_exponent))
                .collect::<Result<Vec<_>>>()?;
            if o.csv {
                let rows: Vec<[f64; 5]> = points
                    .iter()
                    .map(|p| [p.t, p.var_zb, p.var_zy, p.cov, p.rho])
                    .collect();
                covariance_csv(o, &rows)?;
            }
            let mut report = json!({
                "mode": "simplified",
                "covariance_exponent": so.covariance_exponent,
                "psd_failure_at": model.first_psd_failure(200),
                "covariance": points,
            });
            let mut passed = model.first_psd_failure(200).is_none();
            if so.n_paths > 0 {
                let opts = EnsembleOptions {
                    horizon: cfg.sim.horizon,
                    dt: so.dt,
                    n_paths: so.n_paths,
                    seed: cfg.seed()?,
                    checkpoints: times.clone(),
                };
                let stats = simulate_simplified_ou(&model, &opts, so.scheme)?.stats();
                let k = cfg.fluctuations.k_sigma;
                let agree: Vec<bool> = stats
                    .iter()
                    .zip(&points)
                    .map(|(m, p)| {
                        m.var_zb.within(p.var_zb, k)
                            && m.var_zy.within(p.var_zy, k)
                            && m.cov.within(p.cov, k)
                    })
                    .collect();
                passed &= agree.iter().all(|a| *a);
                if o.json {
                    o.write_json("ensemble_summary.json", &stats)?;
                }
                report["ensemble_agreement"] = json!(agree);
            }
            Ok(Outcome { passed, report })
        }
        SecondOrderMode::Spectral => {
            let sol = solve(&s, cfg.first_order_dt(), cfg.sim.horizon, 1)?;
            let gal = Galerkin::new(&s.spec, &sol, so.modes)?;
            let factors = times
                .iter()
                .map(|&t| sample_sigma(&gal, t, so.zero_q).map(|r| (t, r.report())))
                .collect::<Result<Vec<_>>>()?;
            let psd = factors.iter().all(|(_, r)| r.is_psd());
            let mut report = json!({
                "mode": "spectral",
                "n_modes": gal.basis.n_modes(),
                "sigma": factors.iter().map(|(t, r)| json!({
                    "t": t,
                    "norm": r.norm,
                    "min_eigenvalue": r.min_eigenvalue,
                    "clipped": r.clipped,
                    "relative_residual": r.relative_residual(),
                })).collect::<Vec<_>>(),
            });
            if so.n_paths > 0 {
                let ens = EnsembleOptions {
                    horizon: cfg.sim.horizon,
                    dt: so.dt,
                    n_paths: so.n_paths,
                    seed: cfg.seed()?,
                    checkpoints: times,
                };
                let mut opts = SpdeOptions::new(ens, so.modes);
                opts.zero_q = so.zero_q;
                let stats = simulate_spde(&s.spec, &sol, &opts, &s.test_fns, None)?.stats();
                if o.csv {
                    let rows: Vec<[f64; 5]> = stats
                        .iter()
                        .map(|r| [r.t, r.var_zb.value, r.var_zy.value, r.cov.value, r.corr])
                        .collect();
                    covariance_csv(o, &rows)?;
                }
                if o.json {
                    o.write_json("ensemble_summary.json", &stats)?;
                }
                report["ensemble"] = json!(stats);
            }
            Ok(Outcome {
                passed: psd,
                report,
            })
        }
    }
}

fn write_fits(o: &Output, side: &str, fits: &ModelFits) -> Result<()> {
    if o.json {
        o.write_json(&format!("fits_{side}.json"), fits)?;
    }
    fs::write(
        o.dir.join(format!("fits_{side}.txt")),
        fits.table(&format!("Estimated regression parameters, {side} side")),
    )?;
    Ok(())
}

fn calibrate(cfg: &RunConfig, o: &Output) -> Result<Outcome> {
    let cal = &cfg.calibration;
    let tick = cal.tick.unwrap_or(cfg.grid.delta);
    let dt = cal.dt.unwrap_or(cfg.grid.delta);
    match &cal.input {
        Some(input) => {
            let ingest = ingest_csv(input, &cal.schema)?;
            let mut sides = serde_json::Map::new();
            for side in [crate::calibration::Side::Bid, crate::calibration::Side::Ask] {
                let name = if side == crate::calibration::Side::Bid {
                    "bid"
                } else {
                    "ask"
                };
                let series = SideSeries::from_snapshots(&ingest.snapshots, side);
                let features = build_features(&series, tick, dt, cal.convention)?;
                let fits = fit_models(&features, cal.stderr)?;
                write_fits(o, name, &fits)?;
                sides.insert(
                    name.into(),
                    json!({
                        "coefficients": fits.coefficients(),
                        "y_star": fits.coefficients().y_star(),
                        "gaps": features.gaps.len(),
                        "off_tick": features.off_tick,
                    }),
                );
            }
            Ok(Outcome::ok(json!({
                "source": input,
                "rows_read": ingest.rows_read,
                "snapshots": ingest.snapshots.len(),
                "rejects": ingest.rejects.len(),
                "duplicates_replaced": ingest.duplicates_replaced,
                "sides": sides,
            })))
        }
        None => {
            let s = cfg.scenario()?;
            let sim = Simulator::new(&s.spec, s.grid)?;
            let sc = SimConfig::new(
                cfg.grid.delta,
                cal.session_seconds as f64 * cfg.grid.delta,
                cfg.seed()?,
            );
            let path = sim.simulate_path(&sc, s.b0, &s.u0)?;
            let features = build_features(
                &SideSeries::from_path(&path),
                cfg.grid.delta,
                cfg.grid.delta,
                cal.convention,
            )?;
            let fits = fit_models(&features, cal.stderr)?;
            let side = if cfg.model.side == crate::calibration::Side::Bid {
                "bid"
            } else {
                "ask"
            };
            write_fits(o, side, &fits)?;
            let recovery = s.coefficients.map(|truth| {
                let k = 2.0;
                json!({
                    "truth": truth,
                    "p_c": fits.p_ab.covers("c", truth.p_c, k),
                    "p_y": fits.p_ab.covers("y", truth.p_y, k),
                    "F_c": fits.big_f.covers("c", truth.big_f_c, k),
                    "F_y": fits.big_f.covers("y", truth.big_f_y, k),
                })
            });
            Ok(Outcome::ok(json!({
                "source": "simulated",
                "seconds": cal.session_seconds,
                "coefficients": fits.coefficients(),
                "recovery_within_2_stderr": recovery,
            })))
        }
    }
}

fn correlate(cfg: &RunConfig, o: &Output) -> Result<Outcome> {
    let cal = &cfg.calibration;
    let dt = cal.dt.unwrap_or(cfg.grid.delta);
    let (b, y, coeffs, u_top) = match &cal.input {
        Some(input) => {
            let tick = cal.tick.unwrap_or(cfg.grid.delta);
            let ingest = ingest_csv(input, &cal.schema)?;
            let series = SideSeries::from_snapshots(&ingest.snapshots, cfg.model.side);
            let coeffs = match cfg.coefficients() {
                Some(c) => c,
                None => fit_models(
                    &build_features(&series, tick, dt, cal.convention)?,
                    cal.stderr,
                )?
                .coefficients(),
            };
            let u_top = stats::mean(&series.top) / tick;
            (series.best, series.total, coeffs, u_top)
        }
        None => {
            let s = cfg.scenario()?;
            let coeffs = s.coefficients.ok_or_else(|| {
                LobError::Config("simulated correlation needs the simplified model".into())
            })?;
            let (b, y) = synthetic_windows(&s, cal.window_seconds, cal.n_windows, cfg.seed()?)?;
            (b, y, coeffs, s.u0.values()[s.grid.top_cell()])
        }
    };
    let opts = CorrelationOptions {
        window: cal.window_seconds,
        dt,
        burn_in: cal.burn_in,
        exponent: cfg.second_order.covariance_exponent,
    };
    let rep = windowed_correlation(&b, &y, &coeffs, u_top, &opts)?;
    if o.csv {
        rep.write_csv(o.file("correlation_report.csv")?)?;
    }
    Ok(Outcome::ok(json!({
        "n_windows": rep.n_windows,
        "window": rep.window,
        "remainder": rep.remainder,
        "mean_abs_gap": rep.mean_abs_gap(),
        "mean_stderr": rep.mean_stderr(),
        "gap_within_stderr_band": rep.mean_abs_gap() < rep.mean_stderr(),
    })))
}

fn study(cfg: &RunConfig) -> Result<Outcome> {
    let st = &cfg.study;
    let opts = StudyOptions {
        base_delta: st.base_delta,
        rungs: st.rungs,
        horizon: cfg.sim.horizon,
        n_paths: st.n_paths,
        checkpoints: st.checkpoints,
        k_sigma: st.k_sigma,
        modes: cfg.second_order.modes,
        spde_dt: cfg.second_order.dt,
        seed: cfg.seed()?,
    };
    let checks = convergence_study(|d| cfg.scenario_at(d), &opts)?;
    Ok(Outcome {
        passed: checks.iter().all(|c| c.passed),
        report: json!({ "options": opts, "checks": checks }),
    })
}

fn validate(cfg: &RunConfig) -> Result<Outcome> {
    let s = cfg.scenario()?;
    let y0 = s.spec.h.h.cell_weights(&s.grid).pair(s.u0.values());
    let (lo, hi) = (0.5 * y0, 1.5 * y0.max(1e-9));
    let bx = SampleBox {
        b: (s.b0 - 0.1, s.b0 + 0.1),
        y: (lo, hi),
        n: 5,
    };
    let rep = validate_assumptions(&s.spec, &s.u0, &bx);
    // the lifted model floors G at F^2 / p_C, so a negative fitted gap is a warning
    let warnings = s
        .coefficients
        .map(|c| c.check_range(lo, hi, 50))
        .unwrap_or_default();
    Ok(Outcome {
        passed: rep.all_passed(),
        report: json!({
            "scenario": s.name,
            "sample_box": bx,
            "assumptions": rep,
            "coefficient_warnings": warnings,
            "y_star": s.coefficients.map(|c| c.y_star()),
        }),
    })
}
