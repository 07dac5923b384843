//! Mode runners: build problems from a config, execute, and persist
//! machine-readable results (CSV artifacts plus summary.json).

use crate::config::RunConfig;
use anyhow::{anyhow, bail, Context, Result};
use hierwave::follower::{best_response, eval_j2, grad_j2_w2, FollowerProblem};
use hierwave::geometry::{build_partition, MovingDomain, PartitionMode, Segment};
use hierwave::leader::{
    controllability_residual, minimize_dual, recover_leader, vi_residual, LeaderProblem,
};
use hierwave::spaces::{build_metric, GridSpec, SpatialMetric};
use hierwave::verify::{verify_suite, Fault};
use hierwave::wavesolver::{solve_forward, terminal_state, ControlTrace, Field};
use hierwave::{presets, BoundaryPartition};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct RngInfo {
    pub generator: &'static str,
    pub seed: u64,
}

/// Machine-readable run record mirroring the CSV artifacts.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub parameters: BTreeMap<String, String>,
    pub rng: RngInfo,
    pub iterations: BTreeMap<String, u64>,
    pub residuals: BTreeMap<String, f64>,
    pub values: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

impl RunSummary {
    fn new(mode: &str, cfg: &RunConfig, seed: u64) -> Self {
        RunSummary {
            mode: mode.to_string(),
            parameters: cfg.echo(),
            rng: RngInfo { generator: "chacha8", seed },
            iterations: BTreeMap::new(),
            residuals: BTreeMap::new(),
            values: BTreeMap::new(),
            flags: BTreeMap::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    fn put_value(&mut self, key: &str, v: f64) -> Result<()> {
        if !v.is_finite() {
            bail!("internal error: summary value '{key}' is not finite ({v})");
        }
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    fn put_residual(&mut self, key: &str, v: f64) -> Result<()> {
        if !v.is_finite() {
            bail!("internal error: summary residual '{key}' is not finite ({v})");
        }
        self.residuals.insert(key.to_string(), v);
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_file(out: &Path, name: &str, content: &str, summary: &mut RunSummary) -> Result<()> {
    let path = out.join(name);
    std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    summary.outputs.push(name.to_string());
    Ok(())
}

fn trace_csv(grid: &GridSpec, values: &[f64]) -> String {
    let mut out = String::from("n,t,value\n");
    for (n, v) in values.iter().enumerate() {
        out.push_str(&format!("{n},{},{}\n", fmt(grid.t(n)), fmt(*v)));
    }
    out
}

fn interior_csv(grid: &GridSpec, values: &[f64]) -> String {
    let mut out = String::from("j,y,value\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, fmt(grid.y(i + 1)), fmt(*v)));
    }
    out
}

/// Field CSV: rows are time levels, columns the spatial nodes.
fn field_csv(field: &Field) -> String {
    let grid = &field.grid;
    let mut header = String::from("t");
    for j in 0..grid.n_nodes() {
        header.push_str(&format!(",y{}", fmt(grid.y(j))));
    }
    let mut out = header;
    out.push('\n');
    for n in 0..grid.n_rows() {
        out.push_str(&fmt(grid.t(n)));
        for j in 0..grid.n_nodes() {
            out.push(',');
            out.push_str(&fmt(field.at(n, j)));
        }
        out.push('\n');
    }
    out
}

pub struct Setting {
    pub grid: GridSpec,
    pub domain: MovingDomain,
    pub metric: SpatialMetric,
    pub partition: BoundaryPartition,
}

pub fn build_setting(cfg: &RunConfig) -> Result<Setting> {
    let k = cfg.f64_req("k")?;
    let t_final = cfg.f64_req("T")?;
    let ny = cfg.usize_or("grid.ny", 0)?;
    if ny == 0 {
        bail!("config error: missing required key 'grid.ny'");
    }
    let cfl = cfg.f64_or("grid.cfl", 0.8)?;
    let grid = GridSpec::with_cfl(ny, t_final, cfl)?;
    let domain = MovingDomain::new(k, t_final)?;
    let metric = build_metric(&grid)?;
    let mode = match cfg.str_or("partition.mode", "overlap").as_str() {
        "overlap" => PartitionMode::Overlap,
        "split" => PartitionMode::Split,
        other => bail!("config error: partition.mode must be overlap|split, got '{other}'"),
    };
    let split_time = match cfg.raw("partition.split_time") {
        Some(_) => Some(cfg.f64_req("partition.split_time")?),
        None => None,
    };
    let partition = build_partition(mode, &grid, split_time)?;
    Ok(Setting { grid, domain, metric, partition })
}

/// Spatial data from a preset name or `csv:PATH` (last column, one node/row).
fn space_data(cfg: &RunConfig, key: &str, default: &str, grid: &GridSpec) -> Result<Vec<f64>> {
    let spec = cfg.str_or(key, default);
    if let Some(path) = spec.strip_prefix("csv:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow!("config error: key '{key}': cannot read {path}: {e}"))?;
        let vals: Vec<f64> = text
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.rsplit(',')
                    .next()
                    .unwrap()
                    .trim()
                    .parse()
                    .map_err(|_| anyhow!("config error: key '{key}': bad number in {path}"))
            })
            .collect::<Result<_>>()?;
        if vals.len() != grid.n_nodes() {
            bail!(
                "config error: key '{key}': {path} has {} values, grid needs {}",
                vals.len(),
                grid.n_nodes()
            );
        }
        return Ok(vals);
    }
    Ok(presets::space_preset(&spec, grid)?)
}

fn field_data(cfg: &RunConfig, key: &str, grid: &GridSpec) -> Result<Field> {
    let spec = cfg.str_or(key, "zero");
    if let Some(path) = spec.strip_prefix("csv:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow!("config error: key '{key}': cannot read {path}: {e}"))?;
        let mut values = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|c| {
                    c.trim()
                        .parse()
                        .map_err(|_| anyhow!("config error: key '{key}': bad number in {path}"))
                })
                .collect::<Result<_>>()?;
            if row.len() != grid.n_nodes() {
                bail!(
                    "config error: key '{key}': row width {} does not match {} nodes",
                    row.len(),
                    grid.n_nodes()
                );
            }
            values.extend(row);
        }
        return Ok(Field::from_values(*grid, values)?);
    }
    Ok(presets::field_preset(&spec, grid)?)
}

fn trace_data(
    cfg: &RunConfig,
    key: &str,
    default: &str,
    grid: &GridSpec,
    partition: &BoundaryPartition,
    segment: Segment,
) -> Result<ControlTrace> {
    let spec = cfg.str_or(key, default);
    let values = if let Some(path) = spec.strip_prefix("csv:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow!("config error: key '{key}': cannot read {path}: {e}"))?;
        let vals: Vec<f64> = text
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.rsplit(',')
                    .next()
                    .unwrap()
                    .trim()
                    .parse()
                    .map_err(|_| anyhow!("config error: key '{key}': bad number in {path}"))
            })
            .collect::<Result<_>>()?;
        if vals.len() != grid.n_rows() {
            bail!(
                "config error: key '{key}': {path} has {} values, grid needs {}",
                vals.len(),
                grid.n_rows()
            );
        }
        vals
    } else {
        presets::trace_preset(&spec, grid)?
    };
    Ok(ControlTrace::masked(segment, values, partition)?)
}

fn build_follower(cfg: &RunConfig, setting: &Setting) -> Result<FollowerProblem> {
    let sigma = cfg.f64_or("follower.sigma", 1.0)?;
    let v2 = field_data(cfg, "target.v2", &setting.grid)?;
    let problem = FollowerProblem::new(
        sigma,
        v2,
        setting.partition.clone(),
        setting.domain,
        setting.grid,
        setting.metric.clone(),
    )?
    .with_tol(cfg.f64_or("follower.tol", 1e-8)?)
    .with_max_iter(cfg.usize_or("follower.max_iter", 500)?);
    Ok(problem)
}

fn build_leader(cfg: &RunConfig, setting: &Setting) -> Result<LeaderProblem> {
    let follower = build_follower(cfg, setting)?;
    let v0_full = space_data(cfg, "target.v0", "zero", &setting.grid)?;
    let v1_full = space_data(cfg, "target.v1", "zero", &setting.grid)?;
    let v0 = v0_full[1..setting.grid.ny].to_vec();
    let v1 = v1_full[1..setting.grid.ny].to_vec();
    let problem = LeaderProblem::new(
        follower,
        v0,
        v1,
        cfg.f64_or("leader.rho0", 0.05)?,
        cfg.f64_or("leader.rho1", 0.05)?,
    )?
    .with_delta(cfg.f64_or("leader.delta", 0.0)?)?
    .with_tol(cfg.f64_or("leader.tol", 1e-7)?)
    .with_max_iter(cfg.usize_or("leader.max_iter", 2000)?)
    .with_theta(cfg.f64_or("leader.theta", 1.0)?)
    .with_picard(
        cfg.f64_or("leader.picard_tol", 1e-10)?,
        cfg.usize_or("leader.picard_max", 200)?,
    )
    .with_slack(cfg.f64_or("leader.slack", 0.02)?)
    .with_override_speed_check(cfg.bool_or("leader.override_speed_check", false)?);
    Ok(problem)
}

pub fn run_simulate(cfg: &RunConfig, out: &Path, seed: u64) -> Result<RunSummary> {
    let start = Instant::now();
    let mut summary = RunSummary::new("simulate", cfg, seed);
    let setting = build_setting(cfg)?;
    let w1 = trace_data(cfg, "simulate.w1", "sine:1", &setting.grid, &setting.partition, Segment::Sigma1)?;
    let w2 = trace_data(cfg, "simulate.w2", "zero", &setting.grid, &setting.partition, Segment::Sigma2)?;
    let u0 = space_data(cfg, "init.v0", "zero", &setting.grid)?;
    let u1 = space_data(cfg, "init.v1", "zero", &setting.grid)?;
    let (v0, v1) = setting.domain.pullback_initial(&setting.grid, &u0, &u1)?;
    let v = solve_forward(
        &setting.grid,
        &setting.domain,
        &[&w1, &w2],
        None,
        Some((&v0, &v1)),
    )?;
    let ts = terminal_state(&v);

    write_file(out, "field.csv", &field_csv(&v), &mut summary)?;
    write_file(out, "w1.csv", &trace_csv(&setting.grid, w1.values()), &mut summary)?;
    write_file(out, "w2.csv", &trace_csv(&setting.grid, w2.values()), &mut summary)?;
    write_file(out, "terminal_v.csv", &interior_csv(&setting.grid, &ts.v_t), &mut summary)?;
    write_file(
        out,
        "terminal_vprime.csv",
        &interior_csv(&setting.grid, &ts.v_t_prime),
        &mut summary,
    )?;
    summary.put_value("field_max_abs", v.max_abs())?;
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

pub fn run_nash(cfg: &RunConfig, out: &Path, seed: u64) -> Result<RunSummary> {
    let start = Instant::now();
    let mut summary = RunSummary::new("nash", cfg, seed);
    let setting = build_setting(cfg)?;
    let problem = build_follower(cfg, &setting)?;
    let w1 = trace_data(cfg, "simulate.w1", "sine:1", &setting.grid, &setting.partition, Segment::Sigma1)?;
    let br = best_response(&problem, &w1)?;
    let j2 = eval_j2(&problem, &w1, &br.w2)?;
    let grad = grad_j2_w2(&problem, &w1, &br.w2)?;
    let grad_norm = problem.partition.norm(Segment::Sigma2, grad.values());

    write_file(out, "w1.csv", &trace_csv(&setting.grid, w1.values()), &mut summary)?;
    write_file(out, "w2.csv", &trace_csv(&setting.grid, br.w2.values()), &mut summary)?;
    write_file(out, "field.csv", &field_csv(&br.state), &mut summary)?;
    let ts = terminal_state(&br.state);
    write_file(out, "terminal_v.csv", &interior_csv(&setting.grid, &ts.v_t), &mut summary)?;
    write_file(
        out,
        "terminal_vprime.csv",
        &interior_csv(&setting.grid, &ts.v_t_prime),
        &mut summary,
    )?;
    let mut iters = String::from("iter,residual\n");
    for (i, r) in br.stats.residuals.iter().enumerate() {
        iters.push_str(&format!("{i},{}\n", fmt(*r)));
    }
    write_file(out, "iters.csv", &iters, &mut summary)?;

    summary.iterations.insert("cg".to_string(), br.stats.iterations as u64);
    summary.put_residual("gradient_norm", grad_norm)?;
    summary.put_residual("threshold", br.stats.threshold)?;
    summary.put_value("j2", j2)?;
    summary.put_value(
        "w1_norm",
        problem.partition.norm(Segment::Sigma1, w1.values()),
    )?;
    summary.put_value(
        "w2_norm",
        problem.partition.norm(Segment::Sigma2, br.w2.values()),
    )?;
    summary.flags.insert("converged".to_string(), br.stats.converged);
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

pub fn run_leader(cfg: &RunConfig, out: &Path, seed: u64) -> Result<RunSummary> {
    let start = Instant::now();
    let mut summary = RunSummary::new("leader", cfg, seed);
    let setting = build_setting(cfg)?;
    let problem = build_leader(cfg, &setting)?;

    let (fstar, log) = minimize_dual(&problem, seed)?;
    let rec = recover_leader(&problem, &fstar)?;
    let ts = terminal_state(&rec.state);
    let resid = controllability_residual(&problem, &ts)?;
    let vi = vi_residual(&problem, &fstar, 10, seed ^ 0x5eed, Some(log.step))?;
    let j2 = eval_j2(&problem.follower, &rec.w1, &rec.w2)?;

    write_file(out, "w1.csv", &trace_csv(&setting.grid, rec.w1.values()), &mut summary)?;
    write_file(out, "w2.csv", &trace_csv(&setting.grid, rec.w2.values()), &mut summary)?;
    write_file(out, "field.csv", &field_csv(&rec.state), &mut summary)?;
    write_file(out, "terminal_v.csv", &interior_csv(&setting.grid, &ts.v_t), &mut summary)?;
    write_file(
        out,
        "terminal_vprime.csv",
        &interior_csv(&setting.grid, &ts.v_t_prime),
        &mut summary,
    )?;
    let mut iters = String::from("iter,objective,prox_residual,restarted\n");
    for r in &log.records {
        iters.push_str(&format!(
            "{},{},{},{}\n",
            r.iter,
            fmt(r.objective),
            fmt(r.prox_residual),
            r.restarted
        ));
    }
    write_file(out, "iters.csv", &iters, &mut summary)?;

    summary.iterations.insert("fista".to_string(), log.records.len() as u64);
    summary
        .iterations
        .insert("picard_last".to_string(), log.astar_iterations_last as u64);
    summary.put_residual(
        "prox_residual",
        log.records.last().map(|r| r.prox_residual).unwrap_or(0.0),
    )?;
    summary.put_value("j", rec.j_value)?;
    summary.put_value("j2", j2)?;
    summary.put_value("d0", resid.d0)?;
    summary.put_value("d1", resid.d1)?;
    summary.put_value("vi_min", vi.min_value)?;
    summary.put_value("lipschitz", log.lipschitz)?;
    summary.put_value(
        "w1_norm",
        problem.follower.partition.norm(Segment::Sigma1, rec.w1.values()),
    )?;
    summary.put_value(
        "w2_norm",
        problem.follower.partition.norm(Segment::Sigma2, rec.w2.values()),
    )?;
    summary.flags.insert("inside".to_string(), resid.inside);
    summary.flags.insert("converged".to_string(), log.converged);
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

pub fn run_verify(cfg: &RunConfig, out: &Path, seed: u64) -> Result<RunSummary> {
    let start = Instant::now();
    let mut summary = RunSummary::new("verify", cfg, seed);
    let fault = if cfg.bool_or("debug.flip_flux_sign", false)? {
        Some(Fault::FlipFluxSign)
    } else {
        None
    };
    let report = verify_suite(seed, fault)?;
    let mut checks = String::from("check,passed,metric,value\n");
    for check in &report.checks {
        println!(
            "[{}] {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name
        );
        for (metric, value) in &check.measured {
            println!("    {metric} = {value:e}");
            checks.push_str(&format!(
                "{},{},{},{}\n",
                check.name, check.passed, metric, fmt(*value)
            ));
            summary
                .values
                .insert(format!("{}.{}", check.name, metric), *value);
        }
        summary.flags.insert(check.name.clone(), check.passed);
    }
    write_file(out, "checks.csv", &checks, &mut summary)?;
    summary.flags.insert("all_passed".to_string(), report.all_passed());
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// One sweep row: varied keys, status, and the headline numbers.
struct SweepRow {
    assignment: Vec<(String, String)>,
    status: String,
    values: BTreeMap<String, f64>,
    iterations: u64,
}

pub fn run_sweep(cfg: &RunConfig, out: &Path, seed: u64, jobs: usize) -> Result<RunSummary> {
    let start = Instant::now();
    let mut summary = RunSummary::new("sweep", cfg, seed);
    let mode = cfg.str_or("sweep.mode", "nash");
    if !["simulate", "nash", "leader"].contains(&mode.as_str()) {
        bail!("config error: sweep.mode must be simulate|nash|leader, got '{mode}'");
    }
    let points = cfg.expand_sweep()?;
    let varied: Vec<String> = points
        .first()
        .map(|(a, _)| a.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| anyhow!("cannot build thread pool: {e}"))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        use rayon::prelude::*;
        points
            .par_iter()
            .enumerate()
            .map(|(i, (assignment, point_cfg))| {
                let row_dir = out.join(format!("row_{i}"));
                let run = std::fs::create_dir_all(&row_dir)
                    .map_err(|e| anyhow!("cannot create {}: {e}", row_dir.display()))
                    .and_then(|_| match mode.as_str() {
                        "simulate" => run_simulate(point_cfg, &row_dir, seed),
                        "nash" => run_nash(point_cfg, &row_dir, seed),
                        _ => run_leader(point_cfg, &row_dir, seed),
                    });
                match run {
                    Ok(s) => {
                        let iterations = s.iterations.values().copied().max().unwrap_or(0);
                        let _ = std::fs::write(
                            row_dir.join("summary.json"),
                            serde_json::to_string_pretty(&s).unwrap_or_default(),
                        );
                        SweepRow {
                            assignment: assignment.clone(),
                            status: "ok".to_string(),
                            values: s.values,
                            iterations,
                        }
                    }
                    Err(e) => SweepRow {
                        assignment: assignment.clone(),
                        status: format!("error: {e}"),
                        values: BTreeMap::new(),
                        iterations: 0,
                    },
                }
            })
            .collect()
    });

    let metric_cols = ["j", "j2", "w1_norm", "w2_norm", "d0", "d1", "field_max_abs"];
    let mut table = String::from("row");
    for k in &varied {
        table.push(',');
        table.push_str(k);
    }
    table.push_str(",status,iterations");
    for m in &metric_cols {
        table.push(',');
        table.push_str(m);
    }
    table.push('\n');
    for (i, row) in rows.iter().enumerate() {
        table.push_str(&format!("{i}"));
        for k in &varied {
            let v = row
                .assignment
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .unwrap_or_default();
            table.push(',');
            table.push_str(&csv_escape(&v));
        }
        table.push(',');
        table.push_str(&csv_escape(&row.status));
        table.push_str(&format!(",{}", row.iterations));
        for m in &metric_cols {
            table.push(',');
            if let Some(v) = row.values.get(*m) {
                table.push_str(&fmt(*v));
            }
        }
        table.push('\n');
    }
    write_file(out, "sweep.csv", &table, &mut summary)?;
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    summary.put_value("rows", rows.len() as f64)?;
    summary.put_value("failures", failures as f64)?;
    summary.flags.insert("all_rows_ok".to_string(), failures == 0);
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

pub fn regen_golden(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, content) in hierwave::oracle::golden_csv_files()? {
        let path = dir.join(name);
        std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
