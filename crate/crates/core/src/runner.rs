//! Dispatches a validated configuration to its experiment and writes the
//! outputs under `<root>/<kind>-<hash12>/`, always with a `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::coefficients::{
    check_bounds, check_ellipticity, estimate_a3_integral, estimate_modulus, A3Quadrature,
    CoefficientField, ModulusTarget, SamplingGrid,
};
use crate::config::{
    time_grid, CoupleParams, EnvelopeParams, EstimateParams, Experiment, ExperimentConfig,
    HolderParams, OracleParams, SimulateParams, ValidateParams,
};
use crate::coupling::{coupling_time_stats, estimate_coupling_exponent, CouplingRule, CouplingStats, DeltaRow};
use crate::error::{Error, Result};
use crate::estimator::{
    default_bandwidth, envelope_points, estimate_holder_exponent, fit_gaussian_envelope,
    pinned_expectation, weighted_density, DensityEstimate, DensityKind,
};
use crate::output::{coordinate_names, density_table, fmt_f64, json_string, write_text, Table};
use crate::reference::{fundamental_solution_1d, Grid1D};
use crate::sde::{sample_endpoints, simulate_paths, weighted_mean, write_trajectory, RngStream};

/// Version string recorded in manifests.
pub fn version_string() -> String {
    format!("heatmc-v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    status: &'a str,
    kind: &'a str,
    config_hash: &'a str,
    seed: Option<u64>,
    workers: usize,
    version: String,
    wall_time_s: f64,
    outputs: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Where a run wrote its files.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

struct Sink {
    dir: PathBuf,
    files: Vec<String>,
}

impl Sink {
    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn write_manifest(
    dir: &Path,
    status: &str,
    kind: &str,
    hash: &str,
    seed: Option<u64>,
    files: &[String],
    started: Instant,
    error: Option<&Error>,
) -> Result<()> {
    let m = Manifest {
        status,
        kind,
        config_hash: hash,
        seed,
        workers: rayon::current_num_threads(),
        version: version_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs: files,
        error: error.map(|e| e.to_string()),
    };
    write_text(&dir.join("manifest.json"), &json_string(&m))
}

/// Runs the experiment in the current rayon pool. The manifest is written
/// whether or not the experiment succeeds; on failure the error is returned
/// after it has been recorded.
pub fn run(cfg: &ExperimentConfig, root: &Path) -> std::result::Result<RunOutput, (Option<PathBuf>, Error)> {
    let started = Instant::now();
    let kind = cfg.experiment.kind();
    let hash = cfg.hash12();
    let dir = root.join(format!("{kind}-{hash}"));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return Err((None, e.into()));
    }
    let mut sink = Sink {
        dir: dir.clone(),
        files: Vec::new(),
    };
    let result = cfg.coefficients.build().and_then(|field| {
        let rng = RngStream::new(cfg.seed, 0);
        match &cfg.experiment {
            Experiment::Validate(p) => run_validate(&field, p, &mut sink),
            Experiment::Simulate(p) => run_simulate(&field, p, &rng, &mut sink),
            Experiment::Estimate(p) => run_estimate(&field, p, &rng, &mut sink),
            Experiment::Couple(p) => run_couple(&field, p, &rng, &mut sink),
            Experiment::Holder(p) => run_holder(&field, p, &rng, &mut sink),
            Experiment::Envelope(p) => run_envelope(&field, p, &rng, &mut sink),
            Experiment::Oracle(p) => run_oracle(&field, p, &mut sink),
        }
    });
    let (status, err) = match &result {
        Ok(()) => ("ok", None),
        Err(e) => ("error", Some(e)),
    };
    let manifest = write_manifest(&dir, status, kind, &hash, Some(cfg.seed), &sink.files, started, err);
    match (result, manifest) {
        (Ok(()), Ok(())) => Ok(RunOutput {
            dir,
            files: sink.files,
        }),
        (Err(e), _) | (Ok(()), Err(e)) => Err((Some(dir), e)),
    }
}

/// Records a configuration that could not be parsed, under
/// `<root>/invalid-<hash12 of the raw bytes>/manifest.json`.
pub fn write_failure_manifest(root: &Path, raw: &[u8], error: &Error) -> Result<PathBuf> {
    let started = Instant::now();
    let digest = Sha256::digest(raw);
    let hash: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    let dir = root.join(format!("invalid-{hash}"));
    std::fs::create_dir_all(&dir)?;
    write_manifest(&dir, "error", "invalid", &hash, None, &[], started, Some(error))?;
    Ok(dir)
}

fn run_validate(field: &CoefficientField, p: &ValidateParams, sink: &mut Sink) -> Result<()> {
    let d = field.dim();
    let grid = SamplingGrid::cube(d, p.half_width, p.points_per_dim, p.t_values.clone())?;
    let mut reports = vec![check_ellipticity(field, &grid)];
    reports.extend(check_bounds(field, &grid));
    let theta = p.theta.unwrap_or((d.max(2) + 1) as f64);
    let nodes = match d {
        1 => p.a3_nodes,
        2 => p.a3_nodes.min(201),
        _ => p.a3_nodes.min(41),
    };
    let quad = A3Quadrature {
        half_width: p.a3_half_width,
        nodes_per_dim: nodes,
        t_samples: p.t_values.clone(),
    };
    reports.push(estimate_a3_integral(field, theta, p.m, p.declared_bound, &quad)?.to_validation());
    let pass = reports.iter().all(|r| r.pass != Some(false));

    let ma = estimate_modulus(field, p.modulus_radius, p.modulus_pairs, &p.t_values, ModulusTarget::Diffusion)?;
    let ms = estimate_modulus(field, p.modulus_radius, p.modulus_pairs, &p.t_values, ModulusTarget::Sigma)?;
    let mut table = Table::new(&["r", "a_diff", "a_envelope", "sigma_diff", "sigma_envelope"]);
    for k in 0..ma.pairs.len() {
        table.row(vec![
            fmt_f64(ma.pairs[k].0),
            fmt_f64(ma.pairs[k].1),
            fmt_f64(ma.envelope[k]),
            fmt_f64(ms.pairs[k].1),
            fmt_f64(ms.envelope[k]),
        ]);
    }

    #[derive(Serialize)]
    struct Out<'a, R: Serialize> {
        field: &'a str,
        dim: usize,
        lambda: f64,
        pass: bool,
        reports: &'a [R],
    }
    sink.write(
        "validation.json",
        &json_string(&Out {
            field: field.name(),
            dim: d,
            lambda: field.lambda(),
            pass,
            reports: &reports,
        }),
    )?;
    sink.write("modulus.csv", table.as_str())
}

fn run_simulate(field: &CoefficientField, p: &SimulateParams, rng: &RngStream, sink: &mut Sink) -> Result<()> {
    let grid = time_grid(field, p.t, p.n_steps)?;
    let sample = sample_endpoints(field, &p.x, grid, p.n_paths, rng)?;
    let d = field.dim();
    let mut header = vec!["path".to_string()];
    header.extend(coordinate_names("x", d));
    header.push("log_weight".into());
    let mut table = Table::new(&header);
    for i in 0..sample.len() {
        let mut row = vec![i.to_string()];
        row.extend(sample.point(i).iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(sample.log_weights[i]));
        table.row(row);
    }
    sink.write("endpoints.csv", table.as_str())?;

    let weight = weighted_mean(&vec![1.0; sample.len()], &sample.log_weights)?;
    let means: Vec<f64> = (0..d)
        .map(|j| (0..sample.len()).map(|i| sample.point(i)[j]).sum::<f64>() / sample.len() as f64)
        .collect();
    #[derive(Serialize)]
    struct Summary {
        n_paths: usize,
        t: f64,
        n_steps: usize,
        h: f64,
        mean_weight: f64,
        mean_weight_stderr: f64,
        endpoint_mean: Vec<f64>,
    }
    sink.write(
        "summary.json",
        &json_string(&Summary {
            n_paths: p.n_paths,
            t: p.t,
            n_steps: grid.n_steps,
            h: grid.h(),
            mean_weight: weight.mean,
            mean_weight_stderr: weight.stderr,
            endpoint_mean: means,
        }),
    )?;
    if p.dump_paths > 0 {
        let paths = simulate_paths(field, &p.x, grid, p.dump_paths.min(p.n_paths), rng)?;
        for traj in &paths {
            let mut buf = Vec::new();
            write_trajectory(&mut buf, traj)?;
            sink.write_bytes(&format!("path_{:06}.bin", traj.path), &buf)?;
        }
    }
    Ok(())
}

fn run_estimate(field: &CoefficientField, p: &EstimateParams, rng: &RngStream, sink: &mut Sink) -> Result<()> {
    let grid = time_grid(field, p.t, p.n_steps)?;
    let sample = sample_endpoints(field, &p.x, grid, p.n_paths, rng)?;
    let h = match p.bandwidth {
        Some(h) => h,
        None => default_bandwidth(&sample)?,
    };
    let est = weighted_density(&sample, &p.y, h)?;
    sink.write("density.csv", density_table(&est).as_str())?;
    if p.pinned {
        let mut header = coordinate_names("y", field.dim());
        header.extend(["value", "stderr", "effective_samples"].map(String::from));
        let mut table = Table::new(&header);
        for y in &p.y {
            let pe = pinned_expectation(&sample, y, h)?;
            let mut row: Vec<String> = y.iter().map(|v| fmt_f64(*v)).collect();
            row.extend([fmt_f64(pe.value), fmt_f64(pe.stderr), fmt_f64(pe.effective_samples)]);
            table.row(row);
        }
        sink.write("pinned.csv", table.as_str())?;
    }
    Ok(())
}

fn survival_table(stats: &CouplingStats, stride: usize) -> Table {
    let mut t = Table::new(&["s", "survival", "stderr"]);
    for p in stats.survival(stride) {
        t.row(vec![fmt_f64(p.s), fmt_f64(p.survival), fmt_f64(p.stderr)]);
    }
    t
}

fn run_couple(field: &CoefficientField, p: &CoupleParams, rng: &RngStream, sink: &mut Sink) -> Result<()> {
    let grid = time_grid(field, p.t, p.n_steps)?;
    let rule = CouplingRule {
        factor: p.coupling_factor.unwrap_or(CouplingRule::default().factor),
        bridge_crossing: p.bridge_crossing,
    };
    let stride = p.survival_stride.unwrap_or((grid.n_steps / 100).max(1));
    let (rows, stats, fit) = if p.deltas.len() >= 3 {
        let e = estimate_coupling_exponent(field, &p.x, &p.deltas, grid, &rule, p.n_pairs, rng)?;
        (e.table, e.stats, Some(e.fit))
    } else {
        let mut rows = Vec::new();
        let mut all = Vec::new();
        for (j, &delta) in p.deltas.iter().enumerate() {
            let mut z = p.x.clone();
            z[0] += delta;
            let s = coupling_time_stats(field, &p.x, &z, grid, &rule, p.n_pairs, &rng.substream(j as u64))?;
            rows.push(DeltaRow {
                delta,
                t: s.t,
                e_t_tau: s.e_t_tau.mean,
                stderr: s.e_t_tau.stderr,
                n_pairs: p.n_pairs,
            });
            all.push(s);
        }
        (rows, all, None)
    };
    let mut table = Table::new(&["delta", "t", "e_t_tau", "stderr", "n_pairs"]);
    for r in &rows {
        table.row(vec![
            fmt_f64(r.delta),
            fmt_f64(r.t),
            fmt_f64(r.e_t_tau),
            fmt_f64(r.stderr),
            r.n_pairs.to_string(),
        ]);
    }
    sink.write("coupling.csv", table.as_str())?;
    for (j, s) in stats.iter().enumerate() {
        sink.write(&format!("survival_{j}.csv"), survival_table(s, stride).as_str())?;
    }
    #[derive(Serialize)]
    struct Out<T: Serialize> {
        rule: CouplingRule,
        threshold: f64,
        n_steps: usize,
        fit: Option<T>,
    }
    sink.write(
        "coupling.json",
        &json_string(&Out {
            rule,
            threshold: rule.threshold(field, &grid),
            n_steps: grid.n_steps,
            fit,
        }),
    )
}

fn run_holder(field: &CoefficientField, p: &HolderParams, rng: &RngStream, sink: &mut Sink) -> Result<()> {
    let grid = time_grid(field, p.t, p.n_steps)?;
    let direction = p.direction.clone().unwrap_or_else(|| {
        let mut e = vec![0.0; field.dim()];
        e[0] = 1.0;
        e
    });
    let report = estimate_holder_exponent(field, &p.x0, &direction, &p.deltas, &p.y, grid, p.n_paths, rng, p.bandwidth)?;
    let mut table = Table::new(&["delta", "diff", "stderr"]);
    for k in 0..report.deltas.len() {
        table.row(vec![
            fmt_f64(report.deltas[k]),
            fmt_f64(report.diffs[k]),
            fmt_f64(report.stderrs[k]),
        ]);
    }
    sink.write("holder.csv", table.as_str())?;
    sink.write("holder.json", &json_string(&report))
}

fn run_envelope(field: &CoefficientField, p: &EnvelopeParams, rng: &RngStream, sink: &mut Sink) -> Result<()> {
    let d = field.dim();
    let mut points = Vec::new();
    for (j, &t) in p.t_values.iter().enumerate() {
        let reach = 3.0 * (field.lambda() * t).sqrt();
        let queries: Vec<Vec<f64>> = (0..p.n_points)
            .map(|k| {
                let mut y = p.x.clone();
                y[0] += reach * k as f64 / (p.n_points - 1) as f64;
                y
            })
            .collect();
        let grid = time_grid(field, t, p.n_steps)?;
        let sample = sample_endpoints(field, &p.x, grid, p.n_paths, &rng.substream(j as u64))?;
        let h = match p.bandwidth {
            Some(h) => h,
            None => default_bandwidth(&sample)?,
        };
        let est = weighted_density(&sample, &queries, h)?;
        points.extend(envelope_points(&est, &p.x, t));
    }
    let env = fit_gaussian_envelope(&points, d)?;
    let mut table = Table::new(&["t", "r", "value", "stderr", "lower", "upper"]);
    for pt in &points {
        table.row(vec![
            fmt_f64(pt.t),
            fmt_f64(pt.r2.sqrt()),
            fmt_f64(pt.value),
            fmt_f64(pt.stderr),
            fmt_f64(env.lower(d, pt.t, pt.r2)),
            fmt_f64(env.upper(d, pt.t, pt.r2)),
        ]);
    }
    sink.write("envelope.csv", table.as_str())?;
    sink.write("envelope.json", &json_string(&env))
}

fn run_oracle(field: &CoefficientField, p: &OracleParams, sink: &mut Sink) -> Result<()> {
    let est = if let Some(k) = field.analytic_kernel() {
        DensityEstimate {
            dim: field.dim(),
            queries: p.y.clone(),
            values: p.y.iter().map(|y| k.density(p.t, &p.x, y)).collect(),
            stderrs: vec![0.0; p.y.len()],
            bandwidth: 0.0,
            n_paths: 0,
            kind: DensityKind::Oracle,
        }
    } else if field.dim() == 1 {
        let x = p.x[0];
        let grid = match p.grid {
            Some(g) => Grid1D::new(g.x_min, g.x_max, g.n_cells, g.dt)?,
            None => {
                let half = (8.0 * (2.0 * field.lambda() * p.t).sqrt() + field.b_sup() * p.t).max(10.0);
                let cells = (2.0 * half / 0.01).ceil() as usize;
                Grid1D::new(x - half, x + half, cells, 2.0 * half / cells as f64)?
            }
        };
        let ys: Vec<f64> = p.y.iter().map(|y| y[0]).collect();
        let values = fundamental_solution_1d(field, x, p.t, &ys, &grid)?;
        DensityEstimate {
            dim: 1,
            queries: p.y.clone(),
            values: values.iter().map(|v| v.value).collect(),
            stderrs: values.iter().map(|v| v.smoothing_bias).collect(),
            bandwidth: 2.0 * grid.dx(),
            n_paths: 0,
            kind: DensityKind::Oracle,
        }
    } else {
        return Err(Error::UnsupportedField(format!(
            "{} in dimension {}: no closed form and no finite-difference oracle",
            field.name(),
            field.dim()
        )));
    };
    sink.write("oracle.csv", density_table(&est).as_str())
}
