use super::{fill_normals, RngStream, TimeGrid, Trajectory, Workspace};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::parallel::try_map_chunks;
use crate::reference::ConstantCoefficientKernel;

fn analytic(field: &CoefficientField) -> Result<ConstantCoefficientKernel> {
    field
        .analytic_kernel()
        .map(|k| k.driftless())
        .ok_or_else(|| Error::UnsupportedField(field.name().to_string()))
}

/// Drives one pinned path with `increments`, calling `visit(k, state)` for
/// every grid index. The drift is `a·∇ₓ log pˣ(s,x;t,y)`; the final step
/// (`t − s < 2h`) moves deterministically onto `y`.
fn run_bridge(
    field: &CoefficientField,
    kernel: &ConstantCoefficientKernel,
    x: &[f64],
    y: &[f64],
    grid: &TimeGrid,
    increments: &[f64],
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let d = field.dim();
    let h = grid.h();
    let n = grid.n_steps;
    let a = kernel.a0();
    let mut ws = Workspace::new(d);
    ws.x.copy_from_slice(x);
    visit(0, &ws.x);
    for k in 0..n {
        if n - k < 2 {
            ws.x.copy_from_slice(y);
        } else {
            let s = grid.time(k);
            let grad = kernel.grad_log_x(grid.t_end - s, &ws.x, y);
            let drift: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| a[i * d + j] * grad[j]).sum())
                .collect();
            field.local(s, &ws.x, &mut ws.local)?;
            ws.db.copy_from_slice(&increments[k * d..(k + 1) * d]);
            ws.apply_sigma();
            for i in 0..d {
                ws.x[i] += drift[i] * h;
            }
        }
        visit(k + 1, &ws.x);
    }
    Ok(())
}

fn check_points(field: &CoefficientField, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != field.dim() || y.len() != field.dim() {
        return Err(Error::Validation("bridge endpoints must match the field dimension".into()));
    }
    Ok(())
}

/// One diffusion bridge from `x` at `grid.t_start` to `y` at `grid.t_end`,
/// for fields with an analytic kernel. Uses stream path 0.
pub fn simulate_bridge(
    field: &CoefficientField,
    x: &[f64],
    y: &[f64],
    grid: TimeGrid,
    rng: &RngStream,
) -> Result<Trajectory> {
    let kernel = analytic(field)?;
    check_points(field, x, y)?;
    let d = field.dim();
    let mut increments = vec![0.0; grid.n_steps * d];
    fill_normals(&mut rng.path_rng(0), grid.h(), &mut increments);
    let mut states = Vec::with_capacity((grid.n_steps + 1) * d);
    run_bridge(field, &kernel, x, y, &grid, &increments, |_, s| {
        states.extend_from_slice(s)
    })?;
    Ok(Trajectory {
        grid,
        dim: d,
        path: 0,
        states,
        increments,
    })
}

/// Summary of many independent bridges.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSample {
    pub dim: usize,
    /// State at the observation index, `n × dim` row-major.
    pub observed: Vec<f64>,
    /// Per-path `max_k |X_k − x|`.
    pub max_deviation: Vec<f64>,
    /// `max_i |X_n^i − y|`.
    pub max_terminal_error: f64,
}

/// Streams `n_paths` bridges, recording the state at `observe_step`.
pub fn sample_bridges(
    field: &CoefficientField,
    x: &[f64],
    y: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    observe_step: usize,
    rng: &RngStream,
) -> Result<BridgeSample> {
    let kernel = analytic(field)?;
    check_points(field, x, y)?;
    if observe_step > grid.n_steps {
        return Err(Error::IndexOutOfRange {
            index: observe_step,
            max: grid.n_steps,
        });
    }
    let d = field.dim();
    let n = grid.n_steps;
    let parts = try_map_chunks(n_paths, |range| {
        let mut observed = Vec::with_capacity(range.len() * d);
        let mut max_deviation = Vec::with_capacity(range.len());
        let mut terminal = 0.0f64;
        let mut inc = vec![0.0; n * d];
        for i in range {
            fill_normals(&mut rng.path_rng(i as u64), grid.h(), &mut inc);
            let mut dev = 0.0f64;
            run_bridge(field, &kernel, x, y, &grid, &inc, |k, s| {
                let r = s.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                dev = dev.max(r);
                if k == observe_step {
                    observed.extend_from_slice(s);
                }
                if k == n {
                    let e = s.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    terminal = terminal.max(e);
                }
            })?;
            max_deviation.push(dev);
        }
        Ok::<_, Error>((observed, max_deviation, terminal))
    })?;
    let mut out = BridgeSample {
        dim: d,
        observed: Vec::with_capacity(n_paths * d),
        max_deviation: Vec::with_capacity(n_paths),
        max_terminal_error: 0.0,
    };
    for (o, m, t) in parts {
        out.observed.extend(o);
        out.max_deviation.extend(m);
        out.max_terminal_error = out.max_terminal_error.max(t);
    }
    Ok(out)
}
