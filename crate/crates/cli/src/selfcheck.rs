use clap::Args;
use flowrecon::datapipe::make_sparse_mask;
use flowrecon::evalkit::{psnr, psnr_from_mse, rmse};
use flowrecon::flowgen::{plan_population, voxelize, FlowSolver, GridSpec, PopulationConfig, SolverConfig};
use flowrecon::tensorgrad::{adjoint_suite, gradient_suite, CheckOutcome};
use flowrecon::VolumeField;

use crate::error::CliError;

#[derive(Args, Clone, Debug, Default)]
pub struct SelfcheckArgs {
    /// Random seeds per gradient and adjoint check
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Corrupt one analytic gradient; the check must then fail
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

struct Line {
    group: &'static str,
    outcome: CheckOutcome,
}

fn tensor_checks(seeds: u64, fault: bool) -> Result<Vec<Line>, CliError> {
    let numeric = |e: flowrecon::tensorgrad::TensorError| CliError::Numeric(e.to_string());
    let mut out: Vec<Line> =
        gradient_suite(seeds, fault).map_err(numeric)?.into_iter().map(|outcome| Line { group: "gradient", outcome }).collect();
    out.extend(adjoint_suite(seeds).map_err(numeric)?.into_iter().map(|outcome| Line { group: "adjoint", outcome }));
    Ok(out)
}

/// Worst per-step `max|div u| · h / v_in` over a short run on a generated
/// geometry; must stay below 1e-3.
fn divergence_check() -> Result<Line, CliError> {
    let plan = plan_population(&PopulationConfig { n_geometries: 1, total_runs: 1, ..Default::default() })?;
    let geom = &plan.geometries[0];
    let grid = GridSpec::fit(geom, [32; 3]);
    let domain = voxelize(geom, grid)?;
    let v_in = 0.3;
    let steps = 40;
    let mut solver = FlowSolver::new(domain, SolverConfig { steps, ..SolverConfig::desk() }, v_in)?;
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let rep = solver.step();
        let scaled = solver.max_divergence() * grid.spacing / v_in;
        worst = if rep.converged && scaled.is_finite() { worst.max(scaled) } else { f64::INFINITY };
    }
    Ok(Line {
        group: "divergence",
        outcome: CheckOutcome { name: format!("{} {steps} steps, |div u|·h/v_in", geom.id), worst, tol: 1e-3, seeds: 1 },
    })
}

/// Sparse masks hold exactly `floor(0.05 N)` voxels, all inside the mask.
fn mask_density_check() -> Result<Line, CliError> {
    let mut worst = 0.0f64;
    let trials = 10u64;
    for seed in 0..trials {
        let r2 = 20.0 + seed as f32 * 7.0;
        let mask = VolumeField::from_fn([24; 3], 1.0, |z, y, x| {
            let d = (z as f32 - 11.5).powi(2) + (y as f32 - 11.0).powi(2) + (x as f32 - 12.0).powi(2);
            if d < r2 { 1.0 } else { 0.0 }
        });
        let n = mask.count_ones();
        let sparse = make_sparse_mask(&mask, 0.05, seed)?;
        let want = n * 5 / 100;
        let outside = sparse.data().iter().zip(mask.data()).filter(|(&s, &m)| s != 0.0 && m == 0.0).count();
        let miss = (sparse.count_ones() as f64 - want as f64).abs() + outside as f64;
        worst = worst.max(miss);
    }
    Ok(Line {
        group: "mask",
        outcome: CheckOutcome { name: "count = floor(0.05 N), support inside mask".into(), worst, tol: 0.5, seeds: trials },
    })
}

/// PSNR against `10 log10(1 / mse)` and the reference table values.
fn psnr_check() -> Result<Line, CliError> {
    let mut worst = 0.0f64;
    for mse in [1e-6, 1.9e-3, 5.03e-2, 0.25, 1.0] {
        worst = worst.max((psnr_from_mse(mse, 1.0) - 10.0 * (1.0 / mse).log10()).abs());
    }
    worst = worst.max((psnr_from_mse(1.90e-3, 1.0) - 27.21).abs() - 0.01).max(0.0);
    worst = worst.max(((psnr_from_mse(5.03e-2, 1.0) * 100.0).round() / 100.0 - 12.98).abs());
    let a = VolumeField::from_fn([4; 3], 1.0, |z, y, x| (z + 2 * y + 3 * x) as f32 / 20.0);
    let b = a.map(|v| v + 0.1);
    let p = psnr(&a, &a, 1.0).map_err(CliError::from)?;
    if p != f64::INFINITY {
        worst = f64::INFINITY;
    }
    let r = rmse(&a, &b).map_err(CliError::from)?;
    worst = worst.max((psnr(&a, &b, 1.0).map_err(CliError::from)? - (-20.0 * r.log10())).abs());
    Ok(Line { group: "psnr", outcome: CheckOutcome { name: "identity and reference values".into(), worst, tol: 1e-6, seeds: 1 } })
}

pub fn run(args: &SelfcheckArgs) -> Result<(), CliError> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let start = std::time::Instant::now();
    let mut lines = tensor_checks(args.seeds, args.inject_fault)?;
    lines.push(divergence_check()?);
    lines.push(mask_density_check()?);
    lines.push(psnr_check()?);
    let mut failed = 0;
    for l in &lines {
        let o = &l.outcome;
        let verdict = if o.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!o.passed());
        println!("{verdict} {:<10} {:<44} worst {:.3e} (tol {:.0e}, n={})", l.group, o.name, o.worst, o.tol, o.seeds);
    }
    println!("selfcheck: {}/{} passed in {:.1}s", lines.len() - failed, lines.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} self-check(s) failed")));
    }
    Ok(())
}
