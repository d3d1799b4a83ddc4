use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{voxelize, GridSpec, VentricleGeometry};
use super::solver::{simulate_domain, FlowSnapshot, SolverConfig};
use super::FlowError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub seed: u64,
    pub n_geometries: usize,
    /// Total number of (geometry, inlet) runs, spread as evenly as possible.
    pub total_runs: usize,
    /// Explicit inlet count per geometry; overrides `total_runs` when set.
    pub inlets_per_geometry: Option<Vec<usize>>,
    /// m/s
    pub v_in_range: (f64, f64),
    pub diameter_mm: (f64, f64),
    pub long_axis_mm: (f64, f64),
    pub inlet_angle_deg: (f64, f64),
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            seed: 0,
            n_geometries: 8,
            total_runs: 47,
            inlets_per_geometry: None,
            v_in_range: (0.1, 0.5),
            diameter_mm: (51.0, 87.0),
            long_axis_mm: (74.0, 126.0),
            inlet_angle_deg: (15.0, 30.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub geometry_id: String,
    pub v_in: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationPlan {
    pub geometries: Vec<VentricleGeometry>,
    pub runs: Vec<RunSpec>,
}

impl PopulationConfig {
    pub fn inlet_counts(&self) -> Result<Vec<usize>, FlowError> {
        if let Some(v) = &self.inlets_per_geometry {
            if v.len() != self.n_geometries {
                return Err(FlowError::InvalidConfig(format!(
                    "{} inlet counts for {} geometries",
                    v.len(),
                    self.n_geometries
                )));
            }
            return Ok(v.clone());
        }
        if self.n_geometries == 0 {
            return Err(FlowError::InvalidConfig("n_geometries must be at least 1".into()));
        }
        let base = self.total_runs / self.n_geometries;
        let extra = self.total_runs % self.n_geometries;
        Ok((0..self.n_geometries).map(|g| base + usize::from(g < extra)).collect())
    }
}

/// Evenly spaced inflow speeds over `range`; a single inlet gets the midpoint.
pub fn inlet_speeds(range: (f64, f64), k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![(range.0 + range.1) / 2.0],
        _ => (0..k).map(|i| range.0 + (range.1 - range.0) * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Samples geometries and assigns inflow speeds. Deterministic in the seed.
pub fn plan_population(cfg: &PopulationConfig) -> Result<PopulationPlan, FlowError> {
    let counts = cfg.inlet_counts()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut geometries = Vec::with_capacity(cfg.n_geometries);
    let mut runs = Vec::new();
    for (g, &k) in counts.iter().enumerate() {
        let d = rng.gen_range(cfg.diameter_mm.0..=cfg.diameter_mm.1);
        let l = rng.gen_range(cfg.long_axis_mm.0..=cfg.long_axis_mm.1);
        let angle = rng.gen_range(cfg.inlet_angle_deg.0..=cfg.inlet_angle_deg.1);
        let geom = VentricleGeometry::new(format!("geo{g:02}"), d, l, angle)?;
        for (r, v) in inlet_speeds(cfg.v_in_range, k).into_iter().enumerate() {
            runs.push(RunSpec { run_id: format!("{}_r{r}", geom.id), geometry_id: geom.id.clone(), v_in: v });
        }
        geometries.push(geom);
    }
    Ok(PopulationPlan { geometries, runs })
}

pub struct RunOutput {
    pub spec: RunSpec,
    pub snapshots: Vec<FlowSnapshot>,
}

/// Simulates a single geometry at one inflow speed on the fitted grid.
pub fn simulate(geom: &VentricleGeometry, cfg: &SolverConfig, v_in: f64) -> Result<Vec<FlowSnapshot>, FlowError> {
    let domain = voxelize(geom, GridSpec::fit(geom, cfg.grid_dims))?;
    simulate_domain(domain, cfg, v_in, &geom.id)
}

/// Plans and simulates every run. Runs are independent and execute in
/// parallel; output order follows the plan.
pub fn generate_population(pop: &PopulationConfig, solver: &SolverConfig) -> Result<(PopulationPlan, Vec<RunOutput>), FlowError> {
    solver.validate()?;
    let plan = plan_population(pop)?;
    let outputs = plan
        .runs
        .par_iter()
        .map(|spec| {
            let geom = plan.geometries.iter().find(|g| g.id == spec.geometry_id).expect("planned geometry");
            let snapshots = simulate(geom, solver, spec.v_in)?;
            Ok(RunOutput { spec: spec.clone(), snapshots })
        })
        .collect::<Result<Vec<_>, FlowError>>()?;
    Ok((plan, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_uniform_split() {
        let c = PopulationConfig::default().inlet_counts().unwrap();
        assert_eq!(c.iter().sum::<usize>(), 47);
        assert_eq!(c, vec![6, 6, 6, 6, 6, 6, 6, 5]);
    }

    #[test]
    fn speeds_span_the_range() {
        let v = inlet_speeds((0.1, 0.5), 5);
        assert_eq!(v.first(), Some(&0.1));
        assert_eq!(v.last(), Some(&0.5));
        assert_eq!(inlet_speeds((0.1, 0.5), 1), vec![0.3]);
    }
}
