//! Chorin projection on a staggered (marker-and-cell) grid.
//!
//! Each step advects face velocities with first-order upwinding, diffuses
//! explicitly, resets the boundary faces and then projects onto the
//! discretely divergence-free fields.

use log::warn;
use serde::{Deserialize, Serialize};

use super::geometry::{neighbour, CellClass, FlowDomain};
use super::FlowError;
use crate::VolumeField;

/// Which time steps are emitted as snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotPolicy {
    Final,
    /// Every n-th step, always including the final one.
    Every(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// kg/m³
    pub density: f64,
    /// Pa·s
    pub viscosity: f64,
    /// s
    pub dt: f64,
    pub steps: usize,
    /// Restarted conjugate-gradient cycles allowed per pressure solve.
    pub inner_iterations: usize,
    /// CG iterations per cycle.
    pub cg_iterations_per_cycle: usize,
    /// Relative residual `|b - A p| / |b|` accepted as converged.
    pub convergence_tol: f64,
    /// Grid extents `[nz, ny, nx]`; spacing is fitted per geometry.
    pub grid_dims: [usize; 3],
    /// Disable to obtain the linear (Stokes) regime.
    pub advection: bool,
    pub snapshots: SnapshotPolicy,
}

impl SolverConfig {
    /// Full-resolution settings: 128³ grid, 3000 steps of 1 ms.
    pub fn paper() -> Self {
        SolverConfig {
            density: 1060.0,
            viscosity: 0.0035,
            dt: 1e-3,
            steps: 3000,
            inner_iterations: 20,
            cg_iterations_per_cycle: 50,
            convergence_tol: 1e-6,
            grid_dims: [128; 3],
            advection: true,
            snapshots: SnapshotPolicy::Final,
        }
    }

    /// Desk-scale settings: 32³ grid and a shorter run.
    pub fn desk() -> Self {
        SolverConfig { steps: 300, grid_dims: [32; 3], ..Self::paper() }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: String| Err(FlowError::InvalidConfig(m));
        if !(self.density > 0.0) || !(self.viscosity > 0.0) || !(self.dt > 0.0) {
            return bad(format!(
                "density {}, viscosity {} and dt {} must be positive",
                self.density, self.viscosity, self.dt
            ));
        }
        if !(self.convergence_tol > 0.0) {
            return bad(format!("convergence_tol {} must be positive", self.convergence_tol));
        }
        if self.inner_iterations == 0 || self.cg_iterations_per_cycle == 0 {
            return bad("inner_iterations and cg_iterations_per_cycle must be at least 1".into());
        }
        if self.grid_dims.iter().any(|&d| d < 5) {
            return bad(format!("grid {:?} is too small", self.grid_dims));
        }
        if let SnapshotPolicy::Every(0) = self.snapshots {
            return bad("snapshot stride must be at least 1".into());
        }
        Ok(())
    }

    pub fn kinematic_viscosity(&self) -> f64 {
        self.viscosity / self.density
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSnapshot {
    /// Velocity components in m/s.
    pub vx: VolumeField,
    pub vy: VolumeField,
    pub vz: VolumeField,
    pub mask: VolumeField,
    pub v_in: f64,
    pub geometry_id: String,
    pub time_index: usize,
    /// False when the pressure solve of this step hit its iteration cap.
    pub converged: bool,
}

impl FlowSnapshot {
    pub fn components(&self) -> [&VolumeField; 3] {
        [&self.vx, &self.vy, &self.vz]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub converged: bool,
    pub cg_iterations: usize,
    pub relative_residual: f64,
    pub substeps: usize,
}

const NONE: u32 = u32::MAX;

/// Role of a cell face in the staggered layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Face {
    /// Touches a wall or the exterior; normal velocity zero.
    Closed,
    /// Between an inlet cell and interior or inlet fluid; prescribed.
    Inflow,
    /// Unknown. `outlet` marks faces bordering an outlet cell, where
    /// transport uses a zero-gradient condition.
    Free { outlet: bool },
}

/// Time stepper for one domain and inflow speed.
///
/// Component `a` of cell `i` is the normal velocity on the face shared with
/// the `+a` neighbour. The divergence of cell `i` is then the compact
/// difference `Σ_a (u_a(i) - u_a(i - e_a)) / h`.
#[derive(Clone, Debug)]
pub struct FlowSolver {
    domain: FlowDomain,
    cfg: SolverConfig,
    v_in: f64,
    u: [Vec<f64>; 3],
    nbr: Vec<[u32; 6]>,
    faces: [Vec<Face>; 3],
    free: [Vec<u32>; 3],
    rows: Vec<u32>,
    row_of: Vec<u32>,
    /// Jacobi preconditioner: free faces per row.
    diag: Vec<f64>,
    /// Pressure-like multiplier per row, reused as the next initial guess.
    p: Vec<f64>,
    step_index: usize,
}

fn classify(a: CellClass, b: CellClass) -> Face {
    use CellClass::*;
    match (a, b) {
        (Interior, Interior) => Face::Free { outlet: false },
        (Interior, Outlet) | (Outlet, Interior) => Face::Free { outlet: true },
        (Inlet, Interior | Inlet) | (Interior, Inlet) => Face::Inflow,
        _ => Face::Closed,
    }
}

impl FlowSolver {
    pub fn new(domain: FlowDomain, cfg: SolverConfig, v_in: f64) -> Result<Self, FlowError> {
        cfg.validate()?;
        if !v_in.is_finite() {
            return Err(FlowError::InvalidConfig(format!("inlet velocity {v_in} is not finite")));
        }
        let dims = domain.grid.dims;
        let n = domain.classes.len();
        let nbr: Vec<[u32; 6]> = (0..n)
            .map(|i| {
                let mut a = [NONE; 6];
                for (k, slot) in a.iter_mut().enumerate() {
                    if let Some(j) = neighbour(dims, i, k) {
                        *slot = j as u32;
                    }
                }
                a
            })
            .collect();
        let cls = &domain.classes;
        let faces: [Vec<Face>; 3] = std::array::from_fn(|a| {
            (0..n)
                .map(|i| match nbr[i][2 * a + 1] {
                    NONE => Face::Closed,
                    j => classify(cls[i], cls[j as usize]),
                })
                .collect()
        });
        let free: [Vec<u32>; 3] = std::array::from_fn(|a| {
            (0..n).filter(|&i| matches!(faces[a][i], Face::Free { .. })).map(|i| i as u32).collect()
        });
        let mut rows = Vec::new();
        let mut diag = Vec::new();
        let mut row_of = vec![NONE; n];
        for i in 0..n {
            if cls[i] != CellClass::Interior {
                continue;
            }
            let mut count = 0;
            for a in 0..3 {
                count += matches!(faces[a][i], Face::Free { .. }) as usize;
                let lo = nbr[i][2 * a];
                count += (lo != NONE && matches!(faces[a][lo as usize], Face::Free { .. })) as usize;
            }
            if count > 0 {
                row_of[i] = rows.len() as u32;
                rows.push(i as u32);
                diag.push(count as f64);
            }
        }
        let p = vec![0.0; rows.len()];
        let u = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut s = FlowSolver { domain, cfg, v_in, u, nbr, faces, free, rows, row_of, diag, p, step_index: 0 };
        s.apply_boundary();
        Ok(s)
    }

    pub fn domain(&self) -> &FlowDomain {
        &self.domain
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn v_in(&self) -> f64 {
        self.v_in
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Face velocities per component, indexed by the cell on the low side.
    pub fn velocity(&self) -> &[Vec<f64>; 3] {
        &self.u
    }

    /// Replaces the free face velocities and reapplies the boundary values.
    /// The field is not projected; call [`FlowSolver::project`] for that.
    pub fn set_velocity(&mut self, u: [Vec<f64>; 3]) -> Result<(), FlowError> {
        let n = self.domain.classes.len();
        if u.iter().any(|c| c.len() != n) {
            return Err(FlowError::InvalidConfig(format!("velocity components must have {n} entries")));
        }
        self.u = u;
        self.apply_boundary();
        Ok(())
    }

    /// `½ ρ Σ u² h³` over all faces, in joules.
    pub fn kinetic_energy(&self) -> f64 {
        let h = self.domain.grid.spacing;
        let e: f64 = self.u.iter().flat_map(|c| c.iter()).map(|v| v * v).sum();
        0.5 * self.cfg.density * e * h * h * h
    }

    fn apply_boundary(&mut self) {
        let dir = self.domain.inlet_direction;
        for a in 0..3 {
            for (v, f) in self.u[a].iter_mut().zip(&self.faces[a]) {
                match f {
                    Face::Closed => *v = 0.0,
                    Face::Inflow => *v = self.v_in * dir[a],
                    Face::Free { .. } => {}
                }
            }
        }
    }

    /// Value of the same-component face next to face `(a, i)` across
    /// neighbour slot `k`. Closed neighbours are zero (no slip), except next
    /// to the outlet where the gradient is taken as zero.
    #[inline]
    fn transport_value(&self, a: usize, i: usize, k: usize) -> f64 {
        let j = self.nbr[i][k];
        if j != NONE && self.faces[a][j as usize] != Face::Closed {
            self.u[a][j as usize]
        } else if self.faces[a][i] == (Face::Free { outlet: true }) {
            self.u[a][i]
        } else {
            0.0
        }
    }

    #[inline]
    fn at(&self, b: usize, j: u32) -> f64 {
        if j == NONE { 0.0 } else { self.u[b][j as usize] }
    }

    fn transport(&mut self) -> usize {
        let h = self.domain.grid.spacing;
        let nu = self.cfg.kinematic_viscosity();
        let dt = self.cfg.dt;
        let speed: f64 = if self.cfg.advection {
            (0..3).map(|a| self.free[a].iter().map(|&i| self.u[a][i as usize].abs()).fold(0.0, f64::max)).sum()
        } else {
            0.0
        };
        let cfl = speed * dt / h;
        let diff = nu * dt / (h * h);
        let n = ((cfl / 0.5).ceil() as usize).max((diff / 0.15).ceil() as usize).max(1);
        let tau = dt / n as f64;
        let mut next: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; self.free[a].len()]);
        for _ in 0..n {
            for a in 0..3 {
                for (slot, &i) in next[a].iter_mut().zip(&self.free[a]) {
                    let i = i as usize;
                    let ua = self.u[a][i];
                    let up = self.nbr[i][2 * a + 1];
                    let mut lap = 0.0;
                    let mut adv = 0.0;
                    for b in 0..3 {
                        let lo = self.transport_value(a, i, 2 * b);
                        let hi = self.transport_value(a, i, 2 * b + 1);
                        lap += lo + hi - 2.0 * ua;
                        if self.cfg.advection {
                            let vb = if b == a {
                                ua
                            } else {
                                let below = |j: u32| if j == NONE { NONE } else { self.nbr[j as usize][2 * b] };
                                0.25 * (self.u[b][i] + self.at(b, up) + self.at(b, below(i as u32)) + self.at(b, below(up)))
                            };
                            adv += if vb > 0.0 { vb * (ua - lo) } else { vb * (hi - ua) };
                        }
                    }
                    *slot = ua + tau * (nu * lap / (h * h) - adv / h);
                }
            }
            for a in 0..3 {
                for (&v, &i) in next[a].iter().zip(&self.free[a]) {
                    self.u[a][i as usize] = v;
                }
            }
        }
        n
    }

    /// `Σ_a u_a(i) - u_a(i - e_a)`: divergence of cell `i` times `h`.
    #[inline]
    fn scaled_divergence(&self, u: &[Vec<f64>; 3], i: usize) -> f64 {
        let nb = self.nbr[i];
        let mut d = 0.0;
        for a in 0..3 {
            let lo = nb[2 * a];
            d += u[a][i] - if lo == NONE { 0.0 } else { u[a][lo as usize] };
        }
        d
    }

    /// `g = P Dᵀ p` on free faces; other faces stay untouched (zero).
    fn gradient(&self, p: &[f64], g: &mut [Vec<f64>; 3]) {
        let at = |i: u32| {
            let r = self.row_of[i as usize];
            if r == NONE { 0.0 } else { p[r as usize] }
        };
        for a in 0..3 {
            for &i in &self.free[a] {
                let j = self.nbr[i as usize][2 * a + 1];
                g[a][i as usize] = at(i) - at(j);
            }
        }
    }

    fn apply(&self, p: &[f64], g: &mut [Vec<f64>; 3], out: &mut [f64]) {
        self.gradient(p, g);
        for (r, &i) in self.rows.iter().enumerate() {
            out[r] = self.scaled_divergence(g, i as usize);
        }
    }

    /// Projects the current field with the least-norm correction
    /// `u = u* + P Dᵀ p`, `D P Dᵀ p = -D u*`. The operator is the compact
    /// 7-point Laplacian: Neumann at closed and inflow faces, `p = 0` in
    /// outlet cells. Solved by Jacobi-preconditioned restarted CG.
    pub fn project(&mut self) -> StepReport {
        let m = self.rows.len();
        let n = self.domain.classes.len();
        let b: Vec<f64> = self.rows.iter().map(|&i| -self.scaled_divergence(&self.u, i as usize)).collect();
        let bnorm = norm(&b);
        let mut report = StepReport { converged: true, cg_iterations: 0, relative_residual: 0.0, substeps: 0 };
        if bnorm == 0.0 {
            self.p.iter_mut().for_each(|v| *v = 0.0);
            return report;
        }
        let target = self.cfg.convergence_tol * bnorm;
        let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut p = std::mem::take(&mut self.p);
        let mut r = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut ap = vec![0.0; m];
        let mut dir = vec![0.0; m];
        'cycles: for _ in 0..self.cfg.inner_iterations {
            self.apply(&p, &mut g, &mut ap);
            for k in 0..m {
                r[k] = b[k] - ap[k];
                z[k] = r[k] / self.diag[k];
            }
            if norm(&r) <= target {
                break;
            }
            let mut rz = dot(&r, &z);
            dir.copy_from_slice(&z);
            for _ in 0..self.cfg.cg_iterations_per_cycle {
                self.apply(&dir, &mut g, &mut ap);
                let dad = dot(&dir, &ap);
                if !(dad > 0.0) {
                    break;
                }
                let alpha = rz / dad;
                for k in 0..m {
                    p[k] += alpha * dir[k];
                    r[k] -= alpha * ap[k];
                    z[k] = r[k] / self.diag[k];
                }
                report.cg_iterations += 1;
                if norm(&r) <= target {
                    break 'cycles;
                }
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for k in 0..m {
                    dir[k] = z[k] + beta * dir[k];
                }
            }
        }
        // The recursive residual drifts; report the true one.
        self.apply(&p, &mut g, &mut ap);
        let true_res = b.iter().zip(&ap).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        report.relative_residual = true_res / bnorm;
        report.converged = report.relative_residual <= self.cfg.convergence_tol;
        self.gradient(&p, &mut g);
        for a in 0..3 {
            for &i in &self.free[a] {
                self.u[a][i as usize] += g[a][i as usize];
            }
        }
        self.p = p;
        report
    }

    /// Advances one time step.
    pub fn step(&mut self) -> StepReport {
        let substeps = self.transport();
        self.apply_boundary();
        let mut report = self.project();
        report.substeps = substeps;
        self.step_index += 1;
        report
    }

    /// Largest `|∇·u|` (1/s) over the interior cells carrying a constraint.
    pub fn max_divergence(&self) -> f64 {
        let h = self.domain.grid.spacing;
        self.rows.iter().map(|&i| self.scaled_divergence(&self.u, i as usize).abs() / h).fold(0.0, f64::max)
    }

    /// Net volume flux (m³/s) through the plane of `+axis` faces whose low
    /// side has index `k` along that axis.
    pub fn plane_flux(&self, axis: usize, k: usize) -> f64 {
        let [nz, ny, nx] = self.domain.grid.dims;
        let h = self.domain.grid.spacing;
        let mut q = 0.0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if [x, y, z][axis] == k {
                        q += self.u[axis][(z * ny + y) * nx + x];
                    }
                }
            }
        }
        q * h * h
    }

    /// Face velocities as voxel fields: component `a` of voxel `i` is the
    /// velocity on its `+a` face.
    pub fn snapshot(&self, geometry_id: &str, converged: bool) -> FlowSnapshot {
        let grid = self.domain.grid;
        let field = |c: usize| {
            VolumeField::new(grid.dims, grid.spacing, self.u[c].iter().map(|&v| v as f32).collect())
                .expect("velocity sized to grid")
        };
        FlowSnapshot {
            vx: field(0),
            vy: field(1),
            vz: field(2),
            mask: self.domain.mask(),
            v_in: self.v_in,
            geometry_id: geometry_id.to_string(),
            time_index: self.step_index,
            converged,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Runs `cfg.steps` steps on `domain` and returns the snapshots selected by
/// the policy. Steps whose pressure solve did not converge are logged and
/// their snapshots flagged.
pub fn simulate_domain(domain: FlowDomain, cfg: &SolverConfig, v_in: f64, geometry_id: &str) -> Result<Vec<FlowSnapshot>, FlowError> {
    let mut solver = FlowSolver::new(domain, cfg.clone(), v_in)?;
    let mut out = Vec::new();
    let mut converged = true;
    for s in 1..=cfg.steps {
        let rep = solver.step();
        if !rep.converged {
            warn!(
                "{geometry_id} v_in={v_in}: pressure solve stopped at relative residual {:.3e} on step {s}",
                rep.relative_residual
            );
        }
        converged = rep.converged;
        let emit = match cfg.snapshots {
            SnapshotPolicy::Final => s == cfg.steps,
            SnapshotPolicy::Every(k) => s % k == 0 || s == cfg.steps,
        };
        if emit {
            out.push(solver.snapshot(geometry_id, converged));
        }
    }
    if cfg.steps == 0 {
        out.push(solver.snapshot(geometry_id, converged));
    }
    Ok(out)
}
