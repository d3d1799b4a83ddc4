use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::VolumeField;

/// Flat circular patch of the ventricle surface. Positions are in mm relative
/// to the ellipsoid center, ordered `(x, y, z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 3],
    pub radius: f64,
    /// Unit direction in which fluid crosses the disk: inward for the inlet,
    /// outward for the outlet.
    pub normal: [f64; 3],
}

/// Ellipsoidal left ventricle with a mitral inlet on the basal cap and an
/// apical cannula outlet. The long axis is `z`, the base at `+z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VentricleGeometry {
    pub id: String,
    pub diameter_mm: f64,
    pub long_axis_mm: f64,
    pub inlet: Disk,
    pub outlet: Disk,
}

pub const INLET_RADIUS_FRACTION: f64 = 0.2;
pub const OUTLET_RADIUS_FRACTION: f64 = 0.18;

impl VentricleGeometry {
    /// Builds the standard layout: inlet of radius `0.2 D` centred at polar
    /// angle `inlet_angle_deg` from the base toward `+x`, outlet of radius
    /// `0.18 D` at the apex.
    pub fn new(id: impl Into<String>, diameter_mm: f64, long_axis_mm: f64, inlet_angle_deg: f64) -> Result<Self, FlowError> {
        if !(diameter_mm > 0.0 && long_axis_mm > 0.0) || !diameter_mm.is_finite() || !long_axis_mm.is_finite() {
            return Err(FlowError::InvalidGeometry(format!(
                "diameter {diameter_mm} mm and long axis {long_axis_mm} mm must be positive"
            )));
        }
        let (a, c) = (diameter_mm / 2.0, long_axis_mm / 2.0);
        let th = inlet_angle_deg.to_radians();
        let dir = [th.sin(), 0.0, th.cos()];
        let t = 1.0 / ((dir[0] / a).powi(2) + (dir[2] / c).powi(2)).sqrt();
        let center = [t * dir[0], 0.0, t * dir[2]];
        let grad = [center[0] / (a * a), 0.0, center[2] / (c * c)];
        let norm = (grad[0] * grad[0] + grad[2] * grad[2]).sqrt();
        let inlet = Disk {
            center,
            radius: INLET_RADIUS_FRACTION * diameter_mm,
            normal: [-grad[0] / norm, 0.0, -grad[2] / norm],
        };
        let outlet = Disk {
            center: [0.0, 0.0, -c],
            radius: OUTLET_RADIUS_FRACTION * diameter_mm,
            normal: [0.0, 0.0, -1.0],
        };
        let g = VentricleGeometry { id: id.into(), diameter_mm, long_axis_mm, inlet, outlet };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.diameter_mm > 0.0 && self.long_axis_mm > 0.0) {
            return Err(FlowError::InvalidGeometry(format!(
                "{}: diameter and long axis must be positive",
                self.id
            )));
        }
        let gap = dist(self.inlet.center, self.outlet.center);
        if gap <= self.inlet.radius + self.outlet.radius {
            return Err(FlowError::InvalidGeometry(format!("{}: inlet and outlet disks overlap", self.id)));
        }
        Ok(())
    }

    /// True when the point (mm, relative to the center) is inside or on the
    /// ellipsoid.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (a, c) = (self.diameter_mm / 2.0, self.long_axis_mm / 2.0);
        (p[0] * p[0] + p[1] * p[1]) / (a * a) + p[2] * p[2] / (c * c) <= 1.0
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Voxel grid extents `[nz, ny, nx]` and isotropic spacing in metres. Voxel
/// centers are placed symmetrically about the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: f64,
}

impl GridSpec {
    /// Spacing chosen so the longest ellipsoid axis spans `n - 4` voxels,
    /// leaving a two-voxel margin on each side.
    pub fn fit(geom: &VentricleGeometry, dims: [usize; 3]) -> Self {
        let n = *dims.iter().min().expect("three dims");
        let extent_m = geom.diameter_mm.max(geom.long_axis_mm) * 1e-3;
        GridSpec { dims, spacing: extent_m / (n.saturating_sub(4).max(1)) as f64 }
    }

    /// Position in mm of voxel `(z, y, x)`, ordered `(x, y, z)`.
    pub fn position_mm(&self, z: usize, y: usize, x: usize) -> [f64; 3] {
        let h = self.spacing * 1e3;
        let c = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * h;
        [c(x, self.dims[2]), c(y, self.dims[1]), c(z, self.dims[0])]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CellClass {
    Outside = 0,
    /// Fluid voxel with all six neighbours in the fluid.
    Interior = 1,
    /// No-slip boundary voxel.
    Wall = 2,
    /// Boundary voxel with prescribed inflow.
    Inlet = 3,
    /// Boundary voxel on the pressure outlet; velocity is left free.
    Outlet = 4,
}

impl CellClass {
    pub fn is_fluid(self) -> bool {
        self != CellClass::Outside
    }

    /// Velocity is an unknown of the solver here.
    pub fn is_free(self) -> bool {
        matches!(self, CellClass::Interior | CellClass::Outlet)
    }
}

/// Six-neighbour offsets ordered `-x, +x, -y, +y, -z, +z`, so that velocity
/// component `c` pairs with neighbours `2c` and `2c + 1`.
pub(crate) fn neighbour(dims: [usize; 3], i: usize, k: usize) -> Option<usize> {
    let [nz, ny, nx] = dims;
    let x = i % nx;
    let y = (i / nx) % ny;
    let z = i / (nx * ny);
    match k {
        0 => (x > 0).then(|| i - 1),
        1 => (x + 1 < nx).then(|| i + 1),
        2 => (y > 0).then(|| i - nx),
        3 => (y + 1 < ny).then(|| i + nx),
        4 => (z > 0).then(|| i - nx * ny),
        _ => (z + 1 < nz).then(|| i + nx * ny),
    }
}

/// Cell classification of a voxel grid plus the inflow direction; everything
/// the solver needs to know about the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDomain {
    pub grid: GridSpec,
    pub classes: Vec<CellClass>,
    /// Unit inflow direction `(x, y, z)` applied on inlet voxels.
    pub inlet_direction: [f64; 3],
}

impl FlowDomain {
    pub fn new(grid: GridSpec, classes: Vec<CellClass>, inlet_direction: [f64; 3]) -> Result<Self, FlowError> {
        let n: usize = grid.dims.iter().product();
        if classes.len() != n {
            return Err(FlowError::InvalidConfig(format!(
                "{} cell classes for a grid of {n} voxels",
                classes.len()
            )));
        }
        if !(grid.spacing > 0.0) {
            return Err(FlowError::InvalidConfig(format!("spacing {} must be positive", grid.spacing)));
        }
        Ok(FlowDomain { grid, classes, inlet_direction })
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn mask(&self) -> VolumeField {
        let data = self.classes.iter().map(|c| if c.is_fluid() { 1.0 } else { 0.0 }).collect();
        VolumeField::new(self.grid.dims, self.grid.spacing, data).expect("classes sized to grid")
    }

    /// Voxel indices holding `class`, ascending.
    pub fn voxels(&self, class: CellClass) -> Vec<usize> {
        (0..self.classes.len()).filter(|&i| self.classes[i] == class).collect()
    }
}

/// Rasterizes the ellipsoid and tags inlet, outlet and wall voxels.
///
/// A fluid voxel is on the boundary when one of its six neighbours is outside
/// the ellipsoid or the grid. Boundary voxels within the inlet (outlet) radius
/// of the disk center become inlet (outlet) voxels; other boundary voxels are
/// walls.
pub fn voxelize(geom: &VentricleGeometry, grid: GridSpec) -> Result<FlowDomain, FlowError> {
    geom.validate()?;
    let h_mm = grid.spacing * 1e3;
    for (name, axis, semi) in [
        ("x", 2, geom.diameter_mm / 2.0),
        ("y", 1, geom.diameter_mm / 2.0),
        ("z", 0, geom.long_axis_mm / 2.0),
    ] {
        let half = (grid.dims[axis] as f64 - 1.0) / 2.0 * h_mm;
        if semi >= half {
            return Err(FlowError::OutOfBounds(format!(
                "{}: semi-axis {semi:.2} mm along {name} reaches the grid edge at {half:.2} mm",
                geom.id
            )));
        }
    }
    for (name, r) in [("inlet", geom.inlet.radius), ("outlet", geom.outlet.radius)] {
        if r / h_mm < 2.0 {
            return Err(FlowError::Unresolved { disk: name, voxels: r / h_mm });
        }
    }

    let [nz, ny, nx] = grid.dims;
    let mut inside = vec![false; nz * ny * nx];
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                inside[i] = geom.contains(grid.position_mm(z, y, x));
                i += 1;
            }
        }
    }
    if !inside.iter().any(|&b| b) {
        return Err(FlowError::EmptyMask);
    }

    let mut classes = vec![CellClass::Outside; inside.len()];
    for i in 0..inside.len() {
        if !inside[i] {
            continue;
        }
        let boundary = (0..6).any(|k| neighbour(grid.dims, i, k).map_or(true, |j| !inside[j]));
        classes[i] = if !boundary {
            CellClass::Interior
        } else {
            let (z, y, x) = (i / (nx * ny), (i / nx) % ny, i % nx);
            let p = grid.position_mm(z, y, x);
            if dist(p, geom.inlet.center) <= geom.inlet.radius {
                CellClass::Inlet
            } else if dist(p, geom.outlet.center) <= geom.outlet.radius {
                CellClass::Outlet
            } else {
                CellClass::Wall
            }
        };
    }
    let domain = FlowDomain::new(grid, classes, geom.inlet.normal)?;
    for (name, class) in [("inlet", CellClass::Inlet), ("outlet", CellClass::Outlet)] {
        if domain.count(class) == 0 {
            return Err(FlowError::EmptyBoundary(name));
        }
    }
    Ok(domain)
}

/// Euclidean distance (metres) from every voxel center to the centroid of the
/// mask voxels, over the whole grid.
pub fn radial_distance(mask: &VolumeField) -> Result<VolumeField, FlowError> {
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for i in 0..mask.len() {
        if mask.data()[i] != 0.0 {
            let (z, y, x) = mask.coords(i);
            sum[0] += z as f64;
            sum[1] += y as f64;
            sum[2] += x as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(FlowError::EmptyMask);
    }
    let c = sum.map(|s| s / n as f64);
    let h = mask.spacing();
    Ok(VolumeField::from_fn(mask.dims(), h, |z, y, x| {
        let d = ((z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2)).sqrt();
        (d * h) as f32
    }))
}

/// [`radial_distance`] scaled so the grid maximum is exactly 1.
pub fn compute_rdf(mask: &VolumeField) -> Result<VolumeField, FlowError> {
    let raw = radial_distance(mask)?;
    let max = raw.max_abs();
    if max == 0.0 {
        // Single-voxel grid: the only voxel is the centroid.
        return Ok(raw);
    }
    Ok(raw.map(|v| v / max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inlet_sits_on_the_surface_with_inward_normal() {
        let g = VentricleGeometry::new("g", 60.0, 100.0, 20.0).unwrap();
        let (a, c) = (30.0, 50.0);
        let p = g.inlet.center;
        let level = (p[0] * p[0] + p[1] * p[1]) / (a * a) + p[2] * p[2] / (c * c);
        assert!((level - 1.0).abs() < 1e-12);
        // Inward: stepping along the normal goes inside.
        let q = [p[0] + g.inlet.normal[0], p[1], p[2] + g.inlet.normal[2]];
        assert!(g.contains(q));
        assert!(p[0] > 0.0 && p[2] > 0.0);
    }

    #[test]
    fn neighbour_order_matches_components() {
        let dims = [3, 4, 5];
        let i = (1 * 4 + 2) * 5 + 3;
        assert_eq!(neighbour(dims, i, 0), Some(i - 1));
        assert_eq!(neighbour(dims, i, 3), Some(i + 5));
        assert_eq!(neighbour(dims, i, 5), Some(i + 20));
        assert_eq!(neighbour(dims, 0, 4), None);
    }

    #[test]
    fn fitted_grid_keeps_a_margin() {
        let g = VentricleGeometry::new("g", 87.0, 126.0, 15.0).unwrap();
        let grid = GridSpec::fit(&g, [32; 3]);
        let d = voxelize(&g, grid).unwrap();
        assert!(d.count(CellClass::Inlet) > 0 && d.count(CellClass::Outlet) > 0);
        assert!(d.count(CellClass::Interior) > d.count(CellClass::Wall));
    }
}
