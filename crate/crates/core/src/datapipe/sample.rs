use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::tensorgrad::Tensor;
use crate::VolumeField;

/// Inflow speed mapped to 1 after normalization (top of the inlet range).
pub const V_IN_SCALE: f64 = 0.5;
pub const SPARSE_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
    Z,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::X, Component::Y, Component::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::X => "x",
            Component::Y => "y",
            Component::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "x" | "vx" => Some(Component::X),
            "y" | "vy" => Some(Component::Y),
            "z" | "vz" => Some(Component::Z),
            _ => None,
        }
    }
}

/// Constants mapping physical velocities to network units and back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Largest velocity magnitude over the training geometries, m/s.
    pub velocity_scale: f64,
    pub v_in_scale: f64,
}

impl Normalization {
    pub fn new(velocity_scale: f64) -> Result<Self, DataError> {
        if !(velocity_scale > 0.0) || !velocity_scale.is_finite() {
            return Err(DataError::Invalid(format!(
                "velocity scale {velocity_scale} must be positive and finite; the training set may be all zero"
            )));
        }
        Ok(Normalization { velocity_scale, v_in_scale: V_IN_SCALE })
    }

    /// Scale from the peak velocity magnitude over `fields`, each a
    /// `[vx, vy, vz]` triple.
    pub fn fit<'a>(fields: impl IntoIterator<Item = [&'a VolumeField; 3]>) -> Result<Self, DataError> {
        let mut peak = 0.0f64;
        for [vx, vy, vz] in fields {
            for i in 0..vx.len() {
                let (a, b, c) = (vx.data()[i] as f64, vy.data()[i] as f64, vz.data()[i] as f64);
                let m = (a * a + b * b + c * c).sqrt();
                if !m.is_finite() {
                    return Err(DataError::Invalid("velocity field contains non-finite values".into()));
                }
                peak = peak.max(m);
            }
        }
        Self::new(peak)
    }

    pub fn normalize(&self, v: &VolumeField) -> VolumeField {
        let s = self.velocity_scale;
        v.map(|x| (x as f64 / s) as f32)
    }

    pub fn denormalize(&self, v: &VolumeField) -> VolumeField {
        let s = self.velocity_scale;
        v.map(|x| (x as f64 * s) as f32)
    }

    pub fn normalize_v_in(&self, v_in: f64) -> f64 {
        v_in / self.v_in_scale
    }

    pub fn denormalize_v_in(&self, v: f64) -> f64 {
        v * self.v_in_scale
    }
}

/// Number of voxels retained out of `n_in` at `fraction`, i.e.
/// `floor(fraction * n_in)`. The product is nudged up by a relative 1e-12 so
/// that exact multiples survive binary rounding of the fraction.
pub fn sparse_count(n_in: usize, fraction: f64) -> usize {
    (fraction * n_in as f64 * (1.0 + 1e-12)).floor() as usize
}

/// Selects `floor(fraction * N_in)` in-mask voxels uniformly without
/// replacement.
pub fn make_sparse_mask(mask: &VolumeField, fraction: f64, seed: u64) -> Result<VolumeField, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Invalid(format!("sparse fraction {fraction} must lie in (0, 1)")));
    }
    let inside: Vec<usize> = (0..mask.len()).filter(|&i| mask.data()[i] != 0.0).collect();
    let k = sparse_count(inside.len(), fraction);
    if k == 0 {
        return Err(DataError::Invalid(format!(
            "fraction {fraction} of {} ventricle voxels keeps none",
            inside.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, inside.len(), k);
    let mut out = VolumeField::zeros(mask.dims(), mask.spacing());
    for p in picks.iter() {
        out.data_mut()[inside[p]] = 1.0;
    }
    Ok(out)
}

/// One run in network units.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Normalized `vx, vy, vz`.
    pub velocity: [VolumeField; 3],
    pub rdf: Option<VolumeField>,
    pub mask: VolumeField,
    pub sparse_mask: VolumeField,
    /// Normalized inflow speed.
    pub v_in: f64,
    pub geometry_id: String,
    pub run_id: String,
}

impl Sample {
    pub fn dims(&self) -> [usize; 3] {
        self.mask.dims()
    }

    /// Sparse input channel: the component on the sparse support, zero
    /// elsewhere.
    pub fn sparse_component(&self, d: Component) -> VolumeField {
        self.velocity[d.index()]
            .zip_map(&self.sparse_mask, "sparse_component", |v, m| if m != 0.0 { v } else { 0.0 })
            .expect("sample fields share dims")
    }
}

/// Which channels enter the network. The sparse channel is always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputConfig {
    pub rdf: bool,
}

impl InputConfig {
    pub fn channels(&self) -> usize {
        1 + usize::from(self.rdf)
    }
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig { rdf: true }
    }
}

/// Builds the network input `[C, D, H, W]` (sparse component, then RDF when
/// enabled) and the dense target `[1, D, H, W]`.
pub fn assemble_input(sample: &Sample, d: Component, cfg: InputConfig) -> Result<(Tensor<f32>, Tensor<f32>), DataError> {
    let [nd, nh, nw] = sample.dims();
    let mut data = sample.sparse_component(d).into_data();
    if cfg.rdf {
        let rdf = sample
            .rdf
            .as_ref()
            .ok_or_else(|| DataError::Invalid(format!("{}: RDF channel requested but missing", sample.run_id)))?;
        sample.mask.check_same(rdf, "assemble_input")?;
        data.extend_from_slice(rdf.data());
    }
    let input = Tensor::new(&[cfg.channels(), nd, nh, nw], data)?;
    let target = Tensor::new(&[1, nd, nh, nw], sample.velocity[d.index()].data().to_vec())?;
    Ok((input, target))
}

/// Trilinear resampling onto `dims` with corner-aligned grids: the first and
/// last voxel centers of both grids coincide, so affine fields are
/// reproduced exactly up to rounding.
pub fn resample_trilinear(field: &VolumeField, dims: [usize; 3]) -> Result<VolumeField, DataError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(DataError::Invalid(format!("target dims {dims:?} must be positive")));
    }
    let src = field.dims();
    let scale = |a: usize| if dims[a] > 1 { (src[a] as f64 - 1.0) / (dims[a] as f64 - 1.0) } else { 0.0 };
    let s = [scale(0), scale(1), scale(2)];
    let spacing = if dims[0] > 1 { field.spacing() * s[0] } else { field.spacing() };
    let split = |a: usize, i: usize| {
        let p = i as f64 * s[a];
        let lo = (p.floor() as usize).min(src[a] - 1);
        let hi = (lo + 1).min(src[a] - 1);
        (lo, hi, p - lo as f64)
    };
    Ok(VolumeField::from_fn(dims, spacing, |z, y, x| {
        let (z0, z1, tz) = split(0, z);
        let (y0, y1, ty) = split(1, y);
        let (x0, x1, tx) = split(2, x);
        let g = |z, y, x| field.get(z, y, x) as f64;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(g(z0, y0, x0), g(z0, y0, x1), tx);
        let c01 = lerp(g(z0, y1, x0), g(z0, y1, x1), tx);
        let c10 = lerp(g(z1, y0, x0), g(z1, y0, x1), tx);
        let c11 = lerp(g(z1, y1, x0), g(z1, y1, x1), tx);
        lerp(lerp(c00, c01, ty), lerp(c10, c11, ty), tz) as f32
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_count_is_floor() {
        for n in 0..5000 {
            assert_eq!(sparse_count(n, 0.05), n * 5 / 100, "n = {n}");
        }
    }

    #[test]
    fn component_names_round_trip() {
        for c in Component::ALL {
            assert_eq!(Component::parse(c.name()), Some(c));
        }
    }
}
