use thiserror::Error;

/// Dense scalar voxel grid: one velocity component, a distance field or a mask.
///
/// Voxel `(z, y, x)` lives at `data[(z * ny + y) * nx + x]`, with `dims =
/// [nz, ny, nx]`. The ventricle long axis is aligned with `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeField {
    dims: [usize; 3],
    /// Isotropic voxel edge length in metres.
    spacing: f64,
    data: Vec<f32>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("field dims {dims:?} hold {expected} voxels but {got} values were given")]
    Length { dims: [usize; 3], expected: usize, got: usize },
    #[error("field dims {0:?} must be positive")]
    EmptyDims([usize; 3]),
    #[error("{op}: field dims differ, {lhs:?} vs {rhs:?}")]
    Mismatch { op: &'static str, lhs: [usize; 3], rhs: [usize; 3] },
}

impl VolumeField {
    pub fn new(dims: [usize; 3], spacing: f64, data: Vec<f32>) -> Result<Self, FieldError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(FieldError::EmptyDims(dims));
        }
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(FieldError::Length { dims, expected, got: data.len() });
        }
        Ok(VolumeField { dims, spacing, data })
    }

    pub fn zeros(dims: [usize; 3], spacing: f64) -> Self {
        Self::filled(dims, spacing, 0.0)
    }

    pub fn filled(dims: [usize; 3], spacing: f64, value: f32) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "field dims must be positive: {dims:?}");
        VolumeField { dims, spacing, data: vec![value; dims.iter().product()] }
    }

    pub fn from_fn(dims: [usize; 3], spacing: f64, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        VolumeField { dims, spacing, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f32) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    /// Inverse of [`VolumeField::index`].
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.dims[2];
        let y = (i / self.dims[2]) % self.dims[1];
        let z = i / (self.dims[1] * self.dims[2]);
        (z, y, x)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Number of voxels with value exactly 1 (mask cardinality).
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> VolumeField {
        VolumeField { dims: self.dims, spacing: self.spacing, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Voxelwise combination of two fields with equal dims.
    pub fn zip_map(&self, other: &VolumeField, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<VolumeField, FieldError> {
        self.check_same(other, op)?;
        Ok(VolumeField {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same(&self, other: &VolumeField, op: &'static str) -> Result<(), FieldError> {
        if self.dims != other.dims {
            return Err(FieldError::Mismatch { op, lhs: self.dims, rhs: other.dims });
        }
        Ok(())
    }

    /// 2-D slice at index `at` along `axis` (0 = z, 1 = y, 2 = x), row-major
    /// over the two remaining axes in their natural order.
    pub fn slice(&self, axis: usize, at: usize) -> (usize, usize, Vec<f32>) {
        let [nz, ny, nx] = self.dims;
        match axis {
            0 => (ny, nx, (0..ny).flat_map(|y| (0..nx).map(move |x| (y, x))).map(|(y, x)| self.get(at, y, x)).collect()),
            1 => (nz, nx, (0..nz).flat_map(|z| (0..nx).map(move |x| (z, x))).map(|(z, x)| self.get(z, at, x)).collect()),
            _ => (nz, ny, (0..nz).flat_map(|z| (0..ny).map(move |y| (z, y))).map(|(z, y)| self.get(z, y, at)).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let f = VolumeField::zeros([3, 4, 5], 1.0);
        for i in 0..f.len() {
            let (z, y, x) = f.coords(i);
            assert_eq!(f.index(z, y, x), i);
        }
    }

    #[test]
    fn rejects_bad_length() {
        assert!(VolumeField::new([2, 2, 2], 1.0, vec![0.0; 7]).is_err());
    }

    #[test]
    fn slices_pick_the_right_plane() {
        let f = VolumeField::from_fn([2, 3, 4], 1.0, |z, y, x| (z * 100 + y * 10 + x) as f32);
        let (r, c, v) = f.slice(2, 1);
        assert_eq!((r, c), (2, 3));
        assert_eq!(v, vec![1.0, 11.0, 21.0, 101.0, 111.0, 121.0]);
    }
}
