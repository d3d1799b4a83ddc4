use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::VolumeField;

/// Which voxels enter a metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Every voxel of the grid, like the training loss.
    #[default]
    Full,
    /// Only voxels inside the ventricle mask.
    InMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// PSNR peak value.
    pub peak: f64,
    pub region: Region,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { peak: 1.0, region: Region::Full, batch_size: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    /// `+inf` when `mse` is zero.
    pub psnr_db: f64,
}

impl Metrics {
    pub fn from_mse_mae(mse: f64, mae: f64, peak: f64) -> Self {
        Metrics { mse, mae, rmse: mse.sqrt(), psnr_db: psnr_from_mse(mse, peak) }
    }
}

/// Running sums of squared and absolute errors over one or more fields.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accumulator {
    pub sq: f64,
    pub abs: f64,
    pub count: usize,
}

impl Accumulator {
    /// Adds `pred - truth` over all voxels, or over those where `mask` is
    /// nonzero.
    pub fn add(&mut self, pred: &VolumeField, truth: &VolumeField, mask: Option<&VolumeField>) -> Result<(), EvalError> {
        pred.check_same(truth, "metric")?;
        if let Some(m) = mask {
            pred.check_same(m, "metric mask")?;
        }
        for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
            if mask.is_some_and(|m| m.data()[i] == 0.0) {
                continue;
            }
            let e = p as f64 - t as f64;
            self.sq += e * e;
            self.abs += e.abs();
            self.count += 1;
        }
        Ok(())
    }

    pub fn finish(&self, peak: f64) -> Result<Metrics, EvalError> {
        if self.count == 0 {
            return Err(EvalError::Invalid("no voxels to evaluate".into()));
        }
        let n = self.count as f64;
        Ok(Metrics::from_mse_mae(self.sq / n, self.abs / n, peak))
    }
}

fn sums(pred: &VolumeField, truth: &VolumeField) -> Result<Accumulator, EvalError> {
    let mut acc = Accumulator::default();
    acc.add(pred, truth, None)?;
    Ok(acc)
}

pub fn mse(pred: &VolumeField, truth: &VolumeField) -> Result<f64, EvalError> {
    let a = sums(pred, truth)?;
    Ok(a.sq / a.count as f64)
}

pub fn mae(pred: &VolumeField, truth: &VolumeField) -> Result<f64, EvalError> {
    let a = sums(pred, truth)?;
    Ok(a.abs / a.count as f64)
}

pub fn rmse(pred: &VolumeField, truth: &VolumeField) -> Result<f64, EvalError> {
    Ok(mse(pred, truth)?.sqrt())
}

/// `10 log10(peak² / mse)`; `+inf` for a perfect match.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(pred: &VolumeField, truth: &VolumeField, peak: f64) -> Result<f64, EvalError> {
    if !(peak > 0.0) {
        return Err(EvalError::Invalid(format!("PSNR peak {peak} must be positive")));
    }
    Ok(psnr_from_mse(mse(pred, truth)?, peak))
}

/// Voxelwise `√(vx² + vy² + vz²)`.
pub fn velocity_magnitude(vx: &VolumeField, vy: &VolumeField, vz: &VolumeField) -> Result<VolumeField, EvalError> {
    vx.check_same(vy, "velocity_magnitude")?;
    vx.check_same(vz, "velocity_magnitude")?;
    let data = vx
        .data()
        .iter()
        .zip(vy.data())
        .zip(vz.data())
        .map(|((&a, &b), &c)| ((a as f64).powi(2) + (b as f64).powi(2) + (c as f64).powi(2)).sqrt() as f32)
        .collect();
    Ok(VolumeField::new(vx.dims(), vx.spacing(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(data: &[f32]) -> VolumeField {
        VolumeField::new([1, 1, data.len()], 1.0, data.to_vec()).unwrap()
    }

    #[test]
    fn identical_fields() {
        let a = field(&[0.3, -1.0, 2.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_offset() {
        let a = VolumeField::filled([2, 3, 4], 1.0, 0.1);
        let b = VolumeField::zeros([2, 3, 4], 1.0);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-9);
        assert!((mae(&a, &b).unwrap() - 0.1).abs() < 1e-8);
        assert!((rmse(&a, &b).unwrap() - 0.1).abs() < 1e-8);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = VolumeField::zeros([2, 2, 2], 1.0);
        let b = VolumeField::zeros([2, 2, 3], 1.0);
        assert!(matches!(mse(&a, &b), Err(EvalError::Field(_))));
        assert!(velocity_magnitude(&a, &a, &b).is_err());
    }

    #[test]
    fn magnitude_examples() {
        let m = velocity_magnitude(&field(&[3.0, 0.0, -0.7]), &field(&[4.0, 0.0, 0.0]), &field(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(m.data(), &[5.0, 0.0, 0.7]);
    }

    #[test]
    fn masked_accumulation() {
        let p = field(&[1.0, 5.0, 0.0]);
        let t = field(&[0.0, 5.0, 2.0]);
        let m = field(&[1.0, 1.0, 0.0]);
        let mut acc = Accumulator::default();
        acc.add(&p, &t, Some(&m)).unwrap();
        assert_eq!(acc.count, 2);
        let r = acc.finish(1.0).unwrap();
        assert_eq!((r.mse, r.mae), (0.5, 0.5));
        assert!(Accumulator::default().finish(1.0).is_err());
    }

    #[test]
    fn psnr_peak_is_configurable() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(0.01, 10.0) - 40.0).abs() < 1e-12);
        let a = field(&[1.0]);
        assert!(psnr(&a, &a, 0.0).is_err());
    }
}
