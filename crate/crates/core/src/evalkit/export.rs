use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::EvalError;
use crate::VolumeField;

#[derive(Clone, Debug, PartialEq)]
pub struct SliceFiles {
    pub pred_ppm: PathBuf,
    pub truth_ppm: PathBuf,
    pub csv: PathBuf,
}

/// Blue (0) through green (0.5) to yellow (1); inputs are clamped.
pub fn colormap(t: f32) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let (r, g, b) = if t < 0.5 {
        let s = t / 0.5;
        (0.0, s, 1.0 - s)
    } else {
        let s = (t - 0.5) / 0.5;
        (s, 1.0, 0.0)
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// Binary PPM (P6) of `rows × cols` values mapped linearly from `[lo, hi]`.
pub fn write_ppm(path: &Path, rows: usize, cols: usize, values: &[f32], lo: f32, hi: f32) -> Result<(), EvalError> {
    if values.len() != rows * cols {
        return Err(EvalError::Invalid(format!("{} values for a {rows}x{cols} image", values.len())));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    for &v in values {
        out.extend_from_slice(&colormap((v - lo) / span));
    }
    std::fs::write(path, out).map_err(|e| EvalError::io(path, e))
}

/// Writes the mid-plane along `axis` (0 = z, 1 = y, 2 = x) of prediction and
/// ground truth as `<stem>_pred.ppm`, `<stem>_true.ppm` and `<stem>.csv`.
/// Both images share one colour scale.
pub fn write_slices(dir: &Path, stem: &str, pred: &VolumeField, truth: &VolumeField, axis: usize) -> Result<SliceFiles, EvalError> {
    pred.check_same(truth, "write_slices")?;
    if axis > 2 {
        return Err(EvalError::Invalid(format!("slice axis {axis} must be 0, 1 or 2")));
    }
    let at = pred.dims()[axis] / 2;
    let (rows, cols, p) = pred.slice(axis, at);
    let (_, _, t) = truth.slice(axis, at);
    let lo = p.iter().chain(&t).copied().fold(f32::INFINITY, f32::min);
    let hi = p.iter().chain(&t).copied().fold(f32::NEG_INFINITY, f32::max);
    let files = SliceFiles {
        pred_ppm: dir.join(format!("{stem}_pred.ppm")),
        truth_ppm: dir.join(format!("{stem}_true.ppm")),
        csv: dir.join(format!("{stem}.csv")),
    };
    write_ppm(&files.pred_ppm, rows, cols, &p, lo, hi)?;
    write_ppm(&files.truth_ppm, rows, cols, &t, lo, hi)?;
    let mut csv = String::from("row,col,pred,truth\n");
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            writeln!(csv, "{r},{c},{:e},{:e}", p[k], t[k]).expect("string write");
        }
    }
    std::fs::write(&files.csv, csv).map_err(|e| EvalError::io(&files.csv, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_stops() {
        assert_eq!(colormap(0.0), [0, 0, 255]);
        assert_eq!(colormap(0.5), [0, 255, 0]);
        assert_eq!(colormap(1.0), [255, 255, 0]);
        assert_eq!(colormap(7.0), colormap(1.0));
    }

    #[test]
    fn slice_files() {
        let dir = tempfile::tempdir().unwrap();
        let truth = VolumeField::from_fn([4, 3, 5], 1.0, |z, y, x| (z * 100 + y * 10 + x) as f32);
        let pred = truth.map(|v| v + 0.5);
        let f = write_slices(dir.path(), "s", &pred, &truth, 1).unwrap();
        let img = std::fs::read(&f.pred_ppm).unwrap();
        let header = b"P6\n5 4\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 4 * 5 * 3);
        let csv = std::fs::read_to_string(&f.csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 20);
        // Row 2, col 3 of the y = 1 plane is voxel (2, 1, 3).
        assert_eq!(lines[1 + 2 * 5 + 3], "2,3,2.135e2,2.13e2");
        assert!(write_slices(dir.path(), "s", &pred, &truth, 3).is_err());
    }
}
