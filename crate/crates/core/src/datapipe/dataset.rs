use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::folds::{kfold, FoldSplit, Partition};
use super::sample::{make_sparse_mask, sparse_count, Normalization, Sample};
use super::volume_io::{fnv1a64, read_volume, write_volume};
use super::DataError;
use crate::flowgen::{compute_rdf, FlowSnapshot, PopulationPlan, RunOutput, SolverConfig, VentricleGeometry};
use crate::VolumeField;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Channel order inside each run file.
pub const RUN_CHANNELS: [&str; 6] = ["vx", "vy", "vz", "rdf", "mask", "sparse_mask"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub geometry_id: String,
    /// m/s
    pub v_in: f64,
    /// Relative to the manifest directory.
    pub file: String,
    pub dims: [usize; 3],
    /// m
    pub spacing: f64,
    /// FNV-1a of the payload, hex.
    pub checksum: String,
    pub time_index: usize,
    pub converged: bool,
    pub sparse_seed: u64,
    pub ventricle_voxels: usize,
    pub sparse_voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    #[serde(flatten)]
    pub split: FoldSplit,
    pub normalization: Normalization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub sparse_fraction: f64,
    pub channels: Vec<String>,
    pub solver: SolverConfig,
    pub geometries: Vec<VentricleGeometry>,
    pub runs: Vec<RunRecord>,
    pub folds: Vec<FoldRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOptions {
    pub seed: u64,
    pub sparse_fraction: f64,
    pub folds: usize,
    /// Keep runs whose final pressure solve did not converge.
    pub include_unconverged: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { seed: 0, sparse_fraction: super::SPARSE_FRACTION, folds: 5, include_unconverged: false }
    }
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(DataError::Format(format!(
                "{}: manifest version {} is not supported",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| DataError::Format(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| DataError::io(path, e))
    }

    pub fn fold(&self, fold: usize) -> Result<&FoldRecord, DataError> {
        self.folds
            .iter()
            .find(|f| f.split.fold == fold)
            .ok_or_else(|| DataError::Invalid(format!("fold {fold} not in manifest ({} folds)", self.folds.len())))
    }

    /// Checks that every referenced file exists, parses, has the recorded
    /// shape and matches its checksum.
    pub fn verify(&self, root: &Path) -> Result<(), DataError> {
        for r in &self.runs {
            let vols = read_volume(&root.join(&r.file), r.spacing)?;
            if vols.len() != RUN_CHANNELS.len() || vols[0].dims() != r.dims {
                return Err(DataError::Format(format!("{}: shape differs from manifest", r.file)));
            }
            let (_, checksum) = super::volume_io::encode_volume(&vols.iter().collect::<Vec<_>>())?;
            if format!("{checksum:016x}") != r.checksum {
                return Err(DataError::Format(format!("{}: checksum differs from manifest", r.file)));
            }
        }
        Ok(())
    }
}

/// Per-run sparse seed: independent of run order.
pub fn sparse_seed(seed: u64, run_id: &str) -> u64 {
    seed ^ fnv1a64(run_id.as_bytes())
}

fn final_snapshot(run: &RunOutput) -> Option<&FlowSnapshot> {
    run.snapshots.last()
}

/// Writes one file per run plus the manifest into `dir`.
///
/// The last emitted snapshot of each run enters the dataset; runs whose
/// snapshot is flagged non-converged are dropped unless requested. Fold
/// normalization is the peak velocity magnitude over that fold's training
/// runs.
pub fn write_dataset(
    dir: &Path,
    plan: &PopulationPlan,
    outputs: &[RunOutput],
    solver: &SolverConfig,
    opts: &DatasetOptions,
) -> Result<DatasetManifest, DataError> {
    fs::create_dir_all(dir.join("volumes")).map_err(|e| DataError::io(dir, e))?;
    let mut runs = Vec::new();
    let mut fields: Vec<[VolumeField; 3]> = Vec::new();
    for out in outputs {
        let Some(snap) = final_snapshot(out) else {
            warn!("{}: no snapshot emitted, skipped", out.spec.run_id);
            continue;
        };
        if !snap.converged && !opts.include_unconverged {
            warn!("{}: pressure solve did not converge, run excluded", out.spec.run_id);
            continue;
        }
        let rdf = compute_rdf(&snap.mask)?;
        let seed = sparse_seed(opts.seed, &out.spec.run_id);
        let sparse = make_sparse_mask(&snap.mask, opts.sparse_fraction, seed)?;
        let file = format!("volumes/{}.sfv", out.spec.run_id);
        let checksum = write_volume(&dir.join(&file), &[&snap.vx, &snap.vy, &snap.vz, &rdf, &snap.mask, &sparse])?;
        let n_in = snap.mask.count_ones();
        runs.push(RunRecord {
            run_id: out.spec.run_id.clone(),
            geometry_id: out.spec.geometry_id.clone(),
            v_in: out.spec.v_in,
            file,
            dims: snap.mask.dims(),
            spacing: snap.mask.spacing(),
            checksum: format!("{checksum:016x}"),
            time_index: snap.time_index,
            converged: snap.converged,
            sparse_seed: seed,
            ventricle_voxels: n_in,
            sparse_voxels: sparse_count(n_in, opts.sparse_fraction),
        });
        fields.push([snap.vx.clone(), snap.vy.clone(), snap.vz.clone()]);
    }
    let mut ids: Vec<String> = runs.iter().map(|r| r.geometry_id.clone()).collect();
    ids.sort();
    ids.dedup();
    // Train, validation and test each need a geometry of their own.
    let splits = if ids.len() < 3 {
        warn!("{} geometries cannot fill train, val and test; the dataset has no folds", ids.len());
        Vec::new()
    } else {
        kfold(&ids, opts.folds, opts.seed)?
    };
    let mut folds = Vec::new();
    for split in splits {
        let train = runs
            .iter()
            .zip(&fields)
            .filter(|(r, _)| split.partition_of(&r.geometry_id) == Some(Partition::Train))
            .map(|(_, f)| [&f[0], &f[1], &f[2]]);
        let normalization = Normalization::fit(train)?;
        folds.push(FoldRecord { split, normalization });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        seed: opts.seed,
        sparse_fraction: opts.sparse_fraction,
        channels: RUN_CHANNELS.iter().map(|s| s.to_string()).collect(),
        solver: solver.clone(),
        geometries: plan.geometries.clone(),
        runs,
        folds,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    info!("wrote {} runs and {} folds to {}", manifest.runs.len(), manifest.folds.len(), dir.display());
    Ok(manifest)
}

/// A run's volumes in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct RunVolumes {
    pub record: RunRecord,
    pub velocity: [VolumeField; 3],
    pub rdf: VolumeField,
    pub mask: VolumeField,
    pub sparse_mask: VolumeField,
}

impl RunVolumes {
    pub fn sample(&self, norm: &Normalization) -> Sample {
        Sample {
            velocity: [0, 1, 2].map(|c| norm.normalize(&self.velocity[c])),
            rdf: Some(self.rdf.clone()),
            mask: self.mask.clone(),
            sparse_mask: self.sparse_mask.clone(),
            v_in: norm.normalize_v_in(self.record.v_in),
            geometry_id: self.record.geometry_id.clone(),
            run_id: self.record.run_id.clone(),
        }
    }
}

/// Manifest plus every run loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub runs: Vec<RunVolumes>,
}

impl Dataset {
    /// Opens `path`, which is either the manifest or its directory.
    pub fn open(path: &Path) -> Result<Self, DataError> {
        let (root, manifest_path) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let manifest = DatasetManifest::load(&manifest_path)?;
        let mut runs = Vec::with_capacity(manifest.runs.len());
        for r in &manifest.runs {
            let mut vols = read_volume(&root.join(&r.file), r.spacing)?;
            if vols.len() != RUN_CHANNELS.len() {
                return Err(DataError::Format(format!(
                    "{}: {} channels, expected {}",
                    r.file,
                    vols.len(),
                    RUN_CHANNELS.len()
                )));
            }
            if vols[0].dims() != r.dims {
                return Err(DataError::Format(format!("{}: dims {:?} differ from manifest {:?}", r.file, vols[0].dims(), r.dims)));
            }
            let sparse_mask = vols.pop().expect("six channels");
            let mask = vols.pop().expect("six channels");
            let rdf = vols.pop().expect("six channels");
            let vz = vols.pop().expect("six channels");
            let vy = vols.pop().expect("six channels");
            let vx = vols.pop().expect("six channels");
            runs.push(RunVolumes { record: r.clone(), velocity: [vx, vy, vz], rdf, mask, sparse_mask });
        }
        Ok(Dataset { root, manifest, runs })
    }

    /// Normalized samples of `partition` under fold `fold`'s constants.
    pub fn samples(&self, fold: usize, partition: Partition) -> Result<Vec<Sample>, DataError> {
        let f = self.manifest.fold(fold)?;
        Ok(self
            .runs
            .iter()
            .filter(|r| f.split.partition_of(&r.record.geometry_id) == Some(partition))
            .map(|r| r.sample(&f.normalization))
            .collect())
    }
}
