//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! `cargo test -p flowrecon-cli --test acceptance -- 4 8` runs a subset.
//! Criteria 5 to 9 share one desk dataset (8 geometries, 47 runs, 32³),
//! generated on first use unless `FLOWRECON_ACCEPTANCE_DATASET` points at
//! an existing one.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use flowrecon::datapipe::{
    assemble_input, decode_volume, encode_volume, write_dataset, Component, Dataset, DatasetManifest, DatasetOptions,
    InputConfig, Partition, Sample, MANIFEST_FILE,
};
use flowrecon::evalkit::{
    input_variants, mse, psnr, psnr_from_mse, read_report, rmse, run_ablation, write_report, AblationConfig, MetricReport, Suite,
    Target,
};
use flowrecon::flowgen::{
    generate_population, voxelize, CellClass, FlowDomain, FlowSnapshot, FlowSolver, GridSpec, PopulationConfig, SnapshotPolicy,
    SolverConfig, VentricleGeometry,
};
use flowrecon::models::{trace_shapes, Model, ModelConfig};
use flowrecon::tensorgrad::{adjoint_suite, gradient_suite, Tape, Tensor, ADJOINT_TOL, GRAD_TOL};
use flowrecon::trainer::{prepare, Checkpoint, TrainConfig, Trainer};
use flowrecon::VolumeField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DATASET_ENV: &str = "FLOWRECON_ACCEPTANCE_DATASET";
const DIVISOR: usize = 4;
const SEEDS: u64 = 20;

type Outcome = Result<String, String>;

/// Lazily generated desk dataset shared by the data-driven criteria.
struct Shared {
    _tmp: Option<tempfile::TempDir>,
    dataset: Option<Dataset>,
}

impl Shared {
    fn dataset(&mut self) -> Result<&Dataset, String> {
        if self.dataset.is_none() {
            let dir = match std::env::var_os(DATASET_ENV) {
                Some(p) => PathBuf::from(p),
                None => {
                    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
                    let dir = tmp.path().join("dataset");
                    let start = Instant::now();
                    let solver = SolverConfig::desk();
                    let (plan, outputs) = generate_population(&PopulationConfig::default(), &solver).map_err(|e| e.to_string())?;
                    let opts = DatasetOptions { seed: 0, sparse_fraction: 0.05, folds: 5, include_unconverged: false };
                    write_dataset(&dir, &plan, &outputs, &solver, &opts).map_err(|e| e.to_string())?;
                    println!("       (generated desk dataset in {:.0}s)", start.elapsed().as_secs_f64());
                    self._tmp = Some(tmp);
                    dir
                }
            };
            self.dataset = Some(Dataset::open(&dir).map_err(|e| format!("{}: {e}", dir.display()))?);
        }
        Ok(self.dataset.as_ref().expect("just opened"))
    }
}

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c1_gradients(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let out = gradient_suite(SEEDS, false).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = out.iter().map(|o| o.worst).fold(0.0, f64::max);
    let failed: Vec<&str> = out.iter().filter(|o| !o.passed()).map(|o| o.name.as_str()).collect();
    let names = out.iter().map(|o| o.name.as_str()).collect::<Vec<_>>().join(" ");
    let ops = ["conv3d", "conv_transpose3d", "maxpool3d", "instance_norm3d", "prelu", "concat", "broadcast", "huber"];
    let missing: Vec<&str> = ops.iter().copied().filter(|op| !names.split(' ').any(|n| n.starts_with(op))).collect();
    check(
        failed.is_empty() && missing.is_empty() && secs < 120.0,
        format!(
            "{} cases x {SEEDS} seeds (f64), worst rel err {worst:.2e} (tol {GRAD_TOL:.0e}), {secs:.1}s (limit 120s){}{}",
            out.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") },
            if missing.is_empty() { String::new() } else { format!(", missing ops: {missing:?}") },
        ),
    )
}

fn c2_adjoint(_: &mut Shared) -> Outcome {
    let out = adjoint_suite(SEEDS).map_err(|e| e.to_string())?;
    let worst = out.iter().map(|o| o.worst).fold(0.0, f64::max);
    let failed: Vec<&str> = out.iter().filter(|o| !o.passed()).map(|o| o.name.as_str()).collect();
    check(
        failed.is_empty(),
        format!("{} conv configs x {SEEDS} seeds, worst |<Ax,y>-<x,A*y>| rel {worst:.2e} (tol {ADJOINT_TOL:.0e}){}", out.len(), if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }),
    )
}

fn c3_shapes(_: &mut Shared) -> Outcome {
    let paper = trace_shapes(&ModelConfig::lvadnet3d(), [1, 2, 128, 128, 128]).map_err(|e| e.to_string())?;
    let mut errs = Vec::new();
    if paper.encoder_out != [1, 256, 8, 8, 8] {
        errs.push(format!("paper latent {:?}", paper.encoder_out));
    }
    if paper.output != [1, 1, 128, 128, 128] {
        errs.push(format!("paper output {:?}", paper.output));
    }
    let cfg = ModelConfig::lvadnet3d().desk(DIVISOR);
    let desk = trace_shapes(&cfg, [1, 2, 32, 32, 32]).map_err(|e| e.to_string())?;
    let m = Model::new(cfg, 0).map_err(|e| e.to_string())?;
    let mut tape = Tape::<f32>::new();
    let p = m.bind(&mut tape, false);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = tape.constant(Tensor::new(&[1, 2, 32, 32, 32], (0..2 * 32 * 32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect()).map_err(|e| e.to_string())?);
    let v = tape.constant(Tensor::scalar(0.5));
    let out = m.forward(&mut tape, &p, x, v).map_err(|e| e.to_string())?;
    let latent = tape.shape(out.latent.x_l).to_vec();
    let pred = tape.shape(out.prediction).to_vec();
    if latent != desk.encoder_out || pred != desk.output {
        errs.push(format!("desk forward {latent:?} -> {pred:?} differs from trace"));
    }
    // Same spatial reduction and channel ladder, channels divided evenly.
    if latent != [1, 256 / DIVISOR, 32 / 16, 32 / 16, 32 / 16] || pred != [1, 1, 32, 32, 32] {
        errs.push(format!("desk latent {latent:?}, output {pred:?}"));
    }
    check(
        errs.is_empty(),
        format!(
            "paper {:?} -> {:?} -> {:?}; desk [1, 2, 32, 32, 32] -> {latent:?} -> {pred:?}{}",
            [1, 2, 128, 128, 128],
            paper.encoder_out,
            paper.output,
            if errs.is_empty() { String::new() } else { format!("; {}", errs.join("; ")) }
        ),
    )
}

fn c4_metrics(_: &mut Shared) -> Outcome {
    let round = |v: f64, digits: i32| (v * 10f64.powi(digits)).round() / 10f64.powi(digits);
    // Fields whose error is a constant offset give the target mse exactly
    // up to f32 rounding.
    let truth = VolumeField::from_fn([8; 3], 1.0, |z, y, x| ((z * 7 + y * 3 + x) % 11) as f32 / 11.0);
    let field_with = |m: f64| truth.map(|v| v + m.sqrt() as f32);
    let a = field_with(1.90e-3);
    let b = field_with(5.03e-2);
    let e = |r: Result<f64, flowrecon::evalkit::EvalError>| r.map_err(|e| e.to_string());
    let (mse_a, rmse_a, psnr_a) = (e(mse(&a, &truth))?, e(rmse(&a, &truth))?, e(psnr(&a, &truth, 1.0))?);
    let psnr_b = e(psnr(&b, &truth, 1.0))?;
    let ok = (mse_a - 1.90e-3).abs() < 1e-8
        && round(rmse_a * 100.0, 2) == 4.36
        && round(psnr_from_mse(1.90e-3, 1.0), 2) == 27.21
        && (psnr_a - 27.22).abs() <= 0.02
        && round(psnr_from_mse(5.03e-2, 1.0), 2) == 12.98
        && round(psnr_b, 2) == 12.98;
    check(
        ok,
        format!(
            "mse {mse_a:.3e} -> rmse {rmse_a:.4e}, psnr {psnr_a:.4} dB (|d| to 27.22 = {:.4}); mse 5.03e-2 -> {psnr_b:.4} dB",
            (psnr_a - 27.22).abs()
        ),
    )
}

fn c5_overfit(shared: &mut Shared) -> Outcome {
    const STEPS: usize = 500;
    let ds = shared.dataset()?;
    let train = ds.samples(0, Partition::Train).map_err(|e| e.to_string())?;
    let sample = train.first().ok_or("fold 0 has no training samples")?;
    let data = prepare(std::slice::from_ref(sample), Component::X, InputConfig::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { lr0: 1e-2, batch_size: 1, epochs: STEPS, seed: 0, ..TrainConfig::new(Component::X) };
    let model = Model::new(ModelConfig::lvadnet3d().desk(DIVISOR), 0).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, cfg).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut best = f64::INFINITY;
    let mut hit = None;
    for _ in 0..STEPS {
        let rec = trainer.step(&data).map_err(|e| e.to_string())?;
        best = best.min(rec.loss);
        if rec.loss < 1e-4 {
            hit = Some(rec.step + 1);
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        hit.is_some() && secs < 600.0,
        format!(
            "{} (v_in {:.3}), lvadnet3d/{DIVISOR}, x: {} (lowest Huber {best:.3e}), {secs:.0}s (limit 600s)",
            sample.run_id,
            sample.v_in,
            hit.map_or(format!("Huber never below 1e-4 in {STEPS} steps"), |s| format!("Huber < 1e-4 at step {s}")),
        ),
    )
}

/// Desk ablation settings, identical to `flowrecon ablate` defaults.
fn ablation_config() -> AblationConfig {
    let mut cfg = AblationConfig::desk(DIVISOR);
    cfg.epochs = 8;
    cfg.train.epochs = 8;
    cfg
}

fn table_mse(table: &[MetricReport], model: &str, target: Target, inputs: Option<(bool, bool)>) -> Option<f64> {
    table
        .iter()
        .find(|r| r.model == model && r.target == target && inputs.map_or(true, |(rdf, vin)| r.inputs.rdf == rdf && r.inputs.vin == vin))
        .map(|r| r.metrics.mse)
}

fn c6_skips(shared: &mut Shared) -> Outcome {
    let cfg = ablation_config();
    let res = run_ablation(Suite::Skip, &cfg, shared.dataset()?).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for d in Component::ALL {
        let on = table_mse(&res.table, "lvadnet3d", Target::Component(d), None);
        let off = table_mse(&res.table, "lvadnet3d_no_sc", Target::Component(d), None);
        match (on, off) {
            (Some(on), Some(off)) => {
                ok &= on < off;
                parts.push(format!("{} {on:.3e} vs {off:.3e}", d.name()));
            }
            _ => return Err(format!("missing table rows for {}", d.name())),
        }
    }
    check(ok, format!("mean test mse on vs off over seeds {:?}, {} epochs: {}", cfg.seeds, cfg.epochs, parts.join(", ")))
}

fn c7_inputs(shared: &mut Shared) -> Outcome {
    let mut cfg = ablation_config();
    cfg.input_models = vec![ModelConfig::lvadnet3d().desk(DIVISOR)];
    let res = run_ablation(Suite::Inputs, &cfg, shared.dataset()?).map_err(|e| e.to_string())?;
    let mut vals = Vec::new();
    for v in input_variants() {
        let vin = v.name.ends_with("vin");
        let m = table_mse(&res.table, "lvadnet3d", Target::Magnitude, Some((v.inputs.rdf, vin)))
            .ok_or_else(|| format!("missing table row for {}", v.name))?;
        vals.push((v.name, m));
    }
    let [s, sr, srv] = [vals[0].1, vals[1].1, vals[2].1];
    check(
        srv <= sr && sr <= s,
        format!(
            "magnitude mse over seeds {:?}: {} {srv:.3e} <= {} {sr:.3e} <= {} {s:.3e}",
            cfg.seeds, vals[2].0, vals[1].0, vals[0].0
        ),
    )
}

/// Worst `max |div u| · h / v_in` over interior cells of a snapshot, from
/// the exported face velocities.
fn snapshot_divergence(domain: &FlowDomain, u: [&VolumeField; 3], v_in: f64) -> f64 {
    let [nz, ny, nx] = domain.grid.dims;
    let stride = [1, nx, nx * ny];
    let ext = [nx, ny, nz];
    let mut worst = 0.0f64;
    for (i, &c) in domain.classes.iter().enumerate() {
        if c != CellClass::Interior {
            continue;
        }
        let pos = [i % nx, (i / nx) % ny, i / (nx * ny)];
        let mut div = 0.0f64;
        for a in 0..3 {
            let lo = if pos[a] > 0 { u[a].data()[i - stride[a]] as f64 } else { 0.0 };
            debug_assert!(pos[a] < ext[a]);
            div += u[a].data()[i] as f64 - lo;
        }
        worst = worst.max(div.abs());
    }
    // div is already multiplied by h: Σ (u+ - u-) = h · div u.
    worst / v_in
}

fn tube(nz: usize, n: usize, radius: f64) -> Result<FlowDomain, String> {
    let c = (n as f64 - 1.0) / 2.0;
    let inside = |y: usize, x: usize| (y as f64 - c).powi(2) + (x as f64 - c).powi(2) <= radius * radius;
    let mut classes = vec![CellClass::Outside; nz * n * n];
    for z in 1..nz - 1 {
        for y in 0..n {
            for x in 0..n {
                if !inside(y, x) {
                    continue;
                }
                let rim = !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1));
                classes[(z * n + y) * n + x] = match (z, rim) {
                    (z, _) if z == nz - 2 => CellClass::Outlet,
                    (_, true) => CellClass::Wall,
                    (1, false) => CellClass::Inlet,
                    _ => CellClass::Interior,
                };
            }
        }
    }
    FlowDomain::new(GridSpec { dims: [nz, n, n], spacing: 2e-3 }, classes, [0.0, 0.0, 1.0]).map_err(|e| e.to_string())
}

fn c8_physics(shared: &mut Shared) -> Outcome {
    let e = |e: flowrecon::flowgen::FlowError| e.to_string();
    let mut worst_div = 0.0f64;
    let mut snapshots = 0usize;

    // Every dataset snapshot.
    let ds = shared.dataset()?;
    let geoms: BTreeMap<&str, &VentricleGeometry> = ds.manifest.geometries.iter().map(|g| (g.id.as_str(), g)).collect();
    for r in &ds.runs {
        let g = geoms.get(r.record.geometry_id.as_str()).ok_or("run without geometry")?;
        let domain = voxelize(g, GridSpec::fit(g, r.record.dims)).map_err(e)?;
        let [vx, vy, vz] = &r.velocity;
        worst_div = worst_div.max(snapshot_divergence(&domain, [vx, vy, vz], r.record.v_in));
        snapshots += 1;
    }
    // Every 25th step of a full desk run at the slowest and fastest inflow.
    let g = ds.manifest.geometries[0].clone();
    for v_in in [0.1, 0.5] {
        let cfg = SolverConfig { snapshots: SnapshotPolicy::Every(25), ..SolverConfig::desk() };
        let domain = voxelize(&g, GridSpec::fit(&g, cfg.grid_dims)).map_err(e)?;
        let snaps: Vec<FlowSnapshot> = flowrecon::flowgen::simulate_domain(domain.clone(), &cfg, v_in, &g.id).map_err(e)?;
        for s in &snaps {
            worst_div = worst_div.max(snapshot_divergence(&domain, s.components(), v_in));
            snapshots += 1;
        }
    }

    // Flux through every cross-section of a straight tube.
    let domain = tube(24, 14, 5.5)?;
    let nz = domain.grid.dims[0];
    let cfg = SolverConfig { steps: 200, grid_dims: domain.grid.dims, ..SolverConfig::desk() };
    let mut solver = FlowSolver::new(domain, cfg, 0.2).map_err(e)?;
    for _ in 0..200 {
        solver.step();
    }
    let q_in = solver.plane_flux(2, 1);
    let flux_err = (1..nz - 2).map(|k| (solver.plane_flux(2, k) - q_in).abs() / q_in).fold(0.0, f64::max);

    // Energy decay without inflow, from a random projected field.
    let g = VentricleGeometry::new("decay", 70.0, 100.0, 20.0).map_err(e)?;
    let domain = voxelize(&g, GridSpec::fit(&g, [32; 3])).map_err(e)?;
    let n = domain.classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut field = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for c in field.iter_mut() {
        for (i, v) in c.iter_mut().enumerate() {
            if domain.classes[i].is_free() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let mut solver = FlowSolver::new(domain, SolverConfig { steps: 100, ..SolverConfig::desk() }, 0.0).map_err(e)?;
    solver.set_velocity(field).map_err(e)?;
    solver.project();
    let e0 = solver.kinetic_energy();
    let mut prev = e0;
    let mut increases = 0;
    for _ in 0..100 {
        solver.step();
        let next = solver.kinetic_energy();
        increases += usize::from(next > prev);
        prev = next;
    }

    check(
        worst_div < 1e-3 && flux_err < 0.01 && increases == 0 && prev < e0,
        format!(
            "max |div u|·h/v_in {worst_div:.2e} over {snapshots} snapshots (tol 1e-3); tube flux imbalance {:.3}% (tol 1%); \
             energy {e0:.3e} -> {prev:.3e} with {increases} increases in 100 steps",
            flux_err * 100.0
        ),
    )
}

fn bits(v: &[VolumeField]) -> Vec<Vec<u32>> {
    v.iter().map(|f| f.data().iter().map(|x| x.to_bits()).collect()).collect()
}

fn c9_pipeline(shared: &mut Shared) -> Outcome {
    let ds = shared.dataset()?;
    let s = |e: flowrecon::datapipe::DataError| e.to_string();
    let mut errs = Vec::new();

    // Sparse count and support.
    for r in &ds.runs {
        let n = r.mask.count_ones();
        let want = n * 5 / 100;
        let got = r.sparse_mask.count_ones();
        let outside = r.sparse_mask.data().iter().zip(r.mask.data()).filter(|(&s, &m)| s != 0.0 && m == 0.0).count();
        if got != want || outside != 0 || r.record.sparse_voxels != got || r.record.ventricle_voxels != n {
            errs.push(format!("{}: {got} sparse of {n} (want {want}), {outside} outside", r.record.run_id));
        }
    }
    // One support for all three components.
    let samples: Vec<Sample> = [Partition::Train, Partition::Val, Partition::Test]
        .into_iter()
        .map(|p| ds.samples(0, p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(s)?
        .concat();
    for smp in &samples {
        for d in Component::ALL {
            let (input, _) = assemble_input(smp, d, InputConfig { rdf: false }).map_err(s)?;
            let v = smp.velocity[d.index()].data();
            let same = input.data().iter().zip(smp.sparse_mask.data()).zip(v).all(|((&c, &m), &v)| {
                let want = if m != 0.0 { v } else { 0.0 };
                c.to_bits() == want.to_bits()
            });
            if !same {
                errs.push(format!("{} {}: sparse channel off the shared support", smp.run_id, d.name()));
            }
        }
    }
    // Folds: disjoint partitions covering every geometry, distinct test sets.
    let all: BTreeSet<&str> = ds.manifest.geometries.iter().map(|g| g.id.as_str()).collect();
    let mut tests = BTreeSet::new();
    for f in &ds.manifest.folds {
        let sp = &f.split;
        let parts: Vec<BTreeSet<&str>> =
            [&sp.train, &sp.val, &sp.test].iter().map(|v| v.iter().map(String::as_str).collect()).collect();
        let total: usize = parts.iter().map(BTreeSet::len).sum();
        let union: BTreeSet<&str> = parts.iter().flatten().copied().collect();
        if total != union.len() || union != all || sp.test.is_empty() {
            errs.push(format!("fold {}: partitions overlap or miss geometries", sp.fold));
        }
        for t in &sp.test {
            if !tests.insert(t.clone()) {
                errs.push(format!("geometry {t} tested in two folds"));
            }
        }
    }
    // Round trips.
    for r in &ds.runs {
        let ch = [&r.velocity[0], &r.velocity[1], &r.velocity[2], &r.rdf, &r.mask, &r.sparse_mask];
        let (bytes, _) = encode_volume(&ch).map_err(s)?;
        let back = decode_volume(&bytes, r.record.spacing).map_err(s)?;
        let orig: Vec<VolumeField> = ch.iter().map(|f| (*f).clone()).collect();
        if bits(&back) != bits(&orig) || encode_volume(&back.iter().collect::<Vec<_>>()).map_err(s)?.0 != bytes {
            errs.push(format!("{}: volume round trip differs", r.record.run_id));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let special = [f32::NAN, -0.0, f32::INFINITY, f32::NEG_INFINITY, f32::MIN_POSITIVE / 4.0, f32::MAX];
    let odd = VolumeField::from_fn([3, 4, 5], 0.7, |_, _, _| {
        if rng.gen_bool(0.3) { special[rng.gen_range(0..special.len())] } else { rng.gen() }
    });
    let (bytes, _) = encode_volume(&[&odd]).map_err(s)?;
    if bits(&decode_volume(&bytes, 0.7).map_err(s)?) != bits(std::slice::from_ref(&odd)) {
        errs.push("special float values changed in a volume round trip".into());
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mpath = tmp.path().join(MANIFEST_FILE);
    ds.manifest.save(&mpath).map_err(s)?;
    let reloaded = DatasetManifest::load(&mpath).map_err(s)?;
    let original = std::fs::read(ds.root.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    if reloaded != ds.manifest || std::fs::read(&mpath).map_err(|e| e.to_string())? != original {
        errs.push("manifest round trip differs".into());
    }
    let model = Model::new(ModelConfig::lvadnet3d().desk(DIVISOR), 4).map_err(|e| e.to_string())?;
    let ck = Trainer::new(model, TrainConfig::new(Component::Y)).map_err(|e| e.to_string())?.checkpoint();
    let bytes = ck.encode();
    let back = Checkpoint::decode(&bytes, None).map_err(|e| e.to_string())?;
    if back != ck || back.encode() != bytes {
        errs.push("checkpoint round trip differs".into());
    }
    let rows = flowrecon::evalkit::evaluate(
        [Some(&back.model().map_err(|e| e.to_string())?), None, None],
        &samples[..1],
        InputConfig::default(),
        0,
        Some(0),
        &Default::default(),
    );
    if let Ok(ev) = rows {
        let rpath = tmp.path().join("report.csv");
        write_report(&rpath, &ev.rows).map_err(|e| e.to_string())?;
        if read_report(&rpath).map_err(|e| e.to_string())? != ev.rows {
            errs.push("report round trip differs".into());
        }
    } else {
        errs.push("evaluation for the report round trip failed".into());
    }
    check(
        errs.is_empty(),
        format!(
            "{} runs: sparse count floor(0.05 N) inside mask, shared support over {} samples x 3, {} folds disjoint, \
             volume/manifest/checkpoint/report round trips bit-exact{}",
            ds.runs.len(),
            samples.len(),
            ds.manifest.folds.len(),
            if errs.is_empty() { String::new() } else { format!("; {}", errs.join("; ")) }
        ),
    )
}

fn flowrecon(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_flowrecon"))
        .args(args)
        .current_dir(dir)
        .env_remove("FLOWRECON_DATA")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`flowrecon {}` exited {}: {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

/// Relative path -> contents of every file under `root`. The wall-clock
/// column of metrics logs is dropped.
fn tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            if path.file_name().is_some_and(|n| n == "metrics.csv") {
                let text = String::from_utf8_lossy(&bytes).into_owned();
                bytes = text.lines().map(|l| l.rsplit_once(',').map_or(l, |(a, _)| a)).collect::<Vec<_>>().join("\n").into_bytes();
            }
            out.insert(rel, bytes);
        }
    }
    Ok(out)
}

fn c10_determinism(_: &mut Shared) -> Outcome {
    let mut trees = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let dir = tmp.path();
        flowrecon(dir, &["generate", "--geometries", "3", "--inlets", "2", "--folds", "3", "--seed", "7"])?;
        for d in ["x", "y", "z"] {
            flowrecon(dir, &["train", "--component", d, "--epochs", "1", "--seed", "7"])?;
        }
        flowrecon(dir, &["eval", "--slices"])?;
        trees.push(tree(&dir.join("data"))?);
    }
    let (a, b) = (&trees[0], &trees[1]);
    let count = |suffix: &str| a.keys().filter(|k| k.ends_with(suffix)).count();
    let differing: Vec<&String> = a.keys().chain(b.keys()).collect::<BTreeSet<_>>().into_iter().filter(|k| a.get(*k) != b.get(*k)).collect();
    let expected = count("manifest.json") == 1 && count(".sfck") == 6 && count("report.csv") == 1 && count("run.json") == 5;
    check(
        differing.is_empty() && expected,
        format!(
            "two generate -> train x/y/z (1 epoch) -> eval runs: {} files ({} manifest, {} checkpoints, {} reports, {} run.json) {}",
            a.len(),
            count("manifest.json"),
            count(".sfck"),
            count("report.csv"),
            count("run.json"),
            if differing.is_empty() { "byte-identical".to_string() } else { format!("differ: {differing:?}") }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn(&mut Shared) -> Outcome); 10] = [
        ("gradient finite differences", c1_gradients),
        ("adjoint identity", c2_adjoint),
        ("shape ladder", c3_shapes),
        ("metric arithmetic", c4_metrics),
        ("single-sample overfit", c5_overfit),
        ("skip connection ablation", c6_skips),
        ("input ablation ordering", c7_inputs),
        ("flow physics", c8_physics),
        ("data pipeline", c9_pipeline),
        ("end-to-end determinism", c10_determinism),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (i, (name, _)) in criteria.iter().enumerate() {
            println!("criterion {}: {name}: test", i + 1);
        }
        return;
    }
    let selected: BTreeSet<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared { _tmp: None, dataset: None };
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let res = f(&mut shared);
        let secs = start.elapsed().as_secs_f64();
        let (verdict, detail) = match res {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{verdict} criterion {n:>2} ({name}): {detail} [{secs:.1}s]");
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
