use flowrecon::datapipe::*;
use flowrecon::flowgen::{generate_population, PopulationConfig, SolverConfig};
use flowrecon::VolumeField;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(dims: [usize; 3], p: f64, seed: u64) -> VolumeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VolumeField::from_fn(dims, 1e-3, |_, _, _| if rng.gen_bool(p) { 1.0 } else { 0.0 })
}

fn sample_with(velocity: [VolumeField; 3], mask: VolumeField, seed: u64) -> Sample {
    let sparse_mask = make_sparse_mask(&mask, SPARSE_FRACTION, seed).unwrap();
    Sample {
        rdf: Some(flowrecon::flowgen::compute_rdf(&mask).unwrap()),
        velocity,
        mask,
        sparse_mask,
        v_in: 0.6,
        geometry_id: "g".into(),
        run_id: "g_r0".into(),
    }
}

#[test]
fn normalization_peak_and_round_trip() {
    let vx = VolumeField::from_fn([4, 4, 4], 1.0, |z, y, x| (z as f32 - y as f32) * 0.05 + x as f32 * 0.01);
    let vy = VolumeField::zeros([4, 4, 4], 1.0);
    let vz = VolumeField::filled([4, 4, 4], 1.0, -0.1);
    let n = Normalization::fit([[&vx, &vy, &vz]]).unwrap();
    let peak = (0..vx.len())
        .map(|i| {
            let a = [&vx, &vy, &vz].map(|f| n.normalize(f).data()[i] as f64);
            (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
        })
        .fold(0.0, f64::max);
    assert!((peak - 1.0).abs() < 1e-6, "{peak}");
    let back = n.denormalize(&n.normalize(&vx));
    for (a, b) in vx.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-30), "{a} {b}");
    }
    assert_eq!(n.normalize_v_in(0.5), 1.0);
    assert_eq!(n.denormalize_v_in(n.normalize_v_in(0.3)), 0.3);

    let single = VolumeField::filled([2, 2, 2], 1.0, 0.5);
    let z = VolumeField::zeros([2, 2, 2], 1.0);
    let n = Normalization::fit([[&single, &z, &z]]).unwrap();
    assert_eq!(n.normalize(&single).max_abs(), 1.0);
    assert!(Normalization::fit([[&z, &z, &z]]).is_err());
}

#[test]
fn sparse_mask_of_1000_voxels_keeps_50() {
    let mut mask = VolumeField::zeros([10, 10, 20], 1.0);
    for i in 0..1000 {
        mask.data_mut()[2 * i] = 1.0;
    }
    let s = make_sparse_mask(&mask, 0.05, 7).unwrap();
    assert_eq!(s.count_ones(), 50);
    assert!(s.data().iter().zip(mask.data()).all(|(&a, &m)| a == 0.0 || m == 1.0));
}

#[test]
fn sparse_mask_seeding() {
    let mask = random_mask([16, 16, 16], 0.5, 1);
    let a = make_sparse_mask(&mask, 0.05, 11).unwrap();
    assert_eq!(a, make_sparse_mask(&mask, 0.05, 11).unwrap());
    for (s1, s2) in [(1, 2), (3, 4), (100, 101)] {
        assert_ne!(make_sparse_mask(&mask, 0.05, s1).unwrap(), make_sparse_mask(&mask, 0.05, s2).unwrap());
    }
}

#[test]
fn sparse_mask_rejects_degenerate_inputs() {
    let mut tiny = VolumeField::zeros([4, 4, 4], 1.0);
    tiny.set(1, 1, 1, 1.0);
    assert!(make_sparse_mask(&tiny, 0.05, 0).is_err());
    let mask = random_mask([8, 8, 8], 0.5, 2);
    assert!(make_sparse_mask(&mask, 0.0, 0).is_err());
    assert!(make_sparse_mask(&mask, 1.0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_density_and_subset(seed in 0u64..10_000, p in 0.2f64..0.9) {
        let mask = random_mask([12, 10, 14], p, seed);
        let n_in = mask.count_ones();
        prop_assume!(n_in >= 20);
        let s = make_sparse_mask(&mask, 0.05, seed).unwrap();
        let k = s.count_ones();
        prop_assert_eq!(k, n_in * 5 / 100);
        prop_assert!((k as f64 / n_in as f64 - 0.05).abs() < 1.0 / n_in as f64);
        prop_assert!(s.data().iter().zip(mask.data()).all(|(&a, &m)| a == 0.0 || m == 1.0));
    }

    #[test]
    fn volume_round_trip_is_bit_exact(seed in 0u64..10_000, d in 1usize..6, h in 1usize..6, w in 1usize..6, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chans: Vec<VolumeField> = (0..c)
            .map(|_| VolumeField::from_fn([d, h, w], 0.25, |_, _, _| f32::from_bits(rng.gen())))
            .collect();
        let refs: Vec<&VolumeField> = chans.iter().collect();
        let (bytes, _) = encode_volume(&refs).unwrap();
        let back = decode_volume(&bytes, 0.25).unwrap();
        prop_assert_eq!(back.len(), c);
        for (a, b) in chans.iter().zip(&back) {
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(a.dims(), b.dims());
        }
    }

    #[test]
    fn folds_are_disjoint_and_cover(n in 3usize..12, seed in 0u64..1000) {
        let ids: Vec<String> = (0..n).map(|i| format!("geo{i:02}")).collect();
        let k = n.min(5);
        let folds = kfold(&ids, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut tested = std::collections::HashSet::new();
        for f in &folds {
            prop_assert_eq!(f.test.len(), 1);
            prop_assert_eq!(f.val.len(), 1);
            prop_assert!(tested.insert(f.test[0].clone()), "geometry tested twice");
            let mut all: Vec<&String> = f.train.iter().chain(&f.val).chain(&f.test).collect();
            all.sort();
            let before = all.len();
            all.dedup();
            prop_assert_eq!(before, all.len(), "partition overlap");
            prop_assert_eq!(all.len(), n);
        }
    }
}

#[test]
fn eight_geometries_five_folds() {
    let ids: Vec<String> = (0..8).map(|i| format!("geo{i:02}")).collect();
    let folds = kfold(&ids, 5, 3).unwrap();
    assert_eq!(folds.len(), 5);
    for f in &folds {
        assert_eq!((f.train.len(), f.val.len(), f.test.len()), (6, 1, 1));
    }
    assert_eq!(folds, kfold(&ids, 5, 3).unwrap());
    assert!(kfold(&ids, 9, 3).is_err());
    assert!(kfold(&ids[..2], 2, 3).is_err());
}

#[test]
fn assembled_input_channels() {
    let dims = [8, 8, 8];
    let mask = random_mask(dims, 0.7, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vel = [0, 1, 2].map(|_| VolumeField::from_fn(dims, 1e-3, |_, _, _| rng.gen_range(0.1..1.0)));
    let s = sample_with(vel, mask.clone(), 5);
    let k = sparse_count(mask.count_ones(), 0.05);
    let mut supports = Vec::new();
    for d in Component::ALL {
        let (x, t) = assemble_input(&s, d, InputConfig { rdf: true }).unwrap();
        assert_eq!(x.shape(), &[2, 8, 8, 8]);
        assert_eq!(t.shape(), &[1, 8, 8, 8]);
        let n = 512;
        let sparse = &x.data()[..n];
        assert!(sparse.iter().filter(|&&v| v != 0.0).count() <= k);
        assert_eq!(&x.data()[n..], s.rdf.as_ref().unwrap().data());
        assert_eq!(t.data(), s.velocity[d.index()].data());
        supports.push(sparse.iter().map(|&v| v != 0.0).collect::<Vec<_>>());
    }
    assert_eq!(supports[0], supports[1]);
    assert_eq!(supports[1], supports[2]);

    let (x, _) = assemble_input(&s, Component::Y, InputConfig { rdf: false }).unwrap();
    assert_eq!(x.shape(), &[1, 8, 8, 8]);

    let mut no_rdf = s.clone();
    no_rdf.rdf = None;
    assert!(assemble_input(&no_rdf, Component::X, InputConfig { rdf: true }).is_err());
}

#[test]
fn zero_velocity_gives_zero_channels() {
    let dims = [6, 6, 6];
    let mask = random_mask(dims, 0.8, 6);
    let vel = [0, 1, 2].map(|_| VolumeField::zeros(dims, 1e-3));
    let s = sample_with(vel, mask, 1);
    let (x, t) = assemble_input(&s, Component::Z, InputConfig::default()).unwrap();
    assert!(x.data()[..216].iter().all(|&v| v == 0.0));
    assert!(t.data().iter().all(|&v| v == 0.0));
}

#[test]
fn corrupted_volumes_are_rejected() {
    let f = VolumeField::from_fn([3, 4, 5], 1.0, |z, y, x| (z + y + x) as f32);
    let (bytes, _) = encode_volume(&[&f, &f]).unwrap();

    let truncated = &bytes[..bytes.len() - 13];
    assert!(decode_volume(truncated, 1.0).is_err());
    assert!(decode_volume(&bytes[..10], 1.0).is_err());

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_volume(&magic, 1.0).unwrap_err().to_string().contains("magic"));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(decode_volume(&version, 1.0).unwrap_err().to_string().contains("version"));

    let mut shape = bytes.clone();
    shape[12] = 4;
    assert!(decode_volume(&shape, 1.0).unwrap_err().to_string().contains("declares"));

    let mut payload = bytes.clone();
    payload[40] ^= 1;
    assert!(decode_volume(&payload, 1.0).unwrap_err().to_string().contains("checksum"));

    assert!(encode_volume(&[&f, &VolumeField::zeros([3, 4, 4], 1.0)]).is_err());
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.sfv");
    let f = VolumeField::from_fn([5, 3, 2], 2e-3, |z, y, x| (z * 6 + y * 2 + x) as f32 * 0.1);
    let checksum = write_volume(&path, &[&f]).unwrap();
    let back = read_volume(&path, 2e-3).unwrap();
    assert_eq!(back, vec![f.clone()]);
    assert_eq!(checksum, encode_volume(&[&f]).unwrap().1);
    assert!(read_volume(&dir.path().join("missing.sfv"), 1.0).is_err());
}

#[test]
fn trilinear_is_exact_on_affine_fields() {
    let affine = |z: f64, y: f64, x: f64| 0.3 + 0.7 * z - 1.1 * y + 0.25 * x;
    let src = VolumeField::from_fn([9, 7, 11], 1.0, |z, y, x| affine(z as f64, y as f64, x as f64) as f32);
    for dims in [[17, 13, 21], [5, 4, 6], [9, 7, 11], [12, 3, 30]] {
        let out = resample_trilinear(&src, dims).unwrap();
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let pos = |i: usize, a: usize| i as f64 * (src.dims()[a] as f64 - 1.0) / (dims[a] as f64 - 1.0);
                    let want = affine(pos(z, 0), pos(y, 1), pos(x, 2));
                    assert!((out.get(z, y, x) as f64 - want).abs() < 1e-5, "{dims:?} {z} {y} {x}");
                }
            }
        }
    }
    assert_eq!(resample_trilinear(&src, [9, 7, 11]).unwrap().data(), src.data());
}

#[test]
fn dataset_write_open_and_determinism() {
    let pop = PopulationConfig { n_geometries: 3, total_runs: 4, seed: 2, ..Default::default() };
    let solver = SolverConfig { steps: 3, ..SolverConfig::desk() };
    let opts = DatasetOptions { seed: 2, folds: 3, ..Default::default() };
    let (plan, outputs) = generate_population(&pop, &solver).unwrap();

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = write_dataset(a.path(), &plan, &outputs, &solver, &opts).unwrap();
    write_dataset(b.path(), &plan, &outputs, &solver, &opts).unwrap();
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), MANIFEST_FILE), read(b.path(), MANIFEST_FILE));
    for r in &m.runs {
        assert_eq!(read(a.path(), &r.file), read(b.path(), &r.file));
        assert!(!std::path::Path::new(&r.file).is_absolute());
    }

    m.verify(a.path()).unwrap();
    let ds = Dataset::open(a.path()).unwrap();
    assert_eq!(ds.manifest, m);
    assert_eq!(ds.runs.len(), 4);
    for r in &ds.runs {
        assert_eq!(r.sparse_mask.count_ones(), sparse_count(r.mask.count_ones(), 0.05));
        assert_eq!(r.sparse_mask.count_ones(), r.record.sparse_voxels);
    }
    for f in &m.folds {
        let train = ds.samples(f.split.fold, Partition::Train).unwrap();
        let test = ds.samples(f.split.fold, Partition::Test).unwrap();
        assert!(!train.is_empty() && !test.is_empty());
        // Training peak magnitude is exactly one under the fold's constants.
        let peak = train
            .iter()
            .flat_map(|s| (0..s.mask.len()).map(move |i| s.velocity.iter().map(|v| (v.data()[i] as f64).powi(2)).sum::<f64>().sqrt()))
            .fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-6, "{peak}");
        assert!(test.iter().all(|s| f.split.test.contains(&s.geometry_id)));
    }

    // A tampered file fails verification.
    let victim = a.path().join(&m.runs[0].file);
    let mut bytes = std::fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&victim, bytes).unwrap();
    assert!(m.verify(a.path()).is_err());
    assert!(Dataset::open(a.path()).is_err());
}
