//! Seeded gradient and adjoint checks over every differentiable operator the
//! networks rely on. Shared by the CLI self-check and the test suites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::check::{numeric_gradient, tape_gradient, worst_relative_error};
use super::error::TensorError;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const GRAD_TOL: f64 = 1e-4;
pub const ADJOINT_TOL: f64 = 1e-10;
const EPS: f64 = 1e-6;

/// `(kernel, stride, padding)` of every convolution the models build.
pub const MODEL_CONV_CONFIGS: [(usize, usize, usize); 4] = [(3, 1, 1), (3, 2, 1), (2, 2, 0), (1, 1, 0)];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    /// Worst error over all seeds.
    pub worst: f64,
    pub tol: f64,
    pub seeds: u64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst < self.tol
    }
}

type Objective = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>>;

struct Case {
    name: &'static str,
    /// Builds the point and objective for one seed.
    build: fn(u64) -> Vec<(Tensor<f64>, Objective)>,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `sum(y * r)` with a fixed random `r`.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let r = Tensor::uniform(t.shape(y), 1.0, &mut rng(seed ^ 0xabcdef));
    let r = t.constant(r);
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

/// Checks w.r.t. input, weight and bias of a (transposed) convolution.
fn conv_case(seed: u64, transpose: bool, k: usize, s: usize, p: usize) -> Vec<(Tensor<f64>, Objective)> {
    let mut r = rng(seed);
    let (ci, co) = (2, 2);
    let spatial = if transpose { 2 } else { 4 };
    let x = Tensor::<f64>::uniform(&[1, ci, spatial, spatial, spatial], 1.0, &mut r);
    let wshape = if transpose { [ci, co, k, k, k] } else { [co, ci, k, k, k] };
    let w = Tensor::<f64>::uniform(&wshape, 0.5, &mut r);
    let b = Tensor::<f64>::uniform(&[co], 0.5, &mut r);
    let apply = move |t: &mut Tape<f64>, x: Var, w: Var, b: Var| -> Result<Var, TensorError> {
        let y = if transpose {
            t.conv_transpose3d(x, w, Some(b), [s; 3], [p; 3])?
        } else {
            t.conv3d(x, w, Some(b), [s; 3], [p; 3])?
        };
        project(t, y, seed)
    };
    let (x1, w1, b1) = (x.clone(), w.clone(), b.clone());
    let (x2, w2, b2) = (x.clone(), w.clone(), b.clone());
    vec![
        (
            w.clone(),
            Box::new(move |t: &mut Tape<f64>, wv| {
                let xv = t.constant(x1.clone());
                let bv = t.constant(b1.clone());
                apply(t, xv, wv, bv)
            }) as Objective,
        ),
        (
            x,
            Box::new(move |t: &mut Tape<f64>, xv| {
                let wv = t.constant(w1.clone());
                let bv = t.constant(b2.clone());
                apply(t, xv, wv, bv)
            }),
        ),
        (
            b,
            Box::new(move |t: &mut Tape<f64>, bv| {
                let xv = t.constant(x2.clone());
                let wv = t.constant(w2.clone());
                apply(t, xv, wv, bv)
            }),
        ),
    ]
}

const CASES: [Case; 10] = [
    Case { name: "conv3d k3 s1 p1", build: |s| conv_case(s, false, 3, 1, 1) },
    Case { name: "conv3d k3 s2 p1", build: |s| conv_case(s, false, 3, 2, 1) },
    Case { name: "conv3d k1 s1 p0", build: |s| conv_case(s, false, 1, 1, 0) },
    Case { name: "conv_transpose3d k2 s2 p0", build: |s| conv_case(s, true, 2, 2, 0) },
    Case {
        name: "maxpool3d",
        build: |seed| {
            let x = Tensor::<f64>::uniform(&[1, 2, 4, 4, 4], 1.0, &mut rng(200 + seed));
            vec![(
                x,
                Box::new(move |t: &mut Tape<f64>, xv| {
                    let y = t.maxpool3d(xv)?;
                    project(t, y, seed)
                }),
            )]
        },
    },
    Case {
        name: "instance_norm3d",
        build: |seed| {
            let x = Tensor::<f64>::uniform(&[1, 2, 3, 3, 3], 1.0, &mut rng(400 + seed));
            vec![(
                x,
                Box::new(move |t: &mut Tape<f64>, xv| {
                    let y = t.instance_norm3d(xv, 1e-5)?;
                    project(t, y, seed)
                }),
            )]
        },
    },
    Case {
        name: "prelu",
        build: |seed| {
            let mut r = rng(500 + seed);
            let x = Tensor::<f64>::uniform(&[2, 3, 2, 2, 2], 1.0, &mut r);
            let a = Tensor::<f64>::uniform(&[3], 0.5, &mut r);
            let (xc, ac) = (x.clone(), a.clone());
            vec![
                (
                    x,
                    Box::new(move |t: &mut Tape<f64>, xv| {
                        let av = t.constant(ac.clone());
                        let y = t.prelu(xv, av)?;
                        project(t, y, seed)
                    }) as Objective,
                ),
                (
                    a,
                    Box::new(move |t: &mut Tape<f64>, av| {
                        let xv = t.constant(xc.clone());
                        let y = t.prelu(xv, av)?;
                        project(t, y, seed)
                    }),
                ),
            ]
        },
    },
    Case {
        name: "concat",
        build: |seed| {
            let mut r = rng(800 + seed);
            let a = Tensor::<f64>::uniform(&[2, 1, 2, 2, 2], 1.0, &mut r);
            let b = Tensor::<f64>::uniform(&[2, 2, 2, 2, 2], 1.0, &mut r);
            let (ac, bc) = (a.clone(), b.clone());
            vec![
                (
                    a,
                    Box::new(move |t: &mut Tape<f64>, av| {
                        let bv = t.constant(bc.clone());
                        let z = t.concat_channels(&[av, bv])?;
                        project(t, z, seed)
                    }) as Objective,
                ),
                (
                    b,
                    Box::new(move |t: &mut Tape<f64>, bv| {
                        let av = t.constant(ac.clone());
                        let z = t.concat_channels(&[av, bv])?;
                        project(t, z, seed)
                    }),
                ),
            ]
        },
    },
    Case {
        name: "broadcast",
        build: |seed| {
            let v = Tensor::<f64>::uniform(&[2], 1.0, &mut rng(600 + seed));
            vec![(
                v,
                Box::new(move |t: &mut Tape<f64>, vv| {
                    let y = t.broadcast_scalar(vv, &[2, 3, 2, 2, 2])?;
                    project(t, y, seed)
                }),
            )]
        },
    },
    Case {
        name: "huber",
        build: |seed| {
            let mut r = rng(700 + seed);
            // Residuals over [-1.5, 1.5] exercise both branches at delta 0.5.
            let x = Tensor::<f64>::uniform(&[64], 1.5, &mut r);
            let target = Tensor::<f64>::uniform(&[64], 0.1, &mut r);
            vec![(
                x,
                Box::new(move |t: &mut Tape<f64>, xv| {
                    let tv = t.constant(target.clone());
                    t.huber_loss(xv, tv, 0.5)
                }),
            )]
        },
    },
];

/// Finite-difference check of every operator over `seeds` seeds.
///
/// With `fault` set, the analytic weight gradient of the first convolution
/// is scaled by 1.01 before comparison; the suite must then fail.
pub fn gradient_suite(seeds: u64, fault: bool) -> Result<Vec<CheckOutcome>, TensorError> {
    let mut out = Vec::with_capacity(CASES.len());
    for (ci, case) in CASES.iter().enumerate() {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            for (ti, (x, f)) in (case.build)(seed).into_iter().enumerate() {
                let mut analytic = tape_gradient(&f, &x)?;
                if fault && ci == 0 && ti == 0 {
                    analytic.data_mut().iter_mut().for_each(|g| *g *= 1.01);
                }
                let numeric = numeric_gradient(&f, &x, EPS)?;
                let err = worst_relative_error(&analytic, &numeric);
                worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            }
        }
        out.push(CheckOutcome { name: case.name.to_string(), worst, tol: GRAD_TOL, seeds });
    }
    Ok(out)
}

/// `<conv(u), v>` against `<u, conv_transpose(v)>` for every model
/// convolution, relative to the larger side.
pub fn adjoint_suite(seeds: u64) -> Result<Vec<CheckOutcome>, TensorError> {
    let mut out = Vec::new();
    for (k, s, p) in MODEL_CONV_CONFIGS {
        let dims = if s == 2 && k == 3 { 7 } else { 8 };
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let mut r = rng(seed);
            let u = Tensor::<f64>::uniform(&[1, 3, dims, dims, dims], 1.0, &mut r);
            let w = Tensor::<f64>::uniform(&[2, 3, k, k, k], 1.0, &mut r);
            let mut t = Tape::new();
            let uv = t.constant(u.clone());
            let wv = t.constant(w);
            let cu = t.conv3d(uv, wv, None, [s; 3], [p; 3])?;
            let v = Tensor::<f64>::uniform(t.shape(cu), 1.0, &mut r);
            let vv = t.constant(v.clone());
            let ctv = t.conv_transpose3d(vv, wv, None, [s; 3], [p; 3])?;
            if t.shape(ctv) != u.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adjoint",
                    lhs_name: "transpose output",
                    lhs: t.shape(ctv).to_vec(),
                    rhs_name: "input",
                    rhs: u.shape().to_vec(),
                });
            }
            let lhs = t.value(cu).dot(&v);
            let rhs = u.dot(t.value(ctv));
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        }
        out.push(CheckOutcome { name: format!("adjoint k{k} s{s} p{p}"), worst, tol: ADJOINT_TOL, seeds });
    }
    Ok(out)
}
