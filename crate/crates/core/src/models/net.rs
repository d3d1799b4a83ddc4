//! Both networks are described as a flat list of [`Stage`]s. The same list
//! drives parameter allocation, the forward pass and shape tracing, so the
//! three cannot drift apart.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Architecture, Conditioning, Downsample, ModelConfig};
use super::ModelError;
use crate::tensorgrad::kernels::{conv_output_extent, conv_transpose_output_extent};
use crate::tensorgrad::{Real, Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

/// Points in the network whose activations are exposed as the latent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Point {
    EncoderOut,
    Refined,
    Concatenated,
    Fused,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    /// Appends the broadcast inflow speed as one input channel.
    InputCondition,
    /// 3×3×3 convolution (padding 1) + instance norm + PReLU.
    Block { name: String, cin: usize, cout: usize, stride: usize },
    Pool,
    /// 2×2×2 stride-2 transposed convolution + instance norm + PReLU.
    Up { name: String, cin: usize, cout: usize },
    PushSkip,
    /// Concatenates the most recent skip ahead of the current features.
    ConcatSkip,
    /// Drops the most recent skip unused.
    DropSkip,
    /// Broadcast inflow speed concatenated to `channels` features.
    LatentConcat { channels: usize },
    /// Plain 1×1×1 convolution with bias.
    Conv1 { name: String, cin: usize, cout: usize },
    /// Plain 3×3×3 convolution to one output channel.
    Head { name: String, cin: usize },
    Mark(Point),
}

pub fn stages(cfg: &ModelConfig) -> Vec<Stage> {
    let b = |name: String, cin: usize, cout: usize, stride: usize| Stage::Block { name, cin, cout, stride };
    let lvad = cfg.architecture == Architecture::LvadNet3d;
    let c = |l: usize| cfg.channels(l);
    let depth = cfg.depth;
    let mut s = Vec::new();
    if cfg.conditioning == Conditioning::Input {
        s.push(Stage::InputCondition);
    }
    let mut cin = cfg.input_channels();
    for l in 1..=depth {
        // The autoencoder keeps channels in the first block of every level
        // past the first and doubles in the second; the U-Net reaches the
        // level width in its first block.
        let mid = if lvad && l > 1 { c(l - 1) } else { c(l) };
        s.push(b(format!("enc{l}.b1"), cin, mid, 1));
        s.push(b(format!("enc{l}.b2"), mid, c(l), 1));
        cin = c(l);
        if l < depth {
            s.push(Stage::PushSkip);
        }
        match cfg.downsample[l - 1] {
            Downsample::MaxPool => s.push(Stage::Pool),
            Downsample::Strided => s.push(b(format!("enc{l}.down"), c(l), c(l), 2)),
            Downsample::None => {}
        }
    }
    let cl = c(depth);
    s.push(Stage::Mark(Point::EncoderOut));
    if lvad {
        s.push(b("latent.b1".into(), cl, cl, 1));
        s.push(b("latent.b2".into(), cl, cl, 1));
    }
    s.push(Stage::Mark(Point::Refined));
    if cfg.conditioning == Conditioning::Latent {
        s.push(Stage::LatentConcat { channels: cl });
        s.push(Stage::Mark(Point::Concatenated));
        if lvad {
            s.push(Stage::Conv1 { name: "cond.fuse".into(), cin: 2 * cl, cout: cl });
        } else {
            s.push(b("cond.fuse".into(), 2 * cl, cl, 1));
        }
    }
    s.push(Stage::Mark(Point::Fused));
    for l in (1..depth).rev() {
        let name = format!("dec{l}.up");
        if cfg.downsample[l - 1] == Downsample::None {
            s.push(b(name, c(l + 1), c(l), 1));
        } else {
            s.push(Stage::Up { name, cin: c(l + 1), cout: c(l) });
        }
        let first_in = if cfg.skips {
            s.push(Stage::ConcatSkip);
            2 * c(l)
        } else {
            s.push(Stage::DropSkip);
            c(l)
        };
        s.push(b(format!("dec{l}.b1"), first_in, c(l), 1));
        s.push(b(format!("dec{l}.b2"), c(l), c(l), 1));
    }
    s.push(Stage::Head { name: "head".into(), cin: c(1) });
    s
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Kaiming-uniform with gain matched to the PReLU slope.
    Kaiming { fan_in: usize },
    Bias { fan_in: usize },
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut push = |name: &str, suffix: &str, shape: Vec<usize>, init: Init| {
        out.push(ParamSpec { name: format!("{name}.{suffix}"), shape, init });
    };
    for st in stages(cfg) {
        match st {
            Stage::Block { name, cin, cout, .. } => {
                let fan_in = cin * 27;
                push(&name, "weight", vec![cout, cin, 3, 3, 3], Init::Kaiming { fan_in });
                push(&name, "bias", vec![cout], Init::Bias { fan_in });
                push(&name, "slope", vec![cout], Init::Const(PRELU_INIT));
            }
            Stage::Up { name, cin, cout } => {
                // Transposed weights are [Cin, Cout, k, k, k]; fan-in follows
                // the second axis.
                let fan_in = cout * 8;
                push(&name, "weight", vec![cin, cout, 2, 2, 2], Init::Kaiming { fan_in });
                push(&name, "bias", vec![cout], Init::Bias { fan_in });
                push(&name, "slope", vec![cout], Init::Const(PRELU_INIT));
            }
            Stage::Conv1 { name, cin, cout } => {
                push(&name, "weight", vec![cout, cin, 1, 1, 1], Init::Kaiming { fan_in: cin });
                push(&name, "bias", vec![cout], Init::Bias { fan_in: cin });
            }
            Stage::Head { name, cin } => {
                let fan_in = cin * 27;
                push(&name, "weight", vec![1, cin, 3, 3, 3], Init::Kaiming { fan_in });
                push(&name, "bias", vec![1], Init::Bias { fan_in });
            }
            _ => {}
        }
    }
    out
}

/// Named parameter tensors in allocation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Tensor<f32>)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        let (names, tensors) = entries.into_iter().unzip();
        ParamStore { names, tensors, index }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Activations of interest around the bottleneck.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentState {
    pub x_l: Var,
    pub y_l: Var,
    pub z: Option<Var>,
    pub fused: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOutput {
    pub prediction: Var,
    pub latent: LatentState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    stages: Vec<Stage>,
    params: ParamStore,
}

impl Model {
    /// Builds and initializes the network described by `cfg`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let gain = (2.0 / (1.0 + PRELU_INIT * PRELU_INIT)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = param_specs(&cfg)
            .into_iter()
            .map(|p| {
                let t = match p.init {
                    Init::Kaiming { fan_in } => {
                        Tensor::uniform(&p.shape, gain * (3.0 / fan_in as f64).sqrt(), &mut rng)
                    }
                    Init::Bias { fan_in } => Tensor::uniform(&p.shape, 1.0 / (fan_in as f64).sqrt(), &mut rng),
                    Init::Const(v) => Tensor::full(&p.shape, v as f32),
                };
                (p.name, t)
            })
            .collect();
        Ok(Model { stages: stages(&cfg), cfg, params: ParamStore::new(entries) })
    }

    /// Wraps existing parameters, checking names and shapes against `cfg`.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if specs.len() != params.len() {
            return Err(ModelError::Config(format!(
                "{} parameters given, the config needs {}",
                params.len(),
                specs.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(Model { stages: stages(&cfg), cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Records every parameter on `tape`, in store order.
    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, trainable: bool) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.leaf(t.cast(), trainable)).collect()
    }

    /// Runs the network on `input [N, C, D, H, W]` with per-sample (or a
    /// single shared) inflow speed `v_in`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, params: &[Var], input: Var, v_in: Var) -> Result<ForwardOutput, ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::Config(format!("{} bound parameters, model has {}", params.len(), self.params.len())));
        }
        let shape = tape.shape(input).to_vec();
        check_input(&self.cfg, &shape)?;
        let n = shape[0];
        let vshape = tape.shape(v_in).to_vec();
        let vn: usize = vshape.iter().product();
        if vn != 1 && vn != n {
            return Err(ModelError::Shape(format!("v_in {vshape:?} must hold 1 or {n} values")));
        }
        let p = |name: &str, suffix: &str| -> Var { params[self.params.position(&format!("{name}.{suffix}")).expect("stage params allocated")] };

        let mut x = input;
        let mut skips: Vec<Var> = Vec::new();
        let mut marks: [Option<Var>; 4] = [None; 4];
        for st in &self.stages {
            x = match st {
                Stage::InputCondition => {
                    let s = tape.shape(x).to_vec();
                    let b = tape.broadcast_scalar(v_in, &[s[0], 1, s[2], s[3], s[4]])?;
                    tape.concat_channels(&[x, b])?
                }
                Stage::Block { name, stride, .. } => {
                    let y = tape.conv3d(x, p(name, "weight"), Some(p(name, "bias")), [*stride; 3], [1; 3])?;
                    let y = tape.instance_norm3d(y, NORM_EPS)?;
                    tape.prelu(y, p(name, "slope"))?
                }
                Stage::Pool => tape.maxpool3d(x)?,
                Stage::Up { name, .. } => {
                    let y = tape.conv_transpose3d(x, p(name, "weight"), Some(p(name, "bias")), [2; 3], [0; 3])?;
                    let y = tape.instance_norm3d(y, NORM_EPS)?;
                    tape.prelu(y, p(name, "slope"))?
                }
                Stage::PushSkip => {
                    skips.push(x);
                    x
                }
                Stage::ConcatSkip => {
                    let s = skips.pop().expect("skip pushed by encoder");
                    tape.concat_channels(&[s, x])?
                }
                Stage::DropSkip => {
                    skips.pop();
                    x
                }
                Stage::LatentConcat { channels } => condition_concat(tape, x, v_in, *channels)?,
                Stage::Conv1 { name, .. } => tape.conv3d(x, p(name, "weight"), Some(p(name, "bias")), [1; 3], [0; 3])?,
                Stage::Head { name, .. } => tape.conv3d(x, p(name, "weight"), Some(p(name, "bias")), [1; 3], [1; 3])?,
                Stage::Mark(pt) => {
                    marks[*pt as usize] = Some(x);
                    x
                }
            };
        }
        let latent = LatentState {
            x_l: marks[Point::EncoderOut as usize].expect("marked"),
            y_l: marks[Point::Refined as usize].expect("marked"),
            z: marks[Point::Concatenated as usize],
            fused: marks[Point::Fused as usize].expect("marked"),
        };
        Ok(ForwardOutput { prediction: x, latent })
    }

    /// Inference on `input [N, C, D, H, W]`.
    pub fn predict(&self, input: &Tensor<f32>, v_in: &[f32]) -> Result<Tensor<f32>, ModelError> {
        let mut tape = Tape::<f32>::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let v = tape.constant(Tensor::new(&[v_in.len()], v_in.to_vec())?);
        let out = self.forward(&mut tape, &params, x, v)?;
        Ok(tape.value(out.prediction).clone())
    }
}

fn check_input(cfg: &ModelConfig, shape: &[usize]) -> Result<(), ModelError> {
    if shape.len() != 5 {
        return Err(ModelError::Shape(format!("input {shape:?} must be [N, C, D, H, W]")));
    }
    if shape[1] != cfg.in_channels {
        return Err(ModelError::Shape(format!(
            "input {shape:?} has {} channels, the model expects {}",
            shape[1], cfg.in_channels
        )));
    }
    let div = cfg.spatial_divisor();
    if shape[2..].iter().any(|&e| e % div != 0) {
        return Err(ModelError::Shape(format!("spatial extents {:?} must be divisible by {div}", &shape[2..])));
    }
    Ok(())
}

/// Broadcasts `v_in` to `channels` feature maps shaped like `y` and appends
/// them to `y`.
pub fn condition_concat<F: Real>(tape: &mut Tape<F>, y: Var, v_in: Var, channels: usize) -> Result<Var, ModelError> {
    let s = tape.shape(y).to_vec();
    let b = tape.broadcast_scalar(v_in, &[s[0], channels, s[2], s[3], s[4]])?;
    Ok(tape.concat_channels(&[y, b])?)
}

/// Latent conditioning: concatenate the broadcast inflow speed to `y_l` and
/// fuse back to `y_l`'s width with a 1×1×1 convolution.
pub fn condition_latent<F: Real>(tape: &mut Tape<F>, y_l: Var, v_in: Var, weight: Var, bias: Option<Var>) -> Result<(Var, Var), ModelError> {
    let c = tape.shape(y_l)[1];
    let z = condition_concat(tape, y_l, v_in, c)?;
    let fused = tape.conv3d(z, weight, bias, [1; 3], [0; 3])?;
    Ok((z, fused))
}

/// Activation shapes along the network, computed from the stage list alone.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeTrace {
    /// Output of every encoder level before downsampling.
    pub levels: Vec<[usize; 5]>,
    pub encoder_out: [usize; 5],
    pub concatenated: Option<[usize; 5]>,
    pub fused: [usize; 5],
    pub output: [usize; 5],
}

pub fn trace_shapes(cfg: &ModelConfig, input: [usize; 5]) -> Result<ShapeTrace, ModelError> {
    cfg.validate()?;
    check_input(cfg, &input)?;
    let mut x = input;
    let mut skips = Vec::new();
    let mut levels = Vec::new();
    let mut marks: [Option<[usize; 5]>; 4] = [None; 4];
    let ext = |s: [usize; 5], f: &dyn Fn(usize) -> Option<usize>| -> Result<[usize; 5], ModelError> {
        let mut o = s;
        for a in 2..5 {
            o[a] = f(s[a]).ok_or_else(|| ModelError::Shape(format!("extent {} collapses", s[a])))?;
        }
        Ok(o)
    };
    for st in stages(cfg) {
        match st {
            Stage::InputCondition => x[1] += 1,
            Stage::Block { cin, cout, stride, .. } => {
                if x[1] != cin {
                    return Err(ModelError::Shape(format!("block expects {cin} channels, got {}", x[1])));
                }
                x = ext(x, &|n| conv_output_extent(n, 3, stride, 1))?;
                x[1] = cout;
            }
            Stage::Pool => x = ext(x, &|n| (n % 2 == 0).then_some(n / 2))?,
            Stage::Up { cout, .. } => {
                x = ext(x, &|n| conv_transpose_output_extent(n, 2, 2, 0))?;
                x[1] = cout;
            }
            Stage::PushSkip => {
                skips.push(x);
                levels.push(x);
            }
            Stage::ConcatSkip => {
                let s: [usize; 5] = skips.pop().expect("skip");
                if s[2..] != x[2..] {
                    return Err(ModelError::Shape(format!("skip {s:?} does not match {x:?}")));
                }
                x[1] += s[1];
            }
            Stage::DropSkip => {
                skips.pop();
            }
            Stage::LatentConcat { channels } => x[1] += channels,
            Stage::Conv1 { cout, .. } => x[1] = cout,
            Stage::Head { .. } => {
                x = ext(x, &|n| conv_output_extent(n, 3, 1, 1))?;
                x[1] = 1;
            }
            Stage::Mark(p) => {
                if p == Point::EncoderOut {
                    levels.push(x);
                }
                marks[p as usize] = Some(x);
            }
        }
    }
    Ok(ShapeTrace {
        levels,
        encoder_out: marks[Point::EncoderOut as usize].expect("marked"),
        concatenated: marks[Point::Concatenated as usize],
        fused: marks[Point::Fused as usize].expect("marked"),
        output: x,
    })
}
