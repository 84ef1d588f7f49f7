//! Executable network built from an [`ArchitectureSpec`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureSpec, BlockKind, BlockSpec, INPUT_TAP};
use super::layers::{BatchNorm, BnCache, Conv2d, PRelu, Padding, Param};
use super::shuffle::{pixel_shuffle, pixel_unshuffle};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Residual block: `PReLU(BN(conv2(PReLU(BN(conv1 x)))) + skip x)`.
///
/// DRBLK strides `conv1` and `skip` by 2. URBLK makes both emit `4·c` channels
/// and pixel-shuffles them back to `c` at twice the resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual<T> {
    pub kind: BlockKind,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm<T>,
    pub act1: PRelu<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm<T>,
    pub skip: Conv2d<T>,
    pub act_out: PRelu<T>,
}

#[derive(Debug, Clone)]
struct ResidualCache<T> {
    x: Tensor<T>,
    bn1: BnCache<T>,
    b1: Tensor<T>,
    a1: Tensor<T>,
    bn2: BnCache<T>,
    z: Tensor<T>,
}

impl<T: Real> Residual<T> {
    fn new(kind: BlockKind, in_c: usize, out_c: usize, kernel: usize) -> Self {
        let (stride, emit) = match kind {
            BlockKind::DRBLK => (2, out_c),
            BlockKind::URBLK => (1, out_c * BlockSpec::UPSCALE * BlockSpec::UPSCALE),
            _ => (1, out_c),
        };
        Self {
            kind,
            conv1: Conv2d::new(in_c, emit, kernel, stride, Padding::Same),
            bn1: BatchNorm::new(out_c),
            act1: PRelu::new(out_c),
            conv2: Conv2d::new(out_c, out_c, kernel, 1, Padding::Same),
            bn2: BatchNorm::new(out_c),
            skip: Conv2d::new(in_c, emit, 1, stride, Padding::Same),
            act_out: PRelu::new(out_c),
        }
    }

    fn upscale(&self) -> Option<usize> {
        (self.kind == BlockKind::URBLK).then_some(BlockSpec::UPSCALE)
    }

    fn shuffle(&self, t: Tensor<T>) -> Result<Tensor<T>> {
        match self.upscale() {
            Some(s) => pixel_shuffle(&t, s),
            None => Ok(t),
        }
    }

    fn unshuffle(&self, t: Tensor<T>) -> Result<Tensor<T>> {
        match self.upscale() {
            Some(s) => pixel_unshuffle(&t, s),
            None => Ok(t),
        }
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s1 = self.shuffle(self.conv1.forward(x)?)?;
        let a1 = self.act1.forward(&self.bn1.forward_eval(&s1)?)?;
        drop(s1);
        let mut z = self.bn2.forward_eval(&self.conv2.forward(&a1)?)?;
        drop(a1);
        z.add_assign(&self.shuffle(self.skip.forward(x)?)?);
        self.act_out.forward(&z)
    }

    fn forward_train(&mut self, x: Tensor<T>) -> Result<(Tensor<T>, ResidualCache<T>)> {
        let s1 = self.shuffle(self.conv1.forward(&x)?)?;
        let (b1, bn1) = self.bn1.forward_train(&s1)?;
        let a1 = self.act1.forward(&b1)?;
        let (mut z, bn2) = self.bn2.forward_train(&self.conv2.forward(&a1)?)?;
        z.add_assign(&self.shuffle(self.skip.forward(&x)?)?);
        let y = self.act_out.forward(&z)?;
        Ok((y, ResidualCache { x, bn1, b1, a1, bn2, z }))
    }

    fn backward(&mut self, cache: &ResidualCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dz = self.act_out.backward(&cache.z, dy);
        let dskip = self.unshuffle(dz.clone())?;
        let mut dx = self
            .skip
            .backward(&cache.x, &dskip, true)?
            .expect("input gradient requested");
        let dc2 = self.bn2.backward(&cache.bn2, &dz);
        let da1 = self.conv2.backward(&cache.a1, &dc2, true)?.expect("input gradient requested");
        let db1 = self.act1.backward(&cache.b1, &da1);
        let ds1 = self.bn1.backward(&cache.bn1, &db1);
        let dc1 = self.unshuffle(ds1)?;
        let dx_main = self.conv1.backward(&cache.x, &dc1, true)?.expect("input gradient requested");
        dx.add_assign(&dx_main);
        Ok(dx)
    }

    fn cast<U: Real>(&self) -> Residual<U> {
        Residual {
            kind: self.kind,
            conv1: self.conv1.cast(),
            bn1: self.bn1.cast(),
            act1: self.act1.cast(),
            conv2: self.conv2.cast(),
            bn2: self.bn2.cast(),
            skip: self.skip.cast(),
            act_out: self.act_out.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Unit<T> {
    Norm(BatchNorm<T>),
    Conv(Conv2d<T>),
    NormAct(BatchNorm<T>, PRelu<T>),
    Residual(Box<Residual<T>>),
}

#[derive(Debug, Clone)]
enum UnitCache<T> {
    Norm(BnCache<T>),
    Conv(Tensor<T>),
    NormAct(BnCache<T>, Tensor<T>),
    Residual(Box<ResidualCache<T>>),
}

impl<T: Real> Unit<T> {
    fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Unit::Norm(bn) => bn.forward_eval(x),
            Unit::Conv(conv) => conv.forward(x),
            Unit::NormAct(bn, act) => act.forward(&bn.forward_eval(x)?),
            Unit::Residual(r) => r.forward_eval(x),
        }
    }

    fn forward_train(&mut self, x: Tensor<T>) -> Result<(Tensor<T>, UnitCache<T>)> {
        Ok(match self {
            Unit::Norm(bn) => {
                let (y, c) = bn.forward_train(&x)?;
                (y, UnitCache::Norm(c))
            }
            Unit::Conv(conv) => (conv.forward(&x)?, UnitCache::Conv(x)),
            Unit::NormAct(bn, act) => {
                let (b, c) = bn.forward_train(&x)?;
                (act.forward(&b)?, UnitCache::NormAct(c, b))
            }
            Unit::Residual(r) => {
                let (y, c) = r.forward_train(x)?;
                (y, UnitCache::Residual(Box::new(c)))
            }
        })
    }

    fn backward(&mut self, cache: &UnitCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match (self, cache) {
            (Unit::Norm(bn), UnitCache::Norm(c)) => Ok(bn.backward(c, dy)),
            (Unit::Conv(conv), UnitCache::Conv(x)) => Ok(conv.backward(x, dy, true)?.expect("input gradient requested")),
            (Unit::NormAct(bn, act), UnitCache::NormAct(c, b)) => {
                let db = act.backward(b, dy);
                Ok(bn.backward(c, &db))
            }
            (Unit::Residual(r), UnitCache::Residual(c)) => r.backward(c, dy),
            _ => unreachable!("cache recorded by a different unit kind"),
        }
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        let conv = |name: &str, c: &'a Conv2d<T>, out: &mut Vec<(String, &'a Param<T>)>| {
            out.push((format!("{prefix}.{name}.weight"), &c.weight));
            out.push((format!("{prefix}.{name}.bias"), &c.bias));
        };
        let bn = |name: &str, b: &'a BatchNorm<T>, out: &mut Vec<(String, &'a Param<T>)>| {
            out.push((format!("{prefix}.{name}.gamma"), &b.gamma));
            out.push((format!("{prefix}.{name}.beta"), &b.beta));
        };
        let act = |name: &str, a: &'a PRelu<T>, out: &mut Vec<(String, &'a Param<T>)>| {
            out.push((format!("{prefix}.{name}.alpha"), &a.alpha));
        };
        match self {
            Unit::Norm(b) => bn("bn", b, out),
            Unit::Conv(c) => conv("conv", c, out),
            Unit::NormAct(b, a) => {
                bn("bn", b, out);
                act("act", a, out);
            }
            Unit::Residual(r) => {
                conv("conv1", &r.conv1, out);
                bn("bn1", &r.bn1, out);
                act("act1", &r.act1, out);
                conv("conv2", &r.conv2, out);
                bn("bn2", &r.bn2, out);
                conv("skip", &r.skip, out);
                act("act_out", &r.act_out, out);
            }
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        fn conv<'a, T>(prefix: &str, name: &str, c: &'a mut Conv2d<T>, out: &mut Vec<(String, &'a mut Param<T>)>) {
            out.push((format!("{prefix}.{name}.weight"), &mut c.weight));
            out.push((format!("{prefix}.{name}.bias"), &mut c.bias));
        }
        fn bn<'a, T>(prefix: &str, name: &str, b: &'a mut BatchNorm<T>, out: &mut Vec<(String, &'a mut Param<T>)>) {
            out.push((format!("{prefix}.{name}.gamma"), &mut b.gamma));
            out.push((format!("{prefix}.{name}.beta"), &mut b.beta));
        }
        fn act<'a, T>(prefix: &str, name: &str, a: &'a mut PRelu<T>, out: &mut Vec<(String, &'a mut Param<T>)>) {
            out.push((format!("{prefix}.{name}.alpha"), &mut a.alpha));
        }
        match self {
            Unit::Norm(b) => bn(prefix, "bn", b, out),
            Unit::Conv(c) => conv(prefix, "conv", c, out),
            Unit::NormAct(b, a) => {
                bn(prefix, "bn", b, out);
                act(prefix, "act", a, out);
            }
            Unit::Residual(r) => {
                let r = &mut **r;
                conv(prefix, "conv1", &mut r.conv1, out);
                bn(prefix, "bn1", &mut r.bn1, out);
                act(prefix, "act1", &mut r.act1, out);
                conv(prefix, "conv2", &mut r.conv2, out);
                bn(prefix, "bn2", &mut r.bn2, out);
                conv(prefix, "skip", &mut r.skip, out);
                act(prefix, "act_out", &mut r.act_out, out);
            }
        }
    }

    fn batch_norms_mut(&mut self) -> Vec<(&'static str, &mut BatchNorm<T>)> {
        match self {
            Unit::Norm(b) | Unit::NormAct(b, _) => vec![("bn", b)],
            Unit::Conv(_) => vec![],
            Unit::Residual(r) => {
                let r = &mut **r;
                vec![("bn1", &mut r.bn1), ("bn2", &mut r.bn2)]
            }
        }
    }

    fn batch_norms(&self) -> Vec<(&'static str, &BatchNorm<T>)> {
        match self {
            Unit::Norm(b) | Unit::NormAct(b, _) => vec![("bn", b)],
            Unit::Conv(_) => vec![],
            Unit::Residual(r) => vec![("bn1", &r.bn1), ("bn2", &r.bn2)],
        }
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv2d<T>> {
        match self {
            Unit::Conv(c) => vec![c],
            Unit::Residual(r) => {
                let r = &mut **r;
                vec![&mut r.conv1, &mut r.conv2, &mut r.skip]
            }
            _ => vec![],
        }
    }

    fn cast<U: Real>(&self) -> Unit<U> {
        match self {
            Unit::Norm(b) => Unit::Norm(b.cast()),
            Unit::Conv(c) => Unit::Conv(c.cast()),
            Unit::NormAct(b, a) => Unit::NormAct(b.cast(), a.cast()),
            Unit::Residual(r) => Unit::Residual(Box::new(r.cast())),
        }
    }
}

struct Tape<T> {
    caches: Vec<UnitCache<T>>,
    input_shape: [usize; 4],
}

/// Residual encoder-decoder with parameters and batch-norm statistics.
pub struct Model<T: Real = f32> {
    spec: ArchitectureSpec,
    units: Vec<Unit<T>>,
    /// Tap indices feeding each unit; tap 0 is the network input, tap `i + 1` is unit `i`.
    sources: Vec<Vec<usize>>,
    /// Channel count of each tap.
    tap_channels: Vec<usize>,
    /// Index of the last unit reading each tap.
    last_use: Vec<usize>,
    mode: Mode,
    tape: Option<Tape<T>>,
}

impl<T: Real> std::fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("spec", &self.spec.name)
            .field("mode", &self.mode)
            .field("parameters", &self.count_parameters())
            .finish()
    }
}

impl<T: Real> Clone for Model<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            units: self.units.clone(),
            sources: self.sources.clone(),
            tap_channels: self.tap_channels.clone(),
            last_use: self.last_use.clone(),
            mode: self.mode,
            tape: None,
        }
    }
}

/// Builds a `f32` model with seeded He-normal initialization.
pub fn build_model(spec: &ArchitectureSpec, seed: u64) -> Result<Model<f32>> {
    Model::build(spec, seed)
}

impl<T: Real> Model<T> {
    /// Uninitialized-weights skeleton (all convolution weights zero).
    pub fn skeleton(spec: &ArchitectureSpec) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut names = vec![INPUT_TAP.to_string()];
        names.extend(spec.blocks.iter().map(|b| b.name.clone()));
        let mut tap_channels = vec![spec.input_channels];
        tap_channels.extend(shapes.iter().map(|s| s.channels));
        let mut units = Vec::with_capacity(spec.blocks.len());
        let mut sources = Vec::with_capacity(spec.blocks.len());
        let mut last_use = vec![0usize; names.len()];
        for (i, block) in spec.blocks.iter().enumerate() {
            let src: Vec<usize> = block
                .inputs
                .iter()
                .map(|n| names.iter().position(|m| m == n).expect("validated by infer_shapes"))
                .collect();
            for &s in &src {
                last_use[s] = i;
            }
            let in_c: usize = src.iter().map(|&s| tap_channels[s]).sum();
            units.push(match block.kind {
                BlockKind::BN => Unit::Norm(BatchNorm::new(in_c)),
                BlockKind::BNAct => Unit::NormAct(BatchNorm::new(in_c), PRelu::new(in_c)),
                BlockKind::Conv => Unit::Conv(Conv2d::new(
                    in_c,
                    block.out_channels,
                    block.kernel,
                    block.stride,
                    block.padding,
                )),
                kind => Unit::Residual(Box::new(Residual::new(kind, in_c, block.out_channels, block.kernel))),
            });
            sources.push(src);
        }
        Ok(Self {
            spec: spec.clone(),
            units,
            sources,
            tap_channels,
            last_use,
            mode: Mode::Eval,
            tape: None,
        })
    }

    /// He-normal convolution kernels from a seeded generator; biases 0, BN (1, 0), PReLU 0.25.
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let mut model = Self::skeleton(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for unit in &mut model.units {
            for conv in unit.convs_mut() {
                conv.init_he(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Eval {
            self.tape = None;
        }
    }

    pub fn units(&self) -> &[Unit<T>] {
        &self.units
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.spec.input_size, self.spec.input_size, self.spec.input_channels]
    }

    pub fn output_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.spec.output_size, self.spec.output_size, 1]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = self.input_shape(x.batch());
        if x.shape() != want || x.batch() == 0 {
            return Err(Error::invalid(format!(
                "model `{}` expects input [B, {}, {}, {}], got {:?}",
                self.spec.name, want[1], want[2], want[3],
                x.shape()
            )));
        }
        Ok(())
    }

    fn gather(&self, taps: &mut [Option<Tensor<T>>], unit: usize) -> Result<Tensor<T>> {
        let take = |taps: &mut [Option<Tensor<T>>], s: usize| -> Tensor<T> {
            if self.last_use[s] == unit {
                taps[s].take().expect("tap alive until last use")
            } else {
                taps[s].clone().expect("tap alive until last use")
            }
        };
        match self.sources[unit].as_slice() {
            [a] => Ok(take(taps, *a)),
            [a, b] => {
                let (ta, tb) = (take(taps, *a), take(taps, *b));
                Tensor::concat_channels(&ta, &tb)
            }
            _ => unreachable!("validated by infer_shapes"),
        }
    }

    /// Inference with running batch-norm statistics; a pure function of parameters and input.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut taps: Vec<Option<Tensor<T>>> = vec![None; self.units.len() + 1];
        taps[0] = Some(x.clone());
        for i in 0..self.units.len() {
            let input = self.gather(&mut taps, i)?;
            taps[i + 1] = Some(self.units[i].forward_eval(&input)?);
        }
        Ok(taps.pop().flatten().expect("final tap"))
    }

    /// Training forward pass with batch statistics; records what `backward` needs.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut taps: Vec<Option<Tensor<T>>> = vec![None; self.units.len() + 1];
        taps[0] = Some(x.clone());
        let mut caches = Vec::with_capacity(self.units.len());
        for i in 0..self.units.len() {
            let input = self.gather(&mut taps, i)?;
            let (y, cache) = self.units[i].forward_train(input)?;
            caches.push(cache);
            taps[i + 1] = Some(y);
        }
        self.tape = Some(Tape {
            caches,
            input_shape: x.shape(),
        });
        Ok(taps.pop().flatten().expect("final tap"))
    }

    /// Dispatches on the current mode.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Backpropagates `dy` through the last training forward pass.
    ///
    /// Parameter gradients accumulate into each [`Param::grad`]; the returned
    /// tensor is the gradient with respect to the network input.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::invalid("backward called without a preceding training forward"))?;
        let out_shape = self.output_shape(tape.input_shape[0]);
        if dy.shape() != out_shape {
            return Err(Error::invalid(format!(
                "output gradient {:?} does not match output {out_shape:?}",
                dy.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.units.len() + 1];
        grads[self.units.len()] = Some(dy.clone());
        for i in (0..self.units.len()).rev() {
            let Some(g) = grads[i + 1].take() else { continue };
            let dx = self.units[i].backward(&tape.caches[i], &g)?;
            let src = &self.sources[i];
            let parts = match src.as_slice() {
                [a] => vec![(*a, dx)],
                [a, b] => {
                    let (da, db) = dx.split_channels(self.tap_channels[*a]);
                    vec![(*a, da), (*b, db)]
                }
                _ => unreachable!(),
            };
            for (s, d) in parts {
                match grads[s].as_mut() {
                    Some(acc) => acc.add_assign(&d),
                    None => grads[s] = Some(d),
                }
            }
        }
        Ok(grads[0].take().unwrap_or_else(|| Tensor::zeros(tape.input_shape)))
    }

    /// Trainable arrays in a fixed order with dotted names like `RBLK3.conv1.weight`.
    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (unit, block) in self.units.iter().zip(&self.spec.blocks) {
            unit.collect_params(&block.name, &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (unit, block) in self.units.iter_mut().zip(&self.spec.blocks) {
            unit.collect_params_mut(&block.name, &mut out);
        }
        out
    }

    /// Batch-norm running statistics, named `<block>.<bn>.running_mean|running_var`.
    pub fn buffers(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        for (unit, block) in self.units.iter().zip(&self.spec.blocks) {
            for (name, bn) in unit.batch_norms() {
                out.push((format!("{}.{name}.running_mean", block.name), &bn.running_mean));
                out.push((format!("{}.{name}.running_var", block.name), &bn.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (unit, block) in self.units.iter_mut().zip(&self.spec.blocks) {
            for (name, bn) in unit.batch_norms_mut() {
                out.push((format!("{}.{name}.running_mean", block.name), &mut bn.running_mean));
                out.push((format!("{}.{name}.running_var", block.name), &mut bn.running_var));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Trainable scalars: conv weights and biases, BN scale and offset, PReLU slopes.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.value.iter().all(|v| v.is_finite()))
            && self.buffers().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// Same network with every array converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            units: self.units.iter().map(|u| u.cast()).collect(),
            sources: self.sources.clone(),
            tap_channels: self.tap_channels.clone(),
            last_use: self.last_use.clone(),
            mode: self.mode,
            tape: None,
        }
    }
}

/// Shorthand for [`Model::count_parameters`].
pub fn count_parameters<T: Real>(model: &Model<T>) -> usize {
    model.count_parameters()
}
