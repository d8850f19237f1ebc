//! Network builders: ConvNet-8, the five-layer visualization net, and the
//! ConvNet-8 variant with an extra linear conv after every activation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::activations::{make_activation, ActivationSpec, Pointwise, PointwiseKind};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, Mode, Param, ParamKind};
use crate::optim::{conv_fans, xavier_uniform, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CONVNET8_CHANNELS: [usize; 8] = [32, 32, 64, 64, 128, 128, 256, 256];
pub const CONVNET8_STRIDES: [usize; 8] = [1, 1, 2, 1, 2, 1, 2, 1];
pub const CONVNET8_FC: [usize; 2] = [512, 128];
pub const VIZNET5_CHANNELS: [usize; 5] = [32, 64, 128, 256, 512];
pub const VIZNET5_STRIDES: [usize; 5] = [1, 2, 2, 2, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    ConvNet8,
    VizNet5,
    ConvNet8Extended,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::ConvNet8 => "convnet8",
            Arch::VizNet5 => "viznet5",
            Arch::ConvNet8Extended => "convnet8-extended",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convnet8" => Ok(Arch::ConvNet8),
            "viznet5" => Ok(Arch::VizNet5),
            "convnet8-extended" => Ok(Arch::ConvNet8Extended),
            other => Err(Error::Parse(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub activation: ActivationSpec,
    pub width_mult: f64,
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_size: usize,
    /// Batch norm after every backbone conv.
    pub bn: bool,
}

impl ModelConfig {
    pub fn new(arch: Arch, activation: ActivationSpec) -> Self {
        ModelConfig {
            arch,
            activation,
            width_mult: 1.0,
            num_classes: 10,
            input_channels: 3,
            input_size: 32,
            bn: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return Err(Error::InvalidConfig(format!("width multiplier must be positive (got {})", self.width_mult)));
        }
        if self.num_classes == 0 || self.input_channels == 0 || self.input_size == 0 {
            return Err(Error::InvalidConfig("classes, channels and input size must be positive".into()));
        }
        if self.arch != Arch::VizNet5 && !matches!(self.input_size, 28 | 32) {
            return Err(Error::InvalidConfig(format!(
                "{} expects 28x28 or 32x32 inputs (got {})",
                self.arch, self.input_size
            )));
        }
        if self.arch == Arch::ConvNet8Extended && self.activation != ActivationSpec::Relu {
            return Err(Error::InvalidConfig("the extended control is defined with relu only".into()));
        }
        Ok(())
    }

    /// Backbone conv output channels after applying the width multiplier.
    pub fn conv_channels(&self) -> Vec<usize> {
        let base: &[usize] = match self.arch {
            Arch::VizNet5 => &VIZNET5_CHANNELS,
            _ => &CONVNET8_CHANNELS,
        };
        base.iter().map(|&c| scaled_width(c, self.width_mult)).collect()
    }

    /// Single-line `key=value` description stored in checkpoints.
    pub fn header(&self) -> String {
        format!(
            "arch={} activation={} width={} classes={} channels={} size={} bn={}",
            self.arch,
            self.activation,
            self.width_mult,
            self.num_classes,
            self.input_channels,
            self.input_size,
            self.bn
        )
    }

    pub fn parse_header(line: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(Arch::ConvNet8, ActivationSpec::Relu);
        let mut seen = BTreeSet::new();
        for field in line.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("header field `{field}` is not key=value")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| Error::Parse(format!("{key}: {e}")));
            match key {
                "arch" => cfg.arch = value.parse()?,
                "activation" => cfg.activation = value.parse()?,
                "width" => cfg.width_mult = value.parse().map_err(|e| Error::Parse(format!("width: {e}")))?,
                "classes" => cfg.num_classes = num(value)?,
                "channels" => cfg.input_channels = num(value)?,
                "size" => cfg.input_size = num(value)?,
                "bn" => cfg.bn = value.parse().map_err(|e| Error::Parse(format!("bn: {e}")))?,
                _ => return Err(Error::Parse(format!("unknown header key `{key}`"))),
            }
            seen.insert(key.to_string());
        }
        for key in ["arch", "activation", "width", "classes", "channels", "size", "bn"] {
            if !seen.contains(key) {
                return Err(Error::Parse(format!("header is missing `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `floor(c · w)`, never below 1.
pub fn scaled_width(channels: usize, width_mult: f64) -> usize {
    ((channels as f64 * width_mult).floor() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Conv,
    Norm,
    Activation,
    Linear,
    Reshape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamFilter {
    All,
    /// Weights of the backbone convolutions only (not biases, not the
    /// convolutions inside activation blocks).
    ConvWeights,
}

struct Slot<T: Scalar> {
    name: String,
    role: Role,
    layer: Box<dyn Layer<T>>,
}

/// A static chain of named layers.
pub struct Model<T: Scalar> {
    pub config: Option<ModelConfig>,
    slots: Vec<Slot<T>>,
    mode: Mode,
}

impl<T: Scalar> Default for Model<T> {
    fn default() -> Self {
        Model { config: None, slots: Vec::new(), mode: Mode::Train }
    }
}

impl<T: Scalar> Model<T> {
    /// Builds the network described by `cfg` with Xavier-uniform weights.
    /// Every layer draws from its own stream derived from `init` by name.
    pub fn build(cfg: &ModelConfig, init: &Rng) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder { model: Model::default(), init, channels: cfg.input_channels };
        let widths = cfg.conv_channels();
        let strides: &[usize] = match cfg.arch {
            Arch::VizNet5 => &VIZNET5_STRIDES,
            _ => &CONVNET8_STRIDES,
        };
        for (i, (&c, &s)) in widths.iter().zip(strides).enumerate() {
            let k = i + 1;
            b.conv(&format!("conv{k}"), c, s, !cfg.bn)?;
            if cfg.bn {
                b.push(&format!("bn{k}"), Role::Norm, Box::new(BatchNorm2d::new(c)?));
            }
            b.activation(&cfg.activation, k)?;
            if cfg.arch == Arch::ConvNet8Extended {
                b.conv(&format!("ext{k}"), b.channels, 1, true)?;
            }
        }
        match cfg.arch {
            Arch::VizNet5 => {
                b.push("gap", Role::Reshape, Box::new(GlobalAvgPool::new()));
                b.linear("fc", b.channels, cfg.num_classes)?;
            }
            _ => {
                let side = final_side(cfg.input_size);
                b.push("flatten", Role::Reshape, Box::new(Flatten::new()));
                let mut width = b.channels * side * side;
                for (i, &out) in CONVNET8_FC.iter().enumerate() {
                    let name = format!("fc{}", i + 1);
                    b.linear(&name, width, out)?;
                    b.push(&format!("relu_{name}"), Role::Activation, Box::new(Pointwise::new(PointwiseKind::Relu)));
                    width = out;
                }
                b.linear("fc3", width, cfg.num_classes)?;
            }
        }
        let mut model = b.model;
        model.config = Some(cfg.clone());
        model.shape_trace(&[1, cfg.input_channels, cfg.input_size, cfg.input_size])?;
        Ok(model)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.slots.iter().map(|s| s.role).collect()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.slots.iter().filter(|s| s.role == Role::Conv).count()
    }

    /// Appends a layer; names must be unique.
    pub fn push(&mut self, name: &str, role: Role, layer: Box<dyn Layer<T>>) -> Result<()> {
        if self.slots.iter().any(|s| s.name == name) {
            return Err(Error::InvalidConfig(format!("duplicate layer name `{name}`")));
        }
        self.slots.push(Slot { name: name.to_string(), role, layer });
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mode = self.mode;
        let mut h = x.clone();
        for slot in &mut self.slots {
            h = slot.layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_logits.clone();
        for slot in self.slots.iter_mut().rev() {
            g = slot.layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Output of the activation that follows backbone conv `stage` (1-based),
    /// computed in the current mode.
    pub fn features(&mut self, x: &Tensor<T>, stage: usize) -> Result<Tensor<T>> {
        let end = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.role == Role::Activation && !s.name.starts_with("relu_fc"))
            .nth(stage.wrapping_sub(1))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidConfig(format!("no activation at stage {stage}")))?;
        let mode = self.mode;
        let mut h = x.clone();
        for slot in &mut self.slots[..=end] {
            h = slot.layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Threads `input` through every layer's shape rule, returning each
    /// layer's output shape.
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<(String, Vec<usize>)>> {
        let mut shape = input.to_vec();
        let mut out = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            shape = slot.layer.output_shape(&shape)?;
            out.push((slot.name.clone(), shape.clone()));
        }
        Ok(out)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for slot in &mut self.slots {
            slot.layer.visit_params(&slot.name, f);
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for slot in &mut self.slots {
            slot.layer.visit_buffers(&slot.name, f);
        }
    }

    pub fn param_shapes(&mut self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, p| out.push((n.to_string(), p.value.shape().to_vec())));
        out
    }

    pub fn count_params(&mut self, filter: ParamFilter) -> usize {
        let mut total = 0;
        for slot in &mut self.slots {
            let role = slot.role;
            let name = slot.name.clone();
            slot.layer.visit_params(&name, &mut |n, p| {
                let keep = match filter {
                    ParamFilter::All => true,
                    ParamFilter::ConvWeights => {
                        role == Role::Conv && p.kind == ParamKind::ConvWeight && n == format!("{name}.weight")
                    }
                };
                if keep {
                    total += p.value.len();
                }
            });
        }
        total
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    /// Copies every parameter and buffer into a model of another precision.
    pub fn cast_into<U: Scalar>(&mut self, other: &mut Model<U>) -> Result<()> {
        let mut values = std::collections::BTreeMap::new();
        self.visit_params(&mut |n, p| {
            values.insert(format!("p:{n}"), p.value.cast::<f64>());
        });
        self.visit_buffers(&mut |n, b| {
            values.insert(format!("b:{n}"), b.cast::<f64>());
        });
        let mut missing = None;
        other.visit_params(&mut |n, p| match values.get(&format!("p:{n}")) {
            Some(v) if v.shape() == p.value.shape() => p.value = v.cast(),
            _ => missing = Some(n.to_string()),
        });
        other.visit_buffers(&mut |n, b| match values.get(&format!("b:{n}")) {
            Some(v) if v.shape() == b.shape() => *b = v.cast(),
            _ => missing = Some(n.to_string()),
        });
        match missing {
            Some(n) => Err(Error::InvalidConfig(format!("models differ at `{n}`"))),
            None => Ok(()),
        }
    }
}

impl<T: Scalar> ParamSet<T> for Model<T> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.visit_params(f);
    }
}

/// Spatial side after the three stride-2 convs of ConvNet-8.
pub fn final_side(input_size: usize) -> usize {
    let mut s = input_size;
    for &stride in &CONVNET8_STRIDES {
        s = (s + 2 - 3) / stride + 1;
    }
    s
}

struct Builder<'a, T: Scalar> {
    model: Model<T>,
    init: &'a Rng,
    channels: usize,
}

impl<T: Scalar> Builder<'_, T> {
    fn push(&mut self, name: &str, role: Role, layer: Box<dyn Layer<T>>) {
        // names are generated from distinct templates, so this cannot clash
        self.model.push(name, role, layer).expect("unique layer name");
    }

    fn conv(&mut self, name: &str, out: usize, stride: usize, bias: bool) -> Result<()> {
        let mut conv = Conv2d::new(self.channels, out, 3, stride, 1, bias)?;
        let (fi, fo) = conv_fans(self.channels, out, 3);
        conv.weight.value = xavier_uniform(conv.weight.value.shape(), fi, fo, &mut self.init.derive(name))?;
        self.push(name, Role::Conv, Box::new(conv));
        self.channels = out;
        Ok(())
    }

    fn linear(&mut self, name: &str, input: usize, out: usize) -> Result<()> {
        let mut fc = Linear::new(input, out)?;
        fc.weight.value = xavier_uniform(&[out, input], input, out, &mut self.init.derive(name))?;
        self.push(name, Role::Linear, Box::new(fc));
        Ok(())
    }

    fn activation(&mut self, spec: &ActivationSpec, stage: usize) -> Result<()> {
        let name = format!("{}{stage}", spec.short_name());
        let (layer, out) = make_activation(spec, self.channels, &mut self.init.derive(&name))?;
        self.push(&name, Role::Activation, layer);
        self.channels = out;
        Ok(())
    }
}
