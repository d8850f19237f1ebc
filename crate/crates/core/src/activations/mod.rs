//! Activation mechanisms: elementwise rectifier variants, CReLU and the
//! reborn block.

mod crelu;
mod pointwise;
mod prelu;
mod reborn;

use std::fmt;
use std::str::FromStr;

pub use crelu::CRelu;
pub use pointwise::{Pointwise, PointwiseKind, SELU_ALPHA, SELU_LAMBDA};
pub use prelu::PRelu;
pub use reborn::{Compression, RebornBlock, RebornConfig};

use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_PRELU_INIT: f64 = 0.25;
pub const DEFAULT_RRELU_LOWER: f64 = 1.0 / 8.0;
pub const DEFAULT_RRELU_UPPER: f64 = 1.0 / 3.0;

/// `max(x, 0)` elementwise.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.max_zero()
}

/// `-relu(-x)`, i.e. `min(x, 0)`: the negative phase with its sign kept.
pub fn negative_part<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.min_zero()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActivationSpec {
    Relu,
    LeakyRelu { slope: f64 },
    PRelu,
    RRelu { lower: f64, upper: f64 },
    Elu { alpha: f64 },
    Selu,
    Celu { alpha: f64 },
    CRelu,
    Reborn(RebornConfig),
}

impl ActivationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationSpec::RRelu { lower, upper } if !(0.0 <= lower && lower < upper && upper < 1.0) => {
                Err(Error::InvalidConfig(format!(
                    "rrelu bounds must satisfy 0 <= lower < upper < 1 (got {lower}, {upper})"
                )))
            }
            ActivationSpec::Elu { alpha } | ActivationSpec::Celu { alpha } if alpha <= 0.0 || !alpha.is_finite() => {
                Err(Error::InvalidConfig(format!("alpha must be positive (got {alpha})")))
            }
            ActivationSpec::LeakyRelu { slope } if !slope.is_finite() => {
                Err(Error::InvalidConfig(format!("leaky slope must be finite (got {slope})")))
            }
            ActivationSpec::Reborn(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }

    /// Channels produced for `channels` input channels.
    pub fn output_channels(&self, channels: usize) -> usize {
        match self {
            ActivationSpec::CRelu => 2 * channels,
            ActivationSpec::Reborn(cfg) if cfg.compress == Compression::None => 2 * channels,
            _ => channels,
        }
    }

    /// Whether the activation needs `(N, C, H, W)` feature maps.
    pub fn is_spatial(&self) -> bool {
        matches!(self, ActivationSpec::CRelu | ActivationSpec::Reborn(_))
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ActivationSpec::Relu => "relu",
            ActivationSpec::LeakyRelu { .. } => "leaky",
            ActivationSpec::PRelu => "prelu",
            ActivationSpec::RRelu { .. } => "rrelu",
            ActivationSpec::Elu { .. } => "elu",
            ActivationSpec::Selu => "selu",
            ActivationSpec::Celu { .. } => "celu",
            ActivationSpec::CRelu => "crelu",
            ActivationSpec::Reborn(_) => "reborn",
        }
    }

    /// One instance of every kind with default hyperparameters.
    pub fn all_defaults() -> Vec<ActivationSpec> {
        [
            "relu", "leaky", "prelu", "rrelu", "elu", "selu", "celu", "crelu", "reborn", "reborn-nc",
        ]
        .iter()
        .map(|s| s.parse().expect("built-in spec"))
        .collect()
    }
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationSpec::Relu => f.write_str("relu"),
            ActivationSpec::LeakyRelu { slope } => write!(f, "leaky:{slope}"),
            ActivationSpec::PRelu => f.write_str("prelu"),
            ActivationSpec::RRelu { lower, upper } => write!(f, "rrelu:{lower}:{upper}"),
            ActivationSpec::Elu { alpha } => write!(f, "elu:{alpha}"),
            ActivationSpec::Selu => f.write_str("selu"),
            ActivationSpec::Celu { alpha } => write!(f, "celu:{alpha}"),
            ActivationSpec::CRelu => f.write_str("crelu"),
            ActivationSpec::Reborn(cfg) if *cfg == RebornConfig::default() => f.write_str("reborn"),
            ActivationSpec::Reborn(cfg) if *cfg == RebornConfig::no_compress() => {
                f.write_str("reborn-nc")
            }
            ActivationSpec::Reborn(cfg) => write!(
                f,
                "reborn:{}:{}:{}:{}",
                cfg.deconv_kernel,
                cfg.deconv_padding,
                cfg.decay_ratio,
                if cfg.compress == Compression::Conv1x1 { "1x1" } else { "nc" }
            ),
        }
    }
}

impl FromStr for ActivationSpec {
    type Err = Error;

    /// Grammar: `relu`, `leaky[:slope]`, `prelu`, `rrelu[:lower:upper]`,
    /// `elu[:alpha]`, `selu`, `celu[:alpha]`, `crelu`, `reborn`, `reborn-nc`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or_default().to_ascii_lowercase();
        if head == "reborn" && s.contains(':') {
            return parse_reborn_long(s.trim());
        }
        let args: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number `{p}` in activation `{s}`")))
            })
            .collect::<Result<_>>()?;
        let arity = |n: usize| -> Result<()> {
            if args.is_empty() || args.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!(
                    "activation `{s}` takes {n} parameter(s), got {}",
                    args.len()
                )))
            }
        };
        let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
        let spec = match head.as_str() {
            "relu" => {
                arity(0)?;
                ActivationSpec::Relu
            }
            "leaky" | "leakyrelu" | "leaky_relu" => {
                arity(1)?;
                ActivationSpec::LeakyRelu {
                    slope: arg(0, DEFAULT_LEAKY_SLOPE),
                }
            }
            "prelu" => {
                arity(0)?;
                ActivationSpec::PRelu
            }
            "rrelu" => {
                arity(2)?;
                ActivationSpec::RRelu {
                    lower: arg(0, DEFAULT_RRELU_LOWER),
                    upper: arg(1, DEFAULT_RRELU_UPPER),
                }
            }
            "elu" => {
                arity(1)?;
                ActivationSpec::Elu { alpha: arg(0, 1.0) }
            }
            "selu" => {
                arity(0)?;
                ActivationSpec::Selu
            }
            "celu" => {
                arity(1)?;
                ActivationSpec::Celu { alpha: arg(0, 1.0) }
            }
            "crelu" => {
                arity(0)?;
                ActivationSpec::CRelu
            }
            "reborn" => ActivationSpec::Reborn(RebornConfig::default()),
            "reborn-nc" => {
                arity(0)?;
                ActivationSpec::Reborn(RebornConfig::no_compress())
            }
            _ => return Err(Error::Parse(format!("unknown activation `{s}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `reborn:kernel:padding:ratio:{1x1|nc}`, the form `Display` emits for
/// non-default configurations.
fn parse_reborn_long(s: &str) -> Result<ActivationSpec> {
    let fields: Vec<&str> = s.split(':').collect();
    let bad = || Error::Parse(format!("bad reborn spec `{s}`"));
    if fields.len() != 5 {
        return Err(bad());
    }
    let num = |i: usize| fields[i].parse::<usize>().map_err(|_| bad());
    let cfg = RebornConfig {
        deconv_kernel: num(1)?,
        deconv_stride: 1,
        deconv_padding: num(2)?,
        decay_ratio: num(3)?,
        compress: match fields[4] {
            "1x1" => Compression::Conv1x1,
            "nc" => Compression::None,
            _ => return Err(bad()),
        },
    };
    cfg.validate()?;
    Ok(ActivationSpec::Reborn(cfg))
}

/// Builds an activation instance for `channels` input channels and reports
/// the number of channels it emits.
///
/// Learned weights inside the reborn block draw from `rng`; RReLU draws its
/// training-time slopes from a stream derived from it.
pub fn make_activation<T: Scalar>(
    spec: &ActivationSpec,
    channels: usize,
    rng: &mut Rng,
) -> Result<(Box<dyn Layer<T>>, usize)> {
    if channels == 0 {
        return Err(Error::InvalidConfig("activation needs at least one channel".into()));
    }
    spec.validate()?;
    let layer: Box<dyn Layer<T>> = match *spec {
        ActivationSpec::Relu => Box::new(Pointwise::new(PointwiseKind::Relu)),
        ActivationSpec::LeakyRelu { slope } => {
            Box::new(Pointwise::new(PointwiseKind::Leaky { slope }))
        }
        ActivationSpec::PRelu => Box::new(PRelu::new(channels, DEFAULT_PRELU_INIT)?),
        ActivationSpec::RRelu { lower, upper } => Box::new(Pointwise::rrelu(
            lower,
            upper,
            rng.derive("rrelu"),
        )),
        ActivationSpec::Elu { alpha } => Box::new(Pointwise::new(PointwiseKind::Elu { alpha })),
        ActivationSpec::Selu => Box::new(Pointwise::new(PointwiseKind::Selu)),
        ActivationSpec::Celu { alpha } => Box::new(Pointwise::new(PointwiseKind::Celu { alpha })),
        ActivationSpec::CRelu => Box::new(CRelu::new()),
        ActivationSpec::Reborn(cfg) => Box::new(RebornBlock::xavier(channels, cfg, rng)?),
    };
    Ok((layer, spec.output_channels(channels)))
}
