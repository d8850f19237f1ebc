//! Named-tensor text checkpoints.
//!
//! ```text
//! reborn-checkpoint v1 dtype=f32 epoch=5
//! arch=convnet8 activation=reborn width=1 classes=10 channels=3 size=32 bn=true
//! param conv1.weight
//! <tensor fixture>
//! buffer bn1.running_mean
//! <tensor fixture>
//! velocity conv1.weight
//! <tensor fixture>
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting in the
//! model's own precision, so save → load is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::optim::Sgd;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &str = "reborn-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Precision the values were captured in (`f32` or `f64`).
    pub dtype: String,
    /// Number of completed training epochs.
    pub epoch: usize,
    pub params: BTreeMap<String, Tensor<f64>>,
    pub buffers: BTreeMap<String, Tensor<f64>>,
    pub velocities: BTreeMap<String, Tensor<f64>>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(model: &mut Model<T>, optimizer: Option<&Sgd<T>>, epoch: usize) -> Result<Self> {
        let config = model
            .config
            .clone()
            .ok_or_else(|| Error::InvalidConfig("model has no architecture config".into()))?;
        let mut params = BTreeMap::new();
        model.visit_params(&mut |n, p| {
            params.insert(n.to_string(), p.value.cast());
        });
        let mut buffers = BTreeMap::new();
        model.visit_buffers(&mut |n, b| {
            buffers.insert(n.to_string(), b.cast());
        });
        let velocities = optimizer
            .map(|o| o.velocities().map(|(n, v)| (n.to_string(), v.cast())).collect())
            .unwrap_or_default();
        Ok(Checkpoint { config, dtype: T::NAME.to_string(), epoch, params, buffers, velocities })
    }

    /// Builds the architecture from the header and loads every tensor into it.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = Model::build(&self.config, &Rng::new(0))?;
        self.restore(&mut model)?;
        Ok(model)
    }

    pub fn restore<T: Scalar>(&self, model: &mut Model<T>) -> Result<()> {
        let mut problem: Option<Error> = None;
        let mut seen = 0;
        model.visit_params(&mut |n, p| {
            seen += 1;
            match self.params.get(n) {
                Some(v) if v.shape() == p.value.shape() => p.value = v.cast(),
                Some(v) => {
                    problem.get_or_insert(Error::ShapeMismatch {
                        op: "checkpoint",
                        left: v.shape().to_vec(),
                        right: p.value.shape().to_vec(),
                    });
                }
                None => {
                    problem.get_or_insert(Error::Parse(format!("checkpoint lacks parameter `{n}`")));
                }
            }
        });
        model.visit_buffers(&mut |n, b| match self.buffers.get(n) {
            Some(v) if v.shape() == b.shape() => *b = v.cast(),
            _ => {
                problem.get_or_insert(Error::Parse(format!("checkpoint lacks buffer `{n}`")));
            }
        });
        if let Some(e) = problem {
            return Err(e);
        }
        if seen != self.params.len() {
            return Err(Error::Parse(format!(
                "checkpoint has {} parameters, model has {seen}",
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn restore_optimizer<T: Scalar>(&self, optimizer: &mut Sgd<T>) {
        for (n, v) in &self.velocities {
            optimizer.set_velocity(n, v.cast());
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} dtype={} epoch={}\n{}\n", self.dtype, self.epoch, self.config.header());
        let sections = [("param", &self.params), ("buffer", &self.buffers), ("velocity", &self.velocities)];
        for (kind, map) in sections {
            for (name, t) in map {
                out.push_str(&format!("{kind} {name}\n"));
                if self.dtype == "f32" {
                    out.push_str(&t.cast::<f32>().to_fixture_string());
                } else {
                    out.push_str(&t.to_fixture_string());
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let first = lines.next().ok_or_else(|| Error::Parse("empty checkpoint".into()))?;
        let rest = first
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Parse("not a checkpoint (bad first line)".into()))?;
        let mut dtype = String::from("f64");
        let mut epoch = 0;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("dtype", v)) if v == "f32" || v == "f64" => dtype = v.to_string(),
                Some(("epoch", v)) => epoch = v.parse().map_err(|e| Error::Parse(format!("epoch: {e}")))?,
                _ => return Err(Error::Parse(format!("bad checkpoint field `{field}`"))),
            }
        }
        let config = ModelConfig::parse_header(lines.next().ok_or_else(|| Error::Parse("missing header".into()))?)?;
        let mut ckpt = Checkpoint {
            config,
            dtype,
            epoch,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            velocities: BTreeMap::new(),
        };
        loop {
            let line = lines.next().ok_or_else(|| Error::Parse("checkpoint truncated (no `end`)".into()))?;
            if line == "end" {
                break;
            }
            let (kind, name) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad section line `{line}`")))?;
            let tensor: Tensor<f64> = if ckpt.dtype == "f32" {
                Tensor::<f32>::parse_fixture_lines(&mut lines)?.cast()
            } else {
                Tensor::parse_fixture_lines(&mut lines)?
            };
            let map = match kind {
                "param" => &mut ckpt.params,
                "buffer" => &mut ckpt.buffers,
                "velocity" => &mut ckpt.velocities,
                _ => return Err(Error::Parse(format!("unknown section `{kind}`"))),
            };
            if map.insert(name.to_string(), tensor).is_some() {
                return Err(Error::Parse(format!("duplicate tensor `{name}`")));
            }
        }
        if lines.next().is_some() {
            return Err(Error::Parse("data after `end`".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }
}
