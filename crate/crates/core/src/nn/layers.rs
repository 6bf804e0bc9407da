use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::param::{ParamId, ParamStore, Parameter};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Declarative description of a single layer primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerConfig {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Batchnorm {
        features: usize,
        eps: f64,
        momentum: f64,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    GlobalAvgPool,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerConfig::Dense { input, output } if input == 0 || output == 0 => {
                Err(Error::Config("dense widths must be positive".into()))
            }
            LayerConfig::Conv2d { kernel, stride, .. } if kernel == 0 || stride == 0 => Err(
                Error::Config("conv kernel size and stride must be positive".into()),
            ),
            LayerConfig::Batchnorm { eps, momentum, .. }
                if eps <= 0.0 || !(momentum > 0.0 && momentum < 1.0) =>
            {
                Err(Error::Config(
                    "batch norm needs eps > 0 and momentum in (0, 1)".into(),
                ))
            }
            LayerConfig::Dropout { rate } if !(0.0..1.0).contains(&rate) => Err(Error::Config(
                format!("dropout rate {rate} outside [0, 1)"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_glorot(
            format!("{name}.weight"),
            &[input, output],
            input,
            output,
            rng,
        );
        let bias = store.add(Parameter::new(format!("{name}.bias"), Tensor::zeros(&[output])));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.dense(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let area = kernel * kernel;
        let k = store.add_glorot(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            in_channels * area,
            out_channels * area,
            rng,
        );
        let bias = store.add(Parameter::new(
            format!("{name}.bias"),
            Tensor::zeros(&[out_channels]),
        ));
        Self {
            kernel: k,
            bias,
            stride,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        g.conv2d(x, k, b, self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            scale: store.add(Parameter::new(
                format!("{name}.scale"),
                Tensor::full(&[features], 1.0),
            )),
            shift: store.add(Parameter::new(
                format!("{name}.shift"),
                Tensor::zeros(&[features]),
            )),
            running_mean: store.add(Parameter::buffer(
                format!("{name}.running_mean"),
                Tensor::zeros(&[features]),
            )),
            running_var: store.add(Parameter::buffer(
                format!("{name}.running_var"),
                Tensor::full(&[features], 1.0),
            )),
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let s = g.param(store, self.scale);
        let t = g.param(store, self.shift);
        g.batchnorm(
            store,
            x,
            s,
            t,
            self.running_mean,
            self.running_var,
            self.eps,
            self.momentum,
        )
    }
}
