//! Feed-forward embedding network and the map onto the Poincaré ball.
//!
//! The embedding function is a plain affine + activation stack over raw
//! feature vectors. The hyperbolic head applies one learnable positive scale
//! (stored as the exponential of an unconstrained parameter) and the
//! exponential map at the origin.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ball::BallConfig;
use crate::diff::Value;
use crate::diffgeo;
use crate::error::{Error, Result};
use crate::optim::{ParameterStore, SgdConfig};

/// Parameter name of the head's unconstrained log-scale.
pub const LOG_SCALE: &str = "head.log_scale";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Shape of the embedding network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    /// Number of leading layers left untouched by SGD when the config is
    /// applied to a store via [`apply_freeze`].
    pub frozen_prefix_layers: usize,
}

impl BackboneConfig {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        embed_dim: usize,
        frozen_prefix_layers: usize,
    ) -> Result<Self> {
        if embed_dim < 2 {
            return Err(Error::InvalidInput(format!(
                "embed_dim must be >= 2, got {embed_dim}"
            )));
        }
        let n_layers = hidden_dims.len() + 1;
        if frozen_prefix_layers > n_layers {
            return Err(Error::InvalidInput(format!(
                "frozen_prefix_layers ({frozen_prefix_layers}) exceeds layer count ({n_layers})"
            )));
        }
        if input_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::InvalidInput("layer widths must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            embed_dim,
            activation: Activation::Relu,
            frozen_prefix_layers,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.n_layers());
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.embed_dim));
        dims
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("backbone.{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("backbone.{layer}.bias")
}

/// Ball the head maps into. The learnable scale itself lives in the
/// parameter store under [`LOG_SCALE`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicHead {
    pub ball: BallConfig<f64>,
}

/// Fresh store with fan-in-scaled normal weights (std `√(2/fan_in)`), zero
/// biases and a unit head scale. Identical seeds give bit-identical stores.
pub fn init_params(cfg: &BackboneConfig, sgd: SgdConfig<f64>, seed: u64) -> ParameterStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new(sgd);
    init_params_into(&mut store, cfg, &mut rng);
    store
}

pub fn init_params_into(
    store: &mut ParameterStore<f64>,
    cfg: &BackboneConfig,
    rng: &mut ChaCha8Rng,
) {
    for (layer, (fan_in, fan_out)) in cfg.layer_dims().into_iter().enumerate() {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        let weights: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        store.insert(&weight_name(layer), weights);
        store.insert(&bias_name(layer), vec![0.0; fan_out]);
    }
    store.insert(LOG_SCALE, vec![0.0]);
}

/// Mark the first `frozen_prefix_layers` affine layers frozen in `store`.
pub fn apply_freeze(store: &mut ParameterStore<f64>, cfg: &BackboneConfig) {
    for layer in 0..cfg.frozen_prefix_layers {
        store.freeze(&weight_name(layer));
        store.freeze(&bias_name(layer));
    }
}

/// Differentiable forward pass; the activation follows every affine layer.
pub fn embed_graph(
    x: &[f64],
    params: &ParameterStore<f64>,
    cfg: &BackboneConfig,
) -> Result<Vec<Value<f64>>> {
    if x.len() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "input has {} components, backbone expects {}",
            x.len(),
            cfg.input_dim
        )));
    }
    let mut current: Vec<Value<f64>> = x.iter().map(|&v| Value::constant(v)).collect();
    for (layer, (fan_in, fan_out)) in cfg.layer_dims().into_iter().enumerate() {
        let w = params.get(&weight_name(layer));
        let b = params.get(&bias_name(layer));
        let mut next = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            let pre = Value::dot(row, &current).add(&b[j]);
            next.push(match cfg.activation {
                Activation::Relu => pre.relu(),
            });
        }
        current = next;
    }
    Ok(current)
}

/// Plain forward pass over a snapshot of tensor values.
pub fn embed_raw(
    x: &[f64],
    tensors: &BTreeMap<String, Vec<f64>>,
    cfg: &BackboneConfig,
) -> Result<Vec<f64>> {
    if x.len() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "input has {} components, backbone expects {}",
            x.len(),
            cfg.input_dim
        )));
    }
    let mut current = x.to_vec();
    for (layer, (fan_in, fan_out)) in cfg.layer_dims().into_iter().enumerate() {
        let w = &tensors[&weight_name(layer)];
        let b = &tensors[&bias_name(layer)];
        let mut next = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            let pre: f64 = row.iter().zip(&current).map(|(a, b)| a * b).sum::<f64>() + b[j];
            next.push(match cfg.activation {
                Activation::Relu => pre.max(0.0),
            });
        }
        current = next;
    }
    Ok(current)
}

/// `exp_0(scale · v)` with the learnable scale read from the store.
pub fn to_hyperbolic_graph(
    v: &[Value<f64>],
    head: &HyperbolicHead,
    params: &ParameterStore<f64>,
) -> Vec<Value<f64>> {
    let scale = params.get(LOG_SCALE)[0].exp();
    let scaled: Vec<Value<f64>> = v.iter().map(|vi| vi.mul(&scale)).collect();
    diffgeo::exp_map_origin(&scaled, &head.ball)
}

/// Raw-path counterpart of [`to_hyperbolic_graph`].
pub fn to_hyperbolic_raw(
    v: &[f64],
    head: &HyperbolicHead,
    tensors: &BTreeMap<String, Vec<f64>>,
) -> Vec<f64> {
    let scale = tensors[LOG_SCALE][0].exp();
    let scaled: Vec<f64> = v.iter().map(|vi| vi * scale).collect();
    head.ball.exp_map_origin(&scaled).expect("finite scaled feature")
}
