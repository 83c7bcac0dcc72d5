//! Base-session open-set classifier built on reciprocal points.
//!
//! Each base class `k` owns `M` learnable reciprocal points representing its
//! extra-class space and one learnable margin `R_k`. A sample's affinity to
//! class `k` is its integrated distance `β·d^e + γ·d^h` to the class's
//! reciprocal points, combining the mean squared Euclidean distance with the
//! mean Poincaré distance between the mapped points; class probabilities are
//! the softmax of these distances (membership correlates with being far from
//! a class's reciprocal points), and the open-space risk `(d − R_k)²` pins
//! the true-class distance near its margin. A sample is rejected as Unknown
//! when its maximum class probability falls below a threshold.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::{self, BackboneConfig, HyperbolicHead};
use crate::diff::{log_sum_exp, mean, Value};
use crate::diffgeo;
use crate::error::{Error, Result};
use crate::model::{ModelState, TrainConfig};
use crate::optim::ParameterStore;

/// Loss weights and the unknown-rejection cutoff. `γ` is stored implicitly
/// as `1 − β`, keeping `β + γ = 1` exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RplLossConfig {
    beta: f64,
    lambda_open: f64,
    threshold: f64,
}

impl RplLossConfig {
    pub fn new(beta: f64, lambda_open: f64, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!(
                "beta must lie in [0,1], got {beta}"
            )));
        }
        if lambda_open < 0.0 {
            return Err(Error::Config(format!(
                "lambda_open must be >= 0, got {lambda_open}"
            )));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0,1], got {threshold}"
            )));
        }
        Ok(Self { beta, lambda_open, threshold })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        1.0 - self.beta
    }

    pub fn lambda_open(&self) -> f64 {
        self.lambda_open
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Descriptor of the per-class reciprocal point tensors living in a
/// parameter store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReciprocalPointSet {
    pub classes: Vec<usize>,
    pub m: usize,
    pub dim: usize,
}

pub fn points_name(class: usize) -> String {
    format!("rp.{class}.points")
}

pub fn margin_name(class: usize) -> String {
    format!("rp.{class}.margin")
}

impl ReciprocalPointSet {
    /// Insert `M` fan-in-scaled normal points and a unit margin per class.
    pub fn init_into(
        store: &mut ParameterStore<f64>,
        classes: &[usize],
        m: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("reciprocal point set size M must be >= 1".into()));
        }
        let normal = Normal::new(0.0, (2.0 / dim as f64).sqrt()).expect("valid std");
        for &k in classes {
            let pts: Vec<f64> = (0..m * dim).map(|_| normal.sample(rng)).collect();
            store.insert(&points_name(k), pts);
            store.insert(&margin_name(k), vec![1.0]);
        }
        Ok(Self { classes: classes.to_vec(), m, dim })
    }

    /// The `M` point slices of class `k` inside `store`.
    pub fn points_of<'a>(&self, store: &'a ParameterStore<f64>, class: usize) -> Vec<&'a [Value<f64>]> {
        let flat = store.get(&points_name(class));
        flat.chunks(self.dim).collect()
    }

    pub fn margin_of<'a>(&self, store: &'a ParameterStore<f64>, class: usize) -> &'a Value<f64> {
        &store.get(&margin_name(class))[0]
    }
}

/// `(1/M)·Σᵢ ‖f − p_i‖²₂` as a graph expression.
pub fn euclidean_rp_distance(feature: &[Value<f64>], points: &[&[Value<f64>]]) -> Result<Value<f64>> {
    if points.is_empty() {
        return Err(Error::Contract("empty reciprocal point set".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != feature.len()) {
        return Err(Error::Shape(format!(
            "feature has {} components, reciprocal point has {}",
            feature.len(),
            p.len()
        )));
    }
    let terms: Vec<Value<f64>> = points
        .iter()
        .map(|p| {
            let diff: Vec<Value<f64>> = feature.iter().zip(p.iter()).map(|(f, pi)| f.sub(pi)).collect();
            Value::dot(&diff, &diff)
        })
        .collect();
    Ok(mean(&terms))
}

/// `(1/M)·Σᵢ d^p(h(f), h(p_i))` with both arguments mapped through the head.
pub fn hyperbolic_rp_distance(
    feature: &[Value<f64>],
    points: &[&[Value<f64>]],
    head: &HyperbolicHead,
    params: &ParameterStore<f64>,
) -> Result<Value<f64>> {
    if points.is_empty() {
        return Err(Error::Contract("empty reciprocal point set".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != feature.len()) {
        return Err(Error::Shape(format!(
            "feature has {} components, reciprocal point has {}",
            feature.len(),
            p.len()
        )));
    }
    let hf = backbone::to_hyperbolic_graph(feature, head, params);
    let terms: Vec<Value<f64>> = points
        .iter()
        .map(|p| {
            let hp = backbone::to_hyperbolic_graph(p, head, params);
            diffgeo::distance(&hf, &hp, &head.ball)
        })
        .collect();
    Ok(mean(&terms))
}

/// `β·d^e + γ·d^h`. The `β = 1` case never touches the hyperbolic path, so
/// a pure-Euclidean configuration is bit-equivalent to γ-free code.
pub fn integrated_rp_distance(
    feature: &[Value<f64>],
    points: &[&[Value<f64>]],
    head: &HyperbolicHead,
    params: &ParameterStore<f64>,
    cfg: &RplLossConfig,
) -> Result<Value<f64>> {
    if cfg.beta() == 1.0 {
        return euclidean_rp_distance(feature, points);
    }
    if cfg.beta() == 0.0 {
        return hyperbolic_rp_distance(feature, points, head, params);
    }
    let de = euclidean_rp_distance(feature, points)?.mul_const(cfg.beta());
    let dh = hyperbolic_rp_distance(feature, points, head, params)?.mul_const(cfg.gamma());
    Ok(de.add(&dh))
}

/// Integrated distance to every class's reciprocal points, in class order.
pub fn class_distances(
    feature: &[Value<f64>],
    rp: &ReciprocalPointSet,
    head: &HyperbolicHead,
    params: &ParameterStore<f64>,
    cfg: &RplLossConfig,
) -> Result<Vec<Value<f64>>> {
    rp.classes
        .iter()
        .map(|&k| integrated_rp_distance(feature, &rp.points_of(params, k), head, params, cfg))
        .collect()
}

/// `softmax` over arbitrary scores with max-subtraction. Probabilities sum
/// to 1 up to rounding and are invariant to a common additive shift.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `−log p(y = k | x)` with `p` the softmax of the integrated distances.
pub fn classification_loss(
    feature: &[Value<f64>],
    true_class: usize,
    rp: &ReciprocalPointSet,
    head: &HyperbolicHead,
    params: &ParameterStore<f64>,
    cfg: &RplLossConfig,
) -> Result<Value<f64>> {
    let idx = rp
        .classes
        .iter()
        .position(|&k| k == true_class)
        .ok_or_else(|| Error::Label(format!("class {true_class} not in the base set")))?;
    let dists = class_distances(feature, rp, head, params, cfg)?;
    Ok(log_sum_exp(&dists).sub(&dists[idx]))
}

/// Open-space risk `(d(f, P_k) − R_k)²` for a single class.
pub fn open_space_risk(
    feature: &[Value<f64>],
    points: &[&[Value<f64>]],
    margin: &Value<f64>,
    head: &HyperbolicHead,
    params: &ParameterStore<f64>,
    cfg: &RplLossConfig,
) -> Result<Value<f64>> {
    let d = integrated_rp_distance(feature, points, head, params, cfg)?;
    Ok(d.sub(margin).square())
}

/// Base-session loss: mean over the batch of
/// `−log p(y|x) + λ·(d(f, P_y) − R_y)²`.
pub fn base_loss(
    batch: &[(&[f64], usize)],
    rp: &ReciprocalPointSet,
    head: &HyperbolicHead,
    params: &ParameterStore<f64>,
    cfg: &RplLossConfig,
    backbone_cfg: &BackboneConfig,
) -> Result<Value<f64>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut per_sample = Vec::with_capacity(batch.len());
    for &(x, label) in batch {
        let idx = rp
            .classes
            .iter()
            .position(|&k| k == label)
            .ok_or_else(|| Error::Label(format!("class {label} not in the base set")))?;
        let feature = backbone::embed_graph(x, params, backbone_cfg)?;
        let dists = class_distances(&feature, rp, head, params, cfg)?;
        let ce = log_sum_exp(&dists).sub(&dists[idx]);
        let margin = rp.margin_of(params, label);
        let risk = dists[idx].sub(margin).square();
        per_sample.push(ce.add(&risk.mul_const(cfg.lambda_open())));
    }
    Ok(mean(&per_sample))
}

/// Verdict of the open-set rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Known(usize),
    Unknown,
}

/// Raw-path integrated distance from an embedded feature to one class's
/// reciprocal points.
pub fn integrated_distance_raw(
    feature: &[f64],
    class: usize,
    rp: &ReciprocalPointSet,
    head: &HyperbolicHead,
    tensors: &BTreeMap<String, Vec<f64>>,
    cfg: &RplLossConfig,
) -> f64 {
    let hf = if cfg.beta() < 1.0 {
        Some(backbone::to_hyperbolic_raw(feature, head, tensors))
    } else {
        None
    };
    let flat = &tensors[&points_name(class)];
    let mut de = 0.0;
    let mut dh = 0.0;
    for p in flat.chunks(rp.dim) {
        if cfg.beta() > 0.0 {
            de += feature
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        if let Some(hf) = &hf {
            let hp = backbone::to_hyperbolic_raw(p, head, tensors);
            dh += head.ball.distance(hf, &hp).expect("in-ball points");
        }
    }
    let m = rp.m as f64;
    if cfg.beta() == 1.0 {
        de / m
    } else if cfg.beta() == 0.0 {
        dh / m
    } else {
        cfg.beta() * de / m + cfg.gamma() * dh / m
    }
}

/// Raw-path class probabilities from an embedded feature and a tensor
/// snapshot.
pub fn class_probabilities(
    feature: &[f64],
    rp: &ReciprocalPointSet,
    head: &HyperbolicHead,
    tensors: &BTreeMap<String, Vec<f64>>,
    cfg: &RplLossConfig,
) -> Vec<f64> {
    let dists: Vec<f64> = rp
        .classes
        .iter()
        .map(|&k| integrated_distance_raw(feature, k, rp, head, tensors, cfg))
        .collect();
    softmax(&dists)
}

/// Accept as the argmax class when its probability reaches the threshold,
/// ties broken toward the lowest class id; reject as Unknown otherwise.
pub fn open_set_decide(
    feature: &[f64],
    rp: &ReciprocalPointSet,
    head: &HyperbolicHead,
    tensors: &BTreeMap<String, Vec<f64>>,
    cfg: &RplLossConfig,
) -> Decision {
    let probs = class_probabilities(feature, rp, head, tensors, cfg);
    decide_from_probabilities(&probs, &rp.classes, cfg.threshold())
}

/// The decision is a function of the probability vector alone.
pub fn decide_from_probabilities(probs: &[f64], classes: &[usize], threshold: f64) -> Decision {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    if probs[best] >= threshold {
        Decision::Known(classes[best])
    } else {
        Decision::Unknown
    }
}

/// Run minibatch SGD on [`base_loss`] and return the trained base branch.
#[allow(clippy::too_many_arguments)]
pub fn train_base_session(
    train: &[(Vec<f64>, usize)],
    base_classes: &[usize],
    backbone_cfg: &BackboneConfig,
    head: HyperbolicHead,
    rpl_cfg: RplLossConfig,
    rp_points: usize,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelState> {
    for &k in base_classes {
        if !train.iter().any(|(_, label)| *label == k) {
            return Err(Error::Dataset(format!(
                "base class {k} has zero training samples"
            )));
        }
    }
    if let Some((_, bad)) = train.iter().find(|(_, l)| !base_classes.contains(l)) {
        return Err(Error::Label(format!("class {bad} not in the base set")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterStore::new(train_cfg.sgd.clone());
    backbone::init_params_into(&mut params, backbone_cfg, &mut rng);
    let rp = ReciprocalPointSet::init_into(
        &mut params,
        base_classes,
        rp_points,
        backbone_cfg.embed_dim,
        &mut rng,
    )?;

    // Seat the head scale so the largest initial embedding maps into the
    // ball's informative interior. At scale 1 desk-scale feature norms land
    // on the boundary clamp where the arctanh gradient is a cliff.
    if rpl_cfg.beta() < 1.0 {
        let tensors = params.snapshot();
        let mut max_norm = 0.0f64;
        for (x, _) in train.iter() {
            let f = backbone::embed_raw(x, &tensors, backbone_cfg)?;
            max_norm = max_norm.max(f.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        if max_norm > 0.0 {
            let scale = 1.0 / (head.ball.sqrt_c() * max_norm);
            params.get(backbone::LOG_SCALE)[0].set_value(scale.ln());
        }
    }

    // Seat each margin at its class's mean initial distance. Starting the
    // margins far below the initial distance scale makes the open-space
    // risk crush the embedding into a dead constant before the
    // classification term can separate anything.
    {
        let tensors = params.snapshot();
        for &k in base_classes {
            let mut total = 0.0;
            let mut count = 0usize;
            for (x, label) in train.iter() {
                if *label != k {
                    continue;
                }
                let f = backbone::embed_raw(x, &tensors, backbone_cfg)?;
                total += integrated_distance_raw(&f, k, &rp, &head, &tensors, &rpl_cfg);
                count += 1;
            }
            rp.margin_of(&params, k).set_value(total / count as f64);
        }
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(train_cfg.batch_size.max(1)) {
            let batch: Vec<(&[f64], usize)> =
                chunk.iter().map(|&i| (train[i].0.as_slice(), train[i].1)).collect();
            let loss = base_loss(&batch, &rp, &head, &params, &rpl_cfg, backbone_cfg)?;
            loss.forward_eval()?;
            loss.backward();
            params.sgd_step(epoch)?;
        }
    }

    backbone::apply_freeze(&mut params, backbone_cfg);
    Ok(ModelState::new(
        backbone_cfg.clone(),
        head,
        rpl_cfg,
        base_classes.to_vec(),
        rp,
        params,
    ))
}

/// Fraction of known samples accepted with their true label, and fraction
/// of unknown samples rejected.
pub fn evaluate_known_unknown(
    state: &ModelState,
    known: &[(Vec<f64>, usize)],
    unknown: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let tensors = state.base_params.snapshot();
    let mut known_correct = 0usize;
    for (x, label) in known {
        let f = backbone::embed_raw(x, &tensors, &state.backbone)?;
        if open_set_decide(&f, &state.rp, &state.head, &tensors, &state.rpl_cfg)
            == Decision::Known(*label)
        {
            known_correct += 1;
        }
    }
    let mut unknown_rejected = 0usize;
    for x in unknown {
        let f = backbone::embed_raw(x, &tensors, &state.backbone)?;
        if open_set_decide(&f, &state.rp, &state.head, &tensors, &state.rpl_cfg)
            == Decision::Unknown
        {
            unknown_rejected += 1;
        }
    }
    Ok((
        known_correct as f64 / known.len() as f64,
        unknown_rejected as f64 / unknown.len() as f64,
    ))
}

#[cfg(test)]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
