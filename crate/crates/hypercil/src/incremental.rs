//! Novel-branch learner: hyperbolic pairwise metric loss, cross-entropy and
//! distillation combined with an adaptive weight, herding exemplar memory,
//! and nearest-mean-of-exemplars classification.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::{self, BackboneConfig, HyperbolicHead};
use crate::diff::{log_sum_exp, mean, Value};
use crate::diffgeo;
use crate::error::{Error, Result};
use crate::model::{ModelState, NovelBranch, OldModel, TrainConfig};
use crate::optim::ParameterStore;

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";

/// Weights of the incremental loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementalLossConfig {
    pub tau: f64,
    pub eta: f64,
    pub zeta_base: f64,
    /// Number of positive pairs sampled per epoch (T = 2·pairs samples).
    pub pairs_per_epoch: usize,
}

impl IncrementalLossConfig {
    pub fn new(tau: f64, eta: f64, zeta_base: f64, pairs_per_epoch: usize) -> Result<Self> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {tau}")));
        }
        if eta < 0.0 {
            return Err(Error::Config(format!("eta must be >= 0, got {eta}")));
        }
        if zeta_base < 0.0 {
            return Err(Error::Config(format!("zeta_base must be >= 0, got {zeta_base}")));
        }
        Ok(Self { tau, eta, zeta_base, pairs_per_epoch })
    }
}

/// Schedule of one incremental session.
#[derive(Debug, Clone)]
pub struct IncrementalTrainConfig {
    pub train: TrainConfig,
    /// First (1-based) session in which the metric term activates.
    pub metric_start_session: usize,
    /// First epoch within an active session in which the term activates.
    pub metric_start_epoch: usize,
    pub exemplar_budget: usize,
}

/// One stored replay sample with the embedding it had at selection time.
#[derive(Debug, Clone)]
pub struct Exemplar {
    pub sample: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// Herding-ordered replay store, at most `budget` exemplars per class.
#[derive(Debug, Clone)]
pub struct ExemplarMemory {
    budget: usize,
    classes: BTreeMap<usize, Vec<Exemplar>>,
}

impl ExemplarMemory {
    pub fn new(budget: usize) -> Self {
        Self { budget, classes: BTreeMap::new() }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn insert_class(&mut self, class: usize, exemplars: Vec<Exemplar>) -> Result<()> {
        if exemplars.len() > self.budget {
            return Err(Error::Contract(format!(
                "{} exemplars exceed the per-class budget {}",
                exemplars.len(),
                self.budget
            )));
        }
        self.classes.insert(class, exemplars);
        Ok(())
    }

    pub fn exemplars_of(&self, class: usize) -> Option<&[Exemplar]> {
        self.classes.get(&class).map(|v| v.as_slice())
    }

    pub fn stored_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[Exemplar])> {
        self.classes.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

/// Pairwise softmax loss over a full distance matrix whose samples form
/// consecutive positive pairs `(0,1), (2,3), …`. For each ordered pair
/// `(i,j)` the loss is `d(i,j)/τ + ln Σ_{t≠i} exp(−d(i,t)/τ)`; the total is
/// the mean over all `2M` ordered pairs.
pub fn metric_loss_from_distance_matrix(
    dmat: &[Vec<Value<f64>>],
    tau: f64,
) -> Result<Value<f64>> {
    let t_total = dmat.len();
    if t_total < 2 || !t_total.is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "metric batch must hold an even number >= 2 of samples, got {t_total}"
        )));
    }
    let inv_tau = 1.0 / tau;
    let mut per_pair = Vec::with_capacity(t_total);
    for m in 0..t_total / 2 {
        let (a, b) = (2 * m, 2 * m + 1);
        for (i, j) in [(a, b), (b, a)] {
            let mut denom_terms = Vec::with_capacity(t_total - 1);
            for (t, d_it) in dmat[i].iter().enumerate() {
                if t == i {
                    continue;
                }
                denom_terms.push(d_it.mul_const(-inv_tau));
            }
            let loss = dmat[i][j].mul_const(inv_tau).add(&log_sum_exp(&denom_terms));
            per_pair.push(loss);
        }
    }
    Ok(mean(&per_pair))
}

/// Metric loss over Euclidean embeddings: maps every sample through the
/// hyperbolic head and measures Poincaré distances.
pub fn hyper_metric_loss(
    embeddings: &[Vec<Value<f64>>],
    head: &HyperbolicHead,
    params: &ParameterStore<f64>,
    cfg: &IncrementalLossConfig,
) -> Result<Value<f64>> {
    let t_total = embeddings.len();
    if t_total < 2 || !t_total.is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "metric batch must hold an even number >= 2 of samples, got {t_total}"
        )));
    }
    let mapped: Vec<Vec<Value<f64>>> = embeddings
        .iter()
        .map(|e| backbone::to_hyperbolic_graph(e, head, params))
        .collect();
    let zero = Value::constant(0.0);
    let mut dmat = vec![vec![zero; t_total]; t_total];
    for i in 0..t_total {
        for j in (i + 1)..t_total {
            let d = diffgeo::distance(&mapped[i], &mapped[j], &head.ball);
            dmat[i][j] = d.clone();
            dmat[j][i] = d;
        }
    }
    metric_loss_from_distance_matrix(&dmat, cfg.tau)
}

/// Softmax cross-entropy over the novel head's logits.
pub fn cross_entropy_loss(logits: &[Value<f64>], true_idx: usize) -> Result<Value<f64>> {
    if true_idx >= logits.len() {
        return Err(Error::Label(format!(
            "label index {true_idx} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits).sub(&logits[true_idx]))
}

/// Binary cross-entropy distillation over the first `old_count` logits,
/// with `σ(old logit)` as the soft target, summed per sample and averaged
/// over the batch. `BCE(σ(o), z) = softplus(z) − σ(o)·z`.
pub fn distillation_loss(
    new_logits: &[Vec<Value<f64>>],
    old_logits: &[Vec<f64>],
    old_count: usize,
) -> Result<Value<f64>> {
    if new_logits.len() != old_logits.len() {
        return Err(Error::Shape(format!(
            "batch size mismatch: {} new vs {} old",
            new_logits.len(),
            old_logits.len()
        )));
    }
    if old_count == 0 {
        return Ok(Value::constant(0.0));
    }
    if new_logits.iter().any(|l| l.len() < old_count)
        || old_logits.iter().any(|l| l.len() < old_count)
    {
        return Err(Error::Shape(format!(
            "logit vectors shorter than old class count {old_count}"
        )));
    }
    let mut per_sample = Vec::with_capacity(new_logits.len());
    for (new, old) in new_logits.iter().zip(old_logits) {
        let mut terms = Vec::with_capacity(old_count);
        for j in 0..old_count {
            let target = sigmoid(old[j]);
            terms.push(new[j].softplus().sub(&new[j].mul_const(target)));
        }
        per_sample.push(Value::sum(&terms));
    }
    Ok(mean(&per_sample))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ζ = ζ_base·√(old/new)`, zero while no old classes exist.
pub fn adaptive_zeta(old_count: usize, new_count: usize, zeta_base: f64) -> f64 {
    if old_count == 0 {
        return 0.0;
    }
    zeta_base * (old_count as f64 / new_count as f64).sqrt()
}

/// `L' = L_ce + ζ·L_dl + η·L_m`, skipping absent or zero-weighted terms.
pub fn compose_incremental_loss(
    ce: &Value<f64>,
    distill: Option<&Value<f64>>,
    metric: Option<&Value<f64>>,
    zeta: f64,
    eta: f64,
) -> Value<f64> {
    let mut total = ce.clone();
    if let Some(d) = distill {
        if zeta != 0.0 {
            total = total.add(&d.mul_const(zeta));
        }
    }
    if let Some(m) = metric {
        if eta != 0.0 {
            total = total.add(&m.mul_const(eta));
        }
    }
    total
}

/// Everything the incremental loss needs from the novel branch.
pub struct NovelContext<'a> {
    pub params: &'a ParameterStore<f64>,
    pub backbone: &'a BackboneConfig,
    pub head: &'a HyperbolicHead,
    /// Current novel classes in logit order.
    pub classes: &'a [usize],
    pub old: Option<&'a OldModel>,
}

/// Linear-head logits over the current novel classes.
pub fn logits_graph(
    feature: &[Value<f64>],
    params: &ParameterStore<f64>,
    n_classes: usize,
) -> Vec<Value<f64>> {
    let dim = feature.len();
    let w = params.get(CLASSIFIER_WEIGHT);
    let b = params.get(CLASSIFIER_BIAS);
    (0..n_classes)
        .map(|k| Value::dot(&w[k * dim..(k + 1) * dim], feature).add(&b[k]))
        .collect()
}

pub fn logits_raw(
    feature: &[f64],
    tensors: &BTreeMap<String, Vec<f64>>,
    n_classes: usize,
) -> Vec<f64> {
    let dim = feature.len();
    let w = &tensors[CLASSIFIER_WEIGHT];
    let b = &tensors[CLASSIFIER_BIAS];
    (0..n_classes)
        .map(|k| {
            w[k * dim..(k + 1) * dim]
                .iter()
                .zip(feature)
                .map(|(a, x)| a * x)
                .sum::<f64>()
                + b[k]
        })
        .collect()
}

/// Full incremental-session loss for one batch: cross-entropy over the
/// novel head, distillation against the frozen old branch, and (when a pair
/// batch is supplied) the hyperbolic metric term. `ζ` comes from
/// [`adaptive_zeta`] with `new_count` the classes added this session.
pub fn incremental_loss(
    batch: &[(&[f64], usize)],
    pair_batch: Option<&[&[f64]]>,
    ctx: &NovelContext,
    cfg: &IncrementalLossConfig,
    new_count: usize,
) -> Result<Value<f64>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let n_classes = ctx.classes.len();
    let old_count = ctx.old.map(|o| o.classes.len()).unwrap_or(0);
    let zeta = adaptive_zeta(old_count, new_count.max(1), cfg.zeta_base);

    let mut ce_terms = Vec::with_capacity(batch.len());
    let mut new_logits = Vec::with_capacity(batch.len());
    let mut old_logits = Vec::with_capacity(batch.len());
    for &(x, label_idx) in batch {
        let feature = backbone::embed_graph(x, ctx.params, ctx.backbone)?;
        let logits = logits_graph(&feature, ctx.params, n_classes);
        ce_terms.push(cross_entropy_loss(&logits, label_idx)?);
        if let Some(old) = ctx.old {
            let old_feature = backbone::embed_raw(x, &old.tensors, ctx.backbone)?;
            old_logits.push(logits_raw(&old_feature, &old.tensors, old_count));
        }
        new_logits.push(logits);
    }
    let ce = mean(&ce_terms);

    let distill = if ctx.old.is_some() && zeta != 0.0 {
        Some(distillation_loss(&new_logits, &old_logits, old_count)?)
    } else {
        None
    };

    let metric = match pair_batch {
        Some(pairs) if cfg.eta != 0.0 => {
            let embedded: Vec<Vec<Value<f64>>> = pairs
                .iter()
                .map(|x| backbone::embed_graph(x, ctx.params, ctx.backbone))
                .collect::<Result<_>>()?;
            Some(hyper_metric_loss(&embedded, ctx.head, ctx.params, cfg)?)
        }
        _ => None,
    };

    Ok(compose_incremental_loss(&ce, distill.as_ref(), metric.as_ref(), zeta, cfg.eta))
}

/// Greedy herding order: at step `t` pick the unselected sample minimizing
/// `‖μ − (Σ selected + candidate)/t‖₂`, ties to the lowest index.
pub fn herding_select(embeddings: &[Vec<f64>], class_mean: &[f64], budget: usize) -> Vec<usize> {
    let n = embeddings.len();
    let cap = budget.min(n);
    let mut selected = Vec::with_capacity(cap);
    let mut used = vec![false; n];
    let mut running_sum = vec![0.0; class_mean.len()];
    for t in 1..=cap {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if used[i] {
                continue;
            }
            let d: f64 = class_mean
                .iter()
                .enumerate()
                .map(|(j, &mu)| {
                    let v = mu - (running_sum[j] + embeddings[i][j]) / t as f64;
                    v * v
                })
                .sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("non-empty candidate set");
        used[i] = true;
        selected.push(i);
        for (j, s) in running_sum.iter_mut().enumerate() {
            *s += embeddings[i][j];
        }
    }
    selected
}

/// Mean of the stored exemplars' embeddings, recomputed under the current
/// backbone.
pub fn class_means(
    memory: &ExemplarMemory,
    tensors: &BTreeMap<String, Vec<f64>>,
    cfg: &BackboneConfig,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut means = BTreeMap::new();
    for (class, exemplars) in memory.iter() {
        if exemplars.is_empty() {
            return Err(Error::Contract(format!("class {class} has no exemplars")));
        }
        let mut acc = vec![0.0; cfg.embed_dim];
        for ex in exemplars {
            let e = backbone::embed_raw(&ex.sample, tensors, cfg)?;
            for (a, v) in acc.iter_mut().zip(&e) {
                *a += v;
            }
        }
        let n = exemplars.len() as f64;
        means.insert(class, acc.into_iter().map(|v| v / n).collect());
    }
    Ok(means)
}

/// Nearest class mean in Euclidean distance, ties to the lowest class id.
pub fn nme_classify(embedding: &[f64], means: &BTreeMap<usize, Vec<f64>>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (&class, mean) in means {
        let d: f64 = embedding
            .iter()
            .zip(mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((class, d));
        }
    }
    best.expect("at least one class mean").0
}

/// Train one N-way K-shot session on the novel branch: snapshot the old
/// model, extend the head, optimize cross-entropy + distillation (+ the
/// metric term per schedule) over novel data and replayed exemplars, then
/// herd the new classes into memory.
pub fn train_incremental_session(
    novel_data: &[(Vec<f64>, usize)],
    state: &mut ModelState,
    loss_cfg: &IncrementalLossConfig,
    train_cfg: &IncrementalTrainConfig,
    session_index: usize,
    seed: u64,
) -> Result<()> {
    if novel_data.is_empty() {
        return Err(Error::Dataset("empty novel session dataset".into()));
    }
    let mut new_classes: Vec<usize> = novel_data.iter().map(|(_, c)| *c).collect();
    new_classes.sort_unstable();
    new_classes.dedup();
    let seen = state.seen_classes();
    if let Some(dup) = new_classes.iter().find(|c| seen.contains(c)) {
        return Err(Error::Protocol(format!(
            "class {dup} in session {session_index} overlaps previously seen classes"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embed_dim = state.backbone.embed_dim;

    // Lazily create the novel branch from the trained base backbone.
    if state.novel.is_none() {
        let mut params = ParameterStore::new(train_cfg.train.sgd.clone());
        let base_snapshot = state.base_params.snapshot();
        for layer in 0..state.backbone.n_layers() {
            let w = backbone::weight_name(layer);
            let b = backbone::bias_name(layer);
            params.insert(&w, base_snapshot[&w].clone());
            params.insert(&b, base_snapshot[&b].clone());
        }
        params.insert(backbone::LOG_SCALE, base_snapshot[backbone::LOG_SCALE].clone());
        backbone::apply_freeze(&mut params, &state.backbone);
        state.novel = Some(NovelBranch {
            params,
            classes: Vec::new(),
            memory: ExemplarMemory::new(train_cfg.exemplar_budget),
            old: None,
        });
    }
    let novel = state.novel.as_mut().expect("just initialized");

    // Snapshot the previous branch as the distillation teacher.
    let old_count = novel.classes.len();
    if old_count > 0 {
        novel.old = Some(OldModel {
            tensors: novel.params.snapshot(),
            classes: novel.classes.clone(),
        });
    }

    // Extend the classifier head by the new classes.
    let normal = Normal::new(0.0, (2.0 / embed_dim as f64).sqrt()).expect("valid std");
    let mut weight = if old_count > 0 {
        novel.params.snapshot()[CLASSIFIER_WEIGHT].clone()
    } else {
        Vec::new()
    };
    let mut bias = if old_count > 0 {
        novel.params.snapshot()[CLASSIFIER_BIAS].clone()
    } else {
        Vec::new()
    };
    for _ in 0..new_classes.len() * embed_dim {
        weight.push(normal.sample(&mut rng));
    }
    bias.extend(std::iter::repeat_n(0.0, new_classes.len()));
    novel.params.insert(CLASSIFIER_WEIGHT, weight);
    novel.params.insert(CLASSIFIER_BIAS, bias);
    novel.classes.extend(&new_classes);

    // Training pool: this session's shots plus replayed exemplars, labeled
    // by index into the novel class list.
    let label_idx = |class: usize, classes: &[usize]| {
        classes.iter().position(|&c| c == class).expect("known class")
    };
    let mut pool: Vec<(Vec<f64>, usize)> = novel_data
        .iter()
        .map(|(x, c)| (x.clone(), label_idx(*c, &novel.classes)))
        .collect();
    for (class, exemplars) in novel.memory.iter() {
        for ex in exemplars {
            pool.push((ex.sample.clone(), label_idx(class, &novel.classes)));
        }
    }

    // Per-class sample indices for positive-pair sampling.
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, idx)) in pool.iter().enumerate() {
        by_class.entry(*idx).or_default().push(i);
    }
    let class_keys: Vec<usize> = by_class.keys().copied().collect();

    let old_model = novel.old.clone();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 0..train_cfg.train.epochs {
        order.shuffle(&mut rng);
        let metric_active = loss_cfg.eta != 0.0
            && loss_cfg.pairs_per_epoch > 0
            && session_index >= train_cfg.metric_start_session
            && epoch >= train_cfg.metric_start_epoch;
        let pair_samples: Option<Vec<Vec<f64>>> = if metric_active {
            let mut samples = Vec::with_capacity(2 * loss_cfg.pairs_per_epoch);
            for _ in 0..loss_cfg.pairs_per_epoch {
                let class = class_keys[rng.random_range(0..class_keys.len())];
                let members = &by_class[&class];
                if members.len() >= 2 {
                    let a = rng.random_range(0..members.len());
                    let mut b = rng.random_range(0..members.len() - 1);
                    if b >= a {
                        b += 1;
                    }
                    samples.push(pool[members[a]].0.clone());
                    samples.push(pool[members[b]].0.clone());
                } else {
                    // fewer than two samples: draw the same one twice
                    samples.push(pool[members[0]].0.clone());
                    samples.push(pool[members[0]].0.clone());
                }
            }
            Some(samples)
        } else {
            None
        };

        for (batch_no, chunk) in order.chunks(train_cfg.train.batch_size.max(1)).enumerate() {
            let batch: Vec<(&[f64], usize)> =
                chunk.iter().map(|&i| (pool[i].0.as_slice(), pool[i].1)).collect();
            let pair_refs: Option<Vec<&[f64]>> = if batch_no == 0 {
                pair_samples
                    .as_ref()
                    .map(|s| s.iter().map(|v| v.as_slice()).collect())
            } else {
                None
            };
            let ctx = NovelContext {
                params: &novel.params,
                backbone: &state.backbone,
                head: &state.head,
                classes: &novel.classes,
                old: old_model.as_ref(),
            };
            let loss = incremental_loss(
                &batch,
                pair_refs.as_deref(),
                &ctx,
                loss_cfg,
                new_classes.len(),
            )?;
            loss.forward_eval()?;
            loss.backward();
            novel.params.sgd_step(epoch)?;
        }
    }

    // Herd this session's classes into memory under the trained backbone.
    let tensors = novel.params.snapshot();
    for &class in &new_classes {
        let samples: Vec<&Vec<f64>> = novel_data
            .iter()
            .filter(|(_, c)| *c == class)
            .map(|(x, _)| x)
            .collect();
        let embeddings: Vec<Vec<f64>> = samples
            .iter()
            .map(|x| backbone::embed_raw(x, &tensors, &state.backbone))
            .collect::<Result<_>>()?;
        let mut mean_vec = vec![0.0; embed_dim];
        for e in &embeddings {
            for (a, v) in mean_vec.iter_mut().zip(e) {
                *a += v;
            }
        }
        for a in mean_vec.iter_mut() {
            *a /= embeddings.len() as f64;
        }
        let picks = herding_select(&embeddings, &mean_vec, train_cfg.exemplar_budget);
        let exemplars: Vec<Exemplar> = picks
            .into_iter()
            .map(|i| Exemplar { sample: samples[i].clone(), embedding: embeddings[i].clone() })
            .collect();
        novel.memory.insert_class(class, exemplars)?;
    }
    Ok(())
}
