//! Session orchestration and evaluation: base + N-way K-shot session
//! splits, two-branch routed prediction, and the per-session accuracy,
//! performance-drop and average-accuracy metrics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, BackboneConfig, HyperbolicHead};
use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::incremental::{self, IncrementalLossConfig, IncrementalTrainConfig};
use crate::model::{ModelState, TrainConfig};
use crate::rpl::{self, Decision, RplLossConfig};

/// Class assignment of the base session and every incremental session,
/// plus the chosen K-shot training indices per incremental class.
#[derive(Debug, Clone)]
pub struct SessionPlan {
    pub base_classes: Vec<usize>,
    /// Class ids of each incremental session, in session order.
    pub incremental: Vec<Vec<usize>>,
    /// Selected training-sample indices (into the dataset) per incremental
    /// class.
    pub shots: BTreeMap<usize, Vec<usize>>,
    pub n_way: usize,
    pub k_shot: usize,
    pub test_counts: BTreeMap<usize, usize>,
}

impl SessionPlan {
    /// Total session count including the base session.
    pub fn n_sessions(&self) -> usize {
        1 + self.incremental.len()
    }

    /// Classes evaluated through the given 1-based session index.
    pub fn classes_through(&self, session: usize) -> Vec<usize> {
        let mut classes = self.base_classes.clone();
        for s in self.incremental.iter().take(session.saturating_sub(1)) {
            classes.extend(s);
        }
        classes
    }

    /// Incremental classes seen through the given 1-based session index.
    pub fn novel_classes_through(&self, session: usize) -> Vec<usize> {
        self.incremental
            .iter()
            .take(session.saturating_sub(1))
            .flatten()
            .copied()
            .collect()
    }

    /// All incremental classes regardless of session.
    pub fn all_novel_classes(&self) -> Vec<usize> {
        self.incremental.iter().flatten().copied().collect()
    }
}

/// Deterministically assign classes to the base session and `n_incremental`
/// N-way sessions, and draw K training shots per incremental class.
pub fn build_sessions(
    dataset: &FeatureDataset,
    base_count: usize,
    n_way: usize,
    k_shot: usize,
    n_incremental: usize,
    seed: u64,
) -> Result<SessionPlan> {
    let needed = base_count + n_way * n_incremental;
    if needed > dataset.n_classes() {
        return Err(Error::Protocol(format!(
            "plan needs {needed} classes ({base_count} base + {n_incremental}x{n_way}-way) \
             but the dataset has {}",
            dataset.n_classes()
        )));
    }
    if base_count == 0 || n_way == 0 || k_shot == 0 {
        return Err(Error::Protocol("base count, ways and shots must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut class_ids: Vec<usize> = (0..dataset.n_classes()).collect();
    class_ids.shuffle(&mut rng);

    let base_classes: Vec<usize> = class_ids[..base_count].to_vec();
    let mut incremental = Vec::with_capacity(n_incremental);
    let mut cursor = base_count;
    for _ in 0..n_incremental {
        incremental.push(class_ids[cursor..cursor + n_way].to_vec());
        cursor += n_way;
    }

    let mut shots = BTreeMap::new();
    for &class in incremental.iter().flatten() {
        let mut train_idx = dataset.train_indices(class);
        if train_idx.len() < k_shot {
            return Err(Error::Protocol(format!(
                "class {class} has {} training samples, needs {k_shot}",
                train_idx.len()
            )));
        }
        train_idx.shuffle(&mut rng);
        let mut chosen: Vec<usize> = train_idx[..k_shot].to_vec();
        chosen.sort_unstable();
        shots.insert(class, chosen);
    }

    let mut test_counts = BTreeMap::new();
    for class in 0..dataset.n_classes() {
        test_counts.insert(class, dataset.test_count(class));
    }

    Ok(SessionPlan { base_classes, incremental, shots, n_way, k_shot, test_counts })
}

/// Which branch produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routed {
    Base(usize),
    Novel(usize),
    /// Rejected by the base branch with no novel branch to fall back on.
    Rejected,
}

impl Routed {
    pub fn class(&self) -> Option<usize> {
        match self {
            Routed::Base(c) | Routed::Novel(c) => Some(*c),
            Routed::Rejected => None,
        }
    }
}

/// Frozen evaluation context: snapshots of both branches plus the novel
/// NME means, taken once per evaluation pass.
pub struct Router<'a> {
    state: &'a ModelState,
    base_tensors: BTreeMap<String, Vec<f64>>,
    novel_tensors: Option<BTreeMap<String, Vec<f64>>>,
    novel_means: Option<BTreeMap<usize, Vec<f64>>>,
}

impl<'a> Router<'a> {
    pub fn new(state: &'a ModelState) -> Result<Self> {
        let base_tensors = state.base_params.snapshot();
        let (novel_tensors, novel_means) = match &state.novel {
            Some(novel) if !novel.classes.is_empty() => {
                let tensors = novel.params.snapshot();
                let means = incremental::class_means(&novel.memory, &tensors, &state.backbone)?;
                (Some(tensors), Some(means))
            }
            _ => (None, None),
        };
        Ok(Self { state, base_tensors, novel_tensors, novel_means })
    }

    /// Send the sample to the base branch first; on rejection fall through
    /// to nearest-mean-of-exemplars over the novel classes.
    pub fn predict(&self, sample: &[f64]) -> Result<Routed> {
        let feature = backbone::embed_raw(sample, &self.base_tensors, &self.state.backbone)?;
        match rpl::open_set_decide(
            &feature,
            &self.state.rp,
            &self.state.head,
            &self.base_tensors,
            &self.state.rpl_cfg,
        ) {
            Decision::Known(class) => Ok(Routed::Base(class)),
            Decision::Unknown => match (&self.novel_tensors, &self.novel_means) {
                (Some(tensors), Some(means)) => {
                    let f = backbone::embed_raw(sample, tensors, &self.state.backbone)?;
                    Ok(Routed::Novel(incremental::nme_classify(&f, means)))
                }
                _ => Ok(Routed::Rejected),
            },
        }
    }
}

/// Outcome counts of one evaluation pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalCounts {
    pub total: usize,
    pub correct: usize,
    pub by_base: usize,
    pub by_novel: usize,
    pub rejected: usize,
}

impl EvalCounts {
    pub fn accuracy_percent(&self) -> f64 {
        100.0 * self.correct as f64 / self.total as f64
    }
}

fn evaluate(router: &Router, samples: &[(Vec<f64>, usize)]) -> Result<EvalCounts> {
    if samples.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let mut counts = EvalCounts::default();
    for (x, label) in samples {
        let routed = router.predict(x)?;
        counts.total += 1;
        match routed {
            Routed::Base(_) => counts.by_base += 1,
            Routed::Novel(_) => counts.by_novel += 1,
            Routed::Rejected => counts.rejected += 1,
        }
        if routed.class() == Some(*label) {
            counts.correct += 1;
        }
    }
    // routing exclusivity: each sample counted by exactly one branch
    if counts.by_base + counts.by_novel + counts.rejected != counts.total {
        return Err(Error::Protocol("prediction not attributed to exactly one branch".into()));
    }
    Ok(counts)
}

/// Routed evaluation with per-branch attribution counts over the union of
/// test samples of all classes seen through the 1-based session index.
pub fn session_eval(
    state: &ModelState,
    plan: &SessionPlan,
    dataset: &FeatureDataset,
    session: usize,
) -> Result<EvalCounts> {
    let classes = plan.classes_through(session);
    let test = dataset.test_set(&classes);
    let router = Router::new(state)?;
    evaluate(&router, &test)
}

/// Routed accuracy (percent) over the union of test samples of all classes
/// seen through the 1-based session index.
pub fn session_accuracy(
    state: &ModelState,
    plan: &SessionPlan,
    dataset: &FeatureDataset,
    session: usize,
) -> Result<f64> {
    Ok(session_eval(state, plan, dataset, session)?.accuracy_percent())
}

/// Plain argmax accuracy (percent) of the base branch over labeled samples,
/// ignoring the rejection threshold.
pub fn close_set_accuracy(state: &ModelState, samples: &[(Vec<f64>, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let tensors = state.base_params.snapshot();
    let mut correct = 0usize;
    for (x, label) in samples {
        let f = backbone::embed_raw(x, &tensors, &state.backbone)?;
        let probs =
            rpl::class_probabilities(&f, &state.rp, &state.head, &tensors, &state.rpl_cfg);
        match rpl::decide_from_probabilities(&probs, &state.rp.classes, 0.0) {
            Decision::Known(c) if c == *label => correct += 1,
            _ => {}
        }
    }
    Ok(100.0 * correct as f64 / samples.len() as f64)
}

/// Routed accuracy (percent) restricted to incremental classes seen so far;
/// defined from session 2 onward.
pub fn novel_accuracy(
    state: &ModelState,
    plan: &SessionPlan,
    dataset: &FeatureDataset,
    session: usize,
) -> Result<f64> {
    if session < 2 {
        return Err(Error::Contract(
            "novel accuracy is undefined for the base session".into(),
        ));
    }
    let classes = plan.novel_classes_through(session);
    let test = dataset.test_set(&classes);
    let router = Router::new(state)?;
    Ok(evaluate(&router, &test)?.accuracy_percent())
}

/// First-session accuracy minus last-session accuracy.
pub fn performance_drop(accuracies: &[f64]) -> f64 {
    match (accuracies.first(), accuracies.last()) {
        (Some(first), Some(last)) => first - last,
        _ => 0.0,
    }
}

/// Arithmetic mean of the per-session accuracies, full precision.
pub fn average_accuracy(accuracies: &[f64]) -> f64 {
    if accuracies.is_empty() {
        return 0.0;
    }
    accuracies.iter().sum::<f64>() / accuracies.len() as f64
}

/// Per-session results of one full protocol run. Accuracies are percentages
/// at full precision; rounding happens at report emission.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SessionReport {
    pub session_acc: Vec<f64>,
    /// Session-1 known/unknown accuracies; absent when the plan has no
    /// future classes to reject.
    pub known_acc: Option<f64>,
    pub unknown_acc: Option<f64>,
    /// Base-branch argmax accuracy on the base test set, ignoring the
    /// rejection threshold.
    pub base_close_set_acc: f64,
    /// Per-session novel-only accuracy; the base session entry is None.
    pub novel_acc: Vec<Option<f64>>,
    pub pd: f64,
    pub average_acc: f64,
}

/// Everything a protocol run needs besides the data and the seed.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub backbone: BackboneConfig,
    pub head: HyperbolicHead,
    pub rpl: RplLossConfig,
    pub rp_points: usize,
    pub base_train: TrainConfig,
    pub incremental_loss: IncrementalLossConfig,
    pub incremental_train: IncrementalTrainConfig,
}

/// Train the base session, then every incremental session in order,
/// evaluating after each. The base branch is checked bit-identical after
/// every incremental session and any breach aborts the run.
pub fn run_protocol(
    dataset: &FeatureDataset,
    plan: &SessionPlan,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<SessionReport> {
    // session class sets must be pairwise disjoint
    let mut seen = std::collections::BTreeSet::new();
    for class in plan.base_classes.iter().chain(plan.incremental.iter().flatten()) {
        if !seen.insert(*class) {
            return Err(Error::Protocol(format!(
                "class {class} appears in more than one session"
            )));
        }
    }
    if cfg.backbone.input_dim != dataset.dim() {
        return Err(Error::Protocol(format!(
            "backbone input_dim {} does not match dataset dimension {}",
            cfg.backbone.input_dim,
            dataset.dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_seed = rng.random::<u64>();

    // Standardize on base-session training statistics, frozen for the rest
    // of the run.
    let raw_base_train = dataset.train_set(&plan.base_classes);
    let standardizer =
        crate::data::Standardizer::fit(raw_base_train.iter().map(|(x, _)| x.as_slice()))?;
    let dataset = &standardizer.apply_dataset(dataset);

    let base_train = dataset.train_set(&plan.base_classes);
    let mut state = rpl::train_base_session(
        &base_train,
        &plan.base_classes,
        &cfg.backbone,
        cfg.head,
        cfg.rpl,
        cfg.rp_points,
        &cfg.base_train,
        base_seed,
    )?;
    let base_frozen = state.base_snapshot();

    let mut session_acc = vec![session_accuracy(&state, plan, dataset, 1)?];
    let mut novel_acc: Vec<Option<f64>> = vec![None];
    let base_close_set_acc =
        close_set_accuracy(&state, &dataset.test_set(&plan.base_classes))?;

    let future_classes = plan.all_novel_classes();
    let (known_acc, unknown_acc) = if future_classes.is_empty() {
        (None, None)
    } else {
        let known = dataset.test_set(&plan.base_classes);
        let unknown: Vec<Vec<f64>> = dataset
            .test_set(&future_classes)
            .into_iter()
            .map(|(x, _)| x)
            .collect();
        let (k, u) = rpl::evaluate_known_unknown(&state, &known, &unknown)?;
        (Some(100.0 * k), Some(100.0 * u))
    };

    for (i, session_classes) in plan.incremental.iter().enumerate() {
        let session_index = i + 2; // 1-based, base session is 1
        let session_seed = rng.random::<u64>();
        let mut novel_data = Vec::with_capacity(session_classes.len() * plan.k_shot);
        for &class in session_classes {
            for &idx in &plan.shots[&class] {
                novel_data.push((dataset.samples()[idx].features.clone(), class));
            }
        }
        incremental::train_incremental_session(
            &novel_data,
            &mut state,
            &cfg.incremental_loss,
            &cfg.incremental_train,
            session_index,
            session_seed,
        )?;

        if state.base_snapshot() != base_frozen {
            return Err(Error::Protocol(format!(
                "base branch changed during session {session_index}"
            )));
        }

        session_acc.push(session_accuracy(&state, plan, dataset, session_index)?);
        novel_acc.push(Some(novel_accuracy(&state, plan, dataset, session_index)?));
    }

    let pd = performance_drop(&session_acc);
    let average_acc = average_accuracy(&session_acc);
    Ok(SessionReport {
        session_acc,
        known_acc,
        unknown_acc,
        base_close_set_acc,
        novel_acc,
        pd,
        average_acc,
    })
}
