//! Experiment execution: dataset construction, protocol runs, parameter
//! sweeps, and the finite-difference gradient suite.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, BackboneConfig, HyperbolicHead};
use crate::ball::BallConfig;
use crate::config::ExperimentConfig;
use crate::data::FeatureDataset;
use crate::diff::Value;
use crate::error::{Error, Result};
use crate::gradcheck::finite_difference_check;
use crate::incremental::{self, IncrementalLossConfig, NovelContext};
use crate::model::OldModel;
use crate::optim::{ParameterStore, SgdConfig};
use crate::protocol::{self, SessionPlan, SessionReport};
use crate::report::SweepRow;
use crate::rpl::{self, ReciprocalPointSet, RplLossConfig};

/// Load the CSV dataset named by the config, or generate synthetic blobs.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<FeatureDataset> {
    match &cfg.dataset_csv {
        Some(path) => FeatureDataset::load_csv(Path::new(path)),
        None => FeatureDataset::generate_synthetic(
            cfg.classes,
            cfg.train_per_class,
            cfg.test_per_class,
            cfg.dim,
            cfg.separation,
            cfg.seed,
        ),
    }
}

pub struct RunArtifacts {
    pub report: SessionReport,
    pub plan: SessionPlan,
}

/// One full run: dataset, session plan, base + incremental training,
/// per-session evaluation.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dataset = build_dataset(cfg)?;
    let plan = protocol::build_sessions(
        &dataset,
        cfg.base_classes,
        cfg.ways,
        cfg.shots,
        cfg.sessions,
        cfg.seed,
    )?;
    let pcfg = cfg.protocol(dataset.dim())?;
    let report = protocol::run_protocol(&dataset, &plan, &pcfg, cfg.seed)?;
    Ok(RunArtifacts { report, plan })
}

/// Apply one sweepable parameter to a config copy.
pub fn apply_sweep_param(cfg: &mut ExperimentConfig, param: &str, value: f64) -> Result<()> {
    match param {
        "beta" => cfg.beta = value,
        "curvature" => cfg.curvature = value,
        "tau" => cfg.tau = value,
        "threshold" => cfg.threshold = value,
        other => {
            return Err(Error::Config(format!(
                "'{other}' is not sweepable; choose beta, curvature, tau or threshold"
            )))
        }
    }
    Ok(())
}

/// One protocol run per value with the same seed. Every value is validated
/// before any run starts.
pub fn run_sweep(cfg: &ExperimentConfig, param: &str, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        apply_sweep_param(&mut c, param, v)?;
        c.validate()?;
        configs.push(c);
    }
    let mut rows = Vec::with_capacity(values.len());
    for (c, &v) in configs.iter().zip(values) {
        let run = run_experiment(c)?;
        rows.push(SweepRow {
            value: v,
            final_acc: *run.report.session_acc.last().expect("at least one session"),
            pd: run.report.pd,
            average_acc: run.report.average_acc,
        });
    }
    Ok(rows)
}

/// Maximum relative finite-difference error per loss family, each probed on
/// `fixtures` random small fixtures.
pub fn gradcheck_suite(seed: u64, fixtures: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut results = Vec::new();
    let mut worst = [0.0f64; 5];
    for fixture in 0..fixtures {
        let errs = gradcheck_fixture(seed.wrapping_add(fixture as u64))?;
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let names = [
        "classification_loss",
        "open_space_risk",
        "base_loss",
        "hyper_metric_loss",
        "incremental_loss",
    ];
    for (name, w) in names.into_iter().zip(worst) {
        results.push((name, w));
    }
    Ok(results)
}

fn gradcheck_fixture(seed: u64) -> Result<[f64; 5]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = HyperbolicHead { ball: BallConfig::with_curvature(0.5)? };
    let sgd = SgdConfig::new(0.1, 0.0, 0.0, vec![])?;
    let step = 1e-6;
    let tol = 1e-4;
    let dim = 2;

    // shared store: feature + reciprocal points for three classes
    let mut params = ParameterStore::new(sgd.clone());
    params.insert("feature", (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    params.insert(backbone::LOG_SCALE, vec![rng.random_range(-0.3..0.3)]);
    let classes = [0usize, 1, 2];
    let m = 1 + (seed % 2) as usize;
    for &k in &classes {
        params.insert(
            &rpl::points_name(k),
            (0..m * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        params.insert(&rpl::margin_name(k), vec![rng.random_range(0.5..2.0)]);
    }
    let rp = ReciprocalPointSet { classes: classes.to_vec(), m, dim };
    let rcfg = RplLossConfig::new(0.7, 0.1, 0.75)?;
    let label = (seed % 3) as usize;

    let classification = finite_difference_check(
        |ps| {
            let f: Vec<Value<f64>> = ps.get("feature").to_vec();
            rpl::classification_loss(&f, label, &rp, &head, ps, &rcfg)
        },
        &params,
        step,
        tol,
    )?
    .max_rel_err;

    let risk = finite_difference_check(
        |ps| {
            let f: Vec<Value<f64>> = ps.get("feature").to_vec();
            rpl::open_space_risk(
                &f,
                &rp.points_of(ps, label),
                rp.margin_of(ps, label),
                &head,
                ps,
                &rcfg,
            )
        },
        &params,
        step,
        tol,
    )?
    .max_rel_err;

    // base loss over a real backbone
    let bb = BackboneConfig::new(3, vec![4], dim, 0)?;
    let mut base_params = ParameterStore::new(sgd.clone());
    backbone::init_params_into(&mut base_params, &bb, &mut rng);
    jitter_biases(&base_params, &bb, &mut rng);
    let base_rp =
        ReciprocalPointSet::init_into(&mut base_params, &classes, m, dim, &mut rng)?;
    let batch_data: Vec<(Vec<f64>, usize)> = (0..4)
        .map(|i| ((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), i % 3))
        .collect();
    let base = finite_difference_check(
        |ps| {
            let b: Vec<(&[f64], usize)> =
                batch_data.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
            rpl::base_loss(&b, &base_rp, &head, ps, &rcfg, &bb)
        },
        &base_params,
        step,
        tol,
    )?
    .max_rel_err;

    // metric loss over learnable embeddings
    let t_total = 4;
    let mut metric_params = ParameterStore::new(sgd.clone());
    metric_params.insert(
        "emb",
        (0..t_total * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    metric_params.insert(backbone::LOG_SCALE, vec![rng.random_range(-0.3..0.3)]);
    let icfg = IncrementalLossConfig::new(1.0, 1.0, 1.0, 2)?;
    let metric = finite_difference_check(
        |ps| {
            let flat = ps.get("emb");
            let embeddings: Vec<Vec<Value<f64>>> =
                flat.chunks(3).map(|c| c.to_vec()).collect();
            incremental::hyper_metric_loss(&embeddings, &head, ps, &icfg)
        },
        &metric_params,
        step,
        tol,
    )?
    .max_rel_err;

    // composite incremental loss with teacher, head and metric term
    let mut inc_params = ParameterStore::new(sgd);
    backbone::init_params_into(&mut inc_params, &bb, &mut rng);
    jitter_biases(&inc_params, &bb, &mut rng);
    inc_params.insert(
        incremental::CLASSIFIER_WEIGHT,
        (0..3 * dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
    );
    inc_params.insert(
        incremental::CLASSIFIER_BIAS,
        (0..3).map(|_| rng.random_range(-0.1..0.1)).collect(),
    );
    let old = OldModel {
        tensors: {
            let mut t = inc_params.snapshot();
            for v in t.get_mut(incremental::CLASSIFIER_WEIGHT).unwrap() {
                *v += rng.random_range(-0.2..0.2);
            }
            t
        },
        classes: vec![100, 101],
    };
    let inc_batch: Vec<(Vec<f64>, usize)> = (0..3)
        .map(|i| ((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), i % 3))
        .collect();
    let pair_data: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let composite = finite_difference_check(
        |ps| {
            let ctx = NovelContext {
                params: ps,
                backbone: &bb,
                head: &head,
                classes: &[100, 101, 102],
                old: Some(&old),
            };
            let batch: Vec<(&[f64], usize)> =
                inc_batch.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
            let pairs: Vec<&[f64]> = pair_data.iter().map(|v| v.as_slice()).collect();
            incremental::incremental_loss(&batch, Some(&pairs), &ctx, &icfg, 1)
        },
        &inc_params,
        step,
        tol,
    )?
    .max_rel_err;

    Ok([classification, risk, base, metric, composite])
}

fn jitter_biases(store: &ParameterStore<f64>, cfg: &BackboneConfig, rng: &mut ChaCha8Rng) {
    for layer in 0..cfg.n_layers() {
        for leaf in store.get(&backbone::bias_name(layer)) {
            leaf.set_value(rng.random_range(0.01..0.2));
        }
    }
}
