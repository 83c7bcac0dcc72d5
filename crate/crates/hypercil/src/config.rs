//! Experiment configuration: a flat `key = value` file with `#` comments.
//! Every knob is validated at parse time and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, HyperbolicHead};
use crate::ball::BallConfig;
use crate::error::{Error, Result};
use crate::incremental::{IncrementalLossConfig, IncrementalTrainConfig};
use crate::model::TrainConfig;
use crate::optim::SgdConfig;
use crate::protocol::ProtocolConfig;
use crate::rpl::RplLossConfig;

/// All knobs of a run. Defaults: β=0.7, c=0.1, τ=1, η=1, threshold=0.75,
/// with desk-scale shapes and schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    // geometry
    pub curvature: f64,
    pub boundary_eps: f64,
    // base branch
    pub beta: f64,
    pub lambda_open: f64,
    pub threshold: f64,
    pub rp_points: usize,
    // incremental branch
    pub tau: f64,
    pub eta: f64,
    pub zeta_base: f64,
    /// 0 means "use batch_size".
    pub pairs_per_epoch: usize,
    pub exemplar_budget: usize,
    pub metric_start_session: usize,
    pub metric_start_epoch: usize,
    // backbone
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub frozen_prefix_layers: usize,
    // optimization
    pub base_epochs: usize,
    pub incremental_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub incremental_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub milestones: Vec<(usize, f64)>,
    // session plan
    pub base_classes: usize,
    pub ways: usize,
    pub shots: usize,
    pub sessions: usize,
    // data source: a CSV path, or synthetic blobs described below
    pub dataset_csv: Option<String>,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    // run
    pub seed: u64,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            curvature: 0.1,
            boundary_eps: 1e-5,
            beta: 0.7,
            lambda_open: 0.1,
            threshold: 0.75,
            rp_points: 1,
            tau: 1.0,
            eta: 1.0,
            zeta_base: 1.0,
            pairs_per_epoch: 0,
            exemplar_budget: 5,
            metric_start_session: 4,
            metric_start_epoch: 20,
            hidden_dims: vec![32],
            embed_dim: 16,
            frozen_prefix_layers: 1,
            base_epochs: 80,
            incremental_epochs: 20,
            batch_size: 32,
            base_lr: 0.005,
            incremental_lr: 0.01,
            weight_decay: 5e-4,
            momentum: 0.9,
            milestones: vec![(80, 0.1), (120, 0.1)],
            base_classes: 6,
            ways: 2,
            shots: 5,
            sessions: 2,
            dataset_csv: None,
            classes: 10,
            train_per_class: 30,
            test_per_class: 20,
            dim: 8,
            separation: 8.0,
            seed: 1,
            out_dir: "results".into(),
        }
    }
}

/// Parse a config file; missing keys take defaults, unknown keys are
/// rejected, and all constraints are checked before returning.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {lineno}: expected 'key = value', got '{line}'"))
        })?;
        cfg.set(key.trim(), value.trim())
            .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
    }
    Ok(cfg)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn parse_milestones(key: &str, value: &str) -> Result<Vec<(usize, f64)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|pair| {
            let (e, f) = pair.trim().split_once(':').ok_or_else(|| {
                Error::Config(format!("{key}: expected 'epoch:factor', got '{pair}'"))
            })?;
            Ok((parse_num(key, e.trim())?, parse_num(key, f.trim())?))
        })
        .collect()
}

impl ExperimentConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "curvature" => self.curvature = parse_num(key, value)?,
            "boundary_eps" => self.boundary_eps = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "lambda_open" => self.lambda_open = parse_num(key, value)?,
            "threshold" => self.threshold = parse_num(key, value)?,
            "rp_points" => self.rp_points = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "eta" => self.eta = parse_num(key, value)?,
            "zeta_base" => self.zeta_base = parse_num(key, value)?,
            "pairs_per_epoch" => self.pairs_per_epoch = parse_num(key, value)?,
            "exemplar_budget" => self.exemplar_budget = parse_num(key, value)?,
            "metric_start_session" => self.metric_start_session = parse_num(key, value)?,
            "metric_start_epoch" => self.metric_start_epoch = parse_num(key, value)?,
            "hidden_dims" => self.hidden_dims = parse_usize_list(key, value)?,
            "embed_dim" => self.embed_dim = parse_num(key, value)?,
            "frozen_prefix_layers" => self.frozen_prefix_layers = parse_num(key, value)?,
            "base_epochs" => self.base_epochs = parse_num(key, value)?,
            "incremental_epochs" => self.incremental_epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "base_lr" => self.base_lr = parse_num(key, value)?,
            "incremental_lr" => self.incremental_lr = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "milestones" => self.milestones = parse_milestones(key, value)?,
            "base_classes" => self.base_classes = parse_num(key, value)?,
            "ways" => self.ways = parse_num(key, value)?,
            "shots" => self.shots = parse_num(key, value)?,
            "sessions" => self.sessions = parse_num(key, value)?,
            "dataset_csv" => {
                self.dataset_csv = if value.is_empty() { None } else { Some(value.to_string()) }
            }
            "classes" => self.classes = parse_num(key, value)?,
            "train_per_class" => self.train_per_class = parse_num(key, value)?,
            "test_per_class" => self.test_per_class = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "separation" => self.separation = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Check every downstream module's invariant.
    pub fn validate(&self) -> Result<()> {
        self.ball().map_err(as_config)?;
        self.rpl().map_err(as_config)?;
        self.incremental_loss().map_err(as_config)?;
        self.base_sgd().map_err(as_config)?;
        self.incremental_sgd().map_err(as_config)?;
        // backbone shape, with a stand-in input dimension when the data
        // comes from a CSV whose width is only known at load time
        let input_dim = if self.dataset_csv.is_some() { self.dim.max(1) } else { self.dim };
        self.backbone(input_dim).map_err(as_config)?;
        if self.rp_points == 0 {
            return Err(Error::Config("rp_points must be >= 1".into()));
        }
        if self.exemplar_budget == 0 {
            return Err(Error::Config("exemplar_budget must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn ball(&self) -> Result<BallConfig<f64>> {
        BallConfig::new(self.curvature, self.boundary_eps)
    }

    pub fn rpl(&self) -> Result<RplLossConfig> {
        RplLossConfig::new(self.beta, self.lambda_open, self.threshold)
    }

    pub fn backbone(&self, input_dim: usize) -> Result<BackboneConfig> {
        BackboneConfig::new(
            input_dim,
            self.hidden_dims.clone(),
            self.embed_dim,
            self.frozen_prefix_layers,
        )
    }

    pub fn base_sgd(&self) -> Result<SgdConfig<f64>> {
        SgdConfig::new(self.base_lr, self.weight_decay, self.momentum, self.milestones.clone())
    }

    pub fn incremental_sgd(&self) -> Result<SgdConfig<f64>> {
        SgdConfig::new(self.incremental_lr, self.weight_decay, self.momentum, Vec::new())
    }

    pub fn incremental_loss(&self) -> Result<IncrementalLossConfig> {
        let pairs = if self.pairs_per_epoch == 0 { self.batch_size } else { self.pairs_per_epoch };
        IncrementalLossConfig::new(self.tau, self.eta, self.zeta_base, pairs)
    }

    /// Bundle every training-time config for a dataset of the given width.
    pub fn protocol(&self, input_dim: usize) -> Result<ProtocolConfig> {
        Ok(ProtocolConfig {
            backbone: self.backbone(input_dim)?,
            head: HyperbolicHead { ball: self.ball()? },
            rpl: self.rpl()?,
            rp_points: self.rp_points,
            base_train: TrainConfig {
                epochs: self.base_epochs,
                batch_size: self.batch_size,
                sgd: self.base_sgd()?,
            },
            incremental_loss: self.incremental_loss()?,
            incremental_train: IncrementalTrainConfig {
                train: TrainConfig {
                    epochs: self.incremental_epochs,
                    batch_size: self.batch_size,
                    sgd: self.incremental_sgd()?,
                },
                metric_start_session: self.metric_start_session,
                metric_start_epoch: self.metric_start_epoch,
                exemplar_budget: self.exemplar_budget,
            },
        })
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(m),
        other => Error::Config(other.to_string()),
    }
}
