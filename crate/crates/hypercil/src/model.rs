//! Shared model state: the frozen base branch plus the incrementally grown
//! novel branch.

use std::collections::BTreeMap;

use crate::backbone::{BackboneConfig, HyperbolicHead};
use crate::incremental::ExemplarMemory;
use crate::optim::{ParameterStore, SgdConfig};
use crate::rpl::{ReciprocalPointSet, RplLossConfig};

/// Epoch/batch schedule for one training phase.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig<f64>,
}

/// Frozen copy of a branch used as the distillation teacher.
#[derive(Debug, Clone)]
pub struct OldModel {
    pub tensors: BTreeMap<String, Vec<f64>>,
    pub classes: Vec<usize>,
}

/// Incrementally trained branch for novel classes.
pub struct NovelBranch {
    pub params: ParameterStore<f64>,
    /// Novel class ids in logit order.
    pub classes: Vec<usize>,
    pub memory: ExemplarMemory,
    pub old: Option<OldModel>,
}

/// Trained base branch plus (after the first incremental session) the novel
/// branch.
pub struct ModelState {
    pub backbone: BackboneConfig,
    pub head: HyperbolicHead,
    pub rpl_cfg: RplLossConfig,
    pub base_classes: Vec<usize>,
    pub rp: ReciprocalPointSet,
    pub base_params: ParameterStore<f64>,
    pub novel: Option<NovelBranch>,
}

impl ModelState {
    pub fn new(
        backbone: BackboneConfig,
        head: HyperbolicHead,
        rpl_cfg: RplLossConfig,
        base_classes: Vec<usize>,
        rp: ReciprocalPointSet,
        base_params: ParameterStore<f64>,
    ) -> Self {
        Self { backbone, head, rpl_cfg, base_classes, rp, base_params, novel: None }
    }

    pub fn base_snapshot(&self) -> BTreeMap<String, Vec<f64>> {
        self.base_params.snapshot()
    }

    /// All class ids the model has been trained on, base first.
    pub fn seen_classes(&self) -> Vec<usize> {
        let mut all = self.base_classes.clone();
        if let Some(novel) = &self.novel {
            all.extend(&novel.classes);
        }
        all
    }
}
