//! Training hyperparameters handed to an external nnU-Net style trainer.

use serde::{Deserialize, Serialize};

use crate::intensity::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub trainer_class: String,
    pub objective: String,
    pub optimizer: String,
    pub augmentation: String,
    pub patch_size: [u32; 3],
    pub base_feature_maps: u32,
    pub poolings_per_axis: [u32; 3],
    pub epochs: u32,
    pub train_batches_per_epoch: u32,
    pub val_batches_per_epoch: u32,
    pub initial_lr: f64,
    pub batch_size: u32,
    pub folds: u32,
}

/// Emitted document: the plan plus provenance notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub task: Task,
    #[serde(flatten)]
    pub plan: TrainingPlan,
    /// Epoch count reported elsewhere for the same model, when it disagrees
    /// with `epochs`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epochs_alternative: Option<u32>,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub fn training_plan(task: Task) -> TrainingPlan {
    let (augmentation, patch_size, epochs) = match task {
        Task::Oars => ("True except for the flipping", [64, 192, 160], 2500),
        Task::Gtvs => ("True", [80, 192, 128], 700),
    };
    TrainingPlan {
        trainer_class: "nnUnetTrainerV2".into(),
        objective: "Dice + BCE".into(),
        optimizer: "SGD".into(),
        augmentation: augmentation.into(),
        patch_size,
        base_feature_maps: 32,
        poolings_per_axis: [4, 5, 5],
        epochs,
        train_batches_per_epoch: 250,
        val_batches_per_epoch: 50,
        initial_lr: 0.01,
        batch_size: 2,
        folds: 5,
    }
}

pub fn plan_document(task: Task) -> PlanDocument {
    let (epochs_alternative, notes) = match task {
        Task::Oars => (None, vec![]),
        Task::Gtvs => (
            Some(600),
            vec![
                "hyperparameter table lists 700 epochs; the training description states 600; the table value is used"
                    .to_string(),
            ],
        ),
    };
    PlanDocument {
        task,
        plan: training_plan(task),
        epochs_alternative,
        notes,
    }
}
