//! End-to-end steps shared by the command line and the acceptance suite:
//! transcript to checkpoint, and checkpoint plus transcript to evaluation.

use std::collections::HashSet;

use serde::Serialize;

use crate::encoder::{build_examples, split_dataset, BuiltExamples, DatasetSplit};
use crate::error::{Error, Result};
use crate::metrics::{auc, fig4_experiment, history_gpas, tier_combos, FailureRates, Fig4Grid, GpaLogistic, ScoredExample};
use crate::nnet::{Checkpoint, CheckpointMeta};
use crate::trainer::{evaluate, train, TrainConfig, TrainReport};
use crate::transcript::{build_catalog, RawRecord};

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

/// Records belonging to the students on the training side of a split.
pub fn training_records(records: &[RawRecord], split: &DatasetSplit) -> Vec<RawRecord> {
    let ids: HashSet<&str> = split.train.iter().map(|e| e.student_id.as_str()).collect();
    records
        .iter()
        .filter(|r| ids.contains(r.student_id.as_str()))
        .cloned()
        .collect()
}

pub struct Trained {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub built: BuiltExamples,
    pub split: DatasetSplit,
}

/// Builds the catalog and examples, splits by student with `config.seed`,
/// trains, and packages the best parameters with the training-side failure
/// rates.
pub fn train_from_records(records: &[RawRecord], validation_fraction: f64, config: &TrainConfig) -> Result<Trained> {
    let catalog = build_catalog(records)?;
    let built = build_examples(records, &catalog)?;
    let split = split_dataset(&built.examples, validation_fraction, config.seed)?;
    let (params, report) = train(&split, config)?;
    let rates = FailureRates::from_records(&training_records(records, &split), &catalog)?;
    let meta = CheckpointMeta {
        failure_rates: rates.to_map(&catalog),
        split_seed: Some(split.seed),
        validation_fraction: Some(validation_fraction),
    };
    Ok(Trained {
        checkpoint: Checkpoint::new(params, catalog, meta)?,
        report,
        built,
        split,
    })
}

/// Recreates the split a checkpoint was trained on.
pub fn checkpoint_split(checkpoint: &Checkpoint, records: &[RawRecord]) -> Result<DatasetSplit> {
    let (Some(seed), Some(fraction)) = (checkpoint.meta.split_seed, checkpoint.meta.validation_fraction) else {
        return Err(Error::Checkpoint("checkpoint does not record its split".into()));
    };
    let built = build_examples(records, &checkpoint.catalog)?;
    split_dataset(&built.examples, fraction, seed)
}

/// AUC of a GPA-only logistic regression fitted on the training side.
pub fn gpa_baseline_auc(records: &[RawRecord], split: &DatasetSplit) -> Result<f64> {
    let train_gpas = history_gpas(records, &split.train)?;
    let labels: Vec<bool> = split.train.iter().map(|e| e.label).collect();
    let model = GpaLogistic::fit(&train_gpas, &labels)?;
    let scored: Vec<ScoredExample> = history_gpas(records, &split.validation)?
        .into_iter()
        .zip(&split.validation)
        .map(|(g, e)| ScoredExample::new(model.predict(g), e.label))
        .collect();
    auc(&scored)
}

/// The GPA band by difficulty tier grid over the validation students, with
/// tiers built from the checkpoint's failure rates.
pub fn difficulty_grid(checkpoint: &Checkpoint, records: &[RawRecord], split: &DatasetSplit) -> Result<Fig4Grid> {
    let rates = FailureRates::from_map(&checkpoint.meta.failure_rates, &checkpoint.catalog)?;
    let tiers = tier_combos(&rates)?;
    let gpas = history_gpas(records, &split.validation)?;
    let students: Vec<_> = gpas.into_iter().zip(&split.validation).collect();
    fig4_experiment(&checkpoint.params, &students, &tiers, &rates)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub validation_auc: f64,
    pub gpa_baseline_auc: f64,
    pub validation_size: usize,
}

pub fn evaluate_checkpoint(checkpoint: &Checkpoint, records: &[RawRecord], split: &DatasetSplit) -> Result<EvalSummary> {
    let validation_auc = evaluate(&checkpoint.params, &split.validation)?
        .auc
        .ok_or_else(|| Error::invalid("validation set holds a single class"))?;
    Ok(EvalSummary {
        validation_auc,
        gpa_baseline_auc: gpa_baseline_auc(records, split)?,
        validation_size: split.validation.len(),
    })
}
