use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::train::{train, TrainOutcome};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_records, EvalReport, ResultRecord};
use crate::model::{Micap, Variant};
use crate::synth::{DatasetArchive, Split};

/// Captions every sample in `indices` with beam search and scores them
/// against the dataset references.
pub fn evaluate_model(
    model: &Micap,
    data: &DatasetArchive,
    indices: &[usize],
    variant: Variant,
    beam_width: usize,
) -> Result<(EvalReport, Vec<ResultRecord>)> {
    if indices.is_empty() {
        return Err(Error::Contract("nothing to evaluate".into()));
    }
    let vocab = data.vocab();
    let mut records = Vec::with_capacity(indices.len());
    for &i in indices {
        let hyp = model.generate(&data.input(i)?, variant, beam_width)?;
        let s = data.sample(i);
        records.push(ResultRecord {
            video_id: s.id.clone(),
            hypothesis: vocab.detokenize(&hyp.tokens),
            references: s.references.clone(),
        });
    }
    Ok((evaluate_records(&records)?, records))
}

/// Test split if present, otherwise every sample.
pub fn eval_indices(data: &DatasetArchive) -> Vec<usize> {
    let test = data.split_indices(Split::Test);
    if test.is_empty() {
        (0..data.len()).collect()
    } else {
        test
    }
}

/// Evaluates a checkpoint with the variant it was trained as.
pub fn evaluate(
    ckpt: &Checkpoint,
    data: &DatasetArchive,
) -> Result<(EvalReport, Vec<ResultRecord>)> {
    if &ckpt.meta.vocab != data.vocab() {
        return Err(Error::Config(
            "checkpoint vocabulary differs from the dataset's".into(),
        ));
    }
    evaluate_model(
        &ckpt.model,
        data,
        &eval_indices(data),
        ckpt.meta.config.variant,
        ckpt.meta.config.beam_width,
    )
}

/// Scores the audio captions themselves against the references, no model.
pub fn audio_raw_report(data: &DatasetArchive, indices: &[usize]) -> Result<EvalReport> {
    let records: Vec<ResultRecord> = indices
        .iter()
        .map(|&i| {
            let s = data.sample(i);
            ResultRecord {
                video_id: s.id.clone(),
                hypothesis: s.audio_caption.clone(),
                references: s.references.clone(),
            }
        })
        .collect();
    evaluate_records(&records)
}

/// One row in the ablation table; scores on the 0–100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    pub avg: f64,
}

impl AblationRow {
    pub fn from_report(model: impl Into<String>, r: &EvalReport) -> Self {
        Self {
            model: model.into(),
            bleu4: 100.0 * r.bleu4,
            rouge_l: 100.0 * r.rouge_l,
            meteor: 100.0 * r.meteor,
            cider: 100.0 * r.cider,
            avg: r.avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub audio_raw: AblationRow,
    /// One row per variant, in [`Variant::ALL`] order.
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        let name = variant.to_string();
        self.rows.iter().find(|r| r.model == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "Model", "BLEU@4", "ROUGE-L", "METEOR", "CIDEr", "AVG"
        );
        for r in std::iter::once(&self.audio_raw).chain(&self.rows) {
            let _ = writeln!(
                s,
                "{:<14} {:>8.1} {:>8.1} {:>8.1} {:>8.1} {:>8.1}",
                r.model, r.bleu4, r.rouge_l, r.meteor, r.cider, r.avg
            );
        }
        s
    }
}

/// Trains and evaluates every variant from `base` on a shared dataset.
pub fn run_ablation(
    base: &TrainConfig,
    data: &DatasetArchive,
) -> Result<(AblationTable, Vec<TrainOutcome>)> {
    let indices = eval_indices(data);
    let audio_raw = AblationRow::from_report("audio_raw", &audio_raw_report(data, &indices)?);
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            variant,
            ..base.clone()
        };
        log::info!("ablation: training {variant}");
        let out = train(&cfg, data)?;
        let (report, _) = evaluate_model(
            &out.checkpoint.model,
            data,
            &indices,
            variant,
            cfg.beam_width,
        )?;
        rows.push(AblationRow::from_report(variant.to_string(), &report));
        outcomes.push(out);
    }
    Ok((AblationTable { audio_raw, rows }, outcomes))
}
