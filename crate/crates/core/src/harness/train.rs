use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::optim::{AdamW, ParamGroup};
use crate::error::{Error, Result};
use crate::model::{Example, Micap};
use crate::nn::{Graph, ParamId};
use crate::synth::{DatasetArchive, Split};

/// Stream ids that keep parameter init and batch order independent.
const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub caption: f64,
    pub nce: Option<f64>,
    pub grad_norm: f64,
}

/// Plain-text training log: `#`-prefixed header lines, then one line per
/// step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossLog {
    pub header: Vec<String>,
    pub records: Vec<StepRecord>,
}

impl LossLog {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            let _ = writeln!(s, "# {h}");
        }
        for r in &self.records {
            let _ = write!(
                s,
                "step={} total={:.12e} caption={:.12e}",
                r.step, r.total, r.caption
            );
            if let Some(n) = r.nce {
                let _ = write!(s, " nce={n:.12e}");
            }
            let _ = writeln!(s, " grad_norm={:.6e}", r.grad_norm);
        }
        s
    }
}

/// Model seed derived from the run seed.
pub fn init_seed(seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    rand::Rng::gen(&mut rng)
}

/// Stepwise trainer; [`train`] drives it to completion.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Micap,
    examples: Vec<Example>,
    optimizer: AdamW,
    groups: Vec<ParamGroup>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    step: usize,
    pub log: LossLog,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &DatasetArchive) -> Result<Self> {
        let indices = data.split_indices(Split::Train);
        Self::with_indices(config, data, &indices)
    }

    pub fn with_indices(
        config: TrainConfig,
        data: &DatasetArchive,
        indices: &[usize],
    ) -> Result<Self> {
        config.validate()?;
        if indices.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        if config.variant.uses_audio() {
            if let Some(&i) = indices
                .iter()
                .find(|&&i| data.sample(i).audio_caption.trim().is_empty())
            {
                return Err(Error::Config(format!(
                    "variant {} needs audio captions but sample {} has none",
                    config.variant,
                    data.sample(i).id
                )));
            }
        }
        if config.variant.uses_nce() && indices.len() < 2 {
            return Err(Error::Config(
                "the contrastive loss needs at least two training samples".into(),
            ));
        }
        let model_cfg = config.model_config(data.manifest());
        let model = Micap::new(model_cfg, init_seed(config.seed))?;
        let examples = data.examples(indices)?;
        let optimizer = AdamW::new(config.optimizer, &model.params);
        let groups: Vec<ParamGroup> = model
            .params
            .iter()
            .map(|(_, n, _)| ParamGroup::of(n))
            .collect();
        let mut header = vec![
            format!(
                "variant={} steps={} batch={} seed={}",
                config.variant, config.steps, config.batch_size, config.seed
            ),
            format!(
                "optimizer=AdamW lr_encoder={:e} lr_decoder={:e} schedule={:?} tau={}",
                config.lr_encoder, config.lr_decoder, config.lr_schedule, config.tau
            ),
        ];
        for g in [ParamGroup::Encoder, ParamGroup::Decoder] {
            let names: Vec<&str> = model
                .params
                .iter()
                .filter(|(id, _, _)| groups[id.index()] == g)
                .map(|(_, n, _)| n)
                .collect();
            log::info!("group {:?}: {} tensors", g, names.len());
            header.push(format!("group {:?}: {}", g, names.join(",")).to_lowercase());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(BATCH_STREAM);
        Ok(Self {
            config,
            model,
            examples,
            optimizer,
            groups,
            order: Vec::new(),
            cursor: 0,
            rng,
            step: 0,
            log: LossLog {
                header,
                records: Vec::new(),
            },
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let want = self.config.batch_size.min(self.examples.len());
        let mut batch = Vec::with_capacity(want);
        while batch.len() < want {
            if self.cursor == self.order.len() {
                self.order = (0..self.examples.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            if !batch.contains(&i) {
                batch.push(i);
            }
        }
        batch
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let batch = self.next_batch();
        let refs: Vec<&Example> = batch.iter().map(|&i| &self.examples[i]).collect();
        let mut g = Graph::with_dropout_seed(
            self.config.seed ^ (self.step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let loss = self.model.batch_loss(
            &mut g,
            &refs,
            self.config.variant,
            self.config.tau,
            self.config.loss_weights,
        )?;
        let total = g.value(loss.total).item();
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {total} at step {}",
                self.step + 1
            )));
        }
        let caption = g.value(loss.caption).item();
        let nce = loss.nce.map(|v| g.value(v).item());
        g.backward(loss.total)?;
        let grads: Vec<(ParamId, Vec<f64>)> = g
            .param_vars()
            .filter_map(|(id, v)| g.grad(v).map(|d| (id, d.to_vec())))
            .collect();
        let f = self.config.lr_schedule.factor(self.step, self.config.steps);
        let (lr_enc, lr_dec) = (f * self.config.lr_encoder, f * self.config.lr_decoder);
        let groups = &self.groups;
        let grad_norm = self.optimizer.step(&mut self.model.params, &grads, |id| {
            match groups[id.index()] {
                ParamGroup::Encoder => lr_enc,
                ParamGroup::Decoder => lr_dec,
            }
        });
        if !grad_norm.is_finite() {
            return Err(Error::Numeric(format!(
                "gradient norm became {grad_norm} at step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        let rec = StepRecord {
            step: self.step,
            total,
            caption,
            nce,
            grad_norm,
        };
        self.log.records.push(rec);
        Ok(rec)
    }

    pub fn checkpoint(&self, data: &DatasetArchive) -> Checkpoint {
        Checkpoint::new(
            self.config.clone(),
            self.model.clone(),
            self.step as u64,
            data.vocab().clone(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: LossLog,
}

/// Runs `config.steps` optimizer steps on the training split.
pub fn train(config: &TrainConfig, data: &DatasetArchive) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    for _ in 0..config.steps {
        let rec = trainer.step()?;
        if rec.step % 50 == 0 || rec.step == 1 {
            log::info!("step {} loss {:.5}", rec.step, rec.total);
        }
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(data),
        log: trainer.log,
    })
}
