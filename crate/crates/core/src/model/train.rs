use super::{ModelError, PreparedSample, VsLlm};
use crate::tensor::{adam_step, AdamState, ParamSet, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::borrow::Borrow;

/// Stream id separating the shuffle sequence from parameter initialization.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the predictions made during the epoch, before each
    /// batch's update.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

/// Mini-batch Adam over `data`. Per-sample gradients are summed and averaged
/// over each batch. `hook` sees every epoch's log and the updated parameters.
pub fn train<S: Borrow<PreparedSample>>(
    model: &mut VsLlm,
    data: &[S],
    mut hook: impl FnMut(&EpochLog, &ParamSet),
) -> Result<TrainLog, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = AdamState::new(&model.params);
    let mut grads = model.params.zero_grads();
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            for &i in batch {
                let sample = data[i].borrow();
                let mut tape = Tape::with_params(&model.params);
                let (loss, logits) = model.loss_graph(&mut tape, sample)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(ModelError::NonFiniteLoss {
                        epoch,
                        sample_id: sample.sketch_id.clone(),
                        loss: value,
                    });
                }
                let l = tape.value(logits).data();
                let pred = usize::from(l[1] > l[0]);
                correct += usize::from(pred == sample.label);
                total += value;
                tape.backward_into(loss, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.params, &grads, &mut adam, &cfg.adam)?;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: total / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        };
        hook(&entry, &model.params);
        let improved = entry.mean_loss < best;
        log.epochs.push(entry);
        if improved {
            best = log.epochs[epoch].mean_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(log)
}
