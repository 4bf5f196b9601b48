use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::Metrics;
use crate::head::argmax_label;
use crate::ingest::{batch_indices, Dataset};
use crate::model::{Architecture, Init, Model};
use crate::numerics::{rng, AdamState, Grads, Mode, ParamStore, Real, Tape, Tensor};
use crate::{Error, Result};

/// Draws every tensor of `arch` from its own named stream.
pub fn init_params<T: Real>(arch: &Architecture, seed: u64) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for spec in arch.param_specs() {
        let value = match spec.init {
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Identity => Tensor::identity(spec.shape[0]),
            Init::Glorot { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut r = rng::stream(seed, &format!("init/{}", spec.name));
                let n = spec.shape.iter().product();
                let data = (0..n).map(|_| T::cst(r.gen_range(-a..a))).collect();
                Tensor::new(spec.shape.clone(), data)?
            }
        };
        store.insert(spec.name, value)?;
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<Metrics>,
    /// Wall-clock seconds; kept out of results files so reruns compare equal.
    #[serde(skip)]
    pub seconds: f64,
}

pub type History = Vec<EpochRecord>;

pub struct TrainOutcome {
    pub arch: Architecture,
    pub model: Model,
    pub initial: ParamStore<f32>,
    pub params: ParamStore<f32>,
    pub history: History,
}

fn check_dims(arch: &Architecture, ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Ok(());
    }
    if (arch.uses_text() && ds.d_text != arch.d_text) || (arch.uses_image() && ds.d_image != arch.d_image) {
        return Err(Error::dim(format!(
            "{what} set has dims text {} / image {}, model expects {} / {}",
            ds.d_text, ds.d_image, arch.d_text, arch.d_image
        )));
    }
    Ok(())
}

/// Minibatch Adam on mean cross-entropy. Each record's dropout mask comes
/// from a stream named by the run seed and record id, so results do not
/// depend on batch order and a fixed batch sees a fixed subnetwork.
pub fn train(cfg: &TrainConfig, train_ds: &Dataset, val_ds: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let arch = cfg.architecture(train_ds.d_text, train_ds.d_image)?;
    check_dims(&arch, val_ds, "validation")?;
    let initial = init_params::<f32>(&arch, cfg.seed)?;
    let mut params = initial.clone();
    let model = Model::bind(&params, &arch)?;
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut grads = Grads::for_store(&params);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches = batch_indices(
            train_ds.len(),
            cfg.batch_size,
            rng::derive(cfg.seed, &format!("epoch/{epoch}")),
        )?;
        let mut loss_total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            grads.clear();
            let weight = 1.0 / batch.len() as f32;
            for &i in batch {
                let rec = &train_ds.records[i];
                let mut drop = rng::stream(cfg.seed, &format!("dropout/{}", rec.id));
                {
                    let mut tape = Tape::new(&params);
                    let out = model.forward(&mut tape, rec, Mode::Train, &mut drop)?;
                    let loss = tape.cross_entropy(out.probs, rec.label as usize)?;
                    let l = tape.data(loss)[0];
                    if !l.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "loss at epoch {epoch}, batch {} (record `{}`)",
                            b + 1,
                            rec.id
                        )));
                    }
                    loss_total += f64::from(l);
                    tape.backward_into(loss, weight, &mut grads)?;
                }
            }
            params.zero_grads();
            params.accumulate(&grads)?;
            adam.step(&mut params, cfg.learning_rate)?;
            if params.entries().iter().any(|e| !e.value.all_finite()) {
                return Err(Error::NonFinite(format!(
                    "parameters after epoch {epoch}, batch {}",
                    b + 1
                )));
            }
        }
        let validation = if val_ds.is_empty() {
            None
        } else {
            Some(evaluate(&model, &params, val_ds)?)
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_total / train_ds.len() as f64,
            validation,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { arch, model, initial, params, history })
}

/// Eval-mode labels for every record.
pub fn predict_dataset<T: Real>(model: &Model, params: &ParamStore<T>, ds: &Dataset) -> Result<Vec<u8>> {
    let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
    ds.records
        .iter()
        .map(|rec| {
            let mut tape = Tape::new(params);
            let out = model.forward(&mut tape, rec, Mode::Eval, &mut no_rng)?;
            Ok(argmax_label(tape.data(out.probs)))
        })
        .collect()
}

pub fn evaluate<T: Real>(model: &Model, params: &ParamStore<T>, ds: &Dataset) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    check_dims(&model.arch, ds, "evaluation")?;
    let predicted = predict_dataset(model, params, ds)?;
    let actual: Vec<u8> = ds.records.iter().map(|r| r.label).collect();
    Metrics::from_predictions(&predicted, &actual)
}
