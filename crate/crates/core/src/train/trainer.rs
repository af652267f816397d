use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint;
use super::config::TrainConfig;
use super::metrics::EvalReport;
use super::optim::Adam;
use crate::data::AspectInstance;
use crate::error::{EmgfError, Result};
use crate::model::{argmax, Dropout, Emgf, PreparedInstance};
use crate::tensor::Tape;

pub const METRICS_HEADER: &str = "epoch\ttrain_loss\tL_c\tL_triplet\teval_acc\teval_macro_f1";

/// Loss values of one optimizer step, each averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub batch_size: usize,
    pub total: f64,
    pub lc: f64,
    pub triplet: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub lc: f64,
    pub triplet: f64,
    pub eval: EvalReport,
}

impl EpochMetrics {
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.8}\t{:.8}\t{:.8}\t{:.6}\t{:.6}",
            self.epoch, self.train_loss, self.lc, self.triplet, self.eval.accuracy, self.eval.macro_f1
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    /// Held-out data scored after every epoch; the training data is scored when absent.
    pub eval: Option<&'a [AspectInstance]>,
    pub metrics_log: Option<PathBuf>,
    /// Rewritten whenever the eval macro-F1 improves.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Emgf,
    pub best: Emgf,
    pub best_epoch: usize,
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
}

impl TrainOutcome {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least one epoch")
    }
}

/// Fills `model.kge_dim` from the data when it is unset.
pub fn resolve_config(config: &TrainConfig, data: &[AspectInstance]) -> TrainConfig {
    let mut c = config.clone();
    if c.model.kge_dim.is_none() {
        c.model.kge_dim = data.iter().find_map(|i| i.kge_width());
    }
    c
}

pub fn train(config: &TrainConfig, data: &[AspectInstance], opts: &TrainOptions<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(EmgfError::Empty { op: "train" });
    }
    let config = resolve_config(config, data);
    let mut model = Emgf::new(config.arch(), config.seed)?;
    let train_set = model.net.prepare_all(data)?;
    let eval_set = match opts.eval {
        Some([]) => return Err(EmgfError::Empty { op: "evaluate" }),
        Some(e) => Some(model.net.prepare_all(e)?),
        None => None,
    };

    let mut log = match &opts.metrics_log {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(|e| EmgfError::io(path, e))?);
            writeln!(w, "{METRICS_HEADER}").map_err(|e| EmgfError::io(path, e))?;
            Some((path, w))
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = Vec::new();
    let mut best: Option<(usize, f64, Emgf)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_lc, mut sum_trip) = (0.0, 0.0, 0.0);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PreparedInstance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut tape = Tape::new();
            let mut dropout = Dropout {
                p: config.dropout,
                rng: &mut rng,
            };
            let loss = model
                .net
                .batch_loss(&mut tape, &model.params, &batch, config.beta, Some(&mut dropout))
                .map_err(|e| match e {
                    EmgfError::NonFinite { .. } => EmgfError::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            let rec = StepRecord {
                epoch,
                step,
                batch_size: batch.len(),
                total: tape.value(loss.total).item(),
                lc: tape.value(loss.lc).item(),
                triplet: tape.value(loss.triplet).item(),
            };
            if !rec.total.is_finite() {
                return Err(EmgfError::Diverged {
                    epoch,
                    step,
                    loss: rec.total,
                });
            }
            let grads = tape.backward(loss.total)?;
            model.params.zero_grad();
            tape.accumulate_param_grads(&grads, &mut model.params);
            adam.step(&mut model.params);

            let w = batch.len() as f64;
            sum_total += rec.total * w;
            sum_lc += rec.lc * w;
            sum_trip += rec.triplet * w;
            steps.push(rec);
        }

        let n = train_set.len() as f64;
        let eval = evaluate_prepared(&model, eval_set.as_deref().unwrap_or(&train_set))?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: sum_total / n,
            lc: sum_lc / n,
            triplet: sum_trip / n,
            eval,
        };
        log::info!("{}", metrics.log_line());
        if let Some((path, w)) = log.as_mut() {
            writeln!(w, "{}", metrics.log_line())
                .and_then(|_| w.flush())
                .map_err(|e| EmgfError::io(path.as_path(), e))?;
        }
        let improved = best.as_ref().is_none_or(|(_, f1, _)| metrics.eval.macro_f1 > *f1);
        if improved {
            if let Some(path) = &opts.checkpoint {
                checkpoint::save(&model, path)?;
            }
            best = Some((epoch, metrics.eval.macro_f1, model.clone()));
        }
        epochs.push(metrics);
    }

    let (best_epoch, _, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        epochs,
        steps,
    })
}

/// Predicted class per instance, without dropout, in input order.
pub fn predict_all(model: &Emgf, data: &[PreparedInstance]) -> Result<Vec<usize>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = data.len().div_ceil(workers).max(32);
    if data.len() <= chunk {
        return data.iter().map(|p| model.predict(p).map(|pr| argmax(&pr))).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = data
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|p| model.predict(p).map(|pr| argmax(&pr)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(data.len());
        for h in handles {
            out.extend(h.join().expect("prediction worker panicked")?);
        }
        Ok(out)
    })
}

pub fn evaluate_prepared(model: &Emgf, data: &[PreparedInstance]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(EmgfError::Empty { op: "evaluate" });
    }
    let preds = predict_all(model, data)?;
    EvalReport::from_predictions(data.iter().map(|p| p.gold()).zip(preds))
}

pub fn evaluate(model: &Emgf, data: &[AspectInstance]) -> Result<EvalReport> {
    evaluate_prepared(model, &model.net.prepare_all(data)?)
}
