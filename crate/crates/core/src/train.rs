//! Minibatch training loop and finite-difference gradient checking shared by
//! every model.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Fwd;
use crate::optim::{Optimizer, OptimizerKind};
use crate::params::{ParamId, ParameterStore};
use crate::tape::Var;

/// Joint gradient norm above which gradients are rescaled.
pub const CLIP_NORM: f64 = 5.0;

/// Anything the trainer can fit.
pub trait Trainable {
    type Instance;

    fn params(&self) -> &ParameterStore;
    fn params_mut(&mut self) -> &mut ParameterStore;

    /// Summed loss of one instance and the number of terms in the sum. The
    /// batch objective is the total of the sums over the total of the counts.
    fn loss(&self, f: &mut Fwd, inst: &Self::Instance) -> Result<(Var, usize)>;

    /// Validation metric, higher is better.
    fn evaluate(&self, data: &[Self::Instance]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once the validation metric reaches this value.
    #[serde(default)]
    pub stop_at: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be a finite nonnegative number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: ParameterStore,
    /// Parameters of the epoch with the best validation metric (earliest on ties).
    pub best: Option<(usize, f64, ParameterStore)>,
    pub log: Vec<EpochLog>,
}

/// Mean loss over `insts` with no dropout, as a tape node.
pub fn mean_loss<M: Trainable>(model: &M, f: &mut Fwd, insts: &[&M::Instance]) -> Result<Var> {
    let mut sums = Vec::with_capacity(insts.len());
    let mut count = 0;
    for inst in insts {
        let (s, c) = model.loss(f, inst)?;
        sums.push(s);
        count += c;
    }
    if count == 0 {
        return Err(Error::domain("loss over zero terms"));
    }
    let total = f.tape.add_n(&sums)?;
    Ok(f.tape.scale(total, 1.0 / count as f64))
}

/// Loss value at the current parameters, evaluation mode.
pub fn eval_loss<M: Trainable>(model: &M, insts: &[&M::Instance]) -> Result<f64> {
    let mut f = Fwd::eval(model.params());
    let l = mean_loss(model, &mut f, insts)?;
    Ok(f.tape.scalar(l))
}

fn eval_loss_and_branches<M: Trainable>(model: &M, insts: &[&M::Instance]) -> Result<(f64, u64)> {
    let mut f = Fwd::eval(model.params());
    let l = mean_loss(model, &mut f, insts)?;
    Ok((f.tape.scalar(l), f.tape.branch_fingerprint()))
}

/// Fits `model` in place. `on_epoch` sees each epoch's log line as it is produced.
pub fn train_minibatches<M: Trainable>(
    model: &mut M,
    data: &[M::Instance],
    validation: Option<&[M::Instance]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::domain("no training instances"));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParameterStore)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_total = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let insts: Vec<&M::Instance> = chunk.iter().map(|&i| &data[i]).collect();
            let (value, grads) = {
                let mut f = Fwd::train(model.params(), &mut dropout_rng);
                let l = mean_loss(model, &mut f, &insts)?;
                let value = f.tape.scalar(l);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch,
                        loss: value,
                    });
                }
                (value, f.tape.backward(l)?)
            };
            let store = model.params_mut();
            store.zero_grads();
            grads.accumulate_into(store);
            store.clip_grad_norm(CLIP_NORM);
            opt.step(store);
            loss_total += value;
            batches += 1;
        }
        let validation = match validation {
            Some(v) if !v.is_empty() => Some(model.evaluate(v)?),
            _ => None,
        };
        if let Some(score) = validation {
            if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                best = Some((epoch, score, model.params().clone()));
            }
        }
        let line = EpochLog {
            epoch,
            mean_loss: loss_total / batches as f64,
            validation,
        };
        on_epoch(&line);
        log.push(line);
        if let (Some(target), Some(score)) = (cfg.stop_at, validation) {
            if score >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        last: model.params().clone(),
        best,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Entries left out of the maximum because a stencil point crossed a
    /// ReLU or max kink, where the loss has no derivative to compare.
    pub skipped_at_kinks: usize,
}

/// Minimum number of scalars compared when a model has more than that.
pub const GRAD_CHECK_MIN_SAMPLES: usize = 200;
const PER_TENSOR: usize = 24;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of the mean loss on `inst` to fourth-order
/// central differences with step `epsilon`.
///
/// Every tensor contributes a seeded sample of its entries, half drawn from
/// entries with a nonzero analytic gradient; at least
/// [`GRAD_CHECK_MIN_SAMPLES`] scalars are checked unless the model has fewer.
/// An entry whose stencil changes any ReLU sign or max winner relative to the
/// unperturbed evaluation is counted in `skipped_at_kinks` instead.
pub fn gradient_check<M: Trainable>(
    model: &mut M,
    inst: &M::Instance,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::config("gradient check step must lie in [1e-6, 1e-3]"));
    }
    let (grads, base_branches) = {
        let mut f = Fwd::eval(model.params());
        let l = mean_loss(model, &mut f, &[inst])?;
        (f.tape.backward(l)?, f.tape.branch_fingerprint())
    };
    let store = model.params_mut();
    store.zero_grads();
    grads.accumulate_into(store);

    let trainable: Vec<usize> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id.0)
        .collect();
    let total: usize = trainable
        .iter()
        .map(|&k| store.get(ParamId(k)).value.len())
        .sum();
    let per_tensor = PER_TENSOR.max(GRAD_CHECK_MIN_SAMPLES.div_ceil(trainable.len().max(1)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for &k in &trainable {
        let p = store.get(ParamId(k));
        let n = p.value.len();
        if n <= per_tensor || total <= GRAD_CHECK_MIN_SAMPLES {
            picks.extend((0..n).map(|i| (k, i)));
            continue;
        }
        let mut nonzero: Vec<usize> = (0..n).filter(|&i| p.grad.data()[i] != 0.0).collect();
        nonzero.shuffle(&mut rng);
        let mut chosen: Vec<usize> = nonzero.into_iter().take(per_tensor / 2).collect();
        while chosen.len() < per_tensor {
            let i = rng.random_range(0..n);
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        chosen.sort_unstable();
        picks.extend(chosen.into_iter().map(|i| (k, i)));
    }

    let analytic: Vec<f64> = picks
        .iter()
        .map(|&(k, i)| model.params().get(ParamId(k)).grad.data()[i])
        .collect();
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for (&(k, i), &ga) in picks.iter().zip(&analytic) {
        let id = ParamId(k);
        let original = model.params().value(id).data()[i];
        let mut smooth = true;
        let mut at = |delta: f64, model: &mut M| -> Result<f64> {
            model.params_mut().value_mut(id).data_mut()[i] = original + delta;
            let (l, branches) = eval_loss_and_branches(model, &[inst])?;
            smooth &= branches == base_branches;
            Ok(l)
        };
        let p2 = at(2.0 * epsilon, model)?;
        let p1 = at(epsilon, model)?;
        let m1 = at(-epsilon, model)?;
        let m2 = at(-2.0 * epsilon, model)?;
        model.params_mut().value_mut(id).data_mut()[i] = original;
        if !smooth {
            skipped += 1;
            continue;
        }
        // differences first: equal evaluations must give exactly zero
        let gn = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon);
        worst = worst.max(relative_error(ga, gn));
    }
    model.params_mut().zero_grads();
    Ok(GradCheckReport {
        max_relative_error: worst,
        checked: picks.len(),
        skipped_at_kinks: skipped,
    })
}
