use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::net::{LayerGrids, Model};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
    pub seconds: f64,
}

const EVAL_BATCH: usize = 100;

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Number of rows of `logits` whose argmax equals the label.
pub fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// One optimizer step on a batch; returns the loss and correct count.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    images: Tensor,
    labels: &[usize],
    grids: &LayerGrids,
) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g, true);
    let x = g.constant(images);
    let (trace, updates) = model.forward(&mut g, &p, x, grids, true)?;
    let loss = g.softmax_cross_entropy(trace.logits, labels)?;
    let lv = g.value(loss).item();
    if !lv.is_finite() {
        return Err(Error::Numeric(format!("loss became {lv}")));
    }
    let correct = count_correct(g.value(trace.logits), labels);
    let mut grads = g.backward(loss)?;
    let grads = p.collect(&mut grads);
    adam.step(&mut model.store, &grads)?;
    let momentum = model.config().bn_momentum;
    for (bn, stats) in updates {
        bn.update_running(&mut model.store, &stats, momentum);
    }
    Ok((lv, correct))
}

/// Replaces the running statistics of every normalization layer with the
/// average batch statistics of the first `n_images` of `ds`, computed on
/// `grids` in batches of 100.
pub fn recalibrate_batch_norm(model: &mut Model, ds: &Dataset, grids: &LayerGrids, n_images: usize) -> Result<()> {
    let idx: Vec<usize> = (0..n_images.min(ds.len())).collect();
    for (k, chunk) in idx.chunks(EVAL_BATCH).filter(|c| c.len() > 1).enumerate() {
        let (x, _) = ds.batch(chunk);
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, false);
        let x = g.constant(x);
        let (_, updates) = model.forward(&mut g, &p, x, grids, true)?;
        for (bn, stats) in updates {
            bn.update_running(&mut model.store, &stats, 1.0 / (k + 1) as f64);
        }
    }
    Ok(())
}

/// Accuracy on `ds` with evaluation-mode normalization and the given grids.
/// Batches are scored in parallel.
pub fn evaluate_with_grids(model: &Model, ds: &Dataset, grids: &LayerGrids) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let correct: Result<Vec<usize>> = idx
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let (x, y) = ds.batch(chunk);
            Ok(count_correct(&model.logits(&x, grids)?, &y))
        })
        .collect();
    Ok(correct?.iter().sum::<usize>() as f64 / ds.len() as f64)
}

/// Accuracy with the unperturbed uniform grids.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<f64> {
    evaluate_with_grids(model, ds, &model.uniform_grids()?)
}

/// Adam training with per-epoch shuffling. `on_epoch` sees each epoch's
/// metrics as soon as they are available.
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if cfg.batch_size < 2 {
        return Err(Error::config("batch_size", "batch normalization needs at least 2 samples"));
    }
    if train_set.len() < 2 {
        return Err(Error::arg("training set needs at least 2 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        adam.config.lr = cfg.schedule.rate(cfg.lr, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = train_set.batch(chunk);
            let grids = model.training_grids(&mut rng)?;
            let (l, c) = train_step(model, &mut adam, x, &y, &grids)?;
            loss_sum += l * chunk.len() as f64;
            correct += c;
            seen += chunk.len();
        }
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let recalibrate = cfg.bn_recalibration > 0 && ((due && eval_set.is_some()) || epoch == cfg.epochs);
        if recalibrate {
            let grids = model.uniform_grids()?;
            recalibrate_batch_norm(model, train_set, &grids, cfg.bn_recalibration)?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let eval_accuracy = match eval_set {
            Some(ds) if due => Some(evaluate(model, ds)?),
            _ => None,
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            eval_accuracy,
            seconds,
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok(history)
}
