//! Training loop with masked MAE loss, per-horizon evaluation, and the
//! ablation harness that retrains variant/depth combinations side by side.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{interpolate_training, make_windows, SpeedDataset, Split, WindowSample};
use crate::error::{data_err, input_err, Error, Result};
use crate::graph::SensorGraph;
use crate::metrics::{improvement, sha256_hex, HorizonMetrics, MetricAccumulator, MetricsReport};
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::optim::{LrSchedule, OptimState};
use crate::par;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub schedule: LrSchedule,
    pub shuffle_seed: u64,
    /// Optional extra exit: stop once epoch training MAE dips below this.
    pub stop_below_train_mae: Option<f64>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 100,
            batch_size: 16,
            patience: 15,
            schedule: LrSchedule::new(0.004, 0.5, 180, 50).expect("default schedule"),
            shuffle_seed: 1,
            stop_below_train_mae: None,
        }
    }
}

impl TrainParams {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return input_err("batch size must be at least 1");
        }
        if self.patience == 0 {
            return input_err("patience must be at least 1");
        }
        if let Some(bar) = self.stop_below_train_mae {
            if !(bar > 0.0 && bar.is_finite()) {
                return input_err(format!("training MAE stop bar must be positive, got {bar}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MAE; the
    /// initial parameters when no epoch ran.
    pub best: Checkpoint,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

/// Pooled loss pieces of one mini-batch: Σ|error| and the observed-entry
/// count over every window, plus parameter gradients of the Σ|error|
/// objective flattened in parameter-path order.
#[derive(Clone, Debug)]
pub struct BatchPass {
    pub abs_sum: f64,
    pub count: f64,
    pub flat_grads: Vec<f64>,
}

impl BatchPass {
    /// Mean absolute error over the batch, the quantity the optimizer
    /// minimizes. Matches `masked_mae` over the same predictions.
    pub fn loss(&self) -> f64 {
        self.abs_sum / self.count
    }
}

fn window_pass(model: &Model, sample: &WindowSample) -> Result<BatchPass> {
    let mut tape = Tape::new();
    let pred = model.forward_on_tape(&mut tape, &sample.input, &sample.calendar)?;
    let loss = tape.masked_abs_sum(pred, &sample.target, &sample.target_mask)?;
    let abs_sum = tape.value(loss).data()[0];
    let count: f64 = sample.target_mask.data().iter().sum();
    let mut local = model.store.clone();
    local.zero_grads();
    tape.backward_into(loss, &mut local, 1.0)?;
    Ok(BatchPass {
        abs_sum,
        count,
        flat_grads: local.flatten_grads(),
    })
}

/// Windows are processed in parallel; the merge runs in slice order, so
/// the sums are bit-identical for any thread count.
pub fn batch_pass(model: &Model, samples: &[&WindowSample]) -> Result<BatchPass> {
    if samples.is_empty() {
        return input_err("empty mini-batch");
    }
    let dim = model.store.scalar_count();
    par::map_reduce(
        samples,
        Ok(BatchPass {
            abs_sum: 0.0,
            count: 0.0,
            flat_grads: vec![0.0; dim],
        }),
        |s| window_pass(model, s),
        |acc, item| {
            let mut acc = acc?;
            let item = item?;
            acc.abs_sum += item.abs_sum;
            acc.count += item.count;
            for (a, b) in acc.flat_grads.iter_mut().zip(&item.flat_grads) {
                *a += b;
            }
            Ok(acc)
        },
    )
}

fn apply_flat_grads(store: &mut ParamStore, flat: &[f64], scale: f64) -> Result<()> {
    let names: Vec<String> = store.names().cloned().collect();
    let mut off = 0;
    for name in &names {
        let shape = store.value(name)?.shape().to_vec();
        let len: usize = shape.iter().product();
        let piece: Vec<f64> = flat[off..off + len].iter().map(|g| g * scale).collect();
        store.accumulate_grad(name, &Tensor::new(&shape, piece)?)?;
        off += len;
    }
    if off != flat.len() {
        return input_err(format!(
            "flat gradient has {} entries, parameters hold {off}",
            flat.len()
        ));
    }
    Ok(())
}

/// Pooled masked MAE of the model over a set of windows, forward only.
pub fn windows_mae(model: &Model, windows: &[WindowSample]) -> Result<f64> {
    let acc = par::map_reduce(
        windows,
        Ok(MetricAccumulator::default()),
        |s| -> Result<MetricAccumulator> {
            let f = model.forward(&s.input, &s.calendar)?;
            let mut acc = MetricAccumulator::default();
            acc.absorb_tensors(&f.values, &s.target, &s.target_mask)?;
            Ok(acc)
        },
        |acc: Result<MetricAccumulator>, item| Ok(acc?.merge(item?)),
    )?;
    acc.mae()
}

/// Runs seeded shuffled mini-batch training with Adam, keeping the
/// parameters of the best validation epoch. The model is left in its
/// final (not necessarily best) state.
pub fn train(
    model: &mut Model,
    dataset: &SpeedDataset,
    params: &TrainParams,
    optim: &mut OptimState,
) -> Result<TrainOutcome> {
    params.validate()?;
    let stats = dataset.stats()?;
    if *stats != model.norm_stats {
        return input_err(format!(
            "model stats (mean {}, std {}) do not match the dataset (mean {}, std {})",
            model.norm_stats.mean, model.norm_stats.std, stats.mean, stats.std
        ));
    }
    let (dense, mut warnings) = interpolate_training(dataset)?;
    let cfg = &model.config;
    let (train_windows, more) = make_windows(
        dataset,
        &dense,
        Split::Train,
        cfg.input_window,
        cfg.output_window,
    )?;
    warnings.extend(more);
    let (val_windows, more) = make_windows(
        dataset,
        &dense,
        Split::Val,
        cfg.input_window,
        cfg.output_window,
    )?;
    warnings.extend(more);
    if train_windows.is_empty() {
        return data_err("training split yields no windows");
    }
    if val_windows.is_empty() {
        return data_err("validation split yields no windows");
    }

    let mut best = model.to_checkpoint();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut curve = Vec::with_capacity(params.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(params.shuffle_seed);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut abs_sum = 0.0;
        let mut count = 0.0;
        for (batch_idx, chunk) in order.chunks(params.batch_size).enumerate() {
            let refs: Vec<&WindowSample> = chunk.iter().map(|&i| &train_windows[i]).collect();
            model.store.zero_grads();
            let pass = batch_pass(model, &refs)?;
            if pass.count == 0.0 {
                // Nothing observed in these targets; no update possible.
                continue;
            }
            let loss = pass.loss();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: loss {loss} at epoch {epoch}, batch {batch_idx}"
                )));
            }
            if pass.flat_grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "training diverged: non-finite gradient at epoch {epoch}, batch {batch_idx}"
                )));
            }
            apply_flat_grads(&mut model.store, &pass.flat_grads, 1.0 / pass.count)?;
            optim.adam_step(&mut model.store, &params.schedule, epoch as u64)?;
            abs_sum += pass.abs_sum;
            count += pass.count;
        }
        if count == 0.0 {
            return data_err("training split has no observed target entries");
        }
        let train_mae = abs_sum / count;
        let val_mae = windows_mae(model, &val_windows)?;
        if !val_mae.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: validation MAE {val_mae} at epoch {epoch}"
            )));
        }
        curve.push(EpochRecord {
            epoch,
            train_mae,
            val_mae,
            lr: params.schedule.lr_at(epoch as u64),
        });
        if val_mae < best_val {
            best_val = val_mae;
            best = model.to_checkpoint();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.patience {
                stopped_early = true;
                break;
            }
        }
        if let Some(bar) = params.stop_below_train_mae {
            if train_mae < bar {
                stopped_early = true;
                break;
            }
        }
    }
    model.store.zero_grads();
    Ok(TrainOutcome {
        best,
        curve,
        best_epoch,
        stopped_early,
        warnings,
    })
}

pub fn write_loss_curve(curve: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_mae", "val_mae", "lr"])?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            format!("{}", r.train_mae),
            format!("{}", r.val_mae),
            format!("{}", r.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn config_digest(config: &ModelConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

fn horizon_pass(
    model: &Model,
    sample: &WindowSample,
    horizons: &[usize],
) -> Result<Vec<MetricAccumulator>> {
    let f = model.forward(&sample.input, &sample.calendar)?;
    let n = f.values.shape()[0];
    let mut accs = vec![MetricAccumulator::default(); horizons.len()];
    for (k, &h) in horizons.iter().enumerate() {
        let step = h - 1;
        for node in 0..n {
            accs[k].add(
                f.values.at3(node, 0, step),
                sample.target.at3(node, 0, step),
                sample.target_mask.at3(node, 0, step),
            );
        }
    }
    Ok(accs)
}

/// Per-horizon masked metrics of a model over one split. The model and
/// the dataset must agree on normalization stats.
pub fn evaluate(model: &Model, dataset: &SpeedDataset, split: Split) -> Result<MetricsReport> {
    let stats = dataset.stats()?;
    if *stats != model.norm_stats {
        return input_err(format!(
            "checkpoint stats (mean {}, std {}) do not match the dataset (mean {}, std {})",
            model.norm_stats.mean, model.norm_stats.std, stats.mean, stats.std
        ));
    }
    let (dense, _) = interpolate_training(dataset)?;
    let cfg = &model.config;
    let (windows, _) = make_windows(dataset, &dense, split, cfg.input_window, cfg.output_window)?;
    if windows.is_empty() {
        return data_err(format!("split {} yields no windows", split.label()));
    }
    let spacing = dataset.spacing_secs()?;
    let horizons = cfg.eval_horizons.clone();
    let empty = vec![MetricAccumulator::default(); horizons.len()];
    let accs = par::map_reduce(
        &windows,
        Ok(empty),
        |s| horizon_pass(model, s, &horizons),
        |acc: Result<Vec<MetricAccumulator>>, item| {
            let acc = acc?;
            let item = item?;
            Ok(acc.into_iter().zip(item).map(|(a, b)| a.merge(b)).collect())
        },
    )?;
    let mut out = Vec::with_capacity(horizons.len());
    for (&h, acc) in horizons.iter().zip(&accs) {
        out.push(HorizonMetrics {
            horizon_steps: h,
            horizon_minutes: (h as i64 * spacing / 60) as usize,
            mae: acc.mae()?,
            rmse: acc.rmse()?,
            mape: acc.mape()?,
            count: acc.count as usize,
            mape_skipped: acc.zero_truth_skipped,
        });
    }
    Ok(MetricsReport {
        variant: model.config.variant.to_string(),
        split: split.label().to_string(),
        horizons: out,
        seed: model.config.seed,
        config_digest: config_digest(&model.config)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonImprovement {
    pub horizon_minutes: usize,
    /// (base − ours) / base for each metric, relative to the first row.
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: String,
    pub num_blocks: usize,
    pub seeds: Vec<u64>,
    /// Seed-averaged metrics per horizon.
    pub mean: Vec<HorizonMetrics>,
    pub improvement_vs_first: Vec<HorizonImprovement>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: String,
    pub rows: Vec<AblationRow>,
}

/// Trains every (config, seed) pair from scratch, evaluates on `split`,
/// and reports seed-averaged metrics per config plus improvements over
/// the first config. Runs pairs in parallel; aggregation follows config
/// order, so the table is deterministic.
pub fn ablation_run(
    graph: &SensorGraph,
    configs: &[ModelConfig],
    dataset: &SpeedDataset,
    seeds: &[u64],
    train_params: &TrainParams,
    split: Split,
) -> Result<AblationTable> {
    if configs.is_empty() || seeds.is_empty() {
        return input_err("ablation needs at least one config and one seed");
    }
    let stats = *dataset.stats()?;
    let tasks: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, _)| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let reports: Vec<Result<MetricsReport>> = par::map_slice(&tasks, |&(i, seed)| {
        let mut cfg = configs[i].clone();
        cfg.seed = seed;
        let mut model = Model::build(cfg, graph.clone(), stats)?;
        let mut tp = train_params.clone();
        tp.shuffle_seed = seed;
        let mut optim = OptimState::new();
        let outcome = train(&mut model, dataset, &tp, &mut optim)?;
        let best = Model::from_checkpoint(outcome.best, graph.clone())?;
        evaluate(&best, dataset, split)
    });
    let reports: Vec<MetricsReport> = reports.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let group = &reports[i * seeds.len()..(i + 1) * seeds.len()];
        let horizons = group[0].horizons.len();
        let mut mean = Vec::with_capacity(horizons);
        for h in 0..horizons {
            let k = group.len() as f64;
            mean.push(HorizonMetrics {
                horizon_steps: group[0].horizons[h].horizon_steps,
                horizon_minutes: group[0].horizons[h].horizon_minutes,
                mae: group.iter().map(|r| r.horizons[h].mae).sum::<f64>() / k,
                rmse: group.iter().map(|r| r.horizons[h].rmse).sum::<f64>() / k,
                mape: group.iter().map(|r| r.horizons[h].mape).sum::<f64>() / k,
                count: group[0].horizons[h].count,
                mape_skipped: group[0].horizons[h].mape_skipped,
            });
        }
        rows.push(AblationRow {
            label: format!("{}-L{}", cfg.variant, cfg.num_blocks),
            variant: cfg.variant.to_string(),
            num_blocks: cfg.num_blocks,
            seeds: seeds.to_vec(),
            mean,
            improvement_vs_first: Vec::new(),
        });
    }
    let base = rows[0].mean.clone();
    for row in &mut rows {
        let mut imps = Vec::with_capacity(base.len());
        for (b, m) in base.iter().zip(&row.mean) {
            imps.push(HorizonImprovement {
                horizon_minutes: b.horizon_minutes,
                mae: improvement(b.mae, m.mae)?,
                rmse: improvement(b.rmse, m.rmse)?,
                mape: improvement(b.mape, m.mape)?,
            });
        }
        row.improvement_vs_first = imps;
    }
    Ok(AblationTable {
        split: split.label().to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::synth;

    fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            num_blocks: 2,
            block_width: 4,
            diffusion_steps: 2,
            tcn_kernel: 2,
            input_window: 12,
            output_window: 12,
            eval_horizons: vec![3, 6, 12],
            dense_width: 4,
            embed_day: 2,
            embed_month: 2,
            embed_hist: 2,
            fuse_hidden: 8,
            variant,
            seed: 3,
        }
    }

    fn quick_params(epochs: usize) -> TrainParams {
        TrainParams {
            epochs,
            batch_size: 16,
            patience: 15,
            schedule: LrSchedule::new(0.004, 0.5, 180, 50).unwrap(),
            shuffle_seed: 11,
            stop_below_train_mae: None,
        }
    }

    fn setup(nodes: usize, steps: usize) -> (SpeedDataset, Model) {
        let graph = synth::ring_graph(nodes, 2, 21).unwrap();
        let ds = synth::smooth_dataset(nodes, steps, 22).unwrap();
        let model =
            Model::build(tiny_config(Variant::CausIn), graph, *ds.stats().unwrap()).unwrap();
        (ds, model)
    }

    #[test]
    fn zero_epochs_returns_initial_checkpoint() {
        let (ds, mut model) = setup(5, 300);
        let before = model.store.flatten_values();
        let outcome = train(&mut model, &ds, &quick_params(0), &mut OptimState::new()).unwrap();
        assert!(outcome.curve.is_empty());
        assert_eq!(outcome.best_epoch, None);
        assert!(!outcome.stopped_early);
        assert_eq!(outcome.best.params.flatten_values(), before);
        assert_eq!(model.store.flatten_values(), before);
    }

    #[test]
    fn fixed_seed_reproduces_loss_curve() {
        let run = || {
            let (ds, mut model) = setup(5, 300);
            train(&mut model, &ds, &quick_params(2), &mut OptimState::new()).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.curve, b.curve);
        assert_eq!(
            a.best.params.flatten_values(),
            b.best.params.flatten_values()
        );
    }

    #[test]
    fn training_descends_on_smooth_data() {
        let graph = synth::ring_graph(20, 5, 31).unwrap();
        let ds = synth::smooth_dataset(20, 300, 32).unwrap();
        let mut model = Model::build(
            tiny_config(Variant::CausIn),
            graph.clone(),
            *ds.stats().unwrap(),
        )
        .unwrap();
        let untrained_mae = evaluate(&model, &ds, Split::Train).unwrap().horizons[0].mae;
        let outcome = train(&mut model, &ds, &quick_params(5), &mut OptimState::new()).unwrap();
        assert_eq!(outcome.curve.len(), 5);
        for pair in outcome.curve.windows(2) {
            assert!(
                pair[1].train_mae <= pair[0].train_mae * 1.05,
                "epoch {} rose too much: {} -> {}",
                pair[1].epoch,
                pair[0].train_mae,
                pair[1].train_mae
            );
        }
        assert!(outcome.curve[4].train_mae < outcome.curve[0].train_mae);
        let best = Model::from_checkpoint(outcome.best, graph).unwrap();
        let trained_mae = evaluate(&best, &ds, Split::Train).unwrap().horizons[0].mae;
        assert!(
            trained_mae < untrained_mae,
            "training did not help: {untrained_mae} -> {trained_mae}"
        );
    }

    #[test]
    fn batch_loss_equals_masked_mae() {
        let (ds, model) = setup(5, 300);
        let (dense, _) = interpolate_training(&ds).unwrap();
        let (windows, _) = make_windows(&ds, &dense, Split::Train, 12, 12).unwrap();
        let refs: Vec<&WindowSample> = windows.iter().take(3).collect();
        let pass = batch_pass(&model, &refs).unwrap();
        let mut acc = MetricAccumulator::default();
        for s in &refs {
            let f = model.forward(&s.input, &s.calendar).unwrap();
            let mut one = MetricAccumulator::default();
            one.absorb_tensors(&f.values, &s.target, &s.target_mask)
                .unwrap();
            acc = acc.merge(one);
        }
        assert!((pass.loss() - acc.mae().unwrap()).abs() < 1e-12);
        assert_eq!(pass.count, acc.count);
    }

    #[test]
    fn divergence_aborts_with_numeric_error() {
        let (ds, mut model) = setup(5, 300);
        let mut params = quick_params(3);
        // An absurd learning rate blows the parameters up after the first
        // update; the run must stop with a numeric failure, not NaN output.
        params.schedule = LrSchedule::new(1e25, 0.5, 180, 50).unwrap();
        let err = train(&mut model, &ds, &params, &mut OptimState::new()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");
    }

    #[test]
    fn best_checkpoint_minimizes_validation_mae() {
        let (ds, mut model) = setup(6, 300);
        let outcome = train(&mut model, &ds, &quick_params(4), &mut OptimState::new()).unwrap();
        let best_epoch = outcome.best_epoch.unwrap();
        let recorded = outcome.curve[best_epoch].val_mae;
        let lowest = outcome
            .curve
            .iter()
            .map(|r| r.val_mae)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(recorded, lowest);
        // Reloading the checkpoint reproduces the recorded value exactly.
        let best = Model::from_checkpoint(outcome.best, model.graph.clone()).unwrap();
        let (dense, _) = interpolate_training(&ds).unwrap();
        let (val_windows, _) = make_windows(&ds, &dense, Split::Val, 12, 12).unwrap();
        assert_eq!(windows_mae(&best, &val_windows).unwrap(), recorded);
    }

    #[test]
    fn stats_mismatch_is_an_input_error() {
        let (ds, _) = setup(5, 300);
        let graph = synth::ring_graph(5, 2, 21).unwrap();
        let skewed = crate::data::NormStats {
            mean: 1.0,
            std: 2.0,
        };
        let mut model = Model::build(tiny_config(Variant::CausIn), graph, skewed).unwrap();
        assert!(matches!(
            evaluate(&model, &ds, Split::Val),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            train(&mut model, &ds, &quick_params(1), &mut OptimState::new()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn report_covers_quarter_half_hour_horizons() {
        let (ds, model) = setup(5, 300);
        let report = evaluate(&model, &ds, Split::Val).unwrap();
        assert_eq!(report.split, "val");
        assert_eq!(report.variant, "gt-causin");
        assert_eq!(report.config_digest.len(), 64);
        let minutes: Vec<usize> = report.horizons.iter().map(|h| h.horizon_minutes).collect();
        assert_eq!(minutes, vec![15, 30, 60]);
        let (dense, _) = interpolate_training(&ds).unwrap();
        let (windows, _) = make_windows(&ds, &dense, Split::Val, 12, 12).unwrap();
        for h in &report.horizons {
            // Every target cell is observed in this fixture.
            assert_eq!(h.count, windows.len() * 5);
            assert_eq!(h.mape_skipped, 0);
            assert!(h.rmse >= h.mae);
            assert!(h.mae >= 0.0 && h.mape >= 0.0);
        }
    }

    #[test]
    fn loss_curve_file_round_trips() {
        let curve = vec![
            EpochRecord {
                epoch: 0,
                train_mae: 4.25,
                val_mae: 4.5,
                lr: 0.004,
            },
            EpochRecord {
                epoch: 1,
                train_mae: 3.1234567890123456,
                val_mae: 3.9,
                lr: 0.004,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_loss_curve(&curve, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_mae,val_mae,lr");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert_eq!(row[1].parse::<f64>().unwrap(), 4.25);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[1].parse::<f64>().unwrap(), 3.1234567890123456);
        assert!(lines.next().is_none());
    }

    #[test]
    fn identical_ablation_rows_show_zero_improvement() {
        let graph = synth::ring_graph(5, 2, 41).unwrap();
        let ds = synth::smooth_dataset(5, 300, 42).unwrap();
        let cfg = tiny_config(Variant::CausIn);
        let table = ablation_run(
            &graph,
            &[cfg.clone(), cfg],
            &ds,
            &[7],
            &quick_params(1),
            Split::Test,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 2);
        for imp in &table.rows[1].improvement_vs_first {
            assert_eq!(imp.mae, 0.0);
            assert_eq!(imp.rmse, 0.0);
            assert_eq!(imp.mape, 0.0);
        }
        for (a, b) in table.rows[0].mean.iter().zip(&table.rows[1].mean) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn depth_sweep_emits_one_row_per_depth() {
        let graph = synth::ring_graph(5, 2, 51).unwrap();
        let ds = synth::smooth_dataset(5, 300, 52).unwrap();
        let configs: Vec<ModelConfig> = [3, 4, 5, 6]
            .into_iter()
            .map(|l| ModelConfig {
                num_blocks: l,
                ..tiny_config(Variant::CausIn)
            })
            .collect();
        let table =
            ablation_run(&graph, &configs, &ds, &[9], &quick_params(0), Split::Val).unwrap();
        let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            vec![
                "gt-causin-L3",
                "gt-causin-L4",
                "gt-causin-L5",
                "gt-causin-L6"
            ]
        );
        for row in &table.rows {
            assert_eq!(row.mean.len(), 3);
        }
    }
}
