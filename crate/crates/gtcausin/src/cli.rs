//! Command-line surface. Each artifact-producing command writes its files
//! plus one `manifest.json` recording inputs, outputs, and the effective
//! configuration, so every artifact can be rebuilt by replaying commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::causal::events::EventParams;
use crate::causal::exchange::{export_batches, export_relation, import_batches, import_relation};
use crate::causal::sampling::{sample_batches, SampleMode};
use crate::causal::stats::{neighbor_link_report, pearson_matrix};
use crate::data::{self, SpeedDataset, Split};
use crate::error::{data_err, input_err, Error, Result};
use crate::graph::{self, SensorGraph};
use crate::manifest::RunManifest;
use crate::model::{Checkpoint, Model, ModelConfig, Variant};
use crate::optim::{LrSchedule, OptimState};
use crate::par;
use crate::synth;
use crate::train::{ablation_run, evaluate, train, write_loss_curve, AblationTable, TrainParams};

#[derive(Parser)]
#[command(
    name = "gtcausin",
    version,
    about = "Traffic speed forecasting with causal insight attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw speed and distance CSVs into a prepared dataset directory.
    PrepareData(PrepareDataArgs),
    /// Train a model variant on a prepared dataset.
    Train(TrainArgs),
    /// Report masked metrics of a checkpoint per horizon.
    Evaluate(EvaluateArgs),
    /// Sample causal-variable batches to CSV for external discovery tools.
    CausalExtract(CausalExtractArgs),
    /// Pool exported batches into a 30x30 Pearson relation matrix.
    Correlate(CorrelateArgs),
    /// Dump the attention rows of one station at one input window.
    InspectAttention(InspectAttentionArgs),
    /// Emit plot-ready CSV tables (data only, never rendered images).
    EmitPlot(EmitPlotArgs),
    /// Train and compare variant/depth combinations on one dataset.
    Ablation(AblationArgs),
    /// Generate synthetic speed and distance fixtures.
    SynthData(SynthDataArgs),
}

pub fn cli_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive here too; only real usage
            // mistakes take the usage exit code.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::PrepareData(a) => run_prepare_data(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::CausalExtract(a) => run_causal_extract(a),
        Command::Correlate(a) => run_correlate(a),
        Command::InspectAttention(a) => run_inspect_attention(a),
        Command::EmitPlot(a) => run_emit_plot(a),
        Command::Ablation(a) => run_ablation(a),
        Command::SynthData(a) => run_synth_data(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn save_graph(g: &SensorGraph, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), g)?;
    Ok(())
}

fn load_graph(path: &Path) -> Result<SensorGraph> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Loads the `dataset.json` + `graph.json` pair written by prepare-data.
fn load_prepared(dir: &Path) -> Result<(SpeedDataset, SensorGraph)> {
    let ds = SpeedDataset::load_json(&dir.join("dataset.json"))?;
    let g = load_graph(&dir.join("graph.json"))?;
    if ds.node_ids != g.node_ids() {
        return data_err(format!(
            "dataset and graph under {} disagree on sensors",
            dir.display()
        ));
    }
    Ok((ds, g))
}

fn write_json_pretty<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for piece in text.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        out.push(
            piece
                .parse::<T>()
                .map_err(|_| Error::Input(format!("bad {what} entry {piece:?}")))?,
        );
    }
    if out.is_empty() {
        return input_err(format!("empty {what} list"));
    }
    Ok(out)
}

#[derive(Args)]
struct PrepareDataArgs {
    /// Raw speed CSV: timestamp column, then one column per sensor.
    #[arg(long)]
    speeds: PathBuf,
    /// Distance CSV with header from,to,cost.
    #[arg(long)]
    distances: PathBuf,
    /// Gaussian kernel bandwidth for adjacency weights.
    #[arg(long)]
    sigma: f64,
    /// Distance cutoff beyond which sensors stay unconnected.
    #[arg(long)]
    kappa: f64,
    /// Treat zero speed readings as missing.
    #[arg(long)]
    zero_missing: bool,
    /// Unit label recorded with the speeds.
    #[arg(long, default_value = "mph")]
    unit: String,
    #[arg(long)]
    out: PathBuf,
}

fn run_prepare_data(a: PrepareDataArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("prepare-data", 0);
    manifest.digest_input(&a.speeds)?;
    manifest.digest_input(&a.distances)?;

    let raw = data::load_speed_csv(&a.speeds, a.zero_missing, &a.unit)?;
    let mut ds = data::aggregate_5min(&raw)?;
    data::assign_splits(&mut ds)?;
    let records = graph::load_distance_csv(&a.distances)?;
    let g = graph::build_adjacency_for(&ds.node_ids, &records, a.sigma, a.kappa)?;

    let ds_path = a.out.join("dataset.json");
    let g_path = a.out.join("graph.json");
    ds.save_json(&ds_path)?;
    save_graph(&g, &g_path)?;
    manifest.record_output(&ds_path);
    manifest.record_output(&g_path);
    let splits = ds.splits()?;
    manifest.set_config(&serde_json::json!({
        "sigma": a.sigma,
        "kappa": a.kappa,
        "zero_missing": a.zero_missing,
        "unit": a.unit,
        "rows": ds.len(),
        "nodes": ds.node_count(),
        "train_end": splits.train_end,
        "val_end": splits.val_end,
    }))?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;
    println!(
        "prepared {} rows x {} sensors; train ends at {}, validation at {}",
        ds.len(),
        ds.node_count(),
        splits.train_end,
        splits.val_end
    );
    Ok(())
}

/// Settings a train config file may carry. Flags override file values,
/// file values override these defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub lr: f64,
    pub lr_gamma: f64,
    pub lr_start: u64,
    pub lr_step: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 100,
            batch_size: 16,
            patience: 15,
            lr: 0.004,
            lr_gamma: 0.5,
            lr_start: 180,
            lr_step: 50,
        }
    }
}

impl TrainConfig {
    fn train_params(&self) -> Result<TrainParams> {
        Ok(TrainParams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            schedule: LrSchedule::new(self.lr, self.lr_gamma, self.lr_start, self.lr_step)?,
            shuffle_seed: self.model.seed,
            stop_below_train_mae: None,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by prepare-data.
    #[arg(long)]
    data: PathBuf,
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Number of stacked blocks, L.
    #[arg(long)]
    blocks: Option<usize>,
    /// Channel width of each block.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Multiplicative decay factor.
    #[arg(long)]
    lr_gamma: Option<f64>,
    /// First epoch the decay applies to.
    #[arg(long)]
    lr_start: Option<u64>,
    /// Epochs between further decays.
    #[arg(long)]
    lr_step: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn merged_train_config(a: &TrainArgs, manifest: &mut RunManifest) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            manifest.config_path = Some(path.display().to_string());
            manifest.digest_input(path)?;
            read_json::<TrainConfig>(path)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if let Some(l) = a.blocks {
        cfg.model.num_blocks = l;
    }
    if let Some(w) = a.width {
        cfg.model.block_width = w;
    }
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(p) = a.patience {
        cfg.patience = p;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(g) = a.lr_gamma {
        cfg.lr_gamma = g;
    }
    if let Some(s) = a.lr_start {
        cfg.lr_start = s;
    }
    if let Some(s) = a.lr_step {
        cfg.lr_step = s;
    }
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("train", 0);
    let cfg = merged_train_config(&a, &mut manifest)?;
    manifest.seed = cfg.model.seed;
    manifest.digest_input(&a.data.join("dataset.json"))?;
    manifest.digest_input(&a.data.join("graph.json"))?;

    let (ds, g) = load_prepared(&a.data)?;
    let stats = *ds.stats()?;
    let mut model = Model::build(cfg.model.clone(), g, stats)?;
    let params = cfg.train_params()?;
    let mut optim = OptimState::new();
    let outcome = train(&mut model, &ds, &params, &mut optim)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    let ckpt_path = a.out.join("checkpoint.json");
    let curve_path = a.out.join("loss_curve.csv");
    outcome.best.save(&ckpt_path)?;
    write_loss_curve(&outcome.curve, &curve_path)?;
    manifest.record_output(&ckpt_path);
    manifest.record_output(&curve_path);
    manifest.set_config(&cfg)?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;

    match outcome.best_epoch {
        Some(e) => println!(
            "trained {} for {} epochs; best validation MAE {} at epoch {e}",
            cfg.model.variant,
            outcome.curve.len(),
            outcome.curve[e].val_mae
        ),
        None => println!("no epochs ran; wrote the initial parameters"),
    }
    Ok(())
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory written by prepare-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("evaluate", 0);
    manifest.digest_input(&a.checkpoint)?;
    manifest.digest_input(&a.data.join("dataset.json"))?;
    manifest.digest_input(&a.data.join("graph.json"))?;

    let split = Split::parse(&a.split)?;
    let (ds, g) = load_prepared(&a.data)?;
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let model = Model::from_checkpoint(checkpoint, g)?;
    manifest.seed = model.config.seed;
    let report = evaluate(&model, &ds, split)?;

    let report_path = a.out.join("metrics.json");
    write_json_pretty(&report, &report_path)?;
    manifest.record_output(&report_path);
    manifest.set_config(&serde_json::json!({
        "split": a.split,
        "variant": report.variant,
        "config_digest": report.config_digest,
    }))?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;

    for h in &report.horizons {
        println!(
            "{} {}min: MAE {} RMSE {} MAPE {}",
            report.variant, h.horizon_minutes, h.mae, h.rmse, h.mape
        );
    }
    Ok(())
}

#[derive(Args)]
struct CausalExtractArgs {
    /// Directory written by prepare-data.
    #[arg(long)]
    data: PathBuf,
    /// Graph JSON overriding the prepared one.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// random | event
    #[arg(long, default_value = "random")]
    mode: String,
    /// Rows per batch.
    #[arg(long, default_value_t = 2000)]
    batch: usize,
    /// Number of batches.
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn run_causal_extract(a: CausalExtractArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("causal-extract", a.seed);
    manifest.digest_input(&a.data.join("dataset.json"))?;

    let (ds, mut g) = load_prepared(&a.data)?;
    match &a.graph {
        Some(path) => {
            manifest.digest_input(path)?;
            g = load_graph(path)?;
            if ds.node_ids != g.node_ids() {
                return data_err("override graph disagrees with the dataset sensors");
            }
        }
        None => manifest.digest_input(&a.data.join("graph.json"))?,
    }
    let transitions = graph::build_transitions(&g)?;
    let mode = match a.mode.as_str() {
        "random" => SampleMode::Random,
        "event" => SampleMode::Event(EventParams {
            seed: a.seed,
            ..EventParams::default()
        }),
        other => return input_err(format!("unknown mode {other:?}; expected random or event")),
    };
    let (batches, warnings) = sample_batches(&ds, &transitions, a.batch, a.repeats, mode, a.seed)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if batches.is_empty() {
        return data_err("sampling produced no batches");
    }
    let paths = export_batches(&batches, &a.out)?;
    for p in &paths {
        manifest.record_output(p);
    }
    manifest.set_config(&serde_json::json!({
        "mode": a.mode,
        "batch": a.batch,
        "repeats": a.repeats,
        "seed": a.seed,
    }))?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;
    println!("wrote {} batches of causal variables", paths.len());
    Ok(())
}

#[derive(Args)]
struct CorrelateArgs {
    /// Directory of batch_*.csv files from causal-extract.
    #[arg(long)]
    batches: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn run_correlate(a: CorrelateArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("correlate", 0);

    let mut batch_paths: Vec<PathBuf> = std::fs::read_dir(&a.batches)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("batch_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    batch_paths.sort();
    for p in &batch_paths {
        manifest.digest_input(p)?;
    }
    let batches = import_batches(&a.batches)?;
    let relation = pearson_matrix(&batches)?;
    let report = neighbor_link_report(&relation)?;

    let rel_path = a.out.join("relation.csv");
    let report_path = a.out.join("link_report.json");
    export_relation(&relation, &rel_path)?;
    write_json_pretty(&report, &report_path)?;
    manifest.record_output(&rel_path);
    manifest.record_output(&report_path);
    manifest.set_config(&serde_json::json!({
        "batches": batches.len(),
        "zero_variance_columns": relation.zero_variance,
    }))?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;
    println!(
        "pooled {} batches; first-order triangle mean |r| {}, second-order {}",
        batches.len(),
        report.first_order_triangle,
        report.second_order_pairs
    );
    Ok(())
}

#[derive(Args)]
struct InspectAttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory written by prepare-data.
    #[arg(long)]
    data: PathBuf,
    /// Sensor id (or numeric index) whose attention rows to dump.
    #[arg(long)]
    station: String,
    /// Dataset row where the input window starts.
    #[arg(long)]
    t: usize,
    #[arg(long)]
    out: PathBuf,
}

fn resolve_station(g: &SensorGraph, station: &str) -> Result<usize> {
    if let Some(i) = g.index_of(station) {
        return Ok(i);
    }
    if let Ok(i) = station.parse::<usize>() {
        if i < g.node_count() {
            return Ok(i);
        }
    }
    input_err(format!("unknown station {station:?}"))
}

/// Cuts the z-scored input window starting at dataset row `t`.
fn normalized_window(
    ds: &SpeedDataset,
    dense: &crate::tensor::Tensor,
    t: usize,
    len: usize,
) -> Result<crate::tensor::Tensor> {
    if t + len > ds.len() {
        return input_err(format!(
            "window {t}..{} runs past the dataset ({} rows)",
            t + len,
            ds.len()
        ));
    }
    let stats = ds.stats()?;
    let n = ds.node_count();
    let mut out = Vec::with_capacity(n * len);
    for node in 0..n {
        for k in 0..len {
            out.push(stats.normalize(dense.at2(t + k, node)));
        }
    }
    crate::tensor::Tensor::new(&[n, 1, len], out)
}

fn run_inspect_attention(a: InspectAttentionArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("inspect-attention", 0);
    manifest.digest_input(&a.checkpoint)?;
    manifest.digest_input(&a.data.join("dataset.json"))?;
    manifest.digest_input(&a.data.join("graph.json"))?;

    let (ds, g) = load_prepared(&a.data)?;
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let model = Model::from_checkpoint(checkpoint, g)?;
    manifest.seed = model.config.seed;
    let station = resolve_station(&model.graph, &a.station)?;
    let (dense, _) = data::interpolate_training(&ds)?;
    let window = normalized_window(&ds, &dense, a.t, model.config.input_window)?;
    let view = model.attention_view(&window, station)?;

    let csv_path = a.out.join("attention.csv");
    std::fs::write(&csv_path, view.to_csv())?;
    manifest.record_output(&csv_path);
    manifest.set_config(&serde_json::json!({
        "station": a.station,
        "station_index": station,
        "t": a.t,
    }))?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;
    println!(
        "wrote attention rows for station {} at window start {}",
        a.station, a.t
    );
    Ok(())
}

#[derive(Args)]
struct EmitPlotArgs {
    /// prediction-vs-truth | correlation-circles | attention-heatmap | l-sweep
    #[arg(long)]
    kind: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory written by prepare-data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    station: Option<String>,
    /// Forecast offset in steps for prediction curves.
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    /// relation.csv from correlate.
    #[arg(long)]
    relation: Option<PathBuf>,
    /// attention.csv from inspect-attention.
    #[arg(long)]
    attention: Option<PathBuf>,
    /// ablation.json from ablation.
    #[arg(long)]
    ablation: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn require<T>(value: Option<T>, flag: &str, kind: &str) -> Result<T> {
    value.ok_or_else(|| Error::Input(format!("--{flag} is required for kind {kind}")))
}

fn plot_prediction_vs_truth(
    a: &EmitPlotArgs,
    manifest: &mut RunManifest,
    path: &Path,
) -> Result<()> {
    let ckpt = require(a.checkpoint.as_ref(), "checkpoint", &a.kind)?;
    let dir = require(a.data.as_ref(), "data", &a.kind)?;
    let station = require(a.station.as_ref(), "station", &a.kind)?;
    manifest.digest_input(ckpt)?;
    manifest.digest_input(&dir.join("dataset.json"))?;
    manifest.digest_input(&dir.join("graph.json"))?;

    let split = Split::parse(&a.split)?;
    let (ds, g) = load_prepared(dir)?;
    let model = Model::from_checkpoint(Checkpoint::load(ckpt)?, g)?;
    manifest.seed = model.config.seed;
    let idx = resolve_station(&model.graph, station)?;
    let cfg = &model.config;
    if a.horizon < 1 || a.horizon > cfg.output_window {
        return input_err(format!(
            "horizon must lie in 1..={}, got {}",
            cfg.output_window, a.horizon
        ));
    }
    let (dense, _) = data::interpolate_training(&ds)?;
    let (windows, _) = data::make_windows(&ds, &dense, split, cfg.input_window, cfg.output_window)?;
    if windows.is_empty() {
        return data_err(format!("split {} yields no windows", a.split));
    }
    // Input window shifts one step per row, giving a continuous curve.
    let rows: Vec<Result<(usize, f64)>> = par::map_slice(&windows, |w| {
        let f = model.forward(&w.input, &w.calendar)?;
        Ok((w.start, f.values.at3(idx, 0, a.horizon - 1)))
    });
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["time_index", "timestamp", "truth", "prediction", "observed"])?;
    for row in rows {
        let (start, pred) = row?;
        let t = start + cfg.input_window + a.horizon - 1;
        writer.write_record([
            t.to_string(),
            ds.timestamps[t].format("%Y-%m-%d %H:%M:%S").to_string(),
            format!("{}", ds.speed_at(t, idx)),
            format!("{pred}"),
            (if ds.is_observed(t, idx) { "1" } else { "0" }).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn plot_correlation_circles(
    a: &EmitPlotArgs,
    manifest: &mut RunManifest,
    path: &Path,
) -> Result<()> {
    let rel_path = require(a.relation.as_ref(), "relation", &a.kind)?;
    manifest.digest_input(rel_path)?;
    let relation = import_relation(rel_path)?;
    let names = crate::causal::variables::variable_names();
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["var_a", "var_b", "r"])?;
    for i in 0..names.len() {
        for j in 0..names.len() {
            writer.write_record([
                names[i].clone(),
                names[j].clone(),
                format!("{}", relation.c.at2(i, j)),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn plot_attention_heatmap(a: &EmitPlotArgs, manifest: &mut RunManifest, path: &Path) -> Result<()> {
    let att_path = require(a.attention.as_ref(), "attention", &a.kind)?;
    manifest.digest_input(att_path)?;
    let mut reader = csv::Reader::from_path(att_path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if headers != ["query_token", "key_token", "score", "weight"] {
        return data_err(format!(
            "{} does not look like an attention dump",
            att_path.display()
        ));
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["query_token", "key_token", "weight"])?;
    for record in reader.records() {
        let record = record?;
        writer.write_record([&record[0], &record[1], &record[3]])?;
    }
    writer.flush()?;
    Ok(())
}

fn plot_l_sweep(a: &EmitPlotArgs, manifest: &mut RunManifest, path: &Path) -> Result<()> {
    let table_path = require(a.ablation.as_ref(), "ablation", &a.kind)?;
    manifest.digest_input(table_path)?;
    let table: AblationTable = read_json(table_path)?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "label",
        "num_blocks",
        "horizon_minutes",
        "mae",
        "rmse",
        "mape",
    ])?;
    for row in &table.rows {
        for h in &row.mean {
            writer.write_record([
                row.label.clone(),
                row.num_blocks.to_string(),
                h.horizon_minutes.to_string(),
                format!("{}", h.mae),
                format!("{}", h.rmse),
                format!("{}", h.mape),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn run_emit_plot(a: EmitPlotArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("emit-plot", 0);
    let path = a.out.join("plot.csv");
    match a.kind.as_str() {
        "prediction-vs-truth" => plot_prediction_vs_truth(&a, &mut manifest, &path)?,
        "correlation-circles" => plot_correlation_circles(&a, &mut manifest, &path)?,
        "attention-heatmap" => plot_attention_heatmap(&a, &mut manifest, &path)?,
        "l-sweep" => plot_l_sweep(&a, &mut manifest, &path)?,
        other => {
            return input_err(format!(
                "unknown plot kind {other:?}; expected prediction-vs-truth, correlation-circles, attention-heatmap or l-sweep"
            ))
        }
    }
    manifest.record_output(&path);
    manifest.set_config(&serde_json::json!({ "kind": a.kind }))?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;
    println!("wrote {} data to {}", a.kind, path.display());
    Ok(())
}

#[derive(Args)]
struct AblationArgs {
    /// Directory written by prepare-data.
    #[arg(long)]
    data: PathBuf,
    /// Comma list of variants to compare; the first is the baseline.
    #[arg(long, default_value = "gt-causin")]
    variants: String,
    /// Comma list of block counts, L.
    #[arg(long, default_value = "4")]
    blocks: String,
    /// Comma list of seeds to average over.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// JSON config file for the shared base settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

fn run_ablation(a: AblationArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("ablation", 0);
    manifest.digest_input(&a.data.join("dataset.json"))?;
    manifest.digest_input(&a.data.join("graph.json"))?;

    let mut base = match &a.config {
        Some(path) => {
            manifest.config_path = Some(path.display().to_string());
            manifest.digest_input(path)?;
            read_json::<TrainConfig>(path)?
        }
        None => TrainConfig::default(),
    };
    if let Some(w) = a.width {
        base.model.block_width = w;
    }
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    if let Some(b) = a.batch_size {
        base.batch_size = b;
    }
    if let Some(p) = a.patience {
        base.patience = p;
    }
    let variants: Vec<Variant> = parse_list(&a.variants, "variant")?;
    let blocks: Vec<usize> = parse_list(&a.blocks, "blocks")?;
    let seeds: Vec<u64> = parse_list(&a.seeds, "seeds")?;
    let split = Split::parse(&a.split)?;

    let mut configs = Vec::with_capacity(variants.len() * blocks.len());
    for &v in &variants {
        for &l in &blocks {
            let mut cfg = base.model.clone();
            cfg.variant = v;
            cfg.num_blocks = l;
            configs.push(cfg);
        }
    }
    let (ds, g) = load_prepared(&a.data)?;
    let table = ablation_run(&g, &configs, &ds, &seeds, &base.train_params()?, split)?;

    let json_path = a.out.join("ablation.json");
    let csv_path = a.out.join("ablation.csv");
    write_json_pretty(&table, &json_path)?;
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record([
        "label",
        "variant",
        "num_blocks",
        "horizon_minutes",
        "mae",
        "rmse",
        "mape",
        "improvement_mae",
        "improvement_rmse",
        "improvement_mape",
    ])?;
    for row in &table.rows {
        for (h, imp) in row.mean.iter().zip(&row.improvement_vs_first) {
            writer.write_record([
                row.label.clone(),
                row.variant.clone(),
                row.num_blocks.to_string(),
                h.horizon_minutes.to_string(),
                format!("{}", h.mae),
                format!("{}", h.rmse),
                format!("{}", h.mape),
                format!("{}", imp.mae),
                format!("{}", imp.rmse),
                format!("{}", imp.mape),
            ])?;
        }
    }
    writer.flush()?;
    manifest.record_output(&json_path);
    manifest.record_output(&csv_path);
    manifest.set_config(&serde_json::json!({
        "base": base,
        "variants": a.variants,
        "blocks": a.blocks,
        "seeds": a.seeds,
        "split": a.split,
    }))?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;
    println!(
        "compared {} configurations over {} seeds",
        configs.len(),
        seeds.len()
    );
    Ok(())
}

#[derive(Args)]
struct SynthDataArgs {
    /// smooth | planted
    #[arg(long, default_value = "smooth")]
    kind: String,
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Extra random directed edges beyond the ring.
    #[arg(long, default_value_t = 4)]
    chords: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn run_synth_data(a: SynthDataArgs) -> Result<()> {
    let t0 = Instant::now();
    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("synth-data", a.seed);

    let records = synth::ring_distances(a.nodes, a.chords, a.seed)?;
    let ds = match a.kind.as_str() {
        "smooth" => synth::smooth_dataset(a.nodes, a.steps, a.seed)?,
        "planted" => {
            let ids = synth::node_ids(a.nodes);
            let g = graph::build_adjacency_for(&ids, &records, synth::SIGMA, synth::KAPPA)?;
            let params = synth::PlantedParams {
                steps: a.steps,
                ..synth::PlantedParams::default()
            };
            synth::planted_lag_dataset(&g, &params, a.seed)?
        }
        other => {
            return input_err(format!(
                "unknown kind {other:?}; expected smooth or planted"
            ))
        }
    };

    let speeds_path = a.out.join("speeds.csv");
    let dist_path = a.out.join("distances.csv");
    data::save_speed_csv(&ds, &speeds_path)?;
    synth::write_distance_csv(&records, &dist_path)?;
    manifest.record_output(&speeds_path);
    manifest.record_output(&dist_path);
    manifest.set_config(&serde_json::json!({
        "kind": a.kind,
        "nodes": a.nodes,
        "steps": a.steps,
        "chords": a.chords,
        "seed": a.seed,
        "sigma": synth::SIGMA,
        "kappa": synth::KAPPA,
    }))?;
    manifest.wall_clock_secs = t0.elapsed().as_secs_f64();
    manifest.save(&a.out.join("manifest.json"))?;
    println!(
        "wrote {} synthetic data: {} rows x {} sensors",
        a.kind,
        ds.len(),
        ds.node_count()
    );
    Ok(())
}
