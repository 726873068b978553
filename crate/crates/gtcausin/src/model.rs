//! Full network assembly: causal insight attention, a serialized stack of
//! diffusion+TCN blocks with skip connections, channel merge, and the
//! periodic-feature fusion head, plus the two ablation variants.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{CalendarInfo, NormStats};
use crate::error::{input_err, Error, Result};
use crate::graph::{
    build_random_walks, build_transitions, RandomWalks, SensorGraph, TransitionSet,
};
use crate::layers::{AttentionView, CausalInsightLayer, InherentLayer};
use crate::params::ParamStore;
use crate::tensor::{self, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Network variants: the full model, one without the attention stage, and
/// one whose attention sees the node's own stream in place of both
/// neighborhood perspectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "gt-causin")]
    CausIn,
    #[serde(rename = "gt-nocausin")]
    NoCausIn,
    #[serde(rename = "gt-badcausin")]
    BadCausIn,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::CausIn => "gt-causin",
            Variant::NoCausIn => "gt-nocausin",
            Variant::BadCausIn => "gt-badcausin",
        }
    }

    pub const ALL: [Variant; 3] = [Variant::CausIn, Variant::NoCausIn, Variant::BadCausIn];

    /// True when the variant carries attention parameters.
    pub fn has_attention(self) -> bool {
        !matches!(self, Variant::NoCausIn)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt-causin" => Ok(Variant::CausIn),
            "gt-nocausin" => Ok(Variant::NoCausIn),
            "gt-badcausin" => Ok(Variant::BadCausIn),
            other => Err(Error::Input(format!(
                "unknown variant {other:?}; expected gt-causin, gt-nocausin or gt-badcausin"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of serialized blocks, L.
    pub num_blocks: usize,
    /// Channel width of every block output.
    pub block_width: usize,
    /// Diffusion walk steps per direction, K.
    pub diffusion_steps: usize,
    /// Temporal kernel size.
    pub tcn_kernel: usize,
    /// Input steps per window, T′.
    pub input_window: usize,
    /// Forecast steps per window, T.
    pub output_window: usize,
    /// Forecast offsets (in steps) reported by evaluation.
    pub eval_horizons: Vec<usize>,
    /// Width of the dense pair after the first block.
    pub dense_width: usize,
    pub embed_day: usize,
    pub embed_month: usize,
    pub embed_hist: usize,
    /// Hidden width of the fusion head.
    pub fuse_hidden: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_blocks: 4,
            block_width: 8,
            diffusion_steps: 3,
            tcn_kernel: 3,
            input_window: 12,
            output_window: 12,
            eval_horizons: vec![3, 6, 12],
            dense_width: 8,
            embed_day: 4,
            embed_month: 4,
            embed_hist: 4,
            fuse_hidden: 16,
            variant: Variant::CausIn,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.num_blocks, "num_blocks"),
            (self.block_width, "block_width"),
            (self.diffusion_steps, "diffusion_steps"),
            (self.tcn_kernel, "tcn_kernel"),
            (self.input_window, "input_window"),
            (self.output_window, "output_window"),
            (self.dense_width, "dense_width"),
            (self.embed_day, "embed_day"),
            (self.embed_month, "embed_month"),
            (self.embed_hist, "embed_hist"),
            (self.fuse_hidden, "fuse_hidden"),
        ];
        for (value, name) in positive {
            if value == 0 {
                return input_err(format!("{name} must be at least 1"));
            }
        }
        if self.eval_horizons.is_empty() {
            return input_err("eval_horizons must not be empty");
        }
        for pair in self.eval_horizons.windows(2) {
            if pair[1] <= pair[0] {
                return input_err("eval_horizons must be strictly increasing");
            }
        }
        let last = *self.eval_horizons.last().unwrap();
        if self.eval_horizons[0] < 1 || last > self.output_window {
            return input_err(format!(
                "eval_horizons must lie in 1..={}, got {:?}",
                self.output_window, self.eval_horizons
            ));
        }
        Ok(())
    }

    /// Trunk stream width: speed plus variation channel per input step.
    pub fn stream_width(&self) -> usize {
        2 * self.input_window
    }

    /// Flattened per-node width of the merged skip stack.
    pub fn merged_width(&self) -> usize {
        self.num_blocks * self.block_width * self.input_window
    }
}

/// De-normalized forecast sequence with the evaluation offsets it serves.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    /// N×1×T predicted speeds in raw units.
    pub values: Tensor,
    pub horizons: Vec<usize>,
}

/// Intermediate streams captured during a forward pass.
#[derive(Clone, Debug)]
pub struct ModelTrace {
    /// N×2×T′ stream entering the first block (post attention stage).
    pub trunk_input: Tensor,
    /// Raw block outputs, one N×W×T′ tensor per block.
    pub skips: Vec<Tensor>,
    /// N×(L·W)×T′ channel concatenation of the skips.
    pub merged: Tensor,
    /// N×1×T output before de-normalization.
    pub normalized: Tensor,
    pub forecast: Forecast,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum AttentionMode {
    Configured,
    /// Identity pass-through in place of the attention stage.
    Bypass,
    /// Degraded wiring (own stream for both neighborhoods) regardless of
    /// the configured variant.
    ForceDegraded,
}

#[derive(Clone, Copy, Debug)]
struct ForwardOpts {
    attention: AttentionMode,
    /// Replace this skip with zeros before the merge.
    drop_skip: Option<usize>,
}

impl Default for ForwardOpts {
    fn default() -> Self {
        Self {
            attention: AttentionMode::Configured,
            drop_skip: None,
        }
    }
}

struct ForwardVars {
    trunk_input: Var,
    skips: Vec<Var>,
    merged: Var,
    normalized: Var,
    prediction: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub graph: SensorGraph,
    pub store: ParamStore,
    pub norm_stats: NormStats,
    transitions: TransitionSet,
    walks: Arc<RandomWalks>,
    causal: Option<CausalInsightLayer>,
    inherent: InherentLayer,
}

impl Model {
    pub fn build(config: ModelConfig, graph: SensorGraph, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        if !(norm_stats.std.is_finite() && norm_stats.mean.is_finite()) || norm_stats.std <= 0.0 {
            return input_err(format!("bad normalization stats {norm_stats:?}"));
        }
        let transitions = build_transitions(&graph)?;
        let walks = Arc::new(build_random_walks(&graph)?);

        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let causal = if config.variant.has_attention() {
            let layer = CausalInsightLayer::new("causal_insight", config.stream_width());
            layer.register(&mut store, &mut rng)?;
            Some(layer)
        } else {
            None
        };

        let w = config.block_width;
        for l in 0..config.num_blocks {
            let p_in = if l == 0 { 2 } else { w };
            store.init_uniform(
                &format!("block{l}/diffusion/theta"),
                &[w, p_in, config.diffusion_steps, 2],
                p_in * config.diffusion_steps * 2,
                &mut rng,
            )?;
            store.init_uniform(
                &format!("block{l}/tcn/theta"),
                &[w, w, config.tcn_kernel],
                w * config.tcn_kernel,
                &mut rng,
            )?;
        }

        let d = config.dense_width;
        store.init_uniform("post_block0/fc1/w", &[d, w], w, &mut rng)?;
        store.insert("post_block0/fc1/b", Tensor::zeros(&[d]))?;
        store.init_uniform("post_block0/fc2/w", &[w, d], d, &mut rng)?;
        store.insert("post_block0/fc2/b", Tensor::zeros(&[w]))?;

        let inherent = InherentLayer {
            prefix: "inherent".into(),
            merged_width: config.merged_width(),
            embed_day: config.embed_day,
            embed_month: config.embed_month,
            embed_hist: config.embed_hist,
            hidden: config.fuse_hidden,
            out_width: config.output_window,
        };
        inherent.register(&mut store, &mut rng)?;

        Ok(Self {
            config,
            graph,
            store,
            norm_stats,
            transitions,
            walks: walks.clone(),
            causal,
            inherent,
        })
    }

    pub fn transitions(&self) -> &TransitionSet {
        &self.transitions
    }

    pub fn walks(&self) -> &Arc<RandomWalks> {
        &self.walks
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Speed and variation channels side by side: N×2T′ with
    /// `var[t] = x[t] − x[t−1]` and `var[0] = 0`.
    fn with_variation(&self, speeds: &Tensor) -> Result<Tensor> {
        let (n, t) = (speeds.rows(), speeds.cols());
        let mut var = vec![0.0; n * t];
        for ni in 0..n {
            for ti in 1..t {
                var[ni * t + ti] = speeds.at2(ni, ti) - speeds.at2(ni, ti - 1);
            }
        }
        let var = Tensor::new(&[n, t], var)?;
        tensor::concat_cols(&[speeds, &var])
    }

    fn check_inputs(&self, window: &Tensor, calendar: &CalendarInfo) -> Result<()> {
        let n = self.graph.node_count();
        if window.shape() != [n, 1, self.config.input_window] {
            return input_err(format!(
                "window shape {:?} does not match {n}×1×{}",
                window.shape(),
                self.config.input_window
            ));
        }
        if !window.all_finite() {
            return input_err("window contains non-finite speeds; interpolate upstream");
        }
        if calendar.historic.len() != n {
            return input_err(format!(
                "historic speeds cover {} nodes, graph has {n}",
                calendar.historic.len()
            ));
        }
        if calendar.historic.iter().any(|v| !v.is_finite()) {
            return input_err("historic speeds contain non-finite values");
        }
        Ok(())
    }

    fn build_forward(
        &self,
        tape: &mut Tape,
        window: &Tensor,
        calendar: &CalendarInfo,
        opts: ForwardOpts,
    ) -> Result<ForwardVars> {
        self.check_inputs(window, calendar)?;
        let n = self.graph.node_count();
        let t_in = self.config.input_window;
        let width = self.config.stream_width();

        let speeds = window.reshaped(&[n, t_in])?;
        let x_cat = self.with_variation(&speeds)?;

        let trunk_2d = match (opts.attention, self.config.variant) {
            (AttentionMode::Bypass, _) | (AttentionMode::Configured, Variant::NoCausIn) => {
                tape.constant(x_cat)
            }
            (AttentionMode::Configured, Variant::CausIn) => {
                let layer = self.causal.as_ref().expect("attention params present");
                let i1 = tensor::matmul(&self.transitions.t_i1, &x_cat)?;
                let o1 = tensor::matmul(&self.transitions.t_o1, &x_cat)?;
                let (x, i1, o1) = (tape.constant(x_cat), tape.constant(i1), tape.constant(o1));
                layer.forward(tape, &self.store, x, i1, o1)?
            }
            (AttentionMode::Configured, Variant::BadCausIn) | (AttentionMode::ForceDegraded, _) => {
                let layer = self.causal.as_ref().ok_or_else(|| {
                    Error::Input("this variant holds no attention parameters".into())
                })?;
                let x = tape.constant(x_cat);
                layer.forward(tape, &self.store, x, x, x)?
            }
        };
        debug_assert_eq!(tape.shape(trunk_2d), [n, width]);
        let trunk_input = tape.reshape(trunk_2d, &[n, 2, t_in])?;

        let mut stream = trunk_input;
        let mut skips = Vec::with_capacity(self.config.num_blocks);
        for l in 0..self.config.num_blocks {
            let theta_d = tape.param(&self.store, &format!("block{l}/diffusion/theta"))?;
            let diffused = tape.diffusion(stream, theta_d, &self.walks)?;
            let theta_t = tape.param(&self.store, &format!("block{l}/tcn/theta"))?;
            let block_out = tape.dilated_conv(diffused, theta_t, 1 << l)?;
            skips.push(block_out);
            stream = if l == 0 {
                let w1 = tape.param(&self.store, "post_block0/fc1/w")?;
                let b1 = tape.param(&self.store, "post_block0/fc1/b")?;
                let h = tape.channel_dense(block_out, w1)?;
                let h = tape.add_channel_bias(h, b1)?;
                let h = tape.relu(h)?;
                let w2 = tape.param(&self.store, "post_block0/fc2/w")?;
                let b2 = tape.param(&self.store, "post_block0/fc2/b")?;
                let h = tape.channel_dense(h, w2)?;
                tape.add_channel_bias(h, b2)?
            } else {
                block_out
            };
        }

        let flat_width = self.config.block_width * t_in;
        let mut parts = Vec::with_capacity(skips.len());
        for (l, &skip) in skips.iter().enumerate() {
            if opts.drop_skip == Some(l) {
                parts.push(tape.constant(Tensor::zeros(&[n, flat_width])));
            } else {
                parts.push(tape.reshape(skip, &[n, flat_width])?);
            }
        }
        let merged_flat = tape.concat_cols(&parts)?;
        let merged = tape.reshape(
            merged_flat,
            &[n, self.config.num_blocks * self.config.block_width, t_in],
        )?;

        let mut hist = Vec::with_capacity(n);
        for &v in &calendar.historic {
            hist.push(self.norm_stats.normalize(v));
        }
        let hist = Tensor::new(&[n, 1], hist)?;
        let normalized = self.inherent.forward(
            tape,
            &self.store,
            merged,
            calendar.day_of_week,
            calendar.month,
            &hist,
        )?;

        let scaled = tape.scale(normalized, self.norm_stats.std)?;
        let prediction = tape.shift(scaled, self.norm_stats.mean)?;

        Ok(ForwardVars {
            trunk_input,
            skips,
            merged,
            normalized,
            prediction,
        })
    }

    /// Runs the network on one normalized window and de-normalizes the
    /// prediction to speed units.
    pub fn forward(&self, window: &Tensor, calendar: &CalendarInfo) -> Result<Forecast> {
        let mut tape = Tape::new();
        let vars = self.build_forward(&mut tape, window, calendar, ForwardOpts::default())?;
        Ok(self.take_forecast(&tape, vars.prediction))
    }

    /// Degraded-attention forward per the BadCausIn wiring. Errors unless
    /// the model was built as that variant.
    pub fn bad_causal_forward(&self, window: &Tensor, calendar: &CalendarInfo) -> Result<Forecast> {
        if self.config.variant != Variant::BadCausIn {
            return input_err(format!(
                "bad_causal_forward requires the gt-badcausin variant, model is {}",
                self.config.variant
            ));
        }
        let opts = ForwardOpts {
            attention: AttentionMode::ForceDegraded,
            ..ForwardOpts::default()
        };
        let mut tape = Tape::new();
        let vars = self.build_forward(&mut tape, window, calendar, opts)?;
        Ok(self.take_forecast(&tape, vars.prediction))
    }

    /// Forward pass on a caller-owned tape; returns the de-normalized
    /// prediction so training can attach a loss to it.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        window: &Tensor,
        calendar: &CalendarInfo,
    ) -> Result<Var> {
        let vars = self.build_forward(tape, window, calendar, ForwardOpts::default())?;
        Ok(vars.prediction)
    }

    /// Forward with the attention stage replaced by an identity
    /// pass-through. Wiring diagnostic: with matching trunk parameters this
    /// must equal the no-attention variant exactly.
    pub fn forward_bypassing_attention(
        &self,
        window: &Tensor,
        calendar: &CalendarInfo,
    ) -> Result<Forecast> {
        let opts = ForwardOpts {
            attention: AttentionMode::Bypass,
            ..ForwardOpts::default()
        };
        let mut tape = Tape::new();
        let vars = self.build_forward(&mut tape, window, calendar, opts)?;
        Ok(self.take_forecast(&tape, vars.prediction))
    }

    /// Forward with one skip stream zeroed before the merge. Diagnostic for
    /// skip completeness.
    pub fn forward_dropping_skip(
        &self,
        window: &Tensor,
        calendar: &CalendarInfo,
        drop: usize,
    ) -> Result<Forecast> {
        if drop >= self.config.num_blocks {
            return input_err(format!(
                "skip {drop} out of range, model has {} blocks",
                self.config.num_blocks
            ));
        }
        let opts = ForwardOpts {
            drop_skip: Some(drop),
            ..ForwardOpts::default()
        };
        let mut tape = Tape::new();
        let vars = self.build_forward(&mut tape, window, calendar, opts)?;
        Ok(self.take_forecast(&tape, vars.prediction))
    }

    /// Forward pass that keeps every intermediate stream.
    pub fn trace(&self, window: &Tensor, calendar: &CalendarInfo) -> Result<ModelTrace> {
        let mut tape = Tape::new();
        let vars = self.build_forward(&mut tape, window, calendar, ForwardOpts::default())?;
        Ok(ModelTrace {
            trunk_input: tape.value(vars.trunk_input).clone(),
            skips: vars.skips.iter().map(|&s| tape.value(s).clone()).collect(),
            merged: tape.value(vars.merged).clone(),
            normalized: tape.value(vars.normalized).clone(),
            forecast: self.take_forecast(&tape, vars.prediction),
        })
    }

    /// Runs only the block stack on a given N×2×T′ trunk stream, returning
    /// the raw skip outputs. Used to probe temporal causality downstream of
    /// the attention stage.
    pub fn run_trunk(&self, trunk: &Tensor) -> Result<Vec<Tensor>> {
        let n = self.graph.node_count();
        if trunk.shape() != [n, 2, self.config.input_window] {
            return input_err(format!(
                "trunk stream shape {:?} does not match {n}×2×{}",
                trunk.shape(),
                self.config.input_window
            ));
        }
        let mut tape = Tape::new();
        let mut stream = tape.constant(trunk.clone());
        let mut skips = Vec::with_capacity(self.config.num_blocks);
        for l in 0..self.config.num_blocks {
            let theta_d = tape.param(&self.store, &format!("block{l}/diffusion/theta"))?;
            let diffused = tape.diffusion(stream, theta_d, &self.walks)?;
            let theta_t = tape.param(&self.store, &format!("block{l}/tcn/theta"))?;
            let block_out = tape.dilated_conv(diffused, theta_t, 1 << l)?;
            skips.push(tape.value(block_out).clone());
            stream = if l == 0 {
                let w1 = tape.param(&self.store, "post_block0/fc1/w")?;
                let b1 = tape.param(&self.store, "post_block0/fc1/b")?;
                let h = tape.channel_dense(block_out, w1)?;
                let h = tape.add_channel_bias(h, b1)?;
                let h = tape.relu(h)?;
                let w2 = tape.param(&self.store, "post_block0/fc2/w")?;
                let b2 = tape.param(&self.store, "post_block0/fc2/b")?;
                let h = tape.channel_dense(h, w2)?;
                tape.add_channel_bias(h, b2)?
            } else {
                block_out
            };
        }
        Ok(skips)
    }

    /// Attention weights for one station's query tokens. Errors for the
    /// no-attention variant.
    pub fn attention_view(&self, window: &Tensor, station: usize) -> Result<AttentionView> {
        let layer = self
            .causal
            .as_ref()
            .ok_or_else(|| Error::Input("this variant holds no attention parameters".into()))?;
        let n = self.graph.node_count();
        if window.shape() != [n, 1, self.config.input_window] {
            return input_err(format!(
                "window shape {:?} does not match {n}×1×{}",
                window.shape(),
                self.config.input_window
            ));
        }
        let speeds = window.reshaped(&[n, self.config.input_window])?;
        let x_cat = self.with_variation(&speeds)?;
        let (i1, o1) = match self.config.variant {
            Variant::BadCausIn => (x_cat.clone(), x_cat.clone()),
            _ => (
                tensor::matmul(&self.transitions.t_i1, &x_cat)?,
                tensor::matmul(&self.transitions.t_o1, &x_cat)?,
            ),
        };
        layer.extract_attention_scores(
            &self.store,
            &x_cat,
            &i1,
            &o1,
            self.graph.node_ids(),
            station,
        )
    }

    fn take_forecast(&self, tape: &Tape, prediction: Var) -> Forecast {
        Forecast {
            values: tape.value(prediction).clone(),
            horizons: self.config.eval_horizons.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            norm_stats: self.norm_stats,
            node_ids: self.graph.node_ids().to_vec(),
            params: self.store.clone(),
        }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint, graph: SensorGraph) -> Result<Self> {
        if checkpoint.format_version != CHECKPOINT_VERSION {
            return input_err(format!(
                "checkpoint format {} unsupported, expected {CHECKPOINT_VERSION}",
                checkpoint.format_version
            ));
        }
        if checkpoint.node_ids != graph.node_ids() {
            return input_err("checkpoint node ids do not match the graph");
        }
        let mut model = Model::build(checkpoint.config, graph, checkpoint.norm_stats)?;
        model.load_params(checkpoint.params)?;
        Ok(model)
    }

    /// Replaces the parameter values, requiring the exact expected tree.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        if params.len() != self.store.len() {
            return input_err(format!(
                "parameter tree has {} entries, model expects {}",
                params.len(),
                self.store.len()
            ));
        }
        for (name, entry) in params.iter() {
            let expected = self.store.value(name)?;
            if expected.shape() != entry.value.shape() {
                return input_err(format!(
                    "parameter {name:?} has shape {:?}, model expects {:?}",
                    entry.value.shape(),
                    expected.shape()
                ));
            }
        }
        self.store = params;
        Ok(())
    }
}

/// Serializable snapshot: parameter values plus the header needed to
/// rebuild and run the model (config, normalization stats, node order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub norm_stats: NormStats,
    pub node_ids: Vec<String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}
