//! Seeded synthetic fixtures: a directed ring-with-chords sensor graph, a
//! smooth low-noise dataset for overfit probes, and a planted neighbor-lag
//! process whose future depends on lagged in/out-neighbor speeds.

use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{assign_splits, SpeedDataset};
use crate::error::{input_err, Result};
use crate::graph::{build_adjacency_for, build_transitions, DistanceRecord, SensorGraph};
use crate::tensor::Tensor;

/// Kernel bandwidth used for all synthetic graphs.
pub const SIGMA: f64 = 5.0;
/// Distance cutoff used for all synthetic graphs.
pub const KAPPA: f64 = 10.0;

/// 5-minute rows starting on a Monday, so weekday/weekend history both
/// exist once the series spans more than a week.
pub const SPACING_SECS: i64 = 300;

fn node_id(i: usize) -> String {
    format!("s{i:03}")
}

pub fn node_ids(n: usize) -> Vec<String> {
    (0..n).map(node_id).collect()
}

fn base_timestamp() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 1, 2)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

pub fn timestamps(steps: usize) -> Vec<NaiveDateTime> {
    let t0 = base_timestamp();
    (0..steps)
        .map(|i| t0 + Duration::seconds(SPACING_SECS * i as i64))
        .collect()
}

/// Directed ring `i -> i+1` plus `chords` extra random directed edges,
/// all with costs inside the kernel cutoff.
pub fn ring_distances(n: usize, chords: usize, seed: u64) -> Result<Vec<DistanceRecord>> {
    if n < 3 {
        return input_err(format!("ring needs at least 3 nodes, got {n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n + chords);
    let mut taken: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        records.push(DistanceRecord {
            from: node_id(i),
            to: node_id(j),
            cost: rng.gen_range(3.0..7.0),
        });
        taken.push((i, j));
    }
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && !taken.contains(&(i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    for &(i, j) in pairs.iter().take(chords) {
        records.push(DistanceRecord {
            from: node_id(i),
            to: node_id(j),
            cost: rng.gen_range(4.0..8.0),
        });
    }
    Ok(records)
}

pub fn ring_graph(n: usize, chords: usize, seed: u64) -> Result<SensorGraph> {
    let records = ring_distances(n, chords, seed)?;
    build_adjacency_for(&node_ids(n), &records, SIGMA, KAPPA)
}

pub fn write_distance_csv(records: &[DistanceRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["from", "to", "cost"])?;
    for r in records {
        w.write_record([r.from.as_str(), r.to.as_str(), &format!("{}", r.cost)])?;
    }
    w.flush()?;
    Ok(())
}

fn finish_dataset(speeds: Vec<f64>, steps: usize, n: usize) -> Result<SpeedDataset> {
    let mut ds = SpeedDataset {
        timestamps: timestamps(steps),
        node_ids: node_ids(n),
        speeds: Tensor::new(&[steps, n], speeds)?,
        observed: vec![true; steps * n],
        unit: "mph".into(),
        zero_is_missing: false,
        norm_stats: None,
        split: None,
    };
    assign_splits(&mut ds)?;
    Ok(ds)
}

/// Smooth per-node daily and hourly harmonics with faint noise. Meant to
/// be memorized: a capable model should drive training error far below
/// the signal's standard deviation.
pub fn smooth_dataset(nodes: usize, steps: usize, seed: u64) -> Result<SpeedDataset> {
    if nodes == 0 || steps < 20 {
        return input_err("smooth dataset needs nodes >= 1 and steps >= 20");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = (86_400 / SPACING_SECS) as f64;
    let nodes_spec: Vec<(f64, f64, f64, f64, f64)> = (0..nodes)
        .map(|_| {
            (
                rng.gen_range(45.0..65.0),                 // base
                rng.gen_range(8.0..12.0),                  // daily amplitude
                rng.gen_range(0.0..std::f64::consts::TAU), // daily phase
                rng.gen_range(2.0..4.0),                   // hourly amplitude
                rng.gen_range(0.0..std::f64::consts::TAU), // hourly phase
            )
        })
        .collect();
    let per_hour = per_day / 24.0;
    let mut speeds = Vec::with_capacity(steps * nodes);
    for t in 0..steps {
        for &(base, a1, p1, a2, p2) in &nodes_spec {
            let day = (std::f64::consts::TAU * t as f64 / per_day + p1).sin();
            let hour = (std::f64::consts::TAU * t as f64 / per_hour + p2).sin();
            let eps = rng.gen_range(-1.0..1.0);
            speeds.push(base + a1 * day + a2 * hour + 0.2 * eps);
        }
    }
    finish_dataset(speeds, steps, nodes)
}

/// Linear process the planted benchmarks run on. Each node's next speed
/// deviation pulls on its own past and on transition-weighted lagged
/// neighbor deviations; innovations are spatially mixed one hop so
/// adjacent nodes co-move at the same timestamp.
#[derive(Clone, Copy, Debug)]
pub struct PlantedParams {
    pub steps: usize,
    pub self_decay: f64,
    pub in_coupling: f64,
    pub out_coupling: f64,
    /// Fraction of a node's innovation borrowed from its 1-hop neighbors.
    pub spatial_mix: f64,
    pub noise: f64,
    pub seasonal_amp: f64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        PlantedParams {
            steps: 1440,
            self_decay: 0.45,
            in_coupling: 0.3,
            out_coupling: 0.15,
            spatial_mix: 0.6,
            noise: 1.2,
            seasonal_amp: 5.0,
        }
    }
}

impl PlantedParams {
    fn validate(&self) -> Result<()> {
        if self.steps < 40 {
            return input_err(format!(
                "planted process needs steps >= 40, got {}",
                self.steps
            ));
        }
        for (name, v) in [
            ("self_decay", self.self_decay),
            ("in_coupling", self.in_coupling),
            ("out_coupling", self.out_coupling),
            ("spatial_mix", self.spatial_mix),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return input_err(format!("{name} must be a nonnegative real, got {v}"));
            }
        }
        // Row sums of the lag-1 map are bounded by this total; below 1 the
        // process stays stationary.
        let total = self.self_decay + self.in_coupling + self.out_coupling;
        if total >= 1.0 {
            return input_err(format!(
                "self_decay + in_coupling + out_coupling must stay below 1 for stability, got {total}"
            ));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return input_err(format!("noise must be positive, got {}", self.noise));
        }
        if !(self.seasonal_amp >= 0.0 && self.seasonal_amp.is_finite()) {
            return input_err(format!(
                "seasonal_amp must be nonnegative, got {}",
                self.seasonal_amp
            ));
        }
        Ok(())
    }
}

pub fn planted_lag_dataset(
    graph: &SensorGraph,
    params: &PlantedParams,
    seed: u64,
) -> Result<SpeedDataset> {
    params.validate()?;
    let n = graph.node_count();
    let trans = build_transitions(graph)?;
    let (t_in, t_out) = (&trans.t_i1, &trans.t_o1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = (86_400 / SPACING_SECS) as f64;
    let bases: Vec<f64> = (0..n).map(|_| rng.gen_range(48.0..62.0)).collect();

    let mut y = vec![0.0f64; n];
    let mut speeds = Vec::with_capacity(params.steps * n);
    let mut eps = vec![0.0f64; n];
    for t in 0..params.steps {
        for e in eps.iter_mut() {
            *e = params.noise * rng.gen_range(-1.0f64..1.0);
        }
        let mut next = vec![0.0f64; n];
        for i in 0..n {
            let mut pulled_in = 0.0;
            let mut pulled_out = 0.0;
            let mut mixed = 0.0;
            for j in 0..n {
                pulled_in += t_in.at2(i, j) * y[j];
                pulled_out += t_out.at2(i, j) * y[j];
                mixed += 0.5 * (t_in.at2(i, j) + t_out.at2(i, j)) * eps[j];
            }
            next[i] = params.self_decay * y[i]
                + params.in_coupling * pulled_in
                + params.out_coupling * pulled_out
                + eps[i]
                + params.spatial_mix * mixed;
        }
        y = next;
        let season = params.seasonal_amp * (std::f64::consts::TAU * t as f64 / per_day).sin();
        for i in 0..n {
            speeds.push((bases[i] + season + y[i]).max(1.0));
        }
    }
    finish_dataset(speeds, params.steps, n)
}
