//! Speed data ingestion: CSV loading, 5-minute aggregation, chronological
//! splitting, training-split normalization stats, gap interpolation,
//! supervised window cutting, and the calendar features attached to each
//! window.

use crate::error::{data_err, input_err, Error, Result};
use crate::tensor::Tensor;
use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};
use std::path::Path;

const WINDOW_SECS: i64 = 300;
const SECS_PER_DAY: i64 = 86_400;

/// Global z-score statistics, computed over observed training entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Chronological split boundaries: train ends at `train_end`, validation
/// at `val_end`, test runs to the end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train_end: usize,
    pub val_end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => input_err(format!("unknown split {other:?}, want train|val|test")),
        }
    }
}

/// Speed recordings on a uniform time grid, with an observation mask.
/// `speeds` is T×N with zeros at unobserved entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedDataset {
    pub timestamps: Vec<NaiveDateTime>,
    pub node_ids: Vec<String>,
    pub speeds: Tensor,
    pub observed: Vec<bool>,
    pub unit: String,
    pub zero_is_missing: bool,
    pub norm_stats: Option<NormStats>,
    pub split: Option<SplitIndices>,
}

impl SpeedDataset {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn speed_at(&self, t: usize, n: usize) -> f64 {
        self.speeds.at2(t, n)
    }

    pub fn is_observed(&self, t: usize, n: usize) -> bool {
        self.observed[t * self.node_count() + n]
    }

    /// Seconds between consecutive grid points; requires a uniform grid.
    pub fn spacing_secs(&self) -> Result<i64> {
        if self.timestamps.len() < 2 {
            return data_err("need at least two timestamps to derive spacing");
        }
        let d = (self.timestamps[1] - self.timestamps[0]).num_seconds();
        if d <= 0 {
            return data_err("timestamps are not strictly increasing");
        }
        for w in self.timestamps.windows(2) {
            if (w[1] - w[0]).num_seconds() != d {
                return data_err(format!(
                    "irregular spacing: {} then {}",
                    d,
                    (w[1] - w[0]).num_seconds()
                ));
            }
        }
        Ok(d)
    }

    pub fn stats(&self) -> Result<&NormStats> {
        self.norm_stats
            .as_ref()
            .ok_or_else(|| Error::Input("dataset has no normalization stats yet".into()))
    }

    pub fn splits(&self) -> Result<SplitIndices> {
        self.split
            .ok_or_else(|| Error::Input("dataset has no split boundaries yet".into()))
    }

    /// Row range [start, end) covered by a split.
    pub fn segment(&self, split: Split) -> Result<(usize, usize)> {
        let s = self.splits()?;
        Ok(match split {
            Split::Train => (0, s.train_end),
            Split::Val => (s.train_end, s.val_end),
            Split::Test => (s.val_end, self.len()),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ds: SpeedDataset = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ds.speeds.shape() != [ds.timestamps.len(), ds.node_ids.len()]
            || ds.observed.len() != ds.speeds.len()
        {
            return data_err("dataset file is internally inconsistent");
        }
        Ok(ds)
    }
}

fn parse_timestamp(raw: &str) -> Result<NaiveDateTime> {
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(raw.trim(), fmt) {
            return Ok(ts);
        }
    }
    data_err(format!("cannot parse timestamp {raw:?}"))
}

/// Loads a speed table: first column a timestamp, one column per sensor.
/// Empty cells are missing; literal zeros are missing too when
/// `zero_is_missing` is set.
pub fn load_speed_csv(path: &Path, zero_is_missing: bool, unit: &str) -> Result<SpeedDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return data_err("speed file needs a timestamp column and at least one sensor");
    }
    let node_ids: Vec<String> = headers
        .iter()
        .skip(1)
        .map(|h| h.trim().to_string())
        .collect();
    let n = node_ids.len();
    let mut timestamps = Vec::new();
    let mut speeds = Vec::new();
    let mut observed = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != n + 1 {
            return data_err(format!(
                "row {} has {} fields, want {}",
                line + 2,
                row.len(),
                n + 1
            ));
        }
        let ts = parse_timestamp(&row[0])?;
        if let Some(last) = timestamps.last() {
            if ts == *last {
                return data_err(format!("duplicate timestamp {ts}"));
            }
            if ts < *last {
                return data_err(format!("timestamps not increasing at {ts}"));
            }
        }
        timestamps.push(ts);
        for cell in row.iter().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                speeds.push(0.0);
                observed.push(false);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("row {}: bad speed {cell:?}", line + 2)))?;
            if !v.is_finite() || v < 0.0 {
                return data_err(format!("row {}: speed {v} out of range", line + 2));
            }
            if v == 0.0 && zero_is_missing {
                speeds.push(0.0);
                observed.push(false);
            } else {
                speeds.push(v);
                observed.push(true);
            }
        }
    }
    if timestamps.is_empty() {
        return data_err("speed file has no data rows");
    }
    Ok(SpeedDataset {
        speeds: Tensor::new(&[timestamps.len(), n], speeds)?,
        timestamps,
        node_ids,
        observed,
        unit: unit.to_string(),
        zero_is_missing,
        norm_stats: None,
        split: None,
    })
}

/// Writes the dataset back out in the same CSV layout; missing entries
/// become empty cells.
pub fn save_speed_csv(ds: &SpeedDataset, path: &Path) -> Result<()> {
    let mut out = String::from("timestamp");
    for id in &ds.node_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (t, ts) in ds.timestamps.iter().enumerate() {
        out.push_str(&ts.format("%Y-%m-%dT%H:%M:%S").to_string());
        for node in 0..ds.node_count() {
            out.push(',');
            if ds.is_observed(t, node) {
                out.push_str(&format!("{}", ds.speed_at(t, node)));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Aggregates a finer uniform grid into 5-minute means of the observed
/// readings; windows with no observations stay missing. A dataset already
/// on the 5-minute grid passes through unchanged.
pub fn aggregate_5min(ds: &SpeedDataset) -> Result<SpeedDataset> {
    let spacing = ds.spacing_secs()?;
    if WINDOW_SECS % spacing != 0 {
        return Err(Error::Input(format!(
            "raw spacing {spacing}s does not divide {WINDOW_SECS}s"
        )));
    }
    let k = (WINDOW_SECS / spacing) as usize;
    if k == 1 {
        return Ok(ds.clone());
    }
    let n = ds.node_count();
    let windows = ds.len() / k;
    if windows == 0 {
        return data_err("not enough rows for a single 5-minute window");
    }
    let mut speeds = Vec::with_capacity(windows * n);
    let mut observed = Vec::with_capacity(windows * n);
    let mut timestamps = Vec::with_capacity(windows);
    for w in 0..windows {
        timestamps.push(ds.timestamps[w * k]);
        for node in 0..n {
            let mut sum = 0.0;
            let mut count = 0;
            for i in 0..k {
                let t = w * k + i;
                if ds.is_observed(t, node) {
                    sum += ds.speed_at(t, node);
                    count += 1;
                }
            }
            if count > 0 {
                speeds.push(sum / count as f64);
                observed.push(true);
            } else {
                speeds.push(0.0);
                observed.push(false);
            }
        }
    }
    Ok(SpeedDataset {
        speeds: Tensor::new(&[windows, n], speeds)?,
        timestamps,
        node_ids: ds.node_ids.clone(),
        observed,
        unit: ds.unit.clone(),
        zero_is_missing: ds.zero_is_missing,
        norm_stats: None,
        split: None,
    })
}

/// Fixes chronological split boundaries (80% train, 10% validation, 10%
/// test) and computes normalization stats over the observed training
/// entries.
pub fn assign_splits(ds: &mut SpeedDataset) -> Result<()> {
    let t = ds.len();
    let train_end = (0.8 * t as f64).round() as usize;
    let val_end = (0.9 * t as f64).round() as usize;
    if train_end == 0 || val_end <= train_end || val_end >= t {
        return data_err(format!("dataset too short to split: {t} rows"));
    }
    let n = ds.node_count();
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..train_end {
        for node in 0..n {
            if ds.is_observed(t, node) {
                sum += ds.speed_at(t, node);
                count += 1;
            }
        }
    }
    if count == 0 {
        return data_err("training split has no observed entries");
    }
    let mean = sum / count as f64;
    let mut var = 0.0;
    for t in 0..train_end {
        for node in 0..n {
            if ds.is_observed(t, node) {
                let d = ds.speed_at(t, node) - mean;
                var += d * d;
            }
        }
    }
    let std = (var / count as f64).sqrt();
    if std <= 0.0 {
        return data_err("training split is constant; cannot normalize");
    }
    ds.split = Some(SplitIndices { train_end, val_end });
    ds.norm_stats = Some(NormStats { mean, std });
    Ok(())
}

/// Linearly interpolates gaps per sensor and nearest-fills the edges,
/// returning a dense T×N view plus warnings. Sensors with no observations
/// at all are filled with the training mean.
pub fn interpolate_training(ds: &SpeedDataset) -> Result<(Tensor, Vec<String>)> {
    let (t_len, n) = (ds.len(), ds.node_count());
    let mut dense = ds.speeds.clone();
    let mut warnings = Vec::new();
    for node in 0..n {
        let observed_rows: Vec<usize> = (0..t_len).filter(|&t| ds.is_observed(t, node)).collect();
        if observed_rows.is_empty() {
            let fill = match &ds.norm_stats {
                Some(s) => s.mean,
                None => {
                    return Err(Error::Data(format!(
                        "sensor {} has no observations and no stats exist to fill it",
                        ds.node_ids[node]
                    )))
                }
            };
            warnings.push(format!(
                "sensor {} has no observations; filled with training mean {fill:.3}",
                ds.node_ids[node]
            ));
            for t in 0..t_len {
                dense.set2(t, node, fill);
            }
            continue;
        }
        // Leading edge.
        let first = observed_rows[0];
        for t in 0..first {
            let v = ds.speed_at(first, node);
            dense.set2(t, node, v);
        }
        // Interior gaps.
        for pair in observed_rows.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b - a <= 1 {
                continue;
            }
            let (va, vb) = (ds.speed_at(a, node), ds.speed_at(b, node));
            let span = (b - a) as f64;
            for t in a + 1..b {
                let frac = (t - a) as f64 / span;
                dense.set2(t, node, va + (vb - va) * frac);
            }
        }
        // Trailing edge.
        let last = *observed_rows.last().unwrap();
        for t in last + 1..t_len {
            let v = ds.speed_at(last, node);
            dense.set2(t, node, v);
        }
    }
    Ok((dense, warnings))
}

/// Per-window calendar context: the weekday and month of the first
/// forecast step plus per-node historic speed at that time of day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalendarInfo {
    /// Monday = 0 … Sunday = 6.
    pub day_of_week: usize,
    /// January = 0 … December = 11.
    pub month: usize,
    /// Raw-unit historic speed per node.
    pub historic: Vec<f64>,
    /// True where no prior record existed and the training mean was used.
    pub historic_fallback: Vec<bool>,
}

fn is_weekend(ts: &NaiveDateTime) -> bool {
    ts.weekday().num_days_from_monday() >= 5
}

/// Average speed at the same time of day over recent same-category days:
/// the 5 most recent prior weekdays for a weekday, the 2 most recent
/// prior weekend days for a weekend day. Missing readings are excluded
/// per node; a node with no readings at all falls back to the training
/// mean and is flagged.
pub fn historic_speed(ds: &SpeedDataset, t: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    if t >= ds.len() {
        return input_err(format!("timestamp index {t} out of range {}", ds.len()));
    }
    let stats = ds.stats()?;
    let spacing = ds.spacing_secs()?;
    if SECS_PER_DAY % spacing != 0 {
        return data_err(format!("spacing {spacing}s does not divide a day"));
    }
    let per_day = (SECS_PER_DAY / spacing) as usize;
    let weekend = is_weekend(&ds.timestamps[t]);
    let want = if weekend { 2 } else { 5 };
    let mut day_rows = Vec::with_capacity(want);
    let mut k = 1;
    while day_rows.len() < want {
        let Some(idx) = t.checked_sub(k * per_day) else {
            break;
        };
        if is_weekend(&ds.timestamps[idx]) == weekend {
            day_rows.push(idx);
        }
        k += 1;
    }
    let n = ds.node_count();
    let mut values = Vec::with_capacity(n);
    let mut fallback = Vec::with_capacity(n);
    for node in 0..n {
        let mut sum = 0.0;
        let mut count = 0;
        for &row in &day_rows {
            if ds.is_observed(row, node) {
                sum += ds.speed_at(row, node);
                count += 1;
            }
        }
        if count > 0 {
            values.push(sum / count as f64);
            fallback.push(false);
        } else {
            values.push(stats.mean);
            fallback.push(true);
        }
    }
    Ok((values, fallback))
}

/// One supervised example: a normalized input window, the raw target
/// window with its observation mask, and calendar context.
#[derive(Clone, Debug)]
pub struct WindowSample {
    /// N×1×`input_len`, z-scored.
    pub input: Tensor,
    /// N×1×`output_len`, raw units.
    pub target: Tensor,
    /// N×1×`output_len`, 1.0 where the target was observed.
    pub target_mask: Tensor,
    pub calendar: CalendarInfo,
    /// Dataset row of the first input step.
    pub start: usize,
}

/// Cuts stride-1 windows lying entirely inside one split. Inputs come
/// from the interpolated dense view; targets stay raw and masked.
pub fn make_windows(
    ds: &SpeedDataset,
    dense: &Tensor,
    split: Split,
    input_len: usize,
    output_len: usize,
) -> Result<(Vec<WindowSample>, Vec<String>)> {
    if dense.shape() != ds.speeds.shape() {
        return input_err(format!(
            "dense view {:?} does not match dataset {:?}",
            dense.shape(),
            ds.speeds.shape()
        ));
    }
    let stats = *ds.stats()?;
    let (seg_start, seg_end) = ds.segment(split)?;
    let total = input_len + output_len;
    let mut warnings = Vec::new();
    let seg_len = seg_end - seg_start;
    if seg_len < total {
        warnings.push(format!(
            "{} split has {seg_len} steps, fewer than the {total} needed per window",
            split.label()
        ));
        return Ok((Vec::new(), warnings));
    }
    let n = ds.node_count();
    let mut samples = Vec::with_capacity(seg_len - total + 1);
    for start in seg_start..=seg_end - total {
        let mut input = Vec::with_capacity(n * input_len);
        for node in 0..n {
            for t in start..start + input_len {
                input.push(stats.normalize(dense.at2(t, node)));
            }
        }
        let mut target = Vec::with_capacity(n * output_len);
        let mut mask = Vec::with_capacity(n * output_len);
        let target_start = start + input_len;
        for node in 0..n {
            for t in target_start..target_start + output_len {
                target.push(ds.speed_at(t, node));
                mask.push(if ds.is_observed(t, node) { 1.0 } else { 0.0 });
            }
        }
        let (historic, historic_fallback) = historic_speed(ds, target_start)?;
        let ts = &ds.timestamps[target_start];
        samples.push(WindowSample {
            input: Tensor::new(&[n, 1, input_len], input)?,
            target: Tensor::new(&[n, 1, output_len], target)?,
            target_mask: Tensor::new(&[n, 1, output_len], mask)?,
            calendar: CalendarInfo {
                day_of_week: ts.weekday().num_days_from_monday() as usize,
                month: ts.month0() as usize,
                historic,
                historic_fallback,
            },
            start,
        })
    }
    Ok((samples, warnings))
}
