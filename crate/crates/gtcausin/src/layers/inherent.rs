//! Inherent periodic features: day-of-week and month one-hots plus a
//! historic-speed channel, embedded, concatenated with the merged trunk,
//! and fused by two dense layers into the forecast sequence.

use crate::autodiff::{Tape, Var};
use crate::error::{input_err, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use rand::Rng;

pub const DAYS_PER_WEEK: usize = 7;
pub const MONTHS_PER_YEAR: usize = 12;

/// 1×width one-hot row. Index conventions: Monday = 0, January = 0.
pub fn one_hot(index: usize, width: usize) -> Result<Tensor> {
    if index >= width {
        return input_err(format!("one-hot index {index} out of range {width}"));
    }
    let mut data = vec![0.0; width];
    data[index] = 1.0;
    Tensor::new(&[1, width], data)
}

/// Fusion head: embeds the calendar features, concatenates them with the
/// flattened merge output, and maps through two dense layers to one
/// output sequence per node.
#[derive(Clone, Debug)]
pub struct InherentLayer {
    pub prefix: String,
    /// Flattened merge width per node (channels × window length).
    pub merged_width: usize,
    pub embed_day: usize,
    pub embed_month: usize,
    pub embed_hist: usize,
    pub hidden: usize,
    /// Output sequence length per node.
    pub out_width: usize,
}

impl InherentLayer {
    fn path(&self, name: &str) -> String {
        format!("{}/{name}", self.prefix)
    }

    pub fn fused_width(&self) -> usize {
        self.merged_width + self.embed_day + self.embed_month + self.embed_hist
    }

    pub fn register<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.init_uniform(
            &self.path("embed_day"),
            &[DAYS_PER_WEEK, self.embed_day],
            DAYS_PER_WEEK,
            rng,
        )?;
        store.init_uniform(
            &self.path("embed_month"),
            &[MONTHS_PER_YEAR, self.embed_month],
            MONTHS_PER_YEAR,
            rng,
        )?;
        store.init_uniform(&self.path("embed_hist"), &[1, self.embed_hist], 1, rng)?;
        let fused = self.fused_width();
        store.init_uniform(&self.path("fuse1/w"), &[fused, self.hidden], fused, rng)?;
        store.insert(&self.path("fuse1/b"), Tensor::zeros(&[1, self.hidden]))?;
        store.init_uniform(
            &self.path("fuse2/w"),
            &[self.hidden, self.out_width],
            self.hidden,
            rng,
        )?;
        store.insert(&self.path("fuse2/b"), Tensor::zeros(&[1, self.out_width]))?;
        Ok(())
    }

    /// `merged` is the N×C×T trunk output; `historic` is the per-node
    /// historic speed in the same normalized units as the trunk input.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        merged: Var,
        day_of_week: usize,
        month: usize,
        historic: &Tensor,
    ) -> Result<Var> {
        let shape = tape.shape(merged).to_vec();
        if shape.len() != 3 || shape[1] * shape[2] != self.merged_width {
            return input_err(format!(
                "merged trunk {shape:?} does not flatten to width {}",
                self.merged_width
            ));
        }
        let n = shape[0];
        if historic.shape() != [n, 1] {
            return input_err(format!(
                "historic speed must be {n}×1, got {:?}",
                historic.shape()
            ));
        }
        let e_m = tape.reshape(merged, &[n, self.merged_width])?;

        let day = tape.constant(one_hot(day_of_week, DAYS_PER_WEEK)?);
        let w_day = tape.param(store, &self.path("embed_day"))?;
        let e_d_row = tape.matmul(day, w_day)?;
        let e_d = tape.broadcast_rows(e_d_row, n)?;

        let month_v = tape.constant(one_hot(month, MONTHS_PER_YEAR)?);
        let w_month = tape.param(store, &self.path("embed_month"))?;
        let e_mo_row = tape.matmul(month_v, w_month)?;
        let e_mo = tape.broadcast_rows(e_mo_row, n)?;

        let hist = tape.constant(historic.clone());
        let w_hist = tape.param(store, &self.path("embed_hist"))?;
        let e_h = tape.matmul(hist, w_hist)?;

        let fused = tape.concat_cols(&[e_m, e_d, e_mo, e_h])?;
        let w1 = tape.param(store, &self.path("fuse1/w"))?;
        let b1 = tape.param(store, &self.path("fuse1/b"))?;
        let h1 = tape.matmul(fused, w1)?;
        let h1 = tape.add_row(h1, b1)?;
        let h1 = tape.relu(h1)?;
        let w2 = tape.param(store, &self.path("fuse2/w"))?;
        let b2 = tape.param(store, &self.path("fuse2/b"))?;
        let out = tape.matmul(h1, w2)?;
        let out = tape.add_row(out, b2)?;
        tape.reshape(out, &[n, 1, self.out_width])
    }
}
