//! Parameter initialisation and the ReInit variance-rescaling pass.
//!
//! The standard scheme draws GCN weights from Kaiming-normal and pool
//! projections and dense layers from Glorot-uniform. ReInit then walks the
//! GCN and pool units in network order, measures the standard deviation of
//! each unit's output over a calibration set, and divides it out so every
//! unit emits unit-variance activations.

use std::borrow::Borrow;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::Graph;
use crate::models::Model;
use crate::numcore::{pooled_stats, rng_normal, rng_uniform, Matrix, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Standard,
    StandardThenReinit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
    /// Maximum number of training graphs used for calibration; `None`
    /// uses the whole training fold.
    pub reinit_sample_cap: Option<usize>,
}

impl Default for InitScheme {
    fn default() -> Self {
        Self {
            kind: InitKind::Standard,
            seed: 0,
            reinit_sample_cap: None,
        }
    }
}

impl InitScheme {
    pub fn uses_reinit(&self) -> bool {
        self.kind == InitKind::StandardThenReinit
    }
}

/// Divisors and post-rescale standard deviations, one entry per unit
/// (`gcn1`, `pool1`, `gcn2`, ...), in network order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinitReport {
    pub units: Vec<String>,
    pub divisors: Vec<f64>,
    pub post_std: Vec<f64>,
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn reset_scales<S: Scalar>(model: &mut Model<S>) {
    for block in &mut model.blocks {
        block.gcn.scale = S::one();
        if let Some(pool) = &mut block.pool {
            pool.scale = S::one();
        }
    }
}

fn init_pools_and_head<S: Scalar>(model: &mut Model<S>, rng: &mut Rng) {
    for block in &mut model.blocks {
        if let Some(pool) = &mut block.pool {
            let f = pool.dim();
            pool.p = rng_uniform(rng, f, 1, glorot_bound(f, 1));
        }
    }
    for layer in &mut model.mlp {
        let (fan_in, fan_out) = layer.weight.shape();
        layer.weight = rng_uniform(rng, fan_in, fan_out, glorot_bound(fan_in, fan_out));
        layer.bias = Matrix::zeros(1, fan_out);
    }
}

/// Kaiming-normal `N(0, 2 / fan_in)` GCN weights, Glorot-uniform pool
/// projections and dense weights, zero biases, unit scale divisors.
pub fn init_standard<S: Scalar>(model: &mut Model<S>, rng: &mut Rng) {
    for block in &mut model.blocks {
        let (fan_in, fan_out) = block.gcn.weight.shape();
        block.gcn.weight = rng_normal(rng, fan_in, fan_out, (2.0 / fan_in as f64).sqrt());
        block.gcn.bias = Matrix::zeros(1, fan_out);
    }
    init_pools_and_head(model, rng);
    reset_scales(model);
}

/// Glorot-uniform for every weight, including the GCN layers.
pub fn init_glorot<S: Scalar>(model: &mut Model<S>, rng: &mut Rng) {
    for block in &mut model.blocks {
        let (fan_in, fan_out) = block.gcn.weight.shape();
        block.gcn.weight = rng_uniform(rng, fan_in, fan_out, glorot_bound(fan_in, fan_out));
        block.gcn.bias = Matrix::zeros(1, fan_out);
    }
    init_pools_and_head(model, rng);
    reset_scales(model);
}

fn unit_ids<S: Scalar>(model: &Model<S>) -> Vec<(usize, bool, String)> {
    let mut ids = Vec::new();
    for (b, block) in model.blocks().iter().enumerate() {
        ids.push((b, false, format!("gcn{}", b + 1)));
        if block.pool.is_some() {
            ids.push((b, true, format!("pool{}", b + 1)));
        }
    }
    ids
}

/// Runs every calibration graph and collects the output of each unit.
fn collect_outputs<S: Scalar, G: Borrow<Graph<S>>>(
    model: &mut Model<S>,
    calibration: &[G],
) -> Result<Vec<Vec<Matrix<S>>>> {
    let units = unit_ids(model).len();
    let mut outputs = vec![Vec::with_capacity(calibration.len()); units];
    for g in calibration {
        model.forward(g.borrow())?;
        for (slot, unit) in outputs.iter_mut().zip(model.unit_outputs()) {
            slot.push(unit.output.clone());
        }
    }
    Ok(outputs)
}

fn unit_std<S: Scalar, G: Borrow<Graph<S>>>(
    model: &mut Model<S>,
    calibration: &[G],
    unit: usize,
) -> Result<f64> {
    let mut outs = Vec::with_capacity(calibration.len());
    for g in calibration {
        model.forward(g.borrow())?;
        outs.push(model.unit_outputs().swap_remove(unit).output.clone());
    }
    Ok(pooled_stats(outs.iter())?.1.to_f64_lossy())
}

/// Rescales each GCN and pool unit in turn so its output has unit
/// standard deviation over `calibration`. GCN divisors are folded into the
/// weight and bias; pool divisors multiply the pool's scale. The MLP head
/// is left untouched.
pub fn reinit<S: Scalar, G: Borrow<Graph<S>>>(
    model: &mut Model<S>,
    calibration: &[G],
) -> Result<ReinitReport> {
    if calibration.is_empty() {
        return Err(Error::Domain(
            "reinit needs at least one calibration graph".into(),
        ));
    }
    let ids = unit_ids(model);
    let mut divisors = Vec::with_capacity(ids.len());
    for (u, (block, is_pool, id)) in ids.iter().enumerate() {
        let sigma = unit_std(model, calibration, u)?;
        if sigma == 0.0 {
            return Err(Error::DegenerateCalibration { block: id.clone() });
        }
        if !sigma.is_finite() {
            return Err(Error::Domain(format!("non-finite output std in {id}")));
        }
        debug!("reinit {id}: sigma = {sigma:.6e}");
        let c = S::of(sigma);
        let b = &mut model.blocks[*block];
        if *is_pool {
            let pool = b.pool.as_mut().expect("unit list matches blocks");
            pool.scale *= c;
        } else {
            let inv = c.recip();
            b.gcn.weight.scale_in_place(inv);
            b.gcn.bias.scale_in_place(inv);
        }
        divisors.push(sigma);
    }

    let outputs = collect_outputs(model, calibration)?;
    let post_std = outputs
        .iter()
        .map(|outs| pooled_stats(outs.iter()).map(|(_, s)| s.to_f64_lossy()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReinitReport {
        units: ids.into_iter().map(|(_, _, id)| id).collect(),
        divisors,
        post_std,
    })
}

/// Output standard deviation of every GCN and pool unit over `graphs`,
/// in network order.
pub fn unit_stds<S: Scalar, G: Borrow<Graph<S>>>(
    model: &mut Model<S>,
    graphs: &[G],
) -> Result<Vec<f64>> {
    collect_outputs(model, graphs)?
        .iter()
        .map(|outs| pooled_stats(outs.iter()).map(|(_, s)| s.to_f64_lossy()))
        .collect()
}
