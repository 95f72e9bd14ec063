//! Shared helpers for the integration suites: forward-only loss closures
//! and a central finite-difference oracle over the flat parameter vector.

use std::collections::BTreeSet;

use temn::fusion;
use temn::memnet::{self, Triple};
use temn::model::Model;
use temn::trainer::{total_loss, TrainConfig};
use temn::{geo, Result};

/// Sum of memory-network hinge losses over a batch (forward pass only).
pub fn loss_memnet(model: &Model, batch: &[Triple], margin: f64) -> Result<f64> {
    let mut total = 0.0;
    for t in batch {
        let act = memnet::score_pair(&model.memnet, &t.support, t.pos, t.neg)?;
        total += memnet::pair_loss(act.s_pos, act.s_neg, margin);
    }
    Ok(total)
}

/// Topic cross-entropy, once per unique user in the batch.
pub fn loss_fusion(model: &Model, batch: &[Triple]) -> Result<f64> {
    let users: BTreeSet<usize> = batch.iter().map(|t| t.user).collect();
    let mut total = 0.0;
    for u in users {
        let p_m = model.memory_embedding(u)?;
        let predicted = fusion::forward(&p_m, &model.fusion)?;
        total += fusion::ce_loss(model.tlda_posterior.theta.row(u), &predicted);
    }
    Ok(total)
}

/// Sum of geographic hinge losses over a batch.
pub fn loss_geo(model: &Model, batch: &[Triple], margin: f64) -> f64 {
    batch
        .iter()
        .map(|t| {
            let s_pos = geo::score(
                model.geo.user_pref[t.user],
                model.geo.poi_infl[t.pos],
                model.poi_distance(t.user, t.pos),
                model.geo.bias,
            );
            let s_neg = geo::score(
                model.geo.user_pref[t.user],
                model.geo.poi_infl[t.neg],
                model.poi_distance(t.user, t.neg),
                model.geo.bias,
            );
            geo::pair_loss(s_pos, s_neg, margin)
        })
        .sum()
}

/// The full weighted objective including the L2 term.
pub fn loss_total(model: &Model, batch: &[Triple], config: &TrainConfig) -> Result<f64> {
    Ok(total_loss(
        loss_memnet(model, batch, config.margin_m)?,
        loss_fusion(model, batch)?,
        loss_geo(model, batch, config.margin_g),
        model.trainable_sq_norm(),
        config,
    ))
}

/// Central finite difference of `f` with respect to flat parameter `idx`.
pub fn finite_difference(
    model: &Model,
    idx: usize,
    step: f64,
    f: impl Fn(&Model) -> f64,
) -> f64 {
    let flat = model.trainable_params();
    let mut plus = model.clone();
    let mut minus = model.clone();
    let mut flat_plus = flat.clone();
    flat_plus[idx] += step;
    plus.set_trainable_params(&flat_plus);
    let mut flat_minus = flat;
    flat_minus[idx] -= step;
    minus.set_trainable_params(&flat_minus);
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// Relative-error agreement with an absolute floor for near-zero pairs.
pub fn gradients_agree(analytic: f64, numeric: f64) -> bool {
    let denom = analytic.abs().max(numeric.abs());
    if denom > 1e-6 {
        (analytic - numeric).abs() / denom < 1e-4
    } else {
        (analytic - numeric).abs() < 1e-8
    }
}
