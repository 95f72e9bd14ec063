//! Joint training: composes the memory-network, topic-fusion and
//! geographic losses with configured weights, applies L2 regularisation
//! and runs seeded mini-batch SGD with per-epoch validation ranking.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{self, DatasetSplit, SequenceSet};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions};
use crate::fusion::{self, FusionGradients, FusionParams};
use crate::geo::{self, DistanceMode, GeoParams};
use crate::memnet::{self, MemNetGradients, MemNetParams, Triple};
use crate::model::Model;
use crate::sampling::{mix_seed_str, mix_seed_u64};
use crate::tlda::{self, TldaConfig, TldaModel};

/// Recommendation scenario. It selects the default loss/score weights and,
/// for the sequential case, the triple construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scenario {
    /// General: interactions only.
    #[default]
    Gpr,
    /// Context-aware: interactions plus spatio-temporal context.
    Cpr,
    /// Sequential: triples built from gap-segmented check-in sequences.
    Spr,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Gpr => "gpr",
            Self::Cpr => "cpr",
            Self::Spr => "spr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gpr" => Ok(Self::Gpr),
            "cpr" => Ok(Self::Cpr),
            "spr" => Ok(Self::Spr),
            other => Err(Error::Config(format!("unknown scenario: {other}"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    /// Hinge margin of the memory-network loss.
    pub margin_m: f64,
    /// Hinge margin of the geographic loss.
    pub margin_g: f64,
    /// Weight of the topic-fusion loss.
    pub weight_tau: f64,
    /// Weight of the geographic loss.
    pub weight_geo_loss: f64,
    /// Weight of the geographic score inside the combined score.
    pub weight_geo_score: f64,
    pub dim_d: usize,
    pub slots_h: usize,
    pub patterns_pi: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scenario: Scenario,
    pub distance_mode: DistanceMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_scenario(Scenario::Gpr)
    }
}

impl TrainConfig {
    /// Documented defaults; the loss/score weights depend on the scenario.
    pub fn for_scenario(scenario: Scenario) -> Self {
        let (weight_tau, weight_geo_loss, weight_geo_score) = match scenario {
            Scenario::Gpr | Scenario::Cpr => (0.2, 0.1, 0.4),
            Scenario::Spr => (0.1, 0.4, 1.6),
        };
        Self {
            learning_rate: 0.005,
            l2_lambda: 0.0001,
            margin_m: 0.2,
            margin_g: 0.2,
            weight_tau,
            weight_geo_loss,
            weight_geo_score,
            dim_d: 50,
            slots_h: 10,
            patterns_pi: 10,
            epochs: 30,
            batch_size: 256,
            seed: 42,
            scenario,
            distance_mode: DistanceMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".to_string()));
        }
        if self.l2_lambda < 0.0
            || self.weight_tau < 0.0
            || self.weight_geo_loss < 0.0
            || self.weight_geo_score < 0.0
        {
            return Err(Error::Config("weights must be non-negative".to_string()));
        }
        if self.margin_m < 0.0 || self.margin_g < 0.0 {
            return Err(Error::Config("margins must be non-negative".to_string()));
        }
        if self.dim_d < 1 || self.slots_h < 1 || self.patterns_pi < 1 || self.batch_size < 1 {
            return Err(Error::Config("dimensions must be at least 1".to_string()));
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file mirroring the field names.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", line_no + 1))
            })?;
            self.apply_key(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value for {what}"));
        match key {
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key))?,
            "l2_lambda" => self.l2_lambda = value.parse().map_err(|_| bad(key))?,
            "margin_m" => self.margin_m = value.parse().map_err(|_| bad(key))?,
            "margin_g" => self.margin_g = value.parse().map_err(|_| bad(key))?,
            "weight_tau" => self.weight_tau = value.parse().map_err(|_| bad(key))?,
            "weight_geo_loss" => self.weight_geo_loss = value.parse().map_err(|_| bad(key))?,
            "weight_geo_score" => self.weight_geo_score = value.parse().map_err(|_| bad(key))?,
            "dim_d" => self.dim_d = value.parse().map_err(|_| bad(key))?,
            "slots_h" => self.slots_h = value.parse().map_err(|_| bad(key))?,
            "patterns_pi" => self.patterns_pi = value.parse().map_err(|_| bad(key))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "scenario" => self.scenario = Scenario::parse(value)?,
            "distance_mode" => self.distance_mode = DistanceMode::parse(value)?,
            other => return Err(Error::Config(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    /// The flat key-value rendering, one `key = value` line per field.
    pub fn render(&self) -> String {
        format!(
            "learning_rate = {}\nl2_lambda = {}\nmargin_m = {}\nmargin_g = {}\n\
             weight_tau = {}\nweight_geo_loss = {}\nweight_geo_score = {}\n\
             dim_d = {}\nslots_h = {}\npatterns_pi = {}\nepochs = {}\n\
             batch_size = {}\nseed = {}\nscenario = {}\ndistance_mode = {}\n",
            self.learning_rate,
            self.l2_lambda,
            self.margin_m,
            self.margin_g,
            self.weight_tau,
            self.weight_geo_loss,
            self.weight_geo_score,
            self.dim_d,
            self.slots_h,
            self.patterns_pi,
            self.epochs,
            self.batch_size,
            self.seed,
            self.scenario,
            self.distance_mode.as_str(),
        )
    }
}

/// Combined objective: `L_m + tau * L_tau + eps * L_sigma + lambda * |params|^2`.
pub fn total_loss(
    loss_m: f64,
    loss_tau: f64,
    loss_sigma: f64,
    params_sq_norm: f64,
    config: &TrainConfig,
) -> f64 {
    loss_m
        + config.weight_tau * loss_tau
        + config.weight_geo_loss * loss_sigma
        + config.l2_lambda * params_sq_norm
}

/// Gradient structure mirroring every trainable parameter of a [`Model`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub memnet: MemNetGradients,
    pub fusion: FusionGradients,
    pub geo_user_pref: Vec<f64>,
    pub geo_poi_infl: Vec<f64>,
    /// Always zero: the bias cancels in the pairwise loss and sits outside
    /// the regularised norm. Kept so the flat view covers every parameter.
    pub geo_bias: f64,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            memnet: MemNetGradients::zeros_like(&model.memnet),
            fusion: FusionGradients::zeros_like(&model.fusion),
            geo_user_pref: vec![0.0; model.geo.user_pref.len()],
            geo_poi_infl: vec![0.0; model.geo.poi_infl.len()],
            geo_bias: 0.0,
        }
    }

    /// Flat view in the same order as [`Model::trainable_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.memnet.poi_embeddings.as_slice());
        out.extend_from_slice(self.memnet.keys.as_slice());
        out.extend_from_slice(self.memnet.memory.as_slice());
        out.extend_from_slice(self.fusion.weight.as_slice());
        out.extend_from_slice(&self.fusion.bias);
        out.extend_from_slice(&self.geo_user_pref);
        out.extend_from_slice(&self.geo_poi_infl);
        out.push(self.geo_bias);
        out
    }
}

/// Unweighted component sums over one batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchLosses {
    pub memnet: f64,
    pub fusion: f64,
    pub geo: f64,
}

impl BatchLosses {
    /// Weighted data loss (no regularisation term).
    pub fn weighted(&self, config: &TrainConfig) -> f64 {
        total_loss(self.memnet, self.fusion, self.geo, 0.0, config)
    }
}

/// Data-loss gradients over a batch of triples: the pairwise
/// memory-network hinge and the geographic hinge per triple, plus the
/// topic cross-entropy once per unique user. Loss weights are already
/// folded into the gradients; the L2 term is not included here.
pub fn batch_gradients(
    model: &Model,
    batch: &[Triple],
    config: &TrainConfig,
) -> Result<(BatchLosses, Gradients)> {
    let mut grads = Gradients::zeros_like(model);
    let mut losses = BatchLosses::default();
    for triple in batch {
        losses.memnet += memnet::accumulate_gradients(
            &model.memnet,
            triple,
            config.margin_m,
            1.0,
            &mut grads.memnet,
        )?;
        let l_pos = model.poi_distance(triple.user, triple.pos);
        let l_neg = model.poi_distance(triple.user, triple.neg);
        let (geo_loss, geo_grads) = geo::pair_gradients(
            model.geo.user_pref[triple.user],
            model.geo.poi_infl[triple.pos],
            model.geo.poi_infl[triple.neg],
            l_pos,
            l_neg,
            model.geo.bias,
            config.margin_g,
            config.weight_geo_loss,
        );
        losses.geo += geo_loss;
        grads.geo_user_pref[triple.user] += geo_grads.d_user;
        grads.geo_poi_infl[triple.pos] += geo_grads.d_pos;
        grads.geo_poi_infl[triple.neg] += geo_grads.d_neg;
    }
    // Topic loss once per unique user, keyed on the user's full training
    // support so the input and the per-user target share one granularity.
    let users: BTreeSet<usize> = batch.iter().map(|t| t.user).collect();
    for &u in &users {
        let support = &model.user_support[u];
        let p_m = memnet::user_memory_embedding(support, &model.memnet)?;
        let target = model.tlda_posterior.theta.row(u);
        let (loss, d_pm) = fusion::accumulate_gradients(
            &model.fusion,
            &p_m,
            target,
            config.weight_tau,
            &mut grads.fusion,
        )?;
        losses.fusion += loss;
        let mean_scale = 1.0 / support.len() as f64;
        for &s in support {
            crate::linalg::add_scaled(grads.memnet.poi_embeddings.row_mut(s), &d_pm, mean_scale);
        }
    }
    Ok((losses, grads))
}

/// Add the gradient of `lambda * |params|^2` over every regularised
/// parameter: memory network, fusion layer and the geo sensitivities. The
/// geo bias sits outside the norm.
pub fn add_l2_gradients(model: &Model, config: &TrainConfig, grads: &mut Gradients) {
    let scale = 2.0 * config.l2_lambda;
    for (params, gs) in [
        (
            model.memnet.poi_embeddings.as_slice(),
            grads.memnet.poi_embeddings.as_mut_slice(),
        ),
        (model.memnet.keys.as_slice(), grads.memnet.keys.as_mut_slice()),
        (
            model.memnet.memory.as_slice(),
            grads.memnet.memory.as_mut_slice(),
        ),
        (
            model.fusion.weight.as_slice(),
            grads.fusion.weight.as_mut_slice(),
        ),
    ] {
        for (g, p) in gs.iter_mut().zip(params) {
            *g += scale * p;
        }
    }
    for (g, p) in grads.fusion.bias.iter_mut().zip(&model.fusion.bias) {
        *g += scale * p;
    }
    for (g, p) in grads.geo_user_pref.iter_mut().zip(&model.geo.user_pref) {
        *g += scale * p;
    }
    for (g, p) in grads.geo_poi_infl.iter_mut().zip(&model.geo.poi_infl) {
        *g += scale * p;
    }
}

/// Per-epoch training report.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean weighted data loss per triple (regularisation excluded).
    pub train_loss: f64,
    pub validation_ndcg10: f64,
}

/// A trained model plus its per-epoch history.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub history: Vec<EpochStats>,
}

/// Optional inputs to [`fit_with`].
#[derive(Default)]
pub struct FitOptions<'a> {
    /// Sequential-scenario segments; derived from the training split with
    /// the default gap threshold (one day, minimum length five) when absent.
    pub sequences: Option<&'a SequenceSet>,
    /// Pre-computed topic posterior. Must share the id space produced by
    /// `fit`: the sorted users of the split and the sorted POIs of the
    /// full universe.
    pub tlda: Option<&'a TldaModel>,
    /// Schedule for the internal topic sampler when `tlda` is absent.
    pub tlda_config: Option<TldaConfig>,
}

/// Train a model on a chronological split with default options.
///
/// The topic posterior is inferred from the training split first and then
/// frozen as the fusion target; per-user supports and centroids also come
/// from the training split only. After every epoch the validation split is
/// ranked under the sampled-negative protocol and the parameters with the
/// best validation NDCG@10 are returned.
pub fn fit(split: &DatasetSplit, config: &TrainConfig) -> Result<FitResult> {
    fit_with(split, &FitOptions::default(), config)
}

pub fn fit_with(
    split: &DatasetSplit,
    opts: &FitOptions,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Domain("training split is empty".to_string()));
    }

    let mut model = initialise_model(split, opts, config)?;
    let base_triples = build_triples(split, opts, &model, config)?;
    if config.epochs > 0 && base_triples.is_empty() {
        return Err(Error::Domain(
            "no training triples could be built".to_string(),
        ));
    }

    let full_interactions =
        corpus::build_interactions_all(&[&split.train, &split.validation, &split.test]);
    let mut history = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed_str(config.seed, "sgd"));
    let mut order: Vec<usize> = (0..base_triples.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let mut triple = base_triples[idx].clone();
                triple.neg =
                    sample_negative_dense(&model.user_support[triple.user], model.pois.len(), &mut rng)?;
                batch.push(triple);
            }
            let diverged = Error::Diverged {
                epoch,
                batch: batch_no,
            };
            // Dimensions and supports are valid by construction, so a
            // domain error here can only mean non-finite activations.
            let (losses, grads) = match batch_gradients(&model, &batch, config) {
                Ok(out) => out,
                Err(Error::Domain(_)) => return Err(diverged),
                Err(other) => return Err(other),
            };
            let weighted = losses.weighted(config);
            epoch_loss += weighted;
            apply_update(&mut model, &batch, &grads, config);
            if !weighted.is_finite() || !params_finite(&model) {
                return Err(diverged);
            }
        }
        let train_loss = epoch_loss / base_triples.len() as f64;
        let validation_ndcg10 = validation_ndcg(&model, split, &full_interactions, config)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            validation_ndcg10,
        });
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}, validation NDCG@10 {validation_ndcg10:.4}"
        );
        if best.as_ref().is_none_or(|(b, _)| validation_ndcg10 >= *b) {
            best = Some((validation_ndcg10, model.clone()));
        }
    }

    let model = best.map_or(model, |(_, m)| m);
    Ok(FitResult { model, history })
}

fn initialise_model(
    split: &DatasetSplit,
    opts: &FitOptions,
    config: &TrainConfig,
) -> Result<Model> {
    // One id space across all three parts: every POI can be scored, while
    // supports, centroids and the topic posterior come from training only.
    let logs = [&split.train, &split.validation, &split.test];
    let users: Vec<String> = split.train.users().map(str::to_string).collect();
    let mut poi_set: BTreeSet<String> = BTreeSet::new();
    for log in logs {
        poi_set.extend(log.pois().map(str::to_string));
    }
    let pois: Vec<String> = poi_set.into_iter().collect();
    let poi_index = |id: &str| -> Result<usize> {
        pois.binary_search_by(|p| p.as_str().cmp(id))
            .map_err(|_| Error::Lookup {
                kind: "poi",
                id: id.to_string(),
            })
    };

    // Distinct training POIs per user, as sorted dense indices.
    let mut user_support = Vec::with_capacity(users.len());
    for user in &users {
        let mut distinct: BTreeSet<usize> = BTreeSet::new();
        for rec in split.train.user_records(user) {
            distinct.insert(poi_index(&rec.poi)?);
        }
        user_support.push(distinct.into_iter().collect::<Vec<usize>>());
    }

    // Venue coordinates are static side information: average over every
    // record of the POI across the whole split.
    let mut coord_sums = vec![(0.0, 0.0, 0usize); pois.len()];
    for log in logs {
        for rec in log.records() {
            let idx = poi_index(&rec.poi)?;
            coord_sums[idx].0 += rec.lat;
            coord_sums[idx].1 += rec.lon;
            coord_sums[idx].2 += 1;
        }
    }
    let poi_coords: Vec<(f64, f64)> = coord_sums
        .into_iter()
        .map(|(lat, lon, n)| (lat / n as f64, lon / n as f64))
        .collect();

    // Activity centroids over distinct training POIs, frozen before SGD.
    let centroids = user_support
        .iter()
        .map(|support| {
            let coords: Vec<(f64, f64)> = support.iter().map(|&v| poi_coords[v]).collect();
            geo::user_centroid(&coords)
        })
        .collect::<Result<Vec<_>>>()?;

    // Topic posterior from the training split, frozen as the fusion target.
    let tlda_posterior = match opts.tlda {
        Some(m) => {
            if m.users != users || m.venues != pois {
                return Err(Error::Config(
                    "supplied topic posterior does not match the data id space".to_string(),
                ));
            }
            if m.config.num_patterns != config.patterns_pi {
                return Err(Error::Config(
                    "topic posterior pattern count differs from patterns_pi".to_string(),
                ));
            }
            m.posterior.clone()
        }
        None => {
            let tlda_config = opts.tlda_config.clone().unwrap_or_else(|| TldaConfig {
                seed: mix_seed_str(config.seed, "tlda"),
                ..TldaConfig::with_patterns(config.patterns_pi, 0)
            });
            if tlda_config.num_patterns != config.patterns_pi {
                return Err(Error::Config(
                    "topic sampler pattern count differs from patterns_pi".to_string(),
                ));
            }
            run_tlda(split, &users, &pois, &tlda_config)?.posterior
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed_str(config.seed, "init"));
    let init_scale = 0.05;
    let memnet = MemNetParams::init(pois.len(), config.dim_d, config.slots_h, init_scale, &mut rng);
    let fusion = FusionParams::init(config.patterns_pi, config.dim_d, init_scale, &mut rng);
    let geo = GeoParams::zeros(users.len(), pois.len());

    Ok(Model {
        config: config.clone(),
        users,
        pois,
        memnet,
        fusion,
        geo,
        tlda_posterior,
        centroids,
        poi_coords,
        user_support,
    })
}

/// Run the topic sampler on the training split against the model's id
/// space: tokens only cover training venues, but the venue vocabulary is
/// the full universe so the posterior aligns with the embedding table.
pub fn run_tlda(
    split: &DatasetSplit,
    users: &[String],
    pois: &[String],
    config: &TldaConfig,
) -> Result<TldaModel> {
    let tokens = tlda::tokenize(&split.train, users, pois, config)?;
    let mut state = tlda::gibbs_init(tokens, users.len(), pois.len(), config)?;
    for _ in 0..config.burn_in {
        state.sweep();
    }
    let mut acc: Option<tlda::TldaPosterior> = None;
    for _ in 0..config.samples {
        for _ in 0..config.lag {
            state.sweep();
        }
        let estimate = state.posterior_estimates();
        acc = Some(match acc {
            None => estimate,
            Some(mut a) => {
                for (dst, src) in [
                    (&mut a.theta, &estimate.theta),
                    (&mut a.varphi, &estimate.varphi),
                    (&mut a.phi, &estimate.phi),
                ] {
                    for (x, y) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                        *x += y;
                    }
                }
                a
            }
        });
    }
    let mut posterior = acc.expect("samples >= 1");
    let scale = 1.0 / config.samples as f64;
    for m in [&mut posterior.theta, &mut posterior.varphi, &mut posterior.phi] {
        m.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
    }
    Ok(TldaModel {
        posterior,
        users: users.to_vec(),
        venues: pois.to_vec(),
        config: config.clone(),
    })
}

/// Training triples without negatives (sampled fresh every epoch).
fn build_triples(
    split: &DatasetSplit,
    opts: &FitOptions,
    model: &Model,
    config: &TrainConfig,
) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    match config.scenario {
        Scenario::Gpr | Scenario::Cpr => {
            // One triple per distinct (user, visited POI) training pair.
            for (u, support) in model.user_support.iter().enumerate() {
                for &pos in support {
                    triples.push(Triple {
                        user: u,
                        support: support.clone(),
                        pos,
                        neg: usize::MAX,
                    });
                }
            }
        }
        Scenario::Spr => {
            // Prefix construction: the memory embedding at step t is the
            // mean over the segment positions before t.
            let owned;
            let sequences = match opts.sequences {
                Some(s) => s,
                None => {
                    owned = corpus::segment_sequences(&split.train, 86_400, 5)?;
                    &owned
                }
            };
            for (user, segments) in &sequences.sequences {
                let u = model.user_index(user)?;
                for segment in segments {
                    let ids: Vec<usize> = segment
                        .iter()
                        .map(|rec| model.poi_index(&rec.poi))
                        .collect::<Result<_>>()?;
                    for t in 1..ids.len() {
                        triples.push(Triple {
                            user: u,
                            support: ids[..t].to_vec(),
                            pos: ids[t],
                            neg: usize::MAX,
                        });
                    }
                }
            }
        }
    }
    Ok(triples)
}

fn params_finite(model: &Model) -> bool {
    model.trainable_params().iter().all(|x| x.is_finite())
}

/// Uniform draw from the POIs outside the user's (sorted) training support.
fn sample_negative_dense<R: Rng>(support: &[usize], num_pois: usize, rng: &mut R) -> Result<usize> {
    if support.len() >= num_pois {
        return Err(Error::Sampling(
            "user has visited every POI; no negative exists".to_string(),
        ));
    }
    loop {
        let candidate = rng.random_range(0..num_pois);
        if support.binary_search(&candidate).is_err() {
            return Ok(candidate);
        }
    }
}

/// SGD step with L2 applied to the parameters touched by the batch.
fn apply_update(model: &mut Model, batch: &[Triple], grads: &Gradients, config: &TrainConfig) {
    let lr = config.learning_rate;
    let reg = 2.0 * config.l2_lambda;

    let mut touched_pois: BTreeSet<usize> = BTreeSet::new();
    let mut touched_users: BTreeSet<usize> = BTreeSet::new();
    let mut touched_geo_pois: BTreeSet<usize> = BTreeSet::new();
    for triple in batch {
        touched_pois.extend(triple.support.iter().copied());
        touched_pois.insert(triple.pos);
        touched_pois.insert(triple.neg);
        touched_geo_pois.insert(triple.pos);
        touched_geo_pois.insert(triple.neg);
        touched_users.insert(triple.user);
    }
    // The fusion pass-through scatters into the full training support.
    for &u in &touched_users {
        touched_pois.extend(model.user_support[u].iter().copied());
    }

    for &v in &touched_pois {
        let g_row = grads.memnet.poi_embeddings.row(v);
        for (x, g) in model.memnet.poi_embeddings.row_mut(v).iter_mut().zip(g_row) {
            *x -= lr * (g + reg * *x);
        }
    }
    for (dst, src) in [
        (model.memnet.keys.as_mut_slice(), grads.memnet.keys.as_slice()),
        (
            model.memnet.memory.as_mut_slice(),
            grads.memnet.memory.as_slice(),
        ),
        (
            model.fusion.weight.as_mut_slice(),
            grads.fusion.weight.as_slice(),
        ),
    ] {
        for (x, g) in dst.iter_mut().zip(src) {
            *x -= lr * (g + reg * *x);
        }
    }
    for (x, g) in model.fusion.bias.iter_mut().zip(&grads.fusion.bias) {
        *x -= lr * (g + reg * *x);
    }
    for &u in &touched_users {
        let x = &mut model.geo.user_pref[u];
        *x -= lr * (grads.geo_user_pref[u] + reg * *x);
    }
    for &v in &touched_geo_pois {
        let x = &mut model.geo.poi_infl[v];
        *x -= lr * (grads.geo_poi_infl[v] + reg * *x);
    }
    // The geo bias cancels in the pairwise loss: no gradient, no update.
}

fn validation_ndcg(
    model: &Model,
    split: &DatasetSplit,
    interactions: &corpus::InteractionSet,
    config: &TrainConfig,
) -> Result<f64> {
    if split.validation.is_empty() {
        return Ok(0.0);
    }
    let opts = EvalOptions {
        cutoffs: vec![10],
        negatives_per_test: 100,
        seed: mix_seed_u64(mix_seed_str(config.seed, "validation"), 0),
    };
    let report = eval::evaluate(model, &split.validation, interactions, &opts)?;
    Ok(report.ndcg(10).unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{self, SynthConfig};

    fn tiny_corpus(seed: u64) -> DatasetSplit {
        let config = SynthConfig {
            num_users: 12,
            num_pois: 20,
            num_patterns: 2,
            checkins_per_user: (12, 12),
            pattern_time_profiles: synthgen::default_time_profiles(2, 4),
            seed,
            ..SynthConfig::default()
        };
        let (log, _) = synthgen::generate(&config).unwrap();
        corpus::chronological_split(&log, (0.70, 0.15, 0.15)).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            dim_d: 6,
            slots_h: 3,
            patterns_pi: 2,
            epochs: 2,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn tiny_tlda() -> TldaConfig {
        TldaConfig {
            time_slots: 4,
            burn_in: 30,
            samples: 2,
            lag: 2,
            ..TldaConfig::with_patterns(2, 77)
        }
    }

    #[test]
    fn total_loss_hand_computed() {
        let config = TrainConfig::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &config), 0.0);
        assert!((total_loss(1.0, 1.0, 1.0, 0.0, &config) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn doubling_lambda_doubles_only_regularisation() {
        let config = TrainConfig::default();
        let doubled = TrainConfig {
            l2_lambda: 2.0 * config.l2_lambda,
            ..config.clone()
        };
        let base = total_loss(1.0, 2.0, 3.0, 10.0, &config);
        let more = total_loss(1.0, 2.0, 3.0, 10.0, &doubled);
        assert!((more - base - config.l2_lambda * 10.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_defaults_follow_the_table() {
        let gpr = TrainConfig::for_scenario(Scenario::Gpr);
        assert_eq!(
            (gpr.weight_tau, gpr.weight_geo_loss, gpr.weight_geo_score),
            (0.2, 0.1, 0.4)
        );
        let cpr = TrainConfig::for_scenario(Scenario::Cpr);
        assert_eq!(
            (cpr.weight_tau, cpr.weight_geo_loss, cpr.weight_geo_score),
            (0.2, 0.1, 0.4)
        );
        let spr = TrainConfig::for_scenario(Scenario::Spr);
        assert_eq!(
            (spr.weight_tau, spr.weight_geo_loss, spr.weight_geo_score),
            (0.1, 0.4, 1.6)
        );
        assert_eq!(gpr.learning_rate, 0.005);
        assert_eq!(gpr.l2_lambda, 0.0001);
        assert_eq!((gpr.margin_m, gpr.margin_g), (0.2, 0.2));
        assert_eq!((gpr.dim_d, gpr.slots_h, gpr.patterns_pi), (50, 10, 10));
    }

    #[test]
    fn config_file_round_trip() {
        let config = TrainConfig {
            learning_rate: 0.01,
            scenario: Scenario::Spr,
            distance_mode: DistanceMode::HaversineKm,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.txt");
        std::fs::write(&path, config.render()).unwrap();
        let mut parsed = TrainConfig::default();
        parsed.apply_file(&path).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.txt");
        std::fs::write(&path, "not_a_key = 3\n").unwrap();
        let mut config = TrainConfig::default();
        assert!(config.apply_file(&path).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialised_model() {
        let split = tiny_corpus(3);
        let config = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let opts = FitOptions {
            tlda_config: Some(tiny_tlda()),
            ..FitOptions::default()
        };
        let result = fit_with(&split, &opts, &config).unwrap();
        assert!(result.history.is_empty());
        // Matches a freshly initialised model bit for bit.
        let fresh = initialise_model(&split, &opts, &config).unwrap();
        assert_eq!(
            result.model.memnet.poi_embeddings.as_slice(),
            fresh.memnet.poi_embeddings.as_slice()
        );
        assert!(result.model.geo.user_pref.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let split = tiny_corpus(4);
        let config = tiny_config();
        let opts = FitOptions {
            tlda_config: Some(tiny_tlda()),
            ..FitOptions::default()
        };
        let a = fit_with(&split, &opts, &config).unwrap();
        let b = fit_with(&split, &opts, &config).unwrap();
        assert_eq!(a.model.trainable_params(), b.model.trainable_params());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(
                x.validation_ndcg10.to_bits(),
                y.validation_ndcg10.to_bits()
            );
        }
    }

    fn medium_corpus() -> DatasetSplit {
        let config = SynthConfig {
            num_users: 60,
            num_pois: 40,
            num_patterns: 3,
            checkins_per_user: (50, 50),
            pattern_time_profiles: synthgen::default_time_profiles(3, 6),
            seed: 9,
            ..SynthConfig::default()
        };
        let (log, _) = synthgen::generate(&config).unwrap();
        corpus::chronological_split(&log, (0.70, 0.15, 0.15)).unwrap()
    }

    fn medium_config() -> TrainConfig {
        TrainConfig {
            dim_d: 8,
            slots_h: 4,
            patterns_pi: 3,
            epochs: 10,
            batch_size: 64,
            seed: 5,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    fn medium_tlda() -> TldaConfig {
        TldaConfig {
            time_slots: 6,
            burn_in: 50,
            samples: 3,
            lag: 2,
            ..TldaConfig::with_patterns(3, 77)
        }
    }

    #[test]
    fn training_loss_decreases_on_synthetic_data() {
        let split = medium_corpus();
        let opts = FitOptions {
            tlda_config: Some(medium_tlda()),
            ..FitOptions::default()
        };
        let result = fit_with(&split, &opts, &medium_config()).unwrap();
        let first = result.history.first().unwrap().train_loss;
        let last = result.history.last().unwrap().train_loss;
        assert!(last < 0.8 * first, "first {first}, last {last}");
    }

    #[test]
    fn early_epochs_mostly_descend() {
        // At most one non-decreasing step over the first epochs.
        let split = medium_corpus();
        let config = TrainConfig {
            epochs: 6,
            ..medium_config()
        };
        let opts = FitOptions {
            tlda_config: Some(medium_tlda()),
            ..FitOptions::default()
        };
        let result = fit_with(&split, &opts, &config).unwrap();
        let losses: Vec<f64> = result.history.iter().map(|e| e.train_loss).collect();
        let violations = losses.windows(2).filter(|pair| pair[1] > pair[0]).count();
        assert!(violations <= 1, "losses: {losses:?}");
    }

    #[test]
    fn divergence_aborts_with_location() {
        // An absurd learning rate blows the parameters up after the first
        // update; the next batch must report a named divergence.
        let split = tiny_corpus(2);
        let config = TrainConfig {
            learning_rate: 1e18,
            epochs: 3,
            ..tiny_config()
        };
        let opts = FitOptions {
            tlda_config: Some(tiny_tlda()),
            ..FitOptions::default()
        };
        match fit_with(&split, &opts, &config) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn spr_scenario_trains_on_prefix_triples() {
        let split = tiny_corpus(11);
        let config = TrainConfig {
            scenario: Scenario::Spr,
            epochs: 1,
            ..tiny_config()
        };
        // Synthetic check-ins are one week apart, so the default one-day
        // threshold yields no segments: supply a custom segmentation.
        let sequences = corpus::segment_sequences(&split.train, 8 * 86_400, 3).unwrap();
        assert!(sequences.num_segments() > 0);
        let opts = FitOptions {
            sequences: Some(&sequences),
            tlda_config: Some(tiny_tlda()),
            ..FitOptions::default()
        };
        let result = fit_with(&split, &opts, &config).unwrap();
        assert_eq!(result.history.len(), 1);
        assert!(result.history[0].train_loss.is_finite());
    }
}
