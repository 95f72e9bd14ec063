//! Memory-network scorer.
//!
//! A user's memory embedding is the mean of her visited POI embeddings.
//! The Hadamard product of user and candidate embeddings addresses a key
//! matrix via softmax attention, the attended read of the memory matrix
//! acts as a translation vector, and the score is the negative squared
//! distance of the translated user embedding from the candidate. Training
//! uses a pairwise hinge loss where the corrupted pair reuses the relation
//! vector of the positive pair.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{add_scaled, dot, softmax, Matrix};

/// Trainable parameters of the memory network.
#[derive(Debug, Clone, PartialEq)]
pub struct MemNetParams {
    /// One row per POI, `dim_d` columns.
    pub poi_embeddings: Matrix,
    /// Key matrix, `dim_d` rows by `slots_h` columns (one key per column).
    pub keys: Matrix,
    /// Memory matrix, `slots_h` rows by `dim_d` columns (one slice per row).
    pub memory: Matrix,
}

impl MemNetParams {
    /// Uniform initialisation in [-scale, scale].
    pub fn init<R: Rng>(num_pois: usize, dim_d: usize, slots_h: usize, scale: f64, rng: &mut R) -> Self {
        let mut params = Self {
            poi_embeddings: Matrix::zeros(num_pois, dim_d),
            keys: Matrix::zeros(dim_d, slots_h),
            memory: Matrix::zeros(slots_h, dim_d),
        };
        for m in [
            &mut params.poi_embeddings,
            &mut params.keys,
            &mut params.memory,
        ] {
            for x in m.as_mut_slice() {
                *x = rng.random_range(-scale..=scale);
            }
        }
        params
    }

    pub fn dim_d(&self) -> usize {
        self.keys.rows()
    }

    pub fn slots_h(&self) -> usize {
        self.keys.cols()
    }
}

/// Mean of the embeddings of the given POIs (the user memory embedding).
pub fn user_memory_embedding(visited: &[usize], params: &MemNetParams) -> Result<Vec<f64>> {
    if visited.is_empty() {
        return Err(Error::Domain(
            "memory embedding needs at least one visited POI".to_string(),
        ));
    }
    let d = params.dim_d();
    let mut out = vec![0.0; d];
    for &poi in visited {
        add_scaled(&mut out, params.poi_embeddings.row(poi), 1.0);
    }
    let scale = 1.0 / visited.len() as f64;
    out.iter_mut().for_each(|x| *x *= scale);
    Ok(out)
}

/// Elementwise (Hadamard) product of two equal-length vectors.
pub fn joint_embedding(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if p.len() != q.len() {
        return Err(Error::Domain(format!(
            "joint embedding length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter().zip(q).map(|(a, b)| a * b).collect())
}

/// Softmax attention of the joint embedding over the key columns.
pub fn attention(e: &[f64], keys: &Matrix) -> Result<Vec<f64>> {
    if e.len() != keys.rows() {
        return Err(Error::Domain(format!(
            "attention input length {} does not match key rows {}",
            e.len(),
            keys.rows()
        )));
    }
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite attention input".to_string()));
    }
    let logits: Vec<f64> = (0..keys.cols())
        .map(|i| (0..keys.rows()).map(|r| e[r] * keys.get(r, i)).sum())
        .collect();
    Ok(softmax(&logits))
}

/// Attention-weighted sum of memory slices.
pub fn relation_vector(weights: &[f64], memory: &Matrix) -> Result<Vec<f64>> {
    if weights.len() != memory.rows() {
        return Err(Error::Domain(format!(
            "attention length {} does not match memory rows {}",
            weights.len(),
            memory.rows()
        )));
    }
    let mut out = vec![0.0; memory.cols()];
    for (i, &w) in weights.iter().enumerate() {
        add_scaled(&mut out, memory.row(i), w);
    }
    Ok(out)
}

/// Negative squared Euclidean norm of `p + r - q`; zero iff the translated
/// user embedding lands exactly on the candidate.
pub fn score(p: &[f64], r: &[f64], q: &[f64]) -> f64 {
    debug_assert!(p.len() == r.len() && r.len() == q.len());
    let residual: f64 = p
        .iter()
        .zip(r)
        .zip(q)
        .map(|((a, b), c)| {
            let d = a + b - c;
            d * d
        })
        .sum();
    -residual
}

/// Pairwise hinge loss `max(0, s_neg - s_pos + margin)`.
pub fn pair_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (s_neg - s_pos + margin).max(0.0)
}

/// Forward pass for one (user support, positive, negative) triple.
///
/// The negative score reuses the attention and relation vector computed
/// from the positive pair.
#[derive(Debug, Clone)]
pub struct PairActivation {
    pub p: Vec<f64>,
    pub e: Vec<f64>,
    pub attention: Vec<f64>,
    pub relation: Vec<f64>,
    pub s_pos: f64,
    pub s_neg: f64,
}

pub fn score_pair(
    params: &MemNetParams,
    support: &[usize],
    pos: usize,
    neg: usize,
) -> Result<PairActivation> {
    let p = user_memory_embedding(support, params)?;
    let q_pos = params.poi_embeddings.row(pos);
    let e = joint_embedding(&p, q_pos)?;
    let attention = attention(&e, &params.keys)?;
    let relation = relation_vector(&attention, &params.memory)?;
    let s_pos = score(&p, &relation, q_pos);
    let s_neg = score(&p, &relation, params.poi_embeddings.row(neg));
    Ok(PairActivation {
        p,
        e,
        attention,
        relation,
        s_pos,
        s_neg,
    })
}

/// Gradients with the same shapes as [`MemNetParams`].
#[derive(Debug, Clone)]
pub struct MemNetGradients {
    pub poi_embeddings: Matrix,
    pub keys: Matrix,
    pub memory: Matrix,
}

impl MemNetGradients {
    pub fn zeros_like(params: &MemNetParams) -> Self {
        Self {
            poi_embeddings: Matrix::zeros(
                params.poi_embeddings.rows(),
                params.poi_embeddings.cols(),
            ),
            keys: Matrix::zeros(params.keys.rows(), params.keys.cols()),
            memory: Matrix::zeros(params.memory.rows(), params.memory.cols()),
        }
    }
}

/// One training triple: the support set whose mean forms the user memory
/// embedding (positions, may repeat), a visited POI and a sampled negative.
#[derive(Debug, Clone)]
pub struct Triple {
    pub user: usize,
    pub support: Vec<usize>,
    pub pos: usize,
    pub neg: usize,
}

/// Accumulate hand-derived gradients of the hinge loss for one triple,
/// scaled by `weight`. Returns the (unscaled) hinge loss.
///
/// Inactive triples contribute nothing. Gradients flow through the mean
/// rule into every support embedding and through the attention softmax
/// into the key and memory matrices.
pub fn accumulate_gradients(
    params: &MemNetParams,
    triple: &Triple,
    margin: f64,
    weight: f64,
    grads: &mut MemNetGradients,
) -> Result<f64> {
    let act = score_pair(params, &triple.support, triple.pos, triple.neg)?;
    let loss = pair_loss(act.s_pos, act.s_neg, margin);
    if loss <= 0.0 {
        return Ok(0.0);
    }
    let d = params.dim_d();
    let h = params.slots_h();
    let q_pos = params.poi_embeddings.row(triple.pos);
    let q_neg = params.poi_embeddings.row(triple.neg);

    // Residuals of the two scored pairs.
    let a_pos: Vec<f64> = (0..d).map(|k| act.p[k] + act.relation[k] - q_pos[k]).collect();
    let a_neg: Vec<f64> = (0..d).map(|k| act.p[k] + act.relation[k] - q_neg[k]).collect();

    // loss = |a_pos|^2 - |a_neg|^2 + margin on the active branch.
    let dl_da_pos: Vec<f64> = a_pos.iter().map(|x| 2.0 * x).collect();
    let dl_da_neg: Vec<f64> = a_neg.iter().map(|x| -2.0 * x).collect();

    let mut dl_dq_pos: Vec<f64> = dl_da_pos.iter().map(|x| -x).collect();
    let dl_dq_neg: Vec<f64> = dl_da_neg.iter().map(|x| -x).collect();
    let dl_dr: Vec<f64> = dl_da_pos
        .iter()
        .zip(&dl_da_neg)
        .map(|(a, b)| a + b)
        .collect();
    let mut dl_dp = dl_dr.clone();

    // relation = sum_i attention_i * memory_i
    let mut dl_dw = vec![0.0; h];
    for i in 0..h {
        add_scaled(grads.memory.row_mut(i), &dl_dr, weight * act.attention[i]);
        dl_dw[i] = dot(&dl_dr, params.memory.row(i));
    }

    // Softmax backward: dl/dlogit_i = w_i (dl_dw_i - sum_j w_j dl_dw_j)
    let inner = dot(&act.attention, &dl_dw);
    let dl_dlogit: Vec<f64> = (0..h)
        .map(|i| act.attention[i] * (dl_dw[i] - inner))
        .collect();

    // logit_i = e . key_col_i
    let mut dl_de = vec![0.0; d];
    for r in 0..d {
        let key_row = grads.keys.row_mut(r);
        for i in 0..h {
            key_row[i] += weight * dl_dlogit[i] * act.e[r];
            dl_de[r] += dl_dlogit[i] * params.keys.get(r, i);
        }
    }

    // e = p ⊙ q_pos
    for k in 0..d {
        dl_dp[k] += dl_de[k] * q_pos[k];
        dl_dq_pos[k] += dl_de[k] * act.p[k];
    }

    add_scaled(grads.poi_embeddings.row_mut(triple.pos), &dl_dq_pos, weight);
    add_scaled(grads.poi_embeddings.row_mut(triple.neg), &dl_dq_neg, weight);

    // Mean rule: p is the average over the support set.
    let mean_scale = weight / triple.support.len() as f64;
    for &s in &triple.support {
        add_scaled(grads.poi_embeddings.row_mut(s), &dl_dp, mean_scale);
    }

    Ok(loss)
}

/// Sum of hinge losses and gradients over a batch of triples.
pub fn batch_gradients(
    params: &MemNetParams,
    batch: &[Triple],
    margin: f64,
) -> Result<(f64, MemNetGradients)> {
    let mut grads = MemNetGradients::zeros_like(params);
    let mut loss = 0.0;
    for triple in batch {
        loss += accumulate_gradients(params, triple, margin, 1.0, &mut grads)?;
    }
    Ok((loss, grads))
}
