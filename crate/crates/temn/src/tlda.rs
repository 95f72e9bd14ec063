//! Temporal latent Dirichlet allocation over check-in tokens.
//!
//! Each check-in is a token carrying a user, a venue and a time slot.
//! Collapsed Gibbs sampling assigns every token to one of `pi` latent
//! patterns; the smoothed count tables yield per-user pattern mixtures
//! (intrinsic embeddings), per-pattern venue distributions and per-slot
//! pattern distributions.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::CheckInLog;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampling::categorical;

pub const SECONDS_PER_WEEK: i64 = 7 * 24 * 3600;

/// Seconds between the Unix epoch (a Thursday) and the first Monday 00:00.
const MONDAY_ANCHOR: i64 = 3 * 86_400;

/// Map a timestamp to a cyclic weekly slot in `[0, time_slots)`.
///
/// The default 168 slots give hour-of-week buckets with slot 0 starting
/// Monday 00:00 in the configured fixed UTC offset.
pub fn discretize_time(timestamp: i64, time_slots: u32, utc_offset: i32) -> u32 {
    let local = timestamp + i64::from(utc_offset);
    let seconds_of_week = (local + MONDAY_ANCHOR).rem_euclid(SECONDS_PER_WEEK);
    ((seconds_of_week as u64 * u64::from(time_slots)) / SECONDS_PER_WEEK as u64) as u32
}

/// Sampler configuration: pattern count, Dirichlet priors, time
/// granularity and the sweep schedule.
#[derive(Debug, Clone)]
pub struct TldaConfig {
    pub num_patterns: usize,
    /// Prior over pattern-user distributions.
    pub alpha: f64,
    /// Prior over venue-pattern distributions.
    pub beta: f64,
    /// Prior over pattern-time distributions.
    pub gamma: f64,
    pub time_slots: u32,
    pub utc_offset: i32,
    pub burn_in: usize,
    /// Number of posterior estimates averaged after burn-in.
    pub samples: usize,
    /// Sweeps between consecutive estimates.
    pub lag: usize,
    pub seed: u64,
}

impl TldaConfig {
    pub fn with_patterns(num_patterns: usize, seed: u64) -> Self {
        Self {
            num_patterns,
            alpha: 50.0 / num_patterns as f64,
            beta: 0.01,
            gamma: 0.1,
            time_slots: 168,
            utc_offset: 0,
            burn_in: 500,
            samples: 10,
            lag: 10,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_patterns < 1 {
            return Err(Error::Config("num_patterns must be at least 1".to_string()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::Config("Dirichlet priors must be positive".to_string()));
        }
        if self.time_slots < 1 {
            return Err(Error::Config("time_slots must be at least 1".to_string()));
        }
        if self.samples < 1 || self.lag < 1 {
            return Err(Error::Config("samples and lag must be at least 1".to_string()));
        }
        Ok(())
    }
}

impl Default for TldaConfig {
    fn default() -> Self {
        Self::with_patterns(10, 42)
    }
}

/// One token: (user index, time slot, venue index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub user: usize,
    pub slot: usize,
    pub venue: usize,
}

/// Gibbs sampler state: token assignments plus the count tables they tally.
#[derive(Debug, Clone)]
pub struct TldaState {
    pub config: TldaConfig,
    pub tokens: Vec<Token>,
    /// Pattern assignment per token.
    pub assignments: Vec<usize>,
    /// n(u, z): tokens of user u assigned to pattern z.
    pub user_pattern: Matrix,
    /// n(t, z): tokens in slot t assigned to pattern z.
    pub time_pattern: Matrix,
    /// n(z, v): tokens of venue v assigned to pattern z.
    pub pattern_venue: Matrix,
    /// n(z): total tokens per pattern.
    pub pattern_total: Vec<f64>,
    pub num_users: usize,
    pub num_venues: usize,
    rng: ChaCha8Rng,
}

/// Smoothed posterior point estimates, optionally averaged over sweeps.
#[derive(Debug, Clone)]
pub struct TldaPosterior {
    /// Row per user: pattern mixture (the intrinsic embedding).
    pub theta: Matrix,
    /// Row per pattern: venue distribution.
    pub varphi: Matrix,
    /// Row per time slot: pattern distribution.
    pub phi: Matrix,
}

/// Assign every token a uniformly random pattern and tally the counts.
pub fn gibbs_init(
    tokens: Vec<Token>,
    num_users: usize,
    num_venues: usize,
    config: &TldaConfig,
) -> Result<TldaState> {
    config.validate()?;
    if tokens.is_empty() {
        return Err(Error::Domain("cannot run the sampler on an empty corpus".to_string()));
    }
    let pi = config.num_patterns;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = TldaState {
        config: config.clone(),
        assignments: Vec::with_capacity(tokens.len()),
        user_pattern: Matrix::zeros(num_users, pi),
        time_pattern: Matrix::zeros(config.time_slots as usize, pi),
        pattern_venue: Matrix::zeros(pi, num_venues),
        pattern_total: vec![0.0; pi],
        num_users,
        num_venues,
        tokens,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    use rand::Rng;
    for i in 0..state.tokens.len() {
        let z = rng.random_range(0..pi);
        state.assignments.push(z);
        state.bump(i, z, 1.0);
    }
    Ok(state)
}

impl TldaState {
    fn bump(&mut self, token_idx: usize, z: usize, delta: f64) {
        let Token { user, slot, venue } = self.tokens[token_idx];
        *self
            .user_pattern
            .row_mut(user)
            .get_mut(z)
            .expect("pattern in range") += delta;
        self.time_pattern.row_mut(slot)[z] += delta;
        self.pattern_venue.row_mut(z)[venue] += delta;
        self.pattern_total[z] += delta;
    }

    /// Resample every token once, in token order.
    pub fn sweep(&mut self) {
        let pi = self.config.num_patterns;
        let alpha = self.config.alpha;
        let beta = self.config.beta;
        let gamma = self.config.gamma;
        let venue_smooth = self.num_venues as f64 * beta;
        let mut weights = vec![0.0; pi];
        for i in 0..self.tokens.len() {
            let old = self.assignments[i];
            self.bump(i, old, -1.0);
            let Token { user, slot, venue } = self.tokens[i];
            for z in 0..pi {
                weights[z] = (self.user_pattern.get(user, z) + alpha)
                    * (self.time_pattern.get(slot, z) + gamma)
                    * (self.pattern_venue.get(z, venue) + beta)
                    / (self.pattern_total[z] + venue_smooth);
            }
            let new = categorical(&mut self.rng, &weights);
            self.assignments[i] = new;
            self.bump(i, new, 1.0);
        }
    }

    /// Smoothed point estimates of the three posterior matrices.
    pub fn posterior_estimates(&self) -> TldaPosterior {
        let pi = self.config.num_patterns;
        let alpha = self.config.alpha;
        let beta = self.config.beta;
        let gamma = self.config.gamma;

        let mut theta = Matrix::zeros(self.num_users, pi);
        for u in 0..self.num_users {
            let total: f64 = self.user_pattern.row(u).iter().sum();
            let denom = total + pi as f64 * alpha;
            for z in 0..pi {
                theta.set(u, z, (self.user_pattern.get(u, z) + alpha) / denom);
            }
        }

        let mut varphi = Matrix::zeros(pi, self.num_venues);
        for z in 0..pi {
            let denom = self.pattern_total[z] + self.num_venues as f64 * beta;
            for v in 0..self.num_venues {
                varphi.set(z, v, (self.pattern_venue.get(z, v) + beta) / denom);
            }
        }

        let slots = self.config.time_slots as usize;
        let mut phi = Matrix::zeros(slots, pi);
        for t in 0..slots {
            let total: f64 = self.time_pattern.row(t).iter().sum();
            let denom = total + pi as f64 * gamma;
            for z in 0..pi {
                phi.set(t, z, (self.time_pattern.get(t, z) + gamma) / denom);
            }
        }

        TldaPosterior { theta, varphi, phi }
    }

    /// Exact-count consistency between assignments and tables.
    pub fn counts_consistent(&self) -> bool {
        let mut user_pattern = Matrix::zeros(self.num_users, self.config.num_patterns);
        let mut time_pattern =
            Matrix::zeros(self.config.time_slots as usize, self.config.num_patterns);
        let mut pattern_venue = Matrix::zeros(self.config.num_patterns, self.num_venues);
        let mut pattern_total = vec![0.0; self.config.num_patterns];
        for (tok, &z) in self.tokens.iter().zip(&self.assignments) {
            user_pattern.row_mut(tok.user)[z] += 1.0;
            time_pattern.row_mut(tok.slot)[z] += 1.0;
            pattern_venue.row_mut(z)[tok.venue] += 1.0;
            pattern_total[z] += 1.0;
        }
        user_pattern == self.user_pattern
            && time_pattern == self.time_pattern
            && pattern_venue == self.pattern_venue
            && pattern_total == self.pattern_total
    }
}

/// A fitted topic model: the posterior plus the id spaces it is over.
#[derive(Debug, Clone)]
pub struct TldaModel {
    pub posterior: TldaPosterior,
    pub users: Vec<String>,
    pub venues: Vec<String>,
    pub config: TldaConfig,
}

/// Tokenize a log against explicit user/venue vocabularies.
///
/// Vocabularies must be sorted and cover every id in the log; this lets a
/// caller share one id space between the sampler and the rest of a model.
pub fn tokenize(
    log: &CheckInLog,
    users: &[String],
    venues: &[String],
    config: &TldaConfig,
) -> Result<Vec<Token>> {
    let user_idx = |id: &str| {
        users
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .map_err(|_| Error::Lookup {
                kind: "user",
                id: id.to_string(),
            })
    };
    let venue_idx = |id: &str| {
        venues
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .map_err(|_| Error::Lookup {
                kind: "poi",
                id: id.to_string(),
            })
    };
    log.records()
        .iter()
        .map(|rec| {
            Ok(Token {
                user: user_idx(&rec.user)?,
                slot: discretize_time(rec.timestamp, config.time_slots, config.utc_offset)
                    as usize,
                venue: venue_idx(&rec.poi)?,
            })
        })
        .collect()
}

/// Run the full schedule (init, burn-in, averaged estimates) on a log.
pub fn run(log: &CheckInLog, config: &TldaConfig) -> Result<TldaModel> {
    let users: Vec<String> = log.users().map(str::to_string).collect();
    let venues: Vec<String> = log.pois().map(str::to_string).collect();
    let tokens = tokenize(log, &users, &venues, config)?;
    let mut state = gibbs_init(tokens, users.len(), venues.len(), config)?;
    for _ in 0..config.burn_in {
        state.sweep();
    }
    let mut averaged: Option<TldaPosterior> = None;
    for _ in 0..config.samples {
        for _ in 0..config.lag {
            state.sweep();
        }
        let estimate = state.posterior_estimates();
        averaged = Some(match averaged {
            None => estimate,
            Some(mut acc) => {
                accumulate(&mut acc.theta, &estimate.theta);
                accumulate(&mut acc.varphi, &estimate.varphi);
                accumulate(&mut acc.phi, &estimate.phi);
                acc
            }
        });
    }
    let mut posterior = averaged.expect("samples >= 1");
    let scale = 1.0 / config.samples as f64;
    for m in [&mut posterior.theta, &mut posterior.varphi, &mut posterior.phi] {
        m.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
    }
    Ok(TldaModel {
        posterior,
        users,
        venues,
        config: config.clone(),
    })
}

fn accumulate(acc: &mut Matrix, add: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(add.as_slice()) {
        *a += b;
    }
}

/// Write the three posterior matrices as TSV files with labelled headers
/// (`theta.tsv`, `varphi.tsv`, `phi.tsv` inside `dir`).
pub fn write_posterior_files(
    posterior: &TldaPosterior,
    users: &[String],
    venues: &[String],
    dir: &std::path::Path,
) -> Result<()> {
    let pi = posterior.theta.cols();
    let pattern_headers: Vec<String> = (0..pi).map(|z| format!("pattern{z}")).collect();

    let mut theta = std::fs::File::create(dir.join("theta.tsv"))?;
    writeln!(theta, "user\t{}", pattern_headers.join("\t"))?;
    for (u, user) in users.iter().enumerate() {
        let row: Vec<String> = posterior
            .theta
            .row(u)
            .iter()
            .map(|x| format!("{x:.6}"))
            .collect();
        writeln!(theta, "{user}\t{}", row.join("\t"))?;
    }

    let mut varphi = std::fs::File::create(dir.join("varphi.tsv"))?;
    writeln!(varphi, "pattern\t{}", venues.join("\t"))?;
    for z in 0..pi {
        let row: Vec<String> = posterior
            .varphi
            .row(z)
            .iter()
            .map(|x| format!("{x:.6}"))
            .collect();
        writeln!(varphi, "pattern{z}\t{}", row.join("\t"))?;
    }

    let mut phi = std::fs::File::create(dir.join("phi.tsv"))?;
    writeln!(phi, "slot\t{}", pattern_headers.join("\t"))?;
    for t in 0..posterior.phi.rows() {
        let row: Vec<String> = posterior
            .phi
            .row(t)
            .iter()
            .map(|x| format!("{x:.6}"))
            .collect();
        writeln!(phi, "{t}\t{}", row.join("\t"))?;
    }
    Ok(())
}
