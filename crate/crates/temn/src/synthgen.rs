//! Synthetic check-in generator with planted pattern, temporal and
//! geographic structure.
//!
//! Every POI belongs to exactly one planted pattern and sits inside that
//! pattern's geographic cluster; every user draws a soft pattern mixture.
//! Check-ins are sampled pattern-first, so downstream learning behaviour
//! can be verified against known ground truth.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::corpus::{CheckIn, CheckInLog};
use crate::error::{Error, Result};
use crate::sampling::categorical;
use crate::tlda::SECONDS_PER_WEEK;

/// Configuration of the generator.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_pois: usize,
    pub num_patterns: usize,
    /// Inclusive range of check-ins per user.
    pub checkins_per_user: (usize, usize),
    /// Symmetric Dirichlet parameter for user pattern mixtures.
    pub pattern_user_concentration: f64,
    /// One distribution over time slots per pattern; rows sum to 1.
    pub pattern_time_profiles: Vec<Vec<f64>>,
    /// Radius (degrees) of the disc holding each pattern's POIs.
    pub geo_cluster_radius: f64,
    /// Probability that a check-in ignores the planted structure.
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_pois: 200,
            num_patterns: 3,
            checkins_per_user: (200, 200),
            pattern_user_concentration: 0.5,
            pattern_time_profiles: default_time_profiles(3, 6),
            geo_cluster_radius: 0.5,
            noise_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn time_slots(&self) -> usize {
        self.pattern_time_profiles.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.num_users < 1 || self.num_pois < 1 || self.num_patterns < 1 {
            return Err(Error::Config("counts must be at least 1".to_string()));
        }
        if self.num_patterns > self.num_pois {
            return Err(Error::Config(format!(
                "num_patterns ({}) exceeds num_pois ({})",
                self.num_patterns, self.num_pois
            )));
        }
        let (lo, hi) = self.checkins_per_user;
        if lo < 1 || hi < lo {
            return Err(Error::Config("bad checkins_per_user range".to_string()));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(Error::Config("noise_fraction must be in [0, 1)".to_string()));
        }
        if self.pattern_user_concentration <= 0.0 {
            return Err(Error::Config("concentration must be positive".to_string()));
        }
        if self.geo_cluster_radius <= 0.0 {
            return Err(Error::Config("geo_cluster_radius must be positive".to_string()));
        }
        if self.pattern_time_profiles.len() != self.num_patterns {
            return Err(Error::Config("need one time profile per pattern".to_string()));
        }
        let slots = self.time_slots();
        if slots == 0 {
            return Err(Error::Config("time profiles must be non-empty".to_string()));
        }
        for profile in &self.pattern_time_profiles {
            if profile.len() != slots {
                return Err(Error::Config("time profiles differ in length".to_string()));
            }
            let sum: f64 = profile.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || profile.iter().any(|&p| p < 0.0) {
                return Err(Error::Config("time profiles must sum to 1".to_string()));
            }
        }
        Ok(())
    }
}

/// Smooth cyclic bump profiles, one per pattern, spread over the slots.
pub fn default_time_profiles(num_patterns: usize, slots: usize) -> Vec<Vec<f64>> {
    (0..num_patterns)
        .map(|k| {
            let center = k as f64 * slots as f64 / num_patterns as f64;
            let mut profile: Vec<f64> = (0..slots)
                .map(|s| {
                    let mut d = (s as f64 - center).abs();
                    d = d.min(slots as f64 - d);
                    (-d * d / 2.0).exp()
                })
                .collect();
            let sum: f64 = profile.iter().sum();
            profile.iter_mut().for_each(|p| *p /= sum);
            profile
        })
        .collect()
}

/// The planted structure behind a generated corpus.
#[derive(Debug, Clone)]
pub struct SynthGroundTruth {
    /// Planted pattern mixture per user.
    pub user_mixtures: BTreeMap<String, Vec<f64>>,
    /// Planted pattern per POI.
    pub poi_patterns: BTreeMap<String, usize>,
    /// Geographic cluster centre per pattern (lat, lon).
    pub cluster_centers: Vec<(f64, f64)>,
    /// Per check-in record: sampled (pattern, time slot); pattern is the
    /// noise-free source even for noisy draws, slot is the emitted one.
    pub record_slots: Vec<usize>,
}

const FIRST_MONDAY: i64 = 4 * 86_400; // first Monday 00:00 after the epoch

/// Generate a deterministic synthetic corpus with its ground truth.
pub fn generate(config: &SynthConfig) -> Result<(CheckInLog, SynthGroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    use rand::SeedableRng;

    let slots = config.time_slots();
    let centers = cluster_centers(config.num_patterns);

    // POIs: hard pattern assignment, coordinates uniform in the pattern disc.
    let mut poi_patterns = BTreeMap::new();
    let mut poi_coords = Vec::with_capacity(config.num_pois);
    let mut pattern_pois: Vec<Vec<usize>> = vec![Vec::new(); config.num_patterns];
    for p in 0..config.num_pois {
        let pattern = p % config.num_patterns;
        let (clat, clon) = centers[pattern];
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let radius = config.geo_cluster_radius * rng.random::<f64>().sqrt();
        let coords = (clat + radius * angle.cos(), clon + radius * angle.sin());
        poi_patterns.insert(poi_name(p), pattern);
        poi_coords.push(coords);
        pattern_pois[pattern].push(p);
    }

    // Users: soft mixtures from a symmetric Dirichlet.
    let mut user_mixtures = BTreeMap::new();
    let mut records = Vec::new();
    let mut record_slots = Vec::new();
    let (lo, hi) = config.checkins_per_user;
    for u in 0..config.num_users {
        let mixture = dirichlet(&mut rng, config.num_patterns, config.pattern_user_concentration);
        let n = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        for i in 0..n {
            let noisy = config.noise_fraction > 0.0 && rng.random::<f64>() < config.noise_fraction;
            let (poi, slot) = if noisy {
                (rng.random_range(0..config.num_pois), rng.random_range(0..slots))
            } else {
                let pattern = categorical(&mut rng, &mixture);
                let slot = categorical(&mut rng, &config.pattern_time_profiles[pattern]);
                let members = &pattern_pois[pattern];
                (members[rng.random_range(0..members.len())], slot)
            };
            // One week per check-in keeps per-user timestamps strictly
            // ascending while the within-week position encodes the slot.
            let sow_lo = (slot as i64 * SECONDS_PER_WEEK) / slots as i64;
            let sow_hi = ((slot as i64 + 1) * SECONDS_PER_WEEK) / slots as i64;
            let sow = rng.random_range(sow_lo..sow_hi);
            let timestamp = FIRST_MONDAY + i as i64 * SECONDS_PER_WEEK + sow;
            let (lat, lon) = poi_coords[poi];
            records.push(CheckIn {
                user: user_name(u),
                poi: poi_name(poi),
                timestamp,
                lat,
                lon,
                category: Some(format!("cat{}", poi_patterns[&poi_name(poi)])),
            });
            record_slots.push(slot);
        }
        user_mixtures.insert(user_name(u), mixture);
    }

    let truth = SynthGroundTruth {
        user_mixtures,
        poi_patterns,
        cluster_centers: centers,
        record_slots,
    };
    Ok((CheckInLog::from_records(records), truth))
}

/// Pattern cluster centres spaced on a 30-degree circle around the origin,
/// far apart relative to any sane cluster radius.
fn cluster_centers(num_patterns: usize) -> Vec<(f64, f64)> {
    (0..num_patterns)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / num_patterns as f64;
            (30.0 * angle.sin(), 30.0 * angle.cos())
        })
        .collect()
}

fn dirichlet<R: Rng>(rng: &mut R, dim: usize, alpha: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let sum: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|d| *d /= sum);
    draws
}

fn user_name(u: usize) -> String {
    format!("u{u:04}")
}

fn poi_name(p: usize) -> String {
    format!("p{p:04}")
}

/// Write the `user_id,mixture...` ground-truth table.
pub fn write_user_mixtures<W: std::io::Write>(
    truth: &SynthGroundTruth,
    mut w: W,
) -> Result<()> {
    for (user, mixture) in &truth.user_mixtures {
        let cells: Vec<String> = mixture.iter().map(|m| format!("{m}")).collect();
        writeln!(w, "{},{}", user, cells.join(","))?;
    }
    Ok(())
}

/// Write the `poi_id,pattern_id` ground-truth table.
pub fn write_poi_patterns<W: std::io::Write>(truth: &SynthGroundTruth, mut w: W) -> Result<()> {
    for (poi, pattern) in &truth.poi_patterns {
        writeln!(w, "{poi},{pattern}")?;
    }
    Ok(())
}
