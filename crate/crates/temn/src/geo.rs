//! Geographical scoring.
//!
//! Each user gets a fixed activity centroid from her training check-ins.
//! A learned per-user preference and per-POI influence scale the
//! user-candidate distance into a score, trained with the same pairwise
//! hinge as the memory network.

use std::io::Write;

use crate::error::{Error, Result};

/// Learned geographic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoParams {
    /// Distance sensitivity per user.
    pub user_pref: Vec<f64>,
    /// Distance influence per POI.
    pub poi_infl: Vec<f64>,
    /// Global bias. It cancels in the pairwise loss, so it never receives
    /// a gradient; kept so the score formula stays complete.
    pub bias: f64,
}

impl GeoParams {
    /// Neutral start: zero sensitivities so early ranking is driven by the
    /// memory network.
    pub fn zeros(num_users: usize, num_pois: usize) -> Self {
        Self {
            user_pref: vec![0.0; num_users],
            poi_infl: vec![0.0; num_pois],
            bias: 0.0,
        }
    }
}

/// Mean of a user's check-in coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserCentroid {
    pub lat: f64,
    pub lon: f64,
}

/// How user-POI distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// Euclidean norm in raw degrees.
    #[default]
    DegreesEuclidean,
    /// Great-circle kilometres.
    HaversineKm,
}

impl DistanceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::DegreesEuclidean => "degrees-euclidean",
            Self::HaversineKm => "haversine-km",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "degrees-euclidean" => Ok(Self::DegreesEuclidean),
            "haversine-km" => Ok(Self::HaversineKm),
            other => Err(Error::Config(format!("unknown distance mode: {other}"))),
        }
    }
}

/// Arithmetic mean of the given coordinates (one entry per distinct POI).
pub fn user_centroid(coords: &[(f64, f64)]) -> Result<UserCentroid> {
    if coords.is_empty() {
        return Err(Error::Domain(
            "centroid needs at least one coordinate".to_string(),
        ));
    }
    let n = coords.len() as f64;
    let (lat, lon) = coords
        .iter()
        .fold((0.0, 0.0), |(a, b), (lat, lon)| (a + lat, b + lon));
    Ok(UserCentroid {
        lat: lat / n,
        lon: lon / n,
    })
}

/// Distance between a centroid and a coordinate pair under the given mode.
pub fn distance(centroid: UserCentroid, poi: (f64, f64), mode: DistanceMode) -> f64 {
    match mode {
        DistanceMode::DegreesEuclidean => {
            let dlat = centroid.lat - poi.0;
            let dlon = centroid.lon - poi.1;
            (dlat * dlat + dlon * dlon).sqrt()
        }
        DistanceMode::HaversineKm => haversine_km(centroid.lat, centroid.lon, poi.0, poi.1),
    }
}

const EARTH_RADIUS_KM: f64 = 6371.0088;

fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// `(rho_u + rho_v) * l + bias`
pub fn score(rho_u: f64, rho_v: f64, l: f64, bias: f64) -> f64 {
    (rho_u + rho_v) * l + bias
}

/// Pairwise hinge loss `max(0, s_neg - s_pos + margin)`.
pub fn pair_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (s_neg - s_pos + margin).max(0.0)
}

/// Gradient increments of the hinge for one (user, positive, negative)
/// triple, scaled by `weight`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairGradients {
    pub d_user: f64,
    pub d_pos: f64,
    pub d_neg: f64,
}

/// Hand-derived gradients of the pairwise hinge; piecewise linear in the
/// sensitivities. Returns the (unscaled) hinge loss and the scaled
/// increments. The bias cancels, so it has no gradient.
#[allow(clippy::too_many_arguments)]
pub fn pair_gradients(
    rho_u: f64,
    rho_pos: f64,
    rho_neg: f64,
    l_pos: f64,
    l_neg: f64,
    bias: f64,
    margin: f64,
    weight: f64,
) -> (f64, PairGradients) {
    let s_pos = score(rho_u, rho_pos, l_pos, bias);
    let s_neg = score(rho_u, rho_neg, l_neg, bias);
    let loss = pair_loss(s_pos, s_neg, margin);
    let grads = if loss > 0.0 {
        PairGradients {
            d_user: weight * (l_neg - l_pos),
            d_pos: weight * (-l_pos),
            d_neg: weight * l_neg,
        }
    } else {
        PairGradients::default()
    };
    (loss, grads)
}

/// Per-pattern averages of the learned geographic parameters, written as
/// text tables for inspection.
pub fn write_geo_tables<W: Write>(
    mut w: W,
    users: &[String],
    pois: &[String],
    params: &GeoParams,
    user_patterns: &[usize],
    poi_patterns: &[usize],
    num_patterns: usize,
) -> Result<()> {
    writeln!(w, "user\trho_u\tpattern")?;
    for (i, user) in users.iter().enumerate() {
        writeln!(w, "{user}\t{:.6}\t{}", params.user_pref[i], user_patterns[i])?;
    }
    writeln!(w)?;
    writeln!(w, "poi\trho_v\tpattern")?;
    for (i, poi) in pois.iter().enumerate() {
        writeln!(w, "{poi}\t{:.6}\t{}", params.poi_infl[i], poi_patterns[i])?;
    }
    writeln!(w)?;
    writeln!(w, "pattern\tmean_rho_u\tn_users\tmean_rho_v\tn_pois")?;
    for z in 0..num_patterns {
        let (mut su, mut nu, mut sv, mut nv) = (0.0, 0usize, 0.0, 0usize);
        for (i, &p) in user_patterns.iter().enumerate() {
            if p == z {
                su += params.user_pref[i];
                nu += 1;
            }
        }
        for (i, &p) in poi_patterns.iter().enumerate() {
            if p == z {
                sv += params.poi_infl[i];
                nv += 1;
            }
        }
        let mu = if nu > 0 { su / nu as f64 } else { 0.0 };
        let mv = if nv > 0 { sv / nv as f64 } else { 0.0 };
        writeln!(w, "{z}\t{mu:.6}\t{nu}\t{mv:.6}\t{nv}")?;
    }
    Ok(())
}
