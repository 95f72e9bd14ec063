//! Check-in ingestion, filtering, implicit-feedback interactions,
//! chronological splits, gap-based sequence segmentation and negative
//! sampling.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// One timestamped, geolocated user-POI interaction record.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckIn {
    pub user: String,
    pub poi: String,
    /// Unix seconds.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub category: Option<String>,
}

impl CheckIn {
    fn is_valid(&self) -> bool {
        self.timestamp >= 0
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// An ordered collection of check-ins with per-user and per-POI indices.
///
/// Per-user positions are sorted by `(timestamp, input order)` so every
/// downstream chronological operation is reproducible under timestamp ties.
#[derive(Debug, Clone, Default)]
pub struct CheckInLog {
    records: Vec<CheckIn>,
    user_index: BTreeMap<String, Vec<usize>>,
    poi_index: BTreeMap<String, Vec<usize>>,
}

impl CheckInLog {
    pub fn from_records(records: Vec<CheckIn>) -> Self {
        let mut user_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut poi_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, rec) in records.iter().enumerate() {
            user_index.entry(rec.user.clone()).or_default().push(pos);
            poi_index.entry(rec.poi.clone()).or_default().push(pos);
        }
        for positions in user_index.values_mut() {
            positions.sort_by_key(|&p| (records[p].timestamp, p));
        }
        Self {
            records,
            user_index,
            poi_index,
        }
    }

    pub fn records(&self) -> &[CheckIn] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.user_index.keys().map(String::as_str)
    }

    pub fn num_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn pois(&self) -> impl Iterator<Item = &str> {
        self.poi_index.keys().map(String::as_str)
    }

    pub fn num_pois(&self) -> usize {
        self.poi_index.len()
    }

    /// Record positions of one user, sorted by (timestamp, input order).
    pub fn user_positions(&self, user: &str) -> Option<&[usize]> {
        self.user_index.get(user).map(Vec::as_slice)
    }

    /// This user's records in chronological order.
    pub fn user_records(&self, user: &str) -> Vec<&CheckIn> {
        self.user_positions(user)
            .map(|ps| ps.iter().map(|&p| &self.records[p]).collect())
            .unwrap_or_default()
    }

    pub fn poi_positions(&self, poi: &str) -> Option<&[usize]> {
        self.poi_index.get(poi).map(Vec::as_slice)
    }

    /// Canonical coordinates per POI: the mean over all of its records.
    pub fn poi_coordinates(&self) -> BTreeMap<String, (f64, f64)> {
        let mut out = BTreeMap::new();
        for (poi, positions) in &self.poi_index {
            let n = positions.len() as f64;
            let (mut lat, mut lon) = (0.0, 0.0);
            for &p in positions {
                lat += self.records[p].lat;
                lon += self.records[p].lon;
            }
            out.insert(poi.clone(), (lat / n, lon / n));
        }
        out
    }

    /// Serialize as `user,poi,timestamp,lat,lon[,category]` lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.records {
            match &rec.category {
                Some(cat) => writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    rec.user, rec.poi, rec.timestamp, rec.lat, rec.lon, cat
                )?,
                None => writeln!(
                    w,
                    "{},{},{},{},{}",
                    rec.user, rec.poi, rec.timestamp, rec.lat, rec.lon
                )?,
            }
        }
        Ok(())
    }
}

/// Counts reported by [`parse_checkins`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseStats {
    pub accepted: usize,
    /// Lines that were malformed or carried out-of-range fields.
    pub rejected: usize,
}

/// Parse comma-separated check-in lines (`user,poi,timestamp,lat,lon[,category]`).
///
/// A leading header line is detected by a non-numeric timestamp field and
/// skipped. Malformed or out-of-range lines are rejected and counted, not
/// fatal; only an unreadable stream is an error.
pub fn parse_checkins<R: BufRead>(reader: R) -> Result<(CheckInLog, ParseStats)> {
    let mut records = Vec::new();
    let mut rejected = 0usize;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Input(format!("read failure: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse_line(trimmed) {
            Some(rec) if rec.is_valid() => records.push(rec),
            Some(_) => rejected += 1,
            None if line_no == 0 => {} // header line
            None => rejected += 1,
        }
    }
    let stats = ParseStats {
        accepted: records.len(),
        rejected,
    };
    Ok((CheckInLog::from_records(records), stats))
}

fn parse_line(line: &str) -> Option<CheckIn> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 5 || fields.len() > 6 {
        return None;
    }
    let timestamp: i64 = fields[2].parse().ok()?;
    let lat: f64 = fields[3].parse().ok()?;
    let lon: f64 = fields[4].parse().ok()?;
    if fields[0].is_empty() || fields[1].is_empty() {
        return None;
    }
    let category = fields
        .get(5)
        .filter(|c| !c.is_empty())
        .map(|c| c.to_string());
    Some(CheckIn {
        user: fields[0].to_string(),
        poi: fields[1].to_string(),
        timestamp,
        lat,
        lon,
        category,
    })
}

/// Keep only users with at least `min_unique_pois` distinct POIs.
pub fn filter_users(log: &CheckInLog, min_unique_pois: usize) -> Result<CheckInLog> {
    if min_unique_pois < 1 {
        return Err(Error::Config(
            "min_unique_pois must be at least 1".to_string(),
        ));
    }
    let keep: BTreeSet<&str> = log
        .user_index
        .iter()
        .filter(|(_, positions)| {
            let distinct: BTreeSet<&str> = positions
                .iter()
                .map(|&p| log.records[p].poi.as_str())
                .collect();
            distinct.len() >= min_unique_pois
        })
        .map(|(user, _)| user.as_str())
        .collect();
    let records = log
        .records
        .iter()
        .filter(|rec| keep.contains(rec.user.as_str()))
        .cloned()
        .collect();
    Ok(CheckInLog::from_records(records))
}

/// Binary implicit-feedback structure: which users visited which POIs.
#[derive(Debug, Clone, Default)]
pub struct InteractionSet {
    pub visited: BTreeMap<String, BTreeSet<String>>,
    pub universe: BTreeSet<String>,
}

impl InteractionSet {
    pub fn has_visited(&self, user: &str, poi: &str) -> bool {
        self.visited.get(user).is_some_and(|set| set.contains(poi))
    }

    /// POIs the user has not interacted with, in sorted order.
    pub fn unvisited(&self, user: &str) -> Vec<&str> {
        let visited = self.visited.get(user);
        self.universe
            .iter()
            .filter(|poi| visited.is_none_or(|set| !set.contains(*poi)))
            .map(String::as_str)
            .collect()
    }
}

/// Collapse a log into distinct visited-POI sets per user.
pub fn build_interactions(log: &CheckInLog) -> InteractionSet {
    let mut visited: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for rec in &log.records {
        visited
            .entry(rec.user.clone())
            .or_default()
            .insert(rec.poi.clone());
    }
    let universe = log.poi_index.keys().cloned().collect();
    InteractionSet { visited, universe }
}

/// Merge interactions from several logs (e.g. train + validation + test).
pub fn build_interactions_all(logs: &[&CheckInLog]) -> InteractionSet {
    let mut out = InteractionSet::default();
    for log in logs {
        for rec in &log.records {
            out.visited
                .entry(rec.user.clone())
                .or_default()
                .insert(rec.poi.clone());
            out.universe.insert(rec.poi.clone());
        }
    }
    out
}

/// Per-user chronological train/validation/test partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: CheckInLog,
    pub validation: CheckInLog,
    pub test: CheckInLog,
    pub fractions: (f64, f64, f64),
    /// Users removed because they had too few records to populate all parts.
    pub dropped_users: Vec<String>,
}

/// Split each user's history chronologically: the latest `ceil(test * n)`
/// records become test, the next-latest `ceil(val * n)` validation, the
/// rest training.
///
/// Fractions must all be positive and sum to one. Users whose history is
/// too short to give every part at least one record are dropped with a
/// warning instead of failing the whole run.
pub fn chronological_split(
    log: &CheckInLog,
    fractions: (f64, f64, f64),
) -> Result<DatasetSplit> {
    let (train_f, val_f, test_f) = fractions;
    if train_f <= 0.0 || val_f <= 0.0 || test_f <= 0.0 {
        return Err(Error::Config(format!(
            "split fractions must all be positive, got ({train_f}, {val_f}, {test_f})"
        )));
    }
    if (train_f + val_f + test_f - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got ({train_f}, {val_f}, {test_f})"
        )));
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut dropped = Vec::new();
    for (user, positions) in &log.user_index {
        let n = positions.len();
        let n_test = (test_f * n as f64).ceil() as usize;
        let n_val = (val_f * n as f64).ceil() as usize;
        if n_test + n_val >= n || n_test == 0 || n_val == 0 {
            log::warn!("dropping user {user}: {n} records cannot fill all three parts");
            dropped.push(user.clone());
            continue;
        }
        let n_train = n - n_val - n_test;
        for (i, &p) in positions.iter().enumerate() {
            let rec = log.records[p].clone();
            if i < n_train {
                train.push((p, rec));
            } else if i < n_train + n_val {
                validation.push((p, rec));
            } else {
                test.push((p, rec));
            }
        }
    }
    // Preserve the original record order inside each part.
    let finish = |mut part: Vec<(usize, CheckIn)>| {
        part.sort_by_key(|(p, _)| *p);
        CheckInLog::from_records(part.into_iter().map(|(_, r)| r).collect())
    };
    Ok(DatasetSplit {
        train: finish(train),
        validation: finish(validation),
        test: finish(test),
        fractions,
        dropped_users: dropped,
    })
}

/// Gap-segmented per-user check-in sequences.
#[derive(Debug, Clone)]
pub struct SequenceSet {
    /// Chronologically ordered segments per user.
    pub sequences: BTreeMap<String, Vec<Vec<CheckIn>>>,
    pub delta_t: i64,
    pub min_len: usize,
}

impl SequenceSet {
    pub fn num_segments(&self) -> usize {
        self.sequences.values().map(Vec::len).sum()
    }
}

/// Cut each user's chronological history wherever the gap between adjacent
/// check-ins exceeds `delta_t` seconds, then drop segments shorter than
/// `min_len`.
pub fn segment_sequences(log: &CheckInLog, delta_t: i64, min_len: usize) -> Result<SequenceSet> {
    if delta_t <= 0 {
        return Err(Error::Config("delta_t must be positive".to_string()));
    }
    if min_len < 2 {
        return Err(Error::Config("min_len must be at least 2".to_string()));
    }
    let mut sequences = BTreeMap::new();
    for user in log.user_index.keys() {
        let records = log.user_records(user);
        let segments: Vec<Vec<CheckIn>> = cut_at_gaps(&records, delta_t)
            .into_iter()
            .filter(|seg| seg.len() >= min_len)
            .map(|seg| seg.into_iter().cloned().collect())
            .collect();
        if !segments.is_empty() {
            sequences.insert(user.clone(), segments);
        }
    }
    Ok(SequenceSet {
        sequences,
        delta_t,
        min_len,
    })
}

/// Raw gap cuts, before any length filtering. Concatenating the returned
/// segments reproduces the input order exactly.
fn cut_at_gaps<'a>(records: &[&'a CheckIn], delta_t: i64) -> Vec<Vec<&'a CheckIn>> {
    let mut segments = Vec::new();
    let mut current: Vec<&CheckIn> = Vec::new();
    for &rec in records {
        if let Some(last) = current.last() {
            if rec.timestamp - last.timestamp > delta_t {
                segments.push(std::mem::take(&mut current));
            }
        }
        current.push(rec);
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

/// Draw one POI the user has not visited, uniformly at random.
pub fn sample_negative<R: Rng>(
    user: &str,
    interactions: &InteractionSet,
    rng: &mut R,
) -> Result<String> {
    let visited = interactions.visited.get(user);
    let num_visited = visited.map_or(0, BTreeSet::len);
    if num_visited >= interactions.universe.len() {
        return Err(Error::Sampling(format!(
            "user {user} has visited every POI in the universe"
        )));
    }
    let pool: Vec<&String> = interactions.universe.iter().collect();
    // Rejection sampling stays uniform over the unvisited set.
    loop {
        let candidate = pool[rng.random_range(0..pool.len())];
        if visited.is_none_or(|set| !set.contains(candidate)) {
            return Ok(candidate.clone());
        }
    }
}
