//! The trained model: all parameters, id dictionaries, frozen topic
//! posterior and geo data, with combined scoring and a versioned binary
//! file format.
//!
//! File layout (version 1): magic `TEMN`, format version, the training
//! config, the user and POI dictionaries, then every parameter matrix in
//! row-major order. Integers are fixed-width little-endian, reals are
//! 64-bit little-endian floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::geo::{self, DistanceMode, GeoParams, UserCentroid};
use crate::linalg::Matrix;
use crate::memnet::{self, MemNetParams};
use crate::tlda::TldaPosterior;
use crate::trainer::{Scenario, TrainConfig};

const MAGIC: &[u8; 4] = b"TEMN";
pub const FORMAT_VERSION: u32 = 1;

/// A complete recommendation model.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    /// Sorted user dictionary; positions are the dense user ids.
    pub users: Vec<String>,
    /// Sorted POI dictionary; positions are the dense POI ids.
    pub pois: Vec<String>,
    pub memnet: MemNetParams,
    pub fusion: FusionParams,
    pub geo: GeoParams,
    /// Frozen topic posterior over the model's id space.
    pub tlda_posterior: TldaPosterior,
    /// Training-split activity centroid per user.
    pub centroids: Vec<UserCentroid>,
    /// Canonical coordinates per POI.
    pub poi_coords: Vec<(f64, f64)>,
    /// Distinct training POIs per user (sorted dense ids); the support of
    /// the user memory embedding.
    pub user_support: Vec<Vec<usize>>,
}

impl Model {
    pub fn user_index(&self, user: &str) -> Result<usize> {
        self.users
            .binary_search_by(|probe| probe.as_str().cmp(user))
            .map_err(|_| Error::Lookup {
                kind: "user",
                id: user.to_string(),
            })
    }

    pub fn poi_index(&self, poi: &str) -> Result<usize> {
        self.pois
            .binary_search_by(|probe| probe.as_str().cmp(poi))
            .map_err(|_| Error::Lookup {
                kind: "poi",
                id: poi.to_string(),
            })
    }

    /// The user memory embedding from current parameters.
    pub fn memory_embedding(&self, user_idx: usize) -> Result<Vec<f64>> {
        memnet::user_memory_embedding(&self.user_support[user_idx], &self.memnet)
    }

    /// Distance between a user's centroid and a POI under the configured
    /// mode.
    pub fn poi_distance(&self, user_idx: usize, poi_idx: usize) -> f64 {
        geo::distance(
            self.centroids[user_idx],
            self.poi_coords[poi_idx],
            self.config.distance_mode,
        )
    }

    /// Combined score for dense indices, given a precomputed memory
    /// embedding: memory-network score plus the weighted geographic score.
    pub fn score_dense(&self, user_idx: usize, poi_idx: usize, p_m: &[f64]) -> Result<f64> {
        let q = self.memnet.poi_embeddings.row(poi_idx);
        let e = memnet::joint_embedding(p_m, q)?;
        let attention = memnet::attention(&e, &self.memnet.keys)?;
        let relation = memnet::relation_vector(&attention, &self.memnet.memory)?;
        let s_m = memnet::score(p_m, &relation, q);
        let s_g = geo::score(
            self.geo.user_pref[user_idx],
            self.geo.poi_infl[poi_idx],
            self.poi_distance(user_idx, poi_idx),
            self.geo.bias,
        );
        Ok(s_m + self.config.weight_geo_score * s_g)
    }

    /// Combined recommendation score for one user-POI pair.
    pub fn score(&self, user: &str, poi: &str) -> Result<f64> {
        let u = self.user_index(user)?;
        let v = self.poi_index(poi)?;
        let p_m = self.memory_embedding(u)?;
        self.score_dense(u, v, &p_m)
    }

    /// Scores for many candidates of one user; the memory embedding is
    /// computed once.
    pub fn score_candidates(&self, user: &str, candidates: &[&str]) -> Result<Vec<f64>> {
        let u = self.user_index(user)?;
        let p_m = self.memory_embedding(u)?;
        candidates
            .iter()
            .map(|poi| self.score_dense(u, self.poi_index(poi)?, &p_m))
            .collect()
    }

    /// Squared L2 norm of the regularised parameters (memory network,
    /// fusion layer, geo sensitivities).
    pub fn trainable_sq_norm(&self) -> f64 {
        let mut sum = 0.0;
        for slice in [
            self.memnet.poi_embeddings.as_slice(),
            self.memnet.keys.as_slice(),
            self.memnet.memory.as_slice(),
            self.fusion.weight.as_slice(),
            self.fusion.bias.as_slice(),
            self.geo.user_pref.as_slice(),
            self.geo.poi_infl.as_slice(),
        ] {
            sum += crate::linalg::squared_norm(slice);
        }
        sum
    }

    /// Flat parameter vector: POI embeddings, keys, memory, fusion weight,
    /// fusion bias, geo user sensitivities, geo POI sensitivities, geo
    /// bias. Mirrors [`crate::trainer::Gradients::flatten`].
    pub fn trainable_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.memnet.poi_embeddings.as_slice());
        out.extend_from_slice(self.memnet.keys.as_slice());
        out.extend_from_slice(self.memnet.memory.as_slice());
        out.extend_from_slice(self.fusion.weight.as_slice());
        out.extend_from_slice(&self.fusion.bias);
        out.extend_from_slice(&self.geo.user_pref);
        out.extend_from_slice(&self.geo.poi_infl);
        out.push(self.geo.bias);
        out
    }

    /// Overwrite every trainable parameter from a flat vector laid out as
    /// in [`Model::trainable_params`].
    pub fn set_trainable_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        {
            let mut take = |dst: &mut [f64]| {
                dst.copy_from_slice(&flat[offset..offset + dst.len()]);
                offset += dst.len();
            };
            take(self.memnet.poi_embeddings.as_mut_slice());
            take(self.memnet.keys.as_mut_slice());
            take(self.memnet.memory.as_mut_slice());
            take(self.fusion.weight.as_mut_slice());
            take(&mut self.fusion.bias);
            take(&mut self.geo.user_pref);
            take(&mut self.geo.poi_infl);
        }
        self.geo.bias = flat[offset];
        assert_eq!(offset + 1, flat.len(), "flat parameter length mismatch");
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;

        let c = &self.config;
        w.write_u8(match c.scenario {
            Scenario::Gpr => 0,
            Scenario::Cpr => 1,
            Scenario::Spr => 2,
        })?;
        w.write_u8(match c.distance_mode {
            DistanceMode::DegreesEuclidean => 0,
            DistanceMode::HaversineKm => 1,
        })?;
        w.write_u32::<LittleEndian>(c.dim_d as u32)?;
        w.write_u32::<LittleEndian>(c.slots_h as u32)?;
        w.write_u32::<LittleEndian>(c.patterns_pi as u32)?;
        w.write_u32::<LittleEndian>(c.epochs as u32)?;
        w.write_u32::<LittleEndian>(c.batch_size as u32)?;
        w.write_u64::<LittleEndian>(c.seed)?;
        for value in [
            c.learning_rate,
            c.l2_lambda,
            c.margin_m,
            c.margin_g,
            c.weight_tau,
            c.weight_geo_loss,
            c.weight_geo_score,
        ] {
            w.write_f64::<LittleEndian>(value)?;
        }

        write_strings(&mut w, &self.users)?;
        write_strings(&mut w, &self.pois)?;
        for matrix in [
            &self.memnet.poi_embeddings,
            &self.memnet.keys,
            &self.memnet.memory,
            &self.fusion.weight,
        ] {
            write_matrix(&mut w, matrix)?;
        }
        write_vector(&mut w, &self.fusion.bias)?;
        write_vector(&mut w, &self.geo.user_pref)?;
        write_vector(&mut w, &self.geo.poi_infl)?;
        w.write_f64::<LittleEndian>(self.geo.bias)?;
        for matrix in [
            &self.tlda_posterior.theta,
            &self.tlda_posterior.varphi,
            &self.tlda_posterior.phi,
        ] {
            write_matrix(&mut w, matrix)?;
        }
        for centroid in &self.centroids {
            w.write_f64::<LittleEndian>(centroid.lat)?;
            w.write_f64::<LittleEndian>(centroid.lon)?;
        }
        for &(lat, lon) in &self.poi_coords {
            w.write_f64::<LittleEndian>(lat)?;
            w.write_f64::<LittleEndian>(lon)?;
        }
        for support in &self.user_support {
            w.write_u32::<LittleEndian>(support.len() as u32)?;
            for &poi in support {
                w.write_u32::<LittleEndian>(poi as u32)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);
        let corrupt = |what: &str| Error::ModelCorrupt(what.to_string());

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| corrupt("file too short for the magic header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic header"));
        }
        let found = r
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt("truncated version field"))?;
        if found != FORMAT_VERSION {
            return Err(Error::ModelVersion {
                expected: FORMAT_VERSION,
                found,
            });
        }

        // Any short read from here on means a truncated file.
        let result: std::io::Result<Model> = (|| {
            let scenario = match r.read_u8()? {
                0 => Scenario::Gpr,
                1 => Scenario::Cpr,
                _ => Scenario::Spr,
            };
            let distance_mode = match r.read_u8()? {
                0 => DistanceMode::DegreesEuclidean,
                _ => DistanceMode::HaversineKm,
            };
            let dim_d = r.read_u32::<LittleEndian>()? as usize;
            let slots_h = r.read_u32::<LittleEndian>()? as usize;
            let patterns_pi = r.read_u32::<LittleEndian>()? as usize;
            let epochs = r.read_u32::<LittleEndian>()? as usize;
            let batch_size = r.read_u32::<LittleEndian>()? as usize;
            let seed = r.read_u64::<LittleEndian>()?;
            let mut reals = [0.0f64; 7];
            for value in &mut reals {
                *value = r.read_f64::<LittleEndian>()?;
            }
            let config = TrainConfig {
                learning_rate: reals[0],
                l2_lambda: reals[1],
                margin_m: reals[2],
                margin_g: reals[3],
                weight_tau: reals[4],
                weight_geo_loss: reals[5],
                weight_geo_score: reals[6],
                dim_d,
                slots_h,
                patterns_pi,
                epochs,
                batch_size,
                seed,
                scenario,
                distance_mode,
            };

            let users = read_strings(&mut r)?;
            let pois = read_strings(&mut r)?;
            let poi_embeddings = read_matrix(&mut r)?;
            let keys = read_matrix(&mut r)?;
            let memory = read_matrix(&mut r)?;
            let fusion_weight = read_matrix(&mut r)?;
            let fusion_bias = read_vector(&mut r)?;
            let geo_user = read_vector(&mut r)?;
            let geo_poi = read_vector(&mut r)?;
            let geo_bias = r.read_f64::<LittleEndian>()?;
            let theta = read_matrix(&mut r)?;
            let varphi = read_matrix(&mut r)?;
            let phi = read_matrix(&mut r)?;
            let mut centroids = Vec::with_capacity(users.len());
            for _ in 0..users.len() {
                centroids.push(UserCentroid {
                    lat: r.read_f64::<LittleEndian>()?,
                    lon: r.read_f64::<LittleEndian>()?,
                });
            }
            let mut poi_coords = Vec::with_capacity(pois.len());
            for _ in 0..pois.len() {
                let lat = r.read_f64::<LittleEndian>()?;
                let lon = r.read_f64::<LittleEndian>()?;
                poi_coords.push((lat, lon));
            }
            let mut user_support = Vec::with_capacity(users.len());
            for _ in 0..users.len() {
                let n = r.read_u32::<LittleEndian>()? as usize;
                let mut support = Vec::with_capacity(n);
                for _ in 0..n {
                    support.push(r.read_u32::<LittleEndian>()? as usize);
                }
                user_support.push(support);
            }
            Ok(Model {
                config,
                users,
                pois,
                memnet: MemNetParams {
                    poi_embeddings,
                    keys,
                    memory,
                },
                fusion: FusionParams {
                    weight: fusion_weight,
                    bias: fusion_bias,
                },
                geo: GeoParams {
                    user_pref: geo_user,
                    poi_infl: geo_poi,
                    bias: geo_bias,
                },
                tlda_posterior: TldaPosterior { theta, varphi, phi },
                centroids,
                poi_coords,
                user_support,
            })
        })();
        let model = result.map_err(|e| corrupt(&format!("truncated or unreadable body: {e}")))?;

        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(corrupt("trailing bytes after the model body"));
        }
        model.validate_shapes()?;
        Ok(model)
    }

    fn validate_shapes(&self) -> Result<()> {
        let c = &self.config;
        let ok = self.memnet.poi_embeddings.rows() == self.pois.len()
            && self.memnet.poi_embeddings.cols() == c.dim_d
            && self.memnet.keys.rows() == c.dim_d
            && self.memnet.keys.cols() == c.slots_h
            && self.memnet.memory.rows() == c.slots_h
            && self.memnet.memory.cols() == c.dim_d
            && self.fusion.weight.rows() == c.patterns_pi
            && self.fusion.weight.cols() == c.dim_d
            && self.fusion.bias.len() == c.patterns_pi
            && self.geo.user_pref.len() == self.users.len()
            && self.geo.poi_infl.len() == self.pois.len()
            && self.tlda_posterior.theta.rows() == self.users.len()
            && self.tlda_posterior.theta.cols() == c.patterns_pi
            && self.tlda_posterior.varphi.rows() == c.patterns_pi
            && self.tlda_posterior.varphi.cols() == self.pois.len()
            && self.centroids.len() == self.users.len()
            && self.poi_coords.len() == self.pois.len()
            && self.user_support.len() == self.users.len()
            && self
                .user_support
                .iter()
                .flatten()
                .all(|&poi| poi < self.pois.len());
        if ok {
            Ok(())
        } else {
            Err(Error::ModelCorrupt(
                "inconsistent dimensions in the model body".to_string(),
            ))
        }
    }
}

fn write_strings<W: Write>(w: &mut W, strings: &[String]) -> Result<()> {
    w.write_u32::<LittleEndian>(strings.len() as u32)?;
    for s in strings {
        let bytes = s.as_bytes();
        w.write_u32::<LittleEndian>(bytes.len() as u32)?;
        w.write_all(bytes)?;
    }
    Ok(())
}

fn read_strings<R: Read>(r: &mut R) -> std::io::Result<Vec<String>> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = r.read_u32::<LittleEndian>()? as usize;
        if len > 1 << 20 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "id string length out of range",
            ));
        }
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let s = String::from_utf8(bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.push(s);
    }
    Ok(out)
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    w.write_u32::<LittleEndian>(m.rows() as u32)?;
    w.write_u32::<LittleEndian>(m.cols() as u32)?;
    for &x in m.as_slice() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R) -> std::io::Result<Matrix> {
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    if rows.saturating_mul(cols) > 1 << 28 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "matrix dimensions out of range",
        ));
    }
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = r.read_f64::<LittleEndian>()?;
    }
    Ok(m)
}

fn write_vector<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    w.write_u32::<LittleEndian>(v.len() as u32)?;
    for &x in v {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_vector<R: Read>(r: &mut R) -> std::io::Result<Vec<f64>> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    if n > 1 << 28 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "vector length out of range",
        ));
    }
    let mut out = vec![0.0; n];
    for x in &mut out {
        *x = r.read_f64::<LittleEndian>()?;
    }
    Ok(out)
}

/// Build a small randomly-filled model; a test fixture.
#[doc(hidden)]
pub fn toy_model(num_users: usize, num_pois: usize, config: TrainConfig, seed: u64) -> Model {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let users = (0..num_users).map(|u| format!("u{u:02}")).collect();
    let pois: Vec<String> = (0..num_pois).map(|p| format!("p{p:02}")).collect();
    let memnet = MemNetParams::init(num_pois, config.dim_d, config.slots_h, 0.3, &mut rng);
    let fusion = FusionParams::init(config.patterns_pi, config.dim_d, 0.3, &mut rng);
    let mut geo = GeoParams::zeros(num_users, num_pois);
    for x in geo.user_pref.iter_mut().chain(geo.poi_infl.iter_mut()) {
        *x = rng.random_range(-0.3..0.3);
    }
    let random_rows = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
        let mut m = Matrix::zeros(rows, cols);
        for rr in 0..rows {
            let mut row: Vec<f64> = (0..cols).map(|_| rng.random_range(0.1..1.0)).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= sum);
            m.row_mut(rr).copy_from_slice(&row);
        }
        m
    };
    let theta = random_rows(&mut rng, num_users, config.patterns_pi);
    let varphi = random_rows(&mut rng, config.patterns_pi, num_pois);
    let phi = random_rows(&mut rng, 4, config.patterns_pi);
    let poi_coords: Vec<(f64, f64)> = (0..num_pois)
        .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
        .collect();
    let user_support: Vec<Vec<usize>> = (0..num_users)
        .map(|u| {
            let mut support: Vec<usize> = (0..num_pois).filter(|p| (p + u) % 2 == 0).collect();
            if support.is_empty() {
                support.push(u % num_pois);
            }
            support
        })
        .collect();
    let centroids = user_support
        .iter()
        .map(|support| {
            let coords: Vec<(f64, f64)> = support.iter().map(|&v| poi_coords[v]).collect();
            geo::user_centroid(&coords).expect("non-empty support")
        })
        .collect();
    Model {
        config,
        users,
        pois,
        memnet,
        fusion,
        geo,
        tlda_posterior: TldaPosterior { theta, varphi, phi },
        centroids,
        poi_coords,
        user_support,
    }
}
