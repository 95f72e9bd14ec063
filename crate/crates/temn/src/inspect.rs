//! Qualitative data exports: per-pattern attention profiles, geographic
//! parameter tables and pattern summaries, as plain text tables.

use std::collections::BTreeMap;
use std::io::Write;

use crate::corpus::CheckInLog;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::memnet;
use crate::model::Model;

/// Most likely pattern per user: the argmax of each theta row.
pub fn user_patterns(model: &Model) -> Vec<usize> {
    (0..model.users.len())
        .map(|u| argmax(model.tlda_posterior.theta.row(u)))
        .collect()
}

/// Most likely pattern per POI: the argmax over patterns of the venue
/// distribution column.
pub fn poi_patterns(model: &Model) -> Vec<usize> {
    let varphi = &model.tlda_posterior.varphi;
    (0..model.pois.len())
        .map(|v| {
            let column: Vec<f64> = (0..varphi.rows()).map(|z| varphi.get(z, v)).collect();
            argmax(&column)
        })
        .collect()
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Mean attention vector per pattern.
///
/// Each user contributes the average of her positive-pair attention
/// vectors (one pair per distinct training POI); users are grouped by
/// their most likely pattern. Returns the patterns-by-slots matrix and
/// the user count behind each row.
pub fn pattern_attention(model: &Model) -> Result<(Matrix, Vec<usize>)> {
    let pi = model.config.patterns_pi;
    let h = model.config.slots_h;
    let assignment = user_patterns(model);
    let mut sums = Matrix::zeros(pi, h);
    let mut counts = vec![0usize; pi];
    for (u, &pattern) in assignment.iter().enumerate() {
        let support = &model.user_support[u];
        if support.is_empty() {
            continue;
        }
        let p_m = model.memory_embedding(u)?;
        let mut user_mean = vec![0.0; h];
        for &poi in support {
            let e = memnet::joint_embedding(&p_m, model.memnet.poi_embeddings.row(poi))?;
            let w = memnet::attention(&e, &model.memnet.keys)?;
            for (acc, x) in user_mean.iter_mut().zip(&w) {
                *acc += x;
            }
        }
        let scale = 1.0 / support.len() as f64;
        for (dst, x) in sums.row_mut(pattern).iter_mut().zip(&user_mean) {
            *dst += x * scale;
        }
        counts[pattern] += 1;
    }
    for z in 0..pi {
        if counts[z] > 0 {
            let scale = 1.0 / counts[z] as f64;
            sums.row_mut(z).iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok((sums, counts))
}

/// Write the pattern-by-slot attention heat map data.
pub fn write_attention_table<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let (matrix, counts) = pattern_attention(model)?;
    let headers: Vec<String> = (0..model.config.slots_h)
        .map(|i| format!("slot{i}"))
        .collect();
    writeln!(w, "pattern\tn_users\t{}", headers.join("\t"))?;
    for z in 0..matrix.rows() {
        let row: Vec<String> = matrix.row(z).iter().map(|x| format!("{x:.6}")).collect();
        writeln!(w, "{z}\t{}\t{}", counts[z], row.join("\t"))?;
    }
    Ok(())
}

/// Write per-pattern top venues, top time slots and (when categories are
/// present in the log) top categories by venue-distribution mass.
pub fn write_pattern_summary<W: Write>(
    model: &Model,
    log: Option<&CheckInLog>,
    top_k: usize,
    mut w: W,
) -> Result<()> {
    let varphi = &model.tlda_posterior.varphi;
    let phi = &model.tlda_posterior.phi;
    let categories: BTreeMap<&str, &str> = log
        .map(|l| {
            l.records()
                .iter()
                .filter_map(|r| {
                    r.category
                        .as_deref()
                        .map(|c| (r.poi.as_str(), c))
                })
                .collect()
        })
        .unwrap_or_default();

    for z in 0..model.config.patterns_pi {
        writeln!(w, "[pattern {z}]")?;
        let mut venues: Vec<(usize, f64)> = (0..model.pois.len())
            .map(|v| (v, varphi.get(z, v)))
            .collect();
        venues.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let top: Vec<String> = venues
            .iter()
            .take(top_k)
            .map(|(v, p)| format!("{}:{:.4}", model.pois[*v], p))
            .collect();
        writeln!(w, "top_venues = {}", top.join(" "))?;

        let mut slots: Vec<(usize, f64)> = (0..phi.rows()).map(|t| (t, phi.get(t, z))).collect();
        slots.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let top_slots: Vec<String> = slots
            .iter()
            .take(top_k)
            .map(|(t, p)| format!("{t}:{p:.4}"))
            .collect();
        writeln!(w, "top_slots = {}", top_slots.join(" "))?;

        if !categories.is_empty() {
            let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
            for (v, p) in &venues {
                if let Some(cat) = categories.get(model.pois[*v].as_str()) {
                    *mass.entry(cat).or_default() += p;
                }
            }
            let mut ranked: Vec<(&str, f64)> = mass.into_iter().collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
            let top_cats: Vec<String> = ranked
                .iter()
                .take(top_k)
                .map(|(c, p)| format!("{c}:{p:.4}"))
                .collect();
            writeln!(w, "top_categories = {}", top_cats.join(" "))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Write the geo parameter tables (per user, per POI, per pattern).
pub fn write_geo_tables<W: Write>(model: &Model, w: W) -> Result<()> {
    crate::geo::write_geo_tables(
        w,
        &model.users,
        &model.pois,
        &model.geo,
        &user_patterns(model),
        &poi_patterns(model),
        model.config.patterns_pi,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy_model;
    use crate::trainer::TrainConfig;

    fn small_model() -> Model {
        let config = TrainConfig {
            dim_d: 4,
            slots_h: 3,
            patterns_pi: 2,
            ..TrainConfig::default()
        };
        toy_model(4, 8, config, 5)
    }

    #[test]
    fn attention_rows_of_populated_patterns_sum_to_one() {
        let model = small_model();
        let (matrix, counts) = pattern_attention(&model).unwrap();
        for z in 0..matrix.rows() {
            let sum: f64 = matrix.row(z).iter().sum();
            if counts[z] > 0 {
                // Mean of probability vectors stays a probability vector.
                assert!((sum - 1.0).abs() < 1e-9, "row {z} sums to {sum}");
            } else {
                assert_eq!(sum, 0.0);
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), model.users.len());
    }

    #[test]
    fn pattern_assignments_are_argmaxes() {
        let model = small_model();
        for (u, &z) in user_patterns(&model).iter().enumerate() {
            let row = model.tlda_posterior.theta.row(u);
            assert!(row.iter().all(|&x| x <= row[z]));
        }
        for (v, &z) in poi_patterns(&model).iter().enumerate() {
            let varphi = &model.tlda_posterior.varphi;
            for zz in 0..varphi.rows() {
                assert!(varphi.get(zz, v) <= varphi.get(z, v));
            }
        }
    }

    #[test]
    fn exports_render_without_errors() {
        let model = small_model();
        let mut attention = Vec::new();
        write_attention_table(&model, &mut attention).unwrap();
        assert!(String::from_utf8(attention).unwrap().contains("pattern\tn_users"));

        let mut geo = Vec::new();
        write_geo_tables(&model, &mut geo).unwrap();
        let geo_text = String::from_utf8(geo).unwrap();
        assert!(geo_text.contains("user\trho_u\tpattern"));
        assert!(geo_text.contains("pattern\tmean_rho_u"));

        let mut summary = Vec::new();
        write_pattern_summary(&model, None, 3, &mut summary).unwrap();
        let text = String::from_utf8(summary).unwrap();
        assert!(text.contains("[pattern 0]"));
        assert!(text.contains("top_venues"));
        assert!(!text.contains("top_categories")); // no log supplied
    }
}
