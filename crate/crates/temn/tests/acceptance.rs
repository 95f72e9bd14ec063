//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its key measurements (run with `--nocapture` to see them all).

mod common;

use std::collections::BTreeSet;
use std::sync::LazyLock;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use temn::corpus::{self, CheckInLog, DatasetSplit};
use temn::eval::{self, EvalOptions, PopularityScorer, RandomScorer};
use temn::memnet::{self, Triple};
use temn::model::{toy_model, Model};
use temn::sampling::mix_seed_str;
use temn::synthgen::{self, SynthConfig, SynthGroundTruth};
use temn::tlda::{self, TldaConfig, TldaModel, Token};
use temn::trainer::{self, FitOptions, FitResult, TrainConfig};
use temn::{fusion, geo, inspect};

// ---------------------------------------------------------------------------
// Shared fixtures (expensive; computed once, timed at the point of creation)

static SYNTH: LazyLock<(CheckInLog, SynthGroundTruth)> =
    LazyLock::new(|| synthgen::generate(&SynthConfig::default()).expect("default corpus"));

static SPLIT: LazyLock<DatasetSplit> = LazyLock::new(|| {
    corpus::chronological_split(&SYNTH.0, (0.70, 0.15, 0.15)).expect("split")
});

static INTERACTIONS: LazyLock<corpus::InteractionSet> = LazyLock::new(|| {
    let s = &*SPLIT;
    corpus::build_interactions_all(&[&s.train, &s.validation, &s.test])
});

fn train_config() -> TrainConfig {
    // Stated defaults with the embedding size reduced to 16 for speed.
    TrainConfig {
        dim_d: 16,
        ..TrainConfig::default()
    }
}

fn model_id_space(split: &DatasetSplit) -> (Vec<String>, Vec<String>) {
    let users: Vec<String> = split.train.users().map(str::to_string).collect();
    let mut pois: BTreeSet<String> = BTreeSet::new();
    for log in [&split.train, &split.validation, &split.test] {
        pois.extend(log.pois().map(str::to_string));
    }
    (users, pois.into_iter().collect())
}

/// Topic posterior shared by the trained model and its ablations; the
/// configuration matches what `fit` would run internally.
static TLDA10: LazyLock<(TldaModel, Duration)> = LazyLock::new(|| {
    let started = Instant::now();
    let split = &*SPLIT;
    let (users, pois) = model_id_space(split);
    let config = TldaConfig::with_patterns(10, mix_seed_str(train_config().seed, "tlda"));
    let model = trainer::run_tlda(split, &users, &pois, &config).expect("topic model");
    (model, started.elapsed())
});

static FULL_FIT: LazyLock<(FitResult, Duration)> = LazyLock::new(|| {
    let started = Instant::now();
    let opts = FitOptions {
        tlda: Some(&TLDA10.0),
        ..FitOptions::default()
    };
    let result = trainer::fit_with(&SPLIT, &opts, &train_config()).expect("training");
    (result, started.elapsed())
});

fn test_eval_options() -> EvalOptions {
    EvalOptions {
        cutoffs: (1..=10).collect(),
        negatives_per_test: 100,
        seed: 1234,
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

fn pick_distinct<R: Rng>(rng: &mut R, pool: &[usize]) -> usize {
    pool[rng.random_range(0..pool.len())]
}

/// A usable random instance stays clear of every hinge/ReLU kink so the
/// finite-difference oracle sees a locally smooth objective.
fn instance_is_smooth(model: &Model, batch: &[Triple], config: &TrainConfig) -> bool {
    let margin_guard = 1e-3;
    for t in batch {
        let act = memnet::score_pair(&model.memnet, &t.support, t.pos, t.neg).unwrap();
        if (act.s_neg - act.s_pos + config.margin_m).abs() < margin_guard {
            return false;
        }
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
        if (s_neg - s_pos + config.margin_g).abs() < margin_guard {
            return false;
        }
    }
    let users: BTreeSet<usize> = batch.iter().map(|t| t.user).collect();
    for u in users {
        let p_m = model.memory_embedding(u).unwrap();
        for i in 0..model.config.patterns_pi {
            let pre = temn::linalg::dot(model.fusion.weight.row(i), &p_m) + model.fusion.bias[i];
            if pre.abs() < margin_guard {
                return false;
            }
        }
    }
    true
}

#[test]
fn acceptance_1_gradient_suite() {
    let started = Instant::now();
    let base_config = TrainConfig {
        dim_d: 4,
        slots_h: 3,
        patterns_pi: 2,
        ..TrainConfig::default()
    };
    let step = 1e-5;
    let mut checked = 0u32;
    let mut attempts = 0u64;
    while checked < 100 {
        attempts += 1;
        assert!(attempts < 1000, "could not find 100 smooth instances");
        let seed = 1000 + attempts;
        let model = toy_model(3, 6, base_config.clone(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<Triple> = (0..3)
            .map(|u| {
                let support = model.user_support[u].clone();
                let complement: Vec<usize> = (0..6).filter(|p| !support.contains(p)).collect();
                Triple {
                    user: u,
                    pos: pick_distinct(&mut rng, &support),
                    neg: pick_distinct(&mut rng, &complement),
                    support,
                }
            })
            .collect();
        if !instance_is_smooth(&model, &batch, &base_config) {
            continue;
        }
        checked += 1;

        let cfg_m = TrainConfig {
            weight_tau: 0.0,
            weight_geo_loss: 0.0,
            ..base_config.clone()
        };
        let cfg_tau = TrainConfig {
            weight_tau: 0.7,
            weight_geo_loss: 0.0,
            ..base_config.clone()
        };
        let cfg_geo = TrainConfig {
            weight_tau: 0.0,
            weight_geo_loss: 0.3,
            ..base_config.clone()
        };
        let cfg_full = TrainConfig {
            weight_tau: 0.2,
            weight_geo_loss: 0.1,
            l2_lambda: 0.0001,
            ..base_config.clone()
        };

        let g_m = trainer::batch_gradients(&model, &batch, &cfg_m).unwrap().1.flatten();
        let g_mtau = trainer::batch_gradients(&model, &batch, &cfg_tau).unwrap().1.flatten();
        let g_mgeo = trainer::batch_gradients(&model, &batch, &cfg_geo).unwrap().1.flatten();
        let g_tau: Vec<f64> = g_mtau.iter().zip(&g_m).map(|(a, b)| (a - b) / 0.7).collect();
        let g_geo: Vec<f64> = g_mgeo.iter().zip(&g_m).map(|(a, b)| (a - b) / 0.3).collect();
        let (_, mut full) = trainer::batch_gradients(&model, &batch, &cfg_full).unwrap();
        trainer::add_l2_gradients(&model, &cfg_full, &mut full);
        let g_full = full.flatten();

        let num_params = model.trainable_params().len();
        for idx in 0..num_params {
            let fd_m = common::finite_difference(&model, idx, step, |m| {
                common::loss_memnet(m, &batch, cfg_m.margin_m).unwrap()
            });
            assert!(
                common::gradients_agree(g_m[idx], fd_m),
                "memory-network loss, seed {seed}, param {idx}: {} vs {fd_m}",
                g_m[idx]
            );
            let fd_tau = common::finite_difference(&model, idx, step, |m| {
                common::loss_fusion(m, &batch).unwrap()
            });
            assert!(
                common::gradients_agree(g_tau[idx], fd_tau),
                "topic loss, seed {seed}, param {idx}: {} vs {fd_tau}",
                g_tau[idx]
            );
            let fd_geo = common::finite_difference(&model, idx, step, |m| {
                common::loss_geo(m, &batch, cfg_geo.margin_g)
            });
            assert!(
                common::gradients_agree(g_geo[idx], fd_geo),
                "geo loss, seed {seed}, param {idx}: {} vs {fd_geo}",
                g_geo[idx]
            );
            let fd_full = common::finite_difference(&model, idx, step, |m| {
                common::loss_total(m, &batch, &cfg_full).unwrap()
            });
            assert!(
                common::gradients_agree(g_full[idx], fd_full),
                "combined loss, seed {seed}, param {idx}: {} vs {fd_full}",
                g_full[idx]
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "acceptance 1 (gradient suite): PASS — 100 instances, all four losses, {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 2. Gibbs enumeration oracle

fn log_rising(a: f64, n: f64) -> f64 {
    let mut sum = 0.0;
    let mut k = 0.0;
    while k < n - 0.5 {
        sum += (a + k).ln();
        k += 1.0;
    }
    sum
}

/// Exact collapsed posterior over all `pi^T` assignments by enumeration.
fn enumerate_posterior(
    tokens: &[Token],
    pi: usize,
    num_users: usize,
    num_slots: usize,
    num_venues: usize,
    alpha: f64,
    gamma: f64,
    beta: f64,
) -> Vec<f64> {
    let t = tokens.len();
    let outcomes = pi.pow(t as u32);
    let mut log_weights = Vec::with_capacity(outcomes);
    for code in 0..outcomes {
        let mut user_pattern = vec![0.0; num_users * pi];
        let mut time_pattern = vec![0.0; num_slots * pi];
        let mut pattern_venue = vec![0.0; pi * num_venues];
        let mut pattern_total = vec![0.0; pi];
        let mut rest = code;
        for token in tokens {
            let z = rest % pi;
            rest /= pi;
            user_pattern[token.user * pi + z] += 1.0;
            time_pattern[token.slot * pi + z] += 1.0;
            pattern_venue[z * num_venues + token.venue] += 1.0;
            pattern_total[z] += 1.0;
        }
        let mut lw = 0.0;
        for &n in &user_pattern {
            lw += log_rising(alpha, n);
        }
        for &n in &time_pattern {
            lw += log_rising(gamma, n);
        }
        for &n in &pattern_venue {
            lw += log_rising(beta, n);
        }
        for &n in &pattern_total {
            lw -= log_rising(num_venues as f64 * beta, n);
        }
        log_weights.push(lw);
    }
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn gibbs_total_variation(
    tokens: Vec<Token>,
    pi: usize,
    num_users: usize,
    num_slots: usize,
    num_venues: usize,
    config: &TldaConfig,
) -> f64 {
    let exact = enumerate_posterior(
        &tokens,
        pi,
        num_users,
        num_slots,
        num_venues,
        config.alpha,
        config.gamma,
        config.beta,
    );
    let t = tokens.len();
    let mut state = tlda::gibbs_init(tokens, num_users, num_venues, config).unwrap();
    for _ in 0..1000 {
        state.sweep();
    }
    let samples = 100_000;
    let mut counts = vec![0u64; exact.len()];
    for _ in 0..samples {
        state.sweep();
        let mut code = 0usize;
        for i in (0..t).rev() {
            code = code * pi + state.assignments[i];
        }
        counts[code] += 1;
    }
    exact
        .iter()
        .zip(&counts)
        .map(|(p, &c)| (p - c as f64 / samples as f64).abs())
        .sum::<f64>()
        / 2.0
}

#[test]
fn acceptance_2_gibbs_enumeration_oracle() {
    let started = Instant::now();

    // 4 tokens, 2 patterns: 16 joint outcomes.
    let tokens_a = vec![
        Token { user: 0, slot: 0, venue: 0 },
        Token { user: 0, slot: 1, venue: 1 },
        Token { user: 1, slot: 0, venue: 1 },
        Token { user: 1, slot: 1, venue: 0 },
    ];
    let config_a = TldaConfig {
        num_patterns: 2,
        alpha: 0.8,
        beta: 0.6,
        gamma: 0.7,
        time_slots: 2,
        utc_offset: 0,
        burn_in: 1000,
        samples: 1,
        lag: 1,
        seed: 2024,
    };
    let tv_a = gibbs_total_variation(tokens_a, 2, 2, 2, 2, &config_a);
    assert!(tv_a < 0.02, "4-token corpus TV = {tv_a}");

    // 3 tokens, 3 patterns, asymmetric counts: 27 joint outcomes.
    let tokens_b = vec![
        Token { user: 0, slot: 0, venue: 0 },
        Token { user: 0, slot: 0, venue: 2 },
        Token { user: 1, slot: 0, venue: 1 },
    ];
    let config_b = TldaConfig {
        num_patterns: 3,
        alpha: 0.5,
        beta: 0.3,
        gamma: 1.1,
        time_slots: 1,
        utc_offset: 0,
        burn_in: 1000,
        samples: 1,
        lag: 1,
        seed: 77,
    };
    let tv_b = gibbs_total_variation(tokens_b, 3, 2, 1, 3, &config_b);
    assert!(tv_b < 0.02, "3-token corpus TV = {tv_b}");

    // 8 tokens, 2 patterns: 256 joint outcomes.
    let tokens_c: Vec<Token> = (0..8)
        .map(|i| Token {
            user: i % 3,
            slot: i % 2,
            venue: (i / 2) % 2,
        })
        .collect();
    let config_c = TldaConfig {
        num_patterns: 2,
        alpha: 1.2,
        beta: 0.4,
        gamma: 0.9,
        time_slots: 2,
        utc_offset: 0,
        burn_in: 1000,
        samples: 1,
        lag: 1,
        seed: 3,
    };
    let tv_c = gibbs_total_variation(tokens_c, 2, 3, 2, 2, &config_c);
    assert!(tv_c < 0.02, "8-token corpus TV = {tv_c}");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "acceptance 2 (sampler vs enumeration): PASS — TV {tv_a:.4}/{tv_b:.4}/{tv_c:.4}, {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 3. Pattern recovery on the planted corpus

/// Best pattern relabelling (all permutations; the pattern count is small).
fn best_permutation(confusion: &[Vec<usize>]) -> Vec<usize> {
    let k = confusion.len();
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..k).collect();
    permute(&mut perm, 0, &mut |p| {
        let trace: usize = (0..k).map(|z| confusion[z][p[z]]).sum();
        if best.as_ref().is_none_or(|(b, _)| trace > *b) {
            best = Some((trace, p.to_vec()));
        }
    });
    best.expect("non-empty permutation set").1
}

fn permute(values: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == values.len() {
        visit(values);
        return;
    }
    for i in start..values.len() {
        values.swap(start, i);
        permute(values, start + 1, visit);
        values.swap(start, i);
    }
}

#[test]
fn acceptance_3_pattern_recovery() {
    let started = Instant::now();
    let (log, truth) = &*SYNTH;
    let config = TldaConfig::with_patterns(3, 2027);
    let model = tlda::run(log, &config).expect("topic model on the planted corpus");

    // Learned label per POI: the pattern whose venue distribution gives it
    // the most mass.
    let varphi = &model.posterior.varphi;
    let learned: Vec<usize> = (0..model.venues.len())
        .map(|v| {
            (0..3)
                .max_by(|&a, &b| varphi.get(a, v).partial_cmp(&varphi.get(b, v)).unwrap())
                .unwrap()
        })
        .collect();
    let planted: Vec<usize> = model
        .venues
        .iter()
        .map(|poi| truth.poi_patterns[poi])
        .collect();

    // Purity: majority planted label within each learned cluster.
    let mut confusion = vec![vec![0usize; 3]; 3];
    for (&l, &p) in learned.iter().zip(&planted) {
        confusion[l][p] += 1;
    }
    let majority: usize = confusion.iter().map(|row| row.iter().max().unwrap()).sum();
    let purity = majority as f64 / learned.len() as f64;
    assert!(purity >= 0.9, "purity = {purity}");

    // Mean total variation between the relabelled user mixtures and the
    // planted mixtures.
    let perm = best_permutation(&confusion);
    let mut tv_sum = 0.0;
    for (u, user) in model.users.iter().enumerate() {
        let mixture = &truth.user_mixtures[user];
        let row = model.posterior.theta.row(u);
        let tv: f64 = (0..3)
            .map(|z| (row[z] - mixture[perm[z]]).abs())
            .sum::<f64>()
            / 2.0;
        tv_sum += tv;
    }
    let mean_tv = tv_sum / model.users.len() as f64;
    assert!(mean_tv <= 0.15, "mean TV = {mean_tv}");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(180), "took {elapsed:?}");
    println!(
        "acceptance 3 (pattern recovery): PASS — purity {purity:.3}, mean TV {mean_tv:.3}, {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 4. Learning signal against trivial baselines

#[test]
fn acceptance_4_learning_signal() {
    let (fit, fit_dur) = &*FULL_FIT;
    let tlda_dur = TLDA10.1;
    let split = &*SPLIT;
    let opts = test_eval_options();

    let model_report = eval::evaluate(&fit.model, &split.test, &INTERACTIONS, &opts).unwrap();
    let popularity = PopularityScorer::from_train_log(&split.train);
    let pop_report = eval::evaluate(&popularity, &split.test, &INTERACTIONS, &opts).unwrap();
    let random = RandomScorer { seed: 555 };
    let rand_report = eval::evaluate(&random, &split.test, &INTERACTIONS, &opts).unwrap();

    let (hr_m, ndcg_m) = (model_report.hr(10).unwrap(), model_report.ndcg(10).unwrap());
    let (hr_p, ndcg_p) = (pop_report.hr(10).unwrap(), pop_report.ndcg(10).unwrap());
    let (hr_r, ndcg_r) = (rand_report.hr(10).unwrap(), rand_report.ndcg(10).unwrap());

    assert!(hr_m > hr_p && hr_m > hr_r, "HR@10: model {hr_m}, pop {hr_p}, random {hr_r}");
    assert!(
        ndcg_m > ndcg_p && ndcg_m > ndcg_r,
        "NDCG@10: model {ndcg_m}, pop {ndcg_p}, random {ndcg_r}"
    );
    assert!(
        hr_m - hr_p.max(hr_r) >= 0.05,
        "HR@10 margin too small: model {hr_m} vs best baseline {}",
        hr_p.max(hr_r)
    );

    let total = *fit_dur + tlda_dur;
    assert!(total < Duration::from_secs(300), "took {total:?}");
    println!(
        "acceptance 4 (learning signal): PASS — HR@10 {hr_m:.3} vs pop {hr_p:.3} / rand {hr_r:.3}, \
         NDCG@10 {ndcg_m:.3} vs {ndcg_p:.3} / {ndcg_r:.3}, train {total:?}"
    );
}

// ---------------------------------------------------------------------------
// 5. Ablation direction

#[test]
fn acceptance_5_ablation_direction() {
    let (fit, _) = &*FULL_FIT;
    let split = &*SPLIT;
    let opts = test_eval_options();
    let full_ndcg = eval::evaluate(&fit.model, &split.test, &INTERACTIONS, &opts)
        .unwrap()
        .ndcg(10)
        .unwrap();

    let mut results = Vec::new();
    for (name, patch) in [
        ("no-topic", TrainConfig { weight_tau: 0.0, ..train_config() }),
        (
            "no-geo",
            TrainConfig {
                weight_geo_loss: 0.0,
                weight_geo_score: 0.0,
                ..train_config()
            },
        ),
    ] {
        let fit_opts = FitOptions {
            tlda: Some(&TLDA10.0),
            ..FitOptions::default()
        };
        let ablated = trainer::fit_with(split, &fit_opts, &patch).unwrap();
        let ndcg = eval::evaluate(&ablated.model, &split.test, &INTERACTIONS, &opts)
            .unwrap()
            .ndcg(10)
            .unwrap();
        assert!(
            ndcg <= full_ndcg + 0.01,
            "{name} ablation NDCG@10 {ndcg} exceeds full {full_ndcg} + 0.01"
        );
        results.push((name, ndcg));
    }
    println!(
        "acceptance 5 (ablation direction): PASS — full {full_ndcg:.3}, {} {:.3}, {} {:.3}",
        results[0].0, results[0].1, results[1].0, results[1].1
    );
}

// ---------------------------------------------------------------------------
// 6. Metric oracle

#[test]
fn acceptance_6_metric_oracle() {
    for rank in 1..=101usize {
        for cutoff in 1..=10usize {
            let hr = eval::hit_ratio(rank, cutoff);
            assert_eq!(hr, if rank <= cutoff { 1.0 } else { 0.0 });
            // Independent route: natural logarithms instead of log2.
            let expected = if rank <= cutoff {
                std::f64::consts::LN_2 / ((rank + 1) as f64).ln()
            } else {
                0.0
            };
            let got = eval::ndcg(rank, cutoff);
            assert!(
                (got - expected).abs() < 1e-12,
                "rank {rank} cutoff {cutoff}: {got} vs {expected}"
            );
        }
    }
    // Exact spot values.
    assert_eq!(eval::ndcg(1, 10), 1.0);
    assert_eq!(eval::ndcg(3, 10), 0.5);
    println!("acceptance 6 (metric oracle): PASS — ranks 1..=101, cutoffs 1..=10");
}

// ---------------------------------------------------------------------------
// 7. Protocol calibration with a random scorer

#[test]
fn acceptance_7_protocol_calibration() {
    // A dedicated corpus where every user has a large eligible pool, so
    // all 10^4+ events run under the full 100-negative protocol.
    let mut train = Vec::new();
    let mut test = Vec::new();
    for u in 0..520 {
        let user = format!("u{u:03}");
        for p in 0..3 {
            train.push(temn::corpus::CheckIn {
                user: user.clone(),
                poi: format!("seen-{u}-{p}"),
                timestamp: p,
                lat: 0.0,
                lon: 0.0,
                category: None,
            });
        }
        for e in 0..20 {
            test.push(temn::corpus::CheckIn {
                user: user.clone(),
                poi: format!("target-{u:03}-{e:02}"),
                timestamp: 100 + e,
                lat: 0.0,
                lon: 0.0,
                category: None,
            });
        }
    }
    for p in 0..150 {
        train.push(temn::corpus::CheckIn {
            user: "filler".to_string(),
            poi: format!("cold{p:03}"),
            timestamp: p,
            lat: 0.0,
            lon: 0.0,
            category: None,
        });
    }
    let train = CheckInLog::from_records(train);
    let test = CheckInLog::from_records(test);
    let interactions = corpus::build_interactions_all(&[&train, &test]);

    let opts = EvalOptions {
        cutoffs: vec![1, 5, 10],
        negatives_per_test: 100,
        seed: 707,
    };
    let scorer = RandomScorer { seed: 31 };
    let report = eval::evaluate(&scorer, &test, &interactions, &opts).unwrap();
    assert!(
        report.num_test_events >= 10_000,
        "only {} events",
        report.num_test_events
    );
    assert_eq!(report.num_events_skipped, 0);
    for cutoff in [1usize, 5, 10] {
        let expected = cutoff as f64 / 101.0;
        let got = report.hr(cutoff).unwrap();
        assert!(
            (got - expected).abs() < 0.01,
            "HR@{cutoff} = {got}, expected {expected}"
        );
    }
    println!(
        "acceptance 7 (protocol calibration): PASS — HR@1/5/10 = {:.4}/{:.4}/{:.4} over {} events",
        report.hr(1).unwrap(),
        report.hr(5).unwrap(),
        report.hr(10).unwrap(),
        report.num_test_events
    );
}

// ---------------------------------------------------------------------------
// 8. Determinism and persistence

#[test]
fn acceptance_8_determinism_and_persistence() {
    // Bitwise-identical training under a fixed seed.
    let synth = SynthConfig {
        num_users: 60,
        num_pois: 40,
        num_patterns: 3,
        checkins_per_user: (50, 50),
        pattern_time_profiles: synthgen::default_time_profiles(3, 6),
        seed: 21,
        ..SynthConfig::default()
    };
    let (log, _) = synthgen::generate(&synth).unwrap();
    let split = corpus::chronological_split(&log, (0.70, 0.15, 0.15)).unwrap();
    let config = TrainConfig {
        dim_d: 8,
        slots_h: 4,
        patterns_pi: 3,
        epochs: 4,
        batch_size: 64,
        seed: 11,
        ..TrainConfig::default()
    };
    let tlda_config = TldaConfig {
        time_slots: 6,
        burn_in: 60,
        samples: 3,
        lag: 2,
        ..TldaConfig::with_patterns(3, 5)
    };
    let run = || {
        let opts = FitOptions {
            tlda_config: Some(tlda_config.clone()),
            ..FitOptions::default()
        };
        trainer::fit_with(&split, &opts, &config).unwrap()
    };
    let fit_a = run();
    let fit_b = run();
    let params_a = fit_a.model.trainable_params();
    let params_b = fit_b.model.trainable_params();
    assert_eq!(params_a.len(), params_b.len());
    for (x, y) in params_a.iter().zip(&params_b) {
        assert_eq!(x.to_bits(), y.to_bits());
    }

    // Bitwise-identical evaluation under a fixed seed.
    let (fit, _) = &*FULL_FIT;
    let test_split = &*SPLIT;
    let opts = test_eval_options();
    let report_a = eval::evaluate(&fit.model, &test_split.test, &INTERACTIONS, &opts).unwrap();
    let report_b = eval::evaluate(&fit.model, &test_split.test, &INTERACTIONS, &opts).unwrap();
    for cutoff in 1..=10 {
        assert_eq!(
            report_a.hr(cutoff).unwrap().to_bits(),
            report_b.hr(cutoff).unwrap().to_bits()
        );
        assert_eq!(
            report_a.ndcg(cutoff).unwrap().to_bits(),
            report_b.ndcg(cutoff).unwrap().to_bits()
        );
    }

    // Save/load round-trips with exact score equality.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    fit.model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..500 {
        let user = &fit.model.users[rng.random_range(0..fit.model.users.len())];
        let poi = &fit.model.pois[rng.random_range(0..fit.model.pois.len())];
        let a = fit.model.score(user, poi).unwrap();
        let b = loaded.score(user, poi).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "{user},{poi}");
    }
    let report_loaded =
        eval::evaluate(&loaded, &test_split.test, &INTERACTIONS, &opts).unwrap();
    assert_eq!(
        report_a.ndcg(10).unwrap().to_bits(),
        report_loaded.ndcg(10).unwrap().to_bits()
    );
    println!("acceptance 8 (determinism and persistence): PASS");
}

// ---------------------------------------------------------------------------
// 9. Invariant suites

#[test]
fn acceptance_9_invariant_suites() {
    // Attention normalisation over 10^4 random inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..10_000 {
        let params = memnet::MemNetParams::init(1, 6, 5, 2.0, &mut rng);
        let e: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
        let w = memnet::attention(&e, &params.keys).unwrap();
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    // Count conservation over sweeps (exact integer equality).
    let tokens: Vec<Token> = (0..24)
        .map(|i| Token {
            user: i % 4,
            slot: i % 3,
            venue: i % 5,
        })
        .collect();
    let config = TldaConfig {
        num_patterns: 3,
        alpha: 0.7,
        beta: 0.2,
        gamma: 0.4,
        time_slots: 3,
        utc_offset: 0,
        burn_in: 0,
        samples: 1,
        lag: 1,
        seed: 8,
    };
    let mut state = tlda::gibbs_init(tokens, 4, 5, &config).unwrap();
    for _ in 0..50 {
        state.sweep();
        assert!(state.counts_consistent());
        let total: f64 = state.pattern_total.iter().sum();
        assert_eq!(total, 24.0);
    }

    // Posterior rows are strictly positive probability vectors.
    let posterior = state.posterior_estimates();
    for matrix in [&posterior.theta, &posterior.varphi, &posterior.phi] {
        for r in 0..matrix.rows() {
            let row = matrix.row(r);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    // Geo bias cancellation on random inputs.
    for _ in 0..10_000 {
        let rho_u = rng.random_range(-2.0..2.0);
        let rho_v = rng.random_range(-2.0..2.0);
        let rho_j = rng.random_range(-2.0..2.0);
        let l_v = rng.random_range(0.0..50.0);
        let l_j = rng.random_range(0.0..50.0);
        let bias = rng.random_range(-100.0..100.0);
        let base = geo::pair_loss(
            geo::score(rho_u, rho_v, l_v, 0.0),
            geo::score(rho_u, rho_j, l_j, 0.0),
            0.2,
        );
        let shifted = geo::pair_loss(
            geo::score(rho_u, rho_v, l_v, bias),
            geo::score(rho_u, rho_j, l_j, bias),
            0.2,
        );
        assert!((base - shifted).abs() < 1e-9);
    }

    // Split monotonicity and exact partition on the planted corpus.
    let split = &*SPLIT;
    assert!(split.dropped_users.is_empty());
    assert_eq!(
        split.train.len() + split.validation.len() + split.test.len(),
        SYNTH.0.len()
    );
    for user in SYNTH.0.users() {
        let max_train = split
            .train
            .user_records(user)
            .iter()
            .map(|r| r.timestamp)
            .max()
            .unwrap();
        let min_val = split
            .validation
            .user_records(user)
            .iter()
            .map(|r| r.timestamp)
            .min()
            .unwrap();
        let max_val = split
            .validation
            .user_records(user)
            .iter()
            .map(|r| r.timestamp)
            .max()
            .unwrap();
        let min_test = split
            .test
            .user_records(user)
            .iter()
            .map(|r| r.timestamp)
            .min()
            .unwrap();
        assert!(max_train <= min_val && max_val <= min_test);
    }

    // Segmentation soundness on the planted corpus (10-day threshold cuts
    // some of the week-spaced histories).
    let delta_t = 10 * 86_400;
    let sequences = corpus::segment_sequences(&split.train, delta_t, 5).unwrap();
    assert!(sequences.num_segments() > 0);
    for segments in sequences.sequences.values() {
        for segment in segments {
            assert!(segment.len() >= 5);
            for pair in segment.windows(2) {
                assert!(pair[1].timestamp - pair[0].timestamp <= delta_t);
            }
        }
    }

    // Negative sampling never returns a visited POI (10^5 seeded draws).
    let interactions = corpus::build_interactions(&split.train);
    let users: Vec<&str> = split.train.users().take(20).collect();
    for _ in 0..100_000 / users.len() {
        for user in &users {
            let poi = corpus::sample_negative(user, &interactions, &mut rng).unwrap();
            assert!(!interactions.has_visited(user, &poi));
        }
    }

    // The trained model's attention export stays on the probability simplex.
    let (fit, _) = &*FULL_FIT;
    let (attention, counts) = inspect::pattern_attention(&fit.model).unwrap();
    for z in 0..attention.rows() {
        if counts[z] > 0 {
            let sum: f64 = attention.row(z).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    // Fusion outputs are probability vectors for random finite inputs.
    for _ in 0..1_000 {
        let params = fusion::FusionParams::init(4, 5, 1.5, &mut rng);
        let p: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
        let out = fusion::forward(&p, &params).unwrap();
        let sum: f64 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    println!("acceptance 9 (invariant suites): PASS");
}
