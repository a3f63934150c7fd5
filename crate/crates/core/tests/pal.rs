use std::collections::{BTreeMap, BTreeSet};

use icl_core::pal::{
    choose_favorite, consensus_pair, favor_score, mutual_pairs, run_pal, run_pal_round, theorem3_check,
    theorem4_slack, theorem4_threshold, zero_balance_costs, AlEntity, ExchangeParams, Favor, GainEstimates,
    Learner, PalConfig, PalEntitySpec, PalMode, Split, ZeroBalancePricing,
};
use icl_core::rng::RunSeed;
use icl_core::{EntityId, IclError};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn e(i: u32) -> EntityId {
    EntityId(i)
}

fn normals(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Least squares line through `(x[r], y[r])`.
fn ols(x: &[Vec<f64>], y: &[f64], rows: &[usize]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mx = rows.iter().map(|&r| x[r][0]).sum::<f64>() / n;
    let my = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
    let sxy: f64 = rows.iter().map(|&r| (x[r][0] - mx) * (y[r] - my)).sum();
    let sxx: f64 = rows.iter().map(|&r| (x[r][0] - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn mse(y: &[f64], f: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| (y[r] - f[r]).powi(2)).sum::<f64>() / rows.len() as f64
}

const PLAIN: Learner = Learner::Ridge { lambda: 0.0 };
const PARAMS: ExchangeParams = ExchangeParams {
    blend: 0.5,
    step_size: 0.3,
};

#[test]
fn exchange_matches_hand_computed_regressions() {
    let rng = &mut ChaCha8Rng::seed_from_u64(3);
    let n = 200;
    let split = Split::contiguous(n, 0.2, 0.3).unwrap();
    let xa = normals(rng, n, 1);
    let xb = normals(rng, n, 1);
    let ya: Vec<f64> = (0..n).map(|s| xa[s][0] + 2.0 * xb[s][0] + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let yb: Vec<f64> = (0..n).map(|s| xb[s][0] - xa[s][0]).collect();
    let a = AlEntity::new(e(0), 1.0, PLAIN, xa.clone(), ya.clone(), &split);
    let b = AlEntity::new(e(1), 1.0, PLAIN, xb.clone(), yb.clone(), &split);
    let ex = run_pal_round(&a, &b, &split, PARAMS, 1).unwrap();

    let line = |(k, c): (f64, f64), x: &[Vec<f64>]| -> Vec<f64> { x.iter().map(|v| k * v[0] + c).collect() };
    let f0 = line(ols(&xa, &ya, &split.train), &xa);
    let r: Vec<f64> = ya.iter().zip(&f0).map(|(y, f)| y - f).collect();
    let h = line(ols(&xa, &r, &split.train), &xa);
    let local: Vec<f64> = f0.iter().zip(&h).map(|(f, h)| f + 0.3 * h).collect();
    let left: Vec<f64> = ya.iter().zip(&local).map(|(y, f)| y - f).collect();
    let g = line(ols(&xb, &left, &split.train), &xb);
    let full: Vec<f64> = local.iter().zip(&g).map(|(f, g)| f + 0.3 * g).collect();

    for s in 0..n {
        assert!((ex.a.counterfactual[s] - local[s]).abs() < 1e-9);
        assert!((ex.a.prediction[s] - full[s]).abs() < 1e-9);
    }
    let v = &split.validation;
    let mu_pair = mse(&ya, &f0, v) - mse(&ya, &full, v);
    let mu_from = mse(&ya, &local, v) - mse(&ya, &full, v);
    assert!((ex.a.mu_pair - mu_pair).abs() < 1e-9);
    assert!((ex.a.mu_from_partner - mu_from).abs() < 1e-9);
    assert!(ex.a.mu_from_partner > 0.5);
}

#[test]
fn noise_partner_adds_nothing() {
    let rng = &mut ChaCha8Rng::seed_from_u64(4);
    let n = 1000;
    let split = Split::contiguous(n, 0.2, 0.3).unwrap();
    let xa = normals(rng, n, 2);
    let ya: Vec<f64> = xa.iter().map(|x| x[0] - 0.5 * x[1] + rng.sample::<f64, _>(StandardNormal)).collect();
    let xb = normals(rng, n, 2);
    let yb: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let a = AlEntity::new(e(0), 1.0, Learner::default(), xa, ya, &split);
    let b = AlEntity::new(e(1), 1.0, Learner::default(), xb, yb, &split);
    let baseline = a.loss(&a.prediction, &split.validation);
    let ex = run_pal_round(&a, &b, &split, PARAMS, 1).unwrap();
    assert!(ex.a.mu_from_partner.abs() < 0.1 * baseline, "{}", ex.a.mu_from_partner);
}

#[test]
fn partner_with_missing_predictor_helps() {
    let rng = &mut ChaCha8Rng::seed_from_u64(5);
    let n = 400;
    let split = Split::contiguous(n, 0.2, 0.3).unwrap();
    let xa = normals(rng, n, 1);
    let xb = normals(rng, n, 1);
    let ya: Vec<f64> = (0..n).map(|s| xa[s][0] + xb[s][0]).collect();
    let a = AlEntity::new(e(0), 1.0, Learner::default(), xa, ya, &split);
    let b = AlEntity::new(e(1), 1.0, Learner::default(), xb, vec![0.0; n], &split);
    let ex = run_pal_round(&a, &b, &split, PARAMS, 1).unwrap();
    assert!(ex.a.mu_from_partner > 0.0);
    assert!(ex.a.mu_pair > 0.0);
}

#[test]
fn exchange_preconditions() {
    let split = Split::contiguous(20, 0.2, 0.3).unwrap();
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let a = AlEntity::new(e(0), 1.0, PLAIN, x.clone(), vec![1.0; 20], &split);
    assert!(matches!(run_pal_round(&a, &a, &split, PARAMS, 1), Err(IclError::SelfPairing(id)) if id == e(0)));
    let short = Split::contiguous(19, 0.2, 0.3).unwrap();
    let b = AlEntity::new(e(1), 1.0, PLAIN, x[..19].to_vec(), vec![1.0; 19], &short);
    assert!(matches!(run_pal_round(&a, &b, &split, PARAMS, 1), Err(IclError::MisalignedSubjects(_))));
}

#[test]
fn favor_score_examples() {
    let mut est = GainEstimates::default();
    assert_eq!(favor_score(e(0), e(1), 1.0, 0.0, 0.0, &est), Favor::Unexplored);
    est.record(1, e(0), e(1), 5.0, 0.5, 3.0, 0.25);
    assert_eq!(favor_score(e(0), e(1), 1.0, 0.0, 0.0, &est), Favor::Score(5.0));
    // μ_{1←0} = 0.25.
    assert_eq!(favor_score(e(0), e(1), 2.0, 2.0, 4.0, &est), Favor::Score(4.0 * 0.25));
    assert_eq!(est.last_collab(e(1), e(0)), Some(1));
    assert!(Favor::Unexplored > Favor::Score(1e300));
}

fn favors(pairs: &[(u32, Option<u32>)]) -> BTreeMap<EntityId, Option<EntityId>> {
    pairs.iter().map(|&(i, j)| (e(i), j.map(e))).collect()
}

#[test]
fn consensus_examples() {
    assert_eq!(
        consensus_pair(&favors(&[(1, Some(2)), (2, Some(1)), (3, Some(1))])),
        Some((e(1), e(2)))
    );
    assert_eq!(consensus_pair(&favors(&[(1, Some(2)), (2, Some(3)), (3, Some(1))])), None);
    assert_eq!(consensus_pair(&favors(&[(4, Some(7)), (7, Some(4))])), Some((e(4), e(7))));
    assert_eq!(consensus_pair(&favors(&[(1, None), (2, Some(1))])), None);
    let two = favors(&[(0, Some(1)), (1, Some(0)), (2, Some(3)), (3, Some(2))]);
    assert_eq!(consensus_pair(&two), None);
    assert_eq!(mutual_pairs(&two), vec![(e(0), e(1)), (e(2), e(3))]);
}

fn everyone(k: u32) -> (Vec<EntityId>, BTreeSet<EntityId>) {
    let ids: Vec<EntityId> = (0..k).map(e).collect();
    let set = ids.iter().copied().collect();
    (ids, set)
}

#[test]
fn entity_stops_asking_once_nobody_helped() {
    let (ids, avail) = everyone(3);
    let prices: BTreeMap<EntityId, f64> = ids.iter().map(|&i| (i, 1.0)).collect();
    let mut est = GainEstimates::default();
    est.record(1, e(0), e(1), -0.1, 0.0, 0.2, 0.1);
    let rng = &mut ChaCha8Rng::seed_from_u64(0);
    assert_eq!(choose_favorite(e(0), &ids, &avail, 2.0, &prices, &est, rng), Some(e(2)));
    est.record(2, e(0), e(2), 0.0, 0.0, 0.3, 0.1);
    assert_eq!(choose_favorite(e(0), &ids, &avail, 2.0, &prices, &est, rng), None);
    // Entity 1 still gained from 0 and keeps asking.
    assert!(choose_favorite(e(1), &ids, &avail, 2.0, &prices, &est, rng).is_some());
}

#[test]
fn unexplored_ties_split_evenly() {
    let (ids, avail) = everyone(3);
    let prices: BTreeMap<EntityId, f64> = ids.iter().map(|&i| (i, 0.0)).collect();
    let est = GainEstimates::default();
    let rng = &mut ChaCha8Rng::seed_from_u64(1);
    let picks_one = (0..4000)
        .filter(|_| choose_favorite(e(0), &ids, &avail, 1.0, &prices, &est, rng) == Some(e(1)))
        .count();
    assert!((1850..2150).contains(&picks_one), "{picks_one}");
}

#[test]
fn theorem3_examples() {
    let sym = [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
    assert!(theorem3_check(1.0, [0.5; 3], &sym, &sym));
    let cyclic = [[0.0, 2.0, 1.0], [1.0, 0.0, 2.0], [2.0, 1.0, 0.0]];
    let none = [[0.0; 3]; 3];
    assert!(!theorem3_check(1.0, [0.0; 3], &cyclic, &none));
    assert!(!brute_force_consensus(1.0, [0.0; 3], &cyclic, &none));
}

/// Whether some tie-breaking of the favor step yields a mutual pair.
fn brute_force_consensus(u: f64, c: [f64; 3], mu_pair: &[[f64; 3]; 3], mu_assist: &[[f64; 3]; 3]) -> bool {
    let mut est = GainEstimates::default();
    for i in 0..3 {
        for j in i + 1..3 {
            est.record(0, e(i as u32), e(j as u32), mu_pair[i][j], mu_assist[i][j], mu_pair[j][i], mu_assist[j][i]);
        }
    }
    let tops: Vec<Vec<u32>> = (0..3u32)
        .map(|i| {
            let scores: Vec<(u32, Favor)> = (0..3u32)
                .filter(|&j| j != i)
                .map(|j| (j, favor_score(e(i), e(j), u, c[i as usize], c[j as usize], &est)))
                .collect();
            let best = scores.iter().map(|s| s.1).fold(Favor::Score(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
            scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect()
        })
        .collect();
    tops[0].iter().any(|&f0| {
        tops[1].iter().any(|&f1| {
            tops[2]
                .iter()
                .any(|&f2| consensus_pair(&favors(&[(0, Some(f0)), (1, Some(f1)), (2, Some(f2))])).is_some())
        })
    })
}

fn table() -> impl Strategy<Value = [[f64; 3]; 3]> {
    prop_oneof![
        prop::array::uniform3(prop::array::uniform3((-3i32..4).prop_map(f64::from))),
        prop::array::uniform3(prop::array::uniform3(-2.0..2.0f64)),
    ]
}

proptest! {
    #[test]
    fn theorem3_agrees_with_favor_simulation(
        u in (1i32..5).prop_map(f64::from),
        c in prop::array::uniform3((0i32..5).prop_map(f64::from)),
        mu_pair in table(),
        mu_assist in table(),
    ) {
        prop_assert_eq!(
            theorem3_check(u, c, &mu_pair, &mu_assist),
            brute_force_consensus(u, c, &mu_pair, &mu_assist)
        );
    }

    #[test]
    fn unexplored_partner_always_wins(
        scores in prop::collection::vec((-1e6..1e6f64, -1e6..1e6f64), 3),
        fresh in 1u32..5,
        seed in any::<u64>(),
    ) {
        let (ids, avail) = everyone(5);
        let prices: BTreeMap<EntityId, f64> = ids.iter().map(|&i| (i, 1.0)).collect();
        let mut est = GainEstimates::default();
        let explored = (1..5).filter(|&j| j != fresh);
        for (j, (p, a)) in explored.zip(scores) {
            est.record(1, e(0), e(j), p, 0.0, 0.0, a);
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(choose_favorite(e(0), &ids, &avail, 3.0, &prices, &est, rng), Some(e(fresh)));
    }

    #[test]
    fn pairing_does_not_depend_on_labels(
        picks in prop::collection::vec(prop::option::of(0u32..6), 6),
        seed in any::<u64>(),
    ) {
        let mut perm: Vec<u32> = (0..6).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let map: BTreeMap<EntityId, Option<EntityId>> =
            picks.iter().enumerate().map(|(i, p)| (e(i as u32), p.map(e))).collect();
        let relabeled: BTreeMap<EntityId, Option<EntityId>> = picks
            .iter()
            .enumerate()
            .map(|(i, p)| (e(perm[i]), p.map(|j| e(perm[j as usize]))))
            .collect();
        let mut expected: Vec<(EntityId, EntityId)> = mutual_pairs(&map)
            .into_iter()
            .map(|(a, b)| {
                let (x, y) = (e(perm[a.index()]), e(perm[b.index()]));
                (x.min(y), x.max(y))
            })
            .collect();
        expected.sort();
        prop_assert_eq!(mutual_pairs(&relabeled), expected);
    }
}

#[test]
fn theorem4_examples() {
    let t = theorem4_threshold(1.0, &[2.0, 1.0]).unwrap();
    assert!((t.c_star - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(t.binding, 1);
    assert_eq!(theorem4_threshold(3.0, &[2.0, 2.0, 1.0]).unwrap().c_star, 0.0);
    assert!(matches!(
        theorem4_threshold(1.0, &[0.0, 0.0]),
        Err(IclError::DegenerateDenominator(id)) if id == e(1)
    ));
    assert!(matches!(theorem4_threshold(1.0, &[1.0, 2.0]), Err(IclError::InvalidParams(_))));
}

proptest! {
    #[test]
    fn theorem4_boundary(
        u in 0.1..10.0f64,
        rest in prop::collection::vec(0.0..1.0f64, 1..8),
        top in 1.0..2.0f64,
    ) {
        let mut means = vec![top];
        means.extend(rest.iter().map(|r| r * top));
        let t = theorem4_threshold(u, &means).unwrap();
        prop_assert!(theorem4_slack(u, t.c_star, &means, t.binding).abs() < 1e-9);
        prop_assert!(theorem4_slack(u, t.c_star + 1e-6, &means, t.binding) < 0.0);
        for j in 1..means.len() {
            prop_assert!(theorem4_slack(u, t.c_star, &means, j) > -1e-9);
        }
    }
}

#[test]
fn zero_balance_examples() {
    let lin = ZeroBalancePricing::Linear { c: 1.0 };
    let three: BTreeSet<EntityId> = [1, 2, 3].map(e).into();
    let costs = zero_balance_costs(2.0, e(1), &three, &lin).unwrap();
    assert_eq!(costs, BTreeMap::from([(e(1), -4.0), (e(2), 2.0), (e(3), 2.0)]));
    assert!(zero_balance_costs(0.0, e(2), &three, &lin).unwrap().values().all(|&c| c == 0.0));
    let two: BTreeSet<EntityId> = [0, 1].map(e).into();
    let pair = zero_balance_costs(1.5, e(0), &two, &ZeroBalancePricing::Linear { c: 2.0 }).unwrap();
    assert_eq!(pair, BTreeMap::from([(e(0), -3.0), (e(1), 3.0)]));
    assert!(matches!(
        zero_balance_costs(1.0, e(9), &three, &lin),
        Err(IclError::ActiveNotParticipant(id)) if id == e(9)
    ));
    assert!(matches!(zero_balance_costs(1.0, e(1), &[e(1)].into(), &lin), Err(IclError::InvalidParams(_))));
}

proptest! {
    #[test]
    fn zero_balance_sums_exactly(
        z in -1e6..1e6f64,
        c in 0.0..100.0f64,
        k in 2usize..300,
        active in 0usize..300,
    ) {
        let ids: BTreeSet<EntityId> = (0..k).map(EntityId::from).collect();
        let costs = zero_balance_costs(z, EntityId::from(active % k), &ids, &ZeroBalancePricing::Linear { c }).unwrap();
        prop_assert_eq!(costs.values().sum::<f64>(), 0.0);
        let each = costs[&EntityId::from((active + 1) % k)];
        prop_assert!((each - c * z).abs() <= 1e-11 * (c * z).abs().max(1e-300));
    }
}

fn small(entities: usize, prices: &[f64]) -> PalConfig {
    PalConfig {
        entities: (0..entities)
            .map(|i| PalEntitySpec {
                price: prices[i % prices.len()],
                ..Default::default()
            })
            .collect(),
        subjects: 300,
        rounds: 10,
        ..Default::default()
    }
}

#[test]
fn single_entity_only_boosts() {
    let run = run_pal(&small(1, &[10.0]), RunSeed(2)).unwrap();
    assert!(!run.rounds.is_empty());
    assert!(run.rounds.iter().all(|r| r.pairs.is_empty()));
    assert!(run.ledger.rounds.iter().all(|r| r.active.is_empty() && r.sum_costs() == 0.0));
}

#[test]
fn stop_rule_ends_training() {
    let cfg = PalConfig {
        mode: PalMode::LocalOnly,
        patience: 1,
        ..small(3, &[10.0])
    };
    let run = run_pal(&cfg, RunSeed(0)).unwrap();
    assert!(run.rounds.len() < cfg.rounds);
    assert_eq!(run.rounds.len(), run.ledger.rounds.len());
    let last = run.rounds.last().unwrap();
    assert_eq!(run.final_test_error(), last.test_error);
}

#[test]
fn all_pay_beats_local_only() {
    let local = PalConfig {
        mode: PalMode::LocalOnly,
        ..Default::default()
    };
    let mut wins = [0; 3];
    for s in 0..10 {
        let base = run_pal(&local, RunSeed(s)).unwrap().final_test_error();
        let paid = run_pal(&PalConfig::default(), RunSeed(s)).unwrap().final_test_error();
        for i in 0..3 {
            wins[i] += usize::from(paid[i] <= base[i]);
        }
    }
    assert!(wins.iter().all(|&w| w >= 9), "{wins:?}");
}

#[test]
fn free_rider_gains_less() {
    let local = PalConfig {
        mode: PalMode::LocalOnly,
        ..Default::default()
    };
    let mut less = 0;
    for s in 0..10 {
        let base = run_pal(&local, RunSeed(s)).unwrap().final_test_error()[1];
        let paid = run_pal(&PalConfig::default(), RunSeed(s)).unwrap().final_test_error()[1];
        let free = run_pal(&PalConfig::default().with_free_rider(1), RunSeed(s)).unwrap().final_test_error()[1];
        less += usize::from(base - free < base - paid);
    }
    assert!(less >= 8, "{less}/10");
}

#[test]
fn stumps_and_curvature_run() {
    let mut cfg = small(3, &[10.0, 0.0]);
    cfg.nonlinear = 1.0;
    cfg.blend = 0.7;
    for spec in &mut cfg.entities {
        spec.learner = Learner::Stumps {
            rounds: 20,
            learning_rate: 0.3,
        };
    }
    let run = run_pal(&cfg, RunSeed(1)).unwrap();
    assert!(run.rounds.iter().any(|r| !r.pairs.is_empty()));
    for (id, e) in run.entities.iter().enumerate() {
        for &s in &run.split.test {
            let p = run.protocol_prediction(EntityId::from(id), s);
            assert!((p - e.prediction[s]).abs() <= 1e-9 * (1.0 + p.abs()));
        }
    }
}

#[test]
fn run_is_deterministic() {
    let a = run_pal(&small(3, &[10.0, 0.0]), RunSeed(8)).unwrap();
    let b = run_pal(&small(3, &[10.0, 0.0]), RunSeed(8)).unwrap();
    assert_eq!(a.rounds, b.rounds);
}

#[test]
fn config_errors_are_collected() {
    let mut cfg = PalConfig {
        blend: 0.0,
        patience: 0,
        subjects: 3,
        ..Default::default()
    };
    cfg.entities[2].price = -1.0;
    cfg.entities[0].learner = Learner::Stumps {
        rounds: 0,
        learning_rate: 0.1,
    };
    let Err(IclError::InvalidParams(errors)) = run_pal(&cfg, RunSeed(0)) else {
        panic!("expected invalid params");
    };
    let fields: Vec<&str> = errors.iter().map(|e| e.field.as_str()).collect();
    assert_eq!(
        fields,
        ["entities[2].price", "blend", "patience", "subjects", "entities[0].learner"]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rounds_balance_and_decompose(
        seed in any::<u64>(),
        k in 2usize..7,
        prices in prop::collection::vec(0.0..20.0f64, 6),
    ) {
        let run = run_pal(&small(k, &prices), RunSeed(seed)).unwrap();
        for (r, rec) in run.rounds.iter().zip(&run.ledger.rounds) {
            prop_assert_eq!(rec.sum_costs(), 0.0);
            prop_assert_eq!(r.costs.iter().sum::<f64>(), 0.0);
            prop_assert!(run.ledger.profit_identity_residual(rec).unwrap().abs() < 1e-9);
            let paired: BTreeSet<EntityId> = r.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
            prop_assert_eq!(&rec.active, &paired);
            for (i, c) in r.costs.iter().enumerate() {
                if !paired.contains(&EntityId::from(i)) {
                    prop_assert_eq!(*c, 0.0);
                }
            }
        }
        for (id, e) in run.entities.iter().enumerate() {
            for &s in &run.split.test {
                prop_assert_eq!(run.protocol_prediction(EntityId::from(id), s), e.prediction[s]);
            }
        }
    }
}
