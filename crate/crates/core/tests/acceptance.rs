//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line and
//! the process exits non-zero if any of them fails.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use flipdiag::aggregate::{
    group_explanations, Analysis, Comparison, Filter, GroupMetric, OddsRatio, SessionState,
};
use flipdiag::data::{FeatureIdx, Item, Split};
use flipdiag::explain::{brute_force_min_explanation, explain_all, ExplainConfig, ExplainRun};
use flipdiag::metrics::roc_auc;
use flipdiag::model::{
    train_logistic, FnPredictor, LogisticConfig, LogisticModel, PredictionRecord, ScoredModel,
};
use flipdiag::synth::{PlantedFeature, Synthetic, SyntheticConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn without(bag: &[FeatureIdx], drop: &[FeatureIdx]) -> Vec<FeatureIdx> {
    bag.iter().copied().filter(|f| !drop.contains(f)).collect()
}

/// 5,000 x 400 synthetic data, a logistic model fitted on a 20% split and
/// calibrated there.
struct Bench {
    synth: Synthetic,
    model: ScoredModel,
    run: ExplainRun,
}

impl Bench {
    fn new() -> Self {
        let synth = SyntheticConfig {
            seed: 2024,
            ..SyntheticConfig::default()
        }
        .generate();
        let dataset = synth.dataset.clone().split(0.2, 1).unwrap();
        let n = dataset.n_features();
        let lr = train_logistic(dataset.items_in(Split::Train), n, &LogisticConfig::default()).unwrap();
        let mut model = ScoredModel::new(Arc::new(lr), n, 0.5);
        model.calibrate(dataset.items_in(Split::Train)).unwrap();
        let cfg = ExplainConfig {
            seed: 5,
            parallelism: cores(),
            ..ExplainConfig::default()
        };
        let run = explain_all(&model, synth.dataset.items(), &cfg).unwrap();
        Bench { synth, model, run }
    }
}

fn totality_and_flip(b: &Bench) -> Outcome {
    let items = b.synth.dataset.items();
    let mean_active = items.iter().map(|i| i.active.len()).sum::<usize>() as f64 / items.len() as f64;
    if b.run.explanations.len() != items.len() || !b.run.failures.is_empty() {
        return Err(format!(
            "{} of {} items explained, {} failures",
            b.run.explanations.len(),
            items.len(),
            b.run.failures.len()
        ));
    }
    let mut flipped = 0;
    for (item, e) in items.iter().zip(&b.run.explanations) {
        if item.id != e.item {
            return Err(format!("explanation order broken at item {}", item.id));
        }
        let before = b.model.label(&item.active).unwrap();
        if e.flipped {
            flipped += 1;
            let after = b.model.label(&without(&item.active, &e.removed)).unwrap();
            if after == before {
                return Err(format!("item {}: explanation {:?} does not flip", item.id, e.removed));
            }
        } else {
            if e.removed != item.active {
                return Err(format!("item {}: fallback is not the full bag", item.id));
            }
            // greedy ends at the empty bag, so the empty bag cannot flip either
            if b.model.label(&[]).unwrap() != before {
                return Err(format!("item {}: unflipped although the empty bag flips", item.id));
            }
        }
    }
    check(
        true,
        format!(
            "{} items, {} features, mean bag {mean_active:.2}; {flipped} flipped, {} fallbacks",
            items.len(),
            b.synth.dataset.n_features(),
            items.len() - flipped
        ),
    )
}

fn irredundancy_and_oracle(b: &Bench) -> Outcome {
    let mut checked = 0;
    let mut strictly_larger = 0;
    for (item, e) in b.synth.dataset.items().iter().zip(&b.run.explanations) {
        if item.active.len() > 12 {
            continue;
        }
        checked += 1;
        let before = b.model.label(&item.active).unwrap();
        let oracle = brute_force_min_explanation(&b.model, item).unwrap();
        match (&oracle, e.flipped) {
            (None, false) => continue,
            (None, true) => return Err(format!("item {}: flipped but the oracle finds no flip", item.id)),
            (Some(_), false) => return Err(format!("item {}: oracle flips but the search gave up", item.id)),
            (Some(min), true) => {
                if e.removed.len() < min.len() {
                    return Err(format!("item {}: |e| below the oracle minimum", item.id));
                }
                if e.removed.len() > min.len() {
                    strictly_larger += 1;
                }
            }
        }
        for &f in &e.removed {
            let mut keep = e.removed.clone();
            keep.retain(|&g| g != f);
            if b.model.label(&without(&item.active, &keep)).unwrap() != before {
                return Err(format!("item {}: {f} is redundant in {:?}", item.id, e.removed));
            }
        }
    }

    // one decisive feature: removing it flips, nothing else can
    let n = b.synth.dataset.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut exact = 0;
    for decisive in [0u32, 3, 17] {
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        w[decisive as usize] = 10.0;
        let model = ScoredModel::new(Arc::new(LogisticModel::new(w, -5.0)), n, 0.5);
        let small: Vec<Item> = b
            .synth
            .dataset
            .items()
            .iter()
            .filter(|i| i.active.len() <= 12)
            .cloned()
            .collect();
        let run = explain_all(&model, &small, &ExplainConfig::default()).unwrap();
        for (item, e) in small.iter().zip(&run.explanations) {
            let oracle = brute_force_min_explanation(&model, item).unwrap();
            let size = oracle.as_ref().map(Vec::len);
            if item.active.contains(&decisive) {
                if size != Some(1) || e.removed != vec![decisive] {
                    return Err(format!("decisive model {decisive}, item {}: got {:?}, oracle {:?}", item.id, e.removed, oracle));
                }
                exact += 1;
            } else if size.is_some() || e.flipped {
                return Err(format!("decisive model {decisive}, item {}: unexpected flip", item.id));
            }
        }
    }
    check(
        true,
        format!("{checked} items with <= 12 features irredundant and >= oracle ({strictly_larger} above minimum); {exact} single-decisive items match the oracle exactly"),
    )
}

fn plateau_path() -> Outcome {
    let f = |bag: &[u32]| if bag.iter().filter(|&&x| x < 3).count() >= 2 { 0.9 } else { 0.1 };
    let model = ScoredModel::new(Arc::new(FnPredictor::new("plateau", f)), 6, 0.5);
    let items: Vec<Item> = (0..400)
        .map(|i| Item {
            id: i,
            active: if i % 2 == 0 { vec![0, 1, 2] } else { vec![0, 1, 2, 3, 4, 5] },
            label: true,
        })
        .collect();
    let oracle = brute_force_min_explanation(&model, &items[0]).unwrap();
    if oracle.as_ref().map(Vec::len) != Some(2) {
        return Err(format!("oracle gave {oracle:?}"));
    }
    let run = |parallelism| {
        explain_all(
            &model,
            &items,
            &ExplainConfig {
                seed: 9,
                parallelism,
                ..ExplainConfig::default()
            },
        )
        .unwrap()
        .explanations
    };
    let serial = run(1);
    let parallel = run(8);
    if serial != parallel {
        return Err("explanations differ between 1 and 8 workers".into());
    }
    let mut seen = BTreeSet::new();
    for e in &serial {
        let item = &items[e.item as usize];
        if !e.flipped || e.removed.len() != 2 || e.removed.iter().any(|&x| x >= 3) {
            return Err(format!("item {}: {:?}", e.item, e.removed));
        }
        if model.label(&without(&item.active, &e.removed)).unwrap() {
            return Err(format!("item {}: no flip", e.item));
        }
        seen.insert(e.removed.clone());
    }
    check(
        true,
        format!("{} items, all 2-feature explanations equal to oracle size, {} distinct pairs, identical at 1 and 8 workers", serial.len(), seen.len()),
    )
}

/// Cross-product form of the same statistic, written independently of the
/// library code.
fn reference_odds(a: usize, b: usize, c: usize, d: usize) -> Option<(f64, f64, f64, bool)> {
    if a + b == 0 || c + d == 0 {
        return None;
    }
    let (mut a, mut b, mut c, mut d) = (a as f64, b as f64, c as f64, d as f64);
    if a * b * c * d == 0.0 {
        a += 0.5;
        b += 0.5;
        c += 0.5;
        d += 0.5;
    }
    let or = (a * d) / (b * c);
    let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
    let lo = or * (-1.96 * se).exp();
    let hi = or * (1.96 * se).exp();
    Some((or, lo, hi, lo <= 1.0 && hi >= 1.0))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

fn odds_ratio_arithmetic() -> Outcome {
    let hand: [((usize, usize, usize, usize), f64, f64, f64, bool); 3] = [
        ((5, 5, 25, 75), 3.0, 0.8016714995280796, 11.226543547198615, true),
        ((100, 100, 100, 100), 1.0, 0.675704113960626, 1.4799377114022885, true),
        ((0, 10, 50, 50), 1.0 / 21.0, 0.0027168075435537674, 0.8346464222412252, false),
    ];
    for ((a, b, c, d), v, lo, hi, uncertain) in hand {
        let or = OddsRatio::from_counts(a, b, c, d);
        let (glo, ghi) = or.ci.unwrap();
        if (or.value.unwrap() - v).abs() > 1e-9 || (glo - lo).abs() > 1e-9 || (ghi - hi).abs() > 1e-9 || or.uncertain != uncertain {
            return Err(format!("({a},{b},{c},{d}) gave {or:?}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut straddling = 0;
    for _ in 0..1000 {
        let mut draw = || if rng.gen_bool(0.1) { 0 } else { rng.gen_range(0..200) };
        let (a, b, c, d) = (draw(), draw(), draw(), draw());
        let got = OddsRatio::from_counts(a, b, c, d);
        match reference_odds(a, b, c, d) {
            None => {
                if got.value.is_some() || !got.uncertain {
                    return Err(format!("({a},{b},{c},{d}) should be undefined"));
                }
            }
            Some((or, lo, hi, uncertain)) => {
                let (glo, ghi) = got.ci.unwrap();
                if !close(got.value.unwrap(), or) || !close(glo, lo) || !close(ghi, hi) || got.uncertain != uncertain {
                    return Err(format!("({a},{b},{c},{d}): {got:?} vs ({or}, {lo}, {hi}, {uncertain})"));
                }
                straddling += uncertain as usize;
            }
        }
    }
    check(true, format!("3 hand cases to 1e-9; 1000 random quadruples agree ({straddling} straddle 1)"))
}

fn mann_whitney(scored: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut total = 0.0;
    for p in &pos {
        for n in &neg {
            total += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    total / (pos.len() * neg.len()) as f64
}

fn records(scored: &[(f64, bool)]) -> Vec<PredictionRecord> {
    scored
        .iter()
        .enumerate()
        .map(|(i, &(s, y))| PredictionRecord::new(i as u64, s, 0.5, y))
        .collect()
}

fn auc_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = rng.gen_range(2..=500);
        let levels = if k % 2 == 0 { 10 } else { 1_000_000 };
        let mut scored: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.gen_range(0..=levels) as f64 / levels as f64, rng.gen_bool(0.3)))
            .collect();
        scored[0].1 = true;
        scored[1].1 = false;
        let auc = roc_auc(&records(&scored)).unwrap().auc;
        worst = worst.max((auc - mann_whitney(&scored)).abs());
    }
    if worst > 1e-12 {
        return Err(format!("max |AUC - concordance| = {worst:e}"));
    }
    let separated: Vec<(f64, bool)> = (0..200).map(|i| (i as f64 / 200.0, i >= 120)).collect();
    let perfect = roc_auc(&records(&separated)).unwrap().auc;
    if perfect != 1.0 {
        return Err(format!("separated data gives {perfect}"));
    }
    let scores: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    let mut labels: Vec<bool> = scores.iter().map(|&s| s > 0.6).collect();
    labels.shuffle(&mut rng);
    let shuffled: Vec<(f64, bool)> = scores.into_iter().zip(labels).collect();
    let chance = roc_auc(&records(&shuffled)).unwrap().auc;
    check(
        (chance - 0.5).abs() <= 0.05,
        format!("100 sets max deviation {worst:e}; separated 1.0; shuffled N=10000 gives {chance:.4}"),
    )
}

fn threshold_optimality() -> Outcome {
    let mut total_candidates = 0;
    for seed in 0..100u64 {
        let synth = SyntheticConfig {
            n_items: 150 + 5 * seed as usize,
            n_features: 25,
            mean_active: 4.0,
            n_signal: 8,
            positive_rate: 0.15 + 0.005 * seed as f64,
            seed,
            ..SyntheticConfig::default()
        }
        .generate();
        let ds = synth.dataset.split(0.3, seed).unwrap();
        let train: Vec<&Item> = ds.items_in(Split::Train).collect();
        let cfg = LogisticConfig {
            epochs: 5,
            seed,
            ..LogisticConfig::default()
        };
        let lr = train_logistic(train.iter().copied(), 25, &cfg).unwrap();
        let mut model = ScoredModel::new(Arc::new(lr), 25, 0.5);
        let t = model.calibrate(train.iter().copied()).unwrap();
        let scored: Vec<(f64, bool)> = train
            .iter()
            .map(|i| (model.score(&i.active).unwrap(), i.label))
            .collect();
        let correct = |t: f64| scored.iter().filter(|&&(s, y)| (s > t) == y).count();
        let best = correct(t);
        let mut distinct: Vec<f64> = scored.iter().map(|s| s.0).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut sweep = vec![0.0, 1.0];
        sweep.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        sweep.extend(distinct.iter().copied());
        total_candidates += sweep.len();
        if let Some(better) = sweep.iter().find(|&&c| correct(c) > best) {
            return Err(format!("seed {seed}: t={better} beats calibrated t={t}"));
        }
    }
    check(true, format!("100 datasets, {total_candidates} thresholds swept, none better"))
}

fn weak_signal_run() -> (Analysis, Vec<flipdiag::explain::Explanation>, FeatureIdx, FeatureIdx) {
    let synth = SyntheticConfig {
        n_items: 5000,
        n_features: 200,
        planted: vec![
            PlantedFeature {
                name: "sodium_chloride".into(),
                frequency: 0.3,
                weight: 0.0,
            },
            PlantedFeature {
                name: "sepsis".into(),
                frequency: 0.06,
                weight: 5.0,
            },
        ],
        sole_feature_items: Some((0, 0.1)),
        seed: 99,
        ..SyntheticConfig::default()
    }
    .generate();
    let ds = synth.dataset.split(0.2, 99).unwrap();
    let n = ds.n_features();
    let lr = train_logistic(ds.items_in(Split::Train), n, &LogisticConfig::default()).unwrap();
    let mut model = ScoredModel::new(Arc::new(lr), n, 0.5);
    model.calibrate(ds.items_in(Split::Train)).unwrap();
    let run = explain_all(
        &model,
        ds.items(),
        &ExplainConfig {
            seed: 4,
            parallelism: cores(),
            ..ExplainConfig::default()
        },
    )
    .unwrap();
    let analysis = Analysis::from_explanations(&ds, model.threshold(), &run.explanations).unwrap();
    let nacl = ds.feature_by_name("sodium_chloride").unwrap();
    let sepsis = ds.feature_by_name("sepsis").unwrap();
    (analysis, run.explanations, nacl, sepsis)
}

fn weak_signal() -> Outcome {
    let (analysis, explanations, nacl, sepsis) = weak_signal_run();
    let (_, again, _, _) = weak_signal_run();
    if explanations != again {
        return Err("two runs with the same seed differ".into());
    }
    let mut groups = group_explanations(&analysis, &analysis.all_positions());
    groups.sort_by(|a, b| b.size().cmp(&a.size()).then(a.key.cmp(&b.key)));
    let Some(rank) = groups.iter().position(|g| g.key.contains(&nacl)) else {
        return Err("no group contains the label-independent feature".into());
    };
    let weak = &groups[rank];
    let Some(strong) = groups.iter().find(|g| g.key == vec![sepsis]) else {
        return Err("no group for the predictive feature".into());
    };
    let (wlo, whi) = weak.odds.ci.unwrap_or((f64::NAN, f64::NAN));
    let (slo, shi) = strong.odds.ci.unwrap_or((f64::NAN, f64::NAN));
    let detail = format!(
        "weak group {:?} rank {} of {} with {} items, CI [{wlo:.3}, {whi:.3}]; strong group {} items, CI [{slo:.3}, {shi:.3}]",
        weak.names,
        rank + 1,
        groups.len(),
        weak.size(),
        strong.size()
    );
    check(rank < 3 && weak.odds.uncertain && !strong.odds.uncertain && slo > 1.0, detail)
}

fn performance(b: &Bench) -> Outcome {
    let uncached = explain_all(
        &b.model,
        b.synth.dataset.items(),
        &ExplainConfig {
            seed: 5,
            parallelism: cores(),
            use_cache: false,
            ..ExplainConfig::default()
        },
    )
    .unwrap();
    if uncached.explanations != b.run.explanations {
        return Err("cache changes the explanations".into());
    }
    let detail = format!(
        "{:.2}s on {} worker(s) with cache; model calls {} cached vs {} uncached",
        b.run.wall_time_secs,
        cores(),
        b.run.model_calls,
        uncached.model_calls
    );
    check(b.run.wall_time_secs < 60.0 && uncached.model_calls > b.run.model_calls, detail)
}

fn random_filter(analysis: &Analysis, session: &SessionState, rng: &mut ChaCha8Rng) -> Filter {
    let groups = session.groups(analysis);
    match rng.gen_range(0..4) {
        0 => {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            Filter::ScoreRange { lo: a.min(b), hi: a.max(b) }
        }
        1 => {
            let keys = groups
                .iter()
                .filter(|_| rng.gen_bool(0.3))
                .map(|g| g.key.clone())
                .collect();
            Filter::Selection { keys }
        }
        2 => {
            let present: Vec<FeatureIdx> = analysis
                .explanation_feature_frequency(&session.current().items)
                .into_iter()
                .map(|(f, _)| f)
                .collect();
            let pick = |rng: &mut ChaCha8Rng| {
                present
                    .choose(rng)
                    .map_or_else(|| analysis.feature_name(0).to_string(), |&f| analysis.feature_name(f).to_string())
            };
            let mut query = pick(rng);
            if rng.gen_bool(0.3) {
                query = format!("{query}, {}", pick(rng));
            }
            Filter::Search { query }
        }
        _ => {
            let metric = *[
                GroupMetric::Total,
                GroupMetric::PositiveTruth,
                GroupMetric::PredictedPositive,
                GroupMetric::IncorrectCount,
                GroupMetric::OddsRatio,
                GroupMetric::Uncertainty,
            ]
            .choose(rng)
            .unwrap();
            let op = *[Comparison::Gt, Comparison::Ge, Comparison::Lt, Comparison::Le, Comparison::Eq]
                .choose(rng)
                .unwrap();
            let value = match metric {
                GroupMetric::OddsRatio => rng.gen_range(0.0..4.0),
                GroupMetric::Uncertainty => -rng.gen_range(0.0..2.0),
                _ => rng.gen_range(0..20) as f64,
            };
            Filter::Condition { metric, op, value }
        }
    }
}

fn grouping_partition() -> Outcome {
    let (analysis, _, _, _) = weak_signal_run();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut session = SessionState::new(&analysis);
    let initial = session.groups(&analysis);
    let mut snapshots = vec![initial.clone()];
    let (mut pushes, mut pops, mut deepest) = (0, 0, 0);
    for step in 0..200 {
        if session.depth() > 0 && rng.gen_bool(0.3) {
            let depth = rng.gen_range(0..session.depth());
            session.pop_to(depth).unwrap();
            snapshots.truncate(depth + 1);
            pops += 1;
            if session.groups(&analysis) != snapshots[depth] {
                return Err(format!("step {step}: pop to {depth} did not restore the parent"));
            }
        } else {
            let filter = random_filter(&analysis, &session, &mut rng);
            let parent = session.current().items.clone();
            session.push(&analysis, filter.clone()).unwrap();
            let child = &session.current().items;
            if !child.iter().all(|p| parent.binary_search(p).is_ok()) {
                return Err(format!("step {step}: {filter} produced items outside the parent"));
            }
            snapshots.push(session.groups(&analysis));
            pushes += 1;
            deepest = deepest.max(session.depth());
        }
        let groups = session.groups(&analysis);
        let total: usize = groups.iter().map(|g| g.size()).sum();
        if total != session.current().items.len() {
            return Err(format!("step {step}: groups hold {total} of {} items", session.current().items.len()));
        }
    }
    session.pop_to(0).unwrap();
    if session.groups(&analysis) != initial {
        return Err("pop to the root did not restore the initial groups".into());
    }
    check(true, format!("200 steps ({pushes} pushes, {pops} pops, max depth {deepest}); partition held throughout"))
}

fn main() {
    let start = Instant::now();
    let bench = Bench::new();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("explanation totality and flip", Box::new(|| totality_and_flip(&bench))),
        ("irredundancy and oracle bound", Box::new(|| irredundancy_and_oracle(&bench))),
        ("plateau path", Box::new(plateau_path)),
        ("odds ratio arithmetic", Box::new(odds_ratio_arithmetic)),
        ("AUC oracle equivalence", Box::new(auc_equivalence)),
        ("threshold optimality", Box::new(threshold_optimality)),
        ("weak-signal group", Box::new(weak_signal)),
        ("performance and cache", Box::new(|| performance(&bench))),
        ("grouping partition under filter fuzzing", Box::new(grouping_partition)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} ({:.1}s)", t.elapsed().as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} ({:.1}s)", t.elapsed().as_secs_f64());
            }
        }
    }
    println!("acceptance: {failed} failed, total {:.1}s", start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
