//! Acceptance criteria. Run with `--nocapture` to see one PASS/FAIL line per
//! criterion.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use edt_core::choice::{ecf_dominance, ecf_eu, ecf_regularized, recf_gamma_robust, RegularizationSchedule};
use edt_core::harness::{
    example4_eu_rule, example4_fsd_rule, example4_scenario, prompting_protocol, replicate_prompting_study,
    replicate_table1, run_scenario, ssd_assumption3_demo,
};
use edt_core::inference::{
    membership_test, pairwise_permutation_test, robust_membership_test, type1_error_simulation, NullGenerator,
    TestConfig,
};
use edt_core::{
    build_dominance_dag, enumerate_upper_sets, t_statistic, ActionId, Consequence, ConsequenceSpace,
    ContaminationSpec, EmpiricalSample, FunctionClassSpec, Protocol, Utility,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, ok: bool, detail: &str) {
    println!("[{}] criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn names(c: &[ActionId]) -> BTreeSet<String> {
    c.iter().map(|a| a.0.clone()).collect()
}

fn set(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[test]
fn criterion_01_table1() {
    let start = Instant::now();
    let r = replicate_table1().unwrap();
    let elapsed = start.elapsed();
    let ok = names(&r.eu.chosen) == set(&["Red"])
        && names(&r.fsd.chosen) == set(&["Red", "Blue", "Green"])
        && elapsed < Duration::from_secs(1);
    verdict(
        1,
        ok,
        &format!("EU {:?}, FSD {:?}, {:?}", r.eu.names(), r.fsd.names(), elapsed),
    );
}

#[test]
fn criterion_02_prompting_pattern() {
    let start = Instant::now();
    let want = set(&["polite->neutral", "inpolite->neutral"]);
    let mut details = Vec::new();
    let mut ok = true;
    let mut decisions = BTreeSet::new();
    for seed in [1u64, 2, 3, 4, 5] {
        let cfg = TestConfig::new(0.05, 10_000, seed);
        let p = prompting_protocol();
        let fsd = FunctionClassSpec::fsd();
        let choice = ecf_dominance(&p.full(), &fsd).unwrap();
        let mut rejected = BTreeSet::new();
        let mut ps = Vec::new();
        for j in ["neutral", "polite", "inpolite"] {
            for i in ["neutral", "polite", "inpolite"] {
                if i != j {
                    let r = pairwise_permutation_test(&p, j, i, &fsd, &cfg).unwrap();
                    ps.push(format!("{j}->{i}={:.3}", r.p_value));
                    if r.reject {
                        rejected.insert(format!("{j}->{i}"));
                    }
                }
            }
        }
        let m = membership_test(&p, "neutral", &["neutral", "polite", "inpolite"], &fsd, &cfg).unwrap();
        ok &= choice.chosen.len() == 3 && rejected == want && m.global_reject;
        decisions.insert(format!("{rejected:?}/{}", m.global_reject));
        details.push(format!("seed {seed}: rejected {rejected:?}, neutral global {} [{}]", m.global_reject, ps.join(" ")));
    }
    let elapsed = start.elapsed();
    ok &= decisions.len() == 1 && elapsed < Duration::from_secs(120);
    verdict(2, ok, &format!("{} | stable across seeds: {} | {:?}", details.join("; "), decisions.len() == 1, elapsed));
}

#[test]
fn criterion_03_breakdown_shares() {
    let start = Instant::now();
    let r = replicate_prompting_study(None, &TestConfig::new(0.05, 10_000, 1)).unwrap();
    let elapsed = start.elapsed();
    let share = |j: &str| r.breakdown.iter().find(|c| c.j.0 == j).unwrap().breakdown_share;
    let (a, b) = (share("inpolite"), share("polite"));
    let near = |s: Option<f64>, t: f64| s.is_some_and(|s| (s - t).abs() <= 0.03);
    let ok = near(a, 0.15) && near(b, 0.16) && elapsed < Duration::from_secs(300);
    let p0 = |j: &str| r.breakdown.iter().find(|c| c.j.0 == j).unwrap().points[0].p_value;
    verdict(
        3,
        ok,
        &format!(
            "breakdown inpolite->neutral {a:?} (p at share 0: {:.3}), polite->neutral {b:?} (p at share 0: {:.3}), {elapsed:?}",
            p0("inpolite"),
            p0("polite")
        ),
    );
}

fn random_points(rng: &mut ChaCha8Rng, dim: usize, n: usize, levels: i32) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(0..levels) as f64).collect()).collect()
}

fn exhaustive_fsd(u: &EmpiricalSample, v: &EmpiricalSample) -> f64 {
    let dag = build_dominance_dag(u.dim(), u.points().chain(v.points())).unwrap();
    let mut best = 0.0f64;
    for s in enumerate_upper_sets(&dag, 1 << 13).unwrap() {
        let inside = |p: &[f64]| s.iter().any(|&k| dag.nodes()[k].as_slice() == p);
        let pu = u.points().filter(|p| inside(p)).count() as f64 / u.len() as f64;
        let pv = v.points().filter(|p| inside(p)).count() as f64 / v.len() as f64;
        best = best.min(pu - pv);
    }
    best
}

#[test]
fn criterion_04_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 200 {
        let dim = 1 + done % 3;
        let (nu, nv) = (rng.random_range(1..8), rng.random_range(1..8));
        let levels = [12, 4, 3][dim - 1];
        let u = random_points(&mut rng, dim, nu, levels);
        let v = random_points(&mut rng, dim, nv, levels);
        let (u, v) = (EmpiricalSample::from_points(dim, &u).unwrap(), EmpiricalSample::from_points(dim, &v).unwrap());
        let dag = build_dominance_dag(dim, u.points().chain(v.points())).unwrap();
        if dag.len() > 12 {
            continue;
        }
        let fast = edt_core::statistics::fsd_statistic_via_closure(&u, &v).unwrap().value;
        worst = worst.max((fast - exhaustive_fsd(&u, &v)).abs());
        done += 1;
    }
    let mut mismatches = 0;
    for _ in 0..200 {
        let (nu, nv) = (rng.random_range(1..30), rng.random_range(1..30));
        let u: Vec<f64> = (0..nu).map(|_| rng.random_range(-20..20) as f64 / 4.0).collect();
        let v: Vec<f64> = (0..nv).map(|_| rng.random_range(-20..20) as f64 / 4.0).collect();
        let (u, v) = (EmpiricalSample::from_scalars(&u).unwrap(), EmpiricalSample::from_scalars(&v).unwrap());
        let a = t_statistic(&FunctionClassSpec::fsd(), &u, &v).unwrap().value;
        let b = edt_core::statistics::fsd_statistic_via_closure(&u, &v).unwrap().value;
        if a.to_bits() != b.to_bits() {
            mismatches += 1;
        }
    }
    verdict(
        4,
        worst <= 1e-12 && mismatches == 0,
        &format!("max |min-cut − exhaustive| = {worst:e} over 200 instances; threshold vs min-cut mismatches: {mismatches}/200"),
    );
}

fn scalar_protocol(groups: &[(&str, &[f64])]) -> Protocol {
    let entries = groups
        .iter()
        .flat_map(|(a, xs)| xs.iter().map(move |&x| (ActionId::from(*a), Consequence::scalar(x).unwrap())));
    Protocol::from_entries(ConsequenceSpace::scalar(), entries).unwrap()
}

fn sample_from(points: &[Vec<f64>], dim: usize) -> EmpiricalSample {
    EmpiricalSample::from_points(dim, points).unwrap()
}

#[test]
fn criterion_05_exact_permutation_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n_mc = 20_000usize;
    let mut worst_z = 0.0f64;
    let mut failures = 0;
    for inst in 0..50 {
        let dim = 1 + inst % 2;
        let levels = if dim == 1 { 6 } else { 3 };
        let pooled = random_points(&mut rng, dim, 8, levels);
        let space = ConsequenceSpace::new(vec![edt_core::Direction::Maximize; dim]).unwrap();
        let entries = pooled.iter().enumerate().map(|(k, p)| {
            (ActionId::from(if k < 4 { "j" } else { "i" }), Consequence::new(p.clone()).unwrap())
        });
        let proto = Protocol::from_entries(space, entries).unwrap();
        let class = FunctionClassSpec::fsd();
        let observed = t_statistic(&class, &sample_from(&pooled[..4], dim), &sample_from(&pooled[4..], dim))
            .unwrap()
            .value;
        let mut below = 0;
        let mut total = 0;
        for mask in 0u32..256 {
            if mask.count_ones() != 4 {
                continue;
            }
            let (a, b): (Vec<_>, Vec<_>) = (0..8).partition(|&k| mask >> k & 1 == 1);
            let pick = |ix: &[usize]| ix.iter().map(|&k| pooled[k].clone()).collect::<Vec<_>>();
            let t = t_statistic(&class, &sample_from(&pick(&a), dim), &sample_from(&pick(&b), dim)).unwrap().value;
            total += 1;
            if t <= observed {
                below += 1;
            }
        }
        let exact = below as f64 / total as f64;
        let cfg = TestConfig::new(0.05, n_mc, 9000 + inst as u64);
        let mc = pairwise_permutation_test(&proto, "j", "i", &class, &cfg).unwrap().p_value;
        // The add-one estimator has mean p + (1 − p)/(N + 1).
        let n = n_mc as f64;
        let mean = (1.0 + n * exact) / (n + 1.0);
        let se = (exact * (1.0 - exact) / n).sqrt() * n / (n + 1.0);
        let dev = (mc - mean).abs();
        let z = if se > 0.0 { dev / se } else if dev < 1e-12 { 0.0 } else { f64::INFINITY };
        worst_z = worst_z.max(z);
        if z > 3.0 {
            failures += 1;
        }
    }
    verdict(5, failures == 0, &format!("50 instances, largest deviation {worst_z:.2} standard errors"));
}

#[test]
fn criterion_06_level_control() {
    let gen = NullGenerator::Binomial { trials: 10, p: 0.3, size: 20 };
    let cfg = TestConfig::new(0.05, 10_000, 606);
    let s = type1_error_simulation(&gen, &FunctionClassSpec::fsd(), &cfg, 2000).unwrap();
    verdict(
        6,
        s.rate <= s.bound,
        &format!("rejection rate {:.4} ({} of {}), bound {:.4}", s.rate, s.rejections, s.trials, s.bound),
    );
}

#[test]
fn criterion_07_consistency() {
    use rayon::prelude::*;
    let hold_from = 401;
    let s1: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let t = run_scenario(&example4_scenario(1, 500, seed).unwrap(), &example4_eu_rule()).unwrap();
            t.holds_from(hold_from, &["Red"]) as usize
        })
        .sum();
    let s2: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let t = run_scenario(&example4_scenario(2, 500, 1000 + seed).unwrap(), &example4_fsd_rule()).unwrap();
            t.holds_from(hold_from, &["Yellow", "Black"]) as usize
        })
        .sum();
    verdict(
        7,
        s1 >= 95 && s2 >= 90,
        &format!("scenario 1 EU holds {{Red}} over rounds {hold_from}-500 in {s1}/100 runs; scenario 2 regularized FSD holds {{Yellow, Black}} in {s2}/100"),
    );
}

#[test]
fn criterion_08_robust_degeneracy() {
    let mut inputs: Vec<(Protocol, Vec<String>, FunctionClassSpec)> = vec![
        (prompting_protocol(), vec!["neutral".into(), "polite".into(), "inpolite".into()], FunctionClassSpec::fsd()),
        (edt_core::harness::table1_protocol(), vec!["Red".into(), "Blue".into(), "Black".into()], FunctionClassSpec::fsd()),
        (edt_core::harness::table1_protocol(), vec!["Red".into(), "Yellow".into()], FunctionClassSpec::eu_identity()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for _ in 0..5 {
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random_range(2..9) as f64).collect();
        inputs.push((scalar_protocol(&[("a", &a), ("b", &b)]), vec!["a".into(), "b".into()], FunctionClassSpec::fsd()));
    }
    let gammas = [0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0];
    let (mut identical, mut never, mut monotone) = (true, true, true);
    for (p, set, class) in &inputs {
        for target in set {
            let cfg = TestConfig::new(0.05, 2000, 88);
            let base = membership_test(p, target, set, class, &cfg).unwrap();
            let mut prev: Vec<f64> = vec![0.0; base.pairwise.len()];
            for &g in &gammas {
                let r = robust_membership_test(p, target, set, class, &ContaminationSpec::uniform(g), &cfg).unwrap();
                if g == 0.0 {
                    for (x, y) in base.pairwise.iter().zip(&r.pairwise) {
                        identical &= x.p_value.to_bits() == y.p_value.to_bits() && x.reject == y.reject;
                    }
                }
                if g == 1.0 {
                    never &= r.pairwise.iter().all(|x| !x.reject);
                }
                for (k, x) in r.pairwise.iter().enumerate() {
                    monotone &= x.p_value >= prev[k];
                    prev[k] = x.p_value;
                }
            }
        }
    }
    verdict(
        8,
        identical && never && monotone,
        &format!("gamma=0 bit-identical: {identical}; gamma=1 never rejects: {never}; p monotone in gamma: {monotone}"),
    );
}

fn small_protocol() -> impl Strategy<Value = Protocol> {
    (2usize..5, 1usize..3)
        .prop_flat_map(|(actions, dim)| {
            proptest::collection::vec(
                proptest::collection::vec(proptest::collection::vec(0i32..5, dim), 1..7),
                actions,
            )
            .prop_map(move |groups| (dim, groups))
        })
        .prop_map(|(dim, groups)| {
            let space = ConsequenceSpace::new(vec![edt_core::Direction::Maximize; dim]).unwrap();
            let entries = groups.into_iter().enumerate().flat_map(|(k, g)| {
                g.into_iter().map(move |p| {
                    (
                        ActionId(format!("a{k}")),
                        Consequence::new(p.into_iter().map(f64::from).collect()).unwrap(),
                    )
                })
            });
            Protocol::from_entries(space, entries).unwrap()
        })
}

#[test]
fn criterion_09_invariant_suite() {
    let cases = 1000;
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    let mut results = Vec::new();

    let nonpos = runner.run(&small_protocol(), |p| {
        for a in 0..p.actions().len() {
            for b in 0..p.actions().len() {
                let (u, v) = (p.sample_of(p.actions()[a].as_str()).unwrap(), p.sample_of(p.actions()[b].as_str()).unwrap());
                prop_assert!(t_statistic(&FunctionClassSpec::fsd(), &u, &v).unwrap().value <= 0.0);
            }
        }
        Ok(())
    });
    results.push(("non-positivity", nonpos.is_ok()));

    // The regularized rule relaxes the second exclusion condition, so its
    // choice set sits below the dominance set, not above it.
    let reg_above_dom = std::cell::Cell::new(0usize);
    let chain = runner.run(&(small_protocol(), 0.0f64..0.6, 0.01f64..2.0), |(p, g, c)| {
        let fsd = FunctionClassSpec::fsd();
        let sp = p.full();
        let dom = ecf_dominance(&sp, &fsd).unwrap();
        let reg = ecf_regularized(&sp, &fsd, &RegularizationSchedule { c, ..Default::default() }).unwrap();
        let rob = recf_gamma_robust(&sp, &fsd, &ContaminationSpec::uniform(g)).unwrap();
        if !dom.is_subset_of(&reg) {
            reg_above_dom.set(reg_above_dom.get() + 1);
        }
        prop_assert!(!dom.chosen.is_empty());
        prop_assert!(reg.is_subset_of(&dom));
        prop_assert!(dom.is_subset_of(&rob));
        prop_assert!(rob.chosen.iter().all(|a| p.actions().contains(a)));
        Ok(())
    });
    results.push(("containment chain regularized ⊆ dominance ⊆ robust ⊆ M", chain.is_ok()));

    let argmax = runner.run(&(small_protocol(), 1i32..5, -10i32..10), |(p, a, b)| {
        let dim = p.space().dim();
        let w: Vec<f64> = (0..dim).map(|k| (k + 1) as f64).collect();
        let base = ecf_eu(&p.full(), &Utility::Linear { weights: w.clone() }).unwrap();
        let table: Vec<edt_core::TableEntry> = p
            .entries()
            .iter()
            .map(|e| {
                let u: f64 = e.consequence.values().iter().zip(&w).map(|(x, y)| x * y).sum();
                edt_core::TableEntry { point: e.consequence.values().to_vec(), value: a as f64 * u + b as f64 }
            })
            .collect();
        let moved = ecf_eu(&p.full(), &Utility::Table { entries: table }).unwrap();
        prop_assert_eq!(base.chosen, moved.chosen);
        Ok(())
    });
    results.push(("argmax invariance", argmax.is_ok()));

    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let det = runner.run(&(small_protocol(), any::<u64>()), |(p, seed)| {
        let cfg = TestConfig::new(0.1, 40, seed);
        let set: Vec<String> = p.actions().iter().map(|a| a.0.clone()).collect();
        let target = set[0].clone();
        let run = || membership_test(&p, &target, &set, &FunctionClassSpec::fsd(), &cfg).unwrap();
        let a = one.install(run);
        let b = many.install(run);
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        Ok(())
    });
    results.push(("report determinism", det.is_ok()));

    let ok = results.iter().all(|(_, r)| *r);
    let detail = results
        .iter()
        .map(|(n, r)| format!("{n}: {}", if *r { "ok" } else { "violated" }))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        9,
        ok,
        &format!(
            "{cases} cases each; {detail}; cases with dominance ⊄ regularized: {}",
            reg_above_dom.get()
        ),
    );
}

#[test]
fn criterion_10_ssd_demo() {
    let small = ssd_assumption3_demo(5, 10_000, 10).unwrap();
    let large = ssd_assumption3_demo(50, 10_000, 10).unwrap();
    verdict(
        10,
        small.violated && large.violation_fraction < 0.05,
        &format!(
            "n=5 violation fraction {:.3} (violated: {}); n=50 violation fraction {:.4}",
            small.violation_fraction, small.violated, large.violation_fraction
        ),
    );
}
