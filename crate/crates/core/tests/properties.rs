//! Property tests for invariants of protocols, orders, statistics and choice sets.

use edt_core::choice::{ecf_dominance, ecf_eu, ecf_regularized, recf_gamma_robust, RegularizationSchedule};
use edt_core::{
    build_dominance_dag, criterion_pair, dominates, enumerate_upper_sets, evaluate_witness, robust_t_inf,
    robust_t_sup, t_statistic, ActionId, ColumnSchema, Consequence, ConsequenceSpace, ContaminationSpec, Direction,
    EmpiricalSample, FunctionClassSpec, GridSpec, PairContamination, Protocol, Utility,
};
use proptest::prelude::*;

fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::Maximize), Just(Direction::Minimize)]
}

fn protocol_with(values: impl Strategy<Value = f64> + Clone + 'static) -> impl Strategy<Value = Protocol> {
    (proptest::collection::vec(direction(), 1..4), 1usize..5).prop_flat_map(move |(dirs, actions)| {
        let dim = dirs.len();
        proptest::collection::vec(
            (0..actions, proptest::collection::vec(values.clone(), dim)),
            1..25,
        )
        .prop_map(move |rows| {
            let space = ConsequenceSpace::new(dirs.clone()).unwrap();
            let entries =
                rows.into_iter().map(|(a, v)| (ActionId(format!("act{a}")), Consequence::new(v).unwrap()));
            Protocol::from_entries(space, entries).unwrap()
        })
    })
}

fn small_values() -> impl Strategy<Value = f64> + Clone {
    (0i32..5).prop_map(f64::from)
}

fn any_finite() -> impl Strategy<Value = f64> + Clone {
    prop_oneof![
        proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO,
        (-1000i32..1000).prop_map(|k| k as f64 / 7.0),
    ]
}

fn scalar_sample(max: i32) -> impl Strategy<Value = EmpiricalSample> {
    proptest::collection::vec(0..max, 1..10)
        .prop_map(|v| EmpiricalSample::from_scalars(&v.into_iter().map(f64::from).collect::<Vec<_>>()).unwrap())
}

fn sample_pair(dim: usize) -> impl Strategy<Value = (EmpiricalSample, EmpiricalSample)> {
    let pts = move || {
        proptest::collection::vec(proptest::collection::vec((0i32..4).prop_map(f64::from), dim), 1..8)
            .prop_map(move |p| EmpiricalSample::from_points(dim, &p).unwrap())
    };
    (pts(), pts())
}

proptest! {
    #[test]
    fn csv_and_json_round_trip(p in protocol_with(any_finite())) {
        let text = p.to_csv_string();
        let back = Protocol::parse_csv(&text, &p.schema()).unwrap();
        prop_assert_eq!(back.actions(), p.actions());
        for (a, b) in back.entries().iter().zip(p.entries()) {
            prop_assert_eq!(a.action, b.action);
            let bits = |c: &Consequence| c.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.consequence), bits(&b.consequence));
        }
        prop_assert_eq!(Protocol::from_json(&p.to_json().unwrap()).unwrap(), p);
    }

    #[test]
    fn samples_partition_entries(p in protocol_with(small_values())) {
        let total: usize = p.actions().iter().map(|a| p.sample_of(a.as_str()).unwrap().len()).sum();
        prop_assert_eq!(total, p.len());
    }

    #[test]
    fn disjoint_sub_protocols_add_up(p in protocol_with(small_values()), split in 1usize..4) {
        let names: Vec<String> = p.actions().iter().map(|a| a.0.clone()).collect();
        prop_assume!(names.len() >= 2);
        let k = split.min(names.len() - 1);
        let (left, right) = names.split_at(k);
        let both = p.sub_protocol(&names).unwrap().entries().len();
        let l = p.sub_protocol(left).unwrap().entries().len();
        let r = p.sub_protocol(right).unwrap().entries().len();
        prop_assert_eq!(both, l + r);
        prop_assert_eq!(both, p.len());
    }

    #[test]
    fn dominance_is_a_partial_order(
        dirs in proptest::collection::vec(direction(), 1..4),
        seed in proptest::collection::vec(proptest::collection::vec(0i32..3, 3), 3),
    ) {
        let space = ConsequenceSpace::new(dirs.clone()).unwrap();
        let pts: Vec<Consequence> = seed
            .iter()
            .map(|v| Consequence::new(v[..dirs.len()].iter().map(|&x| x as f64).collect()).unwrap())
            .collect();
        let d = |a: usize, b: usize| dominates(&space, &pts[a], &pts[b]).unwrap();
        for a in 0..3 {
            prop_assert!(d(a, a));
            for b in 0..3 {
                if d(a, b) && d(b, a) {
                    prop_assert_eq!(pts[a].values(), pts[b].values());
                }
                for c in 0..3 {
                    if d(a, b) && d(b, c) {
                        prop_assert!(d(a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn upper_sets_are_upward_closed(
        dim in 1usize..4,
        raw in proptest::collection::vec(proptest::collection::vec(0i32..3, 3), 1..8),
    ) {
        let pts: Vec<Vec<f64>> = raw.iter().map(|v| v[..dim].iter().map(|&x| x as f64).collect()).collect();
        let dag = build_dominance_dag(dim, pts.iter().map(|p| p.as_slice())).unwrap();
        for (x, y) in dag.edges() {
            prop_assert!(x != y);
            prop_assert!(dag.nodes()[x].iter().zip(&dag.nodes()[y]).all(|(a, b)| a <= b));
        }
        let sets = enumerate_upper_sets(&dag, 100_000).unwrap();
        for s in &sets {
            for &y in s {
                for x in 0..dag.len() {
                    let above = dag.nodes()[y].iter().zip(&dag.nodes()[x]).all(|(a, b)| a <= b);
                    if above {
                        prop_assert!(s.contains(&x));
                    }
                }
            }
        }
        if dim == 1 {
            prop_assert_eq!(sets.len(), dag.len() + 1);
        }
    }

    #[test]
    fn members_stay_within_bounds(p in protocol_with(small_values()), w in proptest::collection::vec(-3i32..4, 3)) {
        let dim = p.space().dim();
        let class = FunctionClassSpec::eu(Utility::Linear { weights: w[..dim].iter().map(|&x| x as f64).collect() });
        let raws: Vec<Vec<f64>> = p.entries().iter().map(|e| e.consequence.values().to_vec()).collect();
        let b = class.bounds_on(&raws).unwrap();
        prop_assert!(b.lo < b.hi);
        for r in &raws {
            let v = class.member_values(r).unwrap()[0];
            prop_assert!(b.lo <= v && v <= b.hi);
        }
    }

    #[test]
    fn fsd_is_non_positive_and_witnessed((u, v) in (1usize..4).prop_flat_map(sample_pair)) {
        let fsd = FunctionClassSpec::fsd();
        let t = t_statistic(&fsd, &u, &v).unwrap();
        prop_assert!(t.value <= 0.0);
        let w = evaluate_witness(&fsd, &u, &v, &t.witness, None).unwrap();
        prop_assert!((w - t.value).abs() <= 1e-12);
        prop_assert_eq!(t_statistic(&fsd, &u, &u).unwrap().value, 0.0);
    }

    #[test]
    fn ssd_is_non_positive_and_witnessed(u in scalar_sample(30), v in scalar_sample(30)) {
        let class = FunctionClassSpec::SsdConcave { grid: Some(GridSpec::new(0.0, 31.0, 600).unwrap()) };
        let t = t_statistic(&class, &u, &v).unwrap();
        prop_assert!(t.value <= 0.0);
        let w = evaluate_witness(&class, &u, &v, &t.witness, None).unwrap();
        prop_assert!((w - t.value).abs() <= 1e-12);
    }

    #[test]
    fn criterion_pair_is_mirror_symmetric((x, y) in (1usize..3).prop_flat_map(sample_pair)) {
        let fsd = FunctionClassSpec::fsd();
        let a = criterion_pair(&fsd, &x, &y).unwrap();
        let b = criterion_pair(&fsd, &y, &x).unwrap();
        prop_assert_eq!(a.cr1, -b.cr2);
    }

    #[test]
    fn robust_bounds_are_monotone(
        (u, v) in (1usize..3).prop_flat_map(sample_pair),
        g1 in 0.0f64..1.0, g2 in 0.0f64..1.0, bump in 0.0f64..0.5,
    ) {
        for class in [FunctionClassSpec::fsd(), FunctionClassSpec::eu(Utility::Linear { weights: vec![1.0; u.dim()] })] {
            let t = t_statistic(&class, &u, &v).unwrap().value;
            let lo = PairContamination::new(g1, g2).unwrap();
            let hi_u = PairContamination::new((g1 + bump).min(1.0), g2).unwrap();
            let hi_v = PairContamination::new(g1, (g2 + bump).min(1.0)).unwrap();
            let sup = robust_t_sup(&class, &u, &v, lo).unwrap();
            let inf = robust_t_inf(&class, &u, &v, lo).unwrap();
            prop_assert!(inf.value <= t + 1e-12 && t <= sup.value + 1e-12);
            for hi in [hi_u, hi_v] {
                prop_assert!(robust_t_sup(&class, &u, &v, hi).unwrap().value >= sup.value - 1e-12);
                prop_assert!(robust_t_inf(&class, &u, &v, hi).unwrap().value <= inf.value + 1e-12);
            }
            let zero = PairContamination::none();
            prop_assert_eq!(robust_t_sup(&class, &u, &v, zero).unwrap().value, t);
            prop_assert_eq!(robust_t_inf(&class, &u, &v, zero).unwrap().value, t);
            let ws = evaluate_witness(&class, &u, &v, &sup.witness, Some((lo, true))).unwrap();
            let wi = evaluate_witness(&class, &u, &v, &inf.witness, Some((lo, false))).unwrap();
            prop_assert!((ws - sup.value).abs() <= 1e-12);
            prop_assert!((wi - inf.value).abs() <= 1e-12);
        }
    }

    #[test]
    fn eu_translation(u in scalar_sample(10), v in scalar_sample(10), c in -5i32..5) {
        let eu = FunctionClassSpec::eu_identity();
        let shifted: Vec<f64> = u.points().map(|p| p[0] + c as f64).collect();
        let a = t_statistic(&eu, &u, &v).unwrap().value;
        let b = t_statistic(&eu, &EmpiricalSample::from_scalars(&shifted).unwrap(), &v).unwrap().value;
        prop_assert!((b - a - c as f64).abs() < 1e-9);
    }

    #[test]
    fn choice_sets_nest(p in protocol_with(small_values()), g in 0.0f64..0.5, extra in 0.0f64..0.5, c in 0.01f64..2.0) {
        let fsd = FunctionClassSpec::fsd();
        let sp = p.full();
        let dom = ecf_dominance(&sp, &fsd).unwrap();
        let reg = ecf_regularized(&sp, &fsd, &RegularizationSchedule { c, ..Default::default() }).unwrap();
        let r1 = recf_gamma_robust(&sp, &fsd, &ContaminationSpec::uniform(g)).unwrap();
        let r2 = recf_gamma_robust(&sp, &fsd, &ContaminationSpec::uniform(g + extra)).unwrap();
        prop_assert!(!dom.chosen.is_empty());
        // the relaxed second condition makes exclusion easier
        prop_assert!(reg.is_subset_of(&dom));
        prop_assert!(dom.is_subset_of(&r1));
        prop_assert!(r1.is_subset_of(&r2));
        prop_assert_eq!(
            recf_gamma_robust(&sp, &fsd, &ContaminationSpec::uniform(0.0)).unwrap().chosen,
            dom.chosen.clone()
        );
    }

    #[test]
    fn exclusions_reverify(p in protocol_with(small_values())) {
        let fsd = FunctionClassSpec::fsd();
        let sp = p.full();
        for set in [
            ecf_dominance(&sp, &fsd).unwrap(),
            ecf_regularized(&sp, &fsd, &RegularizationSchedule::default()).unwrap(),
        ] {
            for e in &set.excluded {
                let cr = criterion_pair(
                    &fsd,
                    &p.sample_of(e.action.as_str()).unwrap(),
                    &p.sample_of(e.dominated_by.as_str()).unwrap(),
                )
                .unwrap();
                prop_assert!(cr.cr1 > e.cr1_margin);
                prop_assert!(cr.cr2 + e.cr2_margin >= 0.0);
            }
        }
    }

    #[test]
    fn sorted_maximal_sample_survives(groups in proptest::collection::vec(proptest::collection::vec(0i32..6, 4), 2..5)) {
        // a sample whose order statistics are all at least those of every
        // other sample dominates them and cannot itself be excluded
        let mut sorted: Vec<Vec<i32>> = groups.clone();
        sorted.iter_mut().for_each(|g| g.sort());
        let best: Vec<i32> = (0..4).map(|k| sorted.iter().map(|g| g[k]).max().unwrap()).collect();
        let mut groups = groups;
        groups.push(best);
        let entries = groups.iter().enumerate().flat_map(|(k, g)| {
            g.iter().map(move |&x| (ActionId(format!("g{k}")), Consequence::scalar(x as f64).unwrap()))
        });
        let p = Protocol::from_entries(ConsequenceSpace::scalar(), entries).unwrap();
        let chosen = ecf_dominance(&p.full(), &FunctionClassSpec::fsd()).unwrap();
        let last = format!("g{}", groups.len() - 1);
        prop_assert!(chosen.contains(&last));
    }

    #[test]
    fn argmax_invariant_under_affine_maps(p in protocol_with(small_values()), a in 1i32..6, b in -9i32..9) {
        let dim = p.space().dim();
        let w: Vec<f64> = (0..dim).map(|k| 1.0 + k as f64).collect();
        let moved: Vec<f64> = w.iter().map(|x| x * a as f64).collect();
        let base = ecf_eu(&p.full(), &Utility::Linear { weights: w }).unwrap();
        // the affine offset is carried by a table to keep sums exact
        let table = p
            .entries()
            .iter()
            .map(|e| edt_core::TableEntry {
                point: e.consequence.values().to_vec(),
                value: e.consequence.values().iter().zip(&moved).map(|(x, y)| x * y).sum::<f64>() + b as f64,
            })
            .collect();
        let other = ecf_eu(&p.full(), &Utility::Table { entries: table }).unwrap();
        prop_assert_eq!(base.chosen, other.chosen);
    }
}

#[test]
fn regularized_rule_can_exclude_incomparable_actions() {
    let entries = [("a", 1.0), ("b", 2.0), ("b", 0.0)]
        .map(|(a, x)| (ActionId::from(a), Consequence::scalar(x).unwrap()));
    let p = Protocol::from_entries(ConsequenceSpace::scalar(), entries).unwrap();
    let fsd = FunctionClassSpec::fsd();
    assert_eq!(ecf_dominance(&p.full(), &fsd).unwrap().chosen.len(), 2);
    assert!(ecf_regularized(&p.full(), &fsd, &RegularizationSchedule::default()).unwrap().chosen.is_empty());
}

#[test]
fn schema_flags_reject_overlap() {
    assert!(ColumnSchema::from_flags(&["x".into()], &["x".into()]).is_err());
}
