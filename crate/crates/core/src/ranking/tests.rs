use super::*;
use crate::crashdump::{FrameOrigin, StackLocation};
use num_bigint::BigInt;
use proptest::prelude::*;

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn sets(raw: &[&[&str]]) -> Vec<(usize, Vec<String>)> {
    raw.iter()
        .enumerate()
        .map(|(i, s)| (i, s.iter().map(|p| p.to_string()).collect()))
        .collect()
}

fn scored(r: &ScoredRanking<BigRational>) -> Vec<(&str, BigRational)> {
    r.entries.iter().map(|e| (e.path.as_str(), e.score.clone())).collect()
}

/// Materializes every (run, file, 1/|S|) triple and folds them.
fn oracle(runs: &[(usize, Vec<String>)]) -> BTreeMap<String, BigRational> {
    let mut triples = Vec::new();
    for (run, files) in runs {
        let mut uniq: Vec<&String> = Vec::new();
        for f in files {
            if !uniq.contains(&f) {
                uniq.push(f);
            }
        }
        for f in &uniq {
            triples.push((*run, (*f).clone(), q(1, uniq.len() as i64)));
        }
    }
    let mut out = BTreeMap::new();
    for (_, f, s) in triples {
        *out.entry(f).or_insert_with(|| q(0, 1)) += s;
    }
    out
}

#[test]
fn worked_example() {
    let r: ScoredRanking<BigRational> = aggregate_sets(&sets(&[&["Fa"], &["Fa", "Fb"], &["Fc"]]), 3);
    assert_eq!(scored(&r), vec![("Fa", q(3, 2)), ("Fc", q(1, 1)), ("Fb", q(1, 2))]);
    assert_eq!(r.confidence, q(1, 2));
}

#[test]
fn trivial_cases() {
    let one: ScoredRanking<BigRational> = aggregate_sets(&sets(&[&["a"]]), 1);
    assert_eq!(scored(&one), vec![("a", q(1, 1))]);
    assert_eq!(one.confidence, q(1, 1));
    let none: ScoredRanking<BigRational> = aggregate_sets(&sets(&[&[], &[]]), 2);
    assert!(none.entries.is_empty());
    assert_eq!(none.confidence, q(0, 1));
}

#[test]
fn failed_runs_dilute_confidence() {
    // three launched, one produced nothing
    let r: ScoredRanking<BigRational> = aggregate_sets(&sets(&[&["a"], &[], &["a"]]), 3);
    assert_eq!(r.confidence, q(2, 3));
}

#[test]
fn ties_follow_first_suggestion_then_name() {
    let r: ScoredRanking<BigRational> = aggregate_sets(&sets(&[&["z", "y"], &["b", "a"]]), 2);
    assert_eq!(r.paths(), vec!["z", "y", "b", "a"]);
    let r: ScoredRanking<BigRational> =
        aggregate_sets(&[(1, vec!["b".to_string()]), (1, vec!["a".to_string()])], 2);
    assert_eq!(r.paths(), vec!["a", "b"]);
}

#[test]
fn float_scores_agree_on_the_example() {
    let r: ScoredRanking<f64> = aggregate_sets(&sets(&[&["Fa"], &["Fa", "Fb"], &["Fc"]]), 3);
    assert_eq!(r.paths(), vec!["Fa", "Fc", "Fb"]);
    assert!((r.confidence - 0.5).abs() < 1e-12);
    let r: ScoredRanking<f32> = aggregate_sets(&sets(&[&["Fa"]]), 1);
    assert_eq!(r.confidence, 1.0);
}

#[test]
fn decimal_rendering() {
    assert_eq!(q(3, 2).decimal6(), "1.500000");
    assert_eq!(q(1, 3).decimal6(), "0.333333");
    assert_eq!(q(2, 3).decimal6(), "0.666667");
    assert_eq!(q(0, 1).decimal6(), "0.000000");
    assert_eq!(q(1, 2_000_000).decimal6(), "0.000001");
    assert_eq!(q(-1, 3).decimal6(), "-0.333333");
    assert_eq!(q(25, 1).decimal6(), "25.000000");
    assert_eq!(0.25f64.decimal6(), "0.250000");
}

#[test]
fn record_json_shape() {
    let r: ScoredRanking<BigRational> = aggregate_sets(&sets(&[&["Fa"], &["Fa", "Fb"], &["Fc"]]), 3);
    let json = serde_json::to_string(&r.to_record("c1")).unwrap();
    assert_eq!(
        json,
        r#"{"crash_id":"c1","R":3,"confidence":0.500000,"entries":[{"path":"Fa","score":1.500000},{"path":"Fc","score":1.000000},{"path":"Fb","score":0.500000}]}"#
    );
    let back: RankingRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r.to_record("c1"));
    assert_eq!(back.confidence(), 0.5);
    assert_eq!(back.ordered_paths(), vec!["Fa", "Fc", "Fb"]);
}

fn loc(path: &str, origin: FrameOrigin, i: u32) -> StackLocation {
    StackLocation {
        file_path: path.into(),
        line: 1,
        origin,
        frame_index: i,
        thread_label: None,
    }
}

fn stack(pending: &[&str], backtrace: &[&str]) -> CrashStack {
    CrashStack {
        pending: pending
            .iter()
            .enumerate()
            .map(|(i, p)| loc(p, FrameOrigin::PendingException, i as u32))
            .collect(),
        backtrace: backtrace
            .iter()
            .enumerate()
            .map(|(i, p)| loc(p, FrameOrigin::Backtrace, i as u32))
            .collect(),
        ..Default::default()
    }
}

#[test]
fn baselines() {
    assert_eq!(baseline1(&stack(&[], &["f1", "f2", "f1", "f3"])).entries, vec!["f1", "f2", "f3"]);
    assert!(baseline1(&stack(&["p"], &[])).entries.is_empty());
    assert_eq!(baseline2(&stack(&["p1"], &["f1", "p1", "f2"])).entries, vec!["p1", "f1", "f2"]);
    let s = stack(&[], &["a", "b", "a"]);
    assert_eq!(baseline2(&s).entries, baseline1(&s).entries);
    assert_eq!(baseline2(&stack(&["p1", "p2"], &[])).entries, vec!["p1", "p2"]);
    assert_eq!("B2".parse::<BaselineKind>().unwrap(), BaselineKind::B2);
    assert!("b3".parse::<BaselineKind>().is_err());
}

#[test]
fn baseline_paths_resolve_against_the_repo() {
    let dir = tempfile::tempdir().unwrap();
    crate::reponav::test_repo::write(dir.path(), &[("src/a.cpp", "x\n"), ("src/b.cpp", "y\n")]);
    let repo = RepoSnapshot::open(dir.path(), None).unwrap();
    let b = baseline1(&stack(&[], &["/build/src/a.cpp", "src/a.cpp", "b.cpp", "nowhere.c"]));
    assert_eq!(b.resolved(&repo).entries, vec!["src/a.cpp", "src/b.cpp", "nowhere.c"]);
}

#[test]
fn augmentation() {
    let primary = ScoredRanking {
        entries: vec![
            RankedFile { path: "f1".into(), score: q(2, 1) },
            RankedFile { path: "f5".into(), score: q(1, 1) },
        ],
        runs: 3,
        confidence: q(2, 3),
    };
    let filler = BaselineRanking {
        kind: BaselineKind::B1,
        entries: ["f1", "f2", "f3", "f4", "f5"].map(String::from).to_vec(),
    };
    assert_eq!(augment(&primary, &filler), vec!["f1", "f5", "f2", "f3", "f4"]);
    let empty: ScoredRanking<BigRational> = aggregate_sets(&[], 1);
    assert_eq!(augment(&empty, &filler), filler.entries);
    let small = BaselineRanking {
        kind: BaselineKind::B2,
        entries: vec!["f5".into()],
    };
    assert_eq!(augment(&primary, &small), vec!["f1", "f5"]);
}

fn arb_runs() -> impl Strategy<Value = Vec<Vec<String>>> {
    let file = (0u8..8).prop_map(|i| format!("f{i}.cpp"));
    prop::collection::vec(prop::collection::vec(file, 0..5), 1..=10)
}

proptest! {
    #[test]
    fn matches_brute_force(runs in arb_runs()) {
        let indexed: Vec<(usize, Vec<String>)> = runs.into_iter().enumerate().collect();
        let r = indexed.len();
        let ranking: ScoredRanking<BigRational> = aggregate_sets(&indexed, r);
        let expect = oracle(&indexed);
        let got: BTreeMap<String, BigRational> =
            ranking.entries.iter().map(|e| (e.path.clone(), e.score.clone())).collect();
        prop_assert_eq!(&got, &expect);
        prop_assert_eq!(got.len(), ranking.entries.len());
        for w in ranking.entries.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        let total: BigRational = expect.values().cloned().fold(q(0, 1), |a, b| a + b);
        let nonempty = indexed.iter().filter(|(_, s)| !s.is_empty()).count();
        prop_assert_eq!(total, q(nonempty as i64, 1));
        let top = expect.values().max().cloned().unwrap_or_else(|| q(0, 1));
        prop_assert_eq!(ranking.confidence.clone(), top / q(r as i64, 1));
        let unanimous = indexed.iter().all(|(_, s)| {
            let mut u = s.clone();
            u.sort();
            u.dedup();
            u.len() == 1 && u == {
                let mut f = indexed[0].1.clone();
                f.sort();
                f.dedup();
                f
            }
        });
        prop_assert_eq!(ranking.confidence == q(1, 1), unanimous);
    }

    #[test]
    fn permutation_invariant(runs in arb_runs(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let indexed: Vec<(usize, Vec<String>)> = runs.into_iter().enumerate().collect();
        let mut shuffled = indexed.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a: ScoredRanking<BigRational> = aggregate_sets(&indexed, indexed.len());
        let b: ScoredRanking<BigRational> = aggregate_sets(&shuffled, indexed.len());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn augment_is_a_duplicate_free_union(
        p in prop::collection::vec(0u8..10, 0..8),
        f in prop::collection::vec(0u8..10, 0..8),
    ) {
        let p: Vec<String> = p.iter().map(|i| format!("f{i}")).collect();
        let f: Vec<String> = f.iter().map(|i| format!("f{i}")).collect();
        let primary: ScoredRanking<BigRational> = aggregate_sets(&[(0, p.clone())], 1);
        let out = augment(&primary, &BaselineRanking { kind: BaselineKind::B1, entries: f.clone() });
        let union: HashSet<&String> = p.iter().chain(&f).collect();
        prop_assert_eq!(out.len(), union.len());
        prop_assert_eq!(out.iter().collect::<HashSet<_>>(), union);
        prop_assert_eq!(&out[..primary.entries.len()], &primary.paths()[..]);
    }
}
