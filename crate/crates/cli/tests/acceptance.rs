//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs offline with scripted backends only.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::{FromPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crashfl_core::agent::{run_agent_with, AgentConfig, RunStatus, GET_CRASH_STACK, GET_NEARBY_CODE, GET_TERM_DEFINITION};
use crashfl_core::corpus::{default_mix, generate_corpus, CorpusManifest, Difficulty, ScriptQuality};
use crashfl_core::crashdump::{
    classify_crash_type, parse_crash_extinfo, parse_crash_stack, parse_crashdump, sanitize_crash_extinfo,
    sanitize_crash_stack, CrashType,
};
use crashfl_core::evalkit::{acc_at_k, brier, platt_cv, platt_fit, point_biserial, Rankings, Truths};
use crashfl_core::explain::{alignment_rates, CrashVerdicts, JudgedFile, Verdict};
use crashfl_core::llm::{BackendConfig, ChatBackend, LlmError, ScriptStep, ScriptedBackend};
use crashfl_core::ranking::{aggregate_sets, augment_paths, baseline1, baseline2};
use crashfl_core::reponav::{NavErrorKind, RepoSnapshot};
use crashfl_core::Ranking;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        // written so that a NaN comparison fails the check
        if $cond {
        } else {
            return Err(format!($($fmt)*));
        }
    };
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took < limit, "{what} took {took:?}, limit {limit:?}");
    Ok(())
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::from_i64(n).unwrap() / BigRational::from_i64(d).unwrap()
}

/// Brute-force vote fold with the documented tie-break: score, then
/// earliest (run, position) mention, then path.
fn oracle_ranking(sets: &[(usize, Vec<String>)], r: usize) -> (Vec<(String, BigRational)>, BigRational) {
    let mut score: HashMap<String, BigRational> = HashMap::new();
    let mut first: HashMap<String, (usize, usize)> = HashMap::new();
    for (run, files) in sets {
        let unique: Vec<&String> = {
            let mut seen = HashSet::new();
            files.iter().filter(|f| seen.insert(f.as_str())).collect()
        };
        for (pos, f) in unique.iter().enumerate() {
            *score.entry(f.to_string()).or_insert_with(BigRational::zero) += rat(1, unique.len() as i64);
            let key = (*run, pos);
            first.entry(f.to_string()).and_modify(|k| *k = (*k).min(key)).or_insert(key);
        }
    }
    let mut out: Vec<(String, BigRational)> = score.into_iter().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(first[&a.0].cmp(&first[&b.0])).then(a.0.cmp(&b.0)));
    let conf = match out.first() {
        Some((_, s)) => s.clone() / BigRational::from_usize(r).unwrap(),
        None => BigRational::zero(),
    };
    (out, conf)
}

fn c1_aggregation() -> Check {
    let sets = vec![
        (0, vec!["Fa".to_string()]),
        (1, vec!["Fa".to_string(), "Fb".to_string()]),
        (2, vec!["Fc".to_string()]),
    ];
    let got: Ranking = aggregate_sets(&sets, 3);
    let pairs: Vec<(String, BigRational)> = got.entries.iter().map(|e| (e.path.clone(), e.score.clone())).collect();
    ensure!(
        pairs == vec![("Fa".into(), rat(3, 2)), ("Fc".into(), rat(1, 1)), ("Fb".into(), rat(1, 2))],
        "worked example gave {pairs:?}"
    );
    ensure!(got.confidence == rat(1, 2), "worked example confidence {}", got.confidence);

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let names: Vec<String> = (0..8).map(|i| format!("src/f{i}.cpp")).collect();
    for trial in 0..1000 {
        let r = rng.gen_range(1..=10);
        let mut sets: Vec<(usize, Vec<String>)> = Vec::new();
        for i in 0..r {
            // some runs fail and contribute no set
            if rng.gen_bool(0.85) {
                let n = rng.gen_range(0..=8);
                sets.push((i, (0..n).map(|_| names[rng.gen_range(0..8)].clone()).collect()));
            }
        }
        let got: Ranking = aggregate_sets(&sets, r);
        let (want, conf) = oracle_ranking(&sets, r);
        let pairs: Vec<(String, BigRational)> = got.entries.iter().map(|e| (e.path.clone(), e.score.clone())).collect();
        ensure!(pairs == want, "trial {trial}: {pairs:?} != {want:?}");
        ensure!(got.confidence == conf, "trial {trial}: confidence {} != {conf}", got.confidence);
    }
    within(start, Duration::from_secs(5), "1000 aggregations")?;
    Ok(format!("1000 random run-sets exact in {:.2?}", start.elapsed()))
}

fn c2_augmentation() -> Check {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let got = augment_paths(&s(&["f1", "f5"]), &s(&["f1", "f2", "f3", "f4", "f5"]));
    ensure!(got == s(&["f1", "f5", "f2", "f3", "f4"]), "got {got:?}");
    Ok(format!("{got:?}"))
}

fn dedup(paths: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    paths.filter(|p| seen.insert(p.clone())).collect()
}

fn c3_baselines() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool: Vec<String> = (0..12).map(|i| format!("/build/src/m{}/unit{i}.cpp", i % 3)).collect();
    let mut empty_pending = 0;
    for trial in 0..200 {
        let frames: Vec<String> = (0..rng.gen_range(1..=10)).map(|_| pool[rng.gen_range(0..12)].clone()).collect();
        let pending: Vec<String> = if rng.gen_bool(0.3) {
            Vec::new()
        } else {
            (0..rng.gen_range(1..=5)).map(|_| pool[rng.gen_range(0..12)].clone()).collect()
        };
        let mut text = String::new();
        for (i, f) in frames.iter().enumerate() {
            text.push_str(&format!("#{i}: 0x{:x} in fn{i}() at {f}:{}\n", 0x4000 + i, 10 + i));
        }
        if !pending.is_empty() {
            text.push_str("--> Pending exceptions (possible root cause) <--\n");
            for (i, f) in pending.iter().enumerate() {
                text.push_str(&format!("  {i}: exc{i}() at {f}:{}\n", 20 + i));
            }
        }
        let stack = parse_crash_stack(&text);
        let want1 = dedup(frames.iter().cloned());
        let want2 = dedup(pending.iter().chain(frames.iter()).cloned());
        let b1 = baseline1(&stack).entries;
        let b2 = baseline2(&stack).entries;
        ensure!(b1 == want1, "trial {trial}: baseline1 {b1:?} != {want1:?}");
        ensure!(b2 == want2, "trial {trial}: baseline2 {b2:?} != {want2:?}");
        if pending.is_empty() {
            empty_pending += 1;
            ensure!(b2 == b1, "trial {trial}: empty pending but baseline2 != baseline1");
        }
    }
    Ok(format!("200 stacks, {empty_pending} without pending exceptions"))
}

fn extinfo(signal: &str, addr: &str) -> String {
    format!("Signal: {signal}\nSignal code: 1\nFaulting address: {addr}\n")
}

fn c4_crash_typing() -> Check {
    let cases = [
        ("SIGSEGV", "0x00", CrashType::SigSegvNpe),
        ("SIGSEGV", "0x3d", CrashType::SigSegvNpe),
        ("SIGSEGV", "0xfff", CrashType::SigSegvNpe),
        ("SIGSEGV", "0x1000", CrashType::SigSegvNonNpe),
        ("SIGSEGV", "0x7f3a2c001000", CrashType::SigSegvNonNpe),
        ("SIGABRT", "0x00", CrashType::SigAbrt),
    ];
    for (sig, addr, want) in cases {
        let info = parse_crash_extinfo(&extinfo(sig, addr)).map_err(|e| e.to_string())?;
        let got = classify_crash_type(&info);
        ensure!(got == want, "{sig}@{addr}: {got:?} != {want:?}");
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = generate_corpus(100, 100, &default_mix(), dir.path()).map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<CrashType, usize> = BTreeMap::new();
    for e in &m.entries {
        let dump = read_dump(&m, &e.dump_path)?;
        let info = dump.crash_extinfo().map_err(|err| err.to_string())?;
        *counts.entry(classify_crash_type(&info)).or_default() += 1;
    }
    // studied distribution: 289 / 118 / 43 / 3 / 1 of 454
    let table = [
        (CrashType::SigAbrt, 289.0),
        (CrashType::SigSegvNpe, 118.0),
        (CrashType::SigSegvNonNpe, 43.0),
        (CrashType::SigBus, 3.0),
        (CrashType::SigFpe, 1.0),
    ];
    for (t, n) in table {
        let want = n / 454.0 * 100.0;
        let got = counts.get(&t).copied().unwrap_or(0) as f64;
        ensure!((got - want).abs() <= 2.0, "{t:?}: {got} crashes, expected {want:.1} ± 2");
    }
    Ok(format!("boundary cases ok; n=100 mix {counts:?}"))
}

fn read_dump(m: &CorpusManifest, rel: &Path) -> Result<crashfl_core::crashdump::Crashdump, String> {
    let text = fs::read_to_string(m.resolve(rel)).map_err(|e| e.to_string())?;
    parse_crashdump(&text).map_err(|e| e.to_string())
}

fn c5_acc_at_k() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = generate_corpus(50, 50, &default_mix(), dir.path()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truths: Truths = m.truths();
    let mut rankings = Rankings::new();
    let mut empty = Vec::new();
    for (i, e) in m.entries.iter().enumerate() {
        let exp = e.expected.as_ref().unwrap();
        let ranking = match i % 4 {
            0 => exp.agent_ranking.clone(),
            1 => {
                empty.push(e.crash_id.clone());
                Vec::new()
            }
            2 => exp.baseline2.clone(),
            _ => {
                let repo = RepoSnapshot::open(m.resolve(&e.repo_path), None).map_err(|e| e.to_string())?;
                let mut files = repo.files().to_vec();
                files.shuffle(&mut rng);
                files
            }
        };
        rankings.insert(e.crash_id.clone(), ranking);
    }
    let ks: Vec<usize> = (1..=12).chain([20, 50]).collect();
    let acc = acc_at_k(&rankings, &truths, &ks).map_err(|e| e.to_string())?;
    // prefix scan: position of the first buggy file
    let first_hit: BTreeMap<&String, Option<usize>> = rankings
        .iter()
        .map(|(id, r)| (id, r.iter().position(|f| truths[id].buggy_files.contains(f)).map(|p| p + 1)))
        .collect();
    let mut prev = 0;
    for a in &acc {
        let want = first_hit.values().filter(|h| h.is_some_and(|p| p <= a.k)).count();
        ensure!(a.count == want, "acc@{} = {} but prefix scan gives {want}", a.k, a.count);
        ensure!(a.count >= prev, "acc@{} decreased", a.k);
        ensure!((a.ratio - want as f64 / 50.0).abs() < 1e-12, "acc@{} ratio {}", a.k, a.ratio);
        prev = a.count;
    }
    let only_empty: Rankings = empty.iter().map(|id| (id.clone(), Vec::new())).collect();
    let acc_empty = acc_at_k(&only_empty, &truths, &ks).map_err(|e| e.to_string())?;
    ensure!(acc_empty.iter().all(|a| a.count == 0), "empty rankings counted as hits");
    Ok(format!(
        "50 crashes, acc@1={} acc@10={} , {} empty rankings all misses",
        acc[0].count, acc[9].count, empty.len()
    ))
}

fn c6_brier() -> Check {
    let labels = [true, false, true, true, false, false, true, false, false, true];
    let b: f64 = brier(&[0.5; 10], &labels).map_err(|e| e.to_string())?;
    ensure!((b - 0.25).abs() <= 1e-12, "constant 0.5 scored {b}");
    let perfect: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let p = brier(&perfect, &labels).map_err(|e| e.to_string())?;
    ensure!(p == 0.0, "perfect predictor scored {p}");
    Ok(format!("constant 0.5 -> {b}, perfect -> {p}"))
}

fn c7_point_biserial() -> Check {
    let r: f64 = point_biserial(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false])
        .map_err(|e| e.to_string())?
        .r;
    // hand Pearson: deviations (.4,.3,-.4,-.3) vs (.5,.5,-.5,-.5) -> 0.7 / sqrt(0.5 * 1)
    let hand = 0.7 / 0.5f64.sqrt();
    ensure!((r - 0.9899).abs() <= 1e-3, "r = {r}");
    ensure!((r - hand).abs() <= 1e-12, "r = {r}, hand {hand}");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let n = rng.gen_range(4..60);
        let conf: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut labels: Vec<bool> = conf.iter().map(|c| rng.gen::<f64>() < *c).collect();
        labels[0] = true;
        labels[1] = false;
        let (a, b) = (rng.gen_range(0.01..100.0), rng.gen_range(-50.0..50.0));
        let scaled: Vec<f64> = conf.iter().map(|c| a * c + b).collect();
        let r1 = point_biserial(&conf, &labels).map_err(|e| e.to_string())?.r;
        let r2 = point_biserial(&scaled, &labels).map_err(|e| e.to_string())?.r;
        ensure!((r1 - r2).abs() <= 1e-9, "trial {trial}: {r1} vs {r2} under x*{a}+{b}");
    }
    Ok(format!("r = {r:.6}; affine invariant over 100 trials"))
}

fn c8_platt() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let conf: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<bool> = conf.iter().map(|c| rng.gen::<f64>() < c * c).collect();
    let cv = platt_cv(&conf, &labels, 5, 42).map_err(|e| e.to_string())?;
    let raw = brier(&conf, &labels).map_err(|e| e.to_string())?;
    let calibrated = brier(&cv.scores, &labels).map_err(|e| e.to_string())?;
    ensure!(calibrated < raw, "Brier {raw} -> {calibrated} did not drop");
    let model = platt_fit(&conf, &labels).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..=100).map(|i| model.apply(i as f64 / 100.0)).collect();
    ensure!(grid.windows(2).all(|w| w[1] >= w[0]), "calibration map is not monotone");
    let again = platt_cv(&conf, &labels, 5, 42).map_err(|e| e.to_string())?;
    let ser = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>();
    ensure!(ser(&cv.scores) == ser(&again.scores), "same seed gave different scores");
    within(start, Duration::from_secs(10), "calibration")?;
    Ok(format!("Brier {raw:.4} -> {calibrated:.4}, a = {:.3}, {:.2?}", model.a, start.elapsed()))
}

const AGENT_DUMP: &str = "[BUILD]\ngit: 0123abcd\n[CRASH_EXTINFO]\nSignal: SIGSEGV (11)\nFaulting address: 0x10\n[CRASH_STACK]\n#0: 0x1 in spin() at /build/src/a.cpp:10\n#1: 0x2 in main() at /build/src/main.cpp:2\n";

fn agent_fixture() -> Result<(tempfile::TempDir, RepoSnapshot), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a: String = (1..=20)
        .map(|i| if i == 10 { "  Widget w; w.spin();\n".to_string() } else { format!("// a {i}\n") })
        .collect();
    let files = [
        ("src/a.cpp", a.as_str()),
        ("src/main.cpp", "int main() {\n  run();\n  return 0;\n}\n"),
        ("include/widget.h", "#pragma once\nstruct Widget {\n  void spin();\n};\n"),
    ];
    for (rel, text) in files {
        let path = dir.path().join(rel);
        fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
        fs::write(path, text).map_err(|e| e.to_string())?;
    }
    let repo = RepoSnapshot::open(dir.path(), Some("0123abcd".into())).map_err(|e| e.to_string())?;
    Ok((dir, repo))
}

fn factory(steps: Vec<ScriptStep>) -> impl Fn(usize) -> Result<Box<dyn ChatBackend>, LlmError> + Sync {
    move |_| Ok(Box::new(ScriptedBackend::new(steps.clone())) as Box<dyn ChatBackend>)
}

fn c9_agent_loop() -> Check {
    let (_dir, repo) = agent_fixture()?;
    let dump = parse_crashdump(AGENT_DUMP).map_err(|e| e.to_string())?;
    let mut config = AgentConfig::new(BackendConfig::scripted("unused.jsonl"));

    let def = |path: &str, line: Value, term: &str| {
        ScriptStep::tool(GET_TERM_DEFINITION, json!({"path": path, "line": line, "term": term}))
    };
    let steps = vec![
        ScriptStep::tool(GET_NEARBY_CODE, json!({"path": "ghost.cpp", "line": 1})),
        ScriptStep::tool(GET_NEARBY_CODE, json!({"path": "src/a.cpp", "line": 999})),
        def("src/a.cpp", json!(10), "Gizmo"),
        def("src/a.cpp", json!(10), "w"),
        ScriptStep::tool(GET_NEARBY_CODE, json!({"path": "src/a.cpp"})),
        def("src/a.cpp", json!(10), "Widget"),
        ScriptStep::Final { text: "Widget::spin".into() },
        ScriptStep::Files { files: vec!["include/widget.h".into()] },
    ];
    let run = run_agent_with(&config, &dump, &repo, &factory(steps.clone()), 0);
    ensure!(run.status == RunStatus::Completed, "targeted run ended {:?}", run.status);
    let kinds: HashSet<NavErrorKind> = run.tool_errors.iter().map(|e| e.kind).collect();
    let all = [
        NavErrorKind::FileNotFound,
        NavErrorKind::InvalidLine,
        NavErrorKind::TermNotInLine,
        NavErrorKind::NavigationFailed,
        NavErrorKind::InvalidArgument,
    ];
    for k in all {
        ensure!(kinds.contains(&k), "no {k:?} produced; got {kinds:?}");
    }
    ensure!(run.tool_call_count == 6, "targeted run made {} calls", run.tool_call_count);
    ensure!(run.predicted_files == vec!["include/widget.h"], "predicted {:?}", run.predicted_files);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pool = [
        ScriptStep::tool(GET_CRASH_STACK, json!({})),
        ScriptStep::tool(GET_NEARBY_CODE, json!({"path": "src/a.cpp", "line": 10})),
        ScriptStep::tool(GET_NEARBY_CODE, json!({"path": "nowhere.cpp", "line": 3})),
        def("src/a.cpp", json!(10), "Widget"),
        def("src/a.cpp", json!("x"), "Widget"),
    ];
    let mut runs = 0;
    for trial in 0..300 {
        let budget = rng.gen_range(1..=12);
        let len = rng.gen_range(0..20);
        let mut script: Vec<ScriptStep> = (0..len).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
        script.push(ScriptStep::Final { text: "done".into() });
        script.push(ScriptStep::Files { files: vec!["src/a.cpp".into()] });
        config.max_tool_interactions = budget;
        config.enable_deep_search = rng.gen_bool(0.5);
        let run = run_agent_with(&config, &dump, &repo, &factory(script), 0);
        ensure!(run.tool_call_count <= budget, "trial {trial}: {} calls > N={budget}", run.tool_call_count);
        ensure!(
            matches!(run.status, RunStatus::Completed | RunStatus::BudgetExhausted),
            "trial {trial}: status {:?}",
            run.status
        );
        if !config.enable_deep_search {
            let text = serde_json::to_string(&run.messages).map_err(|e| e.to_string())?;
            ensure!(!text.contains(GET_TERM_DEFINITION), "trial {trial}: deep search leaked into transcript");
        }
        runs += 1;
    }

    config.max_tool_interactions = 25;
    config.enable_deep_search = false;
    let run = run_agent_with(&config, &dump, &repo, &factory(steps), 0);
    let text = serde_json::to_string(&run.messages).map_err(|e| e.to_string())?;
    ensure!(!text.contains(GET_TERM_DEFINITION), "--no-deep-search transcript mentions the tool");
    Ok(format!("5/5 error kinds survived; {runs} random trajectories within budget"))
}

fn crashfl(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crashfl"))
        .args(args)
        .env_remove("CRASHFL_ENDPOINT")
        .env_remove("CRASHFL_MODEL")
        .env_remove("CRASHFL_RUNS")
        .env_remove("CRASHFL_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.code() == Some(0),
        "crashfl {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).map_err(|e| format!("crashfl {args:?}: stdout is not JSON: {e}"))
}

fn c10_end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (corpus, rankings, trace) = (path("corpus"), path("rankings"), path("trace"));
    crashfl(&["synth", "--seed", "7", "-n", "20", "--out", &corpus])?;
    let manifest_path = format!("{corpus}/corpus.json");
    crashfl(&["localize", "--manifest", &manifest_path, "--output-dir", &rankings, "--trace-dir", &trace])?;
    let report = crashfl(&["evaluate", "--manifest", &manifest_path, "--rankings", &rankings])?;

    let m = CorpusManifest::load(Path::new(&manifest_path)).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for a in report["acc_at"].as_array().ok_or("report has no acc_at")? {
        let k = a["k"].as_u64().unwrap_or(0) as usize;
        let want = m
            .entries
            .iter()
            .filter(|e| {
                let exp = e.expected.as_ref().unwrap();
                exp.agent_ranking.iter().take(k).any(|f| e.buggy_files.contains(f))
            })
            .count();
        ensure!(a["count"].as_u64() == Some(want as u64), "acc@{k}: {} != predicted {want}", a["count"]);
        summary.push(format!("acc@{k}={want}"));
    }

    let success = &report["per_crash_success"];
    let deep = m.entries.iter().find(|e| {
        let exp = e.expected.as_ref().unwrap();
        exp.difficulty == Difficulty::DeepOnly
            && exp.script_quality == ScriptQuality::Hit
            && !exp.baseline2.contains(&e.buggy_files[0])
            && success[&e.crash_id] == true
    });
    let deep = deep.ok_or("no deep-search-only crash solved")?;
    let transcript = fs::read_to_string(format!("{trace}/{}/run_0.jsonl", deep.crash_id)).map_err(|e| e.to_string())?;
    ensure!(transcript.contains(GET_TERM_DEFINITION), "{}: solved without deep search", deep.crash_id);
    ensure!(
        transcript.contains(&format!("\"{}:", deep.buggy_files[0])),
        "{}: definition never pointed at the buggy file",
        deep.crash_id
    );
    let pending = m
        .entries
        .iter()
        .find(|e| {
            let exp = e.expected.as_ref().unwrap();
            exp.difficulty == Difficulty::PendingOnly
                && !exp.baseline1.contains(&e.buggy_files[0])
                && exp.baseline2.first() == Some(&e.buggy_files[0])
                && success[&e.crash_id] == true
        })
        .ok_or("no pending-exception-only crash solved")?;
    within(start, Duration::from_secs(60), "synth + localize + evaluate")?;
    Ok(format!(
        "{} (deep: {}, pending: {}) in {:.2?}",
        summary.join(" "),
        deep.crash_id,
        pending.crash_id,
        start.elapsed()
    ))
}

fn c11_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut n = 0;
    for (seed, count) in [(7, 20), (11, 40)] {
        let out = dir.path().join(format!("c{seed}"));
        let m = generate_corpus(seed, count, &default_mix(), &out).map_err(|e| e.to_string())?;
        for e in &m.entries {
            let raw = fs::read_to_string(m.resolve(&e.dump_path)).map_err(|e| e.to_string())?;
            let dump = parse_crashdump(&raw).map_err(|e| e.to_string())?;
            ensure!(dump.render() == raw, "{}: render differs from input", e.crash_id);
            let stack_raw = dump.get_section("CRASH_STACK").map_err(|e| e.to_string())?;
            let info_raw = dump.get_section("CRASH_EXTINFO").map_err(|e| e.to_string())?;
            let stack = parse_crash_stack(stack_raw);
            let info = parse_crash_extinfo(info_raw).map_err(|e| e.to_string())?;
            ensure!(sanitize_crash_stack(&stack).len() <= stack_raw.len(), "{}: sanitized stack longer", e.crash_id);
            ensure!(sanitize_crash_extinfo(&info).len() <= info_raw.len(), "{}: sanitized extinfo longer", e.crash_id);
            n += 1;
        }
    }
    Ok(format!("{n} generated dumps byte-identical, sanitized never longer"))
}

fn c12_alignment() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..1000 {
        let mut crashes = CrashVerdicts::new();
        for c in 0..rng.gen_range(1..=12) {
            let files = (0..rng.gen_range(0..=7))
                .map(|f| JudgedFile {
                    path: format!("f{f}.cpp"),
                    verdict: Verdict::from_votes(rng.gen_range(0..=5), 5),
                })
                .collect();
            crashes.insert(format!("c{c}"), files);
        }
        let rates = alignment_rates(&crashes);
        ensure!(
            rates.top1 <= rates.top3 && rates.top3 <= rates.overall,
            "trial {trial}: {rates:?} out of order"
        );
        let frac = |k: usize| {
            crashes.values().filter(|v| v.iter().take(k).any(|j| j.verdict.votes_aligned >= 3)).count() as f64
                / crashes.len() as f64
        };
        ensure!(
            rates.top1 == frac(1) && rates.top3 == frac(3) && rates.overall == frac(usize::MAX),
            "trial {trial}: {rates:?} differs from direct count"
        );
    }
    Ok("1000 randomized verdict sets ordered top1 <= top3 <= overall".into())
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("aggregation matches brute-force vote fold", c1_aggregation),
        ("augmentation worked example", c2_augmentation),
        ("baselines match dedup/concatenation oracles", c3_baselines),
        ("crash typing and corpus type mix", c4_crash_typing),
        ("acc@k prefix-scan oracle", c5_acc_at_k),
        ("Brier score anchors", c6_brier),
        ("point-biserial value and affine invariance", c7_point_biserial),
        ("Platt cross-validated calibration", c8_platt),
        ("agent loop budget, error kinds, deep-search filter", c9_agent_loop),
        ("end-to-end synth -> localize -> evaluate", c10_end_to_end),
        ("crashdump round-trip and sanitize length", c11_round_trip),
        ("alignment rate ordering", c12_alignment),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{:>2}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
