use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{io_err, CorpusError, CorpusManifest, CrashMix, Difficulty, Expected, ManifestEntry, ScriptQuality, MANIFEST_FILE};
use crate::agent::{GET_CRASH_EXTINFO, GET_CRASH_STACK, GET_NEARBY_CODE, GET_TERM_DEFINITION};
use crate::crashdump::CrashType;
use crate::llm::ScriptStep;

const DIRS: [&str; 5] = ["src/storage", "src/query", "src/net", "src/util", "include"];
const WORDS: [&str; 20] = [
    "page_cache", "txn_log", "row_store", "col_store", "lock_mgr", "plan_cache", "executor", "parser",
    "session", "buffer_pool", "hash_index", "btree", "allocator", "scheduler", "checkpoint", "replicator",
    "compressor", "catalog", "optimizer", "vacuum",
];
const SYMBOLS: [&str; 8] = ["SlotTable", "PageHandle", "LogCursor", "RowVersion", "PlanEntry", "LockQueue", "ChunkMap", "TaskSlot"];
const THREADS: [&str; 5] = ["JobWorker", "SqlExecutor", "Request", "LogBackup", "MergeDog"];
const BUILD_ROOT: &str = "/build/hana";

/// Counts per type summing to `n`: floors first, then the largest
/// remainders (earlier types win ties).
pub fn largest_remainder_counts(mix: &CrashMix, n: usize) -> Vec<(CrashType, usize)> {
    let mut counts: Vec<(CrashType, usize, f64)> = mix
        .iter()
        .map(|(t, r)| {
            let exact = r * n as f64;
            (*t, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = counts.iter().map(|c| c.1).sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|a, b| counts[*b].2.total_cmp(&counts[*a].2).then(a.cmp(b)));
    for i in order.into_iter().take(n.saturating_sub(assigned)) {
        counts[i].1 += 1;
    }
    counts.into_iter().map(|(t, c, _)| (t, c)).collect()
}

fn check_mix(mix: &CrashMix) -> Result<(), CorpusError> {
    if mix.is_empty() {
        return Err(CorpusError::InvalidMix("empty".into()));
    }
    if let Some((t, r)) = mix.iter().find(|(_, r)| !(r.is_finite() && *r >= 0.0)) {
        return Err(CorpusError::InvalidMix(format!("{t} has ratio {r}")));
    }
    let sum: f64 = mix.iter().map(|(_, r)| r).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidMix(format!("ratios sum to {sum}, not 1")));
    }
    let mut seen = HashSet::new();
    if let Some((t, _)) = mix.iter().find(|(t, _)| !seen.insert(*t)) {
        return Err(CorpusError::InvalidMix(format!("{t} listed twice")));
    }
    Ok(())
}

struct SourceFile {
    path: String,
    lines: Vec<String>,
    /// (function name, 1-based body line numbers)
    functions: Vec<(String, Vec<u32>)>,
}

impl SourceFile {
    fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    fn pick_site(&self, rng: &mut ChaCha8Rng) -> (String, u32) {
        let (name, body) = &self.functions[rng.gen_range(0..self.functions.len())];
        (name.clone(), body[rng.gen_range(0..body.len())])
    }

    fn set_line(&mut self, line: u32, text: String) {
        self.lines[line as usize - 1] = text;
    }
}

fn source_file(rng: &mut ChaCha8Rng, path: String, stem: &str, planted: Option<&str>) -> SourceFile {
    let mut lines = vec![format!("// {path}"), "#include <cstddef>".into(), String::new(), "namespace db {".into(), String::new()];
    if let Some(sym) = planted {
        lines.extend([
            format!("struct {sym} {{"),
            format!("  static {sym}* instance();"),
            "  std::size_t slots;".into(),
            "  int* table;".into(),
            "};".into(),
            String::new(),
        ]);
    }
    let mut functions = Vec::new();
    for f in 0..rng.gen_range(2..=4) {
        let name = format!("{stem}_fn{f}");
        let k = rng.gen_range(2..97);
        lines.push(format!("int {name}(int n) {{"));
        lines.push("  int acc = 0;".into());
        let mut body = Vec::new();
        lines.push("  for (int i = 0; i < n; ++i) {".into());
        for j in 0..rng.gen_range(3..=7) {
            lines.push(format!("    acc += i * {} + {j};", k + j));
            body.push(lines.len() as u32);
        }
        lines.push("  }".into());
        lines.push("  return acc;".into());
        lines.push("}".into());
        lines.push(String::new());
        functions.push((name, body));
    }
    lines.push("}  // namespace db".into());
    SourceFile { path, lines, functions }
}

struct Frame {
    file: usize,
    function: String,
    line: u32,
}

fn frame_line(rng: &mut ChaCha8Rng, index: usize, frame: &Frame, files: &[SourceFile]) -> String {
    format!(
        "#{index}: 0x{:016x} in db::{}(int) at {BUILD_ROOT}/{}:{}",
        rng.gen_range(0x7f00_0000_0000u64..0x7fff_ffff_ffff),
        frame.function,
        files[frame.file].path,
        frame.line
    )
}

fn dedup_paths(frames: &[&Frame], files: &[SourceFile]) -> Vec<String> {
    let mut seen = HashSet::new();
    frames
        .iter()
        .map(|f| files[f.file].path.clone())
        .filter(|p| seen.insert(p.clone()))
        .collect()
}

fn extinfo(rng: &mut ChaCha8Rng, kind: CrashType) -> String {
    let (number, code, address): (u32, u32, u64) = match kind {
        CrashType::SigAbrt => (6, 0, 0),
        CrashType::SigSegvNpe => (11, 1, rng.gen_range(0..0x1000)),
        CrashType::SigSegvNonNpe => (11, rng.gen_range(1..=2), rng.gen_range(0x1000..0x7fff_ffff_ffffu64)),
        CrashType::SigBus => (7, 2, rng.gen_range(0x7f00_0000_0000u64..0x7fff_ffff_ffff)),
        CrashType::SigFpe => (8, 1, rng.gen_range(0x5500_0000_0000u64..0x56ff_ffff_ffff)),
        CrashType::Other => (4, 1, rng.gen_range(0x5500_0000_0000u64..0x56ff_ffff_ffff)),
    };
    let mut s = String::new();
    s.push_str("--> Signal information <--\n");
    let _ = writeln!(s, "  Signal:           {} ({number})", kind.signal_name());
    let _ = writeln!(s, "  Signal code:      {code}");
    if kind != CrashType::SigAbrt {
        let _ = writeln!(s, "  Faulting address: 0x{address:016x}");
    }
    s.push_str("--> Registers <--\n");
    for regs in [["rax", "rbx", "rcx", "rdx"], ["rsi", "rdi", "rbp", "rsp"], ["r8", "r9", "r10", "r11"]] {
        let row: Vec<String> = regs
            .iter()
            .map(|r| format!("{r}=0x{:016x}", rng.gen::<u64>() >> rng.gen_range(0..40)))
            .collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s.push_str("--> Host <--\n");
    let _ = writeln!(s, "  Host:             hana-node-{:02}", rng.gen_range(1..64));
    let _ = writeln!(s, "  OS:               Linux 5.14.21-150400.24.{}-default", rng.gen_range(10..99));
    let _ = writeln!(s, "  Uptime:           {}s", rng.gen_range(100..5_000_000));
    s
}

fn bug_summary(kind: CrashType) -> &'static str {
    match kind {
        CrashType::SigAbrt => "fails the slot-count assertion after a concurrent resize",
        CrashType::SigSegvNpe => "dereferences a null pointer returned by a lookup that can miss",
        CrashType::SigSegvNonNpe => "reads through a dangling pointer into a freed buffer",
        CrashType::SigBus => "performs a misaligned access into a memory-mapped page",
        CrashType::SigFpe => "divides by a bucket count that can be zero",
        CrashType::Other => "jumps through a corrupted function table",
    }
}

struct Crash {
    entry: ManifestEntry,
    files: Vec<SourceFile>,
    dump: String,
    script: Vec<ScriptStep>,
    postmortem: String,
}

fn generate_one(rng: &mut ChaCha8Rng, index: usize, kind: CrashType, force_hit: bool) -> Crash {
    let crash_id = format!("crash_{index:03}");
    let difficulty = Difficulty::ALL[index % 3];
    let revision: String = (0..40).map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap()).collect();
    let symbol = format!("{}{index}", SYMBOLS[rng.gen_range(0..SYMBOLS.len())]);

    let n_files = rng.gen_range(5..=50);
    let mut files = Vec::with_capacity(n_files);
    let buggy = rng.gen_range(0..n_files);
    let planted_at = if difficulty == Difficulty::DeepOnly { buggy } else { rng.gen_range(0..n_files) };
    for j in 0..n_files {
        let word = WORDS[rng.gen_range(0..WORDS.len())];
        let dir = DIRS[rng.gen_range(0..DIRS.len())];
        let ext = if dir == "include" { "h" } else { "cpp" };
        let stem = format!("{word}_{j}");
        let path = format!("{dir}/{stem}.{ext}");
        let planted = (j == planted_at).then_some(symbol.as_str());
        files.push(source_file(rng, path, &stem, planted));
    }
    let others: Vec<usize> = (0..n_files).filter(|j| *j != buggy).collect();
    let frame_in = |rng: &mut ChaCha8Rng, file: usize, files: &[SourceFile]| {
        let (function, line) = files[file].pick_site(rng);
        Frame { file, function, line }
    };

    // backtrace: top frame first
    let depth = rng.gen_range(3..=8);
    let mut backtrace = Vec::with_capacity(depth);
    let mut pending = Vec::new();
    for d in 0..depth {
        let file = if d == 0 && difficulty == Difficulty::StackTop {
            buggy
        } else {
            others[rng.gen_range(0..others.len())]
        };
        backtrace.push(frame_in(rng, file, &files));
    }
    if difficulty == Difficulty::PendingOnly {
        pending.push(frame_in(rng, buggy, &files));
        for _ in 0..rng.gen_range(1..=3) {
            let file = others[rng.gen_range(0..others.len())];
            pending.push(frame_in(rng, file, &files));
        }
    }
    let top = &backtrace[0];
    let (top_file, top_line) = (top.file, top.line);
    if difficulty == Difficulty::DeepOnly {
        files[top_file].set_line(top_line, format!("    {symbol}* entry = {symbol}::instance(); acc += entry->table[i];"));
    }
    // the faulty statement
    let bug_site = match difficulty {
        Difficulty::StackTop => top_line,
        Difficulty::PendingOnly => pending[0].line,
        Difficulty::DeepOnly => files[buggy].pick_site(rng).1,
    };
    let bug_text = match kind {
        CrashType::SigFpe => "    acc += n / static_cast<int>(slots_for(i));",
        CrashType::SigAbrt => "    assert_slots(acc, i);",
        _ => "    acc += lookup(i)->table[i];",
    };
    files[buggy].set_line(bug_site, bug_text.to_string());

    let thread = THREADS[rng.gen_range(0..THREADS.len())];
    let mut stack = String::new();
    stack.push_str("--> Stack trace of crashing thread <--\n");
    let _ = writeln!(stack, "Thread {} \"{thread}\":", rng.gen_range(1000..99999));
    for (i, f) in backtrace.iter().enumerate() {
        let _ = writeln!(stack, "{}", frame_line(rng, i, f, &files));
    }
    if !pending.is_empty() {
        stack.push_str("--> Pending exceptions (possible root cause) <--\n");
        let _ = writeln!(stack, "exception 1: no.{} (ltt::exception)", rng.gen_range(1_000_000..9_999_999));
        for (i, f) in pending.iter().enumerate() {
            let _ = writeln!(stack, "{}", frame_line(rng, i, f, &files));
        }
    }

    let mut dump = String::new();
    let _ = writeln!(dump, "CRASH DUMP FILE of indexserver, pid {}", rng.gen_range(1000..65000));
    dump.push('\n');
    dump.push_str("[BUILD]\n");
    let _ = writeln!(dump, "Version: 2.00.{:03}.00", rng.gen_range(40..80));
    let _ = writeln!(dump, "git: {revision}");
    dump.push_str("Branch: orange\nCompiler: gcc 12.3.0\n");
    dump.push_str("[CRASH_SHORTINFO]\n");
    let _ = writeln!(dump, "{} in db::{}", kind.signal_name(), backtrace[0].function);
    dump.push_str("[CRASH_EXTINFO]\n");
    dump.push_str(&extinfo(rng, kind));
    dump.push_str("[CRASH_STACK]\n");
    dump.push_str(&stack);
    dump.push_str("[MEMORY_OVERVIEW]\n");
    let _ = writeln!(dump, "Used: {} MB\nPeak: {} MB", rng.gen_range(1000..64000), rng.gen_range(64000..128000));

    let buggy_path = files[buggy].path.clone();
    let top_path = files[top_file].path.clone();
    let decoys: Vec<String> = {
        let mut candidates: Vec<String> = dedup_paths(&backtrace.iter().collect::<Vec<_>>(), &files);
        candidates.retain(|p| *p != buggy_path);
        for j in &others {
            if !candidates.contains(&files[*j].path) {
                candidates.push(files[*j].path.clone());
            }
        }
        candidates
    };
    let quality = if force_hit {
        ScriptQuality::Hit
    } else {
        match rng.gen_range(0..100) {
            0..70 => ScriptQuality::Hit,
            70..85 => ScriptQuality::Second,
            _ => ScriptQuality::Miss,
        }
    };
    let predicted: Vec<String> = match quality {
        ScriptQuality::Hit => {
            let mut v = vec![buggy_path.clone()];
            v.extend(decoys.iter().take(rng.gen_range(0..=2)).cloned());
            v
        }
        ScriptQuality::Second => vec![decoys[0].clone(), buggy_path.clone()],
        ScriptQuality::Miss => decoys.iter().take(rng.gen_range(1..=2)).cloned().collect(),
    };

    let summary = bug_summary(kind);
    let mut script = vec![
        ScriptStep::tool(GET_CRASH_EXTINFO, json!({})),
        ScriptStep::tool(GET_CRASH_STACK, json!({})),
        ScriptStep::tool(GET_NEARBY_CODE, json!({"path": top_path, "line": top_line})),
    ];
    match difficulty {
        Difficulty::StackTop => {}
        Difficulty::PendingOnly => {
            script.push(ScriptStep::tool(GET_NEARBY_CODE, json!({"path": buggy_path, "line": pending[0].line})));
        }
        Difficulty::DeepOnly => {
            script.push(ScriptStep::tool(
                GET_TERM_DEFINITION,
                json!({"path": top_path, "line": top_line, "term": symbol}),
            ));
            script.push(ScriptStep::tool(GET_NEARBY_CODE, json!({"path": buggy_path, "line": bug_site})));
        }
    }
    let blamed = &predicted[0];
    script.push(ScriptStep::Final {
        text: format!("The crash is caused by {blamed}: the code at the faulting frame {summary}."),
    });
    script.push(ScriptStep::Files { files: predicted.clone() });

    let postmortem = format!(
        "Root cause: {buggy_path} line {bug_site} {summary}.\n\
         Symptom: {} raised in thread {thread}.\n\
         Fix: guard the access in {buggy_path} and add a regression test.\n",
        kind.signal_name()
    );

    let b1 = dedup_paths(&backtrace.iter().collect::<Vec<_>>(), &files);
    let b2 = dedup_paths(&pending.iter().chain(&backtrace).collect::<Vec<_>>(), &files);
    let expected = Expected {
        difficulty,
        script_quality: quality,
        agent_confidence: 1.0 / predicted.len() as f64,
        agent_ranking: predicted,
        baseline1: b1,
        baseline2: b2,
        uses_deep_search: difficulty == Difficulty::DeepOnly,
    };
    let dir = PathBuf::from(&crash_id);
    Crash {
        entry: ManifestEntry {
            crash_id,
            dump_path: dir.join("dump.txt"),
            repo_path: dir.join("repo"),
            revision,
            buggy_files: vec![buggy_path],
            crash_type: kind,
            script_path: Some(dir.join("script.jsonl")),
            postmortem_path: Some(dir.join("postmortem.txt")),
            expected: Some(expected),
        },
        files,
        dump,
        script,
        postmortem,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `n_crashes` fixtures under `out_dir` plus `corpus.json`.
/// Identical arguments give byte-identical trees.
pub fn generate_corpus(seed: u64, n_crashes: usize, mix: &CrashMix, out_dir: &Path) -> Result<CorpusManifest, CorpusError> {
    check_mix(mix)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<CrashType> = largest_remainder_counts(mix, n_crashes)
        .into_iter()
        .flat_map(|(t, c)| std::iter::repeat_n(t, c))
        .collect();
    kinds.shuffle(&mut rng);

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut entries = Vec::with_capacity(n_crashes);
    for (i, kind) in kinds.into_iter().enumerate() {
        // the first crash of each difficulty class always localizes
        let crash = generate_one(&mut rng, i, kind, i < 3);
        let dir = out_dir.join(&crash.entry.crash_id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        for f in &crash.files {
            write_file(&dir.join("repo").join(&f.path), &f.text())?;
        }
        write_file(&dir.join("dump.txt"), &crash.dump)?;
        let script: String = crash.script.iter().map(|s| s.to_line() + "\n").collect();
        write_file(&dir.join("script.jsonl"), &script)?;
        write_file(&dir.join("postmortem.txt"), &crash.postmortem)?;
        entries.push(crash.entry);
    }
    let manifest = CorpusManifest {
        seed: Some(seed),
        entries,
        base_dir: out_dir.to_path_buf(),
    };
    write_file(&out_dir.join(MANIFEST_FILE), &manifest.to_json())?;
    Ok(manifest)
}
