use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crashfl_core::agent::{
    run_repeated_with, AgentConfig, AgentRun, BackendFactory, Prompts, RunStatus,
    DEFAULT_MAX_TOOL_INTERACTIONS, DEFAULT_RUNS,
};
use crashfl_core::corpus::{
    default_mix, generate_corpus, parse_mix, validate_manifest, CorpusError, CorpusManifest,
};
use crashfl_core::crashdump::{
    classify_crash_type, parse_crashdump_with, sanitize_crash_extinfo, sanitize_crash_stack,
    Crashdump, ParseOptions,
};
use crashfl_core::evalkit::{
    brier, build_report, platt_cv, platt_fit, round6, top1_success, CrashOutcome, EvalError,
    Rankings, ReportOptions,
};
use crashfl_core::explain::{
    consolidate, judge as judge_one, AlignmentReport, CrashVerdicts, ExplainError, JudgedFile,
};
use crashfl_core::llm::{load_script, BackendConfig, ChatBackend, ScriptStep, ScriptedBackend};
use crashfl_core::ranking::{augment, baseline as baseline_of, RankingRecord};
use crashfl_core::reponav::{RepoSnapshot, ResolverConfig};
use crashfl_core::Ranking;

use crate::settings::Settings;
use crate::{
    BackendArgs, BaselineArgs, CalibrateArgs, CliError, Env, EvaluateArgs, JudgeArgs, LocalizeArgs,
    ParseArgs, SynthArgs, EXIT_DEGRADED, EXIT_OK,
};

fn write_json<T: Serialize>(value: &T, output: Option<&Path>) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Json(e.to_string()))?;
    text.push('\n');
    match output {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            fs::write(path, text).map_err(|e| CliError::io(path, e))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json(format!("{}: {e}", path.display())))
}

fn load_dump(path: &Path) -> Result<Crashdump, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Dump(format!("{}: not valid UTF-8", path.display())))?;
    parse_crashdump_with(&text, &path.display().to_string(), &ParseOptions::default())
        .map_err(|e| CliError::Dump(format!("{}: {e}", path.display())))
}

fn open_repo(path: &Path, dump: &Crashdump) -> Result<RepoSnapshot, CliError> {
    if !path.is_dir() {
        return Err(CliError::Usage(format!(
            "repository path {} does not exist",
            path.display()
        )));
    }
    RepoSnapshot::open(path, dump.build_revision()).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn parse(a: ParseArgs) -> Result<u8, CliError> {
    let dump = load_dump(&a.dump)?;
    let sections: Vec<Value> = dump
        .sections()
        .iter()
        .map(|s| json!({ "name": s.name(), "bytes": s.raw_body().len() }))
        .collect();
    let info = dump.crash_extinfo();
    let stack = dump.crash_stack();
    if let Err(e) = &info {
        log::warn!("{}: {e}", a.dump.display());
    }
    if let Err(e) = &stack {
        log::warn!("{}: {e}", a.dump.display());
    }
    let locations: Vec<Value> = match &stack {
        Ok(s) => s
            .locations()
            .map(|l| serde_json::to_value(l).expect("location serializes"))
            .collect(),
        Err(_) => Vec::new(),
    };
    let mut doc = json!({
        "sections": sections,
        "crash_type": info.as_ref().ok().map(classify_crash_type),
        "build_revision": dump.build_revision(),
        "locations": locations,
        "skipped_lines": stack.as_ref().map(|s| s.skipped_lines).unwrap_or(0),
    });
    if a.sanitize {
        doc["sanitized"] = json!({
            "CRASH_STACK": stack.as_ref().ok().map(sanitize_crash_stack),
            "CRASH_EXTINFO": info.as_ref().ok().map(sanitize_crash_extinfo),
        });
    }
    write_json(&doc, a.output.as_deref())?;
    Ok(EXIT_OK)
}

enum BackendPlan {
    Scripts(Vec<Vec<ScriptStep>>),
    Http(BackendConfig),
    Unset,
}

impl BackendPlan {
    fn resolve(args: &BackendArgs, s: &Settings) -> Result<BackendPlan, CliError> {
        if !args.scripts.is_empty() {
            let scripts = args
                .scripts
                .iter()
                .map(|p| {
                    load_script(p).map_err(|e| CliError::Backend(format!("{}: {e}", p.display())))
                })
                .collect::<Result<_, _>>()?;
            return Ok(BackendPlan::Scripts(scripts));
        }
        match (&s.endpoint, &s.model) {
            (Some(endpoint), Some(model)) => {
                let mut cfg = BackendConfig::http(endpoint.clone(), model.clone());
                if let Some(t) = s.temperature {
                    cfg.temperature = t;
                }
                if let Some(m) = s.max_response_tokens {
                    cfg.max_response_tokens = m;
                }
                cfg.build().map_err(|e| CliError::Backend(e.to_string()))?;
                Ok(BackendPlan::Http(cfg))
            }
            (Some(_), None) => Err(CliError::Usage("--endpoint needs --model".into())),
            (None, Some(_)) => Err(CliError::Usage("--model needs --endpoint".into())),
            (None, None) => Ok(BackendPlan::Unset),
        }
    }

    fn config(&self) -> BackendConfig {
        match self {
            BackendPlan::Http(cfg) => cfg.clone(),
            _ => BackendConfig::scripted(PathBuf::new()),
        }
    }

    fn factory(&self) -> Box<BackendFactory<'_>> {
        match self {
            BackendPlan::Scripts(scripts) => Box::new(move |i: usize| {
                Ok(
                    Box::new(ScriptedBackend::new(scripts[i % scripts.len()].clone()))
                        as Box<dyn ChatBackend>,
                )
            }),
            BackendPlan::Http(cfg) => Box::new(move |_: usize| cfg.build()),
            BackendPlan::Unset => unreachable!("resolved before running"),
        }
    }
}

fn no_backend() -> CliError {
    CliError::Usage("no model backend: pass --script, or --endpoint and --model".into())
}

struct Localized {
    record: RankingRecord,
    failed_runs: Vec<usize>,
}

struct LocalizeJob<'a> {
    config: &'a AgentConfig,
    runs: usize,
    jobs: usize,
    trace_dir: Option<&'a Path>,
    augment_with: Option<crashfl_core::ranking::BaselineKind>,
}

impl LocalizeJob<'_> {
    fn run(
        &self,
        crash_id: &str,
        dump_path: &Path,
        repo_path: &Path,
        plan: &BackendPlan,
    ) -> Result<Localized, CliError> {
        let dump = load_dump(dump_path)?;
        let repo = open_repo(repo_path, &dump)?;
        let factory = plan.factory();
        let runs = run_repeated_with(
            self.config,
            &dump,
            &repo,
            self.runs,
            self.jobs,
            factory.as_ref(),
        );
        let mut failed_runs = Vec::new();
        for run in &runs {
            if matches!(
                run.status,
                RunStatus::BackendFailed | RunStatus::ContextLengthExceeded
            ) {
                log::warn!(
                    "{crash_id}: run {} {:?}: {}",
                    run.run_index,
                    run.status,
                    run.diagnostics.join("; ")
                );
                failed_runs.push(run.run_index);
            }
            if let Some(dir) = self.trace_dir {
                let path = dir
                    .join(crash_id)
                    .join(format!("run_{}.jsonl", run.run_index));
                run.write_transcript(&path)
                    .map_err(|e| CliError::io(&path, e))?;
            }
        }
        let ranking: Ranking = crashfl_core::ranking::aggregate(&runs, self.runs);
        let mut record = ranking.to_record(crash_id);
        if let Some(kind) = self.augment_with {
            let stack = dump
                .crash_stack()
                .map_err(|e| CliError::Dump(format!("{}: {e}", dump_path.display())))?;
            record.augmented = Some(augment(
                &ranking,
                &baseline_of(kind, &stack).resolved(&repo),
            ));
        }
        Ok(Localized {
            record,
            failed_runs,
        })
    }
}

pub fn localize(a: LocalizeArgs, env: Env<'_>) -> Result<u8, CliError> {
    let flags = Settings {
        runs: a.runs,
        max_tool_interactions: a.max_tools,
        jobs: a.jobs,
        endpoint: a.backend.endpoint.clone(),
        model: a.backend.model.clone(),
        temperature: a.backend.temperature,
        max_response_tokens: a.backend.max_response_tokens,
        sanitize: a.sanitize.then_some(true),
        deep_search: a.no_deep_search.then_some(false),
        lsp_command: a.lsp_command.clone(),
    };
    let s = Settings::layered(flags, a.backend.config.as_deref(), env)?;
    let runs = s.runs.unwrap_or(DEFAULT_RUNS);
    if runs == 0 {
        return Err(CliError::Usage("run count must be at least 1".into()));
    }
    let jobs = s.jobs.unwrap_or(runs.min(4));
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let plan = BackendPlan::resolve(&a.backend, &s)?;

    let mut config = AgentConfig::new(plan.config());
    config.max_tool_interactions = s
        .max_tool_interactions
        .unwrap_or(DEFAULT_MAX_TOOL_INTERACTIONS);
    config.sanitize_inputs = s.sanitize.unwrap_or(false);
    config.enable_deep_search = s.deep_search.unwrap_or(true);
    if let Some(cmd) = s.lsp_command.as_deref() {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| CliError::Usage("empty LSP command".into()))?;
        config.resolver = ResolverConfig::lsp(program, parts.collect());
    }
    let job = LocalizeJob {
        config: &config,
        runs,
        jobs,
        trace_dir: a.trace_dir.as_deref(),
        augment_with: a.augment_with,
    };

    let Some(manifest_path) = &a.manifest else {
        if matches!(plan, BackendPlan::Unset) {
            return Err(no_backend());
        }
        let dump = a.dump.as_deref().expect("clap requires --dump");
        let repo = a.repo.as_deref().expect("clap requires --repo");
        let crash_id = a.crash_id.clone().unwrap_or_else(|| {
            dump.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "crash".into())
        });
        let out = job.run(&crash_id, dump, repo, &plan)?;
        write_json(&out.record, a.output.as_deref())?;
        return Ok(if out.failed_runs.is_empty() {
            EXIT_OK
        } else {
            EXIT_DEGRADED
        });
    };

    let manifest = CorpusManifest::load(manifest_path)?;
    let out_dir = a.output_dir.as_deref().expect("clap requires --output-dir");
    let mut summary = Vec::new();
    let mut degraded = false;
    for entry in &manifest.entries {
        let entry_plan;
        let plan = match (&plan, &entry.script_path) {
            (BackendPlan::Unset, Some(script)) => {
                let path = manifest.resolve(script);
                let steps = load_script(&path)
                    .map_err(|e| CliError::Backend(format!("{}: {e}", path.display())))?;
                entry_plan = BackendPlan::Scripts(vec![steps]);
                &entry_plan
            }
            (BackendPlan::Unset, None) => return Err(no_backend()),
            (p, _) => p,
        };
        let out = job.run(
            &entry.crash_id,
            &manifest.resolve(&entry.dump_path),
            &manifest.resolve(&entry.repo_path),
            plan,
        )?;
        let path = out_dir.join(format!("{}.json", entry.crash_id));
        write_json(&out.record, Some(&path))?;
        degraded |= !out.failed_runs.is_empty();
        summary.push(json!({
            "crash_id": entry.crash_id,
            "ranking": path,
            "failed_runs": out.failed_runs,
        }));
    }
    write_json(&json!({ "crashes": summary }), None)?;
    Ok(if degraded { EXIT_DEGRADED } else { EXIT_OK })
}

pub fn baseline(a: BaselineArgs) -> Result<u8, CliError> {
    let dump = load_dump(&a.dump)?;
    let stack = dump
        .crash_stack()
        .map_err(|e| CliError::Dump(format!("{}: {e}", a.dump.display())))?;
    let mut ranking = baseline_of(a.kind, &stack);
    if let Some(repo) = &a.repo {
        ranking = ranking.resolved(&open_repo(repo, &dump)?);
    }
    write_json(&ranking, a.output.as_deref())?;
    Ok(EXIT_OK)
}

/// Ranking files named directly, plus every `*.json` inside named directories.
fn load_rankings(paths: &[PathBuf]) -> Result<Vec<RankingRecord>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inside: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "json"))
                .collect();
            inside.sort();
            files.extend(inside);
        } else {
            files.push(p.clone());
        }
    }
    files.iter().map(|f| read_json(f)).collect()
}

/// One outcome per ranking record; manifest crashes without a record are
/// scored as empty rankings.
fn collect_outcomes(
    manifest: &CorpusManifest,
    records: &[RankingRecord],
) -> (Vec<CrashOutcome>, Vec<String>) {
    let mut outcomes: Vec<CrashOutcome> = records
        .iter()
        .map(|r| CrashOutcome {
            crash_id: r.crash_id.clone(),
            ranking: r.ordered_paths(),
            confidence: r.confidence(),
        })
        .collect();
    let ranked: BTreeSet<&str> = records.iter().map(|r| r.crash_id.as_str()).collect();
    let mut diagnostics = Vec::new();
    for e in manifest
        .entries
        .iter()
        .filter(|e| !ranked.contains(e.crash_id.as_str()))
    {
        diagnostics.push(format!("{}: no ranking, scored as empty", e.crash_id));
        outcomes.push(CrashOutcome {
            crash_id: e.crash_id.clone(),
            ranking: Vec::new(),
            confidence: 0.0,
        });
    }
    outcomes.sort_by(|x, y| x.crash_id.cmp(&y.crash_id));
    (outcomes, diagnostics)
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<RankingRecord>, CliError> {
    let records = load_rankings(paths)?;
    if records.is_empty() {
        return Err(EvalError::InvalidInput("no ranking files found".into()).into());
    }
    Ok(records)
}

pub fn evaluate(a: EvaluateArgs) -> Result<u8, CliError> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    let records = load_records(&a.rankings)?;
    let (outcomes, mut diagnostics) = collect_outcomes(&manifest, &records);
    let defaults = ReportOptions::default();
    let opts = ReportOptions {
        ks: a.ks.unwrap_or(defaults.ks),
        bounds: a.bounds.unwrap_or(defaults.bounds),
        folds: a.folds,
        seed: a.seed,
        permutations: a.permutations,
    };
    let mut report = build_report(&outcomes, &manifest.truths(), &opts)?;
    if let Some(path) = &a.alignment {
        let alignment: AlignmentReport = read_json(path)?;
        report.alignment = Some(alignment.rates);
    }
    diagnostics.append(&mut report.diagnostics);
    report.diagnostics = diagnostics;
    write_json(&report, a.output.as_deref())?;
    Ok(EXIT_OK)
}

#[derive(Debug, Deserialize)]
struct CalibrationInput {
    confidences: Vec<f64>,
    labels: Vec<bool>,
}

pub fn calibrate(a: CalibrateArgs) -> Result<u8, CliError> {
    let input = match (&a.input, &a.manifest) {
        (Some(path), _) => read_json::<CalibrationInput>(path)?,
        (None, Some(manifest)) => {
            let manifest = CorpusManifest::load(manifest)?;
            let records = load_records(&a.rankings)?;
            let (outcomes, diagnostics) = collect_outcomes(&manifest, &records);
            for d in diagnostics {
                log::warn!("{d}");
            }
            let rankings: Rankings = outcomes
                .iter()
                .map(|o| (o.crash_id.clone(), o.ranking.clone()))
                .collect();
            let success = top1_success(&rankings, &manifest.truths())?;
            CalibrationInput {
                confidences: outcomes.iter().map(|o| o.confidence).collect(),
                labels: outcomes.iter().map(|o| success[&o.crash_id]).collect(),
            }
        }
        (None, None) => unreachable!("clap requires --input or --manifest"),
    };
    let model = platt_fit(&input.confidences, &input.labels)?;
    let cv = platt_cv(&input.confidences, &input.labels, a.folds, a.seed)?;
    let doc = json!({
        "n": input.confidences.len(),
        "model": { "a": round6(model.a), "b": round6(model.b), "fallback": model.fallback, "iterations": model.iterations },
        "cv": {
            "folds": cv.folds,
            "seed": cv.seed,
            "scores": cv.scores.iter().map(|s| round6(*s)).collect::<Vec<_>>(),
            "degenerate_folds": cv.degenerate_folds,
            "fallback_folds": cv.fallback_folds,
        },
        "brier_raw": round6(brier(&input.confidences, &input.labels)?),
        "brier_calibrated": round6(brier(&cv.scores, &input.labels)?),
    });
    write_json(&doc, a.output.as_deref())?;
    Ok(EXIT_OK)
}

pub fn synth(a: SynthArgs) -> Result<u8, CliError> {
    let mix = match &a.mix {
        Some(text) => parse_mix(text)?,
        None => default_mix(),
    };
    let manifest = generate_corpus(a.seed, a.count, &mix, &a.out)?;
    let problems = validate_manifest(&manifest);
    if !problems.is_empty() {
        return Err(CorpusError::Manifest {
            path: a.out.display().to_string(),
            detail: problems.join("; "),
        }
        .into());
    }
    let type_counts: BTreeMap<&str, usize> = manifest
        .type_counts()
        .into_iter()
        .map(|(t, n)| (t.as_str(), n))
        .collect();
    let mut difficulties: BTreeMap<String, usize> = BTreeMap::new();
    for e in &manifest.entries {
        if let Some(exp) = &e.expected {
            let key = serde_json::to_value(exp.difficulty).expect("difficulty serializes");
            *difficulties
                .entry(key.as_str().unwrap_or_default().to_string())
                .or_default() += 1;
        }
    }
    let doc = json!({
        "out": a.out,
        "seed": a.seed,
        "crashes": manifest.entries.len(),
        "type_counts": type_counts,
        "difficulties": difficulties,
    });
    write_json(&doc, a.output.as_deref())?;
    Ok(EXIT_OK)
}

fn load_runs(dir: &Path) -> Result<Vec<AgentRun>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut runs = Vec::new();
    for entry in fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(Result::ok)
    {
        let path = entry.path();
        let is_run = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("run_") && n.ends_with(".jsonl"));
        if is_run {
            runs.push(AgentRun::read_transcript(&path).map_err(|e| CliError::io(&path, e))?);
        }
    }
    runs.sort_by_key(|r| r.run_index);
    Ok(runs)
}

fn explain_err(e: ExplainError) -> CliError {
    match e {
        ExplainError::InvalidArgument(m) => CliError::Usage(m),
        other => CliError::Backend(other.to_string()),
    }
}

pub fn judge(a: JudgeArgs, env: Env<'_>) -> Result<u8, CliError> {
    if a.judges.is_multiple_of(2) {
        return Err(CliError::Usage(format!(
            "--judges must be odd, got {}",
            a.judges
        )));
    }
    if a.backend.scripts.len() > 1 {
        return Err(CliError::Usage("judge takes a single --script".into()));
    }
    let flags = Settings {
        endpoint: a.backend.endpoint.clone(),
        model: a.backend.model.clone(),
        temperature: a.backend.temperature,
        max_response_tokens: a.backend.max_response_tokens,
        ..Settings::default()
    };
    let s = Settings::layered(flags, a.backend.config.as_deref(), env)?;
    let mut backend = match BackendPlan::resolve(&a.backend, &s)? {
        BackendPlan::Scripts(mut scripts) => {
            Box::new(ScriptedBackend::new(scripts.remove(0))) as Box<dyn ChatBackend>
        }
        BackendPlan::Http(cfg) => cfg.build().map_err(|e| CliError::Backend(e.to_string()))?,
        BackendPlan::Unset => return Err(no_backend()),
    };
    let prompts = Prompts::default();
    let manifest = CorpusManifest::load(&a.manifest)?;
    let mut records = load_records(&a.rankings)?;
    records.sort_by(|x, y| x.crash_id.cmp(&y.crash_id));

    let mut crashes = CrashVerdicts::new();
    for record in &records {
        let entry = manifest
            .entry(&record.crash_id)
            .ok_or_else(|| EvalError::MissingGroundTruth(record.crash_id.clone()))?;
        let Some(pm) = &entry.postmortem_path else {
            log::warn!("{}: no postmortem, skipped", record.crash_id);
            continue;
        };
        let pm_path = manifest.resolve(pm);
        let postmortem = fs::read_to_string(&pm_path).map_err(|e| CliError::io(&pm_path, e))?;
        let runs = load_runs(&a.trace_dir.join(&record.crash_id))?;
        let mut judged = Vec::new();
        for e in record.entries.iter().take(a.top) {
            let backend_for_summary: Option<&mut dyn ChatBackend> = match a.llm_consolidate {
                true => Some(&mut *backend),
                false => None,
            };
            let explanation = match consolidate(&runs, &e.path, backend_for_summary, &prompts) {
                Ok(x) => x,
                Err(ExplainError::NoSourceRuns(path)) => {
                    log::warn!("{}: no transcript explains {path}", record.crash_id);
                    continue;
                }
                Err(other) => return Err(explain_err(other)),
            };
            let verdict = judge_one(
                backend.as_mut(),
                &prompts,
                &postmortem,
                &explanation.consolidated,
                a.judges,
            )
            .map_err(explain_err)?;
            judged.push(JudgedFile {
                path: e.path.clone(),
                verdict,
            });
        }
        crashes.insert(record.crash_id.clone(), judged);
    }
    write_json(&AlignmentReport::new(crashes), a.output.as_deref())?;
    Ok(EXIT_OK)
}
