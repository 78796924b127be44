use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde_json::json;
use truthlens_core::eval::{ablation_run, evaluate, mode_tag, write_roc_csv, EvalError, EvalOptions, EvalReport, MetricSet};
use truthlens_core::gateway::{
    Gateway, ImagePayload, LiveBackend, MockBackend, MockScript, ModelBackend, RateLimiter, ReplayBackend, ResponseCache,
};
use truthlens_core::manifest::{load_manifest, sample_balanced, save_manifest, scan_directories, Generator, Manifest};
use truthlens_core::pipeline::{format_verdict, DetectionMode, DetectionRecord, Detector, DetectorOptions, SummaryBudget};
use truthlens_core::prompts::{builtin_prompt_set, load_prompt_set, yes_no_prompt, yes_no_prompt_with, PromptSet};
use truthlens_core::Label;

use crate::config::{BackendChoice, RunConfig, RunMode};
use crate::{CacheCommand, Cli, Command, GlobalArgs, ManifestCommand};

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_GATEWAY: u8 = 3;
pub const EXIT_THRESHOLD: u8 = 4;

const DEFAULT_OUT_DIR: &str = "truthlens-out";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Display) -> Self {
        CliError { code, message: message.to_string() }
    }
}

fn config_err(e: impl Display) -> CliError {
    CliError::new(EXIT_CONFIG, e)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

struct Context {
    cfg: RunConfig,
    prompts: PromptSet,
    fingerprint: String,
    out_dir: PathBuf,
    json: bool,
    verbose: bool,
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(g.config.as_deref()).map_err(config_err)?;
    if let Some(m) = g.mode {
        cfg.mode = m;
    }
    if let Some(d) = &g.replay {
        cfg.replay_dir = Some(d.clone());
    }
    if let Some(p) = g.parallelism {
        cfg.parallelism = p;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(b) = g.backend {
        cfg.backend = b;
    }
    if let Some(p) = &g.mock_script {
        cfg.mock_script = Some(p.clone());
    }
    if let Some(d) = &g.cache_dir {
        cfg.cache_dir = d.clone();
    }
    if let Some(p) = &g.prompts {
        cfg.prompt_set_path = Some(p.clone());
    }
    if g.skip_failed_prompts {
        cfg.skip_failed_prompts = true;
    }
    if let Some(t) = g.failure_threshold {
        cfg.failure_threshold = t;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn context(g: &GlobalArgs, forced_mode: Option<RunMode>) -> Result<Context, CliError> {
    let mut cfg = resolve_config(g)?;
    if let Some(m) = forced_mode {
        cfg.mode = m;
    }
    let prompts = match &cfg.prompt_set_path {
        Some(p) => load_prompt_set(p).map_err(config_err)?,
        None => builtin_prompt_set(),
    };
    let script_text = match (&cfg.mock_script, cfg.backend) {
        (Some(p), BackendChoice::Mock) => {
            Some(fs::read_to_string(p).map_err(|e| config_err(format!("mock script {}: {e}", p.display())))?)
        }
        _ => None,
    };
    let fingerprint = cfg.fingerprint(&prompts, script_text.as_deref());
    Ok(Context {
        cfg,
        prompts,
        fingerprint,
        out_dir: g.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        json: g.json,
        verbose: g.verbose,
    })
}

fn build_detector(cfg: &RunConfig) -> Result<Detector, CliError> {
    let backend: Arc<dyn ModelBackend> = match (&cfg.replay_dir, cfg.backend) {
        (Some(dir), _) => {
            if !dir.is_dir() {
                return Err(config_err(format!("replay archive not found: {}", dir.display())));
            }
            Arc::new(ReplayBackend::open(dir).map_err(config_err)?)
        }
        (None, BackendChoice::Mock) => match &cfg.mock_script {
            Some(p) => Arc::new(MockBackend::from_script(MockScript::load(p).map_err(config_err)?)),
            None => Arc::new(MockBackend::new()),
        },
        (None, BackendChoice::Live) => {
            let cache = ResponseCache::open(&cfg.cache_dir).map_err(|e| CliError::new(EXIT_IO, e))?;
            let mut live = LiveBackend::new(cfg.backoff).map_err(config_err)?.with_cache(cache);
            if let Some(rl) = cfg.rate_limit {
                live = live.with_rate_limit(RateLimiter::new(rl.per_second, rl.burst));
            }
            Arc::new(live)
        }
    };
    let options = DetectorOptions {
        skip_failed_prompts: cfg.skip_failed_prompts,
        summary_budget: SummaryBudget(cfg.summary_budget),
        yes_no_prompt: cfg.yes_no_prompt.as_deref().map_or_else(yes_no_prompt, yes_no_prompt_with),
    };
    Ok(Detector::new(
        Gateway::from_arc(backend.clone(), cfg.parallelism),
        cfg.mm_endpoint.clone(),
        Gateway::from_arc(backend, cfg.parallelism),
        cfg.lm_endpoint.clone(),
        options,
    ))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(EXIT_IO, format!("runtime: {e}")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_csv(path: &Path, f: impl FnOnce(fs::File) -> csv::Result<()>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    f(file).map_err(|e| CliError::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializes"));
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Classify { image, out } => classify(&context(&cli.global, None)?, &image, out.as_deref()),
        Command::Eval { manifest } => {
            let ctx = context(&cli.global, None)?;
            match ctx.cfg.mode {
                RunMode::Ablate => ablate(&ctx, &manifest),
                _ => eval(&ctx, &manifest),
            }
        }
        Command::Ablate { manifest } => ablate(&context(&cli.global, Some(RunMode::Ablate))?, &manifest),
        Command::Cache { command: CacheCommand::Verify { dir } } => {
            let cfg = resolve_config(&cli.global)?;
            cache_verify(&dir.unwrap_or(cfg.cache_dir), cli.global.json)
        }
        Command::Manifest { command } => {
            let cfg = resolve_config(&cli.global)?;
            manifest_command(command, cfg.seed, cli.global.json)
        }
    }
}

fn classify(ctx: &Context, image_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let mode = match ctx.cfg.mode {
        RunMode::Full => DetectionMode::FullPipeline,
        RunMode::YesNo => DetectionMode::YesNo,
        RunMode::Ablate => return Err(config_err("mode ablate needs a manifest; use `ablate <manifest>`")),
    };
    let image = ImagePayload::from_path(image_path).map_err(config_err)?;
    let detector = build_detector(&ctx.cfg)?;
    let sample_id = format!("image_{}", &image.sha256()[..12]);
    let record = runtime()?
        .block_on(detector.classify_with_mode(&sample_id, &image, &ctx.prompts, mode))
        .map_err(|e| CliError::new(EXIT_GATEWAY, e))?;

    if let Some(path) = out {
        write_file(path, serde_json::to_string_pretty(&record).expect("record serializes") + "\n")?;
    }
    if ctx.json {
        print_json(&record);
        return Ok(());
    }
    if ctx.verbose {
        for a in &record.answer_set.answers {
            let text = if a.failed { "(failed)" } else { a.answer_text.as_str() };
            println!("[{}] {}", a.category.display_name(), text.replace('\n', " "));
        }
        println!();
        let (mm, lm) = (detector.multimodal_gateway().stats(), detector.decision_gateway().stats());
        eprintln!(
            "calls: multimodal={} text={} network={}",
            mm.multimodal_calls,
            lm.text_calls,
            mm.network_attempts.max(lm.network_attempts)
        );
    }
    println!("{}", format_verdict(record.verdict.label, record.verdict.confidence, &record.verdict.rationale));
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Manifest, CliError> {
    load_manifest(path).map_err(config_err)
}

fn eval_options(ctx: &Context) -> EvalOptions {
    EvalOptions {
        parallelism: ctx.cfg.parallelism,
        failure_threshold: ctx.cfg.failure_threshold,
        config_fingerprint: ctx.fingerprint.clone(),
    }
}

fn eval_err(e: EvalError) -> CliError {
    config_err(e)
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_records(path: &Path, records: &[DetectionRecord]) -> Result<(), CliError> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    write_file(path, body)
}

fn timings_doc(started: DateTime<Utc>, finished: DateTime<Utc>, records: &[DetectionRecord]) -> serde_json::Value {
    json!({
        "started_at": started.to_rfc3339(),
        "finished_at": finished.to_rfc3339(),
        "wall_ms": (finished - started).num_milliseconds(),
        "samples": records.iter().map(|r| json!({"sample_id": r.sample_id, "timings": r.timings})).collect::<Vec<_>>(),
    })
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn print_report_table(report: &EvalReport) {
    println!("dataset: {}  mode: {}  samples: {}", report.dataset_name, mode_tag(&report.mode), report.sample_count);
    println!("{:<10} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}", "scope", "n", "accuracy", "precision", "recall", "f1", "auc");
    let row = |name: &str, m: &MetricSet| {
        println!(
            "{:<10} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}",
            name,
            m.samples,
            fmt_metric(m.accuracy),
            fmt_metric(m.precision),
            fmt_metric(m.recall),
            fmt_metric(m.f1),
            fmt_metric(m.auc)
        );
    };
    row("overall", &report.overall);
    for (tag, m) in &report.per_generator {
        row(tag, m);
    }
    let per_class: Vec<String> = report.class_accuracy.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
    println!("class accuracy: {}", per_class.join("  "));
    println!("failed samples: {}", report.failure_count);
    println!("config fingerprint: {}", report.config_fingerprint);
}

fn eval(ctx: &Context, manifest_path: &Path) -> Result<(), CliError> {
    let manifest = load_dataset(manifest_path)?;
    let mode = match ctx.cfg.mode {
        RunMode::YesNo => DetectionMode::YesNo,
        _ => DetectionMode::FullPipeline,
    };
    let detector = build_detector(&ctx.cfg)?;
    eprintln!("eval: {} samples from `{}`, mode {}", manifest.samples.len(), manifest.name, mode_tag(&mode));
    let started = Utc::now();
    let run = runtime()?
        .block_on(evaluate(&manifest, &ctx.prompts, &detector, mode, &eval_options(ctx)))
        .map_err(eval_err)?;
    let finished = Utc::now();
    let report = &run.report;

    create_out_dir(&ctx.out_dir)?;
    write_file(&ctx.out_dir.join("report.json"), report.to_json())?;
    write_csv(&ctx.out_dir.join("samples.csv"), |f| report.write_samples_csv(f))?;
    if let Some(points) = report.roc_curve() {
        write_csv(&ctx.out_dir.join("roc.csv"), |f| write_roc_csv(&points, f))?;
    }
    write_records(&ctx.out_dir.join("records.jsonl"), &run.records)?;
    write_file(
        &ctx.out_dir.join("timings.json"),
        serde_json::to_string_pretty(&timings_doc(started, finished, &run.records)).expect("serializes") + "\n",
    )?;

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if ctx.json {
        print!("{}", report.to_json());
    } else {
        print_report_table(report);
        println!("reports written to {}", ctx.out_dir.display());
    }
    if report.failed() {
        return Err(CliError::new(
            EXIT_THRESHOLD,
            format!(
                "{} of {} samples failed, above the threshold {}; partial report written",
                report.failure_count, report.sample_count, report.failure_threshold
            ),
        ));
    }
    Ok(())
}

fn ablate(ctx: &Context, manifest_path: &Path) -> Result<(), CliError> {
    let manifest = load_dataset(manifest_path)?;
    let detector = build_detector(&ctx.cfg)?;
    eprintln!("ablate: {} samples from `{}`, 9 categories", manifest.samples.len(), manifest.name);
    let run = runtime()?
        .block_on(ablation_run(&manifest, &ctx.prompts, &detector, &eval_options(ctx)))
        .map_err(eval_err)?;

    create_out_dir(&ctx.out_dir)?;
    let csv_path = ctx.out_dir.join("ablation.csv");
    write_csv(&csv_path, |f| run.write_csv(f))?;
    let doc = json!({
        "dataset_name": manifest.name,
        "config_fingerprint": ctx.fingerprint,
        "rows": run.rows,
    });
    write_file(&ctx.out_dir.join("ablation.json"), serde_json::to_string_pretty(&doc).expect("serializes") + "\n")?;

    if ctx.json {
        print_json(&doc);
    } else {
        let mut table = Vec::new();
        run.write_csv(&mut table).map_err(|e| CliError::new(EXIT_IO, e))?;
        std::io::stdout().write_all(&table).map_err(|e| CliError::new(EXIT_IO, e))?;
        println!("config fingerprint: {}", ctx.fingerprint);
    }
    if run.failed() {
        return Err(CliError::new(EXIT_THRESHOLD, "failure threshold exceeded in at least one category; partial results written"));
    }
    Ok(())
}

fn cache_verify(dir: &Path, as_json: bool) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Err(config_err(format!("cache directory not found: {}", dir.display())));
    }
    let cache = ResponseCache::open_read_only(dir).map_err(config_err)?;
    let report = cache.verify().map_err(|e| CliError::new(EXIT_IO, e))?;
    if as_json {
        let invalid: Vec<_> =
            report.invalid.iter().map(|(p, why)| json!({"path": p.display().to_string(), "reason": why})).collect();
        print_json(&json!({"entries": report.entries, "valid": report.valid, "invalid": invalid}));
    } else {
        println!("entries: {}  valid: {}  invalid: {}", report.entries, report.valid, report.invalid.len());
        for (p, why) in &report.invalid {
            println!("invalid {}: {why}", p.display());
        }
    }
    if report.invalid.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(EXIT_IO, format!("{} invalid cache entries", report.invalid.len())))
    }
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn manifest_summary(m: &Manifest, path: &Path) -> serde_json::Value {
    json!({
        "path": path.display().to_string(),
        "name": m.name,
        "samples": m.samples.len(),
        "real": m.count(Label::Real),
        "fake": m.count(Label::Fake),
    })
}

fn manifest_command(command: ManifestCommand, seed: u64, as_json: bool) -> Result<(), CliError> {
    let (manifest, out) = match command {
        ManifestCommand::Scan { real, fake, generator, name, source_note, out } => {
            let mut m = scan_directories(&absolute(&real), &absolute(&fake), Generator::parse(&generator))
                .map_err(config_err)?;
            m.name = name.unwrap_or_else(|| {
                out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "manifest".into())
            });
            m.source_note = source_note;
            m.created_at = Some(Utc::now());
            (m, out)
        }
        ManifestCommand::Sample { manifest, per_class, out } => {
            let source = load_dataset(&manifest)?;
            let mut m = sample_balanced(&source, per_class, seed).map_err(config_err)?;
            for s in &mut m.samples {
                s.path = absolute(&source.resolve(s));
            }
            m.base_dir = None;
            (m, out)
        }
        ManifestCommand::Verify { manifest } => {
            let m = load_dataset(&manifest)?;
            let bad = m.verify();
            if as_json {
                let rows: Vec<_> = bad.iter().map(|(s, why)| json!({"sample_id": s.id, "reason": why})).collect();
                print_json(&json!({"samples": m.samples.len(), "mismatched": rows}));
            } else {
                println!("samples: {}  mismatched: {}", m.samples.len(), bad.len());
                for (s, why) in &bad {
                    println!("{}: {why}", s.id);
                }
            }
            return if bad.is_empty() {
                Ok(())
            } else {
                Err(CliError::new(EXIT_IO, format!("{} samples failed verification", bad.len())))
            };
        }
    };
    save_manifest(&manifest, &out).map_err(|e| CliError::new(EXIT_IO, e))?;
    let summary = manifest_summary(&manifest, &out);
    if as_json {
        print_json(&summary);
    } else {
        println!(
            "wrote {} samples ({} real, {} fake) to {}",
            manifest.samples.len(),
            manifest.count(Label::Real),
            manifest.count(Label::Fake),
            out.display()
        );
    }
    Ok(())
}
