use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsm_forge::corpus::{classify_document, load_reference_dir, parse_reference_filename, selection_label, RefClass};
use dsm_forge::gateway::{exchanges_to_jsonl, Session};
use dsm_forge::runner::{
    aggregate_records, build_graph_index, emit_reports, emit_summaries, load_config_dir, load_runs, run_config, sweep,
    AggregateReport, BackendSpec, ExperimentConfig, Method, RunOptions, RunnerError, Scenario,
};

#[derive(Parser)]
#[command(name = "dsm-forge", version, about = "Generate and score Design Structure Matrices with language models")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ask the model for the reference class of every document in a directory.
    Classify {
        dir: PathBuf,
        /// Backend spec JSON (`{"kind": "http", ...}`).
        #[arg(long)]
        backend: PathBuf,
        /// Rename `[Year Author] Title.txt` files to `[Year Author] Rk-Title.txt`.
        #[arg(long)]
        rename: bool,
    },
    /// Write experiment configs for a classified reference directory.
    GenConfig {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        concept: String,
        #[arg(long)]
        relationship: String,
        #[arg(long, default_value = "")]
        domain: String,
        /// Built-in ground truth id or path.
        #[arg(long)]
        ground_truth: String,
        /// Comma-separated component list; omit for scenario ii.
        #[arg(long)]
        components: Option<String>,
        #[arg(long, default_value = "RAG")]
        method: Method,
        /// Comma-separated classes, e.g. `R1,R2`. Every combination when omitted.
        #[arg(long)]
        selection: Option<String>,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value = "configs")]
        out: PathBuf,
    },
    /// Build and save a graph index for a corpus.
    Index {
        corpus: PathBuf,
        #[arg(long, default_value = "graphrag")]
        method: String,
        /// Experiment config supplying backend, chunking and graph settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "graph-index")]
        out: PathBuf,
    },
    /// Run one experiment config.
    Run {
        config: PathBuf,
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Serve model replies from a recorded transcript.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        allow_any_refs: bool,
    },
    /// Run every config in a directory.
    Sweep {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        allow_any_refs: bool,
    },
    /// Rebuild the aggregate table and plots from saved run records.
    Report {
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    AllRunsFailed,
}

impl From<RunnerError> for Failure {
    fn from(e: RunnerError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_backend(path: &Path) -> Result<BackendSpec, Failure> {
    let body = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&body).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn classes(s: &str) -> Result<Vec<RefClass>, Failure> {
    s.split(',').map(|c| c.trim().parse().map_err(|e: dsm_forge::corpus::CorpusError| Failure::Config(e.to_string()))).collect()
}

fn print_reports(reports: &[AggregateReport]) {
    for r in reports {
        let acc = r.aligned.as_ref().unwrap_or(&r.raw).accuracy;
        let acc = acc.map(|a| format!("{:.4} ± {:.4}", a.mean, a.std)).unwrap_or_else(|| "-".into());
        let s = r.status;
        match &r.failure {
            Some(f) => println!("{} [{}] failed: {f}", r.name, r.scenario),
            None => println!(
                "{} [{}] {} {} {}: accuracy {acc} (ok {}, parse_failed {}, backend_failed {}, invalid {})",
                r.name, r.scenario, r.method, r.refs, r.model, s.ok, s.parse_failed, s.backend_failed, s.invalid_after_validation
            ),
        }
    }
}

fn classify(dir: &Path, backend: &Path, rename: bool) -> Result<(), Failure> {
    let spec = load_backend(backend)?;
    let be = spec.build(dir)?;
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".txt") || n.ends_with(".md"))
        .collect();
    names.sort();
    let bare = regex::Regex::new(r"^\[(\d{4}) ([^\]]+)\] (.+)\.(txt|md)$").expect("static pattern");
    let mut session = Session::new(be.as_ref(), None);
    for name in names {
        if parse_reference_filename(&name).is_some() {
            continue;
        }
        let text = std::fs::read_to_string(dir.join(&name)).map_err(|e| Failure::Config(format!("{name}: {e}")))?;
        if text.trim().is_empty() {
            continue;
        }
        match classify_document(&text, &mut session) {
            Ok(class) => {
                println!("{class}\t{name}");
                if let (true, Some(c)) = (rename, bare.captures(&name)) {
                    let to = format!("[{} {}] {class}-{}.{}", &c[1], &c[2], &c[3], &c[4]);
                    std::fs::rename(dir.join(&name), dir.join(&to)).map_err(|e| Failure::Config(e.to_string()))?;
                }
            }
            Err(e) => eprintln!("{name}: {e}"),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen_config(
    refs: &Path,
    concept: String,
    relationship: String,
    domain: String,
    ground_truth: String,
    components: Option<String>,
    method: Method,
    selection: Option<String>,
    backend: &Path,
    repetitions: usize,
    out: &Path,
) -> Result<(), Failure> {
    let docs = load_reference_dir(refs).map_err(|e| Failure::Config(e.to_string()))?;
    let selections = match selection {
        Some(s) => vec![classes(&s)?],
        None if method == Method::GraphRag => vec![vec![RefClass::R1, RefClass::R2], vec![RefClass::R2, RefClass::R3]],
        None => RefClass::combinations(),
    };
    let backend = load_backend(backend)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Config(e.to_string()))?;
    let components: Option<Vec<String>> =
        components.map(|c| c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
    for sel in selections {
        let (fragment, _) = match dsm_forge::corpus::generate_config(&docs, &sel, &concept, &relationship, components.clone()) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("skipping {}: {e}", selection_label(&sel));
                continue;
            }
        };
        let label = selection_label(&sel);
        let cfg = ExperimentConfig {
            name: Some(format!("{method}-{label}")),
            concept_name: fragment.concept_name,
            application_domain: domain.clone(),
            relationship_type: fragment.relationship_type,
            predicted_components: fragment.predicted_components,
            ground_truth: ground_truth.clone(),
            method,
            reference_selection: sel,
            references_dir: Some(std::path::absolute(refs).unwrap_or_else(|_| refs.to_path_buf())),
            graph_index_dir: None,
            repetitions,
            backend: backend.clone(),
            embedder: Default::default(),
            rag: Default::default(),
            graphrag: Default::default(),
            align: Default::default(),
            seed: 42,
            allow_any_refs: false,
            base_dir: None,
        };
        let path = out.join(format!("{}.json", cfg.display_name()));
        std::fs::write(&path, cfg.to_json()).map_err(|e| Failure::Config(e.to_string()))?;
        for (class, files) in &fragment.reference_files {
            println!("{}: {class} <- {}", path.display(), files.join(", "));
        }
    }
    Ok(())
}

fn index(corpus: &Path, method: &str, config: &Path, out: &Path) -> Result<(), Failure> {
    if !method.eq_ignore_ascii_case("graphrag") {
        return Err(Failure::Config(format!("index supports --method graphrag, got {method:?}")));
    }
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.references_dir = Some(std::path::absolute(corpus).unwrap_or_else(|_| corpus.to_path_buf()));
    let be = cfg.backend.build(&cfg.base())?;
    let (idx, exchanges) = build_graph_index(&cfg, out, be.as_ref())?;
    std::fs::write(out.join("transcript.jsonl"), exchanges_to_jsonl(&exchanges)).map_err(|e| Failure::Config(e.to_string()))?;
    println!(
        "{}: {} entities, {} relations, {} communities ({} extraction failures, {} summary failures)",
        out.display(),
        idx.entities.len(),
        idx.relations.len(),
        idx.communities.len(),
        idx.extraction_failures.len(),
        idx.summary_failures.len()
    );
    Ok(())
}

fn run(config: &Path, opts: RunOptions, out: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let result = run_config(&cfg, &opts)?;
    emit_reports(std::slice::from_ref(&result), &[], out)?;
    print_reports(std::slice::from_ref(&result.report));
    if result.report.all_failed() {
        return Err(Failure::AllRunsFailed);
    }
    Ok(())
}

fn sweep_dir(dir: &Path, opts: RunOptions, out: &Path) -> Result<(), Failure> {
    let cfgs = load_config_dir(dir)?;
    let outcomes = sweep(&cfgs, &opts);
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for (cfg, o) in cfgs.iter().zip(outcomes) {
        match o {
            Ok(r) => runs.push(r),
            Err((_, e)) => failed.push(AggregateReport::failed(cfg, opts.scenario.unwrap_or_else(|| cfg.scenario()), &e)),
        }
    }
    emit_reports(&runs, &failed, out)?;
    let reports: Vec<AggregateReport> = runs.iter().map(|r| r.report.clone()).chain(failed.iter().cloned()).collect();
    print_reports(&reports);
    if reports.iter().all(|r| r.all_failed()) {
        return Err(Failure::AllRunsFailed);
    }
    Ok(())
}

fn report(runs: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let records = load_runs(runs)?;
    let reports = aggregate_records(&records);
    let out = out.unwrap_or_else(|| if runs.is_dir() { runs.to_path_buf() } else { runs.parent().unwrap_or(Path::new(".")).to_path_buf() });
    emit_summaries(&reports, &records, &out)?;
    print_reports(&reports);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.verbose {
        tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    }
    let outcome = match cli.cmd {
        Cmd::Classify { dir, backend, rename } => classify(&dir, &backend, rename),
        Cmd::GenConfig { refs, concept, relationship, domain, ground_truth, components, method, selection, backend, repetitions, out } => {
            gen_config(&refs, concept, relationship, domain, ground_truth, components, method, selection, &backend, repetitions, &out)
        }
        Cmd::Index { corpus, method, config, out } => index(&corpus, &method, &config, &out),
        Cmd::Run { config, scenario, replay, parallel, out, allow_any_refs } => {
            run(&config, RunOptions { scenario, parallel, replay, allow_any_refs }, &out)
        }
        Cmd::Sweep { dir, parallel, out, allow_any_refs } => {
            sweep_dir(&dir, RunOptions { scenario: None, parallel, replay: None, allow_any_refs }, &out)
        }
        Cmd::Report { runs, out } => report(&runs, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::AllRunsFailed) => {
            eprintln!("error: every run failed");
            ExitCode::from(2)
        }
    }
}
