use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kgdx_core::config::{parse_config, Ablation, BackendKind, ConfigOverrides, RunConfig};
use kgdx_core::entity::EmrRecord;
use kgdx_core::eval::{compute_hr_rr, compute_prf, render_ablation, render_table};
use kgdx_core::graph::load_graph;
use kgdx_core::orchestrator::{
    load_corpus, read_traces, write_trace_lines, CaseStatus, CaseTrace, Engine, TraceLine,
};

#[derive(Parser)]
#[command(name = "kgdx", version, about = "Knowledge-graph grounded multi-expert diagnosis ranking")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Knowledge graph triple file (TSV).
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// Relation class file (TSV).
    #[arg(long, global = true)]
    classes: Option<PathBuf>,
    /// Line-delimited EMR corpus.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Expert backend: mock or http.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Mock rule file.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Size of the final ranking.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Number of graph supplements per case.
    #[arg(long, global = true)]
    ksup: Option<usize>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    no_mkg: bool,
    #[arg(long, global = true)]
    no_lab: bool,
    #[arg(long, global = true)]
    no_sin: bool,
    #[arg(long, global = true)]
    no_rel: bool,
    /// Keep raw expert requests and responses in traces.
    #[arg(long, global = true)]
    trace_io: bool,
    /// Record per-stage wall-clock timings in traces.
    #[arg(long, global = true)]
    timing: bool,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a corpus and write one trace per line.
    Run,
    /// Run a single case from the corpus and print a score breakdown.
    Diagnose {
        #[arg(long = "case")]
        case_id: String,
    },
    /// Compute metrics from traces and gold labels, or compare ablations.
    Eval {
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Re-run the corpus under each ablation and compare.
        #[arg(long)]
        ablation: bool,
    },
    /// Print knowledge graph statistics.
    GraphStats,
}

impl Common {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            graph: self.graph.clone(),
            relation_classes: self.classes.clone(),
            corpus: self.corpus.clone(),
            rules: self.rules.clone(),
            backend: self.backend,
            k: self.k,
            k_sup: self.ksup,
            parallelism: self.parallelism,
            trace_io: self.trace_io,
            timing: self.timing,
            ablation: Ablation {
                no_mkg: self.no_mkg,
                no_lab: self.no_lab,
                no_sin: self.no_sin,
                no_rel: self.no_rel,
            },
        }
    }
}

fn corpus_path(config: &RunConfig) -> Result<&Path> {
    Ok(config.require("corpus", &config.paths.corpus)?)
}

/// Writes to `path`, or stdout when `None`.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn cmd_run(config: RunConfig, out: Option<&Path>) -> Result<usize> {
    let corpus = corpus_path(&config)?.to_path_buf();
    let engine = Engine::from_config(config)?;
    let lines = engine.run_corpus(&corpus)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("traces.jsonl"));
    write_trace_lines(sink(Some(&out))?, &lines)?;
    let Some(TraceLine::Summary(summary)) = lines.last() else {
        unreachable!("run_corpus ends with a summary line")
    };
    let c = &summary.counts;
    println!(
        "{} cases: {} ok, {} expert_error, {} empty_candidates, {} parse failures",
        summary.cases, c.ok, c.expert_error, c.empty_candidates, c.parse_failures
    );
    println!("traces written to {}", out.display());
    if let Some(metrics) = &summary.metrics {
        let table = render_table(metrics);
        print!("{table}");
        let mut metrics_file = out.clone().into_os_string();
        metrics_file.push(".metrics.txt");
        fs::write(&metrics_file, &table).context("writing metrics table")?;
    }
    Ok(c.fatal())
}

fn print_breakdown(trace: &CaseTrace) {
    println!("case {} [{:?}] via {}", trace.case_id, trace.status, trace.backend);
    if let Some(e) = &trace.error {
        println!("error: {e}");
    }
    if let Some(w) = &trace.type_weights {
        let parts: Vec<String> = w.as_map().iter().map(|(t, v)| format!("{t}={v:.3}")).collect();
        println!("type weights: {}", parts.join(" "));
    }
    if !trace.abnormal.is_empty() {
        println!("abnormal: {}", trace.abnormal.join(", "));
    }
    for s in &trace.supplements {
        println!("supplement: {} (V={:.4} C={:.4} S={:.4})", s.disease, s.v, s.c, s.s);
    }
    println!("iterations: {}", trace.iterations.len());
    for f in &trace.forced {
        println!("forced: kept {} over {}", f.retained, f.eliminated);
    }
    println!(
        "{:>4}  {:<32} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7}  source",
        "rank", "disease", "F_evid", "F_log", "Omega", "H", "S_icd", "phi", "F_fin"
    );
    for r in &trace.final_ranking {
        println!(
            "{:>4}  {:<32} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>7.4}  {:?}",
            r.rank, r.disease, r.f_evid, r.f_logic, r.omega, r.h, r.s_icd, r.phi, r.f_fin, r.provenance
        );
    }
}

fn cmd_diagnose(config: RunConfig, case_id: &str, out: Option<&Path>) -> Result<usize> {
    let corpus = corpus_path(&config)?.to_path_buf();
    let record: EmrRecord = load_corpus(&corpus)?
        .into_iter()
        .filter_map(|r| r.ok())
        .find(|r| r.case_id == case_id)
        .with_context(|| format!("case `{case_id}` not found in {}", corpus.display()))?;
    let engine = Engine::from_config(config)?;
    let trace = engine.run_case(&record)?;
    print_breakdown(&trace);
    if let Some(path) = out {
        write_trace_lines(sink(Some(path))?, &[TraceLine::Case(Box::new(trace.clone()))])?;
    }
    Ok(usize::from(trace.status == CaseStatus::ExpertError))
}

fn cmd_eval(config: RunConfig, traces: Option<&Path>, ablation: bool, out: Option<&Path>) -> Result<usize> {
    let corpus = corpus_path(&config)?.to_path_buf();
    let threshold = config.eval.fuzzy_threshold;
    if ablation {
        let engine = Engine::from_config(config)?;
        let mut rows = Vec::new();
        let mut fatal = 0;
        for (label, summary) in engine.run_ablation(&corpus)? {
            fatal += summary.counts.fatal();
            let metrics = summary
                .metrics
                .with_context(|| "ablation needs gold labels on every record".to_string())?;
            rows.push((label, metrics));
        }
        let table = render_ablation(&rows);
        print!("{table}");
        if let Some(path) = out {
            let json = serde_json::to_string_pretty(&rows)?;
            fs::write(path, format!("{table}\n{json}\n")).context("writing ablation report")?;
        }
        return Ok(fatal);
    }
    let Some(traces_path) = traces else {
        bail!("eval needs --traces unless --ablation is given");
    };
    let traces = read_traces(traces_path)?;
    let records: Vec<EmrRecord> = load_corpus(&corpus)?.into_iter().filter_map(|r| r.ok()).collect();
    let mut report = compute_prf(&traces, &records, threshold)?;
    let (hr, rr) = compute_hr_rr(&traces, &records, threshold)?;
    report.hr = Some(hr);
    report.rr = Some(rr);
    let table = render_table(&report);
    print!("{table}");
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(path, format!("{table}\n{json}\n")).context("writing metrics report")?;
    }
    Ok(0)
}

fn cmd_graph_stats(config: RunConfig, out: Option<&Path>) -> Result<usize> {
    let p = &config.paths;
    let graph = load_graph(
        config.require("graph", &p.graph)?,
        config.require("relation_classes", &p.relation_classes)?,
    )?;
    let stats = graph.stats();
    let mut w = sink(out)?;
    writeln!(w, "nodes           {}", stats.nodes)?;
    writeln!(w, "edges           {}", stats.edges)?;
    writeln!(w, "relation labels {}", stats.relation_labels)?;
    writeln!(w, "isolated nodes  {}", stats.isolated_nodes)?;
    writeln!(w, "max degree      {}", stats.max_degree)?;
    for (t, n) in &stats.nodes_by_type {
        writeln!(w, "nodes[{t}] {n}")?;
    }
    for (c, n) in &stats.edges_by_class {
        writeln!(w, "edges[{c}] {n}")?;
    }
    w.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match parse_config(cli.common.config.as_deref(), &cli.common.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = cli.common.out.as_deref();
    let result = match &cli.command {
        Command::Run => cmd_run(config, out),
        Command::Diagnose { case_id } => cmd_diagnose(config, case_id, out),
        Command::Eval { traces, ablation } => cmd_eval(config, traces.as_deref(), *ablation, out),
        Command::GraphStats => cmd_graph_stats(config, out),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(fatal) => {
            eprintln!("{fatal} fatal error(s)");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
