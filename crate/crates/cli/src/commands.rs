use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use fieldrag::agents::{lint_agents, AgentRegistry};
use fieldrag::citation::{attribute, render_citation_index, sweep, threshold_grid, EvidenceItem};
use fieldrag::clock::{Clock, FixedClock, SystemClock};
use fieldrag::config::{load_config, PipelineConfig};
use fieldrag::corpus::collect::CollectionEnv;
use fieldrag::corpus::sink::default_ledger_path;
use fieldrag::corpus::{run_collection, AgentMemory, CollectorAgent, CorpusSink};
use fieldrag::embeddings::{build_encoder, fallback_descriptor, resolve_encoder, Encoder};
use fieldrag::eval::{compare, summarize_run, MannWhitneyMethod, ScoreSet};
use fieldrag::gateway::Gateway;
use fieldrag::pipeline::{
    run_pipeline, LiveWebRetriever, PipelineContext, PipelineError, PipelineErrorKind, PipelineRun, StoreRetriever,
};
use fieldrag::store::{ChunkGeometry, IngestOptions, StoreError, VectorStore};
use fieldrag::web::{
    CommandOcr, ExtractOptions, Fetcher, FixtureFetcher, FixtureSearchProvider, FixtureWeb, HttpFetcher,
    HttpSearchProvider, OcrEngine, SearchProvider,
};

use crate::failure::{Classify, Failure};
use crate::{AgentsCommand, AskArgs, CiteArgs, Cli, Command, CrawlArgs, EvalArgs, IngestArgs, Output, SearchArgs};

type CmdResult = Result<Output, Failure>;

pub fn dispatch(cli: &Cli) -> CmdResult {
    let config = load(cli)?;
    match &cli.command {
        Command::Ask(a) => ask(cli, &config, a),
        Command::Ingest(a) => ingest(cli, &config, a),
        Command::Search(a) => search(cli, &config, a),
        Command::Cite(a) => cite(cli, &config, a),
        Command::Eval(a) => eval(&config, a),
        Command::Crawl(a) => crawl(cli, &config, a),
        Command::PrintEffectiveConfig => Ok(Output {
            text: config.to_toml_string(),
            json: json!({ "config": config }),
        }),
        Command::Agents {
            command: AgentsCommand::Lint { log },
        } => agents_lint(&config, log),
    }
}

fn load(cli: &Cli) -> Result<PipelineConfig, Failure> {
    match &cli.config {
        Some(path) => load_config(path).user("loading configuration"),
        None => Ok(PipelineConfig::default()),
    }
}

fn clock(cli: &Cli) -> Arc<dyn Clock> {
    if cli.mock {
        Arc::new(FixedClock::epoch())
    } else {
        Arc::new(SystemClock::new())
    }
}

/// Retrieval and citation encoders. Mock runs use the hashing fallback for both.
/// Ranking and citation encoders.
type EncoderPair = (Arc<dyn Encoder>, Arc<dyn Encoder>);

fn encoders(cli: &Cli, config: &PipelineConfig) -> Result<EncoderPair, Failure> {
    let e = &config.embeddings;
    if cli.mock {
        let enc = build_encoder(&fallback_descriptor(e.fallback_dimension), e).internal("building encoder")?;
        return Ok((enc.clone(), enc));
    }
    let ranking = resolve_encoder(&e.ranking, e).provider("selecting embedding provider")?;
    let citation = resolve_encoder(e.citation_ranking(), e).provider("selecting citation encoder")?;
    Ok((ranking, citation))
}

fn registry(config: &PipelineConfig) -> Result<AgentRegistry, Failure> {
    let default = &config.agents.default_agent;
    match &config.agents.catalogue_path {
        Some(path) => AgentRegistry::load(path, default).user("loading agent catalogue"),
        None => AgentRegistry::builtin(default).user("loading built-in agent catalogue"),
    }
}

fn geometry(config: &PipelineConfig) -> ChunkGeometry {
    ChunkGeometry {
        size: config.retrieval.chunk_size,
        overlap: config.retrieval.chunk_overlap,
        slack: config.retrieval.boundary_slack,
    }
}

#[allow(clippy::large_enum_variant)]
enum WebProviders {
    Fixture(FixtureSearchProvider, FixtureFetcher),
    Live(HttpSearchProvider, HttpFetcher),
    Disabled,
}

impl WebProviders {
    fn resolve(cli: &Cli, config: &PipelineConfig) -> Result<Self, Failure> {
        if let Some(path) = &cli.web_fixtures {
            let web = FixtureWeb::load(path).user("loading web fixtures")?;
            return Ok(WebProviders::Fixture(web.search_provider(), web.fetcher()));
        }
        if cli.mock {
            return Ok(WebProviders::Fixture(FixtureSearchProvider::default(), FixtureFetcher::default()));
        }
        match &config.web.search_endpoint {
            Some(endpoint) => Ok(WebProviders::Live(
                HttpSearchProvider::new(endpoint.clone(), &config.web).internal("building search client")?,
                HttpFetcher::new(&config.web).internal("building fetch client")?,
            )),
            None => Ok(WebProviders::Disabled),
        }
    }

    fn pair(&self) -> Option<(&dyn SearchProvider, &dyn Fetcher)> {
        match self {
            WebProviders::Fixture(s, f) => Some((s, f)),
            WebProviders::Live(s, f) => Some((s, f)),
            WebProviders::Disabled => None,
        }
    }
}

fn ocr(cli: &Cli, config: &PipelineConfig) -> Option<CommandOcr> {
    (!cli.mock && config.web.ocr_enabled && !config.web.ocr_command.is_empty()).then(|| CommandOcr {
        command: config.web.ocr_command.clone(),
    })
}

fn extract_options<'a>(engine: &'a Option<CommandOcr>, config: &PipelineConfig) -> ExtractOptions<'a> {
    ExtractOptions {
        ocr: engine.as_ref().map(|o| o as &dyn OcrEngine),
        ocr_page_limit: config.web.ocr_page_limit,
    }
}

fn gateway(cli: &Cli, config: &PipelineConfig, clock: Arc<dyn Clock>, log: Option<&Path>) -> Result<Gateway, Failure> {
    let gw = Gateway::from_config(&config.generation, cli.mock.then_some(cli.seed), clock)
        .internal("building generation gateway")?;
    match log {
        Some(path) => gw.with_run_log(path).user(format!("opening telemetry log {}", path.display())),
        None => Ok(gw),
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let provider = e.is_provider_failure() || matches!(e.kind, PipelineErrorKind::Citation(_));
    let user = matches!(e.kind, PipelineErrorKind::EmptyQuery | PipelineErrorKind::NoEvidence);
    let err = anyhow::Error::new(e);
    if user {
        Failure::User(err)
    } else if provider {
        Failure::Provider(err)
    } else {
        Failure::Internal(err)
    }
}

fn ask(cli: &Cli, config: &PipelineConfig, args: &AskArgs) -> CmdResult {
    if args.no_db && args.no_web {
        return Err(Failure::user("--no-db and --no-web together leave no evidence source"));
    }
    let query = args.query.join(" ");
    let clock = clock(cli);
    let telemetry_path = args.telemetry.clone().or_else(|| config.telemetry.path.clone());
    let gw = gateway(cli, config, clock.clone(), telemetry_path.as_deref())?;
    let (ranking, citation) = encoders(cli, config)?;
    let agents = registry(config)?;

    let store = if args.no_db {
        None
    } else {
        let store = VectorStore::open_or_default(&cli.store).user(format!("opening store {}", cli.store.display()))?;
        if store.is_empty() {
            log::warn!("store {} is empty; the database arm returns nothing", cli.store.display());
        }
        Some(store)
    };
    let db = store.as_ref().map(|s| StoreRetriever {
        store: s,
        encoder: ranking.clone(),
    });

    let providers = if args.no_web { WebProviders::Disabled } else { WebProviders::resolve(cli, config)? };
    if !args.no_web && providers.pair().is_none() {
        log::warn!("no search endpoint configured and no --web-fixtures given; the web arm is off");
    }
    let ocr_engine = ocr(cli, config);
    let web = providers.pair().map(|(search, fetcher)| LiveWebRetriever {
        search,
        fetcher,
        gateway: &gw,
        encoder: ranking.clone(),
        extract: extract_options(&ocr_engine, config),
        clock: clock.as_ref(),
        config,
    });

    let ctx = PipelineContext {
        config,
        gateway: &gw,
        agents: &agents,
        db: db.as_ref().map(|d| d as _),
        web: web.as_ref().map(|w| w as _),
        citation_encoder: citation.as_ref(),
        clock: clock.as_ref(),
        preprocess: None,
    };
    let run = run_pipeline(&query, &ctx).map_err(pipeline_failure)?;
    for r in &run.telemetry.records {
        for d in &r.degradations {
            log::warn!("stage {} ({}): {d}", r.number, r.stage.name());
        }
    }
    if let Some(path) = &telemetry_path {
        run.telemetry
            .append_to(path)
            .internal(format!("writing telemetry to {}", path.display()))?;
    }
    Ok(Output {
        text: format!("{}\n\n{}", run.cited.text, render_citation_index(&run.cited)),
        json: ask_json(&run),
    })
}

fn ask_json(run: &PipelineRun) -> Value {
    let evidence: Vec<Value> = run
        .bundle
        .iter()
        .map(|c| {
            json!({
                "label": c.label(),
                "origin": c.origin,
                "similarity": c.similarity,
                "sub_query_index": c.sub_query_index,
                "title": c.chunk.title,
                "url": c.chunk.source_url,
                "authority_score": c.chunk.authority_score,
            })
        })
        .collect();
    json!({
        "query": run.envelope,
        "synthesis_model": run.synthesis_model,
        "answer": run.cited.text,
        "draft": run.draft,
        "citations": run.cited.citations,
        "uncited_sentence_count": run.cited.uncited_sentence_count,
        "evidence": evidence,
        "retrieval": run.retrieval,
        "telemetry": run.telemetry.records,
    })
}

fn store_failure(e: StoreError, context: String) -> Failure {
    let provider = matches!(e, StoreError::Embedding { .. });
    let err = anyhow::Error::new(e).context(context);
    if provider {
        Failure::Provider(err)
    } else {
        Failure::User(err)
    }
}

fn ingest(cli: &Cli, config: &PipelineConfig, args: &IngestArgs) -> CmdResult {
    let (ranking, _) = encoders(cli, config)?;
    let mut store = VectorStore::open_or_default(&cli.store).user(format!("opening store {}", cli.store.display()))?;
    let options = IngestOptions {
        geometry: geometry(config),
        authority: config.retrieval.authority.clone(),
    };
    let stats = store
        .ingest_jsonl(&args.corpus, ranking.as_ref(), &options)
        .map_err(|e| store_failure(e, format!("ingesting {}", args.corpus.display())))?;
    store.save(&cli.store).internal(format!("saving store {}", cli.store.display()))?;
    Ok(Output {
        text: format!("{stats}; store {} now holds {} chunks", cli.store.display(), store.len()),
        json: json!({
            "store": cli.store,
            "stats": stats,
            "total_chunks": store.len(),
            "dimension": store.dimension(),
            "model_id": store.model_id(),
        }),
    })
}

fn search(cli: &Cli, config: &PipelineConfig, args: &SearchArgs) -> CmdResult {
    if !cli.store.exists() {
        return Err(Failure::user(format!("store {} does not exist; run `ingest` first", cli.store.display())));
    }
    let (ranking, _) = encoders(cli, config)?;
    let store = VectorStore::load(&cli.store).user(format!("opening store {}", cli.store.display()))?;
    let query = args.query.join(" ");
    let q = ranking.encode(&query).user("embedding query")?;
    let hits = store
        .search(&q, args.k)
        .map_err(|e| store_failure(e, "searching".to_string()))?;
    let mut text = String::new();
    for h in &hits {
        let _ = writeln!(
            text,
            "[{}] {:.4}  {}  {}",
            h.label(),
            h.similarity,
            h.chunk.title,
            h.chunk.source_url
        );
    }
    if hits.is_empty() {
        text.push_str("no results\n");
    }
    let results: Vec<Value> = hits
        .iter()
        .map(|h| {
            json!({
                "label": h.label(),
                "doc_id": h.chunk.doc_id,
                "chunk_id": h.chunk.chunk_id,
                "similarity": h.similarity,
                "title": h.chunk.title,
                "url": h.chunk.source_url,
                "text": h.chunk.text,
            })
        })
        .collect();
    Ok(Output {
        text,
        json: json!({ "query": query, "k": args.k, "results": results }),
    })
}

fn read_evidence(path: &Path) -> Result<Vec<EvidenceItem>, Failure> {
    let text = fs::read_to_string(path).user(format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).user(format!("parsing {}", path.display()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).user(format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn parse_sweep(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::user(format!("--sweep expects LO:HI:STEPS, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, steps] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let steps: usize = steps.parse().map_err(|_| bad())?;
    if steps == 0 || lo > hi {
        return Err(bad());
    }
    Ok(threshold_grid(lo, hi, steps))
}

fn cite(cli: &Cli, config: &PipelineConfig, args: &CiteArgs) -> CmdResult {
    let answer = fs::read_to_string(&args.answer).user(format!("reading {}", args.answer.display()))?;
    let evidence = read_evidence(&args.evidence)?;
    let mut citation = config.citation.clone();
    if let Some(t) = args.threshold {
        citation.threshold = t;
    }
    let (_, encoder) = encoders(cli, config)?;
    let classify = |e: fieldrag::citation::CitationError| match e {
        fieldrag::citation::CitationError::InvalidThreshold(_) => Failure::User(e.into()),
        fieldrag::citation::CitationError::Embedding(_) => Failure::Provider(e.into()),
    };
    if let Some(spec) = &args.sweep {
        let grid = parse_sweep(spec)?;
        let points = sweep(&answer, &evidence, encoder.as_ref(), &grid, &citation).map_err(classify)?;
        let mut text = String::from("threshold  citations  cited_sentences  sources\n");
        for p in &points {
            let _ = writeln!(
                text,
                "{:>9.3}  {:>9}  {:>15}  {:>7}",
                p.threshold, p.citations, p.cited_sentences, p.distinct_sources
            );
        }
        return Ok(Output {
            text,
            json: json!({ "encoder": encoder.model_id(), "sweep": points }),
        });
    }
    let cited = attribute(&answer, &evidence, encoder.as_ref(), &citation).map_err(classify)?;
    Ok(Output {
        text: format!("{}\n\n{}", cited.text, render_citation_index(&cited)),
        json: json!({
            "encoder": encoder.model_id(),
            "threshold": citation.threshold,
            "cited": cited,
        }),
    })
}

fn eval(config: &PipelineConfig, args: &EvalArgs) -> CmdResult {
    let lambda = args.lambda.unwrap_or(config.scoring.lambda_weight);
    let set = ScoreSet::load(&args.scores).user("loading scores")?;
    if set.systems.is_empty() {
        return Err(Failure::user(format!("{} holds no scores", args.scores.display())));
    }
    let summaries = set
        .systems
        .iter()
        .map(|(name, samples)| summarize_run(name, samples, lambda))
        .collect::<Result<Vec<_>, _>>()
        .user("summarizing scores")?;
    let mut text = format!("lambda = {lambda}\n");
    let _ = writeln!(text, "{:<24} {:>5} {:>14} {:>14} {:>14}", "system", "n", "answer", "citation", "composite");
    for s in &summaries {
        let citation = match (s.citation_mean, s.citation_std) {
            (Some(m), Some(sd)) => format!("{m:.3}±{sd:.3}"),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            text,
            "{:<24} {:>5} {:>14} {:>14} {:>14}",
            s.name,
            s.n,
            format!("{:.3}±{:.3}", s.answer_mean, s.answer_std),
            citation,
            format!("{:.3}±{:.3}", s.composite_mean, s.composite_std)
        );
    }
    let mut json = json!({ "lambda": lambda, "systems": summaries });
    if let Some(pair) = &args.compare {
        let composites = |name: &str| -> Result<Vec<f64>, Failure> {
            let samples = set
                .get(name)
                .ok_or_else(|| Failure::user(format!("system `{name}` is not in {}", args.scores.display())))?;
            samples
                .iter()
                .map(|s| s.composite(lambda))
                .collect::<Result<_, _>>()
                .user("computing composites")
        };
        let (a, b) = (composites(&pair[0])?, composites(&pair[1])?);
        let c = compare(&pair[0], &a, &pair[1], &b).user("comparing systems")?;
        let _ = writeln!(text, "\n{} vs {}", c.a, c.b);
        let _ = writeln!(text, "  delta mean      {:+.4}", c.delta_mean);
        let _ = writeln!(text, "  student t       t = {:.4}, df = {:.1}, p = {:.4e}", c.students.t, c.students.df, c.students.p);
        let _ = writeln!(text, "  welch t         t = {:.4}, df = {:.2}, p = {:.4e}", c.welch.t, c.welch.df, c.welch.p);
        let _ = writeln!(
            text,
            "  mann-whitney U  U = {:.1}, p = {:.4e} ({})",
            c.mann_whitney.u,
            c.mann_whitney.p,
            match c.mann_whitney.method {
                MannWhitneyMethod::Exact => "exact",
                MannWhitneyMethod::NormalApprox => "normal approximation",
            }
        );
        match (c.cohens_d, c.effect) {
            (Some(d), Some(e)) => {
                let _ = writeln!(text, "  cohen's d       {d:.3} ({})", e.name());
            }
            _ => {
                let _ = writeln!(text, "  cohen's d       undefined (zero pooled deviation)");
            }
        }
        json["comparison"] = serde_json::to_value(&c).expect("comparison serializes");
    }
    Ok(Output { text, json })
}

fn memory_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".memory.json");
    out.with_file_name(name)
}

fn crawl(cli: &Cli, config: &PipelineConfig, args: &CrawlArgs) -> CmdResult {
    let providers = WebProviders::resolve(cli, config)?;
    let Some((search, fetcher)) = providers.pair() else {
        return Err(Failure::user("crawl needs --web-fixtures, --mock or web.search_endpoint"));
    };
    let ledger = default_ledger_path(&args.out);
    let memory_file = memory_path(&args.out);
    if !args.resume {
        let nonempty = fs::metadata(&args.out).map(|m| m.len() > 0).unwrap_or(false);
        if let Some(existing) = [(nonempty, &args.out), (ledger.exists(), &ledger), (memory_file.exists(), &memory_file)]
            .into_iter()
            .find_map(|(present, p)| present.then_some(p))
        {
            return Err(Failure::user(format!(
                "{} already exists; pass --resume to continue it",
                existing.display()
            )));
        }
    }
    let mut memories: BTreeMap<String, AgentMemory> = if args.resume && memory_file.exists() {
        let text = fs::read_to_string(&memory_file).user(format!("reading {}", memory_file.display()))?;
        serde_json::from_str(&text).user(format!("parsing {}", memory_file.display()))?
    } else {
        BTreeMap::new()
    };
    let (sink, recovery) = CorpusSink::open(
        &args.out,
        &ledger,
        config.corpus.dedup,
        Duration::from_millis(config.corpus.lock_timeout_ms),
    )
    .user(format!("opening {}", args.out.display()))?;
    let mut agents: Vec<CollectorAgent> = config
        .corpus
        .collectors
        .iter()
        .map(|spec| {
            let mut agent = CollectorAgent::new(spec.clone());
            if let Some(m) = memories.remove(&spec.name) {
                agent.memory = m;
            }
            agent
        })
        .collect();
    let clock = clock(cli);
    let ocr_engine = ocr(cli, config);
    let env = CollectionEnv {
        search,
        fetcher,
        extract: extract_options(&ocr_engine, config),
        heuristics: &config.corpus.quality,
        success_cutoff: config.corpus.success_cutoff,
        preferred_host_cutoff: config.corpus.preferred_host_cutoff,
        domain_suffix: &config.retrieval.search_domain_suffix,
        clock: clock.as_ref(),
    };
    let report = run_collection(&mut agents, args.budget, &sink, &env);

    let saved: BTreeMap<&str, &AgentMemory> = agents.iter().map(|a| (a.spec.name.as_str(), &a.memory)).collect();
    write_atomic(&memory_file, &serde_json::to_vec_pretty(&saved).expect("memory serializes"))
        .internal(format!("writing {}", memory_file.display()))?;

    let mut text = format!(
        "written {}, skipped {}, failed {} ({} of {} budget used)\n",
        report.written(),
        report.skipped(),
        report.failed(),
        report.attempts(),
        report.budget
    );
    for a in &report.agents {
        let _ = writeln!(
            text,
            "  {:<22} written {:>4}  skipped {:>4}  failed {:>4}  searches {:>3}",
            a.agent, a.written, a.skipped, a.failed, a.searches
        );
    }
    if recovery.recovered_anything() {
        let _ = writeln!(
            text,
            "recovered: torn tail {:?} bytes, newline repaired {}, {} ledger entries replayed",
            recovery.torn_tail_bytes, recovery.repaired_newline, recovery.replayed
        );
    }
    Ok(Output {
        text,
        json: json!({
            "out": args.out,
            "ledger": ledger,
            "memory": memory_file,
            "report": report,
            "written": report.written(),
            "skipped": report.skipped(),
            "failed": report.failed(),
            "recovery": {
                "entries": recovery.entries,
                "torn_tail_bytes": recovery.torn_tail_bytes,
                "repaired_newline": recovery.repaired_newline,
                "replayed": recovery.replayed,
            },
        }),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}

fn agents_lint(config: &PipelineConfig, log: &Path) -> CmdResult {
    let registry = registry(config)?;
    let file = File::open(log).user(format!("opening {}", log.display()))?;
    let report = lint_agents(&registry, BufReader::new(file)).user(format!("reading {}", log.display()))?;
    let mut text = format!("{} runs scanned\n", report.runs_scanned);
    for (agent, n) in &report.matches {
        let _ = writeln!(text, "  {agent:<24} {n:>6} matched sub-queries");
    }
    let unmatched = report.unmatched();
    if !unmatched.is_empty() {
        let _ = writeln!(text, "never matched: {}", unmatched.join(", "));
    }
    if report.malformed_lines > 0 {
        let _ = writeln!(text, "{} malformed lines skipped", report.malformed_lines);
    }
    Ok(Output {
        text,
        json: json!({
            "runs_scanned": report.runs_scanned,
            "matches": report.matches,
            "unmatched": unmatched,
            "malformed_lines": report.malformed_lines,
        }),
    })
}
