//! `kvpack` — build, query, compose, steer, route, and verify knowledge
//! packs over the deterministic toy transformer.
//!
//! Exit codes: 0 success/clean, 1 verification failure or lint finding,
//! 2 usage/config error, 3 I/O or file-format error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kvpack::kv::format;
use kvpack::model::TemplateSet;
use kvpack::pipeline::{self, accounting_table, BuildRequest};
use kvpack::routing::{answer_via_banks, BankIndex};
use kvpack::steering::{self, LayerRange, SteeringDelta};
use kvpack::verify::{self, EquivCase};
use kvpack::{KnowledgePack, Model};

use config::RunConfig;

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "kvpack", version, about = "Knowledge packs: KV caches as a knowledge delivery mechanism")]
struct Cli {
    /// Flat key = value config file (model shape, seed, template).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Weight seed override (beats config file and KVPACK_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Default template dialect.
    #[arg(long, global = true)]
    template: Option<String>,

    /// Additional template definition files to register.
    #[arg(long = "template-file", global = true)]
    template_files: Vec<PathBuf>,

    /// Suppress wall-clock timing lines for byte-identical reruns.
    #[arg(long, global = true)]
    no_timing: bool,

    /// Output style for accounting and reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Records,
}

#[derive(Subcommand)]
enum Command {
    /// Build a knowledge pack from a facts file (one fact per line).
    Build {
        /// Facts file, one fact per line.
        #[arg(long)]
        facts: PathBuf,
        /// Skip the chat template: tokenize the raw fact text (ablation).
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer a question against a pack at zero fact-token cost.
    Query {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, default_value_t = 32)]
        max_new: usize,
        /// Steering delta to apply before reading.
        #[arg(long)]
        delta: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f32,
        #[arg(long, default_value = "mid")]
        layers: String,
        /// Debug arm: steer keys instead of values (expect degeneration).
        #[arg(long)]
        steer_keys: bool,
    },
    /// Compose packs: sequential (correct positions) or naive (broken).
    Compose(ComposeArgs),
    /// Build, apply, and compare steering deltas.
    Steer {
        #[command(subcommand)]
        command: SteerCommand,
    },
    /// Route a question through a bank index with lazy recompute.
    Route {
        /// Existing index file.
        #[arg(long, conflicts_with = "build")]
        index: Option<PathBuf>,
        /// Build an index from this facts file instead.
        #[arg(long)]
        build: Option<PathBuf>,
        /// Bank count override (default: one bank per 20 facts).
        #[arg(long)]
        banks: Option<usize>,
        #[arg(long)]
        save_index: Option<PathBuf>,
        #[arg(long)]
        question: Option<String>,
        #[arg(long, default_value_t = 1)]
        top: usize,
        #[arg(long, default_value_t = 32)]
        max_new: usize,
    },
    /// Run a verification mode; exit 0 iff clean.
    Verify {
        #[arg(long, value_enum)]
        mode: VerifyMode,
        /// Cases file; equivalence: `fact|fact<TAB>question[<TAB>gold]`,
        /// tokens: `kv_tokens rag_tokens` per line.
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        max_new: usize,
        /// System text for lint mode.
        #[arg(long, default_value = "f1 f2")]
        system: String,
        /// User text for lint mode.
        #[arg(long, default_value = "q")]
        user: String,
    },
    /// Token-cost report from step-wise token counts.
    ReportTokens {
        #[arg(long)]
        question_tokens: usize,
        #[arg(long, default_value_t = 0)]
        frame_tokens: usize,
        /// Comma-separated fact token counts, one per step.
        #[arg(long)]
        fact_tokens: String,
    },
    /// Print the header fields and shapes of a pack, delta, or index file.
    Inspect { file: PathBuf },
}

#[derive(Args)]
struct ComposeArgs {
    /// Re-process B's facts with A's cache as prefix (correct positions).
    #[arg(long, conflicts_with = "naive")]
    sequential: bool,
    /// Concatenate tensors with no position correction (known-broken arm).
    #[arg(long)]
    naive: bool,
    /// Pack A.
    #[arg(long)]
    pack: PathBuf,
    /// Facts file for B (sequential mode).
    #[arg(long)]
    facts: Option<PathBuf>,
    /// Pack B (naive mode).
    #[arg(long)]
    pack_b: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SteerCommand {
    /// Build a delta from matched good/bad example files (one per line).
    BuildDelta {
        #[arg(long)]
        good: PathBuf,
        #[arg(long)]
        bad: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a delta to a pack and write the steered pack.
    Apply {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        delta: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f32,
        #[arg(long, default_value = "mid")]
        layers: String,
        /// Debug arm: steer keys instead of values.
        #[arg(long)]
        steer_keys: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine similarity between two deltas over their shared layers.
    Cosine {
        #[arg(long)]
        delta: PathBuf,
        #[arg(long)]
        delta_b: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VerifyMode {
    Equivalence,
    Lint,
    Tokens,
}

/// An error tagged with a process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn usage(err: anyhow::Error) -> Self {
        Self {
            code: EXIT_USAGE,
            err,
        }
    }

    fn io(err: anyhow::Error) -> Self {
        Self { code: EXIT_IO, err }
    }
}

trait Tag<T> {
    fn or_usage(self) -> Result<T, Failure>;
    fn or_io(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn or_usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::usage(e.into()))
    }

    fn or_io(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::io(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

struct Env {
    run: RunConfig,
    templates: TemplateSet,
    no_timing: bool,
    format: Format,
}

impl Env {
    fn model(&self) -> Result<Model, Failure> {
        self.run.build_model(&self.templates).or_usage()
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let mut templates = TemplateSet::builtin();
    for path in &cli.template_files {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading template file {}", path.display()))
            .or_io()?;
        templates.register_definition(&text).or_usage()?;
    }
    let run = match &cli.config {
        Some(path) => RunConfig::load(path).or_usage()?,
        None => RunConfig::default(),
    }
    .with_overrides(cli.seed, cli.template.as_deref())
    .or_usage()?;
    let env = Env {
        run,
        templates,
        no_timing: cli.no_timing,
        format: cli.format,
    };

    match cli.command {
        Command::Build { facts, raw, out } => cmd_build(&env, &facts, raw, &out),
        Command::Query {
            pack,
            question,
            max_new,
            delta,
            alpha,
            layers,
            steer_keys,
        } => cmd_query(
            &env,
            &pack,
            &question,
            max_new,
            delta.as_deref(),
            alpha,
            &layers,
            steer_keys,
        ),
        Command::Compose(args) => cmd_compose(&env, args),
        Command::Steer { command } => cmd_steer(&env, command),
        Command::Route {
            index,
            build,
            banks,
            save_index,
            question,
            top,
            max_new,
        } => cmd_route(
            &env,
            index.as_deref(),
            build.as_deref(),
            banks,
            save_index.as_deref(),
            question.as_deref(),
            top,
            max_new,
        ),
        Command::Verify {
            mode,
            cases,
            max_new,
            system,
            user,
        } => cmd_verify(&env, mode, cases.as_deref(), max_new, &system, &user),
        Command::ReportTokens {
            question_tokens,
            frame_tokens,
            fact_tokens,
        } => cmd_report_tokens(&env, question_tokens, frame_tokens, &fact_tokens),
        Command::Inspect { file } => cmd_inspect(&file),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .or_io()?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn load_pack(path: &Path) -> Result<KnowledgePack, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading pack {}", path.display()))
        .or_io()?;
    KnowledgePack::from_bytes(&bytes)
        .with_context(|| format!("parsing pack {}", path.display()))
        .or_io()
}

fn load_delta(path: &Path) -> Result<SteeringDelta, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading delta {}", path.display()))
        .or_io()?;
    SteeringDelta::from_bytes(&bytes)
        .with_context(|| format!("parsing delta {}", path.display()))
        .or_io()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .or_io()
}

fn cmd_build(env: &Env, facts_path: &Path, raw: bool, out: &Path) -> Result<u8, Failure> {
    let facts = read_lines(facts_path)?;
    if facts.is_empty() {
        eprintln!("warning: no facts in {}; building a frame-only pack", facts_path.display());
    }
    let model = env.model()?;
    let req = BuildRequest {
        facts,
        dialect: env.run.dialect.clone(),
        use_template: !raw,
    };
    let started = Instant::now();
    let pack = pipeline::build_pack(&req, &model, &env.templates).or_usage()?;
    let elapsed = started.elapsed();
    write_file(out, &pack.to_bytes())?;

    println!("fingerprint: {}", pack.fingerprint());
    println!("cache length: {} tokens", pack.cache.len());
    println!("facts: {}", pack.facts.len());
    if !env.no_timing {
        println!("built in {:.1} ms", elapsed.as_secs_f64() * 1000.0);
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(
    env: &Env,
    pack_path: &Path,
    question: &str,
    max_new: usize,
    delta_path: Option<&Path>,
    alpha: f32,
    layers: &str,
    steer_keys: bool,
) -> Result<u8, Failure> {
    let model = env.model()?;
    let pack = load_pack(pack_path)?;
    let output = match delta_path {
        None => pipeline::query_with_pack(&pack, question, max_new, &model, &env.templates)
            .or_usage()?,
        Some(dp) => {
            let delta = load_delta(dp)?;
            let range = LayerRange::from_str(layers).or_usage()?;
            let steered = if steer_keys {
                steering::apply_delta_keys(&pack.cache, &delta, alpha, &range).or_usage()?
            } else {
                steering::apply_delta(&pack.cache, &delta, alpha, &range).or_usage()?
            };
            let out = pipeline::query_with_pack(
                &pack.with_cache(steered),
                question,
                max_new,
                &model,
                &env.templates,
            )
            .or_usage()?;
            println!(
                "steering: alpha={alpha} layers={range} channel={}",
                if steer_keys { "keys (debug)" } else { "values" }
            );
            out
        }
    };
    println!("answer: {}", output.answer);
    match env.format {
        Format::Text => print!("{}", accounting_table(&output.accounting)),
        Format::Records => println!(
            "kvpack-record event=query kv={} rag={} savings={} pct={} degeneracy={:.4}",
            output.accounting.kv_prompt_tokens,
            output.accounting.rag_prompt_tokens,
            output.accounting.savings(),
            output.accounting.savings_percent(),
            output.degeneracy,
        ),
    }
    if env.format == Format::Text {
        println!("degeneracy: {:.4}", output.degeneracy);
    }
    Ok(0)
}

fn cmd_compose(env: &Env, args: ComposeArgs) -> Result<u8, Failure> {
    if args.sequential == args.naive {
        return Err(Failure::usage(anyhow!(
            "pick exactly one of --sequential or --naive"
        )));
    }
    let pack_a = load_pack(&args.pack)?;
    let composed = if args.sequential {
        let facts_path = args
            .facts
            .as_ref()
            .ok_or_else(|| Failure::usage(anyhow!("--sequential needs --facts FILE")))?;
        let facts = read_lines(facts_path)?;
        let model = env.model()?;
        let req = BuildRequest {
            facts,
            dialect: pack_a.dialect.clone(),
            use_template: pack_a.use_template,
        };
        pipeline::compose_sequential(&pack_a, &req, &model, &env.templates).or_usage()?
    } else {
        let b_path = args
            .pack_b
            .as_ref()
            .ok_or_else(|| Failure::usage(anyhow!("--naive needs --pack-b FILE")))?;
        let pack_b = load_pack(b_path)?;
        eprintln!("warning: naive composition breaks rotary positions; contrast arm only");
        pipeline::compose_naive(&pack_a, &pack_b).or_usage()?
    };
    write_file(&args.out, &composed.to_bytes())?;
    println!("cache length: {} tokens", composed.cache.len());
    println!("facts: {}", composed.facts.len());
    Ok(0)
}

fn cmd_steer(env: &Env, command: SteerCommand) -> Result<u8, Failure> {
    match command {
        SteerCommand::BuildDelta { good, bad, out } => {
            let good_texts = read_lines(&good)?;
            let bad_texts = read_lines(&bad)?;
            let model = env.model()?;
            let delta = steering::build_delta(
                &good_texts,
                &bad_texts,
                &env.run.dialect,
                &model,
                &env.templates,
            )
            .or_usage()?;
            write_file(&out, &delta.to_bytes())?;
            println!("pairs: {}", good_texts.len());
            println!("source length: {} rows", delta.len());
            println!("covered layers: {:?}", delta.layers());
            if delta.truncated_pairs() > 0 {
                eprintln!(
                    "warning: {} pair(s) had unequal token lengths and were truncated",
                    delta.truncated_pairs()
                );
            }
            Ok(0)
        }
        SteerCommand::Apply {
            pack,
            delta,
            alpha,
            layers,
            steer_keys,
            out,
        } => {
            let p = load_pack(&pack)?;
            let d = load_delta(&delta)?;
            let range = LayerRange::from_str(&layers).or_usage()?;
            let steered = if steer_keys {
                steering::apply_delta_keys(&p.cache, &d, alpha, &range).or_usage()?
            } else {
                steering::apply_delta(&p.cache, &d, alpha, &range).or_usage()?
            };
            write_file(&out, &p.with_cache(steered).to_bytes())?;
            println!(
                "applied alpha={alpha} over layers={range} channel={}",
                if steer_keys { "keys (debug)" } else { "values" }
            );
            Ok(0)
        }
        SteerCommand::Cosine { delta, delta_b } => {
            let a = load_delta(&delta)?;
            let b = load_delta(&delta_b)?;
            let cos = steering::delta_cosine(&a, &b).or_usage()?;
            match env.format {
                Format::Text => println!("cosine: {cos:.6}"),
                Format::Records => println!("kvpack-record event=cosine value={cos:.6}"),
            }
            Ok(0)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_route(
    env: &Env,
    index_path: Option<&Path>,
    build_path: Option<&Path>,
    banks: Option<usize>,
    save_index: Option<&Path>,
    question: Option<&str>,
    top: usize,
    max_new: usize,
) -> Result<u8, Failure> {
    let index = match (index_path, build_path) {
        (Some(p), None) => {
            let bytes = std::fs::read(p)
                .with_context(|| format!("reading index {}", p.display()))
                .or_io()?;
            BankIndex::from_bytes(&bytes)
                .with_context(|| format!("parsing index {}", p.display()))
                .or_io()?
        }
        (None, Some(p)) => {
            let facts = read_lines(p)?;
            BankIndex::build(&facts, banks, env.run.model.weight_seed).or_usage()?
        }
        _ => {
            return Err(Failure::usage(anyhow!(
                "pick exactly one of --index FILE or --build FACTS"
            )))
        }
    };
    println!("banks: {}", index.k());
    println!("facts: {}", index.facts().len());
    let storage = index.to_bytes().len() as f64 / index.facts().len() as f64;
    println!("storage: {storage:.0} bytes/fact");
    if let Some(p) = save_index {
        write_file(p, &index.to_bytes())?;
    }

    let Some(question) = question else {
        return Ok(0);
    };
    let model = env.model()?;
    let answer = answer_via_banks(
        &index,
        question,
        &env.run.dialect,
        max_new,
        &model,
        &env.templates,
    )
    .or_usage()?;
    if answer.route.zero_query {
        eprintln!("warning: question embedded to the zero vector; bank chosen by tie-break");
    }
    println!("bank: {}", answer.route.bank);
    for (fact_id, cos) in answer.route.ranked.iter().take(top) {
        println!("fact {fact_id}: cos={cos:.4}  {}", index.facts()[*fact_id as usize]);
    }
    println!("answer: {}", answer.output.answer);
    if !env.no_timing {
        println!("recompute: {:.2} ms", answer.recompute_ms);
    }
    if env.format == Format::Records {
        println!(
            "kvpack-record event=route bank={} top_fact={} kv={} rag={}",
            answer.route.bank,
            answer.route.ranked[0].0,
            answer.output.accounting.kv_prompt_tokens,
            answer.output.accounting.rag_prompt_tokens,
        );
    }
    Ok(0)
}

fn parse_equiv_cases(path: &Path) -> Result<Vec<EquivCase>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading cases {}", path.display()))
        .or_io()?;
    let mut cases = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let facts: Vec<String> = parts
            .next()
            .unwrap_or_default()
            .split('|')
            .map(|f| f.trim().to_string())
            .filter(|f| !f.is_empty())
            .collect();
        let question = parts.next().map(str::trim).unwrap_or_default();
        if facts.is_empty() || question.is_empty() {
            return Err(Failure::io(anyhow!(
                "cases line {}: expected `fact|fact<TAB>question[<TAB>gold]`",
                idx + 1
            )));
        }
        let gold = parts.next().map(str::trim).filter(|g| !g.is_empty());
        cases.push(EquivCase::new(facts, question, gold));
    }
    if cases.is_empty() {
        return Err(Failure::io(anyhow!("cases file {} is empty", path.display())));
    }
    Ok(cases)
}

fn cmd_verify(
    env: &Env,
    mode: VerifyMode,
    cases: Option<&Path>,
    max_new: usize,
    system: &str,
    user: &str,
) -> Result<u8, Failure> {
    match mode {
        VerifyMode::Equivalence => {
            let path = cases.ok_or_else(|| {
                Failure::usage(anyhow!("--mode equivalence needs --cases FILE"))
            })?;
            let cases = parse_equiv_cases(path)?;
            let model = env.model()?;
            let report = verify::check_equivalence(
                &cases,
                max_new,
                &env.run.dialect,
                &model,
                &env.templates,
            )
            .or_usage()?;
            print!("{}", report.summary());
            if env.format == Format::Records {
                print!("{}", report.records());
            }
            Ok(if report.clean() { 0 } else { EXIT_VERIFY_FAILED })
        }
        VerifyMode::Lint => {
            let template = env.templates.get(&env.run.dialect).or_usage()?;
            let findings = verify::lint_template_split(system, user, template, &env.templates);
            if findings.is_empty() {
                println!("no findings: split and single-pass renderings are byte-identical");
                return Ok(0);
            }
            println!("{} finding(s) for dialect {}:", findings.len(), env.run.dialect);
            for f in &findings {
                println!("  - {f}");
            }
            Ok(EXIT_VERIFY_FAILED)
        }
        VerifyMode::Tokens => {
            let path = cases
                .ok_or_else(|| Failure::usage(anyhow!("--mode tokens needs --cases FILE")))?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .or_io()?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut nums = line.split_whitespace();
                let parse = |s: Option<&str>| -> Result<usize, Failure> {
                    s.and_then(|v| v.parse().ok()).ok_or_else(|| {
                        Failure::io(anyhow!(
                            "tokens line {}: expected `kv_tokens rag_tokens`",
                            idx + 1
                        ))
                    })
                };
                let kv = parse(nums.next())?;
                let rag = parse(nums.next())?;
                if rag < kv {
                    return Err(Failure::io(anyhow!(
                        "tokens line {}: rag {} smaller than kv {}",
                        idx + 1,
                        rag,
                        kv
                    )));
                }
                let savings = rag - kv;
                let pct = if rag == 0 {
                    0
                } else {
                    (savings as f64 / rag as f64 * 100.0).round() as i64
                };
                println!("kv={kv} rag={rag} savings={savings} ({pct}%)");
            }
            Ok(0)
        }
    }
}

fn cmd_report_tokens(
    env: &Env,
    question_tokens: usize,
    frame_tokens: usize,
    fact_tokens: &str,
) -> Result<u8, Failure> {
    let per_step: Vec<usize> = fact_tokens
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .context("--fact-tokens must be comma-separated counts")
        .or_usage()?;
    let report =
        verify::token_cost_report(per_step.len(), question_tokens, &per_step, frame_tokens)
            .or_usage()?;
    match env.format {
        Format::Text => print!("{}", report.table()),
        Format::Records => print!("{}", report.records()),
    }
    Ok(0)
}

fn cmd_inspect(path: &Path) -> Result<u8, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .or_io()?;
    match format::identify(&bytes) {
        Some("pack") => print!("{}", KnowledgePack::from_bytes(&bytes).or_io()?.inspect()),
        Some("delta") => print!("{}", SteeringDelta::from_bytes(&bytes).or_io()?.inspect()),
        Some("index") => print!("{}", BankIndex::from_bytes(&bytes).or_io()?.inspect()),
        _ => {
            return Err(Failure::io(anyhow!(
                "{} is not a kvpack file (unknown magic)",
                path.display()
            )))
        }
    }
    Ok(0)
}
