//! `rematch`: exact values, coupled simulation, and bound certification
//! for greedy matching of reusable resources.

mod exit;
mod format;
mod output;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rematch_core::coupling::{coupled_run_with_stream, monte_carlo, CouplingScheme};
use rematch_core::dp::{
    check_state_space_guard, evaluate_policy_with, opt_policy, solve_opt_with, state_space_size,
    SolveOptions,
};
use rematch_core::experiments::{
    ratio_search, sweep_tight_example, theorem1_bound, theorem2_bound, verify_bound, BoundKind,
    BoundReport, PolicyChoice, SearchParams,
};
use rematch_core::instance::{random_instance, DistributionFamily, GeneratorParams};
use rematch_core::oracle::{enumerate_bernoulli, enumerate_stack, lemma1_check};
use rematch_core::policy::{AlphaThreshold, Greedy, Policy};
use rematch_core::{Instance64, ValueTable64};

use exit::{CliError, EXIT_INVARIANT, EXIT_OK, EXIT_VALIDATION};
use output::{emit_json, fmt_f64, fmt_opt_f64, CsvDoc, InstanceMeta, OutputFormat};

#[derive(Parser)]
#[command(
    name = "rematch",
    version,
    about = "Laboratory for online bipartite matching with reusable resources",
    after_help = "Exit codes: 0 ok, 1 validation, 2 parse, 3 state-space guard, \
                  4 internal-invariant failure (offending traces are dumped)."
)]
struct Cli {
    /// Base seed for randomized operations (env REMATCH_SEED).
    #[arg(long, global = true, env = "REMATCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Report format; JSON is the canonical machine format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    output: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Bernoulli,
    Stack,
}

impl From<SchemeArg> for CouplingScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Bernoulli => CouplingScheme::Bernoulli,
            SchemeArg::Stack => CouplingScheme::Stack,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BoundArg {
    Theorem1,
    Theorem2,
    Theorem3,
}

impl From<BoundArg> for BoundKind {
    fn from(b: BoundArg) -> Self {
        match b {
            BoundArg::Theorem1 => BoundKind::Theorem1,
            BoundArg::Theorem2 => BoundKind::Theorem2,
            BoundArg::Theorem3 => BoundKind::Theorem3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Geometric,
    Finite,
    Mixed,
}

#[derive(Subcommand)]
enum Command {
    /// Strictly validate an instance file (reports every violation).
    Validate { path: PathBuf },

    /// Exact clairvoyant and greedy values, ratio, and bounds.
    Solve {
        path: PathBuf,
        /// Proceed past the state-space guard (prints a memory estimate).
        #[arg(long)]
        force: bool,
        /// Bound-margin slack for the pass flags.
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },

    /// Coupled-run Monte Carlo estimates, or one exported trace.
    Couple {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = SchemeArg::Bernoulli)]
        coupling: SchemeArg,
        /// Primary policy: greedy or alpha:X with X in [0, 1]
        #[arg(long, default_value = "greedy")]
        policy: String,
        /// Benchmark policy: opt, greedy, or alpha:X
        #[arg(long, default_value = "opt")]
        benchmark: String,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        /// Export the trace of this stream as line-delimited JSON
        /// instead of estimating.
        #[arg(long)]
        emit_trace: Option<u64>,
        #[arg(long)]
        force: bool,
    },

    /// Exact event probabilities by exhaustive enumeration.
    Oracle {
        path: PathBuf,
        /// Defaults to bernoulli for geometric instances, stack otherwise.
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        /// Primary policy: greedy or alpha:X with X in [0, 1]
        #[arg(long, default_value = "greedy")]
        policy: String,
    },

    /// Certify a corpus of instances against a bound.
    Verify {
        /// Directory of *.json instance files.
        #[arg(long, conflicts_with = "random")]
        corpus_dir: Option<PathBuf>,
        /// Generate this many seeded random instances instead.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, value_enum, default_value_t = BoundArg::Theorem2)]
        bound: BoundArg,
        /// Policy to certify: greedy or alpha:X
        #[arg(long, default_value = "greedy")]
        policy: String,
        #[arg(long, value_enum, default_value_t = FamilyArg::Geometric)]
        family: FamilyArg,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
        #[arg(long, default_value_t = 6)]
        max_t: usize,
        #[arg(long, default_value_t = 0.05)]
        p_lo: f64,
        #[arg(long, default_value_t = 1.0)]
        p_hi: f64,
        #[arg(long, default_value_t = 3)]
        max_duration: u32,
        #[arg(long, default_value_t = 0.7)]
        density: f64,
    },

    /// Sweep the two-step tight instance over (p, delta) grids.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.9")]
        p_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001")]
        delta_grid: Vec<f64>,
    },

    /// Randomized hill-climb for low-ratio instances at fixed p_min.
    Search {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        horizon: usize,
        #[arg(long, default_value_t = 0.5)]
        p_min: f64,
        #[arg(long, default_value_t = 0.7)]
        density: f64,
        #[arg(long, default_value_t = 8)]
        population: usize,
        #[arg(long, default_value_t = 5)]
        keep: usize,
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        /// Write the reported instances as files into this directory.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {}", err.message);
            if let Some(dump) = &err.trace_dump {
                eprintln!("offending trace (one step per line):");
                eprint!("{dump}");
            }
            err.code
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate { path } => cmd_validate(&path),
        Command::Solve {
            path,
            force,
            tolerance,
        } => cmd_solve(&path, force, tolerance, cli.seed, cli.output),
        Command::Couple {
            path,
            coupling,
            policy,
            benchmark,
            runs,
            emit_trace,
            force,
        } => cmd_couple(
            &path, coupling, &policy, &benchmark, runs, emit_trace, force, cli.seed, cli.output,
        ),
        Command::Oracle {
            path,
            scheme,
            policy,
        } => cmd_oracle(&path, scheme, &policy, cli.seed, cli.output),
        Command::Verify {
            corpus_dir,
            random,
            bound,
            policy,
            family,
            max_n,
            max_t,
            p_lo,
            p_hi,
            max_duration,
            density,
        } => cmd_verify(
            corpus_dir.as_deref(),
            random,
            bound,
            &policy,
            family,
            max_n,
            max_t,
            p_lo,
            p_hi,
            max_duration,
            density,
            cli.seed,
            cli.output,
        ),
        Command::Sweep { p_grid, delta_grid } => {
            cmd_sweep(&p_grid, &delta_grid, cli.seed, cli.output)
        }
        Command::Search {
            n,
            horizon,
            p_min,
            density,
            population,
            keep,
            budget,
            dump_dir,
        } => cmd_search(
            n,
            horizon,
            p_min,
            density,
            population,
            keep,
            budget,
            dump_dir.as_deref(),
            cli.seed,
            cli.output,
        ),
    }
}

/// Parses `greedy` or `alpha:X` into a policy choice.
fn parse_policy_choice(spec: &str) -> Result<PolicyChoice<f64>, CliError> {
    if spec == "greedy" {
        return Ok(PolicyChoice::Greedy);
    }
    if let Some(alpha) = spec.strip_prefix("alpha:") {
        let alpha: f64 = alpha.parse().map_err(|_| {
            CliError::new(
                EXIT_VALIDATION,
                format!("policy `{spec}`: alpha is not a number"),
            )
        })?;
        return Ok(PolicyChoice::AlphaThreshold { alpha });
    }
    Err(CliError::new(
        EXIT_VALIDATION,
        format!("unknown policy `{spec}` (expected greedy or alpha:<x>)"),
    ))
}

fn build_policy(choice: &PolicyChoice<f64>) -> Result<Box<dyn Policy<f64>>, CliError> {
    Ok(match choice {
        PolicyChoice::Greedy => Box::new(Greedy),
        PolicyChoice::AlphaThreshold { alpha } => Box::new(AlphaThreshold::new(*alpha)?),
    })
}

/// Solves the instance, honoring `--force` with a memory estimate.
fn solve_forced(instance: &Instance64, force: bool) -> Result<ValueTable64, CliError> {
    if force && check_state_space_guard(instance).is_err() {
        let states = state_space_size(instance);
        let bytes = states
            .saturating_mul(instance.horizon() as u128)
            .saturating_mul(24);
        eprintln!(
            "warning: state-space guard overridden by --force: {} states per step, \
             estimated {:.1} MiB of tables",
            states,
            bytes as f64 / (1024.0 * 1024.0)
        );
    }
    Ok(solve_opt_with(instance, &SolveOptions { force })?)
}

fn cmd_validate(path: &Path) -> Result<i32, CliError> {
    let report = format::validate_file(path)?;
    if report.is_ok() {
        println!("ok");
        Ok(EXIT_OK)
    } else {
        for v in &report.violations {
            println!("{v}");
        }
        Ok(EXIT_VALIDATION)
    }
}

fn bound_row(report: &BoundReport<f64>) -> Value {
    json!({
        "kind": report.bound_kind,
        "bound": report.bound,
        "margin": report.margin,
        "pass": report.pass,
        "measured_alpha": report.measured_alpha,
    })
}

fn cmd_solve(
    path: &Path,
    force: bool,
    tolerance: f64,
    seed: u64,
    out: OutputFormat,
) -> Result<i32, CliError> {
    let instance = format::load_instance(path)?;
    let meta = InstanceMeta::new(&path.display().to_string(), &instance);
    let table = solve_forced(&instance, force)?;
    let detail = evaluate_policy_with(&instance, &Greedy, &SolveOptions { force })?;
    let p = instance.p_min();
    let opt_value = table.opt_value();
    let greedy_value = detail.reward;
    let ratio = if opt_value > 0.0 {
        greedy_value / opt_value
    } else {
        1.0
    };

    let mut bounds = vec![("theorem1", theorem1_bound(p))];
    if instance.is_geometric_only() {
        bounds.push(("theorem2", theorem2_bound(p)));
    }
    let bound_rows: Vec<Value> = bounds
        .iter()
        .map(|(name, bound)| {
            json!({
                "kind": name,
                "bound": bound,
                "margin": ratio - bound,
                "pass": ratio - bound >= -tolerance,
            })
        })
        .collect();
    let all_pass = bound_rows
        .iter()
        .all(|b| b["pass"].as_bool().unwrap_or(false));

    let config = json!({ "force": force, "tolerance": tolerance });
    match out {
        OutputFormat::Json => emit_json(
            "solve",
            seed,
            config,
            Some(&meta),
            json!({
                "opt": opt_value,
                "greedy": greedy_value,
                "ratio": ratio,
                "p_min": p,
                "measured_alpha": detail.measured_alpha(),
                "bounds": bound_rows,
            }),
        ),
        OutputFormat::Csv => {
            let mut doc = CsvDoc::new(
                "solve",
                seed,
                &config,
                Some(&meta),
                "opt,greedy,ratio,p_min,measured_alpha,theorem1_bound,theorem1_margin,theorem1_pass,theorem2_bound,theorem2_margin,theorem2_pass",
            );
            let t2 = bounds
                .iter()
                .find(|(n, _)| *n == "theorem2")
                .map(|(_, b)| *b);
            doc.row(&[
                fmt_f64(opt_value),
                fmt_f64(greedy_value),
                fmt_f64(ratio),
                fmt_f64(p),
                fmt_f64(detail.measured_alpha()),
                fmt_f64(theorem1_bound(p)),
                fmt_f64(ratio - theorem1_bound(p)),
                (ratio - theorem1_bound(p) >= -tolerance).to_string(),
                fmt_opt_f64(t2),
                fmt_opt_f64(t2.map(|b| ratio - b)),
                t2.map(|b| (ratio - b >= -tolerance).to_string())
                    .unwrap_or_default(),
            ]);
            doc.emit();
        }
    }
    // A bound failure on a real instance is a counterexample.
    Ok(if all_pass { EXIT_OK } else { EXIT_INVARIANT })
}

#[allow(clippy::too_many_arguments)]
fn cmd_couple(
    path: &Path,
    coupling: SchemeArg,
    policy_spec: &str,
    benchmark_spec: &str,
    runs: usize,
    emit_trace: Option<u64>,
    force: bool,
    seed: u64,
    out: OutputFormat,
) -> Result<i32, CliError> {
    let instance = format::load_instance(path)?;
    let meta = InstanceMeta::new(&path.display().to_string(), &instance);
    let primary = build_policy(&parse_policy_choice(policy_spec)?)?;
    let benchmark: Box<dyn Policy<f64>> = if benchmark_spec == "opt" {
        let table = Arc::new(solve_forced(&instance, force)?);
        Box::new(opt_policy(table))
    } else {
        build_policy(&parse_policy_choice(benchmark_spec)?)?
    };
    let scheme: CouplingScheme = coupling.into();

    if let Some(stream) = emit_trace {
        let trace = coupled_run_with_stream(
            &instance,
            primary.as_ref(),
            benchmark.as_ref(),
            scheme,
            seed,
            stream,
        )?;
        // Line-delimited export: one meta record, one record per step,
        // one totals record.
        println!(
            "{}",
            json!({
                "meta": {
                    "tool": output::TOOL_NAME,
                    "version": output::TOOL_VERSION,
                    "command": "couple",
                    "instance": meta,
                    "scheme": scheme,
                    "seed": seed,
                    "stream": stream,
                    "policy": policy_spec,
                    "benchmark": benchmark_spec,
                }
            })
        );
        print!("{}", trace.to_jsonl());
        println!("{}", json!({ "totals": trace.totals }));
        return Ok(EXIT_OK);
    }

    let report = monte_carlo(
        &instance,
        primary.as_ref(),
        benchmark.as_ref(),
        scheme,
        runs,
        seed,
    )?;
    let config = json!({
        "coupling": scheme,
        "policy": policy_spec,
        "benchmark": benchmark_spec,
        "runs": runs,
        "force": force,
    });
    match out {
        OutputFormat::Json => emit_json(
            "couple",
            seed,
            config,
            Some(&meta),
            serde_json::to_value(report).expect("report serializes"),
        ),
        OutputFormat::Csv => {
            let mut doc = CsvDoc::new(
                "couple",
                seed,
                &config,
                Some(&meta),
                "quantity,mean,std_error,ci95_half_width",
            );
            for (name, est) in [
                ("primary_reward", report.primary_reward),
                ("benchmark_reward", report.benchmark_reward),
                ("lost", report.lost),
                ("primary_rstar_sum", report.primary_rstar_sum),
                ("coincidence_reward", report.coincidence_reward),
            ] {
                doc.row(&[
                    name.to_string(),
                    fmt_f64(est.mean),
                    fmt_f64(est.std_error),
                    fmt_f64(est.ci95_half_width),
                ]);
            }
            doc.emit();
        }
    }
    Ok(EXIT_OK)
}

fn cmd_oracle(
    path: &Path,
    scheme: Option<SchemeArg>,
    policy_spec: &str,
    seed: u64,
    out: OutputFormat,
) -> Result<i32, CliError> {
    let instance = format::load_instance(path)?;
    let meta = InstanceMeta::new(&path.display().to_string(), &instance);
    let primary = build_policy(&parse_policy_choice(policy_spec)?)?;
    let table = Arc::new(solve_forced(&instance, false)?);
    let benchmark = opt_policy(table);

    let scheme = scheme.map(CouplingScheme::from).unwrap_or({
        if instance.is_geometric_only() {
            CouplingScheme::Bernoulli
        } else {
            CouplingScheme::Stack
        }
    });
    let events = match scheme {
        CouplingScheme::Bernoulli => enumerate_bernoulli(&instance, primary.as_ref(), &benchmark)?,
        CouplingScheme::Stack => enumerate_stack(&instance, primary.as_ref(), &benchmark)?,
    };
    let lemma = if scheme == CouplingScheme::Bernoulli {
        Some(lemma1_check(&events, &instance)?)
    } else {
        None
    };

    let config = json!({ "scheme": scheme, "policy": policy_spec, "benchmark": "opt" });
    match out {
        OutputFormat::Json => emit_json(
            "oracle",
            seed,
            config,
            Some(&meta),
            json!({
                "events": events,
                "lemma1": lemma,
            }),
        ),
        OutputFormat::Csv => {
            let mut doc = CsvDoc::new(
                "oracle",
                seed,
                &config,
                Some(&meta),
                "resource,step,pr_lost,pr_coincidence,pr_benchmark_match,pr_blocked_after,pr_benchmark_blocked_after,pr_blocked_gap,lemma1_margin,lemma1_pass",
            );
            doc.comment(format!(
                "totals atom_count={} total_probability={} primary_reward={} benchmark_reward={} lost={} rstar_sum={} coincidence_reward={} eq1_first_term={}",
                events.atom_count,
                fmt_f64(events.total_probability),
                fmt_f64(events.primary_reward),
                fmt_f64(events.benchmark_reward),
                fmt_f64(events.lost),
                fmt_f64(events.primary_rstar_sum),
                fmt_f64(events.coincidence_reward),
                fmt_f64(events.eq1_first_term),
            ));
            for i in 0..events.n {
                for t in 1..=events.horizon {
                    let lemma_entry = lemma
                        .as_ref()
                        .map(|l| &l.entries[i * events.horizon + (t - 1)]);
                    doc.row(&[
                        (i + 1).to_string(),
                        t.to_string(),
                        fmt_f64(events.pr_lost[i][t - 1]),
                        fmt_f64(events.pr_coincidence[i][t - 1]),
                        fmt_f64(events.pr_benchmark_match[i][t - 1]),
                        fmt_f64(events.pr_blocked_after[i][t - 1]),
                        fmt_f64(events.pr_benchmark_blocked_after[i][t - 1]),
                        fmt_f64(events.pr_blocked_gap[i][t - 1]),
                        lemma_entry.map(|e| fmt_f64(e.margin)).unwrap_or_default(),
                        lemma_entry.map(|e| e.pass.to_string()).unwrap_or_default(),
                    ]);
                }
            }
            doc.emit();
        }
    }
    let lemma_ok = lemma.map(|l| l.pass).unwrap_or(true);
    Ok(if lemma_ok { EXIT_OK } else { EXIT_INVARIANT })
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    corpus_dir: Option<&Path>,
    random: Option<usize>,
    bound: BoundArg,
    policy_spec: &str,
    family: FamilyArg,
    max_n: usize,
    max_t: usize,
    p_lo: f64,
    p_hi: f64,
    max_duration: u32,
    density: f64,
    seed: u64,
    out: OutputFormat,
) -> Result<i32, CliError> {
    let policy = parse_policy_choice(policy_spec)?;
    let bound_kind: BoundKind = bound.into();

    // Assemble the corpus: named files, or seeded random instances.
    let mut corpus: Vec<(String, Result<Instance64, CliError>)> = Vec::new();
    match (corpus_dir, random) {
        (Some(dir), None) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| {
                    CliError::new(
                        exit::EXIT_PARSE,
                        format!("cannot read {}: {e}", dir.display()),
                    )
                })?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::new(
                    EXIT_VALIDATION,
                    format!("no .json instance files in {}", dir.display()),
                ));
            }
            for path in paths {
                let name = path.display().to_string();
                corpus.push((name.clone(), format::load_instance(&path)));
            }
        }
        (None, Some(count)) => {
            if count == 0 {
                return Err(CliError::new(
                    EXIT_VALIDATION,
                    "--random needs a positive count".to_string(),
                ));
            }
            for k in 0..count {
                let params = GeneratorParams {
                    n: 1 + k % max_n.max(1),
                    horizon: 1 + k % max_t.max(1),
                    family: match family {
                        FamilyArg::Geometric => DistributionFamily::Geometric {
                            p_range: (p_lo, p_hi),
                        },
                        FamilyArg::Finite => DistributionFamily::FiniteSupport { max_duration },
                        FamilyArg::Mixed => DistributionFamily::Mixed {
                            p_range: (p_lo, p_hi),
                            max_duration,
                        },
                    },
                    density,
                    reward_range: (0.0, 5.0),
                };
                let name = format!("random[{k}]");
                corpus.push((
                    name,
                    random_instance(&params, seed.wrapping_add(k as u64)).map_err(CliError::from),
                ));
            }
        }
        _ => {
            return Err(CliError::new(
                EXIT_VALIDATION,
                "verify needs exactly one of --corpus-dir or --random".to_string(),
            ));
        }
    }

    // Evaluate: per-instance failures surface without aborting the batch.
    let mut rows: Vec<(String, Result<BoundReport<f64>, CliError>)> = Vec::new();
    for (name, loaded) in corpus {
        let outcome = loaded.and_then(|instance| {
            verify_bound(&instance, &policy, bound_kind).map_err(CliError::from)
        });
        rows.push((name, outcome));
    }

    let total = rows.len();
    let passes = rows
        .iter()
        .filter(|(_, r)| r.as_ref().map(|b| b.pass).unwrap_or(false))
        .count();
    let bound_failures = rows
        .iter()
        .filter(|(_, r)| r.as_ref().map(|b| !b.pass).unwrap_or(false))
        .count();
    let first_error_code = rows
        .iter()
        .filter_map(|(_, r)| r.as_ref().err().map(|e| e.code))
        .next();
    let summary = format!("{passes}/{total} pass {bound_kind}");

    let config = json!({
        "bound": bound_kind,
        "policy": policy_spec,
        "corpus_dir": corpus_dir.map(|p| p.display().to_string()),
        "random": random,
        "family": format!("{family:?}").to_lowercase(),
        "max_n": max_n, "max_t": max_t, "p_lo": p_lo, "p_hi": p_hi,
        "max_duration": max_duration, "density": density,
    });
    match out {
        OutputFormat::Json => {
            let report_rows: Vec<Value> = rows
                .iter()
                .map(|(name, r)| match r {
                    Ok(b) => json!({
                        "instance": name,
                        "hash": format!("{:016x}", b.instance_hash),
                        "n": b.n, "horizon": b.horizon,
                        "p_min": b.p_min,
                        "policy_value": b.policy_value,
                        "opt_value": b.opt_value,
                        "ratio": b.ratio,
                        "bound": bound_row(b),
                        "error": Value::Null,
                    }),
                    Err(e) => json!({ "instance": name, "error": e.message }),
                })
                .collect();
            emit_json(
                "verify",
                seed,
                config,
                None,
                json!({ "summary": summary, "reports": report_rows }),
            );
        }
        OutputFormat::Csv => {
            let mut doc = CsvDoc::new(
                "verify",
                seed,
                &config,
                None,
                "instance,hash,n,horizon,p_min,policy_value,opt_value,ratio,bound,margin,pass,measured_alpha,error",
            );
            for (name, r) in &rows {
                match r {
                    Ok(b) => doc.row(&[
                        name.clone(),
                        format!("{:016x}", b.instance_hash),
                        b.n.to_string(),
                        b.horizon.to_string(),
                        fmt_f64(b.p_min),
                        fmt_f64(b.policy_value),
                        fmt_f64(b.opt_value),
                        fmt_f64(b.ratio),
                        fmt_f64(b.bound),
                        fmt_f64(b.margin),
                        b.pass.to_string(),
                        fmt_opt_f64(b.measured_alpha),
                        String::new(),
                    ]),
                    Err(e) => doc.row(&[
                        name.clone(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.message.replace(',', ";").replace('\n', "; "),
                    ]),
                }
            }
            doc.emit();
            println!("# summary: {summary}");
        }
    }

    if bound_failures > 0 {
        // A certified-bound failure is a counterexample: loud exit.
        return Ok(EXIT_INVARIANT);
    }
    if let Some(code) = first_error_code {
        return Ok(code);
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(
    p_grid: &[f64],
    delta_grid: &[f64],
    seed: u64,
    out: OutputFormat,
) -> Result<i32, CliError> {
    let rows = sweep_tight_example(p_grid, delta_grid)?;
    let worst_difference = rows
        .iter()
        .map(|r| r.difference.abs())
        .fold(0.0f64, f64::max);
    let config = json!({ "p_grid": p_grid, "delta_grid": delta_grid });
    match out {
        OutputFormat::Json => emit_json(
            "sweep",
            seed,
            config,
            None,
            json!({ "rows": rows, "worst_difference": worst_difference }),
        ),
        OutputFormat::Csv => {
            let mut doc = CsvDoc::new(
                "sweep",
                seed,
                &config,
                None,
                "p,delta,opt,greedy,ratio,closed_form,difference,gap_to_bound",
            );
            for r in &rows {
                doc.row(&[
                    fmt_f64(r.p),
                    fmt_f64(r.delta),
                    fmt_f64(r.opt_value),
                    fmt_f64(r.greedy_value),
                    fmt_f64(r.ratio),
                    fmt_f64(r.closed_form),
                    fmt_f64(r.difference),
                    fmt_f64(r.gap_to_bound),
                ]);
            }
            doc.comment(format!("worst_difference: {}", fmt_f64(worst_difference)));
            doc.emit();
        }
    }
    // DP and closed form are two exact routes to the same number; a gap
    // means a broken invariant.
    Ok(if worst_difference <= 1e-12 {
        EXIT_OK
    } else {
        EXIT_INVARIANT
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    n: usize,
    horizon: usize,
    p_min: f64,
    density: f64,
    population: usize,
    keep: usize,
    budget: usize,
    dump_dir: Option<&Path>,
    seed: u64,
    out: OutputFormat,
) -> Result<i32, CliError> {
    let params = SearchParams {
        n,
        horizon,
        p_min,
        density,
        reward_range: (0.5, 2.0),
        population,
        keep,
    };
    let outcome = ratio_search::<f64>(&params, seed, budget)?;

    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| {
            CliError::new(
                exit::EXIT_PARSE,
                format!("cannot create {}: {e}", dir.display()),
            )
        })?;
        for (rank, result) in outcome.worst.iter().enumerate() {
            let path = dir.join(format!(
                "worst-{rank:02}-{:016x}.json",
                result.report.instance_hash
            ));
            std::fs::write(&path, format::instance_to_json(&result.instance)).map_err(|e| {
                CliError::new(
                    exit::EXIT_PARSE,
                    format!("cannot write {}: {e}", path.display()),
                )
            })?;
        }
    }

    let any_below_bound = outcome.worst.iter().any(|r| !r.report.pass);
    let config = json!({
        "n": n, "horizon": horizon, "p_min": p_min, "density": density,
        "population": population, "keep": keep, "budget": budget,
    });
    match out {
        OutputFormat::Json => {
            let rows: Vec<Value> = outcome
                .worst
                .iter()
                .map(|r| {
                    json!({
                        "hash": format!("{:016x}", r.report.instance_hash),
                        "n": r.report.n,
                        "horizon": r.report.horizon,
                        "p_min": r.report.p_min,
                        "ratio": r.report.ratio,
                        "bound": bound_row(&r.report),
                        "instance_file": format::InstanceFile::from_instance(&r.instance),
                    })
                })
                .collect();
            emit_json(
                "search",
                seed,
                config,
                None,
                json!({ "evaluations": outcome.evaluations, "worst": rows }),
            );
        }
        OutputFormat::Csv => {
            let mut doc = CsvDoc::new(
                "search",
                seed,
                &config,
                None,
                "rank,hash,n,horizon,p_min,ratio,bound,margin,pass",
            );
            doc.comment(format!("evaluations: {}", outcome.evaluations));
            for (rank, r) in outcome.worst.iter().enumerate() {
                doc.row(&[
                    rank.to_string(),
                    format!("{:016x}", r.report.instance_hash),
                    r.report.n.to_string(),
                    r.report.horizon.to_string(),
                    fmt_f64(r.report.p_min),
                    fmt_f64(r.report.ratio),
                    fmt_f64(r.report.bound),
                    fmt_f64(r.report.margin),
                    r.report.pass.to_string(),
                ]);
            }
            doc.emit();
        }
    }
    // Finding an instance below the certified bound is a counterexample.
    Ok(if any_below_bound {
        EXIT_INVARIANT
    } else {
        EXIT_OK
    })
}
