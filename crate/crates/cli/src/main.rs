use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use glc_core::extraction::{extract_atom, ExtractionResult};
use glc_core::report::{
    load_kb_file, load_lexicon_file, run_check, run_eval, run_pipeline, AppError, EvalConfig, PipelineConfig, Report,
    DEFAULT_EVAL_THRESHOLD, DEFAULT_PAIR_THRESHOLD,
};
use glc_core::{format_atom, SourceId};
use log::info;

mod schema;

const EXIT_CLEAN: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_CONTRADICTION: u8 = 2;
const EXIT_INCONSISTENT: u8 = 3;

/// Finds contradictions and disagreements between guideline recommendations.
#[derive(Parser)]
#[command(name = "glc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a knowledge base file. Exits 2 when a contradiction is found.
    Check {
        kb: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Retrieve similar sentences across a corpus, extract and classify them.
    Pipeline {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        header: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PAIR_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        json: bool,
        /// Stopword file; overrides $GLC_STOPWORDS.
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Score the pipeline against gold (query, document) labels.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        header: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Extract recommendation atoms from sentences, one per line.
    Extract {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        header: PathBuf,
        #[arg(long, default_value = "input")]
        source: String,
        /// Sentence text, or `-` to read lines from standard input.
        #[arg(default_value = "-")]
        text: String,
    },
}

fn fail(err: &AppError, kb_path: Option<&Path>) -> ExitCode {
    eprintln!("error: {err}");
    let kb = kb_path.and_then(|p| load_kb_file(p).ok());
    for line in err.details(kb.as_ref()) {
        eprintln!("  {line}");
    }
    ExitCode::from(match err {
        AppError::Inconsistent(_) => EXIT_INCONSISTENT,
        _ => EXIT_ERROR,
    })
}

fn emit(text: &str) -> ExitCode {
    let mut out = io::stdout().lock();
    if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
        return ExitCode::from(EXIT_ERROR);
    }
    ExitCode::SUCCESS
}

/// Prints a report, validating JSON against `schema` first.
fn emit_checked(text: Result<String, AppError>, schema: Option<&str>) -> Result<ExitCode, AppError> {
    let text = text?;
    if let Some(schema) = schema {
        let problems = schema::violations(schema, &text);
        if !problems.is_empty() {
            for p in &problems {
                eprintln!("  {p}");
            }
            return Err(AppError::Schema);
        }
    }
    Ok(emit(&text))
}

fn report_exit(report: &Report, json: bool) -> Result<ExitCode, AppError> {
    let code = if json {
        emit_checked(report.to_json(), Some(schema::REPORT))?
    } else {
        emit_checked(Ok(report.render_text()), None)?
    };
    if code != ExitCode::SUCCESS {
        return Ok(code);
    }
    Ok(ExitCode::from(if report.has_contradictions() {
        EXIT_CONTRADICTION
    } else {
        EXIT_CLEAN
    }))
}

fn check_gold(path: &Path) -> Result<(), AppError> {
    // Unreadable files are reported by the evaluation itself.
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(());
    };
    let problems = schema::violations(schema::GOLD, &text);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(AppError::Input(format!(
            "{}: does not match the gold schema: {}",
            path.display(),
            problems.join("; ")
        )))
    }
}

fn extract(lexicon: &Path, header: &Path, source: &str, text: &str) -> Result<ExitCode, AppError> {
    let header_kb = load_kb_file(header)?;
    let lexicon = load_lexicon_file(lexicon, &header_kb)?;
    let source = SourceId::new(source)?;
    let input = if text == "-" {
        let mut buf = String::new();
        io::stdin().read_to_string(&mut buf).map_err(|source| AppError::Io {
            path: "<stdin>".to_string(),
            source,
        })?;
        buf
    } else {
        text.to_string()
    };
    let mut out = String::new();
    let mut code = EXIT_CLEAN;
    for line in input.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match extract_atom(line, &lexicon, &source) {
            Ok(ExtractionResult::Extracted { atom, .. }) => {
                out.push_str(&format_atom(&header_kb, &atom)?);
                out.push('\n');
            }
            Ok(ExtractionResult::NoRecommendation { reason }) => {
                out.push_str(&format!("# no recommendation ({reason}): {line}\n"));
            }
            Err(e) => {
                eprintln!("error: {e}: {line}");
                code = EXIT_ERROR;
            }
        }
    }
    emit(&out);
    Ok(ExitCode::from(code))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    let code = match cli.command {
        Command::Check { kb, json } => run_check(&kb)
            .and_then(|r| report_exit(&r, json))
            .unwrap_or_else(|e| fail(&e, Some(&kb))),
        Command::Pipeline {
            corpus,
            lexicon,
            header,
            threshold,
            json,
            stopwords,
        } => {
            let config = PipelineConfig {
                corpus,
                lexicon,
                header,
                threshold,
                stopwords,
            };
            run_pipeline(&config)
                .and_then(|r| report_exit(&r, json))
                .unwrap_or_else(|e| fail(&e, None))
        }
        Command::Eval {
            corpus,
            queries,
            gold,
            lexicon,
            header,
            threshold,
            json,
            stopwords,
        } => {
            let config = EvalConfig {
                corpus,
                queries,
                gold,
                lexicon,
                header,
                threshold,
                stopwords,
            };
            check_gold(&config.gold)
                .and_then(|_| run_eval(&config))
                .and_then(|r| {
                    if json {
                        emit_checked(r.to_json(), Some(schema::EVAL))
                    } else {
                        emit_checked(Ok(r.render_table()), None)
                    }
                })
                .unwrap_or_else(|e| fail(&e, None))
        }
        Command::Extract {
            lexicon,
            header,
            source,
            text,
        } => extract(&lexicon, &header, &source, &text).unwrap_or_else(|e| fail(&e, None)),
    };
    info!("finished in {:.3} s", started.elapsed().as_secs_f64());
    code
}
