//! `sdoh`: extract, score, sweep and convert social-history annotations.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 backend
//! error (including runs where some notes failed).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sdoh_core::brat::RoleMap;
use sdoh_core::gateway::BackendKind;
use sdoh_core::manifest::RunManifest;
use sdoh_core::prompt::{build_prompt, PromptMode};
use sdoh_core::runner::{self, Format, MissingPolicy, RunError};
use sdoh_core::SdohType;

#[derive(Parser)]
#[command(name = "sdoh", version, about = "Social-history event extraction and scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over the manifest's target split.
    Extract {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score predicted .ann files against a gold corpus directory.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// How to treat notes present on one side only.
        #[arg(long, value_enum, default_value_t = Missing::Score)]
        missing: Missing,
        #[arg(long)]
        role_map: Option<PathBuf>,
        /// Per-argument rows under each type.
        #[arg(long)]
        detail: bool,
        /// Also print the error-category summary.
        #[arg(long)]
        errors: bool,
        /// Write the machine-readable report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// One extract+score run per n-shot value, or the consistency ablation.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,10,30,50,100")]
        n_values: Vec<usize>,
        /// Rows for self-consistency and post-processing instead of n-shot.
        #[arg(long)]
        ablation: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Convert one annotation file between standoff and the list format.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        from: Format,
        #[arg(long)]
        to: Format,
        /// Companion note text; defaults to the input with a .txt extension.
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        role_map: Option<PathBuf>,
    },
    /// Print the rendered prompt for one note of the target split.
    Prompt {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        note: String,
        /// Category for per-sdoh mode.
        #[arg(long)]
        sdoh: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Missing {
    Score,
    Skip,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    All,
    PerSdoh,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Replay,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    n_shot: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Replay store (and recording target for live runs).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Permit sending note text to the configured endpoint.
    #[arg(long)]
    allow_external_transmission: bool,
    /// Output root; run directories are created beneath it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cwd_relative(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

impl RunArgs {
    fn manifest(&self) -> Result<RunManifest, RunError> {
        let mut m = RunManifest::load(&self.manifest)?;
        if let Some(mode) = self.mode {
            m.prompt.mode = match mode {
                ModeArg::All => PromptMode::AllAtOnce,
                ModeArg::PerSdoh => PromptMode::PerSdoh,
            };
        }
        if let Some(n) = self.n_shot {
            m.few_shot.n = n;
        }
        if let Some(s) = self.seed {
            m.few_shot.seed = s;
        }
        if let Some(k) = self.k {
            m.consistency.k = k;
            if self.threshold.is_none() {
                m.consistency.threshold = k / 2 + 1;
            }
        }
        if let Some(t) = self.threshold {
            m.consistency.threshold = t;
        }
        if let Some(b) = self.backend {
            m.backend.kind = match b {
                BackendArg::Http => BackendKind::Http,
                BackendArg::Replay => BackendKind::Replay,
            };
        }
        // command-line paths are relative to the working directory
        if let Some(s) = &self.store {
            m.backend.store = Some(cwd_relative(s));
        }
        if let Some(o) = &self.out {
            m.output.dir = cwd_relative(o);
        }
        if self.allow_external_transmission {
            m.backend.allow_external_transmission = true;
        }
        Ok(m)
    }
}

fn load_roles(path: Option<&Path>) -> Result<RoleMap, RunError> {
    match path {
        None => Ok(RoleMap::default()),
        Some(p) => RoleMap::load(p).map_err(|e| RunError::Config(format!("{}: {e}", p.display()))),
    }
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), RunError> {
    let body = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    fs::write(path, body).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn run(cli: Cli) -> Result<i32, RunError> {
    match cli.command {
        Command::Extract { run } => {
            let summary = runner::extract(&run.manifest()?)?;
            let mut text = format!(
                "run {} ({} notes, {} ok, {} failed, {} completions)\noutput: {}\n",
                summary.run_id,
                summary.notes,
                summary.succeeded,
                summary.failed.len(),
                summary.completions,
                summary.out_dir.display()
            );
            for f in &summary.failed {
                text.push_str(&format!("  skipped {}: {}\n", f.note_id, f.error));
            }
            if let Some(report) = &summary.report {
                text.push_str(&report.render_table(false));
            }
            emit(&text);
            Ok(summary.exit_code())
        }
        Command::Score { pred, gold, missing, role_map, detail, errors, json } => {
            let roles = load_roles(role_map.as_deref())?;
            let policy = match missing {
                Missing::Score => MissingPolicy::Score,
                Missing::Skip => MissingPolicy::Skip,
            };
            let outcome = runner::score_dirs(&pred, &gold, policy, &roles)?;
            let mut text = String::new();
            for id in &outcome.missing_pred {
                text.push_str(&format!("missing prediction: {id}\n"));
            }
            for id in &outcome.missing_gold {
                text.push_str(&format!("missing gold: {id}\n"));
            }
            text.push_str(&outcome.report.render_table(detail));
            if errors {
                text.push('\n');
                text.push_str(&sdoh_core::scorer::render_error_summary(&outcome.errors));
            }
            emit(&text);
            if let Some(path) = json {
                write_json(&path, &outcome)?;
            }
            Ok(0)
        }
        Command::Sweep { run, n_values, ablation, json } => {
            let manifest = run.manifest()?;
            let (header, rows) = if ablation {
                ("Prompt", runner::sweep_ablation(&manifest)?)
            } else {
                ("n-shot", runner::sweep_n(&manifest, &n_values)?)
            };
            emit(&runner::render_sweep(header, &rows));
            if let Some(path) = json {
                write_json(&path, &rows)?;
            }
            Ok(if rows.iter().any(|r| r.failed > 0) { 3 } else { 0 })
        }
        Command::Convert { input, from, to, text, output, role_map } => {
            let roles = load_roles(role_map.as_deref())?;
            let body = read(&input)?;
            let text_path = text.unwrap_or_else(|| input.with_extension("txt"));
            let note = if text_path.exists() {
                read(&text_path)?
            } else if body.trim().is_empty() {
                String::new()
            } else {
                return Err(RunError::Config(format!("note text {} not found (use --text)", text_path.display())));
            };
            let converted = runner::convert(&body, from, to, &note, &roles)
                .map_err(|e| RunError::Data(format!("{}: {e}", input.display())))?;
            match output {
                Some(p) => fs::write(&p, converted).map_err(|e| RunError::Data(format!("{}: {e}", p.display())))?,
                None => emit(&converted),
            }
            Ok(0)
        }
        Command::Prompt { run, note, sdoh } => {
            let prepared = runner::prepare(&run.manifest()?)?;
            let doc = prepared
                .notes
                .iter()
                .find(|n| n.id == note)
                .ok_or_else(|| RunError::Config(format!("note {note} not in the target split")))?;
            let sdoh = sdoh
                .map(|s| s.parse::<SdohType>().map_err(|e| RunError::Config(e.to_string())))
                .transpose()?;
            let request = build_prompt(&prepared.plan.builder, &prepared.plan.examples, doc, sdoh)
                .map_err(|e| RunError::Config(e.to_string()))?;
            emit(&request.rendered_text);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
