mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Contrastive artist-embedding fusion and retrieval evaluation.
#[derive(Parser, Debug)]
#[command(name = "mmfuse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration for the subcommand.
    #[arg(long, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the contrastive model on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Drop similarity edges that name unknown artists instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Fit a PCA or random-projection baseline.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `pca` or `rand`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        out_dim: Option<usize>,
        #[arg(long)]
        lenient: bool,
    },
    /// Print the nearest artists to one or more query artists.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "query", required = true)]
        queries: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
        /// Source name, e.g. `contrastive`, `pca`, `cf`.
        #[arg(long)]
        source: Option<String>,
        /// Contrastive checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Fitted projector checkpoint, used instead of fitting one.
        #[arg(long)]
        projector: Option<PathBuf>,
        #[arg(long)]
        lenient: bool,
    },
    /// Re-score an existing report against a dataset's similarity graph.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Report written by `experiment`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        lenient: bool,
    },
    /// Run every condition and source of an experiment configuration.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Overrides the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the model checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen { common, out } => commands::gen(&common, &out),
        Command::Train {
            common,
            data,
            out,
            log,
            lenient,
        } => commands::train(&common, &data, &out, log.as_deref(), lenient),
        Command::Project {
            common,
            data,
            out,
            kind,
            out_dim,
            lenient,
        } => commands::project(&common, &data, &out, kind.as_deref(), out_dim, lenient),
        Command::Retrieve {
            common,
            data,
            queries,
            k,
            source,
            model,
            projector,
            lenient,
        } => commands::retrieve(
            &common,
            &commands::RetrieveArgs {
                data,
                queries,
                k,
                source,
                model,
                projector,
                lenient,
            },
        ),
        Command::Eval {
            common,
            data,
            report,
            out,
            k,
            lenient,
        } => commands::eval(&common, &data, &report, &out, k, lenient),
        Command::Experiment { common, output, model } => commands::experiment(&common, output, model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
