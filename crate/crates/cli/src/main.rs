use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use okra_cli::bench::{default_range, run_bench, write_csv, BenchMode, BenchOptions};
use okra_cli::commands::{cmd_party, cmd_server, cmd_status, PartyAction, PartyArgs};
use okra_cli::verify::{default_kernel, run_verify, VerifyOptions, FAMILIES};
use okra_cli::{CliError, RunConfig};
use okra_core::Seed;
use tracing_subscriber::EnvFilter;

/// Privacy-preserving one-shot federated kernel learning.
#[derive(Parser)]
#[command(name = "okra", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Parties,
    Features,
}

#[derive(Subcommand)]
enum Command {
    /// Run a session server until every expected party has submitted.
    Server {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Serve the Gram matrix on the HTTP status plane.
        #[arg(long)]
        release_gram: bool,
    },
    /// Encode local data and submit it once.
    #[command(group(ArgGroup::new("action").args(["append", "withdraw"])))]
    Party {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Scale 8-bit intensities to [0, 1].
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        party_id: Option<String>,
        /// Add rows to an earlier submission.
        #[arg(long)]
        append: bool,
        /// Remove this party's rows from the session.
        #[arg(long)]
        withdraw: bool,
        /// Write the secret key to this file. Debugging only.
        #[arg(long, value_name = "FILE")]
        unsafe_export_key: Option<PathBuf>,
    },
    /// Compare encoded and plaintext pipelines on synthetic data.
    Verify {
        /// Seed and kernel are taken from this file when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 300)]
        features: usize,
        #[arg(long, default_value_t = 3)]
        parties: usize,
        #[arg(long, default_value = "rbf")]
        kernel: String,
        #[arg(long)]
        all_kernels: bool,
        /// 64 hex characters.
        #[arg(long)]
        seed: Option<String>,
        #[arg(long, default_value_t = 10)]
        components: usize,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Time encoding and sessions; writes CSV.
    Bench {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Comma-separated values of the swept variable.
        #[arg(long, value_delimiter = ',')]
        range: Option<Vec<usize>>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        /// Feature count for the parties sweep.
        #[arg(long, default_value_t = 1000)]
        features: usize,
        /// Largest feature count for the dense-mask reference.
        #[arg(long, default_value_t = 16384)]
        dense_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Query a server's HTTP status plane.
    Status {
        #[arg(long)]
        url: String,
        #[arg(long, default_value = "/v1/session")]
        path: String,
    },
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("OKRA_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn verify(
    config: Option<PathBuf>,
    n: usize,
    features: usize,
    parties: usize,
    kernel: String,
    all_kernels: bool,
    seed: Option<String>,
    components: usize,
    json: bool,
) -> Result<(), CliError> {
    let cfg = config.map(|p| RunConfig::load(&p)).transpose()?;
    let seed = match (seed, &cfg) {
        (Some(s), _) => Seed::from_hex(&s).map_err(|e| CliError::Config(format!("seed: {e}")))?,
        (None, Some(c)) if c.seed.is_some() => c.seed()?,
        _ => Seed::new([0x5a; 32]),
    };
    let kernels = if all_kernels {
        FAMILIES
            .iter()
            .filter_map(|f| default_kernel(f, features))
            .collect()
    } else if let Some(c) = &cfg {
        vec![c.kernel.clone()]
    } else {
        vec![default_kernel(&kernel, features)
            .ok_or_else(|| CliError::Config(format!("unknown kernel {kernel:?}")))?]
    };
    let mut opts = VerifyOptions::new(n, features, parties, kernels, seed);
    opts.components = components;
    if let Some(c) = &cfg {
        opts.block_size = c.plan.block_size;
        opts.redundancy = c.plan.redundancy;
    }
    let report = run_verify(&opts)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        print!("{report}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(
            "encoded and plaintext results differ beyond tolerance".into(),
        ))
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Server {
            config,
            out_dir,
            release_gram,
        } => cmd_server(&RunConfig::load(&config)?, out_dir, release_gram).await,
        Command::Party {
            config,
            data,
            labels,
            normalize,
            party_id,
            append,
            withdraw,
            unsafe_export_key,
        } => {
            let action = match (append, withdraw) {
                (true, _) => PartyAction::Append,
                (_, true) => PartyAction::Withdraw,
                _ => PartyAction::Submit,
            };
            let args = PartyArgs {
                data,
                labels,
                normalize,
                party_id,
                action,
                export_key: unsafe_export_key,
            };
            cmd_party(&RunConfig::load(&config)?, &args).await
        }
        Command::Verify {
            config,
            n,
            features,
            parties,
            kernel,
            all_kernels,
            seed,
            components,
            json,
        } => tokio::task::block_in_place(|| {
            verify(
                config,
                n,
                features,
                parties,
                kernel,
                all_kernels,
                seed,
                components,
                json,
            )
        }),
        Command::Bench {
            mode,
            range,
            repetitions,
            samples,
            features,
            dense_max,
            out,
        } => {
            let mode = match mode {
                Mode::Parties => BenchMode::Parties,
                Mode::Features => BenchMode::Features,
            };
            let mut opts = BenchOptions::new(
                mode,
                range.unwrap_or_else(|| default_range(mode)),
                repetitions,
            );
            opts.samples = samples;
            opts.features = features;
            opts.dense_max = dense_max;
            let rows = run_bench(&opts).await?;
            match out {
                Some(p) => write_csv(
                    std::fs::File::create(&p).map_err(|e| CliError::Input(e.to_string()))?,
                    &rows,
                ),
                None => write_csv(std::io::stdout().lock(), &rows),
            }
        }
        Command::Status { url, path } => cmd_status(&url, &path).await,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let rt = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("okra: cannot start runtime: {e}");
            return ExitCode::from(3);
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("okra: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
