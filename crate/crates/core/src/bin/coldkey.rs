use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use coldkey::attack::AttackMode;
use coldkey::cli::{self, EXIT_OK, EXIT_VALIDATION};

#[derive(Parser)]
#[command(
    name = "coldkey",
    version,
    about = "Cold-resistor key exchange simulator and attack toolkit"
)]
struct Args {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay the configuration recorded in a manifest.json.
    #[arg(long, global = true, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print closed-form reference values as CSV.
    Theory,
    /// Run a key-exchange session and write its artifacts.
    Simulate {
        #[arg(long)]
        beps: Option<usize>,
    },
    /// Build the transient database.
    BuildDb {
        /// Also export the templates as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Attack a simulated session.
    Attack {
        /// Directory written by `simulate`.
        #[arg(long)]
        session: PathBuf,
        /// Database file written by `build-db`.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, default_value = "transient")]
        mode: AttackMode,
    },
    /// Run the acceptance checks.
    Validate,
}

fn run(args: Args) -> coldkey::Result<i32> {
    let (cfg, manifest_beps) =
        cli::resolve_config(args.config.as_deref(), args.manifest.as_deref(), args.seed)?;
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    let explicit_out = args.out.is_some() || cfg.output_dir.is_some();
    let out = cli::output_dir(&cfg, args.out.clone());
    match args.command {
        Command::Theory => {
            let csv = cli::cmd_theory(&cfg)?;
            print!("{csv}");
            if explicit_out {
                std::fs::create_dir_all(&out)?;
                std::fs::write(out.join("theory.csv"), csv)?;
            }
        }
        Command::Simulate { beps } => {
            let output = cli::cmd_simulate(&cfg, beps.or(manifest_beps), &out)?;
            let s = &output.session.summary;
            println!(
                "{} BEPs, {} shared bits, yield {:.4}, bit_errors={} -> {}",
                s.n_bep,
                s.shared_bits,
                s.secure_yield,
                s.bit_errors,
                out.display()
            );
        }
        Command::BuildDb { csv } => {
            let db = cli::cmd_build_db(&cfg, &out, csv)?;
            println!(
                "{} templates stored ({} answered), fingerprint {} -> {}",
                db.templates.len(),
                db.implied_len(),
                db.fingerprint_hex(),
                out.join(cli::DATABASE_FILE).display()
            );
        }
        Command::Attack { session, db, mode } => {
            let report = cli::cmd_attack(&cfg, &session, db.as_deref(), mode, &out)?;
            println!("{}", cli::verdict(&report));
        }
        Command::Validate => {
            let outcome = cli::cmd_validate(&cfg, args.out.as_deref())?;
            println!(
                "{}",
                if outcome.passed() {
                    "all checks passed"
                } else {
                    "some checks failed"
                }
            );
            return Ok(if outcome.passed() {
                EXIT_OK
            } else {
                EXIT_VALIDATION
            });
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
