use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use wot_core::auditor::{audit_prices, Verdict, DEFAULT_MIN_AMBIGUITY};
use wot_core::catalog::{load_catalog, ProtocolMode};
use wot_core::group::{setup_params, PRESET_RFC3526_2048, PRESET_TEST_23};
use wot_core::harness::{privacy_experiment, PrivacyExperiment, DEFAULT_ALPHA, DEFAULT_SESSIONS};
use wot_core::net::{buy, serve, write_purchase, ServeOptions};
use wot_core::store::{item_path, read_bundle, read_secrets, write_bundle, write_secrets};
use wot_core::symcrypto::KeyLength;
use wot_core::weights::{approx_reduce, gcd_reduce, parse_prices, suggest_units};
use wot_core::wot::{publish, PurchaseRequest};

const SEED_VAR: &str = "WOT_SEED";

#[derive(Parser)]
#[command(name = "wot", version, about = "Weighted oblivious transfer: sell priced items without learning which")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt a catalog directory into a publishable bundle.
    Publish {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: ProtocolMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128, value_parser = parse_lambda)]
        lambda: u16,
        #[arg(long, default_value = PRESET_RFC3526_2048)]
        group: String,
    },
    /// Sell from a published bundle.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        listen: String,
        /// Exit after handling this many connections.
        #[arg(long)]
        max_sessions: Option<u64>,
    },
    /// Buy items from a running server.
    Buy {
        #[arg(long)]
        server: String,
        #[arg(long, value_delimiter = ',', required = true)]
        items: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Local copy of the bundle; ciphertexts found there are not fetched.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Report what totals reveal about purchases. Exits 2 on UNSAFE.
    Audit {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_AMBIGUITY)]
        min_ambiguity: u64,
    },
    /// Shrink weights by their common divisor, or round them to a unit q.
    Reduce {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        q: Option<u64>,
    },
    /// Compare sender views of two equal-total choice sets. Exits 3 on FAIL.
    PrivacyTest {
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<u64>,
        #[arg(long, value_delimiter = ',', required = true)]
        choice_a: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        choice_b: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_SESSIONS)]
        sessions: usize,
        #[arg(long, default_value = PRESET_TEST_23)]
        group: String,
        #[arg(long, default_value = "p2", value_parser = parse_mode)]
        mode: ProtocolMode,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
}

fn parse_mode(s: &str) -> Result<ProtocolMode, String> {
    s.parse().map_err(|_| format!("expected p1 or p2, got {s:?}"))
}

fn parse_lambda(s: &str) -> Result<u16, String> {
    match s {
        "128" => Ok(128),
        "256" => Ok(256),
        _ => Err(format!("expected 128 or 256, got {s:?}")),
    }
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_VAR} must be an integer"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_VAR}: {e}"),
    }
}

fn rng() -> Result<ChaCha20Rng> {
    Ok(match seed_from_env()? {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed),
        None => ChaCha20Rng::from_entropy(),
    })
}

fn read_prices(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_prices(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Publish {
            catalog,
            mode,
            out,
            lambda,
            group,
        } => {
            let catalog = load_catalog(&catalog)?;
            let params = setup_params(&group)?;
            let key_len = KeyLength::from_bits(lambda).expect("validated by parser");
            let publication = publish(&catalog, mode, key_len, &params, &mut rng()?)?;
            write_bundle(&out, &publication.bundle)?;
            write_secrets(&out, &publication.secrets)?;
            let c = publication.counts;
            println!(
                "published {} items (mode {mode}, group {group}, lambda {lambda}) to {}",
                catalog.len(),
                out.display()
            );
            println!("flat secrets: {}", c.flat_secrets);
            println!(
                "encryptions: {}  key generations: {}  share draws: {}  xor ops: {}",
                c.encryptions, c.key_generations, c.share_draws, c.xor_ops
            );
            println!("keep {} private", wot_core::store::secrets_path(&out).display());
        }
        Command::Serve {
            bundle,
            listen,
            max_sessions,
        } => {
            if std::env::var_os(SEED_VAR).is_some() {
                bail!("{SEED_VAR} is set; refusing to serve with a fixed seed");
            }
            let published = read_bundle(&bundle)?;
            let secrets = read_secrets(&bundle, &published)?;
            let params = setup_params(&published.manifest.group_id)?;
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            println!("listening on {}", listener.local_addr()?);
            let options = ServeOptions {
                max_sessions,
                billing: Some(Arc::new(Mutex::new(std::io::stdout()))),
                ..Default::default()
            };
            let stats = serve(
                listener,
                Arc::new(published),
                Arc::new(secrets),
                Arc::new(params),
                options,
            )?;
            println!("sessions completed: {}  failed: {}", stats.completed, stats.failed);
        }
        Command::Buy {
            server,
            items,
            out,
            bundle,
        } => {
            let mut request = PurchaseRequest::new(items);
            if let Some(dir) = bundle {
                let local = read_bundle(&dir)?;
                for entry in &local.manifest.entries {
                    if let Ok(ct) = fs::read(item_path(&dir, &entry.id)) {
                        request.known_ciphertexts.insert(entry.id.clone(), ct);
                    }
                }
            }
            let purchase = buy(server.as_str(), &request, &mut rng()?)?;
            write_purchase(&out, &purchase)?;
            for item in &purchase.output.items {
                println!("{}\t{} bytes", item.id, item.plaintext.len());
            }
            println!("paid T={}", purchase.billed);
        }
        Command::Audit { prices, min_ambiguity } => {
            let report = audit_prices(&read_prices(&prices)?)?;
            print!("{}", report.render(min_ambiguity));
            if report.verdict(min_ambiguity) == Verdict::Unsafe {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Reduce { prices, q } => {
            let prices = read_prices(&prices)?;
            match q {
                Some(q) => println!("{}", approx_reduce(&prices, q)?),
                None => {
                    println!("{}", gcd_reduce(&prices)?);
                    let units = suggest_units(&prices)?;
                    if !units.is_empty() {
                        let list: Vec<String> = units.iter().map(u64::to_string).collect();
                        println!("candidate units for --q: {}", list.join(", "));
                    }
                }
            }
        }
        Command::PrivacyTest {
            weights,
            choice_a,
            choice_b,
            sessions,
            group,
            mode,
            alpha,
        } => {
            let params = setup_params(&group)?;
            let seed = match seed_from_env()? {
                Some(s) => s,
                None => ChaCha20Rng::from_entropy().next_u64(),
            };
            let mut exp = PrivacyExperiment::new(weights, choice_a, choice_b);
            exp.sessions = sessions;
            exp.mode = mode;
            exp.alpha = alpha;
            exp.seed = seed;
            let report = privacy_experiment(&exp, &params)?;
            println!("seed: {seed}");
            print!("{}", report.render());
            if !report.passed() {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
