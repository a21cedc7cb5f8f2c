use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpsgd_core::accountant::{
    advanced_composition, clt_mu, compose_gaussian, framework_guarantee, gaussian_mechanism_sigma,
    gaussian_tradeoff_on, group_privacy_epsdelta, layerwise_effective_sigma,
};
use dpsgd_core::experiment::{
    prepare_path, run_attack_path, run_experiment, write_norm_profile, Overrides,
};
use dpsgd_core::Error;
use serde_json::json;

/// Generalized DP-SGD experiments and f-DP accounting.
#[derive(Parser)]
#[command(name = "dpsgd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// Experiment config (TOML)
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Write outputs here instead of the configured directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the number of epochs
    #[arg(long)]
    epochs: Option<usize>,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            epochs: self.epochs,
            out_dir: self.out_dir.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics.csv, rounds.csv and privacy_report.json
    Run(RunFlags),
    /// Train and write per-epoch, per-layer public-set gradient norms
    Profile(RunFlags),
    /// Estimate a mechanism's trade-off curve and check it against G_mu
    Attack(RunFlags),
    /// Direct accountant queries (JSON on stdout)
    #[command(subcommand)]
    Account(Account),
}

#[derive(Subcommand)]
enum Account {
    /// mu = sqrt(g*E)/sigma, or sqrt(g*E*L)/sigma with --layerwise
    Gdp {
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long)]
        layerwise: bool,
        #[arg(long, default_value_t = 1)]
        group_size: usize,
    },
    /// CLT estimate mu = sqrt(2)*sqrt(E*m/N)*h(sigma); --layers L uses sigma/sqrt(L)
    Clt {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Compose Gaussian DP parameters
    Compose { mus: Vec<f64> },
    /// Sample G_mu on a uniform grid (CSV on stdout)
    Tradeoff {
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
    /// Advanced composition of k (epsilon, delta) mechanisms
    Advanced {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        delta_prime: f64,
    },
    /// (epsilon, delta) for groups of size k
    Group {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        k: usize,
    },
    /// Gaussian mechanism noise scale for a target (epsilon, delta)
    GaussianSigma {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        sensitivity: f64,
    },
}

fn account(q: Account) -> Result<(), Error> {
    let out = match q {
        Account::Gdp {
            epochs,
            sigma,
            layers,
            layerwise,
            group_size,
        } => serde_json::to_value(framework_guarantee(
            group_size, epochs, sigma, layers, layerwise,
        )?)?,
        Account::Clt {
            n,
            m,
            epochs,
            sigma,
            layers,
        } => {
            let effective = match layers {
                Some(l) => layerwise_effective_sigma(sigma, l)?,
                None => sigma,
            };
            json!({ "mu": clt_mu(n, m, epochs, effective)?, "sigma_effective": effective })
        }
        Account::Compose { mus } => json!({ "mu": compose_gaussian(&mus)? }),
        Account::Tradeoff { mu, grid } => {
            let curve = gaussian_tradeoff_on(mu, grid)?;
            println!("alpha,beta");
            for (a, f) in curve.alphas().zip(curve.values()) {
                println!("{a},{f}");
            }
            return Ok(());
        }
        Account::Advanced {
            epsilon,
            delta,
            k,
            delta_prime,
        } => serde_json::to_value(advanced_composition(epsilon, delta, k, delta_prime)?)?,
        Account::Group { epsilon, delta, k } => {
            serde_json::to_value(group_privacy_epsdelta(epsilon, delta, k)?)?
        }
        Account::GaussianSigma {
            epsilon,
            delta,
            sensitivity,
        } => json!({ "sigma": gaussian_mechanism_sigma(epsilon, delta, sensitivity)? }),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(f) => {
            let prepared = prepare_path(&f.config, &f.overrides())?;
            let s = run_experiment(&prepared)?;
            let acc = s
                .final_accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "n/a".into());
            println!("test accuracy {acc}, mu {}", s.report.guarantee.mu);
            println!("wrote {}", s.out_dir.display());
        }
        Command::Profile(f) => {
            let prepared = prepare_path(&f.config, &f.overrides())?;
            println!("wrote {}", write_norm_profile(&prepared)?.display());
        }
        Command::Attack(f) => {
            if f.epochs.is_some() {
                return Err(Error::Config(
                    "--epochs does not apply to attack configs".into(),
                ));
            }
            let s = run_attack_path(&f.config, &f.overrides())?;
            let r = &s.report;
            println!(
                "sup distance to G_{} = {:.4}; domination {} (slack {:.4})",
                r.theory_mu,
                r.sup_distance,
                if r.verdict.passed {
                    "holds"
                } else {
                    "violated"
                },
                r.verdict.slack
            );
            println!("wrote {}", s.out_dir.display());
        }
        Command::Account(q) => account(q)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::BatchNormPerSample) {
                eprintln!(
                    "hint: use BC (clip_mode = \"batch\") or remove batchnorm (batchnorm = false)"
                );
            }
            ExitCode::from(match e {
                Error::Config(_) | Error::BatchNormPerSample | Error::InvalidArgument(_) => 2,
                _ => 1,
            })
        }
    }
}
