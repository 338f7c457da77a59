use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use graphpriv::attack::{attack_link, attack_node, AttackerConfig, SplitSpec};
use graphpriv::defense::{train, DefenseConfig};
use graphpriv::error::{Error, Result};
use graphpriv::harness::{
    defense_fixture, leakage_row, run_defense_experiment, run_leakage_table, run_simulation, SweepGrid,
};
use graphpriv::io::{load_graph, read_matrix, write_graph, write_matrix};
use graphpriv::synth::{generate, GeneratorParams};

#[derive(Parser)]
#[command(name = "graphpriv", version, about = "Graph privacy leakage lab and DPPGNN defense")]
struct Cli {
    /// Seed override for generators, splits and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, directory or prefix depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON defense config for `train` and `compare`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a two-block graph and write its CSV triplet to `--out <prefix>`.
    Generate(GenArgs),
    /// Closed-form leakage report (JSON), or a grid table with `sweep`.
    Leakage(LeakageArgs),
    /// Attack sweep over a grid (CSV).
    Simulate(SimulateArgs),
    /// Train the defense; writes embeddings, adjacency, history and summary to `--out <dir>`.
    Train(TrainArgs),
    /// Attack saved embeddings (JSON report).
    Attack {
        #[command(subcommand)]
        target: AttackTarget,
    },
    /// Control versus defense on the same seed (JSON).
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.08)]
    p: f64,
    #[arg(long, default_value_t = 0.02)]
    q: f64,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    /// Utility feature dimensions; 0 disables the utility channel.
    #[arg(long, default_value_t = 0)]
    k_u: usize,
    #[arg(long, default_value_t = 0.5)]
    mu_u: f64,
    #[arg(long, default_value_t = 0.0)]
    homophily: f64,
}

impl GenArgs {
    fn params(&self, seed: u64) -> GeneratorParams {
        let p = GeneratorParams::new(self.n, self.p, self.q, self.k, self.mu, seed);
        if self.k_u > 0 {
            p.with_utility(self.k_u, self.mu_u)
                .with_utility_homophily(self.homophily)
        } else {
            p
        }
    }
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct LeakageArgs {
    #[command(flatten)]
    gen: GenArgs,
    /// Also measure the Bhattacharyya distance on a sampled graph.
    #[arg(long)]
    empirical: bool,
    #[command(subcommand)]
    sweep: Option<LeakageCommand>,
}

#[derive(Subcommand)]
enum LeakageCommand {
    /// One row per grid cell (CSV).
    Sweep {
        /// JSON grid; defaults to the six (p, q) pairs times six mus.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        empirical: bool,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Override the grid's trials per cell.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Graph CSV prefix.
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Subcommand)]
enum AttackTarget {
    Node(AttackArgs),
    Link(AttackArgs),
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Graph CSV prefix; the standard fixture is generated when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn defense_config(cli: &Cli) -> Result<DefenseConfig> {
    let mut cfg = match &cli.config {
        Some(p) => read_json(p)?,
        None => DefenseConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn grid(cli: &Cli, path: Option<&PathBuf>) -> Result<SweepGrid> {
    let mut g = match path {
        Some(p) => read_json(p)?,
        None => SweepGrid::default(),
    };
    if let Some(s) = cli.seed {
        g.seed_base = s;
    }
    Ok(g)
}

fn output(out: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_json<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LeakageOutput {
    #[serde(flatten)]
    row: graphpriv::harness::LeakageRow,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a DefenseConfig,
    epochs: usize,
    final_record: Option<&'a graphpriv::defense::EpochRecord>,
    initial_bias: Option<f64>,
    final_bias: Option<f64>,
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Generate(args) => {
            let out = cli
                .out
                .as_ref()
                .ok_or_else(|| Error::invalid("generate needs --out <prefix>"))?;
            let g = generate(&args.params(seed))?;
            write_graph(&g, out)?;
        }
        Command::Leakage(args) => match &args.sweep {
            Some(LeakageCommand::Sweep { grid: path, empirical }) => {
                let g = grid(cli, path.as_ref())?;
                run_leakage_table(&g, *empirical, cli.threads, output(cli.out.as_ref())?)?;
            }
            None => {
                let row = leakage_row(&args.gen.params(seed), args.empirical)?;
                emit_json(&LeakageOutput { row }, cli.out.as_ref())?;
            }
        },
        Command::Simulate(args) => {
            let mut g = grid(cli, args.grid.as_ref())?;
            if let Some(t) = args.trials {
                g.trials = t;
            }
            run_simulation(&g, &AttackerConfig::default(), cli.threads, output(cli.out.as_ref())?)?;
        }
        Command::Train(args) => {
            let out = cli
                .out
                .as_ref()
                .ok_or_else(|| Error::invalid("train needs --out <dir>"))?;
            let cfg = defense_config(cli)?;
            let graph = load_graph(&args.graph)?;
            let outcome = train(&graph, &cfg)?;
            fs::create_dir_all(out)?;
            write_matrix(&out.join("embeddings.csv"), outcome.embeddings.view(), "z")?;
            write_matrix(&out.join("adjacency.csv"), outcome.adjacency.to_dense().view(), "a")?;
            outcome.history.save_csv(cfg.alpha, &out.join("history.csv"))?;
            let summary = TrainSummary {
                config: &cfg,
                epochs: outcome.history.len(),
                final_record: outcome.history.last(),
                initial_bias: outcome.history.first().map(|r| r.adjacency_bias),
                final_bias: outcome.history.last().map(|r| r.adjacency_bias),
            };
            emit_json(&summary, Some(&out.join("summary.json")))?;
        }
        Command::Attack { target } => {
            let (args, node) = match target {
                AttackTarget::Node(a) => (a, true),
                AttackTarget::Link(a) => (a, false),
            };
            let z = read_matrix(&args.embeddings)?;
            let graph = load_graph(&args.graph)?;
            let split = SplitSpec::with_seed(seed);
            let cfg = AttackerConfig::default();
            let report = if node {
                attack_node(z.view(), graph.sensitive_labels(), &split, &cfg)?
            } else {
                attack_link(z.view(), &graph, &split, &cfg)?
            };
            emit_json(&report, cli.out.as_ref())?;
        }
        Command::Compare(args) => {
            let cfg = defense_config(cli)?;
            let graph = match &args.graph {
                Some(p) => load_graph(p)?,
                None => generate(&defense_fixture(cfg.seed))?,
            };
            let cmp = run_defense_experiment(&graph, &cfg, &AttackerConfig::default())?;
            emit_json(&cmp, cli.out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
