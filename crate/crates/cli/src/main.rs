use clap::{Args, Parser, Subcommand};
use horseshoe_cli::{read_spec, load_state, run_pipeline, CliError, ExperimentSpec, Stage};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "horseshoe", version, about = "Stable dimension, recurrent sets and blenders of model horseshoes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    Dim(Common),
    Gibbs(Common),
    Marstrand(Common),
    BuildK(Common),
    VerifyK(Common),
    Mc(Common),
    Blender(Common),
    Project(Common),
    /// Every stage listed in the config's `stages`.
    Pipeline(Common),
}

fn run(cmd: Command) -> Result<bool, CliError> {
    let (stage, common) = match cmd {
        Command::Dim(c) => (Some(Stage::Dim), c),
        Command::Gibbs(c) => (Some(Stage::Gibbs), c),
        Command::Marstrand(c) => (Some(Stage::Marstrand), c),
        Command::BuildK(c) => (Some(Stage::BuildK), c),
        Command::VerifyK(c) => (Some(Stage::VerifyK), c),
        Command::Mc(c) => (Some(Stage::Mc), c),
        Command::Blender(c) => (Some(Stage::Blender), c),
        Command::Project(c) => (Some(Stage::Project), c),
        Command::Pipeline(c) => (None, c),
    };
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let mut spec = match &common.config {
        Some(p) => read_spec(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(r) = common.rho {
        spec.rho = r;
    }
    let rs = spec.resolve()?;
    let stages = stage.map_or_else(|| rs.spec.stages.clone(), |s| vec![s]);
    let prior = load_state(&common.out_dir, &rs)?;
    let (bundle, _) = run_pipeline(&rs, &stages, prior)?;
    bundle.write(&common.out_dir)?;
    for (st, r) in &bundle.reports {
        eprintln!("{st}: wrote {}", common.out_dir.join(format!("{}.json", st.name())).display());
        if *st == Stage::Dim {
            println!("d = {}", r.result["d"]);
        }
    }
    Ok(bundle.counterexample)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("verify-k: counterexample found");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
