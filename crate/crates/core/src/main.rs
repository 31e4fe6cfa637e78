use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fadegrow::config::RunConfig;
use fadegrow::evaldata::{self, InteractionDataset, Split};
use fadegrow::sampler;
use fadegrow::scorenet::{load_checkpoint, save_checkpoint};
use fadegrow::train;
use fadegrow::verify;
use fadegrow::Error;

#[derive(Parser)]
#[command(
    name = "fadegrow",
    version,
    about = "Preference-fading diffusion recommender"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numeric property suites.
    Verify {
        /// Only run suites whose name contains this string.
        filter: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic cyclic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train a score network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Maximum number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Write top-K recommendations for the evaluation split.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write HR/NDCG for the evaluation split.
    Eval {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// pointwise | pairwise | hybrid[:<n>] | adaptive[+virtual]
    #[arg(long)]
    setting: Option<String>,
    /// Guidance strength.
    #[arg(long)]
    w: Option<f64>,
    /// Schedule steps T when training; reverse steps S when sampling.
    #[arg(long)]
    steps: Option<usize>,
    /// Worker threads (results do not depend on this).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Which meaning `--steps` takes.
#[derive(PartialEq)]
enum StepsMeans {
    Schedule,
    Sampler,
}

impl Common {
    fn resolve(&self, steps: StepsMeans) -> fadegrow::Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_text(&fs::read_to_string(path)?)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::ConfigError(format!("--set expects key=value, got `{kv}`"))
            })?;
            c.set(k, v)?;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(d) = &self.out_dir {
            c.out_dir = d.clone();
        }
        if let Some(d) = &self.data {
            c.data_path = d.clone();
        }
        if let Some(d) = &self.checkpoint {
            c.checkpoint_path = d.clone();
        }
        if let Some(s) = &self.setting {
            c.set("loss.setting", s)?;
        }
        if let Some(w) = self.w {
            c.w = w;
        }
        if let Some(s) = self.steps {
            match steps {
                StepsMeans::Schedule => c.steps = s,
                StepsMeans::Sampler => c.sample_steps = s,
            }
        }
        Ok(c)
    }
}

fn echo_config(c: &RunConfig, command: &str) -> fadegrow::Result<()> {
    fs::create_dir_all(&c.out_dir)?;
    fs::write(c.out_dir.join(format!("{command}_config.txt")), c.to_text())?;
    Ok(())
}

fn load_data(c: &RunConfig) -> fadegrow::Result<InteractionDataset> {
    let path = c.data();
    if !path.exists() {
        return Err(Error::ConfigError(format!(
            "dataset {} not found",
            path.display()
        )));
    }
    InteractionDataset::load(&path)
}

fn load_model(c: &RunConfig) -> fadegrow::Result<fadegrow::scorenet::ScoreField> {
    let path = c.checkpoint();
    if !path.exists() {
        return Err(Error::ConfigError(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    load_checkpoint(&path)
}

fn check_schedule(c: &RunConfig, steps: usize) -> fadegrow::Result<fadegrow::Schedule> {
    let s = c.schedule()?;
    if s.steps() != steps {
        return Err(Error::ConfigError(format!(
            "config has steps = {}, but the checkpoint was trained with {steps}",
            s.steps()
        )));
    }
    Ok(s)
}

fn cmd_verify(filter: Option<&str>, seed: u64) -> fadegrow::Result<bool> {
    let start = Instant::now();
    let results = verify::run_suites(filter, seed);
    if results.is_empty() {
        return Err(Error::ConfigError(format!(
            "no suite matches `{}`; available: {}",
            filter.unwrap_or(""),
            verify::suite_names().join(", ")
        )));
    }
    for r in &results {
        println!("{}", r.line());
        eprintln!("  {} took {:.2}s", r.name, r.seconds);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} suites passed", results.len());
    eprintln!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(passed == results.len())
}

fn cmd_synth(c: &RunConfig) -> fadegrow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let data = evaldata::synth_cycle(c.synth_n, c.synth_count, c.synth_noise, &mut rng)?;
    echo_config(c, "synth")?;
    let path = c.data();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    data.save(&path)?;
    eprintln!(
        "wrote {} sequences to {}",
        data.sequences().len(),
        path.display()
    );
    Ok(())
}

fn cmd_train(c: &RunConfig) -> fadegrow::Result<()> {
    let data = load_data(c)?;
    let schedule = c.schedule()?;
    echo_config(c, "train")?;
    let out = train::train_with_observer(&data, &c.train(), &schedule, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  HR@1 {:.4}  HR@5 {:.4}  NDCG@5 {:.4}  HR@10 {:.4}  NDCG@10 {:.4}",
            e.epoch, e.train_loss, e.val_hr1, e.val_hr5, e.val_ndcg5, e.val_hr10, e.val_ndcg10
        );
    })?;
    fs::write(c.out_dir.join("train_log.csv"), out.log_csv())?;
    let ckpt = c.checkpoint();
    if let Some(parent) = ckpt.parent() {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(&out.field, &ckpt)?;
    eprintln!(
        "best epoch {}; checkpoint {}",
        out.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn eval_split(data: &InteractionDataset) -> &[evaldata::Sequence] {
    data.split(Split::Test)
}

fn cmd_sample(c: &RunConfig) -> fadegrow::Result<()> {
    let data = load_data(c)?;
    let field = load_model(c)?;
    let schedule = check_schedule(c, field.config().steps)?;
    let cfg = c.sampler();
    echo_config(c, "sample")?;
    let users = eval_split(&data);
    if users.is_empty() {
        return Err(Error::DataError("evaluation split is empty".into()));
    }
    let mut csv = String::from("user_index,rank,item,score\n");
    for (i, s) in users.iter().enumerate() {
        let g = sampler::generate(&field, &s.context(), &cfg, &schedule, &mut cfg.user_rng(i))?;
        for (r, &item) in g.ranking.iter().take(c.top_k).enumerate() {
            csv.push_str(&format!("{i},{},{item},{:.6e}\n", r + 1, g.probs[item]));
        }
    }
    fs::write(c.out_dir.join("topk.csv"), csv)?;
    Ok(())
}

fn cmd_eval(c: &RunConfig) -> fadegrow::Result<()> {
    let data = load_data(c)?;
    let field = load_model(c)?;
    let schedule = check_schedule(c, field.config().steps)?;
    echo_config(c, "eval")?;
    let table = evaldata::evaluate(
        &field,
        eval_split(&data),
        &c.sampler(),
        &schedule,
        &c.eval_ks,
    )?;
    let csv = table.to_csv();
    print!("{csv}");
    fs::write(c.out_dir.join("metrics.csv"), csv)?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalError(_) | Error::MagnitudeError(_) | Error::DegenerateReverse => 3,
        Error::ConfigError(_) | Error::ParseError { .. } => 2,
        _ => 1,
    }
}

fn set_threads(threads: usize) -> fadegrow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global()
        .map_err(|e| Error::ConfigError(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> fadegrow::Result<bool> {
    match cli.command {
        Command::Verify { filter, seed } => cmd_verify(filter.as_deref(), seed),
        Command::Synth {
            common,
            n,
            count,
            noise,
        } => {
            let mut c = common.resolve(StepsMeans::Schedule)?;
            if let Some(n) = n {
                c.synth_n = n;
            }
            if let Some(k) = count {
                c.synth_count = k;
            }
            if let Some(x) = noise {
                c.synth_noise = x;
            }
            cmd_synth(&c).map(|_| true)
        }
        Command::Train { common, epochs, lr } => {
            set_threads(common.threads)?;
            let mut c = common.resolve(StepsMeans::Schedule)?;
            if let Some(e) = epochs {
                c.max_epochs = e;
            }
            if let Some(lr) = lr {
                c.lr = lr;
            }
            cmd_train(&c).map(|_| true)
        }
        Command::Sample { common, top_k } => {
            set_threads(common.threads)?;
            let mut c = common.resolve(StepsMeans::Sampler)?;
            if let Some(k) = top_k {
                c.top_k = k;
            }
            cmd_sample(&c).map(|_| true)
        }
        Command::Eval { common } => {
            set_threads(common.threads)?;
            let c = common.resolve(StepsMeans::Sampler)?;
            cmd_eval(&c).map(|_| true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
