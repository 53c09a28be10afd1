use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixedit_core::ablation::{ablation_csv, ablation_matrix, noise_csv, noise_direction};
use mixedit_core::checkpoint::{self, Checkpoint};
use mixedit_core::config::RunConfig;
use mixedit_core::eval::{evaluate, psnr, samples_csv, task_sr, tasks_csv};
use mixedit_core::inference::edit;
use mixedit_core::synth::{clip_to_bytes, frame_to_ppm, Origin, Task};
use mixedit_core::trainer::{Corpus, RunDir};
use mixedit_core::{Error, Result};

const CONFIG_FILE: &str = "config.toml";

#[derive(Parser, Debug)]
#[command(name = "mixedit", version, about = "Train and evaluate a toy instruction-driven image/video editing model")]
struct Cli {
    /// Run directory; every other path is relative to it.
    #[arg(long, global = true, default_value = ".")]
    run_dir: PathBuf,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file (default: config.toml in the run directory, else built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the train and held-out manifests.
    GenData,
    /// Train (or resume) through the curriculum.
    Train {
        /// Stop after this many total steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Edit one held-out sample and write the decoded clip.
    Sample(SampleArgs),
    /// Score a checkpoint on the held-out split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Held-out samples per (task, origin) pool; default all.
        #[arg(long)]
        per_pool: Option<usize>,
    },
    /// Run the component ablation table and mixing-ratio sweep.
    Ablate {
        /// Run the token-noise direction check instead.
        #[arg(long)]
        noise_check: bool,
    },
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "recolor_object")]
    task: String,
    #[arg(long, default_value = "video")]
    origin: String,
    /// Index within the held-out pool.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

fn resolve(run_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        run_dir.join(p)
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(&resolve(&cli.run_dir, p))?,
        None => {
            let p = cli.run_dir.join(CONFIG_FILE);
            if p.exists() {
                RunConfig::load(&p)?
            } else {
                RunConfig::default()
            }
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = resolve(&cli.run_dir, Path::new(&cfg.output_dir));
    fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_checkpoint(cli: &Cli, path: Option<&PathBuf>) -> Result<Checkpoint> {
    let dir = match path {
        Some(p) => resolve(&cli.run_dir, p),
        None => checkpoint::latest(&cli.run_dir)?.ok_or_else(|| Error::Checkpoint {
            path: checkpoint::checkpoints_dir(&cli.run_dir),
            detail: "no checkpoint found; run `train` first".into(),
        })?,
    };
    checkpoint::load(&dir)
}

fn gen_data(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cli.run_dir).map_err(|source| Error::Io {
        path: cli.run_dir.clone(),
        source,
    })?;
    let corpus = Corpus::generate(cfg)?;
    corpus.save(&cli.run_dir)?;
    write(&cli.run_dir.join(CONFIG_FILE), cfg.to_toml_string()?)?;
    println!(
        "wrote {} training and {} held-out entries to {}",
        corpus.train.entries.len(),
        corpus.heldout.entries.len(),
        cli.run_dir.join("data").display()
    );
    Ok(())
}

fn train(cli: &Cli, cfg: &RunConfig, steps: Option<u64>) -> Result<()> {
    let run = RunDir::new(&cli.run_dir);
    let t = run.train(cfg, steps)?;
    println!(
        "trained to step {} of {}; log {}",
        t.step,
        t.total_steps(),
        run.log_path().display()
    );
    Ok(())
}

fn sample(cli: &Cli, cfg: &RunConfig, a: &SampleArgs) -> Result<()> {
    let ckpt = load_checkpoint(cli, a.checkpoint.as_ref())?;
    let pipe = ckpt.pipeline()?;
    let task: Task = a.task.parse()?;
    let origin: Origin = a.origin.parse()?;
    let corpus = Corpus::load(&cli.run_dir)?;
    let pool = corpus.heldout_samples(&[task], &[origin], a.index + 1)?;
    let s = pool.get(a.index).ok_or_else(|| {
        Error::Data(format!("held-out pool {task} {origin} has {} samples, index {} requested", pool.len(), a.index))
    })?;
    let out = edit(&pipe, &ckpt.params, s, &ckpt.meta.config.sampler_config())?;
    let p = psnr(&out, &s.target)?;
    let dir = output_dir(cli, cfg)?.join("samples");
    fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    let stem = format!("{task}_{origin}_{}", a.index);
    write(&dir.join(format!("{stem}.raw")), clip_to_bytes(&out))?;
    for f in 0..out.frames {
        write(&dir.join(format!("{stem}_f{f}.ppm")), frame_to_ppm(&out, f))?;
    }
    println!("{stem} \"{}\" psnr_db {p:.4} -> {}", s.instruction, dir.join(format!("{stem}.raw")).display());
    Ok(())
}

fn eval(cli: &Cli, cfg: &RunConfig, ck: Option<&PathBuf>, per_pool: Option<usize>) -> Result<()> {
    let ckpt = load_checkpoint(cli, ck)?;
    let ccfg = &ckpt.meta.config;
    let pipe = ckpt.pipeline()?;
    let corpus = Corpus::load(&cli.run_dir)?;
    let samples = corpus.heldout_samples(
        &ccfg.task_list()?,
        &cfg.eval.origin_list()?,
        per_pool.unwrap_or(usize::MAX),
    )?;
    let reports = evaluate(&pipe, &ckpt.params, &samples, &ccfg.sampler_config(), cfg.eval.threshold_db)?;
    let b = task_sr(&reports, cfg.eval.threshold_db)?;
    let dir = output_dir(cli, cfg)?;
    write(&dir.join("eval_samples.csv"), samples_csv(&reports))?;
    write(&dir.join("eval_tasks.csv"), tasks_csv(&b))?;
    let mean = reports.iter().map(|r| r.psnr).sum::<f64>() / reports.len() as f64;
    let summary = format!(
        "checkpoint_step {}\nsamples {}\nmean_psnr_db {mean:.6}\nthreshold_db {}\ntask_sr {:.6}\n",
        ckpt.meta.step,
        reports.len(),
        b.threshold_db,
        b.task_sr
    );
    write(&dir.join("eval_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn ablate(cli: &Cli, cfg: &RunConfig, noise_check: bool) -> Result<()> {
    let corpus = Corpus::load(&cli.run_dir)?;
    let dir = output_dir(cli, cfg)?;
    if noise_check {
        let out = noise_direction(cfg, &corpus, |o| {
            println!(
                "seed {} dynamics_error noise {:.6} no_noise {:.6}",
                o.seed, o.with_noise, o.without_noise
            )
        })?;
        write(&dir.join("noise_check.csv"), noise_csv(&out))?;
        let held = out.iter().filter(|o| o.noise_holds()).count();
        println!("noise no worse in {held} of {} seeds", out.len());
    } else {
        let rows = ablation_matrix(cfg, &corpus, |r| println!("{r}"))?;
        write(&dir.join("ablation.csv"), ablation_csv(&rows))?;
        println!("{} rows -> {}", rows.len(), dir.join("ablation.csv").display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::GenData => gen_data(cli, &cfg),
        Cmd::Train { steps } => train(cli, &cfg, *steps),
        Cmd::Sample(a) => sample(cli, &cfg, a),
        Cmd::Eval { checkpoint, per_pool } => eval(cli, &cfg, checkpoint.as_ref(), *per_pool),
        Cmd::Ablate { noise_check } => ablate(cli, &cfg, *noise_check),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
