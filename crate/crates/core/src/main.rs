use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use oodkit::detectors::{fit, parse_detector_list, read_state_file, write_state_file, DetectorSpec, Hyperparams};
use oodkit::eds::{
    generate_synthetic, read_eds_file, read_head_file, sample_around_head, write_eds_file, write_head_file,
    EmbeddingSet, ModelHead, SyntheticSpec,
};
use oodkit::harness::{effective_threads, emit_report, run_experiment, EvalReport, ExperimentConfig, ReportFormat};
use oodkit::numeric::RowMatrix;

#[derive(Parser)]
#[command(name = "oodkit", version, about = "Post-hoc OOD detectors over classifier embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-class dataset, head, manifest and experiment config.
    GenSynthetic(GenArgs),
    /// Fit detectors on an ID training dump and save their states.
    Fit(FitArgs),
    /// Score a dump with a saved detector state.
    Score(ScoreArgs),
    /// Run an experiment config and write the JSON report.
    Eval(EvalArgs),
    /// Render a JSON report as markdown, CSV or JSON.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    /// Centroid distance from the origin.
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Noise level of each covariate-shifted dump (repeatable).
    #[arg(long = "covariate-noise")]
    covariate_noise: Vec<f64>,
    /// Multiply the head (and stored logits) by this factor to miscalibrate it.
    #[arg(long, default_value_t = 1.0)]
    head_scale: f64,
    /// Classes held out as semantic OOD in the generated experiment config.
    #[arg(long, value_delimiter = ',', default_value = "3,4")]
    held_out: Vec<u32>,
    /// Number of ensemble members (perturbed heads) to dump; 0 for none.
    #[arg(long, default_value_t = 0)]
    members: usize,
    #[arg(long, default_value_t = 0.05)]
    member_jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DetectorArgs {
    /// Comma-separated detector list, e.g. msp,maha,vim.
    #[arg(long, default_value = "msp,maha,react,gradnorm,mls,klm,knn,vim,gen")]
    detectors: String,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    vim_dim: Option<usize>,
    #[arg(long)]
    react_q: Option<f64>,
    #[arg(long)]
    gen_gamma: Option<f64>,
}

impl DetectorArgs {
    fn hyperparams(&self) -> Hyperparams {
        let mut p = Hyperparams::default();
        p.knn_k = self.knn_k.or(p.knn_k);
        p.vim_dim = self.vim_dim.or(p.vim_dim);
        if let Some(q) = self.react_q {
            p.react_q = q;
        }
        if let Some(g) = self.gen_gamma {
            p.gen_gamma = g;
        }
        p
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    detectors: DetectorArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    head: Option<PathBuf>,
    /// Directory receiving one `<detector>.sta` per detector.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// One score per line; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Report path; defaults to `<output_dir>/report.json`, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "md")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn jittered(head: &ModelHead, jitter: f64, seed: u64) -> Result<ModelHead> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = || -> f64 { StandardNormal.sample(&mut rng) };
    let w: Vec<f64> = head.weight().as_slice().iter().map(|x| x + jitter * x.abs().max(1.0) * noise()).collect();
    let b: Vec<f64> = head.bias().iter().map(|x| x + jitter * x.abs().max(1.0) * noise()).collect();
    Ok(ModelHead::new(RowMatrix::from_vec(head.c(), head.d(), w), b)?)
}

fn gen_synthetic(args: &GenArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let spec = SyntheticSpec {
        classes: args.classes,
        dim: args.dim,
        per_class: args.train_per_class,
        centroid_scale: args.separation,
        noise_scale: args.noise,
        seed: args.seed,
    };
    let (train, clean_head) = generate_synthetic(&spec)?;
    let head = clean_head.scaled(args.head_scale)?;
    let seed_for = |offset: u64| args.seed.wrapping_mul(1_000_003).wrapping_add(offset);
    let test = sample_around_head(&clean_head, args.test_per_class, args.noise, seed_for(1))?;
    let covariate: Vec<EmbeddingSet> = args
        .covariate_noise
        .iter()
        .enumerate()
        .map(|(i, &s)| sample_around_head(&clean_head, args.test_per_class, s, seed_for(2 + i as u64)))
        .collect::<Result<_, _>>()?;

    let retarget = |set: &EmbeddingSet| set.with_head_logits(&head);
    write_eds_file(&retarget(&train)?, args.out.join("id_train.eds"))?;
    write_eds_file(&retarget(&test)?, args.out.join("id_test.eds"))?;
    write_head_file(&head, args.out.join("head.head"))?;
    let mut cov_names = Vec::new();
    for (i, set) in covariate.iter().enumerate() {
        let name = format!("covariate_{i}.eds");
        write_eds_file(&retarget(set)?, args.out.join(&name))?;
        cov_names.push(name);
    }

    let mut test_members = Vec::new();
    let mut cov_members: Vec<Vec<String>> = vec![Vec::new(); covariate.len()];
    for m in 0..args.members {
        let member_head = jittered(&head, args.member_jitter, seed_for(1000 + m as u64))?;
        let name = format!("id_test_m{m}.eds");
        write_eds_file(&test.with_head_logits(&member_head)?, args.out.join(&name))?;
        test_members.push(name);
        for (i, set) in covariate.iter().enumerate() {
            let name = format!("covariate_{i}_m{m}.eds");
            write_eds_file(&set.with_head_logits(&member_head)?, args.out.join(&name))?;
            cov_members[i].push(name);
        }
    }

    let mut manifest = serde_json::json!({
        "id_train": "id_train.eds",
        "id_test": "id_test.eds",
        "covariate_ood": cov_names,
        "head": "head.head",
        "metadata": {
            "generator": "synthetic",
            "seed": args.seed.to_string(),
            "head_scale": args.head_scale.to_string(),
        },
    });
    if args.members > 0 {
        manifest["id_test_members"] = serde_json::json!(test_members);
        manifest["covariate_ood_members"] = serde_json::json!(cov_members);
    }
    fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let config = serde_json::json!({
        "manifest": "manifest.json",
        "detectors": ["msp", "maha", "react", "gradnorm", "mls", "klm", "knn", "vim", "gen"],
        "splits": [{"id": "synthetic", "held_out": args.held_out}],
        "seeds": [0],
        "ensemble": args.members > 0,
    });
    fs::write(args.out.join("experiment.json"), serde_json::to_string_pretty(&config)?)?;
    log::info!("wrote synthetic dataset to {}", args.out.display());
    Ok(())
}

fn fit_cmd(args: &FitArgs) -> Result<()> {
    let kinds = parse_detector_list(&args.detectors.detectors)?;
    let params = args.detectors.hyperparams();
    let train = read_eds_file(&args.train).with_context(|| format!("reading {}", args.train.display()))?;
    let head = args.head.as_ref().map(read_head_file).transpose()?;
    fs::create_dir_all(&args.out)?;
    for kind in kinds {
        let state = fit(&DetectorSpec::with_params(kind, params), &train, head.as_ref())
            .with_context(|| format!("fitting {}", kind.name()))?;
        let path = args.out.join(format!("{}.sta", kind.name()));
        write_state_file(&state, &path)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn score_cmd(args: &ScoreArgs) -> Result<()> {
    let state = read_state_file(&args.state).with_context(|| format!("reading {}", args.state.display()))?;
    let input = read_eds_file(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let scores = state.score(&input)?;
    let mut text = String::with_capacity(scores.len() * 24);
    for s in scores {
        text.push_str(&format!("{s:?}\n"));
    }
    write_output(args.out.as_deref(), &text)
}

fn eval_cmd(args: &EvalArgs) -> Result<bool> {
    let config = ExperimentConfig::load(&args.config)?;
    let threads = effective_threads(config.threads, args.threads)?;
    log::info!("running with {threads} worker thread(s)");
    let report = run_experiment(&config, threads)?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|d| config.resolve(d).join("report.json")));
    write_output(out.as_deref(), &report.to_json())?;
    Ok(report.all_succeeded())
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let report = EvalReport::from_json(&text)?;
    write_output(args.out.as_deref(), &emit_report(&report, args.format))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a).map(|_| true),
        Command::Fit(a) => fit_cmd(a).map(|_| true),
        Command::Score(a) => score_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a),
        Command::Report(a) => report_cmd(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some cells failed; see the report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

