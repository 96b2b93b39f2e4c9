//! Command implementations behind the `sdkn` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sdkn::checkpoint::{Checkpoint, ModelState};
use sdkn::config::{ExperimentConfig, ModelConfig};
use sdkn::data::{generate, Dataset, Sidecar, Split};
use sdkn::metrics::{evaluate, export_activation_profiles, score, EvalReport, GridSpec};
use sdkn::model::{init_params, KrrModel, ModelGraph};
use sdkn::trainer::{train_from, EpochRecord, TrainState};
use sdkn::{Error, Result, SampleSet, SplitMix64, Tensor};

#[derive(Parser, Debug)]
#[command(name = "sdkn", version, about = "Structured deep kernel networks for Burgers closure terms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the DNS, filter and sample; writes dataset.bin and its JSON sidecar.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train (or fit) the configured model; `--checkpoint` resumes a run.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the trainer seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint on one dataset split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate activation-kernel layers before and after training.
    ExportActivations {
        /// Trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Initial checkpoint; defaults to checkpoint_init.bin beside `--checkpoint`.
        #[arg(long)]
        before: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => cmd_generate(&config, out.as_deref(), seed).map(|_| ()),
        Command::Train { config, dataset, out, seed, checkpoint } => {
            cmd_train(&config, &dataset, out.as_deref(), seed, checkpoint.as_deref()).map(|_| ())
        }
        Command::Evaluate { checkpoint, dataset, split, out } => {
            cmd_evaluate(&checkpoint, &dataset, split.into(), out.as_deref()).map(|_| ())
        }
        Command::ExportActivations { checkpoint, before, dataset, out, points } => {
            cmd_export_activations(&checkpoint, before.as_deref(), &dataset, out.as_deref(), points).map(|_| ())
        }
    }
}

fn out_dir(out: Option<&Path>, config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn cmd_generate(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<PathBuf> {
    let mut config = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        config.dataset.seed = s;
    }
    let dir = out_dir(out, &config)?;
    let (dataset, sidecar) = generate(&config.dataset)?;
    let path = dir.join("dataset.bin");
    dataset.write(&path, &sidecar)?;
    let [train, val, test] = sidecar.samples;
    println!(
        "train {train} val {val} test {test} samples (N_seq {}, dt_seq {}) -> {}",
        sidecar.n_seq,
        sidecar.dt_seq,
        path.display()
    );
    Ok(path)
}

/// Normalized split shaped for `graph` (flattened series when it has no GRU).
fn network_view(set: &SampleSet, sidecar: &Sidecar, graph: Option<&ModelGraph>) -> Result<SampleSet> {
    let normed = sidecar.normalizer.apply(set)?;
    let sequential = graph.is_some_and(|g| g.is_sequential());
    if sequential {
        return Ok(normed);
    }
    let shape = normed.inputs.shape();
    let flat = normed.inputs.reshape(&[shape[0], shape[1] * shape[2]])?;
    SampleSet::new(flat, normed.targets)
}

fn load_dataset(path: &Path) -> Result<(Dataset, Sidecar)> {
    let dataset = Dataset::read(path)?;
    let sidecar = Dataset::read_sidecar(path)?;
    if sidecar.n_seq != dataset.n_seq() || sidecar.samples[0] != dataset.train.len() {
        return Err(Error::format("dataset sidecar does not describe this dataset file"));
    }
    Ok((dataset, sidecar))
}

fn check_compatible(graph: Option<&ModelGraph>, dataset: &Dataset) -> Result<()> {
    if dataset.d_out() != 1 {
        return Err(Error::config(format!("dataset has d_out = {}, models predict 1", dataset.d_out())));
    }
    if let Some(g) = graph {
        let want = if g.is_sequential() { dataset.d_in() } else { dataset.n_seq() * dataset.d_in() };
        if g.d_in != want || g.d_out != dataset.d_out() {
            return Err(Error::config(format!(
                "model maps {} -> {} but the dataset provides {want} -> {} (N_seq {})",
                g.d_in,
                g.d_out,
                dataset.d_out(),
                dataset.n_seq()
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    model_kind: &'a str,
    param_count: usize,
    dataset_seed: u64,
    trainer_seed: Option<u64>,
    dataset_id: &'a str,
    model_id: String,
    epochs: usize,
    final_train_mse: Option<f64>,
    final_val_mse: Option<f64>,
    wall_seconds: f64,
}

fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_mse,val_mse,wall_seconds\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in trace {
        let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.lr, r.train_mse, opt(r.val_mse), opt(r.wall_seconds));
    }
    s
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Seeded subset of row indices, kept in ascending order.
fn subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = SplitMix64::new(seed).choose_distinct(n, k);
    idx.sort_unstable();
    idx
}

/// Inputs a kernel ridge model sees: flattened series or a network's features.
fn krr_inputs(model: &ModelConfig, set: &SampleSet, sidecar: &Sidecar) -> Result<Tensor> {
    match model {
        ModelConfig::Krr { features: Some(f), .. } => {
            let ck = Checkpoint::load(&f.checkpoint)?;
            let ModelState::Network { graph, state } = &ck.model else {
                return Err(Error::config("model.features.checkpoint must hold a network"));
            };
            let view = network_view(set, sidecar, Some(graph))?;
            graph.features(&state.params, &view.inputs, f.block)
        }
        _ => Ok(sidecar.normalizer.apply(set)?.flat_inputs()),
    }
}

pub fn cmd_train(
    config_path: &Path,
    dataset_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> Result<PathBuf> {
    let started = Instant::now();
    let mut config = ExperimentConfig::load(config_path)?;
    if let (Some(s), Some(t)) = (seed, config.trainer.as_mut()) {
        t.seed = s;
    }
    let dir = out_dir(out, &config)?;
    let (dataset, sidecar) = load_dataset(dataset_path)?;
    let graph = config.model.graph()?;
    check_compatible(graph.as_ref(), &dataset)?;
    let ck_path = dir.join("checkpoint.bin");

    let Some(graph) = graph else {
        let ModelConfig::Krr { kernel, lambda, max_centers, .. } = &config.model else {
            unreachable!("only kernel ridge models have no graph")
        };
        let x = krr_inputs(&config.model, &dataset.train, &sidecar)?;
        let y = sidecar.normalizer.apply(&dataset.train)?.targets;
        let idx = subset(x.shape()[0], *max_centers, seed.unwrap_or(0));
        let model = KrrModel::fit(*kernel, &x.gather_rows(&idx), &y.gather_rows(&idx), *lambda)?;
        let param_count = model.coefficients.len();
        let ck = Checkpoint { config: config.clone(), dataset_id: sidecar.dataset_id.clone(), model: ModelState::Krr(model) };
        ck.save(&ck_path)?;
        write_json(
            &dir.join("manifest.json"),
            &Manifest {
                model_kind: "krr",
                param_count,
                dataset_seed: config.dataset.seed,
                trainer_seed: seed,
                dataset_id: &sidecar.dataset_id,
                model_id: ck.model_id(),
                epochs: 0,
                final_train_mse: None,
                final_val_mse: None,
                wall_seconds: started.elapsed().as_secs_f64(),
            },
        )?;
        println!("fitted kernel ridge model on {} centers -> {}", idx.len(), ck_path.display());
        return Ok(ck_path);
    };

    let tc = config.trainer.clone().expect("validated: networks have a trainer section");
    let train = network_view(&dataset.train, &sidecar, Some(&graph))?;
    let val = match &dataset.val {
        Some(v) => Some(network_view(v, &sidecar, Some(&graph))?),
        None => None,
    };
    let mut state = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            match ck.model {
                ModelState::Network { graph: g, state } if g == graph => state,
                _ => return Err(Error::config("resume checkpoint does not match the configured model")),
            }
        }
        None => {
            let idx = subset(train.len(), config.init_samples, tc.seed.wrapping_add(1));
            let init_batch = train.batch(&idx).0;
            let params = init_params(&graph, tc.seed, &init_batch)?;
            let state = TrainState::new(params, &tc);
            Checkpoint::network(config.clone(), sidecar.dataset_id.clone(), graph.clone(), state.clone())
                .save(&dir.join("checkpoint_init.bin"))?;
            state
        }
    };
    let every = config.checkpoint_every;
    train_from(&graph, &mut state, &train, val.as_ref(), &tc, |s| {
        let r = s.trace.last().expect("an epoch just finished");
        eprintln!(
            "epoch {} lr {:e} train_mse {:.6e}{}",
            r.epoch,
            r.lr,
            r.train_mse,
            r.val_mse.map(|v| format!(" val_mse {v:.6e}")).unwrap_or_default()
        );
        if every > 0 && s.epoch % every == 0 && s.epoch < tc.epochs {
            Checkpoint::network(config.clone(), sidecar.dataset_id.clone(), graph.clone(), s.clone())
                .save(&dir.join(format!("checkpoint_epoch_{}.bin", s.epoch)))?;
        }
        Ok(())
    })?;
    fs::write(dir.join("trace.csv"), trace_csv(&state.trace))?;
    let last = state.trace.last().cloned();
    let ck = Checkpoint::network(config.clone(), sidecar.dataset_id.clone(), graph.clone(), state);
    ck.save(&ck_path)?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            model_kind: config.model.kind(),
            param_count: graph.count_parameters(),
            dataset_seed: config.dataset.seed,
            trainer_seed: Some(tc.seed),
            dataset_id: &sidecar.dataset_id,
            model_id: ck.model_id(),
            epochs: tc.epochs,
            final_train_mse: last.as_ref().map(|r| r.train_mse),
            final_val_mse: last.and_then(|r| r.val_mse),
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    )?;
    println!("trained {} parameters for {} epochs -> {}", graph.count_parameters(), tc.epochs, ck_path.display());
    Ok(ck_path)
}

pub fn cmd_evaluate(checkpoint: &Path, dataset_path: &Path, split: Split, out: Option<&Path>) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let (dataset, sidecar) = load_dataset(dataset_path)?;
    let set = dataset.split(split)?;
    let model_id = ck.model_id();
    let report = match &ck.model {
        ModelState::Network { graph, state } => {
            check_compatible(Some(graph), &dataset)?;
            let view = network_view(set, &sidecar, Some(graph))?;
            evaluate(graph, &state.params, &view, &model_id, &sidecar.dataset_id, split.name())?
        }
        ModelState::Krr(model) => {
            let x = krr_inputs(&ck.config.model, set, &sidecar)?;
            if x.shape()[1] != model.centers.shape()[1] {
                return Err(Error::config("kernel model inputs do not match this dataset"));
            }
            let y = sidecar.normalizer.apply(set)?.targets;
            score(&model.predict(&x)?, &y, &model_id, &sidecar.dataset_id, split.name())?
        }
    };
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir)?;
    }
    write_json(&dir.join(format!("eval_{}.json", split.name())), &report)?;
    let cc = report.cross_correlation.map(|c| c.to_string()).unwrap_or_else(|| "undefined".into());
    println!("{} mse {} cross_correlation {}", split.name(), report.mse, cc);
    Ok(report)
}

pub fn cmd_export_activations(
    checkpoint: &Path,
    before: Option<&Path>,
    dataset_path: &Path,
    out: Option<&Path>,
    points: usize,
) -> Result<Vec<PathBuf>> {
    let before_path = before
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.with_file_name("checkpoint_init.bin"));
    let after = Checkpoint::load(checkpoint)?;
    let before = Checkpoint::load(&before_path)?;
    let (ModelState::Network { graph, state: s_after }, ModelState::Network { graph: g_before, state: s_before }) =
        (&after.model, &before.model)
    else {
        return Err(Error::config("activation export needs two network checkpoints"));
    };
    if graph != g_before {
        return Err(Error::config("the two checkpoints have different architectures"));
    }
    let (dataset, sidecar) = load_dataset(dataset_path)?;
    check_compatible(Some(graph), &dataset)?;
    let train = network_view(&dataset.train, &sidecar, Some(graph))?;
    let profiles = export_activation_profiles(
        graph,
        &s_before.params,
        &s_after.params,
        &train.inputs,
        &GridSpec { points, range: None },
    )?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().map(|p| p.join("activations")).unwrap_or_else(|| PathBuf::from("activations")),
    };
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for p in &profiles {
        let path = dir.join(p.file_name());
        fs::write(&path, p.to_csv())?;
        written.push(path);
    }
    println!("wrote {} activation profiles to {}", written.len(), dir.display());
    Ok(written)
}
