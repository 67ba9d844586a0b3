//! The six subcommands as library functions.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, TaskSpec};
use super::dataset::{read_dataset, DatasetHeader, DatasetWriter};
use super::pipeline::{make_record, par_map, run_rng, simulate_run, Run, Stream};
use super::report::{self, Table};
use crate::bayes;
use crate::dataprep::Normalizer;
use crate::error::{Error, IoContext, Result};
use crate::fusenet::checkpoint::{load_network, load_trainer, save_network, save_trainer};
use crate::fusenet::{AttentionRecord, EmbeddingConfig, FusionNet, LossPoint, TrainSample, Trainer};
use crate::linalg::State;
use crate::mb::FusionOutput;
use crate::metrics::{gospa, nll, tune_ppp, MetricReport, PppFloor, TuningCase};
use crate::tpmb::estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Transformer,
    Bayesian,
    Both,
}

impl Method {
    pub fn transformer(self) -> bool {
        matches!(self, Method::Transformer | Method::Both)
    }

    pub fn bayesian(self) -> bool {
        matches!(self, Method::Bayesian | Method::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn stream(self) -> Stream {
        match self {
            Split::Train => Stream::Train,
            Split::Validation => Stream::Validation,
            Split::Test => Stream::Test,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(name: &str) -> Result<Self> {
        match name {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Format {
                what: "dataset",
                detail: format!("unknown stream {other:?}"),
            }),
        }
    }
}

/// Refuse to clobber `path` unless `force` is set.
pub fn check_target(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).io_context(|| format!("creating {}", dir.display()))
}

pub fn build_net(cfg: &ExperimentConfig, spec: &TaskSpec, seed: u64) -> Result<FusionNet> {
    let mut emb = EmbeddingConfig::new(spec.input_dim(), spec.model.horizon, spec.model.sensors.len());
    emb.model_dim = cfg.model_dim;
    FusionNet::new(emb, cfg.network.clone(), seed)
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub seed: u64,
    pub split: Split,
    /// Defaults to the protocol size of `split`.
    pub groups: Option<usize>,
    pub out: PathBuf,
    pub resume: bool,
    pub force: bool,
}

/// Stream `groups * group_size` records to a dataset file; returns the record
/// count.
pub fn cmd_generate(cfg: &ExperimentConfig, opts: &GenerateOptions) -> Result<u64> {
    let spec = cfg.task_spec()?;
    let groups = opts.groups.unwrap_or(match opts.split {
        Split::Train => cfg.protocol.train_groups,
        Split::Validation | Split::Test => cfg.protocol.validation_groups,
    });
    let group_size = cfg.protocol.group_size.max(1);
    let header = DatasetHeader {
        spec: spec.clone(),
        seed: opts.seed.to_string(),
        stream: opts.split.name().into(),
        group_size,
    };
    let mut w = if opts.resume && opts.out.exists() {
        DatasetWriter::resume(&opts.out, header)?
    } else {
        check_target(&opts.out, opts.force)?;
        DatasetWriter::create(&opts.out, header)?
    };
    let first_group = (w.records / group_size as u64) as usize;
    for g in first_group..groups {
        let start = (g * group_size) as u64;
        let recs = par_map(group_size, |k| {
            make_record(&spec, opts.seed, opts.split.stream(), start + k as u64)
        })
        .map_err(|e| e.context(format!("group {g}")))?;
        for r in &recs {
            w.push(r).map_err(|e| e.context(format!("group {g}")))?;
        }
        w.flush().map_err(|e| e.context(format!("group {g}")))?;
    }
    Ok(w.records)
}

/// Load a dataset as normalised training samples.
pub fn load_samples(path: &Path) -> Result<(DatasetHeader, Vec<TrainSample>)> {
    let (header, records) = read_dataset(path)?;
    let samples = records.iter().map(|r| r.sample()).collect::<Result<Vec<_>>>()?;
    Ok((header, samples))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub dataset: PathBuf,
    pub validation: Option<PathBuf>,
    /// Output directory for `model.ckpt`, `trainer.ckpt` and `loss.csv`.
    pub out: PathBuf,
    pub resume: bool,
    pub force: bool,
    /// Steps between checkpoints; 0 saves only at the end.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<LossPoint>,
    pub validation: Vec<(usize, f64)>,
}

pub fn cmd_train(cfg: &ExperimentConfig, opts: &TrainOptions, mut log: impl FnMut(&str)) -> Result<TrainReport> {
    let (header, data) = load_samples(&opts.dataset)?;
    let validation = match &opts.validation {
        Some(p) => Some(load_samples(p)?.1),
        None => None,
    };
    ensure_dir(&opts.out)?;
    let model_path = opts.out.join("model.ckpt");
    let trainer_path = opts.out.join("trainer.ckpt");
    let loss_path = opts.out.join("loss.csv");
    let val_path = opts.out.join("validation.csv");
    let mut trainer = if opts.resume {
        let mut t = load_trainer(&trainer_path)?;
        t.cfg.steps = cfg.training.steps;
        log(&format!("resumed at step {} with learning rate {}", t.step, t.lr));
        t
    } else {
        check_target(&model_path, opts.force)?;
        let net = build_net(cfg, &header.spec, cfg.training.seed)?;
        Trainer::new(net, cfg.training.clone())?
    };
    if trainer.net.emb.input_dim != header.spec.input_dim() {
        return Err(Error::Config(format!(
            "network expects {}-dimensional inputs, dataset has {}",
            trainer.net.emb.input_dim,
            header.spec.input_dim()
        )));
    }
    let open = |path: &Path, header: &str| -> Result<std::fs::File> {
        let append = opts.resume && path.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .io_context(|| format!("opening {}", path.display()))?;
        if !append {
            writeln!(f, "{header}")?;
        }
        Ok(f)
    };
    let mut loss_csv = std::io::BufWriter::new(open(&loss_path, "step,loss,lr")?);
    let mut val_csv = open(&val_path, "step,validation_loss")?;
    let mut val_points = Vec::new();
    let every = opts.checkpoint_every;
    let mut last_lr = trainer.lr;
    let curve = trainer.run(&data, |t, p| {
        writeln!(loss_csv, "{},{},{}", p.step, p.loss, p.lr)?;
        if t.lr != last_lr {
            log(&format!("step {}: learning rate {} -> {}", p.step, last_lr, t.lr));
            last_lr = t.lr;
        }
        if every > 0 && p.step % every == 0 {
            loss_csv.flush()?;
            save_trainer(&trainer_path, t)?;
            save_network(&model_path, &t.net)?;
            if let Some(v) = &validation {
                let l = t.mean_loss(v)?;
                writeln!(val_csv, "{},{}", p.step, l)?;
                val_points.push((p.step, l));
                log(&format!("step {}: train {} validation {}", p.step, p.loss, l));
            } else {
                log(&format!("step {}: train {}", p.step, p.loss));
            }
        }
        Ok(())
    })?;
    loss_csv.flush()?;
    save_trainer(&trainer_path, &trainer)?;
    save_network(&model_path, &trainer.net)?;
    Ok(TrainReport {
        curve,
        validation: val_points,
    })
}

/// Outputs of both methods on one run.
#[derive(Debug, Clone, Default)]
pub struct Fused {
    pub transformer: Option<(FusionOutput, AttentionRecord)>,
    pub bayesian: Option<FusionOutput>,
}

pub fn fuse_run(
    run: &Run,
    spec: &TaskSpec,
    cfg: &ExperimentConfig,
    net: Option<&FusionNet>,
    method: Method,
) -> Result<Fused> {
    let mut out = Fused::default();
    if method.transformer() {
        let net = net.ok_or_else(|| Error::InvalidArgument("transformer fusion needs a checkpoint".into()))?;
        let seq = run.sequence(spec)?;
        let norm = Normalizer::from_bounds(run.bounds)?;
        out.transformer = Some(net.predict(&seq, &norm)?);
    }
    if method.bayesian() {
        let fused = bayes::fuse(&run.current(spec)?, &cfg.fusion)?;
        out.bayesian = Some(fused.mb);
    }
    Ok(out)
}

fn load_net_for(method: Method, checkpoint: Option<&Path>, spec: &TaskSpec) -> Result<Option<FusionNet>> {
    if !method.transformer() {
        return Ok(None);
    }
    let path = checkpoint.ok_or_else(|| Error::InvalidArgument("transformer fusion needs --checkpoint".into()))?;
    let net = load_network(path)?;
    if net.emb.input_dim != spec.input_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {}-dimensional inputs, task produces {}",
            net.emb.input_dim,
            spec.input_dim()
        )));
    }
    Ok(Some(net))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunScore {
    pub gospa: MetricReport,
    pub nll: MetricReport,
    pub exact: bool,
    pub estimates: usize,
}

/// Largest existence probability scored by the NLL. Local filters prune
/// misdetection hypotheses, so a track can report existence exactly 1 and a
/// single spurious copy would make every mean infinite.
pub const NLL_EXISTENCE_CAP: f64 = 1.0 - 1e-12;

pub fn capped(out: &FusionOutput) -> FusionOutput {
    let mut c = out.clone();
    for b in &mut c.components {
        b.existence = b.existence.min(NLL_EXISTENCE_CAP);
    }
    c
}

pub fn score(
    out: &FusionOutput,
    threshold: f64,
    truth: &[State],
    floor: &PppFloor,
    cfg: &ExperimentConfig,
) -> Result<RunScore> {
    let est: Vec<State> = out.extract(threshold).into_iter().map(|e| e.state).collect();
    let g = gospa(&est, truth, &cfg.gospa)?;
    let n = nll(&capped(out), floor, truth)?;
    Ok(RunScore {
        gospa: g,
        nll: n.report,
        exact: n.exact,
        estimates: est.len(),
    })
}

fn mean_report(rows: &[MetricReport]) -> MetricReport {
    let n = rows.len().max(1) as f64;
    let mut m = MetricReport::default();
    for r in rows {
        m.total += r.total / n;
        m.localization += r.localization / n;
        m.missed += r.missed / n;
        m.false_detection += r.false_detection / n;
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: &'static str,
    pub ppp_intensity: f64,
    pub gospa: MetricReport,
    pub nll: MetricReport,
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub seed: u64,
    pub runs: Option<usize>,
    pub method: Method,
    pub checkpoint: Option<PathBuf>,
    /// Directory for `results.csv`, `summary.csv` and `ppp.csv`.
    pub out: PathBuf,
    pub force: bool,
}

/// Monte Carlo evaluation. The Poisson floor of each method is tuned on a
/// separate stream of runs before scoring.
pub fn cmd_evaluate(cfg: &ExperimentConfig, opts: &EvaluateOptions) -> Result<Vec<MethodSummary>> {
    let spec = cfg.task_spec()?;
    let net = load_net_for(opts.method, opts.checkpoint.as_deref(), &spec)?;
    ensure_dir(&opts.out)?;
    let results_path = opts.out.join("results.csv");
    check_target(&results_path, opts.force)?;
    let simulate = |stream: Stream, i: usize| -> Result<(Run, Fused)> {
        let mut rng = run_rng(opts.seed, stream, i as u64);
        let run = simulate_run(&spec, &mut rng)?;
        let fused = fuse_run(&run, &spec, cfg, net.as_ref(), opts.method)?;
        Ok((run, fused))
    };
    let tuning = par_map(cfg.protocol.tuning_runs, |i| {
        simulate(Stream::Tuning, i).map_err(|e| e.context(format!("tuning run {i}")))
    })?;
    let methods: Vec<(&'static str, f64)> = [
        (opts.method.transformer(), "transformer", spec.transformer_threshold),
        (opts.method.bayesian(), "bayesian", spec.bayes_threshold),
    ]
    .into_iter()
    .filter(|(on, _, _)| *on)
    .map(|(_, name, thr)| (name, thr))
    .collect();
    let pick = |f: &Fused, name: &str| -> FusionOutput {
        match name {
            "transformer" => f.transformer.as_ref().map(|t| t.0.clone()).unwrap_or_default(),
            _ => f.bayesian.clone().unwrap_or_default(),
        }
    };
    let mut intensities = Vec::new();
    for (name, _) in &methods {
        let cases: Vec<TuningCase> = tuning
            .iter()
            .map(|(run, f)| TuningCase {
                fused: capped(&pick(f, name)),
                truth: run.truth.clone(),
                area: run.area(),
            })
            .collect();
        let rho = if cases.is_empty() {
            cfg.ppp_search.lower
        } else {
            tune_ppp(&cases, &cfg.ppp_search)?
        };
        intensities.push(rho);
    }
    drop(tuning);
    let runs = opts.runs.unwrap_or(cfg.protocol.mc_runs);
    let scored = par_map(runs, |i| {
        let (run, f) = simulate(Stream::Test, i).map_err(|e| e.context(format!("run {i}")))?;
        methods
            .iter()
            .zip(&intensities)
            .map(|((name, thr), rho)| {
                let floor = PppFloor {
                    intensity: *rho,
                    area: run.area(),
                };
                score(&pick(&f, name), *thr, &run.truth, &floor, cfg)
                    .map(|s| (s, run.truth.len()))
                    .map_err(|e| e.context(format!("run {i}, {name}")))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut t = Table::create(&results_path, &report::RESULT_HEADER)?;
    for (i, per) in scored.iter().enumerate() {
        for ((name, _), (s, n_truth)) in methods.iter().zip(per) {
            report::write_result(
                &mut t,
                spec.scenario,
                spec.task,
                name,
                i,
                &s.gospa,
                &s.nll,
                s.exact,
                s.estimates,
                *n_truth,
            )?;
        }
    }
    t.finish()?;
    let mut ppp = Table::create(&opts.out.join("ppp.csv"), &["method", "intensity"])?;
    let mut summaries = Vec::new();
    for (m, ((name, _), rho)) in methods.iter().zip(&intensities).enumerate() {
        let g: Vec<_> = scored.iter().map(|p| p[m].0.gospa).collect();
        let n: Vec<_> = scored.iter().map(|p| p[m].0.nll).collect();
        ppp.row([name.to_string(), rho.to_string()])?;
        summaries.push(MethodSummary {
            method: name,
            ppp_intensity: *rho,
            gospa: mean_report(&g),
            nll: mean_report(&n),
        });
    }
    ppp.finish()?;
    let table: Vec<_> = summaries
        .iter()
        .map(|s| (s.method, report::summary_values(&s.gospa, &s.nll)))
        .collect();
    report::write_summary(&opts.out.join("summary.csv"), &table)?;
    Ok(summaries)
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub seed: u64,
    pub runs: usize,
    pub method: Method,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
}

/// Local filter estimates and ground truth for `runs` test-stream runs.
pub fn cmd_filter(cfg: &ExperimentConfig, opts: &SimulateOptions) -> Result<()> {
    let spec = cfg.task_spec()?;
    ensure_dir(&opts.out)?;
    let local_path = opts.out.join("local_estimates.csv");
    check_target(&local_path, opts.force)?;
    let runs = par_map(opts.runs, |i| {
        simulate_run(&spec, &mut run_rng(opts.seed, Stream::Test, i as u64)).map_err(|e| e.context(format!("run {i}")))
    })?;
    let mut local = Table::create(&local_path, &report::LOCAL_HEADER)?;
    let mut truth = Table::create(&opts.out.join("truth.csv"), &report::TRUTH_HEADER)?;
    for (i, run) in runs.iter().enumerate() {
        for (s, l) in run.locals.iter().enumerate() {
            report::write_local(&mut local, i, s, &estimate(l, &spec.filter))?;
        }
        report::write_truth(&mut truth, i, &run.truth)?;
    }
    local.finish()?;
    truth.finish()
}

/// Fused multi-Bernoulli densities for `runs` test-stream runs.
pub fn cmd_fuse(cfg: &ExperimentConfig, opts: &SimulateOptions) -> Result<()> {
    let spec = cfg.task_spec()?;
    let net = load_net_for(opts.method, opts.checkpoint.as_deref(), &spec)?;
    ensure_dir(&opts.out)?;
    let fused_path = opts.out.join("fused.csv");
    check_target(&fused_path, opts.force)?;
    let outputs = par_map(opts.runs, |i| {
        let run = simulate_run(&spec, &mut run_rng(opts.seed, Stream::Test, i as u64))?;
        let f = fuse_run(&run, &spec, cfg, net.as_ref(), opts.method).map_err(|e| e.context(format!("run {i}")))?;
        Ok((run.truth, f))
    })?;
    let mut fused = Table::create(&fused_path, &report::FUSED_HEADER)?;
    let mut truth = Table::create(&opts.out.join("truth.csv"), &report::TRUTH_HEADER)?;
    for (i, (t, f)) in outputs.iter().enumerate() {
        if let Some((o, _)) = &f.transformer {
            report::write_fused(&mut fused, i, "transformer", o)?;
        }
        if let Some(o) = &f.bayesian {
            report::write_fused(&mut fused, i, "bayesian", o)?;
        }
        report::write_truth(&mut truth, i, t)?;
    }
    fused.finish()?;
    truth.finish()
}

/// Which run `cmd_dump` visualises.
#[derive(Debug, Clone)]
pub enum DumpSource {
    /// Run `index` of the test stream under the command-line seed.
    Simulated { seed: u64, index: u64 },
    /// Record `index` of a dataset file, regenerated from its stored seed.
    Dataset { path: PathBuf, index: u64 },
}

#[derive(Debug, Clone)]
pub struct DumpOptions {
    pub source: DumpSource,
    pub method: Method,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
}

/// Plot data for one run: inputs, local estimates, truth, fused components
/// and the decoder's cross-attention weights.
pub fn cmd_dump(cfg: &ExperimentConfig, opts: &DumpOptions) -> Result<()> {
    let (spec, mut rng, index) = match &opts.source {
        DumpSource::Simulated { seed, index } => (cfg.task_spec()?, run_rng(*seed, Stream::Test, *index), *index),
        DumpSource::Dataset { path, index } => {
            let (header, records) = read_dataset(path)?;
            let rec = records
                .get(*index as usize)
                .ok_or_else(|| Error::InvalidArgument(format!("dataset has {} records", records.len())))?;
            let split = Split::parse(&header.stream)?;
            (header.spec, run_rng(rec.seed, split.stream(), rec.index), rec.index)
        }
    };
    let net = load_net_for(opts.method, opts.checkpoint.as_deref(), &spec)?;
    let run = simulate_run(&spec, &mut rng)?;
    let fused = fuse_run(&run, &spec, cfg, net.as_ref(), opts.method)?;
    ensure_dir(&opts.out)?;
    check_target(&opts.out.join("fused.csv"), opts.force)?;
    let i = index as usize;
    let mut inputs = Table::create(&opts.out.join("inputs.csv"), &report::INPUT_HEADER)?;
    report::write_inputs(&mut inputs, &run.sequence(&spec)?)?;
    inputs.finish()?;
    let mut local = Table::create(&opts.out.join("local_estimates.csv"), &report::LOCAL_HEADER)?;
    for (s, l) in run.locals.iter().enumerate() {
        report::write_local(&mut local, i, s, &estimate(l, &spec.filter))?;
    }
    local.finish()?;
    let mut truth = Table::create(&opts.out.join("truth.csv"), &report::TRUTH_HEADER)?;
    report::write_truth(&mut truth, i, &run.truth)?;
    truth.finish()?;
    let mut out = Table::create(&opts.out.join("fused.csv"), &report::FUSED_HEADER)?;
    let mut att = Table::create(&opts.out.join("attention.csv"), &report::ATTENTION_HEADER)?;
    if let Some((o, a)) = &fused.transformer {
        report::write_fused(&mut out, i, "transformer", o)?;
        report::write_attention(&mut att, a)?;
    }
    if let Some(o) = &fused.bayesian {
        report::write_fused(&mut out, i, "bayesian", o)?;
    }
    out.finish()?;
    att.finish()
}
