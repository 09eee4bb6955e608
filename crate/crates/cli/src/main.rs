mod output;

use std::fs;
use std::io::{self, BufRead, IsTerminal};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use output::{read_provenance_input, Out};
use probekit::analysis::{
    concealment_report, data_efficiency_report, difficulty_control, difficulty_report, eval_report,
    layer_sweep_report, positional_report, score_distribution_report, step_trajectories,
    trajectory_report, RegimeThresholds, TrajectoryMode,
};
use probekit::baselines::{
    baseline_report, contrast_pairs_to_jsonl, parse_contrast_pairs, BaselineInputs, BaselineMethod,
};
use probekit::interventions::{
    evaluate_best_of_n, evaluate_interventions, evaluate_self_correction, read_outcomes,
    routing_report, ProblemGroup, RetryStrategy, Selector,
};
use probekit::probe::{
    data_efficiency_sweep, eval_probe, positional_auroc, train_probe, transfer_eval, EvalSetting,
    Position, PositionalMode, Probe, TrainConfig, EVAL_BOOTSTRAP,
};
use probekit::report::{render, Report, ReportFormat};
use probekit::synth::{self, BonSynthConfig, SignalLevel, SynthConfig, SynthRegime};
use probekit::text::{
    concealment_gap, parse_lexicon, unfaithful_region, TextConfig, DEFAULT_CONF_THRESHOLD,
    DEFAULT_SCORE_THRESHOLD, HEDGING_LEXICON,
};
use probekit::trace_store::{load_dataset, write_dataset, Dataset};

const ALL_FORMATS: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];
const TABLE_FORMATS: [ReportFormat; 2] = [ReportFormat::Csv, ReportFormat::Json];

#[derive(Parser, Debug)]
#[command(
    name = "probekit",
    version,
    about = "Linear error probes over stored reasoning-trace hidden states"
)]
struct Cli {
    /// Print machine-readable JSON summaries on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Output directory.
    #[arg(
        long,
        global = true,
        env = "PROBEKIT_OUT",
        default_value = "probekit-out"
    )]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset's manifest, blob and records.
    Validate { dataset: PathBuf },
    /// Generate a synthetic dataset with a planted error direction.
    Synth(SynthArgs),
    /// Layer sweep with cross-validation, then refit the best layer.
    Train(TrainArgs),
    /// Score a held-out or transfer dataset with a trained probe.
    Eval(EvalArgs),
    /// Compare the probe against output-side and unsupervised baselines.
    Baselines(BaselinesArgs),
    /// Text-only controls: concealment gap and the high-confidence error region.
    Text(TextArgs),
    /// Step-wise score trajectories and positional AUROCs.
    Steps(StepsArgs),
    /// Compare scores within problems that have both correct and wrong samples.
    Difficulty(DifficultyArgs),
    /// Best-of-N selection accuracy per selector and N.
    Bon(BonArgs),
    /// Self-correction strategies from recorded outcomes.
    Selfcorrect(SelfcorrectArgs),
    /// Error coverage when routing the top-scored fraction to a verifier.
    Route(RouteArgs),
    /// Re-render a saved report as CSV, JSON or SVG.
    Report(ReportArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum RegimeArg {
    FrontLoaded,
    Accumulating,
    None,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SignalArg {
    Trace,
    Problem,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the planted direction; defaults to 0 so train and held-out sets share it.
    #[arg(long, default_value_t = 0)]
    direction_seed: u64,
    /// Dataset directory, relative to --out unless absolute.
    #[arg(long, default_value = "dataset")]
    name: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 28)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 12)]
    planted_layer: usize,
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.4)]
    error_rate: f64,
    #[arg(long, value_enum, default_value = "front-loaded")]
    regime: RegimeArg,
    #[arg(long, default_value_t = 3)]
    steps_min: usize,
    #[arg(long, default_value_t = 5)]
    steps_max: usize,
    #[arg(long, default_value_t = 0.0)]
    text_leak: f64,
    #[arg(long, default_value_t = 1)]
    samples_per_problem: usize,
    #[arg(long, value_enum, default_value = "trace")]
    signal_level: SignalArg,
    /// Also write contrast_pairs.jsonl for the CCS baseline.
    #[arg(long)]
    contrast_pairs: bool,
    /// Truth offset carried by each contrast pair.
    #[arg(long, default_value_t = 0.25)]
    pair_signal: f64,
    #[arg(long, default_value_t = 1.0)]
    pair_noise: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Inverse L2 regularization strength.
    #[arg(long = "C", default_value_t = 0.1)]
    c: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitArgs {
    fn config(&self, layers: Option<Vec<usize>>) -> TrainConfig {
        TrainConfig {
            c: self.c,
            folds: self.folds,
            seed: self.seed,
            layers,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory; read from stdin when omitted.
    dataset: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
    /// Candidate layers (comma separated); all layers by default.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// `trace_last` or `step:N`.
    #[arg(long, default_value = "trace_last")]
    position: String,
    /// Model depth used for the depth fraction, when the dataset holds a layer subset.
    #[arg(long)]
    total_layers: Option<usize>,
    /// Training-set sizes for a data-efficiency sweep.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Probe file; read from stdin when omitted.
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Dataset to score; defaults to the probe's training dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Label the result as a cross-dataset transfer.
    #[arg(long)]
    transfer: bool,
    #[arg(long, default_value_t = EVAL_BOOTSTRAP)]
    n_boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BaselinesArgs {
    dataset: PathBuf,
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Methods to run (comma separated).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "probe,self_consistency,ccs,p_true,verbalized_confidence,seq_logprob"
    )]
    methods: Vec<String>,
    /// Contrast-pair JSONL for CCS.
    #[arg(long)]
    ccs_pairs: Option<PathBuf>,
    /// Labeled records used to fix the CCS sign.
    #[arg(long, default_value_t = 20)]
    calibration: usize,
    #[arg(long, default_value_t = 0.9)]
    min_coverage: f64,
    #[arg(long, default_value_t = EVAL_BOOTSTRAP)]
    n_boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TextArgs {
    dataset: PathBuf,
    #[arg(long)]
    probe: PathBuf,
    #[arg(long = "text-C", default_value_t = 1.0)]
    text_c: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Hedging lexicon, one phrase per line; built-in list by default.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CONF_THRESHOLD)]
    conf_threshold: u8,
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    score_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum StepModeArg {
    Reuse,
    PerStep,
}

#[derive(Args, Debug)]
struct StepsArgs {
    dataset: PathBuf,
    #[arg(long)]
    probe: PathBuf,
    #[arg(long, value_enum, default_value = "reuse")]
    mode: StepModeArg,
    #[arg(long, value_enum, default_value = "per-step")]
    positional_mode: StepModeArg,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = EVAL_BOOTSTRAP)]
    n_boot: usize,
}

#[derive(Args, Debug)]
struct DifficultyArgs {
    dataset: PathBuf,
    #[arg(long)]
    probe: PathBuf,
}

#[derive(Args, Debug)]
struct BonArgs {
    /// Candidate groups, one JSON object per line.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    groups: Option<PathBuf>,
    /// Use generated groups with a known score model.
    #[arg(long)]
    synthetic: bool,
    #[arg(long = "N", value_delimiter = ',', default_value = "1,2,4,8,12")]
    n: Vec<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "greedy,random,majority_vote,probe_min,oracle"
    )]
    selectors: Vec<String>,
    /// Score AUROC of the synthetic groups.
    #[arg(long, default_value_t = 0.95)]
    score_auroc: f64,
    #[arg(long, default_value_t = 200)]
    problems: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SelfcorrectArgs {
    /// Outcome JSONL written by the generation harness.
    #[arg(long)]
    outcomes: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "no_retry,always_retry,best_of_two,probe_triggered,oracle_triggered"
    )]
    strategies: Vec<String>,
    /// Also tabulate baseline against post accuracy per strategy and alpha.
    #[arg(long)]
    intervention_table: bool,
}

#[derive(Args, Debug)]
struct RouteArgs {
    dataset: PathBuf,
    #[arg(long)]
    probe: PathBuf,
    /// Fractions routed to the verifier.
    #[arg(long = "r", value_delimiter = ',', default_value = "0.1,0.2,0.3,0.5")]
    fractions: Vec<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Svg,
}

#[derive(Args, Debug)]
struct ReportArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let dir = cli.out.clone();
    let json = cli.json;
    let out = |name: &'static str| Out::new(dir.clone(), json, name, argv.clone());
    match cli.command {
        Command::Validate { dataset } => cmd_validate(out("validate")?, &dataset),
        Command::Synth(a) => cmd_synth(out("synth")?, a),
        Command::Train(a) => cmd_train(out("train")?, a),
        Command::Eval(a) => cmd_eval(out("eval")?, a),
        Command::Baselines(a) => cmd_baselines(out("baselines")?, a),
        Command::Text(a) => cmd_text(out("text")?, a),
        Command::Steps(a) => cmd_steps(out("steps")?, a),
        Command::Difficulty(a) => cmd_difficulty(out("difficulty")?, a),
        Command::Bon(a) => cmd_bon(out("bon")?, a),
        Command::Selfcorrect(a) => cmd_selfcorrect(out("selfcorrect")?, a),
        Command::Route(a) => cmd_route(out("route")?, a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Path argument, or the first non-empty line of stdin when piped.
fn path_or_stdin(arg: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    if let Some(p) = arg {
        return Ok(p);
    }
    let stdin = io::stdin();
    if stdin.is_terminal() {
        bail!("no {what} given and nothing piped on stdin");
    }
    for line in stdin.lock().lines() {
        let line = line.context("reading stdin")?;
        let t = line.trim();
        if !t.is_empty() {
            return Ok(PathBuf::from(t));
        }
    }
    bail!("no {what} given and stdin is empty")
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_probe(path: &Path) -> Result<Probe> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading probe {}", path.display()))?;
    Probe::from_json(&text).with_context(|| format!("parsing probe {}", path.display()))
}

fn parse_position(s: &str) -> Result<Position> {
    if s == "trace_last" {
        return Ok(Position::TraceLastToken);
    }
    s.strip_prefix("step:")
        .and_then(|i| i.parse().ok())
        .map(Position::StepEnd)
        .ok_or_else(|| anyhow!("position must be `trace_last` or `step:N`, got `{s}`"))
}

fn parse_list<T>(
    items: &[String],
    parse: impl Fn(&str) -> Option<T>,
    what: &str,
) -> Result<Vec<T>> {
    items
        .iter()
        .map(|s| parse(s.trim()).ok_or_else(|| anyhow!("unknown {what} `{s}`")))
        .collect()
}

fn fmt_metric(m: &probekit::numerics::MetricResult) -> String {
    match (m.ci_low, m.ci_high) {
        (Some(lo), Some(hi)) => format!("{:.4} [{lo:.4}, {hi:.4}]", m.auroc),
        _ => format!("{:.4}", m.auroc),
    }
}

fn cmd_validate(mut out: Out, path: &Path) -> Result<()> {
    out.input("dataset", path.display().to_string());
    let ds = load(path)?;
    let labels = ds.labels();
    let wrong = labels.iter().filter(|&&l| l).count();
    let summary = json!({
        "dataset": path.display().to_string(),
        "records": ds.len(),
        "wrong": wrong,
        "correct": ds.len() - wrong,
        "num_layers": ds.num_layers(),
        "hidden_dim": ds.hidden_dim(),
        "fingerprint": ds.fingerprint(),
    });
    let human = format!(
        "ok: {} records ({} wrong), {} layers x {} dims, fingerprint {}\n",
        ds.len(),
        wrong,
        ds.num_layers(),
        ds.hidden_dim(),
        ds.fingerprint()
    );
    out.finish("validate", summary, &human, false)
}

fn cmd_synth(mut out: Out, a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_records: a.n,
        n_layers: a.layers,
        hidden_dim: a.dim,
        planted_layer: a.planted_layer,
        offset_delta: a.delta,
        noise_sigma: a.sigma,
        error_rate: a.error_rate,
        regime: match a.regime {
            RegimeArg::FrontLoaded => SynthRegime::FrontLoaded,
            RegimeArg::Accumulating => SynthRegime::Accumulating,
            RegimeArg::None => SynthRegime::None,
        },
        steps_min: a.steps_min,
        steps_max: a.steps_max,
        text_leak: a.text_leak,
        seed: a.seed,
        direction_seed: a.direction_seed,
        samples_per_problem: a.samples_per_problem,
        signal_level: match a.signal_level {
            SignalArg::Trace => SignalLevel::Trace,
            SignalArg::Problem => SignalLevel::Problem,
        },
        ..SynthConfig::default()
    };
    let ds = synth::generate(&cfg)?;
    let target = if a.name.is_absolute() {
        a.name.clone()
    } else {
        out.dir.join(&a.name)
    };
    write_dataset(&ds, &target)?;
    out.record_output(&target);
    out.seed("seed", a.seed);
    out.seed("direction_seed", a.direction_seed);
    out.input("dataset", target.display().to_string());
    let mut cfg_json = serde_json::to_string_pretty(&cfg)?;
    cfg_json.push('\n');
    fs::write(target.join("synth_config.json"), cfg_json)?;
    if a.contrast_pairs {
        let pairs =
            synth::contrast_pairs(&ds, cfg.planted_layer, a.pair_signal, a.pair_noise, a.seed)?;
        fs::write(
            target.join("contrast_pairs.jsonl"),
            contrast_pairs_to_jsonl(&pairs, &ds)?,
        )?;
    }
    let wrong = ds.labels().iter().filter(|&&l| l).count();
    let summary = json!({
        "dataset": target.display().to_string(),
        "records": ds.len(),
        "wrong": wrong,
        "analytic_auroc": cfg.analytic_auroc(),
        "fingerprint": ds.fingerprint(),
    });
    let human = format!(
        "synthesized {} records ({} wrong), analytic AUROC {:.4}\n",
        ds.len(),
        wrong,
        cfg.analytic_auroc()
    );
    let json = out.json;
    out.finish("synth", summary, &human, true)?;
    if !json {
        println!("{}", target.display());
    }
    Ok(())
}

fn cmd_train(mut out: Out, a: TrainArgs) -> Result<()> {
    let path = path_or_stdin(a.dataset, "dataset")?;
    out.input("dataset", path.display().to_string());
    out.seed("folds", a.fit.seed);
    let ds = load(&path)?;
    let position = parse_position(&a.position)?;
    let cfg = a.fit.config(a.layers.clone());
    let (probe, sweep) = train_probe(&ds, position, &cfg)?;
    let probe_path = out.write("probe.json", &probe.to_json()?)?;
    let sweep_report = layer_sweep_report(&sweep, a.total_layers, &ds.header().model_name)?;
    out.report("layer_sweep", &sweep_report, &ALL_FORMATS)?;
    let mut summary = json!({
        "probe": probe_path.display().to_string(),
        "best_layer": probe.layer,
        "cv_auroc": probe.cv_auroc,
        "depth_fraction": sweep.depth_fraction,
        "C": cfg.c,
        "folds": cfg.folds,
    });
    if let Some(sizes) = &a.sizes {
        let rows = data_efficiency_sweep(&ds, sizes, position, &cfg)?;
        out.report(
            "data_efficiency",
            &data_efficiency_report(&rows, &ds, &cfg)?,
            &ALL_FORMATS,
        )?;
        summary["data_efficiency"] = serde_json::to_value(&rows)?;
    }
    let human = format!(
        "best layer {} (depth {:.2}), CV AUROC {:.4}\n",
        probe.layer, sweep.depth_fraction, probe.cv_auroc
    );
    let json = out.json;
    out.finish("train", summary, &human, true)?;
    if !json {
        println!("{}", probe_path.display());
    }
    Ok(())
}

fn cmd_eval(mut out: Out, a: EvalArgs) -> Result<()> {
    let probe_path = path_or_stdin(a.probe, "probe")?;
    let probe = load_probe(&probe_path)?;
    let ds_path = match a.dataset {
        Some(p) => p,
        None => {
            let prov = probe_path.with_file_name("train.provenance.json");
            let p = read_provenance_input(&prov, "dataset").ok_or_else(|| {
                anyhow!(
                    "no --dataset given and {} names no training dataset",
                    prov.display()
                )
            })?;
            PathBuf::from(p)
        }
    };
    out.input("probe", probe_path.display().to_string());
    out.input("dataset", ds_path.display().to_string());
    out.seed("bootstrap", a.seed);
    let ds = load(&ds_path)?;
    let (setting, m) = if a.transfer {
        let r = transfer_eval(&probe, &ds, a.n_boot, a.seed)?;
        (r.setting, r.metric)
    } else {
        (
            EvalSetting::HeldOut,
            eval_probe(&probe, &ds, a.n_boot, a.seed)?,
        )
    };
    let report = eval_report(setting, &m, &ds, &probe, a.n_boot, a.seed)?;
    out.report("eval", &report, &TABLE_FORMATS)?;
    let summary = json!({
        "auroc": m.auroc,
        "ci_low": m.ci_low,
        "ci_high": m.ci_high,
        "n_pos": m.n_pos,
        "n_neg": m.n_neg,
        "layer": probe.layer,
    });
    let human = format!(
        "AUROC {} on {} records (layer {})\n",
        fmt_metric(&m),
        ds.len(),
        probe.layer
    );
    out.finish("eval", summary, &human, false)
}

fn cmd_baselines(mut out: Out, a: BaselinesArgs) -> Result<()> {
    out.input("dataset", a.dataset.display().to_string());
    out.seed("seed", a.seed);
    let ds = load(&a.dataset)?;
    let methods = parse_list(&a.methods, BaselineMethod::parse, "baseline method")?;
    let probe = match &a.probe {
        Some(p) => {
            out.input("probe", p.display().to_string());
            Some(load_probe(p)?)
        }
        None => None,
    };
    let pairs_path = a.ccs_pairs.clone().or_else(|| {
        let p = a.dataset.join("contrast_pairs.jsonl");
        p.exists().then_some(p)
    });
    let pairs = match &pairs_path {
        Some(p) => {
            out.input("ccs_pairs", p.display().to_string());
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(parse_contrast_pairs(&text, &ds)?)
        }
        None => None,
    };
    let mut inputs = BaselineInputs::new();
    inputs.probe = probe.as_ref();
    inputs.ccs_pairs = pairs.as_deref();
    inputs.ccs.seed = a.seed;
    inputs.calibration_size = a.calibration;
    inputs.min_coverage = a.min_coverage;
    inputs.n_boot = a.n_boot;
    inputs.seed = a.seed;
    let report = baseline_report(&ds, &methods, &inputs)?;
    out.report("baselines", &report, &TABLE_FORMATS)?;
    let summary = serde_json::from_str::<Value>(&report.to_json()?)?;
    out.finish("baselines", summary, &report.to_csv(), false)
}

fn cmd_text(mut out: Out, a: TextArgs) -> Result<()> {
    out.input("dataset", a.dataset.display().to_string());
    out.input("probe", a.probe.display().to_string());
    out.seed("folds", a.seed);
    let ds = load(&a.dataset)?;
    let probe = load_probe(&a.probe)?;
    let lexicon_text = match &a.lexicon {
        Some(p) => {
            out.input("lexicon", p.display().to_string());
            fs::read_to_string(p).with_context(|| format!("reading lexicon {}", p.display()))?
        }
        None => HEDGING_LEXICON.to_string(),
    };
    let lexicon = parse_lexicon(&lexicon_text);
    let cfg = TextConfig {
        c: a.text_c,
        folds: a.folds,
        seed: a.seed,
        ..TextConfig::default()
    };
    let c = concealment_gap(&ds, &probe, &cfg, &lexicon)?;
    out.report(
        "concealment",
        &concealment_report(&c, &ds, &probe, a.text_c, a.folds, a.seed)?,
        &TABLE_FORMATS,
    )?;
    let mut summary = json!({ "concealment": serde_json::to_value(&c)? });
    let mut human = format!(
        "hidden-state AUROC {:.4}, text AUROC {:.4}, concealment gap {:+.4}\n",
        c.s_hidden, c.s_text, c.gap
    );
    match unfaithful_region(&ds, &probe, a.conf_threshold, a.score_threshold) {
        Ok(u) => {
            let rep =
                score_distribution_report(&u, &ds, &probe, a.conf_threshold, a.score_threshold)?;
            out.report("score_distribution", &rep, &ALL_FORMATS)?;
            human.push_str(&format!(
                "{} of {} wrong traces sit in the high-confidence, high-score region ({:.1}%)\n",
                u.wrong_flagged,
                u.wrong_considered,
                100.0 * u.fraction_wrong_flagged
            ));
            summary["unfaithful"] = json!({
                "wrong_considered": u.wrong_considered,
                "wrong_flagged": u.wrong_flagged,
                "fraction_wrong_flagged": u.fraction_wrong_flagged,
                "excluded": u.excluded,
            });
        }
        Err(e) => {
            human.push_str(&format!("score distribution skipped: {e}\n"));
            summary["unfaithful"] = json!({ "skipped": e.to_string() });
        }
    }
    out.finish("text", summary, &human, false)
}

fn cmd_steps(mut out: Out, a: StepsArgs) -> Result<()> {
    out.input("dataset", a.dataset.display().to_string());
    out.input("probe", a.probe.display().to_string());
    out.seed("folds", a.fit.seed);
    let ds = load(&a.dataset)?;
    let probe = load_probe(&a.probe)?;
    let cfg = a.fit.config(None);
    let mode = match a.mode {
        StepModeArg::Reuse => TrajectoryMode::ReuseFullTraceProbe,
        StepModeArg::PerStep => TrajectoryMode::PerStepProbes,
    };
    let traj = step_trajectories(&ds, &probe, mode, &cfg, &RegimeThresholds::default())?;
    out.report(
        "step_trajectory",
        &trajectory_report(&traj, &ds, &probe)?,
        &ALL_FORMATS,
    )?;
    let pmode = match a.positional_mode {
        StepModeArg::Reuse => PositionalMode::ReuseFullTraceProbe,
        StepModeArg::PerStep => PositionalMode::PerPositionProbes,
    };
    let table = positional_auroc(&ds, &probe, pmode, &cfg, a.n_boot)?;
    out.report(
        "positional",
        &positional_report(&table, &ds, &probe, &cfg)?,
        &TABLE_FORMATS,
    )?;
    let gaps = traj.gaps();
    let summary = json!({
        "regime": traj.regime.as_str(),
        "gaps": gaps,
        "max_gap": traj.max_gap,
        "gap_at_step1": traj.gap_at_step1,
        "positional": table.rows.iter().map(|(r, m)| json!({
            "position": r.label(), "auroc": m.auroc, "ci_low": m.ci_low, "ci_high": m.ci_high,
        })).collect::<Vec<_>>(),
    });
    let mut human = format!("regime {}; gaps by step:", traj.regime.as_str());
    for g in &gaps {
        human.push_str(&format!(" {g:.3}"));
    }
    human.push('\n');
    for (r, m) in &table.rows {
        human.push_str(&format!("{:<16} {}\n", r.label(), fmt_metric(m)));
    }
    out.finish("steps", summary, &human, false)
}

fn cmd_difficulty(mut out: Out, a: DifficultyArgs) -> Result<()> {
    out.input("dataset", a.dataset.display().to_string());
    out.input("probe", a.probe.display().to_string());
    let ds = load(&a.dataset)?;
    let probe = load_probe(&a.probe)?;
    let scores = probe.score_dataset(&ds)?;
    let res = difficulty_control(&ds, &scores)?;
    out.report(
        "difficulty_control",
        &difficulty_report(&res, &ds, &probe)?,
        &TABLE_FORMATS,
    )?;
    let summary = serde_json::to_value(&res)?;
    let fmt_opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
    let human = format!(
        "{} of {} problems mixed ({} correct, {} wrong traces)\npooled: d {}, p {}\nwithin-problem: d {}, p {}\n",
        res.mixed_problems,
        res.total_problems,
        res.n_correct,
        res.n_wrong,
        fmt_opt(res.pooled.cohens_d),
        fmt_opt(res.pooled.welch_p),
        fmt_opt(res.within_problem.cohens_d),
        fmt_opt(res.within_problem.welch_p),
    );
    out.finish("difficulty", summary, &human, false)
}

fn read_groups(path: &Path) -> Result<Vec<ProblemGroup>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

fn cmd_bon(mut out: Out, a: BonArgs) -> Result<()> {
    out.seed("seed", a.seed);
    let selectors = parse_list(&a.selectors, Selector::parse, "selector")?;
    let groups = match &a.groups {
        Some(p) => {
            out.input("groups", p.display().to_string());
            read_groups(p)?
        }
        None => {
            let cfg = BonSynthConfig {
                n_problems: a.problems,
                candidates: a.n.iter().copied().max().unwrap_or(1).max(1),
                score_auroc: a.score_auroc,
                seed: a.seed,
                ..BonSynthConfig::default()
            };
            out.input("synthetic", serde_json::to_value(&cfg)?);
            synth::bon_groups(&cfg)?
        }
    };
    let res = evaluate_best_of_n(&groups, &selectors, &a.n, a.seed)?;
    out.report("best_of_n", &res.to_report()?, &TABLE_FORMATS)?;
    let mut rows = Vec::new();
    let mut human = format!("{:<14}", "selector");
    for n in &a.n {
        human.push_str(&format!(" N={n:<6}"));
    }
    human.push('\n');
    for &s in &selectors {
        human.push_str(&format!("{:<14}", s.as_str()));
        for &n in &a.n {
            let acc = res.get(s, n);
            rows.push(json!({ "selector": s.as_str(), "N": n, "accuracy": acc }));
            human.push_str(&format!(
                " {:<8}",
                acc.map_or("n/a".into(), |v| format!("{v:.3}"))
            ));
        }
        human.push('\n');
    }
    let summary = json!({ "n_problems": res.n_problems, "excluded": res.excluded, "rows": rows });
    out.finish("bon", summary, &human, false)
}

fn parse_strategy(s: &str) -> Option<RetryStrategy> {
    RetryStrategy::ALL.into_iter().find(|r| r.as_str() == s)
}

fn cmd_selfcorrect(mut out: Out, a: SelfcorrectArgs) -> Result<()> {
    out.input("outcomes", a.outcomes.display().to_string());
    let outcomes = read_outcomes(&a.outcomes)?;
    let strategies = parse_list(&a.strategies, parse_strategy, "strategy")?;
    let report = evaluate_self_correction(&outcomes, &strategies, a.tau)?;
    out.report("self_correction", &report, &TABLE_FORMATS)?;
    let mut human = report.to_csv();
    let mut summary =
        json!({ "self_correction": serde_json::from_str::<Value>(&report.to_json()?)? });
    if a.intervention_table {
        let table = evaluate_interventions(&outcomes)?;
        out.report("interventions", &table, &TABLE_FORMATS)?;
        human.push('\n');
        human.push_str(&table.to_csv());
        summary["interventions"] = serde_json::from_str::<Value>(&table.to_json()?)?;
    }
    out.finish("selfcorrect", summary, &human, false)
}

fn cmd_route(mut out: Out, a: RouteArgs) -> Result<()> {
    out.input("dataset", a.dataset.display().to_string());
    out.input("probe", a.probe.display().to_string());
    let ds = load(&a.dataset)?;
    let probe = load_probe(&a.probe)?;
    let scores = probe.score_dataset(&ds)?;
    let report = routing_report(&scores, &ds.labels(), &a.fractions)?;
    out.report("routing", &report, &TABLE_FORMATS)?;
    let summary = serde_json::from_str::<Value>(&report.to_json()?)?;
    out.finish("route", summary, &report.to_csv(), false)
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let text =
        fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report = Report::from_json(&text)
        .with_context(|| format!("parsing report {}", a.input.display()))?;
    let format = match a.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Svg => ReportFormat::Svg,
    };
    let body = render(&report, format)?;
    match a.output {
        Some(p) => fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{body}"),
    }
    Ok(())
}
