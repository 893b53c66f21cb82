//! Command-line front end. [`run_command`] parses arguments, runs one
//! subcommand and maps the outcome to an exit code: 0 on success, 1 for
//! usage and validation errors, 2 for I/O failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{self, CycleRecord, CycleStore, LabelMap, Schema, SplitManifest};
use crate::dist_detect::{self, MetricSpec};
use crate::error::{Error, Result};
use crate::eval::{self, CellResult, DEFAULT_KPI};
use crate::exec::{self, Exec};
use crate::features::FeatureMatrix;
use crate::ml::{self, DetectorConfig, FlagRule, ModelKind, ScoreScaler, DEFAULT_THRESHOLD};
use crate::pipeline::{self, DetectOptions, Detector, PipelineRecipe, RecipeName};
use crate::stat_detect::{StatOptions, GAUSSIAN_MAD_FACTOR};
use crate::synth::{self, CellSpec};
use crate::tune::{self, SearchSpace, TrialRecord, TuneSettings, DEFAULT_TRIALS};

#[derive(Debug, Parser)]
#[command(name = "cycle-anomaly", version, about = "Detect anomalous battery cycles")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(flatten)]
    schema: SchemaArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SchemaArgs {
    #[arg(long, global = true, default_value = "cell_id")]
    cell_column: String,
    #[arg(long, global = true, default_value = "cycle_index")]
    cycle_column: String,
    #[arg(long, global = true, default_value = "time_s")]
    time_column: String,
    #[arg(long, global = true, default_value = "voltage_v")]
    voltage_column: String,
    #[arg(long, global = true, default_value = "capacity_ah")]
    capacity_column: String,
    #[arg(long, global = true, default_value_t = ',')]
    delimiter: char,
}

impl SchemaArgs {
    fn schema(&self) -> Result<Schema> {
        if !self.delimiter.is_ascii() {
            return Err(Error::param("delimiter", "must be a single ASCII character"));
        }
        Ok(Schema {
            cell_id: self.cell_column.clone(),
            cycle_index: self.cycle_column.clone(),
            time: self.time_column.clone(),
            voltage: self.voltage_column.clone(),
            capacity: self.capacity_column.clone(),
            delimiter: self.delimiter as u8,
        })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic cells with injected anomalies.
    Synth(SynthArgs),
    /// Validate a measurement file and write it in canonical form.
    Ingest(IngestArgs),
    /// Extract per-cycle features.
    Features(FeatureArgs),
    /// Run detectors and write one verdict file per cell and detector.
    Detect(DetectArgs),
    /// Tune ML detector hyperparameters.
    Tune(TuneArgs),
    /// Score verdict files against labels.
    Evaluate(EvaluateArgs),
    /// Evaluate a detector on a regular grid over two features.
    Scoremap(ScoremapArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    cells: u32,
    #[arg(long, default_value_t = 100)]
    cycles: u32,
    #[arg(long, default_value_t = 60)]
    samples: usize,
    /// Size of the injected anomalies.
    #[arg(long, default_value_t = 0.5)]
    magnitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RecipeArg {
    Severson,
    Tohoku,
    Custom,
}

#[derive(Debug, Args)]
struct RecipeArgs {
    #[arg(long, value_enum)]
    recipe: Option<RecipeArg>,
    /// Feature column; the first one feeds the statistical detectors.
    #[arg(long = "feature", value_delimiter = ',')]
    features: Vec<String>,
    /// Columns for the multivariate detectors (default: the `--feature` list).
    #[arg(long = "multi-feature", value_delimiter = ',')]
    multi_features: Vec<String>,
    /// Use log variants of the custom features.
    #[arg(long)]
    log: bool,
}

impl RecipeArgs {
    fn recipe(&self) -> Result<PipelineRecipe> {
        let name = match self.recipe {
            Some(RecipeArg::Severson) => RecipeName::Severson,
            Some(RecipeArg::Tohoku) => RecipeName::Tohoku,
            Some(RecipeArg::Custom) => RecipeName::Custom,
            None if self.features.is_empty() => RecipeName::Severson,
            None => RecipeName::Custom,
        };
        match PipelineRecipe::by_name(name) {
            Some(r) => {
                if !self.features.is_empty() || !self.multi_features.is_empty() || self.log {
                    return Err(Error::param(
                        "recipe",
                        "--feature, --multi-feature and --log only apply to the custom recipe",
                    ));
                }
                Ok(r)
            }
            None => {
                let stat = self
                    .features
                    .first()
                    .ok_or_else(|| Error::param("feature", "the custom recipe needs at least one --feature"))?;
                let multi = if self.multi_features.is_empty() {
                    &self.features
                } else {
                    &self.multi_features
                };
                PipelineRecipe::custom(stat, multi, self.log)
            }
        }
    }
}

#[derive(Debug, Args)]
struct FeatureArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    recipe: RecipeArgs,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    recipe: RecipeArgs,
    /// Detector name, comma list, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    model: Vec<String>,
    /// JSON detector config: one object, a list, or an object keyed by cell.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Probability cut for ML detectors.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Flag the top `contamination` fraction instead of using the threshold.
    #[arg(long)]
    contamination_threshold: bool,
    #[arg(long, default_value_t = GAUSSIAN_MAD_FACTOR)]
    mad_factor: f64,
    /// MAD multiplier for the distance detectors.
    #[arg(long, default_value_t = 3.0)]
    mad_threshold: f64,
    #[arg(long, default_value_t = 3.0)]
    minkowski_p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Transfer,
    Proxy,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    recipe: RecipeArgs,
    #[arg(long, value_enum)]
    strategy: Strategy,
    /// ML model name, comma list, or `all`.
    #[arg(long, value_delimiter = ',')]
    model: Vec<String>,
    /// Outlier labels; required for transfer tuning.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Train/test split. Transfer tunes on train cells, proxy on test cells.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    contamination_threshold: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory laid out as `<cell>/<model>/verdict.csv`.
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Restrict to the test cells of this manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KPI)]
    kpi: f64,
}

#[derive(Debug, Args)]
struct ScoremapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    recipe: RecipeArgs,
    /// Distance or ML detector, comma list, or `all`.
    #[arg(long, value_delimiter = ',')]
    model: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    resolution: usize,
    #[arg(long, default_value_t = 3.0)]
    minkowski_p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let jobs = cli.jobs;
    match exec::with_jobs(jobs, move || dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let schema = cli.schema.schema()?;
    let exec = Exec::default();
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &schema),
        Command::Ingest(a) => cmd_ingest(a, &schema),
        Command::Features(a) => cmd_features(a, &schema, exec),
        Command::Detect(a) => cmd_detect(a, &schema, exec),
        Command::Tune(a) => cmd_tune(a, &schema, exec),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Scoremap(a) => cmd_scoremap(a, &schema, exec),
    }
}

/// Writes next to the target and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: &SynthArgs, schema: &Schema) -> Result<()> {
    if a.cells == 0 {
        return Err(Error::param("cells", "must be at least 1"));
    }
    let cells = (1..=a.cells)
        .map(|i| {
            let mut spec = CellSpec::new(&format!("Cell-{i}"), a.cycles, a.samples, a.seed);
            spec.anomalies = synth::default_anomalies(a.cycles, a.magnitude);
            synth::generate_cell(&spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let (store, labels) = synth::to_store(&cells)?;
    let mut buf = Vec::new();
    dataset::write_measurements(&store, schema, &mut buf)?;
    write_atomic(&a.out.join("measurements.csv"), &buf)?;
    let mut buf = Vec::new();
    dataset::write_labels(&labels, &mut buf)?;
    write_atomic(&a.out.join("labels.csv"), &buf)?;
    let n_train = a.cells.div_ceil(2);
    let mut manifest = String::from("cell_id,role\n");
    for i in 1..=a.cells {
        let role = if i <= n_train { "train" } else { "test" };
        manifest.push_str(&format!("Cell-{i},{role}\n"));
    }
    write_atomic(&a.out.join("manifest.csv"), manifest.as_bytes())
}

#[derive(Serialize)]
struct IngestSummary {
    source: String,
    n_cells: usize,
    n_cycles: usize,
    cycles_per_cell: BTreeMap<String, usize>,
    samples_per_cell: BTreeMap<String, usize>,
}

fn cmd_ingest(a: &IngestArgs, schema: &Schema) -> Result<()> {
    let store = dataset::ingest_cycles(&a.input, schema)?;
    let mut buf = Vec::new();
    dataset::write_measurements(&store, &Schema::default(), &mut buf)?;
    write_atomic(&a.out.join("measurements.csv"), &buf)?;
    let summary = IngestSummary {
        source: a.input.display().to_string(),
        n_cells: store.n_cells(),
        n_cycles: store.n_records(),
        cycles_per_cell: store.cells().map(|(id, c)| (id.to_string(), c.len())).collect(),
        samples_per_cell: store
            .cells()
            .map(|(id, c)| (id.to_string(), c.iter().map(|r| r.samples.len()).sum()))
            .collect(),
    };
    write_json(&a.out.join("summary.json"), &summary)
}

fn build_cells(
    store: &CycleStore,
    recipe: &PipelineRecipe,
    exec: Exec,
) -> Result<Vec<(String, FeatureMatrix, crate::features::FeatureReport)>> {
    let cells: Vec<(&str, &[CycleRecord])> = store.cells().collect();
    exec.try_map_slice(&cells, |(id, records)| {
        let (fm, report) = recipe.build(records)?;
        Ok((id.to_string(), fm, report))
    })
}

fn cmd_features(a: &FeatureArgs, schema: &Schema, exec: Exec) -> Result<()> {
    let recipe = a.recipe.recipe()?;
    let store = dataset::ingest_cycles(&a.input, schema)?;
    for (id, fm, report) in build_cells(&store, &recipe, exec)? {
        let mut buf = Vec::new();
        fm.write_csv(&mut buf)?;
        let dir = a.out.join(&id);
        write_atomic(&dir.join("features.csv"), &buf)?;
        write_json(&dir.join("feature_report.json"), &report)?;
    }
    Ok(())
}

fn parse_detectors(names: &[String]) -> Result<Vec<Detector>> {
    if names.is_empty() {
        return Err(Error::param("model", "no model given"));
    }
    if names.iter().any(|n| n == "all") {
        return Ok(Detector::all());
    }
    let mut out: Vec<Detector> = Vec::new();
    for n in names {
        let d: Detector = n.parse()?;
        if !out.contains(&d) {
            out.push(d);
        }
    }
    Ok(out)
}

/// Configs from `--config`, global and per cell.
#[derive(Debug, Default)]
struct ConfigSet {
    global: Vec<DetectorConfig>,
    per_cell: BTreeMap<String, Vec<DetectorConfig>>,
}

impl ConfigSet {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigSet::default());
        };
        let text = read_to_string(path)?;
        let json_err = |source| Error::Json {
            path: path.to_path_buf(),
            source,
        };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
        let many = |v: serde_json::Value| -> Result<Vec<DetectorConfig>> {
            if v.is_array() {
                serde_json::from_value(v).map_err(json_err)
            } else {
                Ok(vec![serde_json::from_value(v).map_err(json_err)?])
            }
        };
        if value.get("model").is_some() || value.is_array() {
            return Ok(ConfigSet {
                global: many(value)?,
                per_cell: BTreeMap::new(),
            });
        }
        match value {
            serde_json::Value::Object(map) => {
                let per_cell = map
                    .into_iter()
                    .map(|(cell, v)| Ok((cell, many(v)?)))
                    .collect::<Result<_>>()?;
                Ok(ConfigSet {
                    global: Vec::new(),
                    per_cell,
                })
            }
            _ => Err(Error::param("config", "expected a config object, a list, or an object keyed by cell")),
        }
    }

    fn for_cell(&self, cell: &str) -> Vec<DetectorConfig> {
        let mut out = self.per_cell.get(cell).cloned().unwrap_or_default();
        for g in &self.global {
            if !out.iter().any(|c| c.model == g.model) {
                out.push(g.clone());
            }
        }
        out
    }
}

fn flag_rule(threshold: f64, contamination: bool) -> Result<FlagRule> {
    if contamination {
        return Ok(FlagRule::Contamination);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Range(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(FlagRule::Probability(threshold))
}

/// Detector seeds follow (seed, cell, model) so results do not depend on
/// the order in which cells run.
fn cell_options(base: &DetectOptions, configs: &ConfigSet, cell: &str) -> DetectOptions {
    let mut opts = base.clone();
    let explicit = configs.for_cell(cell);
    opts.configs = ModelKind::ALL
        .into_iter()
        .map(|m| {
            explicit.iter().find(|c| c.model == m).cloned().unwrap_or_else(|| {
                DetectorConfig::new(m, exec::derive_seed(base.seed, &[exec::stable_hash(cell), m.id()]))
            })
        })
        .collect();
    opts
}

fn cmd_detect(a: &DetectArgs, schema: &Schema, exec: Exec) -> Result<()> {
    let recipe = a.recipe.recipe()?;
    let detectors = parse_detectors(&a.model)?;
    let configs = ConfigSet::load(a.config.as_deref())?;
    let base = DetectOptions {
        stat: StatOptions {
            mad_factor: a.mad_factor,
            ..StatOptions::default()
        },
        mad_threshold: a.mad_threshold,
        minkowski_p: a.minkowski_p,
        rule: flag_rule(a.threshold, a.contamination_threshold)?,
        seed: a.seed,
        configs: Vec::new(),
    };
    let store = dataset::ingest_cycles(&a.input, schema)?;
    let cells = build_cells(&store, &recipe, exec)?;
    let verdicts = exec.try_map_slice(&cells, |(id, fm, _)| -> Result<Vec<(String, Vec<u8>)>> {
        let opts = cell_options(&base, &configs, id);
        detectors
            .iter()
            .map(|&d| Ok((d.name().to_string(), pipeline::run_detector(d, fm, &recipe, &opts, exec)?.csv)))
            .collect()
    })?;
    for ((id, _, _), files) in cells.iter().zip(verdicts) {
        for (model, csv) in files {
            write_atomic(&a.out.join(id).join(model).join("verdict.csv"), &csv)?;
        }
    }
    Ok(())
}

fn parse_ml_models(names: &[String]) -> Result<Vec<ModelKind>> {
    if names.is_empty() {
        return Err(Error::param("model", "no model given"));
    }
    if names.iter().any(|n| n == "all") {
        return Ok(ModelKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for n in names {
        let m: ModelKind = n
            .parse()
            .map_err(|_| Error::param("model", format!("`{n}` is not a tunable ML model")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

fn labels_for(cell: &str, fm: &FeatureMatrix, labels: &LabelMap) -> Vec<u8> {
    let set = labels.get(cell);
    fm.cycle_index
        .iter()
        .map(|c| u8::from(set.is_some_and(|s| s.contains(c))))
        .collect()
}

#[derive(Serialize)]
struct TransferSummary {
    strategy: &'static str,
    model: String,
    seed: u64,
    n_trials: usize,
    train_cells: Vec<String>,
    perfect_recall_fraction: f64,
    per_cell_perfect_recall: BTreeMap<String, f64>,
    per_cell_best: BTreeMap<String, TrialRecord>,
    config: DetectorConfig,
}

#[derive(Serialize)]
struct ProxyCellSummary {
    compromise_objectives: (f64, f64),
    compromise_trials: Vec<usize>,
    front_size: usize,
    config: DetectorConfig,
}

#[derive(Serialize)]
struct ProxySummary {
    strategy: &'static str,
    model: String,
    seed: u64,
    n_trials: usize,
    cells: BTreeMap<String, ProxyCellSummary>,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io("<buffer>", e))?;
    Ok(buf)
}

fn cmd_tune(a: &TuneArgs, schema: &Schema, exec: Exec) -> Result<()> {
    let recipe = a.recipe.recipe()?;
    let models = parse_ml_models(&a.model)?;
    if a.trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let manifest = a.manifest.as_deref().map(dataset::read_manifest).transpose()?;
    let labels = a.labels.as_deref().map(dataset::read_labels).transpose()?;
    let store = dataset::ingest_cycles(&a.input, schema)?;
    let store = match &manifest {
        Some(m) => {
            let (train, test) = dataset::split_train_test(&store, m)?;
            if a.strategy == Strategy::Transfer {
                train
            } else {
                test
            }
        }
        None => store,
    };
    let cells = build_cells(&store, &recipe, exec)?;
    let rule = flag_rule(a.threshold, a.contamination_threshold)?;
    let settings = TuneSettings {
        n_trials: a.trials,
        seed: a.seed,
        rule,
        exec,
    };
    for model in models {
        let dir = a.out.join("tuning").join(model.name());
        match a.strategy {
            Strategy::Transfer => {
                let labels = labels
                    .as_ref()
                    .ok_or_else(|| Error::param("labels", "transfer tuning needs --labels"))?;
                // cells absent from the label file carry no ground truth
                let labeled = cells
                    .iter()
                    .filter(|(id, _, _)| labels.contains_key(id))
                    .map(|(id, fm, _)| {
                        Ok(tune::LabeledCell {
                            cell_id: id.clone(),
                            rows: recipe.multivariate_rows(fm)?,
                            labels: labels_for(id, fm, labels),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                if labeled.is_empty() {
                    return Err(Error::param("labels", "no tuning cell appears in the label file"));
                }
                let n_rows = labeled.iter().map(|c| c.rows.len()).min().unwrap_or(0);
                let space = SearchSpace::default_for(model, n_rows, recipe.multivariate.len(), rule, a.seed);
                let outcome = tune::optimize_transfer(&labeled, &space, &settings)?;
                let groups: Vec<(&str, &[TrialRecord])> =
                    outcome.cells.iter().map(|c| (c.cell_id.as_str(), c.trials.as_slice())).collect();
                write_atomic(&dir.join("trials.csv"), &csv_bytes(|b| tune::write_cell_trials_csv(&groups, b))?)?;
                let fronts: Vec<(&str, &[TrialRecord])> =
                    outcome.cells.iter().map(|c| (c.cell_id.as_str(), c.front.as_slice())).collect();
                write_atomic(&dir.join("pareto.csv"), &csv_bytes(|b| tune::write_cell_trials_csv(&fronts, b))?)?;
                write_json(&dir.join("config.json"), &outcome.aggregate)?;
                write_json(
                    &dir.join("summary.json"),
                    &TransferSummary {
                        strategy: "transfer",
                        model: model.name().into(),
                        seed: a.seed,
                        n_trials: a.trials,
                        train_cells: outcome.cells.iter().map(|c| c.cell_id.clone()).collect(),
                        perfect_recall_fraction: outcome.perfect_recall_fraction,
                        per_cell_perfect_recall: outcome
                            .cells
                            .iter()
                            .map(|c| (c.cell_id.clone(), c.perfect_recall_fraction))
                            .collect(),
                        per_cell_best: outcome.cells.iter().map(|c| (c.cell_id.clone(), c.best.clone())).collect(),
                        config: outcome.aggregate.clone(),
                    },
                )?;
            }
            Strategy::Proxy => {
                let outcomes = exec.try_map_slice(&cells, |(id, fm, _)| {
                    let rows = recipe.multivariate_rows(fm)?;
                    let space = SearchSpace::default_for(model, rows.len(), rows[0].len(), rule, a.seed);
                    tune::optimize_proxy(id, &fm.cycle_index, &rows, &space, &settings)
                })?;
                let ids: Vec<&str> = cells.iter().map(|c| c.0.as_str()).collect();
                let groups: Vec<(&str, &[TrialRecord])> =
                    ids.iter().zip(&outcomes).map(|(id, o)| (*id, o.trials.as_slice())).collect();
                write_atomic(&dir.join("trials.csv"), &csv_bytes(|b| tune::write_cell_trials_csv(&groups, b))?)?;
                let fronts: Vec<(&str, &[TrialRecord])> =
                    ids.iter().zip(&outcomes).map(|(id, o)| (*id, o.front.as_slice())).collect();
                write_atomic(&dir.join("pareto.csv"), &csv_bytes(|b| tune::write_cell_trials_csv(&fronts, b))?)?;
                let configs: BTreeMap<&str, &DetectorConfig> =
                    ids.iter().zip(&outcomes).map(|(id, o)| (*id, &o.compromise.config)).collect();
                write_json(&dir.join("config.json"), &configs)?;
                write_json(
                    &dir.join("summary.json"),
                    &ProxySummary {
                        strategy: "proxy",
                        model: model.name().into(),
                        seed: a.seed,
                        n_trials: a.trials,
                        cells: ids
                            .iter()
                            .zip(&outcomes)
                            .map(|(id, o)| {
                                (
                                    id.to_string(),
                                    ProxyCellSummary {
                                        compromise_objectives: o.compromise.objectives,
                                        compromise_trials: o.compromise.trial_ids.clone(),
                                        front_size: o.front.len(),
                                        config: o.compromise.config.clone(),
                                    },
                                )
                            })
                            .collect(),
                    },
                )?;
            }
        }
    }
    Ok(())
}

fn sorted_dirs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if p.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), p));
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.kpi) {
        return Err(Error::Range(format!("kpi {} outside [0, 1]", a.kpi)));
    }
    let labels = dataset::read_labels(&a.labels)?;
    let manifest: Option<SplitManifest> = a.manifest.as_deref().map(dataset::read_manifest).transpose()?;
    let mut by_model: BTreeMap<String, Vec<CellResult>> = BTreeMap::new();
    for (cell, cell_dir) in sorted_dirs(&a.verdicts)? {
        if manifest.as_ref().is_some_and(|m| !m.test_cells.contains(&cell)) {
            continue;
        }
        for (model, model_dir) in sorted_dirs(&cell_dir)? {
            let file = model_dir.join("verdict.csv");
            if !file.is_file() {
                continue;
            }
            let flags = pipeline::read_verdict_flags(&read_to_string(&file)?)?;
            let set = labels.get(&cell);
            let truth: Vec<u8> = flags
                .iter()
                .map(|(c, _)| u8::from(set.is_some_and(|s| s.contains(c))))
                .collect();
            let pred: Vec<bool> = flags.iter().map(|f| f.1).collect();
            by_model
                .entry(model)
                .or_default()
                .push(CellResult::new(&cell, &truth, &pred)?);
        }
    }
    if by_model.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let reports = by_model
        .into_iter()
        .map(|(model, cells)| eval::benchmark_report(&model, cells, a.kpi))
        .collect::<Result<Vec<_>>>()?;
    write_atomic(&a.out.join("report.csv"), &csv_bytes(|b| eval::write_report_csv(&reports, b))?)?;
    write_json(&a.out.join("report.json"), &reports)
}

fn cmd_scoremap(a: &ScoremapArgs, schema: &Schema, exec: Exec) -> Result<()> {
    let recipe = a.recipe.recipe()?;
    if recipe.multivariate.len() != 2 {
        return Err(Error::Shape("score maps need exactly 2 multivariate features".into()));
    }
    let detectors: Vec<Detector> = parse_detectors(&a.model)?
        .into_iter()
        .filter(|d| !matches!(d, Detector::Stat(_)))
        .collect();
    if detectors.is_empty() {
        return Err(Error::param("model", "score maps need a distance or ML detector"));
    }
    let configs = ConfigSet::load(a.config.as_deref())?;
    let base = DetectOptions {
        minkowski_p: a.minkowski_p,
        seed: a.seed,
        ..DetectOptions::default()
    };
    let store = dataset::ingest_cycles(&a.input, schema)?;
    let features: Vec<&str> = recipe.multivariate.iter().map(String::as_str).collect();
    let cells = build_cells(&store, &recipe, exec)?;
    for (id, fm, _) in &cells {
        let rows = recipe.multivariate_rows(fm)?;
        let bounds = dist_detect::default_bounds(&rows)?;
        let opts = cell_options(&base, &configs, id);
        for &d in &detectors {
            let grid = match d {
                Detector::Distance(kind) => {
                    let metric: MetricSpec = kind.metric(a.minkowski_p)?;
                    dist_detect::score_grid(&rows, &metric, a.resolution, Some(bounds), exec)?
                }
                Detector::Ml(model) => {
                    let fitted = ml::fit(&opts.config_for(model), &rows, exec)?;
                    let scaler = ScoreScaler::fit(&fitted.score(&rows, exec)?);
                    let probe = dist_detect::evaluate_grid([a.resolution; 2], bounds, exec, |_| 0.0)?;
                    let raw = fitted.score(&probe.nodes(), exec)?;
                    dist_detect::ScoreGrid {
                        values: scaler.apply(&raw),
                        ..probe
                    }
                }
                Detector::Stat(_) => unreachable!("filtered above"),
            };
            let dir = a.out.join(id).join(d.name());
            let mut buf = Vec::new();
            grid.write_csv(&mut buf)?;
            write_atomic(&dir.join("grid.csv"), &buf)?;
            write_json(&dir.join("grid.json"), &grid.sidecar(d.name(), &features))?;
        }
    }
    Ok(())
}
