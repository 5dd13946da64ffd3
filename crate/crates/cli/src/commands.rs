use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dyndecomp::bench::{comparison_report, mean_std, run_grid, stage_split, BenchJob, ErrorCurve, ExpandingSchedule, ProtocolConfig};
use dyndecomp::control::{run_mbrl, run_oracle, write_learning_curve, MbrlLoopConfig, ModelShape, PartitionSource};
use dyndecomp::d2p::{KernelLayout, TrainConfig, WorldModel, Trainer};
use dyndecomp::envs::{collect_trajectories, load_dataset, preset, save_dataset, BlockEnvSpec, Dataset, UniformRandomPolicy};
use dyndecomp::rng::derive_seed;
use dyndecomp::sd2::{complete_decomposition, load_prior_partition, pearson_features, random_partition, sd2_cluster_traced, ClusterTrace, Partition};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{out_dir, usage, CliError, CliResult, FileEntry, Manifest};

fn load_env(env: &str, spec: &Option<PathBuf>) -> CliResult<BlockEnvSpec> {
    match spec {
        Some(path) => usage(BlockEnvSpec::load(path)),
        None => usage(preset(env)),
    }
}

fn load_data(path: &Option<PathBuf>) -> CliResult<Dataset> {
    let path = path
        .as_ref()
        .ok_or_else(|| CliError::Usage("a dataset is required (--data)".into()))?;
    usage(load_dataset(path).map_err(|e| format!("{}: {e}", path.display())))
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

// ---- gen-data ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub env: String,
    pub spec: Option<PathBuf>,
    pub episodes: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            env: "blocks-2x3".into(),
            spec: None,
            episodes: 5,
            seed: 0,
            out: None,
        }
    }
}

pub fn gen_data(cfg: &GenDataConfig) -> CliResult<()> {
    let spec = load_env(&cfg.env, &cfg.spec)?;
    if cfg.episodes == 0 {
        return Err(CliError::Usage("episodes must be at least 1".into()));
    }
    let dir = out_dir(&cfg.out)?;
    let mut policy = UniformRandomPolicy::new(spec.action_dim(), cfg.seed);
    let data = collect_trajectories(&spec, &mut policy, cfg.episodes, cfg.seed)?;
    save_dataset(&data, &dir.join("dataset.jsonl"))?;
    let mut manifest = Manifest::new("gen-data", cfg)?;
    manifest.files.push(FileEntry::new("dataset.jsonl", "dataset"));
    manifest.results = json!({
        "transitions": data.len(),
        "state_dim": spec.state_dim(),
        "action_dim": spec.action_dim(),
        "ground_truth": spec.ground_truth(),
        "spec_hash": spec.digest(),
    });
    manifest.write(&dir)
}

// ---- cluster ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub data: Option<PathBuf>,
    /// `cl`, `cd`, `prior:PATH` or `random:K`.
    pub method: String,
    pub eta: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            data: None,
            method: "cl".into(),
            eta: 0.0,
            seed: 0,
            out: None,
        }
    }
}

fn dotted(g: &[usize]) -> String {
    g.iter().map(usize::to_string).collect::<Vec<_>>().join(".")
}

fn merge_log(trace: &ClusterTrace) -> String {
    let mut csv = String::from("step,left,right,rela,merged\n");
    for (i, s) in trace.steps.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{:e},{}", i + 1, dotted(&s.left), dotted(&s.right), s.rela, s.merged);
    }
    csv
}

pub fn cluster(cfg: &ClusterConfig) -> CliResult<()> {
    let data = load_data(&cfg.data)?;
    let m = data.action_dim();
    let (partition, trace) = match cfg.method.as_str() {
        "cl" => {
            let (p, t) = sd2_cluster_traced(&pearson_features(&data)?, cfg.eta);
            (p, Some(t))
        }
        "cd" => (complete_decomposition(m)?, None),
        other => {
            if let Some(path) = other.strip_prefix("prior:") {
                let p = usage(load_prior_partition(Path::new(path), m).map_err(|e| format!("{path}: {e}")))?;
                (p, None)
            } else if let Some(k) = other.strip_prefix("random:") {
                let k: usize = usage(k.parse().map_err(|_| format!("bad group count in `{other}`")))?;
                (usage(random_partition(m, k, derive_seed(cfg.seed, "partition")))?, None)
            } else {
                return Err(CliError::Usage(format!(
                    "unknown method `{other}`; expected cl, cd, prior:PATH or random:K"
                )));
            }
        }
    };
    let dir = out_dir(&cfg.out)?;
    partition.save(&dir.join("partition.json"))?;
    fs::write(dir.join("merge_log.csv"), merge_log(&trace.clone().unwrap_or_default()))?;
    let mut manifest = Manifest::new("cluster", cfg)?;
    manifest.files.push(FileEntry::new("partition.json", "partition"));
    manifest.files.push(FileEntry::new("merge_log.csv", "merge_log"));
    manifest.results = json!({
        "partition": partition,
        "merges": trace.as_ref().map_or(0, |t| t.merges().count()),
    });
    manifest.write(&dir)
}

// ---- train ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCmdConfig {
    pub data: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    /// `d2p` (needs a partition file), `monolithic` or `ensemble:K`.
    pub layout: String,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub param_target: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            data: None,
            partition: None,
            layout: "d2p".into(),
            model: ModelShape::default(),
            train: TrainConfig::default(),
            param_target: None,
            seed: 0,
            out: None,
        }
    }
}

fn parse_layout(layout: &str, partition: &Option<PathBuf>, m: usize) -> CliResult<KernelLayout> {
    match layout {
        "d2p" => {
            let path = partition
                .as_ref()
                .ok_or_else(|| CliError::Usage("layout d2p needs a partition file (--partition)".into()))?;
            let p = usage(load_prior_partition(path, m).map_err(|e| format!("{}: {e}", path.display())))?;
            Ok(KernelLayout::Decomposed(p))
        }
        "monolithic" => Ok(KernelLayout::Monolithic),
        other => match other.strip_prefix("ensemble:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(KernelLayout::Ensemble { k }),
            _ => Err(CliError::Usage(format!(
                "unknown layout `{other}`; expected d2p, monolithic or ensemble:K"
            ))),
        },
    }
}

pub fn train(cfg: &TrainCmdConfig) -> CliResult<()> {
    let data = load_data(&cfg.data)?;
    let layout = parse_layout(&cfg.layout, &cfg.partition, data.action_dim())?;
    let mut config = cfg.model.config(data.state_dim(), data.action_dim(), layout);
    if let Some(target) = cfg.param_target {
        config = usage(config.matched_to(target, 0.05))?;
    }
    let mut model = usage(WorldModel::new(config.clone(), cfg.seed))?;
    let mut trainer = Trainer::new(&model, cfg.train.clone(), cfg.seed);
    usage(trainer_check(&cfg.train))?;
    let losses = trainer.train_on(&mut model, &data.transitions, cfg.train.steps)?;
    let dir = out_dir(&cfg.out)?;
    model.checkpoint().save(&dir.join("checkpoint.json"))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{:e}", i + 1, l);
    }
    fs::write(dir.join("loss.csv"), csv)?;
    let mut manifest = Manifest::new("train", cfg)?;
    manifest.files.push(FileEntry::new("checkpoint.json", "checkpoint"));
    manifest.files.push(FileEntry::new("loss.csv", "loss"));
    manifest.results = json!({
        "label": config.layout.label(),
        "param_count": config.param_count(),
        "final_loss": losses.last(),
        "model": config,
    });
    manifest.write(&dir)
}

fn trainer_check(t: &TrainConfig) -> Result<(), String> {
    if t.batch == 0 || t.steps == 0 || t.seq_len == 0 {
        return Err("batch, steps and seq_len must be at least 1".into());
    }
    if !t.lr.is_finite() || t.lr < 0.0 {
        return Err("lr must be finite and non-negative".into());
    }
    Ok(())
}

// ---- bench ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub data: Option<PathBuf>,
    /// Partition sources (`clustered`, `complete`, `prior:PATH`,
    /// `random:K`, `monolithic`) or `ensemble:K`.
    pub models: Vec<String>,
    pub stages: usize,
    pub steps_per_stage: usize,
    pub eval_split: f64,
    pub rollout_horizon: Option<usize>,
    /// Resize every model to the first one's parameter count (within 5%).
    pub match_params: bool,
    pub eta: f64,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            data: None,
            models: vec!["clustered".into(), "monolithic".into()],
            stages: 10,
            steps_per_stage: 500,
            eval_split: 0.2,
            rollout_horizon: None,
            match_params: true,
            eta: 0.0,
            model: ModelShape::default(),
            train: TrainConfig::default(),
            seeds: default_seeds(),
            out: None,
        }
    }
}

enum ModelSource {
    Partition(PartitionSource),
    Ensemble(usize),
}

impl ModelSource {
    fn parse(s: &str) -> CliResult<Self> {
        if let Some(k) = s.strip_prefix("ensemble:") {
            return match k.parse() {
                Ok(k) if k >= 1 => Ok(Self::Ensemble(k)),
                _ => Err(CliError::Usage(format!("bad kernel count in `{s}`"))),
            };
        }
        Ok(Self::Partition(usage(s.parse())?))
    }

    /// File-name safe label.
    fn label(&self) -> String {
        match self {
            Self::Ensemble(k) => format!("ensemble-{k}"),
            Self::Partition(PartitionSource::Random(k)) => format!("random-{k}"),
            Self::Partition(PartitionSource::Prior(p)) => {
                format!("prior-{}", p.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default())
            }
            Self::Partition(p) => p.to_string(),
        }
    }
}

fn layout_for(src: &ModelSource, clustered: &Partition, m: usize, seed: u64) -> CliResult<KernelLayout> {
    Ok(match src {
        ModelSource::Ensemble(k) => KernelLayout::Ensemble { k: *k },
        ModelSource::Partition(p) => match p {
            PartitionSource::Clustered => KernelLayout::Decomposed(clustered.clone()),
            PartitionSource::Complete => KernelLayout::Decomposed(complete_decomposition(m)?),
            PartitionSource::Prior(path) => KernelLayout::Decomposed(usage(
                load_prior_partition(path, m).map_err(|e| format!("{}: {e}", path.display())),
            )?),
            PartitionSource::Random(k) => {
                KernelLayout::Decomposed(usage(random_partition(m, *k, derive_seed(seed, "partition")))?)
            }
            PartitionSource::Monolithic => KernelLayout::Monolithic,
        },
    })
}

fn write_curve(curve: &ErrorCurve, path: &Path) -> CliResult<()> {
    let mut csv = String::from("step,mse,mse_rollout\n");
    for p in &curve.points {
        let ro = p.mse_rollout.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(csv, "{},{:e},{}", p.step, p.mse, ro);
    }
    fs::write(path, csv)?;
    Ok(())
}

pub fn bench(cfg: &BenchConfig) -> CliResult<()> {
    let data = load_data(&cfg.data)?;
    let (n, m) = (data.state_dim(), data.action_dim());
    if cfg.models.is_empty() || cfg.seeds.is_empty() {
        return Err(CliError::Usage("need at least one model and one seed".into()));
    }
    usage(trainer_check(&cfg.train))?;
    let schedule = usage(ExpandingSchedule::uniform(cfg.stages, cfg.steps_per_stage))?;
    let protocol = ProtocolConfig {
        eval_split: cfg.eval_split,
        rollout_horizon: cfg.rollout_horizon,
    };
    let sources = cfg.models.iter().map(|s| ModelSource::parse(s)).collect::<CliResult<Vec<_>>>()?;
    let labels: Vec<String> = sources.iter().map(ModelSource::label).collect();
    if let Some(dup) = labels.iter().enumerate().find(|(i, l)| labels[..*i].contains(l)) {
        return Err(CliError::Usage(format!("model `{}` listed twice", dup.1)));
    }

    // clustering sees only the first stage's training slice
    let (first, _) = stage_split(data.len(), schedule.fractions[0], cfg.eval_split);
    let early = usage(Dataset::new(data.meta.clone(), data.transitions[first].to_vec()))?;
    let (clustered, trace) = sd2_cluster_traced(&pearson_features(&early)?, cfg.eta);

    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        let mut target = None;
        for (src, label) in sources.iter().zip(&labels) {
            let mut model = cfg.model.config(n, m, layout_for(src, &clustered, m, seed)?);
            match target {
                None => target = Some(model.param_count()),
                Some(t) if cfg.match_params => model = usage(model.matched_to(t, 0.05))?,
                Some(_) => {}
            }
            jobs.push(BenchJob {
                label: label.clone(),
                seed,
                model,
                train: cfg.train.clone(),
            });
        }
    }
    let curves = run_grid(&jobs, &data.transitions, &schedule, &protocol)?;

    let dir = out_dir(&cfg.out)?;
    let report = comparison_report(&curves, &dir)?;
    let mut manifest = Manifest::new("bench", cfg)?;
    let name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
    manifest.files.push(FileEntry::new(&name(&report.curves_csv), "curves"));
    manifest.files.push(FileEntry::new(&name(&report.summary_json), "summary"));
    manifest.files.push(FileEntry::new(&name(&report.manifest_json), "report_manifest"));
    fs::create_dir_all(dir.join("curves"))?;
    for c in &curves {
        let path = format!("curves/{}_s{}.csv", c.label, c.seed);
        write_curve(c, &dir.join(&path))?;
        manifest.files.push(FileEntry::run(path, "error_curve", &c.label, c.seed));
    }
    manifest.results = json!({
        "metric": "one-step next-state MSE on held-out data",
        "clustered_partition": clustered,
        "cluster_trace": trace,
        "models": jobs.iter().map(|j| json!({
            "label": j.label,
            "seed": j.seed,
            "layout": j.model.layout.label(),
            "param_count": j.model.param_count(),
        })).collect::<Vec<_>>(),
    });
    manifest.write(&dir)
}

// ---- mbrl ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MbrlCmdConfig {
    pub env: String,
    pub spec: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Also run MPC with the true dynamics as the upper reference.
    pub oracle: bool,
    #[serde(rename = "loop")]
    pub loop_cfg: MbrlLoopConfig,
    pub out: Option<PathBuf>,
}

impl Default for MbrlCmdConfig {
    fn default() -> Self {
        Self {
            env: "blocks-2x3".into(),
            spec: None,
            seeds: default_seeds(),
            oracle: false,
            loop_cfg: MbrlLoopConfig::default(),
            out: None,
        }
    }
}

pub fn mbrl(cfg: &MbrlCmdConfig) -> CliResult<()> {
    let spec = load_env(&cfg.env, &cfg.spec)?;
    usage(cfg.loop_cfg.validate())?;
    usage(trainer_check(&cfg.loop_cfg.train))?;
    if cfg.seeds.is_empty() {
        return Err(CliError::Usage("need at least one seed".into()));
    }
    if let PartitionSource::Prior(path) = &cfg.loop_cfg.partition {
        usage(load_prior_partition(path, spec.action_dim()).map_err(|e| format!("{}: {e}", path.display())))?;
    }
    let dir = out_dir(&cfg.out)?;
    let label = ModelSource::Partition(cfg.loop_cfg.partition.clone()).label();
    let mut manifest = Manifest::new("mbrl", cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_mbrl(&spec, &cfg.loop_cfg, seed)?;
        let path = format!("curve_{label}_s{seed}.csv");
        write_learning_curve(&run.curve, &dir.join(&path))?;
        manifest.files.push(FileEntry::run(path, "learning_curve", &label, seed));
        let mut entry = json!({
            "seed": seed,
            "label": label,
            "final_return": run.final_return(),
            "partition": run.partition,
            "cluster_trace": run.cluster_trace,
            "param_count": run.model.model.config.param_count(),
            "planner_fallbacks": run.planner_fallbacks,
        });
        if cfg.oracle {
            let o = run_oracle(&spec, &cfg.loop_cfg, seed)?;
            let path = format!("curve_oracle_s{seed}.csv");
            write_learning_curve(&o.curve, &dir.join(&path))?;
            manifest.files.push(FileEntry::run(path, "learning_curve", "oracle", seed));
            entry["oracle_final_return"] = json!(o.final_return());
        }
        runs.push(entry);
    }
    manifest.results = json!({
        "ground_truth": spec.ground_truth(),
        "spec_hash": spec.digest(),
        "runs": runs,
    });
    manifest.write(&dir)
}

// ---- report ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportConfig {
    pub run: Option<PathBuf>,
    /// Defaults to `<run>/report`.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct Row {
    label: String,
    metric: &'static str,
    seeds: usize,
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

/// Last data row's second column, i.e. the final mse or mean return.
fn final_value(path: &Path) -> CliResult<f64> {
    let text = usage(fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display())))?;
    let last = text.lines().skip(1).last().unwrap_or_default();
    let cell = last.split(',').nth(1).unwrap_or_default();
    usage(cell.parse().map_err(|_| format!("{}: no final value", path.display())))
}

pub fn report(cfg: &ReportConfig) -> CliResult<()> {
    let run = cfg
        .run
        .clone()
        .ok_or_else(|| CliError::Usage("a run directory is required".into()))?;
    let source = Manifest::read(&run)?;
    let mut values: BTreeMap<String, (&'static str, BTreeMap<u64, f64>)> = BTreeMap::new();
    for f in &source.files {
        let metric = match f.kind.as_str() {
            "error_curve" => "final_mse",
            "learning_curve" => "final_return",
            _ => continue,
        };
        let (Some(label), Some(seed)) = (&f.label, f.seed) else { continue };
        let v = final_value(&run.join(&f.path))?;
        values.entry(label.clone()).or_insert((metric, BTreeMap::new())).1.insert(seed, v);
    }
    if values.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: manifest lists no per-run curves to report",
            run.display()
        )));
    }
    let rows: Vec<Row> = values
        .iter()
        .map(|(label, (metric, by_seed))| {
            let xs: Vec<f64> = by_seed.values().copied().collect();
            let (mean, std) = mean_std(&xs);
            Row {
                label: label.clone(),
                metric,
                seeds: xs.len(),
                mean,
                std,
                min: xs.iter().copied().fold(f64::INFINITY, f64::min),
                max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    let mut table = String::from("label,metric,seeds,mean,std,min,max\n");
    for r in &rows {
        let _ = writeln!(table, "{},{},{},{:e},{:e},{:e},{:e}", r.label, r.metric, r.seeds, r.mean, r.std, r.min, r.max);
    }

    // one row per seed, best label first in `order`
    let labels: Vec<&String> = values.keys().collect();
    let seeds: std::collections::BTreeSet<u64> = values.values().flat_map(|(_, s)| s.keys().copied()).collect();
    let mut wide = format!(
        "seed,{},order\n",
        labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(",")
    );
    let mut ordering = Vec::new();
    for seed in &seeds {
        let cells: Vec<Option<f64>> = labels.iter().map(|l| values[*l].1.get(seed).copied()).collect();
        let mut present: Vec<(&String, f64, &str)> = labels
            .iter()
            .zip(&cells)
            .filter_map(|(l, c)| c.map(|v| (*l, v, values[*l].0)))
            .collect();
        present.sort_by(|a, b| {
            let key = |x: &(&String, f64, &str)| if x.2 == "final_return" { -x.1 } else { x.1 };
            key(a).total_cmp(&key(b))
        });
        let order: Vec<&str> = present.iter().map(|p| p.0.as_str()).collect();
        let row: Vec<String> = cells.iter().map(|c| c.map(|v| format!("{v:e}")).unwrap_or_default()).collect();
        let _ = writeln!(wide, "{seed},{},{}", row.join(","), order.join(" < "));
        ordering.push(json!({ "seed": seed, "best_first": order }));
    }

    let out = cfg.out.clone().unwrap_or_else(|| run.join("report"));
    let dir = out_dir(&Some(out))?;
    fs::write(dir.join("table.csv"), table)?;
    fs::write(dir.join("per_seed.csv"), wide)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&json!({ "source": source.command, "rows": rows, "ordering": ordering }))? + "\n")?;
    let mut manifest = Manifest::new("report", cfg)?;
    manifest.files.push(FileEntry::new("table.csv", "table"));
    manifest.files.push(FileEntry::new("per_seed.csv", "per_seed"));
    manifest.files.push(FileEntry::new("report.json", "report"));
    manifest.write(&dir)
}
