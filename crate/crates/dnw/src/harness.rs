//! Experiment orchestration: JSON configs, method dispatch, paired-seed
//! comparisons, metrics/checkpoint files, and edge-budget accounting.
//!
//! File outputs are written atomically (temp file, then rename) and contain
//! no timing fields, so identical configs produce byte-identical artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    train_l1_anneal, train_no_update_rule, train_one_shot, train_random_graph, BaselineKind,
    PruneMode, DEFAULT_L1_COEFFICIENT,
};
use crate::data::{gen_spirals, load_csv, Dataset};
use crate::dynamic::{train_dynamic, train_dynamic_frozen, DynamicMode};
use crate::engine::{IoMaps, Model};
use crate::error::{Error, Result};
use crate::graph::{edge_budget, GraphSpec, GraphTopology};
use crate::params::NodeParams;
use crate::sparse::{train_sparse, MaskMode, SparseConfig};
use crate::st::train_straight_through;
use crate::store::EdgeStore;
use crate::train::{train, MetricsRecord, TrainConfig, TrainedModel};

/// Where a run's samples come from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Spirals {
        n_per_class: usize,
        classes: usize,
        noise_sd: f64,
        seed: u64,
        #[serde(default)]
        test_fraction: Option<f64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        seed: u64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetSpec {
    pub fn build(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Spirals {
                n_per_class,
                classes,
                noise_sd,
                seed,
                test_fraction,
            } => {
                if *n_per_class < 1 {
                    return Err(Error::config("dataset.n_per_class", "must be >= 1"));
                }
                if *classes < 2 {
                    return Err(Error::config("dataset.classes", "must be >= 2"));
                }
                let mut data = gen_spirals(*n_per_class, *classes, *noise_sd, *seed);
                if let Some(fraction) = test_fraction {
                    data.resplit(*fraction, seed ^ 0x7e57);
                }
                Ok(data)
            }
            DatasetSpec::Csv {
                path,
                test_fraction,
                seed,
            } => load_csv(path, *test_fraction, *seed),
        }
    }

    /// Derived spec for paired runs: every seed shifts by the pair index.
    pub fn with_seed_offset(&self, offset: u64) -> DatasetSpec {
        let mut spec = self.clone();
        match &mut spec {
            DatasetSpec::Spirals { seed, .. } | DatasetSpec::Csv { seed, .. } => {
                *seed = seed.wrapping_add(offset);
            }
        }
        spec
    }
}

/// Time discretization block of the config file.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DynamicSettings {
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub t1: Option<f64>,
    #[serde(default)]
    pub h: Option<f64>,
}

/// One experiment: a method, its model description, optimization settings,
/// a dataset, and an output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: String,
    #[serde(default)]
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub sparse: Option<SparseConfig>,
    pub train: TrainConfig,
    #[serde(default)]
    pub dynamic: Option<DynamicSettings>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// L1 coefficient for the anneal baseline.
    #[serde(default)]
    pub l1_coefficient: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match self.method.as_str() {
            "dnw" | "dnw_st" => {
                if self.graph.is_none() {
                    return Err(Error::config("graph", "required for graph methods"));
                }
            }
            "dynamic_discrete" => {
                if self.graph.is_none() {
                    return Err(Error::config("graph", "required for graph methods"));
                }
                let steps = self.dynamic.as_ref().and_then(|d| d.steps);
                if steps.is_none() {
                    return Err(Error::config("dynamic.steps", "required for discrete mode"));
                }
            }
            "dynamic_continuous" => {
                if self.graph.is_none() {
                    return Err(Error::config("graph", "required for graph methods"));
                }
                let ok = self
                    .dynamic
                    .as_ref()
                    .is_some_and(|d| d.t1.is_some() && d.h.is_some());
                if !ok {
                    return Err(Error::config(
                        "dynamic.t1, dynamic.h",
                        "required for continuous mode",
                    ));
                }
            }
            "sparse" => {
                if self.sparse.is_none() {
                    return Err(Error::config("sparse", "required for the sparse method"));
                }
                self.sparse.as_ref().unwrap().validate()?;
            }
            other => {
                let Some(name) = other.strip_prefix("baseline:") else {
                    return Err(Error::config(
                        "method",
                        format!("unknown method `{other}`"),
                    ));
                };
                name.parse::<BaselineKind>()?;
                if self.graph.is_none() {
                    return Err(Error::config("graph", "required for baseline methods"));
                }
            }
        }
        Ok(())
    }

    fn dynamic_mode(&self) -> Result<DynamicMode> {
        let settings = self
            .dynamic
            .as_ref()
            .ok_or_else(|| Error::config("dynamic", "missing dynamic settings"))?;
        match self.method.as_str() {
            "dynamic_discrete" => Ok(DynamicMode::Discrete {
                steps: settings
                    .steps
                    .ok_or_else(|| Error::config("dynamic.steps", "required"))?,
            }),
            "dynamic_continuous" => Ok(DynamicMode::Continuous {
                t1: settings
                    .t1
                    .ok_or_else(|| Error::config("dynamic.t1", "required"))?,
                h: settings
                    .h
                    .ok_or_else(|| Error::config("dynamic.h", "required"))?,
            }),
            other => Err(Error::config(
                "method",
                format!("`{other}` is not a dynamic method"),
            )),
        }
    }

    /// Derived config for paired runs: graph, dataset, and training seeds
    /// all shift by the pair index.
    pub fn with_seed_offset(&self, offset: u64) -> ExperimentConfig {
        let mut config = self.clone();
        if let Some(graph) = &mut config.graph {
            graph.seed = graph.seed.wrapping_add(offset);
        }
        config.train.seed = config.train.seed.wrapping_add(offset);
        config.dataset = config.dataset.with_seed_offset(offset);
        config
    }
}

/// Serializable snapshot of a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Graph {
        method: String,
        graph: GraphSpec,
        store: EdgeStore,
        params: NodeParams,
        io: IoMaps,
        features: usize,
        classes: usize,
        iterations: u64,
    },
    Sparse {
        method: String,
        config: SparseConfig,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        iterations: u64,
    },
}

impl Checkpoint {
    fn from_graph_run(method: &str, graph: &GraphSpec, run: &TrainedModel) -> Self {
        Checkpoint::Graph {
            method: method.to_string(),
            graph: graph.clone(),
            store: run.model.store.clone(),
            params: run.model.params.clone(),
            io: run.model.io.clone(),
            features: run.model.io.features,
            classes: run.model.io.classes,
            iterations: run.iterations,
        }
    }

    /// Rebuilds a model from a graph checkpoint.
    pub fn to_model(&self) -> Result<Model> {
        match self {
            Checkpoint::Graph {
                graph,
                store,
                params,
                io,
                ..
            } => Ok(Model {
                topology: GraphTopology::new(&graph.blocks, graph.adjacent_only)?,
                store: store.clone(),
                params: params.clone(),
                io: io.clone(),
            }),
            Checkpoint::Sparse { .. } => {
                Err(Error::contract("sparse checkpoints do not hold a graph"))
            }
        }
    }
}

/// In-memory result of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub checkpoint: Checkpoint,
}

/// Runs the configured method to completion.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let data = config.dataset.build()?;
    let method = config.method.as_str();

    if method == "sparse" {
        let sparse_config = config.sparse.as_ref().unwrap();
        let run = train_sparse(sparse_config, &data, &config.train, MaskMode::PerStep, method)?;
        let checkpoint = Checkpoint::Sparse {
            method: method.to_string(),
            config: sparse_config.clone(),
            weights: run.stack.layers.iter().map(|l| l.weight.clone()).collect(),
            biases: run.stack.layers.iter().map(|l| l.bias.clone()).collect(),
            iterations: run.step_active_counts.len() as u64,
        };
        return Ok(RunOutput {
            metrics: run.metrics,
            checkpoint,
        });
    }

    let graph = config.graph.as_ref().unwrap();
    let model = Model::new(graph, data.num_features(), data.classes)?;
    let run = match method {
        "dnw" => train(model, &data, &config.train, method)?,
        "dnw_st" => train_straight_through(model, &data, &config.train, method)?,
        "dynamic_discrete" | "dynamic_continuous" => {
            train_dynamic(model, &data, &config.train, config.dynamic_mode()?, method)?
        }
        _ => {
            let name = method.strip_prefix("baseline:").unwrap();
            match name.parse::<BaselineKind>()? {
                BaselineKind::RandomGraph => {
                    train_random_graph(model, &data, &config.train, method)?
                }
                BaselineKind::NoUpdateRule => {
                    train_no_update_rule(model, &data, &config.train, method)?
                }
                BaselineKind::L1Anneal => train_l1_anneal(
                    model,
                    &data,
                    &config.train,
                    config.l1_coefficient.unwrap_or(DEFAULT_L1_COEFFICIENT),
                    method,
                )?,
                BaselineKind::OneShotPruneReinit => {
                    train_one_shot(model, &data, &config.train, PruneMode::Reinit, method)?
                }
                BaselineKind::OneShotPruneFinetune => {
                    train_one_shot(model, &data, &config.train, PruneMode::Finetune, method)?
                }
            }
        }
    };
    Ok(RunOutput {
        checkpoint: Checkpoint::from_graph_run(method, graph, &run),
        metrics: run.metrics,
    })
}

/// Per-method accuracy summary of a paired comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub final_test_acc: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSummary {
    pub seeds: usize,
    pub primary: MethodSummary,
    pub baseline: MethodSummary,
    /// primary minus baseline, per seed pair.
    pub paired_diff: Vec<f64>,
    pub wins: usize,
}

fn summarize(method: &str, accs: Vec<f64>) -> MethodSummary {
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    MethodSummary {
        method: method.to_string(),
        final_test_acc: accs,
        mean,
        sd: var.sqrt(),
    }
}

/// Runs the configured method against a named baseline over `seeds` paired
/// runs. Pair i shifts every seed by i, so both methods share the dataset
/// realization and the initial weights; pairs run in parallel when the
/// `parallel` feature is on.
pub fn compare_experiments(
    config: &ExperimentConfig,
    baseline: &str,
    seeds: usize,
) -> Result<(CompareSummary, Vec<MetricsRecord>)> {
    config.validate()?;
    if seeds == 0 {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let baseline_method = format!("baseline:{baseline}");

    let pair_outcomes = crate::parallel::map_indexed(seeds, |i| {
        let pair_config = config.with_seed_offset(i as u64);
        let primary = run_experiment(&pair_config)?;
        let baseline_run = run_baseline_of(&pair_config, baseline, &baseline_method)?;
        Ok::<_, Error>((primary, baseline_run))
    });

    let mut records = Vec::new();
    let mut primary_accs = Vec::with_capacity(seeds);
    let mut baseline_accs = Vec::with_capacity(seeds);
    for outcome in pair_outcomes {
        let (primary, baseline_run) = outcome?;
        primary_accs.push(primary.metrics.last().map_or(0.0, |m| m.test_acc));
        baseline_accs.push(baseline_run.metrics.last().map_or(0.0, |m| m.test_acc));
        records.extend(primary.metrics);
        records.extend(baseline_run.metrics);
    }
    let paired_diff: Vec<f64> = primary_accs
        .iter()
        .zip(&baseline_accs)
        .map(|(a, b)| a - b)
        .collect();
    let wins = paired_diff.iter().filter(|&&d| d > 0.0).count();
    let summary = CompareSummary {
        seeds,
        primary: summarize(&config.method, primary_accs),
        baseline: summarize(&baseline_method, baseline_accs),
        paired_diff,
        wins,
    };
    Ok((summary, records))
}

/// The baseline counterpart of a config: graph baselines swap the method;
/// dynamic methods support the frozen random graph; the sparse method's
/// control is the frozen-at-init mask.
fn run_baseline_of(
    config: &ExperimentConfig,
    baseline: &str,
    baseline_method: &str,
) -> Result<RunOutput> {
    match config.method.as_str() {
        "dynamic_discrete" | "dynamic_continuous" => {
            if baseline != "random_graph" {
                return Err(Error::config(
                    "baseline",
                    "dynamic methods support only the random_graph baseline",
                ));
            }
            let data = config.dataset.build()?;
            let graph = config.graph.as_ref().unwrap();
            let model = Model::new(graph, data.num_features(), data.classes)?;
            let run = train_dynamic_frozen(
                model,
                &data,
                &config.train,
                config.dynamic_mode()?,
                baseline_method,
            )?;
            Ok(RunOutput {
                checkpoint: Checkpoint::from_graph_run(baseline_method, graph, &run),
                metrics: run.metrics,
            })
        }
        "sparse" => {
            if baseline != "frozen_mask" {
                return Err(Error::config(
                    "baseline",
                    "the sparse method supports only the frozen_mask control",
                ));
            }
            let data = config.dataset.build()?;
            let sparse_config = config.sparse.as_ref().unwrap();
            let run = train_sparse(
                sparse_config,
                &data,
                &config.train,
                MaskMode::Frozen,
                baseline_method,
            )?;
            let checkpoint = Checkpoint::Sparse {
                method: baseline_method.to_string(),
                config: sparse_config.clone(),
                weights: run.stack.layers.iter().map(|l| l.weight.clone()).collect(),
                biases: run.stack.layers.iter().map(|l| l.bias.clone()).collect(),
                iterations: run.step_active_counts.len() as u64,
            };
            Ok(RunOutput {
                metrics: run.metrics,
                checkpoint,
            })
        }
        _ => {
            let mut baseline_config = config.clone();
            baseline_config.method = baseline_method.to_string();
            baseline_config.validate()?;
            run_experiment(&baseline_config)
        }
    }
}

// ---------------------------------------------------------------------------
// File outputs.

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Runs one experiment and writes `metrics.jsonl` + `checkpoint.json` into
/// the output directory (from the config or the override).
pub fn run_and_write(config: &ExperimentConfig, output: Option<&Path>) -> Result<RunOutput> {
    let out = run_experiment(config)?;
    let dir = output
        .map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .ok_or_else(|| Error::config("output", "no output directory given"))?;
    std::fs::create_dir_all(&dir)?;
    write_metrics(&dir.join("metrics.jsonl"), &out.metrics)?;
    write_json(&dir.join("checkpoint.json"), &out.checkpoint)?;
    Ok(out)
}

/// Runs a paired comparison and writes `metrics.jsonl` + `summary.json`.
pub fn compare_and_write(
    config: &ExperimentConfig,
    baseline: &str,
    seeds: usize,
    output: Option<&Path>,
) -> Result<CompareSummary> {
    let (summary, records) = compare_experiments(config, baseline, seeds)?;
    let dir = output
        .map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .ok_or_else(|| Error::config("output", "no output directory given"))?;
    std::fs::create_dir_all(&dir)?;
    write_metrics(&dir.join("metrics.jsonl"), &records)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Edge-budget accounting.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetStage {
    #[serde(default)]
    pub name: Option<String>,
    pub c_in: usize,
    pub c_out: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub width_mult: f64,
    pub stages: Vec<BudgetStage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetLine {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetReport {
    pub width_mult: f64,
    pub stages: Vec<BudgetLine>,
    pub total: usize,
}

/// Per-stage and total edge budgets for a stage plan at one width
/// multiplier.
pub fn budget_table(spec: &BudgetSpec) -> BudgetReport {
    let mut stages = Vec::with_capacity(spec.stages.len());
    let mut total = 0usize;
    for (i, stage) in spec.stages.iter().enumerate() {
        let edges = edge_budget(stage.c_in, stage.c_out, spec.width_mult);
        total += edges;
        stages.push(BudgetLine {
            name: stage
                .name
                .clone()
                .unwrap_or_else(|| format!("stage{}", i + 1)),
            c_in: stage.c_in,
            c_out: stage.c_out,
            edges,
        });
    }
    BudgetReport {
        width_mult: spec.width_mult,
        stages,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Activation;

    fn spirals_config(method: &str, epochs: usize) -> ExperimentConfig {
        ExperimentConfig {
            method: method.to_string(),
            graph: Some(GraphSpec {
                blocks: vec![2, 4, 2],
                k: 10,
                activation: Activation::Relu,
                seed: 3,
                standardize: true,
                adjacent_only: false,
            }),
            sparse: None,
            train: TrainConfig {
                epochs,
                batch_size: 16,
                ..TrainConfig::default()
            },
            dynamic: None,
            dataset: DatasetSpec::Spirals {
                n_per_class: 30,
                classes: 2,
                noise_sd: 0.1,
                seed: 5,
                test_fraction: None,
            },
            output: None,
            l1_coefficient: None,
        }
    }

    #[test]
    fn zero_epoch_run_emits_only_the_initial_record() {
        let out = run_experiment(&spirals_config("dnw", 0)).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].epoch, 0);
    }

    #[test]
    fn identical_configs_produce_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let config = spirals_config("dnw", 2);
        run_and_write(&config, Some(&a)).unwrap();
        run_and_write(&config, Some(&b)).unwrap();
        let bytes_a = std::fs::read(a.join("metrics.jsonl")).unwrap();
        let bytes_b = std::fs::read(b.join("metrics.jsonl")).unwrap();
        assert!(!bytes_a.is_empty());
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(
            std::fs::read(a.join("checkpoint.json")).unwrap(),
            std::fs::read(b.join("checkpoint.json")).unwrap()
        );
    }

    #[test]
    fn config_validation_reports_key_paths() {
        let mut config = spirals_config("dnw", 1);
        config.graph = None;
        match config.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "graph"),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut config = spirals_config("nonsense", 1);
        config.graph = None;
        assert!(config.validate().is_err());
        let mut config = spirals_config("dynamic_discrete", 1);
        config.dynamic = None;
        match config.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "dynamic.steps"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_round_trip_is_identity() {
        let config = spirals_config("dnw", 3);
        let text = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        let text2 = serde_json::to_string(&back).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn checkpoint_round_trips_to_a_model() {
        let out = run_experiment(&spirals_config("dnw", 1)).unwrap();
        let text = serde_json::to_string(&out.checkpoint).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let model = back.to_model().unwrap();
        assert_eq!(model.topology.num_nodes(), 8);
        assert_eq!(model.store.k(), 10);
    }

    #[test]
    fn budget_table_matches_channel_plan() {
        // The stage plan of the reference mobile architecture: pointwise
        // edge counts per spatial resolution plus the final classifier.
        let spec = BudgetSpec {
            width_mult: 0.25,
            stages: vec![BudgetStage {
                name: Some("stage1".into()),
                c_in: 32,
                c_out: 64,
            }],
        };
        let report = budget_table(&spec);
        assert_eq!(report.stages[0].edges, 128);
        assert_eq!(report.total, 128);

        let fc = BudgetSpec {
            width_mult: 1.0,
            stages: vec![BudgetStage {
                name: Some("fc".into()),
                c_in: 1024,
                c_out: 1000,
            }],
        };
        assert_eq!(budget_table(&fc).total, 1_024_000);

        let empty = BudgetSpec {
            width_mult: 1.0,
            stages: vec![],
        };
        assert_eq!(budget_table(&empty).total, 0);
    }

    #[test]
    fn compare_pairs_share_initial_stores() {
        let config = spirals_config("dnw", 1);
        // Pair 0 of the comparison builds the same initial model for both
        // methods: verified by the shared graph seed.
        let pair = config.with_seed_offset(0);
        let a = Model::new(pair.graph.as_ref().unwrap(), 2, 2).unwrap();
        let b = Model::new(pair.graph.as_ref().unwrap(), 2, 2).unwrap();
        for idx in 0..a.store.num_candidates() {
            assert_eq!(a.store.weight(idx).to_bits(), b.store.weight(idx).to_bits());
        }
        let shifted = config.with_seed_offset(1);
        assert_ne!(
            shifted.graph.as_ref().unwrap().seed,
            config.graph.as_ref().unwrap().seed
        );
    }
}
