//! End-to-end run: data, model, latent projection, clustering sweep,
//! detectors, EM/MV evaluation, then report and plot files.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use clvae_core::anomaly::{
    self, flag_count, misclassification_detector, top_anomalies, AnomalyScores, DetectorConfig, FittedDetector,
};
use clvae_core::clustering::{sweep_vscore, ClusterAssignment, SweepRow};
use clvae_core::datasets::{load_idx, load_tabular_csv, make_synthetic_gmm, split, LabeledDataset, SyntheticSpec};
use clvae_core::emmv::{emmv_scores, normality_from_anomaly, EmMvResult, SupportBox, BOX_MARGIN};
use clvae_core::metrics::{completeness, flagged_fraction_per_class, homogeneity, ContingencyTable};
use clvae_core::numerics::mix_seed;
use clvae_core::LatentSet;

use crate::config::{DatasetConfig, RunConfig};
use crate::error::CliError;
use crate::model_io::TrainedModel;
use crate::render::{render_class_bars, render_scatter, series_rmse, BarSeries, Coloring};

pub const REPORT_SCHEMA: &str = "clvae-report/1";

// Sub-seed tags so every stage draws from its own stream.
const TAG_SWEEP: u64 = 11;
const TAG_FOREST: u64 = 12;
const TAG_EMMV: u64 = 13;

pub struct Data {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_data(config: &RunConfig) -> Result<Data, CliError> {
    let stage = || CliError::stage("load");
    let seed = config.seed;
    let (train, test) = match &config.dataset {
        DatasetConfig::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            let train = load_idx(train_images, train_labels).map_err(stage())?;
            let test = load_idx(test_images, test_labels).map_err(stage())?;
            (train.limit(*train_limit, seed), test.limit(*test_limit, seed))
        }
        DatasetConfig::Synthetic {
            classes,
            dim,
            per_class,
            spacing,
            scale,
            test_fraction,
        } => {
            let spec = SyntheticSpec::ring(*classes, *dim, *per_class, *spacing, *scale);
            let (all, _) = make_synthetic_gmm(&spec, seed).map_err(stage())?;
            split(&all, *test_fraction, seed).map_err(stage())?
        }
        DatasetConfig::Tabular {
            path,
            label_column,
            columns,
            test_fraction,
        } => {
            let schema = DatasetConfig::tabular_schema(columns);
            let (all, _) = load_tabular_csv(path, &schema, label_column).map_err(stage())?;
            split(&all, *test_fraction, seed).map_err(stage())?
        }
    };
    Ok(Data { train, test })
}

/// SHA-256 over the configuration (minus output location) and every input file.
pub fn input_hash(config: &RunConfig) -> Result<String, CliError> {
    let mut echo = config.clone();
    echo.output_dir = PathBuf::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&echo).map_err(|e| CliError::Config(e.to_string()))?);
    for p in config.dataset.input_files() {
        let bytes = std::fs::read(p).map_err(|e| CliError::Stage {
            stage: "load",
            source: clvae_core::Error::Io {
                path: p.to_path_buf(),
                source: e,
            },
        })?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelSummary {
    pub id: String,
    pub first_epoch_loss: Option<f64>,
    pub final_epoch_loss: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DataSummary {
    pub train_id: String,
    pub test_id: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub class_names: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusteringSummary {
    pub sweep: Vec<SweepRow>,
    pub best_k: usize,
    pub best_v_score: f64,
    pub final_k: usize,
    pub homogeneity: f64,
    pub completeness: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DetectorSummary {
    pub detector: String,
    pub flagged: usize,
    pub flagged_fraction_per_class: Vec<f64>,
    /// RMSE of per-class flagged fractions against the overall flag rate.
    pub rmse: f64,
    pub em_area: Option<f64>,
    pub mv_area: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MisclassificationSummary {
    pub flagged: usize,
    pub majority: Vec<Option<usize>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: String,
    pub seed: u64,
    pub input_sha256: String,
    pub config: RunConfig,
    pub data: DataSummary,
    pub model: ModelSummary,
    pub clustering: ClusteringSummary,
    pub detectors: Vec<DetectorSummary>,
    pub misclassification: MisclassificationSummary,
    /// Files written by the run, relative to the output directory.
    pub manifest: Vec<String>,
}

/// Everything computed from a latent set, before any file is written.
pub struct Analysis {
    pub clustering: ClusteringSummary,
    pub assignment: ClusterAssignment,
    pub detectors: Vec<(AnomalyScores, Vec<usize>)>,
    pub emmv: Vec<(String, EmMvResult)>,
    pub misclassified: Vec<usize>,
    pub majority: Vec<Option<usize>>,
}

pub fn detector_configs(config: &RunConfig) -> Vec<DetectorConfig> {
    let d = &config.detector;
    vec![
        DetectorConfig::Lof {
            k_neighbors: d.k_neighbors,
        },
        DetectorConfig::IsolationForest {
            n_trees: d.n_trees,
            subsample: d.subsample,
            seed: mix_seed(config.seed, TAG_FOREST),
        },
    ]
}

pub fn cluster_stage(config: &RunConfig, latent: &LatentSet) -> Result<(ClusteringSummary, ClusterAssignment), CliError> {
    let stage = || CliError::stage("cluster");
    let cluster_cfg = &config.clustering;
    let ks = cluster_cfg.k_range(latent.len());
    let sweep_seed = mix_seed(config.seed, TAG_SWEEP);
    let sweep = sweep_vscore(&latent.points, &latent.labels, &ks, cluster_cfg.algo, sweep_seed).map_err(stage())?;
    let final_k = cluster_cfg.k.unwrap_or(sweep.best.k);
    let assignment = cluster_cfg
        .algo
        .fit(&latent.points, final_k, mix_seed(sweep_seed, final_k as u64))
        .map_err(stage())?;
    let table = ContingencyTable::from_labels(&latent.labels, &assignment.assignment).map_err(stage())?;
    let summary = ClusteringSummary {
        best_k: sweep.best.k,
        best_v_score: sweep.best.v_score,
        final_k,
        homogeneity: homogeneity(&table).map_err(stage())?,
        completeness: completeness(&table).map_err(stage())?,
        sweep: sweep.rows,
    };
    Ok((summary, assignment))
}

/// Scores from every configured detector with the top `flag_fraction` flagged.
pub fn detect_stage(config: &RunConfig, latent: &LatentSet) -> Result<Vec<(AnomalyScores, Vec<usize>)>, CliError> {
    let flagged_n = flag_count(latent.len(), config.detector.flag_fraction);
    detector_configs(config)
        .iter()
        .map(|dc| {
            let scores = anomaly::detect(&latent.points, dc).map_err(CliError::stage("detect"))?;
            let flagged = top_anomalies(&scores, flagged_n);
            Ok((scores, flagged))
        })
        .collect()
}

/// EM/MV areas per detector, scoring the bounding box of the latent set.
pub fn emmv_stage(config: &RunConfig, latent: &LatentSet) -> Result<Vec<(String, EmMvResult)>, CliError> {
    let stage = || CliError::stage("evaluate");
    let support = SupportBox::from_points(&latent.points, BOX_MARGIN).map_err(stage())?;
    detector_configs(config)
        .iter()
        .enumerate()
        .map(|(i, dc)| {
            let fitted = FittedDetector::fit(&latent.points, dc).map_err(stage())?;
            let score_fn = |x: &[f64]| normality_from_anomaly(fitted.score_point(x));
            let data_scores: Vec<f64> = latent.points.row_iter().map(score_fn).collect();
            let seed = mix_seed(config.seed, TAG_EMMV + i as u64);
            let result = emmv_scores(&data_scores, &score_fn, &support, config.emmv.n_mc, seed).map_err(stage())?;
            Ok((dc.id().to_string(), result))
        })
        .collect()
}

pub fn analyze(config: &RunConfig, latent: &LatentSet) -> Result<Analysis, CliError> {
    let (clustering, assignment) = cluster_stage(config, latent)?;
    let detectors = detect_stage(config, latent)?;
    let emmv = if config.emmv.enabled { emmv_stage(config, latent)? } else { Vec::new() };
    let mis = misclassification_detector(&assignment, &latent.labels).map_err(CliError::stage("detect"))?;
    Ok(Analysis {
        clustering,
        assignment,
        detectors,
        emmv,
        misclassified: mis.flagged,
        majority: mis.majority,
    })
}

/// Per-point RMSE between each input row and the mean input of its class.
pub fn class_mean_deviation(data: &LabeledDataset) -> Vec<f64> {
    let dim = data.dim();
    let mut sums = vec![vec![0.0; dim]; data.class_count()];
    let counts = data.class_counts();
    for (x, &y) in data.features().row_iter().zip(data.labels()) {
        for (s, v) in sums[y].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    data.features()
        .row_iter()
        .zip(data.labels())
        .map(|(x, &y)| {
            let sq: f64 = x.iter().zip(&sums[y]).map(|(a, b)| (a - b) * (a - b)).sum();
            (sq / dim as f64).sqrt()
        })
        .collect()
}

/// Tracks written files so a failed run can remove them.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Output {
            stage: "report",
            path,
            source,
        })
    }

    fn remove_all(&self) {
        for name in &self.written {
            let _ = std::fs::remove_file(self.dir.join(name));
        }
    }
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))
}

pub fn latent_csv(latent: &LatentSet) -> Result<Vec<u8>, CliError> {
    let mut header: Vec<String> = (1..=latent.dim()).map(|d| format!("z{d}")).collect();
    header.push("label".into());
    csv_bytes(
        &header,
        latent.points.row_iter().zip(&latent.labels).map(|(p, l)| {
            let mut r: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            r.push(l.to_string());
            r
        }),
    )
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        &["k".into(), "v_score".into()],
        rows.iter().map(|r| vec![r.k.to_string(), r.v_score.to_string()]),
    )
}

pub fn scores_csv(labels: &[usize], detectors: &[(AnomalyScores, Vec<usize>)], misclassified: &[usize]) -> Result<Vec<u8>, CliError> {
    let n = labels.len();
    let mut header = vec!["index".to_string(), "label".to_string()];
    let mut masks = Vec::new();
    for (s, flagged) in detectors {
        header.push(s.detector().to_string());
        header.push(format!("{}_flagged", s.detector()));
        let mut m = vec![false; n];
        flagged.iter().for_each(|&i| m[i] = true);
        masks.push(m);
    }
    header.push("misclassified".into());
    let mut mis = vec![false; n];
    misclassified.iter().for_each(|&i| mis[i] = true);
    csv_bytes(
        &header,
        (0..n).map(|i| {
            let mut r = vec![i.to_string(), labels[i].to_string()];
            for ((s, _), m) in detectors.iter().zip(&masks) {
                r.push(s.scores[i].to_string());
                r.push(u8::from(m[i]).to_string());
            }
            r.push(u8::from(mis[i]).to_string());
            r
        }),
    )
}

/// Long-format curves: one `(detector, curve, grid, value)` row per point.
pub fn emmv_curves_csv(results: &[(String, EmMvResult)]) -> Result<Vec<u8>, CliError> {
    let rows = results.iter().flat_map(|(name, r)| {
        [("em", &r.em_curve), ("mv", &r.mv_curve)].into_iter().flat_map(move |(kind, c)| {
            c.grid
                .iter()
                .zip(&c.values)
                .map(move |(g, v)| vec![name.clone(), kind.to_string(), g.to_string(), v.to_string()])
        })
    });
    csv_bytes(&["detector".into(), "curve".into(), "grid".into(), "value".into()], rows)
}

pub fn emmv_json(results: &[(String, EmMvResult)]) -> Result<Vec<u8>, CliError> {
    let records: Vec<serde_json::Value> = results
        .iter()
        .map(|(name, r)| serde_json::json!({ "detector": name, "result": r }))
        .collect();
    json_bytes(&records)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Config(format!("json: {e}")))?;
    v.push(b'\n');
    Ok(v)
}

/// Runs every stage; on failure, files written so far are removed.
pub fn run_pipeline(config: &RunConfig) -> Result<Report, CliError> {
    run_with_model(config, None)
}

/// As [`run_pipeline`], but reuses `model` instead of training when given.
pub fn run_with_model(config: &RunConfig, model: Option<TrainedModel>) -> Result<Report, CliError> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir).map_err(|source| CliError::Output {
        stage: "report",
        path: config.output_dir.clone(),
        source,
    })?;
    let mut out = Outputs {
        dir: config.output_dir.clone(),
        written: Vec::new(),
    };
    let result = run_stages(config, model, &mut out);
    if result.is_err() {
        out.remove_all();
    }
    result
}

fn run_stages(config: &RunConfig, model: Option<TrainedModel>, out: &mut Outputs) -> Result<Report, CliError> {
    let input_sha256 = input_hash(config)?;
    let data = load_data(config)?;
    data.train.require_all_classes().map_err(CliError::stage("load"))?;
    log::info!("data: {} train rows, {} test rows", data.train.len(), data.test.len());

    let (model, history) = match model {
        Some(m) => {
            if m.input_dim() != data.train.dim() {
                return Err(CliError::Config(format!(
                    "model expects {} features, data has {}",
                    m.input_dim(),
                    data.train.dim()
                )));
            }
            (m, None)
        }
        None => {
            let (m, h) = TrainedModel::train(&config.model, config.seed, &data.train)?;
            (m, Some(h))
        }
    };
    let model_path = out.path("model.clv");
    model.save(&model_path)?;
    log::info!("model {} ready", model.id());

    let latent = model.project(&data.test)?;
    out.write("latent.csv", &latent_csv(&latent)?)?;
    let analysis = analyze(config, &latent)?;
    out.write("vscore_sweep.csv", &sweep_csv(&analysis.clustering.sweep)?)?;
    out.write(
        "anomaly_scores.csv",
        &scores_csv(&latent.labels, &analysis.detectors, &analysis.misclassified)?,
    )?;
    if config.emmv.enabled {
        out.write("emmv.json", &emmv_json(&analysis.emmv)?)?;
        out.write("emmv_curves.csv", &emmv_curves_csv(&analysis.emmv)?)?;
    }

    let class_count = data.test.class_count();
    let class_names = data.test.class_names().to_vec();
    let mut summaries = Vec::new();
    let mut bars = Vec::new();
    for (scores, flagged) in &analysis.detectors {
        let fractions = flagged_fraction_per_class(&latent.labels, flagged, class_count);
        let overall = flagged.len() as f64 / latent.len() as f64;
        let reference = vec![overall; class_count];
        let rmse = series_rmse(
            &[BarSeries {
                name: scores.detector().into(),
                values: fractions.clone(),
            }],
            &reference,
        )?[0];
        let emmv = analysis.emmv.iter().find(|(n, _)| n == scores.detector()).map(|(_, r)| r);
        summaries.push(DetectorSummary {
            detector: scores.detector().to_string(),
            flagged: flagged.len(),
            flagged_fraction_per_class: fractions.clone(),
            rmse,
            em_area: emmv.map(|r| r.em_area),
            mv_area: emmv.map(|r| r.mv_area),
        });
        bars.push(BarSeries {
            name: scores.detector().to_string(),
            values: fractions,
        });
    }

    if latent.dim() == 2 {
        let title = |what: &str| format!("{} latent space, {what}", model.id());
        render_scatter(&latent, &Coloring::Class { names: class_names.clone() }, &title("class"), &out.path("latent_class.svg"))?;
        render_scatter(
            &latent,
            &Coloring::Cluster {
                assignment: analysis.assignment.assignment.clone(),
            },
            &title("cluster"),
            &out.path("latent_cluster.svg"),
        )?;
        let highlighted = top_anomalies(&analysis.detectors[0].0, config.detector.highlight.min(latent.len()));
        render_scatter(
            &latent,
            &Coloring::AnomalyFlag { flagged: highlighted },
            &title(analysis.detectors[0].0.detector()),
            &out.path("latent_anomaly.svg"),
        )?;
        render_scatter(
            &latent,
            &Coloring::Deviation {
                values: class_mean_deviation(&data.test),
            },
            &title("deviation from class mean"),
            &out.path("latent_deviation.svg"),
        )?;
    } else {
        log::warn!("latent space has {} dimensions; scatter plots skipped", latent.dim());
    }
    let overall = summaries.first().map_or(0.0, |s| s.flagged as f64 / latent.len() as f64);
    render_class_bars(
        &bars,
        &vec![overall; class_count],
        &class_names,
        "Flagged share per class",
        &out.path("class_bars.svg"),
    )?;

    out.written.push("report.json".into());
    let report = Report {
        schema: REPORT_SCHEMA.to_string(),
        seed: config.seed,
        input_sha256,
        config: config.clone(),
        data: DataSummary {
            train_id: data.train.id.clone(),
            test_id: data.test.id.clone(),
            train_rows: data.train.len(),
            test_rows: data.test.len(),
            class_names,
        },
        model: ModelSummary {
            id: model.id(),
            first_epoch_loss: history.as_ref().and_then(|h| h.first()),
            final_epoch_loss: history.as_ref().and_then(|h| h.last()),
        },
        clustering: analysis.clustering,
        detectors: summaries,
        misclassification: MisclassificationSummary {
            flagged: analysis.misclassified.len(),
            majority: analysis.majority,
        },
        manifest: out.written.clone(),
    };
    let path = out.dir.join("report.json");
    std::fs::write(&path, json_bytes(&report)?).map_err(|source| CliError::Output {
        stage: "report",
        path,
        source,
    })?;
    Ok(report)
}

/// Reads a latent CSV written by the pipeline.
pub fn read_latent_csv(path: &Path) -> Result<LatentSet, CliError> {
    let data_err = |msg: String| CliError::Stage {
        stage: "load",
        source: clvae_core::Error::Format {
            path: path.to_path_buf(),
            reason: msg,
        },
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let dim = r.headers().map_err(|e| data_err(e.to_string()))?.len().saturating_sub(1);
    if dim == 0 {
        return Err(data_err("latent CSV needs z columns and a label column".into()));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| data_err(format!("{s:?}: {e}")));
        rows.push((0..dim).map(|d| parse(&rec[d])).collect::<Result<Vec<_>, _>>()?);
        labels.push(rec[dim].parse::<usize>().map_err(|e| data_err(e.to_string()))?);
    }
    let points = clvae_core::numerics::Tensor::from_rows(&rows).map_err(CliError::stage("load"))?;
    LatentSet::new(
        points,
        labels,
        clvae_core::Provenance {
            model_id: "file".into(),
            dataset_id: path.display().to_string(),
        },
    )
    .map_err(CliError::stage("load"))
}
