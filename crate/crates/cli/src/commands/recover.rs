use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nha_core::derive_seed;
use nha_core::hybrid::{write_dataset, ModeId, Subtrajectory, Trajectory};
use nha_core::nn::{Activation, Matrix};
use nha_core::recovery::{
    dbscan, evaluate_mse, hierarchical_cluster, kmeanspp, noise_as_cluster, predict_labels,
    predict_state_labels, standardized_features, train_recovery, v_measure_scores, windows,
    EncoderInput, LatentKind, NhaRecoveryModel, RecoveryHyper, NOISE,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::segment::{default_index_path, load_segments};
use super::{load_dataset, output_path, parse_kebab, print_summary, write_json};
use crate::config::{cli_seed, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Kmeans,
    Hier,
    Dbscan,
    /// Gaussian latent encoder; labels from k-means on the latent means.
    LatentNode,
    /// Deterministic latent mixing the fields; labels from k-means on the codes.
    DcNode,
    /// One augmented field, no latent: every segment gets the same label.
    Anode,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Segment index; defaults to the one `nha segment` writes next to the dataset.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "latent-kind", value_parser = parse_kebab::<LatentKind>)]
    pub latent_kind: Option<LatentKind>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Trajectories held out for the final test.
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Cluster count for k-means and hierarchical; defaults to `m`.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long = "min-pts", default_value_t = 5)]
    pub min_pts: usize,
    /// Pick the clustering parameter with the best v-measure against the
    /// ground truth (k in {3, 5, 10}, eps in {0.1, 0.5, 1}).
    #[arg(long = "oracle-tune")]
    pub oracle_tune: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train_segments: usize,
    pub n_val_segments: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneResult {
    pub value: f64,
    pub v_measure: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryOutput {
    pub method: String,
    pub m: usize,
    pub seed: u64,
    pub n_trajectories: usize,
    pub n_segments: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub selected_fold: Option<usize>,
    pub test_mse: Option<f64>,
    /// Over all segments, when every segment has a ground-truth mode.
    pub v_measure: Option<f64>,
    pub homogeneity: Option<f64>,
    pub completeness: Option<f64>,
    pub v_measure_test: Option<f64>,
    pub cluster_sizes: BTreeMap<usize, usize>,
    pub n_clusters: usize,
    /// A single recovered cluster or a single true class.
    pub degenerate: bool,
    pub oracle_tuned: bool,
    pub params: BTreeMap<String, f64>,
    pub tuning: Vec<TuneResult>,
    /// Segments DBSCAN left as noise; scored as one extra cluster.
    pub noise_segments: Option<usize>,
}

struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn split(n: usize, folds: usize, test: usize, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = test.min(n.saturating_sub(folds.max(1)));
    let test = order[n - n_test..].to_vec();
    let train = order[..n - n_test].to_vec();
    Split { train, test }
}

fn apply_args(args: &RecoverArgs, cfg: &mut ExperimentConfig) {
    let h = &mut cfg.recovery;
    if let Some(m) = args.m {
        h.m = m;
    }
    if let Some(i) = args.iterations {
        h.iterations = i;
    }
    if let Some(k) = args.latent_kind {
        h.latent_kind = k;
    }
    if let Some(seed) = cli_seed(args.seed) {
        h.seed = seed;
    }
    if let Some(f) = args.folds {
        cfg.cv.folds = f;
    }
    if let Some(t) = args.test {
        cfg.cv.test = t;
    }
    match args.baseline {
        Some(Baseline::LatentNode) => {
            h.latent_kind = LatentKind::GaussianReparam;
            h.encoder_input = EncoderInput::Segment;
        }
        Some(Baseline::DcNode) => {
            h.latent_kind = LatentKind::Deterministic;
            h.encoder_input = EncoderInput::Segment;
        }
        Some(Baseline::Anode) => {
            h.latent_kind = LatentKind::None;
            h.encoder_input = EncoderInput::Segment;
            if h.augment == 0 {
                h.augment = 2;
            }
            if h.field_hidden.is_empty() {
                h.field_hidden = vec![64, 64, 64];
                h.field_activations = vec![Activation::Softplus; 3];
            }
        }
        _ => {}
    }
}

fn flatten(segs: &[Vec<Subtrajectory>], which: &[usize]) -> Vec<Subtrajectory> {
    which
        .iter()
        .flat_map(|&i| segs[i].iter().cloned())
        .collect()
}

fn truth_of(segs: &[Subtrajectory]) -> Option<Vec<usize>> {
    let t: Option<Vec<usize>> = segs.iter().map(|s| s.true_mode.map(|m| m.0)).collect();
    t.filter(|t| !t.is_empty())
}

pub fn run(args: &RecoverArgs, cfg: &mut ExperimentConfig) -> CliResult<()> {
    apply_args(args, cfg);
    let data = load_dataset(&args.dataset)?;
    let index = args
        .segments
        .clone()
        .unwrap_or_else(|| default_index_path(&args.dataset));
    let per_traj = load_segments(&data, &index)?;
    let all: Vec<Subtrajectory> = per_traj.iter().flatten().cloned().collect();
    if all.is_empty() {
        return Err(CliError::Config("no segments to recover".into()));
    }
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone());
    let seed = cfg.recovery.seed;

    let (mut report, labels, model) = match args.baseline {
        Some(b @ (Baseline::Kmeans | Baseline::Hier | Baseline::Dbscan)) => {
            let (report, labels) = cluster_baseline(b, args, cfg, &all)?;
            (report, labels, None)
        }
        _ => neural(args, cfg, &data, &per_traj)?,
    };
    report.n_trajectories = data.len();
    report.n_segments = all.len();

    // per-sample labels for the labelled dataset
    let mut labelled = Vec::with_capacity(data.len());
    let mut cursor = 0;
    for (traj, segs) in data.iter().zip(&per_traj) {
        let mut modes = vec![ModeId(0); traj.len()];
        for seg in segs {
            let l = labels[cursor];
            cursor += 1;
            let per_sample = match &model {
                Some(m) if m.encoder_input == EncoderInput::State && m.encoder.is_some() => {
                    predict_state_labels(m, &seg.states)?
                }
                _ => vec![l; seg.len()],
            };
            for (k, l) in per_sample.into_iter().enumerate() {
                modes[seg.start_idx + k] = ModeId(l);
            }
        }
        labelled.push(Trajectory {
            mode_labels: Some(modes),
            event_times: None,
            ..traj.clone()
        });
    }
    let report_path = output_path(&out_dir, "recovery_report.json")?;
    write_json(&report_path, &report)?;
    if let Some(m) = &model {
        write_json(&out_dir.join("recovery.ckpt.json"), &m.checkpoint())?;
    }
    write_dataset(out_dir.join("labeled.jsonl"), &labelled)?;
    print_summary(&serde_json::json!({
        "method": report.method,
        "seed": seed,
        "v_measure": report.v_measure,
        "test_mse": report.test_mse,
        "n_clusters": report.n_clusters,
        "degenerate": report.degenerate,
        "report": report_path.display().to_string(),
    }))
}

fn empty_report(method: &str, cfg: &ExperimentConfig) -> RecoveryOutput {
    RecoveryOutput {
        method: method.into(),
        m: cfg.recovery.m,
        seed: cfg.recovery.seed,
        n_trajectories: 0,
        n_segments: 0,
        train_ids: Vec::new(),
        test_ids: Vec::new(),
        folds: Vec::new(),
        selected_fold: None,
        test_mse: None,
        v_measure: None,
        homogeneity: None,
        completeness: None,
        v_measure_test: None,
        cluster_sizes: BTreeMap::new(),
        n_clusters: 0,
        degenerate: false,
        oracle_tuned: false,
        params: BTreeMap::new(),
        tuning: Vec::new(),
        noise_segments: None,
    }
}

/// Fills the label-dependent fields of `report`.
fn score(report: &mut RecoveryOutput, segs: &[Subtrajectory], labels: &[usize]) -> CliResult<()> {
    let mut sizes = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_insert(0) += 1;
    }
    report.n_clusters = sizes.len();
    report.cluster_sizes = sizes;
    let mut degenerate = report.n_clusters <= 1;
    if let Some(truth) = truth_of(segs) {
        let s = v_measure_scores(&truth, labels)?;
        report.v_measure = Some(s.v_measure);
        report.homogeneity = Some(s.homogeneity);
        report.completeness = Some(s.completeness);
        let mut classes = truth.clone();
        classes.sort_unstable();
        classes.dedup();
        degenerate |= classes.len() <= 1;
    }
    report.degenerate = degenerate;
    Ok(())
}

fn cluster_labels(
    b: Baseline,
    points: &[Vec<f64>],
    param: f64,
    min_pts: usize,
    seed: u64,
) -> CliResult<(Vec<usize>, usize)> {
    Ok(match b {
        Baseline::Kmeans => (kmeanspp(points, param as usize, seed)?.labels, 0),
        Baseline::Hier => (hierarchical_cluster(points, param as usize)?, 0),
        _ => {
            let raw = dbscan(points, param, min_pts)?;
            let noise = raw.iter().filter(|&&l| l == NOISE).count();
            (noise_as_cluster(&raw), noise)
        }
    })
}

fn cluster_baseline(
    b: Baseline,
    args: &RecoverArgs,
    cfg: &ExperimentConfig,
    all: &[Subtrajectory],
) -> CliResult<(RecoveryOutput, Vec<usize>)> {
    let name = match b {
        Baseline::Kmeans => "kmeans",
        Baseline::Hier => "hier",
        _ => "dbscan",
    };
    let mut report = empty_report(name, cfg);
    let (points, _) = standardized_features(all)?;
    let seed = cfg.recovery.seed;
    let param_name = if b == Baseline::Dbscan { "eps" } else { "k" };
    let chosen = if args.oracle_tune {
        let truth = truth_of(all)
            .ok_or_else(|| CliError::Config("--oracle-tune needs ground-truth modes".into()))?;
        let grid: Vec<f64> = if b == Baseline::Dbscan {
            vec![0.1, 0.5, 1.0]
        } else {
            [3.0, 5.0, 10.0]
                .into_iter()
                .filter(|&k| k as usize <= points.len())
                .collect()
        };
        let mut best: Option<(f64, f64)> = None;
        for &value in &grid {
            let (labels, _) = cluster_labels(b, &points, value, args.min_pts, seed)?;
            let v = v_measure_scores(&truth, &labels)?.v_measure;
            report.tuning.push(TuneResult {
                value,
                v_measure: v,
            });
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((value, v));
            }
        }
        report.oracle_tuned = true;
        best.ok_or_else(|| CliError::Config("no admissible tuning value".into()))?
            .0
    } else if b == Baseline::Dbscan {
        args.eps
    } else {
        args.k.unwrap_or(cfg.recovery.m) as f64
    };
    report.params.insert(param_name.into(), chosen);
    if b == Baseline::Dbscan {
        report.params.insert("min_pts".into(), args.min_pts as f64);
    }
    let (labels, noise) = cluster_labels(b, &points, chosen, args.min_pts, seed)?;
    if b == Baseline::Dbscan {
        report.noise_segments = Some(noise);
    }
    score(&mut report, all, &labels)?;
    Ok((report, labels))
}

fn training_set(cfg: &ExperimentConfig, segs: &[Subtrajectory]) -> Vec<Subtrajectory> {
    match cfg.windows {
        Some(w) => windows(segs, w.len, w.stride),
        None => segs.to_vec(),
    }
}

/// Labels from k-means over the latent codes, for continuous-latent baselines.
fn latent_kmeans(
    model: &NhaRecoveryModel,
    segs: &[Subtrajectory],
    k: usize,
    seed: u64,
) -> CliResult<Vec<usize>> {
    let rows = segs
        .iter()
        .map(|s| model.segment_input(s))
        .collect::<Result<Vec<_>, _>>()?;
    let codes = model.latent_scores(&Matrix::from_rows(&rows)?)?.to_rows();
    Ok(kmeanspp(&codes, k.min(codes.len()), seed)?.labels)
}

type NeuralOutcome = (RecoveryOutput, Vec<usize>, Option<NhaRecoveryModel>);

fn neural(
    args: &RecoverArgs,
    cfg: &ExperimentConfig,
    data: &[Trajectory],
    per_traj: &[Vec<Subtrajectory>],
) -> CliResult<NeuralOutcome> {
    let method = match args.baseline {
        Some(Baseline::LatentNode) => "latent-node",
        Some(Baseline::DcNode) => "dc-node",
        Some(Baseline::Anode) => "anode",
        _ => "nha",
    };
    let mut report = empty_report(method, cfg);
    let seed = cfg.recovery.seed;
    let sp = split(data.len(), cfg.cv.folds, cfg.cv.test, seed);
    report.train_ids = sp.train.iter().map(|&i| data[i].id.clone()).collect();
    report.test_ids = sp.test.iter().map(|&i| data[i].id.clone()).collect();
    let folds = cfg.cv.folds.min(sp.train.len()).max(1);

    let mut best: Option<(f64, usize, NhaRecoveryModel)> = None;
    for fold in 0..folds {
        let (fit_idx, val_idx): (Vec<usize>, Vec<usize>) = if folds == 1 {
            (sp.train.clone(), Vec::new())
        } else {
            let in_fold = |pos: usize| pos % folds == fold;
            let pick = |val: bool| {
                sp.train
                    .iter()
                    .enumerate()
                    .filter(|&(pos, _)| in_fold(pos) == val)
                    .map(|(_, &i)| i)
                    .collect()
            };
            (pick(false), pick(true))
        };
        let fit = flatten(per_traj, &fit_idx);
        let val = flatten(per_traj, &val_idx);
        let mut hyper: RecoveryHyper = cfg.recovery.clone();
        hyper.seed = derive_seed(seed, fold as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, 1));
        let train_set = training_set(cfg, &fit);
        let mut model = NhaRecoveryModel::new(&hyper, &train_set, &mut rng)?;
        let r = train_recovery(&mut model, &train_set, &hyper)?;
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(evaluate_mse(&model, &val)?)
        };
        report.folds.push(FoldResult {
            fold,
            n_train_segments: fit.len(),
            n_val_segments: val.len(),
            train_mse: evaluate_mse(&model, &fit)?,
            val_mse,
            final_loss: r.smoothed_final_loss(50),
        });
        let key = val_mse.unwrap_or(r.train_mse);
        if best.as_ref().is_none_or(|(b, _, _)| key < *b) {
            best = Some((key, fold, model));
        }
    }
    let (_, fold, model) = best.expect("at least one fold");
    report.selected_fold = Some(fold);
    let test = flatten(per_traj, &sp.test);
    if !test.is_empty() {
        report.test_mse = Some(evaluate_mse(&model, &test)?);
    }
    let all: Vec<Subtrajectory> = per_traj.iter().flatten().cloned().collect();
    let labels = match model.latent_kind {
        LatentKind::GaussianReparam | LatentKind::Deterministic => {
            latent_kmeans(&model, &all, cfg.recovery.m, seed)?
        }
        _ => predict_labels(&model, &all)?,
    };
    score(&mut report, &all, &labels)?;
    if let Some(truth) = truth_of(&test) {
        let test_labels = match model.latent_kind {
            LatentKind::GaussianReparam | LatentKind::Deterministic => {
                // reuse the assignment computed over all segments
                let mut out = Vec::new();
                let mut k = 0;
                for (i, segs) in per_traj.iter().enumerate() {
                    for _ in segs {
                        if sp.test.contains(&i) {
                            out.push(labels[k]);
                        }
                        k += 1;
                    }
                }
                out
            }
            _ => predict_labels(&model, &test)?,
        };
        report.v_measure_test = Some(v_measure_scores(&truth, &test_labels)?.v_measure);
    }
    Ok((report, labels, Some(model)))
}
