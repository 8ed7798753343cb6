//! Implementation of every verb.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hinet::data::{
    atomic_write, cohort_stats, prepare, read_cohort, read_surgery, split_cohort, synth_generate, write_cohort,
    CohortSpec, CohortStats, Normalizer, PreparedSurgery, SurgeryRecord,
};
use hinet::metrics::{
    alarms_at, alarms_per_10h, operating_point, pr_auc, report, MetricsReport, PredictionSet,
};
use hinet::model::{
    forecast_alarms, load_checkpoint, save_checkpoint, stream_predictions, train, EpochRecord, HiNet, HiNetConfig,
    TrainHooks, TrainReport, Variant,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const CONFIG_FILE: &str = "run.config";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

/// Which surgeries of the cohort a command reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
    All,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out.clone().ok_or_else(|| CliError::Usage("an output directory is required (--out)".into()))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn load_records(cfg: &RunConfig) -> Result<Vec<SurgeryRecord>, CliError> {
    let path = cfg.cohort.as_ref().ok_or_else(|| CliError::Usage("a cohort is required (--cohort)".into()))?;
    if !path.exists() {
        return Err(CliError::Data(format!("cohort {} does not exist", path.display())));
    }
    Ok(read_cohort(path)?)
}

fn check_channels(config: &HiNetConfig, records: &[SurgeryRecord]) -> Result<(), CliError> {
    match records.iter().find(|r| r.channels() != config.channels) {
        Some(r) => Err(CliError::Data(format!(
            "surgery {} has {} channels, model expects {}",
            r.id,
            r.channels(),
            config.channels
        ))),
        None => Ok(()),
    }
}

fn split_records(records: &[SurgeryRecord], seed: u64) -> Result<[Vec<SurgeryRecord>; 3], CliError> {
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    Ok(split_cohort(&ids, seed)?.partition(records)?)
}

fn select(records: Vec<SurgeryRecord>, part: SplitPart, seed: u64) -> Result<Vec<SurgeryRecord>, CliError> {
    if part == SplitPart::All {
        return Ok(records);
    }
    let [train, validation, test] = split_records(&records, seed)?;
    Ok(match part {
        SplitPart::Train => train,
        SplitPart::Validation => validation,
        _ => test,
    })
}

fn prepare_all(
    records: &[SurgeryRecord],
    normalizer: &Normalizer,
    config: &HiNetConfig,
) -> Result<Vec<PreparedSurgery>, CliError> {
    let spec = config.label_spec();
    Ok(records.iter().map(|r| prepare(r, normalizer, &spec)).collect::<hinet::Result<_>>()?)
}

fn checkpoint_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Usage("a checkpoint is required (--checkpoint)".into()))
}

fn load_model(cfg: &RunConfig) -> Result<(HiNet, Normalizer), CliError> {
    let ckpt = load_checkpoint(checkpoint_path(cfg)?)?;
    let normalizer = ckpt
        .normalizer
        .ok_or_else(|| CliError::Data("checkpoint carries no normalizer".into()))?;
    Ok((ckpt.net, normalizer))
}

// ---------------------------------------------------------------- generate

#[derive(Serialize)]
struct PrevalenceReport {
    target: CohortSpec,
    measured: CohortStats,
}

pub fn generate(spec: &CohortSpec, out: &Path) -> Result<CohortStats, CliError> {
    if spec.n_surgeries == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let records = synth_generate(spec)?;
    write_cohort(out, &records)?;
    let measured = cohort_stats(&records, hinet::data::PERSISTENT_MIN_RUN);
    write_json(
        &out.join("prevalence.json"),
        &PrevalenceReport {
            target: spec.clone(),
            measured: measured.clone(),
        },
    )?;
    Ok(measured)
}

// ---------------------------------------------------------------- train

fn print_epoch(r: &EpochRecord) {
    let val = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.5}"));
    eprintln!(
        "epoch {:>3}  loss {:.5}  l_p {:.5}  l_f {:.5}  l_r {:.5}  val_l_p {}  val_l_f {}",
        r.epoch,
        r.train_loss,
        r.train_lp,
        r.train_lf,
        r.train_lr,
        val(r.val_lp),
        val(r.val_lf)
    );
}

/// Result of training one model into `dir`.
#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub lambda: f64,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub stopped_early: bool,
    pub epochs_run: usize,
    /// Validation PR-AUC of predictor variants.
    pub validation_pr_auc: Option<f64>,
}

fn train_into(cfg: &RunConfig, records: &[SurgeryRecord], dir: &Path) -> Result<TrainSummary, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    atomic_write(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    check_channels(&cfg.net, records)?;
    let [tr, va, _] = split_records(records, cfg.split_seed)?;
    let normalizer = Normalizer::fit(&tr)?;
    let (tr, va) = (prepare_all(&tr, &normalizer, &cfg.net)?, prepare_all(&va, &normalizer, &cfg.net)?);
    let mut net = HiNet::new(cfg.net.clone())?;
    let hooks = TrainHooks {
        diagnostics: Some(dir.join("diagnostics.csv")),
        on_epoch: Some(print_epoch),
    };
    let rep: TrainReport = train(&mut net, &tr, &va, &cfg.train, &hooks)?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &net, Some(&normalizer))?;
    atomic_write(&dir.join(HISTORY_FILE), rep.history_csv().as_bytes())?;
    // undefined when the validation split holds no positive minute
    let validation_pr_auc = if net.has_predictor() {
        pr_auc(&stream_predictions(&net, &va)?).ok()
    } else {
        None
    };
    let summary = TrainSummary {
        variant: cfg.net.variant,
        lambda: cfg.net.lambda,
        best_epoch: rep.best_epoch,
        best_validation: rep.best_validation,
        stopped_early: rep.stopped_early,
        epochs_run: rep.history.len(),
        validation_pr_auc,
    };
    write_json(&dir.join("train_summary.json"), &summary)?;
    Ok(summary)
}

fn lambda_dir(lambda: f64) -> String {
    format!("lambda_{lambda:e}")
}

/// Trains one model, or one per λ of the grid and reports the best.
pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    let records = load_records(cfg)?;
    if cfg.lambda_grid.is_empty() {
        let s = train_into(cfg, &records, &dir)?;
        println!(
            "trained {} ({} epochs, best {}), checkpoint {}",
            s.variant,
            s.epochs_run,
            s.best_epoch,
            dir.join(CHECKPOINT_FILE).display()
        );
        return Ok(());
    }
    atomic_write(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let mut rows = Vec::new();
    for &lambda in &cfg.lambda_grid {
        let mut one = cfg.clone();
        one.net.lambda = lambda;
        one.lambda_grid.clear();
        eprintln!("lambda {lambda:e}");
        rows.push(train_into(&one, &records, &dir.join(lambda_dir(lambda)))?);
    }
    // predictor variants rank by validation PR-AUC, forecast-only ones by validation loss
    let key = |s: &TrainSummary| s.validation_pr_auc.unwrap_or(-s.best_validation);
    let best = rows
        .iter()
        .max_by(|a, b| key(a).total_cmp(&key(b)))
        .expect("grid is not empty");
    let mut csv = String::from("lambda,validation_pr_auc,best_validation,best_epoch\n");
    for s in &rows {
        let pr = s.validation_pr_auc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{pr},{},{}", s.lambda, s.best_validation, s.best_epoch);
    }
    atomic_write(&dir.join("lambda_grid.csv"), csv.as_bytes())?;
    let bytes = fs::read(dir.join(lambda_dir(best.lambda)).join(CHECKPOINT_FILE))
        .map_err(|e| CliError::Data(e.to_string()))?;
    atomic_write(&dir.join(CHECKPOINT_FILE), &bytes)?;
    write_json(&dir.join("train_summary.json"), best)?;
    println!("best lambda {} (validation PR-AUC {:?})", best.lambda, best.validation_pr_auc);
    Ok(())
}

// ---------------------------------------------------------------- eval

/// Metrics of a forecast-then-detect model, which has no scores to rank.
#[derive(Clone, Debug, Serialize)]
pub struct DetectionReport {
    pub outcome: hinet::data::Outcome,
    pub sensitivity: f64,
    pub precision: Option<f64>,
    pub alarms_per_10h: f64,
    pub n_surgeries: usize,
    pub n_samples: usize,
    pub prevalence: f64,
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum EvalReport {
    Scores(MetricsReport),
    Detection(DetectionReport),
}

fn per_surgery_alarms(ps: &PredictionSet, alarms: &[bool]) -> String {
    let mut csv = String::from("surgery_id,minutes,alarm_minutes,alarms_per_10h,positive_minutes,detected_positive_minutes\n");
    let mut i = 0;
    while i < ps.len() {
        let id = &ps.surgery_ids[i];
        let mut j = i;
        while j < ps.len() && ps.surgery_ids[j] == *id {
            j += 1;
        }
        let minutes = j - i;
        let alarm = (i..j).filter(|&k| alarms[k]).count();
        let positive = (i..j).filter(|&k| ps.mask[k] == 1 && ps.labels[k] == 1).count();
        let detected = (i..j).filter(|&k| ps.mask[k] == 1 && ps.labels[k] == 1 && alarms[k]).count();
        let _ = writeln!(
            csv,
            "{id},{minutes},{alarm},{},{positive},{detected}",
            alarm as f64 * 600.0 / minutes as f64
        );
        i = j;
    }
    csv
}

/// Scores a checkpoint on one part of a cohort.
pub fn evaluate(cfg: &RunConfig, part: SplitPart) -> Result<(EvalReport, PredictionSet, Vec<bool>), CliError> {
    let (net, normalizer) = load_model(cfg)?;
    let records = select(load_records(cfg)?, part, cfg.split_seed)?;
    check_channels(&net.config, &records)?;
    let prepared = prepare_all(&records, &normalizer, &net.config)?;
    if net.has_predictor() {
        let ps = stream_predictions(&net, &prepared)?;
        let rep = report(&ps, net.config.outcome, cfg.alarms_labeled_only)?;
        let alarms = alarms_at(&ps, rep.threshold_at_0_8_sens);
        Ok((EvalReport::Scores(rep), ps, alarms))
    } else {
        let (ps, alarms) = forecast_alarms(&net, &prepared)?;
        let (sensitivity, precision) = operating_point(&ps, &alarms)?;
        let rep = DetectionReport {
            outcome: net.config.outcome,
            sensitivity,
            precision,
            alarms_per_10h: alarms_per_10h(&ps, 0.5, cfg.alarms_labeled_only)?,
            n_surgeries: ps.n_surgeries(),
            n_samples: ps.len(),
            prevalence: ps.prevalence()?,
        };
        Ok((EvalReport::Detection(rep), ps, alarms))
    }
}

pub fn eval_cmd(cfg: &RunConfig, part: SplitPart) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    atomic_write(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let (rep, ps, alarms) = evaluate(cfg, part)?;
    write_json(&dir.join("metrics.json"), &rep)?;
    atomic_write(&dir.join("alarms.csv"), per_surgery_alarms(&ps, &alarms).as_bytes())?;
    let mut scores = String::from("surgery_id,minute,score,y,m\n");
    for i in 0..ps.len() {
        let _ = writeln!(
            scores,
            "{},{},{},{},{}",
            ps.surgery_ids[i], ps.minutes[i], ps.scores[i], ps.labels[i], ps.mask[i]
        );
    }
    atomic_write(&dir.join("scores.csv"), scores.as_bytes())?;
    println!("{}", serde_json::to_string_pretty(&rep).map_err(|e| CliError::Data(e.to_string()))?);
    Ok(())
}

// ---------------------------------------------------------------- predict and export

pub fn predict_cmd(cfg: &RunConfig, surgery: &Path, out: &Path) -> Result<usize, CliError> {
    let (net, normalizer) = load_model(cfg)?;
    let record = read_surgery(surgery)?;
    check_channels(&net.config, std::slice::from_ref(&record))?;
    let prepared = prepare(&record, &normalizer, &net.config.label_spec())?;
    let mut csv = String::from("minute,score\n");
    if net.has_predictor() {
        for (t, s) in net.infer_stream(&prepared)?.iter().enumerate() {
            let _ = writeln!(csv, "{t},{s}");
        }
    } else {
        for (t, a) in net.detect_from_forecast(&prepared)?.iter().enumerate() {
            let _ = writeln!(csv, "{t},{}", u8::from(*a));
        }
    }
    atomic_write(out, csv.as_bytes())?;
    Ok(prepared.minutes())
}

pub fn export_latent_cmd(cfg: &RunConfig, part: SplitPart, out: &Path) -> Result<usize, CliError> {
    let (net, normalizer) = load_model(cfg)?;
    let records = select(load_records(cfg)?, part, cfg.split_seed)?;
    check_channels(&net.config, &records)?;
    let prepared = prepare_all(&records, &normalizer, &net.config)?;
    let mut csv = String::from("surgery_id,minute");
    for i in 0..net.config.filters {
        let _ = write!(csv, ",z{i}");
    }
    for i in 0..net.config.filters {
        let _ = write!(csv, ",p{i}");
    }
    csv.push_str(",y,m\n");
    let mut rows = 0;
    for s in &prepared {
        for (t, l) in net.latents(s)?.iter().enumerate() {
            let _ = write!(csv, "{},{t}", s.id);
            for v in l.z.iter().chain(&l.p) {
                let _ = write!(csv, ",{v}");
            }
            let _ = writeln!(csv, ",{},{}", s.y[t], s.m[t]);
            rows += 1;
        }
    }
    atomic_write(out, csv.as_bytes())?;
    Ok(rows)
}

// ---------------------------------------------------------------- ablate

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub alarms_per_10h: f64,
    pub sensitivity: f64,
    pub precision: Option<f64>,
}

/// Trains and tests every variant under one configuration.
pub fn ablate_cmd(cfg: &RunConfig) -> Result<Vec<AblationRow>, CliError> {
    let dir = out_dir(cfg)?;
    atomic_write(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let records = load_records(cfg)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut one = cfg.clone();
        one.net.variant = variant;
        one.lambda_grid.clear();
        let sub = dir.join(variant.to_string());
        eprintln!("variant {variant}");
        train_into(&one, &records, &sub)?;
        one.checkpoint = Some(sub.join(CHECKPOINT_FILE));
        let (rep, ps, alarms) = evaluate(&one, SplitPart::Test)?;
        let (sensitivity, precision) = operating_point(&ps, &alarms)?;
        let row = match rep {
            EvalReport::Scores(r) => AblationRow {
                variant,
                roc_auc: Some(r.roc_auc),
                pr_auc: Some(r.pr_auc),
                alarms_per_10h: r.alarms_per_10h,
                sensitivity,
                precision,
            },
            EvalReport::Detection(r) => AblationRow {
                variant,
                roc_auc: None,
                pr_auc: None,
                alarms_per_10h: r.alarms_per_10h,
                sensitivity,
                precision,
            },
        };
        write_json(&sub.join("metrics.json"), &row)?;
        rows.push(row);
    }
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut csv = String::from("variant,roc_auc,pr_auc,alarms_per_10h,sensitivity,precision\n");
    let mut table = format!(
        "{:<10} {:>8} {:>8} {:>12} {:>11} {:>9}\n",
        "variant", "roc_auc", "pr_auc", "alarms/10h", "sensitivity", "precision"
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.variant,
            r.roc_auc.map(|v| v.to_string()).unwrap_or_default(),
            r.pr_auc.map(|v| v.to_string()).unwrap_or_default(),
            r.alarms_per_10h,
            r.sensitivity,
            r.precision.map(|v| v.to_string()).unwrap_or_default()
        );
        let _ = writeln!(
            table,
            "{:<10} {:>8} {:>8} {:>12.2} {:>11.4} {:>9}",
            r.variant.to_string(),
            opt(r.roc_auc),
            opt(r.pr_auc),
            r.alarms_per_10h,
            r.sensitivity,
            opt(r.precision)
        );
    }
    atomic_write(&dir.join("ablation.csv"), csv.as_bytes())?;
    print!("{table}");
    Ok(rows)
}
