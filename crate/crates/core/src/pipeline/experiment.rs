use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::{
    compute_iws, train_model, write_history_csv, Effective, ExperimentConfig, IwTable, PipelineError, Producer,
    StageConfig, TrainConfig, TrainOutcome,
};
use crate::data::{
    build_test_sets, inject, make_pair_splits, manifest_rows, write_manifest, ChannelStats, CifarDataset, DatasetSplit,
    PreparedSplit, ShortcutKind, ShortcutPattern, ShortcutSpec, TestSets,
};
use crate::metrics::{
    accuracy, aggregate_runs, iw_distribution_report, overall_benefit, write_aggregate_csv, AggregateRow, Condition,
    EvalResult, IwReport, ObResult, ResultRecord, SetCounts,
};
use crate::nn::{glorot_init, model_by_name, save_checkpoint, CheckpointFile, ModelSpec};
use crate::seeds::RunSeeds;

/// Everything one run trains and evaluates on. All conditions of a run
/// share it.
pub struct PairData {
    pub class_pair: [u8; 2],
    pub shortcut: ShortcutSpec,
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
    pub tests: TestSets,
    pub stats: ChannelStats,
    pub prepared_train: PreparedSplit,
    pub prepared_val: PreparedSplit,
    pub prepared_tests: [PreparedSplit; 3],
}

/// Pair selection, split, shortcut injection, test-set construction and
/// standardization with post-injection training statistics. A pure function
/// of the config and the run's seeds.
pub fn build_pair_data(
    data: &CifarDataset,
    cfg: &ExperimentConfig,
    seeds: &RunSeeds,
) -> Result<PairData, PipelineError> {
    let eff = cfg.effective();
    let [a, b] = cfg.class_pair;
    let splits = make_pair_splits(data, a, b, seeds.split_seed, eff.sizes)?;
    let sc = &cfg.shortcut;
    let shortcut = match sc.kind {
        ShortcutKind::Local => ShortcutSpec {
            pattern: ShortcutPattern::Local(sc.line.clone()),
            prevalence: sc.prevalence,
            injection_seed: seeds.injection_seed,
        },
        ShortcutKind::Global => {
            ShortcutSpec::global(sc.variance, seeds.mask_seed, sc.prevalence, seeds.injection_seed)?
        }
    };
    let train = inject(&splits.train, &shortcut)?;
    let validation = inject(&splits.validation, &shortcut)?;
    let tests = build_test_sets(&splits.test, &shortcut)?;
    let stats = ChannelStats::from_records(&train.records);
    Ok(PairData {
        class_pair: splits.class_pair,
        prepared_train: PreparedSplit::new(&train, &stats),
        prepared_val: PreparedSplit::new(&validation, &stats),
        prepared_tests: [
            PreparedSplit::new(&tests.congruent, &stats),
            PreparedSplit::new(&tests.incongruent, &stats),
            PreparedSplit::new(&tests.neutral, &stats),
        ],
        shortcut,
        train,
        validation,
        tests,
        stats,
    })
}

/// A trained network and what it was trained for.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    /// `lcn`, `hcn_ordinary`, `hcn_lcn_iw` or `hcn_hcn_iw`.
    pub role: &'static str,
    pub spec: ModelSpec,
    pub init_seed: u64,
    pub outcome: TrainOutcome,
}

/// Models of one run that several conditions use.
#[derive(Default)]
pub struct ModelCache {
    pub lcn: Option<TrainedModel>,
    pub ordinary: Option<TrainedModel>,
}

pub struct ConditionOutcome {
    pub eval: EvalResult,
    /// Roles of every network the condition depends on, producer first.
    pub models: Vec<&'static str>,
    pub target: TrainedModel,
    pub iws: Option<IwTable>,
}

fn train_config(stage: &StageConfig, init_seed: u64, batch_seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: stage.epochs,
        initial_lr: stage.initial_lr,
        momentum: stage.momentum,
        weight_decay: stage.weight_decay,
        batch_size: stage.batch_size,
        init_seed,
        batch_seed,
        checkpoint_metric: stage.checkpoint_metric,
    }
}

fn train_role(
    role: &'static str,
    stage: &StageConfig,
    data: &PairData,
    init_seed: u64,
    batch_seed: u64,
    weights: Option<&[f64]>,
) -> Result<TrainedModel, PipelineError> {
    let spec = model_by_name(&stage.model, 2)?;
    let params = glorot_init(&spec, init_seed)?;
    let config = train_config(stage, init_seed, batch_seed);
    let t0 = Instant::now();
    let outcome = train_model(
        &spec,
        params,
        &config,
        &data.prepared_train,
        &data.prepared_val,
        weights,
    )?;
    log::info!(
        "trained {role} ({}, {} epochs) in {:.1}s; best epoch {} with val {:.4}",
        stage.model,
        stage.epochs,
        t0.elapsed().as_secs_f64(),
        outcome.best.epoch,
        outcome.best.metric
    );
    Ok(TrainedModel {
        role,
        spec,
        init_seed,
        outcome,
    })
}

fn evaluate_model(
    model: &TrainedModel,
    data: &PairData,
    condition: Condition,
    run: u64,
) -> Result<EvalResult, PipelineError> {
    let p = &model.outcome.best.params;
    let [c, i, n] = &data.prepared_tests;
    Ok(EvalResult {
        condition,
        run,
        acc_congruent: accuracy(&model.spec, p, c)?,
        acc_incongruent: accuracy(&model.spec, p, i)?,
        acc_neutral: accuracy(&model.spec, p, n)?,
        counts: SetCounts {
            congruent: c.len(),
            incongruent: i.len(),
            neutral: n.len(),
        },
    })
}

fn ordinary_hcn(
    eff: &Effective,
    data: &PairData,
    seeds: &RunSeeds,
    cache: &mut ModelCache,
) -> Result<TrainedModel, PipelineError> {
    if cache.ordinary.is_none() {
        cache.ordinary = Some(train_role(
            "hcn_ordinary",
            &eff.hcn,
            data,
            seeds.hcn_init,
            seeds.hcn_batches,
            None,
        )?);
    }
    Ok(cache.ordinary.clone().expect("just filled"))
}

/// Train and evaluate one condition.
///
/// * ordinary: one HCN, unweighted.
/// * lcn_iw: an LCN, then a fresh HCN weighted by the LCN's weights.
/// * hcn_iw: an ordinarily trained HCN, then a fresh HCN (different init)
///   weighted by the first one's weights.
///
/// The IW-producing HCN of `hcn_iw` is exactly the ordinary HCN (same seeds,
/// same data), so it is taken from `cache` when already trained.
pub fn run_condition(
    condition: Condition,
    data: &PairData,
    eff: &Effective,
    seeds: &RunSeeds,
    run: u64,
    cache: &mut ModelCache,
) -> Result<ConditionOutcome, PipelineError> {
    let weighted = |producer: &TrainedModel, kind: Producer| -> Result<IwTable, PipelineError> {
        compute_iws(
            &producer.spec,
            &producer.outcome.best.params,
            &data.prepared_train,
            data.class_pair,
            kind,
            &format!("run_{run:03}/{}@epoch{}", producer.role, producer.outcome.best.epoch),
        )
    };
    let (models, target, iws) = match condition {
        Condition::Ordinary => {
            let m = ordinary_hcn(eff, data, seeds, cache)?;
            (vec![m.role], m, None)
        }
        Condition::LcnIw => {
            if cache.lcn.is_none() {
                cache.lcn = Some(train_role(
                    "lcn",
                    &eff.lcn,
                    data,
                    seeds.lcn_init,
                    seeds.lcn_batches,
                    None,
                )?);
            }
            let lcn = cache.lcn.as_ref().expect("just filled");
            let table = weighted(lcn, Producer::Lcn)?;
            let t = train_role(
                "hcn_lcn_iw",
                &eff.hcn,
                data,
                seeds.hcn_init,
                seeds.hcn_batches,
                Some(&table.weights()),
            )?;
            (vec![lcn.role, t.role], t, Some(table))
        }
        Condition::HcnIw => {
            let producer = ordinary_hcn(eff, data, seeds, cache)?;
            let table = weighted(&producer, Producer::Hcn)?;
            let t = train_role(
                "hcn_hcn_iw",
                &eff.hcn,
                data,
                seeds.hcn_retrain_init,
                seeds.hcn_batches,
                Some(&table.weights()),
            )?;
            (vec![producer.role, t.role], t, Some(table))
        }
    };
    let eval = evaluate_model(&target, data, condition, run)?;
    Ok(ConditionOutcome {
        eval,
        models,
        target,
        iws,
    })
}

/// Results of one run.
pub struct RunOutput {
    pub run: u64,
    pub seeds: RunSeeds,
    pub records: Vec<ResultRecord>,
    pub iw_reports: Vec<(Producer, IwReport)>,
}

pub struct ExperimentOutput {
    pub runs: Vec<RunOutput>,
    pub records: Vec<ResultRecord>,
    pub aggregate: Vec<AggregateRow>,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn save_model(dir: &Path, m: &TrainedModel) -> Result<(), PipelineError> {
    save_checkpoint(
        &dir.join("models").join(format!("{}.ckpt", m.role)),
        &CheckpointFile {
            spec: m.spec.clone(),
            params: m.outcome.best.params.clone(),
            epoch: m.outcome.best.epoch,
            metric: m.outcome.best.metric,
        },
    )?;
    write_history_csv(&dir.join("history").join(format!("{}.csv", m.role)), &m.outcome.history)
}

/// Execute every configured condition of run `run` and, with `out`, write
/// the run directory.
pub fn run_one(
    data: &CifarDataset,
    cfg: &ExperimentConfig,
    run: u64,
    out: Option<&Path>,
) -> Result<RunOutput, PipelineError> {
    let eff = cfg.effective();
    let seeds = RunSeeds::derive(cfg.base_seed, run);
    let pair = build_pair_data(data, cfg, &seeds)?;
    let dir = out.map(|o| o.join(format!("run_{run:03}")));
    if let Some(d) = &dir {
        for sub in ["models", "history", "iws", "results"] {
            std::fs::create_dir_all(d.join(sub))?;
        }
        write_json(&d.join("seeds.json"), &seeds)?;
        let mut rows = Vec::new();
        for s in [
            &pair.train,
            &pair.validation,
            &pair.tests.congruent,
            &pair.tests.incongruent,
            &pair.tests.neutral,
        ] {
            rows.extend(manifest_rows(s, pair.class_pair));
        }
        write_manifest(&d.join("manifest.csv"), &rows)?;
    }
    let manifest = manifest_rows(&pair.train, pair.class_pair);

    let mut cache = ModelCache::default();
    let mut evals = Vec::new();
    let mut iw_reports = Vec::new();
    for &condition in &eff.conditions {
        let outcome = run_condition(condition, &pair, &eff, &seeds, run, &mut cache)?;
        if let Some(table) = &outcome.iws {
            let report = iw_distribution_report(&table.rows, &manifest)?;
            if let Some(d) = &dir {
                let name = match table.producer {
                    Producer::Lcn => "lcn",
                    Producer::Hcn => "hcn",
                };
                table.write_csv(&d.join("iws").join(format!("{name}.csv")))?;
                report.write_histogram_csv(&d.join("iws").join(format!("{name}_hist.csv")))?;
                write_json(&d.join("iws").join(format!("{name}_report.json")), &report)?;
            }
            iw_reports.push((table.producer, report));
        }
        if let Some(d) = &dir {
            save_model(d, &outcome.target)?;
        }
        evals.push(outcome.eval);
    }
    if let (Some(d), Some(lcn)) = (&dir, &cache.lcn) {
        save_model(d, lcn)?;
    }

    let ordinary = evals.iter().find(|e| e.condition == Condition::Ordinary).cloned();
    let kind = cfg.shortcut.kind.as_str();
    let records: Vec<ResultRecord> = evals
        .iter()
        .map(|e| {
            let ob = match (&ordinary, e.condition) {
                (_, Condition::Ordinary) | (None, _) => ObResult::ZERO,
                (Some(o), _) => overall_benefit(e, o),
            };
            ResultRecord::new(pair.class_pair, kind, e, ob)
        })
        .collect();
    if let Some(d) = &dir {
        for r in &records {
            write_json(&d.join("results").join(format!("{}.json", r.condition.as_str())), r)?;
        }
    }
    Ok(RunOutput {
        run,
        seeds,
        records,
        iw_reports,
    })
}

/// All runs of an experiment, `cfg.jobs` at a time, then aggregation. With
/// `out`, writes `config.json`, `effective.json`, one directory per run,
/// `results.json` and `aggregate.csv`.
pub fn run_experiment(
    data: &CifarDataset,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<ExperimentOutput, PipelineError> {
    cfg.validate()?;
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        std::fs::write(o.join("config.json"), cfg.to_canonical_json())?;
        write_json(&o.join("effective.json"), &cfg.effective())?;
    }
    let next = AtomicU64::new(0);
    let done: Mutex<Vec<Result<RunOutput, PipelineError>>> = Mutex::new(Vec::new());
    let workers = cfg.jobs.min(cfg.num_runs as usize).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let run = next.fetch_add(1, Ordering::Relaxed);
                if run >= cfg.num_runs {
                    break;
                }
                let r = run_one(data, cfg, run, out);
                let failed = r.is_err();
                done.lock().expect("no panics while holding the lock").push(r);
                if failed {
                    // stop handing out further runs
                    next.store(cfg.num_runs, Ordering::Relaxed);
                }
            });
        }
    });
    let mut runs = Vec::new();
    for r in done.into_inner().expect("workers joined") {
        runs.push(r?);
    }
    runs.sort_by_key(|r| r.run);
    let records: Vec<ResultRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let aggregate = aggregate_runs(&records)?;
    if let Some(o) = out {
        write_json(&o.join("results.json"), &records)?;
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &aggregate)?;
        std::fs::write(o.join("aggregate.csv"), buf)?;
    }
    Ok(ExperimentOutput {
        runs,
        records,
        aggregate,
    })
}

/// Default location of a run's result file.
pub fn result_path(out: &Path, run: u64, condition: Condition) -> PathBuf {
    out.join(format!("run_{run:03}"))
        .join("results")
        .join(format!("{}.json", condition.as_str()))
}
