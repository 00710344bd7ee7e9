//! Command implementations. Each command is a pure function of
//! (config, input files) and writes its outputs plus `manifest.json`
//! under the output directory.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use tdsim_core::config::ExperimentConfig;
use tdsim_core::corpus::{
    build_user_sequences, corpus_digest, link_counterparts, load_impressions,
    load_interactions, load_news_corpus, write_impressions, CorpusBundle, CorpusStats,
    GenerationMode, SplitImpressions,
};
use tdsim_core::error::{Error, Result};
use tdsim_core::manifest::RunManifest;
use tdsim_core::metrics::MetricKind;
use tdsim_core::phases::{
    run_experiment, ExperimentData, ExperimentReport, ModelSource, Phase, PhaseConfig,
    DEFAULT_SWEEP,
};
use tdsim_core::ppl::{
    load_ppl_file, ppl_report, rank_ppl_association, train_ngram_lm, PplProvider,
    UnknownPolicy,
};
use tdsim_core::recmodel::{
    load_checkpoint, save_checkpoint, train, FeatureSource, RankedEvaluation,
    RecommenderModel,
};
use tdsim_core::textrep::similarity_report;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Load the corpus, its user sequences, and the counterpart index.
/// Returns the count of missing counterpart links for the manifest.
fn load_bundle(cfg: &ExperimentConfig) -> Result<(CorpusBundle, usize)> {
    let mut bundle = load_news_corpus(cfg.corpus.news_path()?)?;
    let records = load_interactions(cfg.corpus.interactions_path()?)?;
    bundle.sequences =
        build_user_sequences(&records, &bundle.items, cfg.corpus.min_interactions)?;
    let (index, completeness) = link_counterparts(&bundle)?;
    bundle.counterparts = index;
    Ok((bundle, completeness.missing.len()))
}

fn impressions_dir(out: &Path) -> PathBuf {
    out.join("impressions")
}

fn checkpoint_path(out: &Path) -> PathBuf {
    out.join("checkpoint.bin")
}

fn load_split(out: &Path) -> Result<SplitImpressions> {
    let dir = impressions_dir(out);
    Ok(SplitImpressions {
        train: load_impressions(&dir.join("train.jsonl"))?,
        validation: load_impressions(&dir.join("validation.jsonl"))?,
        test: load_impressions(&dir.join("test.jsonl"))?,
    })
}

fn feature_source(cfg: &ExperimentConfig, bundle: Arc<CorpusBundle>) -> Result<FeatureSource> {
    let table = cfg.model.embedding_table()?;
    Ok(FeatureSource::new(
        bundle,
        table,
        cfg.model.text_mode,
        cfg.model.max_tokens,
    ))
}

fn base_manifest(ctx: &Ctx, command: &str) -> RunManifest {
    let mut m = RunManifest::new(command, &ctx.cfg.digest());
    m.seeds.insert("corpus".to_string(), ctx.cfg.corpus.seed);
    m.seeds.insert("model".to_string(), ctx.cfg.model.seed);
    m.seeds.insert("train".to_string(), ctx.cfg.train.seed);
    m.seeds.insert("phase".to_string(), ctx.cfg.phase.seed);
    m
}

fn finish(manifest: &mut RunManifest, out: &Path) -> Result<()> {
    manifest.write(&out.join("manifest.json"))
}

pub fn cmd_build_data(ctx: &Ctx) -> Result<()> {
    let started = Instant::now();
    let mut manifest = base_manifest(ctx, "build-data");
    let (bundle, missing) = load_bundle(&ctx.cfg)?;
    manifest
        .corpus_digests
        .insert("news".to_string(), corpus_digest(&bundle));
    manifest
        .notes
        .insert("missing_counterparts".to_string(), missing.to_string());

    let split = tdsim_core::corpus::derive_all_impressions(&bundle, &ctx.cfg.corpus.pipeline_params())?;

    let dir = impressions_dir(&ctx.out);
    ensure_dir(&dir)?;
    for (name, set) in [
        ("train.jsonl", &split.train),
        ("validation.jsonl", &split.validation),
        ("test.jsonl", &split.test),
    ] {
        let path = dir.join(name);
        write_impressions(set, &path)?;
        manifest.record_output(&ctx.out, &path)?;
    }

    let stats = CorpusStats::compute(&bundle, &split);
    let stats_path = ctx.out.join("stats.csv");
    write_text(&stats_path, &stats.to_csv())?;
    manifest.record_output(&ctx.out, &stats_path)?;

    manifest
        .stage_seconds
        .insert("build-data".to_string(), started.elapsed().as_secs_f64());
    finish(&mut manifest, &ctx.out)?;
    println!(
        "built {} train / {} validation / {} test impressions",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

pub fn cmd_train(ctx: &Ctx) -> Result<()> {
    let started = Instant::now();
    let mut manifest = base_manifest(ctx, "train");
    let (bundle, _) = load_bundle(&ctx.cfg)?;
    manifest
        .corpus_digests
        .insert("news".to_string(), corpus_digest(&bundle));
    let split = load_split(&ctx.out)?;
    let source = feature_source(&ctx.cfg, Arc::new(bundle))?;

    let mcfg = ctx.cfg.model.model_config();
    let tcfg = ctx.cfg.train.train_config();
    let grid: Vec<f64> = if ctx.cfg.train.lr_grid.is_empty() {
        vec![ctx.cfg.train.lr]
    } else {
        ctx.cfg.train.lr_grid.clone()
    };

    ensure_dir(&ctx.out)?;
    // One log per grid point; best validation metric wins (first on ties).
    let mut best: Option<(f64, f64, RecommenderModel)> = None;
    let mut summary = String::from("index,lr,val_metric,selected\n");
    let mut rows = Vec::new();
    for (i, &lr) in grid.iter().enumerate() {
        let mut model = RecommenderModel::new(mcfg.clone())?;
        let mut cfg_i = tcfg.clone();
        cfg_i.lr = lr;
        let log = train(&mut model, &source, &split.train, &split.validation, &cfg_i)?;
        let val = log.best_val().unwrap_or(0.0);
        let log_path = ctx.out.join(format!("train_log_{i}.csv"));
        write_text(&log_path, &log.to_csv())?;
        manifest.record_output(&ctx.out, &log_path)?;
        rows.push((i, lr, val));
        if best.as_ref().is_none_or(|(_, b, _)| val > *b) {
            best = Some((lr, val, model));
        }
    }
    let (best_lr, best_val, best_model) = best.expect("grid is nonempty");
    for (i, lr, val) in rows {
        summary.push_str(&format!("{i},{lr},{val:.6},{}\n", lr == best_lr));
    }
    let summary_path = ctx.out.join("grid_summary.csv");
    write_text(&summary_path, &summary)?;
    manifest.record_output(&ctx.out, &summary_path)?;

    let ckpt = checkpoint_path(&ctx.out);
    save_checkpoint(&best_model, &ckpt)?;
    manifest.record_output(&ctx.out, &ckpt)?;
    manifest
        .notes
        .insert("selected_lr".to_string(), format!("{best_lr}"));
    manifest
        .notes
        .insert("best_val_metric".to_string(), format!("{best_val:.6}"));

    manifest
        .stage_seconds
        .insert("train".to_string(), started.elapsed().as_secs_f64());
    finish(&mut manifest, &ctx.out)?;
    println!("selected lr {best_lr} with validation metric {best_val:.6}");
    Ok(())
}

fn write_rankings(path: &Path, evaluations: &[RankedEvaluation]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    for ev in evaluations {
        let line = serde_json::to_string(ev).expect("evaluation serializes");
        file.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        file.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Run one phase (with its P0 baseline when the phase is not P0) and
/// write its report files under `dir`.
fn phase_outputs(
    ctx: &Ctx,
    manifest: &mut RunManifest,
    dir: &Path,
    report: &ExperimentReport,
) -> Result<()> {
    ensure_dir(dir)?;
    let metrics_path = dir.join("metrics.csv");
    write_text(&metrics_path, &report.table.to_csv())?;
    manifest.record_output(&ctx.out, &metrics_path)?;

    let rra_path = dir.join("rra.csv");
    write_text(&rra_path, &report.rra_csv())?;
    manifest.record_output(&ctx.out, &rra_path)?;

    let rankings_path = dir.join("rankings.jsonl");
    write_rankings(&rankings_path, &report.evaluations)?;
    manifest.record_output(&ctx.out, &rankings_path)?;

    if let Some(log) = &report.train_log {
        let log_path = dir.join("train_log.csv");
        write_text(&log_path, &log.to_csv())?;
        manifest.record_output(&ctx.out, &log_path)?;
    }

    let report_path = dir.join("phase_report.json");
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    write_text(&report_path, &format!("{text}\n"))?;
    manifest.record_output(&ctx.out, &report_path)?;

    for (k, v) in &report.metadata {
        manifest.notes.insert(k.clone(), v.clone());
    }
    Ok(())
}

struct PhaseRun {
    bundle: Arc<CorpusBundle>,
    split: SplitImpressions,
    source: FeatureSource,
    /// Checkpoint model when one exists; P3 ignores it for its own run.
    trained: Option<RecommenderModel>,
}

impl PhaseRun {
    fn load(ctx: &Ctx, phase: Phase) -> Result<Self> {
        let (bundle, _) = load_bundle(&ctx.cfg)?;
        let bundle = Arc::new(bundle);
        let split = load_split(&ctx.out)?;
        let source = feature_source(&ctx.cfg, bundle.clone())?;
        let mcfg = ctx.cfg.model.model_config();
        let ckpt = checkpoint_path(&ctx.out);
        // P0..P2 rank with the trained checkpoint; P3 retrains, and uses
        // the checkpoint only for its P0 baseline when one is present.
        let trained = if ckpt.exists() {
            Some(load_checkpoint(&mcfg, &ckpt)?)
        } else if phase == Phase::P3 {
            None
        } else {
            return Err(Error::io(
                ckpt.display().to_string(),
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "run `tdsim train` first",
                ),
            ));
        };
        Ok(PhaseRun {
            bundle,
            split,
            source,
            trained,
        })
    }

    fn data(&self) -> ExperimentData<'_> {
        ExperimentData {
            bundle: &self.bundle,
            index: &self.bundle.counterparts,
            train: &self.split.train,
            val: &self.split.validation,
            test: &self.split.test,
            source: &self.source,
        }
    }

    /// Model source for one run of `phase`.
    fn source_for(&self, ctx: &Ctx, phase: Phase) -> ModelSource<'_> {
        match (&self.trained, phase) {
            (_, Phase::P3) => ModelSource::TrainSpec(
                ctx.cfg.model.model_config(),
                ctx.cfg.train.train_config(),
            ),
            (Some(m), _) => ModelSource::Trained(m),
            (None, _) => ModelSource::TrainSpec(
                ctx.cfg.model.model_config(),
                ctx.cfg.train.train_config(),
            ),
        }
    }

    /// Source for the P0 baseline: the checkpoint when present, else a
    /// human-data training spec.
    fn baseline_source(&self, ctx: &Ctx) -> ModelSource<'_> {
        match &self.trained {
            Some(m) => ModelSource::Trained(m),
            None => ModelSource::TrainSpec(
                ctx.cfg.model.model_config(),
                ctx.cfg.train.train_config(),
            ),
        }
    }

    fn baseline(&self, ctx: &Ctx, seed: u64, ks: &[usize]) -> Result<ExperimentReport> {
        run_experiment(
            &PhaseConfig::p0(seed),
            self.baseline_source(ctx),
            &self.data(),
            ks,
            None,
        )
    }
}

pub fn cmd_phase(ctx: &Ctx) -> Result<()> {
    let started = Instant::now();
    let mut manifest = base_manifest(ctx, "phase");
    let pc = ctx.cfg.phase.phase_config()?;
    let run = PhaseRun::load(ctx, pc.phase)?;
    manifest
        .corpus_digests
        .insert("news".to_string(), corpus_digest(&run.bundle));
    let ks = &ctx.cfg.metrics.ks;

    let baseline = if pc.phase == Phase::P0 {
        None
    } else {
        Some(run.baseline(ctx, pc.seed, ks)?)
    };
    let report = run_experiment(
        &pc,
        run.source_for(ctx, pc.phase),
        &run.data(),
        ks,
        baseline.as_ref(),
    )?;

    phase_outputs(ctx, &mut manifest, &ctx.out, &report)?;
    manifest
        .stage_seconds
        .insert("phase".to_string(), started.elapsed().as_secs_f64());
    finish(&mut manifest, &ctx.out)?;
    for entry in &report.rra {
        match entry.delta_vs_baseline {
            Some(d) => println!(
                "{} {}: RRA {:.2}% (delta vs P0 {:+.2})",
                pc.phase.label(),
                entry.kind.name(),
                entry.rra,
                d
            ),
            None => println!(
                "{} {}: RRA {:.2}%",
                pc.phase.label(),
                entry.kind.name(),
                entry.rra
            ),
        }
    }
    Ok(())
}

pub fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let started = Instant::now();
    let mut manifest = base_manifest(ctx, "sweep");
    let phase = ctx.cfg.phase.parsed_phase()?;
    if !matches!(phase, Phase::P2 | Phase::P3) {
        return Err(Error::Config(format!(
            "sweep requires phase P2 or P3, got {}",
            phase.label()
        )));
    }
    let run = PhaseRun::load(ctx, phase)?;
    manifest
        .corpus_digests
        .insert("news".to_string(), corpus_digest(&run.bundle));
    let ks = &ctx.cfg.metrics.ks;
    let points: Vec<f64> = if ctx.cfg.phase.sweep.is_empty() {
        DEFAULT_SWEEP.to_vec()
    } else {
        ctx.cfg.phase.sweep.clone()
    };

    let baseline = run.baseline(ctx, ctx.cfg.phase.seed, ks)?;
    let mut series = String::from(
        "phase,generator,faking_level,t,metric,rra,delta_vs_baseline,realized_fraction\n",
    );
    for &t in &points {
        let pc = ctx.cfg.phase.phase_config_at(t)?;
        let report = run_experiment(
            &pc,
            run.source_for(ctx, phase),
            &run.data(),
            ks,
            Some(&baseline),
        )?;
        let realized = match phase {
            Phase::P3 => report.realized_training_fraction,
            _ => report.realized_history_fraction,
        };
        for entry in &report.rra {
            series.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
                phase.label(),
                pc.generator.as_deref().unwrap_or(""),
                pc.faking_level.map(|l| l.label()).unwrap_or(""),
                t,
                entry.kind.name(),
                entry.rra,
                entry.delta_vs_baseline.unwrap_or(f64::NAN),
                realized.unwrap_or(f64::NAN),
            ));
        }
    }

    ensure_dir(&ctx.out)?;
    let series_path = ctx.out.join("series.csv");
    write_text(&series_path, &series)?;
    manifest.record_output(&ctx.out, &series_path)?;
    manifest
        .notes
        .insert("sweep_points".to_string(), points.len().to_string());
    manifest
        .stage_seconds
        .insert("sweep".to_string(), started.elapsed().as_secs_f64());
    finish(&mut manifest, &ctx.out)?;
    println!(
        "swept {} t-points over {} metrics",
        points.len(),
        MetricKind::standard(ks).len()
    );
    Ok(())
}

pub fn cmd_analyze(ctx: &Ctx) -> Result<()> {
    let started = Instant::now();
    let mut manifest = base_manifest(ctx, "analyze");
    let (bundle, missing) = load_bundle(&ctx.cfg)?;
    manifest
        .corpus_digests
        .insert("news".to_string(), corpus_digest(&bundle));
    manifest
        .notes
        .insert("missing_counterparts".to_string(), missing.to_string());
    ensure_dir(&ctx.out)?;

    // Counterpart similarity distributions, one row per (generator, mode).
    let pairs: BTreeSet<(String, GenerationMode)> = bundle
        .counterparts
        .iter()
        .map(|((_, g, m), _)| (g.clone(), *m))
        .collect();
    let table = ctx.cfg.model.embedding_table()?;
    let mut sim = String::from(tdsim_core::textrep::SimilarityReport::summary_csv_header());
    sim.push('\n');
    for (g, m) in &pairs {
        let report = similarity_report(&table, &bundle, g, *m)?;
        sim.push_str(&report.summary_csv_row());
        sim.push('\n');
    }
    let sim_path = ctx.out.join("similarity.csv");
    write_text(&sim_path, &sim)?;
    manifest.record_output(&ctx.out, &sim_path)?;

    // Perplexity report: precomputed table, or an n-gram LM trained on
    // the human-written items.
    let file_table;
    let lm;
    let provider = match &ctx.cfg.metrics.ppl_file {
        Some(path) => {
            file_table = load_ppl_file(path)?;
            PplProvider::Table(&file_table)
        }
        None => {
            let texts: Vec<String> = bundle
                .items
                .values()
                .filter(|i| i.mode == GenerationMode::L0)
                .map(|i| format!("{} {}", i.title, i.content))
                .collect();
            lm = train_ngram_lm(
                &texts,
                ctx.cfg.metrics.ppl_order,
                ctx.cfg.metrics.ppl_alpha,
                UnknownPolicy::MapToUnk,
            )?;
            PplProvider::Model(&lm)
        }
    };
    let report = ppl_report(&bundle, &provider)?;
    let summary_path = ctx.out.join("ppl_summary.csv");
    write_text(&summary_path, &report.summary_csv())?;
    manifest.record_output(&ctx.out, &summary_path)?;
    let raw_path = ctx.out.join("ppl_raw.csv");
    write_text(&raw_path, &report.raw_csv())?;
    manifest.record_output(&ctx.out, &raw_path)?;

    // Rank association when a phase run left rankings behind.
    let rankings_path = ctx.out.join("rankings.jsonl");
    if rankings_path.exists() {
        let evaluations = read_rankings(&rankings_path)?;
        let rho = rank_ppl_association(&evaluations, &report.table())?;
        let corr_path = ctx.out.join("correlation.csv");
        write_text(
            &corr_path,
            &format!("coefficient,impressions\n{rho:.6},{}\n", evaluations.len()),
        )?;
        manifest.record_output(&ctx.out, &corr_path)?;
        manifest
            .notes
            .insert("rank_ppl_spearman".to_string(), format!("{rho:.6}"));
    } else {
        manifest
            .notes
            .insert("rank_ppl_spearman".to_string(), "skipped: no rankings.jsonl".to_string());
    }

    manifest
        .stage_seconds
        .insert("analyze".to_string(), started.elapsed().as_secs_f64());
    finish(&mut manifest, &ctx.out)?;
    println!(
        "analyzed {} similarity pairs and {} perplexity buckets",
        pairs.len(),
        report.buckets.len()
    );
    Ok(())
}

fn read_rankings(path: &Path) -> Result<Vec<RankedEvaluation>> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: RankedEvaluation =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        out.push(ev);
    }
    Ok(out)
}

/// One `section,key,value` table summarizing whatever reports exist.
pub fn cmd_report(ctx: &Ctx) -> Result<()> {
    let started = Instant::now();
    let mut manifest = base_manifest(ctx, "report");
    let mut rows = String::from("section,key,value\n");
    let mut harvested = 0usize;

    // stats.csv: single data row under a header.
    let stats_path = ctx.out.join("stats.csv");
    if stats_path.exists() {
        let text = std::fs::read_to_string(&stats_path).map_err(|e| io_err(&stats_path, e))?;
        let mut lines = text.lines();
        if let (Some(header), Some(values)) = (lines.next(), lines.next()) {
            for (k, v) in header.split(',').zip(values.split(',')) {
                rows.push_str(&format!("stats,{k},{v}\n"));
            }
            harvested += 1;
        }
    }

    // rra.csv: one row per metric.
    let rra_path = ctx.out.join("rra.csv");
    if rra_path.exists() {
        let text = std::fs::read_to_string(&rra_path).map_err(|e| io_err(&rra_path, e))?;
        for line in text.lines().skip(1) {
            let mut parts = line.splitn(3, ',');
            if let (Some(metric), Some(rra)) = (parts.next(), parts.next()) {
                rows.push_str(&format!("rra,{metric},{rra}\n"));
                if let Some(delta) = parts.next() {
                    if !delta.is_empty() {
                        rows.push_str(&format!("rra_delta,{metric},{delta}\n"));
                    }
                }
            }
        }
        harvested += 1;
    }

    // ppl_summary.csv: label -> mean.
    let ppl_path = ctx.out.join("ppl_summary.csv");
    if ppl_path.exists() {
        let text = std::fs::read_to_string(&ppl_path).map_err(|e| io_err(&ppl_path, e))?;
        for line in text.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() >= 3 && !parts[2].is_empty() {
                rows.push_str(&format!("ppl_mean,{},{}\n", parts[0], parts[2]));
            }
        }
        harvested += 1;
    }

    // correlation.csv: single coefficient.
    let corr_path = ctx.out.join("correlation.csv");
    if corr_path.exists() {
        let text = std::fs::read_to_string(&corr_path).map_err(|e| io_err(&corr_path, e))?;
        if let Some(values) = text.lines().nth(1) {
            if let Some(coef) = values.split(',').next() {
                rows.push_str(&format!("correlation,rank_ppl_spearman,{coef}\n"));
            }
        }
        harvested += 1;
    }

    if harvested == 0 {
        return Err(Error::EmptyInput("no reports found in the output directory"));
    }
    ensure_dir(&ctx.out)?;
    let report_path = ctx.out.join("report.csv");
    write_text(&report_path, &rows)?;
    manifest.record_output(&ctx.out, &report_path)?;
    manifest
        .stage_seconds
        .insert("report".to_string(), started.elapsed().as_secs_f64());
    finish(&mut manifest, &ctx.out)?;
    print!("{rows}");
    Ok(())
}
