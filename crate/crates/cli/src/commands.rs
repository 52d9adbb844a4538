//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use dkm_core::data::ExperimentConfig;
use dkm_core::dkmo::{decomp_embedding, softmax_baseline, DkmoModel};
use dkm_core::io::{read_csv_matrix, read_embedding_binary, write_embedding_binary, write_labels};
use dkm_core::kernels::{uniform_average, KernelMatrix};
use dkm_core::mdkmo::{
    build_ensemble, build_mdkmo, finetune, pretrain_all, MdkmoModel, MkQuery, PretrainedKernel,
};
use dkm_core::metrics::{evaluate, Metrics};
use dkm_core::nn::{load_checkpoint, predict_labels, save_checkpoint, Mode};
use dkm_core::nystroem::save_ensemble;
use dkm_core::util::derive_seed_named;
use dkm_core::{Error, Matrix, Result};

use crate::pipeline::{
    config_hash, full_kernels, prepare, read_bundle, write_bundle, write_log_csv, write_report,
    BaselineInfo, BundleKind, BundleManifest, QueryKind, RunReport,
};

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        println!("{}", msg.as_ref());
    }
}

fn predict_dkmo(model: &DkmoModel, query: &MkQuery) -> Result<Vec<usize>> {
    let probs = match query {
        MkQuery::Features(x) => model.predict_features(x)?,
        MkQuery::KernelRows(rows) => model.predict_kernel_rows(rows)?,
        MkQuery::Indices(idx) => model.predict_indices(idx)?,
    };
    Ok(predict_labels(&probs))
}

fn report(metrics: Metrics, cfg: &ExperimentConfig, started: Instant) -> Result<RunReport> {
    Ok(RunReport {
        metrics,
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn cmd_validate(cfg: &ExperimentConfig, quiet: bool) -> Result<()> {
    let prepared = prepare(cfg)?;
    let d = &prepared.dataset;
    say(
        quiet,
        format!(
            "ok: {} samples, {} classes, {} source(s), split {}/{}",
            d.n(),
            d.n_classes,
            d.source_count(),
            d.split.train.len(),
            d.split.test.len()
        ),
    );
    for (name, kind) in prepared.names.iter().zip(&prepared.kinds) {
        let kind = match kind {
            QueryKind::Features => "feature rows",
            QueryKind::KernelRows => "kernel rows",
        };
        say(quiet, format!("  source {} (queries: {})", name, kind));
    }
    Ok(())
}

pub fn cmd_embed(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<()> {
    let prepared = prepare(cfg)?;
    std::fs::create_dir_all(out)?;
    for (i, (name, input)) in prepared.names.iter().zip(&prepared.inputs).enumerate() {
        let seed = derive_seed_named(cfg.seed, name);
        let ensemble = build_ensemble(input, &cfg.embedding, seed)?;
        let dir = out.join(format!("ensemble_{:03}", i));
        save_ensemble(&dir, &ensemble)?;
        say(
            quiet,
            format!(
                "{}: {} member(s) over {} training rows -> {}",
                name,
                ensemble.len(),
                ensemble.n(),
                dir.display()
            ),
        );
    }
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, threads: usize, quiet: bool) -> Result<()> {
    let started = Instant::now();
    let prepared = prepare(cfg)?;
    if prepared.inputs.len() != 1 {
        return Err(Error::Config(format!(
            "`train` expects exactly one data source, found {}; use pretrain + fuse-train for multi-kernel runs",
            prepared.inputs.len()
        )));
    }
    say(
        quiet,
        format!("training single-kernel model on {}", prepared.names[0]),
    );
    let train_labels = prepared.train_labels();
    let pre = pretrain_all(
        &prepared.inputs,
        &train_labels,
        &cfg.model,
        &cfg.training,
        &cfg.embedding,
        cfg.seed,
        threads,
    )?;
    let trained = pre.into_iter().next().expect("one model");
    let preds = predict_dkmo(&trained.model, &prepared.test_queries[0])?;
    let metrics = evaluate(&prepared.test_labels(), &preds, prepared.dataset.n_classes)?;
    say(
        quiet,
        format!(
            "test accuracy: micro {:.4}, macro {:.4} after {} epoch(s)",
            metrics.accuracy_micro,
            metrics.accuracy_macro,
            trained.log.len()
        ),
    );

    let manifest = BundleManifest {
        kind: BundleKind::SingleKernel,
        sources: prepared.source_entries(),
        baseline: None,
    };
    write_bundle(out, &manifest, cfg)?;
    trained.model.save(&out.join("model"))?;
    write_log_csv(&out.join("training_log.csv"), &trained.log)?;
    write_report(&out.join("metrics.json"), &report(metrics, cfg, started)?)?;
    Ok(())
}

/// Ordered source names of the per-kernel models under a pretraining
/// output directory (model i lives in kernel_00i/).
#[derive(Debug, Serialize, Deserialize)]
pub struct PretrainManifest {
    pub names: Vec<String>,
}

fn kernel_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("kernel_{:03}", i))
}

pub fn cmd_pretrain(cfg: &ExperimentConfig, out: &Path, threads: usize, quiet: bool) -> Result<()> {
    let prepared = prepare(cfg)?;
    let train_labels = prepared.train_labels();
    say(
        quiet,
        format!("pretraining {} kernel model(s)", prepared.inputs.len()),
    );
    let models = pretrain_all(
        &prepared.inputs,
        &train_labels,
        &cfg.model,
        &cfg.training,
        &cfg.embedding,
        cfg.seed,
        threads,
    )?;
    std::fs::create_dir_all(out)?;
    let mut names = Vec::new();
    for (i, pk) in models.iter().enumerate() {
        let dir = kernel_dir(out, i);
        pk.model.save(&dir.join("model"))?;
        write_log_csv(&dir.join("training_log.csv"), &pk.log)?;
        say(
            quiet,
            format!("{}: {} epoch(s) -> {}", pk.name, pk.log.len(), dir.display()),
        );
        names.push(pk.name.clone());
    }
    std::fs::write(
        out.join("pretrained.json"),
        serde_json::to_string_pretty(&PretrainManifest { names })? + "\n",
    )?;
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    Ok(())
}

pub fn cmd_fuse_train(
    cfg: &ExperimentConfig,
    pretrained: &Path,
    out: &Path,
    quiet: bool,
) -> Result<()> {
    let started = Instant::now();
    let prepared = prepare(cfg)?;
    let manifest: PretrainManifest =
        serde_json::from_str(&std::fs::read_to_string(pretrained.join("pretrained.json"))?)?;
    let mut models = Vec::new();
    for name in &prepared.names {
        let idx = manifest
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no pretrained model for source {}", name)))?;
        let model = DkmoModel::load(&kernel_dir(pretrained, idx).join("model"))?;
        models.push(PretrainedKernel {
            name: name.clone(),
            model,
            log: Vec::new(),
        });
    }
    say(
        quiet,
        format!("fine-tuning {} fused kernel(s) end to end", models.len()),
    );
    let joined = build_mdkmo(&models, &cfg.model, cfg.seed)?;
    let (model, log) = finetune(joined, &prepared.train_labels(), &cfg.training, cfg.seed)?;

    let probs = model.predict(&prepared.test_queries)?;
    let preds = predict_labels(&probs);
    let metrics = evaluate(&prepared.test_labels(), &preds, prepared.dataset.n_classes)?;
    say(
        quiet,
        format!(
            "test accuracy: micro {:.4}, macro {:.4} after {} epoch(s)",
            metrics.accuracy_micro,
            metrics.accuracy_macro,
            log.len()
        ),
    );

    let bundle = BundleManifest {
        kind: BundleKind::MultiKernel,
        sources: prepared.source_entries(),
        baseline: None,
    };
    write_bundle(out, &bundle, cfg)?;
    model.save(&out.join("model"))?;
    write_log_csv(&out.join("training_log.csv"), &log)?;
    write_report(&out.join("metrics.json"), &report(metrics, cfg, started)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Decomp,
    Uniform,
}

/// Spectral rank for the decomposition baseline: capped at 512 columns.
fn baseline_rank(n_train: usize) -> usize {
    n_train.min(512)
}

pub fn cmd_baseline(
    cfg: &ExperimentConfig,
    method: BaselineMethod,
    out: &Path,
    quiet: bool,
) -> Result<()> {
    let started = Instant::now();
    let prepared = prepare(cfg)?;
    let kernels = full_kernels(cfg, &prepared.dataset)?;
    let kernel = match method {
        BaselineMethod::Uniform => uniform_average(&kernels, "uniform")?,
        BaselineMethod::Decomp => {
            if kernels.len() != 1 {
                return Err(Error::Config(format!(
                    "the decomp baseline expects exactly one data source, found {}; use --method uniform",
                    kernels.len()
                )));
            }
            kernels.into_iter().next().expect("one kernel")
        }
    };
    let train = &prepared.dataset.split.train;
    let test = &prepared.dataset.split.test;
    let k_train = KernelMatrix::new(kernel.values().select_square(train), kernel.name())?;
    let emb = decomp_embedding(&k_train, baseline_rank(train.len()))?;
    say(
        quiet,
        format!(
            "spectral features: rank {} over {} training rows",
            emb.map.cols(),
            train.len()
        ),
    );
    let result = softmax_baseline(&emb.features, &prepared.train_labels(), &cfg.training, cfg.seed)?;

    let mut rows = Matrix::zeros(test.len(), train.len());
    for (i, &r) in test.iter().enumerate() {
        for (j, &c) in train.iter().enumerate() {
            rows.set(i, j, kernel.values().get(r, c));
        }
    }
    let test_features = rows.matmul(&emb.map);
    let (logits, _) = result.network.forward(&test_features, Mode::Eval, None)?;
    let preds = predict_labels(&logits);
    let metrics = evaluate(&prepared.test_labels(), &preds, prepared.dataset.n_classes)?;
    say(
        quiet,
        format!(
            "test accuracy: micro {:.4}, macro {:.4} (train {:.4})",
            metrics.accuracy_micro, metrics.accuracy_macro, result.accuracy
        ),
    );

    let bundle = BundleManifest {
        kind: BundleKind::Baseline,
        sources: prepared.source_entries(),
        baseline: Some(BaselineInfo {
            method: match method {
                BaselineMethod::Decomp => "decomp".to_string(),
                BaselineMethod::Uniform => "uniform".to_string(),
            },
            rank: emb.map.cols(),
        }),
    };
    write_bundle(out, &bundle, cfg)?;
    save_checkpoint(out.join("network.dkmc"), &result.network)?;
    write_embedding_binary(out.join("decomp_map.bin"), &emb.map)?;
    write_log_csv(&out.join("training_log.csv"), &result.log)?;
    write_report(&out.join("metrics.json"), &report(metrics, cfg, started)?)?;
    Ok(())
}

/// Parses a `--input` argument of the form `path` or `name=path`.
fn parse_input(arg: &str) -> (Option<&str>, &Path) {
    match arg.split_once('=') {
        Some((name, path)) => (Some(name), Path::new(path)),
        None => (None, Path::new(arg)),
    }
}

/// Matches the provided input files to the bundle's sources, by name when
/// given as `name=path`, otherwise positionally.
fn match_inputs<'a>(manifest: &BundleManifest, inputs: &'a [String]) -> Result<Vec<&'a Path>> {
    if inputs.len() != manifest.sources.len() {
        return Err(Error::Config(format!(
            "model expects {} input file(s) ({}), got {}",
            manifest.sources.len(),
            manifest
                .sources
                .iter()
                .map(|s| s.name.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            inputs.len()
        )));
    }
    let parsed: Vec<(Option<&str>, &Path)> = inputs.iter().map(|s| parse_input(s)).collect();
    if parsed.iter().all(|(n, _)| n.is_none()) {
        return Ok(parsed.into_iter().map(|(_, p)| p).collect());
    }
    manifest
        .sources
        .iter()
        .map(|s| {
            parsed
                .iter()
                .find(|(n, _)| *n == Some(s.name.as_str()))
                .map(|&(_, p)| p)
                .ok_or_else(|| Error::Config(format!("no input file for source {}", s.name)))
        })
        .collect()
}

fn load_queries(manifest: &BundleManifest, paths: &[&Path]) -> Result<Vec<MkQuery>> {
    manifest
        .sources
        .iter()
        .zip(paths)
        .map(|(s, path)| {
            let m = read_csv_matrix(path)?;
            Ok(match s.kind {
                QueryKind::Features => MkQuery::Features(m),
                QueryKind::KernelRows => MkQuery::KernelRows(m),
            })
        })
        .collect()
}

fn baseline_predictions(model_dir: &Path, rows: &Matrix) -> Result<Vec<usize>> {
    let map = read_embedding_binary(model_dir.join("decomp_map.bin"))?;
    let network = load_checkpoint(model_dir.join("network.dkmc"))?;
    if rows.cols() != map.rows() {
        return Err(Error::Shape(format!(
            "kernel rows have {} columns but the model was trained on {} samples",
            rows.cols(),
            map.rows()
        )));
    }
    let (logits, _) = network.forward(&rows.matmul(&map), Mode::Eval, None)?;
    Ok(predict_labels(&logits))
}

pub fn cmd_predict(model_dir: &Path, inputs: &[String], out: &Path, quiet: bool) -> Result<()> {
    let (manifest, _cfg) = read_bundle(model_dir)?;
    let preds = match manifest.kind {
        BundleKind::SingleKernel => {
            let paths = match_inputs(&manifest, inputs)?;
            let queries = load_queries(&manifest, &paths)?;
            let model = DkmoModel::load(&model_dir.join("model"))?;
            predict_dkmo(&model, &queries[0])?
        }
        BundleKind::MultiKernel => {
            let paths = match_inputs(&manifest, inputs)?;
            let queries = load_queries(&manifest, &paths)?;
            let model = MdkmoModel::load(&model_dir.join("model"))?;
            predict_labels(&model.predict(&queries)?)
        }
        BundleKind::Baseline => {
            if inputs.len() != 1 {
                return Err(Error::Config(
                    "baseline models take one file of kernel rows against the training set"
                        .into(),
                ));
            }
            let (_, path) = parse_input(&inputs[0]);
            baseline_predictions(model_dir, &read_csv_matrix(path)?)?
        }
    };
    write_labels(out, &preds)?;
    say(quiet, format!("wrote {} prediction(s) to {}", preds.len(), out.display()));
    Ok(())
}

pub fn cmd_eval(model_dir: &Path, out: &Path, quiet: bool) -> Result<()> {
    let started = Instant::now();
    let (manifest, cfg) = read_bundle(model_dir)?;
    let prepared = prepare(&cfg)?;
    let preds = match manifest.kind {
        BundleKind::SingleKernel => {
            let model = DkmoModel::load(&model_dir.join("model"))?;
            predict_dkmo(&model, &prepared.test_queries[0])?
        }
        BundleKind::MultiKernel => {
            let model = MdkmoModel::load(&model_dir.join("model"))?;
            let queries = order_queries(&manifest, &prepared)?;
            predict_labels(&model.predict(&queries)?)
        }
        BundleKind::Baseline => {
            let kernels = full_kernels(&cfg, &prepared.dataset)?;
            let kernel = if kernels.len() == 1 {
                kernels.into_iter().next().expect("one kernel")
            } else {
                uniform_average(&kernels, "uniform")?
            };
            let train = &prepared.dataset.split.train;
            let test = &prepared.dataset.split.test;
            let mut rows = Matrix::zeros(test.len(), train.len());
            for (i, &r) in test.iter().enumerate() {
                for (j, &c) in train.iter().enumerate() {
                    rows.set(i, j, kernel.values().get(r, c));
                }
            }
            baseline_predictions(model_dir, &rows)?
        }
    };
    let metrics = evaluate(&prepared.test_labels(), &preds, prepared.dataset.n_classes)?;
    say(
        quiet,
        format!(
            "test accuracy: micro {:.4}, macro {:.4}",
            metrics.accuracy_micro, metrics.accuracy_macro
        ),
    );
    write_report(out, &report(metrics, &cfg, started)?)?;
    Ok(())
}

/// Reorders the prepared test queries to the bundle's source order.
fn order_queries(
    manifest: &BundleManifest,
    prepared: &crate::pipeline::Prepared,
) -> Result<Vec<MkQuery>> {
    let mut slots: Vec<Option<MkQuery>> = Vec::new();
    let mut remaining: Vec<(String, MkQuery)> = prepared
        .names
        .iter()
        .cloned()
        .zip(clone_queries(&prepared.test_queries))
        .collect();
    for s in &manifest.sources {
        let idx = remaining
            .iter()
            .position(|(n, _)| n == &s.name)
            .ok_or_else(|| Error::Config(format!("dataset has no source named {}", s.name)))?;
        slots.push(Some(remaining.remove(idx).1));
    }
    Ok(slots.into_iter().map(|q| q.expect("filled")).collect())
}

fn clone_queries(queries: &[MkQuery]) -> Vec<MkQuery> {
    queries
        .iter()
        .map(|q| match q {
            MkQuery::Features(m) => MkQuery::Features(m.clone()),
            MkQuery::KernelRows(m) => MkQuery::KernelRows(m.clone()),
            MkQuery::Indices(idx) => MkQuery::Indices(idx.clone()),
        })
        .collect()
}
