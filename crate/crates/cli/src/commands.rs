use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use tumorseg::ensemble::{decode, ensemble as fuse, weights_from_scores, EnsembleConfig};
use tumorseg::metrics::{evaluate_case, mean_rows, report_json, write_report_csv, CaseReport};
use tumorseg::nifti::{
    list_case_dirs, load_case, load_prob_maps, read_labels, write_atomic, write_case, write_labels, write_prob_maps,
    CaseBundle, NamingScheme,
};
use tumorseg::phantom::{generate, PhantomSpec};
use tumorseg::postprocess::{
    apply_policy, assign_cluster, fit_policy, policy_objective, ClusterAssignment, FitCase, FitGrid,
    PostprocessPolicy,
};
use tumorseg::radiomics::{case_features_with, FeatureTable};
use tumorseg::stratify::{stratify as fit_stratification, StratificationModel};
use tumorseg::volume::{regions_from_labels, LabelVolume, Region};

use crate::config::PipelineConfig;
use crate::manifest::{self, CaseFailure, Manifest};
use crate::{EnsembleArgs, EvaluateArgs, FeaturesArgs, FitArgs, MaskSource, PhantomArgs, PostprocessArgs};
use crate::{StratifyArgs, WeightsArgs};

type CaseResult<T> = std::result::Result<T, CaseFailure>;

fn failure(case_id: &str, e: impl std::fmt::Display) -> CaseFailure {
    log::error!("case {case_id}: {e}");
    CaseFailure {
        case_id: case_id.to_string(),
        error: e.to_string(),
    }
}

/// Splits per-case outcomes into successes and failures, both in case-id order.
fn partition<T>(results: Vec<(String, CaseResult<T>)>) -> (Vec<(String, T)>, Vec<CaseFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(f) => failed.push(f),
        }
    }
    (ok, failed)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

/// `<id>` → case directory, for every sub-directory of `root`.
fn case_dirs(root: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(list_case_dirs(root)?
        .into_iter()
        .filter_map(|d| Some((d.file_name()?.to_string_lossy().into_owned(), d)))
        .collect())
}

/// `<id>` → prediction file, for every `<id>.nii` / `<id>.nii.gz` in `dir`.
fn prediction_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let id = name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii"));
        if let Some(id) = id {
            out.insert(id.to_string(), path);
        }
    }
    Ok(out)
}

fn prediction_path(dir: &Path, case_id: &str, naming: &NamingScheme) -> PathBuf {
    naming.file(dir, case_id, "")
}

fn ground_truth(dir: &Path, case_id: &str, naming: &NamingScheme) -> Result<LabelVolume> {
    let path = naming
        .find(dir, case_id, &naming.seg)
        .ok_or_else(|| anyhow!("no segmentation `{}` in {}", naming.seg, dir.display()))?;
    Ok(read_labels(path)?)
}

/// Cases present on only one side are reported as failures.
fn pair_ids(
    preds: &BTreeMap<String, PathBuf>,
    cases: &BTreeMap<String, PathBuf>,
) -> (Vec<String>, Vec<CaseFailure>) {
    let mut paired = Vec::new();
    let mut failed = Vec::new();
    let ids: BTreeSet<&String> = preds.keys().chain(cases.keys()).collect();
    for id in ids {
        match (preds.contains_key(id), cases.contains_key(id)) {
            (true, true) => paired.push(id.clone()),
            (true, false) => failed.push(failure(id, "prediction has no matching case directory")),
            (false, true) => failed.push(failure(id, "case has no prediction")),
            (false, false) => unreachable!(),
        }
    }
    (paired, failed)
}

fn finish(output: &Path, mut m: Manifest, ok: usize, failures: Vec<CaseFailure>) -> Result<usize> {
    m.cases_ok = ok;
    let n = failures.len();
    m.failures = failures;
    manifest::write(output, &m)?;
    Ok(n)
}

pub fn features(cfg: &PipelineConfig, a: &FeaturesArgs) -> Result<usize> {
    if a.mask_source == MaskSource::Prediction && a.pred.is_none() {
        bail!("--mask-source prediction needs --pred");
    }
    let cases = case_dirs(&a.cases)?;
    let results: Vec<(String, CaseResult<_>)> = cases
        .par_iter()
        .map(|(id, dir)| {
            let run = || -> Result<_> {
                let case = load_case(dir, &cfg.naming)?;
                let labels = match a.mask_source {
                    MaskSource::GroundTruth => case.labels.clone().ok_or_else(|| anyhow!("no ground-truth segmentation"))?,
                    MaskSource::Prediction => {
                        let dir = a.pred.as_deref().expect("checked above");
                        read_labels(prediction_path(dir, id, &cfg.naming))?
                    }
                };
                let wt = regions_from_labels(&labels).wt;
                Ok(case_features_with(&case, &wt, &cfg.radiomics)?)
            };
            (id.clone(), run().map_err(|e| failure(id, format!("{e:#}"))))
        })
        .collect();
    let (rows, failed) = partition(results);
    log::info!("features: {} case(s) extracted, {} failed", rows.len(), failed.len());
    if rows.is_empty() {
        bail!("no case produced features");
    }
    let ok = rows.len();
    let table = FeatureTable::new(rows.into_iter().map(|(_, r)| r).collect())?;
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes)?;
    ensure_parent(&a.out)?;
    write_atomic(&a.out, &bytes)?;

    let m = Manifest::new(
        "features",
        json!({"mask_source": format!("{:?}", a.mask_source), "radiomics": cfg.radiomics, "naming": cfg.naming}),
    )
    .input(&a.cases);
    let m = match &a.pred {
        Some(p) => m.input(p),
        None => m,
    };
    finish(&a.out, Manifest { outputs: vec![a.out.display().to_string()], ..m }, ok, failed)
}

pub fn stratify(cfg: &PipelineConfig, a: &StratifyArgs) -> Result<usize> {
    let mut sc = cfg.stratify.clone();
    if let Some(n) = a.n_folds {
        sc.n_folds = n;
    }
    if let Some(k) = a.k_min {
        sc.k_min = k;
    }
    if let Some(k) = a.k_max {
        sc.k_max = k;
    }
    let file = fs::File::open(&a.features).with_context(|| format!("opening {}", a.features.display()))?;
    let mut table = FeatureTable::read_csv(file)?;
    let imputed = table.impute_column_medians();
    if imputed > 0 {
        log::warn!("replaced {imputed} non-finite feature value(s) by column medians");
    }
    let (model, folds) = fit_stratification(&table, &sc)?;
    log::info!(
        "stratify: {} cases, {} principal components, k = {}",
        table.len(),
        model.pca.n_components(),
        model.kmeans.k
    );
    for (cluster, counts) in folds.cluster_fold_counts() {
        log::info!("cluster {cluster}: fold sizes {counts:?}");
    }

    ensure_parent(&a.out_model)?;
    ensure_parent(&a.out_folds)?;
    model.save(&a.out_model)?;
    if a.out_folds.extension().is_some_and(|e| e == "json") {
        write_atomic(&a.out_folds, &serde_json::to_vec_pretty(&folds)?)?;
    } else {
        let mut bytes = Vec::new();
        folds.write_csv(&mut bytes)?;
        write_atomic(&a.out_folds, &bytes)?;
    }

    let summary = json!({
        "k": model.kmeans.k,
        "n_components": model.pca.n_components(),
        "explained_variance_ratio": model.pca.explained_variance_ratio,
        "imputed_values": imputed,
        "cluster_fold_counts": folds.cluster_fold_counts(),
    });
    for out in [&a.out_model, &a.out_folds] {
        let m = Manifest {
            outputs: vec![a.out_model.display().to_string(), a.out_folds.display().to_string()],
            summary: summary.clone(),
            ..Manifest::new("stratify", json!({ "stratify": sc })).input(&a.features)
        };
        finish(out, m, table.len(), Vec::new())?;
    }
    Ok(0)
}

fn ensemble_config(cfg: &PipelineConfig, weights: Option<&Path>, threshold: Option<f64>) -> Result<EnsembleConfig> {
    let mut ec = match weights {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing weights {}", p.display()))?,
        None => cfg.ensemble.clone(),
    };
    if let Some(t) = threshold {
        ec.threshold = t;
    }
    if !(0.0..=1.0).contains(&ec.threshold) {
        bail!("threshold must be in [0, 1], got {}", ec.threshold);
    }
    Ok(ec)
}

pub fn ensemble(cfg: &PipelineConfig, a: &EnsembleArgs) -> Result<usize> {
    let ec = ensemble_config(cfg, a.weights.as_deref(), a.threshold)?;
    let naming = &cfg.naming;
    let models: Vec<&str> = ec.models.iter().map(|(m, _)| m).collect();
    let mut ids = BTreeSet::new();
    for m in &models {
        let dir = a.probs.join(m);
        let entries = fs::read_dir(&dir).with_context(|| format!("reading model directory {}", dir.display()))?;
        for e in entries {
            let name = e?.file_name().to_string_lossy().into_owned();
            if let Some(id) = [".nii.gz", ".nii"]
                .iter()
                .find_map(|ext| name.strip_suffix(&format!("{}{ext}", naming.prob_et)))
            {
                ids.insert(id.to_string());
            }
        }
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let results: Vec<(String, CaseResult<()>)> = ids
        .par_iter()
        .map(|id| {
            let run = || -> Result<()> {
                let maps = models
                    .iter()
                    .map(|m| Ok(load_prob_maps(a.probs.join(m), id, m, naming)?.activated()?))
                    .collect::<Result<Vec<_>>>()?;
                let fused = fuse(&maps, &ec.models)?;
                write_labels(&decode(&fused, ec.threshold)?, prediction_path(&a.out, id, naming), naming.is_gzip())?;
                if a.write_probs {
                    write_prob_maps(&fused, a.out.join("probs"), id, naming)?;
                }
                Ok(())
            };
            (id.clone(), run().map_err(|e| failure(id, format!("{e:#}"))))
        })
        .collect();
    let (ok, failed) = partition(results);
    log::info!("ensemble: {} case(s) fused, {} failed", ok.len(), failed.len());

    let mut m = Manifest::new("ensemble", json!({ "ensemble": ec, "write_probs": a.write_probs })).input(&a.probs);
    if let Some(w) = &a.weights {
        m = m.input(w);
    }
    m.outputs = vec![a.out.display().to_string()];
    finish(&a.out, m, ok.len(), failed)
}

pub fn weights_from_cv(cfg: &PipelineConfig, a: &WeightsArgs) -> Result<usize> {
    let scores: Vec<(String, f64)> = match &a.scores {
        Some(path) => {
            let raw: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&fs::read(path)?)
                .with_context(|| format!("parsing scores {}", path.display()))?;
            raw.into_iter()
                .map(|(model, v)| {
                    let mean = match &v {
                        serde_json::Value::Number(n) => n.as_f64(),
                        serde_json::Value::Array(folds) if !folds.is_empty() => folds
                            .iter()
                            .map(|f| f.as_f64())
                            .collect::<Option<Vec<f64>>>()
                            .map(|f| f.iter().sum::<f64>() / f.len() as f64),
                        _ => None,
                    };
                    mean.map(|s| (model.clone(), s))
                        .ok_or_else(|| anyhow!("score of `{model}` must be a number or a non-empty list of numbers"))
                })
                .collect::<Result<_>>()?
        }
        None => a.score.clone(),
    };
    let weights = weights_from_scores(&scores)?;
    let ec = EnsembleConfig {
        models: weights,
        threshold: a.threshold.unwrap_or(cfg.ensemble.threshold),
    };
    for (m, w) in ec.models.iter() {
        println!("{m}\t{w:.4}");
    }
    ensure_parent(&a.out)?;
    let mut bytes = serde_json::to_vec_pretty(&ec)?;
    bytes.push(b'\n');
    write_atomic(&a.out, &bytes)?;
    let mut m = Manifest::new("weights-from-cv", json!({ "scores": scores, "rule": "mean score / sum of mean scores" }));
    if let Some(p) = &a.scores {
        m = m.input(p);
    }
    m.outputs = vec![a.out.display().to_string()];
    finish(&a.out, m, scores.len(), Vec::new())
}

/// Loads the case and prediction and finds the prediction's cluster.
fn clustered_prediction(
    cfg: &PipelineConfig,
    case_dir: &Path,
    pred_path: &Path,
    model: &StratificationModel,
) -> Result<(Option<CaseBundle>, LabelVolume, ClusterAssignment)> {
    let pred = read_labels(pred_path)?;
    if pred.data().iter().all(|&v| v == 0) {
        return Ok((None, pred, ClusterAssignment::Empty));
    }
    let case = load_case(case_dir, &cfg.naming)?;
    case.geometry().ensure_same_dims(pred.geometry())?;
    let cluster = assign_cluster(&case, &pred, model, &cfg.radiomics)?;
    Ok((Some(case), pred, cluster))
}

pub fn fit_postprocess(cfg: &PipelineConfig, a: &FitArgs) -> Result<usize> {
    let model = StratificationModel::load(&a.model)?;
    let grid = FitGrid {
        thresholds: a.thresholds.clone().unwrap_or_else(|| cfg.postprocess.grid.thresholds.clone()),
        ratios: a.ratios.clone().unwrap_or_else(|| cfg.postprocess.grid.ratios.clone()),
    };
    let preds = prediction_files(&a.pred)?;
    let cases = case_dirs(&a.cases)?;
    let (ids, mut failed) = pair_ids(&preds, &cases);

    let results: Vec<(String, CaseResult<FitCase>)> = ids
        .par_iter()
        .map(|id| {
            let run = || -> Result<FitCase> {
                let (_, pred, cluster) = clustered_prediction(cfg, &cases[id], &preds[id], &model)?;
                let gt = ground_truth(&cases[id], id, &cfg.naming)?;
                gt.geometry().ensure_same_dims(pred.geometry())?;
                log::debug!("case {id}: {cluster:?}");
                Ok(FitCase {
                    case_id: id.clone(),
                    pred,
                    gt,
                    cluster,
                })
            };
            (id.clone(), run().map_err(|e| failure(id, format!("{e:#}"))))
        })
        .collect();
    let (ok, more_failed) = partition(results);
    failed.extend(more_failed);
    if ok.is_empty() {
        bail!("no usable fitting cases");
    }
    let fit_cases: Vec<FitCase> = ok.into_iter().map(|(_, c)| c).collect();
    let k = model.kmeans.k;
    let conn = cfg.postprocess.connectivity;
    let policy = fit_policy(&fit_cases, k, &grid, conn, &cfg.metrics)?;

    let identity = PostprocessPolicy::identity(k, conn);
    let mut per_cluster = Vec::new();
    println!("cluster\tcases\tbefore\tafter\tncr\ted\tet\tet_wt");
    for rule in &policy.clusters {
        let members: Vec<FitCase> = fit_cases
            .iter()
            .filter(|c| c.cluster == ClusterAssignment::Cluster(rule.id))
            .cloned()
            .collect();
        let (before, after) = if members.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                policy_objective(&members, &identity, &cfg.metrics)?,
                policy_objective(&members, &policy, &cfg.metrics)?,
            )
        };
        let t = rule.lesion_thresholds;
        println!(
            "{}\t{}\t{before:.4}\t{after:.4}\t{}\t{}\t{}\t{}",
            rule.id,
            members.len(),
            t.ncr,
            t.ed,
            t.et,
            rule.et_wt_threshold
        );
        per_cluster.push(json!({
            "cluster": rule.id,
            "cases": members.len(),
            "mean_lesion_dice_before": if members.is_empty() { None } else { Some(before) },
            "mean_lesion_dice_after": if members.is_empty() { None } else { Some(after) },
        }));
    }
    let before = policy_objective(&fit_cases, &identity, &cfg.metrics)?;
    let after = policy_objective(&fit_cases, &policy, &cfg.metrics)?;
    println!("all\t{}\t{before:.4}\t{after:.4}", fit_cases.len());

    ensure_parent(&a.out)?;
    policy.save(&a.out)?;
    let m = Manifest {
        outputs: vec![a.out.display().to_string()],
        summary: json!({
            "clusters": per_cluster,
            "mean_lesion_dice_before": before,
            "mean_lesion_dice_after": after,
        }),
        ..Manifest::new("fit-postprocess", json!({ "grid": grid, "connectivity": conn, "metrics": cfg.metrics }))
            .input(&a.pred)
            .input(&a.cases)
            .input(&a.model)
    };
    finish(&a.out, m, fit_cases.len(), failed)
}

pub fn postprocess(cfg: &PipelineConfig, a: &PostprocessArgs) -> Result<usize> {
    let policy = if a.policy == "reference" {
        PostprocessPolicy::reference()
    } else {
        PostprocessPolicy::load(Path::new(&a.policy))?
    };
    let model = StratificationModel::load(&a.model)?;
    if policy.n_clusters() != model.kmeans.k {
        log::warn!(
            "policy has {} clusters but the stratification model has {}",
            policy.n_clusters(),
            model.kmeans.k
        );
    }
    let preds = prediction_files(&a.pred)?;
    let cases = case_dirs(&a.cases)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let results: Vec<(String, CaseResult<ClusterAssignment>)> = preds
        .par_iter()
        .map(|(id, path)| {
            let run = || -> Result<ClusterAssignment> {
                let dir = cases.get(id).ok_or_else(|| anyhow!("prediction has no matching case directory"))?;
                let (_, pred, cluster) = clustered_prediction(cfg, dir, path, &model)?;
                let out = apply_policy(&pred, cluster, &policy)?;
                write_labels(&out, prediction_path(&a.out, id, &cfg.naming), cfg.naming.is_gzip())?;
                match cluster {
                    ClusterAssignment::Cluster(c) => log::info!("case {id}: cluster {c}"),
                    ClusterAssignment::Empty => log::info!("case {id}: empty prediction, unchanged"),
                }
                Ok(cluster)
            };
            (id.clone(), run().map_err(|e| failure(id, format!("{e:#}"))))
        })
        .collect();
    let (ok, failed) = partition(results);
    let clusters: BTreeMap<String, ClusterAssignment> = ok.into_iter().collect();
    let m = Manifest {
        outputs: vec![a.out.display().to_string()],
        summary: json!({ "clusters": clusters }),
        ..Manifest::new("postprocess", json!({ "policy": policy }))
            .input(&a.pred)
            .input(&a.cases)
            .input(&a.model)
    };
    let n = clusters.len();
    finish(&a.out, m, n, failed)
}

pub fn evaluate(cfg: &PipelineConfig, a: &EvaluateArgs) -> Result<usize> {
    let preds = prediction_files(&a.pred)?;
    let cases = case_dirs(&a.cases)?;
    let (ids, mut failed) = pair_ids(&preds, &cases);
    let results: Vec<(String, CaseResult<CaseReport>)> = ids
        .par_iter()
        .map(|id| {
            let run = || -> Result<CaseReport> {
                let gt = ground_truth(&cases[id], id, &cfg.naming)?;
                let pred = read_labels(&preds[id])?;
                let spacing = gt.geometry().spacing();
                Ok(evaluate_case(id, &gt, &pred, spacing, &cfg.metrics)?)
            };
            (id.clone(), run().map_err(|e| failure(id, format!("{e:#}"))))
        })
        .collect();
    let (ok, more_failed) = partition(results);
    failed.extend(more_failed);
    let reports: Vec<CaseReport> = ok.into_iter().map(|(_, r)| r).collect();

    println!("region\tlw_dice\tlw_hd95\tdice\thd95");
    for (region, row) in Region::ALL.iter().zip(mean_rows(&reports)) {
        println!("{}\t{:.4}\t{:.3}\t{:.4}\t{:.3}", region.name(), row[0], row[1], row[2], row[3]);
    }

    let mut bytes = Vec::new();
    write_report_csv(&mut bytes, &reports, &cfg.metrics)?;
    ensure_parent(&a.out)?;
    write_atomic(&a.out, &bytes)?;
    let mut outputs = vec![a.out.display().to_string()];
    if let Some(j) = &a.json {
        ensure_parent(j)?;
        write_atomic(j, &report_json(&reports, &cfg.metrics)?)?;
        outputs.push(j.display().to_string());
    }
    let n = reports.len();
    let means: BTreeMap<&str, [f64; 4]> = Region::ALL.iter().map(|r| r.name()).zip(mean_rows(&reports)).collect();
    let mk = |m: Manifest| Manifest {
        outputs: outputs.clone(),
        summary: json!({ "mean": means, "columns": ["lesion_wise_dice", "lesion_wise_hd95", "volumetric_dice", "volumetric_hd95"] }),
        ..m
    };
    let base = || Manifest::new("evaluate", json!({ "metrics": cfg.metrics })).input(&a.pred).input(&a.cases);
    if let Some(j) = &a.json {
        finish(j, mk(base()), n, failed.clone())?;
    }
    finish(&a.out, mk(base()), n, failed)
}

pub fn phantom(cfg: &PipelineConfig, a: &PhantomArgs, seed: Option<u64>) -> Result<usize> {
    let mut spec: PhantomSpec = match &a.spec {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing phantom spec {}", p.display()))?,
        None => cfg.phantom.clone(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if a.no_probs {
        spec.prob_maps = None;
    }
    spec.validate()?;
    let cases_root = a.out.join("cases");
    fs::create_dir_all(&cases_root).with_context(|| format!("creating {}", cases_root.display()))?;

    let results: Vec<(String, CaseResult<()>)> = (0..a.cases)
        .into_par_iter()
        .map(|i| {
            let member = spec.corpus_member(i);
            let id = member.case_id.clone();
            let run = || -> Result<()> {
                let ph = generate(&member)?;
                write_case(&ph.bundle, &cases_root, &cfg.naming)?;
                for (model, maps) in &ph.bundle.prob_maps {
                    write_prob_maps(maps, a.out.join("probs").join(model), &id, &cfg.naming)?;
                }
                Ok(())
            };
            (id.clone(), run().map_err(|e| failure(&id, format!("{e:#}"))))
        })
        .collect();
    let (ok, failed) = partition(results);
    log::info!("phantom: {} case(s) written to {}", ok.len(), a.out.display());
    let mut m = Manifest::new("phantom", json!({ "spec": spec, "cases": a.cases, "naming": cfg.naming }));
    if let Some(p) = &a.spec {
        m = m.input(p);
    }
    m.outputs = vec![cases_root.display().to_string(), a.out.join("probs").display().to_string()];
    finish(&a.out, m, ok.len(), failed)
}
