//! Radiomics-driven fold stratification: standardization, PCA, k-means with
//! silhouette-selected k, and balanced fold dealing within clusters.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti::write_atomic;
use crate::radiomics::{FeatureTable, FeatureVector};

pub const DEFAULT_VARIANCE_RETENTION: f64 = 0.99;
pub const DEFAULT_K_MIN: usize = 2;
pub const DEFAULT_K_MAX: usize = 12;
pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_N_FOLDS: usize = 5;

const RETENTION_SLACK: f64 = 1e-12;

fn check_rows(rows: &[Vec<f64>], needed: usize) -> Result<usize> {
    if rows.len() < needed {
        return Err(Error::NotEnoughSamples {
            needed,
            got: rows.len(),
        });
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("rows have different lengths".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NanInput);
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let d = check_rows(rows, 2)?;
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stddevs = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in stddevs.iter_mut().zip(r).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        stddevs.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Ok(Self { means, stddevs })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stddevs))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }
}

pub fn fit_scaler(table: &FeatureTable) -> Result<Scaler> {
    Scaler::fit(&table.matrix())
}

pub fn transform(table: &FeatureTable, scaler: &Scaler) -> Result<FeatureTable> {
    if table.names().len() != scaler.means.len() {
        return Err(Error::InvalidArgument(format!(
            "scaler has {} features, table has {}",
            scaler.means.len(),
            table.names().len()
        )));
    }
    let rows = table
        .rows()
        .iter()
        .map(|r| FeatureVector::new(r.case_id.clone(), r.names.clone(), scaler.apply(&r.values)))
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::new(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row-major `n_components × n_features`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// Set when the input had zero total variance.
    #[serde(default)]
    pub degenerate: bool,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Principal components of the centered rows, keeping the fewest components
/// whose cumulative explained-variance ratio reaches `retention`. Each
/// component is signed so its largest-magnitude entry is positive.
pub fn pca_fit(rows: &[Vec<f64>], retention: f64) -> Result<PcaModel> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance retention must be in (0, 1], got {retention}"
        )));
    }
    let d = check_rows(rows, 2)?;
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let variances: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = variances.iter().sum();

    if total <= 0.0 {
        let mut axis = vec![0.0; d];
        axis[0] = 1.0;
        return Ok(PcaModel {
            mean,
            components: vec![axis],
            explained_variance_ratio: vec![0.0],
            degenerate: true,
        });
    }

    let mut components = Vec::new();
    let mut ratios = Vec::new();
    let mut cumulative = 0.0;
    for (&i, var) in order.iter().zip(&variances) {
        let mut c: Vec<f64> = v_t.row(i).iter().copied().collect();
        let lead = c
            .iter()
            .enumerate()
            .fold(0, |best, (j, v)| if v.abs() > c[best].abs() { j } else { best });
        if c[lead] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        let r = var / total;
        ratios.push(r);
        cumulative += r;
        if cumulative >= retention - RETENTION_SLACK {
            break;
        }
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub seed: u64,
}

impl KMeansModel {
    /// Index of the nearest centroid; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }

    pub fn assign(&self, points: &[Vec<f64>]) -> Vec<usize> {
        points.iter().map(|p| self.predict(p)).collect()
    }
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// One k-means run: k-means++ seeding from `seed`, then Lloyd iterations until
/// assignments stop changing or `max_iter` is reached.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let dim = check_rows(points, k.max(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut previous_inertia = f64::INFINITY;

    for _ in 0..max_iter.max(1) {
        let (next, dists): (Vec<usize>, Vec<f64>) = points.iter().map(|p| nearest(&centroids, p)).unzip();
        let inertia: f64 = dists.iter().sum();
        debug_assert!(
            inertia <= previous_inertia + 1e-9 * previous_inertia.abs().max(1.0),
            "k-means inertia increased: {previous_inertia} -> {inertia}"
        );
        previous_inertia = inertia;
        if next == assignment {
            break;
        }
        assignment = next;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Reseed from the point farthest from its current centroid.
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<(usize, f64)>, i| {
                        let d = dists[i];
                        match best {
                            Some((_, bd)) if bd >= d => best,
                            _ => Some((i, d)),
                        }
                    });
                if let Some((i, _)) = far {
                    taken[i] = true;
                    centroids[c] = points[i].clone();
                }
            }
        }
    }

    let inertia = points.iter().map(|p| nearest(&centroids, p).1).sum();
    Ok(KMeansModel {
        k,
        centroids,
        inertia,
        seed,
    })
}

/// Best of `restarts` runs seeded `seed, seed + 1, ...`, reduced by
/// `(inertia, seed)` so the result does not depend on scheduling.
pub fn kmeans_restarts(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<KMeansModel> {
    let runs: Vec<KMeansModel> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| kmeans_fit(points, k, seed.wrapping_add(r), max_iter))
        .collect::<Result<_>>()?;
    Ok(runs
        .into_iter()
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia).then(a.seed.cmp(&b.seed)))
        .expect("at least one run"))
}

/// Mean silhouette over all points. Singleton clusters contribute 0.
pub fn silhouette_score(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    if points.len() != assignments.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} assignments",
            points.len(),
            assignments.len()
        )));
    }
    let labels: Vec<usize> = {
        let mut l = assignments.to_vec();
        l.sort_unstable();
        l.dedup();
        l
    };
    if labels.len() < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least 2 clusters".into()));
    }
    let slot: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let cluster: Vec<usize> = assignments.iter().map(|a| slot[a]).collect();
    let mut sizes = vec![0usize; labels.len()];
    for &c in &cluster {
        sizes[c] += 1;
    }
    let n = points.len();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = cluster[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; labels.len()];
            for j in 0..n {
                if j != i {
                    sums[cluster[j]] += sq_dist(&points[i], &points[j]).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..labels.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// Grid search over `k_range` (clipped to `2..=n-1`) by silhouette score;
/// ties go to the smaller k. When no k yields two non-empty clusters the
/// smallest k is returned.
pub fn select_k(
    points: &[Vec<f64>],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<(usize, KMeansModel)> {
    check_rows(points, 3)?;
    let hi = (*k_range.end()).min(points.len() - 1);
    let lo = (*k_range.start()).max(2);
    if lo > hi {
        return Err(Error::InvalidArgument(format!(
            "empty k range {}..={} for {} points",
            k_range.start(),
            k_range.end(),
            points.len()
        )));
    }
    let mut best: Option<(f64, KMeansModel)> = None;
    for k in lo..=hi {
        let model = kmeans_restarts(points, k, seed, restarts, max_iter)?;
        let score = silhouette_score(points, &model.assign(points)).unwrap_or(f64::NEG_INFINITY);
        log::debug!("k = {k}: inertia {:.6}, silhouette {score:.6}", model.inertia);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, model));
        }
    }
    let (_, model) = best.expect("non-empty range");
    Ok((model.k, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub folds: BTreeMap<String, usize>,
    pub cluster_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_cases(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    /// `counts[cluster][fold]`, clusters in ascending id order.
    pub fn cluster_fold_counts(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (case, &fold) in &self.folds {
            let c = self.cluster_of[case];
            out.entry(c).or_insert_with(|| vec![0; self.n_folds])[fold] += 1;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["case_id", "cluster", "fold"])?;
        for (case, fold) in &self.folds {
            w.write_record([case.clone(), self.cluster_of[case].to_string(), fold.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Deals each cluster's cases (sorted, then shuffled by `seed`) round-robin
/// over the folds. The dealing position carries over from one cluster to the
/// next so overall fold sizes also stay within one of each other.
pub fn assign_folds(cluster_of: &BTreeMap<String, usize>, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("n_folds must be at least 2, got {n_folds}")));
    }
    let mut by_cluster: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for (case, &c) in cluster_of {
        by_cluster.entry(c).or_default().push(case);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut next = 0;
    for cases in by_cluster.values_mut() {
        cases.shuffle(&mut rng);
        for case in cases.iter() {
            folds.insert((*case).clone(), next);
            next = (next + 1) % n_folds;
        }
    }
    Ok(FoldAssignment {
        n_folds,
        folds,
        cluster_of: cluster_of.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StratifyConfig {
    pub variance_retention: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for StratifyConfig {
    fn default() -> Self {
        Self {
            variance_retention: DEFAULT_VARIANCE_RETENTION,
            k_min: DEFAULT_K_MIN,
            k_max: DEFAULT_K_MAX,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            n_folds: DEFAULT_N_FOLDS,
            seed: 0,
        }
    }
}

/// Scaler, PCA and k-means fitted together on one feature table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratificationModel {
    pub feature_names: Vec<String>,
    pub scaler: Scaler,
    pub pca: PcaModel,
    pub kmeans: KMeansModel,
}

impl StratificationModel {
    pub fn fit(table: &FeatureTable, config: &StratifyConfig) -> Result<Self> {
        let raw = table.matrix();
        check_rows(&raw, 3)?;
        let scaler = Scaler::fit(&raw)?;
        let scaled: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
        let pca = pca_fit(&scaled, config.variance_retention)?;
        let projected: Vec<Vec<f64>> = scaled.iter().map(|r| pca.transform(r)).collect();
        let (_, kmeans) = select_k(
            &projected,
            config.k_min..=config.k_max,
            config.seed,
            config.restarts,
            config.max_iter,
        )?;
        Ok(Self {
            feature_names: table.names().to_vec(),
            scaler,
            pca,
            kmeans,
        })
    }

    pub fn project(&self, features: &FeatureVector) -> Result<Vec<f64>> {
        if features.names != self.feature_names {
            return Err(Error::InvalidArgument(format!(
                "case {}: feature names differ from the stratification model",
                features.case_id
            )));
        }
        if features.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NanInput);
        }
        Ok(self.pca.transform(&self.scaler.apply(&features.values)))
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<usize> {
        Ok(self.kmeans.predict(&self.project(features)?))
    }

    pub fn cluster_table(&self, table: &FeatureTable) -> Result<BTreeMap<String, usize>> {
        table
            .rows()
            .iter()
            .map(|r| Ok((r.case_id.clone(), self.predict(r)?)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_slice(&bytes)?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let d = self.feature_names.len();
        let m = self.pca.n_components();
        let ok = self.scaler.means.len() == d
            && self.scaler.stddevs.len() == d
            && self.pca.mean.len() == d
            && self.pca.components.iter().all(|c| c.len() == d)
            && self.kmeans.centroids.len() == self.kmeans.k
            && self.kmeans.centroids.iter().all(|c| c.len() == m);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("stratification model dimensions are inconsistent".into()))
        }
    }
}

/// Full fold-creation pipeline: fit the model, cluster every case, deal folds.
pub fn stratify(table: &FeatureTable, config: &StratifyConfig) -> Result<(StratificationModel, FoldAssignment)> {
    if table.len() < config.n_folds {
        return Err(Error::NotEnoughSamples {
            needed: config.n_folds,
            got: table.len(),
        });
    }
    let model = StratificationModel::fit(table, config)?;
    let clusters = model.cluster_table(table)?;
    let folds = assign_folds(&clusters, config.n_folds, config.seed)?;
    Ok((model, folds))
}
