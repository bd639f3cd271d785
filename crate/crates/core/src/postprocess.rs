//! Cluster-adaptive cleanup of predicted label maps.
//!
//! Each prediction is assigned to a radiomic cluster of its predicted whole
//! tumor. The cluster's policy then removes small connected components per
//! label and, if the ET/WT volume ratio is below the cluster's threshold,
//! relabels ET as NCR. Policies are fitted by exhaustive grid search.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_lesion_dice, LesionParams};
use crate::nifti::{write_atomic, CaseBundle};
use crate::radiomics::{case_features_with, RadiomicsConfig};
use crate::stratify::StratificationModel;
use crate::volume::{
    connected_components, regions_from_labels, remove_small_components, Connectivity, LabelVolume, BG, ED, ET, NCR,
};

const REFERENCE_POLICY: &str = include_str!("../data/reference_policy.json");

pub const DEFAULT_THRESHOLD_GRID: [usize; 8] = [0, 25, 50, 75, 100, 150, 200, 250];
pub const DEFAULT_RATIO_GRID: [f64; 5] = [0.0, 0.05, 0.1, 0.15, 0.2];

/// Minimum component size (voxels) kept for labels 1, 2 and 3.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LesionThresholds {
    #[serde(rename = "1")]
    pub ncr: usize,
    #[serde(rename = "2")]
    pub ed: usize,
    #[serde(rename = "3")]
    pub et: usize,
}

impl LesionThresholds {
    pub fn new(ncr: usize, ed: usize, et: usize) -> Self {
        Self { ncr, ed, et }
    }

    pub fn get(&self, label: u8) -> usize {
        match label {
            NCR => self.ncr,
            ED => self.ed,
            ET => self.et,
            _ => 0,
        }
    }

    fn total(&self) -> usize {
        self.ncr + self.ed + self.et
    }

    fn as_array(&self) -> [usize; 3] {
        [self.ncr, self.ed, self.et]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPolicy {
    pub id: usize,
    pub lesion_thresholds: LesionThresholds,
    pub et_wt_threshold: f64,
}

impl ClusterPolicy {
    pub fn identity(id: usize) -> Self {
        Self {
            id,
            lesion_thresholds: LesionThresholds::default(),
            et_wt_threshold: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessPolicy {
    pub connectivity: Connectivity,
    pub clusters: Vec<ClusterPolicy>,
}

impl PostprocessPolicy {
    /// The all-zero policy, which leaves every prediction unchanged.
    pub fn identity(n_clusters: usize, connectivity: Connectivity) -> Self {
        Self {
            connectivity,
            clusters: (0..n_clusters).map(ClusterPolicy::identity).collect(),
        }
    }

    /// Nine-cluster reference policy shipped with the crate.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_POLICY.as_bytes()).expect("bundled policy is valid")
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster(&self, id: usize) -> Result<&ClusterPolicy> {
        self.clusters.get(id).ok_or(Error::MissingCluster(id))
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::InvalidArgument("policy has no clusters".into()));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.id != i {
                return Err(Error::InvalidArgument(format!(
                    "policy clusters must be listed by id 0..n, found id {} at position {i}",
                    c.id
                )));
            }
            if !(0.0..=1.0).contains(&c.et_wt_threshold) {
                return Err(Error::InvalidArgument(format!(
                    "cluster {i}: ET/WT threshold {} outside [0, 1]",
                    c.et_wt_threshold
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let policy: Self = serde_json::from_slice(bytes)?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }
}

/// Cluster of a prediction, or `Empty` when it has no tumor voxels
/// (post-processing is then a no-op).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAssignment {
    Cluster(usize),
    Empty,
}

/// Nearest-centroid cluster of the radiomic features on the predicted whole tumor.
pub fn assign_cluster(
    case: &CaseBundle,
    pred: &LabelVolume,
    assigner: &StratificationModel,
    config: &RadiomicsConfig,
) -> Result<ClusterAssignment> {
    let wt = regions_from_labels(pred).wt;
    if wt.is_empty() {
        return Ok(ClusterAssignment::Empty);
    }
    let features = case_features_with(case, &wt, config)?;
    Ok(ClusterAssignment::Cluster(assigner.predict(&features)?))
}

/// `|ET| / |WT|`, 0 when the whole tumor is empty.
pub fn et_wt_ratio(pred: &LabelVolume) -> f64 {
    let wt = pred.data().iter().filter(|&&v| v != BG).count();
    if wt == 0 {
        0.0
    } else {
        pred.count(ET) as f64 / wt as f64
    }
}

fn remove_label_components(data: &mut [u8], pred: &LabelVolume, label: u8, min_voxels: usize, conn: Connectivity) {
    if min_voxels == 0 {
        return;
    }
    let mask = pred.mask_of(label);
    let kept = remove_small_components(&mask, min_voxels, conn);
    for idx in mask.indices() {
        if !kept.get(idx) {
            data[idx] = BG;
        }
    }
}

/// Applies one cluster's rule: per-label small-component removal, then the
/// ET→NCR relabel when the post-removal ET/WT ratio is below the threshold.
/// After a relabel the NCR threshold is enforced once more so that applying
/// the rule twice gives the same result as applying it once.
pub fn apply_cluster_policy(pred: &LabelVolume, rule: &ClusterPolicy, connectivity: Connectivity) -> LabelVolume {
    let mut data = pred.data().to_vec();
    for label in [NCR, ED, ET] {
        remove_label_components(&mut data, pred, label, rule.lesion_thresholds.get(label), connectivity);
    }
    let mut out = LabelVolume::new(pred.geometry().clone(), data).expect("labels stay in range");
    if out.count(ET) > 0 && et_wt_ratio(&out) < rule.et_wt_threshold {
        let mut data = out.data().to_vec();
        data.iter_mut().filter(|v| **v == ET).for_each(|v| *v = NCR);
        let relabeled = LabelVolume::new(pred.geometry().clone(), data).expect("labels stay in range");
        let mut data = relabeled.data().to_vec();
        remove_label_components(&mut data, &relabeled, NCR, rule.lesion_thresholds.ncr, connectivity);
        out = LabelVolume::new(pred.geometry().clone(), data).expect("labels stay in range");
    }
    out
}

pub fn apply_policy(pred: &LabelVolume, cluster: ClusterAssignment, policy: &PostprocessPolicy) -> Result<LabelVolume> {
    match cluster {
        ClusterAssignment::Empty => Ok(pred.clone()),
        ClusterAssignment::Cluster(id) => Ok(apply_cluster_policy(pred, policy.cluster(id)?, policy.connectivity)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitGrid {
    pub thresholds: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl Default for FitGrid {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLD_GRID.to_vec(),
            ratios: DEFAULT_RATIO_GRID.to_vec(),
        }
    }
}

impl FitGrid {
    fn validated(&self) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut t = self.thresholds.clone();
        t.sort_unstable();
        t.dedup();
        let mut r = self.ratios.clone();
        if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("ratio candidates must lie in [0, 1]".into()));
        }
        r.sort_by(|a, b| a.total_cmp(b));
        r.dedup();
        if t.first() != Some(&0) || r.first() != Some(&0.0) {
            return Err(Error::InvalidArgument("both fit grids must contain 0".into()));
        }
        Ok((t, r))
    }
}

/// One fitting example: a cross-validated prediction, its ground truth and its cluster.
#[derive(Clone, Debug)]
pub struct FitCase {
    pub case_id: String,
    pub pred: LabelVolume,
    pub gt: LabelVolume,
    pub cluster: ClusterAssignment,
}

/// Per case and label, the sorted component sizes under the policy
/// connectivity. Two thresholds with the same number of components below
/// them produce the same output, which keys the evaluation cache.
struct ComponentSizes([Vec<usize>; 3]);

impl ComponentSizes {
    fn new(pred: &LabelVolume, conn: Connectivity) -> Self {
        Self([NCR, ED, ET].map(|l| {
            let mut s = connected_components(&pred.mask_of(l), conn).sizes;
            s.sort_unstable();
            s
        }))
    }

    fn key(&self, t: &LesionThresholds) -> [usize; 3] {
        let t = t.as_array();
        [0, 1, 2].map(|i| self.0[i].partition_point(|&s| s < t[i]))
    }
}

fn better(candidate: (f64, &LesionThresholds), best: (f64, &LesionThresholds)) -> bool {
    candidate.0 > best.0
        || (candidate.0 == best.0
            && (candidate.1.total(), candidate.1.as_array()) < (best.1.total(), best.1.as_array()))
}

fn fit_cluster(
    id: usize,
    cases: &[&FitCase],
    thresholds: &[usize],
    ratios: &[f64],
    connectivity: Connectivity,
    params: &LesionParams,
) -> Result<(ClusterPolicy, f64)> {
    if cases.is_empty() {
        return Ok((ClusterPolicy::identity(id), f64::NAN));
    }
    let sizes: Vec<ComponentSizes> = cases.iter().map(|c| ComponentSizes::new(&c.pred, connectivity)).collect();
    let mut candidates = Vec::with_capacity(thresholds.len().pow(3));
    for &a in thresholds {
        for &b in thresholds {
            for &c in thresholds {
                candidates.push(LesionThresholds::new(a, b, c));
            }
        }
    }

    let mut needed: BTreeMap<(usize, [usize; 3]), LesionThresholds> = BTreeMap::new();
    for t in &candidates {
        for (ci, s) in sizes.iter().enumerate() {
            needed.entry((ci, s.key(t))).or_insert(*t);
        }
    }
    let scored: HashMap<(usize, [usize; 3]), f64> = needed
        .into_par_iter()
        .map(|((ci, key), t)| {
            let rule = ClusterPolicy {
                id,
                lesion_thresholds: t,
                et_wt_threshold: 0.0,
            };
            let out = apply_cluster_policy(&cases[ci].pred, &rule, connectivity);
            Ok(((ci, key), mean_lesion_dice(&cases[ci].gt, &out, params)?))
        })
        .collect::<Result<_>>()?;

    let objective = |t: &LesionThresholds| -> f64 {
        sizes
            .iter()
            .enumerate()
            .map(|(ci, s)| scored[&(ci, s.key(t))])
            .sum::<f64>()
            / cases.len() as f64
    };
    let mut best_t = LesionThresholds::default();
    let mut best = objective(&best_t);
    for t in &candidates {
        let v = objective(t);
        if better((v, t), (best, &best_t)) {
            best = v;
            best_t = *t;
        }
    }

    let ratio_scores: Vec<f64> = ratios
        .par_iter()
        .map(|&r| {
            let rule = ClusterPolicy {
                id,
                lesion_thresholds: best_t,
                et_wt_threshold: r,
            };
            let mut sum = 0.0;
            for c in cases {
                sum += mean_lesion_dice(&c.gt, &apply_cluster_policy(&c.pred, &rule, connectivity), params)?;
            }
            Ok(sum / cases.len() as f64)
        })
        .collect::<Result<_>>()?;
    let mut best_r = 0;
    for (i, &v) in ratio_scores.iter().enumerate() {
        if v > ratio_scores[best_r] {
            best_r = i;
        }
    }
    log::debug!(
        "cluster {id}: thresholds {:?}, ratio {}, objective {:.6} over {} cases",
        best_t.as_array(),
        ratios[best_r],
        ratio_scores[best_r],
        cases.len()
    );
    Ok((
        ClusterPolicy {
            id,
            lesion_thresholds: best_t,
            et_wt_threshold: ratios[best_r],
        },
        ratio_scores[best_r],
    ))
}

/// Grid-searches each cluster's thresholds to maximize the mean over its cases
/// of the ET/TC/WT-averaged lesion-wise Dice. Lesion thresholds are searched
/// jointly first (ratio 0), then the ratio threshold. Ties prefer the smaller
/// threshold sum, then the lexicographically smaller triple, then the smaller
/// ratio. Clusters without cases keep the all-zero rule.
pub fn fit_policy(
    cases: &[FitCase],
    n_clusters: usize,
    grid: &FitGrid,
    connectivity: Connectivity,
    params: &LesionParams,
) -> Result<PostprocessPolicy> {
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("n_clusters must be positive".into()));
    }
    let (thresholds, ratios) = grid.validated()?;
    let mut by_cluster: Vec<Vec<&FitCase>> = vec![Vec::new(); n_clusters];
    for c in cases {
        if let ClusterAssignment::Cluster(id) = c.cluster {
            by_cluster
                .get_mut(id)
                .ok_or(Error::MissingCluster(id))?
                .push(c);
        }
    }
    let clusters = by_cluster
        .iter()
        .enumerate()
        .map(|(id, members)| {
            if members.is_empty() {
                log::warn!("cluster {id} has no fitting cases; keeping the all-zero rule");
            }
            fit_cluster(id, members, &thresholds, &ratios, connectivity, params).map(|(p, _)| p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PostprocessPolicy { connectivity, clusters })
}

/// Mean ET/TC/WT lesion-wise Dice over cases under a policy.
pub fn policy_objective(cases: &[FitCase], policy: &PostprocessPolicy, params: &LesionParams) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let scores: Vec<f64> = cases
        .par_iter()
        .map(|c| mean_lesion_dice(&c.gt, &apply_policy(&c.pred, c.cluster, policy)?, params))
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / cases.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use proptest::prelude::*;

    fn geom() -> Geometry {
        Geometry::new([20, 20, 20], [1.0; 3]).unwrap()
    }

    fn fill_box(data: &mut [u8], g: &Geometry, lo: [usize; 3], hi: [usize; 3], label: u8) {
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    data[g.index(i, j, k)] = label;
                }
            }
        }
    }

    #[test]
    fn reference_policy_verbatim() {
        let p = PostprocessPolicy::reference();
        let expected = [
            [0, 0, 0],
            [0, 0, 50],
            [0, 0, 100],
            [0, 200, 0],
            [0, 0, 50],
            [0, 50, 0],
            [0, 0, 0],
            [0, 0, 0],
            [0, 0, 0],
        ];
        assert_eq!(p.n_clusters(), 9);
        for (c, e) in p.clusters.iter().zip(expected) {
            assert_eq!(c.lesion_thresholds.as_array(), e);
            assert_eq!(c.et_wt_threshold, if c.id == 6 { 0.1 } else { 0.0 });
        }
    }

    #[test]
    fn ratio_examples() {
        let g = Geometry::new([100, 1, 1], [1.0; 3]).unwrap();
        let mut data = vec![0u8; 100];
        data[..10].fill(ET);
        data[10..50].fill(NCR);
        data[50..].fill(ED);
        assert_eq!(et_wt_ratio(&LabelVolume::new(g.clone(), data).unwrap()), 0.1);
        assert_eq!(et_wt_ratio(&LabelVolume::zeros(g.clone())), 0.0);
        assert_eq!(et_wt_ratio(&LabelVolume::new(g, vec![ET; 100]).unwrap()), 1.0);
    }

    #[test]
    fn cluster3_edema_threshold() {
        let g = geom();
        let mut data = vec![0u8; g.len()];
        fill_box(&mut data, &g, [0, 0, 0], [10, 5, 3], ED);
        fill_box(&mut data, &g, [10, 12, 0], [20, 17, 5], ED);
        let pred = LabelVolume::new(g, data).unwrap();
        let out = apply_policy(&pred, ClusterAssignment::Cluster(3), &PostprocessPolicy::reference()).unwrap();
        assert_eq!(out.count(ED), 250);
    }

    #[test]
    fn cluster6_relabels_low_ratio() {
        let g = geom();
        let mut data = vec![0u8; g.len()];
        fill_box(&mut data, &g, [0, 0, 0], [10, 10, 10], ED);
        fill_box(&mut data, &g, [0, 0, 0], [5, 5, 2], ET);
        let pred = LabelVolume::new(g, data).unwrap();
        assert_eq!(et_wt_ratio(&pred), 0.05);
        let out = apply_policy(&pred, ClusterAssignment::Cluster(6), &PostprocessPolicy::reference()).unwrap();
        assert_eq!(out.count(ET), 0);
        assert_eq!(out.count(NCR), 50);
        let policy = PostprocessPolicy::reference();
        assert_eq!(apply_policy(&pred, ClusterAssignment::Empty, &policy).unwrap(), pred);
        assert!(matches!(
            apply_policy(&pred, ClusterAssignment::Cluster(9), &policy),
            Err(Error::MissingCluster(9))
        ));
    }

    #[test]
    fn policy_json_layout() {
        let json = serde_json::to_value(PostprocessPolicy::identity(1, Connectivity::TwentySix)).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"connectivity": 26, "clusters": [{"id": 0, "lesion_thresholds": {"1": 0, "2": 0, "3": 0}, "et_wt_threshold": 0.0}]})
        );
        let bad = br#"{"connectivity": 26, "clusters": [{"id": 1, "lesion_thresholds": {"1": 0, "2": 0, "3": 0}, "et_wt_threshold": 0.0}]}"#;
        assert!(PostprocessPolicy::from_json(bad).is_err());
    }

    #[test]
    fn zero_grid_gives_identity() {
        let g = geom();
        let mut data = vec![0u8; g.len()];
        fill_box(&mut data, &g, [2, 2, 2], [6, 6, 6], ET);
        let pred = LabelVolume::new(g.clone(), data).unwrap();
        let case = FitCase {
            case_id: "a".into(),
            pred: pred.clone(),
            gt: pred,
            cluster: ClusterAssignment::Cluster(0),
        };
        let grid = FitGrid {
            thresholds: vec![0],
            ratios: vec![0.0],
        };
        let p = fit_policy(&[case.clone()], 2, &grid, Connectivity::TwentySix, &LesionParams::default()).unwrap();
        assert_eq!(p, PostprocessPolicy::identity(2, Connectivity::TwentySix));
        let p = fit_policy(&[case], 1, &FitGrid::default(), Connectivity::TwentySix, &LesionParams::default()).unwrap();
        assert_eq!(p, PostprocessPolicy::identity(1, Connectivity::TwentySix));
        let no_zero = FitGrid {
            thresholds: vec![10],
            ratios: vec![0.0],
        };
        assert!(fit_policy(&[], 1, &no_zero, Connectivity::TwentySix, &LesionParams::default()).is_err());
    }

    fn label_strategy() -> impl Strategy<Value = LabelVolume> {
        proptest::collection::vec(prop_oneof![6 => Just(0u8), 1 => Just(1u8), 1 => Just(2u8), 1 => Just(3u8)], 7 * 7 * 7)
            .prop_map(|d| LabelVolume::new(Geometry::new([7, 7, 7], [1.0; 3]).unwrap(), d).unwrap())
    }

    fn rule_strategy() -> impl Strategy<Value = ClusterPolicy> {
        (0usize..6, 0usize..6, 0usize..6, 0.0f64..0.6).prop_map(|(a, b, c, r)| ClusterPolicy {
            id: 0,
            lesion_thresholds: LesionThresholds::new(a, b, c),
            et_wt_threshold: r,
        })
    }

    proptest! {
        #[test]
        fn idempotent(pred in label_strategy(), rule in rule_strategy(), six in any::<bool>()) {
            let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
            let once = apply_cluster_policy(&pred, &rule, conn);
            let twice = apply_cluster_policy(&once, &rule, conn);
            prop_assert_eq!(&once, &twice);
            for (a, b) in pred.data().iter().zip(once.data()) {
                prop_assert!(*b == *a || *b == BG || (*a == ET && *b == NCR));
            }
        }

        #[test]
        fn zero_rule_is_identity(pred in label_strategy()) {
            prop_assert_eq!(apply_cluster_policy(&pred, &ClusterPolicy::identity(0), Connectivity::TwentySix), pred);
        }
    }
}
