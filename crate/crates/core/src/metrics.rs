//! Volumetric and lesion-wise Dice / HD95.
//!
//! Surface voxels are foreground voxels with at least one 6-neighbor that is
//! background or outside the volume. HD95 is the 95th percentile (linear
//! interpolation) of the pooled surface-to-surface distances in both
//! directions, measured between voxel centers in mm.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiomics::percentile;
use crate::volume::{
    connected_components, dilate, offset_index, regions_from_labels, BinaryMask, Connectivity, LabelVolume, Region,
};

pub const DEFAULT_PENALTY: f64 = 374.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionParams {
    pub connectivity: Connectivity,
    pub dilation_radius: usize,
    pub penalty: f64,
    pub min_fp_size: usize,
}

impl Default for LesionParams {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::TwentySix,
            dilation_radius: 1,
            penalty: DEFAULT_PENALTY,
            min_fp_size: 0,
        }
    }
}

/// `2|a∩b| / (|a|+|b|)`, 1 when both are empty.
pub fn volumetric_dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.geometry().ensure_same_dims(b.geometry())?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    Ok(if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    })
}

/// Surface voxel coordinates of a mask, in index order.
pub fn surface_voxels(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let dims = mask.dims();
    let faces: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    mask.indices()
        .filter_map(|idx| {
            let c = mask.geometry().coords(idx);
            let exposed = faces
                .iter()
                .any(|d| offset_index(dims, c, *d).is_none_or(|n| !mask.get(n)));
            exposed.then_some(c)
        })
        .collect()
}

/// One-dimensional squared distance transform (lower envelope of parabolas)
/// with sample spacing `s`. Infinite entries are non-features.
fn edt_1d(f: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let xq = q as f64 * s;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let xp = p as f64 * s;
                    let cross = ((fq + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                    if cross <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(cross);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let xq = q as f64 * s;
        while k + 1 < v.len() && z[k + 1] < xq {
            k += 1;
        }
        let d = xq - v[k] as f64 * s;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (mm²) from every voxel of a `dims` box to
/// the nearest feature voxel.
pub fn squared_edt(features: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let mut g: Vec<f64> = features
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = dims[axis];
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        for start in 0..g.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (t, l) in line.iter_mut().enumerate() {
                *l = g[start + t * stride];
            }
            edt_1d(&line, spacing[axis], &mut out, &mut v, &mut z);
            for (t, o) in out.iter().enumerate() {
                g[start + t * stride] = *o;
            }
        }
    }
    g
}

/// Distances from each point of `from` to the nearest point of `to`, computed
/// on the joint bounding box.
fn directed_distances(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0; 3];
    for c in from.iter().chain(to) {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let local = |c: &[usize; 3]| (c[0] - lo[0]) + dims[0] * ((c[1] - lo[1]) + dims[1] * (c[2] - lo[2]));
    let mut features = vec![false; dims.iter().product()];
    for c in to {
        features[local(c)] = true;
    }
    let d2 = squared_edt(&features, dims, spacing);
    from.iter().map(|c| d2[local(c)].sqrt()).collect()
}

/// Symmetric 95th-percentile surface distance; 0 when both masks are empty
/// and `penalty` when exactly one is.
pub fn volumetric_hd95(a: &BinaryMask, b: &BinaryMask, spacing: [f64; 3], penalty: f64) -> Result<f64> {
    a.geometry().ensure_same_dims(b.geometry())?;
    let (sa, sb) = (surface_voxels(a), surface_voxels(b));
    match (sa.is_empty(), sb.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(penalty),
        _ => {}
    }
    let mut d = directed_distances(&sa, &sb, spacing);
    d.extend(directed_distances(&sb, &sa, spacing));
    d.sort_by(|x, y| x.total_cmp(y));
    Ok(percentile(&d, 0.95))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Matched,
    FalseNegative,
}

/// Score of one ground-truth lesion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionMatch {
    /// 1-based ground-truth component id.
    pub gt_component: u32,
    pub gt_size: usize,
    /// 1-based predicted component ids overlapping the dilated lesion.
    pub matched_pred: Vec<u32>,
    pub dice: f64,
    pub hd95: f64,
    pub status: MatchStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsePositive {
    pub pred_component: u32,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionWise {
    pub dice: f64,
    pub hd95: f64,
    pub matches: Vec<LesionMatch>,
    /// Unmatched predicted lesions larger than the minimum size; each scores Dice 0 and the penalty.
    pub false_positives: Vec<FalsePositive>,
}

impl LesionWise {
    pub fn n_matched(&self) -> usize {
        self.matches.iter().filter(|m| m.status == MatchStatus::Matched).count()
    }

    pub fn n_false_negative(&self) -> usize {
        self.matches.len() - self.n_matched()
    }

    pub fn n_false_positive(&self) -> usize {
        self.false_positives.len()
    }
}

pub fn lesion_wise(gt: &BinaryMask, pred: &BinaryMask, spacing: [f64; 3], params: &LesionParams) -> Result<LesionWise> {
    gt.geometry().ensure_same_dims(pred.geometry())?;
    let gt_cc = connected_components(gt, params.connectivity);
    let pred_cc = connected_components(pred, params.connectivity);
    let gt_members = gt_cc.members();
    let pred_members = pred_cc.members();
    let mut pred_used = vec![false; pred_cc.count()];
    let mut matches = Vec::with_capacity(gt_cc.count());

    for (g, members) in gt_members.iter().enumerate() {
        let lesion = BinaryMask::from_indices(gt.geometry().clone(), members.iter().copied());
        let region = dilate(&lesion, params.dilation_radius, Connectivity::TwentySix);
        let mut hits: Vec<u32> = region
            .indices()
            .filter_map(|i| match pred_cc.labels[i] {
                0 => None,
                l => Some(l),
            })
            .collect();
        hits.sort_unstable();
        hits.dedup();
        for &h in &hits {
            pred_used[h as usize - 1] = true;
        }
        let (dice, hd95, status) = if hits.is_empty() {
            (0.0, params.penalty, MatchStatus::FalseNegative)
        } else {
            let matched = BinaryMask::from_indices(
                gt.geometry().clone(),
                hits.iter().flat_map(|&h| pred_members[h as usize - 1].iter().copied()),
            );
            (
                volumetric_dice(&lesion, &matched)?,
                volumetric_hd95(&lesion, &matched, spacing, params.penalty)?,
                MatchStatus::Matched,
            )
        };
        matches.push(LesionMatch {
            gt_component: g as u32 + 1,
            gt_size: members.len(),
            matched_pred: hits,
            dice,
            hd95,
            status,
        });
    }

    let false_positives: Vec<FalsePositive> = pred_cc
        .sizes
        .iter()
        .enumerate()
        .filter(|&(p, &size)| !pred_used[p] && size > params.min_fp_size)
        .map(|(p, &size)| FalsePositive {
            pred_component: p as u32 + 1,
            size,
        })
        .collect();

    let entries = matches.len() + false_positives.len();
    let (dice, hd95) = if entries == 0 {
        (1.0, 0.0)
    } else {
        let dice_sum: f64 = matches.iter().map(|m| m.dice).sum();
        let hd_sum: f64 = matches.iter().map(|m| m.hd95).sum::<f64>() + params.penalty * false_positives.len() as f64;
        (dice_sum / entries as f64, hd_sum / entries as f64)
    };
    Ok(LesionWise {
        dice,
        hd95,
        matches,
        false_positives,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: Region,
    pub lesion_wise_dice: f64,
    pub lesion_wise_hd95: f64,
    pub volumetric_dice: f64,
    pub volumetric_hd95: f64,
    pub n_matched: usize,
    pub n_false_negative: usize,
    pub n_false_positive: usize,
    pub lesions: Vec<LesionMatch>,
    pub false_positives: Vec<FalsePositive>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    /// In the order ET, TC, WT.
    pub regions: Vec<RegionReport>,
}

impl CaseReport {
    pub fn region(&self, region: Region) -> &RegionReport {
        self.regions
            .iter()
            .find(|r| r.region == region)
            .expect("reports hold every region")
    }

    /// Mean lesion-wise Dice over ET, TC and WT.
    pub fn mean_lesion_dice(&self) -> f64 {
        self.regions.iter().map(|r| r.lesion_wise_dice).sum::<f64>() / self.regions.len() as f64
    }
}

pub fn evaluate_region(
    region: Region,
    gt: &BinaryMask,
    pred: &BinaryMask,
    spacing: [f64; 3],
    params: &LesionParams,
) -> Result<RegionReport> {
    let lw = lesion_wise(gt, pred, spacing, params)?;
    Ok(RegionReport {
        region,
        lesion_wise_dice: lw.dice,
        lesion_wise_hd95: lw.hd95,
        volumetric_dice: volumetric_dice(gt, pred)?,
        volumetric_hd95: volumetric_hd95(gt, pred, spacing, params.penalty)?,
        n_matched: lw.n_matched(),
        n_false_negative: lw.n_false_negative(),
        n_false_positive: lw.n_false_positive(),
        lesions: lw.matches,
        false_positives: lw.false_positives,
    })
}

pub fn evaluate_case(
    case_id: &str,
    gt: &LabelVolume,
    pred: &LabelVolume,
    spacing: [f64; 3],
    params: &LesionParams,
) -> Result<CaseReport> {
    gt.geometry().ensure_same_dims(pred.geometry())?;
    let (g, p) = (regions_from_labels(gt), regions_from_labels(pred));
    let regions = Region::ALL
        .iter()
        .map(|&r| evaluate_region(r, g.get(r), p.get(r), spacing, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseReport {
        case_id: case_id.to_string(),
        regions,
    })
}

/// Lesion-wise Dice over ET, TC and WT only; skips the HD95 computations.
pub fn mean_lesion_dice(gt: &LabelVolume, pred: &LabelVolume, params: &LesionParams) -> Result<f64> {
    gt.geometry().ensure_same_dims(pred.geometry())?;
    let (g, p) = (regions_from_labels(gt), regions_from_labels(pred));
    let mut sum = 0.0;
    for r in Region::ALL {
        sum += lesion_dice(g.get(r), p.get(r), params)?;
    }
    Ok(sum / 3.0)
}

fn lesion_dice(gt: &BinaryMask, pred: &BinaryMask, params: &LesionParams) -> Result<f64> {
    let gt_cc = connected_components(gt, params.connectivity);
    let pred_cc = connected_components(pred, params.connectivity);
    let pred_members = pred_cc.members();
    let mut used = vec![false; pred_cc.count()];
    let mut dice_sum = 0.0;
    for members in gt_cc.members() {
        let lesion = BinaryMask::from_indices(gt.geometry().clone(), members.iter().copied());
        let region = dilate(&lesion, params.dilation_radius, Connectivity::TwentySix);
        let mut hits: Vec<u32> = region.indices().map(|i| pred_cc.labels[i]).filter(|&l| l > 0).collect();
        hits.sort_unstable();
        hits.dedup();
        if hits.is_empty() {
            continue;
        }
        for &h in &hits {
            used[h as usize - 1] = true;
        }
        let matched = BinaryMask::from_indices(
            gt.geometry().clone(),
            hits.iter().flat_map(|&h| pred_members[h as usize - 1].iter().copied()),
        );
        dice_sum += volumetric_dice(&lesion, &matched)?;
    }
    let fp = pred_cc
        .sizes
        .iter()
        .enumerate()
        .filter(|&(p, &s)| !used[p] && s > params.min_fp_size)
        .count();
    let entries = gt_cc.count() + fp;
    Ok(if entries == 0 { 1.0 } else { dice_sum / entries as f64 })
}

const CSV_COLUMNS: [&str; 9] = [
    "case_id",
    "region",
    "lesion_wise_dice",
    "lesion_wise_hd95",
    "volumetric_dice",
    "volumetric_hd95",
    "n_matched",
    "n_false_negative",
    "n_false_positive",
];

/// Per-region means over cases, in ET, TC, WT order.
pub fn mean_rows(reports: &[CaseReport]) -> Vec<[f64; 4]> {
    Region::ALL
        .iter()
        .map(|&r| {
            let mut acc = [0.0; 4];
            for rep in reports {
                let x = rep.region(r);
                acc[0] += x.lesion_wise_dice;
                acc[1] += x.lesion_wise_hd95;
                acc[2] += x.volumetric_dice;
                acc[3] += x.volumetric_hd95;
            }
            acc.map(|v| v / reports.len().max(1) as f64)
        })
        .collect()
}

/// CSV report, one row per (case, region) in case-id order plus `mean` rows.
/// The first line is a `#` comment holding the parameters as JSON.
pub fn write_report_csv<W: Write>(mut writer: W, reports: &[CaseReport], params: &LesionParams) -> Result<()> {
    writeln!(writer, "# params: {}", serde_json::to_string(params)?).map_err(|e| Error::io("<csv>", e))?;
    let mut sorted: Vec<&CaseReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for rep in &sorted {
        for r in &rep.regions {
            w.write_record([
                rep.case_id.clone(),
                r.region.name().to_string(),
                r.lesion_wise_dice.to_string(),
                r.lesion_wise_hd95.to_string(),
                r.volumetric_dice.to_string(),
                r.volumetric_hd95.to_string(),
                r.n_matched.to_string(),
                r.n_false_negative.to_string(),
                r.n_false_positive.to_string(),
            ])?;
        }
    }
    for (region, m) in Region::ALL.iter().zip(mean_rows(reports)) {
        let mut rec = vec!["mean".to_string(), region.name().to_string()];
        rec.extend(m.iter().map(|v| v.to_string()));
        rec.extend(["", "", ""].map(String::from));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Serialize)]
struct JsonReport<'a> {
    params: &'a LesionParams,
    cases: Vec<&'a CaseReport>,
    mean: Vec<JsonMean>,
}

#[derive(Serialize)]
struct JsonMean {
    region: Region,
    lesion_wise_dice: f64,
    lesion_wise_hd95: f64,
    volumetric_dice: f64,
    volumetric_hd95: f64,
}

pub fn report_json(reports: &[CaseReport], params: &LesionParams) -> Result<Vec<u8>> {
    let mut cases: Vec<&CaseReport> = reports.iter().collect();
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mean = Region::ALL
        .iter()
        .zip(mean_rows(reports))
        .map(|(&region, m)| JsonMean {
            region,
            lesion_wise_dice: m[0],
            lesion_wise_hd95: m[1],
            volumetric_dice: m[2],
            volumetric_hd95: m[3],
        })
        .collect();
    Ok(serde_json::to_vec_pretty(&JsonReport { params, cases, mean })?)
}
