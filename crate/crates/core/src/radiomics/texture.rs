//! Texture matrices (GLCM, GLRLM, GLSZM, GLDM, NGTDM) and their features.
//!
//! All matrices are built on the discretized ROI. Gray levels are the bin
//! indices `1..=n_bins`; entropies use log2 with `0 log 0 = 0`. Degenerate
//! denominators take fixed values instead of producing NaN:
//!
//! * GLCM: correlation 1 when either marginal has zero variance; MCC 1 with
//!   fewer than two gray levels; Imc1 0 when both marginal entropies vanish;
//!   Imc2 0 when HXY exceeds HXY2; every GLCM feature 0 when no voxel pair
//!   exists in any direction.
//! * NGTDM: coarseness 10^6 when the weighted tone difference is 0; contrast and
//!   busyness 0 with a single gray level; strength 0 when all differences are 0.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{discretize, DiscretizedImage, FeatureVector, RadiomicsConfig};
use crate::error::Result;
use crate::volume::{BinaryMask, Connectivity, VoxelGrid};

/// The 13 unique neighbor directions of a 26-neighborhood.
pub const GLCM_DIRECTIONS: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

pub const GLCM_NAMES: [&str; 24] = [
    "Autocorrelation",
    "JointAverage",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "JointEnergy",
    "JointEntropy",
    "Imc1",
    "Imc2",
    "Idm",
    "Idmn",
    "Id",
    "Idn",
    "InverseVariance",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
    "MCC",
];

pub const GLRLM_NAMES: [&str; 16] = [
    "ShortRunEmphasis",
    "LongRunEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "GrayLevelVariance",
    "RunVariance",
    "RunEntropy",
    "LowGrayLevelRunEmphasis",
    "HighGrayLevelRunEmphasis",
    "ShortRunLowGrayLevelEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LongRunHighGrayLevelEmphasis",
];

pub const GLSZM_NAMES: [&str; 16] = [
    "SmallAreaEmphasis",
    "LargeAreaEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized",
    "ZonePercentage",
    "GrayLevelVariance",
    "ZoneVariance",
    "ZoneEntropy",
    "LowGrayLevelZoneEmphasis",
    "HighGrayLevelZoneEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
];

pub const GLDM_NAMES: [&str; 14] = [
    "SmallDependenceEmphasis",
    "LargeDependenceEmphasis",
    "GrayLevelNonUniformity",
    "DependenceNonUniformity",
    "DependenceNonUniformityNormalized",
    "GrayLevelVariance",
    "DependenceVariance",
    "DependenceEntropy",
    "LowGrayLevelEmphasis",
    "HighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis",
    "SmallDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis",
    "LargeDependenceHighGrayLevelEmphasis",
];

pub const NGTDM_NAMES: [&str; 5] = ["Coarseness", "Contrast", "Busyness", "Complexity", "Strength"];

/// Discretized ROI cropped to its bounding box.
struct Roi {
    dims: [usize; 3],
    bins: Vec<u32>,
    levels: usize,
    voxels: usize,
}

impl Roi {
    fn new(disc: &DiscretizedImage) -> Roi {
        let d = disc.dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut voxels = 0;
        for (idx, &b) in disc.bins.iter().enumerate() {
            if b == 0 {
                continue;
            }
            let c = [idx % d[0], (idx / d[0]) % d[1], idx / (d[0] * d[1])];
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            voxels += 1;
        }
        if voxels == 0 {
            return Roi {
                dims: [1, 1, 1],
                bins: vec![0],
                levels: disc.n_bins as usize,
                voxels,
            };
        }
        let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
        let mut bins = Vec::with_capacity(dims.iter().product());
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                let row = d[0] * (j + d[1] * k);
                bins.extend_from_slice(&disc.bins[row + lo[0]..=row + hi[0]]);
            }
        }
        Roi {
            dims,
            bins,
            levels: disc.n_bins as usize,
            voxels,
        }
    }

    #[inline]
    fn coords(&self, idx: usize) -> [usize; 3] {
        let d = self.dims;
        [idx % d[0], (idx / d[0]) % d[1], idx / (d[0] * d[1])]
    }

    #[inline]
    fn step(&self, c: [usize; 3], d: [i64; 3]) -> Option<usize> {
        crate::volume::offset_index(self.dims, c, d)
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

fn glcm_matrix(roi: &Roi, d: [i64; 3]) -> Vec<f64> {
    let ng = roi.levels;
    let mut m = vec![0.0; ng * ng];
    for (idx, &g) in roi.bins.iter().enumerate() {
        if g == 0 {
            continue;
        }
        if let Some(n) = roi.step(roi.coords(idx), d) {
            let h = roi.bins[n];
            if h > 0 {
                let (a, b) = (g as usize - 1, h as usize - 1);
                m[a * ng + b] += 1.0;
                m[b * ng + a] += 1.0;
            }
        }
    }
    m
}

/// The 24 GLCM features of one normalized symmetric co-occurrence matrix.
fn glcm_from_probabilities(p: &[f64], ng: usize) -> [f64; 24] {
    let level = |i: usize| (i + 1) as f64;
    let mut px = vec![0.0; ng];
    let mut py = vec![0.0; ng];
    for i in 0..ng {
        for j in 0..ng {
            px[i] += p[i * ng + j];
            py[j] += p[i * ng + j];
        }
    }
    let mux: f64 = (0..ng).map(|i| level(i) * px[i]).sum();
    let muy: f64 = (0..ng).map(|j| level(j) * py[j]).sum();
    let varx: f64 = (0..ng).map(|i| (level(i) - mux).powi(2) * px[i]).sum();
    let vary: f64 = (0..ng).map(|j| (level(j) - muy).powi(2) * py[j]).sum();

    let mut p_sum = vec![0.0; 2 * ng + 1];
    let mut p_diff = vec![0.0; ng];
    let (mut autocorr, mut prominence, mut shade, mut tendency, mut contrast) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut energy, mut hxy, mut hxy1, mut hxy2) = (0.0, 0.0, 0.0, 0.0);
    let (mut idm, mut idmn, mut id, mut idn, mut maxp, mut sum_squares) = (0.0, 0.0, 0.0, 0.0, 0.0f64, 0.0);
    let ngf = ng as f64;
    for i in 0..ng {
        for j in 0..ng {
            let v = p[i * ng + j];
            let (li, lj) = (level(i), level(j));
            let pxpy = px[i] * py[j];
            if pxpy > 0.0 {
                hxy2 -= pxpy * pxpy.log2();
            }
            if v == 0.0 {
                continue;
            }
            p_sum[i + j + 2] += v;
            p_diff[i.abs_diff(j)] += v;
            autocorr += v * li * lj;
            let s = li + lj - mux - muy;
            prominence += s.powi(4) * v;
            shade += s.powi(3) * v;
            tendency += s * s * v;
            let d = li - lj;
            contrast += d * d * v;
            energy += v * v;
            hxy -= v * v.log2();
            hxy1 -= v * pxpy.log2();
            idm += v / (1.0 + d * d);
            idmn += v / (1.0 + d * d / (ngf * ngf));
            id += v / (1.0 + d.abs());
            idn += v / (1.0 + d.abs() / ngf);
            maxp = maxp.max(v);
            sum_squares += (li - mux).powi(2) * v;
        }
    }

    let correlation = if varx * vary > 0.0 {
        (autocorr - mux * muy) / (varx.sqrt() * vary.sqrt())
    } else {
        1.0
    };
    let diff_avg: f64 = (0..ng).map(|k| k as f64 * p_diff[k]).sum();
    let diff_entropy: f64 = -p_diff.iter().map(|&v| plogp(v)).sum::<f64>();
    let diff_var: f64 = (0..ng).map(|k| (k as f64 - diff_avg).powi(2) * p_diff[k]).sum();
    let inverse_variance: f64 = (1..ng).map(|k| p_diff[k] / (k * k) as f64).sum();
    let sum_avg: f64 = (2..=2 * ng).map(|k| k as f64 * p_sum[k]).sum();
    let sum_entropy: f64 = -p_sum.iter().map(|&v| plogp(v)).sum::<f64>();

    let hx: f64 = -px.iter().map(|&v| plogp(v)).sum::<f64>();
    let hy: f64 = -py.iter().map(|&v| plogp(v)).sum::<f64>();
    let imc1 = if hx.max(hy) > 0.0 {
        (hxy - hxy1) / hx.max(hy)
    } else {
        0.0
    };
    let imc2 = if hxy2 > hxy {
        (1.0 - (-2.0 * (hxy2 - hxy)).exp()).sqrt()
    } else {
        0.0
    };

    [
        autocorr,
        mux,
        prominence,
        shade,
        tendency,
        contrast,
        correlation,
        diff_avg,
        diff_entropy,
        diff_var,
        energy,
        hxy,
        imc1,
        imc2,
        idm,
        idmn,
        id,
        idn,
        inverse_variance,
        maxp,
        sum_avg,
        sum_entropy,
        sum_squares,
        mcc(p, &px, &py, ng),
    ]
}

/// Eigenvalues below this are treated as zero before taking the MCC square root.
pub(crate) const MCC_EIGEN_FLOOR: f64 = 1e-14;

/// Square root of the second-largest eigenvalue of `Q = Dx⁻¹ P Dy⁻¹ Pᵀ`,
/// computed on the symmetric similar matrix `Dx^½ Q Dx^-½`.
fn mcc(p: &[f64], px: &[f64], py: &[f64], ng: usize) -> f64 {
    let present: Vec<usize> = (0..ng).filter(|&i| px[i] > 0.0).collect();
    let m = present.len();
    if m < 2 {
        return 1.0;
    }
    let cols: Vec<usize> = (0..ng).filter(|&k| py[k] > 0.0).collect();
    let s = DMatrix::from_fn(m, m, |a, b| {
        let (ia, ib) = (present[a], present[b]);
        let acc: f64 = cols
            .iter()
            .map(|&k| p[ia * ng + k] * p[ib * ng + k] / py[k])
            .sum();
        acc / (px[ia].sqrt() * px[ib].sqrt())
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let second = eig[1];
    if second < MCC_EIGEN_FLOOR {
        0.0
    } else {
        second.sqrt().min(1.0)
    }
}

fn glcm_on_roi(roi: &Roi) -> Vec<f64> {
    let ng = roi.levels;
    let mut acc = [0.0f64; 24];
    let mut used = 0usize;
    for d in GLCM_DIRECTIONS {
        let m = glcm_matrix(roi, d);
        let total: f64 = m.iter().sum();
        if total == 0.0 {
            continue;
        }
        let p: Vec<f64> = m.iter().map(|v| v / total).collect();
        for (a, f) in acc.iter_mut().zip(glcm_from_probabilities(&p, ng)) {
            *a += f;
        }
        used += 1;
    }
    if used > 0 {
        acc.iter().map(|a| a / used as f64).collect()
    } else {
        vec![0.0; 24]
    }
}

/// Gray level by size matrix shared by the run-length, size-zone and dependence families.
/// Row `i` is gray level `i + 1`, column `j` is size `j + 1`.
struct SizeMatrix {
    counts: Vec<Vec<f64>>,
}

struct SizeStats {
    small: f64,
    large: f64,
    gln: f64,
    glnn: f64,
    sn: f64,
    snn: f64,
    total: f64,
    gl_var: f64,
    size_var: f64,
    entropy: f64,
    low_gl: f64,
    high_gl: f64,
    small_low: f64,
    small_high: f64,
    large_low: f64,
    large_high: f64,
}

impl SizeMatrix {
    fn new(levels: usize) -> Self {
        Self {
            counts: vec![Vec::new(); levels],
        }
    }

    fn add(&mut self, level: u32, size: usize) {
        let row = &mut self.counts[level as usize - 1];
        if row.len() < size {
            row.resize(size, 0.0);
        }
        row[size - 1] += 1.0;
    }

    fn stats(&self) -> SizeStats {
        let total: f64 = self.counts.iter().flatten().sum();
        let width = self.counts.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut col = vec![0.0; width];
        let mut s = SizeStats {
            small: 0.0,
            large: 0.0,
            gln: 0.0,
            glnn: 0.0,
            sn: 0.0,
            snn: 0.0,
            total,
            gl_var: 0.0,
            size_var: 0.0,
            entropy: 0.0,
            low_gl: 0.0,
            high_gl: 0.0,
            small_low: 0.0,
            small_high: 0.0,
            large_low: 0.0,
            large_high: 0.0,
        };
        let (mut mu_i, mut mu_j) = (0.0, 0.0);
        for (i, row) in self.counts.iter().enumerate() {
            let gi = (i + 1) as f64;
            let row_sum: f64 = row.iter().sum();
            s.gln += row_sum * row_sum;
            for (j, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                col[j] += c;
                let sj = (j + 1) as f64;
                let p = c / total;
                let (i2, j2) = (gi * gi, sj * sj);
                s.small += p / j2;
                s.large += p * j2;
                s.entropy -= plogp(p);
                s.low_gl += p / i2;
                s.high_gl += p * i2;
                s.small_low += p / (i2 * j2);
                s.small_high += p * i2 / j2;
                s.large_low += p * j2 / i2;
                s.large_high += p * i2 * j2;
                mu_i += p * gi;
                mu_j += p * sj;
            }
        }
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0.0 {
                    let p = c / total;
                    s.gl_var += p * ((i + 1) as f64 - mu_i).powi(2);
                    s.size_var += p * ((j + 1) as f64 - mu_j).powi(2);
                }
            }
        }
        s.sn = col.iter().map(|c| c * c).sum::<f64>();
        s.glnn = s.gln / (total * total);
        s.gln /= total;
        s.snn = s.sn / (total * total);
        s.sn /= total;
        s
    }

    /// The 16-feature layout used by GLRLM and GLSZM.
    fn sixteen(&self, voxels: usize) -> [f64; 16] {
        let s = self.stats();
        [
            s.small,
            s.large,
            s.gln,
            s.glnn,
            s.sn,
            s.snn,
            s.total / voxels as f64,
            s.gl_var,
            s.size_var,
            s.entropy,
            s.low_gl,
            s.high_gl,
            s.small_low,
            s.small_high,
            s.large_low,
            s.large_high,
        ]
    }
}

fn glrlm_on_roi(roi: &Roi) -> Vec<f64> {
    let mut acc = [0.0f64; 16];
    for d in GLCM_DIRECTIONS {
        let mut m = SizeMatrix::new(roi.levels);
        let back = [-d[0], -d[1], -d[2]];
        for (idx, &g) in roi.bins.iter().enumerate() {
            if g == 0 {
                continue;
            }
            let c = roi.coords(idx);
            if roi.step(c, back).is_some_and(|p| roi.bins[p] == g) {
                continue;
            }
            let mut len = 1;
            let mut cur = c;
            while let Some(n) = roi.step(cur, d) {
                if roi.bins[n] != g {
                    break;
                }
                len += 1;
                cur = roi.coords(n);
            }
            m.add(g, len);
        }
        for (a, f) in acc.iter_mut().zip(m.sixteen(roi.voxels)) {
            *a += f;
        }
    }
    acc.iter().map(|a| a / GLCM_DIRECTIONS.len() as f64).collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn glszm_on_roi(roi: &Roi) -> Vec<f64> {
    let n = roi.bins.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let forward: Vec<[i64; 3]> = GLCM_DIRECTIONS.to_vec();
    for (idx, &g) in roi.bins.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let c = roi.coords(idx);
        for d in &forward {
            if let Some(nb) = roi.step(c, *d) {
                if roi.bins[nb] == g {
                    let (a, b) = (find(&mut parent, idx), find(&mut parent, nb));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut size = vec![0usize; n];
    for idx in 0..n {
        if roi.bins[idx] > 0 {
            let r = find(&mut parent, idx);
            size[r] += 1;
        }
    }
    let mut m = SizeMatrix::new(roi.levels);
    for idx in 0..n {
        if roi.bins[idx] > 0 && parent[idx] == idx {
            m.add(roi.bins[idx], size[idx]);
        }
    }
    m.sixteen(roi.voxels).to_vec()
}

fn gldm_on_roi(roi: &Roi) -> Vec<f64> {
    let offsets = Connectivity::TwentySix.offsets();
    let mut m = SizeMatrix::new(roi.levels);
    for (idx, &g) in roi.bins.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let c = roi.coords(idx);
        let same = offsets
            .iter()
            .filter(|d| roi.step(c, **d).is_some_and(|n| roi.bins[n] == g))
            .count();
        m.add(g, same + 1);
    }
    let s = m.stats();
    vec![
        s.small,
        s.large,
        s.gln,
        s.sn,
        s.snn,
        s.gl_var,
        s.size_var,
        s.entropy,
        s.low_gl,
        s.high_gl,
        s.small_low,
        s.small_high,
        s.large_low,
        s.large_high,
    ]
}

pub(crate) const COARSENESS_LIMIT: f64 = 1e6;

fn ngtdm_on_roi(roi: &Roi) -> Vec<f64> {
    let offsets = Connectivity::TwentySix.offsets();
    let ng = roi.levels;
    let mut s = vec![0.0; ng];
    let mut n = vec![0.0; ng];
    for (idx, &g) in roi.bins.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let c = roi.coords(idx);
        let (mut sum, mut count) = (0.0, 0usize);
        for d in &offsets {
            if let Some(nb) = roi.step(c, *d) {
                let h = roi.bins[nb];
                if h > 0 {
                    sum += h as f64;
                    count += 1;
                }
            }
        }
        if count > 0 {
            let i = g as usize - 1;
            s[i] += (g as f64 - sum / count as f64).abs();
            n[i] += 1.0;
        }
    }
    let nvp: f64 = n.iter().sum();
    if nvp == 0.0 {
        return vec![COARSENESS_LIMIT, 0.0, 0.0, 0.0, 0.0];
    }
    let levels: Vec<usize> = (0..ng).filter(|&i| n[i] > 0.0).collect();
    let p: Vec<f64> = n.iter().map(|v| v / nvp).collect();
    let gl = |i: usize| (i + 1) as f64;
    let ps: f64 = levels.iter().map(|&i| p[i] * s[i]).sum();
    let s_total: f64 = s.iter().sum();
    let ngp = levels.len() as f64;

    let coarseness = if ps > 0.0 { 1.0 / ps } else { COARSENESS_LIMIT };
    let (mut pair_contrast, mut busy_den, mut complexity, mut strength_num) = (0.0, 0.0, 0.0, 0.0);
    for &i in &levels {
        for &j in &levels {
            let d = gl(i) - gl(j);
            pair_contrast += p[i] * p[j] * d * d;
            busy_den += (gl(i) * p[i] - gl(j) * p[j]).abs();
            complexity += d.abs() * (p[i] * s[i] + p[j] * s[j]) / (p[i] + p[j]);
            strength_num += (p[i] + p[j]) * d * d;
        }
    }
    let contrast = if levels.len() > 1 {
        pair_contrast / (ngp * (ngp - 1.0)) * s_total / nvp
    } else {
        0.0
    };
    let busyness = if levels.len() > 1 && busy_den > 0.0 {
        ps / busy_den
    } else {
        0.0
    };
    let strength = if s_total > 0.0 { strength_num / s_total } else { 0.0 };
    vec![coarseness, contrast, busyness, complexity / nvp, strength]
}

pub fn glcm_features(disc: &DiscretizedImage) -> FeatureVector {
    FeatureVector::from_static(&GLCM_NAMES, glcm_on_roi(&Roi::new(disc)))
}

pub fn glrlm_features(disc: &DiscretizedImage) -> FeatureVector {
    FeatureVector::from_static(&GLRLM_NAMES, glrlm_on_roi(&Roi::new(disc)))
}

pub fn glszm_features(disc: &DiscretizedImage) -> FeatureVector {
    FeatureVector::from_static(&GLSZM_NAMES, glszm_on_roi(&Roi::new(disc)))
}

pub fn gldm_features(disc: &DiscretizedImage) -> FeatureVector {
    FeatureVector::from_static(&GLDM_NAMES, gldm_on_roi(&Roi::new(disc)))
}

pub fn ngtdm_features(disc: &DiscretizedImage) -> FeatureVector {
    FeatureVector::from_static(&NGTDM_NAMES, ngtdm_on_roi(&Roi::new(disc)))
}

/// All 75 texture features, names prefixed by family.
pub fn texture_features(image: &VoxelGrid, mask: &BinaryMask, config: &RadiomicsConfig) -> Result<FeatureVector> {
    let disc = discretize(image, mask, config.bin_width)?;
    let roi = Roi::new(&disc);
    let mut fv = FeatureVector::from_static(&GLCM_NAMES, glcm_on_roi(&roi)).prefixed("glcm");
    fv.extend(FeatureVector::from_static(&GLRLM_NAMES, glrlm_on_roi(&roi)).prefixed("glrlm"));
    fv.extend(FeatureVector::from_static(&GLSZM_NAMES, glszm_on_roi(&roi)).prefixed("glszm"));
    fv.extend(FeatureVector::from_static(&GLDM_NAMES, gldm_on_roi(&roi)).prefixed("gldm"));
    fv.extend(FeatureVector::from_static(&NGTDM_NAMES, ngtdm_on_roi(&roi)).prefixed("ngtdm"));
    Ok(fv)
}
