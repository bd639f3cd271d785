use super::{discretize, FeatureVector, RadiomicsConfig};
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, VoxelGrid};

pub const FIRST_ORDER_NAMES: [&str; 18] = [
    "Energy",
    "TotalEnergy",
    "Entropy",
    "Minimum",
    "10Percentile",
    "90Percentile",
    "Maximum",
    "Mean",
    "Median",
    "InterquartileRange",
    "Range",
    "MeanAbsoluteDeviation",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "Skewness",
    "Kurtosis",
    "Variance",
    "Uniformity",
];

/// Linear interpolation between order statistics of a sorted slice.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Intensity statistics inside the mask. Entropy and uniformity use the
/// discretized histogram; skewness and kurtosis are 0 for constant data.
pub fn first_order_features(
    image: &VoxelGrid,
    mask: &BinaryMask,
    config: &RadiomicsConfig,
) -> Result<FeatureVector> {
    image.geometry().ensure_same_dims(mask.geometry())?;
    let values: Vec<f64> = mask.indices().map(|i| image.data()[i]).collect();
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = values.len() as f64;
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));

    let energy: f64 = values.iter().map(|x| x * x).sum();
    let total_energy = image.geometry().voxel_volume() * energy;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut mad) = (0.0, 0.0, 0.0, 0.0);
    for &x in &values {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += d.abs();
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };

    let p10 = percentile(&sorted, 0.10);
    let p90 = percentile(&sorted, 0.90);
    let robust: Vec<f64> = values.iter().copied().filter(|&x| x >= p10 && x <= p90).collect();
    // with very few voxels no value may fall between the interpolated percentiles
    let robust_mad = if robust.is_empty() {
        0.0
    } else {
        let robust_mean = robust.iter().sum::<f64>() / robust.len() as f64;
        robust.iter().map(|x| (x - robust_mean).abs()).sum::<f64>() / robust.len() as f64
    };

    let disc = discretize(image, mask, config.bin_width)?;
    let mut hist = vec![0usize; disc.n_bins as usize + 1];
    for &b in disc.bins.iter().filter(|&&b| b > 0) {
        hist[b as usize] += 1;
    }
    let (mut entropy, mut uniformity) = (0.0, 0.0);
    for &c in hist.iter().filter(|&&c| c > 0) {
        let p = c as f64 / n;
        entropy -= p * p.log2();
        uniformity += p * p;
    }

    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    Ok(FeatureVector::from_static(
        &FIRST_ORDER_NAMES,
        vec![
            energy,
            total_energy,
            entropy,
            min,
            p10,
            p90,
            max,
            mean,
            percentile(&sorted, 0.5),
            percentile(&sorted, 0.75) - percentile(&sorted, 0.25),
            max - min,
            mad,
            robust_mad,
            (energy / n).sqrt(),
            skewness,
            kurtosis,
            m2,
            uniformity,
        ],
    ))
}
