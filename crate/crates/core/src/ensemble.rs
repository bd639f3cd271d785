//! Weighted ensembling of per-model region probability maps and decoding to labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti::check_same_geometry;
use crate::volume::{labels_from_regions, BinaryMask, LabelVolume, RegionMasks, VoxelGrid};

/// Default model weights, fitted from cross-validated performance.
pub const DEFAULT_WEIGHTS: [(&str, f64); 2] = [("nnunet", 0.4722), ("mednext", 0.5278)];

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One model's probabilities for the ET, TC and WT regions.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionProbabilityMaps {
    pub et: VoxelGrid,
    pub tc: VoxelGrid,
    pub wt: VoxelGrid,
    pub model_name: String,
}

impl RegionProbabilityMaps {
    pub fn channels(&self) -> [&VoxelGrid; 3] {
        [&self.et, &self.tc, &self.wt]
    }

    /// Applies [`activate`] to each channel independently.
    pub fn activated(&self) -> Result<RegionProbabilityMaps> {
        Ok(RegionProbabilityMaps {
            et: activate(&self.et)?,
            tc: activate(&self.tc)?,
            wt: activate(&self.wt)?,
            model_name: self.model_name.clone(),
        })
    }
}

/// Non-negative model weights, normalized to sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct EnsembleWeights(BTreeMap<String, f64>);

impl EnsembleWeights {
    pub fn new<S: Into<String>>(weights: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let raw: BTreeMap<String, f64> = weights.into_iter().map(|(k, v)| (k.into(), v)).collect();
        Self::try_from(raw)
    }

    pub fn get(&self, model: &str) -> Option<f64> {
        self.0.get(model).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for EnsembleWeights {
    fn default() -> Self {
        Self::new(DEFAULT_WEIGHTS).expect("default weights are valid")
    }
}

impl TryFrom<BTreeMap<String, f64>> for EnsembleWeights {
    type Error = Error;

    fn try_from(raw: BTreeMap<String, f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidArgument("no ensemble weights given".into()));
        }
        if let Some((k, v)) = raw.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weight for `{k}` must be finite and non-negative, got {v}"
            )));
        }
        let total: f64 = raw.values().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("ensemble weights sum to zero".into()));
        }
        Ok(Self(raw.into_iter().map(|(k, v)| (k, v / total)).collect()))
    }
}

impl From<EnsembleWeights> for BTreeMap<String, f64> {
    fn from(w: EnsembleWeights) -> Self {
        w.0
    }
}

/// On-disk ensemble settings: `{"models": {"name": weight, ...}, "threshold": 0.5}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    #[serde(default)]
    pub models: EnsembleWeights,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            models: EnsembleWeights::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Weights proportional to each model's mean cross-validation score.
pub fn weights_from_scores<S: AsRef<str>>(scores: &[(S, f64)]) -> Result<EnsembleWeights> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no model scores given".into()));
    }
    if let Some((name, s)) = scores.iter().find(|(_, s)| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "score for `{}` must be positive, got {s}",
            name.as_ref()
        )));
    }
    EnsembleWeights::new(scores.iter().map(|(n, s)| (n.as_ref().to_string(), *s)))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic sigmoid, unless every value already lies in `[0, 1]`.
pub fn activate(raw: &VoxelGrid) -> Result<VoxelGrid> {
    if raw.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NanInput);
    }
    if raw.data().iter().all(|v| (0.0..=1.0).contains(v)) {
        return Ok(raw.clone());
    }
    Ok(raw.map(sigmoid))
}

/// Voxelwise convex combination of the models' region maps.
///
/// Models are summed in name order, so the result does not depend on the
/// order of `maps`. Weights are renormalized over the models supplied.
pub fn ensemble(maps: &[RegionProbabilityMaps], weights: &EnsembleWeights) -> Result<RegionProbabilityMaps> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs at least one model".into()));
    }
    let mut ordered: Vec<&RegionProbabilityMaps> = maps.iter().collect();
    ordered.sort_by(|a, b| a.model_name.cmp(&b.model_name));
    if let Some(w) = ordered.windows(2).find(|w| w[0].model_name == w[1].model_name) {
        return Err(Error::InvalidArgument(format!(
            "model `{}` given twice",
            w[0].model_name
        )));
    }

    let reference = ordered[0].et.geometry();
    let mut w = Vec::with_capacity(ordered.len());
    for m in &ordered {
        for ch in m.channels() {
            check_same_geometry("ensemble", &m.model_name, reference, ch.geometry())?;
        }
        w.push(
            weights
                .get(&m.model_name)
                .ok_or_else(|| Error::MissingWeight(m.model_name.clone()))?,
        );
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("selected models have zero total weight".into()));
    }
    if (total - 1.0).abs() > 1e-12 {
        for wi in &mut w {
            *wi /= total;
        }
    }

    let combine = |pick: fn(&RegionProbabilityMaps) -> &VoxelGrid| -> Result<VoxelGrid> {
        let mut acc = vec![0.0f64; reference.len()];
        for (m, &wi) in ordered.iter().zip(&w) {
            for (a, &p) in acc.iter_mut().zip(pick(m).data()) {
                *a += wi * p;
            }
        }
        VoxelGrid::new(reference.clone(), acc)
    };

    Ok(RegionProbabilityMaps {
        et: combine(|m| &m.et)?,
        tc: combine(|m| &m.tc)?,
        wt: combine(|m| &m.wt)?,
        model_name: "ensemble".into(),
    })
}

/// Thresholds each region channel and decodes with inner-region priority.
pub fn decode(probs: &RegionProbabilityMaps, threshold: f64) -> Result<LabelVolume> {
    let mask = |g: &VoxelGrid| {
        BinaryMask::new(
            g.geometry().clone(),
            g.data().iter().map(|&p| p >= threshold).collect(),
        )
    };
    labels_from_regions(&RegionMasks {
        et: mask(&probs.et)?,
        tc: mask(&probs.tc)?,
        wt: mask(&probs.wt)?,
    })
}
