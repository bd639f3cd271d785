//! Seeded synthetic cases: ellipsoidal lesions with concentric label shells,
//! four noisy MRI-like sequences and optional corrupted probability maps.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::RegionProbabilityMaps;
use crate::error::{Error, Result};
use crate::nifti::{CaseBundle, Sequence};
use crate::volume::{Geometry, LabelVolume, VoxelGrid, BG, ED, ET, NCR};

const PLACEMENT_ATTEMPTS: usize = 1000;
const PLACEMENT_RESTARTS: usize = 50;

/// Mean intensity of background, NCR, ED and ET for one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityProfile {
    pub background: f64,
    pub ncr: f64,
    pub ed: f64,
    pub et: f64,
}

impl IntensityProfile {
    fn mean(&self, label: u8) -> f64 {
        match label {
            NCR => self.ncr,
            ED => self.ed,
            ET => self.et,
            _ => self.background,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbMapSpec {
    pub models: Vec<String>,
    /// Gaussian blur of the one-hot regions, in voxels.
    pub blur_sigma: f64,
    /// Spurious lesions shared by every model (all three regions).
    pub fp_blobs: usize,
    pub fp_radius: f64,
    pub fp_strength: f64,
    /// Amplitude of independent uniform noise per model and voxel.
    pub noise: f64,
}

impl Default for ProbMapSpec {
    fn default() -> Self {
        Self {
            models: vec!["mednext".into(), "nnunet".into()],
            blur_sigma: 0.8,
            fp_blobs: 2,
            fp_radius: 2.0,
            fp_strength: 0.95,
            noise: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub case_id: String,
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub n_lesions: usize,
    /// Range of the mean semi-axis, in mm.
    pub radius_range: [f64; 2],
    /// Semi-axes are the mean radius scaled by factors in `1 ± anisotropy`.
    pub anisotropy: f64,
    /// Normalized radius below which a lesion voxel is ET.
    pub et_fraction: f64,
    /// Normalized radius below which a non-ET lesion voxel is NCR; ED beyond.
    pub ncr_fraction: f64,
    pub t1: IntensityProfile,
    pub t1ce: IntensityProfile,
    pub t2: IntensityProfile,
    pub flair: IntensityProfile,
    /// Relative per-case jitter of the class means.
    pub contrast_jitter: f64,
    pub noise_sigma: f64,
    pub prob_maps: Option<ProbMapSpec>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let p = |background, ncr, ed, et| IntensityProfile {
            background,
            ncr,
            ed,
            et,
        };
        Self {
            case_id: "phantom-000".into(),
            seed: 0,
            dims: [48, 48, 48],
            spacing: [1.0; 3],
            n_lesions: 1,
            radius_range: [6.0, 12.0],
            anisotropy: 0.25,
            et_fraction: 0.35,
            ncr_fraction: 0.6,
            t1: p(400.0, 250.0, 350.0, 450.0),
            t1ce: p(420.0, 280.0, 380.0, 800.0),
            t2: p(500.0, 900.0, 850.0, 650.0),
            flair: p(450.0, 600.0, 900.0, 700.0),
            contrast_jitter: 0.15,
            noise_sigma: 15.0,
            prob_maps: Some(ProbMapSpec::default()),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dims.contains(&0) {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        if !(self.radius_range[0] > 0.0 && self.radius_range[0] <= self.radius_range[1]) {
            return bad(format!("invalid radius range {:?}", self.radius_range));
        }
        if !(0.0..1.0).contains(&self.anisotropy) {
            return bad(format!("anisotropy must be in [0, 1), got {}", self.anisotropy));
        }
        if !(0.0 <= self.et_fraction && self.et_fraction <= self.ncr_fraction && self.ncr_fraction <= 1.0) {
            return bad("shell fractions must satisfy 0 <= et <= ncr <= 1".into());
        }
        if self.noise_sigma < 0.0 || self.contrast_jitter < 0.0 {
            return bad("noise and jitter must be nonnegative".into());
        }
        if let Some(pm) = &self.prob_maps {
            if pm.models.is_empty() || pm.blur_sigma < 0.0 || pm.fp_radius <= 0.0 || pm.noise < 0.0 {
                return bad("invalid probability-map settings".into());
            }
            if !(0.0..=1.0).contains(&pm.fp_strength) {
                return bad("fp_strength must be in [0, 1]".into());
            }
        }
        Geometry::new(self.dims, self.spacing).map(|_| ())
    }

    /// Spec for case `index` of a corpus: distinct id and seed, 1 to 3 lesions.
    /// Radii shrink by `1/sqrt(n_lesions)` so multi-lesion cases still fit.
    pub fn corpus_member(&self, index: usize) -> PhantomSpec {
        let n_lesions = 1 + index % 3;
        let shrink = (n_lesions as f64).sqrt();
        PhantomSpec {
            case_id: format!("phantom-{index:03}"),
            seed: self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64),
            n_lesions,
            radius_range: self.radius_range.map(|r| r / shrink),
            ..self.clone()
        }
    }
}

/// Placement of one generated lesion, in mm relative to voxel (0,0,0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionInfo {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl LesionInfo {
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub bundle: CaseBundle,
    pub lesions: Vec<LesionInfo>,
}

/// Greedy placement, restarted from scratch when a lesion finds no free spot.
fn place_lesions(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Vec<LesionInfo>> {
    let mut last = None;
    for _ in 0..PLACEMENT_RESTARTS {
        match place_once(spec, rng) {
            Err(Error::LesionOutOfBounds(msg)) if msg.starts_with("no room") => last = Some(msg),
            other => return other,
        }
    }
    Err(Error::LesionOutOfBounds(last.unwrap_or_default()))
}

fn place_once(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Vec<LesionInfo>> {
    let extent: Vec<f64> = (0..3).map(|a| (spec.dims[a] - 1) as f64 * spec.spacing[a]).collect();
    let mut lesions: Vec<LesionInfo> = Vec::with_capacity(spec.n_lesions);
    for n in 0..spec.n_lesions {
        let r = rng.random_range(spec.radius_range[0]..=spec.radius_range[1]);
        let semi_axes = [0, 1, 2].map(|_| r * rng.random_range(1.0 - spec.anisotropy..=1.0 + spec.anisotropy));
        let margin: Vec<f64> = (0..3).map(|a| semi_axes[a] + spec.spacing[a]).collect();
        if (0..3).any(|a| 2.0 * margin[a] > extent[a]) {
            return Err(Error::LesionOutOfBounds(format!(
                "lesion {n} with semi-axes {semi_axes:?} mm does not fit in {:?} voxels",
                spec.dims
            )));
        }
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let center = [0, 1, 2].map(|a| rng.random_range(margin[a]..=extent[a] - margin[a]));
            let clear = lesions.iter().all(|o| {
                let d2: f64 = (0..3).map(|a| (center[a] - o.center[a]).powi(2)).sum();
                let reach = semi_axes.iter().cloned().fold(0.0, f64::max)
                    + o.semi_axes.iter().cloned().fold(0.0, f64::max)
                    + 2.0 * spec.spacing.iter().cloned().fold(0.0, f64::max);
                d2.sqrt() > reach
            });
            if clear {
                placed = Some(center);
                break;
            }
        }
        let center = placed.ok_or_else(|| {
            Error::LesionOutOfBounds(format!("no room for {} separated lesions in {:?} voxels", spec.n_lesions, spec.dims))
        })?;
        lesions.push(LesionInfo { center, semi_axes });
    }
    Ok(lesions)
}

fn paint_labels(spec: &PhantomSpec, geometry: &Geometry, lesions: &[LesionInfo]) -> LabelVolume {
    let mut data = vec![BG; geometry.len()];
    for (idx, v) in data.iter_mut().enumerate() {
        let c = geometry.coords(idx);
        let p = [0, 1, 2].map(|a| c[a] as f64 * spec.spacing[a]);
        let rho = lesions
            .iter()
            .map(|l| {
                (0..3)
                    .map(|a| ((p[a] - l.center[a]) / l.semi_axes[a]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        *v = if rho <= spec.et_fraction {
            ET
        } else if rho <= spec.ncr_fraction {
            NCR
        } else if rho <= 1.0 {
            ED
        } else {
            BG
        };
    }
    LabelVolume::new(geometry.clone(), data).expect("labels in range")
}

fn sequence_volume(
    profile: &IntensityProfile,
    labels: &LabelVolume,
    jitter: f64,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> VoxelGrid {
    let scale: [f64; 4] = [0, 1, 2, 3].map(|_| 1.0 + rng.random_range(-jitter..=jitter));
    let noise = Normal::new(0.0, noise_sigma).expect("finite sigma");
    let data = labels
        .data()
        .iter()
        .map(|&l| {
            let v = profile.mean(l) * scale[l as usize] + noise.sample(rng);
            (v as f32) as f64
        })
        .collect();
    VoxelGrid::new(labels.geometry().clone(), data).expect("sizes match")
}

fn gaussian_blur(data: &[f64], dims: [usize; 3], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = {
        let k: Vec<f64> = (-radius..=radius)
            .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    };
    let mut cur = data.to_vec();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis] as i64;
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = ((idx / strides[axis]) % dims[axis]) as i64;
            let base = idx - pos as usize * strides[axis];
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let q = (pos + t as i64 - radius).clamp(0, n - 1) as usize;
                acc += w * cur[base + q * strides[axis]];
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

fn probability_maps(
    pm: &ProbMapSpec,
    labels: &LabelVolume,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, RegionProbabilityMaps> {
    let g = labels.geometry();
    let dims = g.dims();
    let mut blobs: Vec<[f64; 3]> = Vec::new();
    for _ in 0..pm.fp_blobs {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c = [0, 1, 2].map(|a| rng.random_range(0.0..dims[a] as f64));
            let idx = g.index(
                (c[0] as usize).min(dims[0] - 1),
                (c[1] as usize).min(dims[1] - 1),
                (c[2] as usize).min(dims[2] - 1),
            );
            let far_from_tumor = {
                let r = pm.fp_radius.ceil() as i64 + 3;
                let ci = [c[0] as i64, c[1] as i64, c[2] as i64];
                let mut clear = labels.data()[idx] == BG;
                'scan: for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let q = [ci[0] + dx, ci[1] + dy, ci[2] + dz];
                            if (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64)
                                && labels.data()[g.index(q[0] as usize, q[1] as usize, q[2] as usize)] != BG
                            {
                                clear = false;
                                break 'scan;
                            }
                        }
                    }
                }
                clear
            };
            if far_from_tumor {
                blobs.push(c);
                break;
            }
        }
    }

    let in_blob = |c: [usize; 3]| {
        blobs.iter().any(|b| {
            (0..3)
                .map(|a| (c[a] as f64 + 0.5 - b[a]).powi(2))
                .sum::<f64>()
                <= pm.fp_radius * pm.fp_radius
        })
    };
    let regions = crate::volume::regions_from_labels(labels);
    let blurred: Vec<Vec<f64>> = [&regions.et, &regions.tc, &regions.wt]
        .iter()
        .map(|m| {
            let one_hot: Vec<f64> = m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            gaussian_blur(&one_hot, dims, pm.blur_sigma)
        })
        .collect();

    let mut out = BTreeMap::new();
    for model in &pm.models {
        let channels: Vec<VoxelGrid> = blurred
            .iter()
            .map(|b| {
                let data = b
                    .iter()
                    .enumerate()
                    .map(|(idx, &v)| {
                        let base = if in_blob(g.coords(idx)) { v.max(pm.fp_strength) } else { v };
                        let jitter = if pm.noise > 0.0 { rng.random_range(-pm.noise..=pm.noise) } else { 0.0 };
                        ((base + jitter).clamp(0.0, 1.0) as f32) as f64
                    })
                    .collect();
                VoxelGrid::new(g.clone(), data).expect("sizes match")
            })
            .collect();
        let [et, tc, wt]: [VoxelGrid; 3] = channels.try_into().expect("three channels");
        out.insert(
            model.clone(),
            RegionProbabilityMaps {
                et,
                tc,
                wt,
                model_name: model.clone(),
            },
        );
    }
    out
}

/// Builds one synthetic case; identical specs give bit-identical output.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let geometry = Geometry::new(spec.dims, spec.spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lesions = place_lesions(spec, &mut rng)?;
    let labels = paint_labels(spec, &geometry, &lesions);
    let mut volume = |seq: Sequence| {
        let profile = match seq {
            Sequence::T1 => &spec.t1,
            Sequence::T1ce => &spec.t1ce,
            Sequence::T2 => &spec.t2,
            Sequence::Flair => &spec.flair,
        };
        sequence_volume(profile, &labels, spec.contrast_jitter, spec.noise_sigma, &mut rng)
    };
    let t1 = volume(Sequence::T1);
    let t1ce = volume(Sequence::T1ce);
    let t2 = volume(Sequence::T2);
    let flair = volume(Sequence::Flair);
    let prob_maps = match &spec.prob_maps {
        Some(pm) => probability_maps(pm, &labels, &mut rng),
        None => BTreeMap::new(),
    };
    Ok(Phantom {
        bundle: CaseBundle {
            case_id: spec.case_id.clone(),
            t1,
            t1ce,
            t2,
            flair,
            labels: Some(labels),
            prob_maps,
        },
        lesions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::regions_from_labels;

    fn small() -> PhantomSpec {
        PhantomSpec {
            dims: [32, 32, 32],
            radius_range: [5.0, 7.0],
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.bundle.t1, b.bundle.t1);
        assert_eq!(a.bundle.labels, b.bundle.labels);
        assert_eq!(a.bundle.prob_maps, b.bundle.prob_maps);
        let c = generate(&PhantomSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.bundle.t1, c.bundle.t1);
    }

    #[test]
    fn no_lesions() {
        let p = generate(&PhantomSpec {
            n_lesions: 0,
            ..small()
        })
        .unwrap();
        assert!(p.bundle.labels.unwrap().data().iter().all(|&v| v == BG));
    }

    #[test]
    fn ellipsoid_volume() {
        for seed in 0..5 {
            let p = generate(&PhantomSpec {
                seed,
                radius_range: [10.0, 10.0],
                ..PhantomSpec::default()
            })
            .unwrap();
            let wt = regions_from_labels(p.bundle.labels.as_ref().unwrap()).wt.count() as f64;
            let analytic = p.lesions[0].volume();
            assert!((wt - analytic).abs() <= 0.1 * analytic, "{wt} vs {analytic}");
        }
    }

    #[test]
    fn default_corpus_places_every_case() {
        let base = PhantomSpec {
            prob_maps: None,
            ..PhantomSpec::default()
        };
        for i in 0..30 {
            let spec = base.corpus_member(i);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let lesions = place_lesions(&spec, &mut rng).unwrap();
            assert_eq!(lesions.len(), 1 + i % 3);
        }
    }

    #[test]
    fn too_large_lesion() {
        let spec = PhantomSpec {
            dims: [16, 16, 16],
            radius_range: [10.0, 10.0],
            ..PhantomSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::LesionOutOfBounds(_))));
    }

    #[test]
    fn maps_in_unit_range() {
        let p = generate(&small()).unwrap();
        assert_eq!(p.bundle.prob_maps.len(), 2);
        for maps in p.bundle.prob_maps.values() {
            for c in maps.channels() {
                assert!(c.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        let labels = p.bundle.labels.unwrap();
        let r = regions_from_labels(&labels);
        assert!(r.et.is_subset_of(&r.tc) && r.tc.is_subset_of(&r.wt));
        assert!(labels.count(ET) > 0 && labels.count(NCR) > 0 && labels.count(ED) > 0);
    }
}
