//! Radiomic feature extraction on a region of interest.
//!
//! A full case vector holds 386 values: 14 shape features computed once on the
//! mask, followed by 93 intensity features (18 first-order + 75 texture) for each
//! of the four sequences in the order t1, t1ce, t2, flair. Names are prefixed by
//! block, e.g. `shape.Sphericity` or `t1ce.glcm.Contrast`.

mod firstorder;
mod shape;
mod texture;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti::{CaseBundle, Sequence};
use crate::volume::{BinaryMask, VoxelGrid};

pub use firstorder::{first_order_features, FIRST_ORDER_NAMES};
pub(crate) use firstorder::percentile;
pub use shape::{mesh, shape_features, SurfaceMesh, SHAPE_NAMES};
pub use texture::{
    glcm_features, gldm_features, glrlm_features, glszm_features, ngtdm_features, texture_features,
    GLCM_DIRECTIONS, GLCM_NAMES, GLDM_NAMES, GLRLM_NAMES, GLSZM_NAMES, NGTDM_NAMES,
};

pub const SHAPE_COUNT: usize = 14;
pub const FIRST_ORDER_COUNT: usize = 18;
pub const TEXTURE_COUNT: usize = 75;
pub const INTENSITY_COUNT: usize = FIRST_ORDER_COUNT + TEXTURE_COUNT;
pub const CASE_FEATURE_COUNT: usize = SHAPE_COUNT + 4 * INTENSITY_COUNT;

pub const DEFAULT_BIN_WIDTH: f64 = 25.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiomicsConfig {
    pub bin_width: f64,
}

impl Default for RadiomicsConfig {
    fn default() -> Self {
        Self {
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

/// Named feature values for one case.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub case_id: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(case_id: impl Into<String>, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature names for {} values",
                names.len(),
                values.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate feature name `{dup}`")));
        }
        Ok(Self {
            case_id: case_id.into(),
            names,
            values,
        })
    }

    pub(crate) fn from_static(names: &[&str], values: Vec<f64>) -> Self {
        debug_assert_eq!(names.len(), values.len());
        Self {
            case_id: String::new(),
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn prefixed(mut self, prefix: &str) -> Self {
        for n in &mut self.names {
            *n = format!("{prefix}.{n}");
        }
        self
    }

    pub fn extend(&mut self, other: FeatureVector) {
        self.names.extend(other.names);
        self.values.extend(other.values);
    }
}

/// Gray-level bins over a mask; 0 marks voxels outside it.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedImage {
    pub dims: [usize; 3],
    pub bins: Vec<u32>,
    pub n_bins: u32,
    pub bin_width: f64,
}

/// Fixed-bin-width discretization anchored at the ROI minimum:
/// `bin = floor((x - min) / bin_width) + 1`.
pub fn discretize(image: &VoxelGrid, mask: &BinaryMask, bin_width: f64) -> Result<DiscretizedImage> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    image.geometry().ensure_same_dims(mask.geometry())?;
    let min = mask
        .indices()
        .map(|i| image.data()[i])
        .fold(f64::INFINITY, f64::min);
    if min == f64::INFINITY {
        return Err(Error::EmptyMask);
    }
    let mut n_bins = 0;
    let bins = image
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &inside)| {
            if inside {
                let b = ((x - min) / bin_width).floor() as u32 + 1;
                n_bins = n_bins.max(b);
                b
            } else {
                0
            }
        })
        .collect();
    Ok(DiscretizedImage {
        dims: image.dims(),
        bins,
        n_bins,
        bin_width,
    })
}

/// First-order and texture features of one sequence (93 values).
pub fn intensity_features(image: &VoxelGrid, mask: &BinaryMask, config: &RadiomicsConfig) -> Result<FeatureVector> {
    let mut fv = first_order_features(image, mask, config)?.prefixed("firstorder");
    fv.extend(texture_features(image, mask, config)?);
    Ok(fv)
}

pub fn case_features(case: &CaseBundle, mask: &BinaryMask) -> Result<FeatureVector> {
    case_features_with(case, mask, &RadiomicsConfig::default())
}

pub fn case_features_with(
    case: &CaseBundle,
    mask: &BinaryMask,
    config: &RadiomicsConfig,
) -> Result<FeatureVector> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut fv = shape_features(mask, case.geometry().spacing())?.prefixed("shape");
    let blocks: Vec<Result<FeatureVector>> = Sequence::ALL
        .par_iter()
        .map(|&seq| Ok(intensity_features(case.sequence(seq), mask, config)?.prefixed(seq.name())))
        .collect();
    for block in blocks {
        fv.extend(block?);
    }
    fv.case_id = case.case_id.clone();
    Ok(fv)
}

/// Names of a full case vector, in order.
pub fn case_feature_names() -> Vec<String> {
    let mut names: Vec<String> = SHAPE_NAMES.iter().map(|n| format!("shape.{n}")).collect();
    for seq in Sequence::ALL {
        let s = seq.name();
        names.extend(FIRST_ORDER_NAMES.iter().map(|n| format!("{s}.firstorder.{n}")));
        for (family, list) in [
            ("glcm", &GLCM_NAMES[..]),
            ("glrlm", &GLRLM_NAMES[..]),
            ("glszm", &GLSZM_NAMES[..]),
            ("gldm", &GLDM_NAMES[..]),
            ("ngtdm", &NGTDM_NAMES[..]),
        ] {
            names.extend(list.iter().map(|n| format!("{s}.{family}.{n}")));
        }
    }
    names
}

/// Rectangular table of feature vectors sharing one name list.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureTable {
    names: Vec<String>,
    rows: Vec<FeatureVector>,
}

impl FeatureTable {
    pub fn new(rows: Vec<FeatureVector>) -> Result<Self> {
        let names = rows.first().map(|r| r.names.clone()).unwrap_or_default();
        if let Some(bad) = rows.iter().find(|r| r.names != names) {
            return Err(Error::InvalidArgument(format!(
                "case {} has a different feature list",
                bad.case_id
            )));
        }
        Ok(Self { names, rows })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.case_id.clone()).collect()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    /// Replaces non-finite entries with their column median over finite entries
    /// (0 if a column has none).
    pub fn impute_column_medians(&mut self) -> usize {
        let mut replaced = 0;
        for c in 0..self.names.len() {
            if self.rows.iter().all(|r| r.values[c].is_finite()) {
                continue;
            }
            let mut finite: Vec<f64> = self
                .rows
                .iter()
                .map(|r| r.values[c])
                .filter(|v| v.is_finite())
                .collect();
            finite.sort_by(|a, b| a.total_cmp(b));
            let median = match finite.len() {
                0 => 0.0,
                n if n % 2 == 1 => finite[n / 2],
                n => 0.5 * (finite[n / 2 - 1] + finite[n / 2]),
            };
            for r in &mut self.rows {
                if !r.values[c].is_finite() {
                    r.values[c] = median;
                    replaced += 1;
                }
            }
        }
        replaced
    }

    /// CSV with a `case_id` column followed by one column per feature.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["case_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.case_id.clone()];
            rec.extend(row.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("case_id") {
            return Err(Error::InvalidArgument("first CSV column must be case_id".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let case_id = rec.get(0).unwrap_or_default().to_string();
            let values = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("case {case_id}: bad number `{s}`"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(FeatureVector::new(case_id, names.clone(), values)?);
        }
        if rows.is_empty() {
            return Ok(Self { names, rows });
        }
        Self::new(rows)
    }
}

/// Relative/absolute closeness used when comparing feature values.
pub fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    #[test]
    fn discretize_formula() {
        let g = Geometry::new([4, 1, 1], [1.0; 3]).unwrap();
        let img = VoxelGrid::new(g.clone(), vec![0.0, 24.0, 25.0, 49.0]).unwrap();
        let mask = BinaryMask::new(g.clone(), vec![true; 4]).unwrap();
        let d = discretize(&img, &mask, 25.0).unwrap();
        assert_eq!(d.bins, vec![1, 1, 2, 2]);
        assert_eq!(d.n_bins, 2);

        let flat = VoxelGrid::new(g.clone(), vec![7.0; 4]).unwrap();
        let d = discretize(&flat, &mask, 25.0).unwrap();
        assert_eq!((d.bins.clone(), d.n_bins), (vec![1; 4], 1));

        assert!(discretize(&img, &mask, 0.0).is_err());
        assert!(discretize(&img, &mask, -1.0).is_err());
        assert!(matches!(
            discretize(&img, &BinaryMask::empty(g), 25.0),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn name_list_arity() {
        let names = case_feature_names();
        assert_eq!(names.len(), CASE_FEATURE_COUNT);
        assert_eq!(CASE_FEATURE_COUNT, 386);
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(names[0], "shape.MeshVolume");
        assert_eq!(names[14], "t1.firstorder.Energy");
        assert!(names.contains(&"t1ce.glcm.Contrast".to_string()));
    }

    #[test]
    fn median_imputation() {
        let names = vec!["a".to_string(), "b".to_string()];
        let rows = vec![
            FeatureVector::new("x", names.clone(), vec![1.0, f64::NAN]).unwrap(),
            FeatureVector::new("y", names.clone(), vec![f64::NAN, 4.0]).unwrap(),
            FeatureVector::new("z", names.clone(), vec![3.0, 2.0]).unwrap(),
        ];
        let mut t = FeatureTable::new(rows).unwrap();
        assert_eq!(t.impute_column_medians(), 2);
        assert_eq!(t.rows()[1].values[0], 2.0);
        assert_eq!(t.rows()[0].values[1], 3.0);
    }

    #[test]
    fn csv_round_trip() {
        let names = vec!["shape.A".to_string(), "t1.glcm.B".to_string()];
        let rows = vec![
            FeatureVector::new("c1", names.clone(), vec![0.1 + 0.2, -3.5e-12]).unwrap(),
            FeatureVector::new("c2", names.clone(), vec![1e300, 7.0]).unwrap(),
        ];
        let t = FeatureTable::new(rows).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = FeatureTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert!(String::from_utf8(buf).unwrap().starts_with("case_id,shape.A,t1.glcm.B\n"));
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(FeatureVector::new("c", vec!["a".into(), "a".into()], vec![1.0, 2.0]).is_err());
    }
}
