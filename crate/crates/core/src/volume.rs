//! Dense 3D volumes, tumor label maps and the mask operations built on them.
//!
//! Every volume stores its voxels in one flat buffer using the NIfTI on-disk
//! order: the first axis varies fastest, so voxel `(i, j, k)` lives at
//! `i + dims[0] * (j + dims[1] * k)`. The same convention is used by the I/O
//! layer, which keeps reads and writes byte-exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti::DataType;

/// Background label.
pub const BG: u8 = 0;
/// Necrotic core.
pub const NCR: u8 = 1;
/// Peritumoral edema.
pub const ED: u8 = 2;
/// Enhancing tumor.
pub const ET: u8 = 3;

/// Shape, voxel size and voxel-to-world transform shared by all volumes of a case.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: [[f64; 4]; 4],
}

impl Geometry {
    /// Axis-aligned geometry with the origin at voxel (0, 0, 0).
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let mut affine = [[0.0; 4]; 4];
        for axis in 0..3 {
            affine[axis][axis] = spacing[axis];
        }
        affine[3][3] = 1.0;
        Self::with_affine(dims, spacing, affine)
    }

    pub fn with_affine(dims: [usize; 3], spacing: [f64; 3], affine: [[f64; 4]; 4]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Geometry(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        for axis in 0..3 {
            let norm = (0..3).map(|r| affine[r][axis].powi(2)).sum::<f64>().sqrt();
            if (norm - spacing[axis]).abs() > 1e-6 * spacing[axis] {
                return Err(Error::Geometry(format!(
                    "affine column {axis} has norm {norm}, spacing is {}",
                    spacing[axis]
                )));
            }
        }
        Ok(Self {
            dims,
            spacing,
            affine,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn ensure_same_dims(&self, other: &Geometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }
}

/// A scalar field over a geometry: MRI intensities or probabilities.
///
/// `dtype` records the on-disk storage type so that a volume read from a file
/// is written back with the same representation.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    geometry: Geometry,
    data: Vec<f64>,
    dtype: DataType,
}

impl VoxelGrid {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        Self::with_dtype(geometry, data, DataType::Float32)
    }

    pub fn with_dtype(geometry: Geometry, data: Vec<f64>, dtype: DataType) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims()
            )));
        }
        Ok(Self {
            geometry,
            data,
            dtype,
        })
    }

    pub fn filled(geometry: Geometry, value: f64) -> Self {
        let data = vec![value; geometry.len()];
        Self {
            geometry,
            data,
            dtype: DataType::Float32,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dtype(&self) -> DataType {
        self.dtype
    }

    pub fn set_dtype(&mut self, dtype: DataType) {
        self.dtype = dtype;
    }

    /// Same geometry and storage type, new values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> VoxelGrid {
        VoxelGrid {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            dtype: self.dtype,
        }
    }
}

/// Tumor label map over {0 background, 1 NCR, 2 ED, 3 ET}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    geometry: Geometry,
    data: Vec<u8>,
}

impl Eq for Geometry {}

impl LabelVolume {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims()
            )));
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > ET) {
            return Err(Error::InvalidLabel {
                index,
                value: value as i64,
            });
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let data = vec![BG; geometry.len()];
        Self { geometry, data }
    }

    /// Interprets a scalar grid as labels; every value must be an integer in 0..=3.
    pub fn from_grid(grid: &VoxelGrid) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.data.len());
        for (index, &v) in grid.data.iter().enumerate() {
            if v.fract() != 0.0 || !(0.0..=3.0).contains(&v) {
                return Err(Error::InvalidLabel {
                    index,
                    value: v as i64,
                });
            }
            data.push(v as u8);
        }
        Ok(Self {
            geometry: grid.geometry.clone(),
            data,
        })
    }

    pub fn to_grid(&self) -> VoxelGrid {
        VoxelGrid {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| v as f64).collect(),
            dtype: DataType::Uint8,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    pub fn mask_of(&self, label: u8) -> BinaryMask {
        BinaryMask {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| v == label).collect(),
        }
    }

    /// Applies `f` to every voxel; results above 3 are rejected.
    pub fn map(&self, f: impl Fn(usize, u8) -> u8) -> Result<LabelVolume> {
        let data = self.data.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        LabelVolume::new(self.geometry.clone(), data)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    geometry: Geometry,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<bool>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims()
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Self {
        let data = vec![false; geometry.len()];
        Self { geometry, data }
    }

    pub fn from_indices(geometry: Geometry, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::empty(geometry);
        for i in indices {
            mask.data[i] = true;
        }
        mask
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, index: usize) -> bool {
        self.data[index]
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.data[index] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.geometry.ensure_same_dims(&other.geometry)?;
        Ok(BinaryMask {
            geometry: self.geometry.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.geometry.ensure_same_dims(&other.geometry)?;
        Ok(BinaryMask {
            geometry: self.geometry.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        })
    }

    /// Inclusive voxel bounding box `(min, max)` of the foreground, if any.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for idx in self.indices() {
            let c = self.geometry.coords(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }
}

/// The three nested evaluation regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMasks {
    pub et: BinaryMask,
    pub tc: BinaryMask,
    pub wt: BinaryMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "ET")]
    Et,
    #[serde(rename = "TC")]
    Tc,
    #[serde(rename = "WT")]
    Wt,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Et, Region::Tc, Region::Wt];

    pub fn name(self) -> &'static str {
        match self {
            Region::Et => "ET",
            Region::Tc => "TC",
            Region::Wt => "WT",
        }
    }
}

impl RegionMasks {
    pub fn get(&self, region: Region) -> &BinaryMask {
        match region {
            Region::Et => &self.et,
            Region::Tc => &self.tc,
            Region::Wt => &self.wt,
        }
    }
}

pub fn regions_from_labels(labels: &LabelVolume) -> RegionMasks {
    let geometry = labels.geometry.clone();
    let build = |pred: fn(u8) -> bool| BinaryMask {
        geometry: geometry.clone(),
        data: labels.data.iter().map(|&v| pred(v)).collect(),
    };
    RegionMasks {
        et: build(|v| v == ET),
        tc: build(|v| v == NCR || v == ET),
        wt: build(|v| v != BG),
    }
}

/// Hierarchical decode with inner-region priority: ET, then TC, then WT.
pub fn labels_from_regions(regions: &RegionMasks) -> Result<LabelVolume> {
    regions.et.geometry.ensure_same_dims(&regions.tc.geometry)?;
    regions.et.geometry.ensure_same_dims(&regions.wt.geometry)?;
    let data = (0..regions.et.data.len())
        .map(|i| {
            if regions.et.data[i] {
                ET
            } else if regions.tc.data[i] {
                NCR
            } else if regions.wt.data[i] {
                ED
            } else {
                BG
            }
        })
        .collect();
    Ok(LabelVolume {
        geometry: regions.et.geometry.clone(),
        data,
    })
}

/// Voxel adjacency: faces (6), faces and edges (18), or faces, edges and corners (26).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Connectivity {
    Six,
    Eighteen,
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// Whether two distinct voxels at offset `d` are neighbors.
    pub fn is_neighbor_offset(self, d: [i64; 3]) -> bool {
        let nonzero = d.iter().filter(|&&x| x != 0).count();
        let within = d.iter().all(|&x| x.abs() <= 1);
        within
            && match self {
                Connectivity::Six => nonzero == 1,
                Connectivity::Eighteen => (1..=2).contains(&nonzero),
                Connectivity::TwentySix => nonzero >= 1,
            }
    }

    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::with_capacity(26);
        for dk in -1..=1 {
            for dj in -1..=1 {
                for di in -1..=1 {
                    let d = [di, dj, dk];
                    if self.is_neighbor_offset(d) {
                        out.push(d);
                    }
                }
            }
        }
        out
    }

    /// Offsets that precede the current voxel in scan order.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        self.offsets()
            .into_iter()
            .filter(|d| (d[2], d[1], d[0]) < (0, 0, 0))
            .collect()
    }
}

impl Serialize for Connectivity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u32(self.count())
    }
}

impl<'de> Deserialize<'de> for Connectivity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = u32::deserialize(d)?;
        Connectivity::from_count(n).map_err(serde::de::Error::custom)
    }
}

#[inline]
pub(crate) fn offset_index(dims: [usize; 3], c: [usize; 3], d: [i64; 3]) -> Option<usize> {
    let mut n = [0usize; 3];
    for a in 0..3 {
        let v = c[a] as i64 + d[a];
        if v < 0 || v >= dims[a] as i64 {
            return None;
        }
        n[a] = v as usize;
    }
    Some(n[0] + dims[0] * (n[1] + dims[1] * n[2]))
}

/// Result of connected-component analysis.
///
/// `labels[v]` is 0 for background, otherwise the component id in `1..=n`.
/// Ids are ordered by the smallest linear index of each component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
    pub connectivity: Connectivity,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Linear indices of each component, in scan order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the older root so provisional ids stay in scan order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabeling {
    let dims = mask.geometry.dims;
    let backward = connectivity.backward_offsets();
    let mut provisional = vec![u32::MAX; mask.data.len()];
    let mut sets = DisjointSet::new();

    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let idx = i + dims[0] * (j + dims[1] * k);
                if !mask.data[idx] {
                    continue;
                }
                let mut current = u32::MAX;
                for d in &backward {
                    if let Some(n) = offset_index(dims, [i, j, k], *d) {
                        let p = provisional[n];
                        if p == u32::MAX {
                            continue;
                        }
                        if current == u32::MAX {
                            current = p;
                        } else {
                            sets.union(current, p);
                        }
                    }
                }
                if current == u32::MAX {
                    current = sets.make();
                }
                provisional[idx] = current;
            }
        }
    }

    let mut final_id = vec![0u32; sets.parent.len()];
    let mut sizes = Vec::new();
    let mut labels = vec![0u32; mask.data.len()];
    for (idx, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let root = sets.find(p) as usize;
        if final_id[root] == 0 {
            sizes.push(0);
            final_id[root] = sizes.len() as u32;
        }
        let id = final_id[root];
        sizes[id as usize - 1] += 1;
        labels[idx] = id;
    }

    ComponentLabeling {
        labels,
        sizes,
        connectivity,
    }
}

/// Clears every component with fewer than `min_voxels` voxels.
pub fn remove_small_components(
    mask: &BinaryMask,
    min_voxels: usize,
    connectivity: Connectivity,
) -> BinaryMask {
    if min_voxels == 0 {
        return mask.clone();
    }
    let cc = connected_components(mask, connectivity);
    let data = cc
        .labels
        .iter()
        .map(|&l| l > 0 && cc.sizes[l as usize - 1] >= min_voxels)
        .collect();
    BinaryMask {
        geometry: mask.geometry.clone(),
        data,
    }
}

/// `radius_voxels` iterations of dilation with the structuring element of `connectivity`
/// (plus the center voxel).
pub fn dilate(mask: &BinaryMask, radius_voxels: usize, connectivity: Connectivity) -> BinaryMask {
    let dims = mask.geometry.dims;
    let offsets = connectivity.offsets();
    let mut current = mask.data.clone();
    for _ in 0..radius_voxels {
        let mut next = current.clone();
        for (idx, &set) in current.iter().enumerate() {
            if !set {
                continue;
            }
            let c = mask.geometry.coords(idx);
            for d in &offsets {
                if let Some(n) = offset_index(dims, c, *d) {
                    next[n] = true;
                }
            }
        }
        current = next;
    }
    BinaryMask {
        geometry: mask.geometry.clone(),
        data: current,
    }
}
