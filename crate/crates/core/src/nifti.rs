//! NIfTI-1 reading and writing (`.nii` and `.nii.gz`) and multi-sequence case loading.
//!
//! Reading accepts either byte order and ignores header extensions. Writing always
//! produces a little-endian single-file image with a 352-byte preamble (348-byte
//! header plus an empty extension flag), `sform_code = 1` and a matching qform.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::ensemble::RegionProbabilityMaps;
use crate::error::{Error, Result};
use crate::volume::{Geometry, LabelVolume, VoxelGrid};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

/// Supported on-disk voxel types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataType {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Int32 => 8,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => DataType::Uint8,
            4 => DataType::Int16,
            8 => DataType::Int32,
            16 => DataType::Float32,
            64 => DataType::Float64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::Uint8 => 1,
            DataType::Int16 => 2,
            DataType::Int32 | DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, DataType::Uint8 | DataType::Int16 | DataType::Int32)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl Cursor<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }
}

fn read_file_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads a NIfTI-1 image as a scalar grid.
///
/// Integer storage is preserved in [`VoxelGrid::dtype`]; a non-trivial
/// `scl_slope`/`scl_inter` is applied and the grid is then tagged `Float32`.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    let bytes = read_file_bytes(path)?;
    decode(&bytes, path)
}

/// Reads a NIfTI-1 image and views it as a label map.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    LabelVolume::from_grid(&read_nifti(path)?)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<VoxelGrid> {
    if bytes.len() < HEADER_SIZE {
        return Err(malformed(
            path,
            format!("file has {} bytes, header needs {HEADER_SIZE}", bytes.len()),
        ));
    }
    let big_endian = match (
        i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        i32::from_be_bytes(bytes[0..4].try_into().unwrap()),
    ) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(malformed(path, "sizeof_hdr is not 348")),
    };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(malformed(path, "bad magic"));
    }
    if magic == b"ni1\0" {
        return Err(malformed(path, "detached header/image pairs are not supported"));
    }
    let h = Cursor {
        buf: bytes,
        big_endian,
    };

    let ndim = h.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(malformed(path, format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for (a, d) in dims.iter_mut().enumerate().take((ndim as usize).min(3)) {
        let v = h.i16(42 + 2 * a);
        if v <= 0 {
            return Err(malformed(path, format!("dim[{}] = {v}", a + 1)));
        }
        *d = v as usize;
    }
    for a in 3..ndim as usize {
        if h.i16(42 + 2 * a) > 1 {
            return Err(malformed(path, "only 3D volumes are supported"));
        }
    }

    let dtype = DataType::from_code(h.i16(70))?;
    let mut spacing = [1.0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let v = h.f32(80 + 4 * a) as f64;
        if v.is_finite() && v != 0.0 {
            *s = v.abs();
        }
    }

    let vox_offset = h.f32(108);
    if vox_offset.is_nan() || vox_offset < HEADER_SIZE as f32 {
        return Err(malformed(path, format!("vox_offset = {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let n: usize = dims.iter().product();
    let need = vox_offset + n * dtype.bytes();
    if bytes.len() < need {
        return Err(malformed(
            path,
            format!("payload truncated: need {need} bytes, have {}", bytes.len()),
        ));
    }

    let payload = &bytes[vox_offset..need];
    let mut data = Vec::with_capacity(n);
    let sz = dtype.bytes();
    for chunk in payload.chunks_exact(sz) {
        let mut b = [0u8; 8];
        b[..sz].copy_from_slice(chunk);
        if big_endian {
            b[..sz].reverse();
        }
        let v = match dtype {
            DataType::Uint8 => b[0] as f64,
            DataType::Int16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            DataType::Int32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            DataType::Float32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            DataType::Float64 => f64::from_le_bytes(b),
        };
        data.push(v);
    }

    let mut out_dtype = dtype;
    let slope = h.f32(112) as f64;
    let inter = h.f32(116) as f64;
    if slope.is_finite() && slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
        out_dtype = DataType::Float32;
    }

    let affine = read_affine(&h, spacing);
    let geometry = match Geometry::with_affine(dims, spacing, affine) {
        Ok(g) => g,
        Err(_) => {
            // pixdim disagrees with the stored transform; trust the transform
            let mut s = [0.0; 3];
            for (a, sa) in s.iter_mut().enumerate() {
                *sa = (0..3).map(|r| affine[r][a].powi(2)).sum::<f64>().sqrt();
            }
            Geometry::with_affine(dims, s, affine)
                .or_else(|_| Geometry::new(dims, spacing))
                .map_err(|e| malformed(path, e.to_string()))?
        }
    };
    VoxelGrid::with_dtype(geometry, data, out_dtype)
}

fn read_affine(h: &Cursor<'_>, spacing: [f64; 3]) -> [[f64; 4]; 4] {
    let qform_code = h.i16(252);
    let sform_code = h.i16(254);
    let mut m = [[0.0; 4]; 4];
    m[3][3] = 1.0;
    if sform_code > 0 {
        for (r, row) in m.iter_mut().enumerate().take(3) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = h.f32(280 + 16 * r + 4 * c) as f64;
            }
        }
    } else if qform_code > 0 {
        let b = h.f32(256) as f64;
        let c = h.f32(260) as f64;
        let d = h.f32(264) as f64;
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let qfac = if h.f32(76) < 0.0 { -1.0 } else { 1.0 };
        let rot = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let scale = [spacing[0], spacing[1], spacing[2] * qfac];
        for r in 0..3 {
            for col in 0..3 {
                m[r][col] = rot[r][col] * scale[col];
            }
        }
        m[0][3] = h.f32(268) as f64;
        m[1][3] = h.f32(272) as f64;
        m[2][3] = h.f32(276) as f64;
    } else {
        for a in 0..3 {
            m[a][a] = spacing[a];
        }
    }
    m
}

/// Quaternion parameters `(b, c, d, qfac)` for the rotation part of `affine`.
fn quaternion_of(affine: &[[f64; 4]; 4], spacing: [f64; 3]) -> (f64, f64, f64, f64) {
    let mut r = [[0.0; 3]; 3];
    for row in 0..3 {
        for col in 0..3 {
            r[row][col] = affine[row][col] / spacing[col];
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    let qfac = if det < 0.0 {
        for row in &mut r {
            row[2] = -row[2];
        }
        -1.0
    } else {
        1.0
    };
    let trace = r[0][0] + r[1][1] + r[2][2] + 1.0;
    let (a, b, c, d);
    if trace > 0.5 {
        let a0 = 0.5 * trace.sqrt();
        a = a0;
        b = 0.25 * (r[2][1] - r[1][2]) / a0;
        c = 0.25 * (r[0][2] - r[2][0]) / a0;
        d = 0.25 * (r[1][0] - r[0][1]) / a0;
    } else {
        let xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
        let yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
        let zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
        if xd > 1.0 {
            let b0 = 0.5 * xd.sqrt();
            b = b0;
            c = 0.25 * (r[0][1] + r[1][0]) / b0;
            d = 0.25 * (r[0][2] + r[2][0]) / b0;
            a = 0.25 * (r[2][1] - r[1][2]) / b0;
        } else if yd > 1.0 {
            let c0 = 0.5 * yd.sqrt();
            c = c0;
            b = 0.25 * (r[0][1] + r[1][0]) / c0;
            d = 0.25 * (r[1][2] + r[2][1]) / c0;
            a = 0.25 * (r[0][2] - r[2][0]) / c0;
        } else {
            let d0 = 0.5 * zd.sqrt();
            d = d0;
            b = 0.25 * (r[0][2] + r[2][0]) / d0;
            c = 0.25 * (r[1][2] + r[2][1]) / d0;
            a = 0.25 * (r[1][0] - r[0][1]) / d0;
        }
    }
    if a < 0.0 {
        (-b, -c, -d, qfac)
    } else {
        (b, c, d, qfac)
    }
}

/// Serializes a grid to an uncompressed NIfTI-1 byte stream.
pub fn encode(grid: &VoxelGrid) -> Vec<u8> {
    let g = grid.geometry();
    let dims = g.dims();
    let spacing = g.spacing();
    let affine = g.affine();
    let dtype = grid.dtype();

    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_i32 = |h: &mut [u8], off: usize, v: i32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    put_i32(&mut h, 0, HEADER_SIZE as i32);
    h[38] = b'r';
    put_i16(&mut h, 40, 3);
    for (a, &d) in dims.iter().enumerate() {
        put_i16(&mut h, 42 + 2 * a, d as i16);
    }
    for a in 3..7 {
        put_i16(&mut h, 42 + 2 * a, 1);
    }
    put_i16(&mut h, 70, dtype.code());
    put_i16(&mut h, 72, (dtype.bytes() * 8) as i16);

    let (qb, qc, qd, qfac) = quaternion_of(affine, spacing);
    put_f32(&mut h, 76, qfac as f32);
    for (a, &s) in spacing.iter().enumerate() {
        put_f32(&mut h, 80 + 4 * a, s as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    // millimetres, seconds
    h[123] = 2 | 8;
    let descrip = b"tumorseg";
    h[148..148 + descrip.len()].copy_from_slice(descrip);

    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    put_f32(&mut h, 256, qb as f32);
    put_f32(&mut h, 260, qc as f32);
    put_f32(&mut h, 264, qd as f32);
    put_f32(&mut h, 268, affine[0][3] as f32);
    put_f32(&mut h, 272, affine[1][3] as f32);
    put_f32(&mut h, 276, affine[2][3] as f32);
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut h, 280 + 16 * r + 4 * c, affine[r][c] as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.reserve(grid.data().len() * dtype.bytes());
    for &v in grid.data() {
        match dtype {
            DataType::Uint8 => out.push(v.round() as u8),
            DataType::Int16 => out.extend_from_slice(&(v.round() as i16).to_le_bytes()),
            DataType::Int32 => out.extend_from_slice(&(v.round() as i32).to_le_bytes()),
            DataType::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DataType::Float64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Writes the file through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_nifti(grid: &VoxelGrid, path: impl AsRef<Path>, gzip: bool) -> Result<()> {
    let path = path.as_ref();
    let raw = encode(grid);
    let bytes = if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        raw
    };
    write_atomic(path, &bytes)
}

/// Labels are always stored as `uint8`.
pub fn write_labels(labels: &LabelVolume, path: impl AsRef<Path>, gzip: bool) -> Result<()> {
    write_nifti(&labels.to_grid(), path, gzip)
}

/// The four MRI sequences of a case, in feature order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sequence {
    T1,
    T1ce,
    T2,
    Flair,
}

impl Sequence {
    pub const ALL: [Sequence; 4] = [Sequence::T1, Sequence::T1ce, Sequence::T2, Sequence::Flair];

    pub fn name(self) -> &'static str {
        match self {
            Sequence::T1 => "t1",
            Sequence::T1ce => "t1ce",
            Sequence::T2 => "t2",
            Sequence::Flair => "flair",
        }
    }
}

/// File-name suffixes for the volumes of a case directory.
///
/// A case `<id>` lives in `<root>/<id>/` with files `<id><suffix><extension>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NamingScheme {
    pub t1: String,
    pub t1ce: String,
    pub t2: String,
    pub flair: String,
    pub seg: String,
    pub prob_et: String,
    pub prob_tc: String,
    pub prob_wt: String,
    pub extension: String,
}

impl Default for NamingScheme {
    fn default() -> Self {
        Self {
            t1: "-t1n".into(),
            t1ce: "-t1c".into(),
            t2: "-t2w".into(),
            flair: "-t2f".into(),
            seg: "-seg".into(),
            prob_et: "-prob_et".into(),
            prob_tc: "-prob_tc".into(),
            prob_wt: "-prob_wt".into(),
            extension: ".nii.gz".into(),
        }
    }
}

impl NamingScheme {
    pub fn sequence_suffix(&self, seq: Sequence) -> &str {
        match seq {
            Sequence::T1 => &self.t1,
            Sequence::T1ce => &self.t1ce,
            Sequence::T2 => &self.t2,
            Sequence::Flair => &self.flair,
        }
    }

    pub fn file(&self, dir: &Path, case_id: &str, suffix: &str) -> PathBuf {
        dir.join(format!("{case_id}{suffix}{}", self.extension))
    }

    pub fn is_gzip(&self) -> bool {
        self.extension.ends_with(".gz")
    }

    /// Locates a volume, falling back between `.nii` and `.nii.gz`.
    pub fn find(&self, dir: &Path, case_id: &str, suffix: &str) -> Option<PathBuf> {
        let primary = self.file(dir, case_id, suffix);
        if primary.is_file() {
            return Some(primary);
        }
        [".nii.gz", ".nii"]
            .iter()
            .map(|ext| dir.join(format!("{case_id}{suffix}{ext}")))
            .find(|p| p.is_file())
    }
}

/// All volumes belonging to one subject.
#[derive(Clone, Debug)]
pub struct CaseBundle {
    pub case_id: String,
    pub t1: VoxelGrid,
    pub t1ce: VoxelGrid,
    pub t2: VoxelGrid,
    pub flair: VoxelGrid,
    pub labels: Option<LabelVolume>,
    pub prob_maps: BTreeMap<String, RegionProbabilityMaps>,
}

impl CaseBundle {
    pub fn sequence(&self, seq: Sequence) -> &VoxelGrid {
        match seq {
            Sequence::T1 => &self.t1,
            Sequence::T1ce => &self.t1ce,
            Sequence::T2 => &self.t2,
            Sequence::Flair => &self.flair,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        self.t1.geometry()
    }

    /// Every present volume must match the T1 geometry.
    pub fn check_geometry(&self) -> Result<()> {
        let reference = self.t1.geometry();
        let mut others: Vec<(String, &Geometry)> = Sequence::ALL
            .iter()
            .map(|&s| (s.name().to_string(), self.sequence(s).geometry()))
            .collect();
        if let Some(l) = &self.labels {
            others.push(("seg".into(), l.geometry()));
        }
        for (model, maps) in &self.prob_maps {
            for (name, g) in [("et", &maps.et), ("tc", &maps.tc), ("wt", &maps.wt)] {
                others.push((format!("{model}.prob_{name}"), g.geometry()));
            }
        }
        for (name, g) in others {
            check_same_geometry(&self.case_id, &name, reference, g)?;
        }
        Ok(())
    }
}

pub(crate) fn check_same_geometry(
    case_id: &str,
    name: &str,
    reference: &Geometry,
    other: &Geometry,
) -> Result<()> {
    let mismatch = |detail: String| Error::GeometryMismatch {
        case_id: case_id.to_string(),
        detail,
    };
    if reference.dims() != other.dims() {
        return Err(mismatch(format!(
            "{name} has dims {:?}, expected {:?}",
            other.dims(),
            reference.dims()
        )));
    }
    let spacing_ok = reference
        .spacing()
        .iter()
        .zip(other.spacing())
        .all(|(a, b)| (a - b).abs() <= 1e-4);
    let affine_ok = reference
        .affine()
        .iter()
        .flatten()
        .zip(other.affine().iter().flatten())
        .all(|(a, b)| (a - b).abs() <= 1e-4);
    if !spacing_ok || !affine_ok {
        return Err(mismatch(format!("{name} has a different spacing or affine")));
    }
    Ok(())
}

fn case_id_of(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads the four sequences and, if present, the segmentation of one case directory.
pub fn load_case(dir: impl AsRef<Path>, naming: &NamingScheme) -> Result<CaseBundle> {
    let dir = dir.as_ref();
    let case_id = case_id_of(dir);
    let load_seq = |seq: Sequence| -> Result<VoxelGrid> {
        let suffix = naming.sequence_suffix(seq);
        let path = naming.find(dir, &case_id, suffix).ok_or_else(|| Error::MissingSequence {
            case_id: case_id.clone(),
            sequence: suffix.trim_start_matches('-').to_string(),
            path: naming.file(dir, &case_id, suffix),
        })?;
        read_nifti(path)
    };
    let t1 = load_seq(Sequence::T1)?;
    let t1ce = load_seq(Sequence::T1ce)?;
    let t2 = load_seq(Sequence::T2)?;
    let flair = load_seq(Sequence::Flair)?;
    let labels = match naming.find(dir, &case_id, &naming.seg) {
        Some(p) => Some(read_labels(p)?),
        None => None,
    };
    let bundle = CaseBundle {
        case_id,
        t1,
        t1ce,
        t2,
        flair,
        labels,
        prob_maps: BTreeMap::new(),
    };
    bundle.check_geometry()?;
    Ok(bundle)
}

/// Writes a case directory `<root>/<case_id>/` under the naming scheme.
pub fn write_case(bundle: &CaseBundle, root: impl AsRef<Path>, naming: &NamingScheme) -> Result<PathBuf> {
    let dir = root.as_ref().join(&bundle.case_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let gz = naming.is_gzip();
    for seq in Sequence::ALL {
        let path = naming.file(&dir, &bundle.case_id, naming.sequence_suffix(seq));
        write_nifti(bundle.sequence(seq), path, gz)?;
    }
    if let Some(labels) = &bundle.labels {
        write_labels(labels, naming.file(&dir, &bundle.case_id, &naming.seg), gz)?;
    }
    Ok(dir)
}

/// Reads `<dir>/<case_id>-prob_{et,tc,wt}` as one model's region maps.
pub fn load_prob_maps(
    dir: impl AsRef<Path>,
    case_id: &str,
    model_name: &str,
    naming: &NamingScheme,
) -> Result<RegionProbabilityMaps> {
    let dir = dir.as_ref();
    let load = |suffix: &str| -> Result<VoxelGrid> {
        let path = naming.find(dir, case_id, suffix).ok_or_else(|| Error::MissingSequence {
            case_id: case_id.to_string(),
            sequence: format!("{model_name}{suffix}"),
            path: naming.file(dir, case_id, suffix),
        })?;
        read_nifti(path)
    };
    let maps = RegionProbabilityMaps {
        et: load(&naming.prob_et)?,
        tc: load(&naming.prob_tc)?,
        wt: load(&naming.prob_wt)?,
        model_name: model_name.to_string(),
    };
    check_same_geometry(case_id, "prob_tc", maps.et.geometry(), maps.tc.geometry())?;
    check_same_geometry(case_id, "prob_wt", maps.et.geometry(), maps.wt.geometry())?;
    Ok(maps)
}

pub fn write_prob_maps(
    maps: &RegionProbabilityMaps,
    dir: impl AsRef<Path>,
    case_id: &str,
    naming: &NamingScheme,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let gz = naming.is_gzip();
    for (grid, suffix) in [
        (&maps.et, &naming.prob_et),
        (&maps.tc, &naming.prob_tc),
        (&maps.wt, &naming.prob_wt),
    ] {
        let mut g = grid.clone();
        g.set_dtype(DataType::Float32);
        write_nifti(&g, naming.file(dir, case_id, suffix), gz)?;
    }
    Ok(())
}

/// Case directories under `root`, sorted by name.
pub fn list_case_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}
