//! Slow, loop-based reference implementations used to cross-check the library.
//! Everything here works on plain coordinates and avoids the library's
//! internal helpers.
#![allow(dead_code)]

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tumorseg::volume::{BinaryMask, Geometry, LabelVolume};

pub type Coord = [i64; 3];

pub fn coord(dims: [usize; 3], idx: usize) -> Coord {
    [
        (idx % dims[0]) as i64,
        ((idx / dims[0]) % dims[1]) as i64,
        (idx / (dims[0] * dims[1])) as i64,
    ]
}

pub fn index(dims: [usize; 3], c: Coord) -> Option<usize> {
    if (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < dims[a]) {
        Some(c[0] as usize + dims[0] * (c[1] as usize + dims[1] * c[2] as usize))
    } else {
        None
    }
}

/// Neighbor offsets by counting nonzero components: 6 → faces, 18 → +edges, 26 → +corners.
pub fn neighbors(connectivity: u32) -> Vec<Coord> {
    let max_nonzero = match connectivity {
        6 => 1,
        18 => 2,
        _ => 3,
    };
    let mut out = Vec::new();
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let nz = [dx, dy, dz].iter().filter(|&&v| v != 0).count();
                if nz > 0 && nz <= max_nonzero {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- components

/// Naive quick-union over every neighboring pair; ids renumbered by first
/// appearance in index order. Returns (labels, sizes).
pub fn components(mask: &[bool], dims: [usize; 3], connectivity: u32) -> (Vec<u32>, Vec<usize>) {
    let n = mask.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &[usize], mut x: usize) -> usize {
        while parent[x] != x {
            x = parent[x];
        }
        x
    }
    let offs = neighbors(connectivity);
    for a in 0..n {
        if !mask[a] {
            continue;
        }
        let c = coord(dims, a);
        for d in &offs {
            if let Some(b) = index(dims, [c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                if mask[b] {
                    let (ra, rb) = (root(&parent, a), root(&parent, b));
                    if ra != rb {
                        parent[rb] = ra;
                    }
                }
            }
        }
    }
    let mut id_of_root = std::collections::HashMap::new();
    let mut labels = vec![0u32; n];
    let mut sizes = Vec::new();
    for a in 0..n {
        if !mask[a] {
            continue;
        }
        let r = root(&parent, a);
        let next = id_of_root.len() as u32 + 1;
        let id = *id_of_root.entry(r).or_insert(next);
        if id as usize > sizes.len() {
            sizes.push(0);
        }
        sizes[id as usize - 1] += 1;
        labels[a] = id;
    }
    (labels, sizes)
}

// ---------------------------------------------------------------- metrics

pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let na = a.iter().filter(|&&x| x).count();
    let nb = b.iter().filter(|&&x| x).count();
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

pub fn surface(mask: &[bool], dims: [usize; 3]) -> Vec<Coord> {
    let mut out = Vec::new();
    for idx in 0..mask.len() {
        if !mask[idx] {
            continue;
        }
        let c = coord(dims, idx);
        let mut exposed = false;
        for d in [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
            match index(dims, [c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                None => exposed = true,
                Some(n) if !mask[n] => exposed = true,
                _ => {}
            }
        }
        if exposed {
            out.push(c);
        }
    }
    out
}

fn dist(a: Coord, b: Coord, s: [f64; 3]) -> f64 {
    let dx = (a[0] - b[0]) as f64 * s[0];
    let dy = (a[1] - b[1]) as f64 * s[1];
    let dz = (a[2] - b[2]) as f64 * s[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (values.len() - 1) as f64;
    let below = pos.floor() as usize;
    let frac = pos - below as f64;
    if below + 1 < values.len() {
        values[below] * (1.0 - frac) + values[below + 1] * frac
    } else {
        values[below]
    }
}

pub fn hd95(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3], penalty: f64) -> f64 {
    let (sa, sb) = (surface(a, dims), surface(b, dims));
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    if sa.is_empty() || sb.is_empty() {
        return penalty;
    }
    let mut all = Vec::new();
    for &p in &sa {
        all.push(sb.iter().map(|&q| dist(p, q, spacing)).fold(f64::INFINITY, f64::min));
    }
    for &p in &sb {
        all.push(sa.iter().map(|&q| dist(p, q, spacing)).fold(f64::INFINITY, f64::min));
    }
    quantile(&mut all, 0.95)
}

/// Lesion-wise Dice and HD95 with 26-connected lesions, one iteration of
/// 26-neighborhood dilation for matching, and min FP size 0.
pub fn lesion_wise(gt: &[bool], pred: &[bool], dims: [usize; 3], spacing: [f64; 3], penalty: f64) -> (f64, f64) {
    let (gl, gs) = components(gt, dims, 26);
    let (pl, ps) = components(pred, dims, 26);
    let mut used = vec![false; ps.len()];
    let mut dice_sum = 0.0;
    let mut hd_sum = 0.0;
    let mut entries = 0usize;
    for g in 1..=gs.len() as u32 {
        let lesion: Vec<bool> = gl.iter().map(|&l| l == g).collect();
        let mut grown = lesion.clone();
        for idx in 0..lesion.len() {
            if !lesion[idx] {
                continue;
            }
            let c = coord(dims, idx);
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if let Some(n) = index(dims, [c[0] + dx, c[1] + dy, c[2] + dz]) {
                            grown[n] = true;
                        }
                    }
                }
            }
        }
        let mut hit = vec![false; ps.len()];
        for idx in 0..grown.len() {
            if grown[idx] && pl[idx] > 0 {
                hit[pl[idx] as usize - 1] = true;
            }
        }
        entries += 1;
        if !hit.iter().any(|&h| h) {
            hd_sum += penalty;
            continue;
        }
        let matched: Vec<bool> = pl.iter().map(|&l| l > 0 && hit[l as usize - 1]).collect();
        for (u, h) in used.iter_mut().zip(&hit) {
            *u |= *h;
        }
        dice_sum += dice(&lesion, &matched);
        hd_sum += hd95(&lesion, &matched, dims, spacing, penalty);
    }
    let fp = used.iter().filter(|&&u| !u).count();
    entries += fp;
    hd_sum += penalty * fp as f64;
    if entries == 0 {
        (1.0, 0.0)
    } else {
        (dice_sum / entries as f64, hd_sum / entries as f64)
    }
}

// ---------------------------------------------------------------- fixtures

/// Random mask made of a few axis-aligned blobs plus scattered voxels.
pub fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], max_blobs: usize, scatter: f64) -> Vec<bool> {
    let mut m = vec![false; dims.iter().product()];
    for _ in 0..rng.random_range(0..=max_blobs) {
        let lo: [usize; 3] = [0, 1, 2].map(|a| rng.random_range(0..dims[a]));
        let hi: [usize; 3] = [0, 1, 2].map(|a| (lo[a] + rng.random_range(1..=4)).min(dims[a]));
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    m[i + dims[0] * (j + dims[1] * k)] = true;
                }
            }
        }
    }
    for v in m.iter_mut() {
        if rng.random::<f64>() < scatter {
            *v = !*v;
        }
    }
    m
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> [usize; 3] {
    [0, 1, 2].map(|_| rng.random_range(1..=max))
}

pub fn to_mask(dims: [usize; 3], spacing: [f64; 3], data: &[bool]) -> BinaryMask {
    BinaryMask::new(Geometry::new(dims, spacing).unwrap(), data.to_vec()).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> LabelVolume {
    let mut data = vec![0u8; dims.iter().product()];
    for label in 1..=3u8 {
        let m = random_mask(rng, dims, 3, 0.01);
        for (d, &on) in data.iter_mut().zip(&m) {
            if on {
                *d = label;
            }
        }
    }
    LabelVolume::new(Geometry::new(dims, [1.0; 3]).unwrap(), data).unwrap()
}

// ---------------------------------------------------------------- texture

/// The 13 direction representatives: offsets whose first nonzero component
/// (in x, y, z order) is positive.
pub fn directions() -> Vec<Coord> {
    neighbors(26)
        .into_iter()
        .filter(|d| d.iter().find(|&&v| v != 0).copied().unwrap() > 0)
        .collect()
}

fn gray_at(bins: &[u32], dims: [usize; 3], c: Coord) -> u32 {
    index(dims, c).map(|i| bins[i]).unwrap_or(0)
}

fn log2(x: f64) -> f64 {
    x.log2()
}

pub fn glcm(bins: &[u32], dims: [usize; 3], ng: usize, d: Coord) -> Vec<Vec<f64>> {
    let mut p = vec![vec![0.0; ng]; ng];
    for a in 0..bins.len() {
        let ga = bins[a];
        if ga == 0 {
            continue;
        }
        let c = coord(dims, a);
        let gb = gray_at(bins, dims, [c[0] + d[0], c[1] + d[1], c[2] + d[2]]);
        if gb == 0 {
            continue;
        }
        p[ga as usize - 1][gb as usize - 1] += 1.0;
        p[gb as usize - 1][ga as usize - 1] += 1.0;
    }
    p
}

fn mcc(p: &[Vec<f64>], px: &[f64], py: &[f64]) -> f64 {
    let rows: Vec<usize> = (0..px.len()).filter(|&i| px[i] > 0.0).collect();
    if rows.len() < 2 {
        return 1.0;
    }
    let m = rows.len();
    let q = DMatrix::from_fn(m, m, |a, b| {
        let (i, j) = (rows[a], rows[b]);
        let mut s = 0.0;
        for k in 0..py.len() {
            if py[k] > 0.0 {
                s += p[i][k] * p[j][k] / (px[i] * py[k]);
            }
        }
        s
    });
    let mut ev: Vec<f64> = q.complex_eigenvalues().iter().map(|z| z.re).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if ev[1] < 1e-14 {
        0.0
    } else {
        ev[1].sqrt().min(1.0)
    }
}

/// GLCM features of one normalized matrix, in the library's name order.
pub fn glcm_features_of(p: &[Vec<f64>]) -> Vec<f64> {
    let ng = p.len();
    let g = |i: usize| (i + 1) as f64;
    let px: Vec<f64> = (0..ng).map(|i| (0..ng).map(|j| p[i][j]).sum()).collect();
    let py: Vec<f64> = (0..ng).map(|j| (0..ng).map(|i| p[i][j]).sum()).collect();
    let ux: f64 = (0..ng).map(|i| g(i) * px[i]).sum();
    let uy: f64 = (0..ng).map(|j| g(j) * py[j]).sum();
    let sx = (0..ng).map(|i| (g(i) - ux).powi(2) * px[i]).sum::<f64>().sqrt();
    let sy = (0..ng).map(|j| (g(j) - uy).powi(2) * py[j]).sum::<f64>().sqrt();
    let mut pxpy = vec![0.0; 2 * ng + 1];
    let mut pxmy = vec![0.0; ng];
    for i in 0..ng {
        for j in 0..ng {
            pxpy[i + j + 2] += p[i][j];
            pxmy[(i as i64 - j as i64).unsigned_abs() as usize] += p[i][j];
        }
    }
    let sum_ij = |f: &dyn Fn(usize, usize, f64) -> f64| -> f64 {
        let mut s = 0.0;
        for i in 0..ng {
            for j in 0..ng {
                if p[i][j] > 0.0 {
                    s += f(i, j, p[i][j]);
                }
            }
        }
        s
    };
    let autocorr = sum_ij(&|i, j, v| g(i) * g(j) * v);
    let joint_avg = ux;
    let prominence = sum_ij(&|i, j, v| (g(i) + g(j) - ux - uy).powi(4) * v);
    let shade = sum_ij(&|i, j, v| (g(i) + g(j) - ux - uy).powi(3) * v);
    let tendency = sum_ij(&|i, j, v| (g(i) + g(j) - ux - uy).powi(2) * v);
    let contrast = sum_ij(&|i, j, v| (g(i) - g(j)).powi(2) * v);
    let correlation = if sx * sy == 0.0 {
        1.0
    } else {
        (autocorr - ux * uy) / (sx * sy)
    };
    let diff_avg: f64 = (0..ng).map(|k| k as f64 * pxmy[k]).sum();
    let diff_ent: f64 = -(0..ng).filter(|&k| pxmy[k] > 0.0).map(|k| pxmy[k] * log2(pxmy[k])).sum::<f64>();
    let diff_var: f64 = (0..ng).map(|k| (k as f64 - diff_avg).powi(2) * pxmy[k]).sum();
    let energy = sum_ij(&|_, _, v| v * v);
    let hxy = -sum_ij(&|_, _, v| v * log2(v));
    let hx: f64 = -px.iter().filter(|&&v| v > 0.0).map(|&v| v * log2(v)).sum::<f64>();
    let hy: f64 = -py.iter().filter(|&&v| v > 0.0).map(|&v| v * log2(v)).sum::<f64>();
    let hxy1 = -sum_ij(&|i, j, v| v * log2(px[i] * py[j]));
    let mut hxy2 = 0.0;
    for i in 0..ng {
        for j in 0..ng {
            let w = px[i] * py[j];
            if w > 0.0 {
                hxy2 -= w * log2(w);
            }
        }
    }
    let imc1 = if hx.max(hy) == 0.0 { 0.0 } else { (hxy - hxy1) / hx.max(hy) };
    let imc2 = if hxy2 <= hxy {
        0.0
    } else {
        (1.0 - (-2.0 * (hxy2 - hxy)).exp()).sqrt()
    };
    let n = ng as f64;
    let idm = sum_ij(&|i, j, v| v / (1.0 + (g(i) - g(j)).powi(2)));
    let idmn = sum_ij(&|i, j, v| v / (1.0 + (g(i) - g(j)).powi(2) / (n * n)));
    let id = sum_ij(&|i, j, v| v / (1.0 + (g(i) - g(j)).abs()));
    let idn = sum_ij(&|i, j, v| v / (1.0 + (g(i) - g(j)).abs() / n));
    let inv_var: f64 = (1..ng).map(|k| pxmy[k] / (k * k) as f64).sum();
    let max_p = p.iter().flatten().cloned().fold(0.0, f64::max);
    let sum_avg: f64 = (2..=2 * ng).map(|k| k as f64 * pxpy[k]).sum();
    let sum_ent: f64 = -pxpy.iter().filter(|&&v| v > 0.0).map(|&v| v * log2(v)).sum::<f64>();
    let sum_sq = sum_ij(&|i, _, v| (g(i) - ux).powi(2) * v);
    vec![
        autocorr,
        joint_avg,
        prominence,
        shade,
        tendency,
        contrast,
        correlation,
        diff_avg,
        diff_ent,
        diff_var,
        energy,
        hxy,
        imc1,
        imc2,
        idm,
        idmn,
        id,
        idn,
        inv_var,
        max_p,
        sum_avg,
        sum_ent,
        sum_sq,
        mcc(p, &px, &py),
    ]
}

pub fn glcm_features(bins: &[u32], dims: [usize; 3], ng: usize) -> Vec<f64> {
    let mut acc = vec![0.0; 24];
    let mut count = 0;
    for d in directions() {
        let m = glcm(bins, dims, ng, d);
        let total: f64 = m.iter().flatten().sum();
        if total == 0.0 {
            continue;
        }
        let p: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|v| v / total).collect()).collect();
        for (a, f) in acc.iter_mut().zip(glcm_features_of(&p)) {
            *a += f;
        }
        count += 1;
    }
    if count > 0 {
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    acc
}

/// Run-length matrix `(gray, length) -> count` for one direction: each maximal
/// run is found by scanning forward from a voxel and backward to check it is
/// the first of its run.
pub fn glrlm(bins: &[u32], dims: [usize; 3], d: Coord) -> Vec<(u32, usize)> {
    let mut visited = vec![false; bins.len()];
    let mut runs = Vec::new();
    for a in 0..bins.len() {
        let g = bins[a];
        if g == 0 || visited[a] {
            continue;
        }
        let c = coord(dims, a);
        let mut start = c;
        loop {
            let prev = [start[0] - d[0], start[1] - d[1], start[2] - d[2]];
            if gray_at(bins, dims, prev) == g {
                start = prev;
            } else {
                break;
            }
        }
        let mut len = 0;
        let mut cur = start;
        while gray_at(bins, dims, cur) == g {
            visited[index(dims, cur).unwrap()] = true;
            len += 1;
            cur = [cur[0] + d[0], cur[1] + d[1], cur[2] + d[2]];
        }
        runs.push((g, len));
    }
    runs
}

pub fn glszm(bins: &[u32], dims: [usize; 3]) -> Vec<(u32, usize)> {
    let mut seen = vec![false; bins.len()];
    let mut zones = Vec::new();
    let offs = neighbors(26);
    for a in 0..bins.len() {
        if bins[a] == 0 || seen[a] {
            continue;
        }
        let g = bins[a];
        let mut queue = VecDeque::from([a]);
        seen[a] = true;
        let mut size = 0;
        while let Some(x) = queue.pop_front() {
            size += 1;
            let c = coord(dims, x);
            for d in &offs {
                if let Some(y) = index(dims, [c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                    if !seen[y] && bins[y] == g {
                        seen[y] = true;
                        queue.push_back(y);
                    }
                }
            }
        }
        zones.push((g, size));
    }
    zones
}

pub fn gldm(bins: &[u32], dims: [usize; 3]) -> Vec<(u32, usize)> {
    let offs = neighbors(26);
    (0..bins.len())
        .filter(|&a| bins[a] > 0)
        .map(|a| {
            let c = coord(dims, a);
            let dep = offs
                .iter()
                .filter(|d| gray_at(bins, dims, [c[0] + d[0], c[1] + d[1], c[2] + d[2]]) == bins[a])
                .count();
            (bins[a], dep + 1)
        })
        .collect()
}

/// The 16 run-length / size-zone features (or, with `gldm`, the 14 dependence
/// features) of a list of `(gray, size)` entries.
pub fn size_features(entries: &[(u32, usize)], ng: usize, np: usize, gldm_layout: bool) -> Vec<f64> {
    let n = entries.len() as f64;
    let max_s = entries.iter().map(|e| e.1).max().unwrap_or(0);
    let mut m = vec![vec![0.0; max_s + 1]; ng + 1];
    for &(g, s) in entries {
        m[g as usize][s] += 1.0;
    }
    let mut f = [0.0f64; 16];
    let (mut ui, mut uj) = (0.0, 0.0);
    for i in 1..=ng {
        for j in 1..=max_s {
            ui += m[i][j] / n * i as f64;
            uj += m[i][j] / n * j as f64;
        }
    }
    let gl_rows: Vec<f64> = (0..=ng).map(|i| m[i].iter().sum()).collect();
    let mut sz_cols = vec![0.0; max_s + 1];
    for row in &m {
        for (j, v) in row.iter().enumerate() {
            sz_cols[j] += v;
        }
    }
    for i in 1..=ng {
        for j in 1..=max_s {
            let c = m[i][j];
            if c == 0.0 {
                continue;
            }
            let (fi, fj) = (i as f64, j as f64);
            let p = c / n;
            f[0] += c / (fj * fj);
            f[1] += c * fj * fj;
            f[7] += p * (fi - ui).powi(2);
            f[8] += p * (fj - uj).powi(2);
            f[9] -= p * log2(p);
            f[10] += c / (fi * fi);
            f[11] += c * fi * fi;
            f[12] += c / (fi * fi * fj * fj);
            f[13] += c * fi * fi / (fj * fj);
            f[14] += c * fj * fj / (fi * fi);
            f[15] += c * fi * fi * fj * fj;
        }
    }
    for k in [0, 1, 10, 11, 12, 13, 14, 15] {
        f[k] /= n;
    }
    f[2] = gl_rows.iter().map(|v| v * v).sum::<f64>() / n;
    f[3] = f[2] / n;
    f[4] = sz_cols.iter().map(|v| v * v).sum::<f64>() / n;
    f[5] = f[4] / n;
    f[6] = n / np as f64;
    if gldm_layout {
        vec![f[0], f[1], f[2], f[4], f[5], f[7], f[8], f[9], f[10], f[11], f[12], f[13], f[14], f[15]]
    } else {
        f.to_vec()
    }
}

pub fn glrlm_features(bins: &[u32], dims: [usize; 3], ng: usize) -> Vec<f64> {
    let np = bins.iter().filter(|&&b| b > 0).count();
    let dirs = directions();
    let mut acc = vec![0.0; 16];
    for d in &dirs {
        for (a, v) in acc.iter_mut().zip(size_features(&glrlm(bins, dims, *d), ng, np, false)) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / dirs.len() as f64).collect()
}

pub fn glszm_features(bins: &[u32], dims: [usize; 3], ng: usize) -> Vec<f64> {
    let np = bins.iter().filter(|&&b| b > 0).count();
    size_features(&glszm(bins, dims), ng, np, false)
}

pub fn gldm_features(bins: &[u32], dims: [usize; 3], ng: usize) -> Vec<f64> {
    let np = bins.iter().filter(|&&b| b > 0).count();
    size_features(&gldm(bins, dims), ng, np, true)
}

pub fn ngtdm_features(bins: &[u32], dims: [usize; 3], ng: usize) -> Vec<f64> {
    let offs = neighbors(26);
    let mut n = vec![0.0; ng + 1];
    let mut s = vec![0.0; ng + 1];
    for a in 0..bins.len() {
        if bins[a] == 0 {
            continue;
        }
        let c = coord(dims, a);
        let vals: Vec<f64> = offs
            .iter()
            .map(|d| gray_at(bins, dims, [c[0] + d[0], c[1] + d[1], c[2] + d[2]]))
            .filter(|&g| g > 0)
            .map(|g| g as f64)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let g = bins[a] as usize;
        n[g] += 1.0;
        s[g] += (g as f64 - mean).abs();
    }
    let nvp: f64 = n.iter().sum();
    if nvp == 0.0 {
        return vec![1e6, 0.0, 0.0, 0.0, 0.0];
    }
    let p: Vec<f64> = n.iter().map(|v| v / nvp).collect();
    let present: Vec<usize> = (1..=ng).filter(|&i| p[i] > 0.0).collect();
    let ngp = present.len() as f64;
    let denom_c: f64 = present.iter().map(|&i| p[i] * s[i]).sum();
    let coarseness = if denom_c == 0.0 { 1e6 } else { 1.0 / denom_c };
    let s_sum: f64 = s.iter().sum();
    let mut contrast = 0.0;
    let mut busy_den = 0.0;
    let mut complexity = 0.0;
    let mut strength = 0.0;
    for &i in &present {
        for &j in &present {
            let (fi, fj) = (i as f64, j as f64);
            contrast += p[i] * p[j] * (fi - fj).powi(2);
            busy_den += (fi * p[i] - fj * p[j]).abs();
            complexity += (fi - fj).abs() * (p[i] * s[i] + p[j] * s[j]) / (p[i] + p[j]);
            strength += (p[i] + p[j]) * (fi - fj).powi(2);
        }
    }
    let contrast = if ngp > 1.0 {
        contrast / (ngp * (ngp - 1.0)) * s_sum / nvp
    } else {
        0.0
    };
    let busyness = if ngp > 1.0 && busy_den != 0.0 { denom_c / busy_den } else { 0.0 };
    let strength = if s_sum == 0.0 { 0.0 } else { strength / s_sum };
    vec![coarseness, contrast, busyness, complexity / nvp, strength]
}

// ---------------------------------------------------------------- linear algebra

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues (descending) and the matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y][y].partial_cmp(&m[x][x]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| d(&points[i], &points[j])).sum::<f64>() / own.len() as f64;
        let mut b = f64::INFINITY;
        let mut others: Vec<usize> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
        others.sort();
        others.dedup();
        for l in others {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == l).collect();
            let mean = members.iter().map(|&j| d(&points[i], &points[j])).sum::<f64>() / members.len() as f64;
            b = b.min(mean);
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
