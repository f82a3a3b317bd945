//! Brute-force reference implementations and fixtures shared by the
//! integration tests. Everything here is quadratic and written for clarity.

#![allow(dead_code)]

use mpseg::volume::{LabelVolume, Mask, VolumeGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn coords(dims: [usize; 3], idx: usize) -> [usize; 3] {
    [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])]
}

pub fn dist2(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let d = (a[k] as f64 - b[k] as f64) * spacing[k];
            d * d
        })
        .sum()
}

pub fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], density: f64) -> Mask {
    let n = dims.iter().product();
    Mask::new(dims, (0..n).map(|_| rng.gen_bool(density)).collect()).unwrap()
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> [usize; 3] {
    std::array::from_fn(|_| rng.gen_range(1..=max))
}

/// Squared distance from every voxel to the nearest set voxel.
pub fn brute_sq_edt(mask: &Mask, spacing: [f64; 3]) -> Vec<f64> {
    let set: Vec<[usize; 3]> = (0..mask.data.len())
        .filter(|&i| mask.data[i])
        .map(|i| coords(mask.dims, i))
        .collect();
    (0..mask.data.len())
        .map(|i| {
            let p = coords(mask.dims, i);
            set.iter()
                .map(|&q| dist2(p, q, spacing))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Random blobs: a few balls of random classes on top of sparse speckle.
pub fn random_labels(rng: &mut ChaCha8Rng, dims: [usize; 3], num_classes: usize) -> LabelVolume {
    let g = VolumeGeometry::unit(dims);
    let mut labels = vec![0u8; g.len()];
    for _ in 0..rng.gen_range(2..6) {
        let c: [f64; 3] = std::array::from_fn(|k| rng.gen_range(0.0..dims[k] as f64));
        let r = rng.gen_range(1.0..4.0);
        let class = rng.gen_range(1..num_classes) as u8;
        for (idx, l) in labels.iter_mut().enumerate() {
            let p = coords(dims, idx);
            let d2: f64 = (0..3).map(|k| (p[k] as f64 - c[k]).powi(2)).sum();
            if d2 <= r * r {
                *l = class;
            }
        }
    }
    for l in labels.iter_mut() {
        if rng.gen_bool(0.02) {
            *l = rng.gen_range(0..num_classes) as u8;
        }
    }
    LabelVolume::new(g, labels, num_classes).unwrap()
}

/// Perturbs a label volume by relabeling a fraction of voxels.
pub fn perturb(rng: &mut ChaCha8Rng, y: &LabelVolume, fraction: f64) -> LabelVolume {
    let mut out = y.clone();
    for l in out.labels.iter_mut() {
        if rng.gen_bool(fraction) {
            *l = rng.gen_range(0..y.num_classes) as u8;
        }
    }
    out
}

/// Per-voxel `(d1, d2, nearest, second)` with lower class ids winning ties.
pub fn brute_class_distances(y: &LabelVolume) -> Vec<(f64, f64, u8, u8)> {
    let per_class: Vec<Vec<f64>> = (1..y.num_classes)
        .map(|c| brute_sq_edt(&y.mask_of(c as u8), [1.0; 3]))
        .collect();
    (0..y.labels.len())
        .map(|i| {
            let mut ds: Vec<(f64, u8)> = per_class
                .iter()
                .enumerate()
                .map(|(c, d)| (d[i].sqrt(), c as u8 + 1))
                .filter(|(d, _)| d.is_finite())
                .collect();
            ds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let first = ds.first().copied().unwrap_or((f64::INFINITY, 0));
            let second = ds.get(1).copied().unwrap_or((f64::INFINITY, 0));
            (first.0, second.0, first.1, second.1)
        })
        .collect()
}

/// Foreground voxels within `epsilon` of a voxel of a different foreground class.
pub fn brute_collisions(p: &LabelVolume, epsilon: f64) -> Vec<usize> {
    let dims = p.geometry.dims;
    let fg: Vec<(usize, [usize; 3], u8)> = p
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != 0)
        .map(|(i, &l)| (i, coords(dims, i), l))
        .collect();
    fg.iter()
        .filter(|&&(_, a, la)| {
            fg.iter()
                .any(|&(_, b, lb)| lb != la && dist2(a, b, [1.0; 3]).sqrt() <= epsilon)
        })
        .map(|&(i, _, _)| i)
        .collect()
}

/// Ball erosion: a voxel survives iff every in-ball offset is inside the grid
/// and carries the same class.
pub fn brute_erode(y: &LabelVolume, radius: u32) -> Vec<u8> {
    let dims = y.geometry.dims;
    let r = radius as isize;
    let mut out = y.labels.clone();
    for (idx, l) in out.iter_mut().enumerate() {
        if *l == 0 {
            continue;
        }
        let p = coords(dims, idx);
        let mut keep = true;
        'ball: for dk in -r..=r {
            for dj in -r..=r {
                for di in -r..=r {
                    if di * di + dj * dj + dk * dk > r * r {
                        continue;
                    }
                    let q = [p[0] as isize + di, p[1] as isize + dj, p[2] as isize + dk];
                    let inside = (0..3).all(|k| q[k] >= 0 && (q[k] as usize) < dims[k]);
                    if !inside || y.get(q[0] as usize, q[1] as usize, q[2] as usize) != *l {
                        keep = false;
                        break 'ball;
                    }
                }
            }
        }
        if !keep {
            *l = 0;
        }
    }
    out
}

pub fn neighbor_offsets(connectivity: u32) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    for dk in -1isize..=1 {
        for dj in -1isize..=1 {
            for di in -1isize..=1 {
                let nonzero = [di, dj, dk].iter().filter(|&&x| x != 0).count() as u32;
                let ok = match connectivity {
                    6 => nonzero == 1,
                    18 => (1..=2).contains(&nonzero),
                    _ => nonzero >= 1,
                };
                if ok {
                    out.push([di, dj, dk]);
                }
            }
        }
    }
    out
}

/// Flood-fill labelling: ids from 1 by descending size, ties by the smallest
/// linear index. Returns `(ids, sizes)`.
pub fn bfs_components(mask: &Mask, connectivity: u32) -> (Vec<u32>, Vec<usize>) {
    let dims = mask.dims;
    let n = mask.data.len();
    let mut raw = vec![0u32; n];
    let mut comps: Vec<(usize, usize)> = Vec::new(); // (size, first index)
    let offsets = neighbor_offsets(connectivity);
    for start in 0..n {
        if !mask.data[start] || raw[start] != 0 {
            continue;
        }
        let id = comps.len() as u32 + 1;
        raw[start] = id;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            let p = coords(dims, v);
            for o in &offsets {
                let q = [p[0] as isize + o[0], p[1] as isize + o[1], p[2] as isize + o[2]];
                if (0..3).any(|k| q[k] < 0 || q[k] as usize >= dims[k]) {
                    continue;
                }
                let w = q[0] as usize + dims[0] * (q[1] as usize + dims[1] * q[2] as usize);
                if mask.data[w] && raw[w] == 0 {
                    raw[w] = id;
                    queue.push_back(w);
                }
            }
        }
        comps.push((size, start));
    }
    let mut order: Vec<usize> = (0..comps.len()).collect();
    order.sort_by(|&a, &b| comps[b].0.cmp(&comps[a].0).then(comps[a].1.cmp(&comps[b].1)));
    let mut remap = vec![0u32; comps.len() + 1];
    for (new, &old) in order.iter().enumerate() {
        remap[old + 1] = new as u32 + 1;
    }
    let ids = raw.iter().map(|&r| remap[r as usize]).collect();
    let sizes = order.iter().map(|&o| comps[o].0).collect();
    (ids, sizes)
}

pub fn brute_dice(p: &LabelVolume, y: &LabelVolume, region: Option<&[bool]>) -> (Vec<f64>, Option<f64>) {
    let mut per = vec![f64::NAN; y.num_classes];
    let mut present = Vec::new();
    for c in 1..y.num_classes as u8 {
        let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
        for i in 0..y.labels.len() {
            if region.is_some_and(|r| !r[i]) {
                continue;
            }
            let pi = p.labels[i] == c;
            let yi = y.labels[i] == c;
            a += pi as usize;
            b += yi as usize;
            inter += (pi && yi) as usize;
        }
        per[c as usize] = if a + b == 0 { 1.0 } else { 2.0 * inter as f64 / (a + b) as f64 };
        if b > 0 {
            present.push(per[c as usize]);
        }
    }
    let macro_avg = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    (per, macro_avg)
}

pub fn brute_gap_region(y: &LabelVolume, epsilon: f64) -> Vec<bool> {
    brute_class_distances(y)
        .into_iter()
        .map(|(d1, d2, _, _)| d1 + d2 < epsilon)
        .collect()
}

/// Symmetric Hausdorff distance per class by explicit pairwise search.
pub fn brute_hausdorff(p: &LabelVolume, y: &LabelVolume) -> Vec<f64> {
    let dims = y.geometry.dims;
    let mut out = vec![f64::NAN; y.num_classes];
    for c in 1..y.num_classes as u8 {
        let a: Vec<[usize; 3]> = (0..p.labels.len()).filter(|&i| p.labels[i] == c).map(|i| coords(dims, i)).collect();
        let b: Vec<[usize; 3]> = (0..y.labels.len()).filter(|&i| y.labels[i] == c).map(|i| coords(dims, i)).collect();
        out[c as usize] = match (a.is_empty(), b.is_empty()) {
            (true, true) => 0.0,
            (true, false) | (false, true) => f64::INFINITY,
            _ => {
                let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
                    from.iter()
                        .map(|&u| to.iter().map(|&v| dist2(u, v, [1.0; 3])).fold(f64::INFINITY, f64::min))
                        .fold(0.0, f64::max)
                        .sqrt()
                };
                directed(&a, &b).max(directed(&b, &a))
            }
        };
    }
    out
}
