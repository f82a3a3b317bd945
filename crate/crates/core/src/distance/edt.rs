//! Exact Euclidean distance transform by separable lower envelopes of
//! parabolas (one 1-D pass per axis).

use crate::volume::Mask;

/// Squared distance along one line. `f` holds the squared distances from the
/// previous passes (`INFINITY` where no site is reachable); `w2` is the
/// squared sample spacing along this axis.
fn envelope_1d(f: &[f64], w2: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let (qf, vf) = (q as f64, v as f64);
            let s = ((fq + w2 * qf * qf) - (f[v] + w2 * vf * vf)) / (2.0 * w2 * (qf - vf));
            if s <= *bounds.last().unwrap() {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }

    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while k + 1 < sites.len() && bounds[k + 1] < pf {
            k += 1;
        }
        let d = pf - sites[k] as f64;
        *o = w2 * d * d + f[sites[k]];
    }
}

/// Squared Euclidean distance to the nearest `true` voxel. `spacing` scales
/// each axis (use `[1.0; 3]` for index units). All `INFINITY` for an empty
/// mask.
pub fn squared_edt(mask: &Mask, spacing: [f64; 3]) -> Vec<f64> {
    let dims = mask.dims;
    let mut grid: Vec<f64> = mask
        .data
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let stride = [1, dims[0], dims[0] * dims[1]];

    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut sites = Vec::new();
    let mut bounds = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let w2 = spacing[axis] * spacing[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        line.resize(n, 0.0);
        out.resize(n, 0.0);
        for v in 0..dims[b] {
            for u in 0..dims[a] {
                let base = u * stride[a] + v * stride[b];
                for (t, slot) in line.iter_mut().enumerate() {
                    *slot = grid[base + t * stride[axis]];
                }
                envelope_1d(&line, w2, &mut out, &mut sites, &mut bounds);
                for (t, &d) in out.iter().enumerate() {
                    grid[base + t * stride[axis]] = d;
                }
            }
        }
    }
    grid
}

/// Euclidean distance in voxel-index units.
pub fn edt(mask: &Mask) -> Vec<f64> {
    let mut d = squared_edt(mask, [1.0; 3]);
    d.iter_mut().for_each(|x| *x = x.sqrt());
    d
}

/// Euclidean distance in millimetres for anisotropic grids.
pub fn edt_mm(mask: &Mask, spacing_mm: [f64; 3]) -> Vec<f64> {
    let mut d = squared_edt(mask, spacing_mm);
    d.iter_mut().for_each(|x| *x = x.sqrt());
    d
}
