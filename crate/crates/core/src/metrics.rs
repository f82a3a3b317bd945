//! Overlap and surface-distance metrics, plus the flat `key = value` report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::distance::{class_distances, detect_collisions, edt, gap_region_from};
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Mask};

/// Per-class scores (index 0 is background and unused) plus their macro mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    pub per_class: Vec<f64>,
    /// Mean over classes present in the reference; `None` if there are none.
    pub macro_avg: Option<f64>,
}

fn check_pair(p: &LabelVolume, y: &LabelVolume) -> Result<()> {
    if p.geometry != y.geometry || p.num_classes != y.num_classes {
        return Err(Error::Mismatch(format!(
            "prediction ({:?}, K={}) vs truth ({:?}, K={})",
            p.geometry.dims, p.num_classes, y.geometry.dims, y.num_classes
        )));
    }
    Ok(())
}

fn dice_ratio(inter: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Dice restricted to `region` (all voxels when `None`).
fn restricted_dice(p: &LabelVolume, y: &LabelVolume, region: Option<&Mask>) -> ClassScores {
    let k = y.num_classes;
    let mut inter = vec![0usize; k];
    let mut pc = vec![0usize; k];
    let mut yc = vec![0usize; k];
    for (i, (&a, &b)) in p.labels.iter().zip(&y.labels).enumerate() {
        if region.is_some_and(|r| !r.data[i]) {
            continue;
        }
        pc[usize::from(a)] += 1;
        yc[usize::from(b)] += 1;
        if a == b {
            inter[usize::from(a)] += 1;
        }
    }
    let mut per_class = vec![f64::NAN; k];
    let mut present = Vec::new();
    for c in 1..k {
        per_class[c] = dice_ratio(inter[c], pc[c], yc[c]);
        if yc[c] > 0 {
            present.push(per_class[c]);
        }
    }
    let macro_avg = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    ClassScores { per_class, macro_avg }
}

pub fn dice(p: &LabelVolume, y: &LabelVolume) -> Result<ClassScores> {
    check_pair(p, y)?;
    Ok(restricted_dice(p, y, None))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapDice {
    pub epsilon: f64,
    pub scores: ClassScores,
    /// All foreground classes pooled into one.
    pub binary: f64,
    pub region_voxels: usize,
}

impl GapDice {
    pub fn empty_region(&self) -> bool {
        self.region_voxels == 0
    }
}

pub fn gap_dice(p: &LabelVolume, y: &LabelVolume, epsilon: f64) -> Result<GapDice> {
    check_pair(p, y)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("gap epsilon {epsilon} must be > 0")));
    }
    let region = gap_region_from(&class_distances(y), epsilon);
    Ok(gap_dice_in(p, y, &region, epsilon))
}

fn gap_dice_in(p: &LabelVolume, y: &LabelVolume, region: &Mask, epsilon: f64) -> GapDice {
    let scores = restricted_dice(p, y, Some(region));
    let (mut inter, mut pf, mut yf) = (0, 0, 0);
    for (i, (&a, &b)) in p.labels.iter().zip(&y.labels).enumerate() {
        if !region.data[i] {
            continue;
        }
        pf += usize::from(a != 0);
        yf += usize::from(b != 0);
        inter += usize::from(a != 0 && b != 0);
    }
    GapDice {
        epsilon,
        scores,
        binary: dice_ratio(inter, pf, yf),
        region_voxels: region.count(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hausdorff {
    /// Index 0 unused. `INFINITY` when exactly one side is empty.
    pub per_class: Vec<f64>,
    pub max: f64,
}

/// Directed distance sup over `from` of the distance to `to`.
fn directed(from: &Mask, to_distance: &[f64]) -> f64 {
    from.data
        .iter()
        .zip(to_distance)
        .filter(|(&m, _)| m)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
}

pub fn hausdorff(p: &LabelVolume, y: &LabelVolume) -> Result<Hausdorff> {
    check_pair(p, y)?;
    let k = y.num_classes;
    let mut per_class = vec![f64::NAN; k];
    let mut max = 0.0f64;
    for c in y.foreground_classes() {
        let (pm, ym) = (p.mask_of(c), y.mask_of(c));
        let (pn, yn) = (pm.count(), ym.count());
        let h = match (pn, yn) {
            (0, 0) => 0.0,
            (0, _) | (_, 0) => f64::INFINITY,
            _ => directed(&pm, &edt(&ym)).max(directed(&ym, &edt(&pm))),
        };
        per_class[usize::from(c)] = h;
        max = max.max(h);
    }
    Ok(Hausdorff { per_class, max })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub gap_epsilon: f64,
    pub collision_epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gap_epsilon: 10.0,
            collision_epsilon: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub dice: ClassScores,
    pub gap_dice: GapDice,
    pub hausdorff: Hausdorff,
    pub collision_epsilon: f64,
    pub collision_count: usize,
    pub metadata: BTreeMap<String, String>,
}

pub fn evaluate(p: &LabelVolume, y: &LabelVolume, config: &EvalConfig) -> Result<MetricsReport> {
    check_pair(p, y)?;
    Ok(MetricsReport {
        num_classes: y.num_classes,
        dice: dice(p, y)?,
        gap_dice: gap_dice(p, y, config.gap_epsilon)?,
        hausdorff: hausdorff(p, y)?,
        collision_epsilon: config.collision_epsilon,
        collision_count: detect_collisions(p, config.collision_epsilon).count,
        metadata: BTreeMap::new(),
    })
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else {
        // shortest representation that round-trips
        format!("{x:?}")
    }
}

fn fmt_eps(x: f64) -> String {
    if x.fract() == 0.0 && x.is_finite() {
        format!("{}", x as i64)
    } else {
        fmt_num(x)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), fmt_num)
}

fn parse_num(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "nan" => Ok(f64::NAN),
        _ => s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad number {s:?} in report"))),
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "none" {
        Ok(None)
    } else {
        parse_num(s).map(Some)
    }
}

impl MetricsReport {
    /// One `key = value` per line, keys in a stable order.
    pub fn to_text(&self) -> String {
        let gap = fmt_eps(self.gap_dice.epsilon);
        let col = fmt_eps(self.collision_epsilon);
        let mut s = String::new();
        let _ = writeln!(s, "meta.num_classes = {}", self.num_classes);
        let _ = writeln!(s, "meta.gap_epsilon = {}", fmt_num(self.gap_dice.epsilon));
        let _ = writeln!(s, "meta.collision_epsilon = {}", fmt_num(self.collision_epsilon));
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "meta.{k} = {v:?}");
        }
        for c in 1..self.num_classes {
            let _ = writeln!(s, "dice.class{c} = {}", fmt_num(self.dice.per_class[c]));
        }
        let _ = writeln!(s, "dice.macro = {}", fmt_opt(self.dice.macro_avg));
        for c in 1..self.num_classes {
            let _ = writeln!(s, "gapdice.class{c}.eps{gap} = {}", fmt_num(self.gap_dice.scores.per_class[c]));
        }
        let _ = writeln!(s, "gapdice.macro.eps{gap} = {}", fmt_opt(self.gap_dice.scores.macro_avg));
        let _ = writeln!(s, "gapdice.binary.eps{gap} = {}", fmt_num(self.gap_dice.binary));
        let _ = writeln!(s, "gapdice.region_voxels.eps{gap} = {}", self.gap_dice.region_voxels);
        let _ = writeln!(s, "gapdice.no_gap_region.eps{gap} = {}", self.gap_dice.empty_region());
        for c in 1..self.num_classes {
            let _ = writeln!(s, "hd.class{c}_vox = {}", fmt_num(self.hausdorff.per_class[c]));
        }
        let _ = writeln!(s, "hd.max_vox = {}", fmt_num(self.hausdorff.max));
        let _ = writeln!(s, "collisions.count.eps{col} = {}", self.collision_count);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::InvalidArgument(format!("bad report line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::InvalidArgument(format!("report is missing key {k}")))
        };
        let num_classes: usize = get("meta.num_classes")?
            .parse()
            .map_err(|_| Error::InvalidArgument("bad meta.num_classes".into()))?;
        let gap_eps = parse_num(get("meta.gap_epsilon")?)?;
        let col_eps = parse_num(get("meta.collision_epsilon")?)?;
        let (gap, col) = (fmt_eps(gap_eps), fmt_eps(col_eps));

        let mut dice_pc = vec![f64::NAN; num_classes];
        let mut gap_pc = vec![f64::NAN; num_classes];
        let mut hd_pc = vec![f64::NAN; num_classes];
        for c in 1..num_classes {
            dice_pc[c] = parse_num(get(&format!("dice.class{c}"))?)?;
            gap_pc[c] = parse_num(get(&format!("gapdice.class{c}.eps{gap}"))?)?;
            hd_pc[c] = parse_num(get(&format!("hd.class{c}_vox"))?)?;
        }
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad integer for {k}")))
        };
        let metadata = map
            .iter()
            .filter_map(|(k, v)| {
                let key = k.strip_prefix("meta.")?;
                if matches!(key, "num_classes" | "gap_epsilon" | "collision_epsilon") {
                    return None;
                }
                let unquoted = v.trim_matches('"').to_string();
                Some((key.to_string(), unquoted))
            })
            .collect();
        Ok(Self {
            num_classes,
            dice: ClassScores {
                per_class: dice_pc,
                macro_avg: parse_opt(get("dice.macro")?)?,
            },
            gap_dice: GapDice {
                epsilon: gap_eps,
                scores: ClassScores {
                    per_class: gap_pc,
                    macro_avg: parse_opt(get(&format!("gapdice.macro.eps{gap}"))?)?,
                },
                binary: parse_num(get(&format!("gapdice.binary.eps{gap}"))?)?,
                region_voxels: count(&format!("gapdice.region_voxels.eps{gap}"))?,
            },
            hausdorff: Hausdorff {
                per_class: hd_pc,
                max: parse_num(get("hd.max_vox")?)?,
            },
            collision_epsilon: col_eps,
            collision_count: count(&format!("collisions.count.eps{col}"))?,
            metadata,
        })
    }

    /// Field-wise equality treating `NaN == NaN` (unused class slots).
    pub fn same_values(&self, other: &Self) -> bool {
        self.to_text() == other.to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;

    fn lv(dims: [usize; 3], k: usize, labels: Vec<u8>) -> LabelVolume {
        LabelVolume::new(VolumeGeometry::unit(dims), labels, k).unwrap()
    }

    #[test]
    fn identical_volumes() {
        let y = lv([4, 1, 1], 3, vec![1, 0, 2, 2]);
        let d = dice(&y, &y).unwrap();
        assert_eq!(d.per_class[1..], [1.0, 1.0]);
        assert_eq!(d.macro_avg, Some(1.0));
        assert_eq!(hausdorff(&y, &y).unwrap().max, 0.0);
    }

    #[test]
    fn disjoint_and_half_overlap() {
        let p = lv([2, 1, 1], 2, vec![1, 0]);
        let y = lv([2, 1, 1], 2, vec![0, 1]);
        assert_eq!(dice(&p, &y).unwrap().per_class[1], 0.0);

        // two 2x2x2 cubes offset by one along x share 4 voxels
        let g = VolumeGeometry::unit([3, 2, 2]);
        let mut a = vec![0; 12];
        let mut b = vec![0; 12];
        for idx in 0..12 {
            let [i, _, _] = g.coords(idx);
            if i < 2 {
                a[idx] = 1;
            }
            if i > 0 {
                b[idx] = 1;
            }
        }
        let d = dice(&lv([3, 2, 2], 2, a), &lv([3, 2, 2], 2, b)).unwrap();
        assert_eq!(d.per_class[1], 0.5);
    }

    #[test]
    fn empty_conventions() {
        let y = lv([3, 1, 1], 3, vec![1, 0, 0]);
        let p = lv([3, 1, 1], 3, vec![0, 0, 0]);
        let d = dice(&p, &y).unwrap();
        assert_eq!((d.per_class[1], d.per_class[2]), (0.0, 1.0));
        assert_eq!(d.macro_avg, Some(0.0));
        let h = hausdorff(&p, &y).unwrap();
        assert_eq!((h.per_class[1], h.per_class[2]), (f64::INFINITY, 0.0));
    }

    #[test]
    fn hausdorff_three_four_five() {
        let g = VolumeGeometry::unit([4, 5, 1]);
        let mut a = vec![0; g.len()];
        let mut b = vec![0; g.len()];
        a[g.index(0, 0, 0)] = 1;
        b[g.index(3, 4, 0)] = 1;
        let h = hausdorff(&lv([4, 5, 1], 2, a), &lv([4, 5, 1], 2, b)).unwrap();
        assert_eq!(h.max, 5.0);
    }

    #[test]
    fn gap_dice_ignores_differences_outside_region() {
        // classes at 0..2 and 4..6 along a 12-long line; far tail differs
        let y = lv([12, 1, 1], 3, vec![1, 1, 0, 0, 2, 2, 0, 0, 0, 0, 0, 0]);
        let p = lv([12, 1, 1], 3, vec![1, 1, 0, 0, 2, 2, 0, 0, 0, 0, 0, 1]);
        let g = gap_dice(&p, &y, 5.0).unwrap();
        assert!(!g.empty_region());
        assert_eq!(g.scores.macro_avg, Some(1.0));
        assert_eq!(g.binary, 1.0);
        assert!(dice(&p, &y).unwrap().per_class[1] < 1.0);
        assert!(gap_dice(&p, &y, 0.0).is_err());
    }

    #[test]
    fn mismatch_is_error() {
        let a = lv([2, 1, 1], 2, vec![0, 1]);
        let b = lv([2, 1, 1], 3, vec![0, 1]);
        assert!(dice(&a, &b).is_err());
        assert!(evaluate(&a, &b, &EvalConfig::default()).is_err());
    }

    #[test]
    fn report_round_trip() {
        let y = lv([6, 1, 1], 4, vec![1, 0, 2, 0, 0, 3]);
        let p = lv([6, 1, 1], 4, vec![1, 1, 2, 0, 0, 0]);
        let mut r = evaluate(&p, &y, &EvalConfig::default()).unwrap();
        r.metadata.insert("pred".into(), "a b.toml".into());
        let text = r.to_text();
        assert!(text.contains("dice.macro = "));
        assert!(text.contains("gapdice.macro.eps10 = "));
        assert!(text.contains("hd.max_vox = inf"));
        assert!(text.contains("collisions.count.eps2 = "));
        let back = MetricsReport::from_text(&text).unwrap();
        assert!(back.same_values(&r));
        assert_eq!(back.metadata, r.metadata);
    }
}
