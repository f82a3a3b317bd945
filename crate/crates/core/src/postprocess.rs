//! Connected components and the symmetric left/right clean-up.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Mask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Six,
    Eighteen,
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            _ => Err(Error::InvalidArgument(format!("connectivity must be 6, 18 or 26 (got {n})"))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Self::Six => 6,
            Self::Eighteen => 18,
            Self::TwentySix => 26,
        }
    }

    /// Neighbor offsets that precede a voxel in scan order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dk in -1..=0isize {
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    let before = dk < 0 || (dk == 0 && (dj < 0 || (dj == 0 && di < 0)));
                    if !before {
                        continue;
                    }
                    let nonzero = [di, dj, dk].iter().filter(|&&x| x != 0).count();
                    let ok = match self {
                        Self::Six => nonzero == 1,
                        Self::Eighteen => nonzero <= 2,
                        Self::TwentySix => true,
                    };
                    if ok {
                        out.push([di, dj, dk]);
                    }
                }
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
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Component labeling of a mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    /// `0` for voxels outside the mask, otherwise component id `1..=n`.
    pub ids: Vec<u32>,
    /// `sizes[id - 1]`, descending.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

/// Two-pass union-find labeling. Ids are ordered by descending size, ties by
/// the smallest linear voxel index in the component.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Components {
    let [nx, ny, nz] = mask.dims;
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![u32::MAX; mask.data.len()];
    let mut sets = DisjointSet::new();

    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * k);
                if !mask.data[idx] {
                    continue;
                }
                let mut label = u32::MAX;
                for off in &offsets {
                    let (ii, jj, kk) = (i as isize + off[0], j as isize + off[1], k as isize + off[2]);
                    if ii < 0 || jj < 0 || kk < 0 || ii >= nx as isize || jj >= ny as isize {
                        continue;
                    }
                    let n = ii as usize + nx * (jj as usize + ny * kk as usize);
                    let other = provisional[n];
                    if other == u32::MAX {
                        continue;
                    }
                    if label == u32::MAX {
                        label = other;
                    } else {
                        sets.union(label, other);
                    }
                }
                provisional[idx] = if label == u32::MAX { sets.make() } else { label };
            }
        }
    }

    // root -> (size, first linear index)
    let mut root_stats: Vec<(usize, usize)> = vec![(0, usize::MAX); sets.parent.len()];
    let mut roots = vec![0u32; mask.data.len()];
    for (idx, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let r = sets.find(p);
        roots[idx] = r;
        let s = &mut root_stats[r as usize];
        s.0 += 1;
        s.1 = s.1.min(idx);
    }
    let mut order: Vec<u32> = (0..root_stats.len() as u32)
        .filter(|&r| root_stats[r as usize].0 > 0)
        .collect();
    order.sort_by_key(|&r| {
        let (size, first) = root_stats[r as usize];
        (std::cmp::Reverse(size), first)
    });
    let mut final_id = vec![0u32; root_stats.len()];
    for (rank, &r) in order.iter().enumerate() {
        final_id[r as usize] = rank as u32 + 1;
    }
    let ids = provisional
        .iter()
        .zip(&roots)
        .map(|(&p, &r)| if p == u32::MAX { 0 } else { final_id[r as usize] })
        .collect();
    let sizes = order.iter().map(|&r| root_stats[r as usize].0).collect();
    Components { ids, sizes }
}

/// Disjoint foreground class pairs, e.g. left/right femur.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryPairs {
    pub pairs: Vec<(u8, u8)>,
}

impl SymmetryPairs {
    pub fn new(pairs: Vec<(u8, u8)>) -> Self {
        Self { pairs }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &(a, b) in &self.pairs {
            if a == b || a == 0 || b == 0 {
                return Err(Error::InvalidArgument(format!("invalid symmetry pair {a}:{b}")));
            }
            if usize::from(a.max(b)) >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "pair {a}:{b} exceeds class count {num_classes}"
                )));
            }
            if !seen.insert(a) || !seen.insert(b) {
                return Err(Error::InvalidArgument(format!("class repeated in pairs at {a}:{b}")));
            }
        }
        Ok(())
    }

    pub fn partner(&self, class: u8) -> Option<u8> {
        self.pairs.iter().find_map(|&(a, b)| {
            if a == class {
                Some(b)
            } else if b == class {
                Some(a)
            } else {
                None
            }
        })
    }
}

impl FromStr for SymmetryPairs {
    type Err = Error;

    /// `"1:2,3:4"`; the empty string is no pairs.
    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("pair {part:?} is not of the form a:b")))?;
            let parse = |x: &str| {
                x.trim()
                    .parse::<u8>()
                    .map_err(|_| Error::InvalidArgument(format!("bad class id {x:?} in {part:?}")))
            };
            pairs.push((parse(a)?, parse(b)?));
        }
        Ok(Self { pairs })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCount {
    pub class: u8,
    pub component: u32,
    pub voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relabel {
    pub component: u32,
    pub from: u8,
    pub to: u8,
    pub voxels: usize,
}

/// Audit trail of [`symmetric_cc_filter`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentStats {
    /// Components of paired classes on the input labels.
    pub paired_components: Vec<ComponentCount>,
    pub relabeled: Vec<Relabel>,
    /// Components of every class after relabeling.
    pub class_components: Vec<ComponentCount>,
    pub removed: Vec<ComponentCount>,
}

/// Stage 1: for each pair, keep each class's largest component and hand every
/// other component to the partner class (components come from the input for
/// both classes). Stage 2: keep only the largest component of every
/// foreground class, the rest becomes background.
pub fn symmetric_cc_filter(
    y: &LabelVolume,
    pairs: &SymmetryPairs,
    connectivity: Connectivity,
) -> Result<(LabelVolume, ComponentStats)> {
    pairs.validate(y.num_classes)?;
    let mut stats = ComponentStats::default();
    let mut out = y.clone();

    for &(a, b) in &pairs.pairs {
        for (class, partner) in [(a, b), (b, a)] {
            let comps = connected_components(&y.mask_of(class), connectivity);
            for (n, &size) in comps.sizes.iter().enumerate() {
                stats.paired_components.push(ComponentCount {
                    class,
                    component: n as u32 + 1,
                    voxels: size,
                });
                if n > 0 {
                    stats.relabeled.push(Relabel {
                        component: n as u32 + 1,
                        from: class,
                        to: partner,
                        voxels: size,
                    });
                }
            }
            for (idx, &id) in comps.ids.iter().enumerate() {
                if id > 1 {
                    out.labels[idx] = partner;
                }
            }
        }
    }

    let stage1 = out.clone();
    for class in y.foreground_classes() {
        let comps = connected_components(&stage1.mask_of(class), connectivity);
        for (n, &size) in comps.sizes.iter().enumerate() {
            let entry = ComponentCount {
                class,
                component: n as u32 + 1,
                voxels: size,
            };
            if n > 0 {
                stats.removed.push(entry.clone());
            }
            stats.class_components.push(entry);
        }
        for (idx, &id) in comps.ids.iter().enumerate() {
            if id > 1 {
                out.labels[idx] = 0;
            }
        }
    }
    Ok((out, stats))
}
