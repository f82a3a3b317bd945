use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on random direction draws before giving up.
pub const MAX_VIEW_ATTEMPTS: usize = 100_000;

/// Consecutive rejections after which the partially built set is completed
/// and relaxed instead of drawn further.
const STALL_LIMIT: usize = 1_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    #[default]
    Random,
    /// Start from the coordinate axes; any further views are random.
    Canonical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    pub views: Vec<[f64; 3]>,
    pub seed: u64,
    pub min_pairwise_angle_deg: f64,
}

/// Angle between the lines spanned by `a` and `b`, in degrees (`v ~ -v`).
pub fn line_angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs().min(1.0);
    dot.acos().to_degrees()
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn to_upper_hemisphere(v: [f64; 3]) -> [f64; 3] {
    if v[2] < 0.0 {
        [-v[0], -v[1], -v[2]]
    } else {
        v
    }
}

fn random_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-12 {
            return to_upper_hemisphere(normalize(v));
        }
    }
}

fn separated(v: [f64; 3], set: &[[f64; 3]], min_angle_deg: f64) -> bool {
    set.iter()
        .all(|&u| line_angle_deg(u, v) >= min_angle_deg - 1e-9)
}

fn all_separated(set: &[[f64; 3]], min_angle_deg: f64) -> bool {
    (0..set.len()).all(|i| separated(set[i], &set[..i], min_angle_deg))
}

/// Spreads the free directions (`set[fixed..]`) apart by gradient descent on
/// an inverse-square repulsion between all lines and their antipodes.
fn relax(set: &mut [[f64; 3]], fixed: usize) {
    const ITERATIONS: usize = 4_000;
    let n = set.len();
    for it in 0..ITERATIONS {
        let step = 0.02 * (1.0 - it as f64 / ITERATIONS as f64) + 1e-4;
        let mut forces = vec![[0.0f64; 3]; n];
        for i in fixed..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                for sign in [1.0, -1.0] {
                    let d: [f64; 3] = std::array::from_fn(|a| set[i][a] - sign * set[j][a]);
                    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + 1e-12;
                    for a in 0..3 {
                        forces[i][a] += d[a] / (r2 * r2);
                    }
                }
            }
        }
        let max_force = forces[fixed..]
            .iter()
            .flat_map(|f| f.iter().map(|x| x.abs()))
            .fold(0.0f64, f64::max)
            .max(1.0);
        for i in fixed..n {
            let moved: [f64; 3] = std::array::from_fn(|a| set[i][a] + step * forces[i][a] / max_force);
            set[i] = normalize(moved);
        }
    }
    for v in set[fixed..].iter_mut() {
        *v = to_upper_hemisphere(*v);
    }
}

/// Draws `n` plane normals uniformly on the upper hemisphere such that every
/// pair of lines is at least `min_angle_deg` apart.
///
/// Directions are accepted one at a time by rejection. When sequential
/// rejection stalls (tight constraints such as six views at 60 degrees are
/// practically unreachable by random sequential addition) the current set is
/// completed with fresh draws and relaxed by repulsion, then re-checked.
pub fn generate_views(n: usize, seed: u64, min_angle_deg: f64, mode: ViewMode) -> Result<ViewSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of views must be >= 1".into()));
    }
    if !(0.0..=90.0).contains(&min_angle_deg) {
        return Err(Error::InfeasibleViews(format!(
            "minimum angle {min_angle_deg} must lie in [0, 90] degrees"
        )));
    }
    let fixed: Vec<[f64; 3]> = match mode {
        ViewMode::Random => Vec::new(),
        ViewMode::Canonical => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
            .into_iter()
            .take(n)
            .collect(),
    };
    if !all_separated(&fixed, min_angle_deg) {
        return Err(Error::InfeasibleViews(format!(
            "canonical axes violate minimum angle {min_angle_deg}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts = 0usize;
    loop {
        let mut set = fixed.clone();
        let mut stall = 0;
        while set.len() < n && stall < STALL_LIMIT {
            if attempts >= MAX_VIEW_ATTEMPTS {
                return Err(infeasible(n, min_angle_deg));
            }
            let v = random_direction(&mut rng);
            attempts += 1;
            if separated(v, &set, min_angle_deg) {
                set.push(v);
                stall = 0;
            } else {
                stall += 1;
            }
        }
        if set.len() == n {
            return Ok(ViewSet {
                views: set,
                seed,
                min_pairwise_angle_deg: min_angle_deg,
            });
        }

        while set.len() < n {
            set.push(random_direction(&mut rng));
            attempts += 1;
        }
        relax(&mut set, fixed.len());
        if all_separated(&set, min_angle_deg) {
            return Ok(ViewSet {
                views: set,
                seed,
                min_pairwise_angle_deg: min_angle_deg,
            });
        }
        if attempts >= MAX_VIEW_ATTEMPTS {
            return Err(infeasible(n, min_angle_deg));
        }
    }
}

fn infeasible(n: usize, min_angle_deg: f64) -> Error {
    Error::InfeasibleViews(format!(
        "could not place {n} views {min_angle_deg} degrees apart within {MAX_VIEW_ATTEMPTS} attempts"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(set: &ViewSet) {
        for v in &set.views {
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert!(v[2] >= 0.0);
        }
        for i in 0..set.views.len() {
            for j in 0..i {
                let angle = line_angle_deg(set.views[i], set.views[j]);
                assert!(angle >= set.min_pairwise_angle_deg - 1e-9, "{angle}");
            }
        }
    }

    #[test]
    fn canonical_three() {
        let set = generate_views(3, 0, 60.0, ViewMode::Canonical).unwrap();
        assert_eq!(set.views, vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_views(6, 42, 60.0, ViewMode::Random).unwrap();
        let b = generate_views(6, 42, 60.0, ViewMode::Random).unwrap();
        assert_eq!(a, b);
        let c = generate_views(6, 43, 60.0, ViewMode::Random).unwrap();
        assert_ne!(a.views, c.views);
    }

    #[test]
    fn six_views_sixty_degrees() {
        for seed in 0..5 {
            let set = generate_views(6, seed, 60.0, ViewMode::Random).unwrap();
            assert_eq!(set.views.len(), 6);
            check(&set);
        }
        check(&generate_views(6, 9, 50.0, ViewMode::Canonical).unwrap());
        // every component of a line 60 degrees from all three axes is at most 0.5
        assert!(generate_views(4, 9, 60.0, ViewMode::Canonical).is_err());
    }

    #[test]
    fn loose_constraint_uses_plain_rejection() {
        check(&generate_views(10, 1, 20.0, ViewMode::Random).unwrap());
    }

    #[test]
    fn impossible_constraint_errors() {
        // at most six lines in 3-D can be pairwise 60 degrees apart
        assert!(matches!(
            generate_views(7, 3, 60.0, ViewMode::Random),
            Err(Error::InfeasibleViews(_))
        ));
        assert!(generate_views(0, 3, 60.0, ViewMode::Random).is_err());
    }
}
