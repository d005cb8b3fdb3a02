//! Convexity consistency: how much of each category's convex hull (counted in
//! universe referents) the category actually covers.

use crate::error::{Error, Result};
use crate::hull::{convex_hull_with_tol, Hull};
use crate::model::{HardPartition, Universe};

/// Relative membership tolerance; scaled by the universe's coordinate extent.
pub const MEMBERSHIP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvexityOptions {
    /// Count achromatic grid chips (column 0). Ignored for universes without a grid.
    pub include_achromatic: bool,
}

impl Default for ConvexityOptions {
    fn default() -> Self {
        ConvexityOptions {
            include_achromatic: true,
        }
    }
}

fn tolerance(universe: &Universe) -> f64 {
    MEMBERSHIP_TOL * universe.coordinate_scale()
}

fn active(universe: &Universe, opts: &ConvexityOptions) -> Vec<bool> {
    match universe.grid() {
        Some(grid) if !opts.include_achromatic => grid.iter().map(|g| g.col != 0).collect(),
        _ => vec![true; universe.len()],
    }
}

/// Hull of a set of referents.
///
/// # Panics
/// If `referents` is empty.
pub fn referent_hull(universe: &Universe, referents: &[usize]) -> Hull {
    let pts: Vec<[f64; 3]> = referents.iter().map(|&t| *universe.coord(t)).collect();
    convex_hull_with_tol(&pts, tolerance(universe))
}

/// Number of universe referents lying in `hull`, boundary inclusive.
pub fn hull_membership_count(hull: &Hull, universe: &Universe) -> usize {
    let tol = tolerance(universe);
    universe.coords().iter().filter(|p| hull.contains(p, tol)).count()
}

fn consistency_of(universe: &Universe, ext: &[usize], mask: &[bool]) -> (usize, usize) {
    let hull = referent_hull(universe, ext);
    let tol = tolerance(universe);
    let members = universe
        .coords()
        .iter()
        .zip(mask)
        .filter(|(p, &on)| on && hull.contains(p, tol))
        .count();
    (ext.len(), members)
}

/// `|C(w)| / |co(C(w))|` for one word.
pub fn category_consistency(partition: &HardPartition, word: usize, universe: &Universe) -> Result<f64> {
    category_consistency_with(partition, word, universe, &ConvexityOptions::default())
}

pub fn category_consistency_with(
    partition: &HardPartition,
    word: usize,
    universe: &Universe,
    opts: &ConvexityOptions,
) -> Result<f64> {
    check_size(partition, universe)?;
    let mask = active(universe, opts);
    let ext: Vec<usize> = partition.extension(word)?.into_iter().filter(|&t| mask[t]).collect();
    if ext.is_empty() {
        return Err(Error::invalid(format!("word {word} has an empty extension")));
    }
    let (size, members) = consistency_of(universe, &ext, &mask);
    Ok(size as f64 / members as f64)
}

/// Size-weighted mean of category consistencies.
pub fn system_consistency(partition: &HardPartition, universe: &Universe) -> Result<f64> {
    system_consistency_with(partition, universe, &ConvexityOptions::default())
}

pub fn system_consistency_with(
    partition: &HardPartition,
    universe: &Universe,
    opts: &ConvexityOptions,
) -> Result<f64> {
    check_size(partition, universe)?;
    let mask = active(universe, opts);
    let mut covered = 0.0;
    let mut total = 0usize;
    for ext in partition.extensions() {
        let ext: Vec<usize> = ext.into_iter().filter(|&t| mask[t]).collect();
        if ext.is_empty() {
            continue;
        }
        let (size, members) = consistency_of(universe, &ext, &mask);
        covered += size as f64 * size as f64 / members as f64;
        total += size;
    }
    if total == 0 {
        return Err(Error::invalid("no referents left to score"));
    }
    Ok(covered / total as f64)
}

fn check_size(partition: &HardPartition, universe: &Universe) -> Result<()> {
    if partition.n() != universe.len() {
        return Err(Error::invalid(format!(
            "partition covers {} referents but the universe has {}",
            partition.n(),
            universe.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::approximate_universe;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Universe {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        Universe::from_rows(&rows).unwrap()
    }

    #[test]
    fn membership_counts() {
        let u = approximate_universe();
        let all: Vec<usize> = (0..u.len()).collect();
        assert_eq!(hull_membership_count(&referent_hull(&u, &all), &u), 330);
        for t in [0, 17, 200, 329] {
            assert_eq!(hull_membership_count(&referent_hull(&u, &[t]), &u), 1);
        }
        let l = line(&[0.0, 1.0, 2.0]);
        assert_eq!(hull_membership_count(&referent_hull(&l, &[0, 2]), &l), 3);
    }

    #[test]
    fn gapped_category_on_a_line() {
        let l = line(&[0.0, 1.0, 2.0]);
        let p = HardPartition::from_labels(&[0, 1, 0]);
        assert!((category_consistency(&p, 0, &l).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(category_consistency(&p, 1, &l).unwrap(), 1.0);
        assert!(category_consistency(&p, 2, &l).is_err());
        // (2·2/3 + 1·1) / 3
        assert!((system_consistency(&p, &l).unwrap() - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn interleaved_grid_partition_is_inconsistent() {
        let u = approximate_universe();
        let grid = u.grid().unwrap();
        // alternate hue columns between two words
        let labels: Vec<usize> = grid.iter().map(|g| (g.col % 2) as usize).collect();
        let p = HardPartition::from_labels(&labels);
        let s = system_consistency(&p, &u).unwrap();
        assert!(s < 0.9, "{s}");
        let one = HardPartition::from_labels(&vec![0; 330]);
        assert_eq!(system_consistency(&one, &u).unwrap(), 1.0);
    }

    #[test]
    fn achromatic_flag_drops_column_zero() {
        let u = approximate_universe();
        let grid = u.grid().unwrap();
        // achromatic chips named with the chromatic column-1 chips of rows B..I
        let labels: Vec<usize> = grid.iter().map(|g| usize::from(g.col > 1)).collect();
        let p = HardPartition::from_labels(&labels);
        let with = system_consistency(&p, &u).unwrap();
        let without = system_consistency_with(
            &p,
            &u,
            &ConvexityOptions {
                include_achromatic: false,
            },
        )
        .unwrap();
        assert!(without >= with);
        assert!(without <= 1.0);
    }

    /// Brute-force convex-combination check via Carathéodory: `z` is in the
    /// hull iff it lies in some simplex of at most four input points.
    fn in_hull_bruteforce(pts: &[[f64; 3]], z: &[f64; 3], tol: f64) -> bool {
        let n = pts.len();
        let in_simplex = |idx: &[usize]| -> bool {
            // least-squares barycentric solve by normal equations on the simplex edges
            let o = pts[idx[0]];
            let e: Vec<[f64; 3]> = idx[1..]
                .iter()
                .map(|&i| [pts[i][0] - o[0], pts[i][1] - o[1], pts[i][2] - o[2]])
                .collect();
            let r = [z[0] - o[0], z[1] - o[1], z[2] - o[2]];
            let m = e.len();
            let mut a = vec![vec![0.0; m + 1]; m];
            for i in 0..m {
                for j in 0..m {
                    a[i][j] = (0..3).map(|d| e[i][d] * e[j][d]).sum();
                }
                a[i][m] = (0..3).map(|d| e[i][d] * r[d]).sum();
            }
            // Gaussian elimination; degenerate simplices are skipped
            for c in 0..m {
                let piv = (c..m).max_by(|&x, &y| a[x][c].abs().partial_cmp(&a[y][c].abs()).unwrap()).unwrap();
                if a[piv][c].abs() < 1e-12 {
                    return false;
                }
                a.swap(c, piv);
                for rr in 0..m {
                    if rr != c {
                        let f = a[rr][c] / a[c][c];
                        for cc in c..=m {
                            a[rr][cc] -= f * a[c][cc];
                        }
                    }
                }
            }
            let lam: Vec<f64> = (0..m).map(|i| a[i][m] / a[i][i]).collect();
            let sum: f64 = lam.iter().sum();
            if lam.iter().any(|&l| l < -1e-9) || sum > 1.0 + 1e-9 {
                return false;
            }
            let mut p = o;
            for (l, ei) in lam.iter().zip(&e) {
                for d in 0..3 {
                    p[d] += l * ei[d];
                }
            }
            ((p[0] - z[0]).powi(2) + (p[1] - z[1]).powi(2) + (p[2] - z[2]).powi(2)).sqrt() <= tol
        };
        for a in 0..n {
            if in_simplex(&[a]) {
                return true;
            }
            for b in a + 1..n {
                if in_simplex(&[a, b]) {
                    return true;
                }
                for c in b + 1..n {
                    if in_simplex(&[a, b, c]) {
                        return true;
                    }
                    for d in c + 1..n {
                        if in_simplex(&[a, b, c, d]) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    #[test]
    fn membership_agrees_with_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut agree = 0;
        for case in 0..200 {
            let m = rng.gen_range(1..9);
            // mix full-rank, planar and collinear clouds
            let pts: Vec<[f64; 3]> = (0..m)
                .map(|_| {
                    let x = rng.gen_range(-1.0..1.0);
                    let y = rng.gen_range(-1.0..1.0);
                    match case % 3 {
                        0 => [x, y, rng.gen_range(-1.0..1.0)],
                        1 => [x, y, 0.5],
                        _ => [x, 2.0 * x, -x],
                    }
                })
                .collect();
            let hull = crate::hull::convex_hull(&pts);
            let z = if rng.gen_bool(0.5) {
                // random convex combination of inputs: must be inside
                let w: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = w.iter().sum();
                let mut z = [0.0; 3];
                for (p, wi) in pts.iter().zip(&w) {
                    for d in 0..3 {
                        z[d] += p[d] * wi / s;
                    }
                }
                z
            } else {
                [rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)]
            };
            let fast = hull.contains(&z, 1e-7);
            let slow = in_hull_bruteforce(&pts, &z, 1e-7);
            assert_eq!(fast, slow, "case {case}: {pts:?} {z:?}");
            agree += 1;
        }
        assert_eq!(agree, 200);
    }

    fn rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        // random unit quaternion
        let mut q = [0.0f64; 4];
        for v in &mut q {
            *v = rng.gen_range(-1.0..1.0);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / n);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn score_invariances(seed in 0u64..1000, k in 2usize..8) {
            let u = approximate_universe();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..u.len()).map(|_| rng.gen_range(0..k)).collect();
            let p = HardPartition::from_labels(&labels);
            let s = system_consistency(&p, &u).unwrap();
            prop_assert!(s > 0.0 && s <= 1.0);

            // relabel words
            let perm: Vec<usize> = (0..k).rev().collect();
            let relabeled = HardPartition::from_labels(&labels.iter().map(|&l| perm[l]).collect::<Vec<_>>());
            prop_assert!((system_consistency(&relabeled, &u).unwrap() - s).abs() < 1e-12);

            // rotate and translate the coordinates
            let r = rotation(&mut rng);
            let moved = u.map_coords(|c| {
                let mut o = [10.0, -3.0, 7.0];
                for i in 0..3 {
                    for j in 0..3 {
                        o[i] += r[i][j] * c[j];
                    }
                }
                o
            });
            prop_assert!((system_consistency(&p, &moved).unwrap() - s).abs() < 1e-9);

            // hull counts never fall below category sizes
            for (w, ext) in p.extensions().iter().enumerate() {
                let c = hull_membership_count(&referent_hull(&u, ext), &u);
                prop_assert!(c >= ext.len());
                let cc = category_consistency(&p, w, &u).unwrap();
                prop_assert_eq!(c == ext.len(), cc == 1.0);
            }
        }
    }
}
