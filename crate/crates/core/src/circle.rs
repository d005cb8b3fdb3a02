//! The angle domain: a non-convex optimal system under a direction-blind
//! similarity, and worlds in which a given convex system says nothing.

use std::f64::consts::TAU;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ib::{ba_fixed_point_with, beta_grid, compute_frontier, epsilon_of, BaOptions, FrontierOptions, IbSolution};
use crate::info::{accuracy, complexity, decoders, meaning_information, Tradeoff};
use crate::model::{mode_partition, HardPartition, MeaningModel, NamingSystem, Prior, Universe};

pub const DEFAULT_BINS: usize = 360;

/// `n` equally spaced angles `2πi/n` on `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleUniverse {
    angles: Vec<f64>,
}

impl CircleUniverse {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || n % 4 != 0 {
            return Err(Error::invalid(format!("bin count must be a positive multiple of 4, got {n}")));
        }
        Ok(CircleUniverse {
            angles: (0..n).map(|i| TAU * i as f64 / n as f64).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Bin index of an angle that lies on the grid.
    pub fn bin(&self, angle: f64) -> usize {
        ((angle / TAU * self.n() as f64).round() as usize) % self.n()
    }

    /// The bins as a one-dimensional universe (coordinate = angle).
    pub fn to_universe(&self) -> Universe {
        let rows: Vec<[f64; 1]> = self.angles.iter().map(|&a| [a]).collect();
        Universe::from_rows(&rows).expect("finite angles")
    }
}

/// `m_t(u) ∝ exp(|cos(u − t)|)` with a uniform prior.
///
/// The kernel is evaluated on the bin offset reduced modulo a half turn, so
/// antipodal rows are bitwise identical rather than equal up to rounding.
pub fn similarity_meanings(universe: &CircleUniverse) -> MeaningModel {
    let n = universe.n();
    let half = n / 2;
    let kernel: Vec<f64> = (0..half)
        .map(|d| (TAU * d as f64 / n as f64).cos().abs().exp())
        .collect();
    let total: f64 = (0..n).map(|d| kernel[d % half]).sum();
    let m = Array2::from_shape_fn((n, n), |(t, u)| kernel[(u + n - t) % n % half] / total);
    MeaningModel::new(m, Prior::uniform(n)).expect("rows are normalized")
}

/// Maximal runs of consecutive bins per word on the segment `[0, 2π)`.
pub fn runs_per_word(partition: &HardPartition) -> Vec<usize> {
    let mut runs = vec![0; partition.k()];
    let a = partition.assignment();
    for (i, &w) in a.iter().enumerate() {
        if i == 0 || a[i - 1] != w {
            runs[w] += 1;
        }
    }
    runs
}

/// Whether every category is one contiguous run of bins.
pub fn is_convex_on_segment(partition: &HardPartition) -> bool {
    runs_per_word(partition).iter().all(|&r| r == 1)
}

/// What the search saw at one beta of the window.
#[derive(Debug, Clone, Serialize)]
pub struct ScannedBeta {
    pub beta: f64,
    /// Words used by the annealed solution's mode partition.
    pub k: usize,
    /// Two-word reduction, when one was tried: runs per word and its
    /// deviation from the window frontier in bits.
    pub two_word_runs: Option<Vec<usize>>,
    pub two_word_epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NonconvexOptimum {
    pub solution: IbSolution,
    pub partition: HardPartition,
    pub runs: Vec<usize>,
    /// `max_w |q(w|m_0) − q(w|m_π)|`
    pub antipodal_gap: f64,
    /// Deviation of the solution from the window frontier (bits).
    pub epsilon: f64,
    pub scanned: Vec<ScannedBeta>,
}

/// A reduced solution counts as optimal when it is this close to the frontier.
pub const OPTIMALITY_TOL: f64 = 1e-6;

/// Collapse an encoder to two words: seed with the two words whose decoders
/// are farthest apart (L1) and send every other word to the nearer seed.
/// `None` when fewer than two words are in use.
pub fn two_word_reduction(meanings: &MeaningModel, encoder: &NamingSystem) -> Option<NamingSystem> {
    let dec = decoders(encoder, meanings);
    let used: Vec<usize> = (0..encoder.k())
        .filter(|&w| encoder.matrix().column(w).sum() > 0.0)
        .collect();
    if used.len() < 2 {
        return None;
    }
    let dist = |a: usize, b: usize| -> f64 { dec.row(a).iter().zip(dec.row(b)).map(|(x, y)| (x - y).abs()).sum() };
    let mut seeds = (used[0], used[1]);
    let mut best = -1.0;
    for (i, &a) in used.iter().enumerate() {
        for &b in &used[i + 1..] {
            let d = dist(a, b);
            if d > best {
                best = d;
                seeds = (a, b);
            }
        }
    }
    if best <= 0.0 {
        return None;
    }
    let q = encoder.matrix();
    let mut out = Array2::zeros((q.nrows(), 2));
    for &w in &used {
        let g = usize::from(dist(w, seeds.1) < dist(w, seeds.0));
        for t in 0..q.nrows() {
            out[[t, g]] += q[[t, w]];
        }
    }
    NamingSystem::from_matrix(out).ok()
}

/// Objectives above this count as the one-word solution.
const SPLIT_TOL: f64 = -1e-12;
const REFINE_POINTS: usize = 41;

/// Anneal over `betas` (increasing) and take the lowest beta at which the
/// annealed solution uses more than one word. Reduce that solution to two
/// words and keep annealing the reduction downward, first over the window
/// and then over a fine grid where it merges into one word, since the
/// many-word annealing loses the split early. The lowest-beta two-word
/// solution that still splits is polished and accepted if both categories
/// span several runs and it is optimal against the window frontier.
pub fn find_nonconvex_optimum(universe: &CircleUniverse, betas: &[f64]) -> Result<NonconvexOptimum> {
    let meanings = similarity_meanings(universe);
    // objectives are tiny near the first split, so anneal far tighter than
    // the colour frontier needs
    let mut fopts = FrontierOptions::default();
    fopts.ba.tol = 1e-13;
    let frontier = compute_frontier(&meanings, betas, &fopts)?;
    let encoders = frontier.encoders.as_ref().expect("encoders kept");
    let mut scanned: Vec<ScannedBeta> = frontier
        .points
        .iter()
        .zip(encoders)
        .map(|(p, e)| ScannedBeta {
            beta: p.beta,
            k: mode_partition(e).k(),
            two_word_runs: None,
            two_word_epsilon: None,
        })
        .collect();
    let opts = BaOptions {
        tol: 1e-14,
        encoder_tol: 1e-12,
        max_iters: 20_000,
    };
    let epsilon = |s: &IbSolution| {
        epsilon_of(
            Tradeoff {
                complexity: s.complexity,
                accuracy: s.accuracy,
            },
            &frontier,
        )
        .epsilon
    };
    let split = scanned.iter().position(|s| s.k >= 2);
    let mut best: Option<IbSolution> = None;
    if let Some(init) = split.and_then(|i| two_word_reduction(&meanings, &encoders[i])) {
        let i = split.expect("checked");
        let mut current = init;
        let record = |sol: &IbSolution, scanned: &mut Vec<ScannedBeta>| {
            let part = mode_partition(&sol.encoder);
            scanned.push(ScannedBeta {
                beta: sol.beta,
                k: part.k(),
                two_word_runs: Some(runs_per_word(&part)),
                two_word_epsilon: Some(epsilon(sol)),
            });
        };
        let mut collapsed_at = None;
        for j in (0..=i).rev() {
            let sol = ba_fixed_point_with(&meanings, betas[j], &current, &opts, None);
            record(&sol, &mut scanned);
            if sol.objective > SPLIT_TOL {
                collapsed_at = Some(j);
                break;
            }
            current = sol.encoder.clone();
            best = Some(sol);
        }
        if let (Some(j), Some(_)) = (collapsed_at, &best) {
            let fine = beta_grid(betas[j], betas[j + 1], REFINE_POINTS)?;
            for &beta in fine[1..REFINE_POINTS - 1].iter().rev() {
                let sol = ba_fixed_point_with(&meanings, beta, &current, &opts, None);
                record(&sol, &mut scanned);
                if sol.objective > SPLIT_TOL {
                    break;
                }
                current = sol.encoder.clone();
                best = Some(sol);
            }
        }
    }
    scanned.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let accepted = best.and_then(|solution| {
        let partition = mode_partition(&solution.encoder);
        let runs = runs_per_word(&partition);
        let eps = epsilon(&solution);
        (partition.k() == 2 && runs.iter().all(|&r| r >= 2) && eps < OPTIMALITY_TOL)
            .then_some((solution, partition, runs, eps))
    });
    let Some((solution, partition, runs, epsilon)) = accepted else {
        let summary: Vec<String> = scanned
            .iter()
            .map(|s| match (&s.two_word_runs, s.two_word_epsilon) {
                (Some(r), Some(eps)) => format!("{:.4}:two-word runs={:?} eps={:.2e}", s.beta, r, eps),
                _ => format!("{:.4}:k={}", s.beta, s.k),
            })
            .collect();
        return Err(Error::Construction(format!(
            "no non-convex two-word optimum in the window; scanned {}",
            summary.join(", ")
        )));
    };
    let q = solution.encoder.matrix();
    let opposite = universe.n() / 2;
    let antipodal_gap = (0..q.ncols())
        .map(|w| (q[[0, w]] - q[[opposite, w]]).abs())
        .fold(0.0, f64::max);
    Ok(NonconvexOptimum {
        solution,
        partition,
        runs,
        antipodal_gap,
        epsilon,
        scanned,
    })
}

/// Encoder as CSV: `angle` then one `q(w|angle)` column per word.
pub fn write_encoder_csv(universe: &CircleUniverse, q: &Array2<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["angle".to_string()];
    header.extend((0..q.ncols()).map(|j| format!("w{j}")));
    w.write_record(&header)?;
    for (t, a) in universe.angles().iter().enumerate() {
        let mut row = vec![a.to_string()];
        row.extend(q.row(t).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `Σ_w (|C(w) ∩ C_A| / A) log2(A / |C(w) ∩ C_A|)` for a hard partition and a
/// set of bins `c_a`, the accuracy under certain speakers and a uniform prior
/// on `c_a`.
pub fn closed_form_accuracy(partition: &HardPartition, c_a: &[usize]) -> f64 {
    let a = c_a.len() as f64;
    let mut overlap = vec![0usize; partition.k()];
    for &t in c_a {
        overlap[partition.assignment()[t]] += 1;
    }
    overlap
        .iter()
        .filter(|&&o| o > 0)
        .map(|&o| (o as f64 / a) * (a / o as f64).log2())
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem2Result {
    pub k: usize,
    /// Bins of the sub-segment carrying all prior mass.
    pub c_a: Vec<usize>,
    #[serde(skip)]
    pub prior: Prior,
    #[serde(skip)]
    pub q: HardPartition,
    pub accuracy_p: f64,
    pub accuracy_q: f64,
    pub closed_form_p: f64,
    pub closed_form_q: f64,
    /// Under the count-of-terms reading both systems use `k` terms; under
    /// the information reading `P` also has zero complexity.
    pub complexity_p: f64,
    pub complexity_q: f64,
    pub cost_p: f64,
    pub cost_q: f64,
}

/// Build the world in which the convex partition `p` is uninformative: speaker
/// certainty, and a uniform prior on a sub-segment `C_A` of the largest
/// category of `p` (its length is `a_fraction` of that category, rounded down
/// to a multiple of `k`, centered). `Q` splits `C_A` into `k` equal runs and
/// extends them convexly to the rest of the segment.
pub fn theorem2_construction(universe: &CircleUniverse, p: &HardPartition, a_fraction: f64) -> Result<Theorem2Result> {
    let n = universe.n();
    if p.n() != n {
        return Err(Error::invalid("partition and universe differ in size"));
    }
    if !is_convex_on_segment(p) {
        return Err(Error::invalid("partition is not convex on the segment"));
    }
    if !(a_fraction > 0.0 && a_fraction <= 1.0) {
        return Err(Error::invalid(format!("A fraction must be in (0, 1], got {a_fraction}")));
    }
    let k = p.k();
    let ext = p.extensions();
    let largest = (0..k).fold(0, |b, w| if ext[w].len() > ext[b].len() { w } else { b });
    let len = ext[largest].len();
    let a = ((a_fraction * len as f64).floor() as usize) / k * k;
    if a == 0 {
        return Err(Error::Construction(format!(
            "a sub-segment split into {k} equal parts does not fit in a category of {len} bins"
        )));
    }
    let start = ext[largest][0] + (len - a) / 2;
    let c_a: Vec<usize> = (start..start + a).collect();

    let mut weights = vec![0.0; n];
    for &t in &c_a {
        weights[t] = 1.0;
    }
    let prior = Prior::from_weights(weights)?;
    let meanings = MeaningModel::identity(prior.clone());
    let piece = a / k;
    let labels: Vec<usize> = (0..n)
        .map(|t| {
            if t < start {
                0
            } else {
                ((t - start) / piece).min(k - 1)
            }
        })
        .collect();
    let q = HardPartition::from_labels(&labels);
    let (sp, sq) = (p.to_system(), q.to_system());
    let imu = meaning_information(&meanings);
    let accuracy_p = accuracy(&sp, &meanings);
    let accuracy_q = accuracy(&sq, &meanings);
    Ok(Theorem2Result {
        k,
        closed_form_p: closed_form_accuracy(p, &c_a),
        closed_form_q: closed_form_accuracy(&q, &c_a),
        c_a,
        complexity_p: complexity(&sp, &meanings),
        complexity_q: complexity(&sq, &meanings),
        cost_p: imu - accuracy_p,
        cost_q: imu - accuracy_q,
        accuracy_p,
        accuracy_q,
        prior,
        q,
    })
}

/// A random convex `k`-partition of the segment: `k − 1` distinct cut points.
pub fn random_convex_partition(n: usize, k: usize, rng: &mut impl rand::Rng) -> Result<HardPartition> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k must be in 1..={n}")));
    }
    let mut cuts = rand::seq::index::sample(rng, n - 1, k - 1).into_vec();
    cuts.iter_mut().for_each(|c| *c += 1);
    cuts.sort_unstable();
    let labels: Vec<usize> = (0..n).map(|t| cuts.iter().filter(|&&c| c <= t).count()).collect();
    Ok(HardPartition::from_labels(&labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn antipodal_meanings_coincide() {
        let c = CircleUniverse::new(DEFAULT_BINS).unwrap();
        let m = similarity_meanings(&c);
        let row = |a: f64| m.row(c.bin(a)).to_vec();
        let pi = std::f64::consts::PI;
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
        assert!(close(&row(0.0), &row(pi)));
        assert!(close(&row(pi / 2.0), &row(1.5 * pi)));
        assert!(!close(&row(0.0), &row(pi / 2.0)));
        assert!(!close(&row(0.3), &row(1.1)));
        // symmetric about the row's own angle
        for t in [0, 37, 200] {
            for d in 1..180 {
                let n = c.n();
                assert!((m.matrix()[[t, (t + d) % n]] - m.matrix()[[t, (t + n - d) % n]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn run_counting() {
        let p = HardPartition::from_labels(&[0, 0, 1, 1, 0, 2]);
        assert_eq!(runs_per_word(&p), vec![2, 1, 1]);
        assert!(!is_convex_on_segment(&p));
        assert!(is_convex_on_segment(&HardPartition::from_labels(&[0, 0, 1, 2, 2])));
        assert!(CircleUniverse::new(10).is_err());
    }

    #[test]
    fn theorem2_examples() {
        let c = CircleUniverse::new(DEFAULT_BINS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in [2, 4] {
            let p = random_convex_partition(c.n(), k, &mut rng).unwrap();
            let r = theorem2_construction(&c, &p, 1.0).unwrap();
            assert!(r.accuracy_p.abs() < 1e-12);
            assert!(r.complexity_p.abs() < 1e-12);
            assert!((r.accuracy_q - (k as f64).log2()).abs() < 1e-9);
            assert!((r.closed_form_q - r.accuracy_q).abs() < 1e-9);
            assert!(is_convex_on_segment(&r.q));
        }
        let bad = HardPartition::from_labels(&(0..360).map(|t| t % 2).collect::<Vec<_>>());
        assert!(theorem2_construction(&c, &bad, 1.0).is_err());
        let tiny = CircleUniverse::new(4).unwrap();
        let p4 = HardPartition::from_labels(&[0, 1, 2, 3]);
        assert!(matches!(theorem2_construction(&tiny, &p4, 1.0), Err(Error::Construction(_))));
    }

    #[test]
    fn closed_form_matches_engine_for_random_q() {
        let c = CircleUniverse::new(DEFAULT_BINS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_convex_partition(c.n(), 3, &mut rng).unwrap();
        let r = theorem2_construction(&c, &p, 0.8).unwrap();
        let mm = MeaningModel::identity(r.prior.clone());
        for _ in 0..50 {
            let k = rand::Rng::gen_range(&mut rng, 1..12);
            let q = random_convex_partition(c.n(), k, &mut rng).unwrap();
            let engine = accuracy(&q.to_system(), &mm);
            assert!((closed_form_accuracy(&q, &r.c_a) - engine).abs() < 1e-9);
        }
    }

    /// Linear-stability oracle: the one-word solution stops being optimal at
    /// `β_c = 1 / λ`, where `λ = (ĥ(2) / ĥ(0))²` for the circulant kernel `h`.
    fn critical_beta(n: usize) -> f64 {
        let m = similarity_meanings(&CircleUniverse::new(n).unwrap());
        let row = m.row(0);
        let h2: f64 = row.iter().enumerate().map(|(d, h)| h * (2.0 * TAU * d as f64 / n as f64).cos()).sum();
        1.0 / (h2 * h2)
    }

    fn cos2_split(c: &CircleUniverse) -> NamingSystem {
        let q = Array2::from_shape_fn((c.n(), 2), |(t, w)| {
            let x = 0.5 + 0.2 * (2.0 * c.angles()[t]).cos();
            if w == 0 {
                x
            } else {
                1.0 - x
            }
        });
        NamingSystem::from_matrix(q).unwrap()
    }

    #[test]
    fn split_appears_at_the_stability_threshold() {
        let c = CircleUniverse::new(72).unwrap();
        let m = similarity_meanings(&c);
        let bc = critical_beta(72);
        assert!(bc > 20.0 && bc < 30.0, "{bc}");
        let opts = BaOptions {
            tol: 1e-15,
            encoder_tol: 1e-13,
            max_iters: 100_000,
        };
        let below = ba_fixed_point_with(&m, 0.97 * bc, &cos2_split(&c), &opts, None);
        assert!(below.objective.abs() < 1e-10, "{}", below.objective);
        let above = ba_fixed_point_with(&m, 1.03 * bc, &cos2_split(&c), &opts, None);
        assert!(above.objective < -1e-7);
        let part = mode_partition(&above.encoder);
        assert_eq!(part.k(), 2);
        assert!(!is_convex_on_segment(&part));
    }

    #[test]
    fn window_below_threshold_reports_scanned_betas() {
        let c = CircleUniverse::new(72).unwrap();
        let betas = beta_grid(5.0, 15.0, 11).unwrap();
        match find_nonconvex_optimum(&c, &betas) {
            Err(Error::Construction(msg)) => assert!(msg.contains("5.0000:k=1") && msg.contains("15.0000:k=1")),
            other => panic!("expected a construction failure, got {:?}", other.map(|o| o.solution.beta)),
        }
    }

    #[test]
    fn finds_split_optimum_above_threshold() {
        let c = CircleUniverse::new(72).unwrap();
        let bc = critical_beta(72);
        let betas = beta_grid(0.5 * bc, 1.2 * bc, 31).unwrap();
        let found = find_nonconvex_optimum(&c, &betas).unwrap();
        assert!(found.solution.beta > bc);
        assert_eq!(found.partition.k(), 2);
        assert!(found.runs.iter().all(|&r| r >= 2));
        assert!(found.epsilon < OPTIMALITY_TOL);
        assert_eq!(found.antipodal_gap, 0.0);
    }

    #[test]
    fn two_word_reduction_groups_by_decoder() {
        let c = CircleUniverse::new(72).unwrap();
        let m = similarity_meanings(&c);
        assert!(two_word_reduction(&m, &NamingSystem::single_word(72)).is_none());
        // four words, two pairs of duplicates
        let base = cos2_split(&c);
        let q = Array2::from_shape_fn((72, 4), |(t, w)| base.matrix()[[t, w / 2]] / 2.0);
        let r = two_word_reduction(&m, &NamingSystem::from_matrix(q).unwrap()).unwrap();
        assert_eq!(r.k(), 2);
        let same = (0..72).all(|t| (r.matrix()[[t, 0]] - base.matrix()[[t, 0]]).abs() < 1e-12)
            || (0..72).all(|t| (r.matrix()[[t, 0]] - base.matrix()[[t, 1]]).abs() < 1e-12);
        assert!(same);
    }
}
