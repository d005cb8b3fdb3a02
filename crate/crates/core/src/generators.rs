//! Generators of perfectly convex (Voronoi) color naming systems, searching
//! for convex systems that are far from efficient.
//!
//! Two searches are provided: greedy exemplar swapping from a random start,
//! and deterministic agglomerative merging of centroids. Both score hard
//! Voronoi encoders under the same meaning model used everywhere else.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convexity::system_consistency;
use crate::error::{Error, Result};
use crate::ib::{epsilon_of, Frontier};
use crate::info::{meaning_information, Tradeoff};
use crate::model::{sq_dist, HardPartition, MeaningModel, Universe};

type P3 = [f64; 3];

/// Improvements smaller than this (bits) are treated as ties.
const IMPROVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimize" | "min" => Ok(Direction::Minimize),
            "maximize" | "max" => Ok(Direction::Maximize),
            _ => Err(Error::invalid(format!("unknown direction {s:?} (minimize|maximize)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Greedy,
    Agglomerative,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Greedy => "greedy",
            Algorithm::Agglomerative => "agglomerative",
        })
    }
}

/// One recorded system of a search trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub k_target: usize,
    /// Exemplars (or centroids) winning at least one referent.
    pub k_realized: usize,
    /// All exemplars in slot order; slot order breaks distance ties.
    pub exemplars: Vec<P3>,
    pub complexity_bits: f64,
    pub accuracy_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrace {
    pub algorithm: Algorithm,
    pub seed: Option<u64>,
    pub records: Vec<TraceRecord>,
    pub converged: bool,
}

/// Nearest exemplar per referent, ties to the lowest exemplar index.
fn nearest(universe: &Universe, exemplars: &[P3]) -> Vec<usize> {
    universe
        .coords()
        .iter()
        .map(|x| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, e) in exemplars.iter().enumerate() {
                let d = sq_dist(x, e);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Assign every referent to its nearest exemplar (Euclidean), ties to the
/// lowest exemplar index. Exemplars winning nothing are dropped.
pub fn voronoi_partition(exemplars: &[P3], universe: &Universe) -> Result<HardPartition> {
    if exemplars.is_empty() {
        return Err(Error::invalid("no exemplars"));
    }
    Ok(HardPartition::from_labels(&nearest(universe, exemplars)))
}

/// Number of centroids nearest to at least one referent.
pub fn count_categories(centroids: &[P3], universe: &Universe) -> Result<usize> {
    Ok(voronoi_partition(centroids, universe)?.k())
}

/// Scores hard encoders by their word/referent joint rows
/// `J(w, u) = Σ_{t ∈ w} p(t) m_t(u)`.
struct HardScorer<'a> {
    meanings: &'a MeaningModel,
    /// `p(t) m_t(u)`
    weighted: Vec<Vec<f64>>,
    /// `H(U)` in bits.
    h_u: f64,
}

fn xlog2(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

impl<'a> HardScorer<'a> {
    fn new(meanings: &'a MeaningModel) -> Self {
        let p = meanings.prior().as_slice();
        let weighted = (0..meanings.n())
            .map(|t| meanings.row(t).iter().map(|m| m * p[t]).collect())
            .collect();
        let h_u = -meanings.marginal_u().iter().map(|&x| xlog2(x)).sum::<f64>();
        HardScorer {
            meanings,
            weighted,
            h_u,
        }
    }

    fn prior(&self, t: usize) -> f64 {
        self.meanings.prior().as_slice()[t]
    }

    /// `Σ_u J log J − q log q` for one word, with `q = Σ_u J`.
    fn row_term(row: &[f64], q: f64) -> f64 {
        row.iter().map(|&j| xlog2(j)).sum::<f64>() - xlog2(q)
    }
}

/// Voronoi system over a slot-indexed exemplar list, with the per-word state
/// needed to score single exemplar replacements incrementally.
struct VoronoiState<'s, 'a> {
    scorer: &'s HardScorer<'a>,
    universe: &'s Universe,
    centroids: Vec<P3>,
    alive: Vec<bool>,
    assign: Vec<usize>,
    /// Three nearest live slots per referent as `(slot, squared distance)`.
    top: Vec<[(usize, f64); 3]>,
    counts: Vec<usize>,
    mass: Vec<f64>,
    rows: Vec<Vec<f64>>,
    terms: Vec<f64>,
}

struct Candidate {
    accuracy: f64,
    // only the oracle tests read it; the searches rank by accuracy
    #[cfg_attr(not(test), allow(dead_code))]
    complexity: f64,
    realized: usize,
}

const NONE: (usize, f64) = (usize::MAX, f64::INFINITY);

fn closer(a: (usize, f64), b: (usize, f64)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && a.0 < b.0)
}

impl<'s, 'a> VoronoiState<'s, 'a> {
    fn new(scorer: &'s HardScorer<'a>, universe: &'s Universe, centroids: Vec<P3>) -> Self {
        let m = centroids.len();
        let mut s = VoronoiState {
            scorer,
            universe,
            alive: vec![true; m],
            centroids,
            assign: Vec::new(),
            top: Vec::new(),
            counts: Vec::new(),
            mass: Vec::new(),
            rows: Vec::new(),
            terms: Vec::new(),
        };
        s.rebuild();
        s
    }

    fn rebuild(&mut self) {
        let n = self.universe.len();
        let m = self.centroids.len();
        self.top = self
            .universe
            .coords()
            .iter()
            .map(|x| {
                let mut top = [NONE; 3];
                for (i, c) in self.centroids.iter().enumerate() {
                    if !self.alive[i] {
                        continue;
                    }
                    let mut cand = (i, sq_dist(x, c));
                    for slot in top.iter_mut() {
                        if closer(cand, *slot) {
                            std::mem::swap(slot, &mut cand);
                        }
                    }
                }
                top
            })
            .collect();
        self.assign = self.top.iter().map(|t| t[0].0).collect();
        self.counts = vec![0; m];
        self.mass = vec![0.0; m];
        self.rows = vec![vec![0.0; n]; m];
        for t in 0..n {
            let w = self.assign[t];
            self.counts[w] += 1;
            self.mass[w] += self.scorer.prior(t);
            for (r, x) in self.rows[w].iter_mut().zip(&self.scorer.weighted[t]) {
                *r += x;
            }
        }
        self.terms = (0..m)
            .map(|w| HardScorer::row_term(&self.rows[w], self.mass[w]))
            .collect();
    }

    fn realized(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    fn accuracy(&self) -> f64 {
        (self.terms.iter().sum::<f64>() + self.scorer.h_u).max(0.0)
    }

    fn complexity(&self) -> f64 {
        -self.mass.iter().map(|&q| xlog2(q)).sum::<f64>()
    }

    fn live_centroids(&self) -> Vec<P3> {
        self.centroids
            .iter()
            .zip(&self.alive)
            .filter(|(_, a)| **a)
            .map(|(c, _)| *c)
            .collect()
    }

    /// Score the system where `removed` slots are retired and point `c`
    /// occupies slot `slot` (one of `removed`).
    fn candidate(&self, removed: &[usize], slot: usize, c: &P3) -> Candidate {
        // (slot, count delta, mass delta, moved referents in, moved out)
        let mut touched: Vec<(usize, isize, f64, Vec<usize>, Vec<usize>)> = Vec::new();
        let mut touch = |w: usize, t: usize, incoming: bool, p: f64| {
            let pos = match touched.iter().position(|e| e.0 == w) {
                Some(i) => i,
                None => {
                    touched.push((w, 0, 0.0, Vec::new(), Vec::new()));
                    touched.len() - 1
                }
            };
            let e = &mut touched[pos];
            if incoming {
                e.1 += 1;
                e.2 += p;
                e.3.push(t);
            } else {
                e.1 -= 1;
                e.2 -= p;
                e.4.push(t);
            }
        };
        for (t, x) in self.universe.coords().iter().enumerate() {
            let old = self.assign[t];
            let new_c = (slot, sq_dist(x, c));
            let new = if removed.contains(&old) {
                let other = self.top[t]
                    .iter()
                    .copied()
                    .find(|e| e.0 != usize::MAX && !removed.contains(&e.0))
                    .unwrap_or(NONE);
                if closer(new_c, other) {
                    slot
                } else {
                    other.0
                }
            } else if closer(new_c, self.top[t][0]) {
                slot
            } else {
                old
            };
            if new != old {
                let p = self.scorer.prior(t);
                touch(old, t, false, p);
                touch(new, t, true, p);
            }
        }
        let mut accuracy = self.terms.iter().sum::<f64>() + self.scorer.h_u;
        let mut complexity = self.complexity();
        let mut realized = self.realized() as isize;
        for (w, dc, dm, incoming, outgoing) in &touched {
            let old_count = self.counts[*w] as isize;
            let new_count = old_count + dc;
            realized += (new_count > 0) as isize - (old_count > 0) as isize;
            let mass = self.mass[*w] + dm;
            let term = if new_count == 0 {
                0.0
            } else {
                let mut row = self.rows[*w].clone();
                for &t in incoming {
                    for (r, x) in row.iter_mut().zip(&self.scorer.weighted[t]) {
                        *r += x;
                    }
                }
                for &t in outgoing {
                    for (r, x) in row.iter_mut().zip(&self.scorer.weighted[t]) {
                        *r -= x;
                    }
                }
                HardScorer::row_term(&row, mass)
            };
            accuracy += term - self.terms[*w];
            complexity += xlog2(self.mass[*w]) - xlog2(if new_count == 0 { 0.0 } else { mass });
        }
        Candidate {
            accuracy: accuracy.max(0.0),
            complexity: complexity.max(0.0),
            realized: realized as usize,
        }
    }

    fn apply(&mut self, removed: &[usize], slot: usize, c: P3) {
        for &r in removed {
            self.alive[r] = false;
        }
        self.alive[slot] = true;
        self.centroids[slot] = c;
        self.rebuild();
    }
}

fn record(state: &VoronoiState<'_, '_>, step: usize, k_target: usize, exemplars: Vec<P3>) -> TraceRecord {
    TraceRecord {
        step,
        k_target,
        k_realized: state.realized(),
        exemplars,
        complexity_bits: state.complexity(),
        accuracy_bits: state.accuracy(),
    }
}

/// Greedy exemplar swapping from a seeded random `k`-subset of referents.
///
/// Each sweep visits the exemplar slots in shuffled order and, per slot,
/// applies the best swap with a non-exemplar referent if it strictly improves
/// accuracy in `direction` (ties to the lowest referent). Every applied swap
/// is recorded. Stops after a sweep without swaps (`converged`) or after
/// `max_iters` sweeps.
///
/// The generator is ChaCha8 seeded with `seed`, on stream `k`, so runs for
/// different `k` with the same seed are independent.
pub fn greedy_swap_search(
    universe: &Universe,
    meanings: &MeaningModel,
    k: usize,
    max_iters: usize,
    seed: u64,
    direction: Direction,
) -> Result<GeneratorTrace> {
    let n = universe.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k must be in 1..={n}, got {k}")));
    }
    if meanings.n() != n {
        return Err(Error::invalid("meaning model and universe differ in size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut chips = rand::seq::index::sample(&mut rng, n, k).into_vec();

    let scorer = HardScorer::new(meanings);
    let coords = |chips: &[usize]| chips.iter().map(|&c| *universe.coord(c)).collect::<Vec<_>>();
    let mut state = VoronoiState::new(&scorer, universe, coords(&chips));
    let mut records = vec![record(&state, 0, k, coords(&chips))];
    let better = |a: f64, b: f64| match direction {
        Direction::Minimize => a < b - IMPROVE_TOL,
        Direction::Maximize => a > b + IMPROVE_TOL,
    };

    let mut converged = false;
    for _ in 0..max_iters {
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut swapped = false;
        for slot in order {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..n {
                if chips.contains(&c) {
                    continue;
                }
                let cand = state.candidate(&[slot], slot, universe.coord(c));
                if best.map_or(true, |(_, a)| better(cand.accuracy, a)) {
                    best = Some((c, cand.accuracy));
                }
            }
            if let Some((c, acc)) = best {
                if better(acc, state.accuracy()) {
                    chips[slot] = c;
                    state.apply(&[slot], slot, *universe.coord(c));
                    records.push(record(&state, records.len(), k, coords(&chips)));
                    swapped = true;
                }
            }
        }
        if !swapped {
            converged = true;
            break;
        }
    }
    Ok(GeneratorTrace {
        algorithm: Algorithm::Greedy,
        seed: Some(seed),
        records,
        converged,
    })
}

/// Agglomerative merging down to `min_k` categories (3 in the standard run).
///
/// Starts with every referent as a centroid. Each step tries every pair of
/// centroids replaced by their mean (kept in the lower slot) and keeps the
/// lowest-accuracy candidate whose realized category count is one less than
/// the current count; ties go to the lowest pair. When no pair reaches that
/// count, the closest lower count is taken instead, with a warning. Centroids
/// that stop winning referents stay in the pool. One record per realized
/// count reached.
pub fn agglomerative_merge(universe: &Universe, meanings: &MeaningModel, min_k: usize) -> Result<GeneratorTrace> {
    if meanings.n() != universe.len() {
        return Err(Error::invalid("meaning model and universe differ in size"));
    }
    let scorer = HardScorer::new(meanings);
    let mut state = VoronoiState::new(&scorer, universe, universe.coords().to_vec());
    let mut records = vec![record(&state, 0, state.realized(), state.live_centroids())];
    let mut step = 0;
    while state.realized() > min_k.max(1) && state.alive.iter().filter(|&&a| a).count() > 1 {
        step += 1;
        let current = state.realized();
        let target = current - 1;
        let live: Vec<usize> = (0..state.centroids.len()).filter(|&i| state.alive[i]).collect();
        // Rank: exact target first, then the largest count below it, then
        // no change; within a rank, lowest accuracy, then lowest pair.
        let rank = |realized: usize| -> (usize, usize) {
            if realized == target {
                (0, 0)
            } else if realized < target {
                (1, target - realized)
            } else {
                (2, realized - target)
            }
        };
        type Choice = ((usize, usize), f64, (usize, usize), usize);
        let pick = |a: Choice, b: Choice| -> Choice {
            let ka = (a.0, a.2);
            let kb = (b.0, b.2);
            if a.0 != b.0 {
                return if a.0 < b.0 { a } else { b };
            }
            if a.1 != b.1 {
                return if a.1 < b.1 { a } else { b };
            }
            if ka <= kb {
                a
            } else {
                b
            }
        };
        let best = live
            .par_iter()
            .enumerate()
            .flat_map_iter(|(a, &i)| live[a + 1..].iter().map(move |&j| (i, j)))
            .map(|(i, j)| {
                let (ci, cj) = (state.centroids[i], state.centroids[j]);
                let c = [(ci[0] + cj[0]) / 2.0, (ci[1] + cj[1]) / 2.0, (ci[2] + cj[2]) / 2.0];
                let cand = state.candidate(&[i, j], i, &c);
                (rank(cand.realized), cand.accuracy, (i, j), cand.realized)
            })
            .reduce_with(pick)
            .expect("at least two live centroids");
        let ((class, _), _, (i, j), realized) = best;
        if class != 0 {
            log::warn!("merge step {step}: no pair reaches {target} categories; moving to {realized}");
        }
        let (ci, cj) = (state.centroids[i], state.centroids[j]);
        state.apply(
            &[i, j],
            i,
            [(ci[0] + cj[0]) / 2.0, (ci[1] + cj[1]) / 2.0, (ci[2] + cj[2]) / 2.0],
        );
        if state.realized() < current {
            records.push(record(&state, step, target, state.live_centroids()));
        }
    }
    Ok(GeneratorTrace {
        algorithm: Algorithm::Agglomerative,
        seed: None,
        records,
        converged: true,
    })
}

/// Greedy searches for every `(k, seed)` combination, run in parallel;
/// traces come back ordered by `k`, then seed.
pub fn greedy_schedule(
    universe: &Universe,
    meanings: &MeaningModel,
    ks: RangeInclusive<usize>,
    seeds: &[u64],
    max_iters: usize,
    direction: Direction,
) -> Result<Vec<GeneratorTrace>> {
    let jobs: Vec<(usize, u64)> = ks.flat_map(|k| seeds.iter().map(move |&s| (k, s))).collect();
    jobs.par_iter()
        .map(|&(k, seed)| greedy_swap_search(universe, meanings, k, max_iters, seed, direction))
        .collect()
}

/// One scored system of the pooled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub algorithm: Algorithm,
    pub seed: Option<u64>,
    pub k_target: usize,
    pub k_realized: usize,
    pub step: usize,
    pub complexity_bits: f64,
    pub accuracy_bits: f64,
    pub cost_bits: f64,
    pub epsilon_bits: f64,
    pub convexity: f64,
}

/// All recorded systems with realized size in `k_range`, scored against
/// `frontier` and for convexity consistency.
pub fn pool_sample(
    traces: &[GeneratorTrace],
    k_range: RangeInclusive<usize>,
    universe: &Universe,
    meanings: &MeaningModel,
    frontier: &Frontier,
) -> Result<Vec<EvalRecord>> {
    if traces.is_empty() {
        return Err(Error::invalid("no traces to pool"));
    }
    let imu = meaning_information(meanings);
    let jobs: Vec<(&GeneratorTrace, &TraceRecord)> = traces
        .iter()
        .flat_map(|tr| tr.records.iter().map(move |r| (tr, r)))
        .filter(|(_, r)| k_range.contains(&r.k_realized))
        .collect();
    jobs.par_iter()
        .map(|(tr, r)| {
            let t = Tradeoff {
                complexity: r.complexity_bits,
                accuracy: r.accuracy_bits,
            };
            let partition = voronoi_partition(&r.exemplars, universe)?;
            Ok(EvalRecord {
                algorithm: tr.algorithm,
                seed: tr.seed,
                k_target: r.k_target,
                k_realized: r.k_realized,
                step: r.step,
                complexity_bits: r.complexity_bits,
                accuracy_bits: r.accuracy_bits,
                cost_bits: (imu - r.accuracy_bits).max(0.0),
                epsilon_bits: epsilon_of(t, frontier).epsilon,
                convexity: system_consistency(&partition, universe)?,
            })
        })
        .collect()
}

/// Pooled sample as CSV: `algorithm, seed, k_target, k_realized, step,
/// complexity_bits, accuracy_bits, cost_bits, epsilon_bits, convexity`.
pub fn write_pool_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct ExemplarEntry<'a> {
    algorithm: Algorithm,
    seed: Option<u64>,
    k_target: usize,
    step: usize,
    exemplars: &'a [P3],
}

/// Exemplar coordinates of every recorded system, as one JSON array.
pub fn write_exemplar_sidecar(traces: &[GeneratorTrace], path: &Path) -> Result<()> {
    let entries: Vec<ExemplarEntry<'_>> = traces
        .iter()
        .flat_map(|tr| {
            tr.records.iter().map(move |r| ExemplarEntry {
                algorithm: tr.algorithm,
                seed: tr.seed,
                k_target: r.k_target,
                step: r.step,
                exemplars: &r.exemplars,
            })
        })
        .collect();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(f), &entries)?;
    Ok(())
}
