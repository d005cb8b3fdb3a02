//! IB-optimal encoders via self-consistent (Blahut–Arimoto style) iteration,
//! the reverse-annealed frontier, and the deviation-from-optimality score ε.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{self, Tradeoff};
use crate::model::{MeaningModel, NamingSystem};

const LN2: f64 = std::f64::consts::LN_2;
/// Floor applied to decoder probabilities before taking logs, so that
/// `m_t(u) > 0, m̂_w(u) = 0` yields a huge (effectively infinite) divergence
/// instead of `0 · −∞ = NaN` inside the matrix product.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaOptions {
    /// Stop once `|ΔF_β| / max(β, 1)` between consecutive iterates drops below
    /// this (bits; the scale on which ε is measured).
    pub tol: f64,
    /// ... and the largest entrywise encoder change drops below this.
    pub encoder_tol: f64,
    pub max_iters: usize,
}

impl Default for BaOptions {
    fn default() -> Self {
        BaOptions {
            tol: 1e-10,
            encoder_tol: 1e-7,
            max_iters: 10_000,
        }
    }
}

/// A converged (or iteration-capped) IB fixed point.
#[derive(Debug, Clone)]
pub struct IbSolution {
    pub beta: f64,
    pub encoder: NamingSystem,
    /// `q(w)`
    pub marginal: Vec<f64>,
    /// `m̂_w(u)`, one row per word.
    pub decoder: Array2<f64>,
    pub complexity: f64,
    pub accuracy: f64,
    /// `complexity − β · accuracy`
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Precomputed pieces of the meaning model shared by every iteration.
struct Kernel<'a> {
    meanings: &'a MeaningModel,
    prior: &'a [f64],
    /// `Σ_u m_t(u) ln m_t(u)` per referent.
    neg_entropy: Array1<f64>,
    /// `I(M;U)` in nats.
    imu: f64,
}

impl<'a> Kernel<'a> {
    fn new(meanings: &'a MeaningModel) -> Self {
        let neg_entropy = meanings
            .matrix()
            .map_axis(Axis(1), |r| r.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum());
        Kernel {
            meanings,
            prior: meanings.prior().as_slice(),
            neg_entropy,
            imu: info::meaning_information(meanings) * LN2,
        }
    }
}

/// One evaluation of the current encoder: its marginal, decoders, divergence
/// matrix, and objective terms (nats).
struct Step {
    qw: Array1<f64>,
    decoder: Array2<f64>,
    /// `D[m_t || m̂_w]` in nats, `n × k`.
    div: Array2<f64>,
    complexity: f64,
    accuracy: f64,
}

fn evaluate(kernel: &Kernel<'_>, q: &Array2<f64>, log_q: &Array2<f64>) -> Step {
    let p = ArrayView1::from(kernel.prior);
    let qw = p.dot(q);
    let weighted = q * &p.insert_axis(Axis(1));
    let mut decoder = weighted.t().dot(kernel.meanings.matrix());
    for (mut row, &mass) in decoder.rows_mut().into_iter().zip(qw.iter()) {
        if mass > 0.0 {
            row /= mass;
        } else {
            row.fill(0.0);
        }
    }
    let log_dec = decoder.mapv(|x| x.max(LOG_FLOOR).ln());
    let cross = kernel.meanings.matrix().dot(&log_dec.t());
    let mut div = cross;
    for (t, mut row) in div.rows_mut().into_iter().enumerate() {
        let h = kernel.neg_entropy[t];
        row.mapv_inplace(|c| (h - c).max(0.0));
    }

    let mut complexity = 0.0;
    let mut distortion = 0.0;
    for t in 0..q.nrows() {
        let pt = kernel.prior[t];
        if pt == 0.0 {
            continue;
        }
        for w in 0..q.ncols() {
            let qtw = q[[t, w]];
            if qtw > 0.0 {
                complexity += pt * qtw * (log_q[[t, w]] - qw[w].ln());
                distortion += pt * qtw * div[[t, w]];
            }
        }
    }
    Step {
        qw,
        decoder,
        accuracy: (kernel.imu - distortion).max(0.0),
        complexity: complexity.max(0.0),
        div,
    }
}

/// Self-consistent encoder update `q(w|t) ∝ q(w) exp(−β D[m_t || m̂_w])`.
/// Returns the new encoder and its elementwise log.
fn update(step: &Step, beta: f64) -> (Array2<f64>, Array2<f64>) {
    let log_qw = step.qw.mapv(|x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY });
    let mut log_q = Array2::zeros(step.div.raw_dim());
    for (t, mut row) in log_q.rows_mut().into_iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for w in 0..row.len() {
            let v = log_qw[w] - beta * step.div[[t, w]];
            row[w] = v;
            max = max.max(v);
        }
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    let q = log_q.mapv(f64::exp);
    (q, log_q)
}

fn objective(step: &Step, beta: f64) -> f64 {
    (step.complexity - beta * step.accuracy) / LN2
}

fn log_of(q: &Array2<f64>) -> Array2<f64> {
    q.mapv(|x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
}

/// Run the self-consistent iteration from `init` at tradeoff `beta`.
pub fn ba_fixed_point(meanings: &MeaningModel, beta: f64, init: &NamingSystem) -> IbSolution {
    ba_fixed_point_with(meanings, beta, init, &BaOptions::default(), None)
}

/// Like [`ba_fixed_point`]; when `trace` is given, the objective (bits) of every
/// iterate is appended to it.
pub fn ba_fixed_point_with(
    meanings: &MeaningModel,
    beta: f64,
    init: &NamingSystem,
    opts: &BaOptions,
    trace: Option<&mut Vec<f64>>,
) -> IbSolution {
    assert!(beta >= 0.0, "beta must be nonnegative");
    assert_eq!(init.n(), meanings.n(), "encoder/meaning size mismatch");
    let kernel = Kernel::new(meanings);
    let words = init.words().to_vec();
    let (q, iterations, converged) = iterate(&kernel, beta, init.matrix().clone(), opts, trace);
    finish(meanings, beta, q, words, iterations, converged)
}

fn iterate(
    kernel: &Kernel<'_>,
    beta: f64,
    q: Array2<f64>,
    opts: &BaOptions,
    trace: Option<&mut Vec<f64>>,
) -> (Array2<f64>, usize, bool) {
    iterate_compacting(kernel, beta, q, opts, trace, None)
}

/// Fixed-point loop. With `compact_every = Some(c)`, duplicate and dead words
/// are folded together every `c` iterations (annealing mode).
fn iterate_compacting(
    kernel: &Kernel<'_>,
    beta: f64,
    mut q: Array2<f64>,
    opts: &BaOptions,
    mut trace: Option<&mut Vec<f64>>,
    compact_every: Option<usize>,
) -> (Array2<f64>, usize, bool) {
    let mut log_q = log_of(&q);
    let mut step = evaluate(kernel, &q, &log_q);
    let mut f_prev = objective(&step, beta);
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(f_prev);
    }
    for it in 1..=opts.max_iters {
        let (nq, nlog) = update(&step, beta);
        let dq = nq
            .iter()
            .zip(q.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = nq;
        log_q = nlog;
        step = evaluate(kernel, &q, &log_q);
        let f = objective(&step, beta);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(f);
        }
        if (f_prev - f).abs() < opts.tol * beta.max(1.0) && dq < opts.encoder_tol {
            return (q, it, true);
        }
        f_prev = f;
        if let Some(c) = compact_every {
            if it % c == 0 {
                let merged = compact(kernel, &q, COMPACT_TOL);
                if merged.ncols() < q.ncols() {
                    q = merged;
                    log_q = log_of(&q);
                    step = evaluate(kernel, &q, &log_q);
                    f_prev = objective(&step, beta);
                }
            }
        }
    }
    (q, opts.max_iters, false)
}

fn finish(
    meanings: &MeaningModel,
    beta: f64,
    q: Array2<f64>,
    words: Vec<String>,
    iterations: usize,
    converged: bool,
) -> IbSolution {
    let encoder = NamingSystem::new(q, words).expect("update keeps rows stochastic");
    let marginal = info::word_marginal(&encoder, meanings).to_vec();
    let decoder = info::decoders(&encoder, meanings);
    let complexity = info::complexity(&encoder, meanings);
    let accuracy = info::accuracy(&encoder, meanings);
    IbSolution {
        beta,
        marginal,
        decoder,
        complexity,
        accuracy,
        objective: complexity - beta * accuracy,
        iterations,
        converged,
        encoder,
    }
}

/// Largest elementwise gap between `encoder` and its own self-consistent update.
pub fn self_consistency_residual(meanings: &MeaningModel, beta: f64, encoder: &NamingSystem) -> f64 {
    let kernel = Kernel::new(meanings);
    let q = encoder.matrix();
    let step = evaluate(&kernel, q, &log_of(q));
    let (next, _) = update(&step, beta);
    next.iter()
        .zip(q.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `count` geometrically spaced values from `min` to `max` inclusive.
pub fn beta_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && count >= 2) {
        return Err(Error::invalid(format!(
            "beta grid needs 0 < min < max and at least 2 points (got {min}, {max}, {count})"
        )));
    }
    let ratio = (max / min).ln() / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|i| min * (ratio * i as f64).exp()).collect();
    grid[count - 1] = max;
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub beta: f64,
    pub complexity_bits: f64,
    pub accuracy_bits: f64,
    #[serde(rename = "F_star")]
    pub f_star: f64,
}

/// The IB theoretical limit sampled on a beta grid (increasing beta).
#[derive(Debug, Clone, Default)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
    /// Optimal encoder per point, when kept.
    pub encoders: Option<Vec<NamingSystem>>,
    /// Betas whose solve hit the iteration cap.
    pub unconverged: Vec<f64>,
    /// Fixed-point iterations spent per point.
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct FrontierOptions {
    pub ba: BaOptions,
    /// Seed for the perturbation of the initial near-identity encoder.
    pub seed: u64,
    /// Scale of the uniform noise added to the identity initialization.
    pub init_noise: f64,
    pub keep_encoders: bool,
}

impl Default for FrontierOptions {
    fn default() -> Self {
        FrontierOptions {
            // F* is what the frontier is for; it converges much faster than the
            // encoder near bifurcations, so annealing stops on |ΔF| alone.
            ba: BaOptions {
                tol: 1e-9,
                encoder_tol: f64::INFINITY,
                ..BaOptions::default()
            },
            seed: 0,
            init_noise: 1e-2,
            keep_encoders: true,
        }
    }
}

/// Identity encoder perturbed by `noise · U[0,1)` and renormalized.
pub fn perturbed_identity(n: usize, noise: f64, seed: u64) -> NamingSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Array2::from_shape_fn((n, n), |(i, j)| {
        let base = if i == j { 1.0 } else { 0.0 };
        base + noise * rng.gen::<f64>()
    });
    for mut row in q.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    NamingSystem::from_matrix(q).expect("normalized rows")
}

/// Drop dead words and merge words whose decoders coincide. Both leave the
/// induced joint distribution (and so the objective) essentially unchanged
/// while shrinking the encoder for the remaining annealing steps.
fn compact(kernel: &Kernel<'_>, q: &Array2<f64>, rel_tol: f64) -> Array2<f64> {
    let step = evaluate(kernel, q, &log_of(q));
    let k = q.ncols();
    let mut group: Vec<Option<usize>> = vec![None; k];
    let mut reps: Vec<usize> = Vec::new();
    for w in 0..k {
        if step.qw[w] < 1e-14 {
            continue;
        }
        let row = step.decoder.row(w);
        let scale = row.iter().cloned().fold(0.0, f64::max);
        let found = reps.iter().position(|&r| {
            step.decoder
                .row(r)
                .iter()
                .zip(row.iter())
                .all(|(a, b)| (a - b).abs() <= rel_tol * scale)
        });
        match found {
            Some(g) => group[w] = Some(g),
            None => {
                group[w] = Some(reps.len());
                reps.push(w);
            }
        }
    }
    let mut out = Array2::zeros((q.nrows(), reps.len().max(1)));
    for w in 0..k {
        if let Some(g) = group[w] {
            for t in 0..q.nrows() {
                out[[t, g]] += q[[t, w]];
            }
        }
    }
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / row.len() as f64);
        }
    }
    out
}

const COMPACT_EVERY: usize = 50;
const COMPACT_TOL: f64 = 1e-5;

/// Merge words whose decoders agree entrywise within `rel_tol` times the
/// row maximum, and drop unused words. Merging identical decoders leaves
/// every IB quantity unchanged.
pub fn merge_duplicate_words(meanings: &MeaningModel, encoder: &NamingSystem, rel_tol: f64) -> NamingSystem {
    let kernel = Kernel::new(meanings);
    NamingSystem::from_matrix(compact(&kernel, encoder.matrix(), rel_tol)).expect("rows renormalized")
}

/// Every annealing solution is a feasible encoder, so at each beta the best
/// objective over all of them is a tighter bound than the local solution
/// alone. Selecting that way also makes the curve monotone and concave.
fn lower_envelope(
    points: Vec<FrontierPoint>,
    encoders: Vec<NamingSystem>,
) -> (Vec<FrontierPoint>, Vec<NamingSystem>) {
    let best: Vec<usize> = points
        .iter()
        .map(|p| {
            let f = |j: usize| points[j].complexity_bits - p.beta * points[j].accuracy_bits;
            (0..points.len()).fold(0, |b, j| if f(j) < f(b) { j } else { b })
        })
        .collect();
    let new_points = points
        .iter()
        .zip(&best)
        .map(|(p, &j)| {
            let (c, a) = (points[j].complexity_bits, points[j].accuracy_bits);
            FrontierPoint {
                beta: p.beta,
                complexity_bits: c,
                accuracy_bits: a,
                f_star: c - p.beta * a,
            }
        })
        .collect();
    let new_encoders = if encoders.is_empty() {
        encoders
    } else {
        best.iter().map(|&j| encoders[j].clone()).collect()
    };
    (new_points, new_encoders)
}

/// Reverse deterministic annealing over an increasing `betas` grid: solve at the
/// largest beta from a perturbed identity, then warm-start each smaller beta.
pub fn compute_frontier(
    meanings: &MeaningModel,
    betas: &[f64],
    opts: &FrontierOptions,
) -> Result<Frontier> {
    if betas.is_empty() {
        return Err(Error::invalid("empty beta grid"));
    }
    if betas.windows(2).any(|w| w[1] <= w[0]) || betas[0] < 0.0 {
        return Err(Error::invalid("beta grid must be nonnegative and strictly increasing"));
    }
    let kernel = Kernel::new(meanings);
    let n = meanings.n();
    let mut q = perturbed_identity(n, opts.init_noise, opts.seed).matrix().clone();
    let mut points = Vec::with_capacity(betas.len());
    let mut encoders = Vec::new();
    let mut unconverged = Vec::new();
    let mut iterations = Vec::with_capacity(betas.len());
    for &beta in betas.iter().rev() {
        let (sol, iters, converged) =
            iterate_compacting(&kernel, beta, q, &opts.ba, None, Some(COMPACT_EVERY));
        iterations.push(iters);
        if !converged {
            log::warn!("beta {beta}: no convergence after {} iterations", opts.ba.max_iters);
            unconverged.push(beta);
        }
        q = compact(&kernel, &sol, COMPACT_TOL);
        let mut sys = NamingSystem::from_matrix(q.clone())?;
        let mut t = info::tradeoff(&sys, meanings);
        // The one-word system (F = 0) is always feasible; below the first
        // bifurcation it is the optimum and annealing only approaches it slowly.
        if q.ncols() > 1 && t.complexity - beta * t.accuracy > 0.0 {
            sys = NamingSystem::single_word(n);
            q = sys.matrix().clone();
            t = Tradeoff {
                complexity: 0.0,
                accuracy: 0.0,
            };
        }
        points.push(FrontierPoint {
            beta,
            complexity_bits: t.complexity,
            accuracy_bits: t.accuracy,
            f_star: t.complexity - beta * t.accuracy,
        });
        if opts.keep_encoders {
            encoders.push(sys);
        }
        log::debug!("beta {beta:.4}: k={} I(M;W)={:.4} I(W;U)={:.4}", q.ncols(), t.complexity, t.accuracy);
    }
    points.reverse();
    encoders.reverse();
    unconverged.reverse();
    iterations.reverse();
    let (points, encoders) = lower_envelope(points, encoders);
    Ok(Frontier {
        points,
        encoders: opts.keep_encoders.then_some(encoders),
        unconverged,
        iterations,
    })
}

/// Deviation from optimality of a system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon {
    pub epsilon: f64,
    /// The grid beta attaining the minimum (the fitted tradeoff).
    pub beta: f64,
}

/// `min_β (F_β[q] − F*_β) / β` over the frontier grid.
pub fn epsilon(system: &NamingSystem, meanings: &MeaningModel, frontier: &Frontier) -> Epsilon {
    epsilon_of(info::tradeoff(system, meanings), frontier)
}

pub fn epsilon_of(t: Tradeoff, frontier: &Frontier) -> Epsilon {
    let mut best = Epsilon {
        epsilon: f64::INFINITY,
        beta: f64::NAN,
    };
    for pt in frontier.points.iter().filter(|p| p.beta > 0.0) {
        let f = t.complexity - pt.beta * t.accuracy;
        let e = (f - pt.f_star) / pt.beta;
        if e < best.epsilon {
            best = Epsilon {
                epsilon: e,
                beta: pt.beta,
            };
        }
    }
    best
}

impl Frontier {
    /// Check the monotonicity and concavity invariants; returns one message per violation.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            if b.beta <= a.beta {
                out.push(format!("beta not increasing at {i}"));
            }
            if b.accuracy_bits < a.accuracy_bits - 1e-9 {
                out.push(format!(
                    "accuracy decreases at beta {}: {} -> {}",
                    b.beta, a.accuracy_bits, b.accuracy_bits
                ));
            }
            if b.complexity_bits < a.complexity_bits - 1e-9 {
                out.push(format!(
                    "complexity decreases at beta {}: {} -> {}",
                    b.beta, a.complexity_bits, b.complexity_bits
                ));
            }
        }
        let slopes = self.chord_slopes();
        for w in slopes.windows(2) {
            let ((c0, s0), (_, s1)) = (w[0], w[1]);
            if s1 > s0 + 1e-6 {
                out.push(format!("chord slope rises after complexity {c0}: {s0} -> {s1}"));
            }
        }
        out
    }

    /// Chord slopes Δaccuracy/Δcomplexity between successive distinct points
    /// (points closer than 1e-6 bits in complexity are merged), tagged with
    /// the complexity at the chord start.
    pub fn chord_slopes(&self) -> Vec<(f64, f64)> {
        let mut anchors: Vec<&FrontierPoint> = Vec::new();
        for p in &self.points {
            match anchors.last() {
                Some(last) if p.complexity_bits - last.complexity_bits < 1e-6 => {}
                _ => anchors.push(p),
            }
        }
        anchors
            .windows(2)
            .map(|w| {
                let dc = w[1].complexity_bits - w[0].complexity_bits;
                let da = w[1].accuracy_bits - w[0].accuracy_bits;
                (w[0].complexity_bits, da / dc)
            })
            .collect()
    }

    /// Frontier accuracy at a given complexity, by linear interpolation
    /// (clamped at the ends).
    pub fn accuracy_at(&self, complexity: f64) -> f64 {
        let pts = &self.points;
        if pts.is_empty() {
            return f64::NAN;
        }
        if complexity <= pts[0].complexity_bits {
            return pts[0].accuracy_bits;
        }
        for w in pts.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if complexity <= b.complexity_bits {
                let dc = b.complexity_bits - a.complexity_bits;
                if dc <= 0.0 {
                    return b.accuracy_bits;
                }
                let f = (complexity - a.complexity_bits) / dc;
                return a.accuracy_bits + f * (b.accuracy_bits - a.accuracy_bits);
            }
        }
        pts[pts.len() - 1].accuracy_bits
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Frontier> {
        let mut r = csv::Reader::from_path(path)?;
        let points = r.deserialize().collect::<std::result::Result<Vec<FrontierPoint>, _>>()?;
        if points.is_empty() {
            return Err(Error::ingest(path, 1, "frontier file has no points"));
        }
        Ok(Frontier {
            points,
            encoders: None,
            unconverged: Vec::new(),
            iterations: Vec::new(),
        })
    }
}

const SIDECAR_MAGIC: &[u8; 8] = b"IBFRONT\0";
pub const SIDECAR_VERSION: u32 = 1;

/// Write stored encoders in a little-endian binary sidecar:
/// magic, version (u32), count (u32), then per point beta (f64), n (u32),
/// k (u32) and the `n × k` row-major entries (f64).
pub fn write_encoder_sidecar(frontier: &Frontier, path: &Path) -> Result<()> {
    let encoders = frontier
        .encoders
        .as_ref()
        .ok_or_else(|| Error::invalid("frontier has no stored encoders"))?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(SIDECAR_MAGIC).map_err(io)?;
    w.write_all(&SIDECAR_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(encoders.len() as u32).to_le_bytes()).map_err(io)?;
    for (pt, enc) in frontier.points.iter().zip(encoders) {
        w.write_all(&pt.beta.to_le_bytes()).map_err(io)?;
        w.write_all(&(enc.n() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(enc.k() as u32).to_le_bytes()).map_err(io)?;
        for x in enc.matrix().iter() {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Read a sidecar written by [`write_encoder_sidecar`]: `(beta, encoder)` pairs.
pub fn read_encoder_sidecar(path: &Path) -> Result<Vec<(f64, NamingSystem)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != SIDECAR_MAGIC {
        return Err(Error::ingest(path, 0, "not an encoder sidecar"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != SIDECAR_VERSION {
        return Err(Error::ingest(
            path,
            0,
            format!("sidecar version {version}, expected {SIDECAR_VERSION}; recompute the frontier"),
        ));
    }
    r.read_exact(&mut b4).map_err(io)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8).map_err(io)?;
        let beta = f64::from_le_bytes(b8);
        r.read_exact(&mut b4).map_err(io)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(io)?;
        let k = u32::from_le_bytes(b4) as usize;
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n * k {
            r.read_exact(&mut b8).map_err(io)?;
            data.push(f64::from_le_bytes(b8));
        }
        let q = Array2::from_shape_vec((n, k), data).map_err(|e| Error::invalid(e.to_string()))?;
        out.push((beta, NamingSystem::from_matrix(q)?));
    }
    if r.fill_buf().map_err(io)?.is_empty() {
        Ok(out)
    } else {
        Err(Error::ingest(path, 0, "trailing bytes after last encoder"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HardPartition, Prior};
    use approx::assert_abs_diff_eq;

    /// Small 1D Gaussian-kernel meaning model.
    fn toy_meanings(n: usize, sigma2: f64) -> MeaningModel {
        let m = Array2::from_shape_fn((n, n), |(t, u)| {
            let d = t as f64 - u as f64;
            (-d * d / (2.0 * sigma2)).exp()
        });
        let mut m = m;
        for mut row in m.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        MeaningModel::new(m, Prior::uniform(n)).unwrap()
    }

    fn random_system(rng: &mut ChaCha8Rng, n: usize, k: usize) -> NamingSystem {
        let mut q = Array2::from_shape_fn((n, k), |_| rng.gen::<f64>());
        for mut row in q.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        NamingSystem::from_matrix(q).unwrap()
    }

    #[test]
    fn beta_zero_collapses_to_one_word() {
        let mm = toy_meanings(12, 2.0);
        let sol = ba_fixed_point(&mm, 0.0, &perturbed_identity(12, 1e-2, 7));
        assert!(sol.complexity < 1e-6, "{}", sol.complexity);
        assert!(sol.converged);
    }

    #[test]
    fn objective_is_monotone_along_iterations() {
        let mm = toy_meanings(10, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let init = random_system(&mut rng, 10, 4);
            let beta = rng.gen_range(0.5..20.0);
            let mut trace = Vec::new();
            ba_fixed_point_with(&mm, beta, &init, &BaOptions::default(), Some(&mut trace));
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "objective rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn large_beta_with_identity_meanings_is_near_lossless() {
        let mm = MeaningModel::identity(Prior::uniform(6));
        let sol = ba_fixed_point(&mm, 2f64.powi(20), &perturbed_identity(6, 1e-2, 3));
        let max = info::meaning_information(&mm);
        assert!((sol.accuracy - max).abs() < 1e-3, "{} vs {}", sol.accuracy, max);
        for row in sol.encoder.matrix().rows() {
            assert!(row.iter().cloned().fold(0.0, f64::max) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn fixed_point_is_self_consistent() {
        let mm = toy_meanings(15, 3.0);
        for &beta in &[1.5, 4.0, 12.0] {
            let sol = ba_fixed_point(&mm, beta, &perturbed_identity(15, 1e-2, 1));
            assert!(sol.converged);
            let r = self_consistency_residual(&mm, beta, &sol.encoder);
            assert!(r < 1e-6, "beta {beta}: residual {r}");
            assert_abs_diff_eq!(sol.objective, sol.complexity - beta * sol.accuracy, epsilon = 1e-9);
            for row in sol.decoder.rows() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
            }
        }
    }

    fn toy_frontier() -> (MeaningModel, Frontier) {
        let mm = toy_meanings(20, 2.0);
        let betas = beta_grid(0.5, 256.0, 120).unwrap();
        let f = compute_frontier(&mm, &betas, &FrontierOptions::default()).unwrap();
        (mm, f)
    }

    #[test]
    fn frontier_shape_and_endpoints() {
        let (mm, f) = toy_frontier();
        let v = f.invariant_violations();
        assert!(v.is_empty(), "{v:?}");
        assert!(f.points[0].complexity_bits < 1e-4);
        let last = f.points.last().unwrap();
        assert!(info::meaning_information(&mm) - last.accuracy_bits < 1e-3);
    }

    #[test]
    fn epsilon_properties() {
        let (mm, f) = toy_frontier();
        let encoders = f.encoders.as_ref().unwrap();
        for enc in encoders.iter().step_by(10) {
            assert!(epsilon(enc, &mm, &f).epsilon < 1e-3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let k = rng.gen_range(1..8);
            let e = epsilon(&random_system(&mut rng, 20, k), &mm, &f);
            assert!(e.epsilon >= -1e-9, "{e:?}");
        }
        let one = epsilon(&NamingSystem::single_word(20), &mm, &f);
        let expect = f
            .points
            .iter()
            .map(|p| -p.f_star / p.beta)
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(one.epsilon, expect, epsilon = 1e-12);
        assert!(one.epsilon >= -1e-12);
    }

    #[test]
    fn hard_systems_never_beat_the_bound() {
        let (mm, f) = toy_frontier();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let k = rng.gen_range(1..10);
            let labels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..k)).collect();
            let t = info::tradeoff(&HardPartition::from_labels(&labels).to_system(), &mm);
            assert!(t.accuracy <= f.accuracy_at(t.complexity) + 1e-6);
        }
    }

    #[test]
    fn csv_and_sidecar_roundtrip() {
        let mm = toy_meanings(6, 1.0);
        let betas = beta_grid(1.0, 16.0, 8).unwrap();
        let f = compute_frontier(&mm, &betas, &FrontierOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("f.csv");
        f.write_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("beta,complexity_bits,accuracy_bits,F_star\n"));
        let back = Frontier::read_csv(&csv_path).unwrap();
        assert_eq!(back.points, f.points);

        let bin = dir.path().join("f.enc");
        write_encoder_sidecar(&f, &bin).unwrap();
        let enc = read_encoder_sidecar(&bin).unwrap();
        assert_eq!(enc.len(), 8);
        for ((b, e), (p, orig)) in enc.iter().zip(f.points.iter().zip(f.encoders.as_ref().unwrap())) {
            assert_eq!(*b, p.beta);
            assert_eq!(e.matrix(), orig.matrix());
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(beta_grid(0.0, 1.0, 10).is_err());
        assert!(beta_grid(2.0, 1.0, 10).is_err());
        let mm = toy_meanings(4, 1.0);
        assert!(compute_frontier(&mm, &[2.0, 1.0], &FrontierOptions::default()).is_err());
        assert!(compute_frontier(&mm, &[], &FrontierOptions::default()).is_err());
    }
}
