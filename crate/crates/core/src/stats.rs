//! Attested systems against their hue rotations: advantage rates, mirrored
//! pair classifiers (logistic regression), cross-validated AUC and nested
//! likelihood-ratio tests.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::statistics::{Data, OrderStatistics};

use crate::convexity::{system_consistency_with, ConvexityOptions};
use crate::error::{Error, Result};
use crate::ib::{epsilon_of, Frontier};
use crate::info::{meaning_information, tradeoff};
use crate::model::{MeaningModel, Universe};
use crate::wcs::{modal_system, probabilistic_system, rotate_partition, rotate_system, WcsDataset};

/// Number of non-trivial hue rotations of the grid.
pub const ROTATIONS: u8 = 39;

/// Scores of one attested system (`rotation == 0`) or one of its rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationRecord {
    pub language: u32,
    pub rotation: u8,
    /// Number of modal terms.
    pub k: usize,
    pub complexity_bits: f64,
    pub accuracy_bits: f64,
    pub cost_bits: f64,
    pub epsilon_bits: f64,
    /// The grid beta attaining the minimum in ε.
    pub beta: f64,
    pub convexity: f64,
}

/// Score every language and, when `rotations` is set, its 39 rotations.
/// ε uses the probabilistic system; convexity its modal partition.
pub fn rotation_scores(
    data: &WcsDataset,
    meanings: &MeaningModel,
    frontier: &Frontier,
    convexity: &ConvexityOptions,
    rotations: bool,
) -> Result<Vec<RotationRecord>> {
    let universe: &Universe = &data.universe;
    let imu = meaning_information(meanings);
    let max_r = if rotations { ROTATIONS } else { 0 };
    let jobs: Vec<(usize, u8)> = (0..data.languages.len())
        .flat_map(|l| (0..=max_r).map(move |r| (l, r)))
        .collect();
    jobs.par_iter()
        .map(|&(l, r)| {
            let lang = &data.languages[l];
            let (sys, part) = if r == 0 {
                (probabilistic_system(lang), modal_system(lang))
            } else {
                (
                    rotate_system(&probabilistic_system(lang), universe, r)?,
                    rotate_partition(&modal_system(lang), universe, r)?,
                )
            };
            let t = tradeoff(&sys, meanings);
            let eps = epsilon_of(t, frontier);
            Ok(RotationRecord {
                language: lang.id,
                rotation: r,
                k: part.k(),
                complexity_bits: t.complexity,
                accuracy_bits: t.accuracy,
                cost_bits: (imu - t.accuracy).max(0.0),
                epsilon_bits: eps.epsilon,
                beta: eps.beta,
                convexity: system_consistency_with(&part, universe, convexity)?,
            })
        })
        .collect()
}

pub fn write_rotation_csv(records: &[RotationRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_rotation_csv(path: &Path) -> Result<Vec<RotationRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    DeltaEpsilon,
    DeltaConv,
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::DeltaEpsilon => "delta_epsilon",
            Feature::DeltaConv => "delta_conv",
        }
    }
}

/// One ordered pair `(P1, P2)` of an attested system and one of its rotations.
///
/// Features are oriented so that positive values favor `P1` being attested:
/// `Δε = ε[P2] − ε[P1]` and `Δc = Conv[P1] − Conv[P2]`. `label` is 1 when `P1`
/// is the attested system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub language: u32,
    pub rotation: u8,
    pub delta_epsilon: f64,
    pub delta_conv: f64,
    pub label: u8,
}

impl PairExample {
    pub fn feature(&self, f: Feature) -> f64 {
        match f {
            Feature::DeltaEpsilon => self.delta_epsilon,
            Feature::DeltaConv => self.delta_conv,
        }
    }
}

fn by_language(records: &[RotationRecord]) -> BTreeMap<u32, (Option<&RotationRecord>, Vec<&RotationRecord>)> {
    let mut map: BTreeMap<u32, (Option<&RotationRecord>, Vec<&RotationRecord>)> = BTreeMap::new();
    for r in records {
        let e = map.entry(r.language).or_default();
        if r.rotation == 0 {
            e.0 = Some(r);
        } else {
            e.1.push(r);
        }
    }
    map
}

/// Both orderings of every (language, rotation) pair: the attested-first
/// example (label 1) followed by its mirror (negated features, label 0).
pub fn build_pairs(records: &[RotationRecord]) -> Result<Vec<PairExample>> {
    let mut out = Vec::new();
    for (lang, (att, rots)) in by_language(records) {
        let att = att.ok_or_else(|| Error::invalid(format!("language {lang} has no attested record")))?;
        for rot in rots {
            let de = rot.epsilon_bits - att.epsilon_bits;
            let dc = att.convexity - rot.convexity;
            out.push(PairExample {
                language: lang,
                rotation: rot.rotation,
                delta_epsilon: de,
                delta_conv: dc,
                label: 1,
            });
            out.push(PairExample {
                language: lang,
                rotation: rot.rotation,
                delta_epsilon: -de,
                delta_conv: -dc,
                label: 0,
            });
        }
    }
    Ok(out)
}

/// Per-language advantage: does the attested system strictly beat every
/// rotation on ε (lower) and on convexity (higher)?
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanguageAdvantage {
    pub language: u32,
    pub efficiency_advantage: bool,
    pub convexity_advantage: bool,
    pub min_delta_epsilon: f64,
    pub min_delta_conv: f64,
}

pub fn language_advantages(records: &[RotationRecord]) -> Result<Vec<LanguageAdvantage>> {
    by_language(records)
        .into_iter()
        .map(|(lang, (att, rots))| {
            let att = att.ok_or_else(|| Error::invalid(format!("language {lang} has no attested record")))?;
            let de = rots
                .iter()
                .map(|r| r.epsilon_bits - att.epsilon_bits)
                .fold(f64::INFINITY, f64::min);
            let dc = rots
                .iter()
                .map(|r| att.convexity - r.convexity)
                .fold(f64::INFINITY, f64::min);
            Ok(LanguageAdvantage {
                language: lang,
                efficiency_advantage: !rots.is_empty() && de > 0.0,
                convexity_advantage: !rots.is_empty() && dc > 0.0,
                min_delta_epsilon: de,
                min_delta_conv: dc,
            })
        })
        .collect()
}

/// Fractions of languages with an efficiency and a convexity advantage.
pub fn advantage_rates(records: &[RotationRecord]) -> Result<(f64, f64)> {
    let adv = language_advantages(records)?;
    if adv.is_empty() {
        return Err(Error::invalid("no languages"));
    }
    let n = adv.len() as f64;
    Ok((
        adv.iter().filter(|a| a.efficiency_advantage).count() as f64 / n,
        adv.iter().filter(|a| a.convexity_advantage).count() as f64 / n,
    ))
}

/// Advantage of attested over rotated systems at one rotation, summarized
/// across languages. Bands are the 2.5th and 97.5th percentiles across
/// languages (not a bootstrap interval).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub rotation: u8,
    pub delta_epsilon_mean: f64,
    pub delta_epsilon_p2_5: f64,
    pub delta_epsilon_p97_5: f64,
    pub delta_conv_mean: f64,
    pub delta_conv_p2_5: f64,
    pub delta_conv_p97_5: f64,
}

pub fn advantage_curves(records: &[RotationRecord]) -> Result<Vec<CurvePoint>> {
    let pairs = build_pairs(records)?;
    let mut by_r: BTreeMap<u8, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in pairs.iter().filter(|p| p.label == 1) {
        let e = by_r.entry(p.rotation).or_default();
        e.0.push(p.delta_epsilon);
        e.1.push(p.delta_conv);
    }
    let summary = |v: Vec<f64>| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let mut d = Data::new(v);
        (mean, d.quantile(0.025), d.quantile(0.975))
    };
    Ok(by_r
        .into_iter()
        .map(|(r, (de, dc))| {
            let (em, el, eh) = summary(de);
            let (cm, cl, ch) = summary(dc);
            CurvePoint {
                rotation: r,
                delta_epsilon_mean: em,
                delta_epsilon_p2_5: el,
                delta_epsilon_p97_5: eh,
                delta_conv_mean: cm,
                delta_conv_p2_5: cl,
                delta_conv_p97_5: ch,
            }
        })
        .collect())
}

/// A maximum-likelihood logistic fit on z-scored features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub features: Vec<Feature>,
    /// Coefficients on the standardized features.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub log_likelihood: f64,
    pub n: usize,
    pub iterations: usize,
    /// Set when the fit did not converge, typically because the classes are
    /// (nearly) separable and the coefficients run off.
    pub separated: bool,
    #[serde(skip)]
    pub means: Vec<f64>,
    #[serde(skip)]
    pub scales: Vec<f64>,
}

impl FitResult {
    /// Linear predictor for an example.
    pub fn score(&self, e: &PairExample) -> f64 {
        self.intercept
            + self
                .features
                .iter()
                .enumerate()
                .map(|(i, &f)| self.coefficients[i] * (e.feature(f) - self.means[i]) / self.scales[i])
                .sum::<f64>()
    }
}

const RIDGE: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-8;
const MAX_IRLS: usize = 100;

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression by iteratively reweighted least squares, with features
/// z-scored over `examples` (population standard deviation).
pub fn logistic_fit(examples: &[PairExample], features: &[Feature]) -> Result<FitResult> {
    let n = examples.len();
    if n < 2 {
        return Err(Error::invalid("logistic fit needs at least two examples"));
    }
    let p = features.len() + 1;
    let mut means = Vec::new();
    let mut scales = Vec::new();
    for &f in features {
        let v: Vec<f64> = examples.iter().map(|e| e.feature(f)).collect();
        let m = v.iter().sum::<f64>() / n as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        means.push(m);
        scales.push(if sd > 0.0 { sd } else { 1.0 });
    }
    let x = DMatrix::from_fn(n, p, |i, j| {
        if j == 0 {
            1.0
        } else {
            (examples[i].feature(features[j - 1]) - means[j - 1]) / scales[j - 1]
        }
    });
    let y = DVector::from_iterator(n, examples.iter().map(|e| e.label as f64));
    let mut beta = DVector::zeros(p);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_IRLS {
        let eta = &x * &beta;
        let mu = eta.map(sigmoid);
        let grad = x.transpose() * (&y - &mu);
        if grad.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let w = mu.map(|m| m * (1.0 - m));
        let mut h = x.transpose() * DMatrix::from_fn(n, p, |i, j| w[i] * x[(i, j)]);
        for d in 0..p {
            h[(d, d)] += RIDGE;
        }
        let step = h
            .cholesky()
            .ok_or_else(|| Error::invalid("singular information matrix"))?
            .solve(&grad);
        let next = &beta + step;
        if !next.iter().all(|b| b.is_finite()) {
            break;
        }
        beta = next;
    }
    let eta = &x * &beta;
    // With every example on the right side of the boundary the likelihood
    // has no finite maximum; the gradient test only stops on saturation.
    let perfect = eta.iter().zip(y.iter()).all(|(&e, &yi)| (e > 0.0) == (yi > 0.5));
    let log_likelihood = eta
        .iter()
        .zip(y.iter())
        .map(|(&e, &yi)| yi * e - softplus(e))
        .sum::<f64>();
    Ok(FitResult {
        features: features.to_vec(),
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        log_likelihood: log_likelihood.min(0.0),
        n,
        iterations,
        separated: !converged || perfect,
        means,
        scales,
    })
}

/// Rank-based (Mann–Whitney) ROC AUC; tied scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&r| labels[idx[r]] == 1).count() as f64 * avg;
        i = j + 1;
    }
    Some((rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub features: Vec<Feature>,
    pub mean_auc: f64,
    /// `None` for folds skipped because the held-out part had one class.
    pub fold_aucs: Vec<Option<f64>>,
}

/// Mean held-out AUC over `folds` folds. Languages are shuffled with the
/// seeded ChaCha8 generator and dealt round-robin to folds, so all examples
/// of a language share a fold.
pub fn cv_auc(examples: &[PairExample], features: &[Feature], folds: usize, seed: u64) -> Result<CvResult> {
    if folds < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    let mut langs: Vec<u32> = examples.iter().map(|e| e.language).collect();
    langs.sort_unstable();
    langs.dedup();
    if langs.len() < folds {
        return Err(Error::invalid(format!("{} languages cannot fill {folds} folds", langs.len())));
    }
    langs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: BTreeMap<u32, usize> = langs.iter().enumerate().map(|(i, &l)| (l, i % folds)).collect();
    let fold_aucs: Vec<Option<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<PairExample>, Vec<PairExample>) =
                examples.iter().partition(|e| fold_of[&e.language] == f);
            let fit = logistic_fit(&train, features)?;
            let scores: Vec<f64> = test.iter().map(|e| fit.score(e)).collect();
            let labels: Vec<u8> = test.iter().map(|e| e.label).collect();
            let auc = roc_auc(&scores, &labels);
            if auc.is_none() {
                log::warn!("fold {f}: held-out examples have a single class; skipped");
            }
            Ok(auc)
        })
        .collect::<Result<_>>()?;
    let used: Vec<f64> = fold_aucs.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::invalid("every fold was skipped"));
    }
    Ok(CvResult {
        features: features.to_vec(),
        mean_auc: used.iter().sum::<f64>() / used.len() as f64,
        fold_aucs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lrt {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
}

/// `chi2 = 2 (LL_full − LL_reduced)` on `df` dropped features.
pub fn likelihood_ratio_test(full: &FitResult, reduced: &FitResult) -> Result<Lrt> {
    if reduced.n != full.n || !reduced.features.iter().all(|f| full.features.contains(f)) {
        return Err(Error::invalid("reduced model must use a subset of the full model's features on the same data"));
    }
    if reduced.log_likelihood > full.log_likelihood + 1e-6 {
        return Err(Error::NotNested {
            full: full.log_likelihood,
            reduced: reduced.log_likelihood,
        });
    }
    let chi2 = (2.0 * (full.log_likelihood - reduced.log_likelihood)).max(0.0);
    let df = full.features.len() - reduced.features.len();
    let p = if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sf(chi2)
    };
    Ok(Lrt { chi2, df, p })
}

#[derive(Debug, Clone, Serialize)]
pub struct LrtRow {
    pub dropped: Feature,
    pub log_likelihood: f64,
    #[serde(flatten)]
    pub test: Lrt,
}

/// Full two-feature model with one LRT row per dropped feature.
#[derive(Debug, Clone, Serialize)]
pub struct Table1 {
    pub n: usize,
    pub full: FitResult,
    pub lrt: Vec<LrtRow>,
}

pub fn table1(examples: &[PairExample]) -> Result<Table1> {
    let both = [Feature::DeltaEpsilon, Feature::DeltaConv];
    let full = logistic_fit(examples, &both)?;
    let lrt = both
        .iter()
        .map(|&drop| {
            let keep: Vec<Feature> = both.iter().copied().filter(|&f| f != drop).collect();
            let reduced = logistic_fit(examples, &keep)?;
            Ok(LrtRow {
                dropped: drop,
                log_likelihood: reduced.log_likelihood,
                test: likelihood_ratio_test(&full, &reduced)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Table1 {
        n: examples.len(),
        full,
        lrt,
    })
}
