//! Information-theoretic scores of a naming system under a meaning model.
//! All quantities are in bits; `0 · log 0 = 0`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::model::{MeaningModel, NamingSystem};

/// `a · log2(a / b)` with the usual limits.
#[inline]
pub(crate) fn plog2(a: f64, b: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else if b <= 0.0 {
        f64::INFINITY
    } else {
        a * (a / b).log2()
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().map(|&x| -plog2(x, 1.0)).sum()
}

pub fn kl_divergence(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    p.iter().zip(q.iter()).map(|(&a, &b)| plog2(a, b)).sum()
}

fn check_shapes(system: &NamingSystem, meanings: &MeaningModel) {
    assert_eq!(
        system.n(),
        meanings.n(),
        "naming system has {} rows but the meaning model has {} referents",
        system.n(),
        meanings.n()
    );
}

/// Word marginal `q(w) = Σ_t p(t) q(w|t)`.
pub fn word_marginal(system: &NamingSystem, meanings: &MeaningModel) -> Array1<f64> {
    check_shapes(system, meanings);
    ArrayView1::from(meanings.prior().as_slice()).dot(system.matrix())
}

/// Joint `p(w, u) = Σ_t p(t) q(w|t) m_t(u)` as a `k × n` matrix.
pub fn joint_word_referent(system: &NamingSystem, meanings: &MeaningModel) -> Array2<f64> {
    check_shapes(system, meanings);
    let p = ArrayView1::from(meanings.prior().as_slice());
    let weighted = system.matrix() * &p.insert_axis(ndarray::Axis(1));
    weighted.t().dot(meanings.matrix())
}

/// Listener reconstructions `m̂_w(u) = p(w,u) / q(w)`; rows of unused words are zero.
pub fn decoders(system: &NamingSystem, meanings: &MeaningModel) -> Array2<f64> {
    let mut joint = joint_word_referent(system, meanings);
    let qw = word_marginal(system, meanings);
    for (mut row, &mass) in joint.rows_mut().into_iter().zip(qw.iter()) {
        if mass > 0.0 {
            row /= mass;
        } else {
            row.fill(0.0);
        }
    }
    joint
}

/// Complexity `I(M;W)`.
pub fn complexity(system: &NamingSystem, meanings: &MeaningModel) -> f64 {
    let qw = word_marginal(system, meanings);
    let p = meanings.prior().as_slice();
    let mut total = 0.0;
    for (t, row) in system.matrix().rows().into_iter().enumerate() {
        if p[t] == 0.0 {
            continue;
        }
        let s: f64 = row.iter().zip(qw.iter()).map(|(&q, &m)| plog2(q, m)).sum();
        total += p[t] * s;
    }
    total.max(0.0)
}

/// Mutual information of a joint given as a matrix with known marginals.
fn joint_information(joint: &Array2<f64>, row_marg: &[f64], col_marg: &[f64]) -> f64 {
    let mut total = 0.0;
    for (w, row) in joint.rows().into_iter().enumerate() {
        if row_marg[w] <= 0.0 {
            continue;
        }
        for (u, &j) in row.iter().enumerate() {
            total += plog2(j, row_marg[w] * col_marg[u]);
        }
    }
    total.max(0.0)
}

/// Accuracy `I(W;U)`.
pub fn accuracy(system: &NamingSystem, meanings: &MeaningModel) -> f64 {
    let joint = joint_word_referent(system, meanings);
    let qw = word_marginal(system, meanings);
    let pu = meanings.marginal_u();
    joint_information(&joint, qw.as_slice().unwrap(), &pu)
}

/// `I(M;U)`, the accuracy ceiling attained by the identity encoder.
pub fn meaning_information(meanings: &MeaningModel) -> f64 {
    let pu = meanings.marginal_u();
    let p = meanings.prior().as_slice();
    let mut total = 0.0;
    for (t, row) in meanings.matrix().rows().into_iter().enumerate() {
        if p[t] == 0.0 {
            continue;
        }
        let s: f64 = row.iter().zip(&pu).map(|(&m, &u)| plog2(m, u)).sum();
        total += p[t] * s;
    }
    total.max(0.0)
}

/// Expected KL between speaker meaning and Bayesian listener reconstruction,
/// computed as `I(M;U) − I(W;U)`.
pub fn communicative_cost(system: &NamingSystem, meanings: &MeaningModel) -> f64 {
    (meaning_information(meanings) - accuracy(system, meanings)).max(0.0)
}

/// IB objective `I(M;W) − β I(W;U)`.
pub fn ib_objective(system: &NamingSystem, meanings: &MeaningModel, beta: f64) -> f64 {
    complexity(system, meanings) - beta * accuracy(system, meanings)
}

/// The complexity/accuracy pair of a system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tradeoff {
    pub complexity: f64,
    pub accuracy: f64,
}

pub fn tradeoff(system: &NamingSystem, meanings: &MeaningModel) -> Tradeoff {
    Tradeoff {
        complexity: complexity(system, meanings),
        accuracy: accuracy(system, meanings),
    }
}
