//! Shared data model: universes of referents, need priors, speaker meanings,
//! and soft / hard category systems over them.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for probability-vector validity.
pub const PROB_TOL: f64 = 1e-12;

/// Position of a referent on a 2D layout grid (WCS rows A..J are 0..9, columns 0..40).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub row: u8,
    pub col: u8,
}

impl GridPos {
    pub fn row_letter(&self) -> char {
        (b'A' + self.row) as char
    }
}

/// A finite set of referents `0..n` with perceptual coordinates.
///
/// Coordinates are stored padded to three components; `dim` records how many
/// are meaningful (3 for CIELAB, 1 for angles).
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    dim: usize,
    coords: Vec<[f64; 3]>,
    grid: Option<Vec<GridPos>>,
}

impl Universe {
    /// Build a universe from per-referent coordinate rows of equal length 1..=3.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.is_empty() {
            return Err(Error::invalid("universe must contain at least one referent"));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("coordinate dimension {dim} not in 1..=3")));
        }
        let mut coords = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::invalid(format!(
                    "referent {i} has {} coordinates, expected {dim}",
                    r.len()
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("referent {i} has a non-finite coordinate")));
            }
            let mut p = [0.0; 3];
            p[..dim].copy_from_slice(r);
            coords.push(p);
        }
        Ok(Universe {
            dim,
            coords,
            grid: None,
        })
    }

    /// Attach grid positions; they must be unique and one per referent.
    pub fn with_grid(mut self, grid: Vec<GridPos>) -> Result<Self> {
        if grid.len() != self.coords.len() {
            return Err(Error::invalid(format!(
                "{} grid positions for {} referents",
                grid.len(),
                self.coords.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(grid.len());
        for g in &grid {
            if !seen.insert(*g) {
                return Err(Error::invalid(format!(
                    "duplicate grid position {}{}",
                    g.row_letter(),
                    g.col
                )));
            }
        }
        self.grid = Some(grid);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coord(&self, i: usize) -> &[f64; 3] {
        &self.coords[i]
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn grid(&self) -> Option<&[GridPos]> {
        self.grid.as_deref()
    }

    /// Largest bounding-box extent over the meaningful axes; 1 when all points coincide.
    pub fn coordinate_scale(&self) -> f64 {
        let mut scale: f64 = 0.0;
        for d in 0..self.dim {
            let (lo, hi) = self
                .coords
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[d]), hi.max(p[d]))
                });
            scale = scale.max(hi - lo);
        }
        if scale > 0.0 {
            scale
        } else {
            1.0
        }
    }

    /// Apply an arbitrary map to every coordinate (used for isometry checks).
    pub fn map_coords(&self, f: impl Fn(&[f64; 3]) -> [f64; 3]) -> Self {
        Universe {
            dim: self.dim,
            coords: self.coords.iter().map(f).collect(),
            grid: self.grid.clone(),
        }
    }
}

pub fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

/// Communicative-need distribution over referents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior(Vec<f64>);

impl Prior {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_prob_vector(&p).map_err(|e| Error::invalid(format!("prior: {e}")))?;
        Ok(Prior(p))
    }

    pub fn uniform(n: usize) -> Self {
        Prior(vec![1.0 / n as f64; n])
    }

    /// Normalize nonnegative weights into a prior.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("prior weights must be finite and nonnegative"));
        }
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return Err(Error::invalid("prior weights sum to zero"));
        }
        Prior::new(w.into_iter().map(|x| x / s).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_prob_vector(p: &[f64]) -> std::result::Result<(), String> {
    if p.is_empty() {
        return Err("empty probability vector".into());
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("entry {x} is negative or non-finite"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(format!("sums to {s}"));
    }
    Ok(())
}

fn check_row_stochastic(m: &Array2<f64>, what: &str) -> Result<()> {
    for (t, row) in m.axis_iter(Axis(0)).enumerate() {
        let row = row.to_vec();
        check_prob_vector(&row).map_err(|e| Error::invalid(format!("{what} row {t}: {e}")))?;
    }
    Ok(())
}

/// Speaker meanings `m_t(u)` (row `t`) together with the need prior over `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeaningModel {
    m: Array2<f64>,
    prior: Prior,
}

impl MeaningModel {
    pub fn new(m: Array2<f64>, prior: Prior) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "meaning matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if prior.len() != m.nrows() {
            return Err(Error::invalid(format!(
                "prior has {} entries for {} referents",
                prior.len(),
                m.nrows()
            )));
        }
        check_row_stochastic(&m, "meaning")?;
        Ok(MeaningModel { m, prior })
    }

    /// Speaker certainty: `m_t = δ_t`.
    pub fn identity(prior: Prior) -> Self {
        let n = prior.len();
        MeaningModel {
            m: Array2::eye(n),
            prior,
        }
    }

    pub fn with_prior(&self, prior: Prior) -> Result<Self> {
        MeaningModel::new(self.m.clone(), prior)
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.m.row(t)
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    /// Listener marginal `p(u) = Σ_t p(t) m_t(u)`.
    pub fn marginal_u(&self) -> Vec<f64> {
        let p = ndarray::ArrayView1::from(self.prior.as_slice());
        p.dot(&self.m).to_vec()
    }
}

/// A soft naming system `q(w | m_t)`: an `n × k` row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NamingSystem {
    q: Array2<f64>,
    words: Vec<String>,
}

impl NamingSystem {
    pub fn new(q: Array2<f64>, words: Vec<String>) -> Result<Self> {
        if q.ncols() == 0 {
            return Err(Error::invalid("naming system needs at least one word"));
        }
        if words.len() != q.ncols() {
            return Err(Error::invalid(format!(
                "{} word labels for {} columns",
                words.len(),
                q.ncols()
            )));
        }
        check_row_stochastic(&q, "encoder")?;
        Ok(NamingSystem { q, words })
    }

    /// Encoder with words labelled `"0"`, `"1"`, ...
    pub fn from_matrix(q: Array2<f64>) -> Result<Self> {
        let words = (0..q.ncols()).map(|w| w.to_string()).collect();
        NamingSystem::new(q, words)
    }

    /// Identity encoder: every referent has its own word.
    pub fn identity(n: usize) -> Self {
        NamingSystem::from_matrix(Array2::eye(n)).expect("identity is row-stochastic")
    }

    /// All referents named by one word.
    pub fn single_word(n: usize) -> Self {
        NamingSystem::from_matrix(Array2::ones((n, 1))).expect("constant encoder is valid")
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Reorder referents: row `dest` of the result is row `src[dest]` of `self`.
    pub fn permute_rows(&self, src: &[usize]) -> Self {
        let q = self.q.select(Axis(0), src);
        NamingSystem {
            q,
            words: self.words.clone(),
        }
    }
}

/// A hard partition: each referent mapped to exactly one realized word.
///
/// Word indices are compact (`0..k`), and every word has a nonempty extension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HardPartition {
    assign: Vec<usize>,
    words: Vec<String>,
}

impl HardPartition {
    /// Build from raw labels, pruning unused labels. Realized words keep the
    /// relative order of their raw labels.
    pub fn from_labels(labels: &[usize]) -> Self {
        let names: Vec<String> = {
            let max = labels.iter().copied().max().map_or(0, |m| m + 1);
            (0..max).map(|w| w.to_string()).collect()
        };
        Self::from_labels_named(labels, &names)
    }

    /// Like [`from_labels`](Self::from_labels) with names for the raw labels.
    pub fn from_labels_named(labels: &[usize], names: &[String]) -> Self {
        let max = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut used = vec![false; max];
        for &l in labels {
            used[l] = true;
        }
        let mut remap = vec![usize::MAX; max];
        let mut words = Vec::new();
        for (l, _) in used.iter().enumerate().filter(|(_, u)| **u) {
            remap[l] = words.len();
            words.push(names.get(l).cloned().unwrap_or_else(|| l.to_string()));
        }
        HardPartition {
            assign: labels.iter().map(|&l| remap[l]).collect(),
            words,
        }
    }

    pub fn n(&self) -> usize {
        self.assign.len()
    }

    /// Number of realized words.
    pub fn k(&self) -> usize {
        self.words.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assign
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Referents named by `word`.
    pub fn extension(&self, word: usize) -> Result<Vec<usize>> {
        if word >= self.k() {
            return Err(Error::UnknownWord(word));
        }
        Ok(self
            .assign
            .iter()
            .enumerate()
            .filter(|(_, &w)| w == word)
            .map(|(t, _)| t)
            .collect())
    }

    /// All extensions, indexed by word.
    pub fn extensions(&self) -> Vec<Vec<usize>> {
        let mut ext = vec![Vec::new(); self.k()];
        for (t, &w) in self.assign.iter().enumerate() {
            ext[w].push(t);
        }
        ext
    }

    /// The deterministic encoder inducing this partition.
    pub fn to_system(&self) -> NamingSystem {
        let mut q = Array2::zeros((self.n(), self.k()));
        for (t, &w) in self.assign.iter().enumerate() {
            q[[t, w]] = 1.0;
        }
        NamingSystem::new(q, self.words.clone()).expect("one-hot rows are valid")
    }

    /// Reorder referents: referent `dest` takes the word of referent `src[dest]`.
    pub fn permute(&self, src: &[usize]) -> Self {
        HardPartition {
            assign: src.iter().map(|&s| self.assign[s]).collect(),
            words: self.words.clone(),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Map every referent to its modal word.
pub fn mode_partition(system: &NamingSystem) -> HardPartition {
    let labels: Vec<usize> = system
        .matrix()
        .axis_iter(Axis(0))
        .map(|row| argmax(row.iter().copied()))
        .collect();
    HardPartition::from_labels_named(&labels, system.words())
}

pub fn category_extension(partition: &HardPartition, word: usize) -> Result<Vec<usize>> {
    partition.extension(word)
}

/// Number of distinct modal words.
pub fn count_major_categories(system: &NamingSystem) -> usize {
    mode_partition(system).k()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn identity_encoder_gives_singletons() {
        let p = mode_partition(&NamingSystem::identity(5));
        assert_eq!(p.k(), 5);
        for w in 0..5 {
            assert_eq!(p.extension(w).unwrap(), vec![w]);
        }
    }

    #[test]
    fn uniform_ties_go_to_first_word() {
        let sys = NamingSystem::from_matrix(Array2::from_elem((4, 2), 0.5)).unwrap();
        let p = mode_partition(&sys);
        assert_eq!(p.assignment(), &[0, 0, 0, 0]);
        assert_eq!(p.words(), &["0".to_string()]);
        assert_eq!(count_major_categories(&sys), 1);
    }

    #[test]
    fn unique_argmax() {
        let sys = NamingSystem::from_matrix(array![[0.2, 0.7, 0.1]]).unwrap();
        let p = mode_partition(&sys);
        assert_eq!(p.words(), &["1".to_string()]);
    }

    #[test]
    fn extension_queries() {
        let all = HardPartition::from_labels(&[0, 0, 0]);
        assert_eq!(all.extension(0).unwrap(), vec![0, 1, 2]);
        let p = HardPartition::from_labels(&[0, 0, 1]);
        assert_eq!(category_extension(&p, 1).unwrap(), vec![2]);
        assert!(matches!(p.extension(2), Err(Error::UnknownWord(2))));
    }

    #[test]
    fn pruning_keeps_names() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let p = HardPartition::from_labels_named(&[2, 0, 2], &names);
        assert_eq!(p.words(), &["a".to_string(), "c".to_string()]);
        assert_eq!(p.assignment(), &[1, 0, 1]);
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(Prior::new(vec![0.5, 0.4]).is_err());
        assert!(Prior::new(vec![1.5, -0.5]).is_err());
        assert!(NamingSystem::from_matrix(array![[0.5, 0.6]]).is_err());
        assert!(NamingSystem::from_matrix(Array2::zeros((3, 0))).is_err());
        let m = array![[1.0, 0.0], [0.5, 0.5]];
        assert!(MeaningModel::new(m.clone(), Prior::uniform(3)).is_err());
        assert!(MeaningModel::new(m, Prior::uniform(2)).is_ok());
    }

    #[test]
    fn grid_positions_must_be_unique() {
        let u = Universe::from_rows(&[[0.0], [1.0]]).unwrap();
        let g = GridPos { row: 0, col: 0 };
        assert!(u.clone().with_grid(vec![g, g]).is_err());
        assert!(u.with_grid(vec![g, GridPos { row: 0, col: 1 }]).is_ok());
    }

    fn soft_system(n: usize, k: usize) -> impl Strategy<Value = NamingSystem> {
        proptest::collection::vec(0.0f64..1.0, n * k).prop_map(move |v| {
            let mut q = Array2::from_shape_vec((n, k), v).unwrap();
            for mut row in q.rows_mut() {
                row += 1e-9;
                let s = row.sum();
                row /= s;
            }
            NamingSystem::from_matrix(q).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mode_partition_is_idempotent(sys in soft_system(12, 4)) {
            let p = mode_partition(&sys);
            let again = mode_partition(&p.to_system());
            prop_assert_eq!(&again, &p);
            prop_assert!(count_major_categories(&sys) <= sys.k());
        }

        #[test]
        fn extensions_partition_the_universe(labels in proptest::collection::vec(0usize..6, 1..40)) {
            let p = HardPartition::from_labels(&labels);
            let mut seen = vec![0usize; labels.len()];
            for ext in p.extensions() {
                prop_assert!(!ext.is_empty());
                for t in ext { seen[t] += 1; }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
