//! World Color Survey ingestion and the color-domain constructions built on it:
//! CIELAB universe, Gaussian meanings, modal and probabilistic naming systems,
//! and hue rotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{
    argmax, sq_dist, GridPos, HardPartition, MeaningModel, NamingSystem, Prior, Universe,
};

pub const N_CHIPS: usize = 330;
pub const HUE_COLUMNS: u8 = 40;
pub const CHIP_FILE: &str = "chip.txt";
pub const LAB_FILE: &str = "cnum-vhcm-lab-new.txt";
pub const TERM_FILE: &str = "term.txt";
pub const DEFAULT_SIGMA2: f64 = 64.0;

/// Pooled naming counts for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageNaming {
    pub id: u32,
    /// Term abbreviations, sorted; column `j` of `counts` is `terms[j]`.
    pub terms: Vec<String>,
    /// `330 × T` chip-by-term response counts (chip index = chip number − 1).
    pub counts: Array2<u32>,
}

#[derive(Debug, Clone)]
pub struct WcsDataset {
    /// Referent `i` is chip number `i + 1`.
    pub universe: Universe,
    pub languages: Vec<LanguageNaming>,
    /// Responses dropped because the term code was missing or a placeholder.
    pub dropped_responses: usize,
}

impl WcsDataset {
    pub fn language(&self, id: u32) -> Option<&LanguageNaming> {
        self.languages.iter().find(|l| l.id == id)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

fn fields(line: &str) -> Vec<&str> {
    line.split(['\t', ' ']).filter(|s| !s.is_empty()).collect()
}

fn parse_chip_number(path: &Path, lineno: usize, s: &str) -> Result<usize> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::ingest(path, lineno, format!("bad chip number {s:?}")))?;
    if v.fract() != 0.0 || !(1.0..=N_CHIPS as f64).contains(&v) {
        return Err(Error::ingest(path, lineno, format!("chip number {s} outside 1..={N_CHIPS}")));
    }
    Ok(v as usize)
}

fn parse_grid(path: &Path) -> Result<Vec<GridPos>> {
    let mut grid: Vec<Option<GridPos>> = vec![None; N_CHIPS];
    let mut rows = 0;
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        if f.len() < 3 {
            return Err(Error::ingest(path, lineno, "expected chip, row letter, column"));
        }
        let chip = parse_chip_number(path, lineno, f[0])?;
        let letter = f[1].chars().next().filter(|c| f[1].len() == 1 && ('A'..='J').contains(c));
        let Some(letter) = letter else {
            return Err(Error::ingest(path, lineno, format!("grid row {:?} not in A..J", f[1])));
        };
        let col: u8 = f[2]
            .parse()
            .ok()
            .filter(|c| *c <= HUE_COLUMNS)
            .ok_or_else(|| Error::ingest(path, lineno, format!("grid column {:?} not in 0..=40", f[2])))?;
        if grid[chip - 1].is_some() {
            return Err(Error::ingest(path, lineno, format!("duplicate chip {chip}")));
        }
        grid[chip - 1] = Some(GridPos {
            row: letter as u8 - b'A',
            col,
        });
        rows += 1;
    }
    if rows != N_CHIPS {
        return Err(Error::ingest(path, rows, format!("{rows} chips, expected {N_CHIPS}")));
    }
    Ok(grid.into_iter().map(|g| g.expect("all chips seen")).collect())
}

/// Locate L*, a*, b* columns from a header; falls back to the last three columns.
fn lab_columns(header: Option<&[&str]>, width: usize) -> [usize; 3] {
    if let Some(h) = header {
        let find = |prefix: &str| h.iter().position(|c| c.trim_start_matches('#').starts_with(prefix));
        if let (Some(l), Some(a), Some(b)) = (find("L*"), find("a*"), find("b*")) {
            return [l, a, b];
        }
    }
    [width - 3, width - 2, width - 1]
}

fn parse_lab(path: &Path) -> Result<Vec<[f64; 3]>> {
    let lines = read_lines(path)?;
    let mut coords: Vec<Option<[f64; 3]>> = vec![None; N_CHIPS];
    let mut header: Option<Vec<&str>> = None;
    let mut rows = 0;
    let mut last_line = 0;
    for (i, line) in lines.iter().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        if header.is_none() && rows == 0 && (f[0].starts_with('#') || f[0].parse::<f64>().is_err()) {
            header = Some(f);
            continue;
        }
        let cols = lab_columns(header.as_deref(), f.len());
        if f.len() < 4 || cols.iter().any(|&c| c >= f.len()) {
            return Err(Error::ingest(path, lineno, "expected chip number and L*, a*, b*"));
        }
        let chip = parse_chip_number(path, lineno, f[0])?;
        let mut p = [0.0; 3];
        for (d, &c) in cols.iter().enumerate() {
            p[d] = f[c]
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| Error::ingest(path, lineno, format!("bad coordinate {:?}", f[c])))?;
        }
        if coords[chip - 1].replace(p).is_some() {
            return Err(Error::ingest(path, lineno, format!("duplicate chip {chip}")));
        }
        rows += 1;
        last_line = lineno;
    }
    if rows != N_CHIPS {
        return Err(Error::ingest(path, last_line, format!("{rows} chip rows, expected {N_CHIPS}")));
    }
    coords
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| Error::ingest(path, last_line, format!("missing coordinates for chip {}", i + 1))))
        .collect()
}

fn is_missing_term(t: &str) -> bool {
    t.is_empty() || t.chars().all(|c| c == '*' || c == '?' || c == '-')
}

fn parse_terms(path: &Path) -> Result<(Vec<LanguageNaming>, usize)> {
    // language -> term -> per-chip counts
    let mut raw: BTreeMap<u32, BTreeMap<String, Vec<u32>>> = BTreeMap::new();
    let mut dropped = 0;
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() < 3 {
            return Err(Error::ingest(path, lineno, "expected language, speaker, chip, term"));
        }
        let lang: u32 = f[0]
            .parse()
            .map_err(|_| Error::ingest(path, lineno, format!("bad language number {:?}", f[0])))?;
        f[1].parse::<u32>()
            .map_err(|_| Error::ingest(path, lineno, format!("bad speaker number {:?}", f[1])))?;
        let chip = parse_chip_number(path, lineno, f[2])?;
        let term = f.get(3).copied().unwrap_or("");
        if is_missing_term(term) {
            dropped += 1;
            continue;
        }
        raw.entry(lang)
            .or_default()
            .entry(term.to_string())
            .or_insert_with(|| vec![0; N_CHIPS])[chip - 1] += 1;
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} responses with missing term codes", path.display());
    }
    let mut languages = Vec::with_capacity(raw.len());
    for (id, terms) in raw {
        let names: Vec<String> = terms.keys().cloned().collect();
        let mut counts = Array2::zeros((N_CHIPS, names.len()));
        for (j, per_chip) in terms.values().enumerate() {
            for (c, &n) in per_chip.iter().enumerate() {
                counts[[c, j]] = n;
            }
        }
        if let Some(c) = (0..N_CHIPS).find(|&c| counts.row(c).sum() == 0) {
            return Err(Error::ingest(
                path,
                0,
                format!("language {id}: chip {} has no naming responses", c + 1),
            ));
        }
        languages.push(LanguageNaming {
            id,
            terms: names,
            counts,
        });
    }
    Ok((languages, dropped))
}

/// Load the three WCS files into a 330-chip universe plus per-language counts.
pub fn load_wcs(chip_file: &Path, lab_file: &Path, term_file: &Path) -> Result<WcsDataset> {
    let grid = parse_grid(chip_file)?;
    let coords = parse_lab(lab_file)?;
    let universe = Universe::from_rows(&coords)?
        .with_grid(grid)
        .map_err(|e| Error::ingest(chip_file, 0, e.to_string()))?;
    let (languages, dropped_responses) = parse_terms(term_file)?;
    Ok(WcsDataset {
        universe,
        languages,
        dropped_responses,
    })
}

/// Paths of the standard WCS file names inside `dir`.
pub fn standard_paths(dir: &Path) -> [PathBuf; 3] {
    [dir.join(CHIP_FILE), dir.join(LAB_FILE), dir.join(TERM_FILE)]
}

pub fn load_wcs_dir(dir: &Path) -> Result<WcsDataset> {
    let [c, l, t] = standard_paths(dir);
    load_wcs(&c, &l, &t)
}

/// Modal map: each chip goes to its most frequent term (ties to the lowest term index).
pub fn modal_system(lang: &LanguageNaming) -> HardPartition {
    let labels: Vec<usize> = lang
        .counts
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().map(|&c| c as f64)))
        .collect();
    HardPartition::from_labels_named(&labels, &lang.terms)
}

/// Relative term frequencies per chip.
pub fn probabilistic_system(lang: &LanguageNaming) -> NamingSystem {
    let mut q = lang.counts.mapv(|c| c as f64);
    for mut row in q.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    NamingSystem::new(q, lang.terms.clone()).expect("every chip has a response")
}

/// Source index for every destination chip under a hue rotation by `r` columns.
/// Chromatic chip `(row, col)` moves to `(row, 1 + (col − 1 + r) mod 40)`;
/// column 0 stays fixed.
pub fn rotation_sources(universe: &Universe, r: u8) -> Result<Vec<usize>> {
    if !(1..HUE_COLUMNS).contains(&r) {
        return Err(Error::invalid(format!("rotation {r} not in 1..=39")));
    }
    let grid = universe
        .grid()
        .ok_or_else(|| Error::invalid("rotation needs grid positions"))?;
    let index: std::collections::HashMap<GridPos, usize> =
        grid.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    grid.iter()
        .enumerate()
        .map(|(i, g)| {
            if g.col == 0 {
                return Ok(i);
            }
            let src_col = 1 + (g.col - 1 + HUE_COLUMNS - r) % HUE_COLUMNS;
            index
                .get(&GridPos {
                    row: g.row,
                    col: src_col,
                })
                .copied()
                .ok_or_else(|| {
                    Error::invalid(format!("grid row {} lacks column {src_col}", g.row_letter()))
                })
        })
        .collect()
}

pub fn rotate_system(system: &NamingSystem, universe: &Universe, r: u8) -> Result<NamingSystem> {
    Ok(system.permute_rows(&rotation_sources(universe, r)?))
}

pub fn rotate_partition(partition: &HardPartition, universe: &Universe, r: u8) -> Result<HardPartition> {
    Ok(partition.permute(&rotation_sources(universe, r)?))
}

/// `m_t(u) ∝ exp(−‖x_u − x_t‖² / 2σ²)`, rows normalized.
pub fn gaussian_meanings(universe: &Universe, sigma2: f64, prior: Prior) -> Result<MeaningModel> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    let n = universe.len();
    let mut m = Array2::from_shape_fn((n, n), |(t, u)| {
        (-sq_dist(universe.coord(t), universe.coord(u)) / (2.0 * sigma2)).exp()
    });
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    MeaningModel::new(m, prior)
}

/// Read a need prior: one weight per line (in chip order) or `chip<sep>weight`
/// pairs; `#` starts a comment; a non-numeric first line is a header.
/// Weights are normalized.
pub fn read_prior(path: &Path, n: usize) -> Result<Prior> {
    let mut w = vec![f64::NAN; n];
    let mut next = 0;
    let mut seen = BTreeSet::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let lineno = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split([',', '\t', ' ']).filter(|s| !s.is_empty()).collect();
        let nums: Option<Vec<f64>> = f.iter().map(|s| s.parse().ok()).collect();
        let Some(nums) = nums else {
            if lineno == 1 {
                continue;
            }
            return Err(Error::ingest(path, lineno, "non-numeric prior row"));
        };
        let (idx, val) = match nums.as_slice() {
            [v] => {
                next += 1;
                (next - 1, *v)
            }
            [c, v] if c.fract() == 0.0 && *c >= 1.0 => (*c as usize - 1, *v),
            _ => return Err(Error::ingest(path, lineno, "expected `weight` or `chip, weight`")),
        };
        if idx >= n || !seen.insert(idx) {
            return Err(Error::ingest(path, lineno, format!("prior index {} invalid or repeated", idx + 1)));
        }
        w[idx] = val;
    }
    if seen.len() != n {
        return Err(Error::ingest(path, 0, format!("{} prior entries, expected {n}", seen.len())));
    }
    Prior::from_weights(w).map_err(|e| Error::ingest(path, 0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_major_categories;
    use crate::synthetic;

    fn lang(counts: Vec<Vec<u32>>) -> LanguageNaming {
        let t = counts[0].len();
        let n = counts.len();
        LanguageNaming {
            id: 1,
            terms: (0..t).map(|j| format!("t{j}")).collect(),
            counts: Array2::from_shape_vec((n, t), counts.concat()).unwrap(),
        }
    }

    #[test]
    fn modal_and_probabilistic_rows() {
        let l = lang(vec![vec![5, 2], vec![3, 3], vec![5, 5], vec![10, 0], vec![0, 4]]);
        let p = modal_system(&l);
        assert_eq!(p.assignment(), &[0, 0, 0, 0, 1]);
        let q = probabilistic_system(&l);
        assert_eq!(q.matrix().row(2).to_vec(), vec![0.5, 0.5]);
        assert_eq!(q.matrix().row(3).to_vec(), vec![1.0, 0.0]);
        assert_eq!(crate::model::mode_partition(&q), p);
    }

    #[test]
    fn gaussian_rows_peak_at_center() {
        let u = synthetic::approximate_universe();
        let mm = gaussian_meanings(&u, DEFAULT_SIGMA2, Prior::uniform(N_CHIPS)).unwrap();
        for (t, row) in mm.matrix().rows().into_iter().enumerate() {
            assert_eq!(argmax(row.iter().copied()), t);
            assert!(row.iter().all(|&x| x > 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let flat = gaussian_meanings(&u, 1e9, Prior::uniform(N_CHIPS)).unwrap();
        let unif = 1.0 / N_CHIPS as f64;
        assert!(flat.matrix().iter().all(|&x| (x - unif).abs() < 1e-6));
        let sharp = gaussian_meanings(&u, 1e-3, Prior::uniform(N_CHIPS)).unwrap();
        assert!(sharp.matrix()[[17, 17]] > 0.999);
        assert!(gaussian_meanings(&u, 0.0, Prior::uniform(N_CHIPS)).is_err());
    }

    #[test]
    fn rotations_compose_and_fix_achromatic() {
        let u = synthetic::approximate_universe();
        assert!(rotation_sources(&u, 0).is_err());
        assert!(rotation_sources(&u, 40).is_err());
        let labels: Vec<usize> = (0..N_CHIPS).map(|i| (i * 7) % 11).collect();
        let p = HardPartition::from_labels(&labels);
        let grid = u.grid().unwrap();
        for r in [1u8, 13, 39] {
            let rp = rotate_partition(&p, &u, r).unwrap();
            let back = rotate_partition(&rp, &u, HUE_COLUMNS - r).unwrap();
            assert_eq!(back, p);
            assert_eq!(rp.k(), p.k());
            for (i, g) in grid.iter().enumerate() {
                if g.col == 0 {
                    assert_eq!(rp.assignment()[i], p.assignment()[i]);
                }
            }
            let r2 = rotate_partition(&rotate_partition(&p, &u, r).unwrap(), &u, 5).unwrap();
            let direct = if (r + 5) % HUE_COLUMNS == 0 {
                p.clone()
            } else {
                rotate_partition(&p, &u, (r + 5) % HUE_COLUMNS).unwrap()
            };
            assert_eq!(r2, direct);
        }
        // a chip at (row, 1) moves to (row, 1 + r)
        let src = rotation_sources(&u, 3).unwrap();
        let pos = |row, col| grid.iter().position(|g| *g == GridPos { row, col }).unwrap();
        assert_eq!(src[pos(2, 4)], pos(2, 1));
        assert_eq!(src[pos(2, 2)], pos(2, 39));
        let sys = p.to_system();
        let rs = rotate_system(&sys, &u, 7).unwrap();
        assert_eq!(count_major_categories(&rs), count_major_categories(&sys));
    }

    #[test]
    fn loads_synthetic_files_and_filters() {
        let dir = tempfile::tempdir().unwrap();
        synthetic::write_dataset(dir.path(), 4, 11).unwrap();
        let ds = load_wcs_dir(dir.path()).unwrap();
        assert_eq!(ds.universe.len(), N_CHIPS);
        assert_eq!(ds.languages.len(), 4);
        let grid = ds.universe.grid().unwrap();
        assert!(grid.iter().filter(|g| g.col == 0).count() == 10);
        assert!(grid.iter().all(|g| g.row < 10 && g.col <= 40));

        // one language only
        let terms = fs::read_to_string(dir.path().join(TERM_FILE)).unwrap();
        let one: String = terms.lines().filter(|l| l.starts_with("2\t")).map(|l| format!("{l}\n")).collect();
        let path = dir.path().join("one.txt");
        fs::write(&path, one).unwrap();
        let [c, l, _] = standard_paths(dir.path());
        let ds1 = load_wcs(&c, &l, &path).unwrap();
        assert_eq!(ds1.languages.len(), 1);
        assert_eq!(ds1.languages[0].id, 2);
    }

    #[test]
    fn rejects_short_lab_file() {
        let dir = tempfile::tempdir().unwrap();
        synthetic::write_dataset(dir.path(), 1, 3).unwrap();
        let [c, l, t] = standard_paths(dir.path());
        let text = fs::read_to_string(&l).unwrap();
        let short: Vec<&str> = text.lines().take(N_CHIPS).collect(); // header + 329 rows
        fs::write(&l, short.join("\n")).unwrap();
        let err = load_wcs(&c, &l, &t).unwrap_err();
        assert!(matches!(err, Error::Ingest { .. }), "{err}");
        assert!(err.to_string().contains(LAB_FILE), "{err}");
    }

    #[test]
    fn rejects_malformed_rows_with_location() {
        let dir = tempfile::tempdir().unwrap();
        synthetic::write_dataset(dir.path(), 1, 3).unwrap();
        let [c, l, t] = standard_paths(dir.path());
        let mut text = fs::read_to_string(&c).unwrap();
        text = text.replacen("\tA\t", "\tZ\t", 1);
        fs::write(&c, text).unwrap();
        let err = load_wcs(&c, &l, &t).unwrap_err().to_string();
        assert!(err.contains("chip.txt:") && err.contains("not in A..J"), "{err}");
    }

    #[test]
    fn missing_terms_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        synthetic::write_dataset(dir.path(), 1, 5).unwrap();
        let [c, l, t] = standard_paths(dir.path());
        let mut text = fs::read_to_string(&t).unwrap();
        text.push_str("1\t99\t5\t*\n1\t99\t6\t\n");
        fs::write(&t, text).unwrap();
        let ds = load_wcs(&c, &l, &t).unwrap();
        assert_eq!(ds.dropped_responses, 2);
    }

    #[test]
    fn prior_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("p1.txt");
        fs::write(&p1, "# need\n1\n1\n2\n").unwrap();
        assert_eq!(read_prior(&p1, 3).unwrap().as_slice(), &[0.25, 0.25, 0.5]);
        let p2 = dir.path().join("p2.csv");
        fs::write(&p2, "chip,p\n3,0.5\n1,0.25\n2,0.25\n").unwrap();
        assert_eq!(read_prior(&p2, 3).unwrap().as_slice(), &[0.25, 0.25, 0.5]);
        assert!(read_prior(&p2, 4).is_err());
    }
}
