//! Synthetic stand-ins for the WCS files, for tests and dry runs when the
//! survey data is not at hand.
//!
//! The chip layout is the real one (rows A–J, hue columns 1–40, achromatic
//! column 0). Coordinates are a smooth approximation of the palette in CIELAB,
//! not the published measurements. Languages are simulated by speakers naming
//! each chip after a noisy nearest focal color. Nothing here is survey data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{sq_dist, GridPos, Universe};
use crate::wcs::{CHIP_FILE, HUE_COLUMNS, LAB_FILE, N_CHIPS, TERM_FILE};

/// Munsell value of each grid row A..J.
const ROW_VALUES: [f64; 10] = [9.5, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.5];

fn munsell_value_to_lightness(v: f64) -> f64 {
    // ASTM D1535 luminance polynomial, then CIE L*.
    let y = 1.1914 * v - 0.22533 * v.powi(2) + 0.23352 * v.powi(3) - 0.020484 * v.powi(4)
        + 0.00081939 * v.powi(5);
    116.0 * (y / 100.0).cbrt() - 16.0
}

/// Grid positions in chip-number order: A0, B0..B40, ..., I0..I40, J0.
pub fn grid_layout() -> Vec<GridPos> {
    let mut g = vec![GridPos { row: 0, col: 0 }];
    for row in 1..=8 {
        for col in 0..=HUE_COLUMNS {
            g.push(GridPos { row, col });
        }
    }
    g.push(GridPos { row: 9, col: 0 });
    debug_assert_eq!(g.len(), N_CHIPS);
    g
}

fn approximate_lab(g: GridPos) -> [f64; 3] {
    let value = ROW_VALUES[g.row as usize];
    let l = munsell_value_to_lightness(value);
    if g.col == 0 {
        return [l, 0.0, 0.0];
    }
    let hue = std::f64::consts::TAU * (g.col as f64 - 1.0) / HUE_COLUMNS as f64 + 0.5;
    // Peak chroma sits at yellow for light rows and drifts to blue-purple for dark ones.
    let peak = 1.6 + (9.0 - value) / 7.0 * 3.2;
    let envelope = (std::f64::consts::PI * (value - 1.0) / 9.0).sin();
    let chroma = envelope * (38.0 + 30.0 * (hue - peak).cos());
    [l, chroma * hue.cos(), chroma * hue.sin()]
}

/// The 330-chip grid with approximate CIELAB coordinates.
pub fn approximate_universe() -> Universe {
    let grid = grid_layout();
    let coords: Vec<[f64; 3]> = grid.iter().map(|&g| approximate_lab(g)).collect();
    Universe::from_rows(&coords)
        .and_then(|u| u.with_grid(grid))
        .expect("layout is valid")
}

/// Write `chip.txt`, `cnum-vhcm-lab-new.txt` and `term.txt` for
/// `languages` simulated languages into `dir`.
pub fn write_dataset(dir: &Path, languages: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = grid_layout();
    let universe = approximate_universe();

    let mut chip = String::new();
    let mut lab = String::from("#cnum\tV\tH\tC\tMunH\tMunV\tL*\ta*\tb*\n");
    for (i, g) in grid.iter().enumerate() {
        let [l, a, b] = *universe.coord(i);
        writeln!(chip, "{}\t{}\t{}\t{}{}", i + 1, g.row_letter(), g.col, g.row_letter(), g.col).unwrap();
        writeln!(
            lab,
            "{}\t{}\t{}\t0\t-\t{}\t{l:.2}\t{a:.2}\t{b:.2}",
            i + 1,
            g.row_letter(),
            g.col,
            ROW_VALUES[g.row as usize]
        )
        .unwrap();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = String::new();
    for lang in 1..=languages {
        let k = 3 + (lang - 1) % 9;
        let focals = rand::seq::index::sample(&mut rng, N_CHIPS, k).into_vec();
        let speakers = 12;
        let tau2 = 2.0 * 18.0f64.powi(2);
        for s in 1..=speakers {
            // each speaker's focal colors are jittered a little
            let jitter: Vec<[f64; 3]> = focals
                .iter()
                .map(|&f| {
                    let c = universe.coord(f);
                    [
                        c[0] + rng.gen_range(-4.0..4.0),
                        c[1] + rng.gen_range(-4.0..4.0),
                        c[2] + rng.gen_range(-4.0..4.0),
                    ]
                })
                .collect();
            for c in 0..N_CHIPS {
                let x = universe.coord(c);
                let w: Vec<f64> = jitter.iter().map(|f| (-sq_dist(x, f) / tau2).exp() + 1e-12).collect();
                let total: f64 = w.iter().sum();
                let mut r = rng.gen::<f64>() * total;
                let mut term = w.len() - 1;
                for (j, wj) in w.iter().enumerate() {
                    if r < *wj {
                        term = j;
                        break;
                    }
                    r -= wj;
                }
                writeln!(terms, "{lang}\t{s}\t{}\tT{}", c + 1, (b'A' + term as u8) as char).unwrap();
            }
        }
    }

    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write(CHIP_FILE, &chip)?;
    write(LAB_FILE, &lab)?;
    write(TERM_FILE, &terms)?;
    Ok(())
}
