//! Synthetic arrangement task.
//!
//! Every sample is a full token grid: identical background tokens plus one
//! marker and one twin placed on adjacent cells. The label is the direction
//! (up/down/left/right) from marker to twin. The token multiset is the same
//! for every class by construction, so any position-blind model sits at
//! chance; the label depends only on the relative arrangement, so it is
//! invariant under global translation of the positions.

use anyhow::{bail, Result};

use pape_core::array::DenseArray;
use pape_core::geometry::PositionSet;
use pape_core::rng::SeedRng;

use crate::config::TaskConfig;

pub const NUM_CLASSES: usize = 4;
/// Class index -> displacement from marker to twin, in grid axes.
pub const DIRECTIONS: [(i64, i64); NUM_CLASSES] = [(0, 1), (0, -1), (1, 0), (-1, 0)];

#[derive(Clone, Debug)]
pub struct ToySample {
    pub tokens: DenseArray<f64>,
    pub label: usize,
    /// Grid cell indices of the special tokens, for inspection.
    pub marker_cell: usize,
    pub twin_cell: usize,
}

#[derive(Clone, Debug)]
pub struct ToyData {
    /// Shared positions of the grid every sample lives on.
    pub positions: PositionSet<f64>,
    pub grid: Vec<usize>,
    pub train: Vec<ToySample>,
    pub test: Vec<ToySample>,
    /// Token vectors per type (background, marker, twin).
    pub type_table: DenseArray<f64>,
}

/// Direction label from marker and twin positions. A function of the
/// difference only, hence translation invariant.
pub fn label_of(marker: (i64, i64), twin: (i64, i64)) -> Option<usize> {
    let delta = (twin.0 - marker.0, twin.1 - marker.1);
    DIRECTIONS.iter().position(|&d| d == delta)
}

/// Generate balanced train/test splits on a `grid` of tokens of width `d`.
/// The type embedding table and all placements derive from `seed` alone, so
/// runs that differ only in encoding see identical data.
pub fn generate(task: &TaskConfig, d: usize, seed: u64) -> Result<ToyData> {
    if task.grid.len() != 2 {
        bail!("the arrangement task wants a 2-D grid, got {:?}", task.grid);
    }
    let (gx, gy) = (task.grid[0], task.grid[1]);
    if gx < 3 || gy < 3 {
        bail!("grid must be at least 3 x 3 to place motifs away from edges");
    }
    let positions = PositionSet::grid(&task.grid)?;
    let mut embed_rng = SeedRng::derive(seed, "task-embed");
    let type_table: DenseArray<f64> = embed_rng.array_normal(&[3, d], 0.0, 1.0);

    let mut sample_rng = SeedRng::derive(seed, "task-samples");
    let train = make_split(task.train_samples, gx, gy, d, &type_table, &mut sample_rng)?;
    let test = make_split(task.test_samples, gx, gy, d, &type_table, &mut sample_rng)?;
    Ok(ToyData {
        positions,
        grid: task.grid.clone(),
        train,
        test,
        type_table,
    })
}

/// Samples for an enlarged evaluation grid (extrapolation); token types and
/// the motif distribution stay identical, only the board grows.
pub fn generate_eval_grid(
    grid: &[usize],
    samples: usize,
    d: usize,
    type_table: &DenseArray<f64>,
    seed: u64,
) -> Result<(PositionSet<f64>, Vec<ToySample>)> {
    let positions = PositionSet::grid(grid)?;
    let mut rng = SeedRng::derive(seed, &format!("task-eval-{}x{}", grid[0], grid[1]));
    let split = make_split(samples, grid[0], grid[1], d, type_table, &mut rng)?;
    Ok((positions, split))
}

fn make_split(
    count: usize,
    gx: usize,
    gy: usize,
    d: usize,
    type_table: &DenseArray<f64>,
    rng: &mut SeedRng,
) -> Result<Vec<ToySample>> {
    let rounded = (count / NUM_CLASSES) * NUM_CLASSES;
    if rounded == 0 {
        bail!("split needs at least {} samples", NUM_CLASSES);
    }
    // exactly balanced labels, order shuffled
    let mut labels: Vec<usize> = (0..rounded).map(|i| i % NUM_CLASSES).collect();
    rng.shuffle(&mut labels);
    labels
        .into_iter()
        .map(|label| make_sample(label, gx, gy, d, type_table, rng))
        .collect()
}

fn make_sample(
    label: usize,
    gx: usize,
    gy: usize,
    d: usize,
    type_table: &DenseArray<f64>,
    rng: &mut SeedRng,
) -> Result<ToySample> {
    let (dx, dy) = DIRECTIONS[label];
    // marker cell uniform over placements that keep the twin on the board
    let (mx, my) = loop {
        let mx = 1 + rng.usize_below(gx) as i64;
        let my = 1 + rng.usize_below(gy) as i64;
        let (tx, ty) = (mx + dx, my + dy);
        if tx >= 1 && tx <= gx as i64 && ty >= 1 && ty <= gy as i64 {
            break (mx, my);
        }
    };
    let (tx, ty) = (mx + dx, my + dy);
    let cell = |x: i64, y: i64| ((x - 1) as usize) * gy + (y - 1) as usize;
    let marker_cell = cell(mx, my);
    let twin_cell = cell(tx, ty);
    let n = gx * gy;
    let mut tokens = DenseArray::zeros(&[n, d]);
    for i in 0..n {
        let ty_idx = if i == marker_cell {
            1
        } else if i == twin_cell {
            2
        } else {
            0
        };
        tokens.row_mut(i).copy_from_slice(type_table.row(ty_idx));
    }
    Ok(ToySample {
        tokens,
        label,
        marker_cell,
        twin_cell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> TaskConfig {
        TaskConfig {
            grid: vec![5, 5],
            train_samples: 40,
            test_samples: 20,
        }
    }

    #[test]
    fn splits_are_balanced_and_reproducible() {
        let a = generate(&task(), 8, 7).unwrap();
        let b = generate(&task(), 8, 7).unwrap();
        assert_eq!(a.train.len(), 40);
        assert_eq!(a.test.len(), 20);
        for label in 0..NUM_CLASSES {
            assert_eq!(a.test.iter().filter(|s| s.label == label).count(), 5);
        }
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.label, y.label);
            assert_eq!(x.tokens, y.tokens);
        }
    }

    #[test]
    fn label_depends_only_on_relative_arrangement() {
        for (label, &(dx, dy)) in DIRECTIONS.iter().enumerate() {
            for shift in [(0, 0), (7, -3), (100, 100)] {
                let marker = (2 + shift.0, 2 + shift.1);
                let twin = (marker.0 + dx, marker.1 + dy);
                assert_eq!(label_of(marker, twin), Some(label));
            }
        }
        assert_eq!(label_of((1, 1), (3, 1)), None);
    }

    #[test]
    fn token_multiset_is_identical_across_classes() {
        let data = generate(&task(), 6, 11).unwrap();
        let canonical = |s: &ToySample| {
            let mut rows: Vec<Vec<u64>> = (0..s.tokens.rows())
                .map(|i| s.tokens.row(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        let reference = canonical(&data.train[0]);
        for s in data.train.iter().chain(&data.test) {
            assert_eq!(canonical(s), reference);
        }
    }

    #[test]
    fn marker_and_twin_are_adjacent_on_the_grid() {
        let data = generate(&task(), 6, 13).unwrap();
        for s in &data.train {
            let m = data.positions.row(s.marker_cell);
            let t = data.positions.row(s.twin_cell);
            let (dx, dy) = DIRECTIONS[s.label];
            assert_eq!(t[0] - m[0], dx as f64);
            assert_eq!(t[1] - m[1], dy as f64);
        }
    }
}
