//! Batches with equal counts in every (class, domain) cell.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{Error, Result};

/// Cycles through a fresh permutation of each cell, reshuffling a cell when
/// it runs out. Short cells are therefore oversampled, and within a cell
/// every sample is drawn equally often up to one.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    cells: Vec<Vec<usize>>,
    pools: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    per_cell: usize,
}

impl BalancedSampler {
    /// `classes[i]`, `domains[i]` label sample `i`. Every one of the
    /// `n_classes × 2` cells must be nonempty.
    pub fn new(classes: &[usize], domains: &[u8], n_classes: usize, batch_size: usize) -> Result<Self> {
        let n_cells = n_classes * 2;
        if n_classes == 0 || batch_size == 0 || !batch_size.is_multiple_of(n_cells) {
            return Err(Error::Config(format!(
                "batch size {batch_size} must be a positive multiple of {n_cells} (classes × domains)"
            )));
        }
        if classes.len() != domains.len() {
            return Err(Error::DimensionMismatch("class and domain labels differ in length".into()));
        }
        let mut cells = vec![Vec::new(); n_cells];
        for (i, (&c, &d)) in classes.iter().zip(domains).enumerate() {
            if c >= n_classes || d > 1 {
                return Err(Error::InvalidBatch(format!("sample {i} has label ({c}, {d}) out of range")));
            }
            cells[c * 2 + d as usize].push(i);
        }
        if let Some(empty) = cells.iter().position(Vec::is_empty) {
            return Err(Error::InvalidBatch(format!(
                "cell (class {}, domain {}) is empty",
                empty / 2,
                empty % 2
            )));
        }
        Ok(Self {
            pools: vec![Vec::new(); n_cells],
            cursors: vec![0; n_cells],
            cells,
            per_cell: batch_size / n_cells,
        })
    }

    pub fn per_cell(&self) -> usize {
        self.per_cell
    }

    /// Batches per epoch: enough for the largest cell to be seen once.
    pub fn batches_per_epoch(&self) -> usize {
        let largest = self.cells.iter().map(Vec::len).max().unwrap_or(0);
        largest.div_ceil(self.per_cell)
    }

    fn draw<R: Rng + ?Sized>(&mut self, cell: usize, rng: &mut R) -> usize {
        if self.cursors[cell] >= self.pools[cell].len() {
            let mut perm = self.cells[cell].clone();
            perm.shuffle(rng);
            self.pools[cell] = perm;
            self.cursors[cell] = 0;
        }
        let i = self.pools[cell][self.cursors[cell]];
        self.cursors[cell] += 1;
        i
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.per_cell * self.cells.len());
        for cell in 0..self.cells.len() {
            for _ in 0..self.per_cell {
                batch.push(self.draw(cell, rng));
            }
        }
        batch
    }

    pub fn epoch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<usize>> {
        (0..self.batches_per_epoch()).map(|_| self.next_batch(rng)).collect()
    }
}
