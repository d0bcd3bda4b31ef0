//! 3D window partitioning with cyclic shift and replication padding.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::{TensorError, Var};

/// Additive score for token pairs from different shifted regions.
pub const MASK_VALUE: f64 = -1.0e9;

/// Index plan mapping a `T×H×W` token grid onto a batch of windows.
///
/// Partition pads every axis by replicating its last slice up to a multiple
/// of the window size, rolls the padded grid by `-shift`, and cuts it into
/// non-overlapping windows. Reverse undoes the roll and drops the padding.
#[derive(Debug)]
pub struct WindowLayout {
    pub grid: [usize; 3],
    pub window: [usize; 3],
    pub shift: [usize; 3],
    pub padded: [usize; 3],
    /// Source token for each (window, position) slot.
    partition_src: Vec<usize>,
    /// Window-batch row holding each grid token.
    reverse_src: Vec<usize>,
}

impl WindowLayout {
    pub fn new(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Result<Self, TensorError> {
        for d in 0..3 {
            if grid[d] == 0 || window[d] == 0 {
                return Err(TensorError::InvalidArgument {
                    op: "window_partition",
                    reason: format!("grid {grid:?} and window {window:?} must be positive"),
                });
            }
            if shift[d] >= window[d] {
                return Err(TensorError::InvalidArgument {
                    op: "window_partition",
                    reason: format!("shift {shift:?} must be smaller than window {window:?} on every axis"),
                });
            }
        }
        let padded = [0, 1, 2].map(|d| grid[d].div_ceil(window[d]) * window[d]);
        let counts = [0, 1, 2].map(|d| padded[d] / window[d]);
        let per_window = window[0] * window[1] * window[2];
        let num_windows = counts[0] * counts[1] * counts[2];

        let mut partition_src = Vec::with_capacity(num_windows * per_window);
        for wt in 0..counts[0] {
            for wh in 0..counts[1] {
                for ww in 0..counts[2] {
                    for lt in 0..window[0] {
                        for lh in 0..window[1] {
                            for lw in 0..window[2] {
                                let pos = [wt * window[0] + lt, wh * window[1] + lh, ww * window[2] + lw];
                                let src = [0, 1, 2].map(|d| ((pos[d] + shift[d]) % padded[d]).min(grid[d] - 1));
                                partition_src.push((src[0] * grid[1] + src[1]) * grid[2] + src[2]);
                            }
                        }
                    }
                }
            }
        }

        let mut reverse_src = Vec::with_capacity(grid[0] * grid[1] * grid[2]);
        for t in 0..grid[0] {
            for h in 0..grid[1] {
                for w in 0..grid[2] {
                    let p = [t, h, w];
                    let q = [0, 1, 2].map(|d| (p[d] + padded[d] - shift[d]) % padded[d]);
                    let win = ((q[0] / window[0]) * counts[1] + q[1] / window[1]) * counts[2] + q[2] / window[2];
                    let local = ((q[0] % window[0]) * window[1] + q[1] % window[1]) * window[2] + q[2] % window[2];
                    reverse_src.push(win * per_window + local);
                }
            }
        }

        Ok(WindowLayout {
            grid,
            window,
            shift,
            padded,
            partition_src,
            reverse_src,
        })
    }

    pub fn num_windows(&self) -> usize {
        (0..3).map(|d| self.padded[d] / self.window[d]).product()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window.iter().product()
    }

    pub fn is_shifted(&self) -> bool {
        self.shift.iter().any(|&s| s > 0)
    }

    /// `[T, H, W, C]` grid to `[windows, tokens, C]`.
    pub fn partition(&self, grid: &Var) -> Result<Var, TensorError> {
        let c = self.check_grid(grid)?;
        let index = expand_tokens(&self.partition_src, c);
        grid.gather(Rc::new(index), &[self.num_windows(), self.tokens_per_window(), c])
    }

    /// `[windows, tokens, C]` (or any shape with that many rows) back to `[T, H, W, C]`.
    pub fn reverse(&self, windows: &Var) -> Result<Var, TensorError> {
        let rows = self.num_windows() * self.tokens_per_window();
        let c = *windows.shape().last().expect("rank >= 1");
        if windows.numel() != rows * c {
            return Err(TensorError::ShapeMismatch {
                op: "window_reverse",
                lhs: windows.shape().to_vec(),
                rhs: vec![self.num_windows(), self.tokens_per_window(), c],
            });
        }
        let index = expand_tokens(&self.reverse_src, c);
        windows.gather(Rc::new(index), &[self.grid[0], self.grid[1], self.grid[2], c])
    }

    fn check_grid(&self, grid: &Var) -> Result<usize, TensorError> {
        let s = grid.shape();
        if s.len() != 4 || s[..3] != self.grid {
            return Err(TensorError::ShapeMismatch {
                op: "window_partition",
                lhs: s.to_vec(),
                rhs: self.grid.to_vec(),
            });
        }
        Ok(s[3])
    }

    /// Additive attention mask `[windows, tokens, tokens]`: 0 for pairs in the
    /// same shifted region, [`MASK_VALUE`] otherwise. `None` when unshifted.
    pub fn attention_mask(&self) -> Option<Vec<f64>> {
        if !self.is_shifted() {
            return None;
        }
        let region = |d: usize, c: usize| -> usize {
            let (size, w, s) = (self.padded[d], self.window[d], self.shift[d]);
            if s == 0 || c < size - w {
                0
            } else if c < size - s {
                1
            } else {
                2
            }
        };
        let counts = [0, 1, 2].map(|d| self.padded[d] / self.window[d]);
        let n = self.tokens_per_window();
        let mut mask = Vec::with_capacity(self.num_windows() * n * n);
        for wt in 0..counts[0] {
            for wh in 0..counts[1] {
                for ww in 0..counts[2] {
                    let mut labels = Vec::with_capacity(n);
                    for lt in 0..self.window[0] {
                        for lh in 0..self.window[1] {
                            for lw in 0..self.window[2] {
                                let pos = [wt * self.window[0] + lt, wh * self.window[1] + lh, ww * self.window[2] + lw];
                                labels.push(region(0, pos[0]) * 9 + region(1, pos[1]) * 3 + region(2, pos[2]));
                            }
                        }
                    }
                    for i in 0..n {
                        for j in 0..n {
                            mask.push(if labels[i] == labels[j] { 0.0 } else { MASK_VALUE });
                        }
                    }
                }
            }
        }
        Some(mask)
    }
}

fn expand_tokens(tokens: &[usize], channels: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(tokens.len() * channels);
    for &t in tokens {
        out.extend(t * channels..(t + 1) * channels);
    }
    out
}

/// Window and shift actually used on a grid: axes no longer than the window
/// collapse to a single unshifted window.
pub fn effective_window(grid: [usize; 3], window: [usize; 3], shifted: bool) -> ([usize; 3], [usize; 3]) {
    let mut win = window;
    let mut shift = [0; 3];
    for d in 0..3 {
        if grid[d] <= window[d] {
            win[d] = grid[d];
        } else if shifted {
            shift[d] = window[d] / 2;
        }
    }
    (win, shift)
}

/// Index into a `(2Wt-1)(2Wh-1)(2Ww-1)` relative-position table for every
/// token pair of an `actual` window, where the table is sized for `table`.
pub fn relative_position_index(actual: [usize; 3], table: [usize; 3]) -> Vec<usize> {
    let coords: Vec<[usize; 3]> = (0..actual[0])
        .flat_map(|t| (0..actual[1]).flat_map(move |h| (0..actual[2]).map(move |w| [t, h, w])))
        .collect();
    let spans = table.map(|w| 2 * w - 1);
    let mut out = Vec::with_capacity(coords.len() * coords.len());
    for a in &coords {
        for b in &coords {
            let rel = [0, 1, 2].map(|d| a[d] + table[d] - 1 - b[d]);
            out.push((rel[0] * spans[1] + rel[1]) * spans[2] + rel[2]);
        }
    }
    out
}

thread_local! {
    static LAYOUTS: RefCell<HashMap<([usize; 3], [usize; 3], [usize; 3]), Rc<WindowLayout>>> = RefCell::new(HashMap::new());
}

/// Cached [`WindowLayout`] for this thread.
pub fn layout(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Result<Rc<WindowLayout>, TensorError> {
    let key = (grid, window, shift);
    if let Some(l) = LAYOUTS.with(|m| m.borrow().get(&key).cloned()) {
        return Ok(l);
    }
    let l = Rc::new(WindowLayout::new(grid, window, shift)?);
    LAYOUTS.with(|m| m.borrow_mut().insert(key, l.clone()));
    Ok(l)
}
