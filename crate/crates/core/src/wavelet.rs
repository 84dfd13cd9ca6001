//! Orthonormal 2-D Haar transform.
//!
//! One level maps each 2x2 block `[a b; c d]` to
//! `ll = (a+b+c+d)/2`, `lh = (a-b+c-d)/2`, `hl = (a+b-c-d)/2`,
//! `hh = (a-b-c+d)/2`, stored as four quarter-size subbands.

use ndarray::{s, Array2, ArrayView2};

/// Subbands of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarLevel {
    pub ll: Array2<f64>,
    /// Horizontal differences (column detail).
    pub lh: Array2<f64>,
    /// Vertical differences (row detail).
    pub hl: Array2<f64>,
    /// Diagonal detail.
    pub hh: Array2<f64>,
}

/// Even-sized leading block of `x`: odd trailing rows/columns are dropped.
pub fn trim_even(x: ArrayView2<'_, f64>) -> ArrayView2<'_, f64> {
    let (h, w) = x.dim();
    x.slice_move(s![..h - h % 2, ..w - w % 2])
}

/// One analysis level. `x` must have even dimensions.
pub fn forward_level(x: ArrayView2<'_, f64>) -> HaarLevel {
    let (h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "haar level needs even dims, got {h}x{w}");
    let dims = (h / 2, w / 2);
    let mut ll = Array2::zeros(dims);
    let mut lh = Array2::zeros(dims);
    let mut hl = Array2::zeros(dims);
    let mut hh = Array2::zeros(dims);
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            let a = x[[2 * i, 2 * j]];
            let b = x[[2 * i, 2 * j + 1]];
            let c = x[[2 * i + 1, 2 * j]];
            let d = x[[2 * i + 1, 2 * j + 1]];
            ll[[i, j]] = 0.5 * (a + b + c + d);
            lh[[i, j]] = 0.5 * (a - b + c - d);
            hl[[i, j]] = 0.5 * (a + b - c - d);
            hh[[i, j]] = 0.5 * (a - b - c + d);
        }
    }
    HaarLevel { ll, lh, hl, hh }
}

pub fn inverse_level(level: &HaarLevel) -> Array2<f64> {
    let (h, w) = level.ll.dim();
    let mut out = Array2::zeros((2 * h, 2 * w));
    for i in 0..h {
        for j in 0..w {
            let (ll, lh, hl, hh) = (level.ll[[i, j]], level.lh[[i, j]], level.hl[[i, j]], level.hh[[i, j]]);
            out[[2 * i, 2 * j]] = 0.5 * (ll + lh + hl + hh);
            out[[2 * i, 2 * j + 1]] = 0.5 * (ll - lh + hl - hh);
            out[[2 * i + 1, 2 * j]] = 0.5 * (ll + lh - hl - hh);
            out[[2 * i + 1, 2 * j + 1]] = 0.5 * (ll - lh - hl + hh);
        }
    }
    out
}

/// Multi-level decomposition of a block whose sides are divisible by
/// `2^levels`. Returns the coarsest approximation and the detail levels,
/// finest first.
pub fn decompose(x: ArrayView2<'_, f64>, levels: usize) -> (Array2<f64>, Vec<HaarLevel>) {
    let mut approx = x.to_owned();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let mut lvl = forward_level(approx.view());
        approx = std::mem::take(&mut lvl.ll);
        details.push(lvl);
    }
    (approx, details)
}

pub fn reconstruct(approx: Array2<f64>, details: &[HaarLevel]) -> Array2<f64> {
    let mut cur = approx;
    for lvl in details.iter().rev() {
        let full = HaarLevel { ll: cur, lh: lvl.lh.clone(), hl: lvl.hl.clone(), hh: lvl.hh.clone() };
        cur = inverse_level(&full);
    }
    cur
}

/// Largest leading block with sides divisible by `2^levels`.
pub fn transformable_dims((h, w): (usize, usize), levels: usize) -> (usize, usize) {
    let m = 1usize << levels;
    (h - h % m, w - w % m)
}
