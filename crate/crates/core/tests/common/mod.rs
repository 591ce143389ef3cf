#![allow(dead_code)]

use cns_core::spectral::{GridField, TorusGrid};
use proptest::prelude::*;

/// `(k1, k2, amplitude, phase)` of one cosine mode.
pub type Mode = (i64, i64, f64, f64);

pub fn modes(max_k: i64, count: usize) -> impl Strategy<Value = Vec<Mode>> {
    prop::collection::vec((-max_k..=max_k, -max_k..=max_k, -1.0..1.0f64, 0.0..6.3f64), 1..=count)
}

pub fn phase(m: &Mode, y: &[f64]) -> f64 {
    m.0 as f64 * y[0] + m.1 as f64 * y[1] + m.3
}

pub fn trig_scalar(grid: &TorusGrid, modes: &[Mode]) -> GridField {
    GridField::from_fn_scalar(grid, |y| modes.iter().map(|m| m.2 * phase(m, y).cos()).sum())
}

/// Vector field whose component `c` uses the modes rotated by `c` radians in phase.
pub fn trig_vector(grid: &TorusGrid, modes: &[Mode]) -> GridField {
    GridField::from_fn_vector(grid, |c, y| modes.iter().map(|m| m.2 * (phase(m, y) + c as f64).cos()).sum())
}

