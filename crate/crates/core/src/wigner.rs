//! Two-mode Wigner functions in the ħ = 1 convention,
//! `W(x, p) = (1/2π) ∫ dy e^{ipy} ⟨x − y/2|ρ|x + y/2⟩` per mode.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fock::{CMatrix, FockCutoff, TwoModeState, C64};

/// Generalized Laguerre polynomial `L_n^{(alpha)}(x)`.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Wigner transform of `|m⟩⟨n|` at `(x, p)`:
/// for `m ≥ n`, `(1/π)(−1)ⁿ √(n!/m!) (√2 (x − ip))^{m−n} e^{−r²} L_n^{(m−n)}(2r²)`;
/// the other triangle is the complex conjugate.
pub fn fock_wigner_element(m: usize, n: usize, x: f64, p: f64) -> C64 {
    if m < n {
        return fock_wigner_element(n, m, x, p).conj();
    }
    let r2 = x * x + p * p;
    let k = m - n;
    let ratio: f64 = (n + 1..=m).map(|j| 1.0 / j as f64).product::<f64>().sqrt();
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let z = C64::new(x, -p) * std::f64::consts::SQRT_2;
    let radial = sign * ratio * (-r2).exp() * laguerre(n, k as f64, 2.0 * r2) / std::f64::consts::PI;
    z.powu(k as u32) * radial
}

/// Cutoff-checked [`fock_wigner_element`].
pub fn fock_wigner_element_checked(cutoff: FockCutoff, m: usize, n: usize, x: f64, p: f64) -> Result<C64> {
    if m > cutoff.n_max() || n > cutoff.n_max() {
        return Err(HomError::param(format!("index ({m},{n}) above cutoff")));
    }
    Ok(fock_wigner_element(m, n, x, p))
}

fn element_table(d: usize, x: f64, p: f64) -> CMatrix {
    let mut w = CMatrix::zeros(d, d);
    for m in 0..d {
        for n in 0..=m {
            let v = fock_wigner_element(m, n, x, p);
            w[(m, n)] = v;
            w[(n, m)] = v.conj();
        }
    }
    w
}

/// `W(x1, p1, x2, p2) = Σ ρ_{(m1,m2),(n1,n2)} W_{m1n1}(x1,p1) W_{m2n2}(x2,p2)`.
pub fn two_mode_wigner(state: &TwoModeState, x1: f64, p1: f64, x2: f64, p2: f64) -> f64 {
    let c = state.cutoff();
    let d = c.dim();
    let w1 = element_table(d, x1, p1);
    let w2 = element_table(d, x2, p2);
    let rho = state.matrix();
    let mut acc = C64::new(0.0, 0.0);
    for m1 in 0..d {
        for n1 in 0..d {
            let a = w1[(m1, n1)];
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            for m2 in 0..d {
                let row = c.index(m1, m2);
                for n2 in 0..d {
                    acc += rho[(row, c.index(n1, n2))] * a * w2[(m2, n2)];
                }
            }
        }
    }
    acc.re
}

/// Phase-space coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X1,
    P1,
    X2,
    P2,
}

impl Axis {
    fn slot(self) -> usize {
        match self {
            Axis::X1 => 0,
            Axis::P1 => 1,
            Axis::X2 => 2,
            Axis::P2 => 3,
        }
    }
}

/// Cut plane: two varying axes, every other coordinate held at `fixed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicePlane {
    pub row_axis: Axis,
    pub col_axis: Axis,
    /// Values of `(x1, p1, x2, p2)`; entries for the varying axes are ignored.
    pub fixed: [f64; 4],
}

impl SlicePlane {
    pub fn new(row_axis: Axis, col_axis: Axis, fixed: [f64; 4]) -> Result<Self> {
        if row_axis == col_axis {
            return Err(HomError::param("slice axes must differ"));
        }
        if fixed.iter().any(|v| !v.is_finite()) {
            return Err(HomError::param("fixed coordinates must be finite"));
        }
        Ok(SlicePlane {
            row_axis,
            col_axis,
            fixed,
        })
    }

    /// `(x1, x2)` with `p1 = p2 = 0`.
    pub fn quadrature_plane() -> Self {
        SlicePlane {
            row_axis: Axis::X1,
            col_axis: Axis::X2,
            fixed: [0.0; 4],
        }
    }

    /// `(x1, p2)` with `p1 = x2 = 0`.
    pub fn mixed_plane() -> Self {
        SlicePlane {
            row_axis: Axis::X1,
            col_axis: Axis::P2,
            fixed: [0.0; 4],
        }
    }

    fn point(&self, row: f64, col: f64) -> [f64; 4] {
        let mut z = self.fixed;
        z[self.row_axis.slot()] = row;
        z[self.col_axis.slot()] = col;
        z
    }
}

/// Uniform axis grid, shared by both slice axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for SliceGrid {
    fn default() -> Self {
        SliceGrid {
            min: -3.0,
            max: 3.0,
            step: 0.05,
        }
    }
}

impl SliceGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.min.is_finite() && self.max.is_finite() && self.step > 0.0 && self.max > self.min) {
            return Err(HomError::param(format!("bad slice grid {self:?}")));
        }
        let n = ((self.max - self.min) / self.step).round() as usize;
        Ok((0..=n).map(|i| self.min + i as f64 * self.step).collect())
    }
}

/// Wigner function on a rectangular cut.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerSlice {
    pub plane: SlicePlane,
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
    /// `values[(i, j)]` at `(rows[i], cols[j])`.
    pub values: DMatrix<f64>,
    pub min_value: f64,
    pub min_location: (f64, f64),
}

impl WignerSlice {
    pub fn max_value(&self) -> f64 {
        self.values.max()
    }

    pub fn metadata(&self) -> SliceMetadata {
        SliceMetadata {
            plane: self.plane,
            rows: self.rows.len(),
            cols: self.cols.len(),
            min_value: self.min_value,
            min_location: [self.min_location.0, self.min_location.1],
            max_value: self.max_value(),
        }
    }
}

/// JSON block written next to a slice's CSV matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetadata {
    pub plane: SlicePlane,
    pub rows: usize,
    pub cols: usize,
    pub min_value: f64,
    pub min_location: [f64; 2],
    pub max_value: f64,
}

pub fn wigner_slice(state: &TwoModeState, plane: &SlicePlane, grid: &SliceGrid) -> Result<WignerSlice> {
    let axis = grid.points()?;
    let values = DMatrix::from_fn(axis.len(), axis.len(), |i, j| {
        let z = plane.point(axis[i], axis[j]);
        two_mode_wigner(state, z[0], z[1], z[2], z[3])
    });
    let (mut min_value, mut min_location) = (f64::INFINITY, (0.0, 0.0));
    for i in 0..axis.len() {
        for j in 0..axis.len() {
            if values[(i, j)] < min_value {
                min_value = values[(i, j)];
                min_location = (axis[i], axis[j]);
            }
        }
    }
    Ok(WignerSlice {
        plane: *plane,
        rows: axis.clone(),
        cols: axis,
        values,
        min_value,
        min_location,
    })
}
