//! The color correction matrix block.
//!
//! The six off-diagonal entries are the free parameters; each diagonal entry
//! is `1 - (sum of the row's off-diagonals)`, so every row sums to one and
//! neutral pixels are fixed points of the transform.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::RgbImage;
use crate::par;

#[derive(Debug, Error)]
pub enum CcmError {
    #[error("image is {0}x{1} but cotangent is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("malformed matrix document: {0}")]
    Malformed(String),
    #[error("row {row} sums to {sum}, expected 1 within {tol}")]
    RowSum { row: usize, sum: f64, tol: f64 },
}

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; 6] = ["12", "13", "21", "23", "31", "32"];

/// `(row, col)` of each free parameter, matching [`PARAM_NAMES`].
pub const PARAM_POSITIONS: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];

/// Tolerance used when importing a matrix from outside.
pub const IMPORT_ROW_SUM_TOL: f64 = 1e-6;

/// Free parameters of the matrix plus the clip level they are held to.
///
/// Values need not be feasible; [`CcmParams::project`] maps any value into
/// the feasible set, and [`CcmParams::is_feasible`] checks membership.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcmParams {
    pub off_diag: [f64; 6],
    pub tau: f64,
}

impl CcmParams {
    pub fn zeros(tau: f64) -> Self {
        Self {
            off_diag: [0.0; 6],
            tau,
        }
    }

    /// Parameter value by name (`"12"`, `"13"`, ...).
    pub fn get(&self, name: &str) -> Option<f64> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.off_diag[i])
    }

    /// Derived diagonal deviation of `row`: the sum of its two off-diagonals.
    pub fn diagonal_deviation(&self, row: usize) -> f64 {
        self.off_diag[2 * row] + self.off_diag[2 * row + 1]
    }

    pub fn is_feasible(&self) -> bool {
        self.off_diag.iter().all(|v| v.abs() <= self.tau)
            && (0..3).all(|row| self.diagonal_deviation(row).abs() <= self.tau)
    }

    /// Box clamp to `[-tau, tau]`, then radial rescale of any row pair whose
    /// sum exceeds `tau` in magnitude.
    pub fn project(&self) -> Self {
        let tau = self.tau;
        let mut out = self.off_diag.map(|v| v.clamp(-tau, tau));
        for row in 0..3 {
            let (i, j) = (2 * row, 2 * row + 1);
            let sum = out[i] + out[j];
            if sum.abs() > tau {
                let scale = tau / sum.abs();
                out[i] *= scale;
                out[j] *= scale;
                // Rounding can leave the sum an ulp over the cap.
                while (out[i] + out[j]).abs() > tau {
                    out[i] *= 1.0 - f64::EPSILON;
                    out[j] *= 1.0 - f64::EPSILON;
                }
            }
        }
        Self {
            off_diag: out,
            tau,
        }
    }

    pub fn materialize(&self) -> CcmMatrix {
        let mut m = [[0.0; 3]; 3];
        for (k, &(r, c)) in PARAM_POSITIONS.iter().enumerate() {
            m[r][c] = self.off_diag[k];
        }
        for (row, m_row) in m.iter_mut().enumerate() {
            m_row[row] = 1.0 - self.diagonal_deviation(row);
        }
        CcmMatrix { m }
    }
}

/// A materialized 3x3 matrix, row-major, applied as `out = M * in` per pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CcmMatrix {
    pub m: [[f64; 3]; 3],
}

impl CcmMatrix {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Accepts a matrix only if every row sums to one within `tol`.
    pub fn from_rows(m: [[f64; 3]; 3], tol: f64) -> Result<Self, CcmError> {
        for (row, r) in m.iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(CcmError::Malformed(format!("row {row} has a non-finite entry")));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(CcmError::RowSum { row, sum, tol });
            }
        }
        Ok(Self { m })
    }

    pub fn row_sums(&self) -> [f64; 3] {
        self.m.map(|r| r.iter().sum())
    }

    /// Recovers the free parameters and an implied clip level.
    pub fn to_params(&self, tau: f64) -> CcmParams {
        CcmParams {
            off_diag: PARAM_POSITIONS.map(|(r, c)| self.m[r][c]),
            tau,
        }
    }
}

/// Applies `matrix` to every pixel. No clamping.
pub fn apply(matrix: &CcmMatrix, img: &RgbImage) -> RgbImage {
    let m = matrix.m;
    let [r, g, b] = img.planes();
    let mut out = RgbImage::from_parts(img.width(), img.height(), vec![0.0; img.samples().len()]);
    par::for_each_chunk_mut3(out.planes_mut(), par::CHUNK, |off, ro, go, bo| {
        for i in 0..ro.len() {
            let p = off + i;
            let (x0, x1, x2) = (r[p], g[p], b[p]);
            ro[i] = m[0][0] * x0 + m[0][1] * x1 + m[0][2] * x2;
            go[i] = m[1][0] * x0 + m[1][1] * x1 + m[1][2] * x2;
            bo[i] = m[2][0] * x0 + m[2][1] * x1 + m[2][2] * x2;
        }
    });
    out
}

/// Gradient of `<cotangent, apply(materialize(phi), img)>` with respect to
/// the six free parameters: `sum_p G_i(p) * (X_j(p) - X_i(p))`.
pub fn pullback(img: &RgbImage, cotangent: &RgbImage) -> Result<[f64; 6], CcmError> {
    if !img.same_shape(cotangent) {
        return Err(CcmError::DimensionMismatch(
            img.width(),
            img.height(),
            cotangent.width(),
            cotangent.height(),
        ));
    }
    let x = img.planes();
    let g = cotangent.planes();
    // cross[3 * i + j] = sum_p G_i(p) X_j(p)
    let cross: [f64; 9] = par::sum_ranges(img.pixel_count(), |range| {
        let mut acc = [0.0; 9];
        for p in range {
            for i in 0..3 {
                let gi = g[i][p];
                for j in 0..3 {
                    acc[3 * i + j] += gi * x[j][p];
                }
            }
        }
        acc
    });
    Ok(PARAM_POSITIONS.map(|(i, j)| cross[3 * i + j] - cross[3 * i + i]))
}

/// The six parameters keyed by name, as they appear in exported JSON.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiMap {
    #[serde(rename = "12")]
    pub p12: f64,
    #[serde(rename = "13")]
    pub p13: f64,
    #[serde(rename = "21")]
    pub p21: f64,
    #[serde(rename = "23")]
    pub p23: f64,
    #[serde(rename = "31")]
    pub p31: f64,
    #[serde(rename = "32")]
    pub p32: f64,
}

impl From<[f64; 6]> for PhiMap {
    fn from(v: [f64; 6]) -> Self {
        Self {
            p12: v[0],
            p13: v[1],
            p21: v[2],
            p23: v[3],
            p31: v[4],
            p32: v[5],
        }
    }
}

impl From<PhiMap> for [f64; 6] {
    fn from(p: PhiMap) -> Self {
        [p.p12, p.p13, p.p21, p.p23, p.p31, p.p32]
    }
}

/// Exported matrix document (`matrix.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub version: u32,
    pub matrix: [[f64; 3]; 3],
    pub phi: PhiMap,
    pub tau: f64,
}

impl MatrixFile {
    pub const VERSION: u32 = 1;

    pub fn from_params(params: &CcmParams) -> Self {
        Self {
            version: Self::VERSION,
            matrix: params.materialize().m,
            phi: params.off_diag.into(),
            tau: params.tau,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix document serializes")
    }
}

/// Looser shape accepted on import: only `matrix` is required.
#[derive(Deserialize)]
struct MatrixImport {
    version: Option<u32>,
    matrix: [[f64; 3]; 3],
}

/// Parses a matrix document and checks row sums to [`IMPORT_ROW_SUM_TOL`].
pub fn parse_matrix_json(text: &str) -> Result<CcmMatrix, CcmError> {
    let doc: MatrixImport =
        serde_json::from_str(text).map_err(|e| CcmError::Malformed(e.to_string()))?;
    if let Some(v) = doc.version {
        if v != MatrixFile::VERSION {
            return Err(CcmError::Malformed(format!("unsupported version {v}")));
        }
    }
    CcmMatrix::from_rows(doc.matrix, IMPORT_ROW_SUM_TOL)
}
