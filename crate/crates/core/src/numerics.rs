//! Complex-matrix kernel and reproducible random streams.
//!
//! Every matrix in the simulation (channels, precoders, beamformers, noise)
//! is a [`ComplexMatrix`]. Storage and the SVD/LU factorizations come from
//! `nalgebra`; the Cholesky factorization is implemented here because the
//! simulation needs its pivot diagnostics and the semidefinite clamping rule.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
pub use num_complex::Complex64;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Pivots below this fraction of the largest LU pivot are treated as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// Negative Cholesky pivots down to `-PSD_TOLERANCE * trace(A)` are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Dense complex matrix with finite entries, stored column-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<Complex64>);

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        ComplexMatrix(DMatrix::identity(n, n))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        ComplexMatrix(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        ComplexMatrix(DMatrix::from_fn(rows, cols, f))
    }

    /// Builds a matrix from column-major entries, rejecting non-finite values.
    pub fn from_column_major(rows: usize, cols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::parameter("entries", "non-finite matrix entry"));
        }
        Ok(ComplexMatrix(DMatrix::from_vec(rows, cols, entries)))
    }

    /// Row-major real entries, handy for small literal matrices.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        ComplexMatrix(DMatrix::from_fn(r, c, |i, j| Complex64::new(rows[i][j], 0.0)))
    }

    pub fn from_nalgebra(m: DMatrix<Complex64>) -> Self {
        ComplexMatrix(m)
    }

    pub fn as_nalgebra(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_nalgebra(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.0[(row, col)] = value;
    }

    /// Column-major view of the entries (the `vec(·)` ordering).
    pub fn as_slice(&self) -> &[Complex64] {
        self.0.as_slice()
    }

    pub fn adjoint(&self) -> Self {
        ComplexMatrix(self.0.adjoint())
    }

    pub fn scale(&self, factor: f64) -> Self {
        ComplexMatrix(self.0.map(|z| z * factor))
    }

    pub fn scale_complex(&self, factor: Complex64) -> Self {
        ComplexMatrix(self.0.map(|z| z * factor))
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Maximum deviation from Hermitian symmetry, relative to the largest entry.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.0.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        self.max_abs_diff(&self.adjoint()) / scale
    }

    pub fn try_mul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols() != rhs.rows() {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        Ok(ComplexMatrix(&self.0 * &rhs.0))
    }

    /// Extracts the `rows x cols` block starting at `(row, col)`.
    pub fn block(&self, row: usize, col: usize, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix(self.0.view((row, col), (rows, cols)).into_owned())
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix{:?}", self.0.shape())?;
        if self.rows() * self.cols() <= 16 {
            write!(f, " {:?}", self.0.as_slice())?;
        }
        Ok(())
    }
}

impl<'a> Mul<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl<'a> Add<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl<'a> Sub<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-&self.0)
    }
}

/// Seeded ChaCha8 stream. The pair `(seed, stream)` fully determines the
/// sample sequence; Monte Carlo trials each construct their own stream.
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    /// Stream for trial `index` of a named sampling domain.
    pub fn for_trial(seed: u64, domain: StreamDomain, index: u64) -> Self {
        debug_assert!(index < 1 << 48);
        RngStream::new(seed, ((domain as u64) << 48) | index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Disjoint stream-id ranges for the independent sampling tasks of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    RateReference = 1,
    Outage = 2,
    Detection = 3,
    Testing = 15,
}

/// I.i.d. circularly-symmetric complex Gaussian entries with `E|x|^2 = variance`.
pub fn sample_complex_gaussian(
    rows: usize,
    cols: usize,
    variance: f64,
    rng: &mut RngStream,
) -> Result<ComplexMatrix> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::parameter(
            "variance",
            format!("must be finite and >= 0, got {variance}"),
        ));
    }
    if variance == 0.0 {
        return Ok(ComplexMatrix::zeros(rows, cols));
    }
    let sd = (variance / 2.0).sqrt();
    let entries = (0..rows * cols)
        .map(|_| {
            let re = rng.standard_normal();
            let im = rng.standard_normal();
            Complex64::new(re * sd, im * sd)
        })
        .collect();
    Ok(ComplexMatrix(DMatrix::from_vec(rows, cols, entries)))
}

/// Lower-triangular `L` with `L L^H = A` for Hermitian positive semidefinite `A`.
pub fn cholesky(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "cholesky needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if a.hermitian_defect() > 1e-10 {
        return Err(Error::parameter("A", "cholesky needs a Hermitian matrix"));
    }
    let n = a.rows();
    let trace = a.trace().re;
    let tol = PSD_TOLERANCE * trace.abs();
    // A zero pivot in a PSD matrix forces the rest of its column to vanish.
    let column_tol = (tol * trace.abs()).sqrt();
    let mut l = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j).re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d < -tol {
            return Err(Error::NotPsd { pivot: j, value: d });
        }
        let pivot = d.max(0.0).sqrt();
        l[(j, j)] = Complex64::new(pivot, 0.0);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            if pivot > 0.0 {
                l[(i, j)] = s / pivot;
            } else if s.norm() > column_tol {
                return Err(Error::NotPsd { pivot: j, value: d });
            }
        }
    }
    Ok(ComplexMatrix(l))
}

/// Singular value decomposition `A = U diag(S) V^H`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub singular_values: Vec<f64>,
    pub v: ComplexMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let s = ComplexMatrix::from_real_diagonal(&self.singular_values);
        &(&self.u * &s) * &self.v.adjoint()
    }
}

pub fn svd(a: &ComplexMatrix) -> Svd {
    let dec = nalgebra::SVD::new(a.0.clone(), true, true);
    let u = dec.u.expect("left singular vectors requested");
    let v_t = dec.v_t.expect("right singular vectors requested");
    Svd {
        u: ComplexMatrix(u),
        singular_values: dec.singular_values.iter().copied().collect(),
        v: ComplexMatrix(v_t.adjoint()),
    }
}

/// Inverse via partially pivoted LU; pivots below
/// [`SINGULAR_PIVOT_RATIO`] of the largest one are rejected.
pub fn inverse(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "inverse needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let lu = nalgebra::LU::new(a.0.clone());
    let pivots: Vec<f64> = lu.u().diagonal().iter().map(|z| z.norm()).collect();
    let largest = pivots.iter().copied().fold(0.0, f64::max);
    for (i, &p) in pivots.iter().enumerate() {
        if largest == 0.0 || p < SINGULAR_PIVOT_RATIO * largest {
            let ratio = if largest == 0.0 { 0.0 } else { p / largest };
            return Err(Error::Singular { pivot: i, ratio });
        }
    }
    let inv = lu.try_inverse().ok_or(Error::Singular {
        pivot: 0,
        ratio: 0.0,
    })?;
    let inv = ComplexMatrix(inv);
    if !inv.is_finite() {
        return Err(Error::Singular {
            pivot: 0,
            ratio: 0.0,
        });
    }
    Ok(inv)
}

/// `trace(A A^H)`, the squared Frobenius norm.
pub fn gram_trace(a: &ComplexMatrix) -> f64 {
    a.0.norm_squared()
}
