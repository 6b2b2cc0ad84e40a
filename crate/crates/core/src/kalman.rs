//! Covariance-form multichannel Kalman filter for one MISO subband filter.
//!
//! The inverse-Hessian recursion does not depend on the desired signal, so it
//! lives in [`Covariance`] and can be shared by every output row that uses the
//! same regressor. [`MisoKalmanState`] pairs one covariance with one
//! coefficient vector.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Diagonal guard: covariance entries beyond this multiple of `sigma0` trigger a reset.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// Initial inverse-Hessian scale.
    pub sigma0: f64,
    /// Process-noise variance per coefficient.
    pub gamma: f64,
    /// Initial measurement-noise variance.
    pub xi0: f64,
    /// Diagonal state-transition factor.
    pub transition: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            gamma: 1e-6,
            xi0: 1.0,
            transition: 0.9999,
        }
    }
}

impl KalmanParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma0.is_finite()
            && self.sigma0 > 0.0
            && self.xi0.is_finite()
            && self.xi0 > 0.0
            && self.gamma.is_finite()
            && self.gamma >= 0.0
            && self.transition > 0.0
            && self.transition <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "kalman parameters out of range: {self:?} (need sigma0, xi0 > 0, gamma >= 0, 0 < a <= 1)"
            )))
        }
    }
}

/// A square operator that is either `c * I` or a dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Scaled(f64),
    Dense(Vec<Complex64>),
}

impl Operator {
    fn apply(&self, dim: usize, v: &[Complex64]) -> Vec<Complex64> {
        match self {
            Operator::Scaled(c) => v.iter().map(|x| x * *c).collect(),
            Operator::Dense(m) => (0..dim)
                .map(|i| (0..dim).map(|j| m[i * dim + j] * v[j]).sum())
                .collect(),
        }
    }

    fn dense(&self, dim: usize) -> Vec<Complex64> {
        match self {
            Operator::Scaled(c) => identity(dim, *c),
            Operator::Dense(m) => m.clone(),
        }
    }

    fn from_dense(dim: usize, m: Vec<Complex64>) -> Self {
        let c = m.first().map(|z| z.re).unwrap_or(0.0);
        let scaled = (0..dim).all(|i| {
            (0..dim).all(|j| {
                let want = if i == j { Complex64::new(c, 0.0) } else { ZERO };
                m[i * dim + j] == want
            })
        });
        if scaled {
            Operator::Scaled(c)
        } else {
            Operator::Dense(m)
        }
    }
}

fn identity(dim: usize, scale: f64) -> Vec<Complex64> {
    let mut m = vec![ZERO; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = Complex64::new(scale, 0.0);
    }
    m
}

/// Kalman gain together with the innovation variance that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    pub k: Vec<Complex64>,
    pub eta2: f64,
}

/// Inverse Hessian with its transition and process-noise operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    dim: usize,
    matrix: Vec<Complex64>,
    transition: Operator,
    process_noise: Operator,
    sigma0: f64,
    resets: u64,
}

impl Covariance {
    pub fn new(dim: usize, params: &KalmanParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::config("filter dimension must be at least 1"));
        }
        Ok(Self {
            dim,
            matrix: identity(dim, params.sigma0),
            transition: Operator::Scaled(params.transition),
            process_noise: Operator::Scaled(params.gamma),
            sigma0: params.sigma0,
            resets: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major inverse Hessian.
    pub fn matrix(&self) -> &[Complex64] {
        &self.matrix
    }

    pub fn transition(&self) -> &Operator {
        &self.transition
    }

    pub fn process_noise(&self) -> &Operator {
        &self.process_noise
    }

    pub fn set_transition(&mut self, op: Operator) -> Result<()> {
        self.check_operator(&op)?;
        self.transition = op;
        Ok(())
    }

    pub fn set_process_noise(&mut self, op: Operator) -> Result<()> {
        self.check_operator(&op)?;
        self.process_noise = op;
        Ok(())
    }

    fn check_operator(&self, op: &Operator) -> Result<()> {
        match op {
            Operator::Dense(m) if m.len() != self.dim * self.dim => Err(Error::shape(format!(
                "operator has {} entries, expected {}",
                m.len(),
                self.dim * self.dim
            ))),
            _ => Ok(()),
        }
    }

    /// Number of guard-triggered resets so far.
    pub fn resets(&self) -> u64 {
        self.resets
    }

    pub fn reset(&mut self) {
        self.matrix = identity(self.dim, self.sigma0);
        self.resets += 1;
    }

    fn times(&self, x: &[Complex64]) -> Vec<Complex64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                let row = &self.matrix[i * d..(i + 1) * d];
                row.iter().zip(x).map(|(m, v)| m * v).sum()
            })
            .collect()
    }

    /// `eta2 = xi2 + x^H P x`, `k = A P x / eta2`.
    pub fn gain(&mut self, x: &[Complex64], xi2: f64) -> Result<Gain> {
        if x.len() != self.dim {
            return Err(Error::shape(format!(
                "regressor length {} != filter dimension {}",
                x.len(),
                self.dim
            )));
        }
        let mut px = self.times(x);
        let mut eta2 = xi2 + quad(x, &px);
        if !(eta2 > 0.0) || !eta2.is_finite() {
            self.reset();
            px = self.times(x);
            eta2 = xi2 + quad(x, &px);
            if !(eta2 > 0.0) || !eta2.is_finite() {
                return Err(Error::Stability(format!(
                    "innovation variance {eta2} after covariance reset"
                )));
            }
        }
        let apx = self.transition.apply(self.dim, &px);
        let inv = 1.0 / eta2;
        Ok(Gain {
            k: apx.into_iter().map(|v| v * inv).collect(),
            eta2,
        })
    }

    /// `P' = A P A^H + Gamma - eta2 k k^H`, re-Hermitianised and guarded.
    pub fn advance(&mut self, gain: &Gain) {
        let d = self.dim;
        match (&self.transition, &self.process_noise) {
            (Operator::Scaled(a), Operator::Scaled(g)) => {
                let a2 = a * a;
                for i in 0..d {
                    for j in 0..d {
                        let idx = i * d + j;
                        let mut v = self.matrix[idx] * a2 - gain.k[i] * gain.k[j].conj() * gain.eta2;
                        if i == j {
                            v += g;
                        }
                        self.matrix[idx] = v;
                    }
                }
            }
            (transition, noise) => {
                let a = transition.dense(d);
                let g = noise.dense(d);
                let mut ap = vec![ZERO; d * d];
                for i in 0..d {
                    for j in 0..d {
                        ap[i * d + j] = (0..d).map(|t| a[i * d + t] * self.matrix[t * d + j]).sum();
                    }
                }
                for i in 0..d {
                    for j in 0..d {
                        let apah: Complex64 = (0..d).map(|t| ap[i * d + t] * a[j * d + t].conj()).sum();
                        self.matrix[i * d + j] =
                            apah + g[i * d + j] - gain.k[i] * gain.k[j].conj() * gain.eta2;
                    }
                }
            }
        }
        self.symmetrize();
        self.guard();
    }

    fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            self.matrix[i * d + i].im = 0.0;
            for j in i + 1..d {
                let avg = (self.matrix[i * d + j] + self.matrix[j * d + i].conj()) * 0.5;
                self.matrix[i * d + j] = avg;
                self.matrix[j * d + i] = avg.conj();
            }
        }
    }

    fn guard(&mut self) {
        let limit = DIVERGENCE_FACTOR * self.sigma0;
        let bad = (0..self.dim).any(|i| {
            let v = self.matrix[i * self.dim + i].re;
            !v.is_finite() || v < 0.0 || v > limit
        }) || self.matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite());
        if bad {
            self.reset();
        }
    }

    /// Replaces the matrix, e.g. when restoring a checkpoint.
    pub fn restore_matrix(&mut self, matrix: Vec<Complex64>) -> Result<()> {
        if matrix.len() != self.dim * self.dim {
            return Err(Error::format("covariance has the wrong number of entries"));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::format("covariance contains non-finite entries"));
        }
        self.matrix = matrix;
        Ok(())
    }

    /// Largest |P - P^H| entry.
    pub fn hermitian_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((self.matrix[i * d + j] - self.matrix[j * d + i].conj()).norm());
            }
        }
        worst
    }
}

fn quad(x: &[Complex64], px: &[Complex64]) -> f64 {
    x.iter().zip(px).map(|(a, b)| (a.conj() * b).re).sum()
}

/// `h^H x`.
pub fn inner(h: &[Complex64], x: &[Complex64]) -> Complex64 {
    h.iter().zip(x).map(|(a, b)| a.conj() * b).sum()
}

/// Applies the coefficient step `h' = A h + k e*`.
pub fn step_coefficients(h: &mut [Complex64], transition: &Operator, gain: &Gain, error: Complex64) {
    let ec = error.conj();
    match transition {
        Operator::Scaled(a) => {
            for (hi, ki) in h.iter_mut().zip(&gain.k) {
                *hi = *hi * *a + ki * ec;
            }
        }
        op => {
            let ah = op.apply(h.len(), h);
            for ((hi, ahi), ki) in h.iter_mut().zip(ah).zip(&gain.k) {
                *hi = ahi + ki * ec;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisoKalmanState {
    pub h: Vec<Complex64>,
    pub cov: Covariance,
    /// Measurement-noise variance used by [`MisoKalmanState::update`].
    pub xi2: f64,
}

impl MisoKalmanState {
    pub fn init(dim: usize, params: &KalmanParams) -> Result<Self> {
        Ok(Self {
            h: vec![ZERO; dim],
            cov: Covariance::new(dim, params)?,
            xi2: params.xi0,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn predict(&self, x: &[Complex64]) -> Result<Complex64> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!(
                "regressor length {} != filter dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(inner(&self.h, x))
    }

    /// One step with the stored measurement-noise variance. Returns the prior error.
    pub fn update(&mut self, x: &[Complex64], d: Complex64) -> Result<Complex64> {
        let xi2 = self.xi2;
        self.update_with_noise(x, d, xi2)
    }

    pub fn update_with_noise(&mut self, x: &[Complex64], d: Complex64, xi2: f64) -> Result<Complex64> {
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) || !d.re.is_finite() || !d.im.is_finite() {
            return Err(Error::NonFinite("kalman regressor or desired sample"));
        }
        let e = d - self.predict(x)?;
        let gain = self.cov.gain(x, xi2)?;
        step_coefficients(&mut self.h, &self.cov.transition, &gain, e);
        self.cov.advance(&gain);
        Ok(e)
    }

    /// Little-endian snapshot: magic, dim (u64), xi2, sigma0, then h, P, A and
    /// Gamma as row-major (re, im) f64 pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(SNAPSHOT_MAGIC.len() + 24 + 16 * (d + 3 * d * d));
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&(d as u64).to_le_bytes());
        out.extend_from_slice(&self.xi2.to_le_bytes());
        out.extend_from_slice(&self.cov.sigma0.to_le_bytes());
        for block in [
            &self.h[..],
            &self.cov.matrix[..],
            &self.cov.transition.dense(d)[..],
            &self.cov.process_noise.dense(d)[..],
        ] {
            put_complex(&mut out, block);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(Error::format("bad kalman snapshot magic"));
        }
        let dim = r.u64()? as usize;
        if dim == 0 || dim > MAX_SNAPSHOT_DIM {
            return Err(Error::format(format!("snapshot dimension {dim} out of range")));
        }
        let expected = 4 + 24 + 16 * (dim + 3 * dim * dim);
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "snapshot is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let xi2 = r.f64()?;
        let sigma0 = r.f64()?;
        if !(sigma0 > 0.0) || !sigma0.is_finite() || !(xi2 >= 0.0) || !xi2.is_finite() {
            return Err(Error::format("snapshot scalars out of range"));
        }
        let h = r.complex(dim)?;
        let matrix = r.complex(dim * dim)?;
        let transition = Operator::from_dense(dim, r.complex(dim * dim)?);
        let process_noise = Operator::from_dense(dim, r.complex(dim * dim)?);
        Ok(Self {
            h,
            cov: Covariance {
                dim,
                matrix,
                transition,
                process_noise,
                sigma0,
                resets: 0,
            },
            xi2,
        })
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"MKS1";
const MAX_SNAPSHOT_DIM: usize = 4096;

pub(crate) fn put_complex(out: &mut Vec<u8>, values: &[Complex64]) {
    for z in values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        let need = n.checked_mul(16).ok_or_else(|| Error::format("length overflow"))?;
        if need > self.remaining() {
            return Err(Error::format("unexpected end of data"));
        }
        (0..n)
            .map(|_| Ok(Complex64::new(self.f64()?, self.f64()?)))
            .collect()
    }
}
