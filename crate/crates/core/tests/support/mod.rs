#![allow(dead_code)]
//! Reference implementations shared by integration test targets.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use subid_core::dependency::{DependencyMap, DetectorNetwork, DropoutMasks, FeatureTensor, InputLayout};
use subid_core::lattice::{GainPairing, LatticeConfig, PredictorSupport, XI_FLOOR};

pub fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| rand_c(rng)).collect()
}

pub type Mat = Vec<Vec<Complex64>>;

pub fn zeros(n: usize) -> Mat {
    vec![vec![Complex64::new(0.0, 0.0); n]; n]
}

pub fn eye(n: usize) -> Mat {
    let mut m = zeros(n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
    }
    m
}

/// Scalar-by-scalar lattice recursion with a full map. `kf[i][j]` is the
/// coefficient from input `i` to output `j`. The forward predictor and the
/// joint estimator share the backward-error gain, the backward predictor uses
/// the forward-error gain.
pub struct Transliteration {
    pub n: usize,
    pub a: f64,
    pub gamma: f64,
    pub kf: Vec<Mat>,
    pub kb: Vec<Mat>,
    pub hj: Vec<Mat>,
    pub pf: Vec<Mat>,
    pub pb: Vec<Mat>,
    pub bd: Vec<Vec<Complex64>>,
}

impl Transliteration {
    pub fn new(n: usize, stages: usize, a: f64, gamma: f64) -> Self {
        Self {
            n,
            a,
            gamma,
            kf: vec![zeros(n); stages],
            kb: vec![zeros(n); stages],
            hj: vec![zeros(n); stages],
            pf: vec![eye(n); stages],
            pb: vec![eye(n); stages],
            bd: vec![vec![Complex64::new(0.0, 0.0); n]; stages],
        }
    }

    pub fn gain(&self, p: &Mat, x: &[Complex64], xi2: f64) -> (Vec<Complex64>, f64) {
        let n = self.n;
        let mut px = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                px[i] += p[i][j] * x[j];
            }
        }
        let mut eta = xi2;
        for i in 0..n {
            eta += (x[i].conj() * px[i]).re;
        }
        let k = px.iter().map(|v| v * self.a / eta).collect();
        (k, eta)
    }

    pub fn advance(&self, p: &mut Mat, k: &[Complex64], eta: f64) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                p[i][j] = p[i][j] * self.a * self.a - k[i] * k[j].conj() * eta;
                if i == j {
                    p[i][j] += self.gamma;
                }
            }
        }
        for i in 0..n {
            p[i][i].im = 0.0;
            for j in i + 1..n {
                let avg = (p[i][j] + p[j][i].conj()) * 0.5;
                p[i][j] = avg;
                p[j][i] = avg.conj();
            }
        }
    }

    pub fn frame(&mut self, x: &[Complex64], d: &[Complex64]) -> (Vec<Complex64>, f64) {
        let n = self.n;
        let stages = self.kf.len();
        let mut f = vec![x.to_vec()];
        let mut b = vec![x.to_vec()];
        let mut e = vec![d.to_vec()];
        for m in 0..stages {
            let mut fo = f[m].clone();
            let mut bo = self.bd[m].clone();
            let mut eo = e[m].clone();
            for i in 0..n {
                for j in 0..n {
                    fo[i] -= self.kf[m][j][i].conj() * self.bd[m][j];
                    bo[i] -= self.kb[m][j][i].conj() * f[m][j];
                    eo[i] -= self.hj[m][j][i].conj() * b[m][j];
                }
            }
            f.push(fo);
            b.push(bo);
            e.push(eo);
        }
        let mut xi2 = 0.0;
        for m in 0..stages {
            for i in 0..n {
                xi2 += e[m + 1][i].norm_sqr();
            }
        }
        xi2 = (xi2 / stages as f64).max(XI_FLOOR);
        for m in 0..stages {
            let (kf_gain, eta_f) = self.gain(&self.pf[m], &f[m], xi2);
            let (kb_gain, eta_b) = self.gain(&self.pb[m], &b[m], xi2);
            for i in 0..n {
                for j in 0..n {
                    self.kf[m][i][j] = self.kf[m][i][j] * self.a + kb_gain[i] * f[m + 1][j].conj();
                    self.kb[m][i][j] = self.kb[m][i][j] * self.a + kf_gain[i] * b[m + 1][j].conj();
                    self.hj[m][i][j] = self.hj[m][i][j] * self.a + kb_gain[i] * e[m + 1][j].conj();
                }
            }
            let mut pf = self.pf[m].clone();
            self.advance(&mut pf, &kf_gain, eta_f);
            self.pf[m] = pf;
            let mut pb = self.pb[m].clone();
            self.advance(&mut pb, &kb_gain, eta_b);
            self.pb[m] = pb;
            self.bd[m] = b[m].clone();
        }
        (e[stages].clone(), xi2)
    }
}

pub fn oracle_config(n: usize, stages: usize, a: f64, gamma: f64) -> LatticeConfig {
    LatticeConfig {
        layout: InputLayout::Positive,
        predictor_support: PredictorSupport::Full,
        pairing: GainPairing::Printed,
        transition: a,
        gamma,
        ..LatticeConfig::new(n, stages)
    }
}

/// (sum x x^H + xi2/sigma0 I)^{-1} sum x conj(d), the ridge solution for d ~ h^H x.
pub fn ridge(xs: &[Vec<Complex64>], ds: &[Complex64], xi2: f64, sigma0: f64) -> Vec<Complex64> {
    let dim = xs[0].len();
    let mut r = DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(xi2 / sigma0, 0.0);
    let mut p = DVector::<Complex64>::zeros(dim);
    for (x, d) in xs.iter().zip(ds) {
        let v = DVector::from_column_slice(x);
        r += &v * v.adjoint();
        p += v * d.conj();
    }
    r.lu().solve(&p).expect("regularised system is invertible").iter().copied().collect()
}

/// d[k] = 0.8 x[k] + 0.5 x[k+1] on positive bins, plus light noise.
pub fn coupled_desired(rng: &mut ChaCha8Rng, x: &[Complex64]) -> Vec<Complex64> {
    let ns = x.len();
    (0..ns)
        .map(|k| {
            let next = if k + 1 < ns { x[k + 1] * 0.5 } else { Complex64::new(0.0, 0.0) };
            x[k] * 0.8 + next + rand_c(rng) * 1e-3
        })
        .collect()
}

pub fn coupled_map(layout: InputLayout, ns: usize, with_neighbour: bool) -> DependencyMap {
    let mut map = layout.identity_map(ns);
    if with_neighbour {
        for k in 0..ns - 1 {
            map.set(k, layout.column(ns, k + 1, false).unwrap(), true);
        }
    }
    map
}

pub fn mean_db(values: &[f64]) -> f64 {
    10.0 * (values.iter().sum::<f64>() / values.len() as f64).log10()
}


/// Per-layer `|g - g_fd| / |g + g_fd|` between the analytic gradient and
/// central differences with step `h`, dropout masks held fixed.
pub fn gradient_errors(
    net: &DetectorNetwork,
    t: &FeatureTensor,
    labels: &[bool],
    masks: Option<&DropoutMasks>,
    h: f64,
) -> Vec<(String, f64)> {
    let (_, grad) = net.loss_and_gradient(t, labels, masks).unwrap();
    let mut fd = vec![0.0; grad.len()];
    for (i, g) in fd.iter_mut().enumerate() {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        *g = (plus.loss(t, labels, masks).unwrap() - minus.loss(t, labels, masks).unwrap()) / (2.0 * h);
    }
    net.layer_ranges()
        .into_iter()
        .map(|(name, range)| {
            let diff: f64 = range.clone().map(|i| (grad[i] - fd[i]).powi(2)).sum::<f64>().sqrt();
            let sum: f64 = range.map(|i| (grad[i] + fd[i]).powi(2)).sum::<f64>().sqrt();
            (name, if sum > 0.0 { diff / sum } else { diff })
        })
        .collect()
}
