//! Synthetic shortest-path problems: random SPD correlation structure,
//! covariance with prescribed standard deviations, Gaussian sampling of
//! `(zeta, xi)`, grid graphs and multiplicative mean shifts.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostVector, CovariateVector, Dataset, DirectedGraph, Role};
use crate::seeds::rng_for;

/// Lower clamp on sampled travel times.
pub const MIN_TRAVEL_TIME: f64 = 1e-6;
const CHOLESKY_JITTER: f64 = 1e-10;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("matrix rows must form a square"));
        }
        Ok(SquareMatrix {
            n,
            data: rows.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SquareMatrix {
        let mut out = SquareMatrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (ascending) and the matching eigenvectors as columns.
pub fn symmetric_eigen(m: &SquareMatrix) -> Result<(Vec<f64>, SquareMatrix)> {
    let n = m.dim();
    if m.max_asymmetry() > 1e-9 * (1.0 + m.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
        return Err(Error::invalid("eigendecomposition needs a symmetric matrix"));
    }
    let mut a = m.clone();
    let mut v = SquareMatrix::identity(n);
    let scale: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += 2.0 * a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| a.get(x, x).total_cmp(&a.get(y, y)).then(x.cmp(&y)));
            let values = order.iter().map(|&i| a.get(i, i)).collect();
            let mut vectors = SquareMatrix::zeros(n);
            for (col, &src) in order.iter().enumerate() {
                for r in 0..n {
                    vectors.set(r, col, v.get(r, src));
                }
            }
            return Ok((values, vectors));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(Error::NumericalError("Jacobi eigendecomposition did not converge".into()))
}

/// How the spectrum of the random SPD matrix is replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SpdSpectrum {
    /// `1 + u_i` on the diagonal: eigenvalues in `[1, 2]`.
    Diagonal,
    /// `S + J` with `S = diag(u)` and `J` the all-ones matrix, which adds a
    /// dominant common factor.
    #[default]
    Ones,
}

/// Random symmetric positive-definite matrix: eigenvectors of `A^T A` for a
/// uniform `A`, with a fresh random spectrum.
pub fn make_spd_matrix(n: usize, seed: u64, spectrum: SpdSpectrum) -> Result<SquareMatrix> {
    if n < 1 {
        return Err(Error::invalid("SPD dimension must be at least 1"));
    }
    let mut rng = rng_for(seed);
    let mut a = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, rng.gen::<f64>());
        }
    }
    let m = a.transpose().matmul(&a);
    let (_, u) = symmetric_eigen(&m)?;
    let mut sigma = SquareMatrix::zeros(n);
    for i in 0..n {
        let s: f64 = rng.gen();
        match spectrum {
            SpdSpectrum::Diagonal => sigma.set(i, i, 1.0 + s),
            SpdSpectrum::Ones => {
                for j in 0..n {
                    sigma.set(i, j, 1.0);
                }
                sigma.set(i, i, 1.0 + s);
            }
        }
    }
    let mut out = u.matmul(&sigma).matmul(&u.transpose());
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (out.get(i, j) + out.get(j, i));
            out.set(i, j, avg);
            out.set(j, i, avg);
        }
    }
    Ok(out)
}

/// `diag(M)^{-1/2} M diag(M)^{-1/2}`.
pub fn correlation(m: &SquareMatrix) -> Result<SquareMatrix> {
    let d = m.diagonal();
    if d.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::invalid("correlation needs a positive diagonal"));
    }
    let n = m.dim();
    let mut corr = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j { 1.0 } else { m.get(i, j) / (d[i].sqrt() * d[j].sqrt()) };
            corr.set(i, j, v);
        }
    }
    Ok(corr)
}

/// Covariance with standard deviations `sigma` and the correlation of `m`.
pub fn covariance_with_std(m: &SquareMatrix, sigma: &[f64]) -> Result<SquareMatrix> {
    if sigma.len() != m.dim() {
        return Err(Error::invalid("standard deviation vector has the wrong length"));
    }
    if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("standard deviations must be positive"));
    }
    let corr = correlation(m)?;
    let n = m.dim();
    let mut cov = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            cov.set(i, j, sigma[i] * corr.get(i, j) * sigma[j]);
        }
    }
    Ok(cov)
}

fn try_cholesky(cov: &SquareMatrix, jitter: f64) -> Option<SquareMatrix> {
    let n = cov.dim();
    let mut l = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = cov.get(i, j) + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Lower-triangular factor of `cov`, retrying once with `1e-10 I` added.
pub fn cholesky(cov: &SquareMatrix) -> Result<SquareMatrix> {
    try_cholesky(cov, 0.0)
        .or_else(|| try_cholesky(cov, CHOLESKY_JITTER))
        .ok_or_else(|| Error::NumericalError("covariance is not positive definite".into()))
}

/// Draws `n` rows of `mean + L z`; the first `n_zeta` coordinates are the
/// covariates, the rest travel times (clamped below at `1e-6`).
pub fn sample_with_factor(
    mean: &[f64],
    factor: &SquareMatrix,
    n_zeta: usize,
    n: usize,
    seed: u64,
    role: Role,
) -> Result<Dataset> {
    let dim = factor.dim();
    if mean.len() != dim || n_zeta >= dim {
        return Err(Error::invalid("mean, factor and covariate split disagree"));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let mut rng = rng_for(seed);
    let mut contexts = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    let mut z = vec![0.0; dim];
    for _ in 0..n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let x: Vec<f64> = (0..dim)
            .map(|i| mean[i] + factor.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        contexts.push(CovariateVector::new(x[..n_zeta].to_vec())?);
        costs.push(CostVector::new(
            x[n_zeta..].iter().map(|v| v.max(MIN_TRAVEL_TIME)).collect(),
        )?);
    }
    Dataset::new(contexts, costs, role)
}

/// `n` i.i.d. Gaussian draws of `(zeta, xi)`.
pub fn sample_dataset(
    mean: &[f64],
    cov: &SquareMatrix,
    n_zeta: usize,
    n: usize,
    seed: u64,
    role: Role,
) -> Result<Dataset> {
    sample_with_factor(mean, &cholesky(cov)?, n_zeta, n, seed, role)
}

/// Grid DAG with arcs rightward and downward, from the top-left node to the
/// bottom-right node. Node `(r, c)` has id `r * cols + c`.
pub fn make_graph(rows: usize, cols: usize) -> Result<DirectedGraph> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid("grid needs at least 2 rows and 2 columns"));
    }
    let mut arcs = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                arcs.push((v, v + 1));
            }
            if r + 1 < rows {
                arcs.push((v, v + cols));
            }
        }
    }
    DirectedGraph::new(rows * cols, arcs, 0, rows * cols - 1)
}

/// Multiplies each mean by `1 + delta` with `delta ~ U[0, m]` i.i.d.
/// Draws `u ~ U[0,1]` and sets `delta = m u`, so one seed gives nested shifts
/// across levels.
pub fn perturb_means(mu: &[f64], max_perturbation: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&max_perturbation) {
        return Err(Error::invalid("maximum perturbation must lie in [0, 1]"));
    }
    let mut rng = rng_for(seed);
    Ok(mu
        .iter()
        .map(|m| {
            let u: f64 = rng.gen();
            m * (1.0 + max_perturbation * u)
        })
        .collect())
}

/// Parameters of a synthetic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemSpec {
    pub rows: usize,
    pub cols: usize,
    pub n_zeta: usize,
    pub mean_low: f64,
    pub mean_high: f64,
    /// `sigma_xi = ratio * mu_xi`.
    pub sigma_xi_ratio: f64,
    pub sigma_zeta: f64,
    pub spectrum: SpdSpectrum,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            rows: 5,
            cols: 9,
            n_zeta: 20,
            mean_low: 2.0,
            mean_high: 10.0,
            sigma_xi_ratio: 0.25,
            sigma_zeta: 1.0,
            spectrum: SpdSpectrum::Ones,
        }
    }
}

/// A generated joint Gaussian law for `(zeta, xi)` on a grid graph.
#[derive(Debug, Clone)]
pub struct Problem {
    pub graph: DirectedGraph,
    pub n_zeta: usize,
    /// Mean of `(zeta, xi)`; `zeta` has mean zero.
    pub mean: Vec<f64>,
    pub covariance: SquareMatrix,
    factor: SquareMatrix,
}

impl Problem {
    pub fn generate(spec: &ProblemSpec, seed: u64) -> Result<Self> {
        Self::generate_on(make_graph(spec.rows, spec.cols)?, spec, seed)
    }

    /// As [`Problem::generate`] on a given graph; `rows` and `cols` are ignored.
    pub fn generate_on(graph: DirectedGraph, spec: &ProblemSpec, seed: u64) -> Result<Self> {
        if spec.n_zeta == 0 {
            return Err(Error::invalid("need at least one covariate"));
        }
        if !(spec.mean_low > 0.0 && spec.mean_high >= spec.mean_low) {
            return Err(Error::invalid("mean range must be positive and ordered"));
        }
        let n_arcs = graph.arc_count();
        let dim = spec.n_zeta + n_arcs;
        let mut rng = rng_for(seed);
        let mu_xi: Vec<f64> = (0..n_arcs)
            .map(|_| rng.gen_range(spec.mean_low..=spec.mean_high))
            .collect();
        let mut mean = vec![0.0; spec.n_zeta];
        mean.extend_from_slice(&mu_xi);
        let mut sigma = vec![spec.sigma_zeta; spec.n_zeta];
        sigma.extend(mu_xi.iter().map(|m| spec.sigma_xi_ratio * m));
        let spd = make_spd_matrix(dim, rng.gen(), spec.spectrum)?;
        let covariance = covariance_with_std(&spd, &sigma)?;
        let factor = cholesky(&covariance)?;
        Ok(Problem {
            graph,
            n_zeta: spec.n_zeta,
            mean,
            covariance,
            factor,
        })
    }

    pub fn mean_xi(&self) -> &[f64] {
        &self.mean[self.n_zeta..]
    }

    /// Samples with the travel-time means replaced by `mean_xi`; the same
    /// seed reuses the same noise for every mean.
    pub fn sample(&self, mean_xi: &[f64], n: usize, seed: u64, role: Role) -> Result<Dataset> {
        if mean_xi.len() != self.graph.arc_count() {
            return Err(Error::invalid("travel-time mean has the wrong length"));
        }
        let mut mean = self.mean[..self.n_zeta].to_vec();
        mean.extend_from_slice(mean_xi);
        sample_with_factor(&mean, &self.factor, self.n_zeta, n, seed, role)
    }
}

/// Seeds and sizes recorded next to generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub problem: ProblemSpec,
    pub seeds: BTreeMap<String, u64>,
    pub sizes: BTreeMap<String, usize>,
    pub perturbation: f64,
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
