//! Gaussian mixtures over feature codes: log densities, EM fitting and sampling.
//!
//! Covariances are factored with a Cholesky decomposition; no covariance is
//! ever inverted explicitly.

use ndarray::{Array1, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::neural::Matrix;
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Components whose weight falls below this are reinitialized.
pub const COLLAPSE_WEIGHT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovType {
    Diag,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Covariances {
    /// `K × M` per-coordinate variances.
    Diag(Matrix),
    /// `K` full `M × M` matrices.
    Full(Vec<Matrix>),
}

/// Borrowed covariance of one component.
#[derive(Clone, Copy, Debug)]
pub enum CovRef<'a> {
    Diag(ArrayView1<'a, f64>),
    Full(&'a Matrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `K × M`
    pub means: Matrix,
    pub covariances: Covariances,
    /// Added to covariance diagonals at every M-step.
    pub ridge: f64,
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::shape(format!(
                "covariance is {:?}, not square",
                a.dim()
            )));
        }
        let mut l = Matrix::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::numeric(format!(
                    "covariance is not positive definite (pivot {j} = {d:e}); increase the ridge"
                )));
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `vᵀ A⁻¹ v` by forward substitution.
    pub fn mahalanobis(&self, v: &[f64]) -> f64 {
        let n = v.len();
        let mut y = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = v[i];
            for k in 0..i {
                s -= self.lower[[i, k]] * y[k];
            }
            y[i] = s / self.lower[[i, i]];
            acc += y[i] * y[i];
        }
        acc
    }

    /// `L z`
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        (0..z.len())
            .map(|i| (0..=i).map(|k| self.lower[[i, k]] * z[k]).sum())
            .collect()
    }
}

/// A component ready for repeated evaluation.
#[derive(Clone, Debug)]
enum Factor {
    Diag { var: Array1<f64>, log_det: f64 },
    Full(Cholesky),
}

impl Factor {
    fn new(cov: CovRef<'_>) -> Result<Self> {
        match cov {
            CovRef::Diag(var) => {
                if let Some((j, v)) = var.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                    return Err(Error::numeric(format!(
                        "variance {j} is {v:e}, not positive; increase the ridge"
                    )));
                }
                Ok(Factor::Diag {
                    var: var.to_owned(),
                    log_det: var.iter().map(|v| v.ln()).sum(),
                })
            }
            CovRef::Full(m) => Ok(Factor::Full(Cholesky::new(m)?)),
        }
    }

    fn logpdf(&self, f: ArrayView1<'_, f64>, mu: ArrayView1<'_, f64>) -> f64 {
        let m = f.len() as f64;
        let (log_det, quad) = match self {
            Factor::Diag { var, log_det } => {
                let q = f
                    .iter()
                    .zip(mu.iter())
                    .zip(var.iter())
                    .map(|((x, u), v)| (x - u) * (x - u) / v)
                    .sum::<f64>();
                (*log_det, q)
            }
            Factor::Full(ch) => {
                let diff: Vec<f64> = f.iter().zip(mu.iter()).map(|(x, u)| x - u).collect();
                (ch.log_det(), ch.mahalanobis(&diff))
            }
        };
        -0.5 * (m * LN_2PI + log_det + quad)
    }
}

/// Log of the multivariate normal density at `f`.
pub fn gaussian_logpdf(f: &[f64], mu: &[f64], cov: CovRef<'_>) -> Result<f64> {
    let m = f.len();
    let cov_dim = match cov {
        CovRef::Diag(v) => v.len(),
        CovRef::Full(s) => s.nrows(),
    };
    if mu.len() != m || cov_dim != m {
        return Err(Error::shape(format!(
            "point has {m} dims, mean {}, covariance {cov_dim}",
            mu.len()
        )));
    }
    let factor = Factor::new(cov)?;
    Ok(factor.logpdf(ArrayView1::from(f), ArrayView1::from(mu)))
}

/// `log Σ exp(v)`, stable for large magnitudes.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn cov_type(&self) -> CovType {
        match self.covariances {
            Covariances::Diag(_) => CovType::Diag,
            Covariances::Full(_) => CovType::Full,
        }
    }

    pub fn cov(&self, k: usize) -> CovRef<'_> {
        match &self.covariances {
            Covariances::Diag(v) => CovRef::Diag(v.row(k)),
            Covariances::Full(c) => CovRef::Full(&c[k]),
        }
    }

    /// Check shapes, the weight simplex and positive definiteness.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let m = self.dim();
        if k == 0 || self.means.nrows() != k {
            return Err(Error::validation(format!(
                "{k} weights but {} means",
                self.means.nrows()
            )));
        }
        match &self.covariances {
            Covariances::Diag(v) if v.dim() != (k, m) => {
                return Err(Error::validation("diagonal covariance shape mismatch"))
            }
            Covariances::Full(c) if c.len() != k || c.iter().any(|s| s.dim() != (m, m)) => {
                return Err(Error::validation("full covariance shape mismatch"))
            }
            _ => {}
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::validation("mixture weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if let Covariances::Full(c) = &self.covariances {
            for s in c {
                for i in 0..m {
                    for j in 0..i {
                        if s[[i, j]] != s[[j, i]] {
                            return Err(Error::validation("covariance is not symmetric"));
                        }
                    }
                }
            }
        }
        if !self.means.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("non-finite mixture mean"));
        }
        self.factors().map(|_| ())
    }

    fn factors(&self) -> Result<Vec<Factor>> {
        (0..self.k()).map(|k| Factor::new(self.cov(k))).collect()
    }

    /// Per-point, per-component `log α_k + log φ_k(f)`.
    fn weighted_log_probs(&self, features: &Matrix) -> Result<Matrix> {
        if features.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "features have {} dims, mixture {}",
                features.ncols(),
                self.dim()
            )));
        }
        let factors = self.factors()?;
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut out = Matrix::zeros((features.nrows(), self.k()));
        for (i, f) in features.rows().into_iter().enumerate() {
            for (k, fac) in factors.iter().enumerate() {
                out[[i, k]] = log_w[k] + fac.logpdf(f, self.means.row(k));
            }
        }
        Ok(out)
    }

    /// Log mixture density of every row of `features`.
    pub fn log_density(&self, features: &Matrix) -> Result<Vec<f64>> {
        let lp = self.weighted_log_probs(features)?;
        Ok(lp
            .rows()
            .into_iter()
            .map(|r| log_sum_exp(r.as_slice().expect("standard layout")))
            .collect())
    }
}

/// Log mixture density at a single point.
pub fn gmm_logdensity(f: &[f64], model: &GmmModel) -> Result<f64> {
    let m = Matrix::from_shape_vec((1, f.len()), f.to_vec()).expect("row vector");
    Ok(model.log_density(&m)?[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop when the mean log-likelihood changes by less than this.
    pub tol: f64,
    pub seed: u64,
    pub ridge: f64,
    pub cov_type: CovType,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
            ridge: 1e-6,
            cov_type: CovType::Diag,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmFit {
    pub model: GmmModel,
    /// Mean log-likelihood of the initial model, then after every M-step.
    pub log_lik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fit a `k`-component mixture by expectation maximization.
///
/// Means start at `k` distinct random data points, covariances at the ridged
/// global covariance, weights uniform.
pub fn em_fit(features: &Matrix, k: usize, opts: &EmOptions) -> Result<EmFit> {
    let (n, m) = features.dim();
    if k == 0 || n <= k {
        return Err(Error::validation(format!(
            "need more samples ({n}) than components ({k})"
        )));
    }
    if m == 0 {
        return Err(Error::validation("features have zero dimensions"));
    }
    if !features.iter().all(|v| v.is_finite()) {
        return Err(Error::validation("features contain non-finite values"));
    }
    if !(opts.tol > 0.0) || opts.max_iters == 0 {
        return Err(Error::config("EM needs tol > 0 and max_iters >= 1"));
    }
    if !(opts.ridge >= 0.0) {
        return Err(Error::config("ridge must be non-negative"));
    }
    let mut rng = RngStream::for_parts(opts.seed, &[0xE3]);
    let global = global_covariance(features, opts.cov_type, opts.ridge);

    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let means = features.select(Axis(0), &idx[..k]);
    let covariances = match &global {
        Covariances::Diag(v) => {
            Covariances::Diag(v.broadcast((k, m)).expect("row broadcast").to_owned())
        }
        Covariances::Full(c) => Covariances::Full(vec![c[0].clone(); k]),
    };
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means,
        covariances,
        ridge: opts.ridge,
    };

    let (mut ll, mut resp) = e_step(&model, features)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        m_step(&mut model, features, &resp, opts.ridge);
        reseed_collapsed(&mut model, features, &global, &mut rng);
        let (next, r) = e_step(&model, features)?;
        iterations += 1;
        trace.push(next);
        resp = r;
        let delta = (next - ll).abs();
        ll = next;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        model,
        log_lik_trace: trace,
        iterations,
        converged,
    })
}

fn global_covariance(x: &Matrix, cov_type: CovType, ridge: f64) -> Covariances {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    match cov_type {
        CovType::Diag => {
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n + ridge;
            Covariances::Diag(var.insert_axis(Axis(0)))
        }
        CovType::Full => {
            let mut c = centered.t().dot(&centered) / n;
            symmetrize(&mut c);
            for j in 0..c.nrows() {
                c[[j, j]] += ridge;
            }
            Covariances::Full(vec![c])
        }
    }
}

fn symmetrize(c: &mut Matrix) {
    for i in 0..c.nrows() {
        for j in 0..i {
            let v = 0.5 * (c[[i, j]] + c[[j, i]]);
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
}

/// Responsibilities and the mean log-likelihood under `model`.
fn e_step(model: &GmmModel, x: &Matrix) -> Result<(f64, Matrix)> {
    let mut lp = model.weighted_log_probs(x)?;
    let mut total = 0.0;
    for mut row in lp.rows_mut() {
        let lse = log_sum_exp(row.as_slice().expect("standard layout"));
        total += lse;
        row.mapv_inplace(|v| (v - lse).exp());
    }
    Ok((total / x.nrows() as f64, lp))
}

fn m_step(model: &mut GmmModel, x: &Matrix, resp: &Matrix, ridge: f64) {
    let (n, m) = x.dim();
    let k = model.k();
    let nk: Vec<f64> = (0..k).map(|j| resp.column(j).sum()).collect();
    let total: f64 = nk.iter().sum();
    model.weights = nk.iter().map(|v| v / total).collect();
    for j in 0..k {
        if nk[j] <= 0.0 {
            continue;
        }
        let mut mean = Array1::<f64>::zeros(m);
        for i in 0..n {
            mean.scaled_add(resp[[i, j]], &x.row(i));
        }
        mean /= nk[j];
        model.means.row_mut(j).assign(&mean);
    }
    match &mut model.covariances {
        Covariances::Diag(var) => {
            for j in 0..k {
                if nk[j] <= 0.0 {
                    continue;
                }
                let mu = model.means.row(j);
                let mut acc = Array1::<f64>::zeros(m);
                for i in 0..n {
                    let r = resp[[i, j]];
                    for d in 0..m {
                        let diff = x[[i, d]] - mu[d];
                        acc[d] += r * diff * diff;
                    }
                }
                var.row_mut(j).assign(&(acc / nk[j] + ridge));
            }
        }
        Covariances::Full(covs) => {
            for j in 0..k {
                if nk[j] <= 0.0 {
                    continue;
                }
                let mu = model.means.row(j);
                let mut centered = x - &mu;
                for (i, mut row) in centered.rows_mut().into_iter().enumerate() {
                    row *= resp[[i, j]].sqrt();
                }
                let mut c = centered.t().dot(&centered) / nk[j];
                symmetrize(&mut c);
                for d in 0..m {
                    c[[d, d]] += ridge;
                }
                covs[j] = c;
            }
        }
    }
}

fn reseed_collapsed(model: &mut GmmModel, x: &Matrix, global: &Covariances, rng: &mut RngStream) {
    let k = model.k();
    let mut changed = false;
    for j in 0..k {
        if model.weights[j] >= COLLAPSE_WEIGHT {
            continue;
        }
        let pick = rng.index(x.nrows());
        log::warn!(
            "mixture component {j} collapsed (weight {:e}); reinitializing from sample {pick}",
            model.weights[j]
        );
        model.means.row_mut(j).assign(&x.row(pick));
        match (&mut model.covariances, global) {
            (Covariances::Diag(v), Covariances::Diag(g)) => v.row_mut(j).assign(&g.row(0)),
            (Covariances::Full(c), Covariances::Full(g)) => c[j] = g[0].clone(),
            _ => unreachable!("covariance type is fixed per fit"),
        }
        model.weights[j] = 1.0 / k as f64;
        changed = true;
    }
    if changed {
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
}

/// Draw `n` raw samples: a component from the weights, then a Gaussian draw.
pub fn gmm_sample(model: &GmmModel, n: usize, rng: &mut RngStream) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::validation("sample count must be at least 1"));
    }
    model.validate()?;
    let m = model.dim();
    let factors = model.factors()?;
    let mut out = Matrix::zeros((n, m));
    for mut row in out.rows_mut() {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut comp = model.k() - 1;
        for (j, w) in model.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = j;
                break;
            }
        }
        let z: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let mu = model.means.row(comp);
        match &factors[comp] {
            Factor::Diag { var, .. } => {
                for d in 0..m {
                    row[d] = mu[d] + var[d].sqrt() * z[d];
                }
            }
            Factor::Full(ch) => {
                let lz = ch.mul_lower(&z);
                for d in 0..m {
                    row[d] = mu[d] + lz[d];
                }
            }
        }
    }
    Ok(out)
}

/// For each true mean, the index of the nearest still-unclaimed fitted mean.
pub fn match_components(truth: &Matrix, fitted: &Matrix) -> Vec<usize> {
    let mut taken = vec![false; fitted.nrows()];
    truth
        .rows()
        .into_iter()
        .map(|t| {
            let best = (0..fitted.nrows())
                .filter(|&j| !taken[j])
                .min_by(|&a, &b| {
                    let da = sq_dist(t, fitted.row(a));
                    let db = sq_dist(t, fitted.row(b));
                    da.total_cmp(&db)
                })
                .expect("at least as many fitted as true components");
            taken[best] = true;
            best
        })
        .collect()
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
