//! Matrix-variate t distribution with the two structural constraints the
//! classifier relies on: a mean matrix whose columns are all identical and
//! an AR(1) correlation across columns.
//!
//! For a p×q observation X the log-density is
//!
//! ```text
//! log f(X) = lnΓ_p(a₁) − lnΓ_p(a₂) − (pq/2)·ln π − (q/2)·ln|Σ| − (p/2)·ln|Ψ|
//!            − a₁·ln|I_p + Σ⁻¹ (X−M) Ψ⁻¹ (X−M)ᵀ|
//! ```
//!
//! with a₁ = (ν+p+q−1)/2, a₂ = (ν+p−1)/2, row covariance Σ (p×p, SPD),
//! column correlation Ψ_jk = ρ^|j−k| (unit diagonal, which pins down the
//! Σ·Ψ scale split), and M = m·1ᵀ. Everything stays in log space; the
//! determinant terms come from Cholesky factors, never from raw products.
//!
//! The same distribution arises by drawing a precision S ~ Wishart_p(ν+p−1,
//! Σ⁻¹) and then X | S ~ matrix-normal(M, S⁻¹, Ψ). That mixture view powers
//! both the sampler and the EM fitter: conditionally on X, S is again
//! Wishart with closed-form mean, which is the whole E-step.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Keeps the AR(1) coefficient strictly inside (−1, 1) during fitting.
const RHO_MARGIN: f64 = 1e-6;

// ── parameters ──

/// Parameters of the constrained matrix-variate t distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixTParams {
    p: usize,
    q: usize,
    dof: f64,
    mean_col: Vec<f64>,
    /// Row covariance Σ, row-major p×p.
    row_cov: Vec<f64>,
    ar1_rho: f64,
}

impl MatrixTParams {
    /// Builds and validates a parameter set. `row_cov` is row-major p×p and
    /// must be symmetric positive-definite; `ar1_rho` must lie strictly
    /// inside (−1, 1).
    pub fn new(
        mean_col: Vec<f64>,
        row_cov: Vec<f64>,
        ar1_rho: f64,
        q: usize,
        dof: f64,
    ) -> Result<Self> {
        let p = mean_col.len();
        if p == 0 {
            return Err(Error::param("mean_col", "must not be empty"));
        }
        if q == 0 {
            return Err(Error::param("q", "column dimension must be at least 1"));
        }
        if !dof.is_finite() || dof <= 0.0 {
            return Err(Error::param("dof", "degrees of freedom must be positive"));
        }
        if !ar1_rho.is_finite() || ar1_rho.abs() >= 1.0 {
            return Err(Error::param(
                "ar1_rho",
                "column correlation must lie strictly inside (-1, 1)",
            ));
        }
        if row_cov.len() != p * p {
            return Err(Error::param("row_cov", "length must be p*p"));
        }
        if mean_col.iter().chain(&row_cov).any(|v| !v.is_finite()) {
            return Err(Error::param("params", "entries must be finite"));
        }
        let mut sigma = DMatrix::from_row_slice(p, p, &row_cov);
        let scale = sigma.amax().max(1.0);
        for i in 0..p {
            for j in i + 1..p {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::param("row_cov", "must be symmetric"));
                }
                let avg = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
                sigma[(i, j)] = avg;
                sigma[(j, i)] = avg;
            }
        }
        if Cholesky::new(sigma.clone()).is_none() {
            return Err(Error::NotPositiveDefinite {
                context: "row covariance".into(),
            });
        }
        let row_cov = (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .map(|(i, j)| sigma[(i, j)])
            .collect();
        Ok(Self {
            p,
            q,
            dof,
            mean_col,
            row_cov,
            ar1_rho,
        })
    }

    fn from_parts(
        mean: &DVector<f64>,
        sigma: &DMatrix<f64>,
        ar1_rho: f64,
        q: usize,
        dof: f64,
    ) -> Result<Self> {
        let p = sigma.nrows();
        let mut row_cov = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                row_cov.push(sigma[(i, j)]);
            }
        }
        Self::new(mean.iter().copied().collect(), row_cov, ar1_rho, q, dof)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn ar1_rho(&self) -> f64 {
        self.ar1_rho
    }

    pub fn mean_col(&self) -> &[f64] {
        &self.mean_col
    }

    /// Row covariance Σ as a dense matrix.
    pub fn sigma(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p, self.p, &self.row_cov)
    }

    /// Column correlation Ψ with Ψ_jk = ρ^|j−k|.
    pub fn psi(&self) -> DMatrix<f64> {
        ar1_correlation(self.q, self.ar1_rho)
    }

    /// The mean matrix m·1ᵀ (every column equals `mean_col`).
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.q, |i, _| self.mean_col[i])
    }

    /// Log-density at a p×q observation.
    pub fn log_density(&self, x: &DMatrix<f64>) -> Result<f64> {
        let (p, q) = (self.p, self.q);
        if x.nrows() != p || x.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "observation is {}x{} but parameters expect {}x{}",
                x.nrows(),
                x.ncols(),
                p,
                q
            )));
        }
        let chol_sigma = Cholesky::new(self.sigma()).ok_or_else(|| Error::NotPositiveDefinite {
            context: "row covariance".into(),
        })?;
        let chol_psi = Cholesky::new(self.psi()).ok_or_else(|| Error::NotPositiveDefinite {
            context: "column correlation".into(),
        })?;
        let k = x - self.mean_matrix();
        // E = L_Σ⁻¹ K L_Ψ⁻ᵀ gives I + Σ⁻¹KΨ⁻¹Kᵀ the same determinant as
        // I + EEᵀ, which is SPD by construction and safe to factor.
        let c = chol_sigma
            .l()
            .solve_lower_triangular(&k)
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "row covariance factor".into(),
            })?;
        let e_t = chol_psi
            .l()
            .solve_lower_triangular(&c.transpose())
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "column correlation factor".into(),
            })?;
        let mut core = e_t.transpose() * &e_t;
        for i in 0..p {
            core[(i, i)] += 1.0;
        }
        let chol_core = Cholesky::new(core).ok_or_else(|| Error::NotPositiveDefinite {
            context: "whitened scatter".into(),
        })?;
        let ln_det_core: f64 = 2.0 * chol_core.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let ln_det_sigma: f64 =
            2.0 * chol_sigma.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let ln_det_psi = (q as f64 - 1.0) * (1.0 - self.ar1_rho * self.ar1_rho).ln();
        let (pf, qf) = (p as f64, q as f64);
        let a1 = 0.5 * (self.dof + pf + qf - 1.0);
        let a2 = 0.5 * (self.dof + pf - 1.0);
        Ok(ln_multigamma(p, a1) - ln_multigamma(p, a2)
            - 0.5 * pf * qf * PI.ln()
            - 0.5 * qf * ln_det_sigma
            - 0.5 * pf * ln_det_psi
            - a1 * ln_det_core)
    }

    /// Draws `n` observations using the Wishart mixture representation:
    /// S ~ Wishart_p(ν+p−1, Σ⁻¹) via the Bartlett factorization, then
    /// X = M + R·Z·L_Ψᵀ with R·Rᵀ = S⁻¹ and Z a p×q standard-normal matrix.
    /// Fixed seeds reproduce bit-identical draws.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
        if n == 0 {
            return Err(Error::param("n", "at least one draw required"));
        }
        let (p, q) = (self.p, self.q);
        let d = self.dof + p as f64 - 1.0;
        let omega = Cholesky::new(self.sigma())
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "row covariance".into(),
            })?
            .inverse();
        let l_omega = Cholesky::new(omega)
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "row precision".into(),
            })?
            .l();
        let l_psi_t = Cholesky::new(self.psi())
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "column correlation".into(),
            })?
            .l()
            .transpose();
        let mean = self.mean_matrix();
        let identity = DMatrix::<f64>::identity(p, p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut a = DMatrix::<f64>::zeros(p, p);
            for i in 0..p {
                // d − i > 0 because d − (p−1) equals the degrees of freedom
                let chi = ChiSquared::new(d - i as f64)
                    .map_err(|_| Error::param("dof", "degrees of freedom too small to sample"))?;
                a[(i, i)] = chi.sample(&mut rng).sqrt();
                for j in 0..i {
                    a[(i, j)] = rng.sample(StandardNormal);
                }
            }
            let l_s = &l_omega * a;
            let r = l_s
                .transpose()
                .solve_upper_triangular(&identity)
                .ok_or_else(|| Error::NotPositiveDefinite {
                    context: "precision draw".into(),
                })?;
            let mut z = DMatrix::<f64>::zeros(p, q);
            for j in 0..q {
                for i in 0..p {
                    z[(i, j)] = rng.sample(StandardNormal);
                }
            }
            out.push(&mean + r * z * &l_psi_t);
        }
        Ok(out)
    }
}

// ── AR(1) structure ──

/// The AR(1) correlation matrix Ψ_jk = ρ^|j−k|.
pub fn ar1_correlation(q: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(q, q, |j, k| rho.powi(j.abs_diff(k) as i32))
}

/// Closed-form tridiagonal inverse of the AR(1) correlation matrix.
pub fn ar1_inverse(q: usize, rho: f64) -> DMatrix<f64> {
    if q == 1 {
        return DMatrix::identity(1, 1);
    }
    let s = 1.0 / (1.0 - rho * rho);
    DMatrix::from_fn(q, q, |j, k| {
        if j == k {
            if j == 0 || j == q - 1 {
                s
            } else {
                s * (1.0 + rho * rho)
            }
        } else if j.abs_diff(k) == 1 {
            -s * rho
        } else {
            0.0
        }
    })
}

fn ln_multigamma(p: usize, a: f64) -> f64 {
    let mut acc = 0.25 * (p * (p - 1)) as f64 * PI.ln();
    for i in 0..p {
        acc += ln_gamma(a - 0.5 * i as f64);
    }
    acc
}

// ── EM fitting ──

/// Options for [`fit`]. `ridge` keeps the row scale floored at 1e-8·trace
/// above singular throughout the iteration instead of failing: with fewer
/// observed columns than rows the likelihood is unbounded and Σ would
/// otherwise collapse onto the sample subspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub dof: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub ridge: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            dof: 5.0,
            tol: 1e-8,
            max_iter: 500,
            ridge: false,
        }
    }
}

/// Outcome of an EM fit: estimates plus the full log-likelihood trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub params: MatrixTParams,
    pub n: usize,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub loglik_trace: Vec<f64>,
}

/// Fits the constrained matrix-t by expectation-maximization with ν held
/// fixed. The E-step replaces each sample's latent row precision by its
/// conditional Wishart mean; the M-step updates m and Σ in closed form and
/// ρ by a bracketed 1-D search of the profile objective. The observed
/// log-likelihood never decreases across iterations (up to round-off)
/// except when the ridge floor is active, where it tracks the regularized
/// objective instead; any decreases are summarized in the warnings.
pub fn fit(samples: &[DMatrix<f64>], options: &FitOptions) -> Result<FitReport> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n, min: 2 });
    }
    let (p, q) = (samples[0].nrows(), samples[0].ncols());
    if p == 0 || q == 0 {
        return Err(Error::param("samples", "observations must be non-empty"));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.nrows() != p || s.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "sample {} is {}x{} but sample 0 is {}x{}",
                i,
                s.nrows(),
                s.ncols(),
                p,
                q
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("samples", "entries must be finite"));
        }
    }
    if !options.dof.is_finite() || options.dof <= 0.0 {
        return Err(Error::param("dof", "degrees of freedom must be positive"));
    }
    let (nf, pf, qf) = (n as f64, p as f64, q as f64);
    let mut warnings = Vec::new();
    if n < p * q + 2 {
        warnings.push(format!(
            "{} samples is below the identifiability heuristic of p*q + 2 = {}; estimates may be unstable",
            n,
            p * q + 2
        ));
    }

    // Moment-based starting point: the residual row scatter estimates
    // Σ/(ν−2), and the pooled lag-1 column correlation seeds ρ.
    let mut mean = DVector::<f64>::zeros(p);
    for s in samples {
        mean += s.column_sum();
    }
    mean /= nf * qf;
    let mut scatter = DMatrix::<f64>::zeros(p, p);
    for s in samples {
        let k = centered(s, &mean);
        scatter += &k * k.transpose();
    }
    scatter /= nf * qf;
    let mut sigma = scatter * if options.dof > 2.0 { options.dof - 2.0 } else { 1.0 };
    ensure_spd(&mut sigma, options.ridge, &mut warnings)?;
    let mut rho = if q == 1 {
        0.0
    } else {
        init_rho(samples, &mean).clamp(-0.9, 0.9)
    };

    let mut params = MatrixTParams::from_parts(&mean, &sigma, rho, q, options.dof)?;
    let mut loglik = total_loglik(&params, samples)?;
    let mut trace = vec![loglik];
    let d = options.dof + pf - 1.0;
    let weight = d + qf;
    let mut converged = false;
    let mut iterations = 0;
    let mut decreases = 0usize;
    let mut worst_decrease = 0.0f64;

    for iter in 1..=options.max_iter {
        iterations = iter;
        let psi_inv = ar1_inverse(q, rho);
        let sigma_cur = params.sigma();
        let mean_cur = DVector::from_column_slice(params.mean_col());

        // E-step: W_i = (ν+p+q−1)·(Σ + K_i Ψ⁻¹ K_iᵀ)⁻¹, the conditional
        // mean of the latent row precision given sample i.
        let mut w_list = Vec::with_capacity(n);
        for s in samples {
            let k = centered(s, &mean_cur);
            let b = &sigma_cur + &k * &psi_inv * k.transpose();
            let chol = Cholesky::new(b).ok_or_else(|| Error::NotPositiveDefinite {
                context: "conditional scale".into(),
            })?;
            w_list.push(chol.inverse() * weight);
        }
        let sw = w_list
            .iter()
            .fold(DMatrix::<f64>::zeros(p, p), |acc, w| acc + w);
        let chol_sw = Cholesky::new(sw).ok_or(Error::DegenerateScatter)?;

        // Shared mean column: m = (1ᵀΨ⁻¹1)⁻¹ (ΣW_i)⁻¹ ΣW_i X_i Ψ⁻¹1.
        let ones_weighted = &psi_inv * DVector::from_element(q, 1.0);
        let col_weight = ones_weighted.sum();
        let mut rhs = DVector::<f64>::zeros(p);
        for (s, w) in samples.iter().zip(&w_list) {
            rhs += w * (s * &ones_weighted);
        }
        let new_mean = chol_sw.solve(&rhs) / col_weight;

        // Row covariance: Σ = n(ν+p−1)(ΣW_i)⁻¹. Under the ridge the floor is
        // reapplied every pass, since a rank-deficient sample set pushes Σ
        // back toward singular on each update.
        let mut new_sigma = chol_sw.inverse() * (nf * d);
        if options.ridge {
            let eps = 1e-8 * new_sigma.trace();
            for i in 0..p {
                new_sigma[(i, i)] += eps;
            }
        }
        ensure_spd(&mut new_sigma, options.ridge, &mut warnings)?;

        // AR(1) coefficient by profile search; a single column has no
        // correlation structure to estimate.
        let new_rho = if q == 1 {
            0.0
        } else {
            let mut col_scatter = DMatrix::<f64>::zeros(q, q);
            for (s, w) in samples.iter().zip(&w_list) {
                let k = centered(s, &new_mean);
                col_scatter += k.transpose() * w * &k;
            }
            maximize_rho(&col_scatter, nf * pf, rho)
        };

        params = MatrixTParams::from_parts(&new_mean, &new_sigma, new_rho, q, options.dof)?;
        rho = new_rho;
        let new_loglik = total_loglik(&params, samples)?;
        trace.push(new_loglik);
        if new_loglik < loglik - 1e-8 {
            decreases += 1;
            worst_decrease = worst_decrease.max(loglik - new_loglik);
        }
        let delta = (new_loglik - loglik).abs();
        loglik = new_loglik;
        if delta < options.tol * (1.0 + loglik.abs()) {
            converged = true;
            break;
        }
    }
    if decreases > 0 {
        // Expected once the ridge floor engages: the iteration then climbs
        // the regularized objective, not the raw likelihood.
        warnings.push(format!(
            "log-likelihood decreased on {} iterations (largest drop {:.3e})",
            decreases, worst_decrease
        ));
    }
    if !converged {
        warnings.push(format!(
            "stopped after {} iterations without meeting tol {:.1e}",
            options.max_iter, options.tol
        ));
    }
    Ok(FitReport {
        params,
        n,
        loglik,
        iterations,
        converged,
        warnings,
        loglik_trace: trace,
    })
}

fn centered(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut k = x.clone();
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            k[(i, j)] -= mean[i];
        }
    }
    k
}

fn total_loglik(params: &MatrixTParams, samples: &[DMatrix<f64>]) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        acc += params.log_density(s)?;
    }
    Ok(acc)
}

fn ensure_spd(mat: &mut DMatrix<f64>, ridge: bool, warnings: &mut Vec<String>) -> Result<()> {
    if Cholesky::new(mat.clone()).is_some() {
        return Ok(());
    }
    let trace = mat.trace();
    if ridge && trace > 0.0 {
        let eps = 1e-8 * trace;
        for i in 0..mat.nrows() {
            mat[(i, i)] += eps;
        }
        if Cholesky::new(mat.clone()).is_some() {
            warnings.push("scatter was near-singular; stabilized with a diagonal ridge".into());
            return Ok(());
        }
    }
    Err(Error::DegenerateScatter)
}

fn init_rho(samples: &[DMatrix<f64>], mean: &DVector<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let k = centered(s, mean);
        let q = k.ncols();
        for j in 0..q - 1 {
            num += k.column(j).dot(&k.column(j + 1));
        }
        den += k.iter().map(|v| v * v).sum::<f64>() * (q as f64 - 1.0) / q as f64;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Maximizes the ρ-profile of the expected complete log-likelihood,
///   −(np/2)(q−1)·ln(1−ρ²) − ½·tr(Ψ(ρ)⁻¹ C),
/// using the tridiagonal form of Ψ⁻¹. A coarse grid brackets the optimum,
/// golden-section search refines it, and the incumbent ρ stays among the
/// candidates so the step can never lower the objective.
fn maximize_rho(col_scatter: &DMatrix<f64>, np: f64, rho_old: f64) -> f64 {
    let q = col_scatter.nrows();
    let s_end = col_scatter[(0, 0)] + col_scatter[(q - 1, q - 1)];
    let s_mid: f64 = (1..q - 1).map(|j| col_scatter[(j, j)]).sum();
    let s_off: f64 = (0..q - 1).map(|j| col_scatter[(j, j + 1)]).sum();
    let objective = |r: f64| {
        let one = 1.0 - r * r;
        -0.5 * np * (q as f64 - 1.0) * one.ln()
            - 0.5 * (s_end + (1.0 + r * r) * s_mid - 2.0 * r * s_off) / one
    };
    let lo = -1.0 + RHO_MARGIN;
    let hi = 1.0 - RHO_MARGIN;
    let cells = 40;
    let step = (hi - lo) / cells as f64;
    let mut best_r = lo;
    let mut best_v = objective(lo);
    for i in 1..=cells {
        let r = lo + step * i as f64;
        let v = objective(r);
        if v > best_v {
            best_v = v;
            best_r = r;
        }
    }
    let refined = golden_max(
        (best_r - step).max(lo),
        (best_r + step).min(hi),
        &objective,
    );
    let mut winner = rho_old.clamp(lo, hi);
    let mut winner_v = objective(winner);
    for cand in [best_r, refined] {
        let v = objective(cand);
        if v > winner_v {
            winner_v = v;
            winner = cand;
        }
    }
    winner
}

fn golden_max(mut a: f64, mut b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

// ── tests ──
