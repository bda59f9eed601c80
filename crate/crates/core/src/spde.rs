//! Gaussian Markov random field priors from the Matern stochastic PDE.
//!
//! With mass matrix C (lumped) and stiffness matrix G from the mesh, the
//! field weights get the sparse precision
//!
//! ```text
//! Q(kappa, tau) = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G)
//! ```
//!
//! whose inverse approximates a Matern(nu = 1) covariance in two dimensions.

use crate::chol::{CholError, CholFactor};
use crate::sparse::{SparseError, SparseSym};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpdeError {
    #[error("kappa and tau must be positive, got kappa={0}, tau={1}")]
    InvalidParams(f64, f64),
    #[error("only alpha = 2 is supported, got {0}")]
    UnsupportedAlpha(f64),
    #[error("dimension mismatch: C is {0}x{0}, G is {1}x{1}")]
    DimensionMismatch(usize, usize),
    #[error("mass matrix must have a strictly positive diagonal (entry {0})")]
    NonPositiveMass(usize),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("precision matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Parameters of the SPDE operator `(kappa^2 - lap)^{alpha/2} (tau beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdeParams {
    pub kappa: f64,
    pub tau: f64,
    pub alpha: f64,
    pub dim: usize,
}

impl SpdeParams {
    pub fn new(kappa: f64, tau: f64) -> Result<SpdeParams, SpdeError> {
        if !(kappa > 0.0 && tau > 0.0) {
            return Err(SpdeError::InvalidParams(kappa, tau));
        }
        Ok(SpdeParams {
            kappa,
            tau,
            alpha: 2.0,
            dim: 2,
        })
    }
}

/// Matern-family summary of an SPDE parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternSummary {
    /// Smoothness nu = alpha - dim/2.
    pub nu: f64,
    /// Marginal variance.
    pub sigma2: f64,
    /// Distance at which correlation drops to about 0.1: sqrt(8 nu) / kappa.
    pub range: f64,
}

/// Evaluates nu = alpha - d/2 and
/// sigma^2 = Gamma(nu) / (Gamma(alpha) (4 pi)^{d/2} kappa^{2 nu} tau^2).
pub fn matern_params(p: &SpdeParams) -> MaternSummary {
    let d = p.dim as f64;
    let nu = p.alpha - d / 2.0;
    let sigma2 = (ln_gamma(nu)
        - ln_gamma(p.alpha)
        - (d / 2.0) * (4.0 * std::f64::consts::PI).ln()
        - 2.0 * nu * p.kappa.ln()
        - 2.0 * p.tau.ln())
    .exp();
    MaternSummary {
        nu,
        sigma2,
        range: (8.0 * nu).sqrt() / p.kappa,
    }
}

/// Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G).
pub fn precision_matrix(c: &SparseSym, g: &SparseSym, p: &SpdeParams) -> Result<SparseSym, SpdeError> {
    Ok(SpdeOperator::new(c, g)?.precision(p))
}

/// Precomputed pieces of the SPDE precision on a merged pattern, so that
/// Q(kappa, tau) evaluations during hyperparameter exploration are a single
/// O(nnz) pass with a fixed sparsity pattern.
#[derive(Debug, Clone)]
pub struct SpdeOperator {
    n: usize,
    pattern: Vec<(usize, usize)>,
    c_vals: Vec<f64>,
    g_vals: Vec<f64>,
    gcg_vals: Vec<f64>,
}

impl SpdeOperator {
    pub fn new(c: &SparseSym, g: &SparseSym) -> Result<SpdeOperator, SpdeError> {
        let n = c.dim();
        if g.dim() != n {
            return Err(SpdeError::DimensionMismatch(n, g.dim()));
        }
        let cd = c.diagonal();
        if let Some(i) = (0..n).find(|&i| !(cd[i] > 0.0)) {
            return Err(SpdeError::NonPositiveMass(i));
        }
        let cinv: Vec<f64> = cd.iter().map(|&v| 1.0 / v).collect();
        let gc = g.to_csc().scale_cols(&cinv);
        let prod = gc.matmul(&g.to_csc());
        // Symmetrize exactly: (P + P') / 2 entry-wise.
        let mut triplets = Vec::with_capacity(prod.nnz());
        for j in 0..n {
            let (ri, rv) = prod.col(j);
            for (&i, &v) in ri.iter().zip(rv) {
                if i == j {
                    triplets.push((i, j, v));
                } else {
                    triplets.push((i.min(j), i.max(j), 0.5 * v));
                }
            }
        }
        let gcg = SparseSym::from_triplets(n, triplets)?;

        // Merge the three patterns.
        let mut pattern: Vec<(usize, usize)> = c
            .entries()
            .iter()
            .chain(g.entries())
            .chain(gcg.entries())
            .map(|&(i, j, _)| (i, j))
            .collect();
        pattern.sort_by_key(|&(i, j)| (j, i));
        pattern.dedup();
        let index_of = |i: usize, j: usize| pattern.binary_search_by_key(&(j, i), |&(a, b)| (b, a)).unwrap();
        let mut c_vals = vec![0.0; pattern.len()];
        let mut g_vals = vec![0.0; pattern.len()];
        let mut gcg_vals = vec![0.0; pattern.len()];
        for &(i, j, v) in c.entries() {
            c_vals[index_of(i, j)] = v;
        }
        for &(i, j, v) in g.entries() {
            g_vals[index_of(i, j)] = v;
        }
        for &(i, j, v) in gcg.entries() {
            gcg_vals[index_of(i, j)] = v;
        }
        Ok(SpdeOperator {
            n,
            pattern,
            c_vals,
            g_vals,
            gcg_vals,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Upper-triangle pattern of Q (fixed across parameter values).
    pub fn pattern(&self) -> &[(usize, usize)] {
        &self.pattern
    }

    pub fn precision(&self, p: &SpdeParams) -> SparseSym {
        let t2 = p.tau * p.tau;
        let k2 = p.kappa * p.kappa;
        let k4 = k2 * k2;
        let entries: Vec<(usize, usize, f64)> = self
            .pattern
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| {
                (
                    i,
                    j,
                    t2 * (k4 * self.c_vals[e] + 2.0 * k2 * self.g_vals[e] + self.gcg_vals[e]),
                )
            })
            .collect();
        SparseSym::from_sorted_upper(self.n, entries)
    }

    /// Entry values only, aligned with `pattern()`.
    pub fn precision_values(&self, p: &SpdeParams) -> Vec<f64> {
        let t2 = p.tau * p.tau;
        let k2 = p.kappa * p.kappa;
        let k4 = k2 * k2;
        (0..self.pattern.len())
            .map(|e| t2 * (k4 * self.c_vals[e] + 2.0 * k2 * self.g_vals[e] + self.gcg_vals[e]))
            .collect()
    }
}

/// One exact draw w ~ N(0, Q^{-1}) by sparse factorization; deterministic
/// given the seed.
pub fn sample_field(q: &SparseSym, seed: u64) -> Result<Vec<f64>, SpdeError> {
    let factor = CholFactor::new(q).map_err(|e| match e {
        CholError::NotPositiveDefinite(_, _) => SpdeError::NotPositiveDefinite,
        other => panic!("unexpected factorization error: {other}"),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with_factor(&factor, &mut rng))
}

/// Draw using an existing factor and RNG stream.
pub fn sample_with_factor(factor: &CholFactor, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..factor.dim())
        .map(|_| rand_distr::StandardNormal.sample(rng))
        .collect();
    factor.sample_zero_mean(&z)
}

/// Hyperparameter state: noise precision, AR partial-correlation transforms,
/// and per-field SPDE parameters, all in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    pub log_xi: f64,
    /// theta_k = log((1 + phi_{k-1}) / (1 - phi_{k-1})) for an AR(p) noise
    /// model. Empty when noise is treated as iid after prewhitening.
    pub ar_transforms: Vec<f64>,
    /// (log kappa_k, log tau_k) per latent field.
    pub fields: Vec<(f64, f64)>,
}

impl HyperState {
    pub fn new(log_xi: f64, ar_transforms: Vec<f64>, fields: Vec<(f64, f64)>) -> HyperState {
        HyperState {
            log_xi,
            ar_transforms,
            fields,
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.ar_transforms.len() + 2 * self.fields.len()
    }

    /// Flattens as (log xi, ar..., log kappa_0, log tau_0, ...).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.log_xi);
        v.extend_from_slice(&self.ar_transforms);
        for &(lk, lt) in &self.fields {
            v.push(lk);
            v.push(lt);
        }
        v
    }

    /// Rebuilds from a flat vector with the same shape as `self`.
    pub fn with_vec(&self, v: &[f64]) -> HyperState {
        assert_eq!(v.len(), self.dim());
        let p = self.ar_transforms.len();
        let mut fields = Vec::with_capacity(self.fields.len());
        for k in 0..self.fields.len() {
            fields.push((v[1 + p + 2 * k], v[1 + p + 2 * k + 1]));
        }
        HyperState {
            log_xi: v[0],
            ar_transforms: v[1..1 + p].to_vec(),
            fields,
        }
    }

    pub fn spde_params(&self, field: usize) -> Result<SpdeParams, SpdeError> {
        let (lk, lt) = self.fields[field];
        SpdeParams::new(lk.exp(), lt.exp())
    }
}

/// Hyperprior configuration. All densities are evaluated on the transformed
/// (unconstrained) variables directly.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPrior {
    /// Gamma(shape, rate) on xi, i.e. a log-gamma density on log xi.
    pub xi_shape: f64,
    pub xi_rate: f64,
    /// Independent normal prior precision on each AR transform.
    pub ar_precision: f64,
    /// log kappa ~ N(mean, sd^2).
    pub kappa_log_mean: f64,
    pub kappa_log_sd: f64,
    /// log tau ~ N(mean, sd^2).
    pub tau_log_mean: f64,
    pub tau_log_sd: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior {
            xi_shape: 1.0,
            xi_rate: 5e-5,
            ar_precision: 0.15,
            kappa_log_mean: 0.0,
            kappa_log_sd: 1.0,
            tau_log_mean: 0.0,
            tau_log_sd: 1.0,
        }
    }
}

fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Log prior density of a hyperparameter state.
pub fn log_hyperprior(state: &HyperState, prior: &HyperPrior) -> f64 {
    // Gamma(a, b) on xi as a density of t = log xi:
    // ln p(t) = a ln b - ln Gamma(a) + a t - b e^t.
    let (a, b) = (prior.xi_shape, prior.xi_rate);
    let mut lp = a * b.ln() - ln_gamma(a) + a * state.log_xi - b * state.log_xi.exp();
    let ar_sd = prior.ar_precision.powf(-0.5);
    for &t in &state.ar_transforms {
        lp += ln_normal(t, 0.0, ar_sd);
    }
    for &(lk, lt) in &state.fields {
        lp += ln_normal(lk, prior.kappa_log_mean, prior.kappa_log_sd);
        lp += ln_normal(lt, prior.tau_log_mean, prior.tau_log_sd);
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{mass_matrix, stiffness_matrix};
    use crate::mesh::{triangulate_lattice, Mask2d, TriMesh};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn matern_reference_values() {
        let m = matern_params(&SpdeParams::new(1.0, 1.0).unwrap());
        assert_relative_eq!(m.nu, 1.0);
        assert_relative_eq!(m.sigma2, 1.0 / (4.0 * PI), max_relative = 1e-12);
        assert_relative_eq!(m.range, 8.0f64.sqrt(), max_relative = 1e-12);

        let m2 = matern_params(&SpdeParams::new(2.0, 1.0).unwrap());
        assert_relative_eq!(m2.sigma2, 1.0 / (16.0 * PI), max_relative = 1e-12);

        let m3 = matern_params(&SpdeParams::new(1.0, 2.0).unwrap());
        assert_relative_eq!(m3.sigma2, m.sigma2 / 4.0, max_relative = 1e-12);
    }

    fn unit_right_triangle() -> TriMesh {
        TriMesh::build(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            vec![true; 3],
        )
        .unwrap()
    }

    #[test]
    fn scalar_precision() {
        let c = SparseSym::diag(&[0.7]);
        let g = SparseSym::from_triplets(1, vec![]).unwrap();
        let p = SpdeParams::new(1.5, 2.0).unwrap();
        let q = precision_matrix(&c, &g, &p).unwrap();
        assert_relative_eq!(
            q.to_dense()[(0, 0)],
            2.0 * 2.0 * 1.5f64.powi(4) * 0.7,
            max_relative = 1e-14
        );
    }

    #[test]
    fn precision_matches_dense_formula() {
        let mesh = unit_right_triangle();
        let c = mass_matrix(&mesh);
        let g = stiffness_matrix(&mesh);
        let p = SpdeParams::new(1.0, 1.0).unwrap();
        let q = precision_matrix(&c, &g, &p).unwrap().to_dense();
        let cd = c.to_dense();
        let gd = g.to_dense();
        let expect = &cd + 2.0 * &gd + &gd * cd.try_inverse().unwrap() * &gd;
        assert_relative_eq!((q - expect).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pattern_is_two_ring() {
        let lat = triangulate_lattice(&Mask2d::filled(5, 5), 5.0, 0).unwrap();
        let c = mass_matrix(&lat.mesh);
        let g = stiffness_matrix(&lat.mesh);
        let op = SpdeOperator::new(&c, &g).unwrap();
        // Brute-force two-ring pattern from the boolean square of G's pattern.
        let n = lat.mesh.n_vertices();
        let gd = g.to_dense();
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                if gd[(i, j)] != 0.0 || i == j {
                    adj[i][j] = true;
                }
            }
        }
        let mut two_ring = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                two_ring[i][j] = (0..n).any(|k| adj[i][k] && adj[k][j]);
            }
        }
        let expect: Vec<(usize, usize)> = (0..n)
            .flat_map(|j| (0..=j).map(move |i| (i, j)))
            .filter(|&(i, j)| two_ring[i][j])
            .collect();
        let mut got = op.pattern().to_vec();
        got.sort_by_key(|&(i, j)| (j, i));
        assert_eq!(got, expect);
    }

    #[test]
    fn tau_scaling_identity_is_exact() {
        let lat = triangulate_lattice(&Mask2d::filled(4, 3), 4.0, 0).unwrap();
        let op = SpdeOperator::new(
            &mass_matrix(&lat.mesh),
            &stiffness_matrix(&lat.mesh),
        )
        .unwrap();
        let kappa = 0.8;
        let q1 = op.precision_values(&SpdeParams::new(kappa, 1.0).unwrap());
        let qt = op.precision_values(&SpdeParams::new(kappa, 2.5).unwrap());
        for (a, b) in q1.iter().zip(&qt) {
            assert_eq!(a * (2.5 * 2.5), *b);
        }
    }

    proptest! {
        #[test]
        fn precision_is_spd_for_positive_params(
            log_kappa in -2.0f64..2.0,
            log_tau in -2.0f64..2.0,
        ) {
            let lat = triangulate_lattice(&Mask2d::filled(4, 4), 4.0, 1).unwrap();
            let c = mass_matrix(&lat.mesh);
            let g = stiffness_matrix(&lat.mesh);
            let p = SpdeParams::new(log_kappa.exp(), log_tau.exp()).unwrap();
            let q = precision_matrix(&c, &g, &p).unwrap();
            prop_assert!(CholFactor::new(&q).is_ok());
            let eig = q.to_dense().symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
        }
    }

    #[test]
    fn identity_precision_returns_raw_draw() {
        let q = SparseSym::identity(3);
        let w = sample_field(&q, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let z: Vec<f64> = (0..3).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
        assert_eq!(w, z);
    }

    #[test]
    fn scalar_variance_matches() {
        let q = SparseSym::diag(&[4.0]);
        let factor = CholFactor::new(&q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = sample_with_factor(&factor, &mut rng);
            sum2 += x[0] * x[0];
        }
        let var = sum2 / n as f64;
        // 3 Monte Carlo standard errors of a chi-square mean.
        let se = 0.25 * (2.0 / n as f64).sqrt();
        assert!((var - 0.25).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn lattice_center_variance_near_matern() {
        // Reduced version of the acceptance check: padded regular mesh,
        // kappa = tau = 1, center marginal variance near 1/(4 pi).
        let lat = triangulate_lattice(&Mask2d::filled(24, 24), 24.0, 2).unwrap();
        let c = mass_matrix(&lat.mesh);
        let g = stiffness_matrix(&lat.mesh);
        let q = precision_matrix(&c, &g, &SpdeParams::new(1.0, 1.0).unwrap()).unwrap();
        let factor = CholFactor::new(&q).unwrap();
        // Exact marginal variance from the selected inverse; Monte Carlo is
        // exercised in the acceptance suite.
        let z = factor.selected_inverse();
        let center_cell = 12 * 24 + 12;
        let v = lat.data_vertices[lat
            .mask
            .true_cells()
            .iter()
            .position(|&(r, cc)| r * 24 + cc == center_cell)
            .unwrap()];
        let var = z.diagonal()[v];
        assert_relative_eq!(var, 1.0 / (4.0 * PI), max_relative = 0.10);
    }

    #[test]
    fn hyperprior_reference_values() {
        let prior = HyperPrior::default();
        // Standard normal log density at zero for log kappa and log tau.
        let s0 = HyperState::new(0.0, vec![], vec![(0.0, 0.0)]);
        let s1 = HyperState::new(0.0, vec![], vec![(1.0, 0.0)]);
        let delta = log_hyperprior(&s1, &prior) - log_hyperprior(&s0, &prior);
        assert_relative_eq!(delta, -0.5, epsilon = 1e-12);

        // Each standard normal component contributes log(1/sqrt(2 pi)).
        let base = HyperState::new(0.0, vec![], vec![]);
        let with_field = HyperState::new(0.0, vec![], vec![(0.0, 0.0)]);
        let contribution = log_hyperprior(&with_field, &prior) - log_hyperprior(&base, &prior);
        assert_relative_eq!(contribution, 2.0 * (-0.9189385332046727), epsilon = 1e-10);

        // Log-gamma component at xi = 1: log(rate) - rate.
        let lp = log_hyperprior(&base, &prior);
        assert_relative_eq!(lp, (5e-5f64).ln() - 5e-5, epsilon = 1e-12);
    }

    #[test]
    fn hyperstate_roundtrip() {
        let s = HyperState::new(0.3, vec![0.1, -0.2], vec![(1.0, 2.0), (3.0, 4.0)]);
        let v = s.to_vec();
        assert_eq!(v.len(), s.dim());
        assert_eq!(s.with_vec(&v), s);
        assert_eq!(v[0], 0.3);
        assert_eq!(v[1], 0.1);
        assert_eq!(v[3], 1.0);
    }
}
