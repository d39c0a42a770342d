//! BYM2 field construction, scaled ICAR sampling and the Leroux generative
//! field.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::graph::AreaGraph;

/// BYM2 hyperparameters: overall precision tau and mixing proportion phi.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bym2Params {
    pub precision: f64,
    pub mixing: f64,
}

impl Bym2Params {
    pub fn new(precision: f64, mixing: f64) -> Result<Self> {
        if !(precision > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "precision must be positive, got {precision}"
            )));
        }
        if !(0.0..=1.0).contains(&mixing) {
            return Err(CoreError::InvalidParameter(format!(
                "mixing must lie in [0,1], got {mixing}"
            )));
        }
        Ok(Bym2Params { precision, mixing })
    }
}

/// Combine a scaled, constrained ICAR realization and an unstructured
/// standard-normal vector into the BYM2 field
/// tau^{-1/2} (sqrt(phi) u* + sqrt(1-phi) v*).
pub fn bym2_combine(
    u_star: &[f64],
    v_star: &[f64],
    params: &Bym2Params,
    graph: &AreaGraph,
) -> Result<Vec<f64>> {
    let n = graph.n_areas();
    if u_star.len() != n {
        return Err(CoreError::LengthMismatch { expected: n, got: u_star.len() });
    }
    if v_star.len() != n {
        return Err(CoreError::LengthMismatch { expected: n, got: v_star.len() });
    }
    Bym2Params::new(params.precision, params.mixing)?;
    let scale = params.precision.powf(-0.5);
    let wu = params.mixing.sqrt();
    let wv = (1.0 - params.mixing).sqrt();
    Ok(u_star
        .iter()
        .zip(v_star)
        .map(|(&u, &v)| scale * (wu * u + wv * v))
        .collect())
}

/// Parameters of the Leroux generative field: marginal scale sigma^2 and
/// spatial correlation rho.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LerouxParams {
    pub variance: f64,
    pub correlation: f64,
}

impl LerouxParams {
    pub fn new(variance: f64, correlation: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "variance must be positive, got {variance}"
            )));
        }
        if !(0.0..=1.0).contains(&correlation) {
            return Err(CoreError::InvalidParameter(format!(
                "correlation must lie in [0,1], got {correlation}"
            )));
        }
        Ok(LerouxParams { variance, correlation })
    }
}

fn upper_solve(l: &DMatrix<f64>, z: DVector<f64>) -> Result<DVector<f64>> {
    l.transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| CoreError::Graph("triangular solve failed".into()))
}

/// Reusable sampler for Z ~ N(0, sigma^2 (rho Q + (1-rho) I)^{-1}).
///
/// The precision is factorized once. At rho = 1 the precision is singular;
/// that case falls back to the constrained sampler: per-component jittered
/// factorization followed by sum-to-zero projection.
pub struct LerouxSampler<'g> {
    graph: &'g AreaGraph,
    params: LerouxParams,
    chol_l: Option<DMatrix<f64>>,
    constrained: Option<ConstrainedIcarSampler<'g>>,
}

impl<'g> LerouxSampler<'g> {
    pub fn new(graph: &'g AreaGraph, params: LerouxParams) -> Result<Self> {
        LerouxParams::new(params.variance, params.correlation)?;
        if params.correlation == 1.0 {
            if graph.components().iter().any(|c| c.len() == 1) {
                return Err(CoreError::Graph(
                    "rho = 1 is singular on a graph with singleton components".into(),
                ));
            }
            let constrained = ConstrainedIcarSampler::new(graph)?;
            return Ok(LerouxSampler {
                graph,
                params,
                chol_l: None,
                constrained: Some(constrained),
            });
        }
        let n = graph.n_areas();
        let mut a = graph.icar_precision_dense() * params.correlation;
        for i in 0..n {
            a[(i, i)] += 1.0 - params.correlation;
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| CoreError::Graph("Leroux precision not positive definite".into()))?;
        Ok(LerouxSampler {
            graph,
            params,
            chol_l: Some(chol.l()),
            constrained: None,
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let n = self.graph.n_areas();
        let sigma = self.params.variance.sqrt();
        if let Some(l) = &self.chol_l {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = upper_solve(l, z)?;
            Ok(x.iter().map(|&v| sigma * v).collect())
        } else {
            let mut x = self.constrained.as_ref().unwrap().sample_unscaled(rng)?;
            for v in &mut x {
                *v *= sigma;
            }
            Ok(x)
        }
    }
}

/// One Leroux draw, deterministic in the seed.
pub fn sample_leroux(graph: &AreaGraph, params: &LerouxParams, rng_seed: u64) -> Result<Vec<f64>> {
    let sampler = LerouxSampler::new(graph, *params)?;
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    sampler.sample(&mut rng)
}

/// Sampler for the constrained ICAR field: per-component draws from the
/// jittered precision projected onto the sum-to-zero subspace. Dividing by
/// the square root of the graph scaling factor yields the scaled field u*.
pub struct ConstrainedIcarSampler<'g> {
    graph: &'g AreaGraph,
    component_factors: Vec<Option<DMatrix<f64>>>,
}

impl<'g> ConstrainedIcarSampler<'g> {
    pub fn new(graph: &'g AreaGraph) -> Result<Self> {
        let mut factors = Vec::with_capacity(graph.components().len());
        for comp in graph.components() {
            if comp.len() < 2 {
                factors.push(None);
                continue;
            }
            let m = comp.len();
            let pos: std::collections::HashMap<usize, usize> =
                comp.iter().enumerate().map(|(k, &i)| (i, k)).collect();
            let mut q = DMatrix::zeros(m, m);
            for (k, &i) in comp.iter().enumerate() {
                q[(k, k)] = graph.degrees()[i] as f64;
                for &j in graph.neighbors(i) {
                    q[(k, pos[&j])] = -1.0;
                }
            }
            let jitter = 1e-9 * q.diagonal().sum() / m as f64;
            for k in 0..m {
                q[(k, k)] += jitter;
            }
            let chol = q
                .cholesky()
                .ok_or_else(|| CoreError::Graph("jittered ICAR precision not PD".into()))?;
            factors.push(Some(chol.l()));
        }
        Ok(ConstrainedIcarSampler {
            graph,
            component_factors: factors,
        })
    }

    /// Constrained ICAR draw with unit structural precision (not yet scaled).
    pub fn sample_unscaled<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.graph.n_areas()];
        for (comp, factor) in self.graph.components().iter().zip(&self.component_factors) {
            let Some(l) = factor else { continue };
            let m = comp.len();
            let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = upper_solve(l, z)?;
            let mean = x.iter().sum::<f64>() / m as f64;
            for (k, &i) in comp.iter().enumerate() {
                out[i] = x[k] - mean;
            }
        }
        Ok(out)
    }

    /// Scaled constrained draw u*: geometric-mean marginal variance one.
    pub fn sample_scaled<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let inv_sqrt = self.graph.scaling_factor().powf(-0.5);
        let mut x = self.sample_unscaled(rng)?;
        for v in &mut x {
            *v *= inv_sqrt;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_adjacency_from_edges;
    use approx::assert_relative_eq;

    fn path3() -> AreaGraph {
        build_adjacency_from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn bym2_pure_unstructured_limit() {
        let g = path3();
        let u = vec![1.0, -2.0, 1.0];
        let v = vec![0.3, -0.1, 0.9];
        let b = bym2_combine(&u, &v, &Bym2Params { precision: 1.0, mixing: 0.0 }, &g).unwrap();
        assert_eq!(b, v);
    }

    #[test]
    fn bym2_pure_structured_limit() {
        let g = path3();
        let u = vec![1.0, -2.0, 1.0];
        let v = vec![0.3, -0.1, 0.9];
        let b = bym2_combine(&u, &v, &Bym2Params { precision: 1.0, mixing: 1.0 }, &g).unwrap();
        assert_eq!(b, u);
    }

    #[test]
    fn bym2_precision_scaling() {
        let g = path3();
        let u = vec![1.0, -2.0, 1.0];
        let v = vec![0.3, -0.1, 0.9];
        let p1 = Bym2Params { precision: 1.0, mixing: 0.4 };
        let p4 = Bym2Params { precision: 4.0, mixing: 0.4 };
        let b1 = bym2_combine(&u, &v, &p1, &g).unwrap();
        let b4 = bym2_combine(&u, &v, &p4, &g).unwrap();
        for (x, y) in b1.iter().zip(&b4) {
            assert_relative_eq!(*y, 0.5 * x, max_relative = 1e-15);
        }
    }

    #[test]
    fn bym2_linear_in_inputs() {
        let g = path3();
        let p = Bym2Params { precision: 2.5, mixing: 0.3 };
        let u1 = vec![1.0, -1.0, 0.0];
        let u2 = vec![0.5, 0.0, -0.5];
        let v = vec![0.0; 3];
        let a = bym2_combine(&u1, &v, &p, &g).unwrap();
        let b = bym2_combine(&u2, &v, &p, &g).unwrap();
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| x + y).collect();
        let c = bym2_combine(&sum, &v, &p, &g).unwrap();
        for i in 0..3 {
            assert_relative_eq!(c[i], a[i] + b[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn bym2_rejects_length_mismatch() {
        let g = path3();
        let err = bym2_combine(&[0.0; 2], &[0.0; 3], &Bym2Params { precision: 1.0, mixing: 0.5 }, &g);
        assert!(err.is_err());
    }

    #[test]
    fn leroux_rho_zero_is_iid() {
        let g = path3();
        let params = LerouxParams { variance: 2.0, correlation: 0.0 };
        let sampler = LerouxSampler::new(&g, params).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let n_draws = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n_draws {
            let z = sampler.sample(&mut rng).unwrap();
            for v in z {
                sum += v;
                sumsq += v * v;
            }
        }
        let n = (n_draws * 3) as f64;
        let var = sumsq / n - (sum / n).powi(2);
        // SE of the empirical variance of N(0, 2): sqrt(2/n)*sigma^2.
        let se = (2.0 / n).sqrt() * 2.0;
        assert!((var - 2.0).abs() < 3.0 * se, "var = {var}");
    }

    #[test]
    fn leroux_covariance_matches_dense_inverse() {
        let g = path3();
        let params = LerouxParams { variance: 1.3, correlation: 0.5 };
        let sampler = LerouxSampler::new(&g, params).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let n_draws = 100_000usize;
        let mut mean = [0.0; 3];
        let mut cov = [[0.0; 3]; 3];
        let mut draws = Vec::with_capacity(n_draws);
        for _ in 0..n_draws {
            let z = sampler.sample(&mut rng).unwrap();
            for i in 0..3 {
                mean[i] += z[i];
            }
            draws.push(z);
        }
        for m in &mut mean {
            *m /= n_draws as f64;
        }
        for z in &draws {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += (z[i] - mean[i]) * (z[j] - mean[j]);
                }
            }
        }
        for row in &mut cov {
            for v in row.iter_mut() {
                *v /= (n_draws - 1) as f64;
            }
        }
        // Dense oracle: sigma^2 (rho Q + (1-rho) I)^{-1}.
        let mut a = g.icar_precision_dense() * params.correlation;
        for i in 0..3 {
            a[(i, i)] += 1.0 - params.correlation;
        }
        let target = a.try_inverse().unwrap() * params.variance;
        for i in 0..3 {
            for j in 0..3 {
                let t = target[(i, j)];
                // SE of a covariance entry from Gaussian samples.
                let se = ((target[(i, i)] * target[(j, j)] + t * t) / n_draws as f64).sqrt();
                assert!(
                    (cov[i][j] - t).abs() < 3.0 * se,
                    "cov[{i}][{j}] = {} vs {t}",
                    cov[i][j]
                );
            }
        }
    }

    #[test]
    fn leroux_deterministic_in_seed() {
        let g = path3();
        let params = LerouxParams { variance: 1.0, correlation: 0.25 };
        let a = sample_leroux(&g, &params, 1234).unwrap();
        let b = sample_leroux(&g, &params, 1234).unwrap();
        assert_eq!(a, b);
        let c = sample_leroux(&g, &params, 1235).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn leroux_rho_one_requires_no_singletons() {
        let g = build_adjacency_from_edges(3, &[(0, 1)]).unwrap();
        let params = LerouxParams { variance: 1.0, correlation: 1.0 };
        assert!(LerouxSampler::new(&g, params).is_err());
    }

    #[test]
    fn leroux_rho_one_draws_sum_to_zero() {
        let g = path3();
        let params = LerouxParams { variance: 1.0, correlation: 1.0 };
        let z = sample_leroux(&g, &params, 5).unwrap();
        assert!(z.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn scaled_icar_geometric_mean_variance_one() {
        let g = build_adjacency_from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)]).unwrap();
        let sampler = ConstrainedIcarSampler::new(&g).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let n_draws = 100_000usize;
        let n = g.n_areas();
        let mut sumsq = vec![0.0; n];
        for _ in 0..n_draws {
            let u = sampler.sample_scaled(&mut rng).unwrap();
            for i in 0..n {
                sumsq[i] += u[i] * u[i];
            }
        }
        let log_gm: f64 =
            sumsq.iter().map(|&s| (s / n_draws as f64).ln()).sum::<f64>() / n as f64;
        let gm = log_gm.exp();
        // Variance of a chi-square mean: each marginal variance has relative
        // SE sqrt(2/n); the geometric mean over correlated coordinates keeps
        // the same order. Allow 3 of those.
        let se = (2.0 / n_draws as f64).sqrt();
        assert!((gm - 1.0).abs() < 3.0 * se, "geometric mean = {gm}");
    }

    #[test]
    fn mardia_skewness_accepts_leroux_draws() {
        // Multivariate normality check at the 1% level on the 3-node path.
        let g = path3();
        let params = LerouxParams { variance: 0.8, correlation: 0.6 };
        let sampler = LerouxSampler::new(&g, params).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(314159);
        let n = 10_000usize;
        let d = 3usize;
        let mut xs = vec![[0.0f64; 3]; n];
        let mut mean = [0.0f64; 3];
        for row in xs.iter_mut() {
            let z = sampler.sample(&mut rng).unwrap();
            for j in 0..d {
                row[j] = z[j];
                mean[j] += z[j];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut s = DMatrix::<f64>::zeros(d, d);
        for row in &xs {
            for i in 0..d {
                for j in 0..d {
                    s[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]);
                }
            }
        }
        s /= n as f64;
        let s_inv_chol = s.cholesky().unwrap();
        // Whiten: y = L^{-1} (x - mean); then b1 = ||third moment tensor||^2 / n^2.
        let mut t = vec![0.0f64; d * d * d];
        for row in &xs {
            let centered = DVector::from_iterator(d, (0..d).map(|j| row[j] - mean[j]));
            let y = s_inv_chol.l().solve_lower_triangular(&centered).unwrap();
            for a in 0..d {
                for b in 0..d {
                    for c in 0..d {
                        t[(a * d + b) * d + c] += y[a] * y[b] * y[c];
                    }
                }
            }
        }
        let b1: f64 = t.iter().map(|v| v * v).sum::<f64>() / (n as f64 * n as f64);
        let stat = n as f64 * b1 / 6.0;
        // chi-square with d(d+1)(d+2)/6 = 10 degrees of freedom, 99th pct.
        let critical = 23.209;
        assert!(stat < critical, "Mardia skewness statistic = {stat}");
    }
}
