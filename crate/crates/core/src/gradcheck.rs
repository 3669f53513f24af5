//! Central-difference check of analytic parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::tensor::Mat;

/// Worst coordinate found by [`gradcheck`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// `|a − n| / max(1e−8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` with `(L(θ+ε) − L(θ−ε)) / 2ε` on `samples` coordinates.
///
/// Coordinate `k` lives in tensor `k mod n_tensors` at a random offset, so
/// every tensor is visited once `samples` reaches the tensor count.
pub fn gradcheck<F>(params: &Parameters, analytic: &[Mat], loss: F, epsilon: f64, samples: usize, seed: u64) -> Result<GradcheckReport>
where
    F: Fn(&Parameters) -> Result<f64>,
{
    if analytic.len() != params.tensors.len() {
        return Err(Error::Argument("gradient count does not match parameters".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Argument("epsilon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let n = params.tensors.len();
    for k in 0..samples {
        let t = k % n;
        let len = params.tensors[t].len();
        let i = rng.random_range(0..len);
        let orig = params.tensors[t].data[i];
        probe.tensors[t].data[i] = orig + epsilon;
        let up = loss(&probe)?;
        probe.tensors[t].data[i] = orig - epsilon;
        let down = loss(&probe)?;
        probe.tensors[t].data[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[t].data[i];
        let err = relative_error(a, numeric);
        if !err.is_finite() {
            return Err(Error::Numeric(format!("non-finite difference at {}[{i}]", params.names[t])));
        }
        report.checked += 1;
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = err;
            report.worst_param = params.names[t].clone();
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    // Quadratic centred on `base` so only the perturbed term is nonzero.
    fn quadratic(base: &Parameters, p: &Parameters) -> f64 {
        let x = p.tensors.iter().flat_map(|t| &t.data);
        let x0 = base.tensors.iter().flat_map(|t| &t.data);
        x.zip(x0)
            .enumerate()
            .map(|(i, (x, x0))| {
                let d = x - x0;
                (1.0 + (i % 3) as f64) * (0.5 * d * d + d)
            })
            .sum()
    }

    fn quadratic_grad(p: &Parameters) -> Vec<Mat> {
        let mut i = 0;
        p.tensors
            .iter()
            .map(|t| {
                let data = (0..t.len())
                    .map(|_| {
                        i += 1;
                        1.0 + ((i - 1) % 3) as f64
                    })
                    .collect();
                Mat::from_vec(t.rows, t.cols, data)
            })
            .collect()
    }

    #[test]
    fn relative_error_formula() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn quadratic_is_exact() {
        let p = Parameters::init(ModelConfig::toy(), 2).unwrap();
        let g = quadratic_grad(&p);
        let r = gradcheck(&p, &g, |q| Ok(quadratic(&p, q)), 1e-5, 100, 0).unwrap();
        assert_eq!(r.checked, 100);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn doubled_gradient_reports_one_third() {
        let p = Parameters::init(ModelConfig::toy(), 2).unwrap();
        let g: Vec<Mat> = quadratic_grad(&p).iter().map(|t| t.map(|x| 2.0 * x)).collect();
        let r = gradcheck(&p, &g, |q| Ok(quadratic(&p, q)), 1e-5, 60, 0).unwrap();
        assert!((r.max_rel_error - 1.0 / 3.0).abs() < 1e-6, "{r:?}");
    }
}
