use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{GpucbError, ParamBox};

/// Added to the kernel diagonal when coincident inputs make it singular.
pub const JITTER: f64 = 1e-8;

/// Exact GP regression with a squared-exponential kernel on standardised
/// observations.
///
/// Lengthscales are fixed at a fifth of each box side and the signal variance
/// at one. `noise_std` is in objective units and is rescaled together with
/// the observations.
#[derive(Debug, Clone)]
pub struct GpModel {
    points: Vec<Vec<f64>>,
    lengthscales: Vec<f64>,
    noise_var: f64,
    offset: f64,
    scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

pub const SIGNAL_VAR: f64 = 1.0;

impl GpModel {
    pub fn fit(
        points: &[Vec<f64>],
        values: &[f64],
        bounds: &ParamBox,
        noise_std: f64,
    ) -> Result<Self, GpucbError> {
        if points.is_empty() || points.len() != values.len() {
            return Err(GpucbError::Numerical(
                "need as many values as points, and at least one".into(),
            ));
        }
        let d = bounds.dims().len();
        if points.iter().any(|p| p.len() != d) {
            return Err(GpucbError::Numerical("point dimension mismatch".into()));
        }
        let (offset, scale) = standardisation(values);
        Self::fit_standardised(points, values, bounds, noise_std, offset, scale)
    }

    /// Fit with a caller-chosen affine standardisation, holding every
    /// hyperparameter fixed regardless of the data.
    pub fn fit_standardised(
        points: &[Vec<f64>],
        values: &[f64],
        bounds: &ParamBox,
        noise_std: f64,
        offset: f64,
        scale: f64,
    ) -> Result<Self, GpucbError> {
        if !(scale > 0.0 && scale.is_finite() && offset.is_finite()) {
            return Err(GpucbError::Numerical(format!("invalid standardisation scale {scale}")));
        }
        let t = points.len();
        let y = DVector::from_iterator(t, values.iter().map(|v| (v - offset) / scale));
        let lengthscales: Vec<f64> = bounds.dims().iter().map(|d| 0.2 * (d.hi - d.lo)).collect();
        let noise_var = (noise_std / scale).powi(2);

        let mut k = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..=i {
                let v = kernel(&points[i], &points[j], &lengthscales);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += noise_var;
        }
        // Coincident inputs without noise make the matrix singular; retry
        // once with a small diagonal jitter.
        let chol = match Cholesky::new(k.clone()) {
            Some(c) => c,
            None => {
                for i in 0..t {
                    k[(i, i)] += JITTER;
                }
                Cholesky::new(k).ok_or_else(|| {
                    GpucbError::Numerical("kernel matrix is not positive definite".into())
                })?
            }
        };
        let alpha = chol.solve(&y);
        Ok(GpModel {
            points: points.to_vec(),
            lengthscales,
            noise_var,
            offset,
            scale,
            chol,
            alpha,
        })
    }

    /// Predictive mean and variance of the latent function, on the original
    /// value scale.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.posterior_standardised(x);
        (self.offset + self.scale * m, self.scale * self.scale * v)
    }

    /// Predictive mean and variance on the standardised scale.
    pub fn posterior_standardised(&self, x: &[f64]) -> (f64, f64) {
        let (mean, var) = self.batch_standardised(std::slice::from_ref(&x.to_vec()));
        (mean[0], var[0])
    }

    /// Standardised predictive means and variances at many inputs at once.
    pub fn batch_standardised(&self, xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let t = self.points.len();
        let mut kstar = DMatrix::zeros(t, xs.len());
        for (c, x) in xs.iter().enumerate() {
            for (r, p) in self.points.iter().enumerate() {
                kstar[(r, c)] = kernel(p, x, &self.lengthscales);
            }
        }
        let mean = (kstar.transpose() * &self.alpha).iter().copied().collect();
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a nonzero diagonal");
        let var = v
            .column_iter()
            .map(|col| (SIGNAL_VAR - col.norm_squared()).max(0.0))
            .collect();
        (mean, var)
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Noise variance on the standardised scale.
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// The affine map `value = offset + scale * standardised`.
    pub fn standardisation(&self) -> (f64, f64) {
        (self.offset, self.scale)
    }
}

/// Centre and scale to unit variance. With fewer than two values or no
/// spread the scale stays at one; centring is kept so that a flat data set
/// predicts its own level everywhere.
fn standardisation(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 1.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 && var.is_finite() {
        (mean, var.sqrt())
    } else {
        (mean, 1.0)
    }
}

fn kernel(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    SIGNAL_VAR * (-0.5 * r2).exp()
}
