//! Closed-form global linear least squares, the reference a mixture of local
//! regressors is measured against.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegression {
    /// Feature weights followed by the intercept.
    pub coefficients: Vec<f64>,
}

impl LinearRegression {
    /// Least-squares fit with an intercept, solved by SVD.
    pub fn fit<T: Scalar>(data: &Dataset<T>) -> Result<Self> {
        let n = data.len();
        let d = data.feature_dim();
        if n <= d {
            return Err(Error::ParameterDomain(format!(
                "least squares needs more than {d} samples, got {n}"
            )));
        }
        let x = DMatrix::from_fn(n, d + 1, |i, j| {
            if j < d {
                data.samples()[i].features[j].as_f64()
            } else {
                1.0
            }
        });
        let y = DVector::from_iterator(n, data.samples().iter().map(|s| s.label.as_f64()));
        let beta = x
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Domain(format!("least squares solve failed: {e}")))?;
        Ok(LinearRegression {
            coefficients: beta.iter().copied().collect(),
        })
    }

    pub fn predict<T: Scalar>(&self, features: &[T]) -> f64 {
        let (w, b) = self.coefficients.split_at(self.coefficients.len() - 1);
        w.iter().zip(features).map(|(&w, &x)| w * x.as_f64()).sum::<f64>() + b[0]
    }

    pub fn predict_all<T: Scalar>(&self, data: &Dataset<T>) -> Vec<f64> {
        data.samples().iter().map(|s| self.predict(&s.features)).collect()
    }
}
