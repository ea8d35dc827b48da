use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::select_rows;
use crate::metrics::{pairwise_distances, DistanceMatrix, ResponseObject};

/// What the kernels see of the response: either all pairwise distances, or a
/// scalar per observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseSet {
    Metric(DistanceMatrix),
    Scalar(Vec<f64>),
}

impl ResponseSet {
    pub fn len(&self) -> usize {
        match self {
            ResponseSet::Metric(d) => d.len(),
            ResponseSet::Scalar(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        match self {
            ResponseSet::Metric(d) => ResponseSet::Metric(d.reindex(idx)),
            ResponseSet::Scalar(y) => ResponseSet::Scalar(idx.iter().map(|&i| y[i]).collect()),
        }
    }
}

/// Predictors (`n x p`, one row per observation) paired with responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DMatrix<f64>,
    pub response: ResponseSet,
}

impl Sample {
    pub fn new(x: DMatrix<f64>, response: ResponseSet) -> Result<Self> {
        if x.nrows() != response.len() {
            return Err(Error::Shape(format!(
                "{} predictor rows but {} responses",
                x.nrows(),
                response.len()
            )));
        }
        crate::matrix::ensure_finite(&x)?;
        if let ResponseSet::Scalar(y) = &response {
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("response {i} is not finite")));
            }
        }
        Ok(Self { x, response })
    }

    /// Build from metric-space objects; distances are computed once here.
    pub fn from_objects(x: DMatrix<f64>, responses: &[ResponseObject], bounded: bool) -> Result<Self> {
        let d = pairwise_distances(responses, bounded)?;
        Self::new(x, ResponseSet::Metric(d))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { x: select_rows(&self.x, idx), response: self.response.subset(idx) }
    }
}
