//! Labeled point sets with a cached norm bound.

use crate::error::{Error, Result};

/// A labeled training/testing set. Points share one dimension and labels are
/// 0/1; the largest euclidean norm over the points is cached as `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    labels: Vec<u8>,
    radius: f64,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidDataset("no points".into()));
        }
        if points.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidDataset("points must have dimension >= 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("point {i} has a non-finite entry")));
            }
        }
        if let Some((i, _)) = labels.iter().enumerate().find(|(_, &y)| y > 1) {
            return Err(Error::InvalidDataset(format!("label of point {i} is not 0/1")));
        }
        let radius = points
            .iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        Ok(Self { points, labels, radius })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Largest euclidean norm over all points.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Copy of the rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let points = idx.iter().map(|&i| self.points[i].clone()).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self::new(points, labels)
    }

    /// New dataset with one point appended.
    pub fn with_point(&self, x: Vec<f64>, y: u8) -> Result<Self> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut points = self.points.clone();
        let mut labels = self.labels.clone();
        points.push(x);
        labels.push(y);
        Self::new(points, labels)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], u8)> {
        self.points.iter().map(|p| p.as_slice()).zip(self.labels.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_is_max_norm() {
        let d = Dataset::new(vec![vec![3.0, 4.0], vec![1.0, 0.0]], vec![1, 0]).unwrap();
        assert_eq!(d.radius(), 5.0);
        for p in d.points() {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(d.radius() >= norm);
        }
    }

    #[test]
    fn rejects_ragged_points() {
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(Dataset::new(vec![vec![1.0]], vec![2]).is_err());
    }
}
