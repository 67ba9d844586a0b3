//! Multi-Bernoulli densities over current object states, the common output of
//! both fusion methods.

use crate::linalg::{Cov4, State};

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliComponent {
    pub existence: f64,
    pub mean: State,
    pub cov: Cov4,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionOutput {
    pub components: Vec<BernoulliComponent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub state: State,
    pub cov: Cov4,
}

impl FusionOutput {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Components with existence strictly above `threshold`.
    pub fn extract(&self, threshold: f64) -> Vec<Estimate> {
        self.components
            .iter()
            .filter(|c| c.existence > threshold)
            .map(|c| Estimate {
                state: c.mean,
                cov: c.cov,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(rs: &[f64]) -> FusionOutput {
        FusionOutput {
            components: rs
                .iter()
                .map(|&r| BernoulliComponent {
                    existence: r,
                    mean: State::zeros(),
                    cov: Cov4::identity(),
                })
                .collect(),
        }
    }

    #[test]
    fn thresholds() {
        assert_eq!(out(&[0.8, 0.6]).extract(0.75).len(), 1);
        assert_eq!(out(&[0.8, 0.6]).extract(0.0).len(), 2);
        assert!(out(&[0.8, 1.0]).extract(1.0).is_empty());
        assert!(out(&[0.5]).extract(0.5).is_empty());
        assert_eq!(out(&[0.6]).extract(0.5).len(), 1);
    }
}
