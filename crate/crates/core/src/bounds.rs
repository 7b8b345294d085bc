use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("lower and upper bounds have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty box")]
    Empty,
    #[error("dimension {dim}: lower bound {lower} is not below upper bound {upper}")]
    Inverted { dim: usize, lower: f64, upper: f64 },
}

/// An axis-aligned box `[x_min, x_max]` of admissible machine parameters,
/// in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x_min: Vec<f64>,
    x_max: Vec<f64>,
}

impl TryFrom<RawBox> for ParamBox {
    type Error = BoundsError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        ParamBox::new(raw.x_min, raw.x_max)
    }
}

impl From<ParamBox> for RawBox {
    fn from(b: ParamBox) -> Self {
        RawBox {
            x_min: b.lower,
            x_max: b.upper,
        }
    }
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, BoundsError> {
        if lower.len() != upper.len() {
            return Err(BoundsError::LengthMismatch(lower.len(), upper.len()));
        }
        if lower.is_empty() {
            return Err(BoundsError::Empty);
        }
        for (dim, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u && l.is_finite() && u.is_finite()) {
                return Err(BoundsError::Inverted {
                    dim,
                    lower: *l,
                    upper: *u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit hypercube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `x_max - x_min` per dimension.
    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_bounds() {
        assert!(ParamBox::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(ParamBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(ParamBox::new(vec![], vec![]).is_err());
    }

    #[test]
    fn json_shape() {
        let b: ParamBox = serde_json::from_str(r#"{"x_min":[0,1],"x_max":[10,3]}"#).unwrap();
        assert_eq!(b.widths(), vec![10.0, 2.0]);
        assert!(serde_json::from_str::<ParamBox>(r#"{"x_min":[2],"x_max":[1]}"#).is_err());
        let back: ParamBox = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn contains_and_clamp() {
        let b = ParamBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert!(b.contains(&[1.0, 2.0]));
        assert!(!b.contains(&[1.0 + 1e-12, 2.0]));
        assert_eq!(b.clamp(&[-1.0, 5.0]), vec![0.0, 2.0]);
    }
}
