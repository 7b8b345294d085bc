//! Per-task normalization of inputs and outputs.
//!
//! Source tasks are centered on their empirical optimum and scaled by their
//! input range. The target task is centered on its first observation and
//! scaled by the width of the parameter box. Outputs are standardized with
//! the population mean and standard deviation of each task.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::ParamBox;

/// Relative floor on the output standard deviation.
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("need at least {needed} observations, found {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("row {row} has {found} inputs, expected {expected}")]
    RaggedInputs {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{inputs} input rows but {outputs} outputs")]
    LengthMismatch { inputs: usize, outputs: usize },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("start point lies outside the parameter box")]
    StartOutsideBox,
}

/// Observations of one task: machine parameter vectors and the measured
/// quality (lower is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct TaskDataset {
    pub task_id: String,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDataset {
    task_id: String,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl TryFrom<RawDataset> for TaskDataset {
    type Error = TransformError;

    fn try_from(raw: RawDataset) -> Result<Self, Self::Error> {
        TaskDataset::new(raw.task_id, raw.inputs, raw.outputs)
    }
}

impl TaskDataset {
    pub fn new(
        task_id: impl Into<String>,
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
    ) -> Result<Self, TransformError> {
        if inputs.len() != outputs.len() {
            return Err(TransformError::LengthMismatch {
                inputs: inputs.len(),
                outputs: outputs.len(),
            });
        }
        if inputs.is_empty() {
            return Err(TransformError::TooFewObservations { needed: 1, found: 0 });
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(TransformError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        for (row, (x, y)) in inputs.iter().zip(&outputs).enumerate() {
            if x.len() != dim {
                return Err(TransformError::RaggedInputs {
                    row,
                    expected: dim,
                    found: x.len(),
                });
            }
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(TransformError::NonFinite(row));
            }
        }
        Ok(Self {
            task_id: task_id.into(),
            inputs,
            outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// Index of the smallest output; ties go to the lowest index.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, y) in self.outputs.iter().enumerate() {
            if *y < self.outputs[best] {
                best = i;
            }
        }
        best
    }

    pub fn input_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |i, j| self.inputs[i][j])
    }

    pub fn output_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.outputs)
    }

    /// All rows lie inside `bounds`.
    pub fn within(&self, bounds: &ParamBox) -> bool {
        self.inputs.iter().all(|x| bounds.contains(x))
    }
}

/// Invertible affine maps `x̃ = (x - shift) / scale` and `ỹ = (y - μ) / σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTransform {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_mean: f64,
    pub output_std: f64,
    /// Dimensions whose zero input range was replaced by 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub floored_dims: Vec<usize>,
    #[serde(default)]
    pub std_floored: bool,
}

impl NormTransform {
    pub fn dim(&self) -> usize {
        self.input_shift.len()
    }

    pub fn to_normalized(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(v, (s, d))| (v - s) / d)
            .collect()
    }

    pub fn invert_input(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(v, (s, d))| v * d + s)
            .collect()
    }

    pub fn normalize_output(&self, y: f64) -> f64 {
        (y - self.output_mean) / self.output_std
    }

    pub fn invert_output(&self, z: f64) -> f64 {
        z * self.output_std + self.output_mean
    }

    /// Applies the transform to every observation of `d`.
    pub fn apply(&self, d: &TaskDataset) -> TaskDataset {
        TaskDataset {
            task_id: d.task_id.clone(),
            inputs: d.inputs.iter().map(|x| self.to_normalized(x)).collect(),
            outputs: d.outputs.iter().map(|y| self.normalize_output(*y)).collect(),
        }
    }
}

/// Population mean and standard deviation, the latter floored at
/// `1e-8·max(1, |μ|)`. Returns `(μ, σ, floored)`.
pub fn standardization(ys: &[f64]) -> (f64, f64, bool) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let floor = STD_FLOOR * mean.abs().max(1.0);
    if std < floor {
        (mean, floor, true)
    } else {
        (mean, std, false)
    }
}

/// Elementwise `|max - min|` over the inputs, with zero ranges replaced by 1.
fn input_ranges(d: &TaskDataset) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let dim = d.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for x in &d.inputs {
        for j in 0..dim {
            lo[j] = lo[j].min(x[j]);
            hi[j] = hi[j].max(x[j]);
        }
    }
    let mut floored = Vec::new();
    let ranges = lo
        .iter()
        .zip(&hi)
        .enumerate()
        .map(|(j, (l, h))| {
            let r = (h - l).abs();
            if r > 0.0 {
                r
            } else {
                floored.push(j);
                1.0
            }
        })
        .collect();
    (lo, ranges, floored)
}

fn finish(d: &TaskDataset, shift: Vec<f64>, scale: Vec<f64>, floored_dims: Vec<usize>) -> (TaskDataset, NormTransform) {
    let (output_mean, output_std, std_floored) = standardization(&d.outputs);
    let t = NormTransform {
        input_shift: shift,
        input_scale: scale,
        output_mean,
        output_std,
        floored_dims,
        std_floored,
    };
    (t.apply(d), t)
}

/// Centers a source task on its best observation and scales each input
/// dimension by its range.
pub fn source_normalize(d: &TaskDataset) -> Result<(TaskDataset, NormTransform), TransformError> {
    if d.len() < 2 {
        return Err(TransformError::TooFewObservations {
            needed: 2,
            found: d.len(),
        });
    }
    let shift = d.inputs[d.argmin()].clone();
    let (_, scale, floored) = input_ranges(d);
    Ok(finish(d, shift, scale, floored))
}

/// Centers the target task on its first observation `x0` and scales by the
/// box width. Outputs are standardized over the current observations.
pub fn target_normalize(
    d: &TaskDataset,
    x0: &[f64],
    bounds: &ParamBox,
) -> Result<(TaskDataset, NormTransform), TransformError> {
    if x0.len() != bounds.dim() || d.dim() != bounds.dim() {
        return Err(TransformError::DimensionMismatch {
            expected: bounds.dim(),
            found: if x0.len() != bounds.dim() { x0.len() } else { d.dim() },
        });
    }
    if !bounds.contains(x0) {
        return Err(TransformError::StartOutsideBox);
    }
    Ok(finish(d, x0.to_vec(), bounds.widths(), Vec::new()))
}

/// Plain min-max scaling of a task onto its own input range, without
/// centering on the optimum.
pub fn minmax_normalize(d: &TaskDataset) -> Result<(TaskDataset, NormTransform), TransformError> {
    if d.len() < 2 {
        return Err(TransformError::TooFewObservations {
            needed: 2,
            found: d.len(),
        });
    }
    let (lo, scale, floored) = input_ranges(d);
    Ok(finish(d, lo, scale, floored))
}

/// Min-max scaling onto the parameter box.
pub fn box_normalize(
    d: &TaskDataset,
    bounds: &ParamBox,
) -> Result<(TaskDataset, NormTransform), TransformError> {
    if d.dim() != bounds.dim() {
        return Err(TransformError::DimensionMismatch {
            expected: bounds.dim(),
            found: d.dim(),
        });
    }
    Ok(finish(d, bounds.lower().to_vec(), bounds.widths(), Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(inputs: &[&[f64]], outputs: &[f64]) -> TaskDataset {
        TaskDataset::new(
            "t",
            inputs.iter().map(|r| r.to_vec()).collect(),
            outputs.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn source_example() {
        let d = ds(&[&[2.0], &[4.0], &[6.0]], &[5.0, 1.0, 3.0]);
        let (n, t) = source_normalize(&d).unwrap();
        assert_eq!(t.input_shift, vec![4.0]);
        assert_eq!(t.input_scale, vec![4.0]);
        assert_eq!(t.output_mean, 3.0);
        assert!((t.output_std - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((t.output_std - 1.63299).abs() < 1e-5);
        let xs: Vec<f64> = n.inputs().iter().map(|r| r[0]).collect();
        assert_eq!(xs, vec![-0.5, 0.0, 0.5]);
        let expected = [1.22474, -1.22474, 0.0];
        for (a, b) in n.outputs().iter().zip(expected) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn source_needs_two_points() {
        let d = ds(&[&[2.0]], &[5.0]);
        assert!(matches!(
            source_normalize(&d),
            Err(TransformError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn constant_outputs_floor_std() {
        let d = ds(&[&[0.0], &[1.0], &[2.0]], &[7.0, 7.0, 7.0]);
        let (n, t) = source_normalize(&d).unwrap();
        assert!(t.std_floored);
        assert!(t.output_std > 0.0);
        assert!(n.outputs().iter().all(|y| *y == 0.0));
    }

    #[test]
    fn tie_picks_lowest_index() {
        let d = ds(&[&[0.0], &[1.0], &[2.0]], &[3.0, 1.0, 1.0]);
        let (_, t) = source_normalize(&d).unwrap();
        assert_eq!(t.input_shift, vec![1.0]);
    }

    #[test]
    fn zero_range_dimension_is_floored() {
        let d = ds(&[&[0.0, 5.0], &[1.0, 5.0]], &[1.0, 2.0]);
        let (_, t) = source_normalize(&d).unwrap();
        assert_eq!(t.input_scale, vec![1.0, 1.0]);
        assert_eq!(t.floored_dims, vec![1]);
    }

    #[test]
    fn target_example() {
        let b = ParamBox::new(vec![0.0], vec![10.0]).unwrap();
        let d = ds(&[&[4.0], &[6.0]], &[1.0, 2.0]);
        let (n, _) = target_normalize(&d, &[4.0], &b).unwrap();
        assert_eq!(n.inputs()[0], vec![0.0]);
        assert!((n.inputs()[1][0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn target_equal_observations() {
        let b = ParamBox::new(vec![0.0], vec![10.0]).unwrap();
        let d = ds(&[&[4.0], &[6.0]], &[10.0, 10.0]);
        let (n, t) = target_normalize(&d, &[4.0], &b).unwrap();
        assert!(t.std_floored);
        assert_eq!(n.outputs(), &[0.0, 0.0]);
    }

    #[test]
    fn target_start_outside_box() {
        let b = ParamBox::new(vec![0.0], vec![10.0]).unwrap();
        let d = ds(&[&[4.0]], &[1.0]);
        assert_eq!(
            target_normalize(&d, &[11.0], &b).unwrap_err(),
            TransformError::StartOutsideBox
        );
    }

    #[test]
    fn shift_point_and_center() {
        let d = ds(&[&[1.0, 2.0], &[3.0, 0.0], &[2.0, 5.0]], &[4.0, 2.0, 9.0]);
        let (_, t) = source_normalize(&d).unwrap();
        assert_eq!(t.to_normalized(&[3.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(t.invert_output(0.0), t.output_mean);
    }

    #[test]
    fn dataset_validation() {
        assert!(TaskDataset::new("a", vec![vec![1.0], vec![1.0, 2.0]], vec![1.0, 2.0]).is_err());
        assert!(TaskDataset::new("a", vec![vec![f64::NAN]], vec![1.0]).is_err());
        assert!(TaskDataset::new("a", vec![vec![1.0]], vec![1.0, 2.0]).is_err());
        assert!(serde_json::from_str::<TaskDataset>(
            r#"{"task_id":"a","inputs":[[1.0]],"outputs":[]}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn standardized_outputs_are_unit(ys in prop::collection::vec(-1e3f64..1e3, 2..40)) {
            let inputs = (0..ys.len()).map(|i| vec![i as f64]).collect();
            let d = TaskDataset::new("p", inputs, ys.clone()).unwrap();
            let (n, t) = source_normalize(&d).unwrap();
            prop_assume!(!t.std_floored);
            let m = n.outputs().iter().sum::<f64>() / ys.len() as f64;
            let s = (n.outputs().iter().map(|y| (y - m) * (y - m)).sum::<f64>() / ys.len() as f64).sqrt();
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((s - 1.0).abs() < 1e-10);
            // ranking preserved
            for i in 0..ys.len() {
                for j in 0..ys.len() {
                    prop_assert_eq!(ys[i] < ys[j], n.outputs()[i] < n.outputs()[j]);
                }
            }
        }

        #[test]
        fn input_round_trip(
            rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..20),
            probe in prop::collection::vec(-100.0f64..100.0, 3),
        ) {
            let ys = (0..rows.len()).map(|i| (i as f64 * 0.37).sin()).collect();
            let d = TaskDataset::new("p", rows, ys).unwrap();
            let (_, t) = source_normalize(&d).unwrap();
            let back = t.invert_input(&t.to_normalized(&probe));
            for (a, (b, s)) in back.iter().zip(probe.iter().zip(&t.input_shift)) {
                prop_assert!((a - b).abs() <= 1e-12 * (b.abs() + s.abs()).max(1e-300));
            }
        }
    }
}
