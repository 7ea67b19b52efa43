//! Densely overlapping local regressors.
//!
//! `K` regions of a shared length are centred on evenly spaced mediums that
//! span the label range end to end. Regressor `l` squashes its activation
//! with a sigmoid and maps `(0, 1)` onto its own region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLayout<T> {
    count: usize,
    label_min: T,
    label_max: T,
    region_length: T,
    mediums: Vec<T>,
    /// Variance of every local Gaussian. Carried for completeness; it does
    /// not enter the prediction or either loss.
    sigma_sq: T,
}

/// Local predictions mu_l, one per regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPredictions<T>(pub Vec<T>);

impl<T: Scalar> LocalPredictions<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which regions contain a label, and how many.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Indicators {
    pub mask: Vec<bool>,
    pub count: usize,
}

impl Indicators {
    pub fn weights<T: Scalar>(&self) -> Vec<T> {
        self.mask
            .iter()
            .map(|&m| if m { T::one() } else { T::zero() })
            .collect()
    }

    /// Index range of the active regions. Empty when `count == 0`.
    pub fn active_range(&self) -> std::ops::Range<usize> {
        match self.mask.iter().position(|&m| m) {
            Some(first) => first..first + self.count,
            None => 0..0,
        }
    }
}

/// Places `count` regions of length `region_length` over `[label_min, label_max]`.
///
/// Logs a warning when neighbouring regions leave a gap, in which case some
/// labels inside the range have no responsible regressor.
pub fn layout_regions<T: Scalar>(
    count: usize,
    label_min: T,
    label_max: T,
    region_length: T,
) -> Result<RegionLayout<T>> {
    if count < 2 {
        return Err(Error::ParameterDomain(format!(
            "need at least 2 regressors, got {count}"
        )));
    }
    if !(label_max > label_min) || !label_min.is_finite() || !label_max.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "label range [{label_min}, {label_max}] is empty or not finite"
        )));
    }
    if !(region_length > T::zero()) || !region_length.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "region length must be positive, got {region_length}"
        )));
    }
    let span = label_max - label_min;
    let gaps = T::from_count(count - 1);
    let mediums = (0..count)
        .map(|l| label_min + span * (T::from_count(l) / gaps))
        .collect();
    let layout = RegionLayout {
        count,
        label_min,
        label_max,
        region_length,
        mediums,
        sigma_sq: T::one(),
    };
    if !layout.covers_range() {
        log::warn!(
            "region length {region_length} is shorter than the medium spacing {}; labels between regions are uncovered",
            layout.spacing()
        );
    }
    Ok(layout)
}

impl<T: Scalar> RegionLayout<T> {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn label_min(&self) -> T {
        self.label_min
    }

    pub fn label_max(&self) -> T {
        self.label_max
    }

    pub fn region_length(&self) -> T {
        self.region_length
    }

    pub fn mediums(&self) -> &[T] {
        &self.mediums
    }

    pub fn sigma_sq(&self) -> T {
        self.sigma_sq
    }

    pub fn spacing(&self) -> T {
        (self.label_max - self.label_min) / T::from_count(self.count - 1)
    }

    /// True when every label in the range falls inside some region.
    pub fn covers_range(&self) -> bool {
        self.region_length >= self.spacing()
    }

    /// Closed interval `[lower, upper]` of region `l`.
    pub fn region(&self, l: usize) -> (T, T) {
        let half = self.region_length / T::lit(2.0);
        (self.mediums[l] - half, self.mediums[l] + half)
    }

    pub fn lower(&self, l: usize) -> T {
        self.region(l).0
    }

    pub(crate) fn map_activation(&self, l: usize, activation: T) -> T {
        self.lower(l) + activation * self.region_length
    }
}

/// Maps sigmoid activations into the regions: `mu_l = lower_l + a_l * L`.
pub fn regress<T: Scalar>(activations: &[T], layout: &RegionLayout<T>) -> Result<LocalPredictions<T>> {
    if activations.len() != layout.count {
        return Err(Error::shape("regressor activations", layout.count, activations.len()));
    }
    activations
        .iter()
        .enumerate()
        .map(|(l, &a)| {
            if a > T::zero() && a < T::one() {
                Ok(layout.map_activation(l, a))
            } else {
                Err(Error::Domain(format!(
                    "activation {a} of regressor {l} is outside (0, 1)"
                )))
            }
        })
        .collect::<Result<_>>()
        .map(LocalPredictions)
}

/// Regions whose closed interval contains `label`.
pub fn indicators<T: Scalar>(label: T, layout: &RegionLayout<T>) -> Indicators {
    let mask: Vec<bool> = (0..layout.count)
        .map(|l| {
            let (lo, hi) = layout.region(l);
            lo <= label && label <= hi
        })
        .collect();
    let count = mask.iter().filter(|&&m| m).count();
    Indicators { mask, count }
}

/// Gating targets `I_l / R`: uniform over the responsible regressors.
pub fn gating_targets<T: Scalar>(label: T, layout: &RegionLayout<T>) -> Result<Vec<T>> {
    let ind = indicators(label, layout);
    if ind.count == 0 {
        return Err(Error::UncoveredLabel {
            label: label.as_f64(),
        });
    }
    let share = T::one() / T::from_count(ind.count);
    Ok(ind
        .mask
        .iter()
        .map(|&m| if m { share } else { T::zero() })
        .collect())
}
