//! Temporal and space-time decomposition of a trained coarse network.
//!
//! Both reuse the spatial pipeline: the temporal variant reads `R(t)` only,
//! the space-time variant picks one split per axis for a 2x2 layout.

use crate::decomposition::{create_children, decide, DecompositionConfig, Mode, SplitDecision, WarmStartConfig, WarmStartReport};
use crate::error::Result;
use crate::network::{Architecture, PinnNetwork};
use crate::partition::{Direction, Partition};
use crate::physics::NondimCoeffs;

#[derive(Debug, Clone)]
pub struct DirectionalSplit {
    pub partition: Partition<f64>,
    pub decision: SplitDecision,
    pub warm_start: Option<WarmStartReport>,
}

/// Decision plus warm-started children along `direction`; the coarse network
/// itself is kept when the decision falls back to a single domain.
#[allow(clippy::too_many_arguments)]
pub fn split_along(
    coarse: &PinnNetwork<f64>,
    coeffs: &NondimCoeffs<f64>,
    indicator: f64,
    mode: Mode,
    direction: Direction,
    cfg: &DecompositionConfig,
    child_arch: &Architecture,
    warm: &WarmStartConfig,
    seed: u64,
) -> Result<DirectionalSplit> {
    let single = Partition::single(coarse.clone());
    let (decision, _, _) = decide(indicator, &single, coeffs, mode, direction, cfg)?;
    if !decision.decomposed {
        return Ok(DirectionalSplit { partition: single, decision, warm_start: None });
    }
    let (partition, report) = create_children(coarse, &decision, child_arch, warm, seed)?;
    Ok(DirectionalSplit { partition, decision, warm_start: Some(report) })
}

/// Splits in time only; interfaces are temporal and use the C0 condition.
#[allow(clippy::too_many_arguments)]
pub fn split_temporal(
    coarse: &PinnNetwork<f64>,
    coeffs: &NondimCoeffs<f64>,
    indicator: f64,
    mode: Mode,
    cfg: &DecompositionConfig,
    child_arch: &Architecture,
    warm: &WarmStartConfig,
    seed: u64,
) -> Result<DirectionalSplit> {
    split_along(coarse, coeffs, indicator, mode, Direction::Temporal, cfg, child_arch, warm, seed)
}

/// One split per axis, four subdomains and four interface segments.
#[allow(clippy::too_many_arguments)]
pub fn split_spacetime(
    coarse: &PinnNetwork<f64>,
    coeffs: &NondimCoeffs<f64>,
    indicator: f64,
    mode: Mode,
    cfg: &DecompositionConfig,
    child_arch: &Architecture,
    warm: &WarmStartConfig,
    seed: u64,
) -> Result<DirectionalSplit> {
    split_along(coarse, coeffs, indicator, mode, Direction::Spacetime, cfg, child_arch, warm, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{decide_from_profiles, ProfileAxis, ResidualProfile};
    use crate::interfaces::Orientation;
    use ndarray::Array2;

    fn small() -> Architecture {
        Architecture::new(vec![2, 8, 8, 8, 1], 2.0).unwrap()
    }

    fn child() -> Architecture {
        Architecture::new(vec![2, 8, 8, 1], 2.0).unwrap()
    }

    fn warm() -> WarmStartConfig {
        WarmStartConfig { epochs: 5, points: 64, lr: 1e-3 }
    }

    fn grid_with_time_column(col: usize) -> Array2<f64> {
        // low floor with a dip near t = 0.3, a spike at one time column and a plateau after it
        Array2::from_shape_fn((200, 100), |(_, k)| {
            let t = k as f64 / 99.0;
            let base = 0.2 + 0.1 * ((t - 0.3) / 0.05).powi(2).min(1.0);
            if k == col {
                5.0
            } else if k > col {
                base + 0.05
            } else {
                base
            }
        })
    }

    #[test]
    fn temporal_split_at_deepest_valley() {
        let r2 = grid_with_time_column(60);
        let pt = ResidualProfile::from_grid(&r2, ProfileAxis::T);
        let px = ResidualProfile::from_grid(&r2, ProfileAxis::X);
        let d = decide_from_profiles(3.0, Some(&px), Some(&pt), Mode::ShockScreened, Direction::Temporal, &DecompositionConfig::default()).unwrap();
        assert!(d.decomposed);
        assert_eq!(d.peaks_t.len(), 1);
        assert!(d.x_splits.is_empty());
        assert_eq!(d.t_splits.len(), 1);
        assert!((d.t_splits[0] - 0.3).abs() < 0.02, "{:?}", d.t_splits);
    }

    #[test]
    fn flat_time_profile_falls_back() {
        let r2 = Array2::from_elem((200, 100), 0.4);
        let p = ResidualProfile::from_grid(&r2, ProfileAxis::T);
        let d = decide_from_profiles(3.0, None, Some(&p), Mode::ShockScreened, Direction::Temporal, &DecompositionConfig::default()).unwrap();
        assert!(!d.decomposed);
        assert_eq!(d.n_subdomains(), 1);
    }

    #[test]
    fn spacetime_layout_and_interfaces() {
        let coarse = PinnNetwork::init(&small(), 7).unwrap();
        let coeffs = NondimCoeffs { a: 0.5, b: 1.5, c: 1.0 };
        let s = split_spacetime(&coarse, &coeffs, 3.0, Mode::DecompositionEnabled, &DecompositionConfig::default(), &child(), &warm(), 7).unwrap();
        assert!(s.decision.decomposed);
        assert_eq!(s.partition.n_subdomains(), 4);
        assert_eq!(s.partition.interfaces.len(), 4);
        let temporal = s.partition.interfaces.iter().filter(|i| i.orientation == Orientation::Temporal).count();
        assert_eq!(temporal, 2);
        assert!(s.partition.interfaces.iter().all(|i| i.s == 0.0));
        assert_eq!(s.warm_start.unwrap().final_mse.len(), 4);
    }

    #[test]
    fn temporal_wrapper_produces_two_subdomains() {
        let coarse = PinnNetwork::init(&small(), 9).unwrap();
        let coeffs = NondimCoeffs { a: 0.5, b: 1.5, c: 1.0 };
        let s = split_temporal(&coarse, &coeffs, 3.0, Mode::DecompositionEnabled, &DecompositionConfig::default(), &child(), &warm(), 9).unwrap();
        assert_eq!(s.partition.n_subdomains(), 2);
        assert_eq!(s.partition.interfaces[0].orientation, Orientation::Temporal);
        assert!(s.partition.x_splits.is_empty());
    }

    #[test]
    fn screened_low_indicator_keeps_coarse() {
        let coarse = PinnNetwork::init(&small(), 3).unwrap();
        let coeffs = NondimCoeffs { a: 0.5, b: 1.5, c: 1.0 };
        let s = split_temporal(&coarse, &coeffs, 1.0, Mode::ShockScreened, &DecompositionConfig::default(), &child(), &warm(), 3).unwrap();
        assert!(s.partition.is_single());
        assert_eq!(s.partition.nets[0], coarse);
        assert!(s.warm_start.is_none());
    }
}
