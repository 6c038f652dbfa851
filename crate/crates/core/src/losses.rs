//! Data loss, normalized LWR residual, causal weighting and the weighted total.
//!
//! Every loss comes with its adjoint with respect to the evaluated streams so
//! the trainer can pull it back through [`crate::autodiff::backward`].

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BundleAdjoint, EvalBundle};
use crate::error::{Error, Result};
use crate::physics::NondimCoeffs;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_data: f64,
    pub w_pde: f64,
    pub w_int: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_data: 0.85, w_pde: 0.05, w_int: 0.10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalConfig {
    pub n_bins: usize,
    pub epsilon: f64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self { n_bins: 10, epsilon: 1.0 }
    }
}

impl CausalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || !(self.epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "causal config needs n_bins >= 1 and epsilon >= 0 (got {}, {})",
                self.n_bins, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Which residual a PDE-regularized method penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResidualKind {
    Lwr,
    /// LWR residual plus `eps * u_xx`, scaled by the same normalizer.
    Viscous { eps: f64 },
}

impl ResidualKind {
    pub fn needs_second(&self) -> bool {
        matches!(self, ResidualKind::Viscous { .. })
    }
}

/// Mean squared difference.
pub fn data_loss<T: Scalar>(pred: ArrayView1<T>, obs: ArrayView1<T>) -> Result<T> {
    Ok(data_loss_adjoint(pred, obs)?.0)
}

/// Data loss and its derivative with respect to each prediction.
pub fn data_loss_adjoint<T: Scalar>(pred: ArrayView1<T>, obs: ArrayView1<T>) -> Result<(T, Array1<T>)> {
    if pred.is_empty() {
        return Err(Error::Empty("data loss over no observations"));
    }
    if pred.len() != obs.len() {
        return Err(Error::Shape(format!("{} predictions for {} observations", pred.len(), obs.len())));
    }
    let m = T::from_usize_lossy(pred.len());
    let diff = &pred - &obs;
    let value = diff.iter().map(|&d| d * d).sum::<T>() / m;
    let two = T::lit(2.0);
    Ok((value, diff.mapv(|d| two * d / m)))
}

/// `r = (A u_x - B u u_x - u_t) / sqrt(A^2 + B^2 + 1)`
pub fn pde_residual<T: Scalar>(bundle: &EvalBundle<T>, coeffs: &NondimCoeffs<T>) -> Array1<T> {
    let norm = coeffs.norm();
    let (a, b) = (coeffs.a, coeffs.b);
    let mut r = Array1::zeros(bundle.len());
    Zip::from(&mut r)
        .and(&bundle.u)
        .and(bundle.dx())
        .and(bundle.dt())
        .for_each(|r, &u, &ux, &ut| *r = (a * ux - b * u * ux - ut) / norm);
    r
}

/// LWR residual augmented with `eps * u_xx / sqrt(A^2 + B^2 + 1)`.
pub fn viscosity_residual<T: Scalar>(bundle: &EvalBundle<T>, coeffs: &NondimCoeffs<T>, eps: T) -> Result<Array1<T>> {
    let uxx = bundle
        .d2u_dx2
        .as_ref()
        .ok_or(Error::InvalidInput("viscosity residual needs second derivatives".into()))?;
    let norm = coeffs.norm();
    let mut r = pde_residual(bundle, coeffs);
    Zip::from(&mut r).and(uxx).for_each(|r, &d| *r += eps * d / norm);
    Ok(r)
}

pub fn residual<T: Scalar>(bundle: &EvalBundle<T>, coeffs: &NondimCoeffs<T>, kind: ResidualKind) -> Result<Array1<T>> {
    match kind {
        ResidualKind::Lwr => Ok(pde_residual(bundle, coeffs)),
        ResidualKind::Viscous { eps } => viscosity_residual(bundle, coeffs, T::lit(eps)),
    }
}

/// Pulls `dL/dr` back to the bundle streams of the residual of `kind`.
pub fn residual_adjoint<T: Scalar>(
    bundle: &EvalBundle<T>,
    coeffs: &NondimCoeffs<T>,
    kind: ResidualKind,
    dr: &Array1<T>,
) -> BundleAdjoint<T> {
    let norm = coeffs.norm();
    let (a, b) = (coeffs.a / norm, coeffs.b / norm);
    let mut du = Array1::zeros(dr.len());
    let mut dux = Array1::zeros(dr.len());
    Zip::from(&mut du)
        .and(&mut dux)
        .and(dr)
        .and(&bundle.u)
        .and(bundle.dx())
        .for_each(|du, dux, &g, &u, &ux| {
            *du = -g * b * ux;
            *dux = g * (a - b * u);
        });
    let dut = dr.mapv(|g| -g / norm);
    let duxx = match kind {
        ResidualKind::Lwr => None,
        ResidualKind::Viscous { eps } => {
            let e = T::lit(eps) / norm;
            Some(dr.mapv(|g| g * e))
        }
    };
    BundleAdjoint { u: Some(du), du_dx: Some(dux), du_dt: Some(dut), d2u_dx2: duxx }
}

/// Bin index of every point: points sorted by time (stable), cut into
/// `n_bins` contiguous bins whose sizes differ by at most one, larger bins first.
pub fn causal_bins(times: &[f64], n_bins: usize) -> Vec<usize> {
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| times[i].total_cmp(&times[j]));
    let bins = n_bins.min(n).max(1);
    let (base, extra) = (n / bins, n % bins);
    let mut out = vec![0; n];
    let mut pos = 0;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        for &i in &order[pos..pos + size] {
            out[i] = b;
        }
        pos += size;
    }
    out
}

/// `w_j = exp(-eps * sum_{k<j} mean_k(r^2))` per bin.
pub fn causal_weights(times: &[f64], residuals: &[f64], cfg: &CausalConfig) -> Result<Vec<f64>> {
    Ok(causal_point_weights(times, residuals, cfg)?.1)
}

/// Per-point causal weights plus the per-bin table they were read from.
pub fn causal_point_weights(times: &[f64], residuals: &[f64], cfg: &CausalConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    if times.len() != residuals.len() {
        return Err(Error::Shape(format!("{} times for {} residuals", times.len(), residuals.len())));
    }
    if times.is_empty() {
        return Err(Error::Empty("causal weights over no points"));
    }
    let bins = causal_bins(times, cfg.n_bins);
    let n_bins = bins.iter().max().map_or(1, |&b| b + 1);
    let mut sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&b, &r) in bins.iter().zip(residuals) {
        sum[b] += r * r;
        count[b] += 1;
    }
    let mut weights = Vec::with_capacity(n_bins);
    let mut prefix = 0.0;
    for b in 0..n_bins {
        weights.push((-cfg.epsilon * prefix).exp());
        prefix += sum[b] / count[b] as f64;
    }
    let per_point = bins.iter().map(|&b| weights[b]).collect();
    Ok((per_point, weights))
}

/// Per-subdomain `mean(w r^2)`, averaged over subdomains; returns the loss and
/// `dL/dr` for every subdomain batch. Weights are treated as constants.
pub fn pde_loss_adjoint<T: Scalar>(batches: &[(Array1<T>, Option<Array1<T>>)]) -> Result<(T, Vec<Array1<T>>)> {
    if batches.is_empty() {
        return Err(Error::Empty("pde loss over no subdomains"));
    }
    let n_sub = T::from_usize_lossy(batches.len());
    let two = T::lit(2.0);
    let mut total = T::zero();
    let mut adj = Vec::with_capacity(batches.len());
    for (r, w) in batches {
        if r.is_empty() {
            return Err(Error::Empty("pde loss over an empty subdomain batch"));
        }
        let m = T::from_usize_lossy(r.len());
        let w = match w {
            Some(w) if w.len() != r.len() => {
                return Err(Error::Shape(format!("{} causal weights for {} residuals", w.len(), r.len())))
            }
            Some(w) => w.clone(),
            None => Array1::from_elem(r.len(), T::one()),
        };
        total += Zip::from(r).and(&w).fold(T::zero(), |acc, &r, &w| acc + w * r * r) / m;
        adj.push(Zip::from(r).and(&w).map_collect(|&r, &w| two * w * r / (m * n_sub)));
    }
    Ok((total / n_sub, adj))
}

pub fn pde_loss<T: Scalar>(batches: &[(Array1<T>, Option<Array1<T>>)]) -> Result<T> {
    Ok(pde_loss_adjoint(batches)?.0)
}

/// Individual loss terms of one step; `int` is `None` while a single domain exists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub data: f64,
    pub pde: Option<f64>,
    pub int: Option<f64>,
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    weights.w_data * parts.data + weights.w_pde * parts.pde.unwrap_or(0.0) + weights.w_int * parts.int.unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn bundle(u: f64, ux: f64, ut: f64, uxx: Option<f64>) -> EvalBundle<f64> {
        EvalBundle {
            u: array![u],
            du_dx: Some(array![ux]),
            du_dt: Some(array![ut]),
            d2u_dx2: uxx.map(|v| array![v]),
        }
    }

    #[test]
    fn data_loss_arithmetic() {
        assert_eq!(data_loss(array![0.0, 1.0].view(), array![0.0, 0.0].view()).unwrap(), 0.5);
        assert_eq!(data_loss(array![0.3, 0.2].view(), array![0.3, 0.2].view()).unwrap(), 0.0);
        assert!(data_loss::<f64>(array![].view(), array![].view()).is_err());
    }

    #[test]
    fn residual_arithmetic() {
        let c = NondimCoeffs { a: 2.0, b: 1.0, c: 1.0 };
        let r = pde_residual(&bundle(0.5, 1.0, 0.0, None), &c);
        assert!((r[0] - 1.5 / 6f64.sqrt()).abs() < 1e-12);
        assert_eq!(pde_residual(&bundle(0.7, 0.0, 0.0, None), &c)[0], 0.0);
    }

    #[test]
    fn viscosity_term_scaling() {
        let c = NondimCoeffs { a: 2.0, b: 1.0, c: 1.0 };
        // u = x^2 at x = 0.5: u_x = 1, u_xx = 2
        let b = bundle(0.25, 1.0, 0.0, Some(2.0));
        let plain = pde_residual(&b, &c)[0];
        let visc = viscosity_residual(&b, &c, 0.1).unwrap()[0];
        assert!((visc - plain - 0.1 * 2.0 / 6f64.sqrt()).abs() < 1e-12);
        assert_eq!(viscosity_residual(&b, &c, 0.0).unwrap()[0], plain);
        assert!(viscosity_residual(&bundle(0.0, 0.0, 0.0, None), &c, 0.1).is_err());
    }

    #[test]
    fn residual_adjoint_matches_finite_differences() {
        let c = NondimCoeffs { a: 0.7, b: 1.9, c: 1.0 };
        let kind = ResidualKind::Viscous { eps: 0.1 };
        let (u, ux, ut, uxx) = (0.4, -1.3, 0.6, 2.2);
        let f = |u, ux, ut, uxx| residual(&bundle(u, ux, ut, Some(uxx)), &c, kind).unwrap()[0];
        let adj = residual_adjoint(&bundle(u, ux, ut, Some(uxx)), &c, kind, &array![1.0]);
        let h = 1e-6;
        let fd = [
            (f(u + h, ux, ut, uxx) - f(u - h, ux, ut, uxx)) / (2.0 * h),
            (f(u, ux + h, ut, uxx) - f(u, ux - h, ut, uxx)) / (2.0 * h),
            (f(u, ux, ut + h, uxx) - f(u, ux, ut - h, uxx)) / (2.0 * h),
            (f(u, ux, ut, uxx + h) - f(u, ux, ut, uxx - h)) / (2.0 * h),
        ];
        let exact = [adj.u.unwrap()[0], adj.du_dx.unwrap()[0], adj.du_dt.unwrap()[0], adj.d2u_dx2.unwrap()[0]];
        for (a, b) in fd.iter().zip(exact) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn causal_two_bins() {
        let w = causal_weights(&[0.1, 0.9], &[1.0, 1.0], &CausalConfig { n_bins: 2, epsilon: 1.0 }).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn causal_zero_residuals_and_small_pools() {
        let t = [0.5, 0.1, 0.3];
        let (p, w) = causal_point_weights(&t, &[0.0; 3], &CausalConfig::default()).unwrap();
        assert_eq!(w, vec![1.0; 3]);
        assert_eq!(p, vec![1.0; 3]);
        // 7 points in 3 bins: sizes 3, 2, 2 in time order
        let t: Vec<f64> = (0..7).rev().map(|i| i as f64).collect();
        let bins = causal_bins(&t, 3);
        assert_eq!(bins, vec![2, 2, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn pde_loss_averaging() {
        let one = |r: Vec<f64>| (Array1::from(r), None);
        assert_eq!(pde_loss(&[one(vec![1.0, 1.0])]).unwrap(), 1.0);
        let two = [one(vec![0.0]), (array![1.0], Some(array![2.0]))];
        assert_eq!(pde_loss(&two).unwrap(), 1.0);
        assert_eq!(pde_loss(&[one(vec![0.0; 4])]).unwrap(), 0.0);
        assert!(pde_loss::<f64>(&[one(vec![])]).is_err());
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::default();
        let all = LossParts { data: 1.0, pde: Some(1.0), int: Some(1.0) };
        assert!((total_loss(&all, &w) - 1.0).abs() < 1e-12);
        let stage1 = LossParts { data: 2.0, pde: Some(3.0), int: None };
        assert!((total_loss(&stage1, &w) - (0.85 * 2.0 + 0.05 * 3.0)).abs() < 1e-12);
        assert_eq!(total_loss(&LossParts::default(), &w), 0.0);
    }

    proptest! {
        #[test]
        fn causal_weights_non_increasing(
            pts in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 1..200),
            bins in 1usize..20,
            eps in 0.0f64..5.0,
        ) {
            let (t, r): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let w = causal_weights(&t, &r, &CausalConfig { n_bins: bins, epsilon: eps }).unwrap();
            prop_assert_eq!(w[0], 1.0);
            for pair in w.windows(2) {
                prop_assert!(pair[1] <= pair[0]);
            }
        }

        #[test]
        fn residual_bounded_by_stream_norm(u in -2.0f64..2.0, ux in -5.0f64..5.0, ut in -5.0f64..5.0,
                                           a in -3.0f64..3.0, b in 0.0f64..3.0) {
            let c = NondimCoeffs { a, b, c: 1.0 };
            let r = pde_residual(&bundle(u, ux, ut, None), &c)[0];
            let bound = (ux * ux + (u * ux).powi(2) + ut * ut).sqrt();
            prop_assert!(r.abs() <= bound + 1e-12);
        }

        #[test]
        fn data_loss_permutation_invariant(pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..50)) {
            let (p, o): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let (pr, or): (Vec<f64>, Vec<f64>) = pairs.iter().rev().copied().unzip();
            let a = data_loss(Array1::from(p).view(), Array1::from(o).view()).unwrap();
            let b = data_loss(Array1::from(pr).view(), Array1::from(or).view()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
