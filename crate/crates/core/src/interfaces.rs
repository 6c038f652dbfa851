//! Interface classification and coupling losses between adjacent subdomains.
//!
//! Everything here lives in normalized coordinates with the normalized
//! Greenshields diagram (`v_f = 1`, `rho_jam = 1`) and density `rho = 1 - u`.
//! Each loss returns its value together with derivatives with respect to the
//! sampled states and the shock speed so the trainer can back-propagate.

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{eval_with_input_derivs, BundleAdjoint, DerivOrder, EvalBundle};
use crate::network::PinnNetwork;
use crate::physics::FundamentalDiagram;
use crate::sampling::{derive_seed, stream, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Fixed `x`, free `t`.
    Spatial,
    /// Fixed `t`, free `x`.
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceClass {
    Shock,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceConfig {
    pub n_int: usize,
    pub delta_shock: f64,
    pub w_entropy: f64,
    /// Plain gradient-descent rate of the shock speeds.
    pub shock_lr: f64,
}

impl Default for InterfaceConfig {
    fn default() -> Self {
        Self { n_int: 200, delta_shock: 0.1, w_entropy: 1.0, shock_lr: 1e-3 }
    }
}

/// One interface segment between subdomains `left` (or before) and `right` (or after).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceState {
    pub orientation: Orientation,
    pub position: f64,
    /// Extent of the segment along the free coordinate.
    pub lo: f64,
    pub hi: f64,
    pub left: usize,
    pub right: usize,
    /// Trainable shock speed; only ever updated on spatial interfaces.
    pub s: f64,
    pub last_class: Option<InterfaceClass>,
}

impl InterfaceState {
    pub fn new(orientation: Orientation, position: f64, lo: f64, hi: f64, left: usize, right: usize) -> Self {
        Self { orientation, position, lo, hi, left, right, s: 0.0, last_class: None }
    }
}

/// `n` uniform points on the segment, a pure function of `(seed, step)`.
pub fn sample_interface(state: &InterfaceState, n: usize, seed: u64, step: u64) -> Array2<f64> {
    let mut rng = stream(seed, Purpose::Interface, step);
    let mut out = Array2::zeros((n, 2));
    let (fixed, free) = match state.orientation {
        Orientation::Spatial => (0, 1),
        Orientation::Temporal => (1, 0),
    };
    for i in 0..n {
        let u: f64 = rng.random();
        out[[i, fixed]] = state.position;
        out[[i, free]] = state.lo + (state.hi - state.lo) * u;
    }
    out
}

/// Seed of interface `index` of a run with root seed `root`.
pub fn interface_seed(root: u64, index: usize) -> u64 {
    derive_seed(root, Purpose::Interface, index as u64)
}

pub fn density<T: Scalar>(u: ArrayView1<T>) -> Array1<T> {
    u.mapv(|v| T::one() - v)
}

/// Shock iff the mean density jump exceeds `delta_shock` (strictly).
pub fn classify<T: Scalar>(u_left: ArrayView1<T>, u_right: ArrayView1<T>, delta_shock: f64) -> InterfaceClass {
    let n = u_left.len().max(1);
    let jump = Zip::from(u_left).and(u_right).fold(T::zero(), |acc, &l, &r| acc + (l - r).abs()).as_f64() / n as f64;
    if jump > delta_shock {
        InterfaceClass::Shock
    } else {
        InterfaceClass::Smooth
    }
}

/// A jump loss and its derivatives with respect to both density samples and `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpLoss<T> {
    pub value: T,
    pub d_left: Array1<T>,
    pub d_right: Array1<T>,
    pub ds: T,
}

/// `mean [s (rho_L - rho_R) - (q(rho_L) - q(rho_R))]^2`
pub fn rh_loss<T: Scalar>(rho_l: ArrayView1<T>, rho_r: ArrayView1<T>, s: T, fd: &FundamentalDiagram<T>) -> JumpLoss<T> {
    let m = T::from_usize_lossy(rho_l.len().max(1));
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut ds = T::zero();
    let mut d_left = Array1::zeros(rho_l.len());
    let mut d_right = Array1::zeros(rho_l.len());
    Zip::from(&mut d_left)
        .and(&mut d_right)
        .and(rho_l)
        .and(rho_r)
        .for_each(|dl, dr, &l, &r| {
            let e = s * (l - r) - (fd.flow_unchecked(l) - fd.flow_unchecked(r));
            value += e * e;
            let g = two * e / m;
            ds += g * (l - r);
            *dl = g * (s - fd.flow_derivative(l));
            *dr = g * (fd.flow_derivative(r) - s);
        });
    JumpLoss { value: value / m, d_left, d_right, ds }
}

/// `mean relu(s - lambda(rho_L))^2 + relu(lambda(rho_R) - s)^2`
pub fn entropy_loss<T: Scalar>(rho_l: ArrayView1<T>, rho_r: ArrayView1<T>, s: T, fd: &FundamentalDiagram<T>) -> JumpLoss<T> {
    let m = T::from_usize_lossy(rho_l.len().max(1));
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut ds = T::zero();
    let mut d_left = Array1::zeros(rho_l.len());
    let mut d_right = Array1::zeros(rho_l.len());
    Zip::from(&mut d_left)
        .and(&mut d_right)
        .and(rho_l)
        .and(rho_r)
        .for_each(|dl, dr, &l, &r| {
            let a = (s - fd.flow_derivative(l)).max(T::zero());
            let b = (fd.flow_derivative(r) - s).max(T::zero());
            value += a * a + b * b;
            ds += two * (a - b) / m;
            // lambda' = q'' is constant: -2 v_f / rho_jam
            let curv = -two * fd.v_f / fd.rho_jam;
            *dl = -two * a * curv / m;
            *dr = two * b * curv / m;
        });
    JumpLoss { value: value / m, d_left, d_right, ds }
}

/// Value and derivative losses of a smooth spatial interface.
pub fn smooth_loss_bundles<T: Scalar>(left: &EvalBundle<T>, right: &EvalBundle<T>) -> (T, BundleAdjoint<T>, BundleAdjoint<T>) {
    let m = T::from_usize_lossy(left.len().max(1));
    let two = T::lit(2.0);
    let du = &left.u - &right.u;
    let dg = left.dx() - right.dx();
    let value = (du.iter().map(|&v| v * v).sum::<T>() + dg.iter().map(|&v| v * v).sum::<T>()) / m;
    let au = du.mapv(|v| two * v / m);
    let ag = dg.mapv(|v| two * v / m);
    let l = BundleAdjoint { u: Some(au.clone()), du_dx: Some(ag.clone()), ..Default::default() };
    let r = BundleAdjoint { u: Some(-au), du_dx: Some(-ag), ..Default::default() };
    (value, l, r)
}

/// Mean squared value gap across a temporal interface.
pub fn c0_loss_bundles<T: Scalar>(before: &EvalBundle<T>, after: &EvalBundle<T>) -> (T, BundleAdjoint<T>, BundleAdjoint<T>) {
    let m = T::from_usize_lossy(before.len().max(1));
    let two = T::lit(2.0);
    let du = &before.u - &after.u;
    let value = du.iter().map(|&v| v * v).sum::<T>() / m;
    let a = du.mapv(|v| two * v / m);
    (
        value,
        BundleAdjoint { u: Some(a.clone()), ..Default::default() },
        BundleAdjoint { u: Some(-a), ..Default::default() },
    )
}

pub fn smooth_loss<T: Scalar>(left: &PinnNetwork<T>, right: &PinnNetwork<T>, samples: &Array2<T>) -> T {
    let l = eval_with_input_derivs(left, samples.view(), DerivOrder::First);
    let r = eval_with_input_derivs(right, samples.view(), DerivOrder::First);
    smooth_loss_bundles(&l, &r).0
}

pub fn temporal_c0_loss<T: Scalar>(before: &PinnNetwork<T>, after: &PinnNetwork<T>, samples: &Array2<T>) -> T {
    let b = before.forward_batch(samples.view());
    let a = after.forward_batch(samples.view());
    let m = T::from_usize_lossy(b.len().max(1));
    Zip::from(&b).and(&a).fold(T::zero(), |acc, &x, &y| acc + (x - y) * (x - y)) / m
}

/// Loss of one interface given the two sides' evaluations at the same samples.
#[derive(Debug, Clone)]
pub struct InterfaceTerm<T> {
    pub value: T,
    pub class: InterfaceClass,
    pub left: BundleAdjoint<T>,
    pub right: BundleAdjoint<T>,
    pub ds: T,
}

/// Evaluation order each side of an interface needs.
pub fn required_order(orientation: Orientation) -> DerivOrder {
    match orientation {
        Orientation::Spatial => DerivOrder::First,
        Orientation::Temporal => DerivOrder::Value,
    }
}

/// Classifies the interface from the current samples and returns the selected loss:
/// `L_RH + w_entropy L_entropy` for shocks, otherwise the smooth (spatial) or
/// `C0` (temporal) continuity loss. Temporal interfaces never use `s`.
pub fn interface_term<T: Scalar>(
    state: &InterfaceState,
    left: &EvalBundle<T>,
    right: &EvalBundle<T>,
    cfg: &InterfaceConfig,
) -> InterfaceTerm<T> {
    let class = classify(left.u.view(), right.u.view(), cfg.delta_shock);
    if state.orientation == Orientation::Temporal {
        let (value, l, r) = c0_loss_bundles(left, right);
        return InterfaceTerm { value, class, left: l, right: r, ds: T::zero() };
    }
    match class {
        InterfaceClass::Smooth => {
            let (value, l, r) = smooth_loss_bundles(left, right);
            InterfaceTerm { value, class, left: l, right: r, ds: T::zero() }
        }
        InterfaceClass::Shock => {
            let fd = FundamentalDiagram::<T>::normalized();
            let rho_l = density(left.u.view());
            let rho_r = density(right.u.view());
            let s = T::lit(state.s);
            let w = T::lit(cfg.w_entropy);
            let rh = rh_loss(rho_l.view(), rho_r.view(), s, &fd);
            let en = entropy_loss(rho_l.view(), rho_r.view(), s, &fd);
            // d/du = -d/drho
            let dl = -(&rh.d_left + &(&en.d_left * w));
            let dr = -(&rh.d_right + &(&en.d_right * w));
            InterfaceTerm {
                value: rh.value + w * en.value,
                class,
                left: BundleAdjoint { u: Some(dl), ..Default::default() },
                right: BundleAdjoint { u: Some(dr), ..Default::default() },
                ds: rh.ds + w * en.ds,
            }
        }
    }
}

/// Sum of all interface losses of a set of subnets at the given samples
/// (one sample set per interface); value only.
pub fn interface_loss<T: Scalar>(
    interfaces: &[InterfaceState],
    nets: &[PinnNetwork<T>],
    samples: &[Array2<T>],
    cfg: &InterfaceConfig,
) -> T {
    interfaces
        .iter()
        .zip(samples)
        .map(|(st, pts)| {
            let order = required_order(st.orientation);
            let l = eval_with_input_derivs(&nets[st.left], pts.view(), order);
            let r = eval_with_input_derivs(&nets[st.right], pts.view(), order);
            interface_term(st, &l, &r, cfg).value
        })
        .sum()
}
