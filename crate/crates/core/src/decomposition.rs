//! Residual-guided split detection and child creation.
//!
//! The decision runs once, between the coarse stage and the refinement stage:
//! the observation-based shock indicator gates decomposition, the coarse
//! network's squared residual averaged along one axis gives a profile, peaks
//! of the smoothed profile count the shock-prone regions, and the deepest
//! valleys become split positions.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, forward_with_tape, BundleAdjoint, DerivOrder};
use crate::error::{Error, Result};
use crate::field::ObservationSet;
use crate::losses::{residual, ResidualKind};
use crate::network::{Architecture, PinnNetwork};
use crate::optim::Adam;
use crate::partition::{Direction, Partition};
use crate::physics::NondimCoeffs;
use crate::sampling::{derive_seed, stream, uniform_points, Purpose, Rect};
use crate::scalar::Scalar;

const INDICATOR_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Decompose only when the shock indicator exceeds the threshold and peaks exist.
    #[default]
    ShockScreened,
    /// Always place a split from the residual profile.
    DecompositionEnabled,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shock_screened" | "screened" => Ok(Mode::ShockScreened),
            "decomposition_enabled" | "enabled" => Ok(Mode::DecompositionEnabled),
            other => Err(Error::Parse(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    pub tau_shock: f64,
    pub delta_min: f64,
    pub n_x: usize,
    pub n_t: usize,
    /// Protocol cap on subdomains per split axis.
    pub max_subdomains: usize,
    pub peak_fraction: f64,
    pub edge_exclusion: f64,
    pub min_separation: f64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            tau_shock: 2.0,
            delta_min: 0.15,
            n_x: 200,
            n_t: 100,
            max_subdomains: 2,
            peak_fraction: 0.3,
            edge_exclusion: 0.1,
            min_separation: 0.1,
        }
    }
}

/// Max-to-mean ratio of observed spatial and temporal speed gradients, in
/// normalized coordinates and normalized speed.
pub fn shock_indicator(obs: &ObservationSet) -> Result<f64> {
    if obs.sensors.is_empty() || obs.records.is_empty() {
        return Err(Error::Empty("shock indicator without observations"));
    }
    let dx = 1.0 / (obs.n_cells - 1) as f64;
    let dt = 1.0 / (obs.n_steps - 1) as f64;
    // normalized speeds: a global rescaling of u (and its stats) leaves them unchanged
    let series: Vec<Vec<(usize, f64)>> = obs
        .sensors
        .iter()
        .map(|&c| obs.series(c).into_iter().map(|(k, u)| (k, obs.stats.normalize(u))).collect())
        .collect();

    let ratio = |g: &[f64]| {
        let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        max / (mean + INDICATOR_EPS)
    };

    let mut gt = Vec::with_capacity(series.len());
    for s in &series {
        let diffs: Vec<f64> = s
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).abs() / ((w[1].0 - w[0].0) as f64 * dt))
            .collect();
        if !diffs.is_empty() {
            gt.push(diffs.iter().sum::<f64>() / diffs.len() as f64);
        }
    }

    let mut gx = Vec::with_capacity(series.len().saturating_sub(1));
    for (i, pair) in series.windows(2).enumerate() {
        let h = (obs.sensors[i + 1] - obs.sensors[i]) as f64 * dx;
        let (a, b) = (&pair[0], &pair[1]);
        let (mut p, mut q) = (0, 0);
        let (mut sum, mut n) = (0.0, 0usize);
        while p < a.len() && q < b.len() {
            match a[p].0.cmp(&b[q].0) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    sum += (b[q].1 - a[p].1).abs() / h;
                    n += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput(format!(
                "sensors {} and {} share no timestamps",
                obs.sensors[i],
                obs.sensors[i + 1]
            )));
        }
        gx.push(sum / n as f64);
    }

    let s_x = if gx.is_empty() { f64::NEG_INFINITY } else { ratio(&gx) };
    let s_t = if gt.is_empty() { f64::NEG_INFINITY } else { ratio(&gt) };
    let s = s_x.max(s_t);
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::InvalidInput("observations carry no gradient information".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileAxis {
    X,
    T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProfile {
    pub axis: ProfileAxis,
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl ResidualProfile {
    /// Profile of a squared-residual grid indexed `(x, t)`.
    pub fn from_grid(r2: &Array2<f64>, axis: ProfileAxis) -> Self {
        let values: Vec<f64> = match axis {
            ProfileAxis::X => r2.mean_axis(Axis(1)),
            ProfileAxis::T => r2.mean_axis(Axis(0)),
        }
        .expect("non-empty residual grid")
        .to_vec();
        let positions = linspace(values.len());
        let smoothed = smooth_profile(&values);
        Self { axis, positions, values, smoothed }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let name = match self.axis {
            ProfileAxis::X => "x",
            ProfileAxis::T => "t",
        };
        writeln!(w, "{name},residual,smoothed")?;
        for ((p, v), s) in self.positions.iter().zip(&self.values).zip(&self.smoothed) {
            writeln!(w, "{p},{v},{s}")?;
        }
        Ok(())
    }
}

pub fn linspace(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Residuals of a partition on the uniform `n_x x n_t` node grid, indexed `(x, t)`.
pub fn residual_grid<T: Scalar>(
    partition: &Partition<T>,
    coeffs: &NondimCoeffs<T>,
    kind: ResidualKind,
    n_x: usize,
    n_t: usize,
) -> Result<Array2<f64>> {
    let pts = crate::field::grid_points(n_x, n_t);
    let order = if kind.needs_second() { DerivOrder::Second } else { DerivOrder::First };
    let mut out = Array2::zeros((n_x, n_t));
    for (k, idx) in partition.group_points(pts.view()).iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let sub = pts.select(Axis(0), idx).mapv(T::lit);
        let b = crate::autodiff::eval_with_input_derivs(&partition.nets[k], sub.view(), order);
        let r = residual(&b, coeffs, kind)?;
        for (&i, &v) in idx.iter().zip(&r) {
            out[[i / n_t, i % n_t]] = v.as_f64();
        }
    }
    Ok(out)
}

pub fn residual_profile<T: Scalar>(
    partition: &Partition<T>,
    coeffs: &NondimCoeffs<T>,
    axis: ProfileAxis,
    n_x: usize,
    n_t: usize,
) -> Result<ResidualProfile> {
    let r = residual_grid(partition, coeffs, ResidualKind::Lwr, n_x, n_t)?;
    Ok(ResidualProfile::from_grid(&r.mapv(|v| v * v), axis))
}

/// `max(3, floor(n / 20))`, rounded up to the next odd integer.
pub fn kernel_size(n: usize) -> usize {
    let k = (n / 20).max(3);
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

/// Centered moving average; near the edges the window shrinks symmetrically.
pub fn smooth_profile(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let half = kernel_size(n) / 2;
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let w = &values[i - h..=i + h];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Local maxima above `peak_fraction` of the global maximum, outside the edge
/// exclusion zones, at least `min_separation * n` indices apart (higher peaks
/// win). Returned in index order.
pub fn detect_peaks(smoothed: &[f64], cfg: &DecompositionConfig) -> Vec<usize> {
    let n = smoothed.len();
    if n < 3 {
        return vec![];
    }
    let global = smoothed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(global > 0.0) {
        return vec![];
    }
    let edge = ((cfg.edge_exclusion * n as f64).floor() as usize).max(1);
    let sep = (cfg.min_separation * n as f64).floor() as usize;
    let mut cand: Vec<usize> = (edge..n.saturating_sub(edge))
        .filter(|&i| i > 0 && i + 1 < n)
        .filter(|&i| smoothed[i] > smoothed[i - 1] && smoothed[i] >= smoothed[i + 1])
        .filter(|&i| smoothed[i] > cfg.peak_fraction * global)
        .collect();
    cand.sort_by(|&a, &b| smoothed[b].total_cmp(&smoothed[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in cand {
        if kept.iter().all(|&j| i.abs_diff(j) >= sep) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Interior local minima (plateaus report their first index).
pub fn local_minima(smoothed: &[f64]) -> Vec<usize> {
    let n = smoothed.len();
    (1..n.saturating_sub(1))
        .filter(|&i| smoothed[i] < smoothed[i - 1] && smoothed[i] <= smoothed[i + 1])
        .collect()
}

fn valid(pos: f64, taken: &[f64], delta: f64) -> bool {
    let tol = 1e-12;
    pos >= delta - tol && pos <= 1.0 - delta + tol && taken.iter().all(|&t| (t - pos).abs() >= delta - tol)
}

/// Up to `k` split positions at the deepest valid valleys (ties to the
/// leftmost). With fewer minima than `k`, equally spaced splits are used
/// instead. `None` when no valid placement exists.
pub fn select_splits(smoothed: &[f64], positions: &[f64], k: usize, delta_min: f64) -> Option<Vec<f64>> {
    if k == 0 {
        return None;
    }
    let minima = local_minima(smoothed);
    let mut out: Vec<f64> = Vec::with_capacity(k);
    if minima.len() < k {
        for j in 1..=k {
            let p = j as f64 / (k + 1) as f64;
            if valid(p, &out, delta_min) {
                out.push(p);
            }
        }
    } else {
        let mut order = minima;
        order.sort_by(|&a, &b| smoothed[a].total_cmp(&smoothed[b]).then(a.cmp(&b)));
        for i in order {
            if out.len() == k {
                break;
            }
            if valid(positions[i], &out, delta_min) {
                out.push(positions[i]);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    (!out.is_empty()).then_some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub decomposed: bool,
    pub direction: Direction,
    pub mode: Mode,
    /// Shock indicator `S`.
    pub indicator: f64,
    pub x_splits: Vec<f64>,
    pub t_splits: Vec<f64>,
    pub peaks_x: Vec<usize>,
    pub peaks_t: Vec<usize>,
    pub reason: String,
}

impl SplitDecision {
    pub fn single(direction: Direction, mode: Mode, indicator: f64, reason: &str) -> Self {
        Self {
            decomposed: false,
            direction,
            mode,
            indicator,
            x_splits: vec![],
            t_splits: vec![],
            peaks_x: vec![],
            peaks_t: vec![],
            reason: reason.to_string(),
        }
    }

    pub fn n_subdomains(&self) -> usize {
        (self.x_splits.len() + 1) * (self.t_splits.len() + 1)
    }
}

/// Split positions along one profile, or `None` to stay single-domain on it.
fn axis_splits(profile: &ResidualProfile, peaks: &[usize], mode: Mode, cfg: &DecompositionConfig) -> Option<Vec<f64>> {
    let cap = cfg.max_subdomains.saturating_sub(1).max(1);
    match mode {
        Mode::ShockScreened => {
            if peaks.is_empty() {
                return None;
            }
            select_splits(&profile.smoothed, &profile.positions, peaks.len().min(cap), cfg.delta_min)
        }
        Mode::DecompositionEnabled => {
            let k = peaks.len().clamp(1, cap);
            select_splits(&profile.smoothed, &profile.positions, k, cfg.delta_min)
                .or_else(|| select_splits(&[], &[], k, cfg.delta_min))
        }
    }
}

/// Decision from precomputed profiles; `profile_t` is only read for temporal
/// and space-time directions, `profile_x` for spatial and space-time.
pub fn decide_from_profiles(
    indicator: f64,
    profile_x: Option<&ResidualProfile>,
    profile_t: Option<&ResidualProfile>,
    mode: Mode,
    direction: Direction,
    cfg: &DecompositionConfig,
) -> Result<SplitDecision> {
    if mode == Mode::ShockScreened && !(indicator > cfg.tau_shock) {
        return Ok(SplitDecision::single(direction, mode, indicator, "single-domain fallback: indicator below threshold"));
    }
    let need = |p: Option<&ResidualProfile>, axis: &str| {
        p.cloned().ok_or_else(|| Error::InvalidInput(format!("{axis} profile required for this direction")))
    };
    let (use_x, use_t) = match direction {
        Direction::Spatial => (true, false),
        Direction::Temporal => (false, true),
        Direction::Spacetime => (true, true),
    };
    let mut d = SplitDecision::single(direction, mode, indicator, "");
    let mut found = Vec::new();
    if use_x {
        let p = need(profile_x, "x")?;
        d.peaks_x = detect_peaks(&p.smoothed, cfg);
        found.push(axis_splits(&p, &d.peaks_x, mode, cfg));
    }
    if use_t {
        let p = need(profile_t, "t")?;
        d.peaks_t = detect_peaks(&p.smoothed, cfg);
        found.push(axis_splits(&p, &d.peaks_t, mode, cfg));
    }
    match direction {
        Direction::Spatial | Direction::Temporal => {
            let Some(splits) = found.pop().flatten() else {
                d.reason = "single-domain fallback: no peaks or no valid split".into();
                return Ok(d);
            };
            if direction == Direction::Spatial {
                d.x_splits = splits;
            } else {
                d.t_splits = splits;
            }
        }
        Direction::Spacetime => {
            let t = found.pop().flatten();
            let x = found.pop().flatten();
            if x.is_none() && t.is_none() {
                d.reason = "single-domain fallback: no peaks on either axis".into();
                return Ok(d);
            }
            // a flat axis falls back to its midpoint so the layout stays 2x2
            d.x_splits = x.unwrap_or_else(|| vec![0.5]);
            d.t_splits = t.unwrap_or_else(|| vec![0.5]);
        }
    }
    d.decomposed = true;
    d.reason = "decomposed".into();
    Ok(d)
}

/// Full decision for a coarse partition (normally a single network).
pub fn decide<T: Scalar>(
    indicator: f64,
    coarse: &Partition<T>,
    coeffs: &NondimCoeffs<T>,
    mode: Mode,
    direction: Direction,
    cfg: &DecompositionConfig,
) -> Result<(SplitDecision, Option<ResidualProfile>, Option<ResidualProfile>)> {
    if mode == Mode::ShockScreened && !(indicator > cfg.tau_shock) {
        return Ok((
            SplitDecision::single(direction, mode, indicator, "single-domain fallback: indicator below threshold"),
            None,
            None,
        ));
    }
    let r = residual_grid(coarse, coeffs, ResidualKind::Lwr, cfg.n_x, cfg.n_t)?;
    let r2 = r.mapv(|v| v * v);
    let px = ResidualProfile::from_grid(&r2, ProfileAxis::X);
    let pt = ResidualProfile::from_grid(&r2, ProfileAxis::T);
    let d = decide_from_profiles(indicator, Some(&px), Some(&pt), mode, direction, cfg)?;
    Ok((d, Some(px), Some(pt)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmStartConfig {
    pub epochs: usize,
    pub points: usize,
    pub lr: f64,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self { epochs: 200, points: 2000, lr: 1e-3 }
    }
}

/// Final matching loss of every child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartReport {
    pub initial_mse: Vec<f64>,
    pub final_mse: Vec<f64>,
}

/// One child per subdomain of the decided layout. Compatible parent layers are
/// transplanted, then each child is fitted to the parent's output on uniform
/// points inside its own subdomain.
pub fn create_children<T: Scalar>(
    parent: &PinnNetwork<T>,
    decision: &SplitDecision,
    child_arch: &Architecture,
    warm: &WarmStartConfig,
    seed: u64,
) -> Result<(Partition<T>, WarmStartReport)> {
    let layout = Partition::grid(
        decision.direction,
        decision.x_splits.clone(),
        decision.t_splits.clone(),
        vec![parent.clone(); decision.n_subdomains()],
    )?;
    let mut children = Vec::with_capacity(layout.n_subdomains());
    let mut report = WarmStartReport { initial_mse: vec![], final_mse: vec![] };
    for (k, rect) in layout.rects().iter().enumerate() {
        let mut child = parent.transplant(child_arch, derive_seed(seed, Purpose::Init, 100 + k as u64))?;
        let (initial, last) = match_parent(&mut child, parent, rect, warm, derive_seed(seed, Purpose::WarmStart, k as u64))?;
        report.initial_mse.push(initial);
        report.final_mse.push(last);
        children.push(child);
    }
    let p = Partition::grid(decision.direction, decision.x_splits.clone(), decision.t_splits.clone(), children)?;
    Ok((p, report))
}

/// Full-batch Adam on `mean (child - parent)^2`; returns the loss before and after.
pub fn match_parent<T: Scalar>(
    child: &mut PinnNetwork<T>,
    parent: &PinnNetwork<T>,
    rect: &Rect,
    warm: &WarmStartConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let pts = uniform_points(warm.points, rect, &mut stream(seed, Purpose::WarmStart, 0)).mapv(T::lit);
    let target = parent.forward_batch(pts.view());
    let mut opt = Adam::for_networks(std::slice::from_ref(child));
    let mse = |c: &PinnNetwork<T>| {
        let d = c.forward_batch(pts.view()) - &target;
        d.iter().map(|&v| v * v).sum::<T>().as_f64() / d.len() as f64
    };
    let initial = mse(child);
    let m = T::from_usize_lossy(pts.nrows());
    let two = T::lit(2.0);
    for epoch in 0..warm.epochs {
        let (b, tape) = forward_with_tape(child, pts.view(), DerivOrder::Value);
        let diff: Array1<T> = &b.u - &target;
        if diff.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, reason: "warm start produced non-finite output".into() });
        }
        let adj = BundleAdjoint { u: Some(diff.mapv(|d| two * d / m)), ..Default::default() };
        let g = backward(child, &tape, &adj)?;
        opt.step_networks(std::slice::from_mut(child), std::slice::from_ref(&g), T::lit(warm.lr))?;
    }
    Ok((initial, mse(child)))
}
