//! Greenshields closure, wave speeds, nondimensional residual coefficients and
//! a Godunov finite-volume solver used to generate ground-truth speed fields.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{NormStats, SpeedField};
use crate::scalar::Scalar;

/// mph -> ft/s
pub const FPS_PER_MPH: f64 = 5280.0 / 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram<T> {
    pub v_f: T,
    pub rho_jam: T,
}

impl<T: Scalar> FundamentalDiagram<T> {
    pub fn new(v_f: T, rho_jam: T) -> Result<Self> {
        if !(v_f > T::zero() && rho_jam > T::zero()) {
            return Err(Error::InvalidInput(format!("v_f ({v_f}) and rho_jam ({rho_jam}) must be positive")));
        }
        Ok(Self { v_f, rho_jam })
    }

    /// `v_f = rho_jam = 1`, the diagram used for interface terms.
    pub fn normalized() -> Self {
        Self { v_f: T::one(), rho_jam: T::one() }
    }

    fn check(&self, rho: T) -> Result<()> {
        if rho >= T::zero() && rho <= self.rho_jam {
            Ok(())
        } else {
            Err(Error::DensityOutOfRange { rho: rho.as_f64(), rho_jam: self.rho_jam.as_f64() })
        }
    }

    pub fn flow(&self, rho: T) -> Result<T> {
        self.check(rho)?;
        Ok(self.flow_unchecked(rho))
    }

    /// Greenshields flow without the range check (used on network outputs,
    /// which are not confined to `[0, rho_jam]`).
    #[inline]
    pub fn flow_unchecked(&self, rho: T) -> T {
        self.v_f * rho * (T::one() - rho / self.rho_jam)
    }

    #[inline]
    pub fn flow_derivative(&self, rho: T) -> T {
        self.v_f * (T::one() - T::lit(2.0) * rho / self.rho_jam)
    }

    pub fn critical_density(&self) -> T {
        self.rho_jam / T::lit(2.0)
    }

    pub fn max_flow(&self) -> T {
        self.v_f * self.rho_jam / T::lit(4.0)
    }

    pub fn characteristic_speed(&self, rho: T) -> Result<T> {
        self.check(rho)?;
        Ok(self.flow_derivative(rho))
    }

    /// Rankine-Hugoniot speed from the flux jump.
    pub fn rh_shock_speed(&self, rho_l: T, rho_r: T) -> Result<T> {
        self.check(rho_l)?;
        self.check(rho_r)?;
        if (rho_l - rho_r).abs() <= T::lit(1e-12) {
            return Err(Error::EqualStates(rho_l.as_f64()));
        }
        Ok((self.flow_unchecked(rho_l) - self.flow_unchecked(rho_r)) / (rho_l - rho_r))
    }

    /// Closed form of the Greenshields jump speed, `v_f (1 - (rho_l + rho_r)/rho_jam)`.
    pub fn rh_shock_speed_closed_form(&self, rho_l: T, rho_r: T) -> T {
        self.v_f * (T::one() - (rho_l + rho_r) / self.rho_jam)
    }

    /// Exact Godunov flux for the concave Greenshields flow.
    pub fn godunov_flux(&self, rho_l: T, rho_r: T) -> T {
        let ql = self.flow_unchecked(rho_l);
        let qr = self.flow_unchecked(rho_r);
        if rho_l <= rho_r {
            ql.min(qr)
        } else if rho_r <= self.critical_density() && self.critical_density() <= rho_l {
            self.max_flow()
        } else {
            ql.max(qr)
        }
    }

    /// Speed associated with a density: `u = v_f (1 - rho/rho_jam)`.
    pub fn speed(&self, rho: T) -> T {
        self.v_f * (T::one() - rho / self.rho_jam)
    }
}

/// Coefficients of the normalized speed-form residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimCoeffs<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Scalar> NondimCoeffs<T> {
    /// `sqrt(A^2 + B^2 + 1)`
    pub fn norm(&self) -> T {
        (self.a * self.a + self.b * self.b + T::one()).sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> NondimCoeffs<U> {
        NondimCoeffs { a: U::lit(self.a.as_f64()), b: U::lit(self.b.as_f64()), c: U::lit(self.c.as_f64()) }
    }
}

/// `C = (5280/3600) T/X`, `A = (v_f - 2 u_min) C`, `B = 2 (u_max - u_min) C`.
pub fn nondim_coeffs(stats: &NormStats, x_range_ft: f64, t_range_s: f64) -> Result<NondimCoeffs<f64>> {
    if !(stats.u_max > stats.u_min) {
        return Err(Error::DegenerateField(stats.u_min));
    }
    if !(x_range_ft > 0.0 && t_range_s > 0.0) {
        return Err(Error::InvalidInput(format!(
            "domain extents must be positive (x {x_range_ft}, t {t_range_s})"
        )));
    }
    let c = FPS_PER_MPH * t_range_s / x_range_ft;
    Ok(NondimCoeffs {
        a: (stats.v_f - 2.0 * stats.u_min) * c,
        b: 2.0 * (stats.u_max - stats.u_min) * c,
        c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    RiemannShock,
    Rarefaction,
    Uniform,
    MultiWave,
}

fn default_v_f() -> f64 {
    60.0
}
fn default_rho_jam() -> f64 {
    1.0
}
fn default_cfl() -> f64 {
    0.9
}
fn default_length() -> f64 {
    21_120.0
}
fn default_x0() -> f64 {
    0.5
}

/// Synthetic initial-value problem for the finite-volume oracle.
///
/// Initial densities by kind (positions are fractions of `length_ft`):
/// * `riemann_shock`: `rho_left` left of `x0`, `rho_right` to the right.
/// * `rarefaction`: step from `rho_left` to `rho_right` at `x0`, smoothed by a
///   `tanh` ramp of half-width `ramp_width` (sharp when zero).
/// * `uniform`: linear profile from `rho_left` to `rho_right` (constant when equal).
/// * `multi_wave`: `rho_left` background with a `rho_right` block on `[x0, x1)`.
///
/// Boundaries hold the initial edge states fixed unless `periodic` is set.
/// The step is `cfl * dx / v_f` unless `duration_s` is given, in which case the
/// CFL condition is checked against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub rho_left: f64,
    pub rho_right: f64,
    pub n_cells: usize,
    pub n_steps: usize,
    /// mph
    #[serde(default = "default_v_f")]
    pub v_f: f64,
    #[serde(default = "default_rho_jam")]
    pub rho_jam: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_length")]
    pub length_ft: f64,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default)]
    pub x1: Option<f64>,
    #[serde(default)]
    pub ramp_width: f64,
    #[serde(default)]
    pub periodic: bool,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, rho_left: f64, rho_right: f64, n_cells: usize, n_steps: usize) -> Self {
        Self {
            kind,
            rho_left,
            rho_right,
            n_cells,
            n_steps,
            v_f: default_v_f(),
            rho_jam: default_rho_jam(),
            cfl: default_cfl(),
            length_ft: default_length(),
            duration_s: None,
            x0: default_x0(),
            x1: None,
            ramp_width: 0.0,
            periodic: false,
        }
    }

    pub fn fd(&self) -> Result<FundamentalDiagram<f64>> {
        FundamentalDiagram::new(self.v_f, self.rho_jam)
    }

    pub fn dx(&self) -> f64 {
        self.length_ft / self.n_cells as f64
    }

    /// Time step in seconds between stored snapshots.
    pub fn dt(&self) -> f64 {
        match self.duration_s {
            Some(d) => d / (self.n_steps - 1) as f64,
            None => self.cfl * self.dx() / (self.v_f * FPS_PER_MPH),
        }
    }

    pub fn duration(&self) -> f64 {
        self.dt() * (self.n_steps - 1) as f64
    }

    /// Cell-center position as a fraction of the road length.
    pub fn cell_fraction(&self, cell: usize) -> f64 {
        (cell as f64 + 0.5) / self.n_cells as f64
    }

    pub fn initial_density(&self) -> Array1<f64> {
        let (l, r) = (self.rho_left, self.rho_right);
        Array1::from_shape_fn(self.n_cells, |c| {
            let x = self.cell_fraction(c);
            match self.kind {
                ScenarioKind::RiemannShock => {
                    if x < self.x0 {
                        l
                    } else {
                        r
                    }
                }
                ScenarioKind::Rarefaction => {
                    if self.ramp_width > 0.0 {
                        l + (r - l) * 0.5 * (1.0 + ((x - self.x0) / self.ramp_width).tanh())
                    } else if x < self.x0 {
                        l
                    } else {
                        r
                    }
                }
                ScenarioKind::Uniform => l + (r - l) * x,
                ScenarioKind::MultiWave => {
                    let x1 = self.x1.unwrap_or(self.x0 + 0.3);
                    if (self.x0..x1).contains(&x) {
                        r
                    } else {
                        l
                    }
                }
            }
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n_cells < 3 || self.n_steps < 2 {
            return Err(Error::InvalidInput(format!(
                "scenario grid too small ({} cells, {} steps)",
                self.n_cells, self.n_steps
            )));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidInput(format!("cfl factor {} not in (0, 1]", self.cfl)));
        }
        if !(self.length_ft > 0.0) {
            return Err(Error::InvalidInput("length_ft must be positive".into()));
        }
        let fd = self.fd()?;
        for rho in [self.rho_left, self.rho_right] {
            fd.flow(rho)?;
        }
        Ok(())
    }

    /// Analytic shock position (fraction of length) of the Riemann problem at time `t_s`.
    pub fn riemann_shock_position(&self, t_s: f64) -> Result<f64> {
        let s = self.fd()?.rh_shock_speed(self.rho_left, self.rho_right)? * FPS_PER_MPH;
        Ok(self.x0 + s * t_s / self.length_ft)
    }
}

#[derive(Debug, Clone)]
pub struct GodunovSolution {
    /// Densities indexed `(cell, step)`.
    pub density: Array2<f64>,
    pub field: SpeedField,
    pub dt: f64,
    pub dx: f64,
}

/// Explicit first-order Godunov scheme; one stored snapshot per time step.
pub fn godunov_solve(scenario: &Scenario) -> Result<GodunovSolution> {
    scenario.validate()?;
    let fd = scenario.fd()?;
    let (dx, dt) = (scenario.dx(), scenario.dt());
    let v_fps = scenario.v_f * FPS_PER_MPH;
    let courant = v_fps * dt / dx;
    if courant > scenario.cfl + 1e-12 {
        return Err(Error::Cfl { courant, limit: scenario.cfl });
    }
    // fluxes are in density*ft/s with v_f converted
    let fd_fps = FundamentalDiagram::new(v_fps, fd.rho_jam)?;

    let n = scenario.n_cells;
    let mut rho = scenario.initial_density();
    let (left_bc, right_bc) = (rho[0], rho[n - 1]);
    let mut density = Array2::zeros((n, scenario.n_steps));
    density.column_mut(0).assign(&rho);
    let mut flux = vec![0.0; n + 1];
    let ratio = dt / dx;
    for k in 1..scenario.n_steps {
        for (f, face) in flux.iter_mut().zip(0..=n) {
            let (l, r) = if scenario.periodic {
                (rho[(face + n - 1) % n], rho[face % n])
            } else {
                let l = if face == 0 { left_bc } else { rho[face - 1] };
                let r = if face == n { right_bc } else { rho[face] };
                (l, r)
            };
            *f = fd_fps.godunov_flux(l, r);
        }
        for i in 0..n {
            rho[i] -= ratio * (flux[i + 1] - flux[i]);
        }
        density.column_mut(k).assign(&rho);
    }

    let speeds = density.mapv(|r| fd.speed(r).max(0.0));
    let field = SpeedField::new(speeds, 0.5 * dx, scenario.length_ft - 0.5 * dx, dt * (scenario.n_steps - 1) as f64)?;
    Ok(GodunovSolution { density, field, dt, dx })
}
