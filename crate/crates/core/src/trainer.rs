//! Method configurations and the training loop.
//!
//! One epoch is one optimizer step: a data mini-batch, one collocation
//! mini-batch per subdomain and, when subdomains are coupled, fresh interface
//! samples. The two-stage method runs a coarse single-network stage, takes the
//! split decision once, warm-starts child networks and refines them with
//! interface coupling, residual-adaptive collocation, step decay and clipping.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_gradients, BundleAdjoint, DerivOrder, EvalBundle, EvalRequest, LossOutput};
use crate::decomposition::{self, create_children, DecompositionConfig, Mode, SplitDecision, WarmStartConfig};
use crate::error::{Error, Result};
use crate::field::ObservationSet;
use crate::interfaces::{interface_seed, interface_term, required_order, sample_interface, InterfaceClass, InterfaceConfig, Orientation};
use crate::losses::{
    causal_point_weights, data_loss_adjoint, pde_loss_adjoint, residual, residual_adjoint, CausalConfig, LossParts, LossWeights,
    ResidualKind,
};
use crate::network::{Architecture, PinnNetwork};
use crate::optim::{clip_gradients, Adam, StepLr};
use crate::partition::{Direction, Partition};
use crate::physics::{nondim_coeffs, NondimCoeffs};
use crate::sampling::{batch_indices, derive_seed, latin_hypercube, stream, uniform_points, Purpose, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "B1_nn")]
    B1Nn,
    #[serde(rename = "B2_pinn")]
    B2Pinn,
    #[serde(rename = "B3_rar")]
    B3Rar,
    #[serde(rename = "B4_viscosity")]
    B4Viscosity,
    #[serde(rename = "B5_xpinn")]
    B5Xpinn,
    #[serde(rename = "B6_addpinn")]
    B6Addpinn,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::B1Nn,
        MethodId::B2Pinn,
        MethodId::B3Rar,
        MethodId::B4Viscosity,
        MethodId::B5Xpinn,
        MethodId::B6Addpinn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::B1Nn => "B1_nn",
            MethodId::B2Pinn => "B2_pinn",
            MethodId::B3Rar => "B3_rar",
            MethodId::B4Viscosity => "B4_viscosity",
            MethodId::B5Xpinn => "B5_xpinn",
            MethodId::B6Addpinn => "B6_addpinn",
        }
    }
}

impl std::fmt::Display for MethodId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        MethodId::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key || m.name()[..2].to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodSpec {
    pub id: MethodId,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub direction: Direction,
}

impl MethodSpec {
    pub fn new(id: MethodId) -> Self {
        Self { id, mode: Mode::ShockScreened, direction: Direction::Spatial }
    }

    pub fn addpinn(mode: Mode, direction: Direction) -> Self {
        Self { id: MethodId::B6Addpinn, mode, direction }
    }
}

/// Training hyperparameters. `Default` is the full protocol; [`Hyperparams::desk`]
/// is the reduced preset for single-core runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub epochs_total: usize,
    pub epochs_stage1: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub steplr_step: usize,
    pub steplr_gamma: f64,
    pub clip_norm: f64,
    pub batch_data: usize,
    /// Per-subdomain collocation batch is `max(batch_colloc_min, batch_colloc / n)`.
    pub batch_colloc: usize,
    pub batch_colloc_min: usize,
    pub n_colloc: usize,
    pub rar_period: usize,
    pub rar_candidates: usize,
    pub rar_added: usize,
    pub causal: CausalConfig,
    /// Epochs between refreshes of the causal weight table over the full pool.
    pub causal_refresh: usize,
    pub weights: LossWeights,
    pub decomposition: DecompositionConfig,
    pub warm_start: WarmStartConfig,
    pub interface: InterfaceConfig,
    pub eps_visc: f64,
    pub parent_arch: Architecture,
    pub child_arch: Architecture,
    /// Uniform factor on epoch counts, RAR period and StepLR step.
    pub scale: f64,
    /// Loss-history stride of the run log.
    pub log_every: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs_total: 20_000,
            epochs_stage1: 5_000,
            lr_stage1: 1e-3,
            lr_stage2: 1e-4,
            steplr_step: 5_000,
            steplr_gamma: 0.9,
            clip_norm: 5.0,
            batch_data: 4096,
            batch_colloc: 2048,
            batch_colloc_min: 512,
            n_colloc: 50_000,
            rar_period: 2_500,
            rar_candidates: 5_000,
            rar_added: 2_500,
            causal: CausalConfig::default(),
            causal_refresh: 1,
            weights: LossWeights::default(),
            decomposition: DecompositionConfig::default(),
            warm_start: WarmStartConfig::default(),
            interface: InterfaceConfig::default(),
            eps_visc: 0.1,
            parent_arch: Architecture::parent(),
            child_arch: Architecture::child(),
            scale: 1.0,
            log_every: 100,
        }
    }
}

impl Hyperparams {
    /// Reduced widths, batches and pools at scale 0.25; epoch schedule and
    /// every protocol threshold unchanged.
    pub fn desk() -> Self {
        Self {
            batch_data: 512,
            batch_colloc: 512,
            batch_colloc_min: 256,
            n_colloc: 8_000,
            rar_candidates: 1_000,
            rar_added: 500,
            causal_refresh: 25,
            parent_arch: Architecture { widths: vec![2, 64, 32, 32, 32, 1], fourier_sigma: 10.0 },
            child_arch: Architecture { widths: vec![2, 64, 32, 32, 1], fourier_sigma: 10.0 },
            scale: 0.25,
            log_every: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.epochs_total,
            self.epochs_stage1,
            self.steplr_step,
            self.batch_data,
            self.batch_colloc,
            self.n_colloc,
            self.rar_period,
            self.rar_candidates,
            self.causal_refresh,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidInput("hyperparameter counts must be positive".into()));
        }
        if self.epochs_stage1 >= self.epochs_total {
            return Err(Error::InvalidInput("epochs_stage1 must be below epochs_total".into()));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::InvalidInput(format!("scale factor {} not in (0, 1]", self.scale)));
        }
        if self.rar_added > self.rar_candidates {
            return Err(Error::InvalidInput("rar_added exceeds rar_candidates".into()));
        }
        self.causal.validate()?;
        self.parent_arch.validate()?;
        self.child_arch.validate()
    }

    fn scaled(&self, n: usize) -> usize {
        ((n as f64 * self.scale).round() as usize).max(1)
    }

    pub fn total_epochs(&self) -> usize {
        self.scaled(self.epochs_total)
    }

    pub fn split_epoch(&self) -> usize {
        self.scaled(self.epochs_stage1)
    }

    pub fn rar_every(&self) -> usize {
        self.scaled(self.rar_period)
    }

    pub fn steplr_every(&self) -> usize {
        self.scaled(self.steplr_step)
    }

    pub fn colloc_batch(&self, n_sub: usize) -> usize {
        self.batch_colloc_min.max(self.batch_colloc / n_sub.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Single,
    Coarse,
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub lr: f64,
    pub total: f64,
    pub data: f64,
    pub pde: Option<f64>,
    pub int: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionLog {
    pub decided: bool,
    #[serde(rename = "S")]
    pub indicator: f64,
    pub splits: Vec<f64>,
    pub decision: SplitDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceLog {
    pub orientation: Orientation,
    pub position: f64,
    pub lo: f64,
    pub hi: f64,
    pub shock_steps: usize,
    pub smooth_steps: usize,
    pub final_class: Option<InterfaceClass>,
    /// `(epoch, s)` samples.
    pub s_trajectory: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RarLog {
    pub epoch: usize,
    pub added: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    /// Smallest `|r|` among added points and largest among rejected ones, per subdomain.
    pub min_added: Vec<f64>,
    pub max_rejected: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartLog {
    pub initial_mse: Vec<f64>,
    pub final_mse: Vec<f64>,
    /// RMS gap between the piecewise children and the parent on fresh points.
    pub rms_gap: f64,
    /// Data+PDE loss of the last coarse epoch and total loss of the first refinement epoch.
    pub last_coarse_loss: f64,
    pub first_refine_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rel_l2: f64,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub method: MethodId,
    pub mode: Mode,
    pub direction: Direction,
    pub seed: u64,
    pub status: String,
    pub decomposition: Option<DecompositionLog>,
    pub losses: Vec<LossRecord>,
    pub interfaces: Vec<InterfaceLog>,
    pub warm_start: Option<WarmStartLog>,
    pub rar: Vec<RarLog>,
    pub n_subdomains: usize,
    pub collocation_final: usize,
    pub epochs: usize,
    pub time_s: f64,
    pub stage1_time_s: Option<f64>,
    pub eval: Option<EvalSummary>,
}

impl RunLog {
    fn new(method: &MethodSpec, seed: u64) -> Self {
        Self {
            method: method.id,
            mode: method.mode,
            direction: method.direction,
            seed,
            status: "running".into(),
            decomposition: None,
            losses: vec![],
            interfaces: vec![],
            warm_start: None,
            rar: vec![],
            n_subdomains: 1,
            collocation_final: 0,
            epochs: 0,
            time_s: 0.0,
            stage1_time_s: None,
            eval: None,
        }
    }
}

/// Physical extents used to build the residual coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub x_range_ft: f64,
    pub t_range_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub partition: Partition<f64>,
    /// Coarse network at the decision point (two-stage method only).
    pub coarse: Option<PinnNetwork<f64>>,
    pub log: RunLog,
}

/// Training result with everything that survives a failure.
#[derive(Debug)]
pub struct TrainRun {
    pub result: Result<Partition<f64>>,
    pub coarse: Option<PinnNetwork<f64>>,
    pub log: RunLog,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Coupling {
    None,
    AddPinn,
    Xpinn,
}

#[derive(Debug, Clone, Copy)]
struct StepConfig {
    stage: Stage,
    pde: Option<ResidualKind>,
    coupling: Coupling,
    schedule: StepLr,
    clip: Option<f64>,
    causal: bool,
    rar: bool,
}

struct Trainer<'a> {
    hyper: &'a Hyperparams,
    seed: u64,
    coeffs: NondimCoeffs<f64>,
    obs_pts: Array2<f64>,
    obs_u: Array1<f64>,
    partition: Partition<f64>,
    pools: Vec<Array2<f64>>,
    causal_w: Vec<Vec<f64>>,
    opt: Adam<f64>,
    /// First epoch of the current schedule.
    stage_start: usize,
    rar_rounds: usize,
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Data(usize),
    Pde(usize),
    IfaceLeft(usize),
    IfaceRight(usize),
}

/// XPINN coupling at shared samples: `mean (r_L - r_R)^2` plus the mean squared
/// deviation of both sides from their average.
pub fn xpinn_interface_term(
    left: &EvalBundle<f64>,
    right: &EvalBundle<f64>,
    coeffs: &NondimCoeffs<f64>,
) -> (f64, BundleAdjoint<f64>, BundleAdjoint<f64>) {
    let m = left.len().max(1) as f64;
    let rl = residual(left, coeffs, ResidualKind::Lwr).expect("first-order bundle");
    let rr = residual(right, coeffs, ResidualKind::Lwr).expect("first-order bundle");
    let dr = &rl - &rr;
    let du = &left.u - &right.u;
    // (u_L - avg)^2 + (u_R - avg)^2 = (u_L - u_R)^2 / 2
    let value = dr.iter().map(|v| v * v).sum::<f64>() / m + du.iter().map(|v| v * v / 2.0).sum::<f64>() / m;
    let g = dr.mapv(|v| 2.0 * v / m);
    let mut al = residual_adjoint(left, coeffs, ResidualKind::Lwr, &g);
    let mut ar = residual_adjoint(right, coeffs, ResidualKind::Lwr, &-&g);
    let gu = du.mapv(|v| v / m);
    al.accumulate(&BundleAdjoint { u: Some(gu.clone()), ..Default::default() });
    ar.accumulate(&BundleAdjoint { u: Some(-gu), ..Default::default() });
    (value, al, ar)
}

/// XPINN coupling of a whole partition, one sample set per interface; value only.
pub fn xpinn_interface_loss(partition: &Partition<f64>, samples: &[Array2<f64>], coeffs: &NondimCoeffs<f64>) -> f64 {
    partition
        .interfaces
        .iter()
        .zip(samples)
        .map(|(st, pts)| {
            let l = crate::autodiff::eval_with_input_derivs(&partition.nets[st.left], pts.view(), DerivOrder::First);
            let r = crate::autodiff::eval_with_input_derivs(&partition.nets[st.right], pts.view(), DerivOrder::First);
            xpinn_interface_term(&l, &r, coeffs).0
        })
        .sum()
}

/// Outcome of one refinement round on one subdomain pool.
#[derive(Debug, Clone, PartialEq)]
pub struct RarRound {
    pub added: Array2<f64>,
    pub min_added: f64,
    pub max_rejected: f64,
}

/// Draws `candidates` uniform points in `rect`, keeps the `added` with the
/// largest `|r|` (ties to the earlier candidate).
pub fn rar_select(
    net: &PinnNetwork<f64>,
    rect: &Rect,
    coeffs: &NondimCoeffs<f64>,
    kind: ResidualKind,
    candidates: usize,
    added: usize,
    seed: u64,
) -> Result<RarRound> {
    let pts = uniform_points(candidates, rect, &mut stream(seed, Purpose::Rar, 0));
    let order = if kind.needs_second() { DerivOrder::Second } else { DerivOrder::First };
    let b = crate::autodiff::eval_with_input_derivs(net, pts.view(), order);
    let r = residual(&b, coeffs, kind)?.mapv(f64::abs);
    Ok(top_k(&pts, &r, added))
}

/// Top-`k` rows of `pts` by `score`.
pub fn top_k(pts: &Array2<f64>, score: &Array1<f64>, k: usize) -> RarRound {
    let mut idx: Vec<usize> = (0..score.len()).collect();
    idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let k = k.min(idx.len());
    let chosen = &idx[..k];
    RarRound {
        added: pts.select(Axis(0), chosen),
        min_added: chosen.iter().map(|&i| score[i]).fold(f64::INFINITY, f64::min),
        max_rejected: idx[k..].iter().map(|&i| score[i]).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Refinement round over every subdomain: each pool grows by `added` points.
pub fn rar_refine(
    partition: &Partition<f64>,
    pools: &mut [Array2<f64>],
    coeffs: &NondimCoeffs<f64>,
    kind: ResidualKind,
    candidates: usize,
    added: usize,
    seed: u64,
) -> Result<Vec<RarRound>> {
    let mut out = Vec::with_capacity(pools.len());
    for (k, rect) in partition.rects().iter().enumerate() {
        let round = rar_select(&partition.nets[k], rect, coeffs, kind, candidates, added, derive_seed(seed, Purpose::Rar, k as u64))?;
        let mut grown = pools[k].clone();
        grown
            .append(Axis(0), round.added.view())
            .map_err(|e| Error::Shape(e.to_string()))?;
        pools[k] = grown;
        out.push(round);
    }
    Ok(out)
}

/// Stage-2 pool: a fresh Latin hypercube per subdomain, sized by area.
fn allocate_pools(rects: &[Rect], total: usize, seed: u64, round: u64) -> Result<Vec<Array2<f64>>> {
    rects
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let n = ((total as f64 * r.area()).round() as usize).max(1);
            latin_hypercube(n, r, &mut stream(seed, Purpose::Collocation, round * 64 + k as u64))
        })
        .collect()
}

impl<'a> Trainer<'a> {
    fn new(hyper: &'a Hyperparams, seed: u64, coeffs: NondimCoeffs<f64>, obs: &ObservationSet, partition: Partition<f64>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Empty("training needs at least one observation"));
        }
        let (obs_pts, obs_u) = obs.normalized();
        let pools = allocate_pools(&partition.rects(), hyper.n_colloc, seed, 0)?;
        let opt = Adam::for_networks(&partition.nets);
        let causal_w = pools.iter().map(|p| vec![1.0; p.nrows()]).collect();
        Ok(Self { hyper, seed, coeffs, obs_pts, obs_u, partition, pools, causal_w, opt, stage_start: 0, rar_rounds: 0 })
    }

    fn rebuild(&mut self, partition: Partition<f64>, pools: Vec<Array2<f64>>, stage_start: usize) {
        self.opt = Adam::for_networks(&partition.nets);
        self.causal_w = pools.iter().map(|p| vec![1.0; p.nrows()]).collect();
        self.partition = partition;
        self.pools = pools;
        self.stage_start = stage_start;
    }

    fn refresh_causal(&mut self, kind: ResidualKind) -> Result<()> {
        let order = if kind.needs_second() { DerivOrder::Second } else { DerivOrder::First };
        for (k, pool) in self.pools.iter().enumerate() {
            let b = crate::autodiff::eval_with_input_derivs(&self.partition.nets[k], pool.view(), order);
            let r = residual(&b, &self.coeffs, kind)?;
            let times = pool.column(1).to_vec();
            self.causal_w[k] = causal_point_weights(&times, r.as_slice().expect("contiguous"), &self.hyper.causal)?.0;
        }
        Ok(())
    }

    fn step(&mut self, epoch: usize, cfg: &StepConfig) -> Result<LossRecord> {
        let n_sub = self.partition.n_subdomains();
        let local = epoch - self.stage_start;
        let lr = cfg.schedule.lr(local);

        if let (true, Some(kind)) = (cfg.causal, cfg.pde) {
            if local % self.hyper.causal_refresh == 0 {
                self.refresh_causal(kind)?;
            }
        }

        // owned batch arrays first; requests borrow them
        let idx = batch_indices(self.obs_pts.nrows(), self.hyper.batch_data, &mut stream(self.seed, Purpose::DataBatch, epoch as u64));
        let mut groups = vec![Vec::new(); n_sub];
        for i in idx {
            groups[self.partition.subdomain_of(self.obs_pts[[i, 0]], self.obs_pts[[i, 1]])].push(i);
        }
        let data: Vec<(usize, Array2<f64>, Array1<f64>)> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| !g.is_empty())
            .map(|(k, g)| (k, self.obs_pts.select(Axis(0), g), self.obs_u.select(Axis(0), g)))
            .collect();

        let mut colloc: Vec<(usize, Array2<f64>, Option<Array1<f64>>)> = Vec::new();
        if cfg.pde.is_some() {
            let b = self.hyper.colloc_batch(n_sub);
            for k in 0..n_sub {
                let mut rng = stream(self.seed, Purpose::CollocBatch, (epoch * 64 + k) as u64);
                let sel = batch_indices(self.pools[k].nrows(), b, &mut rng);
                let w = cfg.causal.then(|| Array1::from_iter(sel.iter().map(|&i| self.causal_w[k][i])));
                colloc.push((k, self.pools[k].select(Axis(0), &sel), w));
            }
        }

        let mut iface_pts: Vec<Array2<f64>> = Vec::new();
        if cfg.coupling != Coupling::None {
            for (i, st) in self.partition.interfaces.iter().enumerate() {
                iface_pts.push(sample_interface(st, self.hyper.interface.n_int, interface_seed(self.seed, i), epoch as u64));
            }
        }

        let pde_order = match cfg.pde {
            Some(k) if k.needs_second() => DerivOrder::Second,
            _ => DerivOrder::First,
        };
        let mut requests = Vec::new();
        let mut roles = Vec::new();
        for (j, (k, pts, _)) in data.iter().enumerate() {
            requests.push(EvalRequest { net: *k, points: pts.view(), order: DerivOrder::Value });
            roles.push(Role::Data(j));
        }
        for (j, (k, pts, _)) in colloc.iter().enumerate() {
            requests.push(EvalRequest { net: *k, points: pts.view(), order: pde_order });
            roles.push(Role::Pde(j));
        }
        for (i, pts) in iface_pts.iter().enumerate() {
            let st = &self.partition.interfaces[i];
            let order = match cfg.coupling {
                Coupling::Xpinn => DerivOrder::First,
                _ => required_order(st.orientation),
            };
            requests.push(EvalRequest { net: st.left, points: pts.view(), order });
            roles.push(Role::IfaceLeft(i));
            requests.push(EvalRequest { net: st.right, points: pts.view(), order });
            roles.push(Role::IfaceRight(i));
        }

        let w = self.hyper.weights;
        let coeffs = self.coeffs;
        let icfg = self.hyper.interface;
        let interfaces = self.partition.interfaces.clone();
        let n_iface = iface_pts.len();
        let mut parts = LossParts::default();
        let mut classes: Vec<Option<InterfaceClass>> = vec![None; n_iface];

        let loss = |bundles: &[EvalBundle<f64>]| {
            let mut adj: Vec<BundleAdjoint<f64>> = vec![BundleAdjoint::default(); bundles.len()];
            // data: one mean over the whole batch
            let n_data: usize = data.iter().map(|d| d.2.len()).sum();
            let mut data_sum = 0.0;
            let mut pde_batches = Vec::new();
            let mut pde_slots = Vec::new();
            let mut left_of = vec![usize::MAX; n_iface];
            let mut right_of = vec![usize::MAX; n_iface];
            for (r, role) in roles.iter().enumerate() {
                match *role {
                    Role::Data(j) => {
                        let (v, g) = data_loss_adjoint(bundles[r].u.view(), data[j].2.view()).expect("non-empty group");
                        let share = data[j].2.len() as f64 / n_data as f64;
                        data_sum += v * share;
                        adj[r].u = Some(g * (share * w.w_data));
                    }
                    Role::Pde(j) => {
                        let kind = cfg.pde.expect("pde role without residual");
                        pde_batches.push((residual(&bundles[r], &coeffs, kind).expect("order matches kind"), colloc[j].2.clone()));
                        pde_slots.push(r);
                    }
                    Role::IfaceLeft(i) => left_of[i] = r,
                    Role::IfaceRight(i) => right_of[i] = r,
                }
            }
            parts.data = data_sum;
            let mut total = w.w_data * data_sum;
            if let Some(kind) = cfg.pde {
                let (v, dr) = pde_loss_adjoint(&pde_batches).expect("one batch per subdomain");
                parts.pde = Some(v);
                total += w.w_pde * v;
                for (slot, g) in pde_slots.iter().zip(dr) {
                    adj[*slot] = residual_adjoint(&bundles[*slot], &coeffs, kind, &(g * w.w_pde));
                }
            }
            let mut shock_grads = vec![0.0; n_iface];
            if n_iface > 0 {
                let mut int = 0.0;
                for i in 0..n_iface {
                    let (l, r) = (left_of[i], right_of[i]);
                    let (value, al, ar) = match cfg.coupling {
                        Coupling::Xpinn => xpinn_interface_term(&bundles[l], &bundles[r], &coeffs),
                        _ => {
                            let term = interface_term(&interfaces[i], &bundles[l], &bundles[r], &icfg);
                            classes[i] = Some(term.class);
                            shock_grads[i] = w.w_int * term.ds;
                            (term.value, term.left, term.right)
                        }
                    };
                    int += value;
                    adj[l].accumulate(&al.scaled(w.w_int));
                    adj[r].accumulate(&ar.scaled(w.w_int));
                }
                parts.int = Some(int);
                total += w.w_int * int;
            }
            LossOutput { value: total, adjoints: adj, shock_grads }
        };

        let net_refs: Vec<&PinnNetwork<f64>> = self.partition.nets.iter().collect();
        let out = loss_gradients(&net_refs, &requests, loss).map_err(|e| match e {
            Error::NonFinite(reason) => Error::Diverged { epoch, reason },
            other => other,
        })?;
        let mut grads = out.nets;
        if let Some(max) = cfg.clip {
            clip_gradients(&mut grads, max);
        }
        self.opt.step_networks(&mut self.partition.nets, &grads, lr)?;
        for (i, st) in self.partition.interfaces.iter_mut().enumerate() {
            st.last_class = classes[i];
            if st.orientation == Orientation::Spatial && classes[i] == Some(InterfaceClass::Shock) {
                st.s -= icfg.shock_lr * out.shock_speeds[i];
            }
        }
        Ok(LossRecord { epoch, stage: cfg.stage, lr, total: out.value, data: parts.data, pde: parts.pde, int: parts.int })
    }

    fn rar_round(&mut self, epoch: usize, kind: ResidualKind, log: &mut RunLog) -> Result<()> {
        self.rar_rounds += 1;
        let rounds = rar_refine(
            &self.partition,
            &mut self.pools,
            &self.coeffs,
            kind,
            self.hyper.rar_candidates,
            self.hyper.rar_added,
            derive_seed(self.seed, Purpose::Rar, 1000 + self.rar_rounds as u64),
        )?;
        for (k, pool) in self.pools.iter().enumerate() {
            self.causal_w[k].resize(pool.nrows(), 1.0);
        }
        log.rar.push(RarLog {
            epoch,
            added: rounds.iter().map(|r| r.added.nrows()).collect(),
            pool_sizes: self.pools.iter().map(|p| p.nrows()).collect(),
            min_added: rounds.iter().map(|r| r.min_added).collect(),
            max_rejected: rounds.iter().map(|r| r.max_rejected).collect(),
        });
        Ok(())
    }

    /// Runs epochs `[from, to)` under one configuration.
    fn run(&mut self, from: usize, to: usize, cfg: &StepConfig, log: &mut RunLog, first: &mut Option<f64>) -> Result<Option<LossRecord>> {
        let mut last = None;
        let every = self.hyper.log_every.max(1);
        let rar_every = self.hyper.rar_every();
        for epoch in from..to {
            if cfg.rar && epoch > from && (epoch - from) % rar_every == 0 {
                self.rar_round(epoch, cfg.pde.unwrap_or(ResidualKind::Lwr), log)?;
            }
            let rec = self.step(epoch, cfg)?;
            if first.is_none() {
                *first = Some(rec.total);
            }
            if epoch == from || epoch + 1 == to || (epoch - from) % every == 0 {
                log.losses.push(rec);
                for (i, st) in self.partition.interfaces.iter().enumerate() {
                    if let Some(l) = log.interfaces.get_mut(i) {
                        l.s_trajectory.push((epoch, st.s));
                    }
                }
            }
            for (i, st) in self.partition.interfaces.iter().enumerate() {
                if let Some(l) = log.interfaces.get_mut(i) {
                    match st.last_class {
                        Some(InterfaceClass::Shock) => l.shock_steps += 1,
                        Some(InterfaceClass::Smooth) => l.smooth_steps += 1,
                        None => {}
                    }
                    l.final_class = st.last_class;
                }
            }
            log.epochs = epoch + 1;
            last = Some(rec);
        }
        Ok(last)
    }
}

fn interface_logs(p: &Partition<f64>) -> Vec<InterfaceLog> {
    p.interfaces
        .iter()
        .map(|st| InterfaceLog {
            orientation: st.orientation,
            position: st.position,
            lo: st.lo,
            hi: st.hi,
            shock_steps: 0,
            smooth_steps: 0,
            final_class: None,
            s_trajectory: vec![],
        })
        .collect()
}

/// RMS difference between a partition and a single network on `n` uniform points.
pub fn rms_gap(partition: &Partition<f64>, parent: &PinnNetwork<f64>, n: usize, seed: u64) -> f64 {
    let pts = uniform_points(n, &Rect::UNIT, &mut stream(seed, Purpose::Eval, 1));
    let a = partition.predict_batch(pts.view());
    let b = parent.forward_batch(pts.view());
    ((&a - &b).mapv(|v| v * v).sum() / n as f64).sqrt()
}

/// Trains `method`; the log is returned even when training fails.
pub fn train_with_log(method: &MethodSpec, obs: &ObservationSet, geometry: Geometry, hyper: &Hyperparams, seed: u64) -> TrainRun {
    let mut log = RunLog::new(method, seed);
    let mut coarse = None;
    let start = Instant::now();
    let result = train_inner(method, obs, geometry, hyper, seed, &mut log, &mut coarse, start);
    log.time_s = start.elapsed().as_secs_f64();
    log.status = match &result {
        Ok(_) => "completed".into(),
        Err(e) => format!("failed: {e}"),
    };
    TrainRun { result, coarse, log }
}

pub fn train(method: &MethodSpec, obs: &ObservationSet, geometry: Geometry, hyper: &Hyperparams, seed: u64) -> Result<TrainOutcome> {
    let run = train_with_log(method, obs, geometry, hyper, seed);
    Ok(TrainOutcome { partition: run.result?, coarse: run.coarse, log: run.log })
}

#[allow(clippy::too_many_arguments)]
fn train_inner(
    method: &MethodSpec,
    obs: &ObservationSet,
    geometry: Geometry,
    hyper: &Hyperparams,
    seed: u64,
    log: &mut RunLog,
    coarse_out: &mut Option<PinnNetwork<f64>>,
    start: Instant,
) -> Result<Partition<f64>> {
    hyper.validate()?;
    let coeffs = nondim_coeffs(&obs.stats, geometry.x_range_ft, geometry.t_range_s)?;
    let total = hyper.total_epochs();
    let split = hyper.split_epoch();
    let constant = StepLr::constant(hyper.lr_stage1);
    let decaying = |base: f64| StepLr { base, step: hyper.steplr_every(), gamma: hyper.steplr_gamma };
    let parent = || PinnNetwork::init(&hyper.parent_arch, derive_seed(seed, Purpose::Init, 0));
    let mut first = None;

    let single = |pde: Option<ResidualKind>, rar: bool| StepConfig {
        stage: Stage::Single,
        pde,
        coupling: Coupling::None,
        schedule: constant,
        clip: None,
        causal: false,
        rar,
    };
    let cfg = match method.id {
        MethodId::B1Nn => Some(single(None, false)),
        MethodId::B2Pinn => Some(single(Some(ResidualKind::Lwr), false)),
        MethodId::B3Rar => Some(single(Some(ResidualKind::Lwr), true)),
        MethodId::B4Viscosity => Some(single(Some(ResidualKind::Viscous { eps: hyper.eps_visc }), false)),
        _ => None,
    };
    if let Some(cfg) = cfg {
        let mut tr = Trainer::new(hyper, seed, coeffs, obs, Partition::single(parent()?))?;
        tr.run(0, total, &cfg, log, &mut first)?;
        log.collocation_final = if cfg.pde.is_some() { tr.pools.iter().map(|p| p.nrows()).sum() } else { 0 };
        return Ok(tr.partition);
    }

    if method.id == MethodId::B5Xpinn {
        let nets = (0..4)
            .map(|k| PinnNetwork::init(&hyper.child_arch, derive_seed(seed, Purpose::Init, 10 + k)))
            .collect::<Result<Vec<_>>>()?;
        let p = Partition::grid(Direction::Spacetime, vec![0.5], vec![0.5], nets)?;
        log.n_subdomains = 4;
        log.interfaces = interface_logs(&p);
        let mut tr = Trainer::new(hyper, seed, coeffs, obs, p)?;
        let cfg = StepConfig {
            stage: Stage::Single,
            pde: Some(ResidualKind::Lwr),
            coupling: Coupling::Xpinn,
            schedule: decaying(hyper.lr_stage1),
            clip: Some(hyper.clip_norm),
            causal: false,
            rar: false,
        };
        tr.run(0, total, &cfg, log, &mut first)?;
        log.collocation_final = tr.pools.iter().map(|p| p.nrows()).sum();
        return Ok(tr.partition);
    }

    // two-stage method
    let coarse_net = parent()?;
    let mut tr = Trainer::new(hyper, seed, coeffs, obs, Partition::single(coarse_net))?;
    let coarse = StepConfig {
        stage: Stage::Coarse,
        pde: Some(ResidualKind::Lwr),
        coupling: Coupling::None,
        schedule: constant,
        clip: None,
        causal: true,
        rar: false,
    };
    let last = tr.run(0, split, &coarse, log, &mut first)?;
    log.stage1_time_s = Some(start.elapsed().as_secs_f64());
    *coarse_out = Some(tr.partition.nets[0].clone());

    let indicator = decomposition::shock_indicator(obs)?;
    let (decision, _, _) = decomposition::decide(indicator, &tr.partition, &coeffs, method.mode, method.direction, &hyper.decomposition)?;
    log.decomposition = Some(DecompositionLog {
        decided: decision.decomposed,
        indicator,
        splits: match method.direction {
            Direction::Temporal => decision.t_splits.clone(),
            _ => decision.x_splits.clone(),
        },
        decision: decision.clone(),
    });

    let refine = StepConfig {
        stage: Stage::Refine,
        pde: Some(ResidualKind::Lwr),
        coupling: Coupling::None,
        schedule: decaying(hyper.lr_stage2),
        clip: Some(hyper.clip_norm),
        causal: false,
        rar: true,
    };
    let last_coarse = last.map(|r| r.total).unwrap_or(f64::NAN);
    if decision.decomposed {
        let parent_net = tr.partition.nets[0].clone();
        let (children, report) = create_children(&parent_net, &decision, &hyper.child_arch, &hyper.warm_start, seed)?;
        let gap = rms_gap(&children, &parent_net, 1000, seed);
        let pools = allocate_pools(&children.rects(), hyper.n_colloc, seed, 1)?;
        log.n_subdomains = children.n_subdomains();
        log.interfaces = interface_logs(&children);
        tr.rebuild(children, pools, split);
        let mut first_refine = None;
        let cfg = StepConfig { coupling: Coupling::AddPinn, ..refine };
        tr.run(split, total, &cfg, log, &mut first_refine)?;
        log.warm_start = Some(WarmStartLog {
            initial_mse: report.initial_mse,
            final_mse: report.final_mse,
            rms_gap: gap,
            last_coarse_loss: last_coarse,
            first_refine_loss: first_refine,
        });
    } else {
        // single-domain fallback keeps the coarse network and its pool
        let p = tr.partition.clone();
        let pools = tr.pools.clone();
        tr.rebuild(p, pools, split);
        let mut first_refine = None;
        tr.run(split, total, &refine, log, &mut first_refine)?;
    }
    log.collocation_final = tr.pools.iter().map(|p| p.nrows()).sum();
    Ok(tr.partition)
}
