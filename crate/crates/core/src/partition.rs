//! Rectangular partitions of the normalized domain and the piecewise predictor.
//!
//! Subdomains form a tensor grid of `x_splits.len() + 1` columns and
//! `t_splits.len() + 1` rows, indexed `ix * n_t + it`. Membership is half-open
//! `[left, right)` on both axes with the last cell closed, so every point of
//! `[0, 1]^2` belongs to exactly one subdomain.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interfaces::{InterfaceState, Orientation};
use crate::network::PinnNetwork;
use crate::sampling::Rect;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Spatial,
    Temporal,
    Spacetime,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Direction::Spatial),
            "temporal" => Ok(Direction::Temporal),
            "spacetime" => Ok(Direction::Spacetime),
            other => Err(Error::Parse(format!("unknown direction '{other}'"))),
        }
    }
}

/// Number of splits strictly left of or equal to `v`.
fn locate(splits: &[f64], v: f64) -> usize {
    splits.partition_point(|&s| s <= v)
}

fn check_splits(splits: &[f64], axis: &str) -> Result<()> {
    if splits.iter().any(|&s| !(s > 0.0 && s < 1.0)) || splits.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!(
            "{axis} splits must be strictly increasing inside (0, 1): {splits:?}"
        )));
    }
    Ok(())
}

fn edges(splits: &[f64]) -> Vec<f64> {
    let mut e = Vec::with_capacity(splits.len() + 2);
    e.push(0.0);
    e.extend_from_slice(splits);
    e.push(1.0);
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub direction: Direction,
    pub x_splits: Vec<f64>,
    pub t_splits: Vec<f64>,
    pub nets: Vec<PinnNetwork<T>>,
    pub interfaces: Vec<InterfaceState>,
}

impl<T: Scalar> Partition<T> {
    pub fn single(net: PinnNetwork<T>) -> Self {
        Self {
            direction: Direction::Spatial,
            x_splits: vec![],
            t_splits: vec![],
            nets: vec![net],
            interfaces: vec![],
        }
    }

    /// Grid partition; interfaces are derived from the split layout with every
    /// shock speed starting at zero.
    pub fn grid(direction: Direction, x_splits: Vec<f64>, t_splits: Vec<f64>, nets: Vec<PinnNetwork<T>>) -> Result<Self> {
        check_splits(&x_splits, "x")?;
        check_splits(&t_splits, "t")?;
        let n = (x_splits.len() + 1) * (t_splits.len() + 1);
        if nets.len() != n {
            return Err(Error::InvalidInput(format!("{} networks for {n} subdomains", nets.len())));
        }
        let mut p = Self { direction, x_splits, t_splits, nets, interfaces: vec![] };
        p.interfaces = p.build_interfaces();
        Ok(p)
    }

    fn build_interfaces(&self) -> Vec<InterfaceState> {
        let xe = edges(&self.x_splits);
        let te = edges(&self.t_splits);
        let n_t = te.len() - 1;
        let mut out = Vec::new();
        for (i, &x) in self.x_splits.iter().enumerate() {
            for j in 0..n_t {
                out.push(InterfaceState::new(Orientation::Spatial, x, te[j], te[j + 1], i * n_t + j, (i + 1) * n_t + j));
            }
        }
        for (j, &t) in self.t_splits.iter().enumerate() {
            for i in 0..xe.len() - 1 {
                out.push(InterfaceState::new(Orientation::Temporal, t, xe[i], xe[i + 1], i * n_t + j, i * n_t + j + 1));
            }
        }
        out
    }

    pub fn n_subdomains(&self) -> usize {
        self.nets.len()
    }

    pub fn is_single(&self) -> bool {
        self.nets.len() == 1
    }

    pub fn rects(&self) -> Vec<Rect> {
        let xe = edges(&self.x_splits);
        let te = edges(&self.t_splits);
        let mut out = Vec::with_capacity(self.nets.len());
        for xw in xe.windows(2) {
            for tw in te.windows(2) {
                out.push(Rect { x0: xw[0], x1: xw[1], t0: tw[0], t1: tw[1] });
            }
        }
        out
    }

    pub fn subdomain_of(&self, x: f64, t: f64) -> usize {
        locate(&self.x_splits, x) * (self.t_splits.len() + 1) + locate(&self.t_splits, t)
    }

    /// Row indices of `points` owned by each subdomain, in input order.
    pub fn group_points(&self, points: ArrayView2<f64>) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.nets.len()];
        for (i, row) in points.outer_iter().enumerate() {
            groups[self.subdomain_of(row[0], row[1])].push(i);
        }
        groups
    }

    pub fn predict(&self, x: f64, t: f64) -> T {
        self.nets[self.subdomain_of(x, t)].forward(T::lit(x), T::lit(t))
    }

    /// One subnet evaluation per point.
    pub fn predict_batch(&self, points: ArrayView2<f64>) -> Array1<T> {
        let mut out = Array1::zeros(points.nrows());
        for (k, idx) in self.group_points(points).iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let sub = points.select(Axis(0), idx).mapv(T::lit);
            let u = self.nets[k].forward_batch(sub.view());
            for (&i, &v) in idx.iter().zip(&u) {
                out[i] = v;
            }
        }
        out
    }

    /// Prediction on the `n_cells x n_steps` node grid.
    pub fn predict_grid(&self, n_cells: usize, n_steps: usize) -> Array2<f64> {
        let pts = crate::field::grid_points(n_cells, n_steps);
        let u = self.predict_batch(pts.view());
        Array2::from_shape_fn((n_cells, n_steps), |(c, k)| u[c * n_steps + k].as_f64())
    }

    pub fn trainable_parameters(&self) -> usize {
        self.nets.iter().map(|n| n.trainable_parameters()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use ndarray::array;

    fn net(seed: u64) -> PinnNetwork<f64> {
        PinnNetwork::init(&Architecture::new(vec![2, 8, 4, 1], 2.0).unwrap(), seed).unwrap()
    }

    #[test]
    fn single_domain_reduces_to_forward() {
        let n = net(1);
        let p = Partition::single(n.clone());
        assert_eq!(p.predict(0.3, 0.7), n.forward(0.3, 0.7));
        assert!(p.interfaces.is_empty());
    }

    #[test]
    fn split_point_goes_right() {
        let p = Partition::grid(Direction::Spatial, vec![0.5], vec![], vec![net(1), net(2)]).unwrap();
        assert_eq!(p.subdomain_of(0.5, 0.2), 1);
        assert_eq!(p.subdomain_of(0.4999, 0.2), 0);
        assert_eq!(p.subdomain_of(1.0, 1.0), 1);
        assert_eq!(p.predict(0.5, 0.2), net(2).forward(0.5, 0.2));
        assert_eq!(p.interfaces.len(), 1);
        assert_eq!(p.interfaces[0].s, 0.0);
    }

    #[test]
    fn identical_subnets_are_continuous() {
        let p = Partition::grid(Direction::Spatial, vec![0.4], vec![], vec![net(3), net(3)]).unwrap();
        let l = p.predict(0.4 - 1e-9, 0.5);
        let r = p.predict(0.4, 0.5);
        assert!((l - r).abs() < 1e-6);
    }

    #[test]
    fn spacetime_topology() {
        let nets = (0..4).map(net).collect();
        let p = Partition::grid(Direction::Spacetime, vec![0.5], vec![0.5], nets).unwrap();
        assert_eq!(p.n_subdomains(), 4);
        assert_eq!(p.interfaces.len(), 4);
        let spatial = p.interfaces.iter().filter(|i| i.orientation == Orientation::Spatial).count();
        assert_eq!(spatial, 2);
        let total: f64 = p.rects().iter().map(|r| r.area()).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(p.subdomain_of(0.7, 0.2), 2);
        assert_eq!(p.subdomain_of(0.2, 0.7), 1);
    }

    #[test]
    fn batch_prediction_matches_pointwise() {
        let p = Partition::grid(Direction::Temporal, vec![], vec![0.3], vec![net(5), net(6)]).unwrap();
        let pts = array![[0.1, 0.1], [0.9, 0.3], [0.5, 0.95], [0.2, 0.29]];
        let b = p.predict_batch(pts.view());
        for i in 0..4 {
            assert!((b[i] - p.predict(pts[[i, 0]], pts[[i, 1]])).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_layouts_rejected() {
        assert!(Partition::grid(Direction::Spatial, vec![0.5], vec![], vec![net(1)]).is_err());
        assert!(Partition::grid(Direction::Spatial, vec![0.6, 0.4], vec![], vec![net(1), net(2), net(3)]).is_err());
        assert!(Partition::grid(Direction::Spatial, vec![1.0], vec![], vec![net(1), net(2)]).is_err());
        assert!("diagonal".parse::<Direction>().is_err());
    }
}
