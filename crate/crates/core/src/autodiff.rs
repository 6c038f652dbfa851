//! Exact input derivatives and parameter gradients for [`PinnNetwork`].
//!
//! Input derivatives are carried forward as extra "streams" stacked under the
//! value rows of every layer: `[h; dh/dx; dh/dt; d2h/dx2]`, so each dense layer
//! is a single matrix product regardless of the derivative order. Parameter
//! gradients are obtained by one reverse sweep over the recorded streams, which
//! makes gradients of losses built from `du/dx`, `du/dt` and `d2u/dx2` exact.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::network::PinnNetwork;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivOrder {
    /// `u` only.
    Value,
    /// `u`, `du/dx`, `du/dt`.
    First,
    /// `u`, `du/dx`, `du/dt`, `d2u/dx2`.
    Second,
}

impl DerivOrder {
    pub fn streams(self) -> usize {
        match self {
            DerivOrder::Value => 1,
            DerivOrder::First => 3,
            DerivOrder::Second => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle<T> {
    pub u: Array1<T>,
    pub du_dx: Option<Array1<T>>,
    pub du_dt: Option<Array1<T>>,
    pub d2u_dx2: Option<Array1<T>>,
}

impl<T: Scalar> EvalBundle<T> {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn dx(&self) -> &Array1<T> {
        self.du_dx.as_ref().expect("bundle evaluated without first derivatives")
    }

    pub fn dt(&self) -> &Array1<T> {
        self.du_dt.as_ref().expect("bundle evaluated without first derivatives")
    }
}

/// Adjoint of a loss with respect to the entries of one [`EvalBundle`].
/// Missing streams are treated as zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BundleAdjoint<T> {
    pub u: Option<Array1<T>>,
    pub du_dx: Option<Array1<T>>,
    pub du_dt: Option<Array1<T>>,
    pub d2u_dx2: Option<Array1<T>>,
}

impl<T: Scalar> BundleAdjoint<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: Some(Array1::zeros(n)),
            du_dx: Some(Array1::zeros(n)),
            du_dt: Some(Array1::zeros(n)),
            d2u_dx2: Some(Array1::zeros(n)),
        }
    }

    pub fn scaled(mut self, w: T) -> Self {
        for a in [&mut self.u, &mut self.du_dx, &mut self.du_dt, &mut self.d2u_dx2].into_iter().flatten() {
            a.mapv_inplace(|v| v * w);
        }
        self
    }

    /// Accumulates `other` into `self`, allocating streams as needed.
    pub fn accumulate(&mut self, other: &BundleAdjoint<T>) {
        fn add<T: Scalar>(dst: &mut Option<Array1<T>>, src: &Option<Array1<T>>) {
            if let Some(s) = src {
                match dst {
                    Some(d) => *d += s,
                    None => *dst = Some(s.clone()),
                }
            }
        }
        add(&mut self.u, &other.u);
        add(&mut self.du_dx, &other.du_dx);
        add(&mut self.du_dt, &other.du_dt);
        add(&mut self.d2u_dx2, &other.d2u_dx2);
    }
}

/// Gradients mirroring the dense layers of a network. The Fourier matrix has
/// no entry here: it is never differentiated.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(net: &PinnNetwork<T>) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, w: T) {
        self.weights.iter_mut().for_each(|a| a.mapv_inplace(|v| v * w));
        self.biases.iter_mut().for_each(|a| a.mapv_inplace(|v| v * w));
    }

    pub fn norm_sq(&self) -> T {
        let w: T = self.weights.iter().flat_map(|a| a.iter()).map(|&v| v * v).sum();
        let b: T = self.biases.iter().flat_map(|a| a.iter()).map(|&v| v * v).sum();
        w + b
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flat_map(|a| a.iter()).all(|v| v.is_finite())
            && self.biases.iter().flat_map(|a| a.iter()).all(|v| v.is_finite())
    }

    /// Flat view in the same order as [`params_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("contiguous gradient"));
            out.push(b.as_slice().expect("contiguous gradient"));
        }
        out
    }
}

/// Mutable trainable parameter arrays of a network, weights then bias per layer.
pub fn params_mut<T: Scalar>(net: &mut PinnNetwork<T>) -> Vec<&mut [T]> {
    let mut out = Vec::with_capacity(2 * net.layers.len());
    for layer in &mut net.layers {
        out.push(layer.weight.as_slice_mut().expect("contiguous weight"));
        out.push(layer.bias.as_slice_mut().expect("contiguous bias"));
    }
    out
}

/// Recorded streams of one evaluation, needed for the reverse sweep.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    order: DerivOrder,
    n: usize,
    /// Stacked input streams of every dense layer.
    inputs: Vec<Array2<T>>,
    /// Stacked pre-activation streams of every hidden layer.
    pre: Vec<Array2<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn order(&self) -> DerivOrder {
        self.order
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn embedding_streams<T: Scalar>(net: &PinnNetwork<T>, points: ArrayView2<T>, order: DerivOrder) -> Array2<T> {
    let n = points.nrows();
    let d_e = net.embedding_dim();
    let k = order.streams();
    let phase = points.dot(&net.fourier.t());
    let sin = phase.mapv(T::sin);
    let cos = phase.mapv(T::cos);
    let mut out = Array2::zeros((k * n, 2 * d_e));
    out.slice_mut(s![..n, ..d_e]).assign(&sin);
    out.slice_mut(s![..n, d_e..]).assign(&cos);
    if k >= 3 {
        let wx = net.fourier.column(0);
        let wt = net.fourier.column(1);
        out.slice_mut(s![n..2 * n, ..d_e]).assign(&(&cos * &wx));
        out.slice_mut(s![n..2 * n, d_e..]).assign(&(&sin * &wx).mapv(|v| -v));
        out.slice_mut(s![2 * n..3 * n, ..d_e]).assign(&(&cos * &wt));
        out.slice_mut(s![2 * n..3 * n, d_e..]).assign(&(&sin * &wt).mapv(|v| -v));
        if k == 4 {
            let wx2 = wx.mapv(|v| -v * v);
            out.slice_mut(s![3 * n.., ..d_e]).assign(&(&sin * &wx2));
            out.slice_mut(s![3 * n.., d_e..]).assign(&(&cos * &wx2));
        }
    }
    out
}

/// Output streams and the tape for a later [`backward`] call.
pub fn forward_with_tape<T: Scalar>(
    net: &PinnNetwork<T>,
    points: ArrayView2<T>,
    order: DerivOrder,
) -> (EvalBundle<T>, Tape<T>) {
    let n = points.nrows();
    let k = order.streams();
    let last = net.layers.len() - 1;
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut pre = Vec::with_capacity(last);
    let mut h = embedding_streams(net, points, order);
    for (l, layer) in net.layers.iter().enumerate() {
        let mut z = h.dot(&layer.weight);
        {
            let mut val = z.slice_mut(s![..n, ..]);
            val += &layer.bias;
        }
        inputs.push(h);
        if l == last {
            h = z;
            break;
        }
        let mut next = Array2::zeros(z.raw_dim());
        let act = z.slice(s![..n, ..]).mapv(T::tanh);
        if k >= 3 {
            let sech2 = act.mapv(|a| T::one() - a * a);
            for j in 1..3 {
                let mut dst = next.slice_mut(s![j * n..(j + 1) * n, ..]);
                dst.assign(&(&sech2 * &z.slice(s![j * n..(j + 1) * n, ..])));
            }
            if k == 4 {
                let two = T::lit(2.0);
                let zx = z.slice(s![n..2 * n, ..]);
                let zxx = z.slice(s![3 * n.., ..]);
                Zip::from(next.slice_mut(s![3 * n.., ..]))
                    .and(&act)
                    .and(&sech2)
                    .and(zx)
                    .and(zxx)
                    .for_each(|o, &a, &sc, &dx, &dxx| *o = sc * dxx - two * a * sc * dx * dx);
            }
        }
        next.slice_mut(s![..n, ..]).assign(&act);
        pre.push(z);
        h = next;
    }
    let out = h.index_axis_move(Axis(1), 0);
    let stream = |j: usize| out.slice(s![j * n..(j + 1) * n]).to_owned();
    let bundle = EvalBundle {
        u: stream(0),
        du_dx: (k >= 3).then(|| stream(1)),
        du_dt: (k >= 3).then(|| stream(2)),
        d2u_dx2: (k == 4).then(|| stream(3)),
    };
    (bundle, Tape { order, n, inputs, pre })
}

/// `u` and the requested input derivatives at every point.
pub fn eval_with_input_derivs<T: Scalar>(
    net: &PinnNetwork<T>,
    points: ArrayView2<T>,
    order: DerivOrder,
) -> EvalBundle<T> {
    forward_with_tape(net, points, order).0
}

/// Reverse sweep: parameter gradients of a scalar whose adjoint with respect
/// to the bundle streams is `adj`.
pub fn backward<T: Scalar>(net: &PinnNetwork<T>, tape: &Tape<T>, adj: &BundleAdjoint<T>) -> Result<GradientSet<T>> {
    let n = tape.n;
    let k = tape.order.streams();
    let mut g = Array2::zeros((k * n, 1));
    let streams = [&adj.u, &adj.du_dx, &adj.du_dt, &adj.d2u_dx2];
    for (j, a) in streams.iter().enumerate() {
        if let Some(a) = a {
            if j >= k {
                return Err(Error::Shape(format!(
                    "adjoint stream {j} supplied for an evaluation of order {:?}",
                    tape.order
                )));
            }
            if a.len() != n {
                return Err(Error::Shape(format!("adjoint length {} != batch {n}", a.len())));
            }
            g.slice_mut(s![j * n..(j + 1) * n, 0]).assign(a);
        }
    }

    let n_layers = net.layers.len();
    let mut weights = vec![Array2::zeros((0, 0)); n_layers];
    let mut biases = vec![Array1::zeros(0); n_layers];
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    for l in (0..n_layers).rev() {
        let layer = &net.layers[l];
        weights[l] = tape.inputs[l].t().dot(&g);
        biases[l] = g.slice(s![..n, ..]).sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        // adjoint of the stacked outputs of hidden layer l-1
        let gh = g.dot(&layer.weight.t());
        let z = &tape.pre[l - 1];
        let act = tape.inputs[l].slice(s![..n, ..]);
        let mut gz = Array2::zeros(gh.raw_dim());
        let sech2 = act.mapv(|a| T::one() - a * a);
        // value stream: direct tanh path
        let mut gz0 = &gh.slice(s![..n, ..]) * &sech2;
        if k >= 3 {
            let zx = z.slice(s![n..2 * n, ..]);
            let zt = z.slice(s![2 * n..3 * n, ..]);
            let gx = gh.slice(s![n..2 * n, ..]);
            let gt = gh.slice(s![2 * n..3 * n, ..]);
            // d(sech2)/dz = -2 a sech2
            let mut coupling = &gx * &zx;
            coupling += &(&gt * &zt);
            Zip::from(&mut gz0)
                .and(&act)
                .and(&sech2)
                .and(&coupling)
                .for_each(|o, &a, &sc, &c| *o -= two * a * sc * c);
            gz.slice_mut(s![2 * n..3 * n, ..]).assign(&(&gt * &sech2));
            let mut gzx = &gx * &sech2;
            if k == 4 {
                let zxx = z.slice(s![3 * n.., ..]);
                let gk = gh.slice(s![3 * n.., ..]);
                gz.slice_mut(s![3 * n.., ..]).assign(&(&gk * &sech2));
                Zip::from(&mut gzx)
                    .and(&act)
                    .and(&sech2)
                    .and(gk)
                    .and(zx)
                    .for_each(|o, &a, &sc, &bk, &dx| *o -= four * bk * a * sc * dx);
                Zip::from(&mut gz0)
                    .and(&act)
                    .and(&sech2)
                    .and(gk)
                    .and(zx)
                    .and(zxx)
                    .for_each(|o, &a, &sc, &bk, &dx, &dxx| {
                        *o += bk * (-two * a * sc * dxx - two * dx * dx * sc * (sc - two * a * a))
                    });
            }
            gz.slice_mut(s![n..2 * n, ..]).assign(&gzx);
        }
        gz.slice_mut(s![..n, ..]).assign(&gz0);
        g = gz;
    }
    Ok(GradientSet { weights, biases })
}

/// One batch evaluation request of [`loss_gradients`].
#[derive(Debug, Clone)]
pub struct EvalRequest<'a, T> {
    /// Index into the network slice.
    pub net: usize,
    pub points: ArrayView2<'a, T>,
    pub order: DerivOrder,
}

/// Value of a composite loss and its adjoints, one per request.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: T,
    pub adjoints: Vec<BundleAdjoint<T>>,
    /// Derivatives with respect to trainable shock speeds.
    pub shock_grads: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LossGradients<T> {
    pub value: T,
    pub nets: Vec<GradientSet<T>>,
    pub shock_speeds: Vec<T>,
}

/// Evaluates every request, hands the bundles to `loss`, and pulls the loss
/// adjoints back to parameter gradients of each network.
pub fn loss_gradients<T, F>(nets: &[&PinnNetwork<T>], requests: &[EvalRequest<'_, T>], loss: F) -> Result<LossGradients<T>>
where
    T: Scalar,
    F: FnOnce(&[EvalBundle<T>]) -> LossOutput<T>,
{
    let mut bundles = Vec::with_capacity(requests.len());
    let mut tapes = Vec::with_capacity(requests.len());
    for req in requests {
        let net = nets
            .get(req.net)
            .ok_or_else(|| Error::Shape(format!("request refers to network {}", req.net)))?;
        let (b, t) = forward_with_tape(net, req.points, req.order);
        bundles.push(b);
        tapes.push(t);
    }
    let out = loss(&bundles);
    if !out.value.is_finite() {
        return Err(Error::NonFinite(format!("loss value {}", out.value)));
    }
    if out.adjoints.len() != requests.len() {
        return Err(Error::Shape(format!(
            "{} adjoints for {} requests",
            out.adjoints.len(),
            requests.len()
        )));
    }
    let mut grads: Vec<GradientSet<T>> = nets.iter().map(|n| GradientSet::zeros_like(n)).collect();
    for ((req, tape), adj) in requests.iter().zip(&tapes).zip(&out.adjoints) {
        let g = backward(nets[req.net], tape, adj)?;
        grads[req.net].add_assign(&g);
    }
    Ok(LossGradients { value: out.value, nets: grads, shock_speeds: out.shock_grads })
}
