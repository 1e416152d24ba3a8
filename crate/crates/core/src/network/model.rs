//! Forward and analytic backward passes of the functional autoencoder.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::config::{Activation, LossWeights, NetworkConfig};
use super::layout::{Layout, SegmentKind};
use super::loss::{clustering_loss_grad, l1_norm, l1_subgradient, orthogonality_penalty_grad};
use crate::error::{FaeError, Result};
use crate::fdata::quadrature::{merge_breakpoints, Quadrature};
use crate::fdata::smooth::PenalizedSolver;
use crate::fdata::{BasisSpec, BasisSystem, FunctionalDataset};

/// Batch normalisation needs at least this many rows.
pub const MIN_BN_BATCH: usize = 8;
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous value in the running-moment update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running batch-norm moments of one scalar layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Set once a training batch has updated the moments; eval mode only
    /// normalises when this is true.
    pub trained: bool,
}

/// Data in the form the network consumes: encoder features
/// `z_i = CrossGram · c_i` per dimension and target values on the data
/// quadrature grid.
#[derive(Debug, Clone)]
pub struct NetInput {
    /// `n × (p·ℓ)`.
    pub z: Array2<f64>,
    /// `n × Q × p`.
    pub y: Array3<f64>,
}

impl NetInput {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    /// Rows of a mini-batch: features `B × (p·ℓ)` and targets `Q × B × p`.
    pub fn batch(&self, idx: &[usize]) -> (Array2<f64>, Array3<f64>) {
        let z = self.z.select(Axis(0), idx);
        let (_, q, p) = self.y.dim();
        let mut y = Array3::zeros((q, idx.len(), p));
        for (b, &i) in idx.iter().enumerate() {
            y.slice_mut(s![.., b, ..]).assign(&self.y.index_axis(Axis(0), i));
        }
        (z, y)
    }
}

/// Everything a backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    mode: Mode,
    batch: usize,
    z: Option<Array2<f64>>,
    enc_pre: Option<Array2<f64>>,
    /// Inputs of every scalar layer, then the final output.
    acts: Vec<Array2<f64>>,
    layers: Vec<LayerCache>,
    /// Index into `acts` of the latent matrix.
    latent_at: usize,
    mats: [Array3<f64>; 3],
    bias: [Array2<f64>; 2],
    pre1: Array3<f64>,
    y1: Array3<f64>,
    pre2: Array3<f64>,
    y2: Array3<f64>,
    /// Reconstruction on the quadrature grid, `Q × B × p`.
    pub yhat: Array3<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    bn: Option<BnCache>,
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct BnCache {
    hat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
    mean: Array1<f64>,
    var: Array1<f64>,
}

impl ForwardCache {
    /// Latent embedding `B × s`.
    pub fn latent(&self) -> &Array2<f64> {
        &self.acts[self.latent_at]
    }

    /// Encoder pre-activations, absent for a decoder-only pass.
    pub fn encoder_pre(&self) -> Option<&Array2<f64>> {
        self.enc_pre.as_ref()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch moments of each scalar layer that normalised with batch
    /// statistics (used to update the running moments).
    pub fn batch_moments(&self) -> Vec<Option<(Array1<f64>, Array1<f64>)>> {
        self.layers
            .iter()
            .map(|l| l.bn.as_ref().filter(|b| b.batch_stats).map(|b| (b.mean.clone(), b.var.clone())))
            .collect()
    }
}

/// Per-term values of the objective on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub orthogonality: f64,
    pub roughness: f64,
    pub clustering: f64,
    pub total: f64,
}

/// The functional autoencoder.
#[derive(Debug, Clone)]
pub struct FaeNetwork {
    pub config: NetworkConfig,
    pub p: usize,
    data_spec: BasisSpec,
    net_basis: BasisSystem,
    /// Scale of each network basis function (unit L2 norm).
    net_scale: Array1<f64>,
    net_gram: Array2<f64>,
    net_penalty: Array2<f64>,
    layout: Layout,
    pub params: Vec<f64>,
    pub moments: Vec<BnMoments>,
    version: u64,
    cross: Array2<f64>,
    phi: Array2<f64>,
    qweights: Vec<f64>,
    qnodes: Vec<f64>,
}

impl FaeNetwork {
    /// Builds and initialises a network for `p`-dimensional data expanded in
    /// `data_basis`.
    pub fn new(config: &NetworkConfig, data_basis: &BasisSystem, p: usize) -> Result<Self> {
        let mut net = Self::skeleton(config, data_basis.spec(), p)?;
        net.initialise();
        Ok(net)
    }

    /// Structure without initialised parameters (all zero).
    pub(crate) fn skeleton(config: &NetworkConfig, data_spec: &BasisSpec, p: usize) -> Result<Self> {
        config.validate()?;
        if p == 0 {
            return Err(FaeError::ShapeMismatch("data has no dimensions".into()));
        }
        let data_basis = BasisSystem::new(*data_spec)?;
        let l = config.net_basis_size;
        let net_basis = BasisSystem::new(BasisSpec::bspline(l, 3, data_spec.domain))?;
        // cross-Gram on the merged breakpoints, exact for spline products
        let bps = merge_breakpoints(&net_basis.breakpoints(), &data_basis.breakpoints());
        let panels = bps.len() - 1;
        let sub = (400usize).div_ceil(8 * panels).max(1);
        let quad = Quadrature::composite(&bps, 8, sub);
        // unit-norm basis functions keep coefficient-space gradients on the
        // same scale as function-space ones
        let net_scale = net_basis.gram().diag().mapv(|g| 1.0 / g.sqrt());
        let sdiag = Array2::from_diag(&net_scale);
        let net_gram = sdiag.dot(net_basis.gram()).dot(&sdiag);
        let net_penalty = sdiag.dot(net_basis.penalty()).dot(&sdiag);
        let a = net_basis.design_matrix(&quad.nodes, 0)? * &net_scale;
        let b = data_basis.design_matrix(&quad.nodes, 0)?;
        let cross = crate::fdata::basis::weighted_cross(&a, &b, &quad.weights);
        let qnodes = data_basis.quadrature().nodes.clone();
        let phi = net_basis.design_matrix(&qnodes, 0)? * &net_scale;
        let layout = Layout::new(&config.layer_widths, p, l);
        let moments = layout
            .mlp
            .iter()
            .map(|m| {
                let w = layout.seg(m.bias).len();
                BnMoments { mean: vec![0.0; w], var: vec![1.0; w], trained: false }
            })
            .collect();
        Ok(FaeNetwork {
            config: config.clone(),
            p,
            data_spec: *data_spec,
            net_basis,
            net_scale,
            net_gram,
            net_penalty,
            params: vec![0.0; layout.total],
            layout,
            moments,
            version: 0,
            cross,
            phi,
            qweights: data_basis.quadrature().weights.clone(),
            qnodes,
        })
    }

    fn initialise(&mut self) {
        let mut rng = crate::rng(self.config.seed ^ 0x5eed_0001);
        let l = self.config.net_basis_size;
        let layout = self.layout.clone();
        for seg in &layout.segments {
            let r = seg.range();
            match seg.kind {
                SegmentKind::MlpWeight => {
                    let (fan_out, fan_in) = (seg.shape[0], seg.shape[1]);
                    let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let u = Uniform::new_inclusive(-b, b).unwrap();
                    self.params[r].iter_mut().for_each(|v| *v = u.sample(&mut rng));
                }
                SegmentKind::BnScale => self.params[r].iter_mut().for_each(|v| *v = 1.0),
                SegmentKind::EncoderWeight | SegmentKind::DecoderWeight => {
                    let fan_in = seg.shape[1];
                    let sd = 1.0 / ((l * fan_in) as f64).sqrt();
                    let nd = Normal::new(0.0, sd).unwrap();
                    self.params[r].iter_mut().for_each(|v| *v = nd.sample(&mut rng));
                }
                _ => {}
            }
        }
        // unit Hilbert norm for every encoder weight function
        let gram = self.net_gram.clone();
        let mut w = layout.m3(&mut self.params, layout.enc_w);
        let (q1, p, _) = w.dim();
        for q in 0..q1 {
            for d in 0..p {
                let mut row = w.slice_mut(s![q, d, ..]);
                let norm = row.dot(&gram.dot(&row)).sqrt();
                if norm > 0.0 {
                    row.mapv_inplace(|v| v / norm);
                }
            }
        }
        self.version += 1;
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// The B-spline family behind the functional weights. Coefficient `u`
    /// multiplies `net_scale()[u]` times basis function `u`.
    pub fn net_basis(&self) -> &BasisSystem {
        &self.net_basis
    }

    pub fn net_scale(&self) -> &Array1<f64> {
        &self.net_scale
    }

    /// Gram matrix of the scaled network basis.
    pub fn net_gram(&self) -> &Array2<f64> {
        &self.net_gram
    }

    pub fn data_spec(&self) -> &BasisSpec {
        &self.data_spec
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Quadrature nodes and weights of the reconstruction grid.
    pub fn grid(&self) -> (&[f64], &[f64]) {
        (&self.qnodes, &self.qweights)
    }

    /// Marks parameters as changed so old caches are rejected.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    /// Features and targets for a dataset expanded in this network's data
    /// basis.
    pub fn prepare(&self, ds: &FunctionalDataset) -> Result<NetInput> {
        if *ds.basis.spec() != self.data_spec || ds.dims() != self.p {
            return Err(FaeError::BasisMismatch);
        }
        let n = ds.len();
        let l = self.config.net_basis_size;
        let q = self.qnodes.len();
        let mut z = Array2::zeros((n, self.p * l));
        let mut y = Array3::zeros((n, q, self.p));
        let qv = ds.basis.quad_values();
        for (i, smp) in ds.samples.iter().enumerate() {
            for d in 0..self.p {
                let c = smp.coeffs.row(d);
                z.slice_mut(s![i, d * l..(d + 1) * l]).assign(&self.cross.dot(&c));
                y.slice_mut(s![i, .., d]).assign(&qv.dot(&c));
            }
        }
        Ok(NetInput { z, y })
    }

    fn act(&self) -> Activation {
        self.config.activation
    }

    fn bottleneck_layer(&self) -> usize {
        // scalar layer whose output is the latent code
        self.config.bottleneck() - 1
    }

    /// Full forward pass from encoder features `z` (`B × p·ℓ`).
    pub fn forward<R: Rng>(&self, z: ArrayView2<f64>, mode: Mode, rng: &mut R) -> Result<ForwardCache> {
        let l = self.config.net_basis_size;
        if z.ncols() != self.p * l || z.nrows() == 0 {
            return Err(FaeError::ShapeMismatch(format!("feature matrix {:?}, expected B × {}", z.dim(), self.p * l)));
        }
        let lay = &self.layout;
        let w = lay.v2(&self.params, lay.enc_w);
        let b = lay.v1(&self.params, lay.enc_b);
        let pre = z.dot(&w.t()) + &b;
        check_finite(&pre, "encoder")?;
        let out = pre.mapv(|v| self.act().apply(v));
        let mut cache = self.run_from(out, 0, mode, rng)?;
        cache.z = Some(z.to_owned());
        cache.enc_pre = Some(pre);
        Ok(cache)
    }

    /// Decoder-only forward pass from latent codes `x` (`B × s`).
    pub fn forward_from_latent<R: Rng>(&self, x: ArrayView2<f64>, mode: Mode, rng: &mut R) -> Result<ForwardCache> {
        if x.ncols() != self.latent_dim() || x.nrows() == 0 {
            return Err(FaeError::ShapeMismatch(format!("latent matrix {:?}, expected B × {}", x.dim(), self.latent_dim())));
        }
        self.run_from(x.to_owned(), self.bottleneck_layer() + 1, mode, rng)
    }

    fn run_from<R: Rng>(&self, input: Array2<f64>, first: usize, mode: Mode, rng: &mut R) -> Result<ForwardCache> {
        let lay = &self.layout;
        let batch = input.nrows();
        let mut acts = vec![Array2::zeros((0, 0)); first];
        acts.push(input);
        let mut layers: Vec<LayerCache> = Vec::new();
        for j in 0..lay.mlp.len() {
            if j < first {
                layers.push(LayerCache {
                    bn: None,
                    pre: Array2::zeros((0, 0)),
                    mask: None,
                });
                continue;
            }
            let (cache, out) = self.mlp_forward(j, &acts[j], mode, rng)?;
            layers.push(cache);
            acts.push(out);
        }
        let xhat = acts.last().unwrap();
        let mats = [self.functional_matrix(0), self.functional_matrix(1), self.functional_matrix(2)];
        let bias = [self.functional_bias(0), self.functional_bias(1)];
        let q = self.qnodes.len();
        let (w2, w3) = (mats[0].dim().1, mats[1].dim().1);
        let mut pre1 = Array3::zeros((q, batch, w2));
        let mut pre2 = Array3::zeros((q, batch, w3));
        let mut yhat = Array3::zeros((q, batch, self.p));
        for g in 0..q {
            let mut p1 = pre1.index_axis_mut(Axis(0), g);
            p1.assign(&xhat.dot(&mats[0].index_axis(Axis(0), g).t()));
            p1 += &bias[0].row(g);
        }
        check_finite(&pre1, "decoder1")?;
        let act = self.act();
        let y1 = pre1.mapv(|v| act.apply(v));
        for g in 0..q {
            let mut p2 = pre2.index_axis_mut(Axis(0), g);
            p2.assign(&y1.index_axis(Axis(0), g).dot(&mats[1].index_axis(Axis(0), g).t()));
            p2 += &bias[1].row(g);
        }
        check_finite(&pre2, "decoder2")?;
        let y2 = pre2.mapv(|v| act.apply(v));
        for g in 0..q {
            yhat.index_axis_mut(Axis(0), g).assign(&y2.index_axis(Axis(0), g).dot(&mats[2].index_axis(Axis(0), g).t()));
        }
        Ok(ForwardCache {
            version: self.version,
            mode,
            batch,
            z: None,
            enc_pre: None,
            acts,
            layers,
            latent_at: self.bottleneck_layer() + 1,
            mats,
            bias,
            pre1,
            y1,
            pre2,
            y2,
            yhat,
        })
    }

    fn mlp_forward<R: Rng>(&self, j: usize, input: &Array2<f64>, mode: Mode, rng: &mut R) -> Result<(LayerCache, Array2<f64>)> {
        let lay = &self.layout;
        let slots = lay.mlp[j];
        let w = lay.v2(&self.params, slots.weight);
        let b = lay.v1(&self.params, slots.bias);
        let gamma = lay.v1(&self.params, slots.scale);
        let eta = lay.v1(&self.params, slots.shift);
        let h = input.dot(&w.t()) + &b;
        check_finite(&h, &format!("mlp{j}"))?;
        let batch = h.nrows();
        let mom = &self.moments[j];
        let use_batch = mode == Mode::Train && batch >= MIN_BN_BATCH;
        let use_running = mode == Mode::Eval && mom.trained;
        let (pre, bn) = if use_batch || use_running {
            let (mean, var) = if use_batch {
                let mean = h.mean_axis(Axis(0)).unwrap();
                let var = h.var_axis(Axis(0), 0.0);
                (mean, var)
            } else {
                (Array1::from(mom.mean.clone()), Array1::from(mom.var.clone()))
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let hat = (&h - &mean) * &inv_std;
            let pre = &hat * &gamma + &eta;
            (pre, Some(BnCache { hat, inv_std, batch_stats: use_batch, mean, var }))
        } else {
            (h, None)
        };
        let act = self.act();
        let mut out = pre.mapv(|v| act.apply(v));
        let tau = self.config.tau;
        let mask = if mode == Mode::Train && tau < 1.0 && j != self.bottleneck_layer() {
            let m = Array2::from_shape_fn(out.dim(), |_| if rng.random::<f64>() < tau { 1.0 / tau } else { 0.0 });
            out *= &m;
            Some(m)
        } else {
            None
        };
        Ok((LayerCache { bn, pre, mask }, out))
    }

    /// Pointwise weight matrices of decoder layer `k` on the grid:
    /// `Q × out × in`.
    fn functional_matrix(&self, k: usize) -> Array3<f64> {
        let lay = &self.layout;
        let seg = lay.seg(lay.dec[k].0);
        let (o, i) = (seg.shape[0], seg.shape[1]);
        let coef = lay.v2(&self.params, lay.dec[k].0); // (o) × (i·ℓ)
        let coef = coef.into_shape_with_order((o * i, self.config.net_basis_size)).unwrap();
        let m = self.phi.dot(&coef.t()); // Q × (o·i)
        let q = self.qnodes.len();
        m.into_shape_with_order((q, o, i)).unwrap()
    }

    fn functional_bias(&self, k: usize) -> Array2<f64> {
        let lay = &self.layout;
        let b = lay.v2(&self.params, lay.dec[k].1.unwrap()); // out × ℓ
        self.phi.dot(&b.t())
    }

    /// `(1/B) Σ_i Σ_d ‖y − ŷ‖²` by quadrature; `targets` is `Q × B × p`.
    pub fn reconstruction_loss(&self, targets: ArrayView3<f64>, yhat: ArrayView3<f64>) -> f64 {
        let batch = targets.dim().1 as f64;
        let mut total = 0.0;
        for (g, w) in self.qweights.iter().enumerate() {
            let diff = &targets.index_axis(Axis(0), g) - &yhat.index_axis(Axis(0), g);
            total += w * diff.iter().map(|v| v * v).sum::<f64>();
        }
        total / batch
    }

    /// Penalty terms `(orthogonality, ℓ1 roughness)` at the current
    /// parameters.
    pub fn penalties(&self) -> (f64, f64) {
        let lay = &self.layout;
        let orth = super::loss::orthogonality_penalty(lay.v3(&self.params, lay.enc_w), &self.net_gram);
        let rough = lay.decoder_segments().iter().map(|&s| l1_norm(&self.params[lay.seg(s).range()])).sum();
        (orth, rough)
    }

    /// `Σ ∫ (ω'')²` over all decoder weight and bias functions (reported,
    /// not optimised).
    pub fn roughness_integral(&self) -> f64 {
        let lay = &self.layout;
        let pen = &self.net_penalty;
        let l = self.config.net_basis_size;
        let mut total = 0.0;
        for s in lay.decoder_segments() {
            for c in self.params[lay.seg(s).range()].chunks(l) {
                total += crate::fdata::basis::quad_form(pen, c, c);
            }
        }
        total
    }

    /// Loss terms and gradient of
    /// `L_r + λ_w (L_orth + L_rough) + λ_c L_c` on the batch of `cache`.
    ///
    /// `labels` (batch-local cluster ids) enables the clustering term. For a
    /// decoder-only cache the encoder gradients are zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        targets: ArrayView3<f64>,
        labels: Option<&[usize]>,
        weights: LossWeights,
    ) -> Result<(Vec<f64>, LossBreakdown)> {
        if cache.version != self.version {
            return Err(FaeError::StaleCache);
        }
        let (q, batch, p) = targets.dim();
        if batch != cache.batch || q != self.qnodes.len() || p != self.p {
            return Err(FaeError::ShapeMismatch(format!("targets {:?} for a batch of {}", targets.dim(), cache.batch)));
        }
        let lay = &self.layout;
        let act = self.act();
        let mut grad = vec![0.0; lay.total];
        let mut loss = LossBreakdown { reconstruction: self.reconstruction_loss(targets, cache.yhat.view()), ..Default::default() };

        // functional decoder
        let xhat = cache.acts.last().unwrap();
        let mut dmats = [
            Array3::<f64>::zeros(cache.mats[0].dim()),
            Array3::<f64>::zeros(cache.mats[1].dim()),
            Array3::<f64>::zeros(cache.mats[2].dim()),
        ];
        let mut dbias = [Array2::<f64>::zeros(cache.bias[0].dim()), Array2::<f64>::zeros(cache.bias[1].dim())];
        let mut dxhat = Array2::<f64>::zeros(xhat.dim());
        let scale = -2.0 / batch as f64;
        for g in 0..q {
            let d3 = (&targets.index_axis(Axis(0), g) - &cache.yhat.index_axis(Axis(0), g)) * (scale * self.qweights[g]);
            let y2 = cache.y2.index_axis(Axis(0), g);
            dmats[2].index_axis_mut(Axis(0), g).assign(&d3.t().dot(&y2));
            let mut d2 = d3.dot(&cache.mats[2].index_axis(Axis(0), g));
            Zip::from(&mut d2)
                .and(cache.pre2.index_axis(Axis(0), g))
                .and(y2)
                .for_each(|d, &x, &y| *d *= act.deriv(x, y));
            let y1 = cache.y1.index_axis(Axis(0), g);
            dmats[1].index_axis_mut(Axis(0), g).assign(&d2.t().dot(&y1));
            dbias[1].row_mut(g).assign(&d2.sum_axis(Axis(0)));
            let mut d1 = d2.dot(&cache.mats[1].index_axis(Axis(0), g));
            Zip::from(&mut d1)
                .and(cache.pre1.index_axis(Axis(0), g))
                .and(y1)
                .for_each(|d, &x, &y| *d *= act.deriv(x, y));
            dmats[0].index_axis_mut(Axis(0), g).assign(&d1.t().dot(xhat));
            dbias[0].row_mut(g).assign(&d1.sum_axis(Axis(0)));
            dxhat += &d1.dot(&cache.mats[0].index_axis(Axis(0), g));
        }
        let l = self.config.net_basis_size;
        for k in 0..3 {
            let (o, i) = (dmats[k].dim().1, dmats[k].dim().2);
            let flat = dmats[k].view().into_shape_with_order((q, o * i)).unwrap();
            let dc = flat.t().dot(&self.phi); // (o·i) × ℓ
            let mut slot = lay.m2(&mut grad, lay.dec[k].0);
            slot.assign(&dc.into_shape_with_order((o, i * l)).unwrap());
        }
        for k in 0..2 {
            let db = dbias[k].t().dot(&self.phi); // out × ℓ
            lay.m2(&mut grad, lay.dec[k].1.unwrap()).assign(&db);
        }

        // scalar layers, last to first
        let first = cache.acts.iter().position(|a| a.nrows() > 0).unwrap();
        let mut dout = dxhat;
        for j in (first..lay.mlp.len()).rev() {
            if j + 1 == cache.latent_at {
                if let Some(labels) = labels {
                    let (lc, g) = clustering_loss_grad(cache.latent().view(), labels);
                    loss.clustering = lc;
                    if weights.lambda_c > 0.0 {
                        dout.scaled_add(weights.lambda_c, &g);
                    }
                }
            }
            dout = self.mlp_backward(j, &cache.layers[j], &cache.acts[j], dout, &mut grad);
        }
        if let (Some(z), Some(pre)) = (&cache.z, &cache.enc_pre) {
            let out = &cache.acts[0];
            let mut d = dout;
            Zip::from(&mut d).and(pre).and(out).for_each(|d, &x, &y| *d *= act.deriv(x, y));
            lay.m2(&mut grad, lay.enc_w).assign(&d.t().dot(z));
            lay.m1(&mut grad, lay.enc_b).assign(&d.sum_axis(Axis(0)));
        }

        // penalties
        let orth = orthogonality_penalty_grad(
            lay.v3(&self.params, lay.enc_w),
            &self.net_gram,
            weights.lambda_w,
            lay.m3(&mut grad, lay.enc_w),
        );
        let mut rough = 0.0;
        for s in lay.decoder_segments() {
            let r = lay.seg(s).range();
            rough += l1_norm(&self.params[r.clone()]);
            if weights.lambda_w > 0.0 {
                for (g, v) in grad[r.clone()].iter_mut().zip(&self.params[r]) {
                    *g += weights.lambda_w * l1_subgradient(*v);
                }
            }
        }
        loss.orthogonality = orth;
        loss.roughness = rough;
        loss.total = loss.reconstruction + weights.lambda_w * (orth + rough) + weights.lambda_c * loss.clustering;
        Ok((grad, loss))
    }

    fn mlp_backward(&self, j: usize, lc: &LayerCache, input: &Array2<f64>, dout: Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let lay = &self.layout;
        let slots = lay.mlp[j];
        let act = self.act();
        let mut du = match &lc.mask {
            Some(m) => dout * m,
            None => dout,
        };
        // undo the dropout scaling on the stored output before differentiating
        let out_nomask = lc.pre.mapv(|v| act.apply(v));
        Zip::from(&mut du).and(&lc.pre).and(&out_nomask).for_each(|d, &x, &y| *d *= act.deriv(x, y));
        let dh = match &lc.bn {
            Some(bn) => {
                let gamma = lay.v1(&self.params, slots.scale).to_owned();
                lay.m1(grad, slots.scale).assign(&(&du * &bn.hat).sum_axis(Axis(0)));
                lay.m1(grad, slots.shift).assign(&du.sum_axis(Axis(0)));
                let dhat = &du * &gamma;
                if bn.batch_stats {
                    let m1 = dhat.mean_axis(Axis(0)).unwrap();
                    let m2 = (&dhat * &bn.hat).mean_axis(Axis(0)).unwrap();
                    (&dhat - &m1 - &(&bn.hat * &m2)) * &bn.inv_std
                } else {
                    dhat * &bn.inv_std
                }
            }
            None => du,
        };
        lay.m2(grad, slots.weight).assign(&dh.t().dot(input));
        lay.m1(grad, slots.bias).assign(&dh.sum_axis(Axis(0)));
        dh.dot(&lay.v2(&self.params, slots.weight))
    }

    /// Folds the batch moments of a training step into the running moments.
    pub fn update_moments(&mut self, cache: &ForwardCache) {
        for (m, bm) in self.moments.iter_mut().zip(cache.batch_moments()) {
            if let Some((mean, var)) = bm {
                if m.trained {
                    for (r, v) in m.mean.iter_mut().zip(mean.iter()) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                    }
                    for (r, v) in m.var.iter_mut().zip(var.iter()) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                    }
                } else {
                    m.mean = mean.to_vec();
                    m.var = var.to_vec();
                    m.trained = true;
                }
            }
        }
    }

    /// Eval-mode latent codes of all rows of `input`, `n × s`.
    pub fn embed(&self, input: &NetInput) -> Result<Array2<f64>> {
        let mut rng = crate::rng(0);
        let cache = self.forward(input.z.view(), Mode::Eval, &mut rng)?;
        Ok(cache.latent().clone())
    }

    /// Eval-mode reconstructions `n × Q × p` on the quadrature grid.
    pub fn reconstruct(&self, input: &NetInput) -> Result<Array3<f64>> {
        let mut rng = crate::rng(0);
        let cache = self.forward(input.z.view(), Mode::Eval, &mut rng)?;
        Ok(cache.yhat.permuted_axes([1, 0, 2]).as_standard_layout().to_owned())
    }

    /// Least-squares projection of eval-mode reconstructions onto the data
    /// basis, one `p × m` coefficient matrix per row of `input`.
    pub fn reconstruct_coeffs(&self, input: &NetInput) -> Result<Vec<Array2<f64>>> {
        let basis = BasisSystem::new(self.data_spec)?;
        let solver = PenalizedSolver::new(basis.quad_values(), &basis, 0.0)?;
        let yhat = self.reconstruct(input)?;
        let m = basis.size();
        Ok(yhat
            .outer_iter()
            .map(|grid| {
                let mut c = Array2::zeros((self.p, m));
                for d in 0..self.p {
                    let col = grid.column(d).to_vec();
                    c.row_mut(d).assign(&Array1::from(solver.solve(&col)));
                }
                c
            })
            .collect())
    }

    /// Offset in `params` of the first parameter after the bottleneck.
    pub fn decoder_start(&self) -> usize {
        let lay = &self.layout;
        let j = self.bottleneck_layer() + 1;
        let seg = if j < lay.mlp.len() { lay.mlp[j].weight } else { lay.dec[0].0 };
        lay.seg(seg).offset
    }

    /// Version counter of the parameters.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn set_version(&mut self, v: u64) {
        self.version = v;
    }
}

fn check_finite<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FaeError::NonFiniteActivation { layer: layer.to_string() })
    }
}
