use super::spec::{JkAgg, ModelKind, ModelSpec, TapPoint};
use crate::error::{Error, Result};
use crate::graphdata::Graph;
use crate::init;
use crate::layers::{Activation, DenseLayer, GcnLayer, Readout, ReadoutKind, TopKPool};
use crate::numcore::{Matrix, Rng, SparseAdj};
use crate::scalar::Scalar;

/// One GCN, optionally followed by a top-k pool.
#[derive(Debug, Clone)]
pub struct Block<S> {
    pub gcn: GcnLayer<S>,
    pub pool: Option<TopKPool<S>>,
}

/// What a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Gcn(usize),
    Pool(usize),
    Mlp(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: (usize, usize),
    pub group: ParamGroup,
    /// True for weight matrices and projection vectors, false for biases.
    pub is_weight: bool,
    pub frozen: bool,
}

/// Output of a block-level unit from the most recent forward pass.
#[derive(Debug)]
pub struct UnitOutput<'a, S> {
    pub id: String,
    pub output: &'a Matrix<S>,
    /// Pre-activation, for GCN units only.
    pub pre_activation: Option<&'a Matrix<S>>,
}

#[derive(Debug, Clone)]
struct ForwardState {
    part_widths: Vec<usize>,
}

/// An instantiated model: GCN/pool blocks, JK readouts and the MLP head.
#[derive(Debug, Clone)]
pub struct Model<S> {
    spec: ModelSpec,
    num_features: usize,
    num_classes: usize,
    pub(crate) blocks: Vec<Block<S>>,
    input_tap: Option<Readout>,
    taps: Vec<Option<Readout>>,
    final_readout: Option<Readout>,
    pub(crate) mlp: Vec<DenseLayer<S>>,
    state: Option<ForwardState>,
}

impl<S: Scalar> Model<S> {
    /// Allocates the layers for `spec` and draws parameters with the
    /// standard scheme.
    pub fn build(
        spec: &ModelSpec,
        num_features: usize,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut model = Self::allocate(spec, num_features, num_classes)?;
        init::init_standard(&mut model, rng);
        Ok(model)
    }

    /// Allocates the layers with all parameters zero.
    pub fn allocate(spec: &ModelSpec, num_features: usize, num_classes: usize) -> Result<Self> {
        spec.validate()?;
        if num_features == 0 || num_classes == 0 {
            return Err(Error::Spec(format!(
                "need at least one feature and one class, got {num_features} and {num_classes}"
            )));
        }
        let hidden = spec.hidden_dim;
        let readout = spec.readout_kind();
        let mut blocks = Vec::new();
        let mut in_dim = num_features;
        for _ in 0..spec.kind.num_blocks() {
            let mut gcn = GcnLayer::new(in_dim, hidden, Activation::Relu);
            gcn.normalisation = spec.normalisation;
            let pool = if spec.kind.has_pools() {
                Some(TopKPool::new(Matrix::zeros(hidden, 1), spec.k)?)
            } else {
                None
            };
            blocks.push(Block { gcn, pool });
            in_dim = hidden;
        }

        let (input_tap, taps, final_readout) = match spec.kind {
            ModelKind::Mlp => (Some(Readout::new(readout)), vec![], None),
            ModelKind::GcnMlp | ModelKind::GcnRMlp => (
                Some(Readout::new(readout)),
                vec![Some(Readout::new(readout))],
                None,
            ),
            ModelKind::JkSum => (
                None,
                (0..3).map(|_| Some(Readout::new(readout))).collect(),
                None,
            ),
            ModelKind::Probe4 => (None, vec![None; 4], Some(Readout::new(readout))),
        };

        let part_widths: Vec<usize> = input_tap
            .iter()
            .map(|r| r.kind.width(num_features))
            .chain(taps.iter().flatten().map(|r| r.kind.width(hidden)))
            .chain(final_readout.iter().map(|r| r.kind.width(hidden)))
            .collect();
        let mlp_in = match spec.jk_agg {
            JkAgg::Concat => part_widths.iter().sum(),
            JkAgg::Sum => part_widths[0],
        };

        let dims = [mlp_in, spec.mlp_dims[0], spec.mlp_dims[1], num_classes];
        let mlp = (0..3)
            .map(|l| {
                let act = if l < 2 {
                    Activation::Relu
                } else {
                    Activation::None
                };
                DenseLayer::new(dims[l], dims[l + 1], act)
            })
            .collect();

        Ok(Self {
            spec: spec.clone(),
            num_features,
            num_classes,
            blocks,
            input_tap,
            taps,
            final_readout,
            mlp,
            state: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn blocks(&self) -> &[Block<S>] {
        &self.blocks
    }

    pub fn mlp_layers(&self) -> &[DenseLayer<S>] {
        &self.mlp
    }

    pub fn mlp_input_width(&self) -> usize {
        self.mlp[0].in_dim()
    }

    /// Readout kinds feeding the MLP: input tap, per-block taps, final readout.
    pub fn wiring(
        &self,
    ) -> (
        Option<ReadoutKind>,
        Vec<Option<ReadoutKind>>,
        Option<ReadoutKind>,
    ) {
        (
            self.input_tap.as_ref().map(|r| r.kind),
            self.taps
                .iter()
                .map(|t| t.as_ref().map(|r| r.kind))
                .collect(),
            self.final_readout.as_ref().map(|r| r.kind),
        )
    }

    /// Parameter metadata in registry order: per block GCN weight, GCN bias
    /// and pool projection, then each MLP layer's weight and bias.
    pub fn param_info(&self) -> Vec<ParamInfo> {
        let frozen_gcn = self.spec.gcn_frozen();
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let n = b + 1;
            out.push(ParamInfo {
                name: format!("gcn{n}.weight"),
                shape: block.gcn.weight.shape(),
                group: ParamGroup::Gcn(b),
                is_weight: true,
                frozen: frozen_gcn,
            });
            out.push(ParamInfo {
                name: format!("gcn{n}.bias"),
                shape: block.gcn.bias.shape(),
                group: ParamGroup::Gcn(b),
                is_weight: false,
                frozen: frozen_gcn,
            });
            if let Some(pool) = &block.pool {
                out.push(ParamInfo {
                    name: format!("pool{n}.p"),
                    shape: pool.p.shape(),
                    group: ParamGroup::Pool(b),
                    is_weight: true,
                    frozen: false,
                });
            }
        }
        for (l, layer) in self.mlp.iter().enumerate() {
            let n = l + 1;
            out.push(ParamInfo {
                name: format!("mlp{n}.weight"),
                shape: layer.weight.shape(),
                group: ParamGroup::Mlp(l),
                is_weight: true,
                frozen: false,
            });
            out.push(ParamInfo {
                name: format!("mlp{n}.bias"),
                shape: layer.bias.shape(),
                group: ParamGroup::Mlp(l),
                is_weight: false,
                frozen: false,
            });
        }
        out
    }

    pub fn params(&self) -> Vec<&Matrix<S>> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.push(&block.gcn.weight);
            out.push(&block.gcn.bias);
            if let Some(pool) = &block.pool {
                out.push(&pool.p);
            }
        }
        for layer in &self.mlp {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<S>> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.push(&mut block.gcn.weight);
            out.push(&mut block.gcn.bias);
            if let Some(pool) = &mut block.pool {
                out.push(&mut pool.p);
            }
        }
        for layer in &mut self.mlp {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn frozen_mask(&self) -> Vec<bool> {
        self.param_info().into_iter().map(|p| p.frozen).collect()
    }

    /// Number of scalar parameters updated by training.
    pub fn trainable_count(&self) -> usize {
        self.param_info()
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.shape.0 * p.shape.1)
            .sum()
    }

    /// Zero-filled gradient registry matching [`Model::params`].
    pub fn zero_grads(&self) -> Vec<Matrix<S>> {
        self.params()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect()
    }

    /// Class scores (`1 x num_classes`) for one graph.
    pub fn forward(&mut self, g: &Graph<S>) -> Result<Matrix<S>> {
        self.forward_parts(&g.adj, &g.features)
    }

    pub fn forward_parts(&mut self, adj: &SparseAdj<S>, x: &Matrix<S>) -> Result<Matrix<S>> {
        if x.cols() != self.num_features {
            return Err(Error::shape(
                "model_forward",
                x.shape(),
                (x.rows(), self.num_features),
            ));
        }
        let mut parts: Vec<Matrix<S>> = Vec::new();
        if let Some(r) = &mut self.input_tap {
            parts.push(r.forward(x)?);
        }
        let mut cur_adj = adj.clone();
        let mut cur_x = x.clone();
        for (block, tap) in self.blocks.iter_mut().zip(&mut self.taps) {
            let h = block.gcn.forward(&cur_adj, &cur_x)?;
            if let (Some(r), TapPoint::Gcn) = (tap.as_mut(), self.spec.jk_tap) {
                parts.push(r.forward(&h)?);
            }
            match &mut block.pool {
                Some(pool) => {
                    let pooled = pool.forward(&cur_adj, &h)?;
                    if let (Some(r), TapPoint::Pool) = (tap.as_mut(), self.spec.jk_tap) {
                        parts.push(r.forward(&pooled.features)?);
                    }
                    cur_adj = pooled.adj;
                    cur_x = pooled.features;
                }
                None => cur_x = h,
            }
        }
        if let Some(r) = &mut self.final_readout {
            parts.push(r.forward(&cur_x)?);
        }

        let part_widths: Vec<usize> = parts.iter().map(Matrix::cols).collect();
        let mut z = match self.spec.jk_agg {
            JkAgg::Concat => Matrix::hcat(&parts.iter().collect::<Vec<_>>())?,
            JkAgg::Sum => {
                let mut acc = parts[0].clone();
                for p in &parts[1..] {
                    acc.add_assign(p)?;
                }
                acc
            }
        };
        for layer in &mut self.mlp {
            z = layer.forward(&z)?;
        }
        self.state = Some(ForwardState { part_widths });
        Ok(z)
    }

    /// Backpropagates `grad_scores` through the last forward pass. Returns
    /// gradients aligned with [`Model::params`]; frozen entries are zero.
    pub fn backward(&mut self, grad_scores: &Matrix<S>) -> Result<Vec<Matrix<S>>> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::State("model backward called before forward".into()))?;

        let mut mlp_grads = Vec::with_capacity(self.mlp.len());
        let mut g = grad_scores.clone();
        for layer in self.mlp.iter().rev() {
            let lg = layer.backward(&g)?;
            g = lg.input;
            mlp_grads.push((lg.weight, lg.bias));
        }
        mlp_grads.reverse();

        // Gradient for each readout part, in forward order.
        let mut part_grads: Vec<Matrix<S>> = match self.spec.jk_agg {
            JkAgg::Concat => {
                let mut start = 0;
                state
                    .part_widths
                    .iter()
                    .map(|&w| {
                        let s = g.col_slice(start, w);
                        start += w;
                        s
                    })
                    .collect()
            }
            JkAgg::Sum => vec![g.clone(); state.part_widths.len()],
        }
        .into_iter()
        .rev()
        .collect();
        // Reversed, so the front holds the part consumed first on the way back.

        let mut grad_next: Option<Matrix<S>> = match &self.final_readout {
            Some(r) => Some(r.backward(&part_grads.remove(0))?),
            None => None,
        };

        let frozen = self.spec.gcn_frozen();
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, tap) in self.blocks.iter().zip(&self.taps).rev() {
            let (grad_h, grad_p) = match &block.pool {
                Some(pool) => {
                    let out_shape = pool.output().expect("pool ran in forward").shape();
                    let mut g_out = grad_next
                        .take()
                        .unwrap_or_else(|| Matrix::zeros(out_shape.0, out_shape.1));
                    if let (Some(r), TapPoint::Pool) = (tap, self.spec.jk_tap) {
                        g_out.add_assign(&r.backward(&part_grads.remove(0))?)?;
                    }
                    let pg = pool.backward(&g_out)?;
                    (Some(pg.input), Some(pg.p))
                }
                None => (grad_next.take(), None),
            };
            let out_shape = block.gcn.output().expect("gcn ran in forward").shape();
            let mut grad_h = grad_h.unwrap_or_else(|| Matrix::zeros(out_shape.0, out_shape.1));
            if let (Some(r), TapPoint::Gcn) = (tap, self.spec.jk_tap) {
                grad_h.add_assign(&r.backward(&part_grads.remove(0))?)?;
            }
            let gg = block.gcn.backward(&grad_h)?;
            grad_next = Some(gg.input);
            let (w, b) = if frozen {
                (
                    Matrix::zeros(gg.weight.rows(), gg.weight.cols()),
                    Matrix::zeros(1, gg.bias.cols()),
                )
            } else {
                (gg.weight, gg.bias)
            };
            block_grads.push((w, b, grad_p));
        }
        block_grads.reverse();

        let mut out = Vec::new();
        for (w, b, p) in block_grads {
            out.push(w);
            out.push(b);
            if let Some(p) = p {
                out.push(p);
            }
        }
        for (w, b) in mlp_grads {
            out.push(w);
            out.push(b);
        }
        Ok(out)
    }

    /// Argmax of the class scores; ties go to the lowest class index.
    pub fn predict(&mut self, g: &Graph<S>) -> Result<usize> {
        let scores = self.forward(g)?;
        Ok(argmax(scores.data()))
    }

    /// Block outputs from the last forward pass, in network order.
    pub fn unit_outputs(&self) -> Vec<UnitOutput<'_, S>> {
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            if let Some(h) = block.gcn.output() {
                out.push(UnitOutput {
                    id: format!("gcn{}", b + 1),
                    output: h,
                    pre_activation: block.gcn.pre_activation(),
                });
            }
            if let Some(x) = block.pool.as_ref().and_then(TopKPool::output) {
                out.push(UnitOutput {
                    id: format!("pool{}", b + 1),
                    output: x,
                    pre_activation: None,
                });
            }
        }
        out
    }

    pub fn has_forward_state(&self) -> bool {
        self.state.is_some()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut m = Model::<T>::allocate(&self.spec, self.num_features, self.num_classes)
            .expect("spec already validated");
        for (dst, src) in m.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        for (dst, src) in m.blocks.iter_mut().zip(&self.blocks) {
            dst.gcn.scale = T::of(src.gcn.scale.to_f64_lossy());
            if let (Some(d), Some(s)) = (&mut dst.pool, &src.pool) {
                d.scale = T::of(s.scale.to_f64_lossy());
            }
        }
        m
    }
}

pub fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
