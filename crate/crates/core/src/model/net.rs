use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{GCNNConfig, SamplingMode};
use crate::error::{Error, Result};
use crate::gconv::{apply_kernel, invariant_project, GFeatureMap};
use crate::kernelnet::{Factorization, KernelNet, KernelRole, KernelSpec};
use crate::lie::{GroupElement, SubgroupGrid};
use crate::tensor::{BatchStats, BnMode, Bound, Graph, ParamId, ParamStore, Reduce, Tensor, Var};

/// Per-channel affine normalization with running statistics.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::ones(&[c]))?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[c]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[c]))?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn apply(
        &self,
        g: &mut Graph,
        p: &Bound,
        store: &ParamStore,
        x: Var,
        train: bool,
        eps: f64,
        updates: &mut Vec<(BatchNorm, BatchStats)>,
    ) -> Result<Var> {
        let mode = if train {
            BnMode::Train
        } else {
            BnMode::Eval {
                mean: store.get(self.running_mean).data(),
                var: store.get(self.running_var).data(),
            }
        };
        let (y, stats) = g.batch_norm(x, p.var(self.gamma), p.var(self.beta), eps, mode)?;
        if let Some(s) = stats {
            updates.push((*self, s));
        }
        Ok(y)
    }

    /// Exponential moving average with unbiased batch variance.
    pub fn update_running(&self, store: &mut ParamStore, stats: &BatchStats, momentum: f64) {
        let correction = stats.count as f64 / (stats.count as f64 - 1.0).max(1.0);
        for (r, &m) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, &v) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - momentum) * *r + momentum * v * correction;
        }
    }
}

/// Two group convolutions with normalization, plus a 1×1 group-convolution
/// shortcut that re-grids the block input onto the output grid.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: KernelNet,
    pub bn1: BatchNorm,
    pub conv2: KernelNet,
    pub bn2: BatchNorm,
    pub shortcut: KernelNet,
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fin: usize, fout: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (fin as f64).sqrt();
        Ok(Self {
            w: store.add(&format!("{name}.w"), Tensor::uniform(&[fout, fin], -bound, bound, rng))?,
            b: store.add(&format!("{name}.b"), Tensor::uniform(&[fout], -bound, bound, rng))?,
        })
    }
}

/// Grids for the lifting layer, the two convolutions of block 1 and the two
/// of block 2.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrids(pub [SubgroupGrid; 5]);

/// Intermediate feature maps of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub lifted: GFeatureMap,
    pub block1: GFeatureMap,
    pub block2: GFeatureMap,
    pub logits: Var,
}

/// Lift → BN → ReLU → block(C₁) → 2×2 max-pool → block(C₂) → max over H and
/// space → linear + BN + ReLU → linear.
#[derive(Clone, Debug)]
pub struct Model {
    config: GCNNConfig,
    pub store: ParamStore,
    lift: KernelNet,
    bn_lift: BatchNorm,
    blocks: [ResBlock; 2],
    fc1: Linear,
    bn_fc: BatchNorm,
    fc2: Linear,
}

pub fn build_model(cfg: &GCNNConfig) -> Result<Model> {
    cfg.validate()?;
    let h = cfg.subgroup()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let spec = |role, c_in, c_out, k| KernelSpec {
        subgroup: h,
        role,
        c_in,
        c_out,
        k,
        siren: cfg.siren.clone(),
        scale_support: cfg.scale_support,
    };
    let [c0, c1, c2] = cfg.channels;
    let k = cfg.stencil;
    let lift = KernelNet::init(&mut store, "lift", spec(KernelRole::Lift, 1, c0, k), &mut rng)?;
    let bn_lift = BatchNorm::new(&mut store, "lift.bn", c0)?;
    let mut block = |name: &str, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng| -> Result<ResBlock> {
        let f = KernelRole::Group(cfg.factorization);
        Ok(ResBlock {
            conv1: KernelNet::init(&mut store, &format!("{name}.conv1"), spec(f, c_in, c_out, k), rng)?,
            bn1: BatchNorm::new(&mut store, &format!("{name}.bn1"), c_out)?,
            conv2: KernelNet::init(&mut store, &format!("{name}.conv2"), spec(f, c_out, c_out, k), rng)?,
            bn2: BatchNorm::new(&mut store, &format!("{name}.bn2"), c_out)?,
            shortcut: KernelNet::init(
                &mut store,
                &format!("{name}.shortcut"),
                spec(KernelRole::Group(Factorization::Nonseparable), c_in, c_out, 1),
                rng,
            )?,
        })
    };
    let b1 = block("block1", c0, c1, &mut rng)?;
    let b2 = block("block2", c1, c2, &mut rng)?;
    let fc1 = Linear::new(&mut store, "head.fc1", c2, cfg.head_hidden, &mut rng)?;
    let bn_fc = BatchNorm::new(&mut store, "head.bn", cfg.head_hidden)?;
    let fc2 = Linear::new(&mut store, "head.fc2", cfg.head_hidden, cfg.classes, &mut rng)?;
    Ok(Model {
        config: cfg.clone(),
        store,
        lift,
        bn_lift,
        blocks: [b1, b2],
        fc1,
        bn_fc,
        fc2,
    })
}

/// 1×1 group convolution mapping `f` onto `out_grid`.
pub fn group_shortcut(
    g: &mut Graph,
    p: &Bound,
    kernel: &KernelNet,
    f: &GFeatureMap,
    out_grid: &SubgroupGrid,
    padding: crate::tensor::Padding,
) -> Result<GFeatureMap> {
    let in_grid = f
        .grid
        .as_ref()
        .ok_or_else(|| Error::arg("shortcut input must live on the group"))?;
    let sk = kernel.sample(g, p, out_grid, Some(in_grid))?;
    apply_kernel(g, f, &sk, padding)
}

impl Model {
    pub fn config(&self) -> &GCNNConfig {
        &self.config
    }

    pub fn lift_kernel(&self) -> &KernelNet {
        &self.lift
    }

    pub fn blocks(&self) -> &[ResBlock; 2] {
        &self.blocks
    }

    /// The four group-convolution kernels, shortcuts excluded.
    pub fn group_kernels(&self) -> [&KernelNet; 4] {
        [
            &self.blocks[0].conv1,
            &self.blocks[0].conv2,
            &self.blocks[1].conv1,
            &self.blocks[1].conv2,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn uniform_grids(&self) -> Result<LayerGrids> {
        let u = self.config.uniform_grid()?;
        Ok(LayerGrids([u.clone(), u.clone(), u.clone(), u.clone(), u]))
    }

    /// Every layer grid left-multiplied by `h`.
    pub fn transformed_grids(&self, h: &GroupElement) -> Result<LayerGrids> {
        let u = self.config.uniform_grid()?.perturb_by(h)?;
        Ok(LayerGrids([u.clone(), u.clone(), u.clone(), u.clone(), u]))
    }

    /// Uniform grids in discretize mode, independently perturbed ones in
    /// random mode.
    pub fn training_grids<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LayerGrids> {
        match self.config.sampling {
            SamplingMode::Discretize => self.uniform_grids(),
            SamplingMode::Random => {
                let u = self.config.uniform_grid()?;
                let mut draw = || u.random_perturb(rng, self.config.allow_noncompact);
                Ok(LayerGrids([draw()?, draw()?, draw()?, draw()?, draw()?]))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        g: &mut Graph,
        p: &Bound,
        blk: &ResBlock,
        x: &GFeatureMap,
        grids: [&SubgroupGrid; 2],
        train: bool,
        updates: &mut Vec<(BatchNorm, BatchStats)>,
    ) -> Result<GFeatureMap> {
        let pad = self.config.padding;
        let eps = self.config.bn_eps;
        let in_grid = x.grid.as_ref().unwrap();
        let k1 = blk.conv1.sample(g, p, grids[0], Some(in_grid))?;
        let h = apply_kernel(g, x, &k1, pad)?;
        let v = blk.bn1.apply(g, p, &self.store, h.value, train, eps, updates)?;
        let v = g.relu(v);
        let h = GFeatureMap::on_grid(v, grids[0].clone());
        let k2 = blk.conv2.sample(g, p, grids[1], Some(grids[0]))?;
        let h = apply_kernel(g, &h, &k2, pad)?;
        let v = blk.bn2.apply(g, p, &self.store, h.value, train, eps, updates)?;
        let skip = group_shortcut(g, p, &blk.shortcut, x, grids[1], pad)?;
        let v = g.add(v, skip.value)?;
        let v = g.relu(v);
        Ok(GFeatureMap::on_grid(v, grids[1].clone()))
    }

    /// Full forward pass on `images: (B, 1, Y, X)`. Returns the trace and the
    /// batch statistics of every normalization layer (training mode only).
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        images: Var,
        grids: &LayerGrids,
        train: bool,
    ) -> Result<(ForwardTrace, Vec<(BatchNorm, BatchStats)>)> {
        let pad = self.config.padding;
        let eps = self.config.bn_eps;
        let mut updates = Vec::new();
        let [g1, g2, g3, g4, g5] = &grids.0;

        let lk = self.lift.sample(g, p, g1, None)?;
        let x = GFeatureMap::image(images);
        let l = apply_kernel(g, &x, &lk, pad)?;
        let v = self.bn_lift.apply(g, p, &self.store, l.value, train, eps, &mut updates)?;
        let v = g.relu(v);
        let lifted = GFeatureMap::on_grid(v, g1.clone());

        let b1 = self.block(g, p, &self.blocks[0], &lifted, [g2, g3], train, &mut updates)?;
        let [b, c, nh, y, xw]: [usize; 5] = g.shape(b1.value).try_into().unwrap();
        let flat = g.reshape(b1.value, &[b, c * nh, y, xw])?;
        let pooled = g.max_pool2d(flat, 2)?;
        let pooled = g.reshape(pooled, &[b, c, nh, y / 2, xw / 2])?;
        let pooled = GFeatureMap::on_grid(pooled, g3.clone());
        let b2 = self.block(g, p, &self.blocks[1], &pooled, [g4, g5], train, &mut updates)?;

        let feat = invariant_project(g, &b2, Reduce::Max, true)?;
        let h = g.linear(feat, p.var(self.fc1.w), Some(p.var(self.fc1.b)), 1.0)?;
        let h = self.bn_fc.apply(g, p, &self.store, h, train, eps, &mut updates)?;
        let h = g.relu(h);
        let logits = g.linear(h, p.var(self.fc2.w), Some(p.var(self.fc2.b)), 1.0)?;
        Ok((
            ForwardTrace {
                lifted,
                block1: b1,
                block2: b2,
                logits,
            },
            updates,
        ))
    }

    /// Evaluation-mode logits on the given grids.
    pub fn logits(&self, images: &Tensor, grids: &LayerGrids) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let x = g.constant(images.clone());
        let (trace, _) = self.forward(&mut g, &p, x, grids, false)?;
        Ok(g.value(trace.logits).clone())
    }
}
