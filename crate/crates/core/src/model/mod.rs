//! Toy multi-exit MLP: blocks of ReLU dense layers, one affine head per block.
//!
//! Exit `c` consumes blocks `1..=c` and head `c`. Costs follow a dense-layer
//! convention of `2·in·out + out` FLOPs (one multiply-accumulate is 2 FLOPs,
//! one bias add is 1).

mod checkpoint;

pub use checkpoint::{load, save, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shape of a multi-exit network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub class_count: usize,
    /// Hidden layer widths of each block; block `c` feeds block `c + 1`.
    pub blocks: Vec<Vec<usize>>,
}

impl ArchSpec {
    /// `exits` blocks of `layers` hidden layers each, all of width `width`.
    pub fn uniform(input_dim: usize, class_count: usize, exits: usize, layers: usize, width: usize) -> Self {
        ArchSpec {
            input_dim,
            class_count,
            blocks: vec![vec![width; layers]; exits],
        }
    }

    pub fn exit_count(&self) -> usize {
        self.blocks.len()
    }

    /// Output width of block `c` (0-based).
    fn block_out(&self, c: usize) -> usize {
        self.blocks[..=c]
            .iter()
            .rev()
            .find_map(|b| b.last().copied())
            .unwrap_or(self.input_dim)
    }

    fn block_in(&self, c: usize) -> usize {
        if c == 0 {
            self.input_dim
        } else {
            self.block_out(c - 1)
        }
    }

    /// Cumulative FLOPs `F_c` of every exit.
    pub fn exit_costs(&self) -> Vec<f64> {
        let mut running = 0.0;
        (0..self.exit_count())
            .map(|c| {
                running += block_flops(self.block_in(c), &self.blocks[c]);
                running + dense_flops(self.block_out(c), self.class_count)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.class_count < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", self.class_count)));
        }
        if self.exit_count() < 2 {
            return Err(Error::config(format!("need at least 2 exits, got {}", self.exit_count())));
        }
        if self.blocks.iter().flatten().any(|&w| w == 0) {
            return Err(Error::config("layer widths must be positive"));
        }
        let costs = self.exit_costs();
        if costs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(format!("exit costs must strictly increase, got {costs:?}")));
        }
        Ok(())
    }
}

/// FLOPs of a dense `input -> output` layer.
pub fn dense_flops(input: usize, output: usize) -> f64 {
    (2 * input * output + output) as f64
}

/// FLOPs of a chain of dense layers starting from width `input`; 0 for an empty block.
pub fn block_flops(input: usize, widths: &[usize]) -> f64 {
    let mut prev = input;
    let mut total = 0.0;
    for &w in widths {
        total += dense_flops(prev, w);
        prev = w;
    }
    total
}

/// Affine layer `x·W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    /// Uniform in `±sqrt(6 / (in + out))`, zero bias.
    pub fn xavier(input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output).map(|_| rng.random_range(-limit..limit)).collect();
        Ok(Dense {
            w: Tensor::new(vec![input, output], data)?,
            b: Tensor::zeros(&[1, output])?,
        })
    }

    pub fn zeros(input: usize, output: usize) -> Result<Self> {
        Ok(Dense {
            w: Tensor::zeros(&[input, output])?,
            b: Tensor::zeros(&[1, output])?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[1]
    }

    fn check(&self, input: usize, output: usize) -> Result<()> {
        if self.w.shape() != [input, output] || self.b.shape() != [1, output] {
            return Err(Error::data(format!(
                "dense layer has shapes {:?}/{:?}, expected [{input}, {output}]/[1, {output}]",
                self.w.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

/// Graph handles of one [`Dense`] layer.
#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

impl DenseVars {
    pub fn bind(g: &mut Graph, layer: &Dense, trainable: bool) -> Self {
        let mk = |g: &mut Graph, t: &Tensor| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
        DenseVars {
            w: mk(g, &layer.w),
            b: mk(g, &layer.b),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let rows = g.value(x).rows();
        let xw = g.matmul(x, self.w)?;
        let b = g.repeat_rows(self.b, rows)?;
        g.add(xw, b)
    }
}

/// Multi-exit network parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiExitModel {
    arch: ArchSpec,
    blocks: Vec<Vec<Dense>>,
    heads: Vec<Dense>,
}

/// Graph handles for every parameter, in [`MultiExitModel::parameters`] order.
#[derive(Clone, Debug)]
pub struct BoundModel {
    blocks: Vec<Vec<DenseVars>>,
    heads: Vec<DenseVars>,
}

impl BoundModel {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in self.blocks.iter().flatten().chain(&self.heads) {
            out.push(l.w);
            out.push(l.b);
        }
        out
    }

    /// Logits `[n, K]` of every exit.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.heads.len());
        for (block, head) in self.blocks.iter().zip(&self.heads) {
            for layer in block {
                let z = layer.apply(g, h)?;
                h = g.relu(z)?;
            }
            outs.push(head.apply(g, h)?);
        }
        Ok(outs)
    }
}

impl MultiExitModel {
    /// Seeded Xavier-uniform initialization.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(arch, |i, o| Dense::xavier(i, o, &mut rng))
    }

    /// All parameters zero; every exit then emits zero logits.
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        Self::build(arch, Dense::zeros)
    }

    fn build(arch: ArchSpec, mut make: impl FnMut(usize, usize) -> Result<Dense>) -> Result<Self> {
        let mut blocks = Vec::with_capacity(arch.exit_count());
        let mut heads = Vec::with_capacity(arch.exit_count());
        for c in 0..arch.exit_count() {
            let mut prev = arch.block_in(c);
            let mut layers = Vec::new();
            for &w in &arch.blocks[c] {
                layers.push(make(prev, w)?);
                prev = w;
            }
            blocks.push(layers);
            heads.push(make(prev, arch.class_count)?);
        }
        Ok(MultiExitModel { arch, blocks, heads })
    }

    /// Checks parameter shapes against the architecture.
    pub fn from_parts(arch: ArchSpec, blocks: Vec<Vec<Dense>>, heads: Vec<Dense>) -> Result<Self> {
        arch.validate()?;
        let m = MultiExitModel { arch, blocks, heads };
        m.check_shapes()?;
        Ok(m)
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let arch = &self.arch;
        if self.blocks.len() != arch.exit_count() || self.heads.len() != arch.exit_count() {
            return Err(Error::data(format!(
                "model has {} blocks and {} heads, arch has {} exits",
                self.blocks.len(),
                self.heads.len(),
                arch.exit_count()
            )));
        }
        for c in 0..arch.exit_count() {
            if self.blocks[c].len() != arch.blocks[c].len() {
                return Err(Error::data(format!("block {} has the wrong layer count", c + 1)));
            }
            let mut prev = arch.block_in(c);
            for (layer, &w) in self.blocks[c].iter().zip(&arch.blocks[c]) {
                layer.check(prev, w)?;
                prev = w;
            }
            self.heads[c].check(prev, arch.class_count)?;
        }
        for t in self.parameters() {
            if !t.all_finite() {
                return Err(Error::data("model has a non-finite parameter"));
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn exit_count(&self) -> usize {
        self.arch.exit_count()
    }

    pub fn class_count(&self) -> usize {
        self.arch.class_count
    }

    pub fn exit_costs(&self) -> Vec<f64> {
        self.arch.exit_costs()
    }

    pub fn block(&self, c: usize) -> &[Dense] {
        &self.blocks[c]
    }

    pub fn head(&self, c: usize) -> &Dense {
        &self.heads[c]
    }

    /// Weights then bias of every block layer, then of every head.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.blocks
            .iter()
            .flatten()
            .chain(&self.heads)
            .flat_map(|l| [&l.w, &l.b])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flatten()
            .chain(self.heads.iter_mut())
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    /// Mutable access to block `c`'s layers and head, for perturbation tests.
    pub fn exit_parameters_mut(&mut self, c: usize) -> Vec<&mut Tensor> {
        self.blocks[c]
            .iter_mut()
            .chain(std::iter::once(&mut self.heads[c]))
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    /// Registers every parameter in `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        BoundModel {
            blocks: self
                .blocks
                .iter()
                .map(|b| b.iter().map(|l| DenseVars::bind(g, l, trainable)).collect())
                .collect(),
            heads: self.heads.iter().map(|l| DenseVars::bind(g, l, trainable)).collect(),
        }
    }

    /// Per-exit logit matrices `[n, K]` for a batch `x: [n, D]`.
    pub fn forward_all(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.shape().len() != 2 || x.last_dim() != self.arch.input_dim {
            return Err(Error::config(format!(
                "input shape {:?} does not match model input width {}",
                x.shape(),
                self.arch.input_dim
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let outs = bound.forward(&mut g, xv)?;
        Ok(outs.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Per-exit logits in sample-major order: `out[i][c]` is exit `c`'s logits for row `i`.
    pub fn logits_by_sample(&self, x: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
        let per_exit = self.forward_all(x)?;
        Ok((0..x.rows())
            .map(|i| per_exit.iter().map(|t| t.row(i).to_vec()).collect())
            .collect())
    }
}
