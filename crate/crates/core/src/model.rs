//! Shared-bottom multi-task network: embeddings and shared hidden layers
//! feeding one head sub-network per task, each ending in a single logit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, InputLayout};
use crate::error::{Error, Result};
use crate::tensor::{InitScheme, ParamGroup, ParamId, ParamSet, ParamTensor, Tape, Var};

/// Layer sizes of the shared bottom and of every head. Hidden layers use relu.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub num_tasks: usize,
    pub embedding_dim: usize,
    pub shared_layers: Vec<usize>,
    pub head_layers: Vec<usize>,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::Config("num_tasks must be at least 1".into()));
        }
        if self.shared_layers.is_empty() {
            return Err(Error::Config("at least one shared layer is required".into()));
        }
        if self.shared_layers.iter().chain(&self.head_layers).any(|&s| s == 0) {
            return Err(Error::Config("layer sizes must be at least 1".into()));
        }
        Ok(())
    }

    /// The same architecture with a single head.
    pub fn single_task(&self) -> ArchConfig {
        ArchConfig {
            num_tasks: 1,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

/// Logit and probability nodes of one task, each `batch x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskOutput {
    pub logit: Var,
    pub prob: Var,
}

#[derive(Clone, Debug)]
pub struct MtlModel {
    arch: ArchConfig,
    layout: InputLayout,
    params: ParamSet,
    embeddings: Vec<ParamId>,
    shared: Vec<Dense>,
    heads: Vec<Vec<Dense>>,
}

/// Initializes a model for inputs shaped like `layout`.
///
/// Weights and embedding tables are drawn uniform-fan-in, biases start at zero.
/// The first shared layer sees `dense + embedding_dim * categorical` inputs.
pub fn build_model(arch: &ArchConfig, layout: &InputLayout, seed: u64) -> Result<MtlModel> {
    arch.validate()?;
    if layout.is_empty() {
        return Err(Error::Config("feature spec declares no inputs".into()));
    }
    if !layout.vocab_sizes.is_empty() && arch.embedding_dim == 0 {
        return Err(Error::Config(
            "embedding_dim must be at least 1 with categorical inputs".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut embeddings = Vec::new();
    for (c, &vocab) in layout.vocab_sizes.iter().enumerate() {
        let p = ParamTensor::init(
            format!("embedding.{c}"),
            ParamGroup::Shared,
            (vocab, arch.embedding_dim),
            InitScheme::UniformFanIn,
            &mut rng,
        )?;
        embeddings.push(params.push(p));
    }
    let mut dense_layer = |params: &mut ParamSet, name: String, group, fan_in, fan_out| -> Result<Dense> {
        let w = ParamTensor::init(
            format!("{name}.w"),
            group,
            (fan_in, fan_out),
            InitScheme::UniformFanIn,
            &mut rng,
        )?;
        let b = ParamTensor::init(format!("{name}.b"), group, (1, fan_out), InitScheme::Zeros, &mut rng)?;
        Ok(Dense {
            weight: params.push(w),
            bias: params.push(b),
        })
    };
    let mut width = layout.dense + arch.embedding_dim * layout.vocab_sizes.len();
    let mut shared = Vec::new();
    for (i, &size) in arch.shared_layers.iter().enumerate() {
        shared.push(dense_layer(
            &mut params,
            format!("shared.{i}"),
            ParamGroup::Shared,
            width,
            size,
        )?);
        width = size;
    }
    let bottom = width;
    let mut heads = Vec::new();
    for t in 0..arch.num_tasks {
        let mut layers = Vec::new();
        let mut w = bottom;
        for (i, &size) in arch.head_layers.iter().chain(&[1]).enumerate() {
            layers.push(dense_layer(
                &mut params,
                format!("head{t}.{i}"),
                ParamGroup::Task(t),
                w,
                size,
            )?);
            w = size;
        }
        heads.push(layers);
    }
    Ok(MtlModel {
        arch: arch.clone(),
        layout: layout.clone(),
        params,
        embeddings,
        shared,
        heads,
    })
}

impl MtlModel {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layout(&self) -> &InputLayout {
        &self.layout
    }

    pub fn num_tasks(&self) -> usize {
        self.arch.num_tasks
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Parameters of one group, in construction order.
    pub fn group_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, p)| p.group() == group)
            .map(|(id, _)| id)
            .collect()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.dense().cols() != self.layout.dense {
            return Err(Error::shape(format!(
                "batch has {} dense columns, model expects {}",
                batch.dense().cols(),
                self.layout.dense
            )));
        }
        if batch.categorical().len() != self.layout.vocab_sizes.len() {
            return Err(Error::shape(format!(
                "batch has {} categorical columns, model expects {}",
                batch.categorical().len(),
                self.layout.vocab_sizes.len()
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`, which must read this model's parameters.
    pub fn forward(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<Vec<TaskOutput>> {
        if !std::ptr::eq(tape.params(), &self.params) {
            return Err(Error::Contract("tape was built over a different parameter set".into()));
        }
        self.check_batch(batch)?;
        let n = batch.len();
        let first = self.shared[0];
        let w0 = tape.param(first.weight);
        let mut parts = Vec::new();
        if self.layout.dense > 0 {
            let x = tape.constant(batch.dense().clone());
            let w = tape.row_slice(w0, 0, self.layout.dense)?;
            parts.push(tape.matmul(x, w)?);
        }
        // Each embedding block is projected through its slice of the first
        // weight before the lookup, so the product is vocab x hidden, not batch x hidden.
        let e = self.arch.embedding_dim;
        for (c, (&table, ids)) in self.embeddings.iter().zip(batch.categorical()).enumerate() {
            let emb = tape.param(table);
            let w = tape.row_slice(w0, self.layout.dense + c * e, e)?;
            let projected = tape.matmul(emb, w)?;
            parts.push(tape.gather_rows(projected, ids)?);
        }
        let mut h = parts[0];
        for &p in &parts[1..] {
            h = tape.add(h, p)?;
        }
        let b0 = tape.param(first.bias);
        h = tape.add_row_bias(h, b0)?;
        h = tape.relu(h);
        for layer in &self.shared[1..] {
            h = dense_forward(tape, h, *layer)?;
            h = tape.relu(h);
        }
        let mut outputs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut z = h;
            for (i, layer) in head.iter().enumerate() {
                z = dense_forward(tape, z, *layer)?;
                if i + 1 < head.len() {
                    z = tape.relu(z);
                }
            }
            debug_assert_eq!(tape.shape(z), (n, 1));
            let prob = tape.sigmoid(z);
            outputs.push(TaskOutput { logit: z, prob });
        }
        Ok(outputs)
    }

    /// Per-task probabilities without keeping the graph.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(&self.params);
        let outputs = self.forward(&mut tape, batch)?;
        Ok(outputs.iter().map(|o| tape.value(o.prob).as_slice().to_vec()).collect())
    }
}

fn dense_forward(tape: &mut Tape<'_>, x: Var, layer: Dense) -> Result<Var> {
    let w = tape.param(layer.weight);
    let b = tape.param(layer.bias);
    let z = tape.matmul(x, w)?;
    tape.add_row_bias(z, b)
}
