use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, InputLayout, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// How group membership is exposed to the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupFeature {
    Hidden,
    /// Dense column 0 holds the group as 0.0 / 1.0.
    #[default]
    Dense,
    /// One categorical column with vocabulary {OOV, group 0, group 1}.
    Categorical,
}

/// Generative model for synthetic multi-task data.
///
/// Group `a ~ Bernoulli(group_fraction)`. Label `t` is `u_t < positive_rates[t][a]`,
/// where with probability `label_correlation` all tasks share one uniform draw
/// `u_t = u_0`, so marginal rates are exact while labels overlap. Each signal
/// column `j` carries `±separation/2` for the label of task `j % T`, plus unit
/// Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub num_tasks: usize,
    /// Signal columns, not counting a dense group column.
    pub dense_dim: usize,
    pub group_fraction: f64,
    /// `positive_rates[t] = [rate in group 0, rate in group 1]`.
    pub positive_rates: Vec<[f64; 2]>,
    pub label_correlation: f64,
    pub separation: f64,
    #[serde(default)]
    pub group_feature: GroupFeature,
    /// Probability that a row's sensitive value is recorded as missing.
    #[serde(default)]
    pub sensitive_missing: f64,
}

impl SynthSpec {
    /// Same rates in both groups.
    pub fn symmetric(n: usize, rates: &[f64]) -> Self {
        SynthSpec {
            n,
            num_tasks: rates.len(),
            dense_dim: 2 * rates.len(),
            group_fraction: 0.5,
            positive_rates: rates.iter().map(|&r| [r, r]).collect(),
            label_correlation: 0.5,
            separation: 2.0,
            group_feature: GroupFeature::Dense,
            sensitive_missing: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n == 0 || self.num_tasks == 0 {
            return Err(Error::Config("synthetic data needs n >= 1 and T >= 1".into()));
        }
        if self.positive_rates.len() != self.num_tasks {
            return Err(Error::Config(format!(
                "{} rate pairs for {} tasks",
                self.positive_rates.len(),
                self.num_tasks
            )));
        }
        let probs = self.positive_rates.iter().flatten().chain([
            &self.group_fraction,
            &self.label_correlation,
            &self.sensitive_missing,
        ]);
        for &p in probs {
            if !unit(p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.dense_dim == 0 && self.group_feature != GroupFeature::Dense {
            return Err(Error::Config("synthetic data would have no dense features".into()));
        }
        if !self.separation.is_finite() {
            return Err(Error::Config("separation must be finite".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> InputLayout {
        let group_col = usize::from(self.group_feature == GroupFeature::Dense);
        InputLayout {
            dense: self.dense_dim + group_col,
            vocab_sizes: if self.group_feature == GroupFeature::Categorical {
                vec![3]
            } else {
                Vec::new()
            },
        }
    }
}

/// Draws a dataset from `spec`. The split tag is `Train`; use `with_split` for test data.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = spec.layout();
    let t = spec.num_tasks;
    let mut dense = Vec::with_capacity(spec.n * layout.dense);
    let mut cat = Vec::new();
    let mut labels = Vec::with_capacity(spec.n * t);
    let mut sensitive = Vec::with_capacity(spec.n);
    let mut row_labels = vec![0u8; t];
    for _ in 0..spec.n {
        let a = usize::from(rng.gen::<f64>() < spec.group_fraction);
        let shared_u: f64 = rng.gen();
        for (task, y) in row_labels.iter_mut().enumerate() {
            let u = if rng.gen::<f64>() < spec.label_correlation {
                shared_u
            } else {
                rng.gen()
            };
            *y = u8::from(u < spec.positive_rates[task][a]);
        }
        match spec.group_feature {
            GroupFeature::Dense => dense.push(a as f64),
            GroupFeature::Categorical => cat.push(a + 1),
            GroupFeature::Hidden => {}
        }
        for j in 0..spec.dense_dim {
            let sign = if row_labels[j % t] == 1 { 1.0 } else { -1.0 };
            let noise: f64 = rng.sample(StandardNormal);
            dense.push(sign * spec.separation / 2.0 + noise);
        }
        labels.extend_from_slice(&row_labels);
        let missing = spec.sensitive_missing > 0.0 && rng.gen::<f64>() < spec.sensitive_missing;
        sensitive.push((!missing).then_some(a as u8));
    }
    let categorical = if spec.group_feature == GroupFeature::Categorical {
        vec![cat]
    } else {
        Vec::new()
    };
    let dense = Matrix::from_vec(spec.n, layout.dense, dense)?;
    Dataset::new(layout, dense, categorical, labels, t, sensitive, Split::Train)
}
