//! Independent oracles and end-to-end checks shared by the integration tests
//! and the acceptance suite. Each `check_*` returns a one-line summary on
//! success and a description of the first mismatch on failure.

#![allow(dead_code)]

use std::collections::BTreeSet;

use mtfair_core::data::{synth_generate, Batch, Dataset, GroupFeature, SynthSpec};
use mtfair_core::losses::{
    decompose_fairness, fairness_loss, subset_select, task_fairness, ExampleSubset, FairnessLoss, FairnessLossKind,
    FairnessTarget, SubsetKind,
};
use mtfair_core::metrics::{aggregate, evaluate_model, StlBaselines, TaskEval};
use mtfair_core::model::{build_model, ArchConfig, MtlModel};
use mtfair_core::pareto::{frontier, frontier_quality, ParetoPoint};
use mtfair_core::tensor::{GradMap, Matrix, ParamGroup, ParamId, ParamSet, ParamTensor, Tape, Var};
use mtfair_core::trainer::{train, train_step, Method, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-7;

pub const ALL_KINDS: [FairnessLossKind; 3] = [
    FairnessLossKind::Correlation,
    FairnessLossKind::Mmd,
    FairnessLossKind::SoftFprGap,
];

pub const ALL_TARGETS: [FairnessTarget; 3] = [
    FairnessTarget::EqualOpportunityFpr,
    FairnessTarget::EqualOpportunityTpr,
    FairnessTarget::EqualizedOdds,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

// ---------------------------------------------------------------------------
// Finite differences

pub fn grads_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= FD_ABS_FLOOR || diff <= FD_REL_TOL * analytic.abs().max(numeric.abs())
}

/// Compares `analytic` against central differences of `eval` for every
/// parameter entry reachable through `params_of`. Returns the number of entries checked.
pub fn fd_compare<H>(
    holder: &mut H,
    params_of: fn(&mut H) -> &mut ParamSet,
    eval: impl Fn(&H) -> f64,
    analytic: &GradMap,
    label: &str,
) -> Result<usize, String> {
    let ids: Vec<ParamId> = params_of(holder).ids().collect();
    let mut checked = 0;
    for id in ids {
        let len = params_of(holder).get(id).value.len();
        for k in 0..len {
            let orig = params_of(holder).get(id).value.as_slice()[k];
            params_of(holder).get_mut(id).value.as_mut_slice()[k] = orig + FD_STEP;
            let up = eval(holder);
            params_of(holder).get_mut(id).value.as_mut_slice()[k] = orig - FD_STEP;
            let down = eval(holder);
            params_of(holder).get_mut(id).value.as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).map_or(0.0, |g| g.as_slice()[k]);
            if !grads_close(a, numeric) {
                let name = params_of(holder).get(id).name().to_string();
                return Err(format!("{label}: {name}[{k}] analytic {a:e} vs numeric {numeric:e}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// A randomly shaped graph touching every tape op, over five parameters with entries in [-2, 2].
pub struct GraphCase {
    pub params: ParamSet,
    ids: Vec<ParamId>,
    n: usize,
    input: Matrix,
    chain: Vec<u8>,
    pow_exp: f64,
    factor: f64,
    gather: Vec<usize>,
    lookup: Vec<usize>,
    slice: (usize, usize),
    subset: Vec<usize>,
    gamma: f64,
}

pub const UNARY_OPS: u8 = 8;

impl GraphCase {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let n = r.gen_range(2..=5);
        let k = r.gen_range(1..=3);
        let m = r.gen_range(1..=3);
        let v = r.gen_range(2..=4);
        let mut params = ParamSet::new();
        let shapes = [("a", n, k), ("b", k, m), ("bias", 1, m), ("table", v, m), ("col", n, 1)];
        let mut ids = Vec::new();
        for (name, rows, cols) in shapes {
            let value = random_matrix(&mut r, rows, cols, -2.0, 2.0);
            ids.push(params.push(ParamTensor::new(name, ParamGroup::Shared, value)));
        }
        // Every unary op appears in some graph: graph `seed` always includes op `seed % 8`.
        let mut chain = vec![(seed % u64::from(UNARY_OPS)) as u8];
        for _ in 0..r.gen_range(2..=4) {
            chain.push(r.gen_range(0..UNARY_OPS));
        }
        let start = r.gen_range(0..n);
        let subset_len = r.gen_range(1..=n);
        GraphCase {
            input: random_matrix(&mut r, n, m, -1.0, 1.0),
            pow_exp: [-0.5, 1.5, 2.0, 3.0][r.gen_range(0..4)],
            factor: r.gen_range(-1.5..1.5),
            gather: (0..n).map(|_| r.gen_range(0..n)).collect(),
            lookup: (0..n).map(|_| r.gen_range(0..v)).collect(),
            slice: (start, r.gen_range(1..=n - start)),
            subset: (0..subset_len).map(|_| r.gen_range(0..n)).collect(),
            gamma: -r.gen_range(0.2..2.0),
            params,
            ids,
            n,
            chain,
        }
    }

    fn unary(&self, tape: &mut Tape<'_>, x: Var, op: u8) -> Var {
        match op {
            0 => tape.relu(x),
            1 => tape.sigmoid(x),
            2 => {
                let s = tape.scale(x, 0.5);
                tape.exp(s)
            }
            3 => tape.abs(x),
            4 => {
                let s = tape.sigmoid(x);
                tape.pow(s, self.pow_exp)
            }
            5 => tape.scale(x, self.factor),
            6 => tape.clamp(x, -1.0, 1.0),
            _ => {
                let s = tape.sigmoid(x);
                tape.ln(s)
            }
        }
    }

    pub fn build(&self, tape: &mut Tape<'_>) -> Var {
        let p: Vec<Var> = self.ids.iter().map(|&id| tape.param(id)).collect();
        let (a, b, bias, table, col) = (p[0], p[1], p[2], p[3], p[4]);
        let mut h = tape.matmul(a, b).unwrap();
        h = tape.add_row_bias(h, bias).unwrap();
        for &op in &self.chain {
            h = self.unary(tape, h, op);
        }
        let e = tape.embedding(table, &self.lookup).unwrap();
        let g = tape.gather_rows(h, &self.gather).unwrap();
        let prod = tape.mul(g, e).unwrap();
        let mut z = tape.sub(prod, h).unwrap();
        let x = tape.input(self.input.clone());
        z = tape.add(z, x).unwrap();
        let c = tape.concat_cols(&[z, col]).unwrap();
        let ct = tape.transpose(c);
        let gram = tape.matmul(ct, c).unwrap();
        let mr = tape.mean_rows(c).unwrap();
        let br = tape.broadcast_rows(mr, self.n).unwrap();
        let d = tape.sub(c, br).unwrap();
        let rs = tape.row_slice(d, self.slice.0, self.slice.1).unwrap();
        let sq = tape.mul(rs, rs).unwrap();
        let u = tape.sigmoid(col);
        let v = tape.gather_rows(u, &self.subset).unwrap();
        let k_uv = tape.kernel_mean(u, v, self.gamma).unwrap();
        let k_uu = tape.kernel_mean(u, u, self.gamma).unwrap();
        let m_sq = tape.mean_all(sq).unwrap();
        let m_gram = tape.mean_all(gram).unwrap();
        let shift = tape.scalar(0.25);
        tape.weighted_sum(&[(0.3, m_sq), (0.05, m_gram), (1.0, k_uv), (0.7, k_uu), (1.0, shift)])
            .unwrap()
    }

    pub fn value(&self) -> f64 {
        let mut tape = Tape::new(&self.params);
        let root = self.build(&mut tape);
        tape.value(root).item()
    }

    pub fn analytic(&self) -> GradMap {
        let mut tape = Tape::new(&self.params);
        let root = self.build(&mut tape);
        tape.backward_params(root, |_| true).unwrap()
    }
}

pub fn check_random_graph_gradients(count: u64) -> Check {
    let mut checked = 0;
    for seed in 0..count {
        let mut case = GraphCase::random(seed);
        let analytic = case.analytic();
        checked += fd_compare(
            &mut case,
            |c| &mut c.params,
            GraphCase::value,
            &analytic,
            &format!("graph {seed}"),
        )?;
    }
    Ok(format!("{count} graphs, {checked} parameter entries"))
}

/// A small two-task model on a batch where both groups occur in every label subset.
pub struct ModelCase {
    pub model: MtlModel,
    pub batch: Batch,
}

impl ModelCase {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let n = 16;
        loop {
            let labels: Vec<Vec<u8>> = (0..n).map(|_| vec![r.gen_range(0..2), r.gen_range(0..2)]).collect();
            let sensitive: Vec<Option<u8>> = (0..n)
                .map(|i| if i == 3 { None } else { Some(r.gen_range(0..2)) })
                .collect();
            let groups_in = |rows: &[usize]| {
                let g: BTreeSet<u8> = rows.iter().filter_map(|&i| sensitive[i]).collect();
                g.len() == 2
            };
            let ok = (0..2).all(|t| {
                let ex_neg: Vec<usize> = (0..n).filter(|&i| labels[i][t] == 0 && labels[i][1 - t] == 1).collect();
                let neg: Vec<usize> = (0..n).filter(|&i| labels[i][t] == 0).collect();
                let ex_pos: Vec<usize> = (0..n).filter(|&i| labels[i][t] == 1 && labels[i][1 - t] == 0).collect();
                let pos: Vec<usize> = (0..n).filter(|&i| labels[i][t] == 1).collect();
                groups_in(&ex_neg)
                    && groups_in(&neg)
                    && groups_in(&ex_pos)
                    && groups_in(&pos)
                    && ex_neg.len() < neg.len()
            });
            if !ok {
                continue;
            }
            let dense = random_matrix(&mut r, n, 3, -2.0, 2.0);
            let cat = vec![(0..n).map(|_| r.gen_range(0..4)).collect()];
            let batch = Batch::new(dense, cat, labels, sensitive).unwrap();
            let arch = ArchConfig {
                num_tasks: 2,
                embedding_dim: 2,
                shared_layers: vec![5],
                head_layers: vec![3],
            };
            let layout = mtfair_core::data::InputLayout {
                dense: 3,
                vocab_sizes: vec![4],
            };
            let mut model = build_model(&arch, &layout, seed).unwrap();
            // Non-zero biases keep the relu inputs away from their kink.
            for (_, p) in model.params_mut().iter_mut() {
                for v in p.value.as_mut_slice() {
                    *v += r.gen_range(-0.3..0.3);
                }
            }
            return ModelCase { model, batch };
        }
    }
}

/// Model-level objectives checked by finite differences.
#[derive(Clone, Copy, Debug)]
pub enum Objective {
    CrossEntropy,
    Fairness(FairnessLossKind),
    Head(FairnessLossKind),
    Shared(FairnessLossKind),
}

pub fn model_objectives() -> Vec<Objective> {
    let mut v = vec![Objective::CrossEntropy];
    for k in ALL_KINDS {
        v.push(Objective::Fairness(k));
    }
    for k in ALL_KINDS {
        v.push(Objective::Head(k));
        v.push(Objective::Shared(k));
    }
    v
}

fn objective_root(tape: &mut Tape<'_>, case: &ModelCase, obj: Objective) -> Var {
    let out = case.model.forward(tape, &case.batch).unwrap();
    let target = FairnessTarget::EqualOpportunityFpr;
    match obj {
        Objective::CrossEntropy => {
            let l0 = mtfair_core::losses::cross_entropy(tape, out[0].prob, &case.batch.task_labels(0)).unwrap();
            let l1 = mtfair_core::losses::cross_entropy(tape, out[1].prob, &case.batch.task_labels(1)).unwrap();
            tape.weighted_sum(&[(0.4, l0), (0.6, l1)]).unwrap()
        }
        Objective::Fairness(kind) => {
            task_fairness(tape, &FairnessLoss::new(kind), target, 0, &case.batch, out[0].prob).unwrap()
        }
        Objective::Head(kind) => {
            decompose_fairness(tape, &FairnessLoss::new(kind), target, 0, &case.batch, out[0].prob)
                .unwrap()
                .0
        }
        Objective::Shared(kind) => {
            decompose_fairness(tape, &FairnessLoss::new(kind), target, 0, &case.batch, out[0].prob)
                .unwrap()
                .1
        }
    }
}

pub fn check_model_gradients() -> Check {
    let mut case = ModelCase::new(11);
    let mut checked = 0;
    for obj in model_objectives() {
        let analytic = {
            let mut tape = Tape::new(case.model.params());
            let root = objective_root(&mut tape, &case, obj);
            if tape.is_constant(root) {
                return Err(format!("{obj:?} is constant on the fixture batch"));
            }
            tape.backward_params(root, |_| true).unwrap()
        };
        let eval = move |c: &ModelCase| {
            let mut tape = Tape::new(c.model.params());
            let root = objective_root(&mut tape, c, obj);
            tape.value(root).item()
        };
        checked += fd_compare(
            &mut case,
            |c| c.model.params_mut(),
            eval,
            &analytic,
            &format!("{obj:?}"),
        )?;
    }
    Ok(format!(
        "{} objectives, {checked} parameter entries",
        model_objectives().len()
    ))
}

// ---------------------------------------------------------------------------
// Subsets and decomposition

/// Rows negative (side 0) or positive (side 1) for `t` and the opposite for every other task,
/// built by set algebra over the whole row set.
pub fn brute_subset(labels: &[Vec<u8>], t: usize, side: u8, exclusive: bool) -> Vec<usize> {
    let universe: BTreeSet<usize> = (0..labels.len()).collect();
    let own: BTreeSet<usize> = universe.iter().copied().filter(|&i| labels[i][t] == side).collect();
    if !exclusive {
        return own.into_iter().collect();
    }
    let mut others = universe.clone();
    for k in (0..labels[0].len()).filter(|&k| k != t) {
        let same_side: BTreeSet<usize> = universe.iter().copied().filter(|&i| labels[i][k] == side).collect();
        let complement: BTreeSet<usize> = universe.difference(&same_side).copied().collect();
        others = others.intersection(&complement).copied().collect();
    }
    own.intersection(&others).copied().collect()
}

pub struct LabelCase {
    pub batch: Batch,
    pub labels: Vec<Vec<u8>>,
    pub probs: Vec<f64>,
}

pub fn random_label_case(r: &mut ChaCha8Rng) -> LabelCase {
    let t = r.gen_range(1..=3);
    let n = r.gen_range(1..=32);
    let labels: Vec<Vec<u8>> = (0..n).map(|_| (0..t).map(|_| r.gen_range(0..2)).collect()).collect();
    let sensitive: Vec<Option<u8>> = (0..n)
        .map(|_| if r.gen_bool(0.1) { None } else { Some(r.gen_range(0..2)) })
        .collect();
    let probs: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..0.99)).collect();
    let batch = Batch::new(Matrix::zeros(n, 1), Vec::new(), labels.clone(), sensitive).unwrap();
    LabelCase { batch, labels, probs }
}

pub fn check_decomposition(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let empty = ParamSet::new();
    let kinds = [
        (SubsetKind::Negatives, 0, false),
        (SubsetKind::Positives, 1, false),
        (SubsetKind::ExclusiveNegatives, 0, true),
        (SubsetKind::ExclusivePositives, 1, true),
    ];
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let c = random_label_case(&mut r);
        let t_count = c.labels[0].len();
        for t in 0..t_count {
            for (kind, side, exclusive) in kinds {
                let got = subset_select(&c.batch, t, kind).map_err(|e| e.to_string())?;
                let want = brute_subset(&c.labels, t, side, exclusive);
                if got.rows != want {
                    return Err(format!(
                        "case {case} task {t} {kind:?}: {:?} vs oracle {want:?}",
                        got.rows
                    ));
                }
            }
            for kind in ALL_KINDS {
                for target in ALL_TARGETS {
                    let mut tape = Tape::new(&empty);
                    let p = tape.input(Matrix::column(&c.probs));
                    let loss = FairnessLoss::new(kind);
                    let full = task_fairness(&mut tape, &loss, target, t, &c.batch, p).unwrap();
                    let (h, s) = decompose_fairness(&mut tape, &loss, target, t, &c.batch, p).unwrap();
                    let gap = (tape.value(h).item() + tape.value(s).item() - tape.value(full).item()).abs();
                    worst = worst.max(gap);
                    if gap > 1e-12 {
                        return Err(format!(
                            "case {case} task {t} {kind:?} {target:?}: identity off by {gap:e}"
                        ));
                    }
                    if t_count == 1 && !(tape.is_constant(s) && tape.value(s).item() == 0.0) {
                        return Err(format!(
                            "case {case}: single task but shared part is not a zero constant"
                        ));
                    }
                }
            }
        }
    }
    Ok(format!("{cases} label matrices, worst identity error {worst:e}"))
}

// ---------------------------------------------------------------------------
// Routing of one update

fn routing_batch(same_labels: bool) -> Batch {
    let labels: Vec<Vec<u8>> = if same_labels {
        [[0, 0], [0, 0], [1, 1], [0, 0], [1, 1], [0, 0], [1, 1], [0, 0]]
            .iter()
            .map(|r| r.to_vec())
            .collect()
    } else {
        [[0, 1], [0, 0], [1, 0], [0, 1], [1, 1], [0, 0], [1, 0], [0, 1]]
            .iter()
            .map(|r| r.to_vec())
            .collect()
    };
    let sensitive = [0, 1, 0, 1, 0, 1, 1, 0].iter().map(|&a| Some(a)).collect();
    let dense = Matrix::from_rows(&[
        [0.5, -1.0],
        [1.5, 0.3],
        [-0.7, 0.8],
        [0.2, 1.9],
        [-1.2, -0.4],
        [0.9, 0.1],
        [-0.3, -1.6],
        [1.1, 0.6],
    ])
    .unwrap();
    Batch::new(dense, Vec::new(), labels, sensitive).unwrap()
}

fn routing_model() -> MtlModel {
    let arch = ArchConfig {
        num_tasks: 2,
        embedding_dim: 1,
        shared_layers: vec![4],
        head_layers: vec![3],
    };
    build_model(&arch, &mtfair_core::data::InputLayout::dense_only(2), 5).unwrap()
}

fn routing_config(method: Method, lambdas: [f64; 2]) -> TrainConfig {
    let mut c = TrainConfig::vanilla(2, 0.1, 1, 8, 0);
    c.method = method;
    c.task_weights = vec![0.6, 0.4];
    c.fairness_weights = lambdas.to_vec();
    c.head_to_shared_ratios = vec![1.5, 0.5];
    c.fairness = FairnessLoss::mmd(1.0);
    c
}

fn stepped(batch: &Batch, config: &TrainConfig) -> MtlModel {
    let mut m = routing_model();
    train_step(&mut m, batch, config).unwrap();
    m
}

fn group_values(m: &MtlModel, group: ParamGroup) -> Vec<Vec<f64>> {
    m.group_ids(group)
        .into_iter()
        .map(|id| m.params().get(id).value.as_slice().to_vec())
        .collect()
}

fn bits(v: &[Vec<f64>]) -> Vec<Vec<u64>> {
    v.iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect()
}

pub fn check_routing() -> Check {
    let batch = routing_batch(false);
    // (a) perturbing the other task's fairness weight leaves a head's update untouched.
    let base = stepped(&batch, &routing_config(Method::Mtaf, [1.0, 2.0]));
    for (t, lambdas) in [(0, [1.0, 5.0]), (1, [3.0, 2.0])] {
        let other = stepped(&batch, &routing_config(Method::Mtaf, lambdas));
        if bits(&group_values(&base, ParamGroup::Task(t))) != bits(&group_values(&other, ParamGroup::Task(t))) {
            return Err(format!(
                "head {} moved when the other task's fairness weight changed",
                t + 1
            ));
        }
        if group_values(&base, ParamGroup::Shared) == group_values(&other, ParamGroup::Shared) {
            return Err("changing a fairness weight did not change the shared update".into());
        }
    }
    // (b) no exclusive negatives: heads update exactly as under vanilla.
    let same = routing_batch(true);
    for t in 0..2 {
        let ex = subset_select(&same, t, SubsetKind::ExclusiveNegatives).unwrap();
        if !ex.rows.is_empty() {
            return Err("fixture has exclusive negatives".into());
        }
    }
    let mtaf = stepped(&same, &routing_config(Method::Mtaf, [1.0, 2.0]));
    let vanilla = stepped(&same, &routing_config(Method::Vanilla, [0.0, 0.0]));
    for t in 0..2 {
        if bits(&group_values(&mtaf, ParamGroup::Task(t))) != bits(&group_values(&vanilla, ParamGroup::Task(t))) {
            return Err(format!("head {} differs from vanilla with empty exclusive sets", t + 1));
        }
    }
    if group_values(&mtaf, ParamGroup::Shared) == group_values(&vanilla, ParamGroup::Shared) {
        return Err("shared update ignored the fairness loss".into());
    }
    // (c) zero fairness weights: the whole step is the vanilla step.
    let mtaf = stepped(&batch, &routing_config(Method::Mtaf, [0.0, 0.0]));
    let vanilla = stepped(&batch, &routing_config(Method::Vanilla, [0.0, 0.0]));
    let all = |m: &MtlModel| -> Vec<Vec<u64>> {
        m.params()
            .iter()
            .map(|(_, p)| p.value.as_slice().iter().map(|x| x.to_bits()).collect())
            .collect()
    };
    if all(&mtaf) != all(&vanilla) {
        return Err("mtaf with zero fairness weights differs from vanilla".into());
    }
    Ok("other-task weight isolation, empty exclusive sets and zero weights all bit-exact".into())
}

// ---------------------------------------------------------------------------
// Pareto

/// Points not dominated by any other point, by checking every pair.
pub fn brute_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let dom = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y);
    let mut out: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dom(&q.objectives, &p.objectives)))
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        a.objectives
            .iter()
            .zip(&b.objectives)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.run_id.cmp(&b.run_id))
    });
    out
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize, dim: usize, levels: u32) -> Vec<ParetoPoint> {
    (0..n)
        .map(|i| {
            let obj = (0..dim)
                .map(|_| f64::from(r.gen_range(0..levels)) / f64::from(levels))
                .collect();
            ParetoPoint::new(obj, format!("p{i:04}"))
        })
        .collect()
}

/// Hand-computed staircase areas.
pub fn quality_fixtures() -> Vec<(Vec<[f64; 2]>, [f64; 2], f64)> {
    vec![
        (vec![[0.0, 0.0]], [1.0, 1.0], 1.0),
        (vec![[0.0, 0.5], [0.5, 0.0]], [1.0, 1.0], 0.75),
        // 0.1 * 0.2 + 0.1 * 0.3 + 0.2 * 0.4; the last point is dominated.
        (vec![[0.1, 0.3], [0.2, 0.2], [0.3, 0.1], [0.25, 0.25]], [0.5, 0.5], 0.13),
        // Duplicates count once: 0.4 * 0.6 + 0.4 * 0.9.
        (vec![[0.2, 0.4], [0.2, 0.4], [0.6, 0.1]], [1.0, 1.0], 0.6),
        // Points on the reference edges add nothing: 0.5 * 0.5.
        (vec![[0.0, 1.0], [0.5, 0.5], [1.0, 0.0], [0.75, 0.75]], [1.0, 1.0], 0.25),
    ]
}

pub fn check_pareto(seed: u64) -> Check {
    let mut r = rng(seed);
    let points = random_points(&mut r, 1000, 4, 12);
    let got = frontier(&points).map_err(|e| e.to_string())?;
    let want = brute_frontier(&points);
    if got != want {
        return Err(format!("frontier has {} points, oracle {}", got.len(), want.len()));
    }
    for (i, (pts, reference, area)) in quality_fixtures().into_iter().enumerate() {
        let pts: Vec<ParetoPoint> = pts
            .iter()
            .enumerate()
            .map(|(j, p)| ParetoPoint::new(p.to_vec(), format!("f{j}")))
            .collect();
        let q = frontier_quality(&pts, reference).map_err(|e| e.to_string())?;
        if (q - area).abs() > 1e-12 {
            return Err(format!("quality fixture {}: {q} vs {area}", i + 1));
        }
    }
    Ok(format!(
        "1000 4-d points ({} on the frontier), 5 quality fixtures",
        got.len()
    ))
}

// ---------------------------------------------------------------------------
// Fairness loss values

pub fn loss_value(
    kind: FairnessLossKind,
    probs: &[f64],
    sensitive: &[Option<u8>],
    rows: Option<&[usize]>,
) -> (f64, bool) {
    let empty = ParamSet::new();
    let mut tape = Tape::new(&empty);
    let p = tape.input(Matrix::column(probs));
    let subset = ExampleSubset {
        task: 0,
        kind: SubsetKind::Negatives,
        rows: rows.map_or_else(|| (0..probs.len()).collect(), <[usize]>::to_vec),
    };
    let v = fairness_loss(&mut tape, &FairnessLoss::new(kind), p, sensitive, &subset).unwrap();
    (tape.value(v).item(), tape.is_constant(v))
}

pub fn mmd_oracle(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    let k = |a: f64, b: f64| (-(a - b).powi(2) / (2.0 * bandwidth * bandwidth)).exp();
    let mean = |u: &[f64], v: &[f64]| {
        let mut s = 0.0;
        for &a in u {
            for &b in v {
                s += k(a, b);
            }
        }
        s / (u.len() * v.len()) as f64
    };
    mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (cov / (vx * vy).sqrt()).abs()
}

pub fn check_loss_oracles() -> Check {
    let s01 = [Some(0), Some(1)];
    let (mmd, _) = loss_value(FairnessLossKind::Mmd, &[0.0, 1.0], &s01, None);
    let want = 2.0 - 2.0 * (-0.5f64).exp();
    if (mmd - want).abs() > 1e-9 {
        return Err(format!("mmd of {{0}} and {{1}}: {mmd} vs {want}"));
    }
    let (gap, _) = loss_value(
        FairnessLossKind::SoftFprGap,
        &[0.2, 0.4, 0.5],
        &[Some(0), Some(0), Some(1)],
        None,
    );
    if (gap - 0.2).abs() > 1e-12 {
        return Err(format!("soft gap fixture: {gap} vs 0.2"));
    }
    let (corr, _) = loss_value(FairnessLossKind::Correlation, &[0.2, 0.8], &s01, None);
    if (corr - 1.0).abs() > 1e-12 {
        return Err(format!("two-point correlation: {corr} vs 1"));
    }
    type Fixture<'a> = (&'a [f64], &'a [Option<u8>], &'a str);
    let degenerate: [Fixture; 4] = [
        (&[0.3, 0.6], &[Some(0), Some(0)], "one group only"),
        (&[0.3, 0.6, 0.2], &[Some(1), None, Some(1)], "other group missing"),
        (&[0.4], &[Some(1)], "single row"),
        (&[0.3, 0.6], &[None, None], "no known group"),
    ];
    for kind in ALL_KINDS {
        for (probs, sens, what) in degenerate {
            let (v, constant) = loss_value(kind, probs, sens, None);
            if v.to_bits() != 0f64.to_bits() || !constant {
                return Err(format!("{kind:?} on {what}: {v} (constant: {constant})"));
            }
        }
        let (v, constant) = loss_value(kind, &[0.3, 0.6], &s01, Some(&[]));
        if v.to_bits() != 0f64.to_bits() || !constant {
            return Err(format!("{kind:?} on an empty subset: {v}"));
        }
    }
    let (flat, _) = loss_value(
        FairnessLossKind::Correlation,
        &[0.5, 0.5, 0.5],
        &[Some(0), Some(1), Some(1)],
        None,
    );
    if flat != 0.0 {
        return Err(format!("zero-variance correlation: {flat}"));
    }
    let mut r = rng(8);
    for _ in 0..20 {
        let n = r.gen_range(2..12);
        let probs: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let mut sens: Vec<Option<u8>> = (0..n).map(|_| Some(r.gen_range(0..2))).collect();
        sens[0] = Some(0);
        sens[1] = Some(1);
        let g = |a: u8| -> Vec<f64> {
            probs
                .iter()
                .zip(&sens)
                .filter(|(_, s)| **s == Some(a))
                .map(|(p, _)| *p)
                .collect()
        };
        let (x, y) = (g(0), g(1));
        let (mmd, _) = loss_value(FairnessLossKind::Mmd, &probs, &sens, None);
        if (mmd - mmd_oracle(&x, &y, 1.0)).abs() > 1e-12 {
            return Err(format!("mmd {mmd} vs oracle {}", mmd_oracle(&x, &y, 1.0)));
        }
        let sv: Vec<f64> = sens.iter().map(|s| f64::from(s.unwrap())).collect();
        let (c, _) = loss_value(FairnessLossKind::Correlation, &probs, &sens, None);
        if (c - pearson_oracle(&probs, &sv)).abs() > 1e-12 {
            return Err(format!("correlation {c} vs oracle {}", pearson_oracle(&probs, &sv)));
        }
    }
    Ok(format!(
        "mmd {mmd:.9}, soft gap {gap}, correlation {corr}, degenerate cases exactly 0"
    ))
}

// ---------------------------------------------------------------------------
// Synthetic end-to-end

pub const SYNTH_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn synth_arch(t: usize) -> ArchConfig {
    ArchConfig {
        num_tasks: t,
        embedding_dim: 2,
        shared_layers: vec![16],
        head_layers: vec![8],
    }
}

/// Both tasks more often positive in group 1, with the group visible to the model
/// and signal weak enough that the model leans on it.
pub fn asymmetric_spec(n: usize) -> SynthSpec {
    SynthSpec {
        n,
        num_tasks: 2,
        dense_dim: 4,
        group_fraction: 0.5,
        positive_rates: vec![[0.3, 0.5], [0.3, 0.5]],
        label_correlation: 0.5,
        separation: 1.25,
        group_feature: GroupFeature::Dense,
        sensitive_missing: 0.0,
    }
}

pub struct SynthOutcome {
    pub err: f64,
    pub fpr_gap: f64,
}

fn mean_eval(evals: &[TaskEval]) -> SynthOutcome {
    let t = evals.len() as f64;
    SynthOutcome {
        err: evals.iter().map(|e| e.err).sum::<f64>() / t,
        fpr_gap: evals
            .iter()
            .map(|e| e.fpr_gap.expect("both groups have negatives"))
            .sum::<f64>()
            / t,
    }
}

pub fn synth_run(spec: &SynthSpec, seed: u64, config: &TrainConfig) -> SynthOutcome {
    let train_data = synth_generate(spec, 1000 + seed).unwrap();
    let mut test_spec = spec.clone();
    test_spec.n = 20_000;
    let test_data: Dataset = synth_generate(&test_spec, 5000 + seed)
        .unwrap()
        .with_split(mtfair_core::data::Split::Test);
    let mut cfg = config.clone();
    cfg.seed = seed;
    let run = train(&train_data, &synth_arch(spec.num_tasks), &cfg).unwrap();
    let thresholds = vec![0.5; spec.num_tasks];
    mean_eval(&evaluate_model(&run.model, &test_data, &thresholds).unwrap())
}

pub fn synth_config(method: Method, lambda: f64) -> TrainConfig {
    let mut c = TrainConfig::vanilla(2, 0.05, 20, 64, 0);
    c.method = method;
    c.fairness_weights = vec![lambda; 2];
    // A unit bandwidth is nearly flat over probabilities and barely moves the gap at this weight.
    c.fairness = FairnessLoss::mmd(0.5);
    c
}

pub fn check_synthetic() -> Check {
    let k = SYNTH_SEEDS.len() as f64;
    let sym = SynthSpec::symmetric(4000, &[0.4, 0.3]);
    let sym_gap = SYNTH_SEEDS
        .iter()
        .map(|&s| synth_run(&sym, s, &synth_config(Method::Vanilla, 0.0)).fpr_gap)
        .sum::<f64>()
        / k;
    let asym = asymmetric_spec(4000);
    let (mut v_err, mut v_gap, mut m_err, mut m_gap) = (0.0, 0.0, 0.0, 0.0);
    for &s in &SYNTH_SEEDS {
        let v = synth_run(&asym, s, &synth_config(Method::Vanilla, 0.0));
        let m = synth_run(&asym, s, &synth_config(Method::Mtaf, 2.0));
        v_err += v.err / k;
        v_gap += v.fpr_gap / k;
        m_err += m.err / k;
        m_gap += m.fpr_gap / k;
    }
    let detail = format!(
        "symmetric vanilla gap {sym_gap:.4}; asymmetric vanilla err {v_err:.4} gap {v_gap:.4}, mtaf err {m_err:.4} gap {m_gap:.4}"
    );
    if sym_gap >= 0.03 {
        return Err(format!("symmetric gap too large: {detail}"));
    }
    if m_gap > 0.5 * v_gap {
        return Err(format!("mtaf reduced the gap by less than half: {detail}"));
    }
    if m_err - v_err > 0.03 {
        return Err(format!("mtaf error rose by more than 3 points: {detail}"));
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Aggregates

pub fn table_two() -> Check {
    let eval = |err: f64| TaskEval {
        err,
        fpr_gap: Some(0.1),
        tpr_gap: None,
        counts: Default::default(),
    };
    let stl = StlBaselines::new(vec![0.40, 0.04], vec![0.1, 0.1]);
    let a = aggregate(&[eval(0.40), eval(0.02)], &stl).map_err(|e| e.to_string())?;
    let b = aggregate(&[eval(0.38), eval(0.04)], &stl).map_err(|e| e.to_string())?;
    let checks = [(a.err_mean, 0.21), (b.err_mean, 0.21), (a.are, 0.75), (b.are, 0.975)];
    for (got, want) in checks {
        if (got - want).abs() > 1e-12 {
            return Err(format!("got {got}, expected {want}"));
        }
    }
    Ok(format!(
        "model A err {:.2} are {}, model B err {:.2} are {}",
        a.err_mean, a.are, b.err_mean, b.are
    ))
}
