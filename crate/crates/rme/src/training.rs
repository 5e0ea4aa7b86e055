//! Hyperparameter selection for the traditional estimators (exhaustive grid
//! search on a fixed budget of pre-drawn splits) and Adam training for the
//! network estimators (masked-entry reconstruction).

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Result, RmeError};
use crate::estimators::frade::{frade_assemble_input, FradeParams};
use crate::estimators::knn::{knn_estimate, KnnParams};
use crate::estimators::kriging::{KrigingModel, KrigingParams};
use crate::estimators::krr::{KernelKind, KrrModel, KrrParams};
use crate::estimators::network::{
    loss_and_gradients, masked_mse, network_forward, NetworkGradients, NetworkWeights,
};
use crate::geo::{split_uniform, EstimationInstance, GridSpec, Measurement, QuantizedGrid};
use crate::rng::{stream, Domain};

/// Candidate grids for exhaustive hyperparameter search.
#[derive(Debug, Clone)]
pub struct SearchGrid {
    pub knn_k: Vec<usize>,
    pub kriging_var: Vec<f64>,
    pub kriging_halfdist: Vec<f64>,
    /// Noise/fading variance candidates for the Kriging diagonal.
    pub kriging_noise_var: Vec<f64>,
    pub krr_reg: Vec<f64>,
    pub krr_kernels: Vec<KernelKind>,
    pub krr_widths: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            knn_k: (2..=13).collect(),
            kriging_var: (0..10).map(|k| (0.01 + 0.1 * k as f64).powi(2)).collect(),
            kriging_halfdist: (1..=12).map(|k| 50.0 * k as f64).collect(),
            kriging_noise_var: vec![0.01, 0.1, 1.0],
            krr_reg: (0..12).map(|k| 10f64.powi(k - 12)).collect(),
            krr_kernels: vec![KernelKind::Gaussian, KernelKind::Laplacian],
            krr_widths: (2..=15).map(|k| 10.0 * k as f64).collect(),
        }
    }
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k.is_empty()
            || self.kriging_var.is_empty()
            || self.kriging_halfdist.is_empty()
            || self.kriging_noise_var.is_empty()
            || self.krr_reg.is_empty()
            || self.krr_kernels.is_empty()
            || self.krr_widths.is_empty()
        {
            return Err(RmeError::Config("search grid lists must be non-empty".into()));
        }
        Ok(())
    }

    /// Kriging candidates in tie-break order: larger half-distance first
    /// (smoother model wins exact ties), then smaller variance.
    pub fn kriging_candidates(&self) -> Vec<KrigingParams> {
        let mut out = Vec::new();
        for &half in self.kriging_halfdist.iter().rev() {
            for &var in &self.kriging_var {
                for &noise in &self.kriging_noise_var {
                    out.push(KrigingParams {
                        shadow_variance: var,
                        shadow_half_distance: half,
                        noise_variance: noise,
                    });
                }
            }
        }
        out
    }

    /// KRR candidates in tie-break order: larger lambda first.
    pub fn krr_candidates(&self) -> Vec<KrrParams> {
        let mut out = Vec::new();
        for &reg in self.krr_reg.iter().rev() {
            for &kernel in &self.krr_kernels {
                for &width in &self.krr_widths {
                    out.push(KrrParams { reg, kernel, width });
                }
            }
        }
        out
    }
}

/// One pre-drawn grid-search evaluation task: an instance index plus a fixed
/// observation split, shared across all candidates.
#[derive(Debug, Clone)]
pub struct SplitTask {
    pub instance: usize,
    pub obs: Vec<usize>,
    pub nobs: Vec<usize>,
}

/// Draw a fixed budget of (instance, split) tasks. `n_obs` is uniform on the
/// inclusive range, capped at instance size - 1.
pub fn draw_split_tasks(
    instances: &[EstimationInstance],
    n_obs_range: (usize, usize),
    budget: usize,
    seed: u64,
) -> Result<Vec<SplitTask>> {
    if instances.is_empty() {
        return Err(RmeError::InvalidArgument("no training instances".into()));
    }
    let (lo, hi) = n_obs_range;
    if lo < 1 || hi < lo {
        return Err(RmeError::InvalidArgument(format!(
            "invalid n_obs range [{lo}, {hi}]"
        )));
    }
    let mut rng = stream(seed, Domain::Splitting, 0);
    let mut tasks = Vec::with_capacity(budget);
    for _ in 0..budget {
        let idx = rng.gen_range(0..instances.len());
        let inst = &instances[idx];
        if inst.len() < 2 {
            continue;
        }
        let n_obs = rng.gen_range(lo..=hi).min(inst.len() - 1);
        let split = split_uniform(inst, n_obs, &mut rng)?;
        tasks.push(SplitTask {
            instance: idx,
            obs: split.obs,
            nobs: split.nobs,
        });
    }
    if tasks.is_empty() {
        return Err(RmeError::InvalidArgument(
            "all instances too small to split".into(),
        ));
    }
    Ok(tasks)
}

/// Sample RMSE of a fit-then-evaluate closure over the fixed tasks: mean of
/// per-task mean squared errors at unobserved locations, then one root.
pub fn rmse_over_tasks<F>(
    instances: &[EstimationInstance],
    tasks: &[SplitTask],
    fit_eval: F,
) -> Result<f64>
where
    F: Fn(&[Measurement], &[Measurement]) -> Result<f64> + Sync,
{
    let mses: Result<Vec<f64>> = tasks
        .iter()
        .map(|t| {
            let inst = &instances[t.instance];
            let obs: Vec<Measurement> = t.obs.iter().map(|&n| inst.measurements[n]).collect();
            let nobs: Vec<Measurement> = t.nobs.iter().map(|&n| inst.measurements[n]).collect();
            fit_eval(&obs, &nobs)
        })
        .collect();
    let mses = mses?;
    Ok((mses.iter().sum::<f64>() / mses.len() as f64).sqrt())
}

fn mse_at(preds: impl Iterator<Item = f64>, truths: &[Measurement]) -> f64 {
    let mut acc = 0.0;
    for (p, t) in preds.zip(truths) {
        acc += (p - t.power_db) * (p - t.power_db);
    }
    acc / truths.len() as f64
}

#[derive(Debug, Clone)]
pub struct TrainedTraditional {
    pub knn: KnnParams,
    pub kriging: KrigingParams,
    pub krr: KrrParams,
    pub knn_rmse: f64,
    pub kriging_rmse: f64,
    pub krr_rmse: f64,
}

/// Exhaustive grid search minimizing sample RMSE over a shared split budget.
/// Candidates evaluate in parallel; selection is by strict minimum in the
/// tie-break enumeration order of `SearchGrid`.
pub fn train_traditional(
    instances: &[EstimationInstance],
    search: &SearchGrid,
    n_obs_range: (usize, usize),
    budget: usize,
    seed: u64,
) -> Result<TrainedTraditional> {
    search.validate()?;
    let tasks = draw_split_tasks(instances, n_obs_range, budget, seed)?;

    let knn_scores: Result<Vec<f64>> = search
        .knn_k
        .par_iter()
        .map(|&k| {
            rmse_over_tasks(instances, &tasks, |obs, nobs| {
                let p = KnnParams { k: k.min(obs.len()) };
                let preds: Result<Vec<f64>> = nobs
                    .iter()
                    .map(|m| knn_estimate(obs, &p, &m.loc))
                    .collect();
                Ok(mse_at(preds?.into_iter(), nobs))
            })
        })
        .collect();
    let knn_scores = knn_scores?;
    let knn_best = argmin(&knn_scores);

    let kriging_cands = search.kriging_candidates();
    let kriging_scores: Result<Vec<f64>> = kriging_cands
        .par_iter()
        .map(|p| {
            rmse_over_tasks(instances, &tasks, |obs, nobs| {
                let model = KrigingModel::fit(obs, p)?;
                Ok(mse_at(nobs.iter().map(|m| model.estimate(&m.loc)), nobs))
            })
        })
        .collect();
    let kriging_scores = kriging_scores?;
    let kriging_best = argmin(&kriging_scores);

    let krr_cands = search.krr_candidates();
    let krr_scores: Result<Vec<f64>> = krr_cands
        .par_iter()
        .map(|p| {
            rmse_over_tasks(instances, &tasks, |obs, nobs| {
                let model = KrrModel::fit(obs, p)?;
                Ok(mse_at(nobs.iter().map(|m| model.estimate(&m.loc)), nobs))
            })
        })
        .collect();
    let krr_scores = krr_scores?;
    let krr_best = argmin(&krr_scores);

    Ok(TrainedTraditional {
        knn: KnnParams {
            k: search.knn_k[knn_best],
        },
        kriging: kriging_cands[kriging_best],
        krr: krr_cands[krr_best],
        knn_rmse: knn_scores[knn_best],
        kriging_rmse: kriging_scores[kriging_best],
        krr_rmse: krr_scores[krr_best],
    })
}

fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = k;
        }
    }
    best
}

/// A masked completion example: the quantized grid with entries zeroed down
/// to N_obs survivors, plus the full grid as target.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub values: Array2<f64>,
    pub mask: Array2<f64>,
    pub target_values: Array2<f64>,
    pub target_mask: Array2<f64>,
}

impl TrainingExample {
    /// Pseudo-measurements at the surviving grid points; quantization is the
    /// identity on them, so grid-aware pipelines see exactly this example.
    pub fn observations(&self, spec: &GridSpec) -> Vec<Measurement> {
        let mut out = Vec::new();
        for ((r, c), &m) in self.mask.indexed_iter() {
            if m > 0.0 {
                out.push(Measurement {
                    loc: spec.point0(r, c),
                    power_db: self.values[[r, c]],
                });
            }
        }
        out
    }
}

/// Masked variants of one quantized grid. Each copy keeps a uniform-random
/// N_obs drawn from the inclusive range, capped at the occupied-entry count.
pub fn make_training_examples(
    grid: &QuantizedGrid,
    n_obs_range: (usize, usize),
    copies: usize,
    seed: u64,
    instance_index: u64,
) -> Result<Vec<TrainingExample>> {
    let (lo, hi) = n_obs_range;
    if lo < 1 || hi < lo {
        return Err(RmeError::InvalidArgument(format!(
            "invalid n_obs range [{lo}, {hi}]"
        )));
    }
    let occupied = grid.occupied();
    if occupied.is_empty() {
        return Err(RmeError::InvalidArgument("grid has no occupied entries".into()));
    }
    let mut out = Vec::with_capacity(copies);
    for copy in 0..copies {
        let mut rng = stream(
            seed,
            Domain::TrainingExamples,
            instance_index * copies as u64 + copy as u64,
        );
        let n_obs = rng.gen_range(lo..=hi).min(occupied.len());
        let keep = rand::seq::index::sample(&mut rng, occupied.len(), n_obs);
        let mut values = Array2::zeros(grid.values.raw_dim());
        let mut mask = Array2::zeros(grid.mask.raw_dim());
        for k in keep.iter() {
            let (r, c) = occupied[k];
            values[[r, c]] = grid.values[[r, c]];
            mask[[r, c]] = 1.0;
        }
        out.push(TrainingExample {
            values,
            mask,
            target_values: grid.values.clone(),
            target_mask: grid.mask.clone(),
        });
    }
    Ok(out)
}

/// A materialized network input/target pair.
#[derive(Debug, Clone)]
pub struct NetworkExample {
    pub input: Array3<f64>,
    pub target: Array2<f64>,
    pub mask: Array2<f64>,
}

/// Materialize 2-channel (plain) or 5-channel (hybrid) network inputs.
pub fn prepare_network_examples(
    examples: &[TrainingExample],
    spec: &GridSpec,
    frade: Option<&FradeParams>,
) -> Result<Vec<NetworkExample>> {
    examples
        .iter()
        .map(|ex| {
            let input = match frade {
                None => ndarray::stack(Axis(0), &[ex.values.view(), ex.mask.view()])
                    .expect("matching shapes"),
                Some(p) => frade_assemble_input(&ex.observations(spec), spec, p)?,
            };
            Ok(NetworkExample {
                input,
                target: ex.target_values.clone(),
                mask: ex.target_mask.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            batch_size: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation loss per epoch (empty when no validation slice exists).
    pub val_loss: Vec<f64>,
}

/// Mean masked-MSE loss of `weights` over a set of examples.
pub fn network_loss(weights: &NetworkWeights, examples: &[NetworkExample]) -> Result<f64> {
    let losses: Result<Vec<f64>> = examples
        .par_iter()
        .map(|ex| {
            let pred = network_forward(weights, &ex.input)?;
            Ok(masked_mse(&pred, &ex.target, &ex.mask))
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Root of the mean masked MSE over examples (grid-aware RMSE estimate).
pub fn network_rmse(weights: &NetworkWeights, examples: &[NetworkExample]) -> Result<f64> {
    Ok(network_loss(weights, examples)?.sqrt())
}

/// One Adam step on flat parameters; state vectors mutate in place.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: usize,
    cfg: &AdamConfig,
) {
    let b1t = 1.0 - cfg.beta1.powi(t as i32);
    let b2t = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..params.len() {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
        let mhat = m[k] / b1t;
        let vhat = v[k] / b2t;
        params[k] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
    }
}

/// Mini-batch Adam on the masked reconstruction loss. The last 10% of the
/// example list is held out for validation; the returned weights are the
/// best-validation snapshot (final weights when no validation slice exists).
/// Deterministic given (examples order, initial weights, config).
pub fn train_network(
    examples: &[NetworkExample],
    init: &NetworkWeights,
    cfg: &AdamConfig,
) -> Result<(NetworkWeights, TrainingLog)> {
    if examples.is_empty() {
        return Err(RmeError::InvalidArgument("no training examples".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(RmeError::InvalidArgument("learning rate must be > 0".into()));
    }
    let n_val = examples.len() / 10;
    let (train, val) = examples.split_at(examples.len() - n_val);

    let mut weights = init.clone();
    let mut params = weights.to_flat();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut t = 0;
    let mut log = TrainingLog {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::new(),
    };
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, Domain::BatchOrder, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            weights.set_from_flat(&params);
            // Per-example gradients in parallel, combined in batch order so
            // the sum is bitwise deterministic.
            let parts: Result<Vec<(f64, NetworkGradients)>> = batch
                .par_iter()
                .map(|&k| {
                    let ex = &train[k];
                    loss_and_gradients(&weights, &ex.input, &ex.target, &ex.mask)
                })
                .collect();
            let parts = parts?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = NetworkGradients::zeros_like(&weights);
            let mut batch_loss = 0.0;
            for (loss, g) in &parts {
                batch_loss += loss * scale;
                grad.add_scaled(g, scale);
            }
            if !batch_loss.is_finite() {
                return Err(RmeError::Numerical(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            epoch_loss += batch_loss * batch.len() as f64;
            t += 1;
            adam_step(&mut params, &grad.to_flat(), &mut m, &mut v, t, cfg);
        }
        log.epoch_loss.push(epoch_loss / train.len() as f64);
        if !val.is_empty() {
            weights.set_from_flat(&params);
            let vl = network_loss(&weights, val)?;
            log.val_loss.push(vl);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, params.clone()));
            }
        }
    }
    let final_params = best.map(|(_, p)| p).unwrap_or(params);
    weights.set_from_flat(&final_params);
    Ok((weights, log))
}

/// Warm-started learning curve: for each k, train on the first k example
/// sets starting from the previous run's weights, and score RMSE on `test`.
pub fn learning_curve(
    sets: &[Vec<NetworkExample>],
    test: &[NetworkExample],
    init: &NetworkWeights,
    cfg: &AdamConfig,
    k_values: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if k_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RmeError::InvalidArgument(
            "k_values must be strictly increasing".into(),
        ));
    }
    if k_values.last().is_some_and(|&k| k > sets.len()) {
        return Err(RmeError::InvalidArgument("k exceeds number of sets".into()));
    }
    let mut weights = init.clone();
    let mut curve = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let pool: Vec<NetworkExample> = sets[..k].iter().flatten().cloned().collect();
        let (w, _) = train_network(&pool, &weights, cfg)?;
        weights = w;
        curve.push((k, network_rmse(&weights, test)?));
    }
    Ok(curve)
}
