//! Acceptance gate: one test per criterion, each printing a single PASS/FAIL
//! line with its tolerance. Oracles here are independent of the library's
//! code paths (dense inverses, gradient descent, finite differences).

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::Rng;

use rme::estimators::network::{loss_and_gradients, masked_mse};
use rme::estimators::{
    frade_assemble_input, gram_matrix, kriging_estimate, krr_fit, krr_objective, network_forward,
    EstimatorConfig, FradeParams, KernelKind, KnnParams, KrigingParams, KrrParams, NetworkWeights,
};
use rme::evaluation::{
    distance_sweep, grid_squared_error, metric_rmse, normalized_density, run_sweep, scenario_sweep,
    MetricKind, Scenario, SyntheticSweepConfig,
};
use rme::geo::{
    quantize, CombiningMode, EstimationInstance, GridSpec, Location, Measurement, Patch,
    QuantizedGrid,
};
use rme::rng::{stream, Domain};
use rme::synth::{generate_map, PropagationConfig};
use rme::training::{
    make_training_examples, network_rmse, prepare_network_examples, train_network,
    train_traditional, AdamConfig, SearchGrid,
};

fn verdict(n: usize, desc: &str, pass: bool, detail: String) {
    println!(
        "criterion {n}: {} — {desc} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn meas(x: f64, y: f64, p: f64) -> Measurement {
    Measurement {
        loc: Location::new(x, y),
        power_db: p,
    }
}

#[test]
fn criterion_01_kriging_lmmse_oracle() {
    let mut rng = stream(101, Domain::GridSearch, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(3..=20);
        let obs: Vec<Measurement> = (0..n)
            .map(|_| {
                meas(
                    rng.gen_range(0.0..40.0),
                    rng.gen_range(0.0..40.0),
                    rng.gen_range(-90.0..-40.0),
                )
            })
            .collect();
        let params = KrigingParams {
            shadow_variance: rng.gen_range(0.05..1.0),
            shadow_half_distance: rng.gen_range(5.0..100.0),
            noise_variance: rng.gen_range(0.01..1.0),
        };
        let q = Location::new(rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0));
        let got = kriging_estimate(&obs, &params, &q).unwrap();

        // Independent dense-inverse LMMSE assembly.
        let cov_fn = |d: f64| {
            params.shadow_variance * 2f64.powf(-d / params.shadow_half_distance)
        };
        let mean = obs.iter().map(|m| m.power_db).sum::<f64>() / n as f64;
        let c = DMatrix::from_fn(n, n, |a, b| {
            cov_fn(obs[a].loc.distance(&obs[b].loc))
                + if a == b { params.noise_variance } else { 0.0 }
        });
        let inv = c.try_inverse().unwrap();
        let centered = DVector::from_iterator(n, obs.iter().map(|m| m.power_db - mean));
        let cross = DVector::from_iterator(n, obs.iter().map(|m| cov_fn(q.distance(&m.loc))));
        let want = mean + (cross.transpose() * inv * centered)[(0, 0)];
        worst = worst.max((got - want).abs());
    }
    verdict(
        1,
        "Kriging matches dense LMMSE oracle on 100 instances, tol 1e-9 dB",
        worst <= 1e-9,
        format!("worst |diff| = {worst:.3e}"),
    );
}

fn gd_oracle(obs: &[Measurement], params: &KrrParams, steps: usize) -> Vec<f64> {
    let n = obs.len();
    let mean = obs.iter().map(|m| m.power_db).sum::<f64>() / n as f64;
    let gram = gram_matrix(obs, params);
    let y = DVector::from_iterator(n, obs.iter().map(|m| m.power_db - mean));
    let mut a = DVector::zeros(n);
    let l = 2.0 * (gram.transpose() * &gram).norm() / n as f64 + 2.0 * params.reg;
    let step = 1.0 / l;
    for _ in 0..steps {
        let grad =
            (gram.transpose() * (&gram * &a - &y)) * (2.0 / n as f64) + &a * (2.0 * params.reg);
        a -= grad * step;
    }
    a.iter().copied().collect()
}

#[test]
fn criterion_02_krr_objective_optimality() {
    let mut rng = stream(102, Domain::GridSearch, 0);
    let mut worst_gap = f64::NEG_INFINITY;
    for k in 0..50 {
        let n = rng.gen_range(3..=12);
        let obs: Vec<Measurement> = (0..n)
            .map(|_| {
                meas(
                    rng.gen_range(0.0..30.0),
                    rng.gen_range(0.0..30.0),
                    rng.gen_range(-90.0..-40.0),
                )
            })
            .collect();
        let params = KrrParams {
            reg: 10f64.powf(rng.gen_range(-6.0..-1.0)),
            kernel: if k % 2 == 0 {
                KernelKind::Gaussian
            } else {
                KernelKind::Laplacian
            },
            width: rng.gen_range(10.0..120.0),
        };
        let alpha = krr_fit(&obs, &params).unwrap();
        let gd = gd_oracle(&obs, &params, 10_000);
        let gap = krr_objective(&obs, &params, &alpha) - krr_objective(&obs, &params, &gd);
        worst_gap = worst_gap.max(gap);
    }
    verdict(
        2,
        "closed-form KRR objective <= 1e4-step gradient descent + 1e-6, 50 instances",
        worst_gap <= 1e-6,
        format!("worst objective gap = {worst_gap:.3e}"),
    );
}

/// Test-local plain-slice network replica used as the finite-difference
/// oracle. Perturbing a layer-k parameter only requires recomputing layers
/// k..end from the cached layer inputs, which keeps the every-weight central
/// difference tractable.
struct OracleLayer {
    w: Vec<f64>, // (out, in, 3, 3) row-major
    b: Vec<f64>,
    out_ch: usize,
    in_ch: usize,
    stride: usize,
}

struct OracleNet {
    layers: Vec<OracleLayer>,
    /// Input seen by each layer (after activation/upsample of the previous),
    /// as (data, height, width).
    inputs: Vec<(Vec<f64>, usize, usize)>,
}

const ORACLE_UPSAMPLE_AFTER: usize = 2;

fn oracle_conv(l: &OracleLayer, input: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / l.stride, w / l.stride);
    let mut out = vec![0.0; l.out_ch * oh * ow];
    for o in 0..l.out_ch {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = l.b[o];
                for i in 0..l.in_ch {
                    for ky in 0..3 {
                        let yy = (y * l.stride + ky) as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let irow = i * h * w + yy as usize * w;
                        let wrow = ((o * l.in_ch + i) * 3 + ky) * 3;
                        for kx in 0..3 {
                            let xx = (x * l.stride + kx) as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            acc += l.w[wrow + kx] * input[irow + xx as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    (out, oh, ow)
}

impl OracleNet {
    fn build(weights: &NetworkWeights, input: &Array3<f64>) -> Self {
        let layers: Vec<OracleLayer> = weights
            .layers
            .iter()
            .map(|l| OracleLayer {
                w: l.weights.iter().copied().collect(),
                b: l.bias.iter().copied().collect(),
                out_ch: l.out_channels(),
                in_ch: l.in_channels(),
                stride: l.stride,
            })
            .collect();
        let mut net = OracleNet {
            layers,
            inputs: Vec::new(),
        };
        let h = input.shape()[1];
        let w = input.shape()[2];
        let flat: Vec<f64> = input.iter().copied().collect();
        net.fill_cache(flat, h, w);
        net
    }

    fn fill_cache(&mut self, mut act: Vec<f64>, mut h: usize, mut w: usize) {
        self.inputs.clear();
        let n_layers = self.layers.len();
        for idx in 0..n_layers {
            self.inputs.push((act.clone(), h, w));
            let (mut z, oh, ow) = oracle_conv(&self.layers[idx], &act, h, w);
            h = oh;
            w = ow;
            if idx + 1 < n_layers {
                for v in z.iter_mut() {
                    if *v <= 0.0 {
                        *v *= 0.2;
                    }
                }
            }
            if idx == ORACLE_UPSAMPLE_AFTER {
                let c = self.layers[idx].out_ch;
                let mut up = vec![0.0; c * h * 2 * w * 2];
                for i in 0..c {
                    for y in 0..h * 2 {
                        for x in 0..w * 2 {
                            up[(i * h * 2 + y) * w * 2 + x] = z[(i * h + y / 2) * w + x / 2];
                        }
                    }
                }
                z = up;
                h *= 2;
                w *= 2;
            }
            act = z;
        }
        // Final activation map dims match the first input dims by design.
        self.inputs.push((act, h, w));
    }

    /// Loss with the current (possibly perturbed) parameters, recomputing
    /// only layers `from..` using the cached input of layer `from`. Appends
    /// the sign of every internal pre-activation to `signs` so the caller
    /// can detect leaky-ReLU kink crossings between two evaluations.
    fn loss_from(
        &self,
        from: usize,
        target: &Array2<f64>,
        mask: &Array2<f64>,
        signs: &mut Vec<bool>,
    ) -> f64 {
        signs.clear();
        let n_layers = self.layers.len();
        let (cached, mut h, mut w) = (
            self.inputs[from].0.clone(),
            self.inputs[from].1,
            self.inputs[from].2,
        );
        let mut act = cached;
        for idx in from..n_layers {
            let (mut z, oh, ow) = oracle_conv(&self.layers[idx], &act, h, w);
            h = oh;
            w = ow;
            if idx + 1 < n_layers {
                for v in z.iter_mut() {
                    signs.push(*v > 0.0);
                    if *v <= 0.0 {
                        *v *= 0.2;
                    }
                }
            }
            if idx == ORACLE_UPSAMPLE_AFTER {
                let c = self.layers[idx].out_ch;
                let mut up = vec![0.0; c * h * 2 * w * 2];
                for i in 0..c {
                    for y in 0..h * 2 {
                        for x in 0..w * 2 {
                            up[(i * h * 2 + y) * w * 2 + x] = z[(i * h + y / 2) * w + x / 2];
                        }
                    }
                }
                z = up;
                h *= 2;
                w *= 2;
            }
            act = z;
        }
        let count: f64 = mask.sum();
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                let m = mask[[y, x]];
                let d = act[y * w + x] - target[[y, x]];
                acc += m * d * d;
            }
        }
        acc / count
    }
}

fn gradient_check(channels: usize, seed: u64) -> f64 {
    let weights = NetworkWeights::init(channels, seed);
    let mut rng = stream(seed, Domain::GridSearch, 1);
    let input = Array3::from_shape_fn((channels, 16, 16), |_| rng.gen_range(-1.0..1.0));
    let target = Array2::from_shape_fn((16, 16), |_| rng.gen_range(-1.0..1.0));
    let mask = Array2::from_shape_fn((16, 16), |_| if rng.gen::<f64>() < 0.7 { 1.0 } else { 0.0 });
    let (_, grads) = loss_and_gradients(&weights, &input, &target, &mask).unwrap();

    // Sanity: the oracle's own forward pass agrees with the library's.
    let mut net = OracleNet::build(&weights, &input);
    let lib_pred = network_forward(&weights, &input).unwrap();
    let mut sp = Vec::new();
    let mut sm = Vec::new();
    let oracle_loss = net.loss_from(0, &target, &mask, &mut sp);
    let lib_loss = masked_mse(&lib_pred, &target, &mask);
    assert!(
        (oracle_loss - lib_loss).abs() <= 1e-12,
        "oracle forward mismatch: {oracle_loss} vs {lib_loss}"
    );

    let h = 1e-4;
    let mut worst = 0.0f64;
    for idx in 0..net.layers.len() {
        let n_w = net.layers[idx].w.len();
        let n_b = net.layers[idx].b.len();
        for k in 0..n_w + n_b {
            let perturb = |net: &mut OracleNet, delta: f64| {
                if k < n_w {
                    net.layers[idx].w[k] += delta;
                } else {
                    net.layers[idx].b[k - n_w] += delta;
                }
            };
            // A central difference across a leaky-ReLU kink does not estimate
            // the derivative at the midpoint, so when the +/- evaluations see
            // different activation sign patterns, shrink the step until the
            // perturbation interval is kink-free.
            let mut step = h;
            let fd = loop {
                perturb(&mut net, step);
                let lp = net.loss_from(idx, &target, &mask, &mut sp);
                perturb(&mut net, -2.0 * step);
                let lm = net.loss_from(idx, &target, &mask, &mut sm);
                perturb(&mut net, step);
                let fd = (lp - lm) / (2.0 * step);
                if sp == sm || step < 1e-8 {
                    break fd;
                }
                step /= 10.0;
            };
            let a = if k < n_w {
                grads.layers[idx].0.as_slice().unwrap()[k]
            } else {
                grads.layers[idx].1[k - n_w]
            };
            let denom = a.abs().max(fd.abs());
            let rel = if denom < 1e-5 {
                // Below the finite-difference noise floor the relative error
                // is meaningless; require absolute agreement instead.
                if (a - fd).abs() <= 1e-8 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (a - fd).abs() / denom
            };
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn criterion_03_network_gradient_check() {
    let worst2 = gradient_check(2, 103);
    let worst5 = gradient_check(5, 104);
    let worst = worst2.max(worst5);
    verdict(
        3,
        "analytic gradients match central differences (h=1e-4) for every weight, rel tol 1e-3, 2- and 5-channel",
        worst <= 1e-3,
        format!("worst rel err: 2ch {worst2:.3e}, 5ch {worst5:.3e}"),
    );
}

#[test]
fn criterion_04_metric_identities() {
    // Identity-at-observed estimator with N_obs = |N| gives exactly zero.
    let spec = GridSpec::new(4, 4, 1.0, Location::new(0.0, 0.0));
    let mut rng = stream(105, Domain::GridSearch, 0);
    let values = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-80.0..-40.0));
    let mut mask = Array2::zeros((4, 4));
    for (k, m) in mask.iter_mut().enumerate() {
        *m = if k % 3 == 0 { 1.0 } else { 0.0 };
    }
    let grid = QuantizedGrid {
        values: values.clone(),
        mask,
        spec,
    };
    let observed: HashSet<(usize, usize)> = grid.occupied().into_iter().collect();
    let zero = grid_squared_error(MetricKind::GridAll, &values, &grid, &observed).unwrap();

    // Constant-offset estimator yields exactly |c|.
    let c = 1.25;
    let truths: Vec<f64> = (0..50).map(|_| rng.gen_range(-90.0..-40.0)).collect();
    let ests: Vec<f64> = truths.iter().map(|t| t + c).collect();
    let rmse = metric_rmse(&[(ests, truths)]).unwrap();
    let offset_err = (rmse - c).abs();

    verdict(
        4,
        "identity estimator RMSE_grid = 0 exactly; constant-offset RMSE = |c| to 1e-12",
        zero == 0.0 && offset_err <= 1e-12,
        format!("grid error = {zero:.3e}, offset deviation = {offset_err:.3e}"),
    );
}

#[test]
fn criterion_05_fading_averaging() {
    // dB-mean quantization of >=25 sub-wavelength samples per grid point vs
    // a single raw sample, against the fading-free map.
    let spacing = 1.2;
    let spec = GridSpec::new(4, 4, spacing, Location::new(0.0, 0.0));
    let patch = Patch {
        corner: Location::new(0.0, 0.0),
        side: 4.8,
    };
    let mut mse_single = 0.0;
    let mut mse_avg = 0.0;
    for seed in 0..100u64 {
        let cfg = PropagationConfig {
            tx_power_plus_gain: 10.0,
            tx_location: Location::new(-25.0, 2.4),
            path_loss_exponent: 2.5,
            shadow_variance: 0.26,
            shadow_half_distance: 10.0,
            fading_enabled: true,
            noise_std: 0.0,
            wavelength: 0.3266,
            seed,
        };
        let map = generate_map((4.8, 4.8), spacing, &cfg).unwrap();
        let mut rng = stream(seed, Domain::PatchSampling, 5);
        let mut many = Vec::new();
        let mut single = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                let center = spec.point0(r, c);
                for s in 0..25 {
                    // Jittered sample inside the grid cell, sub-wavelength apart.
                    let loc = Location::new(
                        (center.x + rng.gen_range(-0.5..0.5) * spacing).clamp(0.0, 4.79),
                        (center.y + rng.gen_range(-0.5..0.5) * spacing).clamp(0.0, 4.79),
                    );
                    let m = meas(loc.x, loc.y, map.with_fading(&loc));
                    if s == 0 {
                        single.push(m);
                    }
                    many.push(m);
                }
            }
        }
        let inst = |measurements: Vec<Measurement>| EstimationInstance {
            measurements,
            patch: patch.clone(),
        };
        let q_many = quantize(&inst(many), &spec, CombiningMode::DbMean);
        let q_single = quantize(&inst(single), &spec, CombiningMode::DbMean);
        for r in 0..4 {
            for c in 0..4 {
                let truth = map.fading_free(&spec.point0(r, c));
                mse_avg += (q_many.values[[r, c]] - truth).powi(2);
                mse_single += (q_single.values[[r, c]] - truth).powi(2);
            }
        }
    }
    let reduction = 1.0 - mse_avg / mse_single;
    verdict(
        5,
        "dB-mean quantization of 25 sub-wavelength samples cuts squared deviation from the fading-free map by >= 30%, 100 seeds",
        reduction >= 0.30,
        format!("reduction = {:.1}%", reduction * 100.0),
    );
}

#[test]
fn criterion_06_distance_complexity() {
    let template = PropagationConfig {
        tx_power_plus_gain: 10.0,
        tx_location: Location::new(0.0, 0.0), // overwritten per distance
        path_loss_exponent: 2.5,
        shadow_variance: 0.0,
        shadow_half_distance: 50.0,
        fading_enabled: false,
        noise_std: 0.5,
        wavelength: 0.3266,
        seed: 0,
    };
    let sweep = SyntheticSweepConfig {
        region: (54.0, 54.0),
        grid_spacing: 1.2,
        line_spacing: 2.4,
        along_spacing: 1.2,
        patch_side: 43.2,
        iterations: 500,
        maps_per_point: 2,
    };
    let estimator = EstimatorConfig::Kriging(KrigingParams {
        shadow_variance: 1.0,
        shadow_half_distance: 20.0,
        noise_variance: 0.25,
    });
    let distances = [8.0, 16.0, 32.0, 64.0, 128.0, 256.0];
    let curve = distance_sweep(&template, &distances, &estimator, 0.001, &sweep, 106).unwrap();
    let rmses: Vec<f64> = curve.iter().map(|(_, r)| r.mean_error).collect();
    let rho = spearman(&distances, &rmses);
    verdict(
        6,
        "Kriging RMSE vs transmitter distance (6 LOS distances, density 0.001, 500 iterations): Spearman <= -0.8",
        rho <= -0.8,
        format!("spearman = {rho:.3}, rmses = {rmses:?}"),
    );
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &k) in idx.iter().enumerate() {
            r[k] = pos as f64;
        }
        r
    };
    let rx = rank(x);
    let ry = rank(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

#[test]
fn criterion_07_scenario_ordering() {
    let base = PropagationConfig {
        tx_power_plus_gain: 10.0,
        tx_location: Location::new(-20.0, 14.4),
        path_loss_exponent: 2.5,
        shadow_variance: 0.26,
        shadow_half_distance: 50.0,
        fading_enabled: false,
        noise_std: 0.5,
        wavelength: 0.3266,
        seed: 0,
    };
    let mut intense = base.clone();
    intense.shadow_variance = 0.81;
    intense.shadow_half_distance = 2.4;
    let scenarios = [
        Scenario {
            name: "smooth".into(),
            config: base,
        },
        Scenario {
            name: "intense".into(),
            config: intense,
        },
    ];
    let sweep = SyntheticSweepConfig {
        region: (28.8, 28.8),
        grid_spacing: 1.2,
        line_spacing: 2.4,
        along_spacing: 1.2,
        patch_side: 9.6,
        iterations: 300,
        maps_per_point: 3,
    };
    let search = SearchGrid {
        knn_k: vec![3],
        kriging_var: vec![0.0625, 0.26, 0.81],
        kriging_halfdist: vec![2.4, 9.6, 50.0],
        kriging_noise_var: vec![0.25],
        krr_reg: vec![1e-3],
        krr_kernels: vec![KernelKind::Gaussian],
        krr_widths: vec![30.0],
    };
    let densities = [0.005, 0.01, 0.02, 0.05];
    let rows = scenario_sweep(&scenarios, &densities, &search, &sweep, 60, 107).unwrap();
    let curve = |name: &str| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| r.scenario == name)
            .map(|r| (r.report.mean_error, r.report.std_error))
            .collect()
    };
    let smooth = curve("smooth");
    let intense = curve("intense");
    let ordering = smooth
        .iter()
        .zip(&intense)
        .all(|((s, _), (i, _))| s <= i);
    // Each curve must fit a monotone non-increasing sequence within one
    // reported std error per point (interval feasibility).
    let monotone_ok = |c: &[(f64, f64)]| -> bool {
        let mut upper = f64::INFINITY;
        for (v, se) in c {
            upper = upper.min(v + se);
            if upper < v - se {
                return false;
            }
        }
        true
    };
    verdict(
        7,
        "smooth-shadowing RMSE <= intense at 4 densities; both curves monotone non-increasing within 1 std error",
        ordering && monotone_ok(&smooth) && monotone_ok(&intense),
        format!("smooth = {smooth:?}, intense = {intense:?}"),
    );
}

#[test]
fn criterion_08_parameter_recovery() {
    let var_grid = [0.06, 0.16, 0.26, 0.36, 0.46];
    let half_grid = [2.0, 4.0, 6.0, 8.0, 10.0];
    let true_var = 0.26;
    let true_half = 6.0;
    let search = SearchGrid {
        knn_k: vec![3],
        kriging_var: var_grid.to_vec(),
        kriging_halfdist: half_grid.to_vec(),
        kriging_noise_var: vec![0.09],
        krr_reg: vec![1e-3],
        krr_kernels: vec![KernelKind::Gaussian],
        krr_widths: vec![30.0],
    };
    let mut hits = 0;
    let mut chosen = Vec::new();
    for run in 0..20u64 {
        let sweep = SyntheticSweepConfig {
            region: (28.8, 28.8),
            grid_spacing: 1.2,
            line_spacing: 2.4,
            along_spacing: 1.2,
            patch_side: 19.2,
            iterations: 1,
            maps_per_point: 1,
        };
        // Several independent maps per run: a single 28.8 m realization
        // holds only a handful of independent shadowing blobs, so the
        // empirical field variance would dominate the selection error.
        // The distant transmitter keeps the path-loss trend (~0.15 dB
        // across the region) far below the shadowing, and noise comparable
        // to the shadowing keeps the variance axis identifiable (kriging
        // weights are nearly scale-invariant when the noise term is
        // negligible).
        let mut rng = stream(108, Domain::PatchSampling, run);
        let mut instances: Vec<EstimationInstance> = Vec::new();
        for m in 0..20u64 {
            let cfg = PropagationConfig {
                tx_power_plus_gain: 10.0,
                tx_location: Location::new(-2000.0, 14.4),
                path_loss_exponent: 2.5,
                shadow_variance: true_var,
                shadow_half_distance: true_half,
                fading_enabled: false,
                noise_std: 0.3,
                wavelength: 0.3266,
                seed: 1000 + run * 20 + m,
            };
            let map = generate_map(sweep.region, sweep.grid_spacing, &cfg).unwrap();
            let locs = rme::synth::lawnmower_locations(
                sweep.region,
                sweep.line_spacing,
                sweep.along_spacing,
            );
            let set = rme::synth::sample_measurements(&map, &locs, &cfg);
            for _ in 0..3 {
                instances.push(rme::geo::sample_patch(&set, sweep.patch_side, &mut rng).unwrap());
            }
        }
        let trained = train_traditional(&instances, &search, (40, 100), 600, 2000 + run).unwrap();
        let vi = var_grid
            .iter()
            .position(|&v| v == trained.kriging.shadow_variance)
            .unwrap();
        let hi = half_grid
            .iter()
            .position(|&h| h == trained.kriging.shadow_half_distance)
            .unwrap();
        let true_vi = 2usize;
        let true_hi = 2usize;
        chosen.push((vi, hi));
        if vi.abs_diff(true_vi) <= 1 && hi.abs_diff(true_hi) <= 1 {
            hits += 1;
        }
    }
    verdict(
        8,
        "Kriging grid search recovers (shadow variance, half-distance) within one grid step in >= 80% of 20 runs",
        hits >= 16,
        format!("hits = {hits}/20, chosen (var, half) indices = {chosen:?}, truth = (2, 2)"),
    );
}

#[test]
fn criterion_09_frade_structure_and_training() {
    // Structural half: channels 1-2 bitwise, channels 3-5 entrywise vs
    // direct estimator calls.
    let spec = GridSpec::new(8, 8, 1.2, Location::new(0.0, 0.0));
    let mut rng = stream(109, Domain::GridSearch, 0);
    let obs: Vec<Measurement> = (0..12)
        .map(|_| {
            let (r, c) = (rng.gen_range(0..8), rng.gen_range(0..8));
            let loc = spec.point0(r, c);
            meas(loc.x, loc.y, rng.gen_range(-80.0..-40.0))
        })
        .collect();
    let params = FradeParams {
        knn: KnnParams { k: 3 },
        kriging: KrigingParams {
            shadow_variance: 0.26,
            shadow_half_distance: 10.0,
            noise_variance: 0.25,
        },
        krr: KrrParams {
            reg: 1e-4,
            kernel: KernelKind::Gaussian,
            width: 30.0,
        },
        weights: NetworkWeights::zeros(5),
    };
    let input = frade_assemble_input(&obs, &spec, &params).unwrap();
    let q = quantize(
        &EstimationInstance {
            measurements: obs.clone(),
            patch: Patch {
                corner: spec.origin,
                side: 8.0 * 1.2,
            },
        },
        &spec,
        CombiningMode::DbMean,
    );
    let mut structural = true;
    let mut worst_aux = 0.0f64;
    let knn_p = KnnParams { k: 3 };
    let kriging = rme::estimators::KrigingModel::fit(&obs, &params.kriging).unwrap();
    let krr = rme::estimators::KrrModel::fit(&obs, &params.krr).unwrap();
    for r in 0..8 {
        for c in 0..8 {
            structural &= input[[0, r, c]].to_bits() == q.values[[r, c]].to_bits();
            structural &= input[[1, r, c]].to_bits() == q.mask[[r, c]].to_bits();
            let p = spec.point0(r, c);
            worst_aux = worst_aux
                .max((input[[2, r, c]] - rme::estimators::knn_estimate(&obs, &knn_p, &p).unwrap()).abs())
                .max((input[[3, r, c]] - kriging.estimate(&p)).abs())
                .max((input[[4, r, c]] - krr.estimate(&p)).abs());
        }
    }

    // Training half: 500 examples, 50 epochs, FRADE vs the plain 2-channel
    // network on the same data.
    let mut examples = Vec::new();
    for k in 0..100u64 {
        let cfg = PropagationConfig {
            tx_power_plus_gain: 10.0,
            tx_location: Location::new(-20.0, 4.8),
            path_loss_exponent: 2.5,
            shadow_variance: 0.26,
            shadow_half_distance: 6.0,
            fading_enabled: false,
            noise_std: 0.5,
            wavelength: 0.3266,
            seed: 3000 + k,
        };
        let map = generate_map((9.6, 9.6), 1.2, &cfg).unwrap();
        let locs = rme::synth::lawnmower_locations((9.6, 9.6), 1.2, 1.2);
        let set = rme::synth::sample_measurements(&map, &locs, &cfg);
        let inst = EstimationInstance {
            measurements: set.measurements,
            patch: Patch {
                corner: Location::new(0.0, 0.0),
                side: 9.6,
            },
        };
        let grid = quantize(&inst, &spec, CombiningMode::DbMean);
        examples.extend(make_training_examples(&grid, (5, 40), 6, 109, k).unwrap());
    }
    let (train, test) = examples.split_at(500);
    let plain_train = prepare_network_examples(train, &spec, None).unwrap();
    let plain_test = prepare_network_examples(test, &spec, None).unwrap();
    let frade_train = prepare_network_examples(train, &spec, Some(&params)).unwrap();
    let frade_test = prepare_network_examples(test, &spec, Some(&params)).unwrap();
    let cfg = AdamConfig {
        learning_rate: 1e-3,
        batch_size: 50,
        epochs: 50,
        seed: 109,
        ..AdamConfig::default()
    };
    let (w2, _) = train_network(&plain_train, &NetworkWeights::init(2, 109), &cfg).unwrap();
    let (w5, _) = train_network(&frade_train, &NetworkWeights::init(5, 109), &cfg).unwrap();
    let rmse_plain = network_rmse(&w2, &plain_test).unwrap();
    let rmse_frade = network_rmse(&w5, &frade_test).unwrap();

    verdict(
        9,
        "FRADE channels 1-2 bitwise, 3-5 within 1e-9 dB; trained FRADE RMSE <= plain network RMSE + 0.1 dB",
        structural && worst_aux <= 1e-9 && rmse_frade <= rmse_plain + 0.1,
        format!(
            "aux worst = {worst_aux:.3e}, frade rmse = {rmse_frade:.3} dB, plain rmse = {rmse_plain:.3} dB"
        ),
    );
}

#[test]
fn criterion_10_density_bookkeeping() {
    let d = normalized_density(60, 0.32657, 19.2);
    let err = (d - 0.01736).abs();
    verdict(
        10,
        "N_obs=60, l=19.2 m, lambda=0.32657 m reports normalized density 0.01736 +/- 1e-5",
        err <= 1e-5,
        format!("density = {d:.7}"),
    );
}

#[test]
fn criterion_11_reproducibility() {
    // Byte-identical evaluate reports across reruns and thread counts, via
    // the library path used by the CLI.
    let cfg = PropagationConfig {
        tx_power_plus_gain: 10.0,
        tx_location: Location::new(-30.0, 12.0),
        path_loss_exponent: 2.5,
        shadow_variance: 0.26,
        shadow_half_distance: 10.0,
        fading_enabled: true,
        noise_std: 0.5,
        wavelength: 0.3266,
        seed: 11,
    };
    let map = generate_map((28.8, 28.8), 1.2, &cfg).unwrap();
    let locs = rme::synth::lawnmower_locations((28.8, 28.8), 2.4, 1.2);
    let sets = vec![rme::synth::sample_measurements(&map, &locs, &cfg)];
    let est = EstimatorConfig::Kriging(KrigingParams {
        shadow_variance: 0.26,
        shadow_half_distance: 10.0,
        noise_variance: 0.25,
    });
    let render = || {
        let reports = run_sweep(
            &sets,
            &est,
            &[MetricKind::Rmse, MetricKind::GridNobs],
            &[10, 30],
            9.6,
            100,
            1111,
        )
        .unwrap();
        rme::io::render_report(&reports, None)
    };
    let a = render();
    let b = render();
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool1.install(render);
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let d = pool4.install(render);
    verdict(
        11,
        "evaluate reports are byte-identical across reruns and thread counts (1 and 4 threads)",
        a == b && a == c && a == d,
        format!("report bytes = {}", a.len()),
    );
}
