//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Criteria 7, 8, 10 and 11 gate stochastic training outcomes; their
//! failures are reported but do not fail the target. Every other criterion
//! is an exact or statistical oracle and must pass.
//!
//! `CCDTWIN_ACCEPTANCE_QUICK=1` shrinks the training budgets for a fast
//! plumbing check; the gates are then not meaningful.
//! `CCDTWIN_ACCEPTANCE_ONLY=1,2,12` runs a subset.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ccdtwin::config::{ExperimentConfig, StartsConfig};
use ccdtwin::discrepancy::{
    build_residuals, fit, pinball_loss, rearrange, QuantileConfig, QuantileModel, ResidualDataset, ResidualMode,
    ResidualRecord, QUANTILE_LEVELS,
};
use ccdtwin::dynamics::{discretize_zoh, IllustrativeConfig, IllustrativeTruthConfig, PlantSpec, SuspensionConfig};
use ccdtwin::envsim::{
    collect, compute_gae, IllustrativeTruthEnv, NominalDisturbance, NominalEnv, RewardSpec, RolloutConfig,
    Starts, TransitionBatch,
};
use ccdtwin::lifecycle::{
    fit_name, gen_name, load_record, run_lifecycle, run_step0, run_step1, Comparison, FitRecord, GenerationRecord,
    Registry, Scenario, HISTORY_FILE, INDEX_FILE,
};
use ccdtwin::ppo::{
    clipped_surrogate, ppo_loss, smooth_l1, Agent, FeatureScaling, GaussianPolicy, LossConfig, NetworkSpec, ValueNet,
};
use ccdtwin::pretrain::{feasible_counts, generate_samples, lhs_sample, MpcProblem};
use ccdtwin::tensorgrad::{Activation, Matrix, Mlp, Tape};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn quick() -> bool {
    std::env::var("CCDTWIN_ACCEPTANCE_QUICK").is_ok_and(|v| !v.is_empty() && v != "0")
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------- 1

fn quadratic_loss(net: &Mlp, x: &Matrix, y: &Matrix) -> f64 {
    let out = net.forward_batch(x).unwrap();
    0.5 * out.data().iter().zip(y.data()).map(|(o, t)| (o - t).powi(2)).sum::<f64>()
}

fn autodiff_oracle() -> Outcome {
    let shapes: [&[usize]; 2] = [&[3, 32, 32, 16, 16], &[6, 16, 32, 32, 16]];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for k in 0..50 {
        let sizes = shapes[k % 2];
        let acts = Mlp::activations_for(sizes.len() - 1, |_| Activation::Tanh);
        let mut net = Mlp::glorot(sizes, &acts, &mut rng).unwrap();
        for l in 0..net.n_layers() {
            net.bias_mut(l).data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
        let batch = 4;
        let x = Matrix::from_vec(batch, sizes[0], (0..batch * sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let out_dim = *sizes.last().unwrap();
        let y = Matrix::from_vec(batch, out_dim, (0..batch * out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect());

        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let out = net.forward_tape(&mut tape, &vars, xv).unwrap();
        let yv = tape.leaf(y.clone());
        let d = tape.sub(out, yv);
        let sq = tape.square(d);
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Matrix> = vars.params().into_iter().map(|v| grads.wrt(v)).collect();

        let h = 1e-5;
        let n_params = net.params().len();
        for p in 0..n_params {
            for i in 0..analytic[p].len() {
                let orig = net.params()[p].data()[i];
                net.params_mut()[p].data_mut()[i] = orig + h;
                let up = quadratic_loss(&net, &x, &y);
                net.params_mut()[p].data_mut()[i] = orig - h;
                let down = quadratic_loss(&net, &x, &y);
                net.params_mut()[p].data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                worst = worst.max(rel_err(analytic[p].data()[i], fd, 1e-3));
                checked += 1;
            }
        }
    }

    let (w2, detail2) = ppo_design_gradient();
    let pass = worst <= 1e-5 && w2 <= 1e-4;
    outcome(
        pass,
        format!("50 MLPs, {checked} parameters, worst relative error {worst:.2e} (≤1e-5); {detail2} (≤1e-4)"),
    )
}

fn ppo_design_gradient() -> (f64, String) {
    let cfg = IllustrativeConfig::default();
    let plant = PlantSpec::Illustrative(cfg.clone());
    let design = plant.initial_design().unwrap();
    let (lo, hi) = plant.state_bounds();
    let scaling = FeatureScaling::from_bounds(&lo, &hi);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = NetworkSpec::illustrative();
    let policy = GaussianPolicy::new(&spec, scaling.clone(), 1, 5.0, 0.5, 0.01, &mut rng).unwrap();
    let value = ValueNet::new(&spec, scaling, 1, 20.0, &mut rng).unwrap();
    let agent = Agent { policy, value };
    let env = NominalEnv {
        plant: plant.nominal(&design).unwrap(),
        reward: RewardSpec::illustrative(),
        disturbance: NominalDisturbance::Gaussian(cfg.noise_std.to_vec()),
        action_bounds: plant.input_bounds(),
        blowup_bound: 1e6,
    };
    let starts: Vec<Vec<f64>> = (0..16).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let eps = collect(&env, &agent, Starts::Fixed(&starts), 16, &RolloutConfig::new(30, 5)).unwrap();
    let mut batch = TransitionBatch::from_episodes(&eps, 0.99, 0.95, true).unwrap();
    // Move the snapshot off the current policy so ratios spread around 1.
    for lp in &mut batch.log_probs_old {
        *lp += rng.gen_range(-0.3..0.3);
    }
    let z = design.normalized();
    let loss_at = |z: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let g = ppo_loss(&mut tape, &agent, &batch, z, &LossConfig::default(), None).unwrap();
        tape.scalar(g.loss)
    };
    let mut tape = Tape::new();
    let g = ppo_loss(&mut tape, &agent, &batch, &z, &LossConfig::default(), None).unwrap();
    let grads = tape.backward(g.loss).unwrap();
    let analytic = grads.wrt(g.design).data()[0];
    // The loss is a large sum; smaller steps lose digits to cancellation.
    let h = 1e-4;
    let fd = (loss_at(&[z[0] + h]) - loss_at(&[z[0] - h])) / (2.0 * h);
    let err = rel_err(analytic, fd, 1e-8);
    (err, format!("ppo_loss d/dp {analytic:.6e} vs FD {fd:.6e}, relative error {err:.2e}"))
}

// ---------------------------------------------------------------- 2

fn series_oracle(a_c: &Matrix, rhs: &Matrix, t: f64) -> (Matrix, Matrix) {
    // exp(A T) = Σ (A T)^k / k!,  ∫₀ᵀ exp(A τ) dτ · B = Σ A^k T^{k+1} / (k+1)! · B
    let n = a_c.rows();
    let at = a_c.scale(t);
    let mut term = Matrix::identity(n);
    let mut expm = Matrix::identity(n);
    let mut integral = Matrix::identity(n).scale(t);
    let mut int_term = Matrix::identity(n).scale(t);
    for k in 1..30 {
        term = term.matmul(&at).scale(1.0 / k as f64);
        expm.add_assign(&term);
        int_term = int_term.matmul(&at).scale(1.0 / (k + 1) as f64);
        integral.add_assign(&int_term);
    }
    (expm, integral.matmul(rhs))
}

fn max_entry_err(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn discretization_oracle() -> Outcome {
    let cfg = SuspensionConfig::default();
    let design = cfg.design().unwrap();
    let cont = cfg.continuous(&design).unwrap();
    let t = 0.05;
    let d = discretize_zoh(&cont, t).unwrap();
    let (a_ref, b_ref) = series_oracle(&cont.a_c, &cont.b_c, t);
    let (_, e_ref) = series_oracle(&cont.a_c, &cont.e_c, t);
    let err = max_entry_err(&d.a, &a_ref).max(max_entry_err(&d.b, &b_ref)).max(max_entry_err(&d.e_d, &e_ref));

    let zero = ccdtwin::dynamics::ContinuousPlant::new(
        Matrix::zeros(2, 2),
        Matrix::column_vector(&[1.0, 2.0]),
        Matrix::zeros(2, 1),
        design.clone(),
    )
    .unwrap();
    let dz = discretize_zoh(&zero, t).unwrap();
    let exact = dz.b.data() == Matrix::column_vector(&[1.0, 2.0]).scale(t).data() && dz.a == Matrix::identity(2);
    outcome(
        err <= 1e-9 && exact,
        format!("suspension A, B, E_d vs 30-term series: max error {err:.2e} (≤1e-9); A_c=0 gives B=B_c·T exactly: {exact}"),
    )
}

// ---------------------------------------------------------------- 3, 4

fn ppo_arithmetic() -> Outcome {
    let cases = [
        (clipped_surrogate(1.5, 1.0, 0.2), 1.2),
        (smooth_l1(0.0, 0.5), 0.125),
        (smooth_l1(2.0, 0.0), 1.5),
    ];
    let worst = cases.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("clip term 1.2, SmoothL1 0.125 and 1.5: max error {worst:.1e}"))
}

fn gae_oracle() -> Outcome {
    let (g, l) = (0.9, 0.8);
    let r = [1.0, -2.0, 0.5];
    let v = [0.3, 0.1, -0.4, 0.2];
    let d: Vec<f64> = (0..3).map(|k| r[k] + g * v[k + 1] - v[k]).collect();
    let a2 = d[2];
    let a1 = d[1] + g * l * a2;
    let a0 = d[0] + g * l * a1;
    let (adv, ret) = compute_gae(&r, &v, g, l).unwrap();
    let mut err = [a0, a1, a2].iter().zip(&adv).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    err = err.max(ret.iter().zip(&adv).zip(&v).map(|((r, a), v)| (r - (a + v)).abs()).fold(0.0, f64::max));

    let (td, _) = compute_gae(&r, &v, g, 0.0).unwrap();
    let lambda0 = (0..3).all(|k| (td[k] - (r[k] + g * v[k + 1] - v[k])).abs() <= 1e-12);
    let (mc, _) = compute_gae(&r, &v, 1.0, 1.0).unwrap();
    let lambda1 = (0..3).all(|k| (mc[k] - (r[k..].iter().sum::<f64>() + v[3] - v[k])).abs() <= 1e-12);
    outcome(
        err <= 1e-12 && lambda0 && lambda1,
        format!("3-step hand case error {err:.1e}; λ=0 gives one-step TD: {lambda0}; λ=1 gives Monte Carlo: {lambda1}"),
    )
}

// ---------------------------------------------------------------- 5

fn gaussian_residuals(episodes: usize, steps: usize, sigma: f64, seed: u64) -> ResidualDataset {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut records = Vec::new();
    for ep in 0..episodes {
        let mut e = vec![rng.gen_range(-1.0..1.0)];
        for k in 0..steps {
            let next = vec![0.5 * e[0] + normal.sample(&mut rng)];
            records.push(ResidualRecord {
                episode: ep,
                segment: 0,
                step: k,
                e: e.clone(),
                x: vec![rng.gen_range(-1.0..1.0)],
                u: rng.gen_range(-1.0..1.0),
                e_next: next.clone(),
            });
            e = next;
        }
    }
    ResidualDataset {
        state_dim: 1,
        mode: ResidualMode::OneStep,
        records,
        episodes,
        splits: 0,
    }
}

fn quantile_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pts: Vec<f64> = (0..101).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut sorted = pts.clone();
    sorted.sort_by(f64::total_cmp);
    let mut minimizer_ok = true;
    for tau in QUANTILE_LEVELS {
        // Grid over the data range plus the points themselves.
        let mut grid: Vec<f64> = (0..=6000).map(|i| -3.0 + i as f64 * 1e-3).collect();
        grid.extend(&pts);
        let loss = |c: f64| pinball_loss(&vec![c; pts.len()], &pts, tau);
        let best = grid.iter().copied().min_by(|a, b| loss(*a).total_cmp(&loss(*b))).unwrap();
        let empirical = sorted[(tau * 100.0).round() as usize];
        minimizer_ok &= (best - empirical).abs() < 1e-12;
    }

    let data = gaussian_residuals(40, 50, 0.1, 1);
    let mut mrng = ChaCha8Rng::seed_from_u64(2);
    let mut model = QuantileModel::new(1, &[32, 32], &mut mrng).unwrap();
    let cfg = QuantileConfig {
        epochs: 60,
        hidden: vec![32, 32],
        ..Default::default()
    };
    fit(&data, &mut model, &cfg, 3).unwrap();
    let probe = &data.records[..500];
    let half = probe
        .iter()
        .map(|r| model.predict(&r.e, &r.x, r.u).unwrap().width()[0] / 2.0)
        .sum::<f64>()
        / probe.len() as f64;
    let want = 1.28155 * 0.1;
    let band_ok = (half - want).abs() <= 0.25 * want;

    let mut never_worse = true;
    for _ in 0..1000 {
        let n = 16;
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let raw: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let total = |q: &[[f64; 3]]| -> f64 {
            (0..3)
                .map(|j| pinball_loss(&q.iter().map(|r| r[j]).collect::<Vec<_>>(), &target, QUANTILE_LEVELS[j]))
                .sum()
        };
        let fixed: Vec<[f64; 3]> = raw
            .iter()
            .map(|r| {
                let (a, b, c) = rearrange(r[0], r[1], r[2]);
                [a, b, c]
            })
            .collect();
        never_worse &= total(&fixed) <= total(&raw) + 1e-12;
    }
    outcome(
        minimizer_ok && band_ok && never_worse,
        format!(
            "constant minimizer = empirical quantile: {minimizer_ok}; band half-width {half:.4} vs {want:.4} (±25%): {band_ok}; rearrangement never worse on 1000 batches: {never_worse}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn feasibility_properties() -> Outcome {
    let cfg = ExperimentConfig::illustrative();
    let plant = &cfg.plant;
    let reward = RewardSpec::illustrative();
    let set = generate_samples(plant, &reward, &cfg.pretrain, 17, 1).unwrap();
    let (lo, hi) = plant.state_bounds();
    let base = plant.initial_design().unwrap();
    let mut replay_ok = 0;
    for s in &set.samples {
        let nominal = plant.nominal(&base.with_values(&s.p)).unwrap();
        let mpc = MpcProblem::new(&nominal, &reward, (&lo, &hi), plant.input_bounds(), &cfg.pretrain.mpc).unwrap();
        if let Some(sol) = mpc.solve(&s.x).unwrap() {
            if mpc.replay_ok(&s.x, &sol.inputs) {
                replay_ok += 1;
            }
        }
    }
    let bounds: Vec<[f64; 2]> = lo.iter().zip(&hi).map(|(l, h)| [*l, *h]).collect();
    let cloud = lhs_sample(&bounds, 2000, 99).unwrap();
    let designs: Vec<Vec<f64>> = [0.5, 1.0, 1.5, 2.0].iter().map(|p| vec![*p]).collect();
    let counts = feasible_counts(plant, &reward, &cfg.pretrain.mpc, &designs, &cloud).unwrap();
    let monotone = counts.windows(2).all(|w| w[0] <= w[1]);
    let all = replay_ok == set.samples.len();
    outcome(
        all && monotone,
        format!(
            "{replay_ok}/{} accepted samples replay inside the constraints; feasible counts over p = 0.5, 1, 1.5, 2: {counts:?} (non-decreasing: {monotone})",
            set.samples.len()
        ),
    )
}

// ---------------------------------------------------------------- 7, 8, 9

struct History {
    returns: Vec<f64>,
    design: Vec<f64>,
    terminated: Vec<usize>,
}

fn read_history(reg: &Registry, entry: &str) -> History {
    let bytes = reg.read(entry, HISTORY_FILE).unwrap();
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (ret, term) = (col("avg_return"), col("terminated_episodes"));
    let p = col("mean_std") + 1;
    let mut h = History {
        returns: Vec::new(),
        design: Vec::new(),
        terminated: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.unwrap();
        h.returns.push(rec[ret].parse().unwrap());
        h.design.push(rec[p].parse().unwrap());
        h.terminated.push(rec[term].parse().unwrap());
    }
    h
}

/// Least-squares slope of `y` against its index over the points kept.
fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn illustrative_step1(reg: &Registry) -> Outcome {
    let rec: GenerationRecord = load_record(reg, &gen_name(1)).unwrap();
    let (before, after) = (rec.before.unwrap(), rec.after.unwrap());
    let h = read_history(reg, &gen_name(1));
    let improved = after.mean >= before.mean + 0.10 * before.mean.abs();
    let narrower = after.std < before.std;
    let in_bounds = h.design.iter().all(|p| (0.5..=2.0).contains(p));
    // The first 2000 epochs of a constant-rate run are the 2000-epoch
    // smoke run. Epochs with a blown-up episode are left out of the fit.
    let smoke: Vec<(f64, f64)> = (0..h.returns.len().min(2000))
        .filter(|&i| h.terminated[i] == 0)
        .map(|i| (i as f64, h.returns[i]))
        .collect();
    let s = slope(&smoke);
    outcome(
        improved && narrower && in_bounds && s > 0.0,
        format!(
            "{} epochs: nominal return {:.3} ± {:.3} → {:.3} ± {:.3} ({:+.1}%, {} and {} blown-up rollouts of {}); p ∈ [{:.4}, {:.4}], final {:.4}; 2000-epoch slope {s:.3e}",
            rec.epochs,
            before.mean,
            before.std,
            after.mean,
            after.std,
            100.0 * (after.mean - before.mean) / before.mean.abs(),
            before.terminated,
            after.terminated,
            before.rollouts,
            h.design.iter().copied().fold(f64::INFINITY, f64::min),
            h.design.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            h.design.last().unwrap()
        ),
    )
}

fn generation_gate(cmp: &Comparison, std_ratio: f64, strict: bool) -> Outcome {
    let (g1, g2) = (cmp.stats("gen-1").unwrap(), cmp.stats("gen-2").unwrap());
    let mean_ok = if strict { g2.mean > g1.mean } else { g2.mean >= g1.mean };
    let std_ok = g2.std <= std_ratio * g1.std;
    outcome(
        mean_ok && std_ok,
        format!(
            "truth plant, {} paired rollouts: Gen-1 {:.4} ± {:.4} (design {:?}), Gen-2 {:.4} ± {:.4} (design {:?}); std ratio {:.3} (≤{std_ratio}); blown up {}/{}",
            g1.rollouts,
            g1.mean,
            g1.std,
            round4(&g1.design),
            g2.mean,
            g2.std,
            round4(&g2.design),
            g2.std / g1.std,
            g1.terminated,
            g2.terminated
        ),
    )
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn quantile_gates(illustrative: &Registry) -> Outcome {
    // Zero gap: the truth plant is the noise-free nominal model.
    let cfg = IllustrativeConfig::default();
    let plant = PlantSpec::Illustrative(cfg.clone());
    let design = plant.initial_design().unwrap();
    let nominal = plant.nominal(&design).unwrap();
    let env = IllustrativeTruthEnv {
        config: cfg.clone(),
        truth: IllustrativeTruthConfig::disabled(),
        plant: nominal.clone(),
        reward: RewardSpec::illustrative(),
        blowup_bound: 1e6,
    };
    let agent: Agent = ccdtwin::lifecycle::load_agent(illustrative, &gen_name(1)).unwrap();
    let starts: Vec<Vec<f64>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (0..60).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect()
    };
    let eps = collect(&env, &agent, Starts::Fixed(&starts), 60, &RolloutConfig::new(100, 8)).unwrap();
    let usable: Vec<_> = eps.into_iter().filter(|e| !e.terminated_early).collect();
    let data = build_residuals(&usable, &nominal, ResidualMode::OneStep, 1e3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let qcfg = QuantileConfig::default();
    let mut model = QuantileModel::new(2, &qcfg.hidden, &mut rng).unwrap();
    let zero = fit(&data, &mut model, &qcfg, 6).unwrap();
    let rmse = zero.metrics.median_rmse;

    // Illustrative gap: the lifecycle's fit on deployment residuals,
    // validated on held-out episodes.
    let rec: FitRecord = serde_json::from_str(&illustrative.read_string(&fit_name(1), "fit.json").unwrap()).unwrap();
    let cov = rec.report.metrics.coverage;
    outcome(
        rmse < 1e-3 && (0.70..=0.95).contains(&cov),
        format!(
            "zero-gap median RMSE {rmse:.2e} (<1e-3); illustrative-gap coverage {cov:.3} in [0.70, 0.95], median RMSE {:.4} (not gated)",
            rec.report.metrics.median_rmse
        ),
    )
}

// ---------------------------------------------------------------- 10, 11

fn smoothness_gate(cmp: &Comparison) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for c in 1..=cmp.canonical_states.len() {
        let s1 = cmp.sigma(c, "u", "gen-1").unwrap();
        let s2 = cmp.sigma(c, "u", "gen-2").unwrap();
        if s2 <= 0.5 * s1 {
            wins += 1;
        }
        parts.push(format!("IC{c} {s1:.3} → {s2:.3}"));
    }
    outcome(
        wins >= 2,
        format!("σ_ss(u) Gen-1 → Gen-2: {}; halved in {wins}/3 (need ≥2)", parts.join(", ")),
    )
}

// ---------------------------------------------------------------- 12

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::illustrative();
    cfg.seed = 12;
    cfg.starts = StartsConfig::FeasiblePool {
        size: 80,
        input_fraction: 0.85,
    };
    cfg.pretrain.samples = 60;
    cfg.pretrain.epochs = 50;
    cfg.ppo.epochs = 10;
    cfg.lifecycle.deploy_episodes = 30;
    cfg.lifecycle.eval_rollouts = 30;
    cfg.lifecycle.nominal_eval_rollouts = 30;
    cfg
}

fn determinism(root: &Path) -> Outcome {
    let cfg = tiny_config();
    let mut index = Vec::new();
    for run in ["a", "b"] {
        let sc = Scenario::build(&cfg).unwrap();
        let mut reg = Registry::open_or_create(&root.join(run)).unwrap();
        run_lifecycle(&sc, &mut reg, 2).unwrap();
        index.push(std::fs::read(root.join(run).join(INDEX_FILE)).unwrap());
    }
    let same = index[0] == index[1];
    let reg = Registry::open(&root.join("a")).unwrap();
    outcome(
        same,
        format!(
            "two lifecycle runs, {} registry entries each: index digests byte-identical: {same}",
            reg.entries().len()
        ),
    )
}

// ---------------------------------------------------------------- driver

fn illustrative_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::illustrative();
    if quick() {
        cfg.ppo.epochs = 2000;
        cfg.lifecycle.step3_epochs = Some(2000);
    }
    cfg
}

fn suspension_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::suspension();
    cfg.ppo.epochs = if quick() { 300 } else { 2000 };
    if quick() {
        cfg.pretrain.samples = 600;
    }
    cfg
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and name filters: this target has a single
    // unnamed case.
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filter = args.iter().skip(1).find(|a| !a.starts_with('-'));
    if filter.is_some_and(|f| !"acceptance".contains(f.as_str())) {
        return;
    }

    // CCDTWIN_ACCEPTANCE_ONLY="1,2,12" restricts the run to those criteria.
    let selected: Vec<usize> = match std::env::var("CCDTWIN_ACCEPTANCE_ONLY") {
        Ok(list) if !list.trim().is_empty() => list
            .split(',')
            .map(|n| n.trim().parse().expect("CCDTWIN_ACCEPTANCE_ONLY: comma-separated criterion numbers"))
            .collect(),
        _ => (1..=12).collect(),
    };
    let work = tempfile::tempdir().unwrap();
    println!("acceptance criteria{}", if quick() { " (quick mode: gates not meaningful)" } else { "" });
    let mut failed_required = Vec::new();
    let mut failed_gates = Vec::new();
    let mut report = |n: usize, gate: bool, start: Instant, o: Outcome| {
        println!(
            "criterion {n:>2}: {}  {}  [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            if gate {
                failed_gates.push(n);
            } else {
                failed_required.push(n);
            }
        }
    };

    let t = Instant::now();
    let run = |n: usize| selected.contains(&n);
    if run(1) {
        report(1, false, t, autodiff_oracle());
    }
    let t = Instant::now();
    if run(2) {
        report(2, false, t, discretization_oracle());
    }
    let t = Instant::now();
    if run(3) {
        report(3, false, t, ppo_arithmetic());
    }
    let t = Instant::now();
    if run(4) {
        report(4, false, t, gae_oracle());
    }
    let t = Instant::now();
    if run(5) {
        report(5, false, t, quantile_oracle());
    }
    let t = Instant::now();
    if run(6) {
        report(6, false, t, feasibility_properties());
    }

    // Illustrative lifecycle: step 1 for criterion 7, then generation 2.
    if run(7) || run(8) || run(9) {
        let t = Instant::now();
        let sc = Scenario::build(&illustrative_config()).unwrap();
        let mut reg = Registry::open_or_create(&work.path().join("illustrative")).unwrap();
        run_step0(&sc, &mut reg).unwrap();
        run_step1(&sc, &mut reg).unwrap();
        if run(7) {
            report(7, true, t, illustrative_step1(&reg));
        }
        let t = Instant::now();
        let cmp = run_lifecycle(&sc, &mut reg, 2).unwrap();
        if run(8) {
            report(8, true, t, generation_gate(&cmp, 0.9, false));
        }
        let t = Instant::now();
        if run(9) {
            report(9, false, t, quantile_gates(&reg));
        }
    }

    if run(10) || run(11) {
        let t = Instant::now();
        let sc = Scenario::build(&suspension_config()).unwrap();
        let mut reg = Registry::open_or_create(&work.path().join("suspension")).unwrap();
        let cmp = run_lifecycle(&sc, &mut reg, 2).unwrap();
        if run(10) {
            report(10, true, t, generation_gate(&cmp, 0.8, true));
        }
        let t = Instant::now();
        if run(11) {
            report(11, true, t, smoothness_gate(&cmp));
        }
    }

    let t = Instant::now();
    if run(12) {
        report(12, false, t, determinism(&work.path().join("determinism")));
    }

    println!(
        "summary: {} required failures {:?}; {} training-gate failures {:?}",
        failed_required.len(),
        failed_required,
        failed_gates.len(),
        failed_gates
    );
    if !failed_required.is_empty() {
        std::process::exit(1);
    }
}
