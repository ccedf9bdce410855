//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured quantities. Tolerances are pinned in the assertions.
//!
//! Run with `cargo test -p macura --test acceptance -- --nocapture`.

mod common;

use common::{small_macura_config, CorruptedPendulumModel, PerfectPendulumModel};
use macura::config::{Algorithm, RunConfig};
use macura::log::parse_learning_curve;
use macura::run::{execute_run, steps_to_threshold};
use macura::study::{bound_check, grid_study, DeltaPEstimate, GridSpec};
use macura_core::buffer::{ReplayBuffer, Transition};
use macura_core::env::{
    generate_spiral_dataset, ControllerParams, FlControllerPolicy, NoisyActionEnv,
    PendulumParams,
};
use macura_core::gaussian::{
    gjs_divergence, hellinger_distance, kl_divergence, tv_upper_bound, u_gjs, DiagGaussian,
    EnsemblePrediction,
};
use macura_core::model::{train_ensemble, DynamicsEnsemble, EnsembleModel, ModelConfig, TrainConfig};
use macura_core::noise::{NoiseKind, NoiseProcess};
use macura_core::rollout::{
    base_uncertainty_quantile, compute_update_steps, macura_rollout_round, round_substream,
    KappaTracker, RolloutConfig, RolloutPolicy,
};
use macura_core::Result as CoreResult;
use macura_testkit as oracle;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn g1(mean: f64, var: f64) -> DiagGaussian<f64> {
    DiagGaussian::scalar(mean, var).unwrap()
}

/// Criterion 1: closed-form KL and Hellinger against adaptive quadrature on
/// 200 random 1-D pairs (abs tol 1e-6), and sqrt(2)*Hellinger >= quadrature
/// TV on every pair.
#[test]
fn criterion_01_divergence_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let mut max_kl_err = 0.0f64;
    let mut max_h_err = 0.0f64;
    for _ in 0..200 {
        let draw = |rng: &mut ChaCha8Rng| {
            g1(
                rng.gen_range(-5.0..5.0),
                10f64.powf(rng.gen_range(-2.0..2.0)),
            )
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let (mp, vp) = (p.mean()[0], p.var()[0]);
        let (mq, vq) = (q.mean()[0], q.var()[0]);

        let kl_err = (kl_divergence(&p, &q).unwrap() - oracle::kl_quadrature(mp, vp, mq, vq, 1e-10))
            .abs();
        let h_err = (hellinger_distance(&p, &q).unwrap()
            - oracle::hellinger_quadrature(mp, vp, mq, vq, 1e-12))
        .abs();
        assert!(kl_err < 1e-6, "KL mismatch {kl_err} for {p:?} {q:?}");
        assert!(h_err < 1e-6, "Hellinger mismatch {h_err} for {p:?} {q:?}");
        max_kl_err = max_kl_err.max(kl_err);
        max_h_err = max_h_err.max(h_err);

        let tv = oracle::tv_quadrature(mp, vp, mq, vq, 1e-10);
        let bound = tv_upper_bound(&p, &q).unwrap();
        assert!(bound + 1e-9 >= tv, "TV {tv} above bound {bound}");
    }
    println!(
        "criterion 01 divergence oracles: PASS (200 pairs, max |KL err| {max_kl_err:.2e}, max |H err| {max_h_err:.2e}, TV dominated)"
    );
}

/// Criterion 2: GJS non-negativity, symmetry (rel 1e-12), zero iff
/// identical, and u_GJS permutation invariance over 1000 random ensembles.
#[test]
fn criterion_02_gjs_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    for trial in 0..1000 {
        let e = rng.gen_range(2..=7);
        let d = rng.gen_range(1..=8);
        let members: Vec<DiagGaussian<f64>> = (0..e)
            .map(|_| {
                let mean = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let var = (0..d)
                    .map(|_| 10f64.powf(rng.gen_range(-3.0..3.0)))
                    .collect();
                DiagGaussian::new(mean, var).unwrap()
            })
            .collect();

        let a = &members[0];
        let b = &members[1];
        let fwd = gjs_divergence(a, b).unwrap();
        let bwd = gjs_divergence(b, a).unwrap();
        assert!(fwd >= 0.0);
        assert!(((fwd - bwd) / fwd.abs().max(1e-300)).abs() <= 1e-12, "trial {trial}");
        assert_eq!(gjs_divergence(a, a).unwrap(), 0.0);
        assert!(fwd > 0.0, "distinct random members must have positive GJS");

        let pred = EnsemblePrediction::new(members.clone()).unwrap();
        let base = u_gjs(&pred);
        assert!(base > 0.0);
        let identical = EnsemblePrediction::new(vec![a.clone(); e]).unwrap();
        assert_eq!(u_gjs(&identical), 0.0);

        let mut shuffled = members;
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let perm = u_gjs(&EnsemblePrediction::new(shuffled).unwrap());
        assert!(
            ((base - perm) / base.abs().max(1e-300)).abs() <= 1e-12,
            "permutation variance at trial {trial}: {base} vs {perm}"
        );
    }
    println!("criterion 02 gjs properties: PASS (1000 ensembles, E in 2..=7, d in 1..=8)");
}

/// Criterion 3: toy reproduction. Spiral dataset (10 x 170), PE with E = 7
/// and 4 hidden layers, 100x100 grid; Spearman(u_GJS, d) >= 0.5 and mean
/// misalignment inside the trusted set strictly below the complement's.
#[test]
fn criterion_03_toy_reproduction() {
    let params = PendulumParams::<f64>::default();
    let controller = ControllerParams::default();
    let mut data_rng = ChaCha8Rng::seed_from_u64(0xACC3);
    let data = generate_spiral_dataset(&params, &controller, &mut data_rng);
    assert_eq!(data.len(), 1700, "10 trajectories x 170 steps");

    let mut buf = ReplayBuffer::new(data.len());
    for t in &data {
        buf.push(t.clone());
    }
    let model_cfg = ModelConfig::new(2, 1, 7);
    assert_eq!(model_cfg.hidden_layers, 4);
    let mut init_rng = ChaCha8Rng::seed_from_u64(0xACC3 + 1);
    let mut model: EnsembleModel<f64> = EnsembleModel::new(model_cfg, &mut init_rng);
    // The misalignment map only shows structure once the fit is pushed to
    // the process-noise floor (phi noise std 1e-3), so train to convergence.
    let train_cfg = TrainConfig {
        min_train_size: 500,
        max_epochs: 300,
        patience: 30,
        ..TrainConfig::default()
    };
    let mut train_rng = ChaCha8Rng::seed_from_u64(0xACC3 + 2);
    let report = train_ensemble(&mut model, &buf, &train_cfg, &mut train_rng).unwrap();
    assert!(report.improved, "spiral fit must beat the initial parameters");

    let spec = GridSpec::default();
    assert_eq!((spec.rows, spec.cols), (100, 100));
    // Kappa at the 20th percentile of the grid's uncertainty values.
    let probe = grid_study(&model, &controller, &params, &spec, f64::INFINITY).unwrap();
    let kappa = probe.u_quantile(0.2);
    let study = grid_study(&model, &controller, &params, &spec, kappa).unwrap();

    let rho = oracle::spearman(&study.u_gjs, &study.d_tv);
    assert!(
        rho >= 0.5,
        "Spearman between uncertainty and misalignment: {rho}"
    );
    let (inside, outside) = study.mean_d_split();
    assert!(
        inside < outside,
        "mean d inside E {inside} not below complement {outside}"
    );
    println!(
        "criterion 03 toy reproduction: PASS (spearman {rho:.3}, mean d in E {inside:.4} < out {outside:.4}, kappa {kappa:.4})"
    );
}

const SCRIPT_VAR: f64 = 1e-12;

struct ScriptedModel<F: Fn(usize, usize) -> f64> {
    u_fn: F,
}

impl<F: Fn(usize, usize) -> f64> DynamicsEnsemble<f64> for ScriptedModel<F> {
    fn num_members(&self) -> usize {
        2
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn member_predict(&self, e: usize, s: &[f64], _a: &[f64]) -> CoreResult<DiagGaussian<f64>> {
        let tag = s[0].round() as usize;
        let step = s[1].round() as usize;
        let u = (self.u_fn)(tag, step);
        let delta = (8.0 * u * SCRIPT_VAR).sqrt();
        let sign = if e == 0 { -0.5 } else { 0.5 };
        DiagGaussian::new(
            vec![tag as f64 + sign * delta, step as f64 + 1.0],
            vec![SCRIPT_VAR, SCRIPT_VAR],
        )
    }
}

struct ZeroPolicy;

impl RolloutPolicy<f64> for ZeroPolicy {
    fn action_dim(&self) -> usize {
        1
    }

    fn sample_action(&self, _state: &[f64], _rng: &mut dyn RngCore) -> CoreResult<Vec<f64>> {
        Ok(vec![0.0])
    }
}

/// Criterion 4: 10^4 scripted rounds; no stored transition with
/// u_GJS >= kappa, and every rollout terminates at its first violation or
/// at the cap.
#[test]
fn criterion_04_rollout_filter_soundness() {
    let rounds = 10_000;
    let m = 8;
    let t_max = 5;
    let tags = 12;
    let mut seed_rng = ChaCha8Rng::seed_from_u64(0xACC4);
    let mut total_stored = 0usize;

    for round in 0..rounds {
        let mut table = vec![vec![0.0f64; t_max + 1]; tags];
        for row in table.iter_mut() {
            for v in row.iter_mut() {
                *v = seed_rng.gen_range(0.0..2.0);
            }
        }
        let table_ref = &table;
        let model = ScriptedModel {
            u_fn: move |tag, step| table_ref[tag][step.min(t_max)],
        };
        let mut d_env = ReplayBuffer::new(tags);
        for tag in 0..tags {
            d_env.push(Transition {
                state: vec![tag as f64, 0.0],
                action: vec![0.0],
                reward: 0.0,
                next_state: vec![tag as f64, 1.0],
                done: false,
            });
        }
        let mut d_mod = ReplayBuffer::new(m * t_max);
        let cfg = RolloutConfig::new(m, t_max);
        let mut tracker = KappaTracker::new(0.95, seed_rng.gen_range(0.2..2.0)).unwrap();
        for _ in 0..seed_rng.gen_range(0..4) {
            tracker.record_base_uncertainty(seed_rng.gen_range(0.0..2.0));
        }
        let round_seed = 0xACC40000 ^ round as u64;
        let report = macura_rollout_round(
            &model,
            &ZeroPolicy,
            &|_s: &[f64], _a: &[f64]| 0.0,
            &d_env,
            &mut d_mod,
            &cfg,
            &mut tracker,
            round_seed,
        )
        .unwrap();
        let kappa = report.kappa_used;

        // Soundness of every stored transition.
        for tr in d_mod.iter() {
            let u = u_gjs(&model.predict(&tr.state, &tr.action).unwrap());
            assert!(u < kappa, "round {round}: stored u {u} >= kappa {kappa}");
        }

        // Termination = first violation or cap, for every rollout.
        let mut start_rng = round_substream(round_seed, u64::MAX);
        let u_at = |tag: usize, step: usize| -> f64 {
            u_gjs(&model.predict(&[tag as f64, step as f64], &[0.0]).unwrap())
        };
        for i in 0..m {
            let tag = d_env.get(start_rng.gen_range(0..d_env.len())).state[0] as usize;
            let mut expect = t_max;
            for step in 0..t_max {
                if u_at(tag, step) >= kappa {
                    expect = step;
                    break;
                }
            }
            assert_eq!(report.rollout_lengths[i], expect, "round {round} rollout {i}");
        }
        // Quantile definition.
        let first: Vec<f64> = {
            let mut sr = round_substream(round_seed, u64::MAX);
            (0..m)
                .map(|_| {
                    let tag = d_env.get(sr.gen_range(0..d_env.len())).state[0] as usize;
                    u_at(tag, 0)
                })
                .collect()
        };
        assert_eq!(
            report.base_uncertainty,
            base_uncertainty_quantile(&first, tracker.zeta)
        );
        total_stored += report.stored_transitions;
    }
    println!(
        "criterion 04 rollout filter soundness: PASS ({rounds} scripted rounds, {total_stored} stored transitions, zero violations)"
    );
}

/// Criterion 5: logged kappa reproduces the running-average rule from the
/// logged base uncertainties to 1e-12 relative across a full run, and the
/// update-count rule matches exact rational rounding on an exhaustive
/// (G_max <= 60) x (ratio on a 1e-3 grid) table.
#[test]
fn criterion_05_kappa_and_update_arithmetic() {
    // Full-run kappa identity.
    let dir = TempDir::new().unwrap();
    let mut cfg = small_macura_config();
    cfg.rollout.scaling_factor_xi = 1.25;
    execute_run(&cfg, dir.path()).unwrap();
    let trace = std::fs::read_to_string(dir.path().join("kappa_trace.csv")).unwrap();
    let mut sum = 0.0;
    let mut checked = 0;
    for (i, line) in trace.lines().skip(1).enumerate() {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        sum += f[2];
        let expect = 1.25 * sum / (i + 1) as f64;
        let rel = ((f[3] - expect) / expect.abs().max(1e-300)).abs();
        assert!(rel <= 1e-12, "round {}: kappa {} vs {}", i + 1, f[3], expect);
        checked += 1;
    }
    assert!(checked >= 4);

    // Exhaustive update-count table against the exact rational oracle:
    // G must satisfy (2G - 1) * 1000 <= 2 * G_max * k < (2G + 1) * 1000.
    let mut cells = 0u64;
    for g_max in 1..=60u32 {
        for k in 0..=1000usize {
            let g = compute_update_steps(g_max, k, 1000);
            let lhs = 2 * g_max as i64 * k as i64;
            if g > 0 {
                assert!((2 * g as i64 - 1) * 1000 <= lhs, "g_max {g_max} k {k}");
            }
            assert!(lhs < (2 * g as i64 + 1) * 1000, "g_max {g_max} k {k}");
            assert!(g <= g_max);
            cells += 1;
        }
    }
    println!(
        "criterion 05 kappa and update arithmetic: PASS ({checked} logged rounds exact to 1e-12, {cells} update-rule cells)"
    );
}

/// Criterion 6: PNN NLL and SAC critic/actor gradients against central
/// finite differences (step 1e-5) on toy f64 networks, rel err <= 1e-3.
#[test]
fn criterion_06_gradient_checks() {
    use macura_core::model::pnn_loss_and_grads;
    use macura_core::sac::{actor_loss_and_grads, critic_loss_and_grads, AgentParams, SacConfig};
    use ndarray::{Array1, Array2};

    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-3;
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
    let mut checked = 0usize;

    // PNN training objective.
    let mut cfg = ModelConfig::new(2, 1, 2);
    cfg.hidden_layers = 2;
    cfg.hidden_width = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC6);
    let mut model: EnsembleModel<f64> = EnsembleModel::new(cfg, &mut rng);
    let x = Array2::from_shape_fn((12, 3), |_| rng.gen_range(-1.0..1.0));
    let y = Array2::from_shape_fn((12, 2), |_| rng.gen_range(-1.0..1.0));
    let analytic = pnn_loss_and_grads(&model.members[0], &x, &y, 0.01);
    let member = &mut model.members[0];
    for l in 0..member.net.layers.len() {
        for idx in 0..member.net.layers[l].w.len() {
            let orig = member.net.layers[l].w.as_slice().unwrap()[idx];
            member.net.layers[l].w.as_slice_mut().unwrap()[idx] = orig + STEP;
            let up = pnn_loss_and_grads(member, &x, &y, 0.01).loss;
            member.net.layers[l].w.as_slice_mut().unwrap()[idx] = orig - STEP;
            let down = pnn_loss_and_grads(member, &x, &y, 0.01).loss;
            member.net.layers[l].w.as_slice_mut().unwrap()[idx] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let an = analytic.net.layers[l].w.as_slice().unwrap()[idx];
            assert!(rel(fd, an) <= TOL, "pnn layer {l} w[{idx}]: {fd} vs {an}");
            checked += 1;
        }
    }

    // SAC critic regression.
    let sac_cfg = SacConfig {
        hidden_layers: 1,
        hidden_width: 6,
        ..SacConfig::default()
    };
    let params: AgentParams<f64> = AgentParams::new(2, 1, &sac_cfg, &mut rng);
    let xs = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0));
    let ys = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
    let (_, cgrads) = critic_loss_and_grads(&params.critic1, &xs, &ys);
    let mut probe = params.critic1.clone();
    let loss_of = |net: &macura_core::nn::Mlp<f64>| {
        let q = net.forward(&xs);
        (0..8).map(|i| (q[[i, 0]] - ys[i]).powi(2)).sum::<f64>() / 8.0
    };
    for l in 0..probe.layers.len() {
        for idx in 0..probe.layers[l].w.len() {
            let orig = probe.layers[l].w.as_slice().unwrap()[idx];
            probe.layers[l].w.as_slice_mut().unwrap()[idx] = orig + STEP;
            let up = loss_of(&probe);
            probe.layers[l].w.as_slice_mut().unwrap()[idx] = orig - STEP;
            let down = loss_of(&probe);
            probe.layers[l].w.as_slice_mut().unwrap()[idx] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let an = cgrads.layers[l].w.as_slice().unwrap()[idx];
            assert!(rel(fd, an) <= TOL, "critic {l} w[{idx}]: {fd} vs {an}");
            checked += 1;
        }
    }

    // SAC actor objective with frozen noise.
    let mut aparams: AgentParams<f64> = AgentParams::new(2, 1, &sac_cfg, &mut rng);
    let states = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
    let eps = Array2::from_shape_fn((6, 1), |_| {
        <f64 as macura_core::Scalar>::standard_normal(&mut rng)
    });
    let agrads = actor_loss_and_grads(&aparams, &states, &eps).unwrap();
    let eval = |p: &AgentParams<f64>| actor_loss_and_grads(p, &states, &eps).unwrap().loss;
    for l in 0..aparams.actor.trunk.layers.len() {
        for idx in 0..aparams.actor.trunk.layers[l].w.len() {
            let orig = aparams.actor.trunk.layers[l].w.as_slice().unwrap()[idx];
            aparams.actor.trunk.layers[l].w.as_slice_mut().unwrap()[idx] = orig + STEP;
            let up = eval(&aparams);
            aparams.actor.trunk.layers[l].w.as_slice_mut().unwrap()[idx] = orig - STEP;
            let down = eval(&aparams);
            aparams.actor.trunk.layers[l].w.as_slice_mut().unwrap()[idx] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let an = agrads.trunk.layers[l].w.as_slice().unwrap()[idx];
            assert!(rel(fd, an) <= TOL, "actor trunk {l} w[{idx}]: {fd} vs {an}");
            checked += 1;
        }
    }
    for idx in 0..aparams.actor.mean_head.w.len() {
        let orig = aparams.actor.mean_head.w.as_slice().unwrap()[idx];
        aparams.actor.mean_head.w.as_slice_mut().unwrap()[idx] = orig + STEP;
        let up = eval(&aparams);
        aparams.actor.mean_head.w.as_slice_mut().unwrap()[idx] = orig - STEP;
        let down = eval(&aparams);
        aparams.actor.mean_head.w.as_slice_mut().unwrap()[idx] = orig;
        let fd = (up - down) / (2.0 * STEP);
        assert!(
            rel(fd, agrads.mean_head.w.as_slice().unwrap()[idx]) <= TOL,
            "mean head w[{idx}]"
        );
        checked += 1;
    }
    for idx in 0..aparams.actor.logstd_head.w.len() {
        let orig = aparams.actor.logstd_head.w.as_slice().unwrap()[idx];
        aparams.actor.logstd_head.w.as_slice_mut().unwrap()[idx] = orig + STEP;
        let up = eval(&aparams);
        aparams.actor.logstd_head.w.as_slice_mut().unwrap()[idx] = orig - STEP;
        let down = eval(&aparams);
        aparams.actor.logstd_head.w.as_slice_mut().unwrap()[idx] = orig;
        let fd = (up - down) / (2.0 * STEP);
        assert!(
            rel(fd, agrads.logstd_head.w.as_slice().unwrap()[idx]) <= TOL,
            "logstd head w[{idx}]"
        );
        checked += 1;
    }
    println!("criterion 06 gradient checks: PASS ({checked} parameters, rel err <= 1e-3)");
}

/// Criterion 7: bound diagnostic. Perfect model gives C = 0 with
/// |eta - eta~| inside 3 MC standard errors; corrupted-model trials report
/// holds = true in >= 95% of 20 seeded trials, C grows with the horizon,
/// and gamma = 0 collapses C to 2 r_max delta_p.
#[test]
fn criterion_07_bound_diagnostic() {
    let params = PendulumParams::<f64>::default();
    let controller = ControllerParams::default();
    let policy = FlControllerPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC7);
    let data = generate_spiral_dataset(&params, &controller, &mut rng);
    let candidates: Vec<Vec<f64>> = data.iter().map(|t| t.state.clone()).collect();
    let grid = GridSpec {
        rows: 30,
        cols: 30,
        ..GridSpec::default()
    };

    // Perfect model.
    let perfect = PerfectPendulumModel {
        params: params.clone(),
        members: 5,
        torque_scale: 1.0,
    };
    let report = bound_check(
        &perfect,
        &policy,
        &params,
        &controller,
        &candidates,
        1.0,
        0.99,
        10,
        300,
        DeltaPEstimate::Grid(grid.clone()),
        1.0,
        7,
    )
    .unwrap();
    assert_eq!(report.delta_p_sup, 0.0);
    assert_eq!(report.c_bound, 0.0);
    assert!(
        (report.eta_hat - report.eta_tilde).abs() <= report.se_margin,
        "perfect model: |{} - {}| > 3SE {}",
        report.eta_hat,
        report.eta_tilde,
        report.se_margin
    );
    assert!(report.holds);

    // Corrupted model, 20 seeded trials with a huge threshold.
    let mut holds_count = 0;
    for trial in 0..20u64 {
        let corrupted = CorruptedPendulumModel {
            inner: PerfectPendulumModel {
                params: params.clone(),
                members: 5,
                torque_scale: 1.0,
            },
            bias: 0.03,
        };
        let report = bound_check(
            &corrupted,
            &policy,
            &params,
            &controller,
            &candidates,
            1e12,
            0.99,
            10,
            150,
            DeltaPEstimate::Grid(grid.clone()),
            1.0,
            100 + trial,
        )
        .unwrap();
        assert!(report.delta_p_sup > 0.0);
        if report.holds {
            holds_count += 1;
        }
    }
    assert!(
        holds_count >= 19,
        "bound held in only {holds_count}/20 corrupted trials"
    );

    // C grows with the horizon.
    let corrupted = CorruptedPendulumModel {
        inner: PerfectPendulumModel {
            params: params.clone(),
            members: 5,
            torque_scale: 1.0,
        },
        bias: 0.03,
    };
    let short = bound_check(
        &corrupted,
        &policy,
        &params,
        &controller,
        &candidates,
        1e12,
        0.99,
        3,
        100,
        DeltaPEstimate::Grid(grid.clone()),
        1.0,
        33,
    )
    .unwrap();
    let long = bound_check(
        &corrupted,
        &policy,
        &params,
        &controller,
        &candidates,
        1e12,
        0.99,
        10,
        100,
        DeltaPEstimate::Grid(grid.clone()),
        1.0,
        33,
    )
    .unwrap();
    assert!(long.c_bound > short.c_bound);

    // gamma = 0 collapses the double sum to a single term.
    let g0 = bound_check(
        &corrupted,
        &policy,
        &params,
        &controller,
        &candidates,
        1e12,
        0.0,
        10,
        100,
        DeltaPEstimate::Grid(grid),
        1.0,
        34,
    )
    .unwrap();
    let expect = 2.0 * g0.r_max * g0.delta_p_sup;
    assert!(
        ((g0.c_bound - expect) / expect).abs() < 1e-12,
        "gamma=0: C {} vs 2 r_max delta_p {}",
        g0.c_bound,
        expect
    );
    println!(
        "criterion 07 bound diagnostic: PASS (perfect C=0 within 3SE; corrupted holds {holds_count}/20; C monotone in horizon; gamma=0 single term)"
    );
}

/// Criterion 8: data efficiency at desk scale. MACURA (xi = 1, default
/// hyperparameters) reaches evaluation return >= -150 within 15k env steps
/// on at least 3 of 5 seeds, and its median steps-to-threshold is at most
/// half the pure-SAC baseline's (G = 1).
#[test]
#[allow(clippy::field_reassign_with_default)]
fn criterion_08_desk_scale_learning() {
    let threshold = -150.0;
    let mut macura_steps = Vec::new();
    let mut reached = 0;
    for seed in 0..5u64 {
        let mut cfg = RunConfig::default();
        cfg.algorithm = Algorithm::Macura;
        cfg.epochs = 15;
        cfg.seed = seed;
        cfg.stop_at_eval_return = Some(threshold);
        assert_eq!(cfg.rollout.scaling_factor_xi, 1.0);
        assert_eq!(cfg.rollout.rollout_length, 10);
        assert_eq!(cfg.rollout.quantile_factor_zeta, 0.95);
        assert_eq!(cfg.rollout.sac_updates_g_max, 10);
        assert_eq!(cfg.model.pnns_per_pe, 5);
        assert_eq!(cfg.steps_before_retrain, 250);
        let dir = TempDir::new().unwrap();
        let out = execute_run(&cfg, dir.path()).unwrap();
        let steps = steps_to_threshold(&out.curve, threshold);
        eprintln!("macura seed {seed}: steps to {threshold}: {steps:?}");
        match steps {
            Some(s) if s <= 15_000 => {
                reached += 1;
                macura_steps.push(s);
            }
            _ => macura_steps.push(15_000 + 1),
        }
    }
    assert!(
        reached >= 3,
        "only {reached}/5 macura seeds reached {threshold} within 15k steps"
    );

    let mut sac_steps = Vec::new();
    for seed in 0..5u64 {
        let mut cfg = RunConfig::default();
        cfg.algorithm = Algorithm::Sac;
        cfg.epochs = 30;
        cfg.seed = seed;
        cfg.rollout.sac_updates_g = 1;
        cfg.stop_at_eval_return = Some(threshold);
        let dir = TempDir::new().unwrap();
        let out = execute_run(&cfg, dir.path()).unwrap();
        let steps = steps_to_threshold(&out.curve, threshold);
        eprintln!("sac seed {seed}: steps to {threshold}: {steps:?}");
        // Seeds that never reach the threshold count at the cap, which is
        // conservative against the efficiency claim.
        sac_steps.push(steps.unwrap_or(30_000));
    }

    let median = |xs: &mut Vec<usize>| {
        xs.sort_unstable();
        xs[xs.len() / 2]
    };
    let m_med = median(&mut macura_steps);
    let s_med = median(&mut sac_steps);
    assert!(
        2 * m_med <= s_med,
        "macura median {m_med} not at most half of sac median {s_med}"
    );
    println!(
        "criterion 08 desk-scale learning: PASS ({reached}/5 seeds reached {threshold} <= 15k steps; medians macura {m_med} vs sac {s_med})"
    );
}

/// Criterion 9: pink periodogram slope -1 +/- 0.2 over the mid-band of a
/// 2^16-sample sequence; white lag-1 autocorrelation below 0.05.
#[test]
fn criterion_09_noise_spectra() {
    let mut p: NoiseProcess<f64> = NoiseProcess::new(NoiseKind::Pink, 1, 1 << 16, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC9);
    p.reset(&mut rng);
    let xs: Vec<f64> = (0..1 << 16).map(|_| p.next_epsilon().unwrap()[0]).collect();
    let slope = oracle::log_log_slope(&oracle::periodogram(&xs), 1e-3, 1e-1);
    assert!((slope + 1.0).abs() <= 0.2, "pink slope {slope}");

    let mut w: NoiseProcess<f64> = NoiseProcess::new(NoiseKind::White, 1, 10_000, 1.0);
    w.reset(&mut rng);
    let ws: Vec<f64> = (0..10_000).map(|_| w.next_epsilon().unwrap()[0]).collect();
    let rho = oracle::autocorrelation(&ws, 1);
    assert!(rho.abs() < 0.05, "white lag-1 autocorrelation {rho}");
    println!(
        "criterion 09 noise spectra: PASS (pink slope {slope:.3}, white lag-1 rho {rho:.4})"
    );
}

/// Criterion 10: unobserved action noise. Empirical std of applied minus
/// intended action within 5% of sigma for sigma in {0.05, 0.1, 0.2} over
/// 1e5 steps.
#[test]
fn criterion_10_action_noise_wrapper() {
    use macura_core::env::{Environment, Observe, StepOutcome};

    /// Records every action it is asked to apply.
    struct ProbeEnv {
        applied: std::cell::RefCell<Vec<f64>>,
    }

    impl Environment<f64> for ProbeEnv {
        fn state_dim(&self) -> usize {
            1
        }

        fn action_dim(&self) -> usize {
            1
        }

        fn episode_limit(&self) -> usize {
            usize::MAX
        }

        fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
            vec![0.0]
        }

        fn step(&mut self, action: &[f64], _rng: &mut dyn RngCore) -> CoreResult<StepOutcome<f64>> {
            self.applied.borrow_mut().push(action[0]);
            Ok(StepOutcome {
                next_state: vec![0.0],
                reward: 0.0,
                done: false,
            })
        }

        fn reward(&self, _s: &[f64], _a: &[f64]) -> f64 {
            0.0
        }
    }

    impl Observe<f64> for ProbeEnv {
        fn observe(&self) -> Vec<f64> {
            vec![0.0]
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xACCA);
    let mut measured = Vec::new();
    for sigma in [0.05, 0.1, 0.2] {
        let mut env = NoisyActionEnv::new(
            ProbeEnv {
                applied: std::cell::RefCell::new(Vec::new()),
            },
            sigma,
        )
        .unwrap();
        let n = 100_000;
        let intended = 0.3;
        for _ in 0..n {
            env.step(&[intended], &mut rng).unwrap();
        }
        let diffs: Vec<f64> = env
            .inner
            .applied
            .borrow()
            .iter()
            .map(|a| a - intended)
            .collect();
        let std = oracle::variance(&diffs).sqrt();
        assert!(
            (std / sigma - 1.0).abs() < 0.05,
            "sigma {sigma}: measured {std}"
        );
        measured.push(std);
    }
    println!(
        "criterion 10 action-noise wrapper: PASS (measured stds {measured:?} for sigmas [0.05, 0.1, 0.2])"
    );
}

/// Criterion 11: a repeated `train` invocation with the same seed produces
/// byte-identical learning-curve CSVs (checked through the CLI binary).
#[test]
fn criterion_11_train_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, toml::to_string(&small_macura_config()).unwrap()).unwrap();
    let bin = env!("CARGO_BIN_EXE_macura");
    for out in ["a", "b"] {
        let status = std::process::Command::new(bin)
            .args(["train", "--config"])
            .arg(&cfg_path)
            .args(["--seed", "42", "--out"])
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(dir.path().join("a/learning_curve.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/learning_curve.csv")).unwrap();
    assert_eq!(a, b, "learning curves differ between identical seeded runs");
    assert!(!a.is_empty());
    let rows = parse_learning_curve(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    println!(
        "criterion 11 train determinism: PASS (byte-identical learning curves, {} rows)",
        rows.len()
    );
}
