//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria that need trained policies share a single desk-scale pipeline run.
//! Failing criteria are reported but do not fail the process unless
//! `ACCEPTANCE_STRICT=1` is set; errors while running a criterion always do.

#![allow(clippy::needless_range_loop, clippy::field_reassign_with_default)]

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackadapt_core::adapt::{
    is_identity, wm_loss, Adapter, AdapterPolicy, WindowReplay, WindowShape, HISTORY_LEN, ROLLOUT_LEN, WINDOW_LEN,
};
use trackadapt_core::config::RunConfig;
use trackadapt_core::eval::{
    mpjpe, mpjve, report_json, success, LinkTrajectory, ScenarioName, StepError,
};
use trackadapt_core::netcore::{gaussian_log_prob, gaussian_log_prob_grad, Mlp, MlpGrad, MlpSpec};
use trackadapt_core::physics::{sample_dynamics_config, DisturbanceRanges, RobotModel};
use trackadapt_core::pipeline::{per_cluster_sr, Bundle, Pipeline};
use trackadapt_core::tracker::{canonicalize_action, gae, Actor, Policy, FAIL_DISTANCE, POLICY_HIDDEN};

type Check = std::result::Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn timed(limit: Duration, start: Instant, ok: bool, detail: String) -> (bool, String) {
    let el = start.elapsed();
    (ok && el < limit, format!("{detail}; {:.2}s (limit {}s)", el.as_secs_f64(), limit.as_secs()))
}

fn action_bound() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let nj = 6;
    let mut worst = f64::NEG_INFINITY;
    let mut outside = 0usize;
    let mut zero_exact = true;
    for _ in 0..100_000 {
        let a: Vec<f64> = (0..nj).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let q: Vec<f64> = (0..nj).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let alpha: Vec<f64> = (0..nj).map(|_| rng.gen_range(0.01..1.0)).collect();
        let qd = canonicalize_action(&a, &q, &alpha);
        for j in 0..nj {
            // Interval form: the subtraction q_d - q_ref would add a rounding of its own.
            if qd[j] > q[j] + alpha[j] || qd[j] < q[j] - alpha[j] {
                outside += 1;
            }
            worst = worst.max((qd[j] - q[j]).abs() - alpha[j]);
        }
        zero_exact &= canonicalize_action(&vec![0.0; nj], &q, &alpha) == q;
    }
    Ok(timed(
        Duration::from_secs(1),
        t,
        outside == 0 && zero_exact,
        format!(
            "{outside} targets outside [q_ref - alpha, q_ref + alpha], max(|q_d - q_ref| - alpha) = {worst:.1e}, zero output exact: {zero_exact}"
        ),
    ))
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3)
}

fn randomize(net: &mut Mlp<f64>, rng: &mut ChaCha8Rng) {
    for k in 0..net.num_params() {
        *net.param_mut(k) = rng.gen_range(-0.6..0.6);
    }
}

fn gradient_audit() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let uniform = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let mut lines = Vec::new();

    // Policy: log-likelihood of fixed actions, through the mean network and the log-std.
    let batch = 3;
    let mut pi = Mlp::<f64>::new(&MlpSpec::tanh(5, &[7, 6], 3), 1.0, &mut rng);
    randomize(&mut pi, &mut rng);
    let x = uniform(5 * batch, &mut rng);
    let acts = uniform(3 * batch, &mut rng);
    let mut log_std = uniform(3, &mut rng);
    let pi_loss = |net: &Mlp<f64>, ls: &[f64]| -> f64 {
        let mu = net.predict(&x, batch).unwrap();
        (0..batch).map(|b| gaussian_log_prob(&mu[b * 3..b * 3 + 3], ls, &acts[b * 3..b * 3 + 3])).sum()
    };
    let (mu, cache) = pi.forward(&x, batch).map_err(err)?;
    let mut d_mu = Vec::new();
    let mut d_ls = [0.0; 3];
    for b in 0..batch {
        let (dm, dl) = gaussian_log_prob_grad(&mu[b * 3..b * 3 + 3], &log_std, &acts[b * 3..b * 3 + 3]);
        d_mu.extend(dm);
        for (acc, v) in d_ls.iter_mut().zip(dl) {
            *acc += v;
        }
    }
    let (g, _) = pi.backward(&cache, &d_mu).map_err(err)?;
    let g = g.flat();
    let mut net = pi.clone();
    let mut worst_pi: f64 = 0.0;
    let eps = 1e-6;
    for k in 0..g.len() {
        let o = *net.param_mut(k);
        *net.param_mut(k) = o + eps;
        let up = pi_loss(&net, &log_std);
        *net.param_mut(k) = o - eps;
        let down = pi_loss(&net, &log_std);
        *net.param_mut(k) = o;
        worst_pi = worst_pi.max(rel_err((up - down) / (2.0 * eps), g[k]));
    }
    for j in 0..3 {
        let o = log_std[j];
        log_std[j] = o + eps;
        let up = pi_loss(&net, &log_std);
        log_std[j] = o - eps;
        let down = pi_loss(&net, &log_std);
        log_std[j] = o;
        worst_pi = worst_pi.max(rel_err((up - down) / (2.0 * eps), d_ls[j]));
    }
    lines.push(("policy", worst_pi));

    // Critic: half mean squared error against fixed returns.
    let mut critic = Mlp::<f64>::new(&MlpSpec::tanh(6, &[8, 5], 1), 1.0, &mut rng);
    randomize(&mut critic, &mut rng);
    let cx = uniform(6 * 4, &mut rng);
    let ret = uniform(4, &mut rng);
    let c_loss = |net: &Mlp<f64>| -> f64 {
        let v = net.predict(&cx, 4).unwrap();
        v.iter().zip(&ret).map(|(a, b)| 0.5 * (a - b).powi(2)).sum::<f64>() / 4.0
    };
    let (v, cache) = critic.forward(&cx, 4).map_err(err)?;
    let dv: Vec<f64> = v.iter().zip(&ret).map(|(a, b)| (a - b) / 4.0).collect();
    let g = critic.backward(&cache, &dv).map_err(err)?.0.flat();
    let mut worst_c: f64 = 0.0;
    for k in 0..g.len() {
        let o = *critic.param_mut(k);
        *critic.param_mut(k) = o + eps;
        let up = c_loss(&critic);
        *critic.param_mut(k) = o - eps;
        let down = c_loss(&critic);
        *critic.param_mut(k) = o;
        worst_c = worst_c.max(rel_err((up - down) / (2.0 * eps), g[k]));
    }
    lines.push(("critic", worst_c));

    // Encoder and world model: the rollout loss with re-encoding.
    let shape = WindowShape { h: 3, n: 3, state_dim: 2, action_dim: 1 };
    let mut phi = Mlp::<f64>::new(&MlpSpec::tanh(3 * 3, &[5], 2), 1.0, &mut rng);
    let mut omega = Mlp::<f64>::new(&MlpSpec::tanh(2 + 1 + 2, &[6], 2), 1.0, &mut rng);
    randomize(&mut phi, &mut rng);
    randomize(&mut omega, &mut rng);
    let wb = 2;
    let windows = uniform(wb * shape.window_size(), &mut rng);
    let out = wm_loss(&phi, &omega, &windows, wb, shape, true).map_err(err)?;
    let gp = out.phi_grad.as_ref().map(MlpGrad::flat).ok_or("no encoder gradient")?;
    let go = out.omega_grad.as_ref().map(MlpGrad::flat).ok_or("no world-model gradient")?;
    let mut worst_p: f64 = 0.0;
    for k in 0..gp.len() {
        let o = *phi.param_mut(k);
        *phi.param_mut(k) = o + eps;
        let up = wm_loss(&phi, &omega, &windows, wb, shape, false).map_err(err)?.loss;
        *phi.param_mut(k) = o - eps;
        let down = wm_loss(&phi, &omega, &windows, wb, shape, false).map_err(err)?.loss;
        *phi.param_mut(k) = o;
        worst_p = worst_p.max(rel_err((up - down) / (2.0 * eps), gp[k]));
    }
    let mut worst_o: f64 = 0.0;
    for k in 0..go.len() {
        let o = *omega.param_mut(k);
        *omega.param_mut(k) = o + eps;
        let up = wm_loss(&phi, &omega, &windows, wb, shape, false).map_err(err)?.loss;
        *omega.param_mut(k) = o - eps;
        let down = wm_loss(&phi, &omega, &windows, wb, shape, false).map_err(err)?.loss;
        *omega.param_mut(k) = o;
        worst_o = worst_o.max(rel_err((up - down) / (2.0 * eps), go[k]));
    }
    lines.push(("encoder", worst_p));
    lines.push(("world model", worst_o));

    // Adapter: weighted sum of the adapted policy output.
    let base = Mlp::<f64>::new(&MlpSpec::tanh(4, &[6, 5], 3), 1.0, &mut rng);
    let mut xi = Adapter::new(&base, 2, 4, &mut rng);
    for k in 0..xi.num_params() {
        *xi.param_mut(k) = rng.gen_range(-0.6..0.6);
    }
    let ax = uniform(4 * 2, &mut rng);
    let ae = uniform(2 * 2, &mut rng);
    let wts = uniform(3 * 2, &mut rng);
    let a_loss = |a: &Adapter<f64>| -> f64 {
        a.predict(&base, &ax, &ae, 2).unwrap().iter().zip(&wts).map(|(y, w)| y * w).sum()
    };
    let (_, cache) = xi.forward(&base, &ax, &ae, 2).map_err(err)?;
    let g = xi.backward(&base, &cache, &wts).map_err(err)?.flat();
    let mut worst_a: f64 = 0.0;
    for k in 0..g.len() {
        let o = *xi.param_mut(k);
        *xi.param_mut(k) = o + eps;
        let up = a_loss(&xi);
        *xi.param_mut(k) = o - eps;
        let down = a_loss(&xi);
        *xi.param_mut(k) = o;
        worst_a = worst_a.max(rel_err((up - down) / (2.0 * eps), g[k]));
    }
    lines.push(("adapter", worst_a));

    let ok = lines.iter().all(|(_, w)| *w <= 1e-4);
    let detail = lines.iter().map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    Ok(timed(Duration::from_secs(60), t, ok, format!("worst relative error: {detail}")))
}

fn gae_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..80);
        let gamma = rng.gen_range(0.8..1.0);
        let lambda = rng.gen_range(0.0..1.0);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.1)).collect();
        let boot = rng.gen_range(-2.0..2.0);
        let (adv, ret) = gae(&r, &v, &d, boot, gamma, lambda);
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let delta: Vec<f64> = (0..n)
            .map(|t| r[t] + if d[t] { 0.0 } else { gamma * next_v(t) } - v[t])
            .collect();
        for s in 0..n {
            let mut sum = 0.0;
            let mut coef = 1.0;
            for k in s..n {
                sum += coef * delta[k];
                if d[k] {
                    break;
                }
                coef *= gamma * lambda;
            }
            worst = worst.max((sum - adv[s]).abs()).max((sum + v[s] - ret[s]).abs());
        }
    }
    Ok(timed(Duration::from_secs(10), t, worst <= 1e-10, format!("max deviation {worst:.2e}")))
}

fn adapter_identity() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = RobotModel::planar_biped();
    let input = trackadapt_core::tracker::features::policy_input_len(&model);
    let nj = model.num_joints();
    let mut base = Policy::new(input, &POLICY_HIDDEN, nj, 3e-4, &mut rng);
    for k in 0..base.net.num_params() {
        *base.net.param_mut(k) = rng.gen_range(-0.3..0.3);
    }
    let e = 32;
    let phi = Mlp::<f32>::new(&MlpSpec::tanh(HISTORY_LEN * (15 + nj), &[64, 64], e), 1.0, &mut rng);
    let ap = AdapterPolicy::new(base.clone(), phi, 64, 3e-4, &mut rng);
    let n = 1000;
    let x: Vec<f32> = (0..n * input).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let emb: Vec<f32> = (0..n * e).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut joined = Vec::with_capacity(n * (input + e));
    for r in 0..n {
        joined.extend_from_slice(&x[r * input..(r + 1) * input]);
        joined.extend_from_slice(&emb[r * e..(r + 1) * e]);
    }
    let want = base.means(&x, n).map_err(err)?;
    let got = ap.means(&joined, n).map_err(err)?;
    let bitwise = want.len() == got.len() && want.iter().zip(&got).all(|(a, b)| a.to_bits() == b.to_bits());
    let ok = bitwise && is_identity(&ap.adapter);
    Ok(timed(Duration::from_secs(5), t, ok, format!("{n} inputs, bitwise equal: {bitwise}")))
}

fn window_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let envs = 5;
    let mut replay = WindowReplay::new(envs, 3, WINDOW_LEN, 20_000);
    // Each stored state carries (episode tag, step in episode, env) so windows can be checked directly.
    let mut tag = vec![0u32; envs];
    let mut step = vec![0u32; envs];
    let mut next_tag = envs as u32;
    for (i, t) in tag.iter_mut().enumerate() {
        *t = i as u32;
    }
    for _ in 0..30_000 {
        for env in 0..envs {
            let done = rng.gen_bool(1.0 / 150.0);
            let s = [tag[env] as f32, step[env] as f32];
            replay.push(env, &s, &[env as f32], done).map_err(err)?;
            step[env] += 1;
            if done {
                tag[env] = next_tag;
                next_tag += 1;
                step[env] = 0;
            }
        }
    }
    let mut bad = 0;
    let samples = 10_000;
    for _ in 0..samples {
        let w = replay.sample(&mut rng).ok_or("replay has no windows")?;
        let rows: Vec<&[f32]> = w.pairs.chunks(3).collect();
        let same_episode = rows.iter().all(|r| r[0] == rows[0][0] && r[2] == rows[0][2]);
        let consecutive = rows.windows(2).all(|p| p[1][1] == p[0][1] + 1.0);
        if rows.len() != HISTORY_LEN + 1 + ROLLOUT_LEN || w.pairs.len() % 3 != 0 || !same_episode || !consecutive {
            bad += 1;
        }
    }
    Ok((
        bad == 0 && WINDOW_LEN == 100,
        format!("{samples} windows of {} pairs, {bad} violations", HISTORY_LEN + 1 + ROLLOUT_LEN),
    ))
}

fn dynamics_ranges() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ranges = DisturbanceRanges::default();
    let inside = |v: f64, lo: f64, hi: f64| (lo..=hi).contains(&v);
    let mut bad = Vec::new();
    for _ in 0..10_000 {
        let c = sample_dynamics_config(&mut rng, &ranges, 6).map_err(err)?;
        let p = c.push.as_ref().ok_or("push schedule missing")?;
        let checks = [
            ("floor friction", inside(c.floor_friction, 0.3, 2.0)),
            ("max terrain height", c.terrain.max_height == 0.3),
            ("noise scale", inside(c.terrain.scale, 10.0, 16.0)),
            ("noise octaves", inside(c.terrain.octaves as f64, 5.0, 8.0)),
            ("noise persistence", inside(c.terrain.persistence, 0.3, 0.5)),
            ("noise lacunarity", inside(c.terrain.lacunarity, 2.0, 4.0)),
            ("push interval", inside(p.interval_s, 5.0, 10.0)),
            ("push velocity", inside(p.velocity_magnitude, 0.1, 1.0)),
            ("dof friction scale", inside(c.dof_friction_scale, 0.5, 2.0)),
            ("armature scale", inside(c.armature_scale, 1.0, 1.05)),
            ("torso com shift", inside(c.torso_com_shift, -0.15, 0.15)),
            ("torso mass change", inside(c.torso_mass_delta, -3.0, 6.0)),
            (
                "default pose jitter",
                c.default_pose_jitter.iter().all(|&j| inside(j, -0.05, 0.05)),
            ),
        ];
        for (name, ok) in checks {
            if !ok && !bad.contains(&name) {
                bad.push(name);
            }
        }
    }
    Ok((bad.is_empty(), format!("10000 samples, fields out of range: {bad:?}")))
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let frames = rng.gen_range(2..40);
        let links = rng.gen_range(1..9);
        let mut gen = || -> LinkTrajectory {
            (0..frames)
                .map(|_| (0..links).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.5)]).collect())
                .collect()
        };
        let a = gen();
        let b = gen();
        let mut p = 0.0;
        for t in 0..frames {
            for l in 0..links {
                p += ((a[t][l][0] - b[t][l][0]).powi(2) + (a[t][l][1] - b[t][l][1]).powi(2)).sqrt();
            }
        }
        p *= 1000.0 / (frames * links) as f64;
        let mut v = 0.0;
        for t in 1..frames {
            for l in 0..links {
                let dx = (a[t][l][0] - a[t - 1][l][0]) - (b[t][l][0] - b[t - 1][l][0]);
                let dz = (a[t][l][1] - a[t - 1][l][1]) - (b[t][l][1] - b[t - 1][l][1]);
                v += (dx * dx + dz * dz).sqrt();
            }
        }
        v *= 1000.0 / ((frames - 1) * links) as f64;
        worst = worst
            .max((mpjpe(&a, &b).map_err(err)? - p).abs())
            .max((mpjve(&a, &b).map_err(err)? - v).abs());
    }
    let at = |d: f64| [StepError { mean_link: 0.05, height: 0.0 }, StepError { mean_link: d, height: 0.0 }];
    let below = success(&at(0.1999), false);
    let above = success(&at(0.2001), false);
    let height_above = success(&[StepError { mean_link: 0.0, height: 0.2001 }], false);
    let ok = worst <= 1e-12 && below && !above && !height_above && FAIL_DISTANCE == 0.2;
    Ok((
        ok,
        format!("max deviation {worst:.1e}; 0.1999 passes: {below}, 0.2001 fails: {}", !above),
    ))
}

fn desk_config(dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.out_dir = dir.to_path_buf();
    for k in &mut c.dataset.kinds {
        k.count = 6;
    }
    c.specialist.budget_steps = 10_000_000;
    c.specialist.eval_every = 5;
    c.distill.states_per_iteration = 30_000;
    c.adapt.budget_steps = 600_000;
    c
}

struct Run {
    pipe: Pipeline,
    ds: trackadapt_core::motions::MotionDataset,
    stage1_secs: f64,
    summary: Vec<trackadapt_core::pipeline::SpecialistSummary>,
    generalist_sr: Vec<f64>,
    base_digest: String,
    adapt: trackadapt_core::adapt::AdaptOutcome,
}

fn desk_run(dir: &std::path::Path) -> std::result::Result<Run, String> {
    let pipe = Pipeline::new(desk_config(dir)).map_err(err)?;
    let t = Instant::now();
    let ds = pipe.gen_motions().map_err(err)?;
    let (bank, summary) = pipe.train_specialists(&ds).map_err(err)?;
    let stage1_secs = t.elapsed().as_secs_f64();
    let distilled = pipe.distill(&ds, &bank).map_err(err)?;
    let generalist_sr = per_cluster_sr(&pipe.task, &distilled.policy, &ds).map_err(err)?;
    let base = pipe.load_generalist().map_err(err)?;
    let base_digest = base.digest();
    let adapt = pipe.train_adapter(&ds, base.clone()).map_err(err)?;
    pipe.train_baseline(&ds, base).map_err(err)?;
    Ok(Run { pipe, ds, stage1_secs, summary, generalist_sr, base_digest, adapt })
}

fn base_freeze(run: &Run) -> Check {
    let after = run.adapt.policy.base.digest();
    let saved = match Bundle::load(&run.pipe.adapter_path()).map_err(err)? {
        Bundle::Adapted(p) => p.base.digest(),
        Bundle::Base(_) => return Err("adapter checkpoint holds no adapter".into()),
    };
    let ok = run.base_digest == after
        && after == saved
        && run.adapt.base_digest_before == run.adapt.base_digest_after;
    Ok((ok, format!("base digest {} before, {} after, {} on disk", &run.base_digest[..12], &after[..12], &saved[..12])))
}

fn world_model_learning(run: &Run) -> Check {
    let h = &run.adapt.heldout;
    let first = h.per_step.first().copied().unwrap_or(f64::NAN);
    let last = h.per_step.last().copied().unwrap_or(f64::NAN);
    let ok = h.windows > 0 && h.loss <= 0.8 * h.persistence && h.per_step.len() == ROLLOUT_LEN && last >= first;
    Ok((
        ok,
        format!(
            "{} held-out windows: loss {:.4} vs persistence {:.4} ({:.1}% better); step 1 {first:.4}, step {} {last:.4}",
            h.windows,
            h.loss,
            h.persistence,
            100.0 * h.improvement(),
            h.per_step.len()
        ),
    ))
}

fn trainability(run: &Run) -> Check {
    let find = |kind: &str| run.summary.iter().find(|s| s.majority_kind.as_deref() == Some(kind));
    let stand = find("stand").ok_or("no stand cluster")?;
    let walk = find("walk").ok_or("no walk cluster")?;
    let stand_ok = stand.best_sr >= 100.0 && stand.steps_to_best <= 2_000_000;
    let walk_ok = walk.best_sr >= 80.0 && walk.steps_to_best <= 10_000_000;
    let time_ok = run.stage1_secs <= 2.0 * 3600.0;
    Ok((
        stand_ok && walk_ok && time_ok,
        format!(
            "stand SR {:.1} after {} steps, walk SR {:.1} after {} steps, specialists took {:.0}s",
            stand.best_sr, stand.steps_to_best, walk.best_sr, walk.steps_to_best, run.stage1_secs
        ),
    ))
}

fn distillation(run: &Run) -> Check {
    let mut ok = run.summary.len() == 6;
    let mut parts = Vec::new();
    for s in &run.summary {
        let g = run.generalist_sr[s.cluster];
        ok &= g >= 0.9 * s.best_sr;
        parts.push(format!("{} {g:.0}/{:.0}", s.majority_kind.as_deref().unwrap_or("?"), s.best_sr));
    }
    Ok((ok, format!("generalist/specialist SR per cluster: {}", parts.join(", "))))
}

fn adaptation_ordering(run: &Run) -> Check {
    let families = [
        ScenarioName::Terrains,
        ScenarioName::ExternalForces,
        ScenarioName::PhysicalPropertyChanges,
    ];
    let load = |p: std::path::PathBuf| Bundle::load(&p).map_err(err);
    let base = load(run.pipe.generalist_path())?;
    let dr = load(run.pipe.baseline_path())?;
    let ada = load(run.pipe.adapter_path())?;
    let mut beats_base = true;
    let mut beats_dr = 0;
    let mut parts = Vec::new();
    for s in families {
        let sr = |b: &Bundle| run.pipe.evaluate(b, s, &run.ds).map(|r| r.sr).map_err(err);
        let (b, d, a) = (sr(&base)?, sr(&dr)?, sr(&ada)?);
        beats_base &= a >= b;
        beats_dr += usize::from(a >= d);
        parts.push(format!("{s}: adapter {a:.1} / base {b:.1} / ppo-dr {d:.1}"));
    }
    Ok((beats_base && beats_dr >= 2, parts.join("; ")))
}

fn determinism(run: &Run) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for path in [run.pipe.generalist_path(), run.pipe.adapter_path()] {
        let b = Bundle::load(&path).map_err(err)?;
        let once = report_json(&run.pipe.evaluate(&b, ScenarioName::ExternalForces, &run.ds).map_err(err)?).map_err(err)?;
        let twice = report_json(&run.pipe.evaluate(&b, ScenarioName::ExternalForces, &run.ds).map_err(err)?).map_err(err)?;
        let same = once.as_bytes() == twice.as_bytes();
        ok &= same;
        parts.push(format!(
            "{}: {} bytes, identical {same}",
            path.file_name().unwrap_or_default().to_string_lossy(),
            once.len()
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut results: Vec<(usize, &str, Check)> = vec![
        (1, "action bound", action_bound()),
        (2, "gradient audit", gradient_audit()),
        (3, "advantage oracle", gae_oracle()),
        (4, "zero-init adapter identity", adapter_identity()),
        (7, "window contract", window_contract()),
        (8, "dynamics ranges", dynamics_ranges()),
        (9, "metric oracles", metric_oracles()),
    ];
    let dir = tempfile::tempdir().expect("temporary directory");
    let t = Instant::now();
    match desk_run(dir.path()) {
        Ok(run) => {
            eprintln!("desk-scale pipeline finished in {:.0}s", t.elapsed().as_secs_f64());
            results.push((5, "base freeze", base_freeze(&run)));
            results.push((6, "world-model learning", world_model_learning(&run)));
            results.push((10, "trainability", trainability(&run)));
            results.push((11, "distillation", distillation(&run)));
            results.push((12, "adaptation ordering", adaptation_ordering(&run)));
            results.push((13, "determinism", determinism(&run)));
        }
        Err(e) => {
            for (id, name) in [
                (5, "base freeze"),
                (6, "world-model learning"),
                (10, "trainability"),
                (11, "distillation"),
                (12, "adaptation ordering"),
                (13, "determinism"),
            ] {
                results.push((id, name, Err(format!("pipeline failed: {e}"))));
            }
        }
    }
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    let mut errored = 0;
    for (id, name, r) in &results {
        match r {
            Ok((true, d)) => println!("criterion {id:>2} PASS {name}: {d}"),
            Ok((false, d)) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {name}: {d}");
            }
            Err(e) => {
                errored += 1;
                println!("criterion {id:>2} FAIL {name}: error: {e}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed - errored,
        results.len()
    );
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if errored > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
