use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackadapt_core::adapt::{wm_loss, WindowShape, HISTORY_LEN, ROLLOUT_LEN};
use trackadapt_core::netcore::{Mlp, MlpSpec};
use trackadapt_core::physics::{control_step, step, DynamicsConfig, RobotModel, SimState, Terrain, World, CONTROL_DECIMATION, SIM_DT};

fn physics(c: &mut Criterion) {
    let model = RobotModel::planar_biped();
    let terrain = Terrain::flat(1.0);
    let config = DynamicsConfig::nominal(model.num_joints());
    let world = World::new(&model, &terrain, &config);
    let state = SimState::standing(&model);
    let targets = state.q.clone();
    c.bench_function("physics_substep", |b| {
        b.iter(|| step(black_box(&state), &targets, &world, SIM_DT).unwrap())
    });
    c.bench_function("physics_control_tick", |b| {
        b.iter(|| control_step(black_box(&state), &targets, &world, SIM_DT, CONTROL_DECIMATION).unwrap())
    });
}

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net: Mlp<f32> = Mlp::new(&MlpSpec::tanh(51, &[128, 128, 64], 6), 0.01, &mut rng);
    for batch in [1usize, 64] {
        let x: Vec<f32> = (0..batch * 51).map(|_| rng.gen_range(-1.0..1.0)).collect();
        c.bench_function(&format!("policy_forward_b{batch}"), |b| {
            b.iter(|| net.predict(black_box(&x), batch).unwrap())
        });
    }
}

fn world_model(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = WindowShape { h: HISTORY_LEN, n: ROLLOUT_LEN, state_dim: 15, action_dim: 6 };
    let phi: Mlp<f32> = Mlp::new(&MlpSpec::tanh(HISTORY_LEN * 21, &[64, 64], 32), 1.0, &mut rng);
    let omega: Mlp<f32> = Mlp::new(&MlpSpec::tanh(21 + 32, &[128, 128], 15), 1.0, &mut rng);
    let batch = 32;
    let windows: Vec<f32> = (0..batch * shape.window_size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = c.benchmark_group("wm_loss");
    g.sample_size(10);
    g.bench_function("forward_b32", |b| {
        b.iter(|| wm_loss(&phi, &omega, black_box(&windows), batch, shape, false).unwrap())
    });
    g.bench_function("forward_backward_b32", |b| {
        b.iter(|| wm_loss(&phi, &omega, black_box(&windows), batch, shape, true).unwrap())
    });
    g.finish();
}

criterion_group!(benches, physics, mlp, world_model);
criterion_main!(benches);
