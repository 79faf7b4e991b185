use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rmem_bench::{exec_samples, model, task};
use rmem_core::nn::Adam;
use rmem_core::policy::run_episode;
use rmem_core::pomdp::featurize;
use rmem_core::tmc::{compute_tmc, TmcConfig};
use rmem_core::{reset, ExpertAgent};

fn tmc(c: &mut Criterion) {
    let mut g = c.benchmark_group("tmc");
    g.sample_size(10);
    for name in ["put_back_block_reduced", "battery_try_reduced", "press_button_reduced"] {
        let spec = task(name);
        g.bench_function(name, |b| b.iter(|| compute_tmc(spec.as_ref(), &TmcConfig { m_max: 3, ..TmcConfig::default() }).unwrap()));
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let spec = task("put_back_block");
    let mut m = model(&spec);
    let samples = exec_samples(&spec, &m);
    let mut adam = Adam::new(1e-3);
    let batch = 64;
    let mut it = 0u64;
    c.bench_function("executor_step_batch64", |b| {
        b.iter(|| {
            for k in 0..batch {
                let s = &samples[(it as usize * batch + k) % samples.len()];
                m.exec_loss(s, it * batch as u64 + k as u64, Some(1.0 / batch as f32)).unwrap();
            }
            adam.step(m.exec_store_mut());
            it += 1;
        })
    });
}

fn sampling(c: &mut Criterion) {
    let spec = task("press_button");
    let m = model(&spec);
    let (_, obs) = reset(spec.as_ref(), 0);
    let z = m.encode(&featurize(spec.as_ref(), &obs)).unwrap();
    let mut cond = m.fuse(&z, &[z.clone()], &[z.clone(), z.clone()], 0).unwrap();
    cond.extend(m.proprio(None, 0));
    c.bench_function("sample_chunk", |b| b.iter(|| m.sample_chunk(black_box(&cond), 3).unwrap()));
    c.bench_function("sample_chunk_greedy", |b| b.iter(|| m.sample_chunk_greedy(black_box(&cond)).unwrap()));
}

fn rollouts(c: &mut Criterion) {
    let spec = task("blocks_ranking_try");
    let m = model(&spec);
    let mut seed = 0;
    c.bench_function("policy_episode_blocks_ranking", |b| {
        b.iter(|| {
            seed += 1;
            run_episode(&m, spec.as_ref(), seed).unwrap()
        })
    });
    c.bench_function("expert_episode_blocks_ranking", |b| {
        b.iter(|| {
            seed += 1;
            rmem_core::rollout(spec.as_ref(), &mut ExpertAgent::new(), seed, spec.horizon()).unwrap()
        })
    });
}

criterion_group!(benches, tmc, training_step, sampling, rollouts);
criterion_main!(benches);
