use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use perspective_bench::{default_agent, step_inputs};
use perspective_core::diff::{AdamConfig, Graph};

fn forward(c: &mut Criterion) {
    let agent = default_agent(0);
    let inp = step_inputs(1, agent.config().g_dim);
    c.bench_function("forward", |b| {
        b.iter(|| {
            let mut graph = Graph::new();
            let fwd = agent
                .forward(&mut graph, &inp.x, &inp.p_prev, &inp.g_prev)
                .unwrap();
            black_box(graph.value(fwd.pi).values()[0])
        })
    });
}

fn backward(c: &mut Criterion) {
    let agent = default_agent(0);
    let inp = step_inputs(1, agent.config().g_dim);
    let mut graph = Graph::new();
    let fwd = agent
        .forward(&mut graph, &inp.x, &inp.p_prev, &inp.g_prev)
        .unwrap();
    let (nodes, _) = agent
        .compute_losses(&mut graph, &fwd, 2, &inp.x_next, 1.0, |c| (c, 0.5))
        .unwrap();
    let mut store = agent.store().clone();
    c.bench_function("backward", |b| {
        b.iter(|| {
            graph.backward(nodes.total, &mut store).unwrap();
            store.zero_grad();
        })
    });
}

fn train_step(c: &mut Criterion) {
    let mut agent = default_agent(0);
    let inp = step_inputs(1, agent.config().g_dim);
    let adam = AdamConfig::default();
    c.bench_function("train_step", |b| {
        b.iter(|| {
            let mut graph = Graph::new();
            let fwd = agent
                .forward(&mut graph, &inp.x, &inp.p_prev, &inp.g_prev)
                .unwrap();
            let (nodes, bundle) = agent
                .compute_losses(&mut graph, &fwd, 2, &inp.x_next, 1.0, |c| (c, 0.5))
                .unwrap();
            graph.backward(nodes.total, agent.store_mut()).unwrap();
            agent.store_mut().adam_step(&adam, 3e-4, 1.0).unwrap();
            black_box(bundle.l_total)
        })
    });
}

criterion_group!(benches, forward, backward, train_step);
criterion_main!(benches);
