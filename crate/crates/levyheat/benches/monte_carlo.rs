use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use levyheat::functional::{PathFunctional, TestFunction};
use levyheat::harness::{Campaign, ResolutionLadder};
use levyheat::noise::{AmplitudeLaw, LevyModel};
use levyheat::par::Exec;
use levyheat::solver::{Backend, Problem, ReferenceSettings};

fn campaign(exec: Exec) -> Campaign {
    let problem = Problem::acceptance_default();
    let model = LevyModel::new(20.0, 1.1, 64, problem.beta, AmplitudeLaw::rademacher()).unwrap();
    let space = ResolutionLadder::space(
        |n| Backend::Spectral { modes: n },
        &[2, 4, 8],
        1.0 / 256.0,
        1.0,
    )
    .unwrap();
    let time = ResolutionLadder::time(
        Backend::Spectral { modes: 64 },
        &[0.125, 0.0625, 0.03125],
        1.0,
    )
    .unwrap();
    let psi = TestFunction::truncated_delta(0.5, 64);
    Campaign {
        problem,
        model,
        reference: ReferenceSettings {
            modes: 64,
            substeps: 256,
        },
        ladders: vec![space, time],
        t_eval: 1.0,
        strong: true,
        functionals: vec![(
            "bilinear".into(),
            PathFunctional::product_at(1.0, psi.clone(), 1.0, psi),
        )],
        covariance: None,
        samples: 64,
        seed: 1,
        exec,
    }
}

fn sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("coupled_sweep");
    g.sample_size(10);
    for (name, exec) in [
        ("sequential", Exec::Sequential),
        ("parallel", Exec::Parallel),
    ] {
        let camp = campaign(exec);
        g.bench_with_input(BenchmarkId::from_parameter(name), &camp, |b, camp| {
            b.iter(|| black_box(camp.run().unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
