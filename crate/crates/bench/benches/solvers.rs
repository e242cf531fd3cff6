use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use porowg::elasticity::{solve_elasticity, ElasticityConfig};
use porowg::linalg::{IncompleteCholesky, LinearOperator};
use porowg::poro2::{march, PoroState, StepConfig};
use porowg::poro3::{march_three_field, ThreeFieldConfig};
use porowg::problems::{Manufactured, TimeProfile};
use porowg::wgfem::assemble_elasticity;
use porowg::{build_structured_mesh, Method, PhysicalParams};
use porowg_bench::ElasticityFixture;

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble_elasticity");
    for n in [16, 32] {
        let mesh = build_structured_mesh(2, n).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &mesh, |b, m| {
            b.iter(|| assemble_elasticity(black_box(m)).unwrap())
        });
    }
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let fx = ElasticityFixture::new(2, 32, 1e4);
    let x = vec![1.0; fx.system.operator().dim()];
    let mut y = vec![0.0; x.len()];
    c.bench_function("saddle_operator_apply_n32", |b| {
        b.iter(|| fx.system.operator().apply(black_box(&x), &mut y))
    });
    c.bench_function("ichol_a1_n32", |b| {
        b.iter(|| IncompleteCholesky::new(black_box(&fx.blocks.a1), 1e-3).unwrap())
    });
}

fn solves(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    let mesh = build_structured_mesh(2, 16).unwrap();
    for method in [Method::Minres, Method::Gmres] {
        let params = PhysicalParams::elasticity(1e4);
        let prob = Manufactured::elasticity(2, params).unwrap();
        let cfg = ElasticityConfig::for_dim(2, method);
        g.bench_function(format!("elasticity_{}_n16", method.name()), |b| {
            b.iter(|| {
                solve_elasticity(
                    &mesh,
                    &params,
                    |x| prob.body_force(0.0, x),
                    |x| prob.displacement(0.0, x),
                    &cfg,
                )
                .unwrap()
            })
        });
        let params = PhysicalParams::poro(1e4, 1e-3);
        let prob = Manufactured::poro(2, params, TimeProfile::Linear).unwrap();
        let start = PoroState::initial(&mesh, &prob, 0.0);
        g.bench_function(format!("two_field_{}_n16", method.name()), |b| {
            b.iter(|| {
                march(
                    &mesh,
                    &params,
                    &prob,
                    start.clone(),
                    1,
                    &StepConfig::new(method),
                )
                .unwrap()
            })
        });
        g.bench_function(format!("three_field_{}_n16", method.name()), |b| {
            b.iter(|| {
                march_three_field(
                    &mesh,
                    &params,
                    &prob,
                    start.clone(),
                    1,
                    &ThreeFieldConfig::new(method, true),
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, assembly, kernels, solves);
criterion_main!(benches);
