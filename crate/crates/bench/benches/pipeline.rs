use std::hint::black_box;

use bimanual::qp::QpSolver;
use bimanual::sim::OperatorInput;
use bimanual::spatial::Pose;
use bimanual::InteractionController;
use bimanual_bench::{pipeline, retargeter, scenario};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::Vector3;

fn control_cycle(c: &mut Criterion) {
    let sc = scenario("translation");
    c.bench_function("pipeline cycle", |b| {
        let mut p = pipeline("translation");
        let mut k = 0usize;
        b.iter(|| {
            let t = (k % sc.cycles()) as f64 * sc.dt;
            k += 1;
            black_box(p.cycle(&sc.input_at(t), sc.disturbance_at(t)))
        })
    });
    c.bench_function("pipeline cycle, hold", |b| {
        let mut p = pipeline("static");
        b.iter(|| black_box(p.cycle(&OperatorInput::hold(), [0.0; 6])))
    });
}

fn retarget_step(c: &mut Criterion) {
    let base = retargeter();
    let start = base.current().object_pose;
    let target = Pose::new(start.rotation, start.translation + Vector3::new(0.02, 0.0, 0.01));
    c.bench_function("retarget step", |b| {
        b.iter_batched(|| base.clone(), |mut rt| black_box(rt.step(&target)), BatchSize::SmallInput)
    });
    c.bench_function("retarget qp solve", |b| {
        let (problem, _) = base.problem(&target);
        let mut solver = QpSolver::default();
        b.iter(|| black_box(solver.solve(&problem, None)))
    });
}

fn controller(c: &mut Criterion) {
    let p = pipeline("static");
    let rt = p.retargeter().expect("static scenario has adaptation on");
    let q = rt.state().q.as_slice().to_vec();
    let qd = vec![0.0; q.len()];
    let target = p.control_target().clone();
    let mut ctrl = InteractionController::new(Default::default());
    c.bench_function("controller torques", |b| b.iter(|| black_box(ctrl.compute_torques(&rt.dual, &q, &qd, &target))));
}

criterion_group!(benches, control_cycle, retarget_step, controller);
criterion_main!(benches);
