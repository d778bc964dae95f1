use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use loopgas::interactions::InteractionParams;
use loopgas::lattice::{periodize_potential, PotentialSpec};
use loopgas::loop_mc::{estimate_rel_partition, EnsembleSpec};
use loopgas::mc::Exec;

fn ginibre_partition(c: &mut Criterion) {
    let v = periodize_potential(&PotentialSpec::on_site(1, 0.5).unwrap(), 3).unwrap();
    let spec = EnsembleSpec::ginibre(InteractionParams::generic(0.5, 0.2, v).unwrap(), Some(1.0)).unwrap();
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let mut g = c.benchmark_group("ginibre_rel_partition");
    g.sample_size(10);
    for (name, exec) in [("threaded", Exec::new(workers)), ("sequential", Exec::sequential(workers))] {
        g.bench_with_input(BenchmarkId::new(name, workers), &exec, |b, exec| {
            b.iter(|| estimate_rel_partition(black_box(&spec), 20_000, 1, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, ginibre_partition);
criterion_main!(benches);
