use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use supervisor_core::filter::{classify, FilterConfig};
use supervisor_core::trace::{ActionStep, Session};

fn bench_classify(c: &mut Criterion) {
    let cfg = FilterConfig::default();
    let mut session = Session::new("bench", "task").with_agent("a", "sub");
    for id in 1..=20u64 {
        let step = ActionStep::new("bench", id, "a")
            .with_tool("page_down", format!("{{\"n\":{}}}", id % 3))
            .with_observations("x".repeat(200 * id as usize));
        session.record_step(step).unwrap();
    }
    let trace = session.local_trace("a", cfg.trace_window()).unwrap();
    let step = trace.last().unwrap().clone();
    c.bench_function("classify/page_down_window", |b| b.iter(|| classify(black_box(&step), black_box(&trace), &cfg)));

    let quiet = ActionStep::new("bench", 99, "a").with_tool("web_search", "{}").with_observations("short");
    c.bench_function("classify/no_trigger", |b| b.iter(|| classify(black_box(&quiet), black_box(&trace), &cfg)));
}

criterion_group!(benches, bench_classify);
criterion_main!(benches);
