use proptest::prelude::*;
use psac::{audit_trace, Config};
use psac_apps::filter_bst::{self, in_order, join2, Tree};
use psac_apps::*;

/// Runs, applies each batch, propagates and checks output, gc hygiene and
/// idempotence after every batch.
fn exercise<A: App>(spec: BenchmarkSpec, batches: &[usize]) {
    let mut app = A::build(&spec).unwrap();
    let mut inst = app.run(Config::default()).unwrap();
    assert_eq!(inst.output(), app.expected(), "{} initial", A::NAME);
    for &k in batches {
        app.mutate(k).unwrap();
        inst.comp.propagate().unwrap();
        assert_eq!(inst.output(), app.expected(), "{} k={k}", A::NAME);
        inst.comp.gc_collect();
        assert_eq!(audit_trace(&inst.comp), vec![], "{} k={k}", A::NAME);
        inst.comp.propagate().unwrap();
        assert_eq!(inst.comp.metrics().affected_readers_reexecuted, 0);
    }
}

#[test]
fn sum_batches() {
    exercise::<Sum>(BenchmarkSpec::new(1000, 1), &[1, 16, 256, 1000]);
}

#[test]
fn spellcheck_batches() {
    exercise::<Spellcheck>(BenchmarkSpec::new(300, 2).with_granularity(20), &[1, 16, 256]);
}

#[test]
fn hash_batches() {
    exercise::<StringHash>(BenchmarkSpec::new(5000, 3).with_granularity(16), &[1, 16, 256]);
}

#[test]
fn list_batches() {
    exercise::<ListContraction>(BenchmarkSpec::new(2000, 4), &[1, 16, 256]);
}

#[test]
fn tree_batches() {
    exercise::<TreeContraction>(BenchmarkSpec::new(1000, 5), &[1, 8, 64]);
}

#[test]
fn filter_batches() {
    exercise::<FilterBst>(BenchmarkSpec::new(1000, 6).with_granularity(8), &[1, 4, 16, 64]);
}

#[test]
fn readers_batches() {
    exercise::<ReaderStress>(BenchmarkSpec::new(2048, 7).with_granularity(64), &[1, 16, 64]);
}

#[test]
fn every_base_reader_reruns_when_all_change() {
    let n = 512;
    let mut app = Sum::build(&BenchmarkSpec::new(n, 8)).unwrap();
    let mut inst = app.run(Config::default()).unwrap();
    app.mutate(n).unwrap();
    inst.comp.propagate().unwrap();
    assert_eq!(inst.output(), app.expected());
    assert_eq!(inst.comp.metrics().affected_readers_reexecuted, 2 * n as u64 - 1);
}

#[test]
fn sum_single_update_touches_one_path() {
    let n = 1 << 16;
    let mut app = Sum::build(&BenchmarkSpec::new(n, 9)).unwrap();
    let mut inst = app.run(Config::default()).unwrap();
    app.mutate(1).unwrap();
    inst.comp.propagate().unwrap();
    assert_eq!(inst.output(), app.expected());
    assert!(inst.comp.metrics().affected_readers_reexecuted <= 2 * 16 + 1);
}

#[test]
fn hash_single_char_reruns_one_chunk_and_its_combiners() {
    let (n, g) = (1 << 20, 64);
    let mut app = StringHash::build(&BenchmarkSpec::new(n, 10).with_granularity(g)).unwrap();
    let mut inst = app.run(Config::default()).unwrap();
    app.mutate(1).unwrap();
    inst.comp.propagate().unwrap();
    assert_eq!(inst.output(), app.expected());
    let levels = (n / g).trailing_zeros() as u64;
    assert_eq!(inst.comp.metrics().affected_readers_reexecuted, 1 + levels);
}

#[test]
fn hash_nodes_shrink_as_chunks_grow() {
    let n = 1 << 16;
    let nodes: Vec<u64> = (4..=11)
        .map(|e| {
            let app = StringHash::build(&BenchmarkSpec::new(n, 11).with_granularity(1 << e)).unwrap();
            app.run(Config::default()).unwrap().comp.metrics().tree_nodes
        })
        .collect();
    assert!(nodes.windows(2).all(|w| w[1] < w[0]), "{nodes:?}");
}

#[test]
fn spellcheck_desk_update() {
    let mut app = Spellcheck::build(&BenchmarkSpec::new(1 << 12, 12)).unwrap();
    let mut inst = app.run(Config::default()).unwrap();
    app.mutate(16).unwrap();
    inst.comp.propagate().unwrap();
    assert_eq!(inst.output(), app.expected());
}

#[test]
fn list_desk_update() {
    let mut app = ListContraction::build(&BenchmarkSpec::new(1 << 14, 13)).unwrap();
    let mut inst = app.run(Config::default()).unwrap();
    app.mutate(16).unwrap();
    inst.comp.propagate().unwrap();
    assert_eq!(inst.output(), app.expected());
}

#[test]
fn tree_desk_update() {
    let mut app = TreeContraction::build(&BenchmarkSpec::new(1 << 12, 14)).unwrap();
    let mut inst = app.run(Config::default()).unwrap();
    app.mutate(8).unwrap();
    inst.comp.propagate().unwrap();
    assert_eq!(inst.output(), app.expected());
}

#[test]
fn reader_full_rewrite_reruns_every_worker() {
    let w = 1 << 12;
    let mut app = ReaderStress::build(&BenchmarkSpec::new(w, 15).with_granularity(16)).unwrap();
    let mut inst = app.run(Config::default()).unwrap();
    app.mutate(16).unwrap();
    inst.comp.propagate().unwrap();
    assert_eq!(inst.output(), app.expected());
    assert_eq!(inst.comp.metrics().affected_readers_reexecuted, w as u64);
}

#[test]
fn same_seed_same_counters() {
    let go = || {
        let mut app = FilterBst::build(&BenchmarkSpec::new(2000, 16).with_granularity(8)).unwrap();
        let mut inst = app.run(Config::default()).unwrap();
        app.mutate(10).unwrap();
        inst.comp.propagate().unwrap();
        let m = inst.comp.metrics();
        (inst.output(), m.affected_readers_reexecuted, m.reexec_work_units)
    };
    assert_eq!(go(), go());
}

#[test]
fn random_bsts_are_shallow() {
    let n = 1 << 12;
    let bound = 4 * 12;
    for cap in [1, filter_bst::DEFAULT_CAPACITY] {
        let ok = (0..100)
            .filter(|&seed| {
                let app = FilterBst::build(&BenchmarkSpec::new(n, seed).with_granularity(cap)).unwrap();
                app.height() <= bound
            })
            .count();
        assert!(ok >= 99, "capacity {cap}: {ok}/100");
    }
}

fn bst(values: &[i64], cap: usize) -> Tree {
    FilterBst::from_values(values, cap, 0).unwrap().root().clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn join2_concatenates(
        mut a in prop::collection::vec(0i64..1000, 0..60),
        mut b in prop::collection::vec(1000i64..2000, 0..60),
        cap in 1usize..6,
    ) {
        let (l, r) = (bst(&a, cap), bst(&b, cap));
        let dest: Tree = psac::Mod::new();
        let d2 = dest.clone();
        let _c = psac::Computation::run(Config::default(), move |cx| join2(cx, l, r, d2)).unwrap();
        a.sort_unstable();
        b.sort_unstable();
        a.extend(b);
        prop_assert_eq!(in_order(&dest), a);
    }

    #[test]
    fn list_follows_any_permutation(seed in any::<u64>(), n in 2usize..200, chunk in 1usize..40) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut app = ListContraction::build(&BenchmarkSpec::new(n, seed).with_granularity(chunk)).unwrap();
        let mut inst = app.run(Config::default()).unwrap();
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        app.set_order(&order).unwrap();
        inst.comp.propagate().unwrap();
        prop_assert_eq!(inst.output(), app.expected());
    }

    #[test]
    fn tree_survives_relinks(seed in any::<u64>(), n in 2usize..300, chunk in 1usize..40, k in 1usize..20) {
        let mut app = TreeContraction::build(&BenchmarkSpec::new(n, seed).with_granularity(chunk)).unwrap();
        let mut inst = app.run(Config::default()).unwrap();
        app.mutate(k).unwrap();
        inst.comp.propagate().unwrap();
        prop_assert_eq!(inst.output(), app.expected());
        inst.comp.gc_collect();
        prop_assert!(audit_trace(&inst.comp).is_empty());
    }
}

fn oracle_agrees<A: App>(spec: BenchmarkSpec, k: usize) {
    let mut app = A::build(&spec).unwrap();
    let mut inst = app.run(Config::default().instrumented()).unwrap();
    let check = checked_update(&mut app, &mut inst, k).unwrap();
    assert!(check.consistent(), "{} k={k}: {check:?}", A::NAME);
    assert_eq!(inst.output(), app.expected());
}

#[test]
fn trace_oracle_matches_propagation() {
    for k in [1, 16] {
        oracle_agrees::<Sum>(BenchmarkSpec::new(600, 20), k);
        oracle_agrees::<StringHash>(BenchmarkSpec::new(3000, 21).with_granularity(16), k);
        oracle_agrees::<FilterBst>(BenchmarkSpec::new(600, 22).with_granularity(4), k);
        oracle_agrees::<ListContraction>(BenchmarkSpec::new(400, 23), k);
        oracle_agrees::<TreeContraction>(BenchmarkSpec::new(400, 24), k);
        oracle_agrees::<Spellcheck>(BenchmarkSpec::new(100, 25).with_granularity(12), k);
        oracle_agrees::<ReaderStress>(BenchmarkSpec::new(256, 26).with_granularity(32), k);
    }
}
