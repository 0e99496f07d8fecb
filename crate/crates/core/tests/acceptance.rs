//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use odetune_core::cli::{load_scenario, tune, TuneOptions};
use odetune_core::codegen::{
    count_barriers, enumerate_variants, instantiate, specialize_kernel, specialize_kernels, KNode, VNode,
};
use odetune_core::descfmt::{
    load_ivp, load_machine, load_method, load_skeleton, load_template, parse_ivp, parse_machine, yaml_files, Ivp,
    ImplSkeleton, KernelTemplate, MachineModel, OdeMethod,
};
use odetune_core::ecm::{ecm_multicore, ecm_single, saturation_cycles, KernelCharacterization, StreamedArray};
use odetune_core::predict::{
    kernel_runtime, performance_gain, rank_thetas, run_strategy, tuning_overhead, Strategy,
};
use odetune_core::refexec::{execute_variant, parse_expr, pirk_reference_step, Expr};
use odetune_core::store::{stale_kernels_on_ivp_change, Store};
use odetune_core::wsm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/pirk")
}

fn corpus(sub: &str) -> Vec<PathBuf> {
    yaml_files(&corpus_dir().join(sub)).unwrap()
}

fn templates() -> Vec<KernelTemplate> {
    corpus("templates").iter().map(|p| load_template(p).unwrap()).collect()
}

fn skeletons() -> Vec<ImplSkeleton> {
    corpus("skeletons").iter().map(|p| load_skeleton(p).unwrap()).collect()
}

fn method(name: &str) -> OdeMethod {
    load_method(&corpus_dir().join(format!("methods/{name}.yaml"))).unwrap()
}

fn ivp(name: &str) -> Ivp {
    load_ivp(&corpus_dir().join(format!("ivps/{name}.yaml"))).unwrap()
}

fn catalog() {
    let templates = templates();
    let counts: BTreeMap<&str, usize> = templates.iter().map(|t| (t.name.as_str(), t.variants.len())).collect();
    let expected = [
        ("APRX", 2),
        ("APRXUPD", 2),
        ("LC", 6),
        ("RHS", 1),
        ("RHSAPRX", 2),
        ("RHSAPRXUPD", 2),
        ("RHSLC", 1),
        ("UPD", 1),
    ];
    assert_eq!(counts, expected.into_iter().collect::<BTreeMap<_, _>>());
    let variants = enumerate_variants(&skeletons(), &templates);
    assert_eq!(variants.len(), 56);
    let mut per: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &variants {
        *per.entry(v.skeleton.as_str()).or_default() += 1;
    }
    assert_eq!(per.values().copied().collect::<Vec<_>>(), [12, 12, 2, 2, 2, 2, 12, 12]);
    assert_eq!(per.keys().copied().collect::<Vec<_>>(), ["A", "B", "C", "D", "E", "F", "G", "H"]);
    let kernels: BTreeSet<&str> = variants
        .iter()
        .flat_map(|v| v.kernel_choice.iter().map(|(_, k)| k.as_str()))
        .collect();
    assert_eq!(kernels.len(), 17);
    let stale = stale_kernels_on_ivp_change(&templates, &ivp("IC"), &ivp("Wave1D"));
    assert_eq!(
        stale.iter().map(String::as_str).collect::<Vec<_>>(),
        ["RHS", "RHSAPRXUPD_ij", "RHSAPRXUPD_ji", "RHSAPRX_ij", "RHSAPRX_ji", "RHSLC"]
    );
}

fn literals(e: &Expr, out: &mut Vec<f64>) {
    e.visit(&mut |x| {
        if let Expr::Num(v) = x {
            out.push(*v);
        }
    });
}

fn codegen_fidelity() {
    let templates = templates();
    let m = method("radau_iia7");
    let aprx = templates.iter().find(|t| t.name == "APRX").unwrap();
    let ji = aprx.variant("APRX_ji").unwrap();
    let g = specialize_kernel(aprx, ji, &m, None, Some(161)).unwrap();
    let [KNode::Loop(l)] = g.body.as_slice() else {
        panic!("APRX_ji body is not a single loop: {:?}", g.body)
    };
    assert_eq!(l.var, "j");
    assert_eq!(l.trips.as_int(), Some(161));
    assert_eq!(l.body.len(), 4);
    let mut lits = Vec::new();
    for node in &l.body {
        let KNode::Stmt(st) = node else { panic!("unrolled body holds a non-statement") };
        literals(&st.value, &mut lits);
    }
    assert_eq!(lits, [0.2205, 0.3882, 0.3288, 0.0625]);

    let skeletons = skeletons();
    let a = skeletons.iter().find(|s| s.name == "A").unwrap();
    let ks = specialize_kernels(&templates, &m, Some(&ivp("IC")), Some(161)).unwrap();
    let v = enumerate_variants(&skeletons, &templates)
        .into_iter()
        .find(|v| v.skeleton == "A")
        .unwrap();
    let inst = instantiate(&v, a, &templates, &ks, &m).unwrap();
    let loops: Vec<(&String, u64, usize)> = inst
        .body
        .iter()
        .filter_map(|n| match n {
            VNode::Loop { var, trips, body, .. } => {
                Some((var, *trips, body.iter().filter(|b| matches!(b, VNode::Barrier)).count()))
            }
            _ => None,
        })
        .collect();
    assert_eq!(loops, [(&"k".to_string(), 6, 2)]);
    assert_eq!(inst.barrier_executions(), 14);
    assert_eq!(count_barriers(a, &m), 2 * m.corrector_steps as u64 + 2);
}

fn synthetic_ivp(rng: &mut ChaCha8Rng) -> Ivp {
    let doc = format!(
        "name: Synth\ncomponents:\n  - first: 1\n    size: 1\n    code: P * cos(t) - Q * %in[j]\n  - first: 2\n    size: n-1\n    code: R * %in[j - 1] - Q * %in[j] + S * %in[0] * %in[j]\nconstants:\n  - double P = {:?}\n  - double Q = {:?}\n  - double R = {:?}\n  - double S = {:?}\naccess_distance: unlimited\n",
        rng.random_range(-2.0..2.0),
        rng.random_range(0.1..3.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-0.5..0.5),
    );
    parse_ivp(&doc).unwrap()
}

fn semantic_equivalence() {
    let templates = templates();
    let skeletons = skeletons();
    let variants = enumerate_variants(&skeletons, &templates);
    let methods: Vec<OdeMethod> = corpus("methods").iter().map(|p| load_method(p).unwrap()).collect();
    let mut ivps: Vec<Ivp> = corpus("ivps").iter().map(|p| load_ivp(p).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for case in 0..100 {
        if case % 4 == 3 {
            ivps.push(synthetic_ivp(&mut rng));
        }
        let m = &methods[rng.random_range(0..methods.len())];
        let f = if case % 4 == 3 {
            ivps.last().unwrap().clone()
        } else {
            ivps[rng.random_range(0..3)].clone()
        };
        let n = rng.random_range(4..=64u64);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let t = rng.random_range(0.0..2.0);
        let h = rng.random_range(1e-3..2e-2);
        let ks = specialize_kernels(&templates, m, Some(&f), Some(n)).unwrap();
        let want = pirk_reference_step(m, &f, &y, t, h).unwrap();
        for v in &variants {
            let sk = skeletons.iter().find(|s| s.name == v.skeleton).unwrap();
            let inst = instantiate(v, sk, &templates, &ks, m).unwrap();
            let got = execute_variant(&inst, m, &y, t, h).unwrap();
            for (j, (g, w)) in got.iter().zip(&want).enumerate() {
                let rel = ((g - w) / w).abs();
                assert!(rel <= 1e-12, "case {case} {} {} {} n={n} y[{j}]: {g} vs {w}", v.id, m.name, f.name);
            }
        }
        checked += 1;
    }
    assert_eq!(checked, 100);
}

fn random_machine(rng: &mut ChaCha8Rng, base: &MachineModel) -> MachineModel {
    let mut m = base.clone();
    m.clock_hz = rng.random_range(1.0e9..4.0e9);
    for v in m.throughput.values_mut() {
        *v = [0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0][rng.random_range(0..7)];
    }
    for t in &mut m.transfers {
        t.cycles = rng.random_range(0.5..8.0);
        t.penalty = if rng.random_bool(0.3) { rng.random_range(0.0..3.0) } else { 0.0 };
        t.overlap = rng.random_bool(0.2);
    }
    let mut bw = rng.random_range(5e9..20e9);
    for b in &mut m.mem_bandwidth {
        bw *= rng.random_range(0.9..1.6);
        *b = bw;
    }
    m
}

fn random_characterization(rng: &mut ChaCha8Rng) -> KernelCharacterization {
    let arrays = (0..rng.random_range(1..6))
        .map(|k| StreamedArray {
            name: format!("a{k}"),
            elements: rng.random_range(1..1_000_000),
            read: true,
            write: rng.random_bool(0.5),
            load_cls: rng.random_range(0.0..2.0),
            evict_cls: if rng.random_bool(0.5) { rng.random_range(0.0..1.0) } else { 0.0 },
        })
        .collect();
    KernelCharacterization {
        kernel: "k".into(),
        adds: rng.random_range(0.0..4.0),
        muls: rng.random_range(0.0..4.0),
        fmas: rng.random_range(0.0..4.0),
        divs: if rng.random_bool(0.3) { rng.random_range(0.0..2.0) } else { 0.0 },
        loads: rng.random_range(0.0..8.0),
        stores: rng.random_range(0.0..4.0),
        arrays,
        beta: 1,
    }
}

fn ecm_identities() {
    let bases: Vec<MachineModel> = corpus("machines").iter().map(|p| load_machine(p).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let b = rng.random_range(0..bases.len());
        let m = random_machine(&mut rng, &bases[b]);
        let c = random_characterization(&mut rng);
        let mem = m.caches.len();
        let residency: Vec<usize> = c.arrays.iter().map(|_| rng.random_range(0..=mem)).collect();
        let p = ecm_single(&c, &residency, &m).unwrap();
        for (k, t) in p.t_ecm.iter().enumerate() {
            assert_eq!(*t, p.t_ol.max(p.t_nol + p.t_data[k]));
        }
        for w in p.t_ecm.windows(2) {
            assert!(w[0] <= w[1], "level monotonicity: {:?}", p.t_ecm);
        }
        let mut prev = f64::INFINITY;
        for tau in 1..=m.cores {
            let a = ecm_multicore(&p, tau, &m).unwrap();
            assert!(a <= prev, "alpha grew from {prev} to {a} at tau={tau}");
            assert!(a >= saturation_cycles(&p, tau, &m));
            prev = a;
        }
    }
}

fn eq5_eq6() {
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("store.json");
    let sc = scenario("IC", 161, &[1, 4, 8]);
    let mut store = Store::open(&store_path).unwrap();
    let out = tune(&sc, &mut store, &barrier_options()).unwrap();
    store.save().unwrap();
    let store = Store::open(&store_path).unwrap();
    let mut phis = BTreeMap::new();
    let mut records = 0;
    for (k, r) in store.predictions() {
        let p = &r.prediction;
        assert_eq!(p.phi, p.alpha * p.beta / (p.delta * p.frequency), "{k:?}");
        assert_eq!(kernel_runtime(p.alpha, p.beta, p.delta, 2.0 * p.frequency).unwrap(), p.phi / 2.0);
        phis.insert((k.kernel.clone(), k.tau), p.phi);
        records += 1;
    }
    assert_eq!(records, 17 * 3);
    assert_eq!(out.predictions.len(), 56 * 3);
    for v in &out.predictions {
        let mut theta = 0.0;
        for term in &v.kernels {
            assert_eq!(term.phi, phis[&(term.kernel.clone(), v.tau)]);
            theta += term.executions as f64 * term.phi;
        }
        assert_eq!(v.theta, theta + v.t_com);
        assert_eq!(v.theta, v.recompute_theta());
    }
}

const TOY: &str = r#"
name: toy
clock: 1 GHz
cores per socket: 4
cacheline size: 64 B
throughput: {ADD: 1, MUL: 1, DIV: 1, LOAD: 1, STORE: 1}
memory hierarchy:
  - {level: L1, size: 32768 B}
  - {level: L2, size: 256 KiB, transfer cycles: 2}
  - {level: L3, size: 2 MiB, shared: true, transfer cycles: 4}
  - {level: MEM}
benchmarks:
  bandwidth:
    MEM: {1: 10 GB/s, 2: 18 GB/s, 3: 24 GB/s, 4: 26 GB/s}
"#;

fn working_sets() {
    let m = parse_machine(TOY).unwrap();
    let e = parse_expr("(s+1)*n+s").unwrap();
    let scan = (1..100_000u64)
        .take_while(|&n| wsm::eval_ws(&e, 4, n).unwrap() * 8 <= 32768)
        .last();
    assert_eq!(scan, Some(818));
    assert_eq!(wsm::max_fitting_n(&e, 4, 8, 32768.0), Some(818));
    for tau in [1, 4] {
        let cuts = wsm::cache_cutpoints(std::slice::from_ref(&e), 4, &m, 8, tau);
        assert_eq!(cuts.len(), 3);
        assert_eq!(cuts[0], 818);
        let n_max = cuts[2] * 2;
        let level = |n| wsm::ws_levels(std::slice::from_ref(&e), 4, n, &m, 8, tau).unwrap()[0];
        let samples = wsm::sample_sizes(&cuts, 1, n_max);
        assert_eq!(samples.len(), 4);
        let mut lo = 1;
        for (k, &hi) in cuts.iter().chain([n_max].iter()).enumerate() {
            assert!((lo..=hi).contains(&samples[k]));
            let l = level(samples[k]);
            assert!((lo..=hi).all(|n| level(n) == l), "range [{lo}, {hi}] at tau={tau}");
            lo = hi + 1;
        }
        for &c in &cuts {
            assert_ne!(level(c), level(c + 1), "cut {c} at tau={tau}");
        }
    }
}

fn named(thetas: &[f64]) -> Vec<(String, f64)> {
    thetas.iter().enumerate().map(|(i, t)| (format!("v{i:03}"), *t)).collect()
}

fn selection_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let len = rng.random_range(1..80);
        let thetas: Vec<f64> = (0..len).map(|_| rng.random_range(1e-4..10.0)).collect();
        let v = named(&thetas);
        let d1 = rng.random_range(0.0..30.0);
        let d2 = d1 + rng.random_range(0.0..30.0);
        let s1 = rank_thetas(&v, d1).unwrap();
        let s2 = rank_thetas(&v, d2).unwrap();
        let l1: BTreeSet<&str> = s1.lambda().iter().map(|r| r.variant.as_str()).collect();
        let l2: BTreeSet<&str> = s2.lambda().iter().map(|r| r.variant.as_str()).collect();
        assert!(!l1.is_empty() && l1.is_subset(&l2));
        let c = rng.random_range(1e-3..1e3);
        let scaled: Vec<(String, f64)> = v.iter().map(|(n, t)| (n.clone(), t * c)).collect();
        let s3 = rank_thetas(&scaled, d1).unwrap();
        let order = |s: &odetune_core::predict::Selection| s.ranking.iter().map(|r| r.variant.clone()).collect::<Vec<_>>();
        assert_eq!(order(&s1), order(&s3));
        assert_eq!(s1.selected, s3.selected);
    }
}

fn close(got: f64, want: f64) {
    assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
}

fn strategy_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let total = rng.random_range(2..60);
        let times: Vec<f64> = (0..total).map(|_| rng.random_range(0.1..5.0)).collect();
        let predicted: Vec<f64> = times.iter().map(|t| t * rng.random_range(0.8..1.2)).collect();
        let measured: BTreeMap<String, f64> = named(&times).into_iter().collect();
        let sel = rank_thetas(&named(&predicted), 5.0).unwrap();
        let t_ra: f64 = measured.values().sum();
        let t_best = times.iter().copied().fold(f64::INFINITY, f64::min);
        for s in [
            Strategy::BestVariant,
            Strategy::RunAll,
            Strategy::OffsitePreselect(5.0),
            Strategy::OffsitePreselect(10.0),
            Strategy::RandomSelect { k: 20 },
        ] {
            let o = run_strategy(s, &measured, &sel, 3).unwrap();
            let tested: Vec<f64> = o.tested.iter().map(|v| measured[v]).collect();
            let k = tested.len() as f64;
            let t_min = tested.iter().copied().fold(f64::INFINITY, f64::min);
            let t_tune: f64 = tested.iter().sum();
            close(o.overhead, (t_tune - k * t_min) / (k * t_min) * 100.0);
            let t_at = match s {
                Strategy::BestVariant => total as f64 * t_best,
                _ => t_tune + (total as f64 - k) * t_min,
            };
            close(o.t_at, t_at);
            close(o.gain, (t_ra - t_at) / t_ra * 100.0);
            assert_eq!(o.loss, (t_min - t_best) / t_best * 100.0);
        }
    }
    assert_eq!(tuning_overhead(&[1.7], 1.7).unwrap(), 0.0);
    let equal: BTreeMap<String, f64> = named(&[0.9; 56]).into_iter().collect();
    let sel = rank_thetas(&named(&[1.0; 56]), 5.0).unwrap();
    for s in [Strategy::RunAll, Strategy::OffsitePreselect(5.0), Strategy::RandomSelect { k: 20 }] {
        assert_eq!(run_strategy(s, &equal, &sel, 1).unwrap().gain, 0.0);
    }
    assert_eq!(performance_gain(56.0 * 0.9, 56.0 * 0.9).unwrap(), 0.0);
    let one = rank_thetas(&named(&[1.0, 2.0, 3.0]), 5.0).unwrap();
    let m: BTreeMap<String, f64> = named(&[1.0, 2.0, 3.0]).into_iter().collect();
    let o = run_strategy(Strategy::OffsitePreselect(5.0), &m, &one, 0).unwrap();
    assert_eq!((o.tested.len(), o.overhead, o.loss), (1, 0.0, 0.0));
}

fn scenario(ivp: &str, n: u64, cores: &[u32]) -> odetune_core::descfmt::ValidatedScenario {
    let d = corpus_dir();
    load_scenario(
        &d.join("machines/HSW.yaml"),
        &[d.join("methods/radau_iia7.yaml")],
        &[d.join(format!("ivps/{ivp}.yaml"))],
        &d.join("templates"),
        &d.join("skeletons"),
        Some(n),
        None,
        cores,
        5.0,
    )
    .unwrap()
}

fn barrier_options() -> TuneOptions {
    let csv = std::fs::read_to_string(corpus_dir().join("bench/HSW_barrier.csv")).unwrap();
    TuneOptions {
        barrier_samples: Some(odetune_core::predict::read_barrier_csv(&csv).unwrap()),
        out_dir: None,
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn reuse() {
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("store.json");
    let sc = scenario("IC", 36_000_000, &[8]);
    let run = |out: &str, sc: &odetune_core::descfmt::ValidatedScenario, bench: bool| {
        let mut store = Store::open(&store_path).unwrap();
        let mut opts = if bench { barrier_options() } else { TuneOptions::default() };
        opts.out_dir = Some(dir.path().join(out));
        let o = tune(sc, &mut store, &opts).unwrap();
        store.save().unwrap();
        o
    };
    let cold = run("cold", &sc, true);
    assert_eq!(cold.stats.ecm_evaluations, 17);
    assert_eq!(cold.report.variants, 56);
    let warm = run("warm", &sc, false);
    assert_eq!(warm.stats.ecm_evaluations, 0);
    assert_eq!(warm.stats.reused, 17);
    let (a, b) = (tree(&dir.path().join("cold")), tree(&dir.path().join("warm")));
    assert!(a.contains_key(Path::new("report.json")) && a.contains_key(Path::new("report.txt")));
    assert_eq!(a, b);
    let switched = run("wave", &scenario("Wave1D", 36_000_000, &[8]), false);
    assert_eq!(switched.stats.ecm_evaluations, 6);
    assert_eq!(switched.stats.evaluated_kernels.len(), 6);
}

fn criterion(id: usize, what: &str, limit: Duration, f: fn()) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let took = start.elapsed();
    let (ok, detail) = match result {
        Ok(()) if took <= limit => (true, String::new()),
        Ok(()) => (false, format!(" exceeded {limit:?}")),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!(" {msg}"))
        }
    };
    let line = format!(
        "criterion {id} {what}: {} ({:.3} s){detail}\n",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    ok
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "variant catalog", secs(1), catalog),
        criterion(2, "code generation fidelity", secs(1), codegen_fidelity),
        criterion(3, "semantic equivalence", secs(60), semantic_equivalence),
        criterion(4, "ECM identities", secs(5), ecm_identities),
        criterion(5, "runtime arithmetic", secs(1), eq5_eq6),
        criterion(6, "working-set model", secs(5), working_sets),
        criterion(7, "selection semantics", secs(5), selection_semantics),
        criterion(8, "strategy metrics", secs(1), strategy_metrics),
        criterion(9, "reuse", secs(5), reuse),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
