use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use odetune_core::cli::Cli;
use odetune_core::codegen::enumerate_variants;
use odetune_core::descfmt::{load_skeleton, load_template, yaml_files};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/pirk")
}

fn odetune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odetune"))
        .args(args)
        .env_remove("ODETUNE_STORE")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tune(store: &Path, out: &Path, ivp: &str) -> Output {
    let d = corpus();
    odetune(&[
        "tune",
        "--machine",
        path(&d.join("machines/HSW.yaml")),
        "--method",
        path(&d.join("methods/radau_iia7.yaml")),
        "--ivp",
        path(&d.join(format!("ivps/{ivp}.yaml"))),
        "--templates-dir",
        path(&d.join("templates")),
        "--skeletons-dir",
        path(&d.join("skeletons")),
        "--n",
        "36000000",
        "--cores",
        "8",
        "--barrier-bench",
        path(&d.join("bench/HSW_barrier.csv")),
        "--store",
        path(store),
        "--out-dir",
        path(out),
    ])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn command_definition_is_consistent() {
    Cli::command().debug_assert();
}

#[test]
fn tune_reuses_the_store_and_tracks_ivp_changes() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.json");
    let cold = tune(&store, &dir.path().join("cold"), "IC");
    assert_eq!(cold.status.code(), Some(0), "{}", stderr(&cold));
    assert!(stderr(&cold).starts_with("17 kernel predictions computed (17 kernels), 0 reused"));
    let warm = tune(&store, &dir.path().join("warm"), "IC");
    assert!(stderr(&warm).starts_with("0 kernel predictions computed (0 kernels), 17 reused"));
    for f in ["report.json", "report.txt"] {
        assert_eq!(
            std::fs::read(dir.path().join("cold").join(f)).unwrap(),
            std::fs::read(dir.path().join("warm").join(f)).unwrap()
        );
    }
    let wave = tune(&store, &dir.path().join("wave"), "Wave1D");
    assert!(stderr(&wave).starts_with("6 kernel predictions computed (6 kernels), 11 reused"), "{}", stderr(&wave));

    let meas = corpus().join("measurements/HSW_IC_tau8_n36M.csv");
    let report = dir.path().join("cold/report.json");
    let eval = odetune(&["strategy-eval", "--report", path(&report), "--measurements", path(&meas)]);
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    let text = String::from_utf8(eval.stdout).unwrap();
    for s in ["BestVariant", "RunAll", "OffsitePreselect5", "OffsitePreselect10", "RandomSelect"] {
        assert!(text.lines().any(|l| l.starts_with(s)), "{s} missing from\n{text}");
    }

    let export = odetune(&["db", "export", "--store", path(&store)]);
    let csv = String::from_utf8(export.stdout).unwrap();
    assert_eq!(csv.lines().count(), 1 + 17 + 6);
}

#[test]
fn export_of_an_empty_store_is_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.json");
    odetune_core::store::Store::open(&store).unwrap().save().unwrap();
    let o = odetune(&["db", "export", "--store", path(&store)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        "kernel,machine,method,ivp,tau,n,frequency,alpha,beta,delta,phi\n"
    );
}

fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for j in 0..b.len() {
            let cur = row[j + 1];
            row[j + 1] = (prev + usize::from(ca != b[j])).min(row[j] + 1).min(cur + 1);
            prev = cur;
        }
    }
    row[b.len()]
}

#[test]
fn codegen_writes_source_and_suggests_near_ids() {
    let d = corpus();
    let dir = tempfile::tempdir().unwrap();
    let common = |variant: &str| {
        odetune(&[
            "codegen",
            "--method",
            path(&d.join("methods/radau_iia7.yaml")),
            "--ivp",
            path(&d.join("ivps/IC.yaml")),
            "--templates-dir",
            path(&d.join("templates")),
            "--skeletons-dir",
            path(&d.join("skeletons")),
            "--n",
            "161",
            "--variant",
            variant,
            "--out-dir",
            path(dir.path()),
        ])
    };
    let ok = common("A_LCjli_APRXji");
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let src = std::fs::read_to_string(dir.path().join("A_LCjli_APRXji.c")).unwrap();
    assert_eq!(src.matches("#pragma omp barrier").count(), 4);

    let typo = "A_LCjli_APRXjj";
    let bad = common(typo);
    assert_eq!(bad.status.code(), Some(4));
    let templates: Vec<_> = yaml_files(&d.join("templates")).unwrap().iter().map(|p| load_template(p).unwrap()).collect();
    let skeletons: Vec<_> = yaml_files(&d.join("skeletons")).unwrap().iter().map(|p| load_skeleton(p).unwrap()).collect();
    let ids: Vec<String> = enumerate_variants(&skeletons, &templates).into_iter().map(|v| v.id).collect();
    let best = ids.iter().map(|i| levenshtein(i, typo)).min().unwrap();
    let nearest = ids.iter().filter(|i| levenshtein(i, typo) == best).min().unwrap();
    assert!(stderr(&bad).contains(nearest.as_str()), "{}", stderr(&bad));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let d = corpus();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(odetune(&["tune"]).status.code(), Some(2));
    assert_eq!(odetune(&["--help"]).status.code(), Some(0));
    let missing = dir.path().join("none.json");
    assert_eq!(odetune(&["db", "export", "--store", path(&missing)]).status.code(), Some(6));
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"version\":9}").unwrap();
    assert_eq!(odetune(&["db", "export", "--store", path(&broken)]).status.code(), Some(6));

    let bad_method = dir.path().join("bad.yaml");
    std::fs::write(&bad_method, "name: x\nstages: two\n").unwrap();
    let o = odetune(&[
        "codegen",
        "--method",
        path(&bad_method),
        "--templates-dir",
        path(&d.join("templates")),
        "--skeletons-dir",
        path(&d.join("skeletons")),
        "--n",
        "8",
        "--variant",
        "A_LCjli_APRXji",
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let meas = dir.path().join("m.csv");
    std::fs::write(&meas, "variant,tau,n,seconds\nA_LCjli_APRXji,8,36000000,oops\n").unwrap();
    let report = dir.path().join("r.json");
    let out = dir.path().join("out");
    let t = tune(&dir.path().join("s.json"), &out, "IC");
    assert_eq!(t.status.code(), Some(0));
    std::fs::copy(out.join("report.json"), &report).unwrap();
    let o = odetune(&["strategy-eval", "--report", path(&report), "--measurements", path(&meas)]);
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));
}
