use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const GAUSSIAN: &str = r#"
sigma_v = 0.5

[sampler]
sweeps = 5
steps = 20

[[components]]
dim = 2
sensing = { kind = "identity" }
prior = { kind = "gaussian", mean = [1.0, 0.0], var = 2.0 }

[[components]]
dim = 2
sensing = { kind = "identity" }
prior = { kind = "gaussian", mean = 0.0, var = 1.0 }

[observation]
y = [0.5, 1.5]

[truth]
components = [[0.3, 0.9], [0.2, 0.6]]
"#;

const GMM_PAIR: &str = r#"
sigma_v = 0.5

[[components]]
dim = 1
sensing = { kind = "identity" }
prior = { kind = "gmm", weights = [0.5, 0.5], means = [-1.0, 1.0], vars = [0.5, 0.5] }

[[components]]
dim = 1
sensing = { kind = "identity" }
prior = { kind = "gaussian", mean = 0.0, var = 1.0 }

[observation]
y = [0.5]
"#;

const CHEAP_BENCH: &str = r#"
instances = 2
chains = 2
sweeps = 2
steps = 10
"#;

fn dig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dig")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sample_writes_one_record_per_chain_and_component() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "model.toml", GAUSSIAN);
    let out = dir.path().join("out");
    let o = dig(&["sample", &cfg, "--chains", "10", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("samples.csv")).unwrap();
    for k in 0..2 {
        let n = csv.lines().filter(|l| l.split(',').nth(1) == Some(&k.to_string())).count();
        assert_eq!(n, 10);
    }
    assert!(csv.lines().all(|l| l.split(',').count() == 4));
    let summary: toml::Table = fs::read_to_string(out.join("summary.toml")).unwrap().parse().unwrap();
    let comps = summary["components"].as_array().unwrap();
    assert_eq!(comps.len(), 2);
    assert!(comps.iter().all(|c| c.get("rse").is_some()));
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["command"].as_str(), Some("sample"));
    assert_eq!(manifest["seed"].as_integer(), Some(0));
}

#[test]
fn missing_noise_level_is_a_config_error_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "model.toml", &GAUSSIAN.replace("sigma_v = 0.5", ""));
    let o = dig(&["sample", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sigma_v"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_one() {
    let dir = TempDir::new().unwrap();
    let o = dig(&["sample", dir.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_without_closed_form_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "model.toml", GMM_PAIR);
    let o = dig(&["oracle", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no oracle"), "{}", stderr(&o));
}

#[test]
fn oracle_writes_gaussian_and_relaxed_posteriors() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "model.toml", GAUSSIAN);
    let out = dir.path().join("out");
    let o = dig(&["oracle", &cfg, "--relaxed", "--eta", "0.5,0.1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t: toml::Table = fs::read_to_string(out.join("oracle.toml")).unwrap().parse().unwrap();
    assert_eq!(t["kind"].as_str(), Some("gaussian"));
    let relaxed = t["relaxed"].as_array().unwrap();
    assert_eq!(relaxed.len(), 2);
    assert_eq!(relaxed[1]["eta"].as_float(), Some(0.1));

    // Both priors are isotropic with identity sensing, so the posterior
    // mean of s₁ is m₁ + P₁/(P₁+P₂+σ²)·(y − m₁ − m₂).
    let post = &t["posterior"]["components"].as_array().unwrap()[0];
    let mean: Vec<f64> = post["mean"].as_array().unwrap().iter().map(|v| v.as_float().unwrap()).collect();
    let gain = 2.0 / (2.0 + 1.0 + 0.25);
    let expect = [1.0 + gain * (0.5 - 1.0), gain * 1.5];
    for (m, e) in mean.iter().zip(expect) {
        assert!((m - e).abs() < 1e-12, "{m} vs {e}");
    }
}

#[test]
fn single_gmm_component_has_an_oracle() {
    let dir = TempDir::new().unwrap();
    let text = GMM_PAIR.split("[[components]]\ndim = 1\nsensing = { kind = \"identity\" }\nprior = { kind = \"gaussian\"").next().unwrap().to_owned()
        + "[observation]\ny = [0.5]\n";
    let cfg = write(dir.path(), "model.toml", &text);
    let out = dir.path().join("out");
    let o = dig(&["oracle", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t: toml::Table = fs::read_to_string(out.join("oracle.toml")).unwrap().parse().unwrap();
    assert_eq!(t["kind"].as_str(), Some("gmm"));
    assert_eq!(t["mixture"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_bench_method_exits_one_listing_valid_methods() {
    let dir = TempDir::new().unwrap();
    let o = dig(&["bench", "--methods", "dig,emd", "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("emd") && e.contains("proxsplit"), "{e}");
}

#[test]
fn bench_on_one_point_gives_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "bench.toml",
        "instances = 5\nchains = 2\nsweeps = 3\nsteps = 20\ngrid = [[-20.1, 13.2]]\n",
    );
    let out = dir.path().join("out");
    let o = dig(&["bench", &cfg, "--methods", "dig", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("rse.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sir_db,snr_db,method,instances,rse_s1,rse_s2");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("-20.1,13.2,dig,5,"));
}

#[test]
fn bench_default_grid_gives_a_row_per_point_and_method() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "bench.toml", CHEAP_BENCH);
    let out = dir.path().join("out");
    let o = dig(&["bench", &cfg, "--methods", "dig,proxsplit", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("rse.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 18);
}

#[test]
fn bench_config_errors_name_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "bench.toml", "chains = 0\n");
    let o = dig(&["bench", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("chains"), "{}", stderr(&o));
    let cfg = write(dir.path(), "bench2.toml", "chainz = 3\n");
    let o = dig(&["bench", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("chainz"), "{}", stderr(&o));
}

#[test]
fn generated_instances_are_runnable_configs() {
    let dir = TempDir::new().unwrap();
    let bench = write(dir.path(), "bench.toml", CHEAP_BENCH);
    let data = dir.path().join("data");
    let o = dig(&["gen-data", &bench, "--point", "3", "--instances", "2", "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let inst = data.join("instance_001");
    let signals = fs::read_to_string(inst.join("signals.csv")).unwrap();
    assert_eq!(signals.lines().count(), 1001);
    for line in signals.lines().skip(1).take(50) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[0] - v[1] - v[2] - v[3]).abs() < 1e-9);
    }

    let out = dir.path().join("run");
    let o = dig(&[
        "sample",
        inst.join("config.toml").to_str().unwrap(),
        "--chains",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: toml::Table = fs::read_to_string(out.join("summary.toml")).unwrap().parse().unwrap();
    let comps = summary["components"].as_array().unwrap();
    assert_eq!(comps[0]["dim"].as_integer(), Some(1000));
    assert!(comps[0]["rse"].as_float().unwrap().is_finite());
}

#[test]
fn gen_data_rejects_points_outside_the_grid() {
    let dir = TempDir::new().unwrap();
    let o = dig(&["gen-data", "--point", "9", "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_determines_samples_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "model.toml", GAUSSIAN);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = dig(&["sample", &cfg, "--chains", "4", "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("samples.csv")).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("a", "7"), run("c", "8"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "model.toml", GAUSSIAN);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = dig(&["sample", &cfg, "--chains", "6", "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read(out.join("samples.csv")).unwrap(), fs::read(out.join("summary.toml")).unwrap())
    };
    assert_eq!(run("one", "1"), run("three", "3"));
}
