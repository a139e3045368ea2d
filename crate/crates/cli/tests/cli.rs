use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SIMULATE: &str = r#"
kind = "simulate"
[model]
id = "linear-delay"
params = { kappa0 = 0.0, kappa1 = 1.0, sigma = 0.0 }
[grid]
dt = 0.01
r = 1.0
horizon = 3.0
[seeds]
master = 1
[init]
x = 1.0
"#;

fn sddekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sddekit")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let out = dir.join("out");
    let mut args = vec!["run", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sddekit(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn list_models_shows_the_catalog() {
    let o = sddekit(&["list-models"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for id in ["linear-delay", "holder-drift", "tanh-smooth", "prop-kappa", "ou-nodelay"] {
        assert!(text.contains(id), "{id} missing from\n{text}");
    }
    let holder = text.lines().find(|l| l.starts_with("holder-drift")).unwrap();
    assert!(holder.contains("alpha=0.5 beta=1"), "{holder}");
}

#[test]
fn deterministic_simulation_matches_method_of_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sim.toml", SIMULATE);
    let o = run(dir.path(), &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/simulate.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("path,step,t,x"));
    let exact = |t: f64| {
        if t <= 1.0 {
            1.0 - t
        } else if t <= 2.0 {
            -(2.0 * (t - 1.0) - (t * t - 1.0) / 2.0)
        } else {
            let u = t - 1.0;
            -0.5 - (u * u * u / 6.0 - u * u + 1.5 * u - 2.0 / 3.0)
        }
    };
    let mut rows = 0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((f[3] - exact(f[2])).abs() <= 5.0 * 0.01, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 301);
    assert!(csv.contains("# master-seed: 1\n"));
    assert!(csv.contains("# config-sha256: "));
    assert!(csv.contains(concat!("# sddekit-version: ", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn seed_override_and_workers_do_not_change_output_layout() {
    let dir = tempfile::tempdir().unwrap();
    let text = SIMULATE.replace("sigma = 0.0", "sigma = 0.5") + "[estimator]\npaths = 4\n";
    let cfg = write_config(dir.path(), "sim.toml", &text);
    let read = || fs::read_to_string(dir.path().join("out/simulate.csv")).unwrap();
    assert!(run(dir.path(), &cfg, &["--seed", "99", "--workers", "1"]).status.success());
    let a = read();
    assert!(a.contains("# master-seed: 99\n"));
    assert!(run(dir.path(), &cfg, &["--seed", "99", "--workers", "3"]).status.success());
    assert_eq!(a, read());
    assert!(run(dir.path(), &cfg, &["--seed", "100"]).status.success());
    assert_ne!(sddekit_cli::body(&a), sddekit_cli::body(&read()));
}

#[test]
fn unknown_model_fails_with_its_id() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &SIMULATE.replace("linear-delay", "wiggly-model"));
    let o = run(dir.path(), &cfg, &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("wiggly-model"), "{}", stderr(&o));
}

#[test]
fn config_violations_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (SIMULATE.replace("x = 1.0", "x = 1.0\nq = 2.0"), "q"),
        (SIMULATE.replace("kappa0 = 0.0", "kappa9 = 0.0"), "kappa9"),
        (SIMULATE.replace("horizon = 3.0", "horizon = 3.005"), "grid"),
        (SIMULATE.to_string() + "[estimator]\nlambda = 1.0\n", "estimator.lambda"),
    ];
    for (text, name) in cases {
        let cfg = write_config(dir.path(), "bad.toml", &text);
        let o = run(dir.path(), &cfg, &[]);
        assert!(!o.status.success());
        assert!(stderr(&o).contains(name), "expected `{name}` in {}", stderr(&o));
    }
    let o = sddekit(&["run", "/definitely/not/here.toml"]);
    assert!(!o.status.success());
}

#[test]
fn shipped_configs_load() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let cfg = sddekit_cli::load(&fs::read_to_string(&p).unwrap());
        assert!(cfg.is_ok(), "{}: {:?}", p.display(), cfg.err());
        n += 1;
    }
    assert_eq!(n, 7);
}
