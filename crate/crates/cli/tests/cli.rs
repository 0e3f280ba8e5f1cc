use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn relaylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relaylab")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(path: &Path, out_dir: &Path) {
    fs::write(
        path,
        format!(
            "grid = 16\ndt = 0.02\nrecord_interval = 0.2\nspinup_time = 0.4\n\n[generate]\nnu = 1e-3\ncount = 3\nn_frames = 4\nout_dir = {}\n",
            out_dir.display()
        ),
    )
    .unwrap();
}

#[test]
fn generate_is_reproducible_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.cfg");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    write_config(&cfg, &a);
    let o = relaylab(&["generate", "--config", cfg.to_str().unwrap(), "--seed", "7", "--workers", "1", "--deterministic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("generated 3 trajectories") && stdout.contains("config_hash "));

    write_config(&cfg, &b);
    let o = relaylab(&["generate", "--config", cfg.to_str().unwrap(), "--seed", "7", "--workers", "3", "--deterministic"]);
    assert!(o.status.success(), "{}", stderr(&o));

    for name in ["traj_000000.vrt", "traj_000001.vrt", "traj_000002.vrt", "manifest.tsv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let echo = fs::read_to_string(a.join("resolved.cfg")).unwrap();
    assert!(echo.contains("seed = 7") && echo.contains("deterministic = true") && echo.contains("workers = 1"));
    let manifest = fs::read_to_string(a.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().next().unwrap(), "0\t7\ttraj_000000.vrt");
}

#[test]
fn failures_exit_nonzero_with_a_parsable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "[generate]\nout_dir = x\ncolour = blue\n").unwrap();
    let o = relaylab(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr(&o);
    assert!(line.starts_with("error kind=config command=generate message="), "{line}");
    assert!(line.contains("line 3") && line.contains("colour"), "{line}");
    assert!(!tmp.path().join("x").exists());

    let o = relaylab(&[
        "evaluate",
        "--set",
        "source_manifest=/nonexistent/manifest.tsv",
        "--set",
        "eval_manifests=/nonexistent/eval.tsv",
        "--set",
        &format!("out_dir={}", tmp.path().join("out").display()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=missing_input command=evaluate"), "{}", stderr(&o));

    let o = relaylab(&["export-csv", "--set", "novalue"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=invalid_argument"), "{}", stderr(&o));

    let o = relaylab(&["no-such-command"]);
    assert!(!o.status.success());
}

#[test]
fn evaluation_leaves_inputs_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let common = ["--set", "grid=16", "--set", "dt=0.02", "--set", "record_interval=0.2", "--set", "spinup_time=0.2"];
    let gen = |nu: &str, first: &str, dir: &str| {
        let mut args = vec!["generate"];
        args.extend(common);
        let out = format!("out_dir={}", root.join(dir).display());
        let nu = format!("nu={nu}");
        let first = format!("first_id={first}");
        args.extend(["--set", &nu, "--set", "count=3", "--set", &first, "--set", &out]);
        let o = relaylab(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    gen("1e-3", "0", "source");
    gen("1e-4", "100", "eval");

    let source = root.join("source");
    let before: Vec<(String, Vec<u8>)> = fs::read_dir(&source)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    // Read-only inputs: any write attempt would fail for unprivileged users.
    for e in fs::read_dir(&source).unwrap() {
        let p = e.unwrap().path();
        let mut perm = fs::metadata(&p).unwrap().permissions();
        perm.set_readonly(true);
        fs::set_permissions(&p, perm).unwrap();
    }

    let o = relaylab(&[
        "evaluate",
        "--set",
        &format!("source_manifest={}", source.join("manifest.tsv").display()),
        "--set",
        &format!("eval_manifests={}", root.join("eval/manifest.tsv").display()),
        "--set",
        "methods=persistence,knn-copy,raw-relay",
        "--set",
        "n_boot=50",
        "--set",
        &format!("out_dir={}", root.join("results").display()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("results/records.csv").exists());

    let mut after: Vec<(String, Vec<u8>)> = fs::read_dir(&source)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    let mut before = before;
    before.sort();
    after.sort();
    assert_eq!(before, after);
}
