use std::process::{Command, Output};

fn ccdtwin(args: &[&str], out: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccdtwin"))
        .args(args)
        .env("CCDTWIN_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ccdtwin(&["--help"], dir.path())), 0);
    assert_eq!(code(&ccdtwin(&["--version"], dir.path())), 0);
    assert_eq!(code(&ccdtwin(&["fly"], dir.path())), 1);
    assert_eq!(code(&ccdtwin(&["train", "--generation", "x", "--plant", "illustrative"], dir.path())), 1);
}

#[test]
fn dry_run_prints_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccdtwin(&["pretrain", "--plant", "suspension", "--seed", "9", "--dry-run"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("seed = 9"), "{text}");
    assert!(text.contains("suspension"));
    // Nothing is written.
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

    // The printed config loads back.
    let path = dir.path().join("c.toml");
    std::fs::write(&path, &text).unwrap();
    let o = ccdtwin(&["train", "--config", path.to_str().unwrap(), "--dry-run"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), text);
}

#[test]
fn configuration_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // No config source at all.
    assert_eq!(code(&ccdtwin(&["pretrain"], dir.path())), 1);
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[plant]\nkind = \"illustrative\"\n[ppo]\nepoch = 3\n").unwrap();
    let o = ccdtwin(&["pretrain", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8(o.stderr).unwrap().contains("epoch"));
    assert_eq!(code(&ccdtwin(&["pretrain", "--plant", "illustrative", "--workers", "0", "--dry-run"], dir.path())), 1);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = ccdtwin(&["lifecycle", "--plant", "illustrative"], &out);
    assert_eq!(code(&o), 3);
    assert!(!out.exists(), "a refused lifecycle must not create the run directory");
    assert_eq!(code(&ccdtwin(&["report"], &out)), 3);
    assert_eq!(code(&ccdtwin(&["deploy", "--plant", "illustrative"], &out)), 3);
}
