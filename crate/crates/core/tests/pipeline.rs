use std::path::Path;

use ccdtwin::config::{ExperimentConfig, StartsConfig};
use ccdtwin::lifecycle::{
    eval_name, gen_name, load_agent, load_design, run_lifecycle, run_step0, run_step1, trajectory_file, Comparison,
    EntryKind, Registry, Scenario, COMPARISON_FILE, SIGMA_FILE,
};
use ccdtwin::report::{write_report, REPORT_DIR, RETURNS_TABLE, SIGMA_TABLE};

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::illustrative();
    cfg.seed = 3;
    cfg.starts = StartsConfig::FeasiblePool {
        size: 60,
        input_fraction: 0.85,
    };
    cfg.pretrain.samples = 60;
    cfg.pretrain.epochs = 30;
    cfg.ppo.epochs = 5;
    cfg.lifecycle.deploy_episodes = 30;
    cfg.lifecycle.eval_rollouts = 20;
    cfg.lifecycle.nominal_eval_rollouts = 20;
    cfg
}

fn lifecycle(dir: &Path, cfg: &ExperimentConfig) -> (Registry, Comparison) {
    let sc = Scenario::build(cfg).unwrap();
    let mut reg = Registry::open_or_create(&dir.join("registry")).unwrap();
    let cmp = run_lifecycle(&sc, &mut reg, 2).unwrap();
    (reg, cmp)
}

/// Population standard deviation of the last `w` entries, written out
/// independently of the library.
fn tail_std(v: &[f64], w: usize) -> f64 {
    let t = &v[v.len() - w..];
    let m = t.iter().sum::<f64>() / w as f64;
    (t.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / w as f64).sqrt()
}

#[test]
fn lifecycle_registry_evaluation_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (reg, cmp) = lifecycle(dir.path(), &tiny());
    reg.verify().unwrap();

    let kinds: Vec<(String, EntryKind)> = reg.entries().iter().map(|e| (e.name.clone(), e.kind)).collect();
    assert_eq!(kinds.first().unwrap(), &("gen-0".to_string(), EntryKind::Pretrained));
    assert_eq!(kinds.last().unwrap(), &(eval_name(2), EntryKind::Evaluation));
    assert!(reg.contains("gen-2") && reg.contains("deploy-1") && reg.contains("uq-1"));
    // Generation 2 descends from generation 1 through the fitted model.
    assert!(reg.get("gen-2").unwrap().parent.is_some());

    assert_eq!(cmp.generations.iter().map(|g| g.name.as_str()).collect::<Vec<_>>(), ["gen-0", "gen-1", "gen-2"]);
    for g in &cmp.generations {
        assert!(g.mean.is_finite() && g.std >= 0.0 && g.rollouts == 20);
        assert!(g.design.iter().all(|p| (0.5..=2.0).contains(p)));
    }
    let stored: Comparison = serde_json::from_str(&reg.read_string(&eval_name(2), COMPARISON_FILE).unwrap()).unwrap();
    assert_eq!(stored, cmp);

    // σ_ss recomputed from an exported trajectory.
    let w = cmp.steady_window;
    for cond in 1..=cmp.canonical_states.len() {
        let bytes = reg.read(&eval_name(2), &trajectory_file("gen-2", cond)).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows[0][1].parse::<f64>().unwrap(), cmp.canonical_states[cond - 1][0]);
        // Visited states exclude the initial row; inputs exclude the final one.
        let x1: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
        let u: Vec<f64> = rows[..rows.len() - 1].iter().map(|r| r[3].parse().unwrap()).collect();
        let want_x = tail_std(&x1, w.min(x1.len()));
        let want_u = tail_std(&u, w.min(u.len()));
        let got_x = cmp.sigma(cond, "x1", "gen-2").unwrap();
        let got_u = cmp.sigma(cond, "u", "gen-2").unwrap();
        assert!((got_x - want_x).abs() <= 1e-9 * want_x.max(1.0), "{got_x} vs {want_x}");
        assert!((got_u - want_u).abs() <= 1e-9 * want_u.max(1.0), "{got_u} vs {want_u}");
    }
    assert!(reg.has_file(&eval_name(2), SIGMA_FILE));

    let summary = write_report(&reg, dir.path()).unwrap();
    assert!(summary.is_complete(), "{:?}", summary.missing);
    let table = std::fs::read_to_string(dir.path().join(REPORT_DIR).join(RETURNS_TABLE)).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.contains("gen-1") && header.contains("gen-2") && !header.contains("gen-0"));
    assert!(dir.path().join(REPORT_DIR).join(SIGMA_TABLE).exists());

    // Rewriting the report changes nothing.
    let first = std::fs::read(dir.path().join(REPORT_DIR).join(RETURNS_TABLE)).unwrap();
    write_report(&reg, dir.path()).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join(REPORT_DIR).join(RETURNS_TABLE)).unwrap());

    // Resuming a finished lifecycle commits nothing new.
    let before = reg.entries().len();
    let (again, _) = lifecycle(dir.path(), &tiny());
    assert_eq!(again.entries().len(), before);
}

#[test]
fn report_marks_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::build(&tiny()).unwrap();
    let mut reg = Registry::open_or_create(&dir.path().join("registry")).unwrap();
    run_step0(&sc, &mut reg).unwrap();
    let summary = write_report(&reg, dir.path()).unwrap();
    assert!(!summary.is_complete());
    let names: Vec<&str> = summary.missing.iter().map(|(f, _)| f.as_str()).collect();
    assert!(names.contains(&RETURNS_TABLE), "{names:?}");
    for (file, _) in &summary.missing {
        assert!(dir.path().join(REPORT_DIR).join(format!("{file}.MISSING")).exists());
    }
}

#[test]
fn zero_training_epochs_keep_the_pretrained_agent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.ppo.epochs = 0;
    let sc = Scenario::build(&cfg).unwrap();
    let mut reg = Registry::open_or_create(&dir.path().join("registry")).unwrap();
    run_step0(&sc, &mut reg).unwrap();
    run_step1(&sc, &mut reg).unwrap();
    let (a0, a1) = (load_agent(&reg, &gen_name(0)).unwrap(), load_agent(&reg, &gen_name(1)).unwrap());
    assert_eq!(serde_json::to_string(&a0.to_document()).unwrap(), serde_json::to_string(&a1.to_document()).unwrap());
    assert_eq!(
        load_design(&sc, &reg, &gen_name(0)).unwrap().values(),
        load_design(&sc, &reg, &gen_name(1)).unwrap().values()
    );
}
