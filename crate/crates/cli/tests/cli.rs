use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ept_core::denoise::center_project;
use ept_core::molio::{parse_xyz, parse_xyz_frames};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn ept(args: &[&str]) -> Output {
    ept_env(args, &[])
}

fn ept_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ept"));
    cmd.args(args).env_remove("EPT_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Shards of the four fixtures in `dir/shards`.
fn shards(dir: &Path) -> PathBuf {
    let out = dir.join("shards");
    let o = ept(&[
        "preprocess",
        &fixture("methane.xyz"),
        &fixture("h2o.xyz"),
        &fixture("ethanol.sdf"),
        &fixture("tripeptide.pdb"),
        "--out",
        &s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn shard_glob(dir: &Path) -> String {
    format!("{}/*.eptg", dir.display())
}

/// Metrics rows without the wall-clock column.
fn deterministic_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

const TINY_RUN: [&str; 8] = ["--profile", "tiny", "--sigma-t", "0.3", "--sigma-r", "0.3", "--max-vertices", "40"];

fn pretrain(shards: &Path, out: &Path, extra: &[&str]) -> Output {
    let glob = shard_glob(shards);
    let out = s(out);
    let mut args = vec!["pretrain", glob.as_str(), "--out", out.as_str()];
    args.extend(TINY_RUN);
    args.extend(extra);
    ept(&args)
}

#[test]
fn small_molecules_have_only_intra_block_edges() {
    let dir = tempfile::tempdir().unwrap();
    let o = ept(&["preprocess", &fixture("methane.xyz"), &fixture("h2o.xyz"), "--out", &s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("graphs 2 "), "{text}");
    assert!(text.contains("edge types 0:26 1:0 2:0"), "{text}");
    assert!(dir.path().join("shard-00000.eptg").exists());
    assert!(dir.path().join("manifest.toml").exists());
}

#[test]
fn tripeptide_has_topological_edges() {
    let dir = tempfile::tempdir().unwrap();
    let o = ept(&["preprocess", &fixture("tripeptide.pdb"), "--out", &s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("graphs 1 (small molecules 0, proteins 1)"), "{text}");
    let types = text.lines().find(|l| l.starts_with("edge types")).unwrap();
    let topo: usize = types.split_whitespace().find_map(|t| t.strip_prefix("1:")).unwrap().parse().unwrap();
    assert!(topo > 0, "{types}");
}

#[test]
fn empty_glob_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = format!("{}/*.xyz", dir.path().display());
    let o = ept(&["preprocess", &pattern, "--out", &s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no inputs"), "{}", stderr(&o));
}

#[test]
fn unparseable_inputs_are_reported_and_all_failing_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.xyz");
    fs::write(&bad, "3\nbroken\nC 0 0 0\n").unwrap();
    let o = ept(&["preprocess", &s(&bad), "--out", &s(&dir.path().join("a"))]);
    assert_eq!(code(&o), 2);
    let o = ept(&["preprocess", &s(&bad), &fixture("h2o.xyz"), "--out", &s(&dir.path().join("b"))]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("skipped"), "{}", stderr(&o));
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(code(&ept(&["verify", "--out", "x", "--bogus"])), 1);
    assert_eq!(code(&ept(&["frobnicate"])), 1);
    assert_eq!(code(&ept(&["--help"])), 0);
}

#[test]
fn one_epoch_smoke_run_writes_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let sh = shards(dir.path());
    let out = dir.path().join("run");
    let o = pretrain(&sh, &out, &["--epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let checkpoints: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".ept"))
        .collect();
    assert_eq!(checkpoints.len(), 1);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,lr,loss,loss_T,loss_R,grad_norm,wall_ms\n"));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("command = \"pretrain\"") && manifest.contains("[config.train]"), "{manifest}");
}

#[test]
fn outputs_are_not_clobbered_without_overwrite_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let sh = shards(dir.path());
    let out = dir.path().join("run");
    assert_eq!(code(&pretrain(&sh, &out, &["--epochs", "2"])), 0);
    let first = deterministic_rows(&out.join("metrics.csv"));
    let refused = pretrain(&sh, &out, &["--epochs", "2"]);
    assert_eq!(code(&refused), 1);
    assert!(stderr(&refused).contains("--overwrite"), "{}", stderr(&refused));
    assert_eq!(code(&pretrain(&sh, &out, &["--epochs", "2", "--overwrite"])), 0);
    assert_eq!(deterministic_rows(&out.join("metrics.csv")), first);
}

#[test]
fn resume_continues_the_step_counter_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let sh = shards(dir.path());
    let full = dir.path().join("full");
    assert_eq!(code(&pretrain(&sh, &full, &["--epochs", "3", "--checkpoint-every", "1"])), 0);
    let all = deterministic_rows(&full.join("metrics.csv"));
    let ck = full.join("checkpoint-epoch-0001.ept");
    assert!(ck.exists());

    let resumed = dir.path().join("resumed");
    let o = ept(&["pretrain", &shard_glob(&sh), "--out", &s(&resumed), "--resume", &s(&ck)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tail = deterministic_rows(&resumed.join("metrics.csv"));
    assert!(!tail.is_empty());
    assert_eq!(tail[..], all[all.len() - tail.len()..]);
    let steps_before: u64 = all[all.len() - tail.len() - 1].split(',').next().unwrap().parse().unwrap();
    let first_resumed: u64 = tail[0].split(',').next().unwrap().parse().unwrap();
    assert_eq!(first_resumed, steps_before + 1);

    let with_flags = ept(&["pretrain", &shard_glob(&sh), "--out", &s(&resumed), "--resume", &s(&ck), "--lr", "0.1"]);
    assert_eq!(code(&with_flags), 1);
}

#[test]
fn atom_mode_runs_on_protein_shards() {
    let dir = tempfile::tempdir().unwrap();
    let sh = dir.path().join("prot");
    assert_eq!(code(&ept(&["preprocess", &fixture("tripeptide.pdb"), "--out", &s(&sh)])), 0);
    let o = pretrain(&sh, &dir.path().join("run"), &["--epochs", "1", "--mode", "atom"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn seed_environment_overrides_config_and_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let sh = shards(dir.path());
    let run = |name: &str, seed_env: Option<&str>, extra: &[&str]| {
        let out = dir.path().join(name);
        let glob = shard_glob(&sh);
        let out_s = s(&out);
        let mut args = vec!["pretrain", glob.as_str(), "--out", out_s.as_str(), "--epochs", "1"];
        args.extend(TINY_RUN);
        args.extend(extra);
        let env: Vec<(&str, &str)> = seed_env.map(|v| ("EPT_SEED", v)).into_iter().collect();
        assert_eq!(code(&ept_env(&args, &env)), 0);
        (deterministic_rows(&out.join("metrics.csv")), fs::read_to_string(out.join("manifest.toml")).unwrap())
    };
    let (base, _) = run("a", None, &[]);
    let (env5, manifest) = run("b", Some("5"), &[]);
    let (env5_again, _) = run("c", Some("5"), &[]);
    let (flag5, _) = run("d", Some("9"), &["--seed", "5"]);
    assert_ne!(base, env5);
    assert_eq!(env5, env5_again);
    assert_eq!(env5, flag5);
    assert!(manifest.contains("seed = 5"), "{manifest}");
    let bad = ept_env(&["verify", "--out", &s(&dir.path().join("v")), "--only", "reductions"], &[("EPT_SEED", "x")]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn invalid_config_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let sh = shards(dir.path());
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlr = 1e-5\nmin_lr = 1e-3\n").unwrap();
    let out = dir.path().join("run");
    let o = ept(&["pretrain", &shard_glob(&sh), "--config", &s(&cfg), "--out", &s(&out)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!out.exists());
    fs::write(&cfg, "[train]\nlearning_rate = 1e-5\n").unwrap();
    assert_eq!(code(&ept(&["pretrain", &shard_glob(&sh), "--config", &s(&cfg), "--out", &s(&out)])), 1);
}

#[test]
fn config_file_values_apply_and_flags_take_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let sh = shards(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[model]\nh = 8\nh_ffn = 8\nh_edge = 4\nh_rbf = 4\nlayers = 1\nheads = 2\n[train]\nepochs = 1\nlr = 0.002\nmax_vertices = 40\n").unwrap();
    let out = dir.path().join("run");
    let o = ept(&["pretrain", &shard_glob(&sh), "--config", &s(&cfg), "--lr", "0.003", "--out", &s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("lr = 0.003") && manifest.contains("layers = 1"), "{manifest}");
}

#[test]
fn finetune_fits_atom_counts_and_checks_labels() {
    let dir = tempfile::tempdir().unwrap();
    let sh = shards(dir.path());
    let glob = shard_glob(&sh);
    let out = dir.path().join("ft");
    let mut args = vec!["finetune", glob.as_str(), "--out"];
    let out_s = s(&out);
    args.push(&out_s);
    args.extend(TINY_RUN);
    args.extend(["--epochs", "2", "--pool", "atom"]);
    let o = ept(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("mae"), "{}", stdout(&o));
    let labels = dir.path().join("labels.txt");
    fs::write(&labels, "1\n2\n").unwrap();
    let labels_s = s(&labels);
    let mismatch = ept(&["finetune", glob.as_str(), "--out", &s(&dir.path().join("ft2")), "--labels", &labels_s, "--profile", "tiny"]);
    assert_eq!(code(&mismatch), 2);
}

#[test]
fn verify_filter_report_and_injected_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = ept(&["verify", "--profile", "tiny", "--only", "igso3", "--out", &s(&out)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let report = fs::read_to_string(out.join("verify.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("name,status,value,tolerance,seed,ms"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty() && rows.iter().all(|l| l.starts_with("igso3.") && l.contains(",pass,")), "{report}");

    let bad = ept(&["verify", "--only", "kernel", "--inject", "skip-rescale", "--out", &s(&dir.path().join("w"))]);
    assert_eq!(code(&bad), 3);
    assert!(stderr(&bad).contains("kernel"), "{}", stderr(&bad));
    assert!(fs::read_to_string(dir.path().join("w/verify.csv")).unwrap().contains("kernel,fail"));
    assert_eq!(code(&ept(&["verify", "--only", "bogus", "--out", &s(&dir.path().join("x"))])), 1);
}

fn sample(input: &str, out: &Path, mode: &str, sigma_t: &str, sigma_r: &str, n: &str) -> Output {
    ept(&["sample-noise", input, "--mode", mode, "--sigma-t", sigma_t, "--sigma-r", sigma_r, "--n", n, "--out", &s(out)])
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[test]
fn zero_frames_give_a_header_only_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = sample(&fixture("methane.xyz"), dir.path(), "block-C", "0.1", "0.1", "0");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.path().join("targets.csv")).unwrap(), "frame,kind,index,x,y,z\n");
    assert_eq!(fs::read_to_string(dir.path().join("frames.xyz")).unwrap(), "");
}

#[test]
fn block_complete_frames_keep_methane_rigid() {
    let dir = tempfile::tempdir().unwrap();
    let o = sample(&fixture("methane.xyz"), dir.path(), "block-C", "0.2", "0.5", "8");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let clean = parse_xyz(&fs::read_to_string(fixture("methane.xyz")).unwrap()).unwrap();
    let frames = parse_xyz_frames(&fs::read_to_string(dir.path().join("frames.xyz")).unwrap()).unwrap();
    assert_eq!(frames.len(), 8);
    let mut moved = false;
    for f in &frames {
        for h in 1..5 {
            let err = (dist(&f.coords[0], &f.coords[h]) - dist(&clean.coords[0], &clean.coords[h])).abs();
            assert!(err <= 1e-12, "C-H drift {err}");
        }
        moved |= f.coords != frames[0].coords;
    }
    assert!(moved);
    let targets = fs::read_to_string(dir.path().join("targets.csv")).unwrap();
    assert!(targets.contains(",omega,0,") && targets.contains(",score,0,") && targets.contains(",eps_block,0,"));
}

#[test]
fn zero_noise_frames_equal_the_centered_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("ethanol.sdf");
    let text = fs::read_to_string(&input).unwrap();
    let clean = center_project(&ept_core::molio::parse_sdf_subset(&text).unwrap().coords);
    let o = sample(&input, &dir.path().join("atom"), "atom", "0", "0", "2");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in parse_xyz_frames(&fs::read_to_string(dir.path().join("atom/frames.xyz")).unwrap()).unwrap() {
        assert_eq!(f.coords, clean);
    }
    assert_eq!(code(&sample(&input, &dir.path().join("c"), "block-C", "0", "0", "2")), 0);
    for f in parse_xyz_frames(&fs::read_to_string(dir.path().join("c/frames.xyz")).unwrap()).unwrap() {
        let err = f.coords.iter().zip(&clean).flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs())).fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");
    }
}

#[test]
fn invalid_noise_mode_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sample(&fixture("methane.xyz"), dir.path(), "block-X", "0.1", "0.1", "1");
    assert_eq!(code(&o), 1);
}

fn write_metrics(dir: &Path, rows: &[&str]) -> PathBuf {
    let p = dir.join("metrics.csv");
    let mut text = String::from("step,lr,loss,loss_T,loss_R,grad_norm,wall_ms\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn two_row_report_plots_two_points() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_metrics(dir.path(), &["1,0.1,3,2,1,0.5,1.0", "2,0.05,2,1,1,0.5,1.0"]);
    let out = dir.path().join("plots");
    let o = ept(&["report", &s(&m), "--out", &s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["loss.svg", "lr.svg"] {
        let svg = fs::read_to_string(out.join(name)).unwrap();
        assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}

#[test]
fn monotone_series_reports_min_equal_to_last() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_metrics(dir.path(), &["1,0.1,5,2,1,0.5,1.0", "2,0.1,4,2,1,0.5,1.0", "3,0.1,2.5,2,1,0.5,1.0"]);
    let o = ept(&["report", &s(&m), "--out", &s(&dir.path().join("p"))]);
    let text = stdout(&o);
    assert!(text.contains("last loss 2.5 at step 3") && text.contains("min loss 2.5 at step 3"), "{text}");
    assert!(text.contains("first loss 5 at step 1"), "{text}");
}

#[test]
fn malformed_header_names_the_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "step,lr,loss,loss_T,grad_norm,wall_ms\n1,0.1,3,2,0.5,1.0\n").unwrap();
    let o = ept(&["report", &s(&p), "--out", &s(&dir.path().join("p"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("loss_R"), "{}", stderr(&o));
}

#[test]
fn report_of_a_real_run() {
    let dir = tempfile::tempdir().unwrap();
    let sh = shards(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&pretrain(&sh, &run, &["--epochs", "2"])), 0);
    let plots = dir.path().join("plots");
    let o = ept(&["report", &s(&run.join("metrics.csv")), "--out", &s(&plots)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(plots.join("loss.svg").exists());
    assert_eq!(code(&ept(&["report", &s(&run.join("metrics.csv")), "--out", &s(&run)])), 1);
}
