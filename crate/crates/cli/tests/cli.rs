use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn aliasfree(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aliasfree"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("ALIASFREE_OUT")
        .output()
        .unwrap()
}

fn run_dir(o: &Output) -> PathBuf {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout.clone()).unwrap().trim())
}

fn corpus(out: &Path) -> PathBuf {
    run_dir(&aliasfree(out, &["gen-corpus", "--seed", "2", "--set", "count=3", "--set", "duration=0.1"]))
}

#[test]
fn gen_corpus_writes_clips_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = corpus(tmp.path());
    let manifest = fs::read_to_string(dir.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    assert!(manifest.starts_with("file,noisy_file,kind,freq_hz,level_db,snr_db\n"));
    for i in 0..3 {
        assert!(dir.join(format!("clip{i:05}.wav")).is_file());
        assert!(dir.join(format!("clip{i:05}_noisy.wav")).is_file());
    }
    let resolved = fs::read_to_string(dir.join("config.resolved")).unwrap();
    assert!(resolved.contains("count = 3") && resolved.contains("seed = 2"));
}

#[test]
fn config_file_and_env_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "seed = 4\n[corpus]\ncount = 2\nduration = 0.05\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_aliasfree"))
        .args(["gen-corpus", "--config"])
        .arg(&cfg)
        .env("ALIASFREE_OUT", tmp.path().join("envroot"))
        .output()
        .unwrap();
    let dir = run_dir(&o);
    assert!(dir.starts_with(tmp.path().join("envroot")));
    let resolved = fs::read_to_string(dir.join("config.resolved")).unwrap();
    assert!(resolved.contains("count = 2") && resolved.contains("seed = 4"));
}

#[test]
fn train_then_probe_metrics_and_bench_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let c = c.to_str().unwrap();
    let t = run_dir(&aliasfree(
        tmp.path(),
        &["train", "--set", "task=ha", "--set", &format!("corpus={c}"), "--set", "epochs=2", "--set", "frame_len=500", "--set", "model.H=4"],
    ));
    let ckpt = t.join("model.ckpt");
    assert!(ckpt.is_file());
    let log = fs::read_to_string(t.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let ck = format!("checkpoint={}", ckpt.display());

    let p = run_dir(&aliasfree(tmp.path(), &["probe", "--set", "system=checkpoint", "--set", &ck, "--set", "probes=tone,step"]));
    for f in ["tone.report.txt", "tone.spectrum.csv", "step.report.txt", "step.spectrum.csv"] {
        assert!(p.join(f).is_file(), "{f}");
    }
    let m = run_dir(&aliasfree(tmp.path(), &["metrics", "--set", &format!("corpus={c}"), "--set", &ck, "--set", "levels=60,70"]));
    let nrmse = fs::read_to_string(m.join("nrmse.csv")).unwrap();
    assert_eq!(nrmse.lines().count(), 3);
    assert!(nrmse.starts_with("level_db,unprocessed,processed\n"));
    let b = run_dir(&aliasfree(tmp.path(), &["bench", "--set", &ck, "--set", "n_frames=2"]));
    assert!(fs::read_to_string(b.join("bench.txt")).unwrap().contains("rtf = "));
}

#[test]
fn builtin_probe_systems() {
    let tmp = tempfile::tempdir().unwrap();
    for sys in ["identity", "dconnear", "baseline:transposed", "baseline:subpixel", "baseline:nearest"] {
        let d = run_dir(&aliasfree(tmp.path(), &["probe", "--set", &format!("system={sys}"), "--set", "duration=0.1"]));
        for p in ["tone", "step", "aliasing", "imaging"] {
            assert!(d.join(format!("{p}.report.txt")).is_file(), "{sys} {p}");
        }
    }
}

#[test]
fn config_errors_exit_one_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--set", "task=bogus"][..],
        &["probe", "--set", "system=bogus"],
        &["probe", "--set", "probes=tone,bogus"],
        &["bench", "--set", "preset=bogus"],
        &["metrics", "--set", "corpus=x", "--set", "profile=NoSuchProfile"],
        &["gen-corpus", "--set", "bogus.key=1"],
        &["gen-corpus", "--set", "count=-3"],
        &["train", "--no-such-flag"],
    ] {
        let o = aliasfree(tmp.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
    let o = aliasfree(tmp.path(), &["train", "--set", "task=bogus"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("emulator, ha, se"));
}

#[test]
fn missing_files_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let nope = tmp.path().join("nope");
    for args in [
        vec!["train".to_string(), "--set".into(), "task=ha".into(), "--set".into(), format!("corpus={}", nope.display())],
        vec!["probe".into(), "--set".into(), "system=checkpoint".into(), "--set".into(), format!("checkpoint={}", nope.display())],
        vec!["bench".into(), "--set".into(), format!("checkpoint={}", nope.display())],
    ] {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = aliasfree(tmp.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    }
}

#[test]
fn help_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_aliasfree")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gen-corpus"));
}
