use crate::run::{load_doc, Overrides, RunDir};
use aliasfree::analysis::{
    aliasing_probe, excitation_pattern, fiber_system, imaging_probe, population_nrmse, rate_level_curve, rtf_bench,
    step_probe, synchrony_level, tone_probe, StridedStack, System, RTF_FRAME_LEN, RTF_N_FRAMES,
};
use aliasfree::arch::{load_model, save_model, Model, ModelConfig, ModelSpec, Network};
use aliasfree::auditory::{AuditoryChain, CfGrid, Cochlea, HearingProfile, TRAIN_CFS};
use aliasfree::corpus::{generate_corpus, manifest_csv, CorpusConfig};
use aliasfree::error::{Error, Result};
use aliasfree::kv::{parse_list, KvDoc};
use aliasfree::signal::wav::{read_wav, write_wav};
use aliasfree::signal::{scale_to_spl, AudioBuffer, DEFAULT_SAMPLE_RATE as FS};
use aliasfree::train::{train_emulator, train_ha_closed_loop, train_se_closed_loop, EmulatorTarget, TrainConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const TASKS: [&str; 3] = ["emulator", "ha", "se"];
const TARGETS: [&str; 4] = ["identity", "cochlea", "ihc", "anf"];
const PROBES: [&str; 4] = ["tone", "step", "aliasing", "imaging"];
const PRESETS: [&str; 5] = ["toy", "cochlear", "ihc", "anf", "hearing_aid"];

fn missing(path: &Path, what: &str) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found: {}", path.display())))
}

/// Clean and noisy clips listed in `<dir>/manifest.csv`.
pub fn load_corpus(dir: &Path) -> Result<Vec<(AudioBuffer, AudioBuffer)>> {
    let manifest = dir.join("manifest.csv");
    if !manifest.is_file() {
        return Err(missing(&manifest, "corpus manifest"));
    }
    let mut rd = csv::Reader::from_path(&manifest).map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
    let headers = rd.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{} has no '{name}' column", manifest.display())))
    };
    let (clean, noisy) = (col("file")?, col("noisy_file")?);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
        out.push((read_wav(dir.join(&rec[clean]))?, read_wav(dir.join(&rec[noisy]))?));
    }
    Ok(out)
}

pub fn gen_corpus(o: &Overrides, root: &Path) -> Result<PathBuf> {
    let doc = load_doc(o, "corpus")?;
    let cfg = CorpusConfig::read_kv(&doc, "corpus", &[])?;
    let items = generate_corpus(&cfg)?;
    let mut resolved = KvDoc::default();
    cfg.write_kv(&mut resolved, "corpus");
    let run = RunDir::create(root, "gen-corpus", &resolved)?;
    for it in &items {
        write_wav(run.file(&format!("{}.wav", it.stem())), &it.clean)?;
        write_wav(run.file(&format!("{}_noisy.wav", it.stem())), &it.noisy)?;
    }
    run.write("manifest.csv", manifest_csv(&items, cfg.level_db))?;
    Ok(run.path)
}

fn one_of(value: &str, allowed: &[&str], what: &str) -> Result<()> {
    if allowed.contains(&value) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown {what} '{value}' (valid: {})", allowed.join(", "))))
    }
}

/// Sets each default the config leaves unset. Skipped entirely when `kind` names a different model.
fn fill_defaults(doc: &mut KvDoc, section: &str, defaults: &[(&str, String)]) {
    let kind = defaults.iter().find(|(k, _)| *k == "kind").map(|(_, v)| v.as_str());
    if let (Some(want), Some(have)) = (kind, doc.get(section, "kind")) {
        if want != have {
            return;
        }
    }
    for (k, v) in defaults {
        if doc.get(section, k).is_none() {
            doc.set(section, k, v);
        }
    }
}

fn closed_loop_model_defaults() -> Vec<(&'static str, String)> {
    [("kind", "dconnear"), ("M", "4"), ("R", "1"), ("K1", "16"), ("K2", "16"), ("H", "16"), ("L_l", "128"), ("L_r", "128"), ("passthrough", "true")]
        .iter()
        .map(|(k, v)| (*k, v.to_string()))
        .collect()
}

fn profile(doc: &KvDoc, section: &str, key: &str, default: &str) -> Result<(String, HearingProfile)> {
    let name: String = doc.parsed_or(section, key, default.to_string())?;
    let p = HearingProfile::resolve(&name)?;
    Ok((name, p))
}

pub fn train(o: &Overrides, root: &Path) -> Result<PathBuf> {
    let mut doc = load_doc(o, "train")?;
    let s = "train";
    let task: String = doc
        .get(s, "task")
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("missing required key 'task' (valid tasks: {})", TASKS.join(", "))))?;
    one_of(&task, &TASKS, "task")?;
    let extra = ["task", "corpus", "target", "cfs", "profile", "nh_profile"];
    let cfg = TrainConfig::read_kv(&doc, s, &extra)?;
    let corpus: PathBuf = doc.required::<String>(s, "corpus")?.into();
    let cfs: usize = doc.parsed_or(s, "cfs", TRAIN_CFS)?;
    let grid = CfGrid::standard(cfs, FS)?;

    let mut resolved = KvDoc::default();
    resolved.set(s, "task", &task);
    resolved.set(s, "corpus", corpus.display());
    resolved.set(s, "cfs", cfs);
    match task.as_str() {
        "emulator" => {
            let target: String = doc.parsed_or(s, "target", "cochlea".to_string())?;
            one_of(&target, &TARGETS, "target")?;
            resolved.set(s, "target", &target);
            let (pname, _) = profile(&doc, s, "profile", "NH")?;
            resolved.set(s, "profile", pname);
            let mut d = vec![("kind", "dconnear".to_string())];
            match target.as_str() {
                "cochlea" => d.push(("C_out", cfs.to_string())),
                "anf" => d = vec![("kind", "anf".into()), ("R", "2".into()), ("act_hidden", "relu".into()), ("act_out", "relu".into())],
                _ => {}
            }
            fill_defaults(&mut doc, "model", &d);
        }
        "ha" => {
            let (n, _) = profile(&doc, s, "nh_profile", "NH")?;
            let (h, _) = profile(&doc, s, "profile", "Slope35-7,0,0")?;
            resolved.set(s, "nh_profile", n);
            resolved.set(s, "profile", h);
            fill_defaults(&mut doc, "model", &closed_loop_model_defaults());
        }
        _ => {
            let (n, _) = profile(&doc, s, "nh_profile", "NH")?;
            resolved.set(s, "nh_profile", n);
            fill_defaults(&mut doc, "model", &closed_loop_model_defaults());
        }
    }
    cfg.write_kv(&mut resolved, s);
    let model_cfg = ModelConfig::read_kv(&doc, "model", &[])?;
    model_cfg.write_kv(&mut resolved, "model");
    let mut model = model_cfg.build(cfg.seed)?;

    let clips = load_corpus(&corpus)?;
    let run = RunDir::create(root, "train", &resolved)?;
    let mut log = match task.as_str() {
        "emulator" => {
            let (_, p) = profile(&resolved, s, "profile", "NH")?;
            let cochlea = Cochlea::new(&grid, &p, FS);
            let target = match resolved.get(s, "target").unwrap_or("cochlea") {
                "identity" => EmulatorTarget::Identity,
                "ihc" => EmulatorTarget::Ihc(cochlea),
                "anf" => EmulatorTarget::Anf(cochlea),
                _ => EmulatorTarget::Cochlea(cochlea),
            };
            let data: Vec<AudioBuffer> = clips.into_iter().map(|(c, _)| c).collect();
            train_emulator(&mut model, &target, &data, &cfg)?
        }
        "ha" => {
            let (_, n) = profile(&resolved, s, "nh_profile", "NH")?;
            let (_, h) = profile(&resolved, s, "profile", "Slope35-7,0,0")?;
            let nh = AuditoryChain::surrogate(&n, &grid, FS);
            let hi = AuditoryChain::surrogate(&h, &grid, FS);
            let data: Vec<AudioBuffer> = clips.into_iter().map(|(c, _)| c).collect();
            train_ha_closed_loop(&mut model, &nh, &hi, &data, &cfg)?
        }
        _ => {
            let (_, n) = profile(&resolved, s, "nh_profile", "NH")?;
            let nh = AuditoryChain::surrogate(&n, &grid, FS);
            let pairs: Vec<(AudioBuffer, AudioBuffer)> = clips.into_iter().map(|(c, n)| (n, c)).collect();
            train_se_closed_loop(&mut model, &nh, &pairs, &cfg)?
        }
    };
    let ckpt = run.file("model.ckpt");
    save_model(&ckpt, &model_cfg, &model)?;
    log.checkpoint = Some(ckpt);
    run.write("train_log.csv", log.log_csv())?;
    Ok(run.path)
}

/// A built-in name or a checkpoint, as named by `[probe] system`.
fn probe_model(doc: &mut KvDoc, system: &str, seed: u64, resolved: &mut KvDoc) -> Result<Option<Model>> {
    let model = if system == "identity" {
        None
    } else if system == "checkpoint" {
        let path: PathBuf = doc.required::<String>("probe", "checkpoint")?.into();
        if !path.is_file() {
            return Err(missing(&path, "checkpoint"));
        }
        resolved.set("probe", "checkpoint", path.display());
        Some(load_model(&path)?.1)
    } else {
        if system == "dconnear" {
            fill_defaults(doc, "model", &[("kind", "dconnear".into())]);
        } else if let Some(mode) = system.strip_prefix("baseline:") {
            fill_defaults(doc, "model", &[("kind", "autoencoder".into()), ("mode", mode.into())]);
        } else {
            return Err(Error::Config(format!(
                "unknown system '{system}' (valid: identity, dconnear, baseline:transposed, baseline:subpixel, baseline:nearest, checkpoint)"
            )));
        }
        let cfg = ModelConfig::read_kv(doc, "model", &[])?;
        cfg.write_kv(resolved, "model");
        Some(cfg.build(seed)?)
    };
    Ok(model)
}

fn model_system<'a>(name: &str, m: &'a Model) -> Result<System<'a>> {
    let s = System::model(name, m, FS);
    Ok(if m.out_channels() > 1 { s.with_cfs(CfGrid::standard(m.out_channels(), FS)?) } else { s })
}

pub fn probe(o: &Overrides, root: &Path) -> Result<PathBuf> {
    let mut doc = load_doc(o, "probe")?;
    let s = "probe";
    doc.reject_unknown(
        s,
        &["seed", "system", "checkpoint", "probes", "freq", "level", "duration", "depth", "antialias", "stack", "imaging_factor", "imaging_freq"],
    )?;
    let seed: u64 = doc.required(s, "seed")?;
    let system: String = doc.parsed_or(s, "system", "identity".to_string())?;
    let probes: Vec<String> = parse_list(doc.get(s, "probes").unwrap_or("tone,step,aliasing,imaging"))?;
    for p in &probes {
        one_of(p, &PROBES, "probe")?;
    }
    let freq: f64 = doc.parsed_or(s, "freq", 1000.0)?;
    let level: f64 = doc.parsed_or(s, "level", 70.0)?;
    let duration: f64 = doc.parsed_or(s, "duration", 0.2)?;
    let depth: usize = doc.parsed_or(s, "depth", 8)?;
    let antialias: bool = doc.parsed_or(s, "antialias", false)?;
    let stack: String = doc.parsed_or(s, "stack", "decimator".to_string())?;
    one_of(&stack, &["decimator", "random"], "stack")?;
    let factor: usize = doc.parsed_or(s, "imaging_factor", 16)?;
    let f_img: f64 = doc.parsed_or(s, "imaging_freq", 500.0)?;

    let mut resolved = KvDoc::default();
    resolved.set(s, "seed", seed);
    resolved.set(s, "system", &system);
    resolved.set(s, "probes", probes.join(","));
    for (k, v) in [("freq", freq), ("level", level), ("duration", duration)] {
        resolved.set(s, k, v);
    }
    resolved.set(s, "depth", depth);
    resolved.set(s, "antialias", antialias);
    resolved.set(s, "stack", &stack);
    resolved.set(s, "imaging_factor", factor);
    resolved.set(s, "imaging_freq", f_img);
    let model = probe_model(&mut doc, &system, seed, &mut resolved)?;
    let sys = match &model {
        Some(m) => model_system(&system, m)?,
        None => System::identity(FS),
    };

    let run = RunDir::create(root, "probe", &resolved)?;
    for p in &probes {
        let report = match p.as_str() {
            "tone" => tone_probe(&sys, freq, level, duration)?,
            "step" => step_probe(&sys, level)?,
            "aliasing" => {
                let st = if stack == "random" { StridedStack::random(depth, 4, seed) } else { StridedStack::decimators(depth) };
                aliasing_probe(&st, antialias, FS)?.0
            }
            _ => imaging_probe(&sys, factor, f_img, level)?.report,
        };
        run.write(&format!("{p}.report.txt"), report.to_text())?;
        run.write(&format!("{p}.spectrum.csv"), report.spectrum.to_csv_db())?;
    }
    Ok(run.path)
}

pub fn metrics(o: &Overrides, root: &Path) -> Result<PathBuf> {
    let doc = load_doc(o, "metrics")?;
    let s = "metrics";
    doc.reject_unknown(
        s,
        &["seed", "corpus", "checkpoint", "nh_profile", "profile", "levels", "cfs", "excitation", "rate_level", "synchrony", "physiology_cf"],
    )?;
    let corpus: PathBuf = doc.required::<String>(s, "corpus")?.into();
    let checkpoint: Option<PathBuf> = doc.get(s, "checkpoint").map(PathBuf::from);
    let (nh_name, nh_p) = profile(&doc, s, "nh_profile", "NH")?;
    let (hi_name, hi_p) = profile(&doc, s, "profile", "Slope35-7,0,0")?;
    let levels: Vec<f64> = parse_list(doc.get(s, "levels").unwrap_or("40,50,60,70"))?;
    let cfs: usize = doc.parsed_or(s, "cfs", TRAIN_CFS)?;
    let flags: Vec<bool> =
        ["excitation", "rate_level", "synchrony"].iter().map(|k| doc.parsed_or(s, k, false)).collect::<Result<_>>()?;
    let cf: f64 = doc.parsed_or(s, "physiology_cf", 1000.0)?;

    let mut resolved = KvDoc::default();
    resolved.set(s, "seed", doc.required::<u64>(s, "seed")?);
    resolved.set(s, "corpus", corpus.display());
    if let Some(c) = &checkpoint {
        resolved.set(s, "checkpoint", c.display());
    }
    resolved.set(s, "nh_profile", &nh_name);
    resolved.set(s, "profile", &hi_name);
    resolved.set(s, "levels", levels.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    resolved.set(s, "cfs", cfs);
    for (k, v) in ["excitation", "rate_level", "synchrony"].iter().zip(&flags) {
        resolved.set(s, k, v);
    }
    resolved.set(s, "physiology_cf", cf);

    let ha = match &checkpoint {
        Some(p) if !p.is_file() => return Err(missing(p, "checkpoint")),
        Some(p) => Some(load_model(p)?.1),
        None => None,
    };
    let clips = load_corpus(&corpus)?;
    if clips.is_empty() {
        return Err(Error::Config(format!("corpus {} is empty", corpus.display())));
    }
    let grid = CfGrid::standard(cfs, FS)?;
    let nh = AuditoryChain::surrogate(&nh_p, &grid, FS);
    let hi = AuditoryChain::surrogate(&hi_p, &grid, FS);
    let run = RunDir::create(root, "metrics", &resolved)?;

    let mut csv = String::from("level_db,unprocessed,processed\n");
    for &level in &levels {
        let (mut u, mut p) = (0.0, 0.0);
        for (clean, _) in &clips {
            let x = scale_to_spl(clean, level)?;
            let un = population_nrmse(&nh, &hi, None, &x)?;
            u += un;
            p += match &ha {
                Some(m) => population_nrmse(&nh, &hi, Some(m), &x)?,
                None => un,
            };
        }
        let n = clips.len() as f64;
        let _ = writeln!(csv, "{level},{:.6},{:.6}", u / n, p / n);
    }
    run.write("nrmse.csv", csv)?;

    for (tag, prof) in [("nh", &nh_p), ("hi", &hi_p)] {
        if flags[0] {
            let cochlea = Cochlea::new(&grid, prof, FS);
            let lv: Vec<f64> = (1..=9).map(|i| 10.0 * i as f64).collect();
            let ep = excitation_pattern(&System::cochlea(&cochlea), &[500.0, 1000.0, 2000.0], &lv, 0.1)?;
            run.write(&format!("excitation_{tag}.csv"), ep.to_csv())?;
        }
        let lv: Vec<f64> = (0..=10).map(|i| 10.0 * i as f64).collect();
        if flags[1] {
            let c = rate_level_curve(&fiber_system(prof, cf, FS)?, cf, &lv)?;
            run.write(&format!("rate_level_{tag}.csv"), c.to_csv())?;
        }
        if flags[2] {
            let c = synchrony_level(&fiber_system(prof, cf, FS)?, cf, &lv)?;
            run.write(&format!("synchrony_{tag}.csv"), c.to_csv())?;
        }
    }
    Ok(run.path)
}

fn preset(name: &str) -> Result<ModelConfig> {
    one_of(name, &PRESETS, "preset")?;
    Ok(match name {
        "toy" => ModelConfig::DConnear(ModelSpec::default()),
        "cochlear" => ModelConfig::DConnear(ModelSpec::cochlear()),
        "ihc" => ModelConfig::DConnear(ModelSpec::ihc()),
        "anf" => ModelConfig::AnfThreeBranch(ModelSpec::anf()),
        _ => ModelConfig::DConnear(ModelSpec::hearing_aid()),
    })
}

pub fn bench(o: &Overrides, root: &Path) -> Result<PathBuf> {
    let doc = load_doc(o, "bench")?;
    let s = "bench";
    doc.reject_unknown(s, &["seed", "checkpoint", "preset", "frame_len", "n_frames"])?;
    let seed: u64 = doc.required(s, "seed")?;
    let frame_len: usize = doc.parsed_or(s, "frame_len", RTF_FRAME_LEN)?;
    let n_frames: usize = doc.parsed_or(s, "n_frames", RTF_N_FRAMES)?;
    let mut resolved = KvDoc::default();
    resolved.set(s, "seed", seed);
    let (name, model) = match doc.get(s, "checkpoint") {
        Some(c) => {
            let p = PathBuf::from(c);
            if !p.is_file() {
                return Err(missing(&p, "checkpoint"));
            }
            resolved.set(s, "checkpoint", p.display());
            (p.display().to_string(), load_model(&p)?.1)
        }
        None => {
            let name: String = doc.parsed_or(s, "preset", "hearing_aid".to_string())?;
            resolved.set(s, "preset", &name);
            let m = preset(&name)?.build(seed)?;
            (name, m)
        }
    };
    resolved.set(s, "frame_len", frame_len);
    resolved.set(s, "n_frames", n_frames);
    let report = rtf_bench(&name, &model, frame_len, n_frames, FS)?;
    let run = RunDir::create(root, "bench", &resolved)?;
    run.write("bench.txt", report.to_text())?;
    run.write(
        "bench.csv",
        format!(
            "model,frame_len,n_frames,frame_ms,mean_ms,rtf\n{},{},{},{:.3},{:.4},{:.5}\n",
            report.model, report.frame_len, report.n_frames, report.frame_ms, report.mean_ms, report.rtf
        ),
    )?;
    Ok(run.path)
}
