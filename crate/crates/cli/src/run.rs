//! Config resolution and per-run output directories.

use aliasfree::error::{Error, Result};
use aliasfree::kv::KvDoc;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Sections any command accepts in a shared config file.
pub const KNOWN_SECTIONS: [&str; 7] = ["", "corpus", "train", "model", "probe", "metrics", "bench"];

pub struct Overrides<'a> {
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub set: &'a [String],
}

/// Reads the config file, applies `--set` pairs and resolves the seed for `section`.
///
/// A bare `--set key=value` goes to `section`; `other.key=value` names the section.
pub fn load_doc(o: &Overrides, section: &str) -> Result<KvDoc> {
    let mut doc = match o.config {
        Some(p) => KvDoc::parse(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
        )?,
        None => KvDoc::default(),
    };
    for pair in o.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{pair}'")))?;
        let (sec, key) = match k.trim().split_once('.') {
            Some((s, k)) => (s, k),
            None => (section, k.trim()),
        };
        doc.set(sec, key, v.trim());
    }
    for sec in doc.sections() {
        if !KNOWN_SECTIONS.contains(&sec) {
            return Err(Error::Config(format!("unknown section [{sec}] (known: {})", KNOWN_SECTIONS[1..].join(", "))));
        }
    }
    doc.reject_unknown("", &["seed"])?;
    let seed = match o.seed {
        Some(s) => s,
        None => match doc.parsed::<u64>(section, "seed")? {
            Some(s) => s,
            None => doc.parsed_or("", "seed", 0u64)?,
        },
    };
    doc.set(section, "seed", seed);
    Ok(doc)
}

pub fn output_root(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn config_hash(command: &str, resolved: &str) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(resolved.as_bytes());
    h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect()
}

/// A fresh directory `<root>/<command>-<hash8>-<UTC timestamp>` holding `config.resolved`.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, resolved: &KvDoc) -> Result<Self> {
        let text = resolved.to_text();
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{command}-{}-{stamp}", config_hash(command, &text));
        fs::create_dir_all(root)?;
        let mut path = root.join(&base);
        let mut n = 1;
        while path.exists() {
            path = root.join(format!("{base}-{n}"));
            n += 1;
        }
        fs::create_dir(&path)?;
        fs::write(path.join("config.resolved"), text)?;
        Ok(Self { path })
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path.join(name);
        fs::write(&p, contents)?;
        Ok(p)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_seed_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        fs::write(&cfg, "seed = 3\n[corpus]\ncount = 5\n").unwrap();
        let set = vec!["count=7".to_string(), "train.lr = 0.5".to_string()];
        let doc = load_doc(&Overrides { config: Some(&cfg), seed: None, set: &set }, "corpus").unwrap();
        assert_eq!(doc.get("corpus", "count"), Some("7"));
        assert_eq!(doc.get("train", "lr"), Some("0.5"));
        assert_eq!(doc.get("corpus", "seed"), Some("3"));
        let doc = load_doc(&Overrides { config: Some(&cfg), seed: Some(9), set: &[] }, "corpus").unwrap();
        assert_eq!(doc.get("corpus", "seed"), Some("9"));
    }

    #[test]
    fn rejects_unknown_sections_and_malformed_pairs() {
        let set = vec!["bogus.k=1".to_string()];
        assert!(matches!(load_doc(&Overrides { config: None, seed: None, set: &set }, "corpus"), Err(Error::Config(_))));
        let set = vec!["novalue".to_string()];
        assert!(load_doc(&Overrides { config: None, seed: None, set: &set }, "corpus").is_err());
    }

    #[test]
    fn run_dirs_never_collide() {
        let dir = tempfile::tempdir().unwrap();
        let doc = KvDoc::parse("[corpus]\ncount = 1\n").unwrap();
        let a = RunDir::create(dir.path(), "gen-corpus", &doc).unwrap();
        let b = RunDir::create(dir.path(), "gen-corpus", &doc).unwrap();
        assert_ne!(a.path, b.path);
        let name = a.path.file_name().unwrap().to_string_lossy().to_string();
        assert!(name.starts_with(&format!("gen-corpus-{}-", config_hash("gen-corpus", &doc.to_text()))));
        assert_eq!(fs::read_to_string(a.file("config.resolved")).unwrap(), doc.to_text());
    }
}
