//! Runs the fuzz entry points over the checked-in corpus and cheap mutations
//! of it, so parser panics surface under a plain `cargo test`.

use std::fs;
use std::path::PathBuf;

use aoirisk::export::load_solution_json;
use aoirisk::ConfigFile;
use aoirisk_cli::RunManifest;

fn corpus(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| fs::read_to_string(p).unwrap())
        .collect()
}

fn mutations(seed: &str) -> Vec<String> {
    let bytes = seed.as_bytes();
    let mut out = vec![seed.to_string()];
    let step = (bytes.len() / 64).max(1);
    for cut in (0..bytes.len()).step_by(step) {
        out.push(String::from_utf8_lossy(&bytes[..cut]).into_owned());
        let mut flipped = bytes.to_vec();
        flipped[cut] = match flipped[cut] {
            b'0'..=b'8' => flipped[cut] + 1,
            b'9' => b'-',
            b'"' => b'\'',
            _ => b'9',
        };
        out.push(String::from_utf8_lossy(&flipped).into_owned());
    }
    out
}

#[test]
fn config_corpus() {
    let seeds = corpus("parse_config");
    assert!(seeds.iter().any(|s| ConfigFile::parse(s).is_ok()));
    for seed in &seeds {
        for text in mutations(seed) {
            if let Ok(cfg) = ConfigFile::parse(&text) {
                assert_eq!(ConfigFile::parse(&cfg.to_config_text()).unwrap(), cfg);
            }
        }
    }
}

#[test]
fn policy_corpus() {
    let seeds = corpus("load_policy");
    for seed in &seeds {
        assert!(load_solution_json(seed).is_ok());
        for text in mutations(seed) {
            let _ = load_solution_json(&text);
        }
    }
}

#[test]
fn manifest_corpus() {
    let seeds = corpus("parse_manifest");
    for seed in &seeds {
        RunManifest::parse(seed).unwrap();
        for text in mutations(seed) {
            if let Ok(m) = RunManifest::parse(&text) {
                assert_eq!(RunManifest::parse(&m.to_json().unwrap()).unwrap(), m);
            }
        }
    }
}
