use std::fs;
use std::path::PathBuf;

use saw_teleport::config::{parse_config, serialize_config, MINIMAL_CONFIG};

fn shipped() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<PathBuf> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "toml")).collect();
    files.sort();
    files
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    let files = shipped();
    assert!(!files.is_empty());
    for path in files {
        let (cfg, _) = parse_config(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let (again, _) = parse_config(&serialize_config(&cfg)).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
        cfg.protocol_config().validate().unwrap();
    }
}

#[test]
fn minimal_config_matches_desk_defaults() {
    let (cfg, entries) = parse_config(MINIMAL_CONFIG).unwrap();
    assert!(entries.iter().all(|e| e.to_string().starts_with("defaulted")));
    assert_eq!(cfg.protocol_config().protocol, saw_teleport::protocol::ProtocolParams::default());
}
