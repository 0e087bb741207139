use std::path::PathBuf;

use qwgeom_core::model::{load_fixture, ModelFile, FIXTURE_NAMES};

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{}.json", name.to_ascii_lowercase()))
}

#[test]
fn shipped_model_files_match_builtin_fixtures() {
    for name in FIXTURE_NAMES {
        let file = ModelFile::load(path(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let (walk, functional) = load_fixture(name).unwrap();
        assert_eq!(file.walk(), walk, "{name}");
        assert_eq!(file.functional, functional, "{name}");
    }
}

#[test]
fn model_files_round_trip() {
    for name in FIXTURE_NAMES {
        let (walk, functional) = load_fixture(name).unwrap();
        let text = ModelFile::new(&walk, functional).to_json();
        let back = ModelFile::from_json(&text).unwrap();
        assert_eq!(back.walk(), walk, "{name}");
        assert_eq!(back.to_json(), text);
    }
}
