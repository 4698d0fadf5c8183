//! The committed fixtures must equal a fresh regeneration, byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tracekit::chain::FixtureStore;
use tracekit::synthetic::{signature_db, write_incident_fixtures};

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn incident_store_matches_generator() {
    let committed = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/incident");
    let tmp = tempfile::tempdir().unwrap();
    write_incident_fixtures(&FixtureStore::open(tmp.path())).unwrap();
    let fresh = files(tmp.path());
    let old = files(&committed.join("chain"));
    assert_eq!(fresh.keys().collect::<Vec<_>>(), old.keys().collect::<Vec<_>>());
    for (k, v) in &fresh {
        assert!(old[k] == *v, "{k} differs; rerun `cargo run -p tracekit --example make_fixtures`");
    }
    assert_eq!(fs::read_to_string(committed.join("signatures.tsv")).unwrap(), signature_db().to_text());
}
