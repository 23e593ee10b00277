mod common;

use reenact_core::container::{load_trajectory, read_trajectory, save_trajectory};
use reenact_core::mining::ChannelCatalog;
use reenact_core::Error;

#[test]
fn small_trajectory_matches_fixture() {
    let traj = common::small_trajectory();
    let bytes = common::trajectory_bytes(&traj);
    assert!(common::matches_golden("small.v2t", &bytes));
    let frozen = std::fs::read(common::fixture_path("small.v2t")).unwrap();
    let back = read_trajectory(&mut frozen.as_slice()).unwrap();
    assert_eq!(back, traj);
    assert_eq!(common::trajectory_bytes(&back), frozen);
}

#[test]
fn protocol_trajectory_digest_is_frozen() {
    let traj = common::protocol_trajectory();
    let bytes = common::trajectory_bytes(&traj);
    let digest = common::sha256_hex(&bytes);
    assert!(common::matches_golden("protocol160.sha256", format!("{digest}\n").as_bytes()));
    let back = read_trajectory(&mut bytes.as_slice()).unwrap();
    assert_eq!(back.len(), 160);
    assert_eq!(back.fps(), 30.0);
    assert_eq!(back.source_id(), "protocol");
    assert_eq!(back.layer_count(), 2);
    assert_eq!(back, traj);
}

#[test]
fn catalog_matches_fixture() {
    let catalog = common::fixture_catalog();
    let text = catalog.to_json().unwrap();
    assert!(common::matches_golden("catalog.json", text.as_bytes()));
    let frozen = std::fs::read_to_string(common::fixture_path("catalog.json")).unwrap();
    let back = ChannelCatalog::from_json(&frozen).unwrap();
    assert_eq!(back, catalog);
    assert_eq!(back.to_json().unwrap(), frozen);
}

#[test]
fn damaged_files_are_rejected() {
    let bytes = common::trajectory_bytes(&common::small_trajectory());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_trajectory(&mut bad.as_slice()), Err(Error::Format(_))));
    for cut in [4, 10, 40, bytes.len() - 3] {
        assert!(read_trajectory(&mut &bytes[..cut]).is_err(), "cut at {cut}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.v2t");
    save_trajectory(&common::small_trajectory(), &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_trajectory(&path).unwrap(), common::small_trajectory());
}
