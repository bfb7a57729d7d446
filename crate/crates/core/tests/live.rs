mod common;

#[test]
fn sensor_flood_and_daemon_agree() {
    let out = common::live_trial(4, 3, 1, 50.0);
    assert!(out.ok(), "{out:?}");
    assert!(out.runs >= 3, "{out:?}");
}
