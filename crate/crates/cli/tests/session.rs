mod common;

#[tokio::test(flavor = "multi_thread")]
async fn cli_and_api_sessions_leave_identical_snapshots() {
    common::session_equivalence().await;
}
