use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use serde_json::Value;
use sieve_core::catalog::ProtocolDraft;
use sieve_core::persistence::Store;
use sieve_core::search::{ConnectorConfig, ConnectorRegistry};
use sieve_core::service::ReviewService;
use sieve_stubs::{ConnectorStub, WireRecord};

fn sieve(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sieve"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn operator_commands_against_a_file_store() {
    let stub = ConnectorStub::fixed(vec![
        WireRecord::new("1", "Screening automation in practice", Some(2021)),
        WireRecord::new("2", "Ranking abstracts with active learning", Some(2022)),
    ]);
    let addr = stub.start().await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("sieve.db");
    let config = dir.path().join("sieve.toml");
    std::fs::write(
        &config,
        format!(
            "[store]\npath = {db:?}\n\n[[connectors]]\nname = \"index\"\nbase_url = \"http://{addr}\"\nrate_limit = 1000.0\n"
        ),
    )
    .unwrap();

    // serving an unmigrated store fails with a diagnostic
    let out = sieve(&config, &["serve", "--bind", "127.0.0.1:0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("migrate"));

    ok(&sieve(&config, &["migrate"]));
    ok(&sieve(&config, &["migrate"]));

    // reviews are created through the API; do it in-process here
    let rid = {
        let mut c = ConnectorConfig::wire("index", format!("http://{addr}"));
        c.rate_limit = 1000.0;
        let service = ReviewService::new(Arc::new(Store::open(&db).unwrap()), ConnectorRegistry::new([c]).unwrap());
        let draft = ProtocolDraft { title: "CLI".into(), queries: vec!["screening".into()], ..Default::default() };
        service.create_review(draft).unwrap().review_id
    };

    let run: Value = serde_json::from_str(&ok(&sieve(&config, &["search", "--review", rid.as_str()]))).unwrap();
    assert_eq!(run["new_papers"], 2);

    let ris = dir.path().join("refs.ris");
    std::fs::write(&ris, "TY  - JOUR\nTI  - A seed paper\nPY  - 2019\nER  - \n").unwrap();
    let report: Value =
        serde_json::from_str(&ok(&sieve(&config, &["import", "--review", rid.as_str(), "--kind", "ris", "--seed", ris.to_str().unwrap()])))
            .unwrap();
    assert_eq!((report["new_after_dedup"].as_u64(), report["seeds_marked"].as_u64()), (Some(1), Some(1)));

    let out_file = dir.path().join("export.json");
    ok(&sieve(&config, &["export", "--review", rid.as_str(), "--out", out_file.to_str().unwrap()]));
    let written = std::fs::read_to_string(&out_file).unwrap();
    let stdout = ok(&sieve(&config, &["export", "--review", rid.as_str()]));
    assert_eq!(written, stdout);
    let service = ReviewService::new(Arc::new(Store::open(&db).unwrap()), ConnectorRegistry::new([]).unwrap());
    assert_eq!(written, service.export_json(&rid).unwrap());
    assert_eq!(service.export(&rid).unwrap().papers.len(), 3);

    let missing = sieve(&config, &["export", "--review", "nope"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("review not found"));
}

#[test]
fn environment_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sieve.toml");
    std::fs::write(&config, "[store]\npath = \"/nonexistent/dir/sieve.db\"\n").unwrap();
    let db = dir.path().join("from-env.db");
    let out = Command::new(env!("CARGO_BIN_EXE_sieve"))
        .args(["--config", config.to_str().unwrap(), "migrate"])
        .env("SIEVE__STORE__PATH", &db)
        .output()
        .unwrap();
    ok(&out);
    assert!(db.exists());

    let bad = Command::new(env!("CARGO_BIN_EXE_sieve"))
        .args(["--config", config.to_str().unwrap(), "migrate"])
        .env("SIEVE__DEDUP__FUZZY_THRESHOLD", "2.0")
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("fuzzy_threshold"));
}
