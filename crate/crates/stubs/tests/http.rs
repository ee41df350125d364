use serde_json::{json, Value};
use sieve_stubs::{ConnectorStub, GrobidStub, ModelStub, WireRecord, SAMPLE_TEI};

#[tokio::test]
async fn connector_wire_contract() {
    let stub = ConnectorStub::fixed(vec![
        WireRecord::new("1", "First", Some(2019)),
        WireRecord::new("2", "Second", Some(2022)),
    ]);
    let addr = stub.start().await.unwrap();
    let body: Value = reqwest::Client::new()
        .get(format!("http://{addr}/search"))
        .query(&[("q", "living review"), ("limit", "1"), ("offset", "1"), ("min_year", "2000")])
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(body["total"], 2);
    assert_eq!(body["results"][0]["source_id"], "2");
    assert_eq!(body["results"][0]["year"], 2022);
    let reqs = stub.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].q, "living review");
    assert_eq!(reqs[0].min_year, Some(2000));
}

#[tokio::test]
async fn model_generate_contract() {
    let stub = ModelStub::new();
    let addr = stub.start().await.unwrap();
    let body: Value = reqwest::Client::new()
        .post(format!("http://{addr}/generate"))
        .json(&json!({"model": "m", "prompt": "Title: Birds\nQuestion: birds?", "max_new_tokens": 8}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(body, json!({"text": "yes"}));
    assert_eq!(stub.prompts().len(), 1);
}

#[tokio::test]
async fn grobid_health_and_header() {
    let stub = GrobidStub::default();
    let addr = stub.start().await.unwrap();
    let http = reqwest::Client::new();
    let alive = http.get(format!("http://{addr}/api/isalive")).send().await.unwrap();
    assert!(alive.status().is_success());
    let form = reqwest::multipart::Form::new().part("input", reqwest::multipart::Part::bytes(b"%PDF-1.4".to_vec()));
    let tei = http
        .post(format!("http://{addr}/api/processHeaderDocument"))
        .multipart(form)
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(tei, SAMPLE_TEI);
    assert_eq!(stub.uploads().len(), 1);

    let down = GrobidStub::default().unhealthy();
    let addr = down.start().await.unwrap();
    let resp = http.get(format!("http://{addr}/api/isalive")).send().await.unwrap();
    assert_eq!(resp.status(), 503);
}
