use std::path::{Path, PathBuf};
use std::sync::Arc;

use reqwest::StatusCode;
use serde_json::{json, Value};

use viewlink::config::{InputSpec, RunConfig};
use viewlink::hits::{read_hits, read_resolution_rows, write_resolutions, Hit, HitKind, HitResolution};
use viewlink::ingest::ColumnMap;
use viewlink::pipeline::{self, CROSSWALK_FILE, HITS_FILE, RESOLUTIONS_FILE};
use viewlink::resolution::read_crosswalk;
use viewlink::synth::{simulated_review, SynthConfig, SyntheticStudy};
use viewlink_server::{bind, serve, ReviewService, ServeError};

/// 41 pairs whose names agree approximately and whose addresses do not,
/// so every pair becomes a confirm_proposed HIT in pass 1.
fn proposed_study(dir: &Path, n: usize) -> RunConfig {
    let mut left = String::from("id,name,address,zip\n");
    let mut right = String::from("id,name,address,zip\n");
    for i in 0..n {
        let zip = 70000 + i;
        left.push_str(&format!("L{i:03},Zorvan{i} Clinic,{} Oak,{zip}\n", 1000 + i));
        right.push_str(&format!("R{i:03},Zorvan{i} Clinic Annex,{} Elm,{zip}\n", 5000 + i));
    }
    std::fs::write(dir.join("left.csv"), left).unwrap();
    std::fs::write(dir.join("right.csv"), right).unwrap();
    let spec = |f: &str| InputSpec {
        path: dir.join(f),
        columns: ColumnMap::default(),
    };
    RunConfig::new(spec("left.csv"), spec("right.csv"), dir.join("out"))
}

fn synthetic_study(dir: &Path) -> (SyntheticStudy, RunConfig) {
    let study = SyntheticStudy::generate(&SynthConfig {
        pairs: 120,
        ..SynthConfig::default()
    });
    let path = study.write(dir).unwrap();
    (study, RunConfig::load(&path).unwrap())
}

struct Server {
    base: String,
    client: reqwest::Client,
    out: PathBuf,
}

impl Server {
    async fn start(config: RunConfig) -> Self {
        let out = config.output_dir.clone();
        pipeline::run(config.clone()).unwrap();
        Self::open(config, out).await
    }

    async fn open(config: RunConfig, out: PathBuf) -> Self {
        let service = Arc::new(ReviewService::open(config).unwrap());
        let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(serve(service, listener));
        Self {
            base,
            client: reqwest::Client::new(),
            out,
        }
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let res = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = res.status();
        let header = res.headers().get("x-manifest-hash").map(|v| v.to_str().unwrap().to_string());
        let body: Value = res.json().await.unwrap();
        assert_eq!(header.as_deref(), body["manifest_hash"].as_str(), "header and body hash differ");
        (status, body)
    }

    async fn post(&self, hit: &str, body: Value) -> (StatusCode, Value) {
        let res = self
            .client
            .post(format!("{}/hits/{hit}/resolution", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = res.status();
        assert!(res.headers().contains_key("x-manifest-hash"));
        (status, res.json().await.unwrap())
    }

    async fn hits(&self, query: &str) -> Vec<Value> {
        let (status, body) = self.get(&format!("/hits{query}")).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let hits = body["hits"].as_array().unwrap().clone();
        assert_eq!(body["count"].as_u64().unwrap() as usize, hits.len());
        hits
    }

    async fn pending(&self) -> u64 {
        self.get("/progress").await.1["pending"].as_u64().unwrap()
    }

    fn stored(&self) -> Vec<HitResolution> {
        let path = self.out.join(RESOLUTIONS_FILE);
        if path.exists() {
            read_resolution_rows(&path).unwrap()
        } else {
            Vec::new()
        }
    }
}

fn id(hit: &Value) -> &str {
    hit["hit_id"].as_str().unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn pending_list_matches_the_emitted_hit_file() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(proposed_study(dir.path(), 41)).await;

    let pending = server.hits("?status=pending").await;
    assert_eq!(pending.len(), 41);
    assert!(pending.iter().all(|h| h["kind"] == "confirm_proposed" && h["status"] == "pending"));
    let on_disk = read_hits(&server.out.join(HITS_FILE)).unwrap();
    let ids: Vec<&str> = pending.iter().map(id).collect();
    let disk_ids: Vec<&str> = on_disk.iter().map(|h| h.hit_id.as_str()).collect();
    assert_eq!(ids, disk_ids);

    assert!(server.hits("?status=resolved").await.is_empty());
    assert_eq!(server.hits("?kind=confirm_proposed&pass=1").await.len(), 41);
    assert!(server.hits("?kind=manual_match").await.is_empty());

    let (status, one) = server.get(&format!("/hits/{}", ids[0])).await;
    assert_eq!(status, StatusCode::OK);
    let hit: Hit = serde_json::from_value(one["hit"].clone()).unwrap();
    assert_eq!(hit, on_disk[0]);

    let (_, progress) = server.get("/progress").await;
    assert_eq!(progress["total"], 41);
    assert_eq!(progress["by_kind"]["confirm_proposed"]["pending"], 41);
    assert_eq!(progress["by_pass"]["1"]["pending"], 41);
    assert_eq!(progress["read_only"], false);
}

#[tokio::test(flavor = "multi_thread")]
async fn posting_a_match_decrements_pending_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(proposed_study(dir.path(), 41)).await;
    let target = id(&server.hits("?status=pending").await[0]).to_string();
    assert_eq!(server.pending().await, 41);

    let (status, body) = server
        .post(&target, json!({ "decision": "match", "reviewer": "rev1", "note": "same clinic" }))
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["duplicate"], false);
    assert_eq!(body["pending"], 40);
    assert_eq!(body["resolution"]["decision"], "match");
    assert_eq!(server.pending().await, 40);

    let resolved = server.hits("?status=resolved").await;
    assert_eq!(resolved.len(), 1);
    assert_eq!(id(&resolved[0]), target);
    assert_eq!(resolved[0]["resolution"]["reviewer"], "rev1");

    let (_, cw) = server.get("/crosswalk").await;
    assert_eq!(cw["linked"], 1);
    assert_eq!(cw["entries"][0]["source"], "human_confirmed");
    assert_eq!(cw["entries"][0]["hit_id"], target.as_str());

    // The write is durable and reflected in the refreshed outputs.
    let stored = server.stored();
    assert_eq!(stored.len(), 1);
    assert_eq!(stored[0].hit_id, target);
    assert_eq!(read_hits(&server.out.join(HITS_FILE)).unwrap().len(), 40);
    assert_eq!(read_crosswalk(&server.out.join(CROSSWALK_FILE)).unwrap().linked().count(), 1);
    let audit = std::fs::read_to_string(server.out.join(pipeline::AUDIT_FILE)).unwrap();
    assert!(audit.lines().any(|l| l.contains("\"resolution_ingested\"")));
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_hit_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(proposed_study(dir.path(), 3)).await;
    let (status, body) = server
        .post("H000000000000", json!({ "decision": "match", "reviewer": "rev1" }))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_hit");
    assert!(body["error"]["message"].as_str().unwrap().contains("H000000000000"));
    let (status, _) = server.get("/hits/H000000000000").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(server.stored().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn double_submit_is_idempotent_and_conflicts_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(proposed_study(dir.path(), 5)).await;
    let target = id(&server.hits("").await[0]).to_string();
    let body = json!({ "decision": "nonmatch", "reviewer": "rev1", "note": "different campus" });

    let (first, _) = server.post(&target, body.clone()).await;
    let (second, again) = server.post(&target, body).await;
    assert_eq!(first, StatusCode::OK);
    assert_eq!(second, StatusCode::OK);
    assert_eq!(again["duplicate"], true);
    assert_eq!(again["resolution"]["note"], "different campus");
    assert_eq!(server.stored().len(), 1);
    // The rejected left falls through to a manual-match HIT.
    assert_eq!(server.hits("?status=resolved").await.len(), 1);
    let manual = server.hits("?kind=manual_match").await;
    assert_eq!(manual.len(), 1);
    let rejected: Hit = serde_json::from_value(server.get(&format!("/hits/{target}")).await.1["hit"].clone()).unwrap();
    assert_eq!(manual[0]["left"]["entity_id"], rejected.left.entity_id.as_str());

    let (status, conflict) = server
        .post(&target, json!({ "decision": "match", "reviewer": "rev2" }))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(conflict["error"]["code"], "already_resolved");
    assert_eq!(conflict["error"]["detail"]["resolution"]["decision"], "nonmatch");
    assert_eq!(server.stored().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn deferred_hits_stay_pending_until_decided() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(proposed_study(dir.path(), 2)).await;
    let target = id(&server.hits("").await[0]).to_string();

    let (status, _) = server.post(&target, json!({ "decision": "defer", "reviewer": "rev1" })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(server.pending().await, 2);
    let (status, body) = server.post(&target, json!({ "decision": "match", "reviewer": "rev1" })).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(server.pending().await, 1);
    assert_eq!(server.stored().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_decisions_are_rejected_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(proposed_study(dir.path(), 2)).await;
    let target = id(&server.hits("").await[0]).to_string();

    for body in [
        json!({ "decision": "maybe", "reviewer": "rev1" }),
        json!({ "decision": "match", "reviewer": "" }),
        json!({ "decision": "match", "reviewer": "rev1", "chosen_right_id": "R999" }),
        json!({ "reviewer": "rev1" }),
    ] {
        let (status, res) = server.post(&target, body.clone()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body} -> {res}");
        assert!(res["error"]["message"].is_string());
    }
    let (status, _) = server.get("/hits?status=open").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(server.stored().is_empty());
    assert_eq!(server.pending().await, 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_decisions_are_all_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let server = Arc::new(Server::start(proposed_study(dir.path(), 12)).await);
    let ids: Vec<String> = server.hits("").await.iter().map(|h| id(h).to_string()).collect();
    let tasks: Vec<_> = ids
        .iter()
        .cloned()
        .map(|hit| {
            let s = server.clone();
            tokio::spawn(async move { s.post(&hit, json!({ "decision": "match", "reviewer": "rev1" })).await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    assert_eq!(server.pending().await, 0);
    assert_eq!(server.stored().len(), 12);
    assert_eq!(server.get("/crosswalk").await.1["linked"], 12);
}

#[tokio::test(flavor = "multi_thread")]
async fn changed_inputs_open_read_only() {
    let dir = tempfile::tempdir().unwrap();
    let config = proposed_study(dir.path(), 3);
    let out = config.output_dir.clone();
    pipeline::run(config.clone()).unwrap();
    let mut left = std::fs::read_to_string(&config.left.path).unwrap();
    left.push_str("L999,Extra Clinic,1 Pine,79999\n");
    std::fs::write(&config.left.path, left).unwrap();

    let server = Server::open(config, out).await;
    let (_, progress) = server.get("/progress").await;
    assert_eq!(progress["read_only"], true);
    let target = id(&server.hits("").await[0]).to_string();
    let (status, body) = server.post(&target, json!({ "decision": "match", "reviewer": "rev1" })).await;
    assert_eq!(status, StatusCode::LOCKED);
    assert_eq!(body["error"]["code"], "stale_state");
    assert!(server.stored().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn startup_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = proposed_study(dir.path(), 2);
    assert!(matches!(ReviewService::open(config), Err(ServeError::NoRun(_))));

    let first = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = first.local_addr().unwrap();
    assert!(matches!(bind(addr).await, Err(ServeError::AddressInUse(a)) if a == addr));
}

/// Decisions made through the service and the same decisions ingested from
/// a resolution file give byte-identical crosswalks.
#[tokio::test(flavor = "multi_thread")]
async fn api_and_file_resolutions_agree() {
    let api_dir = tempfile::tempdir().unwrap();
    let file_dir = tempfile::tempdir().unwrap();
    let (study, api_config) = synthetic_study(api_dir.path());
    let server = Server::start(api_config).await;

    let mut decided: Vec<HitResolution> = Vec::new();
    // Pass HITs first; their answers reshape the manual HITs.
    for round in 0..2 {
        let listed = server.hits("?status=pending").await;
        let hits: Vec<Hit> = listed
            .iter()
            .map(|v| serde_json::from_value::<Hit>(v.clone()).unwrap())
            .filter(|h| (h.kind == HitKind::ManualMatch) == (round == 1))
            .collect();
        let refs: Vec<&Hit> = hits.iter().collect();
        for res in simulated_review(&study, &refs, "") {
            let (status, body) = server
                .post(
                    &res.hit_id,
                    json!({
                        "decision": res.decision.as_str(),
                        "chosen_right_id": res.chosen_right_entity_id,
                        "reviewer": "sim",
                        "note": res.note,
                    }),
                )
                .await;
            assert_eq!(status, StatusCode::OK, "{body}");
            decided.push(HitResolution {
                reviewer: "sim".into(),
                ..res
            });
        }
    }
    assert!(decided.iter().any(|r| r.hit_id.starts_with('H')));
    assert!(decided.len() > 10, "only {} decisions", decided.len());

    let file_config = {
        let path = study.write(file_dir.path()).unwrap();
        RunConfig::load(&path).unwrap()
    };
    std::fs::create_dir_all(&file_config.output_dir).unwrap();
    write_resolutions(&file_config.output_dir.join(RESOLUTIONS_FILE), &decided).unwrap();
    let (_, file_state, _) = pipeline::run(file_config.clone()).unwrap();
    assert!(file_state.orphaned.is_empty());

    let api_bytes = std::fs::read(server.out.join(CROSSWALK_FILE)).unwrap();
    let file_bytes = std::fs::read(file_config.output_dir.join(CROSSWALK_FILE)).unwrap();
    assert!(api_bytes == file_bytes, "crosswalk files differ");

    let (_, cw) = server.get("/crosswalk").await;
    let served: Vec<viewlink::resolution::CrosswalkEntry> = serde_json::from_value(cw["entries"].clone()).unwrap();
    let from_file = read_crosswalk(&file_config.output_dir.join(CROSSWALK_FILE)).unwrap();
    let expected: Vec<_> = from_file.sorted_entries().into_iter().cloned().collect();
    assert_eq!(served, expected);
}
