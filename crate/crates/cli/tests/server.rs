use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use mnemo_cli::server::BackgroundServer;
use mnemo_cli::HttpBackend;
use mnemo_core::graph::{dump, MemoryGraph};
use mnemo_core::harness::{generate_world, run_eval, run_eval_in_process, EvalConfig, WorldConfig};
use serde_json::{json, Value};

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn get(url: &str) -> (u16, Value) {
    let mut r = agent().get(url).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

fn post(url: &str, body: &str) -> (u16, Value) {
    let mut r = agent().post(url).header("content-type", "application/json").send(body).unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

fn world(seed: u64, clips: usize) -> mnemo_core::harness::SyntheticWorld {
    generate_world(&WorldConfig {
        num_identities: 4,
        num_clips: clips,
        question_count: 6,
        noise_sigma: 0.1,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn ask_on_empty_graph_sees_empty_results() {
    let s = BackgroundServer::start(MemoryGraph::default(), None).unwrap();
    let (status, v) = post(&format!("{}/ask", s.url()), r#"{"question":"Where are the keys?","max_rounds":5}"#);
    assert_eq!(status, 200);
    let msgs = v["trajectory"]["messages"].as_array().unwrap();
    assert!(msgs.iter().any(|m| m["content"].as_str().unwrap().contains("[EMPTY]")));
    assert!(v["trajectory"]["rounds_used"].as_u64().unwrap() <= 5);
}

#[test]
fn characters_match_the_direct_call() {
    let w = world(1, 12);
    let s = BackgroundServer::start(MemoryGraph::default(), None).unwrap();
    let mut direct = MemoryGraph::default();
    let config = mnemo_core::memorize::IngestConfig::default();
    for clip in &w.clips {
        let (status, _) = post(&format!("{}/clips", s.url()), &serde_json::to_string(clip).unwrap());
        assert_eq!(status, 200);
        mnemo_core::memorize::ingest_clip(
            &mut direct,
            clip,
            &mnemo_core::memorize::FixtureGenerator,
            &mnemo_core::embedding::MockEmbedder::default(),
            &config,
        )
        .unwrap();
    }
    let (status, _) =
        post(&format!("{}/equivalences", s.url()), r#"{"pairs":[["<face_0>","<voice_0>"],["<face_1>","<voice_1>"]]}"#);
    assert_eq!(status, 200);
    mnemo_core::harness::reinforce_pairs(
        &mut direct,
        &[
            ("<face_0>".parse().unwrap(), "<voice_0>".parse().unwrap()),
            ("<face_1>".parse().unwrap(), "<voice_1>".parse().unwrap()),
        ],
    )
    .unwrap();
    let (_, served) = get(&format!("{}/characters", s.url()));
    assert_eq!(served, dump::characters_json(&direct));
}

#[test]
fn bad_requests_name_the_field_and_unknown_clips_are_404() {
    let s = BackgroundServer::start(MemoryGraph::default(), None).unwrap();
    let (status, v) =
        post(&format!("{}/clips", s.url()), r#"{"clip_index":0,"observations":[{"tag":"a","modality":"nose"}]}"#);
    assert_eq!(status, 400);
    assert_eq!(v["path"], "observations[0].modality");
    let (status, v) = post(&format!("{}/ask", s.url()), r#"{"max_rounds":2}"#);
    assert_eq!(status, 400);
    assert!(v["message"].as_str().unwrap().contains("question"));
    let (status, v) = get(&format!("{}/clips/7", s.url()));
    assert_eq!(status, 404);
    assert_eq!(v["kind"], "not_found");
    let (status, _) = get(&format!("{}/clips/seven", s.url()));
    assert_eq!(status, 400);
    let (status, _) = get(&format!("{}/search", s.url()));
    assert_eq!(status, 400);
    let (status, _) = post(&format!("{}/equivalences", s.url()), r#"{"pairs":[["<face_9>","<voice_9>"]]}"#);
    assert_eq!(status, 404);
}

#[test]
fn duplicate_clip_is_a_conflict() {
    let w = world(2, 1);
    let s = BackgroundServer::start(MemoryGraph::default(), None).unwrap();
    let body = serde_json::to_string(&w.clips[0]).unwrap();
    assert_eq!(post(&format!("{}/clips", s.url()), &body).0, 200);
    assert_eq!(post(&format!("{}/clips", s.url()), &body).0, 409);
}

#[test]
fn searches_never_see_half_ingested_clips() {
    let w = world(3, 30);
    let expected: Vec<usize> = w.clips.iter().map(|c| c.generated.as_ref().map_or(0, |g| g.len())).collect();
    let s = BackgroundServer::start(MemoryGraph::default(), None).unwrap();
    let url = s.url();
    let done = Arc::new(AtomicBool::new(false));
    let readers: Vec<_> = (0..3)
        .map(|_| {
            let (url, done, expected) = (url.clone(), done.clone(), expected.clone());
            std::thread::spawn(move || {
                let mut seen = 0;
                while !done.load(Ordering::SeqCst) {
                    let (status, v) = get(&format!("{url}/search?q=talks%20about%20the%20weather&k=30&t=0"));
                    assert_eq!(status, 200);
                    for hit in v["clips"].as_array().unwrap() {
                        let n = hit["episodic"].as_array().unwrap().len() + hit["semantic"].as_array().unwrap().len();
                        let idx = hit["clip_index"].as_u64().unwrap() as usize;
                        assert!(n <= expected[idx] && n > 0, "clip {idx}: {n} of {}", expected[idx]);
                        seen += 1;
                    }
                }
                seen
            })
        })
        .collect();
    for clip in &w.clips {
        assert_eq!(post(&format!("{url}/clips"), &serde_json::to_string(clip).unwrap()).0, 200);
    }
    done.store(true, Ordering::SeqCst);
    for r in readers {
        r.join().unwrap();
    }
    let counts: Vec<usize> = (0..w.clips.len())
        .map(|i| {
            let (_, v) = get(&format!("{url}/clips/{i}"));
            v["episodic"].as_array().unwrap().len() + v["semantic"].as_array().unwrap().len()
        })
        .collect();
    let (_, v) = get(&format!("{url}/search?q=talks%20about%20the%20weather&k=30&t=0"));
    for hit in v["clips"].as_array().unwrap() {
        let n = hit["episodic"].as_array().unwrap().len() + hit["semantic"].as_array().unwrap().len();
        assert_eq!(n, counts[hit["clip_index"].as_u64().unwrap() as usize]);
    }
}

#[test]
fn http_and_in_process_evals_agree() {
    let w = world(4, 20);
    let s = BackgroundServer::start(MemoryGraph::new(w.config.graph_config()).unwrap(), None).unwrap();
    let config = EvalConfig::default();
    let over_http = run_eval(&w, &HttpBackend::new(s.url()), &config).unwrap();
    let local = run_eval_in_process(&w, &config).unwrap();
    assert_eq!(serde_json::to_string(&over_http).unwrap(), serde_json::to_string(&local).unwrap());
}

#[test]
fn writes_are_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.bin");
    let w = world(5, 3);
    let s = BackgroundServer::start(MemoryGraph::default(), Some(path.clone())).unwrap();
    for clip in &w.clips {
        post(&format!("{}/clips", s.url()), &serde_json::to_string(clip).unwrap());
    }
    let g = mnemo_core::graph::load_from_path(&path).unwrap();
    assert_eq!(g.clip_count(), 3);
    assert_eq!(json!(g.clip_count()), get(&format!("{}/health", s.url())).1["clips"]);
}
