use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ctxagent::dataset::Dataset;
use ctxagent::domain::{BenchmarkSample, GateConfig};
use ctxagent::evalsuite::{evaluate, EvalOptions, PredictionSet};
use ctxagent::par::Execution;
use ctxagent::reasoner::{
    connect, ground_truth_transcript, BackendConfig, BackendError, FixedStub, GenerationRequest, ParseStatus, Reasoner,
    ReplayBackend, ResponseSource, RetryPolicy, TranscriptEntry,
};
use ctxagent::toolset::{fixture_default, registry_default};

fn samples() -> Vec<BenchmarkSample> {
    Dataset::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/samples.jsonl"))
        .unwrap()
        .to_samples()
}

fn replay_reasoner(entries: Vec<TranscriptEntry>) -> Reasoner {
    Reasoner::new(
        Box::new(ReplayBackend::new(entries)),
        registry_default(),
        fixture_default(),
        GateConfig::default(),
    )
}

#[test]
fn ground_truth_replay_reproduces_annotations() {
    let gt = samples();
    let reasoner = replay_reasoner(ground_truth_transcript(&gt));
    let runs = reasoner.run_all(&gt, Execution::Sequential);
    for (run, s) in runs.iter().zip(&gt) {
        assert_eq!(run.parse_status, ParseStatus::Clean, "{}", s.id);
        assert!(!run.prediction_failure);
        assert_eq!(run.output, s.annotation, "{}", s.id);
    }

    let ex1 = &runs[0];
    let trace = ex1.trace.as_ref().unwrap();
    assert_eq!(trace.steps.len(), 4);
    assert!(trace.is_completed());
    assert!(!ex1.final_response.as_deref().unwrap().trim().is_empty());
    // No `#response` entries in the transcript: template fallback, miss recorded.
    assert_eq!(ex1.response_source, Some(ResponseSource::Template));
    assert!(ex1.synthesis_error.is_some());

    let ex5 = &runs[4];
    assert_eq!(ex5.output.score().value(), 1);
    assert!(ex5.trace.is_none());
    assert!(ex5.final_response.is_none());

    let preds = PredictionSet::from_runs(&runs).unwrap();
    let report = evaluate(&preds, &gt, &EvalOptions::default(), Execution::Sequential).unwrap();
    assert_eq!((report.acc_p, report.md, report.fd, report.rmse), (1.0, 0.0, 0.0, 0.0));
    assert_eq!(
        (report.precision, report.recall, report.f1),
        (Some(1.0), Some(1.0), Some(1.0))
    );
    assert_eq!(report.acc_args, Some(1.0));
}

#[test]
fn parallel_runs_match_sequential() {
    let gt = samples();
    let reasoner = replay_reasoner(ground_truth_transcript(&gt));
    assert_eq!(
        reasoner.run_all(&gt, Execution::Sequential),
        reasoner.run_all(&gt, Execution::Parallel(3))
    );
}

#[test]
fn synthesis_reads_response_key() {
    let gt = samples();
    let mut entries = ground_truth_transcript(&gt);
    entries.push(TranscriptEntry {
        id: Some("example-3#response".into()),
        prompt_sha256: None,
        completion: "  Bring an umbrella this weekend.  ".into(),
    });
    let run = replay_reasoner(entries).run_sample(&gt[2]);
    assert_eq!(run.trace.as_ref().unwrap().steps.len(), 2);
    assert_eq!(run.final_response.as_deref(), Some("Bring an umbrella this weekend."));
    assert_eq!(run.response_source, Some(ResponseSource::Backend));
    assert_eq!(run.synthesis_error, None);
}

#[test]
fn unparseable_completion_is_flagged() {
    let gt = samples();
    let reasoner = Reasoner::new(
        Box::new(FixedStub::new("I would rather not say.")),
        registry_default(),
        fixture_default(),
        GateConfig::default(),
    );
    let run = reasoner.run_sample(&gt[0]);
    assert!(run.prediction_failure);
    assert!(run.parse_status.is_failed());
    assert_eq!(run.output.score().value(), 1);
    assert!(run.trace.is_none());

    let preds = PredictionSet::from_runs(&[run]).unwrap();
    assert!(preds.iter().all(|p| p.failure));
}

#[test]
fn score_one_stub_yields_no_traces() {
    let gt = samples();
    let stub = "<think>Nothing to do.</think>\n{\"proactive_score\": 1, \"tools\": \"None\", \"response\": \"None\"}";
    let reasoner = Reasoner::new(
        Box::new(FixedStub::new(stub)),
        registry_default(),
        fixture_default(),
        GateConfig::default(),
    );
    let runs = reasoner.run_all(&gt, Execution::Auto);
    assert!(runs.iter().all(|r| r.trace.is_none() && !r.prediction_failure));
    assert!(runs.iter().all(|r| r.output.score().value() == 1));
}

#[test]
fn transcript_miss_is_recorded_per_sample() {
    let gt = samples();
    let mut entries = ground_truth_transcript(&gt);
    entries.remove(1);
    let runs = replay_reasoner(entries).run_all(&gt, Execution::Sequential);
    assert!(runs[1].prediction_failure);
    assert!(runs[1].backend_error.as_deref().unwrap().contains("example-2"));
    assert!(runs.iter().enumerate().all(|(i, r)| i == 1 || !r.prediction_failure));
}

/// Serves canned HTTP responses in order, one per connection, and counts
/// the requests it saw.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut req = vec![0; length];
            reader.read_exact(&mut req).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&req).unwrap();
            assert_eq!(req["model"], "test-model");
            assert_eq!(req["messages"][0]["role"], "system");
            counter.fetch_add(1, Ordering::SeqCst);
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

fn remote_config(endpoint: String) -> BackendConfig {
    BackendConfig {
        retry: RetryPolicy {
            max_attempts: 3,
            backoff_ms: vec![10],
        },
        ..BackendConfig::remote(endpoint, "test-model")
    }
}

const REQUEST: GenerationRequest<'static> = GenerationRequest {
    key: "k",
    system: Some("sys"),
    user: "hello",
};

#[test]
fn remote_retries_transient_status() {
    let ok = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "fine"}}]}).to_string();
    let (endpoint, seen) = serve(vec![(503, "busy".into()), (429, "slow down".into()), (200, ok)]);
    let backend = connect(&remote_config(endpoint)).unwrap();
    assert_eq!(backend.generate(&REQUEST).unwrap(), "fine");
    assert_eq!(seen.load(Ordering::SeqCst), 3);
}

#[test]
fn remote_gives_up_after_max_attempts() {
    let (endpoint, seen) = serve(vec![(500, "a".into()), (502, "b".into()), (503, "c".into())]);
    let backend = connect(&remote_config(endpoint)).unwrap();
    let err = backend.generate(&REQUEST).unwrap_err();
    assert!(
        matches!(err, BackendError::BackendUnavailable { attempts: 3, .. }),
        "{err}"
    );
    assert_eq!(seen.load(Ordering::SeqCst), 3);
}

#[test]
fn remote_client_errors_are_not_retried() {
    let (endpoint, seen) = serve(vec![(400, "bad request".into()), (200, "{}".into())]);
    let backend = connect(&remote_config(endpoint)).unwrap();
    assert!(backend.generate(&REQUEST).is_err());
    assert_eq!(seen.load(Ordering::SeqCst), 1);
}
