use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use docqa::analysis::{answer_in_text, reading_order_perplexity, TokenLogProb};
use docqa::geometry::{load_ocr_corpus, save_ocr_corpus, BoundingBox, Document};
use docqa::llmclient::{
    Backend, Client, ClientError, ClientResult, InferenceRequest, InferenceResponse, MockBackend,
    MockLogprobs, MockRule, RetryPolicy,
};
use docqa::ordering::{raster_scan_order, RasterScanParams};
use proptest::prelude::*;

fn arb_doc() -> impl Strategy<Value = Document> {
    (
        "[a-z0-9_]{1,8}",
        any::<bool>(),
        prop::collection::vec(
            (
                "[A-Za-z0-9]{1,5}",
                0.0f64..1e4,
                0.0f64..1e4,
                0.0f64..200.0,
                0.0f64..50.0,
            ),
            0..20,
        ),
    )
        .prop_map(|(id, flag, words)| {
            Document::new(
                id,
                flag,
                words
                    .into_iter()
                    .map(|(t, x, y, w, h)| (t, BoundingBox::new(x, y, x + w, y + h).unwrap())),
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trips(docs in prop::collection::vec(arb_doc(), 0..5)) {
        let mut seen = std::collections::HashSet::new();
        let docs: Vec<Document> = docs.into_iter().filter(|d| seen.insert(d.doc_id.clone())).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_ocr_corpus(&path, &docs).unwrap();
        prop_assert_eq!(load_ocr_corpus(&path).unwrap(), docs);
    }

    #[test]
    fn centroid_inside_box(x in -1e6f64..1e6, y in -1e6f64..1e6, w in 0.0f64..1e4, h in 0.0f64..1e4) {
        let b = BoundingBox::new(x, y, x + w, y + h).unwrap();
        let (cx, cy) = b.centroid();
        prop_assert!(b.x_min() <= cx && cx <= b.x_max());
        prop_assert!(b.y_min() <= cy && cy <= b.y_max());
    }

    #[test]
    fn raster_ignores_input_order(doc in arb_doc(), perm_seed in any::<u64>()) {
        // Permute the input word list and compare the spatial sequence.
        let mut idx: Vec<usize> = (0..doc.len()).collect();
        use rand::{seq::SliceRandom, SeedableRng};
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted = Document::new(
            doc.doc_id.clone(),
            false,
            idx.iter().map(|&i| (doc.words[i].text.clone(), doc.words[i].bbox)),
        ).unwrap();
        let boxes = |d: &Document| {
            raster_scan_order(d, RasterScanParams::default())
                .permutation
                .iter()
                .map(|&i| <[f64; 4]>::from(d.words[i].bbox))
                .collect::<Vec<_>>()
        };
        let mut centroids: Vec<(u64, u64)> = doc.words.iter()
            .map(|w| (w.bbox.centroid().0.to_bits(), w.bbox.centroid().1.to_bits())).collect();
        centroids.sort_unstable();
        centroids.dedup();
        prop_assume!(centroids.len() == doc.len());
        prop_assert_eq!(boxes(&doc), boxes(&permuted));
    }

    #[test]
    fn rop_is_permutation_invariant(lps in prop::collection::vec(-20.0f64..=0.0, 1..30), seed in any::<u64>()) {
        let toks: Vec<TokenLogProb> = lps.iter().map(|&l| TokenLogProb::new("t", l).unwrap()).collect();
        let mut shuffled = toks.clone();
        use rand::{seq::SliceRandom, SeedableRng};
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = reading_order_perplexity(&toks).unwrap();
        let b = reading_order_perplexity(&shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        prop_assert!(a >= 1.0);
    }

    #[test]
    fn verbatim_answers_are_always_found(answers in prop::collection::vec("[A-Za-z0-9 ]{0,10}[A-Za-z0-9]", 1..4),
                                         pre in "[a-z ]{0,20}", post in "[a-z ]{0,20}") {
        let ctx = format!("{pre} {} {post}", answers[0]);
        prop_assert!(answer_in_text(&answers, &ctx));
    }
}

struct Gauge {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl Backend for Gauge {
    fn complete(&self, req: &InferenceRequest) -> ClientResult<InferenceResponse> {
        let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(5));
        self.live.fetch_sub(1, Ordering::SeqCst);
        if req.prompt.contains("fail") {
            return Err(ClientError::Protocol {
                status: 500,
                body: "boom".into(),
            });
        }
        Ok(InferenceResponse {
            text: req.prompt.clone(),
            model_id: "gauge".into(),
            tokens: None,
        })
    }
}

fn reqs(prompts: &[&str]) -> Vec<InferenceRequest> {
    prompts
        .iter()
        .map(|p| InferenceRequest {
            prompt: p.to_string(),
            max_new_tokens: 4,
            want_logprobs: false,
        })
        .collect()
}

#[test]
fn batch_is_ordered_and_isolates_failures() {
    let prompts: Vec<String> = (0..10)
        .map(|i| {
            if i % 4 == 3 {
                format!("fail {i}")
            } else {
                format!("p{i}")
            }
        })
        .collect();
    let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
    for limit in [1, 3] {
        let client = Client::new(
            Gauge {
                live: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            },
            RetryPolicy::default(),
        );
        let out = client.predict_batch(&reqs(&refs), limit);
        assert_eq!(out.len(), 10);
        for (i, r) in out.iter().enumerate() {
            match r {
                Ok(resp) => assert_eq!(resp.text, prompts[i]),
                Err(ClientError::Protocol { status, .. }) => {
                    assert_eq!(*status, 500);
                    assert!(prompts[i].starts_with("fail"));
                }
                Err(e) => panic!("unexpected {e}"),
            }
        }
    }
}

#[test]
fn batch_never_exceeds_in_flight_limit() {
    use std::sync::Arc;
    struct Shared(Arc<Gauge>);
    impl Backend for Shared {
        fn complete(&self, req: &InferenceRequest) -> ClientResult<InferenceResponse> {
            self.0.complete(req)
        }
    }
    for limit in [1usize, 2, 4] {
        let gauge = Arc::new(Gauge {
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let client = Client::new(Shared(gauge.clone()), RetryPolicy::default());
        let prompts: Vec<String> = (0..16).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
        client.predict_batch(&reqs(&refs), limit);
        let peak = gauge.peak.load(Ordering::SeqCst);
        assert!(peak <= limit, "peak {peak} > limit {limit}");
        assert!(peak >= 1);
    }
}

#[test]
fn mock_batch_is_reproducible() {
    let key: HashMap<String, Vec<String>> = [("q".to_string(), vec!["b".to_string()])].into();
    let make = || {
        Client::new(
            MockBackend::new(
                MockRule::GoldIfContiguous(key.clone()),
                MockLogprobs::Seeded,
                17,
            ),
            RetryPolicy::default(),
        )
    };
    let rs: Vec<InferenceRequest> = ["a b", "c d", "b", "x"]
        .iter()
        .map(|c| InferenceRequest {
            prompt: docqa::serialize::render_prompt(c, "q"),
            max_new_tokens: 8,
            want_logprobs: true,
        })
        .collect();
    let a = make().predict_batch(&rs, 3);
    let b = make().predict_batch(&rs, 2);
    let to_json = |v: &Vec<ClientResult<InferenceResponse>>| {
        v.iter()
            .map(|r| serde_json::to_string(r.as_ref().unwrap()).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(to_json(&a), to_json(&b));
}
