use std::collections::HashSet;

use memcause::corpus::{
    build_instances, build_vocabulary, corpus_stats, parse_corpus_str, split_documents,
    write_corpus, Document, EmotionAnnotation, KeywordSpan,
};
use memcause::synthetic::trigger_corpus;
use proptest::prelude::*;

fn arb_document() -> impl Strategy<Value = Document> {
    let clause = prop::collection::vec("[a-z]{1,4}", 1..5);
    (prop::collection::vec(clause, 1..6), any::<u64>()).prop_map(|(clauses, pick)| {
        let n = clauses.len();
        let e = (pick % n as u64) as usize;
        let c = ((pick >> 8) % n as u64) as usize;
        let span_end = clauses[c].len() - 1;
        Document::new(
            format!("p{pick}"),
            clauses,
            vec![EmotionAnnotation {
                emotion_word: "joy".into(),
                emotion_clause: e,
                emotion_token: 0,
                cause_clauses: vec![c],
                keyword_spans: vec![KeywordSpan {
                    clause: c,
                    start: 0,
                    end: span_end,
                }],
            }],
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn write_then_parse_is_identity(docs in prop::collection::vec(arb_document(), 1..8)) {
        let mut buf = Vec::new();
        write_corpus(&docs, &mut buf).unwrap();
        let back = parse_corpus_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back, docs);
    }

    #[test]
    fn labels_per_annotation_match_cause_count(doc in arb_document()) {
        let vocab = build_vocabulary(std::slice::from_ref(&doc), 1).unwrap();
        let inst = build_instances(&doc, &vocab);
        prop_assert_eq!(inst.len(), doc.clauses.len() * doc.annotations.len());
        let positives = inst.iter().filter(|i| i.label).count();
        prop_assert_eq!(positives, doc.annotations[0].cause_clauses.len());
    }

    #[test]
    fn split_sizes_do_not_depend_on_seed(n in 2usize..40, a in any::<u64>(), b in any::<u64>()) {
        let docs = trigger_corpus(n, 0);
        let (ta, ea) = split_documents(&docs, 0.9, a).unwrap();
        let (tb, eb) = split_documents(&docs, 0.9, b).unwrap();
        prop_assert_eq!((ta.len(), ea.len()), (tb.len(), eb.len()));
        let mut ids: Vec<_> = ta.iter().chain(&ea).map(|d| d.doc_id.clone()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}

#[test]
fn vocabulary_size_is_distinct_tokens_plus_oov() {
    let docs = trigger_corpus(50, 3);
    let mut text = Vec::new();
    write_corpus(&docs, &mut text).unwrap();
    // count distinct tokens straight from the JSON, bypassing the parser
    let mut distinct = HashSet::new();
    for line in std::str::from_utf8(&text).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for clause in v["clauses"].as_array().unwrap() {
            for t in clause.as_array().unwrap() {
                distinct.insert(t.as_str().unwrap().to_string());
            }
        }
    }
    let vocab = build_vocabulary(&docs, 1).unwrap();
    assert_eq!(vocab.len(), distinct.len() + 1);
}

#[test]
fn stats_count_multi_annotation_documents() {
    let text = r#"{"doc_id":"a","clauses":[["x","sad"],["y"],["z","joy"]],"annotations":[{"emotion_word":"sad","emotion_clause":0,"emotion_token":1,"cause_clauses":[1],"keyword_spans":[]},{"emotion_word":"joy","emotion_clause":2,"emotion_token":1,"cause_clauses":[0,1],"keyword_spans":[[0,0,0]]}]}
{"doc_id":"b","clauses":[["q"]],"annotations":[{"emotion_word":"q","emotion_clause":0,"emotion_token":0,"cause_clauses":[0],"keyword_spans":[]}]}"#;
    let docs = parse_corpus_str(text).unwrap();
    let s = corpus_stats(&docs);
    assert_eq!(s.documents, 2);
    assert_eq!(s.clauses, 4);
    assert_eq!(s.annotations, 3);
    assert_eq!(s.cause_clauses, 4);
    assert_eq!(s.annotations_per_doc, vec![0, 1, 1]);
    assert_eq!(s.causes_per_annotation, vec![0, 2, 1]);
}
