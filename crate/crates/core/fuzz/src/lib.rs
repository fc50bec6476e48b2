//! Fuzz entry points. Each takes raw bytes, feeds them to one parser or
//! decoder, and asserts the round-trip properties that must hold whenever
//! the input is accepted.

use std::str::FromStr;

use cotkd::analysis::{find_knee, parse_verdict, read_curve_csv, StubJudge};
use cotkd::corpus::{prepare_record, segment, ChatTemplate, RawRecord, SegmentedExample, Tokenizer, TokenizerSpec};
use cotkd::kdloss::{decode_logits, encode_logits};
use cotkd::microlm::{decode_checkpoint, encode_checkpoint};
use cotkd::supervision::{compose, SupervisionRegime, TruncationPolicy};
use cotkd::trainer::TrainConfig;

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

fn tokenizer() -> Tokenizer {
    TokenizerSpec::default().build().expect("default tokenizer")
}

fn check_example(ex: &SegmentedExample, tok: &Tokenizer) {
    ex.validate(Some(tok)).expect("accepted example validates");
    assert_eq!(tok.decode(&ex.token_ids).expect("decodes"), ex.text);
    let line = ex.to_json_line().expect("serializes");
    assert_eq!(&SegmentedExample::from_json_line(&line, Some(tok)).expect("reparses"), ex);
    for regime in SupervisionRegime::ALL {
        for policy in [TruncationPolicy::None, TruncationPolicy::LeftHalf, TruncationPolicy::RightHalf] {
            if let Ok((t, m)) = compose(ex, policy, regime) {
                assert_eq!(m.len() + 1, t.token_ids.len());
                assert!(m.count() > 0);
            }
        }
    }
}

pub fn raw_record(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(record) = RawRecord::from_json_line(s) else { return };
    let tok = tokenizer();
    if let Ok(ex) = prepare_record("fuzz", &record, &ChatTemplate::default(), &tok) {
        check_example(&ex, &tok);
    }
}

pub fn tokenizer_spec(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(spec) = TokenizerSpec::from_json(s) else { return };
    let Ok(tok) = spec.build() else { return };
    for sample in ["", "plain", "Q<think>a b</think>A", s] {
        let ids = tok.encode(sample);
        assert_eq!(tok.decode(&ids).expect("own ids decode"), sample);
    }
}

pub fn segmented_line(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let tok = tokenizer();
    if let Ok(ex) = SegmentedExample::from_json_line(s, Some(&tok)) {
        check_example(&ex, &tok);
    }
    // without a tokenizer only the span partition is checked; masks must
    // still be safe to build
    if let Ok(ex) = SegmentedExample::from_json_line(s, None) {
        for regime in SupervisionRegime::ALL {
            let _ = compose(&ex, TruncationPolicy::LeftHalf, regime);
        }
    }
}

pub fn segment_text(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let tok = tokenizer();
    if let Ok(ex) = segment("fuzz", s, &tok) {
        check_example(&ex, &tok);
    }
}

pub fn logits_file(data: &[u8]) {
    if let Ok(m) = decode_logits(data) {
        assert_eq!(encode_logits(&m).expect("encodes"), data);
    }
}

pub fn checkpoint_file(data: &[u8]) {
    if let Ok(p) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&p).expect("encodes")).expect("own bytes decode");
        assert_eq!(again.config(), p.config());
        assert_eq!(again.data, p.data);
    }
}

pub fn judge_verdict(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(v) = parse_verdict(s) {
        let json = serde_json::to_string(&v).expect("serializes");
        assert_eq!(parse_verdict(&json).expect("reparses"), v);
    }
}

pub fn stub_verdicts(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let _ = StubJudge::from_json(s);
}

pub fn policy_strings(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(p) = TruncationPolicy::from_str(s) {
        assert_eq!(TruncationPolicy::from_str(&p.to_string()).expect("display reparses"), p);
        for len in [0usize, 1, 2, 7, 512] {
            let r = p.kept_range(len);
            assert!(r.start <= r.end && r.end <= len);
        }
    }
    if let Ok(r) = SupervisionRegime::from_str(s) {
        assert_eq!(SupervisionRegime::from_str(&r.to_string()).expect("display reparses"), r);
    }
}

pub fn curve_csv(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(points) = read_curve_csv(s) else { return };
    let xs: Vec<f64> = points.iter().map(|p| p.lsp).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    if let Ok(k) = find_knee(&xs, &ys, 0.0) {
        assert_eq!(k.difference.len(), xs.len());
        if let Some(x) = k.knee_x {
            assert!(xs.contains(&x));
        }
    }
}

pub fn train_config(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(cfg) = toml::from_str::<TrainConfig>(s) {
        let _ = cfg.validate();
    }
}
