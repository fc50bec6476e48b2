//! Replays the checked-in fuzz corpus through the fuzz entry points, then
//! a few thousand seeded byte mutations of it, so decoder panics surface
//! under plain `cargo test`.

#[path = "../fuzz/src/lib.rs"]
mod targets;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Entry = fn(&[u8]);

const TARGETS: [(&str, Entry); 11] = [
    ("raw_record", targets::raw_record),
    ("tokenizer_spec", targets::tokenizer_spec),
    ("segmented_line", targets::segmented_line),
    ("segment_text", targets::segment_text),
    ("logits_file", targets::logits_file),
    ("checkpoint_file", targets::checkpoint_file),
    ("judge_verdict", targets::judge_verdict),
    ("stub_verdicts", targets::stub_verdicts),
    ("policy_strings", targets::policy_strings),
    ("curve_csv", targets::curve_csv),
    ("train_config", targets::train_config),
];

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut paths: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths.iter().map(|p| fs::read(p).unwrap()).collect()
}

fn mutate(rng: &mut ChaCha8Rng, base: &[u8]) -> Vec<u8> {
    let mut v = base.to_vec();
    for _ in 0..rng.gen_range(1..4) {
        match rng.gen_range(0..4) {
            0 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v[i] ^= 1 << rng.gen_range(0..8);
            }
            1 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v.truncate(i);
            }
            2 => {
                let i = rng.gen_range(0..=v.len());
                const ALPHABET: &[u8] = b"{}[]\":,<>/0123456789-.e tn";
                v.insert(i, ALPHABET[rng.gen_range(0..ALPHABET.len())]);
            }
            _ if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v.remove(i);
            }
            _ => v.push(rng.gen()),
        }
    }
    v
}

#[test]
fn every_target_has_seeds() {
    for (name, _) in TARGETS {
        assert!(!seeds(name).is_empty(), "{name} has no seeds");
    }
}

#[test]
fn seeds_do_not_panic() {
    for (name, run) in TARGETS {
        for s in seeds(name) {
            run(&s);
        }
    }
}

#[test]
fn mutated_seeds_do_not_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    for (name, run) in TARGETS {
        let base = seeds(name);
        for _ in 0..300 {
            let s = &base[rng.gen_range(0..base.len())];
            run(&mutate(&mut rng, s));
        }
    }
}
