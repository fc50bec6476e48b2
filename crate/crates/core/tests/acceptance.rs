//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs under `cargo test` (harness = false).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cotkd::analysis::{
    find_knee, full_sequence_position, relative_improvement, retention_ratio, run_audit, AuditConfig, AuditSample,
    AuditVerdict, StubJudge,
};
use cotkd::corpus::{
    generate_synthetic_corpus, segment, split_train_valid, SegmentedExample, SyntheticCorpusConfig, Tokenizer,
    TokenizerSpec,
};
use cotkd::cost::{flops_per_step, grid_gpu_hours, memory_estimate, CostConstants, GridSpec, ModelShape};
use cotkd::kdloss::{hard_loss, soft_loss, LogitsMatrix, Reduction};
use cotkd::microlm::{forward, init_model, loss_and_grads, ModelConfig, ModelParams};
use cotkd::supervision::{
    build_mask, lead_span_len, truncate, SupervisionMask, SupervisionRegime, TruncationPolicy,
};
use cotkd::trainer::{train, Teacher, TrainConfig, TrainOutcome};
use cotkd::Error;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

// ---------------------------------------------------------------------------
// AC1: soft and hard losses against direct summation

fn oracle_losses(t: &[Vec<f64>], s: &[Vec<f64>], labels: &[u32], mask: &[bool]) -> (f64, f64, usize) {
    // plain exp/log, no shifting: the logits drawn below are small
    let probs = |row: &[f64]| {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        row.iter().map(|v| v.exp() / z).collect::<Vec<_>>()
    };
    let (mut kl, mut nll, mut n) = (0.0, 0.0, 0);
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let (pt, ps) = (probs(&t[i]), probs(&s[i]));
        for v in 0..pt.len() {
            if pt[v] > 0.0 {
                kl += pt[v] * (pt[v].ln() - ps[v].ln());
            }
        }
        nll -= ps[labels[i] as usize].ln();
        n += 1;
    }
    (kl, nll, n)
}

fn ac1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 200 {
        let vocab = rng.gen_range(2..=8);
        let rows = rng.gen_range(1..=6);
        let draw = |rng: &mut ChaCha8Rng| (0..rows).map(|_| (0..vocab).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect::<Vec<Vec<f64>>>();
        let (t, s) = (draw(&mut rng), draw(&mut rng));
        let labels: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..vocab as u32)).collect();
        let bits: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.7)).collect();
        if !bits.iter().any(|&b| b) {
            continue;
        }
        let mask = SupervisionMask { bits: bits.clone() };
        let (tm, sm) = (LogitsMatrix::from_rows(&t).map_err(err)?, LogitsMatrix::from_rows(&s).map_err(err)?);
        let (kl, nll, n) = oracle_losses(&t, &s, &labels, &bits);
        for (reduction, scale) in [(Reduction::Sum, 1.0), (Reduction::Mean, 1.0 / n as f64)] {
            let soft = soft_loss(&tm, &sm, &mask, reduction).map_err(err)?;
            let hard = hard_loss(&sm, &labels, &mask, reduction).map_err(err)?;
            worst = worst.max(rel_err(soft, kl * scale)).max(rel_err(hard, nll * scale));
        }
        cases += 1;
    }
    ensure(worst <= 1e-10, || format!("max relative error {worst:.3e} > 1e-10"))?;
    Ok(format!("max relative error {worst:.2e} over {cases} instances, sum and mean"))
}

// ---------------------------------------------------------------------------
// AC2: analytic gradients against central differences, per tensor

fn ac2() -> Check {
    let mut c = ModelConfig::new(13, 8, 2, 2, 10, 21);
    c.d_ff = 12;
    c.init_std = 0.5;
    let mut p = init_model(&c).map_err(err)?;
    ensure(p.len() <= 5000, || format!("model has {} parameters", p.len()))?;
    let mut tc = c.clone();
    tc.seed = 22;
    let teacher_model = init_model(&tc).map_err(err)?;
    let toks: Vec<u32> = vec![4, 12, 0, 7, 7, 3, 9, 1, 11, 5];
    let teacher = forward(&teacher_model, &toks).map_err(err)?;
    let mask = SupervisionMask {
        bits: vec![true, true, false, true, false, true, true, false, true],
    };
    let loss = |p: &ModelParams| -> Result<f64, String> {
        Ok(loss_and_grads(p, &toks, &mask, 0.5, Some(&teacher), Reduction::Mean).map_err(err)?.0.combined)
    };
    let (_, g) = loss_and_grads(&p, &toks, &mask, 0.5, Some(&teacher), Reduction::Mean).map_err(err)?;
    let eps = 1e-5;
    let mut worst = (0.0f64, String::new());
    let tensors = p.layout().tensors.clone();
    for t in &tensors {
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in t.range() {
            let orig = p.data[i];
            p.data[i] = orig + eps;
            let up = loss(&p)?;
            p.data[i] = orig - eps;
            let down = loss(&p)?;
            p.data[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            diff += (fd - g[i]).powi(2);
            norm += fd.powi(2).max(g[i].powi(2));
        }
        let rel = if norm == 0.0 { diff.sqrt() } else { (diff / norm).sqrt() };
        if rel > worst.0 {
            worst = (rel, t.name.clone());
        }
    }
    ensure(worst.0 <= 1e-4, || format!("tensor {} relative error {:.3e} > 1e-4", worst.1, worst.0))?;
    Ok(format!(
        "{} tensors, {} parameters, worst relative error {:.2e} ({})",
        tensors.len(),
        p.len(),
        worst.0,
        worst.1
    ))
}

// ---------------------------------------------------------------------------
// AC3: mask algebra

fn byte_tok() -> Tokenizer {
    TokenizerSpec::default().build().expect("default tokenizer")
}

fn random_example(rng: &mut ChaCha8Rng, tok: &Tokenizer, i: usize) -> SegmentedExample {
    let (p, c, a) = (rng.gen_range(0..20), rng.gen_range(0..40), rng.gen_range(0..20));
    let text = format!("{}<think>{}</think>{}", "p".repeat(p), "c".repeat(c), "a".repeat(a));
    segment(format!("r{i}"), &text, tok).expect("well-formed")
}

fn ac3() -> Check {
    use SupervisionRegime::*;
    let tok = byte_tok();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let ex = random_example(&mut rng, &tok, i);
        let labels = ex.len() - 1;
        // oracle: label row t is supervised iff token t+1 lies in a chosen span
        let oracle = |r: SupervisionRegime| -> Vec<bool> {
            let (p, c, a) = r.sections();
            (0..labels)
                .map(|t| {
                    let k = t + 1;
                    (p && ex.prompt_span().contains(k)) || (c && ex.cot_span().contains(k)) || (a && ex.answer_span().contains(k))
                })
                .collect()
        };
        let mut masks = BTreeMap::new();
        for r in SupervisionRegime::ALL {
            let want = oracle(r);
            let got = match build_mask(&ex, r) {
                Ok(m) => m.bits,
                Err(Error::DegenerateRegime { .. }) => vec![false; labels],
                Err(e) => return Err(format!("{}: {e}", ex.id)),
            };
            ensure(got == want, || format!("{} {r}: mask differs from span oracle", ex.id))?;
            masks.insert(r.label(), got);
        }
        let m = |r: SupervisionRegime| &masks[r.label()];
        for t in 0..labels {
            let (a, pa, cot, cota, pcot, all) = (m(A)[t], m(PA)[t], m(Cot)[t], m(CotA)[t], m(PCot)[t], m(PCotA)[t]);
            let prompt = pa && !a;
            let ok = !(cot && a)
                && !(prompt && cot)
                && !(prompt && a)
                && cota == (cot || a)
                && pcot == (prompt || cot)
                && all == (pcot || a)
                && all == (pa || cot)
                && all;
            ensure(ok, || format!("{}: identity violated at label {t}", ex.id))?;
        }
    }
    for t in 2..=512usize {
        let (l, r) = (TruncationPolicy::LeftHalf.kept_range(t), TruncationPolicy::RightHalf.kept_range(t));
        ensure(l.start == 0 && l.end == r.start && r.end == t && !l.is_empty() && !r.is_empty(), || {
            format!("T={t}: left {l:?} right {r:?} do not partition")
        })?;
    }
    Ok("1000 examples x 6 regimes match the span oracle and all identities; halves partition T=2..512".into())
}

// ---------------------------------------------------------------------------
// AC4: truncation law

fn ac4() -> Check {
    for k in 1..=10usize {
        let p = k as f64 / 10.0;
        let policy = TruncationPolicy::lsp(p).map_err(err)?;
        for t in 1..=512usize {
            // exact integer reference for ceil(k*T/10)
            let want = (k * t).div_ceil(10);
            let ids: Vec<u32> = (0..t as u32).collect();
            let got = lead_span_len(p, t);
            let kept = truncate(&ids, policy).map_err(err)?;
            ensure(got == want && kept.token_ids.len() == want && kept.token_ids[..] == ids[..want], || {
                format!("p={p} T={t}: kept {got}, reference {want}")
            })?;
            if k == 10 {
                ensure(kept.token_ids == ids, || format!("LSP(1.0) altered T={t}"))?;
            }
        }
    }
    Ok("ceil(p*T) exact for p in 0.1..1.0, T in 1..512; LSP(1.0) is the identity".into())
}

// ---------------------------------------------------------------------------
// AC5: published arithmetic

fn ac5() -> Check {
    let within = |name: &str, got: f64, want: f64, tol: f64| {
        ensure((got - want).abs() <= tol, || format!("{name}: {got} not within {tol} of {want}"))
    };
    within("retention", retention_ratio(0.1771, 0.2026).map_err(err)?, 0.874, 1e-3)?;
    within("improvement a", relative_improvement(16.98, 13.39).map_err(err)?, 26.8, 0.1)?;
    within("improvement b", relative_improvement(19.79, 18.18).map_err(err)?, 8.9, 0.1)?;
    within("position a", full_sequence_position(0.047, 0.766, 0.505).map_err(err)?, 0.433, 1e-3)?;
    within("position b", full_sequence_position(0.056, 0.766, 0.475).map_err(err)?, 0.420, 1e-3)?;
    within("position c", full_sequence_position(0.061, 0.717, 0.668).map_err(err)?, 0.540, 1e-3)?;
    let spec = |runs: f64| GridSpec {
        runs,
        train_hours: 18.0,
        train_gpus: 8.0,
        eval_hours: 17.0,
        eval_gpus: 2.0,
        n_benchmarks: 2.0,
    };
    let one = grid_gpu_hours(&spec(1.0)).map_err(err)?;
    within("gpu hours per run", one.gpu_hours_per_run, 212.0, 0.0)?;
    let rq1 = grid_gpu_hours(&spec(36.0)).map_err(err)?.total_gpu_hours;
    let rq2 = grid_gpu_hours(&spec(106.0)).map_err(err)?.total_gpu_hours;
    within("gpu hours total", rq1 + rq2, 30104.0, 0.0)?;
    within("gpu hours total (142 runs)", grid_gpu_hours(&spec(142.0)).map_err(err)?.total_gpu_hours, 30104.0, 0.0)?;
    Ok("0.874, 26.8, 8.9, 0.433/0.420/0.540, 212 per run, 30104 total".into())
}

// ---------------------------------------------------------------------------
// AC6: knee detection

fn brute_knee(xs: &[f64], ys: &[f64]) -> usize {
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let ylo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let yhi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..xs.len() {
        let d = (ys[i] - ylo) / (yhi - ylo) - (xs[i] - x0) / (x1 - x0);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn ac6() -> Check {
    let xs: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    for ys in [xs.iter().map(|x| 3.0 * x - 1.0).collect::<Vec<_>>(), vec![0.25; 10]] {
        let k = find_knee(&xs, &ys, 0.0).map_err(err)?;
        ensure(!k.found && k.knee_x.is_none(), || format!("flat curve reported a knee at {:?}", k.knee_x))?;
    }
    let sqrt: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
    let k = find_knee(&xs, &sqrt, 0.0).map_err(err)?;
    let want = xs[brute_knee(&xs, &sqrt)];
    ensure(k.found && k.knee_x == Some(want), || format!("sqrt knee {:?}, brute force {want}", k.knee_x))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for c in 0..100 {
        let mut inc: Vec<f64> = (0..10).map(|_| rng.gen_range(0.01..1.0)).collect();
        inc.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let ys: Vec<f64> = inc.iter().scan(0.0, |s, v| {
            *s += v;
            Some(*s)
        }).collect();
        let (a, b) = (rng.gen_range(0.01..100.0), rng.gen_range(-50.0..50.0));
        let scaled: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
        let (k1, k2) = (find_knee(&xs, &ys, 0.0).map_err(err)?, find_knee(&xs, &scaled, 0.0).map_err(err)?);
        ensure(k1.knee_x == k2.knee_x, || format!("curve {c}: knee {:?} became {:?} under a={a}, b={b}", k1.knee_x, k2.knee_x))?;
        ensure(k1.knee_x.is_none() || k1.knee_index == Some(brute_knee(&xs, &ys)), || format!("curve {c}: not the brute-force argmax"))?;
    }
    Ok(format!("flat curves not found; sqrt knee at {want} (brute-force argmax); 100 random concave curves invariant"))
}

// ---------------------------------------------------------------------------
// AC7 / AC8: micro distillation experiments

struct Setup {
    train_set: Vec<SegmentedExample>,
    valid: Vec<SegmentedExample>,
    vocab: usize,
    max_len: usize,
    teacher: TrainOutcome,
    teacher_seconds: f64,
}

const D_MODEL: usize = 32;
const LR: f64 = 1e-2;
const STUDENT_EPOCHS: usize = 6;
const SEEDS: u64 = 5;

fn setup() -> Result<Setup, String> {
    let started = Instant::now();
    let corpus = generate_synthetic_corpus(&SyntheticCorpusConfig {
        n_examples: 500,
        derivation_position: 0.45,
        seed: 1,
        ..SyntheticCorpusConfig::default()
    })
    .map_err(err)?;
    let vocab = corpus.tokenizer.build().map_err(err)?.vocab_size();
    let max_len = corpus.examples.iter().map(|e| e.len()).max().unwrap_or(1);
    let (train_set, valid) = split_train_valid(corpus.examples, 50, 0).map_err(err)?;
    let mut tc = ModelConfig::new(vocab, D_MODEL, 4, 4, max_len, 100);
    tc.d_ff = 2 * D_MODEL;
    let mut cfg = TrainConfig::new(0);
    cfg.lambda = 0.0;
    cfg.lr = LR;
    cfg.weight_decay = 0.0;
    cfg.epochs = 10;
    let teacher = train(&train_set, &valid, Teacher::None, &tc, &cfg).map_err(err)?;
    Ok(Setup {
        train_set,
        valid,
        vocab,
        max_len,
        teacher,
        teacher_seconds: started.elapsed().as_secs_f64(),
    })
}

fn student(s: &Setup, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::new(s.vocab, D_MODEL, 2, 4, s.max_len, 1000 + seed);
    c.d_ff = 2 * D_MODEL;
    c
}

fn student_cfg(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(seed);
    cfg.lr = LR;
    cfg.weight_decay = 0.0;
    cfg.epochs = STUDENT_EPOCHS;
    cfg
}

fn ac7(s: &Setup) -> Check {
    let mut ordered = 0;
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let mut losses = Vec::new();
        for policy in [TruncationPolicy::lsp(1.0).map_err(err)?, TruncationPolicy::LeftHalf, TruncationPolicy::RightHalf] {
            let mut cfg = student_cfg(seed);
            cfg.truncation = policy;
            let o = train(&s.train_set, &[], Teacher::Model(&s.teacher.best), &student(s, seed), &cfg).map_err(err)?;
            losses.push(o.report.final_train_loss);
        }
        let ok = losses[0] < losses[1] && losses[1] < losses[2];
        ordered += ok as usize;
        rows.push(format!("s{seed}:{:.3}<{:.3}<{:.3}{}", losses[0], losses[1], losses[2], if ok { "" } else { "(x)" }));
    }
    let detail = format!("{ordered}/{SEEDS} seeds ordered LSP1.0 < Left < Right [{}]", rows.join(" "));
    ensure(ordered >= 4, || detail.clone())?;
    Ok(detail)
}

fn ac8(s: &Setup) -> Check {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let mut acc = Vec::new();
        for regime in [SupervisionRegime::CotA, SupervisionRegime::A] {
            let mut cfg = student_cfg(seed);
            cfg.regime = regime;
            let o = train(&s.train_set, &s.valid, Teacher::Model(&s.teacher.best), &student(s, seed), &cfg).map_err(err)?;
            let selected = o
                .report
                .validation
                .iter()
                .find(|v| v.step == o.report.selected.step)
                .ok_or("no validation record for the selected checkpoint")?;
            acc.push(selected.result.answer_accuracy);
        }
        let ok = acc[0] > acc[1];
        wins += ok as usize;
        rows.push(format!("s{seed}:{:.3}/{:.3}{}", acc[0], acc[1], if ok { "" } else { "(x)" }));
    }
    let detail = format!("{wins}/{SEEDS} seeds CoT+A > A on held-out answer tokens [{}]", rows.join(" "));
    ensure(wins >= 4, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// AC9: cost curves

fn ac9() -> Check {
    let k = CostConstants::default();
    let mut checked = 0;
    for (name, m, t) in [
        ("4B", ModelShape::dense_4b(), 512usize),
        ("4B", ModelShape::dense_4b(), 1024),
        ("8B", ModelShape::dense_8b(), 1024),
        ("8B", ModelShape::dense_8b(), 2048),
    ] {
        // dense-dominated: attention scores are a small share of the FLOPs
        let dense = k.dense_flops * m.n_params * t as f64;
        let share = 1.0 - dense / flops_per_step(&m, t, 1, &k);
        ensure(share < 0.1, || format!("{name} at T={t} is not dense-dominated (attention share {share:.3})"))?;
        for i in 1..=10 {
            let p = i as f64 / 10.0;
            let r = flops_per_step(&m, lead_span_len(p, t), 1, &k) / flops_per_step(&m, t, 1, &k);
            ensure(r >= p - 0.02 && r <= p + 0.05, || format!("{name} T={t} p={p}: ratio {r:.4}"))?;
            checked += 1;
        }
    }
    for m in [ModelShape::dense_4b(), ModelShape::dense_8b()] {
        for t in [1usize, 7, 128, 1000, 2048] {
            let a = memory_estimate(&m, t, 2, &k).attention_activation_term;
            let b = memory_estimate(&m, 2 * t, 2, &k).attention_activation_term;
            ensure(b == 4.0 * a, || format!("attention term {a} -> {b} when T {t} doubles"))?;
        }
    }
    Ok(format!("{checked} FLOPs ratios within [p-0.02, p+0.05]; attention memory exactly x4 on doubling"))
}

// ---------------------------------------------------------------------------
// AC10: byte-identical reruns through the CLI

fn cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cotkd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(err)?;
    ensure(out.status.success(), || {
        format!("cotkd {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(err)? {
        let path = e.map_err(err)?.path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        // the manifest carries wall time and a timestamp by design
        if name != "manifest.json" {
            files.insert(name, fs::read(&path).map_err(err)?);
        }
    }
    Ok(files)
}

fn same_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let (x, y) = (dir_bytes(a)?, dir_bytes(b)?);
    ensure(x.keys().eq(y.keys()), || format!("{} and {} hold different files", a.display(), b.display()))?;
    for (name, bytes) in &x {
        ensure(bytes == &y[name], || format!("{name} differs between {} and {}", a.display(), b.display()))?;
    }
    Ok(x.len())
}

fn ac10() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let root = tmp.path();
    cli(&["synth", "--n-examples", "40", "--seed", "3", "--out", "syn"], root)?;
    for run in ["p1", "p2"] {
        cli(
            &["prepare", "--input", "syn/records.jsonl", "--tokenizer", "syn/tokenizer.json", "--n-valid", "8", "--seed", "5", "--out", run],
            root,
        )?;
    }
    let n_prepare = same_dirs(&root.join("p1"), &root.join("p2"))?;
    let config = "train_file = \"p1/train.jsonl\"\nvalid_file = \"p1/valid.jsonl\"\ntokenizer = \"syn/tokenizer.json\"\n\
                  [student]\nvocab_size = 428\nd_model = 16\nn_layers = 1\nn_heads = 2\nmax_seq_len = 128\nseed = 9\n\
                  [train]\nepochs = 1\nlr = 0.01\nlambda = 0.0\nseed = 4\neval_every = 2\n";
    fs::write(root.join("run.toml"), config).map_err(err)?;
    for run in ["t1", "t2"] {
        cli(&["train", "--config", "run.toml", "--regime", "cot+a", "--truncate", "lsp:0.5", "--dump-masks", "--out", run], root)?;
    }
    let n_train = same_dirs(&root.join("t1"), &root.join("t2"))?;
    cli(&["replay", "t1/manifest.json", "--out", "t3", "--check"], root)?;
    let n_replay = same_dirs(&root.join("t1"), &root.join("t3"))?;
    Ok(format!("prepare x2: {n_prepare} files identical; train x2: {n_train} files identical; replay: {n_replay} identical"))
}

// ---------------------------------------------------------------------------
// AC11: audit protocol with a canned judge

fn ac11() -> Check {
    let tok = byte_tok();
    let samples: Vec<AuditSample> = (0..100)
        .map(|i| AuditSample {
            id: format!("ot-{i:03}"),
            text: format!("What is {i} + 1?<think>wait, {i} + 1 = {}. recheck: yes.</think>The answer is {}.", i + 1, i + 1),
        })
        .collect();
    let mut stub = StubJudge::default();
    for (i, s) in samples.iter().enumerate() {
        // 1 prompt miss and 11 answer misses, every final answer matching
        let v = AuditVerdict {
            prompt_covered: i != 0,
            answer_covered: i % 9 != 1 || i > 91,
            final_answer_match: true,
            first_derivation: format!("{i} + 1 = {}", i + 1),
        };
        stub.insert(&s.id, serde_json::to_string(&v).map_err(err)?);
    }
    let report = run_audit(&samples, &tok, &stub, &AuditConfig::default()).map_err(err)?;
    let cols = (report.prompt_covered_pct, report.answer_covered_pct, report.final_answer_match_pct);
    ensure(cols == (99.0, 89.0, 100.0), || format!("coverage columns {cols:?}, expected (99, 89, 100)"))?;
    ensure(report.n_located == 100, || format!("{} derivations located", report.n_located))?;

    let bad = ["{\"is_question_fully_covered_by_t1\": true,", "not json", ""];
    let five = "{\"is_question_fully_covered_by_t1\":true,\"is_t2_fully_covered_by_t1\":true,\
                \"is_t2_final_answer_considered_final_in_t1\":true,\"first_derivation\":\"\",\"confidence\":1}";
    for raw in bad.iter().chain([&five]) {
        let mut broken = stub.clone();
        broken.insert("ot-042", *raw);
        match run_audit(&samples, &tok, &broken, &AuditConfig::default()) {
            Err(Error::JudgeProtocol(_)) => {}
            other => return Err(format!("malformed response {raw:?} gave {other:?}")),
        }
    }
    Ok(format!(
        "coverage {:.0}/{:.0}/{:.0} over {} samples; 4 malformed responses raise JudgeProtocolError",
        cols.0, cols.1, cols.2, report.n_samples
    ))
}

// ---------------------------------------------------------------------------

fn report(id: &str, title: &str, limit_secs: f64, extra_secs: f64, f: impl FnOnce() -> Check) -> bool {
    let started = Instant::now();
    let result = f();
    let secs = started.elapsed().as_secs_f64() + extra_secs;
    let (pass, detail) = match result {
        Ok(d) if secs < limit_secs => (true, d),
        Ok(d) => (false, format!("{d}; runtime {secs:.1} s exceeds {limit_secs} s")),
        Err(e) => (false, e),
    };
    println!("{id} {} {title}: {detail} [{secs:.2} s, limit {limit_secs} s]", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| f == id);
    let mut results = Vec::new();
    let run = |results: &mut Vec<bool>, id: &str, title: &str, limit: f64, extra: f64, f: &mut dyn FnMut() -> Check| {
        if wanted(id) {
            results.push(report(id, title, limit, extra, f));
        }
    };
    run(&mut results, "AC1", "loss oracle equivalence", 5.0, 0.0, &mut ac1);
    run(&mut results, "AC2", "gradient fidelity", 60.0, 0.0, &mut ac2);
    run(&mut results, "AC3", "mask algebra", 5.0, 0.0, &mut ac3);
    run(&mut results, "AC4", "truncation law", 5.0, 0.0, &mut ac4);
    run(&mut results, "AC5", "published arithmetic", 1.0, 0.0, &mut ac5);
    run(&mut results, "AC6", "kneedle", 5.0, 0.0, &mut ac6);
    if wanted("AC7") || wanted("AC8") {
        match setup() {
            Ok(s) => {
                let t = s.teacher_seconds;
                println!("(shared 4-layer teacher trained in {t:.1} s; counted in AC7 and AC8 runtimes)");
                run(&mut results, "AC7", "loss ordering", 15.0 * 60.0, t, &mut || ac7(&s));
                run(&mut results, "AC8", "section-supervision direction", 20.0 * 60.0, t, &mut || ac8(&s));
            }
            Err(e) => {
                for id in ["AC7", "AC8"] {
                    if wanted(id) {
                        println!("{id} FAIL teacher setup: {e}");
                        results.push(false);
                    }
                }
            }
        }
    }
    run(&mut results, "AC9", "cost curves", 1.0, 0.0, &mut ac9);
    run(&mut results, "AC10", "pipeline determinism", 120.0, 0.0, &mut ac10);
    run(&mut results, "AC11", "audit protocol", 5.0, 0.0, &mut ac11);
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
