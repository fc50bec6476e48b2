//! Desk-scale synthetic reasoning corpora.
//!
//! Each example asks for the largest of a few two-digit values attached to a
//! topic. The chain of thought restates the question, reasons with
//! topic-flavoured filler and a fixed number of self-reflection cues, derives
//! the answer at a planted relative position, and then spends the rest of its
//! budget on deterministic verification that repeats earlier values. The answer section
//! restates the result in a fixed form. Every word is a single vocabulary piece, so token
//! counts are known exactly while the text is being built.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    prepare_record, ChatTemplate, Message, RawRecord, Role, SegmentedExample, TokenizerSpec,
    THINK_CLOSE, THINK_OPEN,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    pub n_examples: usize,
    /// Seeds the topic inventory (which filler words belong to which topic).
    pub grammar_seed: u64,
    /// Target mean section lengths in tokens, including chat scaffolding
    /// and think tags.
    pub mean_prompt_tokens: usize,
    pub mean_cot_tokens: usize,
    pub mean_answer_tokens: usize,
    /// Relative position inside the CoT where the answer is first derived.
    pub derivation_position: f64,
    /// Self-reflection cues emitted before the derivation.
    pub n_reflections: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            n_examples: 100,
            grammar_seed: 0,
            mean_prompt_tokens: 16,
            mean_cot_tokens: 48,
            mean_answer_tokens: 10,
            derivation_position: 0.45,
            n_reflections: 2,
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.derivation_position > 0.0 && self.derivation_position < 1.0) {
            return bad(format!(
                "derivation_position must lie in (0,1), got {}",
                self.derivation_position
            ));
        }
        if self.mean_cot_tokens < 16 {
            return bad("mean_cot_tokens must be at least 16".into());
        }
        if self.mean_answer_tokens < 8 {
            return bad("mean_answer_tokens must be at least 8".into());
        }
        if self.mean_prompt_tokens < 1 {
            return bad("mean_prompt_tokens must be positive".into());
        }
        Ok(())
    }
}

/// What the generator planted in one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planted {
    /// Verbatim derivation substring inside the CoT text.
    pub derivation: String,
    /// Token index of the derivation inside the CoT (tags excluded).
    pub derivation_token: usize,
    /// CoT token count, tags excluded.
    pub cot_inner_tokens: usize,
    pub reflections: usize,
    pub answer: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub tokenizer: TokenizerSpec,
    pub records: Vec<RawRecord>,
    pub examples: Vec<SegmentedExample>,
    pub planted: Vec<Planted>,
}

const TOPICS: [&str; 8] = [
    " apples", " boats", " clocks", " drums", " lamps", " maps", " rivers", " tiles",
];
const TOPIC_WORDS: [&str; 32] = [
    " red", " green", " small", " heavy", " bright", " round", " old", " sharp", " soft", " tall",
    " quiet", " warm", " cold", " thin", " wide", " dark", " crates", " rows", " piles", " boxes",
    " pairs", " sets", " bags", " stacks", " near", " far", " inside", " under", " above", " along",
    " beside", " behind",
];
const STRUCTURE: [&str; 30] = [
    " find", " the", " largest", " of", " about", " .", " ,", " :", " so", " is", " question",
    " asks", " for", " compare", " with", " and", " consider", " verify", " checked", " answer",
    " final", " confirmed", " hmm", " let", " me", " that", " seems", " off", " holds", " step",
];
/// Each cue carries exactly one self-reflection keyword.
const CUES: [&[&str]; 5] = [
    &[" wait", " ,", " that", " seems", " off", " ."],
    &[" let", " me", " recheck", " ."],
    &[" let", " me", " reconsider", " ."],
    &[" hmm", " ,", " let", " me", " double-check", " ."],
    &[" hmm", " ,", " think", " again", " ."],
];
const CUE_WORDS: [&str; 6] = [" wait", " recheck", " reconsider", " double-check", " think", " again"];
const USER_SCAFFOLD: &str = "user\n";
const ASSISTANT_SCAFFOLD: &str = "assistant\n";
/// `<|im_start|> user\n … <|im_end|> \n <|im_start|> assistant\n`
const PROMPT_SCAFFOLD_TOKENS: usize = 6;
/// ` find the largest of` + values + ` about <topic> .`
const QUESTION_FIXED_TOKENS: usize = 7;
/// `<|im_end|> \n` closing the assistant turn.
const ANSWER_SCAFFOLD_TOKENS: usize = 2;

fn number(v: u32) -> String {
    format!(" {v}")
}

/// Every multi-byte piece the generator can emit.
pub fn synthetic_vocab() -> Vec<String> {
    let mut vocab: Vec<String> = vec![USER_SCAFFOLD.into(), ASSISTANT_SCAFFOLD.into()];
    vocab.extend(STRUCTURE.iter().map(|s| s.to_string()));
    vocab.extend(CUE_WORDS.iter().map(|s| s.to_string()));
    vocab.extend(TOPICS.iter().map(|s| s.to_string()));
    vocab.extend(TOPIC_WORDS.iter().map(|s| s.to_string()));
    vocab.extend((10..100).map(number));
    vocab
}

struct Grammar {
    /// Four filler words per topic.
    topic_words: Vec<Vec<&'static str>>,
}

impl Grammar {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut words = TOPIC_WORDS.to_vec();
        words.shuffle(&mut rng);
        Self {
            topic_words: words.chunks(4).map(|c| c.to_vec()).collect(),
        }
    }
}

/// Builds the corpus, then runs every record through the regular ingestion
/// path so the returned examples are exactly what `prepare` would produce.
pub fn generate_synthetic_corpus(config: &SyntheticCorpusConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let spec = TokenizerSpec::with_vocab(synthetic_vocab());
    let tokenizer = spec.build()?;
    let template = ChatTemplate::default();
    let grammar = Grammar::new(config.grammar_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n_values = config
        .mean_prompt_tokens
        .saturating_sub(PROMPT_SCAFFOLD_TOKENS + QUESTION_FIXED_TOKENS)
        .max(2);
    let cot_inner_mean = config.mean_cot_tokens - 2;
    let answer_mean = config.mean_answer_tokens - ANSWER_SCAFFOLD_TOKENS;

    let mut records = Vec::with_capacity(config.n_examples);
    let mut examples = Vec::with_capacity(config.n_examples);
    let mut planted = Vec::with_capacity(config.n_examples);
    for idx in 0..config.n_examples {
        let (record, plant) = build_example(
            &mut rng,
            &grammar,
            config,
            idx,
            n_values,
            cot_inner_mean,
            answer_mean,
        );
        let id = record.id.clone().expect("generator sets ids");
        let ex = prepare_record(id, &record, &template, &tokenizer)?;
        debug_assert_eq!(ex.cot_inner_ids().len(), plant.cot_inner_tokens);
        records.push(record);
        examples.push(ex);
        planted.push(plant);
    }
    Ok(SyntheticCorpus {
        tokenizer: spec,
        records,
        examples,
        planted,
    })
}

fn jitter(rng: &mut ChaCha8Rng, mean: usize) -> usize {
    let spread = (mean as f64 * 0.2).round() as usize;
    rng.gen_range(mean - spread..=mean + spread)
}

fn build_example(
    rng: &mut ChaCha8Rng,
    grammar: &Grammar,
    config: &SyntheticCorpusConfig,
    idx: usize,
    n_values: usize,
    cot_inner_mean: usize,
    answer_mean: usize,
) -> (RawRecord, Planted) {
    let topic_idx = rng.gen_range(0..TOPICS.len());
    let topic = TOPICS[topic_idx];
    let words = &grammar.topic_words[topic_idx];
    let mut values: Vec<u32> = Vec::with_capacity(n_values);
    while values.len() < n_values {
        let v = rng.gen_range(10..100);
        if !values.contains(&v) {
            values.push(v);
        }
    }
    let largest = *values.iter().max().expect("at least two values");

    let mut question: Vec<String> = [" find", " the", " largest", " of"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    question.extend(values.iter().map(|&v| number(v)));
    question.extend([" about", topic, " ."].iter().map(|s| s.to_string()));

    // chain of thought
    let cot_len = jitter(rng, cot_inner_mean);
    let target = ((config.derivation_position * cot_len as f64).round() as usize).max(1);
    let mut cot: Vec<String> = [" the", " question", " asks", " for", " the", " largest", " of"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cot.extend(values.iter().map(|&v| number(v)));
    cot.push(" .".into());

    let cues: Vec<&[&str]> = (0..config.n_reflections)
        .map(|_| CUES[rng.gen_range(0..CUES.len())])
        .collect();
    let cue_tokens: usize = cues.iter().map(|c| c.len()).sum();
    let filler_budget = target.saturating_sub(cot.len() + cue_tokens);
    let mut fillers: Vec<Vec<String>> = Vec::new();
    let mut filled = 0;
    while filled < filler_budget {
        let mut s = reasoning_sentence(rng, &values, words, topic);
        s.truncate(filler_budget - filled);
        filled += s.len();
        fillers.push(s);
    }
    // scatter the cues between filler sentences
    let mut slots: Vec<Option<usize>> = (0..fillers.len()).map(Some).collect();
    for _ in 0..cues.len() {
        let at = rng.gen_range(0..=slots.len());
        slots.insert(at, None);
    }
    let mut cue_iter = cues.iter();
    for slot in slots {
        match slot {
            Some(f) => cot.extend(fillers[f].iter().cloned()),
            None => cot.extend(cue_iter.next().expect("one cue per slot").iter().map(|s| s.to_string())),
        }
    }
    let derivation_token = cot.len();
    let derivation_words: Vec<String> = [" so", " the", " largest", " is"]
        .iter()
        .map(|s| s.to_string())
        .chain([number(largest)])
        .collect();
    let derivation = derivation_words.concat().trim_start().to_string();
    cot.extend(derivation_words);
    cot.push(" .".into());
    let mut n = 0;
    while cot.len() < cot_len {
        cot.extend(verification_sentence(n, &values, largest, topic));
        n += 1;
    }
    cot.truncate(cot_len.max(derivation_token + 6));

    // answer
    let answer_len = answer_mean.max(5);
    let mut answer: Vec<String> = [" the", " largest", " is"]
        .iter()
        .map(|s| s.to_string())
        .chain([number(largest), " .".into()])
        .collect();
    let mut n = 0;
    while answer.len() < answer_len {
        answer.extend(if n % 2 == 0 {
            vec![" final".to_string(), " answer".into(), number(largest), " .".into()]
        } else {
            vec![" confirmed".to_string(), " with".into(), topic.into(), " .".into()]
        });
        n += 1;
    }
    answer.truncate(answer_len);

    let cot_inner_tokens = cot.len();
    let assistant = format!("{THINK_OPEN}{}{THINK_CLOSE}{}", cot.concat(), answer.concat());
    let record = RawRecord {
        id: Some(format!("syn-{idx:06}")),
        messages: vec![
            Message {
                role: Role::User,
                content: question.concat(),
            },
            Message {
                role: Role::Assistant,
                content: assistant,
            },
        ],
    };
    let plant = Planted {
        derivation,
        derivation_token,
        cot_inner_tokens,
        reflections: cues.len(),
        answer: largest,
    };
    (record, plant)
}

fn reasoning_sentence(
    rng: &mut ChaCha8Rng,
    values: &[u32],
    words: &[&'static str],
    topic: &'static str,
) -> Vec<String> {
    let pick = |rng: &mut ChaCha8Rng| number(values[rng.gen_range(0..values.len())]);
    let word = |rng: &mut ChaCha8Rng| words[rng.gen_range(0..words.len())].to_string();
    match rng.gen_range(0..3) {
        0 => vec![" compare".into(), pick(rng), " with".into(), pick(rng), " .".into()],
        1 => vec![" consider".into(), pick(rng), word(rng), " .".into()],
        _ => vec![" the".into(), topic.into(), word(rng), word(rng), " .".into()],
    }
}

/// The `n`th verification sentence. Fully determined by earlier context,
/// so it is cheap to predict with the prompt in view and expensive without.
fn verification_sentence(n: usize, values: &[u32], largest: u32, topic: &'static str) -> Vec<String> {
    match n % 3 {
        0 => {
            let mut s = vec![" verify".to_string(), " :".into()];
            s.extend(values.iter().map(|&v| number(v)));
            s.extend([" checked".into(), " ,".into(), number(largest), " holds".into(), " .".into()]);
            s
        }
        1 => vec![" so".into(), number(largest), " is".into(), " confirmed".into(), " .".into()],
        _ => vec![" step".into(), " with".into(), topic.into(), " holds".into(), " .".into()],
    }
}
