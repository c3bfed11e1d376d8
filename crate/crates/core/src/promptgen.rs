//! Instruction/answer text pairs.
//!
//! Recommendation samples list the user's liked and disliked items, name a
//! target item and expect "Yes." or "No.". General samples come from a
//! closed family of procedurally generated tasks whose answers are computed,
//! so the first tuning stage has checkable supervision.

use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Preference, RecInstance};
use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

pub const YES: &str = "Yes.";
pub const NO: &str = "No.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    General,
    Rec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningSample {
    #[serde(rename = "input")]
    pub instruction_input: String,
    #[serde(rename = "output")]
    pub instruction_output: String,
    pub kind: SampleKind,
}

const PLACEHOLDERS: [&str; 3] = ["{liked}", "{disliked}", "{target}"];
const SECTION_BREAK: &str = "\n---\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub instruction_text: String,
    /// Must contain each of `{liked}`, `{disliked}` and `{target}` exactly once.
    pub input_layout: String,
    pub joiner: String,
}

impl PromptTemplate {
    /// The rec-tuning template with the item noun set for `domain`.
    pub fn for_domain(domain: Domain) -> Self {
        let noun = domain.noun();
        PromptTemplate {
            instruction_text: format!(
                "Given the user's historical interactions, please determine whether the user will enjoy the target new {noun} by answering \"Yes\" or \"No\"."
            ),
            input_layout: format!(
                "User's liked items: {{liked}}.\nUser's disliked items: {{disliked}}.\nTarget new {noun}: {{target}}"
            ),
            joiner: "\n".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in PLACEHOLDERS {
            let count = self.input_layout.matches(p).count();
            if count != 1 {
                return Err(Error::Template(format!("placeholder {p} appears {count} times, expected once")));
            }
        }
        Ok(())
    }

    /// Parse the on-disk form: instruction text, a line holding only `---`,
    /// then the input layout. The joiner is a single newline.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.strip_suffix('\n').unwrap_or(text);
        let (instruction, layout) = text
            .split_once(SECTION_BREAK)
            .ok_or_else(|| Error::Template("missing `---` line between instruction and input layout".into()))?;
        let template = PromptTemplate {
            instruction_text: instruction.to_string(),
            input_layout: layout.to_string(),
            joiner: "\n".into(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn to_file_string(&self) -> String {
        format!("{}{SECTION_BREAK}{}\n", self.instruction_text, self.input_layout)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn join(&self, input: &str) -> String {
        if input.is_empty() {
            self.instruction_text.clone()
        } else {
            format!("{}{}{}", self.instruction_text, self.joiner, input)
        }
    }
}

/// One template per domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub movie: PromptTemplate,
    pub book: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet { movie: PromptTemplate::for_domain(Domain::Movie), book: PromptTemplate::for_domain(Domain::Book) }
    }
}

impl TemplateSet {
    pub fn get(&self, domain: Domain) -> &PromptTemplate {
        match domain {
            Domain::Movie => &self.movie,
            Domain::Book => &self.book,
        }
    }
}

fn item_list<'a>(items: impl Iterator<Item = &'a str>) -> String {
    let joined = items.collect::<Vec<_>>().join(", ");
    if joined.is_empty() {
        "None".into()
    } else {
        joined
    }
}

/// Render a (padded) instance into a rec-tuning sample.
pub fn render_rec_sample(instance: &RecInstance, template: &PromptTemplate) -> Result<TuningSample> {
    template.validate()?;
    let by_label =
        |want: Preference| item_list(instance.history.iter().filter(move |h| h.label == want).map(|h| h.text.as_str()));
    let input = template
        .input_layout
        .replacen("{liked}", &by_label(Preference::Like), 1)
        .replacen("{disliked}", &by_label(Preference::Dislike), 1)
        .replacen("{target}", &instance.target_text, 1);
    Ok(TuningSample {
        instruction_input: template.join(&input),
        instruction_output: if instance.label.is_like() { YES } else { NO }.into(),
        kind: SampleKind::Rec,
    })
}

/// One general instruction task with its computed answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneralTask {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFamily {
    Reverse,
    Add,
    CountLetter,
    Parity,
    Sentiment,
    Uppercase,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 6] = [
        TaskFamily::Reverse,
        TaskFamily::Add,
        TaskFamily::CountLetter,
        TaskFamily::Parity,
        TaskFamily::Sentiment,
        TaskFamily::Uppercase,
    ];
}

const POSITIVE_WORDS: [&str; 6] = ["great", "lovely", "fun", "superb", "warm", "bright"];
const NEGATIVE_WORDS: [&str; 6] = ["awful", "dull", "bad", "boring", "cold", "grim"];
const FILLER_WORDS: [&str; 6] = ["a", "very", "truly", "quite", "so", "really"];

fn random_word(rng: &mut crate::rng::Rng, min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect()
}

impl GeneralTask {
    pub fn generate(family: TaskFamily, rng: &mut crate::rng::Rng) -> Self {
        let (instruction, input, output) = match family {
            TaskFamily::Reverse => {
                let w = random_word(rng, 3, 6);
                ("Reverse the string.", w.clone(), w.chars().rev().collect())
            }
            TaskFamily::Add => {
                let (a, b) = (rng.random_range(0..10u32), rng.random_range(0..10u32));
                ("Add the numbers.", format!("{a} and {b}"), (a + b).to_string())
            }
            TaskFamily::CountLetter => {
                let w: String = (0..rng.random_range(3..=7))
                    .map(|_| if rng.random_bool(0.4) { 'a' } else { char::from(b'b' + rng.random_range(0..4u8)) })
                    .collect();
                let count = w.matches('a').count();
                ("Count the letter a.", w, count.to_string())
            }
            TaskFamily::Parity => {
                let n = rng.random_range(0..100u32);
                let answer = if n % 2 == 0 { YES } else { NO };
                ("Is the number even? Answer Yes or No.", n.to_string(), answer.to_string())
            }
            TaskFamily::Sentiment => {
                let positive = rng.random_bool(0.5);
                let pool = if positive { &POSITIVE_WORDS } else { &NEGATIVE_WORDS };
                let text = format!("{} {}", FILLER_WORDS.choose(rng).unwrap(), pool.choose(rng).unwrap());
                let label = if positive { "Positive" } else { "Negative" };
                ("Classify the sentiment.", text, label.to_string())
            }
            TaskFamily::Uppercase => {
                let w = random_word(rng, 3, 6);
                ("Convert to uppercase.", w.clone(), w.to_uppercase())
            }
        };
        GeneralTask { instruction: instruction.into(), input, output }
    }
}

/// `n` general tasks drawn uniformly from [`TaskFamily::ALL`].
pub fn generate_tasks(n: usize, seed: u64) -> Vec<GeneralTask> {
    let mut rng = seeded(seed, Stream::GeneralTasks);
    (0..n)
        .map(|_| {
            let family = *TaskFamily::ALL.choose(&mut rng).unwrap();
            GeneralTask::generate(family, &mut rng)
        })
        .collect()
}

pub fn generate_general_tasks(n: usize, seed: u64) -> Vec<TuningSample> {
    generate_tasks(n, seed).iter().map(render_general_sample).collect()
}

/// Join instruction and input with the rec template's joiner.
pub fn render_general_sample(task: &GeneralTask) -> TuningSample {
    let joiner = PromptTemplate::for_domain(Domain::Movie).joiner;
    let instruction_input = if task.input.is_empty() {
        task.instruction.clone()
    } else {
        format!("{}{joiner}{}", task.instruction, task.input)
    };
    TuningSample {
        instruction_input,
        instruction_output: task.output.trim_end().to_string(),
        kind: SampleKind::General,
    }
}

pub fn write_samples_jsonl<W: Write>(mut out: W, samples: &[TuningSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_samples_jsonl<R: BufRead>(input: R) -> Result<Vec<TuningSample>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| Error::io("<jsonl>", e))?;
            Ok(serde_json::from_str(&l)?)
        })
        .collect()
}
