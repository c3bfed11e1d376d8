//! Byte-level tokenization and instruction/answer packing.
//!
//! ```text
//! cargo run --example tokenize
//! ```

use tallrec::promptgen::{SampleKind, TuningSample};
use tallrec::tokenizer::{decode, encode, pack_pair, pack_prompt, BOS, EOS, VOCAB_SIZE};

fn main() -> tallrec::Result<()> {
    let text = "Café (QZJX)";
    let tokens = encode(text);
    println!("{text:?} -> {:?}", tokens.ids);
    println!("decoded: {:?}", decode(&tokens)?);

    let sample = TuningSample {
        instruction_input: "Is 17 odd?".into(),
        instruction_output: "Yes.".into(),
        kind: SampleKind::General,
    };
    let packed = pack_pair(&sample);
    println!("\nvocabulary {VOCAB_SIZE}, BOS {BOS}, EOS {EOS}");
    println!("packed {} tokens, answer starts at {}", packed.len(), packed.boundary);
    println!("supervised tokens: {:?}", &packed.ids[packed.boundary..]);
    println!("prompt only: {} tokens", pack_prompt(&sample.instruction_input).len());
    Ok(())
}
