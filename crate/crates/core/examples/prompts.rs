//! Render a recommendation instance and a few general instruction tasks as
//! instruction/answer pairs.
//!
//! ```text
//! cargo run --example prompts
//! ```

use tallrec::corpus::{pad_history, Domain};
use tallrec::promptgen::{generate_general_tasks, render_rec_sample, PromptTemplate};
use tallrec::synthetic::planted_keyword_instances;

fn main() -> tallrec::Result<()> {
    let instance = &planted_keyword_instances(Domain::Book, 1, 4, true, 3)[0];
    // pad to the window by repeating the newest history item
    let padded = pad_history(instance, 6)?;
    let sample = render_rec_sample(&padded, &PromptTemplate::for_domain(Domain::Book))?;
    println!("--- instruction input ---\n{}", sample.instruction_input);
    println!("--- output ---\n{}\n", sample.instruction_output);

    for task in generate_general_tasks(4, 11) {
        println!("{:?} -> {:?}", task.instruction_input.lines().last().unwrap_or(""), task.instruction_output);
    }
    Ok(())
}
