//! Paraphrase generation with the deterministic mock backend.

use sclmkb::sdg::{build_prompt, generate, lexicon, paraphrase_mock};
use sclmkb::lmkb_core::Vocab;

fn main() -> sclmkb::Result<()> {
    let vocab = Vocab::new(lexicon::content_words())?;
    let prompt = build_prompt("a person in a red shirt is walking near the street", "Rewrite the caption")?;
    println!("prompt: {}", prompt.rendered);

    for (rate, label) in [(0.0, "faithful"), (1.0, "hallucinating")] {
        let backend = paraphrase_mock(rate, true)?;
        for seed in 0..3 {
            let out = generate(&prompt, 0.0, 64, &backend, &vocab, seed)?;
            println!("{label:>13} seed {seed}: {}", out.text);
        }
    }
    let backend = paraphrase_mock(0.0, false)?;
    let hot = generate(&prompt, 1.5, 64, &backend, &vocab, 9)?;
    println!("tau 1.5: {}", hot.text);
    Ok(())
}
