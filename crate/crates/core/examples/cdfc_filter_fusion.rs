//! Similarity filter and importance-weighted fusion on one caption.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sclmkb::cdfc::{
    cosine_sim, encode, filter, fuse, importance_weights, CodecConfig, FilterConfig, FusionPairing,
    GenerationSettings, JsccCodec, SdgHook,
};
use sclmkb::lmkb_core::Matrix;
use sclmkb::lmkb_core::Vocab;
use sclmkb::sdg::{lexicon, paraphrase_mock};

fn main() -> sclmkb::Result<()> {
    let vocab = Vocab::new(lexicon::content_words())?;
    // Untrained codec: its features separate topics only loosely.
    let codec = JsccCodec::new(CodecConfig::default(), vocab.size(), 8, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gallery = Matrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0));

    let source = "a person in a red shirt is walking near the street";
    let t_i = encode(&vocab.encode(source), &codec)?;
    let generation = GenerationSettings::default();

    for rate in [0.0, 1.0] {
        let backend = paraphrase_mock(rate, true)?;
        let hook = SdgHook {
            backend: &backend,
            vocab: &vocab,
            filter: FilterConfig { gamma: 0.5, max_retries: 5 },
            generation: &generation,
        };
        let out = filter(&t_i, source, &codec, &hook, 11)?;
        println!(
            "hallucination rate {rate}: {} attempts, fallback {}, sim {:?}",
            out.attempts, out.fallback, out.sim
        );
        if let Some(tokens) = &out.accepted {
            println!("  accepted: {}", vocab.decode(tokens.ids()));
        }
        let w = importance_weights(&t_i, &out.t_a, &codec, &gallery, 0)?;
        let fused = fuse(&t_i, &out.t_a, &w, FusionPairing::Cross)?;
        println!(
            "  theta_i {:.3}, theta_a {:.3}, cos(fused, t_i) {:.3}",
            w.theta_i,
            w.theta_a,
            cosine_sim(&fused, &t_i)?
        );
    }
    Ok(())
}
