//! Frozen toy backbone, vocabulary head and temperature sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sclmkb::lmkb_core::nn::{init_uniform, Params};
use sclmkb::lmkb_core::{output_head, output_logits, sample_with_temperature, BackboneConfig, ToyTransformer};

fn main() -> sclmkb::Result<()> {
    let cfg = BackboneConfig::default();
    let backbone = ToyTransformer::new(cfg.clone())?;
    println!("backbone: {} layers, width {}, {} parameters", cfg.l_depth, cfg.d_llm, backbone.params.param_count());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m0 = init_uniform(5, cfg.d_llm, 1, &mut rng);
    let (h, _) = backbone.forward_layers(&m0)?;
    let w_out = init_uniform(cfg.d_llm, 12, cfg.d_llm, &mut rng);
    let probs = output_head(&h, &w_out)?;
    println!("last-position distribution: {:.3?}", probs.row(4).iter().collect::<Vec<_>>());

    let logits: Vec<f64> = output_logits(&h, &w_out)?.row(4).iter().copied().collect();
    for tau in [0.0, 0.5, 1.0, 2.0] {
        let draws: Vec<u32> = (0..12).map(|s| sample_with_temperature(&logits, tau, s)).collect::<Result<_, _>>()?;
        println!("tau {tau}: {draws:?}");
    }
    Ok(())
}
