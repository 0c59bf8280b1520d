//! SVD-precoded MIMO link: precode, transmit, detect, and quantised feedback.

use nalgebra::DVector;
use num_complex::Complex64;

use sclmkb::mimo_channel::{
    detect, generate_trace, precode, precode_with, quantize_feedback, svd_decompose, transmit, ChannelModelParams,
    ModelTag, NoiseModel, PrecodeConfig,
};

fn main() -> sclmkb::Result<()> {
    let params = ChannelModelParams {
        model_tag: ModelTag::NlosLike,
        n_r: 4,
        n_t: 4,
        ..ChannelModelParams::default()
    };
    let trace = generate_trace(&params, 42, 8)?;
    let h = trace.get(0).expect("non-empty trace");
    let triple = svd_decompose(h)?;
    println!("singular values: {:.3?}", triple.sigma.as_slice());

    let cfg = PrecodeConfig { d: 2, equalize: true };
    let z = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, -1.0)]);
    let x = precode(&z, &triple, &cfg)?;
    for snr in [0.0, 10.0, 30.0] {
        let y = transmit(&x, h, &NoiseModel::for_streams(snr, 7, cfg.d))?;
        let det = detect(&y, &triple, &cfg)?;
        let err = (&det.streams - &z).norm();
        println!("snr {snr:>4} dB  stream error {err:.4}");
    }

    // Transmitter acting on quantised feedback instead of the true V_d.
    let v_d = triple.v_d(cfg.d);
    for bits in [32, 64, 128] {
        let v_q = quantize_feedback(&v_d, bits)?;
        let y = transmit(&precode_with(&z, &v_q)?, h, &NoiseModel::noiseless())?;
        let det = detect(&y, &triple, &cfg)?;
        println!("feedback {bits:>3} bits  stream error {:.4}", (&det.streams - &z).norm());
    }
    Ok(())
}
