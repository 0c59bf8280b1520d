//! CSI tensor layout: complex to real, normalisation, patching and back.

use sclmkb::csi_pipeline::{complex_to_real, denormalize, normalize, patch, patch_count, real_to_complex};
use sclmkb::mimo_channel::{generate_trace, ChannelModelParams, ModelTag};

fn main() -> sclmkb::Result<()> {
    let params = ChannelModelParams {
        n_r: 2,
        n_t: 2,
        ..ChannelModelParams::default()
    };
    let trace = generate_trace(&params, 3, 16)?;
    let real = complex_to_real(&trace)?;
    println!("{} real series of length {}", real.rows(), trace.len());

    let (norm, stats) = normalize(&real)?;
    println!("normalisation stats {stats:?}");

    let (l, s) = (4, 2);
    let patches = patch(&norm, l, s)?;
    println!("{} patches of length {l} at stride {s}", patch_count(trace.len(), l, s)?);
    println!("row 0, patch 1: {:.3?}", patches.patch(0, 1));

    let back = real_to_complex(&denormalize(&norm, stats), ModelTag::FromFile)?;
    let err: f64 = back
        .realizations()
        .iter()
        .zip(trace.realizations())
        .map(|(a, b)| (&a.h - &b.h).norm())
        .fold(0.0, f64::max);
    println!("round-trip error {err:.2e}");
    Ok(())
}
