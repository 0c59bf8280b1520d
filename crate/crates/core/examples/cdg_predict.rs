//! Train the CSI predictor on a fading trace and compare with stale CSI.

use sclmkb::cdg::{make_windows, stale_prediction, train_cdg, CdgConfig};
use sclmkb::eval::nmse_metric;
use sclmkb::mimo_channel::{generate_trace, ChannelModelParams, ModelTag};
use sclmkb::optim::OptimizerKind;

fn main() -> sclmkb::Result<()> {
    let params = ChannelModelParams {
        model_tag: ModelTag::NlosLike,
        n_r: 2,
        n_t: 2,
        doppler_hz: 50.0,
        k_factor_db: 0.0,
        ..ChannelModelParams::default()
    };
    let trace = generate_trace(&params, 7, 200)?;
    let train = make_windows(&trace.slice(0..140)?, 16, 4, 8)?;
    let test = make_windows(&trace.slice(140..200)?, 16, 4, 4)?;

    let cfg = CdgConfig {
        epochs: 60,
        optimizer: OptimizerKind::Adam,
        lr: 0.01,
        lambda: 10.0,
        batch_windows: 4,
        ..CdgConfig::default()
    };
    let (model, history) = train_cdg(&train, &cfg)?;
    for e in history.iter().step_by(10) {
        println!("epoch {:>3}  total {:.3}  ce {:.3}  nmse {:.4}", e.epoch, e.total, e.ce, e.nmse);
    }

    let (mut pred, mut stale) = (0.0, 0.0);
    for w in &test {
        pred += nmse_metric(&model.predict(&w.his)?, &w.future)?;
        stale += nmse_metric(&stale_prediction(&w.his, cfg.t_pre)?, &w.future)?;
    }
    let n = test.len() as f64;
    println!("test NMSE: predicted {:.4}, stale {:.4}", pred / n, stale / n);
    Ok(())
}
