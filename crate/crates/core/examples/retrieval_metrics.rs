//! Ranking metrics: mAP, rank-k and rank correlation.

use sclmkb::eval::{average_precision, map_score, rank_at_k, rank_by_scores, spearman_rho, RankingResult};

fn main() -> sclmkb::Result<()> {
    let scores = [
        (vec![0.9, 0.1, 0.4, 0.8, 0.2], vec![0]),
        (vec![0.3, 0.7, 0.6, 0.1, 0.5], vec![2, 4]),
        (vec![0.2, 0.2, 0.9, 0.1, 0.95], vec![3]),
    ];
    let mut results = Vec::new();
    for (s, rel) in scores {
        let ranking = rank_by_scores(&s);
        println!("ranking {ranking:?}, relevant {rel:?}, AP {:.3}", average_precision(&ranking, &rel)?);
        results.push(RankingResult::new(ranking, rel)?);
    }
    println!("mAP {:.3}", map_score(&results)?);
    for k in [1, 3, 5] {
        println!("rank-{k} {:.3}", rank_at_k(&results, k)?);
    }
    let snr = [0.0, 5.0, 10.0, 15.0];
    let map = [0.41, 0.55, 0.61, 0.60];
    println!("spearman(snr, mAP) {:.3}", spearman_rho(&snr, &map)?);
    Ok(())
}
