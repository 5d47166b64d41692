//! Runs the synthetic two-keyword harness for a range of seeds and prints
//! one JSON report per seed.
//!
//! `cargo run --release --example desk_harness -- 0 5`

use tdnn_kws::eval::harness::{run_seed, HarnessConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>());
    let first = args.next().transpose()?.unwrap_or(0);
    let count = args.next().transpose()?.unwrap_or(1);
    for seed in first..first + count {
        let cfg = HarnessConfig {
            seed,
            ..HarnessConfig::default()
        };
        let (report, _) = run_seed(&cfg, true)?;
        let score = |s: &tdnn_kws::eval::harness::ModelScore| {
            serde_json::json!({
                "frr": s.frr_at_operating_point,
                "heldout_loss": s.heldout_loss,
                "heldout_accuracy": s.heldout_accuracy,
            })
        };
        let line = serde_json::json!({
            "seed": report.seed,
            "spans": report.num_test_spans,
            "phone_accuracy": report.phone_accuracy,
            "transfer": score(&report.transfer),
            "random_init": score(&report.random_init),
            "stride4": report.stride4.as_ref().map(score),
            "transfer_wins": report.transfer_wins(),
            "seconds": report.seconds,
            "stride4_seconds": report.stride4_seconds,
        });
        println!("{line}");
    }
    Ok(())
}
