//! Runs the default configuration end to end and prints a summary.
//!
//! `cargo run --release -p comm-rl-core --example reference_run [config.toml]`

use comm_rl::config::RunConfig;
use comm_rl::experiment::run_full;
use comm_rl::metrics::{first_moving_average_drop, moving_average};
use comm_rl::optim::Stage;

fn main() {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path.as_ref()).expect("bad config"),
        None => RunConfig::default(),
    };
    let scorer = cfg.scorer.build();
    let start = std::time::Instant::now();
    let run = run_full(&cfg, scorer.as_ref()).expect("run failed");
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    println!(
        "warm-up nll {:.4} -> {:.4}",
        run.warmup_report.initial_nll, run.warmup_report.final_nll
    );
    for e in &run.evaluations {
        let r = &e.report;
        println!(
            "{:<10} acc {:.4} confused {:.4} yes_rate {:.4} entropy {:.4}",
            e.label,
            r.accuracy,
            r.confused_accuracy.unwrap_or(f64::NAN),
            r.yes_rate.unwrap_or(f64::NAN),
            e.answer_entropy
        );
    }
    let avc: Vec<f64> = run
        .reports
        .iter()
        .filter(|r| r.stage == Stage::StepRr)
        .filter_map(|r| r.r_avc_mean)
        .collect();
    let ma = moving_average(&avc, 50);
    for (i, chunk) in avc.chunks(25).enumerate() {
        let m = chunk.iter().sum::<f64>() / chunk.len() as f64;
        print!("{:>4}:{:.3} ", i * 25, m);
    }
    println!();
    println!(
        "avc MA50 first {:.4} last {:.4} first drop {:?}",
        ma.first().copied().unwrap_or(f64::NAN),
        ma.last().copied().unwrap_or(f64::NAN),
        first_moving_average_drop(&avc, 50)
    );
    let drops = ma.windows(2).filter(|w| w[1] < w[0]).count();
    println!("MA50 drops {drops} of {}", ma.len().saturating_sub(1));
}
