use fedoc_core::config::RunConfig;
use fedoc_core::experiment::train_pipeline;
use std::time::Instant;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.dataset.per_class = 50;
    cfg.phase1.rounds = 5;
    cfg.phase2.epochs = 5;
    let t0 = Instant::now();
    let _ = train_pipeline(&cfg, None).unwrap();
    println!("5 rounds + 5 flow epochs: {:?}", t0.elapsed());
}
