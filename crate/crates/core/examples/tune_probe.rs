use superlab_core::synthgen::{CorrelationMode, SynthConfig};
use superlab_core::toymodel::{train, TrainConfig, Variant};
fn main() {
    let max_steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40000);
    let plateau: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let lr: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let batch: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(512);
    for (k, density) in [(10usize, 0.11f64), (10, 0.02), (7, 0.11)] {
        let synth = SynthConfig { k, p: 3, density, correlation_mode: CorrelationMode::Uncorrelated, seed: 0 };
        let mut tc = TrainConfig::defaults(Variant::CeLinear, 2, 0);
        tc.max_steps = max_steps;
        tc.plateau_steps = plateau;
        tc.learning_rate = lr;
        tc.batch_size = batch;
        let t0 = std::time::Instant::now();
        let model = train(&tc, &synth).unwrap();
        println!("k={k} d={density}: acc {:.4} conv {} in {:?}", model.clean_accuracy, model.converged, t0.elapsed());
    }
}
