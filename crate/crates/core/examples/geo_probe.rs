use superlab_core::metrics::geometric_similarity;
use superlab_core::synthgen::{CorrelationMode, SynthConfig};
use superlab_core::toymodel::{train, TrainConfig, Variant};

fn main() {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let full: bool = std::env::args().nth(2).map(|s| s == "full").unwrap_or(false);
    let steps: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(20000);
    let density: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let lr: f64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let batch: usize = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(512);
    for mode in [CorrelationMode::Uncorrelated, CorrelationMode::Paired, CorrelationMode::Global] {
        let restarts: usize = std::env::args().nth(7).and_then(|s| s.parse().ok()).unwrap_or(1);
        let mut models = Vec::new();
        for seed in 0..4u64 {
            let synth = SynthConfig { k, p: 3, density, correlation_mode: mode, seed };
            let mut best: Option<superlab_core::toymodel::BottleneckModel> = None;
            for r in 0..restarts {
                let mut tc = TrainConfig::defaults(Variant::CeLinear, 2, seed * 1000 + r as u64);
                tc.learning_rate = lr;
                tc.batch_size = batch;
                if full {
                    tc.max_steps = steps;
                    tc.plateau_steps = steps;
                    tc.accuracy_target = 1.1;
                }
                let m = train(&tc, &synth).unwrap();
                if best.as_ref().map(|b| m.clean_accuracy > b.clean_accuracy).unwrap_or(true) {
                    best = Some(m);
                }
            }
            models.push(best.unwrap());
        }
        let mut sims = Vec::new();
        for i in 0..models.len() {
            for j in i + 1..models.len() {
                sims.push(geometric_similarity(&models[i], &models[j]).unwrap());
            }
        }
        let mean: f64 = sims.iter().sum::<f64>() / sims.len() as f64;
        println!(
            "{mode:?}: mean geo-sim {mean:.3} accs {:?} sims {:?}",
            models.iter().map(|m| (m.clean_accuracy * 100.0).round() / 100.0).collect::<Vec<_>>(),
            sims.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
}
