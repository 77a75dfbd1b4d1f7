//! Quick training-dynamics probe for the modular addition model.

use superlab_core::modular::{train_modular_with_progress, ModularTrainConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let max_epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let cfg = ModularTrainConfig {
        max_epochs,
        ..ModularTrainConfig::defaults(seed)
    };
    let t0 = std::time::Instant::now();
    let model = train_modular_with_progress(&cfg, |epoch, loss, acc| {
        println!("epoch {epoch:6}  loss {loss:10.4}  test_acc {acc:.4}  elapsed {:?}", t0.elapsed());
    })
    .unwrap();
    println!(
        "done: epochs {} train_acc {:.4} test_acc {:.4} key_freqs {:?}",
        model.epochs_run, model.train_accuracy, model.test_accuracy, model.key_frequencies
    );
}
