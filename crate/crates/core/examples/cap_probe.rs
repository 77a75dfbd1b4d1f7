use superlab_core::attacks::{pgd, AttackConfig, AttackNorm, AttackTarget};
use superlab_core::numerics::{Rng, Vector};
use superlab_core::synthgen::{generate_unambiguous, CorrelationMode, SynthConfig};
use superlab_core::toymodel::{train, TrainConfig, Variant};

fn main() {
    let wd: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(40_000);
    let synth =
        SynthConfig { k: 2, p: 3, density: 0.02, correlation_mode: CorrelationMode::Uncorrelated, seed: 0 };
    let mut tc = TrainConfig::defaults(Variant::CeLinear, 2, 0);
    tc.max_steps = steps;
    tc.plateau_steps = steps;
    tc.batch_size = 2048;
    tc.accuracy_target = 1.1;
    tc.weight_decay = wd;
    let model = train(&tc, &synth).unwrap();
    println!("clean acc {:.4}", model.clean_accuracy);
    // replicate eval_inputs(model, 1000, 0)
    let eval_cfg = SynthConfig { seed: Rng::new(0).derive("eval-inputs", 0).seed(), ..synth.clone() };
    let batch = generate_unambiguous(&eval_cfg, 1000).unwrap();
    for eps in [0.05, 0.1, 0.5] {
        let cfg = AttackConfig::toy_defaults(AttackNorm::L2, eps);
        let mut n_valid = 0;
        for i in 0..batch.inputs.rows {
            let x = Vector::from(batch.inputs.row(i).to_vec());
            let truth = model.true_class(&x).unwrap();
            if truth.is_none() || model.predict_class(&x).unwrap() != truth {
                continue;
            }
            let r = pgd(&model, &x, &cfg).unwrap();
            if r.valid_ae {
                n_valid += 1;
                let sum_a: f64 = x.data[0..3].iter().sum();
                let sum_b: f64 = x.data[3..6].iter().sum();
                let adv_a: f64 = r.x_adv.data[0..3].iter().sum();
                let adv_b: f64 = r.x_adv.data[3..6].iter().sum();
                println!(
                    "eps {eps} LEAK i={i} x={:?} margin={:.6} adv_margin={:.6} |d|={:.4}",
                    x.data,
                    sum_a - sum_b,
                    adv_a - adv_b,
                    r.l2_norm
                );
            }
        }
        println!("eps {eps}: valid {n_valid}");
    }
}
