use superlab_core::attacks::{pgd, AttackConfig, AttackNorm, AttackTarget};
use superlab_core::numerics::Vector;
use superlab_core::synthgen::{generate_unambiguous, CorrelationMode, SynthConfig};
use superlab_core::toymodel::{train, TrainConfig, Variant};

fn main() {
    let density: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(20000);
    let batch: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(512);
    let k: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(2);
    let wd: f64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let synth = SynthConfig { k, p: 3, density, correlation_mode: CorrelationMode::Uncorrelated, seed: 0 };
    let mut tc = TrainConfig::defaults(Variant::CeLinear, k, 0);
    tc.plateau_steps = steps;
    tc.max_steps = steps;
    tc.batch_size = batch;
    tc.accuracy_target = 1.1;
    tc.weight_decay = wd;
    let ta: usize = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(0);
    tc.tail_average = ta;
    let t0 = std::time::Instant::now();
    let model = train(&tc, &synth).unwrap();
    println!("k={k} clean acc {:.4} train {:?}", model.clean_accuracy, t0.elapsed());
    let eff = model.w_d.matmul(&model.w_e).unwrap();
    let mut asym: f64 = 0.0;
    let diag_mean: f64 = (0..k).map(|j| (0..3).map(|i| eff.get(j, j*3+i)).sum::<f64>() / 3.0).sum::<f64>() / k as f64;
    for j in 0..k { for i in 0..3 { asym = asym.max((eff.get(j, j*3+i) - diag_mean).abs() / diag_mean.abs()); } }
    println!("max rel asymmetry on own-class weights: {asym:.5}");

    let batch_in = generate_unambiguous(&synth, 3000).unwrap();
    for eps in [0.05, 0.1, 0.5] {
        let cfg = AttackConfig::toy_defaults(AttackNorm::L2, eps);
        let mut n_valid = 0; let mut n_att = 0;
        for i in 0..batch_in.inputs.rows {
            if n_att >= 1000 { break; }
            let x = Vector::from(batch_in.inputs.row(i).to_vec());
            let truth = model.true_class(&x).unwrap();
            if model.predict_class(&x).unwrap() != truth { continue; }
            n_att += 1;
            if pgd(&model, &x, &cfg).unwrap().valid_ae { n_valid += 1; }
        }
        println!("eps {eps}: attempts {n_att} valid {n_valid}");
    }
}
