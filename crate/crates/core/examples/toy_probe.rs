//! Calibration probe for toy-model experiments: trains one bottleneck model
//! and reports clean accuracy, PGD/optimal alignment, and timings.

use superlab_core::attacks::{optimal_direction, pgd, random_baseline, AttackConfig, AttackNorm, AttackTarget};
use superlab_core::numerics::{cosine, Rng};
use superlab_core::synthgen::{CorrelationMode, SynthConfig};
use superlab_core::toymodel::{train, TrainConfig, Variant};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let k: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let m: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let p: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let density: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let eps: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.75);
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0);
    let n_attacks: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(300);

    let synth = SynthConfig {
        k,
        p,
        density,
        correlation_mode: CorrelationMode::Uncorrelated,
        seed,
    };
    let tc = TrainConfig::defaults(Variant::CeLinear, m, seed);
    let t0 = std::time::Instant::now();
    let model = train(&tc, &synth).unwrap();
    let train_time = t0.elapsed();
    println!(
        "k={k} m={m} p={p} density={density} | clean_acc {:.4} converged {} train {:?}",
        model.clean_accuracy, model.converged, train_time
    );

    let batch = superlab_core::synthgen::generate_unambiguous(&synth, n_attacks * 2).unwrap();
    let mut cfg = AttackConfig::toy_defaults(AttackNorm::L2, eps);
    cfg.stop_on_success = std::env::args().nth(8).map(|s| s == "stop").unwrap_or(false);
    if std::env::args().nth(9).map(|s| s == "noclip").unwrap_or(false) {
        cfg.input_clip = None;
    }
    let mut rng = Rng::new(seed).derive("probe-baseline", 0);
    let t1 = std::time::Instant::now();
    let mut cosines = Vec::new();
    let mut base_cosines = Vec::new();
    let mut n_tried = 0;
    let mut n_success = 0;
    let mut n_kept = 0;
    for i in 0..batch.inputs.rows {
        if cosines.len() >= n_attacks {
            break;
        }
        let x = superlab_core::numerics::Vector::from(batch.inputs.row(i).to_vec());
        let truth = model.true_class(&x).unwrap();
        if model.predict_class(&x).unwrap() != truth {
            continue;
        }
        n_tried += 1;
        let r = pgd(&model, &x, &cfg).unwrap();
        if !r.success {
            continue;
        }
        n_success += 1;
        if r.l2_norm < 0.5 * eps {
            continue;
        }
        let reached = r.predicted_class.unwrap();
        let opt = match optimal_direction(&model, r.source_class, reached) {
            Ok(o) => o,
            Err(_) => continue,
        };
        n_kept += 1;
        cosines.push(cosine(&r.delta, &opt));
        let draw = &random_baseline(&x, r.l2_norm, 1, &mut rng).unwrap()[0];
        base_cosines.push(cosine(draw, &opt));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!(
        "attacks: tried {n_tried} success {n_success} kept {n_kept} | mean_cos {:.4} base {:.4} | attack time {:?}",
        mean(&cosines),
        mean(&base_cosines),
        t1.elapsed()
    );
}
