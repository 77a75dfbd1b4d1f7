//! Analysis metrics: interference-aligned perturbation profiles, latent
//! alignment with the closed-form attack, robust accuracy, cross-model
//! transferability, geometric similarity, and small statistics helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::attacks::{optimal_direction, pgd, AttackConfig, AttackResult, AttackTarget};
use crate::error::{Error, Result};
use crate::numerics::{cosine, Vector};
use crate::toymodel::BottleneckModel;

/// Mean absolute perturbation per input coordinate over a set of attacks.
pub fn input_perturbation_profile(deltas: &[Vector]) -> Result<Vector> {
    let first = deltas.first().ok_or_else(|| Error::Degenerate("no deltas".into()))?;
    let d = first.len();
    let mut profile = Vector::zeros(d);
    for delta in deltas {
        if delta.len() != d {
            return Err(Error::Shape("inconsistent delta lengths".into()));
        }
        for (acc, v) in profile.data.iter_mut().zip(&delta.data) {
            *acc += v.abs();
        }
    }
    for v in &mut profile.data {
        *v /= deltas.len() as f64;
    }
    Ok(profile)
}

/// Predicted per-feature interference magnitude for a source -> target flip:
/// |v_i . (w_target - w_source)| over encoder columns. Features sharing
/// latent directions with the class contrast should absorb the most
/// perturbation.
pub fn interference_prediction(
    model: &BottleneckModel,
    source: usize,
    target: usize,
) -> Result<Vector> {
    if source >= model.k || target >= model.k || source == target {
        return Err(Error::Config("invalid class pair".into()));
    }
    let n = Vector::from(model.w_d.row(target).to_vec())
        .sub(&Vector::from(model.w_d.row(source).to_vec()));
    let mut out = Vector::zeros(model.d);
    for i in 0..model.d {
        out.data[i] = model.feature_direction(i).dot(&n).abs();
    }
    Ok(out)
}

/// Cosine between an attack's latent shift and the latent shift the
/// closed-form optimal attack would induce toward the same reached class.
/// Returns None when the attack did not flip the prediction or the achieved
/// class pair is degenerate.
pub fn latent_attack_alignment(
    model: &BottleneckModel,
    result: &AttackResult,
) -> Result<Option<f64>> {
    let reached = match result.predicted_class {
        Some(c) if result.success => c,
        _ => return Ok(None),
    };
    if reached == result.source_class {
        return Ok(None);
    }
    let direction = match optimal_direction(model, result.source_class, reached) {
        Ok(dir) => dir,
        Err(Error::Degenerate(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let latent_opt = Vector::from(
        model
            .w_e
            .matmul(&direction.as_row().transpose())?
            .data,
    );
    if result.latent_shift.l2_norm() == 0.0 || latent_opt.l2_norm() == 0.0 {
        return Ok(None);
    }
    Ok(Some(cosine(&result.latent_shift, &latent_opt)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustReport {
    pub n_inputs: usize,
    /// Inputs that were unambiguous and correctly classified before attack.
    pub n_clean_correct: usize,
    pub clean_accuracy: f64,
    /// Fraction of clean-correct inputs for which the attack produced no
    /// valid adversarial example.
    pub robust_accuracy: f64,
    pub n_valid_ae: usize,
    pub attacks: Vec<AttackResult>,
}

/// Attacks every clean-correct input and reports how many survive.
pub fn robust_accuracy<T: AttackTarget>(
    target: &T,
    inputs: &[Vector],
    config: &AttackConfig,
) -> Result<RobustReport> {
    if inputs.is_empty() {
        return Err(Error::Degenerate("no inputs".into()));
    }
    let mut n_clean_correct = 0usize;
    let mut n_valid_ae = 0usize;
    let mut attacks = Vec::new();
    for x in inputs {
        let truth = target.true_class(x)?;
        let predicted = target.predict_class(x)?;
        let clean_correct = truth.is_some() && predicted == truth;
        if !clean_correct {
            continue;
        }
        n_clean_correct += 1;
        let r = pgd(target, x, config)?;
        if r.valid_ae {
            n_valid_ae += 1;
        }
        attacks.push(r);
    }
    if n_clean_correct == 0 {
        return Err(Error::Degenerate("no clean-correct inputs to attack".into()));
    }
    Ok(RobustReport {
        n_inputs: inputs.len(),
        n_clean_correct,
        clean_accuracy: n_clean_correct as f64 / inputs.len() as f64,
        robust_accuracy: 1.0 - n_valid_ae as f64 / n_clean_correct as f64,
        n_valid_ae,
        attacks,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    /// Fraction of source-valid adversarial examples that also fool the
    /// target model (untargeted accounting: any wrong prediction counts).
    pub transfer_rate: f64,
    /// Fraction whose target prediction is the same wrong class the attack
    /// induced on the source model. Valid AEs necessarily sit close to the
    /// true decision boundary, where an unrelated model mispredicts to
    /// *some* class almost half the time; requiring the same class isolates
    /// the part of transfer the shared geometry is responsible for.
    pub strict_transfer_rate: f64,
    pub n_source_ae: usize,
    pub n_transferred: usize,
    pub n_transferred_strict: usize,
}

/// Replays valid adversarial examples from one model against another model
/// trained on the same task.
pub fn transferability(
    target: &BottleneckModel,
    attacks: &[AttackResult],
) -> Result<TransferReport> {
    let mut n_source_ae = 0usize;
    let mut n_transferred = 0usize;
    let mut n_transferred_strict = 0usize;
    for r in attacks {
        if !r.valid_ae {
            continue;
        }
        n_source_ae += 1;
        let truth = target.true_class(&r.x_adv.sub(&r.delta))?;
        let predicted = target.predict_class(&r.x_adv)?;
        if predicted.is_some() && predicted != truth {
            n_transferred += 1;
            if predicted == r.predicted_class {
                n_transferred_strict += 1;
            }
        }
    }
    if n_source_ae == 0 {
        return Err(Error::Degenerate("no valid adversarial examples to transfer".into()));
    }
    Ok(TransferReport {
        transfer_rate: n_transferred as f64 / n_source_ae as f64,
        strict_transfer_rate: n_transferred_strict as f64 / n_source_ae as f64,
        n_source_ae,
        n_transferred,
        n_transferred_strict,
    })
}

/// Pearson correlation between the off-diagonal class-to-class cosine
/// structure of two models trained on the same task: high when the models
/// learned similar latent geometries up to rotation.
pub fn geometric_similarity(a: &BottleneckModel, b: &BottleneckModel) -> Result<f64> {
    if a.k != b.k {
        return Err(Error::Shape("models with different class counts".into()));
    }
    let gram = |m: &BottleneckModel| -> Result<Vec<f64>> {
        let dirs: Vec<Vector> = (0..m.k).map(|j| m.class_direction(j)).collect::<Result<_>>()?;
        let mut entries = Vec::new();
        for i in 0..m.k {
            for j in (i + 1)..m.k {
                entries.push(cosine(&dirs[i], &dirs[j]));
            }
        }
        Ok(entries)
    };
    let ga = gram(a)?;
    let gb = gram(b)?;
    pearson(&ga, &gb)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Degenerate("need >= 3 paired samples".into()));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("zero-variance input to correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Two-sided one-sample t-test p-value for H0: mean == mu0.
pub fn t_test_one_sample(xs: &[f64], mu0: f64) -> Result<f64> {
    if xs.len() < 3 {
        return Err(Error::Degenerate("need >= 3 samples".into()));
    }
    let n = xs.len() as f64;
    let sd = std_dev(xs);
    if sd <= 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let t = (mean(xs) - mu0) / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::Degenerate(format!("t distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Two-sided Welch two-sample t-test p-value for H0: means equal.
pub fn t_test_welch(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() < 3 || ys.len() < 3 {
        return Err(Error::Degenerate("need >= 3 samples per group".into()));
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (vx, vy) = (std_dev(xs).powi(2), std_dev(ys).powi(2));
    let se2 = vx / nx + vy / ny;
    if se2 <= 0.0 {
        return Err(Error::Degenerate("zero variance in both groups".into()));
    }
    let t = (mean(xs) - mean(ys)) / se2.sqrt();
    let df = se2.powi(2) / ((vx / nx).powi(2) / (nx - 1.0) + (vy / ny).powi(2) / (ny - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Degenerate(format!("t distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::synthgen::{CorrelationMode, SynthConfig};
    use crate::toymodel::Variant;

    fn hand_model(w_e: Matrix, w_d: Matrix, p: usize) -> BottleneckModel {
        let (m, d, k) = (w_e.rows, w_e.cols, w_d.rows);
        BottleneckModel {
            w_e,
            w_d,
            b_e: None,
            b_d: None,
            variant: Variant::CeLinear,
            m,
            k,
            d,
            p,
            train_seed: 0,
            synth_config: SynthConfig {
                k,
                p,
                density: 1.0,
                correlation_mode: CorrelationMode::Uncorrelated,
                seed: 0,
            },
            clean_accuracy: 1.0,
            converged: true,
        }
    }

    #[test]
    fn perturbation_profile_averages_magnitudes() {
        let deltas = vec![
            Vector::from(vec![1.0, -2.0]),
            Vector::from(vec![3.0, 0.0]),
        ];
        let p = input_perturbation_profile(&deltas).unwrap();
        assert_eq!(p.data, vec![2.0, 1.0]);
        assert!(input_perturbation_profile(&[]).is_err());
    }

    #[test]
    fn interference_prediction_matches_hand_computation() {
        // v_0 = (1,0), v_1 = (0.5, 1); n = w_1 - w_0 = (-1, 1)
        let w_e = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]);
        let model = hand_model(w_e, Matrix::identity(2), 1);
        let pred = interference_prediction(&model, 0, 1).unwrap();
        assert!((pred.data[0] - 1.0).abs() < 1e-12);
        assert!((pred.data[1] - 0.5).abs() < 1e-12);
        assert!(interference_prediction(&model, 0, 0).is_err());
    }

    #[test]
    fn alignment_is_one_for_the_optimal_attack_itself() {
        let w_e = Matrix::from_rows(&[vec![1.0, 0.3, 0.1], vec![0.0, 1.0, 0.4]]);
        let w_d = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.2, 1.0], vec![-0.5, 0.5]]);
        let model = hand_model(w_e, w_d, 1);
        let x = Vector::from(vec![2.0, 0.0, 0.0]);
        // a large budget guarantees the flip
        let r = crate::attacks::optimal_attack(&model, &x, 0, 1, 10.0).unwrap();
        assert!(r.success);
        if let Some(c) = latent_attack_alignment(&model, &r).unwrap() {
            // the optimal attack reached some class; its latent shift is by
            // construction parallel to that class's optimal latent direction
            assert!(c > 0.999, "cos {c}");
        } else {
            panic!("flip expected");
        }
    }

    #[test]
    fn alignment_is_none_without_a_flip() {
        let model = hand_model(Matrix::identity(2), Matrix::identity(2), 1);
        let x = Vector::from(vec![1.0, 0.0]);
        let r = crate::attacks::optimal_attack(&model, &x, 0, 1, 1e-6).unwrap();
        assert!(!r.success);
        assert!(latent_attack_alignment(&model, &r).unwrap().is_none());
    }

    #[test]
    fn geometric_similarity_is_one_for_rotated_copies() {
        let mut rng = crate::numerics::Rng::new(3);
        let mut w_e = Matrix::zeros(2, 6);
        for v in &mut w_e.data {
            *v = rng.normal();
        }
        let model_a = hand_model(w_e.clone(), Matrix::zeros(3, 2), 2);
        let q = crate::numerics::random_orthogonal(2, &mut rng);
        let model_b = hand_model(q.matmul(&w_e).unwrap(), Matrix::zeros(3, 2), 2);
        let s = geometric_similarity(&model_a, &model_b).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "similarity {s}");
    }

    #[test]
    fn pearson_and_spearman_behave_on_known_data() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up = [2.0, 4.0, 6.0, 8.0];
        let down = [8.0, 6.0, 4.0, 2.0];
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        // monotone but non-linear: spearman 1, pearson < 1
        let curved = [1.0, 10.0, 100.0, 1000.0];
        assert!((spearman(&xs, &curved).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&xs, &curved).unwrap() < 1.0);
        // ties get averaged ranks
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn t_tests_agree_with_reference_values() {
        // one-sample: xs mean 2.5, sd ~1.29, n=4, t = 2.5/0.6455 = 3.873
        // p (df=3) ~= 0.0305 (reference: R t.test(c(1,2,3,4), mu=0))
        let xs = [1.0, 2.0, 3.0, 4.0];
        let p = t_test_one_sample(&xs, 0.0).unwrap();
        assert!((p - 0.0305).abs() < 0.002, "one-sample p {p}");

        // welch: clearly separated groups -> tiny p; identical -> p = 1
        let a = [1.0, 1.1, 0.9, 1.05, 0.95];
        let b = [5.0, 5.1, 4.9, 5.05, 4.95];
        assert!(t_test_welch(&a, &b).unwrap() < 1e-6);
        let p_same = t_test_welch(&a, &a).unwrap();
        assert!((p_same - 1.0).abs() < 1e-9);
    }

    #[test]
    fn robust_accuracy_on_an_orthogonal_toy_model() {
        // identity geometry: classes are orthogonal, tiny budgets fail
        let model = hand_model(Matrix::identity(3), Matrix::identity(3), 1);
        let inputs = vec![
            Vector::from(vec![1.0, 0.0, 0.0]),
            Vector::from(vec![0.0, 1.0, 0.0]),
            Vector::from(vec![0.0, 0.0, 1.0]),
        ];
        let cfg = AttackConfig::toy_defaults(crate::attacks::AttackNorm::L2, 0.05);
        let report = robust_accuracy(&model, &inputs, &cfg).unwrap();
        assert_eq!(report.n_clean_correct, 3);
        assert_eq!(report.clean_accuracy, 1.0);
        assert_eq!(report.robust_accuracy, 1.0);
        // with a big budget the prediction flips, but flipping requires a
        // perturbation so large that the true label flips with it, so the
        // flip is not a valid adversarial example
        let cfg = AttackConfig::toy_defaults(crate::attacks::AttackNorm::L2, 5.0);
        let report = robust_accuracy(&model, &inputs, &cfg).unwrap();
        assert_eq!(report.robust_accuracy, 1.0);
        for r in &report.attacks {
            assert!(!r.valid_ae);
        }
    }

    #[test]
    fn transferability_counts_only_valid_source_aes() {
        let model = hand_model(Matrix::identity(2), Matrix::identity(2), 1);
        // fabricate one valid AE and one failed attack
        let ok = AttackResult {
            delta: Vector::from(vec![0.0, 0.0]),
            x_adv: Vector::from(vec![1.0, 2.0]),
            success: true,
            valid_ae: true,
            l2_norm: 0.0,
            linf_norm: 0.0,
            iters_used: 1,
            latent_shift: Vector::zeros(2),
            source_class: 1,
            predicted_class: Some(0),
        };
        let mut failed = ok.clone();
        failed.valid_ae = false;
        // x = x_adv - delta = (1,2): truth class 1; model predicts 1 on
        // x_adv too, so this AE does not transfer
        let report = transferability(&model, &[ok, failed]).unwrap();
        assert_eq!(report.n_source_ae, 1);
        assert_eq!(report.n_transferred, 0);
        assert_eq!(report.transfer_rate, 0.0);
        assert_eq!(report.n_transferred_strict, 0);
        assert_eq!(report.strict_transfer_rate, 0.0);
    }

    #[test]
    fn transferability_strict_requires_matching_class() {
        let model = hand_model(Matrix::identity(3), Matrix::identity(3), 1);
        // x = (1, 2, 0) is truly class 1; x_adv = (2, 1, 0) flips the
        // target's prediction to class 0, matching the class the source
        // attack reached
        let hit = AttackResult {
            delta: Vector::from(vec![1.0, -1.0, 0.0]),
            x_adv: Vector::from(vec![2.0, 1.0, 0.0]),
            success: true,
            valid_ae: true,
            l2_norm: 2f64.sqrt(),
            linf_norm: 1.0,
            iters_used: 1,
            latent_shift: Vector::zeros(3),
            source_class: 1,
            predicted_class: Some(0),
        };
        let mut other_class = hit.clone();
        other_class.predicted_class = Some(2); // source reached a different class
        let report = transferability(&model, &[hit, other_class]).unwrap();
        assert_eq!(report.n_transferred, 2);
        assert_eq!(report.n_transferred_strict, 1);
        assert_eq!(report.strict_transfer_rate, 0.5);
    }
}
