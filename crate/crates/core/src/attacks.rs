//! Perturbation generators: l-inf/l2 PGD, the closed-form optimal attack for
//! linear bottleneck models, matched-norm random baselines, and the
//! frequency-informed modular-addition attack with its naive baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modular::ModularModel;
use crate::numerics::{Rng, Vector};
use crate::synthgen::true_label;
use crate::toymodel::{BottleneckModel, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackNorm {
    LInf,
    L2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub norm: AttackNorm,
    pub epsilon: f64,
    pub step_size: f64,
    pub max_iters: usize,
    /// Targeted attacks descend on the target-class loss; untargeted attacks
    /// ascend on the true-class loss.
    pub targeted: Option<usize>,
    pub stop_on_success: bool,
    /// Input-domain clamp applied after every step, e.g. (0.0, inf) for the
    /// synthetic task where evidence cannot be negative.
    pub input_clip: Option<(f64, f64)>,
}

impl AttackConfig {
    /// Toy-model defaults: small steps, many iterations, stop on success.
    pub fn toy_defaults(norm: AttackNorm, epsilon: f64) -> Self {
        AttackConfig {
            norm,
            epsilon,
            step_size: epsilon / 20.0,
            max_iters: 400,
            targeted: None,
            stop_on_success: true,
            input_clip: Some((0.0, f64::INFINITY)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || self.step_size <= 0.0 || self.max_iters < 1 {
            return Err(Error::Config("attack config fields out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackResult {
    pub delta: Vector,
    pub x_adv: Vector,
    /// Prediction changed (untargeted) or target class reached (targeted).
    pub success: bool,
    /// Success and the ground-truth label of the perturbed input is
    /// unchanged — both conditions of a genuine adversarial example.
    pub valid_ae: bool,
    pub l2_norm: f64,
    pub linf_norm: f64,
    pub iters_used: usize,
    /// Change in the encoder activations induced by delta.
    pub latent_shift: Vector,
    pub source_class: usize,
    pub predicted_class: Option<usize>,
}

/// Anything PGD can attack: a differentiable map from inputs to class
/// logits with a ground-truth notion for AE validity.
pub trait AttackTarget {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Encoder activations (used for latent-shift bookkeeping).
    fn encode(&self, x: &Vector) -> Result<Vector>;
    /// Argmax class, None on an exact tie.
    fn predict_class(&self, x: &Vector) -> Result<Option<usize>>;
    /// Ground-truth class of `x`, None if ambiguous.
    fn true_class(&self, x: &Vector) -> Result<Option<usize>>;
    /// Cross-entropy of the logits at `x` against `label`, and its input
    /// gradient.
    fn loss_and_input_grad(&self, x: &Vector, label: usize) -> Result<(f64, Vector)>;
}

/// Clamp each coordinate of delta to [-eps, eps].
pub fn project_linf(delta: &mut Vector, eps: f64) {
    for v in &mut delta.data {
        *v = v.clamp(-eps, eps);
    }
}

/// Rescale delta onto the l2 ball of radius eps if it lies outside.
pub fn project_l2(delta: &mut Vector, eps: f64) {
    let n = delta.l2_norm();
    if n > eps {
        let s = eps / n;
        for v in &mut delta.data {
            *v *= s;
        }
    }
}

fn clip_adv(x: &Vector, delta: &mut Vector, clip: Option<(f64, f64)>) {
    if let Some((lo, hi)) = clip {
        for (dv, &xv) in delta.data.iter_mut().zip(&x.data) {
            let adv = (xv + *dv).clamp(lo, hi);
            *dv = adv - xv;
        }
    }
}

fn finish<T: AttackTarget>(
    target: &T,
    x: &Vector,
    delta: Vector,
    iters_used: usize,
    source_class: usize,
    wanted: Option<usize>,
) -> Result<AttackResult> {
    let x_adv = x.add(&delta);
    let predicted = target.predict_class(&x_adv)?;
    let success = match wanted {
        Some(t) => predicted == Some(t),
        None => predicted.is_some() && predicted != Some(source_class),
    };
    let valid_ae = success && target.true_class(&x_adv)? == Some(source_class);
    let latent_shift = target.encode(&x_adv)?.sub(&target.encode(x)?);
    Ok(AttackResult {
        l2_norm: delta.l2_norm(),
        linf_norm: delta.linf_norm(),
        delta,
        x_adv,
        success,
        valid_ae,
        iters_used,
        latent_shift,
        source_class,
        predicted_class: predicted,
    })
}

/// Projected gradient descent in the configured norm.
///
/// The update is x' <- proj(x' + alpha * g) with g the gradient sign (l-inf)
/// or the normalized gradient (l2), projecting onto the epsilon-ball and the
/// input domain after every step.
pub fn pgd<T: AttackTarget>(target: &T, x: &Vector, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    if x.len() != target.input_dim() {
        return Err(Error::Shape("pgd input length".into()));
    }
    let source = target
        .true_class(x)?
        .ok_or_else(|| Error::Degenerate("pgd on ambiguous input".into()))?;
    let loss_label = config.targeted.unwrap_or(source);
    let ascend = config.targeted.is_none();
    if config.epsilon == 0.0 {
        return finish(target, x, Vector::zeros(x.len()), 0, source, config.targeted);
    }

    let mut delta = Vector::zeros(x.len());
    let mut iters = 0usize;
    for _ in 0..config.max_iters {
        let x_cur = x.add(&delta);
        let (_, grad) = target.loss_and_input_grad(&x_cur, loss_label)?;
        let step = match config.norm {
            AttackNorm::LInf => Vector::from(
                grad.data
                    .iter()
                    .map(|g| if *g > 0.0 { 1.0 } else if *g < 0.0 { -1.0 } else { 0.0 })
                    .collect::<Vec<_>>(),
            ),
            AttackNorm::L2 => match grad.normalized() {
                Some(u) => u,
                None => {
                    // zero gradient: report an unsuccessful result rather
                    // than erroring out
                    return finish(target, x, delta, iters, source, config.targeted);
                }
            },
        };
        let signed = if ascend {
            step.scale(config.step_size)
        } else {
            step.scale(-config.step_size)
        };
        delta = delta.add(&signed);
        match config.norm {
            AttackNorm::LInf => project_linf(&mut delta, config.epsilon),
            AttackNorm::L2 => project_l2(&mut delta, config.epsilon),
        }
        clip_adv(x, &mut delta, config.input_clip);
        iters += 1;
        if config.stop_on_success {
            let predicted = target.predict_class(&x.add(&delta))?;
            let hit = match config.targeted {
                Some(t) => predicted == Some(t),
                None => predicted.is_some() && predicted != Some(source),
            };
            if hit {
                break;
            }
        }
    }
    finish(target, x, delta, iters, source, config.targeted)
}

/// Closed-form optimal l2 perturbation for a linear bottleneck model:
/// delta = eps * W_e^T (w_target - w_source) / ||.||, with the decoder rows
/// as class directions.
pub fn optimal_attack(
    model: &BottleneckModel,
    x: &Vector,
    source: usize,
    target: usize,
    epsilon: f64,
) -> Result<AttackResult> {
    if model.variant != Variant::CeLinear {
        return Err(Error::Contract(
            "optimal attack closed form assumes the linear CE variant".into(),
        ));
    }
    if source == target || source >= model.k || target >= model.k {
        return Err(Error::Config("invalid source/target classes".into()));
    }
    let direction = optimal_direction(model, source, target)?;
    let delta = direction.scale(epsilon);
    let true_source = model
        .true_class(x)?
        .ok_or_else(|| Error::Degenerate("ambiguous input".into()))?;
    finish(model, x, delta, 0, true_source, None)
}

/// Unit-norm optimal attack direction for source -> target.
pub fn optimal_direction(model: &BottleneckModel, source: usize, target: usize) -> Result<Vector> {
    let n = Vector::from(model.w_d.row(target).to_vec()).sub(&Vector::from(model.w_d.row(source).to_vec()));
    // g_i = v_i . n over encoder columns
    let mut g = Vector::zeros(model.d);
    for i in 0..model.d {
        g.data[i] = model.feature_direction(i).dot(&n);
    }
    g.normalized()
        .ok_or_else(|| Error::Degenerate("degenerate class pair: v_target == v_source".into()))
}

/// `n_draws` perturbations drawn uniformly on the l2 sphere of radius eps.
pub fn random_baseline(x: &Vector, epsilon: f64, n_draws: usize, rng: &mut Rng) -> Result<Vec<Vector>> {
    if n_draws < 1 {
        return Err(Error::Config("n_draws must be >= 1".into()));
    }
    Ok((0..n_draws)
        .map(|_| rng.unit_sphere(x.len()).scale(epsilon))
        .collect())
}

impl AttackTarget for BottleneckModel {
    fn input_dim(&self) -> usize {
        self.d
    }

    fn num_classes(&self) -> usize {
        self.k
    }

    fn encode(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward(x)?.0)
    }

    fn predict_class(&self, x: &Vector) -> Result<Option<usize>> {
        Ok(self.predict(x)?.class())
    }

    fn true_class(&self, x: &Vector) -> Result<Option<usize>> {
        Ok(true_label(x, self.k, self.p)?.class())
    }

    fn loss_and_input_grad(&self, x: &Vector, label: usize) -> Result<(f64, Vector)> {
        use crate::numerics::CompGraph;
        let mut g = CompGraph::new();
        let xin = g.leaf(x.as_row());
        let we_t = g.leaf(self.w_e.transpose());
        let wd_t = g.leaf(self.w_d.transpose());
        let mut h = g.matmul(xin, we_t)?;
        if let Some(b) = &self.b_e {
            let bid = g.leaf(b.as_row());
            h = g.add(h, bid)?;
        }
        if self.variant == Variant::MseRelu {
            h = g.relu(h);
        }
        let mut z = g.matmul(h, wd_t)?;
        if let Some(b) = &self.b_d {
            let bid = g.leaf(b.as_row());
            z = g.add(z, bid)?;
        }
        let loss = g.softmax_cross_entropy(z, &[label])?;
        let grads = g.backward(loss)?;
        let gx = grads[xin].as_ref().expect("input reachable");
        Ok((g.value(loss).data[0], Vector::from(gx.data.clone())))
    }
}

/// Attack surface for the modular task: the relaxed one-hot encoding of `a`
/// with `b` held fixed. The ground truth is (a + b) mod P throughout.
pub struct RelaxedModularInput<'a> {
    pub model: &'a ModularModel,
    pub a: usize,
    pub b: usize,
}

impl<'a> RelaxedModularInput<'a> {
    pub fn new(model: &'a ModularModel, a: usize, b: usize) -> Self {
        RelaxedModularInput { model, a, b }
    }

    pub fn one_hot(&self) -> Vector {
        let mut x = Vector::zeros(self.model.p_modulus);
        x.data[self.a] = 1.0;
        x
    }

    pub fn answer(&self) -> usize {
        (self.a + self.b) % self.model.p_modulus
    }
}

impl AttackTarget for RelaxedModularInput<'_> {
    fn input_dim(&self) -> usize {
        self.model.p_modulus
    }

    fn num_classes(&self) -> usize {
        self.model.p_modulus
    }

    fn encode(&self, x: &Vector) -> Result<Vector> {
        self.model.embed_relaxed(x)
    }

    fn predict_class(&self, x: &Vector) -> Result<Option<usize>> {
        let z = self.model.logits_relaxed(x, self.b)?;
        let mut best = 0usize;
        for j in 1..z.len() {
            if z.data[j] > z.data[best] {
                best = j;
            }
        }
        let tie = (0..z.len()).any(|j| j != best && z.data[j] == z.data[best]);
        Ok(if tie { None } else { Some(best) })
    }

    fn true_class(&self, _x: &Vector) -> Result<Option<usize>> {
        Ok(Some(self.answer()))
    }

    fn loss_and_input_grad(&self, x: &Vector, label: usize) -> Result<(f64, Vector)> {
        self.model.loss_and_input_grad_relaxed(x, self.b, label)
    }
}

/// Outcome of a budget search: the smallest successful l2 norm found, or
/// infinity when nothing within the search ceiling succeeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetTable {
    pub pgd: f64,
    pub informed: f64,
    pub single_index: f64,
    pub linf_noise: f64,
    pub uniform: f64,
}

const BUDGET_CEILING: f64 = 20.0;
const BISECT_ROUNDS: usize = 12;

/// Smallest scale s in (0, ceiling] for which `succeeds(s)` holds, found by
/// bisection after an initial doubling search; infinity when none does.
fn min_scale(mut succeeds: impl FnMut(f64) -> bool) -> f64 {
    let mut hi = 1e-3;
    while hi <= BUDGET_CEILING && !succeeds(hi) {
        hi *= 2.0;
    }
    if hi > BUDGET_CEILING {
        return f64::INFINITY;
    }
    let mut lo = 0.0;
    for _ in 0..BISECT_ROUNDS {
        let mid = 0.5 * (lo + hi);
        if succeeds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn flips(surface: &RelaxedModularInput<'_>, x_adv: &Vector) -> bool {
    matches!(surface.predict_class(x_adv), Ok(Some(c)) if c != surface.answer())
}

/// Gradient-free attack built from cosines at the model's key frequencies:
/// delta_j = A * sum_k cos(omega_k j + phi_k). Phases are chosen greedily
/// from `phase_grid` to minimize the successful l2 budget; the shared
/// amplitude is bisected.
pub fn informed_modular_attack(
    model: &ModularModel,
    a: usize,
    b: usize,
    phase_grid: &[f64],
) -> Result<AttackResult> {
    if model.key_frequencies.is_empty() {
        return Err(Error::Contract("model has no extracted key frequencies".into()));
    }
    if phase_grid.is_empty() {
        return Err(Error::Config("empty phase grid".into()));
    }
    let surface = RelaxedModularInput::new(model, a, b);
    let x = surface.one_hot();
    let p = model.p_modulus;
    let freqs = &model.key_frequencies;

    let wave = |phases: &[f64]| -> Vector {
        let mut delta = Vector::zeros(p);
        for (j, v) in delta.data.iter_mut().enumerate() {
            for (fi, &f) in freqs.iter().enumerate() {
                let omega = 2.0 * std::f64::consts::PI * f as f64 / p as f64;
                *v += (omega * j as f64 + phases[fi]).cos();
            }
        }
        delta
    };
    let budget_of = |phases: &[f64]| -> f64 {
        match wave(phases).normalized() {
            Some(u) => min_scale(|s| flips(&surface, &x.add(&u.scale(s)))),
            None => f64::INFINITY,
        }
    };

    let mut phases = vec![phase_grid[0]; freqs.len()];
    let mut best_budget = budget_of(&phases);
    for _pass in 0..2 {
        for fi in 0..freqs.len() {
            for &candidate in phase_grid {
                let saved = phases[fi];
                phases[fi] = candidate;
                let budget = budget_of(&phases);
                if budget < best_budget {
                    best_budget = budget;
                } else {
                    phases[fi] = saved;
                }
            }
        }
    }

    if best_budget.is_finite() {
        let u = wave(&phases).normalized().expect("non-degenerate wave");
        finish(&surface, &x, u.scale(best_budget), 0, surface.answer(), None)
    } else {
        // no successful configuration: return the best-effort zero result
        finish(&surface, &x, Vector::zeros(p), 0, surface.answer(), None)
    }
}

/// A single cosine at one key frequency, amplitude-matched to `amplitude`;
/// used to show that disrupting one frequency alone is insufficient.
pub fn single_frequency_attack(
    model: &ModularModel,
    a: usize,
    b: usize,
    frequency: usize,
    amplitude: f64,
) -> Result<AttackResult> {
    let surface = RelaxedModularInput::new(model, a, b);
    let x = surface.one_hot();
    let p = model.p_modulus;
    let omega = 2.0 * std::f64::consts::PI * frequency as f64 / p as f64;
    let mut best: Option<AttackResult> = None;
    for step in 0..8 {
        let phase = step as f64 * std::f64::consts::PI / 4.0;
        let wave = Vector::from(
            (0..p).map(|j| (omega * j as f64 + phase).cos()).collect::<Vec<_>>(),
        );
        let u = wave.normalized().expect("cosine wave is non-zero");
        let result = finish(&surface, &x, u.scale(amplitude), 0, surface.answer(), None)?;
        let better = match &best {
            Some(b) => result.success && !b.success,
            None => true,
        };
        if better {
            let done = result.success;
            best = Some(result);
            if done {
                break;
            }
        }
    }
    Ok(best.expect("at least one phase evaluated"))
}

/// Minimal successful l2 PGD budget for one (a, b) pair, by bisection over
/// epsilon with stop-on-success PGD at each probe.
pub fn minimal_pgd_budget(model: &ModularModel, a: usize, b: usize) -> Result<f64> {
    let surface = RelaxedModularInput::new(model, a, b);
    let x = surface.one_hot();
    let mut best = f64::INFINITY;
    let budget = min_scale(|eps| {
        let cfg = AttackConfig {
            norm: AttackNorm::L2,
            epsilon: eps,
            step_size: eps / 20.0,
            max_iters: 100,
            targeted: None,
            stop_on_success: true,
            input_clip: None,
        };
        match pgd(&surface, &x, &cfg) {
            Ok(r) if r.success => {
                best = best.min(r.l2_norm);
                true
            }
            _ => false,
        }
    });
    Ok(best.min(budget))
}

/// Minimal successful l2 budgets for the naive baselines: best single
/// coordinate, mean uniform-noise draw, and the constant vector.
pub fn naive_modular_baselines(
    model: &ModularModel,
    a: usize,
    b: usize,
    noise_draws: usize,
    rng: &mut Rng,
) -> Result<(f64, f64, f64)> {
    let surface = RelaxedModularInput::new(model, a, b);
    let x = surface.one_hot();
    let p = model.p_modulus;

    let mut single_index = f64::INFINITY;
    for j in 0..p {
        for sign in [1.0, -1.0] {
            let budget = min_scale(|s| {
                let mut xa = x.clone();
                xa.data[j] += sign * s;
                flips(&surface, &xa)
            });
            single_index = single_index.min(budget);
        }
    }

    // Mean over draws, not min: in this input dimension the luckiest of even
    // a few dozen random directions aligns with the loss gradient better
    // than the best single coordinate does, which would invert the expected
    // single_index < linf_noise ordering. A typical draw is the honest cost
    // of undirected noise.
    let mut noise_budgets = Vec::new();
    for _ in 0..noise_draws {
        let noise = Vector::from((0..p).map(|_| rng.uniform_range(-1.0, 1.0)).collect::<Vec<_>>());
        let norm = noise.l2_norm();
        let budget = min_scale(|s| flips(&surface, &x.add(&noise.scale(s))));
        if budget.is_finite() {
            noise_budgets.push(budget * norm);
        }
    }
    let linf_noise = if noise_budgets.is_empty() {
        f64::INFINITY
    } else {
        noise_budgets.iter().sum::<f64>() / noise_budgets.len() as f64
    };

    let ones_norm = (p as f64).sqrt();
    let mut uniform = f64::INFINITY;
    for sign in [1.0, -1.0] {
        let budget = min_scale(|c| {
            let xa = Vector::from(x.data.iter().map(|v| v + sign * c).collect::<Vec<_>>());
            flips(&surface, &xa)
        });
        if budget.is_finite() {
            uniform = uniform.min(budget * ones_norm);
        }
    }

    Ok((single_index, linf_noise, uniform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{random_orthogonal, Matrix};
    use crate::synthgen::{CorrelationMode, SynthConfig};

    fn hand_model(w_e: Matrix, w_d: Matrix, p: usize) -> BottleneckModel {
        let m = w_e.rows;
        let d = w_e.cols;
        let k = w_d.rows;
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

    /// 2 classes, 1 feature each, identity geometry: class j reads latent j.
    fn identity_model() -> BottleneckModel {
        hand_model(Matrix::identity(2), Matrix::identity(2), 1)
    }

    #[test]
    fn projections_enforce_their_balls() {
        let mut d = Vector::from(vec![3.0, -0.5, -2.0]);
        project_linf(&mut d, 1.0);
        assert_eq!(d.data, vec![1.0, -0.5, -1.0]);

        let mut d = Vector::from(vec![3.0, 4.0]);
        project_l2(&mut d, 1.0);
        assert!((d.l2_norm() - 1.0).abs() < 1e-12);
        assert!((d.data[0] / d.data[1] - 0.75).abs() < 1e-12);

        // inside the ball: untouched
        let mut d = Vector::from(vec![0.1, 0.2]);
        project_l2(&mut d, 1.0);
        assert_eq!(d.data, vec![0.1, 0.2]);
    }

    #[test]
    fn zero_epsilon_returns_zero_delta() {
        let model = identity_model();
        let x = Vector::from(vec![1.0, 0.2]);
        let cfg = AttackConfig::toy_defaults(AttackNorm::L2, 0.0);
        let mut cfg = cfg;
        cfg.step_size = 1e-3; // validate() requires a positive step
        let r = pgd(&model, &x, &cfg).unwrap();
        assert_eq!(r.delta.data, vec![0.0, 0.0]);
        assert!(!r.success);
        assert_eq!(r.iters_used, 0);
    }

    #[test]
    fn pgd_flips_an_easy_example_and_respects_the_ball() {
        let model = identity_model();
        let x = Vector::from(vec![1.0, 0.8]);
        for norm in [AttackNorm::L2, AttackNorm::LInf] {
            let cfg = AttackConfig::toy_defaults(norm, 0.5);
            let r = pgd(&model, &x, &cfg).unwrap();
            assert!(r.success, "{norm:?} attack should flip a 0.2 margin");
            match norm {
                AttackNorm::L2 => assert!(r.l2_norm <= 0.5 + 1e-9),
                AttackNorm::LInf => assert!(r.linf_norm <= 0.5 + 1e-9),
            }
            assert!(r.x_adv.data.iter().all(|&v| v >= 0.0), "domain clip");
        }
    }

    #[test]
    fn pgd_within_tiny_budget_fails() {
        let model = identity_model();
        let x = Vector::from(vec![1.0, 0.0]);
        let cfg = AttackConfig::toy_defaults(AttackNorm::L2, 0.05);
        let r = pgd(&model, &x, &cfg).unwrap();
        assert!(!r.success, "margin 1.0 cannot fall to epsilon 0.05");
        assert!(r.l2_norm <= 0.05 + 1e-9);
    }

    #[test]
    fn targeted_pgd_reaches_the_requested_class() {
        // three orthogonal classes in a 3-d latent
        let model = hand_model(Matrix::identity(3), Matrix::identity(3), 1);
        let x = Vector::from(vec![1.0, 0.7, 0.6]);
        let mut cfg = AttackConfig::toy_defaults(AttackNorm::L2, 1.0);
        cfg.targeted = Some(2);
        let r = pgd(&model, &x, &cfg).unwrap();
        assert!(r.success);
        assert_eq!(r.predicted_class, Some(2));
    }

    #[test]
    fn optimal_direction_matches_hand_computation() {
        // W_e maps 2 features to a 2-d latent with a known mix
        let w_e = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]);
        let w_d = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let model = hand_model(w_e, w_d, 1);
        // n = w_1 - w_0 = (-1, 1); g_i = v_i . n
        // v_0 = (1, 0) -> -1 ; v_1 = (0.5, 1) -> 0.5
        let g = optimal_direction(&model, 0, 1).unwrap();
        let norm = (1.0f64 + 0.25).sqrt();
        assert!((g.data[0] - (-1.0 / norm)).abs() < 1e-12);
        assert!((g.data[1] - (0.5 / norm)).abs() < 1e-12);
    }

    #[test]
    fn optimal_attack_beats_random_directions_on_the_logit_gap() {
        let mut rng = Rng::new(11);
        let w_e = {
            let mut m = Matrix::zeros(3, 8);
            for v in &mut m.data {
                *v = rng.normal();
            }
            m
        };
        let w_d = {
            let mut m = Matrix::zeros(5, 3);
            for v in &mut m.data {
                *v = rng.normal();
            }
            m
        };
        let model = hand_model(w_e, w_d, 1);
        let opt = optimal_direction(&model, 0, 1).unwrap();
        let gap = |u: &Vector| {
            let h = model.w_e.matmul(&u.as_row().transpose()).unwrap();
            let z = model.w_d.matmul(&h).unwrap();
            z.get(1, 0) - z.get(0, 0)
        };
        let best = gap(&opt);
        for _ in 0..2000 {
            let u = rng.unit_sphere(8);
            assert!(gap(&u) <= best + 1e-9);
        }
    }

    #[test]
    fn optimal_attack_is_invariant_to_latent_rotation() {
        let mut rng = Rng::new(23);
        let w_e = {
            let mut m = Matrix::zeros(4, 12);
            for v in &mut m.data {
                *v = rng.normal();
            }
            m
        };
        let w_d = {
            let mut m = Matrix::zeros(6, 4);
            for v in &mut m.data {
                *v = rng.normal();
            }
            m
        };
        let model = hand_model(w_e.clone(), w_d.clone(), 1);
        let base = optimal_direction(&model, 2, 4).unwrap();
        for trial in 0..20 {
            let q = random_orthogonal(4, &mut rng);
            let rotated = hand_model(q.matmul(&w_e).unwrap(), w_d.matmul(&q.transpose()).unwrap(), 1);
            let dir = optimal_direction(&rotated, 2, 4).unwrap();
            for (a, b) in base.data.iter().zip(&dir.data) {
                assert!((a - b).abs() < 1e-9, "trial {trial}");
            }
        }
    }

    #[test]
    fn optimal_attack_rejects_degenerate_pairs_and_relu_models() {
        // identical decoder rows -> degenerate
        let w_d = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let model = hand_model(Matrix::identity(2), w_d, 1);
        assert!(optimal_direction(&model, 0, 1).is_err());

        let mut relu_model = identity_model();
        relu_model.variant = Variant::MseRelu;
        let x = Vector::from(vec![1.0, 0.0]);
        assert!(optimal_attack(&relu_model, &x, 0, 1, 0.1).is_err());
    }

    #[test]
    fn random_baseline_draws_have_exactly_the_requested_norm() {
        let mut rng = Rng::new(5);
        let x = Vector::zeros(16);
        let draws = random_baseline(&x, 0.25, 50, &mut rng).unwrap();
        assert_eq!(draws.len(), 50);
        for d in &draws {
            assert!((d.l2_norm() - 0.25).abs() < 1e-12);
        }
        assert!(random_baseline(&x, 0.25, 0, &mut rng).is_err());
    }

    #[test]
    fn min_scale_finds_a_monotone_threshold() {
        let s = min_scale(|v| v >= 0.37);
        assert!((s - 0.37).abs() < 1e-3, "found {s}");
        assert!(min_scale(|_| false).is_infinite());
    }

    #[test]
    fn modular_attack_surface_is_consistent() {
        let cfg = crate::modular::ModularTrainConfig {
            max_epochs: 2,
            eval_every: 1,
            ..crate::modular::ModularTrainConfig::defaults(2)
        };
        let model = crate::modular::train_modular(&cfg).unwrap();
        let surface = RelaxedModularInput::new(&model, 10, 20);
        let x = surface.one_hot();
        assert_eq!(surface.true_class(&x).unwrap(), Some(30));
        assert_eq!(surface.input_dim(), 113);
        // PGD runs on the relaxed surface and respects the l2 ball
        let cfg = AttackConfig {
            norm: AttackNorm::L2,
            epsilon: 0.3,
            step_size: 0.015,
            max_iters: 40,
            targeted: None,
            stop_on_success: true,
            input_clip: None,
        };
        let r = pgd(&surface, &x, &cfg).unwrap();
        assert!(r.l2_norm <= 0.3 + 1e-9);
        assert!(r.delta.all_finite());
    }
}
