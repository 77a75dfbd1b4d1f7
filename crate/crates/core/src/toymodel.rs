//! Bottleneck encoder/decoder models for the synthetic argmax task.
//!
//! Two variants: `CeLinear` (cross-entropy loss, no ReLU, no biases — the
//! primary setup) and `MseRelu` (MSE against one-hot targets, ReLU encoder,
//! biases). Training draws a fresh unambiguous batch every step and stops
//! early once held-out accuracy plateaus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine, AdamState, CompGraph, Matrix, Rng, Vector};
use crate::synthgen::{Label, Sampler, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CeLinear,
    MseRelu,
}

/// Trained bottleneck model. `w_e` is m x d (columns are per-feature latent
/// directions), `w_d` is k x m (rows are class read-out directions).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BottleneckModel {
    pub w_e: Matrix,
    pub w_d: Matrix,
    pub b_e: Option<Vector>,
    pub b_d: Option<Vector>,
    pub variant: Variant,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub p: usize,
    pub train_seed: u64,
    pub synth_config: SynthConfig,
    pub clean_accuracy: f64,
    /// False when the step budget ran out before the accuracy plateaued.
    pub converged: bool,
}

impl BottleneckModel {
    /// Encoder activations and logits for one input.
    pub fn forward(&self, x: &Vector) -> Result<(Vector, Vector)> {
        if x.len() != self.d {
            return Err(Error::Shape(format!("input length {} != d {}", x.len(), self.d)));
        }
        let mut h = vec![0.0; self.m];
        for r in 0..self.m {
            let row = self.w_e.row(r);
            h[r] = row.iter().zip(&x.data).map(|(w, v)| w * v).sum();
        }
        if let Some(b) = &self.b_e {
            for (hv, bv) in h.iter_mut().zip(&b.data) {
                *hv += bv;
            }
        }
        if self.variant == Variant::MseRelu {
            for hv in &mut h {
                if *hv < 0.0 {
                    *hv = 0.0;
                }
            }
        }
        let mut z = vec![0.0; self.k];
        for r in 0..self.k {
            let row = self.w_d.row(r);
            z[r] = row.iter().zip(&h).map(|(w, v)| w * v).sum();
        }
        if let Some(b) = &self.b_d {
            for (zv, bv) in z.iter_mut().zip(&b.data) {
                *zv += bv;
            }
        }
        Ok((Vector::from(h), Vector::from(z)))
    }

    /// Argmax over logits; exact top ties are flagged.
    pub fn predict(&self, x: &Vector) -> Result<Label> {
        let (_, z) = self.forward(x)?;
        let mut best = 0usize;
        for j in 1..self.k {
            if z.data[j] > z.data[best] {
                best = j;
            }
        }
        let tie = (0..self.k).any(|j| j != best && z.data[j] == z.data[best]);
        Ok(if tie { Label::Ambiguous } else { Label::Class(best) })
    }

    /// Mean of class j's p encoder columns, unit-normalized.
    pub fn class_direction(&self, j: usize) -> Result<Vector> {
        if j >= self.k {
            return Err(Error::Config(format!("class {j} out of range")));
        }
        let mut acc = Vector::zeros(self.m);
        for i in 0..self.p {
            let col = self.w_e.col(j * self.p + i);
            acc = acc.add(&col);
        }
        acc = acc.scale(1.0 / self.p as f64);
        acc.normalized()
            .ok_or_else(|| Error::Degenerate(format!("class {j} direction is zero")))
    }

    /// Per-feature latent direction (column i of the encoder).
    pub fn feature_direction(&self, i: usize) -> Vector {
        self.w_e.col(i)
    }

    /// Accuracy on a fresh unambiguous batch drawn from the model's own
    /// data distribution.
    pub fn evaluate_accuracy(&self, n: usize, stream_index: u64) -> Result<f64> {
        let mut sampler = Sampler::new(&self.synth_config, "eval", stream_index)?;
        let (x, y) = sampler.next_batch(n);
        let mut correct = 0usize;
        for i in 0..n {
            let row = Vector::from(x.row(i).to_vec());
            if self.predict(&row)? == Label::Class(y[i]) {
                correct += 1;
            }
        }
        Ok(correct as f64 / n as f64)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&json)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub m: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Evaluation cadence and plateau window for early stopping.
    pub eval_every: usize,
    pub plateau_steps: usize,
    pub eval_size: usize,
    /// Stop immediately once held-out accuracy reaches this level.
    pub accuracy_target: f64,
    pub train_seed: u64,
    /// Cosine-decay the learning rate to 10% of its initial value over
    /// max_steps (helps the harder high-superposition settings converge).
    pub cosine_decay: bool,
    /// Decoupled (AdamW) weight-decay coefficient; 0 disables decay.
    /// A small positive value turns the symmetric solution into a true
    /// finite-norm optimum, which full-capacity (m >= k) models need to
    /// converge to exactly.
    pub weight_decay: f64,
    /// Average the parameters over this many final steps (0 disables).
    /// Averaging cancels the optimizer's stationary noise, which otherwise
    /// leaves a small asymmetry between per-class weights.
    pub tail_average: usize,
    /// When set, this class's latent directions are held orthogonal to all
    /// other classes throughout training.
    pub orthogonal_class: Option<usize>,
}

impl TrainConfig {
    pub fn defaults(variant: Variant, m: usize, train_seed: u64) -> Self {
        TrainConfig {
            variant,
            m,
            learning_rate: 1e-3,
            batch_size: 512,
            max_steps: 20_000,
            eval_every: 250,
            plateau_steps: 2_000,
            eval_size: 2_000,
            accuracy_target: 0.999,
            train_seed,
            cosine_decay: true,
            weight_decay: 0.0,
            tail_average: 0,
            orthogonal_class: None,
        }
    }

    pub fn validate(&self, synth: &SynthConfig) -> Result<()> {
        if self.m == 0 || self.batch_size == 0 || self.max_steps == 0 || self.learning_rate <= 0.0 {
            return Err(Error::Config("train config fields must be positive".into()));
        }
        if let Some(c) = self.orthogonal_class {
            if c >= synth.k {
                return Err(Error::Config("orthogonal class out of range".into()));
            }
            if self.m < 2 {
                return Err(Error::Config(
                    "m must be >= 2 to reserve an orthogonal direction".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Train a bottleneck model. Non-convergence inside the step budget yields a
/// model with `converged == false`, not an error.
pub fn train(config: &TrainConfig, synth: &SynthConfig) -> Result<BottleneckModel> {
    config.validate(synth)?;
    synth.validate()?;
    let d = synth.input_dim();
    let k = synth.k;
    let m = config.m;
    let mut rng = Rng::new(config.train_seed).derive("init", 0);
    let bound = 1.0 / (d as f64).sqrt();
    // trainable tensors: encoder as d x m, decoder as m x k (transposed
    // relative to the stored model so batches multiply from the left)
    let mut we_t = Matrix::zeros(d, m);
    for v in &mut we_t.data {
        *v = rng.uniform_range(-bound, bound);
    }
    let mut wd_t = Matrix::zeros(m, k);
    for v in &mut wd_t.data {
        *v = rng.uniform_range(-bound, bound);
    }
    let with_bias = config.variant == Variant::MseRelu;
    let mut params = vec![we_t, wd_t];
    let mut shapes = vec![(d, m), (m, k)];
    if with_bias {
        params.push(Matrix::zeros(1, m));
        params.push(Matrix::zeros(1, k));
        shapes.push((1, m));
        shapes.push((1, k));
    }
    if let Some(c) = config.orthogonal_class {
        enforce_orthogonal_class(&mut params[0], synth.p, c, m);
    }

    let mut adam = AdamState::new(&shapes, config.learning_rate, config.weight_decay);
    let mut sampler = Sampler::new(synth, "train", config.train_seed)?;
    let mut heldout = Sampler::new(synth, "heldout", config.train_seed)?;
    let (hx, hy) = heldout.next_batch(config.eval_size);

    let mut best_acc = 0.0f64;
    let mut best_step = 0usize;
    let mut converged = false;
    let avg_from = config.max_steps.saturating_sub(config.tail_average);
    let mut avg_sum: Option<Vec<Matrix>> = None;
    let mut avg_count = 0usize;
    for step in 0..config.max_steps {
        let (x, y) = sampler.next_batch(config.batch_size);
        let mut g = CompGraph::new();
        let xin = g.leaf(x);
        let ids: Vec<_> = params.iter().map(|p| g.leaf(p.clone())).collect();
        let mut h = g.matmul(xin, ids[0])?;
        if with_bias {
            h = g.add(h, ids[2])?;
            h = g.relu(h);
        }
        let mut z = g.matmul(h, ids[1])?;
        if with_bias {
            z = g.add(z, ids[3])?;
        }
        let loss = match config.variant {
            Variant::CeLinear => g.softmax_cross_entropy(z, &y)?,
            Variant::MseRelu => {
                let mut target = Matrix::zeros(config.batch_size, k);
                for (r, &c) in y.iter().enumerate() {
                    target.set(r, c, 1.0);
                }
                let t = g.leaf(target);
                g.mse(z, t)?
            }
        };
        if config.cosine_decay {
            let t = step as f64 / config.max_steps as f64;
            adam.lr = config.learning_rate
                * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()));
        }
        let grads = g.backward(loss)?;
        let grad_list: Vec<Matrix> = ids
            .iter()
            .map(|&id| grads[id].clone().expect("param reachable from loss"))
            .collect();
        adam.step(&mut params, &grad_list)?;
        if let Some(c) = config.orthogonal_class {
            enforce_orthogonal_class(&mut params[0], synth.p, c, m);
        }
        if config.tail_average > 0 && step >= avg_from {
            match &mut avg_sum {
                Some(sums) => {
                    for (s, p) in sums.iter_mut().zip(&params) {
                        for (sv, pv) in s.data.iter_mut().zip(&p.data) {
                            *sv += pv;
                        }
                    }
                }
                None => avg_sum = Some(params.clone()),
            }
            avg_count += 1;
        }

        if (step + 1) % config.eval_every == 0 {
            let model = assemble(&params, config, synth, 0.0, false);
            let acc = accuracy_on(&model, &hx, &hy)?;
            if acc > best_acc + 1e-3 {
                best_acc = acc;
                best_step = step;
            }
            if acc >= config.accuracy_target || step - best_step >= config.plateau_steps {
                converged = true;
                break;
            }
        }
    }

    if let Some(sums) = avg_sum {
        params = sums;
        for p in &mut params {
            for v in &mut p.data {
                *v /= avg_count as f64;
            }
        }
    }
    let mut model = assemble(&params, config, synth, 0.0, converged);
    model.clean_accuracy = accuracy_on(&model, &hx, &hy)?;
    Ok(model)
}

/// Train with one class's latent directions pinned orthogonal to the rest.
pub fn train_orthogonal_class(
    config: &TrainConfig,
    synth: &SynthConfig,
    class_index: usize,
) -> Result<BottleneckModel> {
    let mut cfg = config.clone();
    cfg.orthogonal_class = Some(class_index);
    train(&cfg, synth)
}

fn assemble(
    params: &[Matrix],
    config: &TrainConfig,
    synth: &SynthConfig,
    clean_accuracy: f64,
    converged: bool,
) -> BottleneckModel {
    let with_bias = config.variant == Variant::MseRelu;
    BottleneckModel {
        w_e: params[0].transpose(),
        w_d: params[1].transpose(),
        b_e: with_bias.then(|| Vector::from(params[2].data.clone())),
        b_d: with_bias.then(|| Vector::from(params[3].data.clone())),
        variant: config.variant,
        m: config.m,
        k: synth.k,
        d: synth.input_dim(),
        p: synth.p,
        train_seed: config.train_seed,
        synth_config: synth.clone(),
        clean_accuracy,
        converged,
    }
}

fn accuracy_on(model: &BottleneckModel, x: &Matrix, y: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for i in 0..y.len() {
        let row = Vector::from(x.row(i).to_vec());
        if model.predict(&row)? == Label::Class(y[i]) {
            correct += 1;
        }
    }
    Ok(correct as f64 / y.len() as f64)
}

/// Reserve the last latent axis for the constrained class: its columns keep
/// only that coordinate, every other column loses it. This keeps the
/// constrained class exactly orthogonal to all others after every step.
fn enforce_orthogonal_class(we_t: &mut Matrix, p: usize, class: usize, m: usize) {
    let axis = m - 1;
    let d = we_t.rows;
    for feat in 0..d {
        let in_class = feat / p == class;
        for dim in 0..m {
            if in_class && dim != axis {
                we_t.set(feat, dim, 0.0);
            }
            if !in_class && dim == axis {
                we_t.set(feat, dim, 0.0);
            }
        }
    }
    // keep the constrained columns trainable: if projection zeroed them
    // entirely the class could never recover, so reseed a tiny magnitude
    for feat in (class * p)..((class + 1) * p) {
        if we_t.get(feat, axis) == 0.0 {
            we_t.set(feat, axis, 1e-3);
        }
    }
}

/// Max |cos| between the constrained class's feature directions and every
/// other feature direction.
pub fn max_cross_class_cosine(model: &BottleneckModel, class: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in (class * model.p)..((class + 1) * model.p) {
        let vi = model.feature_direction(i);
        for j in 0..model.d {
            if j / model.p == class {
                continue;
            }
            let vj = model.feature_direction(j);
            worst = worst.max(cosine(&vi, &vj).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::CorrelationMode;

    fn synth(k: usize, p: usize, density: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            k,
            p,
            density,
            correlation_mode: CorrelationMode::Uncorrelated,
            seed,
        }
    }

    #[test]
    fn tail_averaging_and_weight_decay_train_to_high_accuracy() {
        let mut cfg = TrainConfig::defaults(Variant::CeLinear, 2, 0);
        cfg.max_steps = 3_000;
        cfg.plateau_steps = 3_000;
        cfg.accuracy_target = 1.1;
        cfg.weight_decay = 1e-3;
        cfg.tail_average = 500;
        let model = train(&cfg, &synth(2, 3, 0.3, 0)).unwrap();
        assert!(model.clean_accuracy > 0.95, "accuracy {}", model.clean_accuracy);
    }

    fn identity_model() -> BottleneckModel {
        BottleneckModel {
            w_e: Matrix::identity(2),
            w_d: Matrix::identity(2),
            b_e: None,
            b_d: None,
            variant: Variant::CeLinear,
            m: 2,
            k: 2,
            d: 2,
            p: 1,
            train_seed: 0,
            synth_config: synth(2, 1, 1.0, 0),
            clean_accuracy: 1.0,
            converged: true,
        }
    }

    #[test]
    fn identity_weights_forward() {
        let model = identity_model();
        let (h, z) = model.forward(&Vector::from(vec![0.3, 0.7])).unwrap();
        assert_eq!(h.data, vec![0.3, 0.7]);
        assert_eq!(z.data, vec![0.3, 0.7]);
        assert_eq!(model.predict(&Vector::from(vec![0.3, 0.7])).unwrap(), Label::Class(1));
    }

    #[test]
    fn zero_input_ties() {
        let model = identity_model();
        let x = Vector::from(vec![0.0, 0.0]);
        let (_, z) = model.forward(&x).unwrap();
        assert_eq!(z.data, vec![0.0, 0.0]);
        assert_eq!(model.predict(&x).unwrap(), Label::Ambiguous);
    }

    #[test]
    fn forward_matches_dot_product_oracle() {
        let mut rng = Rng::new(17);
        let (k, p, m) = (4, 2, 3);
        let d = k * p;
        let mut w_e = Matrix::zeros(m, d);
        let mut w_d = Matrix::zeros(k, m);
        for v in w_e.data.iter_mut().chain(w_d.data.iter_mut()) {
            *v = rng.uniform_range(-1.0, 1.0);
        }
        let model = BottleneckModel {
            w_e: w_e.clone(),
            w_d: w_d.clone(),
            b_e: None,
            b_d: None,
            variant: Variant::CeLinear,
            m,
            k,
            d,
            p,
            train_seed: 0,
            synth_config: synth(k, p, 1.0, 0),
            clean_accuracy: 0.0,
            converged: true,
        };
        let x = Vector::from((0..d).map(|_| rng.uniform()).collect::<Vec<_>>());
        let (_, z) = model.forward(&x).unwrap();
        // hand-rolled oracle with explicit index arithmetic
        for j in 0..k {
            let mut zj = 0.0;
            for a in 0..m {
                let mut ha = 0.0;
                for b in 0..d {
                    ha += w_e.get(a, b) * x.data[b];
                }
                zj += w_d.get(j, a) * ha;
            }
            assert!((z.data[j] - zj).abs() < 1e-12);
        }
    }

    #[test]
    fn class_direction_is_unit_mean_of_columns() {
        let mut model = identity_model();
        // one class with columns [1,0] and [0,1]
        model.p = 2;
        model.k = 1;
        model.d = 2;
        let dir = model.class_direction(0).unwrap();
        let inv = 1.0 / 2.0f64.sqrt();
        assert!((dir.data[0] - inv).abs() < 1e-12);
        assert!((dir.data[1] - inv).abs() < 1e-12);
        assert!((dir.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trains_dense_k3_to_high_accuracy() {
        let sc = synth(3, 3, 1.0, 100);
        let mut tc = TrainConfig::defaults(Variant::CeLinear, 2, 100);
        tc.max_steps = 6_000;
        let model = train(&tc, &sc).unwrap();
        assert!(model.clean_accuracy >= 0.99, "accuracy {}", model.clean_accuracy);
    }

    #[test]
    fn training_is_deterministic() {
        let sc = synth(3, 2, 0.5, 5);
        let mut tc = TrainConfig::defaults(Variant::CeLinear, 2, 9);
        tc.max_steps = 300;
        tc.eval_every = 100;
        let a = train(&tc, &sc).unwrap();
        let b = train(&tc, &sc).unwrap();
        assert_eq!(a.w_e.data, b.w_e.data);
        assert_eq!(a.w_d.data, b.w_d.data);
    }

    #[test]
    fn orthogonal_class_constraint_enforced() {
        let sc = synth(7, 3, 0.05, 3);
        let mut tc = TrainConfig::defaults(Variant::CeLinear, 3, 3);
        tc.max_steps = 2_000;
        let model = train_orthogonal_class(&tc, &sc, 0).unwrap();
        assert!(max_cross_class_cosine(&model, 0) < 1e-3);
    }

    #[test]
    fn orthogonal_class_needs_room() {
        let sc = synth(3, 1, 0.5, 1);
        let mut tc = TrainConfig::defaults(Variant::CeLinear, 1, 1);
        tc.orthogonal_class = Some(0);
        assert!(train(&tc, &sc).is_err());
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let sc = synth(3, 2, 0.5, 5);
        let mut tc = TrainConfig::defaults(Variant::CeLinear, 2, 9);
        tc.max_steps = 200;
        tc.eval_every = 100;
        let model = train(&tc, &sc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = BottleneckModel::load(&path).unwrap();
        assert_eq!(model.w_e.data, loaded.w_e.data);
        assert_eq!(model.w_d.data, loaded.w_d.data);
        assert_eq!(model.variant, loaded.variant);
    }

    #[test]
    fn mse_relu_variant_trains() {
        let sc = synth(3, 3, 1.0, 11);
        let mut tc = TrainConfig::defaults(Variant::MseRelu, 2, 11);
        tc.max_steps = 6_000;
        let model = train(&tc, &sc).unwrap();
        assert!(model.b_e.is_some() && model.b_d.is_some());
        assert!(model.clean_accuracy >= 0.9, "accuracy {}", model.clean_accuracy);
    }
}
