//! Modular addition study: a shared-embedding MLP trained on (a + b) mod P
//! until it generalizes, Fourier analysis of the learned embedding, and
//! frequency-space comparison of attack perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dft_energies, AdamState, CompGraph, Matrix, Rng, Vector};

pub const DEFAULT_MODULUS: usize = 113;
pub const EMBED_DIM: usize = 100;
pub const HIDDEN_DIM: usize = 200;

/// Shared-embedding MLP for modular addition: both operands are looked up in
/// `w_embed`, their embeddings concatenated, and passed through three hidden
/// ReLU layers to P logits. The first hidden layer is stored split into the
/// halves acting on each operand, which is equivalent to a single 2E x H
/// weight on the concatenation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModularModel {
    pub p_modulus: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub w_embed: Matrix,
    pub w1a: Matrix,
    pub w1b: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
    pub w3: Matrix,
    pub b3: Vector,
    pub w_out: Matrix,
    pub b_out: Vector,
    pub train_seed: u64,
    pub train_fraction: f64,
    pub epochs_run: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Frequencies (in cycles over 0..P) that dominate the embedding
    /// spectrum, extracted after training.
    pub key_frequencies: Vec<usize>,
    /// Per-frequency embedding energy (index f in 0..=P/2).
    pub frequency_energies: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModularTrainConfig {
    pub p_modulus: usize,
    pub train_fraction: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl ModularTrainConfig {
    pub fn defaults(seed: u64) -> Self {
        ModularTrainConfig {
            p_modulus: DEFAULT_MODULUS,
            train_fraction: 0.3,
            learning_rate: 1e-3,
            weight_decay: 4.0,
            max_epochs: 50_000,
            eval_every: 50,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_modulus < 2 || !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction <= 0.0 {
            return Err(Error::Config("modular config out of range".into()));
        }
        if self.learning_rate <= 0.0 || self.max_epochs < 1 || self.eval_every < 1 {
            return Err(Error::Config("modular optimizer config out of range".into()));
        }
        Ok(())
    }
}

impl ModularModel {
    /// Embedding of a relaxed (not necessarily one-hot) operand encoding.
    pub fn embed_relaxed(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.p_modulus {
            return Err(Error::Shape("relaxed input length".into()));
        }
        let h = x.as_row().matmul(&self.w_embed)?;
        Ok(Vector::from(h.data))
    }

    /// Logits for a relaxed first operand and an integer second operand.
    pub fn logits_relaxed(&self, x_a: &Vector, b: usize) -> Result<Vector> {
        if b >= self.p_modulus {
            return Err(Error::Config("operand out of range".into()));
        }
        let h_a = self.embed_relaxed(x_a)?;
        let h_b = Vector::from(self.w_embed.row(b).to_vec());
        let mut z1 = h_a
            .as_row()
            .matmul(&self.w1a)?
            .add(&h_b.as_row().matmul(&self.w1b)?)?
            .add(&self.b1.as_row())?;
        for v in &mut z1.data {
            *v = v.max(0.0);
        }
        let mut z2 = z1.matmul(&self.w2)?.add(&self.b2.as_row())?;
        for v in &mut z2.data {
            *v = v.max(0.0);
        }
        let mut z3 = z2.matmul(&self.w3)?.add(&self.b3.as_row())?;
        for v in &mut z3.data {
            *v = v.max(0.0);
        }
        let out = z3.matmul(&self.w_out)?.add(&self.b_out.as_row())?;
        Ok(Vector::from(out.data))
    }

    /// Logits for integer operands (one-hot path).
    pub fn logits(&self, a: usize, b: usize) -> Result<Vector> {
        if a >= self.p_modulus {
            return Err(Error::Config("operand out of range".into()));
        }
        let mut x = Vector::zeros(self.p_modulus);
        x.data[a] = 1.0;
        self.logits_relaxed(&x, b)
    }

    pub fn predict(&self, a: usize, b: usize) -> Result<usize> {
        let z = self.logits(a, b)?;
        let mut best = 0usize;
        for j in 1..z.len() {
            if z.data[j] > z.data[best] {
                best = j;
            }
        }
        Ok(best)
    }

    /// CE loss against `label` on the relaxed surface, and its gradient with
    /// respect to the relaxed input.
    pub fn loss_and_input_grad_relaxed(
        &self,
        x_a: &Vector,
        b: usize,
        label: usize,
    ) -> Result<(f64, Vector)> {
        if b >= self.p_modulus || label >= self.p_modulus {
            return Err(Error::Config("operand/label out of range".into()));
        }
        let mut g = CompGraph::new();
        let xin = g.leaf(x_a.as_row());
        let we = g.leaf(self.w_embed.clone());
        let h_a = g.matmul(xin, we)?;
        let h_b = g.leaf(Matrix::from_vec(1, self.embed_dim, self.w_embed.row(b).to_vec())?);
        let w1a = g.leaf(self.w1a.clone());
        let w1b = g.leaf(self.w1b.clone());
        let b1 = g.leaf(self.b1.as_row());
        let za = g.matmul(h_a, w1a)?;
        let zb = g.matmul(h_b, w1b)?;
        let zsum = g.add(za, zb)?;
        let z1p = g.add(zsum, b1)?;
        let z1 = g.relu(z1p);
        let w2 = g.leaf(self.w2.clone());
        let b2 = g.leaf(self.b2.as_row());
        let z2m = g.matmul(z1, w2)?;
        let z2p = g.add(z2m, b2)?;
        let z2 = g.relu(z2p);
        let w3 = g.leaf(self.w3.clone());
        let b3 = g.leaf(self.b3.as_row());
        let z3m = g.matmul(z2, w3)?;
        let z3p = g.add(z3m, b3)?;
        let z3 = g.relu(z3p);
        let wo = g.leaf(self.w_out.clone());
        let bo = g.leaf(self.b_out.as_row());
        let zom = g.matmul(z3, wo)?;
        let logits = g.add(zom, bo)?;
        let loss = g.softmax_cross_entropy(logits, &[label])?;
        let grads = g.backward(loss)?;
        let gx = grads[xin].as_ref().expect("input reachable");
        Ok((g.value(loss).data[0], Vector::from(gx.data.clone())))
    }

    /// Accuracy over a set of (a, b) pairs.
    pub fn accuracy(&self, pairs: &[(usize, usize)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Degenerate("empty evaluation set".into()));
        }
        let logits = self.batch_logits(pairs)?;
        let mut correct = 0usize;
        for (i, &(a, b)) in pairs.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0usize;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == (a + b) % self.p_modulus {
                correct += 1;
            }
        }
        Ok(correct as f64 / pairs.len() as f64)
    }

    fn batch_logits(&self, pairs: &[(usize, usize)]) -> Result<Matrix> {
        let n = pairs.len();
        let e = self.embed_dim;
        let mut ha = Matrix::zeros(n, e);
        let mut hb = Matrix::zeros(n, e);
        for (i, &(a, b)) in pairs.iter().enumerate() {
            ha.row_mut(i).copy_from_slice(self.w_embed.row(a));
            hb.row_mut(i).copy_from_slice(self.w_embed.row(b));
        }
        let broadcast = |m: Matrix, bias: &Vector| -> Result<Matrix> {
            let mut out = m;
            for i in 0..out.rows {
                for (v, bv) in out.row_mut(i).iter_mut().zip(&bias.data) {
                    *v += bv;
                }
            }
            Ok(out)
        };
        let relu = |mut m: Matrix| {
            for v in &mut m.data {
                *v = v.max(0.0);
            }
            m
        };
        let z1 = relu(broadcast(ha.matmul(&self.w1a)?.add(&hb.matmul(&self.w1b)?)?, &self.b1)?);
        let z2 = relu(broadcast(z1.matmul(&self.w2)?, &self.b2)?);
        let z3 = relu(broadcast(z2.matmul(&self.w3)?, &self.b3)?);
        broadcast(z3.matmul(&self.w_out)?, &self.b_out)
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

/// Deterministic train/test split of all P^2 ordered pairs.
pub fn split_pairs(p: usize, fraction: f64, seed: u64) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut all: Vec<(usize, usize)> = (0..p).flat_map(|a| (0..p).map(move |b| (a, b))).collect();
    let mut rng = Rng::new(seed).derive("modular-split", 0);
    // Fisher-Yates shuffle
    for i in (1..all.len()).rev() {
        let j = rng.uniform_usize(i + 1);
        all.swap(i, j);
    }
    let n_train = ((all.len() as f64) * fraction).round() as usize;
    let test = all.split_off(n_train);
    (all, test)
}

fn init_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in &mut m.data {
        *v = rng.uniform_range(-bound, bound);
    }
    m
}

/// Full-batch AdamW training on the train split, stopping early once test
/// accuracy reaches 100%. Key frequencies are extracted before returning.
pub fn train_modular(config: &ModularTrainConfig) -> Result<ModularModel> {
    train_modular_with_progress(config, |_, _, _| {})
}

/// Like [`train_modular`] but invokes `progress(epoch, loss, test_accuracy)`
/// at every evaluation point.
pub fn train_modular_with_progress(
    config: &ModularTrainConfig,
    mut progress: impl FnMut(usize, f64, f64),
) -> Result<ModularModel> {
    config.validate()?;
    let p = config.p_modulus;
    let (train, test) = split_pairs(p, config.train_fraction, config.seed);
    let mut rng = Rng::new(config.seed).derive("modular-init", 0);

    let mut params = vec![
        init_matrix(p, EMBED_DIM, &mut rng),
        init_matrix(EMBED_DIM, HIDDEN_DIM, &mut rng),
        init_matrix(EMBED_DIM, HIDDEN_DIM, &mut rng),
        Matrix::zeros(1, HIDDEN_DIM),
        init_matrix(HIDDEN_DIM, HIDDEN_DIM, &mut rng),
        Matrix::zeros(1, HIDDEN_DIM),
        init_matrix(HIDDEN_DIM, HIDDEN_DIM, &mut rng),
        Matrix::zeros(1, HIDDEN_DIM),
        init_matrix(HIDDEN_DIM, p, &mut rng),
        Matrix::zeros(1, p),
    ];
    let shapes: Vec<(usize, usize)> = params.iter().map(|m| (m.rows, m.cols)).collect();
    let mut adam = AdamState::new(&shapes, config.learning_rate, config.weight_decay);

    let a_idx: Vec<usize> = train.iter().map(|&(a, _)| a).collect();
    let b_idx: Vec<usize> = train.iter().map(|&(_, b)| b).collect();
    let labels: Vec<usize> = train.iter().map(|&(a, b)| (a + b) % p).collect();

    let mut epochs_run = 0usize;
    for epoch in 1..=config.max_epochs {
        let mut g = CompGraph::new();
        let ids: Vec<_> = params.iter().map(|m| g.leaf(m.clone())).collect();
        let ha = g.embedding_lookup(ids[0], &a_idx)?;
        let hb = g.embedding_lookup(ids[0], &b_idx)?;
        let za = g.matmul(ha, ids[1])?;
        let zb = g.matmul(hb, ids[2])?;
        let zs = g.add(za, zb)?;
        let z1p = g.add(zs, ids[3])?;
        let z1 = g.relu(z1p);
        let z2m = g.matmul(z1, ids[4])?;
        let z2p = g.add(z2m, ids[5])?;
        let z2 = g.relu(z2p);
        let z3m = g.matmul(z2, ids[6])?;
        let z3p = g.add(z3m, ids[7])?;
        let z3 = g.relu(z3p);
        let zom = g.matmul(z3, ids[8])?;
        let logits = g.add(zom, ids[9])?;
        let loss = g.softmax_cross_entropy(logits, &labels)?;
        let grads = g.backward(loss)?;
        let grad_mats: Vec<Matrix> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                grads[id]
                    .clone()
                    .unwrap_or_else(|| Matrix::zeros(shapes[i].0, shapes[i].1))
            })
            .collect();
        adam.step(&mut params, &grad_mats)?;
        epochs_run = epoch;

        if epoch % config.eval_every == 0 || epoch == config.max_epochs {
            let probe = assemble(config, params.clone(), epoch, 0.0, 0.0);
            let test_acc = probe.accuracy(&test)?;
            progress(epoch, g.value(loss).data[0], test_acc);
            if test_acc >= 1.0 {
                break;
            }
        }
    }
    let mut model = assemble(config, params, epochs_run, 0.0, 0.0);
    model.train_accuracy = model.accuracy(&train)?;
    model.test_accuracy = model.accuracy(&test)?;
    // partial generalization is left to the caller to judge; frequencies
    // are extracted either way
    let sig = extract_key_frequencies(&model, 0.85)?;
    model.key_frequencies = sig.dominant;
    model.frequency_energies = sig.energies;
    Ok(model)
}

fn assemble(
    config: &ModularTrainConfig,
    params: Vec<Matrix>,
    epochs: usize,
    train_acc: f64,
    test_acc: f64,
) -> ModularModel {
    let mut it = params.into_iter();
    let row_vec = |m: Matrix| Vector::from(m.data);
    let w_embed = it.next().unwrap();
    let w1a = it.next().unwrap();
    let w1b = it.next().unwrap();
    let b1 = row_vec(it.next().unwrap());
    let w2 = it.next().unwrap();
    let b2 = row_vec(it.next().unwrap());
    let w3 = it.next().unwrap();
    let b3 = row_vec(it.next().unwrap());
    let w_out = it.next().unwrap();
    let b_out = row_vec(it.next().unwrap());
    ModularModel {
        p_modulus: config.p_modulus,
        embed_dim: EMBED_DIM,
        hidden_dim: HIDDEN_DIM,
        w_embed,
        w1a,
        w1b,
        b1,
        w2,
        b2,
        w3,
        b3,
        w_out,
        b_out,
        train_seed: config.seed,
        train_fraction: config.train_fraction,
        epochs_run: epochs,
        train_accuracy: train_acc,
        test_accuracy: test_acc,
        key_frequencies: Vec::new(),
        frequency_energies: Vec::new(),
    }
}

/// Spectrum summary of an embedding or perturbation: per-frequency energy
/// and the minimal dominant set capturing `threshold` of the non-DC energy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencySignature {
    pub energies: Vec<f64>,
    pub dominant: Vec<usize>,
}

/// Dominant frequency set of a signal over 0..P: sort non-DC frequencies by
/// energy and take the minimal prefix whose cumulative energy reaches
/// `threshold` of the non-DC total.
pub fn dominant_frequencies(energies: &[f64], threshold: f64) -> Vec<usize> {
    let total: f64 = energies.iter().skip(1).sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (1..energies.len()).collect();
    order.sort_by(|&a, &b| energies[b].partial_cmp(&energies[a]).unwrap());
    let mut acc = 0.0;
    let mut dominant = Vec::new();
    for f in order {
        dominant.push(f);
        acc += energies[f];
        if acc >= threshold * total {
            break;
        }
    }
    dominant.sort_unstable();
    dominant
}

/// Aggregate embedding spectrum: DFT energies of each embedding column as a
/// function of the input integer, summed over columns.
pub fn extract_key_frequencies(model: &ModularModel, threshold: f64) -> Result<FrequencySignature> {
    let p = model.p_modulus;
    let mut energies = vec![0.0; p / 2 + 1];
    for c in 0..model.embed_dim {
        let signal = model.w_embed.col(c);
        let e = dft_energies(&signal)?;
        for (f, v) in e.data.iter().enumerate() {
            energies[f] += v;
        }
    }
    let dominant = dominant_frequencies(&energies, threshold);
    Ok(FrequencySignature { energies, dominant })
}

/// Spectrum of a single perturbation vector.
pub fn perturbation_signature(delta: &Vector, threshold: f64) -> Result<FrequencySignature> {
    let e = dft_energies(delta)?;
    let dominant = dominant_frequencies(&e.data, threshold);
    Ok(FrequencySignature { energies: e.data, dominant })
}

/// Non-DC frequencies whose energy exceeds `peak_fraction` of the largest
/// non-DC energy. Unlike the cumulative-prefix rule this keeps every
/// frequency an attack leans on, even when the energy split between them is
/// uneven, so it is the right notion for attack spectra.
pub fn dominant_by_peak(energies: &[f64], peak_fraction: f64) -> Vec<usize> {
    let max = energies.iter().skip(1).cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    (1..energies.len())
        .filter(|&f| energies[f] > peak_fraction * max)
        .collect()
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// Mean Jaccard similarity between the model's key-frequency set and the
/// peak-rule dominant frequencies of each successful perturbation.
pub fn attack_frequency_match(
    model: &ModularModel,
    deltas: &[Vector],
    peak_fraction: f64,
) -> Result<f64> {
    let successful: Vec<&Vector> = deltas.iter().collect();
    if successful.is_empty() {
        return Err(Error::Degenerate("no perturbations to analyze".into()));
    }
    let mut sum = 0.0;
    for d in &successful {
        let e = dft_energies(d)?;
        let dominant = dominant_by_peak(&e.data, peak_fraction);
        sum += jaccard(&model.key_frequencies, &dominant);
    }
    Ok(sum / successful.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModularTransferReport {
    /// Fraction of source-successful attacks that also fool the target.
    pub transfer_rate: f64,
    pub n_attacks: usize,
    /// Key-frequency Jaccard between the two models.
    pub key_overlap: f64,
    /// Set when the models share more than half their key frequencies, in
    /// which case a low transfer rate is the interesting observation.
    pub overlap_flagged: bool,
}

/// Replays source-successful perturbations against a second model.
pub fn cross_seed_transfer_modular(
    target: &ModularModel,
    attacks: &[(usize, usize, Vector)],
) -> Result<ModularTransferReport> {
    if attacks.is_empty() {
        return Err(Error::Degenerate("no attacks to transfer".into()));
    }
    let mut hits = 0usize;
    for (a, b, delta) in attacks {
        let mut x = Vector::zeros(target.p_modulus);
        x.data[*a] = 1.0;
        let z = target.logits_relaxed(&x.add(delta), *b)?;
        let mut best = 0usize;
        for j in 1..z.len() {
            if z.data[j] > z.data[best] {
                best = j;
            }
        }
        if best != (a + b) % target.p_modulus {
            hits += 1;
        }
    }
    Ok(ModularTransferReport {
        transfer_rate: hits as f64 / attacks.len() as f64,
        n_attacks: attacks.len(),
        key_overlap: 0.0,
        overlap_flagged: false,
    })
}

/// R^2 of the best linear map from the embedding to sin/cos probes at a
/// given frequency; near 1 for key frequencies of a grokked model.
pub fn linear_probe_r2(model: &ModularModel, frequency: usize) -> Result<f64> {
    let p = model.p_modulus;
    let e = model.embed_dim;
    let omega = 2.0 * std::f64::consts::PI * frequency as f64 / p as f64;
    // ridge-regularized normal equations: (E^T E + lambda I) beta = E^T t
    let et = model.w_embed.transpose();
    let mut gram = et.matmul(&model.w_embed)?;
    for i in 0..e {
        let v = gram.get(i, i);
        gram.set(i, i, v + 1e-8);
    }
    let mut worst = f64::INFINITY;
    for probe in 0..2 {
        let t = Vector::from(
            (0..p)
                .map(|a| {
                    let x = omega * a as f64;
                    if probe == 0 {
                        x.sin()
                    } else {
                        x.cos()
                    }
                })
                .collect::<Vec<_>>(),
        );
        let rhs = et.matmul(&t.as_row().transpose())?;
        let beta = gram.solve(&rhs)?;
        let fit = model.w_embed.matmul(&beta)?;
        let mean = t.data.iter().sum::<f64>() / p as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for a in 0..p {
            ss_res += (t.data[a] - fit.get(a, 0)).powi(2);
            ss_tot += (t.data[a] - mean).powi(2);
        }
        if ss_tot <= 0.0 {
            return Err(Error::Degenerate("constant probe target".into()));
        }
        worst = worst.min(1.0 - ss_res / ss_tot);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (tr1, te1) = split_pairs(113, 0.3, 7);
        let (tr2, te2) = split_pairs(113, 0.3, 7);
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len() + te1.len(), 113 * 113);
        let set: std::collections::BTreeSet<_> = tr1.iter().chain(te1.iter()).collect();
        assert_eq!(set.len(), 113 * 113);
        // ~30% train
        let frac = tr1.len() as f64 / (113.0 * 113.0);
        assert!((frac - 0.3).abs() < 0.01, "train fraction {frac}");
    }

    #[test]
    fn dominant_set_is_minimal_prefix() {
        // energies: DC=100 (ignored), f1=50, f2=30, f3=15, f4=5
        let energies = vec![100.0, 50.0, 30.0, 15.0, 5.0];
        // non-DC total 100; 85% needs 50+30+15 = 95 >= 85
        assert_eq!(dominant_frequencies(&energies, 0.85), vec![1, 2, 3]);
        // f1 alone reaches exactly 50%
        assert_eq!(dominant_frequencies(&energies, 0.5), vec![1]);
        // 90% needs f1+f2+f3 (95 >= 90)
        assert_eq!(dominant_frequencies(&energies, 0.9), vec![1, 2, 3]);
        assert!(dominant_frequencies(&[0.0, 0.0], 0.85).is_empty());
    }

    #[test]
    fn jaccard_edges() {
        assert_eq!(jaccard(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[3, 4]), 0.0);
        assert!((jaccard(&[1, 2, 3], &[2, 3, 4]) - 0.5).abs() < 1e-12);
        assert_eq!(jaccard(&[], &[]), 1.0);
    }

    #[test]
    fn peak_rule_keeps_every_leaned_on_frequency() {
        // energies: DC, then one big peak and two small-but-real ones
        let energies = [100.0, 50.0, 1.0, 0.4, 0.001];
        assert_eq!(dominant_by_peak(&energies, 0.005), vec![1, 2, 3]);
        assert_eq!(dominant_by_peak(&energies, 0.1), vec![1]);
        assert!(dominant_by_peak(&[1.0, 0.0, 0.0], 0.005).is_empty());
    }

    #[test]
    fn perturbation_signature_of_pure_tone() {
        let p = 113usize;
        let omega = 2.0 * std::f64::consts::PI * 9.0 / p as f64;
        let delta = Vector::from((0..p).map(|j| (omega * j as f64).cos()).collect::<Vec<_>>());
        let sig = perturbation_signature(&delta, 0.85).unwrap();
        assert_eq!(sig.dominant, vec![9]);
    }

    #[test]
    fn one_hot_and_relaxed_paths_agree() {
        let cfg = ModularTrainConfig {
            max_epochs: 2,
            eval_every: 1,
            ..ModularTrainConfig::defaults(3)
        };
        let model = train_modular(&cfg).unwrap();
        let z_int = model.logits(5, 11).unwrap();
        let mut x = Vector::zeros(113);
        x.data[5] = 1.0;
        let z_rel = model.logits_relaxed(&x, 11).unwrap();
        for (a, b) in z_int.data.iter().zip(&z_rel.data) {
            assert!((a - b).abs() < 1e-12);
        }
        // batch path agrees too
        let acc_from_batch = model.accuracy(&[(5, 11)]).unwrap();
        let mut best = 0usize;
        for j in 1..z_int.len() {
            if z_int.data[j] > z_int.data[best] {
                best = j;
            }
        }
        let expect = if best == (5 + 11) % 113 { 1.0 } else { 0.0 };
        assert_eq!(acc_from_batch, expect);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let cfg = ModularTrainConfig {
            max_epochs: 2,
            eval_every: 1,
            ..ModularTrainConfig::defaults(4)
        };
        let model = train_modular(&cfg).unwrap();
        let mut x = Vector::zeros(113);
        x.data[7] = 1.0;
        x.data[20] = 0.3;
        let (_, grad) = model.loss_and_input_grad_relaxed(&x, 9, 16).unwrap();
        let h = 1e-5;
        for &idx in &[0usize, 7, 20, 100] {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let (lp, _) = model.loss_and_input_grad_relaxed(&xp, 9, 16).unwrap();
            let (lm, _) = model.loss_and_input_grad_relaxed(&xm, 9, 16).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - grad.data[idx]).abs() < 1e-4 * fd.abs().max(1.0),
                "idx {idx}: fd {fd} vs grad {}",
                grad.data[idx]
            );
        }
    }

    #[test]
    fn linear_probe_r2_is_bounded() {
        let cfg = ModularTrainConfig {
            max_epochs: 2,
            eval_every: 1,
            ..ModularTrainConfig::defaults(5)
        };
        let model = train_modular(&cfg).unwrap();
        let r2 = linear_probe_r2(&model, 5).unwrap();
        assert!(r2 <= 1.0 + 1e-9, "r2 {r2}");
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let cfg = ModularTrainConfig {
            max_epochs: 2,
            eval_every: 1,
            ..ModularTrainConfig::defaults(6)
        };
        let model = train_modular(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("modular.json");
        model.save(&path).unwrap();
        let loaded = ModularModel::load(&path).unwrap();
        assert_eq!(model.w_embed.data, loaded.w_embed.data);
        assert_eq!(model.w_out.data, loaded.w_out.data);
        assert_eq!(model.key_frequencies, loaded.key_frequencies);
    }
}
