//! Pretraining objectives: triplet, soft nearest-neighbour (SNN),
//! cross-entropy, and their uncertainty-weighted sum.
//!
//! Every loss is built on a [`Tape`] so it can be backpropagated through the
//! classifier that produced its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{DiffTensor, Tape, Var};

pub const DEFAULT_MARGIN: f64 = 1.0;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_SNN_EPSILON: f64 = 1e-8;
/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Learnable `log sigma` for each component loss, in the order CE, SNN,
/// triplet.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyWeights {
    pub log_sigma_ce: DiffTensor,
    pub log_sigma_snn: DiffTensor,
    pub log_sigma_triplet: DiffTensor,
}

impl Default for UncertaintyWeights {
    fn default() -> Self {
        Self::from_log_sigmas([0.0; 3])
    }
}

impl UncertaintyWeights {
    pub fn from_log_sigmas(log_sigmas: [f64; 3]) -> Self {
        let [ce, snn, tri] = log_sigmas;
        Self {
            log_sigma_ce: DiffTensor::scalar(ce),
            log_sigma_snn: DiffTensor::scalar(snn),
            log_sigma_triplet: DiffTensor::scalar(tri),
        }
    }

    pub fn log_sigmas(&self) -> [f64; 3] {
        [
            self.log_sigma_ce.values()[0],
            self.log_sigma_snn.values()[0],
            self.log_sigma_triplet.values()[0],
        ]
    }

    pub fn sigmas(&self) -> [f64; 3] {
        self.log_sigmas().map(f64::exp)
    }

    pub fn tensors(&self) -> [&DiffTensor; 3] {
        [
            &self.log_sigma_ce,
            &self.log_sigma_snn,
            &self.log_sigma_triplet,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DiffTensor; 3] {
        [
            &mut self.log_sigma_ce,
            &mut self.log_sigma_snn,
            &mut self.log_sigma_triplet,
        ]
    }
}

/// One logged evaluation of the composite objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_snn: f64,
    pub l_triplet: f64,
    /// sigma for CE, SNN and triplet.
    pub sigmas: [f64; 3],
    pub l_total: f64,
}

impl LossReport {
    /// Builds a report whose total is recomputed from the components.
    pub fn new(epoch: usize, l_ce: f64, l_snn: f64, l_triplet: f64, sigmas: [f64; 3]) -> Self {
        let l_total = composite_value([l_ce, l_snn, l_triplet], sigmas.map(f64::ln));
        Self {
            epoch,
            l_ce,
            l_snn,
            l_triplet,
            sigmas,
            l_total,
        }
    }

    pub const CSV_HEADER: &'static str =
        "epoch,l_ce,l_snn,l_triplet,sigma_ce,sigma_snn,sigma_triplet,l_total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.l_ce,
            self.l_snn,
            self.l_triplet,
            self.sigmas[0],
            self.sigmas[1],
            self.sigmas[2],
            self.l_total
        )
    }
}

/// `sum_k L_k / (2 sigma_k^2) + sum_k log sigma_k` on plain numbers.
pub fn composite_value(losses: [f64; 3], log_sigmas: [f64; 3]) -> f64 {
    losses
        .iter()
        .zip(log_sigmas)
        .map(|(l, s)| 0.5 * l * (-2.0 * s).exp() + s)
        .sum()
}

/// `sum_t max(0, |a - p_t|^2 - |a - n_t|^2 + margin)`.
pub fn triplet_loss(
    tape: &mut Tape,
    anchor: Var,
    positives: &[Var],
    negatives: &[Var],
    margin: f64,
) -> Result<Var> {
    if positives.len() != negatives.len() {
        return Err(invalid(format!(
            "triplet loss needs as many negatives as positives, got {} and {}",
            negatives.len(),
            positives.len()
        )));
    }
    if positives.is_empty() {
        return Err(invalid(
            "triplet loss needs at least one positive/negative pair",
        ));
    }
    let mut terms = Vec::with_capacity(positives.len());
    for (&p, &n) in positives.iter().zip(negatives) {
        let dp = tape.sub(anchor, p)?;
        let dp = tape.dot(dp, dp)?;
        let dn = tape.sub(anchor, n)?;
        let dn = tape.dot(dn, dn)?;
        let gap = tape.sub(dp, dn)?;
        let gap = tape.add_scalar(gap, margin);
        terms.push(tape.relu(gap));
    }
    let stacked = tape.stack(&terms)?;
    Ok(tape.sum(stacked))
}

/// Self-similarity mask of an `n x n` batch: 0 on the diagonal, 1 elsewhere.
pub fn self_mask(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
        .collect()
}

/// Soft nearest-neighbour loss
/// `-(1/N) sum_i log( exp(E_i.P_i / tau) / (sum_{j != i} exp(E_i.E_j / tau) + eps) + eps )`
/// where `P_i` is `positives[i]`.
pub fn snn_loss(
    tape: &mut Tape,
    embeddings: &[Var],
    positives: &[Var],
    temperature: f64,
    epsilon: f64,
) -> Result<Var> {
    let n = embeddings.len();
    if n < 2 {
        return Err(invalid(format!(
            "SNN loss needs at least 2 embeddings, got {n}"
        )));
    }
    if positives.len() != n {
        return Err(invalid(format!(
            "SNN loss got {n} embeddings but {} positives",
            positives.len()
        )));
    }
    if !(temperature > 0.0) || !(epsilon > 0.0) {
        return Err(invalid("SNN temperature and epsilon must be positive"));
    }
    let inv_tau = 1.0 / temperature;
    let mask = self_mask(n);
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let num = tape.dot(embeddings[i], positives[i])?;
        let num = tape.scale(num, inv_tau);
        let num = tape.exp(num);
        let mut others = Vec::with_capacity(n - 1);
        for j in (0..n).filter(|&j| mask[i][j] != 0.0) {
            let s = tape.dot(embeddings[i], embeddings[j])?;
            let s = tape.scale(s, inv_tau);
            others.push(tape.exp(s));
        }
        let den = tape.stack(&others)?;
        let den = tape.sum(den);
        let den = tape.add_scalar(den, epsilon);
        let ratio = tape.div(num, den)?;
        let ratio = tape.add_scalar(ratio, epsilon);
        terms.push(tape.ln(ratio));
    }
    let stacked = tape.stack(&terms)?;
    let mean = tape.mean(stacked);
    Ok(tape.scale(mean, -1.0))
}

/// `-(1/N) sum_i log p_i[y_i]` over per-sample class-probability vectors.
pub fn ce_loss(tape: &mut Tape, class_probs: &[Var], labels: &[u8]) -> Result<Var> {
    if class_probs.is_empty() {
        return Err(invalid("cross-entropy over an empty batch"));
    }
    if class_probs.len() != labels.len() {
        return Err(invalid(format!(
            "{} probability vectors but {} labels",
            class_probs.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(labels.len());
    for (&p, &y) in class_probs.iter().zip(labels) {
        let p_true = tape.select(p, y as usize)?;
        let p_true = tape.clamp_min(p_true, PROB_FLOOR);
        terms.push(tape.ln(p_true));
    }
    let stacked = tape.stack(&terms)?;
    let mean = tape.mean(stacked);
    Ok(tape.scale(mean, -1.0))
}

/// Vars for the three `log sigma` scalars, in CE, SNN, triplet order.
pub type LogSigmaVars = [Var; 3];

/// `sum_k L_k / (2 sigma_k^2) + sum_k log sigma_k` with `sigma_k = exp(s_k)`.
pub fn composite_loss(
    tape: &mut Tape,
    l_ce: Var,
    l_snn: Var,
    l_triplet: Var,
    log_sigmas: LogSigmaVars,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(6);
    for (l, s) in [l_ce, l_snn, l_triplet].into_iter().zip(log_sigmas) {
        let precision = tape.scale(s, -2.0);
        let precision = tape.exp(precision);
        let weighted = tape.mul(l, precision)?;
        terms.push(tape.scale(weighted, 0.5));
        terms.push(s);
    }
    let stacked = tape.stack(&terms)?;
    Ok(tape.sum(stacked))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(tape: &mut Tape, rows: &[&[f64]]) -> Vec<Var> {
        rows.iter()
            .map(|r| tape.constant(&[r.len()], r.to_vec()).unwrap())
            .collect()
    }

    fn triplet(a: &[f64], p: &[&[f64]], n: &[&[f64]], margin: f64) -> f64 {
        let mut tape = Tape::new();
        let a = tape.constant(&[a.len()], a.to_vec()).unwrap();
        let p = vecs(&mut tape, p);
        let n = vecs(&mut tape, n);
        let l = triplet_loss(&mut tape, a, &p, &n, margin).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn triplet_examples() {
        assert_eq!(triplet(&[0.0], &[&[0.0]], &[&[2.0]], 1.0), 0.0);
        assert!((triplet(&[0.0], &[&[1.0]], &[&[1.0]], 0.5) - 0.5).abs() < 1e-12);
        assert!((triplet(&[0.0], &[&[1.0], &[1.0]], &[&[1.0], &[1.0]], 0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn triplet_rejects_unequal_lists() {
        let mut tape = Tape::new();
        let v = vecs(&mut tape, &[&[0.0], &[1.0], &[2.0]]);
        assert!(triplet_loss(&mut tape, v[0], &v[1..3], &v[2..3], 1.0).is_err());
    }

    fn snn(e: &[&[f64]], p: &[&[f64]], tau: f64) -> f64 {
        let mut tape = Tape::new();
        let e = vecs(&mut tape, e);
        let p = vecs(&mut tape, p);
        let l = snn_loss(&mut tape, &e, &p, tau, 1e-8).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn snn_examples() {
        let x: &[f64] = &[1.0, 0.0];
        let y: &[f64] = &[0.0, 1.0];
        assert!(snn(&[x, x], &[x, x], 1.0).abs() < 1e-6);
        assert!((snn(&[x, y], &[x, y], 1.0) + 1.0).abs() < 1e-6);
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn snn_is_rotation_invariant() {
        let (c, s) = (0.6_f64, 0.8_f64);
        let rot = |v: &[f64]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let e: Vec<Vec<f64>> = vec![vec![0.3, -1.2], vec![0.9, 0.4], vec![-0.5, 0.7]];
        let p: Vec<Vec<f64>> = vec![vec![0.1, -1.0], vec![1.1, 0.2], vec![-0.2, 0.9]];
        let er: Vec<Vec<f64>> = e.iter().map(|v| rot(v)).collect();
        let pr: Vec<Vec<f64>> = p.iter().map(|v| rot(v)).collect();
        let a = snn(&refs(&e), &refs(&p), 0.5);
        let b = snn(&refs(&er), &refs(&pr), 0.5);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn snn_rejects_single_embedding() {
        let mut tape = Tape::new();
        let e = vecs(&mut tape, &[&[1.0]]);
        assert!(snn_loss(&mut tape, &e, &e, 1.0, 1e-8).is_err());
    }

    #[test]
    fn self_mask_has_zero_diagonal() {
        let m = self_mask(4);
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    fn ce(p_true: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let probs: Vec<Var> = p_true
            .iter()
            .map(|p| tape.constant(&[2], vec![1.0 - p, *p]).unwrap())
            .collect();
        let labels = vec![1u8; p_true.len()];
        let l = ce_loss(&mut tape, &probs, &labels).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn ce_examples() {
        assert!(ce(&[1.0]).abs() < 1e-12);
        assert!((ce(&[0.5]) - std::f64::consts::LN_2).abs() < 1e-4);
        assert!((ce(&[0.5, 1.0]) - 0.3466).abs() < 1e-4);
        assert!(ce(&[0.0]).is_finite());
        let mut tape = Tape::new();
        assert!(ce_loss(&mut tape, &[], &[]).is_err());
    }

    fn composite(l: f64, log_sigma: f64) -> f64 {
        let mut tape = Tape::new();
        let ls = vecs(&mut tape, &[&[l], &[l], &[l]]);
        let ss = vecs(&mut tape, &[&[log_sigma], &[log_sigma], &[log_sigma]]);
        let out = composite_loss(&mut tape, ls[0], ls[1], ls[2], [ss[0], ss[1], ss[2]]).unwrap();
        tape.scalar(out)
    }

    #[test]
    fn composite_examples() {
        assert!((composite(1.0, 0.0) - 1.5).abs() < 1e-12);
        assert!(composite(0.0, 0.0).abs() < 1e-12);
        let per_term = composite(4.0, 2f64.ln()) / 3.0;
        assert!((per_term - 1.1931).abs() < 1e-4);
    }

    #[test]
    fn report_total_matches_formula() {
        let r = LossReport::new(3, 0.7, -0.2, 1.9, [1.1, 0.8, 2.0]);
        let direct: f64 = [0.7, -0.2, 1.9]
            .iter()
            .zip([1.1f64, 0.8, 2.0])
            .map(|(l, s)| l / (2.0 * s * s) + s.ln())
            .sum();
        assert!((r.l_total - direct).abs() < 1e-10);
        assert_eq!(
            r.csv_row().split(',').count(),
            LossReport::CSV_HEADER.split(',').count()
        );
    }
}
