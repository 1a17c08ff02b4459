use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::flow::{FlowModel, SampleMatrix};
use crate::par::Executor;
use crate::stats::{log_sum_exp, normalized_weights};
use crate::table::Table;
use crate::target::tempered;

/// `ln(sum_k N_k exp(log_q_k) / sum_k N_k)`.
pub fn mixture_log_density(log_q: &[f64], counts: &[f64]) -> f64 {
    debug_assert_eq!(log_q.len(), counts.len());
    let terms: Vec<f64> = log_q.iter().zip(counts).map(|(q, n)| q + n.ln()).collect();
    log_sum_exp(&terms) - counts.iter().sum::<f64>().ln()
}

/// A freshly drawn batch with its cached target components.
#[derive(Clone, Debug)]
pub struct FreshBatch {
    pub samples: SampleMatrix,
    /// Log density under the model that drew the batch.
    pub log_q: Vec<f64>,
    pub log_prior: Vec<f64>,
    pub log_lik: Vec<f64>,
}

impl FreshBatch {
    pub fn len(&self) -> usize {
        self.log_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_q.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ArchivedBatch {
    /// Global batch counter at the time the batch was drawn.
    pub index: usize,
    /// Identifier of the model that drew the batch.
    pub model_id: usize,
    pub samples: SampleMatrix,
    pub log_prior: Vec<f64>,
    pub log_lik: Vec<f64>,
    /// Log density of every sample under every retained model.
    log_q: BTreeMap<usize, Vec<f64>>,
}

impl ArchivedBatch {
    pub fn log_q(&self, model_id: usize) -> Option<&[f64]> {
        self.log_q.get(&model_id).map(Vec::as_slice)
    }
}

/// Sliding window of the most recent batches together with the models that
/// produced them. Every sample carries its density under every retained
/// model, so the window as a whole is a draw from the count-weighted mixture
/// of those models.
#[derive(Clone, Debug)]
pub struct SampleArchive {
    capacity: usize,
    batches: VecDeque<ArchivedBatch>,
    models: BTreeMap<usize, FlowModel>,
    mixture: Vec<f64>,
}

impl SampleArchive {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "archive capacity must be positive");
        Self {
            capacity,
            batches: VecDeque::new(),
            models: BTreeMap::new(),
            mixture: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn batches(&self) -> impl Iterator<Item = &ArchivedBatch> {
        self.batches.iter()
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn n_samples(&self) -> usize {
        self.batches.iter().map(|b| b.samples.rows()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn model_ids(&self) -> Vec<usize> {
        self.models.keys().copied().collect()
    }

    pub fn model(&self, id: usize) -> Option<&FlowModel> {
        self.models.get(&id)
    }

    /// Samples drawn by each retained model.
    pub fn counts(&self) -> BTreeMap<usize, f64> {
        let mut c = BTreeMap::new();
        for b in &self.batches {
            *c.entry(b.model_id).or_insert(0.0) += b.samples.rows() as f64;
        }
        c
    }

    /// Adds `batch`, drawn by `model` (identified by `model_id`), evicting
    /// the oldest batch when the window is full.
    pub fn push(
        &mut self,
        index: usize,
        batch: FreshBatch,
        model_id: usize,
        model: &FlowModel,
        exec: &Executor,
    ) -> Result<()> {
        let n = batch.len();
        if batch.samples.rows() != n || batch.log_prior.len() != n || batch.log_lik.len() != n {
            return Err(Error::InvalidInput("fresh batch columns have different lengths".into()));
        }
        let new_model = !self.models.contains_key(&model_id);
        if new_model {
            for b in &mut self.batches {
                let lq = model.log_prob_batch(&b.samples, exec)?;
                b.log_q.insert(model_id, lq);
            }
            self.models.insert(model_id, model.clone());
        }
        let mut log_q = BTreeMap::new();
        for (&id, m) in &self.models {
            let col = if id == model_id {
                batch.log_q.clone()
            } else {
                m.log_prob_batch(&batch.samples, exec)?
            };
            log_q.insert(id, col);
        }
        self.batches.push_back(ArchivedBatch {
            index,
            model_id,
            samples: batch.samples,
            log_prior: batch.log_prior,
            log_lik: batch.log_lik,
            log_q,
        });
        while self.batches.len() > self.capacity {
            let old = self.batches.pop_front().expect("non-empty");
            if !self.batches.iter().any(|b| b.model_id == old.model_id) {
                self.models.remove(&old.model_id);
                for b in &mut self.batches {
                    b.log_q.remove(&old.model_id);
                }
            }
        }
        self.refresh_mixture();
        Ok(())
    }

    fn refresh_mixture(&mut self) {
        let counts = self.counts();
        let ids: Vec<usize> = counts.keys().copied().collect();
        let n: Vec<f64> = counts.values().copied().collect();
        self.mixture.clear();
        let mut row = vec![0.0; ids.len()];
        for b in &self.batches {
            for i in 0..b.samples.rows() {
                for (slot, id) in row.iter_mut().zip(&ids) {
                    *slot = b.log_q[id][i];
                }
                self.mixture.push(mixture_log_density(&row, &n));
            }
        }
    }

    /// Mixture log density of every archived sample, in archive order.
    pub fn mixture_log_q(&self) -> &[f64] {
        &self.mixture
    }

    pub fn log_prior(&self) -> Vec<f64> {
        self.batches.iter().flat_map(|b| b.log_prior.iter().copied()).collect()
    }

    pub fn log_lik(&self) -> Vec<f64> {
        self.batches.iter().flat_map(|b| b.log_lik.iter().copied()).collect()
    }

    /// All archived samples, in archive order.
    pub fn samples(&self) -> SampleMatrix {
        let dim = self.batches.front().map_or(1, |b| b.samples.dim());
        let mut data = Vec::with_capacity(self.n_samples() * dim);
        for b in &self.batches {
            data.extend_from_slice(b.samples.as_slice());
        }
        SampleMatrix::new(dim, data)
    }

    /// Unnormalized log weights `log p_b + beta log p_u - log q_m`.
    pub fn log_weights(&self, beta: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mixture.len());
        let mut i = 0;
        for b in &self.batches {
            for (p, l) in b.log_prior.iter().zip(&b.log_lik) {
                out.push(tempered(*p, *l, beta) - self.mixture[i]);
                i += 1;
            }
        }
        out
    }

    /// Normalized mixture importance weights at `beta`.
    pub fn weights(&self, beta: f64) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::InvalidInput("archive is empty".into()));
        }
        normalized_weights(&self.log_weights(beta))
    }

    /// Table with the parameter columns `x0..`, `log_prior`, `log_lik`, one
    /// `log_q_<id>` column per retained model, `log_q_mixture`, `batch`
    /// and `model`.
    pub fn to_table(&self) -> Table {
        let dim = self.batches.front().map_or(0, |b| b.samples.dim());
        let ids = self.model_ids();
        let mut cols: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        cols.push("log_prior".into());
        cols.push("log_lik".into());
        cols.extend(ids.iter().map(|id| format!("log_q_{id}")));
        cols.push("log_q_mixture".into());
        cols.push("batch".into());
        cols.push("model".into());
        let mut t = Table::new(cols);
        let mut k = 0;
        for b in &self.batches {
            for i in 0..b.samples.rows() {
                let mut row = b.samples.row(i).to_vec();
                row.push(b.log_prior[i]);
                row.push(b.log_lik[i]);
                row.extend(ids.iter().map(|id| b.log_q[id][i]));
                row.push(self.mixture[k]);
                row.push(b.index as f64);
                row.push(b.model_id as f64);
                t.push(row);
                k += 1;
            }
        }
        t
    }
}
