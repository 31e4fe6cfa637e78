//! Structured idempotent fading matrices.
//!
//! A fading matrix `E` is column-stochastic and idempotent. It is never stored
//! densely: the rank-1 form keeps one target vector, the rank-r form keeps one
//! target per disjoint cluster. Every product with `E` costs `O(M)` (rank-1)
//! or `O(M + r)` (rank-r).
//!
//! Dense materialization is reserved for verification through
//! [`FadingMatrix::debug_dense`].

use crate::error::{Error, Result};

/// Largest corpus for which [`FadingMatrix::debug_dense`] will materialize.
pub const DENSE_ORACLE_LIMIT: usize = 256;

/// Nonnegative target distribution of the fading process.
///
/// Weights are kept unnormalized together with their cached sum; normalized
/// entries are produced on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct NonPreferenceState {
    weights: Vec<f64>,
    total: f64,
    has_virtual_item: bool,
}

impl NonPreferenceState {
    pub fn new(weights: Vec<f64>, has_virtual_item: bool) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidTarget("empty weight vector".into()));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidTarget(format!(
                "weight {i} is negative or non-finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidTarget("all weights are zero".into()));
        }
        if has_virtual_item && weights.len() < 2 {
            return Err(Error::InvalidTarget(
                "a virtual item needs at least one real item".into(),
            ));
        }
        Ok(Self {
            weights,
            total,
            has_virtual_item,
        })
    }

    /// One-hot at the virtual item `x₋₁`, appended after `n` real items.
    pub fn point_wise(n: usize) -> Result<Self> {
        let mut w = vec![0.0; n + 1];
        w[n] = 1.0;
        Self::new(w, true)
    }

    /// Uniform over `n` real items.
    pub fn pair_wise(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n], false)
    }

    /// `λ/N` on every real item and `1 − λ` on the virtual item.
    pub fn hybrid(n: usize, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) || lambda == 0.0 {
            return Err(Error::InvalidTarget(format!(
                "hybrid lambda must lie in (0, 1), got {lambda}"
            )));
        }
        let mut w = vec![lambda / n as f64; n + 1];
        w[n] = 1.0 - lambda;
        Self::new(w, true)
    }

    /// `softmax(logits)`, optionally with the last entry as virtual item.
    pub fn from_logits(logits: &[f64], has_virtual_item: bool) -> Result<Self> {
        Self::new(softmax(logits), has_virtual_item)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn has_virtual_item(&self) -> bool {
        self.has_virtual_item
    }

    /// Number of real (non-virtual) items.
    pub fn num_items(&self) -> usize {
        self.weights.len() - usize::from(self.has_virtual_item)
    }

    /// Index of the virtual item, if any.
    pub fn virtual_index(&self) -> Option<usize> {
        self.has_virtual_item.then(|| self.weights.len() - 1)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    #[inline]
    pub fn prob(&self, i: usize) -> f64 {
        self.weights[i] / self.total
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.total).collect()
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One block of a rank-r fading matrix: a disjoint index set and the target
/// supported on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    indices: Vec<usize>,
    /// Target weights aligned with `indices`.
    weights: Vec<f64>,
    total: f64,
}

impl Cluster {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Structure {
    Rank1(NonPreferenceState),
    RankR {
        clusters: Vec<Cluster>,
        /// cluster id of each index, `None` when uncovered
        owner: Vec<Option<usize>>,
        /// normalized target entry at each index (0 when uncovered)
        prob: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingKind {
    Rank1,
    RankR,
}

/// Idempotent column-stochastic fading matrix in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingMatrix {
    structure: Structure,
    corpus_size: usize,
}

impl FadingMatrix {
    /// `E = p⃗_T 1⃗ᵀ / (1⃗ᵀ p⃗_T)`.
    pub fn rank1(target: NonPreferenceState) -> Self {
        let corpus_size = target.len();
        Self {
            structure: Structure::Rank1(target),
            corpus_size,
        }
    }

    /// `E = Σᵢ p⃗ⁱ (s⃗ⁱ)ᵀ / ((s⃗ⁱ)ᵀ p⃗ⁱ)` over disjoint clusters.
    ///
    /// `targets[i]` is a length-`corpus_size` vector that must be strictly
    /// positive on `clusters[i]` and zero elsewhere.
    pub fn rank_r(
        corpus_size: usize,
        clusters: &[Vec<usize>],
        targets: &[Vec<f64>],
    ) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::InvalidTarget("no clusters".into()));
        }
        if clusters.len() != targets.len() {
            return Err(Error::DimensionError(format!(
                "{} clusters but {} targets",
                clusters.len(),
                targets.len()
            )));
        }
        let mut owner = vec![None; corpus_size];
        for (c, set) in clusters.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidTarget(format!("cluster {c} is empty")));
            }
            for &i in set {
                if i >= corpus_size {
                    return Err(Error::DimensionError(format!(
                        "cluster {c} index {i} >= corpus size {corpus_size}"
                    )));
                }
                if owner[i].is_some() {
                    return Err(Error::OverlappingSupports(i));
                }
                owner[i] = Some(c);
            }
        }
        let mut built = Vec::with_capacity(clusters.len());
        let mut prob = vec![0.0; corpus_size];
        for (c, (set, target)) in clusters.iter().zip(targets).enumerate() {
            if target.len() != corpus_size {
                return Err(Error::DimensionError(format!(
                    "target {c} has length {}, expected {corpus_size}",
                    target.len()
                )));
            }
            for (i, &w) in target.iter().enumerate() {
                let inside = owner[i] == Some(c);
                if !w.is_finite() || w < 0.0 || (inside && w <= 0.0) || (!inside && w != 0.0) {
                    return Err(Error::SupportMismatch {
                        cluster: c,
                        index: i,
                    });
                }
            }
            let weights: Vec<f64> = set.iter().map(|&i| target[i]).collect();
            let total: f64 = weights.iter().sum();
            for (&i, &w) in set.iter().zip(&weights) {
                prob[i] = w / total;
            }
            built.push(Cluster {
                indices: set.clone(),
                weights,
                total,
            });
        }
        Ok(Self {
            structure: Structure::RankR {
                clusters: built,
                owner,
                prob,
            },
            corpus_size,
        })
    }

    pub fn kind(&self) -> FadingKind {
        match self.structure {
            Structure::Rank1(_) => FadingKind::Rank1,
            Structure::RankR { .. } => FadingKind::RankR,
        }
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn rank(&self) -> usize {
        match &self.structure {
            Structure::Rank1(_) => 1,
            Structure::RankR { clusters, .. } => clusters.len(),
        }
    }

    /// The rank-1 target, if this is a rank-1 matrix.
    pub fn target(&self) -> Option<&NonPreferenceState> {
        match &self.structure {
            Structure::Rank1(t) => Some(t),
            Structure::RankR { .. } => None,
        }
    }

    pub fn clusters(&self) -> &[Cluster] {
        match &self.structure {
            Structure::Rank1(_) => &[],
            Structure::RankR { clusters, .. } => clusters,
        }
    }

    /// True when no column of the implied dense matrix is zero.
    pub fn covers_all(&self) -> bool {
        match &self.structure {
            Structure::Rank1(_) => true,
            Structure::RankR { owner, .. } => owner.iter().all(Option::is_some),
        }
    }

    /// Rejects matrices with zero columns, which break column-stochasticity
    /// of the transition matrices.
    pub fn ensure_process_ready(&self) -> Result<()> {
        if self.covers_all() {
            Ok(())
        } else {
            Err(Error::InvalidTarget(
                "fading matrix leaves some columns uncovered".into(),
            ))
        }
    }

    /// Implied dense entry `E(i, j)`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.structure {
            Structure::Rank1(t) => t.prob(i),
            Structure::RankR { owner, prob, .. } => match (owner[i], owner[j]) {
                (Some(a), Some(b)) if a == b => prob[i],
                _ => 0.0,
            },
        }
    }

    /// Stationary mass `p̄(i)`: the diagonal-free part of row `i`.
    ///
    /// For rank-1 every row is constant and equal to this value; for rank-r
    /// row `i` equals this value on `i`'s own cluster and zero elsewhere.
    #[inline]
    pub fn row_mass(&self, i: usize) -> f64 {
        match &self.structure {
            Structure::Rank1(t) => t.prob(i),
            Structure::RankR { prob, .. } => prob[i],
        }
    }

    /// `E · v` without materializing `E`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        Ok(match &self.structure {
            Structure::Rank1(t) => {
                let s: f64 = v.iter().sum();
                t.weights().iter().map(|w| w / t.total() * s).collect()
            }
            Structure::RankR { clusters, prob, .. } => {
                let mut out = vec![0.0; self.corpus_size];
                for c in clusters {
                    let s: f64 = c.indices.iter().map(|&i| v[i]).sum();
                    for &i in &c.indices {
                        out[i] = prob[i] * s;
                    }
                }
                out
            }
        })
    }

    /// `j`-th column of the implied dense matrix.
    pub fn column(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.corpus_size {
            return Err(Error::DimensionError(format!(
                "column {j} out of range for corpus of {}",
                self.corpus_size
            )));
        }
        Ok(match &self.structure {
            Structure::Rank1(t) => t.normalized(),
            Structure::RankR {
                clusters, owner, ..
            } => {
                let mut col = vec![0.0; self.corpus_size];
                if let Some(c) = owner[j] {
                    let cl = &clusters[c];
                    for (&i, &w) in cl.indices.iter().zip(&cl.weights) {
                        col[i] = w / cl.total;
                    }
                }
                col
            }
        })
    }

    /// Dense `M × M` form, row-major. Verification only.
    pub fn debug_dense(&self) -> Result<Vec<Vec<f64>>> {
        let m = self.corpus_size;
        if m > DENSE_ORACLE_LIMIT {
            return Err(Error::DimensionError(format!(
                "dense oracle limited to M <= {DENSE_ORACLE_LIMIT}, got {m}"
            )));
        }
        let mut dense = vec![vec![0.0; m]; m];
        for j in 0..m {
            for (i, v) in self.column(j)?.into_iter().enumerate() {
                dense[i][j] = v;
            }
        }
        Ok(dense)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.corpus_size {
            return Err(Error::DimensionError(format!(
                "vector of length {len} against corpus of {}",
                self.corpus_size
            )));
        }
        Ok(())
    }
}
