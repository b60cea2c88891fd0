//! PMBM / PMB density containers and their housekeeping: normalization,
//! pruning, capping and Bernoulli merging.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};
use crate::geometry::{LandmarkType, PerType};

/// Tolerance used by the invariant checks.
pub const INVARIANT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let g = GaussianComponent { mean, cov };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn symmetrize(&mut self) {
        self.cov = symmetrized(&self.cov);
    }

    /// Checks shape, symmetry and (numerical) positive semi-definiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if self.cov.shape() != (n, n) {
            return Err(SlamError::InvalidArgument(format!(
                "covariance shape {:?} does not match mean length {n}",
                self.cov.shape()
            )));
        }
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(SlamError::Numerical("non-finite Gaussian parameters".into()));
        }
        let asym = max_asymmetry(&self.cov);
        if asym > INVARIANT_TOL {
            return Err(SlamError::Numerical(format!("covariance asymmetry {asym}")));
        }
        let min_eig = min_eigenvalue(&self.cov);
        if min_eig < -INVARIANT_TOL {
            return Err(SlamError::Numerical(format!("covariance eigenvalue {min_eig}")));
        }
        Ok(())
    }

    /// Squared Mahalanobis distance of `x` under this component, `+inf` if singular.
    pub fn mahalanobis2(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        match self.cov.clone().cholesky() {
            Some(chol) => d.dot(&chol.solve(&d)),
            None => f64::INFINITY,
        }
    }

    /// Moment-matched Gaussian of a weighted mixture. Weights need not be normalized.
    pub fn moment_match<'a>(
        items: impl IntoIterator<Item = (f64, &'a GaussianComponent)>,
    ) -> Option<GaussianComponent> {
        let items: Vec<(f64, &GaussianComponent)> = items.into_iter().collect();
        let total: f64 = items.iter().map(|(w, _)| *w).sum();
        if items.is_empty() || total <= 0.0 || !total.is_finite() {
            return None;
        }
        if items.len() == 1 {
            return Some(items[0].1.clone());
        }
        let dim = items[0].1.dim();
        let mut mean = DVector::zeros(dim);
        for (w, g) in &items {
            mean += &g.mean * (*w / total);
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (w, g) in &items {
            let d = &g.mean - &mean;
            cov += (&g.cov + &d * d.transpose()) * (*w / total);
        }
        Some(GaussianComponent {
            mean,
            cov: symmetrized(&cov),
        })
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    (m - m.transpose()).amax()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrized(m).symmetric_eigenvalues().min()
}

/// Position belief under one landmark type, with that type's probability.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeComponent {
    pub kind: LandmarkType,
    pub psi: f64,
    pub gaussian: GaussianComponent,
}

/// Mixed-type landmark belief: one Gaussian per candidate type, kept sorted by type.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkBelief {
    pub components: Vec<TypeComponent>,
}

impl LandmarkBelief {
    pub fn single(kind: LandmarkType, gaussian: GaussianComponent) -> Self {
        LandmarkBelief {
            components: vec![TypeComponent {
                kind,
                psi: 1.0,
                gaussian,
            }],
        }
    }

    pub fn from_components(mut components: Vec<TypeComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(SlamError::DegenerateDensity("landmark belief without types".into()));
        }
        components.sort_by_key(|c| c.kind);
        if components.windows(2).any(|w| w[0].kind == w[1].kind) {
            return Err(SlamError::InvalidArgument("duplicate landmark type".into()));
        }
        Ok(LandmarkBelief { components })
    }

    pub fn get(&self, kind: LandmarkType) -> Option<&TypeComponent> {
        self.components.iter().find(|c| c.kind == kind)
    }

    /// Most probable type; ties go to the first in type order.
    pub fn dominant(&self) -> &TypeComponent {
        let mut best = &self.components[0];
        for c in &self.components[1..] {
            if c.psi > best.psi {
                best = c;
            }
        }
        best
    }

    pub fn psi_sum(&self) -> f64 {
        self.components.iter().map(|c| c.psi).sum()
    }

    /// Rescales ψ to sum to one; falls back to uniform if all mass vanished.
    pub fn normalize_psi(&mut self) {
        let total = self.psi_sum();
        if total > 0.0 && total.is_finite() {
            for c in &mut self.components {
                c.psi /= total;
            }
        } else {
            log::warn!("type probabilities collapsed to zero, using uniform");
            let n = self.components.len() as f64;
            for c in &mut self.components {
                c.psi = 1.0 / n;
            }
        }
    }

    /// Drops types with ψ below `threshold` (never the dominant one) and renormalizes.
    pub fn prune_types(&mut self, threshold: f64) {
        if self.components.len() < 2 {
            return;
        }
        let keep = self.dominant().kind;
        self.components.retain(|c| c.kind == keep || c.psi >= threshold);
        self.normalize_psi();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bernoulli {
    pub existence: f64,
    pub belief: LandmarkBelief,
}

impl Bernoulli {
    pub fn new(existence: f64, belief: LandmarkBelief) -> Self {
        Bernoulli { existence, belief }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalHypothesis {
    pub weight: f64,
    pub bernoullis: Vec<Bernoulli>,
}

impl GlobalHypothesis {
    pub fn expected_count(&self) -> f64 {
        self.bernoullis.iter().map(|b| b.existence).sum()
    }
}

/// Uniform PPP over the map region for undetected landmarks (per-type rate),
/// plus a mixture of multi-Bernoulli hypotheses. A PMB has exactly one hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct PmbmDensity {
    pub ppp: PerType<f64>,
    pub hypotheses: Vec<GlobalHypothesis>,
}

impl PmbmDensity {
    pub fn new(ppp: PerType<f64>, hypotheses: Vec<GlobalHypothesis>) -> Self {
        PmbmDensity { ppp, hypotheses }
    }

    /// A PMB with the given Bernoullis.
    pub fn pmb(ppp: PerType<f64>, bernoullis: Vec<Bernoulli>) -> Self {
        PmbmDensity {
            ppp,
            hypotheses: vec![GlobalHypothesis {
                weight: 1.0,
                bernoullis,
            }],
        }
    }

    pub fn normalize_weights(mut self) -> Result<Self> {
        let total: f64 = self.hypotheses.iter().map(|h| h.weight).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(SlamError::DegenerateDensity(format!(
                "hypothesis weights sum to {total}"
            )));
        }
        for h in &mut self.hypotheses {
            h.weight /= total;
        }
        Ok(self)
    }

    /// Removes weak Bernoullis and hypotheses, caps the hypothesis count and renormalizes.
    pub fn prune(
        mut self,
        bernoulli_threshold: f64,
        hypothesis_threshold: f64,
        max_hypotheses: usize,
    ) -> Result<Self> {
        for h in &mut self.hypotheses {
            h.bernoullis.retain(|b| b.existence >= bernoulli_threshold);
        }
        let mut density = self.normalize_weights()?;
        density.hypotheses.retain(|h| h.weight >= hypothesis_threshold);
        // stable: equal weights keep their original order
        density
            .hypotheses
            .sort_by(|a, b| b.weight.total_cmp(&a.weight));
        density.hypotheses.truncate(max_hypotheses);
        if density.hypotheses.is_empty() {
            return Err(SlamError::DegenerateDensity("pruning removed every hypothesis".into()));
        }
        density.normalize_weights()
    }

    pub fn prune_types(&mut self, threshold: f64) {
        for h in &mut self.hypotheses {
            for b in &mut h.bernoullis {
                b.belief.prune_types(threshold);
            }
        }
    }

    pub fn best_hypothesis(&self) -> Option<&GlobalHypothesis> {
        let mut best: Option<&GlobalHypothesis> = None;
        for h in &self.hypotheses {
            if best.is_none_or(|b| h.weight > b.weight) {
                best = Some(h);
            }
        }
        best
    }

    /// Posterior expected number of detected landmarks.
    pub fn expected_count(&self) -> f64 {
        self.hypotheses
            .iter()
            .map(|h| h.weight * h.expected_count())
            .sum()
    }

    /// Checks the density invariants: normalized weights, valid r and ψ, PSD covariances.
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.hypotheses.iter().map(|h| h.weight).sum();
        if (total - 1.0).abs() > INVARIANT_TOL {
            return Err(SlamError::DegenerateDensity(format!("weights sum to {total}")));
        }
        if self.ppp.bs < 0.0 || self.ppp.va < 0.0 || self.ppp.sp < 0.0 {
            return Err(SlamError::DegenerateDensity("negative PPP rate".into()));
        }
        for h in &self.hypotheses {
            if !(0.0..=1.0).contains(&h.weight) {
                return Err(SlamError::DegenerateDensity(format!("weight {}", h.weight)));
            }
            for b in &h.bernoullis {
                if !(0.0..=1.0).contains(&b.existence) {
                    return Err(SlamError::DegenerateDensity(format!("existence {}", b.existence)));
                }
                let psi = b.belief.psi_sum();
                if (psi - 1.0).abs() > INVARIANT_TOL
                    || b.belief.components.iter().any(|c| !(0.0..=1.0).contains(&c.psi))
                {
                    return Err(SlamError::DegenerateDensity(format!("type probabilities sum to {psi}")));
                }
                for c in &b.belief.components {
                    c.gaussian.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DensityDto::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dto: DensityDto = serde_json::from_str(text)?;
        dto.try_into()
    }
}

fn gate_distance(a: &TypeComponent, b: &TypeComponent) -> f64 {
    let d1 = a.gaussian.mahalanobis2(&b.gaussian.mean);
    let d2 = b.gaussian.mahalanobis2(&a.gaussian.mean);
    d1.max(d2)
}

fn merge_cluster(members: &[&Bernoulli]) -> Bernoulli {
    if members.len() == 1 {
        return members[0].clone();
    }
    let mass: f64 = members.iter().map(|b| b.existence).sum();
    let mut components = Vec::new();
    for kind in LandmarkType::ALL {
        let parts: Vec<(f64, f64, &GaussianComponent)> = members
            .iter()
            .filter_map(|b| {
                b.belief
                    .get(kind)
                    .map(|c| (b.existence, c.psi, &c.gaussian))
            })
            .collect();
        if parts.is_empty() {
            continue;
        }
        let psi = if mass > 0.0 {
            parts.iter().map(|(r, p, _)| r * p).sum::<f64>() / mass
        } else {
            parts.iter().map(|(_, p, _)| *p).sum::<f64>() / members.len() as f64
        };
        let gaussian = GaussianComponent::moment_match(parts.iter().map(|(r, p, g)| (r * p, *g)))
            .unwrap_or_else(|| parts[0].2.clone());
        components.push(TypeComponent {
            kind,
            psi,
            gaussian,
        });
    }
    let mut belief = LandmarkBelief { components };
    belief.normalize_psi();
    Bernoulli {
        existence: mass.min(1.0),
        belief,
    }
}

/// Greedy merge of same-dominant-type Bernoullis whose dominant-type means are
/// within `threshold` in squared Mahalanobis distance (larger of the two
/// one-sided distances). Clusters are seeded in order of decreasing existence
/// and the output keeps the original ordering of each cluster's first member.
pub fn merge_bernoullis(hypothesis: &GlobalHypothesis, threshold: f64) -> GlobalHypothesis {
    let n = hypothesis.bernoullis.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        hypothesis.bernoullis[b]
            .existence
            .total_cmp(&hypothesis.bernoullis[a].existence)
    });
    let mut used = vec![false; n];
    let mut merged: Vec<(usize, Bernoulli)> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let lead = &hypothesis.bernoullis[i];
        let lead_type = lead.belief.dominant();
        let mut cluster = vec![i];
        for &j in &order[pos + 1..] {
            if used[j] {
                continue;
            }
            let other = hypothesis.bernoullis[j].belief.dominant();
            if other.kind == lead_type.kind && gate_distance(lead_type, other) <= threshold {
                used[j] = true;
                cluster.push(j);
            }
        }
        let first = *cluster.iter().min().unwrap();
        let members: Vec<&Bernoulli> = {
            let mut idx = cluster.clone();
            idx.sort_unstable();
            idx.iter().map(|&k| &hypothesis.bernoullis[k]).collect()
        };
        merged.push((first, merge_cluster(&members)));
    }
    merged.sort_by_key(|(first, _)| *first);
    GlobalHypothesis {
        weight: hypothesis.weight,
        bernoullis: merged.into_iter().map(|(_, b)| b).collect(),
    }
}

// JSON layout: {ppp, hypotheses: [{weight, bernoullis: [{r, types: {VA: {psi, mean, cov}}}]}]}

#[derive(Serialize, Deserialize)]
struct TypeDto {
    psi: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BernoulliDto {
    r: f64,
    types: BTreeMap<LandmarkType, TypeDto>,
}

#[derive(Serialize, Deserialize)]
struct HypothesisDto {
    weight: f64,
    bernoullis: Vec<BernoulliDto>,
}

#[derive(Serialize, Deserialize)]
struct DensityDto {
    ppp: PerType<f64>,
    hypotheses: Vec<HypothesisDto>,
}

impl From<&PmbmDensity> for DensityDto {
    fn from(d: &PmbmDensity) -> Self {
        DensityDto {
            ppp: d.ppp,
            hypotheses: d
                .hypotheses
                .iter()
                .map(|h| HypothesisDto {
                    weight: h.weight,
                    bernoullis: h
                        .bernoullis
                        .iter()
                        .map(|b| BernoulliDto {
                            r: b.existence,
                            types: b
                                .belief
                                .components
                                .iter()
                                .map(|c| {
                                    let g = &c.gaussian;
                                    let cov = (0..g.dim())
                                        .map(|r| g.cov.row(r).iter().copied().collect())
                                        .collect();
                                    (
                                        c.kind,
                                        TypeDto {
                                            psi: c.psi,
                                            mean: g.mean.iter().copied().collect(),
                                            cov,
                                        },
                                    )
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<DensityDto> for PmbmDensity {
    type Error = SlamError;

    fn try_from(dto: DensityDto) -> Result<Self> {
        let mut hypotheses = Vec::with_capacity(dto.hypotheses.len());
        for h in dto.hypotheses {
            let mut bernoullis = Vec::with_capacity(h.bernoullis.len());
            for b in h.bernoullis {
                let mut components = Vec::new();
                for (kind, t) in b.types {
                    let n = t.mean.len();
                    if t.cov.len() != n || t.cov.iter().any(|row| row.len() != n) {
                        return Err(SlamError::InvalidArgument(format!(
                            "covariance for {kind} is not {n}x{n}"
                        )));
                    }
                    let cov = DMatrix::from_fn(n, n, |r, c| t.cov[r][c]);
                    components.push(TypeComponent {
                        kind,
                        psi: t.psi,
                        gaussian: GaussianComponent::new(DVector::from_vec(t.mean), cov)?,
                    });
                }
                bernoullis.push(Bernoulli {
                    existence: b.r,
                    belief: LandmarkBelief::from_components(components)?,
                });
            }
            hypotheses.push(GlobalHypothesis {
                weight: h.weight,
                bernoullis,
            });
        }
        Ok(PmbmDensity {
            ppp: dto.ppp,
            hypotheses,
        })
    }
}
