//! Multi-Bernoulli mixture to single multi-Bernoulli reduction (track-oriented,
//! with type-resolved marginals).
//!
//! Every child of a common parent is written over the same track set: the
//! parent's tracks followed by one potential new track per measurement. For
//! each track and local association the children are averaged into one
//! conditional Bernoulli, and the marginal association probabilities then
//! recombine those conditionals into a single Bernoulli per track.

use std::collections::BTreeMap;

use crate::association::Slot;
use crate::density::{Bernoulli, GaussianComponent, GlobalHypothesis, LandmarkBelief, TypeComponent};
use crate::error::{Result, SlamError};
use crate::geometry::LandmarkType;
use crate::update::PosteriorChild;

/// Cells carrying less marginal mass than this are not averaged.
pub const MIN_CELL_MASS: f64 = 1e-12;

/// One (track, local association) entry.
#[derive(Clone, Debug)]
pub struct Cell {
    pub slot: Slot,
    /// Marginal probability of this association for the track.
    pub beta: f64,
    /// Per-type split of `beta`: sum of child weight times type probability.
    pub beta_by_type: BTreeMap<LandmarkType, f64>,
    /// Averaged conditional Bernoulli; `None` for "no such track" cells.
    pub bernoulli: Option<Bernoulli>,
    contributors: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TrackTable {
    pub n_prior: usize,
    pub n_measurements: usize,
    /// `tracks[t]` lists the cells of track `t` in slot order.
    pub tracks: Vec<Vec<Cell>>,
}

impl TrackTable {
    pub fn beta_row_sums(&self) -> Vec<f64> {
        self.tracks.iter().map(|cells| cells.iter().map(|c| c.beta).sum()).collect()
    }
}

fn child_track(child: &PosteriorChild, t: usize) -> Option<&Bernoulli> {
    let n = child.sigma.n_tracks;
    if t < n {
        Some(&child.tracks[t])
    } else {
        child.new_tracks[t - n].as_ref()
    }
}

/// Groups the children by the association each makes for every track and
/// accumulates the marginal probabilities.
pub fn align_hypotheses(children: &[PosteriorChild], n_prior: usize, n_measurements: usize) -> Result<TrackTable> {
    for c in children {
        if c.sigma.n_tracks != n_prior
            || c.sigma.n_measurements() != n_measurements
            || c.tracks.len() != n_prior
            || c.new_tracks.len() != n_measurements
        {
            return Err(SlamError::Internal("children do not share a common parent".into()));
        }
    }
    let mut tracks = Vec::with_capacity(n_prior + n_measurements);
    for t in 0..n_prior + n_measurements {
        let mut cells: BTreeMap<Slot, Cell> = BTreeMap::new();
        for (j, child) in children.iter().enumerate() {
            let slot = child.sigma.slots[t];
            let cell = cells.entry(slot).or_insert_with(|| Cell {
                slot,
                beta: 0.0,
                beta_by_type: BTreeMap::new(),
                bernoulli: None,
                contributors: Vec::new(),
            });
            cell.beta += child.weight;
            cell.contributors.push(j);
            if slot == Slot::Absent {
                continue;
            }
            if let Some(b) = child_track(child, t) {
                for comp in &b.belief.components {
                    *cell.beta_by_type.entry(comp.kind).or_insert(0.0) += child.weight * comp.psi;
                }
            }
        }
        tracks.push(cells.into_values().collect());
    }
    Ok(TrackTable {
        n_prior,
        n_measurements,
        tracks,
    })
}

/// Weighted average of the children's Bernoullis within each cell: existence
/// by child weight, each type's Gaussian by child weight times its type probability.
pub fn average_conditionals(table: &mut TrackTable, children: &[PosteriorChild]) {
    for (t, cells) in table.tracks.iter_mut().enumerate() {
        for cell in cells.iter_mut() {
            if cell.slot == Slot::Absent || cell.beta < MIN_CELL_MASS {
                continue;
            }
            let members: Vec<(f64, &Bernoulli)> = cell
                .contributors
                .iter()
                .filter_map(|&j| child_track(&children[j], t).map(|b| (children[j].weight, b)))
                .collect();
            if members.is_empty() {
                continue;
            }
            if members.len() == 1 {
                cell.bernoulli = Some(members[0].1.clone());
                continue;
            }
            let mass: f64 = members.iter().map(|(w, _)| w).sum();
            let existence = members.iter().map(|(w, b)| w * b.existence).sum::<f64>() / mass;
            let mut components = Vec::new();
            for (&kind, &type_mass) in &cell.beta_by_type {
                let typed: Vec<(f64, &GaussianComponent)> = members
                    .iter()
                    .filter_map(|(w, b)| b.belief.get(kind).map(|c| (w * c.psi, &c.gaussian)))
                    .collect();
                // A type no contributor believes in still keeps a plain average.
                let gaussian = GaussianComponent::moment_match(typed.iter().copied()).or_else(|| {
                    GaussianComponent::moment_match(
                        members
                            .iter()
                            .filter_map(|(w, b)| b.belief.get(kind).map(|c| (*w, &c.gaussian))),
                    )
                });
                if let Some(gaussian) = gaussian {
                    components.push(TypeComponent {
                        kind,
                        psi: type_mass / mass,
                        gaussian,
                    });
                }
            }
            if components.is_empty() {
                continue;
            }
            let mut belief = LandmarkBelief { components };
            belief.normalize_psi();
            cell.bernoulli = Some(Bernoulli::new(existence.clamp(0.0, 1.0), belief));
        }
    }
}

/// Recombines the averaged conditionals into one Bernoulli per track.
pub fn tomb_recombine(table: &TrackTable) -> GlobalHypothesis {
    let mut bernoullis = Vec::new();
    for (t, cells) in table.tracks.iter().enumerate() {
        let live: Vec<(&Cell, &Bernoulli)> = cells
            .iter()
            .filter_map(|c| c.bernoulli.as_ref().map(|b| (c, b)))
            .collect();
        if t >= table.n_prior {
            // New track: only the "born from its own measurement" cell can exist.
            let Some((cell, born)) = live.into_iter().next() else {
                continue;
            };
            let existence = (cell.beta * born.existence).clamp(0.0, 1.0);
            let mut belief = born.belief.clone();
            if existence <= 0.0 {
                let n = belief.components.len() as f64;
                belief.components.iter_mut().for_each(|c| c.psi = 1.0 / n);
            }
            bernoullis.push(Bernoulli::new(existence, belief));
            continue;
        }
        if live.is_empty() {
            continue;
        }
        let existence: f64 = live.iter().map(|(c, b)| c.beta * b.existence).sum();
        let mut kinds: Vec<LandmarkType> = live
            .iter()
            .flat_map(|(_, b)| b.belief.components.iter().map(|c| c.kind))
            .collect();
        kinds.sort();
        kinds.dedup();
        let mut components = Vec::new();
        for kind in kinds {
            let typed: Vec<(f64, &GaussianComponent)> = live
                .iter()
                .filter_map(|(c, b)| {
                    let beta = c.beta_by_type.get(&kind).copied().unwrap_or(0.0);
                    b.belief.get(kind).map(|comp| (beta * b.existence, &comp.gaussian))
                })
                .collect();
            let type_mass: f64 = typed.iter().map(|(w, _)| w).sum();
            let gaussian = GaussianComponent::moment_match(typed.iter().copied()).or_else(|| {
                GaussianComponent::moment_match(
                    live.iter()
                        .filter_map(|(c, b)| b.belief.get(kind).map(|comp| (c.beta, &comp.gaussian))),
                )
            });
            if let Some(gaussian) = gaussian {
                let psi = if existence > 0.0 { type_mass / existence } else { 0.0 };
                components.push(TypeComponent { kind, psi, gaussian });
            }
        }
        if components.is_empty() {
            continue;
        }
        let mut belief = LandmarkBelief { components };
        belief.normalize_psi();
        bernoullis.push(Bernoulli::new(existence.clamp(0.0, 1.0), belief));
    }
    GlobalHypothesis {
        weight: 1.0,
        bernoullis,
    }
}

/// Collapses the children of a single parent multi-Bernoulli into one
/// multi-Bernoulli. A single child is returned as is and no table is built.
pub fn reduce(
    children: &[PosteriorChild],
    n_prior: usize,
    n_measurements: usize,
) -> Result<(GlobalHypothesis, Option<TrackTable>)> {
    match children {
        [] => Err(SlamError::Internal("nothing to reduce".into())),
        [only] => {
            let mut hyp = only.clone().into_hypothesis();
            hyp.weight = 1.0;
            Ok((hyp, None))
        }
        _ => {
            let mut table = align_hypotheses(children, n_prior, n_measurements)?;
            average_conditionals(&mut table, children);
            Ok((tomb_recombine(&table), Some(table)))
        }
    }
}
