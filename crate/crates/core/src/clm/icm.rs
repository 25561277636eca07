//! Iterated conditional modes over discrete response-map grids.

use super::{CandidateConfiguration, ResponseMap};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct IcmConfig {
    pub max_sweeps: usize,
}

impl Default for IcmConfig {
    fn default() -> Self {
        Self { max_sweeps: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct IcmOutcome {
    pub config: CandidateConfiguration,
    /// Energy after the initial state and after each sweep; non-increasing.
    pub energy_trace: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

/// Coordinate descent: sweeps image-major then keypoint-ascending; each
/// step exhaustively searches that keypoint's grid with everything else
/// fixed and accepts the argmin. Stops when a full sweep changes nothing.
pub fn icm_minimize<E>(
    energy: E,
    init: &CandidateConfiguration,
    maps: &[Vec<ResponseMap>],
    config: &IcmConfig,
) -> Result<IcmOutcome>
where
    E: Fn(&CandidateConfiguration) -> Result<f64>,
{
    init.validate(maps)?;
    let mut current = init.clone();
    let mut current_energy = energy(&current)?;
    let mut trace = vec![current_energy];
    let mut converged = false;
    let mut sweeps = 0;

    for _ in 0..config.max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for img in 0..current.images() {
            for kp in 0..current.assignments[img].len() {
                let map = &maps[img][kp];
                let mut best_cell = current.assignments[img][kp];
                let mut best_energy = current_energy;
                let mut probe = current.clone();
                for r in 0..map.rows() {
                    for c in 0..map.cols() {
                        if (r, c) == current.assignments[img][kp] {
                            continue;
                        }
                        probe.assignments[img][kp] = (r, c);
                        let e = energy(&probe)?;
                        if e < best_energy {
                            best_energy = e;
                            best_cell = (r, c);
                        }
                    }
                }
                if best_cell != current.assignments[img][kp] {
                    current.assignments[img][kp] = best_cell;
                    current_energy = best_energy;
                    changed = true;
                }
            }
        }
        trace.push(current_energy);
        if !changed {
            converged = true;
            break;
        }
    }

    Ok(IcmOutcome { config: current, energy_trace: trace, converged, sweeps })
}
