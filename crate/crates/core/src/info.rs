//! Information structures and their compiled feature maps.
//!
//! Each agent sees its own observation post and, optionally, the posts of
//! other agents with a strictly positive delay. The recall mode fixes which
//! past times are retained. Compiling against a [`TimeGrid`] yields, for
//! every agent and step, the exact list of `(source, time, coordinate)`
//! observation entries the agent's decision may depend on. Policies only ever
//! see vectors extracted through this list, which makes them measurable with
//! respect to the information structure by construction.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::abs;
use crate::model::TimeGrid;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recall {
    /// Entire history up to the latest available time.
    Perfect,
    /// The latest `w + 1` available times.
    Window(usize),
    /// Only the latest available time.
    Markov,
}

/// Observation post of `from` received with a delay given in time units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signal {
    pub from: usize,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentInformation {
    pub own_observation: bool,
    pub signals: Vec<Signal>,
    pub recall: Recall,
    /// Keep only these observation coordinates (applied to every source).
    pub projection: Option<Vec<usize>>,
}

impl AgentInformation {
    pub fn markov() -> Self {
        Self {
            own_observation: true,
            signals: Vec::new(),
            recall: Recall::Markov,
            projection: None,
        }
    }

    pub fn perfect_recall() -> Self {
        Self {
            recall: Recall::Perfect,
            ..Self::markov()
        }
    }

    pub fn blind() -> Self {
        Self {
            own_observation: false,
            ..Self::markov()
        }
    }

    pub fn with_signal(mut self, from: usize, delay: f64) -> Self {
        self.signals.push(Signal { from, delay });
        self
    }

    pub fn with_recall(mut self, recall: Recall) -> Self {
        self.recall = recall;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformationStructure {
    pub agents: Vec<AgentInformation>,
}

impl InformationStructure {
    pub fn new(agents: Vec<AgentInformation>) -> Self {
        Self { agents }
    }

    /// Every agent sees only its own current observation.
    pub fn all_markov(num_agents: usize) -> Self {
        Self::new(vec![AgentInformation::markov(); num_agents])
    }
}

/// One observation entry: coordinate `coord` of agent `source`'s post at
/// grid time `time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureRef {
    pub source: usize,
    pub time: usize,
    pub coord: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    obs_dims: Vec<usize>,
    num_steps: usize,
    /// `entries[agent][step]`
    entries: Vec<Vec<Vec<FeatureRef>>>,
}

fn time_range(latest: usize, recall: Recall) -> core::ops::RangeInclusive<usize> {
    match recall {
        Recall::Perfect => 0..=latest,
        Recall::Window(w) => latest.saturating_sub(w)..=latest,
        Recall::Markov => latest..=latest,
    }
}

/// Builds the per-step feature lists. Entries are ordered by source, then
/// time, then coordinate.
pub fn compile(
    info: &InformationStructure,
    grid: &TimeGrid,
    obs_dims: &[usize],
) -> Result<FeatureMap> {
    let num_agents = info.agents.len();
    if obs_dims.len() != num_agents {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} observation posts for {} agents",
            obs_dims.len(),
            num_agents
        )));
    }
    let dt = grid.step();
    let mut entries = Vec::with_capacity(num_agents);
    for (agent, spec) in info.agents.iter().enumerate() {
        // (source, delay in steps)
        let mut sources: Vec<(usize, usize)> = Vec::new();
        if spec.own_observation {
            sources.push((agent, 0));
        }
        for s in &spec.signals {
            if s.from == agent {
                return Err(Error::SelfSignaling { agent });
            }
            if s.from >= num_agents {
                return Err(Error::InvalidSpec(alloc::format!(
                    "agent {agent} receives from unknown agent {}",
                    s.from
                )));
            }
            let ratio = s.delay / dt;
            let steps = libm::round(ratio);
            if !(steps >= 1.0) || abs(ratio - steps) > 1e-9 * steps.max(1.0) {
                return Err(Error::DelayNotOnGrid {
                    agent,
                    from: s.from,
                    delay: s.delay,
                });
            }
            sources.push((s.from, steps as usize));
        }
        sources.sort();
        let mut per_step = Vec::with_capacity(grid.num_steps() + 1);
        for k in 0..=grid.num_steps() {
            let mut refs = Vec::new();
            for &(source, delay) in &sources {
                let Some(latest) = k.checked_sub(delay) else {
                    continue;
                };
                for time in time_range(latest, spec.recall) {
                    for coord in 0..obs_dims[source] {
                        if spec.projection.as_ref().is_none_or(|p| p.contains(&coord)) {
                            refs.push(FeatureRef {
                                source,
                                time,
                                coord,
                            });
                        }
                    }
                }
            }
            per_step.push(refs);
        }
        entries.push(per_step);
    }
    Ok(FeatureMap {
        obs_dims: obs_dims.to_vec(),
        num_steps: grid.num_steps(),
        entries,
    })
}

impl FeatureMap {
    pub fn num_agents(&self) -> usize {
        self.entries.len()
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn obs_dims(&self) -> &[usize] {
        &self.obs_dims
    }

    pub fn entries(&self, agent: usize, step: usize) -> &[FeatureRef] {
        &self.entries[agent][step]
    }

    pub fn dim(&self, agent: usize, step: usize) -> usize {
        self.entries[agent][step].len()
    }

    /// Steps `k` whose feature set is not contained in that of `k + 1`.
    pub fn nesting_violations(&self, agent: usize) -> Vec<usize> {
        let e = &self.entries[agent];
        (0..self.num_steps)
            .filter(|&k| e[k].iter().any(|r| !e[k + 1].contains(r)))
            .collect()
    }

    /// Unchecked extraction; `obs[j]` is agent `j`'s flattened post history.
    pub fn extract_into(&self, obs: &[&[f64]], agent: usize, step: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.entries[agent][step]
                .iter()
                .map(|r| obs[r.source][r.time * self.obs_dims[r.source] + r.coord]),
        );
    }
}

/// The feature vector of `agent` at `step`, in the map's fixed order.
pub fn extract_features(
    fm: &FeatureMap,
    obs_history: &[&[f64]],
    agent: usize,
    step: usize,
) -> Result<Vec<f64>> {
    if obs_history.len() != fm.num_agents() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} observation histories for {} agents",
            obs_history.len(),
            fm.num_agents()
        )));
    }
    for r in fm.entries(agent, step) {
        let k = fm.obs_dims[r.source];
        if (r.time + 1) * k > obs_history[r.source].len() {
            return Err(Error::HistoryTooShort {
                source_agent: r.source,
                time: r.time,
                available: obs_history[r.source].len() / k.max(1),
            });
        }
    }
    let mut out = Vec::with_capacity(fm.dim(agent, step));
    fm.extract_into(obs_history, agent, step, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurabilityReport {
    pub trials: usize,
    /// Largest change in any policy output caused by perturbing history
    /// entries outside the feature map.
    pub max_change: f64,
    /// `(agent, step)` where `max_change` occurred.
    pub worst: Option<(usize, usize)>,
    pub pass: bool,
}

/// Fuzzes every history entry that `fm` hides from an agent and reports the
/// largest induced change of the policy output. `policy` receives the full
/// observation histories (`M + 1` times for every post).
pub fn check_measurability<F>(
    policy: F,
    fm: &FeatureMap,
    trials: usize,
    seed: u64,
) -> MeasurabilityReport
where
    F: Fn(usize, usize, &[&[f64]]) -> Vec<f64>,
{
    let len = fm.num_steps + 1;
    let mut report = MeasurabilityReport {
        trials,
        max_change: 0.0,
        worst: None,
        pass: true,
    };
    for trial in 0..trials {
        let mut rng = rng::path_rng(seed, trial);
        let base: Vec<Vec<f64>> = fm
            .obs_dims
            .iter()
            .map(|&k| {
                (0..len * k)
                    .map(|_| rng::standard_normal(&mut rng))
                    .collect()
            })
            .collect();
        for agent in 0..fm.num_agents() {
            for step in 0..len {
                let visible = fm.entries(agent, step);
                let mut perturbed = base.clone();
                for (source, hist) in perturbed.iter_mut().enumerate() {
                    let k = fm.obs_dims[source];
                    for (idx, v) in hist.iter_mut().enumerate() {
                        let r = FeatureRef {
                            source,
                            time: idx / k,
                            coord: idx % k,
                        };
                        if !visible.contains(&r) {
                            *v += 1.0 + rng::standard_normal(&mut rng);
                        }
                    }
                }
                let view = |h: &[Vec<f64>]| -> Vec<f64> {
                    let refs: Vec<&[f64]> = h.iter().map(|v| v.as_slice()).collect();
                    policy(agent, step, &refs)
                };
                let a = view(&base);
                let b = view(&perturbed);
                let change = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max(abs(x - y)));
                if change > report.max_change || (change.is_nan() && report.max_change.is_finite())
                {
                    report.max_change = change;
                    report.worst = Some((agent, step));
                }
            }
        }
    }
    report.pass = report.max_change == 0.0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(source: usize, time: usize, coord: usize) -> FeatureRef {
        FeatureRef {
            source,
            time,
            coord,
        }
    }

    #[test]
    fn perfect_recall_enumerates_history() {
        let info = InformationStructure::new(vec![AgentInformation::perfect_recall()]);
        let fm = compile(&info, &TimeGrid::new(1.0, 2).unwrap(), &[1]).unwrap();
        assert_eq!(fm.entries(0, 2), &[r(0, 0, 0), r(0, 1, 0), r(0, 2, 0)]);
        assert!(fm.nesting_violations(0).is_empty());
    }

    #[test]
    fn markov_with_delayed_signal() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let info = InformationStructure::new(vec![
            AgentInformation::markov().with_signal(1, 0.25),
            AgentInformation::markov(),
        ]);
        let fm = compile(&info, &grid, &[1, 1]).unwrap();
        for k in 1..=4 {
            assert_eq!(fm.entries(0, k), &[r(0, k, 0), r(1, k - 1, 0)]);
        }
        assert_eq!(fm.entries(0, 0), &[r(0, 0, 0)]);
    }

    #[test]
    fn window_recall_is_not_nested() {
        let info = InformationStructure::new(vec![
            AgentInformation::markov().with_recall(Recall::Window(1))
        ]);
        let fm = compile(&info, &TimeGrid::new(1.0, 5).unwrap(), &[1]).unwrap();
        assert_eq!(fm.entries(0, 4), &[r(0, 3, 0), r(0, 4, 0)]);
        assert!(fm.nesting_violations(0).contains(&3));
    }

    #[test]
    fn bad_signals() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let selfish =
            InformationStructure::new(vec![AgentInformation::markov().with_signal(0, 0.25)]);
        assert!(matches!(
            compile(&selfish, &grid, &[1]),
            Err(Error::SelfSignaling { agent: 0 })
        ));
        for delay in [0.1, 0.0] {
            let info = InformationStructure::new(vec![
                AgentInformation::markov().with_signal(1, delay),
                AgentInformation::markov(),
            ]);
            assert!(matches!(
                compile(&info, &grid, &[1, 1]),
                Err(Error::DelayNotOnGrid { .. })
            ));
        }
    }

    #[test]
    fn projection_filters_coordinates() {
        let mut a = AgentInformation::markov();
        a.projection = Some(vec![1]);
        let fm = compile(
            &InformationStructure::new(vec![a]),
            &TimeGrid::new(1.0, 1).unwrap(),
            &[3],
        )
        .unwrap();
        assert_eq!(fm.entries(0, 1), &[r(0, 1, 1)]);
    }

    #[test]
    fn extract_examples() {
        let grid = TimeGrid::new(2.0, 2).unwrap();
        let fm = compile(&InformationStructure::all_markov(1), &grid, &[1]).unwrap();
        let x = [0.0, 0.5, -1.0];
        assert_eq!(extract_features(&fm, &[&x], 0, 2).unwrap(), vec![-1.0]);

        let info = InformationStructure::new(vec![
            AgentInformation::markov().with_signal(1, 1.0),
            AgentInformation::markov(),
        ]);
        let fm = compile(&info, &grid, &[1, 1]).unwrap();
        let z1 = [1.0, 2.0, 3.0];
        let z2 = [7.0, 8.0, 9.0];
        assert_eq!(
            extract_features(&fm, &[&z1, &z2], 0, 2).unwrap(),
            vec![3.0, 8.0]
        );
        assert!(matches!(
            extract_features(&fm, &[&z1[..1], &z2], 0, 2),
            Err(Error::HistoryTooShort { .. })
        ));

        let blind = InformationStructure::new(vec![
            AgentInformation::blind().with_signal(1, 1.0),
            AgentInformation::markov(),
        ]);
        let fm = compile(&blind, &grid, &[1, 1]).unwrap();
        assert!(extract_features(&fm, &[&z1, &z2], 0, 0).unwrap().is_empty());
    }

    #[test]
    fn measurability_fuzzing() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let fm = compile(&InformationStructure::all_markov(1), &grid, &[1]).unwrap();
        let honest = |a: usize, k: usize, h: &[&[f64]]| {
            let f = extract_features(&fm, h, a, k).unwrap();
            vec![0.7 * f[0]]
        };
        assert!(check_measurability(honest, &fm, 5, 1).pass);

        let peeking = |_: usize, k: usize, h: &[&[f64]]| vec![h[0][(k + 1).min(4)]];
        let rep = check_measurability(peeking, &fm, 5, 1);
        assert!(!rep.pass && rep.max_change > 0.0);

        assert!(check_measurability(|_, _, _| vec![1.0], &fm, 3, 2).pass);
    }
}
