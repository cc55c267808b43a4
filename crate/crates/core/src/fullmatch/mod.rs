//! Optimal full matching on the logit propensity score.
//!
//! A full match partitions treated and control subjects into subclasses that
//! contain either one treated and several controls or several treated and one
//! control, minimizing the total within-subclass treated-control distance.
//! Without ratio restrictions that optimum is a minimum-cost edge cover of
//! the complete bipartite graph, solved here as a minimum-cost flow with unit
//! lower bounds on every subject and decoded into star-shaped subclasses.

mod flow;

use serde::{Deserialize, Serialize};

use crate::datagen::{Source, TrialData};
use crate::error::{Error, Result};
use crate::propensity::{self, PropensityScores, PsOptions};
use crate::weights::{WeightMethod, WeightSet};
use flow::FlowNetwork;

/// Distances are integerized to this resolution for the flow solver.
pub const COST_RESOLUTION: f64 = 1e-6;

pub fn scaled_cost(distance: f64) -> i64 {
    (distance / COST_RESOLUTION).round() as i64
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchProblem {
    /// `distance[t][c]` between treated `t` and control `c`.
    distance: Vec<Vec<f64>>,
}

impl MatchProblem {
    pub fn new(distance: Vec<Vec<f64>>) -> Result<Self> {
        let n_controls = distance.first().map_or(0, Vec::len);
        if distance.is_empty() || n_controls == 0 {
            return Err(Error::Argument("full matching needs treated and control subjects".into()));
        }
        for row in &distance {
            if row.len() != n_controls {
                return Err(Error::Argument("ragged distance matrix".into()));
            }
            if row.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return Err(Error::Argument("distances must be finite and nonnegative".into()));
            }
        }
        Ok(MatchProblem { distance })
    }

    /// Absolute differences of logit propensity scores.
    pub fn from_scores(treated_ps: &[f64], control_ps: &[f64]) -> Result<Self> {
        let lt: Vec<f64> = treated_ps.iter().map(|&p| logit(p)).collect();
        let lc: Vec<f64> = control_ps.iter().map(|&p| logit(p)).collect();
        Self::new(lt.iter().map(|a| lc.iter().map(|b| (a - b).abs()).collect()).collect())
    }

    pub fn n_treated(&self) -> usize {
        self.distance.len()
    }

    pub fn n_controls(&self) -> usize {
        self.distance[0].len()
    }

    pub fn distance(&self, t: usize, c: usize) -> f64 {
        self.distance[t][c]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subclass {
    pub treated: Vec<usize>,
    pub controls: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullMatchResult {
    pub subclasses: Vec<Subclass>,
    pub treated_subclass: Vec<usize>,
    pub control_subclass: Vec<usize>,
    /// Sum of treated-control distances within subclasses.
    pub objective: f64,
    /// The same sum in integerized cost units; this is what is minimized.
    pub scaled_objective: i64,
}

impl FullMatchResult {
    /// Each subclass is one-to-many or many-to-one and covers each subject once.
    pub fn is_valid_structure(&self, n_treated: usize, n_controls: usize) -> bool {
        let mut seen_t = vec![0usize; n_treated];
        let mut seen_c = vec![0usize; n_controls];
        for (id, s) in self.subclasses.iter().enumerate() {
            if s.treated.is_empty() || s.controls.is_empty() || (s.treated.len() > 1 && s.controls.len() > 1) {
                return false;
            }
            for &t in &s.treated {
                seen_t[t] += 1;
                if self.treated_subclass[t] != id {
                    return false;
                }
            }
            for &c in &s.controls {
                seen_c[c] += 1;
                if self.control_subclass[c] != id {
                    return false;
                }
            }
        }
        seen_t.iter().chain(&seen_c).all(|&k| k == 1)
    }
}

pub fn optimal_full_match(problem: &MatchProblem) -> Result<FullMatchResult> {
    let nt = problem.n_treated();
    let nc = problem.n_controls();
    let (super_source, super_sink, source, sink) = (0, 1, 2, 3);
    let treated_node = |t: usize| 4 + t;
    let control_node = |c: usize| 4 + nt + c;
    let mut g = FlowNetwork::new(4 + nt + nc);

    // Unit lower bounds on source->treated and control->sink arcs are
    // rewritten as supplies and demands on the super terminals.
    g.add_arc(super_source, sink, nc as i64, 0);
    g.add_arc(source, super_sink, nt as i64, 0);
    g.add_arc(sink, source, (nt * nc) as i64, 0);
    for t in 0..nt {
        g.add_arc(super_source, treated_node(t), 1, 0);
        if nc > 1 {
            g.add_arc(source, treated_node(t), nc as i64 - 1, 0);
        }
    }
    for c in 0..nc {
        g.add_arc(control_node(c), super_sink, 1, 0);
        if nt > 1 {
            g.add_arc(control_node(c), sink, nt as i64 - 1, 0);
        }
    }
    let mut pair_arcs = Vec::with_capacity(nt * nc);
    for t in 0..nt {
        for c in 0..nc {
            let id = g.add_arc(treated_node(t), control_node(c), 1, scaled_cost(problem.distance(t, c)));
            pair_arcs.push((t, c, id));
        }
    }
    let demand = (nt + nc) as i64;
    let (flow, _) = g.min_cost_flow(super_source, super_sink, demand);
    if flow != demand {
        return Err(Error::Argument("full matching network is infeasible".into()));
    }

    let mut edges: Vec<(usize, usize)> = pair_arcs
        .iter()
        .filter(|&&(_, _, id)| g.flow(id) > 0)
        .map(|&(t, c, _)| (t, c))
        .collect();
    let mut deg_t = vec![0usize; nt];
    let mut deg_c = vec![0usize; nc];
    for &(t, c) in &edges {
        deg_t[t] += 1;
        deg_c[c] += 1;
    }
    // Drop edges redundant for the cover (only zero-cost ones can be, at an
    // optimum); lower control indices are kept first.
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, ca) = edges[a];
        let (tb, cb) = edges[b];
        scaled_cost(problem.distance(tb, cb))
            .cmp(&scaled_cost(problem.distance(ta, ca)))
            .then(cb.cmp(&ca))
            .then(tb.cmp(&ta))
    });
    let mut keep = vec![true; edges.len()];
    for i in order {
        let (t, c) = edges[i];
        if deg_t[t] > 1 && deg_c[c] > 1 {
            keep[i] = false;
            deg_t[t] -= 1;
            deg_c[c] -= 1;
        }
    }
    edges = edges.into_iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| e).collect();

    let mut controls_of = vec![Vec::new(); nt];
    let mut treated_of = vec![Vec::new(); nc];
    for &(t, c) in &edges {
        controls_of[t].push(c);
        treated_of[c].push(t);
    }
    let mut treated_subclass = vec![usize::MAX; nt];
    let mut control_subclass = vec![usize::MAX; nc];
    let mut subclasses: Vec<Subclass> = Vec::new();
    for t in 0..nt {
        if treated_subclass[t] != usize::MAX {
            continue;
        }
        let id = subclasses.len();
        let subclass = if controls_of[t].len() > 1 {
            Subclass {
                treated: vec![t],
                controls: controls_of[t].clone(),
            }
        } else {
            let c = controls_of[t][0];
            Subclass {
                treated: treated_of[c].clone(),
                controls: vec![c],
            }
        };
        for &u in &subclass.treated {
            treated_subclass[u] = id;
        }
        for &c in &subclass.controls {
            control_subclass[c] = id;
        }
        subclasses.push(subclass);
    }

    let objective = edges.iter().map(|&(t, c)| problem.distance(t, c)).sum();
    let scaled_objective = edges.iter().map(|&(t, c)| scaled_cost(problem.distance(t, c))).sum();
    Ok(FullMatchResult {
        subclasses,
        treated_subclass,
        control_subclass,
        objective,
        scaled_objective,
    })
}

/// Subclass-membership weights: treated 1, each control `n_treated / n_controls`
/// of its subclass.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchWeights {
    pub treated: Vec<f64>,
    pub controls: Vec<f64>,
}

pub fn subclass_weights(result: &FullMatchResult) -> MatchWeights {
    let mut controls = vec![0.0; result.control_subclass.len()];
    for s in &result.subclasses {
        let w = s.treated.len() as f64 / s.controls.len() as f64;
        for &c in &s.controls {
            controls[c] = w;
        }
    }
    MatchWeights {
        treated: vec![1.0; result.treated_subclass.len()],
        controls,
    }
}

/// One full match per historical arm when separate, one against the pooled
/// historical controls when joint.
pub fn fm_from_scores(data: &TrialData, scores: &PropensityScores) -> Result<WeightSet> {
    let mut weights = vec![1.0; data.subjects.len()];
    let reservoirs: Vec<Vec<Source>> = if scores.joint {
        vec![vec![Source::Hc0, Source::Hc1]]
    } else {
        vec![vec![Source::Hc0], vec![Source::Hc1]]
    };
    for (sources, treated_ps) in reservoirs.iter().zip(&scores.treated) {
        let controls = data.positions(sources);
        let control_ps: Vec<f64> = controls
            .iter()
            .map(|&i| scores.historical[i].ok_or_else(|| Error::Argument("missing propensity score".into())))
            .collect::<Result<_>>()?;
        let problem = MatchProblem::from_scores(treated_ps, &control_ps)?;
        let matched = optimal_full_match(&problem)?;
        let mw = subclass_weights(&matched);
        for (&i, w) in controls.iter().zip(mw.controls) {
            weights[i] = w;
        }
    }
    let method = if scores.joint { WeightMethod::Jfm } else { WeightMethod::Sfm };
    WeightSet::new(method, data, weights, scores.historical.clone())
}

pub fn separate_fm(data: &TrialData, options: &PsOptions) -> Result<WeightSet> {
    fm_from_scores(data, &propensity::separate_scores(data, options)?)
}

pub fn joint_fm(data: &TrialData, options: &PsOptions) -> Result<WeightSet> {
    fm_from_scores(data, &propensity::joint_scores(data, options)?)
}

/// Match audit export: `id,subclass,role,weight` for one match.
pub fn write_match_csv<W: std::io::Write>(
    result: &FullMatchResult,
    treated_ids: &[u32],
    control_ids: &[u32],
    writer: W,
) -> Result<()> {
    let weights = subclass_weights(result);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "subclass", "role", "weight"])?;
    for (t, &id) in treated_ids.iter().enumerate() {
        w.write_record([id.to_string(), result.treated_subclass[t].to_string(), "treated".into(), weights.treated[t].to_string()])?;
    }
    for (c, &id) in control_ids.iter().enumerate() {
        w.write_record([id.to_string(), result.control_subclass[c].to_string(), "control".into(), weights.controls[c].to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
