//! Prosumers and the bilateral trading topology.
//!
//! Sign convention: positive active power is generation, negative is
//! consumption. A directed trade `t_ij > 0` means `i` sells to `j`.

use std::fmt;

use log::warn;

/// Convex quadratic cost `a p^2 + b p` in EUR/h with `p` in MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    pub quadratic: f64,
    pub linear: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: String,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub cost: QuadraticCost,
}

impl Agent {
    /// Size of the asset, `max(|p_min|, |p_max|)`.
    pub fn capacity(&self) -> f64 {
        self.p_min.abs().max(self.p_max.abs())
    }

    pub fn cost_value_and_gradient(&self, p: f64) -> (f64, f64) {
        let QuadraticCost { quadratic: a, linear: b } = self.cost;
        (a * p * p + b * p, 2.0 * a * p + b)
    }
}

/// Partner sets and the directed trade index built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeGraph {
    partners: Vec<Vec<usize>>,
    trades: Vec<(usize, usize)>,
    reverse: Vec<Option<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl TradeGraph {
    /// Builds the directed index `(i, j)` for every `j` in `partners[i]`.
    /// Duplicates are removed; asymmetries are kept and reported by [`validate`].
    pub fn new(mut partners: Vec<Vec<usize>>) -> Self {
        for p in &mut partners {
            p.sort_unstable();
            p.dedup();
        }
        let trades: Vec<(usize, usize)> = partners
            .iter()
            .enumerate()
            .flat_map(|(i, ps)| ps.iter().map(move |&j| (i, j)))
            .collect();
        let reverse = trades
            .iter()
            .map(|&(i, j)| trades.binary_search(&(j, i)).ok())
            .collect();
        let mut outgoing = vec![Vec::new(); partners.len()];
        for (k, &(i, _)) in trades.iter().enumerate() {
            outgoing[i].push(k);
        }
        TradeGraph {
            partners,
            trades,
            reverse,
            outgoing,
        }
    }

    /// Every agent trades with every other agent.
    pub fn full(n: usize) -> Self {
        Self::new((0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect())
    }

    /// Symmetric graph from undirected pairs.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut partners = vec![Vec::new(); n];
        for &(a, b) in pairs {
            partners[a].push(b);
            partners[b].push(a);
        }
        Self::new(partners)
    }

    pub fn agent_count(&self) -> usize {
        self.partners.len()
    }

    pub fn partners(&self, agent: usize) -> &[usize] {
        &self.partners[agent]
    }

    /// Directed trades `(i, j)` in lexicographic order.
    pub fn trades(&self) -> &[(usize, usize)] {
        &self.trades
    }

    /// Index of `(j, i)` for trade `k = (i, j)`.
    pub fn reverse(&self, k: usize) -> Option<usize> {
        self.reverse[k]
    }

    /// Trades `(i, *)` originating at `agent`.
    pub fn outgoing(&self, agent: usize) -> &[usize] {
        &self.outgoing[agent]
    }

    /// One representative `k` with `trades[k].0 < trades[k].1` per undirected pair.
    pub fn pairs(&self) -> Vec<usize> {
        (0..self.trades.len())
            .filter(|&k| self.trades[k].0 < self.trades[k].1)
            .collect()
    }

    pub fn is_isolated(&self, agent: usize) -> bool {
        self.partners[agent].is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    AsymmetricPartners { agent: String, partner: String },
    SelfTrade { agent: String },
    UnknownPartner { agent: String, index: usize },
    ActiveBounds { agent: String, min: f64, max: f64 },
    ReactiveBounds { agent: String, min: f64, max: f64 },
    NonconvexCost { agent: String, quadratic: f64 },
    /// Warning only: the agent is left out of the clearing.
    Isolated { agent: String },
    SizeMismatch { agents: usize, graph: usize },
}

impl Diagnostic {
    pub fn is_error(&self) -> bool {
        !matches!(self, Diagnostic::Isolated { .. })
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::AsymmetricPartners { agent, partner } => write!(
                f,
                "asymmetric partners: `{partner}` is a partner of `{agent}` but not vice versa (pair {agent}-{partner})"
            ),
            Diagnostic::SelfTrade { agent } => write!(f, "agent `{agent}` lists itself as a partner"),
            Diagnostic::UnknownPartner { agent, index } => {
                write!(f, "agent `{agent}` references unknown partner #{index}")
            }
            Diagnostic::ActiveBounds { agent, min, max } => {
                write!(f, "agent `{agent}`: active power bounds {min} > {max}")
            }
            Diagnostic::ReactiveBounds { agent, min, max } => {
                write!(f, "agent `{agent}`: reactive power bounds {min} > {max}")
            }
            Diagnostic::NonconvexCost { agent, quadratic } => {
                write!(f, "agent `{agent}`: quadratic cost coefficient {quadratic} < 0")
            }
            Diagnostic::Isolated { agent } => write!(f, "agent `{agent}` has no trading partners"),
            Diagnostic::SizeMismatch { agents, graph } => {
                write!(f, "{agents} agents but trade graph covers {graph}")
            }
        }
    }
}

/// Checks agent bounds, cost convexity and partner symmetry.
pub fn validate(agents: &[Agent], graph: &TradeGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if agents.len() != graph.agent_count() {
        out.push(Diagnostic::SizeMismatch {
            agents: agents.len(),
            graph: graph.agent_count(),
        });
        return out;
    }
    for a in agents {
        if a.p_min > a.p_max {
            out.push(Diagnostic::ActiveBounds {
                agent: a.id.clone(),
                min: a.p_min,
                max: a.p_max,
            });
        }
        if a.q_min > a.q_max {
            out.push(Diagnostic::ReactiveBounds {
                agent: a.id.clone(),
                min: a.q_min,
                max: a.q_max,
            });
        }
        if a.cost.quadratic < 0.0 {
            out.push(Diagnostic::NonconvexCost {
                agent: a.id.clone(),
                quadratic: a.cost.quadratic,
            });
        }
    }
    for (i, ps) in graph.partners.iter().enumerate() {
        for &j in ps {
            if j >= agents.len() {
                out.push(Diagnostic::UnknownPartner {
                    agent: agents[i].id.clone(),
                    index: j,
                });
            } else if j == i {
                out.push(Diagnostic::SelfTrade {
                    agent: agents[i].id.clone(),
                });
            } else if graph.partners[j].binary_search(&i).is_err() {
                out.push(Diagnostic::AsymmetricPartners {
                    agent: agents[i].id.clone(),
                    partner: agents[j].id.clone(),
                });
            }
        }
        if ps.is_empty() {
            warn!("agent `{}` is isolated and will be excluded from clearing", agents[i].id);
            out.push(Diagnostic::Isolated {
                agent: agents[i].id.clone(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn agent(id: &str, p_min: f64, p_max: f64, a: f64, b: f64) -> Agent {
        Agent {
            id: id.into(),
            bus: 0,
            p_min,
            p_max,
            q_min: 0.0,
            q_max: 0.0,
            cost: QuadraticCost { quadratic: a, linear: b },
        }
    }

    #[test]
    fn symmetric_pair_is_ok() {
        let agents = [agent("a", 0.0, 1.0, 0.0, 1.0), agent("b", -1.0, 0.0, 0.0, 1.0)];
        assert!(validate(&agents, &TradeGraph::full(2)).is_empty());
    }

    #[test]
    fn asymmetry_is_named() {
        let agents = [agent("a1", 0.0, 1.0, 0.0, 1.0), agent("a2", -1.0, 0.0, 0.0, 1.0)];
        let g = TradeGraph::new(vec![vec![1], vec![]]);
        let diags = validate(&agents, &g);
        assert!(diags.iter().any(|d| matches!(d,
            Diagnostic::AsymmetricPartners { agent, partner } if agent == "a1" && partner == "a2")));
    }

    #[test]
    fn inverted_bounds_are_named() {
        let agents = [agent("bad", 2.0, 1.0, 0.0, 1.0), agent("b", -1.0, 0.0, 0.0, 1.0)];
        let diags = validate(&agents, &TradeGraph::full(2));
        assert!(diags.iter().any(|d| matches!(d, Diagnostic::ActiveBounds { agent, .. } if agent == "bad")));
    }

    #[test]
    fn isolated_is_a_warning() {
        let agents = [agent("a", 0.0, 1.0, 0.0, 1.0), agent("b", 0.0, 1.0, 0.0, 1.0), agent("c", 0.0, 1.0, 0.0, 1.0)];
        let g = TradeGraph::from_pairs(3, &[(0, 1)]);
        let diags = validate(&agents, &g);
        assert_eq!(diags.len(), 1);
        assert!(!diags[0].is_error());
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(agent("x", -5.0, 0.0, 0.0, 0.0).capacity(), 5.0);
        assert_eq!(agent("x", 0.0, 3.0, 0.0, 0.0).capacity(), 3.0);
        assert_eq!(agent("x", -2.0, 7.0, 0.0, 0.0).capacity(), 7.0);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(agent("x", 0.0, 1.0, 0.0, 20.0).cost_value_and_gradient(2.0), (40.0, 20.0));
        assert_eq!(agent("x", 0.0, 1.0, 1.0, 0.0).cost_value_and_gradient(3.0), (9.0, 6.0));
        let a = agent("x", 0.0, 1.0, 0.7, 13.0);
        let h = 1e-5;
        let fd = (a.cost_value_and_gradient(1.7 + h).0 - a.cost_value_and_gradient(1.7 - h).0) / (2.0 * h);
        assert!((fd - a.cost_value_and_gradient(1.7).1).abs() < 1e-6);
    }

    #[test]
    fn trade_index_pairs_reverse() {
        let g = TradeGraph::full(4);
        assert_eq!(g.trades().len(), 12);
        for k in 0..12 {
            let r = g.reverse(k).unwrap();
            assert_eq!(g.reverse(r), Some(k));
            assert_eq!(g.trades()[r], (g.trades()[k].1, g.trades()[k].0));
        }
        assert_eq!(g.pairs().len(), 6);
    }

    proptest! {
        #[test]
        fn cost_is_midpoint_convex(a in 0.0f64..5.0, b in -50.0f64..50.0, p1 in -10.0f64..10.0, p2 in -10.0f64..10.0) {
            let ag = agent("x", -10.0, 10.0, a, b);
            let mid = ag.cost_value_and_gradient(0.5 * (p1 + p2)).0;
            let avg = 0.5 * (ag.cost_value_and_gradient(p1).0 + ag.cost_value_and_gradient(p2).0);
            prop_assert!(mid <= avg + 1e-9);
        }

        #[test]
        fn symmetric_graphs_have_even_trade_count(edges in proptest::collection::vec((0usize..6, 0usize..6), 0..15)) {
            let pairs: Vec<_> = edges.into_iter().filter(|(a, b)| a != b).collect();
            let g = TradeGraph::from_pairs(6, &pairs);
            prop_assert_eq!(g.trades().len() % 2, 0);
            for k in 0..g.trades().len() {
                prop_assert!(g.reverse(k).is_some());
            }
        }
    }
}
