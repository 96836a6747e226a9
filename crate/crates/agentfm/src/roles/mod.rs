//! Cluster role management: node kinds, leadership, liveness, importance
//! weights, and the epoch-versioned [`RoleTable`].
//!
//! The model is deliberately small: one node holds the leadership of the
//! whole table at a time (the node carrying the most leader partitions), and
//! a node's importance grows with the share of partitions it leads:
//!
//! ```text
//! importance = 1.0 + leader_partition_count / max(1, total_partitions)
//! ```
//!
//! [`refresh_roles`] folds a liveness/partition snapshot into the table. It
//! is idempotent — refreshing with an unchanged snapshot returns the same
//! table and epoch — and it re-elects deterministically when the leader
//! dies: the live node with the most leader partitions wins, ties broken by
//! the lexicographically smallest node id. Every effective change bumps the
//! epoch exactly once.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::telemetry::NodeId;

/// Errors raised by role management.
#[derive(Debug, thiserror::Error)]
pub enum RoleError {
    /// The cluster description is structurally invalid.
    #[error("config error: {0}")]
    Config(String),
    /// A liveness snapshot does not cover the cluster.
    #[error("state error: {0}")]
    State(String),
}

/// What a node does in the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleKind {
    /// Stores cluster metadata and configuration.
    Config,
    /// Routes client requests to storage nodes.
    Coordinator,
    /// Stores data partitions.
    Storage,
}

impl std::fmt::Display for RoleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RoleKind::Config => "config",
            RoleKind::Coordinator => "coordinator",
            RoleKind::Storage => "storage",
        };
        f.write_str(s)
    }
}

/// Leadership standing of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leadership {
    Leader,
    Follower,
    /// Not part of the leadership protocol (config and coordinator nodes).
    None,
}

impl std::fmt::Display for Leadership {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Leadership::Leader => "leader",
            Leadership::Follower => "follower",
            Leadership::None => "none",
        };
        f.write_str(s)
    }
}

/// Liveness as seen by the failure detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Liveness {
    Up,
    Down,
}

/// One node's role entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRole {
    pub node_id: NodeId,
    pub kind: RoleKind,
    pub leadership: Leadership,
    pub leader_partition_count: u32,
    /// `1.0 + leader_partition_count / max(1, total_partitions)`.
    pub importance: f64,
    pub liveness: Liveness,
}

/// Epoch-versioned role assignment for the whole cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTable {
    pub epoch: u64,
    pub total_partitions: u32,
    pub roles: BTreeMap<NodeId, NodeRole>,
}

impl RoleTable {
    /// The current leader, if any.
    pub fn leader(&self) -> Option<&NodeRole> {
        self.roles
            .values()
            .find(|r| r.leadership == Leadership::Leader)
    }

    /// Importance weight for a node; unknown nodes weigh `1.0`.
    pub fn importance_of(&self, node_id: &str) -> f64 {
        self.roles.get(node_id).map_or(1.0, |r| r.importance)
    }

    fn invariants_ok(&self) -> bool {
        let leaders = self
            .roles
            .values()
            .filter(|r| r.leadership == Leadership::Leader)
            .count();
        leaders <= 1
            && self.roles.values().all(|r| {
                r.leadership != Leadership::Leader
                    || (r.leader_partition_count >= 1 && r.liveness == Liveness::Up)
            })
    }
}

/// Static cluster description (also the `cluster.json` wire format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub nodes: Vec<ClusterNode>,
    pub total_partitions: u32,
}

/// One node in the cluster description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterNode {
    pub id: NodeId,
    pub kind: RoleKind,
    /// Partitions this node currently leads.
    #[serde(default)]
    pub leader_partitions: u32,
}

impl ClusterConfig {
    /// Parses a cluster description from JSON; schema violations (missing
    /// `kind`, wrong types, unknown fields) are config errors.
    pub fn from_json_str(text: &str) -> Result<Self, RoleError> {
        let config: ClusterConfig = serde_json::from_str(text)
            .map_err(|e| RoleError::Config(format!("cluster config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, RoleError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            RoleError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), RoleError> {
        if self.nodes.is_empty() {
            return Err(RoleError::Config("cluster has no nodes".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for node in &self.nodes {
            if node.id.is_empty() {
                return Err(RoleError::Config("node with empty id".into()));
            }
            if !seen.insert(node.id.as_str()) {
                return Err(RoleError::Config(format!("duplicate node id {:?}", node.id)));
            }
        }
        let led: u32 = self.nodes.iter().map(|n| n.leader_partitions).sum();
        if led > self.total_partitions {
            return Err(RoleError::Config(format!(
                "nodes lead {led} partitions but the cluster only has {}",
                self.total_partitions
            )));
        }
        Ok(())
    }
}

/// Importance weight formula.
fn importance(leader_partition_count: u32, total_partitions: u32) -> f64 {
    1.0 + leader_partition_count as f64 / total_partitions.max(1) as f64
}

/// Elects a leader among live nodes holding at least one leader partition:
/// most partitions wins, ties go to the smallest node id. Returns `None`
/// when no node qualifies.
fn elect<'a, I>(candidates: I) -> Option<NodeId>
where
    I: Iterator<Item = (&'a NodeId, u32, Liveness)>,
{
    candidates
        .filter(|(_, count, liveness)| *count >= 1 && *liveness == Liveness::Up)
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(id, _, _)| id.clone())
}

/// Builds the initial role table (epoch 0) from a cluster description.
/// Every node starts live; the initial leader is elected with the standard
/// rule.
pub fn bootstrap_roles(config: &ClusterConfig) -> Result<RoleTable, RoleError> {
    config.validate()?;
    let leader = elect(
        config
            .nodes
            .iter()
            .map(|n| (&n.id, n.leader_partitions, Liveness::Up)),
    );
    let roles: BTreeMap<NodeId, NodeRole> = config
        .nodes
        .iter()
        .map(|n| {
            let leadership = if Some(&n.id) == leader.as_ref() {
                Leadership::Leader
            } else if n.kind == RoleKind::Storage {
                Leadership::Follower
            } else {
                Leadership::None
            };
            (
                n.id.clone(),
                NodeRole {
                    node_id: n.id.clone(),
                    kind: n.kind,
                    leadership,
                    leader_partition_count: n.leader_partitions,
                    importance: importance(n.leader_partitions, config.total_partitions),
                    liveness: Liveness::Up,
                },
            )
        })
        .collect();
    let table = RoleTable {
        epoch: 0,
        total_partitions: config.total_partitions,
        roles,
    };
    debug_assert!(table.invariants_ok());
    Ok(table)
}

/// One node's entry in a liveness/partition snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    pub liveness: Liveness,
    pub leader_partition_count: u32,
}

/// A point-in-time snapshot of the cluster used to refresh the table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub nodes: BTreeMap<NodeId, NodeState>,
}

impl SystemState {
    /// Snapshot matching a role table exactly (everything as recorded).
    pub fn from_table(table: &RoleTable) -> Self {
        SystemState {
            nodes: table
                .roles
                .values()
                .map(|r| {
                    (
                        r.node_id.clone(),
                        NodeState {
                            liveness: r.liveness,
                            leader_partition_count: r.leader_partition_count,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Marks one node down, returning the modified snapshot.
    pub fn with_down(mut self, node_id: &str) -> Self {
        if let Some(state) = self.nodes.get_mut(node_id) {
            state.liveness = Liveness::Down;
        }
        self
    }
}

/// Folds a snapshot into the table.
///
/// * The snapshot must cover every node in the table (missing nodes are
///   state errors); extra snapshot entries are ignored.
/// * Kind never changes; liveness and partition counts come from the
///   snapshot; importance is recomputed.
/// * The sitting leader keeps the seat while it is live and still holds at
///   least one leader partition; otherwise a new election runs.
/// * The epoch increases by exactly one when anything changed, and the
///   table is returned untouched when nothing did (idempotence).
pub fn refresh_roles(table: &RoleTable, state: &SystemState) -> Result<RoleTable, RoleError> {
    for id in table.roles.keys() {
        if !state.nodes.contains_key(id) {
            return Err(RoleError::State(format!(
                "snapshot does not cover node {id:?}"
            )));
        }
    }
    let sitting = table.leader().map(|r| r.node_id.clone());
    let keeps_seat = sitting.as_ref().is_some_and(|id| {
        let s = state.nodes[id];
        s.liveness == Liveness::Up && s.leader_partition_count >= 1
    });
    let leader = if keeps_seat {
        sitting
    } else {
        elect(table.roles.keys().map(|id| {
            let s = state.nodes[id];
            (id, s.leader_partition_count, s.liveness)
        }))
    };

    let roles: BTreeMap<NodeId, NodeRole> = table
        .roles
        .values()
        .map(|old| {
            let s = state.nodes[&old.node_id];
            let leadership = if Some(&old.node_id) == leader.as_ref() {
                Leadership::Leader
            } else if old.kind == RoleKind::Storage {
                Leadership::Follower
            } else {
                Leadership::None
            };
            (
                old.node_id.clone(),
                NodeRole {
                    node_id: old.node_id.clone(),
                    kind: old.kind,
                    leadership,
                    leader_partition_count: s.leader_partition_count,
                    importance: importance(s.leader_partition_count, table.total_partitions),
                    liveness: s.liveness,
                },
            )
        })
        .collect();

    if roles == table.roles {
        return Ok(table.clone());
    }
    let refreshed = RoleTable {
        epoch: table.epoch + 1,
        total_partitions: table.total_partitions,
        roles,
    };
    debug_assert!(refreshed.invariants_ok());
    Ok(refreshed)
}

/// Which data agents run on a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataAgentSet {
    pub metric: bool,
    pub log: bool,
}

/// Deployment order for one node's standalone agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandaloneAgentSpec {
    pub node_id: NodeId,
    pub role: NodeRole,
    pub data_agents: DataAgentSet,
}

/// Plans one standalone agent pair (metric + log) per live node, in node-id
/// order. Down nodes get nothing: there is no telemetry to digest there.
pub fn instantiate_agents(table: &RoleTable) -> Vec<StandaloneAgentSpec> {
    table
        .roles
        .values()
        .filter(|r| r.liveness == Liveness::Up)
        .map(|r| StandaloneAgentSpec {
            node_id: r.node_id.clone(),
            role: r.clone(),
            data_agents: DataAgentSet {
                metric: true,
                log: true,
            },
        })
        .collect()
}
