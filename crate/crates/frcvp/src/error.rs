use crate::model::{NodeId, VehicleId};

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("vehicle {0} cannot reach its destination in time")]
    InfeasibleVehicle(VehicleId),

    #[error("route of vehicle {0} is not a directed path: {1}")]
    DisconnectedRoute(VehicleId, String),

    #[error("node {node} is not on the route of vehicle {vehicle}")]
    NodeNotOnRoute { vehicle: VehicleId, node: NodeId },

    #[error("nodes {0} and {1} are not connected in the route graph")]
    NotConnected(NodeId, NodeId),

    #[error("route graph is not a tree: {0}")]
    NotATree(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("operation requires an unbounded platoon capacity")]
    CapacityNotSupported,

    #[error("assignment infeasible: {0}")]
    InfeasibleAssignment(String),

    #[error("schedule infeasible: {0}")]
    InfeasibleSchedule(String),

    #[error("simplex iteration limit reached")]
    IterationLimit,

    #[error("search space too large: {0} candidate assignments exceed the limit {1}")]
    SearchSpaceTooLarge(u128, u128),

    #[error("route graph has no loops")]
    NotLoopy,

    #[error("relative time window endpoint {0} is not a multiple of the quantum {1}")]
    QuantumViolated(f64, f64),

    #[error("loop breaking did not converge; bucket pairing is incomplete")]
    LoopBreakIncomplete,

    #[error("no usable path from {0} to {1}")]
    NoPath(NodeId, NodeId),

    #[error("malformed LP text at line {0}: {1}")]
    LpParse(usize, String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
