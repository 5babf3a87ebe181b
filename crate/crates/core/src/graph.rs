//! The junction graph induced by the no-U-turn corridor constraint.
//!
//! Once the agent enters a corridor it can only keep its heading until the
//! corridor ends, where a 90° turn or going straight is allowed; 180°
//! turns are forbidden everywhere. Planning therefore happens on a small
//! graph whose nodes are junction cells (turning points, corridor ends),
//! the agent start, and inserted waypoint cells, with edges the straight
//! free-cell segments between them. Each edge carries the ordered list of
//! plots measured while traversing it (the plots horizontally adjacent to
//! its cells).

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::field::{Dir, FieldGrid, PlotId, Pos};

/// Index into the graph's node table. Nodes are numbered in row-major
/// position order, so sequences of node ids compare lexicographically in a
/// platform-independent way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(usize);

#[derive(Debug, Clone)]
pub struct Edge {
    endpoints: (NodeId, NodeId),
    len: u32,
    /// Cells from `endpoints.0` to `endpoints.1`, inclusive.
    cells: Vec<Pos>,
    /// Plots beside each cell, parallel to `cells` (West then East).
    cell_plots: Vec<Vec<PlotId>>,
}

impl Edge {
    /// Length in cells; edges always join distinct nodes, so never zero.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn cells(&self) -> &[Pos] {
        &self.cells
    }

    /// All plots measured while traversing this edge, in cell order.
    pub fn plots(&self) -> impl Iterator<Item = PlotId> + '_ {
        self.cell_plots.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, Copy)]
struct Adjacent {
    edge: EdgeId,
    other: NodeId,
    dir: Dir,
}

/// One step of the covering search: where the agent is, how it got there,
/// and which waypoints its path has visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SearchState {
    pub node: NodeId,
    /// Incoming direction; `None` only at the start of a path.
    pub heading: Option<Dir>,
    /// Bitset over the graph's waypoint list.
    pub visited_mask: u64,
    pub cost_so_far: u32,
}

/// A waypoint-covering path: node sequence from the start, its cost in
/// cells, and the de-duplicated set of plots measured along it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePath {
    pub nodes: Vec<NodeId>,
    pub cost: u32,
    pub mobile_plots: BTreeSet<PlotId>,
}

/// Hard cap on search-state expansions during path enumeration.
pub const DEFAULT_STATE_CAP: usize = 5_000_000;

#[derive(Debug, Clone)]
pub struct CorridorGraph {
    node_pos: Vec<Pos>,
    node_at: BTreeMap<Pos, NodeId>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Adjacent>>,
    edge_by_pair: BTreeMap<(NodeId, NodeId), EdgeId>,
    start: NodeId,
    /// Unique waypoint cells, ascending; bit `i` of a visited mask refers
    /// to `waypoints[i]`.
    waypoints: Vec<NodeId>,
}

impl CorridorGraph {
    pub fn node_count(&self) -> usize {
        self.node_pos.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_pos(&self, id: NodeId) -> Pos {
        self.node_pos[id.0]
    }

    pub fn node_at(&self, pos: Pos) -> Option<NodeId> {
        self.node_at.get(&pos).copied()
    }

    pub fn start(&self) -> NodeId {
        self.start
    }

    pub fn waypoints(&self) -> &[NodeId] {
        &self.waypoints
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    /// The edge joining two adjacent nodes, and whether it runs forward
    /// (from `a` to `b`) in storage order.
    pub fn edge_between(&self, a: NodeId, b: NodeId) -> Option<(EdgeId, bool)> {
        if let Some(&e) = self.edge_by_pair.get(&(a, b)) {
            return Some((e, self.edges[e.0].endpoints.0 == a));
        }
        None
    }

    /// Expands a node path to the full cell sequence walked by the agent.
    pub fn path_cells(&self, path: &CandidatePath) -> Vec<Pos> {
        let mut cells = vec![self.node_pos(path.nodes[0])];
        for walk in self.path_edge_walks(path) {
            cells.extend(&walk[1..]);
        }
        cells
    }

    /// The cell run of each traversed edge, oriented in travel direction
    /// and inclusive of both endpoints (consecutive walks share the
    /// junction cell).
    pub fn path_edge_walks(&self, path: &CandidatePath) -> Vec<Vec<Pos>> {
        path.nodes
            .windows(2)
            .map(|w| {
                let (eid, forward) = self
                    .edge_between(w[0], w[1])
                    .expect("consecutive path nodes are adjacent");
                let e = &self.edges[eid.0];
                if forward {
                    e.cells.clone()
                } else {
                    e.cells.iter().rev().copied().collect()
                }
            })
            .collect()
    }

    fn full_mask(&self) -> u64 {
        if self.waypoints.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.waypoints.len()) - 1
        }
    }

    fn initial_mask(&self) -> u64 {
        let mut mask = 0;
        for (i, w) in self.waypoints.iter().enumerate() {
            if *w == self.start {
                mask |= 1 << i;
            }
        }
        mask
    }

    fn waypoint_bit(&self, node: NodeId) -> u64 {
        let mut bit = 0;
        for (i, w) in self.waypoints.iter().enumerate() {
            if *w == node {
                bit |= 1 << i;
            }
        }
        bit
    }

    fn remaining_positions(&self, mask: u64) -> Vec<Pos> {
        self.waypoints
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) == 0)
            .map(|(_, w)| self.node_pos(*w))
            .collect()
    }
}

/// Whether a free cell is a junction: a turning point, corridor end, or
/// crossing — anything but a straight pass-through cell.
fn is_junction(grid: &FieldGrid, pos: Pos) -> bool {
    let free: Vec<Dir> = Dir::ALL
        .into_iter()
        .filter(|d| grid.free_neighbor(pos, *d).is_some())
        .collect();
    match free.len() {
        2 => free[0] != free[1].opposite(),
        _ => true,
    }
}

/// Builds the corridor graph for a grid, inserting the agent start and the
/// waypoint cells as nodes (splitting the edges they fall inside).
pub fn build_graph(grid: &FieldGrid, start: Pos, waypoint_cells: &[Pos]) -> Result<CorridorGraph> {
    if !grid.is_free(start) {
        return Err(Error::invalid(format!(
            "start {start} is not a free cell"
        )));
    }
    for w in waypoint_cells {
        if !grid.is_free(*w) {
            return Err(Error::invalid(format!(
                "waypoint cell {w} is not a free cell"
            )));
        }
    }
    let waypoint_set: BTreeSet<Pos> = waypoint_cells.iter().copied().collect();
    if waypoint_set.len() > 64 {
        return Err(Error::Resource(format!(
            "{} waypoints exceed the 64-waypoint search limit",
            waypoint_set.len()
        )));
    }

    let mut node_cells: BTreeSet<Pos> = grid
        .free_cells()
        .filter(|p| is_junction(grid, *p))
        .collect();
    node_cells.insert(start);
    node_cells.extend(waypoint_set.iter().copied());

    let node_pos: Vec<Pos> = node_cells.iter().copied().collect();
    let node_at: BTreeMap<Pos, NodeId> = node_pos
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, NodeId(i)))
        .collect();

    let mut edges: Vec<Edge> = Vec::new();
    let mut edge_by_pair: BTreeMap<(NodeId, NodeId), EdgeId> = BTreeMap::new();
    let mut adjacency: Vec<Vec<Adjacent>> = vec![Vec::new(); node_pos.len()];

    for (&pos, &id) in &node_at {
        for dir in Dir::ALL {
            let Some(first) = grid.free_neighbor(pos, dir) else {
                continue;
            };
            // walk the straight segment to the next node
            let mut cells = vec![pos, first];
            let mut cur = first;
            while !node_at.contains_key(&cur) {
                let next = grid
                    .free_neighbor(cur, dir)
                    .expect("non-junction cells continue straight");
                cells.push(next);
                cur = next;
            }
            let other = node_at[&cur];
            if edge_by_pair.contains_key(&(id, other)) {
                continue; // discovered from the other end already
            }
            let cell_plots: Vec<Vec<PlotId>> =
                cells.iter().map(|c| grid.plots_beside(*c)).collect();
            let eid = EdgeId(edges.len());
            edges.push(Edge {
                endpoints: (id, other),
                len: (cells.len() - 1) as u32,
                cells: cells.clone(),
                cell_plots,
            });
            edge_by_pair.insert((id, other), eid);
            edge_by_pair.insert((other, id), eid);
            adjacency[id.0].push(Adjacent {
                edge: eid,
                other,
                dir,
            });
            adjacency[other.0].push(Adjacent {
                edge: eid,
                other: id,
                dir: dir.opposite(),
            });
        }
    }
    for adj in adjacency.iter_mut() {
        adj.sort_by_key(|a| a.other);
    }

    Ok(CorridorGraph {
        start: node_at[&start],
        waypoints: waypoint_set.iter().map(|p| node_at[p]).collect(),
        node_pos,
        node_at,
        edges,
        adjacency,
        edge_by_pair,
    })
}

/// Lower bound on the cost to visit every remaining waypoint from `pos`:
/// the bounding-box spans of `{pos} ∪ remaining` along both axes, plus the
/// distance from `pos` to the nearer box edge along each axis.
pub fn heuristic_cost_to_go(pos: Pos, remaining: &[Pos]) -> u32 {
    if remaining.is_empty() {
        return 0;
    }
    let (mut rmin, mut rmax) = (pos.row, pos.row);
    let (mut cmin, mut cmax) = (pos.col, pos.col);
    for w in remaining {
        rmin = rmin.min(w.row);
        rmax = rmax.max(w.row);
        cmin = cmin.min(w.col);
        cmax = cmax.max(w.col);
    }
    let row_span = rmax - rmin;
    let col_span = cmax - cmin;
    let row_near = (pos.row - rmin).min(rmax - pos.row);
    let col_near = (pos.col - cmin).min(cmax - pos.col);
    (row_span + col_span + row_near + col_near) as u32
}

/// Exact minimum cost over all no-U-turn paths from the start that visit
/// every waypoint, by uniform-cost search over [`SearchState`] space.
pub fn shortest_cover_cost(graph: &CorridorGraph) -> Result<u32> {
    let full = graph.full_mask();
    let init_mask = graph.initial_mask();
    if init_mask == full {
        return Ok(0);
    }
    type QueueEntry = std::cmp::Reverse<(u32, usize, NodeId, Option<Dir>, u64)>;
    let mut dist: HashMap<(NodeId, Option<Dir>, u64), u32> = HashMap::new();
    let mut heap: BinaryHeap<QueueEntry> = BinaryHeap::new();
    let mut counter = 0usize;
    dist.insert((graph.start, None, init_mask), 0);
    heap.push(std::cmp::Reverse((0, counter, graph.start, None, init_mask)));
    while let Some(std::cmp::Reverse((cost, _, node, heading, mask))) = heap.pop() {
        if mask == full {
            return Ok(cost);
        }
        if dist.get(&(node, heading, mask)).is_some_and(|d| *d < cost) {
            continue;
        }
        for adj in &graph.adjacency[node.0] {
            if heading.is_some_and(|h| adj.dir == h.opposite()) {
                continue;
            }
            let ncost = cost + graph.edges[adj.edge.0].len;
            let nmask = mask | graph.waypoint_bit(adj.other);
            let key = (adj.other, Some(adj.dir), nmask);
            if dist.get(&key).is_none_or(|d| ncost < *d) {
                dist.insert(key, ncost);
                counter += 1;
                heap.push(std::cmp::Reverse((ncost, counter, adj.other, Some(adj.dir), nmask)));
            }
        }
    }
    // name a waypoint the search could not reach
    let mut best_mask = init_mask;
    for (_, _, mask) in dist.keys() {
        best_mask |= mask;
    }
    let missing = graph
        .waypoints
        .iter()
        .enumerate()
        .find(|(i, _)| best_mask & (1 << i) == 0)
        .map(|(_, w)| graph.node_pos(*w));
    Err(Error::Planning(match missing {
        Some(pos) => format!("waypoint {pos} is unreachable from the start"),
        None => "waypoints cannot be covered by a single path".into(),
    }))
}

/// Exactly the set of no-U-turn waypoint-covering paths from the start
/// with cost at most `budget` (inclusive), in lexicographic node-sequence
/// order. Paths may keep extending after covering the last waypoint, as
/// long as they stay within budget.
pub fn enumerate_feasible(graph: &CorridorGraph, budget: u32) -> Result<Vec<CandidatePath>> {
    Ok(enumerate_feasible_counted(graph, budget)?.0)
}

/// [`enumerate_feasible`] plus the number of search states expanded, for
/// instrumentation (state counts grow monotonically with the budget).
pub fn enumerate_feasible_counted(
    graph: &CorridorGraph,
    budget: u32,
) -> Result<(Vec<CandidatePath>, usize)> {
    enumerate_feasible_impl(graph, budget, true, DEFAULT_STATE_CAP)
}

pub(crate) fn enumerate_feasible_impl(
    graph: &CorridorGraph,
    budget: u32,
    use_heuristic: bool,
    state_cap: usize,
) -> Result<(Vec<CandidatePath>, usize)> {
    struct Frame {
        node: NodeId,
        heading: Option<Dir>,
        mask: u64,
        cost: u32,
        next_adj: usize,
    }

    let full = graph.full_mask();
    let mut results: Vec<CandidatePath> = Vec::new();
    let mut path: Vec<NodeId> = vec![graph.start];
    let mut stack = vec![Frame {
        node: graph.start,
        heading: None,
        mask: graph.initial_mask(),
        cost: 0,
        next_adj: 0,
    }];
    let mut states = 1usize;
    if graph.initial_mask() == full {
        results.push(make_path(graph, &path, 0));
    }

    while let Some(frame) = stack.last_mut() {
        let adjacency = &graph.adjacency[frame.node.0];
        if frame.next_adj >= adjacency.len() {
            stack.pop();
            path.pop();
            continue;
        }
        let adj = adjacency[frame.next_adj];
        frame.next_adj += 1;
        if frame.heading.is_some_and(|h| adj.dir == h.opposite()) {
            continue;
        }
        let ncost = frame.cost + graph.edges[adj.edge.0].len;
        if ncost > budget {
            continue;
        }
        let nmask = frame.mask | graph.waypoint_bit(adj.other);
        if use_heuristic && nmask != full {
            let h = heuristic_cost_to_go(
                graph.node_pos(adj.other),
                &graph.remaining_positions(nmask),
            );
            if ncost + h > budget {
                continue;
            }
        }
        states += 1;
        if states > state_cap {
            return Err(Error::Resource(format!(
                "path enumeration exceeded {state_cap} states; reduce the budget slack"
            )));
        }
        path.push(adj.other);
        if nmask == full {
            results.push(make_path(graph, &path, ncost));
        }
        stack.push(Frame {
            node: adj.other,
            heading: Some(adj.dir),
            mask: nmask,
            cost: ncost,
            next_adj: 0,
        });
    }
    Ok((results, states))
}

fn make_path(graph: &CorridorGraph, nodes: &[NodeId], cost: u32) -> CandidatePath {
    let path = CandidatePath {
        nodes: nodes.to_vec(),
        cost,
        mobile_plots: BTreeSet::new(),
    };
    let mobile_plots = mobile_plots_along(graph, &path);
    CandidatePath {
        mobile_plots,
        ..path
    }
}

/// The de-duplicated set of plots measured along a path: the union of its
/// edges' plot lists.
pub fn mobile_plots_along(graph: &CorridorGraph, path: &CandidatePath) -> BTreeSet<PlotId> {
    let mut plots = BTreeSet::new();
    for w in path.nodes.windows(2) {
        let (eid, _) = graph
            .edge_between(w[0], w[1])
            .expect("consecutive path nodes are adjacent");
        plots.extend(graph.edges[eid.0].plots());
    }
    plots
}
