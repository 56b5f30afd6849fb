//! Grid mini-warehouse for the pick-and-place tree.
//!
//! The agent fetches an item and drops it on the goal cell while a forklift
//! patrols a fixed route. Narrow cells (`n`) can only be crossed without the
//! item, which gives an unconstrained mover a shortcut: drop the item, slip
//! through, and undo the HaveItem progress of the tree.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ActionId, DiscreteEnv, EnvError, EnvSpec, Rng, StateId};
use crate::bt::fixtures::FIG1_ATOMS;
use crate::bt::{AtomTable, Valuation};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum WarehouseAction {
    North,
    South,
    East,
    West,
    Grasp,
    Release,
    Noop,
}

impl WarehouseAction {
    pub const ALL: [WarehouseAction; 7] = [
        WarehouseAction::North,
        WarehouseAction::South,
        WarehouseAction::East,
        WarehouseAction::West,
        WarehouseAction::Grasp,
        WarehouseAction::Release,
        WarehouseAction::Noop,
    ];

    pub fn id(self) -> ActionId {
        self as ActionId
    }

    fn offset(self) -> Option<(isize, isize)> {
        match self {
            WarehouseAction::North => Some((0, -1)),
            WarehouseAction::South => Some((0, 1)),
            WarehouseAction::East => Some((1, 0)),
            WarehouseAction::West => Some((-1, 0)),
            _ => None,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForkliftMode {
    /// Advance one route cell per step, wrapping around.
    #[default]
    Cycle,
    /// Move back, stay or move forward along the route, uniformly at random.
    RandomWalk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarehouseParams {
    /// Rows from top to bottom. `.` floor, `#` shelf, `n` narrow passage,
    /// `G` goal, `I` item spawn, `S` agent start.
    pub map: Vec<String>,
    /// Forklift route as `[x, y]` cells, traversed cyclically.
    pub patrol: Vec<[usize; 2]>,
    pub forklift: ForkliftMode,
    pub horizon: usize,
    pub time_penalty: f64,
    pub bump_penalty: f64,
    pub collision_penalty: f64,
}

impl Default for WarehouseParams {
    fn default() -> Self {
        let mut patrol: Vec<[usize; 2]> = (0..6).map(|x| [x, 3]).collect();
        patrol.extend((1..5).rev().map(|x| [x, 3]));
        WarehouseParams {
            map: ["G...SS", "n####S", "......", "......", ".#.#.#", "I.I.I."]
                .iter()
                .map(|r| r.to_string())
                .collect(),
            patrol,
            forklift: ForkliftMode::Cycle,
            horizon: 100,
            time_penalty: 0.05,
            bump_penalty: 0.05,
            collision_penalty: 1.0,
        }
    }
}

/// Where the item is.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum ItemLoc {
    /// On the floor, at a cell index.
    Floor(usize),
    Held,
}

/// Decoded state: cell indices refer to [`Warehouse::cells`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct WarehouseState {
    pub agent: usize,
    pub item: ItemLoc,
    pub phase: usize,
}

const UNREACHABLE: usize = usize::MAX / 4;

#[derive(Clone, Debug)]
pub struct Warehouse {
    params: WarehouseParams,
    width: usize,
    height: usize,
    cells: Vec<[usize; 2]>,
    narrow: Vec<bool>,
    goal: usize,
    patrol: Vec<usize>,
    /// `move_to[cell][dir]` for dir in N, S, E, W, ignoring narrow rules.
    neighbors: Vec<[Option<usize>; 4]>,
    dist_free: Vec<Vec<usize>>,
    dist_carry: Vec<Vec<usize>>,
    /// Path distance to the nearest cell from which an item on `cell` can be
    /// grasped: `near_item[item_cell][agent_cell]`.
    near_item: Vec<Vec<usize>>,
    valuations: Vec<Valuation>,
    base: Vec<StateId>,
    spec: EnvSpec,
}

fn manhattan(a: [usize; 2], b: [usize; 2]) -> usize {
    a[0].abs_diff(b[0]) + a[1].abs_diff(b[1])
}

fn chebyshev(a: [usize; 2], b: [usize; 2]) -> usize {
    a[0].abs_diff(b[0]).max(a[1].abs_diff(b[1]))
}

impl Warehouse {
    pub fn new(params: WarehouseParams) -> Result<Self, EnvError> {
        let bad = |msg: String| EnvError::InvalidParams(msg);
        let height = params.map.len();
        let width = params.map.first().map(|r| r.chars().count()).unwrap_or(0);
        if height == 0 || width == 0 {
            return Err(bad("empty map".into()));
        }
        let mut grid = vec![vec![None; width]; height];
        let mut cells = Vec::new();
        let mut narrow = Vec::new();
        let (mut goal, mut spawns, mut starts) = (None, Vec::new(), Vec::new());
        for (y, row) in params.map.iter().enumerate() {
            if row.chars().count() != width {
                return Err(bad(format!("map row {y} has a different width")));
            }
            for (x, ch) in row.chars().enumerate() {
                if ch == '#' {
                    continue;
                }
                let id = cells.len();
                match ch {
                    '.' | 'n' => {}
                    'G' => {
                        if goal.replace(id).is_some() {
                            return Err(bad("more than one goal cell".into()));
                        }
                    }
                    'I' => spawns.push(id),
                    'S' => starts.push(id),
                    other => return Err(bad(format!("unknown map symbol `{other}`"))),
                }
                grid[y][x] = Some(id);
                cells.push([x, y]);
                narrow.push(ch == 'n');
            }
        }
        let goal = goal.ok_or_else(|| bad("map has no goal cell".into()))?;
        if spawns.is_empty() || starts.is_empty() {
            return Err(bad("map needs at least one item spawn and one start cell".into()));
        }
        let mut patrol = Vec::new();
        for &[x, y] in &params.patrol {
            match grid.get(y).and_then(|r| r.get(x)).copied().flatten() {
                Some(c) if !narrow[c] => patrol.push(c),
                _ => return Err(bad(format!("patrol cell ({x}, {y}) is not floor"))),
            }
        }
        if patrol.is_empty() {
            return Err(bad("empty patrol route".into()));
        }
        if params.horizon == 0 {
            return Err(bad("horizon must be positive".into()));
        }

        let neighbors: Vec<[Option<usize>; 4]> = cells
            .iter()
            .map(|&[x, y]| {
                let mut out = [None; 4];
                for (k, act) in WarehouseAction::ALL[..4].iter().enumerate() {
                    let (dx, dy) = act.offset().unwrap();
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                        out[k] = grid[ny as usize][nx as usize];
                    }
                }
                out
            })
            .collect();

        let n = cells.len();
        let bfs = |src: usize, carrying: bool| -> Vec<usize> {
            let mut dist = vec![UNREACHABLE; n];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(c) = queue.pop_front() {
                for next in neighbors[c].iter().flatten() {
                    if carrying && narrow[*next] {
                        continue;
                    }
                    if dist[*next] == UNREACHABLE {
                        dist[*next] = dist[c] + 1;
                        queue.push_back(*next);
                    }
                }
            }
            dist
        };
        let dist_free: Vec<Vec<usize>> = (0..n).map(|c| bfs(c, false)).collect();
        let dist_carry: Vec<Vec<usize>> = (0..n).map(|c| bfs(c, true)).collect();
        let near_item = (0..n)
            .map(|item| {
                (0..n)
                    .map(|agent| {
                        (0..n)
                            .filter(|&q| manhattan(cells[q], cells[item]) <= 1)
                            .map(|q| dist_free[agent][q])
                            .min()
                            .unwrap_or(UNREACHABLE)
                    })
                    .collect()
            })
            .collect();

        let mut env = Warehouse {
            width,
            height,
            cells,
            narrow,
            goal,
            patrol,
            neighbors,
            dist_free,
            dist_carry,
            near_item,
            valuations: Vec::new(),
            base: Vec::new(),
            spec: EnvSpec {
                name: "warehouse".into(),
                action_names: ["N", "S", "E", "W", "Grasp", "Release", "Noop"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                state_dimension: 7,
                atoms: AtomTable::new(FIG1_ATOMS).expect("static atom table"),
                rewards: ["move_to_item", "move_to_goal", "grasp", "place"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                horizon: params.horizon,
            },
            params,
        };
        env.valuations = (0..env.num_states())
            .map(|s| env.compute_valuation(&env.decode(s as StateId)))
            .collect();
        for &agent in &starts {
            for &item in &spawns {
                for phase in 0..env.patrol.len() {
                    let id = env.encode(&WarehouseState { agent, item: ItemLoc::Floor(item), phase });
                    if env.valuations[id as usize] & 1 == 1 {
                        env.base.push(id);
                    }
                }
            }
        }
        if env.base.is_empty() {
            return Err(bad("no safe start configuration".into()));
        }
        Ok(env)
    }

    pub fn params(&self) -> &WarehouseParams {
        &self.params
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Passable cells as `[x, y]`.
    pub fn cells(&self) -> &[[usize; 2]] {
        &self.cells
    }

    pub fn cell_at(&self, x: usize, y: usize) -> Option<usize> {
        self.cells.iter().position(|&c| c == [x, y])
    }

    pub fn goal_cell(&self) -> usize {
        self.goal
    }

    pub fn forklift_cell(&self, phase: usize) -> usize {
        self.patrol[phase]
    }

    fn item_slots(&self) -> usize {
        self.cells.len() + 1
    }

    pub fn encode(&self, s: &WarehouseState) -> StateId {
        let item = match s.item {
            ItemLoc::Floor(c) => c,
            ItemLoc::Held => self.cells.len(),
        };
        ((s.agent * self.item_slots() + item) * self.patrol.len() + s.phase) as StateId
    }

    pub fn decode(&self, id: StateId) -> WarehouseState {
        let mut i = id as usize;
        let phase = i % self.patrol.len();
        i /= self.patrol.len();
        let item = i % self.item_slots();
        let agent = i / self.item_slots();
        let item = if item == self.cells.len() { ItemLoc::Held } else { ItemLoc::Floor(item) };
        WarehouseState { agent, item, phase }
    }

    fn compute_valuation(&self, s: &WarehouseState) -> Valuation {
        let agent = self.cells[s.agent];
        let safe = chebyshev(agent, self.cells[self.patrol[s.phase]]) >= 2;
        let placed = s.item == ItemLoc::Floor(self.goal);
        let held = s.item == ItemLoc::Held;
        let near = match s.item {
            ItemLoc::Floor(c) => !placed && manhattan(agent, self.cells[c]) <= 1,
            ItemLoc::Held => false,
        };
        let at_goal = s.agent == self.goal;
        safe as u64 | (placed as u64) << 1 | (held as u64) << 2 | (near as u64) << 3 | (at_goal as u64) << 4
    }

    /// Agent part of a transition; returns the new state with the forklift
    /// not yet moved, and whether a move was blocked.
    fn agent_step(&self, s: &WarehouseState, a: WarehouseAction) -> (WarehouseState, bool) {
        let mut next = *s;
        let held = s.item == ItemLoc::Held;
        match a {
            WarehouseAction::Grasp => {
                if let ItemLoc::Floor(c) = s.item {
                    if manhattan(self.cells[s.agent], self.cells[c]) <= 1 {
                        next.item = ItemLoc::Held;
                    }
                }
            }
            WarehouseAction::Release => {
                if held {
                    next.item = ItemLoc::Floor(s.agent);
                }
            }
            WarehouseAction::Noop => {}
            dir => {
                let k = dir as usize;
                match self.neighbors[s.agent][k] {
                    Some(c) if !(held && self.narrow[c]) => next.agent = c,
                    _ => return (next, true),
                }
            }
        }
        (next, false)
    }

    fn goal_distance(&self, s: &WarehouseState) -> usize {
        if s.item == ItemLoc::Held {
            self.dist_carry[s.agent][self.goal]
        } else {
            self.dist_free[s.agent][self.goal]
        }
    }

    fn item_distance(&self, s: &WarehouseState) -> usize {
        match s.item {
            ItemLoc::Floor(c) => self.near_item[c][s.agent],
            ItemLoc::Held => 0,
        }
    }

    /// Renders a state as an ASCII map (`A` agent, `*` item, `F` forklift).
    pub fn render(&self, id: StateId) -> String {
        let s = self.decode(id);
        let mut rows: Vec<Vec<char>> =
            self.params.map.iter().map(|r| r.chars().map(|c| if c == '#' { '#' } else { '.' }).collect()).collect();
        let put = |rows: &mut Vec<Vec<char>>, c: usize, ch: char| {
            let [x, y] = self.cells[c];
            rows[y][x] = ch;
        };
        put(&mut rows, self.goal, 'G');
        if let ItemLoc::Floor(c) = s.item {
            put(&mut rows, c, '*');
        }
        put(&mut rows, self.patrol[s.phase], 'F');
        put(&mut rows, s.agent, if s.item == ItemLoc::Held { '@' } else { 'A' });
        rows.into_iter().map(|r| r.into_iter().collect::<String>() + "\n").collect()
    }
}

impl DiscreteEnv for Warehouse {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn num_states(&self) -> usize {
        self.cells.len() * self.item_slots() * self.patrol.len()
    }

    fn successor(&self, id: StateId, a: ActionId, rng: &mut Rng) -> StateId {
        if self.is_absorbing(id) {
            return id;
        }
        let s = self.decode(id);
        let (mut next, _) = self.agent_step(&s, WarehouseAction::ALL[a]);
        let len = self.patrol.len();
        next.phase = match self.params.forklift {
            ForkliftMode::Cycle => (s.phase + 1) % len,
            ForkliftMode::RandomWalk => (s.phase + len + rng.gen_range(0..3) - 1) % len,
        };
        self.encode(&next)
    }

    fn is_deterministic(&self) -> bool {
        self.params.forklift == ForkliftMode::Cycle
    }

    fn valuation(&self, s: StateId) -> Valuation {
        self.valuations[s as usize]
    }

    /// `(agent x, agent y, item x, item y, held, forklift x, forklift y)`;
    /// a held item reports the agent's position.
    fn state_vector(&self, id: StateId) -> Vec<f64> {
        let s = self.decode(id);
        let agent = self.cells[s.agent];
        let item = match s.item {
            ItemLoc::Floor(c) => self.cells[c],
            ItemLoc::Held => agent,
        };
        let fork = self.cells[self.patrol[s.phase]];
        [agent[0], agent[1], item[0], item[1], (s.item == ItemLoc::Held) as usize, fork[0], fork[1]]
            .iter()
            .map(|&x| x as f64)
            .collect()
    }

    fn reward(&self, reward: usize, id: StateId, a: ActionId, next_id: StateId) -> f64 {
        let (s, next) = (self.decode(id), self.decode(next_id));
        let prm = &self.params;
        let bumped = a < 4 && !self.is_absorbing(id) && s.agent == next.agent;
        let collided = self.valuations[next_id as usize] & 1 == 0 && self.valuations[id as usize] & 1 == 1;
        let mut r = -prm.time_penalty
            - if bumped { prm.bump_penalty } else { 0.0 }
            - if collided { prm.collision_penalty } else { 0.0 };
        let delta = |a: usize, b: usize| a.min(UNREACHABLE) as f64 - b.min(UNREACHABLE) as f64;
        r += match reward {
            0 => delta(self.item_distance(&s), self.item_distance(&next)),
            1 => delta(self.goal_distance(&s), self.goal_distance(&next)),
            2 => (s.item != ItemLoc::Held && next.item == ItemLoc::Held) as u8 as f64,
            _ => {
                let placed = |v: Valuation| v & 2 != 0;
                (placed(self.valuations[next_id as usize]) && !placed(self.valuations[id as usize]))
                    as u8 as f64
            }
        };
        r
    }

    fn is_absorbing(&self, s: StateId) -> bool {
        let v = self.valuations[s as usize];
        v & 1 == 0 || v & 2 != 0
    }

    fn base_states(&self) -> &[StateId] {
        &self.base
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::WarehouseAction::*;
    use super::*;

    fn env() -> Warehouse {
        Warehouse::new(WarehouseParams::default()).unwrap()
    }

    fn state(env: &Warehouse, agent: [usize; 2], item: Option<[usize; 2]>, phase: usize) -> StateId {
        let agent = env.cell_at(agent[0], agent[1]).unwrap();
        let item = match item {
            Some([x, y]) => ItemLoc::Floor(env.cell_at(x, y).unwrap()),
            None => ItemLoc::Held,
        };
        env.encode(&WarehouseState { agent, item, phase })
    }

    #[test]
    fn encoding_round_trips() {
        let env = env();
        for id in 0..env.num_states() as StateId {
            assert_eq!(env.encode(&env.decode(id)), id);
        }
    }

    #[test]
    fn noop_moves_only_the_forklift() {
        let env = env();
        let mut rng = Rng::seed_from_u64(0);
        let s = state(&env, [5, 0], Some([4, 5]), 0);
        let next = env.decode(env.successor(s, Noop.id(), &mut rng));
        let before = env.decode(s);
        assert_eq!((next.agent, next.item), (before.agent, before.item));
        assert_eq!(next.phase, 1);
    }

    #[test]
    fn grasp_out_of_reach_does_nothing() {
        let env = env();
        let mut rng = Rng::seed_from_u64(0);
        let s = state(&env, [5, 0], Some([4, 5]), 0);
        let a = env.successor(s, Grasp.id(), &mut rng);
        let b = env.successor(s, Noop.id(), &mut rng);
        assert_eq!(a, b);
    }

    #[test]
    fn narrow_cell_blocks_only_when_carrying() {
        let env = env();
        let mut rng = Rng::seed_from_u64(0);
        let free = state(&env, [0, 2], Some([2, 5]), 5);
        let carry = state(&env, [0, 2], None, 5);
        let up = |s| env.decode(env.successor(s, North.id(), &mut rng.clone())).agent;
        assert_eq!(env.cells()[up(free)], [0, 1]);
        assert_eq!(env.cells()[up(carry)], [0, 2]);
        let _ = &mut rng;
    }

    #[test]
    fn scripted_pick_and_place() {
        let env = env();
        let mut rng = Rng::seed_from_u64(0);
        let mut s = state(&env, [5, 0], Some([4, 5]), 5);
        let mut script = vec![South, South, South, West, South, South, Grasp];
        script.extend([Noop; 5]);
        script.extend([North, North, North, East, North, North]);
        script.extend([West; 5]);
        script.push(Release);
        for (t, a) in script.iter().enumerate() {
            assert!(!env.is_absorbing(s), "absorbed before step {t}");
            s = env.successor(s, a.id(), &mut rng);
            assert_eq!(env.valuation(s) & 1, 1, "unsafe after step {t}\n{}", env.render(s));
        }
        let names = env.spec().atoms.clone();
        let v = env.valuation(s);
        assert!(v >> names.lookup("ItemPlaced").unwrap() & 1 == 1);
        assert!(env.is_absorbing(s));
    }

    #[test]
    fn condition_flags() {
        let env = env();
        let atoms = env.spec().atoms.clone();
        let has = |s: StateId, name: &str| env.valuation(s) >> atoms.lookup(name).unwrap() & 1 == 1;
        let s = state(&env, [4, 4], Some([4, 5]), 0);
        assert!(has(s, "NearItem") && has(s, "Safe") && !has(s, "HaveItem"));
        // forklift at (4, 3) is adjacent
        let s = state(&env, [4, 4], Some([4, 5]), 4);
        assert!(!has(s, "Safe") && env.is_absorbing(s));
        let s = state(&env, [0, 0], None, 0);
        assert!(has(s, "AtGoal") && has(s, "HaveItem") && !has(s, "NearItem"));
    }

    #[test]
    fn progress_rewards() {
        let env = env();
        let mut rng = Rng::seed_from_u64(0);
        let prm = env.params().clone();
        let s = state(&env, [5, 0], None, 0);
        let next = env.successor(s, West.id(), &mut rng);
        let r = env.reward(1, s, West.id(), next);
        assert!((r - (1.0 - prm.time_penalty)).abs() < 1e-12);
        // bumping into a shelf
        let s = state(&env, [5, 0], None, 0);
        let next = env.successor(s, North.id(), &mut rng);
        let r = env.reward(1, s, North.id(), next);
        assert!((r + prm.time_penalty + prm.bump_penalty).abs() < 1e-12);
        // dropping next to the narrow passage shortens the free path to the goal
        let s = state(&env, [0, 2], None, 5);
        let next = env.successor(s, Release.id(), &mut rng);
        assert!(env.reward(1, s, Release.id(), next) > 5.0);
    }

    #[test]
    fn random_walk_stays_on_route() {
        let prm = WarehouseParams { forklift: ForkliftMode::RandomWalk, ..Default::default() };
        let env = Warehouse::new(prm).unwrap();
        assert!(!env.is_deterministic());
        let mut rng = Rng::seed_from_u64(3);
        let s = state(&env, [5, 0], Some([4, 5]), 0);
        let mut phases = std::collections::BTreeSet::new();
        for _ in 0..100 {
            phases.insert(env.decode(env.successor(s, Noop.id(), &mut rng)).phase);
        }
        assert_eq!(phases.into_iter().collect::<Vec<_>>(), vec![0, 1, 9]);
    }

    #[test]
    fn bad_maps_rejected() {
        let mut prm = WarehouseParams::default();
        prm.map[0] = "G..".into();
        assert!(Warehouse::new(prm).is_err());
        let prm = WarehouseParams { patrol: vec![[1, 1]], ..Default::default() };
        assert!(Warehouse::new(prm).is_err());
    }
}
