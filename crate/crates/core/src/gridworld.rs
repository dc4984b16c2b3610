//! Deterministic discrete gridworlds.
//!
//! Maps are plain ASCII documents over the alphabet `#` (wall), `.` (floor),
//! `D` (door, closed at episode start), `S` (start) and `G` (goal). The agent
//! has a position and a heading; doors are part of the state as a bitmask so
//! the dynamics stay Markov.
//!
//! Besides the environment itself this module carries the exact oracles used
//! throughout the test suite: dense state enumeration, the uniform-random
//! policy matrix and breadth-first geodesic distances.

use std::collections::VecDeque;
use std::fmt;
use std::hash::Hash;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of enumerable states.
pub const DEFAULT_STATE_CAP: usize = 1 << 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("empty map")]
    Empty,
    #[error("row {row} has width {found}, expected {expected}")]
    NotRectangular {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown character {ch:?} at row {row}, column {col}")]
    UnknownCell { row: usize, col: usize, ch: char },
    #[error("no start cell")]
    NoStart,
    #[error("multiple start cells (second at row {row}, column {col})")]
    MultipleStarts { row: usize, col: usize },
    #[error("multiple goal cells (second at row {row}, column {col})")]
    MultipleGoals { row: usize, col: usize },
    #[error("boundary cell at row {row}, column {col} is not a wall")]
    OpenBoundary { row: usize, col: usize },
    #[error("cell at row {row}, column {col} is unreachable from the start")]
    Unreachable { row: usize, col: usize },
    #[error("too many doors ({0}); at most 32 are supported")]
    TooManyDoors(usize),
    #[error("failed to read map: {0}")]
    Io(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateSpaceError {
    #[error("state space has {size} states, exceeding the cap of {cap}")]
    CapExceeded { size: u128, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Floor,
    Door,
    Start,
    Goal,
}

impl Cell {
    fn from_char(ch: char) -> Option<Self> {
        match ch {
            '#' => Some(Cell::Wall),
            '.' => Some(Cell::Floor),
            'D' => Some(Cell::Door),
            'S' => Some(Cell::Start),
            'G' => Some(Cell::Goal),
            _ => None,
        }
    }

    fn to_char(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Floor => '.',
            Cell::Door => 'D',
            Cell::Start => 'S',
            Cell::Goal => 'G',
        }
    }

    pub fn is_passable(self) -> bool {
        self != Cell::Wall
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Self::ALL[i % 4]
    }

    pub fn left(self) -> Heading {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Heading {
        Self::from_index(self.index() + 1)
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Heading::N => "N",
            Heading::E => "E",
            Heading::S => "S",
            Heading::W => "W",
        };
        f.write_str(c)
    }
}

impl FromStr for Heading {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "N" | "n" => Ok(Heading::N),
            "E" | "e" => Ok(Heading::E),
            "S" | "s" => Ok(Heading::S),
            "W" | "w" => Ok(Heading::W),
            other => Err(format!("unknown heading {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Toggle,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Forward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Toggle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

/// Which actions the uniform-random reference policy draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    /// All four actions, including `Toggle`.
    Full,
    /// `Forward`, `TurnLeft` and `TurnRight` only.
    Navigation,
}

impl ActionMode {
    pub fn actions(self) -> &'static [Action] {
        match self {
            ActionMode::Full => &Action::ALL,
            ActionMode::Navigation => &Action::ALL[..3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridState {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
    pub door_open: u32,
}

impl GridState {
    pub fn new(x: usize, y: usize, heading: Heading) -> Self {
        GridState {
            x,
            y,
            heading,
            door_open: 0,
        }
    }

    pub fn with_doors(mut self, door_open: u32) -> Self {
        self.door_open = door_open;
        self
    }
}

impl fmt::Display for GridState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.heading)?;
        if self.door_open != 0 {
            write!(f, ",{:b}", self.door_open)?;
        }
        Ok(())
    }
}

impl FromStr for GridState {
    type Err = String;

    /// Parses `x,y,heading[,doormask]`, the mask given in binary.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 && parts.len() != 4 {
            return Err(format!("expected x,y,heading[,doors], got {s:?}"));
        }
        let x = parts[0].parse().map_err(|e| format!("bad x: {e}"))?;
        let y = parts[1].parse().map_err(|e| format!("bad y: {e}"))?;
        let heading = parts[2].parse()?;
        let door_open = match parts.get(3) {
            Some(m) => u32::from_str_radix(m, 2).map_err(|e| format!("bad door mask: {e}"))?,
            None => 0,
        };
        Ok(GridState {
            x,
            y,
            heading,
            door_open,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourcePolicy {
    Random,
    GoalConditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub done: bool,
    pub source_policy: SourcePolicy,
}

/// Output of a single deterministic step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    door_positions: Vec<(usize, usize)>,
    start: (usize, usize),
    goal: Option<(usize, usize)>,
    /// Row-major rank of each passable cell, `usize::MAX` for walls.
    cell_rank: Vec<usize>,
    passable: Vec<(usize, usize)>,
}

impl GridMap {
    pub fn parse(text: &str) -> Result<GridMap, MapError> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(MapError::Empty);
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        let mut start = None;
        let mut goal = None;
        let mut door_positions = Vec::new();
        for (row, line) in rows.iter().enumerate() {
            let found = line.chars().count();
            if found != width {
                return Err(MapError::NotRectangular {
                    row,
                    expected: width,
                    found,
                });
            }
            for (col, ch) in line.chars().enumerate() {
                let cell = Cell::from_char(ch).ok_or(MapError::UnknownCell { row, col, ch })?;
                match cell {
                    Cell::Start if start.is_some() => {
                        return Err(MapError::MultipleStarts { row, col })
                    }
                    Cell::Start => start = Some((col, row)),
                    Cell::Goal if goal.is_some() => {
                        return Err(MapError::MultipleGoals { row, col })
                    }
                    Cell::Goal => goal = Some((col, row)),
                    Cell::Door => door_positions.push((col, row)),
                    _ => {}
                }
                cells.push(cell);
            }
        }
        let start = start.ok_or(MapError::NoStart)?;
        if door_positions.len() > 32 {
            return Err(MapError::TooManyDoors(door_positions.len()));
        }
        for row in 0..height {
            for col in 0..width {
                let boundary = row == 0 || col == 0 || row + 1 == height || col + 1 == width;
                if boundary && cells[row * width + col] != Cell::Wall {
                    return Err(MapError::OpenBoundary { row, col });
                }
            }
        }

        // Reachability with every door open.
        let mut seen = vec![false; cells.len()];
        let mut queue = VecDeque::from([start]);
        seen[start.1 * width + start.0] = true;
        while let Some((x, y)) = queue.pop_front() {
            for h in Heading::ALL {
                let (dx, dy) = h.delta();
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx as usize >= width || ny as usize >= height {
                    continue;
                }
                let idx = ny as usize * width + nx as usize;
                if cells[idx].is_passable() && !seen[idx] {
                    seen[idx] = true;
                    queue.push_back((nx as usize, ny as usize));
                }
            }
        }
        let mut cell_rank = vec![usize::MAX; cells.len()];
        let mut passable = Vec::new();
        for (idx, cell) in cells.iter().enumerate() {
            if cell.is_passable() {
                if !seen[idx] {
                    return Err(MapError::Unreachable {
                        row: idx / width,
                        col: idx % width,
                    });
                }
                cell_rank[idx] = passable.len();
                passable.push((idx % width, idx / width));
            }
        }

        Ok(GridMap {
            width,
            height,
            cells,
            door_positions,
            start,
            goal,
            cell_rank,
            passable,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GridMap, MapError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| MapError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        if x >= self.width || y >= self.height {
            return Cell::Wall;
        }
        self.cells[y * self.width + x]
    }

    pub fn door_positions(&self) -> &[(usize, usize)] {
        &self.door_positions
    }

    pub fn num_doors(&self) -> usize {
        self.door_positions.len()
    }

    /// Passable cells in row-major order.
    pub fn passable_cells(&self) -> &[(usize, usize)] {
        &self.passable
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal(&self) -> Option<(usize, usize)> {
        self.goal
    }

    /// Spawn state: start cell, facing east, every door closed.
    pub fn start_state(&self) -> GridState {
        GridState::new(self.start.0, self.start.1, Heading::E)
    }

    /// Episode step limit: 100 for door-free maps, 40 per room otherwise.
    pub fn episode_limit(&self) -> usize {
        if self.door_positions.is_empty() {
            100
        } else {
            40 * (self.door_positions.len() + 1)
        }
    }

    pub fn all_doors_open(&self) -> u32 {
        if self.door_positions.is_empty() {
            0
        } else {
            u32::MAX >> (32 - self.door_positions.len())
        }
    }

    fn door_index(&self, x: usize, y: usize) -> Option<usize> {
        self.door_positions.iter().position(|&p| p == (x, y))
    }

    fn ahead(&self, state: &GridState) -> Option<(usize, usize)> {
        let (dx, dy) = state.heading.delta();
        let nx = state.x as isize + dx;
        let ny = state.y as isize + dy;
        if nx < 0 || ny < 0 || nx as usize >= self.width || ny as usize >= self.height {
            return None;
        }
        Some((nx as usize, ny as usize))
    }

    pub fn is_valid(&self, state: &GridState) -> bool {
        self.cell(state.x, state.y).is_passable()
            && (state.door_open as u64) < (1u64 << self.door_positions.len())
    }

    /// Deterministic dynamics. Bumping into a wall or a closed door and
    /// toggling anything but a door are no-ops. Reward is always zero.
    pub fn step(&self, state: &GridState, action: Action) -> Step<GridState> {
        let mut next = *state;
        match action {
            Action::Forward => {
                if let Some((nx, ny)) = self.ahead(state) {
                    let open = match self.cell(nx, ny) {
                        Cell::Wall => false,
                        Cell::Door => {
                            let d = self.door_index(nx, ny).expect("door cell is indexed");
                            state.door_open & (1 << d) != 0
                        }
                        _ => true,
                    };
                    if open {
                        next.x = nx;
                        next.y = ny;
                    }
                }
            }
            Action::TurnLeft => next.heading = state.heading.left(),
            Action::TurnRight => next.heading = state.heading.right(),
            Action::Toggle => {
                if let Some((nx, ny)) = self.ahead(state) {
                    if let Some(d) = self.door_index(nx, ny) {
                        next.door_open ^= 1 << d;
                    }
                }
            }
        }
        Step {
            state: next,
            reward: 0.0,
            done: false,
        }
    }

    pub fn num_states(&self) -> u128 {
        self.passable.len() as u128 * 4 * (1u128 << self.door_positions.len())
    }

    /// Canonical dense id: `(cell_rank * 4 + heading) * 2^doors + door_mask`.
    pub fn state_id(&self, state: &GridState) -> Option<usize> {
        if !self.is_valid(state) {
            return None;
        }
        let rank = self.cell_rank[state.y * self.width + state.x];
        let doors = self.door_positions.len();
        Some(((rank * 4 + state.heading.index()) << doors) | state.door_open as usize)
    }

    pub fn state_from_id(&self, id: usize) -> Option<GridState> {
        let doors = self.door_positions.len();
        let mask = (id & ((1usize << doors) - 1)) as u32;
        let rest = id >> doors;
        let (x, y) = *self.passable.get(rest / 4)?;
        Some(GridState {
            x,
            y,
            heading: Heading::from_index(rest % 4),
            door_open: mask,
        })
    }

    /// Every valid state in canonical-id order.
    pub fn enumerate_states(&self, cap: usize) -> Result<Vec<GridState>, StateSpaceError> {
        let size = self.num_states();
        if size > cap as u128 {
            return Err(StateSpaceError::CapExceeded { size, cap });
        }
        Ok((0..size as usize)
            .map(|id| self.state_from_id(id).expect("id below state count"))
            .collect())
    }

    /// Uniform-random policy matrix over the enumerated state space.
    pub fn random_policy_matrix(
        &self,
        mode: ActionMode,
        cap: usize,
    ) -> Result<DMatrix<f64>, StateSpaceError> {
        let dynamics = TabularDynamics::from_grid(self, mode, cap)?;
        Ok(dynamics.random_policy_matrix())
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.cell(x, y).to_char());
            }
            out.push('\n');
        }
        out
    }
}

impl FromStr for GridMap {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GridMap::parse(s)
    }
}

pub fn load_map(text: &str) -> Result<GridMap, MapError> {
    GridMap::parse(text)
}

/// A deterministic finite environment as seen by the learners and oracles.
pub trait World {
    type State: Clone + Eq + Hash + fmt::Debug;

    fn num_actions(&self) -> usize;
    fn start_state(&self) -> Self::State;
    fn transition(&self, state: &Self::State, action: usize) -> Self::State;
    /// Dense index of a state, if it belongs to the enumerable state space.
    fn state_index(&self, state: &Self::State) -> Option<usize>;
    fn states(&self) -> Result<Vec<Self::State>, StateSpaceError>;
    /// Discretized position used for coverage accounting.
    fn cell_of(&self, state: &Self::State) -> (usize, usize);
    fn num_cells(&self) -> usize;
    /// Flat raw observation consumed by learned encoders.
    fn observation(&self, state: &Self::State) -> Vec<f64>;
    fn time_limit(&self) -> usize;
}

impl World for GridMap {
    type State = GridState;

    fn num_actions(&self) -> usize {
        Action::ALL.len()
    }

    fn start_state(&self) -> GridState {
        GridMap::start_state(self)
    }

    fn transition(&self, state: &GridState, action: usize) -> GridState {
        let action = Action::from_index(action).expect("action index out of range");
        self.step(state, action).state
    }

    fn state_index(&self, state: &GridState) -> Option<usize> {
        self.state_id(state)
    }

    fn states(&self) -> Result<Vec<GridState>, StateSpaceError> {
        self.enumerate_states(DEFAULT_STATE_CAP)
    }

    fn cell_of(&self, state: &GridState) -> (usize, usize) {
        (state.x, state.y)
    }

    fn num_cells(&self) -> usize {
        self.passable.len()
    }

    /// Per cell: wall, closed door, open door, agent; followed by a one-hot
    /// heading.
    fn observation(&self, state: &GridState) -> Vec<f64> {
        let n = self.width * self.height;
        let mut obs = vec![0.0; n * 4 + 4];
        for (idx, cell) in self.cells.iter().enumerate() {
            match cell {
                Cell::Wall => obs[idx * 4] = 1.0,
                Cell::Door => {
                    let d = self
                        .door_index(idx % self.width, idx / self.width)
                        .expect("door cell is indexed");
                    if state.door_open & (1 << d) != 0 {
                        obs[idx * 4 + 2] = 1.0;
                    } else {
                        obs[idx * 4 + 1] = 1.0;
                    }
                }
                _ => {}
            }
        }
        obs[(state.y * self.width + state.x) * 4 + 3] = 1.0;
        obs[n * 4 + state.heading.index()] = 1.0;
        obs
    }

    fn time_limit(&self) -> usize {
        self.episode_limit()
    }
}

/// Deterministic tabular MDP: `next[s * num_actions + a]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularDynamics {
    num_states: usize,
    num_actions: usize,
    next: Vec<usize>,
    time_limit: usize,
}

impl TabularDynamics {
    pub fn new(num_states: usize, num_actions: usize, next: Vec<usize>) -> Self {
        assert_eq!(next.len(), num_states * num_actions);
        assert!(next.iter().all(|&s| s < num_states));
        TabularDynamics {
            num_states,
            num_actions,
            next,
            time_limit: 100,
        }
    }

    /// `n` states in a row with actions {Left, Right}; bumping an end stays put.
    pub fn line(n: usize) -> Self {
        let mut next = Vec::with_capacity(2 * n);
        for s in 0..n {
            next.push(s.saturating_sub(1));
            next.push((s + 1).min(n - 1));
        }
        Self::new(n, 2, next)
    }

    pub fn with_time_limit(mut self, limit: usize) -> Self {
        self.time_limit = limit;
        self
    }

    pub fn from_grid(map: &GridMap, mode: ActionMode, cap: usize) -> Result<Self, StateSpaceError> {
        let states = map.enumerate_states(cap)?;
        let actions = mode.actions();
        let mut next = Vec::with_capacity(states.len() * actions.len());
        for s in &states {
            for &a in actions {
                let to = map.step(s, a).state;
                next.push(map.state_id(&to).expect("step stays inside the state space"));
            }
        }
        Ok(TabularDynamics {
            num_states: states.len(),
            num_actions: actions.len(),
            next,
            time_limit: map.episode_limit(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn next(&self, state: usize, action: usize) -> usize {
        self.next[state * self.num_actions + action]
    }

    /// `P[s][s'] = (1/|A|) * sum_a 1[next(s, a) = s']`.
    pub fn random_policy_matrix(&self) -> DMatrix<f64> {
        let n = self.num_states;
        let p = 1.0 / self.num_actions as f64;
        let mut m = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.num_actions {
                m[(s, self.next(s, a))] += p;
            }
        }
        m
    }
}

impl World for TabularDynamics {
    type State = usize;

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn start_state(&self) -> usize {
        0
    }

    fn transition(&self, state: &usize, action: usize) -> usize {
        self.next(*state, action)
    }

    fn state_index(&self, state: &usize) -> Option<usize> {
        (*state < self.num_states).then_some(*state)
    }

    fn states(&self) -> Result<Vec<usize>, StateSpaceError> {
        Ok((0..self.num_states).collect())
    }

    fn cell_of(&self, state: &usize) -> (usize, usize) {
        (*state, 0)
    }

    fn num_cells(&self) -> usize {
        self.num_states
    }

    fn observation(&self, state: &usize) -> Vec<f64> {
        let mut obs = vec![0.0; self.num_states];
        obs[*state] = 1.0;
        obs
    }

    fn time_limit(&self) -> usize {
        self.time_limit
    }
}

/// Minimal number of actions from `from` to `to`, `None` when unreachable.
pub fn geodesic_distance<W: World>(world: &W, from: &W::State, to: &W::State) -> Option<usize> {
    if from == to {
        return Some(0);
    }
    let mut seen = std::collections::HashSet::from([from.clone()]);
    let mut queue = VecDeque::from([(from.clone(), 0usize)]);
    while let Some((s, d)) = queue.pop_front() {
        for a in 0..world.num_actions() {
            let next = world.transition(&s, a);
            if &next == to {
                return Some(d + 1);
            }
            if seen.insert(next.clone()) {
                queue.push_back((next, d + 1));
            }
        }
    }
    None
}

/// Single-source BFS distances indexed by `state_index`; `None` = unreachable.
pub fn distances_from<W: World>(world: &W, from: &W::State) -> Result<Vec<Option<usize>>, StateSpaceError> {
    let n = world.states()?.len();
    let mut dist = vec![None; n];
    let src = world.state_index(from).expect("source state is indexable");
    dist[src] = Some(0);
    let mut queue = VecDeque::from([(from.clone(), 0usize)]);
    while let Some((s, d)) = queue.pop_front() {
        for a in 0..world.num_actions() {
            let next = world.transition(&s, a);
            let idx = world.state_index(&next).expect("transition stays indexable");
            if dist[idx].is_none() {
                dist[idx] = Some(d + 1);
                queue.push_back((next, d + 1));
            }
        }
    }
    Ok(dist)
}

/// One episode in a world: current state plus elapsed-step accounting.
#[derive(Debug, Clone)]
pub struct EnvRunner<'w, W: World> {
    world: &'w W,
    state: W::State,
    elapsed: usize,
    limit: usize,
}

impl<'w, W: World> EnvRunner<'w, W> {
    pub fn new(world: &'w W, start: W::State, limit: usize) -> Self {
        EnvRunner {
            world,
            state: start,
            elapsed: 0,
            limit,
        }
    }

    pub fn world(&self) -> &'w W {
        self.world
    }

    pub fn state(&self) -> &W::State {
        &self.state
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub fn remaining(&self) -> usize {
        self.limit.saturating_sub(self.elapsed)
    }

    pub fn done(&self) -> bool {
        self.elapsed >= self.limit
    }

    /// Steps the episode; `done` is set when the time limit is hit.
    pub fn step(&mut self, action: usize) -> Step<W::State> {
        let next = self.world.transition(&self.state, action);
        self.state = next.clone();
        self.elapsed += 1;
        Step {
            state: next,
            reward: 0.0,
            done: self.done(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOURROOM: &str = include_str!("../maps/fourroom.txt");

    fn corridor() -> GridMap {
        GridMap::parse("#####\n#S..#\n#####\n").unwrap()
    }

    #[test]
    fn minimal_map() {
        let m = GridMap::parse("###\n#S#\n###").unwrap();
        assert_eq!(m.passable_cells().len(), 1);
        assert_eq!(m.num_doors(), 0);
        assert_eq!(m.enumerate_states(100).unwrap().len(), 4);
    }

    #[test]
    fn fourroom_layout() {
        let m = GridMap::parse(FOURROOM).unwrap();
        assert_eq!((m.width(), m.height()), (9, 9));
        // Four gaps through the inner cross walls.
        let gaps = m
            .passable_cells()
            .iter()
            .filter(|&&(x, y)| x == 4 || y == 4)
            .count();
        assert_eq!(gaps, 4);
        assert_eq!(m.passable_cells().len(), 40);
        assert_eq!(m.enumerate_states(DEFAULT_STATE_CAP).unwrap().len(), 160);
        assert_eq!(m.goal(), Some((7, 7)));
    }

    #[test]
    fn parse_errors() {
        let e = GridMap::parse("####\n#SS#\n####").unwrap_err();
        assert_eq!(e, MapError::MultipleStarts { row: 1, col: 2 });
        assert!(e.to_string().contains("multiple start cells"));
        assert_eq!(GridMap::parse("###\n#.#\n###").unwrap_err(), MapError::NoStart);
        assert!(matches!(
            GridMap::parse("####\n#S#\n####").unwrap_err(),
            MapError::NotRectangular { row: 1, .. }
        ));
        assert_eq!(
            GridMap::parse("#####\n#S#.#\n#####").unwrap_err(),
            MapError::Unreachable { row: 1, col: 3 }
        );
        assert!(matches!(
            GridMap::parse("###\n#Sx\n###").unwrap_err(),
            MapError::UnknownCell { ch: 'x', .. }
        ));
        assert!(matches!(
            GridMap::parse("#.#\n#S#\n###").unwrap_err(),
            MapError::OpenBoundary { row: 0, col: 1 }
        ));
    }

    #[test]
    fn step_semantics() {
        let m = corridor();
        let s = GridState::new(1, 1, Heading::N);
        assert_eq!(m.step(&s, Action::Forward).state, s);
        assert_eq!(
            m.step(&GridState::new(1, 1, Heading::E), Action::TurnLeft).state,
            GridState::new(1, 1, Heading::N)
        );
        assert_eq!(
            m.step(&GridState::new(1, 1, Heading::E), Action::Forward).state,
            GridState::new(2, 1, Heading::E)
        );
        let blocked = GridState::new(3, 1, Heading::E);
        assert_eq!(m.step(&blocked, Action::Forward).state, blocked);
        assert_eq!(m.step(&blocked, Action::Toggle).state, blocked);
    }

    #[test]
    fn door_semantics() {
        let m = GridMap::parse("#####\n#SD.#\n#####").unwrap();
        let facing = GridState::new(1, 1, Heading::E);
        assert_eq!(m.step(&facing, Action::Forward).state, facing);
        let opened = m.step(&facing, Action::Toggle).state;
        assert_eq!(opened, facing.with_doors(1));
        let inside = m.step(&opened, Action::Forward).state;
        assert_eq!((inside.x, inside.y), (2, 1));
        assert_eq!(m.step(&opened, Action::Toggle).state, facing);
    }

    #[test]
    fn enumeration_counts_and_ids() {
        let m = corridor();
        let states = m.enumerate_states(100).unwrap();
        assert_eq!(states.len(), 12);
        for (i, s) in states.iter().enumerate() {
            assert_eq!(m.state_id(s), Some(i));
        }
        let doors = GridMap::parse("#####\n#SD.#\n#####").unwrap();
        assert_eq!(doors.enumerate_states(100).unwrap().len(), 3 * 4 * 2);
        assert!(matches!(
            doors.enumerate_states(10),
            Err(StateSpaceError::CapExceeded { size: 24, cap: 10 })
        ));
    }

    #[test]
    fn policy_matrix_rows() {
        let line = TabularDynamics::line(3);
        let p = line.random_policy_matrix();
        assert_eq!(p.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5, 0.0]);
        let single = TabularDynamics::new(1, 1, vec![0]);
        assert_eq!(single.random_policy_matrix()[(0, 0)], 1.0);

        let m = GridMap::parse(FOURROOM).unwrap();
        let p = m.random_policy_matrix(ActionMode::Full, DEFAULT_STATE_CAP).unwrap();
        for r in 0..p.nrows() {
            assert!((p.row(r).sum() - 1.0).abs() < 1e-12);
        }
        let nav = m
            .random_policy_matrix(ActionMode::Navigation, DEFAULT_STATE_CAP)
            .unwrap();
        assert!((nav.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn policy_matrix_matches_step() {
        let m = GridMap::parse(FOURROOM).unwrap();
        let states = m.enumerate_states(DEFAULT_STATE_CAP).unwrap();
        let p = m.random_policy_matrix(ActionMode::Full, DEFAULT_STATE_CAP).unwrap();
        for (i, s) in states.iter().enumerate() {
            let mut row = vec![0.0; states.len()];
            for a in Action::ALL {
                row[m.state_id(&m.step(s, a).state).unwrap()] += 0.25;
            }
            for (j, v) in row.iter().enumerate() {
                assert_eq!(p[(i, j)], *v);
            }
        }
    }

    #[test]
    fn geodesic_examples() {
        let m = corridor();
        let a = GridState::new(1, 1, Heading::E);
        assert_eq!(geodesic_distance(&m, &a, &a), Some(0));
        assert_eq!(geodesic_distance(&m, &a, &GridState::new(2, 1, Heading::E)), Some(1));
        let doors = GridMap::parse("######\n#S.D.#\n######").unwrap();
        let from = GridState::new(1, 1, Heading::E);
        let target = GridState::new(4, 1, Heading::E).with_doors(1);
        let open_world = GridMap::parse("######\n#S...#\n######").unwrap();
        let straight =
            geodesic_distance(&open_world, &from, &GridState::new(4, 1, Heading::E)).unwrap();
        let through = geodesic_distance(&doors, &from, &target).unwrap();
        assert!(through > straight, "{through} vs {straight}");
        assert_eq!(through, straight + 1);

        let walled = GridMap::parse("#####\n#S#.#\n#.#.#\n#...#\n#####").unwrap();
        assert!(geodesic_distance(&walled, &from, &GridState::new(3, 1, Heading::N)).is_some());
        let sealed = TabularDynamics::new(2, 1, vec![0, 1]);
        assert_eq!(geodesic_distance(&sealed, &0, &1), None);
    }

    #[test]
    fn distances_match_pairwise_bfs() {
        let m = GridMap::parse(FOURROOM).unwrap();
        let states = m.enumerate_states(DEFAULT_STATE_CAP).unwrap();
        let d = distances_from(&m, &states[0]).unwrap();
        for (i, s) in states.iter().enumerate().step_by(7) {
            assert_eq!(d[i], geodesic_distance(&m, &states[0], s));
        }
    }

    #[test]
    fn runner_time_limit() {
        let m = corridor();
        let mut env = EnvRunner::new(&m, m.start_state(), 3);
        assert!(!env.step(0).done);
        assert!(!env.step(0).done);
        assert!(env.step(0).done);
        assert_eq!(env.elapsed(), 3);
    }

    #[test]
    fn state_text_roundtrip() {
        let s: GridState = "1,1,N".parse().unwrap();
        assert_eq!(s, GridState::new(1, 1, Heading::N));
        let d: GridState = "3,2,W,10".parse().unwrap();
        assert_eq!(d.door_open, 2);
        assert_eq!(d.to_string().parse::<GridState>().unwrap(), d);
    }

    #[test]
    fn observation_shape() {
        let m = GridMap::parse(FOURROOM).unwrap();
        let o = World::observation(&m, &m.start_state());
        assert_eq!(o.len(), 81 * 4 + 4);
        assert_eq!(o.iter().filter(|&&v| v == 1.0).count(), 81 - 40 + 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn fourroom() -> GridMap {
            GridMap::parse(FOURROOM).unwrap()
        }

        proptest! {
            #[test]
            fn step_is_closed_and_deterministic(id in 0usize..160, a in 0usize..4) {
                let m = fourroom();
                let s = m.state_from_id(id).unwrap();
                let act = Action::from_index(a).unwrap();
                let n1 = m.step(&s, act);
                let n2 = m.step(&s, act);
                prop_assert_eq!(n1, n2);
                prop_assert!(m.cell(n1.state.x, n1.state.y).is_passable());
            }

            #[test]
            fn triangle_inequality(a in 0usize..160, b in 0usize..160, c in 0usize..160) {
                let m = fourroom();
                let (sa, sb, sc) = (
                    m.state_from_id(a).unwrap(),
                    m.state_from_id(b).unwrap(),
                    m.state_from_id(c).unwrap(),
                );
                let ab = geodesic_distance(&m, &sa, &sb).unwrap();
                let bc = geodesic_distance(&m, &sb, &sc).unwrap();
                let ac = geodesic_distance(&m, &sa, &sc).unwrap();
                prop_assert!(ac <= ab + bc);
            }
        }
    }
}
