use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{snapshot_mismatch, Env, EnvSnapshot, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::space::{Action, ActionSpace, Bounds};

/// Moves in action order: +x, −x, +y, −y.
const MOVES: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalCell {
    pub x: usize,
    pub y: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartCell {
    pub x: usize,
    pub y: usize,
    pub weight: f64,
}

fn default_horizon() -> usize {
    100
}
fn default_grid_gamma() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    /// Reward for entering each cell, row-major (`y * width + x`).
    #[serde(default)]
    pub rewards: Option<Vec<f64>>,
    /// When `rewards` is absent, entering (x, y) pays
    /// 1 − ‖(x, y) − goal‖∞ / (max(width, height) − 1).
    #[serde(default)]
    pub goal: Option<[usize; 2]>,
    #[serde(default)]
    pub terminals: Vec<TerminalCell>,
    /// Probability that the intended move is replaced by a uniformly random one.
    #[serde(default)]
    pub slip: f64,
    pub start: Vec<StartCell>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_grid_gamma")]
    pub gamma: f64,
}

impl GridConfig {
    /// Cliff layout: start at the bottom-left corner, the rest of the bottom
    /// row except the goal corner is a zero-reward terminal cliff, and cell
    /// rewards increase towards the bottom-right goal.
    pub fn cliff(width: usize, height: usize) -> Self {
        let terminals = (1..width.saturating_sub(1))
            .map(|x| TerminalCell { x, y: 0, reward: 0.0 })
            .collect();
        Self {
            width,
            height,
            rewards: None,
            goal: Some([width - 1, 0]),
            terminals,
            slip: 0.0,
            start: vec![StartCell {
                x: 0,
                y: 0,
                weight: 1.0,
            }],
            horizon: default_horizon(),
            gamma: default_grid_gamma(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    cell: usize,
    t: usize,
    done: bool,
    rng: Rng,
}

/// Exact tabular model of a grid, as exported to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// Expected reward `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub gamma: f64,
    pub terminal: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    config: GridConfig,
    bounds: Bounds,
    spacing: f64,
    enter_reward: Vec<f64>,
    terminal: Vec<bool>,
    start_cells: Vec<usize>,
    start_cdf: Vec<f64>,
    state: GridState,
}

impl GridEnv {
    pub fn new(config: GridConfig) -> Result<Self> {
        let (w, h) = (config.width, config.height);
        if w == 0 || h == 0 {
            return Err(Error::Config("grid width and height must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.slip) {
            return Err(Error::Config("grid slip must lie in [0, 1]".into()));
        }
        let n = w * h;
        let span = (w.max(h) - 1).max(1) as f64;
        let mut enter_reward = match (&config.rewards, config.goal) {
            (Some(table), _) => {
                if table.len() != n {
                    return Err(Error::dim("grid reward table", n, table.len()));
                }
                table.clone()
            }
            (None, Some([gx, gy])) => {
                if gx >= w || gy >= h {
                    return Err(Error::Config("grid goal outside the grid".into()));
                }
                (0..n)
                    .map(|c| {
                        let (x, y) = (c % w, c / w);
                        let d = x.abs_diff(gx).max(y.abs_diff(gy)) as f64;
                        1.0 - d / span
                    })
                    .collect()
            }
            (None, None) => {
                return Err(Error::Config("grid needs either `rewards` or `goal`".into()))
            }
        };
        let mut terminal = vec![false; n];
        for t in &config.terminals {
            if t.x >= w || t.y >= h {
                return Err(Error::Config("terminal cell outside the grid".into()));
            }
            let c = t.y * w + t.x;
            terminal[c] = true;
            enter_reward[c] = t.reward;
        }
        if enter_reward.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("grid rewards must lie in [0, 1]".into()));
        }
        if config.start.is_empty() {
            return Err(Error::Config("grid needs at least one start cell".into()));
        }
        let total: f64 = config.start.iter().map(|s| s.weight).sum();
        let mut start_cells = Vec::new();
        let mut start_cdf = Vec::new();
        let mut acc = 0.0;
        for s in &config.start {
            if s.x >= w || s.y >= h || terminal[s.y * w + s.x] || !(s.weight > 0.0) {
                return Err(Error::Config(format!("invalid start cell ({}, {})", s.x, s.y)));
            }
            acc += s.weight / total;
            start_cells.push(s.y * w + s.x);
            start_cdf.push(acc);
        }
        let spacing = 1.0 / span;
        let bounds = Bounds::new(
            vec![0.0, 0.0],
            vec![(w - 1) as f64 * spacing, (h - 1) as f64 * spacing],
        )?;
        let state = GridState {
            cell: start_cells[0],
            t: 0,
            done: false,
            rng: rng::from_seed(0),
        };
        Ok(Self {
            config,
            bounds,
            spacing,
            enter_reward,
            terminal,
            start_cells,
            start_cdf,
            state,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn n_cells(&self) -> usize {
        self.config.width * self.config.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn is_terminal(&self, cell: usize) -> bool {
        self.terminal[cell]
    }

    pub fn cell(&self) -> usize {
        self.state.cell
    }

    pub fn set_cell(&mut self, cell: usize) -> Result<()> {
        if cell >= self.n_cells() {
            return Err(Error::Contract(format!("cell {cell} outside the grid")));
        }
        self.state.cell = cell;
        self.state.done = false;
        Ok(())
    }

    pub fn cell_obs(&self, cell: usize) -> Vec<f64> {
        let w = self.config.width;
        vec![
            (cell % w) as f64 * self.spacing,
            (cell / w) as f64 * self.spacing,
        ]
    }

    /// Nearest cell to a point in observation coordinates.
    pub fn cell_of(&self, state: &[f64]) -> Result<usize> {
        if !self.bounds.contains(state) {
            return Err(Error::OutOfBounds {
                state: state.to_vec(),
            });
        }
        let x = ((state[0] / self.spacing).round() as usize).min(self.config.width - 1);
        let y = ((state[1] / self.spacing).round() as usize).min(self.config.height - 1);
        Ok(y * self.config.width + x)
    }

    fn moved(&self, cell: usize, action: usize) -> usize {
        let (w, h) = (self.config.width as i64, self.config.height as i64);
        let (x, y) = ((cell as i64) % w, (cell as i64) / w);
        let (dx, dy) = MOVES[action];
        let nx = (x + dx).clamp(0, w - 1);
        let ny = (y + dy).clamp(0, h - 1);
        (ny * w + nx) as usize
    }

    /// Non-zero entries of T(· | cell, action) in ascending cell order.
    pub fn transition_row(&self, cell: usize, action: usize) -> Vec<(usize, f64)> {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(5);
        let mut add = |c: usize, p: f64| {
            if p <= 0.0 {
                return;
            }
            match row.iter_mut().find(|(k, _)| *k == c) {
                Some(e) => e.1 += p,
                None => row.push((c, p)),
            }
        };
        if self.terminal[cell] {
            add(cell, 1.0);
        } else {
            add(self.moved(cell, action), 1.0 - self.config.slip);
            for a in 0..MOVES.len() {
                add(self.moved(cell, a), self.config.slip / MOVES.len() as f64);
            }
        }
        row.sort_by_key(|(c, _)| *c);
        row
    }

    /// Expected reward of `action` in `cell`; zero in absorbing cells.
    pub fn expected_reward(&self, cell: usize, action: usize) -> f64 {
        if self.terminal[cell] {
            return 0.0;
        }
        self.transition_row(cell, action)
            .iter()
            .map(|(c, p)| p * self.enter_reward[*c])
            .sum()
    }

    pub fn tabular(&self) -> TabularModel {
        let n = self.n_cells();
        let transitions = (0..n)
            .map(|s| {
                (0..MOVES.len())
                    .map(|a| {
                        let mut row = vec![0.0; n];
                        for (c, p) in self.transition_row(s, a) {
                            row[c] = p;
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        let rewards = (0..n)
            .map(|s| (0..MOVES.len()).map(|a| self.expected_reward(s, a)).collect())
            .collect();
        TabularModel {
            n_states: n,
            n_actions: MOVES.len(),
            transitions,
            rewards,
            gamma: self.config.gamma,
            terminal: self.terminal.clone(),
        }
    }

    fn action_index(&self, action: &Action) -> Result<usize> {
        match action {
            Action::Discrete(a) if *a < MOVES.len() => Ok(*a),
            _ => Err(Error::Contract(format!("invalid grid action {action:?}"))),
        }
    }
}

impl Env for GridEnv {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(MOVES.len())
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn gamma(&self) -> f64 {
        self.config.gamma
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng::from_seed(seed);
        let u: f64 = rng.gen();
        let idx = self
            .start_cdf
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.start_cells.len() - 1);
        self.state = GridState {
            cell: self.start_cells[idx],
            t: 0,
            done: false,
            rng,
        };
        self.cell_obs(self.state.cell)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::Contract("step called on a finished grid episode".into()));
        }
        let a = self.action_index(action)?;
        let row = self.transition_row(self.state.cell, a);
        let u: f64 = self.state.rng.gen();
        let mut acc = 0.0;
        let mut next = row.last().expect("rows are never empty").0;
        for (c, p) in &row {
            acc += p;
            if u < acc {
                next = *c;
                break;
            }
        }
        let reward = if self.terminal[self.state.cell] {
            0.0
        } else {
            self.enter_reward[next]
        };
        self.state.cell = next;
        self.state.t += 1;
        let terminal = self.terminal[next];
        let truncated = !terminal && self.state.t >= self.config.horizon;
        self.state.done = terminal || truncated;
        Ok(StepOutcome {
            obs: self.cell_obs(next),
            reward,
            terminal,
            truncated,
        })
    }

    fn reward_query(&self, state: &[f64], action: &Action) -> Result<f64> {
        let cell = self.cell_of(state)?;
        Ok(self.expected_reward(cell, self.action_index(action)?))
    }

    fn state(&self) -> Vec<f64> {
        self.cell_obs(self.state.cell)
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Grid(self.state.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()> {
        match snapshot {
            EnvSnapshot::Grid(s) if s.cell < self.n_cells() => {
                self.state = s.clone();
                Ok(())
            }
            other => Err(snapshot_mismatch("grid", other)),
        }
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_grid(slip: f64) -> GridEnv {
        GridEnv::new(GridConfig {
            width: 4,
            height: 3,
            rewards: None,
            goal: Some([3, 2]),
            terminals: vec![TerminalCell {
                x: 3,
                y: 0,
                reward: 0.0,
            }],
            slip,
            start: vec![StartCell {
                x: 0,
                y: 0,
                weight: 1.0,
            }],
            horizon: 50,
            gamma: 0.9,
        })
        .unwrap()
    }

    #[test]
    fn transition_rows_are_stochastic() {
        for slip in [0.0, 0.2, 1.0] {
            let m = open_grid(slip).tabular();
            for s in 0..m.n_states {
                for a in 0..m.n_actions {
                    let total: f64 = m.transitions[s][a].iter().sum();
                    assert!((total - 1.0).abs() < 1e-12);
                    assert!((0.0..=1.0).contains(&m.rewards[s][a]));
                }
            }
        }
    }

    #[test]
    fn deterministic_step_follows_table() {
        let mut e = open_grid(0.0);
        e.reset(0);
        e.set_cell(5).unwrap(); // (1, 1)
        let table = e.tabular();
        let o = e.step(&Action::Discrete(2)).unwrap(); // +y
        let expect = table.transitions[5][2].iter().position(|p| *p == 1.0).unwrap();
        assert_eq!(expect, 9);
        assert_eq!(e.cell(), expect);
        assert_eq!(o.obs, e.cell_obs(9));
    }

    #[test]
    fn walls_bump_in_place() {
        let mut e = open_grid(0.0);
        e.reset(0);
        e.step(&Action::Discrete(1)).unwrap();
        assert_eq!(e.cell(), 0);
    }

    #[test]
    fn entering_terminal_ends_episode() {
        let mut e = open_grid(0.0);
        e.reset(0);
        e.set_cell(2).unwrap();
        let o = e.step(&Action::Discrete(0)).unwrap();
        assert!(o.terminal && o.reward == 0.0);
        assert!(e.step(&Action::Discrete(0)).is_err());
    }

    #[test]
    fn reward_query_matches_deterministic_step() {
        let mut e = open_grid(0.0);
        let s = e.reset(3);
        for a in 0..4 {
            e.reset(3);
            let q = e.reward_query(&s, &Action::Discrete(a)).unwrap();
            assert_eq!(q, e.step(&Action::Discrete(a)).unwrap().reward);
        }
    }

    #[test]
    fn slip_frequencies_match_row() {
        let mut e = open_grid(0.4);
        let row = e.transition_row(5, 0);
        let n = 10_000;
        let mut counts = vec![0usize; e.n_cells()];
        e.reset(11);
        for _ in 0..n {
            e.set_cell(5).unwrap();
            e.step(&Action::Discrete(0)).unwrap();
            counts[e.cell()] += 1;
        }
        for (c, p) in row {
            let expect = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[c] as f64 - expect).abs() <= 3.0 * sigma,
                "cell {c}: {} vs {expect}",
                counts[c]
            );
        }
    }

    #[test]
    fn start_distribution_chi_square() {
        let mut cfg = open_grid(0.0).config().clone();
        cfg.start = vec![
            StartCell { x: 0, y: 0, weight: 1.0 },
            StartCell { x: 1, y: 0, weight: 2.0 },
            StartCell { x: 0, y: 2, weight: 1.0 },
        ];
        let mut e = GridEnv::new(cfg).unwrap();
        let n = 10_000;
        let cells = [0usize, 1, 8];
        let probs = [0.25, 0.5, 0.25];
        let mut counts = [0f64; 3];
        for seed in 0..n {
            e.reset(seed as u64);
            let k = cells.iter().position(|c| *c == e.cell()).unwrap();
            counts[k] += 1.0;
        }
        let chi2: f64 = counts
            .iter()
            .zip(probs)
            .map(|(o, p)| (o - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        // 2 degrees of freedom, p = 0.01 critical value
        assert!(chi2 < 9.21, "chi2 = {chi2}");
    }

    #[test]
    fn cliff_layout_shape() {
        let e = GridEnv::new(GridConfig::cliff(11, 4)).unwrap();
        assert!((e.spacing() - 0.1).abs() < 1e-15);
        assert!(e.is_terminal(1) && e.is_terminal(9) && !e.is_terminal(10));
        assert_eq!(e.bounds().high, vec![1.0, 0.30000000000000004]);
    }

    #[test]
    fn tabular_export_round_trips_through_json() {
        let m = open_grid(0.1).tabular();
        let back: TabularModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
