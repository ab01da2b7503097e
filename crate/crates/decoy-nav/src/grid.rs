//! Grid geometry: occupancy maps, ASCII map I/O, procedural map generation
//! and the shortest-path cost oracle.
//!
//! The same occupancy geometry backs both the discrete and the continuous
//! environment: cell `(x, y)` is the unit square `[x, x+1] x [y, y+1]` in
//! world coordinates, and `y` grows in the "up" movement direction.

use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Header line carried by map files.
pub const MAP_HEADER: &str = "# decoy-nav map v1";

/// A grid cell. `x` is the column, `y` the row; both are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("map must be at least 3x3, got {width}x{height}")]
    TooSmall { width: i32, height: i32 },
    #[error("cell {0} lies outside the map")]
    OutOfBounds(Cell),
    #[error("cell {0} is an obstacle")]
    Blocked(Cell),
    #[error("no path from {from} to {to}")]
    Unreachable { from: Cell, to: Cell },
}

/// Rectangular occupancy map.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: i32,
    height: i32,
    blocked: Vec<bool>,
}

impl GridMap {
    /// Builds a map from explicit obstacle cells. Obstacles must be in bounds.
    pub fn new(
        width: i32,
        height: i32,
        obstacles: impl IntoIterator<Item = Cell>,
    ) -> Result<Self, GridError> {
        if width < 3 || height < 3 {
            return Err(GridError::TooSmall { width, height });
        }
        let mut blocked = vec![false; (width * height) as usize];
        for c in obstacles {
            if c.x < 0 || c.x >= width || c.y < 0 || c.y >= height {
                return Err(GridError::OutOfBounds(c));
            }
            blocked[(c.y * width + c.x) as usize] = true;
        }
        Ok(GridMap {
            width,
            height,
            blocked,
        })
    }

    pub fn empty(width: i32, height: i32) -> Result<Self, GridError> {
        Self::new(width, height, std::iter::empty())
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    fn idx(&self, c: Cell) -> usize {
        (c.y * self.width + c.x) as usize
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.x < self.width && c.y >= 0 && c.y < self.height
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.blocked[self.idx(c)]
    }

    /// True when `c` is inside the map and not an obstacle.
    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.blocked[self.idx(c)]
    }

    pub fn obstacle_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    /// Cells in row-major order (y outer, x inner).
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(move |&c| self.is_free(c))
    }

    pub fn obstacle_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(move |&c| self.is_obstacle(c))
    }

    /// True when every free cell can reach every other free cell.
    pub fn free_cells_connected(&self) -> bool {
        let Some(seed) = self.free_cells().next() else {
            return true;
        };
        let mut seen = vec![false; self.blocked.len()];
        let mut stack = vec![seed];
        seen[self.idx(seed)] = true;
        let mut count = 1usize;
        while let Some(c) = stack.pop() {
            for (dx, dy) in NEIGHBOR_DELTAS {
                let n = c.offset(dx, dy);
                if self.is_free(n) && !seen[self.idx(n)] {
                    seen[self.idx(n)] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        count == self.free_cells().count()
    }
}

/// 8-connected neighbor offsets, in the movement-index order used everywhere.
pub const NEIGHBOR_DELTAS: [(i32, i32); 8] = [
    (0, 1),   // up
    (0, -1),  // down
    (-1, 0),  // left
    (1, 0),   // right
    (-1, -1), // down-left
    (-1, 1),  // up-left
    (1, 1),   // up-right
    (1, -1),  // down-right
];

/// Cost of an 8-connected step: 1 for lateral moves, sqrt(2) for diagonals.
pub fn step_cost(dx: i32, dy: i32) -> f64 {
    if dx != 0 && dy != 0 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// ASCII map format
// ---------------------------------------------------------------------------

/// Parse result of a map file: occupancy plus the scenario skeleton embedded
/// in the `S`/`G`/`F` markers. `fake_goals` preserves row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFile {
    pub map: GridMap,
    pub start: Cell,
    pub real_goal: Cell,
    pub fake_goals: Vec<Cell>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MapParseError {
    #[error("empty map text")]
    Empty,
    #[error("unsupported map header {0:?}")]
    BadHeader(String),
    #[error("row {row} has {len} columns, expected {expected}")]
    RaggedRow { row: usize, len: usize, expected: usize },
    #[error("unknown character {ch:?} at row {row}, column {col}")]
    UnknownChar { ch: char, row: usize, col: usize },
    #[error("missing start marker 'S'")]
    MissingStart,
    #[error("duplicate start marker 'S' at row {row}, column {col}")]
    DuplicateStart { row: usize, col: usize },
    #[error("missing real-goal marker 'G'")]
    MissingGoal,
    #[error("duplicate real-goal marker 'G' at row {row}, column {col}")]
    DuplicateGoal { row: usize, col: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Parses the ASCII map format.
///
/// Alphabet: `.` free, `#` obstacle, `S` start, `G` real goal, `F` fake goal.
/// Row `r` of the body maps to `y = r`; column `c` to `x = c`. A single
/// leading header line (see [`MAP_HEADER`]) is accepted and checked when the
/// first line contains a space; body rows never do. Rows and columns in
/// errors are 1-based.
pub fn load_map(text: &str) -> Result<MapFile, MapParseError> {
    let mut lines: Vec<&str> = text.lines().collect();
    if let Some(first) = lines.first() {
        if first.contains(' ') || first.starts_with("#!") {
            if *first != MAP_HEADER {
                return Err(MapParseError::BadHeader(first.to_string()));
            }
            lines.remove(0);
        }
    }
    if lines.is_empty() {
        return Err(MapParseError::Empty);
    }

    let expected = lines[0].chars().count();
    let mut obstacles = Vec::new();
    let mut start = None;
    let mut real_goal = None;
    let mut fake_goals = Vec::new();
    for (r, line) in lines.iter().enumerate() {
        let len = line.chars().count();
        if len != expected {
            return Err(MapParseError::RaggedRow {
                row: r + 1,
                len,
                expected,
            });
        }
        for (c, ch) in line.chars().enumerate() {
            let cell = Cell::new(c as i32, r as i32);
            match ch {
                '.' => {}
                '#' => obstacles.push(cell),
                'S' => {
                    if start.replace(cell).is_some() {
                        return Err(MapParseError::DuplicateStart { row: r + 1, col: c + 1 });
                    }
                }
                'G' => {
                    if real_goal.replace(cell).is_some() {
                        return Err(MapParseError::DuplicateGoal { row: r + 1, col: c + 1 });
                    }
                }
                'F' => fake_goals.push(cell),
                _ => {
                    return Err(MapParseError::UnknownChar {
                        ch,
                        row: r + 1,
                        col: c + 1,
                    })
                }
            }
        }
    }

    let map = GridMap::new(expected as i32, lines.len() as i32, obstacles)?;
    Ok(MapFile {
        map,
        start: start.ok_or(MapParseError::MissingStart)?,
        real_goal: real_goal.ok_or(MapParseError::MissingGoal)?,
        fake_goals,
    })
}

/// Renders a map back to its file form (header + body + trailing newline).
/// `load_map(save_map(m))` reproduces `m`, and a second save is byte-identical.
pub fn save_map(mf: &MapFile) -> String {
    let mut out = String::new();
    out.push_str(MAP_HEADER);
    out.push('\n');
    for y in 0..mf.map.height() {
        for x in 0..mf.map.width() {
            let c = Cell::new(x, y);
            let ch = if c == mf.start {
                'S'
            } else if c == mf.real_goal {
                'G'
            } else if mf.fake_goals.contains(&c) {
                'F'
            } else if mf.map.is_obstacle(c) {
                '#'
            } else {
                '.'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Shortest-path oracle
// ---------------------------------------------------------------------------

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    dist: f64,
    idx: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Min-heap on distance; break ties on index for determinism.
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest-path distances over free cells, 8-connected with
/// lateral cost 1 and diagonal cost sqrt(2). Costs are symmetric, so a field
/// computed from a goal also gives every cell's distance *to* that goal.
#[derive(Debug, Clone)]
pub struct DistanceField {
    source: Cell,
    width: i32,
    dist: Vec<f64>,
}

impl DistanceField {
    pub fn compute(map: &GridMap, source: Cell) -> Result<Self, GridError> {
        if !map.in_bounds(source) {
            return Err(GridError::OutOfBounds(source));
        }
        if map.is_obstacle(source) {
            return Err(GridError::Blocked(source));
        }
        let n = (map.width() * map.height()) as usize;
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[map.idx(source)] = 0.0;
        heap.push(HeapEntry {
            dist: 0.0,
            idx: map.idx(source),
        });
        while let Some(HeapEntry { dist: d, idx }) = heap.pop() {
            if d > dist[idx] {
                continue;
            }
            let c = Cell::new(idx as i32 % map.width(), idx as i32 / map.width());
            for (dx, dy) in NEIGHBOR_DELTAS {
                let nb = c.offset(dx, dy);
                if !map.is_free(nb) {
                    continue;
                }
                let nd = d + step_cost(dx, dy);
                let ni = map.idx(nb);
                if nd < dist[ni] {
                    dist[ni] = nd;
                    heap.push(HeapEntry { dist: nd, idx: ni });
                }
            }
        }
        Ok(DistanceField {
            source,
            width: map.width(),
            dist,
        })
    }

    pub fn source(&self) -> Cell {
        self.source
    }

    /// Distance from the source; `None` if unreachable.
    pub fn distance(&self, to: Cell) -> Option<f64> {
        let i = (to.y * self.width + to.x) as usize;
        let d = *self.dist.get(i)?;
        d.is_finite().then_some(d)
    }
}

/// Least-cost 8-connected path cost between two free cells.
pub fn optimal_cost(map: &GridMap, from: Cell, to: Cell) -> Result<f64, GridError> {
    if !map.in_bounds(to) {
        return Err(GridError::OutOfBounds(to));
    }
    if map.is_obstacle(to) {
        return Err(GridError::Blocked(to));
    }
    let field = DistanceField::compute(map, from)?;
    field
        .distance(to)
        .ok_or(GridError::Unreachable { from, to })
}

// ---------------------------------------------------------------------------
// Procedural map generation
// ---------------------------------------------------------------------------

/// Layout classes for generated maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Empty,
    LargeObstacles,
    SmallObstacles,
    Islands,
    Maze,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empty" => Ok(Layout::Empty),
            "large_obstacles" => Ok(Layout::LargeObstacles),
            "small_obstacles" => Ok(Layout::SmallObstacles),
            "islands" => Ok(Layout::Islands),
            "maze" => Ok(Layout::Maze),
            other => Err(format!("unknown layout {other:?}")),
        }
    }
}

/// Obstacle density knobs for the generator; defaults are tuned per layout
/// class and exposed so runs can override them.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GeneratorParams {
    /// Rectangles placed by `large_obstacles`, as a fraction of map size.
    pub large_count_per_side: f64,
    /// Cells blocked by `small_obstacles`, as a fraction of the area.
    pub small_density: f64,
    /// Island blobs placed by `islands`.
    pub island_count: usize,
    /// Target fraction of the area covered by each island blob.
    pub island_area_fraction: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            large_count_per_side: 0.25,
            small_density: 0.08,
            island_count: 4,
            island_area_fraction: 0.04,
        }
    }
}

/// Generates a square map of the given layout class. Deterministic in
/// `(layout, size, seed)`; the result is always fully connected on free
/// cells (generation retries until connectivity holds).
///
/// # Panics
/// After 1000 failed attempts to produce a connected map, which the layout
/// parameters make unreachable in practice.
pub fn generate_map(layout: Layout, size: i32, seed: u64) -> GridMap {
    generate_map_with(layout, size, seed, &GeneratorParams::default())
}

pub fn generate_map_with(layout: Layout, size: i32, seed: u64, params: &GeneratorParams) -> GridMap {
    assert!(size >= 9, "generated maps must be at least 9x9, got {size}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (layout as u64) << 32 ^ size as u64);
    for _ in 0..1000 {
        let map = match layout {
            Layout::Empty => GridMap::empty(size, size).unwrap(),
            Layout::LargeObstacles => gen_large(size, &mut rng, params),
            Layout::SmallObstacles => gen_small(size, &mut rng, params),
            Layout::Islands => gen_islands(size, &mut rng, params),
            Layout::Maze => gen_maze(size, &mut rng),
        };
        if map.free_cells().count() >= (size * size / 4) as usize && map.free_cells_connected() {
            return map;
        }
    }
    panic!("map generation failed to produce a connected {layout:?} map after 1000 attempts");
}

fn gen_large(size: i32, rng: &mut ChaCha8Rng, params: &GeneratorParams) -> GridMap {
    let count = ((size as f64 * params.large_count_per_side).round() as usize).max(2);
    let mut obstacles = Vec::new();
    for _ in 0..count {
        let w = rng.random_range(size / 6..=size / 3).max(2);
        let h = rng.random_range(size / 6..=size / 3).max(2);
        let x0 = rng.random_range(0..size - w);
        let y0 = rng.random_range(0..size - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                obstacles.push(Cell::new(x, y));
            }
        }
    }
    GridMap::new(size, size, obstacles).unwrap()
}

fn gen_small(size: i32, rng: &mut ChaCha8Rng, params: &GeneratorParams) -> GridMap {
    let count = ((size * size) as f64 * params.small_density).round() as usize;
    let mut obstacles = Vec::new();
    for _ in 0..count {
        obstacles.push(Cell::new(
            rng.random_range(0..size),
            rng.random_range(0..size),
        ));
    }
    GridMap::new(size, size, obstacles).unwrap()
}

fn gen_islands(size: i32, rng: &mut ChaCha8Rng, params: &GeneratorParams) -> GridMap {
    let target = (((size * size) as f64) * params.island_area_fraction).round() as usize;
    let mut blocked = vec![false; (size * size) as usize];
    for _ in 0..params.island_count {
        // Grow a blob by random walk from a seed cell.
        let mut c = Cell::new(
            rng.random_range(1..size - 1),
            rng.random_range(1..size - 1),
        );
        let mut grown = 0usize;
        let mut guard = 0usize;
        while grown < target && guard < target * 20 {
            guard += 1;
            let i = (c.y * size + c.x) as usize;
            if !blocked[i] {
                blocked[i] = true;
                grown += 1;
            }
            let (dx, dy) = NEIGHBOR_DELTAS[rng.random_range(0..4usize)];
            let n = c.offset(dx, dy);
            if n.x >= 1 && n.x < size - 1 && n.y >= 1 && n.y < size - 1 {
                c = n;
            }
        }
    }
    let obstacles = (0..size * size)
        .filter(|&i| blocked[i as usize])
        .map(|i| Cell::new(i % size, i / size));
    GridMap::new(size, size, obstacles).unwrap()
}

/// Randomized depth-first maze over an odd lattice: odd-odd cells are rooms,
/// carving removes the wall between visited rooms. Connected by construction.
fn gen_maze(size: i32, rng: &mut ChaCha8Rng) -> GridMap {
    let mut blocked = vec![true; (size * size) as usize];
    let room = |x: i32, y: i32| (y * size + x) as usize;
    let rooms_w = (size - 1) / 2;
    let rooms_h = (size - 1) / 2;
    let mut visited = vec![false; (rooms_w * rooms_h) as usize];
    let mut stack = vec![(0i32, 0i32)];
    visited[0] = true;
    blocked[room(1, 1)] = false;
    while let Some(&(rx, ry)) = stack.last() {
        let mut next = Vec::new();
        for (dx, dy) in [(0, 1), (0, -1), (-1, 0), (1, 0)] {
            let (nx, ny) = (rx + dx, ry + dy);
            if nx >= 0 && nx < rooms_w && ny >= 0 && ny < rooms_h {
                if !visited[(ny * rooms_w + nx) as usize] {
                    next.push((nx, ny, dx, dy));
                }
            }
        }
        if next.is_empty() {
            stack.pop();
            continue;
        }
        let (nx, ny, dx, dy) = next[rng.random_range(0..next.len())];
        visited[(ny * rooms_w + nx) as usize] = true;
        // Open the target room and the wall cell between the two rooms.
        blocked[room(2 * nx + 1, 2 * ny + 1)] = false;
        blocked[room(2 * rx + 1 + dx, 2 * ry + 1 + dy)] = false;
        stack.push((nx, ny));
    }
    let obstacles = (0..size * size)
        .filter(|&i| blocked[i as usize])
        .map(|i| Cell::new(i % size, i / size));
    GridMap::new(size, size, obstacles).unwrap()
}

// ---------------------------------------------------------------------------
// State-visitation counting
// ---------------------------------------------------------------------------

/// Per-cell visit counter; continuous states are binned into unit cells.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitGrid {
    width: i32,
    height: i32,
    counts: Vec<u64>,
}

impl VisitGrid {
    pub fn new(width: i32, height: i32) -> Self {
        VisitGrid {
            width,
            height,
            counts: vec![0; (width * height) as usize],
        }
    }

    pub fn for_map(map: &GridMap) -> Self {
        Self::new(map.width(), map.height())
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn bump(&mut self, c: Cell) {
        if c.x >= 0 && c.x < self.width && c.y >= 0 && c.y < self.height {
            self.counts[(c.y * self.width + c.x) as usize] += 1;
        }
    }

    /// Bins a continuous position into its containing unit cell.
    pub fn bump_point(&mut self, x: f64, y: f64) {
        self.bump(Cell::new(x.floor() as i32, y.floor() as i32));
    }

    pub fn count(&self, c: Cell) -> u64 {
        if c.x >= 0 && c.x < self.width && c.y >= 0 && c.y < self.height {
            self.counts[(c.y * self.width + c.x) as usize]
        } else {
            0
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &VisitGrid) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, u64)> + '_ {
        self.counts.iter().enumerate().map(move |(i, &n)| {
            (
                Cell::new(i as i32 % self.width, i as i32 / self.width),
                n,
            )
        })
    }
}

/// Renders a map plus markers as a debug string (tests and examples).
pub fn render_map(map: &GridMap, marks: &[(Cell, char)]) -> String {
    let mut out = String::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let c = Cell::new(x, y);
            let ch = marks
                .iter()
                .find(|(m, _)| *m == c)
                .map(|&(_, ch)| ch)
                .unwrap_or(if map.is_obstacle(c) { '#' } else { '.' });
            out.push(ch);
        }
        let _ = writeln!(out);
    }
    out
}
