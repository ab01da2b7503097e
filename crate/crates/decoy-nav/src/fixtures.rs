//! Hand-built scenario fixtures with exact mirror symmetry: the start sits
//! on the vertical axis and the two goals (and any obstacles) are mirrored
//! about it, so belief symmetry properties hold to the last bit.

use crate::env::{CandidateSet, Mode, Scenario};
use crate::grid::{Cell, GridMap};

/// Obstacle patterns for symmetric fixtures; every pattern is mirrored
/// about the center column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixturePattern {
    Open,
    CenterBlock,
    SidePillars,
    Gates,
}

fn mirrored_obstacles(size: i32, pattern: FixturePattern) -> Vec<Cell> {
    let c = size / 2;
    let mut cells = Vec::new();
    let mut push_mirrored = |x: i32, y: i32| {
        cells.push(Cell::new(x, y));
        let mx = 2 * c - x;
        if mx != x {
            cells.push(Cell::new(mx, y));
        }
    };
    match pattern {
        FixturePattern::Open => {}
        FixturePattern::CenterBlock => {
            // Solid block straddling the axis in the middle third.
            for y in size / 3..size / 3 + 2 {
                for x in c - 1..=c + 1 {
                    push_mirrored(x, y);
                }
            }
        }
        FixturePattern::SidePillars => {
            for y in size / 2 - 1..=size / 2 + 1 {
                push_mirrored(c - 3, y);
            }
        }
        FixturePattern::Gates => {
            // Horizontal wall with gaps near the axis and the edges.
            let y = size / 2;
            for x in 2..size - 2 {
                if (x - c).abs() <= 1 {
                    continue;
                }
                push_mirrored(x, y);
            }
        }
    }
    cells.sort();
    cells.dedup();
    cells
}

/// A size x size scenario with the start bottom-center and two goals
/// mirrored about the center column near the top. `real_left` picks which
/// side holds the real goal. `size` must be odd so the axis is a column.
pub fn symmetric_fixture(size: i32, pattern: FixturePattern, real_left: bool) -> Scenario {
    assert!(size >= 9 && size % 2 == 1, "need an odd size of at least 9");
    let map = GridMap::new(size, size, mirrored_obstacles(size, pattern)).unwrap();
    let c = size / 2;
    let gy = size - 2;
    let left = Cell::new(1, gy);
    let right = Cell::new(size - 2, gy);
    let goals = if real_left {
        vec![left, right]
    } else {
        vec![right, left]
    };
    // Real goal is always candidate 0; the mirror side alternates.
    let cs = CandidateSet::uniform(goals, 0).unwrap();
    Scenario::new(map, Cell::new(c, 0), cs, Mode::Discrete).unwrap()
}

/// The standard eight-fixture evaluation suite: sizes 11-15, all patterns,
/// alternating real-goal side.
pub fn fixture_suite() -> Vec<(String, Scenario)> {
    let specs = [
        (11, FixturePattern::Open, true),
        (11, FixturePattern::CenterBlock, false),
        (13, FixturePattern::Open, false),
        (13, FixturePattern::SidePillars, true),
        (13, FixturePattern::Gates, false),
        (15, FixturePattern::Open, true),
        (15, FixturePattern::CenterBlock, true),
        (15, FixturePattern::Gates, false),
    ];
    specs
        .iter()
        .map(|&(size, pattern, real_left)| {
            let name = format!(
                "sym{size}_{}_{}",
                match pattern {
                    FixturePattern::Open => "open",
                    FixturePattern::CenterBlock => "block",
                    FixturePattern::SidePillars => "pillars",
                    FixturePattern::Gates => "gates",
                },
                if real_left { "l" } else { "r" }
            );
            (name, symmetric_fixture(size, pattern, real_left))
        })
        .collect()
}

/// Continuous variant of a symmetric fixture (cell-center embedding).
pub fn symmetric_fixture_continuous(size: i32, pattern: FixturePattern, real_left: bool) -> Scenario {
    let d = symmetric_fixture(size, pattern, real_left);
    Scenario::new(
        d.map().clone(),
        d.start(),
        d.candidates().clone(),
        Mode::Continuous,
    )
    .unwrap()
}
