use std::collections::HashMap;

use rand::Rng;

/// A point in the simulated world, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pos {
    pub x: f64,
    pub y: f64,
}

impl Pos {
    pub fn dist(self, other: Pos) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Random-waypoint movement state of one node (no pause time).
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub pos: Pos,
    pub waypoint: Pos,
    pub speed: f64,
}

/// World rectangle and speed range for random-waypoint movement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub width: f64,
    pub height: f64,
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Area {
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Pos {
        Pos {
            x: rng.gen_range(0.0..=self.width),
            y: rng.gen_range(0.0..=self.height),
        }
    }

    pub fn random_speed<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.speed_min == self.speed_max {
            self.speed_min
        } else {
            rng.gen_range(self.speed_min..=self.speed_max)
        }
    }

    pub fn spawn<R: Rng>(&self, rng: &mut R) -> Motion {
        Motion {
            pos: self.random_point(rng),
            waypoint: self.random_point(rng),
            speed: self.random_speed(rng),
        }
    }
}

/// Advances `m` by `dt` seconds. Arriving at the waypoint draws a new
/// uniform waypoint and speed and spends the remaining time moving on.
pub fn rwp_step<R: Rng>(m: &mut Motion, area: &Area, dt: f64, rng: &mut R) {
    assert!(dt > 0.0, "dt must be positive");
    let mut left = dt;
    // bounded so a zero-length leg cannot spin forever
    for _ in 0..64 {
        if m.speed <= 0.0 {
            return;
        }
        let d = m.pos.dist(m.waypoint);
        let reach = m.speed * left;
        if reach < d {
            let f = reach / d;
            m.pos.x += (m.waypoint.x - m.pos.x) * f;
            m.pos.y += (m.waypoint.y - m.pos.y) * f;
            break;
        }
        left -= d / m.speed;
        m.pos = m.waypoint;
        m.waypoint = area.random_point(rng);
        m.speed = area.random_speed(rng);
        if left <= 0.0 {
            break;
        }
    }
    m.pos.x = m.pos.x.clamp(0.0, area.width);
    m.pos.y = m.pos.y.clamp(0.0, area.height);
}

/// All unordered pairs `(i, j)`, `i < j`, within `range` of each other
/// (boundary inclusive), found with a uniform grid of cell size `range`.
/// The result is sorted.
pub fn contacts(positions: &[Pos], range: f64) -> Vec<(usize, usize)> {
    let cell = |p: Pos| ((p.x / range).floor() as i64, (p.y / range).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        grid.entry(cell(*p)).or_default().push(i);
    }
    let r2 = range * range;
    let mut out = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = cell(*p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j > i {
                        let q = positions[j];
                        let (ex, ey) = (p.x - q.x, p.y - q.y);
                        if ex * ex + ey * ey <= r2 {
                            out.push((i, j));
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Quadratic reference for [`contacts`].
pub fn contacts_brute_force(positions: &[Pos], range: f64) -> Vec<(usize, usize)> {
    let r2 = range * range;
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let (ex, ey) = (positions[i].x - positions[j].x, positions[i].y - positions[j].y);
            if ex * ex + ey * ey <= r2 {
                out.push((i, j));
            }
        }
    }
    out
}
