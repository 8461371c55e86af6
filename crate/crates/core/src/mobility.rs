//! Random Waypoint movement inside a rectangular area with axis-aligned
//! obstacles, plus the unit-disk link model.
//!
//! Obstacles block both movement and radio line of sight. A waypoint whose
//! straight segment from the current position crosses an obstacle is
//! rejected and re-drawn.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::RandomStream;
use crate::NodeId;

const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("no free point found after {0} rejections; obstacles cover (almost) the whole area")]
    NoFreeSpace(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle given by its lower-left corner and extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    /// Interior test; points on the boundary count as outside.
    pub fn contains(&self, p: Point) -> bool {
        p.x > self.x && p.x < self.x + self.w && p.y > self.y && p.y < self.y + self.h
    }

    /// True when the open segment `a`–`b` passes through the interior.
    /// Liang–Barsky clipping against the rectangle.
    pub fn intersects_segment(&self, a: Point, b: Point) -> bool {
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        let checks = [
            (-dx, a.x - self.x),
            (dx, self.x + self.w - a.x),
            (-dy, a.y - self.y),
            (dy, self.y + self.h - a.y),
        ];
        for (p, q) in checks {
            if p == 0.0 {
                if q <= 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 >= t1 {
                    return false;
                }
            }
        }
        // Touching a corner or running along an edge is not a crossing.
        let mid = Point::new(a.x + dx * (t0 + t1) / 2.0, a.y + dy * (t0 + t1) / 2.0);
        self.contains(mid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
}

impl Area {
    pub fn open(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            obstacles: Vec::new(),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    /// Inside the area and outside every obstacle.
    pub fn is_free(&self, p: Point) -> bool {
        self.contains(p) && !self.obstacles.iter().any(|o| o.contains(p))
    }

    pub fn segment_clear(&self, a: Point, b: Point) -> bool {
        !self.obstacles.iter().any(|o| o.intersects_segment(a, b))
    }

    pub fn obstacles_within_bounds(&self) -> bool {
        self.obstacles.iter().all(|o| {
            o.w > 0.0
                && o.h > 0.0
                && o.x >= 0.0
                && o.y >= 0.0
                && o.x + o.w <= self.width
                && o.y + o.h <= self.height
        })
    }

    pub fn free_fraction_estimate(&self) -> f64 {
        let total = self.width * self.height;
        let blocked: f64 = self.obstacles.iter().map(|o| o.w * o.h).sum();
        ((total - blocked) / total).max(0.0)
    }
}

/// Uniform point over the free part of the area, by rejection sampling.
pub fn sample_waypoint(stream: &mut RandomStream, area: &Area) -> Result<Point, MobilityError> {
    for _ in 0..MAX_REJECTIONS {
        let p = Point::new(
            stream.uniform(0.0, area.width),
            stream.uniform(0.0, area.height),
        );
        if area.is_free(p) {
            return Ok(p);
        }
    }
    Err(MobilityError::NoFreeSpace(MAX_REJECTIONS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityParams {
    pub v_min: f64,
    pub v_max: f64,
    pub pause_min: f64,
    pub pause_max: f64,
}

impl MobilityParams {
    pub fn stationary() -> Self {
        Self {
            v_min: 0.0,
            v_max: 0.0,
            pause_min: 0.0,
            pause_max: 0.0,
        }
    }

    pub fn is_static(&self) -> bool {
        self.v_max <= 0.0
    }
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            v_min: 1.0,
            v_max: 2.0,
            pause_min: 0.0,
            pause_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeKinematics {
    pub position: Point,
    pub waypoint: Point,
    pub speed: f64,
    pub pause_until: f64,
}

impl NodeKinematics {
    /// A node resting at `p`; it picks its first waypoint on the next advance.
    pub fn at_rest(p: Point) -> Self {
        Self {
            position: p,
            waypoint: p,
            speed: 0.0,
            pause_until: 0.0,
        }
    }
}

/// Draws the next leg: a waypoint reachable in a straight, obstacle-free line
/// and a speed in `[v_min, v_max]`. Keeps the node in place when every try
/// is blocked; it tries again after another pause.
fn next_leg(
    node: &mut NodeKinematics,
    area: &Area,
    params: &MobilityParams,
    stream: &mut RandomStream,
    t: f64,
) {
    const LEG_RETRIES: usize = 64;
    for _ in 0..LEG_RETRIES {
        let Ok(wp) = sample_waypoint(stream, area) else {
            break;
        };
        if area.segment_clear(node.position, wp) {
            node.waypoint = wp;
            node.speed = stream.uniform(params.v_min, params.v_max);
            return;
        }
    }
    node.pause_until = t + stream.uniform(params.pause_min, params.pause_max).max(1e-3);
}

/// Moves the node along its current leg for `dt` seconds starting at `now`.
pub fn advance(
    mut node: NodeKinematics,
    now: f64,
    dt: f64,
    area: &Area,
    params: &MobilityParams,
    stream: &mut RandomStream,
) -> NodeKinematics {
    if params.is_static() || dt <= 0.0 {
        return node;
    }
    let end = now + dt;
    let mut t = now;
    // Bounded: each iteration either consumes time or arrives at a waypoint.
    for _ in 0..1024 {
        if node.pause_until > t {
            if node.pause_until >= end {
                break;
            }
            t = node.pause_until;
        }
        if node.position == node.waypoint {
            next_leg(&mut node, area, params, stream, t);
            if node.position == node.waypoint {
                continue;
            }
        }
        if node.speed <= 0.0 {
            break;
        }
        let dist = node.position.dist(node.waypoint);
        let travel = dist / node.speed;
        if t + travel <= end {
            node.position = node.waypoint;
            t += travel;
            node.pause_until = t + stream.uniform(params.pause_min, params.pause_max);
            if node.pause_until >= end {
                break;
            }
        } else {
            let frac = (end - t) * node.speed / dist;
            node.position = Point::new(
                node.position.x + (node.waypoint.x - node.position.x) * frac,
                node.position.y + (node.waypoint.y - node.position.y) * frac,
            );
            break;
        }
    }
    node
}

/// Deterministic reception range standing in for two-ray ground propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub radius: f64,
}

impl LinkModel {
    pub fn linked(&self, area: &Area, a: Point, b: Point) -> bool {
        a.dist(b) <= self.radius && area.segment_clear(a, b)
    }
}

/// Nodes within range of `id` with clear line of sight, excluding itself.
pub fn neighbors(positions: &[Point], link: &LinkModel, area: &Area, id: NodeId) -> Vec<NodeId> {
    let me = positions[id.idx()];
    positions
        .iter()
        .enumerate()
        .filter(|&(j, p)| j != id.idx() && link.linked(area, me, *p))
        .map(|(j, _)| NodeId::from(j))
        .collect()
}

/// Full adjacency list; nodes with `present[i] == false` have no links.
pub fn adjacency(
    positions: &[Point],
    present: &[bool],
    link: &LinkModel,
    area: &Area,
) -> Vec<Vec<NodeId>> {
    let n = positions.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        if !present[i] {
            continue;
        }
        for j in (i + 1)..n {
            if present[j] && link.linked(area, positions[i], positions[j]) {
                adj[i].push(NodeId::from(j));
                adj[j].push(NodeId::from(i));
            }
        }
    }
    adj
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> RandomStream {
        RandomStream::new(7)
    }

    #[test]
    fn waypoint_in_unit_square() {
        let area = Area::open(1.0, 1.0);
        let mut s = stream();
        for _ in 0..100 {
            let p = sample_waypoint(&mut s, &area).unwrap();
            assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
        }
    }

    #[test]
    fn waypoints_avoid_left_half_obstacle() {
        let area = Area {
            width: 1.0,
            height: 1.0,
            obstacles: vec![Rect {
                x: 0.0,
                y: 0.0,
                w: 0.5,
                h: 1.0,
            }],
        };
        let mut s = stream();
        for _ in 0..10_000 {
            let p = sample_waypoint(&mut s, &area).unwrap();
            assert!(p.x >= 0.5, "{p:?} inside obstacle");
        }
    }

    #[test]
    fn fully_blocked_area_fails() {
        let area = Area {
            width: 1.0,
            height: 1.0,
            obstacles: vec![Rect {
                x: 0.0,
                y: 0.0,
                w: 1.0,
                h: 1.0,
            }],
        };
        // Boundary points are technically free; they are measure zero.
        assert!(matches!(
            sample_waypoint(&mut stream(), &area),
            Err(MobilityError::NoFreeSpace(_))
        ));
    }

    #[test]
    fn waypoint_sequence_is_reproducible() {
        let area = Area::open(100.0, 100.0);
        let mut a = stream();
        let mut b = stream();
        for _ in 0..20 {
            assert_eq!(
                sample_waypoint(&mut a, &area).unwrap(),
                sample_waypoint(&mut b, &area).unwrap()
            );
        }
    }

    #[test]
    fn straight_line_kinematics() {
        let node = NodeKinematics {
            position: Point::new(0.0, 0.0),
            waypoint: Point::new(10.0, 0.0),
            speed: 1.0,
            pause_until: 0.0,
        };
        let area = Area::open(100.0, 100.0);
        let moved = advance(
            node,
            0.0,
            3.0,
            &area,
            &MobilityParams::default(),
            &mut stream(),
        );
        assert!((moved.position.x - 3.0).abs() < 1e-12);
        assert_eq!(moved.position.y, 0.0);
    }

    #[test]
    fn arrival_starts_pause() {
        let node = NodeKinematics {
            position: Point::new(0.0, 0.0),
            waypoint: Point::new(10.0, 0.0),
            speed: 2.0,
            pause_until: 0.0,
        };
        let params = MobilityParams {
            pause_min: 5.0,
            pause_max: 5.0,
            ..MobilityParams::default()
        };
        let moved = advance(
            node,
            0.0,
            5.0,
            &Area::open(100.0, 100.0),
            &params,
            &mut stream(),
        );
        assert_eq!(moved.position, Point::new(10.0, 0.0));
        assert_eq!(moved.pause_until, 10.0);
    }

    #[test]
    fn stationary_nodes_stay_put() {
        let node = NodeKinematics::at_rest(Point::new(3.0, 4.0));
        let moved = advance(
            node,
            0.0,
            1000.0,
            &Area::open(10.0, 10.0),
            &MobilityParams::stationary(),
            &mut stream(),
        );
        assert_eq!(moved, node);
    }

    #[test]
    fn neighbor_threshold() {
        let link = LinkModel { radius: 10.0 };
        let area = Area::open(100.0, 100.0);
        let pos = [Point::new(0.0, 0.0), Point::new(5.0, 0.0)];
        assert_eq!(neighbors(&pos, &link, &area, NodeId(0)), vec![NodeId(1)]);
        assert_eq!(neighbors(&pos, &link, &area, NodeId(1)), vec![NodeId(0)]);
        let far = [Point::new(0.0, 0.0), Point::new(10.01, 0.0)];
        assert!(neighbors(&far, &link, &area, NodeId(0)).is_empty());
        assert!(neighbors(&far, &link, &area, NodeId(1)).is_empty());
    }

    #[test]
    fn grid_gives_four_connectivity() {
        let link = LinkModel { radius: 10.0 };
        let area = Area::open(100.0, 100.0);
        let pos: Vec<Point> = (0..9)
            .map(|i| Point::new(10.0 * (i % 3) as f64, 10.0 * (i / 3) as f64))
            .collect();
        // Oracle: brute-force distance matrix.
        for i in 0..9 {
            let mut expected: Vec<NodeId> = (0..9)
                .filter(|&j| j != i && pos[i].dist(pos[j]) <= 10.0 + 1e-9)
                .map(NodeId::from)
                .collect();
            expected.sort();
            assert_eq!(neighbors(&pos, &link, &area, NodeId::from(i)), expected);
            let manhattan: usize = (0..9)
                .filter(|&j| {
                    let (xi, yi, xj, yj) = (i % 3, i / 3, j % 3, j / 3);
                    xi.abs_diff(xj) + yi.abs_diff(yj) == 1
                })
                .count();
            assert_eq!(expected.len(), manhattan);
        }
    }

    #[test]
    fn obstacle_blocks_line_of_sight() {
        let area = Area {
            width: 100.0,
            height: 100.0,
            obstacles: vec![Rect {
                x: 4.0,
                y: 0.0,
                w: 2.0,
                h: 10.0,
            }],
        };
        let link = LinkModel { radius: 50.0 };
        let pos = [
            Point::new(0.0, 5.0),
            Point::new(10.0, 5.0),
            Point::new(0.0, 20.0),
        ];
        assert!(neighbors(&pos, &link, &area, NodeId(0)) == vec![NodeId(2)]);
    }

    #[test]
    fn segment_touching_corner_is_clear() {
        let r = Rect {
            x: 1.0,
            y: 1.0,
            w: 1.0,
            h: 1.0,
        };
        assert!(!r.intersects_segment(Point::new(0.0, 0.0), Point::new(1.0, 1.0)));
        assert!(!r.intersects_segment(Point::new(0.0, 1.0), Point::new(3.0, 1.0)));
        assert!(r.intersects_segment(Point::new(0.0, 1.5), Point::new(3.0, 1.5)));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn positions_stay_free(seed in 0u64..500, steps in 1usize..200) {
                let area = Area {
                    width: 200.0,
                    height: 200.0,
                    obstacles: vec![
                        Rect { x: 40.0, y: 40.0, w: 30.0, h: 60.0 },
                        Rect { x: 120.0, y: 10.0, w: 50.0, h: 20.0 },
                    ],
                };
                let params = MobilityParams { v_min: 5.0, v_max: 20.0, pause_min: 0.0, pause_max: 2.0 };
                let mut s = RandomStream::new(seed);
                let mut node = NodeKinematics::at_rest(sample_waypoint(&mut s, &area).unwrap());
                let mut t = 0.0;
                for _ in 0..steps {
                    node = advance(node, t, 0.5, &area, &params, &mut s);
                    t += 0.5;
                    prop_assert!(area.is_free(node.position), "{:?}", node.position);
                    if node.position != node.waypoint {
                        prop_assert!(node.speed >= params.v_min && node.speed <= params.v_max);
                    }
                }
            }

            #[test]
            fn links_are_symmetric(seed in 0u64..500) {
                let area = Area {
                    width: 300.0,
                    height: 300.0,
                    obstacles: vec![Rect { x: 100.0, y: 100.0, w: 80.0, h: 80.0 }],
                };
                let mut s = RandomStream::new(seed);
                let pos: Vec<Point> = (0..15).map(|_| sample_waypoint(&mut s, &area).unwrap()).collect();
                let link = LinkModel { radius: 90.0 };
                for a in 0..pos.len() {
                    for b in neighbors(&pos, &link, &area, NodeId::from(a)) {
                        prop_assert!(neighbors(&pos, &link, &area, b).contains(&NodeId::from(a)));
                    }
                }
            }
        }
    }
}
