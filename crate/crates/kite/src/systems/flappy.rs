//! Frame-based side-scrolling bird hopper: constant horizontal speed,
//! gravity, binary upward thrust, and pillar obstacles with fixed-height
//! gaps. Costs reward clearance from the pillars; the terminal objective is
//! vertical deviation from the final gap center.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Obstacle;

/// Horizontal speed in px/frame.
pub const BIRD_VX: f64 = 5.0;
/// Gravity in px/frame^2.
pub const GRAVITY: f64 = -1.0;
/// Thrust in px/frame^2 while the control is active.
pub const FLAP: f64 = 9.0;
/// Vertical-velocity clip bounds in px/frame.
pub const VY_MIN: f64 = -10.0;
pub const VY_MAX: f64 = 10.0;
/// Clearance cap so the frame cost keeps a strictly positive floor even on
/// pillar-free layouts.
pub const MAX_CLEARANCE: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlappyState {
    pub px: f64,
    pub py: f64,
    pub vy: f64,
}

impl FlappyState {
    pub fn new(px: f64, py: f64, vy: f64) -> Self {
        FlappyState { px, py, vy }
    }
}

/// One frame of dynamics: horizontal advance, vertical advance by the
/// current velocity, then the velocity update (gravity plus optional
/// thrust) with clipping.
pub fn flappy_step(x: &FlappyState, flap: bool) -> FlappyState {
    let accel = GRAVITY + if flap { FLAP } else { 0.0 };
    FlappyState {
        px: x.px + BIRD_VX,
        py: x.py + x.vy,
        vy: (x.vy + accel).clamp(VY_MIN, VY_MAX),
    }
}

/// A vertical pillar pair: solid below and above a gap of fixed height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pillar {
    /// Left edge, px.
    pub x: f64,
    pub width: f64,
    /// Vertical center of the gap, px.
    pub gap_center: f64,
    pub gap_height: f64,
}

impl Pillar {
    fn rects(&self, screen_h: f64) -> [Obstacle; 2] {
        let lower_top = self.gap_center - self.gap_height / 2.0;
        let upper_bottom = self.gap_center + self.gap_height / 2.0;
        [
            Obstacle::Rect { x: self.x, y: 0.0, w: self.width, h: lower_top },
            Obstacle::Rect {
                x: self.x,
                y: upper_bottom,
                w: self.width,
                h: screen_h - upper_bottom,
            },
        ]
    }

    /// Signed distance to the nearest solid part; negative inside.
    pub fn clearance(&self, px: f64, py: f64, screen_h: f64) -> f64 {
        let [a, b] = self.rects(screen_h);
        a.clearance(px, py).min(b.clearance(px, py))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlappyLayout {
    pub screen_w: f64,
    pub screen_h: f64,
    pub pillars: Vec<Pillar>,
    /// Reaching px >= goal_x completes the task.
    pub goal_x: f64,
    pub start: FlappyState,
}

impl FlappyLayout {
    pub fn in_screen(&self, x: &FlappyState) -> bool {
        x.px >= 0.0 && x.px <= self.screen_w && x.py >= 0.0 && x.py <= self.screen_h
    }

    /// Signed distance to the nearest pillar (uncapped, negative inside).
    fn raw_clearance(&self, x: &FlappyState) -> f64 {
        self.pillars
            .iter()
            .map(|p| p.clearance(x.px, x.py, self.screen_h))
            .fold(MAX_CLEARANCE, f64::min)
    }

    /// Clearance used by the cost: clamped to [0, MAX_CLEARANCE].
    pub fn clearance(&self, x: &FlappyState) -> f64 {
        self.raw_clearance(x).clamp(0.0, MAX_CLEARANCE)
    }

    pub fn valid(&self, x: &FlappyState) -> bool {
        self.in_screen(x) && self.raw_clearance(x) > 0.0
    }

    /// Per-frame running cost, decreasing in clearance and strictly
    /// positive: 1 / (clearance + 1).
    pub fn frame_cost(&self, x: &FlappyState) -> f64 {
        1.0 / (self.clearance(x) + 1.0)
    }

    pub fn goal_hit(&self, x: &FlappyState) -> bool {
        x.px >= self.goal_x
    }

    /// Vertical center of the final gap (screen center without pillars).
    pub fn goal_gap_center(&self) -> f64 {
        self.pillars
            .last()
            .map(|p| p.gap_center)
            .unwrap_or(self.screen_h / 2.0)
    }

    /// Terminal objective: vertical deviation from the final gap center,
    /// normalized by screen height so it is commensurate with the
    /// accumulated frame costs.
    pub fn terminal_deviation(&self, x: &FlappyState) -> f64 {
        (x.py - self.goal_gap_center()).abs() / self.screen_h
    }

    /// Full-size layout: 720x480 screen, three 60 px pillars with 120 px
    /// gaps at uniformly random vertical offsets.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> FlappyLayout {
        let (screen_w, screen_h) = (720.0, 480.0);
        let gap_height = 120.0;
        let width = 60.0;
        let margin = 40.0;
        let lo = margin + gap_height / 2.0;
        let hi = screen_h - margin - gap_height / 2.0;
        let pillars = (0..3)
            .map(|i| Pillar {
                x: 210.0 + 150.0 * i as f64,
                width,
                gap_center: rng.gen_range(lo..hi),
                gap_height,
            })
            .collect::<Vec<_>>();
        let goal_x = pillars.last().unwrap().x + width + 90.0;
        FlappyLayout {
            screen_w,
            screen_h,
            pillars,
            goal_x,
            start: FlappyState::new(60.0, 240.0, 0.0),
        }
    }

    /// Tiny instance sized for exhaustive control enumeration: the screen
    /// ends exactly at the goal line, so every feasible trajectory runs
    /// exactly (goal_x - start.px) / BIRD_VX = 20 frames.
    pub fn tiny() -> FlappyLayout {
        let pillars = vec![
            Pillar { x: 20.0, width: 10.0, gap_center: 240.0, gap_height: 120.0 },
            Pillar { x: 45.0, width: 10.0, gap_center: 170.0, gap_height: 120.0 },
            Pillar { x: 70.0, width: 10.0, gap_center: 280.0, gap_height: 120.0 },
        ];
        FlappyLayout {
            screen_w: 100.0,
            screen_h: 480.0,
            pillars,
            goal_x: 100.0,
            start: FlappyState::new(0.0, 240.0, 0.0),
        }
    }
}
