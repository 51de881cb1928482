//! Kinematic wheelchair twin in a 2-D world with rectangular obstacles.
//!
//! Heading is in degrees, clockwise from +y, so heading 0 moves along +y and
//! heading 90 along +x.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::Command;
use crate::error::{Error, Result};

pub const MAX_STEP_S: f64 = 0.1;

fn normalize_heading(h: f64) -> f64 {
    let r = h.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Unit vector of motion for a heading; exact at the four axis headings.
fn heading_unit(h: f64) -> (f64, f64) {
    match h {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => {
            let r = h.to_radians();
            (r.sin(), r.cos())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChairParams {
    pub speed_mps: f64,
    pub turn_duration_s: f64,
}

impl Default for ChairParams {
    fn default() -> Self {
        Self {
            speed_mps: 0.5,
            turn_duration_s: 1.5,
        }
    }
}

impl ChairParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_mps.is_finite() && self.speed_mps > 0.0) {
            return Err(Error::validation(format!("chair speed must be > 0, got {}", self.speed_mps)));
        }
        if !(self.turn_duration_s.is_finite() && self.turn_duration_s > 0.0) {
            return Err(Error::validation(format!(
                "turn duration must be > 0, got {}",
                self.turn_duration_s
            )));
        }
        Ok(())
    }

    /// Angular rate in degrees per second.
    pub fn turn_rate_deg_s(&self) -> f64 {
        90.0 / self.turn_duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    fn is_valid(&self) -> bool {
        [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite())
            && self.min_x < self.max_x
            && self.min_y < self.max_y
    }

    fn contains_rect(&self, o: &Rect) -> bool {
        o.min_x >= self.min_x && o.max_x <= self.max_x && o.min_y >= self.min_y && o.max_y <= self.max_y
    }

    /// Whether a disc of radius `r` at `(x, y)` overlaps the rectangle's interior.
    pub fn overlaps_disc(&self, x: f64, y: f64, r: f64) -> bool {
        let dx = x - x.clamp(self.min_x, self.max_x);
        let dy = y - y.clamp(self.min_y, self.max_y);
        dx * dx + dy * dy < r * r
    }

    /// Whether a disc of radius `r` at `(x, y)` lies entirely inside.
    pub fn contains_disc(&self, x: f64, y: f64, r: f64) -> bool {
        x - r >= self.min_x && x + r <= self.max_x && y - r >= self.min_y && y + r <= self.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub bounds: Rect,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    pub footprint_radius: f64,
    pub start: Pose,
}

impl Default for World {
    /// Empty 10 m x 10 m room with the chair in the middle facing +y.
    fn default() -> Self {
        Self {
            bounds: Rect::new(0.0, 0.0, 10.0, 10.0),
            obstacles: Vec::new(),
            footprint_radius: 0.3,
            start: Pose {
                x: 5.0,
                y: 5.0,
                heading_deg: 0.0,
            },
        }
    }
}

impl World {
    pub fn validate(&self) -> Result<()> {
        if !self.bounds.is_valid() {
            return Err(Error::validation("world bounds must be a non-empty rectangle"));
        }
        if !(self.footprint_radius.is_finite() && self.footprint_radius > 0.0) {
            return Err(Error::validation(format!(
                "footprint radius must be > 0, got {}",
                self.footprint_radius
            )));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.is_valid() || !self.bounds.contains_rect(o) {
                return Err(Error::validation(format!("obstacle {i} is empty or outside the world bounds")));
            }
        }
        if !self.is_free(self.start.x, self.start.y) {
            return Err(Error::validation("start pose footprint collides with the world"));
        }
        if !self.start.heading_deg.is_finite() {
            return Err(Error::validation("start heading must be finite"));
        }
        Ok(())
    }

    /// Whether the footprint at `(x, y)` is inside bounds and clear of obstacles.
    pub fn is_free(&self, x: f64, y: f64) -> bool {
        let r = self.footprint_radius;
        self.bounds.contains_disc(x, y, r) && !self.obstacles.iter().any(|o| o.overlaps_disc(x, y, r))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let world: World = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("world file {}: {e}", path.display())))?;
        world.validate()?;
        Ok(world)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Mode {
    Idle,
    Translating,
    Turning { target_deg: f64, rate_deg_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairState {
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
    /// Signed speed along the heading, m/s.
    pub velocity: f64,
    pub mode: Mode,
    /// Set when the last step was blocked by a collision.
    pub collided: bool,
    /// Commands received mid-turn, applied when the turn completes.
    pub queued: VecDeque<Command>,
}

impl ChairState {
    pub fn at(pose: Pose) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            heading_deg: normalize_heading(pose.heading_deg),
            velocity: 0.0,
            mode: Mode::Idle,
            collided: false,
            queued: VecDeque::new(),
        }
    }
}

pub fn apply_command(state: &mut ChairState, command: Command, params: &ChairParams) {
    if command == Command::Stop {
        state.mode = Mode::Idle;
        state.velocity = 0.0;
        state.queued.clear();
        return;
    }
    if matches!(state.mode, Mode::Turning { .. }) {
        state.queued.push_back(command);
        return;
    }
    state.collided = false;
    match command {
        Command::Forward | Command::Backward => {
            state.mode = Mode::Translating;
            state.velocity = if command == Command::Forward {
                params.speed_mps
            } else {
                -params.speed_mps
            };
        }
        Command::TurnLeft | Command::TurnRight => {
            let (delta, rate) = if command == Command::TurnRight {
                (90.0, params.turn_rate_deg_s())
            } else {
                (-90.0, -params.turn_rate_deg_s())
            };
            state.velocity = 0.0;
            state.mode = Mode::Turning {
                target_deg: normalize_heading(state.heading_deg + delta),
                rate_deg_s: rate,
            };
        }
        Command::Stop => unreachable!(),
    }
}

/// Advances the state by `dt_s` seconds.
pub fn step(state: &mut ChairState, world: &World, params: &ChairParams, dt_s: f64) -> Result<()> {
    if !(dt_s > 0.0 && dt_s <= MAX_STEP_S) {
        return Err(Error::validation(format!("step dt must be in (0, {MAX_STEP_S}], got {dt_s}")));
    }
    match state.mode {
        Mode::Idle => {}
        Mode::Translating => {
            let (ux, uy) = heading_unit(state.heading_deg);
            let nx = state.x + state.velocity * dt_s * ux;
            let ny = state.y + state.velocity * dt_s * uy;
            if world.is_free(nx, ny) {
                state.x = nx;
                state.y = ny;
            } else {
                state.mode = Mode::Idle;
                state.velocity = 0.0;
                state.collided = true;
            }
        }
        Mode::Turning { target_deg, rate_deg_s } => {
            let remaining = if rate_deg_s > 0.0 {
                (target_deg - state.heading_deg).rem_euclid(360.0)
            } else {
                (state.heading_deg - target_deg).rem_euclid(360.0)
            };
            let advance = rate_deg_s.abs() * dt_s;
            if remaining <= advance + 1e-9 {
                state.heading_deg = target_deg;
                state.mode = Mode::Idle;
                while let Some(next) = state.queued.pop_front() {
                    apply_command(state, next, params);
                    if matches!(state.mode, Mode::Turning { .. }) {
                        break;
                    }
                }
            } else {
                state.heading_deg = normalize_heading(state.heading_deg + rate_deg_s * dt_s);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
    pub velocity: f64,
    pub mode: Mode,
    pub collided: bool,
    /// Collisions since the simulator started.
    pub collisions: u64,
}

pub fn telemetry(state: &ChairState, t: f64, collisions: u64) -> Telemetry {
    Telemetry {
        t,
        x: state.x,
        y: state.y,
        heading_deg: state.heading_deg,
        velocity: state.velocity,
        mode: state.mode,
        collided: state.collided,
        collisions,
    }
}

/// Chair state plus a signal-time clock that emits telemetry at a fixed rate.
#[derive(Debug, Clone)]
pub struct Simulator {
    state: ChairState,
    world: World,
    params: ChairParams,
    rate_hz: f64,
    t: f64,
    next_tick: u64,
    collisions: u64,
}

impl Simulator {
    pub fn new(world: World, params: ChairParams, telemetry_rate_hz: f64) -> Result<Self> {
        world.validate()?;
        params.validate()?;
        if !(telemetry_rate_hz.is_finite() && telemetry_rate_hz > 0.0) {
            return Err(Error::validation(format!(
                "telemetry rate must be > 0, got {telemetry_rate_hz}"
            )));
        }
        Ok(Self {
            state: ChairState::at(world.start),
            world,
            params,
            rate_hz: telemetry_rate_hz,
            t: 0.0,
            next_tick: 0,
            collisions: 0,
        })
    }

    /// Starts the clock at `t` instead of zero.
    pub fn starting_at(mut self, t: f64) -> Self {
        self.t = t;
        self.next_tick = (t * self.rate_hz).ceil().max(0.0) as u64;
        self
    }

    pub fn state(&self) -> &ChairState {
        &self.state
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    pub fn snapshot(&self) -> Telemetry {
        telemetry(&self.state, self.t, self.collisions)
    }

    fn integrate(&mut self, mut dt: f64) {
        while dt > 1e-12 {
            let h = dt.min(MAX_STEP_S);
            let was = self.state.collided;
            step(&mut self.state, &self.world, &self.params, h).expect("step size in range");
            if self.state.collided && !was {
                self.collisions += 1;
            }
            dt -= h;
        }
    }

    /// Runs the clock forward to `t`, returning the telemetry ticks passed.
    pub fn advance_to(&mut self, t: f64) -> Vec<Telemetry> {
        let mut out = Vec::new();
        loop {
            let tick_t = self.next_tick as f64 / self.rate_hz;
            if tick_t > t {
                break;
            }
            self.integrate(tick_t - self.t);
            self.t = self.t.max(tick_t);
            self.next_tick += 1;
            out.push(self.snapshot());
        }
        if t > self.t {
            self.integrate(t - self.t);
            self.t = t;
        }
        out
    }

    pub fn apply(&mut self, command: Command) {
        apply_command(&mut self.state, command, &self.params);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(state: &mut ChairState, world: &World, seconds: f64) {
        let n = (seconds / 0.05).round() as usize;
        for _ in 0..n {
            step(state, world, &ChairParams::default(), 0.05).unwrap();
        }
    }

    fn origin_world() -> World {
        World {
            bounds: Rect::new(-10.0, -10.0, 10.0, 10.0),
            start: Pose {
                x: 0.0,
                y: 0.0,
                heading_deg: 0.0,
            },
            ..World::default()
        }
    }

    #[test]
    fn turn_targets() {
        let p = ChairParams::default();
        let mut s = ChairState::at(origin_world().start);
        apply_command(&mut s, Command::TurnRight, &p);
        assert!(matches!(s.mode, Mode::Turning { target_deg, .. } if target_deg == 90.0));
        let mut s = ChairState::at(origin_world().start);
        apply_command(&mut s, Command::TurnLeft, &p);
        assert!(matches!(s.mode, Mode::Turning { target_deg, .. } if target_deg == 270.0));
    }

    #[test]
    fn stop_goes_idle() {
        let p = ChairParams::default();
        let mut s = ChairState::at(origin_world().start);
        apply_command(&mut s, Command::Forward, &p);
        apply_command(&mut s, Command::Stop, &p);
        assert_eq!(s.mode, Mode::Idle);
        assert_eq!(s.velocity, 0.0);
    }

    #[test]
    fn forward_one_second() {
        let w = origin_world();
        let mut s = ChairState::at(w.start);
        apply_command(&mut s, Command::Forward, &ChairParams::default());
        for _ in 0..10 {
            step(&mut s, &w, &ChairParams::default(), 0.1).unwrap();
        }
        assert!((s.x - 0.0).abs() < 1e-12 && (s.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn four_right_turns_return_to_start_heading() {
        let w = origin_world();
        let p = ChairParams::default();
        let mut s = ChairState::at(w.start);
        for _ in 0..4 {
            apply_command(&mut s, Command::TurnRight, &p);
            run(&mut s, &w, 2.0);
            assert_eq!(s.mode, Mode::Idle);
        }
        assert_eq!(s.heading_deg, 0.0);
    }

    #[test]
    fn forward_then_backward_returns_home() {
        let w = origin_world();
        let p = ChairParams::default();
        let mut s = ChairState::at(w.start);
        apply_command(&mut s, Command::TurnRight, &p);
        run(&mut s, &w, 1.0);
        apply_command(&mut s, Command::Stop, &p);
        let (x0, y0) = (s.x, s.y);
        apply_command(&mut s, Command::Forward, &p);
        run(&mut s, &w, 3.0);
        apply_command(&mut s, Command::Backward, &p);
        run(&mut s, &w, 3.0);
        assert!((s.x - x0).abs() < 1e-9 && (s.y - y0).abs() < 1e-9);
    }

    #[test]
    fn commands_during_turn_are_queued() {
        let w = origin_world();
        let p = ChairParams::default();
        let mut s = ChairState::at(w.start);
        apply_command(&mut s, Command::TurnRight, &p);
        apply_command(&mut s, Command::TurnRight, &p);
        apply_command(&mut s, Command::Forward, &p);
        assert_eq!(s.queued.len(), 2);
        run(&mut s, &w, 1.6);
        assert!(matches!(s.mode, Mode::Turning { target_deg, .. } if target_deg == 180.0));
        run(&mut s, &w, 1.6);
        assert_eq!(s.mode, Mode::Translating);
        assert_eq!(s.heading_deg, 180.0);
    }

    #[test]
    fn dt_out_of_range_rejected() {
        let w = origin_world();
        let mut s = ChairState::at(w.start);
        for dt in [0.0, -0.1, 0.11] {
            assert!(step(&mut s, &w, &ChairParams::default(), dt).is_err());
        }
    }

    #[test]
    fn wall_stops_the_chair() {
        let w = World::default();
        let mut s = ChairState::at(w.start);
        apply_command(&mut s, Command::Forward, &ChairParams::default());
        run(&mut s, &w, 20.0);
        assert_eq!(s.mode, Mode::Idle);
        assert!(s.collided);
        assert!(s.y + w.footprint_radius <= 10.0);
    }

    #[test]
    fn telemetry_heading_advances_at_turn_rate() {
        let mut sim = Simulator::new(World::default(), ChairParams::default(), 20.0).unwrap();
        sim.apply(Command::TurnRight);
        let ticks = sim.advance_to(1.0);
        let omega = ChairParams::default().turn_rate_deg_s();
        for w in ticks.windows(2).skip(1) {
            assert!((w[1].heading_deg - w[0].heading_deg - omega * 0.05).abs() < 1e-9);
        }
        let idle = Simulator::new(World::default(), ChairParams::default(), 20.0).unwrap();
        assert_eq!(idle.snapshot().velocity, 0.0);
    }

    #[test]
    fn telemetry_round_trips_through_json() {
        let mut sim = Simulator::new(World::default(), ChairParams::default(), 20.0).unwrap();
        sim.apply(Command::TurnLeft);
        for t in sim.advance_to(0.7) {
            let back: Telemetry = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn simulator_ticks_at_fixed_rate() {
        let mut sim = Simulator::new(World::default(), ChairParams::default(), 20.0).unwrap();
        let ticks = sim.advance_to(2.0);
        assert_eq!(ticks.len(), 41);
        assert_eq!(ticks[40].t, 2.0);
        assert_eq!(sim.advance_to(2.01).len(), 0);
    }

    #[test]
    fn world_validation() {
        let mut w = World::default();
        w.obstacles.push(Rect::new(9.0, 9.0, 11.0, 11.0));
        assert!(w.validate().is_err());
        let mut w = World::default();
        w.footprint_radius = 0.0;
        assert!(w.validate().is_err());
        let mut w = World::default();
        w.obstacles.push(Rect::new(4.8, 4.8, 5.2, 5.2));
        assert!(w.validate().is_err());
    }

    fn command() -> impl Strategy<Value = Command> {
        prop::sample::select(Command::ALL.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn footprint_never_overlaps(cmds in prop::collection::vec((command(), 1usize..40), 1..60)) {
            let w = World {
                obstacles: vec![Rect::new(2.0, 2.0, 4.0, 3.0), Rect::new(6.0, 6.5, 7.0, 9.0)],
                ..World::default()
            };
            let p = ChairParams::default();
            let mut s = ChairState::at(w.start);
            for (c, n) in cmds {
                apply_command(&mut s, c, &p);
                for _ in 0..n {
                    step(&mut s, &w, &p, 0.1).unwrap();
                    prop_assert!(w.is_free(s.x, s.y));
                    prop_assert!((0.0..360.0).contains(&s.heading_deg));
                }
            }
        }

        #[test]
        fn completed_turns_stay_on_the_grid(turns in prop::collection::vec(prop::bool::ANY, 1..200)) {
            let w = origin_world();
            let p = ChairParams::default();
            let mut s = ChairState::at(w.start);
            for right in turns {
                apply_command(&mut s, if right { Command::TurnRight } else { Command::TurnLeft }, &p);
                while s.mode != Mode::Idle {
                    step(&mut s, &w, &p, 0.07).unwrap();
                }
                prop_assert_eq!(s.heading_deg % 90.0, 0.0);
            }
        }
    }
}
