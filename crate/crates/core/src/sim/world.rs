//! World state and the per-tick step function.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{parse_clock, ConfigError, Point, ScenarioConfig, ScheduledKind, DEPOT};
use crate::event::{Event, Millis};

pub const TICK_MS: Millis = 60_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: String,
    pub center: Point,
    pub radius: f64,
    pub customers: Vec<String>,
}

impl Zone {
    pub fn contains(&self, p: Point) -> bool {
        self.center.dist(p) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteStop {
    /// Customer id or `depot`.
    pub stop: String,
    pub pos: Point,
    pub planned: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruckState {
    pub id: String,
    pub pos: Point,
    pub speed: f64,
    pub fuel: f64,
    pub fuel_rate: f64,
    pub route: Vec<RouteStop>,
    /// Index of the next stop; equals `route.len()` once the route is done.
    pub leg: usize,
    pub inside: BTreeSet<String>,
    /// Lateness at the most recent stop, in minutes.
    pub delay: i64,
}

impl TruckState {
    pub fn remaining(&self) -> &[RouteStop] {
        &self.route[self.leg..]
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub tick: u64,
    pub depot: Point,
    pub customers: Vec<(String, Point)>,
    pub zones: Vec<Zone>,
    pub trucks: Vec<TruckState>,
    schedule: Vec<super::config::ScheduledEvent>,
    jitter: f64,
    start_minute: u32,
    cutoff_minute: u32,
    rng: ChaCha8Rng,
    next_id: u64,
    next_request: u64,
}

impl World {
    pub fn init(cfg: &ScenarioConfig, seed: u64) -> Result<World, ConfigError> {
        cfg.validate()?;
        let zones: Vec<Zone> = cfg
            .zones
            .iter()
            .map(|(id, z)| Zone {
                id: id.clone(),
                center: Point { x: z.x, y: z.y },
                radius: z.radius,
                customers: z.customers.clone(),
            })
            .collect();
        let trucks = cfg
            .trucks
            .iter()
            .map(|(id, t)| {
                let pos = cfg.depot;
                TruckState {
                    id: id.clone(),
                    pos,
                    speed: t.speed,
                    fuel: t.fuel,
                    fuel_rate: t.fuel_rate,
                    route: t
                        .route
                        .iter()
                        .map(|s| RouteStop {
                            stop: s.at.clone(),
                            pos: cfg.position(&s.at).expect("validated"),
                            planned: s.planned,
                        })
                        .collect(),
                    leg: 0,
                    inside: zones.iter().filter(|z| z.contains(pos)).map(|z| z.id.clone()).collect(),
                    delay: 0,
                }
            })
            .collect();
        let mut schedule = cfg.schedule.clone();
        schedule.sort_by_key(|s| s.tick);
        Ok(World {
            tick: 0,
            depot: cfg.depot,
            customers: cfg.customers.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            zones,
            trucks,
            schedule,
            jitter: cfg.run.jitter,
            start_minute: parse_clock(&cfg.run.start_clock)?,
            cutoff_minute: parse_clock(&cfg.run.cutoff)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
            next_request: 0,
        })
    }

    pub fn now(&self) -> Millis {
        self.tick as Millis * TICK_MS
    }

    /// Minutes since midnight at the current tick.
    pub fn minute_of_day(&self) -> u32 {
        ((self.start_minute as u64 + self.tick) % (24 * 60)) as u32
    }

    pub fn position_of(&self, id: &str) -> Option<Point> {
        if id == DEPOT {
            return Some(self.depot);
        }
        self.customers.iter().find(|(c, _)| c == id).map(|(_, p)| *p)
    }

    fn event(&mut self, etype: &str, topic: &str, source: &str) -> Event {
        self.next_id += 1;
        Event::simple(format!("sim-{}", self.next_id), etype, topic, self.now(), source)
    }

    /// Advance one tick and return the events it produced.
    pub fn step(&mut self) -> Vec<Event> {
        self.tick += 1;
        let mut out = Vec::new();
        let minute = self.minute_of_day() as i64;
        let clock = format!("{:02}:{:02}", minute / 60, minute % 60);
        let tick = self.tick as i64;
        let cutoff = self.cutoff_minute as i64;
        out.push(
            self.event("ClockTick", "sim.clock", "sim")
                .with_attr("tick", tick)
                .with_attr("minute", minute)
                .with_attr("clock", clock)
                .with_attr("cutoff", cutoff),
        );

        for i in 0..self.trucks.len() {
            // One draw per truck and tick keeps the stream aligned across configs.
            let u: f64 = self.rng.gen_range(-1.0..=1.0);
            let factor = 1.0 + self.jitter * u;
            let arrivals = self.advance(i, factor);
            let t = self.trucks[i].clone();
            out.push(
                self.event("GpsPosition", "trucks.gps", "trucks")
                    .with_attr("truck", t.id.as_str())
                    .with_attr("x", t.pos.x)
                    .with_attr("y", t.pos.y),
            );
            out.push(
                self.event("FuelLevel", "trucks.fuel", "trucks")
                    .with_attr("truck", t.id.as_str())
                    .with_attr("level", t.fuel),
            );
            let now_inside: BTreeSet<String> = self
                .zones
                .iter()
                .filter(|z| z.contains(t.pos))
                .map(|z| z.id.clone())
                .collect();
            for z in t.inside.difference(&now_inside) {
                out.push(
                    self.event("TruckExitedZone", "trucks.zone", "trucks")
                        .with_attr("truck", t.id.as_str())
                        .with_attr("zone", z.as_str()),
                );
            }
            for z in now_inside.difference(&t.inside) {
                out.push(
                    self.event("TruckEnteredZone", "trucks.zone", "trucks")
                        .with_attr("truck", t.id.as_str())
                        .with_attr("zone", z.as_str()),
                );
            }
            self.trucks[i].inside = now_inside;
            for stop in arrivals {
                if stop.stop == DEPOT {
                    continue;
                }
                let delay = (self.tick as i64 - stop.planned as i64).max(0);
                self.trucks[i].delay = delay;
                out.push(
                    self.event("DeliveryCompleted", "wms.delivery", "wms")
                        .with_attr("truck", t.id.as_str())
                        .with_attr("customer", stop.stop.as_str())
                        .with_attr("planned", stop.planned as i64)
                        .with_attr("delay", delay),
                );
            }
        }

        let due: Vec<_> = self.schedule.iter().filter(|s| s.tick == self.tick).cloned().collect();
        for s in due {
            self.next_request += 1;
            let e = match s.kind {
                ScheduledKind::Returnee => self
                    .event("ReturneeRequest", "crm.returnee", "crm")
                    .with_attr("request", format!("R{}", self.next_request)),
                ScheduledKind::Order => self
                    .event("OrderEvent", "crm.order", "crm")
                    .with_attr("order", format!("O{}", self.next_request)),
            };
            let mut e = e.with_attr("customer", s.customer.as_str());
            if let Some(q) = s.quantity {
                e = e.with_attr("quantity", q);
            }
            out.push(e);
        }
        out
    }

    /// Move truck `i` along its route; returns the stops reached.
    fn advance(&mut self, i: usize, factor: f64) -> Vec<RouteStop> {
        let t = &mut self.trucks[i];
        let mut budget = t.speed * factor;
        if t.fuel_rate > 0.0 {
            budget = budget.min(t.fuel / t.fuel_rate);
        }
        let mut moved = 0.0;
        let mut reached = Vec::new();
        while budget > 0.0 && t.leg < t.route.len() {
            let target = t.route[t.leg].pos;
            let d = t.pos.dist(target);
            if d <= budget {
                t.pos = target;
                budget -= d;
                moved += d;
                reached.push(t.route[t.leg].clone());
                t.leg += 1;
            } else {
                let f = budget / d;
                t.pos = Point {
                    x: t.pos.x + (target.x - t.pos.x) * f,
                    y: t.pos.y + (target.y - t.pos.y) * f,
                };
                moved += budget;
                budget = 0.0;
            }
        }
        t.fuel = (t.fuel - t.fuel_rate * moved).max(0.0);
        reached
    }

    /// Apply a command event addressed to the GIS. Failures become events.
    pub fn handle_command(&mut self, cmd: &Event) -> Vec<Event> {
        match self.reroute(cmd) {
            Ok(route) => {
                let truck = cmd.attr_str("truck").unwrap_or_default().to_string();
                let customer = cmd.attr_str("customer").unwrap_or_default().to_string();
                vec![self
                    .event("RouteChanged", "gis.route", "gis")
                    .with_parents(vec![cmd.id.clone()])
                    .with_attr("truck", truck)
                    .with_attr("customer", customer)
                    .with_attr("route", route)]
            }
            Err(reason) => vec![self
                .event("CommandFailed", "cmd.failed", "gis")
                .with_parents(vec![cmd.id.clone()])
                .with_attr("reason", reason)],
        }
    }

    fn reroute(&mut self, cmd: &Event) -> Result<String, String> {
        let verb = cmd.attr_str("verb").unwrap_or_default();
        if verb != "reroute" {
            return Err(format!("unsupported verb `{verb}`"));
        }
        let truck = cmd.attr_str("truck").ok_or("missing `truck`")?;
        let customer = cmd.attr_str("customer").ok_or("missing `customer`")?;
        let pos = self
            .position_of(customer)
            .filter(|_| customer != DEPOT)
            .ok_or_else(|| format!("unknown customer `{customer}`"))?;
        let tick = self.tick;
        let t = self
            .trucks
            .iter_mut()
            .find(|t| t.id == truck)
            .ok_or_else(|| format!("unknown truck `{truck}`"))?;
        t.route.insert(
            t.leg,
            RouteStop {
                stop: customer.to_string(),
                pos,
                planned: 0,
            },
        );
        // Replan the remaining stops at nominal speed from here.
        let mut at = t.pos;
        let mut dist = 0.0;
        for s in &mut t.route[t.leg..] {
            dist += at.dist(s.pos);
            at = s.pos;
            s.planned = tick + (dist / t.speed).ceil() as u64;
        }
        Ok(t.remaining().iter().map(|s| s.stop.as_str()).collect::<Vec<_>>().join(","))
    }
}
