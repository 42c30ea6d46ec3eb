//! Live two-driver session, independent of the transport. The server feeds it
//! client messages and ticks; it answers with messages addressed to clients.

use super::config::SessionConfig;
use super::rig::{Rig, RigError};
use super::wire::{Role, SessionEvent, StateFrame, WireMessage};
use crate::arbitration::{ControlCommand, InterventionCause};
use crate::capture::CornerCaseRecord;
use std::collections::BTreeMap;

pub type ClientId = u64;

#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    /// Waiting for both roles to be claimed.
    Lobby,
    Driving,
    /// Stopped until the safety driver labels the capture.
    Labeling,
    /// A driver disconnected.
    Paused,
    Ended,
}

#[derive(Debug, Clone, Copy)]
struct HeldInput {
    cmd: ControlCommand,
    at_tick: u64,
}

pub struct LiveSession {
    rig: Rig,
    hold_ticks: u64,
    roles: BTreeMap<Role, ClientId>,
    clients: Vec<ClientId>,
    inputs: BTreeMap<Role, HeldInput>,
    phase: Phase,
    /// Phase to return to once a pause ends.
    resume_to: Phase,
    pending: Option<CornerCaseRecord>,
    labeled: Vec<CornerCaseRecord>,
}

pub type Outgoing = Vec<(ClientId, WireMessage)>;

impl LiveSession {
    pub fn new(cfg: &SessionConfig) -> Result<Self, RigError> {
        Ok(Self {
            rig: Rig::from_config(cfg)?,
            hold_ticks: cfg.input_hold_ticks(),
            roles: BTreeMap::new(),
            clients: Vec::new(),
            inputs: BTreeMap::new(),
            phase: Phase::Lobby,
            resume_to: Phase::Driving,
            pending: None,
            labeled: Vec::new(),
        })
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn rig(&self) -> &Rig {
        &self.rig
    }

    pub fn role_of(&self, client: ClientId) -> Option<Role> {
        self.roles.iter().find(|(_, &c)| c == client).map(|(&r, _)| r)
    }

    /// Labelled records not yet collected by the caller.
    pub fn take_labeled(&mut self) -> Vec<CornerCaseRecord> {
        std::mem::take(&mut self.labeled)
    }

    fn broadcast(&self, msg: WireMessage) -> Outgoing {
        self.clients.iter().map(|&c| (c, msg.clone())).collect()
    }

    pub fn connect(&mut self, client: ClientId) {
        if !self.clients.contains(&client) {
            self.clients.push(client);
        }
    }

    pub fn disconnect(&mut self, client: ClientId) -> Outgoing {
        self.clients.retain(|&c| c != client);
        let Some(role) = self.role_of(client) else {
            return Vec::new();
        };
        self.roles.remove(&role);
        self.inputs.remove(&role);
        if matches!(self.phase, Phase::Driving | Phase::Labeling) {
            self.resume_to = self.phase.clone();
            self.phase = Phase::Paused;
            let reason = format!("{} driver disconnected", if role == Role::Semantic { "semantic" } else { "safety" });
            return self.broadcast(WireMessage::SessionEvent(SessionEvent::Paused { reason }));
        }
        Vec::new()
    }

    fn reject(client: ClientId, reason: impl Into<String>) -> Outgoing {
        vec![(client, WireMessage::Rejected { reason: reason.into() })]
    }

    pub fn handle(&mut self, client: ClientId, msg: WireMessage) -> Outgoing {
        if self.phase == Phase::Ended {
            return Self::reject(client, "session ended");
        }
        match msg {
            WireMessage::ClaimRole { role } => self.claim(client, role),
            WireMessage::ControlInput { role, cmd } => {
                if self.role_of(client) != Some(role) {
                    return Self::reject(client, "control input for a role this connection does not hold");
                }
                if cmd.validate().is_err() {
                    return Self::reject(client, "control input out of range");
                }
                self.inputs.insert(role, HeldInput { cmd, at_tick: self.rig.world.tick });
                Vec::new()
            }
            WireMessage::InterventionLabel { cause, comment } => self.label(client, cause, comment),
            _ => Self::reject(client, "clients may only send claim_role, control_input or intervention_label"),
        }
    }

    fn claim(&mut self, client: ClientId, role: Role) -> Outgoing {
        if let Some(held) = self.role_of(client) {
            return Self::reject(client, format!("connection already holds the {held:?} role"));
        }
        if self.roles.contains_key(&role) {
            return Self::reject(client, format!("{role:?} role already taken"));
        }
        self.connect(client);
        self.roles.insert(role, client);
        if self.roles.len() < 2 {
            return Vec::new();
        }
        match self.phase {
            Phase::Lobby => {
                self.phase = Phase::Driving;
                self.broadcast(WireMessage::SessionEvent(SessionEvent::Started))
            }
            Phase::Paused => {
                self.phase = std::mem::replace(&mut self.resume_to, Phase::Driving);
                self.broadcast(WireMessage::SessionEvent(SessionEvent::Resumed))
            }
            _ => Vec::new(),
        }
    }

    fn label(&mut self, client: ClientId, cause: InterventionCause, comment: String) -> Outgoing {
        if self.role_of(client) != Some(Role::Safety) {
            return Self::reject(client, "only the safety driver labels corner cases");
        }
        if self.phase != Phase::Labeling {
            return Self::reject(client, "no corner case awaiting a label");
        }
        let mut record = self.pending.take().expect("labeling phase holds a record");
        record.event.cause = cause;
        record.event.comment = comment;
        if let Some(e) = self.rig.log.events.iter_mut().rev().find(|e| e.record_id.as_deref() == Some(record.id.as_str())) {
            e.cause = cause;
        }
        let id = record.id.clone();
        self.labeled.push(record);
        self.phase = Phase::Driving;
        self.inputs.clear();
        self.broadcast(WireMessage::SessionEvent(SessionEvent::Labeled { id, cause }))
    }

    fn input(&self, role: Role) -> ControlCommand {
        match self.inputs.get(&role) {
            Some(h) if self.rig.world.tick.saturating_sub(h.at_tick) <= self.hold_ticks => h.cmd,
            _ => ControlCommand::ZERO,
        }
    }

    /// Advance one tick if driving and send each driver their view.
    pub fn tick(&mut self) -> Result<Outgoing, RigError> {
        if self.phase != Phase::Driving {
            return Ok(Vec::new());
        }
        let obs = self.rig.observe();
        let frame = StateFrame::new(obs.tick, &obs.truth, &obs.predicted, &obs.appearance, obs.hud.speed_kmh, obs.hud.light_phase);
        let (semantic, safety) = (self.input(Role::Semantic), self.input(Role::Safety));
        let outcome = self.rig.advance(obs, semantic, safety, InterventionCause::Boredom)?;
        let mut out: Outgoing = self
            .roles
            .iter()
            .map(|(&role, &client)| (client, WireMessage::StateFrame(frame.for_role(role))))
            .collect();
        if let Some(record) = outcome.capture.and_then(|c| c.record) {
            out.extend(self.broadcast(WireMessage::SessionEvent(SessionEvent::CcCaptured { id: record.id.clone() })));
            self.pending = Some(record);
            self.phase = Phase::Labeling;
        }
        Ok(out)
    }

    pub fn end(&mut self) -> Outgoing {
        self.phase = Phase::Ended;
        self.broadcast(WireMessage::SessionEvent(SessionEvent::Ended))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> LiveSession {
        LiveSession::new(&SessionConfig::default()).unwrap()
    }

    fn drive(s: &mut LiveSession, ticks: usize) -> Outgoing {
        (0..ticks).flat_map(|_| s.tick().unwrap()).collect()
    }

    #[test]
    fn second_claim_of_a_role_is_rejected() {
        let mut s = session();
        assert!(s.handle(1, WireMessage::ClaimRole { role: Role::Semantic }).is_empty());
        let out = s.handle(2, WireMessage::ClaimRole { role: Role::Semantic });
        assert!(matches!(out.as_slice(), [(2, WireMessage::Rejected { .. })]));
        assert_eq!(*s.phase(), Phase::Lobby);
    }

    #[test]
    fn safety_brake_captures_and_requires_a_label() {
        let mut s = session();
        s.handle(1, WireMessage::ClaimRole { role: Role::Semantic });
        let started = s.handle(2, WireMessage::ClaimRole { role: Role::Safety });
        assert!(started.iter().all(|(_, m)| *m == WireMessage::SessionEvent(SessionEvent::Started)));
        for _ in 0..35 {
            s.handle(1, WireMessage::ControlInput { role: Role::Semantic, cmd: ControlCommand { throttle: 0.5, ..ControlCommand::ZERO } });
            s.tick().unwrap();
        }
        let trigger = s.rig().world.tick;
        s.handle(2, WireMessage::ControlInput { role: Role::Safety, cmd: ControlCommand { brake: 0.8, ..ControlCommand::ZERO } });
        let out = s.tick().unwrap();
        let captured: Vec<_> = out
            .iter()
            .filter_map(|(_, m)| match m {
                WireMessage::SessionEvent(SessionEvent::CcCaptured { id }) => Some(id.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(captured, vec!["cc-0001".to_string(); 2]);
        assert_eq!(*s.phase(), Phase::Labeling);
        assert!(drive(&mut s, 5).is_empty());
        assert!(matches!(
            s.handle(1, WireMessage::InterventionLabel { cause: InterventionCause::Boredom, comment: String::new() }).as_slice(),
            [(1, WireMessage::Rejected { .. })]
        ));
        s.handle(2, WireMessage::InterventionLabel { cause: InterventionCause::OverlookedWalker, comment: "late".into() });
        assert_eq!(*s.phase(), Phase::Driving);
        let rec = s.take_labeled().pop().unwrap();
        assert_eq!(rec.event.cause, InterventionCause::OverlookedWalker);
        assert_eq!(rec.frames.last().unwrap().tick_index, trigger - 1);
    }

    #[test]
    fn each_role_sees_only_its_channel() {
        let mut s = session();
        s.handle(1, WireMessage::ClaimRole { role: Role::Semantic });
        s.handle(2, WireMessage::ClaimRole { role: Role::Safety });
        for (client, msg) in drive(&mut s, 3) {
            if let WireMessage::StateFrame(f) = msg {
                match client {
                    1 => assert!(f.semantic_view.is_some() && f.clear_view.is_none() && f.clear_rgb.is_none()),
                    _ => assert!(f.clear_view.is_some() && f.semantic_view.is_none()),
                }
            }
        }
    }

    #[test]
    fn inputs_are_held_then_zeroed() {
        let mut s = session();
        s.handle(1, WireMessage::ClaimRole { role: Role::Semantic });
        s.handle(2, WireMessage::ClaimRole { role: Role::Safety });
        s.handle(1, WireMessage::ControlInput { role: Role::Semantic, cmd: ControlCommand { throttle: 1.0, ..ControlCommand::ZERO } });
        drive(&mut s, 5);
        assert_eq!(s.input(Role::Semantic).throttle, 1.0);
        drive(&mut s, 1);
        assert_eq!(s.input(Role::Semantic), ControlCommand::ZERO);
        let out = s.handle(2, WireMessage::ControlInput { role: Role::Semantic, cmd: ControlCommand::ZERO });
        assert!(matches!(out.as_slice(), [(2, WireMessage::Rejected { .. })]));
    }

    #[test]
    fn disconnect_pauses_and_reclaim_resumes() {
        let mut s = session();
        s.handle(1, WireMessage::ClaimRole { role: Role::Semantic });
        s.handle(2, WireMessage::ClaimRole { role: Role::Safety });
        drive(&mut s, 2);
        let out = s.disconnect(2);
        assert!(matches!(out.as_slice(), [(1, WireMessage::SessionEvent(SessionEvent::Paused { .. }))]));
        let tick = s.rig().world.tick;
        drive(&mut s, 3);
        assert_eq!(s.rig().world.tick, tick);
        let out = s.handle(3, WireMessage::ClaimRole { role: Role::Safety });
        assert!(out.iter().any(|(_, m)| *m == WireMessage::SessionEvent(SessionEvent::Resumed)));
        assert_eq!(*s.phase(), Phase::Driving);
    }
}
