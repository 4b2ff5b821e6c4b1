//! Wire messages between agents, the classification report line format and
//! the deterministic mailbox.

use std::fmt;
use std::str::FromStr;

use crate::behavior::{LineVerdict, ModeLabel, TripRecord};
use crate::cdr::Transition;
use crate::ids::{AgentId, CellId, LineId, Slot};

/// Message endpoints. The derived order is the delivery order of recipients
/// and senders within an epoch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorId {
    Pa(AgentId),
    Bts(CellId),
    Ca(u64),
    Ptm,
    Hdm,
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActorId::Pa(a) => write!(f, "pa:{a}"),
            ActorId::Bts(c) => write!(f, "bts:{c}"),
            ActorId::Ca(id) => write!(f, "ca:{id}"),
            ActorId::Ptm => f.write_str("ptm"),
            ActorId::Hdm => f.write_str("hdm"),
        }
    }
}

pub type RequestId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRequest {
    pub agent: AgentId,
    /// Inclusive level range wanted.
    pub lowest: Slot,
    pub highest: Slot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceReply {
    pub agent: AgentId,
    /// Known cell per level inside the requested range.
    pub positions: Vec<(Slot, CellId)>,
    /// Raw transitions of the current trip, oldest first.
    pub transitions: Vec<Transition>,
    /// Cells of the current trip, consecutive duplicates removed.
    pub trip_path: Vec<CellId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineMatchRequest {
    pub slot: Slot,
    pub anchor: CellId,
    /// Medium-speed members of one co-travel group, sorted.
    pub members: Vec<AgentId>,
    /// Common recent path of the members, ending at `anchor`.
    pub path: Vec<CellId>,
}

/// How a reply was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchBasis {
    Group,
    Individual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineMatchReply {
    pub verdict: LineVerdict,
    pub coverage: f64,
    pub line: Option<LineId>,
    pub group: Option<String>,
    pub basis: MatchBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub slot: Slot,
    pub entity: AgentId,
    pub label: ModeLabel,
    pub speed_kmh: Option<f64>,
    pub coverage: Option<f64>,
    pub line: Option<LineId>,
    pub group: Option<String>,
    pub prior: Option<f64>,
}

impl ClassificationReport {
    pub fn bare(slot: Slot, entity: AgentId, label: ModeLabel) -> Self {
        Self {
            slot,
            entity,
            label,
            speed_kmh: None,
            coverage: None,
            line: None,
            group: None,
            prior: None,
        }
    }
}

fn opt<T>(v: &Option<T>, f: impl Fn(&T) -> String) -> String {
    v.as_ref().map_or_else(|| "-".to_owned(), f)
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\tspeed={};coverage={};line={};group={};prior={}",
            self.slot,
            self.entity,
            self.label,
            opt(&self.speed_kmh, |v| format!("{v:.2}")),
            opt(&self.coverage, |v| format!("{v:.3}")),
            opt(&self.line, ToString::to_string),
            opt(&self.group, Clone::clone),
            opt(&self.prior, |v| format!("{v:.3}")),
        )
    }
}

impl FromStr for ClassificationReport {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = line.split('\t').collect();
        let [slot, entity, label, evidence] = parts.as_slice() else {
            return Err("expected slot, entity, label and evidence".into());
        };
        let mut r = ClassificationReport::bare(
            slot.parse().map_err(|_| format!("bad slot {slot:?}"))?,
            AgentId::new(*entity),
            label.parse()?,
        );
        for item in evidence.split(';') {
            let (k, v) = item.split_once('=').ok_or_else(|| format!("bad evidence item {item:?}"))?;
            if v == "-" {
                continue;
            }
            let num = |v: &str| v.parse::<f64>().map_err(|_| format!("bad {k} value {v:?}"));
            match k {
                "speed" => r.speed_kmh = Some(num(v)?),
                "coverage" => r.coverage = Some(num(v)?),
                "prior" => r.prior = Some(num(v)?),
                "line" => r.line = Some(LineId::new(v)),
                "group" => r.group = Some(v.to_owned()),
                _ => return Err(format!("unknown evidence key {k:?}")),
            }
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    JumpList,
    TraceRequest,
    TraceReply,
    LineMatchRequest,
    LineMatchReply,
    ClassificationReport,
    TripClosed,
}

impl MessageKind {
    /// The reply kind a request kind is answered with.
    pub fn reply_kind(self) -> Option<MessageKind> {
        match self {
            MessageKind::TraceRequest => Some(MessageKind::TraceReply),
            MessageKind::LineMatchRequest => Some(MessageKind::LineMatchReply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineMessage {
    JumpList {
        anchor: CellId,
        from: CellId,
        slot: Slot,
        jumpers: Vec<AgentId>,
    },
    TraceRequest(TraceRequest),
    TraceReply(TraceReply),
    LineMatchRequest(LineMatchRequest),
    LineMatchReply(LineMatchReply),
    ClassificationReport(ClassificationReport),
    TripClosed {
        entity: AgentId,
        record: Option<TripRecord>,
    },
}

impl EngineMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            EngineMessage::JumpList { .. } => MessageKind::JumpList,
            EngineMessage::TraceRequest(_) => MessageKind::TraceRequest,
            EngineMessage::TraceReply(_) => MessageKind::TraceReply,
            EngineMessage::LineMatchRequest(_) => MessageKind::LineMatchRequest,
            EngineMessage::LineMatchReply(_) => MessageKind::LineMatchReply,
            EngineMessage::ClassificationReport(_) => MessageKind::ClassificationReport,
            EngineMessage::TripClosed { .. } => MessageKind::TripClosed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub sender: ActorId,
    pub recipient: ActorId,
    /// For replies, the id of the request answered.
    pub request: RequestId,
    pub message: EngineMessage,
}

/// Collects messages posted during a phase and hands them out in
/// (recipient, sender, request id) order, independent of posting order.
#[derive(Debug, Default)]
pub struct Mailbox {
    queue: Vec<Envelope>,
    posted: u64,
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn post(&mut self, sender: ActorId, recipient: ActorId, request: RequestId, message: EngineMessage) {
        self.posted += 1;
        self.queue.push(Envelope {
            sender,
            recipient,
            request,
            message,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn posted(&self) -> u64 {
        self.posted
    }

    pub fn drain_ordered(&mut self) -> Vec<Envelope> {
        let mut out = std::mem::take(&mut self.queue);
        out.sort_by(|a, b| (&a.recipient, &a.sender, a.request).cmp(&(&b.recipient, &b.sender, b.request)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_line_round_trip() {
        let r = ClassificationReport {
            slot: 12,
            entity: "51".into(),
            label: ModeLabel::PublicTransport,
            speed_kmh: Some(20.0),
            coverage: Some(1.0),
            line: Some("L1".into()),
            group: Some("g12.0".into()),
            prior: Some(0.5),
        };
        let line = r.to_string();
        assert_eq!(
            line,
            "12\t51\tpublic_transport\tspeed=20.00;coverage=1.000;line=L1;group=g12.0;prior=0.500"
        );
        assert_eq!(line.parse::<ClassificationReport>().unwrap(), r);
        let bare = ClassificationReport::bare(3, "x".into(), ModeLabel::Static);
        assert_eq!(bare.to_string().parse::<ClassificationReport>().unwrap(), bare);
        assert!("3\tx\tflying\tspeed=-".parse::<ClassificationReport>().is_err());
    }

    #[test]
    fn every_request_has_one_reply_kind() {
        let kinds = [
            MessageKind::JumpList,
            MessageKind::TraceRequest,
            MessageKind::TraceReply,
            MessageKind::LineMatchRequest,
            MessageKind::LineMatchReply,
            MessageKind::ClassificationReport,
            MessageKind::TripClosed,
        ];
        let requests: Vec<_> = kinds.iter().filter_map(|k| k.reply_kind().map(|r| (*k, r))).collect();
        assert_eq!(
            requests,
            [
                (MessageKind::TraceRequest, MessageKind::TraceReply),
                (MessageKind::LineMatchRequest, MessageKind::LineMatchReply)
            ]
        );
    }

    #[test]
    fn mailbox_orders_by_recipient_sender_request() {
        let mut m = Mailbox::new();
        let msg = |a: &str| {
            EngineMessage::TraceRequest(TraceRequest {
                agent: a.into(),
                lowest: 0,
                highest: 1,
            })
        };
        m.post(ActorId::Ca(2), ActorId::Pa("b".into()), 0, msg("b"));
        m.post(ActorId::Ca(1), ActorId::Pa("b".into()), 5, msg("b"));
        m.post(ActorId::Ca(1), ActorId::Pa("b".into()), 1, msg("b"));
        m.post(ActorId::Ca(9), ActorId::Pa("a".into()), 0, msg("a"));
        let order: Vec<(ActorId, RequestId)> = m.drain_ordered().into_iter().map(|e| (e.sender, e.request)).collect();
        assert_eq!(
            order,
            [(ActorId::Ca(9), 0), (ActorId::Ca(1), 1), (ActorId::Ca(1), 5), (ActorId::Ca(2), 0)]
        );
        assert!(m.is_empty());
        assert_eq!(m.posted(), 4);
    }
}
