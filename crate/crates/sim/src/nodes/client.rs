use std::collections::{BTreeMap, VecDeque};

use lldc_core::crypto::Group;
use lldc_core::dcnet::{frame_message, DownstreamMessage, Reassembler, UpstreamCell};
use lldc_core::roles::{ClientRole, RoundKind};
use lldc_core::wire::Frame;

use super::config::reservation_vector;
use super::wire::{kind_of, Msg, Wire, MSG_DOWNSTREAM, MSG_UPSTREAM};
use crate::simnet::NodeId;

/// How many owned rounds a client keeps for retransmission.
const KEEP_ROUNDS: u64 = 4096;

pub(crate) struct ClientEp<G: Group> {
    pub epoch: u32,
    pub role: ClientRole<G>,
    kinds: BTreeMap<u64, Option<RoundKind>>,
    /// Earliest owned round the relay asked to resend.
    retransmit: Option<u64>,
}

pub(crate) struct ClientNode<G: Group> {
    pub idx: usize,
    pub node: NodeId,
    relay: NodeId,
    pub connected: bool,
    /// Leaves once the next epoch starts.
    pub leaving: bool,
    pub conn: u32,
    outbox: VecDeque<u8>,
    pub ep: Option<ClientEp<G>>,
    pub incoming: Option<(u32, ClientRole<G>)>,
    reasm: Reassembler,
    /// Payload chunks of owned rounds not yet confirmed by a downstream
    /// message, by round.
    unconfirmed: BTreeMap<u64, Vec<u8>>,
    cell_cap: usize,
}

impl<G: Group> ClientNode<G> {
    pub fn new(idx: usize, node: NodeId, relay: NodeId, conn: u32, cell_len: usize) -> Self {
        Self {
            idx,
            node,
            relay,
            connected: true,
            leaving: false,
            conn,
            outbox: VecDeque::new(),
            ep: None,
            incoming: None,
            reasm: Reassembler::new(),
            unconfirmed: BTreeMap::new(),
            cell_cap: UpstreamCell::payload_capacity(cell_len),
        }
    }

    pub fn enqueue(&mut self, msg: &[u8]) {
        self.outbox.extend(frame_message(msg));
    }

    pub fn disconnect(&mut self) {
        self.connected = false;
        self.leaving = false;
        self.ep = None;
        self.incoming = None;
    }

    pub fn on_epoch_start(&mut self, wire: &mut Wire, epoch: u32, initial: &[Option<RoundKind>]) {
        let role = match self.incoming.take() {
            Some((e, role)) if e == epoch => role,
            other => {
                self.incoming = other;
                return;
            }
        };
        // chunks that never made it through go out again, ahead of newer data
        let mut replay: Vec<u8> = std::mem::take(&mut self.unconfirmed).into_values().flatten().collect();
        replay.extend(self.outbox.drain(..));
        self.outbox = replay.into();
        self.ep = Some(ClientEp {
            epoch,
            role,
            kinds: initial.iter().enumerate().map(|(r, k)| (r as u64, *k)).collect(),
            retransmit: None,
        });
        for r in 0..initial.len() as u64 {
            self.contribute(wire, r);
        }
    }

    /// Handles a downstream frame; returns application messages that
    /// completed on this client's connection.
    pub fn on_downstream(&mut self, wire: &mut Wire, bytes: &[u8]) -> Vec<Vec<u8>> {
        let Ok(frame) = Frame::decode(bytes) else { return Vec::new() };
        let Some(ep) = self.ep.as_mut() else { return Vec::new() };
        if frame.msg_type != MSG_DOWNSTREAM || frame.epoch != ep.epoch {
            return Vec::new();
        }
        ep.role.absorb_downstream(&frame.body);
        let Ok(msg) = DownstreamMessage::decode(&frame.body) else { return Vec::new() };
        let r = msg.round;
        let own = ep.kinds.get(&r).copied().flatten() == Some(RoundKind::Slot(ep.role.slot));
        if own && msg.flags.retransmit {
            ep.retransmit.get_or_insert(r);
        } else {
            self.unconfirmed.remove(&r);
        }
        ep.kinds.insert(msg.announce_round, kind_of(msg.announce));
        ep.kinds = ep.kinds.split_off(&r.saturating_sub(1));
        let keep = ep.retransmit.unwrap_or(r).min(r).saturating_sub(KEEP_ROUNDS);
        ep.role.forget_before(keep);
        let conn = self.conn;
        let mut out = Vec::new();
        for (_, chunk) in ep.role.open_downstream(&msg, |c| c == conn) {
            if let Ok(msgs) = self.reasm.push(conn, &chunk) {
                out.extend(msgs);
            }
        }
        if msg.announce_round > r {
            self.contribute(wire, msg.announce_round);
        }
        out
    }

    fn contribute(&mut self, wire: &mut Wire, t: u64) {
        let Some(ep) = self.ep.as_mut() else { return };
        let Some(kind) = ep.kinds.get(&t).copied().flatten() else { return };
        let plaintext = match kind {
            RoundKind::Slot(s) if s == ep.role.slot => {
                let resend = ep.retransmit.take().and_then(|r| ep.role.sent_cell(r).map(|c| (r, c.to_vec())));
                Some(match resend {
                    Some((r, cell)) => {
                        if let Some(chunk) = self.unconfirmed.remove(&r) {
                            self.unconfirmed.insert(t, chunk);
                        }
                        cell
                    }
                    None if !self.outbox.is_empty() => {
                        let take = self.outbox.len().min(self.cell_cap);
                        let chunk: Vec<u8> = self.outbox.drain(..take).collect();
                        let cell = ep.role.seal_cell(self.conn, Some(&chunk)).expect("chunk fits the cell");
                        self.unconfirmed.insert(t, chunk);
                        cell
                    }
                    None => ep.role.seal_cell(0, None).expect("idle cell fits"),
                })
            }
            RoundKind::Reservation => {
                let want = !self.outbox.is_empty() || ep.retransmit.is_some();
                want.then(|| reservation_vector(0, ep.role.slot))
            }
            RoundKind::Slot(_) => None,
        };
        let ct = match ep.role.contribute(t, kind, plaintext.as_deref()) {
            Ok(Some(ct)) => ct,
            // withheld, or a reservation vector too long for the cell
            Ok(None) | Err(_) => return,
        };
        let frame = Frame::new(MSG_UPSTREAM, ep.epoch, t, ct.encode()).encode();
        wire.send(self.node, self.relay, Msg::Frame(frame));
    }
}
