use lldc_core::crypto::Group;
use lldc_core::roles::{GuardRole, RoundKind};
use lldc_core::wire::Frame;

use super::wire::{Msg, Wire, MSG_GUARD_CIPHER};
use crate::simnet::NodeId;

struct GuardEp<G: Group> {
    epoch: u32,
    role: GuardRole<G>,
    /// Next round to stream.
    next: u64,
}

/// Streams ciphers ahead of the rounds, as far as the relay's credit allows.
pub(crate) struct GuardNode<G: Group> {
    pub idx: usize,
    pub node: NodeId,
    relay: NodeId,
    ep: Option<GuardEp<G>>,
    pub incoming: Option<(u32, GuardRole<G>)>,
}

impl<G: Group> GuardNode<G> {
    pub fn new(idx: usize, node: NodeId, relay: NodeId) -> Self {
        Self {
            idx,
            node,
            relay,
            ep: None,
            incoming: None,
        }
    }

    pub fn role_mut(&mut self, epoch: u32) -> Option<&mut GuardRole<G>> {
        self.ep.as_mut().filter(|e| e.epoch == epoch).map(|e| &mut e.role)
    }

    pub fn on_epoch_start(&mut self, wire: &mut Wire, epoch: u32, credit: u64) {
        match self.incoming.take() {
            Some((e, role)) if e == epoch => {
                self.ep = Some(GuardEp { epoch, role, next: 0 });
                self.stream(wire, epoch, credit);
            }
            other => self.incoming = other,
        }
    }

    /// Sends ciphers for every round below `up_to` not yet sent.
    pub fn stream(&mut self, wire: &mut Wire, epoch: u32, up_to: u64) {
        let Some(ep) = self.ep.as_mut().filter(|e| e.epoch == epoch) else { return };
        while ep.next < up_to {
            let r = ep.next;
            ep.next += 1;
            // the tag is always attached; the relay ignores it on reservation rounds
            if let Some(ct) = ep.role.contribute(r, RoundKind::Slot(0)) {
                let frame = Frame::new(MSG_GUARD_CIPHER, epoch, r, ct.encode()).encode();
                wire.send(self.node, self.relay, Msg::Frame(frame));
            }
        }
    }
}
