//! Message recording and the per-link endpoints that feed it.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::message::{phase_of, Envelope, Message, PartyId, Phase};
use super::transport::Link;
use super::{ProtocolError, Result};

/// One sent message, as observed on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// Global send order within the session.
    pub seq: u64,
    pub phase: Phase,
    pub from: PartyId,
    pub to: PartyId,
    /// Position among the messages `from` sent to `to`.
    pub link_seq: u64,
    pub variant: String,
    /// Wire size including the newline.
    pub bytes: usize,
    pub ciphertexts: usize,
    pub line: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    /// Transport-independent order: `(phase, from, to, link_seq)`, with
    /// `seq` renumbered. Equal sessions give equal canonical transcripts.
    pub fn canonical(&self) -> Transcript {
        let mut entries = self.entries.clone();
        entries.sort_by_key(|e| (e.phase, e.from, e.to, e.link_seq));
        for (i, e) in entries.iter_mut().enumerate() {
            e.seq = i as u64;
        }
        Transcript { entries }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|err| ProtocolError::Malformed(err.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(file)
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| ProtocolError::Malformed(e.to_string()))?);
        }
        Ok(Transcript { entries })
    }

    /// Every phase starts only after the previous one has finished sending.
    pub fn phases_monotone(&self) -> bool {
        let mut sorted: Vec<&TranscriptEntry> = self.entries.iter().collect();
        sorted.sort_by_key(|e| e.seq);
        sorted.windows(2).all(|w| w[0].phase <= w[1].phase)
    }

    pub fn count(&self, variant: &str) -> usize {
        self.entries.iter().filter(|e| e.variant == variant).count()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    /// Re-parses every recorded line.
    pub fn envelopes(&self) -> Result<Vec<Envelope>> {
        self.entries.iter().map(|e| Envelope::from_line(&e.line)).collect()
    }
}

/// Shared, append-only sink for all endpoints of a session.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    inner: Arc<Mutex<Vec<TranscriptEntry>>>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, mut entry: TranscriptEntry) {
        let mut entries = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        entry.seq = entries.len() as u64;
        entries.push(entry);
    }

    pub fn transcript(&self) -> Transcript {
        Transcript { entries: self.inner.lock().unwrap_or_else(|p| p.into_inner()).clone() }
    }
}

/// One party's end of a link to one peer.
pub struct Endpoint {
    me: PartyId,
    peer: PartyId,
    session_id: String,
    link: Box<dyn Link>,
    recorder: Recorder,
    sent: u64,
    timeout: Duration,
}

impl Endpoint {
    pub fn new(
        me: PartyId,
        peer: PartyId,
        session_id: &str,
        link: Box<dyn Link>,
        recorder: Recorder,
        timeout: Duration,
    ) -> Self {
        Self { me, peer, session_id: session_id.to_string(), link, recorder, sent: 0, timeout }
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn peer(&self) -> PartyId {
        self.peer
    }

    pub fn send(&mut self, message: Message) -> Result<()> {
        let ciphertexts = message.ciphertext_count();
        let variant = message.variant();
        let line = Envelope::new(&self.session_id, self.me, self.peer, message).to_line()?;
        self.recorder.record(TranscriptEntry {
            seq: 0,
            phase: phase_of(variant),
            from: self.me,
            to: self.peer,
            link_seq: self.sent,
            variant: variant.to_string(),
            bytes: line.len() + 1,
            ciphertexts,
            line: line.clone(),
        });
        self.sent += 1;
        self.link.send_line(&line)
    }

    /// The next message; the peer closing the link is an error.
    pub fn recv(&mut self) -> Result<Message> {
        self.try_recv()?.ok_or(ProtocolError::PeerClosed { party: self.me, peer: self.peer })
    }

    /// The next message, or `None` once the peer has closed the link.
    pub fn try_recv(&mut self) -> Result<Option<Message>> {
        let line = match self.link.recv_line(self.timeout) {
            Ok(Some(line)) => line,
            Ok(None) => return Ok(None),
            Err(ProtocolError::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(ProtocolError::Timeout { party: self.me, peer: self.peer, after: self.timeout })
            }
            Err(e) => return Err(e),
        };
        let env = Envelope::from_line(&line)?;
        if env.session_id != self.session_id {
            return Err(ProtocolError::SessionMismatch { expected: self.session_id.clone(), found: env.session_id });
        }
        if env.sender != self.peer || env.receiver != self.me {
            return Err(ProtocolError::Misrouted { party: self.me, sender: env.sender, receiver: env.receiver });
        }
        Ok(Some(env.message))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::transport::ChannelLink;

    fn endpoints(session: &str) -> (Endpoint, Endpoint, Recorder) {
        let rec = Recorder::new();
        let (a, b) = ChannelLink::pair();
        let t = Duration::from_secs(5);
        (
            Endpoint::new(PartyId::Evaluator, PartyId::Csp, session, Box::new(a), rec.clone(), t),
            Endpoint::new(PartyId::Csp, PartyId::Evaluator, session, Box::new(b), rec.clone(), t),
            rec,
        )
    }

    #[test]
    fn endpoints_record_and_validate() {
        let (mut ev, mut csp, rec) = endpoints("s");
        ev.send(Message::FinalWeights { w_hat: vec![1.0, 2.5] }).unwrap();
        csp.send(Message::ComparisonResponse { sign: 1 }).unwrap();
        assert_eq!(csp.recv().unwrap(), Message::FinalWeights { w_hat: vec![1.0, 2.5] });
        assert_eq!(ev.recv().unwrap(), Message::ComparisonResponse { sign: 1 });
        drop(csp);
        assert!(matches!(ev.recv(), Err(ProtocolError::PeerClosed { .. })));

        let t = rec.transcript();
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.entries[0].from, PartyId::Evaluator);
        assert_eq!(t.entries[1].seq, 1);
        assert_eq!(t.entries[0].bytes, t.entries[0].line.len() + 1);
        assert_eq!(t.count("FinalWeights"), 1);
        assert_eq!(t.envelopes().unwrap().len(), 2);
    }

    #[test]
    fn wrong_session_and_routing_are_rejected() {
        let rec = Recorder::new();
        let (a, b) = ChannelLink::pair();
        let t = Duration::from_secs(5);
        let mut foreign = Endpoint::new(PartyId::Csp, PartyId::Evaluator, "other", Box::new(a), rec.clone(), t);
        let mut victim = Endpoint::new(PartyId::Evaluator, PartyId::Csp, "s", Box::new(b), rec.clone(), t);
        foreign.send(Message::ComparisonResponse { sign: 1 }).unwrap();
        assert!(matches!(victim.recv(), Err(ProtocolError::SessionMismatch { .. })));

        let (a, b) = ChannelLink::pair();
        let mut impostor = Endpoint::new(PartyId::DataOwner(1), PartyId::Evaluator, "s", Box::new(a), rec.clone(), t);
        let mut target = Endpoint::new(PartyId::Evaluator, PartyId::Csp, "s", Box::new(b), rec, t);
        impostor.send(Message::ComparisonResponse { sign: 1 }).unwrap();
        assert!(matches!(target.recv(), Err(ProtocolError::Misrouted { .. })));
    }

    #[test]
    fn timeouts_name_the_peer() {
        let rec = Recorder::new();
        let (a, _b) = ChannelLink::pair();
        let mut ep = Endpoint::new(PartyId::DataOwner(2), PartyId::Csp, "s", Box::new(a), rec, Duration::from_millis(10));
        match ep.recv() {
            Err(ProtocolError::Timeout { party, peer, .. }) => {
                assert_eq!(party, PartyId::DataOwner(2));
                assert_eq!(peer, PartyId::Csp);
            }
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn canonical_order_and_jsonl_round_trip() {
        let (mut ev, mut csp, rec) = endpoints("s");
        csp.send(Message::ComparisonResponse { sign: 1 }).unwrap();
        ev.send(Message::FinalWeights { w_hat: vec![0.5] }).unwrap();
        csp.send(Message::ComparisonResponse { sign: -1 }).unwrap();
        let t = rec.transcript();
        assert!(t.phases_monotone());
        let c = t.canonical();
        let order: Vec<_> = c.entries.iter().map(|e| (e.from, e.link_seq)).collect();
        assert_eq!(order, vec![(PartyId::Csp, 0), (PartyId::Csp, 1), (PartyId::Evaluator, 0)]);

        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        assert_eq!(Transcript::read_jsonl(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn phase_regression_is_detected() {
        let (mut ev, mut csp, rec) = endpoints("s");
        ev.send(Message::FinalWeights { w_hat: vec![0.5] }).unwrap();
        csp.send(Message::KeyDistribution {
            public_key: crate::paillier::keygen(128, &mut <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(1))
                .unwrap()
                .0,
            enc_r: None,
        })
        .unwrap();
        assert!(!rec.transcript().phases_monotone());
    }
}
