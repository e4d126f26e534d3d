//! Runs one complete training session: every party on its own thread,
//! connected pairwise by links of the chosen transport.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Barrier;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::counters::{counters_report, CostReport};
use super::message::{Message, PartyId};
use super::transcript::{Endpoint, Recorder, Transcript};
use super::transport::{ChannelLink, Link, TcpLink};
use super::{ProtocolError, Result};
use crate::paillier::{ops, Ciphertext, FixedDecimal, OpCounts, PublicKey};
use crate::party::csp::DEFAULT_R_RANGE;
use crate::party::data_owner::{denoise, initial_weights};
use crate::party::evaluator::{agreed_initial_weights, aggregate, apply_xi, Trainer};
use crate::party::{
    CspChannel, CspConfig, CspState, CspView, LocalShard, NoiseVector, PartyError, XiMatrix, XiRanges,
};
use crate::regression::{Dataset, ModelWeights, RegressionKind, RegressionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transport {
    InProcess,
    /// Loopback TCP sockets, one per party pair.
    Tcp,
}

/// How the Evaluator picks the cross-term perturbation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XiChoice {
    Random(XiRanges),
    /// Every entry equal; only for attack experiments.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub kind: RegressionKind,
    pub lambda: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub key_bits: usize,
    pub xi: XiChoice,
    pub r_range: (f64, f64),
    pub transport: Transport,
    /// Root of every party's random stream.
    pub seed: u64,
    /// Longest wait for any single message.
    pub timeout: Duration,
}

impl SessionConfig {
    pub fn new(kind: RegressionKind, lambda: f64, max_iterations: usize) -> Self {
        Self {
            kind,
            lambda,
            max_iterations,
            tolerance: RegressionSpec::DEFAULT_TOLERANCE,
            key_bits: 1024,
            xi: XiChoice::Random(XiRanges::default()),
            r_range: DEFAULT_R_RANGE,
            transport: Transport::InProcess,
            seed: 0,
            timeout: Duration::from_secs(600),
        }
    }

    pub fn spec(&self) -> RegressionSpec {
        RegressionSpec::new(self.kind, self.lambda, self.max_iterations).with_tolerance(self.tolerance)
    }

    /// Identifies the session on the wire. Independent of the transport so
    /// that equal sessions produce equal transcripts.
    pub fn session_id(&self, shards: &[Dataset]) -> String {
        let mut h = DefaultHasher::new();
        self.kind.hash(&mut h);
        self.lambda.to_bits().hash(&mut h);
        self.max_iterations.hash(&mut h);
        self.tolerance.to_bits().hash(&mut h);
        self.key_bits.hash(&mut h);
        format!("{:?}", self.xi).hash(&mut h);
        self.r_range.0.to_bits().hash(&mut h);
        self.r_range.1.to_bits().hash(&mut h);
        self.seed.hash(&mut h);
        for s in shards {
            (s.samples(), s.dim()).hash(&mut h);
        }
        format!("{:016x}", h.finish())
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    /// The model as each data owner recovered it, in owner order.
    pub owner_weights: Vec<ModelWeights>,
    /// What the Evaluator ends with: `w* + r`.
    pub w_hat: Vec<f64>,
    pub zero_branch: Vec<bool>,
    pub sweeps: usize,
    pub converged: bool,
    /// The un-noised starting point `w⁰` every owner derived.
    pub initial_weights: ModelWeights,
    pub noise: NoiseVector,
    pub xi: XiMatrix,
    pub csp_view: CspView,
    pub public_key: PublicKey,
    pub transcript: Transcript,
    pub costs: CostReport,
}

impl SessionOutcome {
    pub fn weights(&self) -> &ModelWeights {
        &self.owner_weights[0]
    }
}

/// Runs the four phases with `shards[l]` held by data owner `l + 1`.
pub fn run_session(config: &SessionConfig, shards: &[Dataset]) -> Result<SessionOutcome> {
    config.spec().validate().map_err(|e| ProtocolError::Config(e.to_string()))?;
    if shards.len() < 2 {
        return Err(ProtocolError::Config(format!("need at least 2 data owners, got {}", shards.len())));
    }
    let dim = shards[0].dim();
    if shards.iter().any(|s| s.dim() != dim) {
        return Err(ProtocolError::Config("data owners disagree on the feature dimension".into()));
    }
    if let XiChoice::Random(ranges) = &config.xi {
        ranges.validate().map_err(|e| ProtocolError::Config(e.to_string()))?;
    }
    let owners = shards.len();
    let session_id = config.session_id(shards);
    let recorder = Recorder::new();
    let endpoint_pair = |a: PartyId, b: PartyId| -> Result<(Endpoint, Endpoint)> {
        let (la, lb): (Box<dyn Link>, Box<dyn Link>) = match config.transport {
            Transport::InProcess => {
                let (x, y) = ChannelLink::pair();
                (Box::new(x), Box::new(y))
            }
            Transport::Tcp => {
                let (x, y) = TcpLink::pair()?;
                (Box::new(x), Box::new(y))
            }
        };
        Ok((
            Endpoint::new(a, b, &session_id, la, recorder.clone(), config.timeout),
            Endpoint::new(b, a, &session_id, lb, recorder.clone(), config.timeout),
        ))
    };

    let (csp_ev, ev_csp) = endpoint_pair(PartyId::Csp, PartyId::Evaluator)?;
    let mut csp_dos = Vec::with_capacity(owners);
    let mut ev_dos = Vec::with_capacity(owners);
    let mut do_links = Vec::with_capacity(owners);
    for l in 1..=owners {
        let (c, d1) = endpoint_pair(PartyId::Csp, PartyId::DataOwner(l))?;
        let (e, d2) = endpoint_pair(PartyId::Evaluator, PartyId::DataOwner(l))?;
        csp_dos.push(c);
        ev_dos.push(e);
        do_links.push((d1, d2));
    }

    let gate = Barrier::new(owners + 2);
    let (csp_res, ev_res, do_res) = std::thread::scope(|scope| {
        let gate = &gate;
        let csp = scope.spawn(move || counted(|| run_csp(config, dim, csp_ev, csp_dos, gate)));
        let ev = scope.spawn(move || counted(|| run_evaluator(config, ev_csp, ev_dos, gate)));
        let dos: Vec<_> = do_links
            .into_iter()
            .zip(shards)
            .enumerate()
            .map(|(i, ((from_csp, to_ev), data))| {
                scope.spawn(move || counted(|| run_data_owner(config, i + 1, data, from_csp, to_ev, gate)))
            })
            .collect();
        let csp = join(csp, PartyId::Csp);
        let ev = join(ev, PartyId::Evaluator);
        let dos: Vec<_> = dos.into_iter().enumerate().map(|(i, h)| join(h, PartyId::DataOwner(i + 1))).collect();
        (csp, ev, dos)
    });

    let mut errors = Vec::new();
    let mut ops = BTreeMap::new();
    ops.insert(PartyId::Csp, csp_res.0);
    ops.insert(PartyId::Evaluator, ev_res.0);
    let csp_out = csp_res.1.map_err(|e| errors.push(e)).ok();
    let ev_out = ev_res.1.map_err(|e| errors.push(e)).ok();
    let mut owner_weights = Vec::with_capacity(owners);
    let mut initial = None;
    for (i, (counts, res)) in do_res.into_iter().enumerate() {
        ops.insert(PartyId::DataOwner(i + 1), counts);
        match res {
            Ok((w, w0)) => {
                owner_weights.push(w);
                initial.get_or_insert(w0);
            }
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        let primary = errors.iter().position(|e| !e.is_secondary()).unwrap_or(0);
        return Err(errors.swap_remove(primary));
    }
    let (csp_out, ev_out, initial) = match (csp_out, ev_out, initial) {
        (Some(c), Some(e), Some(i)) => (c, e, i),
        _ => unreachable!("every party succeeded"),
    };
    let transcript = recorder.transcript();
    let costs = counters_report(
        config.key_bits,
        csp_out.public_key.ciphertext_bytes(),
        &ops,
        &transcript,
    );
    Ok(SessionOutcome {
        owner_weights,
        w_hat: ev_out.w_hat,
        zero_branch: ev_out.zero_branch,
        sweeps: ev_out.sweeps,
        converged: ev_out.converged,
        initial_weights: initial,
        noise: csp_out.noise,
        xi: ev_out.xi,
        csp_view: csp_out.view,
        public_key: csp_out.public_key,
        transcript,
        costs,
    })
}

fn join<T>(h: std::thread::ScopedJoinHandle<'_, (OpCounts, Result<T>)>, id: PartyId) -> (OpCounts, Result<T>) {
    h.join().unwrap_or_else(|_| (OpCounts::default(), Err(ProtocolError::Panicked(id))))
}

/// Counts this thread's homomorphic operations around `f`.
fn counted<T>(f: impl FnOnce() -> Result<T>) -> (OpCounts, Result<T>) {
    ops::reset();
    let out = f();
    (ops::snapshot(), out)
}

/// Runs `setup`, then waits until every party has finished its own setup
/// before continuing. A failed or panicking setup drops its links first so
/// that peers blocked on them see EOF instead of a timeout.
fn staged<S, T>(
    me: PartyId,
    gate: &Barrier,
    setup: impl FnOnce() -> Result<S>,
    rest: impl FnOnce(S) -> Result<T>,
) -> Result<T> {
    let first = catch_unwind(AssertUnwindSafe(setup));
    gate.wait();
    match first {
        Ok(Ok(state)) => rest(state),
        Ok(Err(e)) => Err(e),
        Err(_) => Err(ProtocolError::Panicked(me)),
    }
}

fn party_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn party_err(party: PartyId) -> impl Fn(PartyError) -> ProtocolError {
    move |source| ProtocolError::Party { party, source }
}

fn unexpected(party: PartyId, expected: &'static str, found: &Message) -> ProtocolError {
    ProtocolError::PhaseOrder { party, expected, found: found.variant().to_string() }
}

struct CspOut {
    noise: NoiseVector,
    view: CspView,
    public_key: PublicKey,
}

fn run_csp(config: &SessionConfig, dim: usize, mut ev: Endpoint, mut dos: Vec<Endpoint>, gate: &Barrier) -> Result<CspOut> {
    let me = PartyId::Csp;
    let perr = party_err(me);
    let mut rng = party_rng(config.seed, 0);
    staged(
        me,
        gate,
        || {
            let csp_config =
                CspConfig { key_bits: config.key_bits, r_range: config.r_range, kind: config.kind, lambda: config.lambda };
            let state = CspState::setup(&csp_config, dim, &mut rng).map_err(&perr)?;
            let pk = state.public_key().clone();
            for d in &mut dos {
                d.send(Message::KeyDistribution { public_key: pk.clone(), enc_r: None })?;
                d.send(Message::NoiseVector(state.noise().clone()))?;
            }
            let enc_r = match config.kind {
                RegressionKind::Lasso => Some(state.encrypted_r(&mut rng).map_err(&perr)?),
                _ => None,
            };
            ev.send(Message::KeyDistribution { public_key: pk, enc_r })?;
            // The data owners need nothing more from the CSP.
            drop(dos);
            Ok((state, ev, rng))
        },
        |(state, mut ev, _rng)| {
            let bundle = match ev.recv()? {
                Message::AggregatedBundle(b) => b,
                other => return Err(unexpected(me, "AggregatedBundle", &other)),
            };
            let (plain, view) = state.decrypt_with_view(&bundle).map_err(&perr)?;
            ev.send(Message::DecryptedBundle(plain))?;
            while let Some(msg) = ev.try_recv()? {
                let reply = match msg {
                    Message::ComparisonRequest { ciphertext, .. } => {
                        Message::ComparisonResponse { sign: state.compare_sign(&ciphertext).map_err(&perr)? }
                    }
                    Message::BlindDecryptRequest { ciphertext } => {
                        Message::BlindDecryptResponse { value: state.blind_decrypt_respond(&ciphertext).map_err(&perr)? }
                    }
                    other => return Err(unexpected(me, "ComparisonRequest or BlindDecryptRequest", &other)),
                };
                ev.send(reply)?;
            }
            Ok(CspOut { noise: state.noise().clone(), view, public_key: state.public_key().clone() })
        },
    )
}

struct EvaluatorOut {
    w_hat: Vec<f64>,
    zero_branch: Vec<bool>,
    sweeps: usize,
    converged: bool,
    xi: XiMatrix,
}

/// The CSP as seen from the Evaluator's training loop. Transport failures
/// are kept so the session reports them instead of a generic channel error.
struct RemoteCsp<'a> {
    link: &'a mut Endpoint,
    failure: Option<ProtocolError>,
}

impl RemoteCsp<'_> {
    fn call(&mut self, request: Message) -> Result<Message, PartyError> {
        let reply = self.link.send(request).and_then(|_| self.link.recv());
        reply.map_err(|e| {
            let text = e.to_string();
            self.failure = Some(e);
            PartyError::Channel(text)
        })
    }

    fn wrong_reply(&mut self, expected: &'static str, found: &Message) -> PartyError {
        let e = unexpected(PartyId::Evaluator, expected, found);
        let text = e.to_string();
        self.failure = Some(e);
        PartyError::Channel(text)
    }
}

impl CspChannel for RemoteCsp<'_> {
    fn compare_sign(&mut self, coordinate: usize, c: &Ciphertext) -> Result<i8, PartyError> {
        match self.call(Message::ComparisonRequest { coordinate, ciphertext: c.clone() })? {
            Message::ComparisonResponse { sign } if (-1..=1).contains(&sign) => Ok(sign),
            other => Err(self.wrong_reply("ComparisonResponse", &other)),
        }
    }

    fn blind_decrypt(&mut self, c: &Ciphertext) -> Result<FixedDecimal, PartyError> {
        match self.call(Message::BlindDecryptRequest { ciphertext: c.clone() })? {
            Message::BlindDecryptResponse { value } => Ok(value),
            other => Err(self.wrong_reply("BlindDecryptResponse", &other)),
        }
    }
}

fn run_evaluator(config: &SessionConfig, mut csp: Endpoint, dos: Vec<Endpoint>, gate: &Barrier) -> Result<EvaluatorOut> {
    let me = PartyId::Evaluator;
    let perr = party_err(me);
    let mut rng = party_rng(config.seed, 1);
    staged(
        me,
        gate,
        || match csp.recv()? {
            Message::KeyDistribution { public_key, enc_r } => Ok((public_key, enc_r.unwrap_or_default(), csp, dos)),
            other => Err(unexpected(me, "KeyDistribution", &other)),
        },
        |(pk, enc_r, mut csp, mut dos)| {
            let contribs = dos
                .iter_mut()
                .map(|d| match d.recv()? {
                    Message::EncryptedContribution(c) => Ok(c),
                    other => Err(unexpected(me, "EncryptedContribution", &other)),
                })
                .collect::<Result<Vec<_>>>()?;
            let w_hat0 = agreed_initial_weights(&contribs).map_err(&perr)?;
            let bundle = aggregate(&pk, &contribs).map_err(&perr)?;
            let dim = bundle.dim();
            let xi = match config.xi {
                XiChoice::Random(ranges) => XiMatrix::random(dim, &ranges, &mut rng),
                XiChoice::Uniform(v) => XiMatrix::uniform(dim, v),
            }
            .map_err(&perr)?;
            csp.send(Message::AggregatedBundle(apply_xi(&pk, &bundle, &xi).map_err(&perr)?))?;
            let plain = match csp.recv()? {
                Message::DecryptedBundle(p) => p,
                other => return Err(unexpected(me, "DecryptedBundle", &other)),
            };
            let trainer = Trainer::new(pk, &plain, &xi, config.kind, config.lambda, enc_r).map_err(&perr)?;
            let mut remote = RemoteCsp { link: &mut csp, failure: None };
            let outcome = match trainer.train(&config.spec(), &w_hat0, &mut remote, &mut rng, |_, _| {}) {
                Ok(o) => o,
                Err(e) => return Err(remote.failure.take().unwrap_or_else(|| perr(e))),
            };
            // Ends the CSP's request loop.
            drop(csp);
            for d in &mut dos {
                d.send(Message::FinalWeights { w_hat: outcome.w_hat.clone() })?;
            }
            Ok(EvaluatorOut {
                w_hat: outcome.w_hat,
                zero_branch: outcome.zero_branch,
                sweeps: outcome.sweeps,
                converged: outcome.converged,
                xi,
            })
        },
    )
}

fn run_data_owner(
    config: &SessionConfig,
    owner: usize,
    data: &Dataset,
    mut csp: Endpoint,
    ev: Endpoint,
    gate: &Barrier,
) -> Result<(ModelWeights, ModelWeights)> {
    let me = PartyId::DataOwner(owner);
    let perr = party_err(me);
    let mut rng = party_rng(config.seed, 100 + owner as u64);
    staged(
        me,
        gate,
        || {
            let shard = LocalShard::new(owner, data.clone()).map_err(&perr)?;
            let pk = match csp.recv()? {
                Message::KeyDistribution { public_key, .. } => public_key,
                other => return Err(unexpected(me, "KeyDistribution", &other)),
            };
            let noise = match csp.recv()? {
                Message::NoiseVector(n) => n,
                other => return Err(unexpected(me, "NoiseVector", &other)),
            };
            if noise.dim() != shard.dim() {
                return Err(perr(PartyError::Shape(format!(
                    "noise has {} entries for {} coordinates",
                    noise.dim(),
                    shard.dim()
                ))));
            }
            Ok((shard, pk, noise, ev))
        },
        |(shard, pk, noise, mut ev)| {
            let contribution = shard.build_contribution(&noise, &pk, &mut rng).map_err(&perr)?;
            ev.send(Message::EncryptedContribution(contribution))?;
            let w_hat = match ev.recv()? {
                Message::FinalWeights { w_hat } => w_hat,
                other => return Err(unexpected(me, "FinalWeights", &other)),
            };
            let weights = denoise(&w_hat, &noise).map_err(&perr)?;
            Ok((weights, ModelWeights(initial_weights(noise.seed_w0, shard.dim()))))
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, partition_equal};
    use crate::regression::fit_cd_traced;

    fn shards(m: usize, n: usize, owners: usize, seed: u64) -> (Dataset, Vec<Dataset>) {
        let all = gen_synthetic(m, n, seed).unwrap();
        let parts = partition_equal(&all, owners, seed).unwrap();
        (all, parts)
    }

    fn config(kind: RegressionKind, lambda: f64, iterations: usize) -> SessionConfig {
        SessionConfig { key_bits: 256, seed: 7, timeout: Duration::from_secs(60), ..SessionConfig::new(kind, lambda, iterations) }
    }

    #[test]
    fn linear_session_matches_centralized_cd() {
        let (all, parts) = shards(60, 3, 3, 1);
        let cfg = config(RegressionKind::Linear, 0.0, 15);
        let out = run_session(&cfg, &parts).unwrap();
        let reference = fit_cd_traced(&all, &cfg.spec(), &out.initial_weights, |_, _| {}).unwrap();
        assert_eq!(out.owner_weights.len(), 3);
        assert!(out.owner_weights.iter().all(|w| w == out.weights()));
        assert_eq!(out.sweeps, reference.iterations);
        assert!(out.weights().max_abs_diff(&reference.weights) < 1e-6, "{:?} vs {:?}", out.weights(), reference.weights);
        assert!(out.transcript.phases_monotone());
        assert_eq!(out.transcript.count("EncryptedContribution"), 3);
        assert_eq!(out.transcript.count("ComparisonRequest"), 0);
    }

    #[test]
    fn lasso_session_uses_the_comparison_channel() {
        let (all, parts) = shards(40, 3, 2, 2);
        let cfg = config(RegressionKind::Lasso, 30.0, 6);
        let out = run_session(&cfg, &parts).unwrap();
        let reference = fit_cd_traced(&all, &cfg.spec(), &out.initial_weights, |_, _| {}).unwrap();
        assert!(out.weights().max_abs_diff(&reference.weights) < 1e-6, "{:?} vs {:?}", out.weights(), reference.weights);
        assert_eq!(out.transcript.count("ComparisonRequest"), 2 * 4 * out.sweeps);
        assert!(out.zero_branch.iter().any(|&z| z));
    }

    #[test]
    fn transports_produce_identical_canonical_transcripts() {
        let (_, parts) = shards(30, 2, 2, 3);
        let mut cfg = config(RegressionKind::Ridge, 2.0, 4);
        let a = run_session(&cfg, &parts).unwrap();
        cfg.transport = Transport::Tcp;
        let b = run_session(&cfg, &parts).unwrap();
        assert_eq!(a.transcript.canonical(), b.transcript.canonical());
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn invalid_configurations_fail_before_any_thread_starts() {
        let (_, parts) = shards(30, 2, 2, 3);
        let cfg = config(RegressionKind::Ridge, -1.0, 4);
        assert!(matches!(run_session(&cfg, &parts), Err(ProtocolError::Config(_))));
        let cfg = config(RegressionKind::Linear, 0.0, 4);
        assert!(matches!(run_session(&cfg, &parts[..1]), Err(ProtocolError::Config(_))));
        let odd = gen_synthetic(5, 4, 1).unwrap();
        assert!(matches!(run_session(&cfg, &[parts[0].clone(), odd]), Err(ProtocolError::Config(_))));
    }

    #[test]
    fn party_failures_surface_with_their_cause() {
        let (_, parts) = shards(30, 2, 2, 3);
        let mut cfg = config(RegressionKind::Linear, 0.0, 4);
        cfg.key_bits = 16;
        match run_session(&cfg, &parts) {
            Err(ProtocolError::Party { party: PartyId::Csp, .. }) => {}
            other => panic!("expected a CSP failure, got {other:?}"),
        }
    }
}
