//! Seeded event-level simulation of the protocol.
//!
//! Each packet is one independent trial: Alice draws L phase bits and a global
//! phase, the packet's photon number is Poisson, each photon survives the
//! channel independently, and Bob's randomly chosen delay admits a click only
//! inside the L - r bin interference window. Dark clicks (probability d per
//! packet) land uniformly over the L bins and read a uniform bit.
//!
//! Every packet draws from its own ChaCha8 stream selected by packet index,
//! so a session is a pure function of (seed, parameters) whatever the thread
//! count.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interferometer::{self, MeasuredTable};
use crate::keyrate::{self, FiniteKeyInputs, ProtocolParams};
use crate::model::{self, LinkParams};

/// Packets simulated per work unit. Fixed so results never depend on scheduling.
const CHUNK: u64 = 8192;

/// Alice's emitted packet, reduced to what the measurement statistics depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    /// s_1..s_L, each 0 or 1. Bit b is the phase (2b - 1)·π/2.
    pub phase_bits: Vec<u8>,
    /// Global phase in [0, 2π). Never read by the measurement model.
    pub global_phase: f64,
}

impl Packet {
    pub fn len(&self) -> u32 {
        self.phase_bits.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.phase_bits.is_empty()
    }

    /// Same packet with its global phase advanced by `shift` (mod 2π).
    pub fn with_phase_shift(&self, shift: f64) -> Packet {
        Packet {
            phase_bits: self.phase_bits.clone(),
            global_phase: (self.global_phase + shift).rem_euclid(TAU),
        }
    }
}

/// Draw L uniform phase bits and a uniform global phase.
pub fn encode_packet<R: Rng + ?Sized>(rng: &mut R, packet_len: u32) -> Packet {
    let mut packet = Packet {
        phase_bits: Vec::with_capacity(packet_len as usize),
        global_phase: 0.0,
    };
    refill_packet(rng, packet_len, &mut packet);
    packet
}

fn refill_packet<R: Rng + ?Sized>(rng: &mut R, packet_len: u32, packet: &mut Packet) {
    packet.phase_bits.clear();
    let mut remaining = packet_len;
    while remaining > 0 {
        let word = rng.next_u64();
        let take = remaining.min(64);
        packet.phase_bits.extend((0..take).map(|i| ((word >> i) & 1) as u8));
        remaining -= take;
    }
    packet.global_phase = rng.random::<f64>() * TAU;
}

/// One announced detection: Bob clicked in bin k of the window for delay r.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectionEvent {
    pub r: u32,
    /// Earlier pulse index, 1-based.
    pub k: u32,
    pub bob_bit: u8,
    /// Diagnostic only; Bob cannot observe it.
    pub dark: bool,
}

/// Per-session channel constants, optionally with per-delay overrides.
#[derive(Debug, Clone)]
pub struct Channel {
    packet_len: u32,
    photons: Option<Poisson<f64>>,
    dark: f64,
    /// Indexed by r - 1.
    eta: Vec<f64>,
    e_s: Vec<f64>,
}

impl Channel {
    pub fn new(protocol: &ProtocolParams, link: &LinkParams) -> Result<Self> {
        protocol.validate()?;
        link.validate()?;
        let delays = (protocol.packet_len - 1) as usize;
        let eta = model::overall_efficiency(link);
        Self::build(protocol, link, vec![eta; delays], vec![link.e_s; delays])
    }

    /// Channel whose interferometer loss (and, when present, e_s) varies by
    /// delay according to a measured table. With `visibility` set, the arm
    /// imbalance adds (1 - V)/2 to each delay's e_s.
    pub fn with_table(
        protocol: &ProtocolParams,
        link: &LinkParams,
        table: &MeasuredTable,
        visibility: bool,
    ) -> Result<Self> {
        protocol.validate()?;
        link.validate()?;
        if table.packet_len() != protocol.packet_len {
            return Err(Error::invalid(
                "il_table",
                format!(
                    "table covers L = {}, protocol has L = {}",
                    table.packet_len(),
                    protocol.packet_len
                ),
            ));
        }
        let mut eta = Vec::with_capacity(table.rows().len());
        let mut e_s = Vec::with_capacity(table.rows().len());
        for row in table.rows() {
            let il = interferometer::combine_arms_db(row.long_il_db, row.short_il_db);
            eta.push(model::efficiency_with_loss(link, il));
            let mut err = row.e_s.unwrap_or(link.e_s);
            if visibility {
                err += interferometer::visibility_error(row.long_il_db, row.short_il_db);
            }
            e_s.push(err.min(0.5));
        }
        Self::build(protocol, link, eta, e_s)
    }

    fn build(protocol: &ProtocolParams, link: &LinkParams, eta: Vec<f64>, e_s: Vec<f64>) -> Result<Self> {
        let lambda = f64::from(protocol.packet_len) * protocol.mu;
        let photons = if lambda > 0.0 {
            Some(Poisson::new(lambda).map_err(|e| Error::invalid("mu", e.to_string()))?)
        } else {
            None
        };
        Ok(Channel {
            packet_len: protocol.packet_len,
            photons,
            dark: link.dark_count,
            eta,
            e_s,
        })
    }

    pub fn packet_len(&self) -> u32 {
        self.packet_len
    }
}

/// Measure one packet with delay `r`.
///
/// At most one event per packet. A valid-window signal click wins over a
/// dark click in the same packet; clicks outside the window are discarded.
pub fn measure_packet<R: Rng + ?Sized>(
    packet: &Packet,
    rng: &mut R,
    channel: &Channel,
    r: u32,
) -> Result<Option<DetectionEvent>> {
    let len = channel.packet_len;
    if r < 1 || r >= len {
        return Err(Error::DelayOutOfRange { r, max: len - 1 });
    }
    if packet.len() != len {
        return Err(Error::invalid(
            "L",
            format!("packet has {} pulses, channel expects {len}", packet.len()),
        ));
    }
    let window = len - r;
    let eta = channel.eta[(r - 1) as usize];
    let e_s = channel.e_s[(r - 1) as usize];

    let photons = channel.photons.as_ref().map_or(0.0, |p| p.sample(rng));
    let signal = photons >= 1.0 && {
        let survive = -(photons * (-eta).ln_1p()).exp_m1();
        rng.random::<f64>() < survive
    };
    if signal {
        let bin = rng.random_range(1..=len);
        if bin <= window {
            let k = bin;
            let truth = packet.phase_bits[(k - 1) as usize] ^ packet.phase_bits[(k + r - 1) as usize];
            let flip = u8::from(rng.random::<f64>() < e_s);
            return Ok(Some(DetectionEvent {
                r,
                k,
                bob_bit: truth ^ flip,
                dark: false,
            }));
        }
    }
    if channel.dark > 0.0 && rng.random::<f64>() < channel.dark {
        let bin = rng.random_range(1..=len);
        if bin <= window {
            let bob_bit = u8::from(rng.random::<bool>());
            return Ok(Some(DetectionEvent {
                r,
                k: bin,
                bob_bit,
                dark: true,
            }));
        }
    }
    Ok(None)
}

/// Alice's sifted bit s_k ⊕ s_{k+r} paired with Bob's bit.
pub fn sift(packet: &Packet, event: &DetectionEvent) -> Result<(u8, u8)> {
    let len = packet.len();
    if event.k < 1 || event.r < 1 || event.k + event.r > len {
        return Err(Error::EventOutOfPacket {
            k: event.k,
            r: event.r,
            len,
        });
    }
    let alice = packet.phase_bits[(event.k - 1) as usize] ^ packet.phase_bits[(event.k + event.r - 1) as usize];
    Ok((alice, event.bob_bit))
}

/// Independent generator for packet `index` of the session keyed by `seed`.
pub fn packet_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Checks that shifting the global phase leaves the measurement record of
/// `packet` unchanged over `trials` seeded measurements at delay `r`.
pub fn phase_invariance_check(
    packet: &Packet,
    shift: f64,
    channel: &Channel,
    r: u32,
    seed: u64,
    trials: u64,
) -> Result<bool> {
    let shifted = packet.with_phase_shift(shift);
    for trial in 0..trials {
        let mut a = packet_rng(seed, trial);
        let mut b = a.clone();
        if measure_packet(packet, &mut a, channel, r)? != measure_packet(&shifted, &mut b, channel, r)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// How a session is run.
#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub packets: u64,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    /// Keep every sifted event with its packet index.
    pub keep_records: bool,
    /// Per-delay loss / e_s overrides.
    pub table: Option<MeasuredTable>,
    /// Add the arm-imbalance visibility error when a table is given.
    pub visibility: bool,
}

/// One sifted bit with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SiftedRecord {
    pub packet: u64,
    pub event: DetectionEvent,
    pub alice_bit: u8,
}

/// Aggregate statistics of a session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionStats {
    #[serde(rename = "N_em")]
    pub emitted_packets: u64,
    #[serde(rename = "N")]
    pub sifted_len: u64,
    pub q_hat: f64,
    pub mismatches: u64,
    /// `None` when nothing was sifted.
    pub e_b_hat: Option<f64>,
    pub dark_events: u64,
    /// SHA-256 of Alice's sifted bits, one byte per bit, packet order.
    pub alice_digest: String,
    pub bob_digest: String,
    pub seed: u64,
}

/// Key rates evaluated on the observed yield and error rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalRates {
    pub v_th: u32,
    pub e_src: f64,
    #[serde(rename = "R")]
    pub rate: f64,
    #[serde(rename = "R_ft")]
    pub rate_finite: f64,
}

#[derive(Debug, Clone)]
pub struct SessionRun {
    pub stats: SessionStats,
    pub rates: Option<EmpiricalRates>,
    /// Alice's sifted key, one 0/1 byte per bit, in packet order.
    pub alice_key: Vec<u8>,
    pub bob_key: Vec<u8>,
    /// Present only with [`SessionOptions::keep_records`].
    pub records: Vec<SiftedRecord>,
}

#[derive(Default)]
struct ChunkResult {
    alice: Vec<u8>,
    bob: Vec<u8>,
    mismatches: u64,
    darks: u64,
    records: Vec<SiftedRecord>,
}

fn simulate_chunk(channel: &Channel, seed: u64, start: u64, end: u64, keep: bool) -> Result<ChunkResult> {
    let len = channel.packet_len;
    let mut out = ChunkResult::default();
    let mut packet = Packet {
        phase_bits: Vec::with_capacity(len as usize),
        global_phase: 0.0,
    };
    for index in start..end {
        let mut rng = packet_rng(seed, index);
        refill_packet(&mut rng, len, &mut packet);
        let r = rng.random_range(1..len);
        let Some(event) = measure_packet(&packet, &mut rng, channel, r)? else {
            continue;
        };
        let (alice, bob) = sift(&packet, &event)?;
        out.alice.push(alice);
        out.bob.push(bob);
        out.mismatches += u64::from(alice != bob);
        out.darks += u64::from(event.dark);
        if keep {
            out.records.push(SiftedRecord {
                packet: index,
                event,
                alice_bit: alice,
            });
        }
    }
    Ok(out)
}

/// Simulate `options.packets` packets and aggregate the sifted key.
pub fn run_session(protocol: &ProtocolParams, link: &LinkParams, options: &SessionOptions) -> Result<SessionRun> {
    if options.packets == 0 {
        return Err(Error::invalid("packets", "must be >= 1"));
    }
    let channel = match &options.table {
        Some(table) => Channel::with_table(protocol, link, table, options.visibility)?,
        None => Channel::new(protocol, link)?,
    };
    let chunks = options.packets.div_ceil(CHUNK);
    let work = || -> Result<Vec<ChunkResult>> {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * CHUNK;
                let end = (start + CHUNK).min(options.packets);
                simulate_chunk(&channel, options.seed, start, end, options.keep_records)
            })
            .collect()
    };
    let results = if options.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::invalid("workers", e.to_string()))?
            .install(work)?
    } else {
        work()?
    };

    let sifted: usize = results.iter().map(|c| c.alice.len()).sum();
    let mut alice_key = Vec::with_capacity(sifted);
    let mut bob_key = Vec::with_capacity(sifted);
    let mut records = Vec::new();
    let (mut mismatches, mut darks) = (0, 0);
    for chunk in results {
        alice_key.extend_from_slice(&chunk.alice);
        bob_key.extend_from_slice(&chunk.bob);
        records.extend(chunk.records);
        mismatches += chunk.mismatches;
        darks += chunk.darks;
    }

    let n = alice_key.len() as u64;
    let stats = SessionStats {
        emitted_packets: options.packets,
        sifted_len: n,
        q_hat: n as f64 / options.packets as f64,
        mismatches,
        e_b_hat: (n > 0).then(|| mismatches as f64 / n as f64),
        dark_events: darks,
        alice_digest: hex::encode(Sha256::digest(&alice_key)),
        bob_digest: hex::encode(Sha256::digest(&bob_key)),
        seed: options.seed,
    };
    let rates = empirical_rates(protocol, &stats)?;
    Ok(SessionRun {
        stats,
        rates,
        alice_key,
        bob_key,
        records,
    })
}

/// Feed observed (N, e_b) into the rate formulas; `None` without sifted key.
pub fn empirical_rates(protocol: &ProtocolParams, stats: &SessionStats) -> Result<Option<EmpiricalRates>> {
    let Some(e_b) = stats.e_b_hat else {
        return Ok(None);
    };
    let len = protocol.packet_len;
    let e_src_of = |v: u32| keyrate::source_tag_error(len, protocol.mu, v);
    let v_th = match protocol.v_th {
        Some(v) => v,
        None => keyrate::optimal_vth(stats.q_hat, e_b, e_src_of, len, protocol.ec_efficiency)?.v_th,
    };
    let e_src = e_src_of(v_th)?;
    let rate = keyrate::asymptotic_rate(stats.q_hat, e_b, e_src, len, v_th, protocol.ec_efficiency)?;
    let finite = keyrate::finite_rate(&FiniteKeyInputs {
        sifted_len: stats.sifted_len,
        emitted_packets: stats.emitted_packets,
        e_b,
        e_src,
        v_th,
        packet_len: len,
        ec_efficiency: protocol.ec_efficiency,
        security_exponent: protocol.security_exponent,
    });
    let rate_finite = match finite {
        Ok(fk) => fk.rate,
        Err(Error::InsufficientSiftedKey { .. }) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(Some(EmpiricalRates {
        v_th,
        e_src,
        rate,
        rate_finite,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel(mu: f64, length_km: f64, dark: f64, e_s: f64) -> Channel {
        let protocol = ProtocolParams {
            mu,
            ..ProtocolParams::default()
        };
        let link = LinkParams {
            length_km,
            dark_count: dark,
            e_s,
            ..LinkParams::default()
        };
        Channel::new(&protocol, &link).unwrap()
    }

    #[test]
    fn packet_length_and_determinism() {
        let a = encode_packet(&mut packet_rng(7, 3), 65);
        let b = encode_packet(&mut packet_rng(7, 3), 65);
        assert_eq!(a.len(), 65);
        assert_eq!(a, b);
        assert!(a.phase_bits.iter().all(|&b| b <= 1));
        assert!((0.0..TAU).contains(&a.global_phase));
        let long = encode_packet(&mut packet_rng(7, 3), 1025);
        assert_eq!(long.len(), 1025);
        assert_ne!(encode_packet(&mut packet_rng(7, 4), 65), a);
    }

    #[test]
    fn bits_are_balanced() {
        let mut ones = 0u64;
        let packets = 1_000_000u64 / 65 + 1;
        let mut rng = packet_rng(11, 0);
        for _ in 0..packets {
            ones += encode_packet(&mut rng, 65)
                .phase_bits
                .iter()
                .map(|&b| u64::from(b))
                .sum::<u64>();
        }
        let n = (packets * 65) as f64;
        let sigma = (n * 0.25).sqrt();
        assert!((ones as f64 - n / 2.0).abs() < 5.0 * sigma);
    }

    #[test]
    fn vacuum_without_darks_never_clicks() {
        let ch = channel(0.0, 0.0, 0.0, 0.022);
        let mut rng = packet_rng(1, 0);
        for _ in 0..10_000 {
            let p = encode_packet(&mut rng, 65);
            assert_eq!(measure_packet(&p, &mut rng, &ch, 17).unwrap(), None);
        }
    }

    #[test]
    fn noiseless_events_are_faithful() {
        let ch = channel(0.5, 0.0, 0.0, 0.0);
        let mut rng = packet_rng(2, 0);
        let mut events = 0;
        for i in 0..20_000u32 {
            let p = encode_packet(&mut rng, 65);
            let r = 1 + i % 64;
            if let Some(ev) = measure_packet(&p, &mut rng, &ch, r).unwrap() {
                assert!(ev.k + ev.r <= 65);
                let (a, b) = sift(&p, &ev).unwrap();
                assert_eq!(a, b);
                events += 1;
            }
        }
        assert!(events > 1000);
    }

    #[test]
    fn click_fraction_at_fixed_delay_matches_yield() {
        let (mu, r, packets) = (0.1, 20u32, 1_000_000u64);
        let ch = channel(mu, 0.0, 1e-3, 0.022);
        let mut clicks = 0u64;
        for i in 0..packets {
            let mut rng = packet_rng(5, i);
            let p = encode_packet(&mut rng, 65);
            clicks += u64::from(measure_packet(&p, &mut rng, &ch, r).unwrap().is_some());
        }
        let eta = ch.eta[0];
        let expected = (65.0 - f64::from(r)) / 65.0 * (-(-eta * 65.0 * mu).exp_m1() + 1e-3);
        let sigma = (expected * (1.0 - expected) / packets as f64).sqrt();
        let observed = clicks as f64 / packets as f64;
        assert!((observed - expected).abs() < 5.0 * sigma, "{observed} vs {expected}");
    }

    #[test]
    fn sift_examples() {
        let p = Packet {
            phase_bits: vec![0, 0, 1, 0],
            global_phase: 0.0,
        };
        let ev = |k, r| DetectionEvent {
            r,
            k,
            bob_bit: 1,
            dark: false,
        };
        assert_eq!(sift(&p, &ev(1, 1)).unwrap(), (0, 1));
        assert_eq!(sift(&p, &ev(3, 1)).unwrap(), (1, 1));
        assert_eq!(sift(&p, &ev(2, 1)).unwrap().0, 1);
        assert!(matches!(sift(&p, &ev(3, 2)), Err(Error::EventOutOfPacket { .. })));
    }

    #[test]
    fn measure_rejects_bad_delay() {
        let ch = channel(0.1, 0.0, 0.0, 0.0);
        let p = encode_packet(&mut packet_rng(0, 0), 65);
        assert!(measure_packet(&p, &mut packet_rng(0, 1), &ch, 0).is_err());
        assert!(measure_packet(&p, &mut packet_rng(0, 1), &ch, 65).is_err());
    }

    #[test]
    fn global_phase_is_irrelevant() {
        let ch = channel(0.3, 0.0, 1e-2, 0.05);
        let p = encode_packet(&mut packet_rng(9, 0), 65);
        assert!(phase_invariance_check(&p, std::f64::consts::PI, &ch, 9, 1, 200).unwrap());
        assert!(phase_invariance_check(&p, 1.234, &ch, 40, 2, 200).unwrap());
        let mut rng = packet_rng(10, 0);
        for i in 0..1000 {
            let shift = rng.random::<f64>() * 100.0 - 50.0;
            assert!(phase_invariance_check(&p, shift, &ch, 1 + i % 64, i.into(), 1).unwrap());
        }
    }

    #[test]
    fn zero_packets_rejected() {
        let opts = SessionOptions {
            packets: 0,
            ..SessionOptions::default()
        };
        assert!(run_session(&ProtocolParams::default(), &LinkParams::default(), &opts).is_err());
    }

    #[test]
    fn empty_session_has_no_rates() {
        let protocol = ProtocolParams {
            mu: 0.0,
            ..ProtocolParams::default()
        };
        let link = LinkParams {
            dark_count: 0.0,
            ..LinkParams::default()
        };
        let opts = SessionOptions {
            packets: 1000,
            seed: 3,
            ..SessionOptions::default()
        };
        let run = run_session(&protocol, &link, &opts).unwrap();
        assert_eq!(run.stats.sifted_len, 0);
        assert_eq!(run.stats.e_b_hat, None);
        assert!(run.rates.is_none());
    }

    #[test]
    fn table_overrides_apply_per_delay() {
        let mut csv = String::from("r,long_IL_dB,short_IL_dB,e_s\n");
        for r in 1..=64 {
            let e_s = if r == 10 { 0.5 } else { 0.0 };
            csv.push_str(&format!("{r},5.6,5.6,{e_s}\n"));
        }
        let table = MeasuredTable::parse(csv.as_bytes(), 65).unwrap();
        let protocol = ProtocolParams {
            mu: 0.5,
            ..ProtocolParams::default()
        };
        let link = LinkParams {
            dark_count: 0.0,
            ..LinkParams::default()
        };
        let opts = SessionOptions {
            packets: 100_000,
            seed: 4,
            keep_records: true,
            table: Some(table),
            ..SessionOptions::default()
        };
        let run = run_session(&protocol, &link, &opts).unwrap();
        for rec in &run.records {
            if rec.event.r != 10 {
                assert_eq!(rec.alice_bit, rec.event.bob_bit);
            }
        }
        let wrong_at_10 = run
            .records
            .iter()
            .filter(|rec| rec.event.r == 10 && rec.alice_bit != rec.event.bob_bit)
            .count();
        assert!(wrong_at_10 > 0);
    }

    #[test]
    fn table_must_match_packet_length() {
        let mut csv = String::from("r,long_IL_dB,short_IL_dB\n");
        for r in 1..=16 {
            csv.push_str(&format!("{r},5.6,5.6\n"));
        }
        let table = MeasuredTable::parse(csv.as_bytes(), 17).unwrap();
        assert!(Channel::with_table(&ProtocolParams::default(), &LinkParams::default(), &table, false).is_err());
    }
}
