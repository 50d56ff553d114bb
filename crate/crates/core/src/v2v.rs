//! Vehicle-to-vehicle messaging: a fixed 48-byte little-endian safety
//! message and a broadcast channel with range gating, Bernoulli loss, and
//! constant delivery latency. Struct fields mirror the wire types exactly,
//! so decode after encode reproduces the struct bit for bit.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::risk::VehicleState;
use crate::{Error, Result};

// ============================================================================
// Wire format
// ============================================================================

/// Encoded message size, bytes.
pub const BSM_WIRE_SIZE: usize = 48;

/// Flag bit: the sender intends to change lanes.
pub const FLAG_LANE_CHANGE_INTENT: u8 = 0x01;

const KNOWN_FLAGS: u8 = FLAG_LANE_CHANGE_INTENT;

/// Basic safety message. Little-endian layout:
///
/// | offset | field        | type |
/// |--------|--------------|------|
/// | 0      | sender_id    | u32  |
/// | 4      | seq          | u32  |
/// | 8      | timestamp_ms | u64  |
/// | 16     | x            | f64  |
/// | 24     | y            | f64  |
/// | 32     | theta        | f32  |
/// | 36     | speed        | f32  |
/// | 40     | length_cm    | u16  |
/// | 42     | width_cm     | u16  |
/// | 44     | flags        | u8   |
/// | 45     | reserved (0) | 3B   |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsmMessage {
    pub sender_id: u32,
    pub seq: u32,
    pub timestamp_ms: u64,
    pub x: f64,
    pub y: f64,
    pub theta: f32,
    pub speed: f32,
    pub length_cm: u16,
    pub width_cm: u16,
    pub flags: u8,
}

impl BsmMessage {
    pub fn from_state(
        sender_id: u32,
        seq: u32,
        timestamp_ms: u64,
        state: &VehicleState,
        lane_change_intent: bool,
    ) -> Self {
        BsmMessage {
            sender_id,
            seq,
            timestamp_ms,
            x: state.position.x,
            y: state.position.y,
            theta: state.heading as f32,
            speed: state.speed as f32,
            length_cm: (state.length * 100.0).round().clamp(0.0, u16::MAX as f64) as u16,
            width_cm: (state.width * 100.0).round().clamp(0.0, u16::MAX as f64) as u16,
            flags: if lane_change_intent {
                FLAG_LANE_CHANGE_INTENT
            } else {
                0
            },
        }
    }

    pub fn lane_change_intent(&self) -> bool {
        self.flags & FLAG_LANE_CHANGE_INTENT != 0
    }

    /// Kinematic state as carried on the wire (positions full precision,
    /// heading and speed at f32, sizes at cm resolution).
    pub fn to_state(&self) -> VehicleState {
        VehicleState {
            position: Vec2::new(self.x, self.y),
            heading: self.theta as f64,
            speed: self.speed as f64,
            length: self.length_cm as f64 / 100.0,
            width: self.width_cm as f64 / 100.0,
        }
    }

    pub fn encode(&self) -> [u8; BSM_WIRE_SIZE] {
        let mut b = [0u8; BSM_WIRE_SIZE];
        b[0..4].copy_from_slice(&self.sender_id.to_le_bytes());
        b[4..8].copy_from_slice(&self.seq.to_le_bytes());
        b[8..16].copy_from_slice(&self.timestamp_ms.to_le_bytes());
        b[16..24].copy_from_slice(&self.x.to_le_bytes());
        b[24..32].copy_from_slice(&self.y.to_le_bytes());
        b[32..36].copy_from_slice(&self.theta.to_le_bytes());
        b[36..40].copy_from_slice(&self.speed.to_le_bytes());
        b[40..42].copy_from_slice(&self.length_cm.to_le_bytes());
        b[42..44].copy_from_slice(&self.width_cm.to_le_bytes());
        b[44] = self.flags;
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != BSM_WIRE_SIZE {
            return Err(Error::Decode(format!(
                "message must be {BSM_WIRE_SIZE} bytes, got {}",
                bytes.len()
            )));
        }
        let flags = bytes[44];
        if flags & !KNOWN_FLAGS != 0 {
            return Err(Error::Decode(format!("unknown flag bits 0x{flags:02x}")));
        }
        if bytes[45..48] != [0, 0, 0] {
            return Err(Error::Decode("reserved bytes must be zero".into()));
        }
        let arr = |r: std::ops::Range<usize>| -> &[u8] { &bytes[r] };
        Ok(BsmMessage {
            sender_id: u32::from_le_bytes(arr(0..4).try_into().unwrap()),
            seq: u32::from_le_bytes(arr(4..8).try_into().unwrap()),
            timestamp_ms: u64::from_le_bytes(arr(8..16).try_into().unwrap()),
            x: f64::from_le_bytes(arr(16..24).try_into().unwrap()),
            y: f64::from_le_bytes(arr(24..32).try_into().unwrap()),
            theta: f32::from_le_bytes(arr(32..36).try_into().unwrap()),
            speed: f32::from_le_bytes(arr(36..40).try_into().unwrap()),
            length_cm: u16::from_le_bytes(arr(40..42).try_into().unwrap()),
            width_cm: u16::from_le_bytes(arr(42..44).try_into().unwrap()),
            flags,
        })
    }
}

// ============================================================================
// Channel
// ============================================================================

/// Broadcast channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub range_m: f64,
    pub period_ms: u64,
    pub latency_ms: u64,
    /// Independent per-receiver drop probability.
    pub loss: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            range_m: 200.0,
            period_ms: 100,
            latency_ms: 20,
            loss: 0.0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(Error::InvalidConfig(format!(
                "loss probability {} outside [0, 1]",
                self.loss
            )));
        }
        if self.period_ms == 0 || self.range_m <= 0.0 {
            return Err(Error::InvalidConfig(
                "channel needs a positive period and range".into(),
            ));
        }
        Ok(())
    }
}

/// One broadcast attempt toward one receiver, for the delivery log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryRecord {
    pub sent_ms: u64,
    pub sender: u32,
    pub seq: u32,
    pub receiver: u32,
    pub delivered: bool,
    /// Delivery time when delivered, the send time otherwise.
    pub deliver_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Queued {
    key: (u64, u32, u32, u32),
    msg: BsmMessage,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Simulated broadcast medium. Drop decisions are drawn per receiver in
/// ascending receiver-id order, so a run is reproducible from the seed
/// alone; pending deliveries come back ordered by delivery time, then
/// sender, sequence number, and receiver.
#[derive(Debug, Clone)]
pub struct Channel {
    pub model: ChannelModel,
    rng: ChaCha8Rng,
    next_seq: BTreeMap<u32, u32>,
    queue: BinaryHeap<Reverse<Queued>>,
    log: Vec<DeliveryRecord>,
}

impl Channel {
    pub fn new(model: ChannelModel, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Channel {
            model,
            rng: rand::SeedableRng::seed_from_u64(seed),
            next_seq: BTreeMap::new(),
            queue: BinaryHeap::new(),
            log: Vec::new(),
        })
    }

    /// Next sequence number for a sender (starts at 0).
    pub fn take_seq(&mut self, sender: u32) -> u32 {
        let c = self.next_seq.entry(sender).or_insert(0);
        let s = *c;
        *c += 1;
        s
    }

    /// Queues a message toward every listed receiver within range, after an
    /// independent loss draw each. Receivers are processed in ascending id
    /// order regardless of input order; the sender itself is skipped.
    pub fn broadcast(
        &mut self,
        msg: &BsmMessage,
        sender_pos: Vec2,
        receivers: &[(u32, Vec2)],
        now_ms: u64,
    ) {
        let mut rx: Vec<&(u32, Vec2)> = receivers
            .iter()
            .filter(|(id, _)| *id != msg.sender_id)
            .collect();
        rx.sort_by_key(|(id, _)| *id);
        for (id, pos) in rx {
            let in_range = (pos - sender_pos).norm() <= self.model.range_m;
            // Burn a draw even for out-of-range receivers so the loss
            // stream does not depend on geometry.
            let lost = self.rng.gen::<f64>() < self.model.loss;
            let delivered = in_range && !lost;
            let deliver_ms = now_ms + self.model.latency_ms;
            self.log.push(DeliveryRecord {
                sent_ms: now_ms,
                sender: msg.sender_id,
                seq: msg.seq,
                receiver: *id,
                delivered,
                deliver_ms: if delivered { deliver_ms } else { now_ms },
            });
            if delivered {
                self.queue.push(Reverse(Queued {
                    key: (deliver_ms, msg.sender_id, msg.seq, *id),
                    msg: *msg,
                }));
            }
        }
    }

    /// Releases every delivery due at or before `now_ms`, in key order:
    /// `(deliver_ms, sender, seq, receiver)`.
    pub fn poll(&mut self, now_ms: u64) -> Vec<(u32, BsmMessage)> {
        let mut out = Vec::new();
        while let Some(Reverse(q)) = self.queue.peek() {
            if q.key.0 > now_ms {
                break;
            }
            let Reverse(q) = self.queue.pop().unwrap();
            out.push((q.key.3, q.msg));
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn log(&self) -> &[DeliveryRecord] {
        &self.log
    }
}
