//! Image-source shoebox simulator.
//!
//! Generates ground-truth RIRs for rectangular rooms by mirroring the
//! source across the walls: each image contributes an impulse of amplitude
//! `prod(sqrt(1 - alpha_wall)^hits) / distance` at the nearest-sample
//! rounding of `distance / c`. Absorption is frequency-independent and
//! there is no air damping; the simulator is an oracle for metric and
//! retrieval tests, not a general-purpose acoustics engine.

use serde::{Deserialize, Serialize};

use crate::acoustics::Rir;
use crate::error::{Error, Result};
use crate::signal::WORKING_SAMPLE_RATE;
use crate::store::Embedding;

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Rectangular room. Walls are ordered
/// `[x=0, x=Lx, y=0, y=Ly, z=0, z=Lz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShoeboxRoom {
    pub dims: [f64; 3],
    pub wall_absorption: [f64; 6],
    pub speed_of_sound: f64,
}

impl ShoeboxRoom {
    pub fn new(dims: [f64; 3], wall_absorption: [f64; 6]) -> Result<Self> {
        Self::with_speed_of_sound(dims, wall_absorption, DEFAULT_SPEED_OF_SOUND)
    }

    /// Uniform absorption on all six walls.
    pub fn uniform(dims: [f64; 3], absorption: f64) -> Result<Self> {
        Self::new(dims, [absorption; 6])
    }

    pub fn with_speed_of_sound(
        dims: [f64; 3],
        wall_absorption: [f64; 6],
        speed_of_sound: f64,
    ) -> Result<Self> {
        for &d in &dims {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidValue(format!("room dimension {d}")));
            }
        }
        for &a in &wall_absorption {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::CoefficientOutOfRange(a));
            }
        }
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "speed of sound {speed_of_sound}"
            )));
        }
        Ok(Self {
            dims,
            wall_absorption,
            speed_of_sound,
        })
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    fn contains_strictly(&self, p: [f64; 3]) -> bool {
        p.iter()
            .zip(&self.dims)
            .all(|(&v, &d)| v > 0.0 && v < d && v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimParams {
    /// Maximum number of wall reflections per path.
    pub max_order: usize,
    /// Output length in samples.
    pub rir_len: usize,
    pub sample_rate: u32,
}

impl SimParams {
    pub fn new(max_order: usize, rir_len: usize) -> Result<Self> {
        if rir_len == 0 {
            return Err(Error::InvalidValue("rir_len must be >= 1".into()));
        }
        Ok(Self {
            max_order,
            rir_len,
            sample_rate: WORKING_SAMPLE_RATE,
        })
    }
}

/// Runs the image-source method. Deterministic: the image lattice is walked
/// in a fixed order and contributions accumulate into the buffer in that
/// order.
pub fn simulate_rir(
    room: &ShoeboxRoom,
    source: [f64; 3],
    listener: [f64; 3],
    params: &SimParams,
) -> Result<Rir> {
    if !room.contains_strictly(source) {
        return Err(Error::OutsideRoom(source));
    }
    if !room.contains_strictly(listener) {
        return Err(Error::OutsideRoom(listener));
    }
    if source == listener {
        return Err(Error::CoincidentPositions);
    }

    let fs = params.sample_rate as f64;
    let c = room.speed_of_sound;
    let betas: Vec<f64> = room.wall_absorption.iter().map(|&a| (1.0 - a).sqrt()).collect();
    let mut h = vec![0.0f64; params.rir_len];

    // Images beyond this distance round past the end of the buffer.
    let d_max = (params.rir_len as f64 - 0.5) / fs * c;
    let order_bound = params.max_order.div_ceil(2) as i64;
    let lattice_bound = |dim: f64| -> i64 {
        let by_distance = (d_max / (2.0 * dim)).ceil() as i64 + 1;
        by_distance.min(order_bound)
    };
    let nx_max = lattice_bound(room.dims[0]);
    let ny_max = lattice_bound(room.dims[1]);
    let nz_max = lattice_bound(room.dims[2]);

    for nx in -nx_max..=nx_max {
        for ny in -ny_max..=ny_max {
            for nz in -nz_max..=nz_max {
                for qx in 0..=1i64 {
                    for qy in 0..=1i64 {
                        for qz in 0..=1i64 {
                            let hits_lo =
                                [(nx - qx).abs(), (ny - qy).abs(), (nz - qz).abs()];
                            let hits_hi = [nx.abs(), ny.abs(), nz.abs()];
                            let order: i64 =
                                hits_lo.iter().sum::<i64>() + hits_hi.iter().sum::<i64>();
                            if order > params.max_order as i64 {
                                continue;
                            }
                            let image = [
                                (1 - 2 * qx) as f64 * source[0] + 2.0 * nx as f64 * room.dims[0],
                                (1 - 2 * qy) as f64 * source[1] + 2.0 * ny as f64 * room.dims[1],
                                (1 - 2 * qz) as f64 * source[2] + 2.0 * nz as f64 * room.dims[2],
                            ];
                            let dist = ((image[0] - listener[0]).powi(2)
                                + (image[1] - listener[1]).powi(2)
                                + (image[2] - listener[2]).powi(2))
                            .sqrt();
                            let delay = (dist / c * fs).round() as usize;
                            if delay >= params.rir_len {
                                continue;
                            }
                            debug_assert!(dist > 0.0);
                            let mut gain = 1.0 / dist;
                            for axis in 0..3 {
                                gain *= betas[2 * axis].powi(hits_lo[axis] as i32)
                                    * betas[2 * axis + 1].powi(hits_hi[axis] as i32);
                            }
                            h[delay] += gain;
                        }
                    }
                }
            }
        }
    }
    Rir::new(h, params.sample_rate)
}

/// Sabine's reverberation time estimate `0.161 V / sum(S_i alpha_i)`.
pub fn sabine_t60(room: &ShoeboxRoom) -> Result<f64> {
    let [lx, ly, lz] = room.dims;
    let areas = [ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly];
    let absorbing: f64 = areas
        .iter()
        .zip(&room.wall_absorption)
        .map(|(s, a)| s * a)
        .sum();
    if absorbing <= 0.0 {
        return Err(Error::ZeroAbsorption);
    }
    Ok(0.161 * room.volume() / absorbing)
}

/// Deterministic feature vector over (dims, absorptions, positions),
/// zero-padded to `dim`. A test-time stand-in for learned image embeddings:
/// identical rooms give identical vectors.
pub fn room_descriptor(
    room: &ShoeboxRoom,
    source: [f64; 3],
    listener: [f64; 3],
    dim: usize,
) -> Result<Embedding> {
    let mut features = Vec::with_capacity(dim);
    features.extend_from_slice(&room.dims);
    features.extend_from_slice(&room.wall_absorption);
    features.extend_from_slice(&source);
    features.extend_from_slice(&listener);
    if dim < features.len() {
        return Err(Error::InvalidConfig(format!(
            "descriptor needs at least {} dimensions, got {dim}",
            features.len()
        )));
    }
    features.resize(dim, 0.0);
    Embedding::new(features)
}

// -- room spec JSON -------------------------------------------------------

/// Wall absorption in a room spec: either one uniform value or six
/// per-wall values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AbsorptionSpec {
    Uniform(f64),
    PerWall([f64; 6]),
}

impl AbsorptionSpec {
    pub fn to_walls(self) -> [f64; 6] {
        match self {
            AbsorptionSpec::Uniform(a) => [a; 6],
            AbsorptionSpec::PerWall(walls) => walls,
        }
    }
}

fn default_speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

fn default_sample_rate() -> u32 {
    WORKING_SAMPLE_RATE
}

/// JSON description of a simulation: room, positions, and run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub wall_absorption: AbsorptionSpec,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    pub source: [f64; 3],
    pub listener: [f64; 3],
    pub max_order: usize,
    pub rir_len: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
}

impl RoomSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn build(&self) -> Result<(ShoeboxRoom, [f64; 3], [f64; 3], SimParams)> {
        let room = ShoeboxRoom::with_speed_of_sound(
            self.dims,
            self.wall_absorption.to_walls(),
            self.speed_of_sound,
        )?;
        let mut params = SimParams::new(self.max_order, self.rir_len)?;
        params.sample_rate = self.sample_rate;
        Ok((room, self.source, self.listener, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::t60;

    #[test]
    fn direct_path_only_impulse() {
        // c = 340 makes the 3.4 m path exactly 10 ms -> sample 160.
        let room =
            ShoeboxRoom::with_speed_of_sound([10.0, 8.0, 6.0], [0.5; 6], 340.0).unwrap();
        let params = SimParams::new(0, 1000).unwrap();
        let rir = simulate_rir(&room, [2.0, 4.0, 3.0], [5.4, 4.0, 3.0], &params).unwrap();
        let first = rir.samples().iter().position(|&s| s != 0.0).unwrap();
        assert_eq!(first, 160);
        assert!((rir.samples()[160] - 1.0 / 3.4).abs() < 1e-12);
        assert_eq!(rir.samples().iter().filter(|&&s| s != 0.0).count(), 1);
    }

    #[test]
    fn total_absorption_leaves_only_the_direct_path() {
        let room = ShoeboxRoom::uniform([5.0, 4.0, 3.0], 1.0).unwrap();
        let params = SimParams::new(5, 4000).unwrap();
        let rir = simulate_rir(&room, [1.0, 1.0, 1.0], [3.0, 2.0, 1.5], &params).unwrap();
        assert_eq!(rir.samples().iter().filter(|&&s| s != 0.0).count(), 1);
    }

    #[test]
    fn first_order_reflection_amplitude_and_delay() {
        // Single reflection off the x=0 wall: path from the mirrored source.
        let room = ShoeboxRoom::uniform([6.0, 4.0, 3.0], 0.36).unwrap();
        let source = [1.0, 2.0, 1.5];
        let listener = [2.0, 2.0, 1.5];
        let params = SimParams::new(1, 2000).unwrap();
        let rir = simulate_rir(&room, source, listener, &params).unwrap();
        let fs = params.sample_rate as f64;
        // Mirror at x = -1: distance 3 m, one bounce on wall x=0.
        let d = 3.0;
        let delay = (d / room.speed_of_sound * fs).round() as usize;
        let beta = (1.0f64 - 0.36).sqrt();
        assert!((rir.samples()[delay] - beta / d).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_positions() {
        let room = ShoeboxRoom::uniform([5.0, 4.0, 3.0], 0.2).unwrap();
        let params = SimParams::new(2, 100).unwrap();
        assert!(matches!(
            simulate_rir(&room, [0.0, 1.0, 1.0], [2.0, 2.0, 1.0], &params),
            Err(Error::OutsideRoom(_))
        ));
        assert!(matches!(
            simulate_rir(&room, [1.0, 1.0, 1.0], [5.0, 2.0, 1.0], &params),
            Err(Error::OutsideRoom(_))
        ));
        assert!(matches!(
            simulate_rir(&room, [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], &params),
            Err(Error::CoincidentPositions)
        ));
    }

    #[test]
    fn energy_decreases_with_absorption() {
        let params = SimParams::new(20, 8000).unwrap();
        let source = [1.2, 1.1, 1.0];
        let listener = [3.3, 2.7, 1.9];
        let mut previous = f64::INFINITY;
        for alpha in [0.1, 0.2, 0.4, 0.8] {
            let room = ShoeboxRoom::uniform([5.0, 4.0, 3.0], alpha).unwrap();
            let rir = simulate_rir(&room, source, listener, &params).unwrap();
            let energy: f64 = rir.samples().iter().map(|s| s * s).sum();
            assert!(energy < previous, "alpha {alpha}: {energy} >= {previous}");
            previous = energy;
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let room = ShoeboxRoom::uniform([5.0, 4.0, 3.0], 0.3).unwrap();
        let params = SimParams::new(12, 4000).unwrap();
        let a = simulate_rir(&room, [1.0, 1.5, 1.2], [3.5, 2.5, 2.0], &params).unwrap();
        let b = simulate_rir(&room, [1.0, 1.5, 1.2], [3.5, 2.5, 2.0], &params).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn sabine_worked_examples() {
        let room = ShoeboxRoom::uniform([5.0, 4.0, 3.0], 0.2).unwrap();
        let t = sabine_t60(&room).unwrap();
        assert!((t - 0.5138).abs() < 1e-3, "sabine {t}");

        let dead = ShoeboxRoom::uniform([5.0, 4.0, 3.0], 1.0).unwrap();
        let t_dead = sabine_t60(&dead).unwrap();
        assert!((t_dead - 0.1027).abs() < 1e-3);

        // Uniform absorption: doubling alpha halves T60.
        let doubled = ShoeboxRoom::uniform([5.0, 4.0, 3.0], 0.4).unwrap();
        let ratio = sabine_t60(&room).unwrap() / sabine_t60(&doubled).unwrap();
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn measured_t60_tracks_sabine() {
        let room = ShoeboxRoom::uniform([5.0, 4.0, 3.0], 0.2).unwrap();
        let sabine = sabine_t60(&room).unwrap();
        let params = SimParams::new(60, 12_000).unwrap();
        let rir = simulate_rir(&room, [1.2, 1.1, 1.0], [3.4, 2.8, 1.7], &params).unwrap();
        let measured = t60(&rir).unwrap();
        assert!(
            (measured - sabine).abs() / sabine < 0.3,
            "measured {measured}, sabine {sabine}"
        );
    }

    #[test]
    fn descriptor_is_deterministic_and_separates_rooms() {
        let room = ShoeboxRoom::uniform([5.0, 4.0, 3.0], 0.2).unwrap();
        let a = room_descriptor(&room, [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], 32).unwrap();
        let b = room_descriptor(&room, [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], 32).unwrap();
        assert_eq!(a.values(), b.values());
        assert!((a.cosine(&a) - 1.0).abs() < 1e-12);

        let wider = ShoeboxRoom::uniform([6.0, 4.0, 3.0], 0.2).unwrap();
        let c = room_descriptor(&wider, [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], 32).unwrap();
        assert_ne!(a.values(), c.values());

        assert!(room_descriptor(&room, [1.0; 3], [2.0; 3], 8).is_err());
    }

    #[test]
    fn room_spec_json_round_trip() {
        let json = r#"{
            "dims": [5.0, 4.0, 3.0],
            "wall_absorption": 0.2,
            "source": [1.0, 1.0, 1.0],
            "listener": [3.0, 2.0, 1.5],
            "max_order": 30,
            "rir_len": 8000
        }"#;
        let spec = RoomSpec::from_json(json).unwrap();
        let (room, source, _, params) = spec.build().unwrap();
        assert_eq!(room.wall_absorption, [0.2; 6]);
        assert_eq!(room.speed_of_sound, DEFAULT_SPEED_OF_SOUND);
        assert_eq!(source, [1.0, 1.0, 1.0]);
        assert_eq!(params.sample_rate, WORKING_SAMPLE_RATE);

        let perwall = r#"{
            "dims": [5.0, 4.0, 3.0],
            "wall_absorption": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            "source": [1.0, 1.0, 1.0],
            "listener": [3.0, 2.0, 1.5],
            "max_order": 2,
            "rir_len": 100
        }"#;
        let spec = RoomSpec::from_json(perwall).unwrap();
        let (room, ..) = spec.build().unwrap();
        assert_eq!(room.wall_absorption[5], 0.6);
    }
}
