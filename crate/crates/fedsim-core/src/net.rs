//! Heterogeneous network/compute profiles, synchronous round timing, and
//! client sampling (uniform and speed-adaptive).

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-client link and compute characteristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkProfile {
    pub client_id: usize,
    pub down_mbps: f64,
    pub up_mbps: f64,
    /// Examples per second of local training throughput.
    pub compute_rate: f64,
    /// Probability the client is reachable when sampled.
    pub availability: f64,
}

/// Population mix the profiles are drawn from: each client is independently
/// 3G (7 down / 1.75 up Mbps) with probability `fraction_3g`, else
/// 4G (40 down / 10 up Mbps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetMix {
    pub fraction_3g: f64,
    pub compute_rate: f64,
    pub availability: f64,
}

impl Default for NetMix {
    fn default() -> Self {
        Self {
            fraction_3g: 0.0,
            compute_rate: 1e4,
            availability: 1.0,
        }
    }
}

impl NetMix {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction_3g.is_finite() && (0.0..=1.0).contains(&self.fraction_3g)) {
            return Err(Error::InvalidArgument(format!(
                "fraction_3g must lie in [0, 1], got {}",
                self.fraction_3g
            )));
        }
        if !(self.compute_rate.is_finite() && self.compute_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "compute_rate must be > 0, got {}",
                self.compute_rate
            )));
        }
        if !(self.availability.is_finite()
            && self.availability > 0.0
            && self.availability <= 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "availability must lie in (0, 1], got {}",
                self.availability
            )));
        }
        Ok(())
    }
}

pub const THREE_G_DOWN_MBPS: f64 = 7.0;
pub const THREE_G_UP_MBPS: f64 = 7.0 / 4.0;
pub const FOUR_G_DOWN_MBPS: f64 = 40.0;
pub const FOUR_G_UP_MBPS: f64 = 10.0;

/// Seeded i.i.d. assignment of link classes across the client population.
pub fn assign_profiles(num_clients: usize, mix: &NetMix, seed: u64) -> Result<Vec<NetworkProfile>> {
    if num_clients == 0 {
        return Err(Error::EmptyInput("assign_profiles num_clients"));
    }
    mix.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..num_clients)
        .map(|client_id| {
            let u: f64 = rng.random();
            let (down_mbps, up_mbps) = if u < mix.fraction_3g {
                (THREE_G_DOWN_MBPS, THREE_G_UP_MBPS)
            } else {
                (FOUR_G_DOWN_MBPS, FOUR_G_UP_MBPS)
            };
            NetworkProfile {
                client_id,
                down_mbps,
                up_mbps,
                compute_rate: mix.compute_rate,
                availability: mix.availability,
            }
        })
        .collect())
}

/// One participant's contribution to a round: what it downloads, uploads,
/// and computes.
#[derive(Debug, Clone, Copy)]
pub struct RoundPart {
    pub profile: NetworkProfile,
    pub model_bytes_down: usize,
    pub update_bytes_up: usize,
    pub samples_processed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientTiming {
    pub client_id: usize,
    pub download_s: f64,
    pub compute_s: f64,
    pub upload_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTiming {
    pub per_client: Vec<ClientTiming>,
    /// Synchronous barrier: the slowest participant's total.
    pub round_wall_s: f64,
    pub bytes_up: usize,
    pub bytes_down: usize,
}

/// Price a synchronous round: `8 * bytes / (mbps * 1e6)` per link direction,
/// `samples / compute_rate` for local work, wall time the max of totals.
pub fn round_time(participants: &[RoundPart]) -> Result<RoundTiming> {
    if participants.is_empty() {
        return Err(Error::EmptyInput("round_time participants"));
    }
    let mut per_client = Vec::with_capacity(participants.len());
    let mut bytes_up = 0;
    let mut bytes_down = 0;
    let mut round_wall_s = 0.0f64;
    for part in participants {
        let p = &part.profile;
        let download_s = 8.0 * part.model_bytes_down as f64 / (p.down_mbps * 1e6);
        let compute_s = part.samples_processed as f64 / p.compute_rate;
        let upload_s = 8.0 * part.update_bytes_up as f64 / (p.up_mbps * 1e6);
        let total_s = download_s + compute_s + upload_s;
        round_wall_s = round_wall_s.max(total_s);
        bytes_up += part.update_bytes_up;
        bytes_down += part.model_bytes_down;
        per_client.push(ClientTiming {
            client_id: p.client_id,
            download_s,
            compute_s,
            upload_s,
            total_s,
        });
    }
    Ok(RoundTiming {
        per_client,
        round_wall_s,
        bytes_up,
        bytes_down,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingStrategy {
    Uniform,
    /// Weight clients by how far they lag the historical leader:
    /// `w_i = (1 + deficit_i)^alpha` with
    /// `deficit_i = (max_j processed_j - processed_i) / (max_j processed_j + 1)`.
    SpeedAdaptive { alpha: f64 },
}

impl SamplingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::Uniform => "uniform",
            SamplingStrategy::SpeedAdaptive { .. } => "speed_adaptive",
        }
    }
}

pub(crate) fn adaptive_weights(history: &[u64], alpha: f64) -> Vec<f64> {
    let max_p = history.iter().copied().max().unwrap_or(0);
    history
        .iter()
        .map(|&p| {
            let deficit = (max_p - p) as f64 / (max_p as f64 + 1.0);
            (1.0 + deficit).powf(alpha)
        })
        .collect()
}

/// Choose the round's cohort: `K = max(1, round(C * num_clients))` distinct
/// clients, ids returned in ascending order. `history` holds cumulative
/// samples processed per client (used only by the speed-adaptive strategy).
pub fn sample_clients(
    strategy: SamplingStrategy,
    num_clients: usize,
    sampling_ratio: f64,
    history: &[u64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if num_clients == 0 {
        return Err(Error::EmptyInput("sample_clients num_clients"));
    }
    if !(sampling_ratio.is_finite() && sampling_ratio > 0.0 && sampling_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling_ratio must lie in (0, 1], got {sampling_ratio}"
        )));
    }
    if history.len() != num_clients {
        return Err(Error::DimMismatch {
            context: "sample_clients history",
            left: history.len(),
            right: num_clients,
        });
    }
    let k = ((sampling_ratio * num_clients as f64).round() as usize).clamp(1, num_clients);
    let mut chosen = match strategy {
        SamplingStrategy::Uniform => {
            rand::seq::index::sample(rng, num_clients, k).into_vec()
        }
        SamplingStrategy::SpeedAdaptive { alpha } => {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "speed_adaptive alpha must be >= 0, got {alpha}"
                )));
            }
            let mut weights = adaptive_weights(history, alpha);
            let mut picked = Vec::with_capacity(k);
            // sequential weighted draws without replacement
            for _ in 0..k {
                let total: f64 = weights.iter().sum();
                let mut target = rng.random::<f64>() * total;
                let mut pick = None;
                for (i, &w) in weights.iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    target -= w;
                    if target < 0.0 {
                        pick = Some(i);
                        break;
                    }
                }
                // fall back to the last eligible index if rounding walked
                // past the end
                let pick = pick.unwrap_or_else(|| {
                    weights
                        .iter()
                        .rposition(|&w| w > 0.0)
                        .expect("at least one positive weight remains")
                });
                picked.push(pick);
                weights[pick] = 0.0;
            }
            picked
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{dense_wire_bytes, encode, CompressionScheme};
    use crate::model::LayoutEntry;
    use crate::param::ParamVector;

    fn profile(down: f64, up: f64) -> NetworkProfile {
        NetworkProfile {
            client_id: 0,
            down_mbps: down,
            up_mbps: up,
            compute_rate: 1e4,
            availability: 1.0,
        }
    }

    #[test]
    fn degenerate_mixes_assign_one_class() {
        let all_4g = assign_profiles(50, &NetMix::default(), 1).unwrap();
        assert!(all_4g.iter().all(|p| p.down_mbps == 40.0 && p.up_mbps == 10.0));
        let mix = NetMix {
            fraction_3g: 1.0,
            ..NetMix::default()
        };
        let all_3g = assign_profiles(50, &mix, 1).unwrap();
        assert!(all_3g.iter().all(|p| p.down_mbps == 7.0 && p.up_mbps == 1.75));
        assert_eq!(all_3g.len(), 50);
        assert_eq!(all_3g[49].client_id, 49);
    }

    #[test]
    fn assignment_is_seed_deterministic() {
        let mix = NetMix {
            fraction_3g: 0.4,
            ..NetMix::default()
        };
        let a = assign_profiles(200, &mix, 9).unwrap();
        let b = assign_profiles(200, &mix, 9).unwrap();
        let c = assign_profiles(200, &mix, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let n_3g = a.iter().filter(|p| p.down_mbps == 7.0).count();
        assert!((40..=120).contains(&n_3g), "3g count {n_3g}");
    }

    #[test]
    fn worked_download_times_are_exact() {
        let slow = round_time(&[RoundPart {
            profile: profile(7.0, 1.75),
            model_bytes_down: 875_000,
            update_bytes_up: 0,
            samples_processed: 0,
        }])
        .unwrap();
        assert_eq!(slow.per_client[0].download_s, 1.0);
        assert_eq!(slow.round_wall_s, 1.0);
        let fast = round_time(&[RoundPart {
            profile: profile(40.0, 10.0),
            model_bytes_down: 875_000,
            update_bytes_up: 0,
            samples_processed: 0,
        }])
        .unwrap();
        assert_eq!(fast.per_client[0].download_s, 0.175);
    }

    #[test]
    fn wall_time_is_the_max_total() {
        let parts = [
            RoundPart {
                profile: profile(7.0, 1.75),
                model_bytes_down: 875_000,
                update_bytes_up: 0,
                samples_processed: 0,
            },
            RoundPart {
                profile: profile(40.0, 10.0),
                model_bytes_down: 875_000,
                update_bytes_up: 100_000,
                samples_processed: 2000,
            },
        ];
        let timing = round_time(&parts).unwrap();
        assert_eq!(timing.round_wall_s, 1.0);
        assert_eq!(timing.bytes_down, 1_750_000);
        assert_eq!(timing.bytes_up, 100_000);
        let t1 = timing.per_client[1];
        assert!((t1.total_s - (0.175 + 0.2 + 0.08)).abs() < 1e-12);
    }

    #[test]
    fn wall_time_is_monotone_in_payload_and_bandwidth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let parts: Vec<RoundPart> = (0..4)
                .map(|i| RoundPart {
                    profile: NetworkProfile {
                        client_id: i,
                        down_mbps: rng.random_range(1.0..50.0),
                        up_mbps: rng.random_range(1.0..10.0),
                        compute_rate: 1e4,
                        availability: 1.0,
                    },
                    model_bytes_down: rng.random_range(0..1_000_000),
                    update_bytes_up: rng.random_range(0..1_000_000),
                    samples_processed: rng.random_range(0..5000),
                })
                .collect();
            let base = round_time(&parts).unwrap();
            // brute-force oracle for the barrier
            let oracle = base
                .per_client
                .iter()
                .map(|t| t.total_s)
                .fold(0.0f64, f64::max);
            assert_eq!(base.round_wall_s, oracle);
            let mut heavier = parts.clone();
            heavier[0].update_bytes_up += 500_000;
            assert!(round_time(&heavier).unwrap().round_wall_s >= base.round_wall_s);
            let mut slower = parts;
            slower[1].profile.down_mbps /= 4.0;
            assert!(round_time(&slower).unwrap().round_wall_s >= base.round_wall_s);
        }
    }

    #[test]
    fn empty_round_is_rejected() {
        assert!(round_time(&[]).is_err());
        assert!(assign_profiles(0, &NetMix::default(), 1).is_err());
    }

    #[test]
    fn full_participation_at_ratio_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for strategy in [
            SamplingStrategy::Uniform,
            SamplingStrategy::SpeedAdaptive { alpha: 2.0 },
        ] {
            let ids = sample_clients(strategy, 6, 1.0, &[5, 4, 3, 2, 1, 0], &mut rng).unwrap();
            assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn half_of_four_clients_is_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let ids =
                sample_clients(SamplingStrategy::Uniform, 4, 0.5, &[0; 4], &mut rng).unwrap();
            assert_eq!(ids.len(), 2);
            assert!(ids.windows(2).all(|w| w[0] < w[1]));
            assert!(ids.iter().all(|&i| i < 4));
        }
    }

    #[test]
    fn cohort_size_never_rounds_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ids = sample_clients(SamplingStrategy::Uniform, 10, 0.01, &[0; 10], &mut rng).unwrap();
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn equal_history_gives_equal_weights() {
        let w = adaptive_weights(&[7, 7, 7, 7], 2.0);
        assert!(w.iter().all(|&x| x == w[0]));
        // a lagging client is strictly up-weighted
        let w = adaptive_weights(&[100, 0, 100], 2.0);
        assert!(w[1] > w[0]);
        assert_eq!(w[0], w[2]);
        // deficit ratio: (1 + 100/101)^2
        let expected = (1.0 + 100.0 / 101.0f64).powf(2.0);
        assert!((w[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(sample_clients(SamplingStrategy::Uniform, 4, 0.0, &[0; 4], &mut rng).is_err());
        assert!(sample_clients(SamplingStrategy::Uniform, 4, 1.5, &[0; 4], &mut rng).is_err());
        assert!(sample_clients(SamplingStrategy::Uniform, 4, 0.5, &[0; 3], &mut rng).is_err());
        assert!(sample_clients(
            SamplingStrategy::SpeedAdaptive { alpha: -1.0 },
            4,
            0.5,
            &[0; 4],
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn one_bit_quantization_shrinks_upload_time() {
        let dim = 64;
        let delta = ParamVector::new((0..dim).map(|i| i as f64 * 0.1 - 3.0).collect()).unwrap();
        let layout = [LayoutEntry {
            name: "w",
            offset: 0,
            rows: dim,
            cols: 1,
        }];
        let quant = encode(
            &delta,
            &layout,
            CompressionScheme::Quantize { bits: 1 },
            0,
            0,
            1,
            1,
        )
        .unwrap();
        let part = |bytes: usize| RoundPart {
            profile: profile(40.0, 10.0),
            model_bytes_down: 0,
            update_bytes_up: bytes,
            samples_processed: 0,
        };
        let t_id = round_time(&[part(dense_wire_bytes(dim))]).unwrap().per_client[0].upload_s;
        let t_q = round_time(&[part(quant.wire_bytes())]).unwrap().per_client[0].upload_s;
        assert!(t_q < t_id);
    }
}
