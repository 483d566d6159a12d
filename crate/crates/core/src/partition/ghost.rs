//! Ghost exchange between owners of shared nodes and the ranks that also
//! touch them.

use crate::error::{Error, Result};

use super::runtime::RankContext;

/// Which local slots travel to and from each peer. Lists for one peer pair
/// are ordered identically on both sides (by global id).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GhostPattern {
    /// Owned slots another rank holds as ghosts, per peer.
    pub sends: Vec<(usize, Vec<u32>)>,
    /// Ghost slots filled from each peer that owns them.
    pub recvs: Vec<(usize, Vec<u32>)>,
}

fn mix(src: usize, dst: usize, gid: u64) -> u64 {
    let mut h = (src as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (dst as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ gid.wrapping_mul(0x1656_67b1_9e37_79f9);
    h ^= h >> 31;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^ (h >> 29)
}

impl GhostPattern {
    /// Check that every rank's view of the pattern agrees: a wrapping hash of
    /// (owner, sharer, global id) summed over sends must equal the same over
    /// receives, and the owned counts must add up to `global_count`.
    pub fn verify(
        &self,
        ctx: &RankContext,
        gid_of: impl Fn(u32) -> u64,
        owned: u64,
        global_count: u64,
    ) -> Result<()> {
        let me = ctx.rank();
        let mut send_hash = 0u64;
        let mut recv_hash = 0u64;
        for (peer, slots) in &self.sends {
            for &s in slots {
                send_hash = send_hash.wrapping_add(mix(me, *peer, gid_of(s)));
            }
        }
        for (peer, slots) in &self.recvs {
            for &s in slots {
                recv_hash = recv_hash.wrapping_add(mix(*peer, me, gid_of(s)));
            }
        }
        let (s, r, n) = ctx.all_reduce((send_hash, recv_hash, owned), |a, b| {
            (a.0.wrapping_add(b.0), a.1.wrapping_add(b.1), a.2 + b.2)
        })?;
        if s != r || n != global_count {
            return Err(Error::Contract(format!(
                "inconsistent node ownership: send/receive checksums {s:#x}/{r:#x}, owned {n} of {global_count}"
            )));
        }
        Ok(())
    }

    /// READ: copy owner values into ghost slots.
    pub fn read<T: Copy + Send + 'static>(&self, ctx: &RankContext, values: &mut [T]) -> Result<()> {
        if ctx.size() == 1 {
            return Ok(());
        }
        let mut out: Vec<Vec<T>> = (0..ctx.size()).map(|_| Vec::new()).collect();
        for (peer, slots) in &self.sends {
            out[*peer] = slots.iter().map(|&s| values[s as usize]).collect();
        }
        let got = ctx.all_to_all(out)?;
        for (peer, slots) in &self.recvs {
            let data = &got[*peer];
            if data.len() != slots.len() {
                return Err(Error::Contract(format!(
                    "rank {peer} sent {} ghost values, expected {}",
                    data.len(),
                    slots.len()
                )));
            }
            for (&s, &v) in slots.iter().zip(data) {
                values[s as usize] = v;
            }
        }
        Ok(())
    }

    /// ACCUMULATE: add ghost contributions into the owners' slots. Ghost
    /// slots are left as they were.
    pub fn accumulate<T: Copy + Send + 'static>(
        &self,
        ctx: &RankContext,
        values: &mut [T],
        add: impl Fn(T, T) -> T,
    ) -> Result<()> {
        if ctx.size() == 1 {
            return Ok(());
        }
        let mut out: Vec<Vec<T>> = (0..ctx.size()).map(|_| Vec::new()).collect();
        for (peer, slots) in &self.recvs {
            out[*peer] = slots.iter().map(|&s| values[s as usize]).collect();
        }
        let got = ctx.all_to_all(out)?;
        for (peer, slots) in &self.sends {
            let data = &got[*peer];
            if data.len() != slots.len() {
                return Err(Error::Contract(format!(
                    "rank {peer} sent {} contributions, expected {}",
                    data.len(),
                    slots.len()
                )));
            }
            for (&s, &v) in slots.iter().zip(data) {
                values[s as usize] = add(values[s as usize], v);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Runtime;

    /// Two ranks share global node 1; rank 0 owns it.
    /// Rank 0 local slots: [g0, g1]; rank 1 local slots: [g1, g2].
    fn pattern(rank: usize) -> (GhostPattern, Vec<u64>, u64) {
        if rank == 0 {
            (
                GhostPattern {
                    sends: vec![(1, vec![1])],
                    recvs: vec![],
                },
                vec![0, 1],
                2,
            )
        } else {
            (
                GhostPattern {
                    sends: vec![],
                    recvs: vec![(0, vec![0])],
                },
                vec![1, 2],
                1,
            )
        }
    }

    #[test]
    fn single_rank_is_noop() {
        let ctx = RankContext::single();
        let p = GhostPattern::default();
        let mut v = vec![1.0, 2.0];
        p.read(&ctx, &mut v).unwrap();
        p.accumulate(&ctx, &mut v, |a, b| a + b).unwrap();
        assert_eq!(v, vec![1.0, 2.0]);
        p.verify(&ctx, |s| s as u64, 2, 2).unwrap();
    }

    #[test]
    fn accumulate_sums_both_contributions_and_read_copies_back() {
        let out = Runtime::run(2, |ctx| {
            let (p, gids, owned) = pattern(ctx.rank());
            p.verify(ctx, |s| gids[s as usize], owned, 3)?;
            let mut v = if ctx.rank() == 0 { vec![10.0, 1.5] } else { vec![2.5, 7.0] };
            p.accumulate(ctx, &mut v, |a, b| a + b)?;
            p.read(ctx, &mut v)?;
            Ok(v)
        })
        .unwrap();
        assert_eq!(out[0], vec![10.0, 4.0]);
        assert_eq!(out[1], vec![4.0, 7.0]);
    }

    #[test]
    fn round_trip_with_zero_contributions_is_identity() {
        let out = Runtime::run(2, |ctx| {
            let (p, _, _) = pattern(ctx.rank());
            let mut v = if ctx.rank() == 0 { vec![3.0, 4.0] } else { vec![0.0, 5.0] };
            p.read(ctx, &mut v)?;
            let mut contrib: Vec<f64> = v.iter().map(|_| 0.0).collect();
            p.accumulate(ctx, &mut contrib, |a, b| a + b)?;
            Ok((v, contrib))
        })
        .unwrap();
        assert_eq!(out[0].0, vec![3.0, 4.0]);
        assert_eq!(out[1].0, vec![4.0, 5.0]);
        assert!(out.iter().all(|(_, c)| c.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn mismatched_pattern_detected() {
        let r = Runtime::run(2, |ctx| {
            let (mut p, gids, owned) = pattern(ctx.rank());
            if ctx.rank() == 1 {
                // claims the wrong global id for its ghost
                p.recvs = vec![(0, vec![1])];
            }
            p.verify(ctx, |s| gids[s as usize], owned, 3)
        });
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
