//! Public transport manager: tracks groups of personal agents moving along a
//! transit line and decides whether they form a virtual bus.

use std::collections::{BTreeMap, BTreeSet};

use crate::behavior::LineVerdict;
use crate::ids::{AgentId, CellId, LineId, Slot};
use crate::topology::{Topology, TopologyError};

use super::messages::{LineMatchReply, LineMatchRequest, MatchBasis};

/// Continuations with full coverage needed after creation to confirm.
pub const CONFIRM_STREAK: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupStatus {
    Candidate,
    ConfirmedPublic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedGroup {
    pub members: BTreeSet<AgentId>,
    pub path: Vec<CellId>,
    pub line: LineId,
    pub status: GroupStatus,
    pub streak: u32,
    pub last_slot: Slot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtmState {
    theta: f64,
    group_min: usize,
    groups: BTreeMap<String, TrackedGroup>,
    member_of: BTreeMap<AgentId, String>,
    created: u64,
    rejected: u64,
}

fn last_step(path: &[CellId]) -> Option<(&CellId, &CellId)> {
    match path {
        [.., a, b] => Some((a, b)),
        _ => None,
    }
}

impl PtmState {
    pub fn new(theta: f64, group_min: usize) -> Self {
        Self {
            theta,
            group_min,
            groups: BTreeMap::new(),
            member_of: BTreeMap::new(),
            created: 0,
            rejected: 0,
        }
    }

    pub fn groups(&self) -> &BTreeMap<String, TrackedGroup> {
        &self.groups
    }

    pub fn group_of(&self, agent: &AgentId) -> Option<&str> {
        self.member_of.get(agent).map(String::as_str)
    }

    pub fn groups_created(&self) -> u64 {
        self.created
    }

    pub fn groups_rejected(&self) -> u64 {
        self.rejected
    }

    /// Live groups never share a member.
    pub fn is_disjoint(&self) -> bool {
        let total: usize = self.groups.values().map(|g| g.members.len()).sum();
        let distinct: BTreeSet<&AgentId> = self.groups.values().flat_map(|g| &g.members).collect();
        total == distinct.len()
            && distinct.len() == self.member_of.len()
            && self
                .member_of
                .iter()
                .all(|(a, g)| self.groups.get(g).is_some_and(|grp| grp.members.contains(a)))
    }

    /// Drops an entity from whatever group holds it.
    pub fn forget(&mut self, agent: &AgentId) {
        if let Some(gid) = self.member_of.remove(agent) {
            let empty = self.groups.get_mut(&gid).is_some_and(|g| {
                g.members.remove(agent);
                g.members.is_empty()
            });
            if empty {
                self.groups.remove(&gid);
            }
        }
    }

    fn drop_group(&mut self, gid: &str) {
        if let Some(g) = self.groups.remove(gid) {
            for m in &g.members {
                self.member_of.remove(m);
            }
        }
    }

    fn set_members(&mut self, gid: &str, members: BTreeSet<AgentId>) {
        let old = self.groups.get(gid).map(|g| g.members.clone()).unwrap_or_default();
        for m in old.difference(&members) {
            self.member_of.remove(m);
        }
        for m in &members {
            if let Some(prev) = self.member_of.get(m).cloned() {
                if prev != gid {
                    self.forget(m);
                }
            }
            self.member_of.insert(m.clone(), gid.to_owned());
        }
        if let Some(g) = self.groups.get_mut(gid) {
            g.members = members;
        }
    }

    fn individual(&self, req: &LineMatchRequest, topo: &Topology) -> Result<LineMatchReply, TopologyError> {
        let cov = topo.line_coverage(&req.path)?;
        let on_line = cov.line.as_ref().and_then(|l| topo.line(l)).is_some_and(|line| {
            last_step(&req.path).is_some_and(|(a, b)| line.has_step(a, b))
        });
        Ok(LineMatchReply {
            verdict: if on_line && cov.fraction >= self.theta {
                LineVerdict::StillCandidate
            } else {
                LineVerdict::NotPublic
            },
            coverage: cov.fraction,
            line: cov.line,
            group: None,
            basis: MatchBasis::Individual,
        })
    }

    /// Resolves one epoch's requests. Requests touching a tracked group are
    /// judged together so that a split is seen as a whole; the result only
    /// depends on the state, the request set and the topology.
    pub fn resolve(
        &mut self,
        requests: &[LineMatchRequest],
        topo: &Topology,
    ) -> Result<Vec<LineMatchReply>, TopologyError> {
        let mut replies: Vec<Option<LineMatchReply>> = vec![None; requests.len()];
        // Associate each request with the tracked group it overlaps most.
        let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut fresh = Vec::new();
        for (i, req) in requests.iter().enumerate() {
            if req.path.is_empty() {
                return Err(TopologyError::EmptyPath);
            }
            let mut overlap: BTreeMap<&String, usize> = BTreeMap::new();
            for m in &req.members {
                if let Some(g) = self.member_of.get(m) {
                    *overlap.entry(g).or_default() += 1;
                }
            }
            let best = overlap
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(g, _)| (*g).clone());
            match best {
                Some(g) => by_group.entry(g).or_default().push(i),
                None => fresh.push(i),
            }
        }

        for (gid, idxs) in by_group {
            let Some(group) = self.groups.get(&gid).cloned() else {
                // Emptied earlier in this batch by members moving elsewhere.
                for i in idxs {
                    replies[i] = Some(self.individual(&requests[i], topo)?);
                }
                continue;
            };
            let line = topo.line(&group.line);
            // Branches by destination cell.
            let mut branches: BTreeMap<&CellId, Vec<usize>> = BTreeMap::new();
            for &i in &idxs {
                branches.entry(&requests[i].anchor).or_default().push(i);
            }
            let branch_info: Vec<(&CellId, Vec<usize>, BTreeSet<AgentId>, bool)> = branches
                .into_iter()
                .map(|(anchor, is)| {
                    let members: BTreeSet<AgentId> =
                        is.iter().flat_map(|&i| requests[i].members.iter().cloned()).collect();
                    let on_line = is.iter().all(|&i| {
                        last_step(&requests[i].path)
                            .is_some_and(|(a, b)| line.is_some_and(|l| l.has_step(a, b)))
                    });
                    (anchor, is, members, on_line)
                })
                .collect();
            // The continuing branch: on the line, large enough; largest wins.
            let continuing = branch_info
                .iter()
                .enumerate()
                .filter(|(_, (_, _, members, on_line))| *on_line && members.len() >= self.group_min)
                .max_by(|a, b| a.1 .2.len().cmp(&b.1 .2.len()).then_with(|| b.1 .0.cmp(a.1 .0)))
                .map(|(bi, _)| bi);
            let split = branch_info.len() > 1;

            for (bi, (_, is, members, _)) in branch_info.iter().enumerate() {
                if Some(bi) == continuing {
                    continue;
                }
                for m in members {
                    self.forget(m);
                }
                for &i in is {
                    let cov = topo.line_coverage(&requests[i].path)?;
                    let reply = if split || members.len() >= self.group_min {
                        // Diverging branch, or the whole group left the line.
                        LineMatchReply {
                            verdict: LineVerdict::NotPublic,
                            coverage: cov.fraction,
                            line: cov.line,
                            group: Some(gid.clone()),
                            basis: MatchBasis::Group,
                        }
                    } else {
                        // Too few members left to count as a group.
                        self.individual(&requests[i], topo)?
                    };
                    replies[i] = Some(reply);
                }
                if !split && self.groups.contains_key(&gid) && members.len() >= self.group_min {
                    self.rejected += 1;
                    self.drop_group(&gid);
                }
            }

            let Some(bi) = continuing else {
                if split && self.groups.contains_key(&gid) {
                    // Every branch diverged.
                    self.rejected += 1;
                    self.drop_group(&gid);
                }
                continue;
            };
            let (_, is, members, _) = &branch_info[bi];
            let path = is
                .iter()
                .map(|&i| &requests[i].path)
                .max_by_key(|p| p.len())
                .cloned()
                .unwrap_or_default();
            let cov = topo.line_coverage(&path)?;
            let keeps = cov.fraction >= self.theta;
            let slot = is.iter().map(|&i| requests[i].slot).max().unwrap_or(group.last_slot);
            let verdict = if keeps {
                self.set_members(&gid, members.clone());
                let g = self.groups.get_mut(&gid).expect("tracked group");
                g.streak += 1;
                if g.streak >= CONFIRM_STREAK {
                    g.status = GroupStatus::ConfirmedPublic;
                }
                g.path = path;
                g.last_slot = slot;
                match g.status {
                    GroupStatus::ConfirmedPublic => LineVerdict::PublicConfirmed,
                    GroupStatus::Candidate => LineVerdict::StillCandidate,
                }
            } else {
                self.rejected += 1;
                self.drop_group(&gid);
                LineVerdict::NotPublic
            };
            for &i in is {
                replies[i] = Some(LineMatchReply {
                    verdict,
                    coverage: cov.fraction,
                    line: Some(group.line.clone()),
                    group: Some(gid.clone()),
                    basis: MatchBasis::Group,
                });
            }
        }

        for i in fresh {
            let req = &requests[i];
            if req.members.len() < self.group_min {
                replies[i] = Some(self.individual(req, topo)?);
                continue;
            }
            let cov = topo.line_coverage(&req.path)?;
            let on_line = cov.line.as_ref().and_then(|l| topo.line(l)).is_some_and(|line| {
                last_step(&req.path).is_some_and(|(a, b)| line.has_step(a, b))
            });
            let group = match (&cov.line, on_line && cov.fraction >= self.theta) {
                (Some(line), true) => {
                    let gid = format!("g{}.{}", req.slot, self.created);
                    self.created += 1;
                    self.groups.insert(
                        gid.clone(),
                        TrackedGroup {
                            members: BTreeSet::new(),
                            path: req.path.clone(),
                            line: line.clone(),
                            status: GroupStatus::Candidate,
                            streak: 0,
                            last_slot: req.slot,
                        },
                    );
                    self.set_members(&gid, req.members.iter().cloned().collect());
                    Some(gid)
                }
                _ => None,
            };
            replies[i] = Some(LineMatchReply {
                verdict: if group.is_some() {
                    LineVerdict::StillCandidate
                } else {
                    LineVerdict::NotPublic
                },
                coverage: cov.fraction,
                line: cov.line,
                group,
                basis: MatchBasis::Group,
            });
        }
        Ok(replies.into_iter().map(|r| r.expect("every request answered")).collect())
    }
}

/// Single-request resolution.
pub fn ptm_resolve(
    ptm: &mut PtmState,
    request: &LineMatchRequest,
    topo: &Topology,
) -> Result<LineMatchReply, TopologyError> {
    Ok(ptm.resolve(std::slice::from_ref(request), topo)?.remove(0))
}
