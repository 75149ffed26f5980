//! Client-level sampling: Neyman allocation of the per-round client budget across strata,
//! gradient-norm importance sampling inside each stratum, and stratified aggregation.

use alloc::vec;
use alloc::vec::Vec;
use core::borrow::Borrow;

use rand::Rng;

use crate::model::ParamVector;
use crate::{Error, Result};

/// How selected client updates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AggregationMode {
    /// `(1/N) Σ_h N_h · mean of the m_h selected updates in h`.
    #[default]
    Plain,
    /// Within-stratum mean of `w_k / (N_h p_k)`: unbiased for the all-client mean under
    /// any selection probabilities.
    HtCorrected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// `m_h` per stratum.
    pub per_stratum: Vec<usize>,
    /// `m = Σ m_h`.
    pub total: usize,
    /// Real-valued quotas before integerization.
    pub quotas: Vec<f64>,
}

/// Population standard deviation of each stratum's norms; zero for strata with at most
/// one client.
pub fn stratum_std(norms: &[Vec<f64>]) -> Vec<f64> {
    norms
        .iter()
        .map(|xs| {
            if xs.len() <= 1 {
                return 0.0;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            libm::sqrt(var)
        })
        .collect()
}

/// Integer allocation of `m` clients over strata proportional to `N_h S_h`.
///
/// Quotas are rounded by largest remainder (ties to the lower stratum), then repaired in
/// this order:
///
/// 1. cap `m_h` at `N_h`;
/// 2. raise every non-empty stratum to at least one client;
/// 3. while the total is short, add one to the stratum with the largest `quota - m_h` that
///    still has room; while it is over, remove one from the stratum with `m_h > 1` and the
///    smallest `quota - m_h` (ties to the lower stratum in both cases).
///
/// If every `S_h` is zero the quotas fall back to `m N_h / N`.
pub fn neyman_allocate(sizes: &[usize], stds: &[f64], m: usize) -> Result<Allocation> {
    if sizes.len() != stds.len() {
        return Err(Error::contract(
            "stratum sizes and deviations differ in length",
        ));
    }
    if m == 0 {
        return Err(Error::contract("client budget must be positive"));
    }
    if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::contract(
            "stratum deviations must be finite and non-negative",
        ));
    }
    let available: usize = sizes.iter().sum();
    let nonempty = sizes.iter().filter(|&&n| n > 0).count();
    if m > available {
        return Err(Error::Infeasible(alloc::format!(
            "{m} clients requested from {available}"
        )));
    }
    if nonempty > m {
        return Err(Error::Infeasible(alloc::format!(
            "{nonempty} non-empty strata cannot each receive a client from a budget of {m}"
        )));
    }

    let mut weights: Vec<f64> = sizes
        .iter()
        .zip(stds)
        .map(|(&n, &s)| n as f64 * s)
        .collect();
    let mut total_weight: f64 = weights.iter().sum();
    if total_weight <= 0.0 {
        weights = sizes.iter().map(|&n| n as f64).collect();
        total_weight = available as f64;
    }
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| m as f64 * w / total_weight)
        .collect();

    let mut alloc_: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = alloc_.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - libm::floor(quotas[a]);
        let rb = quotas[b] - libm::floor(quotas[b]);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &h in order.iter().take(m.saturating_sub(assigned)) {
        alloc_[h] += 1;
    }

    for (a, &n) in alloc_.iter_mut().zip(sizes) {
        *a = (*a).min(n);
        if n > 0 && *a == 0 {
            *a = 1;
        }
    }

    let mut sum: usize = alloc_.iter().sum();
    while sum < m {
        let h = (0..sizes.len())
            .filter(|&h| alloc_[h] < sizes[h])
            .max_by(|&a, &b| {
                let da = quotas[a] - alloc_[a] as f64;
                let db = quotas[b] - alloc_[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("room exists while the budget does not exceed the client count");
        alloc_[h] += 1;
        sum += 1;
    }
    while sum > m {
        let h = (0..sizes.len())
            .filter(|&h| alloc_[h] > 1)
            .min_by(|&a, &b| {
                let da = quotas[a] - alloc_[a] as f64;
                let db = quotas[b] - alloc_[b] as f64;
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("a stratum above one exists while the budget covers every stratum");
        alloc_[h] -= 1;
        sum -= 1;
    }

    Ok(Allocation {
        per_stratum: alloc_,
        total: m,
        quotas,
    })
}

/// Selection probabilities proportional to `norms`; uniform when all norms are zero.
pub fn importance_probs(norms: &[f64]) -> Result<Vec<f64>> {
    if norms.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::contract("norms must be finite and non-negative"));
    }
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        let p = 1.0 / norms.len() as f64;
        return Ok(vec![p; norms.len()]);
    }
    Ok(norms.iter().map(|v| v / total).collect())
}

/// One draw of a client.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub client_id: usize,
    pub stratum: usize,
    /// Probability the client had in its stratum's draw.
    pub prob: f64,
    /// Weight of this draw in the aggregate under the plan's mode.
    pub inclusion_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    /// One entry per draw; a client drawn twice appears twice.
    pub selected: Vec<Selection>,
    /// Client ids per stratum.
    pub strata: Vec<Vec<usize>>,
    /// Selection probabilities per stratum, aligned with `strata`.
    pub probs: Vec<Vec<f64>>,
    pub allocation: Allocation,
    pub num_clients: usize,
    pub mode: AggregationMode,
}

impl RoundPlan {
    /// Distinct selected client ids, ascending.
    pub fn participants(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.selected.iter().map(|s| s.client_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn weight(&self, sel: &Selection, mode: AggregationMode) -> f64 {
        let n = self.num_clients as f64;
        let m_h = self.allocation.per_stratum[sel.stratum] as f64;
        match mode {
            AggregationMode::Plain => self.strata[sel.stratum].len() as f64 / (n * m_h),
            AggregationMode::HtCorrected => 1.0 / (n * m_h * sel.prob),
        }
    }
}

fn draw_index<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("non-empty stratum");
    let target = rng.random::<f64>() * total;
    let i = cumulative.partition_point(|&c| c <= target);
    if i < cumulative.len() {
        return i;
    }
    // target rounded onto the total: last entry with positive mass
    cumulative
        .iter()
        .rposition(|&c| c < total)
        .map_or(0, |j| j + 1)
        .min(cumulative.len() - 1)
}

/// Draws `m_h` clients i.i.d. with replacement from each stratum's probabilities.
pub fn sample_clients<R: Rng + ?Sized>(
    strata: &[Vec<usize>],
    allocation: &Allocation,
    probs: &[Vec<f64>],
    mode: AggregationMode,
    rng: &mut R,
) -> Result<RoundPlan> {
    if strata.len() != allocation.per_stratum.len() || strata.len() != probs.len() {
        return Err(Error::contract(
            "strata, allocation and probabilities differ in length",
        ));
    }
    let num_clients = strata.iter().map(Vec::len).sum();
    let mut selected = Vec::with_capacity(allocation.total);
    for (h, (members, p)) in strata.iter().zip(probs).enumerate() {
        let m_h = allocation.per_stratum[h];
        if m_h == 0 {
            continue;
        }
        if members.is_empty() || members.len() != p.len() {
            return Err(Error::contract(alloc::format!(
                "stratum {h} has {} members and {} probabilities",
                members.len(),
                p.len()
            )));
        }
        let mut acc = 0.0;
        let cumulative: Vec<f64> = p
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        for _ in 0..m_h {
            let i = draw_index(&cumulative, rng);
            selected.push(Selection {
                client_id: members[i],
                stratum: h,
                prob: p[i],
                inclusion_weight: 0.0,
            });
        }
    }
    let mut plan = RoundPlan {
        selected,
        strata: strata.to_vec(),
        probs: probs.to_vec(),
        allocation: allocation.clone(),
        num_clients,
        mode,
    };
    for i in 0..plan.selected.len() {
        let w = plan.weight(&plan.selected[i], mode);
        plan.selected[i].inclusion_weight = w;
    }
    Ok(plan)
}

/// `m` distinct clients drawn uniformly from `0..num_clients`, as a one-stratum plan whose
/// plain aggregate is the mean of the selected updates.
pub fn uniform_plan<R: Rng + ?Sized>(
    num_clients: usize,
    m: usize,
    rng: &mut R,
) -> Result<RoundPlan> {
    if m == 0 || m > num_clients {
        return Err(Error::Infeasible(alloc::format!(
            "{m} clients requested from {num_clients}"
        )));
    }
    let mut ids = rand::seq::index::sample(rng, num_clients, m).into_vec();
    ids.sort_unstable();
    let p = 1.0 / num_clients as f64;
    let selected = ids
        .into_iter()
        .map(|client_id| Selection {
            client_id,
            stratum: 0,
            prob: p,
            inclusion_weight: 1.0 / m as f64,
        })
        .collect();
    Ok(RoundPlan {
        selected,
        strata: vec![(0..num_clients).collect()],
        probs: vec![vec![p; num_clients]],
        allocation: Allocation {
            per_stratum: vec![m],
            total: m,
            quotas: vec![m as f64],
        },
        num_clients,
        mode: AggregationMode::Plain,
    })
}

/// Weighted sum of selected updates, one update per entry of `plan.selected`.
///
/// Accumulation runs in ascending client id (then draw order), independent of how the
/// updates were produced.
pub fn aggregate<B: Borrow<ParamVector>>(
    updates: &[B],
    plan: &RoundPlan,
    mode: AggregationMode,
) -> Result<ParamVector> {
    if updates.len() != plan.selected.len() {
        return Err(Error::contract(alloc::format!(
            "{} updates for {} selections",
            updates.len(),
            plan.selected.len()
        )));
    }
    if updates.is_empty() {
        return Err(Error::Empty("selected updates"));
    }
    for (h, members) in plan.strata.iter().enumerate() {
        if !members.is_empty() && plan.allocation.per_stratum[h] == 0 {
            return Err(Error::contract(alloc::format!(
                "stratum {h} has {} clients but no allocation",
                members.len()
            )));
        }
    }
    let dim = updates[0].borrow().len();
    if updates.iter().any(|u| u.borrow().len() != dim) {
        return Err(Error::contract("updates differ in length"));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| (plan.selected[i].client_id, i));
    let mut out = ParamVector::zeros(dim);
    for i in order {
        out.axpy(plan.weight(&plan.selected[i], mode), updates[i].borrow());
    }
    Ok(out)
}

/// Mean of all clients' updates: the full-participation aggregate with `ω_k = 1/N`.
pub fn full_aggregate<B: Borrow<ParamVector>>(updates: &[B]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    let mut out = ParamVector::zeros(updates[0].borrow().len());
    let w = 1.0 / updates.len() as f64;
    for u in updates {
        out.axpy(w, u.borrow());
    }
    Ok(out)
}
