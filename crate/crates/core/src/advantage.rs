//! Group-relative advantages with hierarchical temperature scaling.
//!
//! For a batch of prompt groups the pipeline is:
//!
//! 1. drop groups whose rewards are near-uniform (range below a threshold);
//! 2. group-normalise rewards, `(r_i - mean) / (std + eps)`;
//! 3. compute a domain temperature `T(g) = max(N(g) * mean(g), floor)` from
//!    the number of retained groups and their mean reward;
//! 4. cluster each domain's sorted reward vectors with k-means and compute
//!    the same temperature per cluster, `T(c, g)`;
//! 5. divide each advantage by `(T(g) * T(c, g))^lambda(t)` where
//!    `lambda(t) = (t / total)^p` ramps the scaling in over training;
//! 6. dampen responses whose scaled advantage times policy KL is large,
//!    `m = t_p / (t_p + max(s * kl, 0))` with `t_p` a batch quantile;
//! 7. divide by the batch standard deviation.
//!
//! Every intermediate value is kept in the returned [`AdvantageRecord`]s.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansOptions};
use crate::reward::CognitiveDomain;

/// One prompt's sampled responses, their scalar rewards and the per-response
/// KL estimate against the reference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub domain: CognitiveDomain,
    rewards: Vec<f64>,
    kl: Vec<f64>,
}

impl RolloutGroup {
    /// `kl` defaults to zeros; negative KL estimates are clamped to 0.
    pub fn new(
        prompt_id: impl Into<String>,
        domain: CognitiveDomain,
        rewards: Vec<f64>,
        kl: Option<Vec<f64>>,
    ) -> Result<Self> {
        let prompt_id = prompt_id.into();
        if rewards.len() < 2 {
            return Err(Error::invalid(format!(
                "group `{prompt_id}` has {} responses; at least 2 are required",
                rewards.len()
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid(format!(
                "group `{prompt_id}` has a non-finite reward"
            )));
        }
        let kl = match kl {
            None => vec![0.0; rewards.len()],
            Some(kl) if kl.len() != rewards.len() => {
                return Err(Error::invalid(format!(
                    "group `{prompt_id}`: {} KL values for {} rewards",
                    kl.len(),
                    rewards.len()
                )))
            }
            Some(kl) => {
                if kl.iter().any(|k| !k.is_finite()) {
                    return Err(Error::invalid(format!(
                        "group `{prompt_id}` has a non-finite KL value"
                    )));
                }
                kl.into_iter().map(|k| k.max(0.0)).collect()
            }
        };
        Ok(Self {
            prompt_id,
            domain,
            rewards,
            kl,
        })
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn kl(&self) -> &[f64] {
        &self.kl
    }

    pub fn size(&self) -> usize {
        self.rewards.len()
    }

    pub fn mean_reward(&self) -> f64 {
        mean(&self.rewards)
    }

    pub fn reward_range(&self) -> f64 {
        let (lo, hi) = self
            .rewards
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(r), hi.max(r))
            });
        hi - lo
    }

    /// Reward vector sorted ascending, the clustering feature.
    pub fn sorted_rewards(&self) -> Vec<f64> {
        let mut v = self.rewards.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `(r_i - mean) / (population_std + eps)` within one group.
pub fn grpo_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::invalid(format!(
            "group advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    // Identical rewards carry no signal; the computed mean may be off by an ulp.
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let mu = mean(rewards);
    let sigma = population_std(rewards);
    let denom = sigma + eps;
    if denom == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mu) / denom).collect())
}

/// Near-uniform predicate: reward range strictly below `threshold`.
pub fn is_degenerate(group: &RolloutGroup, threshold: f64) -> bool {
    group.reward_range() < threshold
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipReport {
    pub threshold: f64,
    pub total_groups: usize,
    pub retained_groups: usize,
    pub skipped_prompt_ids: Vec<String>,
}

impl SkipReport {
    pub fn skipped(&self) -> usize {
        self.skipped_prompt_ids.len()
    }
}

pub fn skip_degenerate_groups(
    groups: &[RolloutGroup],
    threshold: f64,
) -> (Vec<&RolloutGroup>, SkipReport) {
    let mut kept = Vec::with_capacity(groups.len());
    let mut report = SkipReport {
        threshold,
        total_groups: groups.len(),
        ..Default::default()
    };
    for g in groups {
        if is_degenerate(g, threshold) {
            report.skipped_prompt_ids.push(g.prompt_id.clone());
        } else {
            kept.push(g);
        }
    }
    report.retained_groups = kept.len();
    (kept, report)
}

/// `max(n * mu, floor)`.
pub fn domain_temperature(n: usize, mu: f64, floor: f64) -> f64 {
    (n as f64 * mu).max(floor)
}

/// Temperature of a set of groups: group count times mean response reward.
pub fn cluster_temperature(members: &[&RolloutGroup], floor: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::invalid("cluster temperature of an empty cluster"));
    }
    let (sum, count) = members.iter().fold((0.0, 0usize), |(s, c), g| {
        (s + g.rewards.iter().sum::<f64>(), c + g.size())
    });
    Ok(domain_temperature(members.len(), sum / count as f64, floor))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub total_steps: u64,
    pub exponent: f64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            exponent: 1.0,
        }
    }
}

impl CurriculumSchedule {
    /// `(step / total_steps)^exponent`.
    pub fn lambda(&self, step: u64) -> Result<f64> {
        if self.total_steps == 0 {
            return Err(Error::invalid("curriculum total_steps must be positive"));
        }
        if !(self.exponent >= 0.0 && self.exponent.is_finite()) {
            return Err(Error::invalid(format!(
                "curriculum exponent must be finite and >= 0, got {}",
                self.exponent
            )));
        }
        if step > self.total_steps {
            return Err(Error::invalid(format!(
                "step {step} beyond curriculum length {}",
                self.total_steps
            )));
        }
        Ok((step as f64 / self.total_steps as f64).powf(self.exponent))
    }
}

pub fn curriculum_lambda(step: u64, schedule: &CurriculumSchedule) -> Result<f64> {
    schedule.lambda(step)
}

/// `a / (t_domain * t_cluster)^lambda`.
pub fn hierarchical_scale(a_grpo: f64, t_domain: f64, t_cluster: f64, lambda: f64) -> Result<f64> {
    if !(t_domain > 0.0 && t_cluster > 0.0) {
        return Err(Error::invalid(format!(
            "temperatures must be positive, got {t_domain} and {t_cluster}"
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(a_grpo / (t_domain * t_cluster).powf(lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DampeningConfig {
    pub enabled: bool,
    /// Quantile of `s * kl` used as the dampening scale.
    pub percentile: f64,
    /// Replaces a non-positive quantile.
    pub floor: f64,
}

impl Default for DampeningConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            percentile: 0.9,
            floor: 1e-8,
        }
    }
}

/// Nearest-rank quantile: the `ceil(p * n)`-th smallest value.
pub fn nearest_rank_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty list"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level {p} outside (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// `t_p / (t_p + max(product, 0))`.
pub fn dampening_factor(t_p: f64, product: f64) -> f64 {
    t_p / (t_p + product.max(0.0))
}

/// Returns the dampening factors and the dampened advantages.
pub fn kl_dampen(
    scaled: &[f64],
    kl: &[f64],
    cfg: &DampeningConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    dampen_with_threshold(scaled, kl, cfg).map(|(m, d, _)| (m, d))
}

fn dampen_with_threshold(
    scaled: &[f64],
    kl: &[f64],
    cfg: &DampeningConfig,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if scaled.len() != kl.len() {
        return Err(Error::DimensionMismatch {
            expected: scaled.len(),
            got: kl.len(),
        });
    }
    if scaled.is_empty() {
        return Ok((vec![], vec![], cfg.floor));
    }
    if cfg.floor.is_nan() || cfg.floor <= 0.0 {
        return Err(Error::invalid("dampening floor must be positive"));
    }
    let products: Vec<f64> = scaled.iter().zip(kl).map(|(s, k)| s * k).collect();
    let mut t_p = nearest_rank_quantile(&products, cfg.percentile)?;
    if t_p <= 0.0 {
        t_p = cfg.floor;
    }
    let m: Vec<f64> = products.iter().map(|&p| dampening_factor(t_p, p)).collect();
    let damped = scaled.iter().zip(&m).map(|(s, m)| s * m).collect();
    Ok((m, damped, t_p))
}

/// Divides by the population standard deviation. A zero-variance (or
/// single-element) batch comes back unchanged with the flag set.
pub fn batch_renormalize(advs: &[f64]) -> (Vec<f64>, bool) {
    if advs.len() < 2 {
        return (advs.to_vec(), true);
    }
    let sd = population_std(advs);
    if sd.is_nan() || sd <= 0.0 {
        return (advs.to_vec(), true);
    }
    (advs.iter().map(|a| a / sd).collect(), false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenormScope {
    #[default]
    Global,
    PerDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArpoConfig {
    pub grpo_eps: f64,
    pub skip_threshold: f64,
    pub temperature_floor: f64,
    /// Divide by the domain temperature.
    pub domain_scaling: bool,
    /// Divide by the in-domain cluster temperature.
    pub cluster_scaling: bool,
    /// Upper bound on clusters per domain.
    pub max_clusters: usize,
    pub kmeans: KMeansOptions,
    pub curriculum: CurriculumSchedule,
    pub dampening: DampeningConfig,
    pub renorm: RenormScope,
}

impl Default for ArpoConfig {
    fn default() -> Self {
        Self {
            grpo_eps: 1e-4,
            skip_threshold: 0.05,
            temperature_floor: 1e-6,
            domain_scaling: true,
            cluster_scaling: true,
            max_clusters: 3,
            kmeans: KMeansOptions::default(),
            curriculum: CurriculumSchedule::default(),
            dampening: DampeningConfig::default(),
            renorm: RenormScope::Global,
        }
    }
}

impl ArpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        if !(self.grpo_eps >= 0.0 && self.grpo_eps.is_finite()) {
            return Err(Error::invalid("grpo_eps must be finite and >= 0"));
        }
        if !(self.skip_threshold >= 0.0 && self.skip_threshold.is_finite()) {
            return Err(Error::invalid("skip_threshold must be finite and >= 0"));
        }
        positive("temperature_floor", self.temperature_floor)?;
        positive("dampening.floor", self.dampening.floor)?;
        if !(self.dampening.percentile > 0.0 && self.dampening.percentile < 1.0) {
            return Err(Error::invalid("dampening.percentile must lie in (0, 1)"));
        }
        if self.max_clusters == 0 {
            return Err(Error::invalid("max_clusters must be >= 1"));
        }
        self.curriculum.lambda(0).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain: CognitiveDomain,
    pub groups: usize,
    pub mean_reward: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub domain: CognitiveDomain,
    pub cluster: usize,
    pub prompt_ids: Vec<String>,
    pub temperature: f64,
}

/// One response's advantage at every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub prompt_id: String,
    pub response: usize,
    pub domain: CognitiveDomain,
    pub cluster: usize,
    pub reward: f64,
    pub kl: f64,
    pub domain_temperature: f64,
    pub cluster_temperature: f64,
    pub a_grpo: f64,
    pub s_scaled: f64,
    pub m: f64,
    pub a_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArpoOutput {
    pub records: Vec<AdvantageRecord>,
    pub skip_report: SkipReport,
    pub domain_stats: Vec<DomainStats>,
    pub cluster_stats: Vec<ClusterStats>,
    pub lambda: f64,
    /// Dampening scale `t_p` actually used (1 when dampening is off).
    pub dampening_scale: f64,
    /// Set when a renormalisation batch had zero spread.
    pub renorm_degenerate: bool,
}

struct GroupPlan<'a> {
    group: &'a RolloutGroup,
    t_domain: f64,
    t_cluster: f64,
    cluster: usize,
}

fn plan_temperatures<'a>(
    retained: &[&'a RolloutGroup],
    cfg: &ArpoConfig,
) -> Result<(Vec<GroupPlan<'a>>, Vec<DomainStats>, Vec<ClusterStats>)> {
    let mut by_domain: BTreeMap<CognitiveDomain, Vec<usize>> = BTreeMap::new();
    for (i, g) in retained.iter().enumerate() {
        by_domain.entry(g.domain).or_default().push(i);
    }
    let mut plans: Vec<Option<GroupPlan>> = retained.iter().map(|_| None).collect();
    let mut domain_stats = Vec::new();
    let mut cluster_stats = Vec::new();

    for (domain, members) in &by_domain {
        let groups: Vec<&RolloutGroup> = members.iter().map(|&i| retained[i]).collect();
        let t_domain_raw = cluster_temperature(&groups, cfg.temperature_floor)?;
        let (sum, count) = groups.iter().fold((0.0, 0usize), |(s, c), g| {
            (s + g.rewards.iter().sum::<f64>(), c + g.size())
        });
        domain_stats.push(DomainStats {
            domain: *domain,
            groups: groups.len(),
            mean_reward: sum / count as f64,
            temperature: t_domain_raw,
        });
        let t_domain = if cfg.domain_scaling {
            t_domain_raw
        } else {
            1.0
        };

        // Reward vectors are only comparable at equal group size.
        let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in members {
            by_size.entry(retained[i].size()).or_default().push(i);
        }
        let mut next_cluster = 0;
        for (size, idx) in by_size {
            let points: Vec<Vec<f64>> = idx.iter().map(|&i| retained[i].sorted_rewards()).collect();
            let k = cfg.max_clusters.min(points.len());
            let opts = KMeansOptions {
                seed: cfg
                    .kmeans
                    .seed
                    .wrapping_add((domain.index() as u64) << 32)
                    .wrapping_add(size as u64),
                ..cfg.kmeans
            };
            let result = kmeans(&points, k, &opts)?;
            for c in 0..result.k() {
                let cluster_members: Vec<&RolloutGroup> = idx
                    .iter()
                    .zip(&result.assignments)
                    .filter(|(_, &a)| a == c)
                    .map(|(&i, _)| retained[i])
                    .collect();
                if cluster_members.is_empty() {
                    continue;
                }
                let t_raw = cluster_temperature(&cluster_members, cfg.temperature_floor)?;
                let id = next_cluster;
                next_cluster += 1;
                cluster_stats.push(ClusterStats {
                    domain: *domain,
                    cluster: id,
                    prompt_ids: cluster_members
                        .iter()
                        .map(|g| g.prompt_id.clone())
                        .collect(),
                    temperature: t_raw,
                });
                let t_cluster = if cfg.cluster_scaling { t_raw } else { 1.0 };
                for (&i, _) in idx.iter().zip(&result.assignments).filter(|(_, &a)| a == c) {
                    plans[i] = Some(GroupPlan {
                        group: retained[i],
                        t_domain,
                        t_cluster,
                        cluster: id,
                    });
                }
            }
        }
    }
    let plans = plans
        .into_iter()
        .map(|p| p.expect("every retained group is assigned a cluster"))
        .collect();
    Ok((plans, domain_stats, cluster_stats))
}

/// Runs the full advantage pipeline over one batch of prompt groups at
/// training step `step`.
pub fn compute_arpo(groups: &[RolloutGroup], step: u64, cfg: &ArpoConfig) -> Result<ArpoOutput> {
    cfg.validate()?;
    let lambda = cfg.curriculum.lambda(step)?;
    let (retained, skip_report) = skip_degenerate_groups(groups, cfg.skip_threshold);
    if retained.is_empty() {
        return Ok(ArpoOutput {
            records: vec![],
            skip_report,
            domain_stats: vec![],
            cluster_stats: vec![],
            lambda,
            dampening_scale: 1.0,
            renorm_degenerate: false,
        });
    }

    let (plans, domain_stats, cluster_stats) = plan_temperatures(&retained, cfg)?;

    let mut records = Vec::new();
    for plan in &plans {
        let g = plan.group;
        let a = grpo_advantages(&g.rewards, cfg.grpo_eps)?;
        for (i, &a_grpo) in a.iter().enumerate() {
            records.push(AdvantageRecord {
                prompt_id: g.prompt_id.clone(),
                response: i,
                domain: g.domain,
                cluster: plan.cluster,
                reward: g.rewards[i],
                kl: g.kl[i],
                domain_temperature: plan.t_domain,
                cluster_temperature: plan.t_cluster,
                a_grpo,
                s_scaled: hierarchical_scale(a_grpo, plan.t_domain, plan.t_cluster, lambda)?,
                m: 1.0,
                a_final: 0.0,
            });
        }
    }

    let mut dampening_scale = 1.0;
    let damped: Vec<f64> = if cfg.dampening.enabled {
        let s: Vec<f64> = records.iter().map(|r| r.s_scaled).collect();
        let k: Vec<f64> = records.iter().map(|r| r.kl).collect();
        let (m, d, t_p) = dampen_with_threshold(&s, &k, &cfg.dampening)?;
        for (r, m) in records.iter_mut().zip(m) {
            r.m = m;
        }
        dampening_scale = t_p;
        d
    } else {
        records.iter().map(|r| r.s_scaled).collect()
    };

    let mut renorm_degenerate = false;
    match cfg.renorm {
        RenormScope::Global => {
            let (out, degenerate) = batch_renormalize(&damped);
            renorm_degenerate = degenerate;
            for (r, a) in records.iter_mut().zip(out) {
                r.a_final = a;
            }
        }
        RenormScope::PerDomain => {
            for domain in CognitiveDomain::ALL {
                let idx: Vec<usize> = (0..records.len())
                    .filter(|&i| records[i].domain == domain)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let slice: Vec<f64> = idx.iter().map(|&i| damped[i]).collect();
                let (out, degenerate) = batch_renormalize(&slice);
                renorm_degenerate |= degenerate;
                for (&i, a) in idx.iter().zip(out) {
                    records[i].a_final = a;
                }
            }
        }
    }

    Ok(ArpoOutput {
        records,
        skip_report,
        domain_stats,
        cluster_stats,
        lambda,
        dampening_scale,
        renorm_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use CognitiveDomain::*;

    fn group(id: &str, domain: CognitiveDomain, rewards: &[f64]) -> RolloutGroup {
        RolloutGroup::new(id, domain, rewards.to_vec(), None).unwrap()
    }

    #[test]
    fn grpo_examples() {
        let a = grpo_advantages(&[1.0, 0.0, 0.5, 0.5], 0.0).unwrap();
        let s = 0.5 / 0.125f64.sqrt();
        for (x, y) in a.iter().zip([s, -s, 0.0, 0.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a[0] - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(grpo_advantages(&[0.3; 5], 1e-4).unwrap(), vec![0.0; 5]);
        assert_eq!(grpo_advantages(&[0.3; 5], 0.0).unwrap(), vec![0.0; 5]);
        assert_eq!(grpo_advantages(&[1.0, 0.0], 0.0).unwrap(), vec![1.0, -1.0]);
        assert!(grpo_advantages(&[1.0], 0.0).is_err());
    }

    #[test]
    fn group_validation() {
        assert!(RolloutGroup::new("p", SceneReasoning, vec![1.0], None).is_err());
        assert!(RolloutGroup::new("p", SceneReasoning, vec![1.0, f64::NAN], None).is_err());
        assert!(RolloutGroup::new("p", SceneReasoning, vec![1.0, 0.0], Some(vec![0.1])).is_err());
        let g =
            RolloutGroup::new("p", SceneReasoning, vec![1.0, 0.0], Some(vec![-0.2, 0.3])).unwrap();
        assert_eq!(g.kl(), &[0.0, 0.3]);
    }

    #[test]
    fn skip_rule() {
        let groups = vec![
            group("flat", ObjectUnderstanding, &[0.5; 4]),
            group("wide", ObjectUnderstanding, &[0.0, 1.0, 0.3, 0.2]),
            group("narrow", ObjectUnderstanding, &[0.50, 0.54]),
            group("edge_keep", ObjectUnderstanding, &[0.0, 0.05]),
            group("edge_skip", ObjectUnderstanding, &[0.0, 0.04]),
        ];
        let (kept, report) = skip_degenerate_groups(&groups, 0.05);
        let kept: Vec<&str> = kept.iter().map(|g| g.prompt_id.as_str()).collect();
        assert_eq!(kept, vec!["wide", "edge_keep"]);
        assert_eq!(
            report.skipped_prompt_ids,
            vec!["flat", "narrow", "edge_skip"]
        );
        assert_eq!(report.total_groups, 5);
        assert_eq!(report.retained_groups, 2);
    }

    #[test]
    fn temperatures() {
        assert!((domain_temperature(100, 0.8, 1e-6) - 80.0).abs() < 1e-12);
        assert_eq!(domain_temperature(5, 0.0, 1e-6), 1e-6);
        assert!((domain_temperature(10, 0.2, 1e-6) - 2.0).abs() < 1e-12);

        let ones = group("a", SceneReasoning, &[1.0, 1.0]);
        assert_eq!(cluster_temperature(&[&ones], 1e-6).unwrap(), 1.0);
        let zeros = group("b", SceneReasoning, &[0.0, 0.0]);
        assert_eq!(cluster_temperature(&[&zeros], 1e-6).unwrap(), 1e-6);
        let half = group("c", SceneReasoning, &[1.0, 0.0]);
        assert_eq!(cluster_temperature(&[&half, &half], 1e-6).unwrap(), 1.0);
        assert!(cluster_temperature(&[], 1e-6).is_err());
    }

    #[test]
    fn curriculum() {
        let s = CurriculumSchedule {
            total_steps: 100,
            exponent: 2.0,
        };
        assert_eq!(s.lambda(0).unwrap(), 0.0);
        assert_eq!(s.lambda(100).unwrap(), 1.0);
        assert_eq!(s.lambda(50).unwrap(), 0.25);
        assert!(s.lambda(101).is_err());
        assert!(CurriculumSchedule {
            total_steps: 0,
            exponent: 1.0
        }
        .lambda(0)
        .is_err());
    }

    #[test]
    fn scaling() {
        assert_eq!(hierarchical_scale(0.7, 5.0, 3.0, 0.0).unwrap(), 0.7);
        let v = hierarchical_scale(std::f64::consts::SQRT_2, 2.0, 1.5, 1.0).unwrap();
        assert!((v - std::f64::consts::SQRT_2 / 3.0).abs() < 1e-12);
        assert_eq!(hierarchical_scale(-0.3, 0.5, 2.0, 0.37).unwrap(), -0.3);
        assert!(hierarchical_scale(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(hierarchical_scale(1.0, 1.0, -1.0, 1.0).is_err());
        assert!(hierarchical_scale(1.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn quantile_nearest_rank() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(nearest_rank_quantile(&v, 0.9).unwrap(), 9.0);
        assert_eq!(nearest_rank_quantile(&v, 0.05).unwrap(), 1.0);
        assert_eq!(nearest_rank_quantile(&[3.0], 0.9).unwrap(), 3.0);
        assert!(nearest_rank_quantile(&[], 0.9).is_err());
    }

    #[test]
    fn dampening_examples() {
        assert_eq!(dampening_factor(0.5, 0.5), 0.5);
        assert_eq!(dampening_factor(0.5, -2.0), 1.0);
        let cfg = DampeningConfig::default();
        let (m, d) = kl_dampen(&[1.0, -1.0, 2.0], &[0.0, 0.5, 0.0], &cfg).unwrap();
        // All products are <= 0, so t_p falls back to the floor and m = 1.
        assert_eq!(m, vec![1.0; 3]);
        assert_eq!(d, vec![1.0, -1.0, 2.0]);
        let (m, _) = kl_dampen(&[0.5; 6], &[2.0; 6], &cfg).unwrap();
        assert_eq!(m, vec![0.5; 6]);
        assert!(kl_dampen(&[1.0], &[1.0, 2.0], &cfg).is_err());
    }

    #[test]
    fn renormalize_examples() {
        assert_eq!(batch_renormalize(&[2.0, -2.0]), (vec![1.0, -1.0], false));
        let (z, flag) = batch_renormalize(&[0.0; 4]);
        assert_eq!((z, flag), (vec![0.0; 4], true));
        let unit = [1.0, -1.0, 1.0, -1.0];
        let (u, _) = batch_renormalize(&unit);
        for (a, b) in u.iter().zip(unit) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_uniform_batch_is_empty() {
        let groups = vec![
            group("a", SceneReasoning, &[1.0; 4]),
            group("b", ObjectUnderstanding, &[0.0; 4]),
        ];
        let out = compute_arpo(&groups, 10, &ArpoConfig::default()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.skip_report.skipped(), 2);
    }

    #[test]
    fn smaller_temperature_gets_larger_advantage() {
        // Domain 1: ten easy groups; domain 2: one hard group.
        let mut groups: Vec<RolloutGroup> = (0..10)
            .map(|i| {
                group(
                    &format!("ou{i}"),
                    ObjectUnderstanding,
                    &[1.0, 1.0, 1.0, 0.0],
                )
            })
            .collect();
        groups.push(group("sr", SceneReasoning, &[1.0, 0.0, 0.0, 0.0]));
        let cfg = ArpoConfig {
            cluster_scaling: false,
            curriculum: CurriculumSchedule {
                total_steps: 10,
                exponent: 1.0,
            },
            ..Default::default()
        };
        let out = compute_arpo(&groups, 10, &cfg).unwrap();
        // The lone failure in an easy group mirrors the lone success in the hard one.
        let ou = out
            .records
            .iter()
            .find(|r| r.domain == ObjectUnderstanding && r.reward == 0.0)
            .unwrap();
        let sr = out
            .records
            .iter()
            .find(|r| r.domain == SceneReasoning && r.reward == 1.0)
            .unwrap();
        assert_eq!(ou.a_grpo.abs(), sr.a_grpo.abs());
        assert!((ou.domain_temperature - 7.5).abs() < 1e-12);
        assert!((sr.domain_temperature - 0.25).abs() < 1e-12);
        assert!(sr.a_final.abs() > ou.a_final.abs());
    }

    #[test]
    fn per_domain_renormalization() {
        let groups = vec![
            group("a", ObjectUnderstanding, &[1.0, 0.0, 0.5]),
            group("b", SceneReasoning, &[0.2, 0.9, 0.4]),
        ];
        let cfg = ArpoConfig {
            renorm: RenormScope::PerDomain,
            ..Default::default()
        };
        let out = compute_arpo(&groups, 500, &cfg).unwrap();
        for d in [ObjectUnderstanding, SceneReasoning] {
            let v: Vec<f64> = out
                .records
                .iter()
                .filter(|r| r.domain == d)
                .map(|r| r.a_final)
                .collect();
            assert!((population_std(&v) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stats_are_reported() {
        let groups = vec![
            group("a", ObjectUnderstanding, &[1.0, 0.0, 0.5, 0.5]),
            group("b", ObjectUnderstanding, &[1.0, 1.0, 0.0, 1.0]),
            group("c", SceneReasoning, &[0.0, 0.0, 0.0, 1.0]),
        ];
        let out = compute_arpo(&groups, 0, &ArpoConfig::default()).unwrap();
        assert_eq!(out.records.len(), 12);
        assert_eq!(out.domain_stats.len(), 2);
        let ou = &out.domain_stats[0];
        assert_eq!(ou.domain, ObjectUnderstanding);
        assert_eq!(ou.groups, 2);
        assert!((ou.mean_reward - 0.625).abs() < 1e-12);
        assert!((ou.temperature - 1.25).abs() < 1e-12);
        let clustered: usize = out.cluster_stats.iter().map(|c| c.prompt_ids.len()).sum();
        assert_eq!(clustered, 3);
    }

    fn arb_batch() -> impl Strategy<Value = (Vec<RolloutGroup>, u64)> {
        let g = (
            prop::sample::select(CognitiveDomain::ALL.to_vec()),
            prop::collection::vec(0.0..1.0f64, 4),
            prop::collection::vec(0.0..0.5f64, 4),
        );
        (prop::collection::vec(g, 1..12), 0..=100u64).prop_map(|(gs, step)| {
            let groups = gs
                .into_iter()
                .enumerate()
                .map(|(i, (d, r, k))| RolloutGroup::new(format!("p{i}"), d, r, Some(k)).unwrap())
                .collect();
            (groups, step)
        })
    }

    proptest! {
        #[test]
        fn grpo_zero_sum(r in prop::collection::vec(-5.0..5.0f64, 2..16)) {
            let a = grpo_advantages(&r, 1e-4).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9 * r.len() as f64);
        }

        #[test]
        fn dampening_factor_bounds(t in 1e-6..10.0f64, p in -10.0..10.0f64, dp in 1e-6..1.0f64) {
            let m = dampening_factor(t, p);
            prop_assert!(m > 0.0 && m <= 1.0);
            prop_assert_eq!(m == 1.0, p <= 0.0);
            if p > 0.0 {
                prop_assert!(dampening_factor(t, p + dp) < m);
            }
        }

        #[test]
        fn pipeline_preserves_sign_and_unit_std((groups, step) in arb_batch()) {
            let cfg = ArpoConfig {
                curriculum: CurriculumSchedule { total_steps: 100, exponent: 1.0 },
                ..Default::default()
            };
            let out = compute_arpo(&groups, step, &cfg).unwrap();
            for r in &out.records {
                prop_assert!(r.m > 0.0 && r.m <= 1.0);
                prop_assert!(r.a_final.is_finite() && r.s_scaled.is_finite());
                prop_assert_eq!(r.a_final.signum() * (r.a_final != 0.0) as i32 as f64,
                                r.a_grpo.signum() * (r.a_grpo != 0.0) as i32 as f64);
            }
            if !out.records.is_empty() && !out.renorm_degenerate {
                let v: Vec<f64> = out.records.iter().map(|r| r.a_final).collect();
                prop_assert!((population_std(&v) - 1.0).abs() < 1e-9);
            }
            prop_assert_eq!(out.skip_report.retained_groups + out.skip_report.skipped(), groups.len());
        }

        #[test]
        fn rank_preserved_with_constant_kl((groups, step) in arb_batch(), kl in 0.0..1.0f64) {
            let groups: Vec<RolloutGroup> = groups
                .into_iter()
                .map(|g| RolloutGroup::new(g.prompt_id.clone(), g.domain, g.rewards().to_vec(), Some(vec![kl; g.size()])).unwrap())
                .collect();
            let cfg = ArpoConfig {
                curriculum: CurriculumSchedule { total_steps: 100, exponent: 1.0 },
                ..Default::default()
            };
            let out = compute_arpo(&groups, step, &cfg).unwrap();
            for chunk in out.records.chunk_by(|a, b| a.prompt_id == b.prompt_id) {
                for x in chunk {
                    for y in chunk {
                        if x.a_grpo < y.a_grpo {
                            prop_assert!(x.a_final <= y.a_final);
                        }
                    }
                }
            }
        }

        #[test]
        fn deterministic((groups, step) in arb_batch()) {
            let cfg = ArpoConfig {
                curriculum: CurriculumSchedule { total_steps: 100, exponent: 1.0 },
                ..Default::default()
            };
            prop_assert_eq!(compute_arpo(&groups, step, &cfg).unwrap(), compute_arpo(&groups, step, &cfg).unwrap());
        }
    }
}
