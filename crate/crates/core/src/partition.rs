//! Client partitioning along an attribute axis.
//!
//! Every scheme is reduced to a client × value count matrix which is then
//! filled by dealing each value's episodes, in a seeded shuffle, to clients.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::{Episode, NA};
use crate::seed::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Axis {
    Platform,
    Device,
    Os,
    Source,
    AppCategory,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Platform => "PLATFORM",
            Axis::Device => "DEVICE",
            Axis::Os => "OS",
            Axis::Source => "SOURCE",
            Axis::AppCategory => "APP_CATEGORY",
        }
    }

    /// The episode's value on this axis, or `None` when the tag is `NA`.
    pub fn value_of(self, ep: &Episode) -> Option<String> {
        let v = match self {
            Axis::Platform => ep.tag.platform.name().to_string(),
            Axis::Source => ep.tag.source.name().to_string(),
            Axis::Os => ep.tag.os.name().to_string(),
            Axis::Device => ep.tag.device.clone(),
            Axis::AppCategory => ep.tag.app_category.clone(),
        };
        (!v.is_empty() && v != NA).then_some(v)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    Iid,
    NonUniform,
    Partial,
    Skew,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_excluded() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub axis: Axis,
    pub scheme: Scheme,
    pub num_clients: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_excluded")]
    pub excluded_per_client: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PartitionSpec {
    pub fn new(axis: Axis, scheme: Scheme, num_clients: usize, seed: u64) -> Self {
        PartitionSpec { axis, scheme, num_clients, alpha: 1.0, excluded_per_client: 1, seed }
    }
}

/// The seven whole-corpus variants mixing platforms and sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FullVariant {
    FullIid,
    FullNonUniform,
    PlatformPartial,
    PlatformNonUniform,
    PlatformSkew,
    SourceNonUniform,
    SourceSkew,
}

impl FullVariant {
    pub const ALL: [FullVariant; 7] = [
        FullVariant::FullIid,
        FullVariant::FullNonUniform,
        FullVariant::PlatformPartial,
        FullVariant::PlatformNonUniform,
        FullVariant::PlatformSkew,
        FullVariant::SourceNonUniform,
        FullVariant::SourceSkew,
    ];
}

pub type ClientId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub spec: PartitionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<FullVariant>,
    pub shards: BTreeMap<ClientId, Vec<String>>,
    /// Per-client counts on `spec.axis`, zeros included.
    pub stats: BTreeMap<ClientId, BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("episode {episode_id} has no {axis} value")]
    UndefinedAxisValue { episode_id: String, axis: Axis },
    #[error("{have} episodes cannot fill {clients} clients")]
    TooFewEpisodes { have: usize, clients: usize },
    #[error("infeasible partition: {0}")]
    InfeasibleSpec(String),
    #[error("manifest inconsistent with corpus: {0}")]
    Inconsistent(String),
}

/// Episodes grouped by their value on one axis.
struct Grouping<'a> {
    values: Vec<String>,
    /// Episode indices per value, sorted by id and then shuffled.
    members: Vec<Vec<usize>>,
    episodes: &'a [Episode],
}

impl<'a> Grouping<'a> {
    fn build(
        episodes: &'a [Episode],
        subset: &[usize],
        key: impl Fn(&Episode) -> Option<String>,
        axis: Axis,
        seed: u64,
        label: &str,
    ) -> Result<Self, PartitionError> {
        let mut by_value: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for &i in subset {
            let v = key(&episodes[i]).ok_or_else(|| PartitionError::UndefinedAxisValue {
                episode_id: episodes[i].episode_id.clone(),
                axis,
            })?;
            by_value.entry(v).or_default().push(i);
        }
        let mut values = Vec::with_capacity(by_value.len());
        let mut members = Vec::with_capacity(by_value.len());
        for (vi, (v, mut idx)) in by_value.into_iter().enumerate() {
            idx.sort_by(|&a, &b| episodes[a].episode_id.cmp(&episodes[b].episode_id));
            idx.shuffle(&mut derive_rng(seed, label, &[vi as u64]));
            values.push(v);
            members.push(idx);
        }
        Ok(Grouping { values, members, episodes })
    }

    fn col_totals(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    fn total(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }

    /// Deals `counts[c][v]` episodes of value `v` to client `c`.
    fn deal(&self, counts: &[Vec<usize>]) -> Vec<Vec<String>> {
        let mut shards = vec![Vec::new(); counts.len()];
        for (v, members) in self.members.iter().enumerate() {
            let mut it = members.iter();
            for (c, row) in counts.iter().enumerate() {
                shards[c].extend(it.by_ref().take(row[v]).map(|&i| self.episodes[i].episode_id.clone()));
            }
        }
        shards
    }
}

/// Sizes `total / n` with the first `total % n` entries one larger.
fn balanced(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

/// Iterative proportional fitting of `prior` to the given margins, followed
/// by an integer rounding that keeps column sums exact, meets row sums
/// whenever the mask allows it and never fills a cell whose prior is zero.
fn fit_counts(prior: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<usize>> {
    let (nc, nv) = (rows.len(), cols.len());
    let mut m: Vec<Vec<f64>> = prior.to_vec();
    for _ in 0..500 {
        for (c, row) in m.iter_mut().enumerate() {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|x| *x *= rows[c] as f64 / s);
            }
        }
        let mut worst = 0.0f64;
        for v in 0..nv {
            let s: f64 = (0..nc).map(|c| m[c][v]).sum();
            if s > 0.0 {
                let f = cols[v] as f64 / s;
                worst = worst.max((f - 1.0).abs());
                (0..nc).for_each(|c| m[c][v] *= f);
            }
        }
        if worst < 1e-12 {
            break;
        }
    }

    let mut counts: Vec<Vec<usize>> = m.iter().map(|r| r.iter().map(|x| x.floor() as usize).collect()).collect();
    let mut need_row: Vec<usize> =
        (0..nc).map(|c| rows[c].saturating_sub(counts[c].iter().sum::<usize>())).collect();
    let mut left_col: Vec<usize> =
        (0..nv).map(|v| cols[v].saturating_sub((0..nc).map(|c| counts[c][v]).sum::<usize>())).collect();
    let frac = |c: usize, v: usize, counts: &[Vec<usize>]| m[c][v] - counts[c][v] as f64;
    // Clients in order of preference for each value: largest remainder first.
    let order: Vec<Vec<usize>> = (0..nv)
        .map(|v| {
            let mut cs: Vec<usize> = (0..nc).filter(|&c| prior[c][v] > 0.0).collect();
            cs.sort_by(|&a, &b| frac(b, v, &counts).total_cmp(&frac(a, v, &counts)).then(a.cmp(&b)));
            cs
        })
        .collect();

    // Remaining units travel along augmenting paths, first through cells
    // that may round up once, then through any allowed cell.
    let mut added = vec![vec![0usize; nv]; nc];
    for cap in [1, usize::MAX] {
        while let Some(path) = augmenting_path(&order, &added, &left_col, &need_row, cap) {
            for &(c, v, up) in &path {
                if up {
                    added[c][v] += 1;
                } else {
                    added[c][v] -= 1;
                }
            }
            let (c_end, _, _) = path[path.len() - 1];
            let (_, v_start, _) = path[0];
            need_row[c_end] -= 1;
            left_col[v_start] -= 1;
        }
    }
    for c in 0..nc {
        for v in 0..nv {
            counts[c][v] += added[c][v];
        }
    }
    // Margins that admit no exact fit: keep column sums exact regardless.
    for v in 0..nv {
        for _ in 0..left_col[v] {
            let pick = order[v]
                .iter()
                .copied()
                .max_by(|&a, &b| frac(a, v, &counts).total_cmp(&frac(b, v, &counts)).then(b.cmp(&a)))
                .expect("every value has an allowed client");
            counts[pick][v] += 1;
        }
    }
    counts
}

/// Breadth-first search for a path from a value with units left to a
/// client still short of its row total. Steps are `(client, value, up)`;
/// `up == false` moves a previously added unit of `value` away from
/// `client`.
fn augmenting_path(
    order: &[Vec<usize>],
    added: &[Vec<usize>],
    left_col: &[usize],
    need_row: &[usize],
    cap: usize,
) -> Option<Vec<(usize, usize, bool)>> {
    let (nv, nc) = (left_col.len(), need_row.len());
    let mut via_value: Vec<Option<usize>> = vec![None; nc];
    let mut via_client: Vec<Option<usize>> = vec![None; nv];
    let mut seen_value = vec![false; nv];
    let mut queue: std::collections::VecDeque<usize> = (0..nv).filter(|&v| left_col[v] > 0).collect();
    queue.iter().for_each(|&v| seen_value[v] = true);
    while let Some(v) = queue.pop_front() {
        for &c in &order[v] {
            if via_value[c].is_some() || added[c][v] >= cap {
                continue;
            }
            via_value[c] = Some(v);
            if need_row[c] > 0 {
                let mut path = Vec::new();
                let mut client = c;
                loop {
                    let value = via_value[client].expect("reached clients have a parent");
                    path.push((client, value, true));
                    match via_client[value] {
                        Some(prev) => {
                            path.push((prev, value, false));
                            client = prev;
                        }
                        None => break,
                    }
                }
                path.reverse();
                return Some(path);
            }
            for v2 in 0..nv {
                if !seen_value[v2] && added[c][v2] > 0 {
                    seen_value[v2] = true;
                    via_client[v2] = Some(c);
                    queue.push_back(v2);
                }
            }
        }
    }
    None
}

fn dirichlet_rows(
    concentration: &[f64],
    mask: &[Vec<bool>],
    seed: u64,
    label: &str,
) -> Vec<Vec<f64>> {
    mask.iter()
        .enumerate()
        .map(|(c, allowed)| {
            let mut rng = derive_rng(seed, label, &[c as u64]);
            let mut row: Vec<f64> = concentration
                .iter()
                .zip(allowed)
                .map(|(&a, &ok)| {
                    if !ok {
                        return 0.0;
                    }
                    let g = Gamma::new(a.max(1e-3), 1.0).expect("positive shape");
                    g.sample(&mut rng).max(1e-300)
                })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        })
        .collect()
}

/// Client `c` is denied values `(c·k + j) mod V` for `j < k`.
fn partial_mask(nc: usize, nv: usize, k: usize) -> Vec<Vec<bool>> {
    (0..nc)
        .map(|c| {
            let mut row = vec![true; nv];
            for j in 0..k {
                row[(c * k + j) % nv] = false;
            }
            row
        })
        .collect()
}

fn scheme_counts(
    g: &Grouping<'_>,
    scheme: Scheme,
    nc: usize,
    alpha: f64,
    excluded: usize,
    seed: u64,
    mask_override: Option<Vec<Vec<bool>>>,
) -> Result<Vec<Vec<usize>>, PartitionError> {
    let nv = g.values.len();
    let cols = g.col_totals();
    let total = g.total();
    let global: Vec<f64> = cols.iter().map(|&n| n as f64 / total as f64).collect();
    let rows = balanced(total, nc);
    match scheme {
        Scheme::Iid => {
            let prior = vec![global.clone(); nc];
            Ok(fit_counts(&prior, &rows, &cols))
        }
        Scheme::Partial => {
            if excluded == 0 || excluded >= nv {
                return Err(PartitionError::InfeasibleSpec(format!(
                    "cannot deny {excluded} of {nv} values per client"
                )));
            }
            let mask = partial_mask(nc, nv, excluded);
            let held = |v: usize| mask.iter().any(|row| row[v]);
            let denied = |v: usize| mask.iter().any(|row| !row[v]);
            if !(0..nv).all(|v| held(v) && denied(v)) {
                return Err(PartitionError::InfeasibleSpec(format!(
                    "{nc} clients cannot both hold and deny each of {nv} values"
                )));
            }
            let prior = masked(&mask, &global);
            Ok(fit_counts(&prior, &rows, &cols))
        }
        Scheme::NonUniform => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(PartitionError::InfeasibleSpec(format!("alpha must be positive, got {alpha}")));
            }
            let scale = alpha * (nv * nv) as f64;
            let conc: Vec<f64> = global.iter().map(|g| scale * g).collect();
            let mask = mask_override.unwrap_or_else(|| vec![vec![true; nv]; nc]);
            let prior = dirichlet_rows(&conc, &mask, seed, "partition/dirichlet");
            Ok(fit_counts(&prior, &rows, &cols))
        }
        Scheme::Skew => {
            if nc < nv {
                return Err(PartitionError::InfeasibleSpec(format!(
                    "skew needs at least {nv} clients for {nv} values, got {nc}"
                )));
            }
            let mut counts = vec![vec![0; nv]; nc];
            for (v, &n) in cols.iter().enumerate() {
                let holders: Vec<usize> = (v..nc).step_by(nv).collect();
                for (&c, share) in holders.iter().zip(balanced(n, holders.len())) {
                    counts[c][v] = share;
                }
            }
            Ok(counts)
        }
    }
}

fn masked(mask: &[Vec<bool>], global: &[f64]) -> Vec<Vec<f64>> {
    mask.iter()
        .map(|row| row.iter().zip(global).map(|(&ok, &g)| if ok { g } else { 0.0 }).collect())
        .collect()
}

fn sorted_shards(shards: Vec<Vec<String>>, offset: usize, out: &mut BTreeMap<ClientId, Vec<String>>) {
    for (c, mut s) in shards.into_iter().enumerate() {
        s.sort();
        out.insert((offset + c) as ClientId, s);
    }
}

/// Splits the corpus into `spec.num_clients` disjoint, covering shards.
pub fn partition(episodes: &[Episode], spec: &PartitionSpec) -> Result<PartitionManifest, PartitionError> {
    let nc = spec.num_clients;
    if nc == 0 || episodes.len() < nc {
        return Err(PartitionError::TooFewEpisodes { have: episodes.len(), clients: nc });
    }
    let all: Vec<usize> = (0..episodes.len()).collect();
    let g = Grouping::build(episodes, &all, |e| spec.axis.value_of(e), spec.axis, spec.seed, "partition/shuffle")?;
    let counts =
        scheme_counts(&g, spec.scheme, nc, spec.alpha, spec.excluded_per_client, spec.seed, None)?;
    let mut shards = BTreeMap::new();
    sorted_shards(g.deal(&counts), 0, &mut shards);
    Ok(finish(episodes, spec.clone(), None, shards))
}

fn finish(
    episodes: &[Episode],
    spec: PartitionSpec,
    variant: Option<FullVariant>,
    shards: BTreeMap<ClientId, Vec<String>>,
) -> PartitionManifest {
    let stats = recount(episodes, &shards, spec.axis);
    PartitionManifest { spec, variant, shards, stats }
}

/// Counts per client and axis value, with a zero entry for every value
/// present anywhere in the corpus.
pub fn recount(
    episodes: &[Episode],
    shards: &BTreeMap<ClientId, Vec<String>>,
    axis: Axis,
) -> BTreeMap<ClientId, BTreeMap<String, usize>> {
    let lookup: HashMap<&str, &Episode> = episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
    let values: BTreeSet<String> = episodes.iter().filter_map(|e| axis.value_of(e)).collect();
    shards
        .iter()
        .map(|(&c, ids)| {
            let mut row: BTreeMap<String, usize> = values.iter().map(|v| (v.clone(), 0)).collect();
            for id in ids {
                if let Some(v) = lookup.get(id.as_str()).and_then(|e| axis.value_of(e)) {
                    *row.entry(v).or_default() += 1;
                }
            }
            (c, row)
        })
        .collect()
}

/// Builds one of the seven whole-corpus variants. Platform-level structure
/// is decided first, source-level structure second.
pub fn compose_full(
    episodes: &[Episode],
    variant: FullVariant,
    num_clients: usize,
    seed: u64,
) -> Result<PartitionManifest, PartitionError> {
    if num_clients == 0 || num_clients % 9 != 0 {
        return Err(PartitionError::InfeasibleSpec(format!(
            "client count must be a positive multiple of 9, got {num_clients}"
        )));
    }
    if episodes.len() < num_clients {
        return Err(PartitionError::TooFewEpisodes { have: episodes.len(), clients: num_clients });
    }
    let platforms: BTreeSet<_> = episodes.iter().map(|e| e.tag.platform).collect();
    if platforms.len() < 2 {
        return Err(PartitionError::InfeasibleSpec("need at least two platforms".into()));
    }
    let np = platforms.len();
    let spec = |axis, scheme| PartitionSpec {
        axis,
        scheme,
        num_clients,
        alpha: 1.0,
        excluded_per_client: np.saturating_sub(2).max(1),
        seed,
    };
    let all: Vec<usize> = (0..episodes.len()).collect();
    let platform_of = |e: &Episode| Axis::Platform.value_of(e);
    let mut shards = BTreeMap::new();
    let lead = match variant {
        FullVariant::FullIid | FullVariant::FullNonUniform => {
            let scheme = if variant == FullVariant::FullIid { Scheme::Iid } else { Scheme::NonUniform };
            let s = spec(Axis::Source, scheme);
            let m = partition(episodes, &s)?;
            shards = m.shards;
            s
        }
        FullVariant::PlatformPartial | FullVariant::PlatformNonUniform | FullVariant::PlatformSkew => {
            let g = Grouping::build(episodes, &all, platform_of, Axis::Platform, seed, "full/platform")?;
            let counts = match variant {
                FullVariant::PlatformSkew => {
                    scheme_counts(&g, Scheme::Skew, num_clients, 1.0, 1, seed, None)?
                }
                _ if np <= 2 => scheme_counts(&g, Scheme::Iid, num_clients, 1.0, 1, seed, None)?,
                FullVariant::PlatformPartial => {
                    scheme_counts(&g, Scheme::Partial, num_clients, 1.0, np - 2, seed, None)?
                }
                _ => {
                    let mask = partial_mask(num_clients, np, np - 2);
                    scheme_counts(&g, Scheme::NonUniform, num_clients, 1.0, 1, seed, Some(mask))?
                }
            };
            sorted_shards(g.deal(&counts), 0, &mut shards);
            let scheme = match variant {
                FullVariant::PlatformPartial => Scheme::Partial,
                FullVariant::PlatformSkew => Scheme::Skew,
                _ => Scheme::NonUniform,
            };
            spec(Axis::Platform, scheme)
        }
        FullVariant::SourceNonUniform => {
            let pg = Grouping::build(episodes, &all, platform_of, Axis::Platform, seed, "full/platform")?;
            let group_sizes = balanced(num_clients, np);
            let mut offset = 0;
            for (p, members) in pg.members.iter().enumerate() {
                let k = group_sizes[p];
                if members.len() < k {
                    return Err(PartitionError::TooFewEpisodes { have: members.len(), clients: k });
                }
                let inner_seed = crate::seed::derive_seed(seed, "full/source", &[p as u64]);
                let g = Grouping::build(
                    episodes,
                    members,
                    |e| Axis::Source.value_of(e),
                    Axis::Source,
                    inner_seed,
                    "partition/shuffle",
                )?;
                let counts = scheme_counts(&g, Scheme::NonUniform, k, 1.0, 1, inner_seed, None)?;
                sorted_shards(g.deal(&counts), offset, &mut shards);
                offset += k;
            }
            spec(Axis::Source, Scheme::NonUniform)
        }
        FullVariant::SourceSkew => {
            let pair = |e: &Episode| Some(format!("{}/{}", e.tag.platform.name(), e.tag.source.name()));
            let g = Grouping::build(episodes, &all, pair, Axis::Source, seed, "full/pair")?;
            let counts = scheme_counts(&g, Scheme::Skew, num_clients, 1.0, 1, seed, None)?;
            sorted_shards(g.deal(&counts), 0, &mut shards);
            spec(Axis::Source, Scheme::Skew)
        }
    };
    let lead = PartitionSpec { axis: Axis::Source, ..lead };
    Ok(finish(episodes, lead, Some(variant), shards))
}

impl PartitionManifest {
    /// Checks the manifest against a corpus: disjoint shards whose union is
    /// exactly the corpus, and stats matching a fresh recount.
    pub fn validate(&self, episodes: &[Episode]) -> Result<(), PartitionError> {
        let mut seen = BTreeSet::new();
        for ids in self.shards.values() {
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(PartitionError::Inconsistent(format!("{id} appears in two shards")));
                }
            }
        }
        let corpus: BTreeSet<&str> = episodes.iter().map(|e| e.episode_id.as_str()).collect();
        if seen != corpus {
            return Err(PartitionError::Inconsistent("shards do not cover the corpus exactly".into()));
        }
        if recount(episodes, &self.shards, self.spec.axis) != self.stats {
            return Err(PartitionError::Inconsistent("stats differ from recount".into()));
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub client_id: ClientId,
    pub axis_value: String,
    pub count: usize,
    /// `None` for an empty shard.
    pub proportion: Option<f64>,
}

pub fn partition_stats(manifest: &PartitionManifest) -> Vec<StatRow> {
    let mut rows = Vec::new();
    for (&client_id, counts) in &manifest.stats {
        let total: usize = counts.values().sum();
        for (value, &count) in counts {
            rows.push(StatRow {
                client_id,
                axis_value: value.clone(),
                count,
                proportion: (total > 0).then(|| count as f64 / total as f64),
            });
        }
    }
    rows
}

/// Writes stat rows as CSV, with `NA` for undefined proportions.
pub fn write_stats_csv<W: Write>(w: W, rows: &[StatRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["client_id", "axis_value", "count", "proportion"])?;
    for r in rows {
        let p = r.proportion.map_or_else(|| NA.to_string(), |p| format!("{p:.6}"));
        out.write_record([r.client_id.to_string(), r.axis_value.clone(), r.count.to_string(), p])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean over non-empty clients of the Pearson chi-squared distance
/// `Σ (p - g)² / g` between the client's and the corpus's value mix.
pub fn mean_chi_squared(stats: &BTreeMap<ClientId, BTreeMap<String, usize>>) -> f64 {
    let mut global: BTreeMap<&str, usize> = BTreeMap::new();
    for row in stats.values() {
        for (v, &n) in row {
            *global.entry(v).or_default() += n;
        }
    }
    let total: usize = global.values().sum();
    let mut acc = 0.0;
    let mut clients = 0usize;
    for row in stats.values() {
        let n: usize = row.values().sum();
        if n == 0 {
            continue;
        }
        clients += 1;
        for (v, &gn) in &global {
            if gn == 0 {
                continue;
            }
            let g = gn as f64 / total as f64;
            let p = *row.get(*v).unwrap_or(&0) as f64 / n as f64;
            acc += (p - g).powi(2) / g;
        }
    }
    if clients == 0 {
        0.0
    } else {
        acc / clients as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{ActionKind, UnifiedAction};
    use crate::episodes::{Os, Platform, Source, SourceTag, Step};

    fn ep(id: usize, platform: Platform, source: Source, device: &str) -> Episode {
        Episode {
            episode_id: format!("e{id:05}"),
            instruction: "do it".into(),
            tag: SourceTag { source, platform, os: Os::Na, device: device.into(), app_category: NA.into() },
            steps: vec![Step {
                index: 0,
                image_ref: String::new(),
                screen_w: 10,
                screen_h: 10,
                action: UnifiedAction::bare(ActionKind::Complete),
            }],
        }
    }

    fn devices(n: usize, v: usize) -> Vec<Episode> {
        (0..n).map(|i| ep(i, Platform::Mobile, Source::Synth, &format!("D{}", i % v))).collect()
    }

    #[test]
    fn single_client_iid_is_identity() {
        let eps = devices(37, 3);
        let m = partition(&eps, &PartitionSpec::new(Axis::Device, Scheme::Iid, 1, 4)).unwrap();
        let mut ids: Vec<_> = eps.iter().map(|e| e.episode_id.clone()).collect();
        ids.sort();
        assert_eq!(m.shards[&0], ids);
    }

    #[test]
    fn partial_three_platforms() {
        let platforms = [Platform::Mobile, Platform::Web, Platform::Desktop];
        let eps: Vec<Episode> = (0..3000).map(|i| ep(i, platforms[i % 3], Source::Synth, NA)).collect();
        let m = partition(&eps, &PartitionSpec::new(Axis::Platform, Scheme::Partial, 3, 9)).unwrap();
        m.validate(&eps).unwrap();
        let values: Vec<&String> = m.stats[&0].keys().collect();
        for (c, row) in &m.stats {
            let denied = values[*c as usize % 3];
            for (v, &n) in row {
                if v == denied {
                    assert_eq!(n, 0);
                } else {
                    assert!((n as i64 - 500).abs() <= 1, "client {c} value {v}: {n}");
                }
            }
        }
    }

    #[test]
    fn skew_replicates_round_robin() {
        let eps = devices(90, 3);
        let m = partition(&eps, &PartitionSpec::new(Axis::Device, Scheme::Skew, 7, 1)).unwrap();
        for (c, row) in &m.stats {
            let nz: Vec<_> = row.iter().filter(|(_, &n)| n > 0).collect();
            assert_eq!(nz.len(), 1);
            assert_eq!(nz[0].0, &format!("D{}", c % 3));
        }
        let err = partition(&eps, &PartitionSpec::new(Axis::Device, Scheme::Skew, 2, 1)).unwrap_err();
        assert!(matches!(err, PartitionError::InfeasibleSpec(_)));
    }

    #[test]
    fn errors() {
        let eps = devices(4, 2);
        assert!(matches!(
            partition(&eps, &PartitionSpec::new(Axis::Device, Scheme::Iid, 5, 0)),
            Err(PartitionError::TooFewEpisodes { have: 4, clients: 5 })
        ));
        assert!(matches!(
            partition(&eps, &PartitionSpec::new(Axis::Os, Scheme::Iid, 2, 0)),
            Err(PartitionError::UndefinedAxisValue { .. })
        ));
        let mut spec = PartitionSpec::new(Axis::Device, Scheme::Partial, 2, 0);
        spec.excluded_per_client = 2;
        assert!(matches!(partition(&eps, &spec), Err(PartitionError::InfeasibleSpec(_))));
    }

    #[test]
    fn empty_shard_proportion_is_na() {
        let mut shards = BTreeMap::new();
        shards.insert(0, vec!["e00000".to_string()]);
        shards.insert(1, vec![]);
        let eps = devices(1, 1);
        let m = PartitionManifest {
            spec: PartitionSpec::new(Axis::Device, Scheme::Iid, 2, 0),
            variant: None,
            stats: recount(&eps, &shards, Axis::Device),
            shards,
        };
        let rows = partition_stats(&m);
        assert_eq!(rows[0].proportion, Some(1.0));
        assert_eq!(rows[1].count, 0);
        assert_eq!(rows[1].proportion, None);
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("1,D0,0,NA\n"), "{text}");
    }

    #[test]
    fn chi_squared_of_pure_and_mixed_clients() {
        let mut stats = BTreeMap::new();
        stats.insert(0, BTreeMap::from([("a".to_string(), 10), ("b".to_string(), 0)]));
        stats.insert(1, BTreeMap::from([("a".to_string(), 0), ("b".to_string(), 10)]));
        // Each client: (1 - .5)²/.5 + (0 - .5)²/.5 = 1.
        assert!((mean_chi_squared(&stats) - 1.0).abs() < 1e-12);
    }
}
