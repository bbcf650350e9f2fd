//! Data models and their rank parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use serde_json::json;

use crate::error::{arg_err, Error, Result};
use crate::patterns::IndexMaps;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Model {
    SingleView,
    MultiView,
    Cp,
    Tucker,
    Tt,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::SingleView => "single",
            Model::MultiView => "multi",
            Model::Cp => "cp",
            Model::Tucker => "tucker",
            Model::Tt => "tt",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "single" => Model::SingleView,
            "multi" => Model::MultiView,
            "cp" => Model::Cp,
            "tucker" => Model::Tucker,
            "tt" => Model::Tt,
            _ => return arg_err(format!("unknown model {s:?}")),
        })
    }
}

impl Serialize for Model {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// Model-tagged rank.
///
/// Tucker ranks list `m_{j+1}, ..., m_d` for the split `j` (1-based, the
/// number of leading modes left free). TT ranks list `u_1, ..., u_{d-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RankSpec {
    Single(usize),
    MultiView { r1: usize, r2: usize, r: usize },
    Cp(usize),
    Tucker { split: usize, ranks: Vec<usize> },
    Tt(Vec<usize>),
}

impl RankSpec {
    pub fn model(&self) -> Model {
        match self {
            RankSpec::Single(_) => Model::SingleView,
            RankSpec::MultiView { .. } => Model::MultiView,
            RankSpec::Cp(_) => Model::Cp,
            RankSpec::Tucker { .. } => Model::Tucker,
            RankSpec::Tt(_) => Model::Tt,
        }
    }

    /// The number of base entries repeated in every constraint column/slice,
    /// for the models built slice by slice over the last mode.
    pub fn base_count(&self) -> Option<usize> {
        match self {
            RankSpec::Single(r) | RankSpec::Cp(r) => Some(*r),
            RankSpec::Tt(u) => u.last().copied(),
            _ => None,
        }
    }

    /// Component-wise order on ranks of the same model and shape.
    pub fn precedes(&self, other: &RankSpec) -> bool {
        match (self, other) {
            (RankSpec::Single(a), RankSpec::Single(b)) | (RankSpec::Cp(a), RankSpec::Cp(b)) => a <= b,
            (
                RankSpec::MultiView { r1, r2, r },
                RankSpec::MultiView { r1: s1, r2: s2, r: s },
            ) => r1 <= s1 && r2 <= s2 && r <= s,
            (
                RankSpec::Tucker { split, ranks },
                RankSpec::Tucker { split: t, ranks: other },
            ) => split == t && ranks.len() == other.len() && ranks.iter().zip(other).all(|(a, b)| a <= b),
            (RankSpec::Tt(a), RankSpec::Tt(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x <= y)
            }
            _ => false,
        }
    }

    /// Checks the rank against the array shape.
    ///
    /// For `MultiView` the shape is `[n, n1, n2]`: the shared row count and
    /// the column counts of the two views.
    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        if dims.is_empty() || dims.contains(&0) {
            return arg_err(format!("dims must be positive, got {dims:?}"));
        }
        match self {
            RankSpec::Single(r) => {
                if dims.len() != 2 {
                    return arg_err("single-view ranks need a matrix");
                }
                let cap = dims[0].min(dims[1]);
                if *r < 1 || *r > cap {
                    return arg_err(format!("rank {r} outside 1..={cap}"));
                }
            }
            RankSpec::MultiView { r1, r2, r } => {
                let [n, n1, n2] = dims else {
                    return arg_err("multi-view shape is (n, n1, n2)");
                };
                if *r1 < 1 || *r2 < 1 {
                    return arg_err(format!("view ranks must be at least 1, got ({r1}, {r2})"));
                }
                if r1.max(r2) > r || *r > r1 + r2 {
                    return arg_err(format!(
                        "need max(r1, r2) <= r <= r1 + r2, got ({r1}, {r2}, {r})"
                    ));
                }
                if r1 > n.min(n1) || r2 > n.min(n2) || r > n {
                    return arg_err(format!(
                        "rank ({r1}, {r2}, {r}) exceeds the view shapes {n}x{n1}, {n}x{n2}"
                    ));
                }
            }
            RankSpec::Cp(r) => {
                if dims.len() < 3 {
                    return arg_err("CP ranks need a tensor of order at least 3");
                }
                let cap = *dims.iter().min().unwrap();
                if *r < 1 || *r > cap {
                    return arg_err(format!("CP rank {r} outside 1..={cap}"));
                }
            }
            RankSpec::Tucker { split, ranks } => {
                let d = dims.len();
                if d < 2 || *split < 1 || *split >= d {
                    return arg_err(format!("split {split} outside 1..={}", d.saturating_sub(1)));
                }
                if ranks.len() != d - split {
                    return arg_err(format!(
                        "Tucker split {split} of an order-{d} tensor needs {} ranks, got {}",
                        d - split,
                        ranks.len()
                    ));
                }
                let maps = IndexMaps::new(dims);
                for (k, &m) in ranks.iter().enumerate() {
                    let i = split + k + 1;
                    let cap = dims[i - 1].min(maps.without(i));
                    if m < 1 || m > cap {
                        return arg_err(format!("Tucker rank m_{i} = {m} outside 1..={cap}"));
                    }
                }
            }
            RankSpec::Tt(u) => {
                let d = dims.len();
                if d < 2 || u.len() != d - 1 {
                    return arg_err(format!(
                        "TT ranks of an order-{d} tensor need {} entries, got {}",
                        d.saturating_sub(1),
                        u.len()
                    ));
                }
                if let Some(i) = tt_violation(dims, u) {
                    return arg_err(format!(
                        "TT rank u_{i} = {} violates u_i <= min(u_(i-1) n_i, u_(i+1) n_(i+1))",
                        u[i - 1]
                    ));
                }
            }
        }
        Ok(())
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            RankSpec::Single(r) | RankSpec::Cp(r) => json!(r),
            RankSpec::MultiView { r1, r2, r } => json!([r1, r2, r]),
            RankSpec::Tucker { split, ranks } => json!({ "split": split, "ranks": ranks }),
            RankSpec::Tt(u) => json!(u),
        }
    }
}

/// First 1-based index `i` with `u_i < 1` or
/// `u_i > min(u_{i-1} n_i, u_{i+1} n_{i+1})`, where `u_0 = u_d = 1`.
pub fn tt_violation(dims: &[usize], u: &[usize]) -> Option<usize> {
    let d = dims.len();
    let at = |i: usize| if i == 0 || i == d { 1 } else { u[i - 1] };
    (1..d).find(|&i| {
        let ui = at(i);
        ui < 1 || ui > (at(i - 1) * dims[i - 1]).min(at(i + 1) * dims[i])
    })
}

/// All TT rank vectors valid for `dims`, in lexicographic order.
///
/// Each `u_i` is searched up to `min(N_i, N̄_i)`, the rank cap of the i-th
/// unfolding, which the recursive constraint implies.
pub fn tt_rank_grid(dims: &[usize]) -> Vec<Vec<usize>> {
    let d = dims.len();
    let maps = IndexMaps::new(dims);
    let caps: Vec<usize> = (1..d).map(|i| maps.head(i).min(maps.tail(i))).collect();
    let mut out = Vec::new();
    let mut cur = vec![1usize; d - 1];
    loop {
        if tt_violation(dims, &cur).is_none() {
            out.push(cur.clone());
        }
        let mut k = d - 1;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if cur[k] < caps[k] {
                cur[k] += 1;
                break;
            }
            cur[k] = 1;
        }
    }
}

/// All Tucker rank vectors `(m_{j+1}, ..., m_d)` for split `j`, in
/// lexicographic order, each capped by `min(n_i, N_{-i})`.
pub fn tucker_rank_grid(dims: &[usize], split: usize) -> Vec<Vec<usize>> {
    let d = dims.len();
    if split < 1 || split >= d {
        return Vec::new();
    }
    let maps = IndexMaps::new(dims);
    let caps: Vec<usize> = (split + 1..=d).map(|i| dims[i - 1].min(maps.without(i))).collect();
    let mut out = Vec::new();
    let mut cur = vec![1usize; caps.len()];
    loop {
        out.push(cur.clone());
        let mut k = caps.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if cur[k] < caps[k] {
                cur[k] += 1;
                break;
            }
            cur[k] = 1;
        }
    }
}

impl fmt::Display for RankSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            RankSpec::Single(r) | RankSpec::Cp(r) => write!(f, "{r}"),
            RankSpec::MultiView { r1, r2, r } => write!(f, "{r1},{r2},{r}"),
            RankSpec::Tucker { split, ranks } => write!(f, "{} split={split}", list(ranks)),
            RankSpec::Tt(u) => f.write_str(&list(u)),
        }
    }
}

impl Serialize for RankSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}
