//! Adding machine, piece bookkeeping along the critical orbit, blow-up orders
//! and order-theoretic checks on renormalization pieces.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical::{strong_stable_direction, FIELD_HORIZON};
use crate::dynamics::{HenonLikeMap, Point};
use crate::error::{LabError, Result};

/// Truncated element of `prod Z / r_n Z`, least significant digit first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OdometerState {
    pub digits: Vec<u32>,
    pub radices: Vec<u32>,
}

impl OdometerState {
    pub fn new(digits: Vec<u32>, radices: Vec<u32>) -> Result<Self> {
        if digits.len() != radices.len() {
            return Err(LabError::Config(format!("{} digits for {} radices", digits.len(), radices.len())));
        }
        if let Some(k) = (0..digits.len()).find(|&k| radices[k] < 1 || digits[k] >= radices[k]) {
            return Err(LabError::Config(format!("digit {} out of range for radix {}", digits[k], radices[k])));
        }
        Ok(OdometerState { digits, radices })
    }

    pub fn zero(radices: Vec<u32>) -> Self {
        OdometerState { digits: vec![0; radices.len()], radices }
    }

    pub fn binary_zero(depth: usize) -> Self {
        Self::zero(vec![2; depth])
    }

    pub fn depth(&self) -> usize {
        self.digits.len()
    }

    /// `prod r_n`.
    pub fn modulus(&self) -> u128 {
        self.radices.iter().map(|&r| r as u128).product()
    }

    /// Mixed-radix value `a_1 + r_1 a_2 + r_1 r_2 a_3 + ...`.
    pub fn to_index(&self) -> u128 {
        let mut v = 0u128;
        for k in (0..self.depth()).rev() {
            v = v * self.radices[k] as u128 + self.digits[k] as u128;
        }
        v
    }

    /// Inverse of [`to_index`](Self::to_index), modulo `prod r_n`.
    pub fn from_index(mut v: u128, radices: Vec<u32>) -> Self {
        let digits = radices
            .iter()
            .map(|&r| {
                let d = (v % r as u128) as u32;
                v /= r as u128;
                d
            })
            .collect();
        OdometerState { digits, radices }
    }

    /// First `depth` digits.
    pub fn truncate(&self, depth: usize) -> Self {
        OdometerState { digits: self.digits[..depth].to_vec(), radices: self.radices[..depth].to_vec() }
    }
}

/// `S`: zero the leading maximal digits and increment the first one that is not.
pub fn odometer_add(s: &OdometerState) -> OdometerState {
    let mut out = s.clone();
    for k in 0..out.depth() {
        if out.digits[k] + 1 < out.radices[k] {
            out.digits[k] += 1;
            return out;
        }
        out.digits[k] = 0;
    }
    out
}

/// Orbit `c_1, c_2, ...` of the critical value; piece `(n, i)` is the set of
/// entries with index `= i - 1 mod 2^n`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceAtlas {
    pub points: Vec<Point>,
}

/// A point is assigned to a piece only if the nearest other piece is at least this
/// many times farther than its own.
pub const MEMBERSHIP_SEPARATION: f64 = 2.0;

impl PieceAtlas {
    pub fn new(points: Vec<Point>) -> Self {
        PieceAtlas { points }
    }

    /// Atlas from the forward part of a critical orbit.
    pub fn from_critical_orbit(co: &crate::critical::CriticalOrbit) -> Self {
        PieceAtlas { points: co.orbit[co.zero_index + 1..].to_vec() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Entries of piece `(n, i)`, `1 <= i <= 2^n`, as `(orbit index, point)`.
    pub fn piece(&self, n: u32, i: usize) -> Vec<(usize, Point)> {
        let r = 1usize << n;
        self.points.iter().copied().enumerate().skip(i - 1).step_by(r).collect()
    }

    /// `pi(p)`: the digits of the orbit index of the nearest atlas point. At each
    /// depth the nearest point of any other piece must be [`MEMBERSHIP_SEPARATION`]
    /// times farther away.
    pub fn project_pi(&self, p: Point, depth: u32) -> Result<OdometerState> {
        let d2 = |q: &Point| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        let (best, d_best) = self
            .points
            .iter()
            .enumerate()
            .map(|(j, q)| (j, d2(q)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or(LabError::Sample { found: 0, needed: 1 })?;
        // nearest point agreeing with `best` on exactly `a` low bits of the index
        let mut by_agreement = vec![f64::INFINITY; depth as usize + 1];
        for (j, q) in self.points.iter().enumerate() {
            let a = ((j ^ best).trailing_zeros() as usize).min(depth as usize);
            let d = d2(q);
            if d < by_agreement[a] {
                by_agreement[a] = d;
            }
        }
        let mut foreign = f64::INFINITY;
        for n in 1..=depth as usize {
            foreign = foreign.min(by_agreement[n - 1]);
            if foreign.sqrt() < MEMBERSHIP_SEPARATION * d_best.sqrt() {
                return Err(LabError::Membership(format!(
                    "depth {n}: own piece at {:.3e}, another at {:.3e}",
                    d_best.sqrt(),
                    foreign.sqrt()
                )));
            }
        }
        Ok(OdometerState::from_index(best as u128, vec![2; depth as usize]))
    }
}

/// Rule used to order the points of a piece.
#[derive(Clone, Copy, Debug)]
pub enum OrderOracle<'a> {
    /// First coordinate; the real-line order of an embedded 1D limit set.
    Horizontal,
    /// Position across the strong-stable leaves, read off along the normal to
    /// `E^ss` at the piece's first point.
    StrongStable(&'a HenonLikeMap),
}

/// Permutation sorting `points` by the oracle.
pub fn order_points(points: &[Point], oracle: OrderOracle) -> Result<Vec<usize>> {
    let keys: Vec<f64> = match oracle {
        OrderOracle::Horizontal => points.iter().map(|p| p[0]).collect(),
        OrderOracle::StrongStable(map) => {
            let Some(&r) = points.first() else { return Ok(Vec::new()) };
            let e = strong_stable_direction(map, r, FIELD_HORIZON)
                .map_err(|err| LabError::OrderOracle(format!("no strong-stable direction: {err}")))?;
            // orient so that the horizontal component of the normal is positive
            let nrm = if e[1] >= 0.0 { [e[1], -e[0]] } else { [-e[1], e[0]] };
            points.iter().map(|p| (p[0] - r[0]) * nrm[0] + (p[1] - r[1]) * nrm[1]).collect()
        }
    };
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    if let Some(w) = idx.windows(2).find(|w| keys[w[0]] == keys[w[1]] && points[w[0]] != points[w[1]]) {
        return Err(LabError::OrderOracle(format!("points {} and {} project to the same parameter", w[0], w[1])));
    }
    Ok(idx)
}

/// Maximal runs of consecutive `true` in `flags`.
fn count_runs(flags: impl IntoIterator<Item = bool>) -> usize {
    let mut runs = 0;
    let mut prev = false;
    for f in flags {
        if f && !prev {
            runs += 1;
        }
        prev = f;
    }
    runs
}

/// Number of maximal order intervals of the `Lambda^m_i` sample occupied by
/// `Lambda^n_{i + k 2^m}`.
pub fn combinatorial_components(atlas: &PieceAtlas, oracle: OrderOracle, m: u32, n: u32, i: usize, k: usize) -> Result<usize> {
    if m >= n || i < 1 || i > 1 << m || k >= 1 << (n - m) {
        return Err(LabError::Config(format!("invalid piece indices m={m} n={n} i={i} k={k}")));
    }
    let piece = atlas.piece(m, i);
    let pts: Vec<Point> = piece.iter().map(|e| e.1).collect();
    let order = order_points(&pts, oracle)?;
    let target = (i - 1 + (k << m)) % (1 << n);
    Ok(count_runs(order.iter().map(|&j| piece[j].0 % (1 << n) == target)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub m: u32,
    pub n: u32,
    pub i: usize,
    pub k: usize,
    pub components: usize,
}

/// [`combinatorial_components`] for every `min_m <= m < n <= max_n`, all `i`, `k`;
/// each piece is ordered once.
pub fn connectedness_scan(atlas: &PieceAtlas, oracle: OrderOracle, min_m: u32, max_n: u32) -> Result<Vec<ComponentRecord>> {
    let jobs: Vec<(u32, usize)> = (min_m..max_n).flat_map(|m| (1..=1usize << m).map(move |i| (m, i))).collect();
    let per: Vec<Vec<ComponentRecord>> = jobs
        .par_iter()
        .map(|&(m, i)| -> Result<Vec<ComponentRecord>> {
            let piece = atlas.piece(m, i);
            let pts: Vec<Point> = piece.iter().map(|e| e.1).collect();
            let order = order_points(&pts, oracle)?;
            let mut out = Vec::new();
            for n in m + 1..=max_n {
                let r = 1usize << n;
                let mut runs = vec![0usize; 1 << (n - m)];
                let mut prev: Option<usize> = None;
                for &j in &order {
                    let c = piece[j].0 % r;
                    let k = ((c + r - (i - 1)) % r) >> m;
                    if prev != Some(k) {
                        runs[k] += 1;
                    }
                    prev = Some(k);
                }
                out.extend(runs.into_iter().enumerate().map(|(k, components)| ComponentRecord { m, n, i, k, components }));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

pub fn write_components_csv(records: &[ComponentRecord], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Io(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| LabError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| LabError::Io(e.to_string()))
}

/// Order-minimal and order-maximal points of the `Lambda^n_1` sample, with their
/// orbit indices (`0` is `c_1`).
pub fn extremal_points(atlas: &PieceAtlas, oracle: OrderOracle, n: u32) -> Result<((usize, Point), (usize, Point))> {
    let piece = atlas.piece(n, 1);
    if piece.is_empty() {
        return Err(LabError::Sample { found: 0, needed: 1 });
    }
    let pts: Vec<Point> = piece.iter().map(|e| e.1).collect();
    let order = order_points(&pts, oracle)?;
    Ok((piece[order[0]], piece[order[order.len() - 1]]))
}

/// Order on binary digit strings in which each piece keeps its `0` child at the end
/// it shares with its parent: the first differing digit decides, with the
/// comparison reversed after an odd number of `1`s in the common prefix.
pub fn symbolic_cmp(a: &[u32], b: &[u32]) -> Ordering {
    let mut flip = false;
    for (x, y) in a.iter().zip(b) {
        if x != y {
            let o = x.cmp(y);
            return if flip { o.reverse() } else { o };
        }
        flip ^= *x % 2 == 1;
    }
    a.len().cmp(&b.len())
}

/// Odometer states ordered by [`symbolic_cmp`]: the pieces of the symbolic model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicModel {
    pub radices: Vec<u32>,
    pub states: Vec<Vec<u32>>,
}

impl SymbolicModel {
    /// Orbit of the zero state under the adding machine, one full period.
    pub fn full_orbit(radices: Vec<u32>) -> Self {
        let mut s = OdometerState::zero(radices.clone());
        let period = s.modulus() as usize;
        let mut states = Vec::with_capacity(period);
        for _ in 0..period {
            states.push(s.digits.clone());
            s = odometer_add(&s);
        }
        SymbolicModel { radices, states }
    }

    /// Components of `Lambda^n_{i + k R_m}` inside `Lambda^m_i`, orbit index `j`
    /// standing for `c_{j+1}`.
    pub fn components(&self, m: usize, n: usize, i: usize, k: usize) -> usize {
        let rm: usize = self.radices[..m].iter().map(|&r| r as usize).product();
        let rn: usize = self.radices[..n].iter().map(|&r| r as usize).product();
        let mut members: Vec<usize> = (0..self.states.len()).filter(|j| j % rm == (i - 1) % rm).collect();
        members.sort_by(|&a, &b| symbolic_cmp(&self.states[a], &self.states[b]));
        let target = (i - 1 + k * rm) % rn;
        count_runs(members.iter().map(|j| j % rn == target))
    }

    /// Smallest and largest states of `Lambda^n_1`.
    pub fn extremes(&self, n: usize) -> (Vec<u32>, Vec<u32>) {
        let rn: usize = self.radices[..n].iter().map(|&r| r as usize).product();
        let mut members: Vec<&Vec<u32>> = self.states.iter().step_by(rn).collect();
        members.sort_by(|a, b| symbolic_cmp(a, b));
        (members[0].clone(), members[members.len() - 1].clone())
    }
}

/// Element of a blow-up structure: a plain element, or an element `u` replaced by
/// the ordered set `Y_u`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderNode {
    Plain(u64),
    Blowup(Vec<OrderNode>),
}

/// Finite iterated blow-up of a totally ordered base; each level is listed in its
/// own order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlowupOrder {
    pub base: Vec<OrderNode>,
}

/// A plain element addressed by its path of positions, or a limit point given by
/// the chain of blown-up elements `u_0, u_1, ...` it passes through.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leaf {
    Plain(Vec<usize>),
    Limit(Vec<usize>),
}

impl BlowupOrder {
    /// All plain elements in order of a depth-first walk.
    pub fn leaves(&self) -> Vec<Leaf> {
        fn walk(level: &[OrderNode], path: &mut Vec<usize>, out: &mut Vec<Leaf>) {
            for (k, node) in level.iter().enumerate() {
                path.push(k);
                match node {
                    OrderNode::Plain(_) => out.push(Leaf::Plain(path.clone())),
                    OrderNode::Blowup(ch) => walk(ch, path, out),
                }
                path.pop();
            }
        }
        let mut out = Vec::new();
        walk(&self.base, &mut Vec::new(), &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }
}

fn node_at(level: &[OrderNode], k: usize) -> Option<&OrderNode> {
    level.get(k)
}

/// Compares two elements of the blow-up.
///
/// At each level both elements are located by the base element they sit over: a
/// plain element stands for itself, anything inside `Y_u` stands for `u`. Distinct
/// base elements are compared in the base order; inside a common `Y_u` the
/// comparison moves one level down. A limit point stands for `u_n` at level `n`.
/// Two limit chains that agree up to the depth where one of them stops cannot be
/// separated and raise `OrderOracle`.
pub fn blowup_compare(order: &BlowupOrder, x: &Leaf, y: &Leaf) -> Result<Ordering> {
    let (px, lx) = match x {
        Leaf::Plain(p) => (p, false),
        Leaf::Limit(p) => (p, true),
    };
    let (py, ly) = match y {
        Leaf::Plain(p) => (p, false),
        Leaf::Limit(p) => (p, true),
    };
    let mut level: &[OrderNode] = &order.base;
    let mut d = 0;
    loop {
        match (px.get(d), py.get(d)) {
            (Some(&u), Some(&v)) => {
                if u != v {
                    return Ok(u.cmp(&v));
                }
                match node_at(level, u) {
                    Some(OrderNode::Blowup(ch)) => level = ch,
                    Some(OrderNode::Plain(_)) if !lx && !ly && px.len() == d + 1 && py.len() == d + 1 => {
                        return Ok(Ordering::Equal)
                    }
                    _ => return Err(LabError::OrderOracle(format!("not an element: {x:?} or {y:?}"))),
                }
            }
            (None, None) if lx && ly => return Ok(Ordering::Equal),
            _ => return Err(LabError::OrderOracle(format!("truncated limit chains cannot be separated: {x:?}, {y:?}"))),
        }
        d += 1;
    }
}

/// Random blow-up structure with about `leaves` plain elements and nesting at most
/// `depth`.
pub fn random_blowup_order(rng: &mut impl rand::Rng, leaves: usize, depth: usize) -> BlowupOrder {
    fn build(rng: &mut impl rand::Rng, budget: usize, depth: usize, next: &mut u64) -> Vec<OrderNode> {
        let mut out = Vec::new();
        let mut left = budget.max(1);
        while left > 0 {
            if depth > 0 && left >= 2 && rng.gen_bool(0.3) {
                let take = rng.gen_range(1..=left);
                out.push(OrderNode::Blowup(build(rng, take, depth - 1, next)));
                left -= take;
            } else {
                out.push(OrderNode::Plain(*next));
                *next += 1;
                left -= 1;
            }
        }
        out
    }
    let mut next = 0;
    BlowupOrder { base: build(rng, leaves, depth, &mut next) }
}

/// Every blow-up structure with exactly `leaves` plain elements in which each
/// blown-up set has at least two elements.
pub fn all_blowup_orders(leaves: usize) -> Vec<BlowupOrder> {
    // nodes[k]: single elements carrying k leaves; seqs[k]: nonempty sequences
    let mut nodes: Vec<Vec<OrderNode>> = vec![Vec::new(); leaves + 1];
    let mut seqs: Vec<Vec<Vec<OrderNode>>> = vec![Vec::new(); leaves + 1];
    for n in 1..=leaves {
        let mut multi = Vec::new();
        for first in 1..n {
            for h in &nodes[first] {
                for t in &seqs[n - first] {
                    let mut v = vec![h.clone()];
                    v.extend(t.iter().cloned());
                    multi.push(v);
                }
            }
        }
        let mut here: Vec<OrderNode> = multi.iter().cloned().map(OrderNode::Blowup).collect();
        if n == 1 {
            here.push(OrderNode::Plain(0));
        }
        nodes[n] = here;
        seqs[n] = multi;
        seqs[n].extend(nodes[n].iter().map(|h| vec![h.clone()]));
    }
    let mut out: Vec<BlowupOrder> = seqs[leaves].iter().cloned().map(|base| BlowupOrder { base }).collect();
    for o in &mut out {
        number(&mut o.base, &mut 0);
    }
    out
}

fn number(level: &mut [OrderNode], next: &mut u64) {
    for node in level {
        match node {
            OrderNode::Plain(v) => {
                *v = *next;
                *next += 1;
            }
            OrderNode::Blowup(ch) => number(ch, next),
        }
    }
}

/// Checks irreflexivity of `<`, antisymmetry, totality and transitivity over all
/// leaves; returns the number of violations.
pub fn order_axiom_violations(order: &BlowupOrder) -> usize {
    let leaves = order.leaves();
    let n = leaves.len();
    let cmp: Vec<Vec<Ordering>> = leaves
        .par_iter()
        .map(|x| leaves.iter().map(|y| blowup_compare(order, x, y).unwrap_or(Ordering::Equal)).collect())
        .collect();
    let mut bad = 0;
    for a in 0..n {
        if cmp[a][a] != Ordering::Equal {
            bad += 1;
        }
        for b in 0..n {
            if a != b && (cmp[a][b] == Ordering::Equal || cmp[a][b] != cmp[b][a].reverse()) {
                bad += 1;
            }
        }
    }
    bad += (0..n)
        .into_par_iter()
        .map(|a| {
            let mut v = 0;
            for b in 0..n {
                if cmp[a][b] != Ordering::Less {
                    continue;
                }
                for c in 0..n {
                    if cmp[b][c] == Ordering::Less && cmp[a][c] != Ordering::Less {
                        v += 1;
                    }
                }
            }
            v
        })
        .sum::<usize>();
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adding_machine_examples() {
        let s = OdometerState::new(vec![1, 1, 0], vec![2, 2, 2]).unwrap();
        assert_eq!(odometer_add(&s).digits, vec![0, 0, 1]);
        assert_eq!(odometer_add(&OdometerState::binary_zero(3)).digits, vec![1, 0, 0]);
        let top = OdometerState::new(vec![1, 2], vec![2, 3]).unwrap();
        assert_eq!(odometer_add(&top).digits, vec![0, 0]);
        assert!(OdometerState::new(vec![2], vec![2]).is_err());
    }

    #[test]
    fn index_round_trip() {
        let r = vec![2, 3, 5];
        for v in 0..30u128 {
            assert_eq!(OdometerState::from_index(v, r.clone()).to_index(), v);
        }
    }

    #[test]
    fn atlas_on_a_rotation() {
        // orbit of the dyadic odometer realized on the circle by van der Corput points
        let vdc = |mut j: usize| {
            let (mut x, mut w) = (0.0, 0.5);
            while j > 0 {
                x += w * (j & 1) as f64;
                j >>= 1;
                w *= 0.5;
            }
            x
        };
        let atlas = PieceAtlas::new((0..1024).map(|j| [vdc(j), 0.0]).collect());
        let s = atlas.project_pi(atlas.points[0], 5).unwrap();
        assert_eq!(s.digits, vec![0; 5]);
        let s = atlas.project_pi(atlas.points[1], 5).unwrap();
        assert_eq!(s, odometer_add(&OdometerState::binary_zero(5)));
        assert_eq!(atlas.project_pi(atlas.points[37], 5).unwrap().to_index(), 37 % 32);
    }

    #[test]
    fn symbolic_model_is_connected() {
        let model = SymbolicModel::full_orbit(vec![2; 7]);
        for m in 0..6 {
            for n in m + 1..=7 {
                for i in 1..=1usize << m {
                    for k in 0..1usize << (n - m) {
                        assert_eq!(model.components(m, n, i, k), 1);
                    }
                }
            }
        }
        let (lo, hi) = model.extremes(3);
        assert_eq!(lo, vec![0; 7]);
        assert_eq!(hi, OdometerState::from_index(8, vec![2; 7]).digits);
    }

    #[test]
    fn blowup_examples() {
        // base a < u < b with u blown up into (p < q)
        let order = BlowupOrder {
            base: vec![
                OrderNode::Plain(0),
                OrderNode::Blowup(vec![OrderNode::Plain(1), OrderNode::Plain(2)]),
                OrderNode::Plain(3),
            ],
        };
        let a = Leaf::Plain(vec![0]);
        let p = Leaf::Plain(vec![1, 0]);
        let q = Leaf::Plain(vec![1, 1]);
        let b = Leaf::Plain(vec![2]);
        assert_eq!(blowup_compare(&order, &a, &b).unwrap(), Ordering::Less);
        assert_eq!(blowup_compare(&order, &a, &q).unwrap(), Ordering::Less);
        assert_eq!(blowup_compare(&order, &q, &b).unwrap(), Ordering::Less);
        assert_eq!(blowup_compare(&order, &q, &p).unwrap(), Ordering::Greater);
        let lim = Leaf::Limit(vec![1]);
        assert_eq!(blowup_compare(&order, &a, &lim).unwrap(), Ordering::Less);
        assert_eq!(blowup_compare(&order, &lim, &b).unwrap(), Ordering::Less);
        assert!(blowup_compare(&order, &lim, &p).is_err());
    }

    #[test]
    fn small_structures_are_total_orders() {
        assert_eq!(all_blowup_orders(2).len(), 2);
        assert_eq!(all_blowup_orders(3).len(), 6);
        for n in 1..=5 {
            for o in all_blowup_orders(n) {
                assert_eq!(o.leaf_count(), n);
                assert_eq!(order_axiom_violations(&o), 0);
            }
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let o = random_blowup_order(&mut rng, 60, 4);
        assert_eq!(order_axiom_violations(&o), 0);
    }
}
