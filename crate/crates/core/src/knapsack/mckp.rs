//! Multiple-choice knapsack: dominance filtering, an LP-hull greedy
//! incumbent, Lagrangian variable fixing, then branch and bound over the
//! users that are still undecided.

use super::{AllocationProblem, AllocationSolution};

/// Node budget for the branch and bound. Past it the best assignment found
/// so far is returned with `optimal = false`.
pub const DEFAULT_NODE_LIMIT: u64 = 5_000_000;

#[derive(Clone, Copy, Debug)]
struct Opt {
    k: usize,
    v: f64,
    c: f64,
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    eff: f64,
    dv: f64,
    dc: f64,
    /// position of the owning user in the list being bounded
    owner: usize,
    /// index of the segment's end option in the owner's list
    to: usize,
}

/// Options not beaten by a cheaper-or-equal one, by increasing cost.
fn undominated(problem: &AllocationProblem, i: usize) -> Vec<Opt> {
    let mut all: Vec<Opt> = (0..problem.num_options())
        .map(|k| Opt {
            k,
            v: problem.tau_revenue().get(i, k),
            c: problem.tau_cost().get(i, k),
        })
        .collect();
    all.sort_by(|a, b| a.c.total_cmp(&b.c).then(b.v.total_cmp(&a.v)).then(a.k.cmp(&b.k)));
    let mut kept: Vec<Opt> = Vec::with_capacity(all.len());
    for o in all {
        if kept.last().is_none_or(|last| o.v > last.v) {
            kept.push(o);
        }
    }
    kept
}

/// Upper concave hull of a cost-sorted chain, as successive segments.
fn hull_segments(opts: &[Opt], owner: usize, out: &mut Vec<Segment>) {
    let mut stack: Vec<usize> = Vec::with_capacity(opts.len());
    for (j, p) in opts.iter().enumerate() {
        while stack.len() >= 2 {
            let a = opts[stack[stack.len() - 2]];
            let b = opts[stack[stack.len() - 1]];
            // pop b when a->b is no steeper than b->p
            if (b.v - a.v) * (p.c - b.c) <= (p.v - b.v) * (b.c - a.c) {
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(j);
    }
    for w in stack.windows(2) {
        let (a, b) = (opts[w[0]], opts[w[1]]);
        let (dv, dc) = (b.v - a.v, b.c - a.c);
        out.push(Segment {
            eff: dv / dc,
            dv,
            dc,
            owner,
            to: w[1],
        });
    }
}

/// LP relaxation over a fixed user list; supports suffix queries.
struct LpBound {
    segments: Vec<Segment>,
    base_value: Vec<f64>,
    base_cost: Vec<f64>,
}

impl LpBound {
    fn new(lists: &[Vec<Opt>]) -> Self {
        let mut segments = Vec::new();
        for (pos, l) in lists.iter().enumerate() {
            hull_segments(l, pos, &mut segments);
        }
        // stable: a user's own segments keep their order on ties
        segments.sort_by(|a, b| b.eff.total_cmp(&a.eff));
        let n = lists.len();
        let mut base_value = vec![0.0; n + 1];
        let mut base_cost = vec![0.0; n + 1];
        for p in (0..n).rev() {
            base_value[p] = base_value[p + 1] + lists[p][0].v;
            base_cost[p] = base_cost[p + 1] + lists[p][0].c;
        }
        Self {
            segments,
            base_value,
            base_cost,
        }
    }

    /// LP optimum over users `from..` with `room` budget, and the efficiency
    /// of the first segment that did not fit (0 when all fit).
    fn solve(&self, from: usize, room: f64) -> (f64, f64) {
        let mut room = room - self.base_cost[from];
        if room < 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        let mut total = self.base_value[from];
        for s in &self.segments {
            if s.owner < from {
                continue;
            }
            if s.dc <= room {
                room -= s.dc;
                total += s.dv;
            } else {
                return (total + s.dv * room / s.dc, s.eff);
            }
        }
        (total, 0.0)
    }
}

/// Greedy along the hull order, then single-user upgrades with what is left.
fn greedy(lists: &[Vec<Opt>], lp: &LpBound, budget: f64) -> Vec<usize> {
    let n = lists.len();
    let mut pos = vec![0usize; n];
    let mut blocked = vec![false; n];
    let mut room = budget - lp.base_cost[0];
    for s in &lp.segments {
        let u = s.owner;
        if blocked[u] {
            continue;
        }
        if s.dc <= room {
            room -= s.dc;
            pos[u] = s.to;
        } else {
            blocked[u] = true;
        }
    }
    for u in 0..n {
        let cur = lists[u][pos[u]];
        let mut best = pos[u];
        for (j, o) in lists[u].iter().enumerate() {
            if o.v > lists[u][best].v && o.c - cur.c <= room {
                best = j;
            }
        }
        room -= lists[u][best].c - cur.c;
        pos[u] = best;
    }
    pos
}

struct Search<'a> {
    lists: &'a [Vec<Opt>],
    lp: &'a LpBound,
    lambda: f64,
    fixed_value: f64,
    current: Vec<usize>,
    best: Option<Vec<usize>>,
    best_value: f64,
    nodes: u64,
    limit: u64,
    slack: f64,
    check: &'a dyn Fn(&[usize]) -> Option<f64>,
}

impl Search<'_> {
    fn dfs(&mut self, d: usize, room: f64, value: f64) {
        self.nodes += 1;
        if self.nodes > self.limit {
            return;
        }
        if d == self.lists.len() {
            if self.fixed_value + value > self.best_value {
                if let Some(obj) = (self.check)(&self.current) {
                    if obj > self.best_value {
                        self.best_value = obj;
                        self.best = Some(self.current.clone());
                    }
                }
            }
            return;
        }
        let (bound, _) = self.lp.solve(d, room + self.slack);
        let total = self.fixed_value + value + bound;
        if total <= self.best_value + 1e-12 * (1.0 + self.best_value.abs()) {
            return;
        }
        let lambda = self.lambda;
        let mut order: Vec<usize> = (0..self.lists[d].len()).collect();
        let list = &self.lists[d];
        order.sort_by(|&a, &b| {
            let ra = list[a].v - lambda * list[a].c;
            let rb = list[b].v - lambda * list[b].c;
            rb.total_cmp(&ra).then(list[a].k.cmp(&list[b].k))
        });
        for j in order {
            let o = self.lists[d][j];
            if o.c > room + self.slack {
                continue;
            }
            self.current[d] = j;
            self.dfs(d + 1, room - o.c, value + o.v);
            if self.nodes > self.limit {
                return;
            }
        }
    }
}

/// Exact multi-treatment allocation (up to [`DEFAULT_NODE_LIMIT`] nodes).
pub fn solve_mckp(problem: &AllocationProblem) -> AllocationSolution {
    solve_mckp_with_limit(problem, DEFAULT_NODE_LIMIT)
}

pub fn solve_mckp_with_limit(problem: &AllocationProblem, node_limit: u64) -> AllocationSolution {
    let n = problem.num_users();
    let budget = problem.budget();
    let lists: Vec<Vec<Opt>> = (0..n).map(|i| undominated(problem, i)).collect();
    let lp = LpBound::new(&lists);
    let (upper, lambda) = lp.solve(0, budget);

    let start = greedy(&lists, &lp, budget);
    let start_choices: Vec<usize> = start.iter().enumerate().map(|(i, &j)| lists[i][j].k).collect();
    let mut incumbent = AllocationSolution::from_choices(problem, start_choices, false);
    if incumbent.spent > budget {
        incumbent = AllocationSolution::all_control(problem);
    }
    let tol = 1e-9 * (1.0 + incumbent.objective.abs());
    if upper <= incumbent.objective + 1e-12 * (1.0 + incumbent.objective.abs()) {
        incumbent.optimal = true;
        return incumbent;
    }

    // Lagrangian fixing: drop options whose bound cannot beat the incumbent.
    let mut dual = lambda * budget;
    let mut best_reduced = Vec::with_capacity(n);
    for l in &lists {
        let m = l.iter().map(|o| o.v - lambda * o.c).fold(f64::NEG_INFINITY, f64::max);
        dual += m;
        best_reduced.push(m);
    }
    let mut fixed = vec![usize::MAX; n];
    let mut free_users = Vec::new();
    let mut free_lists = Vec::new();
    let mut fixed_value = 0.0;
    let mut fixed_cost = 0.0;
    for (i, l) in lists.iter().enumerate() {
        let kept: Vec<Opt> = l
            .iter()
            .copied()
            .filter(|o| dual - (best_reduced[i] - (o.v - lambda * o.c)) >= incumbent.objective - tol)
            .collect();
        if kept.len() == 1 {
            fixed[i] = kept[0].k;
            fixed_value += kept[0].v;
            fixed_cost += kept[0].c;
        } else {
            free_users.push(i);
            free_lists.push(kept);
        }
    }
    let room = budget - fixed_cost;
    if room < 0.0 {
        incumbent.optimal = true;
        return incumbent;
    }

    let core_lp = LpBound::new(&free_lists);
    let assemble = |picks: &[usize]| -> Vec<usize> {
        let mut choices = fixed.clone();
        for (p, &i) in free_users.iter().enumerate() {
            choices[i] = free_lists[p][picks[p]].k;
        }
        choices
    };
    let check = |picks: &[usize]| -> Option<f64> {
        let (obj, spent) = problem.evaluate(&assemble(picks));
        (spent <= budget).then_some(obj)
    };
    let mut search = Search {
        lists: &free_lists,
        lp: &core_lp,
        lambda,
        fixed_value,
        current: vec![0; free_lists.len()],
        best: None,
        best_value: incumbent.objective,
        nodes: 0,
        limit: node_limit,
        slack: 1e-12 * (1.0 + budget),
        check: &check,
    };
    search.dfs(0, room, 0.0);
    let optimal = search.nodes <= search.limit;
    match search.best {
        Some(picks) => AllocationSolution::from_choices(problem, assemble(&picks), optimal),
        None => {
            incumbent.optimal = optimal;
            incumbent
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knapsack::brute_force_oracle;
    use crate::tensor::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, k: usize) -> AllocationProblem {
        let mut r = DenseMatrix::zeros(n, k + 1);
        let mut c = DenseMatrix::zeros(n, k + 1);
        for i in 0..n {
            for j in 1..=k {
                r.set(i, j, rng.random_range(-1.0..5.0));
                c.set(i, j, rng.random_range(0.0..3.0));
            }
        }
        let total: f64 = c.sum();
        AllocationProblem::new(r, c, total * rng.random_range(0.05..0.6)).unwrap()
    }

    #[test]
    fn dominance_keeps_increasing_chain() {
        let r = DenseMatrix::from_rows(&[vec![0.0, 2.0, 1.0, 3.0, 3.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[vec![0.0, 1.0, 2.0, 2.0, 4.0]]).unwrap();
        let p = AllocationProblem::new(r, c, 1.0).unwrap();
        let ks: Vec<usize> = undominated(&p, 0).iter().map(|o| o.k).collect();
        assert_eq!(ks, vec![0, 1, 3]);
    }

    #[test]
    fn two_user_instance() {
        let r = DenseMatrix::from_rows(&[vec![0.0, 3.0, 5.0], vec![0.0, 4.0, 6.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 3.0]]).unwrap();
        let p = AllocationProblem::new(r, c, 3.0).unwrap();
        let s = solve_mckp(&p);
        assert_eq!(s.choices, vec![1, 1]);
        assert_eq!(s.objective, 7.0);
        assert!(s.optimal);
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..=7);
            let k = rng.random_range(1..=3);
            let p = random_problem(&mut rng, n, k);
            let exact = brute_force_oracle(&p).unwrap();
            let s = solve_mckp(&p);
            assert!(s.spent <= p.budget());
            assert_eq!(s.objective, exact.objective, "{p:?}");
        }
    }

    #[test]
    fn zero_budget_and_slack_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_problem(&mut rng, 6, 3);
        let s = solve_mckp(&p.with_budget(0.0).unwrap());
        assert_eq!(s.spent, 0.0);
        let big = solve_mckp(&p.with_budget(1e9).unwrap());
        for i in 0..6 {
            let row = p.tau_revenue().row(i);
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(row[big.choices[i]], best);
        }
    }

    #[test]
    fn node_limit_reports_non_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 200, 4);
        let s = solve_mckp_with_limit(&p, 1);
        assert!(s.spent <= p.budget());
        let full = solve_mckp(&p);
        assert!(full.objective >= s.objective);
    }

    #[test]
    fn large_instance_is_fast_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(&mut rng, 2000, 4);
        let s = solve_mckp(&p);
        assert!(s.optimal);
        assert!(s.spent <= p.budget());
        let (upper, _) = LpBound::new(&(0..2000).map(|i| undominated(&p, i)).collect::<Vec<_>>()).solve(0, p.budget());
        assert!(s.objective <= upper + 1e-9);
    }
}
