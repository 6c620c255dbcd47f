//! Gauss–Legendre rules and adaptive integration over graph-bounded regions
//! `{(x, y) : a < x < b, lo(x) < y < up(x)}`.

use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Roots of `P_n` by Newton iteration from Chebyshev guesses.
    pub fn compute(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Shared instance for order `n`.
    pub fn get(n: usize) -> Arc<GaussRule> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussRule>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("gauss rule cache poisoned");
        guard.entry(n).or_insert_with(|| Arc::new(GaussRule::compute(n))).clone()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫_a^b f`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + r * x);
        }
        s * r
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Outcome of an adaptive integration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    /// Refinement stopped at the depth or panel limit somewhere.
    pub truncated: bool,
    pub panels: usize,
}

impl Integral {
    pub fn add(&mut self, other: Integral) {
        self.value += other.value;
        self.error += other.error;
        self.truncated |= other.truncated;
        self.panels += other.panels;
    }
}

/// Settings for [`integrate_graph_region`] and [`integrate_interval`].
#[derive(Clone, Copy, Debug)]
pub struct AdaptiveOptions {
    pub order: usize,
    pub max_depth: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            order: 8,
            max_depth: 12,
            rel_tol: 1e-8,
            abs_tol: 1e-300,
            max_panels: 200_000,
        }
    }
}

/// Tensor rule on the panel `[x0,x1]×[t0,t1]` of the map
/// `(x, t) ↦ (x, lo(x) + t (up(x) - lo(x)))`, whose Jacobian is `up - lo`.
fn graph_panel<F, L, U>(
    rule: &GaussRule,
    f: &F,
    lo: &L,
    up: &U,
    (x0, x1): (f64, f64),
    (t0, t1): (f64, f64),
) -> f64
where
    F: Fn(f64, f64) -> f64,
    L: Fn(f64) -> f64,
    U: Fn(f64) -> f64,
{
    let cx = 0.5 * (x0 + x1);
    let rx = 0.5 * (x1 - x0);
    let ct = 0.5 * (t0 + t1);
    let rt = 0.5 * (t1 - t0);
    let mut s = 0.0;
    for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
        let x = cx + rx * xi;
        let l = lo(x);
        let w = up(x) - l;
        if w <= 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for (tj, wj) in rule.nodes.iter().zip(&rule.weights) {
            let t = ct + rt * tj;
            inner += wj * f(x, l + t * w);
        }
        s += wi * inner * w;
    }
    s * rx * rt
}

/// Adaptive integral of `f` over `{x0 < x < x1, lo(x) < y < up(x)}`.
///
/// Each panel compares the order-`p` rule with the order-`2p` rule. The panel
/// with the largest disagreement is split into four until the summed
/// disagreement meets the tolerance, so isolated singular points cost only a
/// few panels per level.
pub fn integrate_graph_region<F, L, U>(
    f: F,
    x0: f64,
    x1: f64,
    lo: L,
    up: U,
    opts: &AdaptiveOptions,
) -> Integral
where
    F: Fn(f64, f64) -> f64,
    L: Fn(f64) -> f64,
    U: Fn(f64) -> f64,
{
    let coarse = GaussRule::get(opts.order);
    let fine = GaussRule::get(2 * opts.order);
    let eval = |p: &Panel2| {
        let c = graph_panel(&coarse, &f, &lo, &up, p.xs, p.ts);
        let g = graph_panel(&fine, &f, &lo, &up, p.xs, p.ts);
        (g, (g - c).abs())
    };
    let root = Panel2 { xs: (x0, x1), ts: (0.0, 1.0), depth: 0 };
    refine(root, eval, |p| p.split(), |p| p.depth, opts)
}

#[derive(Clone, Copy)]
struct Panel2 {
    xs: (f64, f64),
    ts: (f64, f64),
    depth: usize,
}

impl Panel2 {
    fn split(&self) -> Vec<Panel2> {
        let xm = 0.5 * (self.xs.0 + self.xs.1);
        let tm = 0.5 * (self.ts.0 + self.ts.1);
        let mut out = Vec::with_capacity(4);
        for xs in [(self.xs.0, xm), (xm, self.xs.1)] {
            for ts in [(self.ts.0, tm), (tm, self.ts.1)] {
                out.push(Panel2 { xs, ts, depth: self.depth + 1 });
            }
        }
        out
    }
}

struct Scored<P> {
    err: f64,
    value: f64,
    panel: P,
}

impl<P> PartialEq for Scored<P> {
    fn eq(&self, o: &Self) -> bool {
        self.err.total_cmp(&o.err).is_eq()
    }
}
impl<P> Eq for Scored<P> {}
impl<P> PartialOrd for Scored<P> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<P> Ord for Scored<P> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Global adaptive loop shared by the 1D and 2D integrators.
fn refine<P, E, S, D>(root: P, eval: E, split: S, depth: D, opts: &AdaptiveOptions) -> Integral
where
    E: Fn(&P) -> (f64, f64),
    S: Fn(&P) -> Vec<P>,
    D: Fn(&P) -> usize,
{
    let (v0, e0) = eval(&root);
    let tol = |v: f64| (opts.rel_tol * v.abs()).max(opts.abs_tol);
    let mut heap = BinaryHeap::new();
    let (mut value, mut error) = (v0, e0);
    let mut panels = 1;
    let mut capped = false;
    let mut finished = Vec::new();
    heap.push(Scored { err: e0, value: v0, panel: root });
    while error > tol(value) && panels < opts.max_panels {
        let Some(top) = heap.pop() else { break };
        if depth(&top.panel) >= opts.max_depth {
            capped = true;
            finished.push(top);
            continue;
        }
        value -= top.value;
        error -= top.err;
        for child in split(&top.panel) {
            let (v, e) = eval(&child);
            value += v;
            error += e;
            panels += 1;
            heap.push(Scored { err: e, value: v, panel: child });
        }
    }
    let all = heap.iter().chain(finished.iter());
    let (value, error) = all.fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.err));
    Integral {
        value,
        error,
        truncated: error > tol(value) && (capped || panels >= opts.max_panels),
        panels,
    }
}

/// Adaptive Gauss integral of `f` on `[a, b]` by interval bisection.
pub fn integrate_interval(f: impl Fn(f64) -> f64, a: f64, b: f64, opts: &AdaptiveOptions) -> Integral {
    let coarse = GaussRule::get(opts.order);
    let fine = GaussRule::get(2 * opts.order);
    let eval = |p: &(f64, f64, usize)| {
        let c = coarse.integrate(p.0, p.1, &f);
        let g = fine.integrate(p.0, p.1, &f);
        (g, (g - c).abs())
    };
    let split = |p: &(f64, f64, usize)| {
        let m = 0.5 * (p.0 + p.1);
        vec![(p.0, m, p.2 + 1), (m, p.1, p.2 + 1)]
    };
    refine((a, b, 0usize), eval, split, |p| p.2, opts)
}
