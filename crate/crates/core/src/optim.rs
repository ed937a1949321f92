//! One-dimensional maximisation of a kernel component of the EM objective.
//!
//! For a component with mass `m` and exponential rate `β` the objective is
//!
//! `f(m, β) = W(log m + log β) − βS − m·Σ_j a_j(1 − e^{−βR_j})`
//!
//! where `W` and `S` are the responsibility-weighted count and lag sum and
//! `(a_j, R_j)` are the trigger weights and their remaining window lengths.
//! The mass is profiled out in closed form and the rate is found by a
//! log-spaced scan followed by golden-section refinement.

/// Compensator terms `Σ a_j(1 − e^{−βR_j})`, sorted by `R` so that terms with
/// `βR ≥ 40` (where the factor rounds to one) are summed in O(1).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriggerSet {
    r: Vec<f64>,
    a: Vec<f64>,
    /// `suffix[k] = Σ_{j ≥ k} a_j`
    suffix: Vec<f64>,
}

const SATURATION: f64 = 40.0;

impl TriggerSet {
    pub fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|x, y| x.1.total_cmp(&y.1));
        let mut r: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut a: Vec<f64> = Vec::with_capacity(pairs.len());
        for (w, len) in pairs {
            if w == 0.0 {
                continue;
            }
            if r.last() == Some(&len) {
                *a.last_mut().unwrap() += w;
            } else {
                r.push(len);
                a.push(w);
            }
        }
        let mut suffix = vec![0.0; a.len() + 1];
        for k in (0..a.len()).rev() {
            suffix[k] = suffix[k + 1] + a[k];
        }
        TriggerSet { r, a, suffix }
    }

    pub fn total_weight(&self) -> f64 {
        self.suffix.first().copied().unwrap_or(0.0)
    }

    /// `Σ a_j(1 − e^{−βR_j})`
    pub fn compensator(&self, beta: f64) -> f64 {
        let k = self.r.partition_point(|&r| beta * r < SATURATION);
        let head: f64 = self.r[..k]
            .iter()
            .zip(&self.a[..k])
            .map(|(&r, &a)| -a * (-beta * r).exp_m1())
            .sum();
        head + self.suffix[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassMode {
    /// Free mass, optionally capped from above.
    Free { cap: Option<f64> },
    Fixed(f64),
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentFit {
    pub mass: f64,
    pub rate: f64,
    /// No responsibility weight reached this component.
    pub empty: bool,
    /// The mass cap was active at the optimum.
    pub capped: bool,
}

/// Value of the component objective; `-∞` where a positive weight meets zero mass.
pub fn component_objective(w: f64, s: f64, triggers: &TriggerSet, mass: f64, rate: f64) -> f64 {
    let log_part = if w == 0.0 { 0.0 } else { w * (mass.ln() + rate.ln()) };
    log_part - rate * s - mass * triggers.compensator(rate)
}

fn profile(w: f64, s: f64, triggers: &TriggerSet, mode: MassMode, rate: f64) -> (f64, f64) {
    let mass = match mode {
        MassMode::Free { cap } => {
            let comp = triggers.compensator(rate);
            let m = if comp > 0.0 { w / comp } else { f64::INFINITY };
            cap.map_or(m, |c| m.min(c))
        }
        MassMode::Fixed(m) => m,
        MassMode::Zero => 0.0,
    };
    (component_objective(w, s, triggers, mass, rate), mass)
}

/// Maximises the component objective, never returning a point worse than `prev`.
pub fn maximize_component(
    w: f64,
    s: f64,
    triggers: &TriggerSet,
    mode: MassMode,
    prev: (f64, f64),
) -> ComponentFit {
    let (prev_mass, prev_rate) = prev;
    if mode == MassMode::Zero {
        return ComponentFit { mass: 0.0, rate: prev_rate, empty: w == 0.0, capped: false };
    }
    if w <= 0.0 {
        let mass = match mode {
            MassMode::Fixed(m) => m,
            _ => 0.0,
        };
        return ComponentFit { mass, rate: prev_rate, empty: true, capped: false };
    }

    let start = if s > 0.0 { w / s } else { prev_rate };
    let eval = |log_rate: f64| profile(w, s, triggers, mode, log_rate.exp()).0;
    let base = start.ln();
    let step = std::f64::consts::LN_2;
    let (mut best_k, mut best_v) = (0i32, f64::NEG_INFINITY);
    for k in -24..=24 {
        let v = eval(base + k as f64 * step);
        if v > best_v {
            best_v = v;
            best_k = k;
        }
    }

    let (mut lo, mut hi) = (base + (best_k - 1) as f64 * step, base + (best_k + 1) as f64 * step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-14 * (1.0 + lo.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = eval(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = eval(x1);
        }
    }
    let mut candidates = [(best_v, base + best_k as f64 * step), (f1, x1), (f2, x2)];
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let rate = candidates[0].1.exp();
    let (value, mass) = profile(w, s, triggers, mode, rate);

    let prev_mass = match mode {
        MassMode::Fixed(m) => m,
        _ => prev_mass,
    };
    let prev_value = component_objective(w, s, triggers, prev_mass, prev_rate);
    if prev_value.is_finite() && prev_value >= value {
        let capped = matches!(mode, MassMode::Free { cap: Some(c) } if prev_mass >= c);
        return ComponentFit { mass: prev_mass, rate: prev_rate, empty: false, capped };
    }
    let capped = matches!(mode, MassMode::Free { cap: Some(c) } if mass >= c);
    ComponentFit { mass, rate, empty: false, capped }
}
