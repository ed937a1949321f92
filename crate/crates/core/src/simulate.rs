//! Exact simulation through the cluster (branching) construction.
//!
//! Immigrants are drawn on `(-B, T]`, each immigrant spawns its moving-average
//! brood, and the autoregressive offspring are generated generation by
//! generation. Points at or before zero are discarded at the end.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::events::{EventSequence, Parent};
use crate::model::ModelSpec;

/// A Poisson draw that accepts a zero mean.
pub(crate) fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

#[derive(Debug, Clone, Copy)]
struct Point {
    time: f64,
    generation: u32,
    parent: Option<usize>,
    immigrant: bool,
    mark: f64,
}

/// Simulates on `(0, window_end]` after a burn-in of length `burn_in`.
///
/// Returns the observed events and the companion sequence of immigrants that
/// fall inside the window. When `spec.immigrants_included` is false the
/// immigrants still trigger both kernels but are left out of the events.
pub fn simulate_arma<R: Rng + ?Sized>(
    spec: &ModelSpec,
    window_end: f64,
    burn_in: f64,
    rng: &mut R,
) -> Result<(EventSequence, EventSequence)> {
    spec.validate()?;
    if !(window_end.is_finite() && window_end > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "window end must be positive, got {window_end}"
        )));
    }
    if !(burn_in.is_finite() && burn_in >= 0.0) {
        return Err(Error::InvalidParameters(format!(
            "burn-in must be non-negative, got {burn_in}"
        )));
    }

    let mut pts: Vec<Point> = Vec::new();

    // (I) immigrants; the first level extends into the burn-in region.
    let mut regions = vec![(-burn_in, 0.0, spec.mu.first_level())];
    for ((lo, hi), &level) in spec.mu.piece_bounds(window_end).iter().zip(spec.mu.levels()) {
        regions.push((*lo, *hi, level));
    }
    let mut imm_times = Vec::new();
    for (lo, hi, level) in regions {
        if hi <= lo {
            continue;
        }
        let count = poisson_count(rng, level * (hi - lo));
        for _ in 0..count {
            // Uniform on (lo, hi]; `1 - u` avoids the left endpoint.
            let u: f64 = rng.random();
            imm_times.push(lo + (1.0 - u) * (hi - lo));
        }
    }
    imm_times.sort_by(f64::total_cmp);
    for t in imm_times {
        pts.push(Point {
            time: t,
            generation: 0,
            parent: None,
            immigrant: true,
            mark: spec.marks.sample(rng),
        });
    }
    let n_imm = pts.len();

    // (II) moving-average broods.
    for j in 0..n_imm {
        let (s, y) = (pts[j].time, pts[j].mark);
        let brood = poisson_count(rng, spec.theta.mass * y);
        for _ in 0..brood {
            let t = s + spec.theta.sample_interval(rng);
            if t <= window_end {
                pts.push(Point {
                    time: t,
                    generation: 1,
                    parent: Some(j),
                    immigrant: false,
                    mark: 1.0,
                });
            }
        }
    }

    // (III) autoregressive generations until no point has children in the window.
    let mut frontier: Vec<usize> = (0..pts.len()).collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &p in &frontier {
            let brood = poisson_count(rng, spec.phi.mass);
            for _ in 0..brood {
                let t = pts[p].time + spec.phi.sample_interval(rng);
                if t <= window_end {
                    next.push(pts.len());
                    pts.push(Point {
                        time: t,
                        generation: pts[p].generation + 1,
                        parent: Some(p),
                        immigrant: false,
                        mark: 1.0,
                    });
                }
            }
        }
        frontier = next;
    }

    let mut order: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].time > 0.0).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&pts[a], &pts[b]);
        pa.time
            .total_cmp(&pb.time)
            .then(pa.generation.cmp(&pb.generation))
            .then(pa.parent.cmp(&pb.parent))
    });

    let marked = !spec.marks.is_constant();
    let build = |keep: &dyn Fn(&Point) -> bool| {
        let mut index = vec![usize::MAX; pts.len()];
        let mut seq = EventSequence::empty(window_end);
        let mut marks = Vec::new();
        let mut flags = Vec::new();
        let mut parents = Vec::new();
        let mut gens = Vec::new();
        for &i in &order {
            let p = &pts[i];
            if !keep(p) {
                continue;
            }
            index[i] = seq.times.len();
            seq.times.push(p.time);
            marks.push(p.immigrant.then_some(p.mark));
            flags.push(p.immigrant);
            gens.push(p.generation);
            parents.push(match p.parent {
                None => Parent::Immigrant,
                Some(q) if index[q] != usize::MAX => Parent::Event(index[q]),
                Some(_) => Parent::External,
            });
        }
        if marked {
            seq.marks = Some(marks);
        }
        seq.is_immigrant = Some(flags);
        seq.parent = Some(parents);
        seq.generation = Some(gens);
        seq
    };

    let events = if spec.immigrants_included {
        build(&|_| true)
    } else {
        build(&|p| !p.immigrant)
    };
    let immigrants = build(&|p| p.immigrant);
    Ok((events, immigrants))
}

/// Simulates a sequence holding exactly `target_n` events.
///
/// A window of length `1.5·target_n/λ̄` is simulated (doubled until it holds
/// more than `target_n` events) and then cut at the midpoint between the
/// `target_n`-th event and the next one, which becomes the new window end.
pub fn simulate_until_count<R: Rng + ?Sized>(
    spec: &ModelSpec,
    target_n: usize,
    burn_in: Option<f64>,
    rng: &mut R,
) -> Result<(EventSequence, EventSequence)> {
    if target_n == 0 {
        return Err(Error::InvalidParameters("target count must be at least 1".into()));
    }
    let lambda = spec.expected_intensity_on(1.0)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameters(
            "expected intensity is zero; no events can be generated".into(),
        ));
    }
    let burn_in = burn_in.unwrap_or_else(|| spec.default_burn_in());
    let mut window = 1.5 * target_n as f64 / lambda;
    for _ in 0..60 {
        let (events, immigrants) = simulate_arma(spec, window, burn_in, rng)?;
        if events.len() > target_n {
            let end = 0.5 * (events.times[target_n - 1] + events.times[target_n]);
            return Ok((events.truncated(end), immigrants.truncated(end)));
        }
        window *= 2.0;
    }
    Err(Error::Numerical(format!(
        "could not reach {target_n} events; the intensity appears to be far below λ̄={lambda}"
    )))
}
