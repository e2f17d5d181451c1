//! Self-contained property suite behind the `check` command: randomized
//! equivalence and invariance tests with independent oracles, so a broken
//! kernel is caught without any dataset on disk.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bank::diversity_penalty;
use crate::graph::{Batch, Graph};
use crate::model::ModelParams;
use crate::spectral::{
    cheb_filter_apply, eig_laplacian, spectral_filter_oracle, FilterCoeffs,
};
use crate::train::{finite_difference_check, finite_difference_check_biased};

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Perturbs one analytic gradient by 1e-2 so the gradient check must
    /// fail; exists to prove the harness is live.
    pub fd_fault: bool,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs every property; the suite as a whole passes iff each outcome does.
pub fn run_property_suite(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    vec![
        spectral_equivalence(&mut rng),
        gcn_equivalence(&mut rng),
        permutation_invariance(&mut rng),
        fd_gradient(&mut rng, opts.fd_fault),
        omega_bounds(&mut rng),
    ]
}

fn random_graph(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Graph<f64> {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((i, rng.random_range(0..i), rng.random_range(0.2..2.0)));
    }
    for _ in 0..n {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            edges.push((i, j, rng.random_range(0.2..2.0)));
        }
    }
    let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    Graph::build(n, &edges, features, rng.random_range(0..2)).expect("valid random graph")
}

/// Chebyshev filtering against the dense eigendecomposition route.
fn spectral_equivalence(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut max_err = 0.0f64;
    for trial in 0..100 {
        let n = rng.random_range(2..=12);
        let g = random_graph(n, 2, rng);
        let order = 1 + trial % 4;
        let alpha: Vec<f64> = (0..=order).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coeffs = FilterCoeffs::new(alpha).expect("finite draw");
        let basis = eig_laplacian(&g).expect("small graph");
        let fast = cheb_filter_apply(&g, &coeffs, g.features()).expect("shapes agree");
        let slow = spectral_filter_oracle(&basis, &coeffs, g.features()).expect("shapes agree");
        for (a, b) in fast.iter().zip(slow.iter()) {
            max_err = max_err.max((a - b).abs());
        }
    }
    CheckOutcome {
        name: "spectral-equivalence",
        passed: max_err <= 1e-9,
        detail: format!("max |cheb - eig| = {max_err:.3e} over 100 graphs (tol 1e-9)"),
    }
}

/// The message-passing propagation `(I + D^-1/2 A D^-1/2) X`, written out as
/// explicit dense sums, against Chebyshev filtering with the fixed low-pass
/// coefficients `(1, -1, 0, ...)`.
fn gcn_equivalence(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut max_err = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        // The spanning tree in random_graph leaves no isolated nodes.
        let g = random_graph(n, 3, rng);
        let x = g.features();
        let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / g.weighted_degree(i).sqrt()).collect();
        let mut dense = x.clone();
        for i in 0..n {
            for (j, w) in g.neighbors(i) {
                for c in 0..x.ncols() {
                    dense[[i, c]] += inv_sqrt[i] * w * inv_sqrt[j] * x[[j, c]];
                }
            }
        }
        let filtered =
            cheb_filter_apply(&g, &FilterCoeffs::lowpass(2), x).expect("shapes agree");
        for (a, b) in dense.iter().zip(filtered.iter()) {
            max_err = max_err.max((a - b).abs());
        }
    }
    CheckOutcome {
        name: "gcn-equivalence",
        passed: max_err <= 1e-10,
        detail: format!("max |message-passing - cheb| = {max_err:.3e} over 50 graphs (tol 1e-10)"),
    }
}

/// Predictions must not move under node relabeling or batch reordering.
fn permutation_invariance(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut max_err = 0.0f64;
    for _ in 0..10 {
        let model = ModelParams::new(
            3,
            &[6, 6],
            2,
            2,
            2,
            0.1,
            rng,
        )
        .expect("valid sizes");
        let graphs: Vec<Graph<f64>> =
            (0..4).map(|_| random_graph(rng.random_range(2..=10), 3, rng)).collect();
        let batch = Batch::from_graphs(&graphs).expect("uniform width");
        let base = model.forward(&batch).expect("forward");

        let mut permuted = Vec::new();
        for g in &graphs {
            let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(rng);
            permuted.push(g.permute(&perm).expect("bijection"));
        }
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(rng);
        let shuffled = Batch::from_graphs(order.iter().map(|&i| &permuted[i]))
            .expect("uniform width");
        let moved = model.forward(&shuffled).expect("forward");

        for (pos, &orig) in order.iter().enumerate() {
            for c in 0..2 {
                max_err = max_err.max((moved[pos].logits[c] - base[orig].logits[c]).abs());
            }
        }
    }
    CheckOutcome {
        name: "permutation-invariance",
        passed: max_err <= 1e-10,
        detail: format!("max logit drift = {max_err:.3e} over 10 trials (tol 1e-10)"),
    }
}

/// Analytic gradients against central finite differences with and without
/// the diversity term active.
fn fd_gradient(rng: &mut ChaCha8Rng, fault: bool) -> CheckOutcome {
    let graphs: Vec<Graph<f64>> = (0..3).map(|_| random_graph(8, 3, rng)).collect();
    let batch = Batch::from_graphs(&graphs).expect("uniform width");
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    let mut checked = 0usize;
    for (gamma, inject) in [(0.0, fault), (10.0, false)] {
        let model =
            ModelParams::new(3, &[8, 8], 2, 4, 2, gamma, rng).expect("valid sizes");
        let seed = rng.random_range(0..u64::MAX);
        let report = if inject {
            finite_difference_check_biased(&model, &batch, 1e-5, 1e-4, 200, seed, 1e-2)
        } else {
            finite_difference_check(&model, &batch, 1e-5, 1e-4, 200, seed)
        }
        .expect("step in range");
        worst = worst.max(report.max_rel_err);
        failures += report.failures.len();
        checked += report.checked;
    }
    CheckOutcome {
        name: "fd-gradient",
        passed: failures == 0,
        detail: format!(
            "{checked} coordinates, {failures} failures, max rel err = {worst:.3e} (tol 1e-4)"
        ),
    }
}

/// The diversity penalty stays in [0, 1], is 0 for orthogonal sets, and 1
/// for colinear pairs.
fn omega_bounds(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut ok = true;
    let mut detail = String::new();
    for _ in 0..1000 {
        let s = rng.random_range(2..=6);
        let k = rng.random_range(1..=4);
        let filters: Vec<FilterCoeffs<f64>> = (0..s)
            .map(|_| {
                FilterCoeffs::new((0..=k).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .expect("finite draw")
            })
            .collect();
        let omega = diversity_penalty(&filters);
        if !(0.0..=1.0).contains(&omega) {
            ok = false;
            detail = format!("omega = {omega} escaped [0, 1]");
            break;
        }
    }
    let orthogonal = [
        FilterCoeffs::new(vec![1.0, 0.0, 0.0]).expect("finite"),
        FilterCoeffs::new(vec![0.0, 2.0, 0.0]).expect("finite"),
        FilterCoeffs::new(vec![0.0, 0.0, -1.5]).expect("finite"),
    ];
    if diversity_penalty(&orthogonal) != 0.0 {
        ok = false;
        detail = "orthogonal set should give exactly 0".into();
    }
    let colinear = [
        FilterCoeffs::<f64>::new(vec![1.0, -0.5]).expect("finite"),
        FilterCoeffs::new(vec![2.0, -1.0]).expect("finite"),
    ];
    let omega_colinear = diversity_penalty(&colinear);
    if (omega_colinear - 1.0).abs() > 1e-9 {
        ok = false;
        detail = format!("colinear pair gave {omega_colinear}, want 1");
    }
    if detail.is_empty() {
        detail = "1000 random sets in [0, 1]; orthogonal = 0; colinear = 1".into();
    }
    CheckOutcome { name: "omega-bounds", passed: ok, detail }
}
