use bms_core::nn::{ConvLstmCell, Graph, ParamStore};
use bms_core::{RngStream, Tensor};

const GRID: usize = 12;
const FD_H: f64 = 1e-5;

struct Setup {
    store: ParamStore,
    cell: ConvLstmCell,
}

fn setup(kernel: usize) -> Setup {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(3, 1);
    let cell = ConvLstmCell::new(&mut store, "cell", 2, 3, kernel, &mut rng);
    Setup { store, cell }
}

/// Hidden state at `(i, j)` (all filters) after unrolling over `xs`.
fn output_at(s: &Setup, xs: &[Tensor], h0: &Tensor, c0: &Tensor, i: usize, j: usize) -> Vec<f64> {
    let mut g = Graph::frozen(&s.store);
    let mut h = g.tape.constant(h0.clone());
    let mut c = g.tape.constant(c0.clone());
    for x in xs {
        let x = g.tape.constant(x.clone());
        (h, c) = s.cell.step(&mut g, x, h, c).unwrap();
    }
    let v = g.value(h);
    (0..s.cell.filters)
        .map(|f| v.data()[(f * GRID + i) * GRID + j])
        .collect()
}

/// Largest finite-difference Jacobian entry of the output at `(i, j)` with
/// respect to every input pixel, reported per input position `(r, c)`.
fn jacobian_by_position(s: &Setup, steps: usize, i: usize, j: usize) -> Vec<((usize, usize), f64)> {
    let mut rng = RngStream::new(11, 2);
    let mut xs: Vec<Tensor> = (0..steps)
        .map(|_| rng.normal_tensor(vec![1, 2, GRID, GRID]))
        .collect();
    let mut h0 = rng.normal_tensor(vec![1, 3, GRID, GRID]).map(|v| 0.5 * v);
    let mut c0 = rng.normal_tensor(vec![1, 3, GRID, GRID]).map(|v| 0.5 * v);
    let mut worst = vec![0.0f64; GRID * GRID];
    let mut probe = |t: &mut Tensor, k: usize, xs_ref: &dyn Fn(&Tensor) -> Vec<f64>| {
        let orig = t.data()[k];
        t.data_mut()[k] = orig + FD_H;
        let up = xs_ref(t);
        t.data_mut()[k] = orig - FD_H;
        let down = xs_ref(t);
        t.data_mut()[k] = orig;
        let d = up
            .iter()
            .zip(&down)
            .map(|(a, b)| ((a - b) / (2.0 * FD_H)).abs())
            .fold(0.0, f64::max);
        let pos = k % (GRID * GRID);
        worst[pos] = worst[pos].max(d);
    };
    for step in 0..steps {
        for k in 0..xs[step].len() {
            let mut x = xs[step].clone();
            let others = xs.clone();
            probe(&mut x, k, &|x| {
                let mut seq = others.clone();
                seq[step] = x.clone();
                output_at(s, &seq, &h0, &c0, i, j)
            });
            xs[step] = x;
        }
    }
    for k in 0..h0.len() {
        let (xs2, c2) = (xs.clone(), c0.clone());
        let mut h = h0.clone();
        probe(&mut h, k, &|h| output_at(s, &xs2, h, &c2, i, j));
        h0 = h;
    }
    for k in 0..c0.len() {
        let (xs2, h2) = (xs.clone(), h0.clone());
        let mut c = c0.clone();
        probe(&mut c, k, &|c| output_at(s, &xs2, &h2, c, i, j));
        c0 = c;
    }
    worst
        .into_iter()
        .enumerate()
        .map(|(p, d)| ((p / GRID, p % GRID), d))
        .collect()
}

fn check_locality(kernel: usize, steps: usize, i: usize, j: usize) {
    let s = setup(kernel);
    let radius = steps * (kernel / 2);
    let mut inside_max = 0.0f64;
    for ((r, c), d) in jacobian_by_position(&s, steps, i, j) {
        let far = r.abs_diff(i).max(c.abs_diff(j)) > radius;
        if far {
            assert!(
                d <= 1e-9,
                "kernel {kernel}, {steps} steps: input ({r}, {c}) reaches ({i}, {j}) with {d}"
            );
        } else {
            inside_max = inside_max.max(d);
        }
    }
    assert!(
        inside_max > 1e-3,
        "no dependence inside the receptive field"
    );
}

#[test]
fn single_step_reads_only_the_kernel_neighbourhood() {
    check_locality(3, 1, 5, 6);
    check_locality(5, 1, 6, 4);
    check_locality(3, 1, 0, 11);
}

#[test]
fn three_steps_widen_the_receptive_field_linearly() {
    check_locality(3, 3, 6, 5);
}
