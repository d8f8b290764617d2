use ndarray::{Array2, ArrayView2, Axis};

use super::model::GnnLayer;
use super::{real, Real};
use crate::error::{Error, Result};
use crate::world::CommGraph;

/// Dense graph shift `S · X`.
pub fn graph_shift<T: Real>(s: &Array2<T>, x: &Array2<T>) -> Result<Array2<T>> {
    if !s.is_square() || s.ncols() != x.nrows() {
        return Err(Error::Shape {
            op: "graph_shift",
            detail: format!("S is {:?}, X is {:?}", s.dim(), x.dim()),
        });
    }
    Ok(s.dot(x))
}

/// Sparse graph shift: row `i` is the weighted sum of the neighbors' rows.
pub fn shift<T: Real>(g: &CommGraph, x: ArrayView2<T>) -> Array2<T> {
    debug_assert_eq!(g.n(), x.nrows());
    let mut out = Array2::zeros(x.raw_dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        for (&j, &w) in g.neighbors[i].iter().zip(&g.weights[i]) {
            row.scaled_add(real::<T>(w), &x.row(j));
        }
    }
    out
}

/// `Sᵀ · Y` for the sparse operator.
pub fn shift_transpose<T: Real>(g: &CommGraph, y: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::zeros(y.raw_dim());
    for i in 0..g.n() {
        let yi = y.row(i);
        for (&j, &w) in g.neighbors[i].iter().zip(&g.weights[i]) {
            out.row_mut(j).scaled_add(real::<T>(w), &yi);
        }
    }
    out
}

fn check_layer<T: Real>(x: &Array2<T>, layer: &GnnLayer<T>) -> Result<()> {
    let f_in = layer.taps.first().map(|h| h.nrows());
    if f_in != Some(x.ncols()) {
        return Err(Error::Shape {
            op: "graph_conv",
            detail: format!("X has {} features, filter expects {:?}", x.ncols(), f_in),
        });
    }
    Ok(())
}

/// `Σ_k S^k X H_k + b`, each power of `S` obtained by one more shift of the
/// previous term.
pub fn graph_conv<T: Real>(s: &Array2<T>, x: &Array2<T>, layer: &GnnLayer<T>) -> Result<Array2<T>> {
    check_layer(x, layer)?;
    let mut z = x.clone();
    let mut out = Array2::zeros((x.nrows(), layer.bias.len()));
    for (k, h) in layer.taps.iter().enumerate() {
        if k > 0 {
            z = graph_shift(s, &z)?;
        }
        out += &z.dot(h);
    }
    out += &layer.bias;
    Ok(out)
}

pub fn graph_conv_sparse<T: Real>(g: &CommGraph, x: &Array2<T>, layer: &GnnLayer<T>) -> Result<Array2<T>> {
    check_layer(x, layer)?;
    if g.n() != x.nrows() {
        return Err(Error::Shape {
            op: "graph_conv",
            detail: format!("graph has {} nodes, X has {} rows", g.n(), x.nrows()),
        });
    }
    let mut z = x.clone();
    let mut out = Array2::zeros((x.nrows(), layer.bias.len()));
    for (k, h) in layer.taps.iter().enumerate() {
        if k > 0 {
            z = shift(g, z.view());
        }
        out += &z.dot(h);
    }
    out += &layer.bias;
    Ok(out)
}

/// Mean over rows of `-log softmax(logits)[label]`, together with the
/// gradient of that mean with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &Array2<T>, labels: &[usize]) -> (T, Array2<T>) {
    assert_eq!(logits.nrows(), labels.len(), "one label per row");
    let n = T::from(labels.len().max(1)).unwrap();
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = T::zero();
    for ((row, mut g), &y) in logits.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).zip(labels) {
        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        let sum = row.fold(T::zero(), |a, &b| a + (b - max).exp());
        let log_z = max + sum.ln();
        total += log_z - row[y];
        for (gk, &zk) in g.iter_mut().zip(row) {
            *gk = (zk - log_z).exp() / n;
        }
        g[y] -= T::one() / n;
    }
    (total / n, grad)
}

pub fn cross_entropy_loss<T: Real>(logits: &Array2<T>, labels: &[usize]) -> T {
    cross_entropy(logits, labels).0
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Real>(logits: &Array2<T>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut c = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut acc = 0.0;
                for k in 0..a.ncols() {
                    acc += a[[i, k]] * b[[k, j]];
                }
                c[[i, j]] = acc;
            }
        }
        c
    }

    #[test]
    fn shift_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(graph_shift(&Array2::zeros((2, 2)), &x).unwrap(), Array2::<f64>::zeros((2, 2)));
        let swap = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(graph_shift(&swap, &x).unwrap(), array![[3.0, 4.0], [1.0, 2.0]]);

        let path = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let eye = Array2::<f64>::eye(3);
        let got = graph_shift(&path, &eye).unwrap();
        assert_eq!(got, naive_matmul(&path, &eye));
        assert_eq!(got.sum_axis(Axis(1)), array![1.0, 2.0, 1.0]);

        assert!(graph_shift(&Array2::zeros((3, 3)), &x).is_err());
    }

    #[test]
    fn sparse_shift_matches_dense() {
        let s = array![[0.0, 1.0, 0.5, 0.0], [1.0, 0.0, 0.0, 2.0], [0.5, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0]];
        let g = CommGraph::from_adjacency(&s);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.37 - 1.0);
        assert_eq!(shift(&g, x.view()), naive_matmul(&s, &x));
        let asym = array![[0.0, 3.0], [0.0, 0.0]];
        let ga = CommGraph::from_adjacency(&asym);
        let y = array![[1.0, 2.0], [5.0, 7.0]];
        assert_eq!(shift_transpose(&ga, y.view()), naive_matmul(&asym.t().to_owned(), &y));
    }

    fn layer(taps: Vec<Array2<f64>>, bias: Array1<f64>) -> GnnLayer<f64> {
        GnnLayer { taps, bias }
    }

    #[test]
    fn conv_without_communication() {
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        let h0 = array![[2.0, 0.0, 1.0], [1.0, -1.0, 0.5]];
        let b = array![0.1, 0.2, 0.3];
        let expect = naive_matmul(&x, &h0) + &b;
        let s = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(graph_conv(&s, &x, &layer(vec![h0.clone()], b.clone())).unwrap(), expect);
        let h1 = array![[5.0, 5.0, 5.0], [-1.0, 2.0, 0.0]];
        let zero = Array2::zeros((2, 2));
        assert_eq!(graph_conv(&zero, &x, &layer(vec![h0, h1], b)).unwrap(), expect);
    }

    #[test]
    fn conv_two_node_edge() {
        // Direct evaluation: out_i = x_i H0 + x_j H1 + b for the single edge (0, 1).
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let h0 = array![[1.0], [0.5]];
        let h1 = array![[-2.0], [4.0]];
        let b = array![0.25];
        let s = array![[0.0, 1.0], [1.0, 0.0]];
        let l = layer(vec![h0, h1], b);
        let out = graph_conv(&s, &x, &l).unwrap();
        let r0 = 1.0 * 1.0 + 2.0 * 0.5 + (3.0 * -2.0 + -1.0 * 4.0) + 0.25;
        let r1 = 3.0 * 1.0 + -1.0 * 0.5 + (1.0 * -2.0 + 2.0 * 4.0) + 0.25;
        assert_eq!(out, array![[r0], [r1]]);
        let g = CommGraph::from_adjacency(&s);
        assert_eq!(graph_conv_sparse(&g, &x, &l).unwrap(), out);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let l = layer(vec![Array2::zeros((3, 2))], Array1::zeros(2));
        let x = Array2::<f64>::zeros((2, 4));
        assert!(matches!(graph_conv(&Array2::zeros((2, 2)), &x, &l), Err(Error::Shape { .. })));
        let g = CommGraph::empty(3);
        let x = Array2::<f64>::zeros((2, 3));
        assert!(graph_conv_sparse(&g, &x, &l).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = Array2::<f64>::from_elem((3, 5), 0.7);
        let loss = cross_entropy_loss(&uniform, &[0, 3, 4]);
        assert!((loss - 5f64.ln()).abs() < 1e-15);

        let mut confident = Array2::<f64>::zeros((1, 5));
        confident[[0, 2]] = 800.0;
        assert!(cross_entropy_loss(&confident, &[2]) < 1e-300);

        // Reference computed with 50-digit arithmetic:
        // mean(-log softmax([0.3,-1.2,2.0,0.0,0.5])[2], -log softmax([-0.4,0.9,0.1,1.7,-2.3])[0])
        let logits: Array2<f64> = array![[0.3, -1.2, 2.0, 0.0, 0.5], [-0.4, 0.9, 0.1, 1.7, -2.3]];
        let loss = cross_entropy_loss(&logits, &[2, 0]);
        assert!((loss - 1.5709823325847407).abs() < 1e-14, "{loss}");
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero() {
        let logits: Array2<f64> = array![[0.3, -1.2, 2.0, 0.0, 0.5], [-0.4, 0.9, 0.1, 1.7, -2.3]];
        let (_, g) = cross_entropy(&logits, &[2, 0]);
        for row in g.axis_iter(Axis(0)) {
            assert!(row.sum().abs() < 1e-15);
        }
        assert!(g[[0, 2]] < 0.0 && g[[1, 0]] < 0.0);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let l = array![[1.0, 3.0, 3.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0]];
        assert_eq!(argmax_rows(&l), vec![1, 0]);
    }
}
